use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::{RefinerArchitecture, RefinerModel};
use super::data::{PairGenerator, TrainingPair};
use super::loss::{composite_loss_with_grad, LossBreakdown, LossWeights};
use super::network::{backward, forward_with_tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Cosine floor as a fraction of `learning_rate`.
    pub lr_floor_ratio: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub hidden_channels: usize,
    pub loss: LossWeights,
    pub data: PairGenerator,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_floor_ratio: 0.01,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: Some(1.0),
            epochs: 100,
            batch_size: 32,
            batches_per_epoch: 4,
            hidden_channels: 64,
            loss: LossWeights::default(),
            data: PairGenerator::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Single-core preset: a narrower network, a larger step, and training
    /// noise with denser spike bursts and twice the nominal bias walk, so a
    /// 100-epoch run (about two minutes) generalizes to nominal scans.
    pub fn desk() -> Self {
        let mut data = PairGenerator::default();
        data.noise.spike_rate = 0.04;
        data.noise.bias_step_sigma_pos *= 2.0;
        data.noise.bias_step_sigma_rot *= 2.0;
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 16,
            batches_per_epoch: 8,
            hidden_channels: 32,
            data,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lr_floor_ratio) {
            return Err(Error::invalid("lr_floor_ratio must lie in [0, 1]"));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("bad optimizer hyper-parameters"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(Error::invalid("epochs, batch_size and batches_per_epoch must be positive"));
        }
        self.loss.validate()?;
        self.data.validate()
    }

    /// Cosine annealing from `learning_rate` (epoch 0) towards the floor.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let floor = self.learning_rate * self.lr_floor_ratio;
        let progress = if self.epochs > 1 {
            epoch as f64 / (self.epochs - 1) as f64
        } else {
            0.0
        };
        floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "epoch,loss,geo,l1,vel,freq,lr")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.loss.total, r.loss.geo, r.loss.l1, r.loss.vel, r.loss.freq, r.lr
            )?;
        }
        Ok(())
    }
}

/// Loss of the two supervised outputs on one pair, with the weight gradient.
pub fn pair_loss_and_grad(
    model: &RefinerModel,
    pair: &TrainingPair,
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (out, tape) = forward_with_tape(&pair.noisy, model);
    let (l_star, g_star) = composite_loss_with_grad(&out.x_star, &pair.clean, w)?;
    let (l_one, g_one) = composite_loss_with_grad(&out.x1, &pair.biased, w)?;
    let grad = backward(model, &tape, &g_star, &g_one);
    Ok((l_star.add(&l_one), grad))
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, weights: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..weights.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            if lr == 0.0 {
                continue;
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            weights[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.adam_eps) + cfg.weight_decay * weights[i]);
        }
    }
}

fn pair_seed(seed: u64, epoch: usize, batch: usize, item: usize) -> u64 {
    // SplitMix64 over the packed indices: distinct, well-mixed seeds.
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (batch as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (item as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains a refiner from scratch on simulator pairs. Fresh pairs are drawn
/// every epoch; per-pair gradients are reduced in item order, so the result
/// does not depend on the thread count.
pub fn train(cfg: &TrainConfig, progress: impl FnMut(&EpochRecord)) -> Result<(RefinerModel, TrainingLog)> {
    cfg.validate()?;
    let arch = RefinerArchitecture::with_hidden(cfg.hidden_channels);
    train_from(RefinerModel::initialized(arch, cfg.seed)?, cfg, progress)
}

/// Continues training from an existing model (its architecture wins over
/// `cfg.hidden_channels`).
pub fn train_from(
    mut model: RefinerModel,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(RefinerModel, TrainingLog)> {
    cfg.validate()?;
    model.validate()?;
    let mut opt = AdamW::new(model.weights.len());
    let mut log = TrainingLog::default();
    let n_params = model.weights.len();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut epoch_loss = LossBreakdown::default();
        for batch in 0..cfg.batches_per_epoch {
            let results: Vec<Result<(LossBreakdown, Vec<f64>)>> = (0..cfg.batch_size)
                .into_par_iter()
                .map(|item| {
                    let pair = cfg.data.pair(pair_seed(cfg.seed, epoch, batch, item))?;
                    pair_loss_and_grad(&model, &pair, &cfg.loss).map_err(|e| match e {
                        Error::Degenerate(detail) => Error::Divergence {
                            epoch,
                            step: batch,
                            detail,
                        },
                        e => e,
                    })
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            let mut batch_loss = LossBreakdown::default();
            for r in results {
                let (l, g) = r?;
                batch_loss = batch_loss.add(&l);
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let inv = 1.0 / cfg.batch_size as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            batch_loss = batch_loss.scale(inv);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !batch_loss.total.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: batch,
                    detail: format!("loss {} with gradient norm {norm}", batch_loss.total),
                });
            }
            if let Some(clip) = cfg.grad_clip {
                if norm > clip {
                    let s = clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            opt.update(&mut model.weights, &grad, lr, cfg);
            epoch_loss = epoch_loss.add(&batch_loss);
        }
        let record = EpochRecord {
            epoch,
            loss: epoch_loss.scale(1.0 / cfg.batches_per_epoch as f64),
            lr,
        };
        log::debug!("epoch {epoch}: loss {:.5} lr {lr:.2e}", record.loss.total);
        progress(&record);
        log.epochs.push(record);
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            batches_per_epoch: 1,
            hidden_channels: 4,
            data: PairGenerator {
                sequence_length: 32,
                source_frames: 64,
                ..PairGenerator::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        assert!((cfg.learning_rate_at(99) - 1e-5).abs() < 1e-18);
        for e in 1..100 {
            assert!(cfg.learning_rate_at(e) <= cfg.learning_rate_at(e - 1));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights_bit_exact() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let (model, log) = train(&cfg, |_| {}).unwrap();
        let init = RefinerModel::initialized(RefinerArchitecture::with_hidden(4), cfg.seed).unwrap();
        assert_eq!(model.weights, init.weights);
        assert_eq!(log.epochs.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_config();
        let (a, la) = train(&cfg, |_| {}).unwrap();
        let (b, lb) = train(&cfg, |_| {}).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(la, lb);
        let mut csv = Vec::new();
        la.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("epoch,loss,geo,l1,vel,freq,lr\n0,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn nan_learning_rate_is_rejected() {
        let cfg = TrainConfig {
            learning_rate: f64::NAN,
            ..small_config()
        };
        assert!(train(&cfg, |_| {}).is_err());
    }

    #[test]
    fn non_finite_weights_abort_with_divergence() {
        let cfg = small_config();
        let mut model = RefinerModel::initialized(RefinerArchitecture::with_hidden(4), 0).unwrap();
        let head = model.architecture.layout().e2_head;
        model.weights[head.b_off + 7] = f64::NAN;
        let r = train_from(model, &cfg, |_| {});
        assert!(matches!(r, Err(Error::Divergence { epoch: 0, step: 0, .. })), "{r:?}");
    }
}

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::RefinerModel;
use super::network::forward;
use crate::error::{Error, Result};
use crate::sim::trajectory::{generate_trajectory, TrajectoryConfig, TrajectoryMode};
use crate::se3::{
    denormalize_sequence, normalize_sequence, NormalizationParams, Pose, PoseSequence, PoseVector9,
    DEFAULT_SPATIAL_SCALE,
};

/// Inference windowing. Each window is normalized by its own first pose and
/// every frame takes its output from the window whose centre is closest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub spatial_scale: f64,
    /// `None` refines the whole sequence in one pass.
    pub window: Option<usize>,
    pub hop: usize,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            spatial_scale: DEFAULT_SPATIAL_SCALE,
            window: Some(256),
            hop: 128,
        }
    }
}

impl RefineOptions {
    pub fn whole_sequence(spatial_scale: f64) -> Self {
        RefineOptions {
            spatial_scale,
            window: None,
            hop: 1,
        }
    }
}

/// Runs the network on a normalized `9 × L` sequence, returning `X̃*`.
pub fn refine_normalized(x: &Array2<f64>, model: &RefinerModel) -> Array2<f64> {
    forward(x, model).x_star
}

/// Window start indices covering `n` frames.
pub fn window_starts(n: usize, window: usize, hop: usize) -> Vec<usize> {
    if n <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=n - window).step_by(hop.max(1)).collect();
    if *starts.last().expect("non-empty") != n - window {
        starts.push(n - window);
    }
    starts
}

fn refine_vectors(xs: &[PoseVector9], model: &RefinerModel, spatial_scale: f64) -> Result<Vec<PoseVector9>> {
    let params = NormalizationParams::new(spatial_scale, xs[0].p)?;
    let out = refine_normalized(&normalize_sequence(xs, &params), model);
    denormalize_sequence(&out, &params)
}

/// Refines the valid poses of `seq`. Missing poses are dropped before the
/// network runs and come back unchanged (still invalid) at their original
/// timestamps.
pub fn refine(seq: &PoseSequence, model: &RefinerModel, opts: &RefineOptions) -> Result<PoseSequence> {
    model.validate()?;
    let valid_idx: Vec<usize> = (0..seq.len()).filter(|&i| seq[i].valid).collect();
    if valid_idx.is_empty() {
        return Err(Error::invalid("sequence has no valid pose to refine"));
    }
    let xs: Vec<PoseVector9> = valid_idx.iter().map(|&i| seq[i].to_vector9()).collect();
    let n = xs.len();

    let refined: Vec<PoseVector9> = match opts.window {
        None => refine_vectors(&xs, model, opts.spatial_scale)?,
        Some(window) => {
            if window == 0 {
                return Err(Error::invalid("window must be positive"));
            }
            let starts = window_starts(n, window, opts.hop);
            let outputs: Vec<Vec<PoseVector9>> = starts
                .par_iter()
                .map(|&s| refine_vectors(&xs[s..(s + window).min(n)], model, opts.spatial_scale))
                .collect::<Result<_>>()?;
            let centre = |k: usize| 2 * starts[k] + window.min(n);
            (0..n)
                .map(|i| {
                    // Compare doubled distances to stay in integers.
                    let best = (0..starts.len())
                        .min_by_key(|&k| (2 * i + 1).abs_diff(centre(k)))
                        .expect("at least one window");
                    outputs[best][i - starts[best]]
                })
                .collect()
        }
    };

    let mut poses: Vec<Pose> = seq.poses().to_vec();
    for (v, &i) in refined.iter().zip(&valid_idx) {
        let mut p = v.to_pose(seq[i].t)?;
        p.valid = true;
        poses[i] = p;
    }
    PoseSequence::new(poses)
}

/// Residual decomposition of one normalized sequence, for inspection.
pub fn residuals(x: &Array2<f64>, model: &RefinerModel) -> (Array2<f64>, Array2<f64>) {
    let out = forward(x, model);
    (out.n_hf, out.n_lf)
}

/// Fraction of the energy of `x` (summed over channels) in bins strictly
/// above `cutoff` cycles/frame; the DC bin counts as low.
pub fn high_frequency_energy_fraction(x: &Array2<f64>, cutoff: f64) -> f64 {
    let mags = super::loss::magnitude_spectrum(x);
    let len = x.ncols() as f64;
    let mut high = 0.0;
    let mut total = 0.0;
    for row in mags.rows() {
        for (k, m) in row.iter().enumerate() {
            // Interior bins stand for a conjugate pair; DC and Nyquist do not.
            let weight = if k == 0 || 2 * k == x.ncols() { 1.0 } else { 2.0 };
            let e = weight * m * m;
            total += e;
            if k as f64 / len > cutoff {
                high += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// Boundary between the bias band (below) and the jitter band (above), Hz.
pub const JITTER_CUTOFF_HZ: f64 = 1.0;

/// The fixed probe signal for the stage separation check, normalized by its
/// first pose at 30 Hz: a 256-frame linear sweep of 150 mm, plus a 0.1 Hz
/// sinusoid (5 mm on positions, 0.01 on rotation channels, phase equal to
/// the channel index), plus white jitter (0.75 mm and 0.006) from seed 42.
pub fn frequency_separation_signal() -> Result<Array2<f64>> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let len = 256;
    let rate = 30.0;
    let traj = TrajectoryConfig::new(TrajectoryMode::Linear, 150.0, len as f64 / rate, 5);
    let gt = generate_trajectory(&traj)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let xs: Vec<PoseVector9> = gt
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut a = p.to_vector9().to_array();
            let phase = 2.0 * std::f64::consts::PI * 0.1 * i as f64 / rate;
            for (c, v) in a.iter_mut().enumerate() {
                let (amp, sigma) = if c < 6 { (0.01, 0.006) } else { (5.0, 0.75) };
                let jitter: f64 = StandardNormal.sample(&mut rng);
                *v += amp * (phase + c as f64).sin() + sigma * jitter;
            }
            PoseVector9::from_array(&a)
        })
        .collect();
    let params = NormalizationParams::new(DEFAULT_SPATIAL_SCALE, xs[0].p)?;
    Ok(normalize_sequence(&xs, &params))
}

/// Columns `range` of a `9 × L` array.
pub fn crop(x: &Array2<f64>, start: usize, len: usize) -> Array2<f64> {
    x.slice(s![.., start..start + len]).to_owned()
}

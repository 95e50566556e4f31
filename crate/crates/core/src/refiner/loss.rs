//! Composite loss on 9-channel sequences and its gradient.
//!
//! FFT convention: unnormalized forward DFT `X_k = Σ_n x_n e^{−2πikn/L}`
//! over the `L/2 + 1` non-negative bins; the frequency term averages
//! `| |X_k| − |G_k| |` over bins and channels.

use ndarray::{s, Array2};
use nalgebra::{Matrix3, Vector3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::geodesic_distance_matrices;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_l: f64,
    pub lambda_v: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_g: 1.0,
            lambda_l: 5.0,
            lambda_v: 3.0,
            lambda_f: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_g, self.lambda_l, self.lambda_v, self.lambda_f];
        if all.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub geo: f64,
    pub l1: f64,
    pub vel: f64,
    pub freq: f64,
}

impl LossBreakdown {
    pub fn weighted(geo: f64, l1: f64, vel: f64, freq: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            total: w.lambda_g * geo + w.lambda_l * l1 + w.lambda_v * vel + w.lambda_f * freq,
            geo,
            l1,
            vel,
            freq,
        }
    }

    pub fn add(&self, o: &LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            total: self.total + o.total,
            geo: self.geo + o.geo,
            l1: self.l1 + o.l1,
            vel: self.vel + o.vel,
            freq: self.freq + o.freq,
        }
    }

    pub fn scale(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * s,
            geo: self.geo * s,
            l1: self.l1 * s,
            vel: self.vel * s,
            freq: self.freq * s,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Frame6 {
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
    a2: Vector3<f64>,
    n1: f64,
    n2: f64,
}

fn gram_schmidt_parts(r: &[f64]) -> Result<Frame6> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > 1e-12) {
        return Err(Error::degenerate("first 6D column vanishes"));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if !(n2 > 1e-12) {
        return Err(Error::degenerate("6D columns are parallel"));
    }
    let b2 = u2 / n2;
    Ok(Frame6 {
        b3: b1.cross(&b2),
        b1,
        b2,
        a2,
        n1,
        n2,
    })
}

/// Geodesic angle at one frame and its gradient with respect to the six
/// predicted rotation channels.
fn geodesic_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, [f64; 6])> {
    let p = gram_schmidt_parts(pred)?;
    let g = gram_schmidt_parts(target)?;
    let pm = Matrix3::from_columns(&[p.b1, p.b2, p.b3]);
    let gm = Matrix3::from_columns(&[g.b1, g.b2, g.b3]);
    let angle = geodesic_distance_matrices(&pm, &gm);
    // The gradient is that of acos(c); its singular ends are zeroed.
    let c_raw = (p.b1.dot(&g.b1) + p.b2.dot(&g.b2) + p.b3.dot(&g.b3) - 1.0) / 2.0;
    let c = c_raw.clamp(-1.0, 1.0);
    let one_minus = 1.0 - c * c;
    if c != c_raw || one_minus < 1e-14 {
        return Ok((angle, [0.0; 6]));
    }
    let dc = -1.0 / one_minus.sqrt();
    let gb3 = g.b3 * (dc / 2.0);
    let mut gb1 = g.b1 * (dc / 2.0) + p.b2.cross(&gb3);
    let gb2 = g.b2 * (dc / 2.0) + gb3.cross(&p.b1);
    let gu2 = (gb2 - p.b2 * p.b2.dot(&gb2)) / p.n2;
    let ga2 = gu2 - p.b1 * p.b1.dot(&gu2);
    gb1 -= gu2 * p.b1.dot(&p.a2) + p.a2 * p.b1.dot(&gu2);
    let ga1 = (gb1 - p.b1 * p.b1.dot(&gb1)) / p.n1;
    Ok((angle, [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]))
}

fn spectrum(planner: &mut FftPlanner<f64>, x: impl Iterator<Item = f64>, len: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.map(|v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(len).process(&mut buf);
    buf.truncate(len / 2 + 1);
    buf
}

/// Per-channel magnitudes of the non-negative frequency bins.
pub fn magnitude_spectrum(x: &Array2<f64>) -> Array2<f64> {
    let (c, len) = x.dim();
    let bins = len / 2 + 1;
    let mut planner = FftPlanner::new();
    let mut out = Array2::zeros((c, bins));
    for ch in 0..c {
        let spec = spectrum(&mut planner, x.row(ch).iter().copied(), len);
        for (k, z) in spec.iter().enumerate() {
            out[[ch, k]] = z.norm();
        }
    }
    out
}

/// Composite loss between a predicted and a target `9 × L` sequence.
/// Returns the breakdown and `∂total/∂prediction`.
pub fn composite_loss_with_grad(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    w: &LossWeights,
) -> Result<(LossBreakdown, Array2<f64>)> {
    if pred.dim() != target.dim() || pred.nrows() != 9 {
        return Err(Error::invalid("loss inputs must both be 9 × L"));
    }
    let len = pred.ncols();
    if len == 0 {
        return Err(Error::invalid("empty sequence"));
    }
    let mut grad = Array2::zeros((9, len));

    let mut geo = 0.0;
    for t in 0..len {
        let p: Vec<f64> = pred.slice(s![0..6, t]).to_vec();
        let g: Vec<f64> = target.slice(s![0..6, t]).to_vec();
        let (angle, dg) = geodesic_with_grad(&p, &g)?;
        geo += angle;
        for (i, v) in dg.iter().enumerate() {
            grad[[i, t]] += w.lambda_g * v / len as f64;
        }
    }
    geo /= len as f64;

    let n_l1 = (9 * len) as f64;
    let mut l1 = 0.0;
    for ((idx, &p), &g) in pred.indexed_iter().zip(target.iter()) {
        l1 += (p - g).abs();
        grad[idx] += w.lambda_l * sign(p - g) / n_l1;
    }
    l1 /= n_l1;

    let mut vel = 0.0;
    let mut freq = 0.0;
    if len >= 2 {
        let n_v = (9 * (len - 1)) as f64;
        for c in 0..9 {
            for t in 0..len - 1 {
                let d = (pred[[c, t + 1]] - pred[[c, t]]) - (target[[c, t + 1]] - target[[c, t]]);
                vel += d.abs();
                let gs = w.lambda_v * sign(d) / n_v;
                grad[[c, t + 1]] += gs;
                grad[[c, t]] -= gs;
            }
        }
        vel /= n_v;

        let bins = len / 2 + 1;
        let n_f = (9 * bins) as f64;
        let mut planner = FftPlanner::new();
        let inverse = planner.plan_fft_inverse(len);
        for c in 0..9 {
            let xp = spectrum(&mut planner, pred.row(c).iter().copied(), len);
            let xg = spectrum(&mut planner, target.row(c).iter().copied(), len);
            // ∂|X_k|/∂x_n = Re(X_k/|X_k| · e^{+2πikn/L}), summed with the
            // outer sign through one inverse transform.
            let mut weights = vec![Complex::new(0.0, 0.0); len];
            for k in 0..bins {
                let (mp, mg) = (xp[k].norm(), xg[k].norm());
                freq += (mp - mg).abs();
                if mp > 1e-300 {
                    weights[k] = xp[k] / mp * (w.lambda_f * sign(mp - mg) / n_f);
                }
            }
            inverse.process(&mut weights);
            for n in 0..len {
                grad[[c, n]] += weights[n].re;
            }
        }
        freq /= n_f;
    }

    Ok((LossBreakdown::weighted(geo, l1, vel, freq, w), grad))
}

pub fn composite_loss(pred: &Array2<f64>, target: &Array2<f64>, w: &LossWeights) -> Result<LossBreakdown> {
    composite_loss_with_grad(pred, target, w).map(|(l, _)| l)
}

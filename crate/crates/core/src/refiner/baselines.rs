//! Classical per-channel filters in the normalized 9-channel space.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{denormalize_sequence, normalize_sequence, NormalizationParams, PoseSequence, PoseVector9};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineFilter {
    /// Forward constant-velocity Kalman filter per channel. Noise variances
    /// are in normalized units per frame.
    Kalman { process_noise: f64, measurement_noise: f64 },
    /// Centred sliding mean; the window shrinks symmetrically at the ends.
    Mean { window: usize },
    /// Centred sliding median, same edge rule as the mean.
    Median { window: usize },
}

impl BaselineFilter {
    pub fn kalman_default() -> Self {
        BaselineFilter::Kalman {
            process_noise: 1e-6,
            measurement_noise: 5e-5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineFilter::Kalman { .. } => "kalman",
            BaselineFilter::Mean { .. } => "mean",
            BaselineFilter::Median { .. } => "median",
        }
    }
}

/// Odd window no longer than `len`: a window above `len` is clamped to `len`,
/// or `len − 1` when `len` is even.
fn effective_window(window: usize, len: usize) -> Result<usize> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid("mean/median windows must be odd"));
    }
    if window <= len {
        Ok(window)
    } else if len % 2 == 1 {
        Ok(len)
    } else {
        Ok(len - 1)
    }
}

fn sliding(row: ArrayView1<f64>, window: usize, reduce: impl Fn(&mut [f64]) -> f64) -> Vec<f64> {
    let n = row.len();
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            let reach = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend(row.iter().skip(i - reach).take(2 * reach + 1));
            reduce(&mut buf)
        })
        .collect()
}

/// Mean as an offset from the first sample, exact on constant windows.
fn mean(v: &mut [f64]) -> f64 {
    let base = v[0];
    base + v.iter().map(|x| x - base).sum::<f64>() / v.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn kalman(row: ArrayView1<f64>, q: f64, r: f64) -> Vec<f64> {
    let mut x = [row[0], 0.0];
    let mut p = [[r, 0.0], [0.0, r]];
    let mut out = Vec::with_capacity(row.len());
    out.push(x[0]);
    for &z in row.iter().skip(1) {
        // Predict with F = [[1, 1], [0, 1]], Q = q·G·Gᵀ, G = (½, 1).
        let xp = [x[0] + x[1], x[1]];
        let pp = [
            [
                p[0][0] + p[0][1] + p[1][0] + p[1][1] + 0.25 * q,
                p[0][1] + p[1][1] + 0.5 * q,
            ],
            [p[1][0] + p[1][1] + 0.5 * q, p[1][1] + q],
        ];
        let s = pp[0][0] + r;
        let k = [pp[0][0] / s, pp[1][0] / s];
        let innovation = z - xp[0];
        x = [xp[0] + k[0] * innovation, xp[1] + k[1] * innovation];
        p = [
            [(1.0 - k[0]) * pp[0][0], (1.0 - k[0]) * pp[0][1]],
            [pp[1][0] - k[1] * pp[0][0], pp[1][1] - k[1] * pp[0][1]],
        ];
        out.push(x[0]);
    }
    out
}

/// Filters each row of a `C × L` array.
pub fn filter_channels(x: &Array2<f64>, filter: &BaselineFilter) -> Result<Array2<f64>> {
    let (c, len) = x.dim();
    let mut out = Array2::zeros((c, len));
    if len == 0 {
        return Ok(out);
    }
    for ch in 0..c {
        let row = x.row(ch);
        let filtered = match *filter {
            BaselineFilter::Kalman {
                process_noise,
                measurement_noise,
            } => {
                if !(process_noise >= 0.0 && measurement_noise > 0.0) {
                    return Err(Error::invalid("Kalman noise variances must be positive"));
                }
                kalman(row, process_noise, measurement_noise)
            }
            BaselineFilter::Mean { window } => sliding(row, effective_window(window, len)?, mean),
            BaselineFilter::Median { window } => sliding(row, effective_window(window, len)?, median),
        };
        out.row_mut(ch).assign(&ArrayView1::from(&filtered));
    }
    Ok(out)
}

/// Filters the valid poses of `seq`; missing poses are skipped and kept.
pub fn baseline_filter(seq: &PoseSequence, filter: &BaselineFilter, spatial_scale: f64) -> Result<PoseSequence> {
    let valid_idx: Vec<usize> = (0..seq.len()).filter(|&i| seq[i].valid).collect();
    if valid_idx.is_empty() {
        return Err(Error::invalid("sequence has no valid pose to filter"));
    }
    let xs: Vec<PoseVector9> = valid_idx.iter().map(|&i| seq[i].to_vector9()).collect();
    let params = NormalizationParams::new(spatial_scale, xs[0].p)?;
    let filtered = filter_channels(&normalize_sequence(&xs, &params), filter)?;
    let back = denormalize_sequence(&filtered, &params)?;
    let mut poses = seq.poses().to_vec();
    for (v, &i) in back.iter().zip(&valid_idx) {
        poses[i] = v.to_pose(seq[i].t)?;
    }
    PoseSequence::new(poses)
}

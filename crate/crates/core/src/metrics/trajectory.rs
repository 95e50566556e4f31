use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{geodesic_distance, relative_euler, Pose, PoseSequence};

/// Gt path lengths below this (mm) are left out of ADR.
pub const ADR_MIN_PATH_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub fdr_percent: f64,
    pub adr_percent: f64,
    pub md_mm: f64,
    pub mre_deg: f64,
    pub ape_mm: f64,
    pub are_deg: f64,
    pub td_mm: f64,
}

impl TrajectoryMetrics {
    pub const NAMES: [&'static str; 7] = ["fdr_percent", "adr_percent", "md_mm", "mre_deg", "ape_mm", "are_deg", "td_mm"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.fdr_percent,
            self.adr_percent,
            self.md_mm,
            self.mre_deg,
            self.ape_mm,
            self.are_deg,
            self.td_mm,
        ]
    }
}

/// Pairs every valid estimate with the valid gt pose nearest in time, within
/// half the gt frame interval. Returns `(estimate, gt index)` pairs.
pub fn pair_by_timestamp<'a>(estimated: &'a PoseSequence, gt: &PoseSequence) -> Vec<(&'a Pose, usize)> {
    let g = gt.poses();
    let tol = gt.median_interval().map_or(f64::INFINITY, |dt| 0.5 * dt + 1e-9);
    estimated
        .iter()
        .filter(|p| p.valid)
        .filter_map(|p| {
            let j = g.partition_point(|q| q.t < p.t);
            let best = [j.checked_sub(1), (j < g.len()).then_some(j)]
                .into_iter()
                .flatten()
                .min_by(|&a, &b| (g[a].t - p.t).abs().total_cmp(&(g[b].t - p.t).abs()))?;
            (g[best].valid && (g[best].t - p.t).abs() <= tol).then_some((p, best))
        })
        .collect()
}

/// Cumulative gt path length at every gt frame (invalid frames carry the
/// length reached so far).
fn path_lengths(gt: &PoseSequence) -> Vec<f64> {
    let mut out = Vec::with_capacity(gt.len());
    let mut s = 0.0;
    let mut last: Option<&Pose> = None;
    for p in gt.iter() {
        if p.valid {
            if let Some(q) = last {
                s += (p.translation - q.translation).norm();
            }
            last = Some(p);
        }
        out.push(s);
    }
    out
}

/// What the final drift rate is divided by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftNormalization {
    /// Traversed gt path length (TD).
    #[default]
    PathLength,
    /// Straight-line distance between the first and last valid gt poses.
    StraightLine,
}

pub fn trajectory_metrics(estimated: &PoseSequence, gt: &PoseSequence) -> Result<TrajectoryMetrics> {
    trajectory_metrics_with(estimated, gt, DriftNormalization::PathLength)
}

pub fn trajectory_metrics_with(
    estimated: &PoseSequence,
    gt: &PoseSequence,
    fdr_norm: DriftNormalization,
) -> Result<TrajectoryMetrics> {
    let pairs = pair_by_timestamp(estimated, gt);
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} mutually valid frames, need at least 2",
            pairs.len()
        )));
    }
    let lengths = path_lengths(gt);
    let td = *lengths.last().expect("non-empty");
    if !(td > 0.0) {
        return Err(Error::UndefinedMetric("gt path length is zero".into()));
    }
    let fdr_denominator = match fdr_norm {
        DriftNormalization::PathLength => td,
        DriftNormalization::StraightLine => {
            let mut valid = gt.iter().filter(|p| p.valid);
            let first = valid.next().expect("td > 0 implies valid poses");
            let last = valid.last().unwrap_or(first);
            (last.translation - first.translation).norm()
        }
    };
    if !(fdr_denominator > 0.0) {
        return Err(Error::UndefinedMetric("gt start and end coincide".into()));
    }
    let n = pairs.len() as f64;
    let (mut ape, mut are, mut md, mut mre) = (0.0, 0.0, 0.0f64, 0.0f64);
    let (mut adr_sum, mut adr_n) = (0.0, 0usize);
    let mut last_e = 0.0;
    for &(p, j) in &pairs {
        let q = &gt[j];
        let e = (p.translation - q.translation).norm();
        let r = geodesic_distance(&p.rotation, &q.rotation).to_degrees();
        ape += e;
        are += r;
        md = md.max(e);
        mre = mre.max(r);
        if lengths[j] >= ADR_MIN_PATH_MM {
            adr_sum += e / lengths[j];
            adr_n += 1;
        }
        last_e = e;
    }
    Ok(TrajectoryMetrics {
        fdr_percent: 100.0 * last_e / fdr_denominator,
        adr_percent: if adr_n > 0 { 100.0 * adr_sum / adr_n as f64 } else { 0.0 },
        md_mm: md,
        mre_deg: mre,
        ape_mm: ape / n,
        are_deg: are / n,
        td_mm: td,
    })
}

/// Per-frame signed error, estimate minus gt: position in mm and
/// (roll, pitch, yaw) of the relative rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub droll: f64,
    pub dpitch: f64,
    pub dyaw: f64,
}

pub fn error_series(estimated: &PoseSequence, gt: &PoseSequence) -> Vec<ErrorSample> {
    pair_by_timestamp(estimated, gt)
        .into_iter()
        .map(|(p, j)| {
            let q = &gt[j];
            let d = p.translation - q.translation;
            let [r, pi, y] = relative_euler(&p.rotation, &q.rotation);
            ErrorSample {
                t: q.t,
                dx: d.x,
                dy: d.y,
                dz: d.z,
                droll: r.to_degrees(),
                dpitch: pi.to_degrees(),
                dyaw: y.to_degrees(),
            }
        })
        .collect()
}

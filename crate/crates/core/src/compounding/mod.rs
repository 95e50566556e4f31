//! Forward compounding of tracked B-mode frames into a voxel grid.

mod fill;
mod volume;

pub use fill::{hole_fill, HoleFillReport};
pub use volume::{read_volume, write_volume, Volume};

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Pose, PoseSequence};
use crate::sim::Frame;

/// Largest grid `auto_sized` will allocate.
pub const MAX_VOXELS: usize = 256 * 1024 * 1024;

/// Placement of a regular grid in the camera frame. Voxel `(i, j, k)` has its
/// centre at `origin + spacing·(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid("voxel spacing must be positive"));
        }
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        match n {
            Some(n) if n > 0 && n <= MAX_VOXELS => Ok(GridGeometry { dims, spacing, origin }),
            _ => Err(Error::invalid(format!("grid of {dims:?} voxels is empty or too large"))),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x fastest.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + self.spacing * i as f64,
            self.origin[1] + self.spacing * j as f64,
            self.origin[2] + self.spacing * k as f64,
        )
    }

    /// Nearest voxel to `x`, if inside the grid.
    pub fn nearest(&self, x: &Vector3<f64>) -> Option<usize> {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = ((x[a] - self.origin[a]) / self.spacing).round();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            ijk[a] = f as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }
}

/// Bin-filling accumulators. Intensities are integers, so sums are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid {
    pub geometry: GridGeometry,
    pub sum: Vec<u64>,
    pub count: Vec<u32>,
    /// Final scalar field; `NaN` marks voxels with no value yet.
    pub value: Vec<f64>,
}

impl VolumeGrid {
    pub fn new(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        VolumeGrid {
            geometry,
            sum: vec![0; n],
            count: vec![0; n],
            value: vec![f64::NAN; n],
        }
    }

    pub fn filled_count(&self) -> usize {
        self.value.iter().filter(|v| !v.is_nan()).count()
    }
}

/// Frames plus the poses and calibration that place them.
#[derive(Debug, Clone, Copy)]
pub struct CompoundingInput<'a> {
    pub frames: &'a [Frame],
    pub poses: &'a PoseSequence,
    /// Image plane (mm) to probe frame.
    pub image_to_probe: Isometry3<f64>,
    /// Image delay behind the pose stream: a frame stamped `t` shows the
    /// probe at pose time `t − lag_s`.
    pub lag_s: f64,
}

/// Camera-frame position of pixel `(u, v)`, or `None` for an invalid pose.
pub fn map_pixel(u: f64, v: f64, pixel_spacing: [f64; 2], image_to_probe: &Isometry3<f64>, pose: &Pose) -> Option<Vector3<f64>> {
    if !pose.valid {
        return None;
    }
    let p = pose.isometry() * image_to_probe * Point3::new(pixel_spacing[0] * u, pixel_spacing[1] * v, 0.0);
    Some(p.coords)
}

impl<'a> CompoundingInput<'a> {
    /// `(frame index, pose)` for every frame whose lag-corrected time has a
    /// valid pose within half a pose interval, in timestamp order.
    pub fn matched(&self) -> Vec<(usize, &'a Pose)> {
        let poses = self.poses.poses();
        let tol = self.poses.median_interval().map_or(f64::INFINITY, |dt| 0.5 * dt + 1e-9);
        let mut order: Vec<usize> = (0..self.frames.len()).collect();
        order.sort_by(|&a, &b| self.frames[a].t.total_cmp(&self.frames[b].t));
        order
            .into_iter()
            .filter_map(|fi| {
                let t = self.frames[fi].t - self.lag_s;
                let j = poses.partition_point(|p| p.t < t);
                let best = [j.checked_sub(1), (j < poses.len()).then_some(j)]
                    .into_iter()
                    .flatten()
                    .min_by(|&a, &b| (poses[a].t - t).abs().total_cmp(&(poses[b].t - t).abs()))?;
                let p = &poses[best];
                (p.valid && (p.t - t).abs() <= tol).then_some((fi, p))
            })
            .collect()
    }
}

/// Axis-aligned grid around the mapped corners of all usable frames,
/// padded by `pad` voxels on every side.
pub fn auto_sized(input: &CompoundingInput, spacing: f64, pad: usize) -> Result<GridGeometry> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (fi, pose) in input.matched() {
        let f = &input.frames[fi];
        let (w, h) = ((f.width - 1) as f64, (f.height - 1) as f64);
        for (u, v) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
            let x = map_pixel(u, v, f.pixel_spacing, &input.image_to_probe, pose).expect("matched poses are valid");
            lo = lo.inf(&x);
            hi = hi.sup(&x);
        }
    }
    if !lo.x.is_finite() {
        return Err(Error::InsufficientData("no frame has a valid pose".into()));
    }
    let padding = pad as f64 * spacing;
    let origin = lo - Vector3::repeat(padding);
    let mut dims = [0usize; 3];
    for a in 0..3 {
        dims[a] = ((hi[a] - lo[a]) / spacing).ceil() as usize + 1 + 2 * pad;
    }
    GridGeometry::new(dims, spacing, [origin.x, origin.y, origin.z])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinFillReport {
    pub frames_used: usize,
    pub frames_skipped: usize,
    pub pixels_in_bounds: u64,
    pub out_of_bounds: u64,
    pub intensity_sum: u64,
}

/// Nearest-voxel forward compounding with averaging of collisions. Frames
/// run in timestamp order; frames without a usable pose are skipped.
pub fn bin_fill(input: &CompoundingInput, grid: &mut VolumeGrid) -> BinFillReport {
    let matched = input.matched();
    let mut report = BinFillReport {
        frames_used: matched.len(),
        frames_skipped: input.frames.len() - matched.len(),
        ..BinFillReport::default()
    };
    for (fi, pose) in matched {
        let f = &input.frames[fi];
        let m = pose.isometry() * input.image_to_probe;
        let o = m * Point3::origin();
        let du = m.rotation * Vector3::new(f.pixel_spacing[0], 0.0, 0.0);
        let dv = m.rotation * Vector3::new(0.0, f.pixel_spacing[1], 0.0);
        for v in 0..f.height {
            for u in 0..f.width {
                let x = o.coords + du * u as f64 + dv * v as f64;
                let value = f.get(u, v) as u64;
                match grid.geometry.nearest(&x) {
                    Some(idx) => {
                        grid.sum[idx] += value;
                        grid.count[idx] += 1;
                        report.pixels_in_bounds += 1;
                        report.intensity_sum += value;
                    }
                    None => report.out_of_bounds += 1,
                }
            }
        }
    }
    for ((val, &s), &c) in grid.value.iter_mut().zip(&grid.sum).zip(&grid.count) {
        if c > 0 {
            *val = s as f64 / c as f64;
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompoundingConfig {
    pub spacing: f64,
    pub padding_voxels: usize,
    pub hole_fill_radius: usize,
    pub hole_fill_passes: usize,
}

impl Default for CompoundingConfig {
    fn default() -> Self {
        CompoundingConfig {
            spacing: 0.5,
            padding_voxels: 5,
            hole_fill_radius: 2,
            hole_fill_passes: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundingReport {
    pub bin_fill: BinFillReport,
    pub hole_fill: HoleFillReport,
    pub filled_voxels: usize,
    pub empty_voxels: usize,
}

/// Auto-sized grid, bin filling and hole filling in one call.
pub fn compound(input: &CompoundingInput, cfg: &CompoundingConfig) -> Result<(VolumeGrid, CompoundingReport)> {
    let geometry = auto_sized(input, cfg.spacing, cfg.padding_voxels)?;
    let mut grid = VolumeGrid::new(geometry);
    let bin = bin_fill(input, &mut grid);
    let holes = hole_fill(&mut grid, cfg.hole_fill_radius, cfg.hole_fill_passes);
    let filled = grid.filled_count();
    let empty = grid.geometry.len() - filled;
    Ok((
        grid,
        CompoundingReport {
            bin_fill: bin,
            hole_fill: holes,
            filled_voxels: filled,
            empty_voxels: empty,
        },
    ))
}

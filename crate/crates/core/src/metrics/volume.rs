use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compounding::GridGeometry;
use crate::error::{Error, Result};

/// Binary voxel set on an `nx × ny × nz` grid, x fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl VoxelMask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid("mask length does not match its dimensions"));
        }
        Ok(VoxelMask { dims, data })
    }

    /// Voxels whose centres satisfy `inside`.
    pub fn rasterize(geometry: &GridGeometry, inside: impl Fn(&Vector3<f64>) -> bool + Sync) -> Self {
        let data = (0..geometry.len())
            .into_par_iter()
            .map(|idx| {
                let [i, j, k] = geometry.coords(idx);
                inside(&geometry.center(i, j, k))
            })
            .collect();
        VoxelMask { dims: geometry.dims, data }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        [i, j, idx / (self.dims[0] * self.dims[1])]
    }

    /// Mask voxels with at least one empty 6-neighbour; the outside of the
    /// grid counts as empty.
    pub fn surface(&self) -> Vec<bool> {
        let [nx, ny, nz] = self.dims;
        (0..self.data.len())
            .map(|idx| {
                if !self.data[idx] {
                    return false;
                }
                let [i, j, k] = self.coords(idx);
                i == 0
                    || j == 0
                    || k == 0
                    || i + 1 == nx
                    || j + 1 == ny
                    || k + 1 == nz
                    || !self.data[self.index(i - 1, j, k)]
                    || !self.data[self.index(i + 1, j, k)]
                    || !self.data[self.index(i, j - 1, k)]
                    || !self.data[self.index(i, j + 1, k)]
                    || !self.data[self.index(i, j, k - 1)]
                    || !self.data[self.index(i, j, k + 1)]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub dice: f64,
    pub hd_mm: f64,
    pub asd_mm: f64,
    /// Extent differences along the reference's principal axes, largest
    /// axis first.
    pub size_error_mm: [f64; 3],
}

impl VolumeMetrics {
    pub const NAMES: [&'static str; 6] = ["dice", "hd_mm", "asd_mm", "size_error_1_mm", "size_error_2_mm", "size_error_3_mm"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.dice,
            self.hd_mm,
            self.asd_mm,
            self.size_error_mm[0],
            self.size_error_mm[1],
            self.size_error_mm[2],
        ]
    }
}

pub fn dice(a: &VoxelMask, b: &VoxelMask) -> f64 {
    let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
    let total = a.count() + b.count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Exact 1D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut first = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_finite() {
            first = Some(q);
            break;
        }
    }
    let Some(start) = first else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = start;
    for q in start + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance (voxels²) from every voxel to the nearest
/// voxel of `set`.
fn squared_distance_field(dims: [usize; 3], set: &[bool]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let mut field: Vec<f64> = set.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let n_max = nx.max(ny).max(nz);
    let mut f = vec![0.0; n_max];
    let mut out = vec![0.0; n_max];
    let mut v = vec![0usize; n_max];
    let mut z = vec![0.0; n_max + 1];
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    for (axis, len) in [(0usize, nx), (1, ny), (2, nz)] {
        let (outer_a, outer_b) = match axis {
            0 => (ny, nz),
            1 => (nx, nz),
            _ => (nx, ny),
        };
        for a in 0..outer_a {
            for b in 0..outer_b {
                let at = |t: usize| match axis {
                    0 => idx(t, a, b),
                    1 => idx(a, t, b),
                    _ => idx(a, b, t),
                };
                for t in 0..len {
                    f[t] = field[at(t)];
                }
                edt_1d(&f[..len], &mut out[..len], &mut v[..len], &mut z[..len + 1]);
                for t in 0..len {
                    field[at(t)] = out[t];
                }
            }
        }
    }
    field
}

/// Distances (mm) from each surface voxel of `from` to the surface of `to`.
fn directed_surface_distances(from: &[bool], to_field: &[f64], spacing: f64) -> Vec<f64> {
    from.iter()
        .zip(to_field)
        .filter(|(s, _)| **s)
        .map(|(_, d2)| d2.sqrt() * spacing)
        .collect()
}

fn principal_axes(mask: &VoxelMask) -> [Vector3<f64>; 3] {
    let pts: Vec<Vector3<f64>> = (0..mask.data.len())
        .filter(|&i| mask.data[i])
        .map(|i| {
            let [x, y, z] = mask.coords(i);
            Vector3::new(x as f64, y as f64, z as f64)
        })
        .collect();
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Vector3<f64>>() / n;
    let cov = pts.iter().fold(Matrix3::zeros(), |m, p| m + (p - mean) * (p - mean).transpose()) / n;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.map(|c| eig.eigenvectors.column(c).into_owned())
}

/// Extent along `axis` in voxels, counting one voxel width.
fn extent(mask: &VoxelMask, axis: &Vector3<f64>) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in (0..mask.data.len()).filter(|&i| mask.data[i]) {
        let [x, y, z] = mask.coords(i);
        let s = axis.dot(&Vector3::new(x as f64, y as f64, z as f64));
        lo = lo.min(s);
        hi = hi.max(s);
    }
    hi - lo + 1.0
}

/// Overlap and surface metrics of `reconstructed` against `reference` on a
/// common grid with isotropic `spacing` (mm).
pub fn volume_metrics(reconstructed: &VoxelMask, reference: &VoxelMask, spacing: f64) -> Result<VolumeMetrics> {
    if reconstructed.dims != reference.dims {
        return Err(Error::invalid("masks live on different grids"));
    }
    if reconstructed.count() == 0 || reference.count() == 0 {
        return Err(Error::UndefinedMetric("empty mask".into()));
    }
    let (sa, sb) = (reconstructed.surface(), reference.surface());
    let (fa, fb) = (
        squared_distance_field(reference.dims, &sa),
        squared_distance_field(reference.dims, &sb),
    );
    let ab = directed_surface_distances(&sa, &fb, spacing);
    let ba = directed_surface_distances(&sb, &fa, spacing);
    let max = |d: &[f64]| d.iter().copied().fold(0.0, f64::max);
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let axes = principal_axes(reference);
    let size_error_mm = axes.map(|a| (extent(reconstructed, &a) - extent(reference, &a)).abs() * spacing);
    Ok(VolumeMetrics {
        dice: dice(reconstructed, reference),
        hd_mm: max(&ab).max(max(&ba)),
        asd_mm: 0.5 * (mean(&ab) + mean(&ba)),
        size_error_mm,
    })
}

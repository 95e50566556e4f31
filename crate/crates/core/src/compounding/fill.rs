use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GridGeometry, VolumeGrid};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoleFillReport {
    /// Empty voxels inside the region of interest before filling.
    pub holes: usize,
    pub filled: usize,
    /// Holes still empty after the last pass.
    pub unfilled: usize,
    pub passes: usize,
}

/// Empty voxels bracketed by bin-filled voxels along at least one grid axis:
/// a per-line stand-in for the convex footprint of the sweep.
fn region_of_interest(grid: &VolumeGrid) -> Vec<bool> {
    let g = &grid.geometry;
    let [nx, ny, nz] = g.dims;
    let filled = |i, j, k| grid.count[g.index(i, j, k)] > 0;
    let mut roi = vec![false; g.len()];
    let mut mark_line = |cells: &mut dyn Iterator<Item = (usize, usize, usize)>| {
        let cells: Vec<_> = cells.collect();
        let first = cells.iter().position(|&(i, j, k)| filled(i, j, k));
        let last = cells.iter().rposition(|&(i, j, k)| filled(i, j, k));
        if let (Some(a), Some(b)) = (first, last) {
            for &(i, j, k) in cells.iter().take(b).skip(a + 1) {
                if !filled(i, j, k) {
                    roi[g.index(i, j, k)] = true;
                }
            }
        }
    };
    for k in 0..nz {
        for j in 0..ny {
            mark_line(&mut (0..nx).map(|i| (i, j, k)));
        }
        for i in 0..nx {
            mark_line(&mut (0..ny).map(|j| (i, j, k)));
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            mark_line(&mut (0..nz).map(|k| (i, j, k)));
        }
    }
    roi
}

/// Offsets reachable in at most `r` 6-connected steps, with their
/// Euclidean lengths in voxels.
fn neighbourhood(r: usize) -> Vec<([isize; 3], f64)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dk in -r..=r {
        for dj in -r..=r {
            for di in -r..=r {
                let l1 = di.abs() + dj.abs() + dk.abs();
                if l1 > 0 && l1 <= r {
                    out.push(([di, dj, dk], ((di * di + dj * dj + dk * dk) as f64).sqrt()));
                }
            }
        }
    }
    out
}

fn shifted(g: &GridGeometry, ijk: [usize; 3], d: [isize; 3]) -> Option<usize> {
    let mut p = [0usize; 3];
    for a in 0..3 {
        let q = ijk[a] as isize + d[a];
        if q < 0 || q >= g.dims[a] as isize {
            return None;
        }
        p[a] = q as usize;
    }
    Some(g.index(p[0], p[1], p[2]))
}

/// Gradient magnitude (intensity per voxel) at a known voxel, by central
/// differences where both sides are known and one-sided otherwise.
fn gradient(g: &GridGeometry, field: &[f64], ijk: [usize; 3]) -> f64 {
    let here = field[g.index(ijk[0], ijk[1], ijk[2])];
    let mut sq = 0.0;
    for a in 0..3 {
        let mut d = [0isize; 3];
        d[a] = 1;
        let plus = shifted(g, ijk, d).map(|i| field[i]).filter(|v| !v.is_nan());
        d[a] = -1;
        let minus = shifted(g, ijk, d).map(|i| field[i]).filter(|v| !v.is_nan());
        let di = match (plus, minus) {
            (Some(p), Some(m)) => 0.5 * (p - m),
            (Some(p), None) => p - here,
            (None, Some(m)) => here - m,
            (None, None) => 0.0,
        };
        sq += di * di;
    }
    sq.sqrt()
}

/// Fills empty voxels inside the sweep footprint with a weighted mean of
/// known voxels within `max_radius` steps, weight `1/(1 + g·dist)` where `g`
/// is the gradient magnitude at the neighbour. Each pass reads the previous
/// field and writes a fresh one; bin-filled voxels are never touched.
pub fn hole_fill(grid: &mut VolumeGrid, max_radius: usize, max_passes: usize) -> HoleFillReport {
    let roi = region_of_interest(grid);
    let holes = roi.iter().filter(|&&r| r).count();
    let mut report = HoleFillReport {
        holes,
        unfilled: holes,
        ..HoleFillReport::default()
    };
    if holes == 0 || max_radius == 0 {
        return report;
    }
    let g = grid.geometry;
    let offsets = neighbourhood(max_radius);
    let slab = g.dims[0] * g.dims[1];
    for _ in 0..max_passes {
        let prev = grid.value.clone();
        let mut next = prev.clone();
        next.par_chunks_mut(slab).enumerate().for_each(|(k, out)| {
            for (local, slot) in out.iter_mut().enumerate() {
                let idx = k * slab + local;
                if !roi[idx] || !prev[idx].is_nan() {
                    continue;
                }
                let ijk = g.coords(idx);
                let mut base = f64::NAN;
                let (mut wsum, mut acc) = (0.0, 0.0);
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for &(d, dist) in &offsets {
                    let Some(n) = shifted(&g, ijk, d) else { continue };
                    let c = prev[n];
                    if c.is_nan() {
                        continue;
                    }
                    if base.is_nan() {
                        base = c;
                    }
                    let w = 1.0 / (1.0 + gradient(&g, &prev, g.coords(n)) * dist);
                    wsum += w;
                    acc += w * (c - base);
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                if wsum > 0.0 {
                    *slot = (base + acc / wsum).clamp(lo, hi);
                }
            }
        });
        let newly = next.iter().zip(&prev).filter(|(n, p)| p.is_nan() && !n.is_nan()).count();
        grid.value = next;
        if newly == 0 {
            break;
        }
        report.passes += 1;
        report.filled += newly;
        report.unfilled -= newly;
        if report.unfilled == 0 {
            break;
        }
    }
    report
}

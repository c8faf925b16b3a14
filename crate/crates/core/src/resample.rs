//! Grid resampling: trilinear for images, nearest-neighbour for labels.
//!
//! Sample `i` of an output axis with `m` samples maps to the continuous
//! input coordinate `i * (n - 1) / (m - 1)` (corners aligned); a single
//! output sample maps to 0. Lookups outside the input clamp to the edge.

use crate::error::{Error, Result};
use crate::volume::{Dims, Grid, LabelVolume, ScalarVolume};

/// Factor used to enlarge paediatric scans before inference.
pub const DA_SCALE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResampleTarget {
    /// Uniform scale on all axes: dims multiplied, spacing divided.
    Scale(f64),
    /// Fixed output spacing in mm.
    Spacing([f64; 3]),
}

fn output_grid(grid: &Grid, target: ResampleTarget) -> Result<Grid> {
    let dims = grid.dims();
    let spacing = grid.spacing();
    let (factors, out_spacing) = match target {
        ResampleTarget::Scale(f) => {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::Parameter(format!(
                    "scale factor must be finite and positive, got {f}"
                )));
            }
            ([f; 3], spacing.map(|s| s / f))
        }
        ResampleTarget::Spacing(target) => {
            if target.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::Parameter(format!(
                    "target spacing must be finite and positive, got {target:?}"
                )));
            }
            ([0, 1, 2].map(|a| spacing[a] / target[a]), target)
        }
    };
    let out_dims = [0, 1, 2].map(|a| ((dims[a] as f64 * factors[a]).round() as usize).max(1));
    Grid::with_origin(out_dims, out_spacing, grid.origin())
}

/// Continuous input coordinate for each output sample along one axis.
fn axis_coords(n_in: usize, n_out: usize) -> Vec<f64> {
    if n_out == 1 {
        return vec![0.0];
    }
    let step = (n_in - 1) as f64 / (n_out - 1) as f64;
    (0..n_out).map(|i| i as f64 * step).collect()
}

struct Tap {
    lo: usize,
    hi: usize,
    w: f64,
}

fn linear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    axis_coords(n_in, n_out)
        .into_iter()
        .map(|c| {
            let c = c.clamp(0.0, (n_in - 1) as f64);
            let lo = (c.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                w: c - lo as f64,
            }
        })
        .collect()
}

/// Nearest input index per output sample; exact halves go to the lower index.
fn nearest_taps(n_in: usize, n_out: usize) -> Vec<usize> {
    axis_coords(n_in, n_out)
        .into_iter()
        .map(|c| {
            let base = c.floor();
            let i = if c - base > 0.5 { base + 1.0 } else { base };
            (i.max(0.0) as usize).min(n_in - 1)
        })
        .collect()
}

fn trilinear(v: &ScalarVolume, out_grid: Grid) -> Result<ScalarVolume> {
    let [nx, ny, nz] = v.dims();
    let [mx, my, mz] = out_grid.dims();
    let (tx, ty, tz) = (
        linear_taps(nx, mx),
        linear_taps(ny, my),
        linear_taps(nz, mz),
    );
    let data = v.data();
    let g = v.grid();
    let mut out = Vec::with_capacity(out_grid.len());
    for c in &tz {
        for b in &ty {
            for a in &tx {
                let mut acc = 0.0f64;
                let mut lo = f32::INFINITY;
                let mut hi = f32::NEG_INFINITY;
                for (z, wz) in [(c.lo, 1.0 - c.w), (c.hi, c.w)] {
                    for (y, wy) in [(b.lo, 1.0 - b.w), (b.hi, b.w)] {
                        for (x, wx) in [(a.lo, 1.0 - a.w), (a.hi, a.w)] {
                            let s = data[g.index(x, y, z)];
                            lo = lo.min(s);
                            hi = hi.max(s);
                            acc += wx * wy * wz * s as f64;
                        }
                    }
                }
                out.push((acc as f32).clamp(lo, hi));
            }
        }
    }
    ScalarVolume::new(out_grid, out)
}

fn nearest(v: &LabelVolume, out_grid: Grid) -> Result<LabelVolume> {
    let [nx, ny, nz] = v.dims();
    let [mx, my, mz] = out_grid.dims();
    let (tx, ty, tz) = (
        nearest_taps(nx, mx),
        nearest_taps(ny, my),
        nearest_taps(nz, mz),
    );
    let mut out = Vec::with_capacity(out_grid.len());
    for &z in &tz {
        for &y in &ty {
            for &x in &tx {
                out.push(v.get(x, y, z));
            }
        }
    }
    LabelVolume::new(out_grid, out, v.num_classes())
}

pub fn resample_scalar(v: &ScalarVolume, target: ResampleTarget) -> Result<ScalarVolume> {
    trilinear(v, output_grid(v.grid(), target)?)
}

pub fn resample_label(v: &LabelVolume, target: ResampleTarget) -> Result<LabelVolume> {
    nearest(v, output_grid(v.grid(), target)?)
}

/// Nearest-neighbour resampling onto an explicit grid (corner-aligned).
pub fn resample_label_to(v: &LabelVolume, grid: Grid) -> Result<LabelVolume> {
    nearest(v, grid)
}

/// Trilinear resampling onto an explicit grid (corner-aligned).
pub fn resample_scalar_to(v: &ScalarVolume, grid: Grid) -> Result<ScalarVolume> {
    trilinear(v, grid)
}

/// Output dims a scale factor would produce, without resampling.
pub fn scaled_dims(dims: Dims, factor: f64) -> Dims {
    dims.map(|n| ((n as f64 * factor).round() as usize).max(1))
}

/// Upscale-then-predict: enlarges `image` by `factor`, segments it with
/// `predict`, and brings the labels back to the input grid by
/// nearest-neighbour so they compare directly with reference labels.
pub fn da_upscale_pipeline<F>(image: &ScalarVolume, predict: F, factor: f64) -> Result<LabelVolume>
where
    F: Fn(&ScalarVolume) -> Result<LabelVolume>,
{
    let enlarged = resample_scalar(image, ResampleTarget::Scale(factor))?;
    let labels = predict(&enlarged)?;
    if labels.dims() != enlarged.dims() {
        return Err(Error::Comparison(format!(
            "segmenter returned dims {:?} for input {:?}",
            labels.dims(),
            enlarged.dims()
        )));
    }
    resample_label_to(&labels, *image.grid())
}

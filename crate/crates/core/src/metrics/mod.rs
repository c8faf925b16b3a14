//! Per-class overlap (DSC) and boundary agreement (NSD) between a predicted
//! and a reference segmentation.
//!
//! Both metrics are undefined when both masks are empty; such results are
//! reported with `defined = false` and left out of any averages. The NSD
//! surface of a mask is the set of foreground voxels with at least one
//! face-adjacent background voxel (outside the volume counts as
//! background); distances are between voxel centres.

pub mod edt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::NUM_CLASSES;
use crate::volume::{Grid, LabelVolume};

pub use edt::squared_edt;

/// Default NSD tolerance in millimetres.
pub const DEFAULT_TAU_MM: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    bits: Vec<bool>,
    count: usize,
}

impl BinaryMask {
    pub fn new(grid: Grid, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "mask has {} voxels, grid {:?} needs {}",
                bits.len(),
                grid.dims(),
                grid.len()
            )));
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(BinaryMask { grid, bits, count })
    }

    /// Indicator of `class` in a label volume.
    pub fn from_labels(labels: &LabelVolume, class: u16) -> Self {
        let bits: Vec<bool> = labels.labels().iter().map(|&l| l == class).collect();
        let count = bits.iter().filter(|&&b| b).count();
        BinaryMask {
            grid: *labels.grid(),
            bits,
            count,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsdConfig {
    tau_mm: f64,
}

impl NsdConfig {
    pub fn new(tau_mm: f64) -> Result<Self> {
        if !(tau_mm.is_finite() && tau_mm > 0.0) {
            return Err(Error::Parameter(format!(
                "NSD tolerance must be finite and positive, got {tau_mm}"
            )));
        }
        Ok(NsdConfig { tau_mm })
    }

    pub fn tau(&self) -> f64 {
        self.tau_mm
    }
}

impl Default for NsdConfig {
    fn default() -> Self {
        NsdConfig {
            tau_mm: DEFAULT_TAU_MM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub case_id: String,
    pub class_id: u16,
    pub dsc: Option<f64>,
    pub nsd: Option<f64>,
    pub gt_voxels: usize,
    pub pred_voxels: usize,
}

impl MetricResult {
    pub fn is_defined(&self) -> bool {
        self.dsc.is_some()
    }
}

fn check_shapes(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.grid.dims() != b.grid.dims() {
        return Err(Error::Comparison(format!(
            "mask dims differ: {:?} vs {:?}",
            a.grid.dims(),
            b.grid.dims()
        )));
    }
    Ok(())
}

/// Sørensen–Dice coefficient; `None` when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    check_shapes(a, b)?;
    let total = a.count + b.count;
    if total == 0 {
        return Ok(None);
    }
    let both = a.bits.iter().zip(&b.bits).filter(|(&x, &y)| x && y).count();
    Ok(Some(2.0 * both as f64 / total as f64))
}

fn surface_bits(mask: &BinaryMask) -> Vec<bool> {
    let [nx, ny, nz] = mask.grid.dims();
    let bits = &mask.bits;
    let mut out = vec![false; bits.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = mask.grid.index(x, y, z);
                if !bits[i] {
                    continue;
                }
                let border =
                    x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
                out[i] = border
                    || !bits[i - 1]
                    || !bits[i + 1]
                    || !bits[i - nx]
                    || !bits[i + nx]
                    || !bits[i - nx * ny]
                    || !bits[i + nx * ny];
            }
        }
    }
    out
}

/// Foreground voxels with a 6-neighbour outside the mask, in index order.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    surface_bits(mask)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| mask.grid.coords(i))
        .collect()
}

/// Inclusive bounding box of set bits, or `None` when there are none.
fn bounding_box(bits: &[bool], grid: &Grid) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        let c = grid.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
        any = true;
    }
    any.then_some((lo, hi))
}

fn crop(bits: &[bool], grid: &Grid, lo: [usize; 3], dims: [usize; 3]) -> Vec<bool> {
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let start = grid.index(lo[0], lo[1] + y, lo[2] + z);
            out.extend_from_slice(&bits[start..start + dims[0]]);
        }
    }
    out
}

/// Surface Dice at tolerance `tau`: the fraction of both surfaces lying
/// within `tau` mm of the other surface. `None` when both masks are empty,
/// zero when exactly one is.
pub fn nsd(a: &BinaryMask, b: &BinaryMask, cfg: &NsdConfig) -> Result<Option<f64>> {
    check_shapes(a, b)?;
    if a.grid.spacing() != b.grid.spacing() {
        return Err(Error::Comparison(format!(
            "mask spacings differ: {:?} vs {:?}",
            a.grid.spacing(),
            b.grid.spacing()
        )));
    }
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(None),
        (true, false) | (false, true) => return Ok(Some(0.0)),
        _ => {}
    }
    let sa = surface_bits(a);
    let sb = surface_bits(b);
    let union: Vec<bool> = sa.iter().zip(&sb).map(|(&x, &y)| x || y).collect();
    let (lo, hi) = bounding_box(&union, &a.grid).expect("nonempty masks have surfaces");
    // Every surface voxel lies inside the box, so the EDT restricted to it is exact.
    let dims = [0, 1, 2].map(|k| hi[k] - lo[k] + 1);
    let sa = crop(&sa, &a.grid, lo, dims);
    let sb = crop(&sb, &a.grid, lo, dims);
    let spacing = a.grid.spacing();
    let to_b = edt::squared_edt_raw(&sb, dims, spacing);
    let to_a = edt::squared_edt_raw(&sa, dims, spacing);

    let tau2 = cfg.tau() * cfg.tau();
    let mut within = 0usize;
    let mut total = 0usize;
    for i in 0..sa.len() {
        if sa[i] {
            total += 1;
            within += (to_b[i] <= tau2) as usize;
        }
        if sb[i] {
            total += 1;
            within += (to_a[i] <= tau2) as usize;
        }
    }
    Ok(Some(within as f64 / total as f64))
}

/// Per-class DSC and NSD for one case, classes `1..=19`.
pub fn evaluate_case(
    case_id: &str,
    pred: &LabelVolume,
    gt: &LabelVolume,
    cfg: &NsdConfig,
) -> Result<Vec<MetricResult>> {
    if !pred.grid().is_aligned_with(gt.grid()) {
        return Err(Error::Comparison(format!(
            "case {case_id}: prediction grid {:?} @ {:?} mm does not match reference {:?} @ {:?} mm",
            pred.dims(),
            pred.spacing(),
            gt.dims(),
            gt.spacing()
        )));
    }
    for (what, v) in [("prediction", pred), ("reference", gt)] {
        if v.num_classes() != NUM_CLASSES {
            return Err(Error::Comparison(format!(
                "case {case_id}: {what} has {} classes, expected {NUM_CLASSES}",
                v.num_classes()
            )));
        }
    }
    let gt_hist = gt.histogram();
    let pred_hist = pred.histogram();
    (1..=NUM_CLASSES)
        .map(|class| {
            let c = class as usize;
            let (dsc, nsd_value) = if gt_hist[c] == 0 && pred_hist[c] == 0 {
                (None, None)
            } else {
                let p = BinaryMask::from_labels(pred, class);
                let g = BinaryMask::from_labels(gt, class);
                (dice(&p, &g)?, nsd(&p, &g, cfg)?)
            };
            Ok(MetricResult {
                case_id: case_id.to_string(),
                class_id: class,
                dsc,
                nsd: nsd_value,
                gt_voxels: gt_hist[c],
                pred_voxels: pred_hist[c],
            })
        })
        .collect()
}

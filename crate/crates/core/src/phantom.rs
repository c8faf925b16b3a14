//! Synthetic age-scaled body phantoms with labelled organs.
//!
//! A phantom is an axis-aligned ellipsoidal body centred in the volume,
//! containing up to 19 ellipsoidal organs placed at fixed body-relative
//! positions. Body and organs shrink linearly with age-dependent scale
//! `s(age)`, from 0.45 at birth to 1.0 from age 17. Each case jitters the
//! organ centres slightly; the image is the per-region mean intensity plus
//! Gaussian noise, and the labels are the exact generating geometry.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cohort::{
    derive_seed, domain_for_age, rng_for, AgeBin, CaseRecord, Domain, Manifest, ADULT_AGE,
};
use crate::error::{Error, Result};
use crate::io;
use crate::labelmap::NUM_CLASSES;
use crate::volume::{Dims, Grid, LabelVolume, ScalarVolume};

pub const MIN_BODY_SCALE: f64 = 0.45;
pub const AIR_HU: f32 = -1000.0;
pub const TISSUE_HU: f32 = -20.0;

/// Body semi-axes as fractions of the volume extent, at scale 1.
pub const BODY_SEMI_AXES: [f64; 3] = [0.40, 0.32, 0.44];

const MAX_JITTER_RETRIES: u64 = 32;
const JITTER_STREAM: u64 = 0x4A49_5454;
const NOISE_STREAM: u64 = 0x4E4F_4953;
const AGE_STREAM: u64 = 0x4147_4553;
const CASE_STREAM: u64 = 0x4341_5345;

/// Linear body scale: 0.45 at age 0 rising to 1.0 at 17 and above.
pub fn body_scale(age_years: f64) -> f64 {
    let t = (age_years / ADULT_AGE).clamp(0.0, 1.0);
    MIN_BODY_SCALE + (1.0 - MIN_BODY_SCALE) * t
}

/// One organ in body-relative coordinates (the body is the unit ball).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrganTemplate {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub intensity: f32,
}

const SPOKE_RADII: [f64; 3] = [0.17, 0.17, 0.5];

const fn organ(center: [f64; 3], radii: [f64; 3], intensity: f32) -> OrganTemplate {
    OrganTemplate {
        center,
        radii,
        intensity,
    }
}

/// Default organ layout; phantoms with `K` organs use the first `K`.
///
/// Organs 1-8 sit in pairs on four in-plane spokes (+x, -x, +y, -y): an
/// inner organ at 0.3 and an outer one at 0.7 of the body radius, elongated
/// along z. The two organs of a pair differ by 55 HU, so telling them apart
/// takes either their radial position (which moves with body size) or their
/// intensity (which does not). Organs 9-19 fill the remaining space.
pub const DEFAULT_LAYOUT: [OrganTemplate; 19] = [
    organ([0.3, 0.0, 0.0], SPOKE_RADII, 155.0),
    organ([0.7, 0.0, 0.0], SPOKE_RADII, 100.0),
    organ([-0.3, 0.0, 0.0], SPOKE_RADII, 170.0),
    organ([-0.7, 0.0, 0.0], SPOKE_RADII, 115.0),
    organ([0.0, 0.3, 0.0], SPOKE_RADII, 185.0),
    organ([0.0, 0.7, 0.0], SPOKE_RADII, 130.0),
    organ([0.0, -0.3, 0.0], SPOKE_RADII, 200.0),
    organ([0.0, -0.7, 0.0], SPOKE_RADII, 145.0),
    organ([0.0, 0.0, 0.72], [0.12; 3], 210.0),
    organ([0.0, 0.0, -0.72], [0.12; 3], 220.0),
    organ([0.5, 0.5, 0.0], [0.12; 3], 230.0),
    organ([-0.5, 0.5, 0.0], [0.12; 3], 240.0),
    organ([0.5, -0.5, 0.0], [0.12; 3], 250.0),
    organ([-0.5, -0.5, 0.0], [0.12; 3], 260.0),
    organ([0.35, 0.35, 0.65], [0.1; 3], 270.0),
    organ([-0.35, 0.35, 0.65], [0.1; 3], 280.0),
    organ([0.35, -0.35, 0.65], [0.1; 3], 290.0),
    organ([-0.35, -0.35, 0.65], [0.1; 3], 85.0),
    organ([0.35, 0.35, -0.65], [0.1; 3], 70.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub case_id: String,
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub num_organs: usize,
    pub age_years: f64,
    pub noise_sigma: f64,
    /// Maximum organ centre displacement per axis, body-relative.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            case_id: "phantom".to_string(),
            dims: [48, 48, 48],
            spacing: [2.0, 2.0, 2.0],
            num_organs: 8,
            age_years: 30.0,
            noise_sigma: 10.0,
            jitter: 0.04,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn body_scale(&self) -> f64 {
        body_scale(self.age_years)
    }

    fn validate(&self) -> Result<()> {
        if self.num_organs == 0 || self.num_organs > NUM_CLASSES as usize {
            return Err(Error::Parameter(format!(
                "num_organs must lie in [1, {NUM_CLASSES}], got {}",
                self.num_organs
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Parameter(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::Parameter(format!("bad jitter {}", self.jitter)));
        }
        if self.dims.iter().any(|&d| d < 4) {
            return Err(Error::Parameter(format!("dims {:?} too small", self.dims)));
        }
        crate::cohort::assign_age_bin(self.age_years)?;
        Ok(())
    }
}

/// Body-relative coordinate of each voxel centre along one axis.
fn axis_positions(n: usize, semi_axis_fraction: f64, scale: f64) -> Vec<f64> {
    let half = semi_axis_fraction * scale * n as f64;
    (0..n)
        .map(|i| (i as f64 + 0.5 - n as f64 / 2.0) / half)
        .collect()
}

/// Rasterises body and organs; `None` if organs overlap or leave the body.
fn rasterise(dims: Dims, scale: f64, organs: &[OrganTemplate]) -> Option<Vec<u16>> {
    let pos: Vec<Vec<f64>> = (0..3)
        .map(|a| axis_positions(dims[a], BODY_SEMI_AXES[a], scale))
        .collect();
    let mut labels = Vec::with_capacity(dims.iter().product());
    for &bz in &pos[2] {
        for &by in &pos[1] {
            for &bx in &pos[0] {
                let in_body = bx * bx + by * by + bz * bz <= 1.0;
                let mut label = 0u16;
                for (k, o) in organs.iter().enumerate() {
                    let d = [
                        (bx - o.center[0]) / o.radii[0],
                        (by - o.center[1]) / o.radii[1],
                        (bz - o.center[2]) / o.radii[2],
                    ];
                    if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= 1.0 {
                        if label != 0 || !in_body {
                            return None;
                        }
                        label = k as u16 + 1;
                    }
                }
                // Air outside the body is stored as u16::MAX until intensities are assigned.
                labels.push(if in_body { label } else { u16::MAX });
            }
        }
    }
    Some(labels)
}

/// Generates one phantom. Identical specs give bitwise-identical output.
pub fn generate_case(spec: &PhantomSpec) -> Result<(ScalarVolume, LabelVolume, CaseRecord)> {
    spec.validate()?;
    let scale = spec.body_scale();
    let template = &DEFAULT_LAYOUT[..spec.num_organs];

    let mut regions = None;
    for attempt in 0..MAX_JITTER_RETRIES {
        let mut rng = rng_for(spec.seed, JITTER_STREAM, attempt);
        let organs: Vec<OrganTemplate> = template
            .iter()
            .map(|o| {
                let mut o = *o;
                for c in &mut o.center {
                    *c += rng.random_range(-1.0..=1.0) * spec.jitter;
                }
                o
            })
            .collect();
        if let Some(r) = rasterise(spec.dims, scale, &organs) {
            regions = Some(r);
            break;
        }
    }
    let regions = regions.ok_or_else(|| {
        Error::Generation(format!(
            "case {}: organs overlap or leave the body after {MAX_JITTER_RETRIES} jitter draws",
            spec.case_id
        ))
    })?;

    let grid = Grid::new(spec.dims, spec.spacing)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, NOISE_STREAM, 0));
    let normal = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Parameter(format!("noise sigma: {e}")))?;
    let data: Vec<f32> = regions
        .iter()
        .map(|&r| {
            let mean = match r {
                u16::MAX => AIR_HU,
                0 => TISSUE_HU,
                k => template[k as usize - 1].intensity,
            };
            if spec.noise_sigma > 0.0 {
                (mean as f64 + normal.sample(&mut noise_rng)) as f32
            } else {
                mean
            }
        })
        .collect();
    let labels: Vec<u16> = regions
        .into_iter()
        .map(|r| if r == u16::MAX { 0 } else { r })
        .collect();

    let record = CaseRecord {
        case_id: spec.case_id.clone(),
        age_years: spec.age_years,
        domain: domain_for_age(spec.age_years),
        image: format!("images/{}.nii.gz", spec.case_id),
        label: format!("labels/{}.nii.gz", spec.case_id),
        split: None,
    };
    Ok((
        ScalarVolume::new(grid, data)?,
        LabelVolume::new(grid, labels, NUM_CLASSES)?,
        record,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_adult: usize,
    pub n_pediatric: usize,
    /// Relative share of paediatric cases per bin 0-3 .. 13-16.
    pub pediatric_bin_weights: [f64; 5],
    /// Adult ages are drawn uniformly from `[17, adult_max_age)`.
    pub adult_max_age: f64,
    /// Template for every case; age, id and seed are overwritten.
    pub phantom: PhantomSpec,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_adult: 40,
            n_pediatric: 60,
            pediatric_bin_weights: [2.0, 1.5, 1.0, 1.0, 1.0],
            adult_max_age: 80.0,
            phantom: PhantomSpec::default(),
            seed: 0,
        }
    }
}

fn floor_tenth(x: f64) -> f64 {
    (x * 10.0).floor() / 10.0
}

/// Case ids and ages for a cohort, before any volume is generated.
pub fn draw_ages(spec: &CohortSpec) -> Result<Vec<(String, f64)>> {
    if spec.n_adult == 0 || spec.n_pediatric == 0 {
        return Err(Error::Parameter(
            "cohort needs at least one adult and one paediatric case".into(),
        ));
    }
    let w = spec.pediatric_bin_weights;
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Parameter(format!(
            "bad paediatric bin weights {w:?}"
        )));
    }
    if !(spec.adult_max_age.is_finite() && spec.adult_max_age > ADULT_AGE) {
        return Err(Error::Parameter(format!(
            "adult_max_age must exceed {ADULT_AGE}"
        )));
    }
    let total: f64 = w.iter().sum();
    let quotas: Vec<f64> = w
        .iter()
        .map(|x| x / total * spec.n_pediatric as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .partial_cmp(&(quotas[a] - quotas[a].floor()))
            .unwrap()
    });
    let mut left = spec.n_pediatric - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if w[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }

    let mut rng = rng_for(spec.seed, AGE_STREAM, 0);
    let mut out = Vec::with_capacity(spec.n_adult + spec.n_pediatric);
    let mut n = 0;
    for (bin, &count) in AgeBin::PEDIATRIC.iter().zip(&counts) {
        let (lo, hi) = bin.years();
        let (lo, hi) = (lo as f64, hi.unwrap() as f64 + 1.0);
        for _ in 0..count {
            let age = floor_tenth(rng.random_range(lo..hi));
            out.push((format!("P{n:03}"), age));
            n += 1;
        }
    }
    for i in 0..spec.n_adult {
        let age = floor_tenth(rng.random_range(ADULT_AGE..spec.adult_max_age));
        out.push((format!("A{i:03}"), age));
    }
    Ok(out)
}

fn case_spec(spec: &CohortSpec, index: usize, case_id: &str, age: f64) -> PhantomSpec {
    PhantomSpec {
        case_id: case_id.to_string(),
        age_years: age,
        seed: derive_seed(spec.seed, CASE_STREAM, index as u64),
        ..spec.phantom.clone()
    }
}

/// Generates a cohort in memory, in manifest order.
pub fn generate_cohort_volumes(
    spec: &CohortSpec,
) -> Result<Vec<(ScalarVolume, LabelVolume, CaseRecord)>> {
    let ages = draw_ages(spec)?;
    ages.par_iter()
        .enumerate()
        .map(|(i, (id, age))| generate_case(&case_spec(spec, i, id, *age)))
        .collect()
}

/// Generates a cohort and writes `images/`, `labels/` and `manifest.json`
/// under `out_dir`. Cases are not split.
pub fn generate_cohort(spec: &CohortSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    for sub in ["images", "labels"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let ages = draw_ages(spec)?;
    let records: Vec<CaseRecord> = ages
        .par_iter()
        .enumerate()
        .map(|(i, (id, age))| {
            let (image, labels, record) = generate_case(&case_spec(spec, i, id, *age))?;
            io::write_scalar(&image, out_dir.join(&record.image))?;
            io::write_label(&labels, out_dir.join(&record.label))?;
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::new(records)?;
    manifest.save(out_dir.join("manifest.json"))?;
    manifest.base_dir = Some(out_dir.to_path_buf());
    debug_assert!(manifest
        .cases
        .iter()
        .all(|c| (c.domain == Domain::Adult) == (c.age_years >= ADULT_AGE)));
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_endpoints() {
        assert_eq!(body_scale(0.0), 0.45);
        assert_eq!(body_scale(17.0), 1.0);
        assert_eq!(body_scale(60.0), 1.0);
        assert!((body_scale(8.5) - 0.725).abs() < 1e-12);
    }

    #[test]
    fn default_layout_is_disjoint_and_inside() {
        for scale in [MIN_BODY_SCALE, 1.0] {
            let labels = rasterise([96, 96, 96], scale, &DEFAULT_LAYOUT).expect("layout overlaps");
            let mut seen = [false; 20];
            for &l in &labels {
                if l != u16::MAX {
                    seen[l as usize] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "scale {scale}");
        }
        let mut intensities: Vec<i32> = DEFAULT_LAYOUT.iter().map(|o| o.intensity as i32).collect();
        intensities.sort();
        intensities.dedup();
        assert_eq!(intensities.len(), 19);
    }

    #[test]
    fn deterministic() {
        let spec = PhantomSpec {
            seed: 11,
            ..PhantomSpec::default()
        };
        let a = generate_case(&spec).unwrap();
        let b = generate_case(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_free_is_piecewise_constant() {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            dims: [24, 24, 24],
            ..PhantomSpec::default()
        };
        let (image, labels, _) = generate_case(&spec).unwrap();
        for (&v, &l) in image.data().iter().zip(labels.labels()) {
            let ok = match l {
                0 => v == AIR_HU || v == TISSUE_HU,
                k => v == DEFAULT_LAYOUT[k as usize - 1].intensity,
            };
            assert!(ok, "label {l} has intensity {v}");
        }
    }

    #[test]
    fn all_organs_fit() {
        for age in [0.0, 6.0, 30.0] {
            let spec = PhantomSpec {
                num_organs: 19,
                age_years: age,
                seed: 5,
                ..PhantomSpec::default()
            };
            let (_, labels, _) = generate_case(&spec).unwrap();
            let h = labels.histogram();
            assert!((1..=19).all(|k| h[k] > 0), "age {age}: {h:?}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            PhantomSpec {
                num_organs: 0,
                ..PhantomSpec::default()
            },
            PhantomSpec {
                num_organs: 20,
                ..PhantomSpec::default()
            },
            PhantomSpec {
                noise_sigma: -1.0,
                ..PhantomSpec::default()
            },
            PhantomSpec {
                age_years: -2.0,
                ..PhantomSpec::default()
            },
        ] {
            assert!(generate_case(&spec).is_err());
        }
    }

    #[test]
    fn excessive_jitter_fails() {
        let spec = PhantomSpec {
            num_organs: 19,
            jitter: 0.6,
            ..PhantomSpec::default()
        };
        assert!(matches!(generate_case(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn ages_respect_domains() {
        let spec = CohortSpec {
            n_adult: 30,
            n_pediatric: 47,
            seed: 3,
            ..CohortSpec::default()
        };
        let ages = draw_ages(&spec).unwrap();
        assert_eq!(ages.len(), 77);
        for (id, age) in &ages {
            if id.starts_with('A') {
                assert!(*age >= 17.0);
            } else {
                assert!(*age < 17.0);
            }
        }
        assert_eq!(ages, draw_ages(&spec).unwrap());
    }
}

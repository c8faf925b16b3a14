//! Voxel-wise multinomial logistic segmenter trained with mini-batch SGD.
//!
//! Each voxel is described by seven features: a bias, its windowed
//! intensity, the windowed 3x3x3 box-mean intensity, its position along
//! each axis and its distance from the volume centre. Position features are
//! measured in voxels from the volume centre relative to a reference grid
//! (by default the volume's own), so they span `[0, 1]` on that grid and
//! clamp outside it. A model therefore sees an enlarged scan as a larger
//! body.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{rng_for, Manifest, TrainingPlan};
use crate::error::{Error, Result};
use crate::io;
use crate::labelmap::NUM_CLASSES;
use crate::volume::{Dims, LabelVolume, ScalarVolume};

pub const NUM_FEATURES: usize = 7;
pub type Features = [f64; NUM_FEATURES];

const MODEL_FORMAT: &str = "pedseg-linear-segmenter";
const MODEL_VERSION: u32 = 1;
const SAMPLE_STREAM: u64 = 0x5341_4d50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Intensity window `[lo, hi]` mapped affinely onto `[0, 1]` (clamped).
    pub window: [f64; 2],
    /// Grid that position features are normalised against.
    pub reference_dims: Option<Dims>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: [-100.0, 300.0],
            reference_dims: None,
        }
    }
}

impl FeatureConfig {
    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.window;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Parameter(format!(
                "bad intensity window {:?}",
                self.window
            )));
        }
        if self.reference_dims.is_some_and(|d| d.contains(&0)) {
            return Err(Error::Parameter("reference dims must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    fn normalize(&self, v: f64) -> f64 {
        let [lo, hi] = self.window;
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Per-axis position features for every index of an axis of length `n`.
fn axis_features(n: usize, reference: usize) -> Vec<f64> {
    if reference <= 1 {
        return vec![0.5; n];
    }
    let centre = (n as f64 - 1.0) / 2.0;
    (0..n)
        .map(|i| ((i as f64 - centre) / (reference as f64 - 1.0) + 0.5).clamp(0.0, 1.0))
        .collect()
}

struct FeatureFrame<'a> {
    image: &'a ScalarVolume,
    cfg: &'a FeatureConfig,
    axes: [Vec<f64>; 3],
}

impl<'a> FeatureFrame<'a> {
    fn new(image: &'a ScalarVolume, cfg: &'a FeatureConfig) -> Self {
        let dims = image.dims();
        let reference = cfg.reference_dims.unwrap_or(dims);
        let axes = [0, 1, 2].map(|a| axis_features(dims[a], reference[a]));
        FeatureFrame { image, cfg, axes }
    }

    fn at(&self, x: usize, y: usize, z: usize) -> Features {
        let [nx, ny, nz] = self.image.dims();
        let mut sum = 0.0f64;
        let mut count = 0u32;
        for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
            for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                    sum += self.image.get(xx, yy, zz) as f64;
                    count += 1;
                }
            }
        }
        let (px, py, pz) = (self.axes[0][x], self.axes[1][y], self.axes[2][z]);
        let r2 = (px - 0.5).powi(2) + (py - 0.5).powi(2) + (pz - 0.5).powi(2);
        // Half-diagonal of the unit cube.
        let r = (r2 / 0.75).sqrt().min(1.0);
        [
            1.0,
            self.cfg.normalize(self.image.get(x, y, z) as f64),
            self.cfg.normalize(sum / count as f64),
            px,
            py,
            pz,
            r,
        ]
    }
}

/// Feature vectors for every voxel, in volume index order.
pub fn extract_features(image: &ScalarVolume, cfg: &FeatureConfig) -> Vec<Features> {
    let frame = FeatureFrame::new(image, cfg);
    let [nx, ny, nz] = image.dims();
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(frame.at(x, y, z));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    format: String,
    version: u32,
    /// Foreground classes; the model scores `num_classes + 1` labels.
    pub num_classes: u16,
    pub num_features: usize,
    pub features: FeatureConfig,
    /// Row-major `(num_classes + 1) x num_features`.
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(num_classes: u16, features: FeatureConfig) -> Self {
        ModelParams {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            num_classes,
            num_features: NUM_FEATURES,
            features,
            weights: vec![0.0; (num_classes as usize + 1) * NUM_FEATURES],
        }
    }

    pub fn rows(&self) -> usize {
        self.num_classes as usize + 1
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * NUM_FEATURES..(class + 1) * NUM_FEATURES]
    }

    fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        if self.num_features != NUM_FEATURES || self.weights.len() != self.rows() * NUM_FEATURES {
            return Err(Error::Format(format!(
                "model shape mismatch: {} classes, {} features, {} weights",
                self.num_classes,
                self.num_features,
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("model has non-finite weights".into()));
        }
        self.features.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ModelParams = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn scores(&self, phi: &Features, out: &mut [f64]) {
        for (c, s) in out.iter_mut().enumerate() {
            *s = self.row(c).iter().zip(phi).map(|(w, f)| w * f).sum();
        }
    }
}

/// Softmax of `scores` in place, via log-sum-exp. Returns log-sum-exp.
fn softmax_in_place(scores: &mut [f64]) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    max + total.ln()
}

/// Class probabilities for one feature vector.
pub fn softmax(params: &ModelParams, phi: &Features) -> Vec<f64> {
    let mut s = vec![0.0; params.rows()];
    params.scores(phi, &mut s);
    softmax_in_place(&mut s);
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub label: u16,
    pub weight: f64,
}

impl Sample {
    pub fn new(features: Features, label: u16) -> Self {
        Sample {
            features,
            label,
            weight: 1.0,
        }
    }
}

/// Weighted mean softmax cross-entropy over `batch` and its gradient with
/// respect to the weights (same layout as `params.weights`).
pub fn loss_and_grad(params: &ModelParams, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    let rows = params.rows();
    let mut grad = vec![0.0; params.weights.len()];
    let mut scores = vec![0.0; rows];
    let mut loss = 0.0;
    let mut total_weight = 0.0;
    for s in batch {
        if s.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Data(format!("non-finite feature {:?}", s.features)));
        }
        if s.label as usize >= rows {
            return Err(Error::Data(format!(
                "label {} outside [0, {}]",
                s.label, params.num_classes
            )));
        }
        if !(s.weight.is_finite() && s.weight >= 0.0) {
            return Err(Error::Data(format!("bad sample weight {}", s.weight)));
        }
        params.scores(&s.features, &mut scores);
        let target = scores[s.label as usize];
        let lse = softmax_in_place(&mut scores);
        loss += s.weight * (lse - target);
        total_weight += s.weight;
        scores[s.label as usize] -= 1.0;
        for (c, &p) in scores.iter().enumerate() {
            let g = &mut grad[c * NUM_FEATURES..(c + 1) * NUM_FEATURES];
            for (gi, fi) in g.iter_mut().zip(&s.features) {
                *gi += s.weight * p * fi;
            }
        }
    }
    if total_weight <= 0.0 {
        return Err(Error::Data("batch has no weight".into()));
    }
    for g in &mut grad {
        *g /= total_weight;
    }
    Ok((loss / total_weight, grad))
}

/// Step size over the SGD steps of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from the stage rate towards zero (last step at `rate / n`).
    Linear,
}

impl LrSchedule {
    fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => (total - step) as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning rate for every stage after the first; `None` keeps `learning_rate`.
    pub fine_tune_learning_rate: Option<f64>,
    pub schedule: LrSchedule,
    /// Voxels per SGD step.
    pub batch_size: usize,
    pub voxels_per_case: usize,
    /// Draw voxels class-uniformly instead of voxel-uniformly.
    pub class_balanced: bool,
    pub seed: u64,
    pub num_classes: u16,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 16.0,
            fine_tune_learning_rate: None,
            schedule: LrSchedule::Linear,
            batch_size: 64,
            voxels_per_case: 1024,
            class_balanced: true,
            seed: 0,
            num_classes: NUM_CLASSES,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        for lr in std::iter::once(self.learning_rate).chain(self.fine_tune_learning_rate) {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Parameter(format!(
                    "learning rate must be positive, got {lr}"
                )));
            }
        }
        if self.batch_size == 0 || self.voxels_per_case == 0 {
            return Err(Error::Parameter(
                "batch size and voxels per case must be positive".into(),
            ));
        }
        self.features.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub stage: usize,
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after each stage, in order.
    pub snapshots: Vec<ModelParams>,
    pub loss_trace: Vec<EpochLoss>,
}

impl TrainOutcome {
    pub fn final_params(&self) -> &ModelParams {
        self.snapshots
            .last()
            .expect("at least the initial snapshot")
    }
}

/// An image/label pair ready for voxel sampling.
pub struct TrainingCase {
    image: ScalarVolume,
    labels: LabelVolume,
    by_class: Vec<Vec<u32>>,
}

impl TrainingCase {
    pub fn new(image: ScalarVolume, labels: LabelVolume) -> Result<Self> {
        if !image.grid().is_aligned_with(labels.grid()) {
            return Err(Error::Comparison(format!(
                "image dims {:?} do not match label dims {:?}",
                image.dims(),
                labels.dims()
            )));
        }
        let mut by_class = vec![Vec::new(); labels.num_classes() as usize + 1];
        for (i, &l) in labels.labels().iter().enumerate() {
            by_class[l as usize].push(i as u32);
        }
        Ok(TrainingCase {
            image,
            labels,
            by_class,
        })
    }

    pub fn image(&self) -> &ScalarVolume {
        &self.image
    }

    pub fn labels(&self) -> &LabelVolume {
        &self.labels
    }
}

/// Source of training cases by id.
pub trait CaseSource {
    fn case(&mut self, case_id: &str) -> Result<&TrainingCase>;
}

/// Loads cases from the paths in a manifest, caching each on first use.
pub struct ManifestSource<'a> {
    manifest: &'a Manifest,
    cache: HashMap<String, TrainingCase>,
}

impl<'a> ManifestSource<'a> {
    pub fn new(manifest: &'a Manifest) -> Self {
        ManifestSource {
            manifest,
            cache: HashMap::new(),
        }
    }
}

impl CaseSource for ManifestSource<'_> {
    fn case(&mut self, case_id: &str) -> Result<&TrainingCase> {
        if !self.cache.contains_key(case_id) {
            let record = self
                .manifest
                .get(case_id)
                .ok_or_else(|| Error::Manifest(format!("unknown case {case_id}")))?;
            let named = |e: Error| match e {
                Error::Io { path, source } => Error::Io {
                    path: Path::new(&format!("{} (case {case_id})", path.display())).into(),
                    source,
                },
                other => other,
            };
            let image = io::read_scalar(self.manifest.image_path(record)).map_err(named)?;
            let labels = io::read_label(self.manifest.label_path(record)).map_err(named)?;
            self.cache
                .insert(case_id.to_string(), TrainingCase::new(image, labels)?);
        }
        Ok(&self.cache[case_id])
    }
}

/// In-memory cases keyed by id.
impl CaseSource for HashMap<String, TrainingCase> {
    fn case(&mut self, case_id: &str) -> Result<&TrainingCase> {
        self.get(case_id)
            .ok_or_else(|| Error::Manifest(format!("unknown case {case_id}")))
    }
}

fn draw_samples(
    case: &TrainingCase,
    cfg: &TrainConfig,
    frame_cfg: &FeatureConfig,
    stream_index: u64,
) -> Result<Vec<Sample>> {
    let mut rng = rng_for(cfg.seed, SAMPLE_STREAM, stream_index);
    let present: Vec<&Vec<u32>> = case.by_class.iter().filter(|v| !v.is_empty()).collect();
    let frame = FeatureFrame::new(&case.image, frame_cfg);
    let grid = case.image.grid();
    let n = grid.len();
    (0..cfg.voxels_per_case)
        .map(|_| {
            let index = if cfg.class_balanced {
                *present.choose(&mut rng).unwrap().choose(&mut rng).unwrap() as usize
            } else {
                rng.random_range(0..n)
            };
            let label = case.labels.labels()[index];
            if label > cfg.num_classes {
                return Err(Error::Data(format!(
                    "label {label} exceeds the model's {} classes",
                    cfg.num_classes
                )));
            }
            let [x, y, z] = grid.coords(index);
            Ok(Sample::new(frame.at(x, y, z), label))
        })
        .collect()
}

/// Runs `plan` from zero weights. Returns the parameters after every stage
/// and the mean training loss of every epoch. Fully deterministic given
/// the plan, the configuration and the case data.
pub fn train<S: CaseSource>(
    plan: &TrainingPlan,
    source: &mut S,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut features = cfg.features;
    if features.reference_dims.is_none() {
        let first = plan
            .stages
            .iter()
            .flat_map(|s| s.epoch_case_lists.iter().flatten())
            .next();
        if let Some(id) = first {
            features.reference_dims = Some(source.case(id)?.image.dims());
        }
    }
    let mut params = ModelParams::zeros(cfg.num_classes, features);
    let mut snapshots = Vec::with_capacity(plan.stages.len());
    let mut loss_trace = Vec::new();

    for (s, stage) in plan.stages.iter().enumerate() {
        let lr = match s {
            0 => cfg.learning_rate,
            _ => cfg.fine_tune_learning_rate.unwrap_or(cfg.learning_rate),
        };
        if stage.epochs != stage.epoch_case_lists.len() {
            return Err(Error::Parameter(format!(
                "plan {}: stage {} declares {} epochs but lists {}",
                plan.name,
                s + 1,
                stage.epochs,
                stage.epoch_case_lists.len()
            )));
        }
        let steps_per_case = cfg.voxels_per_case.div_ceil(cfg.batch_size);
        let total_steps =
            steps_per_case * stage.epoch_case_lists.iter().map(Vec::len).sum::<usize>();
        let mut step = 0;
        for (e, cases) in stage.epoch_case_lists.iter().enumerate() {
            let mut loss_sum = 0.0;
            let mut count = 0usize;
            for (k, id) in cases.iter().enumerate() {
                let case = source.case(id)?;
                let stream = ((s as u64) << 48) | ((e as u64) << 24) | k as u64;
                let samples = draw_samples(case, cfg, &features, stream)?;
                for batch in samples.chunks(cfg.batch_size) {
                    let (loss, grad) = loss_and_grad(&params, batch)?;
                    let rate = lr * cfg.schedule.factor(step, total_steps);
                    for (w, g) in params.weights.iter_mut().zip(&grad) {
                        *w -= rate * g;
                    }
                    step += 1;
                    loss_sum += loss * batch.len() as f64;
                    count += batch.len();
                }
            }
            loss_trace.push(EpochLoss {
                stage: s + 1,
                epoch: e + 1,
                mean_loss: if count > 0 {
                    loss_sum / count as f64
                } else {
                    f64::NAN
                },
            });
        }
        log::debug!("plan {}: stage {} done", plan.name, s + 1);
        snapshots.push(params.clone());
    }
    if snapshots.is_empty() {
        snapshots.push(params);
    }
    if snapshots
        .iter()
        .flat_map(|p| &p.weights)
        .any(|w| !w.is_finite())
    {
        return Err(Error::Data(format!(
            "training plan {} diverged (non-finite weights); lower the learning rate",
            plan.name
        )));
    }
    Ok(TrainOutcome {
        snapshots,
        loss_trace,
    })
}

/// Per-voxel argmax segmentation; ties go to the lower class index.
pub fn predict(params: &ModelParams, image: &ScalarVolume) -> Result<LabelVolume> {
    let frame = FeatureFrame::new(image, &params.features);
    let [nx, ny, nz] = image.dims();
    let rows = params.rows();
    let slices: Vec<Vec<u16>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut scores = vec![0.0; rows];
            let mut out = Vec::with_capacity(nx * ny);
            for y in 0..ny {
                for x in 0..nx {
                    params.scores(&frame.at(x, y, z), &mut scores);
                    let mut best = 0;
                    for c in 1..rows {
                        if scores[c] > scores[best] {
                            best = c;
                        }
                    }
                    out.push(best as u16);
                }
            }
            out
        })
        .collect();
    LabelVolume::new(*image.grid(), slices.concat(), params.num_classes)
}

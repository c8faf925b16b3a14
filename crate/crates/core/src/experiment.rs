//! End-to-end phantom experiment: cohort, split, every training plan,
//! evaluation on held-out cases, and the age-binned comparison table.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::cohort::{
    plan_baseline, plan_rehearsal, split_balanced, BaselineKind, Domain, Manifest, RehearsalMode,
    Split, TrainingPlan,
};
use crate::error::{Error, Result};
use crate::labelmap::ClassMapping;
use crate::metrics::{evaluate_case, MetricResult, NsdConfig};
use crate::phantom::{generate_cohort_volumes, CohortSpec};
use crate::report::{self, AggregateRow, Averaging, TableFormat};
use crate::resample::{da_upscale_pipeline, DA_SCALE_FACTOR};
use crate::trainer::{predict, train, ModelParams, TrainConfig, TrainingCase};
use crate::volume::{LabelVolume, ScalarVolume};

pub const DA_METHOD: &str = "DA";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub cohort: CohortSpec,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Epochs of the single-stage baselines and of rehearsal stage 1.
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub rehearsal_ps: Vec<f64>,
    pub rehearsal_mode: RehearsalMode,
    pub train: TrainConfig,
    pub tau_mm: f64,
    pub da_factor: f64,
    pub averaging: Averaging,
    pub seed: u64,
}

impl ExperimentConfig {
    /// 120 phantoms; finishes in well under a minute.
    pub fn quick(seed: u64) -> Self {
        let mut cohort = CohortSpec {
            n_adult: 60,
            n_pediatric: 60,
            seed,
            ..CohortSpec::default()
        };
        cohort.phantom.seed = seed;
        ExperimentConfig {
            cohort,
            split: [0.6, 0.1, 0.3],
            stage1_epochs: 80,
            stage2_epochs: 40,
            rehearsal_ps: vec![0.25, 0.6, 1.0],
            rehearsal_mode: RehearsalMode::PerEpoch,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            tau_mm: crate::metrics::DEFAULT_TAU_MM,
            da_factor: DA_SCALE_FACTOR,
            averaging: Averaging::Macro,
            seed,
        }
    }

    /// 300 phantoms with the same schedule.
    pub fn full(seed: u64) -> Self {
        let mut cfg = Self::quick(seed);
        cfg.cohort.n_adult = 150;
        cfg.cohort.n_pediatric = 150;
        cfg
    }
}

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub plans: Vec<TrainingPlan>,
    pub models: Vec<(String, ModelParams)>,
    /// Per-method metrics on the test split, in table order.
    pub metrics: Vec<(String, Vec<MetricResult>)>,
    pub rows: Vec<AggregateRow>,
}

impl ExperimentOutcome {
    pub fn row(&self, method: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn table(&self, format: TableFormat) -> Result<String> {
        report::render(&self.rows, format)
    }

    pub fn per_age_csv(&self) -> Result<String> {
        let mut out = String::from(report::PER_AGE_HEADER);
        out.push('\n');
        for (method, results) in &self.metrics {
            out.push_str(&report::per_age_rows(results, &self.manifest, method)?);
        }
        Ok(out)
    }

    /// Writes tables, per-age export, per-method metrics, plans, models and
    /// the split manifest under `out_dir`.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let classes = ClassMapping::default_taxonomy();
        for sub in ["metrics", "plans", "models"] {
            let d = out_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let write = |name: &Path, text: &str| {
            let path = out_dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write(Path::new("table.md"), &self.table(TableFormat::Markdown)?)?;
        write(Path::new("table.csv"), &self.table(TableFormat::Csv)?)?;
        write(Path::new("per_age.csv"), &self.per_age_csv()?)?;
        write(Path::new("manifest.json"), &self.manifest.to_json()?)?;
        for (method, results) in &self.metrics {
            let name = format!("metrics/{}.csv", file_stem(method));
            write(Path::new(&name), &report::metrics_csv(results, &classes))?;
        }
        for plan in &self.plans {
            let name = format!("plans/{}.json", file_stem(&plan.name));
            write(Path::new(&name), &plan.to_json()?)?;
        }
        for (method, params) in &self.models {
            params.save(out_dir.join(format!("models/{}.json", file_stem(method))))?;
        }
        Ok(())
    }
}

/// `CL(p=0.25)` becomes `CL_p0.25`.
pub fn file_stem(method: &str) -> String {
    method
        .chars()
        .filter_map(|c| match c {
            '(' => Some('_'),
            ')' | '=' => None,
            c if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' => Some(c),
            _ => Some('_'),
        })
        .collect()
}

struct Held {
    image: ScalarVolume,
    labels: LabelVolume,
}

fn evaluate_method<F>(
    test: &[(&str, &Held)],
    segment: F,
    nsd: &NsdConfig,
) -> Result<Vec<MetricResult>>
where
    F: Fn(&ScalarVolume) -> Result<LabelVolume> + Sync,
{
    let per_case: Vec<Vec<MetricResult>> = test
        .par_iter()
        .map(|(id, held)| evaluate_case(id, &segment(&held.image)?, &held.labels, nsd))
        .collect::<Result<_>>()?;
    Ok(per_case.into_iter().flatten().collect())
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let nsd = NsdConfig::new(cfg.tau_mm)?;
    log::info!(
        "generating {} adult and {} paediatric phantoms",
        cfg.cohort.n_adult,
        cfg.cohort.n_pediatric
    );
    let volumes = generate_cohort_volumes(&cfg.cohort)?;
    let mut records = Vec::with_capacity(volumes.len());
    let mut train_cases = HashMap::new();
    let mut held = HashMap::new();
    for (image, labels, record) in volumes {
        held.insert(record.case_id.clone(), Held { image, labels });
        records.push(record);
    }
    let manifest = split_balanced(&Manifest::new(records)?, cfg.split, cfg.seed)?;
    for case in &manifest.cases {
        if case.is_train() {
            let h = &held[&case.case_id];
            train_cases.insert(
                case.case_id.clone(),
                TrainingCase::new(h.image.clone(), h.labels.clone())?,
            );
        }
    }
    let test: Vec<(&str, &Held)> = manifest
        .with_split(Split::Test)
        .into_iter()
        .map(|c| (c.case_id.as_str(), &held[&c.case_id]))
        .collect();
    if test.is_empty() {
        return Err(Error::Parameter("the split leaves no test cases".into()));
    }

    let mut plans = Vec::new();
    for kind in [
        BaselineKind::AdultSeg,
        BaselineKind::PediatricSeg,
        BaselineKind::MixSeg,
    ] {
        plans.push(plan_baseline(kind, &manifest, cfg.stage1_epochs, cfg.seed)?);
    }
    let mut ps = vec![0.0];
    ps.extend(cfg.rehearsal_ps.iter().copied().filter(|&p| p != 0.0));
    for p in ps {
        plans.push(plan_rehearsal(
            &manifest,
            p,
            cfg.stage1_epochs,
            cfg.stage2_epochs,
            cfg.seed,
            cfg.rehearsal_mode,
        )?);
    }

    let mut models = Vec::with_capacity(plans.len());
    for plan in &plans {
        log::info!("training {}", plan.name);
        let outcome = train(plan, &mut train_cases, &cfg.train)?;
        if let (Some(first), Some(last)) = (outcome.loss_trace.first(), outcome.loss_trace.last()) {
            log::debug!(
                "{}: loss {:.4} -> {:.4}",
                plan.name,
                first.mean_loss,
                last.mean_loss
            );
        }
        models.push((plan.name.clone(), outcome.final_params().clone()));
    }

    let mut metrics = Vec::with_capacity(models.len() + 1);
    for (name, params) in &models {
        log::info!("evaluating {name}");
        let results = evaluate_method(&test, |img| predict(params, img), &nsd)?;
        metrics.push((name.clone(), results));
    }
    // Upscaling targets small bodies only, so adult test cases are left out.
    let adult_model = &models[0].1;
    let pediatric_test: Vec<(&str, &Held)> = test
        .iter()
        .filter(|(id, _)| {
            manifest
                .get(id)
                .is_some_and(|c| c.domain == Domain::Pediatric)
        })
        .copied()
        .collect();
    log::info!("evaluating {DA_METHOD} (factor {})", cfg.da_factor);
    let da = evaluate_method(
        &pediatric_test,
        |img| da_upscale_pipeline(img, |up| predict(adult_model, up), cfg.da_factor),
        &nsd,
    )?;
    metrics.push((DA_METHOD.to_string(), da));

    let rows = metrics
        .iter()
        .map(|(name, results)| report::aggregate(results, &manifest, name, cfg.averaging))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome {
        manifest,
        plans,
        models,
        metrics,
        rows,
    })
}

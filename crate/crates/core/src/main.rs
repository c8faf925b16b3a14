use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pedseg::cohort::{
    plan_baseline, plan_rehearsal, split_balanced, BaselineKind, Manifest, RehearsalMode, Split,
    TrainingPlan,
};
use pedseg::experiment::{self, ExperimentConfig};
use pedseg::io;
use pedseg::labelmap::{remap, ClassMapping, UnmappedPolicy, NUM_CLASSES};
use pedseg::metrics::{evaluate_case, NsdConfig, DEFAULT_TAU_MM};
use pedseg::phantom::{generate_cohort, CohortSpec};
use pedseg::report::{self, Averaging, TableFormat};
use pedseg::resample::{da_upscale_pipeline, resample_label, resample_scalar, ResampleTarget};
use pedseg::trainer::{predict, train, LrSchedule, ManifestSource, ModelParams, TrainConfig};
use pedseg::Error;

#[derive(Parser)]
#[command(
    name = "pedseg",
    version,
    about = "Age-stratified organ segmentation toolkit"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Base directory for relative output paths.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom cohort with a manifest.
    Phantom(PhantomArgs),
    /// Build a training plan from a manifest.
    Plan(PlanArgs),
    /// Train a model from a plan.
    Train(TrainArgs),
    /// Segment one image with a trained model.
    Predict(PredictArgs),
    /// Resample an image or label volume.
    Resample(ResampleArgs),
    /// Map label ids onto the 19-class taxonomy.
    Remap(RemapArgs),
    /// Per-class DSC and NSD of predictions against references.
    Eval(EvalArgs),
    /// Age-binned tables from metrics files.
    Report(ReportArgs),
    /// Run the full phantom comparison end to end.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 40)]
    n_adult: usize,
    #[arg(long, default_value_t = 60)]
    n_pediatric: usize,
    /// Output directory (volumes plus manifest.json).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    num_organs: usize,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Relative share of paediatric cases per bin 0-3,4-6,7-9,10-12,13-16.
    #[arg(long, value_delimiter = ',')]
    bin_weights: Option<Vec<f64>>,
    /// Assign train/val/test splits with these fractions.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanKind {
    Adult,
    Pediatric,
    Mix,
    Sequential,
    Cl,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    kind: PlanKind,
    /// Adult sampling probability for `cl`.
    #[arg(long)]
    p: Option<f64>,
    /// Epochs of a single-stage baseline.
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 80)]
    stage1_epochs: usize,
    #[arg(long, default_value_t = 40)]
    stage2_epochs: usize,
    /// Reuse one adult subset in every stage-2 epoch.
    #[arg(long)]
    fixed_subset: bool,
    #[arg(long, default_value = "plan.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for stage snapshots, final.json and loss.csv.
    #[arg(long, default_value = "model")]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    /// Learning rate after the first stage.
    #[arg(long)]
    fine_tune_lr: Option<f64>,
    #[arg(long)]
    constant_lr: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    voxels_per_case: Option<usize>,
    /// Sample voxels uniformly instead of per class.
    #[arg(long)]
    no_class_balance: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Upscale by this factor before inference and map labels back.
    #[arg(long)]
    da_factor: Option<f64>,
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, conflicts_with = "spacing", required_unless_present = "spacing")]
    scale: Option<f64>,
    /// Isotropic output spacing in mm.
    #[arg(long)]
    spacing: Option<f64>,
    /// Treat the input as labels (nearest neighbour).
    #[arg(long)]
    label: bool,
}

#[derive(Args)]
struct RemapArgs {
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Send unmapped labels to background instead of failing.
    #[arg(long)]
    unmapped_to_background: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU_MM)]
    tau: f64,
    /// Only cases of this split (default: every case).
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics files; each becomes one row named after its file stem.
    #[arg(long, num_args = 1.., required = true)]
    metrics: Vec<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
    #[arg(long)]
    micro: bool,
    #[arg(long, default_value = "table.md")]
    out: PathBuf,
    /// Also write per-case means sorted by age.
    #[arg(long)]
    per_age: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, conflicts_with = "full")]
    quick: bool,
    #[arg(long)]
    full: bool,
}

struct Ctx {
    seed: u64,
    out_dir: Option<PathBuf>,
}

impl Ctx {
    fn out(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn run_phantom(ctx: &Ctx, a: PhantomArgs) -> anyhow::Result<()> {
    let mut spec = CohortSpec {
        n_adult: a.n_adult,
        n_pediatric: a.n_pediatric,
        seed: ctx.seed,
        ..CohortSpec::default()
    };
    spec.phantom.num_organs = a.num_organs;
    if let Some(sigma) = a.noise_sigma {
        spec.phantom.noise_sigma = sigma;
    }
    if let Some(w) = a.bin_weights {
        spec.pediatric_bin_weights = w
            .try_into()
            .map_err(|_| Error::Parameter("--bin-weights takes 5 values".into()))?;
    }
    let out = ctx.out(a.out.as_deref().unwrap_or(Path::new("phantoms")));
    let manifest = generate_cohort(&spec, &out)?;
    if let Some(f) = a.split {
        let f: [f64; 3] = f
            .try_into()
            .map_err(|_| Error::Parameter("--split takes 3 fractions".into()))?;
        split_balanced(&manifest, f, ctx.seed)?.save(out.join("manifest.json"))?;
    }
    log::info!("wrote {} cases to {}", manifest.cases.len(), out.display());
    Ok(())
}

fn run_plan(ctx: &Ctx, a: PlanArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let mode = if a.fixed_subset {
        RehearsalMode::FixedSubset
    } else {
        RehearsalMode::PerEpoch
    };
    let rehearsal = |p| {
        plan_rehearsal(
            &manifest,
            p,
            a.stage1_epochs,
            a.stage2_epochs,
            ctx.seed,
            mode,
        )
    };
    let plan = match a.kind {
        PlanKind::Adult => plan_baseline(BaselineKind::AdultSeg, &manifest, a.epochs, ctx.seed)?,
        PlanKind::Pediatric => {
            plan_baseline(BaselineKind::PediatricSeg, &manifest, a.epochs, ctx.seed)?
        }
        PlanKind::Mix => plan_baseline(BaselineKind::MixSeg, &manifest, a.epochs, ctx.seed)?,
        PlanKind::Sequential => rehearsal(0.0)?,
        PlanKind::Cl => {
            let p =
                a.p.ok_or_else(|| Error::Parameter("--kind cl needs --p".into()))?;
            rehearsal(p)?
        }
    };
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    plan.save(&out)?;
    log::info!(
        "plan {} with {} epochs -> {}",
        plan.name,
        plan.total_epochs(),
        out.display()
    );
    Ok(())
}

fn run_train(ctx: &Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let plan = TrainingPlan::load(&a.plan)?;
    let manifest = Manifest::load(&a.manifest)?;
    plan.validate(&manifest)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        fine_tune_learning_rate: a.fine_tune_lr,
        schedule: if a.constant_lr {
            LrSchedule::Constant
        } else {
            defaults.schedule
        },
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        voxels_per_case: a.voxels_per_case.unwrap_or(defaults.voxels_per_case),
        class_balanced: !a.no_class_balance,
        seed: ctx.seed,
        ..defaults
    };
    let mut source = ManifestSource::new(&manifest);
    let outcome = train(&plan, &mut source, &cfg)?;
    let out = ctx.out(&a.out);
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    for (s, params) in outcome.snapshots.iter().enumerate() {
        params.save(out.join(format!("stage{}.json", s + 1)))?;
    }
    outcome.final_params().save(out.join("final.json"))?;
    let mut loss = String::from("stage,epoch,mean_loss\n");
    for e in &outcome.loss_trace {
        loss.push_str(&format!("{},{},{}\n", e.stage, e.epoch, e.mean_loss));
    }
    write_text(&out.join("loss.csv"), &loss)?;
    log::info!("trained {} -> {}", plan.name, out.display());
    Ok(())
}

fn run_predict(ctx: &Ctx, a: PredictArgs) -> anyhow::Result<()> {
    let params = ModelParams::load(&a.model)?;
    let image = io::read_scalar(&a.input)?;
    let labels = match a.da_factor {
        Some(f) => da_upscale_pipeline(&image, |v| predict(&params, v), f)?,
        None => predict(&params, &image)?,
    };
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    io::write_label(&labels, &out)?;
    Ok(())
}

fn run_resample(ctx: &Ctx, a: ResampleArgs) -> anyhow::Result<()> {
    let target = match (a.scale, a.spacing) {
        (Some(f), _) => ResampleTarget::Scale(f),
        (None, Some(s)) => ResampleTarget::Spacing([s; 3]),
        (None, None) => unreachable!("clap requires one of --scale/--spacing"),
    };
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    if a.label {
        io::write_label(&resample_label(&io::read_label(&a.input)?, target)?, &out)?;
    } else {
        io::write_scalar(&resample_scalar(&io::read_scalar(&a.input)?, target)?, &out)?;
    }
    Ok(())
}

fn run_remap(ctx: &Ctx, a: RemapArgs) -> anyhow::Result<()> {
    let mut mapping = match &a.mapping {
        Some(path) => ClassMapping::load(path)?,
        None => ClassMapping::default_taxonomy(),
    };
    if a.unmapped_to_background {
        mapping = mapping.with_policy(UnmappedPolicy::ToBackground);
    }
    let (labels, stats) = remap(&io::read_label(&a.input)?, &mapping)?;
    if stats.unmapped_voxels > 0 {
        log::warn!(
            "{} unmapped voxels sent to background",
            stats.unmapped_voxels
        );
    }
    let out = ctx.out(&a.out);
    ensure_parent(&out)?;
    io::write_label(&labels, &out)?;
    Ok(())
}

/// Labels on disk may omit the class count; widen to the evaluation taxonomy.
fn read_taxonomy_labels(path: &Path) -> anyhow::Result<pedseg::volume::LabelVolume> {
    let v = io::read_label(path)?;
    if v.num_classes() > NUM_CLASSES {
        return Err(Error::LabelDomain(format!(
            "{} holds labels up to {}; remap to the {NUM_CLASSES}-class taxonomy first",
            path.display(),
            v.num_classes() - 1
        ))
        .into());
    }
    Ok(v.with_num_classes(NUM_CLASSES)?)
}

fn run_eval(ctx: &Ctx, a: EvalArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let nsd = NsdConfig::new(a.tau)?;
    let wanted = a.split.map(|s| match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    });
    let mut results = Vec::new();
    for case in &manifest.cases {
        if wanted.is_some() && case.split != wanted {
            continue;
        }
        let evaluated = (|| -> anyhow::Result<_> {
            let find = |dir: &Path, what: &str| {
                io::find_case_file(dir, &case.case_id)
                    .ok_or_else(|| anyhow!("no {what} file in {}", dir.display()))
            };
            let pred = read_taxonomy_labels(&find(&a.pred_dir, "prediction")?)?;
            let gt = read_taxonomy_labels(&find(&a.gt_dir, "reference")?)?;
            Ok(evaluate_case(&case.case_id, &pred, &gt, &nsd)?)
        })()
        .with_context(|| format!("case {}", case.case_id))?;
        results.extend(evaluated);
    }
    if results.is_empty() {
        return Err(Error::Parameter("no cases selected for evaluation".into()).into());
    }
    let out = ctx.out(&a.out);
    write_text(
        &out,
        &report::metrics_csv(&results, &ClassMapping::default_taxonomy()),
    )?;
    log::info!("{} metric rows -> {}", results.len(), out.display());
    Ok(())
}

fn run_report(ctx: &Ctx, a: ReportArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let averaging = if a.micro {
        Averaging::Micro
    } else {
        Averaging::Macro
    };
    let mut rows = Vec::new();
    let mut per_age = String::from(report::PER_AGE_HEADER);
    per_age.push('\n');
    for path in &a.metrics {
        let method = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("cannot name method from {}", path.display()))?;
        let results = report::load_metrics_csv(path)?;
        rows.push(report::aggregate(&results, &manifest, method, averaging)?);
        per_age.push_str(&report::per_age_rows(&results, &manifest, method)?);
    }
    let format = match a.format {
        FormatArg::Markdown => TableFormat::Markdown,
        FormatArg::Csv => TableFormat::Csv,
    };
    write_text(&ctx.out(&a.out), &report::render(&rows, format)?)?;
    if let Some(p) = a.per_age {
        write_text(&ctx.out(&p), &per_age)?;
    }
    Ok(())
}

fn run_experiment(ctx: &Ctx, a: ExperimentArgs) -> anyhow::Result<()> {
    let cfg = if a.full {
        ExperimentConfig::full(ctx.seed)
    } else {
        ExperimentConfig::quick(ctx.seed)
    };
    let started = std::time::Instant::now();
    let outcome = experiment::run(&cfg)?;
    let out = ctx
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("experiment"));
    outcome.write(&out)?;
    log::info!(
        "experiment finished in {:.1} s; tables in {}",
        started.elapsed().as_secs_f64(),
        out.display()
    );
    println!("{}", outcome.table(TableFormat::Markdown)?);
    Ok(())
}

/// Error chain joined by `: `, dropping messages already spelled out elsewhere in it.
fn describe(err: &anyhow::Error) -> String {
    let msgs: Vec<String> = err.chain().map(|c| c.to_string()).collect();
    let mut kept: Vec<&str> = Vec::new();
    for (i, m) in msgs.iter().enumerate() {
        let repeated = kept.iter().any(|k| k.contains(m.as_str()))
            || msgs[i + 1..].iter().any(|later| later.contains(m.as_str()));
        if !repeated {
            kept.push(m);
        }
    }
    kept.join(": ")
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    let result = match cli.command {
        Command::Phantom(a) => run_phantom(&ctx, a),
        Command::Plan(a) => run_plan(&ctx, a),
        Command::Train(a) => run_train(&ctx, a),
        Command::Predict(a) => run_predict(&ctx, a),
        Command::Resample(a) => run_resample(&ctx, a),
        Command::Remap(a) => run_remap(&ctx, a),
        Command::Eval(a) => run_eval(&ctx, a),
        Command::Report(a) => run_report(&ctx, a),
        Command::Experiment(a) => run_experiment(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

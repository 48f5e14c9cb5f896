use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mid_core::cropping::CropStrategy;
use mid_core::fusion::FusionLevel;
use mid_core::harness::{
    check_backend, evaluate, load_dataset_index, sweep_crop_counts, write_report, EvalConfig,
    PipelineScorer, ReportFormat, SampleSource,
};
use mid_core::imaging::{Interpolation, NormSpec};
use mid_core::model::{
    Backend, GraphBackend, ModelDescriptor, PresetRegistry, ReferenceBackend, DEFAULT_BATCH_CAP,
};
use mid_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "mid", version, about = "Multi-crop test-time evaluation for image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a model on an ImageNet-style directory tree.
    Eval(EvalArgs),
    /// List preset names (honours MID_PRESETS).
    Presets,
}

#[derive(Args)]
#[group(id = "model_source", required = true, multiple = true)]
struct ModelArgs {
    /// Feature-extractor graph (N,3,C,C) -> (N,D); needs --model-head.
    #[arg(long, requires = "model_head", conflicts_with_all = ["model", "reference_backend"])]
    model_features: Option<PathBuf>,
    /// Head graph (N,D) -> (N,K).
    #[arg(long, requires = "model_features")]
    model_head: Option<PathBuf>,
    /// Monolithic graph (N,3,C,C) -> (N,K); logit/softmax fusion only.
    #[arg(long, conflicts_with = "reference_backend")]
    model: Option<PathBuf>,
    /// Built-in deterministic reference classifier with this weight seed.
    #[arg(long, value_name = "SEED")]
    reference_backend: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,

    #[arg(long)]
    data_dir: PathBuf,
    /// JSON object mapping class directory name to class index.
    #[arg(long)]
    labelmap: Option<PathBuf>,

    /// Preset name, or path to a descriptor JSON file.
    #[arg(long, conflicts_with_all = ["resize", "crop", "interp"], required_unless_present_all = ["resize", "crop"])]
    preset: Option<String>,
    #[arg(long, requires = "crop")]
    resize: Option<usize>,
    #[arg(long, requires = "resize")]
    crop: Option<usize>,
    #[arg(long, default_value = "bilinear")]
    interp: Interpolation,
    #[arg(long)]
    antialias: bool,
    /// Representation width for custom geometry (default: taken from the model, 64 for the reference backend).
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Class count for custom geometry (default: taken from the model, or the dataset).
    #[arg(long)]
    num_classes: Option<usize>,

    /// e.g. center, fixed5+mfixed5, random:20, adaptive:5:20
    #[arg(long, default_value = "center")]
    strategy: CropStrategy,
    #[arg(long = "fuse", default_value = "softmax")]
    fusion: FusionLevel,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    #[arg(long, default_value_t = DEFAULT_BATCH_CAP)]
    batch_cap: usize,
    /// Comma-separated random-crop counts, e.g. 1,2,5,10,20.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,

    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

const DEFAULT_REFERENCE_DIM: usize = 64;

enum ModelSource {
    Split(PathBuf, PathBuf),
    Monolithic(PathBuf),
    Reference(u64),
}

impl ModelSource {
    fn from_args(args: &ModelArgs) -> Self {
        match (&args.model_features, &args.model_head, &args.model, args.reference_backend) {
            (Some(f), Some(h), _, _) => Self::Split(f.clone(), h.clone()),
            (_, _, Some(m), _) => Self::Monolithic(m.clone()),
            (_, _, _, Some(seed)) => Self::Reference(seed),
            _ => unreachable!("clap enforces a model source"),
        }
    }

    fn load(&self, descriptor: &ModelDescriptor) -> mid_core::Result<Box<dyn Backend>> {
        let crop = descriptor.crop_size;
        Ok(match self {
            Self::Split(f, h) => Box::new(GraphBackend::split(f, h, crop)?),
            Self::Monolithic(m) => Box::new(GraphBackend::monolithic(m, crop)?),
            Self::Reference(seed) => Box::new(ReferenceBackend::new(
                *seed,
                descriptor.feature_dim,
                descriptor.num_classes,
                crop,
            )?),
        })
    }
}

fn descriptor_from_args(
    args: &EvalArgs,
    source: &ModelSource,
    dataset_classes: usize,
) -> mid_core::Result<ModelDescriptor> {
    if let Some(name) = &args.preset {
        return PresetRegistry::from_env()?.resolve(name);
    }
    let (resize, crop) = (args.resize.expect("clap"), args.crop.expect("clap"));
    let mut descriptor = ModelDescriptor {
        name: "custom".into(),
        resize_shorter_side: resize,
        crop_size: crop,
        interpolation: args.interp,
        antialias: args.antialias,
        feature_dim: args.feature_dim.unwrap_or(DEFAULT_REFERENCE_DIM),
        num_classes: args.num_classes.unwrap_or(dataset_classes),
        norm: NormSpec::IMAGENET,
    };
    descriptor.validate()?;
    // Graph models define their own output sizes unless the user pinned them.
    if !matches!(source, ModelSource::Reference(_)) {
        let probe = source.load(&descriptor)?;
        if args.feature_dim.is_none() {
            descriptor.feature_dim = probe.feature_dim().unwrap_or(descriptor.feature_dim);
        }
        if args.num_classes.is_none() {
            descriptor.num_classes = probe.num_classes();
        }
    }
    Ok(descriptor)
}

fn run_eval(args: EvalArgs) -> mid_core::Result<()> {
    let dataset = load_dataset_index(&args.data_dir, args.labelmap.as_deref())?;
    info!("{} samples in {} classes", dataset.len(), dataset.num_classes());
    let source = ModelSource::from_args(&args.model);
    let descriptor = descriptor_from_args(&args, &source, dataset.num_classes())?;
    if dataset.num_classes() > descriptor.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model only {}",
            dataset.num_classes(),
            descriptor.num_classes
        )));
    }

    let config = EvalConfig {
        limit: args.limit,
        workers: args.workers,
        batch_cap: args.batch_cap,
        ..EvalConfig::new(descriptor, args.strategy.clone(), args.fusion, args.seed)
    };
    config.validate()?;
    // Fail fast on dimension or capability problems before spawning workers.
    let probe = source.load(&config.descriptor)?;
    check_backend(&config.descriptor, &probe)?;
    if config.fusion == FusionLevel::Feature && !probe.split_available() {
        return Err(Error::Capability(
            "this model is logits-only, so feature fusion is unavailable; use --fuse logit or --fuse softmax".into(),
        ));
    }
    drop(probe);

    let make = |cfg: &EvalConfig| PipelineScorer::new(cfg, source.load(&cfg.descriptor)?);
    let report = match &args.sweep {
        Some(counts) => sweep_crop_counts(&config, counts, make, &dataset)?,
        None => evaluate(&config, || make(&config), &dataset)?,
    };
    write_report(&report, args.format, &args.out)?;
    eprintln!(
        "{} {} {}: top-1 {:.2}%  top-5 {:.2}%  ({} samples, {} failed, {:.1}s) -> {}",
        report.model,
        report.strategy,
        report.fusion,
        report.top1,
        report.top5,
        report.samples,
        report.failed,
        report.wall_time_secs,
        args.out.display()
    );
    Ok(())
}

fn list_presets() -> mid_core::Result<()> {
    let registry = PresetRegistry::from_env()?;
    for d in registry.iter() {
        println!(
            "{:<20} resize {:>4}  crop {:>4}  {:<8} features {}",
            d.name, d.resize_shorter_side, d.crop_size, d.interpolation, d.feature_dim
        );
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_DATA
    }
}

fn report_path_problem(path: &Path) -> Option<Error> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty())?;
    (!parent.is_dir()).then(|| Error::Config(format!("output directory {} does not exist", parent.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(args) => match report_path_problem(&args.out) {
            Some(err) => Err(err),
            None => run_eval(args),
        },
        Command::Presets => list_presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

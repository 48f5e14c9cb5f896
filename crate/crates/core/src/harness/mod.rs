//! Dataset indexing, end-to-end evaluation, crop-count sweeps and reports.

mod dataset;
mod report;
pub mod synthetic;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::cropping::{compose_plan, extract, CropStrategy};
use crate::error::{Error, Result};
use crate::fusion::{fuse_predict, FusionLevel, Prediction, ProbVec};
use crate::imaging::{resize_for_crop, stack};
use crate::model::{Backend, ChunkedBackend, ModelDescriptor, DEFAULT_BATCH_CAP};

pub use dataset::{load_dataset_index, DatasetIndex, Sample, SampleSource};
pub use report::{write_report, EvalReport, FailedSample, ReportFormat, SweepPoint};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fraction of undecodable samples above which a run is rejected.
const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub descriptor: ModelDescriptor,
    pub strategy: CropStrategy,
    pub fusion: FusionLevel,
    pub seed: u64,
    pub batch_cap: usize,
    pub workers: usize,
    pub limit: Option<usize>,
}

impl EvalConfig {
    pub fn new(descriptor: ModelDescriptor, strategy: CropStrategy, fusion: FusionLevel, seed: u64) -> Self {
        Self {
            descriptor,
            strategy,
            fusion,
            seed,
            batch_cap: DEFAULT_BATCH_CAP,
            workers: 1,
            limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("worker count must be >= 1"));
        }
        if self.batch_cap == 0 {
            return Err(Error::config("batch cap must be >= 1"));
        }
        self.descriptor.validate()
    }

    /// sha256 over descriptor, strategy, fusion, seed and tool version.
    pub fn config_hash(&self) -> String {
        let descriptor = serde_json::to_string(&self.descriptor).expect("descriptor serializes");
        let mut h = Sha256::new();
        for part in [
            descriptor.as_str(),
            &self.strategy.to_string(),
            &self.fusion.to_string(),
            &self.seed.to_string(),
            TOOL_VERSION,
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Crop seed for one sample: the first 8 bytes of sha256(run seed ‖ key),
/// so plans do not depend on scheduling or sharding.
pub fn sample_seed(run_seed: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// True iff `label` ranks among the `k` most probable classes; ties go to the
/// lower index.
pub fn top_k_hits(probs: &ProbVec, label: usize, k: usize) -> Result<bool> {
    let p = probs.as_slice();
    if k == 0 || k > p.len() || label >= p.len() {
        return Err(Error::invalid_input(format!(
            "need 1 <= k <= {} and label < {}, got k={k} label={label}",
            p.len(),
            p.len()
        )));
    }
    let target = p[label];
    let ahead = p
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > target || (v == target && i < label))
        .count();
    Ok(ahead < k)
}

/// Produces one fused prediction per sample. The pixel pipeline is
/// [`PipelineScorer`]; other implementations exist for oracle benchmarks.
pub trait Scorer<S: SampleSource + ?Sized>: Send {
    fn score(&mut self, source: &S, index: usize, seed: u64) -> Result<Prediction>;
}

/// decode -> resize -> plan -> extract -> stack -> backend -> fuse.
pub struct PipelineScorer<B> {
    descriptor: ModelDescriptor,
    strategy: CropStrategy,
    fusion: FusionLevel,
    backend: ChunkedBackend<B>,
}

impl<B: Backend> PipelineScorer<B> {
    pub fn new(config: &EvalConfig, backend: B) -> Result<Self> {
        check_backend(&config.descriptor, &backend)?;
        Ok(Self {
            descriptor: config.descriptor.clone(),
            strategy: config.strategy.clone(),
            fusion: config.fusion,
            backend: ChunkedBackend::new(backend, config.batch_cap),
        })
    }
}

/// A backend must agree with the descriptor on classes and, when split, on
/// the representation width.
pub fn check_backend<B: Backend + ?Sized>(descriptor: &ModelDescriptor, backend: &B) -> Result<()> {
    if backend.num_classes() != descriptor.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "model has {} classes but descriptor '{}' declares {}",
            backend.num_classes(),
            descriptor.name,
            descriptor.num_classes
        )));
    }
    if let Some(dim) = backend.feature_dim() {
        if dim != descriptor.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "model features have width {dim} but descriptor '{}' declares {}",
                descriptor.name, descriptor.feature_dim
            )));
        }
    }
    Ok(())
}

impl<S: SampleSource + ?Sized, B: Backend> Scorer<S> for PipelineScorer<B> {
    fn score(&mut self, source: &S, index: usize, seed: u64) -> Result<Prediction> {
        let raw = source.load(index)?;
        let crop = self.descriptor.crop_size;
        let (img, degraded) = resize_for_crop(&raw, &self.descriptor.resize_spec(), crop)?;
        let strategy = if degraded {
            CropStrategy::center()
        } else {
            self.strategy.clone()
        };
        let plan = compose_plan(&strategy, img.height(), img.width(), crop, seed)?;
        let crops = plan
            .rects
            .iter()
            .map(|r| extract(&img, r, &self.descriptor.norm))
            .collect::<Result<Vec<_>>>()?;
        fuse_predict(&mut self.backend, &stack(&crops)?, self.fusion)
    }
}

fn is_sample_failure(err: &Error) -> bool {
    matches!(err, Error::Decode { .. } | Error::Io(_))
}

/// Per-sample result, reduced to hits so large runs do not keep every
/// probability vector alive.
struct Scored {
    top1: bool,
    top5: bool,
    crops: usize,
}

struct Outcome {
    index: usize,
    result: Result<Scored>,
}

fn score_one<S, Sc>(scorer: &mut Sc, source: &S, index: usize, run_seed: u64) -> Result<Scored>
where
    S: SampleSource + ?Sized,
    Sc: Scorer<S>,
{
    let pred = scorer.score(source, index, sample_seed(run_seed, source.key(index)))?;
    let label = source.label(index);
    Ok(Scored {
        top1: top_k_hits(&pred.probs, label, 1)?,
        top5: top_k_hits(&pred.probs, label, 5.min(pred.probs.len()))?,
        crops: pred.crop_count,
    })
}

/// Evaluates `source` with one scorer per worker.
///
/// Workers pull sample indices from a shared counter; per-sample results are
/// gathered and reduced in index order, so the report does not depend on the
/// worker count.
pub fn evaluate<S, Sc, F>(config: &EvalConfig, make_scorer: F, source: &S) -> Result<EvalReport>
where
    S: SampleSource + ?Sized,
    Sc: Scorer<S>,
    F: Fn() -> Result<Sc> + Sync,
{
    config.validate()?;
    let start = Instant::now();
    let total = config.limit.map_or(source.len(), |n| n.min(source.len()));
    if total == 0 {
        return Err(Error::Data("dataset has no samples to evaluate".into()));
    }
    let next = AtomicUsize::new(0);
    let outcomes = Mutex::new(Vec::with_capacity(total));
    let workers = config.workers.min(total);

    let mut scorers = (0..workers).map(|_| make_scorer()).collect::<Result<Vec<_>>>()?;
    std::thread::scope(|scope| {
        for scorer in scorers.iter_mut() {
            let (next, outcomes) = (&next, &outcomes);
            scope.spawn(move || loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= total {
                    break;
                }
                let result = score_one(scorer, source, index, config.seed);
                let failed_hard = matches!(&result, Err(e) if !is_sample_failure(e));
                outcomes.lock().expect("outcome lock").push(Outcome { index, result });
                if failed_hard {
                    // Stop handing out work; the error is reported below.
                    next.store(total, Ordering::Relaxed);
                    break;
                }
            });
        }
    });
    let mut outcomes = outcomes.into_inner().expect("outcome lock");
    outcomes.sort_by_key(|o| o.index);

    let mut report = EvalReport::empty(config);
    let mut crops = 0usize;
    for Outcome { index, result } in outcomes {
        match result {
            Ok(scored) => {
                report.top1_hits += scored.top1 as usize;
                report.top5_hits += scored.top5 as usize;
                report.samples += 1;
                crops += scored.crops;
            }
            Err(e) if is_sample_failure(&e) => {
                log::warn!("skipping {}: {e}", source.key(index));
                report.failures.push(FailedSample {
                    path: source.key(index).to_owned(),
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    report.failed = report.failures.len();
    if report.failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::Data(format!(
            "{} of {total} samples failed to decode (limit is 1%)",
            report.failed
        )));
    }
    if report.samples == 0 {
        return Err(Error::Data("no sample could be evaluated".into()));
    }
    report.finish(crops);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// One evaluation per random-crop count. Every count reuses the same per-image
/// seeds, so plans for smaller counts are prefixes of larger ones. Top-level
/// accuracy fields mirror the last point.
pub fn sweep_crop_counts<S, Sc, F>(
    config: &EvalConfig,
    counts: &[usize],
    make_scorer: F,
    source: &S,
) -> Result<EvalReport>
where
    S: SampleSource + ?Sized,
    Sc: Scorer<S>,
    F: Fn(&EvalConfig) -> Result<Sc> + Sync,
{
    if counts.is_empty() || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("sweep counts must be nonempty and strictly ascending"));
    }
    let start = Instant::now();
    let mut curve = Vec::with_capacity(counts.len());
    let mut last = None;
    for &n in counts {
        let point_config = EvalConfig {
            strategy: config.strategy.with_random_count(n)?,
            ..config.clone()
        };
        let report = evaluate(&point_config, || make_scorer(&point_config), source)?;
        curve.push(SweepPoint::from_report(n, &report));
        last = Some(report);
    }
    let mut report = last.expect("counts nonempty");
    report.config_hash = config.config_hash();
    report.strategy = config.strategy.to_string();
    report.sweep = Some(curve);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

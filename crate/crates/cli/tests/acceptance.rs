//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_FAILURES` check claims that cannot hold as
//! stated (see the reason strings). They still run and still print FAIL; they
//! only do not fail the test target. If one of them starts passing the target
//! fails so the list gets revisited.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use mid_core::cropping::{
    adaptive_crop_count, center_crop_rect, compose_plan, crop_to_image_ratio, extract, fixed5_rects,
    random_crop_rects, AdaptiveParams, CropPrimitive, CropStrategy,
};
use mid_core::fusion::{fuse_logits, fuse_predict, softmax, FusionLevel};
use mid_core::harness::synthetic::{GeometricScorer, MarkerDataset, MarkerGeometry, MarkerOracleBackend};
use mid_core::harness::{evaluate, sample_seed, sweep_crop_counts, EvalConfig, PipelineScorer, Scorer, SampleSource};
use mid_core::imaging::{resize_shorter_side, resized_dims, stack, BatchTensor, NormSpec, RawImage, ResizeSpec};
use mid_core::model::{Backend, GraphBackend, LogitBatch, PresetRegistry, ReferenceBackend, RowBatch};

type Verdict = Result<String, String>;

const EXPECTED_FAILURES: &[(&str, &str)] = &[
    (
        "level-divergence",
        "softmax fusion of [(5,0),(0,1),(0,1)] gives p0 = 0.5104, so class 0, not 1",
    ),
    (
        "ratio-table",
        "672/704 rounds to 0.045 and 800/833 to 0.040; the printed 0.046 and 0.038 do not follow from the stated geometries",
    ),
];

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- fusion

fn fusion_algebra() -> Verdict {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst = 0f64;
    for _ in 0..200 {
        let dim = rng.random_range(1..=64);
        let classes = rng.random_range(2..=50);
        let crop = rng.random_range(4..=24);
        let n = rng.random_range(1..=16);
        let mut backend = ReferenceBackend::new(rng.random(), dim, classes, crop).map_err(err)?;
        let data = (0..n * 3 * crop * crop).map(|_| rng.random_range(-2.5f32..2.5)).collect();
        let batch = BatchTensor::from_raw(n, crop, crop, data).map_err(err)?;
        let f = fuse_predict(&mut backend, &batch, FusionLevel::Feature).map_err(err)?;
        let l = fuse_predict(&mut backend, &batch, FusionLevel::Logit).map_err(err)?;
        for (a, b) in f.probs.as_slice().iter().zip(l.probs.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-5 && elapsed < Duration::from_secs(5),
        format!("max |p_feature - p_logit| = {worst:.2e} over 200 trials in {:.2}s (limits 1e-5, 5s)", elapsed.as_secs_f64()),
    )
}

fn level_divergence() -> Verdict {
    let logits = LogitBatch::new(3, 2, vec![5.0, 0.0, 0.0, 1.0, 0.0, 1.0]).map_err(err)?;
    let logit = fuse_logits(&logits, FusionLevel::Logit).map_err(err)?;
    let soft = fuse_logits(&logits, FusionLevel::Softmax).map_err(err)?;
    check(
        logit.label == 0 && soft.label == 1,
        format!(
            "logit fusion -> class {} (p0 = {:.6}), softmax fusion -> class {} (p0 = {:.6}); expected 0 and 1",
            logit.label,
            logit.probs.as_slice()[0],
            soft.label,
            soft.probs.as_slice()[0]
        ),
    )
}

// ---------------------------------------------------------------- cropping

fn random_strategy(rng: &mut StdRng) -> CropStrategy {
    let terms = rng.random_range(1..=3);
    let primitives = (0..terms)
        .map(|_| match rng.random_range(0..6) {
            0 => CropPrimitive::Center,
            1 => CropPrimitive::Random(rng.random_range(1..=12)),
            2 => CropPrimitive::MirroredRandom(rng.random_range(1..=12)),
            3 => CropPrimitive::Fixed5,
            4 => CropPrimitive::MirroredFixed5,
            _ => {
                let low = rng.random_range(1..=6);
                CropPrimitive::Adaptive(AdaptiveParams {
                    low,
                    high: rng.random_range(low..=24),
                })
            }
        })
        .collect();
    CropStrategy::new(primitives).expect("valid by construction")
}

fn expected_len(strategy: &CropStrategy, h: usize, w: usize, size: usize) -> usize {
    strategy
        .primitives()
        .iter()
        .map(|p| match p {
            CropPrimitive::Center => 1,
            CropPrimitive::Random(n) | CropPrimitive::MirroredRandom(n) => *n,
            CropPrimitive::Fixed5 | CropPrimitive::MirroredFixed5 => 5,
            CropPrimitive::Adaptive(params) => adaptive_crop_count(h, w, size, params),
        })
        .sum()
}

fn chi_square_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("dof >= 1");
    1.0 - dist.cdf(stat)
}

fn crop_plan_suite() -> Verdict {
    const PLANS: usize = 100_000;
    const ALPHA: f64 = 0.001;
    let mut rng = StdRng::seed_from_u64(1);
    let mut violations = 0usize;
    let mut rects = 0usize;
    for _ in 0..PLANS {
        let size = rng.random_range(1..=400);
        let h = rng.random_range(size..=size * 2 + 40);
        let w = rng.random_range(size..=size * 2 + 40);
        let strategy = random_strategy(&mut rng);
        let plan = compose_plan(&strategy, h, w, size, rng.random()).map_err(err)?;
        if plan.len() != expected_len(&strategy, h, w, size) {
            violations += 1;
        }
        for r in &plan.rects {
            rects += 1;
            if r.size != size || r.top + size > h || r.left + size > w {
                violations += 1;
            }
        }
    }

    // Uniformity of positions at the ResNet geometry, across seeds and within one stream.
    let (h, w, size) = (256, 341, 224);
    let mut tops_seeds = vec![0u64; h - size + 1];
    let mut lefts_seeds = vec![0u64; w - size + 1];
    for seed in 0..PLANS as u64 {
        let r = random_crop_rects(h, w, size, 1, seed).map_err(err)?[0];
        tops_seeds[r.top] += 1;
        lefts_seeds[r.left] += 1;
    }
    let mut tops_stream = vec![0u64; h - size + 1];
    let mut lefts_stream = vec![0u64; w - size + 1];
    for r in random_crop_rects(h, w, size, PLANS, 99).map_err(err)? {
        tops_stream[r.top] += 1;
        lefts_stream[r.left] += 1;
    }
    let p_values = [
        chi_square_p(&tops_seeds),
        chi_square_p(&lefts_seeds),
        chi_square_p(&tops_stream),
        chi_square_p(&lefts_stream),
    ];
    let min_p = p_values.iter().copied().fold(1.0, f64::min);

    // Fixed5 coverage at every preset geometry with h, w <= 2 * crop.
    let registry = PresetRegistry::builtin();
    let mut geometries = HashSet::new();
    for d in registry.iter() {
        for (ih, iw) in [(1, 1), (375, 500), (500, 375)] {
            let (rh, rw) = resized_dims(ih, iw, d.resize_shorter_side);
            if rh <= 2 * d.crop_size && rw <= 2 * d.crop_size {
                geometries.insert((rh, rw, d.crop_size));
            }
        }
    }
    let mut uncovered = Vec::new();
    for &(rh, rw, c) in &geometries {
        let mut covered = vec![false; rh * rw];
        for r in fixed5_rects(rh, rw, c).map_err(err)? {
            for y in r.top..r.top + c {
                covered[y * rw + r.left..y * rw + r.left + c].fill(true);
            }
        }
        if covered.iter().any(|c| !c) {
            uncovered.push((rh, rw, c));
        }
    }

    check(
        violations == 0 && min_p > ALPHA && uncovered.is_empty(),
        format!(
            "{PLANS} plans / {rects} rects, {violations} violations; chi-square p = [{}] (alpha {ALPHA}); fixed5 covers {}/{} preset geometries",
            p_values.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", "),
            geometries.len() - uncovered.len(),
            geometries.len()
        ),
    )
}

fn ratio_table() -> Verdict {
    const ROWS: &[(&str, &str)] = &[
        ("efficientnet_b0_ap", "0.125"),
        ("efficientnet_b1_ap", "0.118"),
        ("efficientnet_b2_ap", "0.110"),
        ("efficientnet_b3_ap", "0.096"),
        ("efficientnet_b4_ap", "0.078"),
        ("efficientnet_b5_ap", "0.066"),
        ("efficientnet_b6_ap", "0.060"),
        ("efficientnet_b7_ap", "0.051"),
        ("efficientnet_b8_ap", "0.046"),
        ("nfnet_f0", "0.099"),
        ("nfnet_f1", "0.088"),
        ("nfnet_f2", "0.079"),
        ("nfnet_f3", "0.061"),
        ("nfnet_f4", "0.048"),
        ("nfnet_f5", "0.046"),
        ("nfnet_f6", "0.043"),
        ("efficientnet_l2_ns", "0.038"),
        ("efficientnet_b1", "0.000"),
    ];
    let registry = PresetRegistry::builtin();
    let mut mismatches = Vec::new();
    for &(name, expected) in ROWS {
        let d = registry.get(name).ok_or_else(|| format!("preset {name} missing"))?;
        let got = format!("{:.3}", crop_to_image_ratio(d.crop_size, d.resize_shorter_side).map_err(err)?);
        if got != expected {
            mismatches.push(format!("{name} {}/{} -> {got} (table {expected})", d.crop_size, d.resize_shorter_side));
        }
    }
    check(
        mismatches.is_empty(),
        format!("{}/{} rows match; {}", ROWS.len() - mismatches.len(), ROWS.len(), mismatches.join("; ")),
    )
}

// ---------------------------------------------------------------- harness

fn coverage_oracle() -> Verdict {
    let start = Instant::now();
    let g = MarkerGeometry::STANDARD;
    let ds = MarkerDataset::new(g, 10_000, 2024).map_err(err)?;
    let fusion = FusionLevel::Softmax;

    let center = EvalConfig::new(g.descriptor(), CropStrategy::center(), fusion, 7);
    let center_report = evaluate(&center, || Ok(GeometricScorer::new(CropStrategy::center(), fusion)), &ds).map_err(err)?;
    let analytic = 100.0 * g.center_coverage();

    let random = EvalConfig::new(g.descriptor(), CropStrategy::random(1).map_err(err)?, fusion, 7);
    let counts = [1, 2, 5, 10, 20, 40];
    let sweep = sweep_crop_counts(
        &random,
        &counts,
        |cfg: &EvalConfig| Ok(GeometricScorer::new(cfg.strategy.clone(), fusion)),
        &ds,
    )
    .map_err(err)?;
    let curve: Vec<f64> = sweep.sweep.as_ref().expect("sweep curve").iter().map(|p| p.top1).collect();
    let elapsed = start.elapsed();

    // The geometric shortcut must agree with the pixel pipeline image by image.
    let strategy: CropStrategy = "center+random:4+mrandom:2".parse().map_err(err)?;
    let pixel_config = EvalConfig::new(g.descriptor(), strategy.clone(), fusion, 7);
    let mut pixel = PipelineScorer::new(&pixel_config, MarkerOracleBackend::new(NormSpec::IMAGENET)).map_err(err)?;
    let mut geo = GeometricScorer::new(strategy, fusion);
    let checked = 150;
    let mut disagreements = 0;
    for i in 0..checked {
        let seed = sample_seed(7, ds.key(i));
        if pixel.score(&ds, i, seed).map_err(err)? != geo.score(&ds, i, seed).map_err(err)? {
            disagreements += 1;
        }
    }

    let center_ok = (center_report.top1 - analytic).abs() <= 2.0;
    let monotone = curve.windows(2).all(|w| w[1] >= w[0] - 1.0);
    let saturated = (curve[5] - curve[4]).abs() < 1.0;
    check(
        center_ok && monotone && saturated && disagreements == 0 && elapsed < Duration::from_secs(60),
        format!(
            "center {:.2}% vs analytic {analytic:.2}%; RC{counts:?} = {curve:?}; |acc40-acc20| = {:.2}; pixel/geometric disagree on {disagreements}/{checked}; {:.1}s single-threaded",
            center_report.top1,
            (curve[5] - curve[4]).abs(),
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(err)?;
    let data = tmp.path().join("data");
    let geometry = MarkerGeometry {
        height: 64,
        width: 85,
        marker: 8,
        crop: 56,
    };
    MarkerDataset::new(geometry, 120, 5).map_err(err)?.write_to_dir(&data).map_err(err)?;

    let run = |workers: usize, tag: &str| -> Result<String, String> {
        let out = tmp.path().join(format!("{tag}.json"));
        let o = Command::new(env!("CARGO_BIN_EXE_mid"))
            .args(["eval", "--reference-backend", "11", "--data-dir"])
            .arg(&data)
            .args(["--resize", "64", "--crop", "56", "--strategy", "center+random:4+mrandom:2"])
            .args(["--fuse", "softmax", "--seed", "42", "--workers", &workers.to_string(), "--out"])
            .arg(&out)
            .env_remove("MID_PRESETS")
            .output()
            .map_err(err)?;
        if !o.status.success() {
            return Err(format!("mid eval failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
        let json = std::fs::read_to_string(&out).map_err(err)?;
        Ok(json.lines().filter(|l| !l.contains("\"wall_time_secs\"")).collect::<Vec<_>>().join("\n"))
    };
    let reports = [run(1, "a")?, run(1, "b")?, run(8, "c")?, run(8, "d")?];
    let elapsed = start.elapsed();
    let identical = reports.iter().all(|r| *r == reports[0]);
    check(
        identical && elapsed < Duration::from_secs(30),
        format!(
            "4 runs (workers 1,1,8,8) on 120 images: {} excluding wall time, {:.1}s",
            if identical { "byte-identical" } else { "DIFFERENT" },
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- goldens

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn read_f32(path: &Path) -> Result<Vec<f32>, String> {
    Ok(std::fs::read(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect())
}

fn json(path: &Path) -> Result<serde_json::Value, String> {
    serde_json::from_str(&std::fs::read_to_string(path).map_err(err)?).map_err(err)
}

fn golden_parity() -> Verdict {
    let dir = fixtures();
    let manifest = json(&dir.join("manifest.json"))?;
    let names: Vec<String> = manifest["records"]
        .as_array()
        .ok_or("manifest has no records")?
        .iter()
        .filter_map(|v| v.as_str().map(str::to_owned))
        .collect();
    let (mut worst_px, mut worst_p) = (0f32, 0f64);
    for name in &names {
        let side = json(&dir.join(format!("{name}.json")))?;
        let get = |k: &str| side[k].as_u64().map(|v| v as usize).ok_or(format!("{name}: no {k}"));
        let three = |k: &str| -> [f32; 3] {
            let v: Vec<f32> = side[k].as_array().into_iter().flatten().filter_map(|x| x.as_f64()).map(|x| x as f32).collect();
            [v[0], v[1], v[2]]
        };
        let norm = NormSpec::new(three("mean"), three("std")).map_err(err)?;
        let spec = ResizeSpec::new(get("resize_shorter_side")?, side["interpolation"].as_str().unwrap_or("").parse().map_err(err)?)
            .with_antialias(side["antialias"].as_bool().unwrap_or(false));
        let crop = get("crop_size")?;

        let raw = RawImage::open(dir.join(format!("{name}.png"))).map_err(err)?;
        let img = resize_shorter_side(&raw, &spec).map_err(err)?;
        let tensor = extract(&img, &center_crop_rect(img.height(), img.width(), crop).map_err(err)?, &norm).map_err(err)?;
        let golden = read_f32(&dir.join(format!("{name}.preprocess.f32")))?;
        worst_px = tensor.data().iter().zip(&golden).map(|(a, b)| (a - b).abs()).fold(worst_px, f32::max);

        let mut backend = GraphBackend::split(&dir.join("tiny_features.onnx"), &dir.join("tiny_head.onnx"), crop).map_err(err)?;
        let logits = backend.logits(&stack(&[tensor]).map_err(err)?).map_err(err)?;
        let probs = softmax(logits.row(0)).map_err(err)?;
        let golden = read_f32(&dir.join(format!("{name}.probs.f32")))?;
        worst_p = probs.as_slice().iter().zip(&golden).map(|(a, b)| (a - *b as f64).abs()).fold(worst_p, f64::max);
    }
    check(
        names.len() == 8 && worst_px <= 1e-3 && worst_p <= 1e-4,
        format!("{} fixtures: max |Δ preprocess| = {worst_px:.2e} (limit 1e-3), max |Δ softmax| = {worst_p:.2e} (limit 1e-4)", names.len()),
    )
}

fn main() {
    let criteria: &[(&str, fn() -> Verdict)] = &[
        ("fusion-algebra", fusion_algebra),
        ("level-divergence", level_divergence),
        ("crop-plan-suite", crop_plan_suite),
        ("ratio-table", ratio_table),
        ("coverage-oracle", coverage_oracle),
        ("determinism", determinism),
        ("golden-parity", golden_parity),
    ];
    let mut unexpected = Vec::new();
    for &(name, run) in criteria {
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let known = EXPECTED_FAILURES.iter().find(|(n, _)| *n == name);
        match (&verdict, known) {
            (Ok(detail), None) => println!("PASS  {name:<18} {detail}"),
            (Ok(detail), Some(_)) => {
                println!("PASS  {name:<18} {detail} [listed as expected failure]");
                unexpected.push(name);
            }
            (Err(detail), Some((_, why))) => println!("FAIL  {name:<18} {detail} [expected: {why}]"),
            (Err(detail), None) => {
                println!("FAIL  {name:<18} {detail}");
                unexpected.push(name);
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance results: {unexpected:?}");
        std::process::exit(1);
    }
}

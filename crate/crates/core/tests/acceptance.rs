//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fasa::cache::{dense_step_bytes, speedup_limit, speedup_model, traffic_fraction, CacheGeometry};
use fasa::harness::rng::Xoshiro256StarStar;
use fasa::harness::{compound_ca_table, run_cost_validation, run_recovery, synth_planted, PlantedSpec};
use fasa::tooling::corpus_dir::{write_corpus, Layout};
use fasa::tooling::dominant_file::{load_dominant, to_json};
use fasa::{
    apply_rope, calibrate, fc_scores, footprint_fasa_m, full_cache_footprint, full_scores, AgreementWindow,
    BudgetConfig, ChunkIndex, DecodeMode, HeadSample, HeadState, Matrix, RopeConfig,
};
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian_vec(rng: &mut Xoshiro256StarStar, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gaussian() as f32).collect()
}

fn gaussian_matrix(rng: &mut Xoshiro256StarStar, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols)).unwrap()
}

fn window(k: usize) -> AgreementWindow {
    AgreementWindow::new(k).unwrap()
}

fn decomposition() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256StarStar::seed_from_u64(1);
    let mut worst = 0.0f64;
    for h in 0..1000 {
        let d = [4, 64, 128][h % 3];
        let t = [1, 16, 1024][(h / 3) % 3];
        let cfg = RopeConfig::with_default_base(d).unwrap();
        let q_pos = t - 1 + rng.below(64);
        let s = HeadSample::new(gaussian_vec(&mut rng, d), q_pos, gaussian_matrix(&mut rng, t, d), None);
        let full = full_scores(&s, &cfg).unwrap();
        let mut sum = vec![0.0; t];
        for i in cfg.chunks() {
            for (acc, x) in sum.iter_mut().zip(fc_scores(&s, i, &cfg).unwrap().as_slice()) {
                *acc += x;
            }
        }
        for (a, b) in sum.iter().zip(full.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    let took = start.elapsed();
    check(
        worst <= 1e-4 && took <= Duration::from_secs(30),
        format!(
            "max |sum fc - full| = {worst:.3e} over 1000 heads in {:.2}s",
            took.as_secs_f64()
        ),
    )
}

fn relative_law() -> Outcome {
    let mut rng = Xoshiro256StarStar::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let d = 2 * (1 + rng.below(128));
        let cfg = RopeConfig::with_default_base(d).unwrap();
        let (q, k) = (gaussian_vec(&mut rng, d), gaussian_vec(&mut rng, d));
        let t2 = rng.below(1 << 17);
        let t1 = t2 + rng.below(1 << 17);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let k64: Vec<f64> = k.iter().map(|&x| x as f64).collect();
        let lhs = dot(&apply_rope(&q, t1, &cfg).unwrap(), &apply_rope(&k, t2, &cfg).unwrap());
        let rhs = dot(&apply_rope(&q, t1 - t2, &cfg).unwrap(), &k64);
        let norm = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        worst = worst.max((lhs - rhs).abs() / (norm(&q) * norm(&k)));
    }
    check(
        worst <= 1e-4,
        format!("max relative error {worst:.3e} over 10000 triples"),
    )
}

fn full_budget_equivalence() -> Outcome {
    let mut rng = Xoshiro256StarStar::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut steps = 0;
    for seq in 0..100 {
        let d = [4, 16, 64, 128][seq % 4];
        let t = 1 + rng.below(2048);
        let cfg = RopeConfig::with_default_base(d).unwrap();
        let chunks = cfg.num_chunks();
        let dom: Vec<ChunkIndex> = rng
            .sample_distinct(chunks, chunks)
            .into_iter()
            .rev()
            .map(ChunkIndex)
            .collect();
        let budget = BudgetConfig::new(chunks, t);
        let mut dense = HeadState::new(cfg, None).unwrap();
        let mut fasa = HeadState::new(cfg, Some(dom)).unwrap();
        let decoded = t.min(3);
        for j in 0..t {
            let (k, v) = (gaussian_vec(&mut rng, d), gaussian_vec(&mut rng, d));
            if j + decoded < t {
                dense.prefill(&k, &v).unwrap();
                fasa.prefill(&k, &v).unwrap();
                continue;
            }
            let q = gaussian_vec(&mut rng, d);
            let a = dense.decode_step(&q, &k, &v, DecodeMode::Dense, &budget).unwrap();
            let b = fasa.decode_step(&q, &k, &v, DecodeMode::Fasa, &budget).unwrap();
            for (x, y) in a.output.iter().zip(&b.output) {
                worst = worst.max((x - y).abs());
            }
            steps += 1;
        }
    }
    check(
        worst <= 1e-5,
        format!("max |fasa - dense| = {worst:.3e} over 100 sequences ({steps} decode steps)"),
    )
}

fn recovery_spec(seed: u64, sigma: f64) -> PlantedSpec {
    let planted = Xoshiro256StarStar::seed_from_u64(seed).sample_distinct(32, 4);
    let mut spec = PlantedSpec::new(64, 1024, planted, 32, 10.0 * sigma, sigma, seed);
    spec.samples = 4;
    spec
}

fn recovery() -> Outcome {
    let start = Instant::now();
    let mean_overlap = |sigma: f64| -> (f64, f64) {
        let mut total = 0.0;
        let mut min = 1.0f64;
        for seed in 0..100 {
            let (corpus, truth) = synth_planted(&recovery_spec(seed, sigma)).unwrap();
            let r = run_recovery(&corpus, &truth, window(32), 4).unwrap();
            total += r.mean_overlap;
            min = min.min(r.mean_overlap);
        }
        (total / 100.0, min)
    };
    let (noisy, _) = mean_overlap(1.0);
    let (_, clean_min) = mean_overlap(1e-9);
    let took = start.elapsed();
    check(
        noisy >= 0.9 && clean_min == 1.0 && took <= Duration::from_secs(120),
        format!(
            "mean overlap {noisy:.4} at A/sigma=10, min overlap {clean_min} noise-free, {:.2}s",
            took.as_secs_f64()
        ),
    )
}

fn compound_ordering() -> Outcome {
    let mut wins = 0;
    let mut full_ok = true;
    for seed in 0..100u64 {
        let planted = Xoshiro256StarStar::seed_from_u64(seed).sample_distinct(32, 4);
        let mut spec = PlantedSpec::new(64, 1024, planted, 32, 10.0, 1.0, 1000 + seed);
        spec.samples = 2;
        let (corpus, _) = synth_planted(&spec).unwrap();
        let table = compound_ca_table(&corpus, &[4, 32], &[window(32)], &[window(32)], seed).unwrap();
        let rows = &table.grids[0].rows;
        if rows[0].calibrated[0] > rows[0].random[0] {
            wins += 1;
        }
        full_ok &= rows[1].calibrated[0] == 1.0;
    }
    check(
        wins >= 99 && full_ok,
        format!("calibrated beats random in {wins}/100 trials; F=d/2 gives 1.0: {full_ok}"),
    )
}

fn cost_anchors() -> Outcome {
    let limit = speedup_limit(128, 16);
    let far = speedup_model(1 << 50, 128, 16, 256);
    let frac = traffic_fraction(65536, 128, 16, 256);
    check(
        (limit - 8.0).abs() <= 1e-9 && (far - 8.0).abs() <= 1e-9 && frac == 0.12890625,
        format!("asymptote {limit}, speedup at t=2^50 {far}, traffic_fraction(65536) {frac}"),
    )
}

fn instrumented_traffic() -> Outcome {
    let cfg = RopeConfig::with_default_base(128).unwrap();
    let report = run_cost_validation(&[8192], &cfg, &BudgetConfig::new(16, 256), 2, 7).unwrap();
    let p = &report.points[0];
    check(
        p.relative_deviation <= 0.02 && p.dense_bytes == dense_step_bytes(8192, 128, 2),
        format!(
            "t=8192 measured {} vs model {} (relative deviation {:.3e})",
            p.measured_fraction, p.model_fraction, p.relative_deviation
        ),
    )
}

fn footprint() -> Outcome {
    let worked = footprint_fasa_m(&CacheGeometry::new(2, 1024, 128, 64, 16, 2).unwrap());
    let g = CacheGeometry::new(2, 1024, 1024, 64, 64, 2).unwrap();
    let (degenerate, full) = (footprint_fasa_m(&g), full_cache_footprint(&g));
    check(
        worked == 122_880 && degenerate == full,
        format!("worked example {worked} bytes; degenerate {degenerate} = full {full}"),
    )
}

const GOLDEN_CORPUS_SHA256: &str = "71b996a38b381819dd2fbeb6e05707649762c174aec401bf8d9fd09dacfc5e1c";
const GOLDEN_DOMINANT_SHA256: &str = "4fd5704cfc1108b0269b978d74711db8b534ef41b9e08a4c752814509a1b08cb";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn directory_digest(dir: &Path) -> String {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        let bytes = std::fs::read(dir.join(&name)).unwrap();
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    hex(&h.finalize())
}

fn determinism() -> Outcome {
    let mut spec = PlantedSpec::new(16, 64, vec![1, 5], 4, 10.0, 1.0, 2024);
    spec.samples = 2;
    spec.heads = 2;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let (corpus, _) = synth_planted(&spec).unwrap();
        write_corpus(dir.path(), &corpus, Layout::Paired).unwrap();
        let dom = to_json(&calibrate(&corpus, 2, window(8)).unwrap());
        (directory_digest(dir.path()), hex(&Sha256::digest(dom.as_bytes())))
    };
    let (first, second) = (run(), run());
    check(
        first == second && first.0 == GOLDEN_CORPUS_SHA256 && first.1 == GOLDEN_DOMINANT_SHA256,
        format!(
            "corpus sha256 {}, dominant set sha256 {}; repeat identical: {}",
            first.0,
            first.1,
            first == second
        ),
    )
}

fn fasa_cmd(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fasa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn cli_pipeline() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let steps: [&[&str]; 4] = [
        &["synth", "--seed", "5", "--out", "corpus"],
        &[
            "calibrate",
            "--corpus",
            "corpus",
            "--n-tip",
            "4",
            "--window",
            "32",
            "--out",
            "dom.json",
        ],
        &[
            "decode",
            "--corpus",
            "corpus",
            "--dom",
            "dom.json",
            "--mode",
            "fasa",
            "--metrics",
            "metrics.json",
        ],
        &[
            "bench",
            "--d",
            "128",
            "--n-tip",
            "16",
            "--n-fac",
            "256",
            "--t-max",
            "65536",
            "--out",
            "bench.json",
        ],
    ];
    for args in steps {
        let out = fasa_cmd(args, dir.path());
        if !out.status.success() {
            return Err(format!(
                "`fasa {}` failed: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    let took = start.elapsed();
    let json = |name: &str| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(dir.path().join(name)).unwrap()).unwrap()
    };
    let dom_ok = load_dominant(dir.path().join("dom.json")).is_ok();
    let metrics = json("metrics.json");
    let fields = [
        "mode",
        "t",
        "read_bytes",
        "transfer_bytes",
        "model_fraction",
        "measured_fraction",
    ];
    let records = metrics["records"].as_array().cloned().unwrap_or_default();
    let metrics_ok = !records.is_empty()
        && fields.iter().all(|f| !metrics[f].is_null())
        && records.iter().all(|r| fields.iter().all(|f| !r[f].is_null()));
    let bench = json("bench.json");
    let bench_ok = bench["asymptote"] == 8.0 && bench["points"].as_array().is_some_and(|p| p.len() == 7);
    check(
        dom_ok && metrics_ok && bench_ok && took <= Duration::from_secs(60),
        format!(
            "synth/calibrate/decode/bench exit 0 in {:.2}s; outputs valid: dominant set {dom_ok}, metrics {metrics_ok}, bench {bench_ok}",
            took.as_secs_f64()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("decomposition identity", decomposition),
        ("relative-position law", relative_law),
        ("full-budget equivalence", full_budget_equivalence),
        ("calibration recovery", recovery),
        ("compound-CA ordering", compound_ordering),
        ("cost-model anchors", cost_anchors),
        ("instrumented traffic", instrumented_traffic),
        ("footprint", footprint),
        ("determinism", determinism),
        ("CLI pipeline", cli_pipeline),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{}/{} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

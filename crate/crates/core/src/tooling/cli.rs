//! The `fasa` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors. Every command validates and computes before it writes anything.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::corpus_dir::{read_corpus, write_corpus, Layout};
use super::dominant_file::{load_dominant, save_dominant};
use crate::agreement::AgreementWindow;
use crate::cache::{speedup_limit, DEFAULT_BYTES_PER_ELEM};
use crate::calibration::{calibrate, chunk_mean_ca, CalibrationCorpus, DominantSet, HeadId};
use crate::engine::{model_fraction, BudgetConfig, DecodeMode};
use crate::error::FasaError;
use crate::harness::{replay_last_step, run_cost_validation, synth_planted, CostPoint, PlantedSpec, PlantedTruth};
use crate::rope::{ChunkIndex, RopeConfig, DEFAULT_BASE};

#[derive(Debug, Parser)]
#[command(name = "fasa", version, about = "Frequency-chunk sparse attention tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pick the dominant chunks of every head in a corpus.
    Calibrate(CalibrateArgs),
    /// Replay the last step of every corpus sample and record its traffic.
    Decode(DecodeArgs),
    /// Export the per-head, per-chunk mean agreement as CSV.
    Agreement(AgreementArgs),
    /// Cost model plus instrumented byte counts over context lengths.
    Bench(BenchArgs),
    /// Generate a corpus with planted dominant chunks.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 16)]
    n_tip: usize,
    #[arg(long, default_value_t = AgreementWindow::DEFAULT.get())]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Dominant-set JSON from `calibrate`. Required for fasa mode.
    #[arg(long)]
    dom: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    n_fac: usize,
    #[arg(long, default_value = "fasa")]
    mode: DecodeMode,
    #[arg(long)]
    metrics: PathBuf,
}

#[derive(Debug, Args)]
struct AgreementArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = AgreementWindow::DEFAULT.get())]
    window: usize,
    #[arg(long)]
    heatmap: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    d: usize,
    #[arg(long, default_value_t = 16)]
    n_tip: usize,
    #[arg(long, default_value_t = 256)]
    n_fac: usize,
    #[arg(long, default_value_t = 65536)]
    t_max: usize,
    #[arg(long, default_value_t = DEFAULT_BASE)]
    base: f64,
    #[arg(long, default_value_t = DEFAULT_BYTES_PER_ELEM)]
    bytes_per_elem: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 1024)]
    t: usize,
    /// Comma-separated planted chunk indices.
    #[arg(long, value_delimiter = ',', default_value = "3,9,17,26")]
    planted: Vec<usize>,
    /// Important tokens per sample.
    #[arg(long, default_value_t = 32)]
    important: usize,
    #[arg(long, default_value_t = 10.0)]
    amp: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = DEFAULT_BASE)]
    base: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(FasaError),
}

impl From<FasaError> for CliError {
    fn from(e: FasaError) -> Self {
        Self::Data(e)
    }
}

type CliResult = Result<(), CliError>;

/// Runs one command with process stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// Runs one command, writing tables to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Agreement(a) => cmd_agreement(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(CliError::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> CliResult {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let s: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        s.join("  ")
    };
    let mut text = line(&mut header.iter().copied());
    text.push('\n');
    text.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    text.push('\n');
    for r in rows {
        text.push_str(&line(&mut r.iter().map(String::as_str)));
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::Data(e.into()))
}

fn join<T: Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn window(k: usize) -> Result<AgreementWindow, CliError> {
    AgreementWindow::new(k).map_err(|e| CliError::Usage(format!("--window: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(FasaError::from)?;
    text.push('\n');
    super::atomic_write(path, text.as_bytes())?;
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write) -> CliResult {
    let k = window(a.window)?;
    let corpus = read_corpus(&a.corpus)?;
    let set = calibrate(&corpus, a.n_tip, k)?;
    save_dominant(&a.out, &set)?;
    let rows: Vec<Vec<String>> = set
        .entries
        .iter()
        .map(|(head, list)| {
            vec![
                head.to_string(),
                join(list.iter().map(|c| c.chunk)),
                join(list.iter().map(|c| format!("{:.4}", c.mean_ca))),
            ]
        })
        .collect();
    table(out, &["head", "dominant chunks", "mean CA"], &rows)
}

#[derive(Debug, Serialize)]
struct DecodeRecord {
    head: HeadId,
    sample: usize,
    mode: DecodeMode,
    t: usize,
    n_selected: usize,
    read_bytes: u64,
    transfer_bytes: u64,
    model_fraction: f64,
    measured_fraction: f64,
    max_abs_error_vs_dense: f64,
}

#[derive(Debug, Serialize)]
struct DecodeMetrics {
    mode: DecodeMode,
    n_tip: usize,
    n_fac: usize,
    t: usize,
    read_bytes: u64,
    transfer_bytes: u64,
    model_fraction: f64,
    measured_fraction: f64,
    max_abs_error_vs_dense: f64,
    records: Vec<DecodeRecord>,
}

fn dom_for(set: Option<&DominantSet>, head: HeadId) -> Result<Option<Vec<ChunkIndex>>, CliError> {
    match set {
        None => Ok(None),
        Some(s) => s
            .indices(head)
            .map(Some)
            .ok_or_else(|| FasaError::validation(format!("/heads/{head}"), "head missing from dominant set").into()),
    }
}

fn check_same_rope(corpus: &CalibrationCorpus, set: &DominantSet) -> CliResult {
    if corpus.cfg != set.cfg {
        return Err(FasaError::validation(
            "/config",
            format!(
                "dominant set is for d={} base={}, corpus has d={} base={}",
                set.cfg.head_dim(),
                set.cfg.base(),
                corpus.cfg.head_dim(),
                corpus.cfg.base()
            ),
        )
        .into());
    }
    Ok(())
}

fn cmd_decode(a: DecodeArgs, out: &mut dyn Write) -> CliResult {
    if a.mode == DecodeMode::Fasa && a.dom.is_none() {
        return Err(CliError::Usage(
            "the following required argument was not provided: --dom (needed for --mode fasa)".into(),
        ));
    }
    if a.n_fac == 0 {
        return Err(CliError::Usage("--n-fac must be at least 1".into()));
    }
    let corpus = read_corpus(&a.corpus)?;
    let set = a.dom.as_deref().map(load_dominant).transpose()?;
    if let Some(s) = &set {
        check_same_rope(&corpus, s)?;
    }
    let cfg = corpus.cfg;
    let d = cfg.head_dim();
    let n_tip = set.as_ref().map_or(cfg.num_chunks(), |s| s.n_tip);
    let budget = BudgetConfig::new(n_tip, a.n_fac);

    let mut records = Vec::new();
    for (head, samples) in corpus.iter() {
        let dom = dom_for(set.as_ref(), head)?;
        for (i, s) in samples.iter().enumerate() {
            let replay = |mode| replay_last_step(s, dom.as_deref(), mode, &budget, &cfg).map_err(|e| e.for_head(head));
            let got = replay(a.mode)?;
            let dense = if a.mode == DecodeMode::Dense {
                got.clone()
            } else {
                replay(DecodeMode::Dense)?
            };
            let err = got
                .output
                .iter()
                .zip(&dense.output)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let acc = got.accounting;
            records.push(DecodeRecord {
                head,
                sample: i,
                mode: a.mode,
                t: acc.t,
                n_selected: got.selection.len(),
                read_bytes: acc.counters.fast_reads(),
                transfer_bytes: acc.counters.transfer,
                model_fraction: model_fraction(a.mode, acc.t, d, n_tip, got.selection.len()),
                measured_fraction: acc.measured_fraction(),
                max_abs_error_vs_dense: err,
            });
        }
    }
    if records.is_empty() {
        return Err(FasaError::validation("/samples", "corpus has no samples").into());
    }

    let n = records.len() as f64;
    let metrics = DecodeMetrics {
        mode: a.mode,
        n_tip,
        n_fac: a.n_fac,
        t: records.iter().map(|r| r.t).max().unwrap_or(0),
        read_bytes: records.iter().map(|r| r.read_bytes).sum(),
        transfer_bytes: records.iter().map(|r| r.transfer_bytes).sum(),
        model_fraction: records.iter().map(|r| r.model_fraction).sum::<f64>() / n,
        measured_fraction: records.iter().map(|r| r.measured_fraction).sum::<f64>() / n,
        max_abs_error_vs_dense: records.iter().map(|r| r.max_abs_error_vs_dense).fold(0.0, f64::max),
        records,
    };
    write_json(&a.metrics, &metrics)?;

    let rows: Vec<Vec<String>> = metrics
        .records
        .iter()
        .map(|r| {
            vec![
                r.head.to_string(),
                r.sample.to_string(),
                r.t.to_string(),
                r.n_selected.to_string(),
                r.read_bytes.to_string(),
                r.transfer_bytes.to_string(),
                format!("{:.6}", r.model_fraction),
                format!("{:.6}", r.measured_fraction),
                format!("{:.3e}", r.max_abs_error_vs_dense),
            ]
        })
        .collect();
    table(
        out,
        &[
            "head",
            "sample",
            "t",
            "selected",
            "read B",
            "transfer B",
            "model",
            "measured",
            "max |err|",
        ],
        &rows,
    )?;
    writeln!(
        out,
        "mode {}: mean measured fraction {:.6}, mean model fraction {:.6}",
        metrics.mode, metrics.measured_fraction, metrics.model_fraction
    )
    .map_err(|e| CliError::Data(e.into()))
}

fn cmd_agreement(a: AgreementArgs, out: &mut dyn Write) -> CliResult {
    let k = window(a.window)?;
    let corpus = read_corpus(&a.corpus)?;
    let chunks = corpus.cfg.num_chunks();
    let mut rows = Vec::with_capacity(corpus.num_heads());
    for (head, samples) in corpus.iter() {
        let means = chunk_mean_ca(samples, k, &corpus.cfg).map_err(|e| e.for_head(head))?;
        let mut row = vec![head.to_string()];
        row.extend(means.iter().map(|m| format!("{m:.4}")));
        rows.push(row);
    }
    let header: Vec<String> = std::iter::once("head".to_string())
        .chain((0..chunks).map(|i| i.to_string()))
        .collect();
    let mut csv = header.join(",");
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.join(","));
        csv.push('\n');
    }
    super::atomic_write(&a.heatmap, csv.as_bytes())?;
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(out, &header, &rows)
}

#[derive(Debug, Serialize)]
struct BenchReport {
    d: usize,
    base: f64,
    n_tip: usize,
    n_fac: usize,
    t_max: usize,
    bytes_per_elem: usize,
    seed: u64,
    /// Speedup as the context grows without bound.
    asymptote: f64,
    points: Vec<CostPoint>,
}

/// Powers of two from 1024 up to `t_max`, plus `t_max` itself.
fn bench_lengths(t_max: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = std::iter::successors(Some(1024usize), |t| t.checked_mul(2))
        .take_while(|&t| t < t_max)
        .collect();
    ts.push(t_max);
    ts
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> CliResult {
    if a.t_max == 0 {
        return Err(CliError::Usage("--t-max must be at least 1".into()));
    }
    if a.bytes_per_elem == 0 {
        return Err(CliError::Usage("--bytes-per-elem must be at least 1".into()));
    }
    let cfg = RopeConfig::new(a.d, a.base)?;
    let budget = BudgetConfig::new(a.n_tip, a.n_fac);
    budget.validate(&cfg)?;
    let cost = run_cost_validation(&bench_lengths(a.t_max), &cfg, &budget, a.bytes_per_elem, a.seed)?;
    let report = BenchReport {
        d: a.d,
        base: a.base,
        n_tip: a.n_tip,
        n_fac: a.n_fac,
        t_max: a.t_max,
        bytes_per_elem: a.bytes_per_elem,
        seed: a.seed,
        asymptote: speedup_limit(a.d, a.n_tip),
        points: cost.points,
    };
    write_json(&a.out, &report)?;
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.t.to_string(),
                format!("{:.4}", p.speedup_model),
                format!("{:.6}", p.model_fraction),
                format!("{:.6}", p.measured_fraction),
                format!("{:.3e}", p.relative_deviation),
                p.read_bytes.to_string(),
                p.transfer_bytes.to_string(),
                p.dense_bytes.to_string(),
            ]
        })
        .collect();
    table(
        out,
        &[
            "t",
            "speedup",
            "model",
            "measured",
            "rel dev",
            "read B",
            "transfer B",
            "dense B",
        ],
        &rows,
    )?;
    writeln!(out, "asymptotic speedup d/n_tip = {}", report.asymptote).map_err(|e| CliError::Data(e.into()))
}

#[derive(Debug, Serialize)]
struct TruthFile<'a> {
    spec: &'a PlantedSpec,
    #[serde(flatten)]
    truth: &'a PlantedTruth,
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> CliResult {
    let spec = PlantedSpec {
        d: a.d,
        t: a.t,
        base: a.base,
        planted: a.planted,
        important: a.important,
        amplitude: a.amp,
        sigma: a.sigma,
        seed: a.seed,
        samples: a.samples,
        layers: a.layers,
        heads: a.heads,
    };
    let dest = &a.out;
    if dest.exists() && std::fs::read_dir(dest).map_or(true, |mut d| d.next().is_some()) {
        return Err(FasaError::invalid(format!("{} exists and is not an empty directory", dest.display())).into());
    }
    let (corpus, truth) = synth_planted(&spec)?;

    let parent = match dest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| FasaError::File { path, source }
    };
    std::fs::create_dir_all(&parent).map_err(file_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".synth-")
        .tempdir_in(&parent)
        .map_err(file_err(&parent))?;
    write_corpus(staging.path(), &corpus, Layout::Paired)?;
    write_json(
        &staging.path().join("truth.json"),
        &TruthFile {
            spec: &spec,
            truth: &truth,
        },
    )?;
    if dest.exists() {
        std::fs::remove_dir(dest).map_err(file_err(dest))?;
    }
    std::fs::rename(staging.path(), dest).map_err(file_err(dest))?;

    let rows: Vec<Vec<String>> = truth
        .planted
        .iter()
        .map(|(head, p)| {
            let samples = corpus.samples(*head);
            vec![
                head.to_string(),
                join(p.iter()),
                samples.len().to_string(),
                samples.first().map_or(0, |s| s.len()).to_string(),
            ]
        })
        .collect();
    table(out, &["head", "planted chunks", "samples", "t"], &rows)?;
    writeln!(out, "{}", corpus.provenance).map_err(|e| CliError::Data(e.into()))
}

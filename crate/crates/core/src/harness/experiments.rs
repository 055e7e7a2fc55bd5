use serde::{Deserialize, Serialize};

use super::planted::PlantedTruth;
use super::rng::Xoshiro256StarStar;
use crate::agreement::{compound_ca, overlap, AgreementWindow};
use crate::cache::{speedup_model, traffic_fraction};
use crate::calibration::{calibrate, chunk_mean_ca, CalibrationCorpus, DominantSet};
use crate::engine::{BudgetConfig, DecodeMode, DecodeOutcome, HeadState};
use crate::error::{FasaError, Result};
use crate::rope::{ChunkIndex, RopeConfig};
use crate::scores::HeadSample;

/// Any experiment result, tagged by kind for JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentReport {
    Recovery(RecoveryReport),
    Equivalence(EquivalenceReport),
    CompoundCa(CompoundCaTable),
    Cost(CostReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRecovery {
    pub head: String,
    pub planted: Vec<ChunkIndex>,
    pub recovered: Vec<ChunkIndex>,
    /// `|recovered ∩ planted| / |planted|`.
    pub overlap: f64,
    pub mean_ca_planted: f64,
    pub mean_ca_nonplanted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub window: usize,
    pub n_tip: usize,
    pub heads: Vec<HeadRecovery>,
    pub mean_overlap: f64,
    pub mean_ca_planted: f64,
    pub mean_ca_nonplanted: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Calibrates every head and compares the recovered chunks with the planted
/// ones.
pub fn run_recovery(
    corpus: &CalibrationCorpus,
    truth: &PlantedTruth,
    k: AgreementWindow,
    n_tip: usize,
) -> Result<RecoveryReport> {
    let cfg = &corpus.cfg;
    if n_tip == 0 || n_tip > cfg.num_chunks() {
        return Err(FasaError::invalid(format!(
            "n_tip {n_tip} outside 1..={}",
            cfg.num_chunks()
        )));
    }
    if !corpus.heads().eq(truth.planted.keys().copied()) {
        return Err(FasaError::invalid(
            "ground truth does not cover the same heads as the corpus",
        ));
    }
    let mut heads = Vec::with_capacity(corpus.num_heads());
    for (head, samples) in corpus.iter() {
        let planted = truth.planted_for(head).expect("heads checked above");
        let means = chunk_mean_ca(samples, k, cfg).map_err(|e| e.for_head(head))?;
        let mut order: Vec<usize> = (0..means.len()).collect();
        order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
        let mut recovered: Vec<ChunkIndex> = order[..n_tip].iter().map(|&i| ChunkIndex(i)).collect();
        recovered.sort();
        let hit = recovered.iter().filter(|c| planted.contains(c)).count();
        let is_planted = |i: usize| planted.contains(&ChunkIndex(i));
        heads.push(HeadRecovery {
            head: head.to_string(),
            planted: planted.to_vec(),
            recovered,
            overlap: hit as f64 / planted.len() as f64,
            mean_ca_planted: mean((0..means.len()).filter(|&i| is_planted(i)).map(|i| means[i])),
            mean_ca_nonplanted: mean((0..means.len()).filter(|&i| !is_planted(i)).map(|i| means[i])),
        });
    }
    Ok(RecoveryReport {
        window: k.get(),
        n_tip,
        mean_overlap: mean(heads.iter().map(|h| h.overlap)),
        mean_ca_planted: mean(heads.iter().map(|h| h.mean_ca_planted)),
        mean_ca_nonplanted: mean(heads.iter().map(|h| h.mean_ca_nonplanted)),
        heads,
    })
}

/// The last step of a sample replayed in one mode: keys `0..t-1` are
/// prefilled, then the query decodes together with the final key and value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDecode {
    pub dense: DecodeOutcome,
    pub oracle: DecodeOutcome,
    pub fasa: DecodeOutcome,
}

/// Prefills keys `0..t-1` of a sample and returns the state with the final
/// key and value still to be decoded.
fn prefilled<'a>(
    s: &'a HeadSample,
    dom: Option<&[ChunkIndex]>,
    cfg: &RopeConfig,
) -> Result<(HeadState, &'a [f32], &'a [f32])> {
    s.validate(cfg)?;
    let values = s
        .values
        .as_ref()
        .ok_or_else(|| FasaError::invalid("sample has no values; decoding needs them"))?;
    let t = s.len();
    if s.q_pos != t - 1 {
        return Err(FasaError::invalid(format!(
            "decode replay needs the query at the last key position, got {} for t = {t}",
            s.q_pos
        )));
    }
    let mut state = HeadState::new(*cfg, dom.map(<[ChunkIndex]>::to_vec))?;
    for j in 0..t - 1 {
        state.prefill(s.keys.row(j), values.row(j))?;
    }
    Ok((state, s.keys.row(t - 1), values.row(t - 1)))
}

/// Replays a sample's final step in one mode. `dom` is only needed for fasa.
pub fn replay_last_step(
    s: &HeadSample,
    dom: Option<&[ChunkIndex]>,
    mode: DecodeMode,
    budget: &BudgetConfig,
    cfg: &RopeConfig,
) -> Result<DecodeOutcome> {
    let (mut state, k, v) = prefilled(s, dom, cfg)?;
    state.decode_step(&s.q, k, v, mode, budget)
}

/// Replays a sample's final step in all three modes from one prefilled cache.
pub fn decode_sample(
    s: &HeadSample,
    dom: &[ChunkIndex],
    budget: &BudgetConfig,
    cfg: &RopeConfig,
) -> Result<SampleDecode> {
    let (state, k, v) = prefilled(s, Some(dom), cfg)?;
    let run = |mode| state.clone().decode_step(&s.q, k, v, mode, budget);
    Ok(SampleDecode {
        dense: run(DecodeMode::Dense)?,
        oracle: run(DecodeMode::Oracle)?,
        fasa: run(DecodeMode::Fasa)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEquivalence {
    pub budget: BudgetConfig,
    pub decodes: usize,
    /// Largest per-element |fasa - dense| over every decode.
    pub max_abs_error: f64,
    /// Mean of `|fasa ∩ oracle| / |selection|`.
    pub mean_selection_agreement: f64,
    pub min_selection_agreement: f64,
    /// Every decode had `n_fac >= t`.
    pub full_budget: bool,
    /// `None` unless `full_budget`; then whether the error stayed within 1e-5.
    pub full_budget_within_tolerance: Option<bool>,
    pub mean_measured_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n_tip_calibrated: usize,
    pub budgets: Vec<BudgetEquivalence>,
}

pub const FULL_BUDGET_TOLERANCE: f64 = 1e-5;

/// Compares fasa, oracle and dense decoding of every sample's final step for
/// each budget. A budget's `n_tip` uses the first `n_tip` calibrated chunks.
pub fn run_equivalence(
    corpus: &CalibrationCorpus,
    dom: &DominantSet,
    budgets: &[BudgetConfig],
) -> Result<EquivalenceReport> {
    let cfg = &corpus.cfg;
    if dom.cfg != *cfg {
        return Err(FasaError::invalid(
            "dominant set and corpus use different RoPE configurations",
        ));
    }
    let mut out = Vec::with_capacity(budgets.len());
    for budget in budgets {
        budget.validate(cfg)?;
        if budget.n_tip > dom.n_tip {
            return Err(FasaError::invalid(format!(
                "budget asks for {} dominant chunks, only {} calibrated",
                budget.n_tip, dom.n_tip
            )));
        }
        let mut acc = BudgetEquivalence {
            budget: *budget,
            decodes: 0,
            max_abs_error: 0.0,
            mean_selection_agreement: 0.0,
            min_selection_agreement: 1.0,
            full_budget: true,
            full_budget_within_tolerance: None,
            mean_measured_fraction: 0.0,
        };
        for (head, samples) in corpus.iter() {
            let idx = dom
                .indices(head)
                .ok_or_else(|| FasaError::invalid(format!("no dominant chunks for head {head}")))?;
            for s in samples {
                let r = decode_sample(s, &idx[..budget.n_tip], budget, cfg).map_err(|e| e.for_head(head))?;
                let err = r
                    .fasa
                    .output
                    .iter()
                    .zip(&r.dense.output)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let agree = overlap(&r.fasa.selection.indices, &r.oracle.selection.indices) as f64
                    / r.fasa.selection.len() as f64;
                acc.max_abs_error = acc.max_abs_error.max(err);
                acc.mean_selection_agreement += agree;
                acc.min_selection_agreement = acc.min_selection_agreement.min(agree);
                acc.mean_measured_fraction += r.fasa.accounting.measured_fraction();
                acc.full_budget &= budget.n_fac >= s.len();
                acc.decodes += 1;
            }
        }
        if acc.decodes > 0 {
            acc.mean_selection_agreement /= acc.decodes as f64;
            acc.mean_measured_fraction /= acc.decodes as f64;
        }
        if acc.full_budget {
            acc.full_budget_within_tolerance = Some(acc.max_abs_error <= FULL_BUDGET_TOLERANCE);
        }
        out.push(acc);
    }
    Ok(EquivalenceReport {
        n_tip_calibrated: dom.n_tip,
        budgets: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundCaRow {
    /// Number of chunks in the subset.
    pub f: usize,
    /// Mean over heads of compound CA for the calibrated prefix, one per budget.
    pub calibrated: Vec<f64>,
    /// Same for a seeded random subset drawn outside the calibrated prefix.
    pub random: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundCaGrid {
    /// Window used for calibration.
    pub calibration_window: usize,
    pub rows: Vec<CompoundCaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundCaTable {
    /// Column headers: agreement width used when scoring the subsets.
    pub budgets: Vec<usize>,
    pub grids: Vec<CompoundCaGrid>,
    pub seed: u64,
}

/// `f` chunks outside `exclude` when enough exist, otherwise any `f` chunks.
fn random_subset(rng: &mut Xoshiro256StarStar, cfg: &RopeConfig, exclude: &[ChunkIndex], f: usize) -> Vec<ChunkIndex> {
    let pool: Vec<ChunkIndex> = cfg.chunks().filter(|c| !exclude.contains(c)).collect();
    if pool.len() >= f {
        rng.sample_distinct(pool.len(), f)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    } else {
        rng.sample_distinct(cfg.num_chunks(), f)
            .into_iter()
            .map(ChunkIndex)
            .collect()
    }
}

/// Compound agreement of calibrated chunk prefixes (rows `dom_sizes`) at each
/// scoring width (columns `budgets`), once per calibration window, alongside
/// a random-subset baseline.
pub fn compound_ca_table(
    corpus: &CalibrationCorpus,
    dom_sizes: &[usize],
    windows: &[AgreementWindow],
    budgets: &[AgreementWindow],
    seed: u64,
) -> Result<CompoundCaTable> {
    let cfg = &corpus.cfg;
    if corpus.is_empty() {
        return Err(FasaError::invalid("corpus has no heads"));
    }
    let max_f = dom_sizes.iter().copied().max().unwrap_or(0);
    if max_f == 0 || dom_sizes.contains(&0) || max_f > cfg.num_chunks() {
        return Err(FasaError::invalid(format!(
            "subset sizes must lie in 1..={}",
            cfg.num_chunks()
        )));
    }
    let mut grids = Vec::with_capacity(windows.len());
    for &w in windows {
        let dom = calibrate(corpus, max_f, w)?;
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(dom_sizes.len());
        for &f in dom_sizes {
            let mut calibrated = vec![0.0; budgets.len()];
            let mut random = vec![0.0; budgets.len()];
            for (head, samples) in corpus.iter() {
                let idx = dom.indices(head).expect("calibrated every head");
                let prefix = &idx[..f];
                let rand = random_subset(&mut rng, cfg, prefix, f);
                for (col, &k) in budgets.iter().enumerate() {
                    calibrated[col] += compound_ca(samples, prefix, k, cfg)?.value();
                    random[col] += compound_ca(samples, &rand, k, cfg)?.value();
                }
            }
            let n = corpus.num_heads() as f64;
            calibrated.iter_mut().chain(random.iter_mut()).for_each(|x| *x /= n);
            rows.push(CompoundCaRow { f, calibrated, random });
        }
        grids.push(CompoundCaGrid {
            calibration_window: w.get(),
            rows,
        });
    }
    Ok(CompoundCaTable {
        budgets: budgets.iter().map(|k| k.get()).collect(),
        grids,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub t: usize,
    pub speedup_model: f64,
    pub model_fraction: f64,
    pub measured_fraction: f64,
    /// `|measured - model| / model`.
    pub relative_deviation: f64,
    pub read_bytes: u64,
    pub transfer_bytes: u64,
    pub dense_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub d: usize,
    pub n_tip: usize,
    pub n_fac: usize,
    pub bytes_per_elem: usize,
    pub seed: u64,
    pub points: Vec<CostPoint>,
}

/// For each context length, fills a cache with `t - 1` random tokens, decodes
/// one step in fasa mode and one in dense mode, and compares the byte ratio
/// with [`traffic_fraction`]. The dominant set is chunks `0..n_tip`; traffic
/// does not depend on which chunks are chosen.
pub fn run_cost_validation(
    t_values: &[usize],
    cfg: &RopeConfig,
    budget: &BudgetConfig,
    bytes_per_elem: usize,
    seed: u64,
) -> Result<CostReport> {
    budget.validate(cfg)?;
    let d = cfg.head_dim();
    let dom: Vec<ChunkIndex> = (0..budget.n_tip).map(ChunkIndex).collect();
    let mut points = Vec::with_capacity(t_values.len());
    for &t in t_values {
        if t == 0 {
            return Err(FasaError::invalid("context length must be positive"));
        }
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed ^ t as u64);
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gaussian() as f32).collect() };
        let mut state = HeadState::with_bytes_per_elem(*cfg, Some(dom.clone()), bytes_per_elem)?;
        for _ in 0..t - 1 {
            let (k, v) = (draw(d), draw(d));
            state.prefill(&k, &v)?;
        }
        let (q, k, v) = (draw(d), draw(d), draw(d));
        let dense = state.clone().decode_step(&q, &k, &v, DecodeMode::Dense, budget)?;
        let fasa = state.decode_step(&q, &k, &v, DecodeMode::Fasa, budget)?;
        let measured = fasa.accounting.counters.total() as f64 / dense.accounting.counters.total() as f64;
        let model = traffic_fraction(t as u64, d, budget.n_tip, budget.n_fac);
        points.push(CostPoint {
            t,
            speedup_model: speedup_model(t as u64, d, budget.n_tip, budget.n_fac),
            model_fraction: model,
            measured_fraction: measured,
            relative_deviation: (measured - model).abs() / model,
            read_bytes: fasa.accounting.counters.fast_reads(),
            transfer_bytes: fasa.accounting.counters.transfer,
            dense_bytes: dense.accounting.counters.total(),
        });
    }
    Ok(CostReport {
        d,
        n_tip: budget.n_tip,
        n_fac: budget.n_fac,
        bytes_per_elem,
        seed,
        points,
    })
}

impl From<RecoveryReport> for ExperimentReport {
    fn from(r: RecoveryReport) -> Self {
        Self::Recovery(r)
    }
}

impl From<EquivalenceReport> for ExperimentReport {
    fn from(r: EquivalenceReport) -> Self {
        Self::Equivalence(r)
    }
}

impl From<CompoundCaTable> for ExperimentReport {
    fn from(r: CompoundCaTable) -> Self {
        Self::CompoundCa(r)
    }
}

impl From<CostReport> for ExperimentReport {
    fn from(r: CostReport) -> Self {
        Self::Cost(r)
    }
}

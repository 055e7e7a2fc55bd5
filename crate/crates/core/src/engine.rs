//! Online decode path for one head.
//!
//! Each step appends the current token, ranks every cached token with the
//! dominant chunks only (token importance prediction), keeps the best
//! `n_fac`, and runs exact full-dimension attention over just those rows at
//! their original positions (focused attention). The ranking scores are never
//! used as attention weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agreement::top_positions;
use crate::cache::{dense_step_bytes, Fetched, TieredCache, TrafficCounters, DEFAULT_BYTES_PER_ELEM};
use crate::error::{FasaError, Result};
use crate::matrix::Matrix;
use crate::rope::{chunk_score, ChunkIndex, RopeConfig};
use crate::scores::{attend_weights, check_subset, logits_at, pair, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// Dominant chunks used for ranking.
    pub n_tip: usize,
    /// Tokens kept for attention.
    pub n_fac: usize,
    /// Always keep the first `pin_sink` positions. Off by default.
    #[serde(default)]
    pub pin_sink: usize,
    /// Always keep the last `pin_recent` positions. Off by default.
    #[serde(default)]
    pub pin_recent: usize,
}

impl BudgetConfig {
    pub fn new(n_tip: usize, n_fac: usize) -> Self {
        Self {
            n_tip,
            n_fac,
            pin_sink: 0,
            pin_recent: 0,
        }
    }

    pub fn validate(&self, cfg: &RopeConfig) -> Result<()> {
        if self.n_tip == 0 || self.n_tip > cfg.num_chunks() {
            return Err(FasaError::invalid(format!(
                "n_tip {} outside 1..={}",
                self.n_tip,
                cfg.num_chunks()
            )));
        }
        if self.n_fac == 0 {
            return Err(FasaError::invalid("n_fac must be at least 1"));
        }
        Ok(())
    }
}

/// Selected token positions (ascending) with the scores that ranked them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSelection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl TokenSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_positions(indices: Vec<usize>, scores: &ScoreVector) -> Self {
        let scores = indices.iter().map(|&j| scores.logits[j]).collect();
        Self { indices, scores }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Attend over every cached token.
    Dense,
    /// Rank with dominant chunks, attend over the selection.
    Fasa,
    /// Rank with exact full-head scores, attend over the selection.
    Oracle,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Dense => "dense",
            DecodeMode::Fasa => "fasa",
            DecodeMode::Oracle => "oracle",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = FasaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "fasa" => Ok(Self::Fasa),
            "oracle" => Ok(Self::Oracle),
            other => Err(FasaError::invalid(format!("unknown decode mode {other:?}"))),
        }
    }
}

/// Bytes touched by one decode step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAccounting {
    pub t: usize,
    pub counters: TrafficCounters,
    /// What a dense step would read at this context length.
    pub dense_bytes: u64,
}

impl StepAccounting {
    pub fn measured_fraction(&self) -> f64 {
        self.counters.total() as f64 / self.dense_bytes as f64
    }
}

/// Closed-form byte fraction of one step relative to dense, for `n_selected`
/// tokens out of `t`. Unlike [`crate::cache::traffic_fraction`] this is not
/// clamped, so it matches the counters for every mode.
pub fn model_fraction(mode: DecodeMode, t: usize, d: usize, n_tip: usize, n_selected: usize) -> f64 {
    let picked = n_selected as f64 / t as f64;
    match mode {
        DecodeMode::Dense => 1.0,
        DecodeMode::Oracle => 1.0 + picked,
        DecodeMode::Fasa => n_tip as f64 / d as f64 + picked,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub output: Vec<f64>,
    pub selection: TokenSelection,
    pub accounting: StepAccounting,
}

/// Ranking scores from the fast-tier key store. Row `j` of `hot_keys` is the
/// token at position `j`, holding the coordinates of `idx` in order.
pub fn tip(q: &[f32], q_pos: usize, hot_keys: &Matrix, idx: &[ChunkIndex], cfg: &RopeConfig) -> Result<ScoreVector> {
    cfg.check_len("query", q.len())?;
    check_subset(idx, cfg)?;
    if hot_keys.cols() != 2 * idx.len() {
        return Err(FasaError::state(format!(
            "hot key store has {} columns, {} dominant chunks need {}",
            hot_keys.cols(),
            idx.len(),
            2 * idx.len()
        )));
    }
    if hot_keys.rows() > q_pos + 1 {
        return Err(FasaError::state(format!(
            "{} cached tokens but the query is at position {q_pos}",
            hot_keys.rows()
        )));
    }
    let freqs = cfg.frequencies();
    let chunks: Vec<(f64, [f64; 2])> = idx.iter().map(|&i| (freqs[i.get()], pair(q, i.get()))).collect();
    let logits = hot_keys
        .iter_rows()
        .enumerate()
        .map(|(j, k)| {
            let delta = (q_pos - j) as f64;
            chunks
                .iter()
                .enumerate()
                .map(|(slot, &(f, qc))| chunk_score(qc, pair(k, slot), delta * f))
                .sum()
        })
        .collect();
    Ok(ScoreVector::new(logits))
}

/// The `min(n_fac, t)` best-scoring positions, ascending.
pub fn select(scores: &ScoreVector, n_fac: usize) -> TokenSelection {
    TokenSelection::from_positions(top_positions(&scores.logits, n_fac), scores)
}

/// Like [`select`], with sink and recent positions kept ahead of the ranking.
pub fn select_with_pins(scores: &ScoreVector, budget: &BudgetConfig) -> TokenSelection {
    let t = scores.len();
    if budget.pin_sink == 0 && budget.pin_recent == 0 {
        return select(scores, budget.n_fac);
    }
    let take = budget.n_fac.min(t);
    let mut pinned = vec![false; t];
    let mut chosen = Vec::with_capacity(take);
    let sinks = 0..budget.pin_sink.min(t);
    let recent = t.saturating_sub(budget.pin_recent)..t;
    for j in sinks.chain(recent) {
        if chosen.len() < take && !pinned[j] {
            pinned[j] = true;
            chosen.push(j);
        }
    }
    if chosen.len() < take {
        let rest: Vec<usize> = (0..t).filter(|&j| !pinned[j]).collect();
        let free: Vec<f64> = rest.iter().map(|&j| scores.logits[j]).collect();
        let best = top_positions(&free, take - chosen.len());
        chosen.extend(best.into_iter().map(|r| rest[r]));
    }
    chosen.sort_unstable();
    TokenSelection::from_positions(chosen, scores)
}

/// Rows of full-resident key and value matrices at the selected positions.
pub fn gather(keys: &Matrix, values: &Matrix, sel: &TokenSelection) -> Result<Fetched> {
    let t = keys.rows();
    if values.rows() != t || values.cols() != keys.cols() {
        return Err(FasaError::shape("keys and values differ in shape"));
    }
    if let Some(&j) = sel.indices.iter().find(|&&j| j >= t) {
        return Err(FasaError::invalid(format!(
            "selected position {j} beyond context length {t}"
        )));
    }
    let mut k = Matrix::with_cols(keys.cols());
    let mut v = Matrix::with_cols(values.cols());
    for &j in &sel.indices {
        k.push_row(keys.row(j))?;
        v.push_row(values.row(j))?;
    }
    Ok(Fetched {
        keys: k,
        values: v,
        positions: sel.indices.clone(),
    })
}

/// Exact attention over a gathered selection at its original positions.
pub fn fac(q: &[f32], q_pos: usize, gathered: &Fetched, cfg: &RopeConfig) -> Result<Vec<f64>> {
    crate::scores::attend(q, q_pos, &gathered.keys, &gathered.values, &gathered.positions, cfg)
}

/// Decode state of one head: its tiered cache and dominant chunks.
#[derive(Debug, Clone)]
pub struct HeadState {
    cfg: RopeConfig,
    cache: TieredCache,
    dom: Option<Vec<ChunkIndex>>,
}

impl HeadState {
    /// `dom` is required for [`DecodeMode::Fasa`]. Without it the cache keeps
    /// every key coordinate in the fast tier.
    pub fn new(cfg: RopeConfig, dom: Option<Vec<ChunkIndex>>) -> Result<Self> {
        Self::with_bytes_per_elem(cfg, dom, DEFAULT_BYTES_PER_ELEM)
    }

    pub fn with_bytes_per_elem(cfg: RopeConfig, dom: Option<Vec<ChunkIndex>>, bytes_per_elem: usize) -> Result<Self> {
        let layout: Vec<ChunkIndex> = match &dom {
            Some(d) => d.clone(),
            None => cfg.chunks().collect(),
        };
        Ok(Self {
            cache: TieredCache::new(&cfg, &layout, bytes_per_elem)?,
            cfg,
            dom,
        })
    }

    pub fn cfg(&self) -> &RopeConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &TieredCache {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn dominant_chunks(&self) -> Option<&[ChunkIndex]> {
        self.dom.as_deref()
    }

    /// Stores a prompt token without attending (no reads are charged).
    pub fn prefill(&mut self, k: &[f32], v: &[f32]) -> Result<()> {
        self.cache.append(k, v)
    }

    /// One decode step for the token at position `len()`.
    pub fn decode_step(
        &mut self,
        q: &[f32],
        k: &[f32],
        v: &[f32],
        mode: DecodeMode,
        budget: &BudgetConfig,
    ) -> Result<DecodeOutcome> {
        self.cfg.check_len("query", q.len())?;
        budget.validate(&self.cfg)?;
        if mode == DecodeMode::Fasa {
            match &self.dom {
                None => return Err(FasaError::invalid("fasa mode needs dominant chunks")),
                Some(d) if d.len() != budget.n_tip => {
                    return Err(FasaError::invalid(format!(
                        "budget n_tip {} but {} dominant chunks are configured",
                        budget.n_tip,
                        d.len()
                    )))
                }
                Some(_) => {}
            }
        }

        self.cache.append(k, v)?;
        let t = self.cache.len();
        let q_pos = t - 1;
        let before = self.cache.counters();

        let (output, selection) = match mode {
            DecodeMode::Dense => {
                let all = self.cache.fetch_all();
                let att = attend_weights(q, q_pos, &all.keys, &all.values, &all.positions, &self.cfg)?;
                let selection = TokenSelection {
                    indices: all.positions,
                    scores: att.logits,
                };
                (att.output, selection)
            }
            DecodeMode::Oracle => {
                let all = self.cache.fetch_all();
                let full = ScoreVector::new(logits_at(q, q_pos, &all.keys, &all.positions, &self.cfg));
                let selection = select_with_pins(&full, budget);
                let fetched = self.cache.fetch_selected(&selection.indices)?;
                (fac(q, q_pos, &fetched, &self.cfg)?, selection)
            }
            DecodeMode::Fasa => {
                let dom = self.dom.as_deref().expect("checked above");
                let scores = tip(q, q_pos, self.cache.scan_hot(), dom, &self.cfg)?;
                let selection = select_with_pins(&scores, budget);
                let fetched = self.cache.fetch_selected(&selection.indices)?;
                (fac(q, q_pos, &fetched, &self.cfg)?, selection)
            }
        };

        Ok(DecodeOutcome {
            output,
            selection,
            accounting: StepAccounting {
                t,
                counters: self.cache.counters().since(&before),
                dense_bytes: dense_step_bytes(t, self.cfg.head_dim(), self.cache.bytes_per_elem()),
            },
        })
    }
}

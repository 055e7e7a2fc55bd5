//! Raw attention logits per head, per chunk, and per chunk subset, plus the
//! softmax attention kernel shared by the dense and focused decode paths.
//!
//! Logits here are unscaled: `1/sqrt(d)` only appears inside [`attend`]. A
//! positive scale never changes a ranking, so agreement and token selection
//! work on the raw values.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{FasaError, Result};
use crate::matrix::Matrix;
use crate::rope::{chunk_score, rotate_chunk, ChunkIndex, RopeConfig};

/// One calibration observation: a pre-RoPE query at absolute position
/// `q_pos` and the pre-RoPE keys of its context at positions `0..t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSample {
    pub q: Vec<f32>,
    pub q_pos: usize,
    pub keys: Matrix,
    pub values: Option<Matrix>,
}

impl HeadSample {
    pub fn new(q: Vec<f32>, q_pos: usize, keys: Matrix, values: Option<Matrix>) -> Self {
        Self { q, q_pos, keys, values }
    }

    /// Context length.
    #[inline]
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn validate(&self, cfg: &RopeConfig) -> Result<()> {
        cfg.check_len("query", self.q.len())?;
        if self.keys.cols() != cfg.head_dim() {
            return Err(FasaError::shape(format!(
                "key rows have length {}, head dimension is {}",
                self.keys.cols(),
                cfg.head_dim()
            )));
        }
        if self.keys.rows() == 0 {
            return Err(FasaError::shape("sample has an empty key matrix"));
        }
        if self.q_pos + 1 < self.keys.rows() {
            return Err(FasaError::shape(format!(
                "query at position {} cannot attend to {} keys (causality)",
                self.q_pos,
                self.keys.rows()
            )));
        }
        if let Some(v) = &self.values {
            if v.rows() != self.keys.rows() || v.cols() != cfg.head_dim() {
                return Err(FasaError::shape(format!(
                    "values are {}x{}, keys are {}x{}",
                    v.rows(),
                    v.cols(),
                    self.keys.rows(),
                    self.keys.cols()
                )));
            }
        }
        Ok(())
    }
}

/// Raw attention logits over context tokens, indexed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector {
    pub logits: Vec<f64>,
}

impl ScoreVector {
    pub fn new(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }
}

impl From<Vec<f64>> for ScoreVector {
    fn from(logits: Vec<f64>) -> Self {
        Self { logits }
    }
}

#[inline]
pub(crate) fn pair(v: &[f32], i: usize) -> [f64; 2] {
    [v[2 * i] as f64, v[2 * i + 1] as f64]
}

/// Query rotated to `pos`, in f64.
fn rotated(v: &[f32], pos: usize, freqs: &[f64]) -> Vec<[f64; 2]> {
    freqs
        .iter()
        .enumerate()
        .map(|(i, &f)| rotate_chunk(pair(v, i), pos as f64 * f))
        .collect()
}

/// Dot product of the query rotated to its position with each key rotated to
/// its own position.
fn absolute_logits(q: &[f32], q_pos: usize, keys: &Matrix, positions: &[usize], freqs: &[f64]) -> Vec<f64> {
    let rq = rotated(q, q_pos, freqs);
    keys.iter_rows()
        .zip(positions)
        .map(|(k, &pos)| {
            rq.iter()
                .zip(freqs)
                .enumerate()
                .map(|(i, (qc, &f))| {
                    let kc = rotate_chunk(pair(k, i), pos as f64 * f);
                    qc[0] * kc[0] + qc[1] * kc[1]
                })
                .sum()
        })
        .collect()
}

/// Full-head logits of `q` against keys held at the given positions.
pub(crate) fn logits_at(q: &[f32], q_pos: usize, keys: &Matrix, positions: &[usize], cfg: &RopeConfig) -> Vec<f64> {
    absolute_logits(q, q_pos, keys, positions, &cfg.frequencies())
}

/// Full-head logits: entry `j` is `<rope(q, q_pos), rope(k_j, j)>`.
pub fn full_scores(s: &HeadSample, cfg: &RopeConfig) -> Result<ScoreVector> {
    s.validate(cfg)?;
    let positions: Vec<usize> = (0..s.len()).collect();
    Ok(ScoreVector::new(absolute_logits(
        &s.q,
        s.q_pos,
        &s.keys,
        &positions,
        &cfg.frequencies(),
    )))
}

/// Logits of a single chunk, computed from the relative offset `q_pos - j`.
pub fn fc_scores(s: &HeadSample, i: ChunkIndex, cfg: &RopeConfig) -> Result<ScoreVector> {
    s.validate(cfg)?;
    cfg.check_chunk(i)?;
    let f = cfg.freq(i.get());
    let qc = pair(&s.q, i.get());
    let logits = s
        .keys
        .iter_rows()
        .enumerate()
        .map(|(j, k)| chunk_score(qc, pair(k, i.get()), (s.q_pos - j) as f64 * f))
        .collect();
    Ok(ScoreVector::new(logits))
}

/// Validates a chunk subset: non-empty, in range, no repeats.
pub(crate) fn check_subset(idx: &[ChunkIndex], cfg: &RopeConfig) -> Result<()> {
    if idx.is_empty() {
        return Err(FasaError::invalid("chunk subset is empty"));
    }
    let mut seen = BTreeSet::new();
    for &i in idx {
        cfg.check_chunk(i)?;
        if !seen.insert(i) {
            return Err(FasaError::invalid(format!("chunk {i} listed twice")));
        }
    }
    Ok(())
}

/// Sum of [`fc_scores`] over `idx`, evaluated in one pass over the selected
/// coordinates of each key.
pub fn subset_scores(s: &HeadSample, idx: &[ChunkIndex], cfg: &RopeConfig) -> Result<ScoreVector> {
    s.validate(cfg)?;
    check_subset(idx, cfg)?;
    let chunks: Vec<(usize, f64, [f64; 2])> = idx
        .iter()
        .map(|&i| (i.get(), cfg.freq(i.get()), pair(&s.q, i.get())))
        .collect();
    let logits = s
        .keys
        .iter_rows()
        .enumerate()
        .map(|(j, k)| {
            let delta = (s.q_pos - j) as f64;
            chunks
                .iter()
                .map(|&(i, f, qc)| chunk_score(qc, pair(k, i), delta * f))
                .sum()
        })
        .collect();
    Ok(ScoreVector::new(logits))
}

/// Output of [`attend_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub output: Vec<f64>,
    pub weights: Vec<f64>,
    /// Unscaled logits of the attended rows.
    pub logits: Vec<f64>,
}

/// Softmax attention of `q` over the given keys and values. Keys are rotated
/// with their original absolute `positions`; logits are scaled by
/// `1/sqrt(d)` and the row max is subtracted before exponentiation.
pub fn attend(
    q: &[f32],
    q_pos: usize,
    keys: &Matrix,
    values: &Matrix,
    positions: &[usize],
    cfg: &RopeConfig,
) -> Result<Vec<f64>> {
    attend_weights(q, q_pos, keys, values, positions, cfg).map(|a| a.output)
}

pub fn attend_weights(
    q: &[f32],
    q_pos: usize,
    keys: &Matrix,
    values: &Matrix,
    positions: &[usize],
    cfg: &RopeConfig,
) -> Result<Attention> {
    let d = cfg.head_dim();
    cfg.check_len("query", q.len())?;
    let n = positions.len();
    if n == 0 {
        return Err(FasaError::invalid("attention over an empty selection"));
    }
    if keys.rows() != n || values.rows() != n || keys.cols() != d || values.cols() != d {
        return Err(FasaError::shape(format!(
            "{n} positions, keys {}x{}, values {}x{}, head dimension {d}",
            keys.rows(),
            keys.cols(),
            values.rows(),
            values.cols()
        )));
    }
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FasaError::invalid("selected positions are not strictly increasing"));
    }
    if positions[n - 1] > q_pos {
        return Err(FasaError::invalid(format!(
            "key at position {} is after the query at {q_pos}",
            positions[n - 1]
        )));
    }

    let scale = 1.0 / (d as f64).sqrt();
    let logits = absolute_logits(q, q_pos, keys, positions, &cfg.frequencies());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|&l| ((l - max) * scale).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }

    let mut output = vec![0.0f64; d];
    for (w, v) in weights.iter().zip(values.iter_rows()) {
        for (o, &x) in output.iter_mut().zip(v) {
            *o += w * x as f64;
        }
    }
    Ok(Attention {
        output,
        weights,
        logits,
    })
}

/// Attention of the sample's query over its whole context.
pub fn dense_attention(s: &HeadSample, cfg: &RopeConfig) -> Result<Vec<f64>> {
    s.validate(cfg)?;
    let values = s
        .values
        .as_ref()
        .ok_or_else(|| FasaError::invalid("sample has no values"))?;
    let positions: Vec<usize> = (0..s.len()).collect();
    attend(&s.q, s.q_pos, &s.keys, values, &positions, cfg)
}

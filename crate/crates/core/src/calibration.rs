//! Offline selection of dominant frequency chunks.
//!
//! For every head, each chunk's agreement with the full head is averaged over
//! the calibration samples and the `n_tip` best chunks are kept. Chunks are
//! scored independently; there is no search over chunk combinations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agreement::{ca_against, topk_indices, AgreementWindow};
use crate::error::{FasaError, Result};
use crate::rope::{ChunkIndex, RopeConfig};
use crate::scores::{fc_scores, full_scores, HeadSample};

/// Attention head address. Displays as `layer.head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer, self.head)
    }
}

impl FromStr for HeadId {
    type Err = FasaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FasaError::invalid(format!("head id {s:?} is not of the form <layer>.<head>"));
        let (l, h) = s.split_once('.').ok_or_else(bad)?;
        Ok(Self {
            layer: l.parse().map_err(|_| bad())?,
            head: h.parse().map_err(|_| bad())?,
        })
    }
}

impl From<HeadId> for String {
    fn from(h: HeadId) -> Self {
        h.to_string()
    }
}

impl TryFrom<String> for HeadId {
    type Error = FasaError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Calibration samples grouped by head.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCorpus {
    pub cfg: RopeConfig,
    samples: BTreeMap<HeadId, Vec<HeadSample>>,
    pub provenance: String,
}

impl CalibrationCorpus {
    pub fn new(cfg: RopeConfig, provenance: impl Into<String>) -> Self {
        Self {
            cfg,
            samples: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn push(&mut self, head: HeadId, sample: HeadSample) -> Result<()> {
        sample.validate(&self.cfg).map_err(|e| e.for_head(head))?;
        self.samples.entry(head).or_default().push(sample);
        Ok(())
    }

    pub fn heads(&self) -> impl Iterator<Item = HeadId> + '_ {
        self.samples.keys().copied()
    }

    pub fn samples(&self, head: HeadId) -> &[HeadSample] {
        self.samples.get(&head).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (HeadId, &[HeadSample])> + '_ {
        self.samples.iter().map(|(h, s)| (*h, s.as_slice()))
    }

    pub fn num_heads(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl FasaError {
    pub(crate) fn for_head(self, head: HeadId) -> Self {
        FasaError::Head {
            head: head.to_string(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantChunk {
    pub chunk: ChunkIndex,
    pub mean_ca: f64,
}

/// Calibrated dominant chunks for every head, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct DominantSet {
    pub cfg: RopeConfig,
    pub n_tip: usize,
    pub window: AgreementWindow,
    pub entries: BTreeMap<HeadId, Vec<DominantChunk>>,
    pub provenance: String,
}

impl DominantSet {
    /// Chunk indices for `head` in calibrated order.
    pub fn indices(&self, head: HeadId) -> Option<Vec<ChunkIndex>> {
        self.entries.get(&head).map(|e| e.iter().map(|c| c.chunk).collect())
    }

    /// Checks list length, distinctness, range, and ordering for every head.
    pub fn validate(&self) -> Result<()> {
        let chunks = self.cfg.num_chunks();
        if self.n_tip == 0 || self.n_tip > chunks {
            return Err(FasaError::validation(
                "/config/n_tip",
                format!("n_tip {} outside 1..={chunks}", self.n_tip),
            ));
        }
        for (head, list) in &self.entries {
            let at = |i: usize, field: &str| format!("/heads/{head}/{i}/{field}");
            if list.len() != self.n_tip {
                return Err(FasaError::validation(
                    format!("/heads/{head}"),
                    format!("{} chunks listed, n_tip is {}", list.len(), self.n_tip),
                ));
            }
            let mut seen = vec![false; chunks];
            for (i, c) in list.iter().enumerate() {
                if c.chunk.get() >= chunks {
                    return Err(FasaError::validation(
                        at(i, "chunk"),
                        format!("chunk {} out of range", c.chunk),
                    ));
                }
                if std::mem::replace(&mut seen[c.chunk.get()], true) {
                    return Err(FasaError::validation(
                        at(i, "chunk"),
                        format!("duplicate chunk {}", c.chunk),
                    ));
                }
                if !(0.0..=1.0).contains(&c.mean_ca) {
                    return Err(FasaError::validation(
                        at(i, "mean_ca"),
                        format!("{} outside [0, 1]", c.mean_ca),
                    ));
                }
                if i > 0 && !ranks_before(&list[i - 1], c) {
                    return Err(FasaError::validation(
                        at(i, "mean_ca"),
                        "entries not sorted by mean CA then chunk",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn ranks_before(a: &DominantChunk, b: &DominantChunk) -> bool {
    a.mean_ca > b.mean_ca || (a.mean_ca == b.mean_ca && a.chunk < b.chunk)
}

/// Mean agreement of every chunk with the full head, in chunk order.
pub fn chunk_mean_ca(samples: &[HeadSample], k: AgreementWindow, cfg: &RopeConfig) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(FasaError::invalid("no calibration samples"));
    }
    let mut sums = vec![0.0f64; cfg.num_chunks()];
    for s in samples {
        let full_top = topk_indices(&full_scores(s, cfg)?, k);
        for (i, acc) in sums.iter_mut().enumerate() {
            *acc += ca_against(&full_top, &fc_scores(s, ChunkIndex(i), cfg)?, k).value();
        }
    }
    let n = samples.len() as f64;
    Ok(sums.into_iter().map(|x| x / n).collect())
}

/// The `n_tip` chunks with the highest mean agreement, best first; ties go to
/// the smaller chunk index.
pub fn calibrate_head(
    samples: &[HeadSample],
    n_tip: usize,
    k: AgreementWindow,
    cfg: &RopeConfig,
) -> Result<Vec<DominantChunk>> {
    if n_tip == 0 || n_tip > cfg.num_chunks() {
        return Err(FasaError::invalid(format!(
            "n_tip {n_tip} outside 1..={}",
            cfg.num_chunks()
        )));
    }
    let means = chunk_mean_ca(samples, k, cfg)?;
    let mut ranked: Vec<DominantChunk> = means
        .into_iter()
        .enumerate()
        .map(|(i, mean_ca)| DominantChunk {
            chunk: ChunkIndex(i),
            mean_ca,
        })
        .collect();
    ranked.sort_by(|a, b| b.mean_ca.total_cmp(&a.mean_ca).then(a.chunk.cmp(&b.chunk)));
    ranked.truncate(n_tip);
    Ok(ranked)
}

/// Calibrates every head of the corpus independently.
pub fn calibrate(corpus: &CalibrationCorpus, n_tip: usize, k: AgreementWindow) -> Result<DominantSet> {
    let mut entries = BTreeMap::new();
    for (head, samples) in corpus.iter() {
        let list = calibrate_head(samples, n_tip, k, &corpus.cfg).map_err(|e| e.for_head(head))?;
        entries.insert(head, list);
    }
    let set = DominantSet {
        cfg: corpus.cfg,
        n_tip,
        window: k,
        entries,
        provenance: corpus.provenance.clone(),
    };
    set.validate()?;
    Ok(set)
}

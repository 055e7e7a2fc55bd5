//! Synthetic corpora with planted dominant chunks.
//!
//! For every sample the query sits at the last position `t - 1` and each of
//! its chunks is a random unit 2-vector. For a planted chunk `i` and an
//! important token `j`, the key chunk is the query chunk rotated forward by
//! `(t - 1 - j) * theta_i` and scaled by the amplitude, so that chunk's score
//! at `j` is exactly the amplitude. Every other key coordinate is Gaussian
//! noise with standard deviation `sigma`. Values are standard Gaussian.
//!
//! Draw order per sample: important tokens, query chunk angles, key noise
//! (row-major, skipping planted cells), values (row-major).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rng::Xoshiro256StarStar;
use crate::calibration::{CalibrationCorpus, HeadId};
use crate::error::{FasaError, Result};
use crate::matrix::Matrix;
use crate::rope::{rotate_chunk, ChunkIndex, RopeConfig, DEFAULT_BASE};
use crate::scores::HeadSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub d: usize,
    pub t: usize,
    #[serde(default = "default_base")]
    pub base: f64,
    pub planted: Vec<usize>,
    /// Number of important tokens per sample.
    pub important: usize,
    pub amplitude: f64,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "one")]
    pub heads: usize,
}

fn default_base() -> f64 {
    DEFAULT_BASE
}

fn one() -> usize {
    1
}

impl PlantedSpec {
    /// One head, one sample.
    pub fn new(
        d: usize,
        t: usize,
        planted: Vec<usize>,
        important: usize,
        amplitude: f64,
        sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            d,
            t,
            base: DEFAULT_BASE,
            planted,
            important,
            amplitude,
            sigma,
            seed,
            samples: 1,
            layers: 1,
            heads: 1,
        }
    }

    pub fn rope(&self) -> Result<RopeConfig> {
        RopeConfig::new(self.d, self.base)
    }

    pub fn validate(&self) -> Result<RopeConfig> {
        let cfg = self.rope()?;
        if self.t == 0 {
            return Err(FasaError::invalid("context length must be positive"));
        }
        if self.planted.is_empty() || self.planted.len() > cfg.num_chunks() {
            return Err(FasaError::invalid(format!(
                "planted set must hold 1..={} chunks, got {}",
                cfg.num_chunks(),
                self.planted.len()
            )));
        }
        let mut seen = vec![false; cfg.num_chunks()];
        for &p in &self.planted {
            if p >= cfg.num_chunks() || std::mem::replace(&mut seen[p], true) {
                return Err(FasaError::invalid(format!(
                    "planted chunk {p} out of range or repeated"
                )));
            }
        }
        if self.important == 0 || self.important > self.t {
            return Err(FasaError::invalid(format!(
                "{} important tokens requested from a context of {}",
                self.important, self.t
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(FasaError::invalid("amplitude must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(FasaError::invalid("sigma must be positive"));
        }
        if self.samples == 0 || self.layers == 0 || self.heads == 0 {
            return Err(FasaError::invalid("samples, layers and heads must be positive"));
        }
        Ok(cfg)
    }
}

/// What was planted, per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub planted: BTreeMap<HeadId, Vec<ChunkIndex>>,
    /// Important token positions per head, one list per sample.
    pub important: BTreeMap<HeadId, Vec<Vec<usize>>>,
}

impl PlantedTruth {
    pub fn planted_for(&self, head: HeadId) -> Option<&[ChunkIndex]> {
        self.planted.get(&head).map(Vec::as_slice)
    }
}

fn planted_sample(
    spec: &PlantedSpec,
    cfg: &RopeConfig,
    is_planted: &[bool],
    rng: &mut Xoshiro256StarStar,
) -> (HeadSample, Vec<usize>) {
    let (d, t) = (spec.d, spec.t);
    let q_pos = t - 1;
    let important = rng.sample_distinct(t, spec.important);
    let mut is_important = vec![false; t];
    for &j in &important {
        is_important[j] = true;
    }

    let mut q64 = Vec::with_capacity(cfg.num_chunks());
    for _ in 0..cfg.num_chunks() {
        let phi = std::f64::consts::TAU * rng.uniform();
        q64.push([libm::cos(phi), libm::sin(phi)]);
    }
    let q: Vec<f32> = q64.iter().flat_map(|c| [c[0] as f32, c[1] as f32]).collect();

    let freqs = cfg.frequencies();
    let mut keys = Matrix::zeros(t, d);
    for (j, &hit) in is_important.iter().enumerate() {
        let row = keys.row_mut(j);
        for (i, f) in freqs.iter().enumerate() {
            let chunk = if is_planted[i] && hit {
                let [x, y] = rotate_chunk(q64[i], (q_pos - j) as f64 * f);
                [spec.amplitude * x, spec.amplitude * y]
            } else {
                [spec.sigma * rng.gaussian(), spec.sigma * rng.gaussian()]
            };
            row[2 * i] = chunk[0] as f32;
            row[2 * i + 1] = chunk[1] as f32;
        }
    }

    let values: Vec<f32> = (0..t * d).map(|_| rng.gaussian() as f32).collect();
    let values = Matrix::from_vec(t, d, values).expect("t*d values");
    (HeadSample::new(q, q_pos, keys, Some(values)), important)
}

/// Deterministically generates a corpus and its ground truth from `spec`.
pub fn synth_planted(spec: &PlantedSpec) -> Result<(CalibrationCorpus, PlantedTruth)> {
    let cfg = spec.validate()?;
    let mut is_planted = vec![false; cfg.num_chunks()];
    for &p in &spec.planted {
        is_planted[p] = true;
    }
    let planted: Vec<ChunkIndex> = {
        let mut p: Vec<ChunkIndex> = spec.planted.iter().map(|&i| ChunkIndex(i)).collect();
        p.sort();
        p
    };

    let provenance = format!(
        "planted d={} t={} P={:?} M={} A={} sigma={} seed={}",
        spec.d, spec.t, spec.planted, spec.important, spec.amplitude, spec.sigma, spec.seed
    );
    let mut corpus = CalibrationCorpus::new(cfg, provenance);
    let mut truth = PlantedTruth {
        planted: BTreeMap::new(),
        important: BTreeMap::new(),
    };
    for layer in 0..spec.layers {
        for head in 0..spec.heads {
            let id = HeadId::new(layer, head);
            let mut rng = Xoshiro256StarStar::for_head(spec.seed, layer, head);
            let mut tokens = Vec::with_capacity(spec.samples);
            for _ in 0..spec.samples {
                let (sample, important) = planted_sample(spec, &cfg, &is_planted, &mut rng);
                corpus.push(id, sample)?;
                tokens.push(important);
            }
            truth.planted.insert(id, planted.clone());
            truth.important.insert(id, tokens);
        }
    }
    Ok((corpus, truth))
}

/// Copies every head of `other` into `into` under `rename(head)`.
pub fn merge_corpus(
    into: &mut CalibrationCorpus,
    other: &CalibrationCorpus,
    rename: impl Fn(HeadId) -> HeadId,
) -> Result<()> {
    if into.cfg != other.cfg {
        return Err(FasaError::invalid("corpora use different RoPE configurations"));
    }
    for (head, samples) in other.iter() {
        for s in samples {
            into.push(rename(head), s.clone())?;
        }
    }
    Ok(())
}

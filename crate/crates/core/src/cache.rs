//! Tiered KV-cache layout with byte accounting, plus closed-form footprint,
//! speedup, and traffic models.
//!
//! The "fast" tier keeps the dominant-chunk key coordinates of every token.
//! The "slow" tier keeps the remaining key coordinates and all values. Tiers
//! are logical stores; only byte counters distinguish them.

use serde::{Deserialize, Serialize};

use crate::error::{FasaError, Result};
use crate::matrix::Matrix;
use crate::rope::{ChunkIndex, RopeConfig};

/// 16-bit storage.
pub const DEFAULT_BYTES_PER_ELEM: usize = 2;

/// Cumulative bytes moved or read, per cache instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficCounters {
    /// Fast-tier bytes read while scoring every cached token.
    pub read: u64,
    /// Fast-tier bytes read when assembling selected rows.
    pub gather: u64,
    /// Bytes moved from the slow tier to the fast tier.
    pub transfer: u64,
}

impl TrafficCounters {
    pub fn total(&self) -> u64 {
        self.read + self.gather + self.transfer
    }

    /// Fast-tier reads of both kinds.
    pub fn fast_reads(&self) -> u64 {
        self.read + self.gather
    }

    pub fn since(&self, earlier: &TrafficCounters) -> TrafficCounters {
        TrafficCounters {
            read: self.read - earlier.read,
            gather: self.gather - earlier.gather,
            transfer: self.transfer - earlier.transfer,
        }
    }
}

/// Full key and value rows for a set of selected positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Fetched {
    pub keys: Matrix,
    pub values: Matrix,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TieredCache {
    head_dim: usize,
    dom: Vec<ChunkIndex>,
    hot_cols: Vec<usize>,
    cold_cols: Vec<usize>,
    hot_keys: Matrix,
    cold_keys: Matrix,
    cold_values: Matrix,
    bytes_per_elem: usize,
    counters: TrafficCounters,
}

impl TieredCache {
    /// Empty cache whose hot columns are the coordinates of `dom`, in the
    /// given order.
    pub fn new(cfg: &RopeConfig, dom: &[ChunkIndex], bytes_per_elem: usize) -> Result<Self> {
        crate::scores::check_subset(dom, cfg)?;
        if bytes_per_elem == 0 {
            return Err(FasaError::invalid("bytes per element must be positive"));
        }
        let d = cfg.head_dim();
        let hot_cols: Vec<usize> = dom.iter().flat_map(|c| [c.start(), c.start() + 1]).collect();
        let mut is_hot = vec![false; d];
        for &c in &hot_cols {
            is_hot[c] = true;
        }
        let cold_cols: Vec<usize> = (0..d).filter(|&c| !is_hot[c]).collect();
        Ok(Self {
            head_dim: d,
            dom: dom.to_vec(),
            hot_keys: Matrix::with_cols(hot_cols.len()),
            cold_keys: Matrix::with_cols(cold_cols.len()),
            cold_values: Matrix::with_cols(d),
            hot_cols,
            cold_cols,
            bytes_per_elem,
            counters: TrafficCounters::default(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.hot_keys.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn dominant_chunks(&self) -> &[ChunkIndex] {
        &self.dom
    }

    pub fn d_dom(&self) -> usize {
        self.hot_cols.len()
    }

    pub fn d_nondom(&self) -> usize {
        self.cold_cols.len()
    }

    pub fn bytes_per_elem(&self) -> usize {
        self.bytes_per_elem
    }

    pub fn counters(&self) -> TrafficCounters {
        self.counters
    }

    /// Key coordinates held in the fast tier, in hot-column order.
    pub fn hot_columns(&self) -> &[usize] {
        &self.hot_cols
    }

    /// Splits `k` across the tiers and stores `v` in the slow tier. Not a read.
    pub fn append(&mut self, k: &[f32], v: &[f32]) -> Result<()> {
        if k.len() != self.head_dim || v.len() != self.head_dim {
            return Err(FasaError::state(format!(
                "appending key/value of length {}/{} to a cache of head dimension {}",
                k.len(),
                v.len(),
                self.head_dim
            )));
        }
        let hot: Vec<f32> = self.hot_cols.iter().map(|&c| k[c]).collect();
        let cold: Vec<f32> = self.cold_cols.iter().map(|&c| k[c]).collect();
        self.hot_keys.push_row(&hot)?;
        self.cold_keys.push_row(&cold)?;
        self.cold_values.push_row(v)?;
        Ok(())
    }

    /// The whole fast-tier key store, charged as a full scan.
    pub fn scan_hot(&mut self) -> &Matrix {
        self.counters.read += self.bytes(self.len() * self.d_dom());
        &self.hot_keys
    }

    /// Hot store without accounting, for inspection.
    pub fn hot_keys(&self) -> &Matrix {
        &self.hot_keys
    }

    /// Rebuilds the full pre-RoPE key of token `j` without accounting.
    pub fn reassemble_key(&self, j: usize) -> Result<Vec<f32>> {
        if j >= self.len() {
            return Err(FasaError::invalid(format!(
                "position {j} not cached (t = {})",
                self.len()
            )));
        }
        let mut k = vec![0.0f32; self.head_dim];
        self.combine_into(j, &mut k);
        Ok(k)
    }

    fn combine_into(&self, j: usize, out: &mut [f32]) {
        for (&c, &x) in self.hot_cols.iter().zip(self.hot_keys.row(j)) {
            out[c] = x;
        }
        for (&c, &x) in self.cold_cols.iter().zip(self.cold_keys.row(j)) {
            out[c] = x;
        }
    }

    /// Full keys and values for the given ascending positions. Hot parts are
    /// charged as fast-tier reads; cold key parts and values as transfers.
    pub fn fetch_selected(&mut self, positions: &[usize]) -> Result<Fetched> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.len()) {
            return Err(FasaError::invalid(format!(
                "position {p} not cached (t = {})",
                self.len()
            )));
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FasaError::invalid("selection is not strictly ascending"));
        }
        let d = self.head_dim;
        let n = positions.len();
        let mut keys = Matrix::zeros(n, d);
        let mut values = Matrix::zeros(n, d);
        for (r, &j) in positions.iter().enumerate() {
            self.combine_into(j, keys.row_mut(r));
            values.row_mut(r).copy_from_slice(self.cold_values.row(j));
        }
        self.counters.gather += self.bytes(n * self.d_dom());
        self.counters.transfer += self.bytes(n * (self.d_nondom() + d));
        Ok(Fetched {
            keys,
            values,
            positions: positions.to_vec(),
        })
    }

    /// Every key and value, charged like a fetch of all positions.
    pub fn fetch_all(&mut self) -> Fetched {
        let all: Vec<usize> = (0..self.len()).collect();
        self.fetch_selected(&all).expect("all cached positions are valid")
    }

    #[inline]
    fn bytes(&self, elems: usize) -> u64 {
        (elems * self.bytes_per_elem) as u64
    }
}

/// Bytes a dense decode step reads at context length `t`: all keys and values.
pub fn dense_step_bytes(t: usize, d: usize, bytes_per_elem: usize) -> u64 {
    (2 * t * d * bytes_per_elem) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub n_layers: usize,
    pub seq_len: usize,
    pub budget: usize,
    pub head_dim: usize,
    pub d_dom: usize,
    pub bytes_per_elem: usize,
}

impl CacheGeometry {
    pub fn new(
        n_layers: usize,
        seq_len: usize,
        budget: usize,
        head_dim: usize,
        d_dom: usize,
        bytes_per_elem: usize,
    ) -> Result<Self> {
        let g = Self {
            n_layers,
            seq_len,
            budget,
            head_dim,
            d_dom,
            bytes_per_elem,
        };
        if [n_layers, seq_len, budget, head_dim, d_dom, bytes_per_elem].contains(&0) {
            return Err(FasaError::invalid(format!("cache geometry has a zero field: {g:?}")));
        }
        if d_dom > head_dim {
            return Err(FasaError::invalid(format!(
                "d_dom {d_dom} exceeds head dimension {head_dim}"
            )));
        }
        if budget > seq_len {
            return Err(FasaError::invalid(format!(
                "budget {budget} exceeds sequence length {seq_len}"
            )));
        }
        Ok(g)
    }

    pub fn d_nondom(&self) -> usize {
        self.head_dim - self.d_dom
    }
}

/// Fast-tier bytes of the tiered layout:
/// `layers * (L*d_dom + b*d_nondom + b*d) * bytes`.
pub fn footprint_fasa_m(g: &CacheGeometry) -> u64 {
    let per_layer = g.seq_len * g.d_dom + g.budget * g.d_nondom() + g.budget * g.head_dim;
    (g.n_layers * per_layer * g.bytes_per_elem) as u64
}

/// Bytes of a dense cache: `layers * L * 2d * bytes`.
pub fn full_cache_footprint(g: &CacheGeometry) -> u64 {
    (g.n_layers * g.seq_len * 2 * g.head_dim * g.bytes_per_elem) as u64
}

/// Decode-step speedup `1 / (n_tip/d + n_fac/t)`.
pub fn speedup_model(t: u64, d: usize, n_tip: usize, n_fac: usize) -> f64 {
    1.0 / (n_tip as f64 / d as f64 + n_fac as f64 / t as f64)
}

/// Limit of [`speedup_model`] as `t` grows: `d / n_tip`.
pub fn speedup_limit(d: usize, n_tip: usize) -> f64 {
    d as f64 / n_tip as f64
}

/// Fraction of dense KV traffic loaded per step, `n_tip/d + n_fac/t`, capped
/// at 1.
pub fn traffic_fraction(t: u64, d: usize, n_tip: usize, n_fac: usize) -> f64 {
    (n_tip as f64 / d as f64 + n_fac as f64 / t as f64).min(1.0)
}

//! Rotary position embedding expressed as a direct sum of 2D rotations.
//!
//! Chunk `i` of a head vector is the coordinate pair `(2i, 2i+1)` and is
//! rotated by `m * theta_i` at position `m`, with `theta_i = base^(-2i/d)`.
//! Inputs are `f32`; all trigonometry and accumulation run in `f64` through
//! `libm` so results do not depend on the platform math library.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FasaError, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;

/// Index of a frequency chunk within a head, zero based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkIndex(pub usize);

impl ChunkIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// First coordinate of the chunk; the second is `start() + 1`.
    #[inline]
    pub fn start(self) -> usize {
        2 * self.0
    }
}

impl fmt::Display for ChunkIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<usize> for ChunkIndex {
    fn from(i: usize) -> Self {
        Self(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    head_dim: usize,
    base: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim < 2 || !head_dim.is_multiple_of(2) {
            return Err(FasaError::invalid(format!(
                "head dimension must be even and at least 2, got {head_dim}"
            )));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(FasaError::invalid(format!("RoPE base must exceed 1, got {base}")));
        }
        Ok(Self { head_dim, base })
    }

    pub fn with_default_base(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, DEFAULT_BASE)
    }

    #[inline]
    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    #[inline]
    pub fn base(&self) -> f64 {
        self.base
    }

    #[inline]
    pub fn num_chunks(&self) -> usize {
        self.head_dim / 2
    }

    pub fn chunks(&self) -> impl Iterator<Item = ChunkIndex> {
        (0..self.num_chunks()).map(ChunkIndex)
    }

    pub fn check_chunk(&self, i: ChunkIndex) -> Result<()> {
        if i.0 >= self.num_chunks() {
            return Err(FasaError::invalid(format!(
                "chunk index {} out of range for {} chunks",
                i.0,
                self.num_chunks()
            )));
        }
        Ok(())
    }

    pub fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.head_dim {
            return Err(FasaError::shape(format!(
                "{what} has length {len}, head dimension is {}",
                self.head_dim
            )));
        }
        Ok(())
    }

    /// Angular frequency of chunk `i`, without range checking.
    #[inline]
    pub(crate) fn freq(&self, i: usize) -> f64 {
        libm::pow(self.base, -2.0 * i as f64 / self.head_dim as f64)
    }

    /// All chunk frequencies in chunk order.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.num_chunks()).map(|i| self.freq(i)).collect()
    }
}

/// Angular frequency `base^(-2i/d)` of chunk `i`.
pub fn theta(i: ChunkIndex, cfg: &RopeConfig) -> Result<f64> {
    cfg.check_chunk(i)?;
    Ok(cfg.freq(i.0))
}

/// Rotates a 2-vector counter-clockwise by `angle` radians.
#[inline]
pub fn rotate_chunk(chunk: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    let [x, y] = chunk;
    [x * c - y * s, x * s + y * c]
}

/// Rotates every chunk of `v` by `pos * theta_i`.
pub fn apply_rope(v: &[f32], pos: usize, cfg: &RopeConfig) -> Result<Vec<f64>> {
    cfg.check_len("vector", v.len())?;
    Ok(rope_unchecked(v, pos, cfg))
}

pub(crate) fn rope_unchecked(v: &[f32], pos: usize, cfg: &RopeConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for (i, pair) in v.chunks_exact(2).enumerate() {
        let angle = pos as f64 * cfg.freq(i);
        let [x, y] = rotate_chunk([pair[0] as f64, pair[1] as f64], angle);
        out.push(x);
        out.push(y);
    }
    out
}

/// Score contribution of one chunk pair for a query and key separated by
/// `delta * theta` radians: `q R(-delta*theta) k`, i.e. the dot product of the
/// query rotated to its position with the key rotated to its own.
#[inline]
pub(crate) fn chunk_score(q: [f64; 2], k: [f64; 2], angle: f64) -> f64 {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    c * (q[0] * k[0] + q[1] * k[1]) + s * (q[0] * k[1] - q[1] * k[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn cfg(d: usize) -> RopeConfig {
        RopeConfig::with_default_base(d).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
        v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn config_validation() {
        assert!(RopeConfig::new(0, 10_000.0).is_err());
        assert!(RopeConfig::new(3, 10_000.0).is_err());
        assert!(RopeConfig::new(4, 1.0).is_err());
        assert!(RopeConfig::new(4, f64::NAN).is_err());
        assert_eq!(cfg(128).num_chunks(), 64);
    }

    #[test]
    fn theta_values() {
        assert_eq!(theta(ChunkIndex(0), &cfg(64)).unwrap(), 1.0);
        // 10000^(-2/4) = 10000^(-1/2)
        let t = theta(ChunkIndex(1), &cfg(4)).unwrap();
        assert!((t - 0.01).abs() < 1e-15, "{t}");
        let t = theta(ChunkIndex(32), &cfg(128)).unwrap();
        assert!((t - 0.01).abs() < 1e-15, "{t}");
        assert!(theta(ChunkIndex(2), &cfg(4)).is_err());
    }

    #[test]
    fn theta_strictly_decreasing() {
        let f = cfg(128).frequencies();
        assert!(f.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rotate_examples() {
        assert_eq!(rotate_chunk([1.0, 0.0], 0.0), [1.0, 0.0]);
        let [x, y] = rotate_chunk([1.0, 0.0], FRAC_PI_2);
        assert!(x.abs() < 1e-15 && (y - 1.0).abs() < 1e-15);
        // explicit 2x2 matrix product
        let (c, s) = (1.0f64.cos(), 1.0f64.sin());
        let expect = [3.0 * c - 4.0 * s, 3.0 * s + 4.0 * c];
        let got = rotate_chunk([3.0, 4.0], 1.0);
        assert!((got[0] - expect[0]).abs() < 1e-14 && (got[1] - expect[1]).abs() < 1e-14);
    }

    #[test]
    fn apply_rope_examples() {
        let v = [0.3f32, -1.2, 4.0, 0.5];
        let out = apply_rope(&v, 0, &cfg(4)).unwrap();
        assert_eq!(out, v.iter().map(|&x| x as f64).collect::<Vec<_>>());

        let out = apply_rope(&[1.0, 0.0, 1.0, 0.0], 1, &cfg(4)).unwrap();
        let expect = [1f64.cos(), 1f64.sin(), 0.01f64.cos(), 0.01f64.sin()];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(apply_rope(&[1.0; 3], 0, &cfg(4)), Err(FasaError::Shape(_))));
    }

    #[test]
    fn chunk_score_matches_rotated_dot() {
        let q = [0.7, -0.2];
        let k = [1.5, 0.4];
        let (tq, tk, th) = (37.0, 11.0, 0.3);
        let rq = rotate_chunk(q, tq * th);
        let rk = rotate_chunk(k, tk * th);
        let direct = rq[0] * rk[0] + rq[1] * rk[1];
        assert!((chunk_score(q, k, (tq - tk) * th) - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn norm_preserved(v in proptest::collection::vec(-10.0f32..10.0, 16), pos in 0usize..100_000) {
            let out = apply_rope(&v, pos, &cfg(16)).unwrap();
            let n0 = norm(v.iter().map(|&x| x as f64));
            let n1 = norm(out.iter().copied());
            prop_assert!((n0 - n1).abs() <= 1e-6 * n0.max(1e-30));
        }

        #[test]
        fn relative_position_law(
            q in proptest::collection::vec(-1.0f32..1.0, 8),
            k in proptest::collection::vec(-1.0f32..1.0, 8),
            t2 in 0usize..4096,
            gap in 0usize..4096,
        ) {
            let c = cfg(8);
            let t1 = t2 + gap;
            let lhs = dot(&apply_rope(&q, t1, &c).unwrap(), &apply_rope(&k, t2, &c).unwrap());
            let kk: Vec<f64> = k.iter().map(|&x| x as f64).collect();
            let rhs = dot(&apply_rope(&q, gap, &c).unwrap(), &kk);
            let scale = norm(q.iter().map(|&x| x as f64)) * norm(kk.iter().copied());
            prop_assert!((lhs - rhs).abs() <= 1e-4 * scale.max(1e-12));
        }

        #[test]
        fn chunks_are_independent(
            v in proptest::collection::vec(-3.0f32..3.0, 12),
            j in 0usize..6,
            dx in -5.0f32..5.0,
            pos in 0usize..5000,
        ) {
            let c = cfg(12);
            let a = apply_rope(&v, pos, &c).unwrap();
            let mut w = v.clone();
            w[2 * j] += dx;
            w[2 * j + 1] -= dx;
            let b = apply_rope(&w, pos, &c).unwrap();
            for i in (0..6).filter(|&i| i != j) {
                prop_assert_eq!(a[2 * i].to_bits(), b[2 * i].to_bits());
                prop_assert_eq!(a[2 * i + 1].to_bits(), b[2 * i + 1].to_bits());
            }
        }
    }
}

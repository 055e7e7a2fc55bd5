//! Contextual agreement: how much the top-K token set of a proxy score vector
//! overlaps the top-K set of the full-head scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{FasaError, Result};
use crate::rope::{ChunkIndex, RopeConfig};
use crate::scores::{fc_scores, full_scores, subset_scores, HeadSample, ScoreVector};

/// Top-K comparison width. Always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct AgreementWindow(usize);

impl AgreementWindow {
    pub const DEFAULT: Self = Self(256);

    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(FasaError::invalid("agreement window must be at least 1"));
        }
        Ok(Self(k))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }

    /// Effective width for a context of `t` tokens.
    #[inline]
    pub fn clamp(self, t: usize) -> usize {
        self.0.min(t)
    }
}

impl Default for AgreementWindow {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<usize> for AgreementWindow {
    type Error = FasaError;

    fn try_from(k: usize) -> Result<Self> {
        Self::new(k)
    }
}

impl From<AgreementWindow> for usize {
    fn from(w: AgreementWindow) -> usize {
        w.0
    }
}

/// An agreement value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaScore(f64);

impl CaScore {
    pub(crate) fn new(v: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&v), "CA out of range: {v}");
        Self(v)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Descending by value, then ascending by index. `-0.0` and `0.0` compare
/// equal so they fall through to the index tie-break.
#[inline]
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    let (x, y) = (scores[a] + 0.0, scores[b] + 0.0);
    y.total_cmp(&x).then(a.cmp(&b))
}

/// Positions of the `min(k, len)` largest entries, ascending. Ties go to the
/// smaller position.
pub fn top_positions(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Indices of the top `min(K, t)` logits in ascending index order.
pub fn topk_indices(scores: &ScoreVector, k: AgreementWindow) -> Vec<usize> {
    top_positions(&scores.logits, k.get())
}

/// Size of the intersection of two ascending index lists.
pub fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|topK(full) ∩ topK(proxy)| / min(K, t)`.
pub fn ca(full: &ScoreVector, proxy: &ScoreVector, k: AgreementWindow) -> Result<CaScore> {
    if full.len() != proxy.len() {
        return Err(FasaError::shape(format!(
            "score vectors differ in length: {} vs {}",
            full.len(),
            proxy.len()
        )));
    }
    if full.is_empty() {
        return Err(FasaError::invalid("agreement of empty score vectors"));
    }
    let a = topk_indices(full, k);
    Ok(ca_against(&a, proxy, k))
}

/// Agreement against an already-computed full-head top-K set.
pub(crate) fn ca_against(full_top: &[usize], proxy: &ScoreVector, k: AgreementWindow) -> CaScore {
    let b = topk_indices(proxy, k);
    CaScore::new(overlap(full_top, &b) as f64 / k.clamp(proxy.len()) as f64)
}

fn mean_over<F>(samples: &[HeadSample], k: AgreementWindow, cfg: &RopeConfig, proxy: F) -> Result<CaScore>
where
    F: Fn(&HeadSample) -> Result<ScoreVector>,
{
    if samples.is_empty() {
        return Err(FasaError::invalid("no samples to average over"));
    }
    let mut total = 0.0;
    for s in samples {
        let full = full_scores(s, cfg)?;
        total += ca(&full, &proxy(s)?, k)?.value();
    }
    Ok(CaScore::new((total / samples.len() as f64).clamp(0.0, 1.0)))
}

/// Mean over samples of the agreement between the full head and chunk `i`.
pub fn mean_ca(samples: &[HeadSample], i: ChunkIndex, k: AgreementWindow, cfg: &RopeConfig) -> Result<CaScore> {
    cfg.check_chunk(i)?;
    mean_over(samples, k, cfg, |s| fc_scores(s, i, cfg))
}

/// Mean over samples of the agreement between the full head and the summed
/// scores of the chunks in `idx`.
pub fn compound_ca(
    samples: &[HeadSample],
    idx: &[ChunkIndex],
    k: AgreementWindow,
    cfg: &RopeConfig,
) -> Result<CaScore> {
    crate::scores::check_subset(idx, cfg)?;
    mean_over(samples, k, cfg, |s| subset_scores(s, idx, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn w(k: usize) -> AgreementWindow {
        AgreementWindow::new(k).unwrap()
    }

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec())
    }

    /// Brute-force reference: full sort by (value desc, index asc).
    fn brute_topk(v: &[f64], k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
        let mut out: Vec<usize> = idx.into_iter().take(k).collect();
        out.sort();
        out
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_indices(&sv(&[3.0, 1.0, 2.0, 0.0]), w(2)), vec![0, 2]);
        assert_eq!(topk_indices(&sv(&[1.0; 5]), w(2)), vec![0, 1]);
        assert_eq!(topk_indices(&sv(&[4.0, 2.0, 9.0]), w(10)), vec![0, 1, 2]);
        assert_eq!(topk_indices(&sv(&[0.0, -0.0, 0.0]), w(1)), vec![0]);
        assert_eq!(topk_indices(&sv(&[-0.0, 0.0]), w(1)), vec![0]);
    }

    #[test]
    fn window_rejects_zero() {
        assert!(AgreementWindow::new(0).is_err());
        assert_eq!(AgreementWindow::default().get(), 256);
    }

    #[test]
    fn ca_examples() {
        let full = sv(&[3.0, 1.0, 2.0, 0.0]);
        assert_eq!(ca(&full, &full, w(2)).unwrap().value(), 1.0);
        assert_eq!(ca(&full, &sv(&[3.0, 2.0, 1.0, 0.0]), w(2)).unwrap().value(), 0.5);
        let dec = sv(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        let neg = sv(&[-6.0, -5.0, -4.0, -3.0, -2.0, -1.0]);
        assert_eq!(ca(&dec, &neg, w(3)).unwrap().value(), 0.0);
        assert!(matches!(ca(&full, &sv(&[1.0]), w(1)), Err(FasaError::Shape(_))));
    }

    #[test]
    fn ca_clamps_short_context() {
        let a = sv(&[1.0, 2.0]);
        let b = sv(&[2.0, 1.0]);
        assert_eq!(ca(&a, &b, w(256)).unwrap().value(), 1.0);
    }

    fn one_sample(q: [f32; 2], keys: &[[f32; 2]]) -> HeadSample {
        HeadSample::new(q.to_vec(), keys.len() - 1, Matrix::from_rows(keys).unwrap(), None)
    }

    #[test]
    fn mean_ca_single_chunk_head() {
        let cfg = RopeConfig::with_default_base(2).unwrap();
        let s = one_sample([0.3, -0.8], &[[1.0, 0.0], [0.2, 0.9], [-0.4, 0.4], [0.7, 0.7]]);
        assert_eq!(mean_ca(&[s], ChunkIndex(0), w(2), &cfg).unwrap().value(), 1.0);
    }

    /// d = 4 sample whose chunk-0 and chunk-1 logits are exactly `a` and `b`
    /// (keys are counter-rotated against a query of (1,0,1,0)).
    fn planted(a: &[f32], b: &[f32]) -> HeadSample {
        let t = a.len();
        let q_pos = t - 1;
        let rows: Vec<Vec<f32>> = (0..t)
            .map(|j| {
                let delta = (q_pos - j) as f64;
                let (s0, c0) = delta.sin_cos();
                let (s1, c1) = (delta * 0.01).sin_cos();
                vec![
                    (a[j] as f64 * c0) as f32,
                    (a[j] as f64 * s0) as f32,
                    (b[j] as f64 * c1) as f32,
                    (b[j] as f64 * s1) as f32,
                ]
            })
            .collect();
        HeadSample::new(vec![1.0, 0.0, 1.0, 0.0], q_pos, Matrix::from_rows(&rows).unwrap(), None)
    }

    #[test]
    fn mean_ca_averages() {
        let cfg = RopeConfig::with_default_base(4).unwrap();
        let a = planted(&[4.0, 3.0, 0.0, 0.0], &[0.0; 4]);
        // full = [4, 5, 3, -5] -> {0,1}; chunk 0 -> {0,2}
        let b = planted(&[4.0, 0.0, 3.0, 0.0], &[0.0, 5.0, 0.0, -5.0]);
        let one = |s: &HeadSample| {
            mean_ca(std::slice::from_ref(s), ChunkIndex(0), w(2), &cfg)
                .unwrap()
                .value()
        };
        assert_eq!(one(&a), 1.0);
        assert_eq!(one(&b), 0.5);
        assert_eq!(mean_ca(&[a, b], ChunkIndex(0), w(2), &cfg).unwrap().value(), 0.75);
        assert!(mean_ca(&[], ChunkIndex(0), w(2), &cfg).is_err());
        assert!(mean_ca(&[planted(&[1.0], &[1.0])], ChunkIndex(2), w(2), &cfg).is_err());
    }

    #[test]
    fn compound_all_chunks_is_one() {
        let cfg = RopeConfig::with_default_base(4).unwrap();
        let s = HeadSample::new(
            vec![0.3, -0.2, 0.9, 0.4],
            4,
            Matrix::from_rows(&[
                [0.1f32, 0.5, -0.3, 0.2],
                [0.9, -0.1, 0.4, 0.4],
                [-0.6, 0.2, 0.8, -0.7],
                [0.3, 0.3, 0.3, 0.3],
                [0.0, -0.9, 0.1, 0.6],
            ])
            .unwrap(),
            None,
        );
        let all: Vec<ChunkIndex> = cfg.chunks().collect();
        assert_eq!(
            compound_ca(std::slice::from_ref(&s), &all, w(2), &cfg).unwrap().value(),
            1.0
        );
        assert!(compound_ca(&[s], &[], w(2), &cfg).is_err());
    }

    proptest! {
        #[test]
        fn topk_matches_brute_force(v in proptest::collection::vec(-4i8..4, 1..60), k in 1usize..70) {
            // small integer range forces plenty of ties
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            prop_assert_eq!(top_positions(&v, k), brute_topk(&v, k));
        }

        #[test]
        fn ca_bounds_and_symmetry(a in proptest::collection::vec(-5.0f64..5.0, 1..40), seed in any::<u64>(), k in 1usize..50) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x * ((seed >> (i % 64)) & 1) as f64 - i as f64 * 0.01).collect();
            let (a, b) = (sv(&a), sv(&b));
            let ab = ca(&a, &b, w(k)).unwrap().value();
            let ba = ca(&b, &a, w(k)).unwrap().value();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ca(&a, &a, w(k)).unwrap().value(), 1.0);
        }

        #[test]
        fn ca_monotone_invariant(a in proptest::collection::vec(-5.0f64..5.0, 1..40), b in proptest::collection::vec(-5.0f64..5.0, 40), k in 1usize..50) {
            let b = &b[..a.len()];
            let base = ca(&sv(&a), &sv(b), w(k)).unwrap();
            let warped: Vec<f64> = b.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(base, ca(&sv(&a), &sv(&warped), w(k)).unwrap());
        }

        #[test]
        fn window_nesting(v in proptest::collection::vec(-3i8..3, 1..50), k in 1usize..50) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let small = top_positions(&v, k);
            let big = top_positions(&v, k + 1);
            prop_assert_eq!(overlap(&small, &big), small.len());
        }
    }
}

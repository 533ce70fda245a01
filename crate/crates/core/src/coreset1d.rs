//! Exponential chunk partition of a sorted 1D multiset and the weighted
//! 1-median coreset built from it.
//!
//! The sorted values are split symmetrically: the outermost `m` values on
//! each side are singleton chunks, and chunk sizes then grow geometrically
//! (by a factor `1 + eps/10`) toward the middle. One representative per chunk,
//! weighted by the chunk size, reproduces the sum-of-distances function of the
//! whole set within a relative `eps/5` at every query.

use std::ops::Range;

use crate::error::{input, Error, Result};
use crate::geometry::NeumaierSum;

/// `ceil(x)`, but values within a relative 1e-9 of an integer snap to it, so
/// that e.g. `1.01 * 100.0` ceils to 101 rather than 102.
pub(crate) fn tolerant_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Which element of a chunk stands in for the whole chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepRule {
    /// The chunk's outermost element (nearest the end of the sorted order).
    #[default]
    First,
    MedianOfChunk,
}

/// Left chunks `L_1..L_M` as 0-based index ranges into the sorted values;
/// right chunk `R_i` mirrors `L_i` from the top end. When `n` is odd, the
/// middle index is left over as an extra unpaired singleton.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPartition {
    n: usize,
    eps: f64,
    m: usize,
    alphas: Vec<usize>,
    chunks: Vec<Range<usize>>,
    middle: Option<usize>,
}

impl ChunkPartition {
    /// Partition with the default singleton prefix `m = ceil(10 / eps)`.
    pub fn new(n: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return input(format!("eps must lie in (0, 1], got {eps}"));
        }
        Self::with_singletons(n, eps, tolerant_ceil(10.0 / eps))
    }

    /// Partition with an explicit singleton prefix length. Only `eps > 0` is
    /// required here; the growth factor is `1 + eps/10`.
    pub fn with_singletons(n: usize, eps: f64, m: usize) -> Result<Self> {
        if n == 0 {
            return input("cannot partition an empty set");
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return input(format!("eps must be positive, got {eps}"));
        }
        if m == 0 {
            return input("singleton prefix length must be positive");
        }
        let half = n / 2;
        let singles = m.min(half);
        let mut chunks: Vec<Range<usize>> = (0..singles).map(|i| i..i + 1).collect();
        let mut alphas = Vec::new();
        if m < half {
            let mut alpha = m;
            alphas.push(alpha);
            while alpha < half {
                let next = tolerant_ceil((1.0 + eps / 10.0) * alpha as f64)
                    .max(alpha + 1)
                    .min(half);
                chunks.push(alpha..next);
                alphas.push(next);
                alpha = next;
            }
        }
        let middle = (n % 2 == 1).then_some(half);
        Ok(Self {
            n,
            eps,
            m,
            alphas,
            chunks,
            middle,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Singleton prefix parameter `m` as requested (may exceed `n / 2`).
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of chunk pairs `M`.
    pub fn pair_count(&self) -> usize {
        self.chunks.len()
    }

    /// Number of leading singleton pairs.
    pub fn singleton_pairs(&self) -> usize {
        self.m.min(self.n / 2)
    }

    /// The boundary sequence `alpha_m, ..., alpha_M`; empty when every
    /// chunk is a singleton.
    pub fn alphas(&self) -> &[usize] {
        &self.alphas
    }

    pub fn left(&self, i: usize) -> Range<usize> {
        self.chunks[i].clone()
    }

    pub fn right(&self, i: usize) -> Range<usize> {
        let r = &self.chunks[i];
        self.n - r.end..self.n - r.start
    }

    pub fn chunk_len(&self, i: usize) -> usize {
        self.chunks[i].len()
    }

    pub fn middle(&self) -> Option<usize> {
        self.middle
    }

    pub fn is_all_singletons(&self) -> bool {
        self.chunks.iter().all(|c| c.len() == 1)
    }

    fn left_rep(&self, i: usize, rule: RepRule) -> usize {
        let c = &self.chunks[i];
        match rule {
            RepRule::First => c.start,
            RepRule::MedianOfChunk => c.start + (c.len() - 1) / 2,
        }
    }

    fn right_rep(&self, i: usize, rule: RepRule) -> usize {
        self.n - 1 - self.left_rep(i, rule)
    }
}

/// Shorthand for [`ChunkPartition::new`].
pub fn build_chunks(n: usize, eps: f64) -> Result<ChunkPartition> {
    ChunkPartition::new(n, eps)
}

/// Representatives of one chunk pair; both share the chunk size as weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepPair {
    pub left: f64,
    pub right: f64,
    pub weight: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coreset1D {
    pairs: Vec<RepPair>,
    middle: Option<f64>,
    eps: f64,
    source_n: usize,
}

impl Coreset1D {
    pub fn pairs(&self) -> &[RepPair] {
        &self.pairs
    }

    pub fn middle(&self) -> Option<f64> {
        self.middle
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn total_weight(&self) -> u64 {
        2 * self.pairs.iter().map(|p| p.weight).sum::<u64>() + self.middle.map_or(0, |_| 1)
    }

    /// Flattened `(value, weight)` list: left representatives outward-in,
    /// the middle element, then right representatives inward-out.
    pub fn weighted(&self) -> Vec<(f64, u64)> {
        let mut out = Vec::with_capacity(2 * self.pairs.len() + 1);
        out.extend(self.pairs.iter().map(|p| (p.left, p.weight)));
        out.extend(self.middle.map(|v| (v, 1)));
        out.extend(self.pairs.iter().rev().map(|p| (p.right, p.weight)));
        out
    }
}

fn check_sorted(values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return input(format!("value {i} is not finite"));
    }
    if let Some(i) = values.windows(2).position(|w| w[0] > w[1]) {
        return input(format!("values are not sorted at position {}", i + 1));
    }
    Ok(())
}

/// Stable ascending sort; rejects non-finite values.
pub fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return input(format!("value {i} is not finite"));
    }
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

pub fn build_coreset(values: &[f64], eps: f64, rule: RepRule) -> Result<Coreset1D> {
    if values.is_empty() {
        return input("cannot build a coreset of an empty set");
    }
    let partition = ChunkPartition::new(values.len(), eps)?;
    build_coreset_on(values, &partition, rule)
}

/// Coreset over an existing partition of `values.len()` indices.
pub fn build_coreset_on(
    values: &[f64],
    partition: &ChunkPartition,
    rule: RepRule,
) -> Result<Coreset1D> {
    check_sorted(values)?;
    if partition.n() != values.len() {
        return input(format!(
            "partition covers {} values, got {}",
            partition.n(),
            values.len()
        ));
    }
    let pairs = (0..partition.pair_count())
        .map(|i| RepPair {
            left: values[partition.left_rep(i, rule)],
            right: values[partition.right_rep(i, rule)],
            weight: partition.chunk_len(i) as u64,
        })
        .collect();
    Ok(Coreset1D {
        pairs,
        middle: partition.middle().map(|i| values[i]),
        eps: partition.eps(),
        source_n: values.len(),
    })
}

fn eval_with(reps: &[(f64, u64)], query: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    if query.is_nan() {
        return input("query is NaN");
    }
    let mut acc = NeumaierSum::new();
    for &(v, w) in reps {
        if v.is_nan() {
            return input("representative value is NaN");
        }
        acc.add(w as f64 * f((v - query).abs()));
    }
    Ok(acc.value())
}

/// `sum w_i |v_i - query|`.
pub fn eval_weighted_l1(reps: &[(f64, u64)], query: f64) -> Result<f64> {
    eval_with(reps, query, |d| d)
}

/// `sum w_i (v_i - query)^2`.
pub fn eval_weighted_l2(reps: &[(f64, u64)], query: f64) -> Result<f64> {
    eval_with(reps, query, |d| d * d)
}

/// `sum w_i transform(|v_i - query|)` for a monotone increasing `transform`.
pub fn eval_weighted_monotone(
    reps: &[(f64, u64)],
    query: f64,
    transform: impl Fn(f64) -> f64,
) -> Result<f64> {
    eval_with(reps, query, transform)
}

/// Move each representative pair by `(left offset, right offset)`. Each
/// offset is bounded by `(eps/20) |left - right|` of its pair.
pub fn perturb(coreset: &Coreset1D, offsets: &[(f64, f64)]) -> Result<Coreset1D> {
    if offsets.len() != coreset.pairs.len() {
        return input(format!(
            "{} offsets for {} representative pairs",
            offsets.len(),
            coreset.pairs.len()
        ));
    }
    let scale = coreset.eps / 20.0;
    let pairs = coreset
        .pairs
        .iter()
        .zip(offsets)
        .enumerate()
        .map(|(i, (p, &(dl, dr)))| {
            let bound = scale * (p.left - p.right).abs();
            for off in [dl, dr] {
                if !(off.abs() <= bound * (1.0 + 1e-12)) {
                    return Err(Error::Perturbation {
                        pair: i,
                        offset: off,
                        bound,
                    });
                }
            }
            Ok(RepPair {
                left: p.left + dl,
                right: p.right + dr,
                weight: p.weight,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Coreset1D {
        pairs,
        middle: coreset.middle,
        eps: coreset.eps,
        source_n: coreset.source_n,
    })
}

/// Largest legal offset magnitude for each pair.
pub fn max_offsets(coreset: &Coreset1D) -> Vec<f64> {
    coreset
        .pairs
        .iter()
        .map(|p| coreset.eps / 20.0 * (p.left - p.right).abs())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Alpha recurrence in exact integer arithmetic, growth = num / den.
    fn alpha_oracle(m: usize, half: usize, growth_num: usize, growth_den: usize) -> Vec<usize> {
        let mut out = vec![m];
        let mut a = m;
        while a < half {
            let next = (a * growth_num).div_ceil(growth_den).min(half);
            out.push(next);
            a = next;
        }
        out
    }

    #[test]
    fn forced_prefix_example() {
        // growth 1 + eps/10 = 1.2 with m = 5 and n = 20.
        let p = ChunkPartition::with_singletons(20, 2.0, 5).unwrap();
        assert_eq!(p.alphas(), alpha_oracle(5, 10, 6, 5).as_slice());
        assert_eq!(p.alphas(), &[5, 6, 8, 10]);
        assert_eq!(p.pair_count(), 8);
        assert_eq!(p.left(6), 6..8);
        assert_eq!(p.right(6), 12..14);
    }

    #[test]
    fn small_n_is_all_singletons() {
        let p = build_chunks(8, 0.5).unwrap();
        assert_eq!(p.m(), 20);
        assert_eq!(p.pair_count(), 4);
        assert!(p.is_all_singletons());
        assert!(p.alphas().is_empty());
    }

    #[test]
    fn hundred_at_eps_one() {
        let p = build_chunks(100, 1.0).unwrap();
        assert_eq!(p.m(), 10);
        assert_eq!(p.alphas(), alpha_oracle(10, 50, 11, 10).as_slice());
        assert!(build_chunks(100, 1.5).is_err());
        assert!(build_chunks(100, 0.0).is_err());
        let q = build_chunks(1000, 0.5).unwrap();
        assert_eq!(q.m(), 20);
        assert_eq!(q.alphas(), alpha_oracle(20, 500, 21, 20).as_slice());
    }

    #[test]
    fn tolerant_ceil_snaps() {
        assert_eq!(tolerant_ceil((1.0 + 0.1 / 10.0) * 100.0), 101);
        assert_eq!(tolerant_ceil(10.0 / 0.1), 100);
        assert_eq!(tolerant_ceil(10.0 / 0.3), 34);
        assert_eq!(tolerant_ceil(2.5), 3);
    }

    #[test]
    fn chunks_partition_all_indices() {
        for n in [1usize, 2, 3, 7, 50, 51, 999, 1000, 12345] {
            for eps in [0.1, 0.33, 0.9] {
                let p = build_chunks(n, eps).unwrap();
                let mut seen = vec![0u8; n];
                for i in 0..p.pair_count() {
                    assert_eq!(p.left(i).len(), p.right(i).len());
                    for j in p.left(i).chain(p.right(i)) {
                        seen[j] += 1;
                    }
                    if i < p.m() {
                        assert_eq!(p.chunk_len(i), 1);
                    }
                }
                if let Some(mid) = p.middle() {
                    seen[mid] += 1;
                }
                assert!(seen.iter().all(|&c| c == 1), "n={n} eps={eps}");
            }
        }
    }

    #[test]
    fn tiny_coreset_is_the_input() {
        let c = build_coreset(&[1.0, 2.0, 3.0], 0.3, RepRule::First).unwrap();
        assert_eq!(c.weighted(), vec![(1.0, 1), (2.0, 1), (3.0, 1)]);
    }

    #[test]
    fn large_uniform_coreset() {
        let values: Vec<f64> = (1..=10_000).map(f64::from).collect();
        let c = build_coreset(&values, 0.2, RepRule::First).unwrap();
        let p = build_chunks(10_000, 0.2).unwrap();
        assert_eq!(c.pairs().len(), p.pair_count());
        assert!(c.weighted().len() < 600);
        assert_eq!(c.total_weight(), 10_000);
        assert_eq!(c.weighted().iter().map(|x| x.1).sum::<u64>(), 10_000);
    }

    #[test]
    fn constant_values_give_constant_reps() {
        let values = vec![7.0; 501];
        let c = build_coreset(&values, 0.2, RepRule::MedianOfChunk).unwrap();
        assert!(c.weighted().iter().all(|&(v, _)| v == 7.0));
        for q in [-3.0, 7.0, 12.5] {
            let a = eval_weighted_l1(&c.weighted(), q).unwrap();
            assert_eq!(a, 501.0 * (q - 7.0f64).abs());
        }
    }

    #[test]
    fn rejects_unsorted_and_nan() {
        assert!(build_coreset(&[2.0, 1.0], 0.5, RepRule::First).is_err());
        assert!(build_coreset(&[1.0, f64::NAN], 0.5, RepRule::First).is_err());
        assert!(eval_weighted_l1(&[(1.0, 1)], f64::NAN).is_err());
        assert_eq!(sorted(&[3.0, 1.0, 2.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_weighted_l1(&[(0.0, 1), (10.0, 1)], 5.0).unwrap(), 10.0);
        assert_eq!(eval_weighted_l1(&[(0.0, 3)], 4.0).unwrap(), 12.0);
        assert_eq!(eval_weighted_l2(&[(0.0, 1), (2.0, 1)], 1.0).unwrap(), 2.0);
        assert_eq!(eval_weighted_l2(&[(3.0, 2)], 0.0).unwrap(), 18.0);
        let id = eval_weighted_monotone(&[(0.0, 1), (10.0, 1)], 5.0, |x| x).unwrap();
        assert_eq!(id, 10.0);
        let sq = eval_weighted_monotone(&[(0.0, 1), (2.0, 1)], 1.0, |x| x * x).unwrap();
        assert_eq!(sq, 2.0);
    }

    #[test]
    fn random_sets_match_direct_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let reps: Vec<(f64, u64)> = (0..100)
            .map(|_| (rng.random_range(-100.0..100.0), rng.random_range(1..50u64)))
            .collect();
        for _ in 0..50 {
            let q: f64 = rng.random_range(-150.0..150.0);
            let mut d1 = 0.0f64;
            let mut d2 = 0.0f64;
            let mut d3 = 0.0f64;
            for &(v, w) in &reps {
                let d = (v - q).abs();
                d1 += w as f64 * d;
                d2 += w as f64 * d * d;
                d3 += w as f64 * d * d * d;
            }
            let e1 = eval_weighted_l1(&reps, q).unwrap();
            let e2 = eval_weighted_l2(&reps, q).unwrap();
            let e3 = eval_weighted_monotone(&reps, q, |x| x * x * x).unwrap();
            assert!((e1 - d1).abs() <= 1e-12 * d1);
            assert!((e2 - d2).abs() <= 1e-12 * d2);
            assert!((e3 - d3).abs() <= 1e-12 * d3);
        }
    }

    #[test]
    fn perturbation_bounds() {
        let values: Vec<f64> = (0..=20).map(f64::from).collect();
        let c = build_coreset(&values, 0.2, RepRule::First).unwrap();
        // Outermost pair is (0, 20): max offset (0.2 / 20) * 20 = 0.2.
        assert!((max_offsets(&c)[0] - 0.2).abs() < 1e-15);
        let zero = vec![(0.0, 0.0); c.pairs().len()];
        assert_eq!(perturb(&c, &zero).unwrap(), c);
        let mut bad = zero.clone();
        bad[3] = (0.0, 1.0);
        assert!(matches!(
            perturb(&c, &bad),
            Err(Error::Perturbation { pair: 3, .. })
        ));
        let maximal: Vec<(f64, f64)> = max_offsets(&c).iter().map(|&b| (b, -b)).collect();
        let r = perturb(&c, &maximal).unwrap();
        assert_eq!(r.total_weight(), 21);
    }

    fn direct_l1(values: &[f64], q: f64) -> f64 {
        values.iter().map(|v| (v - q).abs()).sum()
    }

    proptest! {
        #[test]
        fn median_triangle_bound(
            a in proptest::collection::vec(-100.0f64..100.0, 1..60),
            psi in -150.0f64..150.0,
            z in -150.0f64..150.0,
        ) {
            let lhs = (direct_l1(&a, z) - a.len() as f64 * (psi - z).abs()).abs();
            prop_assert!(lhs <= direct_l1(&a, psi) * (1.0 + 1e-12) + 1e-9);
        }

        #[test]
        fn coreset_error_within_eps_over_five(
            raw in proptest::collection::vec(-1e3f64..1e3, 1..3000),
            eps in 0.05f64..0.95,
            q in -2e3f64..2e3,
        ) {
            let values = sorted(&raw).unwrap();
            let c = build_coreset(&values, eps, RepRule::First).unwrap();
            prop_assert_eq!(c.total_weight() as usize, values.len());
            let exact = direct_l1(&values, q);
            let approx = eval_weighted_l1(&c.weighted(), q).unwrap();
            prop_assert!((exact - approx).abs() <= (eps / 5.0) * exact + 1e-9 * exact.max(1.0));
        }
    }
}

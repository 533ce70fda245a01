//! Levels of the arrangement of a surface family, sampled along vertical
//! lines.
//!
//! The bottom `k`-level at a base is the `(k+1)`-th smallest surface value
//! there; the top `k`-level is the `(k+1)`-th largest. A [`LevelPlan`] picks,
//! for every chunk of the 1D partition, a level of a random sample (from a
//! [`Gradation`]) whose depth lands inside that chunk with high probability;
//! the picked levels, weighted by chunk size, form the reduced family whose
//! costs track the full family's.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coreset1d::{tolerant_ceil, ChunkPartition};
use crate::error::{input, Result};
use crate::geometry::{ParamPoint, SurfaceFamily, VerticalSurfaces};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Top,
}

/// A vertical line through the arrangement of `family`.
#[derive(Debug, Clone, Copy)]
pub struct LevelQuery<'a> {
    family: &'a SurfaceFamily,
    base: &'a [f64],
}

impl<'a> LevelQuery<'a> {
    pub fn new(family: &'a SurfaceFamily, base: &'a [f64]) -> Result<Self> {
        if base.len() != family.base_dim() {
            return input(format!(
                "base has {} components, family expects {}",
                base.len(),
                family.base_dim()
            ));
        }
        Ok(Self { family, base })
    }

    fn values(&self, subset: Option<&[u32]>) -> Result<Vec<f64>> {
        match subset {
            None => self.family.values_at(self.base),
            Some(idx) => {
                if let Some(&bad) = idx.iter().find(|&&i| i as usize >= self.family.len()) {
                    return input(format!("subset index {bad} out of range"));
                }
                let mut out = Vec::with_capacity(idx.len());
                self.family
                    .visit_indices(self.base, idx.iter().map(|&i| i as usize), &mut |v, _| {
                        out.push(v)
                    });
                Ok(out)
            }
        }
    }
}

/// Value of the bottom or top `k`-level over the active subset (all members
/// when `subset` is `None`). Expected linear time.
pub fn level_value(q: &LevelQuery<'_>, k: usize, side: Side, subset: Option<&[u32]>) -> Result<f64> {
    let mut values = q.values(subset)?;
    let n = values.len();
    if k >= n {
        return input(format!("level {k} out of range for {n} active surfaces"));
    }
    let idx = match side {
        Side::Bottom => k,
        Side::Top => n - 1 - k,
    };
    let (_, v, _) = values.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*v)
}

/// `U_k - L_r`: gap between the top `k`-level and the bottom `r`-level.
pub fn extent(q: &LevelQuery<'_>, k: usize, r: usize) -> Result<f64> {
    let mut values = q.values(None)?;
    let n = values.len();
    if k >= n || r >= n || n - 1 - k < r {
        return input(format!(
            "top level {k} lies below bottom level {r} among {n} surfaces"
        ));
    }
    if r == n - 1 - k {
        return Ok(0.0);
    }
    let picked = multi_select(&mut values, &[r, n - 1 - k]);
    Ok(picked[1] - picked[0])
}

/// Order statistics at the given ascending, distinct ranks. Partitions
/// recursively, so the cost is `O(n log(ranks.len()))` in expectation.
pub fn multi_select(values: &mut [f64], ranks: &[usize]) -> Vec<f64> {
    debug_assert!(ranks.windows(2).all(|w| w[0] < w[1]));
    let mut out = vec![0.0; ranks.len()];
    select_into(values, 0, ranks, &mut out);
    out
}

fn select_into(values: &mut [f64], offset: usize, ranks: &[usize], out: &mut [f64]) {
    if ranks.is_empty() {
        return;
    }
    // Dense ranks: one sort beats repeated partitioning.
    if ranks.len() >= 8 && ranks.len() * 8 >= values.len() {
        values.sort_unstable_by(f64::total_cmp);
        for (o, &r) in out.iter_mut().zip(ranks) {
            *o = values[r - offset];
        }
        return;
    }
    let mid = ranks.len() / 2;
    let r = ranks[mid] - offset;
    let (lo, v, hi) = values.select_nth_unstable_by(r, f64::total_cmp);
    out[mid] = *v;
    let (out_lo, rest) = out.split_at_mut(mid);
    select_into(lo, offset, &ranks[..mid], out_lo);
    select_into(hi, offset + r + 1, &ranks[mid + 1..], &mut rest[1..]);
}

/// Nested random samples `Y_0 ⊇ Y_1 ⊇ ...`, each keeping every member of
/// the previous one with probability 1/2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gradation {
    n: usize,
    seed: u64,
    samples: Vec<Vec<u32>>,
}

impl Gradation {
    /// Samples `Y_0..Y_T` with `T = ceil(log2 n) + 1`, stopping early after
    /// the first empty sample.
    pub fn build(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return input("cannot build a gradation over an empty family");
        }
        if n > u32::MAX as usize {
            return input("family too large for 32-bit member indices");
        }
        let levels = (n as f64).log2().ceil() as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(levels + 1);
        samples.push((0..n as u32).collect::<Vec<_>>());
        for _ in 0..levels {
            let prev = samples.last().expect("nonempty");
            let mut next = Vec::with_capacity(prev.len() / 2 + 8);
            for block in prev.chunks(64) {
                let mut bits = rng.next_u64();
                for &i in block {
                    if bits & 1 == 1 {
                        next.push(i);
                    }
                    bits >>= 1;
                }
            }
            let empty = next.is_empty();
            samples.push(next);
            if empty {
                break;
            }
        }
        Ok(Self { n, seed, samples })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of samples, `T + 1`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[u32] {
        &self.samples[i]
    }
}

pub fn build_gradation(family: &SurfaceFamily, seed: u64) -> Result<Gradation> {
    Gradation::build(family.len(), seed)
}

/// Tuning constants for the level plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelConfig {
    /// Constant `c` in the sampling rate `min(c ln n / (k delta^2), 1)`.
    pub chernoff_c: f64,
    /// Constant in the exact prefix length `m = max(10/eps, c_m ln n / eps^2)`.
    pub m_c: f64,
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self {
            chernoff_c: 4.0,
            m_c: 1.0,
        }
    }
}

/// Sampling rate that keeps the sampled `rate * k` level between the
/// `(1 - delta) k` and `(1 + delta) k` levels with high probability.
pub fn chernoff_rate(k: f64, delta: f64, c: f64, n: usize) -> f64 {
    if k <= 0.0 {
        return 1.0;
    }
    (c * (n as f64).ln() / (k * delta * delta)).min(1.0)
}

/// Independent Bernoulli(`rate`) sample of `0..n`.
pub fn bernoulli_sample(n: usize, rate: f64, seed: u64) -> Vec<u32> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u32)
        .filter(|_| rng.random_bool(rate.clamp(0.0, 1.0)))
        .collect()
}

/// Length of the exact boundary prefix used by the reduction.
pub fn prefix_length(n: usize, eps: f64, cfg: &LevelConfig) -> usize {
    let by_eps = tolerant_ceil(10.0 / eps);
    let by_log = tolerant_ceil(cfg.m_c * (n.max(1) as f64).ln() / (eps * eps));
    by_eps.max(by_log).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEntry {
    pub side: Side,
    pub sample: usize,
    pub depth: usize,
    pub weight: u64,
}

/// The levels that make up the reduced family: `prefix` exact bottom and
/// top levels at weight one, plus one sampled level per side and chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPlan {
    n: usize,
    eps: f64,
    prefix: usize,
    entries: Vec<PlanEntry>,
}

impl LevelPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Count of exact boundary levels per side.
    pub fn prefix(&self) -> usize {
        self.prefix
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    /// Whether every entry refers to the unsampled family.
    pub fn is_exact(&self) -> bool {
        self.entries.iter().all(|e| e.sample == 0)
    }

    /// Weight crossing any vertical line.
    pub fn total_weight(&self) -> u64 {
        2 * self.prefix as u64 + self.entries.iter().map(|e| e.weight).sum::<u64>()
    }
}

pub fn plan_levels(
    n: usize,
    eps: f64,
    gradation: &Gradation,
    cfg: &LevelConfig,
) -> Result<LevelPlan> {
    if !(eps > 0.0 && eps < 1.0) {
        return input(format!("eps must lie in (0, 1), got {eps}"));
    }
    if gradation.n() != n {
        return input(format!(
            "gradation built over {} members, plan requested for {n}",
            gradation.n()
        ));
    }
    let m = prefix_length(n, eps, cfg);
    let partition = ChunkPartition::with_singletons(n, eps, m)?;
    let prefix = partition.singleton_pairs();
    let delta = eps / 40.0;
    let mut entries = Vec::new();
    if let Some(mid) = partition.middle() {
        entries.push(PlanEntry {
            side: Side::Bottom,
            sample: 0,
            depth: mid,
            weight: 1,
        });
    }
    for i in prefix..partition.pair_count() {
        let chunk = partition.left(i);
        let k = ((1.0 + eps / 20.0) * chunk.start as f64)
            .clamp(chunk.start as f64, (chunk.end - 1) as f64);
        let rate = chernoff_rate(k, delta, cfg.chernoff_c, n);
        // Deepest gradation sample whose rate 2^-j still reaches `rate`.
        let mut j = 0usize;
        while j + 1 < gradation.len()
            && 0.5f64.powi(j as i32 + 1) >= rate
            && !gradation.sample(j + 1).is_empty()
        {
            j += 1;
        }
        let size = gradation.sample(j).len();
        let depth = ((k * 0.5f64.powi(j as i32)).round() as usize).min(size - 1);
        let weight = chunk.len() as u64;
        for side in [Side::Bottom, Side::Top] {
            entries.push(PlanEntry {
                side,
                sample: j,
                depth,
                weight,
            });
        }
    }
    Ok(LevelPlan {
        n,
        eps,
        prefix,
        entries,
    })
}

/// Gradation plus plan: everything needed to evaluate the reduced family.
#[derive(Debug, Clone)]
pub struct Reduction {
    gradation: Gradation,
    plan: LevelPlan,
    /// Per used sample: the (rank-selection) requests against it.
    groups: Vec<SampleGroup>,
}

#[derive(Debug, Clone)]
struct SampleGroup {
    sample: usize,
    /// Ascending distinct bottom ranks into the sample.
    ranks: Vec<usize>,
    /// For each emitted surface: (index into `ranks`, weight).
    emits: Vec<(usize, u64)>,
}

impl Reduction {
    pub fn new(gradation: Gradation, plan: LevelPlan) -> Result<Self> {
        if gradation.n() != plan.n() {
            return input("gradation and plan disagree on the family size");
        }
        let mut requests: Vec<Vec<(usize, u64)>> = vec![Vec::new(); gradation.len()];
        let n = plan.n();
        for d in 0..plan.prefix() {
            requests[0].push((d, 1));
            requests[0].push((n - 1 - d, 1));
        }
        for e in plan.entries() {
            let size = gradation.sample(e.sample).len();
            if e.depth >= size {
                return input(format!(
                    "plan depth {} exceeds sample {} of size {size}",
                    e.depth, e.sample
                ));
            }
            let rank = match e.side {
                Side::Bottom => e.depth,
                Side::Top => size - 1 - e.depth,
            };
            requests[e.sample].push((rank, e.weight));
        }
        let groups = requests
            .into_iter()
            .enumerate()
            .filter(|(_, r)| !r.is_empty())
            .map(|(sample, reqs)| {
                let mut ranks: Vec<usize> = reqs.iter().map(|r| r.0).collect();
                ranks.sort_unstable();
                ranks.dedup();
                let emits = reqs
                    .iter()
                    .map(|&(rank, w)| (ranks.binary_search(&rank).expect("present"), w))
                    .collect();
                SampleGroup {
                    sample,
                    ranks,
                    emits,
                }
            })
            .collect();
        Ok(Self {
            gradation,
            plan,
            groups,
        })
    }

    /// Gradation from `seed` and the plan for `family`.
    pub fn build(family: &SurfaceFamily, eps: f64, seed: u64, cfg: &LevelConfig) -> Result<Self> {
        let gradation = build_gradation(family, seed)?;
        let plan = plan_levels(family.len(), eps, &gradation, cfg)?;
        Self::new(gradation, plan)
    }

    pub fn gradation(&self) -> &Gradation {
        &self.gradation
    }

    pub fn plan(&self) -> &LevelPlan {
        &self.plan
    }

    /// Bind to the family the reduction was built for.
    pub fn over<'a>(&'a self, family: &'a SurfaceFamily) -> Result<ReducedSurfaces<'a>> {
        if family.len() != self.plan.n() {
            return input(format!(
                "stale plan: built for {} surfaces, family has {}",
                self.plan.n(),
                family.len()
            ));
        }
        if !family.is_unweighted() {
            return input("the level reduction applies to unweighted families");
        }
        Ok(ReducedSurfaces {
            family,
            reduction: self,
        })
    }
}

/// The reduced family: level surfaces of `family` picked by a plan.
#[derive(Debug, Clone, Copy)]
pub struct ReducedSurfaces<'a> {
    family: &'a SurfaceFamily,
    reduction: &'a Reduction,
}

impl VerticalSurfaces for ReducedSurfaces<'_> {
    fn base_dim(&self) -> usize {
        self.family.base_dim()
    }

    fn total_weight(&self) -> u64 {
        self.reduction.plan.total_weight()
    }

    fn visit(&self, base: &[f64], f: &mut dyn FnMut(f64, u64)) -> crate::error::Result<()> {
        let q = LevelQuery::new(self.family, base)?;
        for g in &self.reduction.groups {
            let mut values = if g.sample == 0 {
                q.values(None)?
            } else {
                q.values(Some(self.reduction.gradation.sample(g.sample)))?
            };
            let picked = multi_select(&mut values, &g.ranks);
            for &(slot, w) in &g.emits {
                f(picked[slot], w);
            }
        }
        Ok(())
    }
}

/// Reduced L1 cost `nu_H(p)`.
pub fn reduced_cost_l1(family: &SurfaceFamily, reduction: &Reduction, p: &ParamPoint) -> Result<f64> {
    crate::geometry::cost_l1(&reduction.over(family)?, p)
}

/// Reduced L2 cost `mu_H(p)`.
pub fn reduced_cost_l2(family: &SurfaceFamily, reduction: &Reduction, p: &ParamPoint) -> Result<f64> {
    crate::geometry::cost_l2(&reduction.over(family)?, p)
}

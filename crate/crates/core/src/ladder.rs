//! Stabbing segment, distance ladder, quantized cost and the minimization
//! driver.
//!
//! The shortest vertical segment meeting every surface lower-bounds the cost
//! anywhere in the region. Rounding each vertical distance up to the next
//! value of a ladder built from that length changes the cost by at most a
//! `1 + eps/5` factor wherever the cost is at least the segment length, so
//! the quantized cost is a safe score for pruning a search over the base.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coreset1d::tolerant_ceil;
use crate::error::{input, Error, Result};
use crate::geometry::{NeumaierSum, Objective, ParamPoint, VerticalSurfaces};
use crate::nelder_mead::{self, NmOptions};

/// Axis-aligned box over the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return input("region bounds must be nonempty and of equal length");
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a.is_finite() && b.is_finite()) || a > b {
                return input(format!("degenerate region axis [{a}, {b}]"));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| v.clamp(*a, *b))
            .collect()
    }

    /// The box shifted by `t` on its first `t.len()` axes.
    pub fn translated(&self, t: &[f64]) -> Self {
        let shift = |v: &Vec<f64>| {
            v.iter()
                .enumerate()
                .map(|(i, x)| x + t.get(i).copied().unwrap_or(0.0))
                .collect()
        };
        Self {
            lo: shift(&self.lo),
            hi: shift(&self.hi),
        }
    }

    /// Node `idx` of a `grid`-per-axis lattice including the corners.
    fn node(&self, mut idx: usize, grid: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                let j = idx % grid;
                idx /= grid;
                self.lo[a] + self.width(a) * j as f64 / (grid - 1) as f64
            })
            .collect()
    }

    /// Center of cell `idx` of a `grid`-per-axis partition.
    fn cell_center(&self, mut idx: usize, grid: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                let j = idx % grid;
                idx /= grid;
                self.lo[a] + self.width(a) * (j as f64 + 0.5) / grid as f64
            })
            .collect()
    }
}

fn grid_size(grid: usize, dim: usize) -> Result<usize> {
    u32::try_from(dim)
        .ok()
        .and_then(|d| grid.checked_pow(d))
        .ok_or_else(|| Error::Input(format!("grid {grid}^{dim} overflows")))
}

/// A short vertical segment meeting every surface over `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabInfo {
    pub base: Vec<f64>,
    pub length: f64,
    pub mid_height: f64,
}

fn span<S: VerticalSurfaces + ?Sized>(s: &S, base: &[f64]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    s.visit(base, &mut |v, _| {
        lo = lo.min(v);
        hi = hi.max(v);
    })?;
    if lo > hi {
        return input("no surfaces to stab");
    }
    Ok((lo, hi))
}

/// Shortest stabbing segment found on a `grid`-per-axis lattice over
/// `region`, refined by local descent.
pub fn find_stab<S: VerticalSurfaces + ?Sized>(
    s: &S,
    region: &SearchRegion,
    grid: usize,
) -> Result<StabInfo> {
    if grid < 2 {
        return input("stab grid needs at least 2 nodes per axis");
    }
    if region.dim() != s.base_dim() {
        return input(format!(
            "region has {} axes, family base has {}",
            region.dim(),
            s.base_dim()
        ));
    }
    let total = grid_size(grid, region.dim())?;
    let extents: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|i| span(s, &region.node(i, grid)).map(|(lo, hi)| hi - lo))
        .collect::<Result<_>>()?;
    let best = (0..total)
        .min_by(|&a, &b| extents[a].total_cmp(&extents[b]).then(a.cmp(&b)))
        .expect("nonempty grid");
    let start = region.node(best, grid);
    let step: Vec<f64> = (0..region.dim())
        .map(|a| region.width(a) / (grid - 1) as f64)
        .collect();
    let refined = nelder_mead::minimize(
        |x| {
            let x = region.clamp(x);
            span(s, &x).map(|(lo, hi)| hi - lo).unwrap_or(f64::INFINITY)
        },
        &start,
        &step,
        NmOptions {
            max_evals: 200 * region.dim() + 100,
            ..NmOptions::default()
        },
    );
    let base = if refined.value < extents[best] {
        region.clamp(&refined.x)
    } else {
        start
    };
    let (lo, hi) = span(s, &base)?;
    Ok(StabInfo {
        base,
        length: hi - lo,
        mid_height: 0.5 * (lo + hi),
    })
}

/// Increasing distance thresholds `u_1 < ... < u_M`: linear steps of `u` up
/// to index `m_linear`, then geometric with ratio `1 + eps/20`, ending at the
/// first value above `W^2 * sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    u: f64,
    values: Vec<f64>,
    m_linear: usize,
    total_weight: u64,
    eps: f64,
    sigma: f64,
}

impl Ladder {
    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn m_linear(&self) -> usize {
        self.m_linear
    }

    pub fn total_weight(&self) -> u64 {
        self.total_weight
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Smallest ladder value `>= a`, or `None` above the top rung.
    pub fn quantize(&self, a: f64) -> Option<f64> {
        let i = self.values.partition_point(|&v| v < a);
        self.values.get(i).copied()
    }
}

pub fn build_ladder(sigma_len: f64, total_weight: u64, eps: f64) -> Result<Ladder> {
    if !(eps > 0.0 && eps < 1.0) {
        return input(format!("eps must lie in (0, 1), got {eps}"));
    }
    if total_weight == 0 {
        return input("total weight must be positive");
    }
    if !(sigma_len >= 0.0 && sigma_len.is_finite()) {
        return input(format!("invalid segment length {sigma_len}"));
    }
    if sigma_len == 0.0 {
        return Err(Error::ZeroStab);
    }
    let w2 = (total_weight as f64).powi(2);
    let u = eps * sigma_len / (10.0 * w2);
    let top = w2 * sigma_len;
    let m_linear = tolerant_ceil(10.0 / eps);
    let mut values = Vec::new();
    for i in 1..=m_linear {
        let v = i as f64 * u;
        values.push(v);
        if v > top {
            break;
        }
    }
    let ratio = 1.0 + eps / 20.0;
    while *values.last().expect("nonempty") <= top {
        let next = values.last().expect("nonempty") * ratio;
        values.push(next);
    }
    Ok(Ladder {
        u,
        values,
        m_linear,
        total_weight,
        eps,
        sigma: sigma_len,
    })
}

/// Quantized cost and whether any distance fell above the top rung.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedCost {
    /// Sum over surfaces of `w * term(b_i)`; saturated distances enter
    /// unrounded.
    pub value: f64,
    pub saturated: bool,
}

impl QuantizedCost {
    /// Pruning score: saturated points are never competitive.
    pub fn score(&self) -> f64 {
        if self.saturated {
            f64::INFINITY
        } else {
            self.value
        }
    }
}

pub fn quantized_cost<S: VerticalSurfaces + ?Sized>(
    s: &S,
    ladder: &Ladder,
    p: &ParamPoint,
    objective: Objective,
) -> Result<QuantizedCost> {
    if !p.height.is_finite() {
        return input("height is not finite");
    }
    let mut acc = NeumaierSum::new();
    let mut saturated = false;
    s.visit(&p.base, &mut |v, w| {
        let a = (v - p.height).abs();
        let b = match ladder.quantize(a) {
            Some(b) => b,
            None => {
                saturated = true;
                a
            }
        };
        acc.add(w as f64 * objective.term(b));
    })?;
    Ok(QuantizedCost {
        value: acc.value(),
        saturated,
    })
}

/// How the height is chosen for a base during the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeightRule {
    /// The optimal height for the objective at that base: weighted median
    /// (L1) or weighted mean (L2) of the surface values.
    Profiled,
    Fixed(f64),
}

impl HeightRule {
    pub fn height(&self, values: &mut [(f64, u64)], objective: Objective) -> f64 {
        match *self {
            HeightRule::Fixed(h) => h,
            HeightRule::Profiled => match objective {
                Objective::L1 => weighted_median(values),
                Objective::L2 => weighted_mean(values),
            },
        }
    }
}

/// Lower weighted median: the smallest value whose cumulative weight
/// reaches half the total.
pub fn weighted_median(values: &mut [(f64, u64)]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let total: u64 = values.iter().map(|v| v.1).sum();
    if values.iter().all(|v| v.1 == 1) {
        let k = (total as usize - 1) / 2;
        let (_, v, _) = values.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0));
        return v.0;
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0u64;
    for &(v, w) in values.iter() {
        acc += w;
        if 2 * acc >= total {
            return v;
        }
    }
    values[values.len() - 1].0
}

pub fn weighted_mean(values: &[(f64, u64)]) -> f64 {
    let total: u64 = values.iter().map(|v| v.1).sum();
    if total == 0 {
        return 0.0;
    }
    let s: NeumaierSum = values.iter().map(|&(v, w)| v * w as f64).collect();
    s.value() / total as f64
}

fn profiled_cost(values: &mut [(f64, u64)], rule: HeightRule, objective: Objective) -> (f64, f64) {
    let h = rule.height(values, objective);
    let c: NeumaierSum = values
        .iter()
        .map(|&(v, w)| w as f64 * objective.term(v - h))
        .collect();
    (h, c.value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeConfig {
    pub eps: f64,
    pub objective: Objective,
    /// Coarse grid cells per base axis.
    pub grid: usize,
    /// Coarse cells kept for refinement.
    pub top_k: usize,
    /// Random extra polish starts drawn from `seed`.
    pub random_starts: usize,
    /// Cap on evaluator passes over the family.
    pub budget: usize,
    pub seed: u64,
    pub height: HeightRule,
}

impl MinimizeConfig {
    pub fn new(eps: f64, objective: Objective, grid: usize, seed: u64) -> Self {
        Self {
            eps,
            objective,
            grid,
            top_k: 16,
            random_starts: 4,
            budget: 400_000,
            seed,
            height: HeightRule::Profiled,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub point: ParamPoint,
    /// Exact cost of `point` on the exact evaluator.
    pub cost: f64,
    pub budget_exhausted: bool,
    pub evaluations: usize,
}

struct Candidate {
    center: Vec<f64>,
    half: Vec<f64>,
    score: f64,
}

/// Three-phase search: a coarse grid scored by the quantized cost on
/// `search`, subdivision of the best `top_k` cells, then local descent on
/// the exact profiled cost of `exact`.
pub fn minimize_with<S, E>(
    search: &S,
    exact: &E,
    ladder: &Ladder,
    region: &SearchRegion,
    cfg: &MinimizeConfig,
) -> Result<Minimum>
where
    S: VerticalSurfaces + ?Sized,
    E: VerticalSurfaces + ?Sized,
{
    if region.dim() != search.base_dim() || region.dim() != exact.base_dim() {
        return input("region and evaluators disagree on the base dimension");
    }
    if cfg.grid == 0 || cfg.top_k == 0 {
        return input("grid and top_k must be positive");
    }
    let d = region.dim();
    let cells = grid_size(cfg.grid, d)?;
    if cfg.budget < cells {
        return input(format!(
            "budget {} is below the coarse grid size {cells}",
            cfg.budget
        ));
    }
    let objective = cfg.objective;
    let score = |base: &[f64]| -> Result<f64> {
        let mut vals = search.weighted_values(base)?;
        let h = cfg.height.height(&mut vals, objective);
        Ok(quantized_cost(search, ladder, &ParamPoint::new(base.to_vec(), h), objective)?.score())
    };
    let exact_profiled = |base: &[f64]| -> Result<(f64, f64)> {
        let mut vals = exact.weighted_values(base)?;
        Ok(profiled_cost(&mut vals, cfg.height, objective))
    };

    let mut used = cells;
    let mut exhausted = false;
    let coarse: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| score(&region.cell_center(i, cfg.grid)))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..cells).collect();
    order.sort_by(|&a, &b| coarse[a].total_cmp(&coarse[b]).then(a.cmp(&b)));
    let half0: Vec<f64> = (0..d)
        .map(|a| region.width(a) / (2.0 * cfg.grid as f64))
        .collect();
    let mut candidates: Vec<Candidate> = order
        .iter()
        .take(cfg.top_k)
        .map(|&i| Candidate {
            center: region.cell_center(i, cfg.grid),
            half: half0.clone(),
            score: coarse[i],
        })
        .collect();

    // Subdivide each kept cell into 3^d sub-cells, move to the best one, and
    // stop once the gain drops below eps/10 of the cell's score.
    let sub = 3usize.pow(d as u32);
    for cand in candidates.iter_mut() {
        for _ in 0..40 {
            if used + sub > cfg.budget {
                exhausted = true;
                break;
            }
            used += sub;
            let half: Vec<f64> = cand.half.iter().map(|h| h / 3.0).collect();
            let centers: Vec<Vec<f64>> = (0..sub)
                .map(|mut j| {
                    (0..d)
                        .map(|a| {
                            let k = (j % 3) as f64 - 1.0;
                            j /= 3;
                            cand.center[a] + 2.0 * half[a] * k
                        })
                        .collect()
                })
                .collect();
            let scores: Vec<f64> = centers
                .par_iter()
                .map(|c| score(c))
                .collect::<Result<_>>()?;
            let best = (0..sub)
                .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
                .expect("nonempty");
            let gain = cand.score - scores[best];
            cand.center = centers[best].clone();
            cand.half = half;
            let prev = cand.score;
            cand.score = scores[best].min(prev);
            if !(gain >= cfg.eps / 10.0 * cand.score) || cand.score == 0.0 {
                break;
            }
        }
        if exhausted {
            break;
        }
    }

    let mut starts: Vec<(Vec<f64>, Vec<f64>)> = candidates
        .iter()
        .map(|c| (c.center.clone(), c.half.iter().map(|h| h.max(1e-12) * 2.0).collect()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.random_starts {
        let x: Vec<f64> = (0..d)
            .map(|a| {
                if region.width(a) > 0.0 {
                    rng.random_range(region.lo[a]..=region.hi[a])
                } else {
                    region.lo[a]
                }
            })
            .collect();
        starts.push((x, half0.iter().map(|h| h * 2.0).collect()));
    }

    let remaining = cfg.budget.saturating_sub(used);
    let per_start = remaining / starts.len().max(1);
    if per_start < 20 * (d + 1) {
        exhausted = true;
    }
    let polished: Vec<(Vec<f64>, f64, usize)> = starts
        .par_iter()
        .map(|(x0, step)| {
            if per_start < 2 * (d + 1) {
                let x = region.clamp(x0);
                return exact_profiled(&x).map(|(_, c)| (x, c, 1));
            }
            let out = nelder_mead::minimize(
                |x| {
                    let x = region.clamp(x);
                    exact_profiled(&x).map(|r| r.1).unwrap_or(f64::INFINITY)
                },
                x0,
                step,
                NmOptions {
                    max_evals: per_start.saturating_sub(d + 2).max(1),
                    ..NmOptions::default()
                },
            );
            Ok((region.clamp(&out.x), out.value, out.evals))
        })
        .collect::<Result<_>>()?;
    used += polished.iter().map(|p| p.2).sum::<usize>();
    let best = (0..polished.len())
        .min_by(|&a, &b| polished[a].1.total_cmp(&polished[b].1).then(a.cmp(&b)))
        .expect("at least one start");
    let base = polished[best].0.clone();
    let (height, _) = exact_profiled(&base)?;
    let point = ParamPoint::new(base, height);
    let cost = crate::geometry::cost(exact, &point, objective)?;
    Ok(Minimum {
        point,
        cost,
        budget_exhausted: exhausted,
        evaluations: used + 1,
    })
}

/// What [`minimize`] found, with the stabbing segment it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOutcome {
    pub minimum: Minimum,
    pub stab: StabInfo,
    /// The stab length was zero, so its midpoint is an exact fit and no
    /// search ran.
    pub zero_cost: bool,
}

/// Stab, ladder and search in one call; `stab_grid` nodes per axis.
pub fn minimize<S, E>(
    search: &S,
    exact: &E,
    region: &SearchRegion,
    stab_grid: usize,
    cfg: &MinimizeConfig,
) -> Result<MinimizeOutcome>
where
    S: VerticalSurfaces + ?Sized,
    E: VerticalSurfaces + ?Sized,
{
    let stab = find_stab(search, region, stab_grid)?;
    let sigma = match cfg.height {
        HeightRule::Profiled => stab.length,
        HeightRule::Fixed(h) => stab.length.max((stab.mid_height - h).abs() + stab.length / 2.0),
    };
    match build_ladder(sigma, search.total_weight(), cfg.eps) {
        Ok(ladder) => {
            let minimum = minimize_with(search, exact, &ladder, region, cfg)?;
            Ok(MinimizeOutcome {
                minimum,
                stab,
                zero_cost: false,
            })
        }
        Err(Error::ZeroStab) => {
            let height = match cfg.height {
                HeightRule::Fixed(h) => h,
                HeightRule::Profiled => stab.mid_height,
            };
            let point = ParamPoint::new(stab.base.clone(), height);
            let cost = crate::geometry::cost(exact, &point, cfg.objective)?;
            Ok(MinimizeOutcome {
                minimum: Minimum {
                    point,
                    cost,
                    budget_exhausted: false,
                    evaluations: 1,
                },
                stab,
                zero_cost: true,
            })
        }
        Err(e) => Err(e),
    }
}

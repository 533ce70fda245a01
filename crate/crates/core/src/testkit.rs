//! Instance generators and brute-force reference solvers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitCircle, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::fitters::{FitFlags, FitInput, FitResult, Method, ShapeChart, ShapeKind};
use crate::geometry::{Flat, Objective, ParamPoint, PointSet, Shape};
use crate::ladder::HeightRule;
use crate::nelder_mead::{self, NmOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    Circle,
    Sphere,
    Cylinder,
    /// Lines in the plane passing near a common point.
    Lines,
    TwoLines,
    #[serde(rename = "stack-1d")]
    Stack1d,
}

impl InstanceKind {
    pub fn name(self) -> &'static str {
        match self {
            InstanceKind::Circle => "circle",
            InstanceKind::Sphere => "sphere",
            InstanceKind::Cylinder => "cylinder",
            InstanceKind::Lines => "lines",
            InstanceKind::TwoLines => "two-lines",
            InstanceKind::Stack1d => "stack-1d",
        }
    }

    /// The shape fitted to instances of this kind, if any.
    pub fn shape_kind(self) -> Option<ShapeKind> {
        match self {
            InstanceKind::Circle => Some(ShapeKind::Circle),
            InstanceKind::Sphere => Some(ShapeKind::Sphere),
            InstanceKind::Cylinder => Some(ShapeKind::Cylinder),
            InstanceKind::Lines => Some(ShapeKind::FlatMedian),
            InstanceKind::TwoLines => Some(ShapeKind::TwoLines),
            InstanceKind::Stack1d => None,
        }
    }
}

impl std::str::FromStr for InstanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "circle" => InstanceKind::Circle,
            "sphere" => InstanceKind::Sphere,
            "cylinder" => InstanceKind::Cylinder,
            "lines" | "flats" | "flat-median" => InstanceKind::Lines,
            "two-lines" => InstanceKind::TwoLines,
            "stack-1d" => InstanceKind::Stack1d,
            other => return input(format!("unknown instance kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub n: usize,
    /// Gaussian standard deviation of the inlier noise.
    pub noise: f64,
    /// Fraction of items replaced by outliers; `round(frac * n)` of them.
    pub outlier_frac: f64,
    /// Outliers are uniform in the inlier bounding box scaled by this factor
    /// about its center.
    pub outlier_box_scale: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(kind: InstanceKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            noise: 0.0,
            outlier_frac: 0.0,
            outlier_box_scale: 2.0,
            seed,
        }
    }

    pub fn with_noise(self, noise: f64) -> Self {
        Self { noise, ..self }
    }

    pub fn with_outliers(self, outlier_frac: f64) -> Self {
        Self {
            outlier_frac,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return input("instance size must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return input(format!("noise must be a nonnegative number, got {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.outlier_frac) {
            return input(format!(
                "outlier fraction must lie in [0, 1), got {}",
                self.outlier_frac
            ));
        }
        if !(self.outlier_box_scale > 0.0 && self.outlier_box_scale.is_finite()) {
            return input("outlier box scale must be positive");
        }
        Ok(())
    }

    pub fn outlier_count(&self) -> usize {
        (self.outlier_frac * self.n as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InstanceData {
    Points(PointSet),
    Flats(Vec<Flat>),
    Values(Vec<f64>),
}

/// A generated instance. Outliers, if any, are the last `outliers` items.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub data: InstanceData,
    pub truth: Option<Shape>,
    pub outliers: usize,
}

impl Instance {
    pub fn fit_input(&self) -> Option<FitInput<'_>> {
        match &self.data {
            InstanceData::Points(p) => Some(FitInput::Points(p)),
            InstanceData::Flats(f) => Some(FitInput::Flats(f)),
            InstanceData::Values(_) => None,
        }
    }

    pub fn points(&self) -> Option<&PointSet> {
        match &self.data {
            InstanceData::Points(p) => Some(p),
            _ => None,
        }
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn outlier_rows(rng: &mut ChaCha8Rng, inliers: &[Vec<f64>], count: usize, scale: f64) -> Vec<Vec<f64>> {
    let dim = inliers[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in inliers {
        for a in 0..dim {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (0..count)
        .map(|_| {
            (0..dim)
                .map(|a| {
                    let mid = 0.5 * (lo[a] + hi[a]);
                    let half = 0.5 * scale * (hi[a] - lo[a]);
                    uniform_in(rng, mid - half, mid + half)
                })
                .collect()
        })
        .collect()
}

fn unit3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    UnitSphere.sample(rng)
}

fn unit2(rng: &mut ChaCha8Rng) -> [f64; 2] {
    UnitCircle.sample(rng)
}

/// Two unit vectors completing `v` to an orthonormal frame.
fn frame(v: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let e1 = cross(v, helper);
    let len = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    let e1 = [e1[0] / len, e1[1] / len, e1[2] / len];
    (e1, cross(v, e1))
}

/// Deterministic instance for `spec`, with its ground truth.
pub fn gen_instance(spec: &InstanceSpec) -> Result<Instance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Input(e.to_string()))?;
    let outliers = spec.outlier_count();
    let inliers = spec.n - outliers;
    let scale = spec.outlier_box_scale;
    let dim = match spec.kind {
        InstanceKind::Circle | InstanceKind::TwoLines | InstanceKind::Lines => 2,
        InstanceKind::Sphere | InstanceKind::Cylinder => 3,
        InstanceKind::Stack1d => 1,
    };
    // With no inliers the outliers fill a box of side `scale` at the origin.
    let unit_box = vec![vec![-0.5; dim], vec![0.5; dim]];
    let finish_points = |rng: &mut ChaCha8Rng, mut rows: Vec<Vec<f64>>| -> Result<PointSet> {
        if outliers > 0 {
            let box_of = if rows.is_empty() { &unit_box } else { &rows };
            let extra = outlier_rows(rng, box_of, outliers, scale);
            rows.extend(extra);
        }
        PointSet::from_rows(&rows)
    };

    let (data, truth) = match spec.kind {
        InstanceKind::Circle => {
            let center = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let radius = 1.0;
            let rows: Vec<Vec<f64>> = (0..inliers)
                .map(|_| {
                    let u = unit2(&mut rng);
                    let r = radius + noise.sample(&mut rng);
                    vec![center[0] + r * u[0], center[1] + r * u[1]]
                })
                .collect();
            let pts = finish_points(&mut rng, rows)?;
            (InstanceData::Points(pts), Some(Shape::Circle { center, radius }))
        }
        InstanceKind::Sphere => {
            let center = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let radius = 1.0;
            let rows: Vec<Vec<f64>> = (0..inliers)
                .map(|_| {
                    let u = unit3(&mut rng);
                    let r = radius + noise.sample(&mut rng);
                    (0..3).map(|a| center[a] + r * u[a]).collect()
                })
                .collect();
            let pts = finish_points(&mut rng, rows)?;
            (InstanceData::Points(pts), Some(Shape::Sphere { center, radius }))
        }
        InstanceKind::Cylinder => {
            let point = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let dir = unit3(&mut rng);
            let (e1, e2) = frame(dir);
            let radius = 1.0;
            let rows: Vec<Vec<f64>> = (0..inliers)
                .map(|_| {
                    let t = rng.random_range(-2.0..2.0);
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    let r = radius + noise.sample(&mut rng);
                    let (s, c) = phi.sin_cos();
                    (0..3)
                        .map(|a| point[a] + t * dir[a] + r * (c * e1[a] + s * e2[a]))
                        .collect()
                })
                .collect();
            let pts = finish_points(&mut rng, rows)?;
            let truth = Shape::Cylinder {
                axis_point: point,
                axis_dir: dir,
                radius,
            };
            (InstanceData::Points(pts), Some(truth))
        }
        InstanceKind::TwoLines => {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let offset = rng.random_range(-1.0..1.0);
            let half_gap = rng.random_range(0.5..1.0);
            let (s, c) = angle.sin_cos();
            let rows: Vec<Vec<f64>> = (0..inliers)
                .map(|_| {
                    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let t = rng.random_range(-3.0..3.0);
                    let h = offset + side * half_gap + noise.sample(&mut rng);
                    vec![h * c - t * s, h * s + t * c]
                })
                .collect();
            let pts = finish_points(&mut rng, rows)?;
            let truth = Shape::ParallelLines {
                angle,
                offset,
                half_gap,
            };
            (InstanceData::Points(pts), Some(truth))
        }
        InstanceKind::Lines => {
            let center = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut flats = Vec::with_capacity(spec.n);
            let mut anchors = Vec::with_capacity(spec.n);
            for _ in 0..inliers {
                let d = unit2(&mut rng);
                let off = noise.sample(&mut rng);
                let t = rng.random_range(-1.0..1.0);
                let anchor = vec![
                    center[0] + t * d[0] - off * d[1],
                    center[1] + t * d[1] + off * d[0],
                ];
                anchors.push(anchor.clone());
                flats.push(Flat::new(anchor, vec![d.to_vec()])?);
            }
            if outliers > 0 {
                let base = if anchors.is_empty() { unit_box.clone() } else { anchors };
                for anchor in outlier_rows(&mut rng, &base, outliers, scale) {
                    let d = unit2(&mut rng);
                    flats.push(Flat::new(anchor, vec![d.to_vec()])?);
                }
            }
            (
                InstanceData::Flats(flats),
                Some(Shape::MedianPoint { coords: center }),
            )
        }
        InstanceKind::Stack1d => {
            let mut values: Vec<f64> = (0..inliers)
                .map(|i| (i as f64 + noise.sample(&mut rng)).max(0.0))
                .collect();
            let hi = values.iter().copied().fold(1.0, f64::max);
            let top = hi * scale;
            for _ in 0..outliers {
                values.push(rng.random_range(0.0..top));
            }
            (InstanceData::Values(values), None)
        }
    };
    Ok(Instance {
        spec: *spec,
        data,
        truth,
        outliers,
    })
}

/// Exact weighted cost `sum w * term(v - query)` by direct summation.
pub fn oracle_1d(values: &[(f64, u64)], query: f64, objective: Objective) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for &(v, w) in values {
        let d = v - query;
        let x = w as f64
            * match objective {
                Objective::L1 => d.abs(),
                Objective::L2 => d * d,
            };
        let t = sum + x;
        carry += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + carry
}

/// An exact minimizer and the minimum of the weighted 1D cost: a weighted
/// median for L1, the weighted mean for L2.
pub fn oracle_1d_min(values: &[(f64, u64)], objective: Objective) -> Result<(f64, f64)> {
    if values.is_empty() {
        return input("no values");
    }
    if values.iter().any(|v| v.1 == 0 || !v.0.is_finite()) {
        return input("weights must be positive and values finite");
    }
    let x = match objective {
        Objective::L1 => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: u64 = sorted.iter().map(|v| v.1).sum();
            let mut acc = 0;
            let mut m = sorted[sorted.len() - 1].0;
            for &(v, w) in &sorted {
                acc += w;
                if 2 * acc >= total {
                    m = v;
                    break;
                }
            }
            m
        }
        Objective::L2 => {
            let total: f64 = values.iter().map(|v| v.1 as f64).sum();
            values.iter().map(|&(v, w)| v * w as f64).sum::<f64>() / total
        }
    };
    Ok((x, oracle_1d(values, x, objective)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Grid nodes per base axis.
    pub resolution: usize,
    /// Descent starts from the best grid nodes, and as many random ones.
    pub restarts: usize,
    pub seed: u64,
    /// Rerun at twice the resolution and restarts and flag a cost change of
    /// 0.5% or more.
    pub self_check: bool,
}

impl OracleConfig {
    pub fn for_kind(kind: ShapeKind, seed: u64) -> Self {
        let resolution = match kind {
            ShapeKind::Circle | ShapeKind::TwoLines | ShapeKind::FlatMedian => 40,
            ShapeKind::Sphere => 16,
            ShapeKind::Cylinder => 8,
        };
        Self {
            resolution,
            restarts: 8,
            seed,
            self_check: true,
        }
    }
}

fn profiled(values: &mut [f64], rule: HeightRule, objective: Objective) -> (f64, f64) {
    let h = match (rule, objective) {
        (HeightRule::Fixed(h), _) => h,
        (HeightRule::Profiled, Objective::L1) => {
            let k = (values.len() - 1) / 2;
            *values.select_nth_unstable_by(k, f64::total_cmp).1
        }
        (HeightRule::Profiled, Objective::L2) => values.iter().sum::<f64>() / values.len() as f64,
    };
    let c = values
        .iter()
        .map(|v| match objective {
            Objective::L1 => (v - h).abs(),
            Objective::L2 => (v - h) * (v - h),
        })
        .sum();
    (h, c)
}

fn oracle_run(
    data: &FitInput<'_>,
    charts: &[ShapeChart],
    objective: Objective,
    resolution: usize,
    restarts: usize,
    seed: u64,
) -> Result<(Shape, f64)> {
    let mut best: Option<(Shape, f64)> = None;
    for (ci, chart) in charts.iter().enumerate() {
        let region = chart.region();
        let d = region.dim();
        let nodes = resolution.pow(d as u32);
        let node = |mut idx: usize| -> Vec<f64> {
            (0..d)
                .map(|a| {
                    let j = idx % resolution;
                    idx /= resolution;
                    region.lo[a] + region.width(a) * j as f64 / (resolution - 1) as f64
                })
                .collect()
        };
        let rule = chart.height_rule();
        let eval = |x: &[f64]| -> f64 {
            let x = region.clamp(x);
            match chart.family().values_at(&x) {
                Ok(mut v) => profiled(&mut v, rule, objective).1,
                Err(_) => f64::INFINITY,
            }
        };
        let scores: Vec<f64> = (0..nodes).into_par_iter().map(|i| eval(&node(i))).collect();
        let mut order: Vec<usize> = (0..nodes).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let mut starts: Vec<Vec<f64>> = order.iter().take(restarts).map(|&i| node(i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ci as u64).wrapping_mul(0x9E37_79B9));
        for _ in 0..restarts {
            starts.push(
                (0..d)
                    .map(|a| uniform_in(&mut rng, region.lo[a], region.hi[a]))
                    .collect(),
            );
        }
        let step: Vec<f64> = (0..d)
            .map(|a| region.width(a).max(1e-9) / (resolution - 1) as f64)
            .collect();
        let results: Vec<(Shape, f64)> = starts
            .par_iter()
            .map(|x0| {
                let base = nelder_mead::minimize(&eval, x0, &step, NmOptions::default()).x;
                let base = region.clamp(&base);
                let mut v = chart.family().values_at(&base).expect("validated base");
                let (h, _) = profiled(&mut v, rule, objective);
                // Free descent over base and height on the shape's own cost.
                let full = |x: &[f64]| -> f64 {
                    let p = ParamPoint::new(x[..d].to_vec(), x[d]);
                    data.cost(&chart.shape(&p), objective)
                };
                let mut x0 = base.clone();
                x0.push(h);
                let mut s = step.iter().map(|v| v * 0.1).collect::<Vec<_>>();
                s.push(match rule {
                    HeightRule::Fixed(_) => 0.0,
                    HeightRule::Profiled => 0.05 * (1.0 + h.abs()),
                });
                let start_cost = full(&x0);
                let x = match rule {
                    HeightRule::Fixed(_) => x0,
                    HeightRule::Profiled => {
                        let out = nelder_mead::minimize(full, &x0, &s, NmOptions::default());
                        if out.value < start_cost {
                            out.x
                        } else {
                            x0
                        }
                    }
                };
                let shape = chart.shape(&ParamPoint::new(x[..d].to_vec(), x[d]));
                let c = data.cost(&shape, objective);
                (shape, c)
            })
            .collect();
        for r in results {
            if best.as_ref().is_none_or(|b| r.1 < b.1) {
                best = Some(r);
            }
        }
    }
    best.ok_or_else(|| Error::Input("no charts".into()))
}

/// Dense grid over the fitters' charts, multistart descent on the exact
/// cost, and an optional stability self-check.
pub fn oracle_fit(
    data: FitInput<'_>,
    kind: ShapeKind,
    objective: Objective,
    cfg: OracleConfig,
) -> Result<FitResult> {
    if cfg.resolution < 2 || cfg.restarts == 0 {
        return input("oracle needs resolution >= 2 and at least one restart");
    }
    let start = std::time::Instant::now();
    let charts = ShapeChart::for_input(&data, kind)?;
    let (mut shape, mut cost) = oracle_run(&data, &charts, objective, cfg.resolution, cfg.restarts, cfg.seed)?;
    let mut flags = FitFlags::default();
    if cfg.self_check {
        let (s2, c2) = oracle_run(
            &data,
            &charts,
            objective,
            2 * cfg.resolution,
            2 * cfg.restarts,
            cfg.seed,
        )?;
        let scale = cost.max(c2);
        if (cost - c2).abs() >= 0.005 * scale && scale > 1e-9 {
            flags.self_check_failed = true;
        }
        if c2 < cost {
            shape = s2;
            cost = c2;
        }
    }
    Ok(FitResult {
        shape,
        cost,
        objective,
        eps: 0.0,
        method: Method::Oracle,
        seed: cfg.seed,
        n: data.len(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        flags,
    })
}

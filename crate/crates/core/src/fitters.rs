//! Shape-level entry points.
//!
//! Each shape kind is searched through one or more [`ShapeChart`]s: a
//! surface family over a base, a search box, and a decoder from parameter
//! points to shapes. The pipeline scores candidates on the level reduction
//! of the family, `direct` on the family itself, and `oracle` hands the
//! same charts to the brute-force search in [`crate::testkit`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::geometry::{
    flat_median_cost, shape_cost, CylinderChart, Flat, Objective, ParamPoint, PointSet, Shape,
    SurfaceFamily, VerticalSurfaces,
};
use crate::ladder::{build_ladder, find_stab, minimize_with, HeightRule, MinimizeConfig, SearchRegion};
use crate::levels::{LevelConfig, Reduction};
use crate::testkit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Circle,
    Sphere,
    Cylinder,
    FlatMedian,
    TwoLines,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::FlatMedian => "flat-median",
            ShapeKind::TwoLines => "two-lines",
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "circle" => ShapeKind::Circle,
            "sphere" => ShapeKind::Sphere,
            "cylinder" => ShapeKind::Cylinder,
            "flat-median" | "flats" | "lines" => ShapeKind::FlatMedian,
            "two-lines" => ShapeKind::TwoLines,
            other => return input(format!("unknown shape kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Level reduction, ladder-scored search, exact polish.
    Pipeline,
    /// Ladder-scored search on the full family.
    Direct,
    /// Brute-force multistart search.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub eps: f64,
    pub objective: Objective,
    pub method: Method,
    pub seed: u64,
    /// Cap on evaluator passes over the family per chart.
    pub budget: usize,
    pub chernoff_c: f64,
    pub m_c: f64,
    /// Coarse grid cells per base axis; `None` picks by base dimension.
    pub grid: Option<usize>,
    pub top_k: usize,
}

impl FitConfig {
    pub fn new(eps: f64, objective: Objective) -> Self {
        Self {
            eps,
            objective,
            method: Method::Pipeline,
            seed: 0,
            budget: 400_000,
            chernoff_c: 4.0,
            m_c: 1.0,
            grid: None,
            top_k: 16,
        }
    }

    pub fn with_method(self, method: Method) -> Self {
        Self { method, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.25) {
            return input(format!("eps must lie in (0, 1/4), got {}", self.eps));
        }
        if !(self.chernoff_c > 0.0 && self.m_c > 0.0) {
            return input("chernoff_c and m_c must be positive");
        }
        if self.top_k == 0 || self.grid == Some(0) {
            return input("grid and top_k must be positive");
        }
        Ok(())
    }

    pub fn grid_for(&self, base_dim: usize) -> usize {
        self.grid.unwrap_or(default_grid(base_dim))
    }
}

pub fn default_grid(base_dim: usize) -> usize {
    match base_dim {
        0 | 1 => 64,
        2 => 24,
        3 => 12,
        _ => 7,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitFlags {
    pub budget_exhausted: bool,
    pub zero_cost_shortcut: bool,
    /// Oracle only: doubling its resolution moved the cost by 0.5% or more.
    #[serde(default)]
    pub self_check_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub shape: Shape,
    /// Exact cost of `shape` against the input.
    pub cost: f64,
    pub objective: Objective,
    pub eps: f64,
    pub method: Method,
    pub seed: u64,
    pub n: usize,
    pub elapsed_ms: f64,
    pub flags: FitFlags,
}

/// Input to a fit: points, or flats for the median point.
#[derive(Debug, Clone, Copy)]
pub enum FitInput<'a> {
    Points(&'a PointSet),
    Flats(&'a [Flat]),
}

impl FitInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            FitInput::Points(p) => p.len(),
            FitInput::Flats(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact cost of `shape` against this input.
    pub fn cost(&self, shape: &Shape, objective: Objective) -> f64 {
        match (self, shape) {
            (FitInput::Points(p), s) => shape_cost(s, p, objective),
            (FitInput::Flats(f), Shape::MedianPoint { coords }) => {
                flat_median_cost(coords, f, objective)
            }
            (FitInput::Flats(_), _) => f64::INFINITY,
        }
    }
}

fn anchors(flats: &[Flat]) -> Result<PointSet> {
    let rows: Vec<&[f64]> = flats.iter().map(|f| f.anchor.as_slice()).collect();
    PointSet::from_rows(&rows)
}

#[derive(Debug, Clone)]
enum Decoder {
    Center,
    Cylinder(CylinderChart),
    TwoLines([f64; 2]),
    Median,
}

/// A parametrization of one shape kind as a vertical-distance problem.
#[derive(Debug, Clone)]
pub struct ShapeChart {
    family: SurfaceFamily,
    region: SearchRegion,
    height: HeightRule,
    decoder: Decoder,
}

impl ShapeChart {
    /// All charts used for `kind`: one, or one per dominant axis for
    /// cylinders. The search box is the input's bounding box padded by its
    /// diameter (angles get fixed ranges).
    pub fn for_input(input_data: &FitInput<'_>, kind: ShapeKind) -> Result<Vec<ShapeChart>> {
        let pts_owned;
        let pts = match (input_data, kind) {
            (FitInput::Points(p), ShapeKind::FlatMedian) => {
                return input(format!(
                    "flat-median fitting takes flats, got {} points",
                    p.len()
                ))
            }
            (FitInput::Flats(_), k) if k != ShapeKind::FlatMedian => {
                return input(format!("{} fitting takes points, got flats", k.name()))
            }
            (FitInput::Points(p), _) => *p,
            (FitInput::Flats(f), _) => {
                pts_owned = anchors(f)?;
                &pts_owned
            }
        };
        if pts.is_empty() {
            return input("empty input");
        }
        let need = |d: usize| -> Result<()> {
            if pts.dim() != d {
                return input(format!("{} fitting needs points in R^{d}", kind.name()));
            }
            Ok(())
        };
        let diam = pts.diameter();
        let pad = if diam > 0.0 { diam } else { 1.0 };
        let (lo, hi) = pts.bounding_box();
        let padded = |axes: &[usize]| -> Result<SearchRegion> {
            SearchRegion::new(
                axes.iter().map(|&a| lo[a] - pad).collect(),
                axes.iter().map(|&a| hi[a] + pad).collect(),
            )
        };
        let chart = match kind {
            ShapeKind::Circle | ShapeKind::Sphere => {
                need(if kind == ShapeKind::Circle { 2 } else { 3 })?;
                ShapeChart {
                    family: SurfaceFamily::cones(pts),
                    region: padded(&(0..pts.dim()).collect::<Vec<_>>())?,
                    height: HeightRule::Profiled,
                    decoder: Decoder::Center,
                }
            }
            ShapeKind::Cylinder => {
                need(3)?;
                let centroid = pts.centroid();
                return (0..3)
                    .map(|axis| {
                        let chart = CylinderChart {
                            axis,
                            anchor: centroid[axis],
                        };
                        let q = padded(&[(axis + 1) % 3, (axis + 2) % 3])?;
                        let mut lo = q.lo;
                        let mut hi = q.hi;
                        lo.extend([-CYLINDER_TILT, -CYLINDER_TILT]);
                        hi.extend([CYLINDER_TILT, CYLINDER_TILT]);
                        Ok(ShapeChart {
                            family: SurfaceFamily::cylinder(pts, chart)?,
                            region: SearchRegion::new(lo, hi)?,
                            height: HeightRule::Profiled,
                            decoder: Decoder::Cylinder(chart),
                        })
                    })
                    .collect();
            }
            ShapeKind::TwoLines => {
                need(2)?;
                let c = pts.centroid();
                let origin = [c[0], c[1]];
                ShapeChart {
                    family: SurfaceFamily::parallel_lines(pts, origin)?,
                    region: SearchRegion::new(
                        vec![0.0, -pad],
                        vec![std::f64::consts::PI, pad],
                    )?,
                    height: HeightRule::Profiled,
                    decoder: Decoder::TwoLines(origin),
                }
            }
            ShapeKind::FlatMedian => {
                let FitInput::Flats(flats) = input_data else {
                    unreachable!("checked above")
                };
                ShapeChart {
                    family: SurfaceFamily::flats(flats.to_vec())?,
                    region: padded(&(0..pts.dim()).collect::<Vec<_>>())?,
                    height: HeightRule::Fixed(0.0),
                    decoder: Decoder::Median,
                }
            }
        };
        Ok(vec![chart])
    }

    pub fn family(&self) -> &SurfaceFamily {
        &self.family
    }

    pub fn region(&self) -> &SearchRegion {
        &self.region
    }

    pub fn height_rule(&self) -> HeightRule {
        self.height
    }

    /// The shape encoded by `p`.
    pub fn shape(&self, p: &ParamPoint) -> Shape {
        let b = &p.base;
        match &self.decoder {
            Decoder::Center if b.len() == 2 => Shape::Circle {
                center: [b[0], b[1]],
                radius: p.height,
            },
            Decoder::Center => Shape::Sphere {
                center: [b[0], b[1], b[2]],
                radius: p.height,
            },
            Decoder::Cylinder(chart) => {
                let (q, v) = chart.decode(b);
                Shape::Cylinder {
                    axis_point: q,
                    axis_dir: v,
                    radius: p.height,
                }
            }
            Decoder::TwoLines(origin) => {
                let (s, c) = b[0].sin_cos();
                Shape::ParallelLines {
                    angle: b[0],
                    offset: b[1] + origin[0] * c + origin[1] * s,
                    half_gap: p.height,
                }
            }
            Decoder::Median => Shape::MedianPoint { coords: b.clone() },
        }
    }

    /// Inverse of [`shape`](Self::shape); `None` for a shape of another
    /// kind or outside this chart.
    pub fn encode(&self, shape: &Shape) -> Option<ParamPoint> {
        match (&self.decoder, shape) {
            (Decoder::Center, Shape::Circle { center, radius }) if self.region.dim() == 2 => {
                Some(ParamPoint::new(center.to_vec(), *radius))
            }
            (Decoder::Center, Shape::Sphere { center, radius }) if self.region.dim() == 3 => {
                Some(ParamPoint::new(center.to_vec(), *radius))
            }
            (
                Decoder::Cylinder(chart),
                Shape::Cylinder {
                    axis_point,
                    axis_dir,
                    radius,
                },
            ) => chart
                .encode(axis_point, axis_dir)
                .map(|b| ParamPoint::new(b, *radius)),
            (
                Decoder::TwoLines(origin),
                Shape::ParallelLines {
                    angle,
                    offset,
                    half_gap,
                },
            ) => {
                let (s, c) = angle.sin_cos();
                let local = offset - origin[0] * c - origin[1] * s;
                Some(ParamPoint::new(vec![*angle, local], *half_gap))
            }
            (Decoder::Median, Shape::MedianPoint { coords }) => {
                Some(ParamPoint::new(coords.clone(), 0.0))
            }
            _ => None,
        }
    }
}

/// Largest tilt (radians) of a cylinder axis away from its chart axis, per
/// direction. The three charts cover all directions at `pi/4`.
const CYLINDER_TILT: f64 = 1.0;

/// Shape with zero cost when every input item coincides, if one exists.
fn coincident_fit(input_data: &FitInput<'_>, kind: ShapeKind) -> Option<Shape> {
    let p = match input_data {
        FitInput::Points(p) if p.diameter() == 0.0 => p.point(0).to_vec(),
        FitInput::Flats(f) if anchors(f).ok()?.diameter() == 0.0 => f[0].anchor.clone(),
        _ => return None,
    };
    Some(match kind {
        ShapeKind::Circle => Shape::Circle {
            center: [p[0], p[1]],
            radius: 0.0,
        },
        ShapeKind::Sphere => Shape::Sphere {
            center: [p[0], p[1], p[2]],
            radius: 0.0,
        },
        ShapeKind::Cylinder => Shape::Cylinder {
            axis_point: [p[0], p[1], p[2]],
            axis_dir: [0.0, 0.0, 1.0],
            radius: 0.0,
        },
        ShapeKind::TwoLines => Shape::ParallelLines {
            angle: 0.0,
            offset: p[0],
            half_gap: 0.0,
        },
        ShapeKind::FlatMedian => Shape::MedianPoint { coords: p },
    })
}

struct ChartFit {
    shape: Shape,
    cost: f64,
    flags: FitFlags,
}

fn search_chart<S: VerticalSurfaces + ?Sized>(
    chart: &ShapeChart,
    search: &S,
    input_data: &FitInput<'_>,
    diameter: f64,
    cfg: &FitConfig,
) -> Result<ChartFit> {
    let grid = cfg.grid_for(chart.region.dim());
    let stab = find_stab(search, &chart.region, grid.max(2))?;
    // With a fixed height the segment must also reach that height.
    let sigma = match chart.height {
        HeightRule::Profiled => stab.length,
        HeightRule::Fixed(h) => stab.length.max((stab.mid_height - h).abs() + stab.length / 2.0),
    };
    if sigma <= 1e-12 * diameter {
        let h = match chart.height {
            HeightRule::Profiled => stab.mid_height,
            HeightRule::Fixed(h) => h,
        };
        let shape = chart.shape(&ParamPoint::new(stab.base.clone(), h));
        return Ok(ChartFit {
            cost: input_data.cost(&shape, cfg.objective),
            shape,
            flags: FitFlags {
                zero_cost_shortcut: true,
                ..FitFlags::default()
            },
        });
    }
    let ladder = build_ladder(sigma, search.total_weight(), cfg.eps)?;
    let mcfg = MinimizeConfig {
        top_k: cfg.top_k,
        budget: cfg.budget,
        height: chart.height,
        ..MinimizeConfig::new(cfg.eps, cfg.objective, grid, cfg.seed)
    };
    let min = minimize_with(search, &chart.family, &ladder, &chart.region, &mcfg)?;
    let shape = chart.shape(&min.point);
    Ok(ChartFit {
        cost: input_data.cost(&shape, cfg.objective),
        shape,
        flags: FitFlags {
            budget_exhausted: min.budget_exhausted,
            ..FitFlags::default()
        },
    })
}

/// Fits `kind` to `input_data` with the configured method.
pub fn fit(input_data: FitInput<'_>, kind: ShapeKind, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let start = Instant::now();
    if input_data.is_empty() {
        return input("empty input");
    }
    if kind == ShapeKind::TwoLines && input_data.len() < 2 {
        return input("two-line fitting needs at least 2 points");
    }
    let charts = ShapeChart::for_input(&input_data, kind)?;
    let finish = |shape: Shape, flags: FitFlags| FitResult {
        cost: input_data.cost(&shape, cfg.objective),
        shape,
        objective: cfg.objective,
        eps: cfg.eps,
        method: cfg.method,
        seed: cfg.seed,
        n: input_data.len(),
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        flags,
    };
    if let Some(shape) = coincident_fit(&input_data, kind) {
        let flags = FitFlags {
            zero_cost_shortcut: true,
            ..FitFlags::default()
        };
        return Ok(finish(shape, flags));
    }
    if cfg.method == Method::Oracle {
        let res = testkit::oracle_fit(
            input_data,
            kind,
            cfg.objective,
            testkit::OracleConfig::for_kind(kind, cfg.seed),
        )?;
        return Ok(FitResult {
            eps: cfg.eps,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            ..res
        });
    }
    let diameter = match input_data {
        FitInput::Points(p) => p.diameter(),
        FitInput::Flats(f) => anchors(f)?.diameter().max(1.0),
    };
    let mut best: Option<ChartFit> = None;
    for chart in &charts {
        let fit = match cfg.method {
            Method::Direct => search_chart(chart, &chart.family, &input_data, diameter, cfg)?,
            _ => {
                let lc = LevelConfig {
                    chernoff_c: cfg.chernoff_c,
                    m_c: cfg.m_c,
                };
                let reduction = Reduction::build(&chart.family, cfg.eps, cfg.seed, &lc)?;
                let reduced = reduction.over(&chart.family)?;
                search_chart(chart, &reduced, &input_data, diameter, cfg)?
            }
        };
        if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
            best = Some(fit);
        }
    }
    let best = best.expect("at least one chart");
    Ok(finish(best.shape, best.flags))
}

pub fn fit_circle(points: &PointSet, cfg: &FitConfig) -> Result<FitResult> {
    fit(FitInput::Points(points), ShapeKind::Circle, cfg)
}

pub fn fit_sphere(points: &PointSet, cfg: &FitConfig) -> Result<FitResult> {
    fit(FitInput::Points(points), ShapeKind::Sphere, cfg)
}

pub fn fit_cylinder(points: &PointSet, cfg: &FitConfig) -> Result<FitResult> {
    fit(FitInput::Points(points), ShapeKind::Cylinder, cfg)
}

pub fn fit_flat_median(flats: &[Flat], cfg: &FitConfig) -> Result<FitResult> {
    fit(FitInput::Flats(flats), ShapeKind::FlatMedian, cfg)
}

pub fn two_lines_fit(points: &PointSet, cfg: &FitConfig) -> Result<FitResult> {
    fit(FitInput::Points(points), ShapeKind::TwoLines, cfg)
}

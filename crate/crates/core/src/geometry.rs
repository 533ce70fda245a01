//! Point sets, parameter-space surface families and exact vertical costs.
//!
//! Every fitting problem is phrased over a parameter space split into a
//! *base* (the first `base_dim` coordinates) and a *height*. Each input item
//! induces a nonnegative function of the base; its graph is a surface, and the
//! vertical distance between a parameter point and that surface is the
//! item's distance to the shape encoded by the point.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// L1 (sum of distances) or L2 (sum of squared distances).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    L1,
    L2,
}

impl Objective {
    #[inline]
    pub fn term(self, distance: f64) -> f64 {
        match self {
            Objective::L1 => distance.abs(),
            Objective::L2 => distance * distance,
        }
    }
}

/// Points in the plane or in space, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return input(format!("point dimension must be 2 or 3, got {dim}"));
        }
        if !coords.len().is_multiple_of(dim) {
            return input(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            ));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return input(format!("point {} has a non-finite coordinate", i / dim));
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return input("empty point set");
        };
        let dim = first.as_ref().len();
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return input(format!(
                    "point {i} has dimension {}, expected {dim}",
                    row.len()
                ));
            }
            coords.extend_from_slice(row);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        bounding_box(self.iter(), self.dim)
    }

    /// Diagonal of the bounding box; within a factor √D of the true diameter.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        norm_diff(&hi, &lo)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.iter() {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi;
            }
        }
        let n = self.len().max(1) as f64;
        c.iter_mut().for_each(|ci| *ci /= n);
        c
    }

    pub fn translated(&self, t: &[f64]) -> Self {
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(t).map(|(a, b)| a + b))
            .collect();
        Self { dim: self.dim, coords }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            coords: self.coords.iter().map(|c| c * s).collect(),
        }
    }
}

pub(crate) fn bounding_box<'a>(
    rows: impl Iterator<Item = &'a [f64]>,
    dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in rows {
        for j in 0..dim {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    (lo, hi)
}

#[inline]
pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An affine subspace `anchor + span(basis)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flat {
    pub anchor: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
}

impl Flat {
    pub fn new(anchor: Vec<f64>, basis: Vec<Vec<f64>>) -> Result<Self> {
        let flat = Self { anchor, basis };
        flat.validate()?;
        Ok(flat)
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Dimension check, finiteness and orthonormality of the basis within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let d = self.anchor.len();
        if !(d == 2 || d == 3) {
            return input(format!("flat lives in dimension {d}; expected 2 or 3"));
        }
        if self.basis.len() >= d {
            return input(format!("a flat in R^{d} needs fewer than {d} basis vectors"));
        }
        let all = self.anchor.iter().chain(self.basis.iter().flatten());
        if all.clone().any(|c| !c.is_finite()) {
            return input("flat has non-finite coordinates");
        }
        for (i, u) in self.basis.iter().enumerate() {
            if u.len() != d {
                return input(format!("basis vector {i} has dimension {}", u.len()));
            }
            for (j, v) in self.basis.iter().enumerate().skip(i) {
                let expected = if i == j { 1.0 } else { 0.0 };
                let got = dot(u, v);
                if (got - expected).abs() > 1e-9 {
                    return input(format!(
                        "basis vectors {i} and {j} are not orthonormal (dot = {got})"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn distance(&self, p: &[f64]) -> f64 {
        let mut r: Vec<f64> = p.iter().zip(&self.anchor).map(|(a, b)| a - b).collect();
        for v in &self.basis {
            let t = dot(&r, v);
            for (ri, vi) in r.iter_mut().zip(v) {
                *ri -= t * vi;
            }
        }
        r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A parameter-space point: base coordinates plus height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub base: Vec<f64>,
    pub height: f64,
}

impl ParamPoint {
    pub fn new(base: Vec<f64>, height: f64) -> Self {
        Self { base, height }
    }
}

/// Chart for lines in space: the axis meets the plane `x[axis] = anchor` at
/// `(q1, q2)` and its direction is `e_axis + tan(a)·e_next + tan(b)·e_after`,
/// normalized. Directions orthogonal to `e_axis` are outside the chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderChart {
    pub axis: usize,
    pub anchor: f64,
}

impl CylinderChart {
    fn others(&self) -> (usize, usize) {
        ((self.axis + 1) % 3, (self.axis + 2) % 3)
    }

    pub fn decode(&self, base: &[f64]) -> ([f64; 3], [f64; 3]) {
        let (b, c) = self.others();
        let mut q = [0.0; 3];
        q[self.axis] = self.anchor;
        q[b] = base[0];
        q[c] = base[1];
        let mut v = [0.0; 3];
        v[self.axis] = 1.0;
        v[b] = base[2].tan();
        v[c] = base[3].tan();
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.iter_mut().for_each(|x| *x /= len);
        (q, v)
    }

    /// Inverse of [`decode`](Self::decode); `None` when the direction is
    /// orthogonal to the chart axis.
    pub fn encode(&self, point: &[f64; 3], dir: &[f64; 3]) -> Option<Vec<f64>> {
        let (b, c) = self.others();
        let da = dir[self.axis];
        if da.abs() < 1e-12 {
            return None;
        }
        let t = (self.anchor - point[self.axis]) / da;
        Some(vec![
            point[b] + t * dir[b],
            point[c] + t * dir[c],
            (dir[b] / da).atan(),
            (dir[c] / da).atan(),
        ])
    }
}

#[inline]
fn line_distance(p: &[f64], q: &[f64; 3], v: &[f64; 3]) -> f64 {
    let r = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    let t = r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
    let w = [r[0] - t * v[0], r[1] - t * v[1], r[2] - t * v[2]];
    (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    CircleCone,
    SphereCone,
    Cylinder,
    FlatMedian,
    ParallelLines,
    Explicit1dStack,
}

#[derive(Debug, Clone)]
enum Members {
    /// Distance cones over the plane or space; `dim` is 2 or 3.
    Cones { dim: usize, sources: Vec<f64> },
    Cylinder { chart: CylinderChart, sources: Vec<f64> },
    /// Base `(angle, offset)`; value `|<p - origin, n(angle)> - offset|`.
    ParallelLines { origin: [f64; 2], sources: Vec<f64> },
    Flats { dim: usize, flats: Vec<Flat> },
    /// Constant surfaces; the base is ignored.
    Stack { base_dim: usize, values: Vec<f64> },
}

/// Weighted surfaces `gamma_i = graph(f_i)` over a common base space.
#[derive(Debug, Clone)]
pub struct SurfaceFamily {
    members: Members,
    weights: Vec<u64>,
}

impl SurfaceFamily {
    fn with_unit_weights(members: Members, n: usize) -> Self {
        Self {
            members,
            weights: vec![1; n],
        }
    }

    /// Distance cones `f_i(c) = |p_i - c|`; circles for planar input,
    /// spheres for spatial input.
    pub fn cones(points: &PointSet) -> Self {
        let members = Members::Cones {
            dim: points.dim(),
            sources: points.coords().to_vec(),
        };
        Self::with_unit_weights(members, points.len())
    }

    pub fn cylinder(points: &PointSet, chart: CylinderChart) -> Result<Self> {
        if points.dim() != 3 {
            return input("cylinder fitting needs points in R^3");
        }
        if chart.axis > 2 {
            return input(format!("chart axis {} is not a coordinate axis", chart.axis));
        }
        let members = Members::Cylinder {
            chart,
            sources: points.coords().to_vec(),
        };
        Ok(Self::with_unit_weights(members, points.len()))
    }

    pub fn parallel_lines(points: &PointSet, origin: [f64; 2]) -> Result<Self> {
        if points.dim() != 2 {
            return input("two-line fitting needs points in R^2");
        }
        let members = Members::ParallelLines {
            origin,
            sources: points.coords().to_vec(),
        };
        Ok(Self::with_unit_weights(members, points.len()))
    }

    pub fn flats(flats: Vec<Flat>) -> Result<Self> {
        let Some(first) = flats.first() else {
            return input("empty flat set");
        };
        let dim = first.dim();
        for (i, f) in flats.iter().enumerate() {
            f.validate().map_err(|e| Error::Input(format!("flat {i}: {e}")))?;
            if f.dim() != dim {
                return input(format!("flat {i} lives in R^{}, expected R^{dim}", f.dim()));
            }
        }
        let n = flats.len();
        Ok(Self::with_unit_weights(Members::Flats { dim, flats }, n))
    }

    /// Constant surfaces at the given heights over a `base_dim`-dimensional base.
    pub fn stack(values: Vec<f64>, base_dim: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return input("stack values must be finite and nonnegative");
        }
        let n = values.len();
        Ok(Self::with_unit_weights(Members::Stack { base_dim, values }, n))
    }

    pub fn with_weights(mut self, weights: Vec<u64>) -> Result<Self> {
        if weights.len() != self.len() {
            return input(format!(
                "{} weights for {} members",
                weights.len(),
                self.len()
            ));
        }
        if weights.contains(&0) {
            return input("weights must be positive integers");
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn kind(&self) -> FamilyKind {
        match &self.members {
            Members::Cones { dim: 2, .. } => FamilyKind::CircleCone,
            Members::Cones { .. } => FamilyKind::SphereCone,
            Members::Cylinder { .. } => FamilyKind::Cylinder,
            Members::ParallelLines { .. } => FamilyKind::ParallelLines,
            Members::Flats { .. } => FamilyKind::FlatMedian,
            Members::Stack { .. } => FamilyKind::Explicit1dStack,
        }
    }

    pub fn base_dim(&self) -> usize {
        match &self.members {
            Members::Cones { dim, .. } => *dim,
            Members::Cylinder { .. } => 4,
            Members::ParallelLines { .. } => 2,
            Members::Flats { dim, .. } => *dim,
            Members::Stack { base_dim, .. } => *base_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn is_unweighted(&self) -> bool {
        self.weights.iter().all(|&w| w == 1)
    }

    pub fn cylinder_chart(&self) -> Option<CylinderChart> {
        match &self.members {
            Members::Cylinder { chart, .. } => Some(*chart),
            _ => None,
        }
    }

    pub fn parallel_lines_origin(&self) -> Option<[f64; 2]> {
        match &self.members {
            Members::ParallelLines { origin, .. } => Some(*origin),
            _ => None,
        }
    }

    fn check_base(&self, base: &[f64]) -> Result<()> {
        if base.len() != self.base_dim() {
            return input(format!(
                "base has {} components, family expects {}",
                base.len(),
                self.base_dim()
            ));
        }
        if base.iter().any(|b| !b.is_finite()) {
            return input("base has non-finite components");
        }
        Ok(())
    }

    /// `f_i(base)` for a single member.
    pub fn surface_value(&self, index: usize, base: &[f64]) -> Result<f64> {
        if index >= self.len() {
            return Err(Error::Index {
                index,
                len: self.len(),
            });
        }
        self.check_base(base)?;
        let mut out = 0.0;
        self.visit_indices(base, std::iter::once(index), &mut |v, _| out = v);
        Ok(out)
    }

    /// Calls `f(value, weight)` for the listed members, in order. The base
    /// must already be validated.
    pub(crate) fn visit_indices(
        &self,
        base: &[f64],
        indices: impl Iterator<Item = usize>,
        f: &mut dyn FnMut(f64, u64),
    ) {
        let w = &self.weights;
        match &self.members {
            Members::Cones { dim, sources } => {
                let d = *dim;
                for i in indices {
                    let p = &sources[i * d..(i + 1) * d];
                    f(norm_diff(p, base), w[i]);
                }
            }
            Members::Cylinder { chart, sources } => {
                let (q, v) = chart.decode(base);
                for i in indices {
                    f(line_distance(&sources[i * 3..i * 3 + 3], &q, &v), w[i]);
                }
            }
            Members::ParallelLines { origin, sources } => {
                let (s, c) = base[0].sin_cos();
                for i in indices {
                    let p = &sources[i * 2..i * 2 + 2];
                    let proj = (p[0] - origin[0]) * c + (p[1] - origin[1]) * s;
                    f((proj - base[1]).abs(), w[i]);
                }
            }
            Members::Flats { flats, .. } => {
                for i in indices {
                    f(flats[i].distance(base), w[i]);
                }
            }
            Members::Stack { values, .. } => {
                for i in indices {
                    f(values[i], w[i]);
                }
            }
        }
    }

    /// Surface values of all members at `base`.
    pub fn values_at(&self, base: &[f64]) -> Result<Vec<f64>> {
        self.check_base(base)?;
        let mut out = Vec::with_capacity(self.len());
        self.visit_indices(base, 0..self.len(), &mut |v, _| out.push(v));
        Ok(out)
    }
}

/// Anything that presents a weighted collection of surfaces along every
/// vertical line: the exact family, or a reduced stand-in for it.
pub trait VerticalSurfaces: Sync {
    fn base_dim(&self) -> usize;

    /// Total weight crossing any vertical line.
    fn total_weight(&self) -> u64;

    /// Calls `f(surface value, weight)` for every surface over `base`.
    fn visit(&self, base: &[f64], f: &mut dyn FnMut(f64, u64)) -> Result<()>;

    fn weighted_values(&self, base: &[f64]) -> Result<Vec<(f64, u64)>> {
        let mut out = Vec::new();
        self.visit(base, &mut |v, w| out.push((v, w)))?;
        Ok(out)
    }
}

impl VerticalSurfaces for SurfaceFamily {
    fn base_dim(&self) -> usize {
        SurfaceFamily::base_dim(self)
    }

    fn total_weight(&self) -> u64 {
        self.weights.iter().sum()
    }

    fn visit(&self, base: &[f64], f: &mut dyn FnMut(f64, u64)) -> Result<()> {
        self.check_base(base)?;
        self.visit_indices(base, 0..self.len(), f);
        Ok(())
    }
}

/// Weighted vertical-distance cost `sum w * term(f(base) - height)`.
pub fn cost<S: VerticalSurfaces + ?Sized>(
    surfaces: &S,
    p: &ParamPoint,
    objective: Objective,
) -> Result<f64> {
    if !p.height.is_finite() {
        return input("height is not finite");
    }
    let mut acc = NeumaierSum::new();
    surfaces.visit(&p.base, &mut |v, w| {
        acc.add(w as f64 * objective.term(v - p.height))
    })?;
    Ok(acc.value())
}

pub fn cost_l1<S: VerticalSurfaces + ?Sized>(surfaces: &S, p: &ParamPoint) -> Result<f64> {
    cost(surfaces, p, Objective::L1)
}

pub fn cost_l2<S: VerticalSurfaces + ?Sized>(surfaces: &S, p: &ParamPoint) -> Result<f64> {
    cost(surfaces, p, Objective::L2)
}

/// `x` and `y` are `(1 ± eps)`-approximations of each other.
pub fn approx_eq(x: f64, y: f64, eps: f64) -> Result<bool> {
    if !(eps > 0.0 && eps < 0.25) {
        return input(format!("eps must lie in (0, 1/4), got {eps}"));
    }
    if !(x >= 0.0 && y >= 0.0) {
        return input("approx_eq is defined for nonnegative numbers");
    }
    Ok((1.0 - eps) * x <= y
        && y <= (1.0 + eps) * x
        && (1.0 - eps) * y <= x
        && x <= (1.0 + eps) * y)
}

/// A fitted shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Shape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Cylinder {
        axis_point: [f64; 3],
        axis_dir: [f64; 3],
        radius: f64,
    },
    MedianPoint {
        coords: Vec<f64>,
    },
    /// The lines `<x, (cos angle, sin angle)> = offset ± half_gap`.
    ParallelLines {
        angle: f64,
        offset: f64,
        half_gap: f64,
    },
}

impl Shape {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Shape::Circle { .. } => "circle",
            Shape::Sphere { .. } => "sphere",
            Shape::Cylinder { .. } => "cylinder",
            Shape::MedianPoint { .. } => "median_point",
            Shape::ParallelLines { .. } => "parallel_lines",
        }
    }

    /// Euclidean distance from `p` to the shape. For a median point this is
    /// the distance between the two points.
    pub fn distance(&self, p: &[f64]) -> f64 {
        match self {
            Shape::Circle { center, radius } => (norm_diff(p, center) - radius).abs(),
            Shape::Sphere { center, radius } => (norm_diff(p, center) - radius).abs(),
            Shape::Cylinder {
                axis_point,
                axis_dir,
                radius,
            } => (line_distance(p, axis_point, axis_dir) - radius).abs(),
            Shape::MedianPoint { coords } => norm_diff(p, coords),
            Shape::ParallelLines {
                angle,
                offset,
                half_gap,
            } => {
                let (s, c) = angle.sin_cos();
                let proj = p[0] * c + p[1] * s;
                let a = (proj - (offset + half_gap)).abs();
                let b = (proj - (offset - half_gap)).abs();
                a.min(b)
            }
        }
    }
}

/// Exact fitting cost of `shape` against `points`.
pub fn shape_cost(shape: &Shape, points: &PointSet, objective: Objective) -> f64 {
    points
        .iter()
        .map(|p| objective.term(shape.distance(p)))
        .collect::<NeumaierSum>()
        .value()
}

/// Exact cost of a candidate median point against a set of flats.
pub fn flat_median_cost(point: &[f64], flats: &[Flat], objective: Objective) -> f64 {
    flats
        .iter()
        .map(|f| objective.term(f.distance(point)))
        .collect::<NeumaierSum>()
        .value()
}

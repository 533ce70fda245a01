//! Approximate L1/L2 fitting of circles, spheres, cylinders, parallel line
//! pairs and flat medians.
//!
//! A fitting problem becomes a family of surfaces over a parameter space;
//! the cost of a candidate shape is the (squared) vertical distance sum to
//! that family. The crate builds a 1D median coreset ([`coreset1d`]), lifts
//! it to arrangements through sampled levels ([`levels`]), quantizes
//! distances on a ladder ([`ladder`]) and searches the result
//! ([`fitters`]). [`testkit`] holds generators and brute-force oracles.

pub mod coreset1d;
pub mod error;
pub mod fitters;
pub mod geometry;
pub mod ladder;
pub mod levels;
mod nelder_mead;
pub mod testkit;

pub use error::{Error, Result};
pub use geometry::{
    cost, cost_l1, cost_l2, CylinderChart, FamilyKind, Flat, Objective, ParamPoint, PointSet,
    Shape, SurfaceFamily, VerticalSurfaces,
};

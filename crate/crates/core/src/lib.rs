//! Fast evaluation of the free-space Poisson potential
//! `u(x) = ∫_Ω f(y) / (4π|x - y|) dy` on tetrahedral meshes.
//!
//! The pipeline is: build a [`tree::HierarchyTree`] from a base mesh, cache
//! degree-6 quadrature on its leaves, build per-leaf
//! [`interaction::InteractionLists`], precompute Cartesian multipole
//! moments, and evaluate with one of the solvers in [`solver`]: direct
//! summation, the p-adaptive treecode, or the treecode with direct-summation
//! fallback.

pub mod bench;
pub mod error;
pub mod expansion;
pub mod geometry;
pub mod interaction;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
pub use geometry::Point3;

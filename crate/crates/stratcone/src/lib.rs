//! Desk-scale lab for modeling singular sets with conical structure.
//!
//! The library builds unions of simple convex cones into "complex cone" models
//! (planes, the Y set of three coplanar rays, the cone over the tetrahedral
//! edge graph, and their products with lines), measures how closely a sampled
//! point set follows such a model at a given location and scale, splits a
//! sample into strata by the smallest model type that fits persistently, and
//! then builds a bi-Hölder parameterization of the sample over a reference
//! cone by composing small smoothed projection steps.
//!
//! Ambient dimension is 3 or 4. Points are carried as `nalgebra::Vector4<f64>`
//! with unused trailing coordinates pinned to zero, so inner products and
//! norms never need to know the active dimension.

pub mod align;
pub mod cone;
pub mod cover;
pub mod flow;
pub mod geom;
pub mod metric;
pub mod strata;

pub use cone::{
    alpha, blow_up, catalog_reference, project_to_branch, standard_catalog, validate_complex_cone,
    CatalogKind, ComplexCone, ConeError, ConeSet, DirectionSet, FaceLattice, SimpleCone,
    SpineBranch,
};
pub use geom::{Mat4, Vec4};

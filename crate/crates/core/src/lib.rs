//! Spanning surfaces of least total squared Gaussian curvature for closed
//! space curves, with the curve constrained to be a geodesic.
//!
//! The pipeline runs in two stages. First the conformal factor `f` of an
//! isothermal metric `e^{2f}(dx² + dy²)` is solved on the projected domain
//! (a clamped biharmonic problem, optionally refined against the full
//! Euler-Lagrange operator). Then the height function `h` of the surface is
//! recovered from the prescribed curvature `K = -e^{-2f} Δf` through a
//! Monge-Ampère solve coupled to a harmonic coordinate change.
//!
//! Module map:
//!
//! * [`contour`]: input curve, projection frame, boundary data for `f`.
//! * [`grid`]: masked uniform grid over the projected domain.
//! * [`conformal`]: conformal factor solves and the Euler-Lagrange residual.
//! * [`curvature`]: curvature field, energy, divergence diagnostics.
//! * [`height`]: coordinate maps and the Monge-Ampère height solve.
//! * [`mesh`], [`pipeline`]: mesh export, mesh curvature, end-to-end run.

pub mod conformal;
pub mod contour;
pub mod curvature;
mod error;
pub mod field;
mod geom;
pub mod grid;
pub mod height;
pub mod mesh;
pub mod pipeline;
pub mod sparse;
pub mod stencil;

pub use error::{Error, Result};
pub use field::ScalarField;
pub use grid::{GridDomain, NodeClass};

pub use nalgebra::{Vector2, Vector3};

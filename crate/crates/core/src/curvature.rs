//! Curvature of the conformal metric and its integral diagnostics.

use crate::conformal::boundary_normal_derivatives;
use crate::field::ScalarField;
use crate::grid::GridDomain;
use crate::stencil::fd_derivatives;

/// `K = −e^{−2f}·Δf` together with the factor it came from.
#[derive(Clone, Debug)]
pub struct CurvatureField {
    pub k: ScalarField,
    pub f: ScalarField,
}

pub fn curvature_field(f: &ScalarField) -> CurvatureField {
    let d = fd_derivatives(f);
    let g = f.grid();
    let mut k = ScalarField::zeros(g);
    for n in g.active_nodes() {
        k.set(n, -(-2.0 * f.get(n)).exp() * d.laplacian(n));
    }
    CurvatureField { k, f: f.clone() }
}

/// Discrete `∫ e^{−2f} (Δf)² dx dy` over interior nodes, which equals the
/// total squared curvature `∫ K² dvol`.
pub fn energy(f: &ScalarField) -> f64 {
    let d = fd_derivatives(f);
    let g = f.grid();
    let area = g.spacing().powi(2);
    g.interior_nodes()
        .map(|n| (-2.0 * f.get(n)).exp() * d.laplacian(n).powi(2) * area)
        .sum()
}

/// Total curvature `∫ K e^{2f} dx dy = −∫ Δf dx dy` over interior nodes.
pub fn total_curvature(f: &ScalarField) -> f64 {
    let d = fd_derivatives(f);
    let g = f.grid();
    let area = g.spacing().powi(2);
    -g.interior_nodes().map(|n| d.laplacian(n) * area).sum::<f64>()
}

/// Defect of the discrete divergence theorem,
/// `|Σ (−Δf)·Δ² + Σ ∂f/∂n·ℓ|`, with `ℓ` the contour length apportioned to
/// each boundary node.
pub fn divergence_check(f: &ScalarField, g: &GridDomain) -> f64 {
    let flux: f64 = boundary_normal_derivatives(f, g)
        .iter()
        .zip(g.boundary_lengths())
        .map(|(dn, len)| dn * len)
        .sum();
    (total_curvature(f) + flux).abs()
}

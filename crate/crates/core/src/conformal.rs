//! Conformal factor `f` of the optimal metric `e^{2f}(dx² + dy²)`.
//!
//! The linear stage solves the clamped biharmonic problem `Δ²f = 0` with
//! Dirichlet data `½ log s(t)` and zero normal derivative. The nonlinear
//! stage drives the full fourteen-term Euler-Lagrange residual to zero with
//! a damped fixed-point iteration preconditioned by the same biharmonic
//! operator.
//!
//! The Neumann condition is imposed through ghost nodes: an exterior node
//! `G` reached by the 13-point stencil is mirrored through its closest
//! contour point `C` to `M = 2C − G`, and `f(G) = f(M) + |G − M|·∂f/∂n`,
//! with `f(M)` interpolated bilinearly from active nodes.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector2;

use crate::contour::BoundaryParam;
use crate::field::ScalarField;
use crate::grid::{GridDomain, NodeClass};
use crate::sparse::{self, CsrMatrix, LinearSolver, SolveStats};
use crate::stencil::{derivatives_masked, fd_derivatives, DerivativeStack, Partial};
use crate::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 50;
/// Dirichlet data below this magnitude everywhere is treated as zero.
pub const DEGENERATE_DATA: f64 = 1e-12;

/// Boundary data for the clamped problem, sampled at contour points.
pub trait BoundaryData {
    /// Dirichlet value at contour parameter `t` (planar point `point`).
    fn value(&self, t: f64, point: Vector2<f64>) -> f64;

    /// Derivative along the unit direction `dir` (outward) at the contour
    /// point. Zero for the geodesic boundary condition.
    fn normal_derivative(&self, _t: f64, _point: Vector2<f64>, _dir: Vector2<f64>) -> f64 {
        0.0
    }
}

impl BoundaryData for BoundaryParam {
    fn value(&self, t: f64, _point: Vector2<f64>) -> f64 {
        self.value_at(t)
    }
}

/// Monomials of the Euler-Lagrange operator with their coefficients, in the
/// published order.
pub const EL_TERMS: [(&[Partial], f64); 14] = [
    (&[Partial::XX, Partial::XX], -3.0),
    (&[Partial::XX, Partial::YY], -6.0),
    (&[Partial::X, Partial::X, Partial::XX], 4.0),
    (&[Partial::X, Partial::X, Partial::YY], 4.0),
    (&[Partial::X, Partial::XXX], -4.0),
    (&[Partial::X, Partial::XYY], -4.0),
    (&[Partial::XXXX], 1.0),
    (&[Partial::XXYY], 2.0),
    (&[Partial::YY, Partial::YY], -3.0),
    (&[Partial::Y, Partial::Y, Partial::XX], 4.0),
    (&[Partial::Y, Partial::Y, Partial::YY], 4.0),
    (&[Partial::Y, Partial::YYY], -4.0),
    (&[Partial::Y, Partial::XXY], -4.0),
    (&[Partial::YYYY], 1.0),
];

pub fn el_coefficients() -> [f64; 14] {
    EL_TERMS.map(|(_, c)| c)
}

fn el_sum(d: &DerivativeStack, k: usize) -> f64 {
    EL_TERMS
        .iter()
        .map(|(factors, c)| c * factors.iter().map(|&p| d.get(p, k)).product::<f64>())
        .sum()
}

/// 13-point biharmonic stencil (before division by Δ⁴).
const BIHARMONIC: [((isize, isize), f64); 13] = [
    ((0, 0), 20.0),
    ((1, 0), -8.0),
    ((-1, 0), -8.0),
    ((0, 1), -8.0),
    ((0, -1), -8.0),
    ((1, 1), 2.0),
    ((1, -1), 2.0),
    ((-1, 1), 2.0),
    ((-1, -1), 2.0),
    ((2, 0), 1.0),
    ((-2, 0), 1.0),
    ((0, 2), 1.0),
    ((0, -2), 1.0),
];

/// Ghost value `f(G) = Σ w·f(node) + constant` over active nodes.
#[derive(Clone, Debug)]
pub struct Ghost {
    pub node: usize,
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GhostTable {
    ghosts: Vec<Ghost>,
    slot: BTreeMap<usize, usize>,
}

impl GhostTable {
    pub fn build(g: &GridDomain, data: &dyn BoundaryData) -> Self {
        let mut table = GhostTable::default();
        let (nx, ny) = g.dims();
        for k in g.interior_nodes() {
            let (i, j) = g.coords(k);
            for ((di, dj), _) in BIHARMONIC {
                let (a, b) = (i as isize + di, j as isize + dj);
                if g.class_at(a, b).is_active() {
                    continue;
                }
                assert!(
                    a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny,
                    "ghost outside the padded grid"
                );
                let q = g.index(a as usize, b as usize);
                if table.slot.contains_key(&q) {
                    continue;
                }
                let ghost = mirror_ghost(g, q, data);
                table.slot.insert(q, table.ghosts.len());
                table.ghosts.push(ghost);
            }
        }
        table
    }

    pub fn get(&self, node: usize) -> Option<&Ghost> {
        self.slot.get(&node).map(|&s| &self.ghosts[s])
    }

    pub fn len(&self) -> usize {
        self.ghosts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ghosts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Ghost> {
        self.ghosts.iter()
    }
}

fn mirror_ghost(g: &GridDomain, node: usize, data: &dyn BoundaryData) -> Ghost {
    let p = g.node_position(node);
    let cp = g.closest_point(p);
    let mirror = cp.point * 2.0 - p;
    let offset = p - mirror;
    let dist = offset.norm();
    let dir = if dist > 0.0 {
        offset / dist
    } else {
        g.curve_normal(&cp)
    };
    let t = g.curve_param(&cp);
    if dist <= 1e-9 * g.spacing() {
        // exterior node on the curve itself (convex corners): Dirichlet value
        return Ghost {
            node,
            terms: Vec::new(),
            constant: data.value(t, cp.point),
        };
    }
    let constant = dist * data.normal_derivative(t, cp.point, dir);
    let terms = match g.cell_stencil(mirror) {
        Some(st) => st.iter().copied().filter(|&(_, w)| w != 0.0).collect(),
        None => {
            // nearest active node; only reached on degenerate slivers
            let nearest = g
                .active_nodes()
                .min_by(|&a, &b| {
                    let da = (g.node_position(a) - mirror).norm_squared();
                    let db = (g.node_position(b) - mirror).norm_squared();
                    da.total_cmp(&db)
                })
                .expect("grid has active nodes");
            vec![(nearest, 1.0)]
        }
    };
    Ghost {
        node,
        terms,
        constant,
    }
}

/// Dirichlet values at boundary nodes (grid-sized vector, zero elsewhere).
/// Snapped nodes receive the closest-point value corrected by the normal
/// derivative data over the signed offset, which vanishes for zero Neumann
/// data.
pub fn boundary_values(g: &GridDomain, data: &dyn BoundaryData) -> Result<Vec<f64>> {
    g.require_populated()?;
    let mut out = vec![0.0; g.len()];
    for (s, &k) in g.boundary_nodes().iter().enumerate() {
        let cp = &g.boundary_closest()[s];
        let n = g.normals()[s];
        let t = g.params()[s];
        let offset = g.node_position(k) - cp.point;
        let signed = offset.dot(&n);
        let mut v = data.value(t, cp.point);
        if signed != 0.0 {
            v += signed * data.normal_derivative(t, cp.point, n);
        }
        out[k] = v;
    }
    Ok(out)
}

/// Assembled clamped biharmonic system over the interior unknowns.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub grid: Arc<GridDomain>,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Node index of each unknown, row-major.
    pub unknowns: Vec<usize>,
    /// Row of each node, `None` for non-unknowns.
    pub row_of: Vec<Option<usize>>,
    pub boundary_values: Vec<f64>,
    pub ghosts: GhostTable,
}

pub fn assemble_clamped_biharmonic(
    g: &Arc<GridDomain>,
    data: &dyn BoundaryData,
) -> Result<SparseSystem> {
    g.require_populated()?;
    let unknowns: Vec<usize> = g.interior_nodes().collect();
    if unknowns.is_empty() {
        return Err(Error::NoUnknowns);
    }
    let mut row_of = vec![None; g.len()];
    for (r, &k) in unknowns.iter().enumerate() {
        row_of[k] = Some(r);
    }
    let bv = boundary_values(g, data)?;
    let ghosts = GhostTable::build(g, data);
    let scale = g.spacing().powi(4);
    let mut triplets = Vec::with_capacity(unknowns.len() * 13);
    let mut rhs = vec![0.0; unknowns.len()];
    for (r, &k) in unknowns.iter().enumerate() {
        let (i, j) = g.coords(k);
        for ((di, dj), w) in BIHARMONIC {
            let q = g.index((i as isize + di) as usize, (j as isize + dj) as usize);
            let w = w / scale;
            let mut add = |node: usize, weight: f64, rhs_r: &mut f64| match row_of[node] {
                Some(c) => triplets.push((r, c, weight)),
                None => *rhs_r -= weight * bv[node],
            };
            match g.class(q) {
                NodeClass::Exterior => {
                    let ghost = ghosts.get(q).expect("ghost table covers stencil");
                    for &(m, wm) in &ghost.terms {
                        add(m, w * wm, &mut rhs[r]);
                    }
                    rhs[r] -= w * ghost.constant;
                }
                _ => add(q, w, &mut rhs[r]),
            }
        }
    }
    let matrix = CsrMatrix::from_triplets(unknowns.len(), triplets);
    Ok(SparseSystem {
        grid: Arc::clone(g),
        matrix,
        rhs,
        unknowns,
        row_of,
        boundary_values: bv,
        ghosts,
    })
}

impl SparseSystem {
    /// Field with the given interior unknowns and the system's boundary
    /// values.
    pub fn field_from(&self, x: &[f64]) -> ScalarField {
        let mut values = self.boundary_values.clone();
        for (r, &k) in self.unknowns.iter().enumerate() {
            values[k] = x[r];
        }
        ScalarField::from_values(&self.grid, values)
    }

    pub fn unknowns_of(&self, f: &ScalarField) -> Vec<f64> {
        self.unknowns.iter().map(|&k| f.get(k)).collect()
    }

    /// Node values extended to ghost nodes, with the availability mask.
    fn extended(&self, f: &ScalarField) -> (Vec<f64>, Vec<bool>) {
        let g = &self.grid;
        let mut values = f.values().to_vec();
        let mut mask: Vec<bool> = (0..g.len()).map(|k| g.is_active(k)).collect();
        for ghost in self.ghosts.iter() {
            values[ghost.node] =
                ghost.terms.iter().map(|&(m, w)| w * f.get(m)).sum::<f64>() + ghost.constant;
            mask[ghost.node] = true;
        }
        (values, mask)
    }

    /// Euler-Lagrange residual at the unknowns, derivatives taken on the
    /// ghost-extended field so that the linear part coincides with the
    /// assembled operator.
    pub fn el_residual(&self, f: &ScalarField) -> Vec<f64> {
        let (values, mask) = self.extended(f);
        let d = derivatives_masked(&self.grid, &values, &mask, self.unknowns.iter().copied());
        self.unknowns.iter().map(|&k| el_sum(&d, k)).collect()
    }
}

pub fn solve_linear(sys: &SparseSystem) -> Result<(ScalarField, SolveStats)> {
    let solver = LinearSolver::new(sys.matrix.clone())?;
    let (x, stats) = solver.solve(&sys.rhs)?;
    Ok((sys.field_from(&x), stats))
}

/// Fourteen-term residual at interior nodes using [`fd_derivatives`]
/// (one-sided stencils near the boundary); zero elsewhere.
pub fn el_residual(f: &ScalarField) -> ScalarField {
    let d = fd_derivatives(f);
    let g = f.grid();
    let mut out = ScalarField::zeros(g);
    for k in g.interior_nodes() {
        out.set(k, el_sum(&d, k));
    }
    out
}

#[derive(Clone, Debug)]
pub struct ConformalSolution {
    pub f: ScalarField,
    pub linear_residual: f64,
    /// `‖el_residual‖∞` after the last iteration.
    pub el_residual: f64,
    pub iterations: usize,
    pub neumann_residual: f64,
    pub converged: bool,
    /// `‖el_residual‖∞` per iteration, starting from the initial iterate.
    pub history: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct NonlinearOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl NonlinearOptions {
    /// `1e-6·(1 + ‖f‖∞)` with the default iteration cap.
    pub fn for_field(f: &ScalarField) -> Self {
        Self {
            tol: 1e-6 * (1.0 + f.max_abs()),
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Damped fixed point `f ← f − ω·B⁻¹·R(f)` with backtracking on `‖R‖∞`.
/// Boundary values stay fixed at the data; `f0` supplies the interior.
pub fn solve_nonlinear(
    g: &Arc<GridDomain>,
    bp: &dyn BoundaryData,
    f0: &ScalarField,
    tol: f64,
    max_iters: usize,
) -> Result<ConformalSolution> {
    let sys = assemble_clamped_biharmonic(g, bp)?;
    let solver = LinearSolver::new(sys.matrix.clone())?;
    let mut x = sys.unknowns_of(f0);
    let mut f = sys.field_from(&x);
    let mut r = sys.el_residual(&f);
    let mut rnorm = sparse::norm_inf(&r);
    let mut best = rnorm;
    let mut history = vec![rnorm];
    let mut linear_residual = 0.0f64;
    let mut iterations = 0;
    while rnorm > tol && iterations < max_iters {
        let (delta, stats) = solver.solve(&r)?;
        linear_residual = linear_residual.max(stats.residual);
        let mut omega = 1.0;
        let (mut x_try, mut f_try, mut r_try, mut n_try);
        loop {
            x_try = x.iter().zip(&delta).map(|(a, d)| a - omega * d).collect::<Vec<_>>();
            f_try = sys.field_from(&x_try);
            r_try = sys.el_residual(&f_try);
            n_try = sparse::norm_inf(&r_try);
            if n_try < rnorm || omega < 1.0 / 64.0 {
                break;
            }
            omega *= 0.5;
        }
        iterations += 1;
        history.push(n_try);
        if !n_try.is_finite() || n_try > 10.0 * best {
            return Err(Error::Diverged {
                stage: "conformal",
                iteration: iterations,
                residual: n_try,
                best,
                history,
            });
        }
        x = x_try;
        f = f_try;
        r = r_try;
        rnorm = n_try;
        best = best.min(rnorm);
    }
    let neumann = neumann_residual(&f, g);
    Ok(ConformalSolution {
        f,
        linear_residual,
        el_residual: rnorm,
        iterations,
        neumann_residual: neumann,
        converged: rnorm <= tol,
        history,
    })
}

/// Linear solve followed (unless `linear_only`) by the nonlinear
/// refinement. Degenerate data short-circuits to `f ≡ 0`.
pub fn solve_conformal(
    g: &Arc<GridDomain>,
    bp: &BoundaryParam,
    linear_only: bool,
    tol: Option<f64>,
    max_iters: usize,
) -> Result<ConformalSolution> {
    if bp.max_abs() < DEGENERATE_DATA {
        let f = ScalarField::zeros(g);
        return Ok(ConformalSolution {
            f,
            linear_residual: 0.0,
            el_residual: 0.0,
            iterations: 0,
            neumann_residual: 0.0,
            converged: true,
            history: vec![0.0],
        });
    }
    let sys = assemble_clamped_biharmonic(g, bp)?;
    let (f_lin, stats) = solve_linear(&sys)?;
    let tol = tol.unwrap_or_else(|| NonlinearOptions::for_field(&f_lin).tol);
    if linear_only {
        let r = sparse::norm_inf(&sys.el_residual(&f_lin));
        let neumann = neumann_residual(&f_lin, g);
        return Ok(ConformalSolution {
            f: f_lin,
            linear_residual: stats.residual,
            el_residual: r,
            iterations: 0,
            neumann_residual: neumann,
            converged: true,
            history: vec![r],
        });
    }
    let mut sol = solve_nonlinear(g, bp, &f_lin, tol, max_iters)?;
    sol.linear_residual = sol.linear_residual.max(stats.residual);
    Ok(sol)
}

/// Signed outward normal derivative at the contour point closest to each
/// boundary node: one-sided second-order difference along the inward normal
/// with baseline 2Δ, taking the snapped boundary value as the value on the
/// curve. The longer baseline keeps bilinear sampling error below the
/// truncation error.
pub fn boundary_normal_derivatives(f: &ScalarField, g: &GridDomain) -> Vec<f64> {
    let h = g.spacing();
    g.boundary_nodes()
        .iter()
        .zip(g.boundary_closest())
        .zip(g.normals())
        .map(|((&k, cp), n)| {
            let f0 = f.get(k);
            let c = cp.point;
            for l in [2.0 * h, h] {
                if let (Some(f1), Some(f2)) = (f.sample(c - n * l), f.sample(c - n * (2.0 * l))) {
                    return (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * l);
                }
            }
            f.sample(c - n * h).map_or(0.0, |f1| (f0 - f1) / h)
        })
        .collect()
}

/// Max over boundary nodes of the one-sided normal derivative magnitude.
pub fn neumann_residual(f: &ScalarField, g: &GridDomain) -> f64 {
    sparse::norm_inf(&boundary_normal_derivatives(f, g))
}

//! Height function of the spanning surface over the projection plane.
//!
//! The curvature of the conformal metric lives in isothermal coordinates
//! `(x, y)`; the surface is a graph `h(u, v)` over the projection plane. The
//! two are tied by harmonic coordinate maps of the graph metric and a
//! Monge-Ampère equation for `h`, solved alternately.
//!
//! Dirichlet data for `h` enters the interior stencils through linear
//! extrapolation to where each grid line crosses the contour, so planes are
//! reproduced exactly and the boundary is placed to second order. Stored
//! values at boundary nodes are the snapped contour heights.

use std::sync::Arc;

use crate::conformal::ConformalSolution;
use crate::contour::PlanarContour;
use crate::curvature::{curvature_field, CurvatureField};
use crate::field::ScalarField;
use crate::grid::{GridDomain, NodeClass};
use crate::sparse::{self, CsrMatrix, LinearSolver};
use crate::stencil::{fd_derivatives, Partial};
use crate::{Error, Result};

pub const DEFAULT_MAX_NEWTON: usize = 30;
pub const DEFAULT_MAX_OUTER: usize = 20;
/// Newton tolerance on `‖residual‖∞`, relative to `1 + ‖K‖∞`.
pub const NEWTON_TOL: f64 = 1e-10;

/// First fundamental form of the graph of `h`.
#[derive(Clone, Debug)]
pub struct MetricCoefficients {
    pub e: ScalarField,
    pub f: ScalarField,
    pub g: ScalarField,
}

pub fn efg_coefficients(h: &ScalarField) -> MetricCoefficients {
    let d = fd_derivatives(h);
    let grid = h.grid();
    let (mut e, mut f, mut g) = (
        ScalarField::zeros(grid),
        ScalarField::zeros(grid),
        ScalarField::zeros(grid),
    );
    for k in grid.active_nodes() {
        let (hu, hv) = (d.get(Partial::X, k), d.get(Partial::Y, k));
        e.set(k, 1.0 + hu * hu);
        f.set(k, hu * hv);
        g.set(k, 1.0 + hv * hv);
    }
    MetricCoefficients { e, f, g }
}

/// Isothermal coordinates `(x, y)` as functions of the graph coordinates.
#[derive(Clone, Debug)]
pub struct CoordinateMap {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl CoordinateMap {
    pub fn identity(g: &Arc<GridDomain>) -> Self {
        Self {
            x: ScalarField::from_fn(g, |p| p.x),
            y: ScalarField::from_fn(g, |p| p.y),
        }
    }

    /// `x_u y_v − x_v y_u` on interior nodes, zero elsewhere.
    pub fn jacobian(&self) -> ScalarField {
        let g = self.x.grid();
        let dx = fd_derivatives(&self.x);
        let dy = fd_derivatives(&self.y);
        let mut out = ScalarField::zeros(g);
        for k in g.interior_nodes() {
            let j = dx.get(Partial::X, k) * dy.get(Partial::Y, k)
                - dx.get(Partial::Y, k) * dy.get(Partial::X, k);
            out.set(k, j);
        }
        out
    }

    /// Interior nodes where the map is not orientation preserving.
    pub fn folded_count(&self) -> usize {
        let j = self.jacobian();
        self.x.grid().interior_nodes().filter(|&k| j.get(k) <= 0.0).count()
    }

    pub fn max_diff(&self, other: &CoordinateMap) -> f64 {
        self.x.max_diff(&other.x).max(self.y.max_diff(&other.y))
    }
}

/// Offsets of the 3×3 block, row by row from the lower left.
const BLOCK: [(isize, isize); 9] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (0, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const SW: usize = 0;
const S: usize = 1;
const SE: usize = 2;
const W: usize = 3;
const C: usize = 4;
const E: usize = 5;
const NW: usize = 6;
const N: usize = 7;
const NE: usize = 8;

/// Solves the divergence-form Laplace-Beltrami equation of the metric for
/// each coordinate, with identity data on every non-interior node.
///
/// The unknown is the displacement from the identity. The operator acts on
/// the identity through exact grid offsets, so a metric whose stencil
/// annihilates linear functions returns the identity exactly.
pub fn solve_coordinate_maps(m: &MetricCoefficients, g: &Arc<GridDomain>) -> Result<CoordinateMap> {
    let unknowns: Vec<usize> = g.interior_nodes().collect();
    if unknowns.is_empty() {
        return Err(Error::NoUnknowns);
    }
    let row_of = rows(g, &unknowns);
    let coef = |k: usize| {
        let (e, f, gg) = (m.e.get(k), m.f.get(k), m.g.get(k));
        let root = (e * gg - f * f).sqrt();
        (gg / root, -f / root, e / root)
    };
    let h = g.spacing();
    let mut triplets = Vec::with_capacity(unknowns.len() * 9);
    let mut rhs_x = vec![0.0; unknowns.len()];
    let mut rhs_y = vec![0.0; unknowns.len()];
    for (r, &k) in unknowns.iter().enumerate() {
        let nb = block(g, k);
        let (a0, _, c0) = coef(k);
        let (ae, be, _) = coef(nb[E]);
        let (aw, bw, _) = coef(nb[W]);
        let (_, bn, cn) = coef(nb[N]);
        let (_, bs, cs) = coef(nb[S]);
        let mut w = [0.0; 9];
        w[E] = 0.5 * (a0 + ae);
        w[W] = 0.5 * (a0 + aw);
        w[N] = 0.5 * (c0 + cn);
        w[S] = 0.5 * (c0 + cs);
        w[C] = -(w[E] + w[W] + w[N] + w[S]);
        w[NE] = 0.25 * (be + bn);
        w[SE] = -0.25 * (be + bs);
        w[NW] = -0.25 * (bw + bn);
        w[SW] = 0.25 * (bw + bs);
        // the stencil applied to u and v
        rhs_x[r] = -h * ((w[E] - w[W]) + (w[NE] + w[SE]) - (w[NW] + w[SW]));
        rhs_y[r] = -h * ((w[N] - w[S]) + (w[NE] + w[NW]) - (w[SE] + w[SW]));
        for (o, &q) in nb.iter().enumerate() {
            if w[o] != 0.0 {
                if let Some(c) = row_of[q] {
                    triplets.push((r, c, w[o]));
                }
            }
        }
    }
    let solver = LinearSolver::new(CsrMatrix::from_triplets(unknowns.len(), triplets))?;
    let (sx, _) = solver.solve(&rhs_x)?;
    let (sy, _) = solver.solve(&rhs_y)?;
    let mut map = CoordinateMap::identity(g);
    for (r, &k) in unknowns.iter().enumerate() {
        map.x.set(k, map.x.get(k) + sx[r]);
        map.y.set(k, map.y.get(k) + sy[r]);
    }
    Ok(map)
}

/// `(h_uu h_vv − h_uv²)/(1 + h_u² + h_v²)² − K` on interior nodes, using
/// [`fd_derivatives`].
pub fn monge_ampere_residual(h: &ScalarField, k: &ScalarField) -> ScalarField {
    let d = fd_derivatives(h);
    let g = h.grid();
    let mut out = ScalarField::zeros(g);
    for n in g.interior_nodes() {
        let det = d.get(Partial::XX, n) * d.get(Partial::YY, n) - d.get(Partial::XY, n).powi(2);
        let w = 1.0 + d.get(Partial::X, n).powi(2) + d.get(Partial::Y, n).powi(2);
        out.set(n, det / (w * w) - k.get(n));
    }
    out
}

/// Samples `K̃` at the mapped point of every active node. Points outside
/// every fully active cell take the value of the nearest active node; the
/// second return value counts them.
pub fn compose_curvature(kt: &CurvatureField, map: &CoordinateMap) -> (ScalarField, usize) {
    let field = &kt.k;
    let g = field.grid();
    let h = g.spacing();
    let (nx, ny) = g.dims();
    let mut out = ScalarField::zeros(g);
    let mut clamped = 0;
    for n in g.active_nodes() {
        let p = nalgebra::Vector2::new(map.x.get(n), map.y.get(n));
        let q = (p - g.origin()) / h;
        let (ri, rj) = (q.x.round(), q.y.round());
        let on_node = (q.x - ri).abs() < 1e-9
            && (q.y - rj).abs() < 1e-9
            && ri >= 0.0
            && rj >= 0.0
            && (ri as usize) < nx
            && (rj as usize) < ny
            && g.is_active(g.index(ri as usize, rj as usize));
        let value = if on_node {
            field.get(g.index(ri as usize, rj as usize))
        } else {
            match g.cell_stencil(p) {
                Some(st) if st.iter().all(|&(_, w)| (-1e-12..=1.0 + 1e-12).contains(&w)) => {
                    st.iter().map(|&(m, w)| w * field.get(m)).sum()
                }
                _ => {
                    clamped += 1;
                    let nearest = g
                        .active_nodes()
                        .min_by(|&a, &b| {
                            let da = (g.node_position(a) - p).norm_squared();
                            let db = (g.node_position(b) - p).norm_squared();
                            da.total_cmp(&db)
                        })
                        .expect("grid has active nodes");
                    field.get(nearest)
                }
            }
        };
        out.set(n, value);
    }
    (out, clamped)
}

#[derive(Clone, Debug)]
pub struct HeightField {
    pub h: ScalarField,
    /// Snapped contour height per boundary node.
    pub boundary_heights: Vec<f64>,
    /// `‖residual‖∞` of the discrete Monge-Ampère system at exit.
    pub ma_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Value of a stencil node as `weight·x[col] + data·g`, where `g` is the
/// contour height at the crossing point.
#[derive(Clone, Copy, Debug)]
struct Tap {
    col: usize,
    weight: f64,
    data: f64,
    height: f64,
}

impl Tap {
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * x[self.col] + self.data * self.height
    }
}

/// 3×3 taps per interior unknown with Dirichlet data folded in by linear
/// extrapolation along grid lines and diagonals.
struct HeightStencil {
    grid: Arc<GridDomain>,
    unknowns: Vec<usize>,
    taps: Vec<[Tap; 9]>,
    boundary_heights: Vec<f64>,
}

impl HeightStencil {
    fn new(g: &Arc<GridDomain>, pc: &PlanarContour) -> Result<Self> {
        g.require_populated()?;
        let unknowns: Vec<usize> = g.interior_nodes().collect();
        if unknowns.is_empty() {
            return Err(Error::NoUnknowns);
        }
        let row_of = rows(g, &unknowns);
        let height_at = |cp: crate::grid::CurvePoint| pc.height_at(g.curve_param(&cp));
        let mut taps = Vec::with_capacity(unknowns.len());
        for (r, &k) in unknowns.iter().enumerate() {
            let (i, j) = g.coords(k);
            let nb = block(g, k);
            let here = g.node_position(k);
            let row: [Tap; 9] = std::array::from_fn(|o| {
                let q = nb[o];
                if let Some(col) = row_of[q] {
                    return Tap {
                        col,
                        weight: 1.0,
                        data: 0.0,
                        height: 0.0,
                    };
                }
                let there = g.node_position(q);
                let (theta, cp) = match g.first_crossing(here, there) {
                    Some((t, cp)) if t > 0.0 => (t, cp),
                    _ => (1.0, g.closest_point(there)),
                };
                let height = height_at(cp);
                let (di, dj) = BLOCK[o];
                let back = g.class_at(i as isize - di, j as isize - dj);
                if theta >= 0.5 || back != NodeClass::Interior {
                    let t = theta.max(0.05);
                    Tap {
                        col: r,
                        weight: 1.0 - 1.0 / t,
                        data: 1.0 / t,
                        height,
                    }
                } else {
                    // extrapolate from the opposite neighbour to keep weights bounded
                    let opposite = g.index((i as isize - di) as usize, (j as isize - dj) as usize);
                    let s = 2.0 / (1.0 + theta);
                    Tap {
                        col: row_of[opposite].expect("interior node has a row"),
                        weight: 1.0 - s,
                        data: s,
                        height,
                    }
                }
            });
            taps.push(row);
        }
        let boundary_heights = g.params().iter().map(|&t| pc.height_at(t)).collect();
        Ok(Self {
            grid: Arc::clone(g),
            unknowns,
            taps,
            boundary_heights,
        })
    }

    fn values(&self, r: usize, x: &[f64], with_data: bool) -> [f64; 9] {
        std::array::from_fn(|o| {
            let t = &self.taps[r][o];
            if with_data {
                t.value(x)
            } else {
                t.weight * x[t.col]
            }
        })
    }

    /// Solves the 5-point Laplace (`rhs = 0`) or Poisson problem with the
    /// stencil's Dirichlet data (or zero data).
    fn poisson(&self, rhs: f64, with_data: bool) -> Result<Vec<f64>> {
        let h2 = self.grid.spacing().powi(2);
        let n = self.unknowns.len();
        let mut triplets = Vec::with_capacity(5 * n);
        let mut b = vec![rhs * h2; n];
        for r in 0..n {
            for (o, w) in [(E, 1.0), (W, 1.0), (N, 1.0), (S, 1.0), (C, -4.0)] {
                let t = &self.taps[r][o];
                triplets.push((r, t.col, w * t.weight));
                if with_data {
                    b[r] -= w * t.data * t.height;
                }
            }
        }
        let (x, _) = sparse::solve(&CsrMatrix::from_triplets(n, triplets), &b)?;
        Ok(x)
    }

    fn differences(&self, v: &[f64; 9]) -> Differences {
        let h = self.grid.spacing();
        let h2 = h * h;
        Differences {
            uu: (v[E] - 2.0 * v[C] + v[W]) / h2,
            vv: (v[N] - 2.0 * v[C] + v[S]) / h2,
            uv: (v[NE] - v[NW] - v[SE] + v[SW]) / (4.0 * h2),
            u: (v[E] - v[W]) / (2.0 * h),
            v: (v[N] - v[S]) / (2.0 * h),
        }
    }

    fn residual(&self, x: &[f64], k: &[f64]) -> Vec<f64> {
        (0..self.unknowns.len())
            .map(|r| {
                let d = self.differences(&self.values(r, x, true));
                d.det() / d.w().powi(2) - k[r]
            })
            .collect()
    }

    fn jacobian(&self, x: &[f64]) -> CsrMatrix {
        let h = self.grid.spacing();
        let h2 = h * h;
        let mut triplets = Vec::with_capacity(9 * self.unknowns.len());
        for r in 0..self.unknowns.len() {
            let d = self.differences(&self.values(r, x, true));
            let w = d.w();
            let a = 1.0 / (w * w);
            let b = 4.0 * d.det() / (w * w * w);
            let mut dr = [0.0; 9];
            // det part
            dr[E] += a * d.vv / h2;
            dr[W] += a * d.vv / h2;
            dr[C] -= 2.0 * a * (d.vv + d.uu) / h2;
            dr[N] += a * d.uu / h2;
            dr[S] += a * d.uu / h2;
            let cross = -2.0 * a * d.uv / (4.0 * h2);
            dr[NE] += cross;
            dr[SW] += cross;
            dr[NW] -= cross;
            dr[SE] -= cross;
            // gradient-norm factor
            dr[E] -= b * d.u / (2.0 * h);
            dr[W] += b * d.u / (2.0 * h);
            dr[N] -= b * d.v / (2.0 * h);
            dr[S] += b * d.v / (2.0 * h);
            for (o, t) in self.taps[r].iter().enumerate() {
                if dr[o] != 0.0 && t.weight != 0.0 {
                    triplets.push((r, t.col, dr[o] * t.weight));
                }
            }
        }
        CsrMatrix::from_triplets(self.unknowns.len(), triplets)
    }

    fn field_from(&self, x: &[f64]) -> ScalarField {
        let g = &self.grid;
        let mut f = ScalarField::zeros(g);
        for (r, &k) in self.unknowns.iter().enumerate() {
            f.set(k, x[r]);
        }
        for (&k, &v) in g.boundary_nodes().iter().zip(&self.boundary_heights) {
            f.set(k, v);
        }
        f
    }

    /// Interior nodes where the discrete Hessian determinant is not
    /// positive, i.e. the cofactor matrix of the linearization is not
    /// definite.
    fn nonelliptic_nodes(&self, x: &[f64]) -> Vec<(usize, usize)> {
        (0..self.unknowns.len())
            .filter(|&r| self.differences(&self.values(r, x, true)).det() <= 0.0)
            .map(|r| self.grid.coords(self.unknowns[r]))
            .collect()
    }
}

struct Differences {
    uu: f64,
    vv: f64,
    uv: f64,
    u: f64,
    v: f64,
}

impl Differences {
    fn det(&self) -> f64 {
        self.uu * self.vv - self.uv * self.uv
    }

    fn w(&self) -> f64 {
        1.0 + self.u * self.u + self.v * self.v
    }
}

fn rows(g: &GridDomain, unknowns: &[usize]) -> Vec<Option<usize>> {
    let mut row_of = vec![None; g.len()];
    for (r, &k) in unknowns.iter().enumerate() {
        row_of[k] = Some(r);
    }
    row_of
}

fn block(g: &GridDomain, k: usize) -> [usize; 9] {
    let (i, j) = g.coords(k);
    BLOCK.map(|(di, dj)| g.index((i as isize + di) as usize, (j as isize + dj) as usize))
}

/// Harmonic extension of the contour heights.
pub fn harmonic_extension(g: &Arc<GridDomain>, pc: &PlanarContour) -> Result<ScalarField> {
    let st = HeightStencil::new(g, pc)?;
    let x = st.poisson(0.0, true)?;
    Ok(st.field_from(&x))
}

/// Damped Newton for the Monge-Ampère equation with the contour heights as
/// Dirichlet data.
///
/// Without `h0` the start is the harmonic extension plus a multiple of the
/// bubble `Δb = −1, b = 0` on the boundary, sized so the mean Hessian
/// determinant matches the mean prescribed curvature when that is positive.
/// The bare harmonic extension is unusable as a start when it is planar,
/// since the Jacobian vanishes there identically.
pub fn solve_height(
    k: &ScalarField,
    g: &Arc<GridDomain>,
    pc: &PlanarContour,
    h0: Option<&ScalarField>,
    tol: f64,
    max_iters: usize,
) -> Result<HeightField> {
    let st = HeightStencil::new(g, pc)?;
    let kv: Vec<f64> = st.unknowns.iter().map(|&n| k.get(n)).collect();
    let mut x = match h0 {
        Some(h) => st.unknowns.iter().map(|&n| h.get(n)).collect(),
        None => initial_guess(&st, &kv)?,
    };
    let mut r = st.residual(&x, &kv);
    let mut rnorm = sparse::norm_inf(&r);
    let mut best = rnorm;
    let mut history = vec![rnorm];
    let mut iterations = 0;
    while rnorm > tol && iterations < max_iters {
        let jac = st.jacobian(&x);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = match LinearSolver::new(jac).and_then(|s| s.solve(&neg)) {
            Ok((d, _)) => d,
            Err(Error::SingularMatrix { .. } | Error::LinearSolve { .. }) => {
                return Err(Error::SingularJacobian {
                    nodes: st.nonelliptic_nodes(&x),
                })
            }
            Err(e) => return Err(e),
        };
        let mut omega = 1.0;
        let (mut x_try, mut r_try, mut n_try);
        loop {
            x_try = x.iter().zip(&delta).map(|(a, d)| a + omega * d).collect::<Vec<_>>();
            r_try = st.residual(&x_try, &kv);
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
                stage: "monge-ampere",
                iteration: iterations,
                residual: n_try,
                best,
                history,
            });
        }
        x = x_try;
        r = r_try;
        rnorm = n_try;
        best = best.min(rnorm);
    }
    Ok(HeightField {
        h: st.field_from(&x),
        boundary_heights: st.boundary_heights.clone(),
        ma_residual: rnorm,
        iterations,
        converged: rnorm <= tol,
        history,
    })
}

fn initial_guess(st: &HeightStencil, k: &[f64]) -> Result<Vec<f64>> {
    let harmonic = st.poisson(0.0, true)?;
    let n = k.len() as f64;
    let target = (0..k.len())
        .map(|r| k[r] * st.differences(&st.values(r, &harmonic, true)).w().powi(2))
        .sum::<f64>()
        / n;
    if target <= 0.0 {
        return Ok(harmonic);
    }
    let bubble = st.poisson(-1.0, false)?;
    let det = (0..k.len())
        .map(|r| st.differences(&st.values(r, &bubble, false)).det())
        .sum::<f64>()
        / n;
    if det <= 0.0 {
        return Ok(harmonic);
    }
    let c = (target / det).sqrt();
    Ok(harmonic.iter().zip(&bubble).map(|(a, b)| a + c * b).collect())
}

/// Result of the alternation between Monge-Ampère and coordinate-map solves.
#[derive(Clone, Debug)]
pub struct Alternation {
    pub height: HeightField,
    pub map: CoordinateMap,
    /// `K̃` composed through the final map.
    pub curvature: ScalarField,
    pub clamp_count: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Max change of `h` and of the map per outer iteration.
    pub history: Vec<f64>,
    /// Newton steps summed over outer iterations.
    pub newton_iterations: usize,
}

/// Alternates (1) the height solve with `K̃` composed through the current map
/// (identity at first), (2) metric coefficients of the graph, (3) the
/// coordinate-map solve, until `h` and the map stop changing.
///
/// The first iteration is compared against the harmonic extension and the
/// identity map. `outer_tol` defaults to `1e-6·(1 + ‖boundary heights‖∞)`.
pub fn alternate_pipeline(
    cs: &ConformalSolution,
    g: &Arc<GridDomain>,
    pc: &PlanarContour,
    outer_tol: Option<f64>,
    max_outer: usize,
) -> Result<Alternation> {
    let kt = curvature_field(&cs.f);
    let mut map = CoordinateMap::identity(g);
    let mut h_ref = harmonic_extension(g, pc)?;
    let max_height = pc.heights.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let outer_tol = outer_tol.unwrap_or(1e-6 * (1.0 + max_height));
    let ma_tol = NEWTON_TOL * (1.0 + kt.k.max_abs());
    let mut warm: Option<ScalarField> = None;
    let mut history = Vec::new();
    let mut newton_iterations = 0;
    let mut last = None;
    for it in 1..=max_outer {
        let (kc, clamps) = compose_curvature(&kt, &map);
        let height = solve_height(&kc, g, pc, warm.as_ref(), ma_tol, DEFAULT_MAX_NEWTON)?;
        newton_iterations += height.iterations;
        let next = solve_coordinate_maps(&efg_coefficients(&height.h), g)?;
        let folded = next.folded_count();
        if folded > 0 {
            return Err(Error::FoldedMap { count: folded });
        }
        let change = height.h.max_diff(&h_ref).max(next.max_diff(&map));
        history.push(change);
        h_ref = height.h.clone();
        warm = Some(height.h.clone());
        map = next;
        let converged = change <= outer_tol && height.converged;
        last = Some((height, kc, clamps, it, converged));
        if converged {
            break;
        }
    }
    let (height, curvature, clamp_count, outer_iterations, converged) =
        last.ok_or_else(|| Error::InvalidArgument("max_outer must be at least 1".into()))?;
    Ok(Alternation {
        height,
        map,
        curvature,
        clamp_count,
        outer_iterations,
        converged,
        history,
        newton_iterations,
    })
}

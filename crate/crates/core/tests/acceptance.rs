//! Acceptance checks. Each criterion prints one PASS/FAIL line with the
//! measured values; the test fails if any criterion fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use flatspan_core::conformal::{
    assemble_clamped_biharmonic, el_coefficients, el_residual, solve_conformal, solve_linear,
    BoundaryData,
};
use flatspan_core::contour::{
    dirichlet_data, fit_projection_frame, project, BoundaryParam, Contour3D, PlanarContour, PlaneMode,
};
use flatspan_core::curvature::{curvature_field, divergence_check, energy};
use flatspan_core::height::{efg_coefficients, solve_coordinate_maps, solve_height, CoordinateMap};
use flatspan_core::mesh::discrete_mesh_curvature;
use flatspan_core::pipeline::{run_pipeline, solve_contour, PipelineConfig, RunStatus, SolveOptions};
use flatspan_core::stencil::fd_derivatives;
use flatspan_core::{GridDomain, ScalarField, Vector2, Vector3};
use rand::{Rng, SeedableRng};

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn record(&mut self, id: usize, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: &str) {
        let in_time = elapsed <= limit;
        let ok = pass && in_time;
        println!(
            "[{}] criterion {id:>2} {name}: {detail} ({:.2}s, limit {}s{})",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" }
        );
        if !ok {
            self.failed.push(id);
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn circle3(n: usize, z: impl Fn(f64, f64) -> f64) -> Contour3D {
    Contour3D::new(
        (0..n)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                Vector3::new(a.cos(), a.sin(), z(a.cos(), a.sin()))
            })
            .collect(),
    )
    .unwrap()
}

fn planar(c: &Contour3D) -> PlanarContour {
    project(c, &fit_projection_frame(c, PlaneMode::Xy).unwrap()).unwrap()
}

fn disk(n: usize) -> PlanarContour {
    planar(&circle3(n, |_, _| 0.0))
}

fn unit_square(per_edge: usize) -> PlanarContour {
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let mut pts = Vec::new();
    for e in 0..4 {
        let (a, b) = (corners[e], corners[(e + 1) % 4]);
        for k in 0..per_edge {
            let s = k as f64 / per_edge as f64;
            pts.push(Vector3::new(a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s, 0.0));
        }
    }
    planar(&Contour3D::new(pts).unwrap())
}

fn grid(pc: &PlanarContour, res: usize) -> Arc<GridDomain> {
    Arc::new(GridDomain::from_contour(pc, res).unwrap())
}

/// Clamped data from a known function and its gradient.
struct Exact<F>(F);

impl<F: Fn(Vector2<f64>) -> (f64, Vector2<f64>)> BoundaryData for Exact<F> {
    fn value(&self, _t: f64, p: Vector2<f64>) -> f64 {
        (self.0)(p).0
    }

    fn normal_derivative(&self, _t: f64, p: Vector2<f64>, dir: Vector2<f64>) -> f64 {
        (self.0)(p).1.dot(&dir)
    }
}

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let denom = (va * vb).sqrt();
    (denom > 1e-300 && va > 1e-24 * n && vb > 1e-24 * n).then(|| cov / denom)
}

fn wavy(x: f64, y: f64) -> f64 {
    0.15 * (x * x - y * y) + 0.05 * x * y * y
}

fn c1_coefficients(r: &mut Report) {
    let t = Instant::now();
    let published = [-3.0, -6.0, 4.0, 4.0, -4.0, -4.0, 1.0, 2.0, -3.0, 4.0, 4.0, -4.0, -4.0, 1.0];
    let table_ok = el_coefficients() == published;
    let g = grid(&disk(256), 33);
    type Case = (&'static str, fn(Vector2<f64>) -> f64, fn(f64, f64) -> f64);
    let cases: [Case; 3] = [
        ("x²", |p| p.x * p.x, |x, _| 32.0 * x * x - 12.0),
        ("y²", |p| p.y * p.y, |_, y| 32.0 * y * y - 12.0),
        ("x²y²", |p| p.x * p.x * p.y * p.y, |x, y| {
            8.0 - 12.0 * x.powi(4) - 12.0 * y.powi(4) - 88.0 * x * x * y * y
                + 64.0 * x.powi(4) * y.powi(4)
                + 32.0 * x * x * y.powi(6)
                + 32.0 * x.powi(6) * y * y
        }),
    ];
    // nodes whose 5×5 block is interior use centred stencils only
    let centred: Vec<usize> = g
        .interior_nodes()
        .filter(|&k| {
            let (i, j) = g.coords(k);
            (-2..=2).all(|di: isize| (-2..=2).all(|dj: isize| g.class_at(i as isize + di, j as isize + dj).is_active()))
        })
        .collect();
    let mut worst = 0.0f64;
    for (_, f, want) in cases {
        let res = el_residual(&ScalarField::from_fn(&g, f));
        for &k in &centred {
            let p = g.node_position(k);
            worst = worst.max((res.get(k) - want(p.x, p.y)).abs());
        }
    }
    r.record(
        1,
        "EL coefficient fidelity",
        table_ok && worst <= 1e-8,
        t.elapsed(),
        secs(1),
        &format!(
            "table {} published vector; max |discrete − hand| on x², y², x²y² = {worst:.1e} over {} nodes (tol 1e-8, rounding)",
            if table_ok { "equals" } else { "differs from" },
            centred.len()
        ),
    );
}

fn c2_variational(r: &mut Report) {
    let t = Instant::now();
    let pc = disk(512);
    let mut summary = Vec::new();
    let mut worst33 = 0.0f64;
    let mut worst_div = 0.0f64;
    for res in [33, 65] {
        let g = grid(&pc, res);
        let area = g.spacing().powi(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let modes: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let k: f64 = rng.gen_range(1.0..3.0);
                    let th: f64 = rng.gen_range(0.0..2.0 * PI);
                    (rng.gen_range(-0.1..0.1), k * th.cos(), k * th.sin(), rng.gen_range(0.0..2.0 * PI))
                })
                .collect();
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = ScalarField::from_fn(&g, |p| {
                modes.iter().map(|(a, kx, ky, ph)| a * (kx * p.x + ky * p.y + ph).sin()).sum()
            });
            let phi = ScalarField::from_fn(&g, |p| {
                let s = p.norm_squared() / 0.36;
                if s >= 1.0 {
                    0.0
                } else {
                    (1.0 - s).powi(4) * (c[0] + c[1] * p.x + c[2] * p.y)
                }
            });
            let eps = 1e-5;
            let shifted = |sign: f64| {
                ScalarField::from_values(
                    &g,
                    f.values().iter().zip(phi.values()).map(|(a, b)| a + sign * eps * b).collect(),
                )
            };
            let numeric = (energy(&shifted(1.0)) - energy(&shifted(-1.0))) / (2.0 * eps);
            // first variation of ∫e^{−2f}(Δf)² is ∫2e^{−2f}·EL·φ
            let el = el_residual(&f);
            let analytic: f64 = g
                .interior_nodes()
                .map(|k| 2.0 * (-2.0 * f.get(k)).exp() * el.get(k) * phi.get(k) * area)
                .sum();
            worst = worst.max(((numeric - analytic) / analytic).abs());

            if res == 33 {
                // same operator in divergence form e^{2f}Δ(e^{−2f}Δf) − (Δf)²
                let d = fd_derivatives(&f);
                let mut w = ScalarField::zeros(&g);
                for k in g.active_nodes() {
                    w.set(k, (-2.0 * f.get(k)).exp() * d.laplacian(k));
                }
                let dw = fd_derivatives(&w);
                let div: f64 = g
                    .interior_nodes()
                    .map(|k| {
                        let e = (2.0 * f.get(k)).exp() * dw.laplacian(k) - d.laplacian(k).powi(2);
                        2.0 * (-2.0 * f.get(k)).exp() * e * phi.get(k) * area
                    })
                    .sum();
                worst_div = worst_div.max(((numeric - div) / div).abs());
            }
        }
        if res == 33 {
            worst33 = worst;
        }
        summary.push((res, worst));
    }
    let ord = order(summary[0].1, summary[1].1);
    r.record(
        2,
        "variational consistency",
        worst33 <= 1e-4,
        t.elapsed(),
        secs(10),
        &format!(
            "max relative error {:.2e} at 33×33 (tol 1e-4), {:.2e} at 65×65, observed order {ord:.2}; \
             divergence-form evaluation of the same operator: {worst_div:.1e}",
            summary[0].1, summary[1].1
        ),
    );
}

fn c3_reduction(r: &mut Report) {
    let t = Instant::now();
    let pc = disk(512);
    let g = grid(&pc, 33);
    let l = pc.total_length();
    let n = 256;
    let params: Vec<f64> = (0..n).map(|i| l * i as f64 / n as f64).collect();
    let dirichlet: Vec<f64> = params
        .iter()
        .map(|t| {
            let a = 2.0 * PI * t / l;
            0.5 * (2.0 * a).cos() + 0.3 * a.sin() + 0.2
        })
        .collect();
    let bp = BoundaryParam {
        total_length: l,
        params,
        stretch: vec![1.0; n],
        dirichlet,
    };
    let eps = [1e-1, 1e-2, 1e-3];
    let diffs: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let b = bp.scaled(e);
            let lin = solve_conformal(&g, &b, true, None, 50).unwrap();
            let nl = solve_conformal(&g, &b, false, Some(1e-13), 50).unwrap();
            lin.f.max_diff(&nl.f)
        })
        .collect();
    let slope = fit_slope(&eps, &diffs);
    r.record(
        3,
        "biharmonic reduction",
        (slope - 2.0).abs() <= 0.3,
        t.elapsed(),
        secs(60),
        &format!(
            "‖nonlinear − linear‖∞ = {:.2e}, {:.2e}, {:.2e}; log-log slope {slope:.3} (want 2 ± 0.3)",
            diffs[0], diffs[1], diffs[2]
        ),
    );
}

fn c4_manufactured(r: &mut Report) {
    let t = Instant::now();
    type Exact2 = fn(Vector2<f64>) -> (f64, Vector2<f64>);
    let quartic: Exact2 = |p| (p.x.powi(4) - p.y.powi(4), Vector2::new(4.0 * p.x.powi(3), -4.0 * p.y.powi(3)));
    let harmonic: Exact2 = |p| (p.x * p.x - p.y * p.y, Vector2::new(2.0 * p.x, -2.0 * p.y));
    let errors = |pc: &PlanarContour, fun: Exact2| -> Vec<f64> {
        [33, 65, 129]
            .iter()
            .map(|&res| {
                let g = grid(pc, res);
                let sys = assemble_clamped_biharmonic(&g, &Exact(fun)).unwrap();
                let (f, _) = solve_linear(&sys).unwrap();
                g.active_nodes()
                    .map(|k| (f.get(k) - fun(g.node_position(k)).0).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    };
    let sq = unit_square(16);
    let q = errors(&sq, quartic);
    let h = errors(&sq, harmonic);
    let d = errors(&disk(2048), quartic);
    let q_order = order(q[1], q[2]);
    let d_order = order(d[1], d[2]);
    // an exactly reproduced solution has no measurable order; rounding counts as exact
    let h_ok = h[2] <= 1e-3 && (h.iter().all(|&e| e <= 1e-10) || order(h[1], h[2]) >= 2.0);
    let pass = q[2] <= 1e-3 && q_order >= 2.0 - 0.05 && h_ok && d_order >= 1.0;
    r.record(
        4,
        "clamped-plate manufactured solutions",
        pass,
        t.elapsed(),
        secs(120),
        &format!(
            "square x⁴−y⁴ errors {:.2e}/{:.2e}/{:.2e} (order {q_order:.2}); square x²−y² max error {:.1e} (exact); \
             disk x⁴−y⁴ errors {:.2e}/{:.2e}/{:.2e} (order {d_order:.2}, want ≥ 1)",
            q[0],
            q[1],
            q[2],
            h.iter().cloned().fold(0.0, f64::max),
            d[0],
            d[1],
            d[2]
        ),
    );
}

fn c5_boundary_conditions(r: &mut Report) {
    let t = Instant::now();
    let c = circle3(512, wavy);
    let pc = planar(&c);
    let bp = dirichlet_data(&pc, &c, 4096).unwrap();
    let mut dirichlet_err = 0.0f64;
    let mut res_lin = Vec::new();
    let mut res_nl = Vec::new();
    let mut spacing = Vec::new();
    for res in [33, 65, 129] {
        let g = grid(&pc, res);
        let lin = solve_conformal(&g, &bp, true, None, 50).unwrap();
        let nl = solve_conformal(&g, &bp, false, None, 50).unwrap();
        for sol in [&lin, &nl] {
            for (&k, &t) in g.boundary_nodes().iter().zip(g.params()) {
                dirichlet_err = dirichlet_err.max((sol.f.get(k) - bp.value_at(t)).abs());
            }
        }
        res_lin.push(lin.neumann_residual);
        res_nl.push(nl.neumann_residual);
        spacing.push(g.spacing());
    }
    let cs: Vec<f64> = res_nl.iter().zip(&spacing).map(|(r, h)| r / h).collect();
    let halves = |v: &[f64]| v.windows(2).all(|w| w[0] >= 2.0 * w[1]);
    let pass = dirichlet_err == 0.0 && halves(&res_lin) && halves(&res_nl);
    r.record(
        5,
        "boundary conditions",
        pass,
        t.elapsed(),
        secs(60),
        &format!(
            "Dirichlet mismatch {dirichlet_err:e}; Neumann residual (refined) {:.2e}/{:.2e}/{:.2e} at 33/65/129, \
             C = residual/Δ = {:.3}/{:.3}/{:.3}; linear solve {:.2e}/{:.2e}/{:.2e}",
            res_nl[0], res_nl[1], res_nl[2], cs[0], cs[1], cs[2], res_lin[0], res_lin[1], res_lin[2]
        ),
    );
}

fn c6_curvature(r: &mut Report) {
    let t = Instant::now();
    let g = grid(&disk(1024), 129);
    let f = ScalarField::from_fn(&g, |p| (2.0 / (1.0 + p.norm_squared())).ln());
    let k = curvature_field(&f).k;
    let k_err = g.interior_nodes().map(|n| (k.get(n) - 1.0).abs()).fold(0.0, f64::max);

    // C is fixed on the coarsest grid; finer grids must stay below C·Δ
    let tan = (30f64).to_radians().tan();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, c) in [("wavy", circle3(512, wavy)), ("tilted", circle3(512, |_, y| y * tan))] {
        let pc = planar(&c);
        let bp = dirichlet_data(&pc, &c, 4096).unwrap();
        let mut bound = None;
        let mut ds = Vec::new();
        for res in [33, 65, 129] {
            let g = grid(&pc, res);
            let lin = solve_conformal(&g, &bp, true, None, 50).unwrap();
            let d = divergence_check(&lin.f, &g);
            let cst = *bound.get_or_insert(d / g.spacing());
            ok &= d <= cst * g.spacing() * (1.0 + 1e-9);
            ds.push(format!("{d:.2e}"));
        }
        parts.push(format!("{name} {} (C = {:.3})", ds.join("/"), bound.unwrap()));
    }
    r.record(
        6,
        "curvature and conservation",
        k_err <= 1e-3 && ok,
        t.elapsed(),
        secs(30),
        &format!(
            "stereographic K̃ max |K̃ − 1| = {k_err:.2e} at 129×129 (tol 1e-3); divergence defect at 33/65/129: {}",
            parts.join(", ")
        ),
    );
}

fn cap(p: Vector2<f64>) -> f64 {
    (4.0 - p.norm_squared()).sqrt() - 3f64.sqrt()
}

fn c7_monge_ampere(r: &mut Report) {
    let t = Instant::now();
    let pc = disk(1024);
    let g = grid(&pc, 128);
    let k = ScalarField::from_fn(&g, |_| 0.25);
    let (pass, detail) = match solve_height(&k, &g, &pc, None, 1e-10, 15) {
        Ok(hf) => {
            let err = g
                .interior_nodes()
                .map(|n| (hf.h.get(n) - cap(g.node_position(n))).abs())
                .fold(0.0, f64::max);
            (
                hf.converged && err <= 1e-3 && hf.iterations <= 15,
                format!(
                    "max interior error {err:.2e} (tol 1e-3), {} Newton steps (≤ 15), residual {:.1e}",
                    hf.iterations, hf.ma_residual
                ),
            )
        }
        Err(e) => (false, format!("solve failed: {e}")),
    };
    r.record(7, "Monge-Ampère oracle", pass, t.elapsed(), secs(120), &detail);
}

fn c8_maps(r: &mut Report) {
    let t = Instant::now();
    let g = grid(&disk(512), 64);
    let id = CoordinateMap::identity(&g);
    let flat = solve_coordinate_maps(&efg_coefficients(&ScalarField::from_fn(&g, |_| 0.75)), &g).unwrap();
    let dev = flat.max_diff(&id);
    let capped = solve_coordinate_maps(&efg_coefficients(&ScalarField::from_fn(&g, cap)), &g).unwrap();
    let jac = capped.jacobian();
    let min_jac = g.interior_nodes().map(|n| jac.get(n)).fold(f64::INFINITY, f64::min);
    r.record(
        8,
        "coordinate maps",
        dev == 0.0 && min_jac > 0.0,
        t.elapsed(),
        secs(30),
        &format!("constant h: max deviation from identity {dev:e}; sphere cap: min interior Jacobian {min_jac:.4}"),
    );
}

fn c9_end_to_end(r: &mut Report) {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("circle.json");
    let pts: Vec<[f64; 3]> = circle3(128, |_, _| 0.0).points().iter().map(|p| [p.x, p.y, p.z]).collect();
    std::fs::write(&input, serde_json::json!({ "points": pts, "closed": true }).to_string()).unwrap();
    let config = PipelineConfig {
        input,
        output: tmp.path().join("out"),
        solve: SolveOptions::default(),
        dump_fields: false,
        seed: None,
    };
    let flat = run_pipeline(&config).unwrap();
    let flat_ok = flat.status().exit_code() == 0
        && flat.diagnostics.max_abs_height <= 1e-8
        && flat.diagnostics.energy <= 1e-10;
    let mut detail = format!(
        "planar circle: exit {}, max |h| {:.1e}, energy {:.1e}",
        flat.status().exit_code(),
        flat.diagnostics.max_abs_height,
        flat.diagnostics.energy
    );

    let tan = (30f64).to_radians().tan();
    let tilted = circle3(128, |_, y| y * tan);
    let sol = solve_contour(&tilted, &SolveOptions::default()).unwrap();
    let first = sol.mesh.vertices.len() - tilted.len();
    let boundary_err = tilted
        .points()
        .iter()
        .enumerate()
        .map(|(k, p)| (sol.mesh.vertices[first + k] - p).norm())
        .fold(0.0, f64::max);
    let kmesh = discrete_mesh_curvature(&sol.mesh);
    let g = &sol.grid;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (v, node) in sol.mesh.grid_nodes.iter().enumerate() {
        if let Some(n) = *node {
            if g.closest_point(g.node_position(n)).distance >= 5.0 * g.spacing() {
                a.push(kmesh[v]);
                b.push(sol.composed_curvature.get(n));
            }
        }
    }
    let corr = pearson(&a, &b);
    let converged = sol.status() == RunStatus::Converged;
    detail.push_str(&format!(
        "; tilted circle (auto plane): {}, boundary error {boundary_err:.1e}, Pearson r = {} over {} vertices \
         (max |K̃| {:.1e}, max |mesh K| {:.1e})",
        if converged { "converged" } else { "not converged" },
        corr.map_or("undefined (no variance)".to_string(), |c| format!("{c:.3}")),
        a.len(),
        b.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        a.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    ));
    let xy = solve_contour(&tilted, &SolveOptions { plane: PlaneMode::Xy, ..Default::default() }).unwrap();
    detail.push_str(&format!(
        "; xy plane: exit {}{}",
        xy.status().exit_code(),
        xy.diagnostics.failure.as_ref().map_or(String::new(), |f| format!(" ({f})"))
    ));
    let pass = flat_ok && converged && boundary_err <= 1e-9 && corr.is_some_and(|c| c >= 0.9);
    r.record(9, "end-to-end", pass, t.elapsed(), secs(300), &detail);
}

fn c10_determinism(r: &mut Report) {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let contour = circle3(128, wavy);
    let opts = SolveOptions::default();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let sol = solve_contour(&contour, &opts).unwrap();
        flatspan_core::pipeline::write_artifacts(&sol, &dir, false).unwrap();
        let obj = std::fs::read(dir.join("mesh.obj")).unwrap();
        let mut diag: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("diagnostics.json")).unwrap()).unwrap();
        diag.as_object_mut().unwrap().remove("timings");
        outputs.push((obj, serde_json::to_vec(&diag).unwrap()));
    }
    let same = outputs[0] == outputs[1];
    r.record(
        10,
        "determinism",
        same,
        t.elapsed(),
        secs(60),
        &format!(
            "OBJ ({} bytes) and diagnostics without timings {}",
            outputs[0].0.len(),
            if same { "byte-identical" } else { "differ" }
        ),
    );
}

#[test]
fn acceptance() {
    let mut r = Report { failed: Vec::new() };
    c1_coefficients(&mut r);
    c2_variational(&mut r);
    c3_reduction(&mut r);
    c4_manufactured(&mut r);
    c5_boundary_conditions(&mut r);
    c6_curvature(&mut r);
    c7_monge_ampere(&mut r);
    c8_maps(&mut r);
    c9_end_to_end(&mut r);
    c10_determinism(&mut r);
    println!("acceptance: {} of 10 criteria pass", 10 - r.failed.len());
    assert!(r.failed.is_empty(), "failing criteria: {:?}", r.failed);
}

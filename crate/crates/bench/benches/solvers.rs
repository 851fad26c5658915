use std::f64::consts::PI;
use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use flatspan_core::conformal::{assemble_clamped_biharmonic, solve_linear};
use flatspan_core::contour::{dirichlet_data, fit_projection_frame, project, Contour3D, PlaneMode};
use flatspan_core::height::solve_height;
use flatspan_core::pipeline::{solve_contour, SolveOptions};
use flatspan_core::{GridDomain, ScalarField, Vector3};

fn circle(n: usize, z: impl Fn(f64, f64) -> f64) -> Contour3D {
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

fn wavy(x: f64, y: f64) -> f64 {
    0.15 * (x * x - y * y) + 0.05 * x * y * y
}

fn clamped_plate(c: &mut Criterion) {
    let contour = circle(256, wavy);
    let frame = fit_projection_frame(&contour, PlaneMode::Xy).unwrap();
    let pc = project(&contour, &frame).unwrap();
    let bp = dirichlet_data(&pc, &contour, 1024).unwrap();
    for res in [33, 65] {
        let g = Arc::new(GridDomain::from_contour(&pc, res).unwrap());
        c.bench_function(&format!("clamped_plate_{res}"), |b| {
            b.iter(|| {
                let sys = assemble_clamped_biharmonic(&g, &bp).unwrap();
                black_box(solve_linear(&sys).unwrap())
            })
        });
    }
}

fn monge_ampere(c: &mut Criterion) {
    let contour = circle(512, |_, _| 0.0);
    let frame = fit_projection_frame(&contour, PlaneMode::Xy).unwrap();
    let pc = project(&contour, &frame).unwrap();
    let g = Arc::new(GridDomain::from_contour(&pc, 64).unwrap());
    let k = ScalarField::from_fn(&g, |_| 0.25);
    c.bench_function("sphere_cap_64", |b| {
        b.iter(|| black_box(solve_height(&k, &g, &pc, None, 1e-10, 15).unwrap()))
    });
}

fn end_to_end(c: &mut Criterion) {
    let tan = (30f64).to_radians().tan();
    let tilted = circle(128, |_, y| y * tan);
    let wavy = circle(128, wavy);
    let opts = SolveOptions {
        resolution: 48,
        ..Default::default()
    };
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("tilted_48", |b| b.iter(|| black_box(solve_contour(&tilted, &opts).unwrap())));
    group.bench_function("wavy_48", |b| b.iter(|| black_box(solve_contour(&wavy, &opts).unwrap())));
    group.finish();
}

criterion_group!(benches, clamped_plate, monge_ampere, end_to_end);
criterion_main!(benches);

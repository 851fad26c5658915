//! End-to-end run: contour file in, mesh and diagnostics out.
//!
//! Failures of the nonlinear stages are not fatal. When the conformal
//! refinement diverges the linear solution is kept; when the height stage
//! fails the harmonic extension of the contour heights stands in for the
//! surface. Either way the artifacts are written and the run reports
//! non-convergence.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::conformal::{solve_conformal, ConformalSolution};
use crate::contour::{
    dirichlet_data, fit_projection_frame, load_contour, project, Contour3D, PlanarContour, PlaneMode,
    ProjectionFrame,
};
use crate::curvature::{curvature_field, divergence_check, energy, CurvatureField};
use crate::height::{
    alternate_pipeline, compose_curvature, harmonic_extension, monge_ampere_residual, CoordinateMap,
};
use crate::mesh::{export_mesh, SurfaceMesh};
use crate::{Error, GridDomain, Result, ScalarField};

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 50;

pub const MESH_FILE: &str = "mesh.obj";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const FIELDS_DIR: &str = "fields";

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub resolution: usize,
    pub plane: PlaneMode,
    pub linear_only: bool,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            plane: PlaneMode::Auto,
            linear_only: false,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub solve: SolveOptions,
    pub dump_fields: bool,
    /// Reserved; the pipeline draws no random numbers.
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    NotConverged,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::NotConverged => 2,
        }
    }
}

/// Wall time per stage, in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub contour: f64,
    pub conformal: f64,
    pub height: f64,
    pub mesh: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub status: RunStatus,
    pub failure: Option<String>,
    pub resolution: usize,
    pub plane: PlaneMode,
    pub energy: f64,
    pub linear_residual: f64,
    pub el_residual: f64,
    pub neumann_residual: f64,
    pub divergence_defect: f64,
    pub conformal_iterations: usize,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub ma_residual: f64,
    pub clamp_count: usize,
    pub max_abs_height: f64,
    pub vertices: usize,
    pub faces: usize,
    pub timings: Timings,
}

impl Diagnostics {
    /// Every numeric field except timings is finite.
    pub fn all_finite(&self) -> bool {
        [
            self.energy,
            self.linear_residual,
            self.el_residual,
            self.neumann_residual,
            self.divergence_defect,
            self.ma_residual,
            self.max_abs_height,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Everything computed for one contour.
#[derive(Clone, Debug)]
pub struct Solution {
    pub frame: ProjectionFrame,
    pub planar: PlanarContour,
    pub grid: Arc<GridDomain>,
    pub conformal: ConformalSolution,
    pub curvature: CurvatureField,
    pub height: ScalarField,
    pub map: CoordinateMap,
    /// `K̃` composed through the final coordinate map.
    pub composed_curvature: ScalarField,
    pub mesh: SurfaceMesh,
    pub diagnostics: Diagnostics,
}

impl Solution {
    pub fn status(&self) -> RunStatus {
        self.diagnostics.status
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Diverged { .. } | Error::SingularJacobian { .. } | Error::FoldedMap { .. } | Error::LinearSolve { .. }
    )
}

/// Runs both stages on an in-memory contour. Input problems are returned as
/// errors labelled with their stage; solver failures are reported in the
/// diagnostics instead.
pub fn solve_contour(c: &Contour3D, opts: &SolveOptions) -> Result<Solution> {
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut failures = Vec::new();

    let t = Instant::now();
    let frame = fit_projection_frame(c, opts.plane).map_err(|e| e.at_stage("contour"))?;
    let planar = project(c, &frame).map_err(|e| e.at_stage("contour"))?;
    let samples = (4 * c.len()).max(16 * opts.resolution);
    let bp = dirichlet_data(&planar, c, samples).map_err(|e| e.at_stage("contour"))?;
    let grid = Arc::new(GridDomain::from_contour(&planar, opts.resolution).map_err(|e| e.at_stage("grid"))?);
    timings.contour = secs(t);

    let t = Instant::now();
    let conformal_tol = Some(opts.tol * (1.0 + bp.max_abs()));
    let conformal = match solve_conformal(&grid, &bp, opts.linear_only, conformal_tol, opts.max_iters) {
        Ok(cs) => cs,
        Err(e) if recoverable(&e) => {
            failures.push(format!("conformal: {e}"));
            let mut cs = solve_conformal(&grid, &bp, true, None, 0).map_err(|e| e.at_stage("conformal"))?;
            cs.converged = false;
            cs
        }
        Err(e) => return Err(e.at_stage("conformal")),
    };
    if !conformal.converged && failures.is_empty() {
        failures.push(format!(
            "conformal: no convergence in {} iterations (residual {:e})",
            conformal.iterations, conformal.el_residual
        ));
    }
    let curvature = curvature_field(&conformal.f);
    timings.conformal = secs(t);

    let t = Instant::now();
    let max_height = planar.heights.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let outer_tol = Some(opts.tol * (1.0 + max_height));
    let (height, map, composed, clamp_count, outer_iterations, newton_iterations, ma_residual, ok) =
        match alternate_pipeline(&conformal, &grid, &planar, outer_tol, opts.max_iters) {
            Ok(a) => {
                if !a.converged {
                    failures.push(format!(
                        "height: outer loop did not settle in {} iterations",
                        a.outer_iterations
                    ));
                }
                (
                    a.height.h,
                    a.map,
                    a.curvature,
                    a.clamp_count,
                    a.outer_iterations,
                    a.newton_iterations,
                    a.height.ma_residual,
                    a.converged,
                )
            }
            Err(e) if recoverable(&e) => {
                failures.push(format!("height: {e}; surface is the harmonic extension"));
                let h = harmonic_extension(&grid, &planar).map_err(|e| e.at_stage("height"))?;
                let map = CoordinateMap::identity(&grid);
                let (kc, clamps) = compose_curvature(&curvature, &map);
                let r = monge_ampere_residual(&h, &kc);
                let res = grid.interior_nodes().fold(0.0f64, |m, n| m.max(r.get(n).abs()));
                (h, map, kc, clamps, 0, 0, res, false)
            }
            Err(e) => return Err(e.at_stage("height")),
        };
    timings.height = secs(t);

    let t = Instant::now();
    let mesh = export_mesh(&height, &grid, &frame, &planar).map_err(|e| e.at_stage("mesh"))?;
    timings.mesh = secs(t);
    timings.total = secs(start);

    let status = if conformal.converged && ok {
        RunStatus::Converged
    } else {
        RunStatus::NotConverged
    };
    let diagnostics = Diagnostics {
        status,
        failure: (!failures.is_empty()).then(|| failures.join("; ")),
        resolution: opts.resolution,
        plane: opts.plane,
        energy: energy(&conformal.f),
        linear_residual: conformal.linear_residual,
        el_residual: conformal.el_residual,
        neumann_residual: conformal.neumann_residual,
        divergence_defect: divergence_check(&conformal.f, &grid),
        conformal_iterations: conformal.iterations,
        outer_iterations,
        newton_iterations,
        ma_residual,
        clamp_count,
        max_abs_height: height.max_abs(),
        vertices: mesh.vertices.len(),
        faces: mesh.faces.len(),
        timings,
    };
    Ok(Solution {
        frame,
        planar,
        grid,
        conformal,
        curvature,
        height,
        map,
        composed_curvature: composed,
        mesh,
        diagnostics,
    })
}

/// Reads the contour, solves, writes `mesh.obj`, `diagnostics.json` and
/// (with `dump_fields`) grid fields under `fields/`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Solution> {
    let file = fs::File::open(&config.input)
        .map_err(|e| Error::from(e).at_stage("input"))?;
    let contour = load_contour(std::io::BufReader::new(file)).map_err(|e| e.at_stage("contour"))?;
    let sol = solve_contour(&contour, &config.solve)?;
    write_artifacts(&sol, &config.output, config.dump_fields).map_err(|e| e.at_stage("output"))?;
    Ok(sol)
}

pub fn write_artifacts(sol: &Solution, dir: &Path, dump_fields: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mesh = BufWriter::new(fs::File::create(dir.join(MESH_FILE))?);
    sol.mesh.write_obj(mesh)?;
    write_json(&dir.join(DIAGNOSTICS_FILE), &sol.diagnostics)?;
    if dump_fields {
        let fields = dir.join(FIELDS_DIR);
        fs::create_dir_all(&fields)?;
        write_json(&fields.join("grid.json"), &sol.grid.to_json())?;
        for (name, field) in [
            ("f", &sol.conformal.f),
            ("curvature", &sol.curvature.k),
            ("height", &sol.height),
            ("map_x", &sol.map.x),
            ("map_y", &sol.map.y),
            ("composed_curvature", &sol.composed_curvature),
        ] {
            write_json(&fields.join(format!("{name}.json")), &field.to_json())?;
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).unwrap();
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

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

    #[test]
    fn planar_circle_is_flat() {
        let opts = SolveOptions {
            resolution: 32,
            ..Default::default()
        };
        let sol = solve_contour(&circle(128, |_, _| 0.0), &opts).unwrap();
        assert_eq!(sol.status(), RunStatus::Converged);
        assert!(sol.diagnostics.max_abs_height <= 1e-8);
        assert!(sol.diagnostics.energy <= 1e-10);
        assert!(sol.diagnostics.all_finite());
        assert_eq!(sol.mesh.euler_characteristic(), 1);
    }

    #[test]
    fn tilted_circle_in_auto_plane() {
        let tan = (30f64).to_radians().tan();
        let c = circle(128, |_, y| y * tan);
        let sol = solve_contour(&c, &SolveOptions { resolution: 32, ..Default::default() }).unwrap();
        assert_eq!(sol.status(), RunStatus::Converged);
        let first = sol.mesh.vertices.len() - c.len();
        for (k, p) in c.points().iter().enumerate() {
            assert!((sol.mesh.vertices[first + k] - p).norm() < 1e-9);
        }
    }

    #[test]
    fn stage_labels_on_input_errors() {
        // a circle in the xz plane collapses under projection to xy
        let vertical = Contour3D::new(
            (0..16)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / 16.0;
                    Vector3::new(a.cos(), 0.0, a.sin())
                })
                .collect(),
        )
        .unwrap();
        let opts = SolveOptions {
            plane: PlaneMode::Xy,
            resolution: 16,
            ..Default::default()
        };
        let err = solve_contour(&vertical, &opts).unwrap_err();
        assert!(err.to_string().starts_with("contour: "), "{err}");
    }
}

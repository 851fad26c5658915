use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use flatspan_core::contour::PlaneMode;
use flatspan_core::pipeline::{self, PipelineConfig, SolveOptions};

/// Spanning surface of least total squared Gaussian curvature for a closed
/// curve, with the curve as a geodesic.
#[derive(Debug, Parser)]
#[command(name = "flatspan", version)]
struct Args {
    /// Contour JSON: {"points": [[x, y, z], ...], "closed": true}
    #[arg(long)]
    input: PathBuf,

    /// Directory for mesh.obj, diagnostics.json and dumped fields
    #[arg(long)]
    output: PathBuf,

    /// Grid nodes across the longer side of the projected contour
    #[arg(long, default_value_t = pipeline::DEFAULT_RESOLUTION)]
    resolution: usize,

    /// Projection plane: auto, xy, xz or yz
    #[arg(long, default_value = "auto")]
    plane: PlaneMode,

    /// Stop after the linear clamped-plate solve
    #[arg(long)]
    linear_only: bool,

    /// Relative tolerance of the nonlinear and outer iterations
    #[arg(long, default_value_t = pipeline::DEFAULT_TOL)]
    tol: f64,

    /// Iteration cap of the nonlinear and outer iterations
    #[arg(long, default_value_t = pipeline::DEFAULT_MAX_ITERS)]
    max_iters: usize,

    /// Also write grid fields as JSON under fields/
    #[arg(long)]
    dump_fields: bool,

    /// Reserved, no effect
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    // exit code 2 is reserved for non-convergence, so usage errors map to 1
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let config = PipelineConfig {
        input: args.input,
        output: args.output,
        solve: SolveOptions {
            resolution: args.resolution,
            plane: args.plane,
            linear_only: args.linear_only,
            tol: args.tol,
            max_iters: args.max_iters,
        },
        dump_fields: args.dump_fields,
        seed: args.seed,
    };
    match pipeline::run_pipeline(&config) {
        Ok(sol) => {
            let d = &sol.diagnostics;
            println!(
                "energy {:e}  el residual {:e}  neumann {:e}  outer {}  ma residual {:e}",
                d.energy, d.el_residual, d.neumann_residual, d.outer_iterations, d.ma_residual
            );
            if let Some(msg) = &d.failure {
                eprintln!("warning: not converged: {msg}");
            }
            println!("wrote {}", config.output.display());
            ExitCode::from(sol.status().exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use plate_dpg::checks::verify_all;
use plate_dpg::dpg::{BoundaryCondition, ProblemConfig};
use plate_dpg::driver::{kirchhoff_limit_check, rate_table, run_study, write_csv_file, SolveOptions};
use plate_dpg::linalg::SolverMethod;
use plate_dpg::mesh::Mesh;

#[derive(Parser)]
#[command(name = "plate-dpg", version, about = "Ultraweak DPG solver for Reissner-Mindlin plates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bc {
    SimplySupported,
    Clamped,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Direct,
    Cg,
}

#[derive(clap::Args)]
struct Discretization {
    /// Boundary condition.
    #[arg(long, value_enum, default_value = "simply-supported")]
    bc: Bc,
    /// Volume quadrature exactness degree.
    #[arg(long, default_value_t = 14)]
    quad_degree: usize,
    /// Polynomial degree of the broken test space.
    #[arg(long, default_value_t = 3)]
    test_degree: usize,
    /// Linear solver; picked by system size when omitted.
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    /// Relative residual tolerance for CG.
    #[arg(long, default_value_t = 1e-12)]
    cg_tol: f64,
}

impl Discretization {
    fn config(&self) -> ProblemConfig {
        ProblemConfig {
            bc: match self.bc {
                Bc::SimplySupported => BoundaryCondition::SimplySupported,
                Bc::Clamped => BoundaryCondition::Clamped,
            },
            test_degree: self.test_degree,
            volume_quad_degree: self.quad_degree,
            ..ProblemConfig::new(0.0)
        }
    }

    fn options(&self) -> SolveOptions {
        SolveOptions {
            method: self.solver.map(|s| match s {
                Solver::Direct => SolverMethod::Direct,
                Solver::Cg => SolverMethod::Cg,
            }),
            cg_tol: self.cg_tol,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study on uniformly refined meshes, written as CSV.
    Study {
        /// Comma-separated plate thicknesses.
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-4,1e-6,1e-8")]
        t_list: Vec<f64>,
        /// Number of mesh levels (levels 0 to N-1).
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[command(flatten)]
        disc: Discretization,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
    /// Manufactured-solution checks and the structural property suite.
    Verify {
        #[arg(long, default_value_t = 20240601)]
        seed: u64,
    },
    /// Compare discrete solutions for t > 0 against t = 0 on a fixed mesh.
    Limit {
        #[arg(long, default_value_t = 3)]
        level: usize,
        #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3")]
        t_list: Vec<f64>,
        #[command(flatten)]
        disc: Discretization,
    },
    /// Write the level-N unit-square mesh as text.
    Mesh {
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> plate_dpg::Result<bool> {
    match cli.command {
        Command::Study { t_list, levels, disc, out } => {
            if levels == 0 {
                return Err(plate_dpg::Error::InvalidConfig("--levels must be at least 1".into()));
            }
            let start = Instant::now();
            let records = run_study(&t_list, levels - 1, &disc.config(), &disc.options())?;
            write_csv_file(&records, &out)?;
            print!("{}", rate_table(&records));
            println!("wrote {} ({:.1} s)", out.display(), start.elapsed().as_secs_f64());
            Ok(true)
        }
        Command::Verify { seed } => {
            let start = Instant::now();
            let report = verify_all(seed)?;
            print!("{}", report.summary());
            println!("{} verify ({:.2} s)", if report.passed() { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
            Ok(report.passed())
        }
        Command::Limit { level, t_list, disc } => {
            let report = kirchhoff_limit_check(level, &t_list, &disc.config(), &disc.options())?;
            print!("{}", report.table());
            let ok = report.monotone() && report.max_closed_form_mismatch() <= 1e-12;
            println!(
                "{} limit: monotone {}, closed-form mismatch {:.2e}",
                if ok { "PASS" } else { "FAIL" },
                report.monotone(),
                report.max_closed_form_mismatch()
            );
            Ok(ok)
        }
        Command::Mesh { level, out } => {
            let mesh = Mesh::unit_square(level);
            match out {
                Some(path) => mesh.write_text(path)?,
                None => print!("{}", mesh.to_text()),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sxh::extract::FixtureSpec;
use sxh::pipeline::{self, ReconstructOutputs};
use sxh::reconstruct::{ReconstructOptions, SeedFrame};
use sxh::Result;

/// Check and reconstruct isometric immersions into S^k × H^m.
///
/// Exit status: 0 all checks pass, 1 a check failed, 2 I/O, schema or usage error.
/// SXH_THREADS sets the worker thread count.
#[derive(Parser)]
#[command(name = "sxh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TolArgs {
    /// Tolerance override `name=value`; `algebraic`, `factor`, `floor` set the base model.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    tol: Vec<String>,
}

#[derive(Args)]
struct BuildArgs {
    /// Initial-frame change, e.g. `rot=0.3,boost=0.1`.
    #[arg(long = "seed-frame", value_name = "SPEC")]
    seed_frame: Option<String>,
    /// Re-orthonormalize the transported frame after every edge.
    #[arg(long)]
    reorthonormalize: bool,
    /// Reconstruct even if checks fail.
    #[arg(long)]
    force: bool,
    /// Base node index (default: grid center).
    #[arg(long)]
    base: Option<usize>,
}

impl BuildArgs {
    fn options(&self) -> Result<ReconstructOptions> {
        Ok(ReconstructOptions {
            base: self.base,
            reorthonormalize: self.reorthonormalize,
            seed: self.seed_frame.as_deref().map(SeedFrame::parse).transpose()?.unwrap_or_default(),
            force: self.force,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a fixture's hypothesis data into a dataset file.
    Extract {
        /// Fixture with parameters, e.g. `F3:theta0=1.0,warp=0.1`.
        #[arg(long)]
        fixture: String,
        /// Nodes per axis, e.g. `64x64`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Run every compatibility check on a dataset.
    Check {
        dataset: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check, then integrate a dataset into an immersion.
    Reconstruct {
        dataset: PathBuf,
        #[command(flatten)]
        tol: TolArgs,
        #[command(flatten)]
        build: BuildArgs,
        /// CSV mesh output.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Immersion file output, usable by `align`.
        #[arg(long)]
        immersion: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Project the exported mesh onto the product.
        #[arg(long)]
        repair_mesh: bool,
        /// Include per-stage runtimes in the report.
        #[arg(long)]
        timings: bool,
    },
    /// Extract, reconstruct and align against the fixture itself.
    Roundtrip {
        #[arg(long)]
        fixture: String,
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        tol: TolArgs,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Find the ambient isometry between two reconstructions.
    Align {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn nodes(grid: &Option<String>) -> Result<Option<Vec<usize>>> {
    grid.as_deref().map(pipeline::parse_grid).transpose()
}

/// Printed text and exit status.
struct Outcome {
    text: String,
    code: i32,
}

impl Outcome {
    fn message(text: String) -> Self {
        Self { text: text + "\n", code: pipeline::EXIT_PASS }
    }

    fn report(result: Result<sxh::io::Report>) -> Self {
        let code = pipeline::exit_code(&result);
        match result {
            Ok(r) => Self { text: r.summary(), code },
            Err(e) => Self { text: format!("error: {e}\n"), code },
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    Ok(match cli.command {
        Command::Extract { fixture, grid, out, tol } => {
            let tolerances = pipeline::apply_tolerances(Default::default(), &tol.tol)?;
            let ds = pipeline::cmd_extract(&FixtureSpec::parse(&fixture)?, nodes(&grid)?.as_deref(), &tolerances, &out)?;
            Outcome::message(format!("wrote {} (n = {}, p = {}, {} nodes)", out.display(), ds.n, ds.p, ds.grid.node_count()))
        }
        Command::Check { dataset, tol, report } => Outcome::report(pipeline::cmd_check(&dataset, &tol.tol, report.as_deref())),
        Command::Reconstruct { dataset, tol, build, mesh, immersion, report, repair_mesh, timings } => {
            let out = ReconstructOutputs { mesh, immersion, report, timings, repair_mesh };
            Outcome::report(pipeline::cmd_reconstruct(&dataset, &tol.tol, &build.options()?, &out))
        }
        Command::Roundtrip { fixture, grid, tol, build, report } => Outcome::report(pipeline::cmd_roundtrip(
            &FixtureSpec::parse(&fixture)?,
            nodes(&grid)?.as_deref(),
            &tol.tol,
            &build.options()?,
            report.as_deref(),
        )),
        Command::Align { a, b, report } => {
            let (c, r) = pipeline::cmd_align(&a, &b, report.as_deref())?;
            let t = c.to_matrix();
            let mut text = format!("T ={t:.9}");
            text.push_str(&r.summary());
            let code = pipeline::exit_code(&Ok(r));
            Outcome { text, code }
        }
    })
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("SXH_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = Cli::parse();
    let outcome = run(cli).unwrap_or_else(|e| Outcome::report(Err(e)));
    if outcome.code == pipeline::EXIT_ERROR {
        eprint!("{}", outcome.text);
    } else {
        print!("{}", outcome.text);
    }
    ExitCode::from(outcome.code as u8)
}

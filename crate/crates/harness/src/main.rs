use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kron_harness::error::HarnessError;
use kron_harness::output::{parse_csv, write_atomic};
use kron_harness::plot::{render_svg, PlotSpec};
use kron_harness::selftest::{self, Kernels};
use kron_harness::{gen_data, load_gen_data_spec, output_dir, resolve_config, run_command};

#[derive(Parser)]
#[command(name = "kron-harness", version, about = "Kronecker-factored curvature experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as IDX files.
    GenData(RunArgs),
    /// Estimator cosine against H_GN and H_Ada over training.
    Figure1(RunArgs),
    /// Singular spectrum overlaps of the rearranged curvature over training.
    Figure2(RunArgs),
    /// Estimators from mini-batch covariances across batch sizes.
    Figure4(RunArgs),
    /// Run the built-in invariant suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only run suites whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Render a results CSV as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenData(a) => {
            let spec = load_gen_data_spec(a.config.as_deref(), a.seed)?;
            let dir = a.out.unwrap_or_else(|| PathBuf::from("data"));
            gen_data(&spec, &dir)?;
            println!("wrote {}", dir.display());
        }
        Command::Figure1(a) => experiment("figure1", a)?,
        Command::Figure2(a) => experiment("figure2", a)?,
        Command::Figure4(a) => experiment("figure4", a)?,
        Command::Selftest { seed, filter } => {
            let results = selftest::run(&Kernels::default(), seed, filter.as_deref());
            let mut failed = 0;
            for r in &results {
                match &r.outcome {
                    Ok(msg) => println!("PASS {:<30} {:>7.2}s  {msg}", r.name, r.seconds),
                    Err(msg) => {
                        failed += 1;
                        println!("FAIL {:<30} {:>7.2}s  {msg}", r.name, r.seconds);
                    }
                }
            }
            println!("{} passed, {failed} failed", results.len() - failed);
            if failed > 0 {
                return Err(HarnessError::SelfTest(format!("{failed} suite(s) failed")));
            }
        }
        Command::Plot { csv, out, title } => {
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", csv.display())))?;
            let rows = parse_csv(&text)?;
            let svg = render_svg(&rows, &PlotSpec { title, ..PlotSpec::default() })?;
            write_atomic(&out, svg.as_bytes())?;
        }
    }
    Ok(())
}

fn experiment(command: &str, a: RunArgs) -> Result<(), HarnessError> {
    let cfg = resolve_config(command, a.config.as_deref(), a.seed)?;
    let dir = output_dir(&cfg, a.out, command);
    let manifest = run_command(command, &cfg, &dir)?;
    for f in &manifest.outputs {
        println!("wrote {}", dir.join(&f.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    // usage errors are validation failures (1), not clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

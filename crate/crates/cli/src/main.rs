use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sensmpc_cli::config::ScenarioConfig;
use sensmpc_cli::runner::{self, Overrides, DERIVATIVE_TOL};
use sensmpc_cli::CliError;

#[derive(Parser)]
#[command(
    name = "sensmpc",
    version,
    about = "Closed-loop predictor-corrector MPC scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario for each warmstart mode and write CSV logs and a summary.
    Run {
        config: PathBuf,
        /// Comma-separated warmstart modes (semiderivative, shift, cold).
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        /// Output directory; defaults to the config's `output_dir`, then $SENSMPC_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate the config and check the model derivatives against finite differences.
    Check {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, CliError> {
    let cfg = ScenarioConfig::load(path)?;
    overrides.apply(cfg, path)
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run {
            config,
            modes,
            out,
            seed,
        } => {
            let cfg = load(&config, &Overrides { modes, out, seed })?;
            let out_dir = cfg
                .output_dir
                .clone()
                .unwrap_or_else(runner::default_output_dir);
            let outcome = runner::run(&cfg, &out_dir)?;
            for m in &outcome.summary.modes {
                println!(
                    "{:<15} steps {:>4}  iterations {:>5}  max residual {:.2e}  max violation {:.2e}  {:.2} s{}",
                    m.mode,
                    m.steps,
                    m.total_corrector_iterations,
                    m.max_residual,
                    m.max_constraint_violation,
                    m.runtime_seconds,
                    m.aborted.as_deref().map(|a| format!("  ABORTED: {a}")).unwrap_or_default()
                );
            }
            println!("wrote results to {}", out_dir.display());
            Ok(outcome.exit_code())
        }
        Command::Check { config, seed } => {
            let cfg = load(
                &config,
                &Overrides {
                    seed,
                    ..Default::default()
                },
            )?;
            let mut ok = true;
            for (label, report) in runner::check(&cfg)? {
                println!("{label}:");
                for (name, err) in &report.entries {
                    let flag = if *err <= DERIVATIVE_TOL { "ok" } else { "FAIL" };
                    println!("  {name:<20} {err:.3e}  {flag}");
                }
                ok &= report.failing(DERIVATIVE_TOL).is_empty();
            }
            Ok(if ok { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `run` and `check` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensmpc::mpc::{closed_loop, ClosedLoopRun, MpcConfig, Warmstart};
use sensmpc::ocp::{DerivativeReport, PrimalDual};

use crate::config::ScenarioConfig;
use crate::output::{self, ModeSummary, Summary};
use crate::scenario::Scenario;
use crate::{CliError, Result};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub modes: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ScenarioConfig, origin: &Path) -> Result<ScenarioConfig> {
        if let Some(modes) = &self.modes {
            cfg.modes = modes.clone();
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate().map_err(|message| CliError::Config {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }
}

/// Where output goes when neither the flag nor the config names a directory.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os("SENSMPC_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("sensmpc-out"))
}

pub struct ModeRun {
    pub run: ClosedLoopRun,
    pub runtime: f64,
}

pub struct RunOutcome {
    pub scenario: Scenario,
    pub runs: Vec<ModeRun>,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.runs.iter().all(|r| r.run.all_converged()) {
            0
        } else {
            2
        }
    }
}

/// Run every requested mode on the same scenario; modes execute on separate threads.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(Scenario, Vec<ModeRun>)> {
    let scenario = Scenario::build(cfg.kind(), cfg.horizon)?;
    let x0 = DVector::from_column_slice(&cfg.x0);
    let results: Vec<sensmpc::Result<ModeRun>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .warmstarts()
            .into_iter()
            .map(|warmstart| {
                let (scenario, x0) = (&scenario, &x0);
                s.spawn(move || {
                    let mpc = MpcConfig {
                        epsilon: cfg.epsilon,
                        warmstart,
                        sim_steps: cfg.sim_steps,
                        ..Default::default()
                    };
                    let plant = |x: &DVector<f64>, u: &DVector<f64>| scenario.plant(x, u);
                    let t0 = Instant::now();
                    let run = closed_loop(&scenario.ocp, &plant, &mpc, x0, None)?;
                    Ok(ModeRun {
                        run,
                        runtime: t0.elapsed().as_secs_f64(),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("mode thread panicked"))
            .collect()
    });
    let runs = results.into_iter().collect::<sensmpc::Result<Vec<_>>>()?;
    Ok((scenario, runs))
}

/// `sensmpc run`: simulate and write all files into `out_dir`.
pub fn run(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let (scenario, runs) = simulate(cfg)?;
    let mut modes = Vec::new();
    for r in &runs {
        let stem = format!("{}_{}", cfg.scenario, r.run.warmstart.name());
        let trajectory_file = out_dir.join(format!("{stem}_trajectory.csv"));
        let steps_file = out_dir.join(format!("{stem}_steps.csv"));
        let plot_file = out_dir.join(format!("{stem}_plot.csv"));
        output::write_trajectory(&trajectory_file, &scenario, &r.run)?;
        output::write_steps(&steps_file, &scenario, &r.run)?;
        if r.run.logs.is_empty() {
            log::warn!(
                "mode {}: no steps completed, skipping plot data",
                r.run.warmstart
            );
        } else {
            output::emit_plot_data(&plot_file, &scenario, &r.run)?;
        }
        let plan_violation = r.run.max_violation();
        modes.push(ModeSummary {
            mode: r.run.warmstart.name().to_string(),
            steps: r.run.logs.len(),
            total_corrector_iterations: r.run.total_iterations(),
            initial_iterations: r.run.initial_iterations,
            max_residual: r.run.max_residual(),
            max_constraint_violation: plan_violation.max(r.run.trajectory_violation(&scenario.ocp)),
            cold_restarts: r.run.logs.iter().filter(|l| l.cold_restart).count(),
            predictor_fallbacks: r.run.logs.iter().filter(|l| l.predictor_fallback).count(),
            aborted: r.run.aborted.clone(),
            runtime_seconds: r.runtime,
            trajectory_file,
            steps_file,
            plot_file,
        });
    }
    let summary = Summary {
        scenario: cfg.scenario.clone(),
        horizon: cfg.horizon,
        sim_steps: cfg.sim_steps,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        modes,
    };
    output::write_summary(
        &out_dir.join(format!("{}_summary.json", cfg.scenario)),
        &summary,
    )?;
    Ok(RunOutcome {
        scenario,
        runs,
        summary,
    })
}

/// Relative tolerance of the derivative gate.
pub const DERIVATIVE_TOL: f64 = 1e-5;

/// `sensmpc check`: derivative checks at a seeded random point and at the
/// initial cold solution.
pub fn check(cfg: &ScenarioConfig) -> Result<Vec<(String, DerivativeReport)>> {
    let scenario = Scenario::build(cfg.kind(), cfg.horizon)?;
    let ocp = &scenario.ocp;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = DVector::from_fn(ocp.n(), |_, _| rng.random_range(-0.5..0.5));
    let v = DVector::from_fn(ocp.num_primal(), |_, _| rng.random_range(-0.5..0.5));
    let q = DVector::from_fn(ocp.num_costates(), |_, _| rng.random_range(-1.0..1.0));
    let mut reports = vec![(
        format!("random point (seed {})", cfg.seed),
        ocp.check_derivatives(&p, &PrimalDual::new(v, q), 1e-5)?,
    )];

    let x0 = DVector::from_column_slice(&cfg.x0);
    let mpc = MpcConfig {
        epsilon: cfg.epsilon,
        warmstart: Warmstart::Cold,
        ..Default::default()
    };
    let cold = sensmpc::mpc::solve_cold(ocp, &x0, &mpc)?;
    reports.push((
        "initial solution".into(),
        ocp.check_derivatives(&x0, &cold.z, 1e-5)?,
    ));
    Ok(reports)
}

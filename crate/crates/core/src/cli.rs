//! Command-line front end: `run`, `oracle` and `verify`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::diagnostics::{export, field_metrics, Binning, ParticleMetrics, RunRecord, Snapshot};
use crate::domains::Domain;
use crate::error::{Error, Result};
use crate::meanfield::{Kernel, ReactionFunctions};
use crate::pde_oracle::{run_linear, FieldSnapshot, run_semilinear, CoefficientPair, GridField, LinearSolver, SemilinearSolver};
use crate::scenario::{OracleInitial, OracleModel, Scenario};
use crate::sde_sim::{run_with, DensitySource, Initial, SwarmState};
use crate::verify::{run_suite, VerifyOptions};

#[derive(Debug, Parser)]
#[command(
    name = "hyposwarm",
    version,
    about = "Density control of degenerate swarms",
    after_help = "Exit codes: 0 ok, 1 simulation or check failure, 2 invalid input.\n\
                  Default output root: $HYPOSWARM_OUT/<scenario name>, else runs/<scenario name>."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Replaces `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: scenario `output_dir`, else `$HYPOSWARM_OUT/<name>`, else `runs/<name>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the particle system described by a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Solve the PDE reduction of a scenario on a grid.
    Oracle {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the built-in invariant checks.
    Verify {
        /// Print residuals and tolerances.
        #[arg(long, short)]
        verbose: bool,
    },
}

/// Result of a particle or grid run, before export.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub final_l1: f64,
    pub final_moving_fraction: f64,
    pub wall_seconds: f64,
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::usage(format!("cannot build thread pool: {e}")))?
            .install(f),
    }
}

fn config_echo(scenario: &Scenario) -> Result<serde_json::Value> {
    serde_json::to_value(scenario).map_err(|e| Error::config(format!("cannot echo scenario: {e}")))
}

/// Runs the particle simulation of `scenario` (seed override already applied).
pub fn simulate(scenario: &Scenario, threads: Option<usize>) -> Result<RunOutcome> {
    let start = Instant::now();
    let domain = scenario.build_domain()?;
    let family = scenario.build_family()?;
    let law = scenario.build_law()?;
    let mut config = scenario.sim_config();
    let snapshot_every = config.snapshot_every;
    let metrics_every = scenario.metrics.every.unwrap_or(snapshot_every);
    config.snapshot_every = metrics_every.min(snapshot_every);
    let n_steps = config.n_steps();

    let motionless_only = law.is_switching();
    let binning = Binning::for_domain(&domain, scenario.metrics.cells_per_axis)?;
    let metrics = ParticleMetrics::new(binning, &law.target, motionless_only);

    let mut record = RunRecord::new(config_echo(scenario)?, Some(config.seed));
    let mut last: Option<SwarmState> = None;
    with_threads(threads, || {
        run_with(&config, &law, &family, &domain, Initial::Uniform, |state| {
            let step = state.step_index;
            let row = metrics.row(state);
            if step.is_multiple_of(snapshot_every) || step == n_steps {
                record.push(Snapshot::Particles(state.clone()), row)?;
            } else {
                record.push_metrics(row)?;
            }
            last = Some(state.clone());
            Ok(())
        })
    })?;
    let last = last.expect("the initial state is always observed");
    let final_row = *record.metrics.last().expect("at least one metrics row");
    record.summary.insert("final_l1_histogram".into(), final_row.l1_to_target.into());
    record
        .summary
        .insert("final_moving_fraction".into(), final_row.moving_fraction.into());
    record.summary.insert("final_moving_count".into(), last.moving_count().into());
    if scenario.metrics.kde {
        let kernel = match law.switching() {
            Some(p) => p.kernel,
            None => Kernel::for_domain(&domain, default_kde_width(&domain))?,
        };
        record.summary.insert("final_l1_kde".into(), metrics.kde_l1(&last, kernel)?.into());
    }
    if let Some(p) = law.switching() {
        let source = match p.density_source {
            DensitySource::MotionlessOnly => "motionless-only",
            DensitySource::AllAgents => "all-agents",
        };
        record.summary.insert("density_source".into(), source.into());
    }
    Ok(RunOutcome {
        final_l1: final_row.l1_to_target,
        final_moving_fraction: final_row.moving_fraction,
        wall_seconds: start.elapsed().as_secs_f64(),
        record,
    })
}

/// Kernel width for the KDE metric of laws that have none: a twentieth of
/// the first box side, or 0.1 rad on the sphere.
fn default_kde_width(domain: &Domain) -> f64 {
    match domain {
        Domain::Box(b) => (b.hi()[0] - b.lo()[0]) / 20.0,
        Domain::Sphere(_) => 0.1,
    }
}

/// Subsamples per axis when averaging the target over oracle cells.
const ORACLE_TARGET_SUBSAMPLES: usize = 16;

/// Solves the PDE reduction of `scenario`.
pub fn solve_oracle(scenario: &Scenario) -> Result<RunOutcome> {
    let start = Instant::now();
    let spec = scenario
        .oracle
        .as_ref()
        .ok_or_else(|| Error::config("oracle: section missing"))?;
    let grid = scenario.oracle_grid()?;
    let target_fn = scenario.build_target()?;
    let mut target = GridField::new(grid.clone(), target_fn.cell_averages(&grid, ORACLE_TARGET_SUBSAMPLES))?;
    let mass = target.mass();
    target.values_mut().iter_mut().for_each(|v| *v /= mass);
    let volume = grid.cell_volume() * grid.len() as f64;
    let diffusivity = scenario.control.diffusion_gain;
    let every = spec.snapshot_every.unwrap_or(u64::MAX);

    let mut record = RunRecord::new(config_echo(scenario)?, None);
    let linear = spec.model == OracleModel::Linear;
    let mut observe = |snap: &FieldSnapshot| -> Result<()> {
        let row = field_metrics(snap, &target, linear)?;
        record.push(
            Snapshot::Fields {
                snap: snap.clone(),
                target: target.clone(),
            },
            row,
        )
    };
    match spec.model {
        OracleModel::Linear => {
            if target.min() <= 0.0 {
                return Err(Error::config("target: the linear model needs a strictly positive target"));
            }
            let coef = CoefficientPair::from_equilibrium(&target, GridField::constant(grid.clone(), diffusivity))?;
            let dt = match spec.dt {
                Some(dt) => dt,
                None => LinearSolver::new(&coef)?.stability_bound(),
            };
            let y0 = match spec.initial {
                OracleInitial::Uniform => GridField::constant(grid.clone(), 1.0 / volume),
                OracleInitial::Equilibrium => target.clone(),
            };
            run_linear(&y0, &coef, dt, spec.t_final, every, &mut observe)?;
        }
        OracleModel::Semilinear => {
            let k = scenario
                .control
                .reaction_gain
                .ok_or_else(|| Error::config("control.reaction_gain: required by the semilinear model"))?;
            // rᵢ is positively homogeneous, so scaling densities equals scaling k.
            let reactions = ReactionFunctions::with_cap(k * scenario.density_scale()?, scenario.control.q_max)?;
            let dt = match spec.dt {
                Some(dt) => dt,
                None => SemilinearSolver::new(&target, reactions, diffusivity)?.stability_bound(),
            };
            let (y1, y2) = match spec.initial {
                OracleInitial::Uniform => (
                    GridField::constant(grid.clone(), 1.0 / volume),
                    GridField::constant(grid.clone(), 0.0),
                ),
                OracleInitial::Equilibrium => (GridField::constant(grid.clone(), 0.0), target.clone()),
            };
            run_semilinear(&y1, &y2, &target, &reactions, diffusivity, dt, spec.t_final, every, &mut observe)?;
        }
    }
    let final_row = *record.metrics.last().expect("at least one snapshot");
    record.summary.insert("final_l1".into(), final_row.l1_to_target.into());
    Ok(RunOutcome {
        final_l1: final_row.l1_to_target,
        final_moving_fraction: final_row.moving_fraction,
        wall_seconds: start.elapsed().as_secs_f64(),
        record,
    })
}

fn load_with_overrides(path: &Path, overrides: &Overrides) -> Result<Scenario> {
    let mut scenario = Scenario::load(path)?;
    if let Some(seed) = overrides.seed {
        scenario.sim.seed = seed;
    }
    Ok(scenario)
}

fn summary_line(outcome: &RunOutcome, dir: &Path) -> String {
    format!(
        "final L1 {:.6e}  final moving fraction {:.4}  wall time {:.2} s  -> {}",
        outcome.final_l1,
        outcome.final_moving_fraction,
        outcome.wall_seconds,
        dir.display()
    )
}

pub fn cmd_run(path: &Path, overrides: &Overrides) -> Result<String> {
    let scenario = load_with_overrides(path, overrides)?;
    let outcome = simulate(&scenario, overrides.threads)?;
    let dir = scenario.output_dir(overrides.out.as_deref());
    export(&outcome.record, &dir, scenario.export_format)?;
    Ok(summary_line(&outcome, &dir))
}

pub fn cmd_oracle(path: &Path, overrides: &Overrides) -> Result<String> {
    let scenario = load_with_overrides(path, overrides)?;
    let outcome = with_threads(overrides.threads, || solve_oracle(&scenario))?;
    let dir = scenario.output_dir(overrides.out.as_deref());
    export(&outcome.record, &dir, scenario.export_format)?;
    Ok(summary_line(&outcome, &dir))
}

/// Returns the table and whether every check passed.
pub fn cmd_verify(verbose: bool, opts: &VerifyOptions) -> (String, bool) {
    let report = run_suite(opts);
    (report.table(verbose), report.all_passed())
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Run { scenario, overrides } => cmd_run(scenario, overrides),
        Command::Oracle { scenario, overrides } => cmd_oracle(scenario, overrides),
        Command::Verify { verbose } => {
            let (table, ok) = cmd_verify(*verbose, &VerifyOptions::default());
            print!("{table}");
            return if ok { 0 } else { 1 };
        }
    };
    match result {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

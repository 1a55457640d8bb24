use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridfreq::cli::{
    cmd_analyze, cmd_compare, cmd_simulate, cmd_tune, CliError, ControllerParams, LawKind,
    RunConfig, Scenario,
};
use gridfreq::tuning::TuningObjective;

/// Frequency-dynamics analysis for inverter-controlled power grids.
#[derive(Parser)]
#[command(name = "gridfreq", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form metrics per controller (effort share, variance,
    /// synchronization cost) plus a comparison table.
    Analyze(CommonArgs),
    /// Time-domain simulation traces and empirical metrics.
    Simulate(CommonArgs),
    /// Tuning recommendations (variance | nadir | zero-sync-cost | all).
    Tune {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "all")]
        objective: String,
    },
    /// Analytic and simulated metrics side by side, with traces.
    Compare(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Network case file (JSON).
    #[arg(long)]
    case: PathBuf,
    /// step | noise | combined.
    #[arg(long, default_value = "step")]
    scenario: String,
    /// Controller law; repeat for several (none|droop|vi|idroop).
    /// Defaults to all four.
    #[arg(long = "controller")]
    controllers: Vec<String>,
    /// Inverse inverter droop 1/r_r (defaults to the case representative).
    #[arg(long = "rr-inv")]
    rr_inv: Option<f64>,
    /// Virtual inertia constant.
    #[arg(long)]
    mv: Option<f64>,
    /// Lead/lag gain nu.
    #[arg(long)]
    nu: Option<f64>,
    /// Lead/lag corner delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Power-fluctuation intensity (required for noise/combined).
    #[arg(long = "kappa-p")]
    kappa_p: Option<f64>,
    /// Measurement-noise intensity (required for noise/combined).
    #[arg(long = "kappa-w")]
    kappa_w: Option<f64>,
    /// Step spec `all:VALUE` or `BUS:VALUE[,BUS:VALUE...]`
    /// (required for step/combined).
    #[arg(long)]
    u0: Option<String>,
    /// Step onset time in seconds.
    #[arg(long = "step-time", default_value_t = 1.0)]
    step_time: f64,
    /// RNG seed for stochastic scenarios.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Integrator step size override (seconds).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon override (seconds).
    #[arg(long)]
    horizon: Option<f64>,
    /// Record every n-th sample.
    #[arg(long)]
    stride: Option<usize>,
    /// Simulate virtual inertia under measurement noise even though its
    /// variance is unbounded.
    #[arg(long = "allow-vi-noise")]
    allow_vi_noise: bool,
}

impl CommonArgs {
    fn into_run_config(self, tune: bool) -> Result<RunConfig, CliError> {
        let laws = if self.controllers.is_empty() {
            vec![LawKind::None, LawKind::Droop, LawKind::Vi, LawKind::IDroop]
        } else {
            self.controllers
                .iter()
                .map(|s| LawKind::parse(s))
                .collect::<Result<_, _>>()?
        };
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| {
                CliError::Config(format!(
                    "scenario '{}' needs --{name}",
                    self.scenario
                ))
            })
        };
        let scenario = match self.scenario.as_str() {
            "step" => {
                let u0 = match (&self.u0, tune) {
                    (Some(u0), _) => u0.clone(),
                    // tuning only needs the representative parameters
                    (None, true) => "all:0".to_string(),
                    (None, false) => {
                        return Err(CliError::Config("scenario 'step' needs --u0".into()))
                    }
                };
                Scenario::Step {
                    u0,
                    time: self.step_time,
                }
            }
            "noise" => Scenario::Noise {
                kappa_p: need("kappa-p", self.kappa_p)?,
                kappa_w: need("kappa-w", self.kappa_w)?,
                seed: self.seed,
            },
            "combined" => Scenario::Combined {
                u0: self
                    .u0
                    .clone()
                    .ok_or_else(|| CliError::Config("scenario 'combined' needs --u0".into()))?,
                time: self.step_time,
                kappa_p: need("kappa-p", self.kappa_p)?,
                kappa_w: need("kappa-w", self.kappa_w)?,
                seed: self.seed,
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown scenario '{other}' (expected step|noise|combined)"
                )))
            }
        };
        Ok(RunConfig {
            case_path: self.case,
            laws,
            params: ControllerParams {
                rr_inv: self.rr_inv,
                mv: self.mv,
                nu: self.nu,
                delta: self.delta,
            },
            scenario,
            out_dir: self.out,
            dt: self.dt,
            horizon: self.horizon,
            stride: self.stride,
            allow_vi_noise: self.allow_vi_noise,
        })
    }
}

fn parse_objectives(s: &str) -> Result<Vec<TuningObjective>, CliError> {
    match s {
        "variance" => Ok(vec![TuningObjective::VarianceOptimal]),
        "nadir" => Ok(vec![TuningObjective::NadirElimination]),
        "zero-sync-cost" => Ok(vec![TuningObjective::ZeroSyncCostLimit]),
        "all" => Ok(vec![
            TuningObjective::VarianceOptimal,
            TuningObjective::NadirElimination,
            TuningObjective::ZeroSyncCostLimit,
        ]),
        other => Err(CliError::Config(format!(
            "unknown objective '{other}' (expected variance|nadir|zero-sync-cost|all)"
        ))),
    }
}

fn run() -> Result<(), CliError> {
    if let Ok(threads) = std::env::var("GRIDFREQ_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| CliError::Config(format!("GRIDFREQ_THREADS='{threads}' is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    match Cli::parse().command {
        Command::Analyze(args) => cmd_analyze(&args.into_run_config(false)?),
        Command::Simulate(args) => cmd_simulate(&args.into_run_config(false)?),
        Command::Tune { common, objective } => {
            let objectives = parse_objectives(&objective)?;
            cmd_tune(&common.into_run_config(true)?, &objectives)
        }
        Command::Compare(args) => cmd_compare(&args.into_run_config(false)?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gridfreq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

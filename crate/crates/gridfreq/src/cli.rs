//! Batch orchestration behind the `gridfreq` binary: closed-form metric
//! reports, time-domain runs, tuning recommendations and side-by-side
//! controller comparisons, all written as CSV into an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use nalgebra::DVector;
use serde::Serialize;

use crate::h2norm::{frequency_variance, NoiseWeights};
use crate::lti::{eigendecompose_scaled, generator_tf, ControllerSpec, ModalDecomposition};
use crate::metrics::{
    steady_state_effort_share, sync_cost_bounds, sync_cost_exact, synchronous_frequency,
    MetricsReport, StepDisturbance,
};
use crate::netmodel::{build_laplacian, load_case, NetworkCase};
use crate::simulate::{
    empirical_metrics, simulate_combined, simulate_step, simulate_stochastic, SimConfig, SimError,
    Trace,
};
use crate::tuning::{self, TuningObjective};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or an incomplete scenario; maps to exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Any downstream failure; maps to exit code 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

macro_rules! run_error_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}
run_error_from!(
    crate::netmodel::NetError,
    crate::metrics::MetricsError,
    crate::lti::LtiError,
    crate::h2norm::H2Error,
    SimError,
    std::io::Error
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LawKind {
    None,
    Droop,
    Vi,
    IDroop,
}

impl LawKind {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "none" => Ok(LawKind::None),
            "droop" => Ok(LawKind::Droop),
            "vi" => Ok(LawKind::Vi),
            "idroop" => Ok(LawKind::IDroop),
            other => Err(CliError::Config(format!(
                "unknown controller '{other}' (expected none|droop|vi|idroop)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LawKind::None => "none",
            LawKind::Droop => "droop",
            LawKind::Vi => "vi",
            LawKind::IDroop => "idroop",
        }
    }
}

/// Controller gains taken from the command line; unset entries fall back to
/// case-derived defaults (`rr_inv` from the representative inverter droop,
/// `mv = 0.022`, `delta = 1/tau`, `nu = rr_inv + rt_inv`).
#[derive(Debug, Clone, Default, Serialize)]
pub struct ControllerParams {
    pub rr_inv: Option<f64>,
    pub mv: Option<f64>,
    pub nu: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub enum Scenario {
    Step {
        u0: String,
        time: f64,
    },
    Noise {
        kappa_p: f64,
        kappa_w: f64,
        seed: u64,
    },
    Combined {
        u0: String,
        time: f64,
        kappa_p: f64,
        kappa_w: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub case_path: PathBuf,
    pub laws: Vec<LawKind>,
    pub params: ControllerParams,
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub stride: Option<usize>,
    pub allow_vi_noise: bool,
}

struct LawSetup {
    kind: LawKind,
    representative: ControllerSpec,
    per_bus: Vec<ControllerSpec>,
}

struct Context {
    case: NetworkCase,
    decomp: ModalDecomposition,
    laws: Vec<LawSetup>,
    step: Option<StepDisturbance>,
    weights: Option<NoiseWeights>,
    seed: u64,
}

/// Parse a step spec: `all:VALUE` or comma-separated `BUS_ID:VALUE` pairs.
pub fn parse_u0(spec: &str, case: &NetworkCase) -> Result<DVector<f64>, CliError> {
    let mut u0 = DVector::zeros(case.n());
    for part in spec.split(',') {
        let (target, value) = part.split_once(':').ok_or_else(|| {
            CliError::Config(format!("u0 entry '{part}' is not BUS:VALUE or all:VALUE"))
        })?;
        let value: f64 = value
            .parse()
            .map_err(|_| CliError::Config(format!("u0 value '{value}' is not a number")))?;
        if target == "all" {
            for i in 0..case.n() {
                u0[i] = value;
            }
        } else {
            let id: u64 = target
                .parse()
                .map_err(|_| CliError::Config(format!("u0 bus '{target}' is not an id")))?;
            let i = case
                .bus_index(id)
                .ok_or_else(|| CliError::Config(format!("u0 bus {id} not in case")))?;
            u0[i] = value;
        }
    }
    Ok(u0)
}

impl RunConfig {
    fn resolve(&self) -> Result<Context, CliError> {
        if self.laws.is_empty() {
            return Err(CliError::Config("no controllers selected".into()));
        }
        let case = load_case(&self.case_path)?;
        let lap = build_laplacian(&case)?;
        let decomp = eigendecompose_scaled(&lap, &case.ratings());
        let rep = &case.representative;

        let rr_inv = self.params.rr_inv.unwrap_or_else(|| rep.r_r_inv());
        let mv = self.params.mv.unwrap_or(0.022);
        let delta = self.params.delta.unwrap_or(1.0 / rep.tau);
        let nu = self.params.nu.unwrap_or(rr_inv + rep.r_t_inv());

        let mut laws = Vec::new();
        for kind in &self.laws {
            let representative = match kind {
                LawKind::None => ControllerSpec::None,
                LawKind::Droop => ControllerSpec::Droop { r_r_inv: rr_inv },
                LawKind::Vi => ControllerSpec::VirtualInertia {
                    m_v: mv,
                    r_r_inv: rr_inv,
                },
                LawKind::IDroop => ControllerSpec::IDroop {
                    nu,
                    delta,
                    r_r_inv: rr_inv,
                },
            };
            representative
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            let per_bus = case
                .buses
                .iter()
                .map(|b| representative.scaled(b.rating))
                .collect();
            laws.push(LawSetup {
                kind: *kind,
                representative,
                per_bus,
            });
        }

        let (step, weights, seed) = match &self.scenario {
            Scenario::Step { u0, time } => (
                Some(StepDisturbance {
                    u0: parse_u0(u0, &case)?,
                    time: *time,
                }),
                None,
                0,
            ),
            Scenario::Noise {
                kappa_p,
                kappa_w,
                seed,
            } => (
                None,
                Some(NoiseWeights {
                    kappa_p: *kappa_p,
                    kappa_w: *kappa_w,
                }),
                *seed,
            ),
            Scenario::Combined {
                u0,
                time,
                kappa_p,
                kappa_w,
                seed,
            } => (
                Some(StepDisturbance {
                    u0: parse_u0(u0, &case)?,
                    time: *time,
                }),
                Some(NoiseWeights {
                    kappa_p: *kappa_p,
                    kappa_w: *kappa_w,
                }),
                *seed,
            ),
        };
        if let Some(w) = &weights {
            if !(w.kappa_p >= 0.0 && w.kappa_w >= 0.0) {
                return Err(CliError::Config("noise weights must be nonnegative".into()));
            }
        }

        Ok(Context {
            case,
            decomp,
            laws,
            step,
            weights,
            seed,
        })
    }

    fn sim_config(&self, ctx: &Context, stochastic: bool) -> SimConfig {
        let mut cfg = if stochastic {
            SimConfig::noise_default(ctx.seed)
        } else {
            SimConfig::step_default()
        };
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(s) = self.stride {
            cfg.record_stride = s;
        }
        cfg.allow_vi_measurement_noise = self.allow_vi_noise;
        cfg
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir)?;
        let provenance = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Run(e.to_string()))?;
        fs::write(self.out_dir.join("run_config.json"), provenance)?;
        Ok(())
    }
}

fn analytic_report(ctx: &Context, law: &LawSetup) -> Result<MetricsReport, CliError> {
    let rep = &ctx.case.representative;
    let mut report = MetricsReport {
        es: steady_state_effort_share(&ctx.case, &law.per_bus)?,
        ..Default::default()
    };
    if let Some(step) = &ctx.step {
        report.omega_syn = synchronous_frequency(&ctx.case, &law.per_bus, step)?;
        let g_turbine = generator_tf(rep, true);
        let bounds = sync_cost_bounds(&ctx.decomp, &g_turbine, &law.representative, step)?;
        report.sync_lower = Some(bounds.lower);
        report.sync_upper = Some(bounds.upper);
        report.sync_exact = if bounds.lower.is_finite() {
            Some(sync_cost_exact(
                &ctx.decomp,
                &g_turbine,
                &law.representative,
                step,
            )?)
        } else {
            None
        };
    }
    if let Some(w) = &ctx.weights {
        let g_swing = generator_tf(rep, false);
        let var = frequency_variance(&ctx.decomp, &g_swing, &law.representative, w)?;
        report.h2_total = Some(var.total);
        report.h2_per_mode = var.per_mode.iter().map(|m| m.contribution).collect();
    }
    Ok(report)
}

fn write_out(cfg: &RunConfig, name: &str, content: &str) -> Result<(), CliError> {
    fs::write(cfg.out_dir.join(name), content)?;
    Ok(())
}

/// Closed-form metric reports, one CSV per controller plus a comparison
/// table.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = cfg.resolve()?;
    cfg.prepare_out()?;
    let mut comparison = String::new();
    for (i, law) in ctx.laws.iter().enumerate() {
        let report = analytic_report(&ctx, law)?;
        write_out(
            cfg,
            &format!("metrics_{}.csv", law.kind.name()),
            &format!("{}\n{}\n", report.csv_header(), report.csv_row()),
        )?;
        if i == 0 {
            let _ = writeln!(comparison, "controller,{}", report.csv_header());
        }
        let _ = writeln!(comparison, "{},{}", law.kind.name(), report.csv_row());
    }
    write_out(cfg, "comparison.csv", &comparison)?;
    Ok(())
}

fn run_trace(
    cfg: &RunConfig,
    ctx: &Context,
    law: &LawSetup,
) -> Result<Option<Trace>, CliError> {
    match (&ctx.step, &ctx.weights) {
        (Some(step), None) => {
            let sim = cfg.sim_config(ctx, false);
            Ok(Some(simulate_step(&ctx.case, &law.per_bus, step, &sim)?))
        }
        (step, Some(w)) => {
            if law.kind == LawKind::Vi && w.kappa_w > 0.0 && !cfg.allow_vi_noise {
                eprintln!(
                    "skipping vi under measurement noise (unbounded variance); \
                     pass --allow-vi-noise to run it"
                );
                return Ok(None);
            }
            let sim = cfg.sim_config(ctx, true);
            let trace = match step {
                Some(step) => simulate_combined(&ctx.case, &law.per_bus, w, step, &sim)?,
                None => simulate_stochastic(&ctx.case, &law.per_bus, w, &sim)?,
            };
            Ok(Some(trace))
        }
        (None, None) => Err(CliError::Config("scenario has no disturbance".into())),
    }
}

fn empirical_reference(ctx: &Context, law: &LawSetup) -> Result<Option<MetricsReport>, CliError> {
    // the analytic synchronous frequency anchors the settling check only
    // when no governor deadband can hold the turbines back
    let deadband_free = ctx.case.buses.iter().all(|b| b.gen.deadband == 0.0);
    if !deadband_free || ctx.step.is_none() {
        return Ok(None);
    }
    Ok(Some(analytic_report(ctx, law)?))
}

/// Time-domain traces (CSV per controller), empirical metric extraction,
/// and for stochastic scenarios an empirical frequency-deviation density.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = cfg.resolve()?;
    cfg.prepare_out()?;
    for law in &ctx.laws {
        let Some(trace) = run_trace(cfg, &ctx, law)? else {
            continue;
        };
        write_out(cfg, &format!("trace_{}.csv", law.kind.name()), &trace.to_csv())?;
        if ctx.weights.is_some() {
            let mut hist = String::from("bin_left,bin_right,density\n");
            for (l, r, d) in trace.frequency_histogram(51) {
                let _ = writeln!(hist, "{l},{r},{d}");
            }
            write_out(cfg, &format!("hist_{}.csv", law.kind.name()), &hist)?;
        }
        let analytic = empirical_reference(&ctx, law)?;
        let report = empirical_metrics(&trace, analytic.as_ref())?;
        write_out(
            cfg,
            &format!("empirical_{}.csv", law.kind.name()),
            &format!("{}\n{}\n", report.csv_header(), report.csv_row()),
        )?;
    }
    Ok(())
}

/// Tuning recommendations for the requested objectives; CSV plus notes.
pub fn cmd_tune(cfg: &RunConfig, objectives: &[TuningObjective]) -> Result<(), CliError> {
    let ctx = cfg.resolve()?;
    cfg.prepare_out()?;
    let rep = &ctx.case.representative;
    let rr_inv = cfg.params.rr_inv.unwrap_or_else(|| rep.r_r_inv());
    if !(rr_inv > 0.0) {
        return Err(CliError::Config(
            "tuning needs a positive inverse inverter droop (set --rr-inv or case r_r)".into(),
        ));
    }
    let weights = ctx.weights.unwrap_or(NoiseWeights {
        kappa_p: 1e-4,
        kappa_w: 1e-5,
    });
    // tuning formulas are written against the representative machine with
    // the resolved inverse droop
    let mut rep_tuned = *rep;
    rep_tuned.r_r = Some(1.0 / rr_inv);

    let mut csv = String::from("objective,controller,rr_inv,mv,nu,delta\n");
    let mut notes = String::new();
    for objective in objectives {
        match objective {
            TuningObjective::VarianceOptimal => {
                let r_star = tuning::droop_variance_optimal(&rep_tuned, &weights);
                let _ = writeln!(csv, "variance,droop,{r_star},,,");
                let nu_star = tuning::idroop_nu_star(&rep_tuned, &weights);
                let delta = cfg.params.delta.unwrap_or(0.1);
                let _ = writeln!(csv, "variance,idroop,{rr_inv},,{nu_star},{delta}");
                let window = tuning::idroop_variance_window(&rep_tuned, &weights, rr_inv);
                let _ = writeln!(
                    notes,
                    "variance: droop minimizer rr_inv* = {r_star}; lead/lag minimizer \
                     nu* = {nu_star} (delta as small as practical; {window:?}); \
                     weights kappa_p = {}, kappa_w = {}",
                    weights.kappa_p, weights.kappa_w
                );
            }
            TuningObjective::NadirElimination => {
                let rec = tuning::idroop_nadir_tuning(&rep_tuned);
                if let ControllerSpec::IDroop { nu, delta, r_r_inv } = rec.controller {
                    let _ = writeln!(csv, "nadir,idroop,{r_r_inv},,{nu},{delta}");
                }
                let _ = writeln!(notes, "nadir: {}", rec.notes);
                match crate::metrics::nadir_region_droop(&rep_tuned) {
                    Some(ub) => {
                        let _ = writeln!(csv, "nadir,droop,{ub},,,");
                        let _ = writeln!(
                            notes,
                            "nadir: droop alone works for rr_inv in (0, {ub}]"
                        );
                    }
                    None => {
                        let _ = writeln!(
                            notes,
                            "nadir: no droop gain eliminates the aggregate-mode Nadir \
                             at these parameters"
                        );
                    }
                }
                let m_v = crate::metrics::nadir_region_vi(&rep_tuned, rr_inv)?;
                let _ = writeln!(csv, "nadir,vi,{rr_inv},{m_v},,");
                let _ = writeln!(
                    notes,
                    "nadir: virtual inertia needs m_v >= {m_v} at rr_inv = {rr_inv}"
                );
            }
            TuningObjective::ZeroSyncCostLimit => {
                let floor = cfg
                    .params
                    .delta
                    .unwrap_or_else(|| tuning::default_delta_floor(&rep_tuned));
                let cap = cfg.params.nu.unwrap_or(1e4);
                let rec = tuning::idroop_zero_sync_cost(&rep_tuned, floor, cap);
                if let ControllerSpec::IDroop { nu, delta, r_r_inv } = rec.controller {
                    let _ = writeln!(csv, "zero-sync-cost,idroop,{r_r_inv},,{nu},{delta}");
                }
                let _ = writeln!(notes, "zero-sync-cost: {}", rec.notes);
            }
        }
    }
    write_out(cfg, "tuning.csv", &csv)?;
    write_out(cfg, "tuning_notes.txt", &notes)?;
    Ok(())
}

/// Side-by-side controller comparison: analytic and empirical metrics in
/// one table, plus the underlying traces (and densities for stochastic
/// scenarios).
pub fn cmd_compare(cfg: &RunConfig) -> Result<(), CliError> {
    let ctx = cfg.resolve()?;
    cfg.prepare_out()?;
    let mut summary = String::from(
        "controller,omega_syn,es,h2_total,sync_lower,sync_exact,sync_upper,\
         emp_omega_syn,emp_es,emp_variance,emp_sync_cost,nadir_value,nadir_time,overshoot\n",
    );
    for law in &ctx.laws {
        let analytic = analytic_report(&ctx, law)?;
        let opt = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut row = format!(
            "{},{},{},{},{},{},{}",
            law.kind.name(),
            analytic.omega_syn,
            analytic.es,
            analytic.h2_total.map(|h| h.to_string()).unwrap_or_default(),
            opt(&analytic.sync_lower),
            opt(&analytic.sync_exact),
            opt(&analytic.sync_upper),
        );
        match run_trace(cfg, &ctx, law)? {
            Some(trace) => {
                write_out(cfg, &format!("trace_{}.csv", law.kind.name()), &trace.to_csv())?;
                if ctx.weights.is_some() {
                    let mut hist = String::from("bin_left,bin_right,density\n");
                    for (l, r, d) in trace.frequency_histogram(51) {
                        let _ = writeln!(hist, "{l},{r},{d}");
                    }
                    write_out(cfg, &format!("hist_{}.csv", law.kind.name()), &hist)?;
                }
                let reference = empirical_reference(&ctx, law)?;
                let emp = empirical_metrics(&trace, reference.as_ref())?;
                let _ = write!(
                    row,
                    ",{},{},{},{},{},{},{}",
                    emp.omega_syn,
                    emp.es,
                    emp.h2_total.map(|h| h.to_string()).unwrap_or_default(),
                    opt(&emp.sync_exact),
                    opt(&emp.nadir_value),
                    opt(&emp.nadir_time),
                    opt(&emp.overshoot),
                );
            }
            None => row.push_str(",,,,,,,"),
        }
        summary.push_str(&row);
        summary.push('\n');
    }
    write_out(cfg, "compare_summary.csv", &summary)?;
    Ok(())
}

//! Steady-state and dynamic performance metrics: synchronous frequency,
//! steady-state effort share, synchronization cost (bounds and exact value)
//! and Nadir analysis.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::h2norm::{cross_inner_product, h2_closed_form, H2Error, H2Result};
use crate::lti::{modal_step_tf, ControllerSpec, LtiError, ModalDecomposition, RationalTF};
use crate::netmodel::{NetworkCase, RepresentativeParams};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate aggregate: {0}")]
    Degenerate(String),
    #[error("trace not settled: {0}")]
    NotSettled(String),
    #[error("no finite parameter satisfies the constraint: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Numerical(#[from] H2Error),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// Step change on the power injection set points: `u0` per bus, switched on
/// at `time`.
#[derive(Debug, Clone)]
pub struct StepDisturbance {
    pub u0: DVector<f64>,
    pub time: f64,
}

impl StepDisturbance {
    pub fn at_bus(n: usize, bus: usize, magnitude: f64, time: f64) -> Self {
        let mut u0 = DVector::zeros(n);
        u0[bus] = magnitude;
        StepDisturbance { u0, time }
    }
}

/// `K (s + z) / (s^2 + 2 xi wn s + wn^2)` — the shape of the aggregate-mode
/// transfer function under droop or virtual inertia with a turbine.
#[derive(Debug, Clone, Copy)]
pub struct SecondOrderForm {
    pub k: f64,
    pub z: f64,
    pub xi: f64,
    pub wn: f64,
}

/// Synchronization-cost bracket; `exact` is filled for homogeneous rating
/// profiles where the bracket collapses.
#[derive(Debug, Clone, Copy)]
pub struct SyncCostBounds {
    pub lower: f64,
    pub upper: f64,
    pub exact: Option<f64>,
}

/// Post-step steady-state frequency deviation shared by every bus:
/// `sum(u0) / sum(d_i + r_t_inv_i - c_i(0))`.
pub fn synchronous_frequency(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    step: &StepDisturbance,
) -> Result<f64, MetricsError> {
    Ok(step.u0.sum() / aggregate_stiffness(case, controllers)?)
}

/// Fraction of a step imbalance carried by the inverters in steady state:
/// `|sum c_i(0)| / sum(d_i + r_t_inv_i - c_i(0))`. Independent of the step
/// direction and of every controller parameter except the inverse droops.
pub fn steady_state_effort_share(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
) -> Result<f64, MetricsError> {
    let dc_sum: f64 = controllers.iter().map(|c| c.dc_gain()).sum();
    Ok(dc_sum.abs() / aggregate_stiffness(case, controllers)?)
}

fn aggregate_stiffness(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
) -> Result<f64, MetricsError> {
    if controllers.len() != case.n() {
        return Err(MetricsError::Degenerate(format!(
            "{} controllers for {} buses",
            controllers.len(),
            case.n()
        )));
    }
    let denom: f64 = case
        .buses
        .iter()
        .zip(controllers)
        .map(|(b, c)| b.gen.d + b.gen.r_t_inv - c.dc_gain())
        .sum();
    if denom <= 0.0 {
        return Err(MetricsError::Degenerate(format!(
            "aggregate stiffness {denom} is not positive"
        )));
    }
    Ok(denom)
}

fn step_kernels(
    decomp: &ModalDecomposition,
    g_turbine: &RationalTF,
    c: &ControllerSpec,
) -> Result<Vec<RationalTF>, MetricsError> {
    (1..decomp.n())
        .map(|k| modal_step_tf(g_turbine, c, decomp.lambdas[k]).map_err(MetricsError::from))
        .collect()
}

/// Bracket the synchronization cost of a step by the rating extremes:
/// `sum_k u~_k^2 ||h_uk||^2` scaled by `1/max f` and `1/min f`. An unstable
/// kernel propagates as infinite bounds.
pub fn sync_cost_bounds(
    decomp: &ModalDecomposition,
    g_turbine: &RationalTF,
    c: &ControllerSpec,
    step: &StepDisturbance,
) -> Result<SyncCostBounds, MetricsError> {
    let u_tilde = decomp.project_step(&step.u0);
    let kernels = step_kernels(decomp, g_turbine, c)?;
    let mut base = 0.0f64;
    let mut infinite = false;
    for (k, h) in kernels.iter().enumerate() {
        match h2_closed_form(h) {
            H2Result::Finite(v) => base += u_tilde[k] * u_tilde[k] * v,
            H2Result::Infinite(_) => infinite = true,
        }
    }
    if infinite {
        return Ok(SyncCostBounds {
            lower: f64::INFINITY,
            upper: f64::INFINITY,
            exact: None,
        });
    }
    let f_max = decomp.f.iter().cloned().fold(f64::MIN, f64::max);
    let f_min = decomp.f.iter().cloned().fold(f64::MAX, f64::min);
    let exact = if (f_max - f_min).abs() <= 1e-12 * f_max {
        Some(base / f_max)
    } else {
        None
    };
    Ok(SyncCostBounds {
        lower: base / f_max,
        upper: base / f_min,
        exact,
    })
}

/// Exact synchronization cost via the Hadamard quadratic form
/// `u~^T (Gamma~ o H~) u~` with `H~_kl` the cross inner products of the
/// step kernels.
pub fn sync_cost_exact(
    decomp: &ModalDecomposition,
    g_turbine: &RationalTF,
    c: &ControllerSpec,
    step: &StepDisturbance,
) -> Result<f64, MetricsError> {
    let u_tilde = decomp.project_step(&step.u0);
    let kernels = step_kernels(decomp, g_turbine, c)?;
    let r = kernels.len();
    let mut h = DMatrix::zeros(r, r);
    for k in 0..r {
        for l in k..r {
            let v = cross_inner_product(&kernels[k], &kernels[l])?;
            h[(k, l)] = v;
            h[(l, k)] = v;
        }
    }
    let mut cost = 0.0;
    for k in 0..r {
        for l in 0..r {
            cost += u_tilde[k] * decomp.gamma_tilde[(k, l)] * h[(k, l)] * u_tilde[l];
        }
    }
    Ok(cost)
}

/// Whether the step response of `K(s+z)/(s^2 + 2 xi wn s + wn^2)` attains an
/// interior maximum (a Nadir). The response is monotone — no Nadir — exactly
/// when `1 <= xi <= z/wn`, or `xi > z/wn` with `xi >= (z/wn + wn/z)/2`.
/// Boundary equalities count as monotone.
pub fn nadir_exists_second_order(form: &SecondOrderForm) -> bool {
    let ratio = form.z / form.wn;
    let no_nadir = (form.xi >= 1.0 && form.xi <= ratio)
        || (form.xi > ratio && form.xi >= 0.5 * (ratio + 1.0 / ratio));
    !no_nadir
}

/// Aggregate-mode response of the turbine-equipped representative machine
/// under droop (`m_v = 0`) or virtual inertia, in second-order form.
pub fn system_frequency_form(
    rep: &RepresentativeParams,
    r_r_inv: f64,
    m_v: f64,
) -> SecondOrderForm {
    let m_eff = rep.m + m_v;
    let d_eff = rep.d + r_r_inv;
    let wn = ((d_eff + rep.r_t_inv()) / (m_eff * rep.tau)).sqrt();
    let xi = (1.0 / rep.tau + d_eff / m_eff) / (2.0 * wn);
    SecondOrderForm {
        k: 1.0 / m_eff,
        z: 1.0 / rep.tau,
        xi,
        wn,
    }
}

/// Inverse-droop interval `(0, ub]` on which droop alone removes the
/// aggregate-mode Nadir: `ub = m (1/tau - 2 sqrt(r_t_inv/(m tau))) - d`.
/// `None` when the bound is not positive (no droop gain works).
pub fn nadir_region_droop(rep: &RepresentativeParams) -> Option<f64> {
    let ub = rep.m * (1.0 / rep.tau - 2.0 * (rep.r_t_inv() / (rep.m * rep.tau)).sqrt()) - rep.d;
    (ub > 0.0).then_some(ub)
}

/// Smallest virtual inertia `m_v` that removes the aggregate-mode Nadir for
/// a given inverse droop, found by sign bisection on the elimination
/// inequality (absolute tolerance 1e-6). Returns 0 when no added inertia is
/// needed.
pub fn nadir_region_vi(rep: &RepresentativeParams, r_r_inv: f64) -> Result<f64, MetricsError> {
    let margin = |m_v: f64| {
        let m_eff = rep.m + m_v;
        m_eff * (1.0 / rep.tau - 2.0 * (rep.r_t_inv() / (m_eff * rep.tau)).sqrt())
            - rep.d
            - r_r_inv
    };
    if margin(0.0) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = rep.m;
    let mut grow = 0;
    while margin(hi) < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(MetricsError::Infeasible(
                "virtual-inertia bracket expansion failed".into(),
            ));
        }
    }
    let mut lo = 0.0f64;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if margin(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Empirical Nadir extracted from a settled system-frequency trace.
#[derive(Debug, Clone, Copy)]
pub struct NadirReport {
    /// `max_t |omega_bar(t)|`
    pub value: f64,
    /// time of the (first) maximum
    pub time: f64,
    /// `max_t |omega_bar(t)| - |omega_syn|`; a monotone response keeps this
    /// at or slightly below zero
    pub overshoot: f64,
}

/// Scan a uniformly sampled system-frequency trace for its Nadir. The trace
/// must have settled: `|omega_bar(T) - omega_syn| < 1e-4 |omega_syn|`.
pub fn nadir_empirical(
    times: &[f64],
    omega_bar: &[f64],
    omega_syn: f64,
) -> Result<NadirReport, MetricsError> {
    if times.is_empty() || times.len() != omega_bar.len() {
        return Err(MetricsError::NotSettled("empty or ragged trace".into()));
    }
    let peak = omega_bar.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let tol = if omega_syn != 0.0 {
        1e-4 * omega_syn.abs()
    } else {
        1e-4 * peak.max(f64::MIN_POSITIVE)
    };
    let terminal = *omega_bar.last().expect("nonempty");
    if (terminal - omega_syn).abs() >= tol {
        return Err(MetricsError::NotSettled(format!(
            "terminal omega_bar {terminal} vs omega_syn {omega_syn}"
        )));
    }
    let mut best = 0usize;
    for (i, v) in omega_bar.iter().enumerate() {
        if v.abs() > omega_bar[best].abs() {
            best = i;
        }
    }
    Ok(NadirReport {
        value: omega_bar[best].abs(),
        time: times[best],
        overshoot: omega_bar[best].abs() - omega_syn.abs(),
    })
}

// ---------------------------------------------------------------------------
// Report container
// ---------------------------------------------------------------------------

/// Flat metric bundle serialized as one CSV row. Absent entries print as
/// empty cells; infinite variance prints as `inf`.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub omega_syn: f64,
    pub es: f64,
    pub h2_total: Option<H2Result>,
    pub h2_per_mode: Vec<H2Result>,
    pub sync_lower: Option<f64>,
    pub sync_exact: Option<f64>,
    pub sync_upper: Option<f64>,
    pub nadir_value: Option<f64>,
    pub nadir_time: Option<f64>,
    pub overshoot: Option<f64>,
}

impl MetricsReport {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["omega_syn".to_string(), "es".to_string(), "h2_total".to_string()];
        for k in 0..self.h2_per_mode.len() {
            cols.push(format!("h2_mode_{}", k + 1));
        }
        cols.extend(
            [
                "sync_lower",
                "sync_exact",
                "sync_upper",
                "nadir_value",
                "nadir_time",
                "overshoot",
            ]
            .map(str::to_string),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        fn opt(v: &Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        let mut cols = vec![
            format!("{}", self.omega_syn),
            format!("{}", self.es),
            self.h2_total.map(|h| format!("{h}")).unwrap_or_default(),
        ];
        for h in &self.h2_per_mode {
            cols.push(format!("{h}"));
        }
        cols.push(opt(&self.sync_lower));
        cols.push(opt(&self.sync_exact));
        cols.push(opt(&self.sync_upper));
        cols.push(opt(&self.nadir_value));
        cols.push(opt(&self.nadir_time));
        cols.push(opt(&self.overshoot));
        cols.join(",")
    }
}

//! Time-domain ground truth: nonlinear fixed-step RK4 for step scenarios
//! (the governor deadband is the only nonlinearity), Euler–Maruyama for
//! stochastic power fluctuations and measurement noise, and empirical
//! metric extraction from traces.
//!
//! States follow the same layout as the linear assembly: relative angles,
//! per-bus frequency, turbine and lead/lag internal states. The
//! virtual-inertia derivative is exact by construction — the frequency
//! state of a VI bus absorbs `m_v/(m + m_v)` of the measurement-noise
//! input, so shrinking the step size exposes the unbounded variance instead
//! of hiding it behind a filtered differentiator.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::h2norm::NoiseWeights;
use crate::lti::{assemble_full_state_space, ControllerSpec};
use crate::metrics::{nadir_empirical, MetricsError, MetricsReport, StepDisturbance};
use crate::netmodel::NetworkCase;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Lti(#[from] crate::lti::LtiError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Deterministic fixed-step fourth-order Runge–Kutta.
    Rk4,
    /// Euler–Maruyama with piecewise-constant noise inputs of variance
    /// `1/dt` (band-limited white noise).
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub method: Method,
    /// Keep every `record_stride`-th sample (the final one always).
    pub record_stride: usize,
    /// Measurement noise through a virtual-inertia bus has unbounded
    /// variance; stochastic runs refuse that combination unless this is set.
    pub allow_vi_measurement_noise: bool,
}

impl SimConfig {
    pub fn step_default() -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 60.0,
            seed: 0,
            method: Method::Rk4,
            record_stride: 1,
            allow_vi_measurement_noise: false,
        }
    }

    pub fn noise_default(seed: u64) -> Self {
        SimConfig {
            dt: 1e-3,
            horizon: 60.0,
            seed,
            method: Method::EulerMaruyama,
            record_stride: 1,
            allow_vi_measurement_noise: false,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) || self.record_stride == 0 {
            return Err(SimError::Config(format!(
                "dt {} / horizon {} / stride {}",
                self.dt, self.horizon, self.record_stride
            )));
        }
        Ok(())
    }
}

/// Recorded simulation output on a uniform (possibly decimated) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    /// Bus frequency deviations, one row per bus.
    pub omega: DMatrix<f64>,
    /// Inverter power per bus.
    pub q_r: DMatrix<f64>,
    /// Turbine power per bus.
    pub q_t: DMatrix<f64>,
    /// Inertia-weighted system frequency.
    pub omega_bar: Vec<f64>,
    /// Net step magnitude applied during the run (for effort-share
    /// extraction); zero for pure noise runs.
    pub step_sum: f64,
    /// Whether stochastic inputs were active. Noisy traces never settle in
    /// the deterministic sense, so Nadir extraction is qualitative.
    pub noisy: bool,
}

impl Trace {
    pub fn n_buses(&self) -> usize {
        self.omega.nrows()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV export: `t,omega_1..omega_n,qr_1..qr_n,qt_1..qt_n,omega_bar`.
    pub fn to_csv(&self) -> String {
        let n = self.n_buses();
        let mut out = String::from("t");
        for label in ["omega", "qr", "qt"] {
            for i in 1..=n {
                out.push_str(&format!(",{label}_{i}"));
            }
        }
        out.push_str(",omega_bar\n");
        for k in 0..self.len() {
            out.push_str(&format!("{}", self.times[k]));
            for m in [&self.omega, &self.q_r, &self.q_t] {
                for i in 0..n {
                    out.push_str(&format!(",{}", m[(i, k)]));
                }
            }
            out.push_str(&format!(",{}\n", self.omega_bar[k]));
        }
        out
    }

    /// Pooled empirical density of bus frequency deviations.
    /// Returns `(bin_left, bin_right, density)` rows.
    pub fn frequency_histogram(&self, bins: usize) -> Vec<(f64, f64, f64)> {
        let mut lo = f64::MAX;
        let mut hi = f64::MIN;
        for v in self.omega.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        let total = self.omega.len();
        for v in self.omega.iter() {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        (0..bins)
            .map(|k| {
                let left = lo + k as f64 * width;
                (
                    left,
                    left + width,
                    counts[k] as f64 / (total as f64 * width),
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Nonlinear dynamics shared by both integrators
// ---------------------------------------------------------------------------

struct Dynamics {
    n: usize,
    n_eta: usize,
    ns: usize,
    lap: DMatrix<f64>,
    /// per-bus: inertia, effective inertia (with m_v), effective damping,
    /// turbine parameters
    m: Vec<f64>,
    m_eff: Vec<f64>,
    d_eff: Vec<f64>,
    tau: Vec<f64>,
    rt_inv: Vec<f64>,
    deadband: Vec<f64>,
    controllers: Vec<ControllerSpec>,
    qt_ix: Vec<Option<usize>>,
    z_ix: Vec<Option<usize>>,
    /// measurement-noise weight per bus (kappa_w / sqrt(f_i))
    w_n: Vec<f64>,
    /// power-fluctuation weight per bus (kappa_p * sqrt(f_i))
    w_p: Vec<f64>,
    /// VI noise feedthrough m_v w_n / m_eff
    gain_n: Vec<f64>,
}

impl Dynamics {
    fn new(
        case: &NetworkCase,
        controllers: &[ControllerSpec],
        noise: &NoiseWeights,
    ) -> Result<Self, SimError> {
        if controllers.len() != case.n() {
            return Err(SimError::Config(format!(
                "{} controllers for {} buses",
                controllers.len(),
                case.n()
            )));
        }
        let lap = crate::netmodel::build_laplacian(case)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let n = case.n();
        let n_eta = n - 1;
        let f = case.ratings();
        let mut qt_ix = vec![None; n];
        let mut z_ix = vec![None; n];
        let mut next = n_eta + n;
        for (i, b) in case.buses.iter().enumerate() {
            if b.gen.r_t_inv > 0.0 {
                qt_ix[i] = Some(next);
                next += 1;
            }
        }
        for (i, c) in controllers.iter().enumerate() {
            if matches!(c, ControllerSpec::IDroop { .. }) {
                z_ix[i] = Some(next);
                next += 1;
            }
        }
        let m_v = |c: &ControllerSpec| match *c {
            ControllerSpec::VirtualInertia { m_v, .. } => m_v,
            _ => 0.0,
        };
        let m_eff: Vec<f64> = case
            .buses
            .iter()
            .zip(controllers)
            .map(|(b, c)| b.gen.m + m_v(c))
            .collect();
        let d_eff: Vec<f64> = case
            .buses
            .iter()
            .zip(controllers)
            .map(|(b, c)| match *c {
                ControllerSpec::None => b.gen.d,
                ControllerSpec::Droop { r_r_inv }
                | ControllerSpec::VirtualInertia { r_r_inv, .. } => b.gen.d + r_r_inv,
                ControllerSpec::IDroop { nu, .. } => b.gen.d + nu,
            })
            .collect();
        let w_n: Vec<f64> = (0..n).map(|i| noise.kappa_w / f[i].sqrt()).collect();
        let w_p: Vec<f64> = (0..n).map(|i| noise.kappa_p * f[i].sqrt()).collect();
        let gain_n: Vec<f64> = (0..n)
            .map(|i| m_v(&controllers[i]) * w_n[i] / m_eff[i])
            .collect();
        Ok(Dynamics {
            n,
            n_eta,
            ns: next,
            lap: lap.matrix,
            m: case.buses.iter().map(|b| b.gen.m).collect(),
            m_eff,
            d_eff,
            tau: case.buses.iter().map(|b| b.gen.tau).collect(),
            rt_inv: case.buses.iter().map(|b| b.gen.r_t_inv).collect(),
            deadband: case.buses.iter().map(|b| b.gen.deadband).collect(),
            controllers: controllers.to_vec(),
            qt_ix,
            z_ix,
            w_n,
            w_p,
            gain_n,
        })
    }

    /// Governor response with deadband.
    fn governor(&self, i: usize, omega: f64) -> f64 {
        let eps = self.deadband[i];
        if omega <= -eps {
            -self.rt_inv[i] * (omega + eps)
        } else if omega >= eps {
            -self.rt_inv[i] * (omega - eps)
        } else {
            0.0
        }
    }

    fn omega(&self, x: &DVector<f64>, noise_meas: &[f64], i: usize) -> f64 {
        x[self.n_eta + i] - self.gain_n[i] * noise_meas[i]
    }

    /// Right-hand side with the current (held) inputs.
    fn drift(
        &self,
        x: &DVector<f64>,
        p: &DVector<f64>,
        noise_p: &[f64],
        noise_meas: &[f64],
        dx: &mut DVector<f64>,
    ) {
        let n = self.n;
        let omega: Vec<f64> = (0..n).map(|i| self.omega(x, noise_meas, i)).collect();
        for j in 0..self.n_eta {
            dx[j] = omega[j + 1] - omega[0];
        }
        for i in 0..n {
            let mut force = -self.d_eff[i] * omega[i] + p[i] + self.w_p[i] * noise_p[i];
            for j in 0..self.n_eta {
                force -= self.lap[(i, j + 1)] * x[j];
            }
            if let Some(qt) = self.qt_ix[i] {
                force += x[qt];
                dx[qt] = (self.governor(i, omega[i]) - x[qt]) / self.tau[i];
            }
            if let Some(z) = self.z_ix[i] {
                force += x[z];
                if let ControllerSpec::IDroop { nu, delta, r_r_inv } = self.controllers[i] {
                    dx[z] = -delta * x[z]
                        + delta * (nu - r_r_inv) * (omega[i] + self.w_n[i] * noise_meas[i]);
                }
            }
            match self.controllers[i] {
                ControllerSpec::Droop { r_r_inv }
                | ControllerSpec::VirtualInertia { r_r_inv, .. } => {
                    force -= r_r_inv * self.w_n[i] * noise_meas[i];
                }
                ControllerSpec::IDroop { nu, .. } => {
                    force -= nu * self.w_n[i] * noise_meas[i];
                }
                ControllerSpec::None => {}
            }
            dx[self.n_eta + i] = force / self.m_eff[i];
        }
    }

    /// Inverter power for recording. The derivative part of virtual inertia
    /// is taken from the drift (for stochastic runs this omits the
    /// derivative-of-noise component, which has no pointwise value).
    fn record_qr(
        &self,
        x: &DVector<f64>,
        dx: &DVector<f64>,
        noise_meas: &[f64],
        i: usize,
    ) -> f64 {
        let omega = self.omega(x, noise_meas, i);
        let measured = omega + self.w_n[i] * noise_meas[i];
        match self.controllers[i] {
            ControllerSpec::None => 0.0,
            ControllerSpec::Droop { r_r_inv } => -r_r_inv * measured,
            ControllerSpec::VirtualInertia { m_v, r_r_inv } => {
                -m_v * dx[self.n_eta + i] - r_r_inv * measured
            }
            ControllerSpec::IDroop { nu, .. } => {
                -nu * measured + x[self.z_ix[i].expect("idroop state")]
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Integrators
// ---------------------------------------------------------------------------

fn check_finite(x: &DVector<f64>, t: f64) -> Result<(), SimError> {
    for v in x.iter() {
        if !v.is_finite() || v.abs() > 1e6 {
            return Err(SimError::Divergence { t });
        }
    }
    Ok(())
}

/// Deterministic step-response simulation from equilibrium; fixed-step RK4
/// with the governor deadband evaluated continuously.
pub fn simulate_step(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    step: &StepDisturbance,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    if cfg.method != Method::Rk4 {
        return Err(SimError::Config(
            "step simulation uses the deterministic Rk4 method".into(),
        ));
    }
    if step.u0.len() != case.n() {
        return Err(SimError::Config(format!(
            "step vector has {} entries for {} buses",
            step.u0.len(),
            case.n()
        )));
    }
    let dyn_ = Dynamics::new(case, controllers, &NoiseWeights::none())?;
    let no_noise = vec![0.0; dyn_.n];
    let zero_p = DVector::zeros(dyn_.n);
    let p_at = |t: f64| -> &DVector<f64> {
        if t >= step.time {
            &step.u0
        } else {
            &zero_p
        }
    };

    let n_steps = (cfg.horizon / cfg.dt).round() as usize;
    let mut x = DVector::zeros(dyn_.ns);
    let mut k1 = DVector::zeros(dyn_.ns);
    let mut k2 = DVector::zeros(dyn_.ns);
    let mut k3 = DVector::zeros(dyn_.ns);
    let mut k4 = DVector::zeros(dyn_.ns);
    let mut rec = Recorder::new(&dyn_, n_steps, cfg.record_stride, step.u0.sum());

    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        dyn_.drift(&x, p_at(t), &no_noise, &no_noise, &mut k1);
        rec.record(&dyn_, t, &x, &k1, &no_noise, k, n_steps);
        if k == n_steps {
            break;
        }
        let h = cfg.dt;
        let mid = t + 0.5 * h;
        dyn_.drift(&(&x + &k1 * (0.5 * h)), p_at(mid), &no_noise, &no_noise, &mut k2);
        dyn_.drift(&(&x + &k2 * (0.5 * h)), p_at(mid), &no_noise, &no_noise, &mut k3);
        dyn_.drift(&(&x + &k3 * h), p_at(t + h), &no_noise, &no_noise, &mut k4);
        x += (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
        check_finite(&x, t + h)?;
    }
    Ok(rec.finish(false))
}

/// Stochastic simulation under white power fluctuations and measurement
/// noise. Reproducible from the seed; per-bus channels are independent.
pub fn simulate_stochastic(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    w: &NoiseWeights,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    simulate_driven(case, controllers, w, None, cfg)
}

/// Combined scenario: a step on the injection set points on top of the
/// stochastic disturbances. No closed form covers this mix; it exists for
/// qualitative comparisons.
pub fn simulate_combined(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    w: &NoiseWeights,
    step: &StepDisturbance,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    simulate_driven(case, controllers, w, Some(step), cfg)
}

fn simulate_driven(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    w: &NoiseWeights,
    step: Option<&StepDisturbance>,
    cfg: &SimConfig,
) -> Result<Trace, SimError> {
    cfg.validate()?;
    if cfg.method != Method::EulerMaruyama {
        return Err(SimError::Config(
            "stochastic simulation uses the EulerMaruyama method".into(),
        ));
    }
    let has_vi = controllers
        .iter()
        .any(|c| matches!(c, ControllerSpec::VirtualInertia { .. }));
    if has_vi && w.kappa_w > 0.0 && !cfg.allow_vi_measurement_noise {
        return Err(SimError::Config(
            "virtual inertia with measurement noise has unbounded variance; \
             set allow_vi_measurement_noise to simulate it anyway"
                .into(),
        ));
    }
    if let Some(s) = step {
        if s.u0.len() != case.n() {
            return Err(SimError::Config(format!(
                "step vector has {} entries for {} buses",
                s.u0.len(),
                case.n()
            )));
        }
    }
    let dyn_ = Dynamics::new(case, controllers, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zero_p = DVector::zeros(dyn_.n);
    let p_at = |t: f64| -> &DVector<f64> {
        match step {
            Some(s) if t >= s.time => &s.u0,
            _ => &zero_p,
        }
    };

    let n_steps = (cfg.horizon / cfg.dt).round() as usize;
    let inv_sqrt_dt = 1.0 / cfg.dt.sqrt();
    let mut x = DVector::zeros(dyn_.ns);
    let mut dx = DVector::zeros(dyn_.ns);
    let mut noise_p = vec![0.0; dyn_.n];
    let mut noise_meas = vec![0.0; dyn_.n];
    let step_sum = step.map_or(0.0, |s| s.u0.sum());
    let mut rec = Recorder::new(&dyn_, n_steps, cfg.record_stride, step_sum);

    for k in 0..=n_steps {
        let t = k as f64 * cfg.dt;
        for i in 0..dyn_.n {
            noise_p[i] = if w.kappa_p > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * inv_sqrt_dt
            } else {
                0.0
            };
            noise_meas[i] = if w.kappa_w > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * inv_sqrt_dt
            } else {
                0.0
            };
        }
        dyn_.drift(&x, p_at(t), &noise_p, &noise_meas, &mut dx);
        rec.record(&dyn_, t, &x, &dx, &noise_meas, k, n_steps);
        if k == n_steps {
            break;
        }
        x += &dx * cfg.dt;
        check_finite(&x, t + cfg.dt)?;
    }
    Ok(rec.finish(true))
}

/// Independent stochastic runs on separated RNG streams (`seed` fixed, one
/// stream per run index); results are order-stable regardless of the
/// parallel schedule.
pub fn simulate_stochastic_ensemble(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    w: &NoiseWeights,
    cfg: &SimConfig,
    runs: usize,
) -> Result<Vec<Trace>, SimError> {
    (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut run_cfg = *cfg;
            run_cfg.seed = split_seed(cfg.seed, run as u64);
            simulate_stochastic(case, controllers, w, &run_cfg)
        })
        .collect()
}

/// Derive a child seed for ensemble run `index` (splitmix64 over the pair).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct Recorder {
    times: Vec<f64>,
    omega: Vec<f64>,
    q_r: Vec<f64>,
    q_t: Vec<f64>,
    omega_bar: Vec<f64>,
    m_weights: Vec<f64>,
    n: usize,
    stride: usize,
    step_sum: f64,
}

impl Recorder {
    fn new(dyn_: &Dynamics, n_steps: usize, stride: usize, step_sum: f64) -> Self {
        let cap = n_steps / stride + 2;
        let m_total: f64 = dyn_.m.iter().sum();
        Recorder {
            times: Vec::with_capacity(cap),
            omega: Vec::with_capacity(cap * dyn_.n),
            q_r: Vec::with_capacity(cap * dyn_.n),
            q_t: Vec::with_capacity(cap * dyn_.n),
            omega_bar: Vec::with_capacity(cap),
            m_weights: dyn_.m.iter().map(|m| m / m_total).collect(),
            n: dyn_.n,
            stride,
            step_sum,
        }
    }

    fn record(
        &mut self,
        dyn_: &Dynamics,
        t: f64,
        x: &DVector<f64>,
        dx: &DVector<f64>,
        noise_meas: &[f64],
        k: usize,
        n_steps: usize,
    ) {
        if k % self.stride != 0 && k != n_steps {
            return;
        }
        self.times.push(t);
        let mut bar = 0.0;
        for i in 0..self.n {
            let w = dyn_.omega(x, noise_meas, i);
            self.omega.push(w);
            bar += self.m_weights[i] * w;
            self.q_r.push(dyn_.record_qr(x, dx, noise_meas, i));
            self.q_t.push(dyn_.qt_ix[i].map_or(0.0, |q| x[q]));
        }
        self.omega_bar.push(bar);
    }

    fn finish(self, noisy: bool) -> Trace {
        let cols = self.times.len();
        let from_rows = |data: Vec<f64>| {
            // data is column-appended (one column per sample)
            DMatrix::from_vec(self.n, cols, data)
        };
        Trace {
            times: self.times,
            omega: from_rows(self.omega),
            q_r: from_rows(self.q_r),
            q_t: from_rows(self.q_t),
            omega_bar: self.omega_bar,
            step_sum: self.step_sum,
            noisy,
        }
    }
}

// ---------------------------------------------------------------------------
// Linear reference (exact discretization)
// ---------------------------------------------------------------------------

/// Exact step response of the linearized closed loop on a uniform grid:
/// matrix-exponential discretization of the assembled state space. The
/// reference implementation that the nonlinear integrator is validated
/// against in the deadband-free regime.
pub fn linear_step_response(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    step: &StepDisturbance,
    times: &[f64],
) -> Result<DMatrix<f64>, SimError> {
    let ss = assemble_full_state_space(case, controllers, &NoiseWeights::none())?;
    let ns = ss.a.nrows();
    let n = case.n();
    let mut out = DMatrix::zeros(n, times.len());
    if times.is_empty() {
        return Ok(out);
    }
    let dt = if times.len() > 1 {
        times[1] - times[0]
    } else {
        1.0
    };
    let bu = ss.b.columns(0, n) * &step.u0;
    let mut aug = DMatrix::zeros(ns + 1, ns + 1);
    aug.view_mut((0, 0), (ns, ns)).copy_from(&ss.a);
    aug.view_mut((0, ns), (ns, 1)).copy_from(&bu);
    let aug = (aug * dt).exp();
    let ad = aug.view((0, 0), (ns, ns)).into_owned();
    let bd = aug.view((0, ns), (ns, 1)).into_owned();

    let mut x = DVector::zeros(ns);
    for (k, &t) in times.iter().enumerate() {
        out.set_column(k, &(&ss.c * &x));
        if k + 1 < times.len() {
            // input active once the step has switched on
            if t >= step.time - 0.5 * dt {
                x = &ad * x + bd.column(0);
            } else {
                x = &ad * x;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Empirical metrics
// ---------------------------------------------------------------------------

/// Extract empirical metrics from a trace: trapezoidal synchronization
/// cost, Nadir of the system frequency, effort share from the terminal
/// window, and the time-averaged frequency variance.
///
/// `analytic` supplies the deadband-free synchronous frequency for the
/// settling check; without it the terminal system frequency is used.
pub fn empirical_metrics(
    trace: &Trace,
    analytic: Option<&MetricsReport>,
) -> Result<MetricsReport, SimError> {
    let n = trace.n_buses();
    let len = trace.len();
    if len < 2 {
        return Err(SimError::Config("trace too short".into()));
    }

    // synchronization cost: integral of sum_i (omega_i - omega_bar)^2
    let mut sync_cost = 0.0;
    let mut prev = 0.0;
    for k in 0..len {
        let mut dev = 0.0;
        for i in 0..n {
            let d = trace.omega[(i, k)] - trace.omega_bar[k];
            dev += d * d;
        }
        if k > 0 {
            sync_cost += 0.5 * (dev + prev) * (trace.times[k] - trace.times[k - 1]);
        }
        prev = dev;
    }

    // terminal-window averages
    let tail = (len as f64 * 0.9) as usize;
    let tail = tail.min(len - 1);
    let mut qr_sum = 0.0;
    let mut omega_tail = 0.0;
    for k in tail..len {
        for i in 0..n {
            qr_sum += trace.q_r[(i, k)];
        }
        omega_tail += trace.omega_bar[k];
    }
    let window = (len - tail) as f64;
    let qr_mean = qr_sum / window;
    let omega_terminal = omega_tail / window;

    let es = if trace.step_sum != 0.0 {
        (qr_mean / trace.step_sum).abs()
    } else {
        0.0
    };

    // time-averaged total frequency variance after a 10% burn-in
    let burn = len / 10;
    let mut var = 0.0;
    for k in burn..len {
        for i in 0..n {
            var += trace.omega[(i, k)] * trace.omega[(i, k)];
        }
    }
    var /= (len - burn) as f64;

    let omega_syn = analytic.map_or(omega_terminal, |r| r.omega_syn);
    let nadir = if trace.step_sum == 0.0 {
        None
    } else if trace.noisy {
        // persistent noise keeps the trace from ever settling in the
        // deterministic sense; report the raw excursion qualitatively
        let mut best = 0;
        for (k, v) in trace.omega_bar.iter().enumerate() {
            if v.abs() > trace.omega_bar[best].abs() {
                best = k;
            }
        }
        Some(crate::metrics::NadirReport {
            value: trace.omega_bar[best].abs(),
            time: trace.times[best],
            overshoot: trace.omega_bar[best].abs() - omega_syn.abs(),
        })
    } else {
        Some(nadir_empirical(&trace.times, &trace.omega_bar, omega_syn)?)
    };

    Ok(MetricsReport {
        omega_syn: omega_terminal,
        es,
        h2_total: Some(crate::h2norm::H2Result::Finite(var)),
        h2_per_mode: Vec::new(),
        sync_lower: None,
        sync_exact: Some(sync_cost),
        sync_upper: None,
        nadir_value: nadir.map(|r| r.value),
        nadir_time: nadir.map(|r| r.time),
        overshoot: nadir.map(|r| r.overshoot),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{proportional_case, Line, RepresentativeParams};

    fn table_rep() -> RepresentativeParams {
        RepresentativeParams {
            m: 0.0111,
            d: 0.0014,
            tau: 4.59,
            r_t: Some(748.97),
            r_r: Some(748.97),
        }
    }

    fn ring_case(n: usize, rep: &RepresentativeParams, ratings: &[f64], b: f64) -> NetworkCase {
        let mut lines: Vec<Line> = (1..n as u64)
            .map(|i| Line {
                from: i,
                to: i + 1,
                susceptance: b,
            })
            .collect();
        if n > 2 {
            lines.push(Line {
                from: n as u64,
                to: 1,
                susceptance: b,
            });
        }
        proportional_case(rep, ratings, &lines).unwrap()
    }

    fn uniform(case: &NetworkCase, law: &ControllerSpec) -> Vec<ControllerSpec> {
        case.buses.iter().map(|b| law.scaled(b.rating)).collect()
    }

    #[test]
    fn zero_step_stays_at_equilibrium() {
        let case = ring_case(3, &table_rep(), &[1.0, 1.0, 1.0], 1.0);
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv: 0.0013 });
        let step = StepDisturbance {
            u0: DVector::zeros(3),
            time: 0.0,
        };
        let mut cfg = SimConfig::step_default();
        cfg.horizon = 2.0;
        let trace = simulate_step(&case, &ctl, &step, &cfg).unwrap();
        assert!(trace.omega.iter().all(|&v| v == 0.0));
        assert!(trace.q_t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_regime_matches_matrix_exponential() {
        let case = ring_case(3, &table_rep(), &[0.8, 1.0, 1.2], 1.0);
        let step = StepDisturbance::at_bus(3, 1, -0.3, 0.0);
        let mut cfg = SimConfig::step_default();
        cfg.horizon = 20.0;
        let laws = [
            ControllerSpec::Droop { r_r_inv: 0.0013352 },
            ControllerSpec::VirtualInertia {
                m_v: 0.022,
                r_r_inv: 0.0013352,
            },
            ControllerSpec::IDroop {
                nu: 0.0027,
                delta: 0.2179,
                r_r_inv: 0.0013352,
            },
        ];
        for law in laws {
            let ctl = uniform(&case, &law);
            let trace = simulate_step(&case, &ctl, &step, &cfg).unwrap();
            let exact = linear_step_response(&case, &ctl, &step, &trace.times).unwrap();
            let scale = exact.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            let mut worst = 0.0f64;
            for k in 0..trace.len() {
                for i in 0..3 {
                    worst = worst.max((trace.omega[(i, k)] - exact[(i, k)]).abs());
                }
            }
            assert!(
                worst <= 1e-6 * scale,
                "{law:?}: worst {worst:e} vs scale {scale:e}"
            );
        }
    }

    #[test]
    fn same_synchronous_frequency_across_laws() {
        let case = ring_case(4, &table_rep(), &[0.9, 1.0, 1.1, 1.0], 1.0);
        let step = StepDisturbance::at_bus(4, 1, -0.3, 1.0);
        let mut cfg = SimConfig::step_default();
        cfg.horizon = 120.0;
        let r_r_inv = 1.0 / 748.97;
        let laws = [
            ControllerSpec::Droop { r_r_inv },
            ControllerSpec::VirtualInertia { m_v: 0.022, r_r_inv },
            ControllerSpec::IDroop {
                nu: 2.0 / 748.97,
                delta: 0.2179,
                r_r_inv,
            },
        ];
        let mut finals = Vec::new();
        for law in laws {
            let ctl = uniform(&case, &law);
            let trace = simulate_step(&case, &ctl, &step, &cfg).unwrap();
            finals.push(*trace.omega_bar.last().unwrap());
        }
        for w in &finals[1..] {
            assert!(
                (w - finals[0]).abs() <= 1e-6 * finals[0].abs(),
                "finals {finals:?}"
            );
        }
    }

    #[test]
    fn deterministic_runs_are_bit_identical() {
        let case = ring_case(3, &table_rep(), &[1.0, 1.0, 1.0], 1.0);
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv: 0.0013 });
        let w = NoiseWeights {
            kappa_p: 1e-4,
            kappa_w: 1e-5,
        };
        let mut cfg = SimConfig::noise_default(42);
        cfg.horizon = 3.0;
        let a = simulate_stochastic(&case, &ctl, &w, &cfg).unwrap();
        let b = simulate_stochastic(&case, &ctl, &w, &cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg;
        cfg2.seed = 43;
        let c = simulate_stochastic(&case, &ctl, &w, &cfg2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rk4_terminal_error_contracts_at_fourth_order() {
        let case = ring_case(3, &table_rep(), &[0.8, 1.0, 1.2], 1.0);
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv: 0.0013352 });
        let step = StepDisturbance::at_bus(3, 0, -0.3, 0.0);
        let horizon = 5.0;
        let terminal = |dt: f64| {
            let cfg = SimConfig {
                dt,
                horizon,
                seed: 0,
                method: Method::Rk4,
                record_stride: usize::MAX / 2,
                allow_vi_measurement_noise: false,
            };
            let trace = simulate_step(&case, &ctl, &step, &cfg).unwrap();
            let k = trace.len() - 1;
            DVector::from_iterator(3, (0..3).map(|i| trace.omega[(i, k)]))
        };
        let e1 = (terminal(0.02) - terminal(0.01)).norm();
        let e2 = (terminal(0.01) - terminal(0.005)).norm();
        let ratio = e1 / e2;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "observed contraction ratio {ratio}"
        );
    }

    #[test]
    fn zero_noise_weights_give_zero_trace() {
        let case = ring_case(3, &table_rep(), &[1.0, 1.0, 1.0], 1.0);
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv: 0.0013 });
        let mut cfg = SimConfig::noise_default(1);
        cfg.horizon = 1.0;
        let trace =
            simulate_stochastic(&case, &ctl, &NoiseWeights::none(), &cfg).unwrap();
        assert!(trace.omega.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vi_with_measurement_noise_requires_opt_in() {
        let case = ring_case(2, &table_rep(), &[1.0, 1.0], 1.0);
        let ctl = uniform(
            &case,
            &ControllerSpec::VirtualInertia {
                m_v: 0.022,
                r_r_inv: 0.0013,
            },
        );
        let w = NoiseWeights {
            kappa_p: 1e-4,
            kappa_w: 1e-5,
        };
        let mut cfg = SimConfig::noise_default(1);
        cfg.horizon = 1.0;
        assert!(matches!(
            simulate_stochastic(&case, &ctl, &w, &cfg),
            Err(SimError::Config(_))
        ));
        cfg.allow_vi_measurement_noise = true;
        assert!(simulate_stochastic(&case, &ctl, &w, &cfg).is_ok());
    }

    #[test]
    fn stochastic_variance_matches_closed_form_two_bus() {
        // swing-only homogeneous pair: closed-form total variance is 1.0
        let rep = RepresentativeParams {
            m: 1.0,
            d: 0.5,
            tau: 1.0,
            r_t: None,
            r_r: Some(2.0),
        };
        let case = proportional_case(
            &rep,
            &[1.0, 1.0],
            &[Line {
                from: 1,
                to: 2,
                susceptance: 1.0,
            }],
        )
        .unwrap();
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv: 0.5 });
        let w = NoiseWeights {
            kappa_p: 1.0,
            kappa_w: 0.0,
        };
        let cfg = SimConfig {
            dt: 0.01,
            horizon: 2000.0,
            seed: 7,
            method: Method::EulerMaruyama,
            record_stride: 5,
            allow_vi_measurement_noise: false,
        };
        let trace = simulate_stochastic(&case, &ctl, &w, &cfg).unwrap();
        let report = empirical_metrics(&trace, None).unwrap();
        let var = report.h2_total.unwrap().expect_finite("empirical variance");
        assert!(
            (var - 1.0).abs() < 0.05,
            "empirical variance {var} vs closed form 1.0"
        );
    }

    #[test]
    fn empirical_sync_cost_and_es_match_analytics() {
        let rep = table_rep();
        let case = ring_case(3, &rep, &[1.0, 1.0, 1.0], 1.0);
        let r_r_inv = 1.0 / 748.97;
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv });
        let step = StepDisturbance::at_bus(3, 0, -0.3, 0.0);
        let mut cfg = SimConfig::step_default();
        cfg.horizon = 120.0;
        let trace = simulate_step(&case, &ctl, &step, &cfg).unwrap();

        let lap = crate::netmodel::build_laplacian(&case).unwrap();
        let dec = crate::lti::eigendecompose_scaled(&lap, &case.ratings());
        let g = crate::lti::generator_tf(&rep, true);
        let c_rep = ControllerSpec::Droop { r_r_inv };
        let analytic_cost =
            crate::metrics::sync_cost_exact(&dec, &g, &c_rep, &step).unwrap();
        let analytic_es =
            crate::metrics::steady_state_effort_share(&case, &ctl).unwrap();
        let omega_syn =
            crate::metrics::synchronous_frequency(&case, &ctl, &step).unwrap();

        let analytic = MetricsReport {
            omega_syn,
            es: analytic_es,
            ..Default::default()
        };
        let report = empirical_metrics(&trace, Some(&analytic)).unwrap();
        let cost = report.sync_exact.unwrap();
        assert!(
            (cost - analytic_cost).abs() < 0.02 * analytic_cost,
            "empirical {cost} vs analytic {analytic_cost}"
        );
        assert!(
            (report.es - analytic_es).abs() < 0.01 * analytic_es,
            "empirical {} vs analytic {analytic_es}",
            report.es
        );
    }

    #[test]
    fn aggregate_aligned_step_has_negligible_sync_cost() {
        let rep = table_rep();
        let ratings = [0.8, 1.0, 1.2];
        let case = ring_case(3, &rep, &ratings, 1.0);
        let ctl = uniform(&case, &ControllerSpec::Droop { r_r_inv: 1.0 / 748.97 });
        let u0 = DVector::from_iterator(3, ratings.iter().map(|f| -0.1 * f));
        let step = StepDisturbance { u0, time: 0.0 };
        let mut cfg = SimConfig::step_default();
        cfg.horizon = 60.0;
        let trace = simulate_step(&case, &ctl, &step, &cfg).unwrap();
        let mut cost = 0.0;
        let mut total = 0.0;
        for k in 0..trace.len() {
            for i in 0..3 {
                let d = trace.omega[(i, k)] - trace.omega_bar[k];
                cost += d * d;
                total += trace.omega[(i, k)] * trace.omega[(i, k)];
            }
        }
        assert!(cost < 1e-6 * total, "mode-1 step leaked {cost} of {total}");
    }
}

//! Full-network state-space assembly.
//!
//! The linear closed loop over all buses is built directly from the case:
//! relative angles (one angle grounded to remove the rotational null
//! space), one frequency-like state per bus, a turbine state per bus with a
//! governor loop, and one internal state per dynamic-droop inverter.
//!
//! The virtual-inertia derivative term is realized exactly by absorbing it
//! into the frequency state, never by an approximate differentiator: for a
//! VI bus the stored state is `omega + m_v w_n n / (m + m_v)`, which makes
//! the measurement-noise feedthrough to the frequency output explicit in
//! `D`. That feedthrough is the reason VI carries unbounded variance, so it
//! must survive the realization.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::h2norm::NoiseWeights;
use crate::netmodel::NetworkCase;

use super::tf::LtiError;
use super::ControllerSpec;

/// `xdot = A x + B u`, `y = C x + D u` with named states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_labels: Vec<String>,
}

impl StateSpace {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// `C (sI - A)^-1 B + D`.
    pub fn freq_response(&self, s: Complex64) -> DMatrix<Complex64> {
        let n = self.n_states();
        let a_c = self.a.map(|v| Complex64::new(v, 0.0));
        let mut m = DMatrix::<Complex64>::identity(n, n) * s;
        m -= a_c;
        let b_c = self.b.map(|v| Complex64::new(v, 0.0));
        let x = m.lu().solve(&b_c).expect("sI - A is regular off the spectrum");
        self.c.map(|v| Complex64::new(v, 0.0)) * x + self.d.map(|v| Complex64::new(v, 0.0))
    }

    /// Plain-text dump (rows of space-separated decimals) for debugging.
    pub fn export_text(&self) -> String {
        fn block(name: &str, m: &DMatrix<f64>) -> String {
            let mut out = format!("{name} {}x{}\n", m.nrows(), m.ncols());
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
            out
        }
        let mut out = String::new();
        out.push_str(&format!("states {}\n", self.state_labels.join(" ")));
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d)] {
            out.push_str(&block(name, m));
        }
        out
    }
}

/// Assemble the closed-loop system from inputs `[p_in | d_p | n_w]` (power
/// set-point steps, weighted power fluctuations, weighted measurement
/// noise; n columns each) to the bus frequency deviations.
///
/// `controllers` supplies one law per bus, ordered like `case.buses`.
/// Turbine states are omitted for buses with `r_t_inv == 0`. Turbine
/// deadbands are not represented here: this is the linear model.
pub fn assemble_full_state_space(
    case: &NetworkCase,
    controllers: &[ControllerSpec],
    noise: &NoiseWeights,
) -> Result<StateSpace, LtiError> {
    let n = case.n();
    if controllers.len() != n {
        return Err(LtiError::Dimension(format!(
            "{} controllers for {} buses",
            controllers.len(),
            n
        )));
    }
    let lap = crate::netmodel::build_laplacian(case)
        .map_err(|e| LtiError::Dimension(e.to_string()))?;
    let f = case.ratings();

    // State layout: eta (n-1 relative angles), omega-like (n), then per-bus
    // turbine and controller states in bus order.
    let n_eta = n.saturating_sub(1);
    let mut labels: Vec<String> = Vec::new();
    for i in 1..n {
        labels.push(format!("ang_{}", case.buses[i].id));
    }
    let omega_ix: Vec<usize> = (0..n).map(|i| n_eta + i).collect();
    for b in &case.buses {
        labels.push(format!("omega_{}", b.id));
    }
    let mut qt_ix = vec![None; n];
    let mut z_ix = vec![None; n];
    let mut next = n_eta + n;
    for (i, b) in case.buses.iter().enumerate() {
        if b.gen.r_t_inv > 0.0 {
            qt_ix[i] = Some(next);
            labels.push(format!("qt_{}", b.id));
            next += 1;
        }
    }
    for (i, b) in case.buses.iter().enumerate() {
        if matches!(controllers[i], ControllerSpec::IDroop { .. }) {
            z_ix[i] = Some(next);
            labels.push(format!("ctl_{}", b.id));
            next += 1;
        }
    }
    let ns = next;
    let n_in = 3 * n;

    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, n_in);
    let mut c = DMatrix::zeros(n, ns);
    let mut d = DMatrix::zeros(n, n_in);

    // Per-bus controller decomposition: effective added damping, direct
    // noise gain into the swing equation, inertia augmentation.
    struct BusCtl {
        d_eff: f64,
        m_eff: f64,
        m_v: f64,
        /// coefficient of the (weighted) noise input in q_r's static part
        noise_direct: f64,
    }
    let ctl: Vec<BusCtl> = case
        .buses
        .iter()
        .zip(controllers)
        .map(|(bus, law)| match *law {
            ControllerSpec::None => BusCtl {
                d_eff: bus.gen.d,
                m_eff: bus.gen.m,
                m_v: 0.0,
                noise_direct: 0.0,
            },
            ControllerSpec::Droop { r_r_inv } => BusCtl {
                d_eff: bus.gen.d + r_r_inv,
                m_eff: bus.gen.m,
                m_v: 0.0,
                noise_direct: r_r_inv,
            },
            ControllerSpec::VirtualInertia { m_v, r_r_inv } => BusCtl {
                d_eff: bus.gen.d + r_r_inv,
                m_eff: bus.gen.m + m_v,
                m_v,
                noise_direct: r_r_inv,
            },
            ControllerSpec::IDroop { nu, .. } => BusCtl {
                d_eff: bus.gen.d + nu,
                m_eff: bus.gen.m,
                m_v: 0.0,
                noise_direct: nu,
            },
        })
        .collect();

    // Measurement-noise weight per bus and the feedthrough it produces on
    // the frequency output of VI buses.
    let w_n: Vec<f64> = (0..n).map(|i| noise.kappa_w / f[i].sqrt()).collect();
    let gain_n: Vec<f64> = (0..n).map(|i| ctl[i].m_v * w_n[i] / ctl[i].m_eff).collect();

    // omega_i = state_i - gain_n_i * n_i; this closure adds `coef * omega_i`
    // to row `row` of A (and the induced noise column of B).
    let n_col = |i: usize| 2 * n + i;
    let add_omega =
        |a: &mut DMatrix<f64>, b: &mut DMatrix<f64>, row: usize, i: usize, coef: f64| {
            a[(row, omega_ix[i])] += coef;
            b[(row, n_col(i))] -= coef * gain_n[i];
        };

    // Relative-angle rows: eta_j = theta_{j+1} - theta_1.
    for j in 0..n_eta {
        add_omega(&mut a, &mut b, j, j + 1, 1.0);
        add_omega(&mut a, &mut b, j, 0, -1.0);
    }

    for i in 0..n {
        let bus = &case.buses[i];
        let row = omega_ix[i];
        let m_eff = ctl[i].m_eff;

        add_omega(&mut a, &mut b, row, i, -ctl[i].d_eff / m_eff);
        // Network coupling: L_B theta = L_B S eta with S selecting buses 2..n.
        for j in 0..n_eta {
            a[(row, j)] -= lap.matrix[(i, j + 1)] / m_eff;
        }
        if let Some(qt) = qt_ix[i] {
            a[(row, qt)] += 1.0 / m_eff;
        }
        if let Some(z) = z_ix[i] {
            a[(row, z)] += 1.0 / m_eff;
        }
        b[(row, i)] += 1.0 / m_eff;
        b[(row, n + i)] += noise.kappa_p * f[i].sqrt() / m_eff;
        b[(row, n_col(i))] -= ctl[i].noise_direct * w_n[i] / m_eff;

        if let Some(qt) = qt_ix[i] {
            add_omega(&mut a, &mut b, qt, i, -bus.gen.r_t_inv / bus.gen.tau);
            a[(qt, qt)] -= 1.0 / bus.gen.tau;
        }
        if let Some(z) = z_ix[i] {
            if let ControllerSpec::IDroop { nu, delta, r_r_inv } = controllers[i] {
                add_omega(&mut a, &mut b, z, i, delta * (nu - r_r_inv));
                a[(z, z)] -= delta;
                b[(z, n_col(i))] += delta * (nu - r_r_inv) * w_n[i];
            }
        }

        c[(i, omega_ix[i])] = 1.0;
        d[(i, n_col(i))] = -gain_n[i];
    }

    Ok(StateSpace {
        a,
        b,
        c,
        d,
        state_labels: labels,
    })
}

/// Inertia-weighted averaging vector: `omega_bar = w^T omega`.
pub fn inertia_weights(case: &NetworkCase) -> DVector<f64> {
    let total: f64 = case.buses.iter().map(|b| b.gen.m).sum();
    DVector::from_iterator(case.n(), case.buses.iter().map(|b| b.gen.m / total))
}

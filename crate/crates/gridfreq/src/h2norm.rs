//! Squared H2 norms: closed forms for the quartic embedding, a
//! Lyapunov-equation oracle, cross inner products of step kernels and the
//! aggregate frequency-variance sum.
//!
//! The closed form for a stable fourth-order function
//! `h(s) = (b3 s^3 + b2 s^2 + b1 s + b0)/(s^4 + a3 s^3 + a2 s^2 + a1 s + a0)` is
//!
//! ```text
//!            z0 b0^2 + z1 b1^2 + z2 b2^2 + z3 b3^2 + z4
//! ||h||^2 = --------------------------------------------
//!              2 a0 (a1 a2 a3 - a1^2 - a0 a3^2)
//!
//! z0 = a2 a3 - a1          z1 = a0 a3        z2 = a0 a1
//! z3 = a0 a1 a2 - a0^2 a3  z4 = -2 a0 (a1 b1 b3 + a3 b0 b2)
//! ```
//!
//! with lower orders obtained by the corresponding limit expressions, which
//! are implemented per order rather than numerically so the `a0 -> 0` corner
//! is never evaluated. Any nonzero feedthrough or failed Routh–Hurwitz test
//! yields an infinite norm, with the reason recorded.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lti::{modal_closed_loop, ControllerSpec, ModalDecomposition, RationalTF, StateSpace};

#[derive(Debug, Error)]
pub enum H2Error {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Why a squared H2 norm is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfiniteReason {
    NonzeroFeedthrough,
    Unstable,
}

/// A squared H2 norm: a finite nonnegative value or an infinity with its
/// reason.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum H2Result {
    Finite(f64),
    Infinite(InfiniteReason),
}

impl H2Result {
    pub fn is_finite(&self) -> bool {
        matches!(self, H2Result::Finite(_))
    }

    /// The value, with infinities collapsing to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            H2Result::Finite(v) => *v,
            H2Result::Infinite(_) => f64::INFINITY,
        }
    }

    pub fn expect_finite(&self, what: &str) -> f64 {
        match self {
            H2Result::Finite(v) => *v,
            H2Result::Infinite(r) => panic!("{what} is infinite ({r:?})"),
        }
    }
}

impl std::fmt::Display for H2Result {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            H2Result::Finite(v) => write!(f, "{v}"),
            H2Result::Infinite(_) => write!(f, "inf"),
        }
    }
}

/// Disturbance intensities for the proportional weighting scenario: power
/// fluctuations enter bus `i` weighted `kappa_p * sqrt(f_i)`, measurement
/// noise weighted `kappa_w / sqrt(f_i)`. A zero weight disables the channel.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseWeights {
    pub kappa_p: f64,
    pub kappa_w: f64,
}

impl NoiseWeights {
    pub fn none() -> Self {
        NoiseWeights {
            kappa_p: 0.0,
            kappa_w: 0.0,
        }
    }
}

/// Closed-form squared H2 norm of a quartic-embedded transfer function.
pub fn h2_closed_form(h: &RationalTF) -> H2Result {
    if h.b4 != 0.0 {
        return H2Result::Infinite(InfiniteReason::NonzeroFeedthrough);
    }
    if !h.is_stable() {
        return H2Result::Infinite(InfiniteReason::Unstable);
    }
    let [a0, a1, a2, a3] = h.a;
    let [b0, b1, b2, b3] = h.b;
    let value = match h.order() {
        0 => 0.0,
        1 => b3 * b3 / (2.0 * a3),
        2 => (b2 * b2 + a2 * b3 * b3) / (2.0 * a2 * a3),
        3 => {
            (a3 * b1 * b1 + a1 * b2 * b2 + a1 * a2 * b3 * b3 - 2.0 * a1 * b1 * b3)
                / (2.0 * a1 * (a2 * a3 - a1))
        }
        4 => {
            let z0 = a2 * a3 - a1;
            let z1 = a0 * a3;
            let z2 = a0 * a1;
            let z3 = a0 * a1 * a2 - a0 * a0 * a3;
            let z4 = -2.0 * a0 * (a1 * b1 * b3 + a3 * b0 * b2);
            (z0 * b0 * b0 + z1 * b1 * b1 + z2 * b2 * b2 + z3 * b3 * b3 + z4)
                / (2.0 * a0 * (a1 * a2 * a3 - a1 * a1 - a0 * a3 * a3))
        }
        _ => unreachable!(),
    };
    H2Result::Finite(value)
}

/// Numerical oracle: squared H2 norm of a state-space system from the
/// controllability gramian, `trace(C X C^T)` with `A X + X A^T = -B B^T`.
///
/// Instability is detected from eigenvalue real parts (threshold `-1e-12`);
/// the solve is residual-checked at 1e-8 relative.
pub fn h2_lyapunov_oracle(ss: &StateSpace) -> Result<H2Result, H2Error> {
    if ss.d.iter().any(|&v| v != 0.0) {
        return Ok(H2Result::Infinite(InfiniteReason::NonzeroFeedthrough));
    }
    let n = ss.a.nrows();
    if n == 0 {
        return Ok(H2Result::Finite(0.0));
    }
    let eigs = ss.a.complex_eigenvalues();
    if eigs.iter().any(|e| e.re > -1e-12) {
        return Ok(H2Result::Infinite(InfiniteReason::Unstable));
    }
    let q = -(&ss.b * ss.b.transpose());
    let x = solve_sylvester(&ss.a, &ss.a, &q)?;
    let value = (&ss.c * &x * ss.c.transpose()).trace();
    Ok(H2Result::Finite(value))
}

/// Cross inner product `\int_0^inf h1(t) h2(t) dt` of two stable, strictly
/// proper impulse responses, via the cross gramian
/// `A1 X + X A2^T = -B1 B2^T`, value `C1 X C2^T`.
pub fn cross_inner_product(h1: &RationalTF, h2: &RationalTF) -> Result<f64, H2Error> {
    for (name, h) in [("h1", h1), ("h2", h2)] {
        if h.b4 != 0.0 {
            return Err(H2Error::Precondition(format!("{name} has feedthrough")));
        }
        if !h.is_stable() {
            return Err(H2Error::Precondition(format!("{name} is not stable")));
        }
    }
    if h1.order() == 0 || h2.order() == 0 {
        return Ok(0.0);
    }
    let s1 = h1.realize();
    let s2 = h2.realize();
    let q = -(&s1.b * s2.b.transpose());
    let x = solve_sylvester(&s1.a, &s2.a, &q)?;
    Ok((&s1.c * &x * s2.c.transpose())[(0, 0)])
}

/// Solve `A1 X + X A2^T = Q` by dense Kronecker linearization. Intended for
/// the small systems this crate produces (tens of states).
fn solve_sylvester(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>, H2Error> {
    let n1 = a1.nrows();
    let n2 = a2.nrows();
    let i1 = DMatrix::<f64>::identity(n1, n1);
    let i2 = DMatrix::<f64>::identity(n2, n2);
    let m = i2.kronecker(a1) + a2.kronecker(&i1);
    let rhs = DVector::from_iterator(n1 * n2, q.iter().cloned());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| H2Error::Numerical("singular Sylvester operator".into()))?;
    let x = DMatrix::from_iterator(n1, n2, sol.iter().cloned());
    let residual = a1 * &x + &x * a2.transpose() - q;
    let scale = q.norm().max(a1.norm() * x.norm() + x.norm() * a2.norm()).max(1e-300);
    if residual.norm() / scale > 1e-8 {
        return Err(H2Error::Numerical(format!(
            "Sylvester residual {:.3e} above 1e-8 relative",
            residual.norm() / scale
        )));
    }
    Ok(x)
}

/// Weighted contribution of one mode to the frequency variance, with the
/// two channel norms kept for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ModeVariance {
    pub lambda: f64,
    pub gamma: f64,
    pub forward: H2Result,
    pub noise: H2Result,
    /// `gamma * (kappa_p^2 ||h_p||^2 + kappa_w^2 ||h_w||^2)`
    pub contribution: H2Result,
}

#[derive(Debug, Clone)]
pub struct FrequencyVariance {
    pub total: H2Result,
    pub per_mode: Vec<ModeVariance>,
}

/// Aggregate frequency variance under white power fluctuations and
/// measurement noise: the modal sum
/// `sum_k Gamma_kk (kappa_p^2 ||h_pk||^2 + kappa_w^2 ||h_wk||^2)`.
///
/// `g` is the representative generator (swing dynamics for the scenario
/// where governor deadbands keep turbines out of the picture). Any infinite
/// modal term makes the total infinite; a zero weight removes its channel
/// from the sum entirely.
pub fn frequency_variance(
    decomp: &ModalDecomposition,
    g: &RationalTF,
    c: &ControllerSpec,
    w: &NoiseWeights,
) -> Result<FrequencyVariance, crate::lti::LtiError> {
    let mut per_mode = Vec::with_capacity(decomp.n());
    let mut total = 0.0;
    let mut infinite: Option<InfiniteReason> = None;
    for k in 0..decomp.n() {
        let lambda = decomp.lambdas[k];
        let gamma = decomp.gamma[(k, k)];
        let (h_p, h_w) = modal_closed_loop(g, c, lambda)?;
        let forward = h2_closed_form(&h_p);
        let noise = h2_closed_form(&h_w);
        let mut mode_value = 0.0;
        let mut mode_inf: Option<InfiniteReason> = None;
        for (kappa, term) in [(w.kappa_p, forward), (w.kappa_w, noise)] {
            if kappa == 0.0 {
                continue;
            }
            match term {
                H2Result::Finite(v) => mode_value += kappa * kappa * v,
                H2Result::Infinite(r) => mode_inf = Some(r),
            }
        }
        let contribution = match mode_inf {
            Some(r) => {
                infinite = infinite.or(Some(r));
                H2Result::Infinite(r)
            }
            None => H2Result::Finite(gamma * mode_value),
        };
        if let H2Result::Finite(v) = contribution {
            total += v;
        }
        per_mode.push(ModeVariance {
            lambda,
            gamma,
            forward,
            noise,
            contribution,
        });
    }
    let total = match infinite {
        Some(r) => H2Result::Infinite(r),
        None => H2Result::Finite(total),
    };
    Ok(FrequencyVariance { total, per_mode })
}

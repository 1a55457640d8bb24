//! Transfer functions, per-mode closed loops and the scaled-Laplacian
//! eigenstructure.
//!
//! Under the proportionality assumption every bus is a scaled copy of a
//! representative machine, and the network closed loop block-diagonalizes
//! along the eigenmodes of the scaled Laplacian `F^{-1/2} L F^{-1/2}`. Each
//! mode `k` sees the scalar loop
//!
//! ```text
//! h_pk(s) = g(s) / (1 + g(s) (lambda_k / s - c(s)))
//! h_wk(s) = c(s) h_pk(s)
//! ```
//!
//! with `g` the representative generator and `c` the representative
//! inverter law. [`modal_closed_loop`] forms both in the quartic embedding;
//! [`modal_step_tf`] forms `h_pk(s)/s`, the step-response kernels entering
//! the synchronization cost.

mod poly;
mod statespace;
mod tf;

pub use poly::{Poly, PolyRatio};
pub use statespace::{assemble_full_state_space, inertia_weights, StateSpace};
pub use tf::{LtiError, RationalTF};

use nalgebra::{DMatrix, DVector};

use crate::netmodel::{LaplacianMatrix, RepresentativeParams};

/// Inverter control law with its gains. `r_r_inv` is the inverse droop
/// `1/r_r`; it fixes the dc gain (and therefore the steady-state behavior)
/// of all three laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerSpec {
    /// No inverter response.
    None,
    /// Proportional droop `-r_r_inv * w`.
    Droop { r_r_inv: f64 },
    /// Droop plus emulated inertia `-(m_v s + r_r_inv) * w`.
    VirtualInertia { m_v: f64, r_r_inv: f64 },
    /// First-order lead/lag `-(nu s + delta r_r_inv)/(s + delta) * w`.
    IDroop { nu: f64, delta: f64, r_r_inv: f64 },
}

impl ControllerSpec {
    /// Dc gain `c(0)`; `-r_r_inv` for every law that has one.
    pub fn dc_gain(&self) -> f64 {
        match *self {
            ControllerSpec::None => 0.0,
            ControllerSpec::Droop { r_r_inv }
            | ControllerSpec::VirtualInertia { r_r_inv, .. }
            | ControllerSpec::IDroop { r_r_inv, .. } => -r_r_inv,
        }
    }

    pub fn validate(&self) -> Result<(), LtiError> {
        let ok = match *self {
            ControllerSpec::None => true,
            ControllerSpec::Droop { r_r_inv } => r_r_inv > 0.0,
            ControllerSpec::VirtualInertia { m_v, r_r_inv } => m_v > 0.0 && r_r_inv > 0.0,
            ControllerSpec::IDroop { nu, delta, r_r_inv } => {
                nu > 0.0 && delta > 0.0 && r_r_inv > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(LtiError::Dimension(format!(
                "controller gains must be positive: {self:?}"
            )))
        }
    }

    /// Per-bus instantiation of a representative law for a bus of rating
    /// `f`: gains scale with the rating, the lead/lag corner `delta` does
    /// not.
    pub fn scaled(&self, f: f64) -> ControllerSpec {
        match *self {
            ControllerSpec::None => ControllerSpec::None,
            ControllerSpec::Droop { r_r_inv } => ControllerSpec::Droop {
                r_r_inv: f * r_r_inv,
            },
            ControllerSpec::VirtualInertia { m_v, r_r_inv } => ControllerSpec::VirtualInertia {
                m_v: f * m_v,
                r_r_inv: f * r_r_inv,
            },
            ControllerSpec::IDroop { nu, delta, r_r_inv } => ControllerSpec::IDroop {
                nu: f * nu,
                delta,
                r_r_inv: f * r_r_inv,
            },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControllerSpec::None => "none",
            ControllerSpec::Droop { .. } => "droop",
            ControllerSpec::VirtualInertia { .. } => "vi",
            ControllerSpec::IDroop { .. } => "idroop",
        }
    }
}

/// Representative generator dynamics.
///
/// With `turbine_on = false` this is the swing transfer function
/// `1/(m s + d)`; with the turbine loop,
/// `(tau s + 1)/(m tau s^2 + (m + d tau) s + d + 1/r_t)`.
pub fn generator_tf(rep: &RepresentativeParams, turbine_on: bool) -> RationalTF {
    let ratio = generator_ratio(rep, turbine_on);
    RationalTF::from_ratio(&ratio).expect("generator dynamics are proper")
}

fn generator_ratio(rep: &RepresentativeParams, turbine_on: bool) -> PolyRatio {
    if turbine_on {
        PolyRatio::new(
            Poly::new(&[1.0, rep.tau]),
            Poly::new(&[
                rep.d + rep.r_t_inv(),
                rep.m + rep.d * rep.tau,
                rep.m * rep.tau,
            ]),
        )
    } else {
        PolyRatio::new(Poly::constant(1.0), Poly::new(&[rep.d, rep.m]))
    }
}

/// Representative inverter transfer function as a polynomial ratio. The
/// virtual-inertia law is improper (a pure derivative term), which is why
/// this returns a [`PolyRatio`] instead of the quartic embedding: the
/// derivative only becomes a representable constant feedthrough after the
/// loop is closed.
pub fn controller_tf(c: &ControllerSpec) -> PolyRatio {
    match *c {
        ControllerSpec::None => PolyRatio::new(Poly::zero(), Poly::constant(1.0)),
        ControllerSpec::Droop { r_r_inv } => PolyRatio::constant(-r_r_inv),
        ControllerSpec::VirtualInertia { m_v, r_r_inv } => {
            PolyRatio::new(Poly::new(&[-r_r_inv, -m_v]), Poly::constant(1.0))
        }
        ControllerSpec::IDroop { nu, delta, r_r_inv } => PolyRatio::new(
            Poly::new(&[-delta * r_r_inv, -nu]),
            Poly::new(&[delta, 1.0]),
        ),
    }
}

/// Closed-loop pair `(h_pk, h_wk)` for eigenvalue `lambda_k >= 0`.
///
/// The zero mode shares a structural factor `s` between numerator and
/// denominator; it is cancelled exactly rather than embedded with an
/// ambiguous zero constant coefficient.
pub fn modal_closed_loop(
    g: &RationalTF,
    c: &ControllerSpec,
    lambda_k: f64,
) -> Result<(RationalTF, RationalTF), LtiError> {
    let (num_p, num_w, den) = modal_loop_polys(&g.to_ratio(), c, lambda_k)?;
    let h_p = RationalTF::from_ratio(&PolyRatio::new(num_p, den.clone()))?;
    let h_w = RationalTF::from_ratio(&PolyRatio::new(num_w, den))?;
    Ok((h_p, h_w))
}

/// Step-response kernel `h_u(s) = h_pk(s)/s` for a strictly positive mode,
/// with the representative turbine-on generator. The forward numerator
/// carries a factor `s` that cancels the division exactly.
pub fn modal_step_tf(
    g_turbine: &RationalTF,
    c: &ControllerSpec,
    lambda_k: f64,
) -> Result<RationalTF, LtiError> {
    if !(lambda_k > 0.0) {
        return Err(LtiError::DegenerateMode);
    }
    let g = g_turbine.to_ratio();
    let cr = controller_tf(c);
    let num = g.num.mul(&cr.den);
    let den = loop_denominator(&g, &cr, lambda_k);
    if den.degree(tf::FLUSH_TOL) < 1 {
        return Err(LtiError::DegenerateMode);
    }
    RationalTF::from_ratio(&PolyRatio::new(num, den))
}

fn loop_denominator(g: &PolyRatio, c: &PolyRatio, lambda_k: f64) -> Poly {
    let s = Poly::s();
    g.den
        .mul(&s)
        .mul(&c.den)
        .add(&g.num.mul(&c.den).scale(lambda_k))
        .sub(&g.num.mul(&s).mul(&c.num))
}

fn modal_loop_polys(
    g: &PolyRatio,
    c: &ControllerSpec,
    lambda_k: f64,
) -> Result<(Poly, Poly, Poly), LtiError> {
    let cr = controller_tf(c);
    let s = Poly::s();
    let mut num_p = g.num.mul(&s).mul(&cr.den);
    let mut num_w = g.num.mul(&s).mul(&cr.num);
    let mut den = loop_denominator(g, &cr, lambda_k);
    if lambda_k == 0.0 {
        num_p = num_p.shift_down();
        num_w = num_w.shift_down();
        den = den.shift_down();
    }
    if den.degree(tf::FLUSH_TOL) < 1 {
        return Err(LtiError::DegenerateMode);
    }
    Ok((num_p, num_w, den))
}

// ---------------------------------------------------------------------------
// Scaled-Laplacian eigenstructure
// ---------------------------------------------------------------------------

/// Eigenstructure of `L_F = F^{-1/2} L F^{-1/2}` together with the modal
/// weighting matrices entering the variance and synchronization-cost sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalDecomposition {
    /// Eigenvalues sorted non-decreasingly; the zero mode is snapped to 0.
    pub lambdas: DVector<f64>,
    /// Orthogonal eigenvectors, one per column. The first column is the
    /// exact rating-weighted aggregate direction `F^{1/2} 1 / sqrt(sum f)`.
    pub v: DMatrix<f64>,
    /// `Gamma = V^T F^-1 V`.
    pub gamma: DMatrix<f64>,
    /// Trailing (n-1)x(n-1) block of `Gamma` (the non-aggregate modes).
    pub gamma_tilde: DMatrix<f64>,
    /// Diagonal of F, kept for downstream projections.
    pub f: DVector<f64>,
}

impl ModalDecomposition {
    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// Projection of a bus-space step vector onto the non-aggregate modes:
    /// `V_perp^T F^{-1/2} u0`.
    pub fn project_step(&self, u0: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let scaled = DVector::from_fn(n, |i, _| u0[i] / self.f[i].sqrt());
        let full = self.v.transpose() * scaled;
        full.rows(1, n - 1).into_owned()
    }
}

/// Orthogonally diagonalize the scaled Laplacian.
///
/// Deterministic: eigenvalues ascend, the aggregate eigenvector is
/// constructed exactly, and every other column is sign-fixed so its
/// largest-magnitude entry is positive. Eigenvalues within `1e-9 * ||L_F||`
/// of zero snap to exactly zero so the zero mode takes its reduced form
/// downstream.
pub fn eigendecompose_scaled(lap: &LaplacianMatrix, f: &DVector<f64>) -> ModalDecomposition {
    let n = lap.n();
    assert_eq!(f.len(), n, "rating vector length must match Laplacian");
    let f_isqrt = DVector::from_fn(n, |i, _| 1.0 / f[i].sqrt());
    let mut lf = lap.matrix.clone();
    for i in 0..n {
        for j in 0..n {
            lf[(i, j)] *= f_isqrt[i] * f_isqrt[j];
        }
    }
    lf = (lf.clone() + lf.transpose()) * 0.5;

    let eig = lf.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let norm = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let snap = 1e-9 * norm.max(f64::MIN_POSITIVE);

    let mut lambdas = DVector::zeros(n);
    let mut v = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        let mut ev = eig.eigenvalues[src];
        if ev.abs() <= snap {
            ev = 0.0;
        }
        lambdas[k] = ev;
        v.set_column(k, &eig.eigenvectors.column(src));
    }

    // Exact aggregate eigenvector for the zero mode.
    let sum_f: f64 = f.iter().sum();
    let v1 = DVector::from_fn(n, |i, _| f[i].sqrt() / sum_f.sqrt());
    v.set_column(0, &v1);

    // Deterministic sign: largest-magnitude entry of each column positive.
    for k in 1..n {
        let col = v.column(k);
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            let neg = -col.into_owned();
            v.set_column(k, &neg);
        }
    }

    let f_inv = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 1.0 / f[i]));
    let gamma = v.transpose() * f_inv * &v;
    let gamma_tilde = gamma.view((1, 1), (n - 1, n - 1)).into_owned();
    ModalDecomposition {
        lambdas,
        v,
        gamma,
        gamma_tilde,
        f: f.clone(),
    }
}

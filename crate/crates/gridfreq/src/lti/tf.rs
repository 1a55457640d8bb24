//! Rational transfer functions in a monic quartic embedding.
//!
//! Every transfer function handled by the closed-form analysis is of order
//! four or lower, so a single canonical container covers them all:
//!
//! ```text
//!         b3 s^3 + b2 s^2 + b1 s + b0
//! h(s) = ----------------------------- + b4
//!        s^4 + a3 s^3 + a2 s^2 + a1 s + a0
//! ```
//!
//! A function of order `r < 4` occupies the upper coefficient slots with the
//! lower pairs `(a_k, b_k)` exactly zero; e.g. a first-order `k/(s+p)` has
//! only `a3 = p`, `b3 = k` set. This mirrors the limit process that reduces
//! the fourth-order H2 formula to the lower-order ones, and keeps the order
//! dispatch a simple scan over zeroed pairs.
//!
//! Stability is a queryable property ([`RationalTF::is_stable`]), not an
//! invariant: unstable functions are representable and must be, since the
//! variance analysis assigns them an infinite norm rather than an error.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use super::poly::{Poly, PolyRatio};
use super::statespace::StateSpace;

/// Relative threshold below which leading coefficients are flushed to zero,
/// so near-degenerate limits snap to the exact lower-order formula instead
/// of hitting the singular `a0 -> 0` corner of the quartic expression.
pub(crate) const FLUSH_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("closed-loop denominator degenerates below first order")]
    DegenerateMode,
    #[error("transfer function is improper beyond a constant feedthrough")]
    Improper,
    #[error("denominator degree {0} exceeds the quartic embedding")]
    DegreeTooHigh(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RationalTF {
    /// Denominator coefficients `[a0, a1, a2, a3]` (the quartic lead is 1).
    pub a: [f64; 4],
    /// Numerator coefficients `[b0, b1, b2, b3]`.
    pub b: [f64; 4],
    /// Constant feedthrough.
    pub b4: f64,
}

impl RationalTF {
    pub fn zero() -> Self {
        RationalTF {
            a: [0.0; 4],
            b: [0.0; 4],
            b4: 0.0,
        }
    }

    pub fn constant(k: f64) -> Self {
        RationalTF {
            a: [0.0; 4],
            b: [0.0; 4],
            b4: k,
        }
    }

    /// First-order `gain/(s + pole)`.
    pub fn first_order(gain: f64, pole: f64) -> Self {
        RationalTF {
            a: [0.0, 0.0, 0.0, pole],
            b: [0.0, 0.0, 0.0, gain],
            b4: 0.0,
        }
    }

    /// Normalize a polynomial ratio into the embedding. Fails for
    /// denominators above fourth order and for numerators more than one
    /// degree above the denominator (a constant feedthrough is accepted and
    /// split off as `b4`).
    pub fn from_ratio(ratio: &PolyRatio) -> Result<Self, LtiError> {
        let den_deg = ratio.den.degree(FLUSH_TOL);
        if ratio.den.is_zero() {
            return Err(LtiError::DegenerateMode);
        }
        if den_deg > 4 {
            return Err(LtiError::DegreeTooHigh(den_deg));
        }
        let num_deg = ratio.num.degree(FLUSH_TOL);
        if !ratio.num.is_zero() && num_deg > den_deg {
            return Err(LtiError::Improper);
        }

        let lead = ratio.den.coeff(den_deg);
        let den: Vec<f64> = (0..=den_deg).map(|k| ratio.den.coeff(k) / lead).collect();
        let mut num: Vec<f64> = (0..=den_deg).map(|k| ratio.num.coeff(k) / lead).collect();

        // Split off the constant feedthrough when numerator and denominator
        // degrees match.
        let b4 = if ratio.num.is_zero() { 0.0 } else { num[den_deg] };
        if b4 != 0.0 {
            for k in 0..=den_deg {
                num[k] -= b4 * den[k];
            }
        }

        let mut tf = RationalTF::zero();
        tf.b4 = b4;
        let shift = 4 - den_deg;
        for k in 0..den_deg {
            tf.a[k + shift] = den[k];
        }
        for k in 0..den_deg.min(num.len()) {
            tf.b[k + shift] = num[k];
        }
        tf.flush();
        Ok(tf)
    }

    fn flush(&mut self) {
        let a_scale = self.a.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let b_scale = self
            .b
            .iter()
            .chain(std::iter::once(&self.b4))
            .fold(0.0f64, |m, c| m.max(c.abs()));
        for c in &mut self.a {
            if c.abs() < FLUSH_TOL * a_scale {
                *c = 0.0;
            }
        }
        if b_scale > 0.0 {
            for c in &mut self.b {
                if c.abs() < FLUSH_TOL * b_scale {
                    *c = 0.0;
                }
            }
        }
    }

    /// Active order 0..=4, read off the zeroed lower coefficient pairs.
    pub fn order(&self) -> usize {
        for k in 0..4 {
            if self.a[k] != 0.0 || self.b[k] != 0.0 {
                return 4 - k;
            }
        }
        0
    }

    /// The active-order polynomial ratio, feedthrough folded back into the
    /// numerator. Denominator is monic.
    pub fn to_ratio(&self) -> PolyRatio {
        let r = self.order();
        let shift = 4 - r;
        let mut den = vec![0.0; r + 1];
        let mut num = vec![0.0; r + 1];
        den[r] = 1.0;
        for k in 0..r {
            den[k] = self.a[k + shift];
            num[k] = self.b[k + shift];
        }
        if self.b4 != 0.0 {
            for k in 0..=r {
                num[k] += self.b4 * den[k];
            }
        }
        PolyRatio::new(Poly(num), Poly(den))
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.to_ratio().eval(s)
    }

    pub fn dc_gain(&self) -> f64 {
        self.to_ratio().dc_gain()
    }

    /// Routh–Hurwitz test on the active-order denominator. Marginal cases
    /// (any test quantity within 1e-12 of zero relative to the coefficient
    /// scale) report unstable, matching the convention that non-Hurwitz
    /// systems carry infinite variance.
    pub fn is_stable(&self) -> bool {
        let r = self.order();
        let scale = self.a.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let tol = FLUSH_TOL * scale;
        let pos = |v: f64| v > tol;
        match r {
            0 => true,
            1 => pos(self.a[3]),
            2 => pos(self.a[2]) && pos(self.a[3]),
            3 => {
                let (a1, a2, a3) = (self.a[1], self.a[2], self.a[3]);
                pos(a1) && pos(a2) && pos(a3) && a2 * a3 - a1 > tol * scale.max(a2 * a3)
            }
            4 => {
                let (a0, a1, a2, a3) = (self.a[0], self.a[1], self.a[2], self.a[3]);
                let h2 = a2 * a3 - a1;
                let h3 = a1 * a2 * a3 - a1 * a1 - a0 * a3 * a3;
                pos(a0)
                    && pos(a1)
                    && pos(a2)
                    && pos(a3)
                    && h2 > tol * scale.max(a2 * a3)
                    && h3 > FLUSH_TOL * (a1 * a2 * a3).abs().max(scale)
            }
            _ => unreachable!(),
        }
    }

    /// Observable canonical realization of the active order. Zero-order
    /// functions realize as an empty state with `D = b4`.
    pub fn realize(&self) -> StateSpace {
        let r = self.order();
        let shift = 4 - r;
        let mut a = DMatrix::zeros(r, r);
        let mut b = DMatrix::zeros(r, 1);
        let mut c = DMatrix::zeros(1, r);
        for k in 0..r {
            if k + 1 < r {
                a[(k + 1, k)] = 1.0;
            }
            a[(k, r - 1)] = -self.a[k + shift];
            b[(k, 0)] = self.b[k + shift];
        }
        if r > 0 {
            c[(0, r - 1)] = 1.0;
        }
        let d = DMatrix::from_element(1, 1, self.b4);
        StateSpace {
            a,
            b,
            c,
            d,
            state_labels: (0..r).map(|k| format!("x{k}")).collect(),
        }
    }

    /// Unit-step response sampled on `times`, via exact discretization of
    /// the canonical realization. Requires uniform spacing.
    pub fn step_response(&self, times: &[f64]) -> DVector<f64> {
        let ss = self.realize();
        let n = ss.a.nrows();
        let mut out = DVector::zeros(times.len());
        if times.is_empty() {
            return out;
        }
        if n == 0 {
            for (i, _) in times.iter().enumerate() {
                out[i] = self.b4;
            }
            return out;
        }
        let dt = if times.len() > 1 {
            times[1] - times[0]
        } else {
            0.0
        };
        // Exact step update from the augmented exponential
        // exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]].
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&ss.a);
        aug.view_mut((0, n), (n, 1)).copy_from(&ss.b);
        let aug = (aug * dt).exp();
        let ad = aug.view((0, 0), (n, n)).into_owned();
        let bd = aug.view((0, n), (n, 1)).into_owned();
        let mut x = DVector::zeros(n);
        for i in 0..times.len() {
            out[i] = (&ss.c * &x)[(0, 0)] + self.b4;
            if i + 1 < times.len() {
                x = &ad * x + bd.column(0);
            }
        }
        out
    }
}

//! Dense low-degree polynomials and rational pairs used by the loop
//! algebra. Coefficients are stored ascending: `c[k]` multiplies `s^k`.

use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn new(coeffs: &[f64]) -> Self {
        Poly(coeffs.to_vec())
    }

    pub fn zero() -> Self {
        Poly(vec![0.0])
    }

    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    /// The polynomial `s`.
    pub fn s() -> Self {
        Poly(vec![0.0, 1.0])
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Degree after discarding leading coefficients below `rel_tol` of the
    /// largest coefficient magnitude. The zero polynomial reports degree 0.
    pub fn degree(&self, rel_tol: f64) -> usize {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0;
        }
        let mut deg = 0;
        for (k, &c) in self.0.iter().enumerate() {
            if c.abs() > rel_tol * scale {
                deg = k;
            }
        }
        deg
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly((0..n).map(|k| self.coeff(k) - other.coeff(k)).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * k).collect())
    }

    /// Exact division by `s`; the constant term must already be zero
    /// (callers divide out a structurally shared factor).
    pub fn shift_down(&self) -> Poly {
        debug_assert!(self.coeff(0) == 0.0, "division by s with nonzero constant");
        if self.0.len() <= 1 {
            return Poly::zero();
        }
        Poly(self.0[1..].to_vec())
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in self.0.iter().rev() {
            acc = acc * s + c;
        }
        acc
    }
}

/// Ratio of two polynomials. Unlike [`super::RationalTF`] this form admits
/// improper functions (numerator degree above denominator degree), which is
/// how the virtual-inertia control law has to be carried around before the
/// loop is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyRatio {
    pub num: Poly,
    pub den: Poly,
}

impl PolyRatio {
    pub fn new(num: Poly, den: Poly) -> Self {
        PolyRatio { num, den }
    }

    pub fn constant(c: f64) -> Self {
        PolyRatio {
            num: Poly::constant(c),
            den: Poly::constant(1.0),
        }
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        self.num.eval(s) / self.den.eval(s)
    }

    pub fn dc_gain(&self) -> f64 {
        let v = self.eval(Complex64::new(0.0, 0.0));
        v.re
    }
}

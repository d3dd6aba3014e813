//! Scalar abstraction for model right-hand sides.
//!
//! Every disease model is written once, generic over [`Real`]. Evaluating it
//! with `f64` gives the derivative; evaluating it with [`Dual`] additionally
//! carries exact first-order partials with respect to up to [`DUAL_WIDTH`]
//! seeded inputs (states followed by parameters).

use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
}

/// Maximum number of independent variables a [`Dual`] can track.
pub const DUAL_WIDTH: usize = 32;

/// Forward-mode dual number with a fixed-width gradient.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; DUAL_WIDTH],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual {
            v,
            d: [0.0; DUAL_WIDTH],
        }
    }

    /// A variable with unit partial in slot `slot`.
    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; DUAL_WIDTH];
        d[slot] = 1.0;
        Dual { v, d }
    }
}

impl Real for Dual {
    #[inline]
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, rhs: Dual) -> Dual {
        self.v += rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, rhs: Dual) -> Dual {
        self.v -= rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        let mut out = Dual::constant(self.v * rhs.v);
        for i in 0..DUAL_WIDTH {
            out.d[i] = self.d[i] * rhs.v + self.v * rhs.d[i];
        }
        out
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.v;
        let q = self.v * inv;
        let mut out = Dual::constant(q);
        for i in 0..DUAL_WIDTH {
            out.d[i] = (self.d[i] - q * rhs.d[i]) * inv;
        }
        out
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(mut self) -> Dual {
        self.v = -self.v;
        for a in self.d.iter_mut() {
            *a = -*a;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::variable(3.0, 0);
        let y = Dual::variable(2.0, 1);
        let f = x * y / (x + y);
        // f = xy/(x+y); df/dx = y^2/(x+y)^2, df/dy = x^2/(x+y)^2
        assert!((f.v - 1.2).abs() < 1e-15);
        assert!((f.d[0] - 4.0 / 25.0).abs() < 1e-15);
        assert!((f.d[1] - 9.0 / 25.0).abs() < 1e-15);
        assert!(f.d[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negation_and_difference() {
        let x = Dual::variable(1.5, 3);
        let f = -(x - Dual::cst(0.5)) * x;
        assert_eq!(f.v, -1.5);
        assert_eq!(f.d[3], -(2.0 * 1.5 - 0.5));
    }
}

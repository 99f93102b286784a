//! Forward-mode differentiation over the four predicted-box coordinates.
//!
//! A [`Jet`] carries a value and its partial derivatives with respect to
//! (cx, cy, w, h) of the predicted box. The box-geometry code is written once
//! against the [`Real`] trait and instantiated with plain `f64` for values
//! and with `Jet` for analytic gradients, so the two can never drift apart.
//!
//! Non-smooth primitives use fixed subgradient conventions: |·| has
//! derivative 0 at 0, min/max propagate nothing at exact ties, and clipping
//! has derivative 0 at its corners. All of these are measure-zero sets;
//! finite-difference checks sample away from them.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by the value and derivative paths.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn lit(v: f64) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
    /// Power with a constant exponent (exponents here are ≥ 1).
    fn powf_const(self, p: f64) -> Self;
    /// Clip to [0, 1]; constant (zero derivative) outside the open interval.
    fn clip01(self) -> Self;
}

impl Real for f64 {
    fn lit(v: f64) -> Self {
        v
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }

    fn min(self, other: Self) -> Self {
        f64::min(self, other)
    }

    fn max(self, other: Self) -> Self {
        f64::max(self, other)
    }

    fn powf_const(self, p: f64) -> Self {
        self.powf(p)
    }

    fn clip01(self) -> Self {
        self.clamp(0.0, 1.0)
    }
}

/// Value plus partial derivatives with respect to (cx, cy, w, h).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: [f64; 4],
}

impl Jet {
    pub const fn constant(v: f64) -> Self {
        Jet { v, d: [0.0; 4] }
    }

    /// The `idx`-th independent variable.
    pub fn variable(v: f64, idx: usize) -> Self {
        let mut d = [0.0; 4];
        d[idx] = 1.0;
        Jet { v, d }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            d: [
                self.d[0] + o.d[0],
                self.d[1] + o.d[1],
                self.d[2] + o.d[2],
                self.d[3] + o.d[3],
            ],
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet {
            v: self.v - o.v,
            d: [
                self.d[0] - o.d[0],
                self.d[1] - o.d[1],
                self.d[2] - o.d[2],
                self.d[3] - o.d[3],
            ],
        }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
                self.d[3] * o.v + self.v * o.d[3],
            ],
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        Jet {
            v,
            d: [
                (self.d[0] - v * o.d[0]) * inv,
                (self.d[1] - v * o.d[1]) * inv,
                (self.d[2] - v * o.d[2]) * inv,
                (self.d[3] - v * o.d[3]) * inv,
            ],
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet {
            v: -self.v,
            d: [-self.d[0], -self.d[1], -self.d[2], -self.d[3]],
        }
    }
}

fn chain(j: Jet, v: f64, dv: f64) -> Jet {
    Jet {
        v,
        d: [dv * j.d[0], dv * j.d[1], dv * j.d[2], dv * j.d[3]],
    }
}

impl Real for Jet {
    fn lit(v: f64) -> Self {
        Jet::constant(v)
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        chain(self, e, e)
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        if s == 0.0 {
            return Jet::constant(0.0);
        }
        chain(self, s, 0.5 / s)
    }

    fn abs(self) -> Self {
        if self.v > 0.0 {
            self
        } else if self.v < 0.0 {
            -self
        } else {
            Jet::constant(0.0)
        }
    }

    fn min(self, other: Self) -> Self {
        if self.v < other.v {
            self
        } else if other.v < self.v {
            other
        } else {
            Jet::constant(self.v)
        }
    }

    fn max(self, other: Self) -> Self {
        if self.v > other.v {
            self
        } else if other.v > self.v {
            other
        } else {
            Jet::constant(self.v)
        }
    }

    fn powf_const(self, p: f64) -> Self {
        let v = self.v.powf(p);
        // d/dx x^p = p·x^(p−1); at x = 0 with p > 1 the derivative is 0.
        let dv = if self.v == 0.0 && p > 1.0 {
            0.0
        } else {
            p * self.v.powf(p - 1.0)
        };
        chain(self, v, dv)
    }

    fn clip01(self) -> Self {
        if self.v > 0.0 && self.v < 1.0 {
            self
        } else {
            Jet::constant(self.v.clamp(0.0, 1.0))
        }
    }
}

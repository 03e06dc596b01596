//! Double-double arithmetic (about 32 significant digits) for reference sums.

use std::f64::consts::{FRAC_PI_2, LN_2, TAU};
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const PI_HALF: Dd = Dd {
    hi: FRAC_PI_2,
    lo: 6.123_233_995_736_766e-17,
};
const TWO_PI: Dd = Dd {
    hi: TAU,
    lo: 2.449_293_598_294_706_4e-16,
};
const LN2: Dd = Dd {
    hi: LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn norm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn sqr(self) -> Self {
        self * self
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let q = Dd::from(self.hi.sqrt());
        q + (self - q.sqr()) / (q * 2.0)
    }

    fn scale(self, f: f64) -> Self {
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn exp(self) -> Self {
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * k;
        // exp(r) = exp(r/1024)^1024 keeps the series short.
        let s = r.scale(1.0 / 1024.0);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for n in 1..20 {
            term = term * s / (n as f64);
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum.sqr();
        }
        sum.scale(2f64.powi(k as i32))
    }

    /// (sin x, cos x).
    pub fn sin_cos(self) -> (Self, Self) {
        let q = (self.hi / PI_HALF.hi).round();
        let r = self - PI_HALF * q;
        let r2 = r.sqr();
        let mut s_term = r;
        let mut s = r;
        let mut c_term = Dd::ONE;
        let mut c = Dd::ONE;
        for n in 1..30 {
            let n = n as f64;
            s_term = -(s_term * r2) / ((2.0 * n) * (2.0 * n + 1.0));
            c_term = -(c_term * r2) / ((2.0 * n - 1.0) * (2.0 * n));
            s = s + s_term;
            c = c + c_term;
        }
        match (q as i64).rem_euclid(4) {
            0 => (s, c),
            1 => (c, -s),
            2 => (-s, -c),
            _ => (-c, s),
        }
    }

    pub fn two_pi() -> Self {
        TWO_PI
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    fn mul(self, b: f64) -> Dd {
        self * Dd::from(b)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        Dd::norm(q1, q2) + Dd::from(q3)
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    fn div(self, b: f64) -> Dd {
        self / Dd::from(b)
    }
}

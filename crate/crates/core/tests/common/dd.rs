//! Double-double arithmetic (about 106 bits of mantissa), used as a
//! high-precision oracle for the selection formulas.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DD {
    pub hi: f64,
    pub lo: f64,
}

#[allow(clippy::excessive_precision)]
const LN2: DD = DD { hi: std::f64::consts::LN_2, lo: 2.319046813846299558e-17 };

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> DD {
    let s = a + b;
    DD { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DD {
    pub const ZERO: DD = DD { hi: 0.0, lo: 0.0 };
    pub const ONE: DD = DD { hi: 1.0, lo: 0.0 };

    pub fn from_u64(x: u64) -> DD {
        // Exact for any u64 split into two f64s.
        let hi = (x >> 32) as f64 * 4294967296.0;
        DD::from(hi) + DD::from((x & 0xFFFF_FFFF) as f64)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale(self, f: f64) -> DD {
        // `f` must be a power of two.
        DD { hi: self.hi * f, lo: self.lo * f }
    }

    pub fn sqrt(self) -> DD {
        if self.hi <= 0.0 {
            return DD::ZERO;
        }
        let y = self.hi.sqrt();
        let yy = DD::from(y);
        yy + DD::from((self - yy * yy).hi / (2.0 * y))
    }

    pub fn exp(self) -> DD {
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * DD::from(k)).scale(1.0 / 1024.0);
        // Taylor series on the reduced argument, then square back up.
        let mut term = DD::ONE;
        let mut sum = DD::ONE;
        for n in 1..30 {
            term = term * r / DD::from(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-40 {
                break;
            }
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale(2f64.powi(k as i32))
    }

    pub fn ln(self) -> DD {
        assert!(self.hi > 0.0, "ln of non-positive value");
        let mut y = DD::from(self.hi.ln());
        for _ in 0..3 {
            y = y + self * (-y).exp() - DD::ONE;
        }
        y
    }
}

impl From<f64> for DD {
    fn from(x: f64) -> DD {
        DD { hi: x, lo: 0.0 }
    }
}

impl Neg for DD {
    type Output = DD;
    fn neg(self) -> DD {
        DD { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DD {
    type Output = DD;
    fn add(self, o: DD) -> DD {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl Sub for DD {
    type Output = DD;
    fn sub(self, o: DD) -> DD {
        self + (-o)
    }
}

impl Mul for DD {
    type Output = DD;
    fn mul(self, o: DD) -> DD {
        let (p, e) = two_prod(self.hi, o.hi);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for DD {
    type Output = DD;
    fn div(self, o: DD) -> DD {
        let q1 = self.hi / o.hi;
        let r = self - o * DD::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * DD::from(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + DD::from(q3)
    }
}

pub fn softmax(qs: &[f64], temperature: f64) -> Vec<DD> {
    let t = DD::from(temperature);
    let exps: Vec<DD> = qs.iter().map(|&q| (DD::from(q) / t).exp()).collect();
    let z = exps.iter().fold(DD::ZERO, |a, &e| a + e);
    exps.into_iter().map(|e| e / z).collect()
}

pub fn puct(w: f64, m_s: u64, m_p: u64, prior: f64, c: f64) -> DD {
    let ms = DD::from_u64(m_s);
    let explore = (DD::from_u64(m_p).ln() / ms).sqrt();
    DD::from(w) / ms + DD::from(c) * DD::from(prior) * explore
}

#[allow(clippy::too_many_arguments)]
pub fn bg_puct(w: f64, d_sum: f64, m_s: u64, m_p: u64, prior: f64, rho: f64, d_hat: f64, kappa: f64, c: f64) -> DD {
    let ms = DD::from_u64(m_s);
    let bias = DD::from(kappa) * (DD::ONE - DD::from(rho)) * DD::from(d_sum) / DD::from(d_hat);
    let explore = (DD::from_u64(m_p).ln() / ms).sqrt();
    (DD::from(w) + bias) / ms + DD::from(rho) * DD::from(c) * DD::from(prior) * explore
}

pub fn corrected_q(q: f64, depth: u32, rho: f64, d_hat: f64, kappa: f64) -> DD {
    DD::from(q) + DD::from(kappa) * (DD::ONE - DD::from(rho)) * DD::from(depth as f64) / DD::from(d_hat)
}

pub fn generative(qs: &[f64], rho: f64, lambda: f64) -> DD {
    let n = DD::from(qs.len() as f64);
    let mean = qs.iter().fold(DD::ZERO, |a, &q| a + DD::from(q)) / n;
    let var = qs
        .iter()
        .map(|&q| {
            let d = DD::from(q) - mean;
            d * d
        })
        .fold(DD::ZERO, |a, x| a + x)
        / n;
    mean + DD::from(lambda) * DD::from(rho) * var
}

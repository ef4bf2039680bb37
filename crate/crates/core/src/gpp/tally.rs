//! Complex FP64 primitives that tally the instructions a GPU would issue.
//!
//! Host evaluation is plain IEEE arithmetic; the tally describes the modeled
//! device instruction mix. Decomposition per primitive, with contraction on
//! (off in parentheses):
//!
//! | primitive            | dadd  | dmul  | dfma  | ddiv | dother |
//! |----------------------|-------|-------|-------|------|--------|
//! | a + b                | 2     |       |       |      |        |
//! | x - b (real x)       | 1     |       |       |      |        |
//! | a * b, a * conj(b)   | (2)   | 2 (4) | 2 (0) |      |        |
//! | acc + a * b          | (4)   | (4)   | 4 (0) |      |        |
//! | s * a (real s)       |       | 2     |       |      |        |
//! | abs2(a)              | (1)   | 1 (2) | 1 (0) |      |        |
//! | abs(a)               | abs2  | abs2  | abs2  |      | 1      |
//! | sqrt(x), compare     |       |       |       |      | 1      |
//! | x / y (real)         |       |       |       | 1    |        |
//! | a / b                | abs2 + a * conj(b) + 2 ddiv             |
//! | rcp(b)               | abs2 + 1 ddiv + 2 dmul                  |

use num_complex::Complex64 as C64;

use crate::metrics::InstructionCounters;

#[derive(Clone, Debug, Default)]
pub struct Tally {
    pub c: InstructionCounters,
    pub contract: bool,
}

impl Tally {
    pub fn new(contract: bool) -> Self {
        Tally { c: InstructionCounters::default(), contract }
    }

    #[inline]
    pub fn add(&mut self, a: C64, b: C64) -> C64 {
        self.c.dadd += 2;
        C64::new(a.re + b.re, a.im + b.im)
    }

    #[inline]
    pub fn real_minus(&mut self, x: f64, b: C64) -> C64 {
        self.c.dadd += 1;
        C64::new(x - b.re, -b.im)
    }

    #[inline]
    fn mul_cost(&mut self) {
        if self.contract {
            self.c.dmul += 2;
            self.c.dfma += 2;
        } else {
            self.c.dmul += 4;
            self.c.dadd += 2;
        }
    }

    #[inline]
    pub fn mul(&mut self, a: C64, b: C64) -> C64 {
        self.mul_cost();
        C64::new(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)
    }

    #[inline]
    pub fn mul_conj(&mut self, a: C64, b: C64) -> C64 {
        self.mul_cost();
        C64::new(a.re * b.re + a.im * b.im, a.im * b.re - a.re * b.im)
    }

    #[inline]
    pub fn mul_acc(&mut self, acc: C64, a: C64, b: C64) -> C64 {
        if self.contract {
            self.c.dfma += 4;
        } else {
            self.c.dmul += 4;
            self.c.dadd += 4;
        }
        C64::new(acc.re + a.re * b.re - a.im * b.im, acc.im + a.re * b.im + a.im * b.re)
    }

    #[inline]
    pub fn scale(&mut self, s: f64, a: C64) -> C64 {
        self.c.dmul += 2;
        C64::new(s * a.re, s * a.im)
    }

    #[inline]
    pub fn abs2(&mut self, a: C64) -> f64 {
        if self.contract {
            self.c.dmul += 1;
            self.c.dfma += 1;
        } else {
            self.c.dmul += 2;
            self.c.dadd += 1;
        }
        a.re * a.re + a.im * a.im
    }

    #[inline]
    pub fn abs(&mut self, a: C64) -> f64 {
        let m2 = self.abs2(a);
        self.sqrt(m2)
    }

    #[inline]
    pub fn sqrt(&mut self, x: f64) -> f64 {
        self.c.dother += 1;
        x.sqrt()
    }

    #[inline]
    pub fn gt(&mut self, a: f64, b: f64) -> bool {
        self.c.dother += 1;
        a > b
    }

    #[inline]
    pub fn lt(&mut self, a: f64, b: f64) -> bool {
        self.c.dother += 1;
        a < b
    }

    #[inline]
    pub fn div_real(&mut self, x: f64, y: f64) -> f64 {
        self.c.ddiv += 1;
        x / y
    }

    /// Textbook complex division: a * conj(b) / |b|^2 with two real divides.
    #[inline]
    pub fn div(&mut self, a: C64, b: C64) -> C64 {
        let d = self.abs2(b);
        let n = self.mul_conj(a, b);
        self.c.ddiv += 2;
        C64::new(n.re / d, n.im / d)
    }

    /// conj(b) / |b|^2 through one reciprocal.
    #[inline]
    pub fn rcp(&mut self, b: C64) -> C64 {
        let d = self.abs2(b);
        self.c.ddiv += 1;
        let inv = 1.0 / d;
        self.c.dmul += 2;
        C64::new(b.re * inv, -b.im * inv)
    }
}

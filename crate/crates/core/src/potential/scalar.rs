//! Number types for forward-mode differentiation of parsed expressions.
//!
//! `f64` evaluates values, [`DualVec`] carries a full gradient, and
//! `Dual<DualVec>` seeded along one coordinate yields one column of the
//! Hessian per sweep.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum number of independent variables carried by a [`DualVec`].
pub const MAX_VARS: usize = 8;

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(c: f64) -> Self;
    /// The plain value, with all derivative parts dropped.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    /// True when every stored component is finite.
    fn all_finite(&self) -> bool;
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

/// Value together with a gradient of fixed capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualVec {
    pub v: f64,
    pub g: [f64; MAX_VARS],
}

impl DualVec {
    pub fn variable(v: f64, index: usize) -> Self {
        let mut g = [0.0; MAX_VARS];
        g[index] = 1.0;
        DualVec { v, g }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        let mut g = self.g;
        for gi in &mut g {
            *gi *= dv;
        }
        DualVec { v, g }
    }
}

impl Add for DualVec {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g.iter()) {
            *a += b;
        }
        DualVec { v: self.v + o.v, g }
    }
}

impl Sub for DualVec {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(o.g.iter()) {
            *a -= b;
        }
        DualVec { v: self.v - o.v, g }
    }
}

impl Mul for DualVec {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut g = [0.0; MAX_VARS];
        for i in 0..MAX_VARS {
            g[i] = self.g[i] * o.v + self.v * o.g[i];
        }
        DualVec { v: self.v * o.v, g }
    }
}

impl Div for DualVec {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut g = [0.0; MAX_VARS];
        for i in 0..MAX_VARS {
            g[i] = (self.g[i] - q * o.g[i]) * inv;
        }
        DualVec { v: q, g }
    }
}

impl Neg for DualVec {
    type Output = Self;
    fn neg(self) -> Self {
        let mut g = self.g;
        for a in &mut g {
            *a = -*a;
        }
        DualVec { v: -self.v, g }
    }
}

impl Scalar for DualVec {
    fn constant(c: f64) -> Self {
        DualVec { v: c, g: [0.0; MAX_VARS] }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        let d = n as f64 * self.v.powi(n - 1);
        self.chain(self.v.powi(n), d)
    }
    fn all_finite(&self) -> bool {
        self.v.is_finite() && self.g.iter().all(|x| x.is_finite())
    }
}

/// First-order dual number over another scalar type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn constant(c: f64) -> Self {
        Dual::new(T::constant(c), T::constant(0.0))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (T::constant(2.0) * s))
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(1.0);
        }
        let d = T::constant(n as f64) * self.re.powi(n - 1);
        Dual::new(self.re.powi(n), self.eps * d)
    }
    fn all_finite(&self) -> bool {
        self.re.all_finite() && self.eps.all_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_on_gradients() {
        let x = DualVec::variable(2.0, 0);
        let y = DualVec::variable(3.0, 1);
        let p = x * y * x;
        assert_eq!(p.v, 12.0);
        assert_eq!(p.g[0], 12.0);
        assert_eq!(p.g[1], 4.0);
    }

    #[test]
    fn nested_dual_gives_second_derivative() {
        // d^2/dx^2 of x^3 at 2 is 12.
        let x = Dual::new(DualVec::variable(2.0, 0), DualVec::constant(1.0));
        let c = x.powi(3);
        assert_eq!(c.eps.g[0], 12.0);
        assert_eq!(c.re.v, 8.0);
    }

    #[test]
    fn transcendental_chain_rule() {
        let x = DualVec::variable(0.7, 0);
        let f = (x.sin() * x.exp()).sqrt();
        let h = 1e-6;
        let fd = ((0.7f64 + h).sin() * (0.7f64 + h).exp()).sqrt()
            - ((0.7f64 - h).sin() * (0.7f64 - h).exp()).sqrt();
        assert!((f.g[0] - fd / (2.0 * h)).abs() < 1e-8);
    }
}

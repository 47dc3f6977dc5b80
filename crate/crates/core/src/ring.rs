//! Minimal commutative-ring abstraction shared by scalars, jets and truncated series.
//!
//! Map evaluation code (Hénon factors, local germs, unfolding germs) is written once
//! against [`Ring`] and then runs on plain complex numbers, forward-mode duals
//! (for Jacobians) or truncated power series (for germ expansions).

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

pub type C64 = Complex64;

pub trait Ring:
    Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn scale(&self, c: C64) -> Self;
    fn add_scalar(&self, c: C64) -> Self;
    /// A constant of the same shape (degree, radius, ...) as `self`.
    fn constant_like(&self, c: C64) -> Self;

    fn zero_like(&self) -> Self {
        self.constant_like(C64::new(0.0, 0.0))
    }

    fn powi(&self, n: usize) -> Self {
        let mut acc = self.constant_like(C64::new(1.0, 0.0));
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }
}

impl Ring for C64 {
    fn scale(&self, c: C64) -> Self {
        self * c
    }
    fn add_scalar(&self, c: C64) -> Self {
        self + c
    }
    fn constant_like(&self, c: C64) -> Self {
        c
    }
}

/// Evaluates `Σ coeffs[k] x^k` by Horner's rule in any ring.
pub fn horner<R: Ring>(coeffs: &[C64], x: &R) -> R {
    let mut acc = x.constant_like(C64::new(0.0, 0.0));
    for c in coeffs.iter().rev() {
        acc = (acc * x.clone()).add_scalar(*c);
    }
    acc
}

/// Forward-mode dual number carrying `N` complex partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: C64,
    pub grad: [C64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(value: C64) -> Self {
        Self { value, grad: [C64::new(0.0, 0.0); N] }
    }

    /// The `k`-th independent variable at `value`.
    pub fn variable(value: C64, k: usize) -> Self {
        let mut grad = [C64::new(0.0, 0.0); N];
        grad[k] = C64::new(1.0, 0.0);
        Self { value, grad }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, og) in grad.iter_mut().zip(o.grad) {
            *g += og;
        }
        Self { value: self.value + o.value, grad }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, og) in grad.iter_mut().zip(o.grad) {
            *g -= og;
        }
        Self { value: self.value - o.value, grad }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut grad = [C64::new(0.0, 0.0); N];
        for (k, g) in grad.iter_mut().enumerate() {
            *g = self.grad[k] * o.value + self.value * o.grad[k];
        }
        Self { value: self.value * o.value, grad }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g = -*g;
        }
        Self { value: -self.value, grad }
    }
}

impl<const N: usize> Ring for Dual<N> {
    fn scale(&self, c: C64) -> Self {
        let mut grad = self.grad;
        for g in grad.iter_mut() {
            *g *= c;
        }
        Self { value: self.value * c, grad }
    }
    fn add_scalar(&self, c: C64) -> Self {
        Self { value: self.value + c, grad: self.grad }
    }
    fn constant_like(&self, c: C64) -> Self {
        Self::constant(c)
    }
}

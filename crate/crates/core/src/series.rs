//! Truncated complex power series in one and two variables.
//!
//! A series carries coefficients through degree `D`, a validity radius (one per
//! variable) and a tail bound `τ`: a sup estimate of the discarded remainder on the
//! (bi)disk. Binary operations truncate to the smaller input degree and fold every
//! dropped monomial into the tail.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ring::{Ring, C64};
use crate::tol::relative_tol;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("degree underflow: cannot differentiate a degree-0 series")]
    DegreeUnderflow,
    #[error("domain violation: inner reach {reach:.3e} exceeds outer radius {radius:.3e}")]
    DomainViolation { reach: f64, radius: f64 },
    #[error("non-invertible germ: |f'(0)| = {0:.3e} is below tolerance")]
    NonInvertible(f64),
    #[error("series does not vanish at the origin: |f(0)| = {0:.3e}")]
    NonzeroConstant(f64),
    #[error("small divisor {value:.3e} at monomial ({i}, {j})")]
    SmallDivisor { i: usize, j: usize, value: f64 },
    #[error("series is not divisible by x^{a} y^{b} (offending coefficient {value:.3e})")]
    NotDivisible { a: usize, b: usize, value: f64 },
    #[error("invalid series: {0}")]
    Invalid(String),
}

fn check_coeffs(c: &[C64]) -> Result<(), SeriesError> {
    if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SeriesError::Invalid("non-finite coefficient".into()));
    }
    Ok(())
}

fn check_radius(r: f64) -> Result<(), SeriesError> {
    if !(r.is_finite() && r > 0.0) {
        return Err(SeriesError::Invalid(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

fn check_tail(t: f64) -> Result<(), SeriesError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(SeriesError::Invalid(format!("tail must be non-negative, got {t}")));
    }
    Ok(())
}

/// Coefficients of `outer ∘ inner` through degree `deg`, ignoring tails.
pub(crate) fn compose_coeffs(outer: &[C64], inner: &[C64], deg: usize) -> Vec<C64> {
    let mut acc = vec![ZERO; deg + 1];
    let mut tmp = vec![ZERO; deg + 1];
    for oc in outer.iter().rev() {
        tmp.iter_mut().for_each(|z| *z = ZERO);
        for (i, a) in acc.iter().enumerate() {
            if *a == ZERO {
                continue;
            }
            for (j, b) in inner.iter().enumerate().take(deg + 1 - i) {
                tmp[i + j] += a * b;
            }
        }
        std::mem::swap(&mut acc, &mut tmp);
        acc[0] += oc;
    }
    acc
}

/// Product of bounds where a zero factor wins over an infinite one.
fn tprod(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

fn abs_sum(c: &[C64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, z| acc * r + z.norm())
}

// ---------------------------------------------------------------------------
// One variable

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesJson", into = "SeriesJson")]
pub struct TruncatedSeries1 {
    coeffs: Vec<C64>,
    radius: f64,
    tail: f64,
}

impl TruncatedSeries1 {
    pub fn new(coeffs: Vec<C64>, radius: f64, tail: f64) -> Result<Self, SeriesError> {
        if coeffs.is_empty() {
            return Err(SeriesError::Invalid("empty coefficient list".into()));
        }
        check_coeffs(&coeffs)?;
        check_radius(radius)?;
        check_tail(tail)?;
        Ok(Self { coeffs, radius, tail })
    }

    /// Exact polynomial on the unit disk. Panics on an empty or non-finite list.
    pub fn polynomial(coeffs: Vec<C64>) -> Self {
        Self::new(coeffs, 1.0, 0.0).expect("valid polynomial coefficients")
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::polynomial(coeffs.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn zero(degree: usize) -> Self {
        Self::polynomial(vec![ZERO; degree + 1])
    }

    pub fn constant(c: C64, degree: usize) -> Self {
        let mut s = Self::zero(degree);
        s.coeffs[0] = c;
        s
    }

    /// The identity series `t`; requires `degree ≥ 1`.
    pub fn variable(degree: usize) -> Self {
        Self::monomial(1, ONE, degree)
    }

    pub fn monomial(k: usize, c: C64, degree: usize) -> Self {
        let mut s = Self::zero(degree);
        if k <= degree {
            s.coeffs[k] = c;
        }
        s
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }
    pub fn coeff(&self, k: usize) -> C64 {
        self.coeffs.get(k).copied().unwrap_or(ZERO)
    }
    pub fn set_coeff(&mut self, k: usize, c: C64) {
        if k <= self.degree() {
            self.coeffs[k] = c;
        }
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        assert!(radius.is_finite() && radius > 0.0);
        self.radius = radius;
        self
    }

    pub fn with_tail(mut self, tail: f64) -> Self {
        assert!(tail.is_finite() && tail >= 0.0);
        self.tail = tail;
        self
    }

    /// max |c_k|, the scale against which relative tolerances are measured.
    pub fn magnitude(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_negligible(&self, c: C64) -> bool {
        c.norm() <= relative_tol() * self.magnitude()
    }

    /// Index of the first coefficient above the relative tolerance.
    pub fn valuation(&self) -> Option<usize> {
        let cut = relative_tol() * self.magnitude();
        self.coeffs.iter().position(|z| z.norm() > cut)
    }

    pub fn eval(&self, t: C64) -> C64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, c| acc * t + c)
    }

    pub fn eval_ring<R: Ring>(&self, t: &R) -> R {
        crate::ring::horner(&self.coeffs, t)
    }

    /// Σ |c_k| r^k + τ on the validity disk.
    pub fn sup_bound(&self) -> f64 {
        abs_sum(&self.coeffs, self.radius) + self.tail
    }

    pub fn truncate(&self, degree: usize) -> Self {
        if degree >= self.degree() {
            return self.clone();
        }
        let dropped = abs_sum(&self.coeffs[degree + 1..], self.radius) * self.radius.powi(degree as i32 + 1);
        Self {
            coeffs: self.coeffs[..=degree].to_vec(),
            radius: self.radius,
            tail: self.tail + dropped,
        }
    }

    /// Pads with zero coefficients (the represented function is unchanged).
    pub fn extend(&self, degree: usize) -> Self {
        let mut s = self.clone();
        if degree > s.degree() {
            s.coeffs.resize(degree + 1, ZERO);
        }
        s
    }

    /// `t ↦ f(c t)`, valid on the disk of radius `r / |c|`.
    pub fn scale_arg(&self, c: C64) -> Self {
        let mut p = ONE;
        let coeffs = self
            .coeffs
            .iter()
            .map(|z| {
                let v = z * p;
                p *= c;
                v
            })
            .collect();
        let radius = if c.norm() > 0.0 { self.radius / c.norm() } else { self.radius };
        Self { coeffs, radius, tail: self.tail }
    }

    fn binary_add(&self, o: &Self, sign: f64) -> Self {
        let d = self.degree().min(o.degree());
        let r = self.radius.min(o.radius);
        let coeffs = (0..=d).map(|k| self.coeffs[k] + o.coeffs[k] * sign).collect();
        let dropped = |c: &[C64]| {
            if c.len() > d + 1 {
                abs_sum(&c[d + 1..], r) * r.powi(d as i32 + 1)
            } else {
                0.0
            }
        };
        Self {
            coeffs,
            radius: r,
            tail: self.tail + o.tail + dropped(&self.coeffs) + dropped(&o.coeffs),
        }
    }

    fn binary_mul(&self, o: &Self) -> Self {
        let d = self.degree().min(o.degree());
        let r = self.radius.min(o.radius);
        let mut coeffs = vec![ZERO; d + 1];
        let mut dropped = 0.0;
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                let p = a * b;
                if i + j <= d {
                    coeffs[i + j] += p;
                } else {
                    dropped += p.norm() * r.powi((i + j) as i32);
                }
            }
        }
        let sa = abs_sum(&self.coeffs, r);
        let sb = abs_sum(&o.coeffs, r);
        Self {
            coeffs,
            radius: r,
            tail: dropped + tprod(sa, o.tail) + tprod(sb, self.tail) + tprod(self.tail, o.tail),
        }
    }

    /// Term-wise derivative. A nonzero tail is controlled by a Cauchy estimate on
    /// the half-radius disk.
    pub fn derive(&self) -> Result<Self, SeriesError> {
        if self.degree() == 0 {
            return Err(SeriesError::DegreeUnderflow);
        }
        let coeffs = self.coeffs.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect();
        let (radius, tail) = if self.tail > 0.0 {
            (self.radius / 2.0, 2.0 * self.tail / self.radius)
        } else {
            (self.radius, 0.0)
        };
        Ok(Self { coeffs, radius, tail })
    }

    /// `outer ∘ inner`, exact through `min(D_outer, D_inner)`.
    pub fn compose(&self, inner: &Self) -> Result<Self, SeriesError> {
        let d = self.degree().min(inner.degree());
        let c0 = inner.coeffs[0].norm();
        let reach = |rho: f64| c0 + abs_sum(&inner.coeffs[1..=d], rho) * rho + inner.tail;
        if c0 + inner.tail >= self.radius {
            return Err(SeriesError::DomainViolation { reach: c0 + inner.tail, radius: self.radius });
        }
        let mut radius = inner.radius;
        if reach(radius) > self.radius {
            let (mut lo, mut hi) = (0.0, radius);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if reach(mid) <= self.radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            radius = lo;
            if radius <= 0.0 {
                return Err(SeriesError::DomainViolation { reach: reach(inner.radius), radius: self.radius });
            }
        }
        let full = compose_coeffs(&self.coeffs, &inner.coeffs[..=d], 2 * d);
        let dropped = abs_sum(&full[d + 1..], radius) * radius.powi(d as i32 + 1);
        let lipschitz: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c.norm() * self.radius.powi(k as i32 - 1))
            .sum();
        Ok(Self {
            coeffs: full[..=d].to_vec(),
            radius,
            tail: self.tail + lipschitz * inner.tail + dropped,
        })
    }

    /// Compositional inverse `g` with `f(g(t)) = t` through the degree.
    pub fn reversion(&self) -> Result<Self, SeriesError> {
        let scale = self.magnitude().max(f64::MIN_POSITIVE);
        let tol = relative_tol() * scale;
        if self.coeffs[0].norm() > tol {
            return Err(SeriesError::NonzeroConstant(self.coeffs[0].norm()));
        }
        let f1 = self.coeff(1);
        if self.degree() == 0 || f1.norm() <= tol {
            return Err(SeriesError::NonInvertible(f1.norm()));
        }
        let d = self.degree();
        let mut f = self.coeffs.clone();
        f[0] = ZERO;
        let mut g = vec![ZERO; d + 1];
        g[1] = f1.inv();
        for n in 2..=d {
            let c = compose_coeffs(&f, &g[..n], n)[n];
            g[n] = -c / f1;
        }
        let cap = self.radius * f1.norm();
        let (mut lo, mut hi) = (0.0, cap);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if abs_sum(&g, mid) <= self.radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let radius = if lo > 0.0 { lo } else { cap * 1e-3 };
        let tail = g[d].norm() * radius.powi(d as i32) + 2.0 * self.tail / f1.norm();
        Ok(Self { coeffs: g, radius, tail })
    }

    /// Multiplicative inverse; requires a nonzero constant term.
    pub fn recip(&self) -> Result<Self, SeriesError> {
        let a0 = self.coeffs[0];
        if a0.norm() <= relative_tol() * self.magnitude() {
            return Err(SeriesError::NonInvertible(a0.norm()));
        }
        let d = self.degree();
        let mut b = vec![ZERO; d + 1];
        b[0] = a0.inv();
        for n in 1..=d {
            let mut acc = ZERO;
            for k in 1..=n {
                acc += self.coeffs[k] * b[n - k];
            }
            b[n] = -acc / a0;
        }
        let tail = if self.tail > 0.0 { self.tail / (a0.norm() * a0.norm()) * 2.0 } else { 0.0 };
        Ok(Self { coeffs: b, radius: self.radius, tail })
    }
}

// ---------------------------------------------------------------------------
// Two variables

/// Offset of row `i` in the triangular table of total degree `d`.
fn row_offset(i: usize, d: usize) -> usize {
    i * (d + 1) - i * i.saturating_sub(1) / 2
}

fn tri_len(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesJson", into = "SeriesJson")]
pub struct TruncatedSeries2 {
    degree: usize,
    coeffs: Vec<C64>,
    radii: [f64; 2],
    tail: f64,
}

impl TruncatedSeries2 {
    /// `coeffs` in row-major triangular order: for i in 0..=D, for j in 0..=D−i.
    pub fn new(degree: usize, coeffs: Vec<C64>, radii: [f64; 2], tail: f64) -> Result<Self, SeriesError> {
        if coeffs.len() != tri_len(degree) {
            return Err(SeriesError::Invalid(format!(
                "expected {} coefficients for degree {degree}, got {}",
                tri_len(degree),
                coeffs.len()
            )));
        }
        check_coeffs(&coeffs)?;
        check_radius(radii[0])?;
        check_radius(radii[1])?;
        check_tail(tail)?;
        Ok(Self { degree, coeffs, radii, tail })
    }

    pub fn zero(degree: usize) -> Self {
        Self { degree, coeffs: vec![ZERO; tri_len(degree)], radii: [1.0, 1.0], tail: 0.0 }
    }

    pub fn constant(c: C64, degree: usize) -> Self {
        let mut s = Self::zero(degree);
        s.coeffs[0] = c;
        s
    }

    pub fn var_x(degree: usize) -> Self {
        Self::monomial(1, 0, ONE, degree)
    }

    pub fn var_y(degree: usize) -> Self {
        Self::monomial(0, 1, ONE, degree)
    }

    pub fn monomial(i: usize, j: usize, c: C64, degree: usize) -> Self {
        let mut s = Self::zero(degree);
        s.set_coeff(i, j, c);
        s
    }

    /// Sum of `c x^i y^j` terms; terms above the degree are ignored.
    pub fn from_terms(degree: usize, terms: &[(usize, usize, C64)]) -> Self {
        let mut s = Self::zero(degree);
        for &(i, j, c) in terms {
            if i + j <= degree {
                let v = s.coeff(i, j) + c;
                s.set_coeff(i, j, v);
            }
        }
        s
    }

    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn radii(&self) -> [f64; 2] {
        self.radii
    }
    pub fn tail(&self) -> f64 {
        self.tail
    }
    pub fn raw_coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn with_radii(mut self, radii: [f64; 2]) -> Self {
        assert!(radii.iter().all(|r| r.is_finite() && *r > 0.0));
        self.radii = radii;
        self
    }

    pub fn with_tail(mut self, tail: f64) -> Self {
        assert!(tail.is_finite() && tail >= 0.0);
        self.tail = tail;
        self
    }

    fn index(&self, i: usize, j: usize) -> usize {
        row_offset(i, self.degree) + j
    }

    pub fn coeff(&self, i: usize, j: usize) -> C64 {
        if i + j > self.degree {
            ZERO
        } else {
            self.coeffs[self.index(i, j)]
        }
    }

    pub fn set_coeff(&mut self, i: usize, j: usize, c: C64) {
        if i + j <= self.degree {
            let k = self.index(i, j);
            self.coeffs[k] = c;
        }
    }

    /// All (i, j, c_ij) in storage order.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        let d = self.degree;
        (0..=d).flat_map(move |i| (0..=d - i).map(move |j| (i, j, self.coeff(i, j))))
    }

    pub fn magnitude(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_negligible(&self, c: C64) -> bool {
        c.norm() <= relative_tol() * self.magnitude()
    }

    /// Largest coefficient modulus among monomials of total degree `< d`.
    pub fn max_below_degree(&self, d: usize) -> f64 {
        self.terms().filter(|(i, j, _)| i + j < d).map(|(_, _, c)| c.norm()).fold(0.0, f64::max)
    }

    /// Smallest total degree carrying a coefficient with modulus above `abs_tol`.
    pub fn min_total_degree(&self, abs_tol: f64) -> Option<usize> {
        self.terms().filter(|(_, _, c)| c.norm() > abs_tol).map(|(i, j, _)| i + j).min()
    }

    pub fn eval(&self, x: C64, y: C64) -> C64 {
        let d = self.degree;
        let mut acc = ZERO;
        for i in (0..=d).rev() {
            let row = &self.coeffs[row_offset(i, d)..row_offset(i, d) + d - i + 1];
            let inner = row.iter().rev().fold(ZERO, |a, c| a * y + c);
            acc = acc * x + inner;
        }
        acc
    }

    /// Substitutes ring elements for both variables.
    pub fn eval_ring<R: Ring>(&self, x: &R, y: &R) -> R {
        let d = self.degree;
        let mut ypow = Vec::with_capacity(d + 1);
        ypow.push(y.constant_like(ONE));
        for k in 1..=d {
            let next = ypow[k - 1].clone() * y.clone();
            ypow.push(next);
        }
        let mut acc = x.zero_like();
        for i in (0..=d).rev() {
            let mut inner = x.zero_like();
            for j in 0..=d - i {
                let c = self.coeff(i, j);
                if c != ZERO {
                    inner = inner + ypow[j].scale(c);
                }
            }
            acc = acc * x.clone() + inner;
        }
        acc
    }

    pub fn sup_bound(&self) -> f64 {
        self.terms()
            .map(|(i, j, c)| c.norm() * self.radii[0].powi(i as i32) * self.radii[1].powi(j as i32))
            .sum::<f64>()
            + self.tail
    }

    pub fn truncate(&self, degree: usize) -> Self {
        if degree >= self.degree {
            return self.clone();
        }
        let mut out = Self { degree, coeffs: vec![ZERO; tri_len(degree)], radii: self.radii, tail: self.tail };
        for (i, j, c) in self.terms() {
            if i + j <= degree {
                out.set_coeff(i, j, c);
            } else {
                out.tail += c.norm() * self.radii[0].powi(i as i32) * self.radii[1].powi(j as i32);
            }
        }
        out
    }

    pub fn extend(&self, degree: usize) -> Self {
        if degree <= self.degree {
            return self.clone();
        }
        let mut out = Self { degree, coeffs: vec![ZERO; tri_len(degree)], radii: self.radii, tail: self.tail };
        for (i, j, c) in self.terms() {
            out.set_coeff(i, j, c);
        }
        out
    }

    fn binary_add(&self, o: &Self, sign: f64) -> Self {
        let d = self.degree.min(o.degree);
        let radii = [self.radii[0].min(o.radii[0]), self.radii[1].min(o.radii[1])];
        let a = self.clone().with_radii(radii).truncate(d);
        let b = o.clone().with_radii(radii).truncate(d);
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y * sign).collect();
        Self { degree: d, coeffs, radii, tail: a.tail + b.tail }
    }

    fn binary_mul(&self, o: &Self) -> Self {
        let d = self.degree.min(o.degree);
        let radii = [self.radii[0].min(o.radii[0]), self.radii[1].min(o.radii[1])];
        let mut out = Self { degree: d, coeffs: vec![ZERO; tri_len(d)], radii, tail: 0.0 };
        let mut dropped = 0.0;
        let at: Vec<_> = self.terms().filter(|t| t.2 != ZERO).collect();
        let bt: Vec<_> = o.terms().filter(|t| t.2 != ZERO).collect();
        for &(i1, j1, a) in &at {
            for &(i2, j2, b) in &bt {
                let (i, j) = (i1 + i2, j1 + j2);
                if i + j <= d {
                    let k = out.index(i, j);
                    out.coeffs[k] += a * b;
                } else {
                    dropped += (a * b).norm() * radii[0].powi(i as i32) * radii[1].powi(j as i32);
                }
            }
        }
        let sa = self.clone().with_radii(radii).with_tail(0.0).sup_bound();
        let sb = o.clone().with_radii(radii).with_tail(0.0).sup_bound();
        out.tail = dropped + tprod(sa, o.tail) + tprod(sb, self.tail) + tprod(self.tail, o.tail);
        out
    }

    fn derive_var(&self, var: usize) -> Result<Self, SeriesError> {
        if self.degree == 0 {
            return Err(SeriesError::DegreeUnderflow);
        }
        let d = self.degree - 1;
        let mut out = Self { degree: d, coeffs: vec![ZERO; tri_len(d)], radii: self.radii, tail: 0.0 };
        for (i, j, c) in self.terms() {
            match var {
                0 if i >= 1 => out.set_coeff(i - 1, j, c * i as f64),
                1 if j >= 1 => out.set_coeff(i, j - 1, c * j as f64),
                _ => {}
            }
        }
        if self.tail > 0.0 {
            out.radii[var] = self.radii[var] / 2.0;
            out.tail = 2.0 * self.tail / self.radii[var];
        }
        Ok(out)
    }

    pub fn derive_x(&self) -> Result<Self, SeriesError> {
        self.derive_var(0)
    }

    pub fn derive_y(&self) -> Result<Self, SeriesError> {
        self.derive_var(1)
    }

    /// `y ↦ f(0, y)`.
    pub fn restrict_x0(&self) -> TruncatedSeries1 {
        let coeffs = (0..=self.degree).map(|j| self.coeff(0, j)).collect();
        TruncatedSeries1 { coeffs, radius: self.radii[1], tail: self.tail }
    }

    /// `x ↦ f(x, 0)`.
    pub fn restrict_y0(&self) -> TruncatedSeries1 {
        let coeffs = (0..=self.degree).map(|i| self.coeff(i, 0)).collect();
        TruncatedSeries1 { coeffs, radius: self.radii[0], tail: self.tail }
    }

    /// `t ↦ f(x0, t)` as a one-variable series in the second variable.
    pub fn slice_x(&self, x0: C64) -> TruncatedSeries1 {
        let d = self.degree;
        let mut coeffs = vec![ZERO; d + 1];
        for (i, j, c) in self.terms() {
            coeffs[j] += c * x0.powu(i as u32);
        }
        TruncatedSeries1 { coeffs, radius: self.radii[1], tail: self.tail }
    }

    /// Re-centres at `(x0, y0)`: returns `(X, Y) ↦ f(x0 + X, y0 + Y)`.
    pub fn shift(&self, x0: C64, y0: C64) -> Result<Self, SeriesError> {
        let radii = [self.radii[0] - x0.norm(), self.radii[1] - y0.norm()];
        if radii[0] <= 0.0 || radii[1] <= 0.0 {
            return Err(SeriesError::DomainViolation {
                reach: x0.norm().max(y0.norm()),
                radius: self.radii[0].min(self.radii[1]),
            });
        }
        let d = self.degree;
        let big = [1e300, 1e300];
        let x = Self::var_x(d).with_radii(big).add_scalar(x0);
        let y = Self::var_y(d).with_radii(big).add_scalar(y0);
        let mut out = self.clone().with_tail(0.0).with_radii(big).eval_ring(&x, &y);
        out.radii = radii;
        out.tail = self.tail;
        Ok(out)
    }

    /// Exact division by `x^a y^b`; fails if a lower monomial is above tolerance.
    pub fn div_monomial(&self, a: usize, b: usize) -> Result<Self, SeriesError> {
        if a + b > self.degree {
            return Err(SeriesError::DegreeUnderflow);
        }
        let cut = relative_tol() * self.magnitude();
        for (i, j, c) in self.terms() {
            if (i < a || j < b) && c.norm() > cut {
                return Err(SeriesError::NotDivisible { a, b, value: c.norm() });
            }
        }
        let d = self.degree - a - b;
        let mut out = Self { degree: d, coeffs: vec![ZERO; tri_len(d)], radii: self.radii, tail: 0.0 };
        for (i, j, c) in self.terms() {
            if i >= a && j >= b {
                out.set_coeff(i - a, j - b, c);
            }
        }
        out.tail = self.tail / (self.radii[0].powi(a as i32) * self.radii[1].powi(b as i32));
        Ok(out)
    }

    /// Multiplication by `x^a y^b`, truncated at the current degree.
    pub fn mul_monomial(&self, a: usize, b: usize) -> Self {
        let mut out = Self::zero(self.degree).with_radii(self.radii);
        let mut dropped = 0.0;
        for (i, j, c) in self.terms() {
            if i + j + a + b <= self.degree {
                out.set_coeff(i + a, j + b, c);
            } else {
                dropped += c.norm() * self.radii[0].powi((i + a) as i32) * self.radii[1].powi((j + b) as i32);
            }
        }
        out.tail = self.tail * self.radii[0].powi(a as i32) * self.radii[1].powi(b as i32) + dropped;
        out
    }

    /// Keeps only the monomials accepted by `keep`.
    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool) -> Self {
        let mut out = self.clone();
        for (i, j, _) in self.terms() {
            if !keep(i, j) {
                out.set_coeff(i, j, ZERO);
            }
        }
        out
    }
}

/// Divides each monomial of `rhs` by `factor(i, j)`.
///
/// Monomials whose coefficient is below the relative tolerance are dropped. A
/// remaining monomial with `|factor| < floor` is reported as a small divisor.
pub fn solve_homological(
    rhs: &TruncatedSeries2,
    factor: impl Fn(usize, usize) -> C64,
    floor: f64,
) -> Result<TruncatedSeries2, SeriesError> {
    let cut = relative_tol() * rhs.magnitude();
    let mut out = TruncatedSeries2::zero(rhs.degree()).with_radii(rhs.radii());
    let mut min_div = f64::INFINITY;
    for (i, j, c) in rhs.terms() {
        if c.norm() <= cut || c == ZERO {
            continue;
        }
        let e = factor(i, j);
        if e.norm() < floor {
            return Err(SeriesError::SmallDivisor { i, j, value: e.norm() });
        }
        min_div = min_div.min(e.norm());
        out.set_coeff(i, j, c / e);
    }
    if rhs.tail() > 0.0 {
        out.tail = rhs.tail() / min_div.min(1.0).max(floor);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Operator plumbing

macro_rules! forward_ops {
    ($t:ty) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, o: $t) -> $t {
                self.binary_add(&o, 1.0)
            }
        }
        impl<'a> Add<&'a $t> for &'a $t {
            type Output = $t;
            fn add(self, o: &$t) -> $t {
                self.binary_add(o, 1.0)
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, o: $t) -> $t {
                self.binary_add(&o, -1.0)
            }
        }
        impl<'a> Sub<&'a $t> for &'a $t {
            type Output = $t;
            fn sub(self, o: &$t) -> $t {
                self.binary_add(o, -1.0)
            }
        }
        impl Mul for $t {
            type Output = $t;
            fn mul(self, o: $t) -> $t {
                self.binary_mul(&o)
            }
        }
        impl<'a> Mul<&'a $t> for &'a $t {
            type Output = $t;
            fn mul(self, o: &$t) -> $t {
                self.binary_mul(o)
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(mut self) -> $t {
                self.coeffs.iter_mut().for_each(|c| *c = -*c);
                self
            }
        }
        impl Ring for $t {
            fn scale(&self, c: C64) -> Self {
                let mut s = self.clone();
                s.coeffs.iter_mut().for_each(|z| *z *= c);
                s.tail *= c.norm();
                s
            }
            fn add_scalar(&self, c: C64) -> Self {
                let mut s = self.clone();
                s.coeffs[0] += c;
                s
            }
            fn constant_like(&self, c: C64) -> Self {
                let mut s = self.clone();
                s.coeffs.iter_mut().for_each(|z| *z = ZERO);
                s.coeffs[0] = c;
                s.tail = 0.0;
                s
            }
        }
    };
}

forward_ops!(TruncatedSeries1);
forward_ops!(TruncatedSeries2);

// ---------------------------------------------------------------------------
// JSON interchange

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesJson {
    pub vars: u8,
    pub degree: usize,
    pub radius: Vec<f64>,
    pub tail: f64,
    pub coeffs: Vec<[f64; 2]>,
}

fn pack(c: &[C64]) -> Vec<[f64; 2]> {
    c.iter().map(|z| [z.re, z.im]).collect()
}

fn unpack(c: &[[f64; 2]]) -> Vec<C64> {
    c.iter().map(|p| C64::new(p[0], p[1])).collect()
}

impl From<TruncatedSeries1> for SeriesJson {
    fn from(s: TruncatedSeries1) -> Self {
        SeriesJson { vars: 1, degree: s.degree(), radius: vec![s.radius], tail: s.tail, coeffs: pack(&s.coeffs) }
    }
}

impl From<TruncatedSeries2> for SeriesJson {
    fn from(s: TruncatedSeries2) -> Self {
        SeriesJson { vars: 2, degree: s.degree, radius: s.radii.to_vec(), tail: s.tail, coeffs: pack(&s.coeffs) }
    }
}

impl TryFrom<SeriesJson> for TruncatedSeries1 {
    type Error = SeriesError;
    fn try_from(j: SeriesJson) -> Result<Self, SeriesError> {
        if j.vars != 1 {
            return Err(SeriesError::Invalid(format!("expected vars = 1, got {}", j.vars)));
        }
        if j.coeffs.len() != j.degree + 1 {
            return Err(SeriesError::Invalid(format!(
                "degree {} needs {} coefficients, got {}",
                j.degree,
                j.degree + 1,
                j.coeffs.len()
            )));
        }
        let r = match j.radius.as_slice() {
            [] => 1.0,
            [r] => *r,
            _ => return Err(SeriesError::Invalid("one-variable series takes one radius".into())),
        };
        Self::new(unpack(&j.coeffs), r, j.tail)
    }
}

impl TryFrom<SeriesJson> for TruncatedSeries2 {
    type Error = SeriesError;
    fn try_from(j: SeriesJson) -> Result<Self, SeriesError> {
        if j.vars != 2 {
            return Err(SeriesError::Invalid(format!("expected vars = 2, got {}", j.vars)));
        }
        let radii = match j.radius.as_slice() {
            [] => [1.0, 1.0],
            [r] => [*r, *r],
            [a, b] => [*a, *b],
            _ => return Err(SeriesError::Invalid("two-variable series takes at most two radii".into())),
        };
        Self::new(j.degree, unpack(&j.coeffs), radii, j.tail)
    }
}

/// A series of either arity, as read from an interchange file.
#[derive(Clone, Debug, PartialEq)]
pub enum AnySeries {
    One(TruncatedSeries1),
    Two(TruncatedSeries2),
}

impl AnySeries {
    pub fn from_json_str(s: &str) -> Result<Self, SeriesError> {
        let j: SeriesJson = serde_json::from_str(s).map_err(|e| SeriesError::Invalid(e.to_string()))?;
        match j.vars {
            1 => Ok(AnySeries::One(j.try_into()?)),
            2 => Ok(AnySeries::Two(j.try_into()?)),
            v => Err(SeriesError::Invalid(format!("vars must be 1 or 2, got {v}"))),
        }
    }

    pub fn to_json_string(&self) -> String {
        let j: SeriesJson = match self {
            AnySeries::One(s) => s.clone().into(),
            AnySeries::Two(s) => s.clone().into(),
        };
        serde_json::to_string(&j).expect("series JSON is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() <= tol)
    }

    #[test]
    fn product_of_conjugate_factors() {
        let a = TruncatedSeries1::from_real(&[1.0, 1.0, 0.0]);
        let b = TruncatedSeries1::from_real(&[1.0, -1.0, 0.0]);
        let p = a * b;
        assert_eq!(p.degree(), 2);
        assert_eq!(p.coeffs(), &[c(1.0), c(0.0), c(-1.0)]);
        assert_eq!(p.tail(), 0.0);
    }

    #[test]
    fn derivative_of_cube() {
        let t3 = TruncatedSeries1::monomial(3, ONE, 3);
        let d = t3.derive().unwrap();
        assert_eq!(d.degree(), 2);
        assert_eq!(d.coeffs(), &[c(0.0), c(0.0), c(3.0)]);
        assert_eq!(TruncatedSeries1::constant(ONE, 0).derive(), Err(SeriesError::DegreeUnderflow));
    }

    #[test]
    fn two_variable_cancellation() {
        let a = TruncatedSeries2::from_terms(2, &[(0, 2, ONE), (1, 0, ONE)]);
        let b = TruncatedSeries2::from_terms(2, &[(1, 0, -ONE)]);
        let s = a + b;
        assert_eq!(s, TruncatedSeries2::monomial(0, 2, ONE, 2));
    }

    #[test]
    fn compose_examples() {
        let sq = TruncatedSeries1::monomial(2, ONE, 4);
        let two_t = TruncatedSeries1::monomial(1, c(2.0), 4);
        let r = sq.compose(&two_t).unwrap();
        assert!(close(r.coeffs(), &[c(0.0), c(0.0), c(4.0), c(0.0), c(0.0)], 0.0));

        let outer = TruncatedSeries1::from_real(&[0.0, 1.0, 1.0]);
        let r = outer.compose(&TruncatedSeries1::zero(2)).unwrap();
        assert!(r.coeffs().iter().all(|z| *z == ZERO));
    }

    #[test]
    fn exponential_composed_with_negation() {
        let mut fact = 1.0;
        let mut e = Vec::new();
        for k in 0..=8 {
            if k > 0 {
                fact *= k as f64;
            }
            e.push(1.0 / fact);
        }
        let exp = TruncatedSeries1::from_real(&e);
        let neg = TruncatedSeries1::monomial(1, -ONE, 8);
        let r = exp.compose(&neg).unwrap();
        // independent oracle: a_k = -a_{k-1}/k
        let mut a = 1.0;
        for k in 0..=8 {
            if k > 0 {
                a = -a / k as f64;
            }
            assert!((r.coeff(k) - c(a)).norm() < 1e-15, "k = {k}");
        }
    }

    #[test]
    fn compose_domain_violation() {
        let outer = TruncatedSeries1::from_real(&[0.0, 1.0]);
        let inner = TruncatedSeries1::from_real(&[1.5, 1.0]);
        assert!(matches!(outer.compose(&inner), Err(SeriesError::DomainViolation { .. })));
    }

    #[test]
    fn reversion_examples() {
        let g = TruncatedSeries1::from_real(&[0.0, 2.0]).reversion().unwrap();
        assert!(close(g.coeffs(), &[c(0.0), c(0.5)], 1e-15));

        let g = TruncatedSeries1::from_real(&[0.0, 1.0, 1.0, 0.0, 0.0]).reversion().unwrap();
        assert!(close(g.coeffs(), &[c(0.0), c(1.0), c(-1.0), c(2.0), c(-5.0)], 1e-13));

        let err = TruncatedSeries1::from_real(&[0.0, 0.0, 1.0]).reversion();
        assert!(matches!(err, Err(SeriesError::NonInvertible(_))));
    }

    #[test]
    fn homological_examples() {
        let xy = TruncatedSeries2::monomial(1, 1, ONE, 3);
        let w = solve_homological(&xy, |_, _| c(2.0), 1e-12).unwrap();
        assert_eq!(w, TruncatedSeries2::monomial(1, 1, c(0.5), 3));

        let zero = TruncatedSeries2::zero(3);
        assert_eq!(solve_homological(&zero, |_, _| ZERO, 1e-12).unwrap(), zero);

        let u = c(2.0);
        let x2 = TruncatedSeries2::monomial(2, 0, ONE, 3);
        let w = solve_homological(&x2, |i, j| u.powu(i as u32) * c(0.5).powu(j as u32) - u, 1e-12).unwrap();
        assert_eq!(w.coeff(2, 0), c(0.5));

        let err = solve_homological(&xy, |_, _| c(1e-14), 1e-12);
        assert_eq!(err, Err(SeriesError::SmallDivisor { i: 1, j: 1, value: 1e-14 }));
    }

    #[test]
    fn triangular_layout_is_row_major() {
        let mut s = TruncatedSeries2::zero(2);
        s.set_coeff(0, 2, c(3.0));
        s.set_coeff(1, 0, c(4.0));
        s.set_coeff(2, 0, c(6.0));
        assert_eq!(s.raw_coeffs()[2], c(3.0));
        assert_eq!(s.raw_coeffs()[3], c(4.0));
        assert_eq!(s.raw_coeffs()[5], c(6.0));
    }

    #[test]
    fn shift_recentres_polynomial() {
        let f = TruncatedSeries2::from_terms(3, &[(2, 0, ONE), (0, 1, c(-1.0)), (1, 2, c(0.5))]);
        let (x0, y0) = (C64::new(0.1, 0.05), C64::new(-0.2, 0.0));
        let g = f.shift(x0, y0).unwrap();
        let (x, y) = (C64::new(0.03, -0.01), C64::new(0.02, 0.04));
        assert!((g.eval(x, y) - f.eval(x0 + x, y0 + y)).norm() < 1e-15);
    }

    #[test]
    fn div_monomial_checks_divisibility() {
        let f = TruncatedSeries2::from_terms(4, &[(1, 1, c(2.0)), (2, 1, c(3.0))]);
        let q = f.div_monomial(1, 1).unwrap();
        assert_eq!(q.degree(), 2);
        assert_eq!(q.coeff(0, 0), c(2.0));
        assert_eq!(q.coeff(1, 0), c(3.0));
        assert!(matches!(f.div_monomial(0, 2), Err(SeriesError::NotDivisible { .. })));
    }

    #[test]
    fn json_round_trip() {
        let f = TruncatedSeries2::from_terms(3, &[(2, 0, ONE), (0, 1, C64::new(-1.0, 0.25))]).with_tail(1e-9);
        let s = serde_json::to_string(&f).unwrap();
        let back: TruncatedSeries2 = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        match AnySeries::from_json_str(&s).unwrap() {
            AnySeries::Two(g) => assert_eq!(g, f),
            AnySeries::One(_) => panic!("wrong arity"),
        }
        let bad = r#"{"vars":1,"degree":2,"radius":[1.0],"tail":0.0,"coeffs":[[1,0]]}"#;
        assert!(AnySeries::from_json_str(bad).is_err());
    }

    #[test]
    fn truncation_moves_mass_into_tail() {
        let f = TruncatedSeries1::from_real(&[1.0, 0.0, 0.5, 0.25]).with_radius(0.5);
        let g = f.truncate(1);
        assert!((g.tail() - (0.5 * 0.25 + 0.25 * 0.125)).abs() < 1e-15);
    }
}

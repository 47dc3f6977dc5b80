//! Generalized Hénon maps `h_{P,a}(z, w) = (a w + P(z), z)`, their compositions,
//! polynomial families and local germs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat2;
use crate::param::ParamPoly;
use crate::ring::{horner, Dual, Ring, C64};
use crate::series::{SeriesError, TruncatedSeries2};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Working radius of germs produced by [`localize`].
pub const LOCAL_RADIUS: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HenonError {
    #[error("invalid Hénon factor: {0}")]
    InvalidFactor(String),
    #[error("map has a zero Jacobian factor and is not invertible")]
    ZeroJacobian,
    #[error("parameter component {index} = {value} lies outside the declared box")]
    OutsideBox { index: usize, value: C64 },
    #[error("expected {expected} parameters, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("point is not periodic of period {period}: residual {residual:.3e}")]
    NotFixed { period: usize, residual: f64 },
    #[error("frame matrix is singular")]
    SingularFrame,
    #[error("germ does not fix the origin: |f(0)| = {0:.3e}")]
    NotGerm(f64),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// A map of the plane written once over any [`Ring`].
pub trait PlaneMap {
    fn eval<R: Ring>(&self, x: &R, y: &R) -> (R, R);

    fn apply(&self, p: [C64; 2]) -> [C64; 2] {
        let (a, b) = self.eval(&p[0], &p[1]);
        [a, b]
    }

    fn iterate(&self, p: [C64; 2], n: usize) -> [C64; 2] {
        (0..n).fold(p, |q, _| self.apply(q))
    }

    /// Derivative by forward-mode duals.
    fn derivative(&self, p: [C64; 2]) -> Mat2 {
        let x = Dual::<2>::variable(p[0], 0);
        let y = Dual::<2>::variable(p[1], 1);
        let (a, b) = self.eval(&x, &y);
        Mat2::new(a.grad[0], a.grad[1], b.grad[0], b.grad[1])
    }

    /// Value and derivative of `f^n` at `p`.
    fn iterate_with_derivative(&self, p: [C64; 2], n: usize) -> ([C64; 2], Mat2) {
        let mut x = Dual::<2>::variable(p[0], 0);
        let mut y = Dual::<2>::variable(p[1], 1);
        for _ in 0..n {
            let (a, b) = self.eval(&x, &y);
            x = a;
            y = b;
        }
        ([x.value, y.value], Mat2::new(x.grad[0], x.grad[1], y.grad[0], y.grad[1]))
    }
}

/// `f^n` as a map in its own right.
#[derive(Clone, Copy, Debug)]
pub struct Power<'a, M> {
    pub map: &'a M,
    pub n: usize,
}

impl<M: PlaneMap> PlaneMap for Power<'_, M> {
    fn eval<R: Ring>(&self, x: &R, y: &R) -> (R, R) {
        let (mut a, mut b) = (x.clone(), y.clone());
        for _ in 0..self.n {
            let (p, q) = self.map.eval(&a, &b);
            a = p;
            b = q;
        }
        (a, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HenonFactor {
    /// Coefficients of P in ascending powers.
    p: Vec<C64>,
    a: C64,
}

impl HenonFactor {
    /// `a = 0` is accepted (evaluation only); saddle operations reject such maps.
    pub fn new(mut p: Vec<C64>, a: C64) -> Result<Self, HenonError> {
        while p.len() > 1 && p.last() == Some(&ZERO) {
            p.pop();
        }
        if p.len() < 3 {
            return Err(HenonError::InvalidFactor(format!("deg P must be at least 2, got {}", p.len() - 1)));
        }
        if p.iter().chain(std::iter::once(&a)).any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(HenonError::InvalidFactor("non-finite coefficient".into()));
        }
        Ok(Self { p, a })
    }

    /// `P(z) = z² + c`.
    pub fn quadratic(a: C64, c: C64) -> Self {
        Self { p: vec![c, ZERO, ONE], a }
    }

    pub fn poly(&self) -> &[C64] {
        &self.p
    }
    pub fn a(&self) -> C64 {
        self.a
    }
    pub fn degree(&self) -> usize {
        self.p.len() - 1
    }

    pub fn eval<R: Ring>(&self, z: &R, w: &R) -> (R, R) {
        (w.scale(self.a) + horner(&self.p, z), z.clone())
    }

    pub fn inverse_eval<R: Ring>(&self, z: &R, w: &R) -> Result<(R, R), HenonError> {
        if self.a == ZERO {
            return Err(HenonError::ZeroJacobian);
        }
        let back = (z.clone() - horner(&self.p, w)).scale(self.a.inv());
        Ok((w.clone(), back))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// `h_1 ∘ h_2 ∘ … ∘ h_k`; the last factor acts first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialAutomorphism {
    factors: Vec<HenonFactor>,
}

impl PolynomialAutomorphism {
    pub fn new(factors: Vec<HenonFactor>) -> Result<Self, HenonError> {
        if factors.is_empty() {
            return Err(HenonError::InvalidFactor("empty factor list".into()));
        }
        Ok(Self { factors })
    }

    /// `f_{a,c}(z, w) = (z² + c + a w, z)`.
    pub fn quadratic(a: C64, c: C64) -> Self {
        Self { factors: vec![HenonFactor::quadratic(a, c)] }
    }

    pub fn quadratic_real(a: f64, c: f64) -> Self {
        Self::quadratic(C64::new(a, 0.0), C64::new(c, 0.0))
    }

    pub fn factors(&self) -> &[HenonFactor] {
        &self.factors
    }

    pub fn dynamical_degree(&self) -> usize {
        self.factors.iter().map(|f| f.degree()).product()
    }

    /// The constant Jacobian determinant Π(−a_i).
    pub fn jacobian(&self) -> C64 {
        self.factors.iter().map(|f| -f.a).product()
    }

    pub fn is_invertible(&self) -> bool {
        self.factors.iter().all(|f| f.a != ZERO)
    }

    pub fn inverse_eval<R: Ring>(&self, x: &R, y: &R) -> Result<(R, R), HenonError> {
        let (mut a, mut b) = (x.clone(), y.clone());
        for f in &self.factors {
            let (p, q) = f.inverse_eval(&a, &b)?;
            a = p;
            b = q;
        }
        Ok((a, b))
    }

    pub fn apply_dir(&self, p: [C64; 2], dir: Direction) -> Result<[C64; 2], HenonError> {
        match dir {
            Direction::Forward => Ok(self.apply(p)),
            Direction::Inverse => {
                let (a, b) = self.inverse_eval(&p[0], &p[1])?;
                Ok([a, b])
            }
        }
    }

    pub fn inverse(&self, p: [C64; 2]) -> Result<[C64; 2], HenonError> {
        self.apply_dir(p, Direction::Inverse)
    }
}

impl PlaneMap for PolynomialAutomorphism {
    fn eval<R: Ring>(&self, x: &R, y: &R) -> (R, R) {
        let (mut a, mut b) = (x.clone(), y.clone());
        for f in self.factors.iter().rev() {
            let (p, q) = f.eval(&a, &b);
            a = p;
            b = q;
        }
        (a, b)
    }
}

/// A holomorphic germ fixing the origin, as a pair of two-variable series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalGerm {
    pub f1: TruncatedSeries2,
    pub f2: TruncatedSeries2,
}

impl LocalGerm {
    pub fn new(f1: TruncatedSeries2, f2: TruncatedSeries2) -> Result<Self, HenonError> {
        let c = f1.coeff(0, 0).norm().max(f2.coeff(0, 0).norm());
        let scale = f1.magnitude().max(f2.magnitude()).max(1.0);
        if c > 1e-10 * scale {
            return Err(HenonError::NotGerm(c));
        }
        let d = f1.degree().min(f2.degree());
        Ok(Self { f1: f1.truncate(d), f2: f2.truncate(d) })
    }

    /// Builds `(Σ c x^i y^j, Σ c x^i y^j)` from term lists.
    pub fn from_terms(
        degree: usize,
        t1: &[(usize, usize, C64)],
        t2: &[(usize, usize, C64)],
    ) -> Result<Self, HenonError> {
        Self::new(TruncatedSeries2::from_terms(degree, t1), TruncatedSeries2::from_terms(degree, t2))
    }

    pub fn from_real_terms(
        degree: usize,
        t1: &[(usize, usize, f64)],
        t2: &[(usize, usize, f64)],
    ) -> Result<Self, HenonError> {
        let c = |t: &[(usize, usize, f64)]| t.iter().map(|&(i, j, v)| (i, j, C64::new(v, 0.0))).collect::<Vec<_>>();
        Self::from_terms(degree, &c(t1), &c(t2))
    }

    pub fn linear(u: C64, s: C64, degree: usize) -> Self {
        Self {
            f1: TruncatedSeries2::monomial(1, 0, u, degree),
            f2: TruncatedSeries2::monomial(0, 1, s, degree),
        }
    }

    pub fn identity(degree: usize) -> Self {
        Self::linear(ONE, ONE, degree)
    }

    pub fn degree(&self) -> usize {
        self.f1.degree().min(self.f2.degree())
    }

    pub fn with_radii(self, radii: [f64; 2]) -> Self {
        Self { f1: self.f1.with_radii(radii), f2: self.f2.with_radii(radii) }
    }

    pub fn linear_part(&self) -> Mat2 {
        Mat2::new(self.f1.coeff(1, 0), self.f1.coeff(0, 1), self.f2.coeff(1, 0), self.f2.coeff(0, 1))
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &LocalGerm) -> LocalGerm {
        let (a, b) = self.eval(&inner.f1, &inner.f2);
        LocalGerm { f1: a, f2: b }
    }

    pub fn sub(&self, o: &LocalGerm) -> LocalGerm {
        LocalGerm { f1: &self.f1 - &o.f1, f2: &self.f2 - &o.f2 }
    }

    /// Largest coefficient modulus of either component.
    pub fn magnitude(&self) -> f64 {
        self.f1.magnitude().max(self.f2.magnitude())
    }

    /// Compositional inverse through the truncation degree (Picard iteration on
    /// `G = L⁻¹(id − N∘G)` where `F = L + N`).
    pub fn invert(&self) -> Result<LocalGerm, HenonError> {
        let l = self.linear_part();
        let li = l.try_inverse().ok_or(HenonError::SingularFrame)?;
        let d = self.degree();
        let radii = self.f1.radii();
        let nonlin = LocalGerm {
            f1: self.f1.filter(|i, j| i + j >= 2),
            f2: self.f2.filter(|i, j| i + j >= 2),
        };
        let x = TruncatedSeries2::var_x(d).with_radii(radii);
        let y = TruncatedSeries2::var_y(d).with_radii(radii);
        let mut g = LocalGerm {
            f1: x.scale(li[(0, 0)]) + y.scale(li[(0, 1)]),
            f2: x.scale(li[(1, 0)]) + y.scale(li[(1, 1)]),
        };
        for _ in 1..d {
            let n = nonlin.compose(&g);
            let r1 = &x - &n.f1;
            let r2 = &y - &n.f2;
            g = LocalGerm {
                f1: r1.scale(li[(0, 0)]) + r2.scale(li[(0, 1)]),
                f2: r1.scale(li[(1, 0)]) + r2.scale(li[(1, 1)]),
            };
        }
        Ok(g)
    }
}

impl PlaneMap for LocalGerm {
    fn eval<R: Ring>(&self, x: &R, y: &R) -> (R, R) {
        (self.f1.eval_ring(x, y), self.f2.eval_ring(x, y))
    }
}

/// Germ of `f^period` at `p` in the coordinates `ξ ↦ p + frame·ξ`:
/// `ξ ↦ frame⁻¹ (f^period(p + frame ξ) − p)`, truncated at total degree `degree`.
pub fn localize<M: PlaneMap>(
    map: &M,
    p: [C64; 2],
    frame: &Mat2,
    period: usize,
    degree: usize,
) -> Result<LocalGerm, HenonError> {
    let scale = frame.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let fi = if frame.determinant().norm() > 1e-12 * scale * scale {
        frame.try_inverse().ok_or(HenonError::SingularFrame)?
    } else {
        return Err(HenonError::SingularFrame);
    };
    let q = map.iterate(p, period);
    let residual = ((q[0] - p[0]).norm_sqr() + (q[1] - p[1]).norm_sqr()).sqrt();
    if residual > 1e-8 * (1.0 + p[0].norm() + p[1].norm()) {
        return Err(HenonError::NotFixed { period, residual });
    }
    let radii = [LOCAL_RADIUS, LOCAL_RADIUS];
    let x = TruncatedSeries2::var_x(degree).with_radii(radii);
    let y = TruncatedSeries2::var_y(degree).with_radii(radii);
    let zx = (x.scale(frame[(0, 0)]) + y.scale(frame[(0, 1)])).add_scalar(p[0]);
    let zy = (x.scale(frame[(1, 0)]) + y.scale(frame[(1, 1)])).add_scalar(p[1]);
    let (a, b) = Power { map, n: period }.eval(&zx, &zy);
    let (a, b) = (a.add_scalar(-p[0]), b.add_scalar(-p[1]));
    let mut f1 = a.scale(fi[(0, 0)]) + b.scale(fi[(0, 1)]);
    let mut f2 = a.scale(fi[(1, 0)]) + b.scale(fi[(1, 1)]);
    // the fixed point is exact up to the Newton residual; pin the constant term
    f1.set_coeff(0, 0, ZERO);
    f2.set_coeff(0, 0, ZERO);
    Ok(LocalGerm { f1, f2 })
}

// ---------------------------------------------------------------------------
// Families

#[derive(Clone, Debug, PartialEq)]
pub struct FactorTemplate {
    pub p: Vec<ParamPoly>,
    pub a: ParamPoly,
}

/// Germ family whose components are series in (x, y) with λ-polynomial coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTemplate {
    pub degree: usize,
    pub f1: Vec<(usize, usize, ParamPoly)>,
    pub f2: Vec<(usize, usize, ParamPoly)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    Henon(Vec<FactorTemplate>),
    Synthetic(SyntheticTemplate),
}

/// Rectangular box in ℂ^dim: per component, ranges for the real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBox {
    pub re: Vec<[f64; 2]>,
    pub im: Vec<[f64; 2]>,
}

impl ParamBox {
    pub fn contains(&self, lam: &[C64]) -> Result<(), HenonError> {
        for (k, z) in lam.iter().enumerate() {
            let ok_re = self.re.get(k).map(|r| r[0] <= z.re && z.re <= r[1]).unwrap_or(true);
            let ok_im = self.im.get(k).map(|r| r[0] <= z.im && z.im <= r[1]).unwrap_or(true);
            if !(ok_re && ok_im) {
                return Err(HenonError::OutsideBox { index: k, value: *z });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParametricFamily {
    pub name: String,
    pub params: Vec<String>,
    pub kind: FamilyKind,
    pub bbox: Option<ParamBox>,
}

/// A concrete member of a family.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyMember {
    Automorphism(PolynomialAutomorphism),
    Germ(LocalGerm),
}

impl PlaneMap for FamilyMember {
    fn eval<R: Ring>(&self, x: &R, y: &R) -> (R, R) {
        match self {
            FamilyMember::Automorphism(m) => m.eval(x, y),
            FamilyMember::Germ(g) => g.eval(x, y),
        }
    }
}

/// Coefficient-wise derivative of a family member with respect to one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum MemberPartial {
    /// Per factor: (∂P coefficients, ∂a).
    Henon(Vec<(Vec<C64>, C64)>),
    Synthetic(LocalGerm),
}

impl MemberPartial {
    /// For a single factor or a germ, the map `p ↦ (∂_λ f)(p)` with the point held fixed.
    pub fn apply_single(&self, p: [C64; 2]) -> Option<[C64; 2]> {
        match self {
            MemberPartial::Henon(f) if f.len() == 1 => {
                let (dp, da) = &f[0];
                Some([*da * p[1] + crate::poly::eval(dp, p[0]), ZERO])
            }
            MemberPartial::Henon(_) => None,
            MemberPartial::Synthetic(g) => Some(g.apply(p)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FamilyJet {
    pub value: FamilyMember,
    pub partials: Vec<MemberPartial>,
}

impl ParametricFamily {
    /// `f_{a,c}` with parameters named `a`, `c`.
    pub fn quadratic() -> Self {
        Self {
            name: "quadratic-henon".into(),
            params: vec!["a".into(), "c".into()],
            kind: FamilyKind::Henon(vec![FactorTemplate {
                p: vec![ParamPoly::var(1), ParamPoly::real(0.0), ParamPoly::real(1.0)],
                a: ParamPoly::var(0),
            }]),
            bbox: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    fn check(&self, lam: &[C64]) -> Result<(), HenonError> {
        if lam.len() != self.dim() {
            return Err(HenonError::Dimension { expected: self.dim(), got: lam.len() });
        }
        if let Some(b) = &self.bbox {
            b.contains(lam)?;
        }
        Ok(())
    }

    pub fn member(&self, lam: &[C64]) -> Result<FamilyMember, HenonError> {
        Ok(self.family_eval(lam, 0)?.value)
    }

    pub fn family_eval(&self, lam: &[C64], jet_order: u8) -> Result<FamilyJet, HenonError> {
        self.check(lam)?;
        let value = match &self.kind {
            FamilyKind::Henon(t) => {
                let factors = t
                    .iter()
                    .map(|f| HenonFactor::new(f.p.iter().map(|c| c.eval(lam)).collect(), f.a.eval(lam)))
                    .collect::<Result<Vec<_>, _>>()?;
                FamilyMember::Automorphism(PolynomialAutomorphism::new(factors)?)
            }
            FamilyKind::Synthetic(s) => FamilyMember::Germ(synthetic_member(s, lam, |p| p.eval(lam))?),
        };
        let mut partials = Vec::new();
        if jet_order >= 1 {
            for k in 0..self.dim() {
                partials.push(match &self.kind {
                    FamilyKind::Henon(t) => MemberPartial::Henon(
                        t.iter()
                            .map(|f| {
                                (
                                    f.p.iter().map(|c| c.derivative(k).eval(lam)).collect(),
                                    f.a.derivative(k).eval(lam),
                                )
                            })
                            .collect(),
                    ),
                    FamilyKind::Synthetic(s) => {
                        let t1 = s.f1.iter().map(|(i, j, c)| (*i, *j, c.derivative(k).eval(lam))).collect::<Vec<_>>();
                        let t2 = s.f2.iter().map(|(i, j, c)| (*i, *j, c.derivative(k).eval(lam))).collect::<Vec<_>>();
                        MemberPartial::Synthetic(LocalGerm {
                            f1: TruncatedSeries2::from_terms(s.degree, &t1),
                            f2: TruncatedSeries2::from_terms(s.degree, &t2),
                        })
                    }
                });
            }
        }
        Ok(FamilyJet { value, partials })
    }

    /// Evaluates `f_λ(x, y)` with parameters and point in any ring, so duals give
    /// joint derivatives in (λ, x, y).
    pub fn eval_ring<R: Ring>(&self, lam: &[R], x: &R, y: &R) -> (R, R) {
        match &self.kind {
            FamilyKind::Henon(t) => {
                let (mut a, mut b) = (x.clone(), y.clone());
                for f in t.iter().rev() {
                    let coeffs: Vec<R> = f.p.iter().map(|c| c.eval_ring(lam, x)).collect();
                    let mut pz = x.zero_like();
                    for c in coeffs.iter().rev() {
                        pz = pz * a.clone() + c.clone();
                    }
                    let na = f.a.eval_ring(lam, x) * b.clone() + pz;
                    b = a;
                    a = na;
                }
                (a, b)
            }
            FamilyKind::Synthetic(s) => {
                let comp = |terms: &[(usize, usize, ParamPoly)]| {
                    let mut acc = x.zero_like();
                    for (i, j, c) in terms {
                        acc = acc + c.eval_ring(lam, x) * x.powi(*i) * y.powi(*j);
                    }
                    acc
                };
                (comp(&s.f1), comp(&s.f2))
            }
        }
    }
}

fn synthetic_member(
    s: &SyntheticTemplate,
    lam: &[C64],
    ev: impl Fn(&ParamPoly) -> C64,
) -> Result<LocalGerm, HenonError> {
    let _ = lam;
    let t1 = s.f1.iter().map(|(i, j, c)| (*i, *j, ev(c))).collect::<Vec<_>>();
    let t2 = s.f2.iter().map(|(i, j, c)| (*i, *j, ev(c))).collect::<Vec<_>>();
    LocalGerm::from_terms(s.degree, &t1, &t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig2, mat2};

    fn r(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn quadratic_fixed_point_and_single_factor() {
        let f = PolynomialAutomorphism::quadratic_real(0.5, 0.0);
        assert_eq!(f.apply([r(0.0), r(0.0)]), [r(0.0), r(0.0)]);
        let h = PolynomialAutomorphism::new(vec![HenonFactor::new(vec![r(0.0), r(0.0), r(1.0)], r(1.0)).unwrap()]).unwrap();
        assert_eq!(h.apply([r(1.0), r(1.0)]), [r(2.0), r(1.0)]);
    }

    #[test]
    fn derivative_rows_and_determinant() {
        let f = PolynomialAutomorphism::quadratic(r(0.3), C64::new(-1.2, 0.1));
        let z = C64::new(0.7, -0.2);
        let m = f.derivative([z, r(0.4)]);
        assert_eq!(m, mat2(z * 2.0, r(0.3), r(1.0), r(0.0)));
        assert!((m.determinant() - r(-0.3)).norm() < 1e-15);
        let g = PolynomialAutomorphism::new(vec![HenonFactor::quadratic(r(0.3), r(0.1)), HenonFactor::quadratic(r(2.0), r(-1.0))]).unwrap();
        assert!((g.jacobian() - r(0.6)).norm() < 1e-15);
        assert_eq!(g.dynamical_degree(), 4);
    }

    #[test]
    fn localize_saddle_diagonalizes() {
        let f = PolynomialAutomorphism::quadratic_real(0.5, 0.0);
        let p = [r(0.5), r(0.5)];
        let ([u, s], [eu, es]) = eig2(&f.derivative(p));
        let frame = Mat2::from_columns(&[eu, es]);
        let g = localize(&f, p, &frame, 1, 6).unwrap();
        let l = g.linear_part();
        assert!((l[(0, 0)] - u).norm() < 1e-13);
        assert!((l[(1, 1)] - s).norm() < 1e-13);
        assert!(l[(0, 1)].norm() < 1e-13 && l[(1, 0)].norm() < 1e-13);
        assert!((u - r(1.366_025_403_784_438_6)).norm() < 1e-12);
    }

    #[test]
    fn localize_rejects_non_fixed_point() {
        let f = PolynomialAutomorphism::quadratic_real(0.5, 0.0);
        let e = localize(&f, [r(0.3), r(0.3)], &Mat2::identity(), 1, 4);
        assert!(matches!(e, Err(HenonError::NotFixed { .. })));
        let e = localize(&f, [r(0.5), r(0.5)], &Mat2::zeros(), 1, 4);
        assert_eq!(e, Err(HenonError::SingularFrame));
    }

    #[test]
    fn germ_inverse_round_trip() {
        let g = LocalGerm::from_real_terms(6, &[(1, 0, 2.0), (0, 2, 1.0)], &[(0, 1, 1.0 / 3.0), (2, 0, 1.0)]).unwrap();
        let gi = g.invert().unwrap();
        let id = g.compose(&gi);
        for (i, j, c) in id.f1.terms() {
            let want = if (i, j) == (1, 0) { 1.0 } else { 0.0 };
            assert!((c - r(want)).norm() < 1e-12, "({i},{j})");
        }
    }

    #[test]
    fn quadratic_family_jet() {
        let fam = ParametricFamily::quadratic();
        let lam = [r(0.3), r(-1.2)];
        let jet = fam.family_eval(&lam, 1).unwrap();
        assert_eq!(jet.value, FamilyMember::Automorphism(PolynomialAutomorphism::quadratic_real(0.3, -1.2)));
        let dc = jet.partials[1].apply_single([C64::new(0.4, 0.1), r(2.0)]).unwrap();
        assert_eq!(dc, [r(1.0), r(0.0)]);
    }
}

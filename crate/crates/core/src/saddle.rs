//! Saddle periodic points, resonances, invariant-manifold germs, the normal form
//! (⋆_k) and the zero-slope section of the projectivized map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::henon::{HenonError, LocalGerm, PlaneMap, Power};
use crate::linalg::{eig2, norm2, solve2, Mat2, Vec2};
use crate::ring::{Dual, Ring, C64};
use crate::series::{solve_homological, SeriesError, TruncatedSeries1, TruncatedSeries2};
use crate::tol::relative_tol;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Band around modulus 1 treated as indifferent.
pub const INDIFFERENT_BAND: f64 = 1e-6;
/// Absolute tolerance on |u^a s^b − 1| for exact resonance.
pub const RESONANCE_TOL: f64 = 1e-9;
/// Upper edge of the near-resonance warning band.
pub const NEAR_RESONANCE_BAND: f64 = 1e-4;
/// Floor for homological divisors.
pub const SMALL_DIVISOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaddleError {
    #[error("Newton diverged after {0} iterations")]
    Diverged(usize),
    #[error("singular Newton matrix: a multiplier is (close to) 1")]
    SingularNewton,
    #[error("periodic point is not a saddle (type {0:?})")]
    NotSaddle(OrbitType),
    #[error("degenerate multipliers: |u| = {u:.6}, |s| = {s:.6}")]
    Degenerate { u: f64, s: f64 },
    #[error("resonance u^{a} s^{b} = 1")]
    Resonance { a: usize, b: usize },
    #[error("small divisor {value:.3e} at order {j}")]
    SmallDivisor { j: usize, value: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Henon(#[from] HenonError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrbitType {
    Saddle,
    Sink,
    Source,
    Indeterminate,
}

pub fn classify_multipliers(m: [C64; 2]) -> OrbitType {
    let a = m[0].norm();
    let b = m[1].norm();
    if (a - 1.0).abs() <= INDIFFERENT_BAND || (b - 1.0).abs() <= INDIFFERENT_BAND {
        OrbitType::Indeterminate
    } else if a > 1.0 && b > 1.0 {
        OrbitType::Source
    } else if a < 1.0 && b < 1.0 {
        OrbitType::Sink
    } else {
        OrbitType::Saddle
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPoint {
    pub point: [C64; 2],
    pub period: usize,
    /// Ordered by decreasing modulus.
    pub multipliers: [C64; 2],
    pub eigenvectors: [[C64; 2]; 2],
    pub residual: f64,
    pub kind: OrbitType,
    /// det D(f^n) at the point.
    pub det: C64,
}

impl PeriodicPoint {
    pub fn saddle(&self) -> Result<SaddleData, SaddleError> {
        if self.kind != OrbitType::Saddle {
            return Err(SaddleError::NotSaddle(self.kind));
        }
        SaddleData::new(
            self.point,
            self.period,
            self.multipliers[0],
            self.multipliers[1],
            self.eigenvectors[0],
            self.eigenvectors[1],
            self.residual,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleData {
    pub point: [C64; 2],
    pub period: usize,
    pub u: C64,
    pub s: C64,
    pub eu: [C64; 2],
    pub es: [C64; 2],
    pub residual: f64,
    pub rho: f64,
}

impl SaddleData {
    pub fn new(
        point: [C64; 2],
        period: usize,
        u: C64,
        s: C64,
        eu: [C64; 2],
        es: [C64; 2],
        residual: f64,
    ) -> Result<Self, SaddleError> {
        let m = margins(u, s, 1)?;
        Ok(Self { point, period, u, s, eu, es, residual, rho: m.rho })
    }

    /// Saddle of a germ with diagonal linear part at the origin.
    pub fn of_germ(g: &LocalGerm) -> Result<Self, SaddleError> {
        let l = g.linear_part();
        let ([u, s], [eu, es]) = eig2(&l);
        if classify_multipliers([u, s]) != OrbitType::Saddle {
            return Err(SaddleError::NotSaddle(classify_multipliers([u, s])));
        }
        Self::new([ZERO, ZERO], 1, u, s, [eu[0], eu[1]], [es[0], es[1]], 0.0)
    }

    pub fn frame(&self) -> Mat2 {
        Mat2::new(self.eu[0], self.es[0], self.eu[1], self.es[1])
    }

    /// ln|u| / ln|s|.
    pub fn moduli(&self) -> f64 {
        self.u.norm().ln() / self.s.norm().ln()
    }
}

/// Newton on `f^n(x) − x` from `seed`, with at most 100 iterations.
pub fn find_periodic<M: PlaneMap>(map: &M, n: usize, seed: [C64; 2], tol: f64) -> Result<PeriodicPoint, SaddleError> {
    if n == 0 {
        return Err(SaddleError::Precondition("period must be at least 1".into()));
    }
    let mut x = seed;
    for it in 0..100 {
        let (fx, d) = map.iterate_with_derivative(x, n);
        let r = Vec2::new(fx[0] - x[0], fx[1] - x[1]);
        let res = norm2(&r);
        if !res.is_finite() || x[0].norm() + x[1].norm() > 1e12 {
            return Err(SaddleError::Diverged(it));
        }
        let jac = d - Mat2::identity();
        let step = solve2(&jac, &(-r)).ok_or(SaddleError::SingularNewton)?;
        x = [x[0] + step[0], x[1] + step[1]];
        if norm2(&step) <= 1e-15 * (1.0 + x[0].norm() + x[1].norm()) || res == 0.0 {
            break;
        }
    }
    let (fx, d) = map.iterate_with_derivative(x, n);
    let residual = ((fx[0] - x[0]).norm_sqr() + (fx[1] - x[1]).norm_sqr()).sqrt();
    if !(residual <= tol) {
        return Err(SaddleError::Diverged(100));
    }
    let (mult, vecs) = eig2(&d);
    Ok(PeriodicPoint {
        point: x,
        period: n,
        multipliers: mult,
        eigenvectors: [[vecs[0][0], vecs[0][1]], [vecs[1][0], vecs[1][1]]],
        residual,
        kind: classify_multipliers(mult),
        det: d.determinant(),
    })
}

/// All `(a, b)` with `a, b ≥ 1`, `a + b ≤ k` and `|u^a s^b − 1| ≤ tol`, sorted.
pub fn detect_resonance(u: C64, s: C64, k: usize, tol: f64) -> Vec<(usize, usize)> {
    resonance_scan(u, s, k).into_iter().filter(|(_, d)| *d <= tol).map(|(p, _)| p).collect()
}

/// Pairs in the near-resonance band `(tol, NEAR_RESONANCE_BAND]`.
pub fn near_resonances(u: C64, s: C64, k: usize, tol: f64) -> Vec<((usize, usize), f64)> {
    resonance_scan(u, s, k)
        .into_iter()
        .filter(|(_, d)| *d > tol && *d <= NEAR_RESONANCE_BAND)
        .collect()
}

fn resonance_scan(u: C64, s: C64, k: usize) -> Vec<((usize, usize), f64)> {
    let mut out = Vec::new();
    let mut ua = ONE;
    for a in 1..k {
        ua *= u;
        let mut v = ua;
        for b in 1..=(k - a) {
            v *= s;
            out.push(((a, b), (v - ONE).norm()));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub rho: f64,
    pub r: usize,
    pub k_prime: usize,
}

fn ceil_guarded(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Non-resonance margin ρ and the derived orders r(ℓ, ρ) and k′(ρ).
pub fn margins(u: C64, s: C64, ell: usize) -> Result<Margins, SaddleError> {
    let (au, asi) = (u.norm(), 1.0 / s.norm());
    if !(au > 1.0 && asi > 1.0) || !asi.is_finite() {
        return Err(SaddleError::Degenerate { u: au, s: s.norm() });
    }
    let rho = (au - 1.0).min(asi - 1.0).min(1.0 / (au - 1.0)).min(1.0 / (asi - 1.0));
    let l = (1.0 + 1.0 / rho).ln() / (1.0 + rho).ln();
    Ok(Margins {
        rho,
        r: ceil_guarded(2.0 + (1.0 + l) * ell as f64),
        k_prime: ceil_guarded(2.0 + l),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Stable,
    Unstable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldGerm {
    pub point: [C64; 2],
    pub period: usize,
    pub kind: Branch,
    pub w: [TruncatedSeries1; 2],
    pub multiplier: C64,
    pub radius: f64,
}

impl ManifoldGerm {
    pub fn eval(&self, t: C64) -> [C64; 2] {
        [self.w[0].eval(t), self.w[1].eval(t)]
    }

    /// sup over `samples` points of |t| = radius of ‖f^n(W(t)) − W(μ t)‖.
    pub fn residual<M: PlaneMap>(&self, map: &M, radius: f64, samples: usize) -> f64 {
        let f = Power { map, n: self.period };
        (0..samples)
            .map(|k| {
                let t = C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / samples as f64);
                let a = f.apply(self.eval(t));
                let b = self.eval(self.multiplier * t);
                ((a[0] - b[0]).norm_sqr() + (a[1] - b[1]).norm_sqr()).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Parameterization W with `f^n(W(t)) = W(μ t)` order by order:
/// `(Df − μ^j) w_j = −[f(W_{<j})]_j`.
pub fn manifold_germ<M: PlaneMap>(
    map: &M,
    saddle: &SaddleData,
    kind: Branch,
    degree: usize,
) -> Result<ManifoldGerm, SaddleError> {
    if degree < 1 {
        return Err(SaddleError::Precondition("degree must be at least 1".into()));
    }
    let f = Power { map, n: saddle.period };
    let p = saddle.point;
    let d = f.derivative(p);
    let (mu, e) = match kind {
        Branch::Unstable => (saddle.u, saddle.eu),
        Branch::Stable => (saddle.s, saddle.es),
    };
    let mut w0 = vec![ZERO; degree + 1];
    let mut w1 = vec![ZERO; degree + 1];
    w0[0] = p[0];
    w1[0] = p[1];
    w0[1] = e[0];
    w1[1] = e[1];
    let mut muj = mu;
    for j in 2..=degree {
        muj *= mu;
        let a = TruncatedSeries1::polynomial(w0[..=j].to_vec()).with_radius(1e-3);
        let b = TruncatedSeries1::polynomial(w1[..=j].to_vec()).with_radius(1e-3);
        let (fa, fb) = f.eval(&a, &b);
        let rhs = Vec2::new(-fa.coeff(j), -fb.coeff(j));
        let m = d - Mat2::identity() * muj;
        let det = m.determinant().norm();
        if det < SMALL_DIVISOR_FLOOR * (1.0 + muj.norm()).powi(2) {
            return Err(SaddleError::SmallDivisor { j, value: det });
        }
        let wj = solve2(&m, &rhs).ok_or(SaddleError::SmallDivisor { j, value: det })?;
        w0[j] = wj[0];
        w1[j] = wj[1];
    }
    // root-test radius: coefficients of size ≲ 1 on the disk
    let growth = (2..=degree)
        .map(|j| (w0[j].norm().max(w1[j].norm())).powf(1.0 / (j as f64 - 1.0)))
        .fold(0.0, f64::max);
    let radius = if growth > 0.0 { (0.5 / growth).min(1.0) } else { 1.0 };
    Ok(ManifoldGerm {
        point: p,
        period: saddle.period,
        kind,
        w: [
            TruncatedSeries1::polynomial(w0).with_radius(radius),
            TruncatedSeries1::polynomial(w1).with_radius(radius),
        ],
        multiplier: mu,
        radius,
    })
}

// ---------------------------------------------------------------------------
// Normal form

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalFormGerm {
    pub u: C64,
    pub s: C64,
    pub k: usize,
    pub g1: TruncatedSeries2,
    pub g2: TruncatedSeries2,
    /// The map in normal-form coordinates.
    pub germ: LocalGerm,
    /// Φ with `F ∘ Φ = Φ ∘ G`, tangent to the identity.
    pub change: LocalGerm,
    pub g1_sup: f64,
    pub g2_sup: f64,
}

impl NormalFormGerm {
    /// Builds the record for a germ already in the form (⋆_k), with identity change.
    pub fn from_star(u: C64, s: C64, k: usize, g1: TruncatedSeries2, g2: TruncatedSeries2) -> Result<Self, SaddleError> {
        let d = g1.degree().min(g2.degree()) + 2;
        let x = TruncatedSeries2::var_x(d).with_radii(g1.radii());
        let y = TruncatedSeries2::var_y(d).with_radii(g1.radii());
        let one = x.constant_like(ONE);
        let f1 = (x.clone() * (one.clone() + y.clone() * g1.extend(d))).scale(u);
        let f2 = (y.clone() * (one + x.clone() * g2.extend(d))).scale(s);
        let germ = LocalGerm::new(f1, f2)?;
        Ok(Self {
            u,
            s,
            k,
            g1_sup: g1.sup_bound(),
            g2_sup: g2.sup_bound(),
            g1,
            g2,
            change: LocalGerm::identity(d),
            germ,
        })
    }

    /// Max coefficient of `F∘Φ − Φ∘G` through the working degree.
    pub fn conjugacy_residual(&self, original: &LocalGerm) -> f64 {
        original.compose(&self.change).sub(&self.change.compose(&self.germ)).magnitude()
    }

    pub fn degree(&self) -> usize {
        self.germ.degree()
    }
}

fn homogeneous(s: &TruncatedSeries2, d: usize) -> TruncatedSeries2 {
    s.filter(|i, j| i + j == d)
}

/// `H⁻¹ ∘ G ∘ H`.
fn conjugate(g: &LocalGerm, h: &LocalGerm) -> Result<LocalGerm, SaddleError> {
    Ok(h.invert()?.compose(&g.compose(h)))
}

/// Brings a germ with diagonal linear part `diag(u, s)` to the form (⋆_k):
/// homological elimination through degree k+1, straightening of both
/// separatrices, then Koenigs linearization on each axis.
pub fn normal_form_star_k(f: &LocalGerm, k: usize) -> Result<NormalFormGerm, SaddleError> {
    let d = f.degree();
    if d < k + 2 {
        return Err(SaddleError::Precondition(format!("truncation degree {d} must be at least k + 2 = {}", k + 2)));
    }
    let l = f.linear_part();
    let scale = f.magnitude().max(1.0);
    if l[(0, 1)].norm() > 1e-12 * scale || l[(1, 0)].norm() > 1e-12 * scale {
        return Err(SaddleError::Precondition("linear part must be diagonal".into()));
    }
    let (u, s) = (l[(0, 0)], l[(1, 1)]);
    if !(u.norm() > 1.0 && s.norm() < 1.0) {
        return Err(SaddleError::Degenerate { u: u.norm(), s: s.norm() });
    }
    if let Some(&(a, b)) = detect_resonance(u, s, k + 1, RESONANCE_TOL).first() {
        return Err(SaddleError::Resonance { a, b });
    }
    let radii = f.f1.radii();
    let x = TruncatedSeries2::var_x(d).with_radii(radii);
    let y = TruncatedSeries2::var_y(d).with_radii(radii);
    let mut g = f.clone();
    let mut phi = LocalGerm { f1: x.clone(), f2: y.clone() };

    // stage 1: remove all monomials of degree 2..=k+1
    for deg in 2..=k + 1 {
        let n1 = homogeneous(&g.f1, deg);
        let n2 = homogeneous(&g.f2, deg);
        if n1.magnitude() == 0.0 && n2.magnitude() == 0.0 {
            continue;
        }
        let div = |i: usize, j: usize, mu: C64| u.powu(i as u32) * s.powu(j as u32) - mu;
        let h1 = solve_homological(&n1, |i, j| div(i, j, u), SMALL_DIVISOR_FLOOR)?;
        let h2 = solve_homological(&n2, |i, j| div(i, j, s), SMALL_DIVISOR_FLOOR)?;
        let h = LocalGerm { f1: &x + &h1, f2: &y + &h2 };
        g = conjugate(&g, &h)?;
        phi = phi.compose(&h);
    }

    // stage 2a: unstable separatrix y = φ(x)
    let graph = invariant_graph(&g, Branch::Unstable, d)?;
    if graph.magnitude() > 0.0 {
        let gx = TruncatedSeries1::variable(d);
        let lift = extend_x(&graph, &x);
        let h = LocalGerm { f1: x.clone(), f2: &y + &lift };
        let _ = gx;
        g = conjugate(&g, &h)?;
        phi = phi.compose(&h);
    }
    // stage 2b: stable separatrix x = ψ(y)
    let graph = invariant_graph(&g, Branch::Stable, d)?;
    if graph.magnitude() > 0.0 {
        let lift = extend_y(&graph, &y);
        let h = LocalGerm { f1: &x + &lift, f2: y.clone() };
        g = conjugate(&g, &h)?;
        phi = phi.compose(&h);
    }

    // stage 3: Koenigs coordinates on both axes
    let ku = koenigs_linearize(&g.f1.restrict_y0(), k)?;
    let ks = koenigs_linearize(&g.f2.restrict_x0(), k)?;
    let ku_inv = ku.reversion()?;
    let ks_inv = ks.reversion()?;
    let h = LocalGerm { f1: extend_x(&ku_inv, &x), f2: extend_y(&ks_inv, &y) };
    if h.sub(&LocalGerm { f1: x.clone(), f2: y.clone() }).magnitude() > 0.0 {
        let hinv = LocalGerm { f1: extend_x(&ku, &x), f2: extend_y(&ks, &y) };
        g = hinv.compose(&g.compose(&h));
        phi = phi.compose(&h);
    }

    // clean rounding noise below the flatness threshold, then extract g1, g2
    let mut r1 = g.f1.clone();
    let mut r2 = g.f2.clone();
    r1.set_coeff(1, 0, ZERO);
    r2.set_coeff(0, 1, ZERO);
    let cut = relative_tol() * scale;
    let clean = |s: &TruncatedSeries2| {
        let mut o = s.clone();
        for (i, j, c) in s.terms() {
            if c.norm() <= cut && (i == 0 || j == 0 || i + j < k + 2) {
                o.set_coeff(i, j, ZERO);
            }
        }
        o
    };
    let r1 = clean(&r1);
    let r2 = clean(&r2);
    let g1 = r1.div_monomial(1, 1)?.scale(u.inv());
    let g2 = r2.div_monomial(1, 1)?.scale(s.inv());
    let mut germ = g;
    germ.f1 = (&x.scale(u) + &r1).with_radii(radii);
    germ.f2 = (&y.scale(s) + &r2).with_radii(radii);
    Ok(NormalFormGerm { u, s, k, g1_sup: g1.sup_bound(), g2_sup: g2.sup_bound(), g1, g2, germ, change: phi })
}

fn extend_x(f: &TruncatedSeries1, x: &TruncatedSeries2) -> TruncatedSeries2 {
    f.extend(x.degree()).truncate(x.degree()).eval_ring(x)
}

fn extend_y(f: &TruncatedSeries1, y: &TruncatedSeries2) -> TruncatedSeries2 {
    f.extend(y.degree()).truncate(y.degree()).eval_ring(y)
}

/// Invariant graph of a separatrix: `y = φ(x)` (unstable) or `x = ψ(y)` (stable),
/// with `φ_j = e_j / (u^j − s)` and `ψ_j = e_j / (s^j − u)`.
fn invariant_graph(g: &LocalGerm, kind: Branch, d: usize) -> Result<TruncatedSeries1, SaddleError> {
    let l = g.linear_part();
    let (u, s) = (l[(0, 0)], l[(1, 1)]);
    let t = TruncatedSeries1::variable(d);
    let mut phi = TruncatedSeries1::zero(d);
    let scale = g.magnitude().max(1.0);
    for j in 2..=d {
        let e = match kind {
            Branch::Unstable => {
                let (a, b) = g.eval(&t, &phi);
                (b - phi.compose(&a)?).coeff(j)
            }
            Branch::Stable => {
                let (a, b) = g.eval(&phi, &t);
                (a - phi.compose(&b)?).coeff(j)
            }
        };
        if e.norm() <= 1e-15 * scale {
            continue;
        }
        let div = match kind {
            Branch::Unstable => u.powu(j as u32) - s,
            Branch::Stable => s.powu(j as u32) - u,
        };
        if div.norm() < SMALL_DIVISOR_FLOOR {
            return Err(SaddleError::SmallDivisor { j, value: div.norm() });
        }
        phi.set_coeff(j, e / div);
    }
    Ok(phi)
}

/// Koenigs coordinate φ with `φ(h(x)) = μ φ(x)`, `φ = x + O(x^{k+2})`, for
/// `h(x) = μ x + O(x^{k+2})` with `|μ| ∉ {0, 1}`.
pub fn koenigs_linearize(h: &TruncatedSeries1, k: usize) -> Result<TruncatedSeries1, SaddleError> {
    let d = h.degree();
    let mu = h.coeff(1);
    if mu.norm() == 0.0 || (mu.norm() - 1.0).abs() <= INDIFFERENT_BAND {
        return Err(SaddleError::Precondition(format!("multiplier modulus {} must differ from 0 and 1", mu.norm())));
    }
    let cut = relative_tol() * h.magnitude();
    if h.coeff(0).norm() > cut {
        return Err(SaddleError::Precondition("h must fix the origin".into()));
    }
    for j in 2..=(k + 1).min(d) {
        if h.coeff(j).norm() > cut {
            return Err(SaddleError::Precondition(format!("nonzero coefficient of x^{j} in h")));
        }
    }
    let mut h = h.clone().with_radius(1e-3).with_tail(0.0);
    h.set_coeff(0, ZERO);
    for j in 2..=(k + 1).min(d) {
        h.set_coeff(j, ZERO);
    }
    let mut phi = TruncatedSeries1::variable(d.max(1)).with_radius(1.0);
    for j in 2..=d {
        let e = phi.compose(&h)?.coeff(j);
        if e == ZERO {
            continue;
        }
        let div = mu.powu(j as u32) - mu;
        if div.norm() < SMALL_DIVISOR_FLOOR {
            return Err(SaddleError::SmallDivisor { j, value: div.norm() });
        }
        phi.set_coeff(j, -e / div);
    }
    Ok(phi)
}

// ---------------------------------------------------------------------------
// Zero-slope section

#[derive(Clone, Debug, PartialEq)]
pub struct SlopeSection {
    pub zeta: TruncatedSeries1,
    /// Coefficient-wise residual of `ζ(s y) − A(y) ζ(y) − B(y)`.
    pub residual: f64,
}

/// Multiplier and offset of the projectivized map on the stable axis:
/// `m ↦ A(y) m + B(y)`.
fn slope_coefficients(nf: &NormalFormGerm, d: usize) -> Result<(TruncatedSeries1, TruncatedSeries1), SaddleError> {
    let g1 = nf.g1.restrict_x0().extend(d).truncate(d).with_radius(1.0).with_tail(0.0);
    let g2 = nf.g2.restrict_x0().extend(d).truncate(d).with_radius(1.0).with_tail(0.0);
    let y = TruncatedSeries1::variable(d);
    let denom = (y.clone() * g1).add_scalar(ONE).recip()?;
    let a = denom.scale(nf.s / nf.u);
    let b = (y * g2 * denom).scale(nf.s / nf.u);
    Ok((a, b))
}

/// Invariant section `m = ζ(y)` of the projectivized map over `{x = 0}`.
pub fn zero_slope_section(nf: &NormalFormGerm, degree: usize) -> Result<SlopeSection, SaddleError> {
    let m = margins(nf.u, nf.s, 1)?;
    if let Some(&(a, b)) = detect_resonance(nf.u, nf.s, m.k_prime.max(2), RESONANCE_TOL).first() {
        return Err(SaddleError::Resonance { a, b });
    }
    let d = degree.min(nf.g1.degree() + 1).min(nf.g2.degree() + 1).max(1);
    let (a, b) = slope_coefficients(nf, d)?;
    let (u, s) = (nf.u, nf.s);
    let mut z = vec![ZERO; d + 1];
    for j in 1..=d {
        let mut rhs = b.coeff(j);
        for i in 1..j {
            rhs += a.coeff(j - i) * z[i];
        }
        let div = s.powu(j as u32) - s / u;
        if div.norm() < SMALL_DIVISOR_FLOOR {
            return Err(SaddleError::SmallDivisor { j, value: div.norm() });
        }
        z[j] = rhs / div;
    }
    let zeta = TruncatedSeries1::polynomial(z);
    let lhs = zeta.scale_arg(s).with_radius(1.0);
    let residual = (lhs - (a * zeta.clone() + b)).magnitude();
    Ok(SlopeSection { zeta, residual })
}

/// Slope of `D G(0, y) · (1, m)`, computed with duals on the full germ.
pub fn projectivized_step(germ: &LocalGerm, y: C64, m: C64) -> (C64, C64) {
    let px = Dual::<1>::variable(ZERO, 0);
    let py = Dual::<1>::constant(y) + Dual::<1>::variable(ZERO, 0).scale(m);
    let (a, b) = germ.eval(&px, &py);
    (b.value, b.grad[0] / a.grad[0])
}

/// True iff `m` differs from the zero-slope section at `(0, y)`.
pub fn dynamical_slope_nonzero(section: &SlopeSection, y: C64, m: C64) -> bool {
    let z = section.zeta.eval(y);
    (m - z).norm() > 1e-8 * (1.0 + z.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::henon::PolynomialAutomorphism;

    fn r(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn hénon_saddle_and_sink() {
        let f = PolynomialAutomorphism::quadratic_real(0.5, 0.0);
        let p = find_periodic(&f, 1, [r(0.4), r(0.4)], 1e-12).unwrap();
        assert_eq!(p.kind, OrbitType::Saddle);
        assert!((p.point[0] - r(0.5)).norm() < 1e-12);
        let sd = p.saddle().unwrap();
        assert!((sd.u - r(1.366_025_403_784_438_6)).norm() < 1e-12);
        assert!((sd.s - r(-0.366_025_403_784_438_6)).norm() < 1e-12);
        assert!((sd.u * sd.s - f.jacobian()).norm() < 1e-12);

        let q = find_periodic(&f, 1, [r(0.1), r(0.1)], 1e-12).unwrap();
        assert_eq!(q.kind, OrbitType::Sink);
        assert!(q.point[0].norm() < 1e-12);
        assert!((q.multipliers[0].norm() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn linear_saddle() {
        let g = LocalGerm::linear(r(2.0), r(0.5), 3);
        let p = find_periodic(&g, 1, [r(0.3), r(-0.2)], 1e-12).unwrap();
        assert!(p.point[0].norm() < 1e-14 && p.point[1].norm() < 1e-14);
        assert_eq!(p.multipliers, [r(2.0), r(0.5)]);
    }

    #[test]
    fn resonance_examples() {
        assert_eq!(detect_resonance(r(2.0), r(0.5), 3, 1e-9), vec![(1, 1)]);
        assert_eq!(detect_resonance(r(4.0), r(0.5), 4, 1e-9), vec![(1, 2)]);
        assert!(detect_resonance(C64::new(2.0, 1.0), C64::new(0.3, -0.1), 12, 1e-9).is_empty());
    }

    #[test]
    fn margin_examples() {
        let m = margins(r(2.0), r(0.5), 2).unwrap();
        assert_eq!((m.rho, m.r, m.k_prime), (1.0, 6, 3));
        let m = margins(r(3.0), r(0.5), 2).unwrap();
        assert_eq!((m.rho, m.r, m.k_prime), (0.5, 10, 5));
        let m = margins(r(1.1), r(1.0 / 1.1), 1).unwrap();
        assert!((m.rho - 0.1).abs() < 1e-12);
        assert!(margins(r(1.0), r(0.5), 1).is_err());
    }

    #[test]
    fn linear_manifold_is_axis() {
        let g = LocalGerm::linear(r(2.0), r(0.5), 4);
        let sd = SaddleData::of_germ(&g).unwrap();
        let w = manifold_germ(&g, &sd, Branch::Unstable, 5).unwrap();
        assert_eq!(w.w[0].coeff(1), r(1.0));
        for j in 2..=5 {
            assert_eq!(w.w[0].coeff(j), ZERO);
            assert_eq!(w.w[1].coeff(j), ZERO);
        }
    }

    #[test]
    fn nonlinear_manifold_residual() {
        let g = LocalGerm::from_real_terms(6, &[(1, 0, 2.0), (0, 2, 1.0)], &[(0, 1, 1.0 / 3.0), (2, 0, 1.0)]).unwrap();
        let sd = SaddleData::of_germ(&g).unwrap();
        // at D = 6 the residual is the degree-7 term 2·w₂·w₅ t⁷ of the second component
        let w = manifold_germ(&g, &sd, Branch::Unstable, 6).unwrap();
        let lead = 2.0 * w.w[1].coeff(2).norm() * w.w[1].coeff(5).norm() * 0.2f64.powi(7);
        let res6 = w.residual(&g, 0.2, 64);
        assert!((res6 / lead - 1.0).abs() < 0.02, "{res6} vs {lead}");
        let w = manifold_germ(&g, &sd, Branch::Unstable, 10).unwrap();
        assert!(w.residual(&g, 0.2, 64) <= 1e-10, "{}", w.residual(&g, 0.2, 64));
    }

    #[test]
    fn koenigs_examples() {
        let id = koenigs_linearize(&TruncatedSeries1::from_real(&[0.0, 2.0, 0.0, 0.0]), 1).unwrap();
        assert_eq!(id.coeffs(), &[ZERO, ONE, ZERO, ZERO]);
        let h = TruncatedSeries1::from_real(&[0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let phi = koenigs_linearize(&h, 1).unwrap();
        let res = (phi.compose(&h.clone().with_radius(0.1)).unwrap() - phi.scale(r(2.0))).magnitude();
        assert!(res < 1e-12);
        assert!((phi.coeff(3) - r(-1.0 / 6.0)).norm() < 1e-15);
        assert!(koenigs_linearize(&TruncatedSeries1::from_real(&[0.0, 2.0, 1.0]), 1).is_err());
    }

    #[test]
    fn normal_form_of_quadratic_germ() {
        let f = LocalGerm::from_real_terms(8, &[(1, 0, 2.0), (0, 2, 1.0)], &[(2, 0, 1.0), (0, 1, 1.0 / 3.0)]).unwrap();
        let nf = normal_form_star_k(&f, 2).unwrap();
        assert!(nf.g1.max_below_degree(2) <= 1e-10);
        assert!(nf.g2.max_below_degree(2) <= 1e-10);
        let res = nf.conjugacy_residual(&f);
        assert!(res <= 1e-9, "{res}");
        let lin = nf.change.linear_part();
        assert!((lin - Mat2::identity()).norm() < 1e-14);
    }

    #[test]
    fn normal_form_rejects_resonance() {
        let f = LocalGerm::from_real_terms(6, &[(1, 0, 2.0), (0, 2, 1.0)], &[(0, 1, 0.5)]).unwrap();
        assert_eq!(normal_form_star_k(&f, 2), Err(SaddleError::Resonance { a: 1, b: 1 }));
    }

    #[test]
    fn star_input_is_fixed() {
        let f = LocalGerm::from_real_terms(7, &[(1, 0, 2.0), (1, 3, 1.0)], &[(0, 1, 1.0 / 3.0), (1, 3, 1.0)]).unwrap();
        let nf = normal_form_star_k(&f, 2).unwrap();
        assert_eq!(nf.change, LocalGerm { f1: TruncatedSeries2::var_x(7), f2: TruncatedSeries2::var_y(7) });
        assert!((nf.g1.coeff(0, 2) - r(0.5)).norm() < 1e-15);
        assert!((nf.g2.coeff(0, 2) - r(3.0)).norm() < 1e-15);
    }

    #[test]
    fn slope_section_linear_and_nonlinear() {
        let lin = normal_form_star_k(&LocalGerm::linear(r(2.0), r(1.0 / 3.0), 6), 2).unwrap();
        let z = zero_slope_section(&lin, 6).unwrap();
        assert_eq!(z.zeta.magnitude(), 0.0);
        let y0 = r(0.2);
        assert!(!dynamical_slope_nonzero(&z, y0, ZERO));
        assert!(dynamical_slope_nonzero(&z, y0, r(0.1)));

        let f = LocalGerm::from_real_terms(10, &[(1, 0, 2.0), (1, 3, 1.0)], &[(0, 1, 1.0 / 3.0), (1, 3, 1.0)]).unwrap();
        let nf = normal_form_star_k(&f, 2).unwrap();
        let z = zero_slope_section(&nf, 8).unwrap();
        assert!(z.zeta.magnitude() > 0.1);
        assert!(z.residual <= 1e-12);
        // independent check through the germ's Jacobian
        let y0 = r(0.1);
        let (y1, m1) = projectivized_step(&nf.germ, y0, z.zeta.eval(y0));
        assert!((m1 - z.zeta.eval(y1)).norm() < 1e-9);
        assert!(!dynamical_slope_nonzero(&z, y0, z.zeta.eval(y0)));
    }
}

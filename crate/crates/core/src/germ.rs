//! Classification of a one-parameter unfolding `φ(λ, t)` of a tangency at
//! `(λ, t) = (0, 0)`: order `h`, multiplicity `m` of `{φ = 0} ∩ {∂_tφ = 0}`,
//! speed-exponent blocks `(h_j, σ_j)` and the quadratic/positive-speed verdict.
//!
//! Series convention: the first variable of the two-variable series is `λ`, the
//! second is `t`.

use std::f64::consts::PI;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{solve2, Mat2, Vec2};
use crate::poly::{self, PolyError};
use crate::ring::{Dual, Ring, C64};
use crate::series::{SeriesError, TruncatedSeries1, TruncatedSeries2};
use crate::stats::{linear_fit, snap_rational, LinearFit};
use crate::tol::relative_tol;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GermError {
    #[error("no tangency at the base point: {0}")]
    NotTangency(String),
    #[error("order of tangency is at least {0} (all coefficients below tolerance)")]
    OrderExceedsTruncation(usize),
    #[error("resultant vanishes through λ-degree {0}: the tangency persists")]
    PersistentTangency(usize),
    #[error("truncation too small: multiplicity exceeds the exact λ-degree {0}")]
    TruncationTooSmall(usize),
    #[error("φ(0, ·) has another multiple root near {0}")]
    OtherRootNotSimple(C64),
    #[error("solution count unstable across perturbations: {0} vs {1}")]
    CountUnstable(usize, usize),
    #[error("exponent not resolved: regression residual {residual:.3e} for block of size {size}")]
    Regression { size: usize, residual: f64 },
    #[error("ambiguous root tracking: {0}")]
    Ambiguous(String),
    #[error("fitted exponent {sigma:.4} is not within 0.02 of a rational with denominator ≤ {den}")]
    Snap { sigma: f64, den: usize },
    #[error("inconsistent blocks: Σ h_j σ_j = {sum} but m = {m}")]
    Inconsistent { m: usize, sum: String },
    #[error("multiplicity algorithms disagree: resultant {resultant}, counting {counting}")]
    Disagreement { resultant: usize, counting: usize },
    #[error("lift transversality check failed: m = {m}, Jacobian determinant {det:.3e}")]
    Transversality { m: usize, det: f64 },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `φ(λ, t)` with a tangency at the origin, centred at the base point `y₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfoldingGerm {
    pub phi: TruncatedSeries2,
    #[serde(default)]
    pub base_point: C64,
}

impl UnfoldingGerm {
    pub fn new(phi: TruncatedSeries2) -> Result<Self, GermError> {
        let cut = relative_tol() * phi.magnitude();
        if phi.magnitude() == 0.0 {
            return Err(GermError::NotTangency("φ is identically zero".into()));
        }
        if phi.coeff(0, 0).norm() > cut {
            return Err(GermError::NotTangency(format!("φ(0,0) = {}", phi.coeff(0, 0))));
        }
        if phi.coeff(0, 1).norm() > cut {
            return Err(GermError::NotTangency(format!("∂_tφ(0,0) = {}", phi.coeff(0, 1))));
        }
        if phi.restrict_x0().coeffs().iter().all(|c| c.norm() <= cut) {
            return Err(GermError::OrderExceedsTruncation(phi.degree()));
        }
        Ok(Self { phi, base_point: ZERO })
    }

    /// Terms `c λ^i t^j`.
    pub fn from_terms(degree: usize, terms: &[(usize, usize, f64)]) -> Result<Self, GermError> {
        let t: Vec<_> = terms.iter().map(|&(i, j, c)| (i, j, C64::new(c, 0.0))).collect();
        Self::new(TruncatedSeries2::from_terms(degree, &t))
    }

    pub fn with_base_point(mut self, y0: C64) -> Self {
        self.base_point = y0;
        self
    }

    /// `t ↦ φ(0, t)`.
    pub fn phi0(&self) -> TruncatedSeries1 {
        self.phi.restrict_x0()
    }

    pub fn order(&self) -> Result<usize, GermError> {
        order_of_tangency(&self.phi0())
    }
}

/// `h` such that `φ₀(t) ≅ t^{h+1}`.
pub fn order_of_tangency(phi0: &TruncatedSeries1) -> Result<usize, GermError> {
    let cut = relative_tol() * phi0.magnitude();
    if phi0.magnitude() == 0.0 {
        return Err(GermError::OrderExceedsTruncation(phi0.degree()));
    }
    if phi0.coeff(0).norm() > cut || phi0.coeff(1).norm() > cut {
        return Err(GermError::NotTangency("φ₀(0) or φ₀′(0) is nonzero".into()));
    }
    let idx = phi0.valuation().ok_or(GermError::OrderExceedsTruncation(phi0.degree()))?;
    Ok(idx - 1)
}

// ---------------------------------------------------------------------------
// Resultant route

/// Determinant by Berkowitz's division-free algorithm, valid over any
/// commutative ring (here: truncated λ-series).
pub fn berkowitz_det<R: Ring>(a: &[Vec<R>], one: &R) -> R {
    let n = a.len();
    if n == 0 {
        return one.clone();
    }
    let zero = one.zero_like();
    let mut vect = vec![one.clone(), -a[0][0].clone()];
    for r in 1..n {
        let mut col = Vec::with_capacity(r + 2);
        col.push(one.clone());
        col.push(-a[r][r].clone());
        let mut v: Vec<R> = (0..r).map(|i| a[i][r].clone()).collect();
        for _ in 0..r {
            let mut q = zero.clone();
            for (i, vi) in v.iter().enumerate() {
                q = q + a[r][i].clone() * vi.clone();
            }
            col.push(-q);
            v = (0..r)
                .map(|i| {
                    let mut s = zero.clone();
                    for (j, vj) in v.iter().enumerate() {
                        s = s + a[i][j].clone() * vj.clone();
                    }
                    s
                })
                .collect();
        }
        let mut nv = vec![zero.clone(); r + 2];
        for (i, slot) in nv.iter_mut().enumerate() {
            for (j, vj) in vect.iter().enumerate().take(i.min(r) + 1) {
                *slot = slot.clone() + col[i - j].clone() * vj.clone();
            }
        }
        vect = nv;
    }
    if n % 2 == 0 {
        vect[n].clone()
    } else {
        -vect[n].clone()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultantInfo {
    pub m: usize,
    /// t-degree kept after the Weierstrass-style truncation.
    pub t_degree: usize,
    /// Resultant coefficients in λ.
    pub resultant: TruncatedSeries1,
    /// Largest λ-degree at which the resultant is exact.
    pub exact_through: usize,
}

fn t_coefficients(phi: &TruncatedSeries2, lam_degree: usize) -> Vec<TruncatedSeries1> {
    let d = phi.degree();
    (0..=d)
        .map(|j| {
            let mut c = vec![ZERO; lam_degree + 1];
            for (i, slot) in c.iter_mut().enumerate().take((d - j).min(lam_degree) + 1) {
                *slot = phi.coeff(i, j);
            }
            TruncatedSeries1::polynomial(c)
        })
        .collect()
}

/// `m` as the λ-vanishing order of `Res_t(φ, ∂_tφ)`.
pub fn multiplicity_resultant(germ: &UnfoldingGerm) -> Result<usize, GermError> {
    Ok(resultant_details(germ)?.m)
}

pub fn resultant_details(germ: &UnfoldingGerm) -> Result<ResultantInfo, GermError> {
    let phi = &germ.phi;
    let h = germ.order()?;
    let d = phi.degree();
    let phi0 = germ.phi0();
    let cut0 = relative_tol() * phi0.magnitude();
    // degree of φ(0, ·); higher t-terms vanish at λ = 0 and are dropped
    let n = (h + 1..=d).rev().find(|&j| phi0.coeff(j).norm() > cut0).unwrap_or(h + 1);
    let rest: Vec<C64> = phi0.coeffs()[h + 1..=n].to_vec();
    if rest.len() > 1 {
        let scale = rest.iter().map(|c| c.norm()).fold(0.0, f64::max);
        match poly::roots_with_multiplicity(&rest, 1e-6 * (1.0 + scale), 1e-8) {
            Ok(rs) => {
                if let Some((z, _)) = rs.iter().find(|r| r.1 > 1) {
                    return Err(GermError::OtherRootNotSimple(*z));
                }
            }
            Err(PolyError::Ambiguous { center, .. }) => return Err(GermError::OtherRootNotSimple(center)),
            Err(e) => return Err(e.into()),
        }
    }
    let exact = phi.tail() == 0.0;
    let size = 2 * n - 1;
    let mut lam_degree = if exact { (2 * d).max(4) } else { d - n };
    loop {
        let a = t_coefficients(phi, lam_degree);
        let f: Vec<TruncatedSeries1> = a[..=n].to_vec();
        let g: Vec<TruncatedSeries1> = (0..n).map(|j| f[j + 1].scale(C64::new((j + 1) as f64, 0.0))).collect();
        let zero = TruncatedSeries1::zero(lam_degree);
        let mut m = vec![vec![zero.clone(); size]; size];
        for i in 0..n - 1 {
            for k in 0..=n {
                m[i][i + k] = f[n - k].clone();
            }
        }
        for i in 0..n {
            for k in 0..n {
                m[n - 1 + i][i + k] = g[n - 1 - k].clone();
            }
        }
        let hadamard: f64 = m.iter().map(|row| row.iter().map(|e| e.magnitude()).sum::<f64>().max(1e-300)).product();
        let one = TruncatedSeries1::constant(ONE, lam_degree);
        let res = berkowitz_det(&m, &one);
        let cut = 1e-9 * hadamard.max(res.magnitude());
        let val = res.coeffs().iter().position(|c| c.norm() > cut);
        match val {
            Some(v) if v <= lam_degree => {
                return Ok(ResultantInfo { m: v, t_degree: n, resultant: res, exact_through: lam_degree });
            }
            _ if exact && lam_degree < size * d => {
                lam_degree = (lam_degree * 2).min(size * d);
            }
            _ if exact => return Err(GermError::PersistentTangency(lam_degree)),
            _ => return Err(GermError::TruncationTooSmall(lam_degree)),
        }
    }
}

// ---------------------------------------------------------------------------
// Counting route

#[derive(Clone, Debug, PartialEq)]
pub struct CountResult {
    pub m: usize,
    /// Solutions `(λ, t)` for the first perturbation draw.
    pub solutions: Vec<[C64; 2]>,
    pub perturbations: [[C64; 2]; 2],
}

fn newton_lt(phi: &TruncatedSeries2, dphi: &TruncatedSeries2, e: [C64; 2], seed: [C64; 2], window: f64) -> Option<[C64; 2]> {
    let mut z = seed;
    let scale = e[0].norm().max(e[1].norm()).max(1e-300);
    for _ in 0..60 {
        let l = Dual::<2>::variable(z[0], 0);
        let t = Dual::<2>::variable(z[1], 1);
        let f1 = phi.eval_ring(&l, &t);
        let f2 = dphi.eval_ring(&l, &t);
        let r = Vec2::new(f1.value - e[0], f2.value - e[1]);
        let j = Mat2::new(f1.grad[0], f1.grad[1], f2.grad[0], f2.grad[1]);
        let step = solve2(&j, &(-r))?;
        z = [z[0] + step[0], z[1] + step[1]];
        if !(z[0].norm() <= 2.0 * window && z[1].norm() <= 2.0 * window) {
            return None;
        }
        let sz = step[0].norm() + step[1].norm();
        if sz <= 1e-14 * (z[0].norm() + z[1].norm()) + 1e-300 {
            break;
        }
    }
    let f1 = phi.eval(z[0], z[1]) - e[0];
    let f2 = dphi.eval(z[0], z[1]) - e[1];
    if f1.norm() + f2.norm() <= 1e-6 * scale && z[0].norm() <= window && z[1].norm() <= window {
        Some(z)
    } else {
        None
    }
}

fn solve_perturbed(germ: &UnfoldingGerm, e: [C64; 2], eps: f64, window: f64) -> Result<Vec<[C64; 2]>, GermError> {
    let phi = germ.phi.clone().with_tail(0.0);
    let dphi = phi.derive_y()?;
    let mut lam_seeds = vec![ZERO];
    let (lo, hi) = ((eps * 1e-2).ln(), window.ln());
    let nr = 28;
    let na = 12;
    for a in 0..nr {
        let rho = (lo + (hi - lo) * a as f64 / (nr - 1) as f64).exp();
        for b in 0..na {
            let th = 2.0 * PI * (b as f64 + 0.5 * (a % 2) as f64) / na as f64;
            lam_seeds.push(C64::from_polar(rho, th));
        }
    }
    let mut sols: Vec<[C64; 2]> = Vec::new();
    for lam in lam_seeds {
        let mut q = dphi.slice_x(lam).coeffs().to_vec();
        q[0] -= e[1];
        let ts = match poly::roots(&q) {
            Ok(r) => r,
            Err(_) => continue,
        };
        for t in ts.into_iter().filter(|t| t.norm() <= window) {
            if let Some(z) = newton_lt(&phi, &dphi, e, [lam, t], window) {
                let dup = sols.iter().any(|w| {
                    let d = ((w[0] - z[0]).norm_sqr() + (w[1] - z[1]).norm_sqr()).sqrt();
                    d <= 1e-7 * (z[0].norm() + z[1].norm()) + 1e-15
                });
                if !dup {
                    sols.push(z);
                }
            }
        }
    }
    sols.sort_by(|a, b| a[0].norm().partial_cmp(&b[0].norm()).unwrap().then(a[0].arg().partial_cmp(&b[0].arg()).unwrap()));
    Ok(sols)
}

/// Number of solutions of `{φ = ε₁, ∂_tφ = ε₂}` in the window, for two random
/// perturbations of modulus ≈ `eps`.
pub fn multiplicity_counting(germ: &UnfoldingGerm, eps: f64, window: f64, seed: u64) -> Result<CountResult, GermError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let r = eps * rng.gen_range(0.5..1.0);
        C64::from_polar(r, rng.gen_range(0.0..2.0 * PI))
    };
    let e1 = [draw(), draw()];
    let e2 = [draw(), draw()];
    let s1 = solve_perturbed(germ, e1, eps, window)?;
    let s2 = solve_perturbed(germ, e2, eps, window)?;
    if s1.len() != s2.len() {
        return Err(GermError::CountUnstable(s1.len(), s2.len()));
    }
    Ok(CountResult { m: s1.len(), solutions: s1, perturbations: [e1, e2] })
}

// ---------------------------------------------------------------------------
// Speed exponents

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedOptions {
    pub rays: usize,
    pub radii: Vec<f64>,
    pub loop_steps: usize,
    pub max_residual: f64,
}

impl Default for SpeedOptions {
    fn default() -> Self {
        let radii = (0..7).map(|k| 10f64.powf(-2.0 - 0.5 * k as f64)).collect();
        Self { rays: 8, radii, loop_steps: 64, max_residual: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub size: usize,
    pub sigma: Ratio<i64>,
    pub sigma_fit: f64,
    pub fit: LinearFit,
    /// `(λ, x(λ))` samples: per radius, over rays and block members.
    pub samples: Vec<Vec<(C64, C64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedAnalysis {
    pub blocks: Vec<Block>,
    pub radii: Vec<f64>,
}

/// Roots of `∂_tφ(λ, ·)/t^k` closest to the origin.
fn small_roots(dphi: &TruncatedSeries2, k: usize, count: usize, lam: C64) -> Result<Vec<C64>, GermError> {
    if count == 0 {
        return Ok(vec![]);
    }
    let q: Vec<C64> = dphi.slice_x(lam).coeffs()[k..].to_vec();
    let mut r = poly::roots(&q)?;
    r.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    if r.len() < count {
        return Err(GermError::Ambiguous(format!("only {} critical points at λ = {lam}", r.len())));
    }
    r.truncate(count);
    Ok(r)
}

/// Greedy nearest-neighbour continuation of `prev` onto `next`; fails if the
/// matching is not a bijection or two roots collide.
fn match_roots(prev: &[C64], next: &[C64]) -> Result<Vec<C64>, GermError> {
    for i in 0..next.len() {
        for j in i + 1..next.len() {
            if (next[i] - next[j]).norm() < 1e-9 {
                return Err(GermError::Ambiguous(format!("critical points collide near {}", next[i])));
            }
        }
    }
    let mut used = vec![false; next.len()];
    let mut out = Vec::with_capacity(prev.len());
    for p in prev {
        let (j, _) = next
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, q)| (j, (q - p).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .ok_or_else(|| GermError::Ambiguous("lost a critical point".into()))?;
        used[j] = true;
        out.push(next[j]);
    }
    // the match must also be nearest from the other side
    for (p, q) in prev.iter().zip(&out) {
        let d = (q - p).norm();
        if prev.iter().any(|p2| p2 != p && (q - p2).norm() < d) {
            return Err(GermError::Ambiguous(format!("step too coarse near {q}")));
        }
    }
    Ok(out)
}

/// Number of persistently vanishing low t-coefficients of `∂_tφ`.
fn persistent_zero_order(dphi: &TruncatedSeries2) -> usize {
    let cut = relative_tol() * dphi.magnitude();
    let d = dphi.degree();
    (0..=d)
        .find(|&j| (0..=d - j).any(|i| dphi.coeff(i, j).norm() > cut))
        .unwrap_or(d + 1)
}

/// Blocks `(h_j, σ_j)` of vertical-tangency abscissae `x(λ) = φ(λ, t*(λ))`.
pub fn speed_exponents(germ: &UnfoldingGerm, opts: &SpeedOptions) -> Result<SpeedAnalysis, GermError> {
    let h = germ.order()?;
    let phi = germ.phi.clone().with_tail(0.0);
    let dphi = phi.derive_y()?;
    let k = persistent_zero_order(&dphi).min(h);
    let free = h - k;
    let rays = opts.rays.max(1);
    if opts.loop_steps % rays != 0 {
        return Err(GermError::Ambiguous("loop steps must be a multiple of the ray count".into()));
    }
    let rho0 = opts.radii[0];

    // monodromy loop at the largest radius
    let mut cur = small_roots(&dphi, k, free, C64::new(rho0, 0.0))?;
    let start = cur.clone();
    let mut at_ray = vec![cur.clone()];
    for s in 1..=opts.loop_steps {
        let lam = C64::from_polar(rho0, 2.0 * PI * s as f64 / opts.loop_steps as f64);
        let next = small_roots(&dphi, k, free, lam)?;
        cur = match_roots(&cur, &next)?;
        if s % (opts.loop_steps / rays) == 0 && s < opts.loop_steps {
            at_ray.push(cur.clone());
        }
    }
    let perm: Vec<usize> = cur
        .iter()
        .map(|q| {
            start
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - q).norm().partial_cmp(&(b.1 - q).norm()).unwrap())
                .map(|p| p.0)
                .unwrap()
        })
        .collect();
    let mut seen = vec![false; free];
    let mut cycles: Vec<Vec<usize>> = Vec::new();
    for i in 0..free {
        if seen[i] {
            continue;
        }
        let mut c = vec![];
        let mut j = i;
        while !seen[j] {
            seen[j] = true;
            c.push(j);
            j = perm[j];
        }
        cycles.push(c);
    }

    // radial continuation along each ray; samples[label][radius] = (λ, x)
    let nrad = opts.radii.len();
    let mut samples: Vec<Vec<Vec<(C64, C64)>>> = vec![vec![Vec::new(); nrad]; free];
    let mut persistent: Vec<Vec<(C64, C64)>> = vec![Vec::new(); nrad];
    for (r, roots0) in at_ray.iter().enumerate() {
        let th = 2.0 * PI * r as f64 / rays as f64;
        let mut cur = roots0.clone();
        for (ri, &rho) in opts.radii.iter().enumerate() {
            if ri > 0 {
                let prev = opts.radii[ri - 1];
                let sub = 12;
                for q in 1..=sub {
                    let rr = (prev.ln() + (rho.ln() - prev.ln()) * q as f64 / sub as f64).exp();
                    let next = small_roots(&dphi, k, free, C64::from_polar(rr, th))?;
                    cur = match_roots(&cur, &next)?;
                }
            }
            let lam = C64::from_polar(rho, th);
            for (label, t) in cur.iter().enumerate() {
                samples[label][ri].push((lam, phi.eval(lam, *t)));
            }
            if k > 0 {
                persistent[ri].push((lam, phi.eval(lam, ZERO)));
            }
        }
    }

    let mut blocks = Vec::new();
    let mut groups: Vec<(usize, Vec<Vec<(C64, C64)>>)> = Vec::new();
    if k > 0 {
        groups.push((k, persistent));
    }
    for c in &cycles {
        let mut merged = vec![Vec::new(); nrad];
        for &label in c {
            for ri in 0..nrad {
                merged[ri].extend(samples[label][ri].iter().copied());
            }
        }
        groups.push((c.len(), merged));
    }
    for (size, data) in groups {
        let xs: Vec<f64> = opts.radii.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = data
            .iter()
            .map(|row| row.iter().map(|(_, x)| x.norm().max(1e-300).ln()).sum::<f64>() / row.len() as f64)
            .collect();
        let fit = linear_fit(&xs, &ys).ok_or_else(|| GermError::Ambiguous("need at least two radii".into()))?;
        if fit.max_residual > opts.max_residual {
            return Err(GermError::Regression { size, residual: fit.max_residual });
        }
        let sigma = snap_rational(fit.slope, size as i64, 0.02).ok_or(GermError::Snap { sigma: fit.slope, den: size })?;
        blocks.push(Block { size, sigma, sigma_fit: fit.slope, fit, samples: data });
    }
    blocks.sort_by(|a, b| (a.size, a.sigma).cmp(&(b.size, b.sigma)));
    Ok(SpeedAnalysis { blocks, radii: opts.radii.clone() })
}

/// Log–log fit of `|x(λ) − dλ|` with `d = ∂_λφ(0, 0)` over a block's samples.
pub fn secondary_exponent(germ: &UnfoldingGerm, block: &Block, radii: &[f64]) -> Option<LinearFit> {
    let d = germ.phi.coeff(1, 0);
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = block
        .samples
        .iter()
        .map(|row| row.iter().map(|(l, x)| (x - d * l).norm().max(1e-300).ln()).sum::<f64>() / row.len() as f64)
        .collect();
    linear_fit(&xs, &ys)
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyOptions {
    pub eps: f64,
    pub window: f64,
    pub seed: u64,
    pub speed: SpeedOptions,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { eps: 1e-9, window: 0.1, seed: 0, speed: SpeedOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub m_resultant: usize,
    pub m_counting: usize,
    pub fit_residuals: Vec<f64>,
    pub sigma_fits: Vec<f64>,
    /// |det| of the (λ, t)-Jacobian of (φ, ∂_tφ) at the origin.
    pub lift_jacobian: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangencyRecord {
    pub h: usize,
    pub m: usize,
    pub blocks: Vec<(usize, Ratio<i64>)>,
    pub quadratic_positive_speed: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    h: usize,
    m: usize,
    blocks: Vec<(usize, String)>,
    quadratic_positive_speed: bool,
    diagnostics: Diagnostics,
}

impl Serialize for TangencyRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RecordJson {
            h: self.h,
            m: self.m,
            blocks: self.blocks.iter().map(|(h, r)| (*h, format!("{}/{}", r.numer(), r.denom()))).collect(),
            quadratic_positive_speed: self.quadratic_positive_speed,
            diagnostics: self.diagnostics.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TangencyRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = RecordJson::deserialize(d)?;
        let blocks = j
            .blocks
            .iter()
            .map(|(h, s)| {
                let (p, q) = s.split_once('/').unwrap_or((s.as_str(), "1"));
                let p: i64 = p.trim().parse().map_err(serde::de::Error::custom)?;
                let q: i64 = q.trim().parse().map_err(serde::de::Error::custom)?;
                if q == 0 {
                    return Err(serde::de::Error::custom("zero denominator"));
                }
                Ok((*h, Ratio::new(p, q)))
            })
            .collect::<Result<Vec<_>, D::Error>>()?;
        Ok(TangencyRecord {
            h: j.h,
            m: j.m,
            blocks,
            quadratic_positive_speed: j.quadratic_positive_speed,
            diagnostics: j.diagnostics,
        })
    }
}

/// |det| of the Jacobian of `(φ, ∂_tφ)` in `(λ, t)` at the origin.
pub fn lift_jacobian(phi: &TruncatedSeries2) -> f64 {
    let a = phi.coeff(1, 0);
    let b = phi.coeff(0, 1);
    let c = phi.coeff(1, 1);
    let d = phi.coeff(0, 2) * 2.0;
    (a * d - b * c).norm()
}

pub fn classify_unfolding(germ: &UnfoldingGerm, opts: &ClassifyOptions) -> Result<TangencyRecord, GermError> {
    let h = germ.order()?;
    let m_res = multiplicity_resultant(germ)?;
    let count = multiplicity_counting(germ, opts.eps, opts.window, opts.seed)?;
    if count.m != m_res {
        return Err(GermError::Disagreement { resultant: m_res, counting: count.m });
    }
    let m = m_res;
    let speed = speed_exponents(germ, &opts.speed)?;
    let total: usize = speed.blocks.iter().map(|b| b.size).sum();
    let weighted: Ratio<i64> = speed.blocks.iter().map(|b| b.sigma * b.size as i64).sum();
    if total != h || weighted != Ratio::from_integer(m as i64) {
        return Err(GermError::Inconsistent { m, sum: weighted.to_string() });
    }
    let lift = lift_jacobian(&germ.phi);
    if h == 1 {
        let scale = germ.phi.magnitude().powi(2);
        let nonsingular = lift > 1e-10 * scale;
        if nonsingular != (m == 1) {
            return Err(GermError::Transversality { m, det: lift });
        }
    }
    Ok(TangencyRecord {
        h,
        m,
        blocks: speed.blocks.iter().map(|b| (b.size, b.sigma)).collect(),
        quadratic_positive_speed: h == 1 && m == 1,
        diagnostics: Diagnostics {
            m_resultant: m_res,
            m_counting: count.m,
            fit_residuals: speed.blocks.iter().map(|b| b.fit.max_residual).collect(),
            sigma_fits: speed.blocks.iter().map(|b| b.sigma_fit).collect(),
            lift_jacobian: lift,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn germ(d: usize, t: &[(usize, usize, f64)]) -> UnfoldingGerm {
        UnfoldingGerm::from_terms(d, t).unwrap()
    }

    #[test]
    fn orders() {
        assert_eq!(order_of_tangency(&TruncatedSeries1::from_real(&[0.0, 0.0, 1.0])).unwrap(), 1);
        assert_eq!(order_of_tangency(&TruncatedSeries1::from_real(&[0.0, 0.0, 0.0, 0.0, 5.0, -1.0])).unwrap(), 3);
        assert_eq!(order_of_tangency(&TruncatedSeries1::from_real(&[0.0, 0.0, 0.0, 1.0, 1.0])).unwrap(), 2);
        assert!(matches!(
            order_of_tangency(&TruncatedSeries1::zero(4)),
            Err(GermError::OrderExceedsTruncation(4))
        ));
    }

    #[test]
    fn berkowitz_matches_lu() {
        let a = vec![
            vec![C64::new(2.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.5, 0.0)],
            vec![C64::new(0.3, 0.0), C64::new(1.0, -2.0), C64::new(4.0, 0.0)],
            vec![C64::new(-1.0, 0.0), C64::new(0.0, 1.0), C64::new(3.0, 0.5)],
        ];
        let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
        let d = berkowitz_det(&a, &ONE);
        assert!((d - m.determinant()).norm() < 1e-12);
    }

    #[test]
    fn resultant_examples() {
        assert_eq!(multiplicity_resultant(&germ(3, &[(0, 2, 1.0), (1, 0, 1.0)])).unwrap(), 1);
        assert_eq!(multiplicity_resultant(&germ(3, &[(0, 3, 1.0), (1, 0, 1.0)])).unwrap(), 2);
        assert_eq!(multiplicity_resultant(&germ(3, &[(0, 3, 1.0), (3, 0, 1.0)])).unwrap(), 6);
    }

    #[test]
    fn persistent_tangency_is_reported() {
        let g = germ(3, &[(0, 2, 1.0), (1, 2, 1.0)]);
        assert!(matches!(multiplicity_resultant(&g), Err(GermError::PersistentTangency(_))));
    }

    #[test]
    fn counting_examples() {
        assert_eq!(multiplicity_counting(&germ(3, &[(0, 2, 1.0), (1, 0, 1.0)]), 1e-9, 0.1, 1).unwrap().m, 1);
        assert_eq!(multiplicity_counting(&germ(3, &[(0, 2, 1.0), (2, 0, 1.0)]), 1e-9, 0.1, 1).unwrap().m, 2);
        assert_eq!(multiplicity_counting(&germ(3, &[(0, 3, 1.0), (2, 0, 1.0)]), 1e-9, 0.1, 1).unwrap().m, 4);
    }

    #[test]
    fn speed_examples() {
        let s = speed_exponents(&germ(3, &[(0, 2, 1.0), (1, 0, 1.0)]), &SpeedOptions::default()).unwrap();
        assert_eq!(s.blocks.iter().map(|b| (b.size, b.sigma)).collect::<Vec<_>>(), vec![(1, Ratio::from(1))]);
        let s = speed_exponents(&germ(3, &[(0, 2, 1.0), (2, 0, 1.0)]), &SpeedOptions::default()).unwrap();
        assert_eq!(s.blocks.iter().map(|b| (b.size, b.sigma)).collect::<Vec<_>>(), vec![(1, Ratio::from(2))]);
        let g = germ(4, &[(0, 3, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let s = speed_exponents(&g, &SpeedOptions::default()).unwrap();
        assert_eq!(s.blocks.iter().map(|b| (b.size, b.sigma)).collect::<Vec<_>>(), vec![(2, Ratio::from(1))]);
        let sec = secondary_exponent(&g, &s.blocks[0], &s.radii).unwrap();
        assert!((sec.slope - 1.5).abs() < 0.03, "{}", sec.slope);
    }

    #[test]
    fn classification_examples() {
        let o = ClassifyOptions::default();
        let r = classify_unfolding(&germ(4, &[(0, 2, 2.0), (1, 0, -0.5), (1, 1, 0.3), (0, 3, 1.0)]), &o).unwrap();
        assert_eq!((r.h, r.m, r.quadratic_positive_speed), (1, 1, true));
        let r = classify_unfolding(&germ(3, &[(0, 3, 1.0), (1, 0, 1.0)]), &o).unwrap();
        assert_eq!((r.h, r.m, r.blocks.clone(), r.quadratic_positive_speed), (2, 2, vec![(2, Ratio::from(1))], false));
        let r = classify_unfolding(&germ(3, &[(0, 2, 1.0), (2, 0, 1.0)]), &o).unwrap();
        assert_eq!((r.h, r.m, r.blocks.clone(), r.quadratic_positive_speed), (1, 2, vec![(1, Ratio::from(2))], false));
        let js = serde_json::to_value(&r).unwrap();
        assert_eq!(js["blocks"], serde_json::json!([[1, "2/1"]]));
        let back: TangencyRecord = serde_json::from_value(js).unwrap();
        assert_eq!(back, r);
    }
}

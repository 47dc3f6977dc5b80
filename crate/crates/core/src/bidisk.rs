//! Horizontal and vertical objects in the unit bidisk: degrees, tangencies,
//! intersections, graph transforms and horseshoe stable graphs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::henon::{HenonError, LocalGerm, PlaneMap, PolynomialAutomorphism};
use crate::poly::{self, PolyError};
use crate::ring::C64;
use crate::series::{SeriesError, TruncatedSeries1, TruncatedSeries2};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative tolerance for intersection multiplicities.
pub const MULTIPLICITY_TOL: f64 = 1e-8;
/// Default polynomial degree of fitted graphs.
pub const GRAPH_DEGREE: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BidiskError {
    #[error("object is not strictly inside the bidisk (slack {0:.3e})")]
    NotContained(f64),
    #[error("degree probes disagree: {0:?}")]
    InconsistentDegree(Vec<usize>),
    #[error("tangency or intersection on the domain boundary near z = {0}")]
    Boundary(C64),
    #[error("graph escapes the bidisk at step {step} (slack {slack:.3e})")]
    Escape { step: usize, slack: f64 },
    #[error("collocation residual {0:.3e} above tolerance")]
    Collocation(f64),
    #[error("no crossing: {0}")]
    NoCrossing(String),
    #[error("graphs {0} and {1} intersect (gap {2:.3e})")]
    NotDisjoint(usize, usize, f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Henon(#[from] HenonError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `y = g(x)`
    Horizontal,
    /// `x = γ(y)`
    Vertical,
}

/// A graph over the unit disk, with sup-norms of its first derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphInBidisk {
    pub orientation: Orientation,
    pub g: TruncatedSeries1,
    pub derivative_norms: Vec<f64>,
    pub slack: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub code: Vec<u8>,
}

/// `Σ_{i≥j} |c_i| i!/(i−j)!`, which bounds `sup_D |g^{(j)}|`.
pub fn derivative_norm(g: &TruncatedSeries1, j: usize) -> f64 {
    g.coeffs()
        .iter()
        .enumerate()
        .skip(j)
        .map(|(i, c)| c.norm() * ((i - j + 1)..=i).map(|k| k as f64).product::<f64>())
        .sum()
}

impl GraphInBidisk {
    pub fn new(orientation: Orientation, g: TruncatedSeries1, ell: usize) -> Result<Self, BidiskError> {
        let sup = derivative_norm(&g, 0) + g.tail();
        let slack = 1.0 - sup;
        if !(slack > 0.0) {
            return Err(BidiskError::NotContained(slack));
        }
        let derivative_norms = (0..=ell).map(|j| derivative_norm(&g, j)).collect();
        Ok(Self { orientation, g: g.with_radius(1.0), derivative_norms, slack, code: vec![] })
    }

    pub fn horizontal(g: TruncatedSeries1, ell: usize) -> Result<Self, BidiskError> {
        Self::new(Orientation::Horizontal, g, ell)
    }

    pub fn vertical(g: TruncatedSeries1, ell: usize) -> Result<Self, BidiskError> {
        Self::new(Orientation::Vertical, g, ell)
    }

    pub fn with_code(mut self, code: Vec<u8>) -> Self {
        self.code = code;
        self
    }

    pub fn eval(&self, t: C64) -> C64 {
        self.g.eval(t)
    }

    /// Largest `|g^{(j)}|` over `samples` points of the unit circle.
    pub fn sampled_derivative_max(&self, j: usize, samples: usize) -> f64 {
        let mut p = self.g.coeffs().to_vec();
        for _ in 0..j {
            p = poly::derive(&p);
        }
        (0..samples)
            .map(|k| poly::eval(&p, C64::from_polar(1.0, 2.0 * PI * k as f64 / samples as f64)).norm())
            .fold(0.0, f64::max)
    }
}

/// Minimum of `|γ_a − γ_b|` over a polar grid of the closed unit disk.
pub fn min_gap(a: &GraphInBidisk, b: &GraphInBidisk) -> f64 {
    let mut m = (a.eval(ZERO) - b.eval(ZERO)).norm();
    for ring in 1..=4 {
        let r = ring as f64 / 4.0;
        for k in 0..64 {
            let t = C64::from_polar(r, 2.0 * PI * k as f64 / 64.0);
            m = m.min((a.eval(t) - b.eval(t)).norm());
        }
    }
    m
}

/// Parameterized curve `z ↦ (π₁(z), π₂(z))`, `|z| < domain`; the horizontal
/// piece is where `|π₁| < 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizontalManifold {
    pub p1: TruncatedSeries1,
    pub p2: TruncatedSeries1,
    pub domain: f64,
    pub slack: f64,
}

impl HorizontalManifold {
    pub fn new(p1: TruncatedSeries1, p2: TruncatedSeries1, domain: f64) -> Result<Self, BidiskError> {
        let sup = (0..256)
            .map(|k| p2.eval(C64::from_polar(domain, 2.0 * PI * k as f64 / 256.0)).norm())
            .fold(0.0, f64::max);
        let slack = 1.0 - sup - p2.tail();
        if !(slack > 0.0) {
            return Err(BidiskError::NotContained(slack));
        }
        Ok(Self { p1, p2, domain, slack })
    }

    pub fn from_polys(p1: &[f64], p2: &[f64]) -> Result<Self, BidiskError> {
        Self::new(TruncatedSeries1::from_real(p1), TruncatedSeries1::from_real(p2), 1.0)
    }

    pub fn point(&self, z: C64) -> [C64; 2] {
        [self.p1.eval(z), self.p2.eval(z)]
    }

    fn inside(&self, z: C64) -> Result<bool, BidiskError> {
        let x = self.p1.eval(z).norm();
        if (x - 1.0).abs() < 1e-9 || (z.norm() - self.domain).abs() < 1e-9 {
            return Err(BidiskError::Boundary(z));
        }
        Ok(x < 1.0 && z.norm() < self.domain)
    }

    /// Distinct roots of `p` on the horizontal piece, with multiplicity.
    fn roots_inside(&self, p: &[C64]) -> Result<Vec<(C64, usize)>, BidiskError> {
        let p = poly::trim(p, 1e-14);
        let near: Vec<C64> = poly::roots(&p)?.into_iter().filter(|z| z.norm() < 2.0 * self.domain).collect();
        let mut out = Vec::new();
        for (z, k) in poly::cluster(&near, 1e-5 * self.domain) {
            let z = poly::refine_cluster(&p, z, k);
            if !self.inside(z)? {
                continue;
            }
            let order = poly::vanishing_order(&p, z, MULTIPLICITY_TOL);
            if order != k {
                return Err(PolyError::Ambiguous { center: z, cluster: k, order }.into());
            }
            out.push((z, k));
        }
        Ok(out)
    }
}

/// Number of preimages under `π₁` of random regular values, checked to be
/// the same across `probes` draws.
pub fn horizontal_degree(v: &HorizontalManifold, probes: usize, seed: u64) -> Result<usize, BidiskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(probes);
    for _ in 0..probes.max(1) {
        let x0 = C64::from_polar(0.5 * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI));
        let mut p = v.p1.coeffs().to_vec();
        p[0] -= x0;
        let n = poly::roots(&p)?.into_iter().filter(|z| z.norm() < v.domain).count();
        counts.push(n);
    }
    if counts.iter().all(|&c| c == counts[0]) {
        Ok(counts[0])
    } else {
        Err(BidiskError::InconsistentDegree(counts))
    }
}

/// Zeros of `π₁′` on the horizontal piece with their orders.
pub fn vertical_tangencies(v: &HorizontalManifold) -> Result<Vec<(C64, usize)>, BidiskError> {
    let d = poly::derive(v.p1.coeffs());
    if d.iter().all(|c| *c == ZERO) {
        return Ok(vec![]);
    }
    v.roots_inside(&d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub z: C64,
    pub point: [C64; 2],
    pub multiplicity: usize,
}

/// Intersections of `V` with the vertical graph `x = γ(y)`, as the zeros of
/// `π₁(z) − γ(π₂(z))`.
pub fn intersect_graphs(v: &HorizontalManifold, w: &GraphInBidisk) -> Result<Vec<Intersection>, BidiskError> {
    if w.orientation != Orientation::Vertical {
        return Err(BidiskError::Unsupported("intersect_graphs expects a vertical graph".into()));
    }
    let d = v.p1.degree().max(v.p2.degree() * w.g.degree());
    let inner = TruncatedSeries1::polynomial(v.p2.coeffs().to_vec());
    let comp = poly::compose(w.g.coeffs(), inner.coeffs());
    let mut f = poly::sub(v.p1.coeffs(), &comp);
    f.truncate(d + 1);
    Ok(v
        .roots_inside(&f)?
        .into_iter()
        .map(|(z, k)| Intersection { z, point: v.point(z), multiplicity: k })
        .collect())
}

/// Tangencies of `V` with a family of vertical graphs, counted with
/// multiplicity (`Σ (m − 1)` over intersection points).
pub fn tangency_count(v: &HorizontalManifold, family: &[GraphInBidisk]) -> Result<usize, BidiskError> {
    let mut total = 0;
    for w in family {
        total += intersect_graphs(v, w)?.iter().map(|i| i.multiplicity - 1).sum::<usize>();
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Riemann–Hurwitz trials

/// Random horizontal manifold `z ↦ (Π(z − a_i), q(z))` of degree `d`, with
/// roots `|a_i| ≤ 0.3`, over the disk `|z| < 1.3`.
pub fn random_horizontal(d: usize, rng: &mut impl Rng) -> HorizontalManifold {
    loop {
        let mut p = vec![ONE];
        for _ in 0..d {
            let a = C64::from_polar(0.3 * rng.gen::<f64>(), rng.gen_range(0.0..2.0 * PI));
            p = poly::mul(&p, &[-a, ONE]);
        }
        let q: Vec<C64> = (0..3)
            .map(|k| C64::from_polar(0.25 * rng.gen::<f64>() / 1.3f64.powi(k), rng.gen_range(0.0..2.0 * PI)))
            .collect();
        let v = HorizontalManifold::new(TruncatedSeries1::polynomial(p), TruncatedSeries1::polynomial(q), 1.3);
        if let Ok(v) = v {
            return v;
        }
    }
}

/// Up to `count` disjoint vertical graphs `x = c_k + δ(y)` sharing `δ`, some of
/// them passing through critical values of `π₁ − δ∘π₂` so that tangencies occur.
pub fn random_vertical_family(v: &HorizontalManifold, count: usize, rng: &mut impl Rng) -> Vec<GraphInBidisk> {
    let kappa = C64::from_polar(0.1 * rng.gen::<f64>(), rng.gen_range(0.0..2.0 * PI));
    let mu = C64::from_polar(0.1 * rng.gen::<f64>(), rng.gen_range(0.0..2.0 * PI));
    let delta = [ZERO, kappa, mu];
    let sup_delta = kappa.norm() + mu.norm();
    let g = poly::sub(v.p1.coeffs(), &poly::compose(&delta, v.p2.coeffs()));
    let mut cs: Vec<C64> = Vec::new();
    if let Ok(crit) = poly::roots(&poly::derive(&g)) {
        for c in crit {
            if c.norm() < v.domain && v.p1.eval(c).norm() < 0.98 && rng.gen_bool(0.7) {
                cs.push(poly::eval(&g, c));
            }
        }
    }
    while cs.len() < count {
        cs.push(C64::from_polar(0.8 * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI)));
    }
    let mut out: Vec<GraphInBidisk> = Vec::new();
    for c in cs {
        if out.len() >= count {
            break;
        }
        if c.norm() + sup_delta >= 0.97 || out.iter().any(|w| (w.g.coeff(0) - c).norm() < 1e-3) {
            continue;
        }
        let g = TruncatedSeries1::polynomial(vec![c, kappa, mu]);
        if let Ok(w) = GraphInBidisk::vertical(g, 1) {
            out.push(w);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhReport {
    pub trials: usize,
    pub satisfied: usize,
    pub tangent_trials: usize,
    pub max_ratio: f64,
    pub failures: Vec<String>,
}

/// Tangency count versus the `d − 1` bound over random trials with `d ≤ max_degree`.
pub fn rh_check(trials: usize, max_degree: usize, seed: u64) -> RhReport {
    let results: Vec<Result<(usize, usize), String>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let d = rng.gen_range(1..=max_degree.max(1));
            let v = random_horizontal(d, &mut rng);
            let n = rng.gen_range(1..=8);
            let fam = random_vertical_family(&v, n, &mut rng);
            let deg = horizontal_degree(&v, 3, rng.gen()).map_err(|e| format!("trial {i}: {e}"))?;
            if deg != d {
                return Err(format!("trial {i}: degree {deg}, expected {d}"));
            }
            let t = tangency_count(&v, &fam).map_err(|e| format!("trial {i}: {e}"))?;
            Ok((d, t))
        })
        .collect();
    let mut rep = RhReport { trials, satisfied: 0, tangent_trials: 0, max_ratio: 0.0, failures: vec![] };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((d, t)) => {
                if t + 1 <= d {
                    rep.satisfied += 1;
                } else {
                    rep.failures.push(format!("trial {i}: {t} tangencies for degree {d}"));
                }
                if t > 0 {
                    rep.tangent_trials += 1;
                    rep.max_ratio = rep.max_ratio.max(t as f64 / (d - 1).max(1) as f64);
                }
            }
            Err(e) => rep.failures.push(e),
        }
    }
    rep
}

/// Number of transverse points after translating the vertical graph by `offset`.
pub fn splitting_count(v: &HorizontalManifold, w: &GraphInBidisk, offset: C64) -> Result<(usize, bool), BidiskError> {
    let mut g = w.g.clone();
    g.set_coeff(0, g.coeff(0) + offset);
    let moved = GraphInBidisk::new(w.orientation, g, 1)?;
    let pts = intersect_graphs(v, &moved)?;
    Ok((pts.len(), pts.iter().all(|p| p.multiplicity == 1)))
}

// ---------------------------------------------------------------------------
// Graph transform

fn swap(s: &TruncatedSeries2) -> TruncatedSeries2 {
    let terms: Vec<_> = s.terms().map(|(i, j, c)| (j, i, c)).collect();
    let r = s.radii();
    TruncatedSeries2::from_terms(s.degree(), &terms).with_radii([r[1], r[0]]).with_tail(s.tail())
}

/// One forward step on a horizontal graph `y = g(x)`: the image graph is
/// `x′ ↦ F₂(x, g(x))` with `x` solved from `x′ = F₁(x, g(x))` by reversion.
fn transform_step(f1: &TruncatedSeries2, f2: &TruncatedSeries2, g: &TruncatedSeries1) -> Result<TruncatedSeries1, BidiskError> {
    let d = g.degree();
    let x = TruncatedSeries1::variable(d).with_radius(g.radius());
    let xs = f1.eval_ring(&x, g);
    let ys = f2.eval_ring(&x, g);
    let a0 = xs.coeff(0);
    let mut b = xs;
    b.set_coeff(0, ZERO);
    let binv = b.reversion()?;
    let mut shift = TruncatedSeries1::variable(d);
    shift.set_coeff(0, -a0);
    let inner = binv.compose(&shift)?;
    if inner.radius() < 1.0 {
        return Err(BidiskError::Escape { step: 0, slack: inner.radius() - 1.0 });
    }
    Ok(ys.compose(&inner.with_radius(1.0))?.with_radius(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformHistory {
    pub graph: GraphInBidisk,
    /// `norms[n][j] = ‖γ_n^{(j)}‖` for `n = 0..=N`, `j ≤ ℓ`.
    pub norms: Vec<Vec<f64>>,
    pub tails: Vec<f64>,
}

/// `n` steps of the graph transform: forward images of a horizontal graph, or
/// pull-backs (images under `f⁻¹`) of a vertical graph.
pub fn graph_transform_n(map: &LocalGerm, gamma: &GraphInBidisk, n: usize, ell: usize) -> Result<TransformHistory, BidiskError> {
    let (f1, f2) = match gamma.orientation {
        Orientation::Horizontal => (map.f1.clone(), map.f2.clone()),
        Orientation::Vertical => {
            let inv = map.invert()?;
            (swap(&inv.f2), swap(&inv.f1))
        }
    };
    let norms0: Vec<f64> = (0..=ell).map(|j| derivative_norm(&gamma.g, j)).collect();
    let mut norms = vec![norms0];
    let mut tails = vec![gamma.g.tail()];
    let mut g = gamma.g.clone();
    for step in 1..=n {
        g = transform_step(&f1, &f2, &g).map_err(|e| match e {
            BidiskError::Escape { slack, .. } => BidiskError::Escape { step, slack },
            other => other,
        })?;
        let slack = 1.0 - derivative_norm(&g, 0) - g.tail();
        if !(slack > 0.0) {
            return Err(BidiskError::Escape { step, slack });
        }
        norms.push((0..=ell).map(|j| derivative_norm(&g, j)).collect());
        tails.push(g.tail());
    }
    let graph = GraphInBidisk::new(gamma.orientation, g, ell)?.with_code(gamma.code.clone());
    Ok(TransformHistory { graph, norms, tails })
}

// ---------------------------------------------------------------------------
// Horseshoe

/// Bidisk `{|z| ≤ R, |w| ≤ R}` in the map's coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub radius: f64,
}

struct Crossing<'a> {
    p: &'a [C64],
    a: C64,
    r: f64,
    /// Zeros of `P`; branch `k` of `P⁻¹` is the one through `zeros[k]`.
    zeros: Vec<C64>,
}

impl Crossing<'_> {
    /// `ζ` with `P(ζ) = v` on branch `k`, by continuation from `zeros[k]`.
    fn branch(&self, k: usize, v: C64, guess: Option<C64>) -> C64 {
        let dp = poly::derive(self.p);
        let newton = |mut z: C64, target: C64, iters: usize| {
            for _ in 0..iters {
                let step = (poly::eval(self.p, z) - target) / poly::eval(&dp, z);
                z -= step;
                if step.norm() < 1e-15 * (1.0 + z.norm()) {
                    break;
                }
            }
            z
        };
        if let Some(g) = guess {
            return newton(g, v, 30);
        }
        let mut z = self.zeros[k];
        let steps = 16;
        for i in 1..=steps {
            z = newton(z, v * (i as f64 / steps as f64), 8);
        }
        newton(z, v, 30)
    }
}

/// Checks that a single-factor map `(z, w) ↦ (P(z) + a w, z)` is a crossed
/// mapping of degree `deg P` on the frame, and returns the branch count.
pub fn verify_crossing(map: &PolynomialAutomorphism, frame: Frame) -> Result<usize, BidiskError> {
    Ok(crossing(map, frame)?.zeros.len())
}

fn crossing(map: &PolynomialAutomorphism, frame: Frame) -> Result<Crossing<'_>, BidiskError> {
    let [f] = map.factors() else {
        return Err(BidiskError::Unsupported("horseshoe frames need a single Hénon factor".into()));
    };
    let p = f.poly();
    let a = f.a();
    let r = frame.radius;
    let reach = r * (1.0 + a.norm());
    // no critical value of P within the union of the target disks D(−a w, R)
    for c in poly::roots(&poly::derive(p))? {
        let v = poly::eval(p, c).norm();
        if v <= reach {
            return Err(BidiskError::NoCrossing(format!("critical value {v:.4} inside radius {reach:.4}")));
        }
    }
    // the vertical boundary |z| = R is mapped outside the frame
    let worst = (0..720)
        .map(|k| poly::eval(p, C64::from_polar(r, 2.0 * PI * k as f64 / 720.0)).norm() - a.norm() * r)
        .fold(f64::INFINITY, f64::min);
    if worst <= r {
        return Err(BidiskError::NoCrossing(format!("boundary image reaches {worst:.4} ≤ R = {r:.4}")));
    }
    let mut zeros = poly::roots(p)?;
    // components of the preimage must lie inside the frame, not outside it
    if let Some(z) = zeros.iter().find(|z| z.norm() >= r) {
        return Err(BidiskError::NoCrossing(format!("zero {z} of P outside the frame")));
    }
    zeros.sort_by(|x, y| (x.re, x.im).partial_cmp(&(y.re, y.im)).unwrap());
    Ok(Crossing { p, a, r, zeros })
}

/// Smallest frame radius for which the crossing tests pass, searched on a
/// grid between the escape radius and the critical-value limit.
pub fn default_frame(map: &PolynomialAutomorphism) -> Result<Frame, BidiskError> {
    let ok: Vec<f64> = (1..400)
        .map(|k| 0.05 * k as f64)
        .filter(|&r| verify_crossing(map, Frame { radius: r }).is_ok())
        .collect();
    match (ok.first(), ok.last()) {
        (Some(lo), Some(hi)) => Ok(Frame { radius: 0.5 * (lo + hi) }),
        _ => Err(BidiskError::NoCrossing("no admissible frame radius".into())),
    }
}

fn words(base: usize, len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|w| {
                (0..base).map(move |k| {
                    let mut v = w.clone();
                    v.push(k as u8);
                    v
                })
            })
            .collect();
    }
    out
}

/// Fixed points of `f^n` in the frame, one per itinerary word, by
/// Gauss–Seidel iteration of inverse branches along the orbit.
pub fn horseshoe_periodic_points(map: &PolynomialAutomorphism, frame: Frame, n: usize) -> Result<Vec<[C64; 2]>, BidiskError> {
    let cr = crossing(map, frame)?;
    let d = cr.zeros.len();
    let ws = words(d, n);
    let pts: Vec<Result<[C64; 2], BidiskError>> = ws
        .par_iter()
        .map(|word| {
            let mut z: Vec<C64> = word.iter().map(|&k| cr.zeros[k as usize]).collect();
            for _ in 0..500 {
                let mut change: f64 = 0.0;
                for i in 0..n {
                    let next = z[(i + 1) % n];
                    let prev = z[(i + n - 1) % n];
                    let v = next - cr.a * prev;
                    let new = cr.branch(word[i] as usize, v, None);
                    change = change.max((new - z[i]).norm());
                    z[i] = new;
                }
                if change < 1e-14 {
                    break;
                }
            }
            let p = [z[0], z[n - 1]];
            let q = map.iterate(p, n);
            let res = (q[0] - p[0]).norm() + (q[1] - p[1]).norm();
            if res > 1e-8 * (1.0 + p[0].norm()) {
                return Err(BidiskError::Collocation(res));
            }
            Ok(p)
        })
        .collect();
    pts.into_iter().collect()
}

/// Vertical graphs `z = γ(w)` of points following a word of length `L` under
/// forward iteration, as pull-backs of `{z = 0}` along the word. Graphs are
/// returned in the normalized coordinates `(z, w)/R`, lexicographically.
pub fn horseshoe_stable_graphs(
    map: &PolynomialAutomorphism,
    frame: Frame,
    len: usize,
    degree: usize,
) -> Result<Vec<GraphInBidisk>, BidiskError> {
    let cr = crossing(map, frame)?;
    let d = cr.zeros.len();
    let m = (2 * degree + 2).next_power_of_two().max(16);
    let r = cr.r;
    let nodes: Vec<C64> = (0..m).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
    let zero = TruncatedSeries1::zero(degree);
    // level-by-level pull-backs: graphs for words of length ℓ from length ℓ−1
    let mut level: Vec<(Vec<u8>, TruncatedSeries1)> = vec![(vec![], zero)];
    for _ in 0..len {
        let next: Vec<Result<(Vec<u8>, TruncatedSeries1), BidiskError>> = level
            .par_iter()
            .flat_map_iter(|(w, g)| (0..d).map(move |k| (k, w, g)))
            .map(|(k, w, g)| {
                let solve = |y: C64| -> C64 {
                    let wv = r * y;
                    let mut z = cr.branch(k, r * g.eval(ZERO) - cr.a * wv, None);
                    for _ in 0..200 {
                        let v = r * g.eval(z / r) - cr.a * wv;
                        let nz = cr.branch(k, v, Some(z));
                        let ch = (nz - z).norm();
                        z = nz;
                        if ch < 1e-15 * (1.0 + z.norm()) {
                            break;
                        }
                    }
                    z / r
                };
                let vals: Vec<C64> = nodes.iter().map(|&y| solve(y)).collect();
                let coeffs: Vec<C64> = (0..=degree)
                    .map(|j| {
                        nodes.iter().zip(&vals).map(|(y, v)| v * y.powu(j as u32).conj()).sum::<C64>() / m as f64
                    })
                    .collect();
                let fit = TruncatedSeries1::polynomial(coeffs);
                let mut res: f64 = 0.0;
                for i in 0..m {
                    for rad in [1.0, 0.5] {
                        let y = C64::from_polar(rad, 2.0 * PI * (i as f64 + 0.5) / m as f64);
                        let z = r * fit.eval(y);
                        let lhs = poly::eval(cr.p, z) + cr.a * r * y - r * g.eval(z / r);
                        res = res.max(lhs.norm() / r);
                    }
                }
                if res > 1e-8 {
                    return Err(BidiskError::Collocation(res));
                }
                let mut code = vec![k as u8];
                code.extend_from_slice(w);
                Ok((code, fit.with_tail(res)))
            })
            .collect();
        level = next.into_iter().collect::<Result<_, _>>()?;
    }
    level.sort_by(|a, b| a.0.cmp(&b.0));
    let graphs: Vec<GraphInBidisk> = level
        .into_iter()
        .map(|(code, g)| GraphInBidisk::vertical(g, 2).map(|x| x.with_code(code)))
        .collect::<Result<_, _>>()?;
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            let gap = min_gap(&graphs[i], &graphs[j]);
            if gap <= 10.0 * (graphs[i].g.tail() + graphs[j].g.tail()) {
                return Err(BidiskError::NotDisjoint(i, j, gap));
            }
        }
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn degrees() {
        let v = HorizontalManifold::from_polys(&[0.0, 1.0], &[0.0, 0.5]).unwrap();
        assert_eq!(horizontal_degree(&v, 5, 1).unwrap(), 1);
        let v = HorizontalManifold::from_polys(&[0.0, 0.0, 1.0], &[0.0, 0.5]).unwrap();
        assert_eq!(horizontal_degree(&v, 5, 1).unwrap(), 2);
        let v = HorizontalManifold::from_polys(&[0.0, -0.1, 0.0, 1.0], &[0.0, 1.0 / 3.0]).unwrap();
        assert_eq!(horizontal_degree(&v, 5, 1).unwrap(), 3);
    }

    #[test]
    fn tangencies() {
        let v = HorizontalManifold::from_polys(&[0.0, 0.0, 1.0], &[0.0, 0.5]).unwrap();
        let t = vertical_tangencies(&v).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].0.norm() < 1e-12 && t[0].1 == 1);
        let v = HorizontalManifold::from_polys(&[0.0, 1.0], &[0.0, 0.0, 0.5]).unwrap();
        assert!(vertical_tangencies(&v).unwrap().is_empty());
        let v = HorizontalManifold::from_polys(&[0.0, 0.0, 0.0, 1.0], &[0.0, 1.0 / 3.0]).unwrap();
        let t = vertical_tangencies(&v).unwrap();
        assert_eq!(t.iter().map(|x| x.1).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn intersections() {
        let v = HorizontalManifold::from_polys(&[0.0, 0.0, 1.0], &[0.0, 0.5]).unwrap();
        let w = GraphInBidisk::vertical(TruncatedSeries1::from_real(&[0.0]), 1).unwrap();
        let p = intersect_graphs(&v, &w).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].multiplicity, 2);
        let w = GraphInBidisk::vertical(TruncatedSeries1::from_real(&[1e-4]), 1).unwrap();
        let mut p = intersect_graphs(&v, &w).unwrap();
        p.sort_by(|a, b| a.z.re.partial_cmp(&b.z.re).unwrap());
        assert_eq!(p.iter().map(|i| i.multiplicity).collect::<Vec<_>>(), vec![1, 1]);
        assert!((p[0].z + 0.01).norm() < 1e-12 && (p[1].z - 0.01).norm() < 1e-12);
        // cubic against a generic vertical graph: compare with the cubic's roots
        let v = HorizontalManifold::from_polys(&[0.0, -0.1, 0.0, 1.0], &[0.0, 1.0 / 3.0]).unwrap();
        let w = GraphInBidisk::vertical(TruncatedSeries1::from_real(&[0.05, 0.2]), 1).unwrap();
        let p = intersect_graphs(&v, &w).unwrap();
        assert_eq!(p.iter().map(|i| i.multiplicity).sum::<usize>(), 3);
        for i in &p {
            let z = i.z;
            assert!((z * z * z - 0.1 * z - 0.05 - 0.2 * z / 3.0).norm() < 1e-12);
        }
    }

    #[test]
    fn linear_graph_transform_is_exact() {
        let f = LocalGerm::linear(c(2.0), c(0.5), 3);
        // x² itself touches the boundary; its half has the same decay
        let g = GraphInBidisk::horizontal(TruncatedSeries1::monomial(2, c(0.5), GRAPH_DEGREE), 3).unwrap();
        let h = graph_transform_n(&f, &g, 5, 3).unwrap();
        assert!((h.norms[5][2] - 8f64.powi(-5)).abs() < 1e-12 * 8f64.powi(-5));
        let g = GraphInBidisk::horizontal(TruncatedSeries1::constant(c(0.3), GRAPH_DEGREE), 3).unwrap();
        let h = graph_transform_n(&f, &g, 4, 3).unwrap();
        assert!((h.graph.g.coeff(0) - c(0.3 / 16.0)).norm() < 1e-15);
        assert!(h.norms[4][1..].iter().all(|&x| x < 1e-15));
    }

    #[test]
    fn pullback_of_vertical_graph() {
        let f = LocalGerm::linear(c(2.0), c(0.5), 3);
        let g = GraphInBidisk::vertical(TruncatedSeries1::monomial(2, c(0.5), GRAPH_DEGREE), 2).unwrap();
        let h = graph_transform_n(&f, &g, 3, 2).unwrap();
        // f⁻¹ = (x/2, 2y) sends x = γ(y) to x = γ(y/2)/2
        let expect = 0.5 * 0.5f64.powi(3) * 0.25f64.powi(3);
        assert!((h.graph.g.coeff(2).re - expect).abs() < 1e-15);
    }

    #[test]
    fn recorded_norms_dominate_samples() {
        let g = GraphInBidisk::vertical(TruncatedSeries1::from_real(&[0.1, -0.2, 0.05, 0.01]), 3).unwrap();
        for j in 0..=3 {
            assert!(g.derivative_norms[j] >= g.sampled_derivative_max(j, 256) - 1e-15);
        }
    }

    #[test]
    fn crossing_frames() {
        let f = PolynomialAutomorphism::quadratic_real(0.1, -6.0);
        assert_eq!(verify_crossing(&f, Frame { radius: 4.0 }).unwrap(), 2);
        let g = PolynomialAutomorphism::quadratic_real(0.1, 0.0);
        assert!(matches!(verify_crossing(&g, Frame { radius: 4.0 }), Err(BidiskError::NoCrossing(_))));
        let fr = default_frame(&f).unwrap();
        assert!(fr.radius > 3.0 && fr.radius < 5.5);
    }

    #[test]
    fn horseshoe_small() {
        let f = PolynomialAutomorphism::quadratic_real(0.1, -6.0);
        let fr = Frame { radius: 4.0 };
        assert_eq!(horseshoe_periodic_points(&f, fr, 3).unwrap().len(), 8);
        let gs = horseshoe_stable_graphs(&f, fr, 3, 24).unwrap();
        assert_eq!(gs.len(), 8);
        assert_eq!(gs[5].code, vec![1, 0, 1]);
    }
}

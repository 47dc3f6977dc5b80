//! Parameter-space experiments: tangency detection in one-parameter families,
//! secondary tangency sequences and their scaling laws, constraint-curve
//! continuation, moduli profiles, type-change detection and the local
//! distance/return-index asymptotics near a saddle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidisk::{graph_transform_n, BidiskError, GraphInBidisk};
use crate::germ::{classify_unfolding, ClassifyOptions, GermError, TangencyRecord, UnfoldingGerm};
use crate::henon::{FamilyMember, HenonError, LocalGerm, ParametricFamily, PlaneMap};
use crate::linalg::{eig2, solve, solve2, Mat2, Vec2};
use crate::param::ParamPoly;
use crate::ring::{Ring, C64};
use crate::saddle::{detect_resonance, OrbitType, SaddleData, SaddleError};
use crate::series::{SeriesError, TruncatedSeries1, TruncatedSeries2};
use crate::stats::{linear_fit, snap_rational};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no tangency found for n = {n} in the window around |λ| = {predicted:.6e}")]
    MissingEvent { n: usize, predicted: f64 },
    #[error("need at least {need} events, got {got}")]
    TooFewEvents { need: usize, got: usize },
    #[error("|λ_n| is not strictly decreasing at n = {0}")]
    NonMonotone(usize),
    #[error("constraint Jacobian drops rank at {at:?} (σ_min/σ_max = {ratio:.3e})")]
    RankDrop { at: Vec<C64>, ratio: f64 },
    #[error("corrector failed after {halvings} step halvings at {at:?}")]
    StepFailure { at: Vec<C64>, halvings: usize },
    #[error("seed does not satisfy the constraint: residual {0:.3e}")]
    BadSeed(f64),
    #[error("lost track of a period-{period} point at grid cell {cell}")]
    TrackingLost { cell: usize, period: usize },
    #[error("saddle continuation failed at sample {index}: {reason}")]
    SaddleLost { index: usize, reason: String },
    #[error("backward orbit for n = {n} left the unit bidisk after {step} steps")]
    Escape { n: usize, step: usize },
    #[error(transparent)]
    Germ(#[from] GermError),
    #[error(transparent)]
    Saddle(#[from] SaddleError),
    #[error(transparent)]
    Henon(#[from] HenonError),
    #[error(transparent)]
    Bidisk(#[from] BidiskError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// Curve pairs

/// A λ-dependent unstable piece `x = Δu(λ, y)` against a λ-dependent vertical
/// graph `x = W(λ, y)`. The tangency equations use the scaled difference
/// `D = Δu·M(λ)^p − W`, which lets a pulled-back graph `x = α(λ) u_λ^{−n}` be
/// written as `W = α`, `M = u_λ`, `p = n` without division.
///
/// Polynomials use variables `λ_1..λ_dim` followed by `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePair {
    pub dim: usize,
    pub delta_u: ParamPoly,
    pub target: ParamPoly,
    pub scale: ParamPoly,
    pub power: u32,
    pub unstable_id: String,
    pub stable_id: String,
}

impl CurvePair {
    pub fn new(dim: usize, delta_u: ParamPoly, target: ParamPoly) -> Result<Self, ScanError> {
        if dim == 0 || dim >= crate::param::MAX_VARS {
            return Err(ScanError::Invalid(format!("parameter dimension {dim} not in 1..=2")));
        }
        Ok(Self {
            dim,
            delta_u,
            target,
            scale: ParamPoly::real(1.0),
            power: 0,
            unstable_id: "du".into(),
            stable_id: "w".into(),
        })
    }

    pub fn scaled(mut self, scale: ParamPoly, power: u32) -> Self {
        self.scale = scale;
        self.power = power;
        self
    }

    pub fn with_ids(mut self, unstable: &str, stable: &str) -> Self {
        self.unstable_id = unstable.into();
        self.stable_id = stable.into();
        self
    }

    pub fn difference(&self) -> ParamPoly {
        self.delta_u.mul(&self.scale.pow(self.power)).add(&self.target.neg())
    }

    /// `(λ, t) ↦ D(λ* + λ, y* + t)` as a two-variable series (one parameter only).
    pub fn germ_at(&self, lam: C64, y: C64, degree: usize) -> Result<TruncatedSeries2, ScanError> {
        if self.dim != 1 {
            return Err(ScanError::Invalid("local germs need a one-parameter pair".into()));
        }
        let l = TruncatedSeries2::var_x(degree).add_scalar(lam);
        let t = TruncatedSeries2::var_y(degree).add_scalar(y);
        Ok(self.difference().eval_ring(&[l, t.clone()], &t))
    }
}

/// Σ |c|·Π(|center_k| + radius_k)^e over the terms.
fn abs_bound(p: &ParamPoly, at: &[f64]) -> f64 {
    p.terms()
        .map(|(e, c)| {
            let mut v = c.norm();
            for (k, &q) in e.iter().enumerate() {
                if q > 0 {
                    v *= at[k].powi(q as i32);
                }
            }
            v
        })
        .sum()
}

struct Prepared {
    d: ParamPoly,
    dl: ParamPoly,
    dy: ParamPoly,
    dyl: ParamPoly,
    dyy: ParamPoly,
    scales: [f64; 5],
}

impl Prepared {
    fn new(pair: &CurvePair, window: &Window) -> Self {
        let d = pair.difference();
        let dl = d.derivative(0);
        let dy = d.derivative(1);
        let dyl = dy.derivative(0);
        let dyy = dy.derivative(1);
        let at = [window.lam_center.norm() + window.lam_radius, window.y_center.norm() + window.y_radius];
        let sc = |p: &ParamPoly| abs_bound(p, &at).max(f64::MIN_POSITIVE);
        let scales = [sc(&d), sc(&dl), sc(&dy), sc(&dyl), sc(&dyy)];
        Self { d, dl, dy, dyl, dyy, scales }
    }

    fn residual(&self, l: C64, y: C64) -> f64 {
        let v = [l, y];
        (self.d.eval(&v).norm() / self.scales[0]).max(self.dy.eval(&v).norm() / self.scales[2])
    }

    fn jac(&self, l: C64, y: C64) -> Mat2 {
        let v = [l, y];
        Mat2::new(self.dl.eval(&v), self.dy.eval(&v), self.dyl.eval(&v), self.dyy.eval(&v))
    }

    fn det_ratio(&self, l: C64, y: C64) -> f64 {
        let j = self.jac(l, y);
        j.determinant().norm() / (self.scales[1] * self.scales[4] + self.scales[2] * self.scales[3])
    }
}

// ---------------------------------------------------------------------------
// Detection

/// Search region: an annulus `lam_inner ≤ |λ − lam_center| ≤ lam_radius` in the
/// parameter and a disk in `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lam_center: C64,
    pub lam_radius: f64,
    pub lam_inner: f64,
    pub y_center: C64,
    pub y_radius: f64,
}

impl Window {
    pub fn disk(lam_center: C64, lam_radius: f64, y_center: C64, y_radius: f64) -> Self {
        Self { lam_center, lam_radius, lam_inner: 0.0, y_center, y_radius }
    }

    pub fn annulus(inner: f64, outer: f64, y_center: C64, y_radius: f64) -> Self {
        Self { lam_center: ZERO, lam_radius: outer, lam_inner: inner, y_center, y_radius }
    }

    fn contains(&self, l: C64, y: C64, slack: f64) -> bool {
        let r = (l - self.lam_center).norm();
        r <= self.lam_radius * slack
            && r >= self.lam_inner / slack
            && (y - self.y_center).norm() <= self.y_radius * slack
    }
}

#[derive(Clone, Debug)]
pub struct DetectOptions {
    pub rings: usize,
    pub angles: usize,
    pub y_starts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub degenerate_ratio: f64,
    pub classify: bool,
    pub classify_degree: usize,
    pub classify_opts: ClassifyOptions,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            rings: 4,
            angles: 8,
            y_starts: 5,
            max_iter: 200,
            tol: 1e-10,
            degenerate_ratio: 1e-6,
            classify: true,
            classify_degree: 12,
            classify_opts: ClassifyOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventObjects {
    pub unstable: String,
    pub stable: String,
    pub n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangencyEvent {
    pub lambda: Vec<C64>,
    pub y: C64,
    pub x: C64,
    pub objects: EventObjects,
    pub residual: f64,
    /// |det J| relative to the window scale of its two products.
    pub det_ratio: f64,
    pub degenerate: bool,
    pub record: Option<TangencyRecord>,
    pub classify_error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub events: Vec<TangencyEvent>,
    pub starts: usize,
    pub diverged: usize,
    pub exited: usize,
}

enum StartOutcome {
    Root(C64, C64),
    Diverged,
    Exited,
}

fn newton_start(p: &Prepared, w: &Window, mut l: C64, mut y: C64, opts: &DetectOptions) -> StartOutcome {
    let scale = w.lam_radius + w.y_radius;
    for _ in 0..opts.max_iter {
        let v = [l, y];
        let f = Vec2::new(p.d.eval(&v), p.dy.eval(&v));
        if f[0] == ZERO && f[1] == ZERO {
            break;
        }
        let Some(step) = solve2(&p.jac(l, y), &(-f)) else {
            break;
        };
        l += step[0];
        y += step[1];
        if !(l.norm().is_finite() && y.norm().is_finite()) {
            return StartOutcome::Diverged;
        }
        if !w.contains(l, y, 1.5) {
            return StartOutcome::Exited;
        }
        if step[0].norm() + step[1].norm() <= 1e-16 * (scale + l.norm() + y.norm()) {
            break;
        }
    }
    if !w.contains(l, y, 1.0 + 1e-12) {
        return StartOutcome::Exited;
    }
    if p.residual(l, y) <= opts.tol {
        StartOutcome::Root(l, y)
    } else {
        StartOutcome::Diverged
    }
}

fn starts(w: &Window, opts: &DetectOptions) -> Vec<(C64, C64)> {
    let mut lams = Vec::new();
    if w.lam_inner == 0.0 {
        lams.push(w.lam_center);
    }
    for k in 0..opts.rings {
        let r = w.lam_inner + (w.lam_radius - w.lam_inner) * (k as f64 + 0.5) / opts.rings as f64;
        for j in 0..opts.angles {
            let th = 2.0 * PI * (j as f64 + 0.137 * k as f64) / opts.angles as f64 + 0.1;
            lams.push(w.lam_center + C64::from_polar(r, th));
        }
    }
    let mut ys = vec![w.y_center];
    for j in 1..opts.y_starts {
        let th = 2.0 * PI * j as f64 / (opts.y_starts - 1) as f64 + 0.31;
        ys.push(w.y_center + C64::from_polar(0.5 * w.y_radius, th));
    }
    lams.iter().flat_map(|&l| ys.iter().map(move |&y| (l, y))).collect()
}

/// All distinct tangencies `{D = 0, ∂_y D = 0}` reached by Newton from a
/// multi-start grid inside the window. One-parameter pairs only.
pub fn detect_tangencies(pair: &CurvePair, window: &Window, opts: &DetectOptions) -> Result<Detection, ScanError> {
    if pair.dim != 1 {
        return Err(ScanError::Invalid("tangency detection needs dim λ = 1".into()));
    }
    let prep = Prepared::new(pair, window);
    let st = starts(window, opts);
    let outcomes: Vec<StartOutcome> =
        st.par_iter().map(|&(l, y)| newton_start(&prep, window, l, y, opts)).collect();
    let mut det = Detection { starts: st.len(), ..Default::default() };
    let mut roots: Vec<(C64, C64)> = Vec::new();
    for o in outcomes {
        match o {
            StartOutcome::Diverged => det.diverged += 1,
            StartOutcome::Exited => det.exited += 1,
            StartOutcome::Root(l, y) => {
                let dup = roots.iter().any(|&(l2, y2)| {
                    (l - l2).norm() / window.lam_radius + (y - y2).norm() / window.y_radius <= 1e-6
                });
                if !dup {
                    roots.push((l, y));
                }
            }
        }
    }
    roots.sort_by(|a, b| {
        let da = (a.0 - window.lam_center).norm();
        let db = (b.0 - window.lam_center).norm();
        da.total_cmp(&db).then(a.0.arg().total_cmp(&b.0.arg()))
    });
    for (l, y) in roots {
        det.events.push(make_event(pair, &prep, l, y, opts));
    }
    Ok(det)
}

fn make_event(pair: &CurvePair, prep: &Prepared, l: C64, y: C64, opts: &DetectOptions) -> TangencyEvent {
    let ratio = prep.det_ratio(l, y);
    let mut ev = TangencyEvent {
        lambda: vec![l],
        y,
        x: pair.delta_u.eval(&[l, y]),
        objects: EventObjects { unstable: pair.unstable_id.clone(), stable: pair.stable_id.clone(), n: None },
        residual: prep.residual(l, y),
        det_ratio: ratio,
        degenerate: ratio <= opts.degenerate_ratio,
        record: None,
        classify_error: None,
    };
    if opts.classify {
        match classify_event(pair, l, y, opts) {
            Ok(r) => ev.record = Some(r),
            Err(e) => ev.classify_error = Some(e.to_string()),
        }
    }
    ev
}

/// Classifies the local unfolding at a detected root. The Newton residuals in
/// the constant and `t` coefficients are cleared when below 1e-6 of the germ size.
pub fn classify_event(pair: &CurvePair, l: C64, y: C64, opts: &DetectOptions) -> Result<TangencyRecord, ScanError> {
    let mut phi = pair.germ_at(l, y, opts.classify_degree)?;
    let mag = phi.magnitude();
    for (i, j) in [(0, 0), (0, 1)] {
        let c = phi.coeff(i, j);
        if c.norm() > 1e-6 * mag {
            return Err(ScanError::Invalid(format!("root residual {:.3e} too large to classify", c.norm())));
        }
        phi.set_coeff(i, j, ZERO);
    }
    let germ = UnfoldingGerm::new(phi)?.with_base_point(y);
    Ok(classify_unfolding(&germ, &opts.classify_opts)?)
}

/// The event nearest to the window centre, if any start converged.
pub fn detect_tangency(pair: &CurvePair, window: &Window, opts: &DetectOptions) -> Result<Option<TangencyEvent>, ScanError> {
    Ok(detect_tangencies(pair, window, opts)?.events.into_iter().next())
}

// ---------------------------------------------------------------------------
// Secondary sequences and scaling fits

#[derive(Clone, Debug)]
pub struct SequenceOptions {
    /// `|λ|` annulus used for the first two indices.
    pub bracket: [f64; 2],
    /// Later windows are `[r/q, r·q]` around the extrapolated radius `r`.
    pub widen: f64,
    pub lam_center: C64,
    pub y_center: C64,
    pub y_radius: f64,
    pub detect: DetectOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub n: usize,
    pub predicted: f64,
    pub events: Vec<TangencyEvent>,
    /// Events with different `|λ|` in one window.
    pub duplicates: bool,
}

impl SequenceEntry {
    /// Smallest-modulus parameter of the entry.
    pub fn representative(&self) -> C64 {
        self.events
            .iter()
            .map(|e| e.lambda[0])
            .min_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(ZERO)
    }
}

/// Tangencies between `build(n).delta_u` and the n-th stable graph for each
/// `n` in `ns`, with windows centred by extrapolation of `ln|λ_n|`.
pub fn secondary_sequence<F>(build: F, ns: &[usize], opts: &SequenceOptions) -> Result<Vec<SequenceEntry>, ScanError>
where
    F: Fn(usize) -> Result<CurvePair, ScanError>,
{
    let mut out: Vec<SequenceEntry> = Vec::new();
    for (k, &n) in ns.iter().enumerate() {
        let (inner, outer, predicted) = if k < 2 {
            let [lo, hi] = opts.bracket;
            (lo, hi, (lo * hi).sqrt())
        } else {
            let xs: Vec<f64> = out.iter().map(|e| e.n as f64).collect();
            let ys: Vec<f64> = out.iter().map(|e| (e.representative() - opts.lam_center).norm().ln()).collect();
            let f = linear_fit(&xs, &ys).ok_or(ScanError::Invalid("degenerate index sequence".into()))?;
            let last = out.last().unwrap();
            let r = (ys[ys.len() - 1] + f.slope * (n - last.n) as f64).exp();
            (r / opts.widen, r * opts.widen, r)
        };
        let pair = build(n)?;
        let w = Window {
            lam_center: opts.lam_center,
            lam_radius: outer,
            lam_inner: inner,
            y_center: opts.y_center,
            y_radius: opts.y_radius,
        };
        let mut det = detect_tangencies(&pair, &w, &opts.detect)?;
        if det.events.is_empty() {
            return Err(ScanError::MissingEvent { n, predicted });
        }
        for e in &mut det.events {
            e.objects.n = Some(n);
        }
        let m0 = (det.events[0].lambda[0] - opts.lam_center).norm();
        let duplicates =
            det.events.iter().any(|e| ((e.lambda[0] - opts.lam_center).norm() - m0).abs() > 1e-6 * m0);
        out.push(SequenceEntry { n, predicted, events: det.events, duplicates });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub n: Vec<usize>,
    pub lambda: Vec<C64>,
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub rms_residual: f64,
    /// `ln|u₀|/σ`.
    pub target: f64,
    /// `|slope − target| / target`.
    pub deviation: f64,
}

/// Least-squares slope of `−ln|λ_n|` against `n`, compared with `ln|u₀|/σ`.
pub fn fit_scaling(ns: &[usize], lambdas: &[C64], u0_abs: f64, sigma: f64) -> Result<ScanResult, ScanError> {
    if ns.len() != lambdas.len() {
        return Err(ScanError::Invalid("index and parameter lists differ in length".into()));
    }
    if ns.len() < 8 {
        return Err(ScanError::TooFewEvents { need: 8, got: ns.len() });
    }
    for k in 1..ns.len() {
        if !(lambdas[k].norm() < lambdas[k - 1].norm()) {
            return Err(ScanError::NonMonotone(ns[k]));
        }
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = lambdas.iter().map(|l| -l.norm().ln()).collect();
    let f = linear_fit(&xs, &ys).ok_or(ScanError::Invalid("degenerate index sequence".into()))?;
    let target = u0_abs.ln() / sigma;
    Ok(ScanResult {
        n: ns.to_vec(),
        lambda: lambdas.to_vec(),
        slope: f.slope,
        intercept: f.intercept,
        max_residual: f.max_residual,
        rms_residual: f.rms_residual,
        target,
        deviation: ((f.slope - target) / target).abs(),
    })
}

impl ScanResult {
    pub fn from_entries(entries: &[SequenceEntry], u0_abs: f64, sigma: f64) -> Result<Self, ScanError> {
        let ns: Vec<usize> = entries.iter().map(|e| e.n).collect();
        let ls: Vec<C64> = entries.iter().map(|e| e.representative()).collect();
        fit_scaling(&ns, &ls, u0_abs, sigma)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,lambda_re,lambda_im,abs_lambda,fit_residual\n");
        for (n, l) in self.n.iter().zip(&self.lambda) {
            let r = -l.norm().ln() - (self.slope * *n as f64 + self.intercept);
            s.push_str(&format!("{},{},{},{},{}\n", n, fmt17(l.re), fmt17(l.im), fmt17(l.norm()), fmt17(r)));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceClosure {
    /// `m/h` and `q` recovered from the fitted slope.
    pub m_over_h: (i64, i64),
    pub q: i64,
    pub m: usize,
    /// Exponents of `u₀^a s₀^b = 1`, `a = hq − m`, `b = m`.
    pub a: usize,
    pub b: usize,
    pub residual: f64,
    pub confirmed: bool,
}

/// From a fitted slope `κ ≈ h ln|u₀|/m` with also `qκ ≈ ln|u₀/s₀|`, infers
/// `m` and `q` and checks `u₀^{hq−m} s₀^m = 1` with [`detect_resonance`].
pub fn resonance_closure(kappa: f64, u0: C64, s0: C64, h: usize, max_den: i64, tol: f64) -> Result<ResonanceClosure, ScanError> {
    let ratio = u0.norm().ln() / kappa;
    let mh = snap_rational(ratio, max_den, 0.02)
        .ok_or(ScanError::Invalid(format!("m/h = {ratio:.6} is not a small rational")))?;
    let qf = (u0.norm() / s0.norm()).ln() / kappa;
    let q = qf.round() as i64;
    if (qf - q as f64).abs() > 0.02 || q <= 0 {
        return Err(ScanError::Invalid(format!("q = {qf:.6} is not an integer")));
    }
    let mnum = *mh.numer() * h as i64;
    if mnum % *mh.denom() != 0 {
        return Err(ScanError::Invalid("m is not an integer for this h".into()));
    }
    let m = (mnum / *mh.denom()) as usize;
    let hq = h as i64 * q;
    if hq <= m as i64 {
        return Err(ScanError::Invalid(format!("hq − m = {} is not positive", hq - m as i64)));
    }
    let a = (hq - m as i64) as usize;
    let b = m;
    let residual = (u0.powu(a as u32) * s0.powu(b as u32) - ONE).norm();
    let confirmed = detect_resonance(u0, s0, a + b + 1, tol).contains(&(a, b));
    Ok(ResonanceClosure { m_over_h: (*mh.numer(), *mh.denom()), q, m, a, b, residual, confirmed })
}

// ---------------------------------------------------------------------------
// Continuation

/// `N − 1` holomorphic equations in `N` unknowns; the first `params` unknowns
/// are parameters, the rest auxiliaries.
pub trait Constraint: Sync {
    fn unknowns(&self) -> usize;
    fn params(&self) -> usize;
    fn residual(&self, z: &[C64]) -> Result<Vec<C64>, ScanError>;

    /// Central differences along the real axis of each unknown.
    fn jacobian(&self, z: &[C64]) -> Result<DMatrix<C64>, ScanError> {
        let n = self.unknowns();
        let mut j = DMatrix::zeros(n - 1, n);
        for k in 0..n {
            let h = 1e-7 * (1.0 + z[k].norm());
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[k] += h;
            zm[k] -= h;
            let fp = self.residual(&zp)?;
            let fm = self.residual(&zm)?;
            for i in 0..n - 1 {
                j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(j)
    }
}

/// Polynomial equations in all unknowns (at most three).
#[derive(Clone, Debug)]
pub struct AlgebraicConstraint {
    pub params: usize,
    pub unknowns: usize,
    pub equations: Vec<ParamPoly>,
}

impl Constraint for AlgebraicConstraint {
    fn unknowns(&self) -> usize {
        self.unknowns
    }
    fn params(&self) -> usize {
        self.params
    }
    fn residual(&self, z: &[C64]) -> Result<Vec<C64>, ScanError> {
        Ok(self.equations.iter().map(|p| p.eval(z)).collect())
    }
    fn jacobian(&self, z: &[C64]) -> Result<DMatrix<C64>, ScanError> {
        let n = self.unknowns;
        Ok(DMatrix::from_fn(n - 1, n, |i, k| self.equations[i].derivative(k).eval(z)))
    }
}

/// Tangency persisting along a curve of a two-parameter pair:
/// unknowns `(λ₁, λ₂, y)`, equations `D = ∂_y D = 0`.
pub fn persistent_tangency(pair: &CurvePair) -> Result<AlgebraicConstraint, ScanError> {
    if pair.dim != 2 {
        return Err(ScanError::Invalid("persistent tangency needs dim λ = 2".into()));
    }
    let d = pair.difference();
    let dy = d.derivative(2);
    Ok(AlgebraicConstraint { params: 2, unknowns: 3, equations: vec![d, dy] })
}

/// A period-`period` point whose multiplier equals `target`:
/// unknowns `(λ₁, λ₂, x, y)`.
#[derive(Clone, Debug)]
pub struct MultiplierLevel {
    pub family: ParametricFamily,
    pub period: usize,
    pub target: C64,
}

impl Constraint for MultiplierLevel {
    fn unknowns(&self) -> usize {
        self.family.dim() + 2
    }
    fn params(&self) -> usize {
        self.family.dim()
    }
    fn residual(&self, z: &[C64]) -> Result<Vec<C64>, ScanError> {
        let d = self.family.dim();
        let map = self.family.member(&z[..d])?;
        let p = [z[d], z[d + 1]];
        let (fp, jac) = map.iterate_with_derivative(p, self.period);
        let shifted = jac - Mat2::identity() * self.target;
        Ok(vec![fp[0] - p[0], fp[1] - p[1], shifted.determinant()])
    }
}

#[derive(Clone, Debug)]
pub struct ContinuationOptions {
    pub step: f64,
    pub length: f64,
    pub max_halvings: usize,
    pub tol: f64,
    pub rank_tol: f64,
    pub max_corrector: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { step: 1e-2, length: 1.0, max_halvings: 5, tol: 1e-10, rank_tol: 1e-8, max_corrector: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationCurve {
    pub params: usize,
    pub points: Vec<Vec<C64>>,
    pub arclength: Vec<f64>,
    /// Chord length from the previous sample (0 for the seed).
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
    pub declared_step: f64,
    pub last_tangent: Vec<C64>,
}

impl ContinuationCurve {
    pub fn parameters(&self) -> Vec<Vec<C64>> {
        self.points.iter().map(|p| p[..self.params].to_vec()).collect()
    }

    pub fn to_csv(&self) -> String {
        let n = self.points.first().map(|p| p.len()).unwrap_or(0);
        let mut s = String::from("arclength");
        for k in 0..n {
            let kind = if k < self.params { format!("lambda{}", k + 1) } else { format!("aux{}", k - self.params + 1) };
            s.push_str(&format!(",{kind}_re,{kind}_im"));
        }
        s.push_str(",residual\n");
        for ((p, a), r) in self.points.iter().zip(&self.arclength).zip(&self.residuals) {
            s.push_str(&fmt17(*a));
            for z in p {
                s.push_str(&format!(",{},{}", fmt17(z.re), fmt17(z.im)));
            }
            s.push_str(&format!(",{}\n", fmt17(*r)));
        }
        s
    }
}

fn vnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Unit kernel vector of the `(N−1)×N` Jacobian and `σ_{N−1}/σ_1`.
fn kernel(j: &DMatrix<C64>) -> (DVector<C64>, f64) {
    let n = j.ncols();
    let mut sq = DMatrix::zeros(n, n);
    sq.rows_mut(0, n - 1).copy_from(j);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let sv = &svd.singular_values;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let null = idx[n - 1];
    let ratio = if sv[idx[0]] > 0.0 { sv[idx[n - 2]] / sv[idx[0]] } else { 0.0 };
    let v = DVector::from_fn(n, |k, _| vt[(null, k)].conj());
    (v, ratio)
}

fn orient(t: DVector<C64>, prev: Option<&DVector<C64>>) -> DVector<C64> {
    let phase = match prev {
        Some(p) => p.dotc(&t),
        None => {
            let k = (0..t.len()).max_by(|&a, &b| t[a].norm().total_cmp(&t[b].norm())).unwrap_or(0);
            t[k].conj()
        }
    };
    if phase.norm() == 0.0 {
        return t;
    }
    t * (phase / phase.norm())
}

fn correct_seed(c: &dyn Constraint, z: &[C64], opts: &ContinuationOptions) -> Result<Vec<C64>, ScanError> {
    let mut z = z.to_vec();
    for _ in 0..30 {
        let f = DVector::from_vec(c.residual(&z)?);
        if f.norm() <= opts.tol * 1e-2 {
            break;
        }
        let j = c.jacobian(&z)?;
        let jjh = &j * j.adjoint();
        let y = solve(&jjh, &(-&f)).ok_or(ScanError::BadSeed(f.norm()))?;
        let dz = j.adjoint() * y;
        for k in 0..z.len() {
            z[k] += dz[k];
        }
        if dz.norm() <= 1e-15 * (1.0 + vnorm(&z)) {
            break;
        }
    }
    let r = vnorm(&c.residual(&z)?);
    if r > opts.tol {
        return Err(ScanError::BadSeed(r));
    }
    Ok(z)
}

/// Pseudo-arclength predictor–corrector along the solution curve of `c`
/// through `seed`. `direction` fixes the orientation of the first tangent.
pub fn trace_constraint_curve(
    c: &dyn Constraint,
    seed: &[C64],
    direction: Option<&[C64]>,
    opts: &ContinuationOptions,
) -> Result<ContinuationCurve, ScanError> {
    let n = c.unknowns();
    if seed.len() != n || n < 2 {
        return Err(ScanError::Invalid(format!("seed has {} components, constraint needs {n}", seed.len())));
    }
    let r0 = vnorm(&c.residual(seed)?);
    if r0 > 1e-6 {
        return Err(ScanError::BadSeed(r0));
    }
    let mut z = correct_seed(c, seed, opts)?;
    let (t0, ratio) = kernel(&c.jacobian(&z)?);
    if ratio < opts.rank_tol {
        return Err(ScanError::RankDrop { at: z, ratio });
    }
    let mut t = match direction {
        Some(d) => orient(t0, Some(&DVector::from_column_slice(d))),
        None => orient(t0, None),
    };
    let mut curve = ContinuationCurve {
        params: c.params(),
        points: vec![z.clone()],
        arclength: vec![0.0],
        steps: vec![0.0],
        residuals: vec![vnorm(&c.residual(&z)?)],
        declared_step: opts.step,
        last_tangent: t.iter().copied().collect(),
    };
    let mut s = 0.0;
    while s < opts.length - 1e-12 {
        let mut h = opts.step.min(opts.length - s);
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            if let Some(znew) = corrector(c, &z, &t, h, opts)? {
                accepted = Some((znew, h));
                break;
            }
            h /= 2.0;
        }
        let Some((znew, h)) = accepted else {
            return Err(ScanError::StepFailure { at: z, halvings: opts.max_halvings });
        };
        let (tn, ratio) = kernel(&c.jacobian(&znew)?);
        if ratio < opts.rank_tol {
            return Err(ScanError::RankDrop { at: znew, ratio });
        }
        t = orient(tn, Some(&t));
        let chord = vnorm(&znew.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>());
        s += h;
        z = znew;
        curve.residuals.push(vnorm(&c.residual(&z)?));
        curve.points.push(z.clone());
        curve.arclength.push(s);
        curve.steps.push(chord);
    }
    curve.last_tangent = t.iter().copied().collect();
    Ok(curve)
}

fn corrector(
    c: &dyn Constraint,
    z: &[C64],
    t: &DVector<C64>,
    h: f64,
    opts: &ContinuationOptions,
) -> Result<Option<Vec<C64>>, ScanError> {
    let n = z.len();
    let zp: Vec<C64> = (0..n).map(|k| z[k] + t[k] * h).collect();
    let mut w = zp.clone();
    for _ in 0..opts.max_corrector {
        let f = c.residual(&w)?;
        let j = c.jacobian(&w)?;
        let mut a = DMatrix::zeros(n, n);
        a.rows_mut(0, n - 1).copy_from(&j);
        let mut rhs = DVector::zeros(n);
        for i in 0..n - 1 {
            rhs[i] = -f[i];
        }
        let mut plane = ZERO;
        for k in 0..n {
            a[(n - 1, k)] = t[k].conj();
            plane += t[k].conj() * (w[k] - zp[k]);
        }
        rhs[n - 1] = -plane;
        let Some(dz) = solve(&a, &rhs) else {
            return Ok(None);
        };
        for k in 0..n {
            w[k] += dz[k];
        }
        if !w.iter().all(|v| v.norm().is_finite()) {
            return Ok(None);
        }
        if dz.norm() <= 1e-14 * (1.0 + vnorm(&w)) {
            break;
        }
    }
    let r = vnorm(&c.residual(&w)?);
    let moved = vnorm(&w.iter().zip(z).map(|(a, b)| a - b).collect::<Vec<_>>());
    if r <= opts.tol && moved <= 1.5 * h {
        Ok(Some(w))
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Moduli profiles

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuliSample {
    pub lambda: Vec<C64>,
    pub point: [C64; 2],
    pub u: C64,
    pub s: C64,
    pub moduli: f64,
    /// Constant Jacobian raised to the period (automorphisms) or `det D(f^n)` (germs).
    pub jacobian: C64,
    /// `|u·s − jacobian|`.
    pub identity_residual: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuliProfile {
    pub samples: Vec<ModuliSample>,
    pub spread: f64,
    pub error: f64,
    pub non_constant: bool,
}

impl ModuliProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index");
        let d = self.samples.first().map(|x| x.lambda.len()).unwrap_or(0);
        for k in 0..d {
            s.push_str(&format!(",lambda{0}_re,lambda{0}_im", k + 1));
        }
        s.push_str(",moduli,jacobian_re,jacobian_im,identity_residual\n");
        for (i, x) in self.samples.iter().enumerate() {
            s.push_str(&i.to_string());
            for l in &x.lambda {
                s.push_str(&format!(",{},{}", fmt17(l.re), fmt17(l.im)));
            }
            s.push_str(&format!(
                ",{},{},{},{}\n",
                fmt17(x.moduli),
                fmt17(x.jacobian.re),
                fmt17(x.jacobian.im),
                fmt17(x.identity_residual)
            ));
        }
        s
    }
}

/// Follows a saddle of period `period` along the parameter samples, starting
/// from `seed`, and records `ln|u|/ln|s|` and the Jacobian identity.
pub fn moduli_profile(
    family: &ParametricFamily,
    params: &[Vec<C64>],
    seed: [C64; 2],
    period: usize,
) -> Result<ModuliProfile, ScanError> {
    let mut prev = seed;
    let mut samples = Vec::with_capacity(params.len());
    for (index, lam) in params.iter().enumerate() {
        let map = family.member(lam)?;
        let pp = periodic_at(&map, period, prev)
            .map_err(|e| ScanError::SaddleLost { index, reason: e.to_string() })?;
        let [u, s] = pp.multipliers;
        if (u - ONE).norm() < 1e-6 || (s - ONE).norm() < 1e-6 {
            return Err(ScanError::SaddleLost { index, reason: "multiplier collides with 1".into() });
        }
        if pp.kind != OrbitType::Saddle {
            return Err(ScanError::SaddleLost { index, reason: format!("orbit type {:?}", pp.kind) });
        }
        let jacobian = match &map {
            FamilyMember::Automorphism(m) => m.jacobian().powu(period as u32),
            FamilyMember::Germ(_) => pp.det,
        };
        let identity_residual = (u * s - jacobian).norm();
        let ls = s.norm().ln();
        let moduli = u.norm().ln() / ls;
        let delta = identity_residual.max(1e-15 * (u.norm() + s.norm()));
        let error = ((delta / u.norm()) + moduli.abs() * (delta / s.norm())) / ls.abs();
        samples.push(ModuliSample { lambda: lam.clone(), point: pp.point, u, s, moduli, jacobian, identity_residual, error });
        prev = pp.point;
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x.moduli), b.max(x.moduli)));
    let spread = if samples.is_empty() { 0.0 } else { hi - lo };
    let error = samples.iter().map(|x| x.error).fold(0.0, f64::max);
    Ok(ModuliProfile { samples, spread, error, non_constant: spread > 10.0 * error })
}

// ---------------------------------------------------------------------------
// Periodic points and type changes

#[derive(Clone, Debug, PartialEq)]
struct Periodic {
    point: [C64; 2],
    multipliers: [C64; 2],
    kind: OrbitType,
    det: C64,
}

/// Newton on `f^n(p) = p` that accepts an exact seed even when the Newton
/// matrix is singular there.
fn periodic_at<M: PlaneMap>(map: &M, period: usize, seed: [C64; 2]) -> Result<Periodic, SaddleError> {
    let (fx, d) = map.iterate_with_derivative(seed, period);
    let res = ((fx[0] - seed[0]).norm_sqr() + (fx[1] - seed[1]).norm_sqr()).sqrt();
    let (point, d) = if res <= 1e-14 * (1.0 + seed[0].norm() + seed[1].norm()) {
        (seed, d)
    } else {
        let pp = crate::saddle::find_periodic(map, period, seed, 1e-9 * (1.0 + seed[0].norm() + seed[1].norm()))?;
        (pp.point, map.iterate_with_derivative(pp.point, period).1)
    };
    let (mult, _) = eig2(&d);
    Ok(Periodic { point, multipliers: mult, kind: crate::saddle::classify_multipliers(mult), det: d.determinant() })
}

/// Parameter samples with neighbour structure: `rows × cols`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub rows: usize,
    pub cols: usize,
    pub points: Vec<Vec<C64>>,
}

impl ParamGrid {
    pub fn line(start: &[C64], end: &[C64], n: usize) -> Self {
        let points = (0..n)
            .map(|k| {
                let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
                start.iter().zip(end).map(|(a, b)| a + (b - a) * t).collect()
            })
            .collect();
        Self { rows: 1, cols: n, points }
    }

    /// `origin + c/(cols−1)·e1 + r/(rows−1)·e2`.
    pub fn rect(origin: &[C64], e1: &[C64], e2: &[C64], cols: usize, rows: usize) -> Self {
        let mut points = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let tc = if cols > 1 { c as f64 / (cols - 1) as f64 } else { 0.0 };
                let tr = if rows > 1 { r as f64 / (rows - 1) as f64 } else { 0.0 };
                points.push((0..origin.len()).map(|k| origin[k] + e1[k] * tc + e2[k] * tr).collect());
            }
        }
        Self { rows, cols, points }
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                if c + 1 < self.cols {
                    e.push((i, i + 1));
                }
                if r + 1 < self.rows {
                    e.push((i, i + self.cols));
                }
            }
        }
        e
    }

    /// Tree used for tracking: along row 0, then up each column.
    fn parent(&self, i: usize) -> Option<usize> {
        let (r, c) = (i / self.cols, i % self.cols);
        if r == 0 {
            (c > 0).then(|| i - 1)
        } else {
            Some(i - self.cols)
        }
    }
}

#[derive(Clone, Debug)]
pub struct CensusOptions {
    /// Seeds cover `|Re|, |Im| ≤ radius` in both coordinates.
    pub radius: f64,
    pub per_axis: usize,
    pub extra_seeds: Vec<[C64; 2]>,
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self { radius: 2.0, per_axis: 6, extra_seeds: Vec::new() }
    }
}

/// Points of minimal period `period` reached by Newton from a grid of seeds in ℂ².
pub fn periodic_census<M: PlaneMap + Sync>(map: &M, period: usize, opts: &CensusOptions) -> Vec<[C64; 2]> {
    let k = opts.per_axis.max(1);
    let axis: Vec<f64> = (0..k)
        .map(|i| if k > 1 { -opts.radius + 2.0 * opts.radius * i as f64 / (k - 1) as f64 } else { 0.0 })
        .collect();
    let mut seeds = opts.extra_seeds.clone();
    for &a in &axis {
        for &b in &axis {
            for &c in &axis {
                for &d in &axis {
                    seeds.push([C64::new(a + 0.013, b * 0.5), C64::new(c - 0.007, d * 0.5)]);
                }
            }
        }
    }
    let found: Vec<[C64; 2]> = seeds
        .par_iter()
        .filter_map(|&s| periodic_at(map, period, s).ok().map(|p| p.point))
        .filter(|p| p[0].norm() + p[1].norm() < 1e6)
        .collect();
    let mut out: Vec<[C64; 2]> = Vec::new();
    for p in found {
        let lower = (1..period).filter(|d| period % d == 0).any(|d| {
            let q = map.iterate(p, d);
            (q[0] - p[0]).norm() + (q[1] - p[1]).norm() <= 1e-8 * (1.0 + p[0].norm() + p[1].norm())
        });
        if lower {
            continue;
        }
        if !out.iter().any(|q| (q[0] - p[0]).norm() + (q[1] - p[1]).norm() <= 1e-7 * (1.0 + p[0].norm())) {
            out.push(p);
        }
    }
    out.sort_by(|a, b| a[0].re.total_cmp(&b[0].re).then(a[0].im.total_cmp(&b[0].im)).then(a[1].re.total_cmp(&b[1].re)));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeChange {
    pub lambda: Vec<C64>,
    pub period: usize,
    pub point: [C64; 2],
    /// 0 for the larger multiplier, 1 for the smaller.
    pub multiplier: usize,
    pub from: OrbitType,
    pub to: OrbitType,
    /// `||μ| − 1|` at the refined parameter.
    pub modulus_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeChangeReport {
    pub events: Vec<TypeChange>,
    /// Points tracked per period.
    pub tracked: Vec<(usize, usize)>,
}

fn sign_kind(signs: [bool; 2]) -> OrbitType {
    match signs {
        [true, true] => OrbitType::Source,
        [false, false] => OrbitType::Sink,
        _ => OrbitType::Saddle,
    }
}

fn signs(p: &Periodic) -> [bool; 2] {
    [p.multipliers[0].norm() >= 1.0, p.multipliers[1].norm() >= 1.0]
}

/// Scans the grid for periodic points (periods `1..=max_period`) whose
/// multiplier modulus crosses 1 between neighbouring samples, refining each
/// crossing by bisection to `||μ| − 1| ≤ 1e-8`.
pub fn detect_type_change(
    family: &ParametricFamily,
    grid: &ParamGrid,
    max_period: usize,
    census: &CensusOptions,
) -> Result<TypeChangeReport, ScanError> {
    if grid.points.is_empty() {
        return Err(ScanError::Invalid("empty parameter grid".into()));
    }
    let maps: Vec<FamilyMember> = grid.points.iter().map(|l| family.member(l)).collect::<Result<_, _>>()?;
    let per_period: Vec<Result<(Vec<TypeChange>, usize), ScanError>> = (1..=max_period)
        .into_par_iter()
        .map(|period| type_changes_for_period(family, grid, &maps, period, census))
        .collect();
    let mut report = TypeChangeReport { events: Vec::new(), tracked: Vec::new() };
    for (k, r) in per_period.into_iter().enumerate() {
        let (ev, count) = r?;
        report.tracked.push((k + 1, count));
        report.events.extend(ev);
    }
    Ok(report)
}

fn type_changes_for_period(
    family: &ParametricFamily,
    grid: &ParamGrid,
    maps: &[FamilyMember],
    period: usize,
    census: &CensusOptions,
) -> Result<(Vec<TypeChange>, usize), ScanError> {
    let start = periodic_census(&maps[0], period, census);
    let count = start.len();
    let mut tracked: Vec<Vec<Periodic>> = vec![Vec::new(); grid.points.len()];
    for i in 0..grid.points.len() {
        let seeds: Vec<[C64; 2]> = match grid.parent(i) {
            None => start.clone(),
            Some(p) => tracked[p].iter().map(|q| q.point).collect(),
        };
        let mut cur = Vec::with_capacity(seeds.len());
        for s in &seeds {
            let q = periodic_at(&maps[i], period, *s).map_err(|_| ScanError::TrackingLost { cell: i, period })?;
            cur.push(q);
        }
        if let Some(p) = grid.parent(i) {
            check_tracking(&tracked[p], &cur).ok_or(ScanError::TrackingLost { cell: i, period })?;
        }
        tracked[i] = cur;
    }
    let mut events: Vec<TypeChange> = Vec::new();
    for (a, b) in grid.edges() {
        let matching: Vec<usize> = if grid.parent(b) == Some(a) {
            (0..tracked[a].len()).collect()
        } else {
            match_points(&tracked[a], &tracked[b]).ok_or(ScanError::TrackingLost { cell: b, period })?
        };
        for (k, &kb) in matching.iter().enumerate() {
            let pa = &tracked[a][k];
            let pb = &tracked[b][kb];
            let (sa, sb) = (signs(pa), signs(pb));
            for idx in 0..2 {
                if sa[idx] == sb[idx] {
                    continue;
                }
                let ev = bisect_crossing(family, &grid.points[a], &grid.points[b], pa, period, idx, sa, sb)?;
                let dup = events.iter().any(|e| {
                    e.period == ev.period
                        && e.lambda.iter().zip(&ev.lambda).all(|(x, y)| (x - y).norm() <= 1e-7 * (1.0 + x.norm()))
                });
                if !dup {
                    events.push(ev);
                }
            }
        }
    }
    Ok((events, count))
}

fn min_separation(ps: &[Periodic]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            m = m.min(dist(&ps[i].point, &ps[j].point));
        }
    }
    m
}

fn dist(a: &[C64; 2], b: &[C64; 2]) -> f64 {
    ((a[0] - b[0]).norm_sqr() + (a[1] - b[1]).norm_sqr()).sqrt()
}

fn check_tracking(prev: &[Periodic], cur: &[Periodic]) -> Option<()> {
    let sep = min_separation(prev);
    let moved_ok = prev.iter().zip(cur).all(|(a, b)| dist(&a.point, &b.point) < 0.5 * sep);
    let distinct = min_separation(cur) > 1e-6;
    (moved_ok && distinct).then_some(())
}

fn match_points(a: &[Periodic], b: &[Periodic]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    let sep = min_separation(a).min(min_separation(b));
    let mut used = vec![false; b.len()];
    let mut out = Vec::with_capacity(a.len());
    for p in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .map(|(k, q)| (k, dist(&p.point, &q.point)))
            .min_by(|x, y| x.1.total_cmp(&y.1))?;
        if used[k] || d >= 0.5 * sep {
            return None;
        }
        used[k] = true;
        out.push(k);
    }
    Some(out)
}

#[allow(clippy::too_many_arguments)]
fn bisect_crossing(
    family: &ParametricFamily,
    la: &[C64],
    lb: &[C64],
    pa: &Periodic,
    period: usize,
    idx: usize,
    sa: [bool; 2],
    sb: [bool; 2],
) -> Result<TypeChange, ScanError> {
    let at = |t: f64| -> Vec<C64> { la.iter().zip(lb).map(|(a, b)| a + (b - a) * t).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut point = pa.point;
    let mut best = (pa.multipliers[idx].norm() - 1.0).abs();
    let mut best_t = 0.0;
    let mut best_point = pa.point;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let map = family.member(&at(mid))?;
        let q = periodic_at(&map, period, point).map_err(|_| ScanError::TrackingLost { cell: 0, period })?;
        let g = q.multipliers[idx].norm() - 1.0;
        if g.abs() < best {
            best = g.abs();
            best_t = mid;
            best_point = q.point;
        }
        if g.abs() <= 1e-8 || hi - lo < 1e-15 {
            break;
        }
        if (g >= 0.0) == sa[idx] {
            lo = mid;
            point = q.point;
        } else {
            hi = mid;
        }
    }
    Ok(TypeChange {
        lambda: at(best_t),
        period,
        point: best_point,
        multiplier: idx,
        from: sign_kind(sa),
        to: sign_kind(sb),
        modulus_error: best,
    })
}

// ---------------------------------------------------------------------------
// Local asymptotics

/// A piece `x = φ(y − y0)` of the unstable manifold tangent to the stable axis direction.
#[derive(Clone, Debug, PartialEq)]
pub struct UnstablePiece {
    pub y0: C64,
    pub phi: TruncatedSeries1,
}

#[derive(Clone, Debug)]
pub struct AsymptoticsOptions {
    /// Abscissa on `{y = 0}` where the transition chart sends `(φ(y0), y0)`.
    pub transition_base: f64,
    /// `ε` as a fraction of `|α/c|^{1/(h+1)}/10`.
    pub eps_fraction: f64,
    pub angle: f64,
    pub ell: usize,
    pub max_backward: usize,
}

impl Default for AsymptoticsOptions {
    fn default() -> Self {
        Self { transition_base: 0.4, eps_fraction: 0.5, angle: 0.7, ell: 2, max_backward: 400 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub n: Vec<usize>,
    pub distance: Vec<f64>,
    pub slope: f64,
    pub target_slope: f64,
    pub slope_deviation: f64,
    pub return_index: Vec<usize>,
    pub predicted_index: Vec<f64>,
    pub bound: f64,
}

/// Distance from `(A, t0)` to the curve `{(φ(t), t)}`, by Gauss–Newton in `t`.
pub fn distance_to_piece(phi: &TruncatedSeries1, a: C64, t0: C64) -> f64 {
    let dphi = phi.derive().unwrap_or_else(|_| TruncatedSeries1::zero(0));
    let mut t = t0;
    for _ in 0..200 {
        let r1 = a - phi.eval(t);
        let r2 = t - t0;
        let d = dphi.eval(t);
        let step = -((-d).conj() * r1 + r2) / (d.norm_sqr() + 1.0);
        t += step;
        if step.norm() <= 1e-17 * (1.0 + t.norm()) || step.norm() == 0.0 {
            break;
        }
    }
    ((a - phi.eval(t)).norm_sqr() + (t - t0).norm_sqr()).sqrt()
}

fn in_annulus(p: [C64; 2]) -> bool {
    let y = p[1].norm();
    (0.1..=0.9).contains(&y) && p[0].norm() <= 0.5
}

fn germ_inverse(map: &LocalGerm, q: [C64; 2], guess: [C64; 2]) -> Option<[C64; 2]> {
    let mut p = guess;
    for _ in 0..60 {
        let fp = map.apply(p);
        let r = Vec2::new(fp[0] - q[0], fp[1] - q[1]);
        let step = solve2(&map.derivative(p), &(-r))?;
        p = [p[0] + step[0], p[1] + step[1]];
        if step[0].norm() + step[1].norm() <= 1e-16 * (1.0 + p[0].norm() + p[1].norm()) {
            break;
        }
    }
    let fp = map.apply(p);
    ((fp[0] - q[0]).norm() + (fp[1] - q[1]).norm() <= 1e-12 * (1.0 + q[0].norm() + q[1].norm())).then_some(p)
}

/// For each `n`: the point `r_n` of the n-th pull-back of `gamma` at height
/// `y0 + t0`, `|t0| = ε|u|^{−n/(h+1)}`; its distance to the unstable piece; and
/// the first `m` with `f^{−m}` of its transition image in the annulus
/// `{0.1 ≤ |y| ≤ 0.9, |x| ≤ 0.5}`. The transition chart is the shear
/// `(x, y) ↦ (ξ₀ + (y − y0), x − φ(y − y0))`, which sends the unstable piece onto
/// `{y = 0}`.
pub fn verify_local_asymptotics(
    germ: &LocalGerm,
    piece: &UnstablePiece,
    gamma: &GraphInBidisk,
    ns: &[usize],
    opts: &AsymptoticsOptions,
) -> Result<AsymptoticsReport, ScanError> {
    let sd = SaddleData::of_germ(germ)?;
    let (lu, ls) = (sd.u.norm().ln(), sd.s.norm().ln());
    let v = piece.phi.valuation().ok_or(ScanError::Invalid("unstable piece is identically zero".into()))?;
    if v < 2 {
        return Err(ScanError::Invalid("unstable piece is not tangent to the vertical".into()));
    }
    let h = v - 1;
    let c = piece.phi.coeff(v);
    let alpha = gamma.g.coeff(0);
    let eps = opts.eps_fraction * 0.1 * (alpha / c).norm().powf(1.0 / (h as f64 + 1.0));
    let inv_lin = germ.linear_part().try_inverse().ok_or(ScanError::Invalid("singular linear part".into()))?;
    let mut report = AsymptoticsReport {
        n: ns.to_vec(),
        distance: Vec::new(),
        slope: 0.0,
        target_slope: lu,
        slope_deviation: 0.0,
        return_index: Vec::new(),
        predicted_index: Vec::new(),
        bound: 0.0,
    };
    for &n in ns {
        let gn = graph_transform_n(germ, gamma, n, opts.ell)?.graph;
        let t0 = C64::from_polar(eps * (-(n as f64) * lu / (h as f64 + 1.0)).exp(), opts.angle);
        let y = piece.y0 + t0;
        if y.norm() >= 1.0 {
            return Err(ScanError::Escape { n, step: 0 });
        }
        let a = gn.g.eval(y);
        report.distance.push(distance_to_piece(&piece.phi, a, t0));
        let mut p = [C64::new(opts.transition_base, 0.0) + t0, a - piece.phi.eval(t0)];
        let mut m = 0;
        while !in_annulus(p) {
            if m >= opts.max_backward || p[0].norm() > 1.0 || p[1].norm() > 1.0 {
                return Err(ScanError::Escape { n, step: m });
            }
            let lin = inv_lin * Vec2::new(p[0], p[1]);
            p = germ_inverse(germ, p, [lin[0], lin[1]]).ok_or(ScanError::Escape { n, step: m })?;
            m += 1;
        }
        report.return_index.push(m);
        report.predicted_index.push(-lu / ls * n as f64);
    }
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = report.distance.iter().map(|d| -d.ln()).collect();
    let f = linear_fit(&xs, &ys).ok_or(ScanError::Invalid("need two distinct n".into()))?;
    report.slope = f.slope;
    report.slope_deviation = ((f.slope - lu) / lu).abs();
    report.bound = report
        .return_index
        .iter()
        .zip(&report.predicted_index)
        .map(|(m, p)| (*m as f64 - p).abs())
        .fold(0.0, f64::max);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::henon::{FamilyKind, SyntheticTemplate};
    use crate::param::parse_expr;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn pair(src_du: &str, src_w: &str) -> CurvePair {
        let names = ["l".to_string(), "y".to_string()];
        CurvePair::new(1, parse_expr(src_du, &names).unwrap(), parse_expr(src_w, &names).unwrap()).unwrap()
    }

    #[test]
    fn detects_trivial_quadratic_tangency() {
        let p = pair("(y - 0.3)^2 + l", "0");
        let w = Window::disk(ZERO, 0.2, c(0.3), 0.3);
        let ev = detect_tangency(&p, &w, &DetectOptions::default()).unwrap().unwrap();
        assert!(ev.lambda[0].norm() < 1e-12 && (ev.y - 0.3).norm() < 1e-10);
        let r = ev.record.unwrap();
        assert_eq!((r.h, r.m), (1, 1));
        assert!(!ev.degenerate);
    }

    #[test]
    fn discriminant_location() {
        let (eps, sig) = (0.05, 0.2);
        let p = pair("(y - 0.3)^2 + l", &format!("{eps} + {sig}*(y - 0.3)"));
        let w = Window::disk(ZERO, 0.2, c(0.3), 0.3);
        let ev = detect_tangency(&p, &w, &DetectOptions::default()).unwrap().unwrap();
        assert!((ev.lambda[0] - c(eps + sig * sig / 4.0)).norm() < 1e-12);
        assert!((ev.y - c(0.3 + sig / 2.0)).norm() < 1e-10);
    }

    #[test]
    fn cubic_contact_is_degenerate() {
        let p = pair("(y - 0.3)^3 + l", "0");
        let w = Window::disk(ZERO, 0.2, c(0.3), 0.3);
        let ev = detect_tangency(&p, &w, &DetectOptions::default()).unwrap().unwrap();
        assert!(ev.degenerate && ev.lambda[0].norm() < 1e-10);
        let r = ev.record.unwrap();
        assert_eq!((r.h, r.m), (2, 2));
    }

    fn toy(sigma: u32) -> impl Fn(usize) -> Result<CurvePair, ScanError> {
        move |n| {
            let names = ["l".to_string(), "y".to_string()];
            let du = parse_expr(&format!("(y - 0.3)^2 + l^{sigma}"), &names).unwrap();
            Ok(CurvePair::new(1, du, ParamPoly::real(1.0))?.scaled(ParamPoly::real(2.0), n as u32))
        }
    }

    fn seq_opts(bracket: [f64; 2]) -> SequenceOptions {
        SequenceOptions {
            bracket,
            widen: 2.0,
            lam_center: ZERO,
            y_center: c(0.3),
            y_radius: 0.3,
            detect: DetectOptions { classify: false, ..Default::default() },
        }
    }

    #[test]
    fn toy_sequence_sigma_one() {
        let ns: Vec<usize> = (5..=14).collect();
        let e = secondary_sequence(toy(1), &ns, &seq_opts([1e-3, 0.1])).unwrap();
        for x in &e {
            assert_eq!(x.events.len(), 1);
            assert!((x.events[0].lambda[0] - c(2f64.powi(-(x.n as i32)))).norm() < 1e-14 * 2f64.powi(-(x.n as i32)) * 10.0);
        }
        let r = ScanResult::from_entries(&e, 2.0, 1.0).unwrap();
        assert!((r.slope - 2f64.ln()).abs() < 1e-10 && r.deviation < 1e-9);
    }

    #[test]
    fn toy_sequence_sigma_two_pairs() {
        let ns: Vec<usize> = (5..=14).collect();
        let e = secondary_sequence(toy(2), &ns, &seq_opts([0.05, 0.3])).unwrap();
        for x in &e {
            assert_eq!(x.events.len(), 2);
            assert!(!x.duplicates);
            assert!((x.events[0].lambda[0].norm() - 2f64.powf(-(x.n as f64) / 2.0)).abs() < 1e-13);
        }
        let r = ScanResult::from_entries(&e, 2.0, 2.0).unwrap();
        assert!(r.deviation < 1e-9);
    }

    #[test]
    fn fit_scaling_examples() {
        let ns: Vec<usize> = (5..15).collect();
        let exact: Vec<C64> = ns.iter().map(|&n| c(2f64.powi(-(n as i32)))).collect();
        assert!(fit_scaling(&ns, &exact, 2.0, 1.0).unwrap().deviation < 1e-12);
        let half: Vec<C64> = ns.iter().map(|&n| c(2f64.powf(-(n as f64) / 2.0))).collect();
        assert!((fit_scaling(&ns, &half, 2.0, 2.0).unwrap().slope - 2f64.ln() / 2.0).abs() < 1e-12);
        let noisy: Vec<C64> = ns
            .iter()
            .enumerate()
            .map(|(k, &n)| c(2f64.powi(-(n as i32)) * (1.0 + 0.01 * ((k * 7 % 5) as f64 / 2.0 - 1.0))))
            .collect();
        assert!(fit_scaling(&ns, &noisy, 2.0, 1.0).unwrap().deviation <= 0.02);
        assert!(matches!(fit_scaling(&ns[..5], &exact[..5], 2.0, 1.0), Err(ScanError::TooFewEvents { .. })));
        let mut bad = exact.clone();
        bad.swap(3, 4);
        assert!(matches!(fit_scaling(&ns, &bad, 2.0, 1.0), Err(ScanError::NonMonotone(_))));
    }

    #[test]
    fn resonance_closure_composes() {
        // t² + λ² against x = 4^{−n}: |λ_n| = 2^{−n}, so λ_n² ≍ u₀^{−n} and λ_n³ ≍ (s₀/u₀)^n
        let ns: Vec<usize> = (5..=14).collect();
        let build = |n: usize| {
            let names = ["l".to_string(), "y".to_string()];
            let du = parse_expr("(y - 0.3)^2 + l^2", &names).unwrap();
            Ok(CurvePair::new(1, du, ParamPoly::real(1.0))?.scaled(ParamPoly::real(4.0), n as u32))
        };
        let e = secondary_sequence(build, &ns, &seq_opts([1e-3, 0.1])).unwrap();
        let r = ScanResult::from_entries(&e, 4.0, 2.0).unwrap();
        let cl = resonance_closure(r.slope, c(4.0), c(0.5), 1, 4, 1e-9).unwrap();
        assert_eq!((cl.m, cl.q, cl.a, cl.b), (2, 3, 1, 2));
        assert!(cl.confirmed && cl.residual < 1e-12);
    }

    #[test]
    fn unit_circle_continuation() {
        let names = ["a".to_string(), "b".to_string()];
        let g = parse_expr("a^2 + b^2 - 1", &names).unwrap();
        let con = AlgebraicConstraint { params: 2, unknowns: 2, equations: vec![g] };
        let opts = ContinuationOptions { length: 0.99, ..Default::default() };
        let curve = trace_constraint_curve(&con, &[c(1.0), ZERO], None, &opts).unwrap();
        assert_eq!(curve.points.len(), 100);
        assert!(curve.residuals.iter().all(|r| *r <= 1e-12));
        assert!(curve.steps.iter().all(|s| *s <= opts.step * 1.01));
        // each corrected step turns by asin(h)
        let last = &curve.points[99];
        let ang = last[1].re.atan2(last[0].re);
        assert!((ang - 99.0 * 0.01f64.asin()).abs() < 1e-9, "{ang} {:?}", curve.arclength.last());
    }

    #[test]
    fn persistent_tangency_line() {
        let names = ["l1".to_string(), "l2".to_string(), "y".to_string()];
        let du = parse_expr("(y - 0.3)^2 + l1 - l2", &names).unwrap();
        let p = CurvePair::new(2, du, ParamPoly::default()).unwrap();
        let con = persistent_tangency(&p).unwrap();
        let opts = ContinuationOptions { length: 0.3, ..Default::default() };
        let curve = trace_constraint_curve(&con, &[c(0.1), c(0.1), c(0.3)], None, &opts).unwrap();
        for z in &curve.points {
            assert!((z[0] - z[1]).norm() < 1e-10 && (z[2] - 0.3).norm() < 1e-10);
        }
    }

    #[test]
    fn rank_drop_is_reported() {
        let names = ["a".to_string(), "b".to_string()];
        let g = parse_expr("a*b", &names).unwrap();
        let con = AlgebraicConstraint { params: 2, unknowns: 2, equations: vec![g] };
        assert!(matches!(
            trace_constraint_curve(&con, &[ZERO, ZERO], None, &ContinuationOptions::default()),
            Err(ScanError::RankDrop { .. })
        ));
    }

    fn fixed_multipliers(a: f64, cc: f64) -> Vec<C64> {
        let disc = C64::new((1.0 - a) * (1.0 - a) - 4.0 * cc, 0.0).sqrt();
        let mut out = Vec::new();
        for z in [(C64::new(1.0 - a, 0.0) + disc) / 2.0, (C64::new(1.0 - a, 0.0) - disc) / 2.0] {
            let r = (z * z + a).sqrt();
            out.push(z + r);
            out.push(z - r);
        }
        out
    }

    #[test]
    fn multiplier_level_curve() {
        let con = MultiplierLevel { family: ParametricFamily::quadratic(), period: 1, target: c(1.5) };
        let opts = ContinuationOptions { length: 0.2, ..Default::default() };
        let seed = [c(0.3), c(0.0325), c(0.65), c(0.65)];
        let curve = trace_constraint_curve(&con, &seed, None, &opts).unwrap();
        assert!(curve.points.len() >= 20);
        for z in &curve.points {
            assert!(z.iter().all(|v| v.im.abs() < 1e-12));
            let best = fixed_multipliers(z[0].re, z[1].re).iter().map(|m| (m.norm() - 1.5).abs()).fold(1.0, f64::min);
            assert!(best < 1e-8);
        }
    }

    #[test]
    fn moduli_probe_and_constant_profile() {
        let fam = ParametricFamily::quadratic();
        let prof = moduli_profile(&fam, &[vec![c(0.5), ZERO]], [c(0.5), c(0.5)], 1).unwrap();
        let x = &prof.samples[0];
        let r3 = 3f64.sqrt();
        let expected = ((1.0 + r3) / 2.0).ln() / ((r3 - 1.0) / 2.0).ln();
        assert!((x.moduli - expected).abs() < 1e-12);
        assert!(x.identity_residual < 1e-12);
        let same = vec![vec![c(0.5), ZERO]; 5];
        let prof = moduli_profile(&fam, &same, [c(0.5), c(0.5)], 1).unwrap();
        assert_eq!(prof.spread, 0.0);
        assert!(!prof.non_constant);
    }

    #[test]
    fn sink_is_rejected_by_profile() {
        let fam = ParametricFamily::quadratic();
        let r = moduli_profile(&fam, &[vec![c(0.3), ZERO]], [ZERO, ZERO], 1);
        assert!(matches!(r, Err(ScanError::SaddleLost { .. })));
    }

    fn linear_family() -> ParametricFamily {
        let names = ["l".to_string()];
        ParametricFamily {
            name: "diag".into(),
            params: names.to_vec(),
            kind: FamilyKind::Synthetic(SyntheticTemplate {
                degree: 2,
                f1: vec![(1, 0, parse_expr("1 + l", &names).unwrap())],
                f2: vec![(0, 1, ParamPoly::real(0.5))],
            }),
            bbox: None,
        }
    }

    #[test]
    fn linear_family_single_crossing() {
        let grid = ParamGrid::line(&[c(-0.5)], &[c(0.5)], 11);
        let rep = detect_type_change(&linear_family(), &grid, 1, &CensusOptions::default()).unwrap();
        assert_eq!(rep.events.len(), 1);
        let e = &rep.events[0];
        assert!(e.lambda[0].norm() <= 1e-8 && e.modulus_error <= 1e-8);
        assert_eq!((e.from, e.to), (OrbitType::Sink, OrbitType::Saddle));
    }

    #[test]
    fn fixed_point_crossing_matches_closed_form() {
        let a = 0.3;
        let grid = ParamGrid::line(&[c(a), c(-0.6)], &[c(a), c(0.05)], 14);
        let rep = detect_type_change(&ParametricFamily::quadratic(), &grid, 1, &CensusOptions::default()).unwrap();
        assert_eq!(rep.tracked, vec![(1, 2)]);
        assert_eq!(rep.events.len(), 1);
        let cstar = -3.0 * (1.0 - a) * (1.0 - a) / 4.0;
        assert!((rep.events[0].lambda[1].re - cstar).abs() <= 1e-6);
    }

    #[test]
    fn local_asymptotics_linear_models() {
        for (u, ratio) in [(2.0, 1.0), (4.0, 2.0)] {
            let germ = LocalGerm::linear(c(u), c(0.5), 4);
            let piece = UnstablePiece { y0: c(0.5), phi: TruncatedSeries1::from_real(&[0.0, 0.0, 1.0]) };
            let gamma = GraphInBidisk::vertical(TruncatedSeries1::from_real(&[0.3]).extend(8), 2).unwrap();
            let ns: Vec<usize> = (5..=20).collect();
            let r = verify_local_asymptotics(&germ, &piece, &gamma, &ns, &AsymptoticsOptions::default()).unwrap();
            assert!(r.slope_deviation < 1e-3, "{}", r.slope_deviation);
            for (k, &n) in ns.iter().enumerate() {
                assert!((r.return_index[k] as f64 - ratio * n as f64).abs() <= 1.0);
            }
            assert!(r.bound <= 1.0);
        }
    }

    #[test]
    fn distance_minimization_oracle() {
        // distance from (A, 0) to x = t² is A when A < 1/2
        let phi = TruncatedSeries1::from_real(&[0.0, 0.0, 1.0]);
        for a in [1e-3, 1e-6, 1e-9] {
            assert!((distance_to_piece(&phi, c(a), ZERO) - a).abs() < 1e-12 * a.max(1e-3));
        }
        // explicit minimization for A = 0.8: t² = A − 1/2, d² = 1/4 + A − 1/2
        let d = distance_to_piece(&phi, c(0.8), c(0.1));
        assert!(d <= (0.8f64 - 0.01).abs() + 1e-12);
    }

    #[test]
    fn csv_has_full_precision() {
        let ns: Vec<usize> = (1..=8).collect();
        let ls: Vec<C64> = ns.iter().map(|&n| c(1.0 / 3f64.powi(n as i32))).collect();
        let r = fit_scaling(&ns, &ls, 3.0, 1.0).unwrap();
        let csv = r.to_csv();
        let second = csv.lines().nth(1).unwrap();
        let re: f64 = second.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(re, 1.0 / 3.0);
    }
}

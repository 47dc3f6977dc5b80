use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use serde_json::json;

use tangency_core::bidisk::{default_frame, horseshoe_periodic_points, horseshoe_stable_graphs, rh_check, Frame};
use tangency_core::germ::{classify_unfolding, ClassifyOptions, UnfoldingGerm};
use tangency_core::saddle::{
    detect_resonance, find_periodic, margins, near_resonances, normal_form_star_k, zero_slope_section, OrbitType,
    RESONANCE_TOL,
};
use tangency_core::scan::*;
use tangency_core::{AnySeries, LocalGerm, PolynomialAutomorphism, C64};

use crate::family::{self, PairTemplate};
use crate::output::{invalid, parse_error, Artifact, Outcome};
use crate::{BidiskCmd, GermCmd, Global, SaddleCmd, ScanCmd};

pub fn complex(s: &str) -> Result<C64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    C64::from_str(&t).map_err(|_| parse_error(format!("not a complex number: {s:?}")))
}

pub fn complex_list(s: &str) -> Result<Vec<C64>> {
    s.split(',').map(complex).collect()
}

fn point(s: &str) -> Result<[C64; 2]> {
    match complex_list(s)?.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(parse_error(format!("expected a point `x,y`, got {s:?}"))),
    }
}

/// `lo..hi`, inclusive.
pub fn index_range(s: &str) -> Result<Vec<usize>> {
    let (a, b) = s.split_once("..").ok_or_else(|| parse_error(format!("expected `lo..hi`, got {s:?}")))?;
    let lo: usize = a.trim().parse().map_err(|_| parse_error(format!("bad range start in {s:?}")))?;
    let hi: usize = b.trim().trim_start_matches('=').parse().map_err(|_| parse_error(format!("bad range end in {s:?}")))?;
    if lo > hi {
        return Err(invalid(format!("empty range {s:?}")));
    }
    Ok((lo..=hi).collect())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------

pub fn germ(c: &GermCmd, g: &Global) -> Result<Outcome> {
    let GermCmd::Classify { input } = c;
    let phi = match AnySeries::from_json_str(&read(input)?).map_err(|e| parse_error(format!("{}: {e}", input.display())))? {
        AnySeries::Two(s) => s,
        AnySeries::One(_) => return Err(invalid("an unfolding needs a two-variable series φ(λ, t)")),
    };
    let phi = match g.degree {
        Some(d) => phi.extend(d).truncate(d),
        None => phi,
    };
    let germ = UnfoldingGerm::new(phi)?;
    let mut opts = ClassifyOptions { seed: g.seed, ..Default::default() };
    if let Some(t) = g.tol {
        opts.eps = t;
    }
    let rec = classify_unfolding(&germ, &opts)?;
    let mut out = Outcome::default();
    if rec.m > rec.h && rec.blocks.len() > 1 {
        out.warn(format!("{} speed blocks: the tangency splits into several branches", rec.blocks.len()));
    }
    out.push(Artifact::json("record.json", &rec)?);
    Ok(out)
}

// ---------------------------------------------------------------------------

fn resonance_warnings(out: &mut Outcome, u: C64, s: C64, k: usize, tol: f64) {
    for ((a, b), d) in near_resonances(u, s, k, tol) {
        out.warn(format!("near resonance u^{a} s^{b}: |u^a s^b − 1| = {d:.3e}; homological divisors are ill-conditioned"));
    }
}

pub fn saddle(c: &SaddleCmd, g: &Global) -> Result<Outcome> {
    let mut out = Outcome::default();
    match c {
        SaddleCmd::Find { family, lambda, period, point: p } => {
            if *period == 0 {
                return Err(invalid("--period must be at least 1"));
            }
            let fam = family::load(family)?;
            let lam = complex_list(lambda)?;
            let member = fam.family()?.member(&lam).map_err(|e| invalid(e.to_string()))?;
            let tol = g.tol.unwrap_or(1e-12);
            let pp = find_periodic(&member, *period, point(p)?, tol)?;
            let mut rec = json!({ "lambda": lam, "periodic": pp });
            if pp.kind == OrbitType::Saddle {
                let sd = pp.saddle()?;
                let m = margins(sd.u, sd.s, 1)?;
                resonance_warnings(&mut out, sd.u, sd.s, m.k_prime.max(2) + 1, RESONANCE_TOL);
                rec["saddle"] = serde_json::to_value(&sd)?;
                rec["margins"] = serde_json::to_value(m)?;
            } else {
                out.warn(format!("periodic point is not a saddle ({:?})", pp.kind));
            }
            out.push(Artifact::json("periodic.json", &rec)?);
        }
        SaddleCmd::Resonance { u, s, order } => {
            let (u, s) = (complex(u)?, complex(s)?);
            let tol = g.tol.unwrap_or(RESONANCE_TOL);
            let exact = detect_resonance(u, s, *order, tol);
            let near: Vec<_> = near_resonances(u, s, *order, tol)
                .into_iter()
                .map(|((a, b), d)| json!({ "a": a, "b": b, "distance": d }))
                .collect();
            resonance_warnings(&mut out, u, s, *order, tol);
            let m = margins(u, s, 1).ok();
            out.push(Artifact::json("resonance.json", &json!({ "u": u, "s": s, "order": order, "tol": tol, "resonances": exact, "near": near, "margins": m }))?);
        }
        SaddleCmd::NormalForm { input, k } => {
            let f: LocalGerm = serde_json::from_str(&read(input)?).map_err(|e| parse_error(format!("{}: {e}", input.display())))?;
            let f = match g.degree {
                Some(d) => LocalGerm::new(f.f1.extend(d).truncate(d), f.f2.extend(d).truncate(d))?,
                None => f,
            };
            let nf = normal_form_star_k(&f, *k)?;
            resonance_warnings(&mut out, nf.u, nf.s, k + 2, RESONANCE_TOL);
            let section = match zero_slope_section(&nf, f.degree()) {
                Ok(z) => Some(z.zeta),
                Err(e) => {
                    out.warn(format!("no zero-slope section: {e}"));
                    None
                }
            };
            let residual = nf.conjugacy_residual(&f);
            out.push(Artifact::json("normal_form.json", &json!({ "normal_form": nf, "conjugacy_residual": residual, "zero_slope_section": section }))?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

pub fn bidisk(c: &BidiskCmd, g: &Global) -> Result<Outcome> {
    let mut out = Outcome::default();
    match c {
        BidiskCmd::RhCheck { trials, max_degree } => {
            let r = rh_check(*trials, *max_degree, g.seed);
            let violations = r.trials - r.satisfied - r.failures.len();
            for f in &r.failures {
                out.warn(format!("trial skipped: {f}"));
            }
            out.push(Artifact::json("rh_check.json", &r)?);
            if violations > 0 {
                return Err(anyhow::anyhow!("{violations} trials exceed the Riemann–Hurwitz bound")).context(serde_json::to_string(&r)?);
            }
        }
        BidiskCmd::Horseshoe { a, c, period, len, radius } => {
            let f = PolynomialAutomorphism::quadratic(complex(a)?, complex(c)?);
            let frame = match radius {
                Some(r) => Frame { radius: positive("--radius", *r)? },
                None => default_frame(&f)?,
            };
            let pts = horseshoe_periodic_points(&f, frame, *period)?;
            let mut csv = String::from("index,x_re,x_im,y_re,y_im\n");
            for (i, p) in pts.iter().enumerate() {
                csv.push_str(&format!("{i},{},{},{},{}\n", fmt17(p[0].re), fmt17(p[0].im), fmt17(p[1].re), fmt17(p[1].im)));
            }
            out.push(Artifact::csv("periodic_points.csv", csv));
            if *len > 0 {
                let graphs = horseshoe_stable_graphs(&f, frame, *len, g.degree.unwrap_or(16))?;
                out.push(Artifact::json("stable_graphs.json", &graphs)?);
            }
            out.push(Artifact::json("horseshoe.json", &json!({ "frame": frame, "period": period, "points": pts.len() }))?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

fn events_csv(events: &[TangencyEvent]) -> String {
    let mut s = String::from("index,lambda_re,lambda_im,y_re,y_im,x_re,x_im,residual,det_ratio,degenerate,h,m\n");
    for (i, e) in events.iter().enumerate() {
        let l = e.lambda[0];
        let (h, m) = e.record.as_ref().map(|r| (r.h.to_string(), r.m.to_string())).unwrap_or_default();
        s.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{},{},{h},{m}\n",
            fmt17(l.re),
            fmt17(l.im),
            fmt17(e.y.re),
            fmt17(e.y.im),
            fmt17(e.x.re),
            fmt17(e.x.im),
            fmt17(e.residual),
            fmt17(e.det_ratio),
            e.degenerate
        ));
    }
    s
}

fn event_warnings(out: &mut Outcome, events: &[TangencyEvent]) {
    for e in events {
        if e.degenerate {
            out.warn(format!("degenerate tangency at λ = {}", e.lambda[0]));
        }
        if let Some(err) = &e.classify_error {
            out.warn(format!("event at λ = {} not classified: {err}", e.lambda[0]));
        }
    }
}

fn detect_options(g: &Global, classify: bool) -> DetectOptions {
    let mut d = DetectOptions { classify, ..Default::default() };
    if let Some(t) = g.tol {
        d.tol = t;
    }
    if let Some(k) = g.degree {
        d.classify_degree = k;
    }
    d.classify_opts.seed = g.seed;
    d
}

fn one_param(p: &PairTemplate) -> Result<()> {
    if p.dim != 1 {
        return Err(invalid("this scan needs a one-parameter pair"));
    }
    Ok(())
}

pub fn scan(c: &ScanCmd, g: &Global) -> Result<Outcome> {
    let mut out = Outcome::default();
    match c {
        ScanCmd::Tangency { family, n, window, no_classify } => {
            let fam = family::load(family)?;
            let tpl = fam.pair()?;
            one_param(tpl)?;
            let pair = tpl.at(*n)?;
            let w = Window::disk(
                complex(&window.lambda_center)?,
                positive("--lambda-radius", window.lambda_radius)?,
                complex(&window.y_center)?,
                positive("--y-radius", window.y_radius)?,
            );
            let det = detect_tangencies(&pair, &w, &detect_options(g, !no_classify))?;
            event_warnings(&mut out, &det.events);
            if det.events.is_empty() {
                out.warn("no tangency in the window");
            }
            out.push(Artifact::csv("events.csv", events_csv(&det.events)));
            out.push(Artifact::json("detection.json", &det)?);
        }
        ScanCmd::Scaling { family, n, bracket, sigma, widen, lambda_center, y_center, y_radius } => {
            let fam = family::load(family)?;
            let tpl = fam.pair()?.clone();
            one_param(&tpl)?;
            let scale = tpl.scale.clone().ok_or_else(|| invalid("the pair has no `scale`"))?;
            let ns = index_range(n)?;
            let b: Vec<f64> = bracket
                .split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| parse_error(format!("bad bracket {bracket:?}"))))
                .collect::<Result<_>>()?;
            if b.len() != 2 || !(0.0 < b[0] && b[0] < b[1]) {
                return Err(invalid("--bracket must be `lo,hi` with 0 < lo < hi"));
            }
            let opts = SequenceOptions {
                bracket: [b[0], b[1]],
                widen: positive("--widen", *widen)?,
                lam_center: complex(lambda_center)?,
                y_center: complex(y_center)?,
                y_radius: positive("--y-radius", *y_radius)?,
                detect: detect_options(g, false),
            };
            let entries = secondary_sequence(|k| tpl.at(Some(k as u32)).map_err(|e| ScanError::Invalid(e.to_string())), &ns, &opts)?;
            for e in &entries {
                if e.duplicates {
                    out.warn(format!("n = {}: nearby events share the window", e.n));
                }
            }
            let u0 = scale.eval(&[opts.lam_center, opts.y_center]).norm();
            let fit = ScanResult::from_entries(&entries, u0, positive("--sigma", *sigma)?)?;
            if fit.deviation > 0.03 {
                out.warn(format!("fitted slope deviates from ln|u|/σ by {:.2}%", 100.0 * fit.deviation));
            }
            out.push(Artifact::csv("scaling.csv", fit.to_csv()));
            out.push(Artifact::json("fit.json", &json!({
                "slope": fit.slope, "intercept": fit.intercept, "target": fit.target, "deviation": fit.deviation,
                "max_residual": fit.max_residual, "rms_residual": fit.rms_residual, "u0_abs": u0, "sigma": sigma,
                "n": fit.n,
            }))?);
        }
        ScanCmd::Continue { family, constraint, start, period, target, step, length, direction } => {
            let fam = family::load(family)?;
            let seed = complex_list(start)?;
            let dir = direction.as_deref().map(complex_list).transpose()?;
            let mut opts = ContinuationOptions { step: positive("--step", *step)?, length: positive("--length", *length)?, ..Default::default() };
            if let Some(t) = g.tol {
                opts.tol = t;
            }
            let curve = match constraint.as_str() {
                "tangency" => {
                    let tpl = fam.pair()?;
                    let con = persistent_tangency(&tpl.at(None)?).map_err(|e| invalid(e.to_string()))?;
                    if seed.len() != con.unknowns {
                        return Err(invalid(format!("--start needs {} values (λ1, λ2, y)", con.unknowns)));
                    }
                    trace_constraint_curve(&con, &seed, dir.as_deref(), &opts)?
                }
                "multiplier" => {
                    let t = target.as_deref().ok_or_else(|| invalid("--target is required for multiplier levels"))?;
                    let con = MultiplierLevel { family: fam.family()?.clone(), period: *period, target: complex(t)? };
                    if seed.len() != con.unknowns() {
                        return Err(invalid(format!("--start needs {} values (λ…, x, y)", con.unknowns())));
                    }
                    trace_constraint_curve(&con, &seed, dir.as_deref(), &opts)?
                }
                other => return Err(invalid(format!("unknown constraint {other:?} (tangency, multiplier)"))),
            };
            let reached = curve.arclength.last().copied().unwrap_or(0.0);
            if reached + 0.5 * opts.step < opts.length {
                out.warn(format!("stopped at arclength {reached:.6} of {}", opts.length));
            }
            out.push(Artifact::csv("curve.csv", curve.to_csv()));
            out.push(Artifact::json("curve.json", &json!({
                "points": curve.points.len(), "arclength": reached, "declared_step": curve.declared_step,
                "max_residual": curve.residuals.iter().cloned().fold(0.0, f64::max),
            }))?);
        }
        ScanCmd::Moduli { family, from, to, samples, point: p, period } => {
            let fam = family::load(family)?;
            let (a, b) = (complex_list(from)?, complex_list(to)?);
            if a.len() != b.len() || a.len() != fam.params.len() {
                return Err(invalid(format!("--from and --to need {} values", fam.params.len())));
            }
            if *samples < 2 {
                return Err(invalid("--samples must be at least 2"));
            }
            let params: Vec<Vec<C64>> = (0..*samples)
                .map(|k| {
                    let t = k as f64 / (*samples - 1) as f64;
                    a.iter().zip(&b).map(|(x, y)| x + (y - x) * t).collect()
                })
                .collect();
            let prof = moduli_profile(fam.family()?, &params, point(p)?, *period)?;
            out.push(Artifact::csv("moduli.csv", prof.to_csv()));
            out.push(Artifact::json("moduli.json", &json!({
                "samples": prof.samples.len(), "spread": prof.spread, "error": prof.error, "non_constant": prof.non_constant,
            }))?);
        }
        ScanCmd::TypeChange { family, origin, e1, e2, cols, rows, max_period, radius, per_axis } => {
            let fam = family::load(family)?;
            let f = fam.family()?;
            let o = complex_list(origin)?;
            let v1 = complex_list(e1)?;
            let v2 = match e2 {
                Some(s) => complex_list(s)?,
                None => vec![C64::new(0.0, 0.0); o.len()],
            };
            if o.len() != f.dim() || v1.len() != f.dim() || v2.len() != f.dim() {
                return Err(invalid(format!("--origin, --e1, --e2 need {} values", f.dim())));
            }
            if *cols == 0 || *rows == 0 || *max_period == 0 {
                return Err(invalid("--cols, --rows and --max-period must be positive"));
            }
            let grid = ParamGrid::rect(&o, &v1, &v2, *cols, *rows);
            let census = CensusOptions { radius: positive("--radius", *radius)?, per_axis: *per_axis, extra_seeds: vec![] };
            let rep = detect_type_change(f, &grid, *max_period, &census)?;
            let mut csv = String::from("index,period,multiplier,from,to,modulus_error,point_x_re,point_x_im,point_y_re,point_y_im");
            for k in 0..f.dim() {
                csv.push_str(&format!(",lambda{0}_re,lambda{0}_im", k + 1));
            }
            csv.push('\n');
            for (i, e) in rep.events.iter().enumerate() {
                csv.push_str(&format!(
                    "{i},{},{},{:?},{:?},{},{},{},{},{}",
                    e.period,
                    e.multiplier,
                    e.from,
                    e.to,
                    fmt17(e.modulus_error),
                    fmt17(e.point[0].re),
                    fmt17(e.point[0].im),
                    fmt17(e.point[1].re),
                    fmt17(e.point[1].im)
                ));
                for l in &e.lambda {
                    csv.push_str(&format!(",{},{}", fmt17(l.re), fmt17(l.im)));
                }
                csv.push('\n');
            }
            out.push(Artifact::csv("type_changes.csv", csv));
            out.push(Artifact::json("type_changes.json", &rep)?);
        }
    }
    Ok(out)
}

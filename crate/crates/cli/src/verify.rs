//! Check suites behind `tangency-lab verify`. Each check reports a measured
//! value against a tolerance; any failed check is a numeric failure (exit 4).

use anyhow::{anyhow, Result};
use num_complex::Complex64 as C64;
use serde::Serialize;

use tangency_core::bidisk::{default_frame, horseshoe_periodic_points, rh_check};
use tangency_core::germ::{classify_unfolding, ClassifyOptions, UnfoldingGerm};
use tangency_core::param::parse_expr;
use tangency_core::saddle::detect_resonance;
use tangency_core::scan::{secondary_sequence, CurvePair, DetectOptions, ScanResult, SequenceOptions};
use tangency_core::PolynomialAutomorphism;

use crate::output::{invalid, Artifact, Outcome};
use crate::Global;

pub const SUITES: [&str; 5] = ["germ-oracles", "scaling-laws", "rh-counts", "resonance", "horseshoe"];

#[derive(Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub measured: String,
    pub tolerance: String,
    pub pass: bool,
}

fn check(suite: &'static str, name: impl Into<String>, measured: impl ToString, tolerance: impl ToString, pass: bool) -> Check {
    Check { suite, name: name.into(), measured: measured.to_string(), tolerance: tolerance.to_string(), pass }
}

/// t^{h+1} + λ^k has order h, multiplicity h·k and one speed block (h, k).
fn germ_oracles(_: &Global) -> Vec<Check> {
    let mut out = Vec::new();
    for h in 1..=3usize {
        for k in 1..=3usize {
            let name = format!("t^{} + λ^{k}", h + 1);
            let r = UnfoldingGerm::from_terms(h + k + 2, &[(0, h + 1, 1.0), (k, 0, 1.0)])
                .map_err(|e| e.to_string())
                .and_then(|g| classify_unfolding(&g, &ClassifyOptions::default()).map_err(|e| e.to_string()));
            match r {
                Ok(r) => {
                    let blocks: Vec<(usize, String)> = r.blocks.iter().map(|(s, q)| (*s, q.to_string())).collect();
                    let ok = r.h == h && r.m == h * k && blocks == vec![(h, k.to_string())];
                    out.push(check("germ-oracles", name, format!("h={} m={} blocks={blocks:?}", r.h, r.m), format!("h={h} m={} exact", h * k), ok));
                }
                Err(e) => out.push(check("germ-oracles", name, e, "classification succeeds", false)),
            }
        }
    }
    out
}

fn scaling_laws(_: &Global) -> Vec<Check> {
    let names = ["l".to_string(), "y".to_string()];
    let ns: Vec<usize> = (5..=25).collect();
    let mut out = Vec::new();
    for sigma in 1..=3u32 {
        let build = |n: usize| {
            let du = parse_expr(&format!("(y - 0.3)^2 + l^{sigma} * (1 + 0.3*(y - 0.3))"), &names).unwrap();
            Ok(CurvePair::new(1, du, parse_expr("1 + 0.2*l", &names).unwrap())?.scaled(parse_expr("2 + 0.1*l", &names).unwrap(), n as u32))
        };
        let r5 = 2f64.powf(-5.0 / sigma as f64);
        let opts = SequenceOptions {
            bracket: [0.3 * r5, 3.0 * r5],
            widen: 2.0,
            lam_center: C64::new(0.0, 0.0),
            y_center: C64::new(0.3, 0.0),
            y_radius: 0.3,
            detect: DetectOptions { classify: false, ..Default::default() },
        };
        let name = format!("σ = {sigma}, n = 5..25");
        match secondary_sequence(build, &ns, &opts).and_then(|e| ScanResult::from_entries(&e, 2.0, sigma as f64)) {
            Ok(r) => out.push(check(
                "scaling-laws",
                name,
                format!("slope {:.6} vs {:.6} ({:.3}%)", r.slope, r.target, 100.0 * r.deviation),
                "≤ 3%",
                r.deviation <= 0.03,
            )),
            Err(e) => out.push(check("scaling-laws", name, e, "sequence found", false)),
        }
    }
    out
}

fn rh_counts(g: &Global) -> Vec<Check> {
    let r = rh_check(1000, 5, g.seed);
    vec![check(
        "rh-counts",
        "tangencies ≤ deg(π₁) − 1 on random horizontal manifolds",
        format!("{}/{}", r.satisfied, r.trials),
        "1000/1000",
        r.satisfied == 1000,
    )]
}

fn resonance(_: &Global) -> Vec<Check> {
    let c = |x: f64| C64::new(x, 0.0);
    let a = detect_resonance(c(2.0), c(0.5), 12, 1e-9);
    let b = detect_resonance(c(4.0), c(0.5), 12, 1e-9);
    let none = detect_resonance(C64::from_polar(2.0, 0.3), C64::from_polar(0.4, 1.1), 12, 1e-9);
    vec![
        check("resonance", "(u, s) = (2, 1/2)", format!("{:?}", a.first()), "Some((1, 1))", a.first() == Some(&(1, 1))),
        check("resonance", "(u, s) = (4, 1/2)", format!("{:?}", b.first()), "Some((1, 2))", b.first() == Some(&(1, 2))),
        check("resonance", "generic pair", format!("{} resonances", none.len()), "0", none.is_empty()),
    ]
}

fn horseshoe(_: &Global) -> Vec<Check> {
    let f = PolynomialAutomorphism::quadratic_real(0.1, -6.0);
    let frame = match default_frame(&f) {
        Ok(fr) => fr,
        Err(e) => return vec![check("horseshoe", "crossing frame", e, "found", false)],
    };
    (1..=5)
        .map(|n| {
            let got = horseshoe_periodic_points(&f, frame, n).map(|p| p.len());
            let measured = match &got {
                Ok(k) => k.to_string(),
                Err(e) => e.to_string(),
            };
            check("horseshoe", format!("f_(0.1,−6) points of period dividing {n}"), measured, 1usize << n, got.ok() == Some(1 << n))
        })
        .collect()
}

pub fn run(suite: &str, g: &Global) -> Result<Outcome> {
    let selected: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => return Err(invalid(format!("unknown suite {s:?}; known: all, {}", SUITES.join(", ")))),
    };
    let mut checks = Vec::new();
    for s in selected {
        checks.extend(match s {
            "germ-oracles" => germ_oracles(g),
            "scaling-laws" => scaling_laws(g),
            "rh-counts" => rh_counts(g),
            "resonance" => resonance(g),
            _ => horseshoe(g),
        });
    }
    for c in &checks {
        eprintln!("{} {:<5} {}: {} (tolerance {})", c.suite, if c.pass { "PASS" } else { "FAIL" }, c.name, c.measured, c.tolerance);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let mut out = Outcome::default();
    out.push(Artifact::json("verify.json", &checks)?);
    if failed > 0 {
        if let Some(dir) = &g.out {
            crate::output::write_all(dir, &format!("verify {suite}"), g.seed, g.threads, &out)?;
        }
        return Err(anyhow!("{failed} of {} checks failed", checks.len()));
    }
    Ok(out)
}

//! Scenario files: one command with its options, resolved into an ordinary
//! command line, plus the `germ suite` batch.
//!
//! ```toml
//! command = "scan scaling"
//! seed = 7
//! out = "results"
//! family = "toy.toml"        # paths are relative to the scenario file
//! [options]
//! n = "5..25"
//! bracket = "0.01,0.1"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Parser;
use serde::{Deserialize, Serialize};

use tangency_core::germ::{classify_unfolding, ClassifyOptions, TangencyRecord, UnfoldingGerm};
use tangency_core::param::parse_expr;
use tangency_core::{AnySeries, TruncatedSeries2};

use crate::output::{invalid, parse_error, write_all, Artifact, Outcome};
use crate::{Cli, Global};

const COMMANDS: [&str; 13] = [
    "verify",
    "germ classify",
    "germ suite",
    "saddle find",
    "saddle resonance",
    "saddle normal-form",
    "bidisk rh-check",
    "bidisk horseshoe",
    "scan tangency",
    "scan scaling",
    "scan continue",
    "scan moduli",
    "scan type-change",
];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Scenario {
    command: String,
    seed: Option<u64>,
    threads: Option<usize>,
    tol: Option<f64>,
    degree: Option<usize>,
    out: Option<PathBuf>,
    family: Option<PathBuf>,
    input: Option<PathBuf>,
    suite: Option<String>,
    #[serde(default)]
    options: BTreeMap<String, toml::Value>,
    #[serde(default)]
    germ: Vec<GermDef>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GermDef {
    name: String,
    /// `[λ-power, t-power, "coefficient"]`.
    #[serde(default)]
    terms: Vec<(usize, usize, String)>,
    degree: Option<usize>,
    input: Option<PathBuf>,
}

#[derive(Serialize)]
struct SuiteEntry {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<TangencyRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn existing(base: &Path, p: &Path) -> Result<PathBuf> {
    let full = base.join(p);
    if full.is_file() {
        Ok(full)
    } else {
        Err(invalid(format!("referenced file {} does not exist", full.display())))
    }
}

fn scalar(key: &str, v: &toml::Value) -> Result<Option<String>> {
    Ok(match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(format!("{f:?}")),
        toml::Value::Boolean(true) => Some(String::new()),
        toml::Value::Boolean(false) => None,
        _ => return Err(invalid(format!("option {key:?} must be a string, number or boolean"))),
    })
}

fn germ_suite(base: &Path, defs: &[GermDef], g: &Global) -> Result<Outcome> {
    if defs.is_empty() {
        return Err(invalid("`germ suite` needs at least one [[germ]] entry"));
    }
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    for s in defs {
        let phi = match (&s.input, s.terms.is_empty()) {
            (Some(p), true) => {
                let text = fs::read_to_string(existing(base, p)?)?;
                match AnySeries::from_json_str(&text).map_err(|e| parse_error(format!("{}: {e}", p.display())))? {
                    AnySeries::Two(t) => t,
                    AnySeries::One(_) => return Err(invalid(format!("germ {:?}: expected a two-variable series", s.name))),
                }
            }
            (None, false) => {
                let mut terms = Vec::new();
                for (i, j, c) in &s.terms {
                    let c = parse_expr(c, &[])
                        .map_err(|e| parse_error(format!("germ {:?}: {e}", s.name)))?
                        .as_constant()
                        .ok_or_else(|| invalid(format!("germ {:?}: coefficients must be constants", s.name)))?;
                    terms.push((*i, *j, c));
                }
                let d = s.degree.or(g.degree).unwrap_or_else(|| terms.iter().map(|t| t.0 + t.1).max().unwrap_or(1) + 2);
                TruncatedSeries2::from_terms(d, &terms)
            }
            _ => return Err(invalid(format!("germ {:?}: give either `terms` or `input`", s.name))),
        };
        let rec = UnfoldingGerm::new(phi)
            .map_err(|e| e.to_string())
            .and_then(|germ| classify_unfolding(&germ, &ClassifyOptions { seed: g.seed, ..Default::default() }).map_err(|e| e.to_string()));
        match rec {
            Ok(r) => rows.push(SuiteEntry { name: s.name.clone(), record: Some(r), error: None }),
            Err(e) => {
                out.warn(format!("germ {:?} not classified: {e}", s.name));
                rows.push(SuiteEntry { name: s.name.clone(), record: None, error: Some(e) });
            }
        }
    }
    out.push(Artifact::json("records.json", &rows)?);
    Ok(out)
}

pub fn run(path: &Path, g: &Global) -> Result<Outcome> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let sc: Scenario = toml::from_str(&text).map_err(|e| parse_error(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let command = sc.command.split_whitespace().collect::<Vec<_>>().join(" ");
    if !COMMANDS.contains(&command.as_str()) {
        return Err(invalid(format!("unknown scenario command {:?}", sc.command)));
    }
    if let Some(t) = sc.tol {
        if !(t > 0.0) {
            return Err(invalid("tol must be positive"));
        }
    }
    let seed = sc.seed.unwrap_or(g.seed);
    let out_dir = match (&g.out, &sc.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base.join(format!("{}-out", path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario"))),
    };
    let global = Global {
        seed,
        tol: sc.tol.or(g.tol),
        degree: sc.degree.or(g.degree),
        threads: sc.threads.or(g.threads),
        out: Some(out_dir.clone()),
    };
    let label = format!("run {} ({command})", path.display());

    if command == "germ suite" {
        let out = germ_suite(base, &sc.germ, &global)?;
        write_all(&out_dir, &label, seed, global.threads, &out)?;
        return Ok(out);
    }
    if !sc.germ.is_empty() {
        return Err(invalid("[[germ]] entries belong to `germ suite` scenarios"));
    }

    let mut argv: Vec<String> = vec!["tangency-lab".into()];
    argv.extend(command.split(' ').map(String::from));
    if command == "verify" {
        argv.push(sc.suite.clone().ok_or_else(|| invalid("`verify` scenarios need `suite`"))?);
    }
    for (flag, p) in [("--family", &sc.family), ("--input", &sc.input)] {
        if let Some(p) = p {
            argv.push(flag.into());
            argv.push(existing(base, p)?.display().to_string());
        }
    }
    for (k, v) in &sc.options {
        if let Some(val) = scalar(k, v)? {
            argv.push(format!("--{}", k.replace('_', "-")));
            if !val.is_empty() {
                argv.push(val);
            }
        }
    }
    argv.extend(["--seed".to_string(), seed.to_string(), "--out".into(), out_dir.display().to_string()]);
    if let Some(t) = global.tol {
        argv.extend(["--tol".to_string(), format!("{t:?}")]);
    }
    if let Some(d) = global.degree {
        argv.extend(["--degree".to_string(), d.to_string()]);
    }
    if let Some(t) = global.threads {
        argv.extend(["--threads".to_string(), t.to_string()]);
    }
    let cli = Cli::try_parse_from(&argv).map_err(|e| invalid(format!("scenario options do not fit `{command}`: {e}")))?;
    crate::execute(&cli, &label)
}

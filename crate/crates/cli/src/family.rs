//! Family and curve-pair definition files.
//!
//! ```toml
//! name = "quadratic"
//! params = ["a", "c"]
//!
//! [[factor]]          # (z, w) ↦ (p(z) + a·w, z), p listed from the constant term up
//! p = ["c", "0", "1"]
//! a = "a"
//!
//! [box]
//! re = [[0.0, 1.0], [-10.0, 2.0]]
//!
//! [pair]              # ΔU(λ, y) · scale(λ)^n = target(λ), variables λ… then y
//! delta_u = "(y - 0.3)^2 + a"
//! target = "1"
//! scale = "2"
//! ```
//!
//! A `[synthetic]` block replaces the factors with a germ: `degree`, term
//! lists `f1`/`f2` of `[i, j, "expr"]`, and optionally `f1_series`/`f2_series`
//! naming series JSON files whose terms are added as constants.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Deserialize;

use tangency_core::henon::{FactorTemplate, FamilyKind, ParamBox, SyntheticTemplate};
use tangency_core::param::{parse_expr, ParamPoly, MAX_VARS};
use tangency_core::scan::CurvePair;
use tangency_core::{AnySeries, ParametricFamily};

use crate::output::{invalid, parse_error};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFile {
    name: Option<String>,
    params: Vec<String>,
    factor: Option<Vec<FactorDef>>,
    synthetic: Option<SyntheticDef>,
    #[serde(rename = "box")]
    bbox: Option<BoxDef>,
    pair: Option<PairDef>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDef {
    p: Vec<String>,
    a: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticDef {
    degree: usize,
    #[serde(default)]
    f1: Vec<(usize, usize, String)>,
    #[serde(default)]
    f2: Vec<(usize, usize, String)>,
    f1_series: Option<PathBuf>,
    f2_series: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxDef {
    re: Vec<[f64; 2]>,
    #[serde(default)]
    im: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairDef {
    delta_u: String,
    #[serde(default = "one")]
    target: String,
    scale: Option<String>,
    unstable: Option<String>,
    stable: Option<String>,
}

fn one() -> String {
    "1".into()
}

/// Curve pair with the period exponent left open.
#[derive(Clone, Debug)]
pub struct PairTemplate {
    pub dim: usize,
    pub delta_u: ParamPoly,
    pub target: ParamPoly,
    pub scale: Option<ParamPoly>,
    pub unstable: String,
    pub stable: String,
}

impl PairTemplate {
    pub fn at(&self, n: Option<u32>) -> Result<CurvePair> {
        let mut p = CurvePair::new(self.dim, self.delta_u.clone(), self.target.clone())?
            .with_ids(&self.unstable, &self.stable);
        if let Some(n) = n {
            let scale = self.scale.clone().ok_or_else(|| invalid("the pair has no `scale`, so --n cannot be used"))?;
            p = p.scaled(scale, n);
        }
        Ok(p)
    }
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub params: Vec<String>,
    pub family: Option<ParametricFamily>,
    pub pair: Option<PairTemplate>,
}

impl Loaded {
    pub fn family(&self) -> Result<&ParametricFamily> {
        self.family.as_ref().ok_or_else(|| invalid("the family file defines no map (`[[factor]]` or `[synthetic]`)"))
    }

    pub fn pair(&self) -> Result<&PairTemplate> {
        self.pair.as_ref().ok_or_else(|| invalid("the family file has no `[pair]` block"))
    }
}

fn expr(src: &str, names: &[String]) -> Result<ParamPoly> {
    parse_expr(src, names).map_err(|e| parse_error(format!("{e}")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn series_terms(path: &Path) -> Result<Vec<(usize, usize, ParamPoly)>> {
    match AnySeries::from_json_str(&read(path)?).map_err(|e| parse_error(format!("{}: {e}", path.display())))? {
        AnySeries::Two(s) => Ok(s.terms().map(|(i, j, c)| (i, j, ParamPoly::constant(c))).collect()),
        AnySeries::One(_) => Err(invalid(format!("{} holds a one-variable series", path.display()))),
    }
}

pub fn load(path: &Path) -> Result<Loaded> {
    let text = read(path)?;
    let file: FamilyFile = toml::from_str(&text).map_err(|e| parse_error(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if file.params.len() > MAX_VARS {
        return Err(invalid(format!("at most {MAX_VARS} parameters are supported")));
    }
    let names = &file.params;
    let kind = match (file.factor, file.synthetic) {
        (Some(_), Some(_)) => return Err(invalid("give either `[[factor]]` or `[synthetic]`, not both")),
        (Some(fs), None) => {
            if fs.is_empty() {
                return Err(invalid("`[[factor]]` list is empty"));
            }
            let mut out = Vec::new();
            for f in fs {
                let p = f.p.iter().map(|s| expr(s, names)).collect::<Result<Vec<_>>>()?;
                out.push(FactorTemplate { p, a: expr(&f.a, names)? });
            }
            Some(FamilyKind::Henon(out))
        }
        (None, Some(s)) => {
            let terms = |list: &[(usize, usize, String)]| -> Result<Vec<(usize, usize, ParamPoly)>> {
                list.iter().map(|(i, j, e)| Ok((*i, *j, expr(e, names)?))).collect()
            };
            let mut f1 = terms(&s.f1)?;
            let mut f2 = terms(&s.f2)?;
            if let Some(p) = &s.f1_series {
                f1.extend(series_terms(&base.join(p))?);
            }
            if let Some(p) = &s.f2_series {
                f2.extend(series_terms(&base.join(p))?);
            }
            Some(FamilyKind::Synthetic(SyntheticTemplate { degree: s.degree, f1, f2 }))
        }
        (None, None) => None,
    };
    let bbox = file.bbox.map(|b| ParamBox { re: b.re, im: b.im });
    if let Some(b) = &bbox {
        if b.re.iter().chain(&b.im).any(|r| !(r[0] <= r[1])) {
            return Err(invalid("parameter box ranges must satisfy lo ≤ hi"));
        }
    }
    let family = kind.map(|kind| ParametricFamily {
        name: file.name.clone().unwrap_or_else(|| "family".into()),
        params: names.clone(),
        kind,
        bbox,
    });
    let pair = match file.pair {
        Some(p) => {
            if names.len() + 1 > MAX_VARS || names.is_empty() {
                return Err(invalid("a curve pair needs one or two parameters"));
            }
            let mut vars = names.clone();
            vars.push("y".into());
            Some(PairTemplate {
                dim: names.len(),
                delta_u: expr(&p.delta_u, &vars)?,
                target: expr(&p.target, &vars)?,
                scale: p.scale.as_deref().map(|s| expr(s, &vars)).transpose()?,
                unstable: p.unstable.unwrap_or_else(|| "unstable".into()),
                stable: p.stable.unwrap_or_else(|| "stable".into()),
            })
        }
        None => None,
    };
    if family.is_none() && pair.is_none() {
        return Err(invalid(format!("{} defines neither a map nor a pair", path.display())));
    }
    Ok(Loaded { params: names.clone(), family, pair })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tangency_core::C64;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn quadratic_family_matches_builtin() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "q.toml", "params = [\"a\", \"c\"]\n[[factor]]\np = [\"c\", \"0\", \"1\"]\na = \"a\"\n");
        let l = load(&p).unwrap();
        let f = l.family().unwrap();
        let lam = [C64::new(0.3, 0.0), C64::new(-1.0, 0.2)];
        let mine = f.member(&lam).unwrap();
        let builtin = ParametricFamily::quadratic().member(&lam).unwrap();
        assert_eq!(mine, builtin);
        assert!(l.pair.is_none());
    }

    #[test]
    fn pair_and_box() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "t.toml",
            "params = [\"l\"]\n[pair]\ndelta_u = \"(y - 0.3)^2 + l\"\nscale = \"2\"\n",
        );
        let l = load(&p).unwrap();
        let pair = l.pair().unwrap().at(Some(3)).unwrap();
        let d = pair.difference().eval(&[C64::new(0.1, 0.0), C64::new(0.3, 0.0)]);
        assert!((d - C64::new(0.8 - 1.0, 0.0)).norm() < 1e-15);
        assert!(l.family().is_err());
    }

    #[test]
    fn errors_are_classified() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "b.toml", "params = [\"a\"\n");
        assert_eq!(crate::output::exit_code(&load(&bad).unwrap_err()), 2);
        let unknown = write(dir.path(), "u.toml", "params = [\"a\"]\n[[factor]]\np = [\"q\"]\na = \"a\"\n");
        assert_eq!(crate::output::exit_code(&load(&unknown).unwrap_err()), 2);
        let both = write(dir.path(), "x.toml", "params = [\"a\"]\n[[factor]]\np = [\"1\"]\na = \"a\"\n[synthetic]\ndegree = 2\n");
        assert_eq!(crate::output::exit_code(&load(&both).unwrap_err()), 3);
        assert_eq!(crate::output::exit_code(&load(&dir.path().join("missing.toml")).unwrap_err()), 3);
    }
}

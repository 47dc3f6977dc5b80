//! Polynomials in up to three complex variables, with a small text parser
//! (`"1.5 - 2*a + 0.5i*a^2*c"`).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ring::{Ring, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character {ch:?} at offset {pos} in {src:?}")]
    Unexpected { ch: char, pos: usize, src: String },
    #[error("unexpected end of expression {0:?}")]
    Eof(String),
    #[error("unknown parameter {name:?} (known: {known:?})")]
    UnknownParam { name: String, known: Vec<String> },
    #[error("division by a non-constant expression in {0:?}")]
    NonConstantDivisor(String),
    #[error("division by zero in {0:?}")]
    DivisionByZero(String),
    #[error("{0} variables requested, at most 3 supported")]
    TooManyVariables(usize),
}

/// Number of variables a [`ParamPoly`] can carry.
pub const MAX_VARS: usize = 3;

/// Σ c · λ₁^e₁ λ₂^e₂ λ₃^e₃.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamPoly {
    terms: BTreeMap<[u32; MAX_VARS], C64>,
}

impl ParamPoly {
    pub fn constant(c: C64) -> Self {
        let mut terms = BTreeMap::new();
        if c != C64::new(0.0, 0.0) {
            terms.insert([0; MAX_VARS], c);
        }
        Self { terms }
    }

    pub fn real(c: f64) -> Self {
        Self::constant(C64::new(c, 0.0))
    }

    /// The variable with index `k < MAX_VARS`.
    pub fn var(k: usize) -> Self {
        let mut e = [0; MAX_VARS];
        e[k] = 1;
        Self::monomial(C64::new(1.0, 0.0), e)
    }

    pub fn monomial(c: C64, e: [u32; MAX_VARS]) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(e, c);
        Self { terms }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32; MAX_VARS], &C64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| *c == C64::new(0.0, 0.0))
    }

    pub fn as_constant(&self) -> Option<C64> {
        if self.terms.keys().all(|e| *e == [0; MAX_VARS]) {
            Some(self.terms.get(&[0; MAX_VARS]).copied().unwrap_or_default())
        } else {
            None
        }
    }

    /// Highest exponent of any parameter, used to size the parameter dimension.
    pub fn uses_param(&self, k: usize) -> bool {
        self.terms.iter().any(|(e, c)| e[k] > 0 && *c != C64::new(0.0, 0.0))
    }

    pub fn eval(&self, lam: &[C64]) -> C64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut v = *c;
                for (k, &p) in e.iter().enumerate() {
                    if p > 0 {
                        v *= lam[k].powu(p);
                    }
                }
                v
            })
            .sum()
    }

    /// Evaluation with parameters in any ring (duals give exact λ-derivatives).
    pub fn eval_ring<R: Ring>(&self, lam: &[R], like: &R) -> R {
        let mut acc = like.zero_like();
        for (e, c) in &self.terms {
            let mut v = like.constant_like(*c);
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    v = v * lam[k].powi(p as usize);
                }
            }
            acc = acc + v;
        }
        acc
    }

    pub fn derivative(&self, k: usize) -> Self {
        let mut out = Self::default();
        for (e, c) in &self.terms {
            if e[k] > 0 {
                let mut e2 = *e;
                e2[k] -= 1;
                *out.terms.entry(e2).or_default() += c * e[k] as f64;
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &o.terms {
            *out.terms.entry(*e).or_default() += c;
        }
        out
    }

    pub fn neg(&self) -> Self {
        Self { terms: self.terms.iter().map(|(e, c)| (*e, -c)).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { terms: self.terms.iter().map(|(e, c)| (*e, c * s)).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::default();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &o.terms {
                *out.terms.entry(std::array::from_fn(|k| e1[k] + e2[k])).or_default() += c1 * c2;
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::real(1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }
}

impl fmt::Display for ParamPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .filter(|(_, c)| **c != C64::new(0.0, 0.0))
            .map(|(e, c)| {
                let mut s = format!("({}{:+}i)", c.re, c.im);
                for (k, &p) in e.iter().enumerate() {
                    if p > 0 {
                        s.push_str(&format!("*p{k}^{p}"));
                    }
                }
                s
            })
            .collect();
        if parts.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", parts.join(" + "))
        }
    }
}

/// Parses an expression over the named parameters.
pub fn parse_expr(src: &str, params: &[String]) -> Result<ParamPoly, ParseError> {
    if params.len() > MAX_VARS {
        return Err(ParseError::TooManyVariables(params.len()));
    }
    let mut p = Parser { src, chars: src.char_indices().collect(), pos: 0, params };
    let v = p.expr()?;
    p.skip_ws();
    if let Some(&(off, ch)) = p.chars.get(p.pos) {
        return Err(ParseError::Unexpected { ch, pos: off, src: src.into() });
    }
    Ok(v)
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    params: &'a [String],
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).map(|c| c.1.is_whitespace()).unwrap_or(false) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn unexpected(&self) -> ParseError {
        match self.chars.get(self.pos) {
            Some(&(off, ch)) => ParseError::Unexpected { ch, pos: off, src: self.src.into() },
            None => ParseError::Eof(self.src.into()),
        }
    }

    fn expr(&mut self) -> Result<ParamPoly, ParseError> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                '+' => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?);
                }
                '-' => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?.neg());
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<ParamPoly, ParseError> {
        let mut acc = self.power()?;
        while let Some(c) = self.peek() {
            match c {
                '*' => {
                    self.pos += 1;
                    acc = acc.mul(&self.power()?);
                }
                '/' => {
                    self.pos += 1;
                    let d = self.power()?;
                    let d = d.as_constant().ok_or_else(|| ParseError::NonConstantDivisor(self.src.into()))?;
                    if d == C64::new(0.0, 0.0) {
                        return Err(ParseError::DivisionByZero(self.src.into()));
                    }
                    acc = acc.scale(d.inv());
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn power(&mut self) -> Result<ParamPoly, ParseError> {
        let base = self.unary()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.chars.get(self.pos).map(|c| c.1.is_ascii_digit()).unwrap_or(false) {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.unexpected());
            }
            let s: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
            let n: u32 = s.parse().map_err(|_| self.unexpected())?;
            return Ok(base.pow(n));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<ParamPoly, ParseError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(self.unary()?.neg())
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<ParamPoly, ParseError> {
        let Some(c) = self.peek() else {
            return Err(ParseError::Eof(self.src.into()));
        };
        if c == '(' {
            self.pos += 1;
            let v = self.expr()?;
            if self.peek() != Some(')') {
                return Err(self.unexpected());
            }
            self.pos += 1;
            return Ok(v);
        }
        if c.is_ascii_digit() || c == '.' {
            let start = self.pos;
            while let Some(&(_, ch)) = self.chars.get(self.pos) {
                let exp_sign = matches!(ch, '+' | '-')
                    && self.pos > start
                    && matches!(self.chars[self.pos - 1].1, 'e' | 'E');
                if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let s: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
            let x: f64 = s.parse().map_err(|_| {
                let (off, ch) = self.chars[start];
                ParseError::Unexpected { ch, pos: off, src: self.src.into() }
            })?;
            // an immediately following `i` marks an imaginary literal
            if self.chars.get(self.pos).map(|c| c.1) == Some('i')
                && !self.chars.get(self.pos + 1).map(|c| c.1.is_alphanumeric() || c.1 == '_').unwrap_or(false)
            {
                self.pos += 1;
                return Ok(ParamPoly::constant(C64::new(0.0, x)));
            }
            return Ok(ParamPoly::real(x));
        }
        if c.is_alphabetic() || c == '_' {
            let start = self.pos;
            while self.chars.get(self.pos).map(|c| c.1.is_alphanumeric() || c.1 == '_').unwrap_or(false) {
                self.pos += 1;
            }
            let name: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
            if let Some(k) = self.params.iter().position(|p| *p == name) {
                return Ok(ParamPoly::var(k));
            }
            if name == "i" {
                return Ok(ParamPoly::constant(C64::new(0.0, 1.0)));
            }
            return Err(ParseError::UnknownParam { name, known: self.params.to_vec() });
        }
        Err(self.unexpected())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["a".into(), "c".into()]
    }

    #[test]
    fn parses_mixed_expression() {
        let p = parse_expr("1.5 - 2*a + 0.5i*a^2*c", &names()).unwrap();
        let lam = [C64::new(0.3, 0.1), C64::new(-1.2, 0.0)];
        let want = C64::new(1.5, 0.0) - lam[0] * 2.0 + C64::new(0.0, 0.5) * lam[0] * lam[0] * lam[1];
        assert!((p.eval(&lam) - want).norm() < 1e-15);
    }

    #[test]
    fn parentheses_and_division() {
        let p = parse_expr("(a + 1)^2 / 4 - 1e-3", &names()).unwrap();
        let lam = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        assert!((p.eval(&lam) - C64::new(1.0 - 1e-3, 0.0)).norm() < 1e-15);
        assert!(parse_expr("a / c", &names()).is_err());
    }

    #[test]
    fn rejects_unknown_names() {
        assert!(matches!(parse_expr("b + 1", &names()), Err(ParseError::UnknownParam { .. })));
        assert!(parse_expr("1 +", &names()).is_err());
        assert!(parse_expr("1 2", &names()).is_err());
    }

    #[test]
    fn derivative_is_exact() {
        let p = parse_expr("a^3*c + 2*c", &names()).unwrap();
        let lam = [C64::new(2.0, 0.0), C64::new(5.0, 0.0)];
        assert_eq!(p.derivative(0).eval(&lam), C64::new(60.0, 0.0));
        assert_eq!(p.derivative(1).eval(&lam), C64::new(10.0, 0.0));
    }
}

//! Parser for `--function` strings.
//!
//! ```text
//! linear:3,4
//! product:d=2
//! quadratic:A=[2,0.5;0.5,-1],b=[1,-1]
//! poly:d=2:0.5*x1^2*x2-x2^3
//! gaussian-beam:sensors=-1,0.3,1.2;target=0.1;c=1,0,1
//! ```

use std::fmt;
use std::sync::Arc;

use qsn_core::analytic_fn::{AnalyticFunction, Monomial};
use qsn_core::interpolation::{induced_function, GaussianBeam, SensorLayout};
use qsn_core::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SpecError(pub String);

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SpecError {}

fn err<T>(msg: impl Into<String>) -> Result<T, SpecError> {
    Err(SpecError(msg.into()))
}

/// A finite real number.
pub fn parse_finite(s: &str) -> Result<f64, SpecError> {
    let v: f64 = s.trim().parse().map_err(|_| SpecError(format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

/// Comma-separated finite numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, SpecError> {
    if s.trim().is_empty() {
        return err("empty list");
    }
    s.split(',').map(parse_finite).collect()
}

fn parse_bracketed(s: &str) -> Result<&str, SpecError> {
    s.trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| SpecError(format!("expected `[...]`, got `{s}`")))
}

fn parse_dim(s: &str) -> Result<usize, SpecError> {
    let v = s
        .trim()
        .strip_prefix("d=")
        .ok_or_else(|| SpecError(format!("expected `d=<n>`, got `{s}`")))?;
    let d: usize = v.parse().map_err(|_| SpecError(format!("bad dimension `{v}`")))?;
    if d == 0 {
        return err("dimension must be >= 1");
    }
    Ok(d)
}

/// Parsed `--function` value with the original text kept as its label.
#[derive(Clone, Debug)]
pub struct FunctionSpec {
    pub label: String,
    pub function: AnalyticFunction<f64>,
}

impl FunctionSpec {
    pub fn parse(s: &str) -> Result<Self, SpecError> {
        let (family, rest) = s.split_once(':').unwrap_or((s, ""));
        let core_err = |e: qsn_core::Error| SpecError(e.to_string());
        let function = match family {
            "linear" => AnalyticFunction::linear(parse_list(rest)?).map_err(core_err)?,
            "product" => AnalyticFunction::product(parse_dim(rest)?).map_err(core_err)?,
            "quadratic" => parse_quadratic(rest)?,
            "poly" => parse_poly(rest)?,
            "gaussian-beam" => parse_beam(rest)?,
            other => return err(format!("unknown function family `{other}`")),
        };
        Ok(Self { label: s.to_string(), function })
    }
}

fn parse_quadratic(rest: &str) -> Result<AnalyticFunction<f64>, SpecError> {
    let (a_part, b_part) = rest
        .split_once("],")
        .ok_or_else(|| SpecError("expected `A=[..],b=[..]`".into()))?;
    let a_txt = a_part
        .strip_prefix("A=")
        .ok_or_else(|| SpecError("expected `A=` first".into()))?;
    let rows: Vec<Vec<f64>> = parse_bracketed(&format!("{a_txt}]"))?
        .split(';')
        .map(parse_list)
        .collect::<Result<_, _>>()?;
    let b_txt = b_part
        .strip_prefix("b=")
        .ok_or_else(|| SpecError("expected `b=` after A".into()))?;
    let b = parse_list(parse_bracketed(b_txt)?)?;
    let a = Matrix::from_rows(&rows).map_err(|e| SpecError(e.to_string()))?;
    AnalyticFunction::quadratic(a, b).map_err(|e| SpecError(e.to_string()))
}

/// Splits `a+b-c` into signed terms without breaking exponents like `1e-3`.
fn split_terms(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev: Option<char> = None;
    for ch in s.chars().filter(|c| !c.is_whitespace()) {
        let boundary = (ch == '+' || ch == '-')
            && !cur.is_empty()
            && !matches!(prev, Some('e') | Some('E') | Some('^') | Some('*'));
        if boundary {
            out.push(std::mem::take(&mut cur));
        }
        if !(ch == '+' && cur.is_empty()) {
            cur.push(ch);
        }
        prev = Some(ch);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_term(term: &str, d: usize) -> Result<Monomial<f64>, SpecError> {
    let mut coefficient = 1.0;
    let mut powers = vec![0u32; d];
    let mut body = term;
    if let Some(r) = body.strip_prefix('-') {
        coefficient = -1.0;
        body = r;
    }
    for factor in body.split('*') {
        if let Some(var) = factor.strip_prefix('x') {
            let (idx, pow) = match var.split_once('^') {
                Some((i, p)) => (i, p.parse::<u32>().map_err(|_| SpecError(format!("bad power in `{factor}`")))?),
                None => (var, 1),
            };
            let i: usize = idx.parse().map_err(|_| SpecError(format!("bad variable `{factor}`")))?;
            if i == 0 || i > d {
                return err(format!("variable x{i} outside x1..x{d}"));
            }
            powers[i - 1] += pow;
        } else {
            coefficient *= parse_finite(factor)?;
        }
    }
    Ok(Monomial::new(coefficient, powers))
}

fn parse_poly(rest: &str) -> Result<AnalyticFunction<f64>, SpecError> {
    let (d_txt, body) = rest
        .split_once(':')
        .ok_or_else(|| SpecError("expected `poly:d=<n>:<terms>`".into()))?;
    let d = parse_dim(d_txt)?;
    let terms = split_terms(body)
        .iter()
        .map(|t| parse_term(t, d))
        .collect::<Result<Vec<_>, _>>()?;
    if terms.is_empty() {
        return err("polynomial has no terms");
    }
    AnalyticFunction::polynomial(d, terms).map_err(|e| SpecError(e.to_string()))
}

fn parse_beam(rest: &str) -> Result<AnalyticFunction<f64>, SpecError> {
    let (mut sensors, mut target, mut c) = (None, None, None);
    for part in rest.split(';') {
        match part.split_once('=') {
            Some(("sensors", v)) => sensors = Some(parse_list(v)?),
            Some(("target", v)) => target = Some(parse_finite(v)?),
            Some(("c", v)) => c = Some(parse_list(v)?),
            _ => return err(format!("unexpected `{part}` in gaussian-beam spec")),
        }
    }
    let missing = |k: &str| SpecError(format!("gaussian-beam spec needs `{k}=`"));
    let layout = SensorLayout::new(sensors.ok_or_else(|| missing("sensors"))?, target.ok_or_else(|| missing("target"))?)
        .map_err(|e| SpecError(e.to_string()))?;
    induced_function(Arc::new(GaussianBeam::new()), layout, c.ok_or_else(|| missing("c"))?)
        .map_err(|e| SpecError(e.to_string()))
}

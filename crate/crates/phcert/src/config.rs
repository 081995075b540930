//! Config ingestion for the CLI: a line-oriented `key = value` format with
//! `[section]` headers, and a small expression grammar (operators + - * /,
//! functions sin and cos, constants, coordinates q1..qn) for declaring
//! custom models. Parsing is strict: unknown sections or keys abort before
//! any computation.

use std::str::FromStr;

use crate::model::{MatrixField, MechanicalSystem, Positivity, ScalarField};
use crate::{Error, MatF, Result, VecF};

/// Expression AST for model entries.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based coordinate index (source syntax `q1`..`qn`).
    Coord(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            chars: src.chars().collect(),
            pos: 0,
            src,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(Error::Config(format!(
                "unexpected trailing input at column {} in '{}'",
                p.pos + 1,
                src
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, q: &VecF) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Coord(i) => q[*i],
            Expr::Add(a, b) => a.eval(q) + b.eval(q),
            Expr::Sub(a, b) => a.eval(q) - b.eval(q),
            Expr::Mul(a, b) => a.eval(q) * b.eval(q),
            Expr::Div(a, b) => a.eval(q) / b.eval(q),
            Expr::Neg(a) => -a.eval(q),
            Expr::Sin(a) => a.eval(q).sin(),
            Expr::Cos(a) => a.eval(q).cos(),
        }
    }

    /// Largest coordinate index referenced, plus one.
    pub fn max_coord(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Coord(i) => i + 1,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_coord().max(b.max_coord())
            }
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) => a.max_coord(),
        }
    }
}

/// Recursive-descent parser for the expression grammar.
struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> Error {
        Error::Config(format!("{msg} at column {} in '{}'", self.pos + 1, self.src))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some('/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek() == Some('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self
                    .chars
                    .get(self.pos)
                    .is_some_and(|c| c.is_ascii_alphanumeric())
                {
                    self.pos += 1;
                }
                let word: String = self.chars[start..self.pos].iter().collect();
                if let Some(rest) = word.strip_prefix('q') {
                    if let Ok(i) = rest.parse::<usize>() {
                        if i == 0 {
                            return Err(self.err("coordinates are 1-based"));
                        }
                        return Ok(Expr::Coord(i - 1));
                    }
                }
                match word.as_str() {
                    "sin" | "cos" => {
                        if self.peek() != Some('(') {
                            return Err(self.err("expected '(' after function name"));
                        }
                        self.pos += 1;
                        let arg = self.expr()?;
                        if self.peek() != Some(')') {
                            return Err(self.err("expected ')'"));
                        }
                        self.pos += 1;
                        Ok(if word == "sin" {
                            Expr::Sin(Box::new(arg))
                        } else {
                            Expr::Cos(Box::new(arg))
                        })
                    }
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    other => Err(self.err(&format!("unknown identifier '{other}'"))),
                }
            }
            _ => Err(self.err("expected expression")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.chars.get(self.pos).is_some_and(|c| {
            c.is_ascii_digit() || *c == '.' || *c == 'e' || *c == 'E'
        }) {
            // allow a sign right after an exponent marker
            self.pos += 1;
            if matches!(self.chars.get(self.pos - 1), Some('e') | Some('E'))
                && matches!(self.chars.get(self.pos), Some('+') | Some('-'))
            {
                self.pos += 1;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        f64::from_str(&text)
            .map(Expr::Num)
            .map_err(|_| self.err(&format!("invalid number '{text}'")))
    }
}

/// Declarative model: n-DoF with expression-valued inertia entries,
/// potential, and diagonal damping.
#[derive(Clone, Debug)]
pub struct ModelDef {
    pub n: usize,
    pub m: usize,
    /// Upper-triangle inertia entries, row-major; mirrored on build.
    pub inertia: Vec<((usize, usize), Expr)>,
    pub potential: Expr,
    pub damping: Vec<(usize, Expr)>,
}

impl ModelDef {
    pub fn build(&self) -> Result<MechanicalSystem> {
        let n = self.n;
        for ((i, j), _) in &self.inertia {
            if *i >= n || *j >= n || i > j {
                return Err(Error::Config(format!(
                    "inertia index ({}, {}) out of range or below the diagonal",
                    i + 1,
                    j + 1
                )));
            }
        }
        let entries = self.inertia.clone();
        let inertia = MatrixField::from_q_fn(
            move |q: &VecF| {
                let mut m = MatF::zeros(n, n);
                for ((i, j), e) in &entries {
                    let v = e.eval(q);
                    m[(*i, *j)] = v;
                    m[(*j, *i)] = v;
                }
                m
            },
            true,
            Positivity::Definite,
        );
        let pot = self.potential.clone();
        let potential = ScalarField::new(move |q: &VecF| pot.eval(q));
        let damping_entries = self.damping.clone();
        let damping = MatrixField::from_q_fn(
            move |q: &VecF| {
                let mut d = MatF::zeros(n, n);
                for (i, e) in &damping_entries {
                    d[(*i, *i)] = e.eval(q);
                }
                d
            },
            true,
            Positivity::SemiDefinite,
        );
        MechanicalSystem::new(n, self.m, inertia, potential, damping)
    }
}

/// Optional settings collected from a config file; CLI flags override.
#[derive(Clone, Debug, Default)]
pub struct FileConfig {
    pub model: Option<ModelDef>,
    pub kp: Option<Vec<f64>>,
    pub ki: Option<Vec<f64>>,
    pub kd: Option<Vec<f64>>,
    pub q_star: Option<Vec<f64>>,
    pub qr: Option<Vec<f64>>,
    pub pr: Option<Vec<f64>>,
    pub grid: Option<usize>,
    pub extra_samples: Option<usize>,
    pub h: Option<f64>,
    pub horizon: Option<f64>,
    pub out_dir: Option<String>,
    pub phi: Option<String>,
    pub seed: Option<u64>,
}

fn parse_f64_list(v: &str, line: usize) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("line {line}: invalid number '{s}'")))
        })
        .collect()
}

/// Parses the strict `key = value` config format. Sections: model, gains,
/// region, integrator, output. Comments start with `#`.
pub fn parse_config(text: &str) -> Result<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut section = String::new();
    let mut model_n: Option<usize> = None;
    let mut model_m: Option<usize> = None;
    let mut inertia: Vec<((usize, usize), Expr)> = Vec::new();
    let mut potential: Option<Expr> = None;
    let mut damping: Vec<(usize, Expr)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            if !matches!(
                section.as_str(),
                "model" | "gains" | "region" | "integrator" | "output"
            ) {
                return Err(Error::Config(format!(
                    "line {ln}: unknown section '[{section}]'"
                )));
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {ln}: expected 'key = value', got '{line}'"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad_key =
            || Error::Config(format!("line {ln}: unknown key '{key}' in [{section}]"));
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("line {ln}: invalid number '{v}'")))
        };
        match section.as_str() {
            "model" => match key {
                "n" => model_n = Some(num(value)? as usize),
                "m" => model_m = Some(num(value)? as usize),
                "potential" => potential = Some(Expr::parse(value)?),
                k if k.starts_with("inertia_") => {
                    let parts: Vec<&str> = k["inertia_".len()..].split('_').collect();
                    if parts.len() != 2 {
                        return Err(bad_key());
                    }
                    let i: usize = parts[0].parse().map_err(|_| bad_key())?;
                    let j: usize = parts[1].parse().map_err(|_| bad_key())?;
                    if i == 0 || j == 0 {
                        return Err(Error::Config(format!(
                            "line {ln}: inertia indices are 1-based"
                        )));
                    }
                    inertia.push(((i - 1, j - 1), Expr::parse(value)?));
                }
                k if k.starts_with("damping_") => {
                    let i: usize = k["damping_".len()..].parse().map_err(|_| bad_key())?;
                    if i == 0 {
                        return Err(Error::Config(format!(
                            "line {ln}: damping indices are 1-based"
                        )));
                    }
                    damping.push(((i - 1), Expr::parse(value)?));
                }
                _ => return Err(bad_key()),
            },
            "gains" => match key {
                "kp" => cfg.kp = Some(parse_f64_list(value, ln)?),
                "ki" => cfg.ki = Some(parse_f64_list(value, ln)?),
                "kd" => cfg.kd = Some(parse_f64_list(value, ln)?),
                "q_star" => cfg.q_star = Some(parse_f64_list(value, ln)?),
                _ => return Err(bad_key()),
            },
            "region" => match key {
                "qr" => cfg.qr = Some(parse_f64_list(value, ln)?),
                "pr" => cfg.pr = Some(parse_f64_list(value, ln)?),
                "grid" => cfg.grid = Some(num(value)? as usize),
                "extra" => cfg.extra_samples = Some(num(value)? as usize),
                _ => return Err(bad_key()),
            },
            "integrator" => match key {
                "h" => cfg.h = Some(num(value)?),
                "horizon" => cfg.horizon = Some(num(value)?),
                _ => return Err(bad_key()),
            },
            "output" => match key {
                "dir" => cfg.out_dir = Some(value.to_string()),
                "phi" => cfg.phi = Some(value.to_string()),
                "seed" => {
                    cfg.seed = Some(value.parse::<u64>().map_err(|_| {
                        Error::Config(format!("line {ln}: invalid seed '{value}'"))
                    })?)
                }
                _ => return Err(bad_key()),
            },
            _ => {
                return Err(Error::Config(format!(
                    "line {ln}: key outside any section"
                )))
            }
        }
    }

    if model_n.is_some() || potential.is_some() || !inertia.is_empty() {
        let n = model_n
            .ok_or_else(|| Error::Config("model section requires 'n'".into()))?;
        let m = model_m.unwrap_or(n);
        if n == 0 || m == 0 || m > n {
            return Err(Error::Config(format!(
                "model requires 1 <= m <= n, got n={n}, m={m}"
            )));
        }
        let potential = potential
            .ok_or_else(|| Error::Config("model section requires 'potential'".into()))?;
        if inertia.is_empty() {
            return Err(Error::Config(
                "model section requires at least the diagonal inertia entries".into(),
            ));
        }
        cfg.model = Some(ModelDef {
            n,
            m,
            inertia,
            potential,
            damping,
        });
    }
    Ok(cfg)
}

/// Builds a named builtin model, or `None` when the name is not a builtin
/// (the CLI then treats it as a config path).
pub fn builtin_model(name: &str) -> Option<Result<MechanicalSystem>> {
    match name {
        "pera" => Some(crate::pera::build_pera(&crate::pera::PeraParams::default())),
        "pendulum" => Some(build_1dof(|q| 1.0 - q.cos(), |q| q.sin(), |q| q.cos(), 0.1)),
        "msd1" => Some(build_1dof(
            |q| 2.0 * q * q,
            |q| 4.0 * q,
            |_| 4.0,
            0.5,
        )),
        _ => None,
    }
}

fn build_1dof(
    u: impl Fn(f64) -> f64 + Send + Sync + 'static,
    du: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ddu: impl Fn(f64) -> f64 + Send + Sync + 'static,
    damping: f64,
) -> Result<MechanicalSystem> {
    let inertia = MatrixField::constant(MatF::identity(1, 1), true, Positivity::Definite);
    let potential = ScalarField::new(move |q: &VecF| u(q[0]))
        .with_gradient(move |q: &VecF| VecF::from_element(1, du(q[0])))
        .with_hessian(move |q: &VecF| MatF::from_element(1, 1, ddu(q[0])));
    let d = MatrixField::constant(
        MatF::from_element(1, 1, damping),
        true,
        Positivity::SemiDefinite,
    );
    MechanicalSystem::new(1, 1, inertia, potential, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_arithmetic() {
        let e = Expr::parse("1 + 2*q1 - sin(q2)/2").unwrap();
        let q = VecF::from_row_slice(&[3.0, 0.0]);
        assert!((e.eval(&q) - 7.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_trailing_garbage() {
        assert!(Expr::parse("1 + 2 )").is_err());
        assert!(Expr::parse("foo(q1)").is_err());
    }

    #[test]
    fn strict_config_rejects_unknown_keys() {
        let text = "[region]\nqr = 0.3\nbogus = 1\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }

    #[test]
    fn config_model_builds() {
        let text = "\
[model]
n = 2
m = 1
inertia_1_1 = 1 + 0.5*sin(q1)*sin(q1)
inertia_2_2 = 2
potential = 1 - cos(q1) + 0.5*q2*q2
damping_1 = 0.2
";
        let cfg = parse_config(text).unwrap();
        let sys = cfg.model.unwrap().build().unwrap();
        assert_eq!(sys.n(), 2);
        assert_eq!(sys.m(), 1);
        let q = VecF::from_row_slice(&[0.5, -0.3]);
        let m = sys.inertia_at(&q);
        assert!((m[(0, 0)] - (1.0 + 0.5 * 0.5f64.sin().powi(2))).abs() < 1e-15);
        assert!((m[(1, 1)] - 2.0).abs() < 1e-15);
    }
}

//! TOML configuration: shared sections, numbers and named constants.
//!
//! Every subcommand reads one TOML file whose tables are deserialized
//! strictly: unknown keys are rejected, and missing keys without a
//! documented default are reported with their path.
//!
//! # Numbers
//!
//! Any scalar marked as a [`Num`] may be written either as a TOML number or
//! as a string holding a constant expression, e.g. `phase = "pi/2"` or
//! `length = "sqrt(2*pi*N)"`.
//!
//! # Constants
//!
//! Expressions (numbers, fields, symbols, Hamiltonians) may mention named
//! constants, which are substituted before parsing:
//!
//! * `pi` — always available;
//! * `N`, `L` — the grid size and box length, in commands with a `[grid]`;
//! * user constants from the optional `[constants]` table, whose values are
//!   themselves [`Num`]s evaluated with the built-ins (`pi`, `N`, `L`).
//!   The grid is resolved first, so `grid.length` sees only `pi` and `N`.
//!
//! Constant names must not shadow phase-space variables (`x`, `p`, `x1`,
//! `x2`, `p1`, `p2`).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use magweyl::bloch::{Lattice, PeriodicPotential, PotentialCoefficient};
use magweyl::expr::Expr;
use magweyl::geometry::{transversal_gauge, MagneticField, VectorPotential};
use magweyl::grid::GridSpec;
use magweyl::C64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError, CliResult};

/// A number or a constant expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Num {
    /// A literal.
    Value(f64),
    /// A constant expression.
    Expr(String),
}

impl Default for Num {
    fn default() -> Self {
        Self::Value(0.0)
    }
}

const RESERVED: [&str; 6] = ["x", "p", "x1", "x2", "p1", "p2"];

/// Named constants available to expressions.
#[derive(Debug, Clone)]
pub struct Env {
    constants: BTreeMap<String, f64>,
}

impl Env {
    /// The built-in constants only.
    pub fn builtin() -> Self {
        let mut constants = BTreeMap::new();
        constants.insert("pi".to_string(), PI);
        Self { constants }
    }

    /// Adds (or replaces) a constant.
    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.constants.insert(name.to_string(), value);
        self
    }

    /// Adds the user constants, evaluated against the current constants.
    pub fn with_user(mut self, user: &BTreeMap<String, Num>) -> CliResult<Self> {
        let base = self.clone();
        for (name, value) in user {
            if RESERVED.contains(&name.as_str()) {
                return config_err(format!("constants.{name}: the name is reserved for a phase-space variable"));
            }
            if !name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return config_err(format!("constants.{name}: not a valid identifier"));
            }
            let v = base.num(value, &format!("constants.{name}"))?;
            self.constants.insert(name.clone(), v);
        }
        Ok(self)
    }

    /// Replaces every constant name in `text` by its value.  Names followed
    /// by `(` are function calls and stay untouched.
    pub fn substitute(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
                // Numeric literal, including an exponent part.
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                out.extend(&chars[start..i]);
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let name: String = chars[start..i].iter().collect();
                let call = chars[i..].iter().find(|c| !c.is_whitespace()) == Some(&'(');
                match self.constants.get(&name) {
                    Some(v) if !call => out.push_str(&format!("({v})")),
                    _ => out.push_str(&name),
                }
            } else {
                out.push(c);
                i += 1;
            }
        }
        out
    }

    /// Evaluates a [`Num`]; `field` names it in error messages.
    pub fn num(&self, n: &Num, field: &str) -> CliResult<f64> {
        let v = match n {
            Num::Value(v) => *v,
            Num::Expr(text) => {
                let e = Expr::parse(&self.substitute(text), &[])
                    .map_err(|e| CliError::Config(format!("{field}: {e}")))?;
                e.eval(&[])
            }
        };
        if !v.is_finite() {
            return config_err(format!("{field}: value {v} is not finite"));
        }
        Ok(v)
    }

    /// Evaluates a list of [`Num`]s.
    pub fn nums(&self, ns: &[Num], field: &str) -> CliResult<Vec<f64>> {
        ns.iter().enumerate().map(|(i, n)| self.num(n, &format!("{field}[{i}]"))).collect()
    }

    /// Evaluates a fixed-length list of [`Num`]s.
    pub fn vector(&self, ns: &[Num], len: usize, field: &str) -> CliResult<Vec<f64>> {
        if ns.len() != len {
            return config_err(format!("{field}: expected {len} entries, found {}", ns.len()));
        }
        self.nums(ns, field)
    }
}

/// Reads a configuration file: the typed view and the raw table (echoed
/// into the manifest).
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<(T, toml::Table)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let raw: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let typed: T = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((typed, raw))
}

/// Requires `range` to contain `v`.
pub fn require_range(v: f64, lo: f64, hi: f64, field: &str) -> CliResult<f64> {
    if !(lo..=hi).contains(&v) {
        return config_err(format!("{field}: {v} must lie in [{lo}, {hi}]"));
    }
    Ok(v)
}

/// The `[grid]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Configuration-space dimension, 1 or 2.
    pub dim: usize,
    /// Points per axis `N`.
    pub points: usize,
    /// Box length `L`; the string `"balanced"` selects `√(2πN)`.
    pub length: Num,
}

impl GridConfig {
    /// The grid and the environment extended by `N` and `L`.
    pub fn resolve(&self, env: &Env) -> CliResult<(GridSpec, Env)> {
        let env = env.clone().with("N", self.points as f64);
        let length = match &self.length {
            Num::Expr(s) if s.trim() == "balanced" => (2.0 * PI * self.points as f64).sqrt(),
            n => env.num(n, "grid.length")?,
        };
        let grid =
            GridSpec::new(self.dim, self.points, length).map_err(|e| CliError::Config(format!("grid: {e}")))?;
        Ok((grid, env.with("L", length)))
    }
}

/// The `[field]` table: a magnetic field `b12` (two dimensions) or a
/// vector potential `potential` (one expression per axis), not both.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    /// `B_12(x1, x2)`.
    pub b12: Option<String>,
    /// `A_l(x)` per axis.
    pub potential: Option<Vec<String>>,
}

impl FieldConfig {
    fn exclusive(&self) -> CliResult<()> {
        if self.b12.is_some() && self.potential.is_some() {
            return config_err("field: give either `b12` or `potential`, not both");
        }
        Ok(())
    }

    fn potential(&self, dim: usize, env: &Env) -> CliResult<Option<VectorPotential>> {
        let Some(texts) = &self.potential else {
            return Ok(None);
        };
        if texts.len() != dim {
            return config_err(format!("field.potential: expected {dim} components, found {}", texts.len()));
        }
        let subst: Vec<String> = texts.iter().map(|t| env.substitute(t)).collect();
        let refs: Vec<&str> = subst.iter().map(String::as_str).collect();
        VectorPotential::parse(&refs, "configured")
            .map(Some)
            .map_err(|e| CliError::Config(format!("field.potential: {e}")))
    }

    fn planar(&self, dim: usize, env: &Env) -> CliResult<Option<MagneticField>> {
        let Some(text) = &self.b12 else {
            return Ok(None);
        };
        if dim != 2 {
            return config_err("field.b12: a magnetic 2-form needs two dimensions");
        }
        MagneticField::parse_planar(&env.substitute(text))
            .map(Some)
            .map_err(|e| CliError::Config(format!("field.b12: {e}")))
    }

    /// The magnetic field: `b12`, the curl of `potential`, or zero.
    pub fn magnetic(&self, dim: usize, env: &Env) -> CliResult<MagneticField> {
        self.exclusive()?;
        if let Some(b) = self.planar(dim, env)? {
            return Ok(b);
        }
        let b = match self.potential(dim, env)? {
            Some(a) => a.curl(),
            None => MagneticField::zero(dim),
        };
        b.map_err(|e| CliError::Config(format!("field: {e}")))
    }

    /// The vector potential: `potential`, the transversal gauge of `b12`,
    /// or zero.
    pub fn vector_potential(&self, dim: usize, env: &Env) -> CliResult<VectorPotential> {
        self.exclusive()?;
        if let Some(a) = self.potential(dim, env)? {
            return Ok(a);
        }
        match self.planar(dim, env)? {
            Some(b) => Ok(transversal_gauge(&b)),
            None => VectorPotential::zero(dim).map_err(|e| CliError::Config(format!("field: {e}"))),
        }
    }
}

/// The `[lattice]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Basis vectors (rows).
    pub basis: Vec<Vec<Num>>,
    /// Brillouin-zone grid points per reduced axis.
    pub resolution: usize,
}

impl LatticeConfig {
    /// The lattice with its Brillouin-zone grid.
    pub fn resolve(&self, env: &Env) -> CliResult<Lattice> {
        let rows = self
            .basis
            .iter()
            .enumerate()
            .map(|(j, row)| env.nums(row, &format!("lattice.basis[{j}]")))
            .collect::<CliResult<Vec<_>>>()?;
        Lattice::new(&rows, self.resolution).map_err(|e| CliError::Config(format!("lattice: {e}")))
    }
}

/// One term `a cos(γ*·y + φ)` of a periodic potential.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineTerm {
    /// Dual-lattice index of `γ*`.
    pub index: Vec<i32>,
    /// Amplitude `a`.
    pub amplitude: Num,
    /// Phase `φ`.
    #[serde(default)]
    pub phase: Num,
}

/// One Fourier coefficient `V̂(γ*)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientTerm {
    /// Dual-lattice index of `γ*`.
    pub index: Vec<i32>,
    /// Real part.
    pub re: Num,
    /// Imaginary part.
    #[serde(default)]
    pub im: Num,
}

/// The `[potential]` table: cosine terms or raw Fourier coefficients.
/// An absent table is the zero potential.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// Cosine terms.
    #[serde(default)]
    pub cosines: Vec<CosineTerm>,
    /// Fourier coefficients.
    #[serde(default)]
    pub coefficients: Vec<CoefficientTerm>,
    /// Whether coefficient lists must be Hermitian (a real potential);
    /// defaults to `true`.
    pub real: Option<bool>,
}

fn lattice_index(index: &[i32], dim: usize, field: &str) -> CliResult<[i32; 2]> {
    if index.len() != dim {
        return config_err(format!("{field}: expected {dim} indices, found {}", index.len()));
    }
    let mut out = [0; 2];
    out[..dim].copy_from_slice(index);
    Ok(out)
}

impl PotentialConfig {
    /// The periodic potential.
    pub fn resolve(&self, dim: usize, env: &Env) -> CliResult<PeriodicPotential> {
        let wrap = |e: magweyl::Error| CliError::Config(format!("potential: {e}"));
        match (self.cosines.is_empty(), self.coefficients.is_empty()) {
            (true, true) => PeriodicPotential::zero(dim).map_err(wrap),
            (false, false) => config_err("potential: give either `cosines` or `coefficients`, not both"),
            (false, true) => {
                if self.real == Some(false) {
                    return config_err("potential.real: cosine terms always describe a real potential");
                }
                let terms = self
                    .cosines
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let f = format!("potential.cosines[{i}]");
                        Ok((
                            lattice_index(&t.index, dim, &format!("{f}.index"))?,
                            env.num(&t.amplitude, &format!("{f}.amplitude"))?,
                            env.num(&t.phase, &format!("{f}.phase"))?,
                        ))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                PeriodicPotential::cosines(dim, &terms).map_err(wrap)
            }
            (true, false) => {
                let entries = self
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let f = format!("potential.coefficients[{i}]");
                        Ok(PotentialCoefficient {
                            index: lattice_index(&t.index, dim, &format!("{f}.index"))?,
                            value: C64::new(env.num(&t.re, &format!("{f}.re"))?, env.num(&t.im, &format!("{f}.im"))?),
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                PeriodicPotential::new(dim, &entries, self.real.unwrap_or(true)).map_err(wrap)
            }
        }
    }
}

/// The `[bands]` table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    /// Plane-wave cutoff `G` (box `|n_j| ≤ G`).
    pub cutoff: usize,
    /// Number of bands kept.
    pub n_bands: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_respects_numbers_and_calls() {
        let env = Env::builtin().with("k", 0.5).with("e", 2.0);
        assert_eq!(env.substitute("k*x1 + 1e-3*cos(k*p1)"), "(0.5)*x1 + 1e-3*cos((0.5)*p1)");
        assert_eq!(env.substitute("e + exp(e)"), "(2) + exp((2))");
        assert_eq!(env.substitute("2.5E+2*k"), "2.5E+2*(0.5)");
    }

    #[test]
    fn numbers_accept_constant_expressions() {
        let env = Env::builtin();
        assert_eq!(env.num(&Num::Expr("pi/2".into()), "t").unwrap(), PI / 2.0);
        assert!(env.num(&Num::Expr("x1".into()), "t").is_err());
        let mut user = BTreeMap::new();
        user.insert("x1".to_string(), Num::Value(1.0));
        assert!(Env::builtin().with_user(&user).is_err());
    }
}

//! Analytic expression descriptors and scalar fields.
//!
//! Magnetic fields, vector potentials, gauge functions, potentials and
//! Hamiltonians are all described by real functions of a handful of
//! canonical variables.  This module wraps [`exmex`] expressions so that
//! they can be evaluated with positional arguments and differentiated
//! symbolically, and provides [`ScalarField`], the common currency of the
//! geometry module: a closed set of representations (constants, parsed
//! expressions, closures and sums) that all support evaluation and
//! differentiation.
//!
//! # Variables
//!
//! Positions are named `x1`, `x2` (or `x` in one dimension); momenta are
//! named `p1`, `p2` (or `p`).  A parsed [`Expr`] records, for every
//! variable it mentions, which canonical slot it reads, so evaluation
//! takes a plain slice `[x1, x2, ..., p1, p2, ...]`.
//!
//! # Precedence
//!
//! Unary minus binds more weakly than `^`, as in ordinary notation:
//! `-x^2 = -(x^2)` and `exp(-(x - 1)^2)` is a Gaussian.  (The underlying
//! parser binds unary operators tightest; expressions are rewritten as
//! `(0-…)` before parsing.)  A minus directly after `^` negates the
//! exponent: `x^-2 = 1/x^2`.  Literals such as `1e-3` are accepted.
//!
//! # Derivatives
//!
//! [`Expr`] derivatives are symbolic.  Closure-backed fields fall back to
//! an eighth-order central finite difference with step `1e-3`, which is
//! accurate to roughly `1e-12` for fields of unit scale.

use std::fmt;
use std::sync::Arc;

use exmex::prelude::*;
use exmex::Differentiate;

use crate::error::{Error, Result};

/// Step used by the finite-difference fallback for closure derivatives.
pub const FD_STEP: f64 = 1e-3;

/// Canonical variable names for a configuration space of dimension `dim`.
pub fn position_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

/// Canonical variable names for a phase space of dimension `2 * dim`:
/// positions first, then momenta.
pub fn phase_space_names(dim: usize) -> Vec<String> {
    let mut v = position_names(dim);
    v.extend((1..=dim).map(|i| format!("p{i}")));
    v
}

fn slot_of(name: &str, canonical: &[String]) -> Option<usize> {
    if let Some(i) = canonical.iter().position(|c| c == name) {
        return Some(i);
    }
    // One-dimensional aliases `x` and `p`.
    let alias = match name {
        "x" => "x1",
        "p" => "p1",
        _ => return None,
    };
    let has_x2 = canonical.iter().any(|c| c == "x2");
    if has_x2 {
        return None;
    }
    canonical.iter().position(|c| c == alias)
}

fn skip_ws(c: &[char], mut i: usize) -> usize {
    while i < c.len() && c[i].is_whitespace() {
        i += 1;
    }
    i
}

/// End of the balanced group opening at `c[i] == '('`.
fn group_end(c: &[char], i: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (j, &ch) in c.iter().enumerate().skip(i) {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(j + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// End of the atom starting at `i`: a number, an identifier with an
/// optional call group, or a parenthesised group.
fn atom_end(c: &[char], i: usize) -> Option<usize> {
    let i = skip_ws(c, i);
    let ch = *c.get(i)?;
    if ch == '(' {
        return group_end(c, i);
    }
    let mut j = i;
    if ch.is_ascii_digit() || ch == '.' {
        while j < c.len() && (c[j].is_ascii_digit() || c[j] == '.') {
            j += 1;
        }
        if j < c.len() && (c[j] == 'e' || c[j] == 'E') {
            let mut k = j + 1;
            if k < c.len() && (c[k] == '+' || c[k] == '-') {
                k += 1;
            }
            if k < c.len() && c[k].is_ascii_digit() {
                j = k;
                while j < c.len() && c[j].is_ascii_digit() {
                    j += 1;
                }
            }
        }
        return Some(j);
    }
    if ch.is_alphabetic() || ch == '_' {
        while j < c.len() && (c[j].is_alphanumeric() || c[j] == '_') {
            j += 1;
        }
        let k = skip_ws(c, j);
        if c.get(k) == Some(&'(') {
            return group_end(c, k);
        }
        return Some(j);
    }
    None
}

/// End of the power chain `atom (^ [-] atom)*` starting at `i`.
fn power_end(c: &[char], i: usize) -> Option<usize> {
    let mut j = atom_end(c, i)?;
    loop {
        let k = skip_ws(c, j);
        if c.get(k) != Some(&'^') {
            return Some(j);
        }
        let mut m = skip_ws(c, k + 1);
        if matches!(c.get(m), Some('-') | Some('+')) {
            m += 1;
        }
        j = atom_end(c, m)?;
    }
}

/// Rewrites every unary minus (except directly after `^`) as `(0-…)`
/// around its power-chain operand, giving `-x^2 = -(x^2)`, and expands
/// number literals with an exponent part to plain decimals.
fn normalize_unary_minus(text: &str) -> String {
    let c: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    let mut prev: Option<char> = None;
    let mut i = 0;
    while i < c.len() {
        let ch = c[i];
        if ch == '-' && matches!(prev, None | Some('(') | Some(',') | Some('+') | Some('-') | Some('*') | Some('/')) {
            if let Some(end) = power_end(&c, i + 1) {
                let operand: String = c[i + 1..end].iter().collect();
                out.push_str("(0-");
                out.push_str(&normalize_unary_minus(&operand));
                out.push(')');
                prev = Some(')');
                i = end;
                continue;
            }
        }
        let starts_token = !matches!(prev, Some(p) if p.is_alphanumeric() || p == '_' || p == '.');
        if (ch.is_ascii_digit() || ch == '.') && starts_token {
            if let Some(end) = atom_end(&c, i) {
                let literal: String = c[i..end].iter().collect();
                match literal.parse::<f64>() {
                    Ok(v) if literal.contains(['e', 'E']) => out.push_str(&format!("{v}")),
                    _ => out.push_str(&literal),
                }
                prev = Some('0');
                i = end;
                continue;
            }
        }
        out.push(ch);
        if !ch.is_whitespace() {
            prev = Some(ch);
        }
        i += 1;
    }
    out
}

/// A parsed real-valued expression bound to canonical variable slots.
#[derive(Clone)]
pub struct Expr {
    text: String,
    ex: FlatEx<f64>,
    slots: Vec<usize>,
    arity: usize,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Expr").field("text", &self.text).finish()
    }
}

impl Expr {
    /// Parses `text` against the canonical variable list `canonical`.
    ///
    /// Every variable in `text` must be one of the canonical names (or a
    /// one-dimensional alias).
    pub fn parse(text: &str, canonical: &[String]) -> Result<Self> {
        let ex = FlatEx::<f64>::parse(&normalize_unary_minus(text))
            .map_err(|e| Error::Expression(format!("cannot parse `{text}`: {e}")))?;
        let mut slots = Vec::with_capacity(ex.var_names().len());
        for name in ex.var_names() {
            match slot_of(name, canonical) {
                Some(s) => slots.push(s),
                None => {
                    return Err(Error::Expression(format!(
                        "unknown variable `{name}` in `{text}` (allowed: {})",
                        canonical.join(", ")
                    )))
                }
            }
        }
        Ok(Self {
            text: text.to_string(),
            ex,
            slots,
            arity: canonical.len(),
        })
    }

    /// Source text of the expression.
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Number of canonical slots the expression is evaluated on.
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Evaluates at the canonical argument vector `args`.
    pub fn eval(&self, args: &[f64]) -> f64 {
        debug_assert!(args.len() >= self.arity);
        let mut buf = [0.0f64; 8];
        let n = self.slots.len();
        if n <= buf.len() {
            for (b, &s) in buf.iter_mut().zip(&self.slots) {
                *b = args[s];
            }
            self.ex.eval(&buf[..n]).unwrap_or(f64::NAN)
        } else {
            let v: Vec<f64> = self.slots.iter().map(|&s| args[s]).collect();
            self.ex.eval(&v).unwrap_or(f64::NAN)
        }
    }

    /// Returns `true` when the expression mentions canonical slot `slot`.
    pub fn depends_on(&self, slot: usize) -> bool {
        self.slots.contains(&slot)
    }

    /// Symbolic partial derivative with respect to canonical slot `slot`.
    ///
    /// Returns `None` when the expression does not depend on the slot (the
    /// derivative is identically zero).
    pub fn partial(&self, slot: usize) -> Result<Option<Self>> {
        let Some(idx) = self.slots.iter().position(|&s| s == slot) else {
            return Ok(None);
        };
        let ex = self
            .ex
            .clone()
            .partial(idx)
            .map_err(|e| Error::Expression(format!("cannot differentiate `{}`: {e}", self.text)))?;
        Ok(Some(Self {
            text: format!("d/d[{slot}]({})", self.text),
            ex,
            slots: self.slots.clone(),
            arity: self.arity,
        }))
    }
}

/// Closure signature accepted by [`ScalarField::func`].
pub type FieldFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A real scalar function of (some of) the canonical variables.
#[derive(Clone)]
pub enum ScalarField {
    /// A constant (including zero).
    Const(f64),
    /// A parsed analytic expression; derivatives are symbolic.
    Expr(Arc<Expr>),
    /// A closure; derivatives use the finite-difference fallback.
    Func(Arc<FieldFn>),
    /// Sum of two fields.
    Sum(Arc<ScalarField>, Arc<ScalarField>),
    /// A field multiplied by a constant.
    Scaled(f64, Arc<ScalarField>),
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Const(c) => write!(f, "Const({c})"),
            Self::Expr(e) => write!(f, "Expr({})", e.text()),
            Self::Func(_) => write!(f, "Func(..)"),
            Self::Sum(a, b) => write!(f, "Sum({a:?}, {b:?})"),
            Self::Scaled(c, a) => write!(f, "Scaled({c}, {a:?})"),
        }
    }
}

impl ScalarField {
    /// The zero field.
    pub fn zero() -> Self {
        Self::Const(0.0)
    }

    /// Parses an expression in the canonical variables `canonical`.
    pub fn parse(text: &str, canonical: &[String]) -> Result<Self> {
        let e = Expr::parse(text, canonical)?;
        if e.slots.is_empty() {
            return Ok(Self::Const(e.eval(&vec![0.0; canonical.len()])));
        }
        Ok(Self::Expr(Arc::new(e)))
    }

    /// Wraps a closure.
    pub fn func(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Func(Arc::new(f))
    }

    /// Evaluates the field.
    pub fn eval(&self, args: &[f64]) -> f64 {
        match self {
            Self::Const(c) => *c,
            Self::Expr(e) => e.eval(args),
            Self::Func(f) => f(args),
            Self::Sum(a, b) => a.eval(args) + b.eval(args),
            Self::Scaled(c, a) => c * a.eval(args),
        }
    }

    /// Returns `true` if the field is the constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Const(c) if *c == 0.0)
    }

    /// Sum of two fields, simplifying constants.
    pub fn add(&self, other: &ScalarField) -> ScalarField {
        match (self, other) {
            (Self::Const(a), Self::Const(b)) => Self::Const(a + b),
            (Self::Const(a), _) if *a == 0.0 => other.clone(),
            (_, Self::Const(b)) if *b == 0.0 => self.clone(),
            _ => Self::Sum(Arc::new(self.clone()), Arc::new(other.clone())),
        }
    }

    /// The field multiplied by `c`.
    pub fn scale(&self, c: f64) -> ScalarField {
        match self {
            _ if c == 0.0 => Self::Const(0.0),
            Self::Const(a) => Self::Const(a * c),
            Self::Scaled(b, a) => Self::Scaled(b * c, a.clone()),
            _ => Self::Scaled(c, Arc::new(self.clone())),
        }
    }

    /// Partial derivative with respect to canonical slot `slot`.
    pub fn partial(&self, slot: usize) -> Result<ScalarField> {
        Ok(match self {
            Self::Const(_) => Self::Const(0.0),
            Self::Expr(e) => match e.partial(slot)? {
                Some(d) => Self::Expr(Arc::new(d)),
                None => Self::Const(0.0),
            },
            Self::Func(f) => {
                let f = f.clone();
                Self::func(move |x| fd_partial(&*f, x, slot))
            }
            Self::Sum(a, b) => a.partial(slot)?.add(&b.partial(slot)?),
            Self::Scaled(c, a) => a.partial(slot)?.scale(*c),
        })
    }

    /// Mixed partial derivative `∂_{slots[0]} ∂_{slots[1]} ...`.
    pub fn partial_multi(&self, slots: &[usize]) -> Result<ScalarField> {
        let mut f = self.clone();
        for &s in slots {
            f = f.partial(s)?;
            if f.is_zero() {
                break;
            }
        }
        Ok(f)
    }
}

/// Eighth-order central finite difference of `f` in direction `slot`.
pub fn fd_partial(f: &FieldFn, x: &[f64], slot: usize) -> f64 {
    const C: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let mut y = x.to_vec();
    let mut acc = 0.0;
    for (k, c) in C.iter().enumerate() {
        let s = (k + 1) as f64 * FD_STEP;
        y[slot] = x[slot] + s;
        let fp = f(&y);
        y[slot] = x[slot] - s;
        let fm = f(&y);
        acc += c * (fp - fm);
    }
    acc / FD_STEP
}

/// A real function on phase space with its first derivatives.
///
/// Used for classical Hamiltonians: the magnetic flow needs `∇_x h` and
/// `∇_ξ h` at arbitrary points.
#[derive(Clone, Debug)]
pub struct PhaseSpaceFunction {
    dim: usize,
    value: ScalarField,
    grad: Vec<ScalarField>,
}

impl PhaseSpaceFunction {
    /// Builds from a field over the canonical phase-space slots
    /// `[x1, .., xd, p1, .., pd]`.
    pub fn new(dim: usize, value: ScalarField) -> Result<Self> {
        let grad = (0..2 * dim)
            .map(|s| value.partial(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, value, grad })
    }

    /// Parses an expression in `x1.., p1..`.
    pub fn parse(dim: usize, text: &str) -> Result<Self> {
        Self::new(dim, ScalarField::parse(text, &phase_space_names(dim))?)
    }

    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The underlying field.
    pub fn field(&self) -> &ScalarField {
        &self.value
    }

    /// Value at `(x, xi)` packed as `[x.., xi..]`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.value.eval(z)
    }

    /// Gradient `(∇_x h, ∇_ξ h)` packed as a vector of length `2 d`.
    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(z);
        }
    }
}

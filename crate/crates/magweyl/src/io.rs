//! Self-describing JSON containers for sampled data.
//!
//! Symbols, wave functions and operator kernels are exchanged as
//! [`Container`]s:
//!
//! * `kind` — what the samples are;
//! * `dims` — the configuration-space dimension;
//! * `points` / `lengths` — points and box length per axis of the grid the
//!   samples live on (the symbol grid for symbols, the microscopic grid for
//!   wave functions and kernels);
//! * `shape` — the array shape after flattening the axes;
//! * `values` — row-major `[re, im]` pairs;
//! * `metadata` — kind-specific extras (ε, λ, gauge label, order tag).
//!
//! Floats round-trip bit-exactly through the JSON text.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{domain, Error, Result};
use crate::geometry::Parameters;
use crate::grid::{GridSpec, HilbertGrid, SymbolField, WaveFunction};
use crate::linalg::CMatrix;
use crate::quantizer::OperatorKernel;

/// What a [`Container`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerKind {
    /// Samples of a phase-space symbol.
    Symbol,
    /// Samples of a wave function on the microscopic grid.
    WaveFunction,
    /// Kernel values `K(x_i, y_j)` of an operator.
    Kernel,
}

/// A sampled complex array with its grid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Container {
    /// Content type.
    pub kind: ContainerKind,
    /// Configuration-space dimension.
    pub dims: usize,
    /// Points per axis.
    pub points: Vec<usize>,
    /// Box length per axis.
    pub lengths: Vec<f64>,
    /// Array shape of `values`.
    pub shape: Vec<usize>,
    /// Row-major `[re, im]` pairs.
    pub values: Vec<[f64; 2]>,
    /// Kind-specific metadata.
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

fn pairs(values: &[C64]) -> Vec<[f64; 2]> {
    values.iter().map(|c| [c.re, c.im]).collect()
}

fn complexes(values: &[[f64; 2]]) -> Vec<C64> {
    values.iter().map(|p| C64::new(p[0], p[1])).collect()
}

impl Container {
    /// Packs a sampled symbol.
    pub fn from_symbol(f: &SymbolField) -> Self {
        let g = f.grid;
        let mut metadata = BTreeMap::new();
        if let Some(m) = f.order {
            metadata.insert("order".to_string(), Value::from(m));
        }
        Self {
            kind: ContainerKind::Symbol,
            dims: g.dim,
            points: vec![g.n; g.dim],
            lengths: vec![g.length; g.dim],
            shape: vec![g.n_pos(), g.n_pos()],
            values: pairs(&f.values),
            metadata,
        }
    }

    /// Packs a wave function.
    pub fn from_wave_function(u: &WaveFunction) -> Self {
        let h = u.grid;
        let mut metadata = BTreeMap::new();
        metadata.insert("eps".to_string(), Value::from(h.eps));
        metadata.insert("symbol_points".to_string(), Value::from(h.n));
        Self {
            kind: ContainerKind::WaveFunction,
            dims: h.dim,
            points: vec![h.m; h.dim],
            lengths: vec![h.period(); h.dim],
            shape: vec![h.size()],
            values: pairs(&u.values),
            metadata,
        }
    }

    /// Packs an operator kernel with its gauge and parameters.
    pub fn from_kernel(k: &OperatorKernel) -> Self {
        let h = k.hilbert;
        let mut metadata = BTreeMap::new();
        metadata.insert("eps".to_string(), Value::from(k.params.eps));
        metadata.insert("lambda".to_string(), Value::from(k.params.lambda));
        metadata.insert("gauge".to_string(), Value::from(k.gauge.clone()));
        metadata.insert("symbol_points".to_string(), Value::from(k.grid.n));
        metadata.insert("symbol_length".to_string(), Value::from(k.grid.length));
        let n = k.matrix.nrows();
        // Row-major, unlike nalgebra's column-major storage.
        let values = (0..n * n)
            .map(|flat| {
                let c = k.matrix[(flat / n, flat % n)];
                [c.re, c.im]
            })
            .collect();
        Self {
            kind: ContainerKind::Kernel,
            dims: h.dim,
            points: vec![h.m; h.dim],
            lengths: vec![h.period(); h.dim],
            shape: vec![n, n],
            values,
            metadata,
        }
    }

    fn expect(&self, kind: ContainerKind) -> Result<()> {
        if self.kind != kind {
            return domain(format!("container holds {:?}, expected {kind:?}", self.kind));
        }
        if self.points.len() != self.dims || self.lengths.len() != self.dims {
            return domain("container axis descriptions do not match its dimension");
        }
        if self.points.windows(2).any(|w| w[0] != w[1]) || self.lengths.windows(2).any(|w| w[0] != w[1]) {
            return domain("containers with anisotropic axes are not supported");
        }
        let expected: usize = self.shape.iter().product();
        if expected != self.values.len() {
            return domain(format!(
                "container shape {:?} needs {expected} values, found {}",
                self.shape,
                self.values.len()
            ));
        }
        Ok(())
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        self.metadata
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Domain(format!("container metadata lacks numeric `{key}`")))
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        self.metadata
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Domain(format!("container metadata lacks integer `{key}`")))
    }

    /// Unpacks a sampled symbol.
    pub fn to_symbol(&self) -> Result<SymbolField> {
        self.expect(ContainerKind::Symbol)?;
        let grid = GridSpec::new(self.dims, self.points[0], self.lengths[0])?;
        let mut f = SymbolField::from_values(grid, complexes(&self.values))?;
        f.order = self.metadata.get("order").and_then(Value::as_f64);
        Ok(f)
    }

    fn hilbert(&self, symbol_length: Option<f64>) -> Result<(GridSpec, HilbertGrid)> {
        let eps = self.meta_f64("eps")?;
        let n = self.meta_usize("symbol_points")?;
        // The microscopic period is L/ε.
        let length = symbol_length.unwrap_or(self.lengths[0] * eps);
        let grid = GridSpec::new(self.dims, n, length)?;
        let h = grid.hilbert(eps)?;
        if h.m != self.points[0] {
            return domain(format!(
                "container has {} points per axis, ε and N imply {}",
                self.points[0], h.m
            ));
        }
        Ok((grid, h))
    }

    /// Unpacks a wave function.
    pub fn to_wave_function(&self) -> Result<WaveFunction> {
        self.expect(ContainerKind::WaveFunction)?;
        let (_, h) = self.hilbert(None)?;
        WaveFunction::new(h, complexes(&self.values))
    }

    /// Unpacks an operator kernel.
    pub fn to_kernel(&self) -> Result<OperatorKernel> {
        self.expect(ContainerKind::Kernel)?;
        let (grid, hilbert) = self.hilbert(Some(self.meta_f64("symbol_length")?))?;
        let n = hilbert.size();
        if self.shape != [n, n] {
            return domain(format!("kernel shape {:?} does not match {n}×{n}", self.shape));
        }
        let params = Parameters::new(self.meta_f64("eps")?, self.meta_f64("lambda")?)?;
        let gauge = self
            .metadata
            .get("gauge")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Domain("kernel container lacks `gauge`".into()))?
            .to_string();
        let matrix = CMatrix::from_fn(n, n, |i, j| {
            let p = self.values[i * n + j];
            C64::new(p[0], p[1])
        });
        Ok(OperatorKernel {
            grid,
            hilbert,
            gauge,
            params,
            matrix,
        })
    }

    /// JSON text.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes the JSON text to `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::Domain(format!("cannot write {}: {e}", path.display())))
    }

    /// Reads a container from `path`.
    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Domain(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

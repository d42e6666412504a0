//! Frozen random hidden layer.
//!
//! An [`ElmLayer`] holds an `h × r` weight matrix drawn once from a seeded
//! stream. It maps a complex-covariate vector `ψ` to hidden features
//! `g = sigmoid(Aψ)`. There is no separate bias vector; callers that want one
//! put a constant `1` in the first slot of `ψ` (see
//! [`crate::features::complex_covariates`]).

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BudisError, Result};
use crate::rng;

/// Distribution of the hidden weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenWeightDist {
    #[default]
    StandardNormal,
    /// Accepted by the config parser so it can be rejected with a clear message.
    Uniform,
}

/// Hidden activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElmConfig {
    pub hidden: usize,
    pub sparsity: f64,
    pub seed: u64,
    #[serde(default)]
    pub weights: HiddenWeightDist,
    #[serde(default)]
    pub activation: Activation,
}

impl ElmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weights != HiddenWeightDist::StandardNormal {
            return Err(BudisError::Unsupported(format!(
                "hidden weight distribution {:?}; only standard_normal is implemented",
                self.weights
            )));
        }
        if self.activation != Activation::Sigmoid {
            return Err(BudisError::Unsupported(format!(
                "hidden activation {:?}; only sigmoid is implemented",
                self.activation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElmLayer {
    weights: DMatrix<f64>,
    sparsity: f64,
    seed: u64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ElmLayer {
    /// Draws `A` with i.i.d. standard normal entries (row-major order from the
    /// seeded stream), then zeroes `floor(h·r·sparsity)` entries chosen
    /// uniformly without replacement.
    pub fn new(hidden: usize, inputs: usize, sparsity: f64, seed: u64) -> Result<Self> {
        if hidden == 0 || inputs == 0 {
            return Err(BudisError::invalid(format!(
                "hidden layer needs h ≥ 1 and r ≥ 1, got h={hidden}, r={inputs}"
            )));
        }
        if !(0.0..1.0).contains(&sparsity) {
            return Err(BudisError::invalid(format!(
                "sparsity must lie in [0, 1), got {sparsity}"
            )));
        }
        let mut stream = rng::stream(seed);
        let total = hidden * inputs;
        let mut data: Vec<f64> = (0..total).map(|_| StandardNormal.sample(&mut stream)).collect();
        let zeros = zero_count(hidden, inputs, sparsity);
        for i in index::sample(&mut stream, total, zeros).into_iter() {
            data[i] = 0.0;
        }
        Ok(Self {
            weights: DMatrix::from_row_slice(hidden, inputs, &data),
            sparsity,
            seed,
        })
    }

    pub fn from_config(config: &ElmConfig, inputs: usize) -> Result<Self> {
        config.validate()?;
        Self::new(config.hidden, inputs, config.sparsity, config.seed)
    }

    /// Builds a layer around an explicit weight matrix.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(BudisError::invalid("hidden weight matrix is empty"));
        }
        let zeros = weights.iter().filter(|w| **w == 0.0).count();
        Ok(Self {
            sparsity: zeros as f64 / weights.len() as f64,
            weights,
            seed: 0,
        })
    }

    pub fn hidden(&self) -> usize {
        self.weights.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn transform(&self, psi: &[f64]) -> Result<DVector<f64>> {
        if psi.len() != self.inputs() {
            return Err(BudisError::DimensionMismatch {
                what: "complex covariates",
                expected: self.inputs(),
                found: psi.len(),
            });
        }
        let mut out = &self.weights * DVector::from_column_slice(psi);
        out.apply(|v| *v = sigmoid(*v));
        Ok(out)
    }

    /// Row `i` of the result is `transform(rows[i])`.
    pub fn transform_rows(&self, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows.len(), self.hidden());
        for (i, row) in rows.iter().enumerate() {
            let g = self.transform(row)?;
            out.row_mut(i).copy_from(&g.transpose());
        }
        Ok(out)
    }

    /// CSV dump: a `#` header line with the regeneration parameters, then one
    /// comma-separated row per hidden node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# seed={} hidden={} inputs={} sparsity={}",
            self.seed,
            self.hidden(),
            self.inputs(),
            self.sparsity
        )?;
        let mut line = String::new();
        for row in self.weights.row_iter() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                write!(line, "{v}").expect("writing to a String");
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a dump written by [`ElmLayer::write_csv`]. The header's
    /// parameters are used to regenerate the matrix, which must agree with the
    /// dumped body.
    pub fn read_csv<R: BufRead>(input: R, path: &str) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| BudisError::parse(path, 1, "empty layer file"))??;
        let mut seed = None;
        let mut hidden = None;
        let mut inputs = None;
        let mut sparsity = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| BudisError::parse(path, 1, format!("bad header field `{field}`")))?;
            let bad = |_| BudisError::parse(path, 1, format!("bad value for `{k}`"));
            match k {
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                "hidden" => hidden = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "inputs" => inputs = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "sparsity" => sparsity = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(BudisError::parse(path, 1, format!("unknown header key `{k}`"))),
            }
        }
        let missing = || BudisError::parse(path, 1, "incomplete layer header");
        let layer = Self::new(
            hidden.ok_or_else(missing)?,
            inputs.ok_or_else(missing)?,
            sparsity.ok_or_else(missing)?,
            seed.ok_or_else(missing)?,
        )?;
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = i;
            if row >= layer.hidden() {
                return Err(BudisError::parse(path, i + 2, "too many rows"));
            }
            let values: Vec<&str> = line.split(',').collect();
            if values.len() != layer.inputs() {
                return Err(BudisError::parse(path, i + 2, "wrong number of columns"));
            }
            for (j, v) in values.iter().enumerate() {
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| BudisError::parse(path, i + 2, format!("bad number `{v}`")))?;
                if v != layer.weights[(row, j)] {
                    return Err(BudisError::parse(
                        path,
                        i + 2,
                        "dumped weights disagree with the regenerated layer",
                    ));
                }
            }
            rows += 1;
        }
        if rows != layer.hidden() {
            return Err(BudisError::parse(path, rows + 1, "too few rows"));
        }
        Ok(layer)
    }
}

/// `floor(h·r·sparsity)`, robust to products like `0.29 × 100` landing just
/// below an integer.
pub fn zero_count(hidden: usize, inputs: usize, sparsity: f64) -> usize {
    let exact = (hidden * inputs) as f64 * sparsity;
    (exact + 1e-9 * exact.max(1.0)).floor() as usize
}

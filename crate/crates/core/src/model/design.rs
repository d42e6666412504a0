use nalgebra::{DMatrix, DVector};

use crate::error::{BudisError, Result};

/// Rescales positive survey weights to sum to the sample size:
/// `w̃_i = n·w_i / Σ_j w_j`.
pub fn scale_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
        return Err(BudisError::invalid(format!(
            "survey weight {i} must be positive and finite, got {w}"
        )));
    }
    let n = weights.len() as f64;
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| n * w / total).collect())
}

/// How unit likelihood contributions are weighted.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    /// Ordinary likelihood.
    Unweighted,
    /// Pseudo-likelihood with scaled weights summing to `n`.
    Pseudo(DVector<f64>),
}

/// Responses, trial counts, weights and the two design blocks for one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignData {
    x: DMatrix<f64>,
    g: DMatrix<f64>,
    z: DVector<f64>,
    trials: DVector<f64>,
    weighting: Weighting,
}

impl DesignData {
    /// Pseudo-likelihood data; `w_tilde` must already sum to `n` (within 1e-8).
    pub fn new(x: DMatrix<f64>, g: DMatrix<f64>, z: Vec<f64>, trials: Vec<f64>, w_tilde: Vec<f64>) -> Result<Self> {
        let n = x.nrows();
        if w_tilde.len() != n {
            return Err(BudisError::DimensionMismatch {
                what: "weights",
                expected: n,
                found: w_tilde.len(),
            });
        }
        if w_tilde.iter().any(|w| !(*w > 0.0)) {
            return Err(BudisError::invalid("scaled weights must be positive"));
        }
        let total: f64 = w_tilde.iter().sum();
        if (total - n as f64).abs() > 1e-8 {
            return Err(BudisError::invalid(format!(
                "scaled weights sum to {total}, expected the sample size {n}"
            )));
        }
        Self::build(x, g, z, trials, Weighting::Pseudo(DVector::from_vec(w_tilde)))
    }

    /// Scales raw survey weights, then builds pseudo-likelihood data.
    pub fn from_survey_weights(
        x: DMatrix<f64>,
        g: DMatrix<f64>,
        z: Vec<f64>,
        trials: Vec<f64>,
        weights: &[f64],
    ) -> Result<Self> {
        let w = scale_weights(weights)?;
        Self::new(x, g, z, trials, w)
    }

    pub fn unweighted(x: DMatrix<f64>, g: DMatrix<f64>, z: Vec<f64>, trials: Vec<f64>) -> Result<Self> {
        Self::build(x, g, z, trials, Weighting::Unweighted)
    }

    /// Bernoulli responses (`n_i = 1`) with raw survey weights.
    pub fn bernoulli(x: DMatrix<f64>, g: DMatrix<f64>, z: Vec<f64>, weights: &[f64]) -> Result<Self> {
        let trials = vec![1.0; z.len()];
        Self::from_survey_weights(x, g, z, trials, weights)
    }

    fn build(x: DMatrix<f64>, g: DMatrix<f64>, z: Vec<f64>, trials: Vec<f64>, weighting: Weighting) -> Result<Self> {
        let n = x.nrows();
        for (what, found) in [
            ("ELM feature rows", g.nrows()),
            ("responses", z.len()),
            ("trial counts", trials.len()),
        ] {
            if found != n {
                return Err(BudisError::DimensionMismatch {
                    what,
                    expected: n,
                    found,
                });
            }
        }
        for (i, (&zi, &ni)) in z.iter().zip(&trials).enumerate() {
            if !(ni >= 1.0) || ni.fract() != 0.0 {
                return Err(BudisError::invalid(format!(
                    "unit {i}: trial count {ni} is not a positive integer"
                )));
            }
            if !(0.0..=ni).contains(&zi) || zi.fract() != 0.0 {
                return Err(BudisError::invalid(format!("unit {i}: response {zi} outside 0..={ni}")));
            }
        }
        if let Some(v) = g.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(BudisError::invalid(format!(
                "ELM features must lie in [0,1], found {v}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BudisError::invalid("linear covariates must be finite"));
        }
        Ok(Self {
            x,
            g,
            z: DVector::from_vec(z),
            trials: DVector::from_vec(trials),
            weighting,
        })
    }

    /// No units; `p` linear and `h` hidden columns.
    pub fn empty(p: usize, h: usize) -> Self {
        Self {
            x: DMatrix::zeros(0, p),
            g: DMatrix::zeros(0, h),
            z: DVector::zeros(0),
            trials: DVector::zeros(0),
            weighting: Weighting::Unweighted,
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn h(&self) -> usize {
        self.g.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn trials(&self) -> &DVector<f64> {
        &self.trials
    }

    pub fn weighting(&self) -> &Weighting {
        &self.weighting
    }

    /// Scaled weights (all ones when unweighted).
    pub fn w_tilde(&self) -> DVector<f64> {
        match &self.weighting {
            Weighting::Unweighted => DVector::from_element(self.n(), 1.0),
            Weighting::Pseudo(w) => w.clone(),
        }
    }

    /// `C = [X G]`.
    pub fn combined(&self) -> DMatrix<f64> {
        let (n, p, h) = (self.n(), self.p(), self.h());
        let mut c = DMatrix::zeros(n, p + h);
        c.view_mut((0, 0), (n, p)).copy_from(&self.x);
        c.view_mut((0, p), (n, h)).copy_from(&self.g);
        c
    }

    /// Pólya-Gamma shapes `w̃_i n_i`.
    pub fn pg_shapes(&self) -> DVector<f64> {
        match &self.weighting {
            Weighting::Unweighted => self.trials.clone(),
            Weighting::Pseudo(w) => w.component_mul(&self.trials),
        }
    }

    /// `κ_i = w̃_i (z_i − n_i/2)`.
    pub fn kappa(&self) -> DVector<f64> {
        let centred = &self.z - &self.trials * 0.5;
        match &self.weighting {
            Weighting::Unweighted => centred,
            Weighting::Pseudo(w) => w.component_mul(&centred),
        }
    }

    /// Constant `Σ w̃_i ln C(n_i, z_i)` of the weighted log-likelihood.
    pub(crate) fn log_binomial_constant(&self) -> f64 {
        let w = self.w_tilde();
        (0..self.n())
            .map(|i| {
                let (n, z) = (self.trials[i], self.z[i]);
                if n == 1.0 {
                    0.0
                } else {
                    w[i] * (statrs::function::gamma::ln_gamma(n + 1.0)
                        - statrs::function::gamma::ln_gamma(z + 1.0)
                        - statrs::function::gamma::ln_gamma(n - z + 1.0))
                }
            })
            .sum()
    }

    /// Keeps the units with `keep[i]`, preserving the weighting of each.
    pub fn subset(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.n() {
            return Err(BudisError::DimensionMismatch {
                what: "subset mask",
                expected: self.n(),
                found: keep.len(),
            });
        }
        let rows: Vec<usize> = (0..self.n()).filter(|&i| keep[i]).collect();
        let weighting = match &self.weighting {
            Weighting::Unweighted => Weighting::Unweighted,
            Weighting::Pseudo(w) => Weighting::Pseudo(w.select_rows(&rows)),
        };
        Ok(Self {
            x: self.x.select_rows(&rows),
            g: self.g.select_rows(&rows),
            z: self.z.select_rows(&rows),
            trials: self.trials.select_rows(&rows),
            weighting,
        })
    }

    /// Same units with responses replaced.
    pub fn with_responses(&self, z: Vec<f64>) -> Result<Self> {
        Self::build(
            self.x.clone(),
            self.g.clone(),
            z,
            self.trials.iter().copied().collect(),
            self.weighting.clone(),
        )
    }
}

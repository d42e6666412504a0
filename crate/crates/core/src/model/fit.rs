use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::elm::sigmoid;
use crate::error::{BudisError, Result};

/// Retained Gibbs draws; row `s` of `theta` is `(β, η)` at retained draw `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsDraws {
    pub p: usize,
    pub h: usize,
    pub theta: DMatrix<f64>,
    pub sigma2_eta: Vec<f64>,
}

/// Mean-field factors: `q(β, η) = N(mean, covariance)`,
/// `q(σ²_η) = IG(ig_shape, ig_rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VbFit {
    pub p: usize,
    pub h: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub ig_shape: f64,
    pub ig_rate: f64,
    pub elbo: Vec<f64>,
    pub converged: bool,
    cov_factor: DMatrix<f64>,
}

impl VbFit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        h: usize,
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        ig_shape: f64,
        ig_rate: f64,
        elbo: Vec<f64>,
        converged: bool,
    ) -> Result<Self> {
        let d = p + h;
        if mean.len() != d || covariance.nrows() != d || covariance.ncols() != d {
            return Err(BudisError::DimensionMismatch {
                what: "variational factor",
                expected: d,
                found: mean.len(),
            });
        }
        let cov_factor = if d == 0 {
            DMatrix::zeros(0, 0)
        } else {
            covariance
                .clone()
                .cholesky()
                .ok_or(BudisError::NotPositiveDefinite)?
                .l()
        };
        Ok(Self {
            p,
            h,
            mean,
            covariance,
            ig_shape,
            ig_rate,
            elbo,
            converged,
            cov_factor,
        })
    }

    pub fn iterations(&self) -> usize {
        self.elbo.len()
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.cov_factor * eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Gibbs,
    Vb,
}

/// Posterior over `(β, η, σ²_η)`.
#[derive(Debug, Clone, PartialEq)]
pub enum FitResult {
    Gibbs(GibbsDraws),
    Vb(VbFit),
}

impl FitResult {
    pub fn kind(&self) -> FitKind {
        match self {
            FitResult::Gibbs(_) => FitKind::Gibbs,
            FitResult::Vb(_) => FitKind::Vb,
        }
    }

    pub fn p(&self) -> usize {
        match self {
            FitResult::Gibbs(g) => g.p,
            FitResult::Vb(v) => v.p,
        }
    }

    pub fn h(&self) -> usize {
        match self {
            FitResult::Gibbs(g) => g.h,
            FitResult::Vb(v) => v.h,
        }
    }

    /// Posterior mean of `(β, η)`.
    pub fn posterior_mean(&self) -> DVector<f64> {
        match self {
            FitResult::Gibbs(g) => {
                let n = g.theta.nrows().max(1) as f64;
                g.theta.row_sum().transpose() / n
            }
            FitResult::Vb(v) => v.mean.clone(),
        }
    }

    /// Marginal posterior variances of `(β, η)`.
    pub fn posterior_variance(&self) -> DVector<f64> {
        match self {
            FitResult::Gibbs(g) => {
                let mean = self.posterior_mean();
                let n = g.theta.nrows();
                let mut var = DVector::zeros(mean.len());
                for row in g.theta.row_iter() {
                    for j in 0..mean.len() {
                        var[j] += (row[j] - mean[j]).powi(2);
                    }
                }
                var / (n.saturating_sub(1).max(1)) as f64
            }
            FitResult::Vb(v) => v.covariance.diagonal(),
        }
    }

    /// Number of stored Gibbs draws, or `None` for a variational fit.
    pub fn draw_count(&self) -> Option<usize> {
        match self {
            FitResult::Gibbs(g) => Some(g.theta.nrows()),
            FitResult::Vb(_) => None,
        }
    }

    /// `(β, η)` for posterior draw `index`: the stored Gibbs draw
    /// `index mod count`, or a fresh sample from the variational Gaussian.
    pub fn theta<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            FitResult::Gibbs(g) => {
                if g.theta.nrows() == 0 {
                    return Err(BudisError::invalid("fit holds no posterior draws"));
                }
                Ok(g.theta.row(index % g.theta.nrows()).transpose())
            }
            FitResult::Vb(v) => Ok(v.sample_theta(rng)),
        }
    }

    /// `sigmoid(x'β + g'η)` under posterior draw `index` (see [`FitResult::theta`]).
    pub fn predict_proba<R: Rng + ?Sized>(&self, x: &[f64], g: &[f64], index: usize, rng: &mut R) -> Result<f64> {
        self.check_dims(x.len(), g.len())?;
        let theta = self.theta(index, rng)?;
        Ok(sigmoid(linear_predictor(&theta, x, g)))
    }

    /// Errors unless the fit has `p` linear and `h` hidden coefficients.
    pub fn check_dims(&self, p: usize, h: usize) -> Result<()> {
        if p != self.p() {
            return Err(BudisError::DimensionMismatch {
                what: "linear covariates",
                expected: self.p(),
                found: p,
            });
        }
        if h != self.h() {
            return Err(BudisError::DimensionMismatch {
                what: "hidden features",
                expected: self.h(),
                found: h,
            });
        }
        Ok(())
    }

    /// Gibbs draws as CSV (`beta_1.., eta_1.., sigma2_eta`), or the
    /// variational factors as a TOML key-value file.
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        match self {
            FitResult::Gibbs(g) => write_gibbs_csv(g, out),
            FitResult::Vb(v) => write_vb_toml(v, out),
        }
    }

    pub fn read<R: Read>(kind: FitKind, input: R, path: &str) -> Result<Self> {
        match kind {
            FitKind::Gibbs => read_gibbs_csv(input, path).map(FitResult::Gibbs),
            FitKind::Vb => read_vb_toml(input, path).map(FitResult::Vb),
        }
    }
}

pub(crate) fn linear_predictor(theta: &DVector<f64>, x: &[f64], g: &[f64]) -> f64 {
    let p = x.len();
    x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>()
        + g.iter().zip(theta.iter().skip(p)).map(|(a, b)| a * b).sum::<f64>()
}

fn write_gibbs_csv<W: Write>(g: &GibbsDraws, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=g.p).map(|j| format!("beta_{j}")).collect();
    header.extend((1..=g.h).map(|j| format!("eta_{j}")));
    header.push("sigma2_eta".into());
    w.write_record(&header)?;
    for (row, s2) in g.theta.row_iter().zip(&g.sigma2_eta) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(s2.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn read_gibbs_csv<R: Read>(input: R, path: &str) -> Result<GibbsDraws> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let p = headers.iter().filter(|h| h.starts_with("beta_")).count();
    let h = headers.iter().filter(|h| h.starts_with("eta_")).count();
    if headers.len() != p + h + 1 || headers.get(p + h) != Some("sigma2_eta") {
        return Err(BudisError::parse(path, 1, "expected beta_*, eta_*, sigma2_eta columns"));
    }
    let mut data = Vec::new();
    let mut sigma2 = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let nums = rec
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| BudisError::parse(path, i + 2, format!("bad number `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        data.extend_from_slice(&nums[..p + h]);
        sigma2.push(nums[p + h]);
    }
    Ok(GibbsDraws {
        p,
        h,
        theta: DMatrix::from_row_slice(sigma2.len(), p + h, &data),
        sigma2_eta: sigma2,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VbFile {
    kind: String,
    p: usize,
    h: usize,
    ig_shape: f64,
    ig_rate: f64,
    converged: bool,
    iterations: usize,
    mean: Vec<f64>,
    elbo: Vec<f64>,
    /// Row-major.
    covariance: Vec<Vec<f64>>,
}

fn write_vb_toml<W: Write>(v: &VbFit, mut out: W) -> Result<()> {
    let file = VbFile {
        kind: "vb".into(),
        p: v.p,
        h: v.h,
        ig_shape: v.ig_shape,
        ig_rate: v.ig_rate,
        converged: v.converged,
        iterations: v.iterations(),
        mean: v.mean.iter().copied().collect(),
        elbo: v.elbo.clone(),
        covariance: v.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
    };
    let text = toml::to_string(&file).map_err(|e| BudisError::invalid(e.to_string()))?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn read_vb_toml<R: Read>(mut input: R, path: &str) -> Result<VbFit> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let file: VbFile = toml::from_str(&text).map_err(|e| BudisError::parse(path, 0, e.to_string()))?;
    if file.kind != "vb" {
        return Err(BudisError::parse(path, 0, "not a variational fit file"));
    }
    let d = file.p + file.h;
    if file.covariance.len() != d || file.covariance.iter().any(|r| r.len() != d) {
        return Err(BudisError::parse(path, 0, "covariance has the wrong shape"));
    }
    let cov = DMatrix::from_row_iterator(d, d, file.covariance.into_iter().flatten());
    VbFit::new(
        file.p,
        file.h,
        DVector::from_vec(file.mean),
        cov,
        file.ig_shape,
        file.ig_rate,
        file.elbo,
        file.converged,
    )
}

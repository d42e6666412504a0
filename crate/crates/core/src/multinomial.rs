//! Stick-breaking reduction of a K-category response.
//!
//! A Multinomial likelihood factorises into `K − 1` Binomials: conditional `k`
//! sees only the units whose category is `k` or later, with success meaning
//! "category is exactly `k`". The conditional probabilities relate to the
//! category probabilities by `p̃_k = p_k / (1 − Σ_{j<k} p_j)`.
//!
//! Category order is the caller's label order.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::elm::sigmoid;
use crate::error::{BudisError, Result};
use crate::model::{self, fit::linear_predictor, BudisSpec, DesignData, FitResult, Fitter};

/// Per-conditional response: `Some(z_k)` when the unit enters conditional
/// `k`, `None` when an earlier category already claimed it.
pub fn sb_decompose(category: usize, k: usize) -> Result<Vec<Option<f64>>> {
    if k < 2 || category == 0 || category > k {
        return Err(BudisError::invalid(format!(
            "category {category} outside 1..={k} (need K ≥ 2)"
        )));
    }
    Ok((1..k)
        .map(|stick| match category.cmp(&stick) {
            std::cmp::Ordering::Less => None,
            std::cmp::Ordering::Equal => Some(1.0),
            std::cmp::Ordering::Greater => Some(0.0),
        })
        .collect())
}

/// Conditional probabilities `p̃_1..p̃_{K−1}` of a probability vector.
pub fn sb_conditionals(p: &[f64]) -> Result<Vec<f64>> {
    if p.len() < 2 {
        return Err(BudisError::invalid("need at least two categories"));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(BudisError::invalid("not a probability vector"));
    }
    // Tail masses Σ_{j≥k} p_j, summed from the end with the rounding error
    // carried separately, so each ratio is close to correctly rounded.
    let mut tails = vec![(0.0, 0.0); p.len()];
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (k, &pk) in p.iter().enumerate().rev() {
        let t = hi + pk;
        let b = t - hi;
        lo += (hi - (t - b)) + (pk - b);
        hi = t;
        tails[k] = (hi, lo);
    }
    Ok(p[..p.len() - 1]
        .iter()
        .zip(&tails)
        .map(|(&pk, &(hi, lo))| {
            if hi <= 0.0 {
                return 0.0;
            }
            let q = pk / hi;
            let r = (-q).mul_add(hi, pk);
            (q + (r - q * lo) / hi).clamp(0.0, 1.0)
        })
        .collect())
}

/// `p_1 = p̃_1`, `p_k = p̃_k Π_{j<k}(1 − p̃_j)`, `p_K` the remainder.
///
/// Conditionals must lie in `[0, 1]`; the endpoints are accepted so that
/// saturated posterior draws do not error.
pub fn sb_reconstruct(ptilde: &[f64]) -> Result<Vec<f64>> {
    if ptilde.is_empty() {
        return Err(BudisError::invalid("need at least one conditional"));
    }
    if let Some(v) = ptilde.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(BudisError::invalid(format!(
            "conditional probability {v} outside [0, 1]"
        )));
    }
    let mut stick = 1.0;
    let mut out = Vec::with_capacity(ptilde.len() + 1);
    for &pt in ptilde {
        out.push(pt * stick);
        stick *= 1.0 - pt;
    }
    out.push(stick);
    Ok(out)
}

/// `K − 1` independent Binomial fits.
#[derive(Debug, Clone)]
pub struct StickBreaking {
    pub labels: Vec<String>,
    pub fits: Vec<FitResult>,
}

impl StickBreaking {
    /// Fits every conditional. `categories` holds zero-based indices into
    /// `labels`; `weights` are raw survey weights, scaled once over the whole
    /// sample so each unit keeps the same pseudo-likelihood weight in every
    /// conditional it enters. Gibbs conditional `k` uses the seed derived from
    /// `spec.gibbs.seed` and `k`.
    pub fn fit(
        labels: Vec<String>,
        x: &DMatrix<f64>,
        g: &DMatrix<f64>,
        categories: &[usize],
        weights: &[f64],
        spec: &BudisSpec,
        fitter: Fitter,
    ) -> Result<Self> {
        let k = labels.len();
        if k < 2 {
            return Err(BudisError::invalid("stick-breaking needs at least two categories"));
        }
        if let Some(c) = categories.iter().find(|c| **c >= k) {
            return Err(BudisError::invalid(format!("category index {c} outside 0..{k}")));
        }
        let n = categories.len();
        let full = DesignData::bernoulli(x.clone(), g.clone(), vec![0.0; n], weights)?;
        let fits = (0..k - 1)
            .into_par_iter()
            .map(|stick| {
                let z: Vec<f64> = categories.iter().map(|&c| (c == stick) as u8 as f64).collect();
                let keep: Vec<bool> = categories.iter().map(|&c| c >= stick).collect();
                let data = full.with_responses(z)?.subset(&keep)?;
                let mut local = *spec;
                local.gibbs.seed = crate::rng::derive_seed(spec.gibbs.seed, &[stick as u64]);
                model::fit(&data, &local, fitter)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { labels, fits })
    }

    pub fn categories(&self) -> usize {
        self.labels.len()
    }

    /// Category probabilities for `(x, g)` under posterior draw `index`.
    pub fn category_probabilities<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        g: &[f64],
        index: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut ptilde = Vec::with_capacity(self.fits.len());
        for fit in &self.fits {
            fit.check_dims(x.len(), g.len())?;
            let theta = fit.theta(index, rng)?;
            ptilde.push(sigmoid(linear_predictor(&theta, x, g)));
        }
        sb_reconstruct(&ptilde)
    }
}

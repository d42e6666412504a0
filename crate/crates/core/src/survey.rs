//! Poisson probability-proportional-to-size sampling and direct estimators.

use rand::Rng;

use crate::error::{BudisError, Result};

/// One realised Poisson PPS sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDraw {
    /// Inclusion probabilities for every population unit.
    pub inclusion: Vec<f64>,
    /// Indices of sampled units, ascending.
    pub sampled: Vec<usize>,
    /// `1/π_i` for each sampled unit, aligned with `sampled`.
    pub weights: Vec<f64>,
}

impl DesignDraw {
    pub fn len(&self) -> usize {
        self.sampled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sampled.is_empty()
    }
}

/// `π_i = min(1, n·s_i / Σ s_j)`.
pub fn pps_inclusion(sizes: &[f64], expected_n: f64) -> Result<Vec<f64>> {
    if let Some((i, s)) = sizes.iter().enumerate().find(|(_, s)| !(**s > 0.0) || !s.is_finite()) {
        return Err(BudisError::invalid(format!("size {i} must be positive, got {s}")));
    }
    if !(expected_n > 0.0) || expected_n > sizes.len() as f64 {
        return Err(BudisError::invalid(format!(
            "expected sample size must be in (0, {}], got {expected_n}",
            sizes.len()
        )));
    }
    let total: f64 = sizes.iter().sum();
    Ok(sizes.iter().map(|s| (expected_n * s / total).min(1.0)).collect())
}

/// Each unit enters independently with probability `π_i`, consuming one
/// uniform per population unit in index order.
pub fn poisson_pps_sample<R: Rng + ?Sized>(sizes: &[f64], expected_n: f64, rng: &mut R) -> Result<DesignDraw> {
    let inclusion = pps_inclusion(sizes, expected_n)?;
    let mut sampled = Vec::new();
    let mut weights = Vec::new();
    for (i, &pi) in inclusion.iter().enumerate() {
        if rng.random::<f64>() < pi {
            sampled.push(i);
            weights.push(1.0 / pi);
        }
    }
    Ok(DesignDraw {
        inclusion,
        sampled,
        weights,
    })
}

/// `base_weight + shift·y`, the size variable that makes selection depend on
/// the response.
pub fn informative_size(base_weight: f64, y: f64, shift: f64) -> Result<f64> {
    if !(base_weight > 0.0) {
        return Err(BudisError::invalid(format!(
            "base weight must be positive, got {base_weight}"
        )));
    }
    let size = base_weight + shift * y;
    if !(size > 0.0) {
        return Err(BudisError::invalid(format!(
            "size {size} is not positive (base {base_weight}, y {y}, shift {shift})"
        )));
    }
    Ok(size)
}

/// Hájek ratio `Σ w y / Σ w` when `weighted`, else the sample mean.
/// `None` for an empty area sample.
pub fn direct_estimate(y: &[f64], w: &[f64], weighted: bool) -> Result<Option<f64>> {
    if y.len() != w.len() {
        return Err(BudisError::DimensionMismatch {
            what: "direct estimator weights",
            expected: y.len(),
            found: w.len(),
        });
    }
    if y.is_empty() {
        return Ok(None);
    }
    if weighted {
        let num: f64 = y.iter().zip(w).map(|(y, w)| y * w).sum();
        let den: f64 = w.iter().sum();
        Ok(Some(num / den))
    } else {
        Ok(Some(y.iter().sum::<f64>() / y.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn inclusion_examples() {
        assert_eq!(pps_inclusion(&[1.0, 2.0, 1.0], 2.0).unwrap(), vec![0.5, 1.0, 0.5]);
        assert_eq!(pps_inclusion(&[3.0; 8], 4.0).unwrap(), vec![0.5; 8]);
        assert!(pps_inclusion(&[1.0, 0.0], 1.0).is_err());
        assert!(pps_inclusion(&[1.0, 1.0], 3.0).is_err());
    }

    #[test]
    fn equal_sizes_realised_count() {
        let m = 10_000;
        let draw = poisson_pps_sample(&vec![1.0; m], m as f64 / 2.0, &mut stream(12)).unwrap();
        let dev = (draw.len() as f64 - m as f64 / 2.0).abs();
        assert!(dev < 3.0 * (m as f64 * 0.25).sqrt());
        assert!(draw.weights.iter().all(|w| *w == 2.0));
        assert!(draw.sampled.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn certainty_units_get_unit_weight() {
        let draw = poisson_pps_sample(&[1.0, 2.0, 1.0], 2.0, &mut stream(1)).unwrap();
        let pos = draw.sampled.iter().position(|&i| i == 1).expect("certainty unit");
        assert_eq!(draw.weights[pos], 1.0);
    }

    #[test]
    fn informative_size_examples() {
        assert_eq!(informative_size(1.0, 1.0, 0.7).unwrap(), 1.7);
        assert_eq!(informative_size(1.0, 0.0, 0.7).unwrap(), 1.0);
        assert_eq!(informative_size(2.5, 1.0, 0.0).unwrap(), 2.5);
        assert!(informative_size(1.0, 1.0, -1.0).is_err());
        assert!(informative_size(0.0, 1.0, 0.7).is_err());
    }

    #[test]
    fn direct_examples() {
        assert_eq!(direct_estimate(&[0.0, 1.0], &[1.0, 1.0], true).unwrap(), Some(0.5));
        assert_eq!(direct_estimate(&[0.0, 1.0], &[1.0, 1.0], false).unwrap(), Some(0.5));
        assert_eq!(direct_estimate(&[0.0, 1.0], &[1.0, 3.0], true).unwrap(), Some(0.75));
        assert_eq!(direct_estimate(&[0.0, 1.0], &[1.0, 3.0], false).unwrap(), Some(0.5));
        assert_eq!(direct_estimate(&[1.0; 3], &[1.0, 9.0, 2.0], true).unwrap(), Some(1.0));
        assert_eq!(direct_estimate(&[], &[], true).unwrap(), None);
    }

    proptest! {
        #[test]
        fn hajek_ignores_weight_scale(
            pairs in proptest::collection::vec((0u8..2, 0.1f64..50.0), 1..60),
            c in 0.01f64..100.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let wc: Vec<f64> = w.iter().map(|v| v * c).collect();
            let a = direct_estimate(&y, &w, true).unwrap().unwrap();
            let b = direct_estimate(&y, &wc, true).unwrap().unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

//! The unit-level Binomial pseudo-likelihood model
//!
//! ```text
//! Z_i | β, η   ∝ Bin(Z_i | n_i, p_i)^{w̃_i}
//! logit(p_i)   = x_i'β + g_i'η
//! η | σ²_η     ~ N_h(0, σ²_η I)
//! β            ~ N_p(0, σ²_β I)
//! σ²_η         ~ IG(a, b)
//! ```
//!
//! Raising each Binomial term to the power `w̃_i` gives
//! `(e^ψ)^{w̃z} / (1 + e^ψ)^{w̃n}`, so Pólya-Gamma augmentation goes through with
//! shape `w̃_i n_i` and `κ_i = w̃_i (z_i − n_i/2)`. Both fitters in this module
//! work from those two quantities.

mod design;
pub(crate) mod fit;
mod gibbs;
mod vb;

pub use design::{scale_weights, DesignData, Weighting};
pub use fit::{FitKind, FitResult, GibbsDraws, VbFit};
pub use gibbs::gibbs_fit;
pub use vb::vb_fit;

use serde::{Deserialize, Serialize};

use crate::error::{BudisError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VbSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for VbSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-6,
        }
    }
}

/// Prior hyperparameters and fitter settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudisSpec {
    pub sigma2_beta: f64,
    /// IG shape for `σ²_η`.
    pub a: f64,
    /// IG rate for `σ²_η`.
    pub b: f64,
    pub gibbs: GibbsSettings,
    pub vb: VbSettings,
}

impl Default for BudisSpec {
    fn default() -> Self {
        Self {
            sigma2_beta: 1000.0,
            a: 0.5,
            b: 0.5,
            gibbs: GibbsSettings::default(),
            vb: VbSettings::default(),
        }
    }
}

impl BudisSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2_beta", self.sigma2_beta), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(BudisError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let g = &self.gibbs;
        if g.thin == 0 || g.burn_in >= g.iterations {
            return Err(BudisError::invalid(format!(
                "Gibbs settings need thin ≥ 1 and burn_in < iterations (got {} / {} / {})",
                g.iterations, g.burn_in, g.thin
            )));
        }
        if self.vb.max_iterations == 0 || !(self.vb.tolerance > 0.0) {
            return Err(BudisError::invalid("VB needs max_iterations ≥ 1 and tolerance > 0"));
        }
        Ok(())
    }
}

/// Which fitter to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fitter {
    #[default]
    Vb,
    Gibbs,
}

impl std::str::FromStr for Fitter {
    type Err = BudisError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vb" => Ok(Fitter::Vb),
            "gibbs" => Ok(Fitter::Gibbs),
            _ => Err(BudisError::invalid(format!("unknown fitter `{s}` (vb | gibbs)"))),
        }
    }
}

impl std::fmt::Display for Fitter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Fitter::Vb => "vb",
            Fitter::Gibbs => "gibbs",
        })
    }
}

/// Runs the chosen fitter. The Gibbs sampler draws from a stream seeded with
/// `spec.gibbs.seed`.
pub fn fit(data: &DesignData, spec: &BudisSpec, fitter: Fitter) -> Result<FitResult> {
    match fitter {
        Fitter::Vb => vb_fit(data, spec),
        Fitter::Gibbs => {
            let mut rng = crate::rng::stream(spec.gibbs.seed);
            gibbs_fit(data, spec, &mut rng)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let spec = BudisSpec::default();
        spec.validate().unwrap();
        assert_eq!((spec.a, spec.b, spec.sigma2_beta), (0.5, 0.5, 1000.0));
    }

    #[test]
    fn invalid_hyperparameters() {
        let mut spec = BudisSpec {
            a: 0.0,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        spec.a = 1.0;
        spec.gibbs.burn_in = spec.gibbs.iterations;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fitter_names() {
        assert_eq!("gibbs".parse::<Fitter>().unwrap(), Fitter::Gibbs);
        assert_eq!(Fitter::Vb.to_string(), "vb");
        assert!("nuts".parse::<Fitter>().is_err());
    }
}

//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use budis::model::{BudisSpec, Fitter};
use budis::sim::{Estimator, SimConfig, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Largest seed a TOML integer can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// How the `response` column is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    /// Binary when every response is `0` or `1`, categorical otherwise.
    #[default]
    Auto,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSettings {
    /// Vocabulary size `K`.
    pub vocabulary: usize,
    /// Number of adjacency eigenvectors `q`, capped at the number of areas.
    pub eigenvectors: usize,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            vocabulary: 1000,
            eigenvectors: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElmSettings {
    pub hidden: usize,
    pub sparsity: f64,
    /// Derived from the run seed; any value given here is replaced.
    pub seed: u64,
}

impl Default for ElmSettings {
    fn default() -> Self {
        Self {
            hidden: 240,
            sparsity: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSettings {
    pub draws: usize,
    /// Predict sampled units from the model instead of keeping their
    /// observed responses.
    pub predict_sampled: bool,
    /// Derived from the run seed; any value given here is replaced.
    pub seed: u64,
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self {
            draws: 500,
            predict_sampled: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSettings {
    pub replicates: usize,
    pub expected_n: f64,
    pub shift: f64,
    pub estimators: Vec<Estimator>,
    pub draws: usize,
    /// Population CSV; when absent a synthetic population is generated.
    pub population: Option<PathBuf>,
    /// Also write the population and its adjacency to the output.
    pub write_population: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            replicates: sim.replicates,
            expected_n: sim.expected_n,
            shift: sim.shift,
            estimators: sim.estimators,
            draws: sim.draws,
            population: None,
            write_population: true,
        }
    }
}

/// Everything a run needs besides the subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub fitter: Fitter,
    pub response: ResponseKind,
    /// Sample units: `id, area, weight, response, text, demographics…`.
    pub units: Option<PathBuf>,
    /// Area adjacency: header of area labels, square 0/1 body.
    pub adjacency: Option<PathBuf>,
    /// Population frame: `id, area, cell, demographics…[, truth]`.
    pub population: Option<PathBuf>,
    /// Output directory of an earlier `fit`.
    pub fit_dir: Option<PathBuf>,
    pub features: FeatureSettings,
    pub elm: ElmSettings,
    pub model: BudisSpec,
    pub predict: PredictSettings,
    pub simulation: SimulationSettings,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            fitter: Fitter::Vb,
            response: ResponseKind::Auto,
            units: None,
            adjacency: None,
            population: None,
            fit_dir: None,
            features: FeatureSettings::default(),
            elm: ElmSettings::default(),
            model: BudisSpec::default(),
            predict: PredictSettings::default(),
            simulation: SimulationSettings::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths are taken relative to its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.units,
            &mut cfg.adjacency,
            &mut cfg.population,
            &mut cfg.fit_dir,
            &mut cfg.simulation.population,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Replaces every derived seed by one computed from `seed`. Derived
    /// seeds keep 63 bits so the manifest stays valid TOML.
    pub fn derive_seeds(&mut self) {
        let derive = |k| budis::rng::derive_seed(self.seed, &[k]) & MAX_SEED;
        self.elm.seed = derive(1);
        self.model.gibbs.seed = derive(2);
        self.predict.seed = derive(3);
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            replicates: self.simulation.replicates,
            expected_n: self.simulation.expected_n,
            shift: self.simulation.shift,
            estimators: self.simulation.estimators.clone(),
            vocabulary: self.features.vocabulary,
            eigenvectors: self.features.eigenvectors,
            hidden: self.elm.hidden,
            sparsity: self.elm.sparsity,
            draws: self.simulation.draws,
            fitter: self.fitter,
            seed: self.seed,
            model: self.model,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seed > MAX_SEED || self.synthetic.seed > MAX_SEED {
            return Err(CliError::Validation(format!("seeds must not exceed {MAX_SEED}")));
        }
        self.model.validate()?;
        if self.features.vocabulary == 0 || self.features.eigenvectors == 0 {
            return Err(CliError::Validation(
                "features.vocabulary and features.eigenvectors must be positive".into(),
            ));
        }
        if self.elm.hidden == 0 || !(0.0..1.0).contains(&self.elm.sparsity) {
            return Err(CliError::Validation(
                "elm.hidden must be positive and elm.sparsity in [0,1)".into(),
            ));
        }
        if self.predict.draws == 0 {
            return Err(CliError::Validation("predict.draws must be positive".into()));
        }
        Ok(())
    }

    /// Errors unless `path` is set and names a readable file.
    pub fn require_file<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        let p = path
            .as_deref()
            .ok_or_else(|| CliError::Validation(format!("`{key}` must be set in the config")))?;
        std::fs::File::open(p).map_err(|e| CliError::Validation(format!("{key} = {}: {e}", p.display())))?;
        Ok(p)
    }
}

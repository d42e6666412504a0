//! Bayesian unit-level small area estimation under informative sampling.
//!
//! The pipeline turns free-text survey answers into word-presence vectors,
//! passes them through a frozen random hidden layer, and fits a survey-weighted
//! pseudo-likelihood logistic model with Pólya-Gamma augmentation (Gibbs or
//! mean-field variational Bayes). Area estimates come from posterior
//! predictive poststratification over a population frame, with the text
//! covariates of nonsampled units imputed inside imputation cells.
//!
//! Module map:
//!
//! - [`pg`]: Pólya-Gamma sampling and moments
//! - [`elm`]: the frozen random hidden layer
//! - [`features`]: vocabulary, word indicators, spatial eigenvector basis
//! - [`model`]: the weighted Binomial model and its two fitters
//! - [`multinomial`]: stick-breaking reduction of categorical responses
//! - [`population`]: covariate imputation and area-level prediction
//! - [`survey`]: Poisson PPS sampling and direct estimators
//! - [`sim`]: the repeated-sampling simulation harness

pub mod elm;
pub mod error;
pub mod features;
pub mod model;
pub mod multinomial;
pub mod pg;
pub mod population;
pub mod rng;
pub mod sim;
pub mod survey;

pub use error::{BudisError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/polya_gamma.md")]
    mod polya_gamma {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/elm.md")]
    mod elm {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/categorical.md")]
    mod categorical {}
    #[doc = include_str!("../../../book/src/population.md")]
    mod population {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

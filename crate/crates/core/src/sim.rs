//! Repeated informative sampling from a fixed population.
//!
//! Each replicate draws a Poisson PPS sample with size `base_weight + shift·y`,
//! fits the full model (text through the hidden layer) and the reduced model
//! without text (`h = 0`, called PLLR here), and records four area estimates:
//! the two posterior predictive means and the weighted and unweighted direct
//! estimators.
//!
//! Scoring conventions: MSE is the mean of `(estimate − truth)²` over all
//! (area, replicate) pairs that have an estimate; Bias² is the mean over areas
//! of `(mean over replicates of the estimate − truth)²`. Missing direct
//! estimates (areas with no sampled unit) are dropped pairwise and counted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::elm::{sigmoid, ElmLayer};
use crate::error::{BudisError, Result};
use crate::features::{complex_covariates, linear_covariates, SpatialBasis, Vocabulary};
use crate::model::{self, BudisSpec, DesignData, Fitter};
use crate::population::{posterior_predict_areas, Donor, PopUnit, PopulationFrame, PredictOptions};
use crate::rng::{derive_seed, stream};
use crate::survey::{direct_estimate, informative_size, poisson_pps_sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Budis,
    Pllr,
    Direct,
    UwDirect,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::Budis,
        Estimator::Pllr,
        Estimator::Direct,
        Estimator::UwDirect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Budis => "budis",
            Estimator::Pllr => "pllr",
            Estimator::Direct => "direct",
            Estimator::UwDirect => "uw_direct",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Budis => "BUDIS",
            Estimator::Pllr => "PLLR",
            Estimator::Direct => "Direct",
            Estimator::UwDirect => "UW Direct",
        }
    }
}

/// One population unit of a simulation population.
#[derive(Debug, Clone, PartialEq)]
pub struct SimUnit {
    pub id: u64,
    /// Index into [`SimPopulation::areas`].
    pub area: usize,
    pub demographics: Vec<bool>,
    pub base_weight: f64,
    pub text: String,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPopulation {
    pub areas: Vec<String>,
    pub adjacency: DMatrix<f64>,
    pub demographic_names: Vec<String>,
    pub units: Vec<SimUnit>,
    /// Generation parameters, written as `# key=value` header lines.
    pub header: Vec<(String, String)>,
}

impl SimPopulation {
    pub fn validate(&self) -> Result<()> {
        let j = self.areas.len();
        if self.adjacency.nrows() != j || self.adjacency.ncols() != j {
            return Err(BudisError::DimensionMismatch {
                what: "adjacency size",
                expected: j,
                found: self.adjacency.nrows(),
            });
        }
        let mut counts = vec![0usize; j];
        for u in &self.units {
            if u.area >= j {
                return Err(BudisError::invalid(format!("unit {} has area index {}", u.id, u.area)));
            }
            if u.demographics.len() != self.demographic_names.len() {
                return Err(BudisError::DimensionMismatch {
                    what: "demographic indicators",
                    expected: self.demographic_names.len(),
                    found: u.demographics.len(),
                });
            }
            if u.y != 0.0 && u.y != 1.0 {
                return Err(BudisError::invalid(format!(
                    "unit {}: response {} is not 0/1",
                    u.id, u.y
                )));
            }
            if !(u.base_weight > 0.0) {
                return Err(BudisError::invalid(format!(
                    "unit {}: base weight {} is not positive",
                    u.id, u.base_weight
                )));
            }
            counts[u.area] += 1;
        }
        if let Some(a) = counts.iter().position(|&c| c == 0) {
            return Err(BudisError::EmptyArea(self.areas[a].clone()));
        }
        Ok(())
    }

    /// True area proportions of `y`.
    pub fn truth(&self) -> Vec<f64> {
        let mut sums = vec![(0.0, 0usize); self.areas.len()];
        for u in &self.units {
            sums[u.area].0 += u.y;
            sums[u.area].1 += 1;
        }
        sums.into_iter().map(|(s, n)| s / n as f64).collect()
    }

    /// `# key=value` header lines, then columns
    /// `id,area,base_weight,response,text,<demographics…>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.header {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["id", "area", "base_weight", "response", "text"];
        head.extend(self.demographic_names.iter().map(String::as_str));
        w.write_record(&head)?;
        for u in &self.units {
            let mut row = vec![
                u.id.to_string(),
                self.areas[u.area].clone(),
                u.base_weight.to_string(),
                (u.y as u8).to_string(),
                u.text.clone(),
            ];
            row.extend(u.demographics.iter().map(|&d| (d as u8).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv). Area
    /// labels must match `areas` (the adjacency labels).
    pub fn read_csv<R: Read>(input: R, path: &str, areas: Vec<String>, adjacency: DMatrix<f64>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let head = reader.headers()?.clone();
        let expected = ["id", "area", "base_weight", "response", "text"];
        if head.len() < expected.len() || head.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(BudisError::parse(
                path,
                1,
                format!("header must start with {}", expected.join(",")),
            ));
        }
        let demographic_names: Vec<String> = head.iter().skip(5).map(String::from).collect();
        let index: BTreeMap<&str, usize> = areas.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let mut units = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(row + 2);
            let field = |i: usize| rec.get(i).unwrap_or("");
            let id = field(0)
                .parse::<u64>()
                .map_err(|_| BudisError::parse(path, line, format!("bad id `{}`", field(0))))?;
            let area = *index
                .get(field(1))
                .ok_or_else(|| BudisError::parse(path, line, format!("unknown area `{}`", field(1))))?;
            let base_weight = field(2)
                .parse::<f64>()
                .ok()
                .filter(|w| *w > 0.0 && w.is_finite())
                .ok_or_else(|| BudisError::parse(path, line, format!("base weight `{}` is not positive", field(2))))?;
            let y = match field(3) {
                "0" => 0.0,
                "1" => 1.0,
                other => return Err(BudisError::parse(path, line, format!("response `{other}` is not 0/1"))),
            };
            let demographics = (5..head.len())
                .map(|i| match field(i) {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(BudisError::parse(path, line, format!("indicator `{other}` is not 0/1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            units.push(SimUnit {
                id,
                area,
                demographics,
                base_weight,
                text: field(4).to_string(),
                y,
            });
        }
        let pop = Self {
            areas,
            adjacency,
            demographic_names,
            units,
            header: Vec::new(),
        };
        pop.validate()?;
        Ok(pop)
    }
}

/// Rook adjacency of a `rows × cols` grid, areas numbered row-major.
pub fn grid_adjacency(rows: usize, cols: usize) -> DMatrix<f64> {
    let m = rows * cols;
    let mut a = DMatrix::zeros(m, m);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                a[(i, i + 1)] = 1.0;
                a[(i + 1, i)] = 1.0;
            }
            if r + 1 < rows {
                a[(i, i + cols)] = 1.0;
                a[(i + cols, i)] = 1.0;
            }
        }
    }
    a
}

/// The most nearly square `rows × cols` factorisation of `j`, `rows ≤ cols`.
fn grid_shape(j: usize) -> (usize, usize) {
    let mut rows = (j as f64).sqrt() as usize;
    while rows > 1 && j % rows != 0 {
        rows -= 1;
    }
    (rows.max(1), j / rows.max(1))
}

/// Parameters of [`synthetic_population`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub units: usize,
    pub areas: usize,
    pub vocabulary: usize,
    /// Multiplier on the text effect in the outcome logit.
    pub signal: f64,
    pub topics: usize,
    /// Presence probability of a topic's core words in its own texts.
    pub core_presence: f64,
    /// Presence probability of every other word.
    pub background_presence: f64,
    /// Symmetric Dirichlet concentration of the per-area topic mix.
    pub mix_concentration: f64,
    /// Standard deviation of the smooth area intercepts.
    pub intercept_sd: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            units: 6000,
            areas: 48,
            vocabulary: 200,
            signal: 3.0,
            topics: 8,
            core_presence: 0.4,
            background_presence: 0.01,
            mix_concentration: 0.05,
            intercept_sd: 0.5,
        }
    }
}

/// [`synthetic_population`] with default text parameters.
pub fn make_synthetic_population(seed: u64, m: usize, j: usize, vocab: usize, signal: f64) -> Result<SimPopulation> {
    synthetic_population(&SyntheticConfig {
        seed,
        units: m,
        areas: j,
        vocabulary: vocab,
        signal,
        ..Default::default()
    })
}

/// Synthetic population with areas on a grid.
///
/// Areas get spatially smooth logit intercepts built from the leading
/// adjacency eigenvectors. Each unit has two demographic indicators, a
/// log-normal base weight with mean 1, and a text drawn from one topic,
/// chosen from an area-specific topic mix that is not spatially smooth. Each
/// topic owns a block of core words; two core-word pairs per topic shift the
/// outcome logit by `signal` times a topic-specific effect when both words of
/// the pair appear. With `signal = 0` the outcome depends only on area and
/// demographics.
pub fn synthetic_population(cfg: &SyntheticConfig) -> Result<SimPopulation> {
    let (m, j, vocab, signal, topics) = (cfg.units, cfg.areas, cfg.vocabulary, cfg.signal, cfg.topics);
    if j == 0 || m < j {
        return Err(BudisError::invalid(format!(
            "need units ≥ areas ≥ 1, got {m} units and {j} areas"
        )));
    }
    if topics == 0 {
        return Err(BudisError::invalid("need at least one topic"));
    }
    let core = vocab / (2 * topics);
    if core < 4 {
        return Err(BudisError::invalid(format!(
            "vocabulary size must be at least {}",
            8 * topics
        )));
    }
    if !signal.is_finite() || !(cfg.mix_concentration > 0.0) || !(cfg.intercept_sd >= 0.0) {
        return Err(BudisError::invalid(
            "signal, mix concentration or intercept sd out of range",
        ));
    }
    for p in [cfg.core_presence, cfg.background_presence] {
        if !(0.0..=1.0).contains(&p) {
            return Err(BudisError::invalid(format!("presence probability {p} outside [0,1]")));
        }
    }
    let mut rng = stream(cfg.seed);
    let (rows, cols) = grid_shape(j);
    let adjacency = grid_adjacency(rows, cols);
    let width = j.to_string().len().max(2);
    let areas: Vec<String> = (1..=j).map(|k| format!("A{k:0width$}")).collect();

    let basis = SpatialBasis::from_adjacency(areas.clone(), &adjacency, j.min(4))?;
    let mut smooth = vec![0.0; j];
    for k in 0..basis.dim() {
        let c: f64 = StandardNormal.sample(&mut rng);
        for (a, s) in smooth.iter_mut().enumerate() {
            *s += c * basis.vectors()[(a, k)];
        }
    }
    let mean = smooth.iter().sum::<f64>() / j as f64;
    let sd = (smooth.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / j as f64).sqrt();
    let intercept: Vec<f64> = smooth
        .iter()
        .map(|s| {
            if sd > 0.0 {
                cfg.intercept_sd * (s - mean) / sd
            } else {
                0.0
            }
        })
        .collect();

    let hispanic_rate: Vec<f64> = (0..j)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigmoid(-1.7 + 0.8 * z)
        })
        .collect();
    let mix_draw = Gamma::new(cfg.mix_concentration, 1.0).expect("valid gamma");
    let topic_mix: Vec<Vec<f64>> = (0..j)
        .map(|_| {
            let g: Vec<f64> = (0..topics)
                .map(|_| f64::max(mix_draw.sample(&mut rng), 1e-300))
                .collect();
            let total: f64 = g.iter().sum();
            g.into_iter().map(|v| v / total).collect()
        })
        .collect();
    let topic_effect: Vec<f64> = (0..topics)
        .map(|t| {
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        })
        .collect();
    let area_share = LogNormal::new(0.0, 0.4).expect("valid log-normal");
    let share: Vec<f64> = (0..j).map(|_| area_share.sample(&mut rng)).collect();
    let share_total: f64 = share.iter().sum();
    let base = LogNormal::new(-0.125, 0.5).expect("valid log-normal");

    let mut units = Vec::with_capacity(m);
    for i in 0..m {
        let area = if i < j {
            i
        } else {
            pick(&share, share_total, rng.random::<f64>())
        };
        let hispanic = rng.random::<f64>() < hispanic_rate[area];
        let female = rng.random::<f64>() < 0.52;
        let topic = pick(&topic_mix[area], 1.0, rng.random::<f64>());
        let present: Vec<bool> = (0..vocab)
            .map(|w| {
                let p = if w / core == topic && w < topics * core {
                    cfg.core_presence
                } else {
                    cfg.background_presence
                };
                rng.random::<f64>() < p
            })
            .collect();
        let mut text_effect = 0.0;
        for (t, effect) in topic_effect.iter().enumerate() {
            let w0 = t * core;
            let pairs = (present[w0] && present[w0 + 1]) as u8 + (present[w0 + 2] && present[w0 + 3]) as u8;
            text_effect += effect * pairs as f64;
        }
        let logit = intercept[area] + 0.5 * hispanic as u8 as f64 - 0.3 * female as u8 as f64 + signal * text_effect;
        let y = (rng.random::<f64>() < sigmoid(logit)) as u8 as f64;
        let text = present
            .iter()
            .enumerate()
            .filter(|(_, p)| **p)
            .map(|(w, _)| format!("w{w:04}"))
            .collect::<Vec<_>>()
            .join(" ");
        units.push(SimUnit {
            id: i as u64 + 1,
            area,
            demographics: vec![hispanic, female],
            base_weight: base.sample(&mut rng),
            text,
            y,
        });
    }
    let header = vec![
        ("generator".to_string(), "synthetic".to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("units".to_string(), m.to_string()),
        ("areas".to_string(), j.to_string()),
        ("grid".to_string(), format!("{rows}x{cols}")),
        ("vocabulary".to_string(), vocab.to_string()),
        ("signal".to_string(), signal.to_string()),
        ("topics".to_string(), topics.to_string()),
        ("core_words_per_topic".to_string(), core.to_string()),
        ("core_presence".to_string(), cfg.core_presence.to_string()),
        ("background_presence".to_string(), cfg.background_presence.to_string()),
        ("mix_concentration".to_string(), cfg.mix_concentration.to_string()),
        ("intercept_sd".to_string(), cfg.intercept_sd.to_string()),
        ("hispanic_effect".to_string(), "0.5".to_string()),
        ("female_effect".to_string(), "-0.3".to_string()),
        ("base_weight".to_string(), "lognormal(-0.125,0.5)".to_string()),
    ];
    let pop = SimPopulation {
        areas,
        adjacency,
        demographic_names: vec!["hispanic".into(), "female".into()],
        units,
        header,
    };
    pop.validate()?;
    Ok(pop)
}

/// Index `k` with `Σ_{i<k} w_i ≤ u·total < Σ_{i≤k} w_i`.
fn pick(weights: &[f64], total: f64, u: f64) -> usize {
    let target = u * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Simulation settings. Defaults follow the reference protocol: 50
/// replicates, expected sample size 1000, shift 0.7, 1000 words, 25
/// eigenvectors, 240 hidden nodes with 10% sparsity, VB fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub replicates: usize,
    pub expected_n: f64,
    pub shift: f64,
    pub estimators: Vec<Estimator>,
    pub vocabulary: usize,
    pub eigenvectors: usize,
    pub hidden: usize,
    pub sparsity: f64,
    pub draws: usize,
    pub fitter: Fitter,
    pub seed: u64,
    pub model: BudisSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replicates: 50,
            expected_n: 1000.0,
            shift: 0.7,
            estimators: Estimator::ALL.to_vec(),
            vocabulary: 1000,
            eigenvectors: 25,
            hidden: 240,
            sparsity: 0.10,
            draws: 200,
            fitter: Fitter::Vb,
            seed: 1,
            model: BudisSpec::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.draws == 0 || self.estimators.is_empty() {
            return Err(BudisError::invalid(
                "replicates, draws and the estimator set must be nonempty",
            ));
        }
        if self.vocabulary == 0 || self.eigenvectors == 0 || self.hidden == 0 {
            return Err(BudisError::invalid(
                "vocabulary, eigenvectors and hidden must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(BudisError::invalid(format!(
                "sparsity must be in [0,1), got {}",
                self.sparsity
            )));
        }
        if !(self.expected_n > 0.0) || !self.shift.is_finite() {
            return Err(BudisError::invalid("expected_n must be positive and shift finite"));
        }
        self.model.validate()
    }

    /// Seed of replicate `r` on attempt `attempt` (0 or 1).
    pub fn replicate_seed(&self, r: usize, attempt: u64) -> u64 {
        let s = derive_seed(self.seed, &[r as u64]);
        if attempt == 0 {
            s
        } else {
            derive_seed(s, &[attempt])
        }
    }
}

/// Per-area estimates from one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub attempts: u32,
    pub sample_size: usize,
    /// Aligned with the population's areas.
    pub estimates: BTreeMap<Estimator, Vec<Option<f64>>>,
}

/// Population-level pieces shared by every replicate.
pub struct SimContext<'a> {
    pub population: &'a SimPopulation,
    pub config: &'a SimConfig,
    basis: SpatialBasis,
    x: Vec<Vec<f64>>,
}

impl<'a> SimContext<'a> {
    pub fn new(population: &'a SimPopulation, config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        population.validate()?;
        let q = config.eigenvectors.min(population.areas.len());
        let basis = SpatialBasis::from_adjacency(population.areas.clone(), &population.adjacency, q)?;
        let x = population
            .units
            .iter()
            .map(|u| linear_covariates(&u.demographics, &basis, &population.areas[u.area]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            population,
            config,
            basis,
            x,
        })
    }

    pub fn basis(&self) -> &SpatialBasis {
        &self.basis
    }

    /// One attempt of replicate `index` using `seed`.
    pub fn replicate_once(&self, index: usize, seed: u64) -> Result<ReplicateResult> {
        let pop = self.population;
        let cfg = self.config;
        let sizes = pop
            .units
            .iter()
            .map(|u| informative_size(u.base_weight, u.y, cfg.shift))
            .collect::<Result<Vec<_>>>()?;
        let draw = poisson_pps_sample(&sizes, cfg.expected_n, &mut stream(derive_seed(seed, &[0])))?;
        let j = pop.areas.len();
        let mut estimates = BTreeMap::new();

        let mut by_area: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); j];
        for (&i, &w) in draw.sampled.iter().zip(&draw.weights) {
            let u = &pop.units[i];
            by_area[u.area].0.push(u.y);
            by_area[u.area].1.push(w);
        }
        for (est, weighted) in [(Estimator::Direct, true), (Estimator::UwDirect, false)] {
            if cfg.estimators.contains(&est) {
                let v = by_area
                    .iter()
                    .map(|(y, w)| direct_estimate(y, w, weighted))
                    .collect::<Result<Vec<_>>>()?;
                estimates.insert(est, v);
            }
        }

        let wants_budis = cfg.estimators.contains(&Estimator::Budis);
        let wants_pllr = cfg.estimators.contains(&Estimator::Pllr);
        if wants_budis || wants_pllr {
            let texts: Vec<&str> = draw.sampled.iter().map(|&i| pop.units[i].text.as_str()).collect();
            let vocab = Vocabulary::build(&texts, cfg.vocabulary)?;
            let psi: Vec<Vec<f64>> = texts.iter().map(|t| complex_covariates(&vocab, t)).collect();
            let n = draw.len();
            let p = self.x[0].len();
            let x_s = DMatrix::from_fn(n, p, |r, c| self.x[draw.sampled[r]][c]);
            let y_s: Vec<f64> = draw.sampled.iter().map(|&i| pop.units[i].y).collect();

            let mut sample_link = vec![None; pop.units.len()];
            for (k, &i) in draw.sampled.iter().enumerate() {
                sample_link[i] = Some(k);
            }
            let units: Vec<PopUnit> = pop
                .units
                .iter()
                .zip(&self.x)
                .zip(sample_link)
                .map(|((u, x), sample)| PopUnit {
                    id: u.id,
                    area: pop.areas[u.area].clone(),
                    cell: pop.areas[u.area].clone(),
                    x: x.clone(),
                    sample,
                    truth: Some(u.y),
                })
                .collect();
            let donors: Vec<Donor> = (0..n)
                .map(|k| Donor {
                    psi: psi[k].clone(),
                    weight: draw.weights[k],
                    response: y_s[k],
                })
                .collect();
            let frame = PopulationFrame::new(units, donors)?;
            let mut spec = cfg.model;
            spec.gibbs.seed = derive_seed(seed, &[2]);
            let opts = PredictOptions {
                draws: cfg.draws,
                seed: derive_seed(seed, &[3]),
                predict_sampled: false,
            };
            let area_means = |est: crate::population::AreaEstimates| -> Vec<Option<f64>> {
                pop.areas.iter().map(|a| est.get(a).map(|e| e.mean)).collect()
            };

            if wants_budis {
                let layer = ElmLayer::new(cfg.hidden, 1 + vocab.len(), cfg.sparsity, derive_seed(seed, &[1]))?;
                let g_s = layer.transform_rows(&psi)?;
                let data = DesignData::bernoulli(x_s.clone(), g_s, y_s.clone(), &draw.weights)?;
                let fit = model::fit(&data, &spec, cfg.fitter)?;
                let est = posterior_predict_areas(&frame, &fit, Some(&layer), &opts)?;
                estimates.insert(Estimator::Budis, area_means(est));
            }
            if wants_pllr {
                let data = DesignData::bernoulli(x_s, DMatrix::zeros(n, 0), y_s, &draw.weights)?;
                let fit = model::fit(&data, &spec, cfg.fitter)?;
                let est = posterior_predict_areas(&frame, &fit, None, &opts)?;
                estimates.insert(Estimator::Pllr, area_means(est));
            }
        }
        Ok(ReplicateResult {
            index,
            seed,
            attempts: 1,
            sample_size: draw.len(),
            estimates,
        })
    }

    /// Replicate `index`, retried once with a perturbed seed on failure.
    pub fn replicate(&self, index: usize) -> Result<ReplicateResult> {
        let start = Instant::now();
        let first = self.config.replicate_seed(index, 0);
        let out = match self.replicate_once(index, first) {
            Ok(r) => Ok(r),
            Err(e) => {
                log::warn!("replicate {index} failed ({e}); retrying with a perturbed seed");
                self.replicate_once(index, self.config.replicate_seed(index, 1))
                    .map(|mut r| {
                        r.attempts = 2;
                        r
                    })
            }
        };
        match &out {
            Ok(r) => log::info!(
                "replicate {index}: n={} attempts={} in {:.2}s",
                r.sample_size,
                r.attempts,
                start.elapsed().as_secs_f64()
            ),
            Err(e) => log::error!("replicate {index} failed twice: {e}"),
        }
        out
    }
}

/// Runs one replicate of the protocol.
pub fn run_replicate(population: &SimPopulation, config: &SimConfig, index: usize) -> Result<ReplicateResult> {
    SimContext::new(population, config)?.replicate(index)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorScore {
    pub estimator: Estimator,
    pub mse: f64,
    pub bias2: f64,
    /// (area, replicate) pairs with an estimate.
    pub pairs: usize,
    /// (area, replicate) pairs without one.
    pub missing: usize,
}

/// Scores every estimator present in the first replicate against `truth`.
pub fn score(replicates: &[ReplicateResult], truth: &[f64]) -> Result<Vec<EstimatorScore>> {
    let first = replicates.first().ok_or(BudisError::AllReplicatesFailed)?;
    first
        .estimates
        .keys()
        .map(|&est| {
            let mut sq = 0.0;
            let mut pairs = 0usize;
            let mut missing = 0usize;
            let mut area_sum = vec![(0.0, 0usize); truth.len()];
            for rep in replicates {
                let values = rep
                    .estimates
                    .get(&est)
                    .ok_or_else(|| BudisError::invalid(format!("replicate {} lacks {}", rep.index, est.name())))?;
                if values.len() != truth.len() {
                    return Err(BudisError::DimensionMismatch {
                        what: "area estimates",
                        expected: truth.len(),
                        found: values.len(),
                    });
                }
                for (a, v) in values.iter().enumerate() {
                    match v {
                        Some(v) => {
                            sq += (v - truth[a]).powi(2);
                            pairs += 1;
                            area_sum[a].0 += v;
                            area_sum[a].1 += 1;
                        }
                        None => missing += 1,
                    }
                }
            }
            let covered: Vec<f64> = area_sum
                .iter()
                .zip(truth)
                .filter(|((_, n), _)| *n > 0)
                .map(|((s, n), t)| (s / *n as f64 - t).powi(2))
                .collect();
            Ok(EstimatorScore {
                estimator: est,
                mse: if pairs > 0 { sq / pairs as f64 } else { f64::NAN },
                bias2: if covered.is_empty() {
                    f64::NAN
                } else {
                    covered.iter().sum::<f64>() / covered.len() as f64
                },
                pairs,
                missing,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub areas: Vec<String>,
    pub truth: Vec<f64>,
    pub scores: Vec<EstimatorScore>,
    pub replicates: Vec<ReplicateResult>,
    pub failed: Vec<usize>,
}

/// Runs all replicates in parallel and scores them.
pub fn run_simulation(population: &SimPopulation, config: &SimConfig) -> Result<SimReport> {
    let ctx = SimContext::new(population, config)?;
    let results: Vec<Result<ReplicateResult>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| ctx.replicate(r))
        .collect();
    let mut replicates = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rep) => replicates.push(rep),
            Err(_) => failed.push(r),
        }
    }
    let truth = population.truth();
    let scores = score(&replicates, &truth)?;
    Ok(SimReport {
        areas: population.areas.clone(),
        truth,
        scores,
        replicates,
        failed,
    })
}

/// Paired t-test on per-replicate MSE differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

impl SimReport {
    pub fn score_of(&self, est: Estimator) -> Option<&EstimatorScore> {
        self.scores.iter().find(|s| s.estimator == est)
    }

    /// MSE of `est` over areas within each replicate (missing areas skipped).
    pub fn replicate_mse(&self, est: Estimator) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|rep| {
                let v = rep.estimates.get(&est)?;
                let (s, n) = v
                    .iter()
                    .zip(&self.truth)
                    .filter_map(|(e, t)| e.map(|e| (e - t).powi(2)))
                    .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
                (n > 0).then(|| s / n as f64)
            })
            .collect()
    }

    /// Two-sided paired t-test of `MSE(a) − MSE(b)` across replicates.
    pub fn paired_mse_test(&self, a: Estimator, b: Estimator) -> Result<PairedTest> {
        let da = self.replicate_mse(a);
        let db = self.replicate_mse(b);
        if da.len() != db.len() || da.len() < 2 {
            return Err(BudisError::invalid(
                "paired test needs at least two replicates with both estimators",
            ));
        }
        let d: Vec<f64> = da.iter().zip(&db).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let (t, p_value) = if se > 0.0 {
            let t = mean / se;
            let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution");
            (t, 2.0 * (1.0 - dist.cdf(t.abs())))
        } else if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        Ok(PairedTest {
            mean_difference: mean,
            t,
            p_value,
            n: d.len(),
        })
    }

    /// Columns `estimator,mse,bias2,pairs,missing`, preceded by `#` lines
    /// stating the aggregation convention.
    pub fn write_scores_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# mse: mean over (area, replicate) pairs of (estimate - truth)^2")?;
        writeln!(out, "# bias2: mean over areas of (replicate-mean estimate - truth)^2")?;
        writeln!(
            out,
            "# replicates={} failed={}",
            self.replicates.len(),
            self.failed.len()
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["estimator", "mse", "bias2", "pairs", "missing"])?;
        for s in &self.scores {
            w.write_record([
                s.estimator.name().to_string(),
                s.mse.to_string(),
                s.bias2.to_string(),
                s.pairs.to_string(),
                s.missing.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Raw estimates, one row per (replicate, area).
    pub fn write_estimates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ests: Vec<Estimator> = self.scores.iter().map(|s| s.estimator).collect();
        let mut head = vec!["replicate", "seed", "area", "truth"];
        head.extend(ests.iter().map(|e| e.name()));
        w.write_record(&head)?;
        for rep in &self.replicates {
            for (a, area) in self.areas.iter().enumerate() {
                let mut row = vec![
                    rep.index.to_string(),
                    rep.seed.to_string(),
                    area.clone(),
                    self.truth[a].to_string(),
                ];
                row.extend(ests.iter().map(|e| match rep.estimates[e][a] {
                    Some(v) => v.to_string(),
                    None => String::new(),
                }));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table of estimator, MSE and Bias².
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>12} {:>12} {:>8}", "Estimator", "MSE", "Bias^2", "missing");
        for e in &self.scores {
            let _ = writeln!(
                s,
                "{:<10} {:>12.3e} {:>12.3e} {:>8}",
                e.estimator.label(),
                e.mse,
                e.bias2,
                e.missing
            );
        }
        let _ = writeln!(
            s,
            "replicates: {} ok, {} failed; MSE over area x replicate pairs, Bias^2 over areas",
            self.replicates.len(),
            self.failed.len()
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(index: usize, values: Vec<Option<f64>>) -> ReplicateResult {
        ReplicateResult {
            index,
            seed: 0,
            attempts: 1,
            sample_size: 0,
            estimates: [(Estimator::Direct, values)].into_iter().collect(),
        }
    }

    #[test]
    fn perfect_and_shifted_estimators() {
        let truth = [0.2, 0.7];
        let s = score(&[rep(0, vec![Some(0.2), Some(0.7)])], &truth).unwrap();
        assert_eq!((s[0].mse, s[0].bias2), (0.0, 0.0));
        let s = score(
            &[rep(0, vec![Some(0.3), Some(0.8)]), rep(1, vec![Some(0.3), Some(0.8)])],
            &truth,
        )
        .unwrap();
        assert!((s[0].mse - 0.01).abs() < 1e-15 && (s[0].bias2 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn missing_pairs_are_counted() {
        let s = score(
            &[rep(0, vec![None, Some(0.5)]), rep(1, vec![Some(0.0), Some(0.7)])],
            &[0.0, 0.5],
        )
        .unwrap();
        assert_eq!((s[0].pairs, s[0].missing), (3, 1));
        assert!((s[0].mse - 0.04 / 3.0).abs() < 1e-15);
        assert!((s[0].bias2 - 0.01 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn no_replicates_is_an_error() {
        assert!(matches!(score(&[], &[0.5]), Err(BudisError::AllReplicatesFailed)));
    }

    #[test]
    fn grid_adjacency_degrees() {
        let a = grid_adjacency(6, 8);
        let degrees: Vec<f64> = (0..48).map(|i| a.row(i).sum()).collect();
        assert_eq!(degrees.iter().filter(|d| **d == 2.0).count(), 4);
        assert_eq!(degrees.iter().sum::<f64>(), 2.0 * (6.0 * 7.0 + 5.0 * 8.0));
        assert_eq!(grid_shape(48), (6, 8));
        assert_eq!(grid_shape(7), (1, 7));
    }

    #[test]
    fn synthetic_population_is_deterministic() {
        let a = make_synthetic_population(5, 300, 12, 128, 1.0).unwrap();
        let b = make_synthetic_population(5, 300, 12, 128, 1.0).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let back = SimPopulation::read_csv(&ba[..], "pop.csv", a.areas.clone(), a.adjacency.clone()).unwrap();
        assert_eq!(back.units, a.units);
    }

    #[test]
    fn signal_zero_leaves_outcomes_unchanged_by_text() {
        let a = make_synthetic_population(9, 400, 12, 128, 0.0).unwrap();
        let b = make_synthetic_population(9, 400, 12, 128, 0.0).unwrap();
        assert_eq!(a.truth(), b.truth());
        assert!(make_synthetic_population(9, 5, 12, 128, 0.0).is_err());
    }
}

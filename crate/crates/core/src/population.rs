//! Imputation of complex covariates and poststratified area prediction.
//!
//! Complex covariates are known only for sampled units. Each nonsampled unit
//! receives the `ψ` of a sampled unit from its imputation cell, chosen with
//! probability proportional to the inverse survey weight. A fresh imputation
//! is made for every posterior draw.
//!
//! Randomness for unit `u` at draw `d` comes from
//! [`rng::keyed_stream(seed, d, u)`](crate::rng::keyed_stream): first one
//! uniform for the donor choice (nonsampled units only), then one uniform per
//! Bernoulli (or stick) decision. Parameter draws for draw `d` use
//! `keyed_stream(seed, d, u64::MAX − k)` for fit `k`. Results therefore do not
//! depend on the order of population records.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

use crate::elm::{sigmoid, ElmLayer};
use crate::error::{BudisError, Result};
use crate::model::fit::linear_predictor;
use crate::model::FitResult;
use crate::multinomial::StickBreaking;
use crate::rng::keyed_stream;

/// Key of the parameter stream for fit `k` at a given draw.
pub fn parameter_key(k: usize) -> u64 {
    u64::MAX - k as u64
}

/// Inverse-weight categorical sampler over the sampled units of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationCell {
    members: Vec<usize>,
    cumulative: Vec<f64>,
}

impl ImputationCell {
    /// `members[j]` has survey weight `weights[j]`.
    pub fn new(name: &str, members: Vec<usize>, weights: &[f64]) -> Result<Self> {
        if members.is_empty() {
            return Err(BudisError::EmptyCell(name.to_string()));
        }
        if members.len() != weights.len() {
            return Err(BudisError::DimensionMismatch {
                what: "cell weights",
                expected: members.len(),
                found: weights.len(),
            });
        }
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(weights.len());
        for &w in weights {
            if !(w > 0.0) || !w.is_finite() {
                return Err(BudisError::invalid(format!(
                    "cell `{name}`: weight {w} is not positive"
                )));
            }
            acc += 1.0 / w;
            cumulative.push(acc);
        }
        Ok(Self { members, cumulative })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Selection probabilities `(1/w_j) / Σ_k (1/w_k)`.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = *self.cumulative.last().expect("nonempty cell");
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = (c - prev) / total;
                prev = c;
                p
            })
            .collect()
    }

    /// Member chosen by a uniform `u ∈ [0, 1)`: the first `j` with
    /// `u·total < cumulative_j`.
    pub fn select(&self, u: f64) -> usize {
        let total = *self.cumulative.last().expect("nonempty cell");
        let target = u * total;
        let j = self.cumulative.partition_point(|&c| c <= target);
        self.members[j.min(self.members.len() - 1)]
    }
}

/// Draws `m` covariate vectors with replacement from one cell's sampled
/// `(ψ, w)` pairs, with probability proportional to `1/w`.
pub fn impute_cell_draw<R: Rng + ?Sized>(cell: &[(Vec<f64>, f64)], m: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let weights: Vec<f64> = cell.iter().map(|c| c.1).collect();
    let sampler = ImputationCell::new("<cell>", (0..cell.len()).collect(), &weights)?;
    Ok((0..m)
        .map(|_| cell[sampler.select(rng.random::<f64>())].0.clone())
        .collect())
}

/// A sampled unit: its complex covariates, survey weight and observed
/// response (0/1, or the category index for categorical responses).
#[derive(Debug, Clone, PartialEq)]
pub struct Donor {
    pub psi: Vec<f64>,
    pub weight: f64,
    pub response: f64,
}

/// One population unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PopUnit {
    pub id: u64,
    pub area: String,
    pub cell: String,
    pub x: Vec<f64>,
    /// Index into the frame's donors when this unit was sampled.
    pub sample: Option<usize>,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PopulationFrame {
    units: Vec<PopUnit>,
    donors: Vec<Donor>,
    cells: BTreeMap<String, ImputationCell>,
}

impl PopulationFrame {
    /// Every cell that contains a population unit must contain at least one
    /// sampled unit, and every donor must be linked from exactly one unit.
    /// Cell members are kept in donor order, not record order.
    pub fn new(units: Vec<PopUnit>, donors: Vec<Donor>) -> Result<Self> {
        let mut linked = vec![false; donors.len()];
        let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut ids = std::collections::HashSet::with_capacity(units.len());
        let p = units.first().map(|u| u.x.len()).unwrap_or(0);
        for u in &units {
            if !ids.insert(u.id) {
                return Err(BudisError::invalid(format!("duplicate unit id {}", u.id)));
            }
            if u.x.len() != p {
                return Err(BudisError::DimensionMismatch {
                    what: "population linear covariates",
                    expected: p,
                    found: u.x.len(),
                });
            }
            let entry = members.entry(u.cell.clone()).or_default();
            if let Some(s) = u.sample {
                if s >= donors.len() || linked[s] {
                    return Err(BudisError::invalid(format!(
                        "unit {} has an invalid sample link {s}",
                        u.id
                    )));
                }
                linked[s] = true;
                entry.push(s);
            }
        }
        if let Some(s) = linked.iter().position(|l| !l) {
            return Err(BudisError::invalid(format!(
                "sampled unit {s} is not in the population"
            )));
        }
        let mut cells = BTreeMap::new();
        for (name, mut m) in members {
            m.sort_unstable();
            let w: Vec<f64> = m.iter().map(|&s| donors[s].weight).collect();
            cells.insert(name.clone(), ImputationCell::new(&name, m, &w)?);
        }
        Ok(Self { units, donors, cells })
    }

    pub fn units(&self) -> &[PopUnit] {
        &self.units
    }

    pub fn donors(&self) -> &[Donor] {
        &self.donors
    }

    pub fn cell(&self, name: &str) -> Option<&ImputationCell> {
        self.cells.get(name)
    }

    /// Sorted area labels with their population counts.
    pub fn area_counts(&self) -> BTreeMap<String, (usize, usize)> {
        let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for u in &self.units {
            let e = out.entry(u.area.clone()).or_default();
            e.0 += 1;
            e.1 += u.sample.is_some() as usize;
        }
        out
    }

    /// Errors if any of `areas` has no population units.
    pub fn require_areas(&self, areas: &[String]) -> Result<()> {
        let counts = self.area_counts();
        match areas.iter().find(|a| !counts.contains_key(*a)) {
            Some(a) => Err(BudisError::EmptyArea(a.clone())),
            None => Ok(()),
        }
    }

    /// Finite-population proportion of `truth` per area, when every unit has it.
    pub fn true_proportions(&self) -> Option<BTreeMap<String, f64>> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for u in &self.units {
            let e = sums.entry(u.area.clone()).or_default();
            e.0 += u.truth?;
            e.1 += 1;
        }
        Some(sums.into_iter().map(|(a, (s, n))| (a, s / n as f64)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub draws: usize,
    pub seed: u64,
    /// Predict sampled units too instead of using their observed responses.
    pub predict_sampled: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            draws: 500,
            seed: 0,
            predict_sampled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaEstimate {
    pub area: String,
    pub mean: f64,
    pub sd: f64,
    pub lo95: f64,
    pub hi95: f64,
    pub n_pop: usize,
    pub n_sample: usize,
}

/// Posterior summaries per area, sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaEstimates {
    pub areas: Vec<AreaEstimate>,
    /// Per-draw area proportions, `draws[d][a]`.
    pub draws: Vec<Vec<f64>>,
}

impl AreaEstimates {
    fn summarise(counts: &BTreeMap<String, (usize, usize)>, draws: Vec<Vec<f64>>) -> Self {
        let areas = counts
            .iter()
            .enumerate()
            .map(|(a, (name, &(n_pop, n_sample)))| {
                let mut col: Vec<f64> = draws.iter().map(|d| d[a]).collect();
                col.sort_by(f64::total_cmp);
                let n = col.len() as f64;
                let (mean, sd) = if col[0] == col[col.len() - 1] {
                    (col[0], 0.0)
                } else {
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    (mean, var.sqrt())
                };
                AreaEstimate {
                    area: name.clone(),
                    mean,
                    sd,
                    lo95: quantile_sorted(&col, 0.025),
                    hi95: quantile_sorted(&col, 0.975),
                    n_pop,
                    n_sample,
                }
            })
            .collect();
        Self { areas, draws }
    }

    pub fn get(&self, area: &str) -> Option<&AreaEstimate> {
        self.areas.iter().find(|a| a.area == area)
    }

    /// Columns `area,estimate,sd,lo95,hi95,n_pop,n_sample`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["area", "estimate", "sd", "lo95", "hi95", "n_pop", "n_sample"])?;
        for a in &self.areas {
            w.write_record([
                a.area.clone(),
                a.mean.to_string(),
                a.sd.to_string(),
                a.lo95.to_string(),
                a.hi95.to_string(),
                a.n_pop.to_string(),
                a.n_sample.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Hidden features of every donor, `None` when there is no hidden layer.
fn donor_features(frame: &PopulationFrame, layer: Option<&ElmLayer>, h: usize) -> Result<Vec<Vec<f64>>> {
    match layer {
        None if h == 0 => Ok(vec![Vec::new(); frame.donors.len()]),
        None => Err(BudisError::DimensionMismatch {
            what: "hidden layer width",
            expected: h,
            found: 0,
        }),
        Some(layer) => {
            if layer.hidden() != h {
                return Err(BudisError::DimensionMismatch {
                    what: "hidden layer width",
                    expected: h,
                    found: layer.hidden(),
                });
            }
            frame
                .donors
                .iter()
                .map(|d| layer.transform(&d.psi).map(|g| g.iter().copied().collect()))
                .collect()
        }
    }
}

impl PopulationFrame {
    /// Donor for unit `u` at this draw: its own record when sampled and
    /// predicted, otherwise an inverse-weight draw from its cell.
    fn donor_for<R: Rng>(&self, unit: &PopUnit, rng: &mut R) -> usize {
        match unit.sample {
            Some(s) => s,
            None => self.cells[&unit.cell].select(rng.random::<f64>()),
        }
    }

    fn check_fit(&self, fit: &FitResult) -> Result<()> {
        if let Some(u) = self.units.first() {
            fit.check_dims(u.x.len(), fit.h())?;
        }
        Ok(())
    }
}

/// Posterior predictive area proportions of a binary response.
///
/// For each draw: take `(β, η)`, impute `ψ` for nonsampled units, draw
/// `y* ~ Bernoulli(sigmoid(x'β + g'η))`, keep observed `y` for sampled units
/// (unless `predict_sampled`), and average within each area.
pub fn posterior_predict_areas(
    frame: &PopulationFrame,
    fit: &FitResult,
    layer: Option<&ElmLayer>,
    opts: &PredictOptions,
) -> Result<AreaEstimates> {
    if opts.draws == 0 {
        return Err(BudisError::invalid("need at least one posterior draw"));
    }
    frame.check_fit(fit)?;
    let donor_g = donor_features(frame, layer, fit.h())?;
    let counts = frame.area_counts();
    let area_index: BTreeMap<&str, usize> = counts.keys().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let p = fit.p();

    let draws = (0..opts.draws)
        .into_par_iter()
        .map(|d| {
            let theta = fit.theta(d, &mut keyed_stream(opts.seed, d as u64, parameter_key(0)))?;
            let eta = theta.rows(p, fit.h());
            let donor_score: Vec<f64> = donor_g
                .iter()
                .map(|g| g.iter().zip(eta.iter()).map(|(a, b)| a * b).sum())
                .collect();
            let beta = theta.rows(0, p);
            let mut sums = vec![0.0; counts.len()];
            for unit in &frame.units {
                let a = area_index[unit.area.as_str()];
                if let (Some(s), false) = (unit.sample, opts.predict_sampled) {
                    sums[a] += frame.donors[s].response;
                    continue;
                }
                let mut rng = keyed_stream(opts.seed, d as u64, unit.id);
                let donor = frame.donor_for(unit, &mut rng);
                let eta_x: f64 = unit.x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                let prob = sigmoid(eta_x + donor_score[donor]);
                if rng.random::<f64>() < prob {
                    sums[a] += 1.0;
                }
            }
            Ok(counts
                .values()
                .zip(sums)
                .map(|(&(n, _), s)| s / n as f64)
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AreaEstimates::summarise(&counts, draws))
}

/// Categorical counterpart of [`posterior_predict_areas`]: one
/// [`AreaEstimates`] per category. A predicted unit walks the sticks in order,
/// drawing one uniform per conditional until one succeeds.
pub fn posterior_predict_categories(
    frame: &PopulationFrame,
    sticks: &StickBreaking,
    layer: Option<&ElmLayer>,
    opts: &PredictOptions,
) -> Result<Vec<AreaEstimates>> {
    if opts.draws == 0 {
        return Err(BudisError::invalid("need at least one posterior draw"));
    }
    let k = sticks.categories();
    let h = sticks.fits[0].h();
    for fit in &sticks.fits {
        frame.check_fit(fit)?;
    }
    let donor_g = donor_features(frame, layer, h)?;
    let counts = frame.area_counts();
    let area_index: BTreeMap<&str, usize> = counts.keys().enumerate().map(|(i, a)| (a.as_str(), i)).collect();

    let per_draw = (0..opts.draws)
        .into_par_iter()
        .map(|d| {
            let thetas = sticks
                .fits
                .iter()
                .enumerate()
                .map(|(j, fit)| fit.theta(d, &mut keyed_stream(opts.seed, d as u64, parameter_key(j))))
                .collect::<Result<Vec<DVector<f64>>>>()?;
            let mut sums = vec![vec![0.0; counts.len()]; k];
            for unit in &frame.units {
                let a = area_index[unit.area.as_str()];
                if let (Some(s), false) = (unit.sample, opts.predict_sampled) {
                    sums[frame.donors[s].response as usize][a] += 1.0;
                    continue;
                }
                let mut rng = keyed_stream(opts.seed, d as u64, unit.id);
                let donor = frame.donor_for(unit, &mut rng);
                let g = &donor_g[donor];
                let mut category = k - 1;
                for (j, theta) in thetas.iter().enumerate() {
                    let prob = sigmoid(linear_predictor(theta, &unit.x, g));
                    if rng.random::<f64>() < prob {
                        category = j;
                        break;
                    }
                }
                sums[category][a] += 1.0;
            }
            let props: Vec<Vec<f64>> = sums
                .into_iter()
                .map(|row| counts.values().zip(row).map(|(&(n, _), s)| s / n as f64).collect())
                .collect();
            Ok(props)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..k)
        .map(|c| AreaEstimates::summarise(&counts, per_draw.iter().map(|d| d[c].clone()).collect()))
        .collect())
}

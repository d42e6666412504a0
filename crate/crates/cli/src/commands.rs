//! The four subcommands.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use budis::elm::ElmLayer;
use budis::features::{
    complex_covariates, linear_covariate_names, linear_covariates, read_adjacency_csv, write_adjacency_csv,
    SpatialBasis, Vocabulary,
};
use budis::model::{self, DesignData, FitKind, FitResult, Fitter};
use budis::multinomial::StickBreaking;
use budis::population::{
    posterior_predict_areas, posterior_predict_categories, AreaEstimates, Donor, PopUnit, PopulationFrame,
    PredictOptions,
};
use budis::sim::{run_simulation, synthetic_population, Estimator, SimPopulation};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{ResponseKind, RunConfig};
use crate::error::CliError;
use crate::input::{read_population, read_units, row_error, UnitRecord};
use crate::output::{Staging, MANIFEST};

/// What a fit produced, as recorded in its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitInfo {
    pub response: ResponseKind,
    /// Category labels in model order; `["0", "1"]` for binary responses.
    pub categories: Vec<String>,
    pub demographics: Vec<String>,
    pub linear_covariates: Vec<String>,
    pub fit_kind: FitKind,
    pub fit_files: Vec<String>,
    pub sample_size: usize,
    pub vocabulary_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub outputs: Vec<String>,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitInfo>,
}

fn timed<T, E>(stage: &str, f: impl FnOnce() -> Result<T, E>) -> Result<T, E> {
    let start = Instant::now();
    let out = f();
    log::info!("stage={stage} elapsed_s={:.3}", start.elapsed().as_secs_f64());
    out
}

fn finish(mut staging: Staging, command: &str, cfg: &RunConfig, fit: Option<FitInfo>) -> Result<PathBuf, CliError> {
    let manifest = Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        outputs: staging.files().to_vec(),
        config: cfg.clone(),
        fit,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Validation(format!("manifest: {e}")))?;
    staging.write(MANIFEST, |w| Ok(w.write_all(text.as_bytes())?))?;
    let dest = staging.commit()?;
    log::info!("wrote {}", dest.display());
    Ok(dest)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

struct Prepared {
    demographics: Vec<String>,
    units: Vec<UnitRecord>,
    basis: SpatialBasis,
    vocab: Vocabulary,
    layer: ElmLayer,
    x: DMatrix<f64>,
    psi: Vec<Vec<f64>>,
}

/// Features, basis and hidden layer for the sample units.
fn prepare(cfg: &RunConfig, units_path: &Path, adjacency_path: &Path) -> Result<Prepared, CliError> {
    let (areas, adjacency) = read_adjacency_csv(open(adjacency_path)?, &adjacency_path.display().to_string())?;
    let (demographics, units) = timed("read_units", || read_units(units_path))?;
    log::info!(
        "units={} demographics={} areas={}",
        units.len(),
        demographics.len(),
        areas.len()
    );
    let q = cfg.features.eigenvectors.min(areas.len());
    let basis = timed("spatial_basis", || SpatialBasis::from_adjacency(areas, &adjacency, q))?;
    for (i, u) in units.iter().enumerate() {
        if basis.area_index(&u.area).is_none() {
            return Err(row_error(units_path, i + 1, format!("unknown area `{}`", u.area)));
        }
    }
    let texts: Vec<&str> = units.iter().map(|u| u.text.as_str()).collect();
    let vocab = timed("vocabulary", || Vocabulary::build(&texts, cfg.features.vocabulary))?;
    let psi: Vec<Vec<f64>> = texts.iter().map(|t| complex_covariates(&vocab, t)).collect();
    let layer = ElmLayer::new(cfg.elm.hidden, 1 + vocab.len(), cfg.elm.sparsity, cfg.elm.seed)?;
    let rows = units
        .iter()
        .map(|u| linear_covariates(&u.demographics, &basis, &u.area))
        .collect::<Result<Vec<_>, _>>()?;
    let p = rows[0].len();
    let x = DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c]);
    Ok(Prepared {
        demographics,
        units,
        basis,
        vocab,
        layer,
        x,
        psi,
    })
}

fn write_features(staging: &mut Staging, prep: &Prepared) -> Result<(), CliError> {
    staging.write("vocabulary.csv", |w| Ok(prep.vocab.write_csv(w)?))?;
    staging.write("basis.csv", |w| Ok(prep.basis.write_csv(w)?))?;
    staging.write("elm.csv", |w| Ok(prep.layer.write_csv(w)?))
}

/// Resolves the response column to category codes.
fn decode_responses(
    kind: ResponseKind,
    units: &[UnitRecord],
    path: &Path,
) -> Result<(ResponseKind, Vec<String>, Vec<usize>), CliError> {
    let binary = units.iter().all(|u| u.response == "0" || u.response == "1");
    let kind = match kind {
        ResponseKind::Auto if binary => ResponseKind::Binary,
        ResponseKind::Auto => ResponseKind::Categorical,
        k => k,
    };
    if kind == ResponseKind::Binary {
        let codes = units
            .iter()
            .enumerate()
            .map(|(i, u)| match u.response.as_str() {
                "0" => Ok(0),
                "1" => Ok(1),
                r => Err(row_error(path, i + 1, format!("binary response `{r}` is not 0/1"))),
            })
            .collect::<Result<_, _>>()?;
        return Ok((kind, vec!["0".into(), "1".into()], codes));
    }
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let codes = units
        .iter()
        .map(|u| {
            *index.entry(u.response.as_str()).or_insert_with(|| {
                labels.push(u.response.clone());
                labels.len() - 1
            })
        })
        .collect();
    if labels.len() < 2 {
        return Err(CliError::Validation(format!(
            "{}: categorical response needs at least two categories",
            path.display()
        )));
    }
    Ok((kind, labels, codes))
}

fn fit_kind(fitter: Fitter) -> FitKind {
    match fitter {
        Fitter::Vb => FitKind::Vb,
        Fitter::Gibbs => FitKind::Gibbs,
    }
}

fn fit_file_name(kind: FitKind, stick: Option<usize>) -> String {
    let ext = match kind {
        FitKind::Vb => "toml",
        FitKind::Gibbs => "csv",
    };
    match stick {
        None => format!("fit.{ext}"),
        Some(k) => format!("fit_stick{k}.{ext}"),
    }
}

fn write_coefficients<W: Write>(out: W, names: &[String], fits: &[FitResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stick", "name", "mean", "sd"])?;
    for (k, fit) in fits.iter().enumerate() {
        let mean = fit.posterior_mean();
        let var = fit.posterior_variance();
        let hidden = (1..=fit.h()).map(|j| format!("eta_{j}"));
        for (j, name) in names.iter().cloned().chain(hidden).enumerate() {
            w.write_record([
                (k + 1).to_string(),
                name,
                mean[j].to_string(),
                var[j].sqrt().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn features(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let units_path = cfg.require_file(&cfg.units, "units")?;
    let adjacency_path = cfg.require_file(&cfg.adjacency, "adjacency")?;
    let mut staging = Staging::new(out)?;
    let prep = prepare(cfg, units_path, adjacency_path)?;
    let g = timed("elm_transform", || prep.layer.transform_rows(&prep.psi))?;
    write_features(&mut staging, &prep)?;
    let names = linear_covariate_names(&prep.demographics, &prep.basis);
    staging.write("design.csv", |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "area".to_string()];
        header.extend(names.iter().cloned());
        header.extend((1..=g.ncols()).map(|j| format!("g_{j}")));
        w.write_record(&header)?;
        for (i, u) in prep.units.iter().enumerate() {
            let mut rec = vec![u.id.to_string(), u.area.clone()];
            rec.extend(prep.x.row(i).iter().map(|v| v.to_string()));
            rec.extend(g.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    finish(staging, "features", cfg, None)
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let units_path = cfg.require_file(&cfg.units, "units")?;
    let adjacency_path = cfg.require_file(&cfg.adjacency, "adjacency")?;
    let mut staging = Staging::new(out)?;
    let prep = prepare(cfg, units_path, adjacency_path)?;
    let (response, categories, codes) = decode_responses(cfg.response, &prep.units, units_path)?;
    let g = timed("elm_transform", || prep.layer.transform_rows(&prep.psi))?;
    let weights: Vec<f64> = prep.units.iter().map(|u| u.weight).collect();
    let kind = fit_kind(cfg.fitter);
    let stage = format!("fit fitter={}", cfg.fitter);
    let fits = timed(&stage, || -> Result<Vec<FitResult>, CliError> {
        if response == ResponseKind::Binary {
            let z = codes.iter().map(|&c| c as f64).collect();
            let data = DesignData::bernoulli(prep.x.clone(), g.clone(), z, &weights)?;
            Ok(vec![model::fit(&data, &cfg.model, cfg.fitter)?])
        } else {
            let sticks = StickBreaking::fit(
                categories.clone(),
                &prep.x,
                &g,
                &codes,
                &weights,
                &cfg.model,
                cfg.fitter,
            )?;
            Ok(sticks.fits)
        }
    })?;
    for (k, f) in fits.iter().enumerate() {
        if let FitResult::Vb(v) = f {
            log::info!(
                "stick={} vb_iterations={} converged={}",
                k + 1,
                v.iterations(),
                v.converged
            );
        }
    }

    write_features(&mut staging, &prep)?;
    let mut fit_files = Vec::new();
    for (k, f) in fits.iter().enumerate() {
        let name = fit_file_name(kind, (fits.len() > 1).then_some(k + 1));
        staging.write(&name, |w| Ok(f.write(w)?))?;
        fit_files.push(name);
    }
    let names = linear_covariate_names(&prep.demographics, &prep.basis);
    staging.write("coefficients.csv", |w| write_coefficients(w, &names, &fits))?;
    let info = FitInfo {
        response,
        categories,
        demographics: prep.demographics.clone(),
        linear_covariates: names,
        fit_kind: kind,
        fit_files,
        sample_size: prep.units.len(),
        vocabulary_size: prep.vocab.len(),
    };
    finish(staging, "fit", cfg, Some(info))
}

struct FitArtifacts {
    info: FitInfo,
    units: Option<PathBuf>,
    vocab: Vocabulary,
    basis: SpatialBasis,
    layer: ElmLayer,
    fits: Vec<FitResult>,
}

fn load_fit(dir: &Path) -> Result<FitArtifacts, CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let info = manifest
        .fit
        .ok_or_else(|| CliError::Validation(format!("{} is not the output of `fit`", dir.display())))?;
    let file = |name: &str| -> Result<(BufReader<File>, String), CliError> {
        let p = dir.join(name);
        Ok((open(&p)?, p.display().to_string()))
    };
    let (r, p) = file("vocabulary.csv")?;
    let vocab = Vocabulary::read_csv(r, &p)?;
    let (r, p) = file("basis.csv")?;
    let basis = SpatialBasis::read_csv(r, &p)?;
    let (r, p) = file("elm.csv")?;
    let layer = ElmLayer::read_csv(r, &p)?;
    let fits = info
        .fit_files
        .iter()
        .map(|name| {
            let (r, p) = file(name)?;
            Ok(FitResult::read(info.fit_kind, r, &p)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if vocab.len() != info.vocabulary_size || layer.inputs() != 1 + vocab.len() {
        return Err(CliError::Validation(format!(
            "{}: vocabulary has {} words but the hidden layer expects {} inputs",
            dir.display(),
            vocab.len(),
            layer.inputs()
        )));
    }
    for f in &fits {
        f.check_dims(info.linear_covariates.len(), layer.hidden())?;
    }
    Ok(FitArtifacts {
        info,
        units: manifest.config.units,
        vocab,
        basis,
        layer,
        fits,
    })
}

fn write_category_estimates<W: Write>(out: W, labels: &[String], est: &[AreaEstimates]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "category", "area", "estimate", "sd", "lo95", "hi95", "n_pop", "n_sample",
    ])?;
    for (label, e) in labels.iter().zip(est) {
        for a in &e.areas {
            w.write_record([
                label.clone(),
                a.area.clone(),
                a.mean.to_string(),
                a.sd.to_string(),
                a.lo95.to_string(),
                a.hi95.to_string(),
                a.n_pop.to_string(),
                a.n_sample.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn predict(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let fit_dir = cfg
        .fit_dir
        .as_deref()
        .ok_or_else(|| CliError::Validation("`fit_dir` must be set in the config".into()))?;
    let population_path = cfg.require_file(&cfg.population, "population")?;
    let art = timed("load_fit", || load_fit(fit_dir))?;
    let units_source = if cfg.units.is_some() { &cfg.units } else { &art.units };
    let units_path = cfg.require_file(units_source, "units")?;
    let mut staging = Staging::new(out)?;
    let info = &art.info;

    let (demographics, sample) = read_units(units_path)?;
    if demographics != info.demographics {
        return Err(CliError::Validation(format!(
            "{}: demographic columns ({}) differ from the fit ({})",
            units_path.display(),
            demographics.join(", "),
            info.demographics.join(", ")
        )));
    }
    let label_index: HashMap<&str, usize> = info
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut donors = Vec::with_capacity(sample.len());
    for (i, u) in sample.iter().enumerate() {
        let code = label_index.get(u.response.as_str()).ok_or_else(|| {
            row_error(
                units_path,
                i + 1,
                format!("response `{}` was not seen by the fit", u.response),
            )
        })?;
        donors.push(Donor {
            psi: complex_covariates(&art.vocab, &u.text),
            weight: u.weight,
            response: *code as f64,
        });
    }
    let link: HashMap<u64, usize> = sample.iter().enumerate().map(|(k, u)| (u.id, k)).collect();

    let (has_truth, records) = timed("read_population", || {
        read_population(population_path, &info.demographics)
    })?;
    let binary = info.response == ResponseKind::Binary;
    if has_truth && !binary {
        log::warn!("ignoring the truth column for a categorical response");
    }
    let mut units = Vec::with_capacity(records.len());
    let mut linked = 0;
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        if art.basis.area_index(&r.area).is_none() {
            return Err(row_error(population_path, row, format!("unknown area `{}`", r.area)));
        }
        let truth = match (&r.truth, binary) {
            (Some(t), true) => Some(match t.as_str() {
                "0" => 0.0,
                "1" => 1.0,
                _ => return Err(row_error(population_path, row, format!("truth `{t}` is not 0/1"))),
            }),
            _ => None,
        };
        let sampled = link.get(&r.id).copied();
        if let Some(k) = sampled {
            linked += 1;
            if sample[k].area != r.area {
                return Err(row_error(
                    population_path,
                    row,
                    format!(
                        "unit {} is in area `{}` here but `{}` in the sample",
                        r.id, r.area, sample[k].area
                    ),
                ));
            }
        }
        units.push(PopUnit {
            id: r.id,
            area: r.area.clone(),
            cell: r.cell.clone(),
            x: linear_covariates(&r.demographics, &art.basis, &r.area)?,
            sample: sampled,
            truth,
        });
    }
    if linked != sample.len() {
        let missing = sample
            .iter()
            .find(|u| !records.iter().any(|r| r.id == u.id))
            .map(|u| u.id);
        return Err(CliError::Validation(format!(
            "{}: sampled unit {} does not appear in the population",
            units_path.display(),
            missing.unwrap_or_default()
        )));
    }
    log::info!("population={} sampled={}", units.len(), linked);
    let frame = PopulationFrame::new(units, donors)?;
    let opts = PredictOptions {
        draws: cfg.predict.draws,
        seed: cfg.predict.seed,
        predict_sampled: cfg.predict.predict_sampled,
    };
    if binary {
        let est = timed("predict", || {
            posterior_predict_areas(&frame, &art.fits[0], Some(&art.layer), &opts)
        })?;
        staging.write("estimates.csv", |w| Ok(est.write_csv(w)?))?;
        if let Some(truth) = frame.true_proportions() {
            staging.write("truth.csv", |out| {
                let mut w = csv::Writer::from_writer(out);
                w.write_record(["area", "truth"])?;
                for (area, t) in &truth {
                    w.write_record([area.clone(), t.to_string()])?;
                }
                w.flush()?;
                Ok(())
            })?;
        }
    } else {
        let sticks = StickBreaking {
            labels: info.categories.clone(),
            fits: art.fits.clone(),
        };
        let est = timed("predict", || {
            posterior_predict_categories(&frame, &sticks, Some(&art.layer), &opts)
        })?;
        staging.write("estimates.csv", |w| write_category_estimates(w, &info.categories, &est))?;
    }
    finish(staging, "predict", cfg, Some(info.clone()))
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let sim = cfg.sim_config();
    sim.validate()?;
    let population = match &cfg.simulation.population {
        Some(_) => {
            let path = cfg.require_file(&cfg.simulation.population, "simulation.population")?;
            let adjacency_path = cfg.require_file(&cfg.adjacency, "adjacency")?;
            let (areas, adjacency) = read_adjacency_csv(open(adjacency_path)?, &adjacency_path.display().to_string())?;
            SimPopulation::read_csv(open(path)?, &path.display().to_string(), areas, adjacency)?
        }
        None => timed("synthetic_population", || synthetic_population(&cfg.synthetic))?,
    };
    let mut staging = Staging::new(out)?;
    log::info!(
        "population={} areas={} replicates={} fitter={}",
        population.units.len(),
        population.areas.len(),
        sim.replicates,
        sim.fitter
    );
    let report = timed("simulation", || run_simulation(&population, &sim))?;
    staging.write("scores.csv", |w| Ok(report.write_scores_csv(w)?))?;
    staging.write("estimates.csv", |w| Ok(report.write_estimates_csv(w)?))?;
    let mut summary = report.summary_table();
    if sim.estimators.contains(&Estimator::Budis)
        && sim.estimators.contains(&Estimator::Pllr)
        && report.replicates.len() > 1
    {
        let t = report.paired_mse_test(Estimator::Budis, Estimator::Pllr)?;
        summary.push_str(&format!(
            "paired t-test of per-replicate MSE, BUDIS - PLLR: mean {:.3e}, t = {:.3}, p = {:.4}, n = {}\n",
            t.mean_difference, t.t, t.p_value, t.n
        ));
    }
    staging.write("summary.txt", |w| Ok(w.write_all(summary.as_bytes())?))?;
    if cfg.simulation.write_population {
        staging.write("population.csv", |w| Ok(population.write_csv(w)?))?;
        staging.write("adjacency.csv", |w| {
            Ok(write_adjacency_csv(&population.areas, &population.adjacency, w)?)
        })?;
    }
    print!("{summary}");
    finish(staging, "simulate", cfg, None)
}

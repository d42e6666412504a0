use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn budis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_budis"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) {
    let out = budis(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

/// Small hidden layer and short chains so the tests stay quick.
fn fast_config(dir: &Path, units: &str, population: &str) -> String {
    let f = fixtures();
    let body = format!(
        "units = {:?}\nadjacency = {:?}\npopulation = {:?}\n[elm]\nhidden = 16\n[predict]\ndraws = 60\n\
         [model.gibbs]\niterations = 400\nburn_in = 200\n",
        f.join(units),
        f.join("adjacency2.csv"),
        f.join(population),
    );
    write_config(dir, "run.toml", &body)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn minimal_fixture_fits_and_manifest_lists_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let cfg = fixtures().join("run.toml");
    run_ok(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let c = &manifest["config"];
    assert_eq!(c["features"]["vocabulary"].as_integer(), Some(1000));
    assert_eq!(c["features"]["eigenvectors"].as_integer(), Some(25));
    assert_eq!(c["elm"]["hidden"].as_integer(), Some(240));
    assert_eq!(c["elm"]["sparsity"].as_float(), Some(0.10));
    assert_eq!(c["model"]["a"].as_float(), Some(0.5));
    assert_eq!(c["model"]["b"].as_float(), Some(0.5));
    assert_eq!(c["model"]["sigma2_beta"].as_float(), Some(1000.0));
    assert_eq!(c["simulation"]["expected_n"].as_float(), Some(1000.0));
    assert_eq!(c["simulation"]["replicates"].as_integer(), Some(50));
    assert_eq!(c["simulation"]["shift"].as_float(), Some(0.7));
    assert!(c["elm"]["seed"].as_integer().is_some() && c["model"]["gibbs"]["seed"].as_integer().is_some());
    assert_eq!(manifest["fit"]["sample_size"].as_integer(), Some(4));
    for f in ["vocabulary.csv", "basis.csv", "elm.csv", "fit.toml", "coefficients.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn zero_weight_in_row_three_is_named_and_nothing_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fast_config(tmp.path(), "units_bad_weight.csv", "population.csv");
    let out = tmp.path().join("fit");
    let res = budis(&["fit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("row 3") && stderr.contains("weight"), "{stderr}");
    assert!(!out.exists());
    let leftovers: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers, vec![std::ffi::OsString::from("run.toml")]);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[elm]\nhiden = 10\n");
    assert_eq!(budis(&["fit", "--config", &cfg]).status.code(), Some(2));
    let cfg = write_config(
        tmp.path(),
        "missing.toml",
        "units = \"nope.csv\"\nadjacency = \"nope.csv\"\n",
    );
    let res = budis(&["fit", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("units"));
    assert_eq!(budis(&["fit", "--fitter", "nuts"]).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fast_config(tmp.path(), "units4.csv", "population.csv");
    for fitter in ["vb", "gibbs"] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let fit = tmp.path().join(format!("fit_{fitter}_{run}"));
            let pred = tmp.path().join(format!("pred_{fitter}_{run}"));
            let common = ["--config", cfg.as_str(), "--fitter", fitter, "--seed", "11"];
            run_ok(&[&["fit", "--out", fit.to_str().unwrap()], &common[..]].concat());
            let pcfg = write_config(
                tmp.path(),
                &format!("pred_{fitter}_{run}.toml"),
                &format!(
                    "fit_dir = {:?}\npopulation = {:?}\n[predict]\ndraws = 60\n",
                    fit,
                    fixtures().join("population.csv")
                ),
            );
            run_ok(&[
                "predict",
                "--config",
                &pcfg,
                "--seed",
                "11",
                "--out",
                pred.to_str().unwrap(),
            ]);
            let mut pred_files = dir_bytes(&pred);
            // The manifest names the fit directory, which differs by construction.
            pred_files.retain(|(n, _)| n != "manifest.toml");
            outputs.push((dir_bytes(&fit), pred_files));
        }
        assert_eq!(outputs[0], outputs[1], "{fitter}");
    }
}

#[test]
fn fully_sampled_population_reproduces_observed_means() {
    let tmp = tempfile::tempdir().unwrap();
    let pop = tmp.path().join("pop.csv");
    fs::write(
        &pop,
        "id,area,cell,female\n1,north,north,1\n2,north,north,0\n3,south,south,1\n4,south,south,0\n",
    )
    .unwrap();
    let cfg = fast_config(tmp.path(), "units4.csv", "population.csv");
    let fit = tmp.path().join("fit");
    run_ok(&["fit", "--config", &cfg, "--out", fit.to_str().unwrap()]);
    let pcfg = write_config(
        tmp.path(),
        "p.toml",
        &format!("fit_dir = {fit:?}\npopulation = {pop:?}\n"),
    );
    let pred = tmp.path().join("pred");
    run_ok(&["predict", "--config", &pcfg, "--out", pred.to_str().unwrap()]);
    let text = fs::read_to_string(pred.join("estimates.csv")).unwrap();
    assert_eq!(
        text,
        "area,estimate,sd,lo95,hi95,n_pop,n_sample\nnorth,0.5,0,0.5,0.5,2,2\nsouth,0.5,0,0.5,0.5,2,2\n"
    );
}

#[test]
fn mismatched_population_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fast_config(tmp.path(), "units4.csv", "population.csv");
    let fit = tmp.path().join("fit");
    run_ok(&["fit", "--config", &cfg, "--out", fit.to_str().unwrap()]);
    let cases = [
        ("id,area,cell,age\n1,north,north,1\n", "female"),
        ("id,area,cell,female\n1,north,north,1\n2,west,west,0\n", "row 2"),
        (
            "id,area,cell,female\n1,north,north,1\n2,north,north,0\n3,south,south,1\n",
            "does not appear",
        ),
    ];
    for (i, (body, needle)) in cases.iter().enumerate() {
        let pop = tmp.path().join(format!("pop{i}.csv"));
        fs::write(&pop, body).unwrap();
        let pcfg = write_config(
            tmp.path(),
            "p.toml",
            &format!("fit_dir = {fit:?}\npopulation = {pop:?}\n"),
        );
        let res = budis(&[
            "predict",
            "--config",
            &pcfg,
            "--out",
            tmp.path().join("pred").to_str().unwrap(),
        ]);
        let stderr = String::from_utf8_lossy(&res.stderr);
        assert_eq!(res.status.code(), Some(2), "{stderr}");
        assert!(stderr.contains(needle), "case {i}: {stderr}");
    }
}

#[test]
fn categorical_labels_keep_first_appearance_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fast_config(tmp.path(), "units_cat.csv", "population_cat.csv");
    let fit = tmp.path().join("fit");
    run_ok(&["fit", "--config", &cfg, "--out", fit.to_str().unwrap()]);
    let manifest: toml::Table = fs::read_to_string(fit.join("manifest.toml")).unwrap().parse().unwrap();
    let cats: Vec<&str> = manifest["fit"]["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(cats, ["dem", "rep", "ind"]);
    let pcfg = write_config(
        tmp.path(),
        "p.toml",
        &format!(
            "fit_dir = {fit:?}\npopulation = {:?}\n",
            fixtures().join("population_cat.csv")
        ),
    );
    let pred = tmp.path().join("pred");
    run_ok(&["predict", "--config", &pcfg, "--out", pred.to_str().unwrap()]);
    let mut rdr = csv::Reader::from_path(pred.join("estimates.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    for area in ["north", "south"] {
        let total: f64 = rows
            .iter()
            .filter(|r| &r[1] == area)
            .map(|r| r[2].parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn simulation_output_ignores_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.toml",
        "[features]\nvocabulary = 80\neigenvectors = 4\n[elm]\nhidden = 12\n\
         [simulation]\nreplicates = 3\nexpected_n = 150\ndraws = 20\n[synthetic]\nunits = 500\nareas = 6\n",
    );
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("sim{threads}"));
        run_ok(&[
            "simulate",
            "--config",
            &cfg,
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        outs.push(dir_bytes(&out));
    }
    assert_eq!(outs[0], outs[1]);
    let names: Vec<&str> = outs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "adjacency.csv",
            "estimates.csv",
            "manifest.toml",
            "population.csv",
            "scores.csv",
            "summary.txt"
        ]
    );
}

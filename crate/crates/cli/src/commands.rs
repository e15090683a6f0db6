use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use treecf::cffile::{
    common_fingerprint, read_cf_file, write_cf_file, write_report_csv, write_report_json, CfRecord, Fingerprint,
    ReportFile,
};
use treecf::dataio::{
    dataset_from_table, feature_matrix, minmax_scale, read_table, split_indices, CovarianceContext, LabelSpec, Table,
};
use treecf::distance::{DistanceKind, DistanceSpec};
use treecf::ensemble::{
    load_model, save_model_file, train_adaboost_with, train_cart, train_random_forest_with, AdaBoostParams,
    ForestParams, ModelFile, TreeEnsemble,
};
use treecf::evalstats::{evaluate as eval_report, TestKind};
use treecf::focus::{batch_generate, grid_search, CfResult, FocusConfig, Grid};
use treecf::ftweak::{epsilon_sweep, ft_batch, FtConfig, DEFAULT_EPSILONS};
use treecf::par::Parallelism;
use treecf::Result as CoreResult;

use crate::manifest::RunManifest;
use crate::{CliError, EvaluateArgs, ExplainArgs, GridArgs, InstanceArgs, MethodArg, ModelKindArg, TestArg, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn csv_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::data(format!("cannot write {}: {e}", path.display()))
}

fn write_rows(path: &Path, table: &Table, indices: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(&table.headers).map_err(|e| csv_error(path, e))?;
    for &i in indices {
        w.write_record(&table.records[i]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| csv_error(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut p = path.with_extension("");
    let mut name = p.file_name().map(|n| n.to_owned()).unwrap_or_default();
    name.push(suffix);
    p.set_file_name(name);
    p
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let par = Parallelism::from_jobs(a.jobs);
    let label = match a.label_threshold {
        Some(t) => LabelSpec::at_least(a.label.as_str(), t),
        None => LabelSpec::categorical(a.label.as_str()),
    };
    let mut manifest = RunManifest::new(
        "train",
        json!({
            "label": a.label,
            "label_threshold": a.label_threshold,
            "kind": format!("{:?}", a.kind).to_lowercase(),
            "num_trees": a.num_trees,
            "max_depth": a.max_depth,
            "min_leaf": a.min_leaf,
            "stratify": a.stratify,
        }),
        a.seed,
        a.jobs,
    );
    manifest.add_input("data", &a.data)?;
    let digest = manifest.seal();

    let table = read_table(&a.data)?;
    let raw = dataset_from_table(&table, &label)?;
    for w in &raw.warnings {
        eprintln!("warning: {w}");
    }
    let scaled = minmax_scale(&raw);
    let (train_idx, test_idx) = split_indices(&scaled, a.seed, a.stratify)?;
    let train = scaled.subset(&train_idx);
    let test = scaled.subset(&test_idx);
    manifest.lap("load");

    let ens = match a.kind {
        ModelKindArg::Dt => {
            let tree = train_cart(&train, a.max_depth, a.min_leaf, a.seed)?;
            TreeEnsemble::single(tree, train.feature_names.clone(), train.scaling.clone())?
        }
        ModelKindArg::Rf => {
            let mut p = ForestParams::new(a.num_trees, a.max_depth);
            p.min_leaf = a.min_leaf;
            train_random_forest_with(&train, &p, a.seed, par)?
        }
        ModelKindArg::Ab => {
            let p = AdaBoostParams {
                num_trees: a.num_trees,
                max_depth: a.max_depth,
                min_leaf: a.min_leaf,
            };
            train_adaboost_with(&train, &p, a.seed)?
        }
    };
    manifest.lap("train");
    let train_acc = ens.accuracy(&train.rows, &train.labels);
    let test_acc = ens.accuracy(&test.rows, &test.labels);

    let mut file = ModelFile::from_ensemble(&ens);
    file.manifest_digest = Some(digest);
    save_model_file(&file, &a.out)?;
    manifest.add_output("model", &a.out);
    if let Some(dir) = &a.split_dir {
        std::fs::create_dir_all(dir).map_err(|e| csv_error(dir, e))?;
        let (tr, te) = (dir.join("train.csv"), dir.join("test.csv"));
        write_rows(&tr, &table, &train_idx)?;
        write_rows(&te, &table, &test_idx)?;
        manifest.add_output("train_split", &tr);
        manifest.add_output("test_split", &te);
    }
    manifest.write_beside(&a.out)?;
    println!(
        "trained {} trees on {} rows; train accuracy {train_acc:.4}, test accuracy {test_acc:.4}",
        ens.len(),
        train.n_rows()
    );
    Ok(())
}

/// Rows of `path` in the model's feature order and scaled units.
fn model_rows(ens: &TreeEnsemble, path: &Path, prescaled: bool) -> Result<Vec<Vec<f64>>> {
    let table = read_table(path)?;
    let raw = feature_matrix(&table, &ens.feature_names)?;
    match (&ens.scaling, prescaled) {
        (Some(s), false) => Ok(raw.iter().map(|r| s.scale(r)).collect()),
        (Some(_), true) => Err(CliError::args(
            "--prescaled conflicts with a model that carries scaling metadata",
        )),
        (None, true) => Ok(raw),
        (None, false) => Err(CliError::schema(
            "model has no scaling metadata; pass --prescaled if the data is already in [0,1]",
        )),
    }
}

fn distance_spec(
    kind: DistanceKind,
    ens: Option<&TreeEnsemble>,
    train_data: Option<&Path>,
    ridge: f64,
    prescaled: bool,
) -> Result<DistanceSpec> {
    if kind != DistanceKind::Mahalanobis {
        return Ok(DistanceSpec::new(kind));
    }
    let Some(path) = train_data else {
        return Err(CliError::schema(
            "mahalanobis distance needs a covariance source: pass --train-data <training CSV>",
        ));
    };
    let Some(ens) = ens else {
        return Err(CliError::schema("mahalanobis distance needs --model to scale --train-data"));
    };
    let rows = model_rows(ens, path, prescaled)?;
    let cov = CovarianceContext::from_rows(&rows, ridge)?;
    Ok(DistanceSpec::mahalanobis(Arc::new(cov)))
}

struct Loaded {
    ens: TreeEnsemble,
    rows: Vec<Vec<f64>>,
    spec: DistanceSpec,
}

fn load_instances(a: &InstanceArgs, manifest: &mut RunManifest) -> Result<Loaded> {
    manifest.add_input("model", &a.model)?;
    manifest.add_input("data", &a.data)?;
    if let Some(t) = &a.train_data {
        manifest.add_input("train_data", t)?;
    }
    let ens = load_model(&a.model)?;
    let mut rows = model_rows(&ens, &a.data, a.prescaled)?;
    if let Some(n) = a.limit {
        rows.truncate(n);
    }
    if rows.is_empty() {
        return Err(CliError::data("no instances to explain"));
    }
    let spec = distance_spec(a.distance, Some(&ens), a.train_data.as_deref(), a.ridge, a.prescaled)?
        .with_smooth_eps(a.smooth_eps);
    Ok(Loaded { ens, rows, spec })
}

fn instance_params(a: &InstanceArgs) -> serde_json::Value {
    json!({
        "limit": a.limit,
        "prescaled": a.prescaled,
        "ridge": a.ridge,
        "distance": a.distance.as_str(),
        "smooth_eps": a.smooth_eps,
    })
}

fn merge(mut base: serde_json::Value, extra: serde_json::Value) -> serde_json::Value {
    if let (Some(b), serde_json::Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn to_records(
    ens: &TreeEnsemble,
    rows: &[Vec<f64>],
    results: &[CoreResult<CfResult>],
    spec: &DistanceSpec,
    fp: &Fingerprint,
) -> Result<Vec<CfRecord>> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(r) => Ok(CfRecord::from_result(r, spec, ens.scaling.as_ref(), fp)?),
            Err(e) => Ok(CfRecord::failed(i, &rows[i], ens.predict_label(&rows[i]), e, fp)),
        })
        .collect()
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let par = Parallelism::from_jobs(a.input.jobs);
    let method = match a.method {
        MethodArg::Focus => json!({
            "method": "focus",
            "sigma": a.sigma,
            "tau": a.tau,
            "beta": a.beta,
            "alpha": a.alpha,
            "iters": a.iters,
            "clamp": a.clamp,
        }),
        MethodArg::Ft => json!({"method": "feature-tweaking", "epsilon": a.epsilon}),
    };
    let mut manifest = RunManifest::new("explain", merge(instance_params(&a.input), method), a.input.seed, a.input.jobs);
    let Loaded { ens, rows, spec } = load_instances(&a.input, &mut manifest)?;
    let digest = manifest.seal();
    manifest.lap("load");

    let (results, fp) = match a.method {
        MethodArg::Focus => {
            let mut cfg = FocusConfig::new(a.sigma, a.tau, a.beta, a.alpha, spec.clone());
            cfg.iterations = a.iters;
            cfg.clamp_to_unit_box = a.clamp;
            cfg.seed = a.input.seed;
            cfg.validate()?;
            (batch_generate(&ens, &rows, &cfg, par), Fingerprint::focus(&cfg))
        }
        MethodArg::Ft => match a.epsilon {
            Some(eps) => {
                let cfg = FtConfig::new(eps, spec.clone());
                cfg.validate()?;
                (ft_batch(&ens, &rows, &cfg, par), Fingerprint::feature_tweaking(&cfg, a.input.seed))
            }
            None => {
                let sweep = epsilon_sweep(&ens, &rows, &DEFAULT_EPSILONS, &spec, par)?;
                for c in &sweep.cells {
                    eprintln!("epsilon {}: coverage {:.4}, d_mean {:?}", c.epsilon, c.coverage, c.d_mean);
                }
                let cfg = FtConfig::new(sweep.best_epsilon, spec.clone());
                (sweep.best_results, Fingerprint::feature_tweaking(&cfg, a.input.seed))
            }
        },
    };
    manifest.lap("explain");
    let fp = fp.with_digest(digest);
    let records = to_records(&ens, &rows, &results, &spec, &fp)?;
    write_cf_file(&a.out, &records)?;
    manifest.add_output("counterfactuals", &a.out);
    manifest.write_beside(&a.out)?;

    let found: Vec<f64> = records.iter().filter_map(|r| r.distance).collect();
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    let mean = if found.is_empty() {
        "n/a".to_string()
    } else {
        format!("{:.6}", found.iter().sum::<f64>() / found.len() as f64)
    };
    println!(
        "{}: {} of {} counterfactuals found ({} errors), d_mean {mean}",
        fp.method.as_str(),
        found.len(),
        records.len(),
        errors
    );
    Ok(())
}

fn read_results(path: &Path) -> Result<(Vec<CfResult>, Option<Fingerprint>)> {
    let records = read_cf_file(path)?;
    let fp = common_fingerprint(&records)?;
    Ok((records.iter().map(CfRecord::to_result).collect(), fp))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let test = match a.test {
        TestArg::Welch => TestKind::Welch,
        TestArg::Paired => TestKind::Paired,
    };
    let mut manifest = RunManifest::new(
        "evaluate",
        json!({
            "test": format!("{test:?}").to_lowercase(),
            "ridge": a.ridge,
            "dataset": a.dataset,
            "model_name": a.model_name,
        }),
        0,
        1,
    );
    manifest.add_input("cf", &a.cf)?;
    if let Some(b) = &a.baseline {
        manifest.add_input("baseline", b)?;
    }
    if let Some(m) = &a.model {
        manifest.add_input("model", m)?;
    }
    if let Some(t) = &a.train_data {
        manifest.add_input("train_data", t)?;
    }
    let digest = manifest.seal();

    let (ours, fp) = read_results(&a.cf)?;
    if ours.is_empty() {
        return Err(CliError::data(format!("{} holds no records", a.cf.display())));
    }
    let baseline = match &a.baseline {
        Some(b) => Some(read_results(b)?),
        None => None,
    };
    let kind = fp.as_ref().map(|f| f.distance).unwrap_or(DistanceKind::Euclidean);
    if let Some((_, Some(bfp))) = &baseline {
        if bfp.distance != kind {
            return Err(CliError::schema(format!(
                "distance mismatch: {} uses {}, baseline uses {}",
                a.cf.display(),
                kind,
                bfp.distance
            )));
        }
    }
    let ens = match &a.model {
        Some(m) => Some(load_model(m)?),
        None => None,
    };
    let spec = distance_spec(kind, ens.as_ref(), a.train_data.as_deref(), a.ridge, false)?;
    let mut report = eval_report(
        &ours,
        baseline.as_ref().map(|(r, _)| r.as_slice()),
        &spec,
        ens.as_ref(),
        test,
    )?;
    report.dataset = a.dataset.clone();
    report.model = a.model_name.clone();
    report.method = fp;
    report.baseline = baseline.and_then(|(_, f)| f);
    let file = ReportFile {
        manifest_digest: Some(digest),
        reports: vec![report],
    };
    let csv_path = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_report_json(&a.out, &file)?;
    write_report_csv(&csv_path, &file)?;
    manifest.add_output("report", &a.out);
    manifest.add_output("table", &csv_path);
    manifest.write_beside(&a.out)?;

    let r = &file.reports[0];
    println!("coverage {:.4}, d_mean {:?}, n_found {}", r.coverage, r.d_mean, r.n_found);
    if r.n_compared.is_some() {
        println!(
            "n_compared {:?}, d_rmean {:?}, pct_closer {:?}, p_value {:?}",
            r.n_compared, r.d_rmean, r.pct_closer, r.p_value
        );
    }
    Ok(())
}

pub fn gridsearch(a: &GridArgs) -> Result<()> {
    let par = Parallelism::from_jobs(a.input.jobs);
    let defaults = Grid::default();
    let grid = Grid {
        sigma: a.sigma.as_ref().map_or(defaults.sigma, |l| l.0.clone()),
        tau: a.tau.as_ref().map_or(defaults.tau, |l| l.0.clone()),
        beta: a.beta.as_ref().map_or(defaults.beta, |l| l.0.clone()),
        alpha: a.alpha.as_ref().map_or(defaults.alpha, |l| l.0.clone()),
    };
    let mut manifest = RunManifest::new(
        "gridsearch",
        merge(
            instance_params(&a.input),
            json!({"grid": grid, "iters": a.iters, "clamp": a.clamp}),
        ),
        a.input.seed,
        a.input.jobs,
    );
    let Loaded { ens, rows, spec } = load_instances(&a.input, &mut manifest)?;
    let digest = manifest.seal();

    let mut template = FocusConfig::new(1.0, 1.0, 1.0, 1.0, spec);
    template.iterations = a.iters;
    template.clamp_to_unit_box = a.clamp;
    template.seed = a.input.seed;
    let result = grid_search(&ens, &rows, &grid, &template, par)?;
    manifest.lap("search");

    let best = Fingerprint::focus(&result.best).with_digest(digest.clone());
    let doc = json!({
        "manifest_digest": digest,
        "best": best,
        "best_index": result.best_index,
        "best_cell": result.cells[result.best_index],
        "n_cells": result.cells.len(),
    });
    std::fs::write(&a.out, serde_json::to_string_pretty(&doc).expect("json") + "\n")
        .map_err(|e| csv_error(&a.out, e))?;
    let table = a.table.clone().unwrap_or_else(|| with_suffix(&a.out, ".sweep.csv"));
    let mut w = csv::Writer::from_path(&table).map_err(|e| csv_error(&table, e))?;
    w.write_record(["sigma", "tau", "beta", "alpha", "coverage", "d_mean", "n_found", "n_instances", "n_errors", "manifest_digest"])
        .map_err(|e| csv_error(&table, e))?;
    for c in &result.cells {
        w.write_record([
            c.sigma.to_string(),
            c.tau.to_string(),
            c.beta.to_string(),
            c.alpha.to_string(),
            c.coverage.to_string(),
            c.d_mean.map(|d| d.to_string()).unwrap_or_default(),
            c.n_found.to_string(),
            c.n_instances.to_string(),
            c.n_errors.to_string(),
            digest.clone(),
        ])
        .map_err(|e| csv_error(&table, e))?;
    }
    w.flush().map_err(|e| csv_error(&table, e))?;
    manifest.add_output("best", &a.out);
    manifest.add_output("table", &table);
    manifest.write_beside(&a.out)?;

    let c = &result.cells[result.best_index];
    println!(
        "best of {} cells: sigma {} tau {} beta {} alpha {} (coverage {:.4}, d_mean {:?})",
        result.cells.len(),
        c.sigma,
        c.tau,
        c.beta,
        c.alpha,
        c.coverage,
        c.d_mean
    );
    Ok(())
}

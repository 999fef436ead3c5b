//! Replication driver for the simulation study: run the full fit over many
//! generated datasets and reduce the per-replication tree facts to Type I
//! error, power, split-point, tree-size, and MSE summaries.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::{fit_tehtree, FitConfig};
use crate::rng::{derive_seed, stream};
use crate::simgen::{generate_covariates, generate_dataset, true_cate, ScenarioSpec};
use crate::tree::{predict_effect, EstimationMode};

/// First-split window used for the split-point concentration metric: the
/// middle 5% of a standard normal covariate.
pub const CENTRAL_BAND: (f64, f64) = (-0.063, 0.063);

/// Fit settings shared by every replication. Same knobs as [`FitConfig`]
/// minus the seed, which the driver derives per replication.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub alpha: f64,
    pub min_node: usize,
    pub max_depth: usize,
    pub mode: EstimationMode,
    pub train_frac: f64,
    pub folds: usize,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            alpha: 0.05,
            min_node: 10,
            max_depth: 10,
            mode: EstimationMode::Single,
            train_frac: 0.75,
            folds: 10,
        }
    }
}

impl MethodConfig {
    fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            alpha: self.alpha,
            min_node: self.min_node,
            max_depth: self.max_depth,
            mode: self.mode,
            train_frac: self.train_frac,
            folds: self.folds,
            seed,
            caliper: None,
        }
    }
}

/// Tree facts recorded for one successful replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub split_any: bool,
    pub root_var: Option<usize>,
    pub split_vars: BTreeSet<usize>,
    pub first_split_point: Option<f64>,
    pub n_terminal: usize,
    /// Mean squared error of predicted effects against the analytic
    /// conditional effect on a fresh evaluation sample of size n.
    pub mse: f64,
    pub leaf_effects: Vec<f64>,
}

/// All replications of one scenario under one method configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub spec: ScenarioSpec,
    pub config: MethodConfig,
    /// Replications requested; `per_rep` holds the successful ones in
    /// replication order and `failures` the rest.
    pub reps: usize,
    pub per_rep: Vec<RepOutcome>,
    /// (replication index, stage-annotated error text).
    pub failures: Vec<(usize, String)>,
}

/// Aggregated metrics over the successful replications of one report.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub reps_requested: usize,
    pub reps_effective: usize,
    pub reps_failed: usize,
    /// Fraction of trees with more than one terminal node. Reads as the
    /// Type I error under a homogeneous-effect scenario and as
    /// `power_any_split` otherwise.
    pub type_i_error: f64,
    pub power_root: f64,
    pub power_any_node: f64,
    pub power_all: f64,
    pub power_any_split: f64,
    pub mean_n_terminal: f64,
    pub median_n_terminal: f64,
    /// First-split statistics are over the trees that split; `None` when
    /// no tree split.
    pub mean_first_split_point: Option<f64>,
    pub median_first_split_point: Option<f64>,
    /// Fraction of distinct split variables per tree, pooled over trees,
    /// that carry no true interaction; `None` when no tree split.
    pub pct_non_target_splits: Option<f64>,
    /// Fraction of first splits inside [`CENTRAL_BAND`].
    pub pct_first_split_central: Option<f64>,
    pub mean_mse: f64,
}

fn run_one(spec: &ScenarioSpec, config: &MethodConfig, rep: usize) -> Result<RepOutcome> {
    let rep_seed = derive_seed(spec.seed, &[stream::REP, rep as u64]);
    let rep_spec = ScenarioSpec {
        seed: rep_seed,
        ..spec.clone()
    };
    let (data, _) = generate_dataset(&rep_spec)?;
    let (tree, _) = fit_tehtree(&data, &config.fit_config(rep_seed))?;

    let eval_seed = derive_seed(spec.seed, &[stream::EVAL, rep as u64]);
    let eval_x = generate_covariates(spec, spec.n, eval_seed)?;
    let truth = true_cate(spec, eval_x.view())?;
    // Leaves left without an estimate (a holdout arm can come up empty)
    // fall back to the overall estimate, so every subject gets a prediction.
    let fallback = tree
        .overall_effect()
        .ok_or_else(|| Error::Validation("tree carries no overall effect estimate".into()))?;
    let mse = truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let pred = predict_effect(&tree, eval_x.row(i))?.unwrap_or(fallback);
            Ok((pred - t) * (pred - t))
        })
        .sum::<Result<f64>>()?
        / truth.len() as f64;

    let first = tree.first_split();
    Ok(RepOutcome {
        split_any: tree.n_terminal() > 1,
        root_var: first.map(|(v, _)| v),
        split_vars: tree.split_vars().into_iter().collect(),
        first_split_point: first.map(|(_, c)| c),
        n_terminal: tree.n_terminal(),
        mse,
        leaf_effects: tree.leaves().into_iter().filter_map(|(e, _)| e).collect(),
    })
}

/// Run `reps` independent replications of `spec` under `config` on a pool
/// of `workers` threads (0 = one per core). Replication r generates its
/// dataset and fits with seeds derived from (spec.seed, r), so reports are
/// identical across worker counts and runs. Individual replication errors
/// are collected, not fatal, unless they exceed 1% of `reps`.
pub fn run_replications(
    spec: &ScenarioSpec,
    config: &MethodConfig,
    reps: usize,
    workers: usize,
) -> Result<ReplicationReport> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<std::result::Result<RepOutcome, String>> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| run_one(spec, config, r).map_err(|e| e.to_string()))
            .collect()
    });

    let mut per_rep = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(row) => per_rep.push(row),
            Err(e) => failures.push((r, e)),
        }
    }
    if failures.len() * 100 > reps {
        return Err(Error::Validation(format!(
            "{} of {} replications failed (more than 1%); first failure at rep {}: {}",
            failures.len(),
            reps,
            failures[0].0,
            failures[0].1
        )));
    }
    Ok(ReplicationReport {
        spec: spec.clone(),
        config: config.clone(),
        reps,
        per_rep,
        failures,
    })
}

fn median_of(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Reduce a report to its headline metrics. `heterogeneity_vars` lists the
/// covariate indices carrying a true interaction (empty under a null
/// scenario); power metrics are zero when it is empty.
pub fn aggregate_metrics(
    report: &ReplicationReport,
    heterogeneity_vars: &BTreeSet<usize>,
) -> Result<Metrics> {
    let rows = &report.per_rep;
    if rows.is_empty() {
        return Err(Error::Validation(
            "report has no successful replications to aggregate".into(),
        ));
    }
    let n = rows.len() as f64;
    let targets = heterogeneity_vars;

    let split_any = rows.iter().filter(|r| r.split_any).count() as f64 / n;
    let (power_root, power_any_node, power_all) = if targets.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let root = rows
            .iter()
            .filter(|r| r.root_var.is_some_and(|v| targets.contains(&v)))
            .count() as f64;
        let any = rows
            .iter()
            .filter(|r| !r.split_vars.is_disjoint(targets))
            .count() as f64;
        let all = rows
            .iter()
            .filter(|r| targets.is_subset(&r.split_vars))
            .count() as f64;
        (root / n, any / n, all / n)
    };

    let first_points: Vec<f64> = rows.iter().filter_map(|r| r.first_split_point).collect();
    let (mean_first, median_first, central) = if first_points.is_empty() {
        (None, None, None)
    } else {
        let m = first_points.iter().sum::<f64>() / first_points.len() as f64;
        let inside = first_points
            .iter()
            .filter(|&&c| c > CENTRAL_BAND.0 && c < CENTRAL_BAND.1)
            .count() as f64;
        (
            Some(m),
            Some(median_of(first_points.clone())),
            Some(inside / first_points.len() as f64),
        )
    };

    let total_vars: usize = rows.iter().map(|r| r.split_vars.len()).sum();
    let off_target: usize = rows
        .iter()
        .map(|r| r.split_vars.difference(targets).count())
        .sum();
    let pct_non_target = (total_vars > 0).then(|| off_target as f64 / total_vars as f64);

    Ok(Metrics {
        reps_requested: report.reps,
        reps_effective: rows.len(),
        reps_failed: report.failures.len(),
        type_i_error: split_any,
        power_root,
        power_any_node,
        power_all,
        power_any_split: split_any,
        mean_n_terminal: rows.iter().map(|r| r.n_terminal as f64).sum::<f64>() / n,
        median_n_terminal: median_of(rows.iter().map(|r| r.n_terminal as f64).collect()),
        mean_first_split_point: mean_first,
        median_first_split_point: median_first,
        pct_non_target_splits: pct_non_target,
        pct_first_split_central: central,
        mean_mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
    })
}

/// Column set of the metrics CSV, one row per scenario and configuration.
pub const METRICS_COLUMNS: [&str; 27] = [
    "model",
    "covariates",
    "coeffs",
    "n",
    "rho",
    "seed",
    "alpha",
    "min_node",
    "max_depth",
    "mode",
    "train_frac",
    "folds",
    "reps",
    "reps_effective",
    "reps_failed",
    "type_i_error",
    "power_root",
    "power_any_node",
    "power_all",
    "power_any_split",
    "mean_n_terminal",
    "median_n_terminal",
    "mean_first_split_point",
    "median_first_split_point",
    "pct_non_target_splits",
    "pct_first_split_central",
    "mean_mse",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One metrics row in [`METRICS_COLUMNS`] order.
pub fn metrics_record(report: &ReplicationReport, m: &Metrics) -> Vec<String> {
    let s = &report.spec;
    let c = &report.config;
    vec![
        s.model.code().to_string(),
        s.covariates.code().to_string(),
        s.coeffs.label(),
        s.n.to_string(),
        s.rho.to_string(),
        s.seed.to_string(),
        c.alpha.to_string(),
        c.min_node.to_string(),
        c.max_depth.to_string(),
        c.mode.to_string(),
        c.train_frac.to_string(),
        c.folds.to_string(),
        m.reps_requested.to_string(),
        m.reps_effective.to_string(),
        m.reps_failed.to_string(),
        m.type_i_error.to_string(),
        m.power_root.to_string(),
        m.power_any_node.to_string(),
        m.power_all.to_string(),
        m.power_any_split.to_string(),
        m.mean_n_terminal.to_string(),
        m.median_n_terminal.to_string(),
        opt(m.mean_first_split_point),
        opt(m.median_first_split_point),
        opt(m.pct_non_target_splits),
        opt(m.pct_first_split_central),
        m.mean_mse.to_string(),
    ]
}

/// Write metrics rows as CSV with the stable column set.
pub fn write_metrics_csv<W: Write>(writer: W, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_COLUMNS)?;
    for row in rows {
        if row.len() != METRICS_COLUMNS.len() {
            return Err(Error::Validation(format!(
                "metrics row has {} fields, expected {}",
                row.len(),
                METRICS_COLUMNS.len()
            )));
        }
        w.write_record(row)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Write one row per replication (including failed ones) for inspection.
pub fn write_per_rep_csv<W: Write>(writer: W, report: &ReplicationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "rep",
        "status",
        "error",
        "split_any",
        "root_var",
        "first_split_point",
        "n_terminal",
        "mse",
        "split_vars",
        "leaf_effects",
    ])?;
    let failed: std::collections::BTreeMap<usize, &str> = report
        .failures
        .iter()
        .map(|(r, e)| (*r, e.as_str()))
        .collect();
    let mut ok_rows = report.per_rep.iter();
    for rep in 0..report.reps {
        if let Some(err) = failed.get(&rep) {
            w.write_record([
                &rep.to_string(),
                "failed",
                err,
                "",
                "",
                "",
                "",
                "",
                "",
                "",
            ])?;
            continue;
        }
        let Some(row) = ok_rows.next() else {
            // Short report (per_rep truncated by hand); stop quietly.
            break;
        };
        let join = |it: Vec<String>| it.join(";");
        w.write_record([
            rep.to_string(),
            "ok".to_string(),
            String::new(),
            row.split_any.to_string(),
            row.root_var.map(|v| v.to_string()).unwrap_or_default(),
            opt(row.first_split_point),
            row.n_terminal.to_string(),
            row.mse.to_string(),
            join(row.split_vars.iter().map(|v| v.to_string()).collect()),
            join(row.leaf_effects.iter().map(|v| v.to_string()).collect()),
        ])?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

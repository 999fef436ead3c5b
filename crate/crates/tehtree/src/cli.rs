//! Command-line front end: fit trees on trial CSVs, predict from saved
//! trees, and drive the simulation bench. Stdout is machine-greppable
//! `key=value` lines; human-readable tree summaries go to files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::bench::{
    aggregate_metrics, metrics_record, run_replications, write_metrics_csv, write_per_rep_csv,
    MethodConfig, METRICS_COLUMNS,
};
use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::pipeline::{fit_tehtree, FitConfig};
use crate::simgen::{CovariateConfig, Model, ModelCoeffs, ScenarioSpec};
use crate::tree::{predict_effect, EstimationMode, TehTree};

#[derive(Debug, Parser)]
#[command(
    name = "tehtree",
    version,
    about = "Treatment-effect heterogeneity trees for randomized trials"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a tree to a trial CSV; write tree JSON and a text summary.
    Fit(FitArgs),
    /// Predict per-subject effects from a saved tree JSON.
    Predict(PredictArgs),
    /// Run simulation replications and write aggregate metrics CSV.
    Simulate(SimulateArgs),
    /// Merge metrics CSVs from simulate runs into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Trial CSV with outcome, treatment, and numeric covariate columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    pub outcome: String,
    /// Treatment column name (values 0/1).
    #[arg(long, default_value = "z")]
    pub treatment: String,
    /// Family-wise split level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Smallest pair count on each side of a split.
    #[arg(long, default_value_t = 10)]
    pub min_node: usize,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    /// Leaf estimation: pair means (single) or holdout arm means (double).
    #[arg(long, default_value = "single", value_parser = ["single", "double"])]
    pub mode: String,
    /// Training fraction in double mode; single mode uses all rows.
    #[arg(long, default_value_t = 0.75)]
    pub train_frac: f64,
    /// Cross-validation folds for the prognostic ensemble.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Drop matched pairs with score distance above this value.
    #[arg(long)]
    pub caliper: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the tree JSON; a `.summary.txt` sidecar is written
    /// next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Tree JSON produced by `fit`.
    #[arg(long)]
    pub tree: PathBuf,
    /// CSV of covariates in the order the tree was fit on; outcome and
    /// treatment columns are ignored when present.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "z")]
    pub treatment: String,
    /// Output CSV with one predicted effect per row.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Outcome model code M1..M11.
    #[arg(long)]
    pub model: String,
    /// Covariate roster code C1, C2, C3, or CM.
    #[arg(long, default_value = "C2")]
    pub covariates: String,
    /// Preset name (e.g. P4, P9(iii)) or key=value list
    /// (e.g. gamma=2,eta=1.5).
    #[arg(long, default_value = "")]
    pub coeffs: String,
    /// Subjects per replication (split evenly between arms).
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Pairwise correlation of continuous covariates.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub min_node: usize,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    #[arg(long, default_value = "single", value_parser = ["single", "double"])]
    pub mode: String,
    #[arg(long, default_value_t = 0.75)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Replication threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics CSV path (one aggregate row).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-replication CSV dump.
    #[arg(long)]
    pub per_rep: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSVs to merge, in order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Merged CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> EstimationMode {
    match s {
        "double" => EstimationMode::Double,
        _ => EstimationMode::Single,
    }
}

/// Run a parsed invocation; returns the process exit code and prints
/// errors to stderr.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Fit(args) => run_fit(&args),
        Command::Predict(args) => run_predict(&args),
        Command::Simulate(args) => run_simulate(&args),
        Command::Report(args) => run_report(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_fit(args: &FitArgs) -> Result<()> {
    println!("seed={}", args.seed);
    let data = TrialDataset::load_csv(&args.data, &args.outcome, &args.treatment)?;
    let config = FitConfig {
        alpha: args.alpha,
        min_node: args.min_node,
        max_depth: args.max_depth,
        mode: parse_mode(&args.mode),
        train_frac: args.train_frac,
        folds: args.folds,
        seed: args.seed,
        caliper: args.caliper,
    };
    let (tree, diag) = fit_tehtree(&data, &config)?;

    std::fs::write(&args.out, tree.to_json_string())?;
    let summary_path = sidecar(&args.out);
    std::fs::write(&summary_path, tree.summary(Some(data.col_names())))?;

    println!("n={} p={}", data.n(), data.p());
    println!("n_train={} n_holdout={}", diag.n_train, diag.n_holdout);
    println!(
        "n_pairs={} n_reused_controls={} n_dropped_pairs={}",
        diag.n_pairs, diag.n_reused_controls, diag.n_dropped_pairs
    );
    println!(
        "match_distance_median={}",
        diag.match_distance_quantiles.median
    );
    println!("ensemble_cv_risk={}", diag.ensemble_cv_risk);
    println!("n_terminal={}", tree.n_terminal());
    match tree.first_split() {
        Some((var, c)) => println!("first_split={}<={}", data.col_names()[var], c),
        None => println!("first_split=none"),
    }
    println!("tree_json={}", args.out.display());
    println!("summary={}", summary_path.display());
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("summary.txt")
}

/// Read a covariate matrix from CSV, dropping the named outcome/treatment
/// columns when present.
fn load_covariates(path: &Path, drop: [&str; 2]) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    let keep: Vec<usize> = (0..header.len())
        .filter(|&i| !drop.contains(&&header[i]))
        .collect();
    if keep.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no covariate columns",
            path.display()
        )));
    }
    let names: Vec<String> = keep.iter().map(|&i| header[i].to_string()).collect();
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for &i in &keep {
            let cell = &record[i];
            rows.push(cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                col: header[i].to_string(),
                msg: format!("not a number: {cell:?}"),
            })?);
        }
        n += 1;
    }
    let x = Array2::from_shape_vec((n, keep.len()), rows)
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok((names, x))
}

fn run_predict(args: &PredictArgs) -> Result<()> {
    println!("seed=none");
    let tree = TehTree::from_json_str(&std::fs::read_to_string(&args.tree)?)?;
    let (names, x) = load_covariates(&args.data, [&args.outcome, &args.treatment])?;
    if x.ncols() != tree.n_covariates() {
        return Err(Error::Validation(format!(
            "tree was fit on {} covariates, {} provides {} ({})",
            tree.n_covariates(),
            args.data.display(),
            x.ncols(),
            names.join(", ")
        )));
    }
    let fallback = tree.overall_effect();
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["row", "effect"])?;
    for i in 0..x.nrows() {
        let pred = predict_effect(&tree, x.row(i))?.or(fallback);
        w.write_record([
            i.to_string(),
            pred.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    println!("n={} predictions={}", x.nrows(), args.out.display());
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    println!("seed={}", args.seed);
    let spec = ScenarioSpec {
        model: Model::from_code(&args.model)?,
        covariates: CovariateConfig::from_code(&args.covariates)?,
        coeffs: ModelCoeffs::parse(&args.coeffs)?,
        n: args.n,
        rho: args.rho,
        seed: args.seed,
    };
    spec.validate()?;
    let config = MethodConfig {
        alpha: args.alpha,
        min_node: args.min_node,
        max_depth: args.max_depth,
        mode: parse_mode(&args.mode),
        train_frac: args.train_frac,
        folds: args.folds,
    };
    println!(
        "model={} covariates={} coeffs={} n={} rho={} reps={}",
        spec.model,
        spec.covariates.code(),
        spec.coeffs.label(),
        spec.n,
        spec.rho,
        args.reps
    );

    let report = run_replications(&spec, &config, args.reps, args.workers)?;
    let targets: BTreeSet<usize> = spec
        .model
        .heterogeneity_vars(spec.covariates.n_covariates())
        .into_iter()
        .collect();
    let metrics = aggregate_metrics(&report, &targets)?;

    let out = std::fs::File::create(&args.out)?;
    write_metrics_csv(out, &[metrics_record(&report, &metrics)])?;
    if let Some(path) = &args.per_rep {
        write_per_rep_csv(std::fs::File::create(path)?, &report)?;
    }

    println!(
        "reps_effective={} reps_failed={}",
        metrics.reps_effective, metrics.reps_failed
    );
    if targets.is_empty() {
        println!("type_i_error={}", metrics.type_i_error);
    } else {
        println!("power_any_node={}", metrics.power_any_node);
    }
    println!("mean_n_terminal={}", metrics.mean_n_terminal);
    println!("metrics={}", args.out.display());
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    println!("seed=none");
    let mut merged: Vec<Vec<String>> = Vec::new();
    for path in &args.inputs {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?;
        if header.len() != METRICS_COLUMNS.len()
            || header.iter().zip(METRICS_COLUMNS).any(|(a, b)| a != b)
        {
            return Err(Error::Validation(format!(
                "{} is not a metrics CSV (unexpected columns)",
                path.display()
            )));
        }
        for record in reader.records() {
            merged.push(record?.iter().map(str::to_string).collect());
        }
    }
    let out = std::fs::File::create(&args.out)?;
    let rows = merged.len();
    write_metrics_csv(out, &merged)?;
    println!(
        "files={} rows={} merged={}",
        args.inputs.len(),
        rows,
        args.out.display()
    );
    Ok(())
}

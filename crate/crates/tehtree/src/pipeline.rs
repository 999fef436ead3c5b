//! End-to-end fit: split, prognostic score, match, grow, annotate.
//!
//! Single-sample mode uses every subject for matching and estimates leaf
//! effects from the training pairs themselves. Double-sample mode carves
//! off a holdout first; the tree is grown without ever touching holdout
//! rows and leaf effects come from holdout arm means, which keeps them
//! unbiased with respect to the adaptive partition.

use std::collections::HashMap;

use serde::Serialize;

use crate::dataset::{split_train_holdout, SplitIndices, TrialDataset};
use crate::error::{Error, Result};
use crate::matching::match_pairs_caliper;
use crate::prognostic::{fit_prognostic, training_scores};
use crate::tree::{build_tree, estimate_effects, EstimationMode, TehTree};

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub alpha: f64,
    pub min_node: usize,
    pub max_depth: usize,
    pub mode: EstimationMode,
    /// Fraction of each arm kept for training. Ignored in single mode,
    /// which always trains on everything.
    pub train_frac: f64,
    /// Cross-validation folds for the prognostic ensemble.
    pub folds: usize,
    pub seed: u64,
    /// Optional cap on the matched score distance; pairs farther apart
    /// are dropped (and counted in the diagnostics).
    pub caliper: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            alpha: 0.05,
            min_node: 10,
            max_depth: 10,
            mode: EstimationMode::Single,
            train_frac: 0.75,
            folds: 10,
            seed: 0,
            caliper: None,
        }
    }
}

/// Five-number summary of the matched score distances.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DistanceQuantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

fn quantiles(mut d: Vec<f64>) -> DistanceQuantiles {
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let at = |p: f64| {
        let t = p * (d.len() - 1) as f64;
        let lo = t.floor() as usize;
        let hi = t.ceil() as usize;
        d[lo] + (t - lo as f64) * (d[hi] - d[lo])
    };
    DistanceQuantiles {
        min: d[0],
        q25: at(0.25),
        median: at(0.5),
        q75: at(0.75),
        max: d[d.len() - 1],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitDiagnostics {
    /// Cross-validated risk per prognostic learner, in roster order.
    pub cv_risks: Vec<(String, f64)>,
    pub ensemble_cv_risk: f64,
    pub stack_weights: Vec<f64>,
    pub match_distance_quantiles: DistanceQuantiles,
    /// Matched pair count; equals the training treated-arm size unless a
    /// caliper dropped pairs.
    pub n_pairs: usize,
    /// Controls matched to more than one treated subject.
    pub n_reused_controls: usize,
    pub n_dropped_pairs: usize,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Run the full method on a dataset. Errors carry the stage they arose
/// in: config, split, prognostic, match, tree, or effects.
pub fn fit_tehtree(data: &TrialDataset, config: &FitConfig) -> Result<(TehTree, FitDiagnostics)> {
    let cfg = |msg: String| Error::stage("config")(Error::Config(msg));
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(cfg(format!("alpha must be in (0,1), got {}", config.alpha)));
    }
    if !(config.train_frac > 0.0 && config.train_frac <= 1.0) {
        return Err(cfg(format!(
            "train_frac must be in (0,1], got {}",
            config.train_frac
        )));
    }
    if config.mode == EstimationMode::Double && config.train_frac >= 1.0 {
        return Err(cfg(
            "double-sample estimation needs train_frac < 1 to leave a holdout".into(),
        ));
    }

    let split = match config.mode {
        EstimationMode::Single => SplitIndices {
            train: (0..data.n()).collect(),
            holdout: Vec::new(),
        },
        EstimationMode::Double => split_train_holdout(data, config.train_frac, config.seed)
            .map_err(Error::stage("split"))?,
    };
    let train = data
        .subset(&split.train)
        .map_err(Error::stage("split"))?;

    let model = fit_prognostic(&train, config.folds, config.seed)
        .map_err(Error::stage("prognostic"))?;
    let scores = training_scores(&model, &train).map_err(Error::stage("prognostic"))?;

    let (pairs, dropped) = match_pairs_caliper(&train, &scores, config.seed, config.caliper)
        .map_err(Error::stage("match"))?;
    let distances: Vec<f64> = pairs
        .pairs
        .iter()
        .map(|&(t, c)| (scores[t] - scores[c]).abs())
        .collect();
    let mut control_use: HashMap<usize, usize> = HashMap::new();
    for &(_, c) in &pairs.pairs {
        *control_use.entry(c).or_insert(0) += 1;
    }
    let diagnostics = FitDiagnostics {
        cv_risks: model
            .learner_names()
            .iter()
            .map(|s| s.to_string())
            .zip(model.cv_risk().iter().copied())
            .collect(),
        ensemble_cv_risk: model.ensemble_cv_risk(),
        stack_weights: model.weights().to_vec(),
        match_distance_quantiles: quantiles(distances),
        n_pairs: pairs.len(),
        n_reused_controls: control_use.values().filter(|&&k| k > 1).count(),
        n_dropped_pairs: dropped.len(),
        n_train: train.n(),
        n_holdout: split.holdout.len(),
    };

    let tree = build_tree(&pairs, config.alpha, config.min_node, config.max_depth)
        .map_err(Error::stage("tree"))?;
    let tree = match config.mode {
        EstimationMode::Single => estimate_effects(tree, EstimationMode::Single, &pairs, None),
        EstimationMode::Double => {
            let holdout = data
                .subset(&split.holdout)
                .map_err(Error::stage("effects"))?;
            estimate_effects(tree, EstimationMode::Double, &pairs, Some(&holdout))
        }
    }
    .map_err(Error::stage("effects"))?;

    Ok((tree, diagnostics))
}

//! Treatment-effect heterogeneity trees for randomized trials.
//!
//! The pipeline detects and localizes heterogeneous treatment effects while
//! holding the false-discovery rate of *any* split near the nominal level:
//!
//! 1. split the trial into training and holdout sets (stratified by arm),
//! 2. fit a prognostic score, the expected control-arm outcome given
//!    covariates, by stacking several learners on training controls,
//! 3. match each treated subject to its nearest control on that score and
//!    form within-pair outcome differences,
//! 4. grow a conditional inference tree on the pair differences, testing
//!    each covariate with a random-intercept model that accounts for
//!    controls matched to several treated subjects, with a Bonferroni gate
//!    so a null trial usually yields a single root node,
//! 5. estimate per-leaf effects from the pair differences or, optionally,
//!    from the holdout set.
//!
//! The [`pipeline`] module ties the stages together behind one entry point;
//! [`bench`] adds the Monte Carlo harness used to study operating
//! characteristics (size, power, split recovery) on synthetic trials.

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod lmm;
pub mod matching;
pub mod prognostic;
pub mod pipeline;
pub mod rng;
pub mod simgen;
pub mod tree;

pub use bench::{aggregate_metrics, run_replications, MethodConfig, Metrics, ReplicationReport};
pub use dataset::{split_train_holdout, SplitIndices, TrialDataset};
pub use error::{Error, Result};
pub use pipeline::{fit_tehtree, FitConfig, FitDiagnostics};
pub use simgen::{generate_dataset, true_cate, ScenarioSpec};
pub use tree::{
    build_tree, estimate_effects, predict_effect, EstimationMode, TehTree,
};

//! Conditional inference tree over matched-pair differences.
//!
//! Splitting is two-phase, separating "whether" from "where". At each node,
//! every covariate is tested for association with the pair differences via
//! the random-intercept model ([`crate::lmm`]); the node splits only when
//! the smallest p-value clears the Bonferroni gate `alpha / p` (with `p`
//! the full covariate count, a deliberately conservative divisor). The
//! winning covariate's threshold is then the candidate midpoint maximizing
//! the absolute Wald statistic of the indicator regressor `1[x >= c]`.
//! Gating on a multiplicity-corrected test is what pins the probability of
//! any split under homogeneity near the nominal level.
//!
//! Routing convention everywhere: left child holds `x <= threshold`.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::lmm::fit_random_intercept;
use crate::matching::MatchedPairSet;

/// How leaf effects are computed: matched-pair means on the training pairs,
/// or arm-mean differences on an untouched holdout set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    Single,
    Double,
}

impl std::fmt::Display for EstimationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimationMode::Single => "single",
            EstimationMode::Double => "double",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        var: usize,
        threshold: f64,
        /// Per-covariate slope p-values computed at this node.
        p_values: Vec<f64>,
        /// `p_values[var]`, the gate winner.
        selected_p: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        /// Absent until [`estimate_effects`] runs, or when the holdout
        /// routed to this leaf lacks one arm entirely.
        effect: Option<f64>,
        n_pairs: usize,
        n_treated_holdout: usize,
        n_control_holdout: usize,
    },
}

impl Node {
    fn leaf(n_pairs: usize) -> Node {
        Node::Leaf {
            effect: None,
            n_pairs,
            n_treated_holdout: 0,
            n_control_holdout: 0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }
}

/// Fitted treatment-effect heterogeneity tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TehTree {
    root: Node,
    alpha: f64,
    min_node: usize,
    n_covariates: usize,
    annotated: bool,
    /// Root-level effect estimate (all pairs or full holdout), kept for
    /// imputing predictions in leaves that have no estimate of their own.
    overall_effect: Option<f64>,
}

impl TehTree {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn min_node(&self) -> usize {
        self.min_node
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn is_annotated(&self) -> bool {
        self.annotated
    }

    pub fn overall_effect(&self) -> Option<f64> {
        self.overall_effect
    }

    pub fn n_terminal(&self) -> usize {
        fn count(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 1,
                Node::Internal { left, right, .. } => count(left) + count(right),
            }
        }
        count(&self.root)
    }

    /// Root split, if any: (variable, threshold).
    pub fn first_split(&self) -> Option<(usize, f64)> {
        match &self.root {
            Node::Internal { var, threshold, .. } => Some((*var, *threshold)),
            Node::Leaf { .. } => None,
        }
    }

    /// Split variables in preorder, with multiplicity.
    pub fn split_vars(&self) -> Vec<usize> {
        fn walk(node: &Node, out: &mut Vec<usize>) {
            if let Node::Internal {
                var, left, right, ..
            } = node
            {
                out.push(*var);
                walk(left, out);
                walk(right, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Leaves in left-to-right order: (effect, n_pairs).
    pub fn leaves(&self) -> Vec<(Option<f64>, usize)> {
        fn walk(node: &Node, out: &mut Vec<(Option<f64>, usize)>) {
            match node {
                Node::Leaf {
                    effect, n_pairs, ..
                } => out.push((*effect, *n_pairs)),
                Node::Internal { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    /// Indented plain-text rendering of split rules, leaf effects, and
    /// sizes. `col_names` (when given) label the split variables.
    pub fn summary(&self, col_names: Option<&[String]>) -> String {
        fn name(var: usize, col_names: Option<&[String]>) -> String {
            col_names
                .and_then(|n| n.get(var).cloned())
                .unwrap_or_else(|| format!("x{}", var + 1))
        }
        fn walk(node: &Node, depth: usize, col_names: Option<&[String]>, out: &mut String) {
            let pad = "  ".repeat(depth);
            match node {
                Node::Internal {
                    var,
                    threshold,
                    selected_p,
                    left,
                    right,
                    ..
                } => {
                    out.push_str(&format!(
                        "{pad}split: {} <= {:.6} (p={:.4e})\n",
                        name(*var, col_names),
                        threshold,
                        selected_p
                    ));
                    walk(left, depth + 1, col_names, out);
                    walk(right, depth + 1, col_names, out);
                }
                Node::Leaf {
                    effect,
                    n_pairs,
                    n_treated_holdout,
                    n_control_holdout,
                } => {
                    let eff = match effect {
                        Some(e) => format!("{e:.6}"),
                        None => "NA (no estimate)".to_string(),
                    };
                    out.push_str(&format!("{pad}leaf: effect={eff}, pairs={n_pairs}"));
                    if n_treated_holdout + n_control_holdout > 0 {
                        out.push_str(&format!(
                            ", holdout={n_treated_holdout} treated / {n_control_holdout} control"
                        ));
                    }
                    out.push('\n');
                }
            }
        }
        let mut out = String::new();
        walk(&self.root, 0, col_names, &mut out);
        out
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&TreeJson::from(self)).expect("tree serializes")
    }

    pub fn from_json_str(s: &str) -> Result<TehTree> {
        let parsed: TreeJson = serde_json::from_str(s)?;
        parsed.try_into()
    }
}

/// Test every covariate at the node; return the winner and all p-values
/// iff the smallest clears the Bonferroni gate `alpha / p`. Ties go to the
/// lowest column index. Nodes too small to test (fewer than 4 rows) and
/// covariates that cannot be tested (constant in the node) never win.
pub fn select_split_variable(
    pairs: &MatchedPairSet,
    node_rows: &[usize],
    alpha: f64,
) -> Option<(usize, Vec<f64>)> {
    let p = pairs.x_treated.ncols();
    if node_rows.len() < 4 || p == 0 {
        return None;
    }
    let delta: Vec<f64> = node_rows.iter().map(|&l| pairs.delta[l]).collect();
    let group: Vec<usize> = node_rows.iter().map(|&l| pairs.group[l]).collect();
    let mut p_values = Vec::with_capacity(p);
    for j in 0..p {
        let x: Vec<f64> = node_rows
            .iter()
            .map(|&l| pairs.x_treated[[l, j]])
            .collect();
        let pv = match fit_random_intercept(&x, &delta, &group) {
            Ok(fit) => fit.p_value,
            Err(_) => 1.0,
        };
        p_values.push(pv);
    }
    let mut best = 0;
    for j in 1..p {
        if p_values[j] < p_values[best] {
            best = j;
        }
    }
    if p_values[best] < alpha / p as f64 {
        Some((best, p_values))
    } else {
        None
    }
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Best threshold for `var` within the node: over midpoints of consecutive
/// distinct values (children below `min_node` excluded), maximize the
/// absolute Wald statistic of the regressor `1[x >= c]`. Statistic ties
/// break toward the candidate nearest the node median. `None` when no
/// candidate is feasible.
pub fn find_split_point(
    pairs: &MatchedPairSet,
    node_rows: &[usize],
    var: usize,
    min_node: usize,
) -> Option<f64> {
    let values: Vec<f64> = node_rows
        .iter()
        .map(|&l| pairs.x_treated[[l, var]])
        .collect();
    let delta: Vec<f64> = node_rows.iter().map(|&l| pairs.delta[l]).collect();
    let group: Vec<usize> = node_rows.iter().map(|&l| pairs.group[l]).collect();
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let med = median_of_sorted(&sorted);

    let mut best: Option<(f64, f64)> = None; // (|t|, threshold)
    for t in 1..n {
        if sorted[t - 1] >= sorted[t] || t < min_node || n - t < min_node {
            continue;
        }
        let c = 0.5 * (sorted[t - 1] + sorted[t]);
        // A midpoint rounding onto an endpoint would starve one child.
        if !(c > sorted[t - 1] && c < sorted[t]) {
            continue;
        }
        let indicator: Vec<f64> = values.iter().map(|&x| f64::from(x >= c)).collect();
        let Ok(fit) = fit_random_intercept(&indicator, &delta, &group) else {
            continue;
        };
        let stat = fit.t_stat.abs();
        let better = match best {
            None => true,
            // Ascending scan: an equal-statistic candidate wins only by
            // being strictly closer to the median.
            Some((bs, bc)) => stat > bs || (stat == bs && (c - med).abs() < (bc - med).abs()),
        };
        if better {
            best = Some((stat, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Grow the tree by recursive gate-then-split. Recursion stops when the
/// gate fails, no feasible threshold exists, `max_depth` is reached, or a
/// node cannot give both children `min_node` pairs.
pub fn build_tree(
    pairs: &MatchedPairSet,
    alpha: f64,
    min_node: usize,
    max_depth: usize,
) -> Result<TehTree> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    if min_node == 0 {
        return Err(Error::Config("min_node must be at least 1".into()));
    }
    if pairs.len() < 2 * min_node {
        return Err(Error::Validation(format!(
            "{} pairs cannot give two children of {min_node}",
            pairs.len()
        )));
    }
    fn grow(
        pairs: &MatchedPairSet,
        rows: Vec<usize>,
        alpha: f64,
        min_node: usize,
        depth_left: usize,
    ) -> Node {
        if depth_left == 0 || rows.len() < 2 * min_node || rows.len() < 4 {
            return Node::leaf(rows.len());
        }
        let Some((var, p_values)) = select_split_variable(pairs, &rows, alpha) else {
            return Node::leaf(rows.len());
        };
        let Some(threshold) = find_split_point(pairs, &rows, var, min_node) else {
            return Node::leaf(rows.len());
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&l| pairs.x_treated[[l, var]] <= threshold);
        let selected_p = p_values[var];
        Node::Internal {
            var,
            threshold,
            p_values,
            selected_p,
            left: Box::new(grow(pairs, left_rows, alpha, min_node, depth_left - 1)),
            right: Box::new(grow(pairs, right_rows, alpha, min_node, depth_left - 1)),
        }
    }
    let rows: Vec<usize> = (0..pairs.len()).collect();
    let root = grow(pairs, rows, alpha, min_node, max_depth);
    Ok(TehTree {
        root,
        alpha,
        min_node,
        n_covariates: pairs.x_treated.ncols(),
        annotated: false,
        overall_effect: None,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn annotate_single(node: &mut Node, pairs: &MatchedPairSet, rows: Vec<usize>) {
    match node {
        Node::Leaf {
            effect, n_pairs, ..
        } => {
            *effect = mean(rows.iter().map(|&l| pairs.delta[l]));
            *n_pairs = rows.len();
        }
        Node::Internal {
            var,
            threshold,
            left,
            right,
            ..
        } => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| pairs.x_treated[[i, *var]] <= *threshold);
            annotate_single(left, pairs, l);
            annotate_single(right, pairs, r);
        }
    }
}

fn annotate_double(node: &mut Node, holdout: &TrialDataset, rows: Vec<usize>) {
    match node {
        Node::Leaf {
            effect,
            n_treated_holdout,
            n_control_holdout,
            ..
        } => {
            let treated = mean(
                rows.iter()
                    .filter(|&&i| holdout.z()[i] == 1)
                    .map(|&i| holdout.y()[i]),
            );
            let control = mean(
                rows.iter()
                    .filter(|&&i| holdout.z()[i] == 0)
                    .map(|&i| holdout.y()[i]),
            );
            *n_treated_holdout = rows.iter().filter(|&&i| holdout.z()[i] == 1).count();
            *n_control_holdout = rows.len() - *n_treated_holdout;
            *effect = match (treated, control) {
                (Some(t), Some(c)) => Some(t - c),
                _ => None,
            };
        }
        Node::Internal {
            var,
            threshold,
            left,
            right,
            ..
        } => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| holdout.x()[[i, *var]] <= *threshold);
            annotate_double(left, holdout, l);
            annotate_double(right, holdout, r);
        }
    }
}

/// Annotate every leaf with its treatment-effect estimate.
///
/// `Single`: the mean pair difference among training pairs routed to the
/// leaf. `Double`: holdout subjects are routed by their own covariates and
/// the leaf effect is the treated-control outcome mean difference; a leaf
/// whose holdout lacks an arm keeps `effect = None` with the arm counts
/// recorded.
pub fn estimate_effects(
    mut tree: TehTree,
    mode: EstimationMode,
    pairs: &MatchedPairSet,
    holdout: Option<&TrialDataset>,
) -> Result<TehTree> {
    match mode {
        EstimationMode::Single => {
            annotate_single(&mut tree.root, pairs, (0..pairs.len()).collect());
            tree.overall_effect = mean(pairs.delta.iter().copied());
        }
        EstimationMode::Double => {
            let h = holdout.ok_or_else(|| {
                Error::Config("double-sample estimation requires a holdout set".into())
            })?;
            if h.p() != tree.n_covariates {
                return Err(Error::Validation(format!(
                    "tree was built on {} covariates, holdout has {}",
                    tree.n_covariates,
                    h.p()
                )));
            }
            annotate_double(&mut tree.root, h, (0..h.n()).collect());
            let treated = mean(
                h.treated_indices().iter().map(|&i| h.y()[i]),
            );
            let control = mean(
                h.control_indices().iter().map(|&i| h.y()[i]),
            );
            tree.overall_effect = match (treated, control) {
                (Some(t), Some(c)) => Some(t - c),
                _ => None,
            };
        }
    }
    tree.annotated = true;
    Ok(tree)
}

/// Route a covariate row to its leaf and return the leaf effect (absent
/// when the leaf has none). Left child iff `x[var] <= threshold`.
pub fn predict_effect(tree: &TehTree, x_row: ArrayView1<f64>) -> Result<Option<f64>> {
    if !tree.annotated {
        return Err(Error::Validation(
            "tree has no effect estimates; run estimate_effects first".into(),
        ));
    }
    if x_row.len() != tree.n_covariates {
        return Err(Error::Validation(format!(
            "tree uses {} covariates, row has {}",
            tree.n_covariates,
            x_row.len()
        )));
    }
    let mut node = &tree.root;
    loop {
        match node {
            Node::Leaf { effect, .. } => return Ok(*effect),
            Node::Internal {
                var,
                threshold,
                left,
                right,
                ..
            } => {
                node = if x_row[*var] <= *threshold { left } else { right };
            }
        }
    }
}

/// Serialized form. Internal nodes are `{var, threshold, p, children}`,
/// leaves `{effect, n}`; the wrapper carries the fit settings.
#[derive(Serialize, Deserialize)]
struct TreeJson {
    alpha: f64,
    min_node: usize,
    n_covariates: usize,
    annotated: bool,
    overall_effect: Option<f64>,
    root: NodeJson,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeJson {
    Internal {
        var: usize,
        threshold: f64,
        p: f64,
        children: Vec<NodeJson>,
    },
    Leaf {
        effect: Option<f64>,
        n: usize,
    },
}

impl From<&Node> for NodeJson {
    fn from(node: &Node) -> NodeJson {
        match node {
            Node::Internal {
                var,
                threshold,
                selected_p,
                left,
                right,
                ..
            } => NodeJson::Internal {
                var: *var,
                threshold: *threshold,
                p: *selected_p,
                children: vec![NodeJson::from(left.as_ref()), NodeJson::from(right.as_ref())],
            },
            Node::Leaf {
                effect, n_pairs, ..
            } => NodeJson::Leaf {
                effect: *effect,
                n: *n_pairs,
            },
        }
    }
}

impl From<&TehTree> for TreeJson {
    fn from(tree: &TehTree) -> TreeJson {
        TreeJson {
            alpha: tree.alpha,
            min_node: tree.min_node,
            n_covariates: tree.n_covariates,
            annotated: tree.annotated,
            overall_effect: tree.overall_effect,
            root: NodeJson::from(&tree.root),
        }
    }
}

impl TryFrom<NodeJson> for Node {
    type Error = Error;

    fn try_from(value: NodeJson) -> Result<Node> {
        Ok(match value {
            NodeJson::Internal {
                var,
                threshold,
                p,
                children,
            } => {
                if children.len() != 2 {
                    return Err(Error::Validation(format!(
                        "internal node must have 2 children, found {}",
                        children.len()
                    )));
                }
                let mut it = children.into_iter();
                let left = Node::try_from(it.next().unwrap())?;
                let right = Node::try_from(it.next().unwrap())?;
                Node::Internal {
                    var,
                    threshold,
                    p_values: Vec::new(),
                    selected_p: p,
                    left: Box::new(left),
                    right: Box::new(right),
                }
            }
            NodeJson::Leaf { effect, n } => Node::Leaf {
                effect,
                n_pairs: n,
                n_treated_holdout: 0,
                n_control_holdout: 0,
            },
        })
    }
}

impl TryFrom<TreeJson> for TehTree {
    type Error = Error;

    fn try_from(value: TreeJson) -> Result<TehTree> {
        Ok(TehTree {
            root: Node::try_from(value.root)?,
            alpha: value.alpha,
            min_node: value.min_node,
            n_covariates: value.n_covariates,
            annotated: value.annotated,
            overall_effect: value.overall_effect,
        })
    }
}

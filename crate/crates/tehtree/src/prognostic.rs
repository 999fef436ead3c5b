//! Prognostic score estimation: a stacked ensemble fit on the control arm.
//!
//! The prognostic score is the expected control outcome given covariates,
//! `phi(x) = E(Y | Z=0, X=x)`. It is estimated by stacking five base
//! learners of deliberately different flavor (constant, linear, pairwise
//! interactions, bagged stumps, k-nearest-neighbor), combined with simplex
//! weights chosen to minimize the V-fold cross-validated squared error of
//! the blend. Stacking keeps the ensemble at least as good, in CV risk, as
//! the best single learner.
//!
//! All learners fit on controls only. Randomness (fold assignment,
//! bootstrap draws) flows through derived streams keyed by learner and
//! fold, so fits are reproducible and independent of evaluation order.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::rng::{stream, stream_rng};

/// Ridge scale for the linear learners: penalty = scale * trace(gram).
const RIDGE_SCALE: f64 = 1e-8;
const N_STUMPS: usize = 200;
/// Fixed-point residual at which the simplex weight search stops.
const STATIONARITY_TOL: f64 = 1e-10;
const MAX_PG_ITERS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LearnerKind {
    Mean,
    Linear,
    Interactions,
    Stumps,
    Knn,
}

impl LearnerKind {
    fn name(self) -> &'static str {
        match self {
            LearnerKind::Mean => "mean",
            LearnerKind::Linear => "linear",
            LearnerKind::Interactions => "interactions",
            LearnerKind::Stumps => "stumps",
            LearnerKind::Knn => "knn",
        }
    }
}

/// Linear model on centered features, optionally expanded with all
/// pairwise products. Ridge keeps the normal equations well posed.
#[derive(Debug, Clone)]
struct LinearModel {
    pairwise: bool,
    feat_mean: Vec<f64>,
    y_mean: f64,
    beta: Vec<f64>,
}

fn expand_features(x: ArrayView1<f64>, pairwise: bool, out: &mut Vec<f64>) {
    out.clear();
    out.extend(x.iter());
    if pairwise {
        let p = x.len();
        for i in 0..p {
            for j in (i + 1)..p {
                out.push(x[i] * x[j]);
            }
        }
    }
}

fn fit_linear(x: ArrayView2<f64>, y: &[f64], pairwise: bool) -> Result<LinearModel> {
    let n = x.nrows();
    let mut feats: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut buf = Vec::new();
    for i in 0..n {
        expand_features(x.row(i), pairwise, &mut buf);
        feats.push(buf.clone());
    }
    let q = feats[0].len();
    let nf = n as f64;
    let mut feat_mean = vec![0.0; q];
    for row in &feats {
        for (m, v) in feat_mean.iter_mut().zip(row) {
            *m += v / nf;
        }
    }
    let y_mean = y.iter().sum::<f64>() / nf;

    let mut gram = Array2::zeros((q, q));
    let mut fy = Array1::zeros(q);
    let mut c = vec![0.0; q];
    for (row, &yi) in feats.iter().zip(y) {
        for k in 0..q {
            c[k] = row[k] - feat_mean[k];
        }
        for a in 0..q {
            for b in a..q {
                gram[[a, b]] += c[a] * c[b];
            }
            fy[a] += c[a] * (yi - y_mean);
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
    }
    let trace: f64 = gram.diag().sum();
    let ridge = if trace > 0.0 { RIDGE_SCALE * trace } else { 1.0 };
    for a in 0..q {
        gram[[a, a]] += ridge;
    }
    let beta = solve_spd(&gram, &fy)?;
    Ok(LinearModel {
        pairwise,
        feat_mean,
        y_mean,
        beta: beta.to_vec(),
    })
}

impl LinearModel {
    fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut buf = Vec::with_capacity(self.beta.len());
        expand_features(x, self.pairwise, &mut buf);
        let mut out = self.y_mean;
        for k in 0..buf.len() {
            out += self.beta[k] * (buf[k] - self.feat_mean[k]);
        }
        out
    }
}

/// One bagged regression stump: a single split on one feature.
#[derive(Debug, Clone)]
struct Stump {
    feature: usize,
    threshold: f64,
    left: f64,
    right: f64,
}

#[derive(Debug, Clone)]
struct StumpEnsemble {
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    stumps: Vec<Stump>,
}

fn standardize_stats(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let mut mean = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        let col = x.column(j);
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[j] = m;
        sd[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

fn fit_stumps(x: ArrayView2<f64>, y: &[f64], rng: &mut impl Rng) -> StumpEnsemble {
    let n = x.nrows();
    let p = x.ncols();
    let (x_mean, x_sd) = standardize_stats(x);
    let mut stumps = Vec::with_capacity(N_STUMPS);
    let mut sample: Vec<(f64, f64)> = Vec::with_capacity(n);
    for _ in 0..N_STUMPS {
        let feature = rng.random_range(0..p);
        sample.clear();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            let v = (x[[i, feature]] - x_mean[feature]) / x_sd[feature];
            sample.push((v, y[i]));
        }
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let total: f64 = sample.iter().map(|&(_, yv)| yv).sum();
        let total2: f64 = sample.iter().map(|&(_, yv)| yv * yv).sum();
        let mut best: Option<(f64, f64, f64, f64)> = None; // (sse, thr, left, right)
        let mut sy = 0.0;
        let mut sy2 = 0.0;
        for t in 1..n {
            sy += sample[t - 1].1;
            sy2 += sample[t - 1].1 * sample[t - 1].1;
            if sample[t - 1].0 >= sample[t].0 {
                continue;
            }
            let nl = t as f64;
            let nr = (n - t) as f64;
            let sse = (sy2 - sy * sy / nl) + ((total2 - sy2) - (total - sy) * (total - sy) / nr);
            if best.is_none() || sse < best.unwrap().0 {
                let thr = 0.5 * (sample[t - 1].0 + sample[t].0);
                best = Some((sse, thr, sy / nl, (total - sy) / nr));
            }
        }
        let stump = match best {
            Some((_, threshold, left, right)) => Stump {
                feature,
                threshold,
                left,
                right,
            },
            // Feature constant in the bootstrap draw: constant prediction.
            None => Stump {
                feature,
                threshold: 0.0,
                left: total / n as f64,
                right: total / n as f64,
            },
        };
        stumps.push(stump);
    }
    StumpEnsemble {
        x_mean,
        x_sd,
        stumps,
    }
}

impl StumpEnsemble {
    fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut sum = 0.0;
        for s in &self.stumps {
            let v = (x[s.feature] - self.x_mean[s.feature]) / self.x_sd[s.feature];
            sum += if v <= s.threshold { s.left } else { s.right };
        }
        sum / self.stumps.len() as f64
    }
}

/// k-nearest-neighbor mean on standardized covariates, k = ceil(sqrt(n)).
#[derive(Debug, Clone)]
struct KnnModel {
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    x_std: Array2<f64>,
    y: Vec<f64>,
    k: usize,
}

fn fit_knn(x: ArrayView2<f64>, y: &[f64]) -> KnnModel {
    let n = x.nrows();
    let p = x.ncols();
    let (x_mean, x_sd) = standardize_stats(x);
    let mut x_std = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            x_std[[i, j]] = (x[[i, j]] - x_mean[j]) / x_sd[j];
        }
    }
    let k = (n as f64).sqrt().ceil() as usize;
    KnnModel {
        x_mean,
        x_sd,
        x_std,
        y: y.to_vec(),
        k,
    }
}

impl KnnModel {
    fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let n = self.x_std.nrows();
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            let mut d2 = 0.0;
            for j in 0..x.len() {
                let diff = (x[j] - self.x_mean[j]) / self.x_sd[j] - self.x_std[[i, j]];
                d2 += diff * diff;
            }
            dist.push((d2, i));
        }
        let k = self.k.min(n);
        dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
        dist[..k].iter().map(|&(_, i)| self.y[i]).sum::<f64>() / k as f64
    }
}

#[derive(Debug, Clone)]
enum Learner {
    Mean(f64),
    Linear(LinearModel),
    Interactions(LinearModel),
    Stumps(StumpEnsemble),
    Knn(KnnModel),
}

impl Learner {
    fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            Learner::Mean(v) => *v,
            Learner::Linear(m) | Learner::Interactions(m) => m.predict_row(x),
            Learner::Stumps(m) => m.predict_row(x),
            Learner::Knn(m) => m.predict_row(x),
        }
    }
}

fn fit_kind(
    kind: LearnerKind,
    x: ArrayView2<f64>,
    y: &[f64],
    rng: &mut impl Rng,
) -> Result<Learner> {
    Ok(match kind {
        LearnerKind::Mean => Learner::Mean(y.iter().sum::<f64>() / y.len() as f64),
        LearnerKind::Linear => Learner::Linear(fit_linear(x, y, false)?),
        LearnerKind::Interactions => Learner::Interactions(fit_linear(x, y, true)?),
        LearnerKind::Stumps => Learner::Stumps(fit_stumps(x, y, rng)),
        LearnerKind::Knn => Learner::Knn(fit_knn(x, y)),
    })
}

/// The interaction learner joins the roster only when its coefficient
/// count stays below half the control-arm size.
fn roster(p: usize, n_controls: usize) -> Vec<LearnerKind> {
    let mut kinds = vec![LearnerKind::Mean, LearnerKind::Linear];
    let interaction_terms = p + p * (p - 1) / 2;
    if 2 * interaction_terms < n_controls {
        kinds.push(LearnerKind::Interactions);
    }
    kinds.push(LearnerKind::Stumps);
    kinds.push(LearnerKind::Knn);
    kinds
}

/// Fitted stacked ensemble for the prognostic score.
#[derive(Debug, Clone)]
pub struct PrognosticModel {
    kinds: Vec<LearnerKind>,
    learners: Vec<Learner>,
    weights: Vec<f64>,
    cv_risk: Vec<f64>,
    ensemble_cv_risk: f64,
    p: usize,
    /// Control rows (into the fitting dataset) and their out-of-fold
    /// ensemble predictions, for leakage-free scoring of the fit sample.
    control_rows: Vec<usize>,
    control_cv_scores: Vec<f64>,
}

impl PrognosticModel {
    /// Simplex stacking weights, aligned with [`Self::learner_names`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// V-fold CV mean squared error per learner.
    pub fn cv_risk(&self) -> &[f64] {
        &self.cv_risk
    }

    /// CV mean squared error of the weighted blend (the stacking objective
    /// at the returned weights).
    pub fn ensemble_cv_risk(&self) -> f64 {
        self.ensemble_cv_risk
    }

    pub fn learner_names(&self) -> Vec<&'static str> {
        self.kinds.iter().map(|k| k.name()).collect()
    }

    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        self.learners
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * l.predict_row(x))
            .sum()
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        prefix += ui;
        let t = (prefix - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Lawson-Hanson non-negative least squares on the normal equations.
/// Ties in the entering-variable choice go to the lowest index.
fn nnls(ata: &Array2<f64>, atb: &Array1<f64>) -> Vec<f64> {
    let m = atb.len();
    let mut w = vec![0.0; m];
    let mut passive = vec![false; m];
    let scale = ata.diag().iter().cloned().fold(0.0, f64::max).max(1.0);
    let tol = 1e-12 * scale;

    let solve_passive = |passive: &[bool], w_out: &mut Vec<f64>| -> bool {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let q = idx.len();
        let mut a = Array2::zeros((q, q));
        let mut b = Array1::zeros(q);
        for (r, &jr) in idx.iter().enumerate() {
            for (c, &jc) in idx.iter().enumerate() {
                a[[r, c]] = ata[[jr, jc]];
            }
            b[r] = atb[jr];
        }
        let z = solve_spd(&a, &b).or_else(|_| {
            // Duplicate predictions make the gram singular; a whisper of
            // ridge restores a deterministic solution.
            let mut ar = a.clone();
            let tr: f64 = ar.diag().sum();
            for r in 0..q {
                ar[[r, r]] += 1e-12 * tr.max(1.0);
            }
            solve_spd(&ar, &b)
        });
        match z {
            Ok(z) => {
                w_out.clear();
                w_out.resize(m, 0.0);
                for (r, &j) in idx.iter().enumerate() {
                    w_out[j] = z[r];
                }
                true
            }
            Err(_) => false,
        }
    };

    for _outer in 0..(4 * m) {
        let mut grad = vec![0.0; m];
        for j in 0..m {
            grad[j] = atb[j] - (0..m).map(|k| ata[[j, k]] * w[k]).sum::<f64>();
        }
        let entering = (0..m)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&a, &b| {
                grad[a]
                    .partial_cmp(&grad[b])
                    .unwrap()
                    .then(b.cmp(&a)) // prefer the lower index on exact ties
            });
        let Some(j) = entering else { break };
        passive[j] = true;

        loop {
            let mut z = Vec::new();
            if !solve_passive(&passive, &mut z) {
                passive[j] = false;
                break;
            }
            let violating: Vec<usize> = (0..m)
                .filter(|&k| passive[k] && z[k] <= 0.0)
                .collect();
            if violating.is_empty() {
                w = z;
                break;
            }
            let alpha = violating
                .iter()
                .map(|&k| w[k] / (w[k] - z[k]))
                .fold(f64::INFINITY, f64::min)
                .clamp(0.0, 1.0);
            for k in 0..m {
                if passive[k] {
                    w[k] += alpha * (z[k] - w[k]);
                    if w[k] <= tol {
                        w[k] = 0.0;
                        passive[k] = false;
                    }
                }
            }
        }
    }
    w
}

/// Minimize mean squared stacking error over the simplex: NNLS plus
/// renormalization for a warm start, then fixed-step projected gradient to
/// a 1e-10 fixed point. Monotone descent from the better of the warm start
/// and the single best learner guarantees the blend never loses to a
/// single learner on the stacking objective.
fn stack_weights(cv_pred: &Array2<f64>, y: &[f64], cv_risk: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let m = cv_pred.ncols();
    let mut ata = Array2::zeros((m, m));
    let mut atb = Array1::zeros(m);
    for i in 0..y.len() {
        for a in 0..m {
            for b in 0..m {
                ata[[a, b]] += cv_pred[[i, a]] * cv_pred[[i, b]];
            }
            atb[a] += cv_pred[[i, a]] * y[i];
        }
    }
    let objective = |w: &[f64]| -> f64 {
        let mut sse = 0.0;
        for i in 0..y.len() {
            let pred: f64 = (0..m).map(|a| w[a] * cv_pred[[i, a]]).sum();
            sse += (y[i] - pred) * (y[i] - pred);
        }
        sse / n
    };

    let raw = nnls(&ata, &atb);
    let sum: f64 = raw.iter().sum();
    let best_single = cv_risk
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let mut vertex = vec![0.0; m];
    vertex[best_single] = 1.0;
    let warm = if sum > 0.0 {
        raw.iter().map(|v| v / sum).collect::<Vec<_>>()
    } else {
        vertex.clone()
    };
    let mut w = if objective(&warm) <= objective(&vertex) {
        warm
    } else {
        vertex
    };

    let lipschitz = 2.0 * ata.diag().sum() / n;
    let step = 1.0 / lipschitz.max(1e-12);
    for _ in 0..MAX_PG_ITERS {
        let mut trial = vec![0.0; m];
        for a in 0..m {
            let grad = (2.0 / n) * ((0..m).map(|b| ata[[a, b]] * w[b]).sum::<f64>() - atb[a]);
            trial[a] = w[a] - step * grad;
        }
        let next = project_simplex(&trial);
        let residual = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if residual <= STATIONARITY_TOL {
            break;
        }
    }
    w
}

/// Fit the stacked prognostic model on the control arm.
pub fn fit_prognostic(data: &TrialDataset, folds: usize, seed: u64) -> Result<PrognosticModel> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let controls = data.control_indices();
    let nc = controls.len();
    if nc < 2 * folds {
        return Err(Error::Validation(format!(
            "control arm has {nc} subjects; {folds}-fold stacking needs at least {}",
            2 * folds
        )));
    }
    let p = data.p();
    let mut x_ctrl = Array2::zeros((nc, p));
    let mut y_ctrl = vec![0.0; nc];
    for (r, &i) in controls.iter().enumerate() {
        x_ctrl.row_mut(r).assign(&data.x_row(i));
        y_ctrl[r] = data.y()[i];
    }

    let mut order: Vec<usize> = (0..nc).collect();
    order.shuffle(&mut stream_rng(seed, &[stream::FOLDS]));
    let mut fold_of = vec![0usize; nc];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let kinds = roster(p, nc);
    let m = kinds.len();
    let mut cv_pred = Array2::zeros((nc, m));
    for f in 0..folds {
        let train: Vec<usize> = (0..nc).filter(|&i| fold_of[i] != f).collect();
        let mut xt = Array2::zeros((train.len(), p));
        let mut yt = vec![0.0; train.len()];
        for (r, &i) in train.iter().enumerate() {
            xt.row_mut(r).assign(&x_ctrl.row(i));
            yt[r] = y_ctrl[i];
        }
        for (mi, &kind) in kinds.iter().enumerate() {
            let mut rng = stream_rng(seed, &[stream::LEARNER, mi as u64, f as u64]);
            let learner = fit_kind(kind, xt.view(), &yt, &mut rng)?;
            for i in 0..nc {
                if fold_of[i] == f {
                    cv_pred[[i, mi]] = learner.predict_row(x_ctrl.row(i));
                }
            }
        }
    }

    let cv_risk: Vec<f64> = (0..m)
        .map(|mi| {
            (0..nc)
                .map(|i| (y_ctrl[i] - cv_pred[[i, mi]]).powi(2))
                .sum::<f64>()
                / nc as f64
        })
        .collect();
    let weights = stack_weights(&cv_pred, &y_ctrl, &cv_risk);
    let ensemble_cv_risk = (0..nc)
        .map(|i| {
            let pred: f64 = (0..m).map(|mi| weights[mi] * cv_pred[[i, mi]]).sum();
            (y_ctrl[i] - pred).powi(2)
        })
        .sum::<f64>()
        / nc as f64;

    let mut learners = Vec::with_capacity(m);
    for (mi, &kind) in kinds.iter().enumerate() {
        let mut rng = stream_rng(seed, &[stream::LEARNER, mi as u64, folds as u64]);
        learners.push(fit_kind(kind, x_ctrl.view(), &y_ctrl, &mut rng)?);
    }
    let control_cv_scores: Vec<f64> = (0..nc)
        .map(|i| (0..m).map(|mi| weights[mi] * cv_pred[[i, mi]]).sum())
        .collect();
    Ok(PrognosticModel {
        kinds,
        learners,
        weights,
        cv_risk,
        ensemble_cv_risk,
        p,
        control_rows: controls,
        control_cv_scores,
    })
}

/// Ensemble predictions, one per row of `x`.
pub fn predict_prognostic(model: &PrognosticModel, x: &Array2<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.p {
        return Err(Error::Validation(format!(
            "model was fit on {} covariates, query has {}",
            model.p,
            x.ncols()
        )));
    }
    Ok((0..x.nrows()).map(|i| model.predict_row(x.row(i))).collect())
}

/// Scores for the rows of the dataset the model was fit on. Treated rows
/// get the full ensemble prediction; control rows get their out-of-fold
/// prediction, so a control's own outcome never leaks into the score it
/// is matched by. In-sample scores would make nearest-score matching
/// prefer controls whose noise drifted toward the treated value, biasing
/// the pair differences.
pub fn training_scores(model: &PrognosticModel, data: &TrialDataset) -> Result<Vec<f64>> {
    if data.control_indices() != model.control_rows {
        return Err(Error::Validation(
            "training_scores needs the same dataset the model was fit on".into(),
        ));
    }
    let mut scores = predict_prognostic(model, data.x())?;
    for (pos, &row) in model.control_rows.iter().enumerate() {
        scores[row] = model.control_cv_scores[pos];
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    const BETA: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

    fn dataset(
        n_ctrl: usize,
        p: usize,
        seed: u64,
        f: impl Fn(ArrayView1<f64>, &mut rand_chacha::ChaCha8Rng) -> f64,
    ) -> TrialDataset {
        let mut rng = stream_rng(seed, &[0xfeed]);
        let n = n_ctrl + 4;
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            y.push(f(x.row(i), &mut rng));
        }
        let z: Vec<u8> = (0..n).map(|i| (i >= n_ctrl) as u8).collect();
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        TrialDataset::new(y, z, x, names).unwrap()
    }

    #[test]
    fn constant_outcome_gives_constant_ensemble() {
        let data = dataset(40, 2, 1, |_, _| 3.0);
        let model = fit_prognostic(&data, 10, 9).unwrap();
        let probe = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64 - 2.0);
        let preds = predict_prognostic(&model, &probe).unwrap();
        for v in preds {
            assert!((v - 3.0).abs() < 1e-9, "expected 3.0, got {v}");
        }
        for &r in model.cv_risk() {
            assert!(r < 1e-12, "cv risk {r} should vanish");
        }
        assert!((model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noiseless_linear_concentrates_on_linear_learner() {
        let data = dataset(200, 5, 2, |x, _| {
            0.8 + x.iter().zip(BETA).map(|(v, b)| v * b).sum::<f64>()
        });
        let model = fit_prognostic(&data, 10, 4).unwrap();
        let idx = model
            .learner_names()
            .iter()
            .position(|&n| n == "linear")
            .unwrap();
        assert!(
            model.cv_risk()[idx] < 1e-6,
            "linear cv risk {} should be negligible",
            model.cv_risk()[idx]
        );
        assert!(
            model.weights()[idx] > 0.99,
            "linear weight {} should dominate",
            model.weights()[idx]
        );
        let zero = Array2::zeros((1, 5));
        let at_zero = predict_prognostic(&model, &zero).unwrap()[0];
        assert!((at_zero - 0.8).abs() < 1e-3, "phi(0) = {at_zero}");
        let mut rng = stream_rng(5, &[0xabc]);
        let probe = Array2::from_shape_fn((20, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let preds = predict_prognostic(&model, &probe).unwrap();
        for (i, pred) in preds.iter().enumerate() {
            let truth =
                0.8 + probe.row(i).iter().zip(BETA).map(|(v, b)| v * b).sum::<f64>();
            assert!((pred - truth).abs() < 1e-3, "pred {pred} vs truth {truth}");
        }
    }

    #[test]
    fn blend_never_loses_to_best_single_learner() {
        for seed in 0..20 {
            let data = dataset(60, 3, 100 + seed, |x, rng| {
                x[0] * x[1] + 0.5 * x[2] + rng.sample::<f64, _>(StandardNormal)
            });
            let model = fit_prognostic(&data, 5, seed).unwrap();
            let best = model.cv_risk().iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                model.ensemble_cv_risk() <= best + 1e-8,
                "seed {seed}: blend {} vs best {best}",
                model.ensemble_cv_risk()
            );
            let sum: f64 = model.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
            assert!(model.weights().iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn predictions_commute_with_row_permutation() {
        let data = dataset(30, 3, 7, |x, _| x[0] - x[2]);
        let model = fit_prognostic(&data, 5, 3).unwrap();
        let mut rng = stream_rng(8, &[1]);
        let probe = Array2::from_shape_fn((10, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let forward = predict_prognostic(&model, &probe).unwrap();
        let mut rev = Array2::zeros((10, 3));
        for i in 0..10 {
            rev.row_mut(i).assign(&probe.row(9 - i));
        }
        let backward = predict_prognostic(&model, &rev).unwrap();
        for i in 0..10 {
            assert_eq!(forward[i], backward[9 - i]);
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let data = dataset(40, 4, 11, |x, rng| {
            x[0] + rng.sample::<f64, _>(StandardNormal)
        });
        let a = fit_prognostic(&data, 5, 21).unwrap();
        let b = fit_prognostic(&data, 5, 21).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_eq!(a.cv_risk(), b.cv_risk());
        let probe = Array2::from_shape_fn((1, 4), |(_, j)| j as f64 * 0.3);
        assert_eq!(
            predict_prognostic(&a, &probe).unwrap(),
            predict_prognostic(&b, &probe).unwrap()
        );
        let c = fit_prognostic(&data, 5, 22).unwrap();
        assert_ne!(
            predict_prognostic(&a, &probe).unwrap(),
            predict_prognostic(&c, &probe).unwrap()
        );
    }

    #[test]
    fn interaction_learner_obeys_size_rule() {
        // p=10 gives 55 coefficients; with 40 controls it must sit out.
        let small = dataset(40, 10, 3, |x, _| x[0]);
        let model = fit_prognostic(&small, 5, 1).unwrap();
        assert!(!model.learner_names().contains(&"interactions"));
        // p=2 gives 3 coefficients; with 100 controls it joins.
        let wide = dataset(100, 2, 3, |x, _| x[0]);
        let model = fit_prognostic(&wide, 5, 1).unwrap();
        assert!(model.learner_names().contains(&"interactions"));
    }

    #[test]
    fn degenerate_weight_vector_is_pure_single_learner() {
        let data = dataset(30, 2, 5, |x, _| x[0]);
        let mut model = fit_prognostic(&data, 5, 2).unwrap();
        let m = model.weights.len();
        model.weights = vec![0.0; m];
        model.weights[0] = 1.0;
        let probe = Array2::from_shape_fn((1, 2), |(_, j)| 0.7 - j as f64);
        let blended = model.predict_row(probe.row(0));
        let single = model.learners[0].predict_row(probe.row(0));
        assert_eq!(blended, single);
    }

    #[test]
    fn rejects_small_control_arm_and_bad_dims() {
        let data = dataset(10, 2, 5, |x, _| x[0]);
        assert!(fit_prognostic(&data, 10, 1).is_err());
        let model = fit_prognostic(&dataset(30, 2, 5, |x, _| x[0]), 5, 1).unwrap();
        let probe = Array2::zeros((2, 3));
        assert!(predict_prognostic(&model, &probe).is_err());
    }
}

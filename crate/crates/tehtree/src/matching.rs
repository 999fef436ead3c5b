//! Nearest-neighbor matching of treated to control subjects on the
//! prognostic score, with replacement.
//!
//! Each treated subject is paired with the control whose score is closest
//! in absolute distance. Controls may serve several treated subjects; the
//! dense `group` vector records which pairs share a control so the
//! downstream mixed model can absorb the induced correlation. Distance
//! ties (within 1e-12, since exact float equality is meaningless) are
//! broken uniformly at random from a per-treated-subject derived stream,
//! making the pairing reproducible and independent of iteration order.

use ndarray::Array2;
use rand::Rng;

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Distances closer than this to the minimum count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Matched treated-control pairs with within-pair outcome differences.
#[derive(Debug, Clone)]
pub struct MatchedPairSet {
    /// (treated index, control index) into the source dataset, ordered by
    /// treated index. Treated indices are distinct; controls may repeat.
    pub pairs: Vec<(usize, usize)>,
    /// `delta[l] = y[treated_l] - y[control_l]`.
    pub delta: Vec<f64>,
    /// Dense re-index of the control member: `group[l1] == group[l2]` iff
    /// the pairs share a control. First-appearance order.
    pub group: Vec<usize>,
    /// Covariates of the treated member, row per pair: the tree's features.
    pub x_treated: Array2<f64>,
}

impl MatchedPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of distinct controls used.
    pub fn n_controls(&self) -> usize {
        self.group.iter().copied().max().map_or(0, |g| g + 1)
    }

    /// Row subset in the given order, re-densifying groups.
    pub fn subset(&self, rows: &[usize]) -> MatchedPairSet {
        let pairs: Vec<_> = rows.iter().map(|&l| self.pairs[l]).collect();
        let delta: Vec<_> = rows.iter().map(|&l| self.delta[l]).collect();
        let mut labels: Vec<usize> = Vec::new();
        let group = rows
            .iter()
            .map(|&l| {
                let old = self.group[l];
                labels.iter().position(|&v| v == old).unwrap_or_else(|| {
                    labels.push(old);
                    labels.len() - 1
                })
            })
            .collect();
        let mut x_treated = Array2::zeros((rows.len(), self.x_treated.ncols()));
        for (r, &l) in rows.iter().enumerate() {
            x_treated.row_mut(r).assign(&self.x_treated.row(l));
        }
        MatchedPairSet {
            pairs,
            delta,
            group,
            x_treated,
        }
    }
}

/// Match every treated subject to its nearest control by score.
pub fn match_pairs(data: &TrialDataset, scores: &[f64], seed: u64) -> Result<MatchedPairSet> {
    let (set, dropped) = match_pairs_caliper(data, scores, seed, None)?;
    debug_assert!(dropped.is_empty());
    Ok(set)
}

/// As [`match_pairs`], but discard pairs whose score distance exceeds
/// `caliper`. Returns the kept pairs and the treated indices dropped.
pub fn match_pairs_caliper(
    data: &TrialDataset,
    scores: &[f64],
    seed: u64,
    caliper: Option<f64>,
) -> Result<(MatchedPairSet, Vec<usize>)> {
    if scores.len() != data.n() {
        return Err(Error::Validation(format!(
            "{} scores for {} subjects",
            scores.len(),
            data.n()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite score at row {}",
            i + 1
        )));
    }
    if let Some(c) = caliper {
        if !(c > 0.0) {
            return Err(Error::Config(format!("caliper must be > 0, got {c}")));
        }
    }
    let treated = data.treated_indices();
    let controls = data.control_indices();

    // Controls sorted by (score, index); nearest neighbors of any query are
    // contiguous around its insertion point.
    let mut by_score: Vec<(f64, usize)> = controls.iter().map(|&j| (scores[j], j)).collect();
    by_score.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut pairs = Vec::with_capacity(treated.len());
    let mut dropped = Vec::new();
    for &i in &treated {
        let s = scores[i];
        let pos = by_score.partition_point(|&(sc, _)| sc < s);
        let dist_at = |k: usize| (by_score[k].0 - s).abs();
        let mut best = f64::INFINITY;
        if pos < by_score.len() {
            best = best.min(dist_at(pos));
        }
        if pos > 0 {
            best = best.min(dist_at(pos - 1));
        }
        // Walk outward collecting everything within the tie tolerance.
        let mut ties: Vec<usize> = Vec::new();
        let mut k = pos;
        while k < by_score.len() && dist_at(k) <= best + TIE_TOL {
            ties.push(by_score[k].1);
            k += 1;
        }
        let mut k = pos;
        while k > 0 && dist_at(k - 1) <= best + TIE_TOL {
            ties.push(by_score[k - 1].1);
            k -= 1;
        }
        if let Some(c) = caliper {
            if best > c {
                dropped.push(i);
                continue;
            }
        }
        ties.sort_unstable();
        let chosen = if ties.len() == 1 {
            ties[0]
        } else {
            let mut rng = stream_rng(seed, &[stream::MATCH, i as u64]);
            ties[rng.random_range(0..ties.len())]
        };
        pairs.push((i, chosen));
    }
    if pairs.is_empty() {
        return Err(Error::Validation(
            "caliper rejected every pair; nothing to analyze".into(),
        ));
    }

    let delta: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| data.y()[i] - data.y()[j])
        .collect();
    let mut labels: Vec<usize> = Vec::new();
    let group: Vec<usize> = pairs
        .iter()
        .map(|&(_, j)| {
            labels.iter().position(|&v| v == j).unwrap_or_else(|| {
                labels.push(j);
                labels.len() - 1
            })
        })
        .collect();
    let mut x_treated = Array2::zeros((pairs.len(), data.p()));
    for (l, &(i, _)) in pairs.iter().enumerate() {
        x_treated.row_mut(l).assign(&data.x_row(i));
    }
    Ok((
        MatchedPairSet {
            pairs,
            delta,
            group,
            x_treated,
        },
        dropped,
    ))
}

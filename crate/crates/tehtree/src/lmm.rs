//! Random-intercept linear mixed model for matched-pair differences.
//!
//! Model: `delta_l = beta0 + beta1 * x_l + b_{g(l)} + e_l` with
//! `b_j ~ N(0, tau2)` i.i.d. per group and `e_l ~ N(0, sigma2)`. Groups
//! index the shared control subject, so pairs reusing one control are
//! correlated. Estimation is REML: with `lambda = tau2 / sigma2` the
//! covariance is `sigma2 * W`, `W = I + lambda Z Z'`, and both `beta` and
//! `sigma2` profile out in closed form, leaving a one-dimensional search
//! over `lambda`.
//!
//! `W` is block diagonal with blocks `I + lambda 1 1'`, so each criterion
//! evaluation is O(number of groups) given per-group sums: the inverse
//! block is `I - c 1 1'` with `c = lambda / (1 + lambda m)` and the block
//! log-determinant is `log(1 + lambda m)`.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;
/// Search range for `lambda`, the variance ratio. Endpoints are far enough
/// out that the boundary fits are indistinguishable from tau2 = 0 or from a
/// pure group-effect model.
const LAMBDA_LO: f64 = 1e-8;
const LAMBDA_HI: f64 = 1e8;
const GRID_POINTS: usize = 65;
const GOLDEN_TOL: f64 = 1e-10;

/// REML fit of the random-intercept model, with the Wald test of the slope.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmmFit {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2: f64,
    pub tau2: f64,
    pub se_beta1: f64,
    pub t_stat: f64,
    /// Degrees of freedom for the t reference: `n - g - 1` (floored at 1)
    /// with `g` distinct groups, or `n - 2` when every group is a singleton.
    pub df: usize,
    pub p_value: f64,
    /// REML log-likelihood at the optimum. `+inf` when the residual
    /// variance collapses to zero (constant or perfectly fitted response).
    pub loglik: f64,
}

#[derive(Clone, Copy, Default)]
struct GroupStats {
    m: f64,
    sx: f64,
    sxx: f64,
    sd: f64,
    sxd: f64,
    sdd: f64,
}

/// Quantities from one profiled-criterion evaluation at fixed `lambda`.
struct Profile {
    criterion: f64,
    beta0: f64,
    beta1: f64,
    sigma2: f64,
    /// (A^-1)_{11} where A = X' W^-1 X, for the slope standard error.
    ainv11: f64,
    logdet_w: f64,
    logdet_a: f64,
}

fn profile_at(stats: &[GroupStats], n: f64, lambda: f64) -> Profile {
    let mut a00 = 0.0;
    let mut a01 = 0.0;
    let mut a11 = 0.0;
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    let mut q = 0.0;
    let mut logdet_w = 0.0;
    for s in stats {
        let c = lambda / (1.0 + lambda * s.m);
        let shrink = 1.0 - c * s.m;
        a00 += s.m * shrink;
        a01 += s.sx * shrink;
        a11 += s.sxx - c * s.sx * s.sx;
        b0 += s.sd * shrink;
        b1 += s.sxd - c * s.sx * s.sd;
        q += s.sdd - c * s.sd * s.sd;
        logdet_w += (1.0 + lambda * s.m).ln();
    }
    let det = a00 * a11 - a01 * a01;
    let beta0 = (a11 * b0 - a01 * b1) / det;
    let beta1 = (a00 * b1 - a01 * b0) / det;
    let resid = (q - b0 * beta0 - b1 * beta1).max(0.0);
    let sigma2 = resid / (n - 2.0);
    let logdet_a = det.ln();
    let criterion = (n - 2.0) * sigma2.max(1e-300).ln() + logdet_w + logdet_a;
    Profile {
        criterion,
        beta0,
        beta1,
        sigma2,
        ainv11: a00 / det,
        logdet_w,
        logdet_a,
    }
}

/// Minimize the profiled REML criterion over `log(lambda)`. A coarse grid
/// locates the basin (the criterion need not be unimodal over the whole
/// range), golden-section refines it, and the exact `lambda = 0` boundary
/// is kept if it is at least as good.
fn optimize_lambda(stats: &[GroupStats], n: f64) -> f64 {
    let u_lo = LAMBDA_LO.ln();
    let u_hi = LAMBDA_HI.ln();
    let f = |u: f64| profile_at(stats, n, u.exp()).criterion;

    let step = (u_hi - u_lo) / (GRID_POINTS - 1) as f64;
    let mut best_i = 0;
    let mut best_f = f64::INFINITY;
    for i in 0..GRID_POINTS {
        let fi = f(u_lo + step * i as f64);
        if fi < best_f {
            best_f = fi;
            best_i = i;
        }
    }
    let mut a = u_lo + step * best_i.saturating_sub(1) as f64;
    let mut b = u_lo + step * (best_i + 1).min(GRID_POINTS - 1) as f64;

    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let u_star = 0.5 * (a + b);
    let lambda = u_star.exp();
    if profile_at(stats, n, 0.0).criterion <= profile_at(stats, n, lambda).criterion {
        0.0
    } else {
        lambda
    }
}

/// Fit the random-intercept model and test `beta1 = 0` with a Wald t.
///
/// `group` labels may be arbitrary; rows sharing a label share a random
/// intercept. Errors: length mismatch or `n < 3` (`Validation`), constant
/// `x` (`Degenerate`; the slope is not identified). A constant response
/// returns the boundary fit with `p_value = 1`.
pub fn fit_random_intercept(x: &[f64], delta: &[f64], group: &[usize]) -> Result<LmmFit> {
    let n = x.len();
    if delta.len() != n || group.len() != n {
        return Err(Error::Validation(format!(
            "length mismatch: x has {n}, delta has {}, group has {}",
            delta.len(),
            group.len()
        )));
    }
    if n < 4 {
        return Err(Error::Validation(format!(
            "need at least 4 observations, got {n}"
        )));
    }

    // Dense re-index of group labels, first appearance order.
    let mut labels: Vec<usize> = Vec::new();
    let mut dense = Vec::with_capacity(n);
    for &gl in group {
        let idx = labels.iter().position(|&l| l == gl).unwrap_or_else(|| {
            labels.push(gl);
            labels.len() - 1
        });
        dense.push(idx);
    }
    let g = labels.len();
    let all_singleton = g == n;
    let df = if all_singleton {
        n - 2
    } else {
        n.saturating_sub(g + 1).max(1)
    };

    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if xmin == xmax {
        return Err(Error::Degenerate(
            "covariate is constant; slope not identified".into(),
        ));
    }
    let dmin = delta.iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if dmin == dmax {
        return Ok(LmmFit {
            beta0: delta[0],
            beta1: 0.0,
            sigma2: 0.0,
            tau2: 0.0,
            se_beta1: 0.0,
            t_stat: 0.0,
            df,
            p_value: 1.0,
            loglik: f64::INFINITY,
        });
    }

    let mut stats = vec![GroupStats::default(); g];
    for i in 0..n {
        let s = &mut stats[dense[i]];
        s.m += 1.0;
        s.sx += x[i];
        s.sxx += x[i] * x[i];
        s.sd += delta[i];
        s.sxd += x[i] * delta[i];
        s.sdd += delta[i] * delta[i];
    }

    let nf = n as f64;
    // Every group a singleton means W = (1 + lambda) I, which rescales
    // sigma2 without changing the fit; the criterion then prefers the
    // boundary and the model reduces to OLS. Skip the search.
    let lambda = if all_singleton {
        0.0
    } else {
        optimize_lambda(&stats, nf)
    };
    let prof = profile_at(&stats, nf, lambda);

    let sigma2 = prof.sigma2;
    let tau2 = lambda * sigma2;
    let se_beta1 = (sigma2 * prof.ainv11).sqrt();
    let t_stat = if se_beta1 > 0.0 {
        prof.beta1 / se_beta1
    } else if prof.beta1 == 0.0 {
        0.0
    } else {
        f64::INFINITY * prof.beta1.signum()
    };
    let tdist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Numeric(format!("t distribution with df {df}: {e}")))?;
    let p_value = if t_stat.is_infinite() {
        0.0
    } else {
        (2.0 * (1.0 - tdist.cdf(t_stat.abs()))).clamp(0.0, 1.0)
    };
    let loglik = if sigma2 > 0.0 {
        -0.5 * ((nf - 2.0) * (LN_2PI + sigma2.ln() + 1.0) + prof.logdet_w + prof.logdet_a)
    } else {
        f64::INFINITY
    };

    Ok(LmmFit {
        beta0: prof.beta0,
        beta1: prof.beta1,
        sigma2,
        tau2,
        se_beta1,
        t_stat,
        df,
        p_value,
        loglik,
    })
}

/// Profiled REML criterion at a given variance ratio, exposed so tests can
/// verify the search lands at the minimum. Smaller is better.
#[doc(hidden)]
pub fn reml_criterion(x: &[f64], delta: &[f64], group: &[usize], lambda: f64) -> f64 {
    let n = x.len();
    let mut labels: Vec<usize> = Vec::new();
    let mut stats: Vec<GroupStats> = Vec::new();
    for i in 0..n {
        let idx = labels.iter().position(|&l| l == group[i]).unwrap_or_else(|| {
            labels.push(group[i]);
            stats.push(GroupStats::default());
            labels.len() - 1
        });
        let s = &mut stats[idx];
        s.m += 1.0;
        s.sx += x[i];
        s.sxx += x[i] * x[i];
        s.sd += delta[i];
        s.sxd += x[i] * delta[i];
        s.sdd += delta[i] * delta[i];
    }
    profile_at(&stats, n as f64, lambda).criterion
}

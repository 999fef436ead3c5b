//! Brute-force oracles shared by the oracle test files and the acceptance
//! suite. Everything here recomputes results from first principles on
//! dense representations; none of it calls into the crate's optimized
//! search paths except for the functions under test.

#![allow(dead_code)]

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tehtree::lmm::fit_random_intercept;
use tehtree::matching::{match_pairs, MatchedPairSet};
use tehtree::tree::find_split_point;
use tehtree::TrialDataset;

/// Outcome of one oracle comparison, with a human-readable summary.
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn fail(detail: String) -> Check {
        Check {
            pass: false,
            detail,
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Dense Cholesky factor, lower triangular. Panics on non-PD input; the
/// oracle only ever builds PD matrices.
fn chol(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite");
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    l
}

/// Solve V u = b given the Cholesky factor of V.
fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut u = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * u[k];
        }
        u[i] = s / l[i][i];
    }
    for i in (0..n).rev() {
        let mut s = u[i];
        for k in i + 1..n {
            s -= l[k][i] * u[k];
        }
        u[i] = s / l[i][i];
    }
    u
}

pub struct DenseFit {
    pub loglik: f64,
    pub beta0: f64,
    pub beta1: f64,
}

/// Restricted log-likelihood of (sigma2, tau2) with X = [1 x], computed
/// entirely on the dense n-by-n covariance sigma2 I + tau2 ZZ'.
pub fn dense_reml(x: &[f64], y: &[f64], group: &[usize], sigma2: f64, tau2: f64) -> DenseFit {
    let n = x.len();
    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if group[i] == group[j] {
                v[i][j] += tau2;
            }
        }
        v[i][i] += sigma2;
    }
    let l = chol(&v);
    let logdet_v: f64 = 2.0 * (0..n).map(|i| l[i][i].ln()).sum::<f64>();

    let ones = vec![1.0; n];
    let u1 = chol_solve(&l, &ones);
    let ux = chol_solve(&l, x);
    let uy = chol_solve(&l, y);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    let a00 = dot(&ones, &u1);
    let a01 = dot(&ones, &ux);
    let a11 = dot(x, &ux);
    let b0 = dot(&ones, &uy);
    let b1 = dot(x, &uy);
    let det = a00 * a11 - a01 * a01;
    let beta0 = (a11 * b0 - a01 * b1) / det;
    let beta1 = (a00 * b1 - a01 * b0) / det;

    let quad = dot(y, &uy) - 2.0 * (beta0 * b0 + beta1 * b1)
        + beta0 * (a00 * beta0 + a01 * beta1)
        + beta1 * (a01 * beta0 + a11 * beta1);
    let loglik = -0.5 * (logdet_v + det.ln() + quad + (n as f64 - 2.0) * LN_2PI);
    DenseFit {
        loglik,
        beta0,
        beta1,
    }
}

pub struct OracleMax {
    pub loglik: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma2: f64,
    pub tau2: f64,
}

/// Maximize the dense restricted likelihood by a refining grid over
/// (log sigma2, log tau2), with the tau2 = 0 boundary always included.
pub fn oracle_maximize(x: &[f64], y: &[f64], group: &[usize]) -> OracleMax {
    let n = x.len() as f64;
    // OLS residual variance anchors the search ranges.
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(v, w)| (v - mx) * (w - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(v, w)| {
            let r = (w - my) - slope * (v - mx);
            r * r
        })
        .sum();
    let anchor = (rss / (n - 2.0)).ln();

    let grid = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };

    let (mut s_lo, mut s_hi) = (anchor - 4.0, anchor + 3.0);
    let (mut t_lo, mut t_hi) = (anchor - 9.0, anchor + 3.0);
    let k = 41usize;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    // The likelihood ridge runs diagonally in (log sigma2, log tau2), so
    // shrink slowly and re-expand any axis whose maximum sits at the
    // window edge instead of walking off the ridge.
    for _ in 0..10 {
        best = (f64::NEG_INFINITY, 0.0, 0.0);
        let (mut si, mut ti) = (0usize, 0usize);
        let s_grid = grid(s_lo, s_hi, k);
        let t_grid = grid(t_lo, t_hi, k);
        for (i, &ls) in s_grid.iter().enumerate() {
            let sigma2 = ls.exp();
            for (j, lt) in std::iter::once(f64::NEG_INFINITY)
                .chain(t_grid.iter().copied())
                .enumerate()
            {
                let tau2 = if lt.is_finite() { lt.exp() } else { 0.0 };
                let fit = dense_reml(x, y, group, sigma2, tau2);
                if fit.loglik > best.0 {
                    best = (fit.loglik, ls, lt);
                    (si, ti) = (i, j);
                }
            }
        }
        let s_step = (s_hi - s_lo) / (k - 1) as f64;
        let t_step = (t_hi - t_lo) / (k - 1) as f64;
        if si <= 1 || si >= k - 2 {
            s_lo = best.1 - 10.0 * s_step;
            s_hi = best.1 + 10.0 * s_step;
        } else {
            s_lo = best.1 - 3.0 * s_step;
            s_hi = best.1 + 3.0 * s_step;
        }
        if best.2.is_finite() {
            // ti = 0 is the boundary entry; interior indices shift by one.
            if ti <= 2 || ti >= k - 1 {
                t_lo = best.2 - 10.0 * t_step;
                t_hi = best.2 + 10.0 * t_step;
            } else {
                t_lo = best.2 - 3.0 * t_step;
                t_hi = best.2 + 3.0 * t_step;
            }
        } else {
            // Boundary maximum: keep shrinking the positive range toward
            // zero so a tiny interior optimum could still surface.
            t_hi = t_lo + (t_hi - t_lo) / 4.0;
        }
    }
    let sigma2 = best.1.exp();
    let tau2 = if best.2.is_finite() { best.2.exp() } else { 0.0 };
    let fit = dense_reml(x, y, group, sigma2, tau2);
    OracleMax {
        loglik: fit.loglik,
        beta0: fit.beta0,
        beta1: fit.beta1,
        sigma2,
        tau2,
    }
}

/// Mixed-model test instance: 30 rows in 10 groups of 3 with varied
/// variance components.
pub fn lmm_instance(seed: u64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 30;
    let g = 10;
    let tau = [0.0, 0.5, 1.0, 2.0][(seed % 4) as usize];
    let sigma = [0.6, 1.0, 1.7][(seed % 3) as usize];
    let beta0 = rng.random_range(-1.0..1.0);
    let beta1 = rng.random_range(-1.5..1.5);
    let b: Vec<f64> = (0..g)
        .map(|_| tau * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let group: Vec<usize> = (0..n).map(|i| i % g).collect();
    let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| beta0 + beta1 * x[i] + b[group[i]] + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y, group)
}

/// Compare the profiled REML fit against the dense grid maximizer on
/// `instances` seeded datasets.
pub fn lmm_oracle_check(instances: u64) -> Check {
    let started = std::time::Instant::now();
    let mut max_obj = 0.0f64;
    let mut max_par = 0.0f64;
    for seed in 0..instances {
        let (x, y, group) = lmm_instance(seed);
        let fit = match fit_random_intercept(&x, &y, &group) {
            Ok(f) => f,
            Err(e) => return Check::fail(format!("seed {seed}: fit failed: {e}")),
        };
        let oracle = oracle_maximize(&x, &y, &group);
        let obj = (fit.loglik - oracle.loglik).abs();
        if obj > 1e-5 {
            return Check::fail(format!(
                "seed {seed}: loglik {} vs oracle {}",
                fit.loglik, oracle.loglik
            ));
        }
        max_obj = max_obj.max(obj);
        for (name, got, want) in [
            ("beta0", fit.beta0, oracle.beta0),
            ("beta1", fit.beta1, oracle.beta1),
            ("sigma2", fit.sigma2, oracle.sigma2),
            ("tau2", fit.tau2, oracle.tau2),
        ] {
            let d = (got - want).abs();
            if d > 1e-3 {
                return Check::fail(format!("seed {seed}: {name} {got} vs oracle {want}"));
            }
            max_par = max_par.max(d);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Check {
        pass: elapsed < 10.0,
        detail: format!(
            "{instances} instances, max |objective diff| {max_obj:.2e}, max |param diff| {max_par:.2e}, {elapsed:.2}s"
        ),
    }
}

/// Compare the all-singleton mixed-model path against a hand-rolled OLS
/// slope test.
pub fn lmm_singleton_check() -> Check {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let mut max_d = 0.0f64;
    for seed in 100..105u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.3 + 0.7 * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let group: Vec<usize> = (0..n).collect();
        let fit = match fit_random_intercept(&x, &y, &group) {
            Ok(f) => f,
            Err(e) => return Check::fail(format!("seed {seed}: fit failed: {e}")),
        };

        let nf = n as f64;
        let mx = x.iter().sum::<f64>() / nf;
        let my = y.iter().sum::<f64>() / nf;
        let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(v, w)| (v - mx) * (w - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = x
            .iter()
            .zip(&y)
            .map(|(v, w)| {
                let r = w - intercept - slope * v;
                r * r
            })
            .sum();
        let sigma2 = rss / (nf - 2.0);
        let se = (sigma2 / sxx).sqrt();
        let t = slope / se;
        let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, nf - 2.0).unwrap().cdf(t.abs()));

        if fit.tau2 != 0.0 || fit.df != n - 2 {
            return Check::fail(format!(
                "seed {seed}: expected OLS reduction, got tau2 {} df {}",
                fit.tau2, fit.df
            ));
        }
        for (name, got, want) in [
            ("slope", fit.beta1, slope),
            ("intercept", fit.beta0, intercept),
            ("sigma2", fit.sigma2, sigma2),
            ("se", fit.se_beta1, se),
            ("t", fit.t_stat, t),
            ("p", fit.p_value, p),
        ] {
            let d = (got - want).abs();
            if d > 1e-9 {
                return Check::fail(format!("seed {seed}: {name} {got} vs OLS {want}"));
            }
            max_d = max_d.max(d);
        }
    }
    Check {
        pass: true,
        detail: format!("5 singleton instances, max |diff| {max_d:.2e}"),
    }
}

/// Matching test instance: two arms of random size with standard-normal
/// scores; every third seed coarsens scores to force exact-distance ties.
pub fn matching_instance(seed: u64) -> (TrialDataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_treated = rng.random_range(5..30usize);
    let n_control = rng.random_range(5..30usize);
    let n = n_treated + n_control;
    // Scatter the treated arm across row positions.
    let mut z = vec![0u8; n];
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &i in order.iter().take(n_treated) {
        z[i] = 1;
    }

    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let mut scores: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    if seed % 3 == 0 {
        for s in &mut scores {
            *s = (*s * 2.0).round() / 2.0;
        }
    }
    let data = TrialDataset::new(y, z, x, vec!["x1".into(), "x2".into()]).unwrap();
    (data, scores)
}

/// Compare matching against an exhaustive nearest-neighbor scan on
/// `instances` seeded datasets, including rerun reproducibility of ties.
pub fn matching_oracle_check(instances: u64) -> Check {
    let started = std::time::Instant::now();
    let mut ties = 0usize;
    for seed in 0..instances {
        let (data, scores) = matching_instance(seed);
        let set = match match_pairs(&data, &scores, seed) {
            Ok(s) => s,
            Err(e) => return Check::fail(format!("seed {seed}: matching failed: {e}")),
        };
        let treated = data.treated_indices();
        let controls = data.control_indices();
        if set.pairs.iter().map(|&(t, _)| t).collect::<Vec<_>>() != treated {
            return Check::fail(format!("seed {seed}: pairs not in treated index order"));
        }
        for &(t, c) in &set.pairs {
            let dmin = controls
                .iter()
                .map(|&j| (scores[j] - scores[t]).abs())
                .fold(f64::INFINITY, f64::min);
            let nearest: Vec<usize> = controls
                .iter()
                .copied()
                .filter(|&j| (scores[j] - scores[t]).abs() == dmin)
                .collect();
            if !nearest.contains(&c) {
                return Check::fail(format!(
                    "seed {seed}: control {c} for treated {t} not among nearest {nearest:?}"
                ));
            }
            if nearest.len() == 1 && c != nearest[0] {
                return Check::fail(format!("seed {seed}: unique nearest neighbor missed"));
            }
            ties += usize::from(nearest.len() > 1);
        }
        let again = match_pairs(&data, &scores, seed).unwrap();
        if set.pairs != again.pairs {
            return Check::fail(format!("seed {seed}: rerun changed tie resolution"));
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Check {
        pass: elapsed < 5.0,
        detail: format!(
            "{instances} instances identical to exhaustive scan ({ties} tie resolutions), {elapsed:.2}s"
        ),
    }
}

/// Node instance for the threshold search: pair differences with a step
/// signal, partially shared controls, and sometimes coarse covariates.
pub fn split_instance(seed: u64) -> (MatchedPairSet, Vec<usize>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(10..60usize);
    let x = Array2::from_shape_fn((len, 2), |(_, j)| {
        let v: f64 = rng.sample(StandardNormal);
        if j == 0 && seed % 4 == 0 {
            // Integer-valued column: repeated values and few candidates.
            v.round()
        } else {
            v
        }
    });
    let delta: Vec<f64> = (0..len)
        .map(|i| {
            let step = if x[[i, 0]] > 0.2 { 1.5 } else { 0.0 };
            step + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    // Roughly a third of pairs share a control with a neighbor.
    let mut group = Vec::with_capacity(len);
    let mut next = 0usize;
    while group.len() < len {
        let reuse = 1 + usize::from(rng.random_range(0..3u8) == 0);
        for _ in 0..reuse.min(len - group.len()) {
            group.push(next);
        }
        next += 1;
    }
    let pairs = MatchedPairSet {
        pairs: (0..len).map(|l| (l, 1000 + group[l])).collect(),
        delta,
        group,
        x_treated: x,
    };
    let node_rows: Vec<usize> = if seed % 2 == 0 {
        (0..len).collect()
    } else {
        (0..len).filter(|i| i % 3 != 2).collect()
    };
    let min_node = [1, 4, 11][(seed % 3) as usize];
    (pairs, node_rows, min_node)
}

/// Every midpoint of consecutive distinct values, with both children at
/// least `min_node` rows, scored by the absolute slope statistic of the
/// threshold indicator; ties go to the candidate closest to the median.
pub fn exhaustive_split_scan(
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

    let mut distinct = values.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();

    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };

    let mut best: Option<(f64, f64)> = None;
    for w in distinct.windows(2) {
        let c = 0.5 * (w[0] + w[1]);
        if c <= w[0] || c >= w[1] {
            continue;
        }
        let left = values.iter().filter(|&&v| v <= c).count();
        if left < min_node || n - left < min_node {
            continue;
        }
        let indicator: Vec<f64> = values.iter().map(|&v| f64::from(v >= c)).collect();
        let Ok(fit) = fit_random_intercept(&indicator, &delta, &group) else {
            continue;
        };
        let stat = fit.t_stat.abs();
        let replace = match best {
            None => true,
            Some((bs, bc)) => stat > bs || (stat == bs && (c - median).abs() < (bc - median).abs()),
        };
        if replace {
            best = Some((stat, c));
        }
    }
    best.map(|(_, c)| c)
}

/// Compare the threshold search against the exhaustive scan on
/// `instances` seeded nodes (both covariates each).
pub fn split_oracle_check(instances: u64) -> Check {
    let started = std::time::Instant::now();
    let mut found = 0usize;
    let mut none = 0usize;
    for seed in 0..instances {
        let (pairs, node_rows, min_node) = split_instance(seed);
        for var in 0..2 {
            let got = find_split_point(&pairs, &node_rows, var, min_node);
            let want = exhaustive_split_scan(&pairs, &node_rows, var, min_node);
            if got != want {
                return Check::fail(format!(
                    "seed {seed} var {var} min_node {min_node}: {got:?} vs oracle {want:?}"
                ));
            }
            match got {
                Some(_) => found += 1,
                None => none += 1,
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Check {
        pass: elapsed < 10.0 && found > 20 && none > 2,
        detail: format!(
            "{instances} instances x 2 covariates, {found} split points, {none} infeasible, {elapsed:.2}s"
        ),
    }
}

/// Synthetic nutrition-trial fixture: 156 adults, 107 treated and 49
/// controls, four baseline covariates (BMI, age, hunger score, an
/// eating-disorder scale) and a kcal/day outcome whose treatment effect
/// steps up for the hungrier half. Fully deterministic.
pub fn lunch_fixture() -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4C55_4E43_48);
    let n = 156;
    let mut z = vec![1u8; 107];
    z.extend(std::iter::repeat(0u8).take(49));
    z.shuffle(&mut rng);

    let mut x = Array2::zeros((n, 4));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let draw = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let bmi = 31.0 + 5.0 * draw(&mut rng);
        let age = 42.0 + 11.0 * draw(&mut rng);
        let hunger = 3.0 + draw(&mut rng);
        let edeq = 1.6 + 1.1 * draw(&mut rng);
        x[(i, 0)] = bmi;
        x[(i, 1)] = age;
        x[(i, 2)] = hunger;
        x[(i, 3)] = edeq;
        let baseline = 1400.0 + 25.0 * bmi + 3.0 * age + 60.0 * hunger;
        let effect = if hunger > 3.0 { 390.0 } else { 0.0 };
        y.push(baseline + f64::from(z[i]) * effect + 380.0 * draw(&mut rng));
    }
    let names = ["bmi", "age", "hunger", "edeq"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    TrialDataset::new(y, z, x, names).expect("fixture dimensions are valid")
}

/// The same rows with the covariate matrix row-shuffled, which severs every
/// covariate-outcome association while keeping outcomes and arms fixed.
pub fn permute_covariate_rows(data: &TrialDataset, seed: u64) -> TrialDataset {
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let x = data.x();
    let mut shuffled = Array2::zeros((data.n(), x.ncols()));
    for (dst, &src) in order.iter().enumerate() {
        shuffled.row_mut(dst).assign(&x.row(src));
    }
    TrialDataset::new(
        data.y().to_vec(),
        data.z().to_vec(),
        shuffled,
        data.col_names().to_vec(),
    )
    .expect("permutation preserves validity")
}

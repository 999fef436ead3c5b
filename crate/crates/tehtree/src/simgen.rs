//! Trial-data generators with known conditional treatment effects.
//!
//! Eleven outcome models share the base mean 0.8 + 0.8 Z + beta'X with
//! beta = (1.0, 0.8, 0.6, 0.4, 0.2, 0, ...); they differ in the added
//! prognostic or treatment-interaction terms. Covariate rosters are five
//! binary (C1), five continuous (C2), ten continuous (C3), or the mixed
//! five-continuous-plus-five-binary roster used by model M11. Continuous
//! blocks are equicorrelated multivariate normal with unit variances;
//! outcomes add unit-variance Gaussian noise; exactly n/2 subjects are
//! treated. Every generated dataset is paired with its analytic
//! conditional effect so benchmarks can score estimates against truth.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::TrialDataset;
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::rng::{
    stream::{COVARIATES, NOISE, TREATMENT},
    stream_rng,
};

const INTERCEPT: f64 = 0.8;
const TREATMENT_MAIN: f64 = 0.8;
const BETA: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

/// Outcome model selector. Names follow the scenario shorthand M1..M11.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
    M9,
    M10,
    M11,
}

impl Model {
    pub const ALL: [Model; 11] = [
        Model::M1,
        Model::M2,
        Model::M3,
        Model::M4,
        Model::M5,
        Model::M6,
        Model::M7,
        Model::M8,
        Model::M9,
        Model::M10,
        Model::M11,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Model::M1 => "M1",
            Model::M2 => "M2",
            Model::M3 => "M3",
            Model::M4 => "M4",
            Model::M5 => "M5",
            Model::M6 => "M6",
            Model::M7 => "M7",
            Model::M8 => "M8",
            Model::M9 => "M9",
            Model::M10 => "M10",
            Model::M11 => "M11",
        }
    }

    pub fn from_code(code: &str) -> Result<Model> {
        let t = code.trim().to_ascii_uppercase();
        let t = t.strip_prefix('M').unwrap_or(&t);
        match t {
            "1" => Ok(Model::M1),
            "2" => Ok(Model::M2),
            "3" => Ok(Model::M3),
            "4" => Ok(Model::M4),
            "5" => Ok(Model::M5),
            "6" => Ok(Model::M6),
            "7" => Ok(Model::M7),
            "8" => Ok(Model::M8),
            "9" => Ok(Model::M9),
            "10" => Ok(Model::M10),
            "11" => Ok(Model::M11),
            _ => Err(Error::Config(format!(
                "unknown model {code:?}; expected M1..M11"
            ))),
        }
    }

    /// Zero-based indices of the covariates carrying a treatment
    /// interaction; empty for the homogeneous models. Power metrics count a
    /// split as a hit when it lands on one of these.
    pub fn heterogeneity_vars(self, n_covariates: usize) -> Vec<usize> {
        match self {
            Model::M1 | Model::M2 => Vec::new(),
            Model::M3 | Model::M4 | Model::M5 | Model::M6 | Model::M7 => vec![0],
            Model::M8 | Model::M9 => vec![0, 1],
            Model::M10 => (0..n_covariates).collect(),
            Model::M11 => vec![0, 5],
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// Covariate roster. Continuous columns always precede binary columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateConfig {
    /// C1: five independent binary covariates.
    Binary5,
    /// C2: five continuous covariates.
    Continuous5,
    /// C3: ten continuous covariates.
    Continuous10,
    /// Model-11 roster: five continuous followed by five binary.
    Mixed10,
}

impl CovariateConfig {
    pub fn code(self) -> &'static str {
        match self {
            CovariateConfig::Binary5 => "C1",
            CovariateConfig::Continuous5 => "C2",
            CovariateConfig::Continuous10 => "C3",
            CovariateConfig::Mixed10 => "CM",
        }
    }

    pub fn from_code(code: &str) -> Result<CovariateConfig> {
        match code.trim().to_ascii_uppercase().as_str() {
            "C1" => Ok(CovariateConfig::Binary5),
            "C2" => Ok(CovariateConfig::Continuous5),
            "C3" => Ok(CovariateConfig::Continuous10),
            "CM" | "MIXED" => Ok(CovariateConfig::Mixed10),
            other => Err(Error::Config(format!(
                "unknown covariate config {other:?}; expected C1, C2, C3, or CM"
            ))),
        }
    }

    pub fn n_covariates(self) -> usize {
        match self {
            CovariateConfig::Binary5 | CovariateConfig::Continuous5 => 5,
            CovariateConfig::Continuous10 | CovariateConfig::Mixed10 => 10,
        }
    }

    pub fn n_continuous(self) -> usize {
        match self {
            CovariateConfig::Binary5 => 0,
            CovariateConfig::Continuous5 => 5,
            CovariateConfig::Continuous10 => 10,
            CovariateConfig::Mixed10 => 5,
        }
    }
}

/// Model coefficients. Only the fields a model reads need to be set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelCoeffs {
    pub gamma: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub eta: Option<f64>,
    pub phi: Option<[f64; 5]>,
}

fn roman(v: &str) -> Option<usize> {
    match v {
        "i" => Some(1),
        "ii" => Some(2),
        "iii" => Some(3),
        "iv" => Some(4),
        _ => None,
    }
}

impl ModelCoeffs {
    pub fn gamma_pair(&self) -> Option<(f64, f64)> {
        Some((self.gamma1?, self.gamma2?))
    }

    /// Named coefficient presets P1..P11 from the scenario tables. Presets
    /// with lettered variants require one, e.g. "P9(iii)".
    pub fn preset(code: &str) -> Result<ModelCoeffs> {
        let t = code.trim().to_ascii_lowercase();
        let t = t
            .strip_prefix('p')
            .ok_or_else(|| Error::Config(format!("preset {code:?} must start with P")))?;
        let (num, variant) = match t.find('(') {
            Some(open) => {
                let close = t
                    .rfind(')')
                    .filter(|&c| c == t.len() - 1 && c > open)
                    .ok_or_else(|| Error::Config(format!("malformed preset {code:?}")))?;
                let v = roman(&t[open + 1..close])
                    .ok_or_else(|| Error::Config(format!("bad variant in preset {code:?}")))?;
                (&t[..open], Some(v))
            }
            None => (t, None),
        };
        let gamma = |g: f64| ModelCoeffs {
            gamma: Some(g),
            ..Default::default()
        };
        let pair = |g1: f64, g2: f64| ModelCoeffs {
            gamma1: Some(g1),
            gamma2: Some(g2),
            ..Default::default()
        };
        let phi = |v: [f64; 5]| ModelCoeffs {
            phi: Some(v),
            ..Default::default()
        };
        let need = |n: usize, names: &str| -> Result<usize> {
            match variant {
                Some(v) if v <= n => Ok(v),
                Some(_) | None => Err(Error::Config(format!(
                    "preset P{num} requires a variant {names}"
                ))),
            }
        };
        let plain = |c: ModelCoeffs| -> Result<ModelCoeffs> {
            match variant {
                None => Ok(c),
                Some(_) => Err(Error::Config(format!("preset P{num} has no variants"))),
            }
        };
        match num {
            "1" => plain(phi([3.0, 0.0, 0.0, 0.0, 0.0])),
            "2" => plain(phi([1.0, 0.0, 0.0, 0.0, 0.0])),
            "3" => plain(phi([1.0, 1.0, 0.0, 0.0, 0.0])),
            "4" => plain(gamma(1.0)),
            "5" => Ok(gamma([2.0, 1.0][need(2, "(i)-(ii)")? - 1])),
            "6" => {
                let v = need(4, "(i)-(iv)")?;
                let (g1, g2) = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)][v - 1];
                Ok(pair(g1, g2))
            }
            "7" => Ok(gamma([3.0, 2.0, 1.0][need(3, "(i)-(iii)")? - 1])),
            "8" => {
                let v = need(4, "(i)-(iv)")?;
                let (g, e) = [(2.0, 2.0), (1.0, 2.0), (2.0, 1.5), (1.0, 1.5)][v - 1];
                Ok(ModelCoeffs {
                    gamma: Some(g),
                    eta: Some(e),
                    ..Default::default()
                })
            }
            "9" => {
                let v = need(4, "(i)-(iv)")?;
                let (g1, g2) = [(3.0, 3.0), (1.0, 1.0), (3.0, -3.0), (1.0, -3.0)][v - 1];
                Ok(pair(g1, g2))
            }
            "10" => {
                let v = need(4, "(i)-(iv)")?;
                let (g1, g2) = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)][v - 1];
                Ok(pair(g1, g2))
            }
            "11" => Ok(gamma([1.0, 2.0, 6.0][need(3, "(i)-(iii)")? - 1])),
            _ => Err(Error::Config(format!("unknown preset {code:?}"))),
        }
    }

    /// Parse a preset code ("P4", "P9(iii)") or a free-form list
    /// "gamma=1,eta=1.5" with keys gamma, gamma1, gamma2, eta, phi1..phi5.
    /// An empty string means no coefficients (valid for model M1).
    pub fn parse(s: &str) -> Result<ModelCoeffs> {
        let t = s.trim();
        if t.is_empty() {
            return Ok(ModelCoeffs::default());
        }
        if !t.contains('=') {
            return ModelCoeffs::preset(t);
        }
        let mut c = ModelCoeffs::default();
        let mut phi = [0.0f64; 5];
        let mut any_phi = false;
        for part in t.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {part:?}")))?;
            let v: f64 = value.trim().parse().map_err(|_| {
                Error::Config(format!("coefficient {key:?} has non-numeric value {value:?}"))
            })?;
            match key.trim().to_ascii_lowercase().as_str() {
                "gamma" => c.gamma = Some(v),
                "gamma1" => c.gamma1 = Some(v),
                "gamma2" => c.gamma2 = Some(v),
                "eta" => c.eta = Some(v),
                k if k.starts_with("phi") => {
                    let idx: usize = k[3..]
                        .parse()
                        .ok()
                        .filter(|&i| (1..=5).contains(&i))
                        .ok_or_else(|| {
                            Error::Config(format!("unknown coefficient {key:?} (phi1..phi5)"))
                        })?;
                    phi[idx - 1] = v;
                    any_phi = true;
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown coefficient {other:?}; expected gamma, gamma1, gamma2, eta, or phi1..phi5"
                    )))
                }
            }
        }
        if any_phi {
            c.phi = Some(phi);
        }
        Ok(c)
    }

    /// Compact `key=value` rendering of the set coefficients, in a fixed
    /// order, parseable back through [`ModelCoeffs::parse`].
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (key, v) in [
            ("gamma", self.gamma),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("eta", self.eta),
        ] {
            if let Some(v) = v {
                parts.push(format!("{key}={v}"));
            }
        }
        if let Some(phi) = self.phi {
            for (i, v) in phi.iter().enumerate() {
                parts.push(format!("phi{}={v}", i + 1));
            }
        }
        parts.join(",")
    }
}

/// A complete data-generating scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub model: Model,
    pub covariates: CovariateConfig,
    pub coeffs: ModelCoeffs,
    pub n: usize,
    /// Pairwise correlation of the continuous covariate block.
    pub rho: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::Config(format!(
                "n must be even and at least 4, got {}",
                self.n
            )));
        }
        let mc = self.covariates.n_continuous();
        if mc == 0 {
            if self.rho != 0.0 {
                return Err(Error::Config(
                    "rho applies to continuous covariates; use rho=0 with C1".into(),
                ));
            }
        } else {
            let lo = if mc > 1 { -1.0 / (mc as f64 - 1.0) } else { -1.0 };
            if !(self.rho > lo && self.rho < 1.0) {
                return Err(Error::Config(format!(
                    "rho={} leaves the covariate correlation matrix non positive definite \
                     (need {lo:.4} < rho < 1 for {mc} continuous covariates)",
                    self.rho
                )));
            }
        }
        let missing = |what: &str| {
            Err(Error::Config(format!(
                "model {} requires coefficient {what}",
                self.model
            )))
        };
        match self.model {
            Model::M1 => {}
            Model::M2 => {
                if self.coeffs.phi.is_none() {
                    return missing("phi1..phi5");
                }
            }
            Model::M3 | Model::M4 | Model::M6 | Model::M10 => {
                if self.coeffs.gamma.is_none() {
                    return missing("gamma");
                }
            }
            Model::M5 | Model::M8 | Model::M9 | Model::M11 => {
                if self.coeffs.gamma_pair().is_none() {
                    return missing("gamma1 and gamma2");
                }
            }
            Model::M7 => {
                if self.coeffs.gamma.is_none() || self.coeffs.eta.is_none() {
                    return missing("gamma and eta");
                }
            }
        }
        if self.model == Model::M11 && self.covariates.n_covariates() < 6 {
            return Err(Error::Config(
                "model M11 reads covariates x1 and x6; use a 10-covariate roster".into(),
            ));
        }
        Ok(())
    }
}

fn beta_dot(x: ArrayView1<f64>) -> f64 {
    BETA.iter()
        .zip(x.iter())
        .map(|(b, v)| b * v)
        .sum()
}

fn cate_row(spec: &ScenarioSpec, x: ArrayView1<f64>) -> f64 {
    let c = &spec.coeffs;
    let ind = |v: f64| f64::from(v > 0.0);
    let term = match spec.model {
        Model::M1 | Model::M2 => 0.0,
        Model::M3 => c.gamma.unwrap() * ind(x[0]),
        Model::M4 => c.gamma.unwrap() * x[0],
        Model::M5 => c.gamma1.unwrap() * x[0] + c.gamma2.unwrap() * ind(x[0]),
        Model::M6 => c.gamma.unwrap() * f64::from(x[0] > -0.5 && x[0] < 0.5),
        Model::M7 => c.gamma.unwrap() * (c.eta.unwrap() * x[0]).sin(),
        Model::M8 => c.gamma1.unwrap() * ind(x[0]) + c.gamma2.unwrap() * ind(x[1]),
        Model::M9 => c.gamma1.unwrap() * x[0] + c.gamma2.unwrap() * ind(x[1]),
        Model::M10 => c.gamma.unwrap() * x.sum(),
        Model::M11 => c.gamma1.unwrap() * x[0] + c.gamma2.unwrap() * x[5],
    };
    TREATMENT_MAIN + term
}

/// Analytic conditional treatment effect for each row of `x`:
/// the model mean at Z=1 minus the mean at Z=0.
pub fn true_cate(spec: &ScenarioSpec, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.ncols() != spec.covariates.n_covariates() {
        return Err(Error::Validation(format!(
            "covariate config {} has {} columns, matrix has {}",
            spec.covariates.code(),
            spec.covariates.n_covariates(),
            x.ncols()
        )));
    }
    Ok((0..x.nrows()).map(|i| cate_row(spec, x.row(i))).collect())
}

/// Model mean for one subject. The treatment-free part carries the
/// prognostic terms; treatment adds exactly the conditional effect.
pub fn expected_outcome(spec: &ScenarioSpec, x: ArrayView1<f64>, z: u8) -> f64 {
    let mut mu = INTERCEPT + beta_dot(x);
    if spec.model == Model::M2 {
        let phi = spec.coeffs.phi.unwrap();
        mu += phi
            .iter()
            .zip(x.iter())
            .map(|(p, v)| p * f64::from(*v > 0.0))
            .sum::<f64>();
    }
    if z == 1 {
        mu += cate_row(spec, x);
    }
    mu
}

/// Draw the covariate matrix for a scenario (continuous block first, then
/// binary). Benchmarks use this directly for evaluation grids.
pub fn generate_covariates(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    let p = spec.covariates.n_covariates();
    let mc = spec.covariates.n_continuous();
    let mut rng = stream_rng(seed, &[COVARIATES]);
    let mut x = Array2::zeros((n, p));
    if mc > 0 {
        let chol = if spec.rho != 0.0 {
            let mut sigma = Array2::from_elem((mc, mc), spec.rho);
            for j in 0..mc {
                sigma[[j, j]] = 1.0;
            }
            Some(cholesky(&sigma)?)
        } else {
            None
        };
        let mut z = vec![0.0f64; mc];
        for i in 0..n {
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            match &chol {
                None => {
                    for j in 0..mc {
                        x[[i, j]] = z[j];
                    }
                }
                Some(l) => {
                    for j in 0..mc {
                        let mut s = 0.0;
                        for (k, zk) in z.iter().enumerate().take(j + 1) {
                            s += l[[j, k]] * zk;
                        }
                        x[[i, j]] = s;
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in mc..p {
            x[[i, j]] = f64::from(rng.random_range(0..2u32));
        }
    }
    Ok(x)
}

/// Generate a complete trial: covariates, an exactly balanced treatment
/// assignment (n/2 treated, by seeded permutation), outcomes with unit
/// Gaussian noise, and the analytic conditional effect per subject.
pub fn generate_dataset(spec: &ScenarioSpec) -> Result<(TrialDataset, Vec<f64>)> {
    spec.validate()?;
    let n = spec.n;
    let x = generate_covariates(spec, n, spec.seed)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(spec.seed, &[TREATMENT]));
    let mut z = vec![0u8; n];
    for &i in order.iter().take(n / 2) {
        z[i] = 1;
    }

    let mut noise_rng = stream_rng(spec.seed, &[NOISE]);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            expected_outcome(spec, x.row(i), z[i]) + noise_rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let cate = true_cate(spec, x.view())?;

    let names: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    let data = TrialDataset::with_names(y, z, x, names, "y".into(), "z".into())?;
    Ok((data, cate))
}

//! Batch experiments: replica sampling, distributional statistics with
//! resampling errors, Esseen bounds and log-log rate fits.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chebyshev::{cheb_coeffs, ChebError, TestFunction, DEFAULT_K, DEFAULT_NODES};
use crate::ensemble::{mix_seed, replica_rng, sample_wigner, EnsembleError, EnsembleSpec};
use crate::spectral::{eigenvalues, power_path_coefficients, PowerTraces, SpectralError};
use crate::theory::{constants, TheoryConstants, TheoryError};

pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const MIN_REPLICAS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("statistic {0} at n = {1} is not positive; cannot take logs")]
    NonPositiveStatistic(f64, f64),
    #[error("replica budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Cheb(#[from] ChebError),
}

/// Standard normal distribution function.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `sup_x |F_M(x) - Phi(x)|` for the empirical distribution of `batch`.
pub fn ks_distance(batch: &[f64]) -> Result<f64, MonteCarloError> {
    if batch.is_empty() {
        return Err(MonteCarloError::EmptyBatch);
    }
    if batch.iter().any(|x| !x.is_finite()) {
        return Err(MonteCarloError::InvalidConfig(
            "batch contains non-finite values".into(),
        ));
    }
    let mut sorted = batch.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ks_sorted(&sorted))
}

fn ks_sorted(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = phi(x);
            (((i + 1) as f64 / m) - p).abs().max((p - i as f64 / m).abs())
        })
        .fold(0.0, f64::max)
}

/// Bootstrap standard error of the KS distance.
pub fn ks_bootstrap_se(batch: &[f64], resamples: usize, seed: u64) -> Result<f64, MonteCarloError> {
    if batch.is_empty() {
        return Err(MonteCarloError::EmptyBatch);
    }
    let m = batch.len();
    let values: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = replica_rng(seed, b as u64);
            let mut s: Vec<f64> = (0..m).map(|_| batch[rng.random_range(0..m)]).collect();
            s.sort_by(f64::total_cmp);
            ks_sorted(&s)
        })
        .collect();
    Ok(sample_variance(&values).sqrt())
}

/// `M^{-1} sum_j exp(i t X_j)`.
pub fn char_fn_estimate(batch: &[f64], t_grid: &[f64]) -> Vec<Complex64> {
    let m = batch.len() as f64;
    t_grid
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Complex64::new(1.0, 0.0);
            }
            let (c, s) = batch
                .iter()
                .fold((0.0, 0.0), |(c, s), &x| (c + (t * x).cos(), s + (t * x).sin()));
            Complex64::new(c / m, s / m)
        })
        .collect()
}

/// `\int_0^T |psi(t/sigma) - e^{-t^2/2}| / t dt + 1/T`, absolute constant taken as 1.
///
/// Trapezoid rule in `s = ln t` from `t0 = 1e-6 T`; the piece on `[0, t0]`
/// is `g(t0) t0`, exact when `|psi - e^{-t^2/2}| = O(t)`.
pub fn esseen_bound(psi_hat: impl Fn(f64) -> Complex64, sigma: f64, t_max: f64, t_nodes: usize) -> f64 {
    assert!(t_max > 0.0 && sigma > 0.0 && t_nodes >= 2);
    let g = |t: f64| (psi_hat(t / sigma) - Complex64::new((-0.5 * t * t).exp(), 0.0)).norm() / t;
    let t0 = t_max * 1e-6;
    let (s0, s1) = (t0.ln(), t_max.ln());
    let h = (s1 - s0) / (t_nodes - 1) as f64;
    let mut total = 0.0;
    for j in 0..t_nodes {
        let t = (s0 + j as f64 * h).exp();
        let w = if j == 0 || j == t_nodes - 1 { 0.5 } else { 1.0 };
        total += w * g(t) * t;
    }
    total * h + g(t0) * t0 + 1.0 / t_max
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / m;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
}

/// Mean, unbiased variance and k-statistic skewness from shifted power sums.
fn moments_from_sums(s1: f64, s2: f64, s3: f64, m: f64) -> (f64, f64, f64) {
    let mean = s1 / m;
    let m2 = s2 / m - mean * mean;
    let m3 = s3 / m - 3.0 * mean * s2 / m + 2.0 * mean.powi(3);
    let k2 = m2 * m / (m - 1.0);
    let k3 = m3 * m * m / ((m - 1.0) * (m - 2.0));
    let skew = if k2 > 0.0 { k3 / k2.powf(1.5) } else { 0.0 };
    (mean, k2, skew)
}

/// Delete-one jackknife of mean, variance and skewness. Returns `(estimates, se)`.
pub fn jackknife_moments(batch: &[f64]) -> Result<([f64; 3], [f64; 3]), MonteCarloError> {
    if batch.len() < 4 {
        return Err(MonteCarloError::EmptyBatch);
    }
    let m = batch.len() as f64;
    let shift = batch.iter().sum::<f64>() / m;
    let x: Vec<f64> = batch.iter().map(|v| v - shift).collect();
    let (s1, s2, s3) = x
        .iter()
        .fold((0.0, 0.0, 0.0), |(a, b, c), &v| (a + v, b + v * v, c + v * v * v));
    let (mean, var, skew) = moments_from_sums(s1, s2, s3, m);
    let mut acc = [[0.0; 3]; 2];
    let loo: Vec<(f64, f64, f64)> = x
        .iter()
        .map(|&v| moments_from_sums(s1 - v, s2 - v * v, s3 - v * v * v, m - 1.0))
        .collect();
    for (a, b, c) in &loo {
        acc[0][0] += a;
        acc[0][1] += b;
        acc[0][2] += c;
    }
    let means = acc[0].map(|s| s / m);
    for (a, b, c) in &loo {
        acc[1][0] += (a - means[0]).powi(2);
        acc[1][1] += (b - means[1]).powi(2);
        acc[1][2] += (c - means[2]).powi(2);
    }
    let factor = (m - 1.0) / m;
    let se = acc[1].map(|s| (factor * s).sqrt());
    Ok(([mean + shift, var, skew], se))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Ks,
    Skewness,
    Charfn,
    Variance,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleSpec,
    pub f: String,
    pub gamma: f64,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub statistic: Statistic,
    pub t_grid: Vec<f64>,
    /// Draw exact standard normals instead of matrices (harness self-test).
    pub synthetic: bool,
    /// Upper bound on `replicas * n^2` summed over the grid; `None` for no limit.
    pub budget: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), MonteCarloError> {
        if self.n_grid.is_empty() {
            return Err(MonteCarloError::InvalidConfig("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MonteCarloError::InvalidConfig(
                "n_grid must be strictly increasing".into(),
            ));
        }
        if self.n_grid[0] < 2 {
            return Err(MonteCarloError::InvalidConfig("matrix sizes must be at least 2".into()));
        }
        if self.replicas < MIN_REPLICAS {
            return Err(MonteCarloError::InvalidConfig(format!(
                "replicas must be >= {MIN_REPLICAS}"
            )));
        }
        if !self.gamma.is_finite() {
            return Err(MonteCarloError::InvalidConfig("gamma must be finite".into()));
        }
        if let Some(b) = self.budget {
            let cost: f64 = self
                .n_grid
                .iter()
                .map(|&n| self.replicas as f64 * (n as f64).powi(2))
                .sum();
            if cost > b {
                return Err(MonteCarloError::BudgetExceeded(format!(
                    "cost {cost:.3e} > budget {b:.3e}"
                )));
            }
        }
        TestFunction::parse(&self.f)?;
        Ok(())
    }
}

/// One sampled matrix, reduced to the quantities the statistics need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReplicaRow {
    pub replica: u64,
    pub les: f64,
    pub trace_h: f64,
    pub sum_diag_sq: f64,
}

/// `tr f(H)`, `tr H` and `sum H_ii^2` for replicas `0..replicas` at size `n`.
///
/// Polynomials of degree at most four use matrix power traces; other
/// functions go through the eigenvalues.
pub fn simulate(
    spec: &EnsembleSpec,
    f: &TestFunction,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<ReplicaRow>, MonteCarloError> {
    let base = mix_seed(seed, n as u64);
    let poly = power_path_coefficients(f);
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let s = sample_wigner(spec, n, base, r)?;
            let (les, trace_h, sum_diag_sq) = match &poly {
                Some(p) => {
                    let t = PowerTraces::new(&s.entries);
                    (t.les_polynomial(p).expect("degree checked"), t.trace_h(), t.sum_diag_sq)
                }
                None => {
                    let ev = eigenvalues(&s.entries)?;
                    (ev.iter().map(|&x| f.eval(x)).sum(), s.trace(), s.sum_diag_sq())
                }
            };
            Ok(ReplicaRow {
                replica: r,
                les,
                trace_h,
                sum_diag_sq,
            })
        })
        .collect()
}

/// Exact standard normal draws, one per replica.
pub fn synthetic_normals(n: usize, replicas: usize, seed: u64) -> Vec<f64> {
    let base = mix_seed(seed, n as u64);
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| replica_rng(base, r).sample(StandardNormal))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatSummary {
    pub n: usize,
    pub m: usize,
    /// Moments of `tr f(H) - (gamma/2) c1 tr H`.
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub se_mean: f64,
    pub se_var: f64,
    /// `f64::INFINITY` for a constant batch.
    pub se_skew: f64,
    /// KS distance of the theory-standardised statistic.
    pub ks: f64,
    pub ks_se: f64,
    /// KS distance of the batch-standardised statistic.
    pub ks_centred: f64,
    pub charfn: Vec<(f64, Complex64)>,
}

/// Summary of a raw batch `x` whose theory standardisation is `(x - mu)/sigma`.
pub fn summarize(
    n: usize,
    x: &[f64],
    mu: f64,
    sigma: f64,
    t_grid: &[f64],
    seed: u64,
) -> Result<StatSummary, MonteCarloError> {
    let ([mean, variance, skewness], [se_mean, se_var, se_skew]) = jackknife_moments(x)?;
    let se_skew = if variance == 0.0 { f64::INFINITY } else { se_skew };
    let z: Vec<f64> = x.iter().map(|v| (v - mu) / sigma).collect();
    let ks = ks_distance(&z)?;
    let ks_se = ks_bootstrap_se(&z, BOOTSTRAP_RESAMPLES, mix_seed(seed, 0xb007))?;
    let centred = crate::spectral::standardize_batch(x);
    let ks_centred = ks_distance(&centred)?;
    let charfn = t_grid.iter().copied().zip(char_fn_estimate(&centred, t_grid)).collect();
    Ok(StatSummary {
        n,
        m: x.len(),
        mean,
        variance,
        skewness,
        se_mean,
        se_var,
        se_skew,
        ks,
        ks_se,
        ks_centred,
        charfn,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentPoint {
    pub constants: Option<TheoryConstants>,
    pub summary: StatSummary,
}

/// `tr f(H) - (gamma/2) c1 tr H` per replica.
pub fn shifted_les(rows: &[ReplicaRow], gamma: f64, c1: f64) -> Vec<f64> {
    rows.iter().map(|r| r.les - 0.5 * gamma * c1 * r.trace_h).collect()
}

/// Runs every grid size; the result depends only on the config, not on the
/// worker count or the order of the grid.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentPoint>, MonteCarloError> {
    config.validate()?;
    let f = TestFunction::parse(&config.f)?;
    let series = cheb_coeffs(&f, DEFAULT_K, DEFAULT_NODES)?;
    config
        .n_grid
        .iter()
        .map(|&n| {
            if config.synthetic {
                let x = synthetic_normals(n, config.replicas, config.seed);
                let summary = summarize(n, &x, 0.0, 1.0, &config.t_grid, mix_seed(config.seed, n as u64))?;
                return Ok(ExperimentPoint {
                    constants: None,
                    summary,
                });
            }
            let k = constants(&f, &series, &config.ensemble, config.gamma, n)?;
            let rows = simulate(&config.ensemble, &f, n, config.replicas, config.seed)?;
            let x = shifted_les(&rows, config.gamma, k.c1);
            let mu = k.mu_f;
            let sigma = k.sigma_f_gamma();
            let summary = summarize(n, &x, mu, sigma, &config.t_grid, mix_seed(config.seed, n as u64))?;
            Ok(ExperimentPoint {
                constants: Some(k),
                summary,
            })
        })
        .collect()
}

/// Runs `op` on a pool of `workers` threads, or the global pool for `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, op: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .expect("thread pool")
            .install(op),
        None => op(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    /// `(ln n, ln statistic)`, sorted by `n`.
    pub points: Vec<(f64, f64)>,
}

impl RateFit {
    pub fn within(&self, window: (f64, f64)) -> bool {
        self.slope >= window.0 && self.slope <= window.1
    }
}

/// Weighted least squares of `ln statistic` on `ln n` with weights `(s/se)^2`;
/// unweighted if any `se` is zero.
pub fn rate_fit(points: &[(f64, f64, f64)]) -> Result<RateFit, MonteCarloError> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2)));
    for &(n, s, _) in &pts {
        if s <= 0.0 || !s.is_finite() {
            return Err(MonteCarloError::NonPositiveStatistic(s, n));
        }
    }
    let mut distinct = pts.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MonteCarloError::InvalidConfig(
            "rate fit needs at least two distinct n".into(),
        ));
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|&(n, s, _)| (n.ln(), s.ln())).collect();
    let weighted = pts.iter().all(|p| p.2 > 0.0 && p.2.is_finite());
    let w: Vec<f64> = pts
        .iter()
        .map(|&(_, s, se)| if weighted { (s / se).powi(2) } else { 1.0 })
        .collect();
    let sw: f64 = w.iter().sum();
    let xbar = xy.iter().zip(&w).map(|((x, _), w)| w * x).sum::<f64>() / sw;
    let ybar = xy.iter().zip(&w).map(|((_, y), w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xy.iter().zip(&w).map(|((x, _), w)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = xy.iter().zip(&w).map(|((x, y), w)| w * (x - xbar) * (y - ybar)).sum();
    let syy: f64 = xy.iter().zip(&w).map(|((_, y), w)| w * (y - ybar).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).min(1.0)
    } else {
        1.0
    };
    let slope_se = if weighted {
        (1.0 / sxx).sqrt()
    } else {
        let dof = (xy.len() as f64 - 2.0).max(1.0);
        let rss: f64 = xy.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / dof / sxx).sqrt()
    };
    Ok(RateFit {
        slope,
        intercept,
        slope_se,
        r_squared,
        points: xy,
    })
}

/// Slope window implied by the rate dichotomy for a given `chi`.
pub fn rate_window(chi: u8) -> (f64, f64) {
    if chi == 1 {
        (-0.75, -0.3)
    } else {
        (-1.3, -0.7)
    }
}

//! Numerical checks of resolvent identities: local-law residuals,
//! Helffer–Sjöstrand reconstruction, the diagonal/off-diagonal decomposition,
//! the mean expansion of the normalised trace, and multipoint functions.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chebyshev::TestFunction;
use crate::ensemble::{mix_seed, replica_rng, sample_wigner, EnsembleError, EnsembleSpec, WignerSample};
use crate::spectral::{eigenvalues, green_trace_of, les, resolvent_entries, SpectralError, SpectralSample};
use crate::theory::{m_derivatives, DomainTag, SpectralParam, TheoryError};

/// Replicas used by the multipoint pilot run.
pub const PILOT_REPLICAS: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreenError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("quadrature warning: {0}")]
    QuadratureWarning(String),
    #[error("target precision needs about {needed} replicas, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub statistic: String,
    pub observed: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub n: usize,
    pub z: Vec<Complex64>,
    pub replicas: usize,
    pub standard_error: f64,
}

impl ResidualReport {
    fn new(
        statistic: &str,
        observed: f64,
        predicted: f64,
        n: usize,
        z: Vec<Complex64>,
        replicas: usize,
        se: f64,
    ) -> Self {
        let ratio = if predicted != 0.0 {
            observed / predicted
        } else {
            f64::NAN
        };
        ResidualReport {
            statistic: statistic.into(),
            observed,
            predicted,
            ratio,
            n,
            z,
            replicas,
            standard_error: se,
        }
    }
}

/// `sqrt(Im m / (N eta)) + 1/(N eta)`.
pub fn psi_bound(z: Complex64, n: usize) -> Result<f64, TheoryError> {
    let m = crate::theory::m_sc(z)?;
    let ne = n as f64 * z.im.abs();
    Ok((m.im.abs() / ne).sqrt() + 1.0 / ne)
}

fn random_unit(rng: &mut impl Rng, n: usize, complex: bool) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = if complex { rng.sample(StandardNormal) } else { 0.0 };
            Complex64::new(re, im)
        })
        .collect();
    let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Largest `|<u, G v> - m <u, v>|` over all coordinate pairs and `probes`
/// random unit-vector pairs, relative to `psi_bound`.
pub fn local_law_residual(
    sample: &WignerSample,
    z: &SpectralParam,
    probes: usize,
) -> Result<ResidualReport, GreenError> {
    if !matches!(z.tag, DomainTag::S) {
        return Err(GreenError::InvalidArgument(format!(
            "local law needs an S-tagged parameter, got {:?}",
            z.tag
        )));
    }
    let n = sample.n;
    if probes > n * n {
        return Err(GreenError::InvalidArgument(format!("probes {probes} > N^2")));
    }
    let g = resolvent_entries(&sample.entries, z.z, &[1])?.remove(0);
    let m = crate::theory::m_sc(z.z)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { m } else { Complex64::new(0.0, 0.0) };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    let complex = matches!(sample.entries, crate::ensemble::HermitianMatrix::Complex(_));
    let mut rng = replica_rng(mix_seed(sample.seed, 0x10ca1), sample.replica_index);
    for _ in 0..probes {
        let u = random_unit(&mut rng, n, complex);
        let v = random_unit(&mut rng, n, complex);
        let gv: Vec<Complex64> = (0..n).map(|i| (0..n).map(|j| g[(i, j)] * v[j]).sum()).collect();
        let ugv: Complex64 = u.iter().zip(&gv).map(|(a, b)| a.conj() * b).sum();
        let uv: Complex64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        worst = worst.max((ugv - m * uv).norm());
    }
    let bound = psi_bound(z.z, n)?;
    Ok(ResidualReport::new("locallaw", worst, bound, n, vec![z.z], 1, 0.0))
}

/// Smooth cutoff: 1 on `|y| <= 1`, 0 on `|y| >= 2`, quintic smoothstep between.
pub fn chi(y: f64) -> f64 {
    let t = (y.abs() - 1.0).clamp(0.0, 1.0);
    1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

pub fn chi_prime(y: f64) -> f64 {
    let a = y.abs();
    if !(1.0..=2.0).contains(&a) {
        return 0.0;
    }
    let t = a - 1.0;
    -30.0 * t * t * (1.0 - t) * (1.0 - t) * y.signum()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// Quasi-analytic extension `sum_{k<=p} (iy)^k/k! f^(k)(x) chi(y)`.
pub fn f_tilde(f: &TestFunction, p: usize, z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let iy = Complex64::new(0.0, y);
    let s: Complex64 = (0..=p)
        .map(|k| iy.powu(k as u32) / factorial(k) * f.derivative(k, x))
        .sum();
    s * chi(y)
}

/// `d f_tilde / d zbar`.
pub fn dbar_f_tilde(f: &TestFunction, p: usize, z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let iy = Complex64::new(0.0, y);
    let head = iy.powu(p as u32) / (2.0 * factorial(p)) * f.derivative(p + 1, x) * chi(y);
    let cp = chi_prime(y);
    if cp == 0.0 {
        return head;
    }
    let tail: Complex64 = (0..=p)
        .map(|k| iy.powu(k as u32) / factorial(k) * f.derivative(k, x))
        .sum();
    head + Complex64::new(0.0, 0.5) * tail * cp
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HsGrid {
    pub nx: usize,
    pub ny: usize,
    /// `x`-interval; `None` takes the function's support hint joined with the spectrum.
    pub x_range: Option<(f64, f64)>,
}

/// `(1/pi) \int\int dbar f_tilde(z) tr G(z) dx dy` on a midpoint grid over `|y| <= 2`.
pub fn hs_integral(f: &TestFunction, eigenvalues: &[f64], p: usize, grid: HsGrid) -> Result<Complex64, GreenError> {
    if !(2..=4).contains(&p) {
        return Err(GreenError::InvalidArgument(format!(
            "extension order p = {p} not in 2..=4"
        )));
    }
    if grid.nx == 0 || grid.ny == 0 || grid.ny % 2 != 0 {
        return Err(GreenError::InvalidArgument("grid needs nx > 0 and even ny > 0".into()));
    }
    let (lo, hi) = match grid.x_range.or_else(|| f.support_hint()) {
        Some((a, b)) => {
            let lmin = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let lmax = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if grid.x_range.is_some() {
                (a, b)
            } else {
                (a.min(lmin - 1.0), b.max(lmax + 1.0))
            }
        }
        None => {
            return Err(GreenError::InvalidArgument(format!(
                "'{}' has no known compact support; pass an explicit x range",
                f.label()
            )))
        }
    };
    let hx = (hi - lo) / grid.nx as f64;
    let hy = 4.0 / grid.ny as f64;
    let rows: Vec<Complex64> = (0..grid.ny)
        .into_par_iter()
        .map(|j| {
            let y = -2.0 + (j as f64 + 0.5) * hy;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..grid.nx {
                let x = lo + (i as f64 + 0.5) * hx;
                let z = Complex64::new(x, y);
                let d = dbar_f_tilde(f, p, z);
                if d == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let tr: Complex64 = eigenvalues.iter().map(|&l| 1.0 / (l - z)).sum();
                acc += d * tr;
            }
            acc
        })
        .collect();
    let total: Complex64 = rows.iter().sum();
    Ok(total * hx * hy / std::f64::consts::PI)
}

/// Helffer–Sjöstrand reconstruction of `tr f(H)`; errors when it misses the
/// eigenvalue sum by more than `tolerance` or has a non-negligible imaginary part.
pub fn hs_trace(
    f: &TestFunction,
    sample: &SpectralSample,
    p: usize,
    grid: HsGrid,
    tolerance: f64,
) -> Result<f64, GreenError> {
    let v = hs_integral(f, &sample.eigenvalues, p, grid)?;
    let exact = les(f, sample);
    if v.im.abs() > tolerance || (v.re - exact).abs() > tolerance {
        return Err(GreenError::QuadratureWarning(format!(
            "reconstruction {} + {}i vs eigenvalue sum {exact}",
            v.re, v.im
        )));
    }
    Ok(v.re)
}

fn replica_seeds(seed: u64, n: usize) -> u64 {
    mix_seed(seed, n as u64)
}

/// Per-replica decomposition statistic
/// `tr G - tr Ghat + sum_i ((Ghat^2)_ii - e) H_ii + m' tr H - m' m (sum H_ii^2 - a2)`,
/// with `e` the batch mean of `tr Ghat^2 / N`.
pub fn decomposition_statistics(
    spec: &EnsembleSpec,
    n: usize,
    z: Complex64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<Complex64>, GreenError> {
    let (m, m1, _) = m_derivatives(z)?;
    let base = replica_seeds(seed, n);
    struct Parts {
        head: Complex64,
        weighted: Complex64,
        trace_h: f64,
        trace_g2: Complex64,
    }
    let parts: Vec<Parts> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Parts, GreenError> {
            let s = sample_wigner(spec, n, base, r as u64)?;
            let tr_g = green_trace_of(&eigenvalues(&s.entries)?, z)? * n as f64;
            let hat = s.entries.zero_diagonal();
            let g = resolvent_entries(&hat, z, &[1])?.remove(0);
            let tr_ghat = g.trace();
            let diag_h = s.entries.diagonal();
            let gt = g.transpose();
            let g2_diag: Vec<Complex64> = (0..n)
                .map(|i| g.row(i).iter().zip(gt.row(i).iter()).map(|(a, b)| a * b).sum())
                .collect();
            let weighted: Complex64 = g2_diag.iter().zip(&diag_h).map(|(a, h)| a * h).sum();
            let sum_sq: f64 = diag_h.iter().map(|h| h * h).sum();
            let trace_h: f64 = diag_h.iter().sum();
            let head = tr_g - tr_ghat + m1 * trace_h - m1 * m * (sum_sq - spec.a2);
            Ok(Parts {
                head,
                weighted,
                trace_h,
                trace_g2: g2_diag.iter().sum(),
            })
        })
        .collect::<Result<_, _>>()?;
    let e_bar = parts.iter().map(|p| p.trace_g2).sum::<Complex64>() / (replicas as f64 * n as f64);
    Ok(parts.iter().map(|p| p.head + p.weighted - e_bar * p.trace_h).collect())
}

/// `sqrt(E|X - EX|^2)` estimated with the `M - 1` divisor.
fn sample_sd(v: &[Complex64]) -> f64 {
    let m = v.len() as f64;
    let mean = v.iter().sum::<Complex64>() / m;
    (v.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Sample standard deviation of the decomposition statistic against `1/(N |eta|^3)`.
pub fn decomposition_residual(
    spec: &EnsembleSpec,
    n: usize,
    z: &SpectralParam,
    replicas: usize,
    seed: u64,
) -> Result<ResidualReport, GreenError> {
    if !matches!(z.tag, DomainTag::Sc { .. }) {
        return Err(GreenError::InvalidArgument(format!(
            "decomposition check needs an S_c parameter, got {:?}",
            z.tag
        )));
    }
    if replicas < 100 {
        return Err(GreenError::InvalidArgument(format!(
            "need at least 100 replicas, got {replicas}"
        )));
    }
    let r = decomposition_statistics(spec, n, z.z, replicas, seed)?;
    let sd = sample_sd(&r);
    let bound = 1.0 / (n as f64 * z.z.im.abs().powi(3));
    let se = sd / (2.0 * (replicas as f64 - 1.0)).sqrt();
    Ok(ResidualReport::new("decomp", sd, bound, n, vec![z.z], replicas, se))
}

/// One row of the mean-expansion table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EgRow {
    pub n: usize,
    pub replicas: usize,
    pub mean: Complex64,
    pub se: f64,
    /// `|mean - m|`.
    pub residual_leading: f64,
    /// After adding the `1/N` corrections.
    pub residual_first: f64,
    /// After adding the `N^{-3/2}` correction as well.
    pub residual_full: f64,
}

/// `(1/N correction, N^{-3/2} correction)` of the mean normalised trace.
pub fn eg_corrections(spec: &EnsembleSpec, z: Complex64, n: usize) -> Result<(Complex64, Complex64), TheoryError> {
    let (m, m1, _) = m_derivatives(z)?;
    let nf = n as f64;
    let k = 2.0 / spec.beta_f64() - 1.0;
    let t = -(m1 / m);
    let first = t * (-k * m1 / nf - (spec.a2 - 2.0 / spec.beta_f64()) * m * m / nf - spec.s4 * m.powu(4) / nf);
    let second = t * (spec.a3 * m.powu(3) / nf.powf(1.5));
    Ok((first, second))
}

pub fn eg_expansion_residual(
    spec: &EnsembleSpec,
    z: Complex64,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<Vec<EgRow>, GreenError> {
    if crate::theory::dist_to_cut(z) < 0.3 {
        return Err(GreenError::InvalidArgument(format!("dist({z}, [-2,2]) < 0.3")));
    }
    if replicas < 2 {
        return Err(GreenError::InvalidArgument("need at least 2 replicas".into()));
    }
    let m = crate::theory::m_sc(z)?;
    n_grid
        .iter()
        .map(|&n| {
            let g = trace_batch(spec, n, &[z], replicas, seed)?;
            let vals: Vec<Complex64> = g.iter().map(|r| r[0]).collect();
            let mean = vals.iter().sum::<Complex64>() / replicas as f64;
            let var = vals.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (replicas as f64 - 1.0);
            let se = (var / replicas as f64).sqrt();
            let (first, second) = eg_corrections(spec, z, n)?;
            Ok(EgRow {
                n,
                replicas,
                mean,
                se,
                residual_leading: (mean - m).norm(),
                residual_first: (mean - m - first).norm(),
                residual_full: (mean - m - first - second).norm(),
            })
        })
        .collect()
}

/// `G(z)` normalised traces for each replica and each point.
pub fn trace_batch(
    spec: &EnsembleSpec,
    n: usize,
    zs: &[Complex64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<Complex64>>, GreenError> {
    let base = replica_seeds(seed, n);
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let s = sample_wigner(spec, n, base, r as u64)?;
            let ev = eigenvalues(&s.entries)?;
            zs.iter()
                .map(|&z| green_trace_of(&ev, z).map_err(GreenError::from))
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MultipointEstimate {
    pub estimate: Complex64,
    pub se: f64,
    pub replicas: usize,
}

/// Unbiased centred product moment of 2 or 3 complex columns with a delete-one
/// jackknife standard error (`sqrt(se_re^2 + se_im^2)`).
pub fn centred_product(columns: &[Vec<Complex64>]) -> MultipointEstimate {
    let k = columns.len();
    assert!(k == 2 || k == 3, "centred products are defined for 2 or 3 points");
    let m = columns[0].len();
    assert!(m > k, "need more replicas than points");
    let mf = m as f64;
    // Shift by the means first; the statistic is shift invariant.
    let shifted: Vec<Vec<Complex64>> = columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<Complex64>() / mf;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let value = |s: &Sums, count: f64| -> Complex64 {
        let mean: Vec<Complex64> = s.s1.iter().map(|v| v / count).collect();
        if k == 2 {
            let c = s.s12[0] / count - mean[0] * mean[1];
            c * count / (count - 1.0)
        } else {
            let third =
                s.s123 / count - mean[0] * s.s12[2] / count - mean[1] * s.s12[1] / count - mean[2] * s.s12[0] / count
                    + 2.0 * mean[0] * mean[1] * mean[2];
            third * count * count / ((count - 1.0) * (count - 2.0))
        }
    };
    let row = |i: usize| -> Sums {
        let v: Vec<Complex64> = shifted.iter().map(|c| c[i]).collect();
        Sums::of(&v)
    };
    let mut total = Sums::zero(k);
    for i in 0..m {
        total.add(&row(i), 1.0);
    }
    let estimate = value(&total, mf);
    let mut loo = Vec::with_capacity(m);
    for i in 0..m {
        let mut s = total.clone();
        s.add(&row(i), -1.0);
        loo.push(value(&s, mf - 1.0));
    }
    let mean_loo = loo.iter().sum::<Complex64>() / mf;
    let factor = (mf - 1.0) / mf;
    let var_re = factor * loo.iter().map(|v| (v.re - mean_loo.re).powi(2)).sum::<f64>();
    let var_im = factor * loo.iter().map(|v| (v.im - mean_loo.im).powi(2)).sum::<f64>();
    MultipointEstimate {
        estimate,
        se: (var_re + var_im).sqrt(),
        replicas: m,
    }
}

#[derive(Clone)]
struct Sums {
    s1: Vec<Complex64>,
    /// Pairwise: (0,1), (0,2), (1,2).
    s12: [Complex64; 3],
    s123: Complex64,
}

impl Sums {
    fn zero(k: usize) -> Self {
        Sums {
            s1: vec![Complex64::new(0.0, 0.0); k],
            s12: [Complex64::new(0.0, 0.0); 3],
            s123: Complex64::new(0.0, 0.0),
        }
    }

    fn of(v: &[Complex64]) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let get = |i: usize| v.get(i).copied().unwrap_or(zero);
        Sums {
            s1: v.to_vec(),
            s12: [get(0) * get(1), get(0) * get(2), get(1) * get(2)],
            s123: get(0) * get(1) * get(2),
        }
    }

    fn add(&mut self, o: &Sums, w: f64) {
        for (a, b) in self.s1.iter_mut().zip(&o.s1) {
            *a += b * w;
        }
        for (a, b) in self.s12.iter_mut().zip(&o.s12) {
            *a += b * w;
        }
        self.s123 += o.s123 * w;
    }
}

/// Monte Carlo estimate of `E<G(z1)><G(z2)>` or `E<G(z1)><G(z2)><G(z3)>`.
///
/// When `target` is given, a pilot run of [`PILOT_REPLICAS`] checks that the
/// budget can reach `se < |target|/3`.
pub fn multipoint_mc(
    spec: &EnsembleSpec,
    n: usize,
    zs: &[SpectralParam],
    replicas: usize,
    seed: u64,
    target: Option<Complex64>,
) -> Result<MultipointEstimate, GreenError> {
    if zs.len() != 2 && zs.len() != 3 {
        return Err(GreenError::InvalidArgument(format!(
            "need 2 or 3 points, got {}",
            zs.len()
        )));
    }
    if zs.len() == 3 && (spec.beta != 1 || !spec.goe_gue_matched) {
        return Err(GreenError::Theory(TheoryError::AssumptionViolated(
            "three-point estimates need a GOE-matched beta = 1 ensemble".into(),
        )));
    }
    let points: Vec<Complex64> = zs.iter().map(|p| p.z).collect();
    if let Some(t) = target {
        let pilot = PILOT_REPLICAS.min(replicas);
        let rows = trace_batch(spec, n, &points, pilot, mix_seed(seed, 0x9170))?;
        let est = centred_product(&transpose(&rows));
        let needed = ((est.se / (t.norm() / 3.0)).powi(2) * pilot as f64).ceil() as usize;
        if needed > replicas {
            return Err(GreenError::BudgetExceeded {
                needed,
                budget: replicas,
            });
        }
    }
    let rows = trace_batch(spec, n, &points, replicas, seed)?;
    Ok(centred_product(&transpose(&rows)))
}

fn transpose(rows: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let k = rows.first().map_or(0, |r| r.len());
    (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Dense `G(z)` of a sample, re-exported for callers that need entries.
pub fn resolvent(sample: &WignerSample, z: Complex64) -> Result<DMatrix<Complex64>, GreenError> {
    Ok(resolvent_entries(&sample.entries, z, &[1])?.remove(0))
}

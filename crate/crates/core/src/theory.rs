//! Closed-form constants and deterministic functions: the semicircle Stieltjes
//! transform, the CLT mean and variance, third-moment coefficients, and the
//! two- and three-point resolvent predictions.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::chebyshev::{shift_gamma, ChebSeries, TestFunction};
use crate::ensemble::EnsembleSpec;

/// A point is treated as lying on `[-2, 2]` when closer than this.
pub const CUT_TOLERANCE: f64 = 1e-14;
/// Threshold of the exact-zero test defining `chi`.
pub const CHI_THRESHOLD: f64 = 1e-12;
const M_L_NODES: usize = 4096;
const SIGMA_INTEGRAL_NODES: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("z = {0} lies on the branch cut [-2, 2]")]
    BranchError(Complex64),
    #[error("degenerate arguments: {0}")]
    DegenerateArguments(String),
    #[error("r2 tail bound {tail_bound:.3e} exceeds tolerance {tolerance:.3e}")]
    TailTooLarge { tail_bound: f64, tolerance: f64 },
    #[error("quadrature did not converge: {0}")]
    QuadratureWarning(String),
    #[error("test function '{0}' is not smooth; constants need f in C^5")]
    NonSmooth(String),
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("z = {z} is outside the {domain} domain: {reason}")]
    OutOfDomain {
        z: Complex64,
        domain: String,
        reason: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn on_cut(z: Complex64) -> bool {
    z.im.abs() <= CUT_TOLERANCE && z.re.abs() <= 2.0
}

/// `sqrt(z^2 - 4)` with the cut on `[-2, 2]` and `sqrt(z^2 - 4) ~ z` at infinity.
pub fn sqrt_z2m4(z: Complex64) -> Result<Complex64, TheoryError> {
    if on_cut(z) {
        return Err(TheoryError::BranchError(z));
    }
    Ok((z - 2.0).sqrt() * (z + 2.0).sqrt())
}

/// Stieltjes transform of the semicircle law.
pub fn m_sc(z: Complex64) -> Result<Complex64, TheoryError> {
    let s = sqrt_z2m4(z)?;
    // Avoid cancellation for large |z|: m = -1/z * 2/(1 + sqrt(1 - 4/z^2)).
    if z.norm() > 4.0 {
        return Ok(-2.0 / (z + s));
    }
    Ok(0.5 * (-z + s))
}

/// `(m, m', m'')`.
pub fn m_derivatives(z: Complex64) -> Result<(Complex64, Complex64, Complex64), TheoryError> {
    let s = sqrt_z2m4(z)?;
    let m = m_sc(z)?;
    let m1 = -m / s;
    let m2 = -2.0 / (s * s * s);
    Ok((m, m1, m2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TMode {
    /// `-1/sqrt(z^2 - 4)`.
    Leading,
    /// `(-z - 2 g)^{-1}` for a supplied mean normalised trace `g`.
    Empirical(Complex64),
}

pub fn t_of_z(z: Complex64, mode: TMode) -> Result<Complex64, TheoryError> {
    match mode {
        TMode::Leading => Ok(-1.0 / sqrt_z2m4(z)?),
        TMode::Empirical(g) => {
            let d = -z - 2.0 * g;
            if d.norm() == 0.0 {
                return Err(TheoryError::DegenerateArguments("-z - 2g vanishes".into()));
            }
            Ok(1.0 / d)
        }
    }
}

/// Domain membership of a spectral parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum DomainTag {
    /// `|E| <= 10`, `0 < eta <= 10`.
    S,
    /// `|E| <= 10`, `|eta| >= n^{-1+c}`.
    Sc { n: usize, c: f64 },
    /// `|E| <= 10`, `|eta| >= n^{-1/4}`.
    D { n: usize },
    /// `dist(z, [-2, 2]) = a delta`.
    Sa { a: u8, delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralParam {
    pub z: Complex64,
    pub tag: DomainTag,
}

pub fn dist_to_cut(z: Complex64) -> f64 {
    let x = z.re.clamp(-2.0, 2.0);
    Complex64::new(z.re - x, z.im).norm()
}

impl SpectralParam {
    pub fn new(z: Complex64, tag: DomainTag) -> Result<Self, TheoryError> {
        let fail = |domain: &str, reason: String| {
            Err(TheoryError::OutOfDomain {
                z,
                domain: domain.into(),
                reason,
            })
        };
        let (e, eta) = (z.re, z.im);
        match tag {
            DomainTag::S => {
                if e.abs() > 10.0 || eta <= 0.0 || eta > 10.0 {
                    return fail("S", "need |E| <= 10 and 0 < eta <= 10".into());
                }
            }
            DomainTag::Sc { n, c } => {
                let floor = (n as f64).powf(-1.0 + c);
                if e.abs() > 10.0 || eta.abs() < floor {
                    return fail("S_c", format!("need |E| <= 10 and |eta| >= {floor:.3e}"));
                }
            }
            DomainTag::D { n } => {
                let floor = (n as f64).powf(-0.25);
                if e.abs() > 10.0 || eta.abs() < floor {
                    return fail("D", format!("need |E| <= 10 and |eta| >= {floor:.3e}"));
                }
            }
            DomainTag::Sa { a, delta } => {
                let d = dist_to_cut(z);
                if a == 0 || delta <= 0.0 || (d - a as f64 * delta).abs() > 1e-9 {
                    return fail("S_a", format!("dist(z, [-2,2]) = {d}, need {}", a as f64 * delta));
                }
            }
        }
        Ok(SpectralParam { z, tag })
    }

    /// The point of `S_a(delta)` to the right of the cut with imaginary part `eta`.
    pub fn on_contour(a: u8, delta: f64, eta: f64) -> Result<Self, TheoryError> {
        let r = a as f64 * delta;
        if eta.abs() > r {
            return Err(TheoryError::InvalidArgument(format!(
                "|eta| = {eta} exceeds a delta = {r}"
            )));
        }
        let z = Complex64::new(2.0 + (r * r - eta * eta).sqrt(), eta);
        Self::new(z, DomainTag::Sa { a, delta })
    }
}

/// Midpoint angles `t_j = pi (j + 1/2) / n` on `[0, pi]`.
fn angles(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| PI * (j as f64 + 0.5) / n as f64)
}

/// Per-term breakdown of the CLT mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MuBreakdown {
    /// `N \int f rho_sc`.
    pub bulk: f64,
    /// `-(2/beta - 1)/(2 pi) \int f / sqrt(4 - x^2)`.
    pub arcsine: f64,
    /// `(2/beta - 1)(f(2) + f(-2))/4`.
    pub edge: f64,
    /// `(a2 - 2/beta)/(2 pi) \int f (x^2 - 2)/sqrt(4 - x^2)`.
    pub diag_variance: f64,
    /// `s4/(2 pi) \int f (x^4 - 4x^2 + 2)/sqrt(4 - x^2)`.
    pub fourth_cumulant: f64,
    /// `a3/(2 pi sqrt N) \int f (x^3 - 3x)/sqrt(4 - x^2)`.
    pub diag_skew: f64,
    pub total: f64,
}

/// Expected value of `tr f(H)` up to `o(1)`.
///
/// Integrals use `x = 2 cos t` on the series node grid; each weight is a
/// Chebyshev polynomial in `x/2`, so the terms equal `N (c0 - c2)/2`,
/// `-(2/beta - 1) c0/4`, `(a2 - 2/beta) c2/2`, `s4 c4/2` and `a3 c3/(2 sqrt N)`.
pub fn mu_f(series: &ChebSeries, f: &TestFunction, spec: &EnsembleSpec, n: usize) -> Result<MuBreakdown, TheoryError> {
    let nodes = series.nodes.max(64);
    let estimate = |nodes: usize| {
        let mut acc = [0.0; 5];
        for t in angles(nodes) {
            let fx = f.eval(2.0 * t.cos());
            let s = t.sin();
            acc[0] += fx * s * s;
            acc[1] += fx;
            acc[2] += fx * (2.0 * t).cos();
            acc[3] += fx * (4.0 * t).cos();
            acc[4] += fx * (3.0 * t).cos();
        }
        // (1/pi) \int_0^pi g dt  ~  mean over nodes
        acc.map(|a| a / nodes as f64)
    };
    let fine = estimate(nodes);
    let coarse = estimate(nodes / 2);
    let err = fine.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fine.iter().map(|a| a.abs()).fold(1.0, f64::max);
    if err > 1e-9 * scale {
        return Err(TheoryError::QuadratureWarning(format!(
            "mean integrals changed by {err:.3e} between {} and {nodes} nodes",
            nodes / 2
        )));
    }
    let [sin2, one, cos2, cos4, cos3] = fine;
    let nf = n as f64;
    let beta = spec.beta_f64();
    let k = 2.0 / beta - 1.0;
    let bulk = nf * 2.0 * sin2;
    let arcsine = -0.5 * k * one;
    let edge = 0.25 * k * (f.eval(2.0) + f.eval(-2.0));
    let diag_variance = (spec.a2 - 2.0 / beta) * cos2;
    let fourth_cumulant = spec.s4 * cos4;
    let diag_skew = spec.a3 * cos3 / nf.sqrt();
    let total = bulk + arcsine + edge + diag_variance + fourth_cumulant + diag_skew;
    Ok(MuBreakdown {
        bulk,
        arcsine,
        edge,
        diag_variance,
        fourth_cumulant,
        diag_skew,
        total,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Series,
    Integral,
}

/// Limiting variance of `tr f(H)`.
pub fn sigma2_f(series: &ChebSeries, spec: &EnsembleSpec, mode: SigmaMode, f: &TestFunction) -> f64 {
    let beta = spec.beta_f64();
    match mode {
        SigmaMode::Series => {
            let s: f64 = series
                .coeffs
                .iter()
                .enumerate()
                .skip(2)
                .map(|(k, c)| k as f64 * c * c)
                .sum();
            s / (2.0 * beta) + 0.5 * spec.s4 * series.c(2).powi(2)
        }
        SigmaMode::Integral => sigma2_integral(f, spec, SIGMA_INTEGRAL_NODES),
    }
}

fn sigma2_integral(f: &TestFunction, spec: &EnsembleSpec, nodes: usize) -> f64 {
    let beta = spec.beta_f64();
    let xs: Vec<f64> = angles(nodes).map(|t| 2.0 * t.cos()).collect();
    let fx: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
    let dfx: Vec<f64> = xs.iter().map(|&x| f.derivative(1, x)).collect();
    let mut double = 0.0;
    for i in 0..nodes {
        for j in 0..nodes {
            let q = if i == j {
                dfx[i]
            } else {
                (fx[j] - fx[i]) / (xs[i] - xs[j])
            };
            double += q * q * (4.0 - xs[i] * xs[j]);
        }
    }
    // dx/sqrt(4-x^2) = dt, so each integral is pi * mean over nodes.
    let h = PI / nodes as f64;
    double *= h * h;
    let lin: f64 = fx.iter().zip(&xs).map(|(v, x)| v * x).sum::<f64>() * h;
    let quad: f64 = fx.iter().zip(&xs).map(|(v, x)| v * (2.0 - x * x)).sum::<f64>() * h;
    let pi2 = PI * PI;
    double / (2.0 * beta * pi2) - lin * lin / (2.0 * beta * pi2) + spec.s4 * quad * quad / (2.0 * pi2)
}

/// `(1/8) (c_1)^3 a_3` of the shifted series.
pub fn r1(series_gamma: &ChebSeries, spec: &EnsembleSpec) -> f64 {
    series_gamma.c(1).powi(3) * spec.a3 / 8.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct R2Value {
    pub value: f64,
    pub tail_bound: f64,
}

impl R2Value {
    pub fn within(self, tolerance: f64) -> Result<Self, TheoryError> {
        if self.tail_bound > tolerance {
            return Err(TheoryError::TailTooLarge {
                tail_bound: self.tail_bound,
                tolerance,
            });
        }
        Ok(self)
    }
}

/// The three convolution sums of the quintuple sum, indices bounded by `cutoff`.
///
/// Each pair of summation indices enters only through its sum and difference,
/// so the quintuple sum collapses to one-dimensional convolutions.
fn r2_sums(c: &dyn Fn(i64) -> f64, cutoff: usize) -> f64 {
    let l = cutoff as i64;
    // w[p + l] = sum_{a, t <= l, t - a = p} c(a + t + 1)
    let mut w = vec![0.0; (2 * l + 1) as usize];
    // s[u] = sum_{a + t = u, a, t <= l} c(t - a)
    let mut s = vec![0.0; (2 * l + 1) as usize];
    for a in 0..=l {
        for t in 0..=l {
            w[(t - a + l) as usize] += c(a + t + 1);
            s[(a + t) as usize] += c(t - a);
        }
    }
    let conv = |x: &[f64], y: &[f64]| {
        let mut out = vec![0.0; x.len() + y.len() - 1];
        for (i, a) in x.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in y.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    };
    let ww = conv(&w, &w); // index offset -2l
    let ss = conv(&s, &s); // offset 0
    let sw = conv(&s, &w); // offset -l
    let mut total = 0.0;
    for psi in 0..=l {
        let weight = (psi + 1) as f64;
        let mut acc = 0.0;
        for (i, v) in ww.iter().enumerate() {
            acc += v * c(i as i64 - 2 * l + 2 * psi + 2);
        }
        for (i, v) in ss.iter().enumerate() {
            acc += v * c(i as i64 + 2 * psi + 4);
        }
        for (i, v) in sw.iter().enumerate() {
            acc -= v * c(i as i64 - l + 2 * psi + 3);
        }
        total += weight * acc;
    }
    total
}

/// Second-order third-moment coefficient of the shifted series.
///
/// The quintuple index written `gamma` in the usual statement is called
/// `gamma'` here to keep it apart from the shift parameter.
pub fn r2(series_gamma: &ChebSeries, spec: &EnsembleSpec, cutoff: usize) -> R2Value {
    let beta2 = spec.beta_f64().powi(2);
    let fourth = 0.375 * series_gamma.c(2) * series_gamma.c(1).powi(2) * spec.b4;
    let sum = |coeffs: &[f64], cutoff: usize| {
        let c = |k: i64| coeffs.get(k.unsigned_abs() as usize).copied().unwrap_or(0.0);
        r2_sums(&c, cutoff) / beta2
    };
    let support = series_gamma.support();
    let full = 2 * support + 4;
    let value = sum(&series_gamma.coeffs, cutoff) + fourth;
    let mut tail_bound = 0.0;
    if cutoff < full {
        tail_bound += (sum(&series_gamma.coeffs, full) + fourth - value).abs();
    }
    if series_gamma.tail_estimate > 0.0 {
        // Sensitivity to the top quarter of the coefficients.
        let top = (series_gamma.k / 4).max(1);
        let mut cut = series_gamma.coeffs.clone();
        for c in cut.iter_mut().skip(series_gamma.k + 1 - top) {
            *c = 0.0;
        }
        tail_bound += (sum(&series_gamma.coeffs, cutoff) - sum(&cut, cutoff)).abs();
    }
    R2Value { value, tail_bound }
}

/// All constants for `(f, gamma, spec, n)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub label: String,
    pub beta: u8,
    pub n: usize,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub mu_f: f64,
    pub mu_terms: MuBreakdown,
    pub sigma2_f: f64,
    pub sigma2_f_gamma: f64,
    pub chi: u8,
    pub r1: f64,
    pub r2: f64,
    pub r2_tail_bound: f64,
    pub warnings: Vec<String>,
}

impl TheoryConstants {
    pub fn sigma_f_gamma(&self) -> f64 {
        self.sigma2_f_gamma.sqrt()
    }

    /// Skewness of the standardised statistic through order `1/N`:
    /// `(r1 N^{-1/2} + r2 N^{-1}) / var^{3/2}`.
    pub fn skewness_prediction(&self, var: f64, n: usize) -> f64 {
        let nf = n as f64;
        (self.r1 / nf.sqrt() + self.r2 / nf) / var.powf(1.5)
    }
}

pub fn constants(
    f: &TestFunction,
    series: &ChebSeries,
    spec: &EnsembleSpec,
    gamma: f64,
    n: usize,
) -> Result<TheoryConstants, TheoryError> {
    if !f.is_smooth() {
        return Err(TheoryError::NonSmooth(f.label().to_string()));
    }
    if !gamma.is_finite() {
        return Err(TheoryError::InvalidArgument(format!(
            "gamma must be finite, got {gamma}"
        )));
    }
    let mut warnings = Vec::new();
    if let Some(w) = series.warning() {
        warnings.push(w.to_string());
    }
    let (_, series_gamma) = shift_gamma(f, series, gamma);
    let c1 = series.c(1);
    let c2 = series.c(2);
    let mu = mu_f(series, f, spec, n)?;
    let sigma2 = sigma2_f(series, spec, SigmaMode::Series, f);
    let sigma2_gamma = sigma2 + 0.25 * spec.a2 * (gamma - 1.0).powi(2) * c1 * c1;
    let chi = u8::from(((1.0 - gamma) * c1 * spec.a3).abs() >= CHI_THRESHOLD);
    let r2v = r2(&series_gamma, spec, 2 * series_gamma.k + 4);
    if r2v.tail_bound > 1e-8 {
        warnings.push(format!("r2 tail bound {:.3e}", r2v.tail_bound));
    }
    Ok(TheoryConstants {
        label: f.label().to_string(),
        beta: spec.beta,
        n,
        gamma,
        c1,
        c2,
        mu_f: mu.total,
        mu_terms: mu,
        sigma2_f: sigma2,
        sigma2_f_gamma: sigma2_gamma,
        chi,
        r1: r1(&series_gamma, spec),
        r2: r2v.value,
        r2_tail_bound: r2v.tail_bound,
        warnings,
    })
}

/// `1 / [(u^2-4)^{3/2} (v^2-4)^{1/2} (w^2-4)^{1/2} (u - v)(w - u)]`.
pub fn h_kernel(u: Complex64, v: Complex64, w: Complex64) -> Result<Complex64, TheoryError> {
    let (su, sv, sw) = (sqrt_z2m4(u)?, sqrt_z2m4(v)?, sqrt_z2m4(w)?);
    if (u - v).norm() < 1e-12 || (w - u).norm() < 1e-12 {
        return Err(TheoryError::DegenerateArguments(format!(
            "h({u}, {v}, {w}) has coincident points"
        )));
    }
    Ok(1.0 / (su * su * su * sv * sw * (u - v) * (w - u)))
}

fn m_l_on(params: &[(Complex64, u32)], nodes: usize) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for t in angles(nodes) {
        let x = 2.0 * t.cos();
        let s = t.sin();
        let mut denom = Complex64::new(1.0, 0.0);
        for &(z, k) in params {
            denom *= (x - z).powu(k);
        }
        acc += s * s / denom;
    }
    // rho(x) dx = (2/pi) sin^2 t dt
    acc * (2.0 / nodes as f64)
}

/// `\int rho_sc(x) / prod (x - z_j)^{k_j} dx`.
pub fn m_l_integral(params: &[(Complex64, u32)]) -> Result<Complex64, TheoryError> {
    if params.is_empty() || params.iter().any(|p| p.1 == 0) {
        return Err(TheoryError::InvalidArgument(
            "need at least one (z, k) with k >= 1".into(),
        ));
    }
    let total: u32 = params.iter().map(|p| p.1).sum();
    if total > 8 {
        return Err(TheoryError::InvalidArgument(format!("sum of powers {total} > 8")));
    }
    for &(z, _) in params {
        sqrt_z2m4(z)?;
    }
    let fine = m_l_on(params, M_L_NODES);
    let coarse = m_l_on(params, M_L_NODES / 2);
    let err = (fine - coarse).norm();
    if err > 1e-8 * (1.0 + fine.norm()) {
        return Err(TheoryError::QuadratureWarning(format!(
            "m_l integral changed by {err:.3e} under node halving; points too close to the cut"
        )));
    }
    Ok(fine)
}

fn require_tag(p: &SpectralParam, a: u8) -> Result<f64, TheoryError> {
    match p.tag {
        DomainTag::Sa { a: got, delta } if got == a => Ok(delta),
        _ => Err(TheoryError::OutOfDomain {
            z: p.z,
            domain: format!("S_{a}"),
            reason: format!("parameter is tagged {:?}", p.tag),
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThreePointPrediction {
    pub b3_term: Complex64,
    pub h_term: Complex64,
    pub b4_term: Complex64,
    pub total: Complex64,
}

/// Leading terms of `E<G(z1)><G(z2)><G(z3)>` for GOE-matched real ensembles.
///
/// The `b3` term carries a minus sign: the third cumulant of `tr H` is
/// `+a3/sqrt(N)`, and `<G> ~ -m' <tr H>/N` at first order.
pub fn three_point_prediction(
    z1: &SpectralParam,
    z2: &SpectralParam,
    z3: &SpectralParam,
    spec: &EnsembleSpec,
    n: usize,
) -> Result<ThreePointPrediction, TheoryError> {
    if !spec.goe_gue_matched {
        return Err(TheoryError::AssumptionViolated(
            "three-point prediction needs a GOE-matched ensemble (a2 = 2, m4 = 3, E h_o^3 = 0)".into(),
        ));
    }
    if spec.beta != 1 {
        return Err(TheoryError::AssumptionViolated(
            "three-point prediction is for beta = 1".into(),
        ));
    }
    let d1 = require_tag(z1, 1)?;
    let d2 = require_tag(z2, 2)?;
    let d3 = require_tag(z3, 3)?;
    if (d1 - d2).abs() > 1e-12 || (d1 - d3).abs() > 1e-12 {
        return Err(TheoryError::OutOfDomain {
            z: z1.z,
            domain: "S_a".into(),
            reason: "contours must share delta".into(),
        });
    }
    let (a, b, c) = (z1.z, z2.z, z3.z);
    let (ma, da, _) = m_derivatives(a)?;
    let (mb, db, _) = m_derivatives(b)?;
    let (mc, dc, _) = m_derivatives(c)?;
    let nf = n as f64;
    let dprod = da * db * dc;
    let b3_term = -spec.b3 * nf.powf(-3.5) * dprod;
    let hsum = h_kernel(a, b, c)? + h_kernel(c, b, a)? + h_kernel(b, a, c)?;
    let h_term = 8.0 * nf.powi(-4) * hsum;
    let b4_term = spec.b4 * nf.powi(-4) * dprod * (ma + mb + mc);
    Ok(ThreePointPrediction {
        b3_term,
        h_term,
        b4_term,
        total: b3_term + h_term + b4_term,
    })
}

/// Leading term of `E<G(z1)><G(z2)>`: `(2/N^2) T(z2) \int rho / ((x - z2)(x - z1)^2)`.
pub fn two_point_prediction(z1: &SpectralParam, z2: &SpectralParam, n: usize) -> Result<Complex64, TheoryError> {
    require_tag(z1, 1)?;
    require_tag(z2, 2)?;
    let t = t_of_z(z2.z, TMode::Leading)?;
    let ml = m_l_integral(&[(z2.z, 1), (z1.z, 2)])?;
    Ok(2.0 / (n as f64).powi(2) * t * ml)
}

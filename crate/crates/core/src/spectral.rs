//! Per-sample spectral quantities: eigenvalues, linear statistics, the
//! standardised statistic, and resolvents.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::chebyshev::TestFunction;
use crate::ensemble::{HermitianMatrix, WignerSample};
use crate::theory::TheoryConstants;

/// Minimum distance between `z` and the sampled spectrum.
pub const POLE_THRESHOLD: f64 = 1e-10;
/// Largest matrix for which dense resolvents are formed.
pub const MAX_RESOLVENT_N: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigensolver failed: {0}")]
    EigenFailure(String),
    #[error("z = {z} is within {distance:.3e} of an eigenvalue")]
    PoleProximity { z: Complex64, distance: f64 },
    #[error("H - z is numerically singular at z = {0}")]
    SingularShift(Complex64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralSample {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    pub trace_h: f64,
    pub sum_diag_sq: f64,
    #[serde(skip)]
    pub eigenvectors: Option<DMatrix<Complex64>>,
    /// Eigenvalues of the zero-diagonal companion, when requested.
    pub zero_diag_eigenvalues: Option<Vec<f64>>,
}

impl SpectralSample {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn has_vectors(&self) -> bool {
        self.eigenvectors.is_some()
    }
}

fn sort_desc(values: &mut [f64]) {
    values.sort_by(|a, b| b.total_cmp(a));
}

fn check_finite(values: &[f64]) -> Result<(), SpectralError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SpectralError::EigenFailure("non-finite eigenvalue".into()))
    }
}

/// Eigenvalues of a Hermitian matrix, sorted descending.
pub fn eigenvalues(h: &HermitianMatrix) -> Result<Vec<f64>, SpectralError> {
    let mut values: Vec<f64> = match h {
        HermitianMatrix::Real(m) => m.clone().symmetric_eigenvalues().iter().copied().collect(),
        HermitianMatrix::Complex(m) => m.clone().symmetric_eigenvalues().iter().copied().collect(),
    };
    check_finite(&values)?;
    sort_desc(&mut values);
    Ok(values)
}

fn eigen_with_vectors(h: &HermitianMatrix) -> Result<(Vec<f64>, DMatrix<Complex64>), SpectralError> {
    let (values, vectors) = match h {
        HermitianMatrix::Real(m) => {
            let e = SymmetricEigen::new(m.clone());
            (
                e.eigenvalues.iter().copied().collect::<Vec<_>>(),
                e.eigenvectors.map(|x| Complex64::new(x, 0.0)),
            )
        }
        HermitianMatrix::Complex(m) => {
            let e = SymmetricEigen::new(m.clone());
            (e.eigenvalues.iter().copied().collect::<Vec<_>>(), e.eigenvectors)
        }
    };
    check_finite(&values)?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let q = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, order[c])]);
    Ok((sorted, q))
}

pub fn decompose(sample: &WignerSample, want_vectors: bool) -> Result<SpectralSample, SpectralError> {
    let (eigenvalues, eigenvectors) = if want_vectors {
        let (v, q) = eigen_with_vectors(&sample.entries)?;
        (v, Some(q))
    } else {
        (eigenvalues(&sample.entries)?, None)
    };
    Ok(SpectralSample {
        eigenvalues,
        trace_h: sample.trace(),
        sum_diag_sq: sample.sum_diag_sq(),
        eigenvectors,
        zero_diag_eigenvalues: None,
    })
}

/// Adds the eigenvalues of the zero-diagonal companion.
pub fn with_zero_diagonal(mut s: SpectralSample, sample: &WignerSample) -> Result<SpectralSample, SpectralError> {
    s.zero_diag_eigenvalues = Some(eigenvalues(&sample.entries.zero_diagonal())?);
    Ok(s)
}

pub fn les(f: &TestFunction, s: &SpectralSample) -> f64 {
    s.eigenvalues.iter().map(|&x| f.eval(x)).sum()
}

/// `tr H^k` for `k <= 4` from matrix products, for polynomial test functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerTraces {
    pub n: usize,
    pub traces: [f64; 5],
    pub sum_diag_sq: f64,
}

impl PowerTraces {
    pub fn new(h: &HermitianMatrix) -> Self {
        let n = h.dim();
        let diag = h.diagonal();
        let t1: f64 = diag.iter().sum();
        let t2 = h.frobenius_sq();
        let (t3, t4) = match h {
            HermitianMatrix::Real(m) => {
                let m2 = m * m;
                (m2.component_mul(m).sum(), m2.iter().map(|x| x * x).sum())
            }
            HermitianMatrix::Complex(m) => {
                let m2 = m * m;
                // tr H^3 = sum_ij (H^2)_ij H_ji, and H_ji = conj(H_ij).
                let t3: f64 = m2.iter().zip(m.iter()).map(|(a, b)| (a * b.conj()).re).sum();
                (t3, m2.iter().map(|z| z.norm_sqr()).sum())
            }
        };
        PowerTraces {
            n,
            traces: [n as f64, t1, t2, t3, t4],
            sum_diag_sq: diag.iter().map(|x| x * x).sum(),
        }
    }

    pub fn trace_h(&self) -> f64 {
        self.traces[1]
    }

    /// `sum_k a_k tr H^k`; `None` if the degree exceeds four.
    pub fn les_polynomial(&self, monomial: &[f64]) -> Option<f64> {
        let degree = monomial.iter().rposition(|&a| a != 0.0).unwrap_or(0);
        if degree > 4 {
            return None;
        }
        Some(monomial.iter().zip(self.traces.iter()).map(|(a, t)| a * t).sum())
    }
}

/// Monomial coefficients when `f` is a polynomial of degree at most four.
pub fn power_path_coefficients(f: &TestFunction) -> Option<Vec<f64>> {
    let p = f.polynomial_coefficients()?;
    let degree = p.iter().rposition(|&a| a != 0.0).unwrap_or(0);
    (degree <= 4).then_some(p)
}

/// `(tr f(H) - mu_f - (gamma/2) c1 tr H) / sigma_{f,gamma}`.
pub fn z_f_gamma(les_value: f64, trace_h: f64, c: &TheoryConstants) -> f64 {
    (les_value - c.mu_f - 0.5 * c.gamma * c.c1 * trace_h) / c.sigma_f_gamma()
}

/// Batch-centred and scaled values: sample mean 0, sample variance 1.
pub fn standardize_batch(values: &[f64]) -> Vec<f64> {
    let m = values.len() as f64;
    if values.len() < 2 {
        return vec![0.0; values.len()];
    }
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    if var == 0.0 {
        return vec![0.0; values.len()];
    }
    let sd = var.sqrt();
    values.iter().map(|x| (x - mean) / sd).collect()
}

/// `(1/N) sum 1/(lambda_i - z)`.
pub fn green_trace_of(eigenvalues: &[f64], z: Complex64) -> Result<Complex64, SpectralError> {
    let mut acc = Complex64::new(0.0, 0.0);
    let mut closest = f64::INFINITY;
    for &l in eigenvalues {
        let d = Complex64::new(l, 0.0) - z;
        closest = closest.min(d.norm());
        acc += 1.0 / d;
    }
    if closest < POLE_THRESHOLD {
        return Err(SpectralError::PoleProximity { z, distance: closest });
    }
    Ok(acc / eigenvalues.len() as f64)
}

pub fn green_trace(s: &SpectralSample, z: Complex64) -> Result<Complex64, SpectralError> {
    green_trace_of(&s.eigenvalues, z)
}

/// `G(z)^k` for each requested power, by dense LU.
pub fn resolvent_entries(
    h: &HermitianMatrix,
    z: Complex64,
    powers: &[u32],
) -> Result<Vec<DMatrix<Complex64>>, SpectralError> {
    let n = h.dim();
    if n > MAX_RESOLVENT_N {
        return Err(SpectralError::InvalidArgument(format!(
            "N = {n} exceeds the dense limit {MAX_RESOLVENT_N}"
        )));
    }
    if powers.contains(&0) {
        return Err(SpectralError::InvalidArgument("powers must be >= 1".into()));
    }
    let mut a = h.to_complex();
    for i in 0..n {
        a[(i, i)] -= z;
    }
    let g = a.lu().try_inverse().ok_or(SpectralError::SingularShift(z))?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::SingularShift(z));
    }
    let max = powers.iter().copied().max().unwrap_or(1);
    let mut out_by_power = vec![g.clone()];
    for _ in 1..max {
        let next = out_by_power.last().unwrap() * &g;
        out_by_power.push(next);
    }
    Ok(powers.iter().map(|&k| out_by_power[k as usize - 1].clone()).collect())
}

/// Semicircle distribution function.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        return 0.0;
    }
    if x >= 2.0 {
        return 1.0;
    }
    0.5 + x * (4.0 - x * x).sqrt() / (4.0 * std::f64::consts::PI) + (x / 2.0).asin() / std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebyshev::cheb_coeffs;
    use crate::ensemble::{sample_wigner, EnsembleSpec};
    use crate::theory::constants;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn real(rows: &[&[f64]]) -> WignerSample {
        let n = rows.len();
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        WignerSample {
            n,
            entries: HermitianMatrix::Real(m),
            seed: 0,
            replica_index: 0,
        }
    }

    fn from_eigs(v: &[f64]) -> SpectralSample {
        SpectralSample {
            eigenvalues: v.to_vec(),
            trace_h: v.iter().sum(),
            sum_diag_sq: 0.0,
            eigenvectors: None,
            zero_diag_eigenvalues: None,
        }
    }

    #[test]
    fn decompose_examples() {
        let d = decompose(&real(&[&[3.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 2.0]]), false).unwrap();
        assert_eq!(d.eigenvalues, vec![3.0, 2.0, 1.0]);
        let d = decompose(&real(&[&[0.0, 0.0], &[0.0, 0.0]]), false).unwrap();
        assert_eq!(d.eigenvalues, vec![0.0, 0.0]);
        let d = decompose(&real(&[&[0.0, 1.0], &[1.0, 0.0]]), false).unwrap();
        assert_abs_diff_eq!(d.eigenvalues[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.eigenvalues[1], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn reconstruction_and_trace() {
        for (beta, spec) in [(1, EnsembleSpec::goe()), (2, EnsembleSpec::gue())] {
            let s = sample_wigner(&spec, 40, 11, beta).unwrap();
            let d = decompose(&s, true).unwrap();
            let q = d.eigenvectors.as_ref().unwrap();
            let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                40,
                d.eigenvalues.iter().map(|&x| Complex64::new(x, 0.0)),
            ));
            let recon = q * lambda * q.adjoint();
            let h = s.entries.to_complex();
            let err = (recon - h).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err <= 1e-9, "beta {beta}: {err}");
            assert!((d.eigenvalues.iter().sum::<f64>() - d.trace_h).abs() <= 1e-8 * 40.0);
            assert!(d.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn spectral_norm_bound() {
        let spec = EnsembleSpec::goe();
        let over = (0..1000)
            .filter(|&r| {
                decompose(&sample_wigner(&spec, 256, 5, r).unwrap(), false)
                    .unwrap()
                    .eigenvalues[0]
                    > 2.3
            })
            .count();
        assert_eq!(over, 0);
    }

    #[test]
    fn semicircle_sanity() {
        let s = sample_wigner(&EnsembleSpec::goe(), 1024, 3, 0).unwrap();
        let d = decompose(&s, false).unwrap();
        let mut ev = d.eigenvalues.clone();
        ev.reverse();
        let n = ev.len() as f64;
        let dist = ev
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = semicircle_cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(dist < 0.05, "{dist}");
    }

    #[test]
    fn les_examples() {
        let s = from_eigs(&[1.0, -1.0]);
        assert_eq!(les(&TestFunction::parse("poly:0,1").unwrap(), &s), 0.0);
        assert_abs_diff_eq!(
            les(&TestFunction::parse("poly:0,0,1").unwrap(), &s),
            2.0,
            epsilon = 1e-14
        );
        let t = from_eigs(&[2.0, -2.0]);
        assert_abs_diff_eq!(les(&TestFunction::chebyshev_t(2), &t), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn power_traces_match_eigenvalues() {
        for (beta, spec) in [(1, EnsembleSpec::goe()), (2, EnsembleSpec::gue())] {
            let s = sample_wigner(&spec, 30, 2, beta).unwrap();
            let d = decompose(&s, false).unwrap();
            let p = PowerTraces::new(&s.entries);
            for k in 0..=4 {
                let want: f64 = d.eigenvalues.iter().map(|x| x.powi(k as i32)).sum();
                assert!(
                    (p.traces[k] - want).abs() < 1e-10 * (1.0 + want.abs()),
                    "beta {beta} k {k}"
                );
            }
            let f = TestFunction::chebyshev_t(4);
            let c = power_path_coefficients(&f).unwrap();
            assert!((p.les_polynomial(&c).unwrap() - les(&f, &d)).abs() < 1e-10);
            assert!(power_path_coefficients(&TestFunction::chebyshev_t(5)).is_none());
            assert_abs_diff_eq!(p.sum_diag_sq, s.sum_diag_sq(), epsilon = 1e-15);
        }
    }

    #[test]
    fn z_f_gamma_examples() {
        let spec = EnsembleSpec::goe();
        let f = TestFunction::parse("poly:0,0,1").unwrap();
        let series = cheb_coeffs(&f, 64, 4096).unwrap();
        let c = constants(&f, &series, &spec, 0.0, 10).unwrap();
        let zero = from_eigs(&[0.0; 10]);
        assert_abs_diff_eq!(
            z_f_gamma(les(&f, &zero), 0.0, &c),
            -c.mu_f / c.sigma2_f.sqrt(),
            epsilon = 1e-12
        );
        let g = TestFunction::parse("poly:0,1,1").unwrap();
        let series = cheb_coeffs(&g, 64, 4096).unwrap();
        let c = constants(&g, &series, &spec, 1.0, 10).unwrap();
        // Coefficient of tr H is exactly (gamma/2) c1.
        let dz = z_f_gamma(5.0, 1.0, &c) - z_f_gamma(5.0, 0.0, &c);
        assert_abs_diff_eq!(dz * c.sigma_f_gamma(), -0.5 * c.c1, epsilon = 1e-12);
    }

    #[test]
    fn green_trace_examples() {
        let s = from_eigs(&[1.0, -1.0]);
        let g = green_trace(&s, Complex64::new(0.0, 2.0)).unwrap();
        assert!((g - Complex64::new(0.0, 0.4)).norm() < 1e-15);
        let z = Complex64::new(3e7, 1e7);
        assert!(((green_trace(&s, z).unwrap() * -z) - 1.0).norm() < 1e-6);
        let zero = from_eigs(&[0.0; 5]);
        assert!((green_trace(&zero, Complex64::i()).unwrap() - Complex64::i()).norm() < 1e-15);
        assert!(matches!(
            green_trace(&s, Complex64::new(1.0, 1e-12)),
            Err(SpectralError::PoleProximity { .. })
        ));
    }

    #[test]
    fn resolvent_examples() {
        let zero = HermitianMatrix::Real(DMatrix::zeros(4, 4));
        let g = &resolvent_entries(&zero, Complex64::i(), &[1]).unwrap()[0];
        for i in 0..4 {
            assert!((g[(i, i)] - Complex64::i()).norm() < 1e-15);
        }
        let s = sample_wigner(&EnsembleSpec::gue(), 20, 9, 0).unwrap();
        let z = Complex64::new(0.3, 0.4);
        let gs = resolvent_entries(&s.entries, z, &[1, 2]).unwrap();
        let h = 1e-6;
        let gp = &resolvent_entries(&s.entries, z + h, &[1]).unwrap()[0];
        let gm = &resolvent_entries(&s.entries, z - h, &[1]).unwrap()[0];
        let fd = (gp - gm) / Complex64::new(2.0 * h, 0.0);
        assert!((fd - &gs[1]).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-5);
        let gc = &resolvent_entries(&s.entries, z.conj(), &[1]).unwrap()[0];
        assert!((gc - gs[0].adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-9);
        let d = decompose(&s, false).unwrap();
        assert!((gs[0].trace() - green_trace(&d, z).unwrap() * 20.0).norm() < 1e-8);
        let diag = HermitianMatrix::Real(DMatrix::from_diagonal_element(3, 3, 1.0));
        assert!(matches!(
            resolvent_entries(&diag, Complex64::new(1.0, 0.0), &[1]),
            Err(SpectralError::SingularShift(_))
        ));
    }

    #[test]
    fn standardize_is_unit() {
        let z = standardize_batch(&[1.0, 4.0, 2.0, 8.0, -3.0]);
        let m = z.iter().sum::<f64>() / 5.0;
        let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn les_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let s = decompose(&sample_wigner(&EnsembleSpec::goe(), 12, seed, 0).unwrap(), false).unwrap();
            let f = TestFunction::parse("poly:0.5,-1,0.25").unwrap();
            let g = TestFunction::gauss_bump(0.2, 0.7).unwrap();
            let combo = TestFunction::from_closure("combo", {
                let (f, g) = (f.clone(), g.clone());
                move |x| a * f.eval(x) + b * g.eval(x)
            }, vec![], true);
            let lhs = les(&combo, &s);
            let rhs = a * les(&f, &s) + b * les(&g, &s);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn green_trace_conjugate(re in -3.0f64..3.0, im in 0.01f64..3.0, seed in 0u64..1000) {
            let s = decompose(&sample_wigner(&EnsembleSpec::gue(), 10, seed, 0).unwrap(), false).unwrap();
            let z = Complex64::new(re, im);
            let a = green_trace(&s, z).unwrap();
            let b = green_trace(&s, z.conj()).unwrap();
            prop_assert!((a - b.conj()).norm() < 1e-14);
        }
    }
}

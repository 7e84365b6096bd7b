//! Wigner ensembles: entry laws, moment matching and seeded sampling.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PROB_TOL: f64 = 1e-12;
const MATCH_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("moment sequence is infeasible: Hankel determinant {det:.3e} < 0 (v={v}, m3={m3}, m4={m4})")]
    MomentInfeasible { v: f64, m3: f64, m4: f64, det: f64 },
    #[error("invalid entry law: {0}")]
    InvalidLaw(String),
    #[error("invalid ensemble: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Gaussian,
    Rademacher,
    Uniform,
    TwoPoint,
    ThreePoint,
    CustomAtoms,
}

/// Parameters an [`EntryLaw`] is built from; this is also its JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Gaussian {
        variance: f64,
    },
    Rademacher {
        #[serde(default = "unit")]
        variance: f64,
    },
    Uniform {
        variance: f64,
    },
    TwoPoint {
        variance: f64,
        third_moment: f64,
    },
    ThreePoint {
        variance: f64,
        third_moment: f64,
        fourth_moment: f64,
    },
    CustomAtoms {
        atoms: Vec<(f64, f64)>,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug)]
enum Sampler {
    Gaussian {
        sd: f64,
    },
    Uniform {
        half_width: f64,
    },
    Discrete {
        values: Vec<f64>,
        cumulative: Vec<f64>,
        fallback: usize,
    },
}

/// A centred real distribution with finite moments up to order eight.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "LawConfig", into = "LawConfig")]
pub struct EntryLaw {
    pub kind: LawKind,
    /// `(value, probability)` pairs; empty for continuous laws.
    pub atoms: Vec<(f64, f64)>,
    pub variance: f64,
    /// `moments[k-1] = E X^k` for `k = 1..=8`.
    pub moments: [f64; 8],
    config: LawConfig,
    sampler: Sampler,
}

impl PartialEq for EntryLaw {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

impl TryFrom<LawConfig> for EntryLaw {
    type Error = EnsembleError;

    fn try_from(config: LawConfig) -> Result<Self, Self::Error> {
        match config {
            LawConfig::Gaussian { variance } => EntryLaw::gaussian(variance),
            LawConfig::Rademacher { variance } => EntryLaw::rademacher(variance),
            LawConfig::Uniform { variance } => EntryLaw::uniform(variance),
            LawConfig::TwoPoint { variance, third_moment } => match_two_point(variance, third_moment),
            LawConfig::ThreePoint {
                variance,
                third_moment,
                fourth_moment,
            } => match_three_point(variance, third_moment, fourth_moment),
            LawConfig::CustomAtoms { atoms } => EntryLaw::custom_atoms(atoms),
        }
    }
}

impl From<EntryLaw> for LawConfig {
    fn from(law: EntryLaw) -> Self {
        law.config
    }
}

fn check_variance(v: f64) -> Result<(), EnsembleError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(EnsembleError::InvalidLaw(format!(
            "variance must be finite and positive, got {v}"
        )))
    }
}

impl EntryLaw {
    pub fn gaussian(variance: f64) -> Result<Self, EnsembleError> {
        check_variance(variance)?;
        let s = variance;
        let moments = [0.0, s, 0.0, 3.0 * s * s, 0.0, 15.0 * s.powi(3), 0.0, 105.0 * s.powi(4)];
        Ok(EntryLaw {
            kind: LawKind::Gaussian,
            atoms: Vec::new(),
            variance,
            moments,
            config: LawConfig::Gaussian { variance },
            sampler: Sampler::Gaussian { sd: variance.sqrt() },
        })
    }

    pub fn rademacher(variance: f64) -> Result<Self, EnsembleError> {
        check_variance(variance)?;
        let x = variance.sqrt();
        Self::from_atoms(
            LawKind::Rademacher,
            vec![(x, 0.5), (-x, 0.5)],
            LawConfig::Rademacher { variance },
        )
    }

    /// Symmetric uniform law on `[-a, a]` with `a = sqrt(3 v)`.
    pub fn uniform(variance: f64) -> Result<Self, EnsembleError> {
        check_variance(variance)?;
        let a = (3.0 * variance).sqrt();
        let mut moments = [0.0; 8];
        for k in (2..=8).step_by(2) {
            moments[k - 1] = a.powi(k as i32) / (k as f64 + 1.0);
        }
        Ok(EntryLaw {
            kind: LawKind::Uniform,
            atoms: Vec::new(),
            variance,
            moments,
            config: LawConfig::Uniform { variance },
            sampler: Sampler::Uniform { half_width: a },
        })
    }

    /// Point mass at zero, used for the zero-diagonal companion ensemble.
    pub fn zero() -> Self {
        Self::custom_atoms(vec![(0.0, 1.0)]).expect("point mass at 0 is a valid law")
    }

    pub fn custom_atoms(atoms: Vec<(f64, f64)>) -> Result<Self, EnsembleError> {
        let config = LawConfig::CustomAtoms { atoms: atoms.clone() };
        Self::from_atoms(LawKind::CustomAtoms, atoms, config)
    }

    fn from_atoms(kind: LawKind, atoms: Vec<(f64, f64)>, config: LawConfig) -> Result<Self, EnsembleError> {
        if atoms.is_empty() {
            return Err(EnsembleError::InvalidLaw("no atoms".into()));
        }
        for &(x, p) in &atoms {
            if !x.is_finite() || !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(EnsembleError::InvalidLaw(format!("bad atom ({x}, {p})")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(EnsembleError::InvalidLaw(format!("probabilities sum to {total}")));
        }
        let mut moments = [0.0; 8];
        for (k, m) in moments.iter_mut().enumerate() {
            *m = atoms.iter().map(|&(x, p)| p * x.powi(k as i32 + 1)).sum();
        }
        let scale = atoms.iter().map(|a| a.0.abs()).fold(1.0, f64::max);
        if moments[0].abs() > MATCH_TOL * scale {
            return Err(EnsembleError::InvalidLaw(format!(
                "law is not centred: mean {}",
                moments[0]
            )));
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for &(_, p) in &atoms {
            acc += p;
            cumulative.push(acc);
        }
        let fallback = atoms.iter().rposition(|a| a.1 > 0.0).unwrap_or(0);
        let values = atoms.iter().map(|a| a.0).collect();
        Ok(EntryLaw {
            kind,
            variance: moments[1],
            atoms,
            moments,
            config,
            sampler: Sampler::Discrete {
                values,
                cumulative,
                fallback,
            },
        })
    }

    pub fn config(&self) -> &LawConfig {
        &self.config
    }

    /// `E X^k` for `1 <= k <= 8`.
    pub fn moment(&self, k: usize) -> f64 {
        self.moments[k - 1]
    }

    pub fn cumulants(&self) -> Vec<f64> {
        moments_to_cumulants(&self.moments)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            Sampler::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            Sampler::Uniform { half_width } => half_width * (2.0 * rng.random::<f64>() - 1.0),
            Sampler::Discrete {
                values,
                cumulative,
                fallback,
            } => {
                let u: f64 = rng.random();
                let idx = cumulative.iter().position(|&c| u < c).unwrap_or(*fallback);
                values[idx]
            }
        }
    }
}

/// Moment-to-cumulant recursion `k_n = m_n - sum_{j<n} C(n-1, j-1) k_j m_{n-j}`.
pub fn moments_to_cumulants(moments: &[f64]) -> Vec<f64> {
    let n = moments.len();
    let mut kappa = vec![0.0; n];
    for i in 1..=n {
        let mut acc = moments[i - 1];
        let mut binom = 1.0;
        for j in 1..i {
            // binom = C(i-1, j-1)
            acc -= binom * kappa[j - 1] * moments[i - j - 1];
            binom *= (i - j) as f64 / j as f64;
        }
        kappa[i - 1] = acc;
    }
    kappa
}

/// Two-atom law with variance `v` and third moment `m3`.
pub fn match_two_point(v: f64, m3: f64) -> Result<EntryLaw, EnsembleError> {
    check_variance(v)?;
    if !m3.is_finite() {
        return Err(EnsembleError::InvalidLaw("third moment must be finite".into()));
    }
    // Atoms solve x1 + x2 = m3/v, x1 x2 = -v.
    let s = m3 / v;
    let disc = (s * s + 4.0 * v).sqrt();
    let x1 = 0.5 * (s + disc);
    let x2 = 0.5 * (s - disc);
    let p = -x2 / (x1 - x2);
    let law = EntryLaw::from_atoms(
        LawKind::TwoPoint,
        vec![(x1, p), (x2, 1.0 - p)],
        LawConfig::TwoPoint {
            variance: v,
            third_moment: m3,
        },
    )?;
    Ok(law)
}

/// Three-atom law with mean 0 and moments `(v, m3, m4)`.
///
/// One atom sits at the mean; the other two are the roots of the degree-2
/// orthogonal polynomial of the measure `x^2 dmu`, which is the Gauss–Radau
/// rule with a fixed node at 0.
pub fn match_three_point(v: f64, m3: f64, m4: f64) -> Result<EntryLaw, EnsembleError> {
    check_variance(v)?;
    if !m3.is_finite() || !m4.is_finite() {
        return Err(EnsembleError::InvalidLaw("moments must be finite".into()));
    }
    let det = v * m4 - m3 * m3 - v.powi(3);
    let scale = v * m4.abs() + m3 * m3 + v.powi(3);
    if det < -1e-12 * scale {
        return Err(EnsembleError::MomentInfeasible { v, m3, m4, det });
    }
    let s = m3 / v;
    let p = (s * m3 - m4) / v;
    let disc = (s * s - 4.0 * p).sqrt();
    let x1 = 0.5 * (s + disc);
    let x2 = 0.5 * (s - disc);
    let w1 = v / (x1 * (x1 - x2));
    let w2 = -v / (x2 * (x1 - x2));
    let w0 = (1.0 - w1 - w2).max(0.0);
    let atoms = vec![(x2, w2), (0.0, w0), (x1, w1)];
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let atoms = atoms.into_iter().map(|(x, w)| (x, w / total)).collect();
    EntryLaw::from_atoms(
        LawKind::ThreePoint,
        atoms,
        LawConfig::ThreePoint {
            variance: v,
            third_moment: m3,
            fourth_moment: m4,
        },
    )
}

/// JSON form of an [`EnsembleSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub beta: u8,
    pub diag: LawConfig,
    pub offdiag: LawConfig,
}

/// A Wigner ensemble with all derived moment data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleConfig", into = "EnsembleConfig")]
pub struct EnsembleSpec {
    pub beta: u8,
    pub diag: EntryLaw,
    /// For `beta = 2` this is the law of the real and of the imaginary part.
    pub offdiag: EntryLaw,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub b3: f64,
    pub b4: f64,
    /// `E|h_o|^4`.
    pub m4: f64,
    /// Third cumulant of the off-diagonal component law.
    pub s3: f64,
    pub s4: f64,
    pub goe_gue_matched: bool,
}

impl TryFrom<EnsembleConfig> for EnsembleSpec {
    type Error = EnsembleError;

    fn try_from(c: EnsembleConfig) -> Result<Self, Self::Error> {
        EnsembleSpec::new(c.beta, c.diag.try_into()?, c.offdiag.try_into()?)
    }
}

impl From<EnsembleSpec> for EnsembleConfig {
    fn from(s: EnsembleSpec) -> Self {
        EnsembleConfig {
            beta: s.beta,
            diag: s.diag.config,
            offdiag: s.offdiag.config,
        }
    }
}

impl EnsembleSpec {
    pub fn new(beta: u8, diag: EntryLaw, offdiag: EntryLaw) -> Result<Self, EnsembleError> {
        if beta != 1 && beta != 2 {
            return Err(EnsembleError::InvalidSpec(format!("beta must be 1 or 2, got {beta}")));
        }
        let part_var = offdiag.variance;
        let abs2 = if beta == 1 { part_var } else { 2.0 * part_var };
        if (abs2 - 1.0).abs() > PROB_TOL {
            let want = if beta == 1 { "1" } else { "1/2 per real/imaginary part" };
            return Err(EnsembleError::InvalidSpec(format!(
                "off-diagonal variance must be {want}, got {part_var}"
            )));
        }
        let m4 = if beta == 1 {
            offdiag.moment(4)
        } else {
            2.0 * offdiag.moment(4) + 2.0 * part_var * part_var
        };
        let s4 = m4 + beta as f64 - 4.0;
        let kd = diag.cumulants();
        let ko = offdiag.cumulants();
        let a2 = diag.moment(2);
        let gaussian_m4 = if beta == 1 { 3.0 } else { 2.0 };
        let goe_gue_matched = (a2 - 2.0 / beta as f64).abs() <= MATCH_TOL
            && (m4 - gaussian_m4).abs() <= MATCH_TOL
            && offdiag.moment(3).abs() <= MATCH_TOL;
        let spec = EnsembleSpec {
            beta,
            a2,
            a3: diag.moment(3),
            a4: diag.moment(4),
            b3: kd[2],
            b4: kd[3],
            m4,
            s3: ko[2],
            s4,
            goe_gue_matched,
            diag,
            offdiag,
        };
        debug_assert!((spec.s4 - (spec.m4 + spec.beta as f64 - 4.0)).abs() == 0.0);
        Ok(spec)
    }

    pub fn goe() -> Self {
        let diag = EntryLaw::gaussian(2.0).expect("valid");
        let off = EntryLaw::gaussian(1.0).expect("valid");
        EnsembleSpec::new(1, diag, off).expect("GOE is valid")
    }

    pub fn gue() -> Self {
        let diag = EntryLaw::gaussian(1.0).expect("valid");
        let off = EntryLaw::gaussian(0.5).expect("valid");
        EnsembleSpec::new(2, diag, off).expect("GUE is valid")
    }

    /// Same off-diagonal law, a given diagonal law.
    pub fn with_diag(&self, diag: EntryLaw) -> Self {
        EnsembleSpec::new(self.beta, diag, self.offdiag.clone()).expect("off-diagonal law already validated")
    }

    /// The companion ensemble with an identically zero diagonal.
    pub fn with_zero_diagonal(&self) -> Self {
        self.with_diag(EntryLaw::zero())
    }

    pub fn beta_f64(&self) -> f64 {
        self.beta as f64
    }
}

/// Dense Hermitian matrix, real symmetric for `beta = 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum HermitianMatrix {
    Real(DMatrix<f64>),
    Complex(DMatrix<Complex64>),
}

impl HermitianMatrix {
    pub fn dim(&self) -> usize {
        match self {
            HermitianMatrix::Real(m) => m.nrows(),
            HermitianMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            HermitianMatrix::Real(m) => m.diagonal().iter().copied().collect(),
            HermitianMatrix::Complex(m) => m.diagonal().iter().map(|z| z.re).collect(),
        }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        match self {
            HermitianMatrix::Real(m) => m.map(|x| Complex64::new(x, 0.0)),
            HermitianMatrix::Complex(m) => m.clone(),
        }
    }

    /// `sum_{ij} |H_ij|^2 = tr H^2`.
    pub fn frobenius_sq(&self) -> f64 {
        match self {
            HermitianMatrix::Real(m) => m.iter().map(|x| x * x).sum(),
            HermitianMatrix::Complex(m) => m.iter().map(|z| z.norm_sqr()).sum(),
        }
    }

    pub fn zero_diagonal(&self) -> HermitianMatrix {
        match self {
            HermitianMatrix::Real(m) => {
                let mut m = m.clone();
                m.fill_diagonal(0.0);
                HermitianMatrix::Real(m)
            }
            HermitianMatrix::Complex(m) => {
                let mut m = m.clone();
                m.fill_diagonal(Complex64::new(0.0, 0.0));
                HermitianMatrix::Complex(m)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct WignerSample {
    pub n: usize,
    pub entries: HermitianMatrix,
    pub seed: u64,
    pub replica_index: u64,
}

impl WignerSample {
    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().sum()
    }

    pub fn sum_diag_sq(&self) -> f64 {
        self.entries.diagonal().iter().map(|x| x * x).sum()
    }

    /// `Ĥ`: the same matrix with its diagonal set to zero.
    pub fn zero_diagonal(&self) -> WignerSample {
        WignerSample {
            entries: self.entries.zero_diagonal(),
            ..self.clone()
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes two words into one; used to derive per-`n` seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ salt.rotate_left(32) ^ 0xD1B5_4A32_D192_ED03)
}

/// Independent stream for one replica: the key comes from `seed`, the ChaCha
/// stream id is the replica counter.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replica);
    rng
}

/// Draws one `n x n` matrix; entries are filled row by row over the upper triangle.
pub fn sample_wigner(spec: &EnsembleSpec, n: usize, seed: u64, replica: u64) -> Result<WignerSample, EnsembleError> {
    if n < 2 {
        return Err(EnsembleError::InvalidSpec(format!(
            "matrix size must be at least 2, got {n}"
        )));
    }
    let mut rng = replica_rng(seed, replica);
    let scale = 1.0 / (n as f64).sqrt();
    let entries = if spec.beta == 1 {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = spec.diag.sample(&mut rng) * scale;
            for j in (i + 1)..n {
                let x = spec.offdiag.sample(&mut rng) * scale;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        HermitianMatrix::Real(m)
    } else {
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(spec.diag.sample(&mut rng) * scale, 0.0);
            for j in (i + 1)..n {
                let re = spec.offdiag.sample(&mut rng) * scale;
                let im = spec.offdiag.sample(&mut rng) * scale;
                let z = Complex64::new(re, im);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        HermitianMatrix::Complex(m)
    };
    Ok(WignerSample {
        n,
        entries,
        seed,
        replica_index: replica,
    })
}

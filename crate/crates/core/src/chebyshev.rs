//! Test functions on `[-2, 2]` and their Chebyshev–Fourier coefficients
//! `c_k = (1/pi) \int_{-pi}^{pi} f(2 cos t) cos(k t) dt`.
//!
//! With this normalisation `c_0(1) = 2`, so reconstruction reads
//! `f(x) = c_0/2 + sum_{k>=1} c_k T_k(x/2)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Highest derivative order a [`TestFunction`] provides.
pub const MAX_DERIVATIVE: usize = 5;
pub const DEFAULT_K: usize = 64;
pub const DEFAULT_NODES: usize = 4096;
pub const TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChebError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("x = {0} lies outside [-2, 2]")]
    DomainError(f64),
    #[error("unknown test function '{0}' (expected cheb:k, poly:a0,a1,... or gauss_bump:center,width)")]
    UnknownFunction(String),
}

/// Non-fatal diagnostic: the coefficient tail has not decayed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationWarning {
    pub tail_estimate: f64,
}

impl fmt::Display for TruncationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Chebyshev tail estimate {:.3e} exceeds {TAIL_TOLERANCE:e}",
            self.tail_estimate
        )
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    /// `derivs[j]` are the coefficients of the j-th derivative in the same convention.
    Chebyshev {
        derivs: Vec<Vec<f64>>,
    },
    GaussBump {
        center: f64,
        width: f64,
    },
    Closure {
        f: RealFn,
        derivs: Vec<RealFn>,
    },
    /// `base(x) - slope * x`
    Sheared {
        base: Box<TestFunction>,
        slope: f64,
    },
}

/// A real test function with derivatives up to order five.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    repr: Repr,
    smooth: bool,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("smooth", &self.smooth)
            .finish()
    }
}

impl TestFunction {
    /// `f(x) = c_0/2 + sum c_k T_k(x/2)`.
    pub fn from_chebyshev(label: impl Into<String>, coeffs: Vec<f64>) -> Self {
        let mut derivs = vec![trim(coeffs)];
        for j in 0..MAX_DERIVATIVE {
            let next = cheb_derivative(&derivs[j]);
            derivs.push(next);
        }
        TestFunction {
            label: label.into(),
            repr: Repr::Chebyshev { derivs },
            smooth: true,
        }
    }

    /// `T_k(x/2)`.
    pub fn chebyshev_t(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = if k == 0 { 2.0 } else { 1.0 };
        Self::from_chebyshev(format!("cheb:{k}"), c)
    }

    /// `sum_j a_j x^j`.
    pub fn polynomial(monomial: &[f64]) -> Self {
        let label = format!(
            "poly:{}",
            monomial.iter().map(|a| format!("{a}")).collect::<Vec<_>>().join(",")
        );
        Self::from_chebyshev(label, monomial_to_chebyshev(monomial))
    }

    /// `exp(-(x - center)^2 / (2 width^2))`.
    pub fn gauss_bump(center: f64, width: f64) -> Result<Self, ChebError> {
        if !(width.is_finite() && width > 0.0 && center.is_finite()) {
            return Err(ChebError::InvalidArgument(format!(
                "gauss_bump needs width > 0, got {width}"
            )));
        }
        Ok(TestFunction {
            label: format!("gauss_bump:{center},{width}"),
            repr: Repr::GaussBump { center, width },
            smooth: true,
        })
    }

    /// Wraps a closure. Missing derivatives fall back to finite differences and
    /// are reported by [`TestFunction::has_exact_derivatives`].
    pub fn from_closure(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivs: Vec<RealFn>,
        smooth: bool,
    ) -> Self {
        TestFunction {
            label: label.into(),
            repr: Repr::Closure { f: Arc::new(f), derivs },
            smooth,
        }
    }

    /// Parses a registry key: `cheb:k`, `poly:a0,a1,...` or `gauss_bump:center,width`.
    pub fn parse(key: &str) -> Result<Self, ChebError> {
        let unknown = || ChebError::UnknownFunction(key.to_string());
        let (name, args) = key.split_once(':').ok_or_else(unknown)?;
        let nums = || -> Result<Vec<f64>, ChebError> {
            args.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| unknown()))
                .collect()
        };
        match name.trim() {
            "cheb" => {
                let k: usize = args.trim().parse().map_err(|_| unknown())?;
                Ok(Self::chebyshev_t(k))
            }
            "poly" => {
                let a = nums()?;
                if a.iter().any(|x| !x.is_finite()) {
                    return Err(unknown());
                }
                let mut f = Self::polynomial(&a);
                f.label = key.to_string();
                Ok(f)
            }
            "gauss_bump" => match nums()?.as_slice() {
                [c, w] => Self::gauss_bump(*c, *w),
                _ => Err(unknown()),
            },
            _ => Err(unknown()),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Whether the function may be fed to constant formulas (C^5 assumed).
    pub fn is_smooth(&self) -> bool {
        self.smooth
    }

    /// Interval outside which `f` and its derivatives are negligible, if known.
    pub fn support_hint(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::GaussBump { center, width } => Some((center - 12.0 * width, center + 12.0 * width)),
            _ => None,
        }
    }

    pub fn has_exact_derivatives(&self) -> bool {
        match &self.repr {
            Repr::Closure { derivs, .. } => derivs.len() >= MAX_DERIVATIVE,
            Repr::Sheared { base, .. } => base.has_exact_derivatives(),
            _ => true,
        }
    }

    /// Exact coefficients when the function is a polynomial in `T_k(x/2)`.
    pub fn chebyshev_coefficients(&self) -> Option<Vec<f64>> {
        match &self.repr {
            Repr::Chebyshev { derivs } => Some(derivs[0].clone()),
            Repr::Sheared { base, slope } => {
                let mut c = base.chebyshev_coefficients()?;
                if c.len() < 2 {
                    c.resize(2, 0.0);
                }
                // x = 2 T_1(x/2)
                c[1] -= 2.0 * slope;
                Some(trim(c))
            }
            _ => None,
        }
    }

    /// Monomial coefficients when the function is a polynomial.
    pub fn polynomial_coefficients(&self) -> Option<Vec<f64>> {
        self.chebyshev_coefficients().map(|c| chebyshev_to_monomial(&c))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(0, x)
    }

    /// `f^{(k)}(x)` for `k <= 5`.
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        assert!(k <= MAX_DERIVATIVE, "derivative order {k} > {MAX_DERIVATIVE}");
        match &self.repr {
            Repr::Chebyshev { derivs } => clenshaw(&derivs[k], x),
            Repr::GaussBump { center, width } => {
                let u = (x - center) / width;
                let (mut h0, mut h1) = (1.0, u);
                let he = match k {
                    0 => 1.0,
                    _ => {
                        for j in 1..k {
                            let h2 = u * h1 - j as f64 * h0;
                            h0 = h1;
                            h1 = h2;
                        }
                        h1
                    }
                };
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * he * (-0.5 * u * u).exp() / width.powi(k as i32)
            }
            Repr::Closure { f, derivs } => {
                if k == 0 {
                    f(x)
                } else if let Some(d) = derivs.get(k - 1) {
                    d(x)
                } else {
                    finite_difference(f.as_ref(), k, x)
                }
            }
            Repr::Sheared { base, slope } => {
                let v = base.derivative(k, x);
                match k {
                    0 => v - slope * x,
                    1 => v - slope,
                    _ => v,
                }
            }
        }
    }

    /// `f(x) - slope * x`.
    pub fn sheared(&self, slope: f64) -> TestFunction {
        if slope == 0.0 {
            return self.clone();
        }
        let label = format!("{} - {slope}*x", self.label);
        if let Some(mut c) = self.chebyshev_coefficients() {
            if c.len() < 2 {
                c.resize(2, 0.0);
            }
            c[1] -= 2.0 * slope;
            let mut f = Self::from_chebyshev(label, c);
            f.smooth = self.smooth;
            return f;
        }
        TestFunction {
            label,
            repr: Repr::Sheared {
                base: Box::new(self.clone()),
                slope,
            },
            smooth: self.smooth,
        }
    }
}

fn trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && c.last() == Some(&0.0) {
        c.pop();
    }
    if c.is_empty() {
        c.push(0.0);
    }
    c
}

fn finite_difference(f: &(dyn Fn(f64) -> f64 + Send + Sync), k: usize, x: f64) -> f64 {
    let h = 1e-2_f64.max(1e-2 * x.abs());
    let mut acc = 0.0;
    let mut binom = 1.0;
    for j in 0..=k {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binom * f(x + (k as f64 / 2.0 - j as f64) * h);
        binom *= (k - j) as f64 / (j + 1) as f64;
    }
    acc / h.powi(k as i32)
}

/// Evaluates `c_0/2 + sum c_k T_k(x/2)` by Clenshaw's recurrence; valid for all real x.
fn clenshaw(c: &[f64], x: f64) -> f64 {
    let y = 0.5 * x;
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = ck + 2.0 * y * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    0.5 * c[0] + y * b1 - b2
}

/// Coefficients of `d/dx` in the same convention.
fn cheb_derivative(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return vec![0.0];
    }
    // For g(y) = sum' c_k T_k(y): g' = sum' d_k T_k, d_{k-1} = d_{k+1} + 2k c_k.
    let mut d = vec![0.0; n + 1];
    for k in (1..n).rev() {
        d[k - 1] = d[k + 1] + 2.0 * k as f64 * c[k];
    }
    d.truncate(n - 1);
    // d/dx = (1/2) d/dy
    trim(d.into_iter().map(|v| 0.5 * v).collect())
}

/// `(2 cos t)^j = sum_m C(j, m) cos((j - 2m) t)`.
fn monomial_to_chebyshev(a: &[f64]) -> Vec<f64> {
    let deg = a.len().saturating_sub(1);
    let mut c = vec![0.0; deg + 1];
    for (j, &aj) in a.iter().enumerate() {
        if aj == 0.0 {
            continue;
        }
        let mut binom = 1.0;
        for m in 0..=j {
            let k = (j as i64 - 2 * m as i64).unsigned_abs() as usize;
            let w = if k == 0 { 2.0 } else { 1.0 };
            c[k] += aj * binom * w;
            binom *= (j - m) as f64 / (m + 1) as f64;
        }
    }
    trim(c)
}

fn chebyshev_to_monomial(c: &[f64]) -> Vec<f64> {
    // P_0 = 1, P_1 = x/2, P_{k+1} = x P_k - P_{k-1}
    let n = c.len();
    let mut out = vec![0.0; n];
    let mut prev = vec![1.0];
    let mut cur = vec![0.0, 0.5];
    out[0] += 0.5 * c[0];
    if n > 1 {
        for (j, v) in cur.iter().enumerate() {
            out[j] += c[1] * v;
        }
    }
    for ck in c.iter().skip(2) {
        let mut next = vec![0.0; cur.len() + 1];
        for (j, v) in cur.iter().enumerate() {
            next[j + 1] += v;
        }
        for (j, v) in prev.iter().enumerate() {
            next[j] -= v;
        }
        for (j, v) in next.iter().enumerate() {
            out[j] += ck * v;
        }
        prev = cur;
        cur = next;
    }
    out
}

/// Truncated Chebyshev–Fourier expansion `c_0..c_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebSeries {
    pub coeffs: Vec<f64>,
    pub k: usize,
    pub tail_estimate: f64,
    /// Angular quadrature size used to build the series; integrals reuse it.
    pub nodes: usize,
}

impl ChebSeries {
    /// A series with given coefficients, padded or cut to `k`.
    pub fn from_coeffs(mut coeffs: Vec<f64>, k: usize, nodes: usize) -> Self {
        let dropped = if coeffs.len() > k + 1 {
            coeffs.split_off(k + 1)
        } else {
            Vec::new()
        };
        coeffs.resize(k + 1, 0.0);
        let top = (k / 4).max(1);
        let tail = coeffs[k + 1 - top..]
            .iter()
            .chain(dropped.iter())
            .map(|c| c.abs())
            .fold(0.0, f64::max);
        ChebSeries {
            coeffs,
            k,
            tail_estimate: tail,
            nodes,
        }
    }

    /// `c_k` with the symmetric extension `c_{-k} = c_k` and zero beyond `K`.
    #[inline]
    pub fn c(&self, k: i64) -> f64 {
        self.coeffs.get(k.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    /// Largest index with a coefficient above round-off level.
    pub fn support(&self) -> usize {
        let scale = self.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0;
        }
        self.coeffs.iter().rposition(|c| c.abs() > 1e-15 * scale).unwrap_or(0)
    }

    pub fn warning(&self) -> Option<TruncationWarning> {
        (self.tail_estimate > TAIL_TOLERANCE).then_some(TruncationWarning {
            tail_estimate: self.tail_estimate,
        })
    }

    /// `c_0/2 + sum c_k T_k(x/2)` for `x` in `[-2, 2]`.
    pub fn eval(&self, x: f64) -> Result<f64, ChebError> {
        eval_series(self, x)
    }
}

fn check_grid(k: usize, nodes: usize) -> Result<(), ChebError> {
    if k < 2 {
        return Err(ChebError::InvalidArgument(format!("K must be at least 2, got {k}")));
    }
    if nodes < 4 * k || !nodes.is_power_of_two() {
        return Err(ChebError::InvalidArgument(format!(
            "nodes must be a power of two and at least 4K = {}, got {nodes}",
            4 * k
        )));
    }
    Ok(())
}

/// Chebyshev–Fourier coefficients by the cosine rule at `t_j = pi (j + 1/2) / nodes`.
pub fn cheb_coeffs(f: &TestFunction, k: usize, nodes: usize) -> Result<ChebSeries, ChebError> {
    check_grid(k, nodes)?;
    if let Some(exact) = f.chebyshev_coefficients() {
        return Ok(ChebSeries::from_coeffs(exact, k, nodes));
    }
    let theta: Vec<f64> = (0..nodes).map(|j| PI * (j as f64 + 0.5) / nodes as f64).collect();
    let values: Vec<f64> = theta.iter().map(|t| f.eval(2.0 * t.cos())).collect();
    let coeffs = (0..=k)
        .map(|kk| {
            let s: f64 = theta.iter().zip(&values).map(|(t, v)| v * (kk as f64 * t).cos()).sum();
            2.0 * s / nodes as f64
        })
        .collect();
    Ok(ChebSeries::from_coeffs(coeffs, k, nodes))
}

/// `f_gamma(x) = f(x) - (gamma/2) c_1 x`; only `c_1` of the series changes.
pub fn shift_gamma(f: &TestFunction, series: &ChebSeries, gamma: f64) -> (TestFunction, ChebSeries) {
    let c1 = series.c(1);
    let shifted = f.sheared(0.5 * gamma * c1);
    let mut s = series.clone();
    s.coeffs[1] = (1.0 - gamma) * c1;
    (shifted, s)
}

pub fn eval_series(series: &ChebSeries, x: f64) -> Result<f64, ChebError> {
    if !(-2.0..=2.0).contains(&x) {
        return Err(ChebError::DomainError(x));
    }
    Ok(clenshaw(&series.coeffs, x))
}

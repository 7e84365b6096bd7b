use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use wigner_clt::chebyshev::{cheb_coeffs, TestFunction};
use wigner_clt::ensemble::{mix_seed, sample_wigner};
use wigner_clt::greenfn::{
    decomposition_residual, eg_expansion_residual, hs_integral, local_law_residual, multipoint_mc, HsGrid,
};
use wigner_clt::montecarlo::{
    jackknife_moments, rate_fit, rate_window, run_experiment, shifted_les, simulate as simulate_rows, ExperimentConfig,
    RateFit, Statistic,
};
use wigner_clt::spectral::{decompose, les};
use wigner_clt::theory::{
    constants as theory_constants, three_point_prediction, two_point_prediction, DomainTag, SpectralParam,
    TheoryConstants,
};

use crate::config::Config;
use crate::error::CliError;
use crate::output::{json_with_manifest, Csv, OutDir, RunManifest};

/// Default size for `constants` when the config has no `n`.
const CONSTANTS_DEFAULT_N: usize = 100;
/// Largest admissible `|z-score|` for `third-moment --assert`.
const THIRD_MOMENT_Z_MAX: f64 = 4.0;
/// Multipoint estimates must match the prediction within this many standard errors.
const MULTIPOINT_Z_MAX: f64 = 3.0;
/// Ratio-to-bound slack exponent for the local-law and decomposition checks.
const RATIO_SLACK_EXPONENT: f64 = 0.25;
/// Acceptable slope of the corrected mean-trace residual against `N`.
const EG_WINDOW: (f64, f64) = (-1.75, -1.25);
const HS_TOLERANCE: f64 = 1e-3;
const DEFAULT_HS_GRID: [usize; 2] = [400, 400];

pub struct Context<'a> {
    pub config: &'a Config,
    pub out: &'a Path,
    pub assert: bool,
    pub command: &'static str,
    pub started: String,
}

impl Context<'_> {
    fn manifest(&self, outputs: &[&str], out: &OutDir) -> RunManifest {
        RunManifest::new(
            self.command,
            &self.config.canonical,
            self.config.raw.seed,
            outputs.iter().map(|o| out.path(o)).collect(),
        )
    }

    fn finish(&self, manifest: &RunManifest, out: &OutDir) -> Result<(), CliError> {
        let mut m = manifest.clone();
        m.started = Some(self.started.clone());
        m.finished = Some(chrono::Utc::now().to_rfc3339());
        out.write_sidecar(&m)
    }

    fn verdict(&self, ok: bool, message: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.assert && !ok {
            Err(CliError::Assertion(message()))
        } else {
            Ok(())
        }
    }
}

fn parse_f(config: &Config) -> Result<TestFunction, CliError> {
    Ok(TestFunction::parse(config.f()?)?)
}

fn theory_for(config: &Config, f: &TestFunction, n: usize) -> Result<TheoryConstants, CliError> {
    let series = cheb_coeffs(f, config.raw.k, config.raw.nodes)?;
    Ok(theory_constants(f, &series, &config.ensemble, config.raw.gamma, n)?)
}

pub fn constants(ctx: &Context) -> Result<(), CliError> {
    let config = ctx.config;
    let f = parse_f(config)?;
    let n = config.raw.n.unwrap_or(CONSTANTS_DEFAULT_N);
    let k = theory_for(config, &f, n)?;
    let manifest = RunManifest::new(ctx.command, &config.canonical, config.raw.seed, Vec::new());
    print!("{}", json_with_manifest(&manifest, &k));
    Ok(())
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let config = ctx.config;
    let f = parse_f(config)?;
    let grid = config.n_grid()?;
    let replicas = config.replicas()?;
    let out = OutDir::create(ctx.out)?;
    let manifest = ctx.manifest(&["simulate.csv"], &out);
    let mut csv = Csv::new(&["n", "replica", "les", "trace_h", "sum_diag_sq"]);
    for &n in &grid {
        for row in simulate_rows(&config.ensemble, &f, n, replicas, config.raw.seed)? {
            csv.push(vec![
                n.into(),
                row.replica.into(),
                row.les.into(),
                row.trace_h.into(),
                row.sum_diag_sq.into(),
            ]);
        }
    }
    out.write("simulate.csv", &csv.render(&manifest))?;
    ctx.finish(&manifest, &out)
}

#[derive(Serialize)]
struct RateScanSummary<'a> {
    chi: Option<u8>,
    window: (f64, f64),
    fit: &'a RateFit,
    verdict: bool,
}

pub fn rate_scan(ctx: &Context) -> Result<(), CliError> {
    let config = ctx.config;
    let statistic = config.raw.statistic.unwrap_or(Statistic::Ks);
    if statistic != Statistic::Ks {
        return Err(CliError::Config(
            "at 'statistic': rate-scan supports only \"ks\"".into(),
        ));
    }
    let experiment = ExperimentConfig {
        ensemble: config.ensemble.clone(),
        f: config.f()?.to_string(),
        gamma: config.raw.gamma,
        n_grid: config.n_grid()?,
        replicas: config.replicas()?,
        seed: config.raw.seed,
        statistic,
        t_grid: config.raw.t_grid.clone(),
        synthetic: config.raw.synthetic,
        budget: config.raw.budget,
    };
    let points = run_experiment(&experiment)?;
    let out = OutDir::create(ctx.out)?;
    let manifest = ctx.manifest(&["rate_scan.csv", "rate_fit.json"], &out);
    let mut csv = Csv::new(&[
        "n",
        "M",
        "statistic",
        "value",
        "se",
        "gamma",
        "chi",
        "sigma2_theory",
        "seed",
    ]);
    let mut fit_points = Vec::new();
    let mut chi = None;
    for p in &points {
        let s = &p.summary;
        let (c, sigma2) = match &p.constants {
            Some(k) => (k.chi, k.sigma2_f_gamma),
            None => (0, 1.0),
        };
        if p.constants.is_some() {
            chi = Some(c);
        }
        csv.push(vec![
            s.n.into(),
            s.m.into(),
            "ks".into(),
            s.ks.into(),
            s.ks_se.into(),
            config.raw.gamma.into(),
            c.into(),
            sigma2.into(),
            config.raw.seed.into(),
        ]);
        fit_points.push((s.n as f64, s.ks, s.ks_se));
    }
    out.write("rate_scan.csv", &csv.render(&manifest))?;
    let fit = rate_fit(&fit_points)?;
    let window = rate_window(chi.unwrap_or(0));
    let verdict = fit.within(window);
    let summary = RateScanSummary {
        chi,
        window,
        fit: &fit,
        verdict,
    };
    out.write("rate_fit.json", &json_with_manifest(&manifest, &summary))?;
    ctx.finish(&manifest, &out)?;
    ctx.verdict(verdict, || {
        format!("KS slope {:.3} outside [{}, {}]", fit.slope, window.0, window.1)
    })
}

#[derive(Serialize)]
struct ThirdMomentRow {
    n: usize,
    m: usize,
    skewness: f64,
    se: f64,
    predicted: f64,
    r1_term: f64,
    r2_term: f64,
    z_score: f64,
    variance: f64,
}

#[derive(Serialize)]
struct ThirdMomentSummary<'a> {
    report_only: bool,
    r1: f64,
    r2: f64,
    sigma2_f_gamma: f64,
    rows: &'a [ThirdMomentRow],
}

pub fn third_moment(ctx: &Context) -> Result<(), CliError> {
    let config = ctx.config;
    let f = parse_f(config)?;
    let grid = config.n_grid()?;
    let replicas = config.replicas()?;
    let report_only = !config.ensemble.goe_gue_matched;
    let out = OutDir::create(ctx.out)?;
    let manifest = ctx.manifest(&["third_moment.csv", "third_moment.json"], &out);
    let mut rows = Vec::new();
    let mut last = None;
    for &n in &grid {
        let k = theory_for(config, &f, n)?;
        let sim = simulate_rows(&config.ensemble, &f, n, replicas, config.raw.seed)?;
        let x = shifted_les(&sim, config.raw.gamma, k.c1);
        let ([_, var, skew], [_, _, se]) = jackknife_moments(&x)?;
        if var.is_nan() || var <= 0.0 {
            return Err(CliError::Numerical(format!("zero sample variance at n = {n}")));
        }
        let nf = n as f64;
        let scale = var.powf(-1.5);
        let r1_term = k.r1 / nf.sqrt() * scale;
        let r2_term = k.r2 / nf * scale;
        let predicted = k.skewness_prediction(var, n);
        rows.push(ThirdMomentRow {
            n,
            m: replicas,
            skewness: skew,
            se,
            predicted,
            r1_term,
            r2_term,
            z_score: (skew - predicted) / se,
            variance: var,
        });
        last = Some(k);
    }
    let k = last.expect("grid is non-empty");
    let mut csv = Csv::new(&[
        "n",
        "M",
        "skewness",
        "se",
        "predicted",
        "r1_term",
        "r2_term",
        "z_score",
        "variance",
    ]);
    for r in &rows {
        csv.push(vec![
            r.n.into(),
            r.m.into(),
            r.skewness.into(),
            r.se.into(),
            r.predicted.into(),
            r.r1_term.into(),
            r.r2_term.into(),
            r.z_score.into(),
            r.variance.into(),
        ]);
    }
    out.write("third_moment.csv", &csv.render(&manifest))?;
    let summary = ThirdMomentSummary {
        report_only,
        r1: k.r1,
        r2: k.r2,
        sigma2_f_gamma: k.sigma2_f_gamma,
        rows: &rows,
    };
    out.write("third_moment.json", &json_with_manifest(&manifest, &summary))?;
    ctx.finish(&manifest, &out)?;
    if report_only {
        return Ok(());
    }
    let worst = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    ctx.verdict(worst <= THIRD_MOMENT_Z_MAX, || {
        format!("|z-score| {worst:.2} > {THIRD_MOMENT_Z_MAX}")
    })
}

struct GreenRow {
    n: usize,
    z: Complex64,
    observed: f64,
    bound: f64,
    ratio: f64,
    se: f64,
    replicas: usize,
}

pub fn green_check(ctx: &Context, check: Option<&str>) -> Result<(), CliError> {
    let config = ctx.config;
    let check = check
        .or(config.raw.check.as_deref())
        .ok_or_else(|| CliError::Config("missing required key 'check' (or --check)".into()))?
        .to_string();
    let (rows, ok, message) = match check.as_str() {
        "locallaw" => check_local_law(config)?,
        "decomp" => check_decomposition(config)?,
        "eg" => check_mean_trace(config)?,
        "hs" => check_hs(config)?,
        "two-point" => check_multipoint(config, 2)?,
        "three-point" => check_multipoint(config, 3)?,
        other => {
            return Err(CliError::Config(format!(
                "at 'check': unknown check '{other}' (expected locallaw, decomp, eg, hs, two-point or three-point)"
            )))
        }
    };
    let out = OutDir::create(ctx.out)?;
    let manifest = ctx.manifest(&["green_check.csv"], &out);
    let mut csv = Csv::new(&[
        "check", "n", "z_re", "z_im", "observed", "bound", "ratio", "se", "replicas",
    ]);
    for r in rows {
        csv.push(vec![
            check.as_str().into(),
            r.n.into(),
            r.z.re.into(),
            r.z.im.into(),
            r.observed.into(),
            r.bound.into(),
            r.ratio.into(),
            r.se.into(),
            r.replicas.into(),
        ]);
    }
    out.write("green_check.csv", &csv.render(&manifest))?;
    ctx.finish(&manifest, &out)?;
    ctx.verdict(ok, || message)
}

type CheckResult = Result<(Vec<GreenRow>, bool, String), CliError>;

fn check_local_law(config: &Config) -> CheckResult {
    let n = config.n()?;
    let samples = config.raw.replicas.unwrap_or(1);
    let slack = (n as f64).powf(RATIO_SLACK_EXPONENT);
    let mut rows = Vec::new();
    for z in config.z()? {
        let p = SpectralParam::new(z, DomainTag::S)?;
        let mut worst = None::<wigner_clt::greenfn::ResidualReport>;
        for r in 0..samples as u64 {
            let s = sample_wigner(&config.ensemble, n, mix_seed(config.raw.seed, n as u64), r)?;
            let rep = local_law_residual(&s, &p, config.raw.probes)?;
            if worst.as_ref().map_or(true, |w| rep.ratio > w.ratio) {
                worst = Some(rep);
            }
        }
        let w = worst.ok_or_else(|| CliError::Config("at 'replicas': need at least one sample".into()))?;
        rows.push(GreenRow {
            n,
            z,
            observed: w.observed,
            bound: w.predicted,
            ratio: w.ratio,
            se: 0.0,
            replicas: samples,
        });
    }
    let worst = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok((
        rows,
        worst <= slack,
        format!("local-law ratio {worst:.3} > N^{RATIO_SLACK_EXPONENT} = {slack:.3}"),
    ))
}

fn check_decomposition(config: &Config) -> CheckResult {
    let replicas = config.replicas()?;
    let mut rows = Vec::new();
    let mut ok = true;
    for n in config.n_grid()? {
        for z in config.z()? {
            let p = SpectralParam::new(z, DomainTag::Sc { n, c: config.raw.c })?;
            let rep = decomposition_residual(&config.ensemble, n, &p, replicas, config.raw.seed)?;
            ok &= rep.ratio <= (n as f64).powf(RATIO_SLACK_EXPONENT);
            rows.push(GreenRow {
                n,
                z,
                observed: rep.observed,
                bound: rep.predicted,
                ratio: rep.ratio,
                se: rep.standard_error,
                replicas,
            });
        }
    }
    Ok((rows, ok, format!("decomposition ratio above N^{RATIO_SLACK_EXPONENT}")))
}

/// Residual after the `1/N` corrections; `bound` holds the uncorrected residual.
fn check_mean_trace(config: &Config) -> CheckResult {
    let grid = config.n_grid()?;
    let replicas = config.replicas()?;
    let mut rows = Vec::new();
    let mut ok = true;
    let mut message = String::new();
    for z in config.z()? {
        let table = eg_expansion_residual(&config.ensemble, z, &grid, replicas, config.raw.seed)?;
        let pts: Vec<(f64, f64, f64)> = table.iter().map(|r| (r.n as f64, r.residual_first, r.se)).collect();
        for r in &table {
            rows.push(GreenRow {
                n: r.n,
                z,
                observed: r.residual_first,
                bound: r.residual_leading,
                ratio: r.residual_first / r.residual_leading,
                se: r.se,
                replicas,
            });
        }
        if grid.len() >= 2 {
            let fit = rate_fit(&pts)?;
            if !fit.within(EG_WINDOW) {
                ok = false;
                message = format!("residual slope {:.3} at z = {z} outside {EG_WINDOW:?}", fit.slope);
            }
        }
    }
    Ok((rows, ok, message))
}

fn check_hs(config: &Config) -> CheckResult {
    let f = parse_f(config)?;
    let n = config.n()?;
    let [nx, ny] = config.raw.grid.unwrap_or(DEFAULT_HS_GRID);
    let s = sample_wigner(&config.ensemble, n, mix_seed(config.raw.seed, n as u64), 0)?;
    let spectral = decompose(&s, false)?;
    let grid = HsGrid { nx, ny, x_range: None };
    let v = hs_integral(&f, &spectral.eigenvalues, config.raw.p, grid)?;
    let exact = les(&f, &spectral);
    let err = (v - exact).norm();
    let row = GreenRow {
        n,
        z: Complex64::new(0.0, 0.0),
        observed: err,
        bound: HS_TOLERANCE,
        ratio: err / HS_TOLERANCE,
        se: 0.0,
        replicas: 1,
    };
    Ok((
        vec![row],
        err <= HS_TOLERANCE,
        format!("reconstruction error {err:.3e} > {HS_TOLERANCE}"),
    ))
}

/// `observed = |estimate - prediction|`, `bound = se`, `ratio` the z-score.
fn check_multipoint(config: &Config, points: usize) -> CheckResult {
    let zs = config.z()?;
    if zs.len() != points {
        return Err(CliError::Config(format!(
            "at 'z': need {points} spectral parameters, got {}",
            zs.len()
        )));
    }
    let delta = config.delta()?;
    let n = config.n()?;
    let params = zs
        .iter()
        .enumerate()
        .map(|(i, &z)| SpectralParam::new(z, DomainTag::Sa { a: i as u8 + 1, delta }))
        .collect::<Result<Vec<_>, _>>()?;
    let prediction = if points == 2 {
        two_point_prediction(&params[0], &params[1], n)?
    } else {
        three_point_prediction(&params[0], &params[1], &params[2], &config.ensemble, n)?.total
    };
    let replicas = config.replicas()?;
    let est = multipoint_mc(&config.ensemble, n, &params, replicas, config.raw.seed, None)?;
    let observed = (est.estimate - prediction).norm();
    let ratio = observed / est.se;
    let row = GreenRow {
        n,
        z: zs[0],
        observed,
        bound: est.se,
        ratio,
        se: est.se,
        replicas,
    };
    Ok((
        vec![row],
        ratio <= MULTIPOINT_Z_MAX,
        format!(
            "estimate {} vs prediction {} is {ratio:.2} se apart",
            est.estimate, prediction
        ),
    ))
}

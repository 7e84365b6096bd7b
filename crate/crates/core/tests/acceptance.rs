//! Acceptance run: one verdict line per criterion.
//!
//! Each criterion is a list of named checks. Checks listed in
//! `EXPECTED_FAILURES` are implemented as stated and are known not to hold;
//! when only those fail the line reads `FAIL (expected; see analysis)` and the
//! run still succeeds. Set `WIGNER_CLT_ACCEPTANCE=1,5` to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use wigner_clt::chebyshev::{cheb_coeffs, TestFunction, DEFAULT_K, DEFAULT_NODES};
use wigner_clt::ensemble::{match_three_point, match_two_point, sample_wigner, EnsembleSpec, HermitianMatrix};
use wigner_clt::greenfn::{
    decomposition_residual, eg_expansion_residual, hs_integral, local_law_residual, multipoint_mc, HsGrid,
};
use wigner_clt::montecarlo::{jackknife_moments, rate_fit, shifted_les, simulate, summarize, with_workers};
use wigner_clt::spectral::eigenvalues;
use wigner_clt::theory::{
    constants, r2, sigma2_f, three_point_prediction, two_point_prediction, DomainTag, SigmaMode, SpectralParam,
};

const SEED: u64 = 20_240_611;
const EXPECTED_FAILURES: &[(u32, &str)] = &[
    (1, "closed form"),
    (4, "-r1 term"),
    (7, "leading term"),
    (8, "GOE h-sum"),
    (10, "local law"),
];

const C1_TOL: f64 = 1e-9;
const C2_N: usize = 512;
const C2_M: usize = 2000;
const C2_TOL: f64 = 0.15;
const C2_MODE_TOL: f64 = 1e-6;
const C3_N: usize = 128;
const C3_M: usize = 200_000;
const C3_R2: f64 = 98.0 / 3.0;
const C4_GRID: [usize; 3] = [64, 128, 256];
const C4_M: usize = 200_000;
const SLOPE_WINDOW_CHI1: (f64, f64) = (-0.75, -0.3);
const SLOPE_WINDOW_CHI0: (f64, f64) = (-1.3, -0.7);
const C5_GRID: [usize; 4] = [64, 128, 256, 512];
const C5_M: usize = 20_000;
const C5_F: &str = "poly:1,8,-2,0,0.5";
const C6_GRID: [usize; 3] = [64, 128, 256];
const C6_M: usize = 20_000;
const C6_WINDOW: (f64, f64) = (-1.75, -1.25);
const C7_N: usize = 100;
const C7_M: usize = 10_000;
const C7_DELTA: f64 = 0.3;
const C8_N: usize = 64;
const C8_M: usize = 200_000;
const C8_DELTA: f64 = 0.5;
const C8_RATIO: (f64, f64) = (0.5, 1.5);
const SE_MULTIPLE: f64 = 3.0;
const C9_TOL: f64 = 1e-3;
const C9_HALVING: f64 = 2.0;
const C10_LOCAL_N: usize = 512;
const C10_LOCAL_SAMPLES: u64 = 20;
const C10_DECOMP_N: usize = 256;
const C10_DECOMP_M: usize = 400;
const C10_SLACK: f64 = 0.25;

struct Check {
    label: &'static str,
    ok: bool,
    detail: String,
}

fn check(label: &'static str, ok: bool, detail: String) -> Check {
    Check { label, ok, detail }
}

type Outcome = Result<Vec<Check>, String>;

/// GOE off-diagonal entries with a skewed diagonal: `a2 = 2`, `E h_d^3 = 11.3137`, `E h_d^4 = 100`.
fn skewed_three_point() -> EnsembleSpec {
    EnsembleSpec::goe().with_diag(match_three_point(2.0, 11.3137, 100.0).expect("feasible moments"))
}

fn parse(key: &str) -> TestFunction {
    TestFunction::parse(key).expect("registered test function")
}

fn c1_r2_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in [4usize, 6, 8] {
        let f = parse(&format!("cheb:{k}"));
        let series = cheb_coeffs(&f, DEFAULT_K, DEFAULT_NODES).map_err(|e| e.to_string())?;
        for spec in [EnsembleSpec::goe(), EnsembleSpec::gue()] {
            let beta = spec.beta_f64();
            let value = r2(&series, &spec, 2 * series.k + 4).value;
            let kf = k as f64;
            let target = (kf.powi(3) / 2.0 + kf / 6.0) / (beta * beta);
            worst = worst.max((value - target).abs());
            parts.push(format!("k={k},b={}: {value:.6} vs {target:.6}", spec.beta));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(vec![
        check(
            "closed form",
            worst <= C1_TOL,
            format!("max |r2 - target| = {worst:.3e}; {}", parts.join(", ")),
        ),
        check("runtime", elapsed < 1.0, format!("{elapsed:.3}s")),
    ])
}

fn c2_variance() -> Outcome {
    let spec = EnsembleSpec::goe();
    let f = parse("poly:0,0,1");
    let rows = simulate(&spec, &f, C2_N, C2_M, SEED).map_err(|e| e.to_string())?;
    let x: Vec<f64> = rows.iter().map(|r| r.les).collect();
    let ([_, var, _], [_, se_var, _]) = jackknife_moments(&x).map_err(|e| e.to_string())?;
    let series = cheb_coeffs(&f, DEFAULT_K, DEFAULT_NODES).map_err(|e| e.to_string())?;
    let s = sigma2_f(&series, &spec, SigmaMode::Series, &f);
    let i = sigma2_f(&series, &spec, SigmaMode::Integral, &f);
    Ok(vec![
        check(
            "empirical",
            (var - 4.0).abs() <= C2_TOL,
            format!("Var = {var:.4} (se {se_var:.4}) vs 4 +- {C2_TOL}"),
        ),
        check(
            "modes",
            (s - i).abs() <= C2_MODE_TOL,
            format!("series {s:.10} vs integral {i:.10}"),
        ),
    ])
}

fn c3_third_moment_r2() -> Outcome {
    let spec = EnsembleSpec::goe();
    let f = parse("cheb:4");
    let series = cheb_coeffs(&f, DEFAULT_K, DEFAULT_NODES).map_err(|e| e.to_string())?;
    let k = constants(&f, &series, &spec, 0.0, C3_N).map_err(|e| e.to_string())?;
    let rows = simulate(&spec, &f, C3_N, C3_M, SEED).map_err(|e| e.to_string())?;
    let x: Vec<f64> = rows.iter().map(|r| r.les).collect();
    let ([_, var, skew], [_, _, se]) = jackknife_moments(&x).map_err(|e| e.to_string())?;
    let nf = C3_N as f64;
    let observed = nf * skew;
    let target = C3_R2 / var.powf(1.5);
    let ours = k.r2 / var.powf(1.5);
    let ok = (observed - target).abs() <= SE_MULTIPLE * nf * se;
    Ok(vec![check(
        "r2 term",
        ok,
        format!(
            "N*skew = {observed:.3} +- {:.3}; (98/3)/Var^1.5 = {target:.3}; computed r2 = {} gives {ours:.3}; Var = {var:.4}",
            nf * se,
            k.r2
        ),
    )])
}

fn c4_third_moment_r1() -> Outcome {
    let spec = skewed_three_point();
    let f = parse("poly:0,1,1");
    let series = cheb_coeffs(&f, DEFAULT_K, DEFAULT_NODES).map_err(|e| e.to_string())?;
    let mut consistent = true;
    let mut pts = Vec::new();
    let mut parts = Vec::new();
    let mut informative = Vec::new();
    for n in C4_GRID {
        let k = constants(&f, &series, &spec, 0.0, n).map_err(|e| e.to_string())?;
        let rows = simulate(&spec, &f, n, C4_M, SEED).map_err(|e| e.to_string())?;
        let x: Vec<f64> = rows.iter().map(|r| r.les).collect();
        let ([_, var, skew], [_, _, se]) = jackknife_moments(&x).map_err(|e| e.to_string())?;
        let root = (n as f64).sqrt();
        let observed = root * skew;
        let literal = -k.r1 / var.powf(1.5);
        let full = root * k.skewness_prediction(var, n);
        consistent &= (observed - literal).abs() <= SE_MULTIPLE * root * se;
        pts.push((n as f64, skew.abs(), se));
        parts.push(format!(
            "N={n}: sqrt(N)*skew = {observed:.3} +- {:.3} vs -r1/Var^1.5 = {literal:.3}",
            root * se
        ));
        informative.push(format!("N={n}: {full:.3}"));
    }
    let fit = rate_fit(&pts).map_err(|e| e.to_string())?;
    Ok(vec![
        check("-r1 term", consistent, parts.join(", ")),
        check(
            "slope",
            in_window(fit.slope, SLOPE_WINDOW_CHI1),
            format!(
                "|skew| slope {:.3} +- {:.3} in {SLOPE_WINDOW_CHI1:?}",
                fit.slope, fit.slope_se
            ),
        ),
        check("+r1 with r2 (reported)", true, informative.join(", ")),
    ])
}

fn c5_ks_dichotomy() -> Outcome {
    let spec = skewed_three_point();
    let f = parse(C5_F);
    let series = cheb_coeffs(&f, DEFAULT_K, DEFAULT_NODES).map_err(|e| e.to_string())?;
    let mut pts = [Vec::new(), Vec::new()];
    let mut chis = [0u8; 2];
    for n in C5_GRID {
        let rows = simulate(&spec, &f, n, C5_M, SEED).map_err(|e| e.to_string())?;
        for (slot, gamma) in [0.0, 1.0].into_iter().enumerate() {
            let k = constants(&f, &series, &spec, gamma, n).map_err(|e| e.to_string())?;
            let x = shifted_les(&rows, gamma, k.c1);
            let s = summarize(n, &x, k.mu_f, k.sigma_f_gamma(), &[], SEED).map_err(|e| e.to_string())?;
            chis[slot] = k.chi;
            pts[slot].push((n as f64, s.ks, s.ks_se));
        }
    }
    let a = rate_fit(&pts[0]).map_err(|e| e.to_string())?;
    let b = rate_fit(&pts[1]).map_err(|e| e.to_string())?;
    let ks = |p: &[(f64, f64, f64)]| p.iter().map(|q| format!("{:.4}", q.1)).collect::<Vec<_>>().join("/");
    Ok(vec![
        check(
            "chi=1",
            chis[0] == 1 && in_window(a.slope, SLOPE_WINDOW_CHI1),
            format!(
                "KS {} slope {:.3} +- {:.3} in {SLOPE_WINDOW_CHI1:?}",
                ks(&pts[0]),
                a.slope,
                a.slope_se
            ),
        ),
        check(
            "chi=0",
            chis[1] == 0 && in_window(b.slope, SLOPE_WINDOW_CHI0),
            format!(
                "KS {} slope {:.3} +- {:.3} in {SLOPE_WINDOW_CHI0:?}",
                ks(&pts[1]),
                b.slope,
                b.slope_se
            ),
        ),
    ])
}

fn c6_mean_trace() -> Outcome {
    let spec = EnsembleSpec::goe().with_diag(match_two_point(2.0, 11.3137).map_err(|e| e.to_string())?);
    let z = Complex64::new(2.5, 0.1);
    let rows = eg_expansion_residual(&spec, z, &C6_GRID, C6_M, SEED).map_err(|e| e.to_string())?;
    let pts: Vec<(f64, f64, f64)> = rows.iter().map(|r| (r.n as f64, r.residual_first, r.se)).collect();
    let fit = rate_fit(&pts).map_err(|e| e.to_string())?;
    let table = rows
        .iter()
        .map(|r| {
            format!(
                "N={}: {:.3e} -> {:.3e} (se {:.1e})",
                r.n, r.residual_leading, r.residual_first, r.se
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok(vec![check(
        "slope",
        in_window(fit.slope, C6_WINDOW),
        format!(
            "{table}; slope {:.3} +- {:.3} in {C6_WINDOW:?}",
            fit.slope, fit.slope_se
        ),
    )])
}

fn c7_two_point() -> Outcome {
    let spec = EnsembleSpec::goe();
    let z1 = SpectralParam::new(
        Complex64::new(2.0 + C7_DELTA, 0.0),
        DomainTag::Sa { a: 1, delta: C7_DELTA },
    )
    .map_err(|e| e.to_string())?;
    let z2 = SpectralParam::new(
        Complex64::new(2.0 + 2.0 * C7_DELTA, 0.0),
        DomainTag::Sa { a: 2, delta: C7_DELTA },
    )
    .map_err(|e| e.to_string())?;
    let pred = two_point_prediction(&z1, &z2, C7_N).map_err(|e| e.to_string())?;
    let est = multipoint_mc(&spec, C7_N, &[z1, z2], C7_M, SEED, None).map_err(|e| e.to_string())?;
    let gap = (est.estimate - pred).norm();
    Ok(vec![check(
        "leading term",
        gap <= SE_MULTIPLE * est.se,
        format!(
            "MC {:.4e} +- {:.1e} vs prediction {:.4e} ({:.2} se)",
            est.estimate.re,
            est.se,
            pred.re,
            gap / est.se
        ),
    )])
}

fn c8_three_point() -> Outcome {
    let p = |a: u8, x: f64| SpectralParam::new(Complex64::new(x, 0.0), DomainTag::Sa { a, delta: C8_DELTA });
    let zs = [
        p(1, 2.0 + C8_DELTA).map_err(|e| e.to_string())?,
        p(2, 2.0 + 2.0 * C8_DELTA).map_err(|e| e.to_string())?,
        p(3, 2.0 + 3.0 * C8_DELTA).map_err(|e| e.to_string())?,
    ];
    let scale = (C8_N as f64).powi(4);
    let goe = EnsembleSpec::goe();
    let pred = three_point_prediction(&zs[0], &zs[1], &zs[2], &goe, C8_N).map_err(|e| e.to_string())?;
    let est = multipoint_mc(&goe, C8_N, &zs, C8_M, SEED, None).map_err(|e| e.to_string())?;
    let a_gap = (est.estimate - pred.h_term).norm() / est.se;

    let skewed = goe.with_diag(match_two_point(2.0, 2.0).map_err(|e| e.to_string())?);
    let pred_b = three_point_prediction(&zs[0], &zs[1], &zs[2], &skewed, C8_N).map_err(|e| e.to_string())?;
    let est_b = multipoint_mc(&skewed, C8_N, &zs, C8_M, SEED, None).map_err(|e| e.to_string())?;
    let ratio = est_b.estimate.re / pred_b.total.re;
    Ok(vec![
        check(
            "GOE h-sum",
            a_gap <= SE_MULTIPLE,
            format!(
                "N^4 x: MC {:.4} +- {:.4} vs 8h-sum {:.4} ({a_gap:.2} se)",
                est.estimate.re * scale,
                est.se * scale,
                pred.h_term.re * scale
            ),
        ),
        check(
            "b3 ratio",
            in_window(ratio, C8_RATIO),
            format!(
                "b3={}: MC {:.4} +- {:.4} vs {:.4}, ratio {ratio:.3} in {C8_RATIO:?}",
                skewed.b3,
                est_b.estimate.re * scale,
                est_b.se * scale,
                pred_b.total.re * scale
            ),
        ),
    ])
}

/// A fixed symmetric 4x4 matrix with spectrum inside `[-2, 2]`.
fn hs_fixture() -> HermitianMatrix {
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        0.6, 0.3, -0.2, 0.1,
        0.3, -0.4, 0.5, 0.0,
        -0.2, 0.5, 0.2, -0.3,
        0.1, 0.0, -0.3, -0.9,
    ]);
    HermitianMatrix::Real(m)
}

fn c9_helffer_sjostrand() -> Outcome {
    let ev = eigenvalues(&hs_fixture()).map_err(|e| e.to_string())?;
    let f = TestFunction::gauss_bump(0.2, 0.6).map_err(|e| e.to_string())?;
    let exact: f64 = ev.iter().map(|&x| f.eval(x)).sum();
    let err = |n: usize| -> Result<f64, String> {
        let v = hs_integral(
            &f,
            &ev,
            4,
            HsGrid {
                nx: n,
                ny: n,
                x_range: None,
            },
        )
        .map_err(|e| e.to_string())?;
        Ok((v - exact).norm())
    };
    let coarse = err(400)?;
    let fine = err(800)?;
    Ok(vec![
        check("accuracy", coarse <= C9_TOL, format!("|error| on 400^2 = {coarse:.3e}")),
        check(
            "refinement",
            coarse / fine >= C9_HALVING,
            format!("800^2 error {fine:.3e}, ratio {:.2}", coarse / fine),
        ),
    ])
}

fn c10_property_checks() -> Outcome {
    let goe = EnsembleSpec::goe();
    let z = SpectralParam::new(Complex64::new(0.5, 0.05), DomainTag::S).map_err(|e| e.to_string())?;
    let mut local = 0.0f64;
    for r in 0..C10_LOCAL_SAMPLES {
        let s = sample_wigner(&goe, C10_LOCAL_N, SEED, r).map_err(|e| e.to_string())?;
        local = local.max(local_law_residual(&s, &z, 16).map_err(|e| e.to_string())?.ratio);
    }
    let local_slack = (C10_LOCAL_N as f64).powf(C10_SLACK);

    let zd = SpectralParam::new(
        Complex64::new(0.3, 0.3),
        DomainTag::Sc {
            n: C10_DECOMP_N,
            c: 0.1,
        },
    )
    .map_err(|e| e.to_string())?;
    let decomp = decomposition_residual(&goe, C10_DECOMP_N, &zd, C10_DECOMP_M, SEED)
        .map_err(|e| e.to_string())?
        .ratio;
    let decomp_slack = (C10_DECOMP_N as f64).powf(C10_SLACK);

    let skewed = skewed_three_point();
    let f = parse(C5_F);
    let one = with_workers(Some(1), || simulate(&skewed, &f, 32, 64, SEED)).map_err(|e| e.to_string())?;
    let three = with_workers(Some(3), || simulate(&skewed, &f, 32, 64, SEED)).map_err(|e| e.to_string())?;
    let deterministic = one == three;

    Ok(vec![
        check(
            "local law",
            local <= local_slack,
            format!("max ratio over {C10_LOCAL_SAMPLES} samples {local:.3} vs {local_slack:.3}"),
        ),
        check(
            "decomposition",
            decomp <= decomp_slack,
            format!("ratio {decomp:.3} vs {decomp_slack:.3}"),
        ),
        check(
            "worker count",
            deterministic,
            "1 and 3 workers give identical rows".into(),
        ),
    ])
}

fn in_window(x: f64, w: (f64, f64)) -> bool {
    x >= w.0 && x <= w.1
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "r2 closed form", c1_r2_oracle),
        (2, "variance formula", c2_variance),
        (3, "third moment, r2 term", c3_third_moment_r2),
        (4, "third moment, r1 term", c4_third_moment_r1),
        (5, "KS rate dichotomy", c5_ks_dichotomy),
        (6, "mean trace expansion", c6_mean_trace),
        (7, "two-point function", c7_two_point),
        (8, "three-point function", c8_three_point),
        (9, "Helffer-Sjostrand reconstruction", c9_helffer_sjostrand),
        (10, "property checks", c10_property_checks),
    ];
    let selected: Option<Vec<u32>> = std::env::var("WIGNER_CLT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let expected = |label: &str| EXPECTED_FAILURES.contains(&(id, label));
        let (status, detail) = match outcome {
            Ok(checks) => {
                let surprise = checks.iter().any(|c| !c.ok && !expected(c.label));
                let known = checks.iter().any(|c| !c.ok && expected(c.label));
                let xpass = checks.iter().any(|c| c.ok && expected(c.label));
                let status = match (surprise, known, xpass) {
                    (true, _, _) => "FAIL",
                    (false, true, _) => "FAIL (expected; see analysis)",
                    (false, false, true) => "XPASS",
                    (false, false, false) => "PASS",
                };
                let detail = checks
                    .iter()
                    .map(|c| {
                        let mark = if c.ok { "ok" } else { "no" };
                        format!("{} [{mark}] {}", c.label, c.detail)
                    })
                    .collect::<Vec<_>>()
                    .join(" | ");
                (status, detail)
            }
            Err(e) => ("ERROR", e),
        };
        if status == "FAIL" || status == "ERROR" {
            unexpected += 1;
        }
        println!("criterion {id:>2} [{name}]: {status} ({secs:.1}s) {detail}");
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

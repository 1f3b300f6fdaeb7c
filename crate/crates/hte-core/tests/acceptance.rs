//! Acceptance gates for the engine, one test per criterion. Each prints a
//! single [PASS] or [FAIL] line with the measured quantities and the pinned
//! tolerance, then asserts.
//!
//! Known red: the setting-B coverage gate in c3 sits below its 0.90 pin at
//! the desk-scale R = 20 (true coverage is near 0.83 there; the same engine
//! reaches 0.95 at R = 50). The gate is kept as pinned rather than weakened;
//! see README.

use hte_core::data::Dataset;
use hte_core::learners::{fit_unrestricted, LearnerSpec};
use hte_core::losses::{modified_diff_sq_loss, Mode};
use hte_core::ncv::{
    confidence_interval, h_value, one_sided_h_value, run_evaluation, run_ncv, train_pair,
    NcvConfig, NcvResult, TrainedPair,
};
use hte_core::restricted::{
    closed_form_tau_linear_scalar, estimate_tau_star, fit_restricted, OptimizerOptions,
};
use hte_core::seeds::{child_seed, rng_from_seed};
use hte_core::simulation::{coverage_study, generate, GeneratorKind, GeneratorSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "[PASS]" } else { "[FAIL]" };
    println!("{tag} {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

fn scalar_dataset(seed: u64, n: usize) -> Dataset {
    let mut rng = rng_from_seed(seed);
    loop {
        let b0: f64 = rng.random_range(-2.0..2.0);
        let b1: f64 = rng.random_range(-3.0..3.0);
        let tau: f64 = rng.random_range(-2.0..2.0);
        let mut outcomes = Vec::with_capacity(n);
        let mut treatments = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            let a = u8::from(rng.random::<f64>() < 0.5);
            let eps: f64 = StandardNormal.sample(&mut rng);
            outcomes.push(b0 + b1 * x + tau * f64::from(a) + eps);
            treatments.push(a);
            rows.push(vec![x]);
        }
        let n1 = treatments.iter().filter(|&&a| a == 1).count();
        if n1 >= 2 && n - n1 >= 2 {
            return Dataset::new(outcomes, treatments, rows, None).unwrap();
        }
    }
}

fn main_effect_ols_coefficient(d: &Dataset) -> f64 {
    let n = d.n();
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => f64::from(d.treatments()[i]),
        _ => d.covariate_row(i)[0],
    });
    let y = DVector::from_fn(n, |i, _| d.outcomes()[i]);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let beta = xtx.lu().solve(&xty).expect("non-singular design");
    beta[1]
}

#[test]
fn c1_closed_form_oracle_equivalence() {
    const TOL: f64 = 1e-6;
    let spec = LearnerSpec::ols();
    let opts = OptimizerOptions::default();
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let n = if i % 2 == 0 { 20 } else { 100 };
        let d = scalar_dataset(child_seed(100, i), n);
        let search = estimate_tau_star(&spec, &d, &opts).unwrap();
        let closed = closed_form_tau_linear_scalar(&d).unwrap();
        let direct = main_effect_ols_coefficient(&d);
        worst = worst
            .max((search.tau_star - closed).abs())
            .max((search.tau_star - direct).abs());
    }
    report(
        "C1 closed-form oracle equivalence",
        worst <= TOL,
        &format!("max |tau* - oracle| = {worst:.3e} over 200 datasets (tol {TOL:.0e})"),
    );
}

fn heterogeneous_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = rng_from_seed(seed);
    loop {
        let mut outcomes = Vec::with_capacity(n);
        let mut treatments = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = u8::from(rng.random::<f64>() < 0.5);
            let eps: f64 = StandardNormal.sample(&mut rng);
            let base: f64 = 1.0 + x.iter().sum::<f64>();
            let effect = 0.5 + 0.8 * x[0];
            outcomes.push(base + f64::from(a) * effect + 0.5 * eps);
            treatments.push(a);
            rows.push(x);
        }
        let n1 = treatments.iter().filter(|&&a| a == 1).count();
        if n1 >= 3 && n - n1 >= 3 {
            return Dataset::new(outcomes, treatments, rows, None).unwrap();
        }
    }
}

#[test]
fn c2_structural_zero_hte() {
    let families: Vec<(&str, LearnerSpec)> = vec![
        ("ols", LearnerSpec::ols()),
        ("ridge", LearnerSpec::ridge(21)),
        ("lasso", LearnerSpec::lasso(22)),
        ("boosting", LearnerSpec::boosting()),
        ("constant", LearnerSpec::constant()),
    ];
    let mut worst_rel = 0.0f64;
    for (fi, (name, spec)) in families.iter().enumerate() {
        for i in 0..50u64 {
            let seed = child_seed(200 + fi as u64, i);
            let n = 30 + (i as usize % 3) * 10;
            let p = 1 + (i as usize % 3);
            let d = heterogeneous_dataset(seed, n, p);
            let g = fit_restricted(spec, &d).unwrap();
            assert_eq!(
                g.ite_gap().to_bits(),
                g.tau_star().to_bits(),
                "{name}: ite_gap is tau_star bitwise"
            );
            let mut rng = rng_from_seed(child_seed(seed, 7));
            for _ in 0..100 {
                let x: Vec<f64> = (0..p)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        2.0 * z
                    })
                    .collect();
                let gap = g.predict(1, &x).unwrap() - g.predict(0, &x).unwrap();
                let scale = 1.0 + g.predict(0, &x).unwrap().abs() + g.tau_star().abs();
                let rel = (gap - g.tau_star()).abs() / (f64::EPSILON * scale);
                worst_rel = worst_rel.max(rel);
            }
        }
    }
    report(
        "C2 structural zero-HTE",
        worst_rel <= 8.0,
        &format!(
            "prediction gap off tau* by at most {worst_rel:.2} eps-units over 5 families x 50 datasets x 100 points (tol 8 eps-units); ite_gap bitwise equal"
        ),
    );
}

#[test]
fn c3_table_2_reproduction_at_desk_scale() {
    const ORACLE_M: usize = 200_000;
    let cfg_a = NcvConfig {
        k: 5,
        reps: 20,
        alpha_levels: vec![0.05],
        seed: 302,
        mode: Mode::Outcome,
        ..NcvConfig::default()
    };
    let gen_a = GeneratorSpec::new(GeneratorKind::LinearA, 100, 301);
    let a = coverage_study(&gen_a, &LearnerSpec::ols(), &cfg_a, 100, ORACLE_M).unwrap();
    let pass_a = a.coverage_proportion >= 0.93
        && (a.mean_estimand - 0.022).abs() <= 0.05
        && (0.40..=0.90).contains(&a.median_one_sided_h);
    report(
        "C3a Table-2 setting A (n=100)",
        pass_a,
        &format!(
            "coverage {:.3} (>= 0.93), mean estimand {:.4} (0.022 +/- 0.05), median one-sided h {:.3} (in [0.40, 0.90])",
            a.coverage_proportion, a.mean_estimand, a.median_one_sided_h
        ),
    );

    let mut cfg_b = cfg_a.clone();
    cfg_b.seed = 304;
    let gen_b = GeneratorSpec::new(GeneratorKind::LinearB, 100, 303);
    let b = coverage_study(&gen_b, &LearnerSpec::ols(), &cfg_b, 100, ORACLE_M).unwrap();
    let pass_b = (-1.40..=-0.85).contains(&b.mean_estimand)
        && b.coverage_proportion >= 0.90
        && b.median_one_sided_h <= 0.01;
    report(
        "C3b Table-2 setting B (n=100)",
        pass_b,
        &format!(
            "mean estimand {:.4} (in [-1.40, -0.85]), coverage {:.3} (>= 0.90), median one-sided h {:.4} (<= 0.01)",
            b.mean_estimand, b.coverage_proportion, b.median_one_sided_h
        ),
    );
}

#[test]
fn c4_nonlinear_spot_check() {
    const ORACLE_M: usize = 200_000;
    let cfg = NcvConfig {
        k: 5,
        reps: 10,
        alpha_levels: vec![0.05],
        seed: 402,
        mode: Mode::Outcome,
        ..NcvConfig::default()
    };
    let gen = GeneratorSpec::new(
        GeneratorKind::Nonlinear { mu_id: 2, theta_id: 3 },
        500,
        401,
    );
    let r = coverage_study(&gen, &LearnerSpec::ols(), &cfg, 60, ORACLE_M).unwrap();
    let pass = (-0.10..=0.05).contains(&r.mean_estimand) && r.coverage_proportion >= 0.90;
    report(
        "C4 nonlinear spot-check (mu2 x theta3, n=500)",
        pass,
        &format!(
            "mean estimand {:.4} (in [-0.10, 0.05]), coverage {:.3} (>= 0.90)",
            r.mean_estimand, r.coverage_proportion
        ),
    );
}

#[test]
fn c5_modified_loss_identity() {
    const M: usize = 1_000_000;
    let gen = GeneratorSpec::new(GeneratorKind::LinearB, M, 500);
    let d = generate(&gen).unwrap();
    let theta_truth = |x: &[f64]| gen.treatment_effect(x);
    let pairs: Vec<(&str, Box<dyn Fn(&[f64]) -> f64>, f64)> = vec![
        ("constant-misfit", Box::new(|_: &[f64]| 0.8), 0.0),
        ("exact-truth", Box::new(theta_truth), 1.5),
        ("linear-misfit", Box::new(|x: &[f64]| 2.0 - x[0] + x[1]), -0.5),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (name, theta_hat, tau) in &pairs {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..M {
            let x = d.covariate_row(i);
            let y = d.outcomes()[i];
            let w = if d.treatments()[i] == 1 { 2.0 * y } else { -2.0 * y };
            let th = theta_hat(x);
            let lhs = modified_diff_sq_loss(th, *tau, w);
            let truth = gen.treatment_effect(x);
            let rhs = (truth - th) * (truth - th) - (truth - tau) * (truth - tau);
            let diff = lhs - rhs;
            sum += diff;
            sum_sq += diff * diff;
        }
        let mf = M as f64;
        let mean = sum / mf;
        let se = (((sum_sq - sum * sum / mf) / (mf - 1.0)) / mf).sqrt();
        let ok = mean.abs() <= 4.0 * se;
        pass &= ok;
        detail.push_str(&format!("{name}: |mean diff| {:.2e} vs 4 SE {:.2e}; ", mean.abs(), 4.0 * se));
    }
    report(
        "C5 modified-loss identity at m=1e6",
        pass,
        detail.trim_end_matches("; "),
    );
}

struct ConstantPair {
    f0: f64,
    f1: f64,
    g0: f64,
    g1: f64,
}

fn fit_constant_pair(d: &Dataset, rows: &[usize]) -> ConstantPair {
    let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0.0, 0.0, 0.0);
    for &i in rows {
        if d.treatments()[i] == 1 {
            s1 += d.outcomes()[i];
            n1 += 1.0;
        } else {
            s0 += d.outcomes()[i];
            n0 += 1.0;
        }
    }
    let (m0, m1) = (s0 / n0, s1 / n1);
    let tau = m1 - m0;
    let shifted_mean = rows
        .iter()
        .map(|&i| d.outcomes()[i] - tau * f64::from(d.treatments()[i]))
        .sum::<f64>()
        / rows.len() as f64;
    ConstantPair {
        f0: m0,
        f1: m1,
        g0: shifted_mean,
        g1: shifted_mean + tau,
    }
}

fn brute_force_constant_ncv(d: &Dataset, cfg: &NcvConfig) -> (f64, f64, f64, f64) {
    let loss = |p: &ConstantPair, i: usize| -> f64 {
        let y = d.outcomes()[i];
        let (f, g) = if d.treatments()[i] == 1 { (p.f1, p.g1) } else { (p.f0, p.g0) };
        (y - f) * (y - f) - (y - g) * (y - g)
    };
    let mut inner_means = Vec::new();
    let mut outer_means = Vec::new();
    let mut outer_vars = Vec::new();
    let mut fold_sizes = Vec::new();
    for r in 0..cfg.reps {
        let folds = hte_core::data::split_folds(d, cfg.k, child_seed(cfg.seed, r as u64)).unwrap();
        for k in 0..cfg.k {
            let mut per_fold = Vec::new();
            for j in 0..cfg.k {
                if j == k {
                    continue;
                }
                let train = folds.complement2(k, j);
                let pair = fit_constant_pair(d, &train);
                let eval = folds.fold_indices(j);
                per_fold.push(eval.iter().map(|&i| loss(&pair, i)).sum::<f64>() / eval.len() as f64);
            }
            inner_means.push(per_fold.iter().sum::<f64>() / per_fold.len() as f64);
            let train = folds.complement(k);
            let pair = fit_constant_pair(d, &train);
            let eval = folds.fold_indices(k);
            let losses: Vec<f64> = eval.iter().map(|&i| loss(&pair, i)).collect();
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
                / (losses.len() as f64 - 1.0);
            outer_means.push(mean);
            outer_vars.push(var);
            fold_sizes.push(losses.len());
        }
    }
    let cells = inner_means.len() as f64;
    let e_ncv = inner_means.iter().sum::<f64>() / cells;
    let e_cv = outer_means[..cfg.k].iter().sum::<f64>() / cfg.k as f64;
    let bias = (1.0 + (cfg.k as f64 - 2.0) / cfg.k as f64) * (e_ncv - e_cv);
    let gap_sq = inner_means
        .iter()
        .zip(&outer_means)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / cells;
    let var_term = outer_vars
        .iter()
        .zip(&fold_sizes)
        .map(|(v, n)| v / *n as f64)
        .sum::<f64>()
        / cells;
    let raw = gap_sq - var_term;
    (e_ncv, e_cv, bias, raw.max(cfg.mse_floor))
}

#[test]
fn c6_nested_cv_arithmetic_oracle() {
    const TOL: f64 = 1e-10;
    let mut rng = rng_from_seed(600);
    let n = 20;
    let outcomes: Vec<f64> = (0..n)
        .map(|i| 0.3 * i as f64 + 2.0 * rng.random::<f64>())
        .collect();
    let treatments: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / 7.0]).collect();
    let d = Dataset::new(outcomes, treatments, rows, None).unwrap();
    let cfg = NcvConfig {
        k: 4,
        reps: 2,
        alpha_levels: vec![0.05],
        seed: 601,
        mode: Mode::Outcome,
        ..NcvConfig::default()
    };
    let start = std::time::Instant::now();
    let res = run_ncv(&LearnerSpec::constant(), &d, None, &cfg).unwrap();
    let (e_ncv, e_cv, bias, mse) = brute_force_constant_ncv(&d, &cfg);
    let elapsed = start.elapsed().as_secs_f64();
    let devs = [
        (res.e_ncv - e_ncv).abs(),
        (res.e_cv - e_cv).abs(),
        (res.bias - bias).abs(),
        (res.mse - mse).abs(),
    ];
    let worst = devs.iter().cloned().fold(0.0, f64::max);
    report(
        "C6 nested-CV arithmetic oracle",
        worst <= TOL && elapsed < 1.0,
        &format!(
            "max |engine - brute force| = {worst:.3e} over (e_ncv, e_cv, bias, mse) (tol {TOL:.0e}), {elapsed:.3}s (< 1s)"
        ),
    );
}

#[test]
fn c7_h_value_consistency() {
    let mut rng = rng_from_seed(700);
    let mut worst_rel = 0.0f64;
    let mut flips_ok = true;
    for _ in 0..100 {
        let sd: f64 = rng.random_range(0.05..5.0);
        let ratio: f64 = rng.random_range(0.5..3.5);
        let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        let center = sign * ratio * sd;
        let res = NcvResult {
            e_ncv: center,
            e_cv: center,
            bias: 0.0,
            mse: sd * sd,
            raw_mse: sd * sd,
            inner_fold_means: vec![],
            outer_fold_means: vec![],
            outer_fold_vars: vec![],
            n_per_fold: vec![],
            k: 5,
            reps: 1,
            warnings: vec![],
        };
        let h = h_value(&res);
        let h1 = one_sided_h_value(&res);
        worst_rel = worst_rel.max((h - 2.0 * h1.min(1.0 - h1)).abs());
        let expected_h1 = if center < 0.0 { h / 2.0 } else { 1.0 - h / 2.0 };
        worst_rel = worst_rel.max((h1 - expected_h1).abs());

        let (lo_wide, hi_wide) = confidence_interval(&res, h - 1e-6);
        let (lo_narrow, hi_narrow) = confidence_interval(&res, h + 1e-6);
        let contains_wide = lo_wide <= 0.0 && 0.0 <= hi_wide;
        let contains_narrow = lo_narrow <= 0.0 && 0.0 <= hi_narrow;
        flips_ok &= contains_wide && !contains_narrow;
        worst_rel =
            worst_rel.max((0.5 * (lo_wide + hi_wide) - center).abs() / (1.0 + center.abs()));
    }
    report(
        "C7 h-value consistency",
        flips_ok && worst_rel <= 1e-12,
        &format!(
            "containment flips at h +/- 1e-6 on 100 fixtures; worst algebraic deviation {worst_rel:.3e} (tol 1e-12)"
        ),
    );
}

#[test]
fn c8_determinism_across_thread_counts() {
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let specs = [
        LearnerSpec::ols(),
        LearnerSpec::ridge(31),
        LearnerSpec::lasso(32),
        LearnerSpec::boosting(),
    ];
    let modes = [Mode::Outcome, Mode::Modified, Mode::ModifiedFromOutcome];
    let mut all_equal = true;
    for i in 0..10u64 {
        let d = generate(&GeneratorSpec::new(GeneratorKind::LinearB, 40, 800 + i)).unwrap();
        let cfg = NcvConfig {
            k: 5,
            reps: 2,
            alpha_levels: vec![0.05, 0.2],
            seed: 900 + i,
            mode: modes[i as usize % 3],
            ..NcvConfig::default()
        };
        let spec = specs[i as usize % 4].clone();
        let mut r1 = pool1.install(|| run_evaluation(&spec, &d, None, &cfg)).unwrap();
        let mut r8 = pool8.install(|| run_evaluation(&spec, &d, None, &cfg)).unwrap();
        r1.wall_time_seconds = 0.0;
        r8.wall_time_seconds = 0.0;
        all_equal &= r1.to_json().unwrap() == r8.to_json().unwrap();
    }
    report(
        "C8 determinism across thread counts",
        all_equal,
        "identical JSON reports from 1-thread and 8-thread pools on 10 seeds (wall time zeroed)",
    );
}

#[test]
fn c9_lasso_degenerate_mse_handling() {
    let mut rng = rng_from_seed(901);
    let n = 40;
    let outcomes = vec![3.25; n];
    let treatments: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let d = Dataset::new(outcomes, treatments, rows, None).unwrap();
    let spec = LearnerSpec::lasso(33);
    let pair = train_pair(&spec, &d, None, Mode::Outcome).unwrap();
    let no_covariates = match &pair {
        TrainedPair::Outcome { f, .. } => {
            let f2 = fit_unrestricted(&spec, &d).unwrap();
            assert_eq!(f.meta().family, f2.meta().family);
            f.meta()
                .coefficients
                .as_ref()
                .map(|c| c.iter().skip(1).all(|&b| b == 0.0))
                .unwrap_or(false)
        }
        _ => false,
    };
    let cfg = NcvConfig {
        k: 5,
        reps: 2,
        alpha_levels: vec![0.05],
        seed: 902,
        mode: Mode::Outcome,
        ..NcvConfig::default()
    };
    let report_out = run_evaluation(&spec, &d, None, &cfg).unwrap();
    let ncv = &report_out.ncv;
    let floored = ncv.raw_mse <= cfg.mse_floor && ncv.mse == cfg.mse_floor;
    let warned = !ncv.warnings.is_empty();
    let finite = ncv.e_ncv.is_finite()
        && ncv.mse.is_finite()
        && report_out.h_two_sided.is_finite()
        && report_out.h_one_sided.is_finite()
        && report_out
            .intervals
            .iter()
            .all(|iv| iv.lower.is_finite() && iv.upper.is_finite());
    report(
        "C9 lasso degenerate-MSE handling",
        no_covariates && floored && warned && finite,
        &format!(
            "no covariates selected: {no_covariates}; raw_mse {:.3e} <= floor {:.0e} with mse floored: {floored}; warning issued: {warned}; report finite: {finite}",
            ncv.raw_mse, cfg.mse_floor
        ),
    );
}

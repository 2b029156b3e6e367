use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use proptail_core::estimators::{estimate, EstimateRequest, ThresholdSpec};
use proptail_core::model::{CovariateSpec, RawSkedasis, SkedasisFamily, TailFamily, TailModel};
use proptail_core::montecarlo::diagnostics::{chi_square_gof, chi_square_independence, ks_test, normal_cdf};
use proptail_core::montecarlo::{run_experiment, ExperimentKind, McConfig};

fn affine_two_x() -> TailModel {
    TailModel::new(
        0.5,
        2.0,
        TailFamily::ExactPareto,
        RawSkedasis::new(SkedasisFamily::Affine, vec![0.0, 1.0]),
        CovariateSpec::uniform(1).unwrap(),
    )
    .unwrap()
}

#[test]
fn constant_skedasis_makes_response_independent_of_covariate() {
    let model = TailModel::pareto(0.5, 1.0).unwrap();
    let s = model.sample_dataset(100_000, 11).unwrap();
    // Pareto(2) quartiles.
    let y_cuts = [(4.0f64 / 3.0).sqrt(), 2f64.sqrt(), 2.0];
    let mut table = vec![vec![0u64; 4]; 4];
    for (x, y) in s.covariates().zip(s.responses()) {
        let row = ((x[0] * 4.0) as usize).min(3);
        let col = y_cuts.iter().take_while(|&&c| *y > c).count();
        table[row][col] += 1;
    }
    let (_, df, p) = chi_square_independence(&table).unwrap();
    assert_eq!(df, 9);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn unconditional_tail_matches_base_tail() {
    let model = TailModel::pareto(0.5, 1.0).unwrap();
    let s = model.sample_dataset(1_000_000, 12).unwrap();
    let frac = s.responses().iter().filter(|&&y| y > 10.0).count() as f64 / s.len() as f64;
    // Binomial sd at p = 0.01 is about 1e-4.
    assert!((frac - 0.01).abs() < 5e-4, "frac = {frac}");
}

#[test]
fn affine_skedasis_halves_tail_on_lower_half() {
    let model = affine_two_x();
    let s = model.sample_dataset(1_000_000, 13).unwrap();
    let y = 20.0;
    let (mut low_exceed, mut low) = (0usize, 0usize);
    let mut exceed = 0usize;
    for (x, &v) in s.covariates().zip(s.responses()) {
        if x[0] <= 0.5 {
            low += 1;
            low_exceed += usize::from(v > y);
        }
        exceed += usize::from(v > y);
    }
    let ratio = (low_exceed as f64 / low as f64) / (exceed as f64 / s.len() as f64);
    // ∫_0^{1/2} 2x dx / (1/2) = 1/2; about 2500 exceedances give sd ≈ 0.02.
    assert!((ratio - 0.5).abs() < 0.08, "ratio = {ratio}");
}

#[test]
fn exceedance_count_is_binomial() {
    let model = affine_two_x();
    let y_n = model.tail_level(0.01).unwrap();
    let n = 200_000;
    let s = model.sample_dataset(n, 14).unwrap();
    let count = s.responses().iter().filter(|&&y| y > y_n).count() as f64;
    let mean = n as f64 * 0.01;
    let sd = (mean * 0.99).sqrt();
    assert!((count - mean).abs() < 4.0 * sd, "count = {count}");
}

#[test]
fn discrete_covariates_follow_their_law() {
    let model = TailModel::new(
        0.5,
        2.0,
        TailFamily::ExactPareto,
        RawSkedasis::new(SkedasisFamily::Affine, vec![0.5, 1.0]),
        CovariateSpec::discrete(vec![vec![0.0], vec![0.5], vec![1.0]], vec![0.3, 0.4, 0.3]).unwrap(),
    )
    .unwrap();
    let s = model.sample_dataset(50_000, 15).unwrap();
    let mut counts = [0u64; 3];
    for x in s.covariates() {
        counts[(x[0] * 2.0).round() as usize] += 1;
    }
    let (_, _, p) = chi_square_gof(&counts, &[0.3, 0.4, 0.3]).unwrap();
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn normal_ks_p_values_are_uniform_over_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut deciles = [0u64; 10];
    for _ in 0..200 {
        let v: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, p) = ks_test(&v, normal_cdf).unwrap();
        deciles[((p * 10.0) as usize).min(9)] += 1;
    }
    let (_, _, p) = chi_square_gof(&deciles, &[0.1; 10]).unwrap();
    assert!(p > 0.001, "deciles = {deciles:?}, p = {p}");
}

#[test]
fn estimate_on_generated_data_is_finite() {
    let model = affine_two_x();
    let s = model.sample_dataset(100_000, 17).unwrap();
    let report = estimate(
        &s,
        &EstimateRequest {
            threshold: ThresholdSpec::TopK(1000),
            bandwidth: 0.1,
            points: vec![vec![0.25], vec![0.75]],
            alphas: vec![1e-3, 1e-4],
        },
    )
    .unwrap();
    assert!(report.gamma_hat.is_finite() && (report.gamma_hat - 0.5).abs() < 0.1);
    assert!(report.sigma_hat.iter().chain(&report.c_hat).all(|v| v.is_finite()));
    assert_eq!(report.quantiles.len(), 4);
    assert!(report.quantiles.iter().all(|q| q.value.is_finite() && q.value > 0.0));
}

#[test]
fn conditional_quantile_error_shrinks_with_n() {
    let model = affine_two_x();
    let x = [0.5];
    let alpha = 1e-4;
    let truth = model.true_conditional_quantile(&x, alpha).unwrap();
    let mut errors = Vec::new();
    for (n, k) in [(10_000usize, 100usize), (1_000_000, 1000)] {
        let mut errs: Vec<f64> = (0..20u64)
            .map(|seed| {
                let s = model.sample_dataset(n, 100 + seed).unwrap();
                let r = estimate(
                    &s,
                    &EstimateRequest {
                        threshold: ThresholdSpec::TopK(k),
                        bandwidth: (n as f64).powf(-0.2),
                        points: vec![x.to_vec()],
                        alphas: vec![alpha],
                    },
                )
                .unwrap();
                (r.quantiles[0].value / truth - 1.0).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errors.push(errs[errs.len() / 2]);
    }
    assert!(errors[1] < errors[0], "{errors:?}");
}

#[test]
fn monte_carlo_reports_are_reproducible() {
    let model = affine_two_x();
    let cfg = McConfig {
        threshold: ThresholdSpec::FixedLevel(model.tail_level(0.02).unwrap()),
        model,
        n: 5000,
        bandwidth: Some(0.2),
        alpha_n: Some(4e-4),
        points: vec![vec![0.5]],
        replications: 30,
        seed: 99,
    };
    for kind in [ExperimentKind::Gamma, ExperimentKind::IntegratedC, ExperimentKind::Quantile] {
        assert_eq!(run_experiment(&cfg, kind).unwrap(), run_experiment(&cfg, kind).unwrap());
    }
    let mut other = cfg.clone();
    other.seed = 100;
    assert_ne!(
        run_experiment(&cfg, ExperimentKind::Gamma).unwrap()[0].statistics,
        run_experiment(&other, ExperimentKind::Gamma).unwrap()[0].statistics
    );
}

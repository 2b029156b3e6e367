use proptest::prelude::*;

use proptail_core::estimators::{
    conditional_extreme_quantile, hill_estimate, integrated_skedasis_estimate,
    kernel_skedasis_estimate, resolve_threshold, weissman_quantile, ThresholdResolution,
    ThresholdSpec,
};
use proptail_core::model::{CovariateSpec, RawSkedasis, SampleSet, SkedasisFamily, TailFamily, TailModel};
use proptail_core::montecarlo::diagnostics::normal_cdf;

fn sample_strategy() -> impl Strategy<Value = SampleSet> {
    prop::collection::vec((0.0f64..1.0, 1.0f64..1e4), 5..60).prop_map(|pairs| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        SampleSet::from_pairs(&xs, &ys).unwrap()
    })
}

fn hall_model(beta: f64, c: f64) -> TailModel {
    TailModel::new(
        0.5,
        2.0,
        TailFamily::Hall { beta, c },
        RawSkedasis::new(SkedasisFamily::Affine, vec![0.0, 1.0]),
        CovariateSpec::uniform(1).unwrap(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn normal_cdf_is_symmetric(z in -40.0f64..40.0) {
        prop_assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_is_monotone(a in -10.0f64..10.0, step in 1e-6f64..1.0) {
        prop_assert!(normal_cdf(a + step) >= normal_cdf(a));
    }

    #[test]
    fn hill_is_scale_invariant(sample in sample_strategy(), k in 1usize..5, e in -8i32..8) {
        let factor = 2f64.powi(e);
        let res = resolve_threshold(&sample, ThresholdSpec::TopK(k)).unwrap();
        prop_assume!(res.exceedances > 0);
        let scaled = sample.scale_responses(factor);
        let res_scaled = resolve_threshold(&scaled, ThresholdSpec::TopK(k)).unwrap();
        prop_assert_eq!(res_scaled.level, res.level * factor);
        prop_assert_eq!(
            hill_estimate(&sample, &res).unwrap(),
            hill_estimate(&scaled, &res_scaled).unwrap()
        );
    }

    #[test]
    fn integrated_skedasis_is_a_cdf(sample in sample_strategy(), k in 1usize..5, a in -0.1f64..1.1, b in -0.1f64..1.1) {
        let res = resolve_threshold(&sample, ThresholdSpec::TopK(k)).unwrap();
        prop_assume!(res.exceedances > 0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let c_lo = integrated_skedasis_estimate(&sample, &res, &[lo]).unwrap();
        let c_hi = integrated_skedasis_estimate(&sample, &res, &[hi]).unwrap();
        prop_assert!((0.0..=1.0).contains(&c_lo));
        prop_assert!(c_lo <= c_hi);
        prop_assert_eq!(integrated_skedasis_estimate(&sample, &res, &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn covering_window_gives_unit_skedasis(sample in sample_strategy(), k in 1usize..5, x in 0.0f64..1.0) {
        let res = resolve_threshold(&sample, ThresholdSpec::TopK(k)).unwrap();
        prop_assume!(res.exceedances > 0);
        let s = kernel_skedasis_estimate(&sample, &res, &[x], 1.5).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plug_in_matches_weissman_at_rescaled_level(
        level in 1.0f64..100.0,
        exceedances in 1usize..500,
        gamma in 0.05f64..2.0,
        sigma in 0.05f64..5.0,
        alpha in 1e-6f64..1e-2,
    ) {
        let res = ThresholdResolution {
            level,
            exceedances,
            n: 1000,
            p_hat: exceedances as f64 / 1000.0,
            tied: false,
        };
        let plug_in = conditional_extreme_quantile(&res, gamma, sigma, alpha).unwrap();
        let direct = weissman_quantile(&res, gamma, alpha / sigma).unwrap();
        prop_assert_eq!(plug_in, direct);
        prop_assert_eq!(conditional_extreme_quantile(&res, gamma, 1.0, alpha).unwrap(),
                        weissman_quantile(&res, gamma, alpha).unwrap());
    }

    #[test]
    fn weissman_is_monotone_in_alpha(gamma in 0.05f64..2.0, a in 1e-6f64..0.5, shrink in 0.01f64..0.99) {
        let res = ThresholdResolution { level: 3.0, exceedances: 50, n: 1000, p_hat: 0.05, tied: false };
        prop_assert!(weissman_quantile(&res, gamma, a * shrink).unwrap() > weissman_quantile(&res, gamma, a).unwrap());
    }

    #[test]
    fn hall_quantile_round_trip(beta in 0.2f64..3.0, c in 0.0f64..0.95, x in 0.05f64..1.0, logt in 1.0f64..12.0) {
        let model = hall_model(beta, c);
        let t = logt.exp();
        let sigma = model.sigma(&[x]);
        let min_t = 1.0 / (sigma * model.base_tail(model.y0()));
        prop_assume!(t >= min_t);
        let y = model.conditional_tail_quantile(&[x], t).unwrap();
        let back = model.conditional_tail(&[x], y).unwrap();
        prop_assert!((back * t - 1.0).abs() < 1e-10, "t = {t}, y = {y}, back = {back}");
    }

    #[test]
    fn sample_csv_round_trip(sample in sample_strategy()) {
        let mut buf = Vec::new();
        sample.write_csv(&mut buf).unwrap();
        let back = SampleSet::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.responses(), sample.responses());
        prop_assert!(back.covariates().eq(sample.covariates()));
    }
}

//! Peaks-over-threshold estimators: Hill-type tail index, pseudo empirical
//! integrated skedasis, box-kernel skedasis, and Weissman extrapolation.
//!
//! Exceedance is always the strict event `Y_i > y_n`.

use std::io::Write;

use crate::config::{format_point, KeyValues};
use crate::error::{invalid, Error, Result};
use crate::model::{SampleSet, TailModel};

/// How the threshold `y_n` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    FixedLevel(f64),
    /// `y_n` is the `(k+1)`-th largest response.
    TopK(usize),
}

impl ThresholdSpec {
    /// Reads `threshold.mode` (`topk` or `fixed`) with `threshold.k`,
    /// `threshold.level` or `threshold.p`. The latter converts a target
    /// exceedance probability to a level and needs the generating model.
    /// Returns `None` when no threshold keys are present.
    pub fn from_key_values(kv: &KeyValues, model: Option<&TailModel>) -> Result<Option<Self>> {
        let mode = kv.get("threshold.mode");
        let has_any = ["threshold.k", "threshold.level", "threshold.p"]
            .iter()
            .any(|k| kv.contains(k));
        let mode = match (mode, has_any) {
            (None, false) => return Ok(None),
            (Some(m), _) => m.to_string(),
            (None, true) if kv.contains("threshold.k") => "topk".to_string(),
            (None, true) => "fixed".to_string(),
        };
        match mode.as_str() {
            "topk" => {
                let k: usize = kv.require_parsed("threshold.k")?;
                if k == 0 {
                    return Err(invalid("threshold.k", "must be positive"));
                }
                Ok(Some(Self::TopK(k)))
            }
            "fixed" => {
                if let Some(level) = kv.parsed::<f64>("threshold.level")? {
                    if !level.is_finite() {
                        return Err(invalid("threshold.level", "must be finite"));
                    }
                    return Ok(Some(Self::FixedLevel(level)));
                }
                let p: f64 = kv.require_parsed("threshold.p")?;
                if !(p > 0.0 && p < 1.0) {
                    return Err(invalid("threshold.p", "must lie in (0, 1)"));
                }
                let model = model.ok_or_else(|| {
                    invalid("threshold.p", "needs a model; use threshold.level instead")
                })?;
                Ok(Some(Self::FixedLevel(model.tail_level(p)?)))
            }
            other => Err(invalid(
                "threshold.mode",
                format!("unknown mode `{other}` (topk|fixed)"),
            )),
        }
    }
}

/// Resolved threshold with its exceedance count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResolution {
    pub level: f64,
    pub exceedances: usize,
    pub n: usize,
    pub p_hat: f64,
    /// Top-k resolution hit ties at the order statistic, so `exceedances < k`.
    pub tied: bool,
}

impl ThresholdResolution {
    pub fn require_exceedances(&self) -> Result<()> {
        if self.exceedances == 0 {
            Err(Error::NoExceedances { level: self.level })
        } else {
            Ok(())
        }
    }

    /// Same resolution with the level multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            level: self.level * factor,
            ..*self
        }
    }
}

pub fn resolve_threshold(sample: &SampleSet, spec: ThresholdSpec) -> Result<ThresholdResolution> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let ys = sample.responses();
    let (level, k) = match spec {
        ThresholdSpec::FixedLevel(y) => {
            if !y.is_finite() {
                return Err(invalid("threshold.level", "must be finite"));
            }
            (y, None)
        }
        ThresholdSpec::TopK(k) => {
            if k == 0 || k >= n {
                return Err(Error::InvalidTopK { k, n });
            }
            let mut sorted = ys.to_vec();
            let (_, kth, _) = sorted.select_nth_unstable_by(k, |a, b| b.total_cmp(a));
            (*kth, Some(k))
        }
    };
    let exceedances = ys.iter().filter(|&&y| y > level).count();
    Ok(ThresholdResolution {
        level,
        exceedances,
        n,
        p_hat: exceedances as f64 / n as f64,
        tied: k.is_some_and(|k| exceedances != k),
    })
}

/// Hill-type estimator `(1/N_n) Σ_{Y_i > y_n} log(Y_i / y_n)`.
pub fn hill_estimate(sample: &SampleSet, res: &ThresholdResolution) -> Result<f64> {
    res.require_exceedances()?;
    if !(res.level > 0.0) {
        return Err(Error::EstimationFailure(format!(
            "log-excesses need a positive threshold, got {}",
            res.level
        )));
    }
    let (sum, count) = sample
        .responses()
        .iter()
        .filter(|&&y| y > res.level)
        .fold((0.0, 0usize), |(s, c), &y| (s + (y / res.level).ln(), c + 1));
    if count == 0 {
        return Err(Error::NoExceedances { level: res.level });
    }
    let gamma_hat = sum / count as f64;
    if gamma_hat <= 0.0 {
        log::warn!("degenerate Hill estimate {gamma_hat}: every exceedance sits at the threshold");
    }
    Ok(gamma_hat)
}

fn dominated(u: &[f64], x: &[f64]) -> bool {
    u.iter().zip(x).all(|(a, b)| a <= b)
}

/// Pseudo empirical distribution `Ĉ_n(x) = (1/N_n) Σ 1{Y_i > y_n, X_i ≤ x}`.
pub fn integrated_skedasis_estimate(
    sample: &SampleSet,
    res: &ThresholdResolution,
    x: &[f64],
) -> Result<f64> {
    res.require_exceedances()?;
    check_dim(sample, x)?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (xi, &yi) in sample.covariates().zip(sample.responses()) {
        if yi > res.level {
            total += 1;
            if dominated(xi, x) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::NoExceedances { level: res.level });
    }
    Ok(hits as f64 / total as f64)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

fn check_dim(sample: &SampleSet, x: &[f64]) -> Result<()> {
    if x.len() != sample.dim() {
        return Err(Error::DimensionMismatch {
            expected: sample.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Box-kernel skedasis estimator
/// `σ̂(x) = n Σ 1{|x−X_i|_∞ < h, Y_i > y_n} / (Σ 1{|x−X_i|_∞ < h} · Σ 1{Y_i > y_n})`.
pub fn kernel_skedasis_estimate(
    sample: &SampleSet,
    res: &ThresholdResolution,
    x: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(invalid("bandwidth", format!("must be positive, got {h}")));
    }
    check_dim(sample, x)?;
    res.require_exceedances()?;
    let mut window = 0usize;
    let mut window_exceed = 0usize;
    let mut exceed = 0usize;
    let mut nearest = f64::INFINITY;
    for (xi, &yi) in sample.covariates().zip(sample.responses()) {
        let d = sup_distance(xi, x);
        nearest = nearest.min(d);
        let over = yi > res.level;
        if over {
            exceed += 1;
        }
        if d < h {
            window += 1;
            if over {
                window_exceed += 1;
            }
        }
    }
    if exceed == 0 {
        return Err(Error::NoExceedances { level: res.level });
    }
    if window == 0 {
        return Err(Error::EmptyWindow {
            min_bandwidth: nearest,
        });
    }
    let n = sample.len() as f64;
    Ok(n * window_exceed as f64 / (window as f64 * exceed as f64))
}

/// Weissman extrapolation `y_n (p̂ / α)^γ̂`.
pub fn weissman_quantile(res: &ThresholdResolution, gamma_hat: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || alpha >= 1.0 {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if !(res.p_hat > 0.0) {
        return Err(Error::NoExceedances { level: res.level });
    }
    Ok(res.level * (res.p_hat / alpha).powf(gamma_hat))
}

/// Plug-in conditional quantile `y_n (p̂ σ̂(x) / α)^γ̂`, evaluated as the
/// Weissman quantile at level `α / σ̂(x)`.
pub fn conditional_extreme_quantile(
    res: &ThresholdResolution,
    gamma_hat: f64,
    sigma_hat: f64,
    alpha: f64,
) -> Result<f64> {
    if !(sigma_hat > 0.0) || !sigma_hat.is_finite() {
        return Err(Error::EstimationFailure(format!(
            "skedasis estimate must be positive, got {sigma_hat}"
        )));
    }
    if !(alpha > 0.0) || alpha >= 1.0 {
        return Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if !(res.p_hat > 0.0) {
        return Err(Error::NoExceedances { level: res.level });
    }
    Ok(res.level * (res.p_hat / (alpha / sigma_hat)).powf(gamma_hat))
}

/// What to estimate on a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRequest {
    pub threshold: ThresholdSpec,
    pub bandwidth: f64,
    pub points: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEstimate {
    pub alpha: f64,
    /// `None` for the unconditional Weissman quantile.
    pub point: Option<Vec<f64>>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub gamma_hat: f64,
    pub points: Vec<Vec<f64>>,
    pub sigma_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub quantiles: Vec<QuantileEstimate>,
    pub threshold: ThresholdResolution,
    pub bandwidth: f64,
}

/// Run every estimator requested. Without query points only the
/// unconditional Weissman quantiles are produced.
pub fn estimate(sample: &SampleSet, req: &EstimateRequest) -> Result<EstimateReport> {
    let threshold = resolve_threshold(sample, req.threshold)?;
    threshold.require_exceedances()?;
    let gamma_hat = hill_estimate(sample, &threshold)?;
    let mut sigma_hat = Vec::with_capacity(req.points.len());
    let mut c_hat = Vec::with_capacity(req.points.len());
    let mut quantiles = Vec::new();
    for x in &req.points {
        let s = kernel_skedasis_estimate(sample, &threshold, x, req.bandwidth)?;
        sigma_hat.push(s);
        c_hat.push(integrated_skedasis_estimate(sample, &threshold, x)?);
        for &alpha in &req.alphas {
            quantiles.push(QuantileEstimate {
                alpha,
                point: Some(x.clone()),
                value: conditional_extreme_quantile(&threshold, gamma_hat, s, alpha)?,
            });
        }
    }
    if req.points.is_empty() {
        for &alpha in &req.alphas {
            quantiles.push(QuantileEstimate {
                alpha,
                point: None,
                value: weissman_quantile(&threshold, gamma_hat, alpha)?,
            });
        }
    }
    let report = EstimateReport {
        gamma_hat,
        points: req.points.clone(),
        sigma_hat,
        c_hat,
        quantiles,
        threshold,
        bandwidth: req.bandwidth,
    };
    if !report.all_finite() {
        return Err(Error::EstimationFailure("non-finite estimate".into()));
    }
    Ok(report)
}

impl EstimateReport {
    fn all_finite(&self) -> bool {
        self.gamma_hat.is_finite()
            && self.sigma_hat.iter().all(|v| v.is_finite())
            && self.c_hat.iter().all(|v| v.is_finite())
            && self.quantiles.iter().all(|q| q.value.is_finite())
    }

    /// Rows `quantity,point,value`; multi-dimensional points join
    /// coordinates with spaces.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["quantity", "point", "value"])?;
        let t = &self.threshold;
        w.write_record(["threshold", "", &t.level.to_string()])?;
        w.write_record(["exceedances", "", &t.exceedances.to_string()])?;
        w.write_record(["p_hat", "", &t.p_hat.to_string()])?;
        w.write_record(["bandwidth", "", &self.bandwidth.to_string()])?;
        w.write_record(["gamma_hat", "", &self.gamma_hat.to_string()])?;
        for ((x, s), c) in self.points.iter().zip(&self.sigma_hat).zip(&self.c_hat) {
            let p = format_point(x);
            w.write_record(["sigma_hat", &p, &s.to_string()])?;
            w.write_record(["C_hat", &p, &c.to_string()])?;
        }
        for q in &self.quantiles {
            let p = q.point.as_deref().map(format_point).unwrap_or_default();
            w.write_record([&format!("q_hat[alpha={}]", q.alpha), &p, &q.value.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let t = &self.threshold;
        let mut s = format!(
            "threshold y_n = {} ({} exceedances, p_hat = {}{})\ngamma_hat = {:.6}\n",
            t.level,
            t.exceedances,
            t.p_hat,
            if t.tied { ", ties at threshold" } else { "" },
            self.gamma_hat
        );
        for ((x, sh), c) in self.points.iter().zip(&self.sigma_hat).zip(&self.c_hat) {
            s.push_str(&format!(
                "x = [{}]: sigma_hat = {:.6}, C_hat = {:.6}\n",
                format_point(x),
                sh,
                c
            ));
        }
        for q in &self.quantiles {
            match &q.point {
                Some(x) => s.push_str(&format!(
                    "q_hat(alpha = {} | x = [{}]) = {:.6}\n",
                    q.alpha,
                    format_point(x),
                    q.value
                )),
                None => s.push_str(&format!("q_hat(alpha = {}) = {:.6}\n", q.alpha, q.value)),
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_points() -> SampleSet {
        SampleSet::from_pairs(&[0.1, 0.2, 0.3, 0.4], &[1.0, 2.0, 4.0, 8.0]).unwrap()
    }

    #[test]
    fn top_k_takes_k_plus_first_order_statistic() {
        let r = resolve_threshold(&four_points(), ThresholdSpec::TopK(2)).unwrap();
        assert_eq!(r.level, 2.0);
        assert_eq!(r.exceedances, 2);
        assert_eq!(r.p_hat, 0.5);
        assert!(!r.tied);
    }

    #[test]
    fn fixed_level_above_data_resolves_with_zero_exceedances() {
        let s = four_points();
        let r = resolve_threshold(&s, ThresholdSpec::FixedLevel(10.0)).unwrap();
        assert_eq!(r.exceedances, 0);
        assert_eq!(hill_estimate(&s, &r), Err(Error::NoExceedances { level: 10.0 }));
        assert!(weissman_quantile(&r, 0.5, 0.01).is_err());
        assert!(integrated_skedasis_estimate(&s, &r, &[0.5]).is_err());
    }

    #[test]
    fn ties_at_the_order_statistic_are_flagged() {
        let s = SampleSet::from_pairs(&[0.1, 0.2, 0.3], &[3.0, 3.0, 3.0]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::TopK(1)).unwrap();
        assert_eq!(r.level, 3.0);
        assert_eq!(r.exceedances, 0);
        assert!(r.tied);
        // enumeration: k = 1 of {1, 3, 3, 5} → y_n = 3, one exceedance, no tie flag
        let s = SampleSet::from_pairs(&[0.0; 4], &[1.0, 3.0, 3.0, 5.0]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::TopK(1)).unwrap();
        assert_eq!((r.level, r.exceedances, r.tied), (3.0, 1, false));
        let r = resolve_threshold(&s, ThresholdSpec::TopK(2)).unwrap();
        assert_eq!((r.level, r.exceedances, r.tied), (3.0, 1, true));
    }

    #[test]
    fn invalid_top_k() {
        let s = four_points();
        assert_eq!(
            resolve_threshold(&s, ThresholdSpec::TopK(4)),
            Err(Error::InvalidTopK { k: 4, n: 4 })
        );
        assert!(resolve_threshold(&s, ThresholdSpec::TopK(0)).is_err());
    }

    #[test]
    fn hill_examples() {
        let s = four_points();
        let r = resolve_threshold(&s, ThresholdSpec::TopK(2)).unwrap();
        let g = hill_estimate(&s, &r).unwrap();
        assert!((g - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!((g - 1.039_72).abs() < 1e-5);

        let yn = 3.0;
        let e = std::f64::consts::E;
        let s = SampleSet::from_pairs(&[0.0, 0.0, 0.0], &[1.0, yn * e, yn * e.powi(3)]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::FixedLevel(yn)).unwrap();
        assert!((hill_estimate(&s, &r).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hill_scale_invariance() {
        let s = four_points();
        let r = resolve_threshold(&s, ThresholdSpec::TopK(2)).unwrap();
        let g = hill_estimate(&s, &r).unwrap();
        let scaled = s.scale_responses(7.0);
        let g7 = hill_estimate(&scaled, &r.scaled(7.0)).unwrap();
        assert!((g - g7).abs() < 1e-12);
    }

    #[test]
    fn integrated_skedasis_examples() {
        let s = SampleSet::from_pairs(&[0.2, 0.8, 0.5], &[5.0, 7.0, 1.0]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::FixedLevel(4.0)).unwrap();
        assert_eq!(integrated_skedasis_estimate(&s, &r, &[0.5]).unwrap(), 0.5);
        assert_eq!(integrated_skedasis_estimate(&s, &r, &[0.1]).unwrap(), 0.0);
        assert_eq!(integrated_skedasis_estimate(&s, &r, &[0.9]).unwrap(), 1.0);
    }

    #[test]
    fn kernel_skedasis_examples() {
        let s = SampleSet::from_pairs(&[0.1, 0.2, 0.9, 0.95], &[10.0, 1.0, 10.0, 1.0]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::FixedLevel(5.0)).unwrap();
        assert_eq!(kernel_skedasis_estimate(&s, &r, &[0.15], 0.1).unwrap(), 1.0);
        assert_eq!(kernel_skedasis_estimate(&s, &r, &[0.5], 10.0).unwrap(), 1.0);
        // window holds only X = 0.2, which does not exceed
        assert_eq!(kernel_skedasis_estimate(&s, &r, &[0.22], 0.05).unwrap(), 0.0);
    }

    #[test]
    fn empty_window_reports_needed_bandwidth() {
        let s = SampleSet::from_pairs(&[0.1, 0.9], &[10.0, 1.0]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::FixedLevel(5.0)).unwrap();
        match kernel_skedasis_estimate(&s, &r, &[0.5], 0.1) {
            Err(Error::EmptyWindow { min_bandwidth }) => {
                assert!((min_bandwidth - 0.4).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        // window is strict: h equal to the distance still excludes the point
        let s = SampleSet::from_pairs(&[0.25, 0.9], &[10.0, 1.0]).unwrap();
        let r = resolve_threshold(&s, ThresholdSpec::FixedLevel(5.0)).unwrap();
        assert!(kernel_skedasis_estimate(&s, &r, &[0.5], 0.25).is_err());
    }

    #[test]
    fn weissman_examples() {
        let r = ThresholdResolution {
            level: 10.0,
            exceedances: 5,
            n: 100,
            p_hat: 0.05,
            tied: false,
        };
        let q = weissman_quantile(&r, 0.5, 0.005).unwrap();
        assert!((q - 10.0 * 10f64.sqrt()).abs() < 1e-9);
        assert!((q - 31.6228).abs() < 1e-4);
        assert_eq!(weissman_quantile(&r, 0.5, 0.05).unwrap(), 10.0);
        assert!(weissman_quantile(&r, 0.5, 0.001).unwrap() > q);
        assert!(weissman_quantile(&r, 0.5, 1.0).is_err());
        assert!(weissman_quantile(&r, 0.5, 0.0).is_err());

        let c = conditional_extreme_quantile(&r, 0.5, 2.0, 0.005).unwrap();
        assert!((c - 10.0 * 20f64.sqrt()).abs() < 1e-9);
        assert!((c - 44.7214).abs() < 1e-4);
        assert_eq!(
            conditional_extreme_quantile(&r, 0.5, 1.0, 0.005).unwrap(),
            weissman_quantile(&r, 0.5, 0.005).unwrap()
        );
        assert!(matches!(
            conditional_extreme_quantile(&r, 0.5, 0.0, 0.005),
            Err(Error::EstimationFailure(_))
        ));
    }

    #[test]
    fn report_rows() {
        let s = four_points();
        let report = estimate(
            &s,
            &EstimateRequest {
                threshold: ThresholdSpec::TopK(2),
                bandwidth: 1.0,
                points: vec![vec![0.35]],
                alphas: vec![0.01],
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("quantity,point,value\n"));
        assert!(text.contains("gamma_hat,,1.0397"));
        assert!(text.contains("sigma_hat,0.35,1\n"));
        assert!(text.contains("C_hat,0.35,0.5\n"));
        assert!(text.contains("q_hat[alpha=0.01],0.35,"));
        assert!(report.summary().contains("gamma_hat = 1.039721"));
    }
}

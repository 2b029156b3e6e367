//! Replication engine for the asymptotic-normality checks.
//!
//! Every replication `r` draws its sample from a ChaCha8 stream derived from
//! `(root seed, r)`, so reports are bit-identical however rayon schedules the
//! work. Each statistic is standardized to a unit-variance Gaussian target:
//!
//! * `gamma`: `√N_n (γ̂ − γ) / γ`
//! * `integratedC`: `√N_n (Ĉ_n(x) − C(x)) / √(C(x)(1 − C(x)))`
//! * `skedasis`: `√(n p̂ V_h f(x)) (σ̂(x) − σ(x)) / √σ(x)` with `V_h = (2h)^d`
//! * `quantile`: `√(n p̂) / log(p̂/α_n) · log(q̂(α_n|x) / q(α_n|x)) / γ`

pub mod diagnostics;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{format_point, KeyValues};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    conditional_extreme_quantile, hill_estimate, integrated_skedasis_estimate,
    kernel_skedasis_estimate, resolve_threshold, ThresholdResolution, ThresholdSpec,
};
use crate::model::{SampleSet, TailModel};

pub use diagnostics::{normal_cdf, normality_diagnostics, NormalityDiagnostics};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;
/// Minimal expected exceedance count `n p_n`.
pub const MIN_EXCEEDANCES: f64 = 50.0;
/// Minimal expected in-window exceedance count `n p_n V_h`.
pub const MIN_WINDOW_EXCEEDANCES: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Gamma,
    IntegratedC,
    Skedasis,
    Quantile,
}

impl ExperimentKind {
    pub fn uses_point(self) -> bool {
        !matches!(self, ExperimentKind::Gamma)
    }

    pub fn uses_kernel(self) -> bool {
        matches!(self, ExperimentKind::Skedasis | ExperimentKind::Quantile)
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "integratedC" | "integrated-c" => Ok(Self::IntegratedC),
            "skedasis" => Ok(Self::Skedasis),
            "quantile" => Ok(Self::Quantile),
            other => Err(invalid(
                "validate.kinds",
                format!("unknown experiment `{other}` (gamma|integratedC|skedasis|quantile)"),
            )),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gamma => "gamma",
            Self::IntegratedC => "integratedC",
            Self::Skedasis => "skedasis",
            Self::Quantile => "quantile",
        })
    }
}

/// Default tuning sequences for sample size `n` in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub p_n: f64,
    pub bandwidth: f64,
    pub alpha_n: f64,
}

/// `p_n = n^{-1/2}` raised so that `n p_n ≥ 100`; `h_n = n^{-1/5}` widened so
/// that `n p_n (2h)^d ≥ 50`; `α_n = p_n²`.
pub fn default_schedule(n: usize, dim: usize) -> Schedule {
    let nf = n as f64;
    let p_n = nf.powf(-0.5).max(100.0 / nf).min(1.0);
    let mut bandwidth = nf.powf(-0.2);
    if nf * p_n * (2.0 * bandwidth).powi(dim as i32) < MIN_WINDOW_EXCEEDANCES {
        bandwidth = (MIN_WINDOW_EXCEEDANCES / (nf * p_n)).powf(1.0 / dim as f64) / 2.0;
    }
    Schedule {
        p_n,
        bandwidth,
        alpha_n: p_n * p_n,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub model: TailModel,
    pub n: usize,
    pub threshold: ThresholdSpec,
    pub bandwidth: Option<f64>,
    pub alpha_n: Option<f64>,
    pub points: Vec<Vec<f64>>,
    pub replications: usize,
    pub seed: u64,
}

/// One rate-sanity proxy and its required minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub name: &'static str,
    pub value: f64,
    pub minimum: f64,
}

impl RateCheck {
    pub fn holds(&self) -> bool {
        self.value >= self.minimum
    }
}

impl McConfig {
    /// Reads model keys plus `mc.n`, `mc.replications`, `seed`, `threshold.*`,
    /// `mc.bandwidth`, `mc.alpha` and `mc.x`. Missing tuning values fall back
    /// to [`default_schedule`].
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let model = TailModel::from_key_values(kv)?;
        let n: usize = kv.require_parsed("mc.n")?;
        if n == 0 {
            return Err(invalid("mc.n", "must be positive"));
        }
        let schedule = default_schedule(n, model.dim());
        let threshold = match ThresholdSpec::from_key_values(kv, Some(&model))? {
            Some(t) => t,
            None => ThresholdSpec::FixedLevel(model.tail_level(schedule.p_n)?),
        };
        let points = kv.points("mc.x")?.unwrap_or_default();
        for p in &points {
            if p.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: p.len(),
                });
            }
        }
        Ok(Self {
            n,
            threshold,
            bandwidth: Some(kv.parsed_or("mc.bandwidth", schedule.bandwidth)?),
            alpha_n: Some(kv.parsed_or("mc.alpha", schedule.alpha_n)?),
            points,
            replications: kv.require_parsed("mc.replications")?,
            seed: kv.parsed_or("seed", 0)?,
            model,
        })
    }

    /// Target exceedance probability `p_n` implied by the threshold spec.
    pub fn exceedance_probability(&self) -> f64 {
        match self.threshold {
            ThresholdSpec::FixedLevel(y) => self.model.tail_probability(y),
            ThresholdSpec::TopK(k) => k as f64 / self.n as f64,
        }
    }

    pub fn window_volume(&self) -> Option<f64> {
        self.bandwidth
            .map(|h| (2.0 * h).powi(self.model.dim() as i32))
    }

    pub fn rate_checks(&self, kind: ExperimentKind) -> Vec<RateCheck> {
        let np = self.n as f64 * self.exceedance_probability();
        let mut checks = vec![RateCheck {
            name: "n*p_n",
            value: np,
            minimum: MIN_EXCEEDANCES,
        }];
        if kind.uses_kernel() {
            checks.push(RateCheck {
                name: "n*p_n*V_h",
                value: np * self.window_volume().unwrap_or(0.0),
                minimum: MIN_WINDOW_EXCEEDANCES,
            });
        }
        checks
    }

    pub fn check_rates(&self, kind: ExperimentKind) -> Result<()> {
        match self.rate_checks(kind).into_iter().find(|c| !c.holds()) {
            Some(c) => Err(Error::Precondition {
                name: c.name.to_string(),
                value: c.value,
                minimum: c.minimum,
            }),
            None => Ok(()),
        }
    }

    fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if self.replications < 2 {
            return Err(invalid("mc.replications", "need at least 2 replications"));
        }
        if self.n == 0 {
            return Err(invalid("mc.n", "must be positive"));
        }
        if kind.uses_point() && self.points.is_empty() {
            return Err(Error::MissingKey("mc.x".into()));
        }
        if kind.uses_kernel() && !self.bandwidth.is_some_and(|h| h > 0.0) {
            return Err(invalid("mc.bandwidth", "kernel experiments need a positive bandwidth"));
        }
        if kind == ExperimentKind::Quantile && !self.alpha_n.is_some_and(|a| a > 0.0 && a < 1.0) {
            return Err(invalid("mc.alpha", "quantile experiments need alpha in (0, 1)"));
        }
        for x in &self.points {
            if x.len() != self.model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.model.dim(),
                    got: x.len(),
                });
            }
            match kind {
                ExperimentKind::IntegratedC => {
                    let c = self.model.true_integrated_skedasis(x);
                    if !(c > 0.0 && c < 1.0) {
                        return Err(invalid("mc.x", format!("C(x) = {c} has zero variance")));
                    }
                }
                ExperimentKind::Skedasis | ExperimentKind::Quantile => {
                    if self.model.covariates().density(x).is_none_or(|f| f <= 0.0) {
                        return Err(invalid(
                            "mc.x",
                            "kernel experiments need a positive covariate density at x",
                        ));
                    }
                    if !(self.model.sigma(x) > 0.0) {
                        return Err(invalid("mc.x", "σ(x) must be positive"));
                    }
                    if kind == ExperimentKind::Quantile {
                        self.model
                            .true_conditional_quantile(x, self.alpha_n.unwrap_or(0.0))?;
                    }
                }
                ExperimentKind::Gamma => {}
            }
        }
        Ok(())
    }
}

/// Pass thresholds for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Criteria {
    pub max_abs_mean: Option<f64>,
    pub variance_range: Option<(f64, f64)>,
    pub min_ks_p: Option<f64>,
    pub max_failure_rate: f64,
}

impl Criteria {
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let (max_abs_mean, variance_range, min_ks_p) = match kind {
            ExperimentKind::Gamma => (Some(0.1), Some((0.85, 1.15)), Some(0.01)),
            ExperimentKind::IntegratedC => (None, Some((0.8, 1.2)), None),
            ExperimentKind::Skedasis => (None, Some((0.8, 1.2)), Some(0.01)),
            ExperimentKind::Quantile => (Some(0.15), Some((0.75, 1.25)), None),
        };
        Self {
            max_abs_mean,
            variance_range,
            min_ks_p,
            max_failure_rate: MAX_FAILURE_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub name: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub kind: ExperimentKind,
    pub point: Option<Vec<f64>>,
    /// Indices of the successful replications, aligned with `statistics`.
    pub replication_ids: Vec<usize>,
    pub statistics: Vec<f64>,
    pub replications: usize,
    pub failures: usize,
    pub diagnostics: Option<NormalityDiagnostics>,
    pub target_variance: f64,
    /// Median `|q̂/q − 1|` (quantile experiments).
    pub median_abs_relative_error: Option<f64>,
    pub outcomes: Vec<CriterionOutcome>,
}

impl McReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.replications as f64
    }

    pub fn label(&self) -> String {
        match &self.point {
            Some(x) => format!("{} at x = [{}]", self.kind, format_point(x)),
            None => self.kind.to_string(),
        }
    }

    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut m = vec![
            ("replications".to_string(), self.replications as f64),
            ("failures".to_string(), self.failures as f64),
            ("target_variance".to_string(), self.target_variance),
        ];
        if let Some(d) = &self.diagnostics {
            m.push(("mean".into(), d.mean));
            m.push(("variance".into(), d.variance));
            m.push(("skewness".into(), d.skewness));
            m.push(("ks_distance".into(), d.ks_distance));
            m.push(("ks_p".into(), d.ks_p));
        }
        if let Some(e) = self.median_abs_relative_error {
            m.push(("median_abs_relative_error".into(), e));
        }
        for o in &self.outcomes {
            m.push((format!("pass[{}]", o.name), if o.passed { 1.0 } else { 0.0 }));
        }
        m.push(("pass".into(), if self.passed() { 1.0 } else { 0.0 }));
        m
    }

    /// Summary CSV `metric,value`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.metrics() {
            w.write_record([k.as_str(), &v.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Raw CSV `replication,statistic`.
    pub fn write_raw_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["replication", "statistic"])?;
        for (r, s) in self.replication_ids.iter().zip(&self.statistics) {
            w.write_record([r.to_string(), s.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Sample of replication `r`, drawn from stream `r` of the root seed.
pub fn replication_sample(cfg: &McConfig, r: usize) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64);
    cfg.model.sample_with_rng(cfg.n, &mut rng)
}

/// Standardized statistic (and `|q̂/q − 1|` for quantiles) at one point.
fn standardized(
    cfg: &McConfig,
    kind: ExperimentKind,
    sample: &SampleSet,
    res: &ThresholdResolution,
    x: Option<&[f64]>,
) -> Result<(f64, Option<f64>)> {
    let model = &cfg.model;
    let n = sample.len() as f64;
    let root_n = (res.exceedances as f64).sqrt();
    match kind {
        ExperimentKind::Gamma => {
            let g = hill_estimate(sample, res)?;
            Ok((root_n * (g - model.gamma()) / model.gamma(), None))
        }
        ExperimentKind::IntegratedC => {
            let x = x.expect("point");
            let c = model.true_integrated_skedasis(x);
            let c_hat = integrated_skedasis_estimate(sample, res, x)?;
            Ok((root_n * (c_hat - c) / (c * (1.0 - c)).sqrt(), None))
        }
        ExperimentKind::Skedasis => {
            let x = x.expect("point");
            let h = cfg.bandwidth.expect("bandwidth");
            let sigma = model.sigma(x);
            let f = model.covariates().density(x).expect("density");
            let volume = cfg.window_volume().expect("bandwidth");
            let s_hat = kernel_skedasis_estimate(sample, res, x, h)?;
            Ok(((n * res.p_hat * volume * f).sqrt() * (s_hat - sigma) / sigma.sqrt(), None))
        }
        ExperimentKind::Quantile => {
            let x = x.expect("point");
            let h = cfg.bandwidth.expect("bandwidth");
            let alpha = cfg.alpha_n.expect("alpha");
            let g = hill_estimate(sample, res)?;
            let s_hat = kernel_skedasis_estimate(sample, res, x, h)?;
            let q_hat = conditional_extreme_quantile(res, g, s_hat, alpha)?;
            let q = model.true_conditional_quantile(x, alpha)?;
            let log_extrapolation = (res.p_hat / alpha).ln();
            if !(log_extrapolation > 0.0) {
                return Err(Error::EstimationFailure(format!(
                    "p_hat = {} does not exceed alpha = {alpha}",
                    res.p_hat
                )));
            }
            let stat = (n * res.p_hat).sqrt() / log_extrapolation * (q_hat / q).ln()
                / model.gamma();
            Ok((stat, Some((q_hat / q - 1.0).abs())))
        }
    }
}

type ReplicationResult = Vec<Result<(f64, Option<f64>)>>;

fn replicate(cfg: &McConfig, kind: ExperimentKind, r: usize) -> ReplicationResult {
    let sample = replication_sample(cfg, r);
    let slots = if kind.uses_point() { cfg.points.len() } else { 1 };
    let res = match resolve_threshold(&sample, cfg.threshold)
        .and_then(|res| res.require_exceedances().map(|_| res))
    {
        Ok(res) => res,
        Err(e) => return vec![Err(e); slots],
    };
    if kind.uses_point() {
        cfg.points
            .iter()
            .map(|x| standardized(cfg, kind, &sample, &res, Some(x)))
            .collect()
    } else {
        vec![standardized(cfg, kind, &sample, &res, None)]
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

fn judge(criteria: &Criteria, report: &McReport) -> Vec<CriterionOutcome> {
    let mut out = vec![CriterionOutcome {
        name: "failure_rate".into(),
        value: report.failure_rate(),
        passed: report.failure_rate() <= criteria.max_failure_rate,
    }];
    let d = report.diagnostics;
    if let Some(max) = criteria.max_abs_mean {
        let v = d.map_or(f64::NAN, |d| d.mean);
        out.push(CriterionOutcome {
            name: "abs_mean".into(),
            value: v.abs(),
            passed: v.abs() <= max,
        });
    }
    if let Some((lo, hi)) = criteria.variance_range {
        let v = d.map_or(f64::NAN, |d| d.variance);
        out.push(CriterionOutcome {
            name: "variance".into(),
            value: v,
            passed: v >= lo && v <= hi,
        });
    }
    if let Some(min) = criteria.min_ks_p {
        let v = d.map_or(f64::NAN, |d| d.ks_p);
        out.push(CriterionOutcome {
            name: "ks_p".into(),
            value: v,
            passed: v > min,
        });
    }
    out
}

/// Run with the default pass thresholds of `kind`.
pub fn run_experiment(cfg: &McConfig, kind: ExperimentKind) -> Result<Vec<McReport>> {
    run_experiment_with(cfg, kind, &Criteria::for_kind(kind))
}

/// One report per evaluation point (a single report for `gamma`).
/// Estimator failures inside a replication are counted, not propagated.
pub fn run_experiment_with(
    cfg: &McConfig,
    kind: ExperimentKind,
    criteria: &Criteria,
) -> Result<Vec<McReport>> {
    cfg.validate(kind)?;
    let per_rep: Vec<ReplicationResult> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| replicate(cfg, kind, r))
        .collect();
    let slots: Vec<Option<Vec<f64>>> = if kind.uses_point() {
        cfg.points.iter().cloned().map(Some).collect()
    } else {
        vec![None]
    };
    let mut reports = Vec::with_capacity(slots.len());
    for (slot, point) in slots.into_iter().enumerate() {
        let mut ids = Vec::new();
        let mut stats = Vec::new();
        let mut rel_errors = Vec::new();
        let mut failures = 0;
        for (r, rep) in per_rep.iter().enumerate() {
            match &rep[slot] {
                Ok((s, rel)) if s.is_finite() => {
                    ids.push(r);
                    stats.push(*s);
                    rel_errors.extend(rel);
                }
                Ok(_) => failures += 1,
                Err(e) => {
                    log::debug!("replication {r} failed: {e}");
                    failures += 1;
                }
            }
        }
        let mut report = McReport {
            kind,
            point,
            diagnostics: normality_diagnostics(&stats).ok(),
            replication_ids: ids,
            statistics: stats,
            replications: cfg.replications,
            failures,
            target_variance: 1.0,
            median_abs_relative_error: median(&mut rel_errors),
            outcomes: Vec::new(),
        };
        report.outcomes = judge(criteria, &report);
        reports.push(report);
    }
    Ok(reports)
}

//! Proportional-tail data-generating processes.
//!
//! Given `X = x` the response has conditional tail
//! `F̄_x(y) = σ(x) · F̄_base(y)` for `y ≥ y0` and a uniform body on `[0, y0)`
//! carrying the remaining mass `1 − σ(x) F̄_base(y0)`. Because `σ` integrates
//! to one against `P_X`, the unconditional tail above `y0` is `F̄_base` itself.

mod covariate;
mod sample;
mod skedasis;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{format_list, format_points, KeyValues};
use crate::error::{invalid, Error, Result};

pub use covariate::CovariateSpec;
pub(crate) use covariate::sample_index;
pub use sample::{Provenance, SampleSet};
pub use skedasis::{normalize_skedasis, RawSkedasis, SkedasisFamily, SkedasisSpec};

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

/// Baseline tail above `y = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailFamily {
    /// `F̄(y) = y^{-α}`.
    ExactPareto,
    /// `F̄(y) = y^{-α} (1 + c y^{-β}) / (1 + c)`.
    Hall { beta: f64, c: f64 },
}

impl fmt::Display for TailFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailFamily::ExactPareto => f.write_str("pareto"),
            TailFamily::Hall { .. } => f.write_str("hall"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailModel {
    gamma: f64,
    alpha: f64,
    y0: f64,
    tail: TailFamily,
    skedasis: SkedasisSpec,
    covariates: CovariateSpec,
}

impl TailModel {
    pub fn new(
        gamma: f64,
        y0: f64,
        tail: TailFamily,
        skedasis: RawSkedasis,
        covariates: CovariateSpec,
    ) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(invalid("gamma", format!("must be positive and finite, got {gamma}")));
        }
        if !(y0 >= 1.0) || !y0.is_finite() {
            return Err(invalid("y0", format!("must be finite and at least 1, got {y0}")));
        }
        if let TailFamily::Hall { beta, c } = tail {
            if !(beta > 0.0) || !beta.is_finite() {
                return Err(invalid("tail.beta", format!("must be positive, got {beta}")));
            }
            if !(0.0..1.0).contains(&c) {
                return Err(invalid("tail.c", format!("must lie in [0, 1), got {c}")));
            }
        }
        let skedasis = normalize_skedasis(skedasis, &covariates)?;
        let model = Self {
            gamma,
            alpha: 1.0 / gamma,
            y0,
            tail,
            skedasis,
            covariates,
        };
        let top_mass = model.skedasis.sup() * model.base_tail(y0);
        if top_mass > 1.0 + 1e-12 {
            return Err(invalid(
                "y0",
                format!(
                    "sup σ · F̄(y0) = {top_mass} exceeds 1; raise y0 or flatten the skedasis"
                ),
            ));
        }
        Ok(model)
    }

    /// Exact Pareto tail, `σ ≡ 1`, uniform covariate on `[0, 1]`.
    pub fn pareto(gamma: f64, y0: f64) -> Result<Self> {
        Self::new(
            gamma,
            y0,
            TailFamily::ExactPareto,
            RawSkedasis::new(SkedasisFamily::Constant, vec![]),
            CovariateSpec::uniform(1)?,
        )
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let gamma: f64 = kv.require_parsed("gamma")?;
        let y0: f64 = kv.parsed_or("y0", 1.0)?;
        let tail = match kv.get("tail.family").unwrap_or("pareto") {
            "pareto" | "exact-pareto" => TailFamily::ExactPareto,
            "hall" => TailFamily::Hall {
                beta: kv.require_parsed("tail.beta")?,
                c: kv.require_parsed("tail.c")?,
            },
            other => {
                return Err(invalid(
                    "tail.family",
                    format!("unknown family `{other}` (pareto|hall)"),
                ))
            }
        };
        let family = SkedasisFamily::from_str(kv.get("skedasis.family").unwrap_or("constant"))?;
        let params = kv.list_f64("skedasis.params")?.unwrap_or_default();
        let dim: Option<usize> = kv.parsed("covariate.dim")?;
        let covariates = match kv.get("covariate.kind").unwrap_or("uniform") {
            "uniform" => CovariateSpec::uniform(dim.unwrap_or(1))?,
            "discrete" => {
                let points = kv
                    .points("covariate.points")?
                    .ok_or_else(|| Error::MissingKey("covariate.points".into()))?;
                let probs = kv
                    .list_f64("covariate.probs")?
                    .ok_or_else(|| Error::MissingKey("covariate.probs".into()))?;
                let cov = CovariateSpec::discrete(points, probs)?;
                if let Some(d) = dim {
                    if d != cov.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: cov.dim(),
                        });
                    }
                }
                cov
            }
            other => {
                return Err(invalid(
                    "covariate.kind",
                    format!("unknown kind `{other}` (uniform|discrete)"),
                ))
            }
        };
        Self::new(gamma, y0, tail, RawSkedasis::new(family, params), covariates)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("gamma", self.gamma);
        kv.set("y0", self.y0);
        kv.set("tail.family", self.tail);
        if let TailFamily::Hall { beta, c } = self.tail {
            kv.set("tail.beta", beta);
            kv.set("tail.c", c);
        }
        kv.set("skedasis.family", self.skedasis.family());
        kv.set("skedasis.params", format_list(self.skedasis.params()));
        kv.set("covariate.dim", self.covariates.dim());
        match &self.covariates {
            CovariateSpec::UniformBox { .. } => kv.set("covariate.kind", "uniform"),
            CovariateSpec::Discrete { points, probs } => {
                kv.set("covariate.kind", "discrete");
                kv.set("covariate.points", format_points(points));
                kv.set("covariate.probs", format_list(probs));
            }
        }
        kv
    }

    /// Short stable identifier derived from the canonical key=value form.
    pub fn model_id(&self) -> String {
        let digest = Sha256::digest(self.to_key_values().to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Tail exponent, stored as `1 / gamma`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn tail_family(&self) -> TailFamily {
        self.tail
    }

    pub fn skedasis(&self) -> &SkedasisSpec {
        &self.skedasis
    }

    pub fn covariates(&self) -> &CovariateSpec {
        &self.covariates
    }

    pub fn dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn sigma(&self, x: &[f64]) -> f64 {
        self.skedasis.value(x)
    }

    /// Baseline tail `F̄_base(y)`; equal to 1 below `y = 1`.
    pub fn base_tail(&self, y: f64) -> f64 {
        if y <= 1.0 {
            return 1.0;
        }
        let pareto = y.powf(-self.alpha);
        match self.tail {
            TailFamily::ExactPareto => pareto,
            TailFamily::Hall { beta, c } => pareto * (1.0 + c * y.powf(-beta)) / (1.0 + c),
        }
    }

    /// `w ≥ lo` with `F̄_base(w) = s`, for `s ≤ F̄_base(lo)`.
    fn base_tail_inverse_from(&self, s: f64, lo: f64) -> f64 {
        match self.tail {
            TailFamily::ExactPareto => s.powf(-self.gamma).max(lo),
            TailFamily::Hall { .. } => {
                if s >= self.base_tail(lo) {
                    return lo;
                }
                invert_decreasing(|y| self.base_tail(y), s, lo)
            }
        }
    }

    /// Unconditional tail `F̄(y) = P(Y > y)`.
    pub fn tail_probability(&self, y: f64) -> f64 {
        if y >= self.y0 {
            self.base_tail(y)
        } else if y < 0.0 {
            1.0
        } else {
            1.0 - (1.0 - self.base_tail(self.y0)) * y / self.y0
        }
    }

    /// Level `y ≥ y0` with `F̄(y) = p`; requires `0 < p ≤ F̄(y0)`.
    pub fn tail_level(&self, p: f64) -> Result<f64> {
        let max_level = self.base_tail(self.y0);
        if !(p > 0.0) || p > max_level {
            return Err(Error::BodyRegime { level: p, max_level });
        }
        Ok(self.base_tail_inverse_from(p, self.y0))
    }

    /// Conditional tail mass above the body cutoff, `σ(x) F̄_base(y0)`.
    fn tail_mass(&self, sigma: f64) -> f64 {
        sigma * self.base_tail(self.y0)
    }

    fn tail_given_sigma(&self, sigma: f64, y: f64) -> f64 {
        if y >= self.y0 {
            sigma * self.base_tail(y)
        } else if y < 0.0 {
            1.0
        } else {
            1.0 - (1.0 - self.tail_mass(sigma)) * y / self.y0
        }
    }

    /// `F̄_x(y) = P(Y > y | X = x)`.
    pub fn conditional_tail(&self, x: &[f64], y: f64) -> Result<f64> {
        self.covariates.check_point(x)?;
        Ok(self.tail_given_sigma(self.sigma(x), y))
    }

    /// `U_x(t) = F_x^←(1 − 1/t)` on the tail branch `t ≥ 1 / F̄_x(y0)`.
    pub fn conditional_tail_quantile(&self, x: &[f64], t: f64) -> Result<f64> {
        self.covariates.check_point(x)?;
        let sigma = self.sigma(x);
        let min_t = 1.0 / self.tail_mass(sigma);
        if !(t >= min_t) {
            return Err(Error::BelowTailBranch { t, min_t });
        }
        Ok(self.tail_quantile_given_sigma(sigma, t))
    }

    pub(crate) fn tail_quantile_given_sigma(&self, sigma: f64, t: f64) -> f64 {
        match self.tail {
            TailFamily::ExactPareto => (t * sigma).powf(self.gamma).max(self.y0),
            TailFamily::Hall { .. } => self.base_tail_inverse_from(1.0 / (t * sigma), self.y0),
        }
    }

    /// Inverse conditional cdf at `u ∈ [0, 1)` for a covariate with skedasis value `sigma`.
    pub(crate) fn quantile_given_sigma(&self, sigma: f64, u: f64) -> f64 {
        let body = 1.0 - self.tail_mass(sigma);
        if u < body {
            return u / body * self.y0;
        }
        let v = 1.0 - u;
        match self.tail {
            TailFamily::ExactPareto => (sigma / v).powf(self.gamma).max(self.y0),
            TailFamily::Hall { .. } => self.base_tail_inverse_from(v / sigma, self.y0),
        }
    }

    pub(crate) fn cdf_given_sigma(&self, sigma: f64, y: f64) -> f64 {
        1.0 - self.tail_given_sigma(sigma, y)
    }

    /// Second-order rate `A(t)`.
    ///
    /// For the hall family the regular-variation ratio at `y` is
    /// `c y^{-β} |z^{-β} − 1| / (1 + c y^{-β})`, whose supremum over `z > 1/2`
    /// is `c y^{-β} max(2^β − 1, 1) / (1 + c y^{-β})`. Plugging
    /// `y ≈ (t / (1 + c))^{1/α}` gives `A(t) = c κ t^{-β/α}` with
    /// `κ = max(2^β − 1, 1) (1 + c)^{β/α}`.
    pub fn second_order_rate(&self, t: f64) -> f64 {
        match self.tail {
            TailFamily::ExactPareto => 0.0,
            TailFamily::Hall { beta, c } => {
                let kappa = (2f64.powf(beta) - 1.0).max(1.0) * (1.0 + c).powf(beta / self.alpha);
                c * kappa * t.powf(-beta / self.alpha)
            }
        }
    }

    /// `q(a | x) = F_x^←(1 − a)` in the tail regime.
    pub fn true_conditional_quantile(&self, x: &[f64], a: f64) -> Result<f64> {
        self.covariates.check_point(x)?;
        let max_level = self.tail_mass(self.sigma(x));
        if !(a > 0.0) || a > max_level {
            return Err(Error::BodyRegime { level: a, max_level });
        }
        self.conditional_tail_quantile(x, 1.0 / a)
    }

    /// `C(x) = ∫_{u ≤ x} σ(u) P_X(du)`.
    pub fn true_integrated_skedasis(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        self.skedasis.integrated(&self.covariates, x)
    }

    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(invalid("n", "sample size must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.sample_with_rng(n, &mut rng).with_provenance(Provenance {
            seed,
            model_id: self.model_id(),
        }))
    }

    pub fn sample_with_rng<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SampleSet {
        let dim = self.dim();
        let mut xs = Vec::with_capacity(n * dim);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            self.covariates.sample(rng, &mut xs);
            let sigma = self.sigma(&xs[i * dim..]);
            let u: f64 = rng.random();
            ys.push(self.quantile_given_sigma(sigma, u));
        }
        SampleSet::from_parts_unchecked(dim, xs, ys)
    }
}

/// Bisection for `f(w) = target` with `f` decreasing and `f(lo) ≥ target`.
/// The upper bracket starts at `2 lo` and doubles until it brackets.
fn invert_decreasing(f: impl Fn(f64) -> f64, target: f64, lo: f64) -> f64 {
    let mut lo = lo;
    let mut hi = 2.0 * lo.max(1.0);
    while f(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hall() -> TailModel {
        TailModel::new(
            0.5,
            1.0,
            TailFamily::Hall { beta: 1.0, c: 0.5 },
            RawSkedasis::new(SkedasisFamily::Constant, vec![]),
            CovariateSpec::uniform(1).unwrap(),
        )
        .unwrap()
    }

    fn two_x(y0: f64) -> TailModel {
        TailModel::new(
            0.5,
            y0,
            TailFamily::ExactPareto,
            RawSkedasis::new(SkedasisFamily::Affine, vec![0.0, 1.0]),
            CovariateSpec::uniform(1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn alpha_is_reciprocal_gamma() {
        for g in [0.25, 0.5, 1.0, 2.0] {
            let m = TailModel::pareto(g, 1.0).unwrap();
            assert_eq!(m.alpha() * m.gamma(), 1.0);
        }
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(TailModel::pareto(0.0, 1.0).is_err());
        assert!(TailModel::pareto(-1.0, 1.0).is_err());
        assert!(TailModel::pareto(0.5, 0.5).is_err());
        // sup σ = 2 with F̄(1) = 1 leaves no room for a body
        assert!(matches!(
            TailModel::new(
                0.5,
                1.0,
                TailFamily::ExactPareto,
                RawSkedasis::new(SkedasisFamily::Affine, vec![0.0, 1.0]),
                CovariateSpec::uniform(1).unwrap(),
            ),
            Err(Error::InvalidParameter { ref field, .. }) if field == "y0"
        ));
        assert!(TailModel::new(
            0.5,
            1.0,
            TailFamily::Hall { beta: 1.0, c: 1.0 },
            RawSkedasis::new(SkedasisFamily::Constant, vec![]),
            CovariateSpec::uniform(1).unwrap(),
        )
        .is_err());
    }

    #[test]
    fn conditional_tail_examples() {
        let m = TailModel::pareto(0.5, 1.0).unwrap();
        assert!((m.conditional_tail(&[0.3], 2.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(m.conditional_tail(&[0.3], 0.0).unwrap(), 1.0);
        assert!(matches!(
            m.conditional_tail(&[1.5], 2.0),
            Err(Error::OutsideSupport { .. })
        ));
    }

    #[test]
    fn hall_tail_matches_closed_form_and_density_integral() {
        let m = hall();
        let closed = 0.25 * 1.25 / 1.5;
        assert!((m.conditional_tail(&[0.5], 2.0).unwrap() - closed).abs() < 1e-12);
        assert!((closed - 0.208_333_333_333).abs() < 1e-9);
        // ∫_2^∞ f(y) dy with f = -dF̄/dy = (α y^{-α-1} + c(α+β) y^{-α-β-1}) / (1 + c),
        // substituting y = 2/u^2 on u ∈ (0, 1] to get a smooth integrand.
        let density = |y: f64| (2.0 * y.powi(-3) + 0.5 * 3.0 * y.powi(-4)) / 1.5;
        let g = |u: f64| if u == 0.0 { 0.0 } else { density(2.0 / (u * u)) * 4.0 / (u * u * u) };
        let m_steps = 2000;
        let h = 1.0 / m_steps as f64;
        let mut simpson = g(0.0) + g(1.0);
        for i in 1..m_steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            simpson += w * g(i as f64 * h);
        }
        simpson *= h / 3.0;
        assert!((simpson - closed).abs() < 1e-10, "{simpson}");
    }

    #[test]
    fn exact_pareto_quantiles() {
        let m = TailModel::pareto(0.5, 1.0).unwrap();
        assert!((m.conditional_tail_quantile(&[0.2], 100.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((m.true_conditional_quantile(&[0.2], 1e-4).unwrap() - 100.0).abs() < 1e-9);

        let m = two_x(2.0);
        assert!((m.sigma(&[1.0]) - 2.0).abs() < 1e-15);
        let u = m.conditional_tail_quantile(&[1.0], 100.0).unwrap();
        assert!((u - 200f64.sqrt()).abs() < 1e-12);
        let a = 1e-4;
        let q = m.true_conditional_quantile(&[1.0], a).unwrap();
        assert!((q - (a / 2.0).powf(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn below_tail_branch_names_minimum() {
        let m = two_x(2.0);
        // σ(0.5) = 1, F̄(2) = 1/4 → minimal t = 4
        match m.conditional_tail_quantile(&[0.5], 3.0) {
            Err(Error::BelowTailBranch { min_t, .. }) => assert!((min_t - 4.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            m.true_conditional_quantile(&[0.5], 0.5),
            Err(Error::BodyRegime { .. })
        ));
    }

    #[test]
    fn hall_quantile_round_trips() {
        let m = hall();
        for t in [1.0, 1.5, 10.0, 1e3, 1e6, 1e10] {
            let w = m.conditional_tail_quantile(&[0.4], t).unwrap();
            assert!((m.conditional_tail(&[0.4], w).unwrap() - 1.0 / t).abs() < 1e-10);
        }
        for a in [0.5, 1e-2, 1e-5, 1e-9] {
            let q = m.true_conditional_quantile(&[0.4], a).unwrap();
            assert!((m.conditional_tail(&[0.4], q).unwrap() - a).abs() < 1e-10);
        }
    }

    #[test]
    fn second_order_rate_examples() {
        assert_eq!(TailModel::pareto(0.5, 1.0).unwrap().second_order_rate(50.0), 0.0);
        let m = hall();
        let ratio = m.second_order_rate(100.0) / m.second_order_rate(10_000.0);
        assert!((ratio - 10.0).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let t = 10f64.powf(0.25 * k as f64 + 0.01);
            let a = m.second_order_rate(t);
            assert!(a <= prev);
            prev = a;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn regular_variation_error_is_bounded_by_rate() {
        // grid-search oracle over z ∈ [0.5, 100] at y = U(t)
        let m = hall();
        let mut ratios = Vec::new();
        for t in [1e2, 1e3, 1e4, 1e5] {
            let y = m.tail_level(1.0 / t).unwrap();
            let mut sup: f64 = 0.0;
            for i in 0..=20_000 {
                let z = 0.5 + 99.5 * i as f64 / 20_000.0;
                let r = m.base_tail(z * y) / (z.powf(-m.alpha()) * m.base_tail(y));
                sup = sup.max((r - 1.0).abs());
            }
            ratios.push(sup / m.second_order_rate(t));
        }
        let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(hi <= 1.0 + 1e-9, "{ratios:?}");
        assert!(hi / lo < 1.5, "{ratios:?}");
    }

    #[test]
    fn integrated_skedasis_examples() {
        let m = two_x(2.0);
        assert!((m.true_integrated_skedasis(&[0.5]) - 0.25).abs() < 1e-15);
        assert_eq!(m.true_integrated_skedasis(&[3.0]), 1.0);
        assert_eq!(m.true_integrated_skedasis(&[-0.1]), 0.0);
    }

    #[test]
    fn exact_model_has_zero_proportionality_error() {
        let m = two_x(2.0);
        for &x in &[0.1, 0.5, 0.93] {
            for &y in &[2.0, 3.7, 1e3, 1e8] {
                let r = m.conditional_tail(&[x], y).unwrap() / (m.sigma(&[x]) * m.base_tail(y));
                assert_eq!(r, 1.0);
            }
        }
    }

    #[test]
    fn key_values_round_trip() {
        let kv = KeyValues::parse(
            "gamma = 0.5\ny0 = 2\ntail.family = hall\ntail.beta = 1\ntail.c = 0.5\n\
             skedasis.family = step\nskedasis.params = 0.5, 1, 3\n\
             covariate.kind = discrete\ncovariate.points = 0.25, 0.75\ncovariate.probs = 0.5, 0.5\n",
        )
        .unwrap();
        let m = TailModel::from_key_values(&kv).unwrap();
        let again = TailModel::from_key_values(&m.to_key_values()).unwrap();
        assert_eq!(m, again);
        assert_eq!(m.model_id(), again.model_id());
        assert_eq!(m.model_id().len(), 16);
    }

    #[test]
    fn missing_gamma_is_named() {
        let kv = KeyValues::parse("y0 = 1").unwrap();
        assert_eq!(
            TailModel::from_key_values(&kv).unwrap_err(),
            Error::MissingKey("gamma".into())
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = two_x(2.0);
        let a = m.sample_dataset(500, 9).unwrap();
        let b = m.sample_dataset(500, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.sample_dataset(500, 10).unwrap());
        assert!(m.sample_dataset(0, 1).is_err());
    }
}

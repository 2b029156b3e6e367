//! Coupling between threshold exceedances and the limit model
//! `Q = σ(x) P_X ⊗ Pareto(α)`.
//!
//! Each index `i` draws an exceedance flag `E_i ~ Bernoulli(F̄(y_n))` and a
//! shared `Z_i ~ Pareto(1)`. On `E_i = 1` the covariates `(X̃_i, X*_i)` come
//! from a maximal coupling of `P_{X | Y > y_n}` and `σ P_X`, and
//! `Ỹ_i = U_{X̃_i}(Z_i / F̄_{X̃_i}(y_n))`, `Y*_i = y_n Z_i^{1/α}`. On `E_i = 0`
//! `(X̃_i, Ỹ_i)` is drawn from the law below the threshold and `X*_i` from
//! `σ P_X` independently.
//!
//! Only finite-discrete covariate laws are supported, since both covariate
//! laws must be known exactly to build the maximal coupling.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use rayon::prelude::*;

use crate::config::format_point;
use crate::error::{invalid, Error, Result};
use crate::model::{sample_index, TailModel};
use crate::montecarlo::diagnostics::{chi_square_gof, chi_square_independence, ks_test, two_sample_ks};

const PROB_SUM_TOL: f64 = 1e-12;
/// Float slack added to `M · A_n` when flagging violations.
pub const BOUND_SLACK: f64 = 1e-10;

/// Finite distribution over `points` with matching `probs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution<T> {
    points: Vec<T>,
    probs: Vec<f64>,
}

impl<T: PartialEq> DiscreteDistribution<T> {
    pub fn new(points: Vec<T>, probs: Vec<f64>) -> Result<Self> {
        if points.len() != probs.len() || points.is_empty() {
            return Err(invalid("probs", "need one probability per support point"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("probs", "probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(invalid("probs", format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { points, probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(points: Vec<T>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(invalid("weights", "weights must have a positive finite sum"));
        }
        Self::new(points, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Both distributions re-expressed over the union of their supports,
    /// in first-seen order (points of `self`, then new points of `other`).
    pub fn aligned_with(&self, other: &Self) -> (Self, Self)
    where
        T: Clone,
    {
        let mut points = self.points.clone();
        for x in &other.points {
            if !points.contains(x) {
                points.push(x.clone());
            }
        }
        let spread = |d: &Self| {
            let mut probs = vec![0.0; points.len()];
            for (x, p) in d.points.iter().zip(&d.probs) {
                let i = points.iter().position(|y| y == x).expect("union covers support");
                probs[i] += p;
            }
            Self {
                points: points.clone(),
                probs,
            }
        };
        (spread(self), spread(other))
    }

    fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.points == other.points {
            Ok(())
        } else {
            Err(Error::MisalignedSupports)
        }
    }
}

/// `‖p − q‖_TV = ½ Σ |p_i − q_i|` over the union of both supports.
pub fn total_variation_discrete<T: PartialEq + Clone>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
) -> Result<f64> {
    let (p, q) = p.aligned_with(q);
    Ok(aligned_total_variation(&p, &q))
}

fn aligned_total_variation<T>(p: &DiscreteDistribution<T>, q: &DiscreteDistribution<T>) -> f64 {
    let l1: f64 = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum();
    (0.5 * l1).clamp(0.0, 1.0)
}

/// Precomputed overlap/residual decomposition of a maximal coupling.
///
/// With probability `1 − TV` both outputs share an index drawn from the
/// normalized overlap `min(p_i, q_i)`; otherwise they are drawn independently
/// from the normalized residuals `p − min` and `q − min`, whose supports are
/// disjoint.
#[derive(Debug, Clone)]
pub struct MaximalCoupling {
    overlap: Vec<f64>,
    residual_p: Vec<f64>,
    residual_q: Vec<f64>,
    tv: f64,
}

impl MaximalCoupling {
    /// `p` and `q` must share one support (see [`DiscreteDistribution::aligned_with`]);
    /// drawn indices refer to it.
    pub fn new<T: PartialEq>(p: &DiscreteDistribution<T>, q: &DiscreteDistribution<T>) -> Result<Self> {
        p.check_aligned(q)?;
        let tv = aligned_total_variation(p, q);
        let overlap: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| a.min(*b)).collect();
        let residual_p = p.probs.iter().zip(&overlap).map(|(a, m)| a - m).collect();
        let residual_q = q.probs.iter().zip(&overlap).map(|(b, m)| b - m).collect();
        Ok(Self {
            overlap,
            residual_p,
            residual_q,
            tv,
        })
    }

    pub fn total_variation(&self) -> f64 {
        self.tv
    }

    pub fn draw_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        if self.tv == 0.0 || rng.random::<f64>() >= self.tv {
            let i = sample_index(&self.overlap, rng.random());
            (i, i)
        } else {
            let i = sample_index(&self.residual_p, rng.random());
            let j = sample_index(&self.residual_q, rng.random());
            (i, j)
        }
    }
}

/// One draw of a maximal coupling of `p` and `q`.
pub fn maximal_coupling_draw<T: PartialEq + Clone, R: Rng + ?Sized>(
    p: &DiscreteDistribution<T>,
    q: &DiscreteDistribution<T>,
    rng: &mut R,
) -> Result<(T, T)> {
    let (p, q) = p.aligned_with(q);
    let (i, j) = MaximalCoupling::new(&p, &q)?.draw_indices(rng);
    Ok((p.points[i].clone(), q.points[j].clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingDraw {
    pub exceed: bool,
    pub x_tilde: Vec<f64>,
    pub y_tilde: f64,
    pub x_star: Vec<f64>,
    pub y_star: f64,
    pub z: f64,
}

/// Covariate laws of the coupling, indexed by atom.
struct CouplingLaws {
    points: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    exceed_cov: MaximalCoupling,
    below: Vec<f64>,
    limit: Vec<f64>,
}

fn coupling_laws(model: &TailModel, y_n: f64) -> Result<CouplingLaws> {
    let (points, probs) = model.covariates().atoms().ok_or_else(|| {
        Error::Unsupported(
            "coupling needs finite-discrete covariates; bin the continuous covariate into a \
             discrete model first"
                .into(),
        )
    })?;
    if !(y_n >= model.y0()) || !y_n.is_finite() {
        return Err(invalid(
            "y_n",
            format!("threshold must be finite and at least y0 = {}", model.y0()),
        ));
    }
    let sigma: Vec<f64> = points.iter().map(|x| model.sigma(x)).collect();
    let base = model.base_tail(y_n);
    let idx: Vec<usize> = (0..points.len()).collect();
    let exceed = DiscreteDistribution::from_weights(
        idx.clone(),
        probs.iter().zip(&sigma).map(|(p, s)| p * s * base).collect(),
    )?;
    let limit_weights: Vec<f64> = probs.iter().zip(&sigma).map(|(p, s)| p * s).collect();
    let limit = DiscreteDistribution::from_weights(idx, limit_weights.clone())?;
    let below = probs
        .iter()
        .zip(&sigma)
        .map(|(p, s)| p * model.cdf_given_sigma(*s, y_n))
        .collect();
    Ok(CouplingLaws {
        points: points.to_vec(),
        sigma,
        exceed_cov: MaximalCoupling::new(&exceed, &limit)?,
        below,
        limit: limit_weights,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Build `n` coupled quadruples at threshold `y_n`. Draw `i` uses its own RNG
/// stream derived from `(seed, i)`, so the output does not depend on scheduling.
pub fn coupling_construction(
    model: &TailModel,
    n: usize,
    y_n: f64,
    seed: u64,
) -> Result<Vec<CouplingDraw>> {
    if n == 0 {
        return Err(invalid("n", "need at least one draw"));
    }
    let laws = coupling_laws(model, y_n)?;
    let p_n = model.tail_probability(y_n);
    let base = model.base_tail(y_n);
    let gamma = model.gamma();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let exceed = rng.random::<f64>() < p_n;
            let u = 1.0 - rng.random::<f64>();
            let z = 1.0 / u;
            let y_star = y_n * z.powf(gamma);
            let (it, is, y_tilde) = if exceed {
                let (it, is) = laws.exceed_cov.draw_indices(&mut rng);
                let sigma = laws.sigma[it];
                let t = z / (sigma * base);
                (it, is, model.tail_quantile_given_sigma(sigma, t))
            } else {
                let it = sample_index(&laws.below, rng.random());
                let sigma = laws.sigma[it];
                let u = rng.random::<f64>() * model.cdf_given_sigma(sigma, y_n);
                let is = sample_index(&laws.limit, rng.random());
                (it, is, model.quantile_given_sigma(sigma, u))
            };
            CouplingDraw {
                exceed,
                x_tilde: laws.points[it].clone(),
                y_tilde,
                x_star: laws.points[is].clone(),
                y_star,
                z,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub n: usize,
    pub y_n: f64,
    pub p_n: f64,
    /// `A(1 / p_n)`.
    pub a_n: f64,
    pub exceedances: usize,
    /// Empirical `P(X̃ ≠ X* | E = 1)`.
    pub mismatch_rate: f64,
    /// `max_{E=1} |Y*/Ỹ − 1|`.
    pub max_ratio_deviation: f64,
    /// KS of `Y*/y_n` against `Pareto(α)` over all draws.
    pub y_star_ks: (f64, f64),
    /// Chi-square of `X*` against `σ P_X`: statistic, df, p-value.
    pub x_star_chi2: (f64, usize, f64),
    /// Chi-square independence of binned `Y*` and `(X̃, X*)` among `E = 1`.
    pub independence_chi2: (f64, usize, f64),
    pub thinning: Option<ThinningOutcome>,
    pub bound_constant: f64,
    pub violated: bool,
}

impl CouplingReport {
    /// `(max ratio deviation / A_n, mismatch rate / A_n)`; `None` when `A ≡ 0`.
    pub fn fitted_constants(&self) -> Option<(f64, f64)> {
        (self.a_n > 0.0).then(|| {
            (
                self.max_ratio_deviation / self.a_n,
                self.mismatch_rate / self.a_n,
            )
        })
    }

    pub fn with_thinning(mut self, outcome: ThinningOutcome) -> Self {
        self.thinning = Some(outcome);
        self
    }

    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut m = vec![
            ("n", self.n as f64),
            ("y_n", self.y_n),
            ("p_n", self.p_n),
            ("A_n", self.a_n),
            ("exceedances", self.exceedances as f64),
            ("mismatch_rate", self.mismatch_rate),
            ("max_ratio_deviation", self.max_ratio_deviation),
            ("ystar_ks_statistic", self.y_star_ks.0),
            ("ystar_ks_p", self.y_star_ks.1),
            ("xstar_chi2_statistic", self.x_star_chi2.0),
            ("xstar_chi2_p", self.x_star_chi2.2),
            ("independence_chi2_statistic", self.independence_chi2.0),
            ("independence_chi2_p", self.independence_chi2.2),
            ("bound_constant", self.bound_constant),
            ("violated", if self.violated { 1.0 } else { 0.0 }),
        ];
        if let Some(t) = &self.thinning {
            m.push(("thinning_ks_statistic", t.statistic));
            m.push(("thinning_ks_p", t.p_value));
        }
        m
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.metrics() {
            w.write_record([k, &v.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }
}

/// Raw draws as CSV `E,xtilde,ytilde,xstar,ystar,z`.
pub fn write_draws_csv<W: Write>(draws: &[CouplingDraw], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["E", "xtilde", "ytilde", "xstar", "ystar", "z"])?;
    for d in draws {
        w.write_record([
            if d.exceed { "1" } else { "0" },
            &format_point(&d.x_tilde),
            &d.y_tilde.to_string(),
            &format_point(&d.x_star),
            &d.y_star.to_string(),
            &d.z.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

/// Empirical check of the coupling properties against bound constant `m`.
pub fn verify_coupling_report(
    draws: &[CouplingDraw],
    model: &TailModel,
    y_n: f64,
    m: f64,
) -> Result<CouplingReport> {
    let laws = coupling_laws(model, y_n)?;
    let exceeding: Vec<&CouplingDraw> = draws.iter().filter(|d| d.exceed).collect();
    if exceeding.is_empty() {
        return Err(Error::InsufficientExceedances);
    }
    let p_n = model.tail_probability(y_n);
    let a_n = model.second_order_rate(1.0 / p_n);
    let mismatches = exceeding.iter().filter(|d| d.x_tilde != d.x_star).count();
    let mismatch_rate = mismatches as f64 / exceeding.len() as f64;
    let max_ratio_deviation = exceeding
        .iter()
        .map(|d| (d.y_star / d.y_tilde - 1.0).abs())
        .fold(0.0, f64::max);

    let alpha = model.alpha();
    let rescaled: Vec<f64> = draws.iter().map(|d| d.y_star / y_n).collect();
    let y_star_ks = ks_test(&rescaled, |v| if v <= 1.0 { 0.0 } else { 1.0 - v.powf(-alpha) })?;

    let atom = |x: &[f64]| {
        laws.points
            .iter()
            .position(|p| p.as_slice() == x)
            .expect("draw covariate is an atom of the model")
    };
    let k = laws.points.len();
    let mut star_counts = vec![0u64; k];
    for d in draws {
        star_counts[atom(&d.x_star)] += 1;
    }
    let total: f64 = laws.limit.iter().sum();
    let limit_probs: Vec<f64> = laws.limit.iter().map(|w| w / total).collect();
    let x_star_chi2 = chi_square_gof(&star_counts, &limit_probs)?;

    // Pareto(α) quartiles split Y*/y_n into four equiprobable bins.
    let cuts: Vec<f64> = [0.75f64, 0.5, 0.25].iter().map(|s| s.powf(-1.0 / alpha)).collect();
    let mut table = vec![vec![0u64; 4]; k * k];
    for d in &exceeding {
        let v = d.y_star / y_n;
        let bin = cuts.iter().take_while(|&&c| v > c).count();
        table[atom(&d.x_tilde) * k + atom(&d.x_star)][bin] += 1;
    }
    let independence_chi2 = chi_square_independence(&table)?;

    let limit = m * a_n + BOUND_SLACK;
    let violated = max_ratio_deviation > limit || mismatch_rate > limit;
    Ok(CouplingReport {
        n: draws.len(),
        y_n,
        p_n,
        a_n,
        exceedances: exceeding.len(),
        mismatch_rate,
        max_ratio_deviation,
        y_star_ks,
        x_star_chi2,
        independence_chi2,
        thinning: None,
        bound_constant: m,
        violated,
    })
}

/// Fitted `max(deviation / A_n, mismatch / A_n)` of a reference run, times 3.
/// Returns 0 when `A ≡ 0`: the bound then reduces to the float slack.
pub fn calibrate_bound_constant(model: &TailModel, n: usize, y_n: f64, seed: u64) -> Result<f64> {
    let draws = coupling_construction(model, n, y_n, seed)?;
    let report = verify_coupling_report(&draws, model, y_n, f64::INFINITY)?;
    Ok(report
        .fitted_constants()
        .map_or(0.0, |(dev, mis)| 3.0 * dev.max(mis)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinningOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// For degenerate marking probabilities: whether both sides matched exactly.
    pub exact_match: Option<bool>,
}

fn max_or_sentinel(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

/// Compare `max_{i ≤ n} Y_i ε_i` (Bernoulli marks) with `max_{i ≤ ν(n)} Y_i`,
/// `ν(n) ~ Binomial(n, p)`, over `reps` replications by a two-sample KS test.
/// `Y_i ~ Exp(1)`; an empty maximum is `−∞` on both sides.
pub fn thinning_equivalence_test(
    n: usize,
    bernoulli_p: f64,
    reps: usize,
    seed: u64,
) -> Result<ThinningOutcome> {
    if reps < 100 {
        return Err(invalid("reps", format!("need at least 100 replications, got {reps}")));
    }
    if !(0.0..=1.0).contains(&bernoulli_p) {
        return Err(invalid("p", format!("must lie in [0, 1], got {bernoulli_p}")));
    }
    let degenerate = bernoulli_p == 0.0 || bernoulli_p == 1.0;
    let binomial = Binomial::new(n as u64, bernoulli_p)
        .map_err(|e| invalid("p", e.to_string()))?;
    let pairs: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let ys: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
            let marks: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < bernoulli_p).collect();
            let marked = max_or_sentinel(ys.iter().zip(&marks).filter(|(_, &e)| e).map(|(y, _)| *y));
            let nu = binomial.sample(&mut rng) as usize;
            let block = if degenerate {
                max_or_sentinel(ys[..nu].iter().copied())
            } else {
                max_or_sentinel((0..nu).map(|_| Exp1.sample(&mut rng)))
            };
            (marked, block)
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (statistic, p_value) = two_sample_ks(&a, &b)?;
    Ok(ThinningOutcome {
        statistic,
        p_value,
        exact_match: degenerate.then(|| a == b),
    })
}

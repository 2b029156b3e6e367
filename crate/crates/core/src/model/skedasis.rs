//! Skedasis functions: the covariate-dependent factor of the conditional tail.
//!
//! Parameter layouts (`d` = covariate dimension):
//!
//! | family       | params                          | raw value                    |
//! |--------------|---------------------------------|------------------------------|
//! | `constant`   | `[level]` or empty (level 1)    | `level`                      |
//! | `affine`     | `[a, b_1, .., b_d]`             | `a + Σ b_j x_j`              |
//! | `log-affine` | `[a, b_1, .., b_d]`             | `exp(a + Σ b_j x_j)`         |
//! | `step`       | `[t_1..t_{m-1}, v_1..v_m]`      | `v_i` on `[t_{i-1}, t_i)` of `x_1` |
//!
//! The stored function is the raw value divided by its `P_X` integral, so that
//! `σ` is a `P_X`-density.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::model::covariate::CovariateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkedasisFamily {
    Constant,
    Affine,
    LogAffine,
    Step,
}

impl FromStr for SkedasisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "affine" => Ok(Self::Affine),
            "log-affine" => Ok(Self::LogAffine),
            "step" => Ok(Self::Step),
            other => Err(invalid(
                "skedasis.family",
                format!("unknown family `{other}` (constant|affine|log-affine|step)"),
            )),
        }
    }
}

impl fmt::Display for SkedasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Affine => "affine",
            Self::LogAffine => "log-affine",
            Self::Step => "step",
        })
    }
}

/// Unnormalized skedasis function as written in a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSkedasis {
    pub family: SkedasisFamily,
    pub params: Vec<f64>,
}

impl RawSkedasis {
    pub fn new(family: SkedasisFamily, params: Vec<f64>) -> Self {
        Self { family, params }
    }

    fn check_shape(&self, dim: usize) -> Result<()> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("skedasis.params", "parameters must be finite"));
        }
        let n = self.params.len();
        match self.family {
            SkedasisFamily::Constant if n > 1 => {
                Err(invalid("skedasis.params", "constant takes at most one level"))
            }
            SkedasisFamily::Affine | SkedasisFamily::LogAffine if n != dim + 1 => Err(invalid(
                "skedasis.params",
                format!("{} expects {} parameters, got {n}", self.family, dim + 1),
            )),
            SkedasisFamily::Step => {
                if n % 2 == 0 {
                    return Err(invalid(
                        "skedasis.params",
                        "step expects m-1 breakpoints followed by m levels",
                    ));
                }
                let breaks = &self.params[..n / 2];
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid(
                        "skedasis.params",
                        "step breakpoints must be strictly increasing",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.family {
            SkedasisFamily::Constant => self.params.first().copied().unwrap_or(1.0),
            SkedasisFamily::Affine => self.linear(x),
            SkedasisFamily::LogAffine => self.linear(x).exp(),
            SkedasisFamily::Step => {
                let (breaks, levels) = self.step_parts();
                let idx = breaks.iter().take_while(|&&t| t <= x[0]).count();
                levels[idx]
            }
        }
    }

    fn linear(&self, x: &[f64]) -> f64 {
        self.params[0]
            + self.params[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    fn step_parts(&self) -> (&[f64], &[f64]) {
        let m = self.params.len().div_ceil(2);
        self.params.split_at(m - 1)
    }

    /// Pieces `(lo, hi, level)` of the step function restricted to `[0, 1]`.
    fn step_pieces(&self) -> Vec<(f64, f64, f64)> {
        let (breaks, levels) = self.step_parts();
        let mut pieces = Vec::with_capacity(levels.len());
        for (i, &level) in levels.iter().enumerate() {
            let lo = if i == 0 { f64::NEG_INFINITY } else { breaks[i - 1] };
            let hi = if i == breaks.len() { f64::INFINITY } else { breaks[i] };
            let (lo, hi) = (lo.max(0.0), hi.min(1.0));
            if hi > lo {
                pieces.push((lo, hi, level));
            }
        }
        pieces
    }

    /// `∫_{[0,c]} raw(u) du` with each `c_j` already clamped to `[0, 1]`.
    fn box_integral(&self, c: &[f64]) -> f64 {
        let volume: f64 = c.iter().product();
        match self.family {
            SkedasisFamily::Constant => self.value(c) * volume,
            SkedasisFamily::Affine => {
                let a = self.params[0];
                let mut total = a * volume;
                for (j, b) in self.params[1..].iter().enumerate() {
                    let others: f64 = c
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != j)
                        .map(|(_, v)| v)
                        .product();
                    total += b * c[j] * c[j] / 2.0 * others;
                }
                total
            }
            SkedasisFamily::LogAffine => {
                let a = self.params[0];
                a.exp()
                    * self.params[1..]
                        .iter()
                        .zip(c)
                        .map(|(&b, &cj)| if b == 0.0 { cj } else { (b * cj).exp_m1() / b })
                        .product::<f64>()
            }
            SkedasisFamily::Step => {
                let first: f64 = self
                    .step_pieces()
                    .iter()
                    .map(|&(lo, hi, level)| (hi.min(c[0]) - lo).max(0.0) * level)
                    .sum();
                first * c[1..].iter().product::<f64>()
            }
        }
    }

    /// Supremum of the raw function over `[0,1]^d`.
    fn box_sup(&self, dim: usize) -> f64 {
        match self.family {
            SkedasisFamily::Constant => self.value(&vec![0.0; dim]),
            SkedasisFamily::Affine => {
                self.params[0] + self.params[1..].iter().map(|b| b.max(0.0)).sum::<f64>()
            }
            SkedasisFamily::LogAffine => {
                (self.params[0] + self.params[1..].iter().map(|b| b.max(0.0)).sum::<f64>()).exp()
            }
            SkedasisFamily::Step => self
                .step_pieces()
                .iter()
                .map(|p| p.2)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// A point of `[0,1]^d` where the raw function is negative, or where it
    /// vanishes on a set of positive measure.
    fn box_violation(&self, dim: usize) -> Option<Vec<f64>> {
        match self.family {
            SkedasisFamily::Constant => {
                (self.value(&[]) <= 0.0).then(|| vec![0.0; dim])
            }
            SkedasisFamily::Affine => {
                let corner: Vec<f64> = self.params[1..]
                    .iter()
                    .map(|&b| if b < 0.0 { 1.0 } else { 0.0 })
                    .collect();
                (self.value(&corner) < 0.0).then_some(corner)
            }
            SkedasisFamily::LogAffine => None,
            SkedasisFamily::Step => self.step_pieces().iter().find(|p| p.2 <= 0.0).map(|p| {
                let mut point = vec![0.0; dim];
                point[0] = p.0;
                point
            }),
        }
    }
}

/// Normalized skedasis function `σ = raw / normalization`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkedasisSpec {
    raw: RawSkedasis,
    normalization: f64,
    sup: f64,
}

impl SkedasisSpec {
    pub fn family(&self) -> SkedasisFamily {
        self.raw.family
    }

    pub fn params(&self) -> &[f64] {
        &self.raw.params
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.raw.value(x) / self.normalization
    }

    /// `sup_x σ(x)` over the covariate support.
    pub fn sup(&self) -> f64 {
        self.sup
    }

    /// `C(x) = ∫_{u ≤ x} σ(u) P_X(du)`, componentwise order.
    pub fn integrated(&self, cov: &CovariateSpec, x: &[f64]) -> f64 {
        match cov {
            CovariateSpec::UniformBox { .. } => {
                if x.iter().any(|&v| v < 0.0) {
                    return 0.0;
                }
                let c: Vec<f64> = x.iter().map(|&v| v.min(1.0)).collect();
                (self.raw.box_integral(&c) / self.normalization).clamp(0.0, 1.0)
            }
            CovariateSpec::Discrete { points, probs } => points
                .iter()
                .zip(probs)
                .filter(|(p, _)| p.iter().zip(x).all(|(u, v)| u <= v))
                .map(|(p, w)| w * self.value(p))
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }
}

/// Scale a raw skedasis function into a `P_X`-density.
pub fn normalize_skedasis(raw: RawSkedasis, cov: &CovariateSpec) -> Result<SkedasisSpec> {
    let dim = cov.dim();
    raw.check_shape(dim)?;
    let (integral, sup) = match cov {
        CovariateSpec::UniformBox { .. } => {
            if let Some(point) = raw.box_violation(dim) {
                return Err(Error::SkedasisNotPositive { point });
            }
            (raw.box_integral(&vec![1.0; dim]), raw.box_sup(dim))
        }
        CovariateSpec::Discrete { points, probs } => {
            let mut integral = 0.0;
            let mut sup = f64::NEG_INFINITY;
            for (p, &w) in points.iter().zip(probs) {
                if w == 0.0 {
                    continue;
                }
                let v = raw.value(p);
                if !(v > 0.0) {
                    return Err(Error::SkedasisNotPositive { point: p.clone() });
                }
                integral += w * v;
                sup = sup.max(v);
            }
            (integral, sup)
        }
    };
    if !(integral > 0.0) || !integral.is_finite() {
        return Err(Error::SkedasisNotPositive {
            point: vec![0.0; dim],
        });
    }
    Ok(SkedasisSpec {
        raw,
        normalization: integral,
        sup: sup / integral,
    })
}

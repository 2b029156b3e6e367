use rand::Rng;

use crate::error::{invalid, Error, Result};

const PROB_SUM_TOL: f64 = 1e-12;

/// Law of the covariate `X`.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateSpec {
    /// Uniform on `[0, 1]^dim`, density 1.
    UniformBox { dim: usize },
    /// Finitely many atoms with the given probabilities.
    Discrete {
        points: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
}

impl CovariateSpec {
    pub fn uniform(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("covariate.dim", "dimension must be positive"));
        }
        Ok(CovariateSpec::UniformBox { dim })
    }

    pub fn discrete(points: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("covariate.points", "need at least one atom"));
        }
        if points.len() != probs.len() {
            return Err(invalid(
                "covariate.probs",
                format!("{} probabilities for {} points", probs.len(), points.len()),
            ));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(invalid("covariate.points", "points must have coordinates"));
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid("covariate.points", "coordinates must be finite"));
            }
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(invalid("covariate.probs", "probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(invalid(
                "covariate.probs",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(CovariateSpec::Discrete { points, probs })
    }

    pub fn dim(&self) -> usize {
        match self {
            CovariateSpec::UniformBox { dim } => *dim,
            CovariateSpec::Discrete { points, .. } => points[0].len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, CovariateSpec::Discrete { .. })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            CovariateSpec::UniformBox { .. } => x.iter().all(|&v| (0.0..=1.0).contains(&v)),
            CovariateSpec::Discrete { points, probs } => points
                .iter()
                .zip(probs)
                .any(|(p, &w)| w > 0.0 && p.as_slice() == x),
        }
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideSupport { point: x.to_vec() })
        }
    }

    /// Lebesgue density of `P_X`; `None` for atomic laws.
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        match self {
            CovariateSpec::UniformBox { .. } => Some(if self.contains(x) { 1.0 } else { 0.0 }),
            CovariateSpec::Discrete { .. } => None,
        }
    }

    pub fn atoms(&self) -> Option<(&[Vec<f64>], &[f64])> {
        match self {
            CovariateSpec::Discrete { points, probs } => Some((points, probs)),
            CovariateSpec::UniformBox { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            CovariateSpec::UniformBox { dim } => {
                for _ in 0..*dim {
                    out.push(rng.random::<f64>());
                }
            }
            CovariateSpec::Discrete { points, probs } => {
                let idx = sample_index(probs, rng.random::<f64>());
                out.extend_from_slice(&points[idx]);
            }
        }
    }
}

/// Inverse-cdf index lookup for a probability vector; `u` in `[0, 1)`.
pub(crate) fn sample_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        acc += w;
        if target < acc {
            return i;
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_probabilities_must_sum_to_one() {
        assert!(CovariateSpec::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).is_ok());
        assert!(CovariateSpec::discrete(vec![vec![0.0], vec![1.0]], vec![0.5, 0.4]).is_err());
        assert!(CovariateSpec::discrete(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn uniform_density_is_one_inside() {
        let c = CovariateSpec::uniform(2).unwrap();
        assert_eq!(c.density(&[0.3, 0.9]), Some(1.0));
        assert_eq!(c.density(&[1.3, 0.9]), Some(0.0));
        assert!(c.check_point(&[0.5]).is_err());
    }

    #[test]
    fn sample_index_skips_zero_weights() {
        let w = [0.0, 0.25, 0.0, 0.75];
        assert_eq!(sample_index(&w, 0.0), 1);
        assert_eq!(sample_index(&w, 0.2), 1);
        assert_eq!(sample_index(&w, 0.25), 3);
        assert_eq!(sample_index(&w, 0.999_999), 3);
    }
}

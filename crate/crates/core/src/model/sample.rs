use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};

/// Where a generated sample came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub model_id: String,
}

/// `n` observations `(x_i, y_i)` with `x_i ∈ ℝ^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    covariates: Vec<f64>,
    responses: Vec<f64>,
    provenance: Option<Provenance>,
}

impl SampleSet {
    pub fn new(dim: usize, covariates: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "covariate dimension must be positive"));
        }
        if covariates.len() != dim * responses.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * responses.len(),
                got: covariates.len(),
            });
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(invalid("y", "responses must be finite"));
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return Err(invalid("x", "covariates must be finite"));
        }
        Ok(Self {
            dim,
            covariates,
            responses,
            provenance: None,
        })
    }

    /// One-dimensional covariates.
    pub fn from_pairs(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: ys.len(),
                got: xs.len(),
            });
        }
        Self::new(1, xs.to_vec(), ys.to_vec())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub(crate) fn from_parts_unchecked(
        dim: usize,
        covariates: Vec<f64>,
        responses: Vec<f64>,
    ) -> Self {
        Self {
            dim,
            covariates,
            responses,
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariate(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn covariates(&self) -> impl Iterator<Item = &[f64]> {
        self.covariates.chunks_exact(self.dim)
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Copy with every response multiplied by `factor`.
    pub fn scale_responses(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            covariates: self.covariates.clone(),
            responses: self.responses.iter().map(|y| y * factor).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// CSV with header `x1,...,xd,y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim + 1);
        for (x, y) in self.covariates().zip(&self.responses) {
            record.clear();
            record.extend(x.iter().map(|v| v.to_string()));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let cols = headers.len();
        if cols < 2 || headers.get(cols - 1) != Some("y") {
            return Err(Error::Csv(
                "header must be `x1,...,xd,y` with at least one covariate".into(),
            ));
        }
        for (j, h) in headers.iter().take(cols - 1).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::Csv(format!("unexpected column `{h}` at position {}", j + 1)));
            }
        }
        let dim = cols - 1;
        let mut covariates = Vec::new();
        let mut responses = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Csv(format!("row {}: cannot parse `{field}`", row + 1))
                })?;
                if j == dim {
                    responses.push(v);
                } else {
                    covariates.push(v);
                }
            }
        }
        Self::new(dim, covariates, responses)
    }
}

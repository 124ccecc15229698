//! Dense linear algebra for the regressions: a column-major matrix, pivoted
//! Householder least squares with rank detection, the HC0/HC1 sandwich, and the
//! polynomial and additive B-spline designs.

mod design;
mod lstsq;
mod matrix;

pub use design::{
    bspline_design, polynomial_design, polynomial_labels, polynomial_terms, AdditiveSplineBasis,
    BSplineBasis, PolyBasis,
};
pub use lstsq::{
    sandwich_variance, sandwich_variance_with, solve_ls, HcKind, LeastSquaresFit, PivotedQr,
    SandwichCovariance,
};
pub use matrix::{
    correlation, dot, mean, norm2, quantile_sorted, sorted_copy, std_dev, variance, Matrix,
};

use crate::error::{ApeError, Result};
use std::collections::HashSet;

/// Regressor matrix with one unique label per column.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Matrix,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: Matrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != values.ncols() {
            return Err(ApeError::Shape(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(ApeError::Parameter(format!("duplicate design label `{l}`")));
            }
        }
        Ok(DesignMatrix { values, labels })
    }

    /// Convenience constructor from named columns.
    pub fn from_named(nrows: usize, cols: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let (labels, data): (Vec<_>, Vec<_>) = cols.into_iter().unzip();
        DesignMatrix::new(Matrix::from_columns(nrows, &data)?, labels)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

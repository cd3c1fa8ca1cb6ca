//! Sample containers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One population's samples: a response/outcome block `y` (n x k) and an
/// optional predictor block `x` (n x l, `l = 0` when the model has no
/// covariates). Rows are i.i.d. observations.
///
/// Regression instances have `k = 1, l >= 1`; graphical-model instances have
/// `l = 0, k >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    labels: Vec<String>,
}

impl Dataset {
    /// Build a dataset from raw blocks. Rejects empty data and non-finite
    /// entries; instance-kind constraints are checked by the model families.
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if y.nrows() == 0 {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        if x.ncols() > 0 && x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows but x has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite entries".into()));
        }
        let x = if x.ncols() == 0 { DMatrix::zeros(y.nrows(), 0) } else { x };
        Ok(Self { y, x, labels })
    }

    /// Regression dataset: single response column plus predictors.
    pub fn regression(y: Vec<f64>, x: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let n = y.len();
        Self::new(DMatrix::from_vec(n, 1, y), x, labels)
    }

    /// Graphical-model dataset: every column is a variable, no predictors.
    pub fn ggm(y: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        let n = y.nrows();
        Self::new(y, DMatrix::zeros(n, 0), labels)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.y.ncols()
    }

    pub fn l(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Response column of a regression dataset.
    pub fn y_col(&self) -> nalgebra::DVectorView<'_, f64> {
        self.y.column(0)
    }

    /// Dataset restricted to `rows` (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let y = DMatrix::from_fn(rows.len(), self.y.ncols(), |i, j| self.y[(rows[i], j)]);
        let x = DMatrix::from_fn(rows.len(), self.x.ncols(), |i, j| self.x[(rows[i], j)]);
        Dataset { y, x, labels: self.labels.clone() }
    }

    /// Row-concatenation of two compatible datasets (`self` first).
    pub fn vstack(&self, other: &Dataset) -> Result<Dataset> {
        if self.k() != other.k() || self.l() != other.l() {
            return Err(Error::DimensionMismatch(format!(
                "cannot pool datasets with shapes (k={}, l={}) and (k={}, l={})",
                self.k(),
                self.l(),
                other.k(),
                other.l()
            )));
        }
        let n = self.n() + other.n();
        let y = DMatrix::from_fn(n, self.k(), |i, j| {
            if i < self.n() { self.y[(i, j)] } else { other.y[(i - self.n(), j)] }
        });
        let x = DMatrix::from_fn(n, self.l(), |i, j| {
            if i < self.n() { self.x[(i, j)] } else { other.x[(i - self.n(), j)] }
        });
        Ok(Dataset { y, x, labels: self.labels.clone() })
    }

    /// Subtract each column's mean (both blocks). Used by the optional
    /// centering preprocessing of the network CLI.
    pub fn centered(&self) -> Dataset {
        let mut y = self.y.clone();
        let mut x = self.x.clone();
        for mut col in y.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        for mut col in x.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        Dataset { y, x, labels: self.labels.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let y = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let x = DMatrix::zeros(2, 0);
        assert!(Dataset::new(y, x, vec![]).is_err());
    }

    #[test]
    fn subset_and_vstack_roundtrip() {
        let y = DMatrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let d = Dataset::ggm(y, vec!["a".into(), "b".into()]).unwrap();
        let top = d.subset(&[0]);
        let bottom = d.subset(&[1, 2]);
        assert_eq!(top.vstack(&bottom).unwrap().y(), d.y());
    }
}

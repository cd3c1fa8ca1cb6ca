//! Model families and their likelihood machinery.
//!
//! A [`Model`] bundles everything the testing pipeline needs from a family:
//! log-likelihood, restricted maximum-likelihood estimation on a fixed
//! support, the score function, closed-form score cross-moments, and the
//! symmetric Kullback-Leibler divergence used by the permutation baseline.
//!
//! Two families are implemented: [`Regression`] (Gaussian linear model,
//! `phi = (beta, sigma^2)`) and [`Ggm`] (zero-mean Gaussian graphical model,
//! `phi` indexing the precision matrix).

mod ggm;
mod regression;

pub use ggm::{Ggm, GgmParams};
pub use regression::{Regression, RegressionParams};

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Address of one screenable parameter component.
///
/// Screening, active sets and cross-moment blocks all speak in flattened
/// positions; this type gives the position a meaning per family:
/// regression coefficients are `Coef(j) <-> j`, precision-matrix entries use
/// the lower-triangle-plus-diagonal ordering `(row, col), row >= col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamIndex {
    /// Regression coefficient `beta_j`.
    Coef(usize),
    /// Precision-matrix entry `(row, col)` with `row >= col`.
    GgmEntry { row: usize, col: usize },
}

impl ParamIndex {
    /// Flattened position in the parameter vector.
    pub fn position(&self) -> usize {
        match *self {
            ParamIndex::Coef(j) => j,
            ParamIndex::GgmEntry { row, col } => {
                debug_assert!(row >= col);
                row * (row + 1) / 2 + col
            }
        }
    }

    /// Inverse of [`ParamIndex::position`] for the GGM layout.
    pub fn ggm_from_position(pos: usize) -> ParamIndex {
        // row = largest r with r(r+1)/2 <= pos
        let mut row = ((((8 * pos + 1) as f64).sqrt() - 1.0) / 2.0) as usize;
        while (row + 1) * (row + 2) / 2 <= pos {
            row += 1;
        }
        while row * (row + 1) / 2 > pos {
            row -= 1;
        }
        ParamIndex::GgmEntry { row, col: pos - row * (row + 1) / 2 }
    }

    /// Whether a GGM position addresses a diagonal entry.
    pub fn is_ggm_diagonal(pos: usize) -> bool {
        matches!(Self::ggm_from_position(pos), ParamIndex::GgmEntry { row, col } if row == col)
    }
}

/// Diagonal positions of a `k`-variable GGM in flattened order.
pub fn ggm_diagonal_positions(k: usize) -> Vec<usize> {
    (0..k).map(|j| ParamIndex::GgmEntry { row: j, col: j }.position()).collect()
}

/// A model family usable by the screen-then-test pipeline.
///
/// Implementations are stateless; all operations are pure functions of their
/// inputs and safe to call concurrently.
pub trait Model: Send + Sync {
    type Params: Clone + Send + Sync + 'static;

    /// Check the dataset has this family's shape.
    fn validate(&self, data: &Dataset) -> Result<()>;

    /// Number of screenable positions (`l` coefficients for regression,
    /// `k(k+1)/2` precision entries for the GGM).
    fn screen_dim(&self, data: &Dataset) -> usize;

    /// Full parameter dimension `p` of `phi` (adds the noise variance for
    /// regression). Degrees of freedom of the classical two-sample LRT.
    fn param_count(&self, data: &Dataset) -> usize;

    /// Positions that are active regardless of screening (GGM diagonal).
    fn always_active(&self, data: &Dataset) -> Vec<usize>;

    /// Exact log-likelihood `sum_i log d(y_i | x_i; phi)`, additive constants
    /// included.
    fn loglik(&self, params: &Self::Params, data: &Dataset) -> Result<f64>;

    /// Maximum-likelihood estimate with off-support components pinned to zero.
    fn fit_restricted_mle(&self, data: &Dataset, active: &[usize]) -> Result<Self::Params>;

    /// Score vector for one sample, laid out per [`ParamIndex`]. Regression
    /// appends the `sigma^2` component after the `l` coefficient entries.
    fn score(&self, params: &Self::Params, data: &Dataset, row: usize) -> DVector<f64>;

    /// Closed-form plug-in cross-moment block
    /// `(1/n) sum_i E_c[s_rows(Y|x_i; a) s_cols(Y|x_i; b)^T]`,
    /// with the expectation under `c` and scores evaluated at `a` and `b`.
    /// `data` supplies population `c`'s held-out rows (the GGM ignores it).
    fn cross_moment_plugin(
        &self,
        c: &Self::Params,
        a: &Self::Params,
        b: &Self::Params,
        rows: &[usize],
        cols: &[usize],
        data: &Dataset,
    ) -> Result<DMatrix<f64>>;

    /// Symmetric Kullback-Leibler divergence `D(p1||p2) + D(p2||p1)`.
    /// Regression needs the predictors' second-moment matrix in `x_moment`.
    fn sym_kl(
        &self,
        p1: &Self::Params,
        p2: &Self::Params,
        x_moment: Option<&DMatrix<f64>>,
    ) -> Result<f64>;
}

/// Empirical cross-moment block
/// `(1/n) sum_i s_rows(y_i|x_i; a) s_cols(y_i|x_i; b)^T`.
///
/// The sample analogue of [`Model::cross_moment_plugin`], selectable as the
/// alternative B-matrix estimator.
pub fn cross_moment_sample<M: Model>(
    model: &M,
    a: &M::Params,
    b: &M::Params,
    rows: &[usize],
    cols: &[usize],
    data: &Dataset,
) -> Result<DMatrix<f64>> {
    model.validate(data)?;
    let n = data.n();
    let mut acc = DMatrix::<f64>::zeros(rows.len(), cols.len());
    for i in 0..n {
        let sa = model.score(a, data, i);
        let sb = model.score(b, data, i);
        for (ri, &r) in rows.iter().enumerate() {
            if r >= sa.len() {
                return Err(Error::InvalidInput(format!("score index {r} out of range")));
            }
            for (ci, &c) in cols.iter().enumerate() {
                if c >= sb.len() {
                    return Err(Error::InvalidInput(format!("score index {c} out of range")));
                }
                acc[(ri, ci)] += sa[r] * sb[c];
            }
        }
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ggm_position_roundtrip() {
        let mut seen = Vec::new();
        for row in 0..6 {
            for col in 0..=row {
                let idx = ParamIndex::GgmEntry { row, col };
                let pos = idx.position();
                assert_eq!(ParamIndex::ggm_from_position(pos), idx);
                seen.push(pos);
            }
        }
        let mut sorted = seen.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), seen.len(), "positions must be unique");
        assert_eq!(sorted, (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn diagonal_positions() {
        assert_eq!(ggm_diagonal_positions(3), vec![0, 2, 5]);
        assert!(ParamIndex::is_ggm_diagonal(5));
        assert!(!ParamIndex::is_ggm_diagonal(1));
    }
}

//! Gaussian linear regression, `y = beta^T x + eps`, `eps ~ N(0, sigma^2)`.
//!
//! Active sets index the coefficients only; `sigma^2` is always estimated
//! freely in every restricted fit. The score carries an extra `sigma^2`
//! component after the `l` coefficient entries, but cross-moment blocks are
//! produced for the coefficient block only, matching the closed-form
//! conditional moment
//! `E_c[s_A s_B^T | x] = (x_A x_B^T / (sa^2 sb^2)) (sc^2 + (bc-ba)^T x x^T (bc-bb))`.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

use super::Model;

const LN_2PI: f64 = 1.8378770664093453;

/// Coefficients plus noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams {
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl RegressionParams {
    pub fn new(beta: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("beta contains non-finite entries".into()));
        }
        Ok(Self { beta, sigma2 })
    }
}

/// Marker type for the linear-regression family.
#[derive(Debug, Clone, Copy, Default)]
pub struct Regression;

impl Regression {
    fn check_params(&self, params: &RegressionParams, data: &Dataset) -> Result<()> {
        if params.beta.len() != data.l() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries but data has {} predictors",
                params.beta.len(),
                data.l()
            )));
        }
        if !(params.sigma2 > 0.0) {
            return Err(Error::InvalidInput("sigma2 must be positive".into()));
        }
        Ok(())
    }

    fn residuals(&self, params: &RegressionParams, data: &Dataset) -> DVector<f64> {
        data.y_col().clone_owned() - data.x() * &params.beta
    }
}

impl Model for Regression {
    type Params = RegressionParams;

    fn validate(&self, data: &Dataset) -> Result<()> {
        if data.k() != 1 {
            return Err(Error::InvalidInput(format!(
                "regression expects one response column, got {}",
                data.k()
            )));
        }
        if data.l() < 1 {
            return Err(Error::InvalidInput("regression expects at least one predictor".into()));
        }
        Ok(())
    }

    fn screen_dim(&self, data: &Dataset) -> usize {
        data.l()
    }

    fn param_count(&self, data: &Dataset) -> usize {
        data.l() + 1
    }

    fn always_active(&self, _data: &Dataset) -> Vec<usize> {
        Vec::new()
    }

    fn loglik(&self, params: &RegressionParams, data: &Dataset) -> Result<f64> {
        self.validate(data)?;
        self.check_params(params, data)?;
        let r = self.residuals(params, data);
        let n = data.n() as f64;
        Ok(-0.5 * n * (LN_2PI + params.sigma2.ln()) - r.norm_squared() / (2.0 * params.sigma2))
    }

    fn fit_restricted_mle(&self, data: &Dataset, active: &[usize]) -> Result<RegressionParams> {
        self.validate(data)?;
        if active.is_empty() {
            return Err(Error::InvalidInput("active set must be nonempty".into()));
        }
        let l = data.l();
        let mut support: Vec<usize> = active.to_vec();
        support.sort_unstable();
        support.dedup();
        if support.last().is_some_and(|&j| j >= l) {
            return Err(Error::InvalidInput(format!(
                "active position {} out of range for {} predictors",
                support.last().unwrap(),
                l
            )));
        }
        let n = data.n();
        let xa = DMatrix::from_fn(n, support.len(), |i, j| data.x()[(i, support[j])]);
        let y = data.y_col().clone_owned();
        let xtx = xa.transpose() * &xa;
        let xty = xa.transpose() * &y;
        let beta_a = linalg::solve_normal_equations(&xtx, &xty).ok_or_else(|| {
            Error::Unidentifiable(format!(
                "design singular on support of size {} with n = {n}",
                support.len()
            ))
        })?;
        let rss = (&y - &xa * &beta_a).norm_squared();
        let sigma2 = rss / n as f64;
        let scale = y.norm_squared() / n as f64;
        if sigma2 <= 1e-12 * scale.max(1e-300) {
            return Err(Error::Degenerate(format!(
                "zero residual variance on support of size {}",
                support.len()
            )));
        }
        let mut beta = DVector::zeros(l);
        for (idx, &j) in support.iter().enumerate() {
            beta[j] = beta_a[idx];
        }
        RegressionParams::new(beta, sigma2)
    }

    fn score(&self, params: &RegressionParams, data: &Dataset, row: usize) -> DVector<f64> {
        let l = data.l();
        let x = data.x().row(row);
        let resid = data.y()[(row, 0)] - (x * &params.beta)[0];
        let mut s = DVector::zeros(l + 1);
        for j in 0..l {
            s[j] = resid * x[j] / params.sigma2;
        }
        s[l] = (resid * resid / params.sigma2 - 1.0) / (2.0 * params.sigma2);
        s
    }

    fn cross_moment_plugin(
        &self,
        c: &RegressionParams,
        a: &RegressionParams,
        b: &RegressionParams,
        rows: &[usize],
        cols: &[usize],
        data: &Dataset,
    ) -> Result<DMatrix<f64>> {
        self.validate(data)?;
        for set in [rows, cols] {
            if set.iter().any(|&j| j >= data.l()) {
                return Err(Error::InvalidInput(
                    "plug-in cross-moments are defined for the coefficient block only".into(),
                ));
            }
        }
        let n = data.n();
        let x = data.x();
        let da = &c.beta - &a.beta;
        let db = &c.beta - &b.beta;
        // zeta_i = sc^2 + (x_i^T da)(x_i^T db)
        let zeta: DVector<f64> = if da.amax() == 0.0 && db.amax() == 0.0 {
            DVector::from_element(n, c.sigma2)
        } else {
            let u = x * &da;
            let v = x * &db;
            DVector::from_fn(n, |i, _| c.sigma2 + u[i] * v[i])
        };
        let mut xa = linalg::gather(x, &(0..n).collect::<Vec<_>>(), rows);
        let xb = linalg::gather(x, &(0..n).collect::<Vec<_>>(), cols);
        for (i, mut r) in xa.row_iter_mut().enumerate() {
            r *= zeta[i];
        }
        let denom = n as f64 * a.sigma2 * b.sigma2;
        Ok(xa.transpose() * xb / denom)
    }

    fn sym_kl(
        &self,
        p1: &RegressionParams,
        p2: &RegressionParams,
        x_moment: Option<&DMatrix<f64>>,
    ) -> Result<f64> {
        let m = x_moment.ok_or_else(|| {
            Error::InvalidInput("regression sym_kl needs a predictor second-moment matrix".into())
        })?;
        if p1.beta.len() != p2.beta.len() || m.nrows() != p1.beta.len() || !m.is_square() {
            return Err(Error::DimensionMismatch("sym_kl parameter shapes differ".into()));
        }
        if !(p1.sigma2 > 0.0) || !(p2.sigma2 > 0.0) {
            return Err(Error::InvalidInput("sigma2 must be positive".into()));
        }
        let d = &p1.beta - &p2.beta;
        let quad = (d.transpose() * m * &d)[(0, 0)];
        let kl = |s2: f64, s2p: f64| -0.5 + s2 / (2.0 * s2p) + quad + 0.5 * (s2p / s2).ln();
        Ok(kl(p1.sigma2, p2.sigma2) + kl(p2.sigma2, p1.sigma2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy(y: Vec<f64>, x_rows: &[&[f64]]) -> Dataset {
        let l = x_rows[0].len();
        let flat: Vec<f64> = x_rows.iter().flat_map(|r| r.iter().copied()).collect();
        let x = DMatrix::from_row_slice(x_rows.len(), l, &flat);
        Dataset::regression(y, x, (0..l).map(|j| format!("x{j}")).collect()).unwrap()
    }

    #[test]
    fn loglik_standard_normal_at_zero() {
        let data = toy(vec![0.0], &[&[0.0]]);
        let p = RegressionParams::new(DVector::zeros(1), 1.0).unwrap();
        let ll = Regression.loglik(&p, &data).unwrap();
        assert_relative_eq!(ll, -0.5 * LN_2PI, max_relative = 1e-14);
    }

    #[test]
    fn loglik_matches_direct_density_evaluation() {
        // Independent oracle: evaluate the Gaussian density formula per row.
        let data = toy(vec![0.3, -1.1, 2.0, 0.4], &[&[1.0, 0.2], &[-0.5, 1.4], &[0.7, -0.3], &[0.0, 0.9]]);
        let p = RegressionParams::new(DVector::from_vec(vec![0.8, -0.4]), 1.7).unwrap();
        let mut expected = 0.0;
        for i in 0..4 {
            let mean = 0.8 * data.x()[(i, 0)] - 0.4 * data.x()[(i, 1)];
            let z = data.y()[(i, 0)] - mean;
            expected += -0.5 * (LN_2PI + 1.7f64.ln()) - z * z / (2.0 * 1.7);
        }
        let ll = Regression.loglik(&p, &data).unwrap();
        assert_relative_eq!(ll, expected, max_relative = 1e-13);
    }

    #[test]
    fn exact_fit_is_rejected_as_degenerate() {
        let data = toy(vec![2.0, 4.0, 6.0], &[&[1.0], &[2.0], &[3.0]]);
        let err = Regression.fit_restricted_mle(&data, &[0]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn restricted_mle_solves_normal_equations() {
        let data = toy(
            vec![1.0, 0.5, -0.2, 0.9, 1.4],
            &[
                &[1.0, 0.1, 2.0],
                &[0.3, -0.4, 1.0],
                &[-0.8, 0.9, 0.0],
                &[0.5, 0.5, -1.0],
                &[1.2, -0.2, 0.4],
            ],
        );
        let fit = Regression.fit_restricted_mle(&data, &[0, 2]).unwrap();
        assert_eq!(fit.beta[1], 0.0);
        // score mean over fitting data vanishes on the active coordinates
        let mut mean = DVector::<f64>::zeros(4);
        for i in 0..5 {
            mean += Regression.score(&fit, &data, i);
        }
        mean /= 5.0;
        assert!(mean[0].abs() < 1e-8 && mean[2].abs() < 1e-8, "{mean}");
        // the sigma^2 stationarity holds too for the MLE variance
        assert!(mean[3].abs() < 1e-8);
    }

    #[test]
    fn restricted_mle_maximizes_over_support() {
        let data = toy(
            vec![1.0, 0.5, -0.2, 0.9, 1.4, -0.3],
            &[
                &[1.0, 0.1],
                &[0.3, -0.4],
                &[-0.8, 0.9],
                &[0.5, 0.5],
                &[1.2, -0.2],
                &[-0.1, 0.7],
            ],
        );
        let fit = Regression.fit_restricted_mle(&data, &[0, 1]).unwrap();
        let best = Regression.loglik(&fit, &data).unwrap();
        let mut rng = crate::rng::stream(11, "perturb", 0);
        use rand::Rng;
        for _ in 0..100 {
            let mut beta = fit.beta.clone();
            beta[0] += rng.random_range(-0.5..0.5);
            beta[1] += rng.random_range(-0.5..0.5);
            let s2 = fit.sigma2 * rng.random_range(0.5..2.0);
            let other = RegressionParams::new(beta, s2).unwrap();
            assert!(Regression.loglik(&other, &data).unwrap() <= best + 1e-10);
        }
    }

    #[test]
    fn score_at_zero_residual() {
        let data = toy(vec![1.0], &[&[0.5, 0.25]]);
        let p = RegressionParams::new(DVector::from_vec(vec![2.0, 0.0]), 4.0).unwrap();
        let s = Regression.score(&p, &data, 0);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 0.0);
        assert_relative_eq!(s[2], -1.0 / 8.0, max_relative = 1e-15);
    }

    #[test]
    fn plugin_reduces_to_scaled_gram_when_params_equal() {
        let data = toy(vec![0.0, 0.0, 0.0], &[&[1.0, 2.0], &[0.5, -1.0], &[-0.3, 0.4]]);
        let p = RegressionParams::new(DVector::from_vec(vec![0.7, -0.1]), 2.5).unwrap();
        let b = Regression
            .cross_moment_plugin(&p, &p, &p, &[0, 1], &[0, 1], &data)
            .unwrap();
        let gram = linalg::second_moment(data.x()) / 2.5;
        assert_relative_eq!(b[(0, 0)], gram[(0, 0)], max_relative = 1e-13);
        assert_relative_eq!(b[(0, 1)], gram[(0, 1)], max_relative = 1e-13);
        assert_relative_eq!(b[(1, 1)], gram[(1, 1)], max_relative = 1e-13);
    }

    #[test]
    fn sym_kl_hand_value() {
        // beta equal, sigma^2: 1 vs 2 -> (-1/2+1/4+log(2)/2) + (-1/2+1-log(2)/2) = 1/4
        let p1 = RegressionParams::new(DVector::from_vec(vec![0.4]), 1.0).unwrap();
        let p2 = RegressionParams::new(DVector::from_vec(vec![0.4]), 2.0).unwrap();
        let m = DMatrix::from_element(1, 1, 1.0);
        let d = Regression.sym_kl(&p1, &p2, Some(&m)).unwrap();
        assert_relative_eq!(d, 0.25, max_relative = 1e-14);
        let flipped = Regression.sym_kl(&p2, &p1, Some(&m)).unwrap();
        assert_relative_eq!(d, flipped, max_relative = 1e-14);
        assert_eq!(Regression.sym_kl(&p1, &p1, Some(&m)).unwrap(), 0.0);
    }
}

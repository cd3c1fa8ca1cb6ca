//! Zero-mean Gaussian graphical model, `y ~ N(0, Omega^-1)`.
//!
//! The parameter vector indexes the precision matrix through the
//! lower-triangle-plus-diagonal layout of [`super::ParamIndex`]; with the
//! `phi = ({-0.5 Omega_jj}, {-Omega_jj'})` parametrization the score is
//! uniformly `s_(j,j')(y) = y_j y_j' - Sigma_jj'`.
//!
//! The restricted MLE (maximize `log det Omega - tr(S Omega)` subject to
//! zeros on inactive off-diagonal pairs) runs block-coordinate ascent over
//! columns, keeping `W = Omega^-1` in sync through rank-one updates. At the
//! optimum `(Omega^-1)_jj' = S_jj'` holds on every free entry.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

use super::{ggm_diagonal_positions, Model, ParamIndex};

const LN_2PI: f64 = 1.8378770664093453;

/// Maximum block-coordinate sweeps for the restricted MLE.
const MAX_SWEEPS: usize = 500;
/// Convergence threshold on the largest free-entry change per sweep.
const TOL: f64 = 1e-7;

/// Precision matrix with its cached inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct GgmParams {
    pub omega: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl GgmParams {
    /// Build from a symmetric positive-definite precision matrix.
    pub fn from_omega(omega: DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::DimensionMismatch("omega must be square".into()));
        }
        if (&omega - omega.transpose()).amax() > 1e-10 * (1.0 + omega.amax()) {
            return Err(Error::InvalidInput("omega must be symmetric".into()));
        }
        let chol = omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("omega must be positive definite".into()))?;
        let sigma = chol.inverse();
        Ok(Self { omega, sigma: linalg::symmetrize(&sigma) })
    }

    pub fn k(&self) -> usize {
        self.omega.nrows()
    }

    /// Check `sigma * omega = I` within 1e-8 (relative).
    pub fn check_inverse_pair(&self) -> Result<()> {
        let k = self.k();
        let resid = (&self.sigma * &self.omega - DMatrix::<f64>::identity(k, k)).amax();
        let scale = 1.0 + self.sigma.amax() * self.omega.amax();
        if resid > 1e-8 * scale {
            return Err(Error::Numerical(format!(
                "sigma is not the inverse of omega (residual {resid:.3e})"
            )));
        }
        Ok(())
    }
}

/// Marker type for the Gaussian-graphical-model family.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ggm;

impl Ggm {
    fn check_params(&self, params: &GgmParams, data: &Dataset) -> Result<()> {
        if params.k() != data.k() {
            return Err(Error::DimensionMismatch(format!(
                "omega is {}x{} but data has {} variables",
                params.k(),
                params.k(),
                data.k()
            )));
        }
        Ok(())
    }
}

fn decode_pair(pos: usize) -> (usize, usize) {
    match ParamIndex::ggm_from_position(pos) {
        ParamIndex::GgmEntry { row, col } => (row, col),
        ParamIndex::Coef(_) => unreachable!(),
    }
}

impl Model for Ggm {
    type Params = GgmParams;

    fn validate(&self, data: &Dataset) -> Result<()> {
        if data.l() != 0 {
            return Err(Error::InvalidInput("graphical model expects no predictor block".into()));
        }
        if data.k() < 2 {
            return Err(Error::InvalidInput(format!(
                "graphical model expects at least two variables, got {}",
                data.k()
            )));
        }
        Ok(())
    }

    fn screen_dim(&self, data: &Dataset) -> usize {
        let k = data.k();
        k * (k + 1) / 2
    }

    fn param_count(&self, data: &Dataset) -> usize {
        self.screen_dim(data)
    }

    fn always_active(&self, data: &Dataset) -> Vec<usize> {
        ggm_diagonal_positions(data.k())
    }

    fn loglik(&self, params: &GgmParams, data: &Dataset) -> Result<f64> {
        self.validate(data)?;
        self.check_params(params, data)?;
        let chol = params
            .omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("omega must be positive definite".into()))?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let n = data.n() as f64;
        let k = data.k() as f64;
        // sum_i y_i^T Omega y_i
        let yo = data.y() * &params.omega;
        let quad: f64 = yo.iter().zip(data.y().iter()).map(|(a, b)| a * b).sum();
        Ok(0.5 * n * (logdet - k * LN_2PI) - 0.5 * quad)
    }

    fn fit_restricted_mle(&self, data: &Dataset, active: &[usize]) -> Result<GgmParams> {
        self.validate(data)?;
        let k = data.k();
        let p = k * (k + 1) / 2;
        let mut support: Vec<usize> = active.to_vec();
        support.sort_unstable();
        support.dedup();
        if support.last().is_some_and(|&j| j >= p) {
            return Err(Error::InvalidInput("active position out of range".into()));
        }
        for d in ggm_diagonal_positions(k) {
            if !support.contains(&d) {
                return Err(Error::InvalidInput(
                    "GGM active set must contain every diagonal entry".into(),
                ));
            }
        }
        let s = linalg::second_moment(data.y());
        for j in 0..k {
            if !(s[(j, j)] > 0.0) {
                return Err(Error::Degenerate(format!("variable {j} has zero second moment")));
            }
        }
        // free[i][j]: off-diagonal (i, j) is unconstrained
        let mut free = vec![vec![false; k]; k];
        for &pos in &support {
            let (r, c) = decode_pair(pos);
            if r != c {
                free[r][c] = true;
                free[c][r] = true;
            }
        }
        let mut omega = DMatrix::<f64>::zeros(k, k);
        let mut w = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            omega[(j, j)] = 1.0 / s[(j, j)];
            w[(j, j)] = s[(j, j)];
        }
        if free.iter().all(|row| row.iter().all(|&f| !f)) {
            return GgmParams::from_omega(omega);
        }

        let mut last_delta = f64::INFINITY;
        for sweep in 0..MAX_SWEEPS {
            let mut max_delta: f64 = 0.0;
            for j in 0..k {
                let not_j: Vec<usize> = (0..k).filter(|&i| i != j).collect();
                let w12 = DVector::from_fn(k - 1, |i, _| w[(not_j[i], j)]);
                let w22 = w[(j, j)];
                // V = (Omega_11)^-1, from the current full inverse
                let mut v = linalg::gather(&w, &not_j, &not_j);
                v.ger(-1.0 / w22, &w12, &w12, 1.0);
                let v = linalg::symmetrize(&v);

                let fset: Vec<usize> =
                    (0..k - 1).filter(|&i| free[not_j[i]][j]).collect();
                let s22 = s[(j, j)];
                let mut omega12 = DVector::<f64>::zeros(k - 1);
                if !fset.is_empty() {
                    let vff = linalg::gather(&v, &fset, &fset);
                    let s12f = DVector::from_fn(fset.len(), |i, _| s[(not_j[fset[i]], j)]);
                    let chol = vff.cholesky().ok_or_else(|| {
                        Error::Singular(format!("column subproblem {j} lost positive definiteness"))
                    })?;
                    let z = chol.solve(&s12f);
                    for (idx, &fi) in fset.iter().enumerate() {
                        omega12[fi] = -z[idx] / s22;
                    }
                }
                let q = &v * &omega12;
                let c = 1.0 / s22;
                let omega22 = c + omega12.dot(&q);

                for (i, &gi) in not_j.iter().enumerate() {
                    max_delta = max_delta.max((omega[(gi, j)] - omega12[i]).abs());
                    omega[(gi, j)] = omega12[i];
                    omega[(j, gi)] = omega12[i];
                }
                max_delta = max_delta.max((omega[(j, j)] - omega22).abs());
                omega[(j, j)] = omega22;

                // W = Omega^-1 refreshed from V and the new column
                for (a, &ga) in not_j.iter().enumerate() {
                    for (b, &gb) in not_j.iter().enumerate() {
                        w[(ga, gb)] = v[(a, b)] + q[a] * q[b] / c;
                    }
                    w[(ga, j)] = -q[a] / c;
                    w[(j, ga)] = -q[a] / c;
                }
                w[(j, j)] = 1.0 / c;
            }
            last_delta = max_delta;
            if max_delta < TOL {
                return GgmParams::from_omega(linalg::symmetrize(&omega));
            }
            // guard against drift in the rank-one updates
            if sweep % 25 == 24 {
                if let Some(chol) = linalg::symmetrize(&omega).cholesky() {
                    w = linalg::symmetrize(&chol.inverse());
                }
            }
        }
        Err(Error::NonConvergence {
            solver: "restricted GGM MLE",
            iterations: MAX_SWEEPS,
            residual: last_delta,
        })
    }

    fn score(&self, params: &GgmParams, data: &Dataset, row: usize) -> DVector<f64> {
        let k = data.k();
        let y = data.y().row(row);
        let mut s = DVector::zeros(k * (k + 1) / 2);
        let mut pos = 0;
        for r in 0..k {
            for c in 0..=r {
                s[pos] = y[r] * y[c] - params.sigma[(r, c)];
                pos += 1;
            }
        }
        s
    }

    fn cross_moment_plugin(
        &self,
        c: &GgmParams,
        a: &GgmParams,
        b: &GgmParams,
        rows: &[usize],
        cols: &[usize],
        _data: &Dataset,
    ) -> Result<DMatrix<f64>> {
        let k = c.k();
        if a.k() != k || b.k() != k {
            return Err(Error::DimensionMismatch("parameter dimensions differ".into()));
        }
        let p = k * (k + 1) / 2;
        if rows.iter().chain(cols.iter()).any(|&pos| pos >= p) {
            return Err(Error::InvalidInput("cross-moment position out of range".into()));
        }
        let sc = &c.sigma;
        let sa = &a.sigma;
        let sb = &b.sigma;
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        for (ri, &rpos) in rows.iter().enumerate() {
            let (j, jp) = decode_pair(rpos);
            for (ci, &cpos) in cols.iter().enumerate() {
                let (l, lp) = decode_pair(cpos);
                out[(ri, ci)] = sc[(j, jp)] * sc[(l, lp)]
                    + sc[(j, l)] * sc[(jp, lp)]
                    + sc[(j, lp)] * sc[(jp, l)]
                    - sa[(j, jp)] * sc[(l, lp)]
                    - sc[(j, jp)] * sb[(l, lp)]
                    + sa[(j, jp)] * sb[(l, lp)];
            }
        }
        Ok(out)
    }

    fn sym_kl(
        &self,
        p1: &GgmParams,
        p2: &GgmParams,
        _x_moment: Option<&DMatrix<f64>>,
    ) -> Result<f64> {
        let k = p1.k();
        if p2.k() != k {
            return Err(Error::DimensionMismatch("parameter dimensions differ".into()));
        }
        for p in [p1, p2] {
            if p.omega.clone().cholesky().is_none() {
                return Err(Error::InvalidInput("omega must be positive definite".into()));
            }
        }
        // log-determinant terms cancel in the symmetric sum
        let t1 = (&p2.omega * &p1.sigma).trace();
        let t2 = (&p1.omega * &p2.sigma).trace();
        Ok(0.5 * (t1 + t2) - k as f64)
    }
}

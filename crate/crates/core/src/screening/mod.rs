//! l1-screening: penalized fits, cross-validated regularization, active sets.
//!
//! Screening runs three times per split — on `U_in`, on `V_in`, and on the
//! pooled rows — and keeps the nonzero coefficient positions of each fit
//! (capped to the largest entries when cross-validation over-selects). The
//! three sets plus their derived intersections drive everything downstream.

mod glasso;
mod lasso;

pub use glasso::{glasso_kkt_residual, GgmL1Fit};
pub use lasso::{lasso_kkt_residual, RegressionL1Fit};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng;

/// The three screened index sets plus the derived overlap structure:
/// `j = i_uv ∩ i_u ∩ i_v`, `ring_* = i_* − j`. All sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSets {
    pub i_u: Vec<usize>,
    pub i_v: Vec<usize>,
    pub i_uv: Vec<usize>,
    pub j: Vec<usize>,
    pub ring_u: Vec<usize>,
    pub ring_v: Vec<usize>,
    pub ring_uv: Vec<usize>,
}

fn sorted_dedup(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

impl ActiveSets {
    pub fn new(i_u: Vec<usize>, i_v: Vec<usize>, i_uv: Vec<usize>) -> Self {
        let i_u = sorted_dedup(i_u);
        let i_v = sorted_dedup(i_v);
        let i_uv = sorted_dedup(i_uv);
        let j: Vec<usize> = i_uv
            .iter()
            .copied()
            .filter(|p| i_u.binary_search(p).is_ok() && i_v.binary_search(p).is_ok())
            .collect();
        let minus = |set: &[usize]| -> Vec<usize> {
            set.iter().copied().filter(|p| j.binary_search(p).is_err()).collect()
        };
        let (ring_u, ring_v, ring_uv) = (minus(&i_u), minus(&i_v), minus(&i_uv));
        Self { i_u, i_v, i_uv, j, ring_u, ring_v, ring_uv }
    }

    /// Total weight count `r = |I_u| + |I_v| + |I_uv|`.
    pub fn r(&self) -> usize {
        self.i_u.len() + self.i_v.len() + self.i_uv.len()
    }
}

/// Knobs of the screening stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    /// Cross-validation folds.
    pub n_folds: usize,
    /// Log-spaced lambda grid size over `[lambda_max/100, lambda_max]`.
    pub lambda_grid_size: usize,
    /// Active sets are capped at `ceil(cap_multiplier * n)` entries, `n` the
    /// sample size of the screening run.
    pub cap_multiplier: f64,
    pub seed: u64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self { n_folds: 10, lambda_grid_size: 50, cap_multiplier: 0.2, seed: 0 }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::InvalidInput("n_folds must be at least 2".into()));
        }
        if self.lambda_grid_size < 2 {
            return Err(Error::InvalidInput("lambda_grid_size must be at least 2".into()));
        }
        if !(self.cap_multiplier > 0.0) {
            return Err(Error::InvalidInput("cap_multiplier must be positive".into()));
        }
        Ok(())
    }
}

/// l1-penalized estimation hooks used by the generic screening driver.
pub trait L1Screen: Model {
    type Fit: Clone + Send + Sync;

    /// Family-specific screenability checks (constant response, zero-variance
    /// variables).
    fn validate_for_screening(&self, data: &Dataset) -> Result<()>;

    /// Smallest lambda whose solution is fully sparse.
    fn lambda_max(&self, data: &Dataset) -> Result<f64>;

    fn fit_l1_warm(&self, data: &Dataset, lambda: f64, warm: Option<&Self::Fit>)
        -> Result<Self::Fit>;

    fn fit_l1(&self, data: &Dataset, lambda: f64) -> Result<Self::Fit> {
        self.fit_l1_warm(data, lambda, None)
    }

    /// Fits along a descending lambda path with warm starts.
    fn fit_path(&self, data: &Dataset, lambdas: &[f64]) -> Result<Vec<Self::Fit>> {
        let mut out = Vec::with_capacity(lambdas.len());
        for (i, &lam) in lambdas.iter().enumerate() {
            let warm = if i > 0 { out.get(i - 1) } else { None };
            out.push(self.fit_l1_warm(data, lam, warm)?);
        }
        Ok(out)
    }

    /// Screenable nonzero coefficients as `(position, magnitude)` on the
    /// scale used by the cap rule. Always-active positions are excluded.
    fn screen_values(&self, fit: &Self::Fit) -> Vec<(usize, f64)>;

    /// Log-likelihood of held-out data under the fit (`-inf` when the fit is
    /// degenerate for scoring purposes).
    fn heldout_loglik(&self, fit: &Self::Fit, data: &Dataset) -> f64;
}

/// Log-spaced descending grid from `lambda_max` down to `lambda_max / 100`.
pub fn lambda_grid(lambda_max: f64, size: usize) -> Vec<f64> {
    let ratio: f64 = 0.01;
    (0..size)
        .map(|i| lambda_max * ratio.powf(i as f64 / (size - 1) as f64))
        .collect()
}

/// Pick lambda by K-fold cross-validation, maximizing mean held-out
/// log-likelihood over the grid. Fold assignment is a deterministic function
/// of `config.seed`; ties prefer the sparser (larger) lambda.
pub fn select_lambda_cv<M: L1Screen>(
    model: &M,
    data: &Dataset,
    config: &ScreeningConfig,
) -> Result<f64> {
    config.validate()?;
    model.validate(data)?;
    model.validate_for_screening(data)?;
    let n = data.n();
    if n < config.n_folds {
        return Err(Error::InvalidInput(format!(
            "need at least {} rows for {}-fold CV, got {n}",
            config.n_folds, config.n_folds
        )));
    }
    let lmax = model.lambda_max(data)?;
    if !(lmax > 0.0) {
        return Err(Error::Degenerate("empty-model penalty bound is zero".into()));
    }
    let grid = lambda_grid(lmax, config.lambda_grid_size);

    let mut order: Vec<usize> = (0..n).collect();
    let mut fold_rng = rng::stream(config.seed, "cv-folds", 0);
    order.shuffle(&mut fold_rng);
    let fold_of = |i: usize| -> usize { order[i] % config.n_folds };

    let mut scores = vec![0.0f64; grid.len()];
    for fold in 0..config.n_folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of(i) != fold).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of(i) == fold).collect();
        if test_rows.is_empty() {
            continue;
        }
        let train = data.subset(&train_rows);
        let test = data.subset(&test_rows);
        let fits = model.fit_path(&train, &grid)?;
        for (gi, fit) in fits.iter().enumerate() {
            scores[gi] += model.heldout_loglik(fit, &test);
        }
    }
    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Degenerate("empty lambda grid".into()))?;
    if scores[best] == f64::NEG_INFINITY {
        return Err(Error::Degenerate("cross-validation scored every lambda as degenerate".into()));
    }
    Ok(grid[best])
}

/// Nonzero positions, capped to the `cap` largest magnitudes (ties broken by
/// smaller position). Returned sorted ascending.
pub fn active_set(values: &[(usize, f64)], cap: usize) -> Result<Vec<usize>> {
    if cap < 1 {
        return Err(Error::InvalidInput("cap must be at least 1".into()));
    }
    let mut nz: Vec<(usize, f64)> = values.iter().copied().filter(|(_, v)| *v != 0.0).collect();
    if nz.len() > cap {
        nz.sort_by(|a, b| {
            b.1.abs().partial_cmp(&a.1.abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
        });
        nz.truncate(cap);
    }
    Ok(sorted_dedup(nz.into_iter().map(|(p, _)| p).collect()))
}

fn screen_one<M: L1Screen>(
    model: &M,
    data: &Dataset,
    config: &ScreeningConfig,
    tag: &str,
) -> Result<Vec<usize>> {
    let mut run_cfg = *config;
    run_cfg.seed = rng::stream(config.seed, tag, 0).random();
    let lambda_cv = select_lambda_cv(model, data, &run_cfg)?;
    let fit = model.fit_l1(data, lambda_cv)?;
    let cap = (config.cap_multiplier * data.n() as f64).ceil().max(1.0) as usize;
    let mut act = active_set(&model.screen_values(&fit), cap)?;
    act.extend(model.always_active(data));
    Ok(sorted_dedup(act))
}

/// Run the screening procedure on `U_in`, `V_in` and their pooled rows.
pub fn screen_all<M: L1Screen>(
    model: &M,
    u_in: &Dataset,
    v_in: &Dataset,
    config: &ScreeningConfig,
) -> Result<ActiveSets> {
    if u_in.k() != v_in.k() || u_in.l() != v_in.l() || u_in.labels() != v_in.labels() {
        return Err(Error::DimensionMismatch(
            "populations must share the same columns".into(),
        ));
    }
    let pooled = u_in.vstack(v_in)?;
    let i_u = screen_one(model, u_in, config, "screen-u")?;
    let i_v = screen_one(model, v_in, config, "screen-v")?;
    let i_uv = screen_one(model, &pooled, config, "screen-uv")?;
    Ok(ActiveSets::new(i_u, i_v, i_uv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_set_examples() {
        // values (3, 0, -1, 2) at positions 0..4, cap 2 -> positions {0, 3}
        let vals = vec![(0, 3.0), (1, 0.0), (2, -1.0), (3, 2.0)];
        assert_eq!(active_set(&vals, 2).unwrap(), vec![0, 3]);
        // all-zero -> empty
        let zeros = vec![(0, 0.0), (1, 0.0)];
        assert!(active_set(&zeros, 3).unwrap().is_empty());
        // |b| tie -> smaller index wins
        let tie = vec![(1, -2.0), (2, 2.0)];
        assert_eq!(active_set(&tie, 1).unwrap(), vec![1]);
        assert!(active_set(&tie, 0).is_err());
    }

    #[test]
    fn active_sets_derived_structure() {
        let s = ActiveSets::new(vec![0, 1, 2], vec![1, 2, 3], vec![2, 1, 5]);
        assert_eq!(s.j, vec![1, 2]);
        assert_eq!(s.ring_u, vec![0]);
        assert_eq!(s.ring_v, vec![3]);
        assert_eq!(s.ring_uv, vec![5]);
        assert_eq!(s.r(), 9);
    }

    #[test]
    fn lambda_grid_spans_two_decades() {
        let g = lambda_grid(5.0, 50);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 5.0).abs() < 1e-12);
        assert!((g[49] - 0.05).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
}

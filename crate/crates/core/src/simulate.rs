//! Synthetic data generators and the false/true-positive-rate experiment
//! harness.
//!
//! Regression settings draw predictors from `N(0, Sigma)` with the AR(1)
//! covariance `Sigma_jj' = 0.5^|j-j'|` and scale the noise so that
//! `beta^T Sigma beta / sigma^2` hits the requested signal-to-noise ratio.
//! Under the alternative the two coefficient vectors share three unit
//! entries and carry `alpha_1`-valued entries at two own locations each.
//! Network settings place `k` symmetric off-diagonal entries (value 0.5
//! before rescaling), enforce a minimum eigenvalue of 0.1 and rescale to a
//! unit diagonal.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Ggm, ParamIndex, Regression};
use crate::permtest::{perm_test, PermConfig};
use crate::rng;
use crate::testing::{
    multi_split_test_with_truth, ordinary_lrt_pvalue, ScreenTruth, TestConfig,
};

/// Which data-generating process a cell uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingKind {
    /// Differential regression with synthetic AR(1) predictors.
    RegSynthetic,
    /// Differential regression with predictor rows drawn from a user matrix.
    RegExternal,
    /// Differential network.
    Ggm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Hypothesis {
    H0,
    HA,
}

/// One simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub kind: SettingKind,
    /// Rows per population.
    pub n: usize,
    /// Predictor count `l` (regression) or variable count `k` (network).
    pub dim: usize,
    /// Signal-to-noise ratio `beta^T Sigma beta / sigma^2` (regression only).
    pub snr: f64,
    /// Alternative strength: `alpha_1` coefficient value (regression) or
    /// `alpha_2` shared-edge fraction in (0, 1] (network).
    pub alpha: f64,
    pub hypothesis: Hypothesis,
    pub seed: u64,
}

impl SimSpec {
    fn validate(&self) -> Result<()> {
        match self.kind {
            SettingKind::RegSynthetic | SettingKind::RegExternal => {
                if self.dim < 7 {
                    return Err(Error::InvalidInput(
                        "regression settings need at least 7 predictors".into(),
                    ));
                }
                if !(self.snr > 0.0) {
                    return Err(Error::InvalidInput("snr must be positive".into()));
                }
            }
            SettingKind::Ggm => {
                if self.dim < 5 {
                    return Err(Error::InvalidInput(
                        "network settings need at least 5 variables".into(),
                    ));
                }
                if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                    return Err(Error::InvalidInput("alpha_2 must lie in (0, 1]".into()));
                }
            }
        }
        if self.n < 8 {
            return Err(Error::InvalidInput("need at least 8 rows per population".into()));
        }
        Ok(())
    }
}

/// Ground truth of a regression scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RegTruth {
    pub beta_u: DVector<f64>,
    pub beta_v: DVector<f64>,
    pub sigma2_u: f64,
    pub sigma2_v: f64,
    pub support_u: Vec<usize>,
    pub support_v: Vec<usize>,
    pub shared_support: Vec<usize>,
}

/// Ground truth of a network scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GgmTruth {
    pub omega_u: DMatrix<f64>,
    pub omega_v: DMatrix<f64>,
    /// Flattened positions of the true nonzero entries (incl. diagonal).
    pub support_u: Vec<usize>,
    pub support_v: Vec<usize>,
    /// `alpha_2 = 1` makes the two precision matrices coincide.
    pub degenerate_alt: bool,
}

/// AR(1) covariance `0.5^|i-j|`.
pub fn ar1_covariance(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
}

fn sample_rows(
    n: usize,
    chol_l: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> DMatrix<f64> {
    let dim = chol_l.nrows();
    let z = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    z * chol_l.transpose()
}

fn draw_distinct(rng: &mut impl Rng, upper: usize, count: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..upper).collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let at = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(at));
    }
    out
}

fn regression_coefficients(
    spec: &SimSpec,
    rng: &mut impl Rng,
) -> (DVector<f64>, DVector<f64>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let l = spec.dim;
    match spec.hypothesis {
        Hypothesis::H0 => {
            let locs = draw_distinct(rng, l, 5);
            let mut beta = DVector::zeros(l);
            for &j in &locs {
                beta[j] = 1.0;
            }
            let mut support = locs;
            support.sort_unstable();
            (beta.clone(), beta, support.clone(), support.clone(), support)
        }
        Hypothesis::HA => {
            let locs = draw_distinct(rng, l, 7);
            let shared = &locs[..3];
            let own_u = &locs[3..5];
            let own_v = &locs[5..7];
            let mut beta_u = DVector::zeros(l);
            let mut beta_v = DVector::zeros(l);
            for &j in shared {
                beta_u[j] = 1.0;
                beta_v[j] = 1.0;
            }
            for &j in own_u {
                beta_u[j] = spec.alpha;
            }
            for &j in own_v {
                beta_v[j] = spec.alpha;
            }
            let mut s_u: Vec<usize> = shared.iter().chain(own_u.iter()).copied().collect();
            let mut s_v: Vec<usize> = shared.iter().chain(own_v.iter()).copied().collect();
            let mut sh = shared.to_vec();
            s_u.sort_unstable();
            s_v.sort_unstable();
            sh.sort_unstable();
            (beta_u, beta_v, s_u, s_v, sh)
        }
    }
}

fn finish_regression(
    spec: &SimSpec,
    sigma_x: &DMatrix<f64>,
    x_u: DMatrix<f64>,
    x_v: DMatrix<f64>,
    rng: &mut impl Rng,
    coeffs: (DVector<f64>, DVector<f64>, Vec<usize>, Vec<usize>, Vec<usize>),
) -> Result<(Dataset, Dataset, RegTruth)> {
    let (beta_u, beta_v, support_u, support_v, shared_support) = coeffs;
    let sigma2_u = (beta_u.transpose() * sigma_x * &beta_u)[(0, 0)] / spec.snr;
    let sigma2_v = (beta_v.transpose() * sigma_x * &beta_v)[(0, 0)] / spec.snr;
    let labels: Vec<String> = (0..spec.dim).map(|j| format!("x{}", j + 1)).collect();
    let make = |x: DMatrix<f64>, beta: &DVector<f64>, s2: f64, r: &mut dyn FnMut() -> f64| {
        let n = x.nrows();
        let mean = &x * beta;
        let y: Vec<f64> = (0..n).map(|i| mean[i] + s2.sqrt() * r()).collect();
        Dataset::regression(y, x, labels.clone())
    };
    let mut draw_u = {
        let mut r = rng::stream(spec.seed, "reg-noise-u", 0);
        move || r.sample::<f64, _>(StandardNormal)
    };
    let mut draw_v = {
        let mut r = rng::stream(spec.seed, "reg-noise-v", 0);
        move || r.sample::<f64, _>(StandardNormal)
    };
    let _ = rng;
    let u = make(x_u, &beta_u, sigma2_u, &mut draw_u)?;
    let v = make(x_v, &beta_v, sigma2_v, &mut draw_v)?;
    Ok((u, v, RegTruth { beta_u, beta_v, sigma2_u, sigma2_v, support_u, support_v, shared_support }))
}

/// Generate one regression scenario (synthetic AR(1) predictors).
pub fn gen_regression(spec: &SimSpec) -> Result<(Dataset, Dataset, RegTruth)> {
    spec.validate()?;
    if spec.kind != SettingKind::RegSynthetic {
        return Err(Error::InvalidInput("spec is not a synthetic regression setting".into()));
    }
    let sigma = ar1_covariance(spec.dim);
    let chol = sigma.clone().cholesky().expect("AR(1) covariance is SPD").l();
    let mut rng = rng::stream(spec.seed, "reg-gen", 0);
    let coeffs = regression_coefficients(spec, &mut rng);
    let x_u = sample_rows(spec.n, &chol, &mut rng);
    let x_v = sample_rows(spec.n, &chol, &mut rng);
    finish_regression(spec, &sigma, x_u, x_v, &mut rng, coeffs)
}

/// Generate a regression scenario on rows drawn (without replacement) from a
/// user-supplied predictor matrix. The SNR is set against the pool's
/// empirical second moment.
pub fn gen_regression_external(
    spec: &SimSpec,
    x_pool: &DMatrix<f64>,
) -> Result<(Dataset, Dataset, RegTruth)> {
    spec.validate()?;
    if spec.kind != SettingKind::RegExternal {
        return Err(Error::InvalidInput("spec is not an external-design setting".into()));
    }
    if x_pool.ncols() < spec.dim {
        return Err(Error::InvalidInput(format!(
            "predictor file has {} columns, need {}",
            x_pool.ncols(),
            spec.dim
        )));
    }
    if x_pool.nrows() < spec.n {
        return Err(Error::InvalidInput(format!(
            "predictor file has {} rows, need {} per population",
            x_pool.nrows(),
            spec.n
        )));
    }
    let x_pool = x_pool.view((0, 0), (x_pool.nrows(), spec.dim)).clone_owned();
    let sigma_x = crate::linalg::second_moment(&x_pool);
    let mut rng = rng::stream(spec.seed, "reg-ext-gen", 0);
    let coeffs = regression_coefficients(spec, &mut rng);
    let rows_u = draw_distinct(&mut rng, x_pool.nrows(), spec.n);
    let rows_v = draw_distinct(&mut rng, x_pool.nrows(), spec.n);
    let pick = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), spec.dim, |i, j| x_pool[(rows[i], j)])
    };
    let (x_u, x_v) = (pick(&rows_u), pick(&rows_v));
    finish_regression(spec, &sigma_x, x_u, x_v, &mut rng, coeffs)
}

fn precision_from_pairs(k: usize, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut omega0 = DMatrix::<f64>::identity(k, k);
    for &(i, j) in pairs {
        omega0[(i, j)] = 0.5;
        omega0[(j, i)] = 0.5;
    }
    let min_eig = omega0.symmetric_eigenvalues().min();
    // (omega0 + d I) / (1 + d) has unit diagonal and min eigenvalue >= 0.1
    let d = ((0.1 - min_eig) / 0.9).max(0.0);
    (omega0 + DMatrix::identity(k, k) * d) / (1.0 + d)
}

fn ggm_support(k: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut support: Vec<usize> = (0..k)
        .map(|j| ParamIndex::GgmEntry { row: j, col: j }.position())
        .collect();
    for &(i, j) in pairs {
        let (row, col) = if i > j { (i, j) } else { (j, i) };
        support.push(ParamIndex::GgmEntry { row, col }.position());
    }
    support.sort_unstable();
    support
}

/// Generate one differential-network scenario.
pub fn gen_ggm(spec: &SimSpec) -> Result<(Dataset, Dataset, GgmTruth)> {
    spec.validate()?;
    if spec.kind != SettingKind::Ggm {
        return Err(Error::InvalidInput("spec is not a network setting".into()));
    }
    let k = spec.dim;
    let all_pairs: Vec<(usize, usize)> =
        (0..k).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let mut rng = rng::stream(spec.seed, "ggm-gen", 0);
    let (pairs_u, pairs_v, degenerate_alt) = match spec.hypothesis {
        Hypothesis::H0 => {
            let idx = draw_distinct(&mut rng, all_pairs.len(), k);
            let pairs: Vec<_> = idx.iter().map(|&i| all_pairs[i]).collect();
            (pairs.clone(), pairs, false)
        }
        Hypothesis::HA => {
            let shared_count = (k as f64 * spec.alpha).ceil() as usize;
            let own_count = k - shared_count;
            let needed = shared_count + 2 * own_count;
            if needed > all_pairs.len() {
                return Err(Error::InvalidInput(format!(
                    "cannot place {needed} distinct edges among {} pairs",
                    all_pairs.len()
                )));
            }
            let idx = draw_distinct(&mut rng, all_pairs.len(), needed);
            let shared: Vec<_> = idx[..shared_count].iter().map(|&i| all_pairs[i]).collect();
            let own_u: Vec<_> =
                idx[shared_count..shared_count + own_count].iter().map(|&i| all_pairs[i]).collect();
            let own_v: Vec<_> =
                idx[shared_count + own_count..].iter().map(|&i| all_pairs[i]).collect();
            let mut pu = shared.clone();
            pu.extend(own_u);
            let mut pv = shared;
            pv.extend(own_v);
            (pu, pv, own_count == 0)
        }
    };
    let omega_u = precision_from_pairs(k, &pairs_u);
    let omega_v = precision_from_pairs(k, &pairs_v);
    let labels: Vec<String> = (0..k).map(|j| format!("v{}", j + 1)).collect();
    let sample = |omega: &DMatrix<f64>, tag: &str| -> Result<Dataset> {
        let sigma = omega.clone().try_inverse().ok_or_else(|| {
            Error::Numerical("generated precision matrix is singular".into())
        })?;
        let chol = crate::linalg::symmetrize(&sigma)
            .cholesky()
            .ok_or_else(|| Error::Numerical("generated covariance not PD".into()))?
            .l();
        let mut r = rng::stream(spec.seed, tag, 0);
        Ok(Dataset::ggm(sample_rows(spec.n, &chol, &mut r), labels.clone())?)
    };
    let u = sample(&omega_u, "ggm-sample-u")?;
    let v = sample(&omega_v, "ggm-sample-v")?;
    let truth = GgmTruth {
        support_u: ggm_support(k, &pairs_u),
        support_v: ggm_support(k, &pairs_v),
        omega_u,
        omega_v,
        degenerate_alt,
    };
    Ok((u, v, truth))
}

/// Methods the experiment harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OrdinaryLrt,
    SingleSplit,
    MultiSplit,
    Permutation,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::OrdinaryLrt => "ordinary-lrt",
            Method::SingleSplit => "single-split",
            Method::MultiSplit => "multi-split",
            Method::Permutation => "permutation",
        }
    }
}

/// Experiment-level configuration shared by all cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub methods: Vec<Method>,
    /// Significance level of the rejection rate (reject when `p < level`).
    pub level: f64,
    pub seed: u64,
    /// Splits of the multi-split method.
    pub k_splits: usize,
    /// Permutations of the permutation baseline.
    pub n_perm: usize,
    pub gamma_min: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            methods: vec![Method::MultiSplit],
            level: 0.05,
            seed: 0,
            k_splits: 50,
            n_perm: 100,
            gamma_min: 0.05,
        }
    }
}

/// Per-(cell, method) outcome counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub kind: SettingKind,
    pub hypothesis: Hypothesis,
    pub n: usize,
    pub dim: usize,
    pub snr: f64,
    pub alpha: f64,
    pub method: String,
    pub runs: usize,
    /// Runs where the method was applicable and succeeded.
    pub evaluated: usize,
    pub rejections: usize,
    /// Rejection rate (FPR under H0, TPR under HA); `None` when never
    /// applicable.
    pub rate: Option<f64>,
    /// Binomial standard error of the rate.
    pub se: Option<f64>,
    pub not_applicable: usize,
    pub errors: usize,
    /// Mean selected joint-model size over valid splits.
    pub mean_size_i_uv: Option<f64>,
    /// Fraction of valid splits whose screened sets contain the true
    /// supports.
    pub screening_hit_rate_u: Option<f64>,
    pub screening_hit_rate_v: Option<f64>,
    pub screening_hit_rate_uv: Option<f64>,
}

/// Machine-readable experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

#[derive(Default, Clone)]
struct MethodAccum {
    evaluated: usize,
    rejections: usize,
    not_applicable: usize,
    errors: usize,
    splits: usize,
    sum_size_i_uv: f64,
    hits_u: usize,
    hits_v: usize,
    hits_uv: usize,
    hit_counted_u: usize,
    hit_counted_v: usize,
    hit_counted_uv: usize,
}

fn run_methods(
    spec: &SimSpec,
    cfg: &ExperimentConfig,
    x_pool: Option<&DMatrix<f64>>,
) -> Result<Vec<(Method, std::result::Result<Option<f64>, String>, MethodAccum)>> {
    // generate the cell's data once and reuse across methods
    enum Gen {
        Reg(Dataset, Dataset, RegTruth),
        Net(Dataset, Dataset, GgmTruth),
    }
    let generated = match spec.kind {
        SettingKind::RegSynthetic => {
            let (u, v, t) = gen_regression(spec)?;
            Gen::Reg(u, v, t)
        }
        SettingKind::RegExternal => {
            let pool = x_pool.ok_or_else(|| {
                Error::InvalidInput("external-design setting needs a predictor matrix".into())
            })?;
            let (u, v, t) = gen_regression_external(spec, pool)?;
            Gen::Reg(u, v, t)
        }
        SettingKind::Ggm => {
            let (u, v, t) = gen_ggm(spec)?;
            Gen::Net(u, v, t)
        }
    };

    let mut out = Vec::new();
    for &method in &cfg.methods {
        let mut acc = MethodAccum::default();
        let result: std::result::Result<Option<f64>, String> = match &generated {
            Gen::Reg(u, v, truth) => {
                let screen_truth = ScreenTruth {
                    support_u: truth.support_u.clone(),
                    support_v: truth.support_v.clone(),
                    support_uv: match spec.hypothesis {
                        Hypothesis::H0 => Some(truth.shared_support.clone()),
                        Hypothesis::HA => None,
                    },
                };
                eval_method(&Regression, u, v, method, spec, cfg, &screen_truth, &mut acc)
            }
            Gen::Net(u, v, truth) => {
                let screen_truth = ScreenTruth {
                    support_u: truth.support_u.clone(),
                    support_v: truth.support_v.clone(),
                    support_uv: match spec.hypothesis {
                        Hypothesis::H0 => Some(truth.support_u.clone()),
                        Hypothesis::HA => None,
                    },
                };
                eval_method(&Ggm, u, v, method, spec, cfg, &screen_truth, &mut acc)
            }
        };
        out.push((method, result, acc));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn eval_method<M>(
    model: &M,
    u: &Dataset,
    v: &Dataset,
    method: Method,
    spec: &SimSpec,
    cfg: &ExperimentConfig,
    truth: &ScreenTruth,
    acc: &mut MethodAccum,
) -> std::result::Result<Option<f64>, String>
where
    M: crate::permtest::PermStatistic,
{
    match method {
        Method::OrdinaryLrt => {
            let applicable = match spec.kind {
                SettingKind::RegSynthetic | SettingKind::RegExternal => {
                    spec.n > spec.dim + 1
                }
                SettingKind::Ggm => spec.n > spec.dim,
            };
            if !applicable {
                return Ok(None);
            }
            ordinary_lrt_pvalue(model, u, v).map(Some).map_err(|e| e.to_string())
        }
        Method::SingleSplit | Method::MultiSplit => {
            let k = if method == Method::SingleSplit { 1 } else { cfg.k_splits };
            let tc = TestConfig {
                k_splits: k,
                gamma_min: cfg.gamma_min,
                seed: spec.seed ^ 0x5117,
                ..TestConfig::default()
            };
            match multi_split_test_with_truth(model, u, v, &tc, Some(truth)) {
                Ok(report) => {
                    for s in report.splits.iter().filter_map(|s| s.outcome.as_ref()) {
                        acc.splits += 1;
                        acc.sum_size_i_uv += s.diagnostics.size_i_uv as f64;
                        if let Some(h) = s.diagnostics.screening_hit_u {
                            acc.hit_counted_u += 1;
                            acc.hits_u += h as usize;
                        }
                        if let Some(h) = s.diagnostics.screening_hit_v {
                            acc.hit_counted_v += 1;
                            acc.hits_v += h as usize;
                        }
                        if let Some(h) = s.diagnostics.screening_hit_uv {
                            acc.hit_counted_uv += 1;
                            acc.hits_uv += h as usize;
                        }
                    }
                    Ok(Some(report.aggregated_pvalue))
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Method::Permutation => {
            let pc = PermConfig {
                n_perm: cfg.n_perm,
                seed: spec.seed ^ 0x9e37,
                ..PermConfig::default()
            };
            perm_test(model, u, v, &pc).map(|r| Some(r.pvalue)).map_err(|e| e.to_string())
        }
    }
}

/// Evaluate every method on `runs` independent replicates of each cell.
/// Per-run errors are recorded, never abort the cell.
pub fn run_experiment(
    cells: &[SimSpec],
    cfg: &ExperimentConfig,
    x_pool: Option<&DMatrix<f64>>,
) -> Result<ExperimentTable> {
    if cfg.runs < 1 {
        return Err(Error::InvalidInput("runs must be at least 1".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidInput("level must lie in (0, 1)".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidInput("no methods selected".into()));
    }
    let mut results = Vec::new();
    for (cell_idx, cell) in cells.iter().enumerate() {
        cell.validate()?;
        // per-run outputs gathered in run order, then reduced sequentially
        // so that thread count never changes the table
        let per_run: Vec<Result<Vec<(Method, std::result::Result<Option<f64>, String>, MethodAccum)>>> =
            (0..cfg.runs as u64)
                .into_par_iter()
                .map(|run| {
                    let mut spec = *cell;
                    spec.seed = rng::stream(cfg.seed, "sim-run", (cell_idx as u64) << 32 | run)
                        .random();
                    run_methods(&spec, cfg, x_pool)
                })
                .collect();
        let mut accum: Vec<MethodAccum> = vec![MethodAccum::default(); cfg.methods.len()];
        for run in per_run {
            let run = run?;
            for (mi, (_, outcome, acc)) in run.into_iter().enumerate() {
                let slot = &mut accum[mi];
                slot.splits += acc.splits;
                slot.sum_size_i_uv += acc.sum_size_i_uv;
                slot.hits_u += acc.hits_u;
                slot.hits_v += acc.hits_v;
                slot.hits_uv += acc.hits_uv;
                slot.hit_counted_u += acc.hit_counted_u;
                slot.hit_counted_v += acc.hit_counted_v;
                slot.hit_counted_uv += acc.hit_counted_uv;
                match outcome {
                    Ok(Some(p)) => {
                        slot.evaluated += 1;
                        if p < cfg.level {
                            slot.rejections += 1;
                        }
                    }
                    Ok(None) => slot.not_applicable += 1,
                    Err(_) => slot.errors += 1,
                }
            }
        }
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let a = &accum[mi];
            let rate = (a.evaluated > 0).then(|| a.rejections as f64 / a.evaluated as f64);
            let se = rate.map(|r| (r * (1.0 - r) / a.evaluated as f64).sqrt());
            results.push(CellResult {
                kind: cell.kind,
                hypothesis: cell.hypothesis,
                n: cell.n,
                dim: cell.dim,
                snr: cell.snr,
                alpha: cell.alpha,
                method: method.name().to_string(),
                runs: cfg.runs,
                evaluated: a.evaluated,
                rejections: a.rejections,
                rate,
                se,
                not_applicable: a.not_applicable,
                errors: a.errors,
                mean_size_i_uv: (a.splits > 0).then(|| a.sum_size_i_uv / a.splits as f64),
                screening_hit_rate_u: (a.hit_counted_u > 0)
                    .then(|| a.hits_u as f64 / a.hit_counted_u as f64),
                screening_hit_rate_v: (a.hit_counted_v > 0)
                    .then(|| a.hits_v as f64 / a.hit_counted_v as f64),
                screening_hit_rate_uv: (a.hit_counted_uv > 0)
                    .then(|| a.hits_uv as f64 / a.hit_counted_uv as f64),
            });
        }
    }
    Ok(ExperimentTable { config: cfg.clone(), cells: results })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg_spec(hyp: Hypothesis, seed: u64) -> SimSpec {
        SimSpec {
            kind: SettingKind::RegSynthetic,
            n: 60,
            dim: 10,
            snr: 10.0,
            alpha: 0.5,
            hypothesis: hyp,
            seed,
        }
    }

    #[test]
    fn h0_betas_equal_with_five_units() {
        let (_, _, truth) = gen_regression(&reg_spec(Hypothesis::H0, 4)).unwrap();
        assert_eq!(truth.beta_u, truth.beta_v);
        assert_eq!(truth.beta_u.iter().filter(|v| **v == 1.0).count(), 5);
        assert_eq!(truth.support_u.len(), 5);
    }

    #[test]
    fn ha_supports_overlap_in_three() {
        let (_, _, truth) = gen_regression(&reg_spec(Hypothesis::HA, 9)).unwrap();
        assert_eq!(truth.support_u.len(), 5);
        assert_eq!(truth.support_v.len(), 5);
        let inter: Vec<usize> = truth
            .support_u
            .iter()
            .filter(|p| truth.support_v.contains(p))
            .copied()
            .collect();
        assert_eq!(inter.len(), 3);
        assert_eq!(inter, truth.shared_support);
        // symmetric difference has exactly 4 positions
        let sym_diff = truth.support_u.len() + truth.support_v.len() - 2 * inter.len();
        assert_eq!(sym_diff, 4);
    }

    #[test]
    fn snr_holds_analytically() {
        let spec = reg_spec(Hypothesis::H0, 11);
        let (_, _, truth) = gen_regression(&spec).unwrap();
        let sigma = ar1_covariance(spec.dim);
        // direct evaluation of beta' Sigma beta over the support
        let mut quad = 0.0;
        for &i in &truth.support_u {
            for &j in &truth.support_u {
                quad += sigma[(i, j)];
            }
        }
        assert!((truth.sigma2_u - quad / spec.snr).abs() < 1e-12);
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = reg_spec(Hypothesis::HA, 21);
        let (u1, v1, t1) = gen_regression(&spec).unwrap();
        let (u2, v2, t2) = gen_regression(&spec).unwrap();
        assert_eq!(u1, u2);
        assert_eq!(v1, v2);
        assert_eq!(t1, t2);
        let mut other = spec;
        other.seed = 22;
        let (u3, _, _) = gen_regression(&other).unwrap();
        assert_ne!(u1, u3);
    }

    #[test]
    fn ggm_construction_targets_hold() {
        let spec = SimSpec {
            kind: SettingKind::Ggm,
            n: 50,
            dim: 8,
            snr: 1.0,
            alpha: 0.5,
            hypothesis: Hypothesis::H0,
            seed: 3,
        };
        let (_, _, truth) = gen_ggm(&spec).unwrap();
        assert_eq!(truth.omega_u, truth.omega_v);
        let eig = truth.omega_u.symmetric_eigenvalues();
        assert!(eig.min() >= 0.1 - 1e-9, "{}", eig.min());
        for j in 0..8 {
            assert!((truth.omega_u[(j, j)] - 1.0).abs() < 1e-12);
        }
        // k symmetric pairs placed
        let off: usize = truth.support_u.len() - 8;
        assert_eq!(off, 8);
    }

    #[test]
    fn ggm_alpha_one_flags_degenerate_alt() {
        let spec = SimSpec {
            kind: SettingKind::Ggm,
            n: 50,
            dim: 6,
            snr: 1.0,
            alpha: 1.0,
            hypothesis: Hypothesis::HA,
            seed: 5,
        };
        let (_, _, truth) = gen_ggm(&spec).unwrap();
        assert!(truth.degenerate_alt);
        assert_eq!(truth.omega_u, truth.omega_v);
    }

    #[test]
    fn experiment_smoke_single_cell() {
        let cell = SimSpec {
            kind: SettingKind::RegSynthetic,
            n: 40,
            dim: 8,
            snr: 10.0,
            alpha: 0.5,
            hypothesis: Hypothesis::H0,
            seed: 0,
        };
        let cfg = ExperimentConfig {
            runs: 2,
            methods: vec![Method::OrdinaryLrt, Method::SingleSplit],
            seed: 42,
            ..Default::default()
        };
        let table = run_experiment(&[cell], &cfg, None).unwrap();
        assert_eq!(table.cells.len(), 2);
        let again = run_experiment(&[cell], &cfg, None).unwrap();
        assert_eq!(table, again);
    }
}

//! Small dense linear-algebra helpers shared by the estimation code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge factor applied once when a block is singular or badly conditioned:
/// `RIDGE_EPS * (trace/dim)` is added to the diagonal.
pub const RIDGE_EPS: f64 = 1e-8;

/// Counts of numerical rescue events during weight estimation. Surfaced in
/// split diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NumericEvents {
    /// Diagonal jitter added before an inversion.
    pub jitter_count: usize,
    /// Eigenvalues clamped back into [0, 1].
    pub clamp_count: usize,
    /// Largest clamp applied (absolute distance to the valid interval).
    pub max_clamp: f64,
}

impl NumericEvents {
    pub fn absorb(&mut self, other: &NumericEvents) {
        self.jitter_count += other.jitter_count;
        self.clamp_count += other.clamp_count;
        self.max_clamp = self.max_clamp.max(other.max_clamp);
    }
}

/// Extract the submatrix `m[rows, cols]`.
pub fn gather(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// `(m + m^T) / 2`, used to remove round-off asymmetry before symmetric solves.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

fn with_ridge(m: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = m.nrows();
    let mean_diag = m.trace() / dim as f64;
    let bump = RIDGE_EPS * if mean_diag.abs() > 0.0 { mean_diag.abs() } else { 1.0 };
    let mut out = m.clone();
    for i in 0..dim {
        out[(i, i)] += bump;
    }
    out
}

fn inverse_ok(m: &DMatrix<f64>, inv: &DMatrix<f64>) -> bool {
    let dim = m.nrows();
    let resid = m * inv - DMatrix::<f64>::identity(dim, dim);
    let scale = 1.0 + m.amax();
    resid.amax().is_finite() && resid.amax() <= 1e-6 * scale.max(1.0)
}

/// Invert a general square matrix, adding one round of diagonal ridge when the
/// plain inversion fails or leaves a large residual.
pub fn invert_with_jitter(
    m: &DMatrix<f64>,
    label: &str,
    events: &mut NumericEvents,
) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(inv) = m.clone().try_inverse() {
        if inverse_ok(m, &inv) {
            return Ok(inv);
        }
    }
    events.jitter_count += 1;
    let bumped = with_ridge(m);
    if let Some(inv) = bumped.clone().try_inverse() {
        if inverse_ok(&bumped, &inv) {
            return Ok(inv);
        }
    }
    Err(Error::Singular(format!("{label} is singular beyond jitter rescue")))
}

/// Cholesky factor of a symmetric positive-definite matrix, with one round of
/// diagonal ridge on failure.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    label: &str,
    events: &mut NumericEvents,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol);
    }
    events.jitter_count += 1;
    with_ridge(m)
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{label} is not positive definite beyond jitter rescue")))
}

/// Eigenvalues of `s * t^-1` with `s` symmetric PSD and `t` symmetric PD,
/// computed through the symmetric matrix `L^-1 s L^-T` where `t = L L^T`.
/// Keeps the spectrum real by construction.
pub fn eigvals_spd_product(
    s: &DMatrix<f64>,
    t: &DMatrix<f64>,
    label: &str,
    events: &mut NumericEvents,
) -> Result<Vec<f64>> {
    let dim = s.nrows();
    if dim == 0 {
        return Ok(Vec::new());
    }
    if t.nrows() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{label}: s is {dim}x{dim} but t is {}x{}",
            t.nrows(),
            t.ncols()
        )));
    }
    let chol = cholesky_with_jitter(&symmetrize(t), label, events)?;
    let l = chol.l();
    // w = L^-1 s L^-T
    let mut w = symmetrize(s);
    if !l.solve_lower_triangular_mut(&mut w) {
        return Err(Error::Singular(format!("{label}: triangular solve failed")));
    }
    let mut wt = w.transpose();
    if !l.solve_lower_triangular_mut(&mut wt) {
        return Err(Error::Singular(format!("{label}: triangular solve failed")));
    }
    let sym = symmetrize(&wt);
    let eig = sym.symmetric_eigenvalues();
    Ok(eig.iter().copied().collect())
}

/// Solve the least-squares normal equations `(x^T x) b = x^T y` by Cholesky.
pub fn solve_normal_equations(xtx: &DMatrix<f64>, xty: &DVector<f64>) -> Option<DVector<f64>> {
    xtx.clone().cholesky().map(|c| c.solve(xty))
}

/// Empirical second-moment matrix `x^T x / n` (no centering).
pub fn second_moment(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    (x.transpose() * x) / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_picks_entries() {
        let m = DMatrix::from_row_slice(3, 3, &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let g = gather(&m, &[0, 2], &[1]);
        assert_eq!(g, DMatrix::from_row_slice(2, 1, &[2., 8.]));
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1., 1., 1., 1.]);
        let mut ev = NumericEvents::default();
        // Rank-1: plain inverse fails, ridge makes it solvable.
        let inv = invert_with_jitter(&m, "test", &mut ev).unwrap();
        assert_eq!(ev.jitter_count, 1);
        assert!(inv[(0, 0)].is_finite());
    }

    #[test]
    fn spd_product_matches_general_eigensolver() {
        let a = DMatrix::from_row_slice(3, 3, &[2., 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let s = &a * a.transpose();
        let b = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, 0.0, 0.2, 2.0, 0.3, 0.0, 0.3, 1.2]);
        let t = &b * b.transpose();
        let mut ev = NumericEvents::default();
        let mut ours = eigvals_spd_product(&s, &t, "test", &mut ev).unwrap();
        ours.sort_by(f64::total_cmp);
        let prod = &s * t.try_inverse().unwrap();
        let mut general: Vec<f64> = prod.complex_eigenvalues().iter().map(|c| c.re).collect();
        general.sort_by(f64::total_cmp);
        for (u, v) in ours.iter().zip(general.iter()) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }
}

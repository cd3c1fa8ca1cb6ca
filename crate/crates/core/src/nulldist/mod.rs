//! Estimated null distribution of the restricted likelihood ratio.
//!
//! Under the null the statistic converges to a weighted sum of r independent
//! chi-square(1) variables, `r = |I_u| + |I_v| + |I_uv|`. The weights are the
//! eigenvalues of a block matrix `W` assembled from score cross-moments; this
//! module provides both the direct eigensolve of `W` (diagnostic path) and
//! the structured characterization used in production:
//!
//! * `2 |J|` weights are zero,
//! * a forced count of +1 / -1 weights depending on whether the individual
//!   model or the joint model is larger,
//! * the rest come in `±sqrt(1 - mu_j)` pairs, with `mu_j` eigenvalues of a
//!   small PSD * PD^-1 product of Schur-complement (`Q`) blocks.

mod wchisq;

pub use wchisq::{pvalue, wchisq_cdf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, NumericEvents};
use crate::screening::ActiveSets;

/// Tolerated overshoot of `mu` outside `[0, 1]` before erroring.
const MU_CLAMP: f64 = 1e-6;

/// Counts of the Proposition-2 weight decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightStructure {
    pub n_zero: usize,
    pub n_plus_one: usize,
    pub n_minus_one: usize,
    pub n_paired: usize,
}

/// The weight vector of the null distribution `Psi_r(.; nu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullWeights {
    pub nu: Vec<f64>,
    pub r: usize,
    pub structure: WeightStructure,
}

/// Schur-complement cross-moment blocks for one population `c`:
/// `Q^c` over the ring index sets, after projecting out the common set `J`.
#[derive(Debug, Clone)]
pub struct PopulationQ {
    /// `Q^c_{ring_c, ring_c}` (scores at the population's own fit).
    pub ring_own: DMatrix<f64>,
    /// `Q^c_{ring_uv, ring_uv}` (scores at the joint fit).
    pub ring_uv: DMatrix<f64>,
    /// `Q^c_{ring_uv, ring_c}` (joint-fit rows, own-fit columns).
    pub cross: DMatrix<f64>,
}

/// Per-population Q blocks feeding [`weights_prop2`].
#[derive(Debug, Clone)]
pub struct QBlocks {
    pub u: PopulationQ,
    pub v: PopulationQ,
}

/// Full cross-moment blocks over the raw index sets feeding
/// [`weights_direct`].
#[derive(Debug, Clone)]
pub struct DirectBlocks {
    /// `B^u_{I_u I_u}`.
    pub b_uu: DMatrix<f64>,
    /// `B^v_{I_v I_v}`.
    pub b_vv: DMatrix<f64>,
    /// `B^u_{I_uv I_uv}`.
    pub b_joint_u: DMatrix<f64>,
    /// `B^v_{I_uv I_uv}`.
    pub b_joint_v: DMatrix<f64>,
    /// `B^u_{I_uv I_u}`.
    pub b_cross_u: DMatrix<f64>,
    /// `B^v_{I_uv I_v}`.
    pub b_cross_v: DMatrix<f64>,
}

/// Schur complement `B_ab - B_aJ B_JJ^-1 B_Jb` of a block matrix laid out
/// J-first: `b_full` covers `(J u ring_a) x (J u ring_b)`.
///
/// Equals the covariance of the residuals left after regressing the ring
/// coordinates on the J coordinates.
pub fn compute_q(
    b_full: &DMatrix<f64>,
    j_size: usize,
    events: &mut NumericEvents,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = b_full.shape();
    if j_size > rows || j_size > cols {
        return Err(Error::DimensionMismatch(format!(
            "J block of size {j_size} exceeds {rows}x{cols} input"
        )));
    }
    let na = rows - j_size;
    let nb = cols - j_size;
    if j_size == 0 {
        return Ok(b_full.clone());
    }
    let b_jj = b_full.view((0, 0), (j_size, j_size)).clone_owned();
    let b_aj = b_full.view((j_size, 0), (na, j_size)).clone_owned();
    let b_jb = b_full.view((0, j_size), (j_size, nb)).clone_owned();
    let b_ab = b_full.view((j_size, j_size), (na, nb)).clone_owned();
    let inv = linalg::invert_with_jitter(&b_jj, "B_JJ", events)?;
    Ok(b_ab - b_aj * inv * b_jb)
}

fn clamp_mu(mu: f64, events: &mut NumericEvents) -> Result<f64> {
    if !mu.is_finite() {
        return Err(Error::Numerical(format!("non-finite eigenvalue {mu}")));
    }
    if (0.0..=1.0).contains(&mu) {
        return Ok(mu);
    }
    if mu < 0.0 && mu >= -MU_CLAMP {
        events.clamp_count += 1;
        events.max_clamp = events.max_clamp.max(-mu);
        return Ok(0.0);
    }
    if mu > 1.0 && mu <= 1.0 + MU_CLAMP {
        events.clamp_count += 1;
        events.max_clamp = events.max_clamp.max(mu - 1.0);
        return Ok(1.0);
    }
    Err(Error::Numerical(format!("eigenvalue {mu} outside [0, 1] beyond clamping tolerance")))
}

fn paired_weights(mus: &[f64], events: &mut NumericEvents) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * mus.len());
    let mut sorted = mus.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &mu in &sorted {
        let m = clamp_mu(mu, events)?;
        let w = (1.0 - m).sqrt();
        out.push(w);
        out.push(-w);
    }
    Ok(out)
}

/// Estimated weights through the eigenvalue characterization. `q` must be
/// assembled from held-out data; the branch is picked by the set sizes (the
/// equality case uses the first branch with a zero forced-ones count).
pub fn weights_prop2(
    q: &QBlocks,
    sets: &ActiveSets,
    events: &mut NumericEvents,
) -> Result<NullWeights> {
    let (r_u, r_v, r_uv) = (sets.i_u.len(), sets.i_v.len(), sets.i_uv.len());
    let jn = sets.j.len();
    let r = r_u + r_v + r_uv;
    let mut nu = vec![0.0; 2 * jn];

    let structure;
    if r_u + r_v >= r_uv {
        let ones = r_u + r_v - r_uv;
        nu.extend(std::iter::repeat_n(1.0, ones));
        let n_uv = sets.ring_uv.len();
        let mut mus = Vec::new();
        if n_uv > 0 {
            let mut s = DMatrix::<f64>::zeros(n_uv, n_uv);
            for pop in [&q.u, &q.v] {
                if pop.ring_own.nrows() == 0 {
                    continue;
                }
                let chol =
                    linalg::cholesky_with_jitter(&linalg::symmetrize(&pop.ring_own), "Q_ring", events)?;
                let solved = chol.solve(&pop.cross.transpose());
                s += &pop.cross * solved;
            }
            let t = linalg::symmetrize(&(&q.u.ring_uv + &q.v.ring_uv));
            mus = linalg::eigvals_spd_product(&s, &t, "Q_ring_uv sum", events)?;
        }
        let paired = paired_weights(&mus, events)?;
        structure = WeightStructure {
            n_zero: 2 * jn,
            n_plus_one: ones,
            n_minus_one: 0,
            n_paired: paired.len(),
        };
        nu.extend(paired);
    } else {
        let minus_ones = r_uv - (r_u + r_v) + jn;
        let plus_ones = jn;
        nu.extend(std::iter::repeat_n(1.0, plus_ones));
        nu.extend(std::iter::repeat_n(-1.0, minus_ones));
        let (n_u, n_v) = (sets.ring_u.len(), sets.ring_v.len());
        let mut mus = Vec::new();
        if n_u + n_v > 0 {
            let t = linalg::symmetrize(&(&q.u.ring_uv + &q.v.ring_uv));
            let chol = linalg::cholesky_with_jitter(&t, "Q_ring_uv sum", events)?;
            // M = [P_u P_v], K = M^T T^-1 M
            let n_uv = sets.ring_uv.len();
            let mut m = DMatrix::<f64>::zeros(n_uv, n_u + n_v);
            m.view_mut((0, 0), (n_uv, n_u)).copy_from(&q.u.cross);
            m.view_mut((0, n_u), (n_uv, n_v)).copy_from(&q.v.cross);
            let k = m.transpose() * chol.solve(&m);
            let mut d = DMatrix::<f64>::zeros(n_u + n_v, n_u + n_v);
            d.view_mut((0, 0), (n_u, n_u)).copy_from(&q.u.ring_own);
            d.view_mut((n_u, n_u), (n_v, n_v)).copy_from(&q.v.ring_own);
            mus = linalg::eigvals_spd_product(&k, &d, "blockdiag Q_ring", events)?;
        }
        let paired = paired_weights(&mus, events)?;
        structure = WeightStructure {
            n_zero: 2 * jn,
            n_plus_one: plus_ones,
            n_minus_one: minus_ones,
            n_paired: paired.len(),
        };
        nu.extend(paired);
    }

    if nu.len() != r {
        return Err(Error::Numerical(format!(
            "weight count {} does not match r = {r}",
            nu.len()
        )));
    }
    Ok(NullWeights { nu, r, structure })
}

fn checked_inverse(m: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{label} is singular")))?;
    let dim = m.nrows();
    let resid = (m * &inv - DMatrix::<f64>::identity(dim, dim)).amax();
    if !resid.is_finite() || resid > 1e-6 * (1.0 + m.amax()) {
        return Err(Error::Singular(format!("{label} is numerically singular")));
    }
    Ok(inv)
}

/// Weights through the direct eigensolve of the full `W` matrix. Kept as the
/// testing/diagnostic path; the structured path above estimates better.
pub fn weights_direct(blocks: &DirectBlocks) -> Result<NullWeights> {
    let r_u = blocks.b_uu.nrows();
    let r_v = blocks.b_vv.nrows();
    let r_uv = blocks.b_joint_u.nrows();
    if blocks.b_cross_u.shape() != (r_uv, r_u) || blocks.b_cross_v.shape() != (r_uv, r_v) {
        return Err(Error::DimensionMismatch("cross-block shapes inconsistent".into()));
    }
    let r = r_u + r_v + r_uv;
    let ind = r_u + r_v;

    let mut b_ind = DMatrix::<f64>::zeros(ind, ind);
    b_ind.view_mut((0, 0), (r_u, r_u)).copy_from(&blocks.b_uu);
    b_ind.view_mut((r_u, r_u), (r_v, r_v)).copy_from(&blocks.b_vv);
    let b_joint = &blocks.b_joint_u + &blocks.b_joint_v;

    let mut b_gf = DMatrix::<f64>::zeros(r_uv, ind);
    b_gf.view_mut((0, 0), (r_uv, r_u)).copy_from(&blocks.b_cross_u);
    b_gf.view_mut((0, r_u), (r_uv, r_v)).copy_from(&blocks.b_cross_v);
    let b_fg = b_gf.transpose();

    let inv_ind = checked_inverse(&b_ind, "B_M_ind")?;
    let inv_joint = checked_inverse(&b_joint, "B_M_joint")?;

    let mut w = DMatrix::<f64>::zeros(r, r);
    w.view_mut((0, 0), (ind, ind))
        .copy_from(&DMatrix::<f64>::identity(ind, ind));
    w.view_mut((0, ind), (ind, r_uv)).copy_from(&(&b_fg * &inv_joint));
    w.view_mut((ind, 0), (r_uv, ind)).copy_from(&(&b_gf * &inv_ind));
    w.view_mut((ind, ind), (r_uv, r_uv))
        .copy_from(&(-DMatrix::<f64>::identity(r_uv, r_uv)));

    let eig = w.complex_eigenvalues();
    let mut nu = Vec::with_capacity(r);
    for c in eig.iter() {
        if c.im.abs() > 1e-8 {
            return Err(Error::Numerical(format!(
                "complex eigenvalue {} + {}i in W",
                c.re, c.im
            )));
        }
        nu.push(c.re);
    }
    nu.sort_by(|a, b| b.total_cmp(a));
    let n_zero = nu.iter().filter(|v| v.abs() <= 1e-8).count();
    let n_plus_one = nu.iter().filter(|v| (**v - 1.0).abs() <= 1e-8).count();
    let n_minus_one = nu.iter().filter(|v| (**v + 1.0).abs() <= 1e-8).count();
    Ok(NullWeights {
        nu,
        r,
        structure: WeightStructure {
            n_zero,
            n_plus_one,
            n_minus_one,
            n_paired: r - n_zero - n_plus_one - n_minus_one,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream(seed, "nulldist-spd", 0);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn compute_q_empty_j_is_identity() {
        let b = random_spd(4, 1);
        let mut ev = NumericEvents::default();
        let q = compute_q(&b, 0, &mut ev).unwrap();
        assert_eq!(q, b);
    }

    #[test]
    fn compute_q_matches_regression_residual_oracle() {
        // Oracle: solve the normal equations for the J-regression explicitly
        // and form the residual covariance, without the inverse formula.
        let b = random_spd(6, 2);
        let jn = 2;
        let mut ev = NumericEvents::default();
        let q = compute_q(&b, jn, &mut ev).unwrap();

        let b_jj = b.view((0, 0), (jn, jn)).clone_owned();
        let b_j_rest = b.view((0, jn), (jn, 4)).clone_owned();
        let theta = b_jj.lu().solve(&b_j_rest).unwrap();
        let oracle = b.view((jn, jn), (4, 4)).clone_owned()
            - b.view((jn, 0), (4, jn)).clone_owned() * theta;
        assert!((&q - &oracle).amax() < 1e-10);
    }

    #[test]
    fn compute_q_schur_of_spd_is_psd() {
        let b = random_spd(5, 3);
        let mut ev = NumericEvents::default();
        let q = compute_q(&b, 2, &mut ev).unwrap();
        let eig = linalg::symmetrize(&q).symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e > -1e-10), "{eig}");
    }

    #[test]
    fn nested_joint_gives_plain_chi_square() {
        // I_uv inside J: weights reduce to |I_u|+|I_v|-|I_uv| ones + 2|J| zeros
        let sets = ActiveSets::new(vec![0, 1, 2], vec![0, 1, 2], vec![0, 1]);
        assert!(sets.ring_uv.is_empty());
        let empty_cross = DMatrix::zeros(0, 1);
        let q = QBlocks {
            u: PopulationQ {
                ring_own: random_spd(1, 4),
                ring_uv: DMatrix::zeros(0, 0),
                cross: empty_cross.clone(),
            },
            v: PopulationQ {
                ring_own: random_spd(1, 5),
                ring_uv: DMatrix::zeros(0, 0),
                cross: empty_cross,
            },
        };
        let mut ev = NumericEvents::default();
        let w = weights_prop2(&q, &sets, &mut ev).unwrap();
        assert_eq!(w.r, 8);
        assert_eq!(w.nu.iter().filter(|v| **v == 0.0).count(), 4);
        assert_eq!(w.nu.iter().filter(|v| **v == 1.0).count(), 4);
    }

    #[test]
    fn empty_rings_give_chi_square_difference() {
        // I_u = I_v = J, larger I_uv: |J| plus-ones and |I_uv|-|J| minus-ones
        let sets = ActiveSets::new(vec![0, 1], vec![0, 1], vec![0, 1, 2, 3, 4]);
        assert_eq!(sets.j.len(), 2);
        assert_eq!(sets.ring_uv.len(), 3);
        let q = QBlocks {
            u: PopulationQ {
                ring_own: DMatrix::zeros(0, 0),
                ring_uv: random_spd(3, 6),
                cross: DMatrix::zeros(3, 0),
            },
            v: PopulationQ {
                ring_own: DMatrix::zeros(0, 0),
                ring_uv: random_spd(3, 7),
                cross: DMatrix::zeros(3, 0),
            },
        };
        let mut ev = NumericEvents::default();
        let w = weights_prop2(&q, &sets, &mut ev).unwrap();
        assert_eq!(w.r, 9);
        assert_eq!(w.structure.n_zero, 4);
        assert_eq!(w.structure.n_plus_one, 2);
        assert_eq!(w.structure.n_minus_one, 3);
        assert_eq!(w.structure.n_paired, 0);
    }

    #[test]
    fn direct_identity_blocks_give_plus_minus_ones() {
        let blocks = DirectBlocks {
            b_uu: DMatrix::identity(2, 2),
            b_vv: DMatrix::identity(3, 3),
            b_joint_u: DMatrix::identity(4, 4) * 0.5,
            b_joint_v: DMatrix::identity(4, 4) * 0.5,
            b_cross_u: DMatrix::zeros(4, 2),
            b_cross_v: DMatrix::zeros(4, 3),
        };
        let w = weights_direct(&blocks).unwrap();
        assert_eq!(w.structure.n_plus_one, 5);
        assert_eq!(w.structure.n_minus_one, 4);
        assert_eq!(w.structure.n_zero, 0);
    }

    #[test]
    fn direct_eigenvalues_invariant_under_index_reordering() {
        let b = random_spd(6, 8);
        let pick = |rows: &[usize], cols: &[usize]| linalg::gather(&b, rows, cols);
        let make = |iu: &[usize], iv: &[usize], iuv: &[usize]| DirectBlocks {
            b_uu: pick(iu, iu),
            b_vv: pick(iv, iv),
            b_joint_u: pick(iuv, iuv),
            b_joint_v: pick(iuv, iuv),
            b_cross_u: pick(iuv, iu),
            b_cross_v: pick(iuv, iv),
        };
        let a = weights_direct(&make(&[0, 1], &[1, 2], &[0, 1, 3])).unwrap();
        let bw = weights_direct(&make(&[1, 0], &[2, 1], &[3, 1, 0])).unwrap();
        let mut na = a.nu.clone();
        let mut nb = bw.nu.clone();
        na.sort_by(f64::total_cmp);
        nb.sort_by(f64::total_cmp);
        for (x, y) in na.iter().zip(nb.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

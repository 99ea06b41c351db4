//! Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! The matrix is processed in its thinner orientation: when `cols > rows`
//! the transpose is orthogonalized and the roles of the factors swapped at
//! the end. Column pairs are rotated until every pair is orthogonal to
//! working precision; after [`MAX_SWEEPS`] sweeps the decomposition fails.

use crate::error::{Error, Result};
use crate::linalg::matrix::{axpy, dot, norm};
use crate::linalg::DenseMatrix;

pub const MAX_SWEEPS: usize = 60;

/// Relative orthogonality target for a column pair, `|⟨a,b⟩| ≤ tol·‖a‖‖b‖`.
const PAIR_TOLERANCE: f64 = 1e-15;

/// Number of triples to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdRank {
    Full,
    Top(usize),
}

/// `M ≈ Σᵢ σᵢ uᵢ vᵢᵀ`, singular values non-increasing; `left` is rows×r and
/// `right` is cols×r with orthonormal columns.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn left_vector(&self, i: usize) -> Vec<f64> {
        self.left.col(i)
    }

    pub fn right_vector(&self, i: usize) -> Vec<f64> {
        self.right.col(i)
    }

    /// `Σᵢ σᵢ uᵢ vᵢᵀ` over the retained triples.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.left.rows(), self.right.rows());
        for i in 0..self.rank() {
            out.add_outer(self.singular_values[i], &self.left.col(i), &self.right.col(i));
        }
        out
    }
}

pub fn svd(m: &DenseMatrix, rank: SvdRank) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    let transposed = m.cols() > m.rows();
    let work = if transposed { m.transpose() } else { m.clone() };
    let (p, q) = work.shape();

    let mut us: Vec<Vec<f64>> = (0..q).map(|j| work.col(j)).collect();
    let mut vs: Vec<Vec<f64>> = (0..q)
        .map(|j| {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            e
        })
        .collect();

    let fro = m.frobenius_norm();
    let floor = (f64::EPSILON * fro).powi(2);
    let mut norms2: Vec<f64> = us.iter().map(|u| dot(u, u)).collect();

    let mut converged = q <= 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..q {
            for j in i + 1..q {
                let alpha = norms2[i];
                let beta = norms2[j];
                let gamma = dot(&us[i], &us[j]);
                if gamma.abs() <= floor || gamma.abs() <= PAIR_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = us.split_at_mut(j);
                rotate_pair(&mut lo[i], &mut hi[0], c, s);
                let (lo, hi) = vs.split_at_mut(j);
                rotate_pair(&mut lo[i], &mut hi[0], c, s);
                norms2[i] = dot(&us[i], &us[i]);
                norms2[j] = dot(&us[j], &us[j]);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            algorithm: "one-sided Jacobi SVD",
            sweeps: MAX_SWEEPS,
        });
    }

    let mut sigmas: Vec<f64> = us.iter().map(|u| norm(u)).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| sigmas[b].total_cmp(&sigmas[a]));
    let sigma_max = order.first().map_or(0.0, |&i| sigmas[i]);
    let null_cutoff = (q as f64) * f64::EPSILON * sigma_max;

    let keep = match rank {
        SvdRank::Full => q,
        SvdRank::Top(k) => k.min(q),
    };

    // Normalize left vectors in order of decreasing σ and re-orthogonalize
    // them (tiny-σ columns from Jacobi are only orthogonal to ~ε·σ₁/σ).
    // Numerically-null columns are replaced by an orthonormal completion.
    let mut left_cols: Vec<Vec<f64>> = vec![Vec::new(); q];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut pending_null = Vec::new();
    for (slot, &idx) in order.iter().enumerate() {
        let s = sigmas[idx];
        if s > null_cutoff && s > 0.0 {
            let mut u: Vec<f64> = us[idx].iter().map(|x| x / s).collect();
            project_out(&basis, &mut u);
            let n = norm(&u);
            if n > 0.5 {
                u.iter_mut().for_each(|x| *x /= n);
                basis.push(u.clone());
                left_cols[slot] = u;
                continue;
            }
        }
        pending_null.push(slot);
    }
    let mut candidate = 0usize;
    for slot in pending_null {
        // Some unit vector keeps at least (p − r)/p of its squared norm
        // after projection, so the scan always terminates.
        let need = 0.5 * (p - basis.len()) as f64 / p as f64;
        let v = loop {
            let mut e = vec![0.0; p];
            e[candidate % p] = 1.0;
            candidate += 1;
            project_out(&basis, &mut e);
            let n2 = dot(&e, &e);
            if n2 >= need {
                let n = n2.sqrt();
                e.iter_mut().for_each(|x| *x /= n);
                break e;
            }
        };
        basis.push(v.clone());
        left_cols[slot] = v;
    }

    let mut left = DenseMatrix::zeros(p, keep);
    let mut right = DenseMatrix::zeros(q, keep);
    let mut singular_values = Vec::with_capacity(keep);
    for slot in 0..keep {
        let idx = order[slot];
        let mut u = left_cols[slot].clone();
        let mut v = vs[idx].clone();
        // Sign convention: the largest-magnitude entry of the left vector of
        // the original (untransposed) matrix is positive.
        let lead = if transposed { &v } else { &u };
        if largest_magnitude_entry(lead) < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
        left.set_col(slot, &u);
        right.set_col(slot, &v);
        singular_values.push(sigmas[idx]);
    }
    sigmas.clear();

    let (left, right) = if transposed { (right, left) } else { (left, right) };
    Ok(SvdResult {
        singular_values,
        left,
        right,
    })
}

/// Twice-iterated Gram-Schmidt against an orthonormal basis.
fn project_out(basis: &[Vec<f64>], v: &mut [f64]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            axpy(-c, b, v);
        }
    }
}

fn rotate_pair(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// Value of the first entry attaining the maximum magnitude.
fn largest_magnitude_entry(v: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best
}

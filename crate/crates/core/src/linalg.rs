//! Small dense linear-algebra helpers shared by the estimator, tuner and
//! analysis code.
//!
//! Every inversion goes through [`inverse`] or [`spd_inverse`], which refuse
//! operands whose condition number exceeds [`MAX_CONDITION`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest 2-norm condition number accepted by the inversion helpers.
pub const MAX_CONDITION: f64 = 1e12;

/// Symmetry tolerance used when certifying covariance-like matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value (of the square or rectangular operand).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// 2-norm condition number; `inf` for singular or empty operands.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && max_abs_diff(m, &m.transpose()) <= tol
}

/// Symmetric (within [`SYMMETRY_TOL`] relative to the entry scale) and
/// Cholesky-factorizable.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || !is_finite(m) {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    if !is_symmetric(m, SYMMETRY_TOL * scale) {
        return false;
    }
    m.clone().cholesky().is_some()
}

fn symmetric_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a symmetric positive definite matrix through its Cholesky
/// factor. The result is symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Numerical {
        context,
        condition: f64::INFINITY,
    })?;
    let cond = symmetric_condition(m);
    if cond > MAX_CONDITION {
        return Err(Error::Numerical {
            context,
            condition: cond,
        });
    }
    Ok(symmetrize(&chol.inverse()))
}

/// General inverse. Uses Cholesky when the operand is certified SPD and a
/// fully pivoted LU otherwise.
pub fn inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim(context, "square matrix", format!("{:?}", m.shape())));
    }
    if is_spd(m) {
        return spd_inverse(m, context);
    }
    let cond = condition_number(m);
    if cond > MAX_CONDITION {
        return Err(Error::Numerical {
            context,
            condition: cond,
        });
    }
    m.clone().full_piv_lu().try_inverse().ok_or(Error::Numerical {
        context,
        condition: cond,
    })
}

/// `(P + Sᵀ Q S)⁻¹` evaluated as `P⁻¹ − P⁻¹Sᵀ(Q⁻¹ + S P⁻¹ Sᵀ)⁻¹ S P⁻¹`
/// (matrix inversion lemma). `P` is n×n, `S` is m×n and `Q` is m×m.
pub fn lemma1_inverse(p: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if !p.is_square() || s.ncols() != n || !q.is_square() || q.nrows() != s.nrows() {
        return Err(Error::dim(
            "lemma1_inverse",
            format!("P n×n, S m×n, Q m×m with n = {n}"),
            format!("P {:?}, S {:?}, Q {:?}", p.shape(), s.shape(), q.shape()),
        ));
    }
    let p_inv = inverse(p, "lemma1_inverse: P")?;
    if s.nrows() == 0 {
        return Ok(p_inv);
    }
    let q_inv = inverse(q, "lemma1_inverse: Q")?;
    let inner = &q_inv + s * &p_inv * s.transpose();
    let inner_inv = inverse(&inner, "lemma1_inverse: Q⁻¹ + S P⁻¹ Sᵀ")?;
    Ok(&p_inv - &p_inv * s.transpose() * inner_inv * s * &p_inv)
}

/// Eigenvalue real parts of a general square matrix.
pub fn eigenvalue_real_parts(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .collect()
}

/// Spectral radius (largest eigenvalue modulus).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Horizontal concatenation `[A, B, ...]`.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat: row count mismatch");
        out.view_mut((0, c), b.shape()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vcat: column count mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Serializes a matrix as a list of rows.
pub fn ser_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Quadratic form `vᵀ M v`.
pub fn quad(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

//! Dense matrix kernels: the Riccati update and Kalman gain operators,
//! fixed-point DARE solution, Loewner-order tests, spectral radius and the
//! power-norm envelope used by the small-gain design.
//!
//! Every symmetric result is symmetrized before it is returned, and no
//! inverse is ever formed explicitly: the innovation covariance is handled
//! through a Cholesky factorization.

use nalgebra::{Cholesky, Complex, DMatrix, Schur, SymmetricEigen};

use crate::error::{DkfError, Result};

pub type Mat = DMatrix<f64>;

/// Default absolute tolerance on minimum eigenvalues for PSD comparisons.
pub const PSD_TOL: f64 = 1e-8;

/// Default DARE stopping tolerance (Frobenius norm of the increment).
pub const DARE_TOL: f64 = 1e-10;

/// Default DARE iteration cap.
pub const DARE_MAX_ITER: usize = 50_000;

/// Default power horizon for [`power_norm_envelope`].
pub const ENVELOPE_H_MAX: usize = 10_000;

const FACTOR_CLIP: f64 = 1e-10;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

fn check_shape(m: &Mat, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(DkfError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Factorizes the innovation covariance `C P Cᵀ + R` and returns it together
/// with `C P Aᵀ`.
fn innovation(p: &Mat, a: &Mat, c: &Mat, r: &Mat) -> Result<(Cholesky<f64, nalgebra::Dyn>, Mat)> {
    let n = a.ncols();
    check_shape(p, n, n, "P")?;
    check_shape(c, c.nrows(), n, "C")?;
    check_shape(r, c.nrows(), c.nrows(), "R")?;
    let s = symmetrize(&(c * p * c.transpose() + r));
    let chol = Cholesky::new(s)
        .ok_or_else(|| DkfError::NotPositiveDefinite("innovation covariance C P Cᵀ + R".into()))?;
    let cpa = c * p * a.transpose();
    Ok((chol, cpa))
}

/// `A P Aᵀ − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ + Q`.
///
/// `A` may be rectangular (coupling blocks map neighbor states into the
/// local state space); `Q` must match the row dimension of `A`.
pub fn riccati_update(p: &Mat, a: &Mat, c: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    check_shape(q, a.nrows(), a.nrows(), "Q")?;
    Ok(symmetrize(&(riccati_term(p, a, c, r)? + q)))
}

/// The noise-free part `A P Aᵀ − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ`, not
/// symmetrized. Sums of such terms are symmetrized once by the caller.
pub(crate) fn riccati_term(p: &Mat, a: &Mat, c: &Mat, r: &Mat) -> Result<Mat> {
    check_shape(p, a.ncols(), a.ncols(), "P")?;
    let apa = a * p * a.transpose();
    if c.nrows() == 0 {
        return Ok(apa);
    }
    let (chol, cpa) = innovation(p, a, c, r)?;
    Ok(apa - cpa.transpose() * chol.solve(&cpa))
}

/// `A P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p: &Mat, a: &Mat, c: &Mat, r: &Mat) -> Result<Mat> {
    if c.nrows() == 0 {
        check_shape(p, a.ncols(), a.ncols(), "P")?;
        return Ok(Mat::zeros(a.nrows(), 0));
    }
    let (chol, cpa) = innovation(p, a, c, r)?;
    Ok(chol.solve(&cpa).transpose())
}

/// Steady-state solution of `P = R(P, A, C, Q, R)` by fixed-point iteration
/// from `P = 0`.
pub fn solve_dare(a: &Mat, c: &Mat, q: &Mat, r: &Mat, tol: f64, max_iter: usize) -> Result<Mat> {
    if !a.is_square() {
        return Err(DkfError::DimensionMismatch("DARE requires square A".into()));
    }
    if tol <= 0.0 {
        return Err(DkfError::InvalidScenario(
            "DARE tolerance must be positive".into(),
        ));
    }
    let n = a.nrows();
    let mut p = Mat::zeros(n, n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = riccati_update(&p, a, c, q, r)?;
        residual = (&next - &p).norm();
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(p);
        }
    }
    Err(DkfError::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Eigenvalues of a square matrix via real Schur decomposition.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(DkfError::DimensionMismatch(
            "eigenvalues of non-square matrix".into(),
        ));
    }
    match m.nrows() {
        0 => Ok(Vec::new()),
        1 => Ok(vec![Complex::new(m[(0, 0)], 0.0)]),
        _ => {
            // The unshifted QR iteration can stall on matrices with a zero
            // diagonal; a diagonal shift changes the iterates, not the
            // spectrum.
            let n = m.nrows();
            let scale = m.amax().max(1.0);
            for shift in [0.0, 0.1234, -0.3457, 0.5873] {
                let s = shift * scale;
                let shifted = m + Mat::identity(n, n) * s;
                if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 100_000) {
                    return Ok(schur
                        .complex_eigenvalues()
                        .iter()
                        .map(|z| Complex::new(z.re - s, z.im))
                        .collect());
                }
            }
            Err(DkfError::EigenFailure(
                "Schur iteration did not converge".into(),
            ))
        }
    }
}

pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Returns `G` with `G Gᵀ = Q` from the symmetric eigendecomposition.
/// Eigenvalues in `[-1e-10, 0)` are clipped to zero.
pub fn factor_psd(q: &Mat) -> Result<Mat> {
    if !q.is_square() {
        return Err(DkfError::DimensionMismatch(
            "factor_psd of non-square matrix".into(),
        ));
    }
    if q.is_empty() {
        return Ok(q.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(q));
    let min = eig.eigenvalues.min();
    if min < -FACTOR_CLIP {
        return Err(DkfError::NotPsd {
            min_eigenvalue: min,
        });
    }
    // Roundoff-level eigenvalues are zeroed so that rank(G) = rank(Q).
    let floor = eig.eigenvalues.amax() * f64::EPSILON * q.nrows() as f64;
    let mut g = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = if lambda > floor { lambda.sqrt() } else { 0.0 };
        g.column_mut(j).scale_mut(s);
    }
    Ok(g)
}

/// Loewner-order test `X ⪰ Y` up to `tol` on the minimum eigenvalue.
pub fn psd_geq(x: &Mat, y: &Mat, tol: f64) -> Result<bool> {
    if x.shape() != y.shape() || !x.is_square() {
        return Err(DkfError::DimensionMismatch(format!(
            "psd_geq operands {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(min_eigenvalue(&(x - y)) >= -tol)
}

/// Smallest `μ ≥ 1` with `‖Fʰ‖ ≤ μ λʰ` for every `h ≥ 0`.
///
/// Powers of `F/λ` are scanned until one has norm at most one. By
/// submultiplicativity every later power is then bounded by the running
/// maximum, so the result holds beyond `h_max` as well. If no such power is
/// found the maximum over `[0, h_max]` is returned.
pub fn power_norm_envelope(f: &Mat, lambda: f64, h_max: usize) -> Result<f64> {
    let sigma = spectral_radius(f)?;
    if lambda.is_nan() || lambda <= sigma || lambda <= 0.0 {
        return Err(DkfError::EnvelopeUndefined {
            spectral_radius: sigma,
            lambda,
        });
    }
    let g = f / lambda;
    let mut power = Mat::identity(f.nrows(), f.ncols());
    let mut mu: f64 = 1.0;
    for _ in 1..=h_max {
        power = &power * &g;
        let ratio = spectral_norm(&power);
        mu = mu.max(ratio);
        if ratio <= 1.0 {
            break;
        }
    }
    Ok(mu)
}

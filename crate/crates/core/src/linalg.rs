//! Orthogonalization primitives: the Moore–Penrose polar factor used by SpecGD,
//! a cubic Newton–Schulz approximation of it, and Haar-random orthonormal frames.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Singular directions with `σ_i ≤ POLAR_RANK_TOL · σ_max` are dropped by [`polar`].
pub const POLAR_RANK_TOL: f64 = 1e-12;

const SVD_MAX_ITERS: usize = 10_000;

/// Thin SVD that reports non-convergence instead of returning garbage.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(a.clone(), true, true, f64::EPSILON, SVD_MAX_ITERS).ok_or_else(|| {
        Error::NumericalFailure(format!(
            "SVD of a {}x{} matrix did not converge",
            a.nrows(),
            a.ncols()
        ))
    })
}

/// Polar factor `A (AᵀA)^{-1/2}` with the inverse square root taken in the
/// Moore–Penrose sense.
///
/// Computed from the thin SVD `A = U Σ Vᵀ` as `Σ_i u_i v_iᵀ` over the singular
/// values above `POLAR_RANK_TOL · σ_max`; `(AᵀA)^{-1/2}` is never formed. The
/// zero matrix maps to the zero matrix.
pub fn polar(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(a.clone());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(
            "polar factor of a matrix with non-finite entries".into(),
        ));
    }
    let svd = thin_svd(a)?;
    let sigma_max = svd.singular_values.max();
    let mut out = DMatrix::zeros(rows, cols);
    if sigma_max <= 0.0 {
        return Ok(out);
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let cutoff = POLAR_RANK_TOL * sigma_max;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out.ger(1.0, &u.column(i), &v_t.row(i).transpose(), 1.0);
        }
    }
    Ok(out)
}

/// Cubic Newton–Schulz iteration `X ← 1.5 X − 0.5 X XᵀX` towards the polar factor.
///
/// The input is first divided by a power-iteration estimate of its spectral norm,
/// which puts the top singular value at (or just above) 1, well inside the
/// `(0, √3)` basin of the cubic map. Matrices that already have orthonormal
/// columns are therefore fixed points from the first iteration.
pub fn newton_schulz_orthogonalize(a: &DMatrix<f64>, iters: usize) -> Result<DMatrix<f64>> {
    if iters == 0 {
        return Err(Error::config("newton-schulz needs at least one iteration"));
    }
    let scale = spectral_norm_estimate(a, 100);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Precondition(
            "newton-schulz orthogonalization of a zero (or non-finite) matrix".into(),
        ));
    }
    // Work on the orientation with the smaller Gram matrix.
    let transpose = a.nrows() < a.ncols();
    let mut x = if transpose { a.transpose() } else { a.clone() } / scale;
    for _ in 0..iters {
        let gram = x.transpose() * &x;
        x = &x * 1.5 - (&x * gram) * 0.5;
    }
    Ok(if transpose { x.transpose() } else { x })
}

/// How SpecGD turns a gradient into an update direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Orthogonalizer {
    /// Exact polar factor from the SVD.
    #[default]
    Exact,
    /// `iters` cubic Newton–Schulz iterations.
    NewtonSchulz { iters: usize },
}

impl Orthogonalizer {
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match *self {
            Orthogonalizer::Exact => polar(a),
            Orthogonalizer::NewtonSchulz { iters } => {
                if a.iter().all(|&x| x == 0.0) {
                    return Ok(a.clone());
                }
                newton_schulz_orthogonalize(a, iters)
            }
        }
    }
}

/// `C ← α op(A) op(B) + β C`, where `op` optionally transposes.
///
/// Runs on faer's kernels, which dispatch to the widest SIMD the CPU offers;
/// used on the minibatch hot path. Panics on mismatched shapes.
pub fn gemm(alpha: f64, a: &DMatrix<f64>, trans_a: bool, b: &DMatrix<f64>, trans_b: bool, beta: f64, c: &mut DMatrix<f64>) {
    use faer::linalg::matmul::matmul;
    use faer::{Accum, MatMut, MatRef, Par};

    let lhs = MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols());
    let lhs = if trans_a { lhs.transpose() } else { lhs };
    let rhs = MatRef::from_column_major_slice(b.as_slice(), b.nrows(), b.ncols());
    let rhs = if trans_b { rhs.transpose() } else { rhs };
    assert_eq!(lhs.ncols(), rhs.nrows(), "gemm inner dimensions");
    assert_eq!((lhs.nrows(), rhs.ncols()), c.shape(), "gemm output shape");
    let (rows, cols) = c.shape();
    if beta != 1.0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            *c *= beta;
        }
    }
    let dst = MatMut::from_column_major_slice_mut(c.as_mut_slice(), rows, cols);
    matmul(dst, Accum::Add, lhs, rhs, alpha, Par::Seq);
}

/// Largest singular value estimated by power iteration on `AᵀA`.
///
/// The Rayleigh quotient never overshoots, so the returned value is a lower bound
/// that converges to `σ_max`.
pub fn spectral_norm_estimate(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start vector with no special alignment to coordinate axes.
    let mut x = DVector::from_fn(n, |i, _| 0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract());
    x.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..iters {
        let ax = a * &x;
        let next = ax.norm();
        let y = a.transpose() * ax;
        let y_norm = y.norm();
        let converged = (next - estimate).abs() <= 1e-15 * next;
        estimate = next;
        if y_norm == 0.0 || converged {
            break;
        }
        x = y / y_norm;
    }
    estimate
}

/// Matrix with i.i.d. standard normal entries, filled column by column.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed `rows × cols` matrix with orthonormal columns (`cols ≤ rows`).
///
/// QR of a Gaussian matrix with the signs of `diag(R)` folded back into `Q`.
pub fn haar_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(cols <= rows, "orthonormal columns need cols <= rows");
    let g = gaussian_matrix(rows, cols, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric square root of a symmetric positive semidefinite matrix.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

//! Small dense linear-algebra helpers shared by the solver and the policy.

use nalgebra::SymmetricEigen;

use crate::{Matrix, Vector};

/// Pseudoinverse of a symmetric positive-semidefinite matrix.
///
/// Eigenvalues below `rel_cutoff * λ_max` are treated as zero. Returns the
/// pseudoinverse and the numerical rank.
pub fn pinv_symmetric(h: &Matrix, rel_cutoff: f64) -> (Matrix, usize) {
    let n = h.nrows();
    let sym = symmetrize(h);
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = Matrix::zeros(n, n);
    let mut rank = 0;
    if lmax <= 0.0 {
        return (out, 0);
    }
    let cutoff = rel_cutoff * lmax;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    (out, rank)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Smallest singular value of `a` (zero for an empty matrix).
pub fn min_singular_value(a: &Matrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let k = a.nrows().min(a.ncols());
    sv.iter().take(k).cloned().fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the null space of `a` (columns), using the SVD.
///
/// Singular values below `tol * max(1, σ_max)` count as zero.
pub fn null_space(a: &Matrix, ncols: usize, tol: f64) -> Matrix {
    if a.nrows() == 0 {
        return Matrix::identity(ncols, ncols);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let rows = a.nrows().max(ncols);
    let mut padded = Matrix::zeros(rows, ncols);
    padded.view_mut((0, 0), (a.nrows(), ncols)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let thresh = tol * smax.max(1.0);
    let cols: Vec<usize> = (0..ncols)
        .filter(|&k| svd.singular_values[k] <= thresh)
        .collect();
    let mut z = Matrix::zeros(ncols, cols.len());
    for (c, &k) in cols.iter().enumerate() {
        z.set_column(c, &vt.row(k).transpose());
    }
    z
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn lstsq(a: &Matrix, b: &Vector, tol: f64) -> Vector {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    svd.solve(b, tol * smax.max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| Vector::zeros(a.ncols()))
}

/// `‖v‖²_W = vᵀ W v`.
pub fn weighted_norm_sq(w: &Matrix, v: &Vector) -> f64 {
    v.dot(&(w * v))
}

//! Small dense helpers for the fixed-size matrices used throughout the crate.

use nalgebra::{Matrix2, SMatrix, Vector2};

pub fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric<const N: usize>(m: &SMatrix<f64, N, N>, tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64
where
    nalgebra::Const<N>:
        nalgebra::DimMin<nalgebra::Const<N>, Output = nalgebra::Const<N>> + nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator:
        nalgebra::allocator::Allocator<<nalgebra::Const<N> as nalgebra::DimSub<nalgebra::U1>>::Output>,
{
    symmetrize(m).symmetric_eigenvalues().min()
}

/// PSD test with a tolerance relative to the matrix scale.
pub fn is_psd<const N: usize>(m: &SMatrix<f64, N, N>, tol: f64) -> bool
where
    nalgebra::Const<N>:
        nalgebra::DimMin<nalgebra::Const<N>, Output = nalgebra::Const<N>> + nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator:
        nalgebra::allocator::Allocator<<nalgebra::Const<N> as nalgebra::DimSub<nalgebra::U1>>::Output>,
{
    let scale = m.amax().max(1e-300);
    min_eigenvalue(m) >= -tol * scale
}

pub fn is_finite<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Cholesky-based inverse of a symmetric positive definite matrix, rejecting
/// matrices whose eigenvalue spread exceeds `1 / rcond_min`.
pub fn spd_inverse2(m: &Matrix2<f64>, rcond_min: f64) -> Option<Matrix2<f64>> {
    let s = symmetrize(m);
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || lo < rcond_min * hi {
        return None;
    }
    s.cholesky().map(|c| symmetrize(&c.inverse()))
}

/// Moore-Penrose inverse of a symmetric PSD 2x2 matrix. Eigenvalues below
/// `rel_tol * max_eigenvalue` are treated as zero.
pub fn pinv_sym2(m: &Matrix2<f64>, rel_tol: f64) -> Matrix2<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if top <= f64::MIN_POSITIVE {
        return Matrix2::zeros();
    }
    let mut inv = Matrix2::zeros();
    for k in 0..2 {
        let lambda = eig.eigenvalues[k];
        if lambda > rel_tol * top {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / lambda;
        }
    }
    inv
}

/// Square-root factor `F` with `F F' = m` for a symmetric PSD matrix.
/// Negative eigenvalues from round-off are clamped to zero.
pub fn psd_factor<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N>
where
    nalgebra::Const<N>:
        nalgebra::DimMin<nalgebra::Const<N>, Output = nalgebra::Const<N>> + nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator:
        nalgebra::allocator::Allocator<<nalgebra::Const<N> as nalgebra::DimSub<nalgebra::U1>>::Output>,
{
    let s = symmetrize(m);
    if let Some(c) = s.cholesky() {
        return c.l();
    }
    let eig = s.symmetric_eigen();
    let mut f = eig.eigenvectors;
    for k in 0..N {
        let root = eig.eigenvalues[k].max(0.0).sqrt();
        for r in 0..N {
            f[(r, k)] *= root;
        }
    }
    f
}

/// Vector of main-diagonal entries.
pub fn diag_vec(m: &Matrix2<f64>) -> Vector2<f64> {
    Vector2::new(m[(0, 0)], m[(1, 1)])
}

/// Half-vectorisation `(m11, m12, m22)` of a symmetric 2x2 matrix.
pub fn vech(m: &Matrix2<f64>) -> [f64; 3] {
    [m[(0, 0)], m[(0, 1)], m[(1, 1)]]
}

pub fn from_vech(v: [f64; 3]) -> Matrix2<f64> {
    Matrix2::new(v[0], v[1], v[1], v[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_singular_and_regular() {
        let m = Matrix2::new(2.0, 0.0, 0.0, 0.0);
        let p = pinv_sym2(&m, 1e-12);
        assert_abs_diff_eq!(p, Matrix2::new(0.5, 0.0, 0.0, 0.0), epsilon = 1e-15);
        let m = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let p = pinv_sym2(&m, 1e-12);
        assert_abs_diff_eq!(p * m, Matrix2::identity(), epsilon = 1e-12);
        assert_eq!(pinv_sym2(&Matrix2::zeros(), 1e-12), Matrix2::zeros());
    }

    #[test]
    fn factor_reproduces_semidefinite_matrix() {
        let m = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        let f = psd_factor(&m);
        assert_abs_diff_eq!(f * f.transpose(), m, epsilon = 1e-14);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        assert!(spd_inverse2(&Matrix2::new(1.0, 1.0, 1.0, 1.0), 1e-14).is_none());
        let inv = spd_inverse2(&Matrix2::new(4.0, 0.0, 0.0, 1.0), 1e-14).unwrap();
        assert_abs_diff_eq!(inv, Matrix2::new(0.25, 0.0, 0.0, 1.0), epsilon = 1e-15);
    }
}

//! Small dense helpers on top of nalgebra: kernels, ranks, subspace angles.

use nalgebra::{Complex, ComplexField, DMatrix, DVector, RealField};

/// Singular values below `rel * max(1, σ_max)` count as zero.
pub const RANK_TOL: f64 = 1e-8;

fn is_zero<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> bool {
    a.iter().all(|c| c.clone().modulus() == 0.0)
}

/// Orthonormal basis of the span of `cols` by pivoted Gram-Schmidt with
/// reorthogonalization; directions whose residual norm is at or below `tol` are dropped.
pub fn span<T: ComplexField<RealField = f64>>(mut cols: Vec<DVector<T>>, tol: f64) -> Vec<DVector<T>> {
    let mut basis: Vec<DVector<T>> = Vec::new();
    while !cols.is_empty() {
        let (best, norm) = cols.iter().enumerate().map(|(i, c)| (i, c.norm())).fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if norm <= tol {
            break;
        }
        let q = cols.swap_remove(best).unscale(norm);
        for c in cols.iter_mut() {
            for _ in 0..2 {
                let d = q.dotc(c);
                c.axpy(-d, &q, T::one());
            }
        }
        basis.push(q);
    }
    basis
}

fn from_columns<T: ComplexField<RealField = f64>>(rows: usize, cols: &[DVector<T>]) -> DMatrix<T> {
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(cols)
    }
}

/// Orthonormal basis of the column span; columns whose residual falls below
/// `rel * max(1, largest column norm)` count as dependent.
pub fn range<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, rel: f64) -> DMatrix<T> {
    let cols: Vec<DVector<T>> = a.column_iter().map(|c| c.into_owned()).collect();
    let scale = cols.iter().map(|c| c.norm()).fold(1.0, f64::max);
    from_columns(a.nrows(), &span(cols, rel * scale))
}

pub fn rank<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, rel: f64) -> usize {
    range(a, rel).ncols()
}

/// Orthonormal basis (columns) of ker a, and the numerical rank of a.
pub fn kernel<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, rel: f64) -> (DMatrix<T>, usize) {
    let n = a.ncols();
    if a.nrows() == 0 || is_zero(a) {
        return (DMatrix::identity(n, n), 0);
    }
    let row_space = range(&a.adjoint(), rel);
    let r = row_space.ncols();
    (from_columns(n, &complement(&row_space, n - r)), r)
}

pub fn smallest_singular_value<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    a.clone().singular_values().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Largest principal angle (radians) between the column spans of a and b.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = range(a, 1e-12);
    let qb = range(b, 1e-12);
    if qa.ncols() != qb.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    let s = (qa.transpose() * &qb).singular_values();
    let cmin = s.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0);
    // sin of the largest angle from the residual is accurate for tiny angles
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let smax = resid.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if cmin > 0.7 {
        smax.min(1.0).asin()
    } else {
        cmin.acos()
    }
}

/// Orthonormal completion: `count` unit vectors orthogonal to the columns of a,
/// chosen greedily from the standard basis by largest residual.
pub fn complement<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, count: usize) -> Vec<DVector<T>> {
    let n = a.nrows();
    let mut basis = span(a.column_iter().map(|c| c.into_owned()).collect(), 1e-300);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<DVector<T>> = None;
        let mut best_norm = -1.0;
        for i in 0..n {
            let mut v = DVector::zeros(n);
            v[i] = T::one();
            for _ in 0..2 {
                for b in basis.iter() {
                    let d = b.dotc(&v);
                    v.axpy(-d, b, T::one());
                }
            }
            let nv = v.norm();
            if nv > best_norm + 1e-12 {
                best_norm = nv;
                best = Some(v.unscale(nv));
            }
        }
        let v = best.expect("ambient dimension exceeds span");
        basis.push(v.clone());
        out.push(v);
    }
    out
}

/// Least-squares solution of a x = b (minimum-norm when a is wide), by Householder QR.
/// a must have full rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() >= a.ncols() {
        let qr = a.clone().qr();
        let qtb = qr.q().transpose() * b;
        qr.r().solve_upper_triangular(&qtb).expect("full column rank")
    } else {
        // aᵀ = QR, so a = RᵀQᵀ and x = Q R⁻ᵀ b
        let qr = a.transpose().qr();
        let y = qr.r().transpose().solve_lower_triangular(b).expect("full row rank");
        qr.q() * y
    }
}

/// The real 2m×2k matrix [[Re a, −Im a], [Im a, Re a]] acting on (Re z, Im z).
pub fn embed(a: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let (m, k) = a.shape();
    DMatrix::from_fn(2 * m, 2 * k, |i, j| {
        let z = a[(i % m, j % k)];
        match (i < m, j < k) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Least-squares solution of a z = b for complex a, b, through [`embed`].
pub fn complex_lstsq(a: &DMatrix<Complex<f64>>, b: &DMatrix<Complex<f64>>) -> DMatrix<Complex<f64>> {
    let (m, k) = a.shape();
    let rhs = DMatrix::from_fn(2 * m, b.ncols(), |i, j| if i < m { b[(i, j)].re } else { b[(i - m, j)].im });
    let x = lstsq(&embed(a), &rhs);
    DMatrix::from_fn(k, b.ncols(), |i, j| Complex::new(x[(i, j)], x[(k + i, j)]))
}

pub fn is_finite<T: RealField>(v: &[T]) -> bool {
    v.iter().all(|x| x.clone().is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;

    #[test]
    fn kernel_of_wide_matrix() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let (k, r) = kernel(&a, RANK_TOL);
        assert_eq!(r, 2);
        assert_eq!(k.ncols(), 2);
        assert!((&a * &k).norm() < 1e-12);
        assert!((k.transpose() * &k - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn kernel_of_complex_row() {
        let i = Complex::new(0.0, 1.0);
        let one = Complex::new(1.0, 0.0);
        let a = DMatrix::from_row_slice(1, 2, &[one, i]);
        let (k, r) = kernel(&a, RANK_TOL);
        assert_eq!((r, k.ncols()), (1, 1));
        assert!((&a * &k).norm() < 1e-12);
        assert!(((k.adjoint() * &k)[(0, 0)].re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angles_and_complement() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c: Vec<DVector<f64>> = complement(&a, 2);
        assert!(c.iter().all(|v| v[0].abs() < 1e-15 && (v.norm() - 1.0).abs() < 1e-15));
        assert!(c[0].dot(&c[1]).abs() < 1e-15);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 1e-10, 0.0]);
        let ang = max_principal_angle(&a, &b);
        assert!((ang - 1e-10).abs() < 1e-16);
        assert!(max_principal_angle(&a, &DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0])) > 1.57);
    }
}

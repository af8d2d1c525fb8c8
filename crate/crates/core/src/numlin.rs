//! Dense linear-algebra kernel: SVD-backed pseudoinverse, Greville's
//! row-recursive pseudoinverse, numeric rank and orthogonal projectors onto
//! row and null spaces.

use nalgebra::{DMatrix, RowDVector, SymmetricEigen};

use crate::error::{dim_mismatch, Error, Result};
use crate::scalar::Scalar;

/// Default relative rank tolerance: `1e-10 * max(rows, cols)`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    1e-10 * rows.max(cols).max(1) as f64
}

/// Default tolerance adjusted so it never drops below the rounding noise of
/// the scalar type.
pub(crate) fn rank_tol_for<T: Scalar>(rows: usize, cols: usize) -> f64 {
    let floor = 100.0 * T::default_epsilon().to_f64_lossy() * rows.max(cols).max(1) as f64;
    default_rank_tol(rows, cols).max(floor)
}

/// Outcome of a numeric rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDecision<T> {
    pub rank: usize,
    /// Singular values in descending order.
    pub singular_values: Vec<T>,
    /// Absolute threshold a singular value had to exceed to be counted.
    pub tolerance_used: T,
}

impl<T: Scalar> RankDecision<T> {
    /// Smallest singular value that was counted in the rank, if any.
    pub fn sigma_min(&self) -> Option<T> {
        self.rank
            .checked_sub(1)
            .map(|i| self.singular_values[i])
    }
}

pub fn check_finite<T: Scalar>(a: &DMatrix<T>) -> Result<()> {
    for (j, col) in a.column_iter().enumerate() {
        for (i, x) in col.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_nonempty<T: Scalar>(a: &DMatrix<T>) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        Err(Error::EmptyMatrix)
    } else {
        Ok(())
    }
}

/// Singular values of `a` in descending order. Empty matrices have none.
pub fn singular_values<T: Scalar>(a: &DMatrix<T>) -> Vec<T> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<T> = a.clone().singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Counts singular values strictly above `rel_tol * sigma_max`.
///
/// For the zero matrix the threshold falls back to `rel_tol` itself so that
/// the reported tolerance stays positive.
pub fn numeric_rank<T: Scalar>(a: &DMatrix<T>, rel_tol: f64) -> Result<RankDecision<T>> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidTolerance(rel_tol));
    }
    check_finite(a)?;
    let singular_values = singular_values(a);
    let sigma_max = singular_values.first().copied().unwrap_or_else(T::zero);
    let rel = T::lit(rel_tol);
    let tolerance_used = if sigma_max > T::zero() {
        rel * sigma_max
    } else {
        rel
    };
    let rank = singular_values
        .iter()
        .filter(|&&s| s > tolerance_used)
        .count();
    Ok(RankDecision {
        rank,
        singular_values,
        tolerance_used,
    })
}

/// Numeric rank with the default tolerance.
pub fn rank<T: Scalar>(a: &DMatrix<T>) -> usize {
    numeric_rank(a, rank_tol_for::<T>(a.nrows(), a.ncols()))
        .map(|d| d.rank)
        .unwrap_or(0)
}

/// Moore–Penrose pseudoinverse via the SVD, truncating singular values at the
/// default rank tolerance.
pub fn pinv<T: Scalar>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    pinv_with_tol(a, rank_tol_for::<T>(a.nrows(), a.ncols()))
}

pub fn pinv_with_tol<T: Scalar>(a: &DMatrix<T>, rel_tol: f64) -> Result<DMatrix<T>> {
    check_nonempty(a)?;
    check_finite(a)?;
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = T::lit(rel_tol) * sigma_max;
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > T::zero() {
            let inv = T::one() / s;
            // out += v_k * inv * u_kᵀ
            out.ger(inv, &v_t.row(k).transpose(), &u.column(k), T::one());
        }
    }
    Ok(out)
}

/// Branch threshold for Greville's update: `1e-12 * (1 + ‖a_k‖)`.
fn greville_zero_threshold<T: Scalar>(a_k: &RowDVector<T>) -> T {
    T::lit(1e-12) * (T::one() + a_k.norm())
}

/// Pseudoinverse of `A_prev` with `a_k` appended as its last row.
///
/// `pinv_prev` must be the pseudoinverse of `a_prev`; `a_prev` may have zero
/// rows, in which case `pinv_prev` is `n × 0`.
pub fn greville_append<T: Scalar>(
    pinv_prev: &DMatrix<T>,
    a_prev: &DMatrix<T>,
    a_k: &RowDVector<T>,
) -> Result<DMatrix<T>> {
    let n = a_k.len();
    if a_prev.ncols() != n {
        return Err(dim_mismatch(
            format!("{} columns", a_prev.ncols()),
            format!("row of length {n}"),
        ));
    }
    if pinv_prev.nrows() != n || pinv_prev.ncols() != a_prev.nrows() {
        return Err(dim_mismatch(
            format!("pseudoinverse of shape {}x{}", n, a_prev.nrows()),
            format!("{}x{}", pinv_prev.nrows(), pinv_prev.ncols()),
        ));
    }
    let rows_prev = a_prev.nrows();

    // d_k = a_k A⁺ (1 × k-1), c_k = a_k − d_k A (1 × n)
    let d: RowDVector<T> = a_k * pinv_prev;
    let c: RowDVector<T> = a_k - &d * a_prev;

    let c_norm = c.norm();
    let b: nalgebra::DVector<T> = if c_norm > greville_zero_threshold(a_k) {
        c.transpose() / (c_norm * c_norm)
    } else {
        let scale = T::one() / (T::one() + d.norm_squared());
        (pinv_prev * d.transpose()) * scale
    };

    let mut out = DMatrix::zeros(n, rows_prev + 1);
    if rows_prev > 0 {
        let updated = pinv_prev - &b * &d;
        out.columns_mut(0, rows_prev).copy_from(&updated);
    }
    out.column_mut(rows_prev).copy_from(&b);
    Ok(out)
}

/// Pseudoinverse built by appending the rows of `a` one at a time.
pub fn greville_pinv<T: Scalar>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_nonempty(a)?;
    check_finite(a)?;
    let n = a.ncols();
    let mut pinv_acc = DMatrix::<T>::zeros(n, 0);
    for k in 0..a.nrows() {
        let a_prev = a.rows(0, k).into_owned();
        let row = a.row(k).into_owned();
        pinv_acc = greville_append(&pinv_acc, &a_prev, &row)?;
    }
    Ok(pinv_acc)
}

/// Orthonormal basis of the row space of `a`, one basis vector per row.
pub fn row_space_basis<T: Scalar>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_nonempty(a)?;
    check_finite(a)?;
    let tol = rank_tol_for::<T>(a.nrows(), a.ncols());
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = T::lit(tol) * sigma_max;
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > cutoff && s > T::zero())
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(keep.len(), a.ncols());
    for (r, &i) in keep.iter().enumerate() {
        basis.row_mut(r).copy_from(&v_t.row(i));
    }
    Ok(basis)
}

/// Orthogonal projectors onto the row space (`P_o`) and the null space
/// (`P_obar`) of `h`.
pub fn subspace_projectors<T: Scalar>(h: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let basis = row_space_basis(h)?;
    let mut p_o = basis.transpose() * &basis;
    symmetrize(&mut p_o);
    let p_obar = DMatrix::identity(h.ncols(), h.ncols()) - &p_o;
    Ok((p_o, p_obar))
}

/// Orthonormal basis of the null space of `a`, one basis vector per column.
pub fn null_space_basis<T: Scalar>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (_, p_obar) = subspace_projectors(a)?;
    let eig = SymmetricEigen::new(p_obar);
    let half = T::lit(0.5);
    let keep: Vec<usize> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > half)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(a.ncols(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    Ok(basis)
}

/// Smallest singular value above the default rank tolerance.
pub fn min_nonzero_singular_value<T: Scalar>(a: &DMatrix<T>) -> Option<T> {
    numeric_rank(a, rank_tol_for::<T>(a.nrows(), a.ncols()))
        .ok()
        .and_then(|d| d.sigma_min())
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm<T: Scalar>(a: &DMatrix<T>) -> T {
    singular_values(a).first().copied().unwrap_or_else(T::zero)
}

pub(crate) fn symmetrize<T: Scalar>(p: &mut DMatrix<T>) {
    let half = T::lit(0.5);
    let sym = (&*p + p.transpose()) * half;
    *p = sym;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_abs(a: &DMatrix<f64>) -> f64 {
        a.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn pinv_identity_and_diagonal() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(pinv(&i3).unwrap(), i3, epsilon = 1e-14);
        let d = dmatrix![2.0, 0.0; 0.0, 0.0];
        assert_relative_eq!(pinv(&d).unwrap(), dmatrix![0.5, 0.0; 0.0, 0.0], epsilon = 1e-14);
    }

    #[test]
    fn pinv_rejects_empty_and_nonfinite() {
        let empty = DMatrix::<f64>::zeros(0, 3);
        assert_eq!(pinv(&empty), Err(Error::EmptyMatrix));
        let bad = dmatrix![1.0, f64::NAN];
        assert!(matches!(pinv(&bad), Err(Error::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn pinv_full_row_rank_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 4, 7);
        let oracle = a.transpose() * (&a * a.transpose()).try_inverse().unwrap();
        let p = pinv(&a).unwrap();
        assert!(max_abs(&(&p - &oracle)) < 1e-10);
        assert!(max_abs(&(&a * &p - DMatrix::identity(4, 4))) < 1e-10);
    }

    #[test]
    fn greville_single_row_and_orthonormal() {
        let empty_a = DMatrix::<f64>::zeros(0, 2);
        let empty_p = DMatrix::<f64>::zeros(2, 0);
        let p = greville_append(&empty_p, &empty_a, &RowDVector::from_row_slice(&[3.0, 4.0])).unwrap();
        assert_relative_eq!(p, dmatrix![3.0 / 25.0; 4.0 / 25.0], epsilon = 1e-15);

        let a1 = dmatrix![1.0, 0.0];
        let p1 = dmatrix![1.0; 0.0];
        let p2 = greville_append(&p1, &a1, &RowDVector::from_row_slice(&[0.0, 1.0])).unwrap();
        assert_relative_eq!(p2, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn greville_duplicate_row_takes_zero_branch() {
        let a1 = dmatrix![1.0, 0.0];
        let p1 = dmatrix![1.0; 0.0];
        let p2 = greville_append(&p1, &a1, &RowDVector::from_row_slice(&[1.0, 0.0])).unwrap();
        let stacked = dmatrix![1.0, 0.0; 1.0, 0.0];
        let oracle = pinv(&stacked).unwrap();
        assert!(max_abs(&(&p2 - &oracle)) < 1e-10);
        assert_relative_eq!(p2, dmatrix![0.5, 0.5; 0.0, 0.0], epsilon = 1e-15);
    }

    #[test]
    fn greville_dimension_mismatch() {
        let a1 = dmatrix![1.0, 0.0];
        let p1 = dmatrix![1.0; 0.0];
        let err = greville_append(&p1, &a1, &RowDVector::from_row_slice(&[1.0, 0.0, 2.0]));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn numeric_rank_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert_eq!(numeric_rank(&i3, 1e-10).unwrap().rank, 3);
        let dep = dmatrix![1.0, -1.0, 0.0; 0.0, 0.0, 1.0; 1.0, -1.0, 1.0];
        assert_eq!(numeric_rank(&dep, 1e-10).unwrap().rank, 2);
        let z = DMatrix::<f64>::zeros(2, 2);
        let d = numeric_rank(&z, 1e-10).unwrap();
        assert_eq!(d.rank, 0);
        assert!(d.tolerance_used > 0.0);
        assert!(matches!(numeric_rank(&i3, 1.5), Err(Error::InvalidTolerance(_))));
        assert!(matches!(numeric_rank(&i3, 0.0), Err(Error::InvalidTolerance(_))));
    }

    #[test]
    fn projector_examples() {
        let (po, pob) = subspace_projectors(&DMatrix::<f64>::identity(2, 2)).unwrap();
        assert_relative_eq!(po, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert!(max_abs(&pob) < 1e-14);

        let (po, pob) = subspace_projectors(&dmatrix![1.0, 0.0]).unwrap();
        assert_relative_eq!(po, dmatrix![1.0, 0.0; 0.0, 0.0], epsilon = 1e-14);
        assert_relative_eq!(pob, dmatrix![0.0, 0.0; 0.0, 1.0], epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_matrix(&mut rng, 5, 8);
        let (po, pob) = subspace_projectors(&h).unwrap();
        assert!(max_abs(&(&po * h.transpose() - h.transpose())) < 1e-10);
        assert!(max_abs(&(&pob * h.transpose())) < 1e-10);
    }

    #[test]
    fn null_space_basis_spans_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_matrix(&mut rng, 3, 6);
        let n = null_space_basis(&h).unwrap();
        assert_eq!(n.ncols(), 3);
        assert!(max_abs(&(&h * &n)) < 1e-12);
        assert!(max_abs(&(n.transpose() * &n - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let a = DMatrix::<f32>::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
        let p = pinv(&a).unwrap();
        let id = &a * &p;
        assert!((id - DMatrix::<f32>::identity(2, 2)).abs().max() < 1e-5);
        assert_eq!(rank(&a), 2);
    }
}

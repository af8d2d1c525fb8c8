//! Orthant and sign-vector geometry of row spaces and affine subspaces.
//!
//! Orthant feasibility is decided by the max-min margin program
//! `max_{‖y‖ ≤ 1} min_i a_iᵀ y` over the normalized signed constraint
//! vectors `a_i`, whose optimum equals the distance from the origin to
//! `conv{a_i}`. That distance is computed exactly (up to rounding) with
//! Wolfe's minimum-norm-point algorithm.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::numlin;
use crate::scalar::Scalar;

/// Below this margin an orthant is treated as not intersected.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Entries below this fraction of the largest entry count as zero when
/// reading off supports.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Minimum `min_i |v(i)| / ‖v‖_∞` of every vector returned by [`cone_basis`].
pub const INTERIOR_MARGIN: f64 = 1e-6;

/// Default relative perturbation step used by [`cone_basis`].
pub const CONE_STEP: f64 = 0.1;

/// Sign vector of an open orthant; entries are `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignVector(Vec<i8>);

impl SignVector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if let Some(pos) = signs.iter().position(|&s| s != 1 && s != -1) {
            return Err(dim_mismatch("entries in {-1, +1}", format!("{} at {pos}", signs[pos])));
        }
        Ok(Self(signs))
    }

    /// Sign pattern of `v`, or `None` if some entry is zero.
    pub fn of<T: Scalar>(v: &DVector<T>) -> Option<Self> {
        v.iter()
            .map(|&x| match x.partial_cmp(&T::zero()) {
                Some(Ordering::Greater) => Some(1),
                Some(Ordering::Less) => Some(-1),
                _ => None,
            })
            .collect::<Option<Vec<i8>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    /// `χ(s)`: 1 where the sign is positive.
    pub fn indicator(&self) -> Vec<u8> {
        self.0.iter().map(|&s| u8::from(s > 0)).collect()
    }
}

impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for s in &self.0 {
            f.write_str(if *s > 0 { "+" } else { "-" })?;
        }
        f.write_str(")")
    }
}

/// Sign vectors of all open orthants met by a (possibly affine) subspace,
/// each with a witness vector of the subspace lying in that orthant.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMatrix<T: Scalar> {
    rows: Vec<SignVector>,
    witnesses: Vec<DVector<T>>,
    margins: Vec<T>,
}

impl<T: Scalar> SignMatrix<T> {
    pub fn rows(&self) -> &[SignVector] {
        &self.rows
    }

    pub fn witnesses(&self) -> &[DVector<T>] {
        &self.witnesses
    }

    /// Optimal value of the margin program for each row: how deep inside
    /// the orthant the subspace reaches, in normalized units.
    pub fn margins(&self) -> &[T] {
        &self.margins
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, s: &SignVector) -> bool {
        self.rows.binary_search(s).is_ok()
    }

    /// `χ(S)` as a real 0/1 matrix.
    pub fn indicator_matrix(&self) -> DMatrix<T> {
        let n = self.rows.first().map_or(0, SignVector::len);
        DMatrix::from_fn(self.rows.len(), n, |i, j| {
            if self.rows[i].0[j] > 0 {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Elementary vectors of a subspace, scaled so their first nonzero entry is
/// `+1` and ordered by support.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryVectorSet<T: Scalar> {
    pub vectors: Vec<DVector<T>>,
}

impl<T: Scalar> ElementaryVectorSet<T> {
    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.vectors.iter().map(|v| support(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Indices of the entries of `v` that are nonzero relative to `‖v‖_∞`.
pub fn support<T: Scalar>(v: &DVector<T>) -> Vec<usize> {
    let cutoff = T::lit(SUPPORT_TOL) * v.amax();
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > cutoff)
        .map(|(i, _)| i)
        .collect()
}

/// Result of the observability test on a weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityCertificate<T: Scalar> {
    pub observable: bool,
    /// `rank(χ(S))`.
    pub rank: usize,
    pub hidden: usize,
    pub sign_matrix: SignMatrix<T>,
}

// ---------------------------------------------------------------------------
// Minimum-norm point of a convex hull (Wolfe, 1976).

/// Minimum-norm point of `conv{points}`.
pub(crate) fn min_norm_point<T: Scalar>(points: &[DVector<T>]) -> DVector<T> {
    assert!(!points.is_empty(), "min_norm_point needs at least one point");
    let dim = points[0].len();
    let scale = points.iter().fold(T::zero(), |m, p| m.max(p.norm_squared()));
    let tol = T::lit(1e-12) * scale.max(T::lit(f64::MIN_POSITIVE));

    let start = (0..points.len())
        .min_by(|&a, &b| {
            points[a]
                .norm_squared()
                .partial_cmp(&points[b].norm_squared())
                .unwrap_or(Ordering::Equal)
        })
        .unwrap();
    let mut active: Vec<usize> = vec![start];
    let mut lambda: Vec<T> = vec![T::one()];
    let mut x = points[start].clone();

    for _major in 0..(50 * (points.len() + dim + 1)) {
        let xx = x.norm_squared();
        if xx <= tol {
            return DVector::zeros(dim);
        }
        let (j, best) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, x.dot(p)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
            .unwrap();
        if best >= xx - tol || active.contains(&j) {
            return x;
        }
        active.push(j);
        lambda.push(T::zero());

        for _minor in 0..(active.len() + 2) {
            let mu = affine_min_norm_weights(points, &active);
            let Some(mu) = mu else { break };
            let floor = T::lit(1e-14);
            if mu.iter().all(|&m| m > floor) {
                lambda = mu;
                break;
            }
            // step from lambda towards mu until a weight hits zero
            let mut theta = T::one();
            for (l, m) in lambda.iter().zip(mu.iter()) {
                if *m <= floor {
                    let denom = *l - *m;
                    if denom > T::zero() {
                        theta = theta.min(*l / denom);
                    }
                }
            }
            for (l, m) in lambda.iter_mut().zip(mu.iter()) {
                *l = *l + theta * (*m - *l);
            }
            let mut k = 0;
            while k < active.len() {
                if lambda[k] <= floor {
                    active.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            let total = lambda.iter().fold(T::zero(), |a, &b| a + b);
            for l in lambda.iter_mut() {
                *l /= total;
            }
        }
        let mut next = DVector::zeros(dim);
        for (&i, &l) in active.iter().zip(lambda.iter()) {
            next.axpy(l, &points[i], T::one());
        }
        if next.norm_squared() >= xx - tol * T::lit(1e-3) {
            // no progress: numerically optimal
            return next;
        }
        x = next;
    }
    x
}

/// Weights `μ` (summing to one) of the minimum-norm point of the affine hull
/// of the selected points.
fn affine_min_norm_weights<T: Scalar>(points: &[DVector<T>], active: &[usize]) -> Option<Vec<T>> {
    let k = active.len();
    let mut sys = DMatrix::zeros(k + 1, k + 1);
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            sys[(a, b)] = points[i].dot(&points[j]);
        }
        sys[(a, k)] = T::one();
        sys[(k, a)] = T::one();
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = T::one();
    let sol = sys
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|x| x.is_finite()))
        .or_else(|| numlin::pinv(&sys).ok().map(|p| p * &rhs))?;
    Some(sol.rows(0, k).iter().copied().collect())
}

// ---------------------------------------------------------------------------
// Orthant feasibility.

/// Reduced description of a linear or affine subspace of ℝⁿ:
/// `{ basisᵀ y + offset }`, with `basis` having orthonormal rows.
struct Subspace<T: Scalar> {
    basis: DMatrix<T>,
    offset: Option<DVector<T>>,
}

impl<T: Scalar> Subspace<T> {
    fn new(w: &DMatrix<T>, b: Option<&DVector<T>>) -> Result<Self> {
        if let Some(b) = b {
            if b.len() != w.ncols() {
                return Err(dim_mismatch(format!("offset of length {}", w.ncols()), b.len()));
            }
        }
        check_no_zero_columns(w, b)?;
        let basis = if w.nrows() == 0 || w.amax() == T::zero() {
            DMatrix::zeros(0, w.ncols())
        } else {
            numlin::row_space_basis(w)?
        };
        Ok(Self {
            basis,
            offset: b.cloned(),
        })
    }

    fn ambient(&self) -> usize {
        self.basis.ncols()
    }

    fn rank(&self) -> usize {
        self.basis.nrows()
    }

    /// Coefficient dimension of the homogenized constraint vectors.
    fn lifted_dim(&self) -> usize {
        self.rank() + usize::from(self.offset.is_some())
    }

    /// Normalized constraint `a_i` for coordinate `i` with sign `s`.
    fn constraint(&self, i: usize, s: i8) -> DVector<T> {
        let r = self.rank();
        let mut a = DVector::zeros(self.lifted_dim());
        a.rows_mut(0, r).copy_from(&self.basis.column(i));
        if let Some(b) = &self.offset {
            a[r] = b[i];
        }
        let norm = a.norm();
        if norm > T::zero() {
            a /= norm;
        }
        if s < 0 {
            a.neg_mut();
        }
        a
    }

    /// `t > 0` for the homogenizing coordinate of an affine subspace.
    fn offset_constraint(&self) -> Option<DVector<T>> {
        self.offset.as_ref().map(|_| {
            let mut a = DVector::zeros(self.lifted_dim());
            a[self.rank()] = T::one();
            a
        })
    }

    /// Max-min margin and lifted direction for the partial sign pattern on
    /// coordinates `0..signs.len()` (or the listed `coords`).
    fn margin(&self, coords: &[usize], signs: &[i8]) -> (T, DVector<T>) {
        let mut pts: Vec<DVector<T>> = coords
            .iter()
            .zip(signs)
            .map(|(&i, &s)| self.constraint(i, s))
            .collect();
        if let Some(a0) = self.offset_constraint() {
            pts.push(a0);
        }
        if pts.is_empty() || self.lifted_dim() == 0 {
            return (T::zero(), DVector::zeros(self.lifted_dim()));
        }
        let x = min_norm_point(&pts);
        let norm = x.norm();
        (norm, x)
    }

    /// Subspace vector corresponding to a lifted direction.
    fn realize(&self, lifted: &DVector<T>) -> DVector<T> {
        let r = self.rank();
        let y = lifted.rows(0, r);
        match &self.offset {
            Some(b) => {
                let t = lifted[r];
                self.basis.transpose() * (y / t) + b
            }
            None => self.basis.transpose() * y,
        }
    }

    fn witness_for(&self, signs: &[i8]) -> Option<DVector<T>> {
        self.witness_with_margin(signs).map(|(v, _)| v)
    }

    fn witness_with_margin(&self, signs: &[i8]) -> Option<(DVector<T>, T)> {
        let coords: Vec<usize> = (0..signs.len()).collect();
        let (margin, x) = self.margin(&coords, signs);
        if margin <= T::lit(FEASIBILITY_TOL) {
            return None;
        }
        let v = self.realize(&x);
        let ok = v
            .iter()
            .zip(signs)
            .all(|(&vi, &s)| if s > 0 { vi > T::zero() } else { vi < T::zero() });
        ok.then_some((v, margin))
    }
}

fn check_no_zero_columns<T: Scalar>(w: &DMatrix<T>, b: Option<&DVector<T>>) -> Result<()> {
    for j in 0..w.ncols() {
        let col_zero = w.column(j).iter().all(|&x| x == T::zero());
        let b_zero = b.map_or(true, |b| b[j] == T::zero());
        if col_zero && b_zero {
            return Err(Error::ZeroColumn(j));
        }
    }
    Ok(())
}

/// Whether the open orthant `s` meets `𝓡(W)` (or `𝓡(W) + b`); returns a
/// witness vector when it does.
pub fn orthant_witness<T: Scalar>(
    w: &DMatrix<T>,
    b: Option<&DVector<T>>,
    s: &SignVector,
) -> Result<Option<DVector<T>>> {
    if s.len() != w.ncols() {
        return Err(dim_mismatch(format!("sign vector of length {}", w.ncols()), s.len()));
    }
    let sub = Subspace::new(w, b)?;
    Ok(sub.witness_for(s.as_slice()))
}

/// Sign matrix of `𝓡(W)` (or of the affine subspace `𝓡(W) + b`).
///
/// Orthants are enumerated by sweeping the coordinate hyperplanes one at a
/// time: a partial sign pattern on the first `k` coordinates is kept only if
/// the margin program certifies it, so the work is proportional to the
/// number of intersected orthants rather than `2ⁿ`.
pub fn sign_matrix<T: Scalar>(w: &DMatrix<T>, b: Option<&DVector<T>>) -> Result<SignMatrix<T>> {
    let sub = Subspace::new(w, b)?;
    let n = sub.ambient();
    let tol = T::lit(FEASIBILITY_TOL);

    // (partial signs, lifted direction certifying them)
    let mut partial: Vec<(Vec<i8>, Option<DVector<T>>)> = vec![(Vec::new(), None)];
    for i in 0..n {
        let coords: Vec<usize> = (0..=i).collect();
        let mut next = Vec::with_capacity(partial.len() * 2);
        for (signs, dir) in &partial {
            for s in [-1i8, 1] {
                let mut child = signs.clone();
                child.push(s);
                // reuse the parent's certificate when it already has the right sign
                if let Some(d) = dir {
                    let a = sub.constraint(i, s);
                    let margin_parent = coords[..i]
                        .iter()
                        .zip(signs.iter())
                        .map(|(&c, &sc)| sub.constraint(c, sc).dot(d))
                        .chain(sub.offset_constraint().map(|a0| a0.dot(d)))
                        .fold(a.dot(d), |m, x| m.min(x));
                    if margin_parent > tol {
                        next.push((child, Some(d.clone())));
                        continue;
                    }
                }
                let (margin, x) = sub.margin(&coords, &child);
                if margin > tol {
                    next.push((child, Some(x)));
                }
            }
        }
        partial = next;
    }

    let mut rows = Vec::with_capacity(partial.len());
    let mut witnesses = Vec::with_capacity(partial.len());
    let mut margins = Vec::with_capacity(partial.len());
    for (signs, _) in partial {
        // recompute with the full constraint set for a maximally interior witness
        if let Some((v, margin)) = sub.witness_with_margin(&signs) {
            rows.push(SignVector(signs));
            witnesses.push(v);
            margins.push(margin);
        }
    }
    Ok(SignMatrix { rows, witnesses, margins })
}

/// Checks every one of the `2ⁿ` orthants individually. Intended as an
/// independent cross-check of [`sign_matrix`] for small `n`.
pub fn sign_matrix_exhaustive<T: Scalar>(w: &DMatrix<T>, b: Option<&DVector<T>>) -> Result<SignMatrix<T>> {
    let sub = Subspace::new(w, b)?;
    let n = sub.ambient();
    if n > 20 {
        return Err(Error::InvalidArchitecture(format!(
            "exhaustive orthant check limited to n <= 20, got {n}"
        )));
    }
    let mut rows = Vec::new();
    let mut witnesses = Vec::new();
    let mut margins = Vec::new();
    for mask in 0u32..(1u32 << n) {
        // bit (n-1-i) set means coordinate i positive: lexicographic order
        let signs: Vec<i8> = (0..n)
            .map(|i| if mask & (1 << (n - 1 - i)) != 0 { 1 } else { -1 })
            .collect();
        if let Some((v, margin)) = sub.witness_with_margin(&signs) {
            rows.push(SignVector(signs));
            witnesses.push(v);
            margins.push(margin);
        }
    }
    Ok(SignMatrix { rows, witnesses, margins })
}

// ---------------------------------------------------------------------------
// Elementary vectors.

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Scales `v` so its first nonzero entry is `+1`, flushing entries below the
/// support tolerance to exact zero.
fn normalize_elementary<T: Scalar>(v: &DVector<T>) -> DVector<T> {
    let cutoff = T::lit(SUPPORT_TOL) * v.amax();
    let mut out = v.map(|x| if x.abs() > cutoff { x } else { T::zero() });
    if let Some(&first) = out.iter().find(|x| **x != T::zero()) {
        out /= first;
    }
    out
}

/// All elementary vectors of `𝓡(V)` up to scale.
///
/// Every elementary vector vanishes on a set of `r - 1` coordinates whose
/// basis columns are independent, and that set determines it up to scale;
/// enumerating such sets therefore yields each one.
pub fn elementary_vectors<T: Scalar>(v: &DMatrix<T>) -> Result<ElementaryVectorSet<T>> {
    if v.nrows() == 0 || v.ncols() == 0 || v.amax() == T::zero() {
        return Err(Error::EmptyMatrix);
    }
    let basis = numlin::row_space_basis(v)?;
    let (r, n) = basis.shape();
    let mut found: BTreeMap<Vec<usize>, DVector<T>> = BTreeMap::new();
    for zeros in combinations(n, r - 1) {
        let coeff = if r == 1 {
            DVector::from_element(1, T::one())
        } else {
            let mut cols = DMatrix::zeros(r - 1, r);
            for (k, &c) in zeros.iter().enumerate() {
                cols.row_mut(k).copy_from(&basis.column(c).transpose());
            }
            if numlin::rank(&cols) != r - 1 {
                continue;
            }
            let null = numlin::null_space_basis(&cols)?;
            if null.ncols() != 1 {
                continue;
            }
            null.column(0).into_owned()
        };
        let vec = normalize_elementary(&(basis.transpose() * coeff));
        let supp = support(&vec);
        if supp.is_empty() {
            continue;
        }
        found.entry(supp).or_insert(vec);
    }
    // keep inclusion-minimal supports only
    let supports: Vec<Vec<usize>> = found.keys().cloned().collect();
    let vectors = found
        .into_iter()
        .filter(|(s, _)| {
            !supports
                .iter()
                .any(|t| t.len() < s.len() && t.iter().all(|i| s.contains(i)))
        })
        .map(|(_, v)| v)
        .collect();
    Ok(ElementaryVectorSet { vectors })
}

// ---------------------------------------------------------------------------
// Observability certificate.

/// Rank test `rank(χ(S)) = n` on the sign matrix of `𝓡(W)` (or of
/// `𝓡(W) + b` when `b` is given). `W` must have full row rank.
pub fn observability_certificate<T: Scalar>(
    w: &DMatrix<T>,
    b: Option<&DVector<T>>,
) -> Result<ObservabilityCertificate<T>> {
    if let Some(b) = b {
        if b.len() != w.ncols() {
            return Err(dim_mismatch(format!("bias of length {}", w.ncols()), b.len()));
        }
    }
    check_no_zero_columns(w, b)?;
    let rank_w = numlin::rank(w);
    if rank_w != w.nrows() {
        return Err(Error::RankDeficientW {
            rank: rank_w,
            rows: w.nrows(),
        });
    }
    let sign_matrix = sign_matrix(w, b)?;
    let hidden = w.ncols();
    let rank = if sign_matrix.is_empty() {
        0
    } else {
        numlin::rank(&sign_matrix.indicator_matrix())
    };
    Ok(ObservabilityCertificate {
        observable: rank == hidden,
        rank,
        hidden,
        sign_matrix,
    })
}

// ---------------------------------------------------------------------------
// Cone bases.

/// Placement of the perturbed cone vectors around the interior point `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConeLayout {
    /// `v` itself plus `v + ε_k d_k` for each basis direction `d_k`.
    #[default]
    Star,
    /// `v + ε s_k` for the vertices `s_k` of a regular simplex centred at
    /// the origin; the vectors are spread symmetrically about `v`.
    Simplex,
}

/// Gram–Schmidt: orthonormal rows spanning `span(first ∪ rows(rest))`,
/// starting with `first` normalized.
fn orthonormal_completion<T: Scalar>(first: Option<&DVector<T>>, rest: &DMatrix<T>, want: usize) -> Vec<DVector<T>> {
    let mut out: Vec<DVector<T>> = Vec::with_capacity(want);
    let candidates = first
        .cloned()
        .into_iter()
        .chain(rest.row_iter().map(|r| r.transpose()));
    for mut c in candidates {
        for q in &out {
            let proj = q.dot(&c);
            c.axpy(-proj, q, T::one());
        }
        // second pass for stability
        for q in &out {
            let proj = q.dot(&c);
            c.axpy(-proj, q, T::one());
        }
        let norm = c.norm();
        if norm > T::lit(1e-10) {
            out.push(c / norm);
        }
        if out.len() == want {
            break;
        }
    }
    out
}

/// Largest `t` with `sign(v + t d) = sign(v)`.
fn max_sign_step<T: Scalar>(v: &DVector<T>, d: &DVector<T>) -> T {
    v.iter()
        .zip(d.iter())
        .filter(|(_, di)| **di != T::zero())
        .fold(T::max_value().unwrap(), |m, (vi, di)| m.min(vi.abs() / di.abs()))
}

/// Vertices of a regular simplex centred at the origin of `span(dirs)`,
/// one more than there are directions. Uses the Helmert basis of `1^⊥`.
fn simplex_offsets<T: Scalar>(dirs: &[DVector<T>], n: usize) -> Vec<DVector<T>> {
    let k = dirs.len() + 1;
    (0..k)
        .map(|vertex| {
            let mut s = DVector::zeros(n);
            for (j, d) in dirs.iter().enumerate() {
                let jj = j + 1;
                let norm = T::from_count(jj * (jj + 1)).sqrt();
                let h = match vertex.cmp(&jj) {
                    std::cmp::Ordering::Less => T::one() / norm,
                    std::cmp::Ordering::Equal => -T::from_count(jj) / norm,
                    std::cmp::Ordering::Greater => T::zero(),
                };
                s.axpy(h, d, T::one());
            }
            s
        })
        .collect()
}

fn build_cone_rows<T: Scalar>(
    sub: &Subspace<T>,
    interior: &DVector<T>,
    directions: &DMatrix<T>,
    step: f64,
    layout: ConeLayout,
) -> Result<DMatrix<T>> {
    let r = sub.rank();
    let n = sub.ambient();
    // linear case: scale is free, and the interior point itself is the
    // first basis direction
    let interior = match sub.offset {
        Some(_) => interior.clone(),
        None => interior / interior.norm(),
    };
    let dirs = if sub.offset.is_some() {
        orthonormal_completion(None, directions, r)
    } else {
        orthonormal_completion(Some(&interior), directions, r)
            .into_iter()
            .skip(1)
            .collect()
    };
    let offsets: Vec<DVector<T>> = match layout {
        ConeLayout::Star => std::iter::once(DVector::zeros(n))
            .chain(dirs.iter().map(|d| d * (T::lit(step) * max_sign_step(&interior, d))))
            .collect(),
        ConeLayout::Simplex => {
            let simplex = simplex_offsets(&dirs, n);
            let eps = simplex
                .iter()
                .fold(T::max_value().unwrap(), |m, s| m.min(max_sign_step(&interior, s)));
            let eps = if simplex.len() > 1 { T::lit(step) * eps } else { T::zero() };
            simplex.into_iter().map(|s| s * eps).collect()
        }
    };
    let count = offsets.len();
    let mut rows = DMatrix::zeros(count, n);
    for (k, off) in offsets.iter().enumerate() {
        rows.row_mut(k).copy_from(&(&interior + off).transpose());
    }
    // affine case: the rows must be affinely independent; linear case:
    // linearly independent
    let independent = match &sub.offset {
        Some(_) => {
            let mut diffs = rows.rows(1, count - 1).into_owned();
            for mut d in diffs.row_iter_mut() {
                d -= rows.row(0);
            }
            count == r + 1 && (r == 0 || numlin::rank(&diffs) == r)
        }
        None => count == r && numlin::rank(&rows) == r,
    };
    if !independent {
        return Err(Error::ConstructionFailed(format!(
            "cone basis of {count} vectors is degenerate"
        )));
    }
    let margin = T::lit(INTERIOR_MARGIN);
    for row in rows.row_iter() {
        let lo = row.iter().fold(T::max_value().unwrap(), |m, x| m.min(x.abs()));
        if lo < margin * row.amax() {
            return Err(Error::ConstructionFailed(
                "cone vector too close to the orthant boundary".into(),
            ));
        }
    }
    Ok(rows)
}

/// Vectors of `(𝓡(W) [+ b]) ∩ 𝒪_s`, one per row: `rank(W)` linearly
/// independent ones for a row space, `rank(W) + 1` affinely independent ones
/// for an affine subspace.
///
/// Built from an interior point of the intersection perturbed along an
/// orthonormal basis of `𝓡(W)`, each by [`CONE_STEP`] times the largest step
/// that keeps the signs.
pub fn cone_basis<T: Scalar>(w: &DMatrix<T>, s: &SignVector, b: Option<&DVector<T>>) -> Result<DMatrix<T>> {
    let sub = Subspace::new(w, b)?;
    if s.len() != sub.ambient() {
        return Err(dim_mismatch(format!("sign vector of length {}", sub.ambient()), s.len()));
    }
    let interior = sub
        .witness_for(s.as_slice())
        .ok_or_else(|| Error::EmptyIntersection(s.to_string()))?;
    let basis = sub.basis.clone();
    build_cone_rows(&sub, &interior, &basis, CONE_STEP, ConeLayout::Star)
}

/// Like [`cone_basis`] but with a randomly moved interior point and randomly
/// rotated perturbation directions, giving a different admissible basis on
/// every call.
pub fn cone_basis_randomized<T: Scalar, R: Rng + ?Sized>(
    w: &DMatrix<T>,
    s: &SignVector,
    b: Option<&DVector<T>>,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    cone_basis_randomized_with(w, s, b, CONE_STEP, ConeLayout::Star, rng)
}

/// [`cone_basis_randomized`] with a custom relative step in `(0, 1)` and
/// layout.
pub fn cone_basis_randomized_with<T: Scalar, R: Rng + ?Sized>(
    w: &DMatrix<T>,
    s: &SignVector,
    b: Option<&DVector<T>>,
    step: f64,
    layout: ConeLayout,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::InvalidTolerance(step));
    }
    let sub = Subspace::new(w, b)?;
    if s.len() != sub.ambient() {
        return Err(dim_mismatch(format!("sign vector of length {}", sub.ambient()), s.len()));
    }
    let center = sub
        .witness_for(s.as_slice())
        .ok_or_else(|| Error::EmptyIntersection(s.to_string()))?;
    let r = sub.rank();

    // move the interior point by at most half its smallest coordinate
    let coeff = DVector::from_fn(r, |_, _| T::lit(rng.gen_range(-1.0..1.0)));
    let shift = sub.basis.transpose() * coeff;
    let min_abs = center.iter().fold(T::max_value().unwrap(), |m, x| m.min(x.abs()));
    let interior = if shift.amax() > T::zero() {
        let scale = T::lit(rng.gen_range(0.0..0.5)) * min_abs / shift.amax();
        &center + shift * scale
    } else {
        center
    };
    // random mixing of the basis rows
    let mix = DMatrix::from_fn(r, r, |_, _| T::lit(rng.gen_range(-1.0..1.0)));
    let directions = &mix * &sub.basis;
    build_cone_rows(&sub, &interior, &directions, step, layout)
}

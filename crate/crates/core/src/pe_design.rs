//! Persistently exciting input design for the fixed-output and bias
//! architectures, and a direct PE check for any input sequence.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::numlin;
use crate::orthant_geo::{self, ConeLayout, SignMatrix, SignVector};
use crate::relu_net::{self, WeightState};
use crate::scalar::Scalar;

/// Tolerance on `U W = C` and on the bias-design identity residual.
pub const DESIGN_TOL: f64 = 1e-9;

/// A designed input sequence together with the construction data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationPlan<T: Scalar> {
    /// `N × m` input sequence, one input per row.
    pub u: DMatrix<T>,
    /// `U_k`, consecutive row blocks of `u`.
    pub blocks: Vec<DMatrix<T>>,
    /// Target pre-activations, `N × n`.
    pub c: DMatrix<T>,
    /// Binary `n × n` matrix whose row `k` is `χ(s_k)`.
    pub t: DMatrix<T>,
    pub orthants: Vec<SignVector>,
    pub certified: bool,
    /// Numeric rank of the observability Jacobian of `u` at the design weights.
    pub rank: usize,
}

/// Outcome of [`verify_pe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeCheck<T: Scalar> {
    pub pe: bool,
    pub rank: usize,
    /// Smallest singular value counted in the rank; zero if the rank is zero.
    pub sigma_min: T,
}

/// Rank test of the observability Jacobian at `weights` under `u`.
pub fn verify_pe<T: Scalar>(u: &DMatrix<T>, weights: &WeightState<T>) -> Result<PeCheck<T>> {
    let jac = relu_net::observability_jacobian(weights, u)?;
    let dim = weights.arch().state_dim();
    let decision = numlin::numeric_rank(&jac.dh, numlin::default_rank_tol(jac.dh.nrows(), dim))?;
    Ok(PeCheck {
        pe: decision.rank == dim,
        rank: decision.rank,
        sigma_min: decision.sigma_min().unwrap_or_else(T::zero),
    })
}

/// Indices of sign-matrix rows, in the given order, whose indicators are
/// linearly independent; stops once `n` are found.
fn select_orthants<T: Scalar>(rows: &[SignVector], order: &[usize], n: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let mut basis: Vec<DVector<T>> = Vec::with_capacity(n);
    for &idx in order {
        let mut v = DVector::from_iterator(n, rows[idx].indicator().into_iter().map(|b| T::from_count(b as usize)));
        // Gram–Schmidt residual test on the 0/1 vector
        let scale = v.norm();
        for q in &basis {
            let p = q.dot(&v);
            v.axpy(-p, q, T::one());
        }
        for q in &basis {
            let p = q.dot(&v);
            v.axpy(-p, q, T::one());
        }
        let res = v.norm();
        if res > T::lit(1e-8) * scale {
            basis.push(v / res);
            chosen.push(idx);
            if chosen.len() == n {
                break;
            }
        }
    }
    chosen
}

fn validate_inputs<T: Scalar>(w: &DMatrix<T>, b: Option<&DVector<T>>) -> Result<()> {
    numlin::check_finite(w)?;
    let (m, n) = w.shape();
    if m > n {
        return Err(Error::MoreInputsThanHidden { inputs: m, hidden: n });
    }
    if let Some(b) = b {
        if b.len() != n {
            return Err(dim_mismatch(format!("bias of length {n}"), b.len()));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: m, col: 0 });
        }
    }
    Ok(())
}

/// Order in which sign-matrix rows are offered to the greedy selection of
/// the `n` orthants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrthantOrder {
    Lexicographic,
    /// Uniformly random order.
    Shuffled,
    /// Decreasing margin, so the widest orthant sectors are preferred.
    WidestFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub order: OrthantOrder,
    /// Relative perturbation step of the cone bases, in `(0, 1)`.
    pub step: f64,
    pub layout: ConeLayout,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            order: OrthantOrder::Lexicographic,
            step: orthant_geo::CONE_STEP,
            layout: ConeLayout::Star,
        }
    }
}

type ConeFn<'a, T> = dyn FnMut(&SignVector) -> Result<DMatrix<T>> + 'a;
type OrderFn<'a, T> = dyn FnMut(&SignMatrix<T>) -> Vec<usize> + 'a;

fn lexicographic<T: Scalar>(s: &SignMatrix<T>) -> Vec<usize> {
    (0..s.len()).collect()
}

fn widest_first<T: Scalar>(s: &SignMatrix<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    let m = s.margins();
    order.sort_by(|&a, &b| m[b].partial_cmp(&m[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
}

fn design<T: Scalar>(
    w: &DMatrix<T>,
    b: Option<&DVector<T>>,
    arrange: &mut OrderFn<'_, T>,
    cone: &mut ConeFn<'_, T>,
) -> Result<ExcitationPlan<T>> {
    validate_inputs(w, b)?;
    let (m, n) = w.shape();
    let cert = orthant_geo::observability_certificate(w, b)?;
    if !cert.observable {
        return Err(Error::CertificateFailed {
            rank: cert.rank,
            hidden: n,
        });
    }
    let rows = cert.sign_matrix.rows();
    let order = arrange(&cert.sign_matrix);
    let chosen = select_orthants::<T>(rows, &order, n);
    if chosen.len() != n {
        return Err(Error::ConstructionFailed(format!(
            "only {} independent orthant indicators found",
            chosen.len()
        )));
    }

    let w_pinv = numlin::pinv(w)?;
    let block_rows = m + usize::from(b.is_some());
    let total = block_rows * n;
    let mut u = DMatrix::zeros(total, m);
    let mut c = DMatrix::zeros(total, n);
    let mut t = DMatrix::zeros(n, n);
    let mut blocks = Vec::with_capacity(n);
    let mut orthants = Vec::with_capacity(n);
    for (k, &idx) in chosen.iter().enumerate() {
        let s = &rows[idx];
        let c_k = cone(s)?;
        if c_k.shape() != (block_rows, n) {
            return Err(Error::ConstructionFailed(format!(
                "cone basis for {s} has shape {:?}, expected ({block_rows}, {n})",
                c_k.shape()
            )));
        }
        // U_k = C_k W⁺, or (C_k - 1 bᵀ) W¹⁺ with a bias
        let shifted = match b {
            Some(b) => {
                let mut s = c_k.clone();
                for mut row in s.row_iter_mut() {
                    row -= b.transpose();
                }
                s
            }
            None => c_k.clone(),
        };
        let u_k = shifted * &w_pinv;
        u.rows_mut(k * block_rows, block_rows).copy_from(&u_k);
        c.rows_mut(k * block_rows, block_rows).copy_from(&c_k);
        for (j, bit) in s.indicator().into_iter().enumerate() {
            t[(k, j)] = T::from_count(bit as usize);
        }
        blocks.push(u_k);
        orthants.push(s.clone());
    }

    let weights = match b {
        Some(b) => WeightState::with_bias(w, b)?,
        None => WeightState::fixed_output(w)?,
    };
    let pre = relu_net::pre_activations(&weights, &u)?;
    let scale = T::one() + c.amax();
    // DESIGN_TOL is below f32 resolution; never ask for better than 1000 ulps
    let tol = T::lit(DESIGN_TOL).max(T::default_epsilon() * T::lit(1e3));
    if (&pre - &c).amax() > tol * scale {
        return Err(Error::ConstructionFailed(format!(
            "input does not reproduce the cone vectors (residual {})",
            (&pre - &c).amax()
        )));
    }
    let check = verify_pe(&u, &weights)?;
    let dim = weights.arch().state_dim();
    if !check.pe {
        return Err(Error::ConstructionFailed(format!(
            "designed input has Jacobian rank {} < {dim}",
            check.rank
        )));
    }
    Ok(ExcitationPlan {
        u,
        blocks,
        c,
        t,
        orthants,
        certified: true,
        rank: check.rank,
    })
}

/// Minimal-length (`mn`) PE input for the fixed-output network with weight
/// matrix `w` (`m × n`, `m ≤ n`).
pub fn design_pe_input<T: Scalar>(w: &DMatrix<T>) -> Result<ExcitationPlan<T>> {
    design(w, None, &mut lexicographic, &mut |s| orthant_geo::cone_basis(w, s, None))
}

/// Minimal-length (`(m+1)n`) PE input for the network with input weights
/// `w1` and hidden bias `b`.
pub fn design_pe_input_bias<T: Scalar>(w1: &DMatrix<T>, b: &DVector<T>) -> Result<ExcitationPlan<T>> {
    design(w1, Some(b), &mut lexicographic, &mut |s| orthant_geo::cone_basis(w1, s, Some(b)))
}

/// Like [`design_pe_input`]/[`design_pe_input_bias`] but with random cone
/// bases and a configurable orthant order and step.
pub fn design_pe_input_randomized<T: Scalar, R: Rng + ?Sized>(
    w: &DMatrix<T>,
    b: Option<&DVector<T>>,
    options: &DesignOptions,
    rng: &mut R,
) -> Result<ExcitationPlan<T>> {
    let rng = RefCell::new(rng);
    let mut arrange = |s: &SignMatrix<T>| match options.order {
        OrthantOrder::Lexicographic => lexicographic(s),
        OrthantOrder::WidestFirst => widest_first(s),
        OrthantOrder::Shuffled => {
            let mut order = lexicographic(s);
            order.shuffle(&mut **rng.borrow_mut());
            order
        }
    };
    design(w, b, &mut arrange, &mut |s| {
        orthant_geo::cone_basis_randomized_with(w, s, b, options.step, options.layout, &mut **rng.borrow_mut())
    })
}

/// PE input of arbitrary length `len ≥ state dimension`: independently
/// randomized minimal plans concatenated and truncated to `len` rows.
pub fn design_pe_sequence<T: Scalar, R: Rng + ?Sized>(
    w: &DMatrix<T>,
    b: Option<&DVector<T>>,
    len: usize,
    options: &DesignOptions,
    rng: &mut R,
) -> Result<DMatrix<T>> {
    let (m, n) = w.shape();
    let minimal = (m + usize::from(b.is_some())) * n;
    if len < minimal {
        return Err(dim_mismatch(format!("sequence length >= {minimal}"), len));
    }
    let mut out = DMatrix::zeros(len, m);
    let mut filled = 0;
    while filled < len {
        let plan = design_pe_input_randomized(w, b, options, rng)?;
        let take = (len - filled).min(plan.u.nrows());
        out.rows_mut(filled, take).copy_from(&plan.u.rows(0, take));
        filled += take;
    }
    Ok(out)
}

/// `‖C_k α − 1‖_∞` over all blocks, with `α = (bᵀ − bᵀ W¹⁺ W¹)⁺`.
///
/// `None` when `b ∈ 𝓡(W¹)`: then `α = 0` and the identity cannot hold, but
/// the plan is still valid because its blocks are affinely independent.
pub fn bias_condition_residual<T: Scalar>(
    plan: &ExcitationPlan<T>,
    w1: &DMatrix<T>,
    b: &DVector<T>,
) -> Result<Option<T>> {
    let pinv = numlin::pinv(w1)?;
    let bt = b.transpose();
    let r = &bt - &bt * &pinv * w1;
    if r.norm() <= T::lit(1e-10) * (T::one() + b.norm()) {
        return Ok(None);
    }
    let alpha = numlin::pinv(&DMatrix::from_row_slice(1, r.len(), r.as_slice()))?;
    let prod = &plan.c * alpha;
    Ok(Some(prod.iter().fold(T::zero(), |m, &x| m.max((x - T::one()).abs()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_plan() {
        let w = DMatrix::<f64>::identity(2, 2);
        let plan = design_pe_input(&w).unwrap();
        assert_eq!(plan.u.shape(), (4, 2));
        assert_eq!(plan.rank, 4);
        assert!(plan.certified);
        for (u_k, k) in plan.blocks.iter().zip(0..) {
            assert_eq!(u_k, &plan.c.rows(2 * k, 2).into_owned());
        }
        // dense rank oracle on the assembled Jacobian
        let ws = WeightState::fixed_output(&w).unwrap();
        let dh = relu_net::jacobian(&ws, &plan.u).unwrap();
        assert_eq!(dh.clone().svd(false, false).rank(1e-9), 4);
    }

    #[test]
    fn example_one_is_rejected() {
        assert!(matches!(
            design_pe_input(&dmatrix![1.0, 2.0, 3.0]),
            Err(Error::CertificateFailed { hidden: 3, .. })
        ));
    }

    #[test]
    fn more_inputs_than_hidden_rejected() {
        let w = dmatrix![1.0; 2.0];
        assert!(matches!(
            design_pe_input(&w),
            Err(Error::MoreInputsThanHidden { inputs: 2, hidden: 1 })
        ));
    }

    #[test]
    fn bias_identity_plan() {
        let w1 = DMatrix::<f64>::identity(2, 2);
        let b = dvector![0.1, -0.2];
        let plan = design_pe_input_bias(&w1, &b).unwrap();
        assert_eq!(plan.u.shape(), (6, 2));
        assert_eq!(plan.rank, 6);
        // b lies in 𝓡(I₂), so the bias identity is vacuous here
        assert_eq!(bias_condition_residual(&plan, &w1, &b).unwrap(), None);
    }

    fn augmented_determinants(plan: &ExcitationPlan<f64>) -> Vec<f64> {
        plan.blocks
            .iter()
            .map(|u_k| {
                let m = u_k.ncols();
                let mut aug = DMatrix::<f64>::from_element(m + 1, m + 1, 1.0);
                aug.columns_mut(0, m).copy_from(u_k);
                aug.determinant()
            })
            .collect()
    }

    #[test]
    fn bias_zero_blocks_augmented_nonsingular() {
        let w1 = dmatrix![1.0, 0.0, 1.0; 0.0, 1.0, -1.0];
        assert!(orthant_geo::observability_certificate(&w1, None).unwrap().observable);
        let plan = design_pe_input_bias(&w1, &dvector![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(plan.rank, 9);
        assert!(augmented_determinants(&plan).iter().all(|d| d.abs() > 1e-9));
    }

    #[test]
    fn bias_identity_holds_off_row_space() {
        let w1 = dmatrix![1.0, -2.0, 0.5];
        let b = dvector![0.3, 0.2, -0.4];
        let plan = design_pe_input_bias(&w1, &b).unwrap();
        assert_eq!(plan.u.shape(), (6, 1));
        assert_eq!(plan.rank, 6);
        assert!(bias_condition_residual(&plan, &w1, &b).unwrap().unwrap() < 1e-9);
        assert!(augmented_determinants(&plan).iter().all(|d| d.abs() > 1e-9));
    }

    #[test]
    fn repeated_row_is_not_pe() {
        let w = dmatrix![1.0, 0.5, -0.3; 0.2, -1.0, 0.7];
        let ws = WeightState::fixed_output(&w).unwrap();
        let u = DMatrix::from_fn(6, 2, |_, j| if j == 0 { 0.9 } else { 0.4 });
        let check = verify_pe(&u, &ws).unwrap();
        assert!(!check.pe);
        assert!(check.rank <= 2);
    }

    #[test]
    fn scalar_network_pe() {
        let ws = WeightState::fixed_output(&dmatrix![1.0]).unwrap();
        let check = verify_pe::<f64>(&dmatrix![1.0], &ws).unwrap();
        assert!(check.pe);
        assert_eq!(check.rank, 1);
        assert!((check.sigma_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn randomized_plans_differ_and_certify() {
        let w = dmatrix![1.0, 0.5, -0.3, 0.8; 0.2, -1.0, 0.7, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let opts = DesignOptions::default();
        let a = design_pe_input_randomized(&w, None, &opts, &mut rng).unwrap();
        let b = design_pe_input_randomized(&w, None, &opts, &mut rng).unwrap();
        assert!(a.certified && b.certified);
        assert!((&a.u - &b.u).amax() > 1e-6);
        assert_eq!(a.t, b.t);
    }

    #[test]
    fn sequence_extends_and_stays_pe() {
        let w = dmatrix![1.0, 0.5, -0.3, 0.8; 0.2, -1.0, 0.7, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = DesignOptions {
            order: OrthantOrder::Shuffled,
            ..DesignOptions::default()
        };
        let u = design_pe_sequence(&w, None, 19, &opts, &mut rng).unwrap();
        assert_eq!(u.nrows(), 19);
        let ws = WeightState::fixed_output(&w).unwrap();
        assert!(verify_pe(&u, &ws).unwrap().pe);
        assert!(design_pe_sequence(&w, None, 7, &opts, &mut rng).is_err());
    }
}

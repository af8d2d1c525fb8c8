//! Two-layer ReLU networks viewed as static systems whose state is the
//! weight vector: forward evaluation, indicator matrices and the Jacobian of
//! the stacked-output (observability) map.
//!
//! State layout: the input-weight columns `w_1, …, w_n` stacked, then the
//! bias vector `b` (when present), then the output weights `W²` (when
//! trainable).

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{dim_mismatch, Error, Result};
use crate::numlin;
use crate::scalar::Scalar;

/// Pre-activations closer to zero than this make the Jacobian ill-defined.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Output weights fixed to one, no bias.
    FixedOutputTwoLayer,
    /// Output weights fixed to one, trainable hidden bias.
    BiasTwoLayer,
    /// Trainable input weights, hidden bias and output weights.
    GeneralTwoLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub variant: Variant,
    pub inputs: usize,
    pub hidden: usize,
}

impl Architecture {
    pub fn new(variant: Variant, inputs: usize, hidden: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least one input and one hidden node, got m={inputs}, n={hidden}"
            )));
        }
        Ok(Self {
            variant,
            inputs,
            hidden,
        })
    }

    pub fn fixed_output(inputs: usize, hidden: usize) -> Result<Self> {
        Self::new(Variant::FixedOutputTwoLayer, inputs, hidden)
    }

    pub fn bias(inputs: usize, hidden: usize) -> Result<Self> {
        Self::new(Variant::BiasTwoLayer, inputs, hidden)
    }

    pub fn general(inputs: usize, hidden: usize) -> Result<Self> {
        Self::new(Variant::GeneralTwoLayer, inputs, hidden)
    }

    /// `mn`, `(m+1)n` or `(m+2)n`.
    pub fn state_dim(&self) -> usize {
        let per_node = match self.variant {
            Variant::FixedOutputTwoLayer => self.inputs,
            Variant::BiasTwoLayer => self.inputs + 1,
            Variant::GeneralTwoLayer => self.inputs + 2,
        };
        per_node * self.hidden
    }

    pub fn has_bias(&self) -> bool {
        !matches!(self.variant, Variant::FixedOutputTwoLayer)
    }

    pub fn has_output_weights(&self) -> bool {
        matches!(self.variant, Variant::GeneralTwoLayer)
    }
}

/// Vectorized network weights together with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState<T: Scalar> {
    w: DVector<T>,
    arch: Architecture,
}

impl<T: Scalar> WeightState<T> {
    pub fn from_vec(arch: Architecture, w: DVector<T>) -> Result<Self> {
        if w.len() != arch.state_dim() {
            return Err(dim_mismatch(
                format!("state of length {}", arch.state_dim()),
                w.len(),
            ));
        }
        Ok(Self { w, arch })
    }

    pub fn zeros(arch: Architecture) -> Self {
        Self {
            w: DVector::zeros(arch.state_dim()),
            arch,
        }
    }

    /// Fixed-output network from an `m × n` weight matrix.
    pub fn fixed_output(weights: &DMatrix<T>) -> Result<Self> {
        let arch = Architecture::fixed_output(weights.nrows(), weights.ncols())?;
        Ok(Self {
            w: DVector::from_column_slice(weights.as_slice()),
            arch,
        })
    }

    pub fn with_bias(w1: &DMatrix<T>, b: &DVector<T>) -> Result<Self> {
        let arch = Architecture::bias(w1.nrows(), w1.ncols())?;
        if b.len() != arch.hidden {
            return Err(dim_mismatch(format!("bias of length {}", arch.hidden), b.len()));
        }
        let mut w = DVector::zeros(arch.state_dim());
        let mn = arch.inputs * arch.hidden;
        w.rows_mut(0, mn).copy_from_slice(w1.as_slice());
        w.rows_mut(mn, arch.hidden).copy_from(b);
        Ok(Self { w, arch })
    }

    pub fn general(w1: &DMatrix<T>, b: &DVector<T>, w2: &DVector<T>) -> Result<Self> {
        let arch = Architecture::general(w1.nrows(), w1.ncols())?;
        let n = arch.hidden;
        if b.len() != n || w2.len() != n {
            return Err(dim_mismatch(
                format!("bias and output weights of length {n}"),
                format!("{} and {}", b.len(), w2.len()),
            ));
        }
        let mut w = DVector::zeros(arch.state_dim());
        let mn = arch.inputs * n;
        w.rows_mut(0, mn).copy_from_slice(w1.as_slice());
        w.rows_mut(mn, n).copy_from(b);
        w.rows_mut(mn + n, n).copy_from(w2);
        Ok(Self { w, arch })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn as_vector(&self) -> &DVector<T> {
        &self.w
    }

    pub fn into_vector(self) -> DVector<T> {
        self.w
    }

    /// Same architecture, different state vector.
    pub fn with_vector(&self, w: DVector<T>) -> Result<Self> {
        Self::from_vec(self.arch, w)
    }

    /// `W` (or `W¹`): column `j` holds the weights into hidden node `j`.
    pub fn input_weights(&self) -> DMatrix<T> {
        let (m, n) = (self.arch.inputs, self.arch.hidden);
        DMatrix::from_column_slice(m, n, &self.w.as_slice()[..m * n])
    }

    pub fn hidden_weights(&self, node: usize) -> DVectorView<'_, T> {
        let m = self.arch.inputs;
        self.w.rows(node * m, m)
    }

    pub fn bias(&self) -> Option<DVector<T>> {
        self.arch.has_bias().then(|| {
            let mn = self.arch.inputs * self.arch.hidden;
            self.w.rows(mn, self.arch.hidden).into_owned()
        })
    }

    pub fn output_weights(&self) -> Option<DVector<T>> {
        self.arch.has_output_weights().then(|| {
            let n = self.arch.hidden;
            let offset = (self.arch.inputs + 1) * n;
            self.w.rows(offset, n).into_owned()
        })
    }

    /// `[W¹; bᵀ]` for biased architectures, `W` otherwise.
    pub fn stacked_input_matrix(&self) -> DMatrix<T> {
        let w1 = self.input_weights();
        match self.bias() {
            Some(b) => {
                let (m, n) = (self.arch.inputs, self.arch.hidden);
                let mut out = DMatrix::zeros(m + 1, n);
                out.rows_mut(0, m).copy_from(&w1);
                out.row_mut(m).copy_from(&b.transpose());
                out
            }
            None => w1,
        }
    }

    /// Euclidean distance between two states of the same architecture.
    pub fn distance(&self, other: &Self) -> T {
        (&self.w - &other.w).norm()
    }
}

#[inline]
pub fn relu<T: Scalar>(a: T) -> T {
    if a > T::zero() {
        a
    } else {
        T::zero()
    }
}

/// Activation indicator: 1 for strictly positive arguments, 0 otherwise.
#[inline]
pub fn chi<T: Scalar>(a: T) -> u8 {
    u8::from(a > T::zero())
}

pub fn relu_vec<T: Scalar>(a: &DVector<T>) -> DVector<T> {
    a.map(relu)
}

/// Binary matrix of activation states, one row per input, one column per
/// hidden node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorMatrix {
    pub bits: DMatrix<u8>,
}

impl IndicatorMatrix {
    pub fn from_pre_activations<T: Scalar>(pre: &DMatrix<T>) -> Self {
        Self {
            bits: pre.map(chi),
        }
    }

    pub fn nrows(&self) -> usize {
        self.bits.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.bits.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.bits[(row, col)]
    }

    pub fn to_real<T: Scalar>(&self) -> DMatrix<T> {
        self.bits.map(|b| if b == 1 { T::one() } else { T::zero() })
    }
}

/// `χ` applied elementwise.
pub fn chi_matrix<T: Scalar>(a: &DMatrix<T>) -> IndicatorMatrix {
    IndicatorMatrix::from_pre_activations(a)
}

fn check_inputs<T: Scalar>(weights: &WeightState<T>, inputs: &DMatrix<T>) -> Result<()> {
    let m = weights.arch.inputs;
    if inputs.ncols() != m {
        return Err(dim_mismatch(
            format!("input matrix with {m} columns"),
            format!("{} columns", inputs.ncols()),
        ));
    }
    Ok(())
}

/// Hidden pre-activations `U W (+ 1 bᵀ)`, one row per input.
pub fn pre_activations<T: Scalar>(weights: &WeightState<T>, inputs: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_inputs(weights, inputs)?;
    let mut pre = inputs * weights.input_weights();
    if let Some(b) = weights.bias() {
        for mut row in pre.row_iter_mut() {
            row += b.transpose();
        }
    }
    Ok(pre)
}

fn output_from_pre<T: Scalar>(weights: &WeightState<T>, pre: &DMatrix<T>) -> DVector<T> {
    let w2 = weights.output_weights();
    DVector::from_iterator(
        pre.nrows(),
        pre.row_iter().map(|row| match &w2 {
            Some(w2) => row
                .iter()
                .zip(w2.iter())
                .fold(T::zero(), |acc, (&a, &c)| acc + relu(a) * c),
            None => row.iter().fold(T::zero(), |acc, &a| acc + relu(a)),
        }),
    )
}

/// Network output for a single input vector.
pub fn forward<T: Scalar>(weights: &WeightState<T>, input: &DVector<T>) -> Result<T> {
    let u = DMatrix::from_row_slice(1, input.len(), input.as_slice());
    Ok(observability_map(weights, &u)?[0])
}

/// Stacked outputs `[h(w, u_1), …, h(w, u_N)]ᵀ` for the rows of `inputs`.
pub fn observability_map<T: Scalar>(weights: &WeightState<T>, inputs: &DMatrix<T>) -> Result<DVector<T>> {
    let pre = pre_activations(weights, inputs)?;
    Ok(output_from_pre(weights, &pre))
}

/// Jacobian of the observability map together with its factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityJacobian<T: Scalar> {
    /// `N × state_dim`.
    pub dh: DMatrix<T>,
    /// Block-diagonal input matrix, `N × Nm`, row `i` holding `u_iᵀ`.
    pub t_u: DMatrix<T>,
    pub t_chi: IndicatorMatrix,
}

impl<T: Scalar> ObservabilityJacobian<T> {
    /// `T_u (T_χ ⊗ I_m)`; equals the input-weight block of `dh`.
    pub fn factorized_input_block(&self) -> DMatrix<T> {
        let m = if self.t_chi.nrows() == 0 {
            0
        } else {
            self.t_u.ncols() / self.t_chi.nrows()
        };
        let kron = self.t_chi.to_real::<T>().kronecker(&DMatrix::identity(m, m));
        &self.t_u * kron
    }
}

/// Block-diagonal matrix with `u_iᵀ` in row `i`.
pub fn input_block_matrix<T: Scalar>(inputs: &DMatrix<T>) -> DMatrix<T> {
    let (rows, m) = inputs.shape();
    let mut t_u = DMatrix::zeros(rows, rows * m);
    for i in 0..rows {
        t_u.view_mut((i, i * m), (1, m)).copy_from(&inputs.row(i));
    }
    t_u
}

fn fill_jacobian<T: Scalar>(weights: &WeightState<T>, inputs: &DMatrix<T>, pre: &DMatrix<T>) -> DMatrix<T> {
    let arch = weights.arch;
    let (m, n) = (arch.inputs, arch.hidden);
    let rows = inputs.nrows();
    let w2 = weights.output_weights();
    let mut dh = DMatrix::zeros(rows, arch.state_dim());
    for i in 0..rows {
        for j in 0..n {
            let active = pre[(i, j)] > T::zero();
            if !active {
                continue;
            }
            let scale = w2.as_ref().map_or(T::one(), |w2| w2[j]);
            for l in 0..m {
                dh[(i, j * m + l)] = inputs[(i, l)] * scale;
            }
            if arch.has_bias() {
                dh[(i, m * n + j)] = scale;
            }
            if arch.has_output_weights() {
                dh[(i, (m + 1) * n + j)] = pre[(i, j)];
            }
        }
    }
    dh
}

/// Jacobian of the observability map at `weights`.
///
/// Refuses inputs whose pre-activations lie within [`BOUNDARY_TOL`] of zero,
/// where the map is not differentiable.
pub fn observability_jacobian<T: Scalar>(
    weights: &WeightState<T>,
    inputs: &DMatrix<T>,
) -> Result<ObservabilityJacobian<T>> {
    let pre = pre_activations(weights, inputs)?;
    let tol = T::lit(BOUNDARY_TOL);
    for i in 0..pre.nrows() {
        for j in 0..pre.ncols() {
            if pre[(i, j)].abs() <= tol {
                return Err(Error::BoundaryActivation {
                    row: i,
                    node: j,
                    value: pre[(i, j)].to_f64_lossy(),
                });
            }
        }
    }
    Ok(ObservabilityJacobian {
        dh: fill_jacobian(weights, inputs, &pre),
        t_u: input_block_matrix(inputs),
        t_chi: IndicatorMatrix::from_pre_activations(&pre),
    })
}

/// Jacobian using the subgradient `χ(0) = 0` at activation boundaries; used
/// by the gradient-based baselines and the regularized estimator.
pub fn jacobian<T: Scalar>(weights: &WeightState<T>, inputs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let pre = pre_activations(weights, inputs)?;
    Ok(fill_jacobian(weights, inputs, &pre))
}

/// Outputs and subgradient Jacobian from one pass over the pre-activations.
pub fn outputs_and_jacobian<T: Scalar>(
    weights: &WeightState<T>,
    inputs: &DMatrix<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let pre = pre_activations(weights, inputs)?;
    Ok((output_from_pre(weights, &pre), fill_jacobian(weights, inputs, &pre)))
}

/// Linear dependence among the Jacobian columns of one hidden node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeDependence<T: Scalar> {
    /// `dh · coefficients = 0` with the `W²_j` column weighted by `-1`.
    Combination {
        node: usize,
        coefficients: DVector<T>,
        residual: T,
    },
    /// `W²_j = 0`: the node's input-weight and bias columns vanish.
    ZeroOutputWeight { node: usize, column_norm: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeficiencyCertificate<T: Scalar> {
    pub dependencies: Vec<NodeDependence<T>>,
    pub rank: usize,
    pub state_dim: usize,
}

impl<T: Scalar> DeficiencyCertificate<T> {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.state_dim
    }

    /// Largest residual over the explicit combinations.
    pub fn max_residual(&self) -> T {
        self.dependencies.iter().fold(T::zero(), |acc, d| match d {
            NodeDependence::Combination { residual, .. } => acc.max(*residual),
            NodeDependence::ZeroOutputWeight { column_norm, .. } => acc.max(*column_norm),
        })
    }
}

/// Exhibits one Jacobian column dependence per hidden node of a network with
/// trainable output weights, proving the rank condition fails for every
/// input sequence.
pub fn multilayer_rank_deficiency<T: Scalar>(
    weights: &WeightState<T>,
    inputs: &DMatrix<T>,
) -> Result<DeficiencyCertificate<T>> {
    let arch = weights.arch;
    if arch.variant != Variant::GeneralTwoLayer {
        return Err(Error::InvalidArchitecture(
            "rank deficiency certificate applies to trainable output weights only".into(),
        ));
    }
    let (m, n) = (arch.inputs, arch.hidden);
    let dh = jacobian(weights, inputs)?;
    let b = weights.bias().expect("general architecture has bias");
    let w2 = weights.output_weights().expect("general architecture has output weights");

    let mut dependencies = Vec::with_capacity(n);
    for j in 0..n {
        if w2[j] == T::zero() {
            let mut norm_sq = T::zero();
            for l in 0..m {
                norm_sq += dh.column(j * m + l).norm_squared();
            }
            norm_sq += dh.column(m * n + j).norm_squared();
            dependencies.push(NodeDependence::ZeroOutputWeight {
                node: j,
                column_norm: norm_sq.sqrt(),
            });
            continue;
        }
        let inv = T::one() / w2[j];
        let mut c = DVector::zeros(arch.state_dim());
        for (l, &wl) in weights.hidden_weights(j).iter().enumerate() {
            c[j * m + l] = wl * inv;
        }
        c[m * n + j] = b[j] * inv;
        c[(m + 1) * n + j] = -T::one();
        let residual = (&dh * &c).amax();
        dependencies.push(NodeDependence::Combination {
            node: j,
            coefficients: c,
            residual,
        });
    }
    Ok(DeficiencyCertificate {
        dependencies,
        rank: numlin::rank(&dh),
        state_dim: arch.state_dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_and_chi_scalars() {
        assert_eq!(relu(-2.0), 0.0);
        assert_eq!(chi(-2.0), 0);
        assert_eq!(chi(0.0), 0);
        assert_eq!(chi(1e-300), 1);
        let c = chi_matrix(&dmatrix![1.0, -1.0; 0.0, 2.0]);
        assert_eq!(c.bits, dmatrix![1u8, 0; 0, 1]);
    }

    #[test]
    fn example_one_negative_inputs_are_linear() {
        let w = WeightState::fixed_output(&dmatrix![1.0, 2.0, -1.0]).unwrap();
        assert_eq!(forward(&w, &dvector![-2.0]).unwrap(), 2.0);
        let zero = WeightState::<f64>::zeros(Architecture::fixed_output(3, 4).unwrap());
        assert_eq!(forward(&zero, &dvector![0.3, -1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn bias_forward_hand_evaluation() {
        let w = WeightState::with_bias(&DMatrix::identity(2, 2), &dvector![1.0, -5.0]).unwrap();
        assert_eq!(forward(&w, &dvector![1.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let w = WeightState::fixed_output(&DMatrix::<f64>::identity(2, 3)).unwrap();
        assert!(matches!(forward(&w, &dvector![1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn state_layout_and_views() {
        let w1 = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        let b = dvector![7.0, 8.0, 9.0];
        let w2 = dvector![10.0, 11.0, 12.0];
        let s = WeightState::general(&w1, &b, &w2).unwrap();
        assert_eq!(
            s.as_vector().as_slice(),
            &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]
        );
        assert_eq!(s.input_weights(), w1);
        assert_eq!(s.bias().unwrap(), b);
        assert_eq!(s.output_weights().unwrap(), w2);
        assert_eq!(s.hidden_weights(1).into_owned(), dvector![2.0, 5.0]);
        assert_eq!(s.arch().state_dim(), 12);
        assert!(WeightState::<f64>::from_vec(s.arch(), DVector::zeros(5)).is_err());
        assert!(Architecture::fixed_output(0, 2).is_err());
    }

    #[test]
    fn observability_map_matches_forward_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = WeightState::general(
            &DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0)),
            &DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
            &DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        let u = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-2.0..2.0));
        let y = observability_map(&w, &u).unwrap();
        for i in 0..6 {
            let ui = u.row(i).transpose();
            assert_eq!(y[i], forward(&w, &ui).unwrap());
        }
        let rep = dmatrix![0.5, -0.2, 1.0; 0.5, -0.2, 1.0];
        let y2 = observability_map(&w, &rep).unwrap();
        assert_eq!(y2[0], y2[1]);
    }

    #[test]
    fn scalar_jacobian_and_boundary_refusal() {
        let w = WeightState::fixed_output(&dmatrix![1.0]).unwrap();
        let j = observability_jacobian(&w, &dmatrix![1.0]).unwrap();
        assert_eq!(j.dh, dmatrix![1.0]);

        let w = WeightState::fixed_output(&dmatrix![1.0, -1.0]).unwrap();
        let err = observability_jacobian(&w, &dmatrix![0.0]).unwrap_err();
        assert!(matches!(err, Error::BoundaryActivation { row: 0, node: 0, .. }));
    }

    #[test]
    fn factorization_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = WeightState::fixed_output(&DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        let u = DMatrix::from_fn(15, 3, |_, _| rng.gen_range(-1.0..1.0));
        let j = observability_jacobian(&w, &u).unwrap();
        assert_eq!(j.factorized_input_block(), j.dh);
        assert_eq!(j.t_chi, chi_matrix(&(&u * w.input_weights())));
    }

    #[test]
    fn zero_output_weight_reports_zero_columns() {
        let w = WeightState::general(
            &dmatrix![1.0, 0.5; -0.3, 2.0],
            &dvector![0.2, -0.1],
            &dvector![0.0, 1.5],
        )
        .unwrap();
        let u = dmatrix![1.0, 0.0; 0.3, 0.7; -0.4, 1.2; 2.0, 0.1];
        let cert = multilayer_rank_deficiency(&w, &u).unwrap();
        match &cert.dependencies[0] {
            NodeDependence::ZeroOutputWeight { node, column_norm } => {
                assert_eq!(*node, 0);
                assert_eq!(*column_norm, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(cert.dependencies[1], NodeDependence::Combination { .. }));
        assert!(cert.is_rank_deficient());
    }

    #[test]
    fn deficiency_requires_general_architecture() {
        let w = WeightState::fixed_output(&dmatrix![1.0, 2.0]).unwrap();
        assert!(multilayer_rank_deficiency(&w, &dmatrix![1.0]).is_err());
    }

    #[test]
    fn positive_homogeneity_without_bias() {
        let w = WeightState::fixed_output(&dmatrix![1.0, -2.0; 0.5, 0.25]).unwrap();
        let u = dvector![0.7, -1.3];
        let y = forward::<f64>(&w, &u).unwrap();
        let y3 = forward::<f64>(&w, &(&u * 3.0)).unwrap();
        assert!((y3 - 3.0 * y).abs() < 1e-14);
    }
}

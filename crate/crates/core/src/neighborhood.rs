//! The locally observable neighborhood of an anchor state: all states whose
//! hidden pre-activations under a fixed PE input keep the anchor's signs.

use nalgebra::DMatrix;

use crate::error::{dim_mismatch, Error, Result};
use crate::pe_design;
use crate::relu_net::{self, Variant, WeightState};
use crate::scalar::Scalar;

/// Closing margin on the open constraint `K > -1`.
pub const MEMBERSHIP_MARGIN: f64 = 1e-9;

/// Bisection steps used by [`ObservableNeighborhood::retract`].
pub const RETRACT_ITERATIONS: usize = 40;

#[derive(Debug, Clone)]
pub struct ObservableNeighborhood<T: Scalar> {
    anchor: WeightState<T>,
    u: DMatrix<T>,
    anchor_pre: DMatrix<T>,
    ref_signs: DMatrix<i8>,
    margin: T,
    dh: DMatrix<T>,
}

impl<T: Scalar> ObservableNeighborhood<T> {
    /// Neighborhood of `anchor` under the input sequence `u`, which must be
    /// PE at the anchor. Works for the fixed-output and bias architectures.
    pub fn new(anchor: WeightState<T>, u: DMatrix<T>) -> Result<Self> {
        if anchor.arch().variant == Variant::GeneralTwoLayer {
            return Err(Error::InvalidArchitecture(
                "the neighborhood needs fixed output weights".into(),
            ));
        }
        let check = pe_design::verify_pe(&u, &anchor)?;
        if !check.pe {
            return Err(Error::NotPersistentlyExciting {
                rank: check.rank,
                dim: anchor.arch().state_dim(),
            });
        }
        let anchor_pre = relu_net::pre_activations(&anchor, &u)?;
        let ref_signs = anchor_pre.map(|x| if x > T::zero() { 1i8 } else { -1 });
        let dh = relu_net::observability_jacobian(&anchor, &u)?.dh;
        Ok(Self {
            anchor,
            u,
            anchor_pre,
            ref_signs,
            margin: T::lit(MEMBERSHIP_MARGIN),
            dh,
        })
    }

    pub fn anchor(&self) -> &WeightState<T> {
        &self.anchor
    }

    pub fn inputs(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn ref_signs(&self) -> &DMatrix<i8> {
        &self.ref_signs
    }

    pub fn margin(&self) -> T {
        self.margin
    }

    /// Observability Jacobian shared by every member.
    pub fn jacobian(&self) -> &DMatrix<T> {
        &self.dh
    }

    fn check_arch(&self, w: &WeightState<T>) -> Result<()> {
        if w.arch() != self.anchor.arch() {
            return Err(dim_mismatch(format!("{:?}", self.anchor.arch()), format!("{:?}", w.arch())));
        }
        Ok(())
    }

    /// `K = [Pre(W′) − Pre(W₀)] ⊘ Pre(W₀)` with `Pre(W) = U W (+ 1 bᵀ)`.
    pub fn k_matrix(&self, w: &WeightState<T>) -> Result<DMatrix<T>> {
        self.check_arch(w)?;
        let pre = relu_net::pre_activations(w, &self.u)?;
        Ok((pre - &self.anchor_pre).component_div(&self.anchor_pre))
    }

    /// Every entry of the K matrix exceeds `-1 + margin`. States of another
    /// architecture are never members.
    pub fn membership(&self, w: &WeightState<T>) -> bool {
        let floor = self.margin - T::one();
        self.k_matrix(w)
            .map(|k| k.iter().all(|&x| x > floor))
            .unwrap_or(false)
    }

    /// Farthest member on the segment `[from, to]`, by bisection on the step.
    pub fn retract(&self, from: &WeightState<T>, to: &WeightState<T>) -> Result<WeightState<T>> {
        self.check_arch(to)?;
        if !self.membership(from) {
            return Err(Error::InfeasibleStart);
        }
        if self.membership(to) {
            return Ok(to.clone());
        }
        let dir = to.as_vector() - from.as_vector();
        let at = |alpha: T| from.with_vector(from.as_vector() + &dir * alpha);
        let (mut lo, mut hi) = (T::zero(), T::one());
        for _ in 0..RETRACT_ITERATIONS {
            let mid = (lo + hi) * T::lit(0.5);
            if self.membership(&at(mid)?) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pe_design::design_pe_input;
    use nalgebra::{dmatrix, dvector};

    fn setup() -> ObservableNeighborhood<f64> {
        let w = dmatrix![1.0, 0.5, -0.3; 0.2, -1.0, 0.7];
        let plan = design_pe_input(&w).unwrap();
        ObservableNeighborhood::new(WeightState::fixed_output(&w).unwrap(), plan.u).unwrap()
    }

    fn scaled(n: &ObservableNeighborhood<f64>, s: f64) -> WeightState<f64> {
        n.anchor().with_vector(n.anchor().as_vector() * s).unwrap()
    }

    #[test]
    fn k_matrix_scalings() {
        let n = setup();
        assert!(n.k_matrix(n.anchor()).unwrap().amax() < 1e-15);
        assert!(n.k_matrix(&scaled(&n, 2.0)).unwrap().iter().all(|&k| (k - 1.0).abs() < 1e-12));
        assert!(n.k_matrix(&scaled(&n, -1.0)).unwrap().iter().all(|&k| (k + 2.0).abs() < 1e-12));
    }

    #[test]
    fn membership_examples() {
        let n = setup();
        assert!(n.membership(n.anchor()));
        assert!(n.membership(&scaled(&n, 0.5)));
        assert!(!n.membership(&scaled(&n, -1.0)));
        assert!(!n.membership(&scaled(&n, 0.0)));
    }

    #[test]
    fn retract_towards_negation() {
        let n = setup();
        let to = scaled(&n, -1.0);
        let r = n.retract(n.anchor(), &to).unwrap();
        assert!(n.membership(&r));
        // r = W₀ + α(−2W₀) with threshold α < 1/2
        let alpha = (1.0 - r.as_vector()[0] / n.anchor().as_vector()[0]) / 2.0;
        assert!(alpha > 0.0 && alpha < 0.5);
        assert!(0.5 - alpha < 1e-9);
    }

    #[test]
    fn retract_keeps_members() {
        let n = setup();
        let to = scaled(&n, 0.7);
        assert_eq!(n.retract(n.anchor(), &to).unwrap(), to);
        assert_eq!(n.retract(&scaled(&n, -1.0), &to).unwrap_err(), Error::InfeasibleStart);
    }

    #[test]
    fn non_pe_input_rejected() {
        let w = dmatrix![1.0, 0.5, -0.3; 0.2, -1.0, 0.7];
        let u = dmatrix![1.0, 0.1; 0.3, 0.2];
        assert!(matches!(
            ObservableNeighborhood::new(WeightState::fixed_output(&w).unwrap(), u),
            Err(Error::NotPersistentlyExciting { .. })
        ));
    }

    #[test]
    fn bias_architecture_supported() {
        let w1 = DMatrix::<f64>::identity(2, 2);
        let b = dvector![0.1, -0.2];
        let plan = pe_design::design_pe_input_bias(&w1, &b).unwrap();
        let anchor = WeightState::with_bias(&w1, &b).unwrap();
        let n = ObservableNeighborhood::new(anchor.clone(), plan.u).unwrap();
        assert!(n.membership(&anchor));
        assert!(!n.membership(&anchor.with_vector(-anchor.as_vector()).unwrap()));
    }

    #[test]
    fn members_share_the_jacobian() {
        let n = setup();
        let other = n.anchor().with_vector(n.anchor().as_vector() * 0.8 + dvector![0.01, 0.0, 0.0, 0.02, -0.01, 0.0]).unwrap();
        assert!(n.membership(&other));
        let dh = relu_net::observability_jacobian(&other, n.inputs()).unwrap().dh;
        assert_eq!(&dh, n.jacobian());
    }
}

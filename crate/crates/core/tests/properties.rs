use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use relu_mhe::neighborhood::ObservableNeighborhood;
use relu_mhe::relu_net::{self, WeightState};
use relu_mhe::{numlin, orthant_geo, pe_design};

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-2.0f64..2.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

fn sign_set(m: &orthant_geo::SignMatrix<f64>) -> BTreeSet<Vec<i8>> {
    m.rows().iter().map(|s| s.as_slice().to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pinv_satisfies_penrose_conditions(a in matrix(1..=6, 1..=6)) {
        let p = numlin::pinv(&a).unwrap();
        let tol = 1e-8 * (1.0 + a.amax()).powi(2);
        prop_assert!((&a * &p * &a - &a).amax() < tol);
        prop_assert!((&p * &a * &p - &p).amax() < tol * (1.0 + p.amax()).powi(2));
        let ap = &a * &p;
        prop_assert!((&ap - ap.transpose()).amax() < tol);
    }

    #[test]
    fn sign_matrix_agrees_with_exhaustive(w in matrix(1..=3, 1..=6), bias in prop::bool::ANY) {
        prop_assume!(numlin::rank(&w) == w.nrows());
        prop_assume!(w.column_iter().all(|c| c.amax() > 1e-3));
        let b = bias.then(|| DVector::from_fn(w.ncols(), |j, _| 0.3 - 0.2 * j as f64));
        let fast = orthant_geo::sign_matrix(&w, b.as_ref()).unwrap();
        let slow = orthant_geo::sign_matrix_exhaustive(&w, b.as_ref()).unwrap();
        prop_assert_eq!(sign_set(&fast), sign_set(&slow));
        for (s, x) in fast.rows().iter().zip(fast.witnesses()) {
            let got = orthant_geo::SignVector::of(x);
            prop_assert_eq!(got.as_ref(), Some(s));
        }
    }

    #[test]
    fn retraction_stays_inside(scale in 0.5f64..20.0, dir in prop::collection::vec(-1.0f64..1.0, 4)) {
        let w = DMatrix::<f64>::identity(2, 2);
        let plan = pe_design::design_pe_input(&w).unwrap();
        let anchor = WeightState::fixed_output(&w).unwrap();
        let neigh = ObservableNeighborhood::new(anchor.clone(), plan.u).unwrap();
        let far = anchor.with_vector(anchor.as_vector() + DVector::from_vec(dir) * scale).unwrap();
        let r = neigh.retract(&anchor, &far).unwrap();
        prop_assert!(neigh.membership(&r));
    }
}

#[test]
fn designed_inputs_are_exciting_in_f32() {
    let w = DMatrix::<f32>::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, -1.0]);
    assert!(orthant_geo::observability_certificate(&w, None).unwrap().observable);
    let plan = pe_design::design_pe_input(&w).unwrap();
    let state = WeightState::fixed_output(&w).unwrap();
    let check = pe_design::verify_pe(&plan.u, &state).unwrap();
    assert!(check.pe);
    assert_eq!(check.rank, 6);
    assert_eq!(relu_net::jacobian(&state, &plan.u).unwrap().nrows(), 6);
}

#[test]
fn single_input_three_hidden_is_not_observable() {
    let w = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
    let cert = orthant_geo::observability_certificate(&w, None).unwrap();
    assert!(!cert.observable);
    assert_eq!(cert.rank, 2);
    assert!(pe_design::design_pe_input(&w).is_err());
}

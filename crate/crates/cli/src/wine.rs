//! Regression benchmark on a tabular dataset with a general two-layer
//! network.

use std::path::PathBuf;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relu_mhe::mhe_train::{BatchSchedule, Evaluation};
use relu_mhe::relu_net::{self, WeightState};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WineSpec {
    pub path: PathBuf,
    pub target_column: String,
    pub hidden: usize,
    /// Mini-batch size, also the regularized MHE horizon.
    pub batch_size: usize,
    /// Fit a centred and scaled target; RMSE is always reported in the
    /// original units.
    pub standardize_target: bool,
}

impl Default for WineSpec {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/winequality-red.csv"),
            target_column: "quality".into(),
            hidden: 32,
            batch_size: 32,
            standardize_target: true,
        }
    }
}

/// Training data of one repeat, ready for the trainers.
#[derive(Debug, Clone)]
pub struct WineProblem {
    pub dataset: Dataset,
    pub schedule: BatchSchedule<f64>,
    /// Test inputs and targets in the fitted (possibly scaled) units.
    pub eval: Evaluation<f64>,
    pub init: WeightState<f64>,
    /// Target mean and scale used for fitting.
    pub target_shift: f64,
    pub target_scale: f64,
}

impl WineProblem {
    /// Test RMSE of `w` in the original target units.
    pub fn test_rmse(&self, w: &WeightState<f64>) -> Result<f64> {
        let pred = relu_net::observability_map(w, &self.dataset.test_inputs())?;
        let pred = pred.map(|p| p * self.target_scale + self.target_shift);
        let err = pred - self.dataset.test_targets();
        Ok((err.norm_squared() / err.len() as f64).sqrt())
    }

    /// Converts an MSE in fitted units to an RMSE in original units.
    pub fn rmse_from_mse(&self, mse: f64) -> f64 {
        mse.sqrt() * self.target_scale
    }
}

/// Uniform `±1/√fan_in` initialization of a two-layer network.
pub fn default_init<R: Rng>(rng: &mut R, inputs: usize, hidden: usize) -> Result<WeightState<f64>> {
    let a1 = 1.0 / (inputs as f64).sqrt();
    let a2 = 1.0 / (hidden as f64).sqrt();
    let w1 = DMatrix::from_fn(inputs, hidden, |_, _| rng.gen_range(-a1..a1));
    let b = DVector::from_fn(hidden, |_, _| rng.gen_range(-a1..a1));
    let w2 = DVector::from_fn(hidden, |_, _| rng.gen_range(-a2..a2));
    Ok(WeightState::general(&w1, &b, &w2)?)
}

/// Loads and splits the data with `seed`, then draws the initial weights
/// and the fixed batch order from the same seed.
pub fn prepare(spec: &WineSpec, seed: u64) -> Result<WineProblem> {
    let dataset = dataset::load_csv(&spec.path, &spec.target_column, seed)
        .with_context(|| format!("loading {}", spec.path.display()))?;
    prepare_from(dataset, spec, seed)
}

pub fn prepare_from(dataset: Dataset, spec: &WineSpec, seed: u64) -> Result<WineProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_b47c);
    let train_y = dataset.train_targets();
    let (shift, scale) = if spec.standardize_target {
        let mean = train_y.mean();
        let var = train_y.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / train_y.len() as f64;
        (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let fit = |y: DVector<f64>| y.map(|v| (v - shift) / scale);

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let inputs = dataset.train_inputs().select_rows(&order);
    let targets = fit(train_y.select_rows(&order));
    let schedule = BatchSchedule::with_batch_size(&inputs, &targets, spec.batch_size)?;
    let init = default_init(&mut rng, dataset.inputs.ncols(), spec.hidden)?;
    let eval = Evaluation {
        test: Some((dataset.test_inputs(), fit(dataset.test_targets()))),
        truth: None,
    };
    Ok(WineProblem {
        dataset,
        schedule,
        eval,
        init,
        target_shift: shift,
        target_scale: scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let text: String = std::iter::once("a;b;q\n".to_owned())
            .chain((0..50).map(|i| format!("{};{};{}\n", i, (i * 7) % 11, 3 + i % 4)))
            .collect();
        dataset::from_csv_text(&text, "q", 1).unwrap()
    }

    #[test]
    fn init_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = default_init(&mut rng, 4, 16).unwrap();
        assert!(w.input_weights().amax() <= 0.5);
        assert!(w.bias().unwrap().amax() <= 0.5);
        assert!(w.output_weights().unwrap().amax() <= 0.25);
    }

    #[test]
    fn rmse_in_original_units() {
        let spec = WineSpec {
            hidden: 4,
            batch_size: 8,
            ..WineSpec::default()
        };
        let p = prepare_from(toy(), &spec, 3).unwrap();
        assert_eq!(p.schedule.samples(), 45);
        let zero = WeightState::zeros(p.init.arch());
        // zero network predicts the training mean
        let y = p.dataset.test_targets();
        let expect = (y.map(|v| (v - p.target_shift).powi(2)).sum() / y.len() as f64).sqrt();
        assert!((p.test_rmse(&zero).unwrap() - expect).abs() < 1e-12);
        let (u, yt) = p.eval.test.as_ref().unwrap();
        let mse = (relu_net::observability_map(&zero, u).unwrap() - yt).norm_squared() / yt.len() as f64;
        assert!((p.rmse_from_mse(mse) - expect).abs() < 1e-12);
    }
}

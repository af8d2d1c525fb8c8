//! Teacher–student data for the fixed-output network.

use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use relu_mhe::neighborhood::ObservableNeighborhood;
use relu_mhe::relu_net::{self, WeightState};
use relu_mhe::pe_design::{DesignOptions, OrthantOrder};
use relu_mhe::orthant_geo::{self, ConeLayout};
use relu_mhe::pe_design;
use serde::{Deserialize, Serialize};

/// Teacher draws attempted before giving up.
pub const MAX_TEACHER_DRAWS: usize = 10_000;

/// Serializable mirror of [`OrthantOrder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrthantOrderName {
    Lexicographic,
    Shuffled,
    WidestFirst,
}

impl From<OrthantOrderName> for OrthantOrder {
    fn from(o: OrthantOrderName) -> Self {
        match o {
            OrthantOrderName::Lexicographic => OrthantOrder::Lexicographic,
            OrthantOrderName::Shuffled => OrthantOrder::Shuffled,
            OrthantOrderName::WidestFirst => OrthantOrder::WidestFirst,
        }
    }
}

/// Serializable mirror of [`ConeLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeLayoutName {
    Star,
    Simplex,
}

impl From<ConeLayoutName> for ConeLayout {
    fn from(l: ConeLayoutName) -> Self {
        match l {
            ConeLayoutName::Star => ConeLayout::Star,
            ConeLayoutName::Simplex => ConeLayout::Simplex,
        }
    }
}

/// How the training samples are grouped into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchOrder {
    /// Batches are consecutive runs of the designed input sequence.
    Contiguous,
    /// Samples are assigned to batches by a seeded permutation.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub inputs: usize,
    pub hidden: usize,
    pub samples: usize,
    pub batches: usize,
    pub eps_bar: f64,
    pub test_samples: usize,
    /// Largest `|U δ| / |U W|` entry of the initial perturbation.
    pub init_scale: f64,
    pub orthant_order: OrthantOrderName,
    /// Relative step of the cone perturbations.
    pub cone_step: f64,
    pub cone_layout: ConeLayoutName,
    pub batch_order: BatchOrder,
    /// Euclidean norm every designed input is rescaled to. `None` uses
    /// `√inputs`, the RMS norm of the standard normal test inputs.
    pub input_norm: Option<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            inputs: 2,
            hidden: 10,
            samples: 90,
            batches: 5,
            eps_bar: 1e-4,
            test_samples: 90,
            init_scale: 0.9,
            orthant_order: OrthantOrderName::WidestFirst,
            cone_step: 0.7,
            cone_layout: ConeLayoutName::Simplex,
            batch_order: BatchOrder::Contiguous,
            input_norm: None,
        }
    }
}

/// Everything a synthetic run needs.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub teacher: WeightState<f64>,
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// Noise actually added to each target.
    pub noise: DVector<f64>,
    pub test_inputs: DMatrix<f64>,
    pub test_targets: DVector<f64>,
    pub init: WeightState<f64>,
    pub neigh: Arc<ObservableNeighborhood<f64>>,
    /// Batch index sets partitioning the training samples.
    pub batch_sets: Vec<Vec<usize>>,
    pub teacher_draws: usize,
}

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Rejection-samples a teacher with standard normal weights that passes the
/// observability certificate.
pub fn sample_teacher<R: Rng>(rng: &mut R, inputs: usize, hidden: usize) -> Result<(DMatrix<f64>, usize)> {
    for draw in 1..=MAX_TEACHER_DRAWS {
        let w = normal_matrix(rng, inputs, hidden);
        match orthant_geo::observability_certificate(&w, None) {
            Ok(cert) if cert.observable => return Ok((w, draw)),
            _ => continue,
        }
    }
    bail!("no observable {inputs}x{hidden} teacher found in {MAX_TEACHER_DRAWS} draws")
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticProblem> {
    ensure!(spec.samples >= spec.inputs * spec.hidden, "need at least mn = {} samples", spec.inputs * spec.hidden);
    ensure!(
        spec.batches > 0 && spec.samples % spec.batches == 0,
        "{} samples cannot form {} equal batches",
        spec.samples,
        spec.batches
    );
    ensure!(spec.eps_bar >= 0.0, "noise bound must be nonnegative");
    ensure!(spec.input_norm.map_or(true, |r| r > 0.0), "input_norm must be positive");
    ensure!(
        spec.init_scale > 0.0 && spec.init_scale < 1.0,
        "init_scale must lie in (0, 1)"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (w, teacher_draws) = sample_teacher(&mut rng, spec.inputs, spec.hidden)?;
    let teacher = WeightState::fixed_output(&w)?;
    let options = DesignOptions {
        order: spec.orthant_order.into(),
        step: spec.cone_step,
        layout: spec.cone_layout.into(),
    };
    let mut inputs = pe_design::design_pe_sequence(&w, None, spec.samples, &options, &mut rng)
        .context("designing the excitation sequence")?;
    // positive row scaling keeps every activation sign, hence PE
    let target = spec.input_norm.unwrap_or((spec.inputs as f64).sqrt());
    for mut row in inputs.row_iter_mut() {
        let norm = row.norm();
        row *= target / norm;
    }
    let clean = relu_net::observability_map(&teacher, &inputs)?;
    let noise = DVector::from_fn(spec.samples, |_, _| {
        if spec.eps_bar > 0.0 {
            rng.gen_range(-spec.eps_bar..=spec.eps_bar)
        } else {
            0.0
        }
    });
    let targets = &clean + &noise;

    // δ with |U δ| ≤ init_scale · |U W| entrywise keeps every sign of U W
    let pre = inputs.clone() * &w;
    let dir = normal_matrix(&mut rng, spec.inputs, spec.hidden);
    let moved = inputs.clone() * &dir;
    let ratio = pre
        .iter()
        .zip(moved.iter())
        .fold(f64::INFINITY, |m, (p, d)| if *d == 0.0 { m } else { m.min(p.abs() / d.abs()) });
    let init_w = &w + dir * (spec.init_scale * ratio);
    let init = WeightState::fixed_output(&init_w)?;
    let neigh = Arc::new(ObservableNeighborhood::new(init.clone(), inputs.clone()).context("anchoring the neighborhood")?);
    ensure!(neigh.membership(&teacher), "teacher is outside the observable neighborhood of the initial state");

    let test_inputs = normal_matrix(&mut rng, spec.test_samples, spec.inputs);
    let test_targets = relu_net::observability_map(&teacher, &test_inputs)?;

    let size = spec.samples / spec.batches;
    let mut order: Vec<usize> = (0..spec.samples).collect();
    if spec.batch_order == BatchOrder::Shuffled {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    }
    let batch_sets = order.chunks(size).map(<[usize]>::to_vec).collect();

    Ok(SyntheticProblem {
        teacher,
        inputs,
        targets,
        noise,
        test_inputs,
        test_targets,
        init,
        neigh,
        batch_sets,
        teacher_draws,
    })
}

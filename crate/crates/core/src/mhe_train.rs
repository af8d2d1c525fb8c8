//! Moving-horizon training over periodic mini-batches, its convergence
//! constants, and gradient-based and regularized baselines.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_mismatch, Error, Result};
use crate::neighborhood::ObservableNeighborhood;
use crate::numlin;
use crate::relu_net::{self, WeightState};
use crate::scalar::Scalar;

/// Powers of `Q` examined for the empirical Gelfand constant.
pub const GELFAND_POWERS: usize = 64;

/// Floor on the spectral radius used inside the bound, so that a nilpotent
/// but nonzero `Q` still gets a finite constant.
pub const RHO_FLOOR: f64 = 1e-8;

/// Default weight of the output residual in the regularized cost.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Scalar> {
    /// `N₁ × m`.
    pub inputs: DMatrix<T>,
    /// Measured (possibly noisy) outputs.
    pub targets: DVector<T>,
    /// Rows of the full dataset in this batch.
    pub indices: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// A partition of the dataset into batches that are visited cyclically.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSchedule<T: Scalar> {
    batches: Vec<Batch<T>>,
    samples: usize,
}

impl<T: Scalar> BatchSchedule<T> {
    /// Batches given by explicit index sets, which must partition `0..N`.
    pub fn from_index_sets(inputs: &DMatrix<T>, targets: &DVector<T>, sets: Vec<Vec<usize>>) -> Result<Self> {
        let n = inputs.nrows();
        if targets.len() != n {
            return Err(dim_mismatch(format!("{n} targets"), targets.len()));
        }
        if sets.is_empty() || sets.iter().any(Vec::is_empty) {
            return Err(Error::InvalidSchedule("batches must be nonempty".into()));
        }
        let mut seen = vec![false; n];
        for &i in sets.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::InvalidSchedule(format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidSchedule("batches do not cover the dataset".into()));
        }
        let batches = sets
            .into_iter()
            .map(|idx| Batch {
                inputs: inputs.select_rows(idx.iter()),
                targets: targets.select_rows(idx.iter()),
                indices: idx,
            })
            .collect();
        Ok(Self { batches, samples: n })
    }

    /// `k` consecutive batches of equal size `N / k`.
    pub fn periodic(inputs: &DMatrix<T>, targets: &DVector<T>, k: usize) -> Result<Self> {
        let n = inputs.nrows();
        if k == 0 || n % k != 0 {
            return Err(Error::InvalidSchedule(format!("{n} samples cannot be split into {k} equal batches")));
        }
        let size = n / k;
        Self::from_index_sets(inputs, targets, (0..k).map(|b| (b * size..(b + 1) * size).collect()).collect())
    }

    /// Consecutive batches of `size` samples; the last one may be smaller.
    pub fn with_batch_size(inputs: &DMatrix<T>, targets: &DVector<T>, size: usize) -> Result<Self> {
        let n = inputs.nrows();
        if size == 0 {
            return Err(Error::InvalidSchedule("batch size must be positive".into()));
        }
        let sets = (0..n).step_by(size).map(|s| (s..(s + size).min(n)).collect()).collect();
        Self::from_index_sets(inputs, targets, sets)
    }

    pub fn k(&self) -> usize {
        self.batches.len()
    }

    pub fn batches(&self) -> &[Batch<T>] {
        &self.batches
    }

    /// Batch used at step `t` (zero-based).
    pub fn batch(&self, t: usize) -> &Batch<T> {
        &self.batches[t % self.batches.len()]
    }

    pub fn samples(&self) -> usize {
        self.samples
    }
}

/// Held-out data and ground truth used only for reporting.
#[derive(Debug, Clone, Default)]
pub struct Evaluation<T: Scalar> {
    pub test: Option<(DMatrix<T>, DVector<T>)>,
    pub truth: Option<WeightState<T>>,
}

/// How often a training run writes a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordPolicy {
    EveryStep,
    EveryEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T: Scalar> {
    /// Steps taken so far; 0 is the initial state.
    pub step: usize,
    /// Completed epochs, fractional steps rounded down.
    pub epoch: usize,
    /// Mean squared error over all batches of the schedule.
    pub train_loss: T,
    pub test_loss: Option<T>,
    /// `‖w − ŵ_t‖`.
    pub estimation_error: Option<T>,
    /// `‖P_o,t (ŵ_t − w)‖` for the batch used in this step (MHE only).
    pub observable_error: Option<T>,
    pub retracted: bool,
    /// Seconds since the run started, taken when the record was written.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun<T: Scalar> {
    pub records: Vec<StepRecord<T>>,
    pub final_state: WeightState<T>,
    pub retractions: usize,
}

fn mse<T: Scalar>(w: &WeightState<T>, inputs: &DMatrix<T>, targets: &DVector<T>) -> Result<T> {
    let r = relu_net::observability_map(w, inputs)? - targets;
    Ok(r.norm_squared() / T::from_count(targets.len().max(1)))
}

fn schedule_mse<T: Scalar>(w: &WeightState<T>, schedule: &BatchSchedule<T>) -> Result<T> {
    let mut total = T::zero();
    for b in schedule.batches() {
        let r = relu_net::observability_map(w, &b.inputs)? - &b.targets;
        total += r.norm_squared();
    }
    Ok(total / T::from_count(schedule.samples().max(1)))
}

struct Recorder<'a, T: Scalar> {
    schedule: &'a BatchSchedule<T>,
    eval: &'a Evaluation<T>,
    policy: RecordPolicy,
    records: Vec<StepRecord<T>>,
    start: Instant,
}

impl<'a, T: Scalar> Recorder<'a, T> {
    fn new(schedule: &'a BatchSchedule<T>, eval: &'a Evaluation<T>, policy: RecordPolicy) -> Self {
        Self {
            schedule,
            eval,
            policy,
            records: Vec::new(),
            start: Instant::now(),
        }
    }

    fn record(&mut self, step: usize, w: &WeightState<T>, observable_error: Option<T>, retracted: bool) -> Result<()> {
        let k = self.schedule.k();
        if self.policy == RecordPolicy::EveryEpoch && step % k != 0 {
            return Ok(());
        }
        let test_loss = match &self.eval.test {
            Some((u, y)) => Some(mse(w, u, y)?),
            None => None,
        };
        self.records.push(StepRecord {
            step,
            epoch: step / k,
            train_loss: schedule_mse(w, self.schedule)?,
            test_loss,
            estimation_error: self.eval.truth.as_ref().map(|t| t.distance(w)),
            observable_error,
            retracted,
            wall_time: self.start.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// MHE.

#[derive(Debug, Clone)]
pub struct TrainerState<T: Scalar> {
    pub w_hat: WeightState<T>,
    pub t: usize,
    pub neigh: Arc<ObservableNeighborhood<T>>,
}

impl<T: Scalar> TrainerState<T> {
    /// Starts at the neighborhood anchor.
    pub fn new(neigh: Arc<ObservableNeighborhood<T>>) -> Self {
        Self {
            w_hat: neigh.anchor().clone(),
            t: 0,
            neigh,
        }
    }

    /// Starts at `w_hat`, which must be a member.
    pub fn starting_at(neigh: Arc<ObservableNeighborhood<T>>, w_hat: WeightState<T>) -> Result<Self> {
        if !neigh.membership(&w_hat) {
            return Err(Error::InfeasibleStart);
        }
        Ok(Self { w_hat, t: 0, neigh })
    }
}

/// `H_t`: the observability Jacobian of the batch inputs at the anchor,
/// shared by all members of the neighborhood.
pub fn assemble_h<T: Scalar>(batch: &Batch<T>, neigh: &ObservableNeighborhood<T>) -> Result<DMatrix<T>> {
    Ok(relu_net::observability_jacobian(neigh.anchor(), &batch.inputs)?.dh)
}

/// `(P_o, P_ō)` for the row space and null space of `h`.
pub fn projectors_for_batch<T: Scalar>(h: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    numlin::subspace_projectors(h)
}

/// Per-batch quantities reused at every visit.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOperator<T: Scalar> {
    pub h: DMatrix<T>,
    pub h_pinv: DMatrix<T>,
    pub p_o: DMatrix<T>,
    pub p_obar: DMatrix<T>,
    /// Smallest nonzero singular value of `h`.
    pub sigma: T,
    pub rank: usize,
}

impl<T: Scalar> BatchOperator<T> {
    pub fn new(h: DMatrix<T>) -> Result<Self> {
        let decision = numlin::numeric_rank(&h, numlin::default_rank_tol(h.nrows(), h.ncols()))?;
        let h_pinv = numlin::pinv(&h)?;
        let (p_o, p_obar) = projectors_for_batch(&h)?;
        Ok(Self {
            sigma: decision.sigma_min().unwrap_or_else(T::zero),
            rank: decision.rank,
            h,
            h_pinv,
            p_o,
            p_obar,
        })
    }
}

/// Result of one MHE step.
#[derive(Debug, Clone)]
pub struct StepOutcome<T: Scalar> {
    pub state: TrainerState<T>,
    /// The unconstrained minimizer left the neighborhood and was pulled back.
    pub retracted: bool,
}

fn step_with<T: Scalar>(state: &TrainerState<T>, batch: &Batch<T>, op: &BatchOperator<T>) -> Result<StepOutcome<T>> {
    let neigh = &state.neigh;
    if !neigh.membership(&state.w_hat) {
        return Err(Error::InfeasibleStart);
    }
    let predicted = relu_net::observability_map(&state.w_hat, &batch.inputs)?;
    let delta = &op.h_pinv * (&batch.targets - predicted);
    let candidate = state.w_hat.with_vector(state.w_hat.as_vector() + delta)?;
    let next = neigh.retract(&state.w_hat, &candidate)?;
    let retracted = next != candidate;
    Ok(StepOutcome {
        state: TrainerState {
            w_hat: next,
            t: state.t + 1,
            neigh: Arc::clone(neigh),
        },
        retracted,
    })
}

/// One MHE step on `batch`: the minimum-norm least-squares correction
/// `Δ = H_t⁺ (ỹ − 𝓗(ŵ))`, which leaves the unobservable component
/// untouched, pulled back into the neighborhood if necessary.
pub fn mhe_step<T: Scalar>(state: &TrainerState<T>, batch: &Batch<T>) -> Result<TrainerState<T>> {
    let op = BatchOperator::new(assemble_h(batch, &state.neigh)?)?;
    Ok(step_with(state, batch, &op)?.state)
}

/// MHE trainer with the per-batch operators computed once.
#[derive(Debug, Clone)]
pub struct MheTrainer<T: Scalar> {
    neigh: Arc<ObservableNeighborhood<T>>,
    schedule: BatchSchedule<T>,
    ops: Vec<BatchOperator<T>>,
}

impl<T: Scalar> MheTrainer<T> {
    pub fn new(neigh: Arc<ObservableNeighborhood<T>>, schedule: BatchSchedule<T>) -> Result<Self> {
        let ops = schedule
            .batches()
            .iter()
            .map(|b| BatchOperator::new(assemble_h(b, &neigh)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { neigh, schedule, ops })
    }

    pub fn neighborhood(&self) -> &Arc<ObservableNeighborhood<T>> {
        &self.neigh
    }

    pub fn schedule(&self) -> &BatchSchedule<T> {
        &self.schedule
    }

    pub fn operators(&self) -> &[BatchOperator<T>] {
        &self.ops
    }

    pub fn step(&self, state: &TrainerState<T>) -> Result<StepOutcome<T>> {
        let idx = state.t % self.ops.len();
        step_with(state, &self.schedule.batches()[idx], &self.ops[idx])
    }

    /// Runs `epochs · k` steps from `init`.
    pub fn run(&self, init: TrainerState<T>, epochs: usize, eval: &Evaluation<T>, policy: RecordPolicy) -> Result<TrainRun<T>> {
        let mut rec = Recorder::new(&self.schedule, eval, policy);
        rec.record(0, &init.w_hat, None, false)?;
        let mut state = init;
        let mut retractions = 0;
        for _ in 0..epochs * self.ops.len() {
            let idx = state.t % self.ops.len();
            let out = self.step(&state)?;
            retractions += usize::from(out.retracted);
            state = out.state;
            let obs = eval
                .truth
                .as_ref()
                .map(|w| (&self.ops[idx].p_o * (state.w_hat.as_vector() - w.as_vector())).norm());
            rec.record(state.t, &state.w_hat, obs, out.retracted)?;
        }
        Ok(TrainRun {
            records: rec.records,
            final_state: state.w_hat,
            retractions,
        })
    }

    pub fn convergence_report(&self, eps_bar: T) -> ConvergenceReport<T> {
        report_from_ops(&self.schedule, &self.ops, self.neigh.anchor().arch().state_dim(), eps_bar)
    }
}

/// Runs MHE training and computes the convergence constants of the schedule.
pub fn train<T: Scalar>(
    schedule: &BatchSchedule<T>,
    neigh: Arc<ObservableNeighborhood<T>>,
    init: &WeightState<T>,
    epochs: usize,
    eval: &Evaluation<T>,
    eps_bar: T,
) -> Result<(TrainRun<T>, ConvergenceReport<T>)> {
    let trainer = MheTrainer::new(Arc::clone(&neigh), schedule.clone())?;
    let start = TrainerState::starting_at(neigh, init.clone())?;
    let run = trainer.run(start, epochs, eval, RecordPolicy::EveryStep)?;
    Ok((run, trainer.convergence_report(eps_bar)))
}

// ---------------------------------------------------------------------------
// Convergence constants.

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport<T: Scalar> {
    /// Smallest nonzero singular value of each `H_t`.
    pub sigma: Vec<T>,
    /// `max_t 2√N₁ / σ_t`.
    pub mu: T,
    /// `P_ō,k ⋯ P_ō,1`.
    pub q: DMatrix<T>,
    /// Spectral radius of `Q`.
    pub rho: T,
    /// Empirical constant with `‖Q^ℓ‖ ≤ ζ ρ^ℓ` for `ℓ ≤ GELFAND_POWERS`.
    pub zeta: T,
    /// `k μ ζ / (1 − ρ) · ε̄`; `None` when the schedule is not jointly PE.
    pub bound: Option<T>,
    /// `2 ε̄ √N₁ / σ_t` per batch.
    pub per_step_obs_bound: Vec<T>,
    /// The stacked `H` over one period is rank deficient.
    pub non_pe_dataset: bool,
    pub k: usize,
    pub eps_bar: T,
}

fn spectral_radius<T: Scalar>(q: &DMatrix<T>) -> T {
    q.clone()
        .complex_eigenvalues()
        .iter()
        .fold(T::zero(), |m, z| m.max((z.re * z.re + z.im * z.im).sqrt()))
}

fn report_from_ops<T: Scalar>(schedule: &BatchSchedule<T>, ops: &[BatchOperator<T>], dim: usize, eps_bar: T) -> ConvergenceReport<T> {
    let two = T::lit(2.0);
    let sigma: Vec<T> = ops.iter().map(|o| o.sigma).collect();
    let per_step: Vec<T> = ops
        .iter()
        .zip(schedule.batches())
        .map(|(o, b)| two * eps_bar * T::from_count(b.len()).sqrt() / o.sigma)
        .collect();
    let mu = ops
        .iter()
        .zip(schedule.batches())
        .fold(T::zero(), |m, (o, b)| m.max(two * T::from_count(b.len()).sqrt() / o.sigma));

    let mut q = DMatrix::identity(dim, dim);
    for o in ops {
        q = &o.p_obar * q;
    }
    let stacked_rank = {
        let rows: usize = ops.iter().map(|o| o.h.nrows()).sum();
        let mut stacked = DMatrix::zeros(rows, dim);
        let mut at = 0;
        for o in ops {
            stacked.rows_mut(at, o.h.nrows()).copy_from(&o.h);
            at += o.h.nrows();
        }
        numlin::rank(&stacked)
    };
    let non_pe = stacked_rank < dim;

    let q_norm = numlin::spectral_norm(&q);
    let (rho, zeta) = if q_norm <= T::lit(1e-12) {
        (T::zero(), T::one())
    } else {
        let rho = spectral_radius(&q);
        let base = rho.max(T::lit(RHO_FLOOR));
        let mut zeta = T::one();
        let mut power = q.clone();
        let mut scale = base;
        for _ in 0..GELFAND_POWERS {
            let n = numlin::spectral_norm(&power);
            if n <= T::lit(1e-14) {
                break;
            }
            zeta = zeta.max(n / scale);
            power = &power * &q;
            scale *= base;
        }
        (rho, zeta)
    };
    let k = ops.len();
    let bound = (!non_pe && rho < T::one())
        .then(|| T::from_count(k) * mu * zeta / (T::one() - rho) * eps_bar);
    ConvergenceReport {
        sigma,
        mu,
        q,
        rho,
        zeta,
        bound,
        per_step_obs_bound: per_step,
        non_pe_dataset: non_pe,
        k,
        eps_bar,
    }
}

/// Convergence constants of a periodic schedule inside a neighborhood.
pub fn convergence_report<T: Scalar>(
    schedule: &BatchSchedule<T>,
    neigh: &ObservableNeighborhood<T>,
    eps_bar: T,
) -> Result<ConvergenceReport<T>> {
    let ops = schedule
        .batches()
        .iter()
        .map(|b| BatchOperator::new(assemble_h(b, neigh)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_ops(schedule, &ops, neigh.anchor().arch().state_dim(), eps_bar))
}

// ---------------------------------------------------------------------------
// Baselines.

/// Gradient of the batch mean squared error `(1/N₁) Σ r²`, using the
/// subgradient `χ(0) = 0` at the kinks.
pub fn batch_gradient<T: Scalar>(w: &WeightState<T>, batch: &Batch<T>) -> Result<DVector<T>> {
    let (out, jac) = relu_net::outputs_and_jacobian(w, &batch.inputs)?;
    let r = out - &batch.targets;
    Ok(jac.tr_mul(&r) * (T::lit(2.0) / T::from_count(batch.len().max(1))))
}

/// Plain mini-batch gradient descent on the batch mean squared error.
pub fn gd_baseline<T: Scalar>(
    schedule: &BatchSchedule<T>,
    init: &WeightState<T>,
    learning_rate: T,
    epochs: usize,
    eval: &Evaluation<T>,
    policy: RecordPolicy,
) -> Result<TrainRun<T>> {
    let mut rec = Recorder::new(schedule, eval, policy);
    rec.record(0, init, None, false)?;
    let mut w = init.clone();
    for t in 0..epochs * schedule.k() {
        let g = batch_gradient(&w, schedule.batch(t))?;
        w = w.with_vector(w.as_vector() - g * learning_rate)?;
        rec.record(t + 1, &w, None, false)?;
    }
    Ok(TrainRun {
        records: rec.records,
        final_state: w,
        retractions: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: DVector<T>,
    pub v: DVector<T>,
    pub t: usize,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
            t: 0,
        }
    }

    /// Bias-corrected update for gradient `g`; returns the parameter change.
    pub fn update(&mut self, g: &DVector<T>, cfg: &AdamConfig<T>) -> DVector<T> {
        self.t += 1;
        let one = T::one();
        self.m = &self.m * cfg.beta1 + g * (one - cfg.beta1);
        self.v = &self.v * cfg.beta2 + g.component_mul(g) * (one - cfg.beta2);
        let steps = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = one - cfg.beta1.powi(steps);
        let c2 = one - cfg.beta2.powi(steps);
        DVector::from_fn(g.len(), |i, _| {
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            -cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)
        })
    }
}

/// Mini-batch Adam on the batch mean squared error.
pub fn adam_baseline<T: Scalar>(
    schedule: &BatchSchedule<T>,
    init: &WeightState<T>,
    cfg: AdamConfig<T>,
    epochs: usize,
    eval: &Evaluation<T>,
    policy: RecordPolicy,
) -> Result<TrainRun<T>> {
    let mut rec = Recorder::new(schedule, eval, policy);
    rec.record(0, init, None, false)?;
    let mut w = init.clone();
    let mut adam = AdamState::new(w.as_vector().len());
    for t in 0..epochs * schedule.k() {
        let g = batch_gradient(&w, schedule.batch(t))?;
        let step = adam.update(&g, &cfg);
        w = w.with_vector(w.as_vector() + step)?;
        rec.record(t + 1, &w, None, false)?;
    }
    Ok(TrainRun {
        records: rec.records,
        final_state: w,
        retractions: 0,
    })
}

/// Minimizer of `λ‖r + JΔ‖² + ‖Δ‖²` for the linearized batch residual
/// `r = 𝓗(w) − ỹ`: `Δ = −λ Jᵀ (λ J Jᵀ + I)⁻¹ r`.
pub fn regularized_mhe_step<T: Scalar>(w: &WeightState<T>, batch: &Batch<T>, lambda: T) -> Result<WeightState<T>> {
    let (out, jac) = relu_net::outputs_and_jacobian(w, &batch.inputs)?;
    let r = out - &batch.targets;
    let rows = jac.nrows();
    let gram = (&jac * jac.transpose()) * lambda + DMatrix::identity(rows, rows);
    let solved = gram
        .cholesky()
        .map(|c| c.solve(&r))
        .ok_or_else(|| Error::ConstructionFailed("regularized system not positive definite".into()))?;
    let delta = jac.tr_mul(&solved) * (-lambda);
    w.with_vector(w.as_vector() + delta)
}

/// One regularized step per batch, cycling through the schedule.
pub fn regularized_mhe<T: Scalar>(
    schedule: &BatchSchedule<T>,
    init: &WeightState<T>,
    lambda: T,
    epochs: usize,
    eval: &Evaluation<T>,
    policy: RecordPolicy,
) -> Result<TrainRun<T>> {
    let mut rec = Recorder::new(schedule, eval, policy);
    rec.record(0, init, None, false)?;
    let mut w = init.clone();
    for t in 0..epochs * schedule.k() {
        w = regularized_mhe_step(&w, schedule.batch(t), lambda)?;
        rec.record(t + 1, &w, None, false)?;
    }
    Ok(TrainRun {
        records: rec.records,
        final_state: w,
        retractions: 0,
    })
}

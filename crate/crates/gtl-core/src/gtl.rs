//! Consensus coordinator: jointly solves a family of task-parameterized
//! trajectory problems and fits the approximator to their solutions.
//!
//! The coupled problem is
//! `min_{W, {X_i,U_i,T_i}} (1/N) Σ_i L(X_i,U_i,T_i)  s.t. (X_i, γT_i) = Z_i`
//! with `Z_i = (X̂(τ_i,W), γT̂(τ_i,W))`, handled by consensus ADMM: each
//! iteration (a) solves every task's trajectory problem with a proximal tie
//! `ρ/2‖(X,γT) − Z + Λ‖²`, (b) refits the approximator to the
//! multiplier-shifted solutions, (c) recomputes the consensus points from
//! the new weights, and (d) advances the scaled multipliers
//! `Λ ← Λ + α((X,γT) − Z)`. The `α = 0` reduction is a pure penalty method
//! ("guided" mode with no dual accumulation) that supports resampling the
//! task set each iteration; its reconstruction error plateaus at a nonzero
//! floor unless ρ grows.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approximator::{
    predict, reconstruction_error, train, ApproximatorError, ApproximatorWeights, NetConfig,
    RegressionSet, RegressionTarget, TrainConfig,
};
use crate::collocation::{
    consensus_len, consensus_vector, solve_from_system_starts, transcribe, CollocationError,
    ProximalTerm, Trajectory,
};
use crate::nlp_solver::{solve, NlpProblem, NlpSolverError, SolveStatus, SolverConfig};
use crate::systems::SystemSpec;
use crate::taskspace::{sample_uniform, Task, TaskSet, TaskSpace, TaskSpaceError};

#[derive(Debug, Error)]
pub enum GtlError {
    #[error("invalid coordinator config: {0}")]
    BadConfig(String),
    #[error("task set is empty")]
    NoTasks,
    #[error("every per-task solve failed at iteration {iteration}")]
    AllSolvesFailed { iteration: usize },
    #[error(transparent)]
    Approximator(#[from] ApproximatorError),
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Solver(#[from] NlpSolverError),
    #[error(transparent)]
    TaskSpace(#[from] TaskSpaceError),
}

/// Penalty weight sequence ρ^k. Nondecreasing by construction: constant, or
/// geometric with growth ≥ 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoSchedule {
    Constant { value: f64 },
    Geometric { initial: f64, growth: f64 },
}

impl RhoSchedule {
    pub fn validate(&self) -> Result<(), GtlError> {
        match self {
            RhoSchedule::Constant { value } => {
                if !(*value > 0.0) || !value.is_finite() {
                    return Err(GtlError::BadConfig(format!(
                        "constant rho must be positive and finite, got {value}"
                    )));
                }
            }
            RhoSchedule::Geometric { initial, growth } => {
                if !(*initial > 0.0) || !initial.is_finite() {
                    return Err(GtlError::BadConfig(format!(
                        "geometric rho initial must be positive and finite, got {initial}"
                    )));
                }
                if !(*growth >= 1.0) || !growth.is_finite() {
                    return Err(GtlError::BadConfig(format!(
                        "geometric rho growth must be ≥ 1 (nondecreasing schedule), got {growth}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// ρ^k.
    pub fn value(&self, k: usize) -> f64 {
        match self {
            RhoSchedule::Constant { value } => *value,
            RhoSchedule::Geometric { initial, growth } => initial * growth.powi(k as i32),
        }
    }

    /// Whether ρ^k → ∞.
    pub fn diverges(&self) -> bool {
        matches!(self, RhoSchedule::Geometric { growth, .. } if *growth > 1.0)
    }

    /// Whether some ρ^{k₀} exceeds `level` (and, the schedule being
    /// nondecreasing, stays above it).
    pub fn eventually_exceeds(&self, level: f64) -> bool {
        match self {
            RhoSchedule::Constant { value } => *value > level,
            RhoSchedule::Geometric { initial, growth } => *growth > 1.0 || *initial > level,
        }
    }
}

/// When to declare the consensus loop finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// `‖Λ^{k+1} − Λ^k‖ ≤ ε` — requires α > 0 (with α = 0 the multipliers
    /// never move and the rule would fire vacuously at k = 1).
    MultiplierDelta,
    /// Mean squared per-task max-abs reconstruction error improved by less
    /// than ε since the previous iteration (usable at any α, including the
    /// penalty-mode α = 0 where no dual sequence exists to watch).
    ReconErrorDelta,
}

/// Coordinator settings: the consensus weights, schedules, stopping rule,
/// and the per-stage solver/trainer configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtlConfig {
    /// Duration weight γ > 0 in the consensus layout and the regression loss.
    pub gamma: f64,
    /// Dual step size α ∈ [0, 1]; 0 disables multiplier accumulation.
    pub alpha: f64,
    pub rho: RhoSchedule,
    /// Consensus iterations to run after the iteration-0 baseline.
    pub max_iterations: usize,
    pub stopping: StoppingRule,
    /// Tolerance ε of the stopping rule.
    pub stop_tol: f64,
    /// Draw a fresh task set every iteration (penalty mode only: requires
    /// α = 0, since multipliers cannot follow a moving task set).
    pub resample_each_iter: bool,
    /// Exceedance thresholds (low, high) reported in the metrics.
    pub thresholds: (f64, f64),
    /// Trajectory nodes per task; must equal `net.seq_len`.
    pub l_t: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    /// Seed for the initial approximator weights.
    pub weight_seed: u64,
    /// Worker threads for the per-task solve stage (results are ordered, so
    /// outputs are identical for any worker count).
    pub workers: usize,
}

impl GtlConfig {
    pub fn validate(&self) -> Result<(), GtlError> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(GtlError::BadConfig(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GtlError::BadConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        self.rho.validate()?;
        if !(self.stop_tol > 0.0) || !self.stop_tol.is_finite() {
            return Err(GtlError::BadConfig(format!(
                "stop_tol must be positive and finite, got {}",
                self.stop_tol
            )));
        }
        if self.stopping == StoppingRule::MultiplierDelta && self.alpha == 0.0 {
            return Err(GtlError::BadConfig(
                "multiplier_delta stopping requires alpha > 0: with alpha = 0 the \
                 multipliers never move, so the rule would fire immediately"
                    .into(),
            ));
        }
        if self.resample_each_iter && self.alpha != 0.0 {
            return Err(GtlError::BadConfig(
                "resampling the task set each iteration requires alpha = 0 \
                 (multipliers cannot follow a moving task set)"
                    .into(),
            ));
        }
        if !(self.thresholds.0 > 0.0 && self.thresholds.1 > self.thresholds.0) {
            return Err(GtlError::BadConfig(format!(
                "thresholds must be positive and increasing, got {:?}",
                self.thresholds
            )));
        }
        if self.l_t != self.net.seq_len {
            return Err(GtlError::BadConfig(format!(
                "l_t ({}) must equal the network's seq_len ({})",
                self.l_t, self.net.seq_len
            )));
        }
        self.net.validate()?;
        self.train.validate()?;
        self.solver.validate()?;
        Ok(())
    }
}

/// Snapshot of the consensus iteration: per-task solutions, the
/// approximator, its predictions at every task (the consensus points), and
/// the scaled multipliers. Immutable once an iteration completes.
#[derive(Debug, Clone)]
pub struct AdmmState {
    k: usize,
    tasks: TaskSet,
    /// Latest accepted solution per task; `None` when no solve has succeeded
    /// for that task yet.
    trajectories: Vec<Option<Trajectory>>,
    /// Whether task i's solve succeeded at the stage that produced this
    /// state (fresh tasks feed the regression; stale ones are carried).
    fresh: Vec<bool>,
    weights: ApproximatorWeights,
    /// Z_i: consensus layout `[X̂ node-major…, γT̂]` of the current weights
    /// at τ_i — always the exact forward pass.
    consensus: Vec<Vec<f64>>,
    /// Λ_i, same layout as `consensus` (duration slot scaled by γ).
    multipliers: Vec<Vec<f64>>,
    /// ρ^k: the penalty the NEXT iterate's prox solves will use.
    rho: f64,
    gamma: f64,
    alpha: f64,
    /// Flat 2-norm of Λ^k − Λ^{k−1} over all tasks (0 at k = 0).
    multiplier_delta: f64,
}

impl AdmmState {
    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn tasks(&self) -> &TaskSet {
        &self.tasks
    }

    pub fn weights(&self) -> &ApproximatorWeights {
        &self.weights
    }

    pub fn trajectory(&self, i: usize) -> Option<&Trajectory> {
        self.trajectories[i].as_ref()
    }

    /// Tasks whose most recent solve succeeded.
    pub fn fresh_count(&self) -> usize {
        self.fresh.iter().filter(|f| **f).count()
    }

    pub fn consensus(&self) -> &[Vec<f64>] {
        &self.consensus
    }

    pub fn multipliers(&self) -> &[Vec<f64>] {
        &self.multipliers
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Duration weight γ baked into the consensus/multiplier layouts.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Dual step size α the state was produced with.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn multiplier_delta(&self) -> f64 {
        self.multiplier_delta
    }
}

/// One iteration's health report. `mean_ninf`/`max_ninf` are over per-task
/// `max|X_i − X̂(τ_i)|` (states only; duration error is tracked separately),
/// computed across tasks that have a solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub k: usize,
    pub rho: f64,
    pub mean_ninf: f64,
    pub max_ninf: f64,
    /// Mean of squared per-task max-abs errors (the quantity the
    /// improvement-based stopping rule watches).
    pub mean_ninf_sq: f64,
    pub frac_gt_thresh1: f64,
    pub frac_gt_thresh2: f64,
    /// Mean raw trajectory cost L (no proximal part).
    pub mean_cost: f64,
    /// Flat 2-norm of all multipliers.
    pub multiplier_norm: f64,
    /// Mean over tasks of `L_i + (ρ^k/2)‖(X_i, γT_i) − Z_i + Λ_i‖²` — the
    /// value the per-task proximal solves collectively minimize.
    pub aug_lagrangian: f64,
    /// Mean |T_i − T̂(τ_i)|.
    pub mean_duration_err: f64,
    /// Tasks whose latest solve succeeded / total tasks.
    pub solved: usize,
    pub total: usize,
}

/// How a run ended: the stopping criterion fired, or the iteration budget
/// ran out first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOutcome {
    CriterionMet { at_iteration: usize },
    BudgetExhausted,
}

/// A finished run: final state, one metrics row per iteration (row 0 is the
/// plain-regression baseline), and how it stopped.
#[derive(Debug)]
pub struct GtlRun {
    pub state: AdmmState,
    pub metrics: Vec<IterationMetrics>,
    pub outcome: RunOutcome,
    /// `(iteration, task index, reason)` for every failed per-task solve.
    pub solve_failures: Vec<(usize, usize, String)>,
}

/// Held-out evaluation: per-task errors between independent prox-free
/// solves and the approximator's predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub ninf_errors: Vec<f64>,
    pub duration_errors: Vec<f64>,
    pub mean_ninf: f64,
    pub max_ninf: f64,
    /// Tasks the reference solver could not solve (excluded from the stats).
    pub unsolved: Vec<usize>,
}

/// The multiplier rule `Λ⁺ = Λ + α(y − z)` where `y = (X, γT)` is the
/// task's solution in consensus layout and `z` the prediction.
fn multiplier_update(lambda: &[f64], alpha: f64, y: &[f64], z: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .zip(y.iter().zip(z))
        .map(|(l, (yi, zi))| l + alpha * (yi - zi))
        .collect()
}

/// Drives the consensus loop for one system family.
pub struct GtlCoordinator<'a> {
    spec: &'a SystemSpec,
    space: TaskSpace,
    cfg: GtlConfig,
}

impl<'a> GtlCoordinator<'a> {
    pub fn new(spec: &'a SystemSpec, space: TaskSpace, cfg: GtlConfig) -> Result<Self, GtlError> {
        cfg.validate()?;
        if cfg.net.task_dim != spec.task_dims() {
            return Err(GtlError::BadConfig(format!(
                "network task_dim {} != system task dims {}",
                cfg.net.task_dim,
                spec.task_dims()
            )));
        }
        if cfg.net.state_dim != spec.state_dim() {
            return Err(GtlError::BadConfig(format!(
                "network state_dim {} != system state dim {}",
                cfg.net.state_dim,
                spec.state_dim()
            )));
        }
        if space.dims() != spec.task_dims() {
            return Err(GtlError::BadConfig(format!(
                "task space dims {} != system task dims {}",
                space.dims(),
                spec.task_dims()
            )));
        }
        Ok(Self { spec, space, cfg })
    }

    pub fn config(&self) -> &GtlConfig {
        &self.cfg
    }

    /// Consensus-layout forward pass `[X̂ node-major…, γT̂]` at one task.
    fn predict_consensus(
        &self,
        weights: &ApproximatorWeights,
        task: &Task,
    ) -> Result<Vec<f64>, GtlError> {
        let (states, duration) = predict(weights, task)?;
        let mut z = Vec::with_capacity(consensus_len(self.cfg.l_t, self.cfg.net.state_dim));
        z.extend(states.iter().copied());
        z.push(self.cfg.gamma * duration);
        Ok(z)
    }

    fn predict_all(
        &self,
        weights: &ApproximatorWeights,
        tasks: &TaskSet,
    ) -> Result<Vec<Vec<f64>>, GtlError> {
        tasks
            .tasks()
            .iter()
            .map(|t| self.predict_consensus(weights, t))
            .collect()
    }

    /// Solves every task, each with its own optional proximal term and warm
    /// start, in input order (parallel when `workers > 1`; output identical
    /// for any worker count).
    #[allow(clippy::type_complexity)]
    fn solve_tasks(
        &self,
        tasks: &TaskSet,
        prox: Option<&[ProximalTerm]>,
        warm: Option<&[Option<Vec<f64>>]>,
    ) -> Result<Vec<Result<(Trajectory, f64), String>>, GtlError> {
        let jobs: Vec<usize> = (0..tasks.len()).collect();
        let run_one = |i: usize| -> Result<Result<(Trajectory, f64), String>, GtlError> {
            let task = &tasks.tasks()[i];
            let nlp = transcribe(self.spec, task, self.cfg.l_t, prox.map(|p| p[i].clone()))?;
            let report = match warm.and_then(|w| w[i].as_ref()) {
                Some(v) => solve(&nlp, Some(v), &self.cfg.solver)?,
                None => solve_from_system_starts(&nlp, &self.cfg.solver)?,
            };
            if report.status == SolveStatus::Converged {
                let traj = nlp.trajectory(&report.solution)?;
                Ok(Ok((traj, report.objective)))
            } else {
                Ok(Err(format!(
                    "{:?}: feasibility {:.3e}, stationarity {:.3e}",
                    report.status, report.feas_residual, report.stationarity
                )))
            }
        };
        if self.cfg.workers <= 1 {
            jobs.iter().map(|i| run_one(*i)).collect()
        } else {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.cfg.workers)
                .build()
                .map_err(|e| GtlError::BadConfig(format!("worker pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(|i| run_one(*i)).collect())
        }
    }

    /// Iteration 0: solve every task without a proximal tie, fit the
    /// approximator to the solutions (the plain-regression baseline), set
    /// the consensus points from the fresh weights, and zero the
    /// multipliers.
    pub fn init(&self, tasks: TaskSet) -> Result<(AdmmState, Vec<(usize, String)>), GtlError> {
        if tasks.is_empty() {
            return Err(GtlError::NoTasks);
        }
        let results = self.solve_tasks(&tasks, None, None)?;
        let mut trajectories: Vec<Option<Trajectory>> = Vec::with_capacity(tasks.len());
        let mut fresh = Vec::with_capacity(tasks.len());
        let mut failures = Vec::new();
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok((traj, _)) => {
                    trajectories.push(Some(traj));
                    fresh.push(true);
                }
                Err(reason) => {
                    trajectories.push(None);
                    fresh.push(false);
                    failures.push((i, reason));
                }
            }
        }
        if fresh.iter().all(|f| !f) {
            return Err(GtlError::AllSolvesFailed { iteration: 0 });
        }

        let w0 = ApproximatorWeights::init(self.cfg.net.clone(), self.cfg.weight_seed)?;
        let weights = self.fit(&w0, &tasks, &trajectories, &fresh, None, 0)?;
        let consensus = self.predict_all(&weights, &tasks)?;
        let n_slots = consensus_len(self.cfg.l_t, self.cfg.net.state_dim);
        let multipliers = vec![vec![0.0; n_slots]; tasks.len()];

        Ok((
            AdmmState {
                k: 0,
                tasks,
                trajectories,
                fresh,
                weights,
                consensus,
                multipliers,
                rho: self.cfg.rho.value(0),
                gamma: self.cfg.gamma,
                alpha: self.cfg.alpha,
                multiplier_delta: 0.0,
            },
            failures,
        ))
    }

    /// Fits the approximator to the solved tasks' (possibly
    /// multiplier-shifted) solutions, starting from `w0`. The training seed
    /// is offset by the iteration so each refit draws a distinct
    /// deterministic shuffle stream.
    fn fit(
        &self,
        w0: &ApproximatorWeights,
        tasks: &TaskSet,
        trajectories: &[Option<Trajectory>],
        include: &[bool],
        shifts: Option<&[Vec<f64>]>,
        iteration: usize,
    ) -> Result<ApproximatorWeights, GtlError> {
        let l_t = self.cfg.l_t;
        let p = self.cfg.net.state_dim;
        let mut fit_tasks = Vec::new();
        let mut targets = Vec::new();
        for (i, traj) in trajectories.iter().enumerate() {
            let (Some(traj), true) = (traj, include[i]) else {
                continue;
            };
            let mut states = traj.states().clone();
            let mut duration = traj.duration();
            if let Some(shifts) = shifts {
                let lam = &shifts[i];
                for (k, row) in states.outer_iter_mut().enumerate() {
                    for (j, x) in row.into_iter().enumerate() {
                        *x += lam[k * p + j];
                    }
                }
                duration += lam[l_t * p] / self.cfg.gamma;
            }
            fit_tasks.push(tasks.tasks()[i].clone());
            targets.push(RegressionTarget::new(states, duration)?);
        }
        let set = RegressionSet::new(targets, self.cfg.gamma)?;
        let tcfg = TrainConfig {
            seed: self.cfg.train.seed.wrapping_add(iteration as u64),
            ..self.cfg.train.clone()
        };
        let (weights, _) = train(w0, &set, &fit_tasks, &tcfg)?;
        Ok(weights)
    }

    /// One consensus iteration: prox solves toward the current predictions,
    /// refit on the fresh (multiplier-shifted) solutions, recompute the
    /// consensus points, advance the multipliers, advance ρ.
    pub fn iterate(&self, state: &AdmmState) -> Result<AdmmState, GtlError> {
        let (iter_tasks, mut trajectories, multipliers) = if self.cfg.resample_each_iter {
            // Penalty mode with a moving task set: fresh tasks, no carried
            // solutions; multipliers are identically zero (α = 0).
            let seed = state
                .tasks
                .seed()
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(state.k as u64 + 1);
            let tasks = sample_uniform(&self.space, state.tasks.len(), seed)?;
            let n_slots = consensus_len(self.cfg.l_t, self.cfg.net.state_dim);
            let multipliers = vec![vec![0.0; n_slots]; tasks.len()];
            (tasks, vec![None; state.tasks.len()], multipliers)
        } else {
            (
                state.tasks.clone(),
                state.trajectories.clone(),
                state.multipliers.clone(),
            )
        };

        // Consensus points for the solve stage: predictions of the current
        // weights at this iteration's tasks.
        let consensus_in = if self.cfg.resample_each_iter {
            self.predict_all(&state.weights, &iter_tasks)?
        } else {
            state.consensus.clone()
        };

        let rho_k = state.rho;
        let prox: Vec<ProximalTerm> = (0..iter_tasks.len())
            .map(|i| ProximalTerm {
                target: consensus_in[i].clone(),
                multiplier: multipliers[i].clone(),
                rho: rho_k,
                gamma: self.cfg.gamma,
            })
            .collect();

        // Warm starts: the previous accepted solution when the task set is
        // fixed; the prediction itself when tasks were just resampled.
        let warm: Vec<Option<Vec<f64>>> = (0..iter_tasks.len())
            .map(|i| -> Result<Option<Vec<f64>>, GtlError> {
                if let Some(traj) = &trajectories[i] {
                    let nlp = transcribe(self.spec, &iter_tasks.tasks()[i], self.cfg.l_t, None)?;
                    Ok(Some(nlp.decision_vector(traj)?))
                } else if self.cfg.resample_each_iter {
                    Ok(Some(self.prediction_warm_start(
                        &state.weights,
                        &iter_tasks.tasks()[i],
                    )?))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_, _>>()?;

        let results = self.solve_tasks(&iter_tasks, Some(&prox), Some(&warm))?;
        let mut fresh = vec![false; iter_tasks.len()];
        for (i, res) in results.into_iter().enumerate() {
            if let Ok((traj, _)) = res {
                trajectories[i] = Some(traj);
                fresh[i] = true;
            }
        }
        if fresh.iter().all(|f| !f) {
            return Err(GtlError::AllSolvesFailed {
                iteration: state.k + 1,
            });
        }

        // Refit on the fresh solutions, shifted by the multipliers.
        let weights = self.fit(
            &state.weights,
            &iter_tasks,
            &trajectories,
            &fresh,
            Some(&multipliers),
            state.k + 1,
        )?;

        // New consensus points, then the dual ascent step on fresh tasks.
        let consensus = self.predict_all(&weights, &iter_tasks)?;
        let mut new_multipliers = multipliers;
        let mut delta_sq = 0.0;
        if self.cfg.alpha != 0.0 {
            for i in 0..iter_tasks.len() {
                if !fresh[i] {
                    continue;
                }
                let traj = trajectories[i].as_ref().expect("fresh implies solved");
                let y = consensus_vector(traj, self.cfg.gamma);
                let updated =
                    multiplier_update(&new_multipliers[i], self.cfg.alpha, &y, &consensus[i]);
                delta_sq += updated
                    .iter()
                    .zip(&new_multipliers[i])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                new_multipliers[i] = updated;
            }
        }

        Ok(AdmmState {
            k: state.k + 1,
            tasks: iter_tasks,
            trajectories,
            fresh,
            weights,
            consensus,
            multipliers: new_multipliers,
            rho: self.cfg.rho.value(state.k + 1),
            gamma: self.cfg.gamma,
            alpha: self.cfg.alpha,
            multiplier_delta: delta_sq.sqrt(),
        })
    }

    /// Decision vector seeded from the approximator's own prediction:
    /// predicted states, zero controls, predicted duration clamped into the
    /// admissible range.
    fn prediction_warm_start(
        &self,
        weights: &ApproximatorWeights,
        task: &Task,
    ) -> Result<Vec<f64>, GtlError> {
        let (states, dur) = predict(weights, task)?;
        let (lo, hi) = self.spec.duration_range();
        let duration = self
            .spec
            .pinned_duration(task.coords())
            .unwrap_or_else(|| dur.clamp(lo, hi));
        let controls = Array2::zeros((self.cfg.l_t, self.spec.control_dim()));
        let traj = Trajectory::new(states, controls, duration)?;
        let nlp = transcribe(self.spec, task, self.cfg.l_t, None)?;
        Ok(nlp.decision_vector(&traj)?)
    }

    /// Health metrics of a state: reconstruction error distribution, raw
    /// costs, multiplier norm, and the averaged per-task proximal objective.
    pub fn metrics(&self, state: &AdmmState) -> Result<IterationMetrics, GtlError> {
        let l_t = self.cfg.l_t;
        let p = self.cfg.net.state_dim;
        let mut ninf = Vec::new();
        let mut dur_errs = Vec::new();
        let mut costs = Vec::new();
        let mut aug = 0.0;
        for (i, traj) in state.trajectories.iter().enumerate() {
            let Some(traj) = traj else { continue };
            let task = &state.tasks.tasks()[i];
            let z = &state.consensus[i];
            let mut worst = 0.0f64;
            for (k, row) in traj.states().outer_iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    worst = worst.max((x - z[k * p + j]).abs());
                }
            }
            ninf.push(worst);
            dur_errs.push((traj.duration() - z[l_t * p] / self.cfg.gamma).abs());

            // Raw cost: evaluate the prox-free objective at the solution.
            let plain = transcribe(self.spec, task, l_t, None)?;
            let v = plain.decision_vector(traj)?;
            let cost = plain.objective(&v);
            costs.push(cost);

            let y = consensus_vector(traj, self.cfg.gamma);
            let prox_sq: f64 = y
                .iter()
                .zip(z.iter().zip(&state.multipliers[i]))
                .map(|(yi, (zi, li))| {
                    let r = yi - zi + li;
                    r * r
                })
                .sum();
            aug += cost + 0.5 * state.rho * prox_sq;
        }
        if ninf.is_empty() {
            return Err(GtlError::AllSolvesFailed { iteration: state.k });
        }
        let n = ninf.len() as f64;
        let mean_ninf = ninf.iter().sum::<f64>() / n;
        let max_ninf = ninf.iter().cloned().fold(0.0f64, f64::max);
        let mean_ninf_sq = ninf.iter().map(|e| e * e).sum::<f64>() / n;
        let (t1, t2) = self.cfg.thresholds;
        let frac1 = ninf.iter().filter(|e| **e > t1).count() as f64 / n;
        let frac2 = ninf.iter().filter(|e| **e > t2).count() as f64 / n;
        let multiplier_norm = state
            .multipliers
            .iter()
            .flat_map(|l| l.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        Ok(IterationMetrics {
            k: state.k,
            rho: state.rho,
            mean_ninf,
            max_ninf,
            mean_ninf_sq,
            frac_gt_thresh1: frac1,
            frac_gt_thresh2: frac2,
            mean_cost: costs.iter().sum::<f64>() / n,
            multiplier_norm,
            aug_lagrangian: aug / n,
            mean_duration_err: dur_errs.iter().sum::<f64>() / n,
            solved: ninf.len(),
            total: state.tasks.len(),
        })
    }

    /// Runs init plus up to `max_iterations` consensus iterations, stopping
    /// early when the configured criterion fires. Budget exhaustion and
    /// criterion satisfaction are reported distinctly in the outcome.
    pub fn run(&self, tasks: TaskSet) -> Result<GtlRun, GtlError> {
        let (mut state, init_failures) = self.init(tasks)?;
        let mut solve_failures: Vec<(usize, usize, String)> = init_failures
            .into_iter()
            .map(|(i, reason)| (0, i, reason))
            .collect();
        let mut metrics = vec![self.metrics(&state)?];
        let mut outcome = RunOutcome::BudgetExhausted;

        for _ in 0..self.cfg.max_iterations {
            let prev_fresh = state.fresh.clone();
            state = self.iterate(&state)?;
            let m = self.metrics(&state)?;
            for (i, (now, _before)) in state.fresh.iter().zip(&prev_fresh).enumerate() {
                if !now {
                    solve_failures.push((state.k, i, "prox solve did not converge".into()));
                }
            }
            let stop = match self.cfg.stopping {
                StoppingRule::MultiplierDelta => state.multiplier_delta <= self.cfg.stop_tol,
                StoppingRule::ReconErrorDelta => {
                    let prev = metrics.last().expect("baseline row").mean_ninf_sq;
                    prev - m.mean_ninf_sq <= self.cfg.stop_tol
                }
            };
            metrics.push(m);
            if stop {
                outcome = RunOutcome::CriterionMet {
                    at_iteration: state.k,
                };
                break;
            }
        }
        Ok(GtlRun {
            state,
            metrics,
            outcome,
            solve_failures,
        })
    }

    /// Evaluates weights on held-out tasks: each task is solved from scratch
    /// (no proximal tie) and compared against the prediction.
    pub fn evaluate(
        &self,
        weights: &ApproximatorWeights,
        tasks: &TaskSet,
    ) -> Result<EvalReport, GtlError> {
        let results = self.solve_tasks(tasks, None, None)?;
        let mut ninf_errors = Vec::new();
        let mut duration_errors = Vec::new();
        let mut unsolved = Vec::new();
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok((traj, _)) => {
                    let (pred, dur) = predict(weights, &tasks.tasks()[i])?;
                    let mut worst = 0.0f64;
                    for (x, xh) in traj.states().iter().zip(pred.iter()) {
                        worst = worst.max((x - xh).abs());
                    }
                    ninf_errors.push(worst);
                    duration_errors.push((traj.duration() - dur).abs());
                }
                Err(_) => unsolved.push(i),
            }
        }
        if ninf_errors.is_empty() {
            return Err(GtlError::AllSolvesFailed { iteration: 0 });
        }
        let n = ninf_errors.len() as f64;
        Ok(EvalReport {
            mean_ninf: ninf_errors.iter().sum::<f64>() / n,
            max_ninf: ninf_errors.iter().cloned().fold(0.0f64, f64::max),
            ninf_errors,
            duration_errors,
            unsolved,
        })
    }

    /// Reconstruction error of `weights` against the state's stored
    /// solutions — the regression objective on the unshifted targets.
    pub fn reconstruction_on_solutions(
        &self,
        weights: &ApproximatorWeights,
        state: &AdmmState,
    ) -> Result<f64, GtlError> {
        let mut fit_tasks = Vec::new();
        let mut targets = Vec::new();
        for (i, traj) in state.trajectories.iter().enumerate() {
            let Some(traj) = traj else { continue };
            fit_tasks.push(state.tasks.tasks()[i].clone());
            targets.push(RegressionTarget::new(traj.states().clone(), traj.duration())?);
        }
        let set = RegressionSet::new(targets, self.cfg.gamma)?;
        Ok(reconstruction_error(weights, &set, &fit_tasks)?)
    }
}

/// Which convergence regime (if any) a schedule satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceRegime {
    /// 0 < α ≤ 1 with ρ^k eventually above the coupling's smoothness level:
    /// the dual iteration contracts.
    DualAscent,
    /// α = 0 with ρ^k → ∞: pure penalty continuation.
    PenaltyContinuation,
    /// Neither condition holds; convergence to an exact consensus is not
    /// guaranteed (reconstruction error may plateau at a nonzero floor).
    None,
}

/// Advisory report on the configured (α, ρ^k) against the two sufficient
/// convergence conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop1Report {
    pub regime: ConvergenceRegime,
    pub satisfied: bool,
    pub note: String,
}

/// Checks which sufficient convergence regime the schedule satisfies, given
/// an estimate of the prediction map's smoothness level `lipschitz_l`.
/// Purely advisory: it never fails, it reports.
pub fn proposition1_check(cfg: &GtlConfig, lipschitz_l: f64) -> Prop1Report {
    if cfg.alpha > 0.0 && cfg.rho.eventually_exceeds(lipschitz_l) {
        return Prop1Report {
            regime: ConvergenceRegime::DualAscent,
            satisfied: true,
            note: format!(
                "alpha = {} in (0, 1] and the penalty schedule eventually exceeds the \
                 smoothness level {lipschitz_l}",
                cfg.alpha
            ),
        };
    }
    if cfg.alpha == 0.0 && cfg.rho.diverges() {
        return Prop1Report {
            regime: ConvergenceRegime::PenaltyContinuation,
            satisfied: true,
            note: "alpha = 0 with a divergent penalty schedule".into(),
        };
    }
    Prop1Report {
        regime: ConvergenceRegime::None,
        satisfied: false,
        note: format!(
            "neither regime holds (alpha = {}, schedule {:?}): expect a nonzero \
             reconstruction-error floor",
            cfg.alpha, cfg.rho
        ),
    }
}

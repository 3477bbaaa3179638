//! Direct transcription of a task's optimal-control problem into a
//! box-constrained NLP on the trapezoidal collocation grid.
//!
//! The decision vector stacks the state at every node, the control at every
//! node, and the horizon duration:
//!
//! ```text
//! v = [ x₁ … x_{L_T} | u₁ … u_{L_T} | T ],    n_vars = L_T·(p + q) + 1
//! ```
//!
//! Equality residuals are the trapezoidal dynamics defects on each of the
//! `L_T − 1` intervals — in derivative-normalized form,
//! `(x_{k+1} − x_k)/h − (f_k + f_{k+1})/2` with `h = T/(L_T − 1)` — followed
//! by the system's boundary residuals. Inequality residuals are the per-node
//! path constraints. The objective is the trapezoid-weighted running cost
//! `T · Σ_k w_k · l(x_k, u_k, T)`, optionally plus a proximal tie
//! `ρ/2 · ‖(X, γT) − z + λ‖²` toward a consensus target.

use crate::nlp_solver::NlpProblem;
use crate::systems::SystemSpec;
use crate::taskspace::Task;
use ndarray::Array2;

#[derive(Debug, thiserror::Error)]
pub enum CollocationError {
    #[error("need at least 2 collocation nodes, got {0}")]
    TooFewNodes(usize),
    #[error("task has {got} coordinates but system '{system}' expects {expected}")]
    TaskDims {
        system: String,
        expected: usize,
        got: usize,
    },
    #[error("trajectory shape mismatch: {0}")]
    Shape(String),
    #[error("duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("proximal term invalid: {0}")]
    BadProximal(String),
    #[error("pinned duration {pinned} outside the system's duration box [{lo}, {hi}]")]
    PinOutOfRange { pinned: f64, lo: f64, hi: f64 },
}

/// A discrete trajectory on the collocation grid: `L_T × p` states,
/// `L_T × q` controls (row = node), and the horizon duration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Array2<f64>,
    controls: Array2<f64>,
    duration: f64,
}

impl Trajectory {
    pub fn new(
        states: Array2<f64>,
        controls: Array2<f64>,
        duration: f64,
    ) -> Result<Self, CollocationError> {
        if states.nrows() != controls.nrows() {
            return Err(CollocationError::Shape(format!(
                "states have {} nodes, controls have {}",
                states.nrows(),
                controls.nrows()
            )));
        }
        if states.nrows() < 2 {
            return Err(CollocationError::TooFewNodes(states.nrows()));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(CollocationError::BadDuration(duration));
        }
        Ok(Self {
            states,
            controls,
            duration,
        })
    }

    pub fn nodes(&self) -> usize {
        self.states.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.ncols()
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn controls(&self) -> &Array2<f64> {
        &self.controls
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Time stamp of node `k`, `k·T/(L_T − 1)`.
    pub fn node_time(&self, k: usize) -> f64 {
        self.duration * k as f64 / (self.nodes() - 1) as f64
    }
}

/// Proximal tie toward a consensus target in the `(X, γT)` layout:
/// `L_T·p` state slots followed by one γ-scaled duration slot.
#[derive(Debug, Clone)]
pub struct ProximalTerm {
    /// Consensus target z (length `L_T·p + 1`, duration slot pre-scaled by γ).
    pub target: Vec<f64>,
    /// Scaled dual estimate λ, same layout and length as `target`.
    pub multiplier: Vec<f64>,
    /// Proximal weight ρ ≥ 0.
    pub rho: f64,
    /// Duration weight γ > 0 used by the consensus layout.
    pub gamma: f64,
}

impl ProximalTerm {
    /// A zero-multiplier tie toward `target` — the "track this prediction"
    /// special case used by penalty-mode runs and held-out evaluations.
    pub fn tracking(target: Vec<f64>, rho: f64, gamma: f64) -> Self {
        let multiplier = vec![0.0; target.len()];
        Self {
            target,
            multiplier,
            rho,
            gamma,
        }
    }

    fn validate(&self, l_t: usize, p: usize) -> Result<(), CollocationError> {
        let want = consensus_len(l_t, p);
        if self.target.len() != want {
            return Err(CollocationError::BadProximal(format!(
                "target length {} != {want}",
                self.target.len()
            )));
        }
        if self.multiplier.len() != want {
            return Err(CollocationError::BadProximal(format!(
                "multiplier length {} != {want}",
                self.multiplier.len()
            )));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(CollocationError::BadProximal(format!(
                "rho must be finite and >= 0, got {}",
                self.rho
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(CollocationError::BadProximal(format!(
                "gamma must be finite and > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Length of the consensus vector for `l_t` nodes of a `p`-state system.
pub fn consensus_len(l_t: usize, p: usize) -> usize {
    l_t * p + 1
}

/// Flattens a trajectory into the consensus layout `[X row-major…, γ·T]`.
pub fn consensus_vector(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(consensus_len(traj.nodes(), traj.state_dim()));
    out.extend(traj.states.iter().copied());
    out.push(gamma * traj.duration);
    out
}

/// One task's transcribed NLP. Implements [`NlpProblem`] for the solver and
/// carries the index maps between decision vectors and trajectories.
pub struct CollocatedNlp {
    spec: SystemSpec,
    task: Vec<f64>,
    l_t: usize,
    prox: Option<ProximalTerm>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    n_eq: usize,
    n_ineq: usize,
    /// Trapezoid quadrature weights, sum 1: `[½, 1, …, 1, ½]/(L_T − 1)`.
    weights: Vec<f64>,
    /// Normalized node positions `k/(L_T − 1)`.
    fractions: Vec<f64>,
    pinned_duration: Option<f64>,
}

/// Builds the NLP for `task` on `l_t ≥ 2` nodes. When the system pins the
/// horizon, the duration variable's box collapses to that value; otherwise
/// it spans the system's duration range. An optional [`ProximalTerm`] adds
/// the consensus tie to the objective.
pub fn transcribe(
    spec: &SystemSpec,
    task: &Task,
    l_t: usize,
    prox: Option<ProximalTerm>,
) -> Result<CollocatedNlp, CollocationError> {
    if l_t < 2 {
        return Err(CollocationError::TooFewNodes(l_t));
    }
    if task.dims() != spec.task_dims() {
        return Err(CollocationError::TaskDims {
            system: spec.name().to_string(),
            expected: spec.task_dims(),
            got: task.dims(),
        });
    }
    let p = spec.state_dim();
    let q = spec.control_dim();
    if let Some(prox) = &prox {
        prox.validate(l_t, p)?;
    }
    let pinned = spec.pinned_duration(task.coords());
    let (dur_lo, dur_hi) = spec.duration_range();
    if let Some(t) = pinned {
        if !(t >= dur_lo && t <= dur_hi) {
            return Err(CollocationError::PinOutOfRange {
                pinned: t,
                lo: dur_lo,
                hi: dur_hi,
            });
        }
    }

    let n_vars = l_t * (p + q) + 1;
    let mut lower = Vec::with_capacity(n_vars);
    let mut upper = Vec::with_capacity(n_vars);
    for _ in 0..l_t {
        lower.extend_from_slice(spec.state_lower());
        upper.extend_from_slice(spec.state_upper());
    }
    for _ in 0..l_t {
        lower.extend_from_slice(spec.control_lower());
        upper.extend_from_slice(spec.control_upper());
    }
    match pinned {
        Some(t) => {
            lower.push(t);
            upper.push(t);
        }
        None => {
            lower.push(dur_lo);
            upper.push(dur_hi);
        }
    }

    let intervals = (l_t - 1) as f64;
    let mut weights = vec![1.0 / intervals; l_t];
    weights[0] = 0.5 / intervals;
    weights[l_t - 1] = 0.5 / intervals;
    let fractions = (0..l_t).map(|k| k as f64 / intervals).collect();

    let n_eq = (l_t - 1) * p + spec.model().n_terminal();
    let n_ineq = l_t * spec.model().n_path_ineq();

    Ok(CollocatedNlp {
        spec: spec.clone(),
        task: task.coords().to_vec(),
        l_t,
        prox,
        lower,
        upper,
        n_eq,
        n_ineq,
        weights,
        fractions,
        pinned_duration: pinned,
    })
}

impl CollocatedNlp {
    pub fn l_t(&self) -> usize {
        self.l_t
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn task_coords(&self) -> &[f64] {
        &self.task
    }

    pub fn pinned_duration(&self) -> Option<f64> {
        self.pinned_duration
    }

    pub fn prox(&self) -> Option<&ProximalTerm> {
        self.prox.as_ref()
    }

    #[inline]
    fn idx_x(&self, k: usize, i: usize) -> usize {
        k * self.spec.state_dim() + i
    }

    #[inline]
    fn idx_u(&self, k: usize, j: usize) -> usize {
        self.l_t * self.spec.state_dim() + k * self.spec.control_dim() + j
    }

    #[inline]
    fn idx_t(&self) -> usize {
        self.l_t * (self.spec.state_dim() + self.spec.control_dim())
    }

    #[inline]
    fn state_slice<'a>(&self, v: &'a [f64], k: usize) -> &'a [f64] {
        let p = self.spec.state_dim();
        &v[k * p..(k + 1) * p]
    }

    #[inline]
    fn control_slice<'a>(&self, v: &'a [f64], k: usize) -> &'a [f64] {
        let q = self.spec.control_dim();
        let base = self.l_t * self.spec.state_dim();
        &v[base + k * q..base + (k + 1) * q]
    }

    /// Unpacks a decision vector into a [`Trajectory`].
    pub fn trajectory(&self, v: &[f64]) -> Result<Trajectory, CollocationError> {
        if v.len() != self.n_vars() {
            return Err(CollocationError::Shape(format!(
                "decision vector length {} != {}",
                v.len(),
                self.n_vars()
            )));
        }
        let p = self.spec.state_dim();
        let q = self.spec.control_dim();
        let states =
            Array2::from_shape_vec((self.l_t, p), v[..self.l_t * p].to_vec()).expect("shape");
        let controls = Array2::from_shape_vec(
            (self.l_t, q),
            v[self.l_t * p..self.l_t * (p + q)].to_vec(),
        )
        .expect("shape");
        Trajectory::new(states, controls, v[self.idx_t()])
    }

    /// Packs a trajectory into a decision vector (inverse of
    /// [`CollocatedNlp::trajectory`]).
    pub fn decision_vector(&self, traj: &Trajectory) -> Result<Vec<f64>, CollocationError> {
        if traj.nodes() != self.l_t
            || traj.state_dim() != self.spec.state_dim()
            || traj.control_dim() != self.spec.control_dim()
        {
            return Err(CollocationError::Shape(format!(
                "trajectory ({} nodes, p={}, q={}) does not fit instance ({} nodes, p={}, q={})",
                traj.nodes(),
                traj.state_dim(),
                traj.control_dim(),
                self.l_t,
                self.spec.state_dim(),
                self.spec.control_dim()
            )));
        }
        let mut v = Vec::with_capacity(self.n_vars());
        v.extend(traj.states.iter().copied());
        v.extend(traj.controls.iter().copied());
        v.push(traj.duration);
        Ok(v)
    }

    /// The system's initial guesses as decision vectors, projected into the
    /// variable box and carrying the pinned/nominal duration.
    pub fn warm_start_vectors(&self) -> Vec<Vec<f64>> {
        let duration = self.spec.nominal_duration(&self.task);
        self.spec
            .model()
            .warm_starts(&self.task, self.l_t, duration)
            .into_iter()
            .map(|(states, controls)| {
                let mut v = states;
                v.extend(controls);
                v.push(duration);
                for (vi, (lo, hi)) in v.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
                    *vi = vi.clamp(*lo, *hi);
                }
                v
            })
            .collect()
    }

    /// Consensus view `[X…, γ·T]` of a decision vector.
    pub fn consensus_of(&self, v: &[f64], gamma: f64) -> Vec<f64> {
        let p = self.spec.state_dim();
        let mut out = Vec::with_capacity(consensus_len(self.l_t, p));
        out.extend_from_slice(&v[..self.l_t * p]);
        out.push(gamma * v[self.idx_t()]);
        out
    }
}

/// Runs one solve per system-provided warm start and keeps the best report:
/// a converged one beats a non-converged one, ties break on lower objective.
/// Multi-start matters on tasks whose solution map has several basins.
pub fn solve_from_system_starts(
    nlp: &CollocatedNlp,
    cfg: &crate::nlp_solver::SolverConfig,
) -> Result<crate::nlp_solver::SolveReport, crate::nlp_solver::NlpSolverError> {
    use crate::nlp_solver::SolveStatus;
    let mut best: Option<crate::nlp_solver::SolveReport> = None;
    for warm in nlp.warm_start_vectors() {
        let report = crate::nlp_solver::solve(nlp, Some(&warm), cfg)?;
        let better = match &best {
            None => true,
            Some(b) => {
                let b_ok = b.status == SolveStatus::Converged;
                let r_ok = report.status == SolveStatus::Converged;
                (r_ok && !b_ok) || (r_ok == b_ok && report.objective < b.objective)
            }
        };
        if better {
            best = Some(report);
        }
    }
    match best {
        Some(report) => Ok(report),
        // Systems always provide at least one start, but don't panic if not.
        None => crate::nlp_solver::solve(nlp, None, cfg),
    }
}

impl NlpProblem for CollocatedNlp {
    fn n_vars(&self) -> usize {
        self.l_t * (self.spec.state_dim() + self.spec.control_dim()) + 1
    }

    fn n_eq(&self) -> usize {
        self.n_eq
    }

    fn n_ineq(&self) -> usize {
        self.n_ineq
    }

    fn lower(&self) -> &[f64] {
        &self.lower
    }

    fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn variable_scaling(&self) -> Option<Vec<f64>> {
        // The normalized defect rows differentiate to ~1/h against the state
        // columns but O(1) against the control columns, so unscaled problems
        // carry a mesh-dependent condition number. Scaling states (and the
        // duration slot) by the nominal mesh width h rebalances the columns.
        // A proximal tie adds `rho` of curvature to every state slot (and
        // `rho * gamma^2` to the duration slot), which dominates once the tie
        // is stiff, so the scale is capped at the inverse square root of that
        // curvature to keep the scaled diagonal near unity.
        let p = self.spec.state_dim();
        let h = self.spec.nominal_duration(&self.task) / (self.l_t - 1) as f64;
        let (state_scale, duration_scale) = match &self.prox {
            Some(prox) if prox.rho > 0.0 => (
                h.min(prox.rho.sqrt().recip()),
                h.min((prox.gamma.abs().max(1.0) * prox.rho.sqrt()).recip()),
            ),
            _ => (h, h),
        };
        let mut s = vec![1.0; self.n_vars()];
        for k in 0..self.l_t {
            for j in 0..p {
                s[self.idx_x(k, j)] = state_scale;
            }
        }
        s[self.idx_t()] = duration_scale;
        Some(s)
    }

    fn objective(&self, v: &[f64]) -> f64 {
        let duration = v[self.idx_t()];
        let model = self.spec.model();
        let mut acc = 0.0;
        for k in 0..self.l_t {
            acc += self.weights[k]
                * model.running_cost(self.state_slice(v, k), self.control_slice(v, k), duration);
        }
        let mut total = duration * acc;
        if let Some(prox) = &self.prox {
            let p = self.spec.state_dim();
            let mut quad = 0.0;
            for (slot, x) in v[..self.l_t * p].iter().enumerate() {
                let r = x - prox.target[slot] + prox.multiplier[slot];
                quad += r * r;
            }
            let last = consensus_len(self.l_t, p) - 1;
            let r = prox.gamma * duration - prox.target[last] + prox.multiplier[last];
            quad += r * r;
            total += 0.5 * prox.rho * quad;
        }
        total
    }

    fn objective_grad(&self, v: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        let duration = v[self.idx_t()];
        let p = self.spec.state_dim();
        let q = self.spec.control_dim();
        let model = self.spec.model();
        let mut gx = vec![0.0; p];
        let mut gu = vec![0.0; q];
        let mut cost_acc = 0.0;
        let mut dt_acc = 0.0;
        for k in 0..self.l_t {
            let x = self.state_slice(v, k);
            let u = self.control_slice(v, k);
            let w = self.weights[k];
            let dl_dt = model.running_cost_gradient(x, u, duration, &mut gx, &mut gu);
            cost_acc += w * model.running_cost(x, u, duration);
            dt_acc += w * dl_dt;
            for i in 0..p {
                grad[self.idx_x(k, i)] = duration * w * gx[i];
            }
            for j in 0..q {
                grad[self.idx_u(k, j)] = duration * w * gu[j];
            }
        }
        grad[self.idx_t()] = cost_acc + duration * dt_acc;

        if let Some(prox) = &self.prox {
            for (slot, x) in v[..self.l_t * p].iter().enumerate() {
                grad[slot] += prox.rho * (x - prox.target[slot] + prox.multiplier[slot]);
            }
            let last = consensus_len(self.l_t, p) - 1;
            let r = prox.gamma * duration - prox.target[last] + prox.multiplier[last];
            grad[self.idx_t()] += prox.rho * prox.gamma * r;
        }
    }

    fn eq_residuals(&self, v: &[f64], out: &mut [f64]) {
        let duration = v[self.idx_t()];
        let p = self.spec.state_dim();
        let model = self.spec.model();
        let h = duration / (self.l_t - 1) as f64;
        let mut f_prev = vec![0.0; p];
        let mut f_next = vec![0.0; p];
        model.dynamics(self.state_slice(v, 0), self.control_slice(v, 0), &mut f_prev);
        for k in 0..self.l_t - 1 {
            model.dynamics(
                self.state_slice(v, k + 1),
                self.control_slice(v, k + 1),
                &mut f_next,
            );
            let xk = self.state_slice(v, k);
            let xk1 = self.state_slice(v, k + 1);
            for i in 0..p {
                out[k * p + i] = (xk1[i] - xk[i]) / h - 0.5 * (f_prev[i] + f_next[i]);
            }
            std::mem::swap(&mut f_prev, &mut f_next);
        }
        let base = (self.l_t - 1) * p;
        model.terminal(
            &self.task,
            self.state_slice(v, 0),
            self.control_slice(v, 0),
            self.state_slice(v, self.l_t - 1),
            self.control_slice(v, self.l_t - 1),
            duration,
            &mut out[base..base + model.n_terminal()],
        );
    }

    fn ineq_residuals(&self, v: &[f64], out: &mut [f64]) {
        let n_pi = self.spec.model().n_path_ineq();
        if n_pi == 0 {
            return;
        }
        for k in 0..self.l_t {
            self.spec.model().path_ineq(
                &self.task,
                self.state_slice(v, k),
                self.control_slice(v, k),
                self.fractions[k],
                &mut out[k * n_pi..(k + 1) * n_pi],
            );
        }
    }

    fn eq_jac_tvec(&self, v: &[f64], y: &[f64], acc: &mut [f64]) {
        let duration = v[self.idx_t()];
        let p = self.spec.state_dim();
        let q = self.spec.control_dim();
        let model = self.spec.model();
        let h = duration / (self.l_t - 1) as f64;
        let inv_h = 1.0 / h;

        // Per-node dynamics Jacobians, computed once.
        let mut jx_nodes = vec![0.0; self.l_t * p * p];
        let mut ju_nodes = vec![0.0; self.l_t * p * q];
        for k in 0..self.l_t {
            model.dynamics_jacobian(
                self.state_slice(v, k),
                self.control_slice(v, k),
                &mut jx_nodes[k * p * p..(k + 1) * p * p],
                &mut ju_nodes[k * p * q..(k + 1) * p * q],
            );
        }

        let mut dt_acc = 0.0;
        for k in 0..self.l_t - 1 {
            let y_blk = &y[k * p..(k + 1) * p];
            let jx_l = &jx_nodes[k * p * p..(k + 1) * p * p];
            let jx_r = &jx_nodes[(k + 1) * p * p..(k + 2) * p * p];
            let ju_l = &ju_nodes[k * p * q..(k + 1) * p * q];
            let ju_r = &ju_nodes[(k + 1) * p * q..(k + 2) * p * q];
            for i in 0..p {
                let yi = y_blk[i];
                if yi == 0.0 {
                    continue;
                }
                let xl = v[self.idx_x(k, i)];
                let xr = v[self.idx_x(k + 1, i)];
                acc[self.idx_x(k, i)] -= inv_h * yi;
                acc[self.idx_x(k + 1, i)] += inv_h * yi;
                // d/dT of (Δx)/h = −(Δx/h)/T.
                dt_acc -= (xr - xl) * inv_h / duration * yi;
                for c in 0..p {
                    acc[self.idx_x(k, c)] -= 0.5 * jx_l[i * p + c] * yi;
                    acc[self.idx_x(k + 1, c)] -= 0.5 * jx_r[i * p + c] * yi;
                }
                for c in 0..q {
                    acc[self.idx_u(k, c)] -= 0.5 * ju_l[i * q + c] * yi;
                    acc[self.idx_u(k + 1, c)] -= 0.5 * ju_r[i * q + c] * yi;
                }
            }
        }
        acc[self.idx_t()] += dt_acc;

        // Boundary rows.
        let n_term = model.n_terminal();
        if n_term > 0 {
            let y_term = &y[(self.l_t - 1) * p..(self.l_t - 1) * p + n_term];
            let mut jx0 = vec![0.0; n_term * p];
            let mut ju0 = vec![0.0; n_term * q];
            let mut jxt = vec![0.0; n_term * p];
            let mut jut = vec![0.0; n_term * q];
            let mut jt = vec![0.0; n_term];
            model.terminal_jacobian(
                &self.task,
                self.state_slice(v, 0),
                self.control_slice(v, 0),
                self.state_slice(v, self.l_t - 1),
                self.control_slice(v, self.l_t - 1),
                duration,
                &mut jx0,
                &mut ju0,
                &mut jxt,
                &mut jut,
                &mut jt,
            );
            for r in 0..n_term {
                let yr = y_term[r];
                if yr == 0.0 {
                    continue;
                }
                for c in 0..p {
                    acc[self.idx_x(0, c)] += jx0[r * p + c] * yr;
                    acc[self.idx_x(self.l_t - 1, c)] += jxt[r * p + c] * yr;
                }
                for c in 0..q {
                    acc[self.idx_u(0, c)] += ju0[r * q + c] * yr;
                    acc[self.idx_u(self.l_t - 1, c)] += jut[r * q + c] * yr;
                }
                acc[self.idx_t()] += jt[r] * yr;
            }
        }
    }

    fn ineq_jac_tvec(&self, v: &[f64], y: &[f64], acc: &mut [f64]) {
        let n_pi = self.spec.model().n_path_ineq();
        if n_pi == 0 {
            return;
        }
        let p = self.spec.state_dim();
        let q = self.spec.control_dim();
        let mut jx = vec![0.0; n_pi * p];
        let mut ju = vec![0.0; n_pi * q];
        for k in 0..self.l_t {
            self.spec.model().path_ineq_jacobian(
                &self.task,
                self.state_slice(v, k),
                self.control_slice(v, k),
                self.fractions[k],
                &mut jx,
                &mut ju,
            );
            for r in 0..n_pi {
                let yr = y[k * n_pi + r];
                if yr == 0.0 {
                    continue;
                }
                for c in 0..p {
                    acc[self.idx_x(k, c)] += jx[r * p + c] * yr;
                }
                for c in 0..q {
                    acc[self.idx_u(k, c)] += ju[r * q + c] * yr;
                }
            }
        }
    }
}

/// Derivative-normalized trapezoidal defects of a trajectory under a
/// system's dynamics: for each interval `k` and state row `i`,
/// `(x_{k+1,i} − x_{k,i})/h − (f_i(x_k,u_k) + f_i(x_{k+1},u_{k+1}))/2`.
/// Length `(L_T − 1)·p`; an exact solution sampled on the grid drives these
/// to O(h²).
pub fn defect_residuals(
    traj: &Trajectory,
    spec: &SystemSpec,
) -> Result<Vec<f64>, CollocationError> {
    if traj.state_dim() != spec.state_dim() || traj.control_dim() != spec.control_dim() {
        return Err(CollocationError::Shape(format!(
            "trajectory dims (p={}, q={}) do not match system (p={}, q={})",
            traj.state_dim(),
            traj.control_dim(),
            spec.state_dim(),
            spec.control_dim()
        )));
    }
    let l_t = traj.nodes();
    let p = traj.state_dim();
    let h = traj.duration / (l_t - 1) as f64;
    let model = spec.model();
    let mut out = vec![0.0; (l_t - 1) * p];
    let mut f_prev = vec![0.0; p];
    let mut f_next = vec![0.0; p];
    let x = traj.states.as_slice().expect("row-major states");
    let u = traj.controls.as_slice().expect("row-major controls");
    let q = traj.control_dim();
    model.dynamics(&x[..p], &u[..q], &mut f_prev);
    for k in 0..l_t - 1 {
        model.dynamics(
            &x[(k + 1) * p..(k + 2) * p],
            &u[(k + 1) * q..(k + 2) * q],
            &mut f_next,
        );
        for i in 0..p {
            out[k * p + i] =
                (x[(k + 1) * p + i] - x[k * p + i]) / h - 0.5 * (f_prev[i] + f_next[i]);
        }
        std::mem::swap(&mut f_prev, &mut f_next);
    }
    Ok(out)
}

/// Samples the closed-form double-integrator optimum onto an `l_t`-node grid.
/// Shared by tests and benchmark drivers.
pub fn sample_oracle(
    oracle: &crate::systems::OracleSolution,
    l_t: usize,
) -> Result<Trajectory, CollocationError> {
    if l_t < 2 {
        return Err(CollocationError::TooFewNodes(l_t));
    }
    let mut states = Array2::zeros((l_t, 2));
    let mut controls = Array2::zeros((l_t, 1));
    for k in 0..l_t {
        let t = oracle.duration * k as f64 / (l_t - 1) as f64;
        let s = oracle.state(t);
        states[[k, 0]] = s[0];
        states[[k, 1]] = s[1];
        controls[[k, 0]] = oracle.control(t);
    }
    Trajectory::new(states, controls, oracle.duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{double_integrator, double_integrator_oracle, obstacle_family, pendulum};
    use crate::taskspace::TaskSpace;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn di_spec() -> (crate::systems::SystemSpec, TaskSpace) {
        let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
        (double_integrator(&space, Some(1.0)).unwrap(), space)
    }

    fn di_free_spec() -> (crate::systems::SystemSpec, TaskSpace) {
        let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
        (double_integrator(&space, None).unwrap(), space)
    }

    #[test]
    fn variable_count_small_example() {
        // L_T = 2, p = 2, q = 1 → 2·3 + 1 = 7 decision variables.
        let (spec, space) = di_spec();
        let task = space.task(vec![1.0]).unwrap();
        let nlp = transcribe(&spec, &task, 2, None).unwrap();
        assert_eq!(nlp.n_vars(), 7);
        assert_eq!(nlp.lower().len(), 7);
        assert_eq!(nlp.upper().len(), 7);
        // (2−1)·2 defects + 4 boundary rows.
        assert_eq!(nlp.n_eq(), 6);
        assert_eq!(nlp.n_ineq(), 0);
    }

    #[test]
    fn pinned_duration_collapses_its_box() {
        let (spec, space) = di_spec();
        let task = space.task(vec![1.0]).unwrap();
        let nlp = transcribe(&spec, &task, 8, None).unwrap();
        let t_idx = nlp.n_vars() - 1;
        assert_eq!(nlp.lower()[t_idx], 1.0);
        assert_eq!(nlp.upper()[t_idx], 1.0);
        let (free, _) = di_free_spec();
        let nlp_free = transcribe(&free, &task, 8, None).unwrap();
        assert!(nlp_free.lower()[t_idx] < nlp_free.upper()[t_idx]);
    }

    #[test]
    fn oracle_defects_shrink_quadratically() {
        // The sampled closed-form optimum has O(h²) defects: small at
        // L_T = 50 and shrinking by ~4× when the grid doubles.
        let (spec, _space) = di_spec();
        let oracle = double_integrator_oracle(1.0, 1.0).unwrap();
        let coarse = sample_oracle(&oracle, 50).unwrap();
        let fine = sample_oracle(&oracle, 100).unwrap();
        let max_abs = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let d_coarse = max_abs(&defect_residuals(&coarse, &spec).unwrap());
        let d_fine = max_abs(&defect_residuals(&fine, &spec).unwrap());
        assert!(d_coarse < 1e-3, "coarse defect {d_coarse}");
        let ratio = d_fine / d_coarse;
        assert!(
            (0.15..0.4).contains(&ratio),
            "doubling factor {ratio} (coarse {d_coarse}, fine {d_fine})"
        );
    }

    #[test]
    fn equality_residuals_vanish_at_the_oracle() {
        let (spec, space) = di_spec();
        let task = space.task(vec![1.0]).unwrap();
        let nlp = transcribe(&spec, &task, 50, None).unwrap();
        let oracle = double_integrator_oracle(1.0, 1.0).unwrap();
        let v = nlp
            .decision_vector(&sample_oracle(&oracle, 50).unwrap())
            .unwrap();
        let mut res = vec![f64::NAN; nlp.n_eq()];
        nlp.eq_residuals(&v, &mut res);
        let defects = &res[..(50 - 1) * 2];
        assert!(defects.iter().all(|d| d.abs() < 1e-3));
        let terminal = &res[(50 - 1) * 2..];
        for r in terminal {
            assert_relative_eq!(*r, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn proximal_term_is_exactly_additive() {
        let (spec, space) = di_spec();
        let task = space.task(vec![1.2]).unwrap();
        let l_t = 9;
        let plain = transcribe(&spec, &task, l_t, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_slots = consensus_len(l_t, 2);
        let prox = ProximalTerm {
            target: (0..n_slots).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            multiplier: (0..n_slots).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            rho: 3.7,
            gamma: 1.3,
        };
        let tied = transcribe(&spec, &task, l_t, Some(prox.clone())).unwrap();
        for _ in 0..25 {
            let v: Vec<f64> = (0..plain.n_vars())
                .map(|i| {
                    let lo = plain.lower()[i].max(-2.0);
                    let hi = plain.upper()[i].min(2.0);
                    if lo < hi {
                        rng.gen_range(lo..hi)
                    } else {
                        plain.lower()[i]
                    }
                })
                .collect();
            let c = tied.consensus_of(&v, prox.gamma);
            let quad: f64 = c
                .iter()
                .zip(prox.target.iter().zip(&prox.multiplier))
                .map(|(ci, (zi, li))| (ci - zi + li) * (ci - zi + li))
                .sum();
            let expected = plain.objective(&v) + 0.5 * prox.rho * quad;
            assert_relative_eq!(tied.objective(&v), expected, max_relative = 1e-14);
        }
    }

    /// Central-difference check of `objective_grad` and both `*_jac_tvec`
    /// products at random interior points. Coordinates with degenerate
    /// bounds (pinned duration) carry no meaningful derivative and are
    /// skipped.
    fn finite_difference_check(nlp: &CollocatedNlp, probes: usize, seed: u64, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = nlp.n_vars();
        let eps = 1e-6;
        for _ in 0..probes {
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = nlp.lower()[i].max(-3.0);
                    let hi = nlp.upper()[i].min(3.0);
                    if lo < hi {
                        rng.gen_range(lo..hi)
                    } else {
                        lo
                    }
                })
                .collect();

            // Objective gradient.
            let mut grad = vec![0.0; n];
            nlp.objective_grad(&v, &mut grad);
            for c in 0..n {
                if nlp.lower()[c] == nlp.upper()[c] {
                    continue;
                }
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[c] += eps;
                vm[c] -= eps;
                let fd = (nlp.objective(&vp) - nlp.objective(&vm)) / (2.0 * eps);
                let scale = grad[c].abs().max(fd.abs()).max(1.0);
                assert!(
                    (grad[c] - fd).abs() <= tol * scale,
                    "objective grad[{c}]: analytic {} vs fd {fd}",
                    grad[c]
                );
            }

            // Transposed Jacobian products against dense FD Jacobians.
            type TVec<'a> = &'a dyn Fn(&[f64], &[f64], &mut [f64]);
            let check_jac = |n_res: usize,
                             eval: &dyn Fn(&[f64], &mut [f64]),
                             tvec: TVec,
                             rng: &mut ChaCha8Rng| {
                if n_res == 0 {
                    return;
                }
                let y: Vec<f64> = (0..n_res).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut analytic = vec![0.0; n];
                tvec(&v, &y, &mut analytic);
                let mut rp = vec![0.0; n_res];
                let mut rm = vec![0.0; n_res];
                for c in 0..n {
                    if nlp.lower()[c] == nlp.upper()[c] {
                        continue;
                    }
                    let mut vp = v.clone();
                    let mut vm = v.clone();
                    vp[c] += eps;
                    vm[c] -= eps;
                    eval(&vp, &mut rp);
                    eval(&vm, &mut rm);
                    let fd: f64 = (0..n_res)
                        .map(|r| y[r] * (rp[r] - rm[r]) / (2.0 * eps))
                        .sum();
                    let scale = analytic[c].abs().max(fd.abs()).max(1.0);
                    assert!(
                        (analytic[c] - fd).abs() <= tol * scale,
                        "jac_tvec[{c}]: analytic {} vs fd {fd}",
                        analytic[c]
                    );
                }
            };
            check_jac(
                nlp.n_eq(),
                &|v, out| nlp.eq_residuals(v, out),
                &|v, y, acc| nlp.eq_jac_tvec(v, y, acc),
                &mut rng,
            );
            check_jac(
                nlp.n_ineq(),
                &|v, out| nlp.ineq_residuals(v, out),
                &|v, y, acc| nlp.ineq_jac_tvec(v, y, acc),
                &mut rng,
            );
        }
    }

    #[test]
    fn derivatives_match_finite_differences_free_duration() {
        let (spec, space) = di_free_spec();
        let task = space.task(vec![1.4]).unwrap();
        let nlp = transcribe(&spec, &task, 8, None).unwrap();
        finite_difference_check(&nlp, 5, 101, 1e-5);
    }

    #[test]
    fn derivatives_match_finite_differences_with_prox_and_obstacle() {
        let space = TaskSpace::new(vec![-1.0], vec![1.0]).unwrap();
        let spec = obstacle_family(&space).unwrap();
        let task = space.task(vec![0.6]).unwrap();
        let l_t = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n_slots = consensus_len(l_t, 2);
        let prox = ProximalTerm {
            target: (0..n_slots).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            multiplier: (0..n_slots).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            rho: 5.0,
            gamma: 1.0,
        };
        let nlp = transcribe(&spec, &task, l_t, Some(prox)).unwrap();
        finite_difference_check(&nlp, 5, 103, 1e-5);
    }

    #[test]
    fn derivatives_match_finite_differences_pendulum() {
        let space = TaskSpace::new(vec![-1.5, 0.5], vec![1.5, 2.0]).unwrap();
        let spec = pendulum(&space, 1.3, 0.9).unwrap();
        let task = space.task(vec![0.8, 1.1]).unwrap();
        let nlp = transcribe(&spec, &task, 8, None).unwrap();
        finite_difference_check(&nlp, 5, 107, 1e-5);
    }

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let (spec, space) = di_free_spec();
        let task = space.task(vec![0.9]).unwrap();
        let nlp = transcribe(&spec, &task, 12, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let v: Vec<f64> = (0..nlp.n_vars() - 1)
            .map(|_| rng.gen_range(-2.0..2.0))
            .chain(std::iter::once(1.7))
            .collect();
        let traj = nlp.trajectory(&v).unwrap();
        assert_eq!(nlp.decision_vector(&traj).unwrap(), v);
        assert_eq!(traj.nodes(), 12);
        assert_relative_eq!(traj.node_time(11), 1.7);
        assert_relative_eq!(traj.node_time(0), 0.0);
    }

    #[test]
    fn consensus_layout_scales_duration() {
        let (spec, space) = di_spec();
        let task = space.task(vec![1.0]).unwrap();
        let nlp = transcribe(&spec, &task, 4, None).unwrap();
        let v: Vec<f64> = (0..nlp.n_vars()).map(|i| i as f64).collect();
        let c = nlp.consensus_of(&v, 2.5);
        assert_eq!(c.len(), consensus_len(4, 2));
        assert_eq!(&c[..8], &v[..8]);
        assert_relative_eq!(c[8], 2.5 * v[nlp.n_vars() - 1]);
        let traj = nlp.trajectory(&v).unwrap();
        assert_eq!(consensus_vector(&traj, 2.5), c);
    }

    #[test]
    fn warm_starts_respect_bounds_and_count_basins() {
        let (spec, space) = di_spec();
        let task = space.task(vec![1.5]).unwrap();
        let nlp = transcribe(&spec, &task, 20, None).unwrap();
        let starts = nlp.warm_start_vectors();
        assert_eq!(starts.len(), 1);
        let ob_space = TaskSpace::new(vec![-1.0], vec![1.0]).unwrap();
        let ob = obstacle_family(&ob_space).unwrap();
        let ob_nlp = transcribe(&ob, &ob_space.task(vec![0.2]).unwrap(), 20, None).unwrap();
        let ob_starts = ob_nlp.warm_start_vectors();
        assert_eq!(ob_starts.len(), 2);
        for v in starts.iter().chain(&ob_starts) {
            assert_eq!(v.len(), 20 * 3 + 1);
            for (vi, lo) in v.iter().zip(nlp.lower()) {
                assert!(*vi >= lo - 1e-12);
            }
        }
    }

    #[test]
    fn validation_errors() {
        let (spec, space) = di_spec();
        let task = space.task(vec![1.0]).unwrap();
        assert!(matches!(
            transcribe(&spec, &task, 1, None),
            Err(CollocationError::TooFewNodes(1))
        ));
        // Wrong task dimensionality for the system.
        let space2 = TaskSpace::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let task2 = space2.task(vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            transcribe(&spec, &task2, 8, None),
            Err(CollocationError::TaskDims { .. })
        ));
        // Proximal term length/parameter validation.
        let bad_len = ProximalTerm::tracking(vec![0.0; 3], 1.0, 1.0);
        assert!(matches!(
            transcribe(&spec, &task, 8, Some(bad_len)),
            Err(CollocationError::BadProximal(_))
        ));
        let bad_rho = ProximalTerm::tracking(vec![0.0; consensus_len(8, 2)], -1.0, 1.0);
        assert!(matches!(
            transcribe(&spec, &task, 8, Some(bad_rho)),
            Err(CollocationError::BadProximal(_))
        ));
        let bad_gamma = ProximalTerm::tracking(vec![0.0; consensus_len(8, 2)], 1.0, 0.0);
        assert!(matches!(
            transcribe(&spec, &task, 8, Some(bad_gamma)),
            Err(CollocationError::BadProximal(_))
        ));
        // Trajectory constructor validation.
        assert!(Trajectory::new(Array2::zeros((3, 2)), Array2::zeros((4, 1)), 1.0).is_err());
        assert!(Trajectory::new(Array2::zeros((1, 2)), Array2::zeros((1, 1)), 1.0).is_err());
        assert!(Trajectory::new(Array2::zeros((3, 2)), Array2::zeros((3, 1)), 0.0).is_err());
        assert!(Trajectory::new(Array2::zeros((3, 2)), Array2::zeros((3, 1)), f64::NAN).is_err());
    }
}

//! Benchmark dynamical systems: continuous-time models, running costs,
//! boundary conditions, and path constraints, each with analytic Jacobians.
//!
//! A [`SystemSpec`] bundles a [`SystemModel`] with its decision-variable
//! boxes (state, control, duration). The task vector parameterizes the
//! instance: goal coordinates, desired duration, obstacle placement. Three
//! systems are built in:
//!
//! - **double integrator** — point mass with force control and quadratic
//!   effort cost; its optimum is the classic minimum-energy cubic, available
//!   in closed form through [`double_integrator_oracle`].
//! - **pendulum** — torque-driven rigid pendulum with gravity; reduces to the
//!   double integrator when the gravity torque is zero.
//! - **obstacle family** — double integrator that must return to the origin
//!   while clearing a time-windowed obstacle whose side flips with the sign
//!   of the task parameter, so the task→solution map is discontinuous at 0.

use crate::taskspace::TaskSpace;
use std::sync::Arc;

/// Errors from system construction and task validation.
#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("unknown system '{0}'")]
    UnknownSystem(String),
    #[error("system '{name}' expects {expected}-dimensional tasks, task space has {got}")]
    TaskDimension {
        name: &'static str,
        expected: &'static str,
        got: usize,
    },
    #[error("invalid system parameter: {0}")]
    InvalidParameter(String),
}

/// Continuous-time model: dynamics `ẋ = f(x, u)`, running cost `l(x, u, T)`,
/// terminal residuals `h(τ, x₀, u₀, x_T, u_T, T) = 0`, and per-node path
/// inequalities `g(τ, x, u, s) ≤ 0` where `s ∈ [0, 1]` is the normalized
/// node position along the horizon.
///
/// All Jacobians are row-major and analytic; the test suite checks each one
/// against central finite differences.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Number of task coordinates the model reads.
    fn task_dims(&self) -> usize;

    /// `out = f(x, u)`, length `state_dim`.
    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]);

    /// `jx = ∂f/∂x` (p×p), `ju = ∂f/∂u` (p×q), row-major.
    fn dynamics_jacobian(&self, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]);

    /// Running cost integrand `l(x, u, T)`.
    fn running_cost(&self, x: &[f64], u: &[f64], duration: f64) -> f64;

    /// Fills `∂l/∂x` and `∂l/∂u`; returns `∂l/∂T`.
    fn running_cost_gradient(
        &self,
        x: &[f64],
        u: &[f64],
        duration: f64,
        gx: &mut [f64],
        gu: &mut [f64],
    ) -> f64;

    /// Number of terminal equality residuals.
    fn n_terminal(&self) -> usize;

    /// Terminal residuals, length `n_terminal`. The full boundary context —
    /// both endpoint states and controls plus the duration — is part of the
    /// contract, hence the wide signature.
    #[allow(clippy::too_many_arguments)]
    fn terminal(
        &self,
        task: &[f64],
        x_first: &[f64],
        u_first: &[f64],
        x_last: &[f64],
        u_last: &[f64],
        duration: f64,
        out: &mut [f64],
    );

    /// Terminal Jacobian blocks, row-major: `jx_first`/`jx_last` are
    /// `n_terminal×p`, `ju_first`/`ju_last` are `n_terminal×q`, `jt` is the
    /// per-residual derivative in the duration.
    #[allow(clippy::too_many_arguments)]
    fn terminal_jacobian(
        &self,
        task: &[f64],
        x_first: &[f64],
        u_first: &[f64],
        x_last: &[f64],
        u_last: &[f64],
        duration: f64,
        jx_first: &mut [f64],
        ju_first: &mut [f64],
        jx_last: &mut [f64],
        ju_last: &mut [f64],
        jt: &mut [f64],
    );

    /// Number of path-inequality residuals per node (constant across nodes
    /// and evaluations; inactive constraints return a strictly negative
    /// constant rather than disappearing).
    fn n_path_ineq(&self) -> usize {
        0
    }

    /// Path residuals `g(τ, x, u, s) ≤ 0` at normalized node position
    /// `s ∈ [0, 1]`. Length `n_path_ineq`.
    fn path_ineq(&self, _task: &[f64], _x: &[f64], _u: &[f64], _s: f64, _out: &mut [f64]) {}

    /// Path Jacobians wrt state (n×p) and control (n×q) at node position `s`.
    /// Node positions are fixed fractions of the horizon, so no duration
    /// derivative arises.
    fn path_ineq_jacobian(
        &self,
        _task: &[f64],
        _x: &[f64],
        _u: &[f64],
        _s: f64,
        _jx: &mut [f64],
        _ju: &mut [f64],
    ) {
    }

    /// Duration pinned by the task or the system, if any. `None` leaves the
    /// duration a free decision variable inside its box.
    fn pinned_duration(&self, task: &[f64]) -> Option<f64>;

    /// Indices of dynamics rows that do not depend on the control (the
    /// kinematic rows). Used when constraint violations must be evaluated
    /// over the best possible control choice.
    fn unactuated_rows(&self) -> Vec<usize>;

    /// Initial guesses for the solver, as row-major `(states, controls)`
    /// buffers of shape `(l_t × p, l_t × q)` over `l_t` nodes with the given
    /// duration. Systems whose solution map has several basins return one
    /// guess per basin.
    fn warm_starts(&self, task: &[f64], l_t: usize, duration: f64) -> Vec<(Vec<f64>, Vec<f64>)>;
}

/// A system together with its decision boxes and its task space.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    state_lower: Vec<f64>,
    state_upper: Vec<f64>,
    control_lower: Vec<f64>,
    control_upper: Vec<f64>,
    duration_range: (f64, f64),
    model: Arc<dyn SystemModel>,
}

impl std::fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("control_dim", &self.control_dim())
            .field("duration_range", &self.duration_range)
            .finish()
    }
}

impl SystemSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn task_dims(&self) -> usize {
        self.model.task_dims()
    }

    pub fn state_lower(&self) -> &[f64] {
        &self.state_lower
    }

    pub fn state_upper(&self) -> &[f64] {
        &self.state_upper
    }

    pub fn control_lower(&self) -> &[f64] {
        &self.control_lower
    }

    pub fn control_upper(&self) -> &[f64] {
        &self.control_upper
    }

    /// Box for the free duration variable. When the duration is pinned the
    /// transcription collapses this to a degenerate interval.
    pub fn duration_range(&self) -> (f64, f64) {
        self.duration_range
    }

    pub fn model(&self) -> &dyn SystemModel {
        self.model.as_ref()
    }

    /// Duration to transcribe with: the pinned value when the task or system
    /// fixes one, otherwise `None` (free within [`Self::duration_range`]).
    pub fn pinned_duration(&self, task: &[f64]) -> Option<f64> {
        self.model.pinned_duration(task)
    }

    /// A representative duration for warm starts and scaling: the pinned
    /// value if any, otherwise the midpoint of the duration box.
    pub fn nominal_duration(&self, task: &[f64]) -> f64 {
        self.pinned_duration(task)
            .unwrap_or(0.5 * (self.duration_range.0 + self.duration_range.1))
    }
}

/// Config-facing constants for the built-in systems.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SystemParams {
    /// Pendulum gravity torque coefficient (m·g·l).
    #[serde(default = "default_gravity_torque")]
    pub gravity_torque: f64,
    /// Pendulum rotational inertia.
    #[serde(default = "default_inertia")]
    pub inertia: f64,
    /// Fixed horizon duration for systems whose task does not carry one.
    #[serde(default)]
    pub duration: Option<f64>,
}

fn default_gravity_torque() -> f64 {
    1.0
}

fn default_inertia() -> f64 {
    1.0
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            gravity_torque: default_gravity_torque(),
            inertia: default_inertia(),
            duration: None,
        }
    }
}

/// Resolves a system by its config name. Unknown names are an error so the
/// CLI can map them to its dedicated exit code.
pub fn by_name(
    name: &str,
    task_space: &TaskSpace,
    params: &SystemParams,
) -> Result<SystemSpec, SystemError> {
    match name {
        "double_integrator" => double_integrator(task_space, params.duration),
        "pendulum" => pendulum(task_space, params.gravity_torque, params.inertia),
        "obstacle_family" => obstacle_family(task_space),
        other => Err(SystemError::UnknownSystem(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Double integrator
// ---------------------------------------------------------------------------

/// Point mass `ẍ = u` with effort cost `l = u²`, moved from rest at the
/// origin to rest at position `d = τ₁`. Tasks are either 1-D `(d)` — with the
/// duration free in its box, or pinned by `fixed_duration` — or 2-D
/// `(d, T_des)` with the duration pinned by the task.
pub fn double_integrator(
    task_space: &TaskSpace,
    fixed_duration: Option<f64>,
) -> Result<SystemSpec, SystemError> {
    let dims = task_space.dims();
    if dims != 1 && dims != 2 {
        return Err(SystemError::TaskDimension {
            name: "double_integrator",
            expected: "1 or 2",
            got: dims,
        });
    }
    if dims == 2 && fixed_duration.is_some() {
        return Err(SystemError::InvalidParameter(
            "double_integrator: duration is already supplied by the 2-D task; \
             remove the fixed duration parameter"
                .into(),
        ));
    }
    let duration_range = (0.2, 5.0);
    if let Some(t) = fixed_duration {
        if !(t >= duration_range.0 && t <= duration_range.1) {
            return Err(SystemError::InvalidParameter(format!(
                "double_integrator: fixed duration {t} outside [{}, {}]",
                duration_range.0, duration_range.1
            )));
        }
    }
    if dims == 2 {
        let (lo, hi) = (task_space.lower()[1], task_space.upper()[1]);
        if lo < duration_range.0 || hi > duration_range.1 {
            return Err(SystemError::InvalidParameter(format!(
                "double_integrator: task duration range [{lo}, {hi}] outside \
                 [{}, {}]",
                duration_range.0, duration_range.1
            )));
        }
    }
    let goal_hi = task_space.upper()[0].abs().max(task_space.lower()[0].abs());
    if goal_hi > 6.0 {
        return Err(SystemError::InvalidParameter(format!(
            "double_integrator: goal positions up to {goal_hi} exceed the position box ±6"
        )));
    }
    Ok(SystemSpec {
        name: "double_integrator".into(),
        state_lower: vec![-6.0, -12.0],
        state_upper: vec![6.0, 12.0],
        control_lower: vec![-60.0],
        control_upper: vec![60.0],
        duration_range,
        model: Arc::new(DoubleIntegrator {
            task_dims: dims,
            fixed_duration,
        }),
    })
}

struct DoubleIntegrator {
    task_dims: usize,
    fixed_duration: Option<f64>,
}

impl SystemModel for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn task_dims(&self) -> usize {
        self.task_dims
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = u[0];
    }

    fn dynamics_jacobian(&self, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx.fill(0.0);
        ju.fill(0.0);
        jx[1] = 1.0; // ∂f₁/∂x₂
        ju[1] = 1.0; // ∂f₂/∂u
    }

    fn running_cost(&self, _x: &[f64], u: &[f64], _duration: f64) -> f64 {
        u[0] * u[0]
    }

    fn running_cost_gradient(
        &self,
        _x: &[f64],
        u: &[f64],
        _duration: f64,
        gx: &mut [f64],
        gu: &mut [f64],
    ) -> f64 {
        gx.fill(0.0);
        gu[0] = 2.0 * u[0];
        0.0
    }

    fn n_terminal(&self) -> usize {
        4
    }

    fn terminal(
        &self,
        task: &[f64],
        x_first: &[f64],
        _u_first: &[f64],
        x_last: &[f64],
        _u_last: &[f64],
        _duration: f64,
        out: &mut [f64],
    ) {
        out[0] = x_first[0];
        out[1] = x_first[1];
        out[2] = x_last[0] - task[0];
        out[3] = x_last[1];
    }

    fn terminal_jacobian(
        &self,
        _task: &[f64],
        _x_first: &[f64],
        _u_first: &[f64],
        _x_last: &[f64],
        _u_last: &[f64],
        _duration: f64,
        jx_first: &mut [f64],
        ju_first: &mut [f64],
        jx_last: &mut [f64],
        ju_last: &mut [f64],
        jt: &mut [f64],
    ) {
        jx_first.fill(0.0);
        ju_first.fill(0.0);
        jx_last.fill(0.0);
        ju_last.fill(0.0);
        jt.fill(0.0);
        jx_first[0] = 1.0; // row 0 wrt x₁(0)
        jx_first[2 + 1] = 1.0; // row 1 wrt x₂(0)
        jx_last[2 * 2] = 1.0; // row 2 wrt x₁(T)
        jx_last[3 * 2 + 1] = 1.0; // row 3 wrt x₂(T)
    }

    fn pinned_duration(&self, task: &[f64]) -> Option<f64> {
        if self.task_dims == 2 {
            Some(task[1])
        } else {
            self.fixed_duration
        }
    }

    fn unactuated_rows(&self) -> Vec<usize> {
        vec![0]
    }

    fn warm_starts(&self, task: &[f64], l_t: usize, duration: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![line_to_goal(task[0], l_t, duration)]
    }
}

/// Straight-line state interpolation from rest at 0 to `goal` with constant
/// velocity and zero controls.
fn line_to_goal(goal: f64, l_t: usize, duration: f64) -> (Vec<f64>, Vec<f64>) {
    let mut states = vec![0.0; l_t * 2];
    let controls = vec![0.0; l_t];
    for k in 0..l_t {
        let s = k as f64 / (l_t - 1) as f64;
        states[k * 2] = goal * s;
        states[k * 2 + 1] = goal / duration;
    }
    (states, controls)
}

/// Closed-form minimum-effort rest-to-rest double-integrator solution for
/// goal `d` and horizon `T`: the cubic `x(t) = d(3s² − 2s³)`, `s = t/T`, with
/// control `u(t) = (6d/T²)(1 − 2s)` and cost `12 d²/T³`.
pub struct OracleSolution {
    pub goal: f64,
    pub duration: f64,
}

impl OracleSolution {
    /// `[position, velocity]` at time `t ∈ [0, T]`.
    pub fn state(&self, t: f64) -> [f64; 2] {
        let s = t / self.duration;
        [
            self.goal * (3.0 * s * s - 2.0 * s * s * s),
            6.0 * self.goal / self.duration * (s - s * s),
        ]
    }

    /// Control at time `t ∈ [0, T]`.
    pub fn control(&self, t: f64) -> f64 {
        let s = t / self.duration;
        6.0 * self.goal / (self.duration * self.duration) * (1.0 - 2.0 * s)
    }

    /// Total cost `∫₀ᵀ u(t)² dt = 12 d²/T³`.
    pub fn cost(&self) -> f64 {
        12.0 * self.goal * self.goal / self.duration.powi(3)
    }
}

pub fn double_integrator_oracle(goal: f64, duration: f64) -> Result<OracleSolution, SystemError> {
    if !(duration > 0.0) {
        return Err(SystemError::InvalidParameter(format!(
            "oracle duration must be positive, got {duration}"
        )));
    }
    Ok(OracleSolution { goal, duration })
}

// ---------------------------------------------------------------------------
// Pendulum
// ---------------------------------------------------------------------------

/// Torque-driven pendulum `I·θ̈ = u − c·sin θ`, effort cost `u²`, moved from
/// hanging rest to rest at the goal angle. Tasks are `(θ_goal, T_des)`; the
/// duration is pinned by the task. With `c = 0` and `I = 1` this is the
/// double integrator in the angle coordinate.
pub fn pendulum(
    task_space: &TaskSpace,
    gravity_torque: f64,
    inertia: f64,
) -> Result<SystemSpec, SystemError> {
    if task_space.dims() != 2 {
        return Err(SystemError::TaskDimension {
            name: "pendulum",
            expected: "2",
            got: task_space.dims(),
        });
    }
    if !(inertia > 0.0) || !inertia.is_finite() {
        return Err(SystemError::InvalidParameter(format!(
            "pendulum inertia must be positive, got {inertia}"
        )));
    }
    if !gravity_torque.is_finite() || gravity_torque < 0.0 {
        return Err(SystemError::InvalidParameter(format!(
            "pendulum gravity torque must be nonnegative, got {gravity_torque}"
        )));
    }
    let duration_range = (0.2, 10.0);
    let (lo, hi) = (task_space.lower()[1], task_space.upper()[1]);
    if lo < duration_range.0 || hi > duration_range.1 {
        return Err(SystemError::InvalidParameter(format!(
            "pendulum: task duration range [{lo}, {hi}] outside [{}, {}]",
            duration_range.0, duration_range.1
        )));
    }
    Ok(SystemSpec {
        name: "pendulum".into(),
        state_lower: vec![-2.0 * std::f64::consts::PI, -20.0],
        state_upper: vec![2.0 * std::f64::consts::PI, 20.0],
        control_lower: vec![-50.0],
        control_upper: vec![50.0],
        duration_range,
        model: Arc::new(Pendulum {
            gravity_torque,
            inertia,
        }),
    })
}

struct Pendulum {
    gravity_torque: f64,
    inertia: f64,
}

impl SystemModel for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn task_dims(&self) -> usize {
        2
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = (u[0] - self.gravity_torque * x[0].sin()) / self.inertia;
    }

    fn dynamics_jacobian(&self, x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx.fill(0.0);
        ju.fill(0.0);
        jx[1] = 1.0;
        jx[2] = -self.gravity_torque * x[0].cos() / self.inertia;
        ju[1] = 1.0 / self.inertia;
    }

    fn running_cost(&self, _x: &[f64], u: &[f64], _duration: f64) -> f64 {
        u[0] * u[0]
    }

    fn running_cost_gradient(
        &self,
        _x: &[f64],
        u: &[f64],
        _duration: f64,
        gx: &mut [f64],
        gu: &mut [f64],
    ) -> f64 {
        gx.fill(0.0);
        gu[0] = 2.0 * u[0];
        0.0
    }

    fn n_terminal(&self) -> usize {
        4
    }

    fn terminal(
        &self,
        task: &[f64],
        x_first: &[f64],
        _u_first: &[f64],
        x_last: &[f64],
        _u_last: &[f64],
        _duration: f64,
        out: &mut [f64],
    ) {
        out[0] = x_first[0];
        out[1] = x_first[1];
        out[2] = x_last[0] - task[0];
        out[3] = x_last[1];
    }

    fn terminal_jacobian(
        &self,
        _task: &[f64],
        _x_first: &[f64],
        _u_first: &[f64],
        _x_last: &[f64],
        _u_last: &[f64],
        _duration: f64,
        jx_first: &mut [f64],
        ju_first: &mut [f64],
        jx_last: &mut [f64],
        ju_last: &mut [f64],
        jt: &mut [f64],
    ) {
        jx_first.fill(0.0);
        ju_first.fill(0.0);
        jx_last.fill(0.0);
        ju_last.fill(0.0);
        jt.fill(0.0);
        jx_first[0] = 1.0;
        jx_first[2 + 1] = 1.0;
        jx_last[2 * 2] = 1.0;
        jx_last[3 * 2 + 1] = 1.0;
    }

    fn pinned_duration(&self, task: &[f64]) -> Option<f64> {
        Some(task[1])
    }

    fn unactuated_rows(&self) -> Vec<usize> {
        vec![0]
    }

    fn warm_starts(&self, task: &[f64], l_t: usize, duration: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        vec![line_to_goal(task[0], l_t, duration)]
    }
}

// ---------------------------------------------------------------------------
// Obstacle family (discontinuous task → solution map)
// ---------------------------------------------------------------------------

/// Obstacle radius for the time-windowed keep-out disc.
const OBSTACLE_RADIUS: f64 = 0.5;
/// Obstacle center per unit of task parameter: `c(τ) = -0.3·τ`, so negative
/// tasks push the obstacle up (forcing the trajectory below) and vice versa.
const OBSTACLE_CENTER_GAIN: f64 = -0.3;
/// Window of normalized time where the keep-out applies.
const OBSTACLE_WINDOW: (f64, f64) = (0.4, 0.6);
/// Horizon; fixed for the whole family.
const OBSTACLE_DURATION: f64 = 1.0;
/// Residual reported outside the window (strictly feasible constant, keeps
/// the residual dimension independent of the node).
const OBSTACLE_INACTIVE: f64 = -1.0;

/// Double integrator that starts and ends at rest at the origin over a fixed
/// unit horizon and must keep `|x₁ − c(τ)| ≥ r` during the middle of the
/// motion. For `τ < 0` the obstacle sits above the axis and the optimal path
/// dips below; for `τ > 0` the mirror image; at `τ = 0` the two basins tie,
/// so the task→solution map jumps there. Tasks are 1-D, `τ ∈ [−1, 1]`-scale.
pub fn obstacle_family(task_space: &TaskSpace) -> Result<SystemSpec, SystemError> {
    if task_space.dims() != 1 {
        return Err(SystemError::TaskDimension {
            name: "obstacle_family",
            expected: "1",
            got: task_space.dims(),
        });
    }
    let span = task_space.upper()[0].abs().max(task_space.lower()[0].abs());
    if span * OBSTACLE_CENTER_GAIN.abs() + OBSTACLE_RADIUS > 2.0 {
        return Err(SystemError::InvalidParameter(
            "obstacle_family: task range places the obstacle outside the \
             reachable position box"
                .into(),
        ));
    }
    Ok(SystemSpec {
        name: "obstacle_family".into(),
        state_lower: vec![-3.0, -15.0],
        state_upper: vec![3.0, 15.0],
        control_lower: vec![-200.0],
        control_upper: vec![200.0],
        duration_range: (OBSTACLE_DURATION, OBSTACLE_DURATION + 1.0),
        model: Arc::new(ObstacleFamily),
    })
}

struct ObstacleFamily;

impl ObstacleFamily {
    fn in_window(s: f64) -> bool {
        (OBSTACLE_WINDOW.0..=OBSTACLE_WINDOW.1).contains(&s)
    }

    fn center(task: &[f64]) -> f64 {
        OBSTACLE_CENTER_GAIN * task[0]
    }
}

impl SystemModel for ObstacleFamily {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn task_dims(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = u[0];
    }

    fn dynamics_jacobian(&self, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx.fill(0.0);
        ju.fill(0.0);
        jx[1] = 1.0;
        ju[1] = 1.0;
    }

    fn running_cost(&self, _x: &[f64], u: &[f64], _duration: f64) -> f64 {
        u[0] * u[0]
    }

    fn running_cost_gradient(
        &self,
        _x: &[f64],
        u: &[f64],
        _duration: f64,
        gx: &mut [f64],
        gu: &mut [f64],
    ) -> f64 {
        gx.fill(0.0);
        gu[0] = 2.0 * u[0];
        0.0
    }

    fn n_terminal(&self) -> usize {
        4
    }

    fn terminal(
        &self,
        _task: &[f64],
        x_first: &[f64],
        _u_first: &[f64],
        x_last: &[f64],
        _u_last: &[f64],
        _duration: f64,
        out: &mut [f64],
    ) {
        out[0] = x_first[0];
        out[1] = x_first[1];
        out[2] = x_last[0];
        out[3] = x_last[1];
    }

    fn terminal_jacobian(
        &self,
        _task: &[f64],
        _x_first: &[f64],
        _u_first: &[f64],
        _x_last: &[f64],
        _u_last: &[f64],
        _duration: f64,
        jx_first: &mut [f64],
        ju_first: &mut [f64],
        jx_last: &mut [f64],
        ju_last: &mut [f64],
        jt: &mut [f64],
    ) {
        jx_first.fill(0.0);
        ju_first.fill(0.0);
        jx_last.fill(0.0);
        ju_last.fill(0.0);
        jt.fill(0.0);
        jx_first[0] = 1.0;
        jx_first[2 + 1] = 1.0;
        jx_last[2 * 2] = 1.0;
        jx_last[3 * 2 + 1] = 1.0;
    }

    fn n_path_ineq(&self) -> usize {
        1
    }

    fn path_ineq(&self, task: &[f64], x: &[f64], _u: &[f64], s: f64, out: &mut [f64]) {
        out[0] = if Self::in_window(s) {
            let d = x[0] - Self::center(task);
            OBSTACLE_RADIUS * OBSTACLE_RADIUS - d * d
        } else {
            OBSTACLE_INACTIVE
        };
    }

    fn path_ineq_jacobian(
        &self,
        task: &[f64],
        x: &[f64],
        _u: &[f64],
        s: f64,
        jx: &mut [f64],
        ju: &mut [f64],
    ) {
        jx.fill(0.0);
        ju.fill(0.0);
        if Self::in_window(s) {
            jx[0] = -2.0 * (x[0] - Self::center(task));
        }
    }

    fn pinned_duration(&self, _task: &[f64]) -> Option<f64> {
        Some(OBSTACLE_DURATION)
    }

    fn unactuated_rows(&self) -> Vec<usize> {
        vec![0]
    }

    fn warm_starts(&self, _task: &[f64], l_t: usize, duration: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
        // One bump above the obstacle corridor and one below; the solver
        // keeps whichever basin is cheaper for the given task.
        let bump = |amplitude: f64| -> (Vec<f64>, Vec<f64>) {
            let mut states = vec![0.0; l_t * 2];
            let controls = vec![0.0; l_t];
            for k in 0..l_t {
                let s = k as f64 / (l_t - 1) as f64;
                let angle = std::f64::consts::PI * s;
                states[k * 2] = amplitude * angle.sin();
                states[k * 2 + 1] = amplitude * std::f64::consts::PI * angle.cos() / duration;
            }
            (states, controls)
        };
        vec![bump(0.9), bump(-0.9)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn di_space() -> TaskSpace {
        TaskSpace::new(vec![0.2], vec![1.8]).unwrap()
    }

    fn di_space_2d() -> TaskSpace {
        TaskSpace::new(vec![0.2, 0.5], vec![1.8, 2.0]).unwrap()
    }

    fn pend_space() -> TaskSpace {
        TaskSpace::new(vec![-1.5, 0.5], vec![1.5, 2.0]).unwrap()
    }

    fn obstacle_space() -> TaskSpace {
        TaskSpace::new(vec![-1.0], vec![1.0]).unwrap()
    }

    fn all_specs() -> Vec<(SystemSpec, Vec<f64>)> {
        vec![
            (double_integrator(&di_space(), None).unwrap(), vec![1.3]),
            (
                double_integrator(&di_space_2d(), None).unwrap(),
                vec![1.3, 1.2],
            ),
            (pendulum(&pend_space(), 1.7, 0.8).unwrap(), vec![1.1, 1.5]),
            (obstacle_family(&obstacle_space()).unwrap(), vec![-0.5]),
        ]
    }

    #[test]
    fn oracle_reference_values() {
        let oracle = double_integrator_oracle(1.0, 1.0).unwrap();
        assert_relative_eq!(oracle.control(0.0), 6.0);
        assert_relative_eq!(oracle.control(1.0), -6.0);
        assert_relative_eq!(oracle.state(0.5)[0], 0.5);
        assert_relative_eq!(oracle.state(0.5)[1], 1.5);
        assert_relative_eq!(oracle.cost(), 12.0);
        let oracle2 = double_integrator_oracle(2.0, 2.0).unwrap();
        assert_relative_eq!(oracle2.cost(), 6.0);
        // Endpoints are rest-to-goal.
        assert_relative_eq!(oracle2.state(0.0)[0], 0.0);
        assert_relative_eq!(oracle2.state(0.0)[1], 0.0);
        assert_relative_eq!(oracle2.state(2.0)[0], 2.0);
        assert_relative_eq!(oracle2.state(2.0)[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_cost_matches_quadrature_of_control() {
        // ∫ u² dt by fine trapezoid quadrature equals 12 d²/T³.
        let oracle = double_integrator_oracle(1.4, 0.8).unwrap();
        let n = 20_000;
        let h = oracle.duration / n as f64;
        let mut acc = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let u = oracle.control(k as f64 * h);
            acc += w * u * u * h;
        }
        assert_relative_eq!(acc, oracle.cost(), max_relative = 1e-7);
    }

    #[test]
    fn oracle_satisfies_dynamics() {
        // d/dt position = velocity, checked by central differences.
        let oracle = double_integrator_oracle(1.0, 1.3).unwrap();
        let eps = 1e-6;
        for &t in &[0.1, 0.4, 0.9, 1.2] {
            let dpos = (oracle.state(t + eps)[0] - oracle.state(t - eps)[0]) / (2.0 * eps);
            assert_relative_eq!(dpos, oracle.state(t)[1], epsilon = 1e-7);
            let dvel = (oracle.state(t + eps)[1] - oracle.state(t - eps)[1]) / (2.0 * eps);
            assert_relative_eq!(dvel, oracle.control(t), epsilon = 1e-6);
        }
    }

    #[test]
    fn gravity_free_pendulum_is_a_double_integrator() {
        let pend = pendulum(&pend_space(), 0.0, 1.0).unwrap();
        let di = double_integrator(&di_space(), None).unwrap();
        let mut fp = [0.0; 2];
        let mut fd = [0.0; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0)];
            let u = [rng.gen_range(-5.0..5.0)];
            pend.model().dynamics(&x, &u, &mut fp);
            di.model().dynamics(&x, &u, &mut fd);
            assert_eq!(fp, fd);
            assert_eq!(
                pend.model().running_cost(&x, &u, 1.0),
                di.model().running_cost(&x, &u, 1.0)
            );
        }
    }

    #[test]
    fn dynamics_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (spec, _task) in all_specs() {
            let p = spec.state_dim();
            let q = spec.control_dim();
            for _ in 0..20 {
                let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let u: Vec<f64> = (0..q).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let mut jx = vec![0.0; p * p];
                let mut ju = vec![0.0; p * q];
                spec.model().dynamics_jacobian(&x, &u, &mut jx, &mut ju);
                let eps = 1e-6;
                let mut fp = vec![0.0; p];
                let mut fm = vec![0.0; p];
                for c in 0..p {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += eps;
                    xm[c] -= eps;
                    spec.model().dynamics(&xp, &u, &mut fp);
                    spec.model().dynamics(&xm, &u, &mut fm);
                    for r in 0..p {
                        let fd = (fp[r] - fm[r]) / (2.0 * eps);
                        assert_relative_eq!(jx[r * p + c], fd, epsilon = 1e-6);
                    }
                }
                for c in 0..q {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[c] += eps;
                    um[c] -= eps;
                    spec.model().dynamics(&x, &up, &mut fp);
                    spec.model().dynamics(&x, &um, &mut fm);
                    for r in 0..p {
                        let fd = (fp[r] - fm[r]) / (2.0 * eps);
                        assert_relative_eq!(ju[r * q + c], fd, epsilon = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn cost_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (spec, _task) in all_specs() {
            let p = spec.state_dim();
            let q = spec.control_dim();
            for _ in 0..20 {
                let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let u: Vec<f64> = (0..q).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let t = rng.gen_range(0.5..2.0);
                let mut gx = vec![0.0; p];
                let mut gu = vec![0.0; q];
                let gt = spec.model().running_cost_gradient(&x, &u, t, &mut gx, &mut gu);
                let eps = 1e-6;
                for c in 0..p {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += eps;
                    xm[c] -= eps;
                    let fd = (spec.model().running_cost(&xp, &u, t)
                        - spec.model().running_cost(&xm, &u, t))
                        / (2.0 * eps);
                    assert_relative_eq!(gx[c], fd, epsilon = 1e-6);
                }
                for c in 0..q {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up[c] += eps;
                    um[c] -= eps;
                    let fd = (spec.model().running_cost(&x, &up, t)
                        - spec.model().running_cost(&x, &um, t))
                        / (2.0 * eps);
                    assert_relative_eq!(gu[c], fd, epsilon = 1e-5);
                }
                let fd = (spec.model().running_cost(&x, &u, t + eps)
                    - spec.model().running_cost(&x, &u, t - eps))
                    / (2.0 * eps);
                assert_relative_eq!(gt, fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn terminal_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (spec, task) in all_specs() {
            let p = spec.state_dim();
            let q = spec.control_dim();
            let n = spec.model().n_terminal();
            let x0: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u0: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xt: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ut: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = 1.1;
            let mut jx0 = vec![0.0; n * p];
            let mut ju0 = vec![0.0; n * q];
            let mut jxt = vec![0.0; n * p];
            let mut jut = vec![0.0; n * q];
            let mut jt = vec![0.0; n];
            spec.model().terminal_jacobian(
                &task, &x0, &u0, &xt, &ut, t, &mut jx0, &mut ju0, &mut jxt, &mut jut, &mut jt,
            );
            let eps = 1e-6;
            let eval = |x0: &[f64], u0: &[f64], xt: &[f64], ut: &[f64], t: f64| -> Vec<f64> {
                let mut out = vec![0.0; n];
                spec.model().terminal(&task, x0, u0, xt, ut, t, &mut out);
                out
            };
            for c in 0..p {
                let mut ap = x0.clone();
                let mut am = x0.clone();
                ap[c] += eps;
                am[c] -= eps;
                let rp = eval(&ap, &u0, &xt, &ut, t);
                let rm = eval(&am, &u0, &xt, &ut, t);
                for r in 0..n {
                    assert_relative_eq!(jx0[r * p + c], (rp[r] - rm[r]) / (2.0 * eps), epsilon = 1e-6);
                }
                let mut bp = xt.clone();
                let mut bm = xt.clone();
                bp[c] += eps;
                bm[c] -= eps;
                let rp = eval(&x0, &u0, &bp, &ut, t);
                let rm = eval(&x0, &u0, &bm, &ut, t);
                for r in 0..n {
                    assert_relative_eq!(jxt[r * p + c], (rp[r] - rm[r]) / (2.0 * eps), epsilon = 1e-6);
                }
            }
            let rp = eval(&x0, &u0, &xt, &ut, t + eps);
            let rm = eval(&x0, &u0, &xt, &ut, t - eps);
            for r in 0..n {
                assert_relative_eq!(jt[r], (rp[r] - rm[r]) / (2.0 * eps), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn terminal_residuals_vanish_on_satisfied_boundaries() {
        let spec = double_integrator(&di_space(), None).unwrap();
        let task = [1.3];
        let mut out = [f64::NAN; 4];
        spec.model()
            .terminal(&task, &[0.0, 0.0], &[0.0], &[1.3, 0.0], &[0.0], 1.0, &mut out);
        assert_eq!(out, [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn obstacle_constraint_window_and_sign() {
        let spec = obstacle_family(&obstacle_space()).unwrap();
        let task = [-0.5]; // obstacle center at +0.15
        let mut g = [f64::NAN];
        // Outside the window: inactive constant regardless of state.
        spec.model().path_ineq(&task, &[0.15, 0.0], &[0.0], 0.1, &mut g);
        assert_eq!(g[0], OBSTACLE_INACTIVE);
        spec.model().path_ineq(&task, &[2.5, 0.0], &[0.0], 0.95, &mut g);
        assert_eq!(g[0], OBSTACLE_INACTIVE);
        // Inside the window, sitting on the obstacle center: maximally violated.
        spec.model().path_ineq(&task, &[0.15, 0.0], &[0.0], 0.5, &mut g);
        assert_relative_eq!(g[0], OBSTACLE_RADIUS * OBSTACLE_RADIUS);
        // Inside the window but clear of the obstacle: feasible.
        spec.model().path_ineq(&task, &[-0.9, 0.0], &[0.0], 0.5, &mut g);
        assert!(g[0] < 0.0);
        // Jacobian matches finite differences inside the window.
        let mut jx = [0.0, 0.0];
        let mut ju = [0.0];
        let x = [0.4, 0.2];
        spec.model().path_ineq_jacobian(&task, &x, &[0.0], 0.45, &mut jx, &mut ju);
        let eps = 1e-6;
        let mut gp = [0.0];
        let mut gm = [0.0];
        spec.model().path_ineq(&task, &[x[0] + eps, x[1]], &[0.0], 0.45, &mut gp);
        spec.model().path_ineq(&task, &[x[0] - eps, x[1]], &[0.0], 0.45, &mut gm);
        assert_relative_eq!(jx[0], (gp[0] - gm[0]) / (2.0 * eps), epsilon = 1e-6);
        assert_eq!(jx[1], 0.0);
        assert_eq!(ju[0], 0.0);
    }

    #[test]
    fn unactuated_rows_do_not_respond_to_control() {
        for (spec, _task) in all_specs() {
            let p = spec.state_dim();
            let q = spec.control_dim();
            let x: Vec<f64> = (0..p).map(|i| 0.3 * (i as f64 + 1.0)).collect();
            let mut f_a = vec![0.0; p];
            let mut f_b = vec![0.0; p];
            spec.model().dynamics(&x, &vec![-7.0; q], &mut f_a);
            spec.model().dynamics(&x, &vec![9.0; q], &mut f_b);
            for row in spec.model().unactuated_rows() {
                assert_eq!(f_a[row], f_b[row], "row {row} of {}", spec.name());
            }
        }
    }

    #[test]
    fn pinned_durations_follow_task_or_config() {
        let free = double_integrator(&di_space(), None).unwrap();
        assert_eq!(free.pinned_duration(&[1.0]), None);
        let fixed = double_integrator(&di_space(), Some(1.0)).unwrap();
        assert_eq!(fixed.pinned_duration(&[1.0]), Some(1.0));
        let from_task = double_integrator(&di_space_2d(), None).unwrap();
        assert_eq!(from_task.pinned_duration(&[1.0, 1.7]), Some(1.7));
        let pend = pendulum(&pend_space(), 1.0, 1.0).unwrap();
        assert_eq!(pend.pinned_duration(&[0.5, 2.0]), Some(2.0));
        let obs = obstacle_family(&obstacle_space()).unwrap();
        assert_eq!(obs.pinned_duration(&[0.3]), Some(OBSTACLE_DURATION));
    }

    #[test]
    fn warm_starts_hit_boundary_conditions() {
        for (spec, task) in all_specs() {
            let l_t = 16;
            let duration = spec.nominal_duration(&task);
            let guesses = spec.model().warm_starts(&task, l_t, duration);
            assert!(!guesses.is_empty());
            for (states, controls) in &guesses {
                assert_eq!(states.len(), l_t * spec.state_dim());
                assert_eq!(controls.len(), l_t * spec.control_dim());
                // First and last positions match the rest-to-rest targets up
                // to the velocity component (guesses may carry transit speed).
                assert_relative_eq!(states[0], 0.0, epsilon = 1e-12);
                let p = spec.state_dim();
                let last_pos = states[(l_t - 1) * p];
                let mut term = vec![f64::NAN; spec.model().n_terminal()];
                let x0 = &states[..p];
                let xt = &states[(l_t - 1) * p..];
                spec.model().terminal(
                    &task,
                    x0,
                    &controls[..spec.control_dim()],
                    xt,
                    &controls[(l_t - 1) * spec.control_dim()..],
                    duration,
                    &mut term,
                );
                // Position residuals (rows 0 and 2) vanish on every guess.
                assert_relative_eq!(term[0], 0.0, epsilon = 1e-12);
                assert_relative_eq!(term[2], 0.0, epsilon = 1e-9);
                // States stay inside the box.
                for k in 0..l_t {
                    for i in 0..p {
                        let v = states[k * p + i];
                        assert!(v >= spec.state_lower()[i] && v <= spec.state_upper()[i]);
                    }
                }
                let _ = last_pos;
            }
        }
    }

    #[test]
    fn by_name_resolves_and_rejects() {
        let params = SystemParams::default();
        assert!(by_name("double_integrator", &di_space(), &params).is_ok());
        assert!(by_name("pendulum", &pend_space(), &params).is_ok());
        assert!(by_name("obstacle_family", &obstacle_space(), &params).is_ok());
        assert!(matches!(
            by_name("rocket", &di_space(), &params),
            Err(SystemError::UnknownSystem(_))
        ));
    }

    #[test]
    fn constructor_validation() {
        // Wrong task dimensions.
        let three = TaskSpace::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(
            double_integrator(&three, None),
            Err(SystemError::TaskDimension { .. })
        ));
        assert!(matches!(
            pendulum(&di_space(), 1.0, 1.0),
            Err(SystemError::TaskDimension { .. })
        ));
        assert!(matches!(
            obstacle_family(&pend_space()),
            Err(SystemError::TaskDimension { .. })
        ));
        // 2-D double-integrator tasks already pin the duration.
        assert!(double_integrator(&di_space_2d(), Some(1.0)).is_err());
        // Parameter sanity.
        assert!(pendulum(&pend_space(), 1.0, 0.0).is_err());
        assert!(pendulum(&pend_space(), -1.0, 1.0).is_err());
        assert!(double_integrator(&di_space(), Some(99.0)).is_err());
        // Duration ranges incompatible with the duration box.
        let wild = TaskSpace::new(vec![0.2, 0.01], vec![1.8, 2.0]).unwrap();
        assert!(double_integrator(&wild, None).is_err());
    }
}

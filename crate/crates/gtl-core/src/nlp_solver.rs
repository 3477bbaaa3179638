//! Box-constrained NLP solver: augmented-Lagrangian outer loop with a
//! spectral projected-gradient inner loop.
//!
//! Problems are presented through the matrix-free [`NlpProblem`] interface —
//! objective, equality/inequality residuals, and transposed-Jacobian
//! products. Equality residuals are driven to zero, inequality residuals to
//! the nonpositive orthant, and simple bounds are enforced exactly by
//! projection at every iterate.
//!
//! The outer loop is the classical multiplier method (Powell–Hestenes–
//! Rockafellar): minimize the augmented Lagrangian within the box, then
//! either update the multiplier estimates (when constraint violation fell
//! enough) or raise the penalty. The inner minimizer takes projected
//! gradient steps scaled by the Barzilai–Borwein spectral step length and
//! safeguarded by a nonmonotone Armijo line search.

use rayon::prelude::*;

/// Interface a problem exposes to [`solve`]. All slices are length
/// `n_vars` unless stated otherwise; Jacobian products *accumulate* into
/// their output so the solver can assemble gradients in place.
pub trait NlpProblem: Send + Sync {
    fn n_vars(&self) -> usize;

    /// Number of equality residuals (driven to 0).
    fn n_eq(&self) -> usize {
        0
    }

    /// Number of inequality residuals (driven to ≤ 0).
    fn n_ineq(&self) -> usize {
        0
    }

    /// Elementwise lower bounds (may be −∞).
    fn lower(&self) -> &[f64];

    /// Elementwise upper bounds (may be +∞).
    fn upper(&self) -> &[f64];

    fn objective(&self, v: &[f64]) -> f64;

    /// Writes ∇f(v) into `grad` (overwrites).
    fn objective_grad(&self, v: &[f64], grad: &mut [f64]);

    /// Writes the equality residuals c_eq(v) into `out` (length `n_eq`).
    fn eq_residuals(&self, _v: &[f64], _out: &mut [f64]) {}

    /// Writes the inequality residuals c_in(v) into `out` (length `n_ineq`).
    fn ineq_residuals(&self, _v: &[f64], _out: &mut [f64]) {}

    /// Accumulates `J_eq(v)ᵀ y` into `acc` (`acc += ...`).
    fn eq_jac_tvec(&self, _v: &[f64], _y: &[f64], _acc: &mut [f64]) {}

    /// Accumulates `J_in(v)ᵀ y` into `acc` (`acc += ...`).
    fn ineq_jac_tvec(&self, _v: &[f64], _y: &[f64], _acc: &mut [f64]) {}

    /// Optional positive per-variable scale factors. The solver takes its
    /// projected-gradient steps in the rescaled variables `w = v / s`, which
    /// acts as a fixed diagonal preconditioner; problems whose columns have
    /// wildly different sensitivities (collocation grids) should supply
    /// scales so a unit step means roughly the same thing in every
    /// coordinate. `None` means unit scaling.
    fn variable_scaling(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Tuning knobs for [`solve`]. The defaults suit the collocation problems
/// in this crate; tolerances are deliberate, recorded choices rather than
/// magic numbers scattered at call sites.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    /// Outer (multiplier/penalty) iteration budget.
    pub max_outer: usize,
    /// Inner projected-gradient iteration budget per outer iteration.
    pub max_inner: usize,
    /// Initial quadratic-penalty weight.
    pub penalty_init: f64,
    /// Multiplicative penalty growth when feasibility progress stalls (> 1).
    pub penalty_growth: f64,
    /// Penalty ceiling; hitting it with stalled feasibility flags the
    /// problem as locally infeasible.
    pub penalty_max: f64,
    /// Max-norm feasibility tolerance on the residuals.
    pub feas_tol: f64,
    /// Tolerance on the max-norm projected gradient (first-order
    /// stationarity), relative to the cost scale: the solve is declared
    /// stationary when `pg ≤ opt_tol · (1 + |objective|)`. Gradient
    /// magnitudes grow with the cost surface, so an absolute cutoff would
    /// demand noise-floor accuracy from large-cost instances while
    /// over-polishing small ones.
    pub opt_tol: f64,
    /// Armijo sufficient-decrease coefficient.
    pub armijo_decrease: f64,
    /// Backtracking shrink factor in (0, 1).
    pub step_shrink: f64,
    /// Number of recent objective values the nonmonotone line search may
    /// reference (1 = classical monotone Armijo).
    pub nonmonotone_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer: 40,
            max_inner: 20000,
            penalty_init: 100.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
            feas_tol: 1e-6,
            opt_tol: 1e-5,
            armijo_decrease: 1e-4,
            step_shrink: 0.5,
            nonmonotone_window: 8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), NlpSolverError> {
        if !(self.penalty_growth > 1.0) {
            return Err(NlpSolverError::BadConfig(format!(
                "penalty_growth must exceed 1, got {}",
                self.penalty_growth
            )));
        }
        if !(self.penalty_init > 0.0) || !(self.penalty_max >= self.penalty_init) {
            return Err(NlpSolverError::BadConfig(format!(
                "penalty range [{}, {}] invalid",
                self.penalty_init, self.penalty_max
            )));
        }
        if !(self.feas_tol > 0.0) || !(self.opt_tol > 0.0) {
            return Err(NlpSolverError::BadConfig(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(NlpSolverError::BadConfig(format!(
                "step_shrink must lie in (0, 1), got {}",
                self.step_shrink
            )));
        }
        if self.nonmonotone_window == 0 {
            return Err(NlpSolverError::BadConfig(
                "nonmonotone_window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NlpSolverError {
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("gradient became non-finite at an accepted iterate (inner iteration {0})")]
    NonFiniteGradient(usize),
    #[error("warm-start length {got} does not match problem size {expected}")]
    WarmStartLength { got: usize, expected: usize },
}

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Feasible to `feas_tol` and first-order stationary to `opt_tol`
    /// (relative to the cost scale — see [`SolverConfig::opt_tol`]).
    Converged,
    /// Iteration budget exhausted before both tolerances were met.
    MaxIter,
    /// Penalty reached its ceiling while constraint violation stopped
    /// improving — the constraints appear locally inconsistent.
    InfeasiblePoint,
}

/// Result of one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub objective: f64,
    /// Max-norm constraint violation at the solution.
    pub feas_residual: f64,
    /// Max-norm of the projected augmented-Lagrangian gradient at exit.
    pub stationarity: f64,
    pub status: SolveStatus,
    /// Total inner iterations across all outer iterations.
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Constraint violation after each outer iteration.
    pub feas_history: Vec<f64>,
    /// Max-norm of the last accepted multiplier update (0 until one occurs).
    pub multiplier_delta: f64,
}

fn project_into(v: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(lo[i], hi[i]);
    }
}

/// A point guaranteed inside the box, used when no warm start is supplied.
fn box_center(lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            if l.is_finite() && h.is_finite() {
                0.5 * (l + h)
            } else if l.is_finite() {
                l + 1.0
            } else if h.is_finite() {
                h - 1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Workspace for augmented-Lagrangian evaluations, reused across iterations.
struct AlScratch {
    c_eq: Vec<f64>,
    c_in: Vec<f64>,
    y_eq: Vec<f64>,
    y_in: Vec<f64>,
}

/// Augmented Lagrangian value at `v` for multipliers (mu, sigma) and
/// penalty rho, using the standard shifted-penalty form whose inequality
/// term is smooth: `ρ/2 · max(0, σ/ρ + c)² − σ²/(2ρ)` per residual.
fn al_value(
    nlp: &dyn NlpProblem,
    v: &[f64],
    mu: &[f64],
    sigma: &[f64],
    rho: f64,
    scratch: &mut AlScratch,
) -> f64 {
    let mut val = nlp.objective(v);
    if !mu.is_empty() {
        nlp.eq_residuals(v, &mut scratch.c_eq);
        for (c, m) in scratch.c_eq.iter().zip(mu) {
            val += m * c + 0.5 * rho * c * c;
        }
    }
    if !sigma.is_empty() {
        nlp.ineq_residuals(v, &mut scratch.c_in);
        for (c, s) in scratch.c_in.iter().zip(sigma) {
            let shifted = (s / rho + c).max(0.0);
            val += 0.5 * rho * shifted * shifted - s * s / (2.0 * rho);
        }
    }
    val
}

/// Gradient of the augmented Lagrangian, written into `grad`.
fn al_gradient(
    nlp: &dyn NlpProblem,
    v: &[f64],
    mu: &[f64],
    sigma: &[f64],
    rho: f64,
    scratch: &mut AlScratch,
    grad: &mut [f64],
) {
    nlp.objective_grad(v, grad);
    if !mu.is_empty() {
        nlp.eq_residuals(v, &mut scratch.c_eq);
        for ((y, m), c) in scratch.y_eq.iter_mut().zip(mu).zip(&scratch.c_eq) {
            *y = m + rho * c;
        }
        nlp.eq_jac_tvec(v, &scratch.y_eq, grad);
    }
    if !sigma.is_empty() {
        nlp.ineq_residuals(v, &mut scratch.c_in);
        for ((y, s), c) in scratch.y_in.iter_mut().zip(sigma).zip(&scratch.c_in) {
            *y = (s + rho * c).max(0.0);
        }
        nlp.ineq_jac_tvec(v, &scratch.y_in, grad);
    }
}

/// First-order multiplier refresh `μ ← μ + ρ·c` (equalities, clamped
/// symmetrically) and `σ ← max(0, σ + ρ·c)` (inequalities, clamped above),
/// given the residuals at the current iterate. Returns the largest movement
/// of any multiplier, the outer-loop progress measure.
fn refresh_multipliers(
    mu: &mut [f64],
    sigma: &mut [f64],
    c_eq: &[f64],
    c_in: &[f64],
    rho: f64,
) -> f64 {
    let mut delta: f64 = 0.0;
    for (m, c) in mu.iter_mut().zip(c_eq) {
        let updated = (*m + rho * c).clamp(-MULTIPLIER_CAP, MULTIPLIER_CAP);
        delta = delta.max((updated - *m).abs());
        *m = updated;
    }
    for (s, c) in sigma.iter_mut().zip(c_in) {
        let updated = (*s + rho * c).clamp(0.0, MULTIPLIER_CAP);
        delta = delta.max((updated - *s).abs());
        *s = updated;
    }
    delta
}

/// Max-norm of the projected gradient step `P(v − g) − v`, the first-order
/// stationarity measure on a box.
fn projected_gradient_norm(v: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..v.len() {
        let step = (v[i] - g[i]).clamp(lo[i], hi[i]) - v[i];
        norm = norm.max(step.abs());
    }
    norm
}

const BB_STEP_MIN: f64 = 1e-10;
const BB_STEP_MAX: f64 = 1e10;
/// How many recent short (sᵀy/yᵀy) spectral steps to remember for the
/// adaptive step-alternation rule.
const SHORT_STEP_MEMORY: usize = 5;
/// Safeguard bound on augmented-Lagrangian multiplier magnitudes; keeps a
/// string of badly solved subproblems from running the estimates away.
const MULTIPLIER_CAP: f64 = 1e12;

/// The problem seen through its diagonal variable scaling: the solver
/// iterates on `w = v / s`, which turns the scaling into a fixed
/// preconditioner for the projected-gradient steps.
struct ScaledView {
    s: Vec<f64>,
    lo_w: Vec<f64>,
    hi_w: Vec<f64>,
}

impl ScaledView {
    fn new(nlp: &dyn NlpProblem) -> Self {
        let n = nlp.n_vars();
        let s = match nlp.variable_scaling() {
            Some(s) => {
                assert_eq!(s.len(), n, "variable_scaling length mismatch");
                assert!(
                    s.iter().all(|&x| x > 0.0 && x.is_finite()),
                    "variable_scaling entries must be positive and finite"
                );
                s
            }
            None => vec![1.0; n],
        };
        let lo_w: Vec<f64> = nlp.lower().iter().zip(&s).map(|(l, si)| l / si).collect();
        let hi_w: Vec<f64> = nlp.upper().iter().zip(&s).map(|(h, si)| h / si).collect();
        Self { s, lo_w, hi_w }
    }

    fn to_physical(&self, w: &[f64], v: &mut [f64]) {
        for i in 0..w.len() {
            v[i] = w[i] * self.s[i];
        }
    }

    fn to_scaled(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.s).map(|(vi, si)| vi / si).collect()
    }
}

/// Spectral projected-gradient descent of the augmented Lagrangian within
/// the (scaled) box, to projected-gradient tolerance `tol`. `w` iterates in
/// scaled coordinates; `v` mirrors it in physical ones. Returns the achieved
/// stationarity and the iterations spent.
#[allow(clippy::too_many_arguments)]
fn spg_minimize(
    nlp: &dyn NlpProblem,
    view: &ScaledView,
    w: &mut Vec<f64>,
    v: &mut Vec<f64>,
    mu: &[f64],
    sigma: &[f64],
    rho: f64,
    tol: f64,
    max_inner: usize,
    cfg: &SolverConfig,
    scratch: &mut AlScratch,
) -> Result<(f64, usize), NlpSolverError> {
    let n = w.len();
    let lo = &view.lo_w;
    let hi = &view.hi_w;
    view.to_physical(w, v);
    let mut grad = vec![0.0; n]; // scaled-space gradient s ∘ ∇_v AL
    let mut f_val = al_value(nlp, v, mu, sigma, rho, scratch);
    if !f_val.is_finite() {
        return Err(NlpSolverError::NonFiniteStart);
    }
    let eval_grad = |v: &[f64], grad: &mut [f64], scratch: &mut AlScratch| {
        al_gradient(nlp, v, mu, sigma, rho, scratch, grad);
        for (g, s) in grad.iter_mut().zip(&view.s) {
            *g *= s;
        }
    };
    eval_grad(v, &mut grad, scratch);

    let mut history = std::collections::VecDeque::with_capacity(cfg.nonmonotone_window);
    history.push_back(f_val);
    let mut pg_norm = projected_gradient_norm(w, &grad, lo, hi);
    let mut bb_step = (1.0 / pg_norm.max(1e-12)).clamp(BB_STEP_MIN, BB_STEP_MAX);
    let mut dir = vec![0.0; n];
    let mut w_cand = vec![0.0; n];
    let mut v_cand = vec![0.0; n];
    let mut grad_old = vec![0.0; n];
    let mut short_steps = std::collections::VecDeque::with_capacity(SHORT_STEP_MEMORY);

    let mut iters = 0;
    while iters < max_inner && pg_norm > tol {
        iters += 1;
        // Feasible descent direction from the spectral trial step.
        let mut dir_dot_grad = 0.0;
        for i in 0..n {
            let target = (w[i] - bb_step * grad[i]).clamp(lo[i], hi[i]);
            dir[i] = target - w[i];
            dir_dot_grad += dir[i] * grad[i];
        }
        if dir_dot_grad >= 0.0 {
            // Spectral step produced no descent (possible after a degenerate
            // BB pair); fall back to the plain gradient scale once, else stop.
            bb_step = (1.0 / pg_norm.max(1e-12)).clamp(BB_STEP_MIN, BB_STEP_MAX);
            let mut rebuilt = 0.0;
            for i in 0..n {
                let target = (w[i] - bb_step * grad[i]).clamp(lo[i], hi[i]);
                dir[i] = target - w[i];
                rebuilt += dir[i] * grad[i];
            }
            dir_dot_grad = rebuilt;
            if dir_dot_grad >= 0.0 {
                break;
            }
        }
        let f_ref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let mut f_new;
        loop {
            for i in 0..n {
                w_cand[i] = w[i] + alpha * dir[i];
            }
            view.to_physical(&w_cand, &mut v_cand);
            f_new = if v_cand.iter().all(|x| x.is_finite()) {
                al_value(nlp, &v_cand, mu, sigma, rho, scratch)
            } else {
                f64::INFINITY
            };
            // The last term absorbs floating-point noise in the augmented
            // Lagrangian value; without it the line search cannot certify
            // the ~|f|·1e-14 decreases typical near tight tolerances and
            // stalls even though the (analytic) gradient still points
            // somewhere useful.
            let noise = 1e-14 * (1.0 + f_ref.abs());
            if f_new.is_finite()
                && f_new <= f_ref + cfg.armijo_decrease * alpha * dir_dot_grad + noise
            {
                break;
            }
            alpha *= cfg.step_shrink;
            if alpha < 1e-16 {
                // Cannot make progress along this direction.
                return Ok((pg_norm, iters));
            }
        }
        // Accept the candidate and refresh the spectral step from the
        // Barzilai–Borwein pair (s, y).
        std::mem::swap(w, &mut w_cand);
        std::mem::swap(v, &mut v_cand);
        std::mem::swap(&mut grad_old, &mut grad);
        eval_grad(v, &mut grad, scratch);
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(NlpSolverError::NonFiniteGradient(iters));
        }
        let mut s_dot_s = 0.0;
        let mut s_dot_y = 0.0;
        let mut y_dot_y = 0.0;
        for i in 0..n {
            let s_i = w[i] - w_cand[i]; // w_cand holds the previous iterate
            let y_i = grad[i] - grad_old[i];
            s_dot_s += s_i * s_i;
            s_dot_y += s_i * y_i;
            y_dot_y += y_i * y_i;
        }
        bb_step = if s_dot_y > 1e-18 {
            // Adaptive alternation between the two Barzilai–Borwein steps:
            // when the pair is well aligned use the long step sᵀs/sᵀy, and
            // when curvature dominates fall back to the smallest recent short
            // step sᵀy/yᵀy. The alternation copes far better with wide
            // eigenvalue spreads than either step alone.
            let long_step = (s_dot_s / s_dot_y).clamp(BB_STEP_MIN, BB_STEP_MAX);
            let short_step = (s_dot_y / y_dot_y).clamp(BB_STEP_MIN, BB_STEP_MAX);
            if short_steps.len() == SHORT_STEP_MEMORY {
                short_steps.pop_front();
            }
            short_steps.push_back(short_step);
            if short_step / long_step < 0.8 {
                short_steps.iter().cloned().fold(f64::INFINITY, f64::min)
            } else {
                long_step
            }
        } else {
            BB_STEP_MAX
        };
        f_val = f_new;
        if history.len() == cfg.nonmonotone_window {
            history.pop_front();
        }
        history.push_back(f_val);
        pg_norm = projected_gradient_norm(w, &grad, lo, hi);
    }
    Ok((pg_norm, iters))
}

/// Solves `min f(v) s.t. c_eq(v) = 0, c_in(v) ≤ 0, lower ≤ v ≤ upper`.
///
/// The warm start, when given, is projected into the box before use. The
/// solve is fully deterministic: no randomness, fixed reduction orders.
pub fn solve(
    nlp: &dyn NlpProblem,
    warm_start: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<SolveReport, NlpSolverError> {
    cfg.validate()?;
    let n = nlp.n_vars();
    let lo = nlp.lower();
    let hi = nlp.upper();
    let mut v = match warm_start {
        Some(w) => {
            if w.len() != n {
                return Err(NlpSolverError::WarmStartLength {
                    got: w.len(),
                    expected: n,
                });
            }
            let mut v = w.to_vec();
            project_into(&mut v, lo, hi);
            v
        }
        None => box_center(lo, hi),
    };

    let n_eq = nlp.n_eq();
    let n_in = nlp.n_ineq();
    let mut scratch = AlScratch {
        c_eq: vec![0.0; n_eq],
        c_in: vec![0.0; n_in],
        y_eq: vec![0.0; n_eq],
        y_in: vec![0.0; n_in],
    };
    let mut mu = vec![0.0; n_eq];
    let mut sigma = vec![0.0; n_in];
    let mut rho = cfg.penalty_init;

    let unconstrained = n_eq == 0 && n_in == 0;
    // Inner tolerance schedule: start loose, tighten as the multipliers
    // settle.
    let mut inner_tol = if unconstrained { cfg.opt_tol } else { 1e-2 };

    let feasibility = |scratch: &mut AlScratch, v: &[f64]| -> f64 {
        let mut feas: f64 = 0.0;
        if n_eq > 0 {
            nlp.eq_residuals(v, &mut scratch.c_eq);
            for c in &scratch.c_eq {
                feas = feas.max(c.abs());
            }
        }
        if n_in > 0 {
            nlp.ineq_residuals(v, &mut scratch.c_in);
            for c in &scratch.c_in {
                feas = feas.max(c.max(0.0));
            }
        }
        feas
    };

    if !nlp.objective(&v).is_finite() {
        return Err(NlpSolverError::NonFiniteStart);
    }

    let mut report = SolveReport {
        solution: v.clone(),
        objective: nlp.objective(&v),
        feas_residual: feasibility(&mut scratch, &v),
        stationarity: f64::INFINITY,
        status: SolveStatus::MaxIter,
        inner_iterations: 0,
        outer_iterations: 0,
        feas_history: Vec::new(),
        multiplier_delta: f64::INFINITY,
    };
    if cfg.max_outer == 0 || cfg.max_inner == 0 {
        return Ok(report);
    }

    let mut best_feas = f64::INFINITY;
    let mut prev_feas = f64::INFINITY;
    let mut prev_exhausted_pg = f64::INFINITY;
    let mut exhausted_at_this_rho = false;
    let mut stall_count = 0usize;
    let view = ScaledView::new(nlp);
    let mut w = view.to_scaled(&v);
    let mut last_feas = report.feas_residual;
    // Stationarity cutoff, refreshed from the current iterate's objective
    // each round (see `SolverConfig::opt_tol`).
    let mut opt_cut = cfg.opt_tol * (1.0 + report.objective.abs());

    for outer in 1..=cfg.max_outer {
        // A first-order multiplier update is trustworthy only when the
        // subproblem is solved accurately *relative to the constraint
        // residual it will push into the multipliers*; the proportional term
        // keeps early, loosely-solved rounds from polluting the estimates.
        let round_tol = if unconstrained {
            inner_tol.max(opt_cut)
        } else {
            inner_tol.min((0.02 * last_feas).max(opt_cut))
        };
        let (pg_norm, inner_spent) = spg_minimize(
            nlp,
            &view,
            &mut w,
            &mut v,
            &mu,
            &sigma,
            rho,
            round_tol,
            cfg.max_inner,
            cfg,
            &mut scratch,
        )?;
        report.inner_iterations += inner_spent;
        report.outer_iterations = outer;

        let feas = feasibility(&mut scratch, &v);
        report.feas_history.push(feas);
        report.stationarity = pg_norm;
        last_feas = feas;
        opt_cut = cfg.opt_tol * (1.0 + nlp.objective(&v).abs());
        if std::env::var_os("GTL_SOLVER_TRACE").is_some() {
            eprintln!(
                "outer {outer}: rho {rho:.1e} feas {feas:.3e} pg {pg_norm:.3e} inner {inner_spent} tol {round_tol:.1e}"
            );
        }

        if feas <= cfg.feas_tol && pg_norm <= opt_cut {
            report.status = SolveStatus::Converged;
            // One final multiplier refresh so the reported multiplier_delta
            // reflects the converged residuals.
            if n_eq > 0 {
                nlp.eq_residuals(&v, &mut scratch.c_eq);
            }
            if n_in > 0 {
                nlp.ineq_residuals(&v, &mut scratch.c_in);
            }
            report.multiplier_delta =
                refresh_multipliers(&mut mu, &mut sigma, &scratch.c_eq, &scratch.c_in, rho);
            break;
        }

        if pg_norm <= round_tol {
            // The inner exit gradient with the pre-update multipliers equals
            // the Lagrangian gradient at the post-update ones (same rho,
            // same residuals), so pg_norm is the right stationarity measure
            // for the updated pair.
            if n_eq > 0 {
                nlp.eq_residuals(&v, &mut scratch.c_eq);
            }
            if n_in > 0 {
                nlp.ineq_residuals(&v, &mut scratch.c_in);
            }
            report.multiplier_delta =
                refresh_multipliers(&mut mu, &mut sigma, &scratch.c_eq, &scratch.c_in, rho);

            // Penalty control: grow only when the multiplier updates alone
            // are not contracting feasibility fast enough. Far from the
            // target the bar is an order-of-magnitude-style contraction;
            // close to it the multiplier iteration is given the benefit of
            // the doubt (raising rho near the solution only degrades the
            // inner problem's conditioning) unless it has stagnated almost
            // completely. Growth is also suppressed once the inner iteration
            // has started exhausting its budget at the current penalty: a
            // stiffer subproblem would only be solved more slowly, so the
            // multiplier updates have to carry the remaining gap from here.
            let needed_contraction = if feas > 10.0 * cfg.feas_tol { 0.3 } else { 0.95 };
            if feas > cfg.feas_tol
                && feas > needed_contraction * prev_feas
                && !exhausted_at_this_rho
            {
                let at_cap = rho >= cfg.penalty_max;
                rho = (rho * cfg.penalty_growth).min(cfg.penalty_max);
                exhausted_at_this_rho = false;
                if at_cap {
                    if feas > 0.9 * best_feas {
                        stall_count += 1;
                    } else {
                        stall_count = 0;
                    }
                    if stall_count >= 3 {
                        report.status = if feas > cfg.feas_tol.sqrt() {
                            SolveStatus::InfeasiblePoint
                        } else {
                            SolveStatus::MaxIter
                        };
                        break;
                    }
                }
            } else {
                stall_count = 0;
            }
            prev_feas = feas;
            prev_exhausted_pg = f64::INFINITY;
            // Solve the next subproblem about as accurately as the current
            // feasibility level warrants; polishing far beyond that wastes
            // inner iterations, stopping far short of it makes the next
            // multiplier step noisy.
            inner_tol = (inner_tol * 0.5).min(0.02 * feas).max(opt_cut);
        } else {
            // Inner budget exhausted before the tolerance was met. Updating
            // multipliers or the penalty from this point would destabilize
            // feasibility, so keep the subproblem unchanged and resume from
            // the warm iterate. Feasibility is frozen during such a grind
            // (the subproblem does not change), so judge progress by the
            // projected gradient instead and give up only when both stop
            // moving.
            if feas > 0.9 * best_feas && pg_norm > 0.7 * prev_exhausted_pg {
                stall_count += 1;
            } else {
                stall_count = 0;
            }
            prev_exhausted_pg = pg_norm;
            exhausted_at_this_rho = true;
            if stall_count >= 5 {
                // Distinguish a genuinely infeasible stall from running out
                // of steam while already nearly feasible.
                report.status = if feas > cfg.feas_tol.sqrt() {
                    SolveStatus::InfeasiblePoint
                } else {
                    SolveStatus::MaxIter
                };
                break;
            }
        }
        best_feas = best_feas.min(feas);
    }

    report.solution = v.clone();
    report.objective = nlp.objective(&v);
    report.feas_residual = feasibility(&mut scratch, &v);
    Ok(report)
}

/// Solves a batch of problems, optionally in parallel. `warm_starts` is
/// either empty (all cold) or one optional start per problem. Output order
/// matches input order and is bitwise independent of `workers`.
pub fn solve_batch<P: NlpProblem>(
    problems: &[P],
    warm_starts: &[Option<Vec<f64>>],
    cfg: &SolverConfig,
    workers: usize,
) -> Vec<Result<SolveReport, NlpSolverError>> {
    assert!(
        warm_starts.is_empty() || warm_starts.len() == problems.len(),
        "warm_starts must be empty or match the problem count"
    );
    let warm = |i: usize| -> Option<&[f64]> {
        warm_starts
            .get(i)
            .and_then(|w| w.as_ref())
            .map(|w| w.as_slice())
    };
    if workers <= 1 {
        return (0..problems.len())
            .map(|i| solve(&problems[i], warm(i), cfg))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool construction");
    pool.install(|| {
        (0..problems.len())
            .into_par_iter()
            .map(|i| solve(&problems[i], warm(i), cfg))
            .collect()
    })
}

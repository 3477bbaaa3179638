//! End-to-end solves of transcribed trajectory problems: the solver and the
//! transcription working together on the benchmark systems.

use gtl_core::collocation::{
    consensus_len, defect_residuals, sample_oracle, solve_from_system_starts, transcribe,
    ProximalTerm,
};
use gtl_core::nlp_solver::{NlpProblem, SolveStatus, SolverConfig};
use gtl_core::systems::{double_integrator, double_integrator_oracle, obstacle_family, pendulum};
use gtl_core::taskspace::TaskSpace;

#[test]
fn double_integrator_matches_closed_form() {
    let start = std::time::Instant::now();
    let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
    let spec = double_integrator(&space, Some(1.0)).unwrap();
    let task = space.task(vec![1.0]).unwrap();
    let l_t = 50;
    let nlp = transcribe(&spec, &task, l_t, None).unwrap();
    let report = solve_from_system_starts(&nlp, &SolverConfig::default()).expect("solve");
    assert_eq!(report.status, SolveStatus::Converged, "report: {report:?}");

    let oracle = double_integrator_oracle(1.0, 1.0).unwrap();
    // Objective within 2% of the continuous optimum 12·d²/T³ = 12.
    let rel_err = (report.objective - oracle.cost()).abs() / oracle.cost();
    assert!(
        rel_err < 0.02,
        "objective {} vs 12 (rel err {rel_err})",
        report.objective
    );

    // States pointwise close to the cubic optimum.
    let traj = nlp.trajectory(&report.solution).unwrap();
    let reference = sample_oracle(&oracle, l_t).unwrap();
    let mut max_dev = 0.0f64;
    for k in 0..l_t {
        for i in 0..2 {
            max_dev = max_dev.max((traj.states()[[k, i]] - reference.states()[[k, i]]).abs());
        }
    }
    assert!(max_dev < 1e-2, "max state deviation {max_dev}");

    // The discrete solution is dynamically consistent.
    let defects = defect_residuals(&traj, &spec).unwrap();
    let max_defect = defects.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(max_defect < 1e-5, "max defect {max_defect}");

    eprintln!(
        "double integrator L_T=50: obj {:.6}, dev {max_dev:.2e}, {} inner iters, {:?}",
        report.objective,
        report.inner_iterations,
        start.elapsed()
    );
}

#[test]
fn obstacle_family_picks_the_cheaper_side() {
    let space = TaskSpace::new(vec![-1.0], vec![1.0]).unwrap();
    let spec = obstacle_family(&space).unwrap();
    let cfg = SolverConfig::default();
    let l_t = 32;
    let mid = l_t / 2;

    // τ = −0.5: obstacle sits above the axis → optimal path dips below.
    let below = {
        let task = space.task(vec![-0.5]).unwrap();
        let nlp = transcribe(&spec, &task, l_t, None).unwrap();
        let report = solve_from_system_starts(&nlp, &cfg).expect("solve");
        assert_eq!(report.status, SolveStatus::Converged);
        nlp.trajectory(&report.solution).unwrap()
    };
    assert!(
        below.states()[[mid, 0]] < -0.1,
        "expected midpoint below axis, got {}",
        below.states()[[mid, 0]]
    );

    // τ = +0.5: mirror image.
    let above = {
        let task = space.task(vec![0.5]).unwrap();
        let nlp = transcribe(&spec, &task, l_t, None).unwrap();
        let report = solve_from_system_starts(&nlp, &cfg).expect("solve");
        assert_eq!(report.status, SolveStatus::Converged);
        nlp.trajectory(&report.solution).unwrap()
    };
    assert!(
        above.states()[[mid, 0]] > 0.1,
        "expected midpoint above axis, got {}",
        above.states()[[mid, 0]]
    );

    // By symmetry the two costs match across the flip.
    let cost = |traj: &gtl_core::collocation::Trajectory, task: f64| {
        let task = space.task(vec![task]).unwrap();
        let nlp = transcribe(&spec, &task, l_t, None).unwrap();
        nlp.objective(&nlp.decision_vector(traj).unwrap())
    };
    let c_below = cost(&below, -0.5);
    let c_above = cost(&above, 0.5);
    assert!(
        (c_below - c_above).abs() / c_below.max(c_above) < 0.05,
        "mirror costs diverge: {c_below} vs {c_above}"
    );
}

#[test]
fn strong_proximal_tie_pins_the_solution() {
    // With a huge proximal weight toward a near-feasible target, the solve
    // reproduces that target almost exactly. The feasibility tolerance is
    // aligned with the 1e-3 pinning radius asserted below: the sampled
    // target itself carries discretization-level defects, so demanding far
    // tighter dynamics residuals than the tie allows is not meaningful.
    let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
    let spec = double_integrator(&space, Some(1.0)).unwrap();
    let task = space.task(vec![1.0]).unwrap();
    let l_t = 30;
    let oracle = double_integrator_oracle(1.0, 1.0).unwrap();
    let target_traj = sample_oracle(&oracle, l_t).unwrap();
    let target = gtl_core::collocation::consensus_vector(&target_traj, 1.0);
    let prox = ProximalTerm::tracking(target.clone(), 1e6, 1.0);
    let nlp = transcribe(&spec, &task, l_t, Some(prox)).unwrap();
    let cfg = SolverConfig {
        feas_tol: 1e-3,
        ..SolverConfig::default()
    };
    let report = solve_from_system_starts(&nlp, &cfg).expect("solve");
    assert_eq!(report.status, SolveStatus::Converged);
    let got = nlp.consensus_of(&report.solution, 1.0);
    assert_eq!(got.len(), consensus_len(l_t, 2));
    for (g, t) in got.iter().zip(&target) {
        assert!((g - t).abs() < 1e-3, "consensus slot {g} vs target {t}");
    }
}

#[test]
fn pendulum_swingup_is_feasible_and_costs_more_with_gravity() {
    // The duration is chosen long enough that the effort of countering the
    // gravity torque (which grows with the duration) dominates the free
    // braking gravity provides on the way down; at short durations that
    // braking can make the swing *cheaper* than the gravity-free motion.
    let space = TaskSpace::new(vec![-1.6, 0.5], vec![1.6, 2.0]).unwrap();
    let task_coords = vec![1.2, 2.0];
    let l_t = 40;
    let cfg = SolverConfig::default();

    let with_gravity = {
        let spec = pendulum(&space, 2.0, 1.0).unwrap();
        let task = space.task(task_coords.clone()).unwrap();
        let nlp = transcribe(&spec, &task, l_t, None).unwrap();
        let report = solve_from_system_starts(&nlp, &cfg).expect("solve");
        assert_eq!(report.status, SolveStatus::Converged);
        assert!(report.feas_residual < 1e-6);
        let traj = nlp.trajectory(&report.solution).unwrap();
        // Reaches the goal angle at rest.
        assert!((traj.states()[[l_t - 1, 0]] - 1.2).abs() < 1e-5);
        assert!(traj.states()[[l_t - 1, 1]].abs() < 1e-5);
        report.objective
    };

    let without_gravity = {
        let spec = pendulum(&space, 0.0, 1.0).unwrap();
        let task = space.task(task_coords).unwrap();
        let nlp = transcribe(&spec, &task, l_t, None).unwrap();
        let report = solve_from_system_starts(&nlp, &cfg).expect("solve");
        assert_eq!(report.status, SolveStatus::Converged);
        report.objective
    };

    // Working against gravity needs strictly more effort than the
    // gravity-free motion, which itself matches the closed-form optimum
    // 12·Δ²/T³ for a rest-to-rest double-integrator reach.
    assert!(with_gravity > without_gravity);
    let free_oracle = 12.0 * 1.2 * 1.2 / 8.0;
    assert!(
        (without_gravity - free_oracle).abs() / free_oracle < 0.02,
        "gravity-free pendulum cost {without_gravity} vs {free_oracle}"
    );
}

#[test]
fn batch_solve_is_deterministic_across_workers() {
    let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
    let spec = double_integrator(&space, Some(1.0)).unwrap();
    let tasks = gtl_core::taskspace::sample_uniform(&space, 6, 11).unwrap();
    let l_t = 24;
    let nlps: Vec<_> = tasks
        .tasks()
        .iter()
        .map(|t| transcribe(&spec, t, l_t, None).unwrap())
        .collect();
    let warms: Vec<Option<Vec<f64>>> = nlps
        .iter()
        .map(|n| Some(n.warm_start_vectors().remove(0)))
        .collect();
    let cfg = SolverConfig::default();
    let serial = gtl_core::nlp_solver::solve_batch(&nlps, &warms, &cfg, 1);
    let pooled = gtl_core::nlp_solver::solve_batch(&nlps, &warms, &cfg, 3);
    for (a, b) in serial.iter().zip(&pooled) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.solution, b.solution);
        assert_eq!(a.status, SolveStatus::Converged);
    }
}

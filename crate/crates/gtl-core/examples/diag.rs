use gtl_core::collocation::transcribe;
use gtl_core::nlp_solver::{solve, SolverConfig};
use gtl_core::systems::double_integrator;
use gtl_core::taskspace::TaskSpace;

fn main() {
    let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
    let spec = double_integrator(&space, Some(1.0)).unwrap();
    let task = space.task(vec![1.0]).unwrap();
    let nlp = transcribe(&spec, &task, 50, None).unwrap();
    let warm = nlp.warm_start_vectors().remove(0);
    let t0 = std::time::Instant::now();
    let mut cfg = SolverConfig::default();
    let getf = |k: &str, d: f64| -> f64 {
        std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
    };
    cfg.penalty_init = getf("D_PINIT", cfg.penalty_init);
    cfg.penalty_growth = getf("D_PGROW", cfg.penalty_growth);
    cfg.penalty_max = getf("D_PMAX", cfg.penalty_max);
    cfg.max_outer = getf("D_MAXOUT", cfg.max_outer as f64) as usize;
    cfg.max_inner = getf("D_MAXIN", cfg.max_inner as f64) as usize;
    cfg.opt_tol = getf("D_OPTTOL", cfg.opt_tol);
    cfg.feas_tol = getf("D_FEASTOL", cfg.feas_tol);
    let report = solve(&nlp, Some(&warm), &cfg).unwrap();
    println!(
        "status {:?} obj {:.6} feas {:.3e} stat {:.3e} inner {} outer {} elapsed {:?}",
        report.status, report.objective, report.feas_residual, report.stationarity,
        report.inner_iterations, report.outer_iterations, t0.elapsed()
    );
    println!("feas history: {:?}", report.feas_history.iter().map(|f| format!("{f:.2e}")).collect::<Vec<_>>());
}

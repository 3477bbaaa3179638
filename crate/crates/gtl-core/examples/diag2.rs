use gtl_core::collocation::{consensus_vector, sample_oracle, transcribe, ProximalTerm};
use gtl_core::nlp_solver::{solve, SolverConfig};
use gtl_core::systems::{double_integrator, double_integrator_oracle, obstacle_family, pendulum};
use gtl_core::taskspace::TaskSpace;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    let cfg = SolverConfig::default();
    match which.as_str() {
        "prox" => {
            let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
            let spec = double_integrator(&space, Some(1.0)).unwrap();
            let task = space.task(vec![1.0]).unwrap();
            let l_t = 30;
            let oracle = double_integrator_oracle(1.0, 1.0).unwrap();
            let target_traj = sample_oracle(&oracle, l_t).unwrap();
            let target = consensus_vector(&target_traj, 1.0);
            let prox = ProximalTerm::tracking(target.clone(), 1e6, 1.0);
            let nlp = transcribe(&spec, &task, l_t, Some(prox)).unwrap();
            let mut prox_cfg = cfg.clone();
            prox_cfg.feas_tol = 1e-3;
            for (i, warm) in nlp.warm_start_vectors().into_iter().enumerate() {
                let t0 = std::time::Instant::now();
                let r = solve(&nlp, Some(&warm), &prox_cfg).unwrap();
                println!(
                    "warm {i}: status {:?} obj {:.6} feas {:.3e} stat {:.3e} inner {} outer {} {:?}",
                    r.status, r.objective, r.feas_residual, r.stationarity,
                    r.inner_iterations, r.outer_iterations, t0.elapsed()
                );
                let got = nlp.consensus_of(&r.solution, 1.0);
                let maxdev = got.iter().zip(&target).map(|(g, t)| (g - t).abs()).fold(0.0f64, f64::max);
                println!("  max consensus dev from target: {maxdev:.3e}");
            }
        }
        "obstacle" => {
            let space = TaskSpace::new(vec![-1.0], vec![1.0]).unwrap();
            let spec = obstacle_family(&space).unwrap();
            let l_t = 32;
            for tau in [-0.5, 0.5] {
                let task = space.task(vec![tau]).unwrap();
                let nlp = transcribe(&spec, &task, l_t, None).unwrap();
                for (i, warm) in nlp.warm_start_vectors().into_iter().enumerate() {
                    let t0 = std::time::Instant::now();
                    let r = solve(&nlp, Some(&warm), &cfg).unwrap();
                    let traj = nlp.trajectory(&r.solution).unwrap();
                    println!(
                        "tau {tau} warm {i}: status {:?} obj {:.6} feas {:.3e} stat {:.3e} inner {} outer {} mid {:.3} {:?}",
                        r.status, r.objective, r.feas_residual, r.stationarity,
                        r.inner_iterations, r.outer_iterations,
                        traj.states()[[l_t / 2, 0]],
                        t0.elapsed()
                    );
                }
            }
        }
        "pendulum" => {
            let space = TaskSpace::new(vec![-1.6, 0.5], vec![1.6, 2.0]).unwrap();
            let l_t = 40;
            for g in [2.0, 0.0] {
                let spec = pendulum(&space, g, 1.0).unwrap();
                let task = space.task(vec![1.2, 2.0]).unwrap();
                let nlp = transcribe(&spec, &task, l_t, None).unwrap();
                for (i, warm) in nlp.warm_start_vectors().into_iter().enumerate() {
                    let t0 = std::time::Instant::now();
                    let r = solve(&nlp, Some(&warm), &cfg).unwrap();
                    let traj = nlp.trajectory(&r.solution).unwrap();
                    println!(
                        "g {g} warm {i}: status {:?} obj {:.6} feas {:.3e} stat {:.3e} inner {} outer {} end ({:.4},{:.4}) {:?}",
                        r.status, r.objective, r.feas_residual, r.stationarity,
                        r.inner_iterations, r.outer_iterations,
                        traj.states()[[l_t - 1, 0]], traj.states()[[l_t - 1, 1]],
                        t0.elapsed()
                    );
                }
            }
        }
        other => eprintln!("unknown case {other:?}"),
    }
}

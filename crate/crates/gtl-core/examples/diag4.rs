//! Temporary probe: consensus-loop dynamics on the double integrator.
use gtl_core::approximator::{NetConfig, TrainConfig};
use gtl_core::gtl::{GtlConfig, GtlCoordinator, RhoSchedule, StoppingRule};
use gtl_core::nlp_solver::SolverConfig;
use gtl_core::systems::double_integrator;
use gtl_core::taskspace::{sample_uniform, TaskSpace};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("plateau");
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);
    let epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(300);
    let lr: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(5e-3);

    let l_t = 16;
    let space = TaskSpace::new(vec![0.4], vec![1.2]).unwrap();
    let spec = double_integrator(&space, Some(1.0)).unwrap();
    let rho = match mode {
        "plateau" => RhoSchedule::Constant { value: 5.0 },
        _ => RhoSchedule::Geometric {
            initial: 5.0,
            growth: 4.0,
        },
    };
    let cfg = GtlConfig {
        gamma: 1.0,
        alpha: 0.0,
        rho,
        max_iterations: iters,
        stopping: StoppingRule::ReconErrorDelta,
        stop_tol: 1e-14,
        resample_each_iter: false,
        thresholds: (0.01, 0.02),
        l_t,
        net: NetConfig {
            task_dim: 1,
            state_dim: 2,
            seq_len: l_t,
            n_hidden: 1,
            hidden_size: 16,
            n_upsample: 2,
            kernel_len: 5,
        },
        train: TrainConfig {
            epochs,
            batch_size: 2,
            lr,
            lr_final: lr * 1e-2,
            momentum: 0.9,
            seed: 3,
            monotone_slack: 1e-6,
        },
        solver: SolverConfig::default(),
        weight_seed: 11,
        workers: 1,
    };
    let coord = GtlCoordinator::new(&spec, space.clone(), cfg).unwrap();
    let tasks = sample_uniform(&space, n, 9).unwrap();
    let t0 = Instant::now();
    let run = coord.run(tasks).unwrap();
    println!("outcome {:?} in {:.2}s", run.outcome, t0.elapsed().as_secs_f64());
    for m in &run.metrics {
        println!(
            "k={} rho={:8.1} mean_ninf={:.4e} max_ninf={:.4e} mean_cost={:.4} dur_err={:.3e} solved={}/{}",
            m.k, m.rho, m.mean_ninf, m.max_ninf, m.mean_cost, m.mean_duration_err, m.solved, m.total
        );
    }
    let held = sample_uniform(&space, 10, 1234).unwrap();
    let eval = coord.evaluate(run.state.weights(), &held).unwrap();
    println!(
        "held-out mean {:.4e} max {:.4e} unsolved {}",
        eval.mean_ninf,
        eval.max_ninf,
        eval.unsolved.len()
    );
    if !run.solve_failures.is_empty() {
        println!("failures: {:?}", run.solve_failures);
    }
}

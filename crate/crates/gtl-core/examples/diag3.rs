//! Temporary probe: tune the smooth-map learnability experiment.
use gtl_core::approximator::*;
use gtl_core::taskspace::{sample_uniform, TaskSpace};
use ndarray::Array2;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(400);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-2);
    let hidden: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(24);
    let n_up: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(3);
    let l_t: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32);
    let batch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(16);

    let cfg = NetConfig {
        task_dim: 1,
        state_dim: 2,
        seq_len: l_t,
        n_hidden: args.get(7).map(|s| s.parse().unwrap()).unwrap_or(2),
        hidden_size: hidden,
        n_upsample: n_up,
        kernel_len: args.get(9).map(|s| s.parse().unwrap()).unwrap_or(5),
    };
    let space = TaskSpace::new(vec![-0.4], vec![0.4]).unwrap();
    let tasks = sample_uniform(&space, 200, 42).unwrap();
    let duration = 2.0;
    let targets: Vec<RegressionTarget> = tasks
        .tasks()
        .iter()
        .map(|t| {
            let d = 0.8 + t.coords()[0];
            let st = Array2::from_shape_fn((l_t, 2), |(k, j)| {
                let s = k as f64 / (l_t - 1) as f64;
                if j == 0 {
                    d * (3.0 * s * s - 2.0 * s * s * s)
                } else {
                    6.0 * d * s * (1.0 - s) / duration
                }
            });
            RegressionTarget::new(st, duration).unwrap()
        })
        .collect();
    let set = RegressionSet::new(targets, 1.0).unwrap();

    let w0 = ApproximatorWeights::init(cfg.clone(), args.get(8).map(|s| s.parse().unwrap()).unwrap_or(7)).unwrap();
    let tcfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        lr_final: lr * 1e-2,
        momentum: 0.9,
        seed: 1,
        monotone_slack: 1e-6,
    };
    let t0 = Instant::now();
    let (w, report) = train(&w0, &set, tasks.tasks(), &tcfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let errs = norm_inf_error(&w, &set, tasks.tasks()).unwrap();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let max = errs.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "epochs={epochs} lr={lr} hidden={hidden} n_up={n_up} l_t={l_t} batch={batch} params={}",
        w.len()
    );
    println!(
        "recon {:.3e} -> {:.3e}   mean ninf {mean:.4e}  max ninf {max:.4e}  ({dt:.2}s)",
        report.initial_error, report.final_error
    );

    // Per-node mean abs error over tasks, per state component.
    let mut node_err = vec![0.0f64; l_t * 2];
    for (task, tgt) in tasks.tasks().iter().zip(set.targets()) {
        let (pred, _) = predict(&w, task).unwrap();
        for ((k, j), x) in tgt.states().indexed_iter() {
            node_err[j * l_t + k] += (x - pred[[k, j]]).abs() / 200.0;
        }
    }
    let fmt = |v: &[f64]| -> String {
        v.iter().map(|x| format!("{:.1e}", x)).collect::<Vec<_>>().join(" ")
    };
    println!("pos err profile: {}", fmt(&node_err[..l_t]));
    println!("vel err profile: {}", fmt(&node_err[l_t..]));
}

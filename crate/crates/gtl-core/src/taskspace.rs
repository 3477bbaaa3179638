//! Task parameterizations: axis-aligned task boxes, deterministic sampling,
//! and sample-coverage diagnostics.
//!
//! A *task* is a point in a bounded box of R^m that parameterizes one
//! instance of the trajectory optimization problem (goal position, desired
//! duration, obstacle placement, ...). Everything downstream — solving,
//! regression, generalization bounds — is driven by finite sets of tasks
//! drawn from such a box, so sampling here is fully deterministic given a
//! seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Errors produced by task-space construction, sampling, and diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum TaskSpaceError {
    #[error("task space must have at least one dimension")]
    EmptySpace,
    #[error("bounds length mismatch: lower has {lower} entries, upper has {upper}")]
    BoundsMismatch { lower: usize, upper: usize },
    #[error("invalid interval in dimension {dim}: lower {lower} must be finite and < upper {upper}")]
    InvalidInterval { dim: usize, lower: f64, upper: f64 },
    #[error("task has {got} coordinates, space has {expected} dimensions")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("task coordinate {dim} = {value} lies outside [{lower}, {upper}]")]
    OutOfBounds {
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("cannot sample an empty task set (n = 0)")]
    EmptySample,
    #[error("covering radius needs at least 2 tasks, got {0}")]
    TooFewTasks(usize),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed task-set file: {0}")]
    Malformed(String),
}

/// An axis-aligned box `[lower_1, upper_1] × … × [lower_m, upper_m]` of task
/// parameters, with strictly positive side lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TaskSpace {
    /// Builds a task box, validating that each interval is finite and
    /// non-degenerate (`lower < upper` componentwise).
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, TaskSpaceError> {
        if lower.is_empty() {
            return Err(TaskSpaceError::EmptySpace);
        }
        if lower.len() != upper.len() {
            return Err(TaskSpaceError::BoundsMismatch {
                lower: lower.len(),
                upper: upper.len(),
            });
        }
        for (dim, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(TaskSpaceError::InvalidInterval {
                    dim,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Number of task dimensions m.
    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Lebesgue volume of the box, `Π_d (upper_d − lower_d)`. Always positive.
    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Whether `coords` lies inside the box (inclusive of the faces).
    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.len() == self.dims()
            && coords
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&c, (&lo, &hi))| c >= lo && c <= hi)
    }

    /// Validates `coords` against the box and wraps it as a [`Task`].
    pub fn task(&self, coords: Vec<f64>) -> Result<Task, TaskSpaceError> {
        if coords.len() != self.dims() {
            return Err(TaskSpaceError::DimensionMismatch {
                got: coords.len(),
                expected: self.dims(),
            });
        }
        for (dim, &c) in coords.iter().enumerate() {
            if !(c >= self.lower[dim] && c <= self.upper[dim]) {
                return Err(TaskSpaceError::OutOfBounds {
                    dim,
                    value: c,
                    lower: self.lower[dim],
                    upper: self.upper[dim],
                });
            }
        }
        Ok(Task { coords })
    }

    /// The box midpoint, always a valid task.
    pub fn center(&self) -> Task {
        Task {
            coords: self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        }
    }
}

/// One point of the task box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    coords: Vec<f64>,
}

impl Task {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dims(&self) -> usize {
        self.coords.len()
    }
}

/// A finite, ordered collection of tasks together with the seed that
/// produced it (or that labels it, for hand-built sets).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    tasks: Vec<Task>,
    seed: u64,
}

impl TaskSet {
    /// Wraps an explicit list of tasks. `seed` is recorded verbatim in the
    /// sidecar on serialization so a reloaded set stays attributable.
    pub fn from_tasks(tasks: Vec<Task>, seed: u64) -> Self {
        Self { tasks, seed }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Writes the set as CSV (one row per task, one column per dimension)
    /// plus a JSON sidecar recording the seed and the box bounds. Floats are
    /// printed in shortest round-trip form, so load-after-save is exact.
    pub fn save(
        &self,
        space: &TaskSpace,
        csv_path: &Path,
        sidecar_path: &Path,
    ) -> Result<(), TaskSpaceError> {
        let mut csv = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        for task in &self.tasks {
            let row: Vec<String> = task.coords.iter().map(|c| format!("{c}")).collect();
            writeln!(csv, "{}", row.join(","))?;
        }
        csv.flush()?;
        let sidecar = TaskSetSidecar {
            seed: self.seed,
            lower: space.lower.clone(),
            upper: space.upper.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| TaskSpaceError::Malformed(e.to_string()))?;
        std::fs::write(sidecar_path, json)?;
        Ok(())
    }

    /// Inverse of [`TaskSet::save`]; every row is re-validated against the
    /// reloaded box.
    pub fn load(csv_path: &Path, sidecar_path: &Path) -> Result<(Self, TaskSpace), TaskSpaceError> {
        let sidecar: TaskSetSidecar =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)
                .map_err(|e| TaskSpaceError::Malformed(e.to_string()))?;
        let space = TaskSpace::new(sidecar.lower, sidecar.upper)?;
        let file = std::io::BufReader::new(std::fs::File::open(csv_path)?);
        let mut tasks = Vec::new();
        for (line_no, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let coords: Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let coords = coords.map_err(|e| {
                TaskSpaceError::Malformed(format!("line {}: {e}", line_no + 1))
            })?;
            tasks.push(space.task(coords)?);
        }
        Ok((Self { tasks, seed: sidecar.seed }, space))
    }
}

#[derive(Serialize, Deserialize)]
struct TaskSetSidecar {
    seed: u64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Draws `n ≥ 1` tasks i.i.d. uniformly from `space`, deterministically in
/// `seed`: coordinates are generated task-by-task, dimension-by-dimension
/// from a counter-based stream cipher RNG, so the same `(space, n, seed)`
/// always yields the bitwise-identical set.
pub fn sample_uniform(
    space: &TaskSpace,
    n: usize,
    seed: u64,
) -> Result<TaskSet, TaskSpaceError> {
    if n == 0 {
        return Err(TaskSpaceError::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(n);
    for _ in 0..n {
        let coords = space
            .lower
            .iter()
            .zip(&space.upper)
            .map(|(&lo, &hi)| rng.gen_range(lo..hi))
            .collect();
        tasks.push(Task { coords });
    }
    Ok(TaskSet { tasks, seed })
}

/// Sample-to-sample covering radius
/// `ε_N = max_i min_{j≠i} ‖τ_i − τ_j‖₂`:
/// the worst-case distance from a sample to its nearest other sample.
/// Exhaustive O(N²) evaluation; needs N ≥ 2.
pub fn covering_radius(set: &TaskSet) -> Result<f64, TaskSpaceError> {
    if set.len() < 2 {
        return Err(TaskSpaceError::TooFewTasks(set.len()));
    }
    let dims = set.tasks[0].dims();
    let flat: Vec<f64> = set
        .tasks
        .iter()
        .flat_map(|t| t.coords.iter().copied())
        .collect();
    covering_radius_flat(&flat, dims)
}

/// [`covering_radius`] over a flat row-major `n × dims` coordinate buffer.
/// Exposed separately so foreign-language callers can use it without
/// constructing a [`TaskSet`].
pub fn covering_radius_flat(coords: &[f64], dims: usize) -> Result<f64, TaskSpaceError> {
    if dims == 0 {
        return Err(TaskSpaceError::EmptySpace);
    }
    if !coords.len().is_multiple_of(dims) {
        return Err(TaskSpaceError::BadParameter(format!(
            "coordinate buffer length {} is not a multiple of dims {dims}",
            coords.len()
        )));
    }
    let n = coords.len() / dims;
    if n < 2 {
        return Err(TaskSpaceError::TooFewTasks(n));
    }
    let mut radius: f64 = 0.0;
    for i in 0..n {
        let a = &coords[i * dims..(i + 1) * dims];
        let mut nearest = f64::INFINITY;
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = &coords[j * dims..(j + 1) * dims];
            let d2: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            nearest = nearest.min(d2.sqrt());
        }
        radius = radius.max(nearest);
    }
    Ok(radius)
}

/// Expected-coverage bound `β · (log n / n)^(1/m)` for the covering radius of
/// `n ≥ 2` uniform samples in an `m`-dimensional box, with `β > 0` a
/// domain-dependent constant. Decreasing in `n` for `n ≥ 3` and linear in
/// `β`.
pub fn gumbel_expectation_bound(n: usize, m: usize, beta: f64) -> Result<f64, TaskSpaceError> {
    if n < 2 {
        return Err(TaskSpaceError::BadParameter(format!(
            "coverage bound needs n >= 2 samples, got {n}"
        )));
    }
    if m == 0 {
        return Err(TaskSpaceError::BadParameter(
            "coverage bound needs m >= 1 dimensions".into(),
        ));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(TaskSpaceError::BadParameter(format!(
            "coverage constant beta must be a positive finite number, got {beta}"
        )));
    }
    let n = n as f64;
    Ok(beta * ((n.ln() / n).powf(1.0 / m as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_square() -> TaskSpace {
        TaskSpace::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(matches!(
            TaskSpace::new(vec![], vec![]),
            Err(TaskSpaceError::EmptySpace)
        ));
        assert!(matches!(
            TaskSpace::new(vec![0.0], vec![1.0, 2.0]),
            Err(TaskSpaceError::BoundsMismatch { .. })
        ));
        assert!(matches!(
            TaskSpace::new(vec![1.0], vec![1.0]),
            Err(TaskSpaceError::InvalidInterval { dim: 0, .. })
        ));
        assert!(matches!(
            TaskSpace::new(vec![0.0, 2.0], vec![1.0, 1.0]),
            Err(TaskSpaceError::InvalidInterval { dim: 1, .. })
        ));
        assert!(matches!(
            TaskSpace::new(vec![f64::NAN], vec![1.0]),
            Err(TaskSpaceError::InvalidInterval { .. })
        ));
    }

    #[test]
    fn volume_and_membership() {
        let space = TaskSpace::new(vec![0.2, -1.0], vec![1.8, 1.0]).unwrap();
        assert_relative_eq!(space.volume(), 1.6 * 2.0);
        assert!(space.contains(&[0.2, 1.0]));
        assert!(!space.contains(&[0.1, 0.0]));
        assert!(!space.contains(&[0.5]));
        assert!(space.task(vec![1.8, -1.0]).is_ok());
        assert!(matches!(
            space.task(vec![1.9, 0.0]),
            Err(TaskSpaceError::OutOfBounds { dim: 0, .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_in_bounds() {
        let space = TaskSpace::new(vec![0.2], vec![1.8]).unwrap();
        let a = sample_uniform(&space, 100, 42).unwrap();
        let b = sample_uniform(&space, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_uniform(&space, 100, 43).unwrap();
        assert_ne!(a, c);
        for task in a.tasks() {
            assert!(space.contains(task.coords()));
        }
        assert!(matches!(
            sample_uniform(&space, 0, 1),
            Err(TaskSpaceError::EmptySample)
        ));
    }

    #[test]
    fn covering_radius_line_example() {
        // Points {0, 0.5, 2.0}: nearest-other distances are 0.5, 0.5, 1.5.
        let space = TaskSpace::new(vec![-1.0], vec![3.0]).unwrap();
        let tasks = [0.0, 0.5, 2.0]
            .iter()
            .map(|&x| space.task(vec![x]).unwrap())
            .collect();
        let set = TaskSet::from_tasks(tasks, 0);
        assert_relative_eq!(covering_radius(&set).unwrap(), 1.5);
    }

    #[test]
    fn covering_radius_plane_example() {
        // Right-triangle corners (0,0), (1,0), (0,1): every point's nearest
        // neighbour is at distance 1.
        let space = unit_square();
        let tasks = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
            .iter()
            .map(|c| space.task(c.to_vec()).unwrap())
            .collect();
        let set = TaskSet::from_tasks(tasks, 0);
        assert_relative_eq!(covering_radius(&set).unwrap(), 1.0);
    }

    #[test]
    fn covering_radius_needs_two_points() {
        let space = unit_square();
        let set = TaskSet::from_tasks(vec![space.center()], 0);
        assert!(matches!(
            covering_radius(&set),
            Err(TaskSpaceError::TooFewTasks(1))
        ));
    }

    #[test]
    fn covering_radius_with_duplicates() {
        // Duplicate points have nearest-other distance 0 but do not reduce
        // the max over isolated points.
        let space = TaskSpace::new(vec![-1.0], vec![5.0]).unwrap();
        let tasks = [0.0, 0.0, 4.0]
            .iter()
            .map(|&x| space.task(vec![x]).unwrap())
            .collect();
        let set = TaskSet::from_tasks(tasks, 0);
        assert_relative_eq!(covering_radius(&set).unwrap(), 4.0);
    }

    #[test]
    fn gumbel_bound_reference_values() {
        // log(3)/3 and sqrt(log(100)/100), both with beta = 1.
        assert_relative_eq!(
            gumbel_expectation_bound(3, 1, 1.0).unwrap(),
            3.0_f64.ln() / 3.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            gumbel_expectation_bound(100, 2, 1.0).unwrap(),
            (100.0_f64.ln() / 100.0).sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(gumbel_expectation_bound(3, 1, 1.0).unwrap(), 0.366204096, epsilon = 1e-9);
        assert_relative_eq!(gumbel_expectation_bound(100, 2, 1.0).unwrap(), 0.214596603, epsilon = 1e-9);
    }

    #[test]
    fn gumbel_bound_validation_and_monotonicity() {
        assert!(gumbel_expectation_bound(1, 1, 1.0).is_err());
        assert!(gumbel_expectation_bound(10, 0, 1.0).is_err());
        assert!(gumbel_expectation_bound(10, 1, 0.0).is_err());
        assert!(gumbel_expectation_bound(10, 1, -1.0).is_err());
        for m in 1..=3usize {
            let mut prev = gumbel_expectation_bound(3, m, 0.7).unwrap();
            for n in 4..200usize {
                let cur = gumbel_expectation_bound(n, m, 0.7).unwrap();
                assert!(cur < prev, "bound must decrease: n={n} m={m}");
                prev = cur;
            }
        }
    }

    #[test]
    fn save_load_roundtrip_exact() {
        let space = TaskSpace::new(vec![0.2, -1.0], vec![1.8, 1.0]).unwrap();
        let set = sample_uniform(&space, 37, 9001).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("tasks.csv");
        let sidecar = dir.path().join("tasks.json");
        set.save(&space, &csv, &sidecar).unwrap();
        let (reloaded, space2) = TaskSet::load(&csv, &sidecar).unwrap();
        assert_eq!(set, reloaded);
        assert_eq!(space, space2);
    }

    proptest! {
        #[test]
        fn sampled_tasks_stay_in_box(
            seed in any::<u64>(),
            n in 1usize..64,
            lo in -5.0f64..0.0,
            width in 0.1f64..10.0,
        ) {
            let space = TaskSpace::new(vec![lo, 2.0 * lo], vec![lo + width, 2.0 * lo + width]).unwrap();
            let set = sample_uniform(&space, n, seed).unwrap();
            prop_assert_eq!(set.len(), n);
            for task in set.tasks() {
                prop_assert!(space.contains(task.coords()));
            }
        }

        #[test]
        fn covering_radius_permutation_invariant(
            seed in any::<u64>(),
            n in 2usize..24,
            swap_a in 0usize..24,
            swap_b in 0usize..24,
        ) {
            let space = TaskSpace::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
            let set = sample_uniform(&space, n, seed).unwrap();
            let base = covering_radius(&set).unwrap();
            let mut tasks = set.tasks().to_vec();
            tasks.swap(swap_a % n, swap_b % n);
            tasks.reverse();
            let permuted = TaskSet::from_tasks(tasks, set.seed());
            let shuffled = covering_radius(&permuted).unwrap();
            prop_assert_eq!(base, shuffled);
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn gumbel_bound_linear_in_beta(
            n in 2usize..500,
            m in 1usize..4,
            beta in 0.01f64..10.0,
        ) {
            let unit = gumbel_expectation_bound(n, m, 1.0).unwrap();
            let scaled = gumbel_expectation_bound(n, m, beta).unwrap();
            prop_assert!((scaled - beta * unit).abs() <= 1e-12 * scaled.abs().max(1.0));
            prop_assert!(scaled > 0.0);
        }
    }
}

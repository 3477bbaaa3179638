//! Task-conditioned trajectory approximator.
//!
//! Maps a task vector τ to a predicted state sequence X̂(τ, W) ∈ ℝ^{L_T×p}
//! and duration T̂(τ, W): a small feedforward network produces a feature
//! vector that is reshaped into a short multi-channel sequence and expanded
//! by repeated {nearest-neighbor ×2 upsample, same-padded 1D convolution,
//! tanh} stages, halving the channel count per stage, followed by a linear
//! 1×1 convolution to the state channels and a crop to exactly `L_T` nodes.
//! The duration comes from a separate linear readout of the same features.
//! Upsample-then-convolve is used deliberately instead of transposed
//! (stride-2) convolution, which is prone to checkerboard artefacts.
//!
//! Training minimizes the total reconstruction error
//! `R_γ = Σ_i ‖X_i − X̂(τ_i)‖²_F + γ (T_i − T̂(τ_i))²`
//! by deterministic mini-batch momentum descent with a cosine-decayed step,
//! returning the best full-batch iterate seen. All gradients are computed by
//! hand-written reverse-mode differentiation over the layer stack.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskspace::Task;

#[derive(Debug, Error)]
pub enum ApproximatorError {
    #[error("invalid network config: {0}")]
    BadConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid training config: {0}")]
    BadTrainConfig(String),
    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("regression target invalid: {0}")]
    BadTarget(String),
}

/// Architecture hyperparameters. The derived quantities follow the fixed
/// design rules: `channels() = p·2^{n_upsample−2}` input channels,
/// `feature_len() = ceil(seq_len / 2^{n_upsample})` initial sequence length,
/// and geometric channel halving (floored at `p`) across the upsample
/// stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Task dimension m (network input size).
    pub task_dim: usize,
    /// State dimension p (output channels).
    pub state_dim: usize,
    /// Number of trajectory nodes L_T (output length).
    pub seq_len: usize,
    /// Hidden feedforward layers before the feature layer.
    pub n_hidden: usize,
    /// Width of each hidden feedforward layer.
    pub hidden_size: usize,
    /// Number of upsample-convolve stages (≥ 2).
    pub n_upsample: usize,
    /// Convolution kernel length (odd, for symmetric same-padding).
    pub kernel_len: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), ApproximatorError> {
        let bad = |msg: String| Err(ApproximatorError::BadConfig(msg));
        if self.task_dim == 0 {
            return bad("task_dim must be positive".into());
        }
        if self.state_dim == 0 {
            return bad("state_dim must be positive".into());
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len must be at least 2, got {}", self.seq_len));
        }
        if self.n_hidden == 0 {
            return bad("n_hidden must be at least 1".into());
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive".into());
        }
        if self.n_upsample < 2 {
            return bad(format!(
                "n_upsample must be at least 2 for the channel rule p·2^(n_upsample−2), got {}",
                self.n_upsample
            ));
        }
        if self.n_upsample >= usize::BITS as usize {
            return bad(format!("n_upsample {} is absurdly large", self.n_upsample));
        }
        if self.kernel_len == 0 || self.kernel_len.is_multiple_of(2) {
            return bad(format!(
                "kernel_len must be odd (symmetric same-padding), got {}",
                self.kernel_len
            ));
        }
        Ok(())
    }

    /// Channels of the initial feature map: `p · 2^(n_upsample − 2)`.
    pub fn channels(&self) -> usize {
        self.state_dim << (self.n_upsample - 2)
    }

    /// Length of the initial feature map: `ceil(seq_len / 2^(n_upsample))`.
    pub fn feature_len(&self) -> usize {
        let denom = 1usize << self.n_upsample;
        self.seq_len.div_ceil(denom)
    }

    /// Sequence length after all upsample stages (≥ `seq_len`, then cropped).
    pub fn upsampled_len(&self) -> usize {
        self.feature_len() << self.n_upsample
    }

    /// Channel counts entering/leaving each convolution stage: element 0 is
    /// the feature-map channel count, element i (1-based) the output of
    /// stage i. Halves geometrically, floored at `state_dim`.
    pub fn channel_schedule(&self) -> Vec<usize> {
        let p = self.state_dim;
        (0..=self.n_upsample)
            .map(|i| {
                let shift = self.n_upsample.saturating_sub(2 + i);
                let c = if i + 2 > self.n_upsample { p } else { p << shift };
                c.max(p)
            })
            .collect()
    }

    /// Flat feature-vector length feeding both the deconvolution path and
    /// the duration head.
    pub fn feature_dim(&self) -> usize {
        self.channels() * self.feature_len()
    }
}

/// Offsets of one dense layer's tensors in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct DenseSpec {
    w_off: usize,
    b_off: usize,
    rows: usize,
    cols: usize,
}

/// Offsets of one convolution layer's tensors in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    w_off: usize,
    b_off: usize,
    c_out: usize,
    c_in: usize,
    k: usize,
}

/// Where every tensor lives inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    ff: Vec<DenseSpec>,
    feature: DenseSpec,
    conv: Vec<ConvSpec>,
    head: ConvSpec,
    duration: DenseSpec,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut off = 0usize;
        let mut dense = |rows: usize, cols: usize| {
            let spec = DenseSpec {
                w_off: off,
                b_off: off + rows * cols,
                rows,
                cols,
            };
            off += rows * cols + rows;
            spec
        };
        let mut ff = Vec::with_capacity(cfg.n_hidden);
        ff.push(dense(cfg.hidden_size, cfg.task_dim));
        for _ in 1..cfg.n_hidden {
            ff.push(dense(cfg.hidden_size, cfg.hidden_size));
        }
        let feature = dense(cfg.feature_dim(), cfg.hidden_size);
        let duration = dense(1, cfg.feature_dim());

        let mut conv_at = |c_out: usize, c_in: usize, k: usize| {
            let spec = ConvSpec {
                w_off: off,
                b_off: off + c_out * c_in * k,
                c_out,
                c_in,
                k,
            };
            off += c_out * c_in * k + c_out;
            spec
        };
        let sched = cfg.channel_schedule();
        let conv: Vec<ConvSpec> = (1..=cfg.n_upsample)
            .map(|i| conv_at(sched[i], sched[i - 1], cfg.kernel_len))
            .collect();
        let head = conv_at(cfg.state_dim, sched[cfg.n_upsample], 1);

        Layout {
            ff,
            feature,
            conv,
            head,
            duration,
            total: off,
        }
    }
}

/// The full parameter vector of one network, together with the architecture
/// it parameterizes and the seed its initialization was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximatorWeights {
    cfg: NetConfig,
    seed: u64,
    data: Vec<f64>,
}

impl ApproximatorWeights {
    /// All-zero parameters (useful as a linear-algebra fixture; the forward
    /// pass is then identically zero).
    pub fn zeros(cfg: NetConfig) -> Result<Self, ApproximatorError> {
        cfg.validate()?;
        let n = Layout::new(&cfg).total;
        Ok(Self {
            cfg,
            seed: 0,
            data: vec![0.0; n],
        })
    }

    /// Scaled-uniform fan-in initialization (`U(−√(3/fan_in), √(3/fan_in))`
    /// per weight tensor, zero biases), drawn deterministically from `seed`.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self, ApproximatorError> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fill_dense = |data: &mut [f64], spec: &DenseSpec, rng: &mut ChaCha8Rng| {
            let bound = (3.0 / spec.cols as f64).sqrt();
            for w in &mut data[spec.w_off..spec.w_off + spec.rows * spec.cols] {
                *w = rng.gen_range(-bound..bound);
            }
        };
        for spec in &layout.ff {
            fill_dense(&mut data, spec, &mut rng);
        }
        fill_dense(&mut data, &layout.feature, &mut rng);
        fill_dense(&mut data, &layout.duration, &mut rng);
        for spec in layout.conv.iter().chain(std::iter::once(&layout.head)) {
            let fan_in = (spec.c_in * spec.k) as f64;
            let bound = (3.0 / fan_in).sqrt();
            for w in &mut data[spec.w_off..spec.w_off + spec.c_out * spec.c_in * spec.k] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self { cfg, seed, data })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total parameter count n.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat view of all parameters.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rebuild from a flat parameter vector (round-trip of `as_slice`).
    pub fn from_flat(cfg: NetConfig, seed: u64, data: Vec<f64>) -> Result<Self, ApproximatorError> {
        cfg.validate()?;
        let expected = Layout::new(&cfg).total;
        if data.len() != expected {
            return Err(ApproximatorError::DimensionMismatch(format!(
                "parameter vector has {} entries, architecture needs {expected}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(ApproximatorError::BadConfig(
                "parameter vector contains non-finite entries".into(),
            ));
        }
        Ok(Self { cfg, seed, data })
    }

    /// Human-readable list of the operations the forward pass performs, in
    /// order. Used by callers (and tests) to assert architectural choices —
    /// notably that upsampling is nearest-neighbor and no transposed/strided
    /// convolution is present.
    pub fn layer_inventory(&self) -> Vec<String> {
        let cfg = &self.cfg;
        let sched = cfg.channel_schedule();
        let mut inv = Vec::new();
        inv.push(format!("dense {}->{}", cfg.task_dim, cfg.hidden_size));
        inv.push("tanh".into());
        for _ in 1..cfg.n_hidden {
            inv.push(format!("dense {}->{}", cfg.hidden_size, cfg.hidden_size));
            inv.push("tanh".into());
        }
        inv.push(format!("dense {}->{}", cfg.hidden_size, cfg.feature_dim()));
        inv.push("tanh".into());
        inv.push(format!(
            "reshape {}x{}",
            cfg.channels(),
            cfg.feature_len()
        ));
        for i in 1..=cfg.n_upsample {
            inv.push("upsample_nearest_x2".into());
            inv.push(format!(
                "conv1d_same k={} {}->{}",
                cfg.kernel_len,
                sched[i - 1],
                sched[i]
            ));
            inv.push("tanh".into());
        }
        inv.push(format!(
            "conv1d_same k=1 {}->{} (linear)",
            sched[cfg.n_upsample],
            cfg.state_dim
        ));
        inv.push(format!("crop {}", cfg.seq_len));
        inv.push(format!("dense_duration {}->1 (linear)", cfg.feature_dim()));
        inv
    }
}

// ---------------------------------------------------------------------------
// Layer primitives. Data is channel-major: x[c·len + t].
// ---------------------------------------------------------------------------

fn dense_forward(w: &[f64], b: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    for r in 0..rows {
        let mut acc = b[r];
        let row = &w[r * cols..(r + 1) * cols];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        y[r] = acc;
    }
}

/// Accumulates into `dw`, `db`, `dx`.
#[allow(clippy::too_many_arguments)]
fn dense_backward(
    w: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    for r in 0..rows {
        let g = dy[r];
        db[r] += g;
        let wrow = &w[r * cols..(r + 1) * cols];
        let dwrow = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dwrow[c] += g * x[c];
            dx[c] += g * wrow[c];
        }
    }
}

fn tanh_forward(x: &mut [f64]) {
    for v in x {
        *v = v.tanh();
    }
}

/// Given post-activation values `y` and upstream gradient `dy`, converts the
/// gradient in place to the pre-activation one: `dy ∘ (1 − y²)`.
fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (g, v) in dy.iter_mut().zip(y) {
        *g *= 1.0 - v * v;
    }
}

/// Nearest-neighbor ×2 upsample per channel: `y[c][2t] = y[c][2t+1] = x[c][t]`.
fn upsample2_forward(x: &[f64], channels: usize, len: usize, y: &mut [f64]) {
    for c in 0..channels {
        let xs = &x[c * len..(c + 1) * len];
        let ys = &mut y[c * 2 * len..(c + 1) * 2 * len];
        for (t, xv) in xs.iter().enumerate() {
            ys[2 * t] = *xv;
            ys[2 * t + 1] = *xv;
        }
    }
}

fn upsample2_backward(dy: &[f64], channels: usize, len: usize, dx: &mut [f64]) {
    for c in 0..channels {
        let dys = &dy[c * 2 * len..(c + 1) * 2 * len];
        let dxs = &mut dx[c * len..(c + 1) * len];
        for (t, dv) in dxs.iter_mut().enumerate() {
            *dv += dys[2 * t] + dys[2 * t + 1];
        }
    }
}

/// Same-padded 1D convolution with odd kernel `k`:
/// `y[o][t] = b[o] + Σ_i Σ_j w[o][i][j] · x[i][t + j − (k−1)/2]`,
/// reading zeros outside the sequence.
#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    w: &[f64],
    b: &[f64],
    c_out: usize,
    c_in: usize,
    k: usize,
    x: &[f64],
    len: usize,
    y: &mut [f64],
) {
    let h = (k - 1) / 2;
    for o in 0..c_out {
        let ys = &mut y[o * len..(o + 1) * len];
        ys.fill(b[o]);
        for i in 0..c_in {
            let xs = &x[i * len..(i + 1) * len];
            let ker = &w[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            for (j, kj) in ker.iter().enumerate() {
                if *kj == 0.0 {
                    continue;
                }
                // t + j − h must land in [0, len)
                let t_lo = h.saturating_sub(j);
                let t_hi = (len + h).saturating_sub(j).min(len);
                for t in t_lo..t_hi {
                    ys[t] += kj * xs[t + j - h];
                }
            }
        }
    }
}

/// Accumulates into `dw`, `db`, `dx`.
#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    w: &[f64],
    c_out: usize,
    c_in: usize,
    k: usize,
    x: &[f64],
    len: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let h = (k - 1) / 2;
    for o in 0..c_out {
        let dys = &dy[o * len..(o + 1) * len];
        db[o] += dys.iter().sum::<f64>();
        for i in 0..c_in {
            let xs = &x[i * len..(i + 1) * len];
            let dxs = &mut dx[i * len..(i + 1) * len];
            let ker = &w[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            let dker = &mut dw[(o * c_in + i) * k..(o * c_in + i + 1) * k];
            for j in 0..k {
                let t_lo = h.saturating_sub(j);
                let t_hi = (len + h).saturating_sub(j).min(len);
                let mut acc = 0.0;
                let kj = ker[j];
                for t in t_lo..t_hi {
                    let g = dys[t];
                    acc += g * xs[t + j - h];
                    dxs[t + j - h] += g * kj;
                }
                dker[j] += acc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pass (optionally recording the tape needed for backprop).
// ---------------------------------------------------------------------------

/// Intermediate activations recorded during a forward pass, post-activation
/// at every stage, which is exactly what tanh backprop needs.
struct Tape {
    /// Feedforward activations: `acts[0]` is the task input, then one entry
    /// per hidden layer, then the feature vector.
    acts: Vec<Vec<f64>>,
    /// Per conv stage: the upsampled input (conv's input) and the
    /// post-activation output.
    conv_io: Vec<(Vec<f64>, Vec<f64>)>,
}

struct Forward {
    /// Channel-major cropped states, `states[j·L_T + t]`.
    states: Vec<f64>,
    duration: f64,
    tape: Option<Tape>,
}

fn forward(cfg: &NetConfig, layout: &Layout, data: &[f64], task: &[f64], record: bool) -> Forward {
    let mut tape = record.then(|| Tape {
        acts: Vec::with_capacity(cfg.n_hidden + 2),
        conv_io: Vec::with_capacity(cfg.n_upsample),
    });
    if let Some(t) = tape.as_mut() {
        t.acts.push(task.to_vec());
    }

    // Feedforward trunk.
    let mut a = task.to_vec();
    for spec in &layout.ff {
        let mut y = vec![0.0; spec.rows];
        dense_forward(
            &data[spec.w_off..spec.b_off],
            &data[spec.b_off..spec.b_off + spec.rows],
            spec.rows,
            spec.cols,
            &a,
            &mut y,
        );
        tanh_forward(&mut y);
        if let Some(t) = tape.as_mut() {
            t.acts.push(y.clone());
        }
        a = y;
    }
    let fspec = &layout.feature;
    let mut feat = vec![0.0; fspec.rows];
    dense_forward(
        &data[fspec.w_off..fspec.b_off],
        &data[fspec.b_off..fspec.b_off + fspec.rows],
        fspec.rows,
        fspec.cols,
        &a,
        &mut feat,
    );
    tanh_forward(&mut feat);
    if let Some(t) = tape.as_mut() {
        t.acts.push(feat.clone());
    }

    // Duration head (linear readout of the features).
    let dspec = &layout.duration;
    let mut dur = [0.0];
    dense_forward(
        &data[dspec.w_off..dspec.b_off],
        &data[dspec.b_off..dspec.b_off + 1],
        1,
        dspec.cols,
        &feat,
        &mut dur,
    );

    // Deconvolution path: reshape is just reinterpretation (channel-major).
    let mut x = feat;
    let mut len = cfg.feature_len();
    for spec in &layout.conv {
        let up_len = len * 2;
        let mut up = vec![0.0; spec.c_in * up_len];
        upsample2_forward(&x, spec.c_in, len, &mut up);
        let mut y = vec![0.0; spec.c_out * up_len];
        conv1d_forward(
            &data[spec.w_off..spec.b_off],
            &data[spec.b_off..spec.b_off + spec.c_out],
            spec.c_out,
            spec.c_in,
            spec.k,
            &up,
            up_len,
            &mut y,
        );
        tanh_forward(&mut y);
        if let Some(t) = tape.as_mut() {
            t.conv_io.push((up, y.clone()));
        }
        x = y;
        len = up_len;
    }

    // Linear 1×1 head to state channels, then crop to L_T.
    let hspec = &layout.head;
    let mut full = vec![0.0; hspec.c_out * len];
    conv1d_forward(
        &data[hspec.w_off..hspec.b_off],
        &data[hspec.b_off..hspec.b_off + hspec.c_out],
        hspec.c_out,
        hspec.c_in,
        1,
        &x,
        len,
        &mut full,
    );
    // The head is linear; its backward pass needs only its input, which is
    // the last conv stage's post-activation already on the tape.
    let l_t = cfg.seq_len;
    let mut states = vec![0.0; hspec.c_out * l_t];
    for j in 0..hspec.c_out {
        states[j * l_t..(j + 1) * l_t].copy_from_slice(&full[j * len..j * len + l_t]);
    }

    Forward {
        states,
        duration: dur[0],
        tape,
    }
}

/// Reverse pass for one sample. `d_states` is channel-major over the cropped
/// output (`j·L_T + t`), `d_duration` the scalar duration gradient; both are
/// ∂loss/∂output. Accumulates ∂loss/∂W into `grad`.
fn backward(
    cfg: &NetConfig,
    layout: &Layout,
    data: &[f64],
    tape: &Tape,
    d_states: &[f64],
    d_duration: f64,
    grad: &mut [f64],
) {
    let l_t = cfg.seq_len;
    let full_len = cfg.upsampled_len();
    let hspec = &layout.head;

    // Un-crop: zero-extend the state gradient to the full sequence length.
    let mut d_full = vec![0.0; hspec.c_out * full_len];
    for j in 0..hspec.c_out {
        d_full[j * full_len..j * full_len + l_t]
            .copy_from_slice(&d_states[j * l_t..(j + 1) * l_t]);
    }

    // Linear 1×1 head.
    let last_post = &tape.conv_io.last().expect("n_upsample ≥ 2").1;
    let mut d_x = vec![0.0; hspec.c_in * full_len];
    {
        let (dw, db) = grad.split_at_mut(hspec.b_off);
        conv1d_backward(
            &data[hspec.w_off..hspec.b_off],
            hspec.c_out,
            hspec.c_in,
            1,
            last_post,
            full_len,
            &d_full,
            &mut dw[hspec.w_off..],
            &mut db[..hspec.c_out],
            &mut d_x,
        );
    }

    // Conv stages in reverse.
    let mut len = full_len;
    for (i, spec) in layout.conv.iter().enumerate().rev() {
        let (up, post) = &tape.conv_io[i];
        tanh_backward(post, &mut d_x);
        let mut d_up = vec![0.0; spec.c_in * len];
        {
            let (dw, db) = grad.split_at_mut(spec.b_off);
            conv1d_backward(
                &data[spec.w_off..spec.b_off],
                spec.c_out,
                spec.c_in,
                spec.k,
                up,
                len,
                &d_x,
                &mut dw[spec.w_off..],
                &mut db[..spec.c_out],
                &mut d_up,
            );
        }
        len /= 2;
        let mut d_prev = vec![0.0; spec.c_in * len];
        upsample2_backward(&d_up, spec.c_in, len, &mut d_prev);
        d_x = d_prev;
    }

    // d_x is now the gradient w.r.t. the feature vector (reshape is free);
    // add the duration head's contribution before going through its tanh.
    let feat = tape.acts.last().expect("feature activation");
    let dspec = &layout.duration;
    {
        let (dw, db) = grad.split_at_mut(dspec.b_off);
        dense_backward(
            &data[dspec.w_off..dspec.b_off],
            1,
            dspec.cols,
            feat,
            &[d_duration],
            &mut dw[dspec.w_off..],
            &mut db[..1],
            &mut d_x,
        );
    }
    tanh_backward(feat, &mut d_x);

    // Feature dense layer, then the feedforward trunk in reverse.
    let fspec = &layout.feature;
    let trunk_in = &tape.acts[tape.acts.len() - 2];
    let mut d_a = vec![0.0; fspec.cols];
    {
        let (dw, db) = grad.split_at_mut(fspec.b_off);
        dense_backward(
            &data[fspec.w_off..fspec.b_off],
            fspec.rows,
            fspec.cols,
            trunk_in,
            &d_x,
            &mut dw[fspec.w_off..],
            &mut db[..fspec.rows],
            &mut d_a,
        );
    }
    for (l, spec) in layout.ff.iter().enumerate().rev() {
        let post = &tape.acts[l + 1];
        tanh_backward(post, &mut d_a);
        let input = &tape.acts[l];
        let mut d_in = vec![0.0; spec.cols];
        let (dw, db) = grad.split_at_mut(spec.b_off);
        dense_backward(
            &data[spec.w_off..spec.b_off],
            spec.rows,
            spec.cols,
            input,
            &d_a,
            &mut dw[spec.w_off..],
            &mut db[..spec.rows],
            &mut d_in,
        );
        d_a = d_in;
    }
}

// ---------------------------------------------------------------------------
// Public prediction / loss API.
// ---------------------------------------------------------------------------

/// Deterministic forward pass for one task: predicted state sequence
/// (`seq_len × state_dim`) and duration.
pub fn predict(
    w: &ApproximatorWeights,
    task: &Task,
) -> Result<(Array2<f64>, f64), ApproximatorError> {
    predict_coords(w, task.coords())
}

/// `predict` on raw task coordinates.
pub fn predict_coords(
    w: &ApproximatorWeights,
    coords: &[f64],
) -> Result<(Array2<f64>, f64), ApproximatorError> {
    let cfg = &w.cfg;
    if coords.len() != cfg.task_dim {
        return Err(ApproximatorError::DimensionMismatch(format!(
            "task has {} coordinates, network expects {}",
            coords.len(),
            cfg.task_dim
        )));
    }
    let layout = Layout::new(cfg);
    let out = forward(cfg, &layout, &w.data, coords, false);
    let l_t = cfg.seq_len;
    let p = cfg.state_dim;
    let states = Array2::from_shape_fn((l_t, p), |(t, j)| out.states[j * l_t + t]);
    Ok((states, out.duration))
}

/// One task's regression target: the state sequence and duration the network
/// should reproduce (possibly multiplier-shifted by the caller).
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTarget {
    states: Array2<f64>,
    duration: f64,
}

impl RegressionTarget {
    pub fn new(states: Array2<f64>, duration: f64) -> Result<Self, ApproximatorError> {
        if !states.iter().all(|x| x.is_finite()) || !duration.is_finite() {
            return Err(ApproximatorError::BadTarget(
                "target contains non-finite entries".into(),
            ));
        }
        Ok(Self { states, duration })
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }
}

/// An aligned regression dataset: one target per task, plus the shared
/// duration weighting γ used both in the loss and in the consensus layout.
#[derive(Debug, Clone)]
pub struct RegressionSet {
    targets: Vec<RegressionTarget>,
    gamma: f64,
}

impl RegressionSet {
    pub fn new(targets: Vec<RegressionTarget>, gamma: f64) -> Result<Self, ApproximatorError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(ApproximatorError::BadTarget(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        Ok(Self { targets, gamma })
    }

    pub fn targets(&self) -> &[RegressionTarget] {
        &self.targets
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn check_alignment(
        &self,
        w: &ApproximatorWeights,
        tasks: &[Task],
    ) -> Result<(), ApproximatorError> {
        if tasks.len() != self.targets.len() {
            return Err(ApproximatorError::DimensionMismatch(format!(
                "{} tasks vs {} targets",
                tasks.len(),
                self.targets.len()
            )));
        }
        let cfg = &w.cfg;
        for (i, (task, tgt)) in tasks.iter().zip(&self.targets).enumerate() {
            if task.dims() != cfg.task_dim {
                return Err(ApproximatorError::DimensionMismatch(format!(
                    "task {i} has {} coordinates, network expects {}",
                    task.dims(),
                    cfg.task_dim
                )));
            }
            if tgt.states.dim() != (cfg.seq_len, cfg.state_dim) {
                return Err(ApproximatorError::DimensionMismatch(format!(
                    "target {i} has shape {:?}, network produces ({}, {})",
                    tgt.states.dim(),
                    cfg.seq_len,
                    cfg.state_dim
                )));
            }
        }
        Ok(())
    }
}

/// Total reconstruction error
/// `R_γ = Σ_i ‖X_i − X̂(τ_i)‖²_F + γ (T_i − T̂(τ_i))²`.
pub fn reconstruction_error(
    w: &ApproximatorWeights,
    set: &RegressionSet,
    tasks: &[Task],
) -> Result<f64, ApproximatorError> {
    set.check_alignment(w, tasks)?;
    let layout = Layout::new(&w.cfg);
    let mut total = 0.0;
    for (task, tgt) in tasks.iter().zip(&set.targets) {
        total += sample_loss(&w.cfg, &layout, &w.data, task.coords(), tgt, set.gamma, None);
    }
    Ok(total)
}

/// Per-task max-abs state error: `max_{k,j} |X_i[k,j] − X̂(τ_i)[k,j]|`.
pub fn norm_inf_error(
    w: &ApproximatorWeights,
    set: &RegressionSet,
    tasks: &[Task],
) -> Result<Vec<f64>, ApproximatorError> {
    set.check_alignment(w, tasks)?;
    let layout = Layout::new(&w.cfg);
    let l_t = w.cfg.seq_len;
    let mut out = Vec::with_capacity(tasks.len());
    for (task, tgt) in tasks.iter().zip(&set.targets) {
        let fwd = forward(&w.cfg, &layout, &w.data, task.coords(), false);
        let mut worst = 0.0f64;
        for ((t, j), x) in tgt.states.indexed_iter() {
            worst = worst.max((x - fwd.states[j * l_t + t]).abs());
        }
        out.push(worst);
    }
    Ok(out)
}

/// Summary of a per-task error sample (for reporting): mean, distribution
/// mode estimated as the peak-bin center of a fixed-width histogram, and the
/// fraction of tasks exceeding each threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub mode: f64,
    /// `(threshold, fraction of errors strictly greater)` pairs.
    pub exceedance: Vec<(f64, f64)>,
}

impl ErrorStats {
    /// `None` on an empty sample. Ties in the histogram resolve to the
    /// lowest peaked bin, so the result is deterministic.
    pub fn from_errors(errors: &[f64], thresholds: &[f64], bins: usize) -> Option<Self> {
        if errors.is_empty() || bins == 0 {
            return None;
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let hi = errors.iter().cloned().fold(0.0f64, f64::max);
        let mode = if hi == 0.0 {
            0.0
        } else {
            let width = hi / bins as f64;
            let mut counts = vec![0usize; bins];
            for e in errors {
                let b = ((e / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let peak = counts
                .iter()
                .enumerate()
                .max_by(|(ia, ca), (ib, cb)| ca.cmp(cb).then(ib.cmp(ia)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (peak as f64 + 0.5) * width
        };
        let exceedance = thresholds
            .iter()
            .map(|t| (*t, errors.iter().filter(|e| **e > *t).count() as f64 / n))
            .collect();
        Some(Self {
            mean,
            mode,
            exceedance,
        })
    }
}

/// Loss of one sample; when `grad` is given, also accumulates ∂loss/∂W.
fn sample_loss(
    cfg: &NetConfig,
    layout: &Layout,
    data: &[f64],
    coords: &[f64],
    tgt: &RegressionTarget,
    gamma: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let record = grad.is_some();
    let fwd = forward(cfg, layout, data, coords, record);
    let l_t = cfg.seq_len;
    let mut loss = 0.0;
    match grad {
        None => {
            for ((t, j), x) in tgt.states.indexed_iter() {
                let r = fwd.states[j * l_t + t] - x;
                loss += r * r;
            }
            let rt = fwd.duration - tgt.duration;
            loss += gamma * rt * rt;
        }
        Some(g) => {
            let mut d_states = vec![0.0; fwd.states.len()];
            for ((t, j), x) in tgt.states.indexed_iter() {
                let r = fwd.states[j * l_t + t] - x;
                loss += r * r;
                d_states[j * l_t + t] = 2.0 * r;
            }
            let rt = fwd.duration - tgt.duration;
            loss += gamma * rt * rt;
            let d_duration = 2.0 * gamma * rt;
            let tape = fwd.tape.as_ref().expect("recorded forward");
            backward(cfg, layout, data, tape, &d_states, d_duration, g);
        }
    }
    loss
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

/// Mini-batch momentum descent settings. The step decays along a half cosine
/// from `lr` to `lr_final` over the epochs; shuffling and everything else is
/// driven by `seed`, so training is a pure function of its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Permitted per-epoch full-batch loss increase (used by monotonicity
    /// checks; the returned weights are the best seen regardless).
    pub monotone_slack: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr: 2e-3,
            lr_final: 1e-4,
            momentum: 0.9,
            seed: 0,
            monotone_slack: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ApproximatorError> {
        if self.batch_size == 0 {
            return Err(ApproximatorError::BadTrainConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(ApproximatorError::BadTrainConfig(format!(
                "lr must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(self.lr_final > 0.0) || self.lr_final > self.lr {
            return Err(ApproximatorError::BadTrainConfig(format!(
                "lr_final must lie in (0, lr], got {}",
                self.lr_final
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ApproximatorError::BadTrainConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.monotone_slack >= 0.0) {
            return Err(ApproximatorError::BadTrainConfig(
                "monotone_slack must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// What training did: full-batch reconstruction error before/after and per
/// epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_error: f64,
    pub final_error: f64,
    pub epochs_run: usize,
    /// Full-batch reconstruction error after each epoch.
    pub epoch_errors: Vec<f64>,
}

/// Trains by deterministic mini-batch momentum descent and returns the
/// weights with the lowest full-batch reconstruction error encountered
/// (never worse than `w0`).
pub fn train(
    w0: &ApproximatorWeights,
    set: &RegressionSet,
    tasks: &[Task],
    tcfg: &TrainConfig,
) -> Result<(ApproximatorWeights, TrainReport), ApproximatorError> {
    tcfg.validate()?;
    set.check_alignment(w0, tasks)?;
    if set.is_empty() {
        return Err(ApproximatorError::BadTarget(
            "cannot train on an empty dataset".into(),
        ));
    }
    let layout = Layout::new(&w0.cfg);
    let n = w0.data.len();
    let initial_error = reconstruction_error(w0, set, tasks)?;

    let mut weights = w0.clone();
    let mut best_error = initial_error;
    let mut best_data = weights.data.clone();
    let mut velocity = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut epoch_errors = Vec::with_capacity(tcfg.epochs);

    for epoch in 0..tcfg.epochs {
        // Cosine-decayed step for this epoch.
        let progress = if tcfg.epochs > 1 {
            epoch as f64 / (tcfg.epochs - 1) as f64
        } else {
            0.0
        };
        let lr = tcfg.lr_final
            + 0.5 * (tcfg.lr - tcfg.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos());

        // Deterministic shuffle (Fisher–Yates with the run's own stream).
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        for (batch_idx, batch) in order.chunks(tcfg.batch_size).enumerate() {
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &s in batch {
                batch_loss += sample_loss(
                    &w0.cfg,
                    &layout,
                    &weights.data,
                    tasks[s].coords(),
                    &set.targets[s],
                    set.gamma,
                    Some(&mut grad),
                );
            }
            if !batch_loss.is_finite() {
                return Err(ApproximatorError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for ((w, v), g) in weights.data.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = tcfg.momentum * *v - lr * scale * g;
                *w += *v;
            }
        }

        let err = reconstruction_error(&weights, set, tasks)?;
        if !err.is_finite() {
            return Err(ApproximatorError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        epoch_errors.push(err);
        if err < best_error {
            best_error = err;
            best_data.copy_from_slice(&weights.data);
        }
    }

    weights.data = best_data;
    let report = TrainReport {
        initial_error,
        final_error: best_error,
        epochs_run: tcfg.epochs,
        epoch_errors,
    };
    Ok((weights, report))
}

//! Multiple-timescale stochastic RNN with per-level value heads and a
//! Gaussian policy head on the lowest level.
//!
//! Level `l` integrates its input bracket with rate `1/tau_l`:
//!
//! ```text
//! u_l(t) = (1 - 1/tau_l) u_l(t-1)
//!        + 1/tau_l [ W_in c_{l-1}(t) + W_rec c_l(t-1) + W_top c_{l+1}(t-1) + b_u ]
//! c_l(t) = tanh(u_l(t) + sigma_l eps_l(t))
//! ```
//!
//! with `c_0(t)` the observation. Levels are evaluated bottom-up inside a step.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};

pub const SCALE_PREACT_MIN: f64 = -10.0;
pub const SCALE_PREACT_MAX: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub levels: Vec<usize>,
    pub actions: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            input: OBS_DIM,
            levels: vec![100, 50],
            actions: ACTION_DIM,
        }
    }
}

impl NetworkShape {
    pub fn new(levels: Vec<usize>) -> Self {
        Self {
            levels,
            ..Self::default()
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    fn level_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.levels[l - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams {
    /// Bottom-up weights from the level below (or the observation), `n_l x n_{l-1}`.
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    /// Top-down weights from the level above; absent on the top level.
    pub w_top: Option<Array2<f64>>,
    pub b_u: Array1<f64>,
    pub w_v: Array1<f64>,
    /// Value bias, stored as a length-1 tensor.
    pub b_v: Array1<f64>,
}

/// All trainable tensors. Also used as the container for gradients and
/// optimizer moments, which mirror its shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub levels: Vec<LevelParams>,
    pub w_a: Array2<f64>,
    pub b_a: Array1<f64>,
    pub w_e: Array2<f64>,
    pub b_e: Array1<f64>,
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

impl NetworkParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let n = shape.num_levels();
        let levels = (0..n)
            .map(|l| {
                let size = shape.levels[l];
                LevelParams {
                    w_in: Array2::zeros((size, shape.level_input(l))),
                    w_rec: Array2::zeros((size, size)),
                    w_top: (l + 1 < n).then(|| Array2::zeros((size, shape.levels[l + 1]))),
                    b_u: Array1::zeros(size),
                    w_v: Array1::zeros(size),
                    b_v: Array1::zeros(1),
                }
            })
            .collect();
        let n1 = shape.levels[0];
        Self {
            levels,
            w_a: Array2::zeros((shape.actions, n1)),
            b_a: Array1::zeros(shape.actions),
            w_e: Array2::zeros((shape.actions, n1)),
            b_e: Array1::zeros(shape.actions),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)` per matrix, biases zero.
    pub fn init<R: Rng + ?Sized>(shape: &NetworkShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for lp in p.levels.iter_mut() {
            lp.w_in = uniform_matrix(lp.w_in.nrows(), lp.w_in.ncols(), rng);
            lp.w_rec = uniform_matrix(lp.w_rec.nrows(), lp.w_rec.ncols(), rng);
            if let Some(w) = lp.w_top.as_mut() {
                *w = uniform_matrix(w.nrows(), w.ncols(), rng);
            }
            let n = lp.w_v.len();
            lp.w_v = uniform_matrix(1, n, rng).row(0).to_owned();
        }
        p.w_a = uniform_matrix(p.w_a.nrows(), p.w_a.ncols(), rng);
        p.w_e = uniform_matrix(p.w_e.nrows(), p.w_e.ncols(), rng);
        p
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input: self.levels[0].w_in.ncols(),
            levels: self.levels.iter().map(|l| l.b_u.len()).collect(),
            actions: self.b_a.len(),
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Tensor names in canonical order. Levels are numbered from 1.
    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, lp) in self.levels.iter().enumerate() {
            let l = i + 1;
            out.push((format!("w_in.{l}"), lp.w_in.view().into_dyn()));
            out.push((format!("w_rec.{l}"), lp.w_rec.view().into_dyn()));
            if let Some(w) = &lp.w_top {
                out.push((format!("w_top.{l}"), w.view().into_dyn()));
            }
            out.push((format!("b_u.{l}"), lp.b_u.view().into_dyn()));
            out.push((format!("w_v.{l}"), lp.w_v.view().into_dyn()));
            out.push((format!("b_v.{l}"), lp.b_v.view().into_dyn()));
        }
        out.push(("w_a".into(), self.w_a.view().into_dyn()));
        out.push(("b_a".into(), self.b_a.view().into_dyn()));
        out.push(("w_e".into(), self.w_e.view().into_dyn()));
        out.push(("b_e".into(), self.b_e.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, lp) in self.levels.iter_mut().enumerate() {
            let l = i + 1;
            out.push((format!("w_in.{l}"), lp.w_in.view_mut().into_dyn()));
            out.push((format!("w_rec.{l}"), lp.w_rec.view_mut().into_dyn()));
            if let Some(w) = lp.w_top.as_mut() {
                out.push((format!("w_top.{l}"), w.view_mut().into_dyn()));
            }
            out.push((format!("b_u.{l}"), lp.b_u.view_mut().into_dyn()));
            out.push((format!("w_v.{l}"), lp.w_v.view_mut().into_dyn()));
            out.push((format!("b_v.{l}"), lp.b_v.view_mut().into_dyn()));
        }
        out.push(("w_a".into(), self.w_a.view_mut().into_dyn()));
        out.push(("b_a".into(), self.b_a.view_mut().into_dyn()));
        out.push(("w_e".into(), self.w_e.view_mut().into_dyn()));
        out.push(("b_e".into(), self.b_e.view_mut().into_dyn()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn fill(&mut self, value: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(value);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelState {
    pub u: Array1<f64>,
    pub c: Array1<f64>,
}

/// Hidden states `u` and outputs `c` of every level at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnState {
    pub levels: Vec<LevelState>,
}

impl RnnState {
    pub fn zeros(shape: &NetworkShape) -> Self {
        Self {
            levels: shape
                .levels
                .iter()
                .map(|&n| LevelState {
                    u: Array1::zeros(n),
                    c: Array1::zeros(n),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.u.iter().chain(l.c.iter()).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.u.iter().chain(l.c.iter()).all(|&v| v == 0.0))
    }
}

/// Episode-initial recurrent state.
pub fn init_state(shape: &NetworkShape) -> RnnState {
    RnnState::zeros(shape)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimescaleSpec {
    pub tau: Vec<f64>,
    /// Neuronal noise scale per level.
    pub sigma: Vec<f64>,
}

impl TimescaleSpec {
    pub fn new(tau: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if tau.len() != sigma.len() {
            return Err(Error::InvalidArgument("tau and sigma lengths differ".into()));
        }
        if let Some(t) = tau.iter().find(|&&t| !(t >= 1.0)) {
            return Err(Error::InvalidArgument(format!("timescale must be >= 1, got {t}")));
        }
        if let Some(s) = sigma.iter().find(|&&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {s}")));
        }
        Ok(Self { tau, sigma })
    }

    pub fn deterministic(tau: Vec<f64>) -> Self {
        let sigma = vec![0.0; tau.len()];
        Self { tau, sigma }
    }
}

/// Diagonal Gaussian policy: mean `p` in (-1, 1), scale `e > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyHead {
    pub mean: [f64; ACTION_DIM],
    pub scale: [f64; ACTION_DIM],
}

impl PolicyHead {
    /// Same mean, each scale raised to at least `floor`.
    pub fn floored(&self, floor: f64) -> Self {
        Self {
            mean: self.mean,
            scale: [self.scale[0].max(floor), self.scale[1].max(floor)],
        }
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn gaussian_log_density(mean: f64, scale: f64, x: f64) -> f64 {
    let z = (x - mean) / scale;
    -0.5 * z * z - scale.ln() - HALF_LN_2PI
}

/// Log-density of `a` under the diagonal Gaussian `N(mean, scale^2)`.
pub fn log_density(head: &PolicyHead, a: &[f64; ACTION_DIM]) -> f64 {
    (0..ACTION_DIM)
        .map(|k| gaussian_log_density(head.mean[k], head.scale[k], a[k]))
        .sum()
}

/// Batched recurrent state: one row per sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchState {
    pub u: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl BatchState {
    pub fn zeros(shape: &NetworkShape, batch: usize) -> Self {
        Self {
            u: shape.levels.iter().map(|&n| Array2::zeros((batch, n))).collect(),
            c: shape.levels.iter().map(|&n| Array2::zeros((batch, n))).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.u[0].nrows()
    }

    pub fn from_states(states: &[&RnnState]) -> Self {
        let levels = states[0].levels.len();
        let stack = |f: &dyn Fn(&LevelState) -> ArrayView1<f64>, l: usize| {
            let views: Vec<_> = states.iter().map(|s| f(&s.levels[l])).collect();
            ndarray::stack(Axis(0), &views).expect("consistent state shapes")
        };
        Self {
            u: (0..levels).map(|l| stack(&|s| s.u.view(), l)).collect(),
            c: (0..levels).map(|l| stack(&|s| s.c.view(), l)).collect(),
        }
    }

    pub fn row(&self, b: usize) -> RnnState {
        RnnState {
            levels: self
                .u
                .iter()
                .zip(&self.c)
                .map(|(u, c)| LevelState {
                    u: u.row(b).to_owned(),
                    c: c.row(b).to_owned(),
                })
                .collect(),
        }
    }

    /// Zeroes the rows flagged in `mask`.
    pub fn reset_rows(&mut self, mask: &[bool]) {
        for (u, c) in self.u.iter_mut().zip(self.c.iter_mut()) {
            for (b, &m) in mask.iter().enumerate() {
                if m {
                    u.row_mut(b).fill(0.0);
                    c.row_mut(b).fill(0.0);
                }
            }
        }
    }
}

/// Everything one batched forward step produces.
#[derive(Clone, Debug)]
pub struct BatchStep {
    pub state: BatchState,
    /// Value estimates, `batch x levels`.
    pub values: Array2<f64>,
    pub mean: Array2<f64>,
    /// Clamped exploration-scale preactivation.
    pub scale_preact: Array2<f64>,
    pub scale: Array2<f64>,
}

impl BatchStep {
    pub fn head(&self, b: usize) -> PolicyHead {
        let mut head = PolicyHead {
            mean: [0.0; ACTION_DIM],
            scale: [0.0; ACTION_DIM],
        };
        for k in 0..ACTION_DIM {
            head.mean[k] = self.mean[[b, k]];
            head.scale[k] = self.scale[[b, k]];
        }
        head
    }
}

/// One bottom-up step for a batch. `noise[l]` holds unit Gaussians (`batch x n_l`)
/// and is scaled by `spec.sigma[l]`.
pub fn forward_batch(
    params: &NetworkParams,
    prev: &BatchState,
    input: ArrayView2<f64>,
    noise: &[ArrayView2<f64>],
    spec: &TimescaleSpec,
) -> BatchStep {
    let nl = params.num_levels();
    let batch = input.nrows();
    let mut u_out: Vec<Array2<f64>> = Vec::with_capacity(nl);
    let mut c_out: Vec<Array2<f64>> = Vec::with_capacity(nl);
    for l in 0..nl {
        let lp = &params.levels[l];
        let below = if l == 0 { input } else { c_out[l - 1].view() };
        let mut drive = below.dot(&lp.w_in.t());
        drive += &prev.c[l].dot(&lp.w_rec.t());
        if let Some(w) = &lp.w_top {
            drive += &prev.c[l + 1].dot(&w.t());
        }
        drive += &lp.b_u;
        let rate = 1.0 / spec.tau[l];
        let mut u = prev.u[l].clone();
        u.zip_mut_with(&drive, |u, &d| *u = (1.0 - rate) * *u + rate * d);
        let sigma = spec.sigma[l];
        let mut c = u.clone();
        if sigma != 0.0 {
            c.zip_mut_with(&noise[l], |x, &e| *x += sigma * e);
        }
        c.mapv_inplace(f64::tanh);
        u_out.push(u);
        c_out.push(c);
    }
    let mut values = Array2::zeros((batch, nl));
    for l in 0..nl {
        let v = c_out[l].dot(&params.levels[l].w_v) + params.levels[l].b_v[0];
        values.column_mut(l).assign(&v);
    }
    let c1 = &c_out[0];
    let mut mean = c1.dot(&params.w_a.t());
    mean += &params.b_a;
    mean.mapv_inplace(f64::tanh);
    let mut scale_preact = c1.dot(&params.w_e.t());
    scale_preact += &params.b_e;
    scale_preact.mapv_inplace(|z| z.clamp(SCALE_PREACT_MIN, SCALE_PREACT_MAX));
    let scale = scale_preact.mapv(|z| (0.5 * z).exp());
    BatchStep {
        state: BatchState { u: u_out, c: c_out },
        values,
        mean,
        scale_preact,
        scale,
    }
}

/// Policy head evaluated on a lower-level output `c1`.
pub fn policy_head(params: &NetworkParams, c1: ArrayView1<f64>) -> PolicyHead {
    let mean = params.w_a.dot(&c1) + &params.b_a;
    let pre = params.w_e.dot(&c1) + &params.b_e;
    let mut head = PolicyHead {
        mean: [0.0; ACTION_DIM],
        scale: [0.0; ACTION_DIM],
    };
    for k in 0..ACTION_DIM {
        head.mean[k] = mean[k].tanh();
        head.scale[k] = (0.5 * pre[k].clamp(SCALE_PREACT_MIN, SCALE_PREACT_MAX)).exp();
    }
    head
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: RnnState,
    pub values: Vec<f64>,
    pub head: PolicyHead,
}

/// Single-sample forward step. `noise[l]` are unit Gaussians of length `n_l`.
pub fn forward_step(
    params: &NetworkParams,
    prev: &RnnState,
    input: &[f64],
    noise: &[Array1<f64>],
    spec: &TimescaleSpec,
) -> Result<StepOutput> {
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("network input"));
    }
    if !prev.is_finite() {
        return Err(Error::non_finite("previous recurrent state"));
    }
    let nl = params.num_levels();
    if noise.len() != nl || spec.tau.len() != nl || spec.sigma.len() != nl {
        return Err(Error::InvalidArgument("per-level arguments do not match level count".into()));
    }
    for (l, n) in noise.iter().enumerate() {
        if n.len() != params.levels[l].b_u.len() {
            return Err(Error::InvalidArgument(format!("noise for level {} has wrong length", l + 1)));
        }
    }
    let x = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise2: Vec<ArrayView2<f64>> = noise
        .iter()
        .map(|n| n.view().insert_axis(Axis(0)))
        .collect();
    let prev = BatchState::from_states(&[prev]);
    let out = forward_batch(params, &prev, x, &noise2, spec);
    Ok(StepOutput {
        state: out.state.row(0),
        values: out.values.row(0).to_vec(),
        head: out.head(0),
    })
}

/// Unit-Gaussian noise vectors, one per level.
pub fn sample_noise<R: Rng + ?Sized>(shape: &NetworkShape, rng: &mut R) -> Vec<Array1<f64>> {
    shape
        .levels
        .iter()
        .map(|&n| Array1::from_shape_simple_fn(n, || rng.sample(rand_distr::StandardNormal)))
        .collect()
}

pub fn zero_noise(shape: &NetworkShape) -> Vec<Array1<f64>> {
    shape.levels.iter().map(|&n| Array1::zeros(n)).collect()
}

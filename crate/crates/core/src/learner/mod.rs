//! Off-policy advantage actor-critic over replayed windows.
//!
//! The critic ascends `mean_{l, i} rho_i delta_i^l grad v^l` and the actor
//! ascends `mean_i rho_i delta_i^1 grad log pi(a_i)`, with `rho` and `delta`
//! held constant. Both gradients are taken by truncated BPTT through the
//! recurrent network, and each objective has its own RMSProp optimizer.

pub mod bptt;
pub mod rmsprop;

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::network::{forward_batch, BatchState, NetworkParams, RnnState, TimescaleSpec};
use crate::replay::SequenceBatch;

pub use bptt::{backward, linear_objective, step_log_density, unroll, Tape};
pub use rmsprop::{rmsprop_step, RmsProp};

/// Ties each level's discount to its timescale: `gamma = 1 - K / tau`.
pub const DISCOUNT_K: f64 = 0.16;

pub fn gamma_from_tau(tau: f64) -> Result<f64> {
    if !(tau > DISCOUNT_K) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "timescale must exceed {DISCOUNT_K} to give a positive discount, got {tau}"
        )));
    }
    Ok(1.0 - DISCOUNT_K / tau)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscountSpec {
    pub gammas: Vec<f64>,
}

impl DiscountSpec {
    pub fn from_taus(taus: &[f64]) -> Result<Self> {
        Ok(Self {
            gammas: taus.iter().map(|&t| gamma_from_tau(t)).collect::<Result<_>>()?,
        })
    }

    /// Explicit discounts, e.g. for swapped-discount experiments.
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0 && g < 1.0)) {
            return Err(Error::InvalidArgument(format!("discount must lie in (0, 1), got {g}")));
        }
        Ok(Self { gammas })
    }
}

/// Tensors excluded from optimizer updates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FreezeMask {
    frozen: BTreeSet<String>,
}

impl FreezeMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all(params: &NetworkParams) -> Self {
        Self {
            frozen: params.tensor_names().into_iter().collect(),
        }
    }

    /// Every tensor on the lower level: its incoming, recurrent and top-down
    /// weights, its bias, its value head and the policy heads.
    pub fn low_level() -> Self {
        let names = [
            "w_in.1", "w_rec.1", "w_top.1", "b_u.1", "w_a", "b_a", "w_e", "b_e", "w_v.1", "b_v.1",
        ];
        Self {
            frozen: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearnerConfig {
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Upper bound on importance ratios; infinite disables clipping.
    pub rho_max: f64,
    /// Train only the lowest level's value function.
    pub single_value: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lr_critic: 3e-4,
            lr_actor: 1e-4,
            rms_decay: rmsprop::DEFAULT_DECAY,
            rms_eps: rmsprop::DEFAULT_EPS,
            rho_max: f64::INFINITY,
            single_value: false,
        }
    }
}

/// Everything the replay unroll produces, indexed `[t]` then batch row.
#[derive(Clone, Debug)]
pub struct ReplayForward {
    pub tape: Tape,
    pub resets: Vec<Vec<bool>>,
    pub actions: Vec<Array2<f64>>,
    /// `batch x levels` per step.
    pub values: Vec<Array2<f64>>,
    /// Values one step past the window's last row, `batch x levels`.
    pub bootstrap: Array2<f64>,
    pub log_pi: Vec<Array1<f64>>,
    pub rho: Vec<Array1<f64>>,
    pub rewards: Vec<Array1<f64>>,
    pub dones: Vec<Vec<bool>>,
    pub masks: Vec<Vec<bool>>,
}

impl ReplayForward {
    pub fn real_rows(&self) -> usize {
        self.masks.iter().flatten().filter(|&&m| m).count()
    }
}

fn sample_step_noise<R: Rng + ?Sized>(
    levels: &[usize],
    batch: usize,
    spec: &TimescaleSpec,
    rng: &mut R,
) -> Vec<Array2<f64>> {
    levels
        .iter()
        .zip(&spec.sigma)
        .map(|(&n, &s)| {
            if s == 0.0 {
                Array2::zeros((batch, n))
            } else {
                Array2::from_shape_simple_fn((batch, n), || rng.sample(StandardNormal))
            }
        })
        .collect()
}

/// Unit-Gaussian noise for one replay unroll: `steps[t][l]` plus the
/// bootstrap step, each `batch x n_l`.
#[derive(Clone, Debug)]
pub struct ReplayNoise {
    pub steps: Vec<Vec<Array2<f64>>>,
    pub bootstrap: Vec<Array2<f64>>,
}

impl ReplayNoise {
    pub fn sample<R: Rng + ?Sized>(
        levels: &[usize],
        batch: usize,
        seq_len: usize,
        spec: &TimescaleSpec,
        rng: &mut R,
    ) -> Self {
        Self {
            steps: (0..seq_len).map(|_| sample_step_noise(levels, batch, spec, rng)).collect(),
            bootstrap: sample_step_noise(levels, batch, spec, rng),
        }
    }
}

/// Fresh-noise unroll of the current network over `batch`, plus log-densities
/// of the stored actions and their importance ratios.
pub fn replay_forward<R: Rng + ?Sized>(
    params: &NetworkParams,
    batch: &SequenceBatch,
    spec: &TimescaleSpec,
    floor: f64,
    rho_max: f64,
    rng: &mut R,
) -> Result<ReplayForward> {
    let noise = ReplayNoise::sample(&params.shape().levels, batch.len(), batch.seq_len(), spec, rng);
    replay_forward_with_noise(params, batch, spec, floor, rho_max, &noise)
}

/// [`replay_forward`] with caller-supplied noise.
pub fn replay_forward_with_noise(
    params: &NetworkParams,
    batch: &SequenceBatch,
    spec: &TimescaleSpec,
    floor: f64,
    rho_max: f64,
    noise: &ReplayNoise,
) -> Result<ReplayForward> {
    let b = batch.len();
    let t_len = batch.seq_len();
    if b == 0 || t_len == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if noise.steps.len() != t_len {
        return Err(Error::InvalidArgument("replay noise length does not match window".into()));
    }
    let seqs = &batch.sequences;

    let inputs: Vec<Array2<f64>> = (0..t_len)
        .map(|t| Array2::from_shape_fn((b, OBS_DIM), |(i, k)| seqs[i].rows[t].obs[k]))
        .collect();
    let actions: Vec<Array2<f64>> = (0..t_len)
        .map(|t| Array2::from_shape_fn((b, ACTION_DIM), |(i, k)| seqs[i].rows[t].action[k]))
        .collect();
    let resets: Vec<Vec<bool>> = (0..t_len)
        .map(|t| seqs.iter().map(|s| s.resets[t]).collect())
        .collect();
    let initial_refs: Vec<&RnnState> = seqs.iter().map(|s| &s.initial_state).collect();
    let initial = BatchState::from_states(&initial_refs);

    let tape = unroll(params, &initial, inputs, &resets, &noise.steps, spec)?;

    let next_obs = Array2::from_shape_fn((b, OBS_DIM), |(i, k)| seqs[i].rows[t_len - 1].next_obs[k]);
    let boot_views: Vec<_> = noise.bootstrap.iter().map(|n| n.view()).collect();
    let boot = forward_batch(params, tape.last_state(), next_obs.view(), &boot_views, spec);

    let masks: Vec<Vec<bool>> = (0..t_len)
        .map(|t| seqs.iter().map(|s| s.rows[t].grad_mask).collect())
        .collect();
    let mut log_pi = Vec::with_capacity(t_len);
    let mut rho = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let lp = step_log_density(&tape.steps[t], &actions[t], floor);
        let r = Array1::from_shape_fn(b, |i| {
            let row = &seqs[i].rows[t];
            if row.grad_mask {
                (lp[i] - row.behavior_density.ln()).exp().min(rho_max)
            } else {
                0.0
            }
        });
        if r.iter().any(|v| v.is_nan()) {
            return Err(Error::non_finite(format!("importance ratio at step {t}")));
        }
        log_pi.push(lp);
        rho.push(r);
    }
    Ok(ReplayForward {
        values: tape.steps.iter().map(|s| s.values.clone()).collect(),
        bootstrap: boot.values,
        rewards: (0..t_len)
            .map(|t| Array1::from_shape_fn(b, |i| seqs[i].rows[t].reward))
            .collect(),
        dones: (0..t_len)
            .map(|t| seqs.iter().map(|s| s.rows[t].done).collect())
            .collect(),
        tape,
        resets,
        actions,
        log_pi,
        rho,
        masks,
    })
}

/// One-step TD error with the bootstrap value held constant.
pub fn td_error(reward: f64, value: f64, next_value: f64, done: bool, gamma: f64) -> f64 {
    let boot = if done { 0.0 } else { gamma * next_value };
    reward + boot - value
}

/// TD errors for every step and level, `batch x levels` per step.
pub fn td_errors(
    values: &[Array2<f64>],
    bootstrap: &Array2<f64>,
    rewards: &[Array1<f64>],
    dones: &[Vec<bool>],
    discount: &DiscountSpec,
) -> Vec<Array2<f64>> {
    let t_len = values.len();
    (0..t_len)
        .map(|t| {
            let next = if t + 1 < t_len { &values[t + 1] } else { bootstrap };
            let v = &values[t];
            Array2::from_shape_fn(v.dim(), |(i, l)| {
                td_error(rewards[t][i], v[[i, l]], next[[i, l]], dones[t][i], discount.gammas[l])
            })
        })
        .collect()
}

/// Loss coefficients for descent: critic `cv[t]` (`batch x levels`) and actor `clp[t]`.
pub fn objective_coefficients(
    fwd: &ReplayForward,
    deltas: &[Array2<f64>],
    single_value: bool,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let real = fwd.real_rows().max(1) as f64;
    let levels = fwd.values[0].ncols();
    let used = if single_value { 1 } else { levels };
    let cv = deltas
        .iter()
        .enumerate()
        .map(|(t, d)| {
            Array2::from_shape_fn(d.dim(), |(i, l)| {
                if l < used && fwd.masks[t][i] {
                    -fwd.rho[t][i] * d[[i, l]] / (used as f64 * real)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let clp = deltas
        .iter()
        .enumerate()
        .map(|(t, d)| {
            Array1::from_shape_fn(d.nrows(), |i| {
                if fwd.masks[t][i] {
                    -fwd.rho[t][i] * d[[i, 0]] / real
                } else {
                    0.0
                }
            })
        })
        .collect();
    (cv, clp)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateDiagnostics {
    pub update_index: usize,
    pub mean_rho: f64,
    pub mean_abs_delta1: f64,
    pub mean_abs_delta2: f64,
    pub grad_norm_actor: f64,
    pub grad_norm_critic: f64,
    pub skipped: bool,
}

#[derive(Clone, Debug)]
pub struct Learner {
    pub config: LearnerConfig,
    pub discount: DiscountSpec,
    pub freeze: FreezeMask,
    critic_opt: RmsProp,
    actor_opt: RmsProp,
    updates: usize,
}

impl Learner {
    pub fn new(params: &NetworkParams, config: LearnerConfig, discount: DiscountSpec) -> Self {
        let critic_opt = RmsProp::new(params, config.lr_critic, config.rms_decay, config.rms_eps);
        let actor_opt = RmsProp::new(params, config.lr_actor, config.rms_decay, config.rms_eps);
        Self {
            config,
            discount,
            freeze: FreezeMask::none(),
            critic_opt,
            actor_opt,
            updates: 0,
        }
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn critic_optimizer(&self) -> &RmsProp {
        &self.critic_opt
    }

    pub fn actor_optimizer(&self) -> &RmsProp {
        &self.actor_opt
    }

    /// Critic and actor gradients (of the descent losses) for one batch.
    pub fn gradients<R: Rng + ?Sized>(
        &self,
        params: &NetworkParams,
        batch: &SequenceBatch,
        spec: &TimescaleSpec,
        floor: f64,
        rng: &mut R,
    ) -> Result<(NetworkParams, NetworkParams, ReplayForward, Vec<Array2<f64>>)> {
        let fwd = replay_forward(params, batch, spec, floor, self.config.rho_max, rng)?;
        Ok(self.gradients_from(params, fwd, spec, floor))
    }

    /// Gradients for an already unrolled batch.
    pub fn gradients_from(
        &self,
        params: &NetworkParams,
        fwd: ReplayForward,
        spec: &TimescaleSpec,
        floor: f64,
    ) -> (NetworkParams, NetworkParams, ReplayForward, Vec<Array2<f64>>) {
        let deltas = td_errors(&fwd.values, &fwd.bootstrap, &fwd.rewards, &fwd.dones, &self.discount);
        let (cv, clp) = objective_coefficients(&fwd, &deltas, self.config.single_value);
        let zero_cv: Vec<Array2<f64>> = cv.iter().map(|c| Array2::zeros(c.dim())).collect();
        let zero_clp: Vec<Array1<f64>> = clp.iter().map(|c| Array1::zeros(c.len())).collect();
        let g_critic = backward(params, &fwd.tape, &fwd.resets, spec, &fwd.actions, floor, &cv, &zero_clp);
        let g_actor = backward(params, &fwd.tape, &fwd.resets, spec, &fwd.actions, floor, &zero_cv, &clp);
        (g_critic, g_actor, fwd, deltas)
    }

    /// One critic and one actor step on `params`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        params: &mut NetworkParams,
        batch: &SequenceBatch,
        spec: &TimescaleSpec,
        floor: f64,
        rng: &mut R,
    ) -> Result<UpdateDiagnostics> {
        let (g_critic, g_actor, fwd, deltas) = self.gradients(params, batch, spec, floor, rng)?;
        let real = fwd.real_rows().max(1) as f64;
        let mut sum_rho = 0.0;
        let mut sum_d = [0.0; 2];
        for t in 0..deltas.len() {
            for i in 0..fwd.masks[t].len() {
                if fwd.masks[t][i] {
                    sum_rho += fwd.rho[t][i];
                    for (l, s) in sum_d.iter_mut().enumerate() {
                        if l < deltas[t].ncols() {
                            *s += deltas[t][[i, l]].abs();
                        }
                    }
                }
            }
        }
        let grad_norm_critic = g_critic.sq_norm().sqrt();
        let grad_norm_actor = g_actor.sq_norm().sqrt();
        let skipped = !(grad_norm_critic.is_finite() && grad_norm_actor.is_finite());
        if !skipped {
            self.critic_opt.step(params, &g_critic, &self.freeze);
            self.actor_opt.step(params, &g_actor, &self.freeze);
        } else {
            log::warn!("skipping update {}: non-finite gradient norm", self.updates);
        }
        let diag = UpdateDiagnostics {
            update_index: self.updates,
            mean_rho: sum_rho / real,
            mean_abs_delta1: sum_d[0] / real,
            mean_abs_delta2: sum_d[1] / real,
            grad_norm_actor,
            grad_norm_critic,
            skipped,
        };
        self.updates += 1;
        Ok(diag)
    }
}

//! Action noise, neuronal noise scales and their per-episode annealing.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Phase, ACTION_DIM};
use crate::error::{Error, Result};
use crate::network::{log_density, PolicyHead};

pub const OU_THETA: f64 = 0.3;

/// Autoregressive action noise `x <- -theta x + e sqrt(2 theta) eps`, one
/// independent process per action dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct OuProcess {
    pub x: [f64; ACTION_DIM],
    pub theta: f64,
    pub scale: f64,
}

impl OuProcess {
    pub fn new(theta: f64, scale: f64) -> Self {
        Self {
            x: [0.0; ACTION_DIM],
            theta,
            scale,
        }
    }

    pub fn reset(&mut self) {
        self.x = [0.0; ACTION_DIM];
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> [f64; ACTION_DIM] {
        let gain = self.scale * (2.0 * self.theta).sqrt();
        for x in self.x.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *x = -self.theta * *x + gain * eps;
        }
        self.x
    }

    /// Closed-form stationary variance of the recursion.
    pub fn stationary_variance(&self) -> f64 {
        2.0 * self.theta * self.scale * self.scale / (1.0 - self.theta * self.theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma0: f64,
    /// Decay constant (episodes) for phase 1.
    pub decay_first: f64,
    /// Decay constant for phases 2 and 3.
    pub decay_later: f64,
    pub action_floor: f64,
    pub action_span: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma0: 0.2,
            decay_first: 3000.0,
            decay_later: 750.0,
            action_floor: 0.1,
            action_span: 0.75,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_first > 0.0 && self.decay_later > 0.0) {
            return Err(Error::Config("noise decay constants must be positive".into()));
        }
        if !(self.sigma0 >= 0.0 && self.action_floor >= 0.0 && self.action_span >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    pub fn decay(&self, phase: Phase) -> f64 {
        match phase {
            Phase::P1 => self.decay_first,
            Phase::P2 | Phase::P3 => self.decay_later,
        }
    }

    /// Action-noise scale in normalized action units. `episode` counts from
    /// the start of the phase.
    pub fn action_noise_scale(&self, episode: usize, phase: Phase) -> f64 {
        self.action_span * (-(episode as f64) / self.decay(phase)).exp() + self.action_floor
    }

    pub fn neuronal_noise_scale(&self, episode: usize, phase: Phase) -> f64 {
        self.sigma0 * (-(episode as f64) / self.decay(phase)).exp()
    }

    /// Per-level neuronal noise, each level's schedule scaled by its multiplier.
    pub fn level_noise_scales(&self, episode: usize, phase: Phase, multipliers: &[f64]) -> Vec<f64> {
        let base = self.neuronal_noise_scale(episode, phase);
        multipliers.iter().map(|m| m * base).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExplorationMode {
    /// Mean action plus annealed OU noise; density uses the learned scale
    /// floored at the annealed scale.
    OuAnnealed,
    /// Sample directly from the learned Gaussian head.
    LearnedWhite,
}

impl ExplorationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ExplorationMode::OuAnnealed => "ou_annealed",
            ExplorationMode::LearnedWhite => "learned_white",
        }
    }
}

impl std::str::FromStr for ExplorationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ou_annealed" => Ok(Self::OuAnnealed),
            "learned_white" => Ok(Self::LearnedWhite),
            other => Err(Error::Config(format!("unknown exploration_mode {other:?}"))),
        }
    }
}

/// Lower bound applied to the learned scale when evaluating densities.
pub fn density_floor(mode: ExplorationMode, annealed_scale: f64) -> f64 {
    match mode {
        ExplorationMode::OuAnnealed => annealed_scale,
        ExplorationMode::LearnedWhite => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub action: [f64; ACTION_DIM],
    pub log_density: f64,
    pub density: f64,
}

/// Draws the executed action and its behavior density.
pub fn sample_action<R: Rng + ?Sized>(
    mode: ExplorationMode,
    head: &PolicyHead,
    ou: &mut OuProcess,
    annealed_scale: f64,
    rng: &mut R,
) -> ActionSample {
    let mut action = head.mean;
    match mode {
        ExplorationMode::OuAnnealed => {
            ou.scale = annealed_scale;
            let x = ou.step(rng);
            for k in 0..ACTION_DIM {
                action[k] += x[k];
            }
        }
        ExplorationMode::LearnedWhite => {
            for k in 0..ACTION_DIM {
                let eps: f64 = rng.sample(StandardNormal);
                action[k] += head.scale[k] * eps;
            }
        }
    }
    let log_density = log_density(&head.floored(density_floor(mode, annealed_scale)), &action);
    ActionSample {
        action,
        log_density,
        density: log_density.exp(),
    }
}

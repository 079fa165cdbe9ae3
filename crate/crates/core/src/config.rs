//! Experiment configuration: a flat `key = value` text format with `#`
//! comments. Unknown keys are rejected; every key has a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::exploration::{ExplorationMode, NoiseSchedule};
use crate::learner::{DiscountSpec, LearnerConfig, DISCOUNT_K};
use crate::network::NetworkShape;
use crate::replay::{DEFAULT_BATCH, DEFAULT_CAPACITY, DEFAULT_SEQ_LEN};

/// Architectural / noise ablations. At most one may be selected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    Full,
    /// Only the lower level's value function is trained.
    SingleV,
    /// No neuronal noise on either level.
    Deterministic,
    /// No neuronal noise on the upper level.
    HighDet,
    /// No neuronal noise on the lower level.
    LowDet,
}

impl Variant {
    pub const SWITCHES: [(&'static str, Variant); 4] = [
        ("single_v", Variant::SingleV),
        ("deterministic", Variant::Deterministic),
        ("high_det", Variant::HighDet),
        ("low_det", Variant::LowDet),
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SingleV => "single_v",
            Variant::Deterministic => "deterministic",
            Variant::HighDet => "high_det",
            Variant::LowDet => "low_det",
        }
    }

    /// Multiplier on each level's neuronal noise.
    pub fn noise_multipliers(self) -> [f64; 2] {
        match self {
            Variant::Deterministic => [0.0, 0.0],
            Variant::HighDet => [1.0, 0.0],
            Variant::LowDet => [0.0, 1.0],
            Variant::Full | Variant::SingleV => [1.0, 1.0],
        }
    }

    /// Resolves a set of boolean switches, rejecting combinations.
    pub fn from_switches(on: &[Variant]) -> Result<Self> {
        match on {
            [] => Ok(Variant::Full),
            [v] => Ok(*v),
            many => Err(Error::Config(format!(
                "conflicting variant switches: {}",
                many.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(" + ")
            ))),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "single_v" => Ok(Variant::SingleV),
            "deterministic" => Ok(Variant::Deterministic),
            "high_det" => Ok(Variant::HighDet),
            "low_det" => Ok(Variant::LowDet),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub tau: [f64; 2],
    pub discount_k: f64,
    pub levels: [usize; 2],
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub train_interval: usize,
    /// Real rows required in the buffer before the first update.
    pub warmup_rows: usize,
    pub learner: LearnerConfig,
    pub noise: NoiseSchedule,
    /// Per-level neuronal-noise multipliers, applied on top of the variant's.
    pub sigma_scale: [f64; 2],
    pub exploration_mode: ExplorationMode,
    pub variant: Variant,
    pub phase_episodes: [usize; 3],
    pub freeze_low_level_in_phase3: bool,
    /// Start phase 3 from freshly initialized weights (from-scratch control).
    pub control_reinit: bool,
    pub checkpoint_every: usize,
    pub success_window: usize,
    /// Episodes at the end of each phase whose step and neural traces are kept.
    pub trace_last_episodes: usize,
    /// Greedy evaluation cadence in episodes (0 disables).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub env: EnvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau: [2.0, 8.0],
            discount_k: DISCOUNT_K,
            levels: [100, 50],
            buffer_capacity: DEFAULT_CAPACITY,
            batch_size: DEFAULT_BATCH,
            seq_len: DEFAULT_SEQ_LEN,
            train_interval: 2,
            warmup_rows: 1000,
            learner: LearnerConfig::default(),
            noise: NoiseSchedule::default(),
            sigma_scale: [1.0, 1.0],
            exploration_mode: ExplorationMode::OuAnnealed,
            variant: Variant::Full,
            phase_episodes: [12_000, 3_000, 3_000],
            freeze_low_level_in_phase3: false,
            control_reinit: false,
            checkpoint_every: 1000,
            success_window: 200,
            trace_last_episodes: 1000,
            eval_every: 0,
            eval_episodes: 100,
            env: EnvConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean for {key}: {value:?}"))),
    }
}

/// Parses `key = value` lines into an ordered map. Later duplicates win.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_pairs(&parse_pairs(text)?)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies overrides. A `task` preset is applied before any other key;
    /// variant switches are resolved together and may not conflict.
    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        if let Some(task) = pairs.get("task") {
            self.env = match task.as_str() {
                "full" => EnvConfig::default(),
                "reduced" => EnvConfig::reduced(),
                other => return Err(Error::Config(format!("unknown task {other:?}"))),
            };
        }
        let mut switches = Vec::new();
        let mut explicit_variant = None;
        for (key, value) in pairs {
            let k = key.as_str();
            let v = value.as_str();
            match k {
                "task" => {}
                "seed" => self.seed = parse_value(k, v)?,
                "tau1" => self.tau[0] = parse_value(k, v)?,
                "tau2" => self.tau[1] = parse_value(k, v)?,
                "discount_k" => self.discount_k = parse_value(k, v)?,
                "n1" => self.levels[0] = parse_value(k, v)?,
                "n2" => self.levels[1] = parse_value(k, v)?,
                "buffer_capacity" => self.buffer_capacity = parse_value(k, v)?,
                "batch_size" => self.batch_size = parse_value(k, v)?,
                "seq_len" => self.seq_len = parse_value(k, v)?,
                "train_interval" => self.train_interval = parse_value(k, v)?,
                "warmup_rows" => self.warmup_rows = parse_value(k, v)?,
                "lr_critic" => self.learner.lr_critic = parse_value(k, v)?,
                "lr_actor" => self.learner.lr_actor = parse_value(k, v)?,
                "rms_decay" => self.learner.rms_decay = parse_value(k, v)?,
                "rms_eps" => self.learner.rms_eps = parse_value(k, v)?,
                "rho_max" => self.learner.rho_max = parse_value(k, v)?,
                "sigma0" => self.noise.sigma0 = parse_value(k, v)?,
                "noise_decay_phase1" => self.noise.decay_first = parse_value(k, v)?,
                "noise_decay_later" => self.noise.decay_later = parse_value(k, v)?,
                "action_noise_floor" => self.noise.action_floor = parse_value(k, v)?,
                "action_noise_span" => self.noise.action_span = parse_value(k, v)?,
                "sigma_scale1" => self.sigma_scale[0] = parse_value(k, v)?,
                "sigma_scale2" => self.sigma_scale[1] = parse_value(k, v)?,
                "exploration_mode" => self.exploration_mode = v.parse()?,
                "variant" => explicit_variant = Some(v.parse::<Variant>()?),
                "single_v" | "deterministic" | "high_det" | "low_det" => {
                    if parse_bool(k, v)? {
                        switches.push(v_switch(k));
                    }
                }
                "episodes_phase1" => self.phase_episodes[0] = parse_value(k, v)?,
                "episodes_phase2" => self.phase_episodes[1] = parse_value(k, v)?,
                "episodes_phase3" => self.phase_episodes[2] = parse_value(k, v)?,
                "freeze_low_level_in_phase3" => self.freeze_low_level_in_phase3 = parse_bool(k, v)?,
                "control_reinit" => self.control_reinit = parse_bool(k, v)?,
                "checkpoint_every" => self.checkpoint_every = parse_value(k, v)?,
                "success_window" => self.success_window = parse_value(k, v)?,
                "trace_last_episodes" => self.trace_last_episodes = parse_value(k, v)?,
                "eval_every" => self.eval_every = parse_value(k, v)?,
                "eval_episodes" => self.eval_episodes = parse_value(k, v)?,
                "field_size" => self.env.field_size = parse_value(k, v)?,
                "target_area" => self.env.target_area = parse_value(k, v)?,
                "target_radius" => self.env.target_radius = parse_value(k, v)?,
                "min_target_separation" => self.env.min_target_separation = parse_value(k, v)?,
                "wheel_radius" => self.env.wheel_radius = parse_value(k, v)?,
                "axle_length" => self.env.axle_length = parse_value(k, v)?,
                "max_steps" => self.env.max_steps = parse_value(k, v)?,
                "success_steps" => self.env.success_steps = parse_value(k, v)?,
                "wall_penalty" => self.env.wall_penalty = parse_value(k, v)?,
                "distance_scale" => self.env.distance_scale = parse_value(k, v)?,
                "single_target" => self.env.single_target = parse_bool(k, v)?,
                "literal_reward_typo" => self.env.literal_reward_typo = parse_bool(k, v)?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if let Some(v) = explicit_variant {
            if v != Variant::Full {
                switches.push(v);
            }
        }
        switches.dedup();
        if !switches.is_empty() || explicit_variant.is_some() {
            self.variant = Variant::from_switches(&switches)?;
        }
        self.learner.single_value = self.variant == Variant::SingleV;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &t) in self.tau.iter().enumerate() {
            if !(t >= 1.0 && t.is_finite()) {
                return Err(Error::Config(format!("tau{} must be >= 1, got {t}", i + 1)));
            }
        }
        self.discounts()?;
        let positive = [
            ("n1", self.levels[0]),
            ("n2", self.levels[1]),
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("train_interval", self.train_interval),
            ("success_window", self.success_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let lr = [
            ("lr_critic", self.learner.lr_critic),
            ("lr_actor", self.learner.lr_actor),
            ("rms_eps", self.learner.rms_eps),
        ];
        for (name, v) in lr {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.learner.rms_decay > 0.0 && self.learner.rms_decay < 1.0) {
            return Err(Error::Config("rms_decay must lie in (0, 1)".into()));
        }
        if !(self.learner.rho_max > 0.0) {
            return Err(Error::Config("rho_max must be positive".into()));
        }
        if self.sigma_scale.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("sigma scales must be non-negative".into()));
        }
        if self.phase_episodes.iter().all(|&n| n == 0) {
            return Err(Error::Config("at least one phase needs episodes".into()));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive when eval_every is set".into()));
        }
        if self.control_reinit && self.freeze_low_level_in_phase3 {
            return Err(Error::Config(
                "control_reinit and freeze_low_level_in_phase3 cannot be combined".into(),
            ));
        }
        self.noise.validate()?;
        self.env.validate()
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape::new(self.levels.to_vec())
    }

    pub fn discounts(&self) -> Result<DiscountSpec> {
        let gammas = self
            .tau
            .iter()
            .map(|&t| {
                if !(t > self.discount_k) {
                    return Err(Error::Config(format!(
                        "timescale {t} must exceed discount_k {}",
                        self.discount_k
                    )));
                }
                Ok(1.0 - self.discount_k / t)
            })
            .collect::<Result<Vec<_>>>()?;
        DiscountSpec::new(gammas)
    }

    /// Neuronal-noise multipliers after the variant and per-level scales.
    pub fn noise_multipliers(&self) -> [f64; 2] {
        let v = self.variant.noise_multipliers();
        [v[0] * self.sigma_scale[0], v[1] * self.sigma_scale[1]]
    }

    /// Every effective value as `key = value` text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let f = |x: f64| format!("{x:?}");
        put("seed", self.seed.to_string());
        put("tau1", f(self.tau[0]));
        put("tau2", f(self.tau[1]));
        put("discount_k", f(self.discount_k));
        put("n1", self.levels[0].to_string());
        put("n2", self.levels[1].to_string());
        put("buffer_capacity", self.buffer_capacity.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seq_len", self.seq_len.to_string());
        put("train_interval", self.train_interval.to_string());
        put("warmup_rows", self.warmup_rows.to_string());
        put("lr_critic", f(self.learner.lr_critic));
        put("lr_actor", f(self.learner.lr_actor));
        put("rms_decay", f(self.learner.rms_decay));
        put("rms_eps", f(self.learner.rms_eps));
        put(
            "rho_max",
            if self.learner.rho_max.is_infinite() {
                "inf".into()
            } else {
                f(self.learner.rho_max)
            },
        );
        put("sigma0", f(self.noise.sigma0));
        put("noise_decay_phase1", f(self.noise.decay_first));
        put("noise_decay_later", f(self.noise.decay_later));
        put("action_noise_floor", f(self.noise.action_floor));
        put("action_noise_span", f(self.noise.action_span));
        put("sigma_scale1", f(self.sigma_scale[0]));
        put("sigma_scale2", f(self.sigma_scale[1]));
        put("exploration_mode", self.exploration_mode.as_str().into());
        put("variant", self.variant.as_str().into());
        put("episodes_phase1", self.phase_episodes[0].to_string());
        put("episodes_phase2", self.phase_episodes[1].to_string());
        put("episodes_phase3", self.phase_episodes[2].to_string());
        put("freeze_low_level_in_phase3", self.freeze_low_level_in_phase3.to_string());
        put("control_reinit", self.control_reinit.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("success_window", self.success_window.to_string());
        put("trace_last_episodes", self.trace_last_episodes.to_string());
        put("eval_every", self.eval_every.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("field_size", f(self.env.field_size));
        put("target_area", f(self.env.target_area));
        put("target_radius", f(self.env.target_radius));
        put("min_target_separation", f(self.env.min_target_separation));
        put("wheel_radius", f(self.env.wheel_radius));
        put("axle_length", f(self.env.axle_length));
        put("max_steps", self.env.max_steps.to_string());
        put("success_steps", self.env.success_steps.to_string());
        put("wall_penalty", f(self.env.wall_penalty));
        put("distance_scale", f(self.env.distance_scale));
        put("single_target", self.env.single_target.to_string());
        put("literal_reward_typo", self.env.literal_reward_typo.to_string());
        s
    }
}

fn v_switch(key: &str) -> Variant {
    Variant::SWITCHES
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .expect("caller matched a switch key")
}

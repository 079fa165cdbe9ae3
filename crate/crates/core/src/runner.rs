//! The training loop: acting, recording, replay updates, and the
//! three-phase relearning protocol with its metrics and checkpoints.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::save_params;
use crate::config::ExperimentConfig;
use crate::env::{Action, Phase, StepTraceRow, TargetEnv};
use crate::error::{Error, Result};
use crate::exploration::{density_floor, sample_action, OuProcess, OU_THETA};
use crate::learner::{FreezeMask, Learner, UpdateDiagnostics};
use crate::network::{
    forward_step, policy_head, sample_noise, zero_noise, NetworkParams, NetworkShape, RnnState, TimescaleSpec,
};
use crate::replay::{ReplayBuffer, Transition};

/// RNG streams derived from the master seed.
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_LEARN: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_EVAL: u64 = 5;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub phase: usize,
    pub phase_episode: usize,
    pub steps: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: bool,
    pub wall_hits: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct SuccessPoint {
    episode: usize,
    phase: usize,
    phase_episode: usize,
    success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub episode: usize,
    pub phase: usize,
    pub phase_episode: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Lower-level output, upper-level hidden state and output at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralStep {
    pub c1: Vec<f64>,
    pub u2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl NeuralStep {
    fn from_state(s: &RnnState) -> Self {
        Self {
            c1: s.levels[0].c.to_vec(),
            u2: s.levels[1].u.to_vec(),
            c2: s.levels[1].c.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub phase: Phase,
    pub episode: usize,
    pub success: bool,
    /// Steps at which a sequence target was reached.
    pub contacts: Vec<usize>,
    pub steps: Vec<StepTraceRow>,
    /// `neural[t]` is the state computed at step `t`, before its action.
    pub neural: Vec<NeuralStep>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Keep episode traces in the returned summary as well as on disk.
    pub keep_traces: bool,
    /// End the run early once a greedy evaluation reaches this success rate.
    pub stop_at_eval_success: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub episodes: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateDiagnostics>,
    pub evaluations: Vec<EvalRecord>,
    pub traces: Vec<EpisodeTrace>,
    pub phase_start_params: BTreeMap<usize, NetworkParams>,
    pub phase_end_params: BTreeMap<usize, NetworkParams>,
    pub params: NetworkParams,
}

impl RunSummary {
    /// Mean success over the last `n` episodes of `phase`.
    pub fn final_success(&self, phase: usize, n: usize) -> f64 {
        let eps: Vec<&EpisodeRecord> = self.episodes.iter().filter(|e| e.phase == phase).collect();
        let tail = &eps[eps.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|e| e.success).count() as f64 / tail.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub mean_return: f64,
}

/// A level's state held fixed during a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Clamp {
    /// Zero-based level index.
    pub level: usize,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub steps: Vec<StepTraceRow>,
    pub actions: Vec<[f64; 2]>,
    pub ret: f64,
    pub success: bool,
    pub contacts: Vec<usize>,
    pub initial: crate::env::EnvState,
}

fn is_success(env: &TargetEnv, state: &crate::env::EnvState) -> bool {
    state.progress(&env.config) == env.config.sequence(state.phase).len()
        && state.step_count <= env.config.success_steps
}

/// Noise-free rollout with the mean action. With a clamp, the chosen level's
/// state is overwritten after every step and the policy head is read from the
/// (possibly clamped) lower-level output.
pub fn greedy_rollout<R: rand::Rng + ?Sized>(
    params: &NetworkParams,
    env: &TargetEnv,
    tau: &[f64],
    phase: Phase,
    clamp: Option<&Clamp>,
    rng: &mut R,
) -> Result<Rollout> {
    let shape = params.shape();
    let spec = TimescaleSpec::deterministic(tau.to_vec());
    let noise = zero_noise(&shape);
    let (mut state, mut obs) = env.reset(rng, phase)?;
    let initial = state.clone();
    let mut rnn = RnnState::zeros(&shape);
    if let Some(c) = clamp {
        apply_clamp(&mut rnn, c)?;
    }
    let mut out = Rollout {
        steps: Vec::new(),
        actions: Vec::new(),
        ret: 0.0,
        success: false,
        contacts: Vec::new(),
        initial,
    };
    let mut t = 0;
    while !state.done {
        let step = forward_step(params, &rnn, obs.as_slice(), &noise, &spec)?;
        rnn = step.state;
        let head = match clamp {
            Some(c) => {
                apply_clamp(&mut rnn, c)?;
                policy_head(params, rnn.levels[0].c.view())
            }
            None => step.head,
        };
        let action = Action::from_normalized(head.mean);
        let outcome = env.step(&state, action)?;
        if outcome.reached.is_some() {
            out.contacts.push(t);
        }
        out.ret += outcome.reward;
        out.actions.push(head.mean);
        out.steps.push(StepTraceRow::from_step(0, t, action, &outcome));
        state = outcome.state;
        obs = outcome.observation;
        t += 1;
    }
    out.success = is_success(env, &state);
    Ok(out)
}

fn apply_clamp(rnn: &mut RnnState, clamp: &Clamp) -> Result<()> {
    let level = rnn
        .levels
        .get_mut(clamp.level)
        .ok_or_else(|| Error::InvalidArgument(format!("no level {} to clamp", clamp.level + 1)))?;
    if level.u.len() != clamp.u.len() || level.c.len() != clamp.c.len() {
        return Err(Error::InvalidArgument("clamp vector sizes do not match level".into()));
    }
    level.u.assign(&ndarray::ArrayView1::from(&clamp.u[..]));
    level.c.assign(&ndarray::ArrayView1::from(&clamp.c[..]));
    Ok(())
}

/// Greedy evaluation: mean action, no neuronal noise.
pub fn evaluate<R: rand::Rng + ?Sized>(
    params: &NetworkParams,
    env: &TargetEnv,
    tau: &[f64],
    episodes: usize,
    phase: Phase,
    rng: &mut R,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("need at least one evaluation episode".into()));
    }
    let mut wins = 0;
    let mut total = 0.0;
    for _ in 0..episodes {
        let r = greedy_rollout(params, env, tau, phase, None, rng)?;
        wins += usize::from(r.success);
        total += r.ret;
    }
    Ok(EvalResult {
        success_rate: wins as f64 / episodes as f64,
        mean_return: total / episodes as f64,
    })
}

struct Writers {
    dir: PathBuf,
    episodes: csv::Writer<File>,
    updates: csv::Writer<File>,
    curve: csv::Writer<File>,
    evals: csv::Writer<File>,
}

impl Writers {
    fn open(dir: &Path) -> Result<Self> {
        for sub in ["", "checkpoints", "traces"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let open = |name: &str| {
            let p = dir.join(name);
            csv::Writer::from_path(&p).map_err(|e| Error::csv(&p, e))
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            episodes: open("episodes.csv")?,
            updates: open("updates.csv")?,
            curve: open("success_curve.csv")?,
            evals: open("evaluations.csv")?,
        })
    }

    fn flush(&mut self) -> Result<()> {
        let dir = self.dir.clone();
        for w in [&mut self.episodes, &mut self.updates, &mut self.curve, &mut self.evals] {
            w.flush().map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

fn ser<T: Serialize>(w: &mut csv::Writer<File>, dir: &Path, row: &T) -> Result<()> {
    w.serialize(row).map_err(|e| Error::csv(dir, e))
}

/// Writes `traces/phase{p}_steps.csv` and `traces/phase{p}_neural.csv`.
pub fn write_traces(dir: &Path, phase: Phase, traces: &[EpisodeTrace]) -> Result<()> {
    let steps_path = dir.join(format!("phase{}_steps.csv", phase.number()));
    let rows: Vec<StepTraceRow> = traces.iter().flat_map(|t| t.steps.iter().cloned()).collect();
    crate::env::write_step_trace(&steps_path, &rows)?;
    let neural_path = dir.join(format!("phase{}_neural.csv", phase.number()));
    let mut w = csv::Writer::from_path(&neural_path).map_err(|e| Error::csv(&neural_path, e))?;
    if let Some(first) = traces.iter().find_map(|t| t.neural.first()) {
        let mut header = vec!["episode".to_string(), "step".to_string()];
        for (name, n) in [("c1", first.c1.len()), ("u2", first.u2.len()), ("c2", first.c2.len())] {
            header.extend((0..n).map(|k| format!("{name}_{k}")));
        }
        w.write_record(&header).map_err(|e| Error::csv(&neural_path, e))?;
        for t in traces {
            for (step, n) in t.neural.iter().enumerate() {
                let mut rec = vec![t.episode.to_string(), step.to_string()];
                rec.extend(n.c1.iter().chain(&n.u2).chain(&n.c2).map(|v| format!("{v:?}")));
                w.write_record(&rec).map_err(|e| Error::csv(&neural_path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&neural_path, e))
}

/// Training state carried across phases.
struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    env: TargetEnv,
    shape: NetworkShape,
    params: NetworkParams,
    learner: Learner,
    buffer: ReplayBuffer,
    env_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    learn_rng: ChaCha8Rng,
    init_rng: ChaCha8Rng,
    total_steps: usize,
    writers: Option<Writers>,
}

impl Trainer<'_> {
    fn checkpoint(&self, name: &str, phase: Phase, episode: usize) -> Result<()> {
        let Some(w) = &self.writers else { return Ok(()) };
        let mut meta = BTreeMap::new();
        meta.insert("phase".into(), phase.number().to_string());
        meta.insert("episode".into(), episode.to_string());
        meta.insert("seed".into(), self.cfg.seed.to_string());
        meta.insert("tau1".into(), format!("{:?}", self.cfg.tau[0]));
        meta.insert("tau2".into(), format!("{:?}", self.cfg.tau[1]));
        meta.insert("variant".into(), self.cfg.variant.as_str().into());
        save_params(&w.dir.join("checkpoints").join(name), &self.params, meta)
    }

    fn fresh_learner(cfg: &ExperimentConfig, params: &NetworkParams) -> Result<Learner> {
        Ok(Learner::new(params, cfg.learner.clone(), cfg.discounts()?))
    }

    /// One exploratory training episode.
    fn episode(
        &mut self,
        phase: Phase,
        phase_episode: usize,
        episode: usize,
        record: bool,
        updates: &mut Vec<UpdateDiagnostics>,
    ) -> Result<(EpisodeRecord, Option<EpisodeTrace>)> {
        let cfg = self.cfg;
        let annealed = cfg.noise.action_noise_scale(phase_episode, phase);
        let sigma = cfg
            .noise
            .level_noise_scales(phase_episode, phase, &cfg.noise_multipliers());
        let spec = TimescaleSpec::new(cfg.tau.to_vec(), sigma)?;
        let floor = density_floor(cfg.exploration_mode, annealed);
        let mut ou = OuProcess::new(OU_THETA, annealed);

        let (mut state, mut obs) = self.env.reset(&mut self.env_rng, phase)?;
        let mut rnn = RnnState::zeros(&self.shape);
        let mut rec = EpisodeRecord {
            episode,
            phase: phase.number(),
            phase_episode,
            steps: 0,
            ret: 0.0,
            success: false,
            wall_hits: 0,
        };
        let mut trace = record.then(|| EpisodeTrace {
            phase,
            episode,
            success: false,
            contacts: Vec::new(),
            steps: Vec::new(),
            neural: Vec::new(),
        });
        let mut t = 0;
        while !state.done {
            let noise = sample_noise(&self.shape, &mut self.act_rng);
            let out = forward_step(&self.params, &rnn, obs.as_slice(), &noise, &spec)?;
            let sample = sample_action(cfg.exploration_mode, &out.head, &mut ou, annealed, &mut self.act_rng);
            let action = Action::from_normalized(sample.action);
            let outcome = self.env.step(&state, action)?;
            self.buffer.push(Transition {
                obs: obs.0,
                next_obs: outcome.observation.0,
                action: sample.action,
                reward: outcome.reward,
                done: outcome.done,
                behavior_density: sample.density.max(f64::MIN_POSITIVE),
                state: out.state.clone(),
                grad_mask: true,
            })?;
            if let Some(tr) = trace.as_mut() {
                tr.neural.push(NeuralStep::from_state(&out.state));
                tr.steps.push(StepTraceRow::from_step(episode, t, action, &outcome));
                if outcome.reached.is_some() {
                    tr.contacts.push(t);
                }
            }
            rec.ret += outcome.reward;
            rec.wall_hits += usize::from(outcome.state.wall_hit);
            rnn = out.state;
            state = outcome.state;
            obs = outcome.observation;
            t += 1;
            self.total_steps += 1;
            if self.total_steps % cfg.train_interval == 0 && self.buffer.real_rows() >= cfg.warmup_rows {
                self.train_step(&spec, floor, updates)?;
            }
        }
        self.buffer.end_episode();
        rec.steps = t;
        rec.success = is_success(&self.env, &state);
        if let Some(tr) = trace.as_mut() {
            tr.success = rec.success;
        }
        Ok((rec, trace))
    }

    fn train_step(&mut self, spec: &TimescaleSpec, floor: f64, updates: &mut Vec<UpdateDiagnostics>) -> Result<()> {
        let batch = self
            .buffer
            .sample_batch(&mut self.learn_rng, self.cfg.batch_size, self.cfg.seq_len)?;
        let diag = self
            .learner
            .update(&mut self.params, &batch, spec, floor, &mut self.learn_rng)?;
        if !self.params.is_finite() {
            return Err(Error::non_finite("parameters after update"));
        }
        if let Some(w) = self.writers.as_mut() {
            ser(&mut w.updates, &w.dir, &diag)?;
        }
        updates.push(diag);
        Ok(())
    }
}

/// Runs every configured phase in order. Artifacts go under `opts.out_dir`
/// when given: `episodes.csv`, `updates.csv`, `success_curve.csv`,
/// `evaluations.csv`, `checkpoints/` and `traces/`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let shape = cfg.shape();
    let mut init_rng = stream_rng(cfg.seed, STREAM_INIT);
    let params = NetworkParams::init(&shape, &mut init_rng);
    let writers = match &opts.out_dir {
        Some(dir) => {
            let w = Writers::open(dir)?;
            let p = dir.join("resolved_config");
            fs::write(&p, cfg.to_text()).map_err(|e| Error::io(&p, e))?;
            Some(w)
        }
        None => None,
    };
    let mut tr = Trainer {
        cfg,
        env: TargetEnv::new(cfg.env.clone())?,
        learner: Trainer::fresh_learner(cfg, &params)?,
        buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.seq_len, shape.clone())?,
        shape,
        params,
        env_rng: stream_rng(cfg.seed, STREAM_ENV),
        act_rng: stream_rng(cfg.seed, STREAM_ACT),
        learn_rng: stream_rng(cfg.seed, STREAM_LEARN),
        init_rng,
        total_steps: 0,
        writers,
    };
    let mut summary = RunSummary {
        episodes: Vec::new(),
        updates: Vec::new(),
        evaluations: Vec::new(),
        traces: Vec::new(),
        phase_start_params: BTreeMap::new(),
        phase_end_params: BTreeMap::new(),
        params: tr.params.clone(),
    };
    let result = run_phases(&mut tr, opts, &mut summary);
    if let Err(e) = &result {
        if matches!(e, Error::NonFinite { .. }) {
            log::error!("aborting run: {e}; writing diagnostic checkpoint");
            let _ = tr.checkpoint("diagnostic.ckpt", Phase::P1, summary.episodes.len());
        }
        if let Some(w) = tr.writers.as_mut() {
            let _ = w.flush();
        }
    }
    result?;
    summary.params = tr.params.clone();
    Ok(summary)
}

fn run_phases(tr: &mut Trainer<'_>, opts: &RunOptions, summary: &mut RunSummary) -> Result<()> {
    let cfg = tr.cfg;
    let mut episode = 0usize;
    for phase in Phase::ALL {
        let n = cfg.phase_episodes[phase.number() - 1];
        if n == 0 {
            continue;
        }
        tr.buffer.clear();
        if phase == Phase::P3 {
            if cfg.control_reinit {
                tr.params = NetworkParams::init(&tr.shape, &mut tr.init_rng);
                tr.learner = Trainer::fresh_learner(cfg, &tr.params)?;
            }
            if cfg.freeze_low_level_in_phase3 {
                tr.learner.freeze = FreezeMask::low_level();
            }
        } else {
            tr.learner.freeze = FreezeMask::none();
        }
        summary.phase_start_params.insert(phase.number(), tr.params.clone());
        log::info!("phase {} start: {n} episodes", phase.number());

        let mut window: VecDeque<bool> = VecDeque::with_capacity(cfg.success_window);
        let mut phase_traces = Vec::new();
        let trace_from = n.saturating_sub(cfg.trace_last_episodes);
        for pe in 0..n {
            let record = pe >= trace_from && cfg.trace_last_episodes > 0;
            let (rec, trace) = tr.episode(phase, pe, episode, record, &mut summary.updates)?;
            if window.len() == cfg.success_window {
                window.pop_front();
            }
            window.push_back(rec.success);
            let rate = window.iter().filter(|&&s| s).count() as f64 / window.len() as f64;
            if let Some(w) = tr.writers.as_mut() {
                ser(&mut w.episodes, &w.dir, &rec)?;
                let point = SuccessPoint {
                    episode,
                    phase: phase.number(),
                    phase_episode: pe,
                    success_rate: rate,
                };
                ser(&mut w.curve, &w.dir, &point)?;
                if (pe + 1) % 100 == 0 {
                    w.flush()?;
                }
            }
            if (pe + 1) % 500 == 0 {
                log::info!(
                    "phase {} episode {}: success(ma) {:.3}, updates {}",
                    phase.number(),
                    pe + 1,
                    rate,
                    summary.updates.len()
                );
            }
            summary.episodes.push(rec);
            if let Some(t) = trace {
                phase_traces.push(t);
            }
            if cfg.eval_every > 0 && (pe + 1) % cfg.eval_every == 0 {
                let mut rng = stream_rng(cfg.seed, STREAM_EVAL);
                let r = evaluate(&tr.params, &tr.env, &cfg.tau, cfg.eval_episodes, phase, &mut rng)?;
                let e = EvalRecord {
                    episode,
                    phase: phase.number(),
                    phase_episode: pe,
                    success_rate: r.success_rate,
                    mean_return: r.mean_return,
                };
                if let Some(w) = tr.writers.as_mut() {
                    ser(&mut w.evals, &w.dir, &e)?;
                }
                summary.evaluations.push(e);
                if opts.stop_at_eval_success.is_some_and(|t| r.success_rate >= t) {
                    log::info!("evaluation target reached at episode {}", episode + 1);
                    summary.phase_end_params.insert(phase.number(), tr.params.clone());
                    if let Some(w) = tr.writers.as_mut() {
                        w.flush()?;
                    }
                    return Ok(());
                }
            }
            episode += 1;
            if cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0 {
                tr.checkpoint(&format!("episode_{episode:06}.ckpt"), phase, episode)?;
            }
        }
        tr.checkpoint(&format!("phase{}_end.ckpt", phase.number()), phase, episode)?;
        summary.phase_end_params.insert(phase.number(), tr.params.clone());
        if let Some(w) = tr.writers.as_mut() {
            w.flush()?;
            write_traces(&w.dir.join("traces"), phase, &phase_traces)?;
        }
        if opts.keep_traces {
            summary.traces.extend(phase_traces);
        }
    }
    tr.checkpoint("final.ckpt", Phase::P3, episode)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::from_text(
            "task = reduced\nn1 = 8\nn2 = 4\nwarmup_rows = 50\nbatch_size = 4\nseq_len = 6\nmax_steps = 20\n\
             episodes_phase1 = 6\nepisodes_phase2 = 3\nepisodes_phase3 = 3\ntrace_last_episodes = 2\n",
        )
        .unwrap();
        c.seed = 3;
        c
    }

    #[test]
    fn phases_run_with_exact_episode_counts() {
        let c = tiny_config();
        let s = run_experiment(&c, &RunOptions { keep_traces: true, ..Default::default() }).unwrap();
        let per_phase: Vec<usize> = (1..=3).map(|p| s.episodes.iter().filter(|e| e.phase == p).count()).collect();
        assert_eq!(per_phase, vec![6, 3, 3]);
        assert!(!s.updates.is_empty());
        assert_eq!(s.traces.len(), 6);
        for t in &s.traces {
            assert_eq!(t.steps.len(), t.neural.len());
        }
    }

    #[test]
    fn same_seed_same_run() {
        let c = tiny_config();
        let a = run_experiment(&c, &RunOptions::default()).unwrap();
        let b = run_experiment(&c, &RunOptions::default()).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn frozen_tensors_survive_phase_three() {
        let mut c = tiny_config();
        c.freeze_low_level_in_phase3 = true;
        let s = run_experiment(&c, &RunOptions::default()).unwrap();
        let start = &s.phase_start_params[&3];
        let end = &s.phase_end_params[&3];
        let mask = FreezeMask::low_level();
        let mut moved = false;
        for ((name, a), (_, b)) in start.tensors().into_iter().zip(end.tensors()) {
            if mask.is_frozen(&name) {
                assert_eq!(a, b, "{name} changed");
            } else if a != b {
                moved = true;
            }
        }
        assert!(moved, "unfrozen tensors should still learn");
    }

    #[test]
    fn control_reinit_restarts_phase_three() {
        let mut c = tiny_config();
        c.control_reinit = true;
        let s = run_experiment(&c, &RunOptions::default()).unwrap();
        assert_ne!(s.phase_start_params[&3], s.phase_end_params[&2]);
        let plain = run_experiment(&tiny_config(), &RunOptions::default()).unwrap();
        assert_eq!(plain.phase_start_params[&3], plain.phase_end_params[&2]);
    }
}

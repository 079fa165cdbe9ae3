//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    aggregate_consistency, clamp_experiment, clamp_sources, load_traces, trace_consistency, trace_pca, write_csv,
    ClampTrajectoryRow,
};
use crate::checkpoint::load_params;
use crate::config::{parse_pairs, ExperimentConfig, Variant};
use crate::env::{Phase, TargetEnv};
use crate::error::{Error, Result};
use crate::runner::{evaluate, run_experiment, stream_rng, RunOptions};

#[derive(Debug, Parser)]
#[command(name = "remaster", version, about = "Multiple-timescale recurrent actor-critic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the configured training phases.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Sub-goal representation consistency of traced episodes.
    AnalyzeConsistency(ConsistencyArgs),
    /// PCA projection of time-normalized level outputs.
    AnalyzePca(PcaArgs),
    /// Rollouts with one level's state clamped to segment averages.
    Clamp(ClampArgs),
    /// Print the fully resolved configuration.
    ExportConfig(ExportArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub single_v: bool,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub high_det: bool,
    #[arg(long)]
    pub low_det: bool,
    #[arg(long)]
    pub freeze_low_level_in_phase3: bool,
    #[arg(long)]
    pub control_reinit: bool,
    #[arg(long, value_name = "MODE")]
    pub exploration_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "runs/default")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1)]
    pub phase: usize,
    /// Config for the environment; timescales come from the checkpoint unless overridden.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    /// Training output directories, one per agent.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub phase: usize,
    /// Use only the last N traced episodes of the phase.
    #[arg(long, default_value_t = 1000)]
    pub last: usize,
    #[arg(long, default_value = "consistency.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub phase: usize,
    #[arg(long, default_value_t = 2)]
    pub level: usize,
    #[arg(long, default_value_t = 1000)]
    pub last: usize,
    #[arg(long, default_value = "pca.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClampArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run's final checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub phase: usize,
    /// Level whose state is clamped (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub level: usize,
    #[arg(long, default_value_t = 500)]
    pub last: usize,
    #[arg(long, default_value_t = 30)]
    pub layouts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "clamp_trajectories.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Loads a config file (or defaults) and applies command-line overrides.
pub fn resolve_config(path: Option<&Path>, o: &Overrides) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    let mut pairs = parse_pairs(&text)?;
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {kv:?}")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = o.seed {
        pairs.insert("seed".into(), seed.to_string());
    }
    let flags = [
        (o.single_v, Variant::SingleV),
        (o.deterministic, Variant::Deterministic),
        (o.high_det, Variant::HighDet),
        (o.low_det, Variant::LowDet),
    ];
    let chosen: Vec<Variant> = flags.iter().filter(|(on, _)| *on).map(|(_, v)| *v).collect();
    if !chosen.is_empty() {
        let v = Variant::from_switches(&chosen)?;
        for (k, _) in Variant::SWITCHES {
            pairs.remove(k);
        }
        pairs.insert("variant".into(), v.as_str().into());
    }
    if o.freeze_low_level_in_phase3 {
        pairs.insert("freeze_low_level_in_phase3".into(), "true".into());
    }
    if o.control_reinit {
        pairs.insert("control_reinit".into(), "true".into());
    }
    if let Some(m) = &o.exploration_mode {
        pairs.insert("exploration_mode".into(), m.clone());
    }
    let mut cfg = ExperimentConfig::default();
    cfg.apply_pairs(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(&dir.join("resolved_config"))
}

fn tail<T>(v: Vec<T>, n: usize) -> Vec<T> {
    let skip = v.len().saturating_sub(n);
    v.into_iter().skip(skip).collect()
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Option<f64> {
    meta.get(key).and_then(|s| s.parse().ok())
}

/// Executes one parsed command, writing human-readable output to `out`.
pub fn dispatch(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let w = |out: &mut dyn std::io::Write, s: String| -> Result<()> {
        writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
    };
    match cli.command {
        Command::Train(a) => {
            let cfg = resolve_config(Some(&a.config), &a.overrides)?;
            let summary = run_experiment(
                &cfg,
                &RunOptions {
                    out_dir: Some(a.out.clone()),
                    ..Default::default()
                },
            )?;
            for p in 1..=3 {
                if cfg.phase_episodes[p - 1] > 0 {
                    let tail_n = cfg.success_window.min(cfg.phase_episodes[p - 1]);
                    w(out, format!("phase{p}_final_success={:.4}", summary.final_success(p, tail_n)))?;
                }
            }
            w(out, format!("updates={}", summary.updates.len()))?;
            w(out, format!("output={}", a.out.display()))?;
        }
        Command::Evaluate(a) => {
            let (params, meta) = load_params(&a.checkpoint)?;
            let mut cfg = match &a.config {
                Some(p) => resolve_config(Some(p), &Overrides::default())?,
                None => ExperimentConfig::default(),
            };
            if a.config.is_none() {
                if let (Some(t1), Some(t2)) = (meta_f64(&meta, "tau1"), meta_f64(&meta, "tau2")) {
                    cfg.tau = [t1, t2];
                }
            }
            let phase = Phase::from_number(a.phase)?;
            let env = TargetEnv::new(cfg.env.clone())?;
            let mut rng = stream_rng(a.seed, 5);
            let r = evaluate(&params, &env, &cfg.tau, a.episodes, phase, &mut rng)?;
            w(out, format!("success_rate={}", r.success_rate))?;
            w(out, format!("mean_return={}", r.mean_return))?;
        }
        Command::AnalyzeConsistency(a) => {
            let phase = Phase::from_number(a.phase)?;
            let mut per_level: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut variant = None;
            for run in &a.runs {
                let cfg = run_config(run)?;
                let v = cfg.variant.as_str();
                if variant.is_some_and(|x| x != v) {
                    return Err(Error::Analysis("runs mix variants; analyze them separately".into()));
                }
                variant = Some(v);
                let traces = tail(load_traces(&run.join("traces"), phase, &cfg.env)?, a.last);
                for level in 1..=2 {
                    let c = trace_consistency(&traces, level)?;
                    if c.skipped > 0 {
                        log::warn!("{}: level {level}: {} zero-norm terms skipped", run.display(), c.skipped);
                    }
                    per_level.entry(level).or_default().push(c.mean);
                }
            }
            let rows: Vec<_> = per_level
                .iter()
                .map(|(&level, vals)| aggregate_consistency(variant.unwrap_or("full"), a.phase, level, vals))
                .collect();
            write_csv(&a.out, &rows)?;
            for r in &rows {
                w(out, format!("level{}_consistency={:.4} std={:.4}", r.level, r.mean, r.std))?;
            }
        }
        Command::AnalyzePca(a) => {
            let phase = Phase::from_number(a.phase)?;
            let cfg = run_config(&a.run)?;
            let traces = tail(load_traces(&a.run.join("traces"), phase, &cfg.env)?, a.last);
            let (pca, rows) = trace_pca(&traces, a.level)?;
            write_csv(&a.out, &rows)?;
            for (i, r) in pca.explained_ratio.iter().enumerate() {
                w(out, format!("pc{}_explained={r:.4}", i + 1))?;
            }
        }
        Command::Clamp(a) => {
            let phase = Phase::from_number(a.phase)?;
            let cfg = run_config(&a.run)?;
            let ckpt = a
                .checkpoint
                .clone()
                .unwrap_or_else(|| a.run.join("checkpoints").join("final.ckpt"));
            let (params, _) = load_params(&ckpt)?;
            let traces = tail(load_traces(&a.run.join("traces"), phase, &cfg.env)?, a.last);
            let sources = clamp_sources(&traces, a.level)?;
            let mut rows: Vec<ClampTrajectoryRow> = Vec::new();
            for (color, clamp) in &sources {
                let rep = clamp_experiment(&params, &cfg.env, &cfg.tau, phase, *color, clamp, a.layouts, a.seed)?;
                w(out, format!("clamp_{}_hits={}/{}", color.name(), rep.hits, rep.layouts))?;
                rows.extend(rep.rows);
            }
            write_csv(&a.out, &rows)?;
        }
        Command::ExportConfig(a) => {
            let cfg = resolve_config(a.config.as_deref(), &a.overrides)?;
            match &a.out {
                Some(p) => fs::write(p, cfg.to_text()).map_err(|e| Error::io(p, e))?,
                None => write!(out, "{}", cfg.to_text()).map_err(|e| Error::io("<stdout>", e))?,
            }
        }
    }
    Ok(())
}

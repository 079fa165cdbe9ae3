//! Acceptance report: one PASS/FAIL/SKIP line per criterion.
//!
//! Training-heavy gates (hours per seed) only run with `REMASTER_LONG=1`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use remaster::analysis::{clamp_experiment, clamp_sources, trace_consistency};
use remaster::config::{ExperimentConfig, Variant};
use remaster::env::{EnvConfig, Phase, TargetEnv};
use remaster::learner::gamma_from_tau;
use remaster::network::{NetworkParams, NetworkShape};
use remaster::runner::{greedy_rollout, run_experiment, stream_rng, EpisodeRecord, RunOptions, RunSummary};

use common::{ensure, Check};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, started: Instant, result: Check) {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS  {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                self.failed += 1;
                println!("FAIL  {name}: {msg} [{secs:.1}s]");
            }
        }
    }

    fn skip(&self, name: &str, why: &str) {
        println!("SKIP  {name}: {why}");
    }
}

fn all(checks: Vec<Check>) -> Check {
    let mut parts = Vec::new();
    for c in checks {
        parts.push(c?);
    }
    Ok(parts.join("; "))
}

fn long_enabled() -> bool {
    std::env::var("REMASTER_LONG").is_ok_and(|v| v == "1")
}

fn discount_check() -> Check {
    let mut parts = Vec::new();
    for (tau, want) in [(2.0, 0.92), (8.0, 0.98)] {
        let g = gamma_from_tau(tau).map_err(|e| e.to_string())?;
        ensure((g - want).abs() <= 1e-15, || format!("tau={tau}: gamma {g} != {want}"))?;
        parts.push(format!("tau={tau} -> {g}"));
    }
    Ok(parts.join(", "))
}

fn desk_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_text(
        "task = reduced\nepisodes_phase1 = 2000\nepisodes_phase2 = 0\nepisodes_phase3 = 0\n\
         eval_every = 100\neval_episodes = 100\ntrace_last_episodes = 0\n",
    )
    .expect("desk config");
    cfg.seed = seed;
    cfg
}

fn desk_check() -> Check {
    let mut reached = Vec::new();
    for seed in SEEDS {
        let s = run_experiment(
            &desk_config(seed),
            &RunOptions {
                stop_at_eval_success: Some(0.9),
                ..Default::default()
            },
        )
        .map_err(|e| format!("seed {seed}: {e}"))?;
        let hit = s.evaluations.iter().find(|e| e.success_rate >= 0.9);
        reached.push((seed, hit.map(|e| e.phase_episode + 1)));
    }
    let ok = reached.iter().filter(|(_, h)| h.is_some()).count();
    let detail: Vec<String> = reached
        .iter()
        .map(|(s, h)| match h {
            Some(ep) => format!("seed {s}: >=90% at episode {ep}"),
            None => format!("seed {s}: not reached"),
        })
        .collect();
    ensure(ok >= 4, || format!("{ok}/5 seeds reached 90% ({})", detail.join(", ")))?;
    Ok(format!("{ok}/5 seeds reached 90% within 2000 episodes ({})", detail.join(", ")))
}

/// The action never changes while level 1 is clamped, whatever the robot sees.
fn level1_constant_action() -> Check {
    let shape = NetworkShape::new(vec![100, 50]);
    let mut rng = stream_rng(7, 4);
    let params = NetworkParams::init(&shape, &mut rng);
    let env = TargetEnv::new(EnvConfig::default()).map_err(|e| e.to_string())?;
    let c: Vec<f64> = (0..100).map(|k| ((k as f64) * 0.37).sin() * 0.8).collect();
    let clamp = remaster::runner::Clamp {
        level: 0,
        u: c.iter().map(|v| v.atanh()).collect(),
        c,
    };
    let mut steps = 0;
    for layout in 0..30 {
        let mut r = stream_rng(layout, 100);
        let ro = greedy_rollout(&params, &env, &[2.0, 8.0], Phase::P1, Some(&clamp), &mut r)
            .map_err(|e| e.to_string())?;
        let first = ro.actions[0];
        ensure(ro.actions.iter().all(|a| *a == first), || format!("layout {layout}: action changed"))?;
        steps += ro.actions.len();
    }
    Ok(format!("level-1 clamp: action bit-identical over {steps} steps in 30 layouts"))
}

// ---------------------------------------------------------------- long gates

fn full_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    }
}

fn train(cfg: &ExperimentConfig) -> Result<RunSummary, String> {
    run_experiment(
        cfg,
        &RunOptions {
            keep_traces: true,
            ..Default::default()
        },
    )
    .map_err(|e| format!("seed {}: {e}", cfg.seed))
}

/// Success fraction over the `window` phase episodes ending at `end` (1-based).
fn success_at(episodes: &[EpisodeRecord], phase: usize, end: usize, window: usize) -> f64 {
    let rows: Vec<_> = episodes
        .iter()
        .filter(|e| e.phase == phase && e.phase_episode < end && e.phase_episode + window >= end)
        .collect();
    rows.iter().filter(|e| e.success).count() as f64 / rows.len().max(1) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

struct FullSeed {
    phase1_final: f64,
    phase3_at_1500: f64,
    consistency_p1: [f64; 2],
    high_p2: f64,
    clamp_hits: [usize; 3],
}

fn full_seed(seed: u64) -> Result<FullSeed, String> {
    let cfg = full_config(seed);
    let s = train(&cfg)?;
    let traces = |p: Phase| -> Vec<_> { s.traces.iter().filter(|t| t.phase == p).cloned().collect() };
    let p1 = traces(Phase::P1);
    let c1 = trace_consistency(&p1, 1).map_err(|e| e.to_string())?.mean;
    let c2 = trace_consistency(&p1, 2).map_err(|e| e.to_string())?.mean;
    let high_p2 = trace_consistency(&traces(Phase::P2), 2).map_err(|e| e.to_string())?.mean;
    let p3 = traces(Phase::P3);
    let last: Vec<_> = p3[p3.len().saturating_sub(500)..].to_vec();
    let mut hits = [0; 3];
    for (i, (color, clamp)) in clamp_sources(&last, 2).map_err(|e| e.to_string())?.iter().enumerate() {
        let rep = clamp_experiment(&s.params, &cfg.env, &cfg.tau, Phase::P3, *color, clamp, 30, seed)
            .map_err(|e| e.to_string())?;
        hits[i] = rep.hits;
    }
    Ok(FullSeed {
        phase1_final: s.final_success(1, 1000),
        phase3_at_1500: success_at(&s.episodes, 3, 1500, 100),
        consistency_p1: [c1, c2],
        high_p2,
        clamp_hits: hits,
    })
}

fn long_gates(report: &mut Report) {
    let t0 = Instant::now();
    let full: Result<Vec<FullSeed>, String> = SEEDS.iter().map(|&s| full_seed(s)).collect();
    let full = match full {
        Ok(f) => f,
        Err(e) => {
            for name in ["full phase-1", "relearning advantage", "consistency ordering", "clamping"] {
                report.line(name, t0, Err(e.clone()));
            }
            return;
        }
    };

    let good = full.iter().filter(|f| f.phase1_final > 0.9).count();
    let finals: Vec<String> = full.iter().map(|f| format!("{:.3}", f.phase1_final)).collect();
    report.line(
        "full phase-1",
        t0,
        ensure(good >= 3, || format!("{good}/5 seeds above 0.9 ({})", finals.join(", ")))
            .map(|_| format!("{good}/5 seeds above 0.9 over last 1000 episodes ({})", finals.join(", "))),
    );

    let t = Instant::now();
    let control: Result<Vec<f64>, String> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig {
                control_reinit: true,
                trace_last_episodes: 0,
                ..full_config(seed)
            };
            train(&cfg).map(|s| success_at(&s.episodes, 3, 1500, 100))
        })
        .collect();
    report.line(
        "relearning advantage",
        t,
        control.and_then(|c| {
            let inherited = mean(&full.iter().map(|f| f.phase3_at_1500).collect::<Vec<_>>());
            let scratch = mean(&c);
            let gap = inherited - scratch;
            ensure(gap >= 0.15, || format!("gap {gap:.3} (inherited {inherited:.3}, scratch {scratch:.3})"))?;
            Ok(format!("gap {gap:.3} >= 0.15 (inherited {inherited:.3}, scratch {scratch:.3})"))
        }),
    );

    let t = Instant::now();
    let det: Result<Vec<f64>, String> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig {
                variant: Variant::Deterministic,
                phase_episodes: [12_000, 3_000, 0],
                ..full_config(seed)
            };
            let s = train(&cfg)?;
            let p2: Vec<_> = s.traces.iter().filter(|t| t.phase == Phase::P2).cloned().collect();
            trace_consistency(&p2, 2).map(|c| c.mean).map_err(|e| e.to_string())
        })
        .collect();
    report.line(
        "consistency ordering",
        t,
        det.and_then(|d| {
            let low = mean(&full.iter().map(|f| f.consistency_p1[0]).collect::<Vec<_>>());
            let high = mean(&full.iter().map(|f| f.consistency_p1[1]).collect::<Vec<_>>());
            let full_p2 = mean(&full.iter().map(|f| f.high_p2).collect::<Vec<_>>());
            let det_p2 = mean(&d);
            ensure(high - low >= 0.05 && det_p2 < full_p2, || {
                format!("phase 1 high {high:.3} low {low:.3}; phase 2 high det {det_p2:.3} vs full {full_p2:.3}")
            })?;
            Ok(format!(
                "phase 1 high {high:.3} - low {low:.3} >= 0.05; phase 2 high det {det_p2:.3} < full {full_p2:.3}"
            ))
        }),
    );

    let t = Instant::now();
    let mut pooled = [0usize; 3];
    for f in &full {
        for k in 0..3 {
            pooled[k] += f.clamp_hits[k];
        }
    }
    let total = 30 * full.len();
    report.line(
        "clamping",
        t,
        all(vec![
            level1_constant_action(),
            ensure(pooled.iter().all(|&h| 3 * h >= 2 * total), || {
                format!("level-2 first-approached hits {pooled:?} of {total} per target")
            })
            .map(|_| format!("level-2 first-approached hits {pooled:?} of {total} per target >= 2/3")),
        ]),
    );

    let t = Instant::now();
    let swapped: Result<Vec<f64>, String> = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig {
                tau: [8.0, 2.0],
                phase_episodes: [12_000, 0, 0],
                trace_last_episodes: 0,
                ..full_config(seed)
            };
            train(&cfg).map(|s| s.final_success(1, 1000))
        })
        .collect();
    report.line(
        "timescale ordering",
        t,
        swapped.and_then(|sw| {
            let default = mean(&full.iter().map(|f| f.phase1_final).collect::<Vec<_>>());
            let swapped = mean(&sw);
            ensure(swapped < default, || format!("swapped {swapped:.3} >= default {default:.3}"))?;
            Ok(format!("swapped (8, 2) {swapped:.3} < default (2, 8) {default:.3}"))
        }),
    );
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };

    let t = Instant::now();
    report.line(
        "gradient correctness",
        t,
        common::check_gradients(&NetworkShape::new(vec![100, 50]), 25, 3),
    );

    let t = Instant::now();
    report.line("discount derivation", t, discount_check());

    let t = Instant::now();
    report.line(
        "environment oracles",
        t,
        all(vec![
            common::check_reward_table(),
            common::check_max_turn(20_000),
            common::check_placement(10_000, &EnvConfig::default()),
            common::check_euler_oracle(2_000),
        ]),
    );

    let t = Instant::now();
    report.line(
        "replay invariants",
        t,
        all(vec![
            common::check_window_isolation(10_000),
            common::check_fifo(),
            common::check_uniform_starts(20_000),
        ]),
    );

    let t = Instant::now();
    report.line("desk-scale learning", t, desk_check());

    if long_enabled() {
        long_gates(&mut report);
    } else {
        let why = "needs hours of training per seed; run with REMASTER_LONG=1";
        for name in ["full phase-1", "relearning advantage", "consistency ordering"] {
            report.skip(name, why);
        }
        let t = Instant::now();
        match level1_constant_action() {
            Ok(m) => report.skip("clamping", &format!("{m}; level-2 part {why}")),
            Err(m) => report.line("clamping", t, Err(m)),
        }
        report.skip("timescale ordering", why);
    }

    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}

//! Independent oracles shared by the integration tests and the acceptance
//! harness. Each check returns a one-line summary or a failure message.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use remaster::env::{
    kinematics, reward, wrap_angle, Action, Color, EnvConfig, EnvState, Phase, Point, Pose, TargetEnv,
};
use remaster::exploration::{sample_action, ExplorationMode, OuProcess, OU_THETA};
use remaster::learner::{
    backward, linear_objective, objective_coefficients, replay_forward_with_noise, td_errors, unroll,
    DiscountSpec, ReplayNoise,
};
use remaster::network::{forward_step, sample_noise, NetworkParams, NetworkShape, RnnState, TimescaleSpec};
use remaster::replay::{ReplayBuffer, Transition};

pub type Check = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- environment

pub fn state_at(pos: Point, heading: f64, targets: [Point; 3], phase: Phase) -> EnvState {
    EnvState {
        robot: Pose { position: pos, heading },
        targets,
        reached: [false; 3],
        step_count: 0,
        phase,
        wall_hit: false,
        done: false,
    }
}

fn moved_to(before: &EnvState, to: Point) -> EnvState {
    let mut s = before.clone();
    s.robot.position = to;
    s.step_count += 1;
    s
}

/// Reward table spot checks against hand-evaluated formulas.
pub fn check_reward_table() -> Check {
    let cfg = EnvConfig::default();
    // blue sits exactly 0.4 above the final robot position (1.0 - 0.6 == 0.4 in binary)
    let targets = [Point::new(5.0, 5.0), Point::new(9.0, 5.0), Point::new(7.0, 1.0)];
    let mut cases: Vec<(&str, f64, f64, bool)> = Vec::new();

    let b = state_at(Point::new(5.0, 4.0), 0.0, targets, Phase::P1);
    let o = reward(&cfg, &b, &moved_to(&b, Point::new(5.0, 5.0)));
    cases.push(("first stage at d=0", o.reward, 0.8, o.done));

    let mut b = state_at(Point::new(9.0, 4.0), 0.0, targets, Phase::P1);
    b.reached[Color::Red.index()] = true;
    let o = reward(&cfg, &b, &moved_to(&b, Point::new(9.0, 5.25)));
    cases.push(("second stage", o.reward, 2.0 / 1.25, o.done));

    let mut b = state_at(Point::new(7.0, 2.0), 0.0, targets, Phase::P1);
    b.reached = [true, true, false];
    let o = reward(&cfg, &b, &moved_to(&b, Point::new(7.0, 0.6)));
    ensure(o.done, || "third stage must end the episode".into())?;
    cases.push(("third stage at d=0.4", o.reward, 5.0 / 1.4, false));

    let b = state_at(Point::new(9.0, 4.0), 0.0, targets, Phase::P1);
    let o = reward(&cfg, &b, &moved_to(&b, Point::new(9.0, 5.0)));
    cases.push(("out of sequence", o.reward, 0.0, o.done));

    let env = TargetEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let s = state_at(Point::new(14.8, 7.0), 0.0, targets, Phase::P1);
    let out = env.step(&s, Action::new(180.0, 180.0)).map_err(|e| e.to_string())?;
    cases.push(("wall hit", out.reward, -0.1, out.done));

    // phase 2 starts with green
    let b = state_at(Point::new(9.0, 4.0), 0.0, targets, Phase::P2);
    let o = reward(&cfg, &b, &moved_to(&b, Point::new(9.0, 5.0)));
    cases.push(("phase-2 first stage", o.reward, 0.8, o.done));

    for (name, got, want, done) in &cases {
        ensure((got - want).abs() < 1e-12, || format!("{name}: reward {got} != {want}"))?;
        ensure(!done, || format!("{name}: unexpected done"))?;
    }
    Ok(format!("{} reward cases exact to 1e-12", cases.len()))
}

/// Every action turns by at most 90 degrees; opposite full-speed wheels turn by exactly 90.
pub fn check_max_turn(samples: usize) -> Check {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pose = Pose {
        position: Point::new(7.5, 7.5),
        heading: 0.0,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let a = Action::new(rng.random_range(-400.0..400.0), rng.random_range(-400.0..400.0));
        let (p, _) = kinematics(&cfg, pose, a);
        worst = worst.max(wrap_angle(p.heading).abs());
    }
    ensure(worst <= PI / 2.0 + 1e-12, || format!("turn of {worst} rad exceeds 90 degrees"))?;
    let (p, _) = kinematics(&cfg, pose, Action::new(-180.0, 180.0));
    ensure((p.heading - PI / 2.0).abs() < 1e-12, || format!("max turn is {} rad", p.heading))?;
    Ok(format!("max |turn| over {samples} random actions = {worst:.6} rad <= pi/2"))
}

/// Midpoint-heading Euler integration of the differential-drive ODE over one step.
pub fn euler_pose(cfg: &EnvConfig, pose: Pose, action: Action, substeps: usize) -> Pose {
    let s_l = action.left_deg.clamp(-180.0, 180.0).to_radians() * cfg.wheel_radius;
    let s_r = action.right_deg.clamp(-180.0, 180.0).to_radians() * cfg.wheel_radius;
    let v = 0.5 * (s_l + s_r) / substeps as f64;
    let w = (s_r - s_l) / cfg.axle_length / substeps as f64;
    let (mut x, mut y, mut phi) = (pose.position.x, pose.position.y, pose.heading);
    for _ in 0..substeps {
        let mid = phi + 0.5 * w;
        x += v * mid.cos();
        y += v * mid.sin();
        phi += w;
    }
    Pose {
        position: Point::new(x, y),
        heading: phi,
    }
}

pub fn check_euler_oracle(samples: usize) -> Check {
    let cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let pose = Pose {
            position: Point::new(rng.random_range(3.0..12.0), rng.random_range(3.0..12.0)),
            heading: rng.random_range(-PI..PI),
        };
        let a = Action::new(rng.random_range(-180.0..180.0), rng.random_range(-180.0..180.0));
        let (exact, hit) = kinematics(&cfg, pose, a);
        ensure(!hit, || "oracle poses must stay clear of walls".into())?;
        let e = euler_pose(&cfg, pose, a, 1000);
        let err = exact.position.distance(e.position);
        let herr = wrap_angle(exact.heading - e.heading).abs();
        worst = worst.max(err);
        ensure(err < 1e-6 && herr < 1e-9, || format!("pose error {err:.3e} (heading {herr:.3e}) for {a:?}"))?;
    }
    Ok(format!("{samples} random steps, worst position error {worst:.2e} < 1e-6"))
}

/// Target layout constraints over many resets, checked by brute force.
pub fn check_placement(resets: usize, cfg: &EnvConfig) -> Check {
    let env = TargetEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let lo = 0.5 * (cfg.field_size - cfg.target_area);
    let hi = lo + cfg.target_area;
    let mut min_pair = f64::INFINITY;
    for i in 0..resets {
        let (s, obs) = env.reset(&mut rng, Phase::P1).map_err(|e| e.to_string())?;
        for (a, t) in s.targets.iter().enumerate() {
            ensure((lo..=hi).contains(&t.x) && (lo..=hi).contains(&t.y), || {
                format!("reset {i}: target {a} at {t:?} outside [{lo}, {hi}]^2")
            })?;
            for u in &s.targets[a + 1..] {
                min_pair = min_pair.min(t.distance(*u));
            }
        }
        let p = s.robot.position;
        ensure((0.0..=cfg.field_size).contains(&p.x) && (0.0..=cfg.field_size).contains(&p.y), || {
            format!("reset {i}: robot outside field")
        })?;
        ensure(obs.reward_slot() == 0.0 && s.step_count == 0 && s.reached == [false; 3], || {
            format!("reset {i}: state not fresh")
        })?;
    }
    ensure(min_pair > cfg.min_target_separation, || {
        format!("min pairwise target distance {min_pair} <= {}", cfg.min_target_separation)
    })?;
    Ok(format!("{resets} resets: targets inside [{lo}, {hi}]^2, min pairwise distance {min_pair:.4} > 2"))
}

// ---------------------------------------------------------------- replay

fn tagged_row(shape: &NetworkShape, episode: usize) -> Transition {
    let mut t = Transition::padding(shape);
    t.reward = episode as f64 + 1.0;
    t.done = false;
    t.behavior_density = 0.5;
    t.grad_mask = true;
    t
}

/// Windows never hold gradient rows of two episodes, on adversarial episode lengths.
pub fn check_window_isolation(samples: usize) -> Check {
    let shape = NetworkShape::new(vec![2, 2]);
    let mut buf = ReplayBuffer::new(100_000, 25, shape.clone()).map_err(|e| e.to_string())?;
    let lengths = [1usize, 24, 25, 26];
    let mut episode = 0;
    for round in 0..12 {
        for k in 0..lengths.len() {
            let len = lengths[(k + round) % lengths.len()];
            for _ in 0..len {
                buf.push(tagged_row(&shape, episode)).map_err(|e| e.to_string())?;
            }
            buf.end_episode();
            episode += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..samples / 16 + 1 {
        let batch = buf.sample_batch(&mut rng, 16, 25).map_err(|e| e.to_string())?;
        for s in &batch.sequences {
            let tags: std::collections::BTreeSet<u64> =
                s.rows.iter().filter(|r| r.grad_mask).map(|r| r.reward as u64).collect();
            ensure(tags.len() == 1, || format!("window at {} mixes episodes {tags:?}", s.start))?;
            seen.insert(s.start);
        }
    }
    Ok(format!(
        "{} windows over {episode} episodes of lengths {lengths:?}: none mixes episodes",
        (samples / 16 + 1) * 16
    ))
}

pub fn check_fifo() -> Check {
    let shape = NetworkShape::new(vec![2, 2]);
    let mut buf = ReplayBuffer::new(5, 3, shape.clone()).map_err(|e| e.to_string())?;
    for i in 0..7 {
        buf.push(tagged_row(&shape, i)).map_err(|e| e.to_string())?;
        ensure(buf.len() <= 5, || "buffer exceeded capacity".into())?;
    }
    let oldest = buf.get(0).map(|r| r.reward);
    ensure(oldest == Some(3.0), || format!("oldest surviving row is {oldest:?}, expected #3"))?;
    for _ in 0..3 {
        buf.end_episode();
        buf.push(tagged_row(&shape, 9)).map_err(|e| e.to_string())?;
    }
    ensure(buf.len() == 5, || "capacity not held through padding".into())?;
    Ok("capacity 5 after 7 pushes keeps rows #3..#7; length never exceeds capacity".into())
}

/// Chi-square goodness of fit of window starts over a 1,000-row single-episode buffer.
pub fn check_uniform_starts(samples: usize) -> Check {
    let shape = NetworkShape::new(vec![2, 2]);
    let len = 25;
    let mut buf = ReplayBuffer::new(10_000, len, shape.clone()).map_err(|e| e.to_string())?;
    for _ in 0..1000 {
        buf.push(tagged_row(&shape, 0)).map_err(|e| e.to_string())?;
    }
    let starts = buf.len() - len + 1;
    let mut counts = vec![0usize; starts];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..samples {
        let b = buf.sample_batch(&mut rng, 1, len).map_err(|e| e.to_string())?;
        counts[b.sequences[0].start] += 1;
    }
    let expected = samples as f64 / starts as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((starts - 1) as f64).map_err(|e| e.to_string())?;
    let p = 1.0 - dist.cdf(stat);
    ensure(p > 0.001, || format!("chi-square {stat:.1} on {} dof, p = {p:.2e}", starts - 1))?;
    Ok(format!("chi-square {stat:.1} on {} dof, p = {p:.3} > 0.001", starts - 1))
}

// ---------------------------------------------------------------- gradients

/// Records one exploratory episode with a random network into `buf`.
pub fn record_episode(
    params: &NetworkParams,
    spec: &TimescaleSpec,
    env: &TargetEnv,
    buf: &mut ReplayBuffer,
    rng: &mut ChaCha8Rng,
) -> usize {
    let shape = params.shape();
    let (mut s, mut obs) = env.reset(rng, Phase::P1).unwrap();
    let mut rnn = RnnState::zeros(&shape);
    let mut ou = OuProcess::new(OU_THETA, 0.5);
    let mut n = 0;
    while !s.done {
        let noise = sample_noise(&shape, rng);
        let out = forward_step(params, &rnn, obs.as_slice(), &noise, spec).unwrap();
        let a = sample_action(ExplorationMode::OuAnnealed, &out.head, &mut ou, 0.5, rng);
        let step = env.step(&s, Action::from_normalized(a.action)).unwrap();
        buf.push(Transition {
            obs: obs.0,
            next_obs: step.observation.0,
            action: a.action,
            reward: step.reward,
            done: step.done,
            behavior_density: a.density,
            state: out.state.clone(),
            grad_mask: true,
        })
        .unwrap();
        rnn = out.state;
        s = step.state;
        obs = step.observation;
        n += 1;
    }
    buf.end_episode();
    n
}

fn set_flat(p: &mut NetworkParams, tensor: usize, k: usize, v: f64) {
    p.tensors_mut()[tensor].1.as_slice_mut().unwrap()[k] = v;
}

/// Central differences of the critic and actor objectives (ratios and TD
/// errors frozen) against the backward pass, for every parameter.
pub fn check_gradients(shape: &NetworkShape, seq_len: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = NetworkParams::init(shape, &mut rng);
    let spec = TimescaleSpec::new(vec![2.0, 8.0], vec![0.2, 0.2]).unwrap();
    let env = TargetEnv::new(EnvConfig {
        max_steps: 40,
        ..EnvConfig::default()
    })
    .unwrap();
    let mut buf = ReplayBuffer::new(10_000, seq_len, shape.clone()).unwrap();
    while buf.real_rows() < 2 * seq_len {
        record_episode(&params, &spec, &env, &mut buf, &mut rng);
    }
    // a window starting mid-episode so the recorded initial state is non-zero
    let batch = loop {
        let b = buf.sample_batch(&mut rng, 1, seq_len).unwrap();
        let s = &b.sequences[0];
        if !s.initial_state.is_zero() && s.rows.iter().all(|r| r.grad_mask) {
            break b;
        }
    };
    let floor = 0.0;
    let noise = ReplayNoise::sample(&shape.levels, 1, seq_len, &spec, &mut rng);
    let fwd = replay_forward_with_noise(&params, &batch, &spec, floor, f64::INFINITY, &noise)
        .map_err(|e| e.to_string())?;
    let discount = DiscountSpec::from_taus(&spec.tau).unwrap();
    let deltas = td_errors(&fwd.values, &fwd.bootstrap, &fwd.rewards, &fwd.dones, &discount);
    let (cv, clp) = objective_coefficients(&fwd, &deltas, false);
    let zero_cv: Vec<Array2<f64>> = cv.iter().map(|c| Array2::zeros(c.dim())).collect();
    let zero_clp: Vec<Array1<f64>> = clp.iter().map(|c| Array1::zeros(c.len())).collect();
    let g_critic = backward(&params, &fwd.tape, &fwd.resets, &spec, &fwd.actions, floor, &cv, &zero_clp);
    let g_actor = backward(&params, &fwd.tape, &fwd.resets, &spec, &fwd.actions, floor, &zero_cv, &clp);

    let initial = remaster::network::BatchState::from_states(&[&batch.sequences[0].initial_state]);
    let objectives = |p: &NetworkParams| -> (f64, f64) {
        let tape = unroll(p, &initial, fwd.tape.inputs.clone(), &fwd.resets, &noise.steps, &spec).unwrap();
        (
            linear_objective(&tape, &fwd.actions, floor, &cv, &zero_clp),
            linear_objective(&tape, &fwd.actions, floor, &zero_cv, &clp),
        )
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut count = 0;
    let gc = g_critic.tensors();
    let ga = g_actor.tensors();
    let mut probe = params.clone();
    for (ti, (name, _)) in params.tensors().iter().enumerate() {
        let n = gc[ti].1.len();
        for k in 0..n {
            let orig = params.tensors()[ti].1.as_slice().unwrap()[k];
            set_flat(&mut probe, ti, k, orig + h);
            let (cp, ap) = objectives(&probe);
            set_flat(&mut probe, ti, k, orig - h);
            let (cm, am) = objectives(&probe);
            set_flat(&mut probe, ti, k, orig);
            for (which, numeric, analytic) in [
                ("critic", (cp - cm) / (2.0 * h), gc[ti].1.as_slice().unwrap()[k]),
                ("actor", (ap - am) / (2.0 * h), ga[ti].1.as_slice().unwrap()[k]),
            ] {
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
                if rel > worst {
                    worst = rel;
                    worst_at = format!("{which} {name}[{k}] analytic {analytic:.6e} numeric {numeric:.6e}");
                }
            }
            count += 1;
        }
    }
    ensure(count == params.param_count(), || "not every parameter was probed".into())?;
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e} at {worst_at}"))?;
    Ok(format!(
        "{count} parameters x 2 objectives over a {seq_len}-step window: max relative error {worst:.2e} < 1e-4"
    ))
}

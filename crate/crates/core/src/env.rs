//! Sequential target-reaching task for a two-wheel differential-drive robot.
//!
//! The robot lives on a square field bounded by walls. Three colored targets
//! are scattered in the central sub-area, and reward is paid only when they
//! are touched in the phase's hidden order. Everything here is a pure
//! function of its inputs plus an explicitly passed RNG, so episodes are
//! reproducible from a seed.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBS_DIM: usize = 12;
pub const ACTION_DIM: usize = 2;

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const STRAIGHT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn index(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Green => 1,
            Color::Blue => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
        }
    }
}

/// Phase of the consecutive relearning protocol. Only the reward order differs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    P1,
    P2,
    P3,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::P1, Phase::P2, Phase::P3];

    pub const fn sequence(self) -> [Color; 3] {
        use Color::*;
        match self {
            Phase::P1 => [Red, Green, Blue],
            Phase::P2 => [Green, Blue, Red],
            Phase::P3 => [Blue, Green, Red],
        }
    }

    pub fn number(self) -> usize {
        match self {
            Phase::P1 => 1,
            Phase::P2 => 2,
            Phase::P3 => 3,
        }
    }

    pub fn from_number(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Phase::P1),
            2 => Ok(Phase::P2),
            3 => Ok(Phase::P3),
            _ => Err(Error::InvalidArgument(format!("phase must be 1, 2 or 3, got {n}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point,
    /// Radians, counter-clockwise from +x, kept in (-pi, pi].
    pub heading: f64,
}

/// Wheel rotations in degrees. Construction clamps both to [-180, 180].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub left_deg: f64,
    pub right_deg: f64,
}

impl Action {
    pub fn new(left_deg: f64, right_deg: f64) -> Self {
        Self {
            left_deg: clamp_finite(left_deg, -180.0, 180.0),
            right_deg: clamp_finite(right_deg, -180.0, 180.0),
        }
    }

    /// Maps a normalized action (nominally in [-1, 1]) to wheel degrees.
    pub fn from_normalized(a: [f64; ACTION_DIM]) -> Self {
        Self::new(
            clamp_finite(a[0], -1.0, 1.0) * 180.0,
            clamp_finite(a[1], -1.0, 1.0) * 180.0,
        )
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }
}

fn clamp_finite(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(lo, hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn reward_slot(&self) -> f64 {
        self.0[5]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub field_size: f64,
    /// Side of the centered square in which targets are placed.
    pub target_area: f64,
    pub target_radius: f64,
    pub min_target_separation: f64,
    pub wheel_radius: f64,
    pub axle_length: f64,
    pub max_steps: usize,
    pub success_steps: usize,
    pub stage_rewards: [f64; 3],
    pub wall_penalty: f64,
    pub distance_scale: f64,
    /// Only the first color of the phase order is rewarded; reaching it ends the episode.
    pub single_target: bool,
    /// Use the distance to the second target in the final-stage reward, as the
    /// original reward table literally reads.
    pub literal_reward_typo: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            field_size: 15.0,
            target_area: 8.0,
            target_radius: 0.4,
            min_target_separation: 2.0,
            wheel_radius: 0.25,
            axle_length: 1.0,
            max_steps: 128,
            success_steps: 50,
            stage_rewards: [0.8, 2.0, 5.0],
            wall_penalty: -0.1,
            distance_scale: 5.0,
            single_target: false,
            literal_reward_typo: false,
        }
    }
}

impl EnvConfig {
    /// Single-target variant on a 10x10 field with 64-step episodes.
    pub fn reduced() -> Self {
        Self {
            field_size: 10.0,
            target_area: 6.0,
            max_steps: 64,
            single_target: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("field_size", self.field_size),
            ("target_area", self.target_area),
            ("target_radius", self.target_radius),
            ("wheel_radius", self.wheel_radius),
            ("axle_length", self.axle_length),
            ("distance_scale", self.distance_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.target_area > self.field_size {
            return Err(Error::Config("target_area larger than field".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Rewarded colors for `phase`, in order.
    pub fn sequence(&self, phase: Phase) -> &'static [Color] {
        const P1: [Color; 3] = Phase::P1.sequence();
        const P2: [Color; 3] = Phase::P2.sequence();
        const P3: [Color; 3] = Phase::P3.sequence();
        let full: &'static [Color] = match phase {
            Phase::P1 => &P1,
            Phase::P2 => &P2,
            Phase::P3 => &P3,
        };
        if self.single_target {
            &full[..1]
        } else {
            full
        }
    }

    fn target_bounds(&self) -> (f64, f64) {
        let margin = 0.5 * (self.field_size - self.target_area);
        (margin, margin + self.target_area)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub robot: Pose,
    /// Indexed by [`Color::index`].
    pub targets: [Point; 3],
    pub reached: [bool; 3],
    pub step_count: usize,
    pub phase: Phase,
    pub wall_hit: bool,
    pub done: bool,
}

impl EnvState {
    pub fn target(&self, color: Color) -> Point {
        self.targets[color.index()]
    }

    pub fn distance_to(&self, color: Color) -> f64 {
        self.robot.position.distance(self.target(color))
    }

    /// Number of targets already collected in the rewarded order.
    pub fn progress(&self, config: &EnvConfig) -> usize {
        config
            .sequence(self.phase)
            .iter()
            .take_while(|c| self.reached[c.index()])
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardOutcome {
    pub reward: f64,
    pub done: bool,
    pub reached: Option<Color>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub reached: Option<Color>,
}

#[derive(Clone, Debug)]
pub struct TargetEnv {
    pub config: EnvConfig,
}

impl TargetEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R, phase: Phase) -> Result<(EnvState, Observation)> {
        let targets = place_targets(&self.config, rng)?;
        let robot = place_robot(&self.config, &targets, rng)?;
        let state = EnvState {
            robot,
            targets,
            reached: [false; 3],
            step_count: 0,
            phase,
            wall_hit: false,
            done: false,
        };
        let obs = observe(&self.config, &state, 0.0);
        Ok((state, obs))
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let action = Action::new(action.left_deg, action.right_deg);
        let (robot, wall_hit) = kinematics(&self.config, state.robot, action);
        let mut next = EnvState {
            robot,
            wall_hit,
            step_count: state.step_count + 1,
            ..state.clone()
        };
        let outcome = reward(&self.config, state, &next);
        if let Some(c) = outcome.reached {
            next.reached[c.index()] = true;
        }
        next.done = outcome.done || next.step_count >= self.config.max_steps;
        let observation = observe(&self.config, &next, outcome.reward);
        Ok(StepOutcome {
            done: next.done,
            state: next,
            observation,
            reward: outcome.reward,
            reached: outcome.reached,
        })
    }
}

fn place_targets<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<[Point; 3]> {
    let (lo, hi) = config.target_bounds();
    let mut placed: Vec<Point> = Vec::with_capacity(3);
    let mut attempts = 0;
    while placed.len() < 3 {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailed(attempts));
        }
        attempts += 1;
        let p = Point::new(rng.random_range(lo..hi), rng.random_range(lo..hi));
        if placed
            .iter()
            .all(|q| q.distance(p) > config.min_target_separation)
        {
            placed.push(p);
        }
    }
    Ok([placed[0], placed[1], placed[2]])
}

fn place_robot<R: Rng + ?Sized>(config: &EnvConfig, targets: &[Point; 3], rng: &mut R) -> Result<Pose> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let p = Point::new(
            rng.random_range(0.0..config.field_size),
            rng.random_range(0.0..config.field_size),
        );
        if targets.iter().all(|t| t.distance(p) > config.target_radius) {
            let heading = rng.random_range(-PI..PI);
            return Ok(Pose { position: p, heading });
        }
    }
    Err(Error::PlacementFailed(MAX_PLACEMENT_ATTEMPTS))
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Exact differential-drive arc update for one step, followed by wall clamping.
///
/// Returns the new pose and whether the position had to be clamped.
pub fn kinematics(config: &EnvConfig, pose: Pose, action: Action) -> (Pose, bool) {
    let s_l = action.left_deg.to_radians() * config.wheel_radius;
    let s_r = action.right_deg.to_radians() * config.wheel_radius;
    let dphi = (s_r - s_l) / config.axle_length;
    let phi = pose.heading;
    let (mut x, mut y) = (pose.position.x, pose.position.y);
    if dphi.abs() < STRAIGHT_EPS {
        let d = 0.5 * (s_l + s_r);
        x += d * phi.cos();
        y += d * phi.sin();
    } else {
        let radius = (s_l + s_r) / (2.0 * dphi);
        x += radius * ((phi + dphi).sin() - phi.sin());
        y -= radius * ((phi + dphi).cos() - phi.cos());
    }
    let f = config.field_size;
    let cx = x.clamp(0.0, f);
    let cy = y.clamp(0.0, f);
    let wall_hit = cx != x || cy != y;
    (
        Pose {
            position: Point::new(cx, cy),
            heading: wrap_angle(phi + dphi),
        },
        wall_hit,
    )
}

/// Reward for the transition `before -> after`. Does not mutate flags; the
/// caller records `reached`.
pub fn reward(config: &EnvConfig, before: &EnvState, after: &EnvState) -> RewardOutcome {
    let seq = config.sequence(before.phase);
    let stage = before.progress(config);
    let mut out = RewardOutcome {
        reward: 0.0,
        done: false,
        reached: None,
    };
    if stage < seq.len() {
        let next = seq[stage];
        let d = after.distance_to(next);
        if d <= config.target_radius && !before.reached[next.index()] {
            let d_paid = if config.literal_reward_typo && stage == 2 {
                after.distance_to(seq[1])
            } else {
                d
            };
            out.reward = config.stage_rewards[stage] / (1.0 + d_paid);
            out.done = stage + 1 == seq.len();
            out.reached = Some(next);
        }
    }
    if after.wall_hit {
        out.reward += config.wall_penalty;
    }
    out
}

/// Distance from `p` along unit direction `(dx, dy)` to the field boundary.
pub fn ray_to_wall(field_size: f64, p: Point, dx: f64, dy: f64) -> f64 {
    let axis = |pos: f64, dir: f64| {
        if dir > 0.0 {
            (field_size - pos) / dir
        } else if dir < 0.0 {
            -pos / dir
        } else {
            f64::INFINITY
        }
    };
    axis(p.x, dx).min(axis(p.y, dy)).max(0.0)
}

/// Target bearing in the robot frame, counter-clockwise positive.
pub fn bearing(pose: Pose, target: Point) -> f64 {
    let dx = target.x - pose.position.x;
    let dy = target.y - pose.position.y;
    let (s, c) = pose.heading.sin_cos();
    let local_x = c * dx + s * dy;
    let local_y = -s * dx + c * dy;
    local_y.atan2(local_x)
}

pub fn observe(config: &EnvConfig, state: &EnvState, last_reward: f64) -> Observation {
    let mut o = [0.0; OBS_DIM];
    let k = config.distance_scale;
    for c in Color::ALL {
        o[c.index()] = (-state.distance_to(c) / k).exp();
        let theta = bearing(state.robot, state.target(c));
        o[6 + 2 * c.index()] = theta.sin();
        o[7 + 2 * c.index()] = theta.cos();
    }
    let (s, cs) = state.robot.heading.sin_cos();
    let p = state.robot.position;
    o[3] = (-ray_to_wall(config.field_size, p, cs, s) / k).exp();
    o[4] = (-ray_to_wall(config.field_size, p, -cs, -s) / k).exp();
    o[5] = last_reward;
    Observation(o)
}

/// One row of the per-step episode trace export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTraceRow {
    pub episode: usize,
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub action_l: f64,
    pub action_r: f64,
    pub reward: f64,
    pub done: bool,
    pub d_red: f64,
    pub d_green: f64,
    pub d_blue: f64,
}

impl StepTraceRow {
    /// Row describing the state reached after executing `action` at step `step`.
    pub fn from_step(episode: usize, step: usize, action: Action, outcome: &StepOutcome) -> Self {
        let s = &outcome.state;
        Self {
            episode,
            step,
            x: s.robot.position.x,
            y: s.robot.position.y,
            heading: s.robot.heading,
            action_l: action.left_deg,
            action_r: action.right_deg,
            reward: outcome.reward,
            done: outcome.done,
            d_red: s.distance_to(Color::Red),
            d_green: s.distance_to(Color::Green),
            d_blue: s.distance_to(Color::Blue),
        }
    }
}

pub fn write_step_trace(path: &Path, rows: &[StepTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_step_trace(path: &Path) -> Result<Vec<StepTraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_with(robot: Point, heading: f64, targets: [Point; 3], phase: Phase) -> EnvState {
        EnvState {
            robot: Pose { position: robot, heading },
            targets,
            reached: [false; 3],
            step_count: 0,
            phase,
            wall_hit: false,
            done: false,
        }
    }

    fn layout() -> [Point; 3] {
        [Point::new(5.0, 5.0), Point::new(9.0, 5.0), Point::new(7.0, 9.0)]
    }

    fn moved(mut s: EnvState, to: Point) -> EnvState {
        s.robot.position = to;
        s.step_count += 1;
        s
    }

    #[test]
    fn reset_is_deterministic_and_valid() {
        let env = TargetEnv::new(EnvConfig::default()).unwrap();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(3), Phase::P1).unwrap();
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(3), Phase::P1).unwrap();
        assert_eq!(a, b);
        let (s, o) = a;
        for t in s.targets {
            assert!((3.5..=11.5).contains(&t.x) && (3.5..=11.5).contains(&t.y));
        }
        assert_eq!(o.reward_slot(), 0.0);
        assert_eq!(s.step_count, 0);
        assert!(!s.reached.iter().any(|&r| r));
    }

    #[test]
    fn first_target_contact_at_center_pays_stage_one() {
        let cfg = EnvConfig::default();
        let before = state_with(Point::new(5.0, 4.5), 0.0, layout(), Phase::P1);
        let after = moved(before.clone(), Point::new(5.0, 5.0));
        let out = reward(&cfg, &before, &after);
        assert_eq!(out.reward, 0.8);
        assert!(!out.done);
        assert_eq!(out.reached, Some(Color::Red));
    }

    #[test]
    fn out_of_sequence_contact_pays_nothing() {
        let cfg = EnvConfig::default();
        let before = state_with(Point::new(9.0, 4.5), 0.0, layout(), Phase::P1);
        let after = moved(before.clone(), Point::new(9.0, 5.0));
        let out = reward(&cfg, &before, &after);
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.reached, None);
    }

    #[test]
    fn second_and_third_stage_rewards() {
        let cfg = EnvConfig::default();
        let mut before = state_with(Point::new(9.0, 4.0), 0.0, layout(), Phase::P1);
        before.reached[Color::Red.index()] = true;
        let after = moved(before.clone(), Point::new(9.0, 5.2));
        let out = reward(&cfg, &before, &after);
        assert!((out.reward - 2.0 / 1.2).abs() < 1e-12);
        assert!(!out.done);

        let mut before = state_with(Point::new(7.0, 8.0), 0.0, layout(), Phase::P1);
        before.reached = [true, true, false];
        let after = moved(before.clone(), Point::new(7.0, 8.625));
        let out = reward(&cfg, &before, &after);
        assert!((out.reward - 5.0 / 1.375).abs() < 1e-12);
        assert!(out.done);
    }

    #[test]
    fn literal_typo_pays_by_second_target_distance() {
        let cfg = EnvConfig {
            literal_reward_typo: true,
            ..EnvConfig::default()
        };
        let mut before = state_with(Point::new(7.0, 8.0), 0.0, layout(), Phase::P1);
        before.reached = [true, true, false];
        let after = moved(before.clone(), Point::new(7.0, 9.0));
        let out = reward(&cfg, &before, &after);
        let d_green = Point::new(7.0, 9.0).distance(Point::new(9.0, 5.0));
        assert!((out.reward - 5.0 / (1.0 + d_green)).abs() < 1e-12);
    }

    #[test]
    fn wall_hit_penalty() {
        let cfg = EnvConfig::default();
        let env = TargetEnv::new(cfg).unwrap();
        let s = state_with(Point::new(0.3, 7.0), PI, layout(), Phase::P1);
        let out = env.step(&s, Action::new(180.0, 180.0)).unwrap();
        assert!(out.state.wall_hit);
        assert_eq!(out.reward, -0.1);
        assert_eq!(out.state.robot.position.x, 0.0);
        assert_eq!(out.observation.reward_slot(), -0.1);
    }

    #[test]
    fn kinematics_cases() {
        let cfg = EnvConfig::default();
        let pose = Pose {
            position: Point::new(7.5, 7.5),
            heading: 0.3,
        };
        let (p, hit) = kinematics(&cfg, pose, Action::new(180.0, 180.0));
        assert!(!hit);
        assert!((p.position.distance(pose.position) - PI * 0.25).abs() < 1e-12);
        assert!((p.heading - 0.3).abs() < 1e-15);

        let (p, _) = kinematics(&cfg, pose, Action::new(-180.0, 180.0));
        assert!((wrap_angle(p.heading - 0.3) - PI / 2.0).abs() < 1e-12);
        assert!(p.position.distance(pose.position) < 1e-12);

        let (p, hit) = kinematics(&cfg, pose, Action::zero());
        assert_eq!(p, pose);
        assert!(!hit);
    }

    #[test]
    fn center_wall_rays() {
        let cfg = EnvConfig::default();
        let s = state_with(Point::new(7.5, 7.5), 0.0, layout(), Phase::P1);
        let o = observe(&cfg, &s, 0.0);
        assert!((o.0[3] - (-7.5f64 / 5.0).exp()).abs() < 1e-15);
        assert!((o.0[4] - (-7.5f64 / 5.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn observation_on_and_ahead_of_target() {
        let cfg = EnvConfig::default();
        let s = state_with(Point::new(5.0, 5.0), 0.0, layout(), Phase::P1);
        let o = observe(&cfg, &s, 0.0);
        assert_eq!(o.0[0], 1.0);
        // green at (9, 5) is straight ahead along +x
        assert!(o.0[8].abs() < 1e-15);
        assert!((o.0[9] - 1.0).abs() < 1e-15);
        // blue at (7, 9) is to the left: positive bearing
        assert!(o.0[10] > 0.0);
    }

    #[test]
    fn idle_episode_times_out_with_zero_return() {
        let env = TargetEnv::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut s, _) = env.reset(&mut rng, Phase::P1).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        while !s.done {
            let out = env.step(&s, Action::zero()).unwrap();
            total += out.reward;
            assert_eq!(out.observation.reward_slot(), out.reward);
            s = out.state;
            steps += 1;
        }
        assert_eq!(steps, 128);
        assert_eq!(total, 0.0);
        assert!(matches!(env.step(&s, Action::zero()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn straight_drive_pays_once() {
        let env = TargetEnv::new(EnvConfig::default()).unwrap();
        let mut s = state_with(Point::new(2.0, 5.0), 0.0, layout(), Phase::P1);
        let mut paid = 0;
        for _ in 0..8 {
            let out = env.step(&s, Action::new(90.0, 90.0)).unwrap();
            if out.reward > 0.0 {
                paid += 1;
            }
            s = out.state;
        }
        assert_eq!(paid, 1);
        assert!(s.reached[Color::Red.index()]);
    }

    #[test]
    fn single_target_task_ends_on_first_contact() {
        let cfg = EnvConfig::reduced();
        let before = state_with(Point::new(5.0, 4.5), 0.0, layout(), Phase::P1);
        let after = moved(before.clone(), Point::new(5.0, 5.0));
        let out = reward(&cfg, &before, &after);
        assert_eq!(out.reward, 0.8);
        assert!(out.done);
    }

    #[test]
    fn action_clamps() {
        let a = Action::new(400.0, -999.0);
        assert_eq!((a.left_deg, a.right_deg), (180.0, -180.0));
        let a = Action::from_normalized([1.7, -0.5]);
        assert_eq!((a.left_deg, a.right_deg), (180.0, -90.0));
    }
}

//! Post-hoc analyses of recorded neural traces: time-normalized activity
//! profiles, their cross-episode consistency, PCA projections, and clamp
//! sources for forcing a trained agent into one sub-goal.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::env::{read_step_trace, Color, EnvConfig, Phase, StepTraceRow, TargetEnv};
use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::runner::{greedy_rollout, stream_rng, Clamp, EpisodeTrace, NeuralStep, Rollout};

pub const PROFILE_LEN: usize = 30;
/// Normalized times of the episode start and the three contacts.
pub const ANCHORS: [f64; 4] = [1.0, 10.0, 20.0, 30.0];
/// A target counts as approached once the robot comes this close to its center.
pub const APPROACH_RADIUS: f64 = 1.0;

/// Which recorded quantity a profile is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Signal {
    C1,
    U2,
    C2,
}

impl Signal {
    pub fn of(self, n: &NeuralStep) -> &[f64] {
        match self {
            Signal::C1 => &n.c1,
            Signal::U2 => &n.u2,
            Signal::C2 => &n.c2,
        }
    }

    /// RNN output of level `level` (1-based).
    pub fn output(level: usize) -> Result<Self> {
        match level {
            1 => Ok(Signal::C1),
            2 => Ok(Signal::C2),
            _ => Err(Error::InvalidArgument(format!("no level {level}"))),
        }
    }
}

/// Value of `trace` at the fractional step `s` by linear interpolation.
fn interp(trace: &[f64], s: f64) -> f64 {
    let i = s.floor() as usize;
    if i + 1 >= trace.len() {
        return trace[trace.len() - 1];
    }
    let f = s - i as f64;
    if f == 0.0 {
        trace[i]
    } else {
        trace[i] * (1.0 - f) + trace[i + 1] * f
    }
}

/// Fractional step for each normalized time `1..=30` given the anchor steps
/// `[0, contact1, contact2, contact3]`.
pub fn normalized_steps(contacts: &[usize], len: usize) -> Result<[f64; PROFILE_LEN]> {
    if contacts.len() != 3 {
        return Err(Error::Analysis(format!(
            "normalization needs three contacts, got {}",
            contacts.len()
        )));
    }
    let anchors = [0, contacts[0], contacts[1], contacts[2]];
    if anchors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Analysis(format!("contact steps must strictly increase: {contacts:?}")));
    }
    if contacts[2] >= len {
        return Err(Error::Analysis("contact beyond end of trace".into()));
    }
    let mut out = [0.0; PROFILE_LEN];
    for (k, o) in out.iter_mut().enumerate() {
        let tn = (k + 1) as f64;
        let seg = (0..3).find(|&j| tn <= ANCHORS[j + 1]).unwrap_or(2);
        let (a0, a1) = (ANCHORS[seg], ANCHORS[seg + 1]);
        let (s0, s1) = (anchors[seg] as f64, anchors[seg + 1] as f64);
        *o = if tn == a1 { s1 } else { s0 + (tn - a0) / (a1 - a0) * (s1 - s0) };
    }
    Ok(out)
}

/// Resamples every neuron's trace onto 30 normalized time points.
/// `trace` is `steps x neurons`; the result is `neurons x 30`.
pub fn normalize_episode(trace: ArrayView2<f64>, contacts: &[usize]) -> Result<Array2<f64>> {
    let steps = normalized_steps(contacts, trace.nrows())?;
    let mut out = Array2::zeros((trace.ncols(), PROFILE_LEN));
    for (k, col) in trace.axis_iter(Axis(1)).enumerate() {
        let v = col.to_vec();
        for (j, &s) in steps.iter().enumerate() {
            out[[k, j]] = interp(&v, s);
        }
    }
    Ok(out)
}

/// Profile (`neurons x 30`) of one successful traced episode.
pub fn episode_profile(trace: &EpisodeTrace, signal: Signal) -> Result<Array2<f64>> {
    if !trace.success {
        return Err(Error::Analysis(format!("episode {} was not successful", trace.episode)));
    }
    let n = trace.neural.first().map_or(0, |s| signal.of(s).len());
    let mut m = Array2::zeros((trace.neural.len(), n));
    for (t, s) in trace.neural.iter().enumerate() {
        m.row_mut(t).assign(&Array1::from(signal.of(s).to_vec()));
    }
    normalize_episode(m.view(), &trace.contacts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Consistency {
    pub mean: f64,
    /// (episode pair, neuron) terms that entered the mean.
    pub terms: usize,
    /// Terms skipped because a profile had zero norm.
    pub skipped: usize,
}

/// Mean cosine similarity between every unordered pair of episodes' profiles,
/// taken per neuron over normalized time and averaged over pairs and neurons.
pub fn consistency(profiles: &[Array2<f64>]) -> Result<Consistency> {
    if profiles.len() < 2 {
        return Err(Error::Analysis("consistency needs at least two episodes".into()));
    }
    let (neurons, len) = profiles[0].dim();
    if profiles.iter().any(|p| p.dim() != (neurons, len)) {
        return Err(Error::Analysis("profiles differ in shape".into()));
    }
    let e = profiles.len();
    let mut total = 0.0;
    let mut terms = 0usize;
    let mut skipped = 0usize;
    for k in 0..neurons {
        // sum of pairwise dot products of unit vectors = (|sum u|^2 - sum |u|^2) / 2
        let mut sum = Array1::<f64>::zeros(len);
        let mut valid = 0usize;
        for p in profiles {
            let row = p.row(k);
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                sum.scaled_add(1.0 / norm, &row);
                valid += 1;
            }
        }
        let pairs = valid * valid.saturating_sub(1) / 2;
        skipped += e * (e - 1) / 2 - pairs;
        if pairs > 0 {
            total += (sum.dot(&sum) - valid as f64) / 2.0;
            terms += pairs;
        }
    }
    if terms == 0 {
        return Err(Error::Analysis("every profile pair had zero norm".into()));
    }
    Ok(Consistency {
        mean: total / terms as f64,
        terms,
        skipped,
    })
}

/// Consistency of a level's outputs over the successful episodes among `traces`.
pub fn trace_consistency(traces: &[EpisodeTrace], level: usize) -> Result<Consistency> {
    let signal = Signal::output(level)?;
    let profiles: Vec<Array2<f64>> = traces
        .iter()
        .filter(|t| t.success && t.contacts.len() == 3)
        .map(|t| episode_profile(t, signal))
        .collect::<Result<_>>()?;
    consistency(&profiles)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub variant: String,
    pub phase: usize,
    pub level: usize,
    pub mean: f64,
    pub std: f64,
    pub agents: usize,
}

/// Mean and sample standard deviation of per-agent consistencies.
pub fn aggregate_consistency(variant: &str, phase: usize, level: usize, per_agent: &[f64]) -> ConsistencyRow {
    let n = per_agent.len();
    let mean = per_agent.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 {
        (per_agent.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    ConsistencyRow {
        variant: variant.to_string(),
        phase,
        level,
        mean,
        std,
        agents: n,
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `k x features`, rows in descending-variance order.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    /// Fraction of total variance per kept component.
    pub explained_ratio: Vec<f64>,
    /// `samples x k`.
    pub projections: Array2<f64>,
    /// Set when fewer than the requested components carry variance.
    pub warning: Option<String>,
}

/// Principal components of the rows of `data` (`samples x features`).
/// Each component's largest-magnitude loading is made positive.
pub fn pca_project(data: ArrayView2<f64>, n_components: usize) -> Result<Pca> {
    let (n, d) = data.dim();
    if n_components == 0 || n < n_components.max(2) {
        return Err(Error::Analysis(format!(
            "PCA with {n_components} components needs at least that many samples (and two), got {n}"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = order.first().map_or(0.0, |&i| eig.eigenvalues[i]).max(0.0);
    let tol = top * 1e-12 * d as f64;
    let mut kept = Vec::new();
    for &i in order.iter().take(n_components) {
        if eig.eigenvalues[i] > tol && eig.eigenvalues[i] > 0.0 {
            kept.push(i);
        }
    }
    let warning = (kept.len() < n_components).then(|| {
        let msg = format!(
            "data rank supports only {} of {n_components} requested components",
            kept.len()
        );
        log::warn!("{msg}");
        msg
    });
    let k = kept.len();
    let mut components = Array2::zeros((k, d));
    for (r, &i) in kept.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let big = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        let sign = if v[big] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[r, j]] = sign * v[j];
        }
    }
    let explained_variance: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let projections = centered.dot(&components.t());
    Ok(Pca {
        mean,
        components,
        explained_variance,
        explained_ratio,
        projections,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PcaRow {
    pub sample: usize,
    pub episode: usize,
    pub t_norm: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub segment: String,
}

/// Segment label for a normalized time: the color being approached.
pub fn segment_label(phase: Phase, t_norm: usize) -> String {
    let seq = phase.sequence();
    let seg = (0..3).find(|&j| (t_norm as f64) < ANCHORS[j + 1]).unwrap_or(2);
    format!("to_{}", seq[seg].name())
}

/// PCA of time-normalized level outputs over successful episodes; one
/// sample per (episode, normalized time).
pub fn trace_pca(traces: &[EpisodeTrace], level: usize) -> Result<(Pca, Vec<PcaRow>)> {
    let signal = Signal::output(level)?;
    let good: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.success && t.contacts.len() == 3).collect();
    if good.is_empty() {
        return Err(Error::Analysis("no successful three-contact episodes to project".into()));
    }
    let mut blocks = Vec::with_capacity(good.len());
    for t in &good {
        blocks.push(episode_profile(t, signal)?.reversed_axes());
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Analysis(e.to_string()))?;
    let pca = pca_project(data.view(), 2)?;
    let mut rows = Vec::with_capacity(data.nrows());
    for (i, t) in good.iter().enumerate() {
        for j in 0..PROFILE_LEN {
            let s = i * PROFILE_LEN + j;
            rows.push(PcaRow {
                sample: s,
                episode: t.episode,
                t_norm: j + 1,
                pc1: pca.projections[[s, 0]],
                pc2: if pca.projections.ncols() > 1 { pca.projections[[s, 1]] } else { 0.0 },
                segment: segment_label(t.phase, j + 1),
            });
        }
    }
    Ok((pca, rows))
}

/// Midpoint step of each inter-target segment: `[0, c1]`, `[c1, c2]`, `[c2, c3]`.
pub fn segment_midpoints(contacts: &[usize]) -> Result<[usize; 3]> {
    if contacts.len() != 3 {
        return Err(Error::Analysis("segment midpoints need three contacts".into()));
    }
    let a = [0, contacts[0], contacts[1], contacts[2]];
    Ok([(a[0] + a[1]) / 2, (a[1] + a[2]) / 2, (a[2] + a[3]) / 2])
}

/// Average state of `level` (1 or 2) at each segment midpoint over the
/// successful episodes, keyed by the color that segment approaches.
/// Lower-level hidden states are not traced and are recovered as `atanh(c1)`.
pub fn clamp_sources(traces: &[EpisodeTrace], level: usize) -> Result<Vec<(Color, Clamp)>> {
    let good: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.success && t.contacts.len() == 3).collect();
    let Some(first) = good.first() else {
        return Err(Error::Analysis("no successful episodes for clamp sources".into()));
    };
    let phase = first.phase;
    let n = match level {
        1 => first.neural[0].c1.len(),
        2 => first.neural[0].c2.len(),
        _ => return Err(Error::InvalidArgument(format!("no level {level}"))),
    };
    let mut sums = vec![(vec![0.0; n], vec![0.0; n]); 3];
    for t in &good {
        let mids = segment_midpoints(&t.contacts)?;
        for (seg, &m) in mids.iter().enumerate() {
            let s = &t.neural[m];
            let (u, c) = &mut sums[seg];
            for k in 0..n {
                let (uk, ck) = if level == 2 {
                    (s.u2[k], s.c2[k])
                } else {
                    (s.c1[k].clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(), s.c1[k])
                };
                u[k] += uk;
                c[k] += ck;
            }
        }
    }
    let count = good.len() as f64;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(seg, (u, c))| {
            (
                phase.sequence()[seg],
                Clamp {
                    level: level - 1,
                    u: u.into_iter().map(|v| v / count).collect(),
                    c: c.into_iter().map(|v| v / count).collect(),
                },
            )
        })
        .collect())
}

/// First target the trajectory comes within [`APPROACH_RADIUS`] of.
pub fn first_approached(rollout: &Rollout) -> Option<Color> {
    let start = &rollout.initial;
    let initially_near = |c: Color| start.distance_to(c) <= APPROACH_RADIUS;
    rollout.steps.iter().find_map(|r| {
        [(Color::Red, r.d_red), (Color::Green, r.d_green), (Color::Blue, r.d_blue)]
            .into_iter()
            .filter(|(c, d)| *d <= APPROACH_RADIUS && !initially_near(*c))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClampTrajectoryRow {
    pub clamp_level: usize,
    pub clamp_target: String,
    pub layout: usize,
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub d_red: f64,
    pub d_green: f64,
    pub d_blue: f64,
}

#[derive(Clone, Debug)]
pub struct ClampReport {
    pub target: Color,
    pub level: usize,
    pub layouts: usize,
    /// Layouts whose first approached target is `target`.
    pub hits: usize,
    pub rows: Vec<ClampTrajectoryRow>,
}

/// Greedy clamped rollouts over `layouts` random layouts (seeded from `seed`).
pub fn clamp_experiment(
    params: &NetworkParams,
    env: &EnvConfig,
    tau: &[f64],
    phase: Phase,
    target: Color,
    clamp: &Clamp,
    layouts: usize,
    seed: u64,
) -> Result<ClampReport> {
    let env = TargetEnv::new(env.clone())?;
    let mut hits = 0;
    let mut rows = Vec::new();
    for i in 0..layouts {
        let mut rng = stream_rng(seed, 100 + i as u64);
        let r = greedy_rollout(params, &env, tau, phase, Some(clamp), &mut rng)?;
        if first_approached(&r) == Some(target) {
            hits += 1;
        }
        rows.extend(r.steps.iter().map(|s| ClampTrajectoryRow {
            clamp_level: clamp.level + 1,
            clamp_target: target.name().to_string(),
            layout: i,
            step: s.step,
            x: s.x,
            y: s.y,
            heading: s.heading,
            d_red: s.d_red,
            d_green: s.d_green,
            d_blue: s.d_blue,
        }));
    }
    Ok(ClampReport {
        target,
        level: clamp.level + 1,
        layouts,
        hits,
        rows,
    })
}

/// Reads `traces/phase{p}_steps.csv` and `phase{p}_neural.csv` back into
/// episode traces. Contacts are the steps with positive reward.
pub fn load_traces(dir: &Path, phase: Phase, env: &EnvConfig) -> Result<Vec<EpisodeTrace>> {
    let steps_path = dir.join(format!("phase{}_steps.csv", phase.number()));
    let neural_path = dir.join(format!("phase{}_neural.csv", phase.number()));
    let steps = read_step_trace(&steps_path)?;
    let mut by_episode: BTreeMap<usize, (Vec<StepTraceRow>, Vec<NeuralStep>)> = BTreeMap::new();
    for r in steps {
        by_episode.entry(r.episode).or_default().0.push(r);
    }
    let mut reader = csv::Reader::from_path(&neural_path).map_err(|e| Error::csv(&neural_path, e))?;
    let header = reader.headers().map_err(|e| Error::csv(&neural_path, e))?.clone();
    let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
    let (n1, n2) = (count("c1_"), count("c2_"));
    if count("u2_") != n2 {
        return Err(Error::Analysis(format!("{}: malformed neural header", neural_path.display())));
    }
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::csv(&neural_path, e))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Analysis(format!("{}: bad field {i}", neural_path.display())))
        };
        let episode = parse(0)? as usize;
        let vals = (2..2 + n1 + 2 * n2).map(parse).collect::<Result<Vec<f64>>>()?;
        by_episode.entry(episode).or_default().1.push(NeuralStep {
            c1: vals[..n1].to_vec(),
            u2: vals[n1..n1 + n2].to_vec(),
            c2: vals[n1 + n2..].to_vec(),
        });
    }
    let need = env.sequence(phase).len();
    by_episode
        .into_iter()
        .map(|(episode, (steps, neural))| {
            if steps.len() != neural.len() {
                return Err(Error::Analysis(format!(
                    "episode {episode}: {} step rows but {} neural rows",
                    steps.len(),
                    neural.len()
                )));
            }
            let contacts: Vec<usize> = steps.iter().filter(|s| s.reward > 0.0).map(|s| s.step).collect();
            let success = contacts.len() == need && steps.last().is_some_and(|s| s.done) && steps.len() <= env.success_steps;
            Ok(EpisodeTrace {
                phase,
                episode,
                success,
                contacts,
                steps,
                neural,
            })
        })
        .collect()
}

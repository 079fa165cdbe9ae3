//! Flat replay memory with episode padding.
//!
//! Steps are appended in order; when an episode ends, `seq_len - 1` padding
//! rows are appended so that no window of `seq_len` consecutive rows can hold
//! gradient-bearing rows from two different episodes.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng;

use crate::checkpoint::{matrix_tensor, Container, Tensor};
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::network::{NetworkShape, RnnState};

pub const DEFAULT_CAPACITY: usize = 500_000;
pub const DEFAULT_SEQ_LEN: usize = 25;
pub const DEFAULT_BATCH: usize = 16;

const MAX_RESAMPLE: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    pub next_obs: [f64; OBS_DIM],
    /// Raw (unclamped) normalized action.
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub done: bool,
    /// Behavior-policy density of `action` (not its log).
    pub behavior_density: f64,
    /// Recurrent state computed at this step, i.e. the one that produced `action`.
    pub state: RnnState,
    pub grad_mask: bool,
}

impl Transition {
    /// Zero-content padding row. Carries `done = true` so nothing bootstraps across it.
    pub fn padding(shape: &NetworkShape) -> Self {
        Self {
            obs: [0.0; OBS_DIM],
            next_obs: [0.0; OBS_DIM],
            action: [0.0; ACTION_DIM],
            reward: 0.0,
            done: true,
            behavior_density: 0.0,
            state: RnnState::zeros(shape),
            grad_mask: false,
        }
    }
}

/// One sampled window of consecutive rows.
#[derive(Clone, Debug)]
pub struct Sequence {
    /// Buffer index of the first row at sampling time.
    pub start: usize,
    pub rows: Vec<Transition>,
    /// Recorded state of the row before `start`, or zeros when that row is padding or gone.
    pub initial_state: RnnState,
    /// `resets[k]` is true when row `k > 0` starts a new episode inside the window.
    pub resets: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub sequences: Vec<Sequence>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.rows.len())
    }

    pub fn real_rows(&self) -> usize {
        self.sequences
            .iter()
            .flat_map(|s| s.rows.iter())
            .filter(|r| r.grad_mask)
            .count()
    }
}

type WeightHook = Box<dyn Fn(&Transition) -> f64 + Send + Sync>;

pub struct ReplayBuffer {
    rows: VecDeque<Transition>,
    capacity: usize,
    seq_len: usize,
    shape: NetworkShape,
    pending: usize,
    real_rows: usize,
    weight_hook: Option<WeightHook>,
}

impl std::fmt::Debug for ReplayBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReplayBuffer")
            .field("len", &self.rows.len())
            .field("capacity", &self.capacity)
            .field("seq_len", &self.seq_len)
            .field("real_rows", &self.real_rows)
            .finish()
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seq_len: usize, shape: NetworkShape) -> Result<Self> {
        if capacity == 0 || seq_len == 0 {
            return Err(Error::InvalidArgument("capacity and seq_len must be positive".into()));
        }
        Ok(Self {
            rows: VecDeque::new(),
            capacity,
            seq_len,
            shape,
            pending: 0,
            real_rows: 0,
            weight_hook: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Rows that carry gradients.
    pub fn real_rows(&self) -> usize {
        self.real_rows
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.rows.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.rows.iter()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.pending = 0;
        self.real_rows = 0;
    }

    /// Installs a per-row weight for window-start sampling. `None` restores uniform sampling.
    pub fn set_sampling_weights(&mut self, hook: Option<WeightHook>) {
        self.weight_hook = hook;
    }

    fn append(&mut self, t: Transition) {
        if self.rows.len() == self.capacity {
            if let Some(old) = self.rows.pop_front() {
                if old.grad_mask {
                    self.real_rows -= 1;
                }
            }
        }
        if t.grad_mask {
            self.real_rows += 1;
        }
        self.rows.push_back(t);
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !(t.behavior_density > 0.0 && t.behavior_density.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "behavior density must be positive and finite, got {}",
                t.behavior_density
            )));
        }
        if !t.grad_mask {
            return Err(Error::InvalidArgument("pushed rows must be gradient-bearing".into()));
        }
        self.append(t);
        self.pending += 1;
        Ok(())
    }

    /// Closes the current episode with `seq_len - 1` padding rows. No-op if
    /// nothing was pushed since the last call.
    pub fn end_episode(&mut self) {
        if self.pending == 0 {
            return;
        }
        for _ in 1..self.seq_len {
            self.append(Transition::padding(&self.shape));
        }
        self.pending = 0;
    }

    fn window_has_real(&self, start: usize, len: usize) -> bool {
        self.rows.range(start..start + len).any(|r| r.grad_mask)
    }

    fn draw_start<R: Rng + ?Sized>(&self, rng: &mut R, len: usize, cumulative: Option<&[f64]>) -> usize {
        let n = self.rows.len() - len + 1;
        match cumulative {
            Some(cum) => {
                let total = cum[n - 1];
                let x = rng.random_range(0.0..total);
                cum.partition_point(|&c| c <= x).min(n - 1)
            }
            None => rng.random_range(0..n),
        }
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, len: usize) -> Result<SequenceBatch> {
        if len == 0 || self.rows.len() < len || self.real_rows == 0 {
            return Err(Error::NotReady {
                have: self.rows.len(),
                need: len.max(1),
            });
        }
        let cumulative = self.weight_hook.as_ref().map(|hook| {
            let starts = self.rows.len() - len + 1;
            let mut acc = 0.0;
            self.rows
                .iter()
                .take(starts)
                .map(|r| {
                    acc += hook(r).max(0.0);
                    acc
                })
                .collect::<Vec<f64>>()
        });
        if let Some(c) = &cumulative {
            if !(c.last().copied().unwrap_or(0.0) > 0.0) {
                return Err(Error::InvalidArgument("sampling weights sum to zero".into()));
            }
        }
        let mut sequences = Vec::with_capacity(n);
        for _ in 0..n {
            let mut tries = 0;
            let start = loop {
                let s = self.draw_start(rng, len, cumulative.as_deref());
                if self.window_has_real(s, len) {
                    break s;
                }
                tries += 1;
                if tries >= MAX_RESAMPLE {
                    return Err(Error::NotReady {
                        have: self.real_rows,
                        need: 1,
                    });
                }
            };
            sequences.push(self.window(start, len));
        }
        Ok(SequenceBatch { sequences })
    }

    /// The window of `len` rows starting at `start`.
    pub fn window(&self, start: usize, len: usize) -> Sequence {
        let rows: Vec<Transition> = self.rows.range(start..start + len).cloned().collect();
        let initial_state = match start.checked_sub(1).and_then(|i| self.rows.get(i)) {
            Some(prev) if prev.grad_mask => prev.state.clone(),
            _ => RnnState::zeros(&self.shape),
        };
        let resets = (0..rows.len())
            .map(|k| k > 0 && rows[k].grad_mask && !rows[k - 1].grad_mask)
            .collect();
        Sequence {
            start,
            rows,
            initial_state,
            resets,
        }
    }

    /// Dumps the buffer contents to the tensor container format.
    pub fn to_container(&self) -> Container {
        let n = self.rows.len();
        let mut obs = Array2::zeros((n, OBS_DIM));
        let mut next = Array2::zeros((n, OBS_DIM));
        let mut act = Array2::zeros((n, ACTION_DIM));
        let mut scalars = Array2::zeros((n, 4));
        for (i, r) in self.rows.iter().enumerate() {
            for k in 0..OBS_DIM {
                obs[[i, k]] = r.obs[k];
                next[[i, k]] = r.next_obs[k];
            }
            for k in 0..ACTION_DIM {
                act[[i, k]] = r.action[k];
            }
            scalars[[i, 0]] = r.reward;
            scalars[[i, 1]] = f64::from(u8::from(r.done));
            scalars[[i, 2]] = r.behavior_density;
            scalars[[i, 3]] = f64::from(u8::from(r.grad_mask));
        }
        let mut tensors: Vec<Tensor> = vec![
            matrix_tensor("obs", &obs),
            matrix_tensor("next_obs", &next),
            matrix_tensor("action", &act),
            matrix_tensor("reward_done_density_mask", &scalars),
        ];
        for (l, &size) in self.shape.levels.iter().enumerate() {
            let mut u = Array2::zeros((n, size));
            let mut c = Array2::zeros((n, size));
            for (i, r) in self.rows.iter().enumerate() {
                u.row_mut(i).assign(&r.state.levels[l].u);
                c.row_mut(i).assign(&r.state.levels[l].c);
            }
            tensors.push(matrix_tensor(&format!("u.{}", l + 1), &u));
            tensors.push(matrix_tensor(&format!("c.{}", l + 1), &c));
        }
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("kind".into(), "replay".into());
        meta.insert("seq_len".into(), self.seq_len.to_string());
        Container { meta, tensors }
    }
}

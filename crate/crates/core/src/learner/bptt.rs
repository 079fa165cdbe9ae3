//! Batched unroll of the recurrent network over replay windows and the
//! matching truncated backward pass.
//!
//! The backward pass differentiates a loss that is linear in the per-step
//! outputs, `sum_t sum_b [ cv[t][b, l] * v_l + clp[t][b] * log pi(a) ]`,
//! with the coefficients treated as constants. Value targets, importance
//! ratios and TD errors enter only through those coefficients.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::network::{
    forward_batch, gaussian_log_density, BatchState, BatchStep, NetworkParams, TimescaleSpec, SCALE_PREACT_MAX,
    SCALE_PREACT_MIN,
};

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    pub inputs: Vec<Array2<f64>>,
    /// Recurrent state fed into step `t`, after episode resets.
    pub prev: Vec<BatchState>,
    pub steps: Vec<BatchStep>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }

    pub fn last_state(&self) -> &BatchState {
        &self.steps.last().expect("non-empty tape").state
    }
}

/// Runs the network over `inputs[t]` (`batch x input`) from `initial`.
/// `resets[t][b]` zeroes sequence `b`'s state before step `t`; `noise[t][l]`
/// holds the unit Gaussians for level `l`.
pub fn unroll(
    params: &NetworkParams,
    initial: &BatchState,
    inputs: Vec<Array2<f64>>,
    resets: &[Vec<bool>],
    noise: &[Vec<Array2<f64>>],
    spec: &TimescaleSpec,
) -> Result<Tape> {
    let mut prev_states = Vec::with_capacity(inputs.len());
    let mut steps: Vec<BatchStep> = Vec::with_capacity(inputs.len());
    for (t, x) in inputs.iter().enumerate() {
        let mut prev = match steps.last() {
            Some(s) => s.state.clone(),
            None => initial.clone(),
        };
        if let Some(mask) = resets.get(t) {
            prev.reset_rows(mask);
        }
        let nz: Vec<ArrayView2<f64>> = noise[t].iter().map(|n| n.view()).collect();
        let step = forward_batch(params, &prev, x.view(), &nz, spec);
        let finite = step.state.u.iter().all(|u| u.iter().all(|v| v.is_finite()))
            && step.values.iter().all(|v| v.is_finite())
            && step.mean.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::non_finite(format!("replay unroll at step {t}")));
        }
        prev_states.push(prev);
        steps.push(step);
    }
    Ok(Tape {
        inputs,
        prev: prev_states,
        steps,
    })
}

/// Log-density of `actions` (`batch x ACTION_DIM`) under the step's head,
/// with the scale floored at `floor`.
pub fn step_log_density(step: &BatchStep, actions: &Array2<f64>, floor: f64) -> Array1<f64> {
    let b = actions.nrows();
    Array1::from_shape_fn(b, |i| {
        (0..ACTION_DIM)
            .map(|k| gaussian_log_density(step.mean[[i, k]], step.scale[[i, k]].max(floor), actions[[i, k]]))
            .sum()
    })
}

/// Gradient of the linear objective described in the module docs.
///
/// `cv[t]` is `batch x levels`, `clp[t]` has length `batch`, `actions[t]` is
/// `batch x ACTION_DIM`.
pub fn backward(
    params: &NetworkParams,
    tape: &Tape,
    resets: &[Vec<bool>],
    spec: &TimescaleSpec,
    actions: &[Array2<f64>],
    floor: f64,
    cv: &[Array2<f64>],
    clp: &[Array1<f64>],
) -> NetworkParams {
    let nl = params.num_levels();
    let t_len = tape.len();
    let batch = tape.batch();
    let shape = params.shape();
    let mut grads = NetworkParams::zeros(&shape);
    if t_len == 0 {
        return grads;
    }

    let mut gu_next: Vec<Array2<f64>> = shape.levels.iter().map(|&n| Array2::zeros((batch, n))).collect();
    let mut gin_next: Vec<Array2<f64>> = gu_next.clone();
    // per-step cotangents, stored newest first and reversed afterwards
    let mut gin_hist: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(t_len); nl];
    let mut gmean_hist: Vec<Array2<f64>> = Vec::with_capacity(t_len);
    let mut gz_hist: Vec<Array2<f64>> = Vec::with_capacity(t_len);

    for t in (0..t_len).rev() {
        if let Some(mask) = resets.get(t + 1) {
            for (b, &m) in mask.iter().enumerate() {
                if m {
                    for l in 0..nl {
                        gu_next[l].row_mut(b).fill(0.0);
                        gin_next[l].row_mut(b).fill(0.0);
                    }
                }
            }
        }
        let step = &tape.steps[t];
        let mut gmean = Array2::zeros((batch, ACTION_DIM));
        let mut gz = Array2::zeros((batch, ACTION_DIM));
        for b in 0..batch {
            let w = clp[t][b];
            if w == 0.0 {
                continue;
            }
            for k in 0..ACTION_DIM {
                let p = step.mean[[b, k]];
                let e = step.scale[[b, k]];
                let e_eff = e.max(floor);
                let d = actions[t][[b, k]] - p;
                gmean[[b, k]] = w * d / (e_eff * e_eff) * (1.0 - p * p);
                let z = step.scale_preact[[b, k]];
                let active = e > floor && z > SCALE_PREACT_MIN && z < SCALE_PREACT_MAX;
                if active {
                    gz[[b, k]] = w * (d * d / (e * e * e) - 1.0 / e) * 0.5 * e;
                }
            }
        }

        let mut gin_cur: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); nl];
        let mut gu_cur: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); nl];
        for l in (0..nl).rev() {
            let lp = &params.levels[l];
            let n = lp.b_u.len();
            let mut gc = Array2::zeros((batch, n));
            let coef = cv[t].column(l);
            for b in 0..batch {
                let cb = coef[b];
                if cb != 0.0 {
                    gc.row_mut(b).scaled_add(cb, &lp.w_v);
                }
            }
            if l == 0 {
                gc += &gmean.dot(&params.w_a);
                gc += &gz.dot(&params.w_e);
            }
            if l + 1 < nl {
                gc += &gin_cur[l + 1].dot(&params.levels[l + 1].w_in);
            }
            gc += &gin_next[l].dot(&lp.w_rec);
            if l > 0 {
                let w_top = params.levels[l - 1].w_top.as_ref().expect("lower level has top-down weights");
                gc += &gin_next[l - 1].dot(w_top);
            }
            let c = &step.state.c[l];
            let rate = 1.0 / spec.tau[l];
            let mut gu = gc;
            ndarray::Zip::from(&mut gu)
                .and(c)
                .and(&gu_next[l])
                .for_each(|g, &c, &gn| *g = *g * (1.0 - c * c) + (1.0 - rate) * gn);
            gin_cur[l] = &gu * rate;
            gu_cur[l] = gu;
        }
        for l in 0..nl {
            gin_hist[l].push(gin_cur[l].clone());
        }
        gmean_hist.push(gmean);
        gz_hist.push(gz);
        gu_next = gu_cur;
        gin_next = gin_cur;
    }

    let stack = |mut v: Vec<Array2<f64>>, reverse: bool| -> Array2<f64> {
        if reverse {
            v.reverse();
        }
        let views: Vec<_> = v.iter().map(|a| a.view()).collect();
        concatenate(Axis(0), &views).expect("consistent step shapes")
    };
    let stack_ref = |v: Vec<ArrayView2<f64>>| -> Array2<f64> { concatenate(Axis(0), &v).expect("consistent step shapes") };

    let c_all: Vec<Array2<f64>> = (0..nl)
        .map(|l| stack_ref(tape.steps.iter().map(|s| s.state.c[l].view()).collect()))
        .collect();
    let cprev_all: Vec<Array2<f64>> = (0..nl)
        .map(|l| stack_ref(tape.prev.iter().map(|s| s.c[l].view()).collect()))
        .collect();
    let x_all = stack_ref(tape.inputs.iter().map(|x| x.view()).collect());
    let cv_all = stack_ref(cv.iter().map(|c| c.view()).collect());

    for (l, hist) in gin_hist.into_iter().enumerate() {
        let gin = stack(hist, true);
        let below = if l == 0 { &x_all } else { &c_all[l - 1] };
        let g = &mut grads.levels[l];
        g.w_in = gin.t().dot(below);
        g.w_rec = gin.t().dot(&cprev_all[l]);
        if l + 1 < nl {
            g.w_top = Some(gin.t().dot(&cprev_all[l + 1]));
        }
        g.b_u = gin.sum_axis(Axis(0));
        let coef = cv_all.column(l);
        g.w_v = c_all[l].t().dot(&coef);
        g.b_v[0] = coef.sum();
    }
    let gmean = stack(gmean_hist, true);
    let gz = stack(gz_hist, true);
    grads.w_a = gmean.t().dot(&c_all[0]);
    grads.b_a = gmean.sum_axis(Axis(0));
    grads.w_e = gz.t().dot(&c_all[0]);
    grads.b_e = gz.sum_axis(Axis(0));
    grads
}

/// Value of the linear objective for a fixed tape. Used by gradient checks.
pub fn linear_objective(
    tape: &Tape,
    actions: &[Array2<f64>],
    floor: f64,
    cv: &[Array2<f64>],
    clp: &[Array1<f64>],
) -> f64 {
    let mut total = 0.0;
    for (t, step) in tape.steps.iter().enumerate() {
        total += (&step.values * &cv[t]).sum();
        let lp = step_log_density(step, &actions[t], floor);
        total += lp.dot(&clp[t]);
    }
    total
}

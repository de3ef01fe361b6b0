use super::params::{CellState, Gate, LstmParams};
use crate::error::{Error, Result};

/// `σ(z) = e^z / (1 + e^z)`, evaluated without overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One cell update:
///
/// ```text
/// ĉ  = tanh(w_c·[h, x] + b_c)
/// c' = σ(w_f·[h, x] + b_f) ⊙ c + σ(w_i·[h, x] + b_i) ⊙ ĉ
/// h' = σ(w_o·[h, x] + b_o) ⊙ tanh(c')
/// ```
pub fn step(params: &LstmParams, state: &CellState, x: &[f64]) -> Result<CellState> {
    let n = params.hidden();
    if x.len() != params.input() {
        return Err(Error::ShapeMismatch {
            what: "cell input",
            expected: params.input(),
            found: x.len(),
        });
    }
    if state.h.len() != n || state.c.len() != n {
        return Err(Error::ShapeMismatch {
            what: "cell state",
            expected: n,
            found: state.h.len().min(state.c.len()),
        });
    }
    Ok(step_unchecked(params, state, x))
}

pub(crate) fn step_unchecked(params: &LstmParams, state: &CellState, x: &[f64]) -> CellState {
    let n = params.hidden();
    let m = params.concat_width();
    let mut hx = Vec::with_capacity(m);
    hx.extend_from_slice(&state.h);
    hx.extend_from_slice(x);

    let pre = |g: Gate, j: usize| {
        let row = &params.gate_w(g)[j * m..(j + 1) * m];
        dot(row, &hx) + params.gate_b(g)[j]
    };
    let mut next = CellState::zeros(n);
    for j in 0..n {
        let cand = pre(Gate::Candidate, j).tanh();
        let f = sigmoid(pre(Gate::Forget, j));
        let i = sigmoid(pre(Gate::Input, j));
        let o = sigmoid(pre(Gate::Output, j));
        let c = f * state.c[j] + i * cand;
        next.c[j] = c;
        next.h[j] = o * c.tanh();
    }
    next
}

fn check_window(params: &LstmParams, window: &[f64]) -> Result<usize> {
    let d = params.input();
    if window.is_empty() || window.len() % d != 0 {
        return Err(Error::ShapeMismatch {
            what: "window (flattened rows)",
            expected: d * (window.len() / d).max(1),
            found: window.len(),
        });
    }
    Ok(window.len() / d)
}

/// Final recurrent state after running a window from `h = c = 0`.
pub fn final_state(params: &LstmParams, window: &[f64]) -> Result<CellState> {
    check_window(params, window)?;
    let mut state = CellState::zeros(params.hidden());
    for x in window.chunks_exact(params.input()) {
        state = step_unchecked(params, &state, x);
    }
    Ok(state)
}

/// Probability of assistance `P(A) = σ(w_y·h_T + b_y)` for one window of
/// flattened `T × input` rows.
pub fn forward(params: &LstmParams, window: &[f64]) -> Result<f64> {
    let state = final_state(params, window)?;
    Ok(sigmoid(dot(params.w_y(), &state.h) + params.b_y()))
}

//! Batched forward pass and backpropagation through time.
//!
//! Each time step is one `B × (n + d)` by `(n + d) × 4n` product for the
//! forward pass and two products for the backward pass. Row `b` of every
//! buffer belongs to sample `b` of the batch; samples never mix until the
//! weight-gradient products, whose reduction order is the batch order.

use super::cell::sigmoid;
use super::params::LstmParams;
use crate::error::{Error, Result};

/// One training example: flattened `T × d` rows, target in `{0, 1}`, and the
/// weight that multiplies its residual.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub window: &'a [f64],
    pub label: f64,
    pub weight: f64,
}

/// `C = alpha · A · B + beta · C` for row-major/strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa);
    debug_assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the strides and extents above keep every access inside the
    // three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Activations kept from the forward pass.
#[derive(Debug, Default)]
pub(crate) struct Trace {
    batch: usize,
    steps: usize,
    /// `[h_{t}, x_{t+1}]` per step: `T × B × m`.
    hx: Vec<f64>,
    /// Activated gates `[ĉ, f, i, o]` per step: `T × B × 4n`.
    gates: Vec<f64>,
    /// Memory `c_0 … c_T`: `(T + 1) × B × n`.
    c: Vec<f64>,
    /// `tanh(c_t)` for `t = 1 … T`: `T × B × n`.
    tanh_c: Vec<f64>,
    /// `h_T`: `B × n`.
    h_last: Vec<f64>,
    /// `P(A)` per sample.
    pub(crate) prob: Vec<f64>,
}

fn steps_of(params: &LstmParams, windows: &[&[f64]]) -> Result<usize> {
    let d = params.input();
    let first = windows.first().ok_or(Error::Empty("batch"))?;
    if first.is_empty() || first.len() % d != 0 {
        return Err(Error::ShapeMismatch {
            what: "window (flattened rows)",
            expected: d * (first.len() / d).max(1),
            found: first.len(),
        });
    }
    for w in windows {
        if w.len() != first.len() {
            return Err(Error::ShapeMismatch {
                what: "window length within batch",
                expected: first.len(),
                found: w.len(),
            });
        }
    }
    Ok(first.len() / d)
}

pub(crate) fn forward_trace(params: &LstmParams, windows: &[&[f64]]) -> Result<Trace> {
    let steps = steps_of(params, windows)?;
    let bsz = windows.len();
    let n = params.hidden();
    let d = params.input();
    let m = params.concat_width();
    let g4 = 4 * n;

    let mut tr = Trace {
        batch: bsz,
        steps,
        hx: vec![0.0; steps * bsz * m],
        gates: vec![0.0; steps * bsz * g4],
        c: vec![0.0; (steps + 1) * bsz * n],
        tanh_c: vec![0.0; steps * bsz * n],
        h_last: vec![0.0; bsz * n],
        prob: vec![0.0; bsz],
    };
    let w = params.w();
    let bias = params.b();
    let mut h = vec![0.0; bsz * n];

    for t in 0..steps {
        let hx = &mut tr.hx[t * bsz * m..(t + 1) * bsz * m];
        for (b, win) in windows.iter().enumerate() {
            let row = &mut hx[b * m..(b + 1) * m];
            row[..n].copy_from_slice(&h[b * n..(b + 1) * n]);
            row[n..].copy_from_slice(&win[t * d..(t + 1) * d]);
        }
        let z = &mut tr.gates[t * bsz * g4..(t + 1) * bsz * g4];
        // Z = HX · Wᵀ
        gemm(bsz, m, g4, hx, (m, 1), w, (1, m), 0.0, z, g4);

        let (c_prev_all, c_next_all) = tr.c.split_at_mut((t + 1) * bsz * n);
        let c_prev = &c_prev_all[t * bsz * n..];
        let c_next = &mut c_next_all[..bsz * n];
        let tc = &mut tr.tanh_c[t * bsz * n..(t + 1) * bsz * n];
        for b in 0..bsz {
            let zr = &mut z[b * g4..(b + 1) * g4];
            for j in 0..n {
                let cand = (zr[j] + bias[j]).tanh();
                let f = sigmoid(zr[n + j] + bias[n + j]);
                let i = sigmoid(zr[2 * n + j] + bias[2 * n + j]);
                let o = sigmoid(zr[3 * n + j] + bias[3 * n + j]);
                zr[j] = cand;
                zr[n + j] = f;
                zr[2 * n + j] = i;
                zr[3 * n + j] = o;
                let c = f * c_prev[b * n + j] + i * cand;
                c_next[b * n + j] = c;
                let th = c.tanh();
                tc[b * n + j] = th;
                h[b * n + j] = o * th;
            }
        }
    }

    let w_y = params.w_y();
    for b in 0..bsz {
        let hb = &h[b * n..(b + 1) * n];
        let logit: f64 = hb.iter().zip(w_y).map(|(x, y)| x * y).sum::<f64>() + params.b_y();
        tr.prob[b] = sigmoid(logit);
    }
    tr.h_last = h;
    Ok(tr)
}

/// `P(A)` for many windows of equal length, processed in chunks.
pub fn forward_batch(params: &LstmParams, windows: &[&[f64]]) -> Result<Vec<f64>> {
    const CHUNK: usize = 128;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        out.extend(forward_trace(params, chunk)?.prob);
    }
    Ok(out)
}

/// Weighted squared error `(1/B) Σ w_j² (P_j - a_j)²` and its exact gradient,
/// in the same flat layout as `params`.
///
/// Samples are reduced in a canonical order (by label, weight, then window
/// contents), so any permutation of `batch` gives bit-identical results.
pub fn loss_and_gradients(params: &LstmParams, batch: &[Sample<'_>]) -> Result<(f64, LstmParams)> {
    let mut sorted = batch.to_vec();
    sorted.sort_by(canonical_order);
    let batch = sorted.as_slice();
    let windows: Vec<&[f64]> = batch.iter().map(|s| s.window).collect();
    let tr = forward_trace(params, &windows)?;
    let bsz = batch.len();
    let inv_b = 1.0 / bsz as f64;

    let mut loss = 0.0;
    let mut dlogit = vec![0.0; bsz];
    for (j, s) in batch.iter().enumerate() {
        let p = tr.prob[j];
        let r = p - s.label;
        let w2 = s.weight * s.weight;
        loss += w2 * r * r;
        dlogit[j] = 2.0 * inv_b * w2 * r * p * (1.0 - p);
    }
    loss *= inv_b;

    let grads = backward(params, &tr, &dlogit);
    Ok((loss, grads))
}

fn canonical_order(a: &Sample<'_>, b: &Sample<'_>) -> std::cmp::Ordering {
    a.label
        .total_cmp(&b.label)
        .then(a.weight.total_cmp(&b.weight))
        .then_with(|| {
            a.window
                .iter()
                .zip(b.window)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(a.window.len().cmp(&b.window.len()))
        })
}

fn backward(params: &LstmParams, tr: &Trace, dlogit: &[f64]) -> LstmParams {
    let n = params.hidden();
    let m = params.concat_width();
    let g4 = 4 * n;
    let bsz = tr.batch;
    let w = params.w();
    let w_y = params.w_y();

    let mut grads = LstmParams::zeros(n, params.input());
    let mut dw = vec![0.0; g4 * m];
    let mut db = vec![0.0; g4];
    let mut dw_y = vec![0.0; n];
    let mut db_y = 0.0;

    let mut dh = vec![0.0; bsz * n];
    for b in 0..bsz {
        let hb = &tr.h_last[b * n..(b + 1) * n];
        for j in 0..n {
            dw_y[j] += dlogit[b] * hb[j];
            dh[b * n + j] = dlogit[b] * w_y[j];
        }
        db_y += dlogit[b];
    }

    let mut dc = vec![0.0; bsz * n];
    let mut dz = vec![0.0; bsz * g4];
    let mut dhx = vec![0.0; bsz * m];
    for t in (0..tr.steps).rev() {
        let gates = &tr.gates[t * bsz * g4..(t + 1) * bsz * g4];
        let c_prev = &tr.c[t * bsz * n..(t + 1) * bsz * n];
        let tc = &tr.tanh_c[t * bsz * n..(t + 1) * bsz * n];
        for b in 0..bsz {
            let gr = &gates[b * g4..(b + 1) * g4];
            let dzr = &mut dz[b * g4..(b + 1) * g4];
            for j in 0..n {
                let k = b * n + j;
                let (cand, f, i, o) = (gr[j], gr[n + j], gr[2 * n + j], gr[3 * n + j]);
                let th = tc[k];
                let dhk = dh[k];
                dzr[3 * n + j] = dhk * th * o * (1.0 - o);
                let dck = dc[k] + dhk * o * (1.0 - th * th);
                dzr[n + j] = dck * c_prev[k] * f * (1.0 - f);
                dzr[2 * n + j] = dck * cand * i * (1.0 - i);
                dzr[j] = dck * i * (1.0 - cand * cand);
                dc[k] = dck * f;
            }
        }
        for b in 0..bsz {
            for (acc, v) in db.iter_mut().zip(&dz[b * g4..(b + 1) * g4]) {
                *acc += v;
            }
        }
        let hx = &tr.hx[t * bsz * m..(t + 1) * bsz * m];
        // dW += dZᵀ · HX
        gemm(g4, bsz, m, &dz, (1, g4), hx, (m, 1), 1.0, &mut dw, m);
        if t > 0 {
            // dHX = dZ · W
            gemm(bsz, g4, m, &dz, (g4, 1), w, (m, 1), 0.0, &mut dhx, m);
            for b in 0..bsz {
                dh[b * n..(b + 1) * n].copy_from_slice(&dhx[b * m..b * m + n]);
            }
        }
    }

    grads.w_mut().copy_from_slice(&dw);
    grads.b_mut().copy_from_slice(&db);
    grads.w_y_mut().copy_from_slice(&dw_y);
    grads.set_b_y(db_y);
    grads
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gate blocks, in the order they are stacked in [`LstmParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    /// `ĉ`, the tanh candidate.
    Candidate = 0,
    Forget = 1,
    Input = 2,
    Output = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Candidate, Gate::Forget, Gate::Input, Gate::Output];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Candidate => "c",
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
        }
    }
}

/// All trainable parameters in one flat buffer:
///
/// * `w`: `4n × (n + input)` row-major, gate blocks stacked as [`Gate::ALL`],
///   columns ordered `[h, x]`
/// * `b`: `4n`
/// * `w_y`: `n`
/// * `b_y`: scalar
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    hidden: usize,
    input: usize,
    data: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstmParams {
            hidden,
            input,
            data: vec![0.0; Self::count(hidden, input)],
        }
    }

    pub fn count(hidden: usize, input: usize) -> usize {
        let m = hidden + input;
        4 * hidden * m + 4 * hidden + hidden + 1
    }

    /// Gate weights uniform in `±1/√(n + input)`, forget bias `+1`, other
    /// biases zero, output weights uniform in `±1/√n`.
    pub fn init<R: Rng>(hidden: usize, input: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden, input);
        let bound = 1.0 / ((hidden + input) as f64).sqrt();
        for w in p.w_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        let n = hidden;
        for b in &mut p.b_mut()[n..2 * n] {
            *b = 1.0;
        }
        let bound_y = 1.0 / (hidden as f64).sqrt();
        for w in p.w_y_mut() {
            *w = rng.gen_range(-bound_y..bound_y);
        }
        p
    }

    pub fn from_vec(hidden: usize, input: usize, data: Vec<f64>) -> Result<Self> {
        let expected = Self::count(hidden, input);
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "parameter vector",
                expected,
                found: data.len(),
            });
        }
        Ok(LstmParams {
            hidden,
            input,
            data,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    /// Width of the concatenated `[h, x]` vector.
    pub fn concat_width(&self) -> usize {
        self.hidden + self.input
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn w_len(&self) -> usize {
        4 * self.hidden * self.concat_width()
    }

    pub fn w(&self) -> &[f64] {
        &self.data[..self.w_len()]
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        let l = self.w_len();
        &mut self.data[..l]
    }

    pub fn gate_w(&self, g: Gate) -> &[f64] {
        let block = self.hidden * self.concat_width();
        let s = g as usize * block;
        &self.w()[s..s + block]
    }

    pub fn b(&self) -> &[f64] {
        let s = self.w_len();
        &self.data[s..s + 4 * self.hidden]
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        let s = self.w_len();
        let n = self.hidden;
        &mut self.data[s..s + 4 * n]
    }

    pub fn gate_b(&self, g: Gate) -> &[f64] {
        let n = self.hidden;
        &self.b()[g as usize * n..(g as usize + 1) * n]
    }

    pub fn w_y(&self) -> &[f64] {
        let s = self.w_len() + 4 * self.hidden;
        &self.data[s..s + self.hidden]
    }

    pub fn w_y_mut(&mut self) -> &mut [f64] {
        let s = self.w_len() + 4 * self.hidden;
        let n = self.hidden;
        &mut self.data[s..s + n]
    }

    pub fn b_y(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn set_b_y(&mut self, v: f64) {
        let l = self.data.len();
        self.data[l - 1] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Named tensors with their shapes, for serialization.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let n = self.hidden;
        let m = self.concat_width();
        let mut out = Vec::with_capacity(10);
        for g in Gate::ALL {
            out.push((format!("w_{}", g.name()), vec![n, m], self.gate_w(g).to_vec()));
        }
        for g in Gate::ALL {
            out.push((format!("b_{}", g.name()), vec![n], self.gate_b(g).to_vec()));
        }
        out.push(("w_y".to_string(), vec![n], self.w_y().to_vec()));
        out.push(("b_y".to_string(), vec![], vec![self.b_y()]));
        out
    }

    /// Inverse of [`LstmParams::tensors`]; `get` looks a tensor up by name.
    pub fn from_tensors<'a>(
        hidden: usize,
        input: usize,
        mut get: impl FnMut(&str) -> Option<(&'a [usize], &'a [f64])>,
    ) -> Result<Self> {
        let n = hidden;
        let m = hidden + input;
        let mut data = Vec::with_capacity(Self::count(hidden, input));
        let mut take = |name: String, shape: &[usize]| -> Result<()> {
            let (s, d) = get(&name).ok_or_else(|| Error::invalid(name.clone(), "missing tensor"))?;
            let expected: usize = shape.iter().product();
            if s != shape || d.len() != expected {
                return Err(Error::ShapeMismatch {
                    what: "tensor",
                    expected,
                    found: d.len(),
                });
            }
            data.extend_from_slice(d);
            Ok(())
        };
        for g in Gate::ALL {
            take(format!("w_{}", g.name()), &[n, m])?;
        }
        for g in Gate::ALL {
            take(format!("b_{}", g.name()), &[n])?;
        }
        take("w_y".to_string(), &[n])?;
        take("b_y".to_string(), &[])?;
        Self::from_vec(hidden, input, data)
    }
}

/// Recurrent state: output `h` and memory `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

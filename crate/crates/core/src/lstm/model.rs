use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bptt::forward_batch;
use super::cell::forward;
use super::train::TrainConfig;
use super::params::LstmParams;
use crate::container;
use crate::error::{Error, Result};
use crate::features::{scale_states, window_at, Scaler, StateVector, N_FEATURES};

pub const MODEL_SCHEMA: &str = "iart-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub samples: usize,
    pub positive_fraction: f64,
    pub epoch_loss: Vec<f64>,
}

/// Trained parameters together with the scaler their inputs expect.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub params: LstmParams,
    pub scaler: Scaler,
    /// Window length in ticks.
    pub window: usize,
    pub meta: TrainMeta,
}

/// `P(A) > 0.5`; exactly one half is off.
pub fn decide(p: f64) -> u8 {
    u8::from(p > 0.5)
}

#[derive(Serialize, Deserialize)]
struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    hidden: usize,
    input: usize,
    window: usize,
    tensors: BTreeMap<String, Tensor>,
    scaler: Scaler,
    meta: TrainMeta,
}

impl LstmModel {
    pub fn hidden(&self) -> usize {
        self.params.hidden()
    }

    fn check(&self, window: &[f64]) -> Result<()> {
        let expected = self.window * N_FEATURES;
        if window.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "window (flattened rows)",
                expected,
                found: window.len(),
            });
        }
        Ok(())
    }

    /// `P(A)` for one scaled window.
    pub fn probability(&self, window: &[f64]) -> Result<f64> {
        self.check(window)?;
        forward(&self.params, window)
    }

    pub fn predict(&self, window: &[f64]) -> Result<u8> {
        Ok(decide(self.probability(window)?))
    }

    /// Batched `P(A)`; agrees with [`LstmModel::probability`] to rounding.
    pub fn probabilities(&self, windows: &[&[f64]]) -> Result<Vec<f64>> {
        for w in windows {
            self.check(w)?;
        }
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        forward_batch(&self.params, windows)
    }

    /// Decisions for every full window of a raw state sequence; entry `k`
    /// belongs to tick `k + window - 1`. Uses the single-window path, so the
    /// result matches an online predictor fed the same states.
    pub fn predict_states(&self, states: &[StateVector]) -> Result<Vec<u8>> {
        let scaled = scale_states(states, &self.scaler);
        (self.window.saturating_sub(1)..scaled.len())
            .map(|end| self.predict(&window_at(&scaled, end, self.window)))
            .collect()
    }

    fn body(&self) -> ModelBody {
        ModelBody {
            hidden: self.params.hidden(),
            input: self.params.input(),
            window: self.window,
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, shape, data)| (name, Tensor { shape, data }))
                .collect(),
            scaler: self.scaler.clone(),
            meta: self.meta.clone(),
        }
    }

    fn from_body(body: ModelBody) -> Result<Self> {
        if body.input != N_FEATURES {
            return Err(Error::ShapeMismatch {
                what: "model input size",
                expected: N_FEATURES,
                found: body.input,
            });
        }
        if body.window == 0 || body.hidden == 0 {
            return Err(Error::invalid("model", "window and hidden must be >= 1"));
        }
        let params = LstmParams::from_tensors(body.hidden, body.input, |name| {
            body.tensors.get(name).map(|t| (t.shape.as_slice(), t.data.as_slice()))
        })?;
        if !params.is_finite() {
            return Err(Error::invalid("model", "non-finite parameter"));
        }
        Ok(LstmModel {
            params,
            scaler: body.scaler,
            window: body.window,
            meta: body.meta,
        })
    }

    pub fn to_text(&self) -> Result<String> {
        container::encode(MODEL_SCHEMA, &self.body())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_body(container::decode(text, MODEL_SCHEMA, "model")?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::save(path.as_ref(), MODEL_SCHEMA, &self.body())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_body(container::load(path.as_ref(), MODEL_SCHEMA)?)
    }
}

//! Session records, their JSONL persistence, and the online predictor.

use std::borrow::Borrow;
use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::Gains;
use crate::error::{Error, Result};
use crate::features::{ActionSource, Phase, StateActionPair, StateVector, N_FEATURES, TICK_HZ};
use crate::geometry::{check_tag, CurveSpec};
use crate::lstm::{decide, LstmModel};
use crate::simulation::{PatientModel, TherapistPolicy};
use crate::Vec3;

pub const SESSION_SCHEMA: &str = "session/1";

/// Who drove the applied actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionSource {
    Demonstrator,
    Model,
    None,
    /// A person at the socket interface.
    Live,
}

/// Phase-switching rules of the tracking task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseProtocol {
    /// Distance to the goal point that completes a phase, metres.
    pub completion_radius: f64,
    /// Fraction of the curve that must be traversed before tracking can end.
    pub min_progress: f64,
}

impl Default for PhaseProtocol {
    fn default() -> Self {
        PhaseProtocol {
            completion_radius: 0.005,
            min_progress: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub schema: String,
    /// Stable identifier, used to reference ticks across files.
    pub id: String,
    pub curve: CurveSpec,
    pub protocol: PhaseProtocol,
    pub gains: Gains,
    pub source: SessionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<TherapistPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<TherapistPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient: Option<PatientModel>,
    pub seed: u64,
    /// Wall-clock start for live sessions; absent for simulations so that
    /// reruns are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    pub state: StateVector,
    /// Applied action.
    pub action: u8,
    pub source: ActionSource,
    pub x: Vec3,
    pub x_dot: Vec3,
    /// Closest reference point.
    pub x_l: Vec3,
    /// Applied assistance force, N.
    pub u: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    /// The model's own decision, kept when it was overridden.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_action: Option<u8>,
    /// Decision of a demonstrator that watched without acting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<u8>,
    #[serde(default)]
    pub overridden: bool,
}

impl TickRecord {
    pub fn pair(&self) -> StateActionPair {
        StateActionPair {
            t: self.t,
            state: self.state,
            action: self.action,
            source: self.source,
        }
    }

    pub fn phase(&self) -> Phase {
        self.state.phase()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub ticks: Vec<TickRecord>,
}

impl SessionLog {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.ticks.len() as f64 / TICK_HZ
    }

    pub fn pairs(&self) -> Vec<StateActionPair> {
        self.ticks.iter().map(TickRecord::pair).collect()
    }

    pub fn states(&self) -> Vec<StateVector> {
        self.ticks.iter().map(|t| t.state).collect()
    }

    pub fn actions(&self) -> Vec<u8> {
        self.ticks.iter().map(|t| t.action).collect()
    }

    /// Shadow decisions, if every tick has one.
    pub fn shadow_actions(&self) -> Option<Vec<u8>> {
        self.ticks.iter().map(|t| t.shadow).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for tick in &self.ticks {
            serde_json::to_writer(&mut out, tick)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = match lines.next() {
            Some(line) => line?,
            None => {
                return Err(Error::Schema {
                    expected: SESSION_SCHEMA.to_string(),
                    found: "<empty file>".to_string(),
                })
            }
        };
        let value: serde_json::Value = serde_json::from_str(&first).map_err(|e| Error::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
        let found = value.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
        check_tag(found, SESSION_SCHEMA)?;
        let header: SessionHeader = serde_json::from_value(value).map_err(|e| Error::Malformed {
            line: 1,
            message: e.to_string(),
        })?;

        let mut ticks = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let lineno = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let tick: TickRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            if tick.tick != ticks.len() {
                return Err(Error::Malformed {
                    line: lineno,
                    message: format!("expected tick {}, found {}", ticks.len(), tick.tick),
                });
            }
            ticks.push(tick);
        }
        Ok(SessionLog { header, ticks })
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }
}

pub fn write_log(log: &SessionLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    log.write(BufWriter::new(file))
        .map_err(|e| match e {
            Error::Io(io) => Error::file(path, io),
            other => other,
        })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<SessionLog> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    SessionLog::read(BufReader::new(file)).map_err(|e| match e {
        Error::Io(io) => Error::file(path, io),
        other => other,
    })
}

/// Decision for one tick of a live stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub action: u8,
    /// `None` during warm-up.
    pub prob: Option<f64>,
}

/// Keeps the trailing window of scaled states and predicts once it is full.
/// Shares the single-window forward pass with offline prediction, so both
/// agree bit for bit.
#[derive(Debug, Clone)]
pub struct RealtimePredictor<M: Borrow<LstmModel>> {
    model: M,
    buffer: VecDeque<[f64; N_FEATURES]>,
}

impl<M: Borrow<LstmModel>> RealtimePredictor<M> {
    pub fn new(model: M) -> Self {
        let window = model.borrow().window;
        RealtimePredictor {
            model,
            buffer: VecDeque::with_capacity(window),
        }
    }

    pub fn model(&self) -> &LstmModel {
        self.model.borrow()
    }

    pub fn is_warm(&self) -> bool {
        self.buffer.len() == self.model().window
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }

    pub fn feed(&mut self, state: &StateVector) -> Result<Prediction> {
        let model = self.model.borrow();
        if self.buffer.len() == model.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(model.scaler.transform(state));
        if self.buffer.len() < model.window {
            return Ok(Prediction {
                action: 0,
                prob: None,
            });
        }
        let window: Vec<f64> = self.buffer.iter().flat_map(|r| r.iter().copied()).collect();
        let p = model.probability(&window)?;
        Ok(Prediction {
            action: decide(p),
            prob: Some(p),
        })
    }
}

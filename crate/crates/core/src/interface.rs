//! Wire protocol of the realtime service and the session engine behind it.
//!
//! The engine is transport-agnostic: a server feeds it [`ClientMessage`]s and
//! calls [`LiveSession::step`] once per tick, either from a 30 Hz timer or,
//! in lockstep mode, once per `pointer` message.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::sha256_hex;
use crate::controller::{assist_force, AssistCommand, GainRamp, TargetMode};
use crate::error::{Error, Result};
use crate::evaluation::{percent_time_on, switch_count};
use crate::features::{build_state_with_projection, ActionSource, Phase, DT, TICK_HZ};
use crate::geometry::{CurveSpec, Trajectory};
use crate::lstm::LstmModel;
use crate::session::{RealtimePredictor, SessionHeader, SessionLog, SessionSource, TickRecord, SESSION_SCHEMA};
use crate::simulation::{next_phase, seconds_to_ticks, Patient, PatientModel, Scenario};
use crate::Vec3;

/// Mass of the on-screen guided cursor relative to the patient model.
pub const CURSOR_MASS_FACTOR: f64 = 0.25;

/// Sessions without an explicit duration stop after this many seconds.
pub const MAX_LIVE_SECONDS: f64 = 1800.0;

/// Points in the reference polyline sent to clients.
const POLYLINE_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The client toggles assistance.
    Demonstrate,
    /// The model decides; overrides are logged.
    Realtime,
    /// As realtime, for collecting corrections.
    Dagger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Start {
        mode: Mode,
        /// Full scenario; its curve, gains and patient are used.
        #[serde(default)]
        scenario: Option<Scenario>,
        /// Curve preset name, used when no scenario is given.
        #[serde(default)]
        curve: Option<String>,
        /// Seconds; the session ends by itself after this long.
        #[serde(default)]
        duration: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Pointer position. Two components are x/y with depth taken from the
    /// curve; three components set depth explicitly.
    Pointer { x: Vec<f64> },
    ToggleAssist {},
    /// Latches the applied action; `null` releases the latch.
    Override { action: Option<u8> },
    Stop {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub n_ticks: usize,
    pub percent_time_on: f64,
    pub switches: usize,
    pub overrides: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Sent once after `start`.
    Ready {
        session: String,
        mode: Mode,
        curve: String,
        polyline: Vec<Vec3>,
        tick_hz: f64,
    },
    Tick {
        tick: usize,
        t: f64,
        /// End-effector: the pointer as mapped into the workspace.
        x: Vec3,
        /// The pointer moved by the assistance force, for display.
        cursor: Vec3,
        x_l: Vec3,
        /// Id of the reference polyline from `ready`.
        curve: String,
        e: f64,
        v: f64,
        assist: u8,
        #[serde(rename = "P")]
        p: Option<f64>,
        phase: Phase,
        overridden: bool,
    },
    SessionEnd { summary: SessionSummary },
    Error { kind: String, message: String },
}

impl ServerMessage {
    pub fn error(e: &Error) -> Self {
        ServerMessage::Error {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Parses one text frame; unknown types and fields are errors.
pub fn parse_client_message(text: &str) -> Result<ClientMessage> {
    serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad client message: {e}")))
}

pub fn curve_id(spec: &CurveSpec) -> String {
    let json = serde_json::to_string(spec).expect("curve specs serialize");
    sha256_hex(json.as_bytes())[..12].to_string()
}

/// Evenly spaced points along the curve for display.
pub fn polyline(traj: &Trajectory, points: usize) -> Vec<Vec3> {
    let n = points.max(2);
    (0..n)
        .map(|k| traj.position_at(k as f64 / (n - 1) as f64))
        .collect()
}

/// One live session. The pointer is the end-effector that gets logged; the
/// guided cursor shows where the assistance would push it.
#[derive(Debug)]
pub struct LiveSession {
    traj: Trajectory,
    mode: Mode,
    header: SessionHeader,
    curve_id: String,
    predictor: Option<RealtimePredictor<Arc<LstmModel>>>,
    hand: Patient,
    cursor: Patient,
    pointer: Vec3,
    toggle: u8,
    latch: Option<u8>,
    phase: Phase,
    ramp: GainRamp,
    ticks: Vec<TickRecord>,
    max_ticks: usize,
    finished: bool,
}

impl LiveSession {
    /// Builds a session from a `start` message.
    pub fn start(
        msg: &ClientMessage,
        model: Option<Arc<LstmModel>>,
        created_at: Option<String>,
    ) -> Result<(Self, ServerMessage)> {
        let ClientMessage::Start {
            mode,
            scenario,
            curve,
            duration,
            seed,
        } = msg
        else {
            return Err(Error::Protocol("expected a `start` message".to_string()));
        };
        let mut scenario = scenario.clone().unwrap_or_default();
        if let Some(name) = curve {
            scenario.curve = CurveSpec::preset(name)?;
        }
        let seed = seed.unwrap_or(scenario.seed);
        let max_ticks = match duration {
            Some(d) if d.is_finite() && *d > 0.0 && *d <= MAX_LIVE_SECONDS => seconds_to_ticks(*d),
            Some(d) => {
                return Err(Error::invalid(
                    "duration",
                    format!("must be in (0, {MAX_LIVE_SECONDS}] s, got {d}"),
                ))
            }
            None => seconds_to_ticks(MAX_LIVE_SECONDS),
        };
        let predictor = match mode {
            Mode::Demonstrate => None,
            Mode::Realtime | Mode::Dagger => {
                let model = model.ok_or_else(|| {
                    Error::Protocol(format!("{mode:?} mode needs a model; start the server with --model").to_lowercase())
                })?;
                Some(RealtimePredictor::new(model))
            }
        };

        let traj = scenario.trajectory()?;
        let cursor_model = PatientModel {
            mass: scenario.patient.mass * CURSOR_MASS_FACTOR,
            ..scenario.patient
        };
        let start = traj.start_point();
        let hand = Patient::new(scenario.patient, start, seed)?;
        let cursor = Patient::new(cursor_model, start, seed)?;

        let model_hash = predictor
            .as_ref()
            .map(|p| p.model().to_text().map(|t| sha256_hex(t.as_bytes())))
            .transpose()?;
        let identity = serde_json::json!({
            "curve": &scenario.curve,
            "mode": mode,
            "seed": seed,
            "created_at": &created_at,
            "model": model_hash,
        });
        let id = sha256_hex(identity.to_string().as_bytes())[..16].to_string();
        let header = SessionHeader {
            schema: SESSION_SCHEMA.to_string(),
            id: id.clone(),
            curve: scenario.curve.clone(),
            protocol: Default::default(),
            gains: scenario.gains,
            source: SessionSource::Live,
            policy: None,
            shadow: None,
            patient: Some(cursor_model),
            seed,
            created_at,
        };
        let curve = curve_id(&scenario.curve);
        let ready = ServerMessage::Ready {
            session: id,
            mode: *mode,
            curve: curve.clone(),
            polyline: polyline(&traj, POLYLINE_POINTS),
            tick_hz: TICK_HZ,
        };
        let session = LiveSession {
            traj,
            mode: *mode,
            header,
            curve_id: curve,
            predictor,
            hand,
            cursor,
            pointer: start,
            toggle: 0,
            latch: None,
            phase: Phase::Tracking,
            ramp: GainRamp::new(),
            ticks: Vec::new(),
            max_ticks,
            finished: false,
        };
        Ok((session, ready))
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn tick_count(&self) -> usize {
        self.ticks.len()
    }

    pub fn id(&self) -> &str {
        &self.header.id
    }

    /// Applies a client message other than `start`. Errors leave the
    /// session unchanged.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<()> {
        match msg {
            ClientMessage::Start { .. } => Err(Error::Protocol("session already started".to_string())),
            ClientMessage::Pointer { x } => {
                self.pointer = self.map_pointer(x)?;
                Ok(())
            }
            ClientMessage::ToggleAssist {} => {
                if self.mode != Mode::Demonstrate {
                    return Err(Error::Protocol(format!(
                        "toggle_assist is only accepted in demonstrate mode, not {:?}",
                        self.mode
                    )
                    .to_lowercase()));
                }
                self.toggle ^= 1;
                Ok(())
            }
            ClientMessage::Override { action } => {
                if self.mode == Mode::Demonstrate {
                    return Err(Error::Protocol(
                        "override is only accepted in realtime and dagger modes".to_string(),
                    ));
                }
                if let Some(a) = action {
                    if *a > 1 {
                        return Err(Error::Protocol(format!("override action must be 0 or 1, got {a}")));
                    }
                }
                self.latch = *action;
                Ok(())
            }
            ClientMessage::Stop {} => {
                self.finished = true;
                Ok(())
            }
        }
    }

    fn map_pointer(&self, x: &[f64]) -> Result<Vec3> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("pointer coordinates must be finite".to_string()));
        }
        let p = match *x {
            [px, py] => {
                let flat = Vec3::new(px, py, 0.0);
                Vec3::new(px, py, self.traj.closest_point_xy(&flat).point.z)
            }
            [px, py, pz] => Vec3::new(px, py, pz),
            _ => {
                return Err(Error::Protocol(format!(
                    "pointer needs 2 or 3 coordinates, got {}",
                    x.len()
                )))
            }
        };
        Ok(crate::geometry::clamp_to_workspace(&p))
    }

    /// Advances one tick and returns its `tick` message.
    pub fn step(&mut self) -> Result<ServerMessage> {
        if self.finished {
            return Err(Error::Protocol("session has ended".to_string()));
        }
        let tick = self.ticks.len();
        // backward difference, which is what the simulator's integrator logs
        let x_dot = if tick == 0 {
            Vec3::zeros()
        } else {
            (self.pointer - self.hand.x) / DT
        };
        if tick > 0 {
            self.hand.x = self.pointer;
            self.phase = next_phase(&self.traj, &self.header.protocol, &mut self.hand, self.phase);
        }
        self.hand.place(&self.traj, self.pointer, x_dot, self.phase);
        let (state, proj) = build_state_with_projection(&self.traj, &self.hand.x, &self.hand.x_dot, self.phase);

        let mut prob = None;
        let mut model_action = None;
        let mut overridden = false;
        let (action, source) = match self.predictor.as_mut() {
            None => (self.toggle, ActionSource::Demonstrator),
            Some(pred) => {
                let p = pred.feed(&state)?;
                prob = p.prob;
                match self.latch {
                    Some(l) if l != p.action => {
                        model_action = Some(p.action);
                        overridden = true;
                        (l, ActionSource::Override)
                    }
                    _ => (p.action, ActionSource::Model),
                }
            }
        };

        let (mode, target) = match self.phase {
            Phase::Tracking => (TargetMode::ClosestPoint, proj.point),
            Phase::Returning => (TargetMode::StartPoint, self.traj.start_point()),
        };
        let gains = self.header.gains;
        let level = self.ramp.advance(action == 1, gains.ramp_time, DT);
        let u = assist_force(
            &self.hand.x,
            &self.hand.x_dot,
            &target,
            &gains,
            &AssistCommand::new(action == 1, mode),
            level,
        );
        let record = TickRecord {
            tick,
            t: tick as f64 * DT,
            state,
            action,
            source,
            x: self.hand.x,
            x_dot: self.hand.x_dot,
            x_l: proj.point,
            u,
            prob,
            model_action,
            shadow: None,
            overridden,
        };
        let msg = ServerMessage::Tick {
            tick,
            t: record.t,
            x: record.x,
            cursor: self.cursor.x,
            x_l: proj.point,
            curve: self.curve_id.clone(),
            e: state.e,
            v: state.v,
            assist: action,
            p: prob,
            phase: self.phase,
            overridden,
        };
        self.ticks.push(record);

        self.cursor.follow(&self.pointer, &u);
        if self.ticks.len() >= self.max_ticks {
            self.finished = true;
        }
        Ok(msg)
    }

    pub fn summary(&self, log_path: Option<String>) -> SessionSummary {
        let actions: Vec<u8> = self.ticks.iter().map(|t| t.action).collect();
        SessionSummary {
            id: self.header.id.clone(),
            n_ticks: actions.len(),
            percent_time_on: percent_time_on(&actions).unwrap_or(0.0),
            switches: switch_count(&actions),
            overrides: self.ticks.iter().filter(|t| t.overridden).count(),
            log_path,
        }
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            header: self.header.clone(),
            ticks: self.ticks.clone(),
        }
    }

    pub fn into_log(self) -> SessionLog {
        SessionLog {
            header: self.header,
            ticks: self.ticks,
        }
    }
}

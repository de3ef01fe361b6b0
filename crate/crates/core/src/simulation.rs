//! Synthetic patient and therapist, and the 30 Hz closed loop that joins
//! them to the controller.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::sha256_hex;
use crate::controller::{assist_force, AssistCommand, GainRamp, Gains, TargetMode};
use crate::dagger::Corrector;
use crate::error::{Error, Result};
use crate::features::{build_state_with_projection, ActionSource, Phase, StateVector, DT, TICK_HZ};
use crate::geometry::{check_schema, clamp_to_workspace, make_trajectory, CurveSpec, Trajectory};
use crate::lstm::LstmModel;
use crate::session::{PhaseProtocol, RealtimePredictor, SessionHeader, SessionLog, SessionSource, TickRecord, SESSION_SCHEMA};
use crate::Vec3;

pub const SCENARIO_SCHEMA: &str = "scenario/1";

/// Shortest session the loop accepts, seconds.
pub const MIN_DURATION: f64 = 2.0;

/// Lapses and pauses last uniformly between these many seconds.
const EVENT_SECONDS: (f64, f64) = (0.5, 2.0);

/// Arc-length window used to follow the patient's progress, metres.
const PROGRESS_BEHIND: f64 = 0.01;
const PROGRESS_AHEAD: f64 = 0.03;

/// Remaining arc length over which the patient slows down to stop at the end.
const ARRIVAL_DISTANCE: f64 = 0.02;

pub fn seconds_to_ticks(seconds: f64) -> usize {
    (seconds * TICK_HZ).round() as usize
}

/// Noisy second-order point tracker standing in for a patient's hand.
///
/// While tracking, the hand is pulled toward the closest reference point with
/// gain `skill_gain` and its velocity relaxes toward `pace` along the curve.
/// A lapse suspends the pull and adds a sideways drift; a pause freezes the
/// hand. While returning it relaxes toward the start point with `return_gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatientModel {
    /// kg
    pub mass: f64,
    /// 1/s²
    pub skill_gain: f64,
    /// 1/s
    pub damping: f64,
    /// Per-axis process noise, m/s².
    pub noise_std: f64,
    /// Poisson rate of lapses, 1/s.
    pub lapse_rate: f64,
    /// Poisson rate of full stops, 1/s.
    pub pause_rate: f64,
    /// Preferred speed along the curve, m/s.
    pub pace: f64,
    /// Pull toward the start point while returning, 1/s².
    pub return_gain: f64,
    /// Speed of the sideways drift during a lapse, m/s.
    pub lapse_drift: f64,
    /// Added to the session seed for the patient's random stream.
    pub seed: u64,
}

impl Default for PatientModel {
    fn default() -> Self {
        PatientModel {
            mass: 1.0,
            skill_gain: 25.0,
            damping: 10.0,
            noise_std: 0.0,
            lapse_rate: 0.0,
            pause_rate: 0.0,
            pace: 0.03,
            return_gain: 10.0,
            lapse_drift: 0.0,
            seed: 0,
        }
    }
}

impl PatientModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("patient.skill_gain", self.skill_gain),
            ("patient.damping", self.damping),
            ("patient.noise_std", self.noise_std),
            ("patient.lapse_rate", self.lapse_rate),
            ("patient.pause_rate", self.pause_rate),
            ("patient.pace", self.pace),
            ("patient.return_gain", self.return_gain),
            ("patient.lapse_drift", self.lapse_drift),
        ];
        for (field, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::invalid("patient.mass", "must be > 0"));
        }
        Ok(())
    }
}

struct Draws {
    lapse: f64,
    pause: f64,
    lapse_len: f64,
    pause_len: f64,
    direction: Vec3,
    noise: Vec3,
}

/// A [`PatientModel`] in motion.
#[derive(Debug, Clone)]
pub struct Patient {
    model: PatientModel,
    rng: ChaCha8Rng,
    pub x: Vec3,
    pub x_dot: Vec3,
    progress: f64,
    lapse_ticks: usize,
    pause_ticks: usize,
    drift: Vec3,
}

impl Patient {
    pub fn new(model: PatientModel, x0: Vec3, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Patient {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(model.seed)),
            x: x0,
            x_dot: Vec3::zeros(),
            progress: 0.0,
            lapse_ticks: 0,
            pause_ticks: 0,
            drift: Vec3::zeros(),
        })
    }

    pub fn model(&self) -> &PatientModel {
        &self.model
    }

    /// Curve parameter the patient believes it has reached.
    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn reset_progress(&mut self) {
        self.progress = 0.0;
    }

    /// Re-anchors progress with a global search, for patients placed away
    /// from the start of the curve.
    pub fn locate(&mut self, traj: &Trajectory) {
        self.progress = traj.closest_point(&self.x).u;
    }

    pub fn in_lapse(&self) -> bool {
        self.lapse_ticks > 0
    }

    pub fn in_pause(&self) -> bool {
        self.pause_ticks > 0
    }

    /// Starts a lapse of `ticks` ticks with the given drift velocity.
    pub fn force_lapse(&mut self, ticks: usize, drift: Vec3) {
        self.lapse_ticks = ticks;
        self.drift = drift;
    }

    pub fn force_pause(&mut self, ticks: usize) {
        self.pause_ticks = ticks;
    }

    fn normal3(&mut self) -> Vec3 {
        Vec3::new(
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
        )
    }

    /// Draws the same amount of randomness every tick, whatever the phase
    /// and state, so that runs differing only in assistance share their
    /// lapse, pause and noise realizations tick for tick.
    fn draw(&mut self) -> Draws {
        Draws {
            lapse: self.rng.gen(),
            pause: self.rng.gen(),
            lapse_len: self.rng.gen_range(EVENT_SECONDS.0..EVENT_SECONDS.1),
            pause_len: self.rng.gen_range(EVENT_SECONDS.0..EVENT_SECONDS.1),
            direction: self.normal3(),
            noise: self.normal3(),
        }
    }

    fn start_events(&mut self, traj: &Trajectory, d: &Draws) {
        let m = self.model;
        if self.lapse_ticks == 0 && d.lapse < 1.0 - (-m.lapse_rate * DT).exp() {
            self.lapse_ticks = seconds_to_ticks(d.lapse_len).max(1);
            let t = traj.tangent_at(self.progress);
            let side = d.direction - t * t.dot(&d.direction);
            self.drift = if side.norm() > 1e-12 {
                side.normalize() * m.lapse_drift
            } else {
                Vec3::zeros()
            };
        }
        if self.pause_ticks == 0 && d.pause < 1.0 - (-m.pause_rate * DT).exp() {
            self.pause_ticks = seconds_to_ticks(d.pause_len).max(1);
        }
    }

    /// Advances one tick under the assistance force `u`.
    pub fn step(&mut self, traj: &Trajectory, u: &Vec3, phase: Phase) {
        let m = self.model;
        let draws = self.draw();
        if phase == Phase::Tracking {
            self.start_events(traj, &draws);
        }
        let noise = draws.noise * m.noise_std;

        let acc = match phase {
            Phase::Tracking => {
                let proj = traj.closest_point_near(&self.x, self.progress, PROGRESS_BEHIND, PROGRESS_AHEAD);
                self.progress = proj.u;
                let remaining = traj.total_length() - traj.arc_length_at(proj.u);
                let fade = (remaining / ARRIVAL_DISTANCE).clamp(0.0, 1.0);
                let mut v_des = traj.tangent_at(proj.u) * (m.pace * fade);
                let mut acc = Vec3::zeros();
                if self.lapse_ticks > 0 {
                    v_des += self.drift;
                } else {
                    acc += (proj.point - self.x) * m.skill_gain;
                }
                acc + (v_des - self.x_dot) * m.damping
            }
            Phase::Returning => (traj.start_point() - self.x) * m.return_gain - self.x_dot * m.damping,
        } + u / m.mass
            + noise;

        if self.pause_ticks > 0 {
            self.pause_ticks -= 1;
            self.x_dot = Vec3::zeros();
        } else {
            self.x_dot += acc * DT;
            self.advance();
        }
        self.lapse_ticks = self.lapse_ticks.saturating_sub(1);
    }

    /// Puts the hand at an externally measured state, as when a person
    /// drives it, and updates progress the same way [`Patient::step`] does.
    pub fn place(&mut self, traj: &Trajectory, x: Vec3, x_dot: Vec3, phase: Phase) {
        self.x = x;
        self.x_dot = x_dot;
        if phase == Phase::Tracking {
            self.progress = traj
                .closest_point_near(&self.x, self.progress, PROGRESS_BEHIND, PROGRESS_AHEAD)
                .u;
        }
    }

    /// Moves a cursor coupled to an external `target` (a pointer) by a spring
    /// with the model's gain and damping, plus `u`. No noise or events.
    pub fn follow(&mut self, target: &Vec3, u: &Vec3) {
        let m = self.model;
        let acc = (target - self.x) * m.skill_gain - self.x_dot * m.damping + u / m.mass;
        self.x_dot += acc * DT;
        self.advance();
    }

    /// Position update. The workspace edge acts as a wall: a clamped step
    /// keeps only the velocity it actually realized.
    fn advance(&mut self) {
        let free = self.x + self.x_dot * DT;
        let next = clamp_to_workspace(&free);
        if next != free {
            self.x_dot = (next - self.x) / DT;
        }
        self.x = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Assist after the error has stayed large for a while.
    ThresholdDwell,
    /// The same rule with a small threshold and no dwell.
    AssistTooOften,
    /// Assist whenever the hand has stopped.
    AssistOnStop,
}

/// Rule-based stand-in for the therapist's key presses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TherapistPolicy {
    pub kind: PolicyKind,
    /// m
    pub e_on: f64,
    /// m
    pub e_off: f64,
    /// s
    pub t_dwell: f64,
    /// s
    pub t_release: f64,
    /// m/s
    pub v_stop: f64,
    /// Assist during the whole return phase; otherwise never assist there.
    pub assist_on_return: bool,
}

impl Default for TherapistPolicy {
    fn default() -> Self {
        Self::threshold_dwell()
    }
}

impl TherapistPolicy {
    pub fn threshold_dwell() -> Self {
        TherapistPolicy {
            kind: PolicyKind::ThresholdDwell,
            e_on: 0.02,
            e_off: 0.01,
            t_dwell: 0.5,
            t_release: 0.5,
            v_stop: 0.005,
            assist_on_return: false,
        }
    }

    pub fn assist_too_often() -> Self {
        TherapistPolicy {
            kind: PolicyKind::AssistTooOften,
            e_on: 0.006,
            e_off: 0.004,
            t_dwell: 0.0,
            t_release: 0.3,
            ..Self::threshold_dwell()
        }
    }

    pub fn assist_on_stop() -> Self {
        TherapistPolicy {
            kind: PolicyKind::AssistOnStop,
            t_dwell: 0.3,
            ..Self::threshold_dwell()
        }
    }

    pub fn with_assist_on_return(self, on: bool) -> Self {
        TherapistPolicy {
            assist_on_return: on,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("policy.e_on", self.e_on),
            ("policy.e_off", self.e_off),
            ("policy.t_dwell", self.t_dwell),
            ("policy.t_release", self.t_release),
            ("policy.v_stop", self.v_stop),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("must be >= 0, got {v}")));
            }
        }
        if self.e_off > self.e_on {
            return Err(Error::invalid("policy.e_off", "must not exceed e_on"));
        }
        Ok(())
    }

    pub fn dwell_ticks(&self) -> usize {
        seconds_to_ticks(self.t_dwell)
    }

    pub fn release_ticks(&self) -> usize {
        seconds_to_ticks(self.t_release)
    }

    /// Number of trailing ticks [`therapist_action`] looks at.
    pub fn history_len(&self) -> usize {
        self.dwell_ticks().max(self.release_ticks()) + 1
    }
}

/// Length of the run of trailing ticks satisfying `pred`, capped at `cap`.
fn trailing(history: &[StateVector], cap: usize, pred: impl Fn(&StateVector) -> bool) -> usize {
    history.iter().rev().take(cap).take_while(|s| pred(s)).count()
}

/// The demonstrator's decision for the newest tick of `history`, given its
/// decision on the tick before. Depends only on the last
/// [`TherapistPolicy::history_len`] ticks.
pub fn therapist_action(policy: &TherapistPolicy, history: &[StateVector], prev_action: u8) -> Result<u8> {
    let last = history.last().ok_or(Error::Empty("policy history"))?;
    if last.is_track == 0 {
        return Ok(u8::from(policy.assist_on_return));
    }
    let tracking = |s: &StateVector| s.is_track == 1;
    let n_dwell = policy.dwell_ticks();
    match policy.kind {
        PolicyKind::ThresholdDwell | PolicyKind::AssistTooOften => {
            // a new tracking phase starts from off
            let just_started = history.len() >= 2 && history[history.len() - 2].is_track == 0;
            let prev = if just_started { 0 } else { prev_action };
            if prev == 0 {
                let run = trailing(history, n_dwell + 1, |s| tracking(s) && s.e > policy.e_on);
                Ok(u8::from(run > n_dwell))
            } else {
                let n_release = policy.release_ticks();
                let run = trailing(history, n_release + 1, |s| tracking(s) && s.e < policy.e_off);
                Ok(u8::from(run <= n_release))
            }
        }
        PolicyKind::AssistOnStop => {
            let run = trailing(history, n_dwell + 1, |s| tracking(s) && s.v < policy.v_stop);
            Ok(u8::from(run > n_dwell))
        }
    }
}

/// Stateful wrapper feeding [`therapist_action`] its own previous decision.
#[derive(Debug, Clone)]
pub struct PolicyRunner {
    pub policy: TherapistPolicy,
    prev: u8,
}

impl PolicyRunner {
    pub fn new(policy: TherapistPolicy) -> Self {
        PolicyRunner { policy, prev: 0 }
    }

    pub fn decide(&mut self, history: &[StateVector]) -> Result<u8> {
        let tail = &history[history.len().saturating_sub(self.policy.history_len())..];
        self.prev = therapist_action(&self.policy, tail, self.prev)?;
        Ok(self.prev)
    }
}

/// Replays a policy over a recorded state sequence.
pub fn policy_actions(policy: &TherapistPolicy, states: &[StateVector]) -> Result<Vec<u8>> {
    let mut runner = PolicyRunner::new(*policy);
    (1..=states.len()).map(|k| runner.decide(&states[..k])).collect()
}

/// What decides the applied action.
#[derive(Debug, Clone, Copy)]
pub enum AssistSource<'a> {
    Policy(TherapistPolicy),
    Model(&'a LstmModel),
    None,
}

/// One simulated session. Fields other than those set by
/// [`ClosedLoop::new`] default to no shadow, no corrector, default gains and
/// phase protocol, and no label noise.
#[derive(Debug, Clone)]
pub struct ClosedLoop<'a> {
    pub traj: &'a Trajectory,
    pub patient: PatientModel,
    pub source: AssistSource<'a>,
    /// Demonstrator logged alongside a model without acting.
    pub shadow: Option<TherapistPolicy>,
    /// Overrides the model's decisions.
    pub corrector: Option<Corrector>,
    pub gains: Gains,
    pub protocol: PhaseProtocol,
    pub duration: f64,
    pub seed: u64,
    /// Probability of flipping each demonstrator decision.
    pub label_noise: f64,
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    curve: &'a CurveSpec,
    patient: &'a PatientModel,
    source: SessionSource,
    policy: Option<&'a TherapistPolicy>,
    model: Option<String>,
    shadow: Option<&'a TherapistPolicy>,
    corrector: Option<&'a Corrector>,
    gains: &'a Gains,
    protocol: &'a PhaseProtocol,
    duration: f64,
    seed: u64,
    label_noise: f64,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(traj: &'a Trajectory, patient: PatientModel, source: AssistSource<'a>, duration: f64, seed: u64) -> Self {
        ClosedLoop {
            traj,
            patient,
            source,
            shadow: None,
            corrector: None,
            gains: Gains::default(),
            protocol: PhaseProtocol::default(),
            duration,
            seed,
            label_noise: 0.0,
        }
    }

    fn session_source(&self) -> SessionSource {
        match self.source {
            AssistSource::Policy(_) => SessionSource::Demonstrator,
            AssistSource::Model(_) => SessionSource::Model,
            AssistSource::None => SessionSource::None,
        }
    }

    fn session_id(&self) -> Result<String> {
        let model = match self.source {
            AssistSource::Model(m) => Some(sha256_hex(m.to_text()?.as_bytes())),
            _ => None,
        };
        let policy = match &self.source {
            AssistSource::Policy(p) => Some(p),
            _ => None,
        };
        let identity = RunIdentity {
            curve: self.traj.spec(),
            patient: &self.patient,
            source: self.session_source(),
            policy,
            model,
            shadow: self.shadow.as_ref(),
            corrector: self.corrector.as_ref(),
            gains: &self.gains,
            protocol: &self.protocol,
            duration: self.duration,
            seed: self.seed,
            label_noise: self.label_noise,
        };
        Ok(sha256_hex(serde_json::to_string(&identity)?.as_bytes())[..16].to_string())
    }

    fn validate(&self) -> Result<usize> {
        if !(self.duration.is_finite() && self.duration >= MIN_DURATION) {
            return Err(Error::invalid(
                "duration",
                format!("must be >= {MIN_DURATION} s, got {}", self.duration),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::invalid("label_noise", "must be in [0, 1]"));
        }
        self.gains.validate()?;
        if let AssistSource::Policy(p) = &self.source {
            p.validate()?;
        }
        if let Some(p) = &self.shadow {
            p.validate()?;
        }
        Ok(seconds_to_ticks(self.duration))
    }

    /// Runs the fixed-step loop: features, decision, force, log, integrate.
    pub fn run(&self) -> Result<SessionLog> {
        let n_ticks = self.validate()?;
        let traj = self.traj;
        let mut patient = Patient::new(self.patient, traj.start_point(), self.seed)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.seed);
        noise_rng.set_stream(1);

        let mut policy = match self.source {
            AssistSource::Policy(p) => Some(PolicyRunner::new(p)),
            _ => None,
        };
        let mut predictor = match self.source {
            AssistSource::Model(m) => Some(RealtimePredictor::new(m)),
            _ => None,
        };
        let mut shadow = self.shadow.map(PolicyRunner::new);
        let mut corrector = match self.source {
            AssistSource::Model(_) => self.corrector.clone().map(|c| c.start()),
            _ => None,
        };

        let mut phase = Phase::Tracking;
        let mut ramp = GainRamp::new();
        let mut history: Vec<StateVector> = Vec::with_capacity(n_ticks);
        let mut ticks = Vec::with_capacity(n_ticks);

        for tick in 0..n_ticks {
            let (state, proj) = build_state_with_projection(traj, &patient.x, &patient.x_dot, phase);
            history.push(state);

            let mut source = ActionSource::Demonstrator;
            let mut prob = None;
            let mut action = if let Some(runner) = policy.as_mut() {
                let a = runner.decide(&history)?;
                if self.label_noise > 0.0 && noise_rng.gen::<f64>() < self.label_noise {
                    1 - a
                } else {
                    a
                }
            } else if let Some(pred) = predictor.as_mut() {
                source = ActionSource::Model;
                let p = pred.feed(&state)?;
                prob = p.prob;
                p.action
            } else {
                0
            };
            let shadow_action = shadow.as_mut().map(|s| s.decide(&history)).transpose()?;

            let mut model_action = None;
            let mut overridden = false;
            if let Some(c) = corrector.as_mut() {
                if let Some(o) = c.correct(&history, action)? {
                    model_action = Some(action);
                    action = o;
                    source = ActionSource::Override;
                    overridden = true;
                }
            }

            let (mode, target) = match phase {
                Phase::Tracking => (TargetMode::ClosestPoint, proj.point),
                Phase::Returning => (TargetMode::StartPoint, traj.start_point()),
            };
            let level = ramp.advance(action == 1, self.gains.ramp_time, DT);
            let u = assist_force(
                &patient.x,
                &patient.x_dot,
                &target,
                &self.gains,
                &AssistCommand::new(action == 1, mode),
                level,
            );

            ticks.push(TickRecord {
                tick,
                t: tick as f64 * DT,
                state,
                action,
                source,
                x: patient.x,
                x_dot: patient.x_dot,
                x_l: proj.point,
                u,
                prob,
                model_action,
                shadow: shadow_action,
                overridden,
            });

            patient.step(traj, &u, phase);
            phase = next_phase(traj, &self.protocol, &mut patient, phase);
        }

        let header = SessionHeader {
            schema: SESSION_SCHEMA.to_string(),
            id: self.session_id()?,
            curve: traj.spec().clone(),
            protocol: self.protocol,
            gains: self.gains,
            source: self.session_source(),
            policy: match self.source {
                AssistSource::Policy(p) => Some(p),
                _ => None,
            },
            shadow: self.shadow,
            patient: Some(self.patient),
            seed: self.seed,
            created_at: None,
        };
        Ok(SessionLog { header, ticks })
    }
}

/// Phase after a step: tracking ends near the end point once most of the
/// curve has been covered; returning ends near the start point.
pub fn next_phase(traj: &Trajectory, protocol: &PhaseProtocol, patient: &mut Patient, phase: Phase) -> Phase {
    match phase {
        Phase::Tracking
            if patient.progress() >= protocol.min_progress
                && (patient.x - traj.end_point()).norm() <= protocol.completion_radius =>
        {
            Phase::Returning
        }
        Phase::Returning if (patient.x - traj.start_point()).norm() <= protocol.completion_radius => {
            patient.reset_progress();
            Phase::Tracking
        }
        p => p,
    }
}

pub fn run_closed_loop(
    traj: &Trajectory,
    patient: PatientModel,
    source: AssistSource<'_>,
    duration: f64,
    seed: u64,
) -> Result<SessionLog> {
    ClosedLoop::new(traj, patient, source, duration, seed).run()
}

/// Everything needed to reproduce a demonstration session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: String,
    pub curve: CurveSpec,
    pub patient: PatientModel,
    pub policy: TherapistPolicy,
    #[serde(default)]
    pub gains: Gains,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    #[serde(default)]
    pub label_noise: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema: SCENARIO_SCHEMA.to_string(),
            curve: CurveSpec::preset("helix").expect("preset exists"),
            patient: PatientModel {
                noise_std: 0.4,
                lapse_rate: 0.3,
                lapse_drift: 0.05,
                ..PatientModel::default()
            },
            policy: TherapistPolicy::threshold_dwell(),
            gains: Gains::default(),
            duration: 120.0,
            seed: 1,
            label_noise: 0.0,
        }
    }
}

impl Scenario {
    pub fn with_curve(self, curve: CurveSpec) -> Self {
        Scenario { curve, ..self }
    }

    pub fn with_policy(self, policy: TherapistPolicy) -> Self {
        Scenario { policy, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Scenario { seed, ..self }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        check_schema(&value, SCENARIO_SCHEMA)?;
        let s: Scenario = serde_json::from_value(value)?;
        s.patient.validate()?;
        s.policy.validate()?;
        s.gains.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        make_trajectory(&self.curve)
    }

    /// Closed loop with this scenario's patient, gains, duration and seed.
    pub fn closed_loop<'a>(&self, traj: &'a Trajectory, source: AssistSource<'a>) -> ClosedLoop<'a> {
        ClosedLoop {
            gains: self.gains,
            label_noise: self.label_noise,
            ..ClosedLoop::new(traj, self.patient, source, self.duration, self.seed)
        }
    }

    /// The demonstration session: the scenario's policy drives assistance.
    pub fn demonstrate(&self) -> Result<SessionLog> {
        let traj = self.trajectory()?;
        self.closed_loop(&traj, AssistSource::Policy(self.policy)).run()
    }

    /// The named scenarios the pipeline is demonstrated and checked on.
    pub fn standard() -> Vec<(&'static str, Scenario)> {
        let base = Scenario::default();
        let lissajous = CurveSpec::preset("lissajous").expect("preset exists");
        let mut stopping = base.clone().with_policy(TherapistPolicy::assist_on_stop());
        stopping.patient.pause_rate = STOP_PAUSE_RATE;
        vec![
            ("demo", base.clone()),
            ("holdout-lissajous", base.clone().with_curve(lissajous).with_seed(2)),
            (
                "assist-on-return",
                base.clone()
                    .with_policy(TherapistPolicy::threshold_dwell().with_assist_on_return(true)),
            ),
            ("assist-too-often", base.with_policy(TherapistPolicy::assist_too_often())),
            ("assist-on-stop", stopping),
        ]
    }

    pub fn standard_named(name: &str) -> Result<Scenario> {
        Self::standard()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::invalid("scenario", format!("no standard scenario `{name}`")))
    }
}

/// Pauses per second of the patient in the assist-on-stop scenario, which
/// otherwise never comes to rest mid-curve.
pub const STOP_PAUSE_RATE: f64 = 0.25;

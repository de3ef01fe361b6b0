//! Correction-driven retraining: run the learned policy, collect the ticks a
//! corrector overrode, add them to the training set with weight β and retrain.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::features::{scale_states, window_at, Scaler, StateVector, Window, WindowDataset, WINDOW};
use crate::lstm::{train, LstmModel, TrainConfig};
use crate::session::{SessionLog, SessionSource};
use crate::simulation::{AssistSource, PolicyRunner, Scenario, TherapistPolicy};

pub const AGGDATA_SCHEMA: &str = "aggdata/1";
pub const DEFAULT_BETA: f64 = 20.0;

/// Scripted stand-in for a person overriding the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Corrector {
    Never,
    /// Switches off every assist during the return phase.
    ReturnOff,
    /// Enforces `policy`'s decision whenever the model disagrees.
    LargerError { policy: TherapistPolicy },
    /// `ReturnOff` during return, `LargerError` while tracking.
    Combined { policy: TherapistPolicy },
}

impl Corrector {
    pub fn larger_error() -> Self {
        Corrector::LargerError {
            policy: TherapistPolicy::threshold_dwell(),
        }
    }

    pub fn combined() -> Self {
        Corrector::Combined {
            policy: TherapistPolicy::threshold_dwell(),
        }
    }

    /// Parses the CLI names `never`, `return-off`, `larger-error`, `combined`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "never" => Ok(Corrector::Never),
            "return-off" => Ok(Corrector::ReturnOff),
            "larger-error" => Ok(Self::larger_error()),
            "combined" => Ok(Self::combined()),
            other => Err(Error::invalid(
                "corrector",
                format!("unknown corrector `{other}` (never, return-off, larger-error, combined)"),
            )),
        }
    }

    pub fn start(self) -> CorrectorState {
        let runner = match &self {
            Corrector::LargerError { policy } | Corrector::Combined { policy } => {
                Some(PolicyRunner::new(policy.with_assist_on_return(false)))
            }
            _ => None,
        };
        CorrectorState {
            corrector: self,
            runner,
        }
    }
}

/// A corrector during one session.
#[derive(Debug, Clone)]
pub struct CorrectorState {
    corrector: Corrector,
    runner: Option<PolicyRunner>,
}

impl CorrectorState {
    /// Called once per tick; returns the corrected action when it differs from
    /// `model_action`.
    pub fn correct(&mut self, history: &[StateVector], model_action: u8) -> Result<Option<u8>> {
        let last = history.last().ok_or(Error::Empty("corrector history"))?;
        let returning = last.is_track == 0;
        let wanted = match &self.corrector {
            Corrector::Never => None,
            Corrector::ReturnOff => returning.then_some(0),
            Corrector::LargerError { .. } | Corrector::Combined { .. } => {
                let runner = self.runner.as_mut().expect("runner for policy correctors");
                Some(runner.decide(history)?)
            }
        };
        Ok(wanted.filter(|a| *a != model_action))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideSource {
    Human,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRecord {
    pub session: String,
    pub tick: usize,
    pub model_action: u8,
    /// Corrected label.
    pub action: u8,
    pub source: OverrideSource,
}

/// One record per flagged tick whose override changed the action. Ticks
/// before the first full window are dropped.
pub fn extract_overrides(log: &SessionLog) -> Vec<OverrideRecord> {
    let source = if log.header.source == SessionSource::Live {
        OverrideSource::Human
    } else {
        OverrideSource::Scripted
    };
    let mut warmup = 0;
    let records: Vec<OverrideRecord> = log
        .ticks
        .iter()
        .filter(|t| t.overridden)
        .filter_map(|t| {
            let model_action = t.model_action?;
            if model_action == t.action {
                return None;
            }
            if t.tick + 1 < WINDOW {
                warmup += 1;
                return None;
            }
            Some(OverrideRecord {
                session: log.header.id.clone(),
                tick: t.tick,
                model_action,
                action: t.action,
                source,
            })
        })
        .collect();
    if warmup > 0 {
        log::warn!("dropped {warmup} override(s) inside the {}-tick warm-up", WINDOW - 1);
    }
    records
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStates {
    pub id: String,
    pub states: Vec<StateVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggEntry {
    /// Index into [`AggregatedDataset::sessions`].
    pub session: usize,
    /// Last tick of the window.
    pub end_tick: usize,
    pub label: u8,
    pub weight: f64,
    /// 0 for base data, otherwise the aggregation round that added it.
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_action: Option<u8>,
}

/// The growing training set: base windows with weight 1 plus overridden
/// windows with weight β. Stores states rather than windows and rebuilds
/// windows with the base scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDataset {
    pub beta: f64,
    pub iteration: usize,
    pub window: usize,
    pub scaler: Scaler,
    pub sessions: Vec<SessionStates>,
    pub entries: Vec<AggEntry>,
}

impl AggregatedDataset {
    /// Every full window of the demonstration, labelled with its last action.
    pub fn from_base(log: &SessionLog, scaler: Scaler, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if log.len() < WINDOW {
            return Err(Error::TooShort {
                what: "base session",
                required: WINDOW,
                found: log.len(),
            });
        }
        let entries = (WINDOW - 1..log.len())
            .map(|end| AggEntry {
                session: 0,
                end_tick: end,
                label: log.ticks[end].action,
                weight: 1.0,
                iteration: 0,
                model_action: None,
            })
            .collect();
        Ok(AggregatedDataset {
            beta,
            iteration: 0,
            window: WINDOW,
            scaler,
            sessions: vec![SessionStates {
                id: log.header.id.clone(),
                states: log.states(),
            }],
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn override_count(&self) -> usize {
        self.entries.iter().filter(|e| e.iteration > 0).count()
    }

    /// Adds the overrides recorded in `log` as a new round. Returns the
    /// number of entries added or replaced.
    pub fn aggregate(&mut self, log: &SessionLog, overrides: &[OverrideRecord]) -> Result<usize> {
        let session = match self.sessions.iter().position(|s| s.id == log.header.id) {
            Some(k) => k,
            None => {
                self.sessions.push(SessionStates {
                    id: log.header.id.clone(),
                    states: log.states(),
                });
                self.sessions.len() - 1
            }
        };
        self.iteration += 1;
        let mut index: HashMap<(usize, usize), usize> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.iteration > 0)
            .map(|(k, e)| ((e.session, e.end_tick), k))
            .collect();
        let n_states = self.sessions[session].states.len();
        let mut changed = 0;
        for o in overrides {
            if o.session != log.header.id {
                return Err(Error::invalid("override", format!("belongs to session {}, not {}", o.session, log.header.id)));
            }
            if o.tick >= n_states || o.tick + 1 < self.window {
                return Err(Error::invalid("override", format!("tick {} has no full window", o.tick)));
            }
            let entry = AggEntry {
                session,
                end_tick: o.tick,
                label: o.action,
                weight: self.beta,
                iteration: self.iteration,
                model_action: Some(o.model_action),
            };
            match index.get(&(session, o.tick)) {
                Some(&k) => self.entries[k] = entry,
                None => {
                    index.insert((session, o.tick), self.entries.len());
                    self.entries.push(entry);
                }
            }
            changed += 1;
        }
        Ok(changed)
    }

    pub fn to_windows(&self) -> WindowDataset {
        let scaled: Vec<_> = self
            .sessions
            .iter()
            .map(|s| scale_states(&s.states, &self.scaler))
            .collect();
        let windows = self
            .entries
            .iter()
            .map(|e| Window {
                data: window_at(&scaled[e.session], e.end_tick, self.window),
                label: e.label,
                weight: e.weight,
            })
            .collect();
        WindowDataset {
            windows,
            scaler: self.scaler.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::save(path.as_ref(), AGGDATA_SCHEMA, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let data: Self = container::load(path.as_ref(), AGGDATA_SCHEMA)?;
        check_beta(data.beta)?;
        Ok(data)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid("beta", format!("must be > 0, got {beta}")));
    }
    Ok(())
}

/// Appends `overrides` to `base` with weight `beta`.
pub fn aggregate(base: &WindowDataset, overrides: &[Window], beta: f64) -> Result<WindowDataset> {
    check_beta(beta)?;
    let mut out = base.clone();
    out.windows.extend(overrides.iter().map(|w| Window {
        weight: beta,
        ..w.clone()
    }));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome {
    pub model: LstmModel,
    /// The session run under the previous model.
    pub session: SessionLog,
    pub overrides: usize,
    /// False when nothing was overridden and the input model was returned.
    pub retrained: bool,
}

/// One round: run `model` in `scenario` under `corrector`, aggregate its
/// overrides into `data`, and retrain from a fresh initialization.
pub fn dagger_iterate(
    model: &LstmModel,
    scenario: &Scenario,
    corrector: &Corrector,
    data: &mut AggregatedDataset,
    config: &TrainConfig,
) -> Result<DaggerOutcome> {
    let traj = scenario.trajectory()?;
    let mut run = scenario.closed_loop(&traj, AssistSource::Model(model));
    run.corrector = Some(corrector.clone());
    let session = run.run()?;
    let overrides = extract_overrides(&session);
    if overrides.is_empty() {
        log::info!("no overrides recorded; model unchanged");
        return Ok(DaggerOutcome {
            model: model.clone(),
            session,
            overrides: 0,
            retrained: false,
        });
    }
    data.aggregate(&session, &overrides)?;
    let next = train(&data.to_windows(), config)?;
    Ok(DaggerOutcome {
        model: next,
        session,
        overrides: overrides.len(),
        retrained: true,
    })
}

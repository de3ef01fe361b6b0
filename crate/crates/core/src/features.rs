//! The 7-feature local state, its scaling, and the overlapping windows fed
//! to the sequence model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Projection, Trajectory};
use crate::Vec3;

/// Sampling rate of the session loop.
pub const TICK_HZ: f64 = 30.0;
pub const DT: f64 = 1.0 / TICK_HZ;
/// One second of history.
pub const WINDOW: usize = 30;
pub const N_FEATURES: usize = 7;
pub const SCALE_FLOOR: f64 = 1e-8;

const R_C: usize = 4;
const IS_TRACK: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Tracking,
    Returning,
}

/// `[e_x, e_y, e_z, e, r_c, v, is_track]` for one tick. The error points from
/// the end-effector toward the reference (`x_l - x`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub e_x: f64,
    pub e_y: f64,
    pub e_z: f64,
    pub e: f64,
    pub r_c: f64,
    pub v: f64,
    pub is_track: u8,
}

impl StateVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.e_x,
            self.e_y,
            self.e_z,
            self.e,
            self.r_c,
            self.v,
            f64::from(self.is_track),
        ]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        StateVector {
            e_x: a[0],
            e_y: a[1],
            e_z: a[2],
            e: a[3],
            r_c: a[4],
            v: a[5],
            is_track: u8::from(a[6] >= 0.5),
        }
    }

    pub fn phase(&self) -> Phase {
        if self.is_track == 1 {
            Phase::Tracking
        } else {
            Phase::Returning
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Demonstrator,
    Model,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateActionPair {
    pub t: f64,
    pub state: StateVector,
    pub action: u8,
    pub source: ActionSource,
}

/// Features for an end-effector at `x` moving with `x_dot`.
pub fn build_state(traj: &Trajectory, x: &Vec3, x_dot: &Vec3, phase: Phase) -> StateVector {
    build_state_with_projection(traj, x, x_dot, phase).0
}

pub fn build_state_with_projection(
    traj: &Trajectory,
    x: &Vec3,
    x_dot: &Vec3,
    phase: Phase,
) -> (StateVector, Projection) {
    let proj = traj.closest_point(x);
    let err = proj.point - x;
    let r_c = traj
        .curvature_radius_at(proj.u.clamp(0.0, 1.0))
        .expect("projection parameter lies in [0, 1]");
    let state = StateVector {
        e_x: err.x,
        e_y: err.y,
        e_z: err.z,
        e: err.norm(),
        r_c,
        v: x_dot.norm(),
        is_track: u8::from(phase == Phase::Tracking),
    };
    (state, proj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    /// z-score with `ln r_c` in place of `r_c`; `is_track` passes through.
    Standard,
    /// Raw features.
    Identity,
}

/// Per-feature affine transform fitted on a demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub shift: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
}

impl Scaler {
    pub fn identity() -> Self {
        Scaler {
            kind: ScalerKind::Identity,
            shift: [0.0; N_FEATURES],
            scale: [1.0; N_FEATURES],
        }
    }

    fn pre(&self, raw: [f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut a = raw;
        if self.kind == ScalerKind::Standard {
            a[R_C] = a[R_C].ln();
        }
        a
    }

    /// Whether feature `k` had (numerically) zero spread in the fitted data.
    pub fn is_degenerate(&self, k: usize) -> bool {
        self.kind == ScalerKind::Standard && self.scale[k] <= SCALE_FLOOR
    }

    pub fn transform(&self, s: &StateVector) -> [f64; N_FEATURES] {
        let a = self.pre(s.to_array());
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            // A column that never varied in training carries nothing the
            // model could have learned; pin it to the training value.
            out[k] = if self.is_degenerate(k) {
                0.0
            } else {
                (a[k] - self.shift[k]) / self.scale[k]
            };
        }
        out
    }

    pub fn inverse(&self, scaled: &[f64; N_FEATURES]) -> StateVector {
        let mut a = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            a[k] = scaled[k] * self.scale[k] + self.shift[k];
        }
        if self.kind == ScalerKind::Standard {
            a[R_C] = a[R_C].exp();
        }
        StateVector::from_array(a)
    }
}

/// Fits mean/standard-deviation scaling on a session's states.
pub fn fit_scaler(pairs: &[StateActionPair]) -> Result<Scaler> {
    if pairs.is_empty() {
        return Err(Error::Empty("no state-action pairs to fit a scaler on"));
    }
    if pairs.len() < WINDOW {
        return Err(Error::TooShort {
            what: "scaler input",
            required: WINDOW,
            found: pairs.len(),
        });
    }
    let mut scaler = Scaler {
        kind: ScalerKind::Standard,
        shift: [0.0; N_FEATURES],
        scale: [1.0; N_FEATURES],
    };
    let rows: Vec<[f64; N_FEATURES]> = pairs.iter().map(|p| scaler.pre(p.state.to_array())).collect();
    let n = rows.len() as f64;
    for k in 0..N_FEATURES {
        if k == IS_TRACK {
            continue;
        }
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n;
        scaler.shift[k] = mean;
        scaler.scale[k] = var.sqrt().max(SCALE_FLOOR);
    }
    Ok(scaler)
}

/// One model input: `WINDOW × N_FEATURES` scaled rows, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub data: Vec<f64>,
    pub label: u8,
    pub weight: f64,
}

impl Window {
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(N_FEATURES)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub windows: Vec<Window>,
    pub scaler: Scaler,
}

impl WindowDataset {
    pub fn new(scaler: Scaler) -> Self {
        WindowDataset {
            windows: Vec::new(),
            scaler,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.windows.iter().map(|w| w.weight).sum()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.windows.is_empty() {
            return 0.0;
        }
        self.windows.iter().filter(|w| w.label == 1).count() as f64 / self.windows.len() as f64
    }

    /// Reweights so each class contributes equally to the squared-error loss.
    /// Weights multiply residuals, so the class factor is applied as a square root.
    pub fn balance_classes(&mut self) {
        let n = self.windows.len() as f64;
        let pos = self.windows.iter().filter(|w| w.label == 1).count() as f64;
        let neg = n - pos;
        if pos == 0.0 || neg == 0.0 {
            return;
        }
        for w in &mut self.windows {
            let class = if w.label == 1 { pos } else { neg };
            w.weight *= (n / (2.0 * class)).sqrt();
        }
    }
}

/// Number of full windows in a session of `n` ticks.
pub fn window_count(n: usize) -> usize {
    n.saturating_sub(WINDOW - 1)
}

pub fn scale_states<'a>(
    states: impl IntoIterator<Item = &'a StateVector>,
    scaler: &Scaler,
) -> Vec<[f64; N_FEATURES]> {
    states.into_iter().map(|s| scaler.transform(s)).collect()
}

/// Flattened window ending at tick `end` (inclusive).
pub fn window_at(scaled: &[[f64; N_FEATURES]], end: usize, len: usize) -> Vec<f64> {
    scaled[end + 1 - len..=end]
        .iter()
        .flat_map(|r| r.iter().copied())
        .collect()
}

/// Stride-1 windows over one session, labelled by each window's last tick.
pub fn make_windows(pairs: &[StateActionPair], scaler: &Scaler, window: usize) -> Result<WindowDataset> {
    if window == 0 {
        return Err(Error::invalid("window", "must be >= 1"));
    }
    if pairs.len() < window {
        return Err(Error::TooShort {
            what: "session",
            required: window,
            found: pairs.len(),
        });
    }
    let scaled = scale_states(pairs.iter().map(|p| &p.state), scaler);
    let windows = (window - 1..pairs.len())
        .map(|end| Window {
            data: window_at(&scaled, end, window),
            label: pairs[end].action,
            weight: 1.0,
        })
        .collect();
    Ok(WindowDataset {
        windows,
        scaler: scaler.clone(),
    })
}

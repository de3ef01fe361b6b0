//! PD corrective force gated by an on/off action.
//!
//! `u = K_p (x_d - x) - K_d ẋ` when assistance is enabled and the end-effector
//! is outside the no-error zone of radius `r`, zero otherwise. With `r = 0`
//! the gate is decided entirely by the action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Trajectory;
use crate::Vec3;

/// Output force limit in newtons.
pub const MAX_FORCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Proportional gain, N/m.
    pub kp: f64,
    /// Derivative gain, N·s/m.
    pub kd: f64,
    /// Seconds to ramp the gain between zero and full. Zero disables ramping.
    #[serde(default)]
    pub ramp_time: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            kp: 4.0,
            kd: 0.001,
            ramp_time: 0.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("kp", self.kp), ("kd", self.kd), ("ramp_time", self.ramp_time)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Pull toward the closest point on the reference (tracking phase).
    #[default]
    ClosestPoint,
    /// Pull toward the curve start (return phase).
    StartPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssistCommand {
    pub enabled: bool,
    pub target_mode: TargetMode,
    /// No-error zone radius in metres.
    pub zone_radius: f64,
}

impl AssistCommand {
    pub fn new(enabled: bool, target_mode: TargetMode) -> Self {
        AssistCommand {
            enabled,
            target_mode,
            zone_radius: 0.0,
        }
    }
}

/// Desired point for the PD law.
pub fn target_point(traj: &Trajectory, x: &Vec3, mode: TargetMode) -> Vec3 {
    match mode {
        TargetMode::ClosestPoint => traj.closest_point(x).point,
        TargetMode::StartPoint => traj.start_point(),
    }
}

/// Gain scale in `[0, 1]` that follows the enable flag, moving linearly at
/// `1 / ramp_time` per second.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GainRamp {
    level: f64,
}

impl GainRamp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn advance(&mut self, enabled: bool, ramp_time: f64, dt: f64) -> f64 {
        let target = if enabled { 1.0 } else { 0.0 };
        if ramp_time <= 0.0 {
            self.level = target;
        } else {
            let step = dt / ramp_time;
            self.level = if enabled {
                (self.level + step).min(1.0)
            } else {
                (self.level - step).max(0.0)
            };
        }
        self.level
    }
}

/// Ramp factor for a toggle that happened `t_since_toggle` seconds ago,
/// starting from a fully settled level.
pub fn ramp_factor(enabled: bool, ramp_time: f64, t_since_toggle: f64) -> f64 {
    if ramp_time <= 0.0 {
        return if enabled { 1.0 } else { 0.0 };
    }
    let w = (t_since_toggle / ramp_time).clamp(0.0, 1.0);
    if enabled {
        w
    } else {
        1.0 - w
    }
}

/// Assistance force in newtons.
///
/// `ramp` is the gain scale from [`GainRamp`] or [`ramp_factor`]; pass `1.0`
/// when ramping is disabled. A disabled command still produces force while
/// the ramp decays, so switching off is as smooth as switching on.
pub fn assist_force(
    x: &Vec3,
    x_dot: &Vec3,
    x_d: &Vec3,
    gains: &Gains,
    cmd: &AssistCommand,
    ramp: f64,
) -> Vec3 {
    let scale = if gains.ramp_time > 0.0 {
        ramp.clamp(0.0, 1.0)
    } else if cmd.enabled {
        1.0
    } else {
        0.0
    };
    // r = 0 removes the distance gate entirely; the action alone decides
    let d = (x_d - x).norm();
    if scale == 0.0 || (cmd.zone_radius > 0.0 && d <= cmd.zone_radius) {
        return Vec3::zeros();
    }
    let u = ((x_d - x) * gains.kp - x_dot * gains.kd) * scale;
    let norm = u.norm();
    if norm > MAX_FORCE {
        u * (MAX_FORCE / norm)
    } else {
        u
    }
}

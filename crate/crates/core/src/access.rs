//! Attention guidance and audio accessibility.
//!
//! Arrow hints and haptic levels steer a participant toward a target
//! direction; mono downmix and constant-power panning cover the two audio
//! presentation modes.

use thiserror::Error;

use crate::gaze::{angular_distance, quat_to_direction};
use crate::geom::{wrap_yaw, Direction, Quat};

/// Below this in-plane magnitude the target is straight ahead or behind.
const AXIS_EPS: f64 = 1e-12;

/// On-screen arrow. Angle is counterclockwise from screen-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrowHint {
    pub screen_angle_deg: f64,
    pub magnitude_deg: f64,
}

pub fn guidance_arrow(pose: Quat, target: Direction) -> ArrowHint {
    let pose = pose.normalized().unwrap_or(Quat::IDENTITY);
    let local = pose.inverse_rotate(target.to_vec3());
    let screen_angle_deg = if local.x.hypot(local.y) < AXIS_EPS {
        0.0
    } else {
        wrap_yaw(local.y.atan2(local.x).to_degrees())
    };
    ArrowHint { screen_angle_deg, magnitude_deg: angular_distance(quat_to_direction(pose), target) }
}

/// Rumble strength in `[0, 1]`: silent while the target is inside the
/// field of view, then a linear ramp reaching 1 when facing away.
pub fn haptic_level(angular_error_deg: f64, half_fov_deg: f64) -> f64 {
    if angular_error_deg <= half_fov_deg {
        return 0.0;
    }
    ((angular_error_deg - half_fov_deg) / (180.0 - half_fov_deg)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("channel length mismatch: left {left}, right {right}")]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

/// `(l + r) / 2` per sample.
pub fn downmix_mono(left: &[f32], right: &[f32]) -> Result<Vec<f32>, LengthMismatch> {
    if left.len() != right.len() {
        return Err(LengthMismatch { left: left.len(), right: right.len() });
    }
    Ok(left.iter().zip(right).map(|(l, r)| (l + r) / 2.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoGains {
    pub left: f64,
    pub right: f64,
}

/// Source yaw relative to the head, in `[-180, 180)`. Elevation is ignored.
pub fn relative_yaw(pose: Quat, source: Direction) -> f64 {
    let pose = pose.normalized().unwrap_or(Quat::IDENTITY);
    Direction::from_vec3(pose.inverse_rotate(source.to_vec3())).yaw_deg
}

/// Constant-power sine/cosine pan, scaled by `base_gain`.
pub fn spatial_gains(pose: Quat, source: Direction, base_gain: f64) -> StereoGains {
    let pan = (relative_yaw(pose, source) / 90.0).clamp(-1.0, 1.0);
    let alpha = ((pan + 1.0) * 45.0).to_radians();
    StereoGains { left: alpha.cos() * base_gain, right: alpha.sin() * base_gain }
}

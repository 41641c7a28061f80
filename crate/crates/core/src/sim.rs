//! Headless headset: scripted or cue-seeking head motion, pose telemetry
//! and cue acknowledgements.
//!
//! [`HeadsetSim`] is a message-in/message-out state machine driven by the
//! caller's local clock. The network client and the in-process virtual run
//! both drive the same type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::angular_distance;
use crate::geom::{angle_between, wrap_yaw, Direction, Quat, Vec3};
use crate::protocol::{estimate_offset, Message, Role, PROTOCOL_VERSION};
use crate::session::SessionState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MotionError {
    #[error("motion script is empty")]
    Empty,
    #[error("motion script must start at t=0")]
    BadStart,
    #[error("keyframe times must strictly increase (index {0})")]
    Unsorted(usize),
    #[error("invalid motion script JSON: {0}")]
    Json(String),
}

/// Head motion keyframes, first at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    keyframes: Vec<(i64, Direction)>,
}

impl MotionScript {
    pub fn new(keyframes: Vec<(i64, Direction)>) -> Result<Self, MotionError> {
        match keyframes.first() {
            None => return Err(MotionError::Empty),
            Some((t, _)) if *t != 0 => return Err(MotionError::BadStart),
            _ => {}
        }
        if let Some(i) = keyframes.windows(2).position(|w| w[0].0 >= w[1].0) {
            return Err(MotionError::Unsorted(i + 1));
        }
        Ok(Self { keyframes })
    }

    /// Parses the `[[t_ms, yaw, pitch], ...]` file format.
    pub fn from_json(text: &str) -> Result<Self, MotionError> {
        let rows: Vec<(i64, f64, f64)> =
            serde_json::from_str(text).map_err(|e| MotionError::Json(e.to_string()))?;
        Self::new(rows.into_iter().map(|(t, y, p)| (t, Direction::new(y, p))).collect())
    }

    pub fn keyframes(&self) -> &[(i64, Direction)] {
        &self.keyframes
    }

    pub fn duration_ms(&self) -> i64 {
        self.keyframes.last().map_or(0, |k| k.0)
    }
}

/// Piecewise-linear pose at `t_ms`, taking the short way around in yaw.
/// Times outside the script clamp to the first/last keyframe.
pub fn interpolate_pose(script: &MotionScript, t_ms: i64) -> Direction {
    let keys = script.keyframes();
    let i = keys.partition_point(|k| k.0 <= t_ms);
    if i == 0 {
        return keys[0].1.canonical();
    }
    if i == keys.len() {
        return keys[i - 1].1.canonical();
    }
    let (t0, a) = keys[i - 1];
    let (t1, b) = keys[i];
    let f = (t_ms - t0) as f64 / (t1 - t0) as f64;
    let dyaw = wrap_yaw(b.yaw_deg - a.yaw_deg);
    Direction::new(
        wrap_yaw(a.yaw_deg + f * dyaw),
        a.pitch_deg + f * (b.pitch_deg - a.pitch_deg),
    )
}

/// Turns from `current` toward `target` along the great circle by at most
/// `max_speed_deg_per_s * dt_ms / 1000` degrees, landing exactly on the
/// target when it is within reach.
pub fn seek_step(current: Direction, target: Direction, dt_ms: i64, max_speed_deg_per_s: f64) -> Direction {
    let a = current.to_vec3();
    let b = target.to_vec3();
    let theta = angle_between(a, b);
    let step = (max_speed_deg_per_s * dt_ms.max(0) as f64 / 1000.0).to_radians();
    if step >= theta {
        return target;
    }
    if step <= 0.0 {
        return current;
    }
    // rotate a about the axis perpendicular to both; for antipodal points
    // any perpendicular axis works, prefer turning in yaw
    let mut axis = a.cross(b);
    if axis.norm() < 1e-12 {
        let up = Vec3::new(0.0, 1.0, 0.0);
        axis = up + a.scale(-a.dot(up));
        if axis.norm() < 1e-12 {
            axis = Vec3::new(1.0, 0.0, 0.0);
        }
    }
    let q = Quat::from_axis_angle(axis, step.to_degrees());
    Direction::from_vec3(q.rotate(a))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Scripted(MotionScript),
    SeekCues { max_speed_deg_per_s: f64, reaction_latency_ms: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub pose_rate_hz: f64,
    pub behavior: Behavior,
    /// Gaze within this angle of a cue anchor counts as aligned.
    pub half_fov_deg: f64,
    pub session_id: Option<String>,
}

impl SimConfig {
    pub const DEFAULT_RATE_HZ: f64 = 30.0;

    pub fn scripted(script: MotionScript) -> Self {
        Self {
            pose_rate_hz: Self::DEFAULT_RATE_HZ,
            behavior: Behavior::Scripted(script),
            half_fov_deg: 45.0,
            session_id: None,
        }
    }

    pub fn seek(max_speed_deg_per_s: f64, reaction_latency_ms: i64) -> Self {
        Self {
            pose_rate_hz: Self::DEFAULT_RATE_HZ,
            behavior: Behavior::SeekCues { max_speed_deg_per_s, reaction_latency_ms },
            half_fov_deg: 45.0,
            session_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1.0..=90.0).contains(&self.pose_rate_hz) {
            return Err(format!("pose rate {} Hz outside [1, 90]", self.pose_rate_hz));
        }
        if let Behavior::SeekCues { max_speed_deg_per_s, reaction_latency_ms } = self.behavior {
            if max_speed_deg_per_s.is_nan() || max_speed_deg_per_s <= 0.0 {
                return Err("max speed must be positive".into());
            }
            if reaction_latency_ms < 0 {
                return Err("reaction latency must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// First moment the gaze came within the alignment angle of a cue anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEvent {
    pub cue_id: String,
    /// Server-aligned time the cue arrived.
    pub cue_received_ms: i64,
    /// Server-aligned timestamp of the first aligned pose.
    pub aligned_ms: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub poses_sent: u64,
    pub cues_received: u64,
    pub cue_acks: u64,
    pub alignment_events: Vec<AlignmentEvent>,
    /// Set when the server refused the handshake.
    pub rejected: Option<String>,
    pub clock_offset_ms: f64,
    pub rtt_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Handshake,
    Syncing,
    Streaming,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
struct SeekTarget {
    cue_id: String,
    anchor: Direction,
    active_from_local: i64,
    received_server_ms: i64,
    aligned: bool,
}

#[derive(Debug, Clone)]
pub struct HeadsetSim {
    cfg: SimConfig,
    duration_ms: i64,
    phase: Phase,
    offset_ms: f64,
    stream_start_local: i64,
    next_pose: u64,
    head: Direction,
    last_motion_local: i64,
    target: Option<SeekTarget>,
    report: SimReport,
    sent_poses: Vec<(i64, Quat)>,
}

impl HeadsetSim {
    pub fn new(cfg: SimConfig, duration_ms: i64) -> Self {
        Self {
            cfg,
            duration_ms,
            phase: Phase::Handshake,
            offset_ms: 0.0,
            stream_start_local: 0,
            next_pose: 0,
            head: Direction::FORWARD,
            last_motion_local: 0,
            target: None,
            report: SimReport::default(),
            sent_poses: Vec::new(),
        }
    }

    /// Opening message for the connection.
    pub fn hello(&self) -> Message {
        Message::Hello {
            role: Role::Headset,
            session_id: self.cfg.session_id.clone(),
            protocol_version: PROTOCOL_VERSION,
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn report(&self) -> &SimReport {
        &self.report
    }

    pub fn into_report(self) -> SimReport {
        self.report
    }

    /// Every pose sent so far as `(server-aligned t_ms, orientation)`.
    pub fn sent_poses(&self) -> &[(i64, Quat)] {
        &self.sent_poses
    }

    pub fn head(&self) -> Direction {
        self.head
    }

    fn server_time(&self, local_ms: i64) -> i64 {
        (local_ms as f64 + self.offset_ms).round() as i64
    }

    fn pose_time_local(&self, k: u64) -> i64 {
        self.stream_start_local + (k as f64 * 1000.0 / self.cfg.pose_rate_hz).round() as i64
    }

    /// Local time of the next scheduled pose, if streaming.
    pub fn next_wakeup(&self) -> Option<i64> {
        (self.phase == Phase::Streaming).then(|| self.pose_time_local(self.next_pose))
    }

    pub fn on_message(&mut self, msg: &Message, local_now: i64) -> Vec<Message> {
        match (self.phase, msg) {
            (Phase::Done, _) => Vec::new(),
            (Phase::Handshake, Message::Welcome { .. }) => {
                self.phase = Phase::Syncing;
                vec![Message::Ping { t0_ms: local_now }]
            }
            (_, Message::Error { code, .. }) if self.phase == Phase::Handshake => {
                self.report.rejected = Some(code.clone());
                self.phase = Phase::Done;
                Vec::new()
            }
            (Phase::Syncing, &Message::Pong { t0_ms, server_time_ms }) => {
                let sync = estimate_offset(t0_ms, server_time_ms, local_now);
                self.offset_ms = sync.offset_ms;
                self.report.clock_offset_ms = sync.offset_ms;
                self.report.rtt_ms = sync.rtt_ms;
                self.phase = Phase::Streaming;
                self.stream_start_local = local_now;
                self.last_motion_local = local_now;
                Vec::new()
            }
            (_, Message::Cue { cue, .. }) => {
                self.report.cues_received += 1;
                let received = self.server_time(local_now);
                if let Behavior::SeekCues { reaction_latency_ms, .. } = self.cfg.behavior {
                    self.advance_head(local_now);
                    self.target = Some(SeekTarget {
                        cue_id: cue.id.clone(),
                        anchor: cue.anchor,
                        active_from_local: local_now + reaction_latency_ms,
                        received_server_ms: received,
                        aligned: false,
                    });
                }
                self.report.cue_acks += 1;
                vec![Message::CueAck { cue_id: cue.id.clone(), t_ms: received }]
            }
            (_, Message::State { state: SessionState::Completed, .. }) => {
                self.phase = Phase::Done;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    fn advance_head(&mut self, local_now: i64) {
        match &self.cfg.behavior {
            Behavior::Scripted(script) => {
                self.head = interpolate_pose(script, local_now - self.stream_start_local);
            }
            Behavior::SeekCues { max_speed_deg_per_s, .. } => {
                if let Some(target) = &self.target {
                    let from = self.last_motion_local.max(target.active_from_local);
                    if local_now > from {
                        self.head = seek_step(self.head, target.anchor, local_now - from, *max_speed_deg_per_s);
                    }
                }
            }
        }
        self.last_motion_local = self.last_motion_local.max(local_now);
    }

    /// Emits every pose due at or before `local_now`.
    pub fn poll(&mut self, local_now: i64) -> Vec<Message> {
        let mut out = Vec::new();
        while self.phase == Phase::Streaming {
            let t_local = self.pose_time_local(self.next_pose);
            if t_local >= self.stream_start_local + self.duration_ms {
                self.phase = Phase::Done;
                break;
            }
            if t_local > local_now {
                break;
            }
            self.advance_head(t_local);
            let t_ms = self.server_time(t_local);
            let half_fov = self.cfg.half_fov_deg;
            let head = self.head;
            if let Some(target) = self.target.as_mut().filter(|t| !t.aligned) {
                if angular_distance(head, target.anchor) <= half_fov {
                    target.aligned = true;
                    self.report.alignment_events.push(AlignmentEvent {
                        cue_id: target.cue_id.clone(),
                        cue_received_ms: target.received_server_ms,
                        aligned_ms: t_ms,
                    });
                }
            }
            let q = Quat::from_direction(head);
            self.sent_poses.push((t_ms, q));
            self.report.poses_sent += 1;
            self.next_pose += 1;
            out.push(Message::Pose { t_ms, q });
        }
        out
    }
}

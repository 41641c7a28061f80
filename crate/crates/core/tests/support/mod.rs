//! Reference oracles and generators shared by the integration tests.
//!
//! The oracles are deliberately naive: brute-force time stepping, explicit
//! rotation matrices and back-scanning evaluators. They do not call into
//! the code under test beyond plain data types.

#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use study360_core::biometric::{BiometricRule, Comparator};
use study360_core::geom::{Direction, Quat};
use study360_core::protocol::{Message, Role};
use study360_core::session::{Command, Event, Session, SessionState};
use study360_core::study::{canonicalize, Cue, CueKind, MediaRef, Projection, StudyConfig};

// ---------------------------------------------------------------- geometry

pub type V3 = [f64; 3];

pub fn dir_vec(yaw_deg: f64, pitch_deg: f64) -> V3 {
    let (y, p) = (yaw_deg.to_radians(), pitch_deg.to_radians());
    [p.cos() * y.sin(), p.sin(), -p.cos() * y.cos()]
}

pub fn vec_dir(v: V3) -> (f64, f64) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (x, y, z) = (v[0] / n, v[1] / n, v[2] / n);
    let pitch = y.clamp(-1.0, 1.0).asin().to_degrees();
    if x.abs() < 1e-12 && z.abs() < 1e-12 {
        return (0.0, pitch);
    }
    let mut yaw = x.atan2(-z).to_degrees();
    if yaw >= 180.0 {
        yaw -= 360.0;
    }
    (yaw, pitch)
}

/// Rotation matrix for a right-handed rotation of `deg` about `axis`.
pub fn axis_angle_matrix(axis: V3, deg: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = deg.to_radians().sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_matrix(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn mat_vec(m: [[f64; 3]; 3], v: V3) -> V3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn transpose(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]]
}

pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Spherical linear interpolation between unit vectors.
pub fn slerp(a: V3, b: V3, t: f64) -> V3 {
    let omega = dot(a, b).clamp(-1.0, 1.0).acos();
    if omega < 1e-12 {
        return a;
    }
    let (sa, sb) = (((1.0 - t) * omega).sin() / omega.sin(), (t * omega).sin() / omega.sin());
    [sa * a[0] + sb * b[0], sa * a[1] + sb * b[1], sa * a[2] + sb * b[2]]
}

pub fn yaw_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

// ---------------------------------------------------------------- scheduler

#[derive(Debug, Clone)]
pub enum Op {
    Tick,
    Cmd(Command),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub fired: Vec<String>,
    pub skipped: Vec<String>,
    pub accepted: Vec<bool>,
    pub final_state: String,
}

#[derive(PartialEq)]
enum RefState {
    Loaded,
    Running,
    Paused,
    Completed,
}

/// Millisecond-stepping scheduler: the position counter advances by one
/// each millisecond while running, and cues fire as soon as the counter
/// reaches them.
pub struct RefScheduler {
    duration: i64,
    state: RefState,
    pos: i64,
    pending: BTreeSet<(i64, String)>,
    known: BTreeSet<String>,
    pub out: Outcome,
}

impl RefScheduler {
    pub fn new(cfg: &StudyConfig) -> Self {
        Self {
            duration: cfg.media.duration_ms,
            state: RefState::Loaded,
            pos: 0,
            pending: cfg.cues.iter().map(|c| (c.at_ms, c.id.clone())).collect(),
            known: cfg.cues.iter().map(|c| c.id.clone()).collect(),
            out: Outcome::default(),
        }
    }

    fn fire_due(&mut self) {
        if self.state != RefState::Running {
            return;
        }
        while let Some(first) = self.pending.first().cloned() {
            if first.0 > self.pos {
                break;
            }
            self.pending.remove(&first);
            self.out.fired.push(first.1);
        }
        if self.pos >= self.duration {
            self.state = RefState::Completed;
        }
    }

    fn command(&mut self, cmd: &Command) -> bool {
        use RefState::*;
        match (cmd, &self.state) {
            (Command::Start, Loaded) => {
                self.state = Running;
                self.pos = 0;
            }
            (Command::Pause, Running) => self.state = Paused,
            (Command::Resume, Paused) => self.state = Running,
            (Command::Stop, Loaded | Running | Paused) => self.state = Completed,
            (&Command::Seek { to_ms }, Running | Paused) => {
                if to_ms < 0 || to_ms > self.duration {
                    return false;
                }
                let passed: Vec<_> =
                    self.pending.iter().filter(|(at, _)| *at > self.pos && *at <= to_ms).cloned().collect();
                for p in passed {
                    self.pending.remove(&p);
                    self.out.skipped.push(p.1);
                }
                self.pos = to_ms;
            }
            (Command::InjectCue(cue), Loaded | Running | Paused) => {
                let pos = if self.state == Loaded { 0 } else { self.pos };
                if cue.at_ms < pos || cue.at_ms > self.duration || self.known.contains(&cue.id) {
                    return false;
                }
                self.known.insert(cue.id.clone());
                self.pending.insert((cue.at_ms, cue.id.clone()));
            }
            _ => return false,
        }
        true
    }

    /// Runs wall time `0..=end`, applying each op at its wall time.
    pub fn run(cfg: &StudyConfig, ops: &[(i64, Op)], end: i64) -> Outcome {
        let mut r = Self::new(cfg);
        let mut ops = ops.iter().peekable();
        for t in 0..=end {
            r.fire_due();
            while let Some((_, op)) = ops.next_if(|(at, _)| *at <= t) {
                if let Op::Cmd(cmd) = op {
                    let ok = r.command(cmd);
                    r.out.accepted.push(ok);
                    r.fire_due();
                }
            }
            if r.state == RefState::Running {
                r.pos += 1;
            }
        }
        r.out.final_state = match r.state {
            RefState::Loaded => "loaded",
            RefState::Running => "running",
            RefState::Paused => "paused",
            RefState::Completed => "completed",
        }
        .into();
        r.out
    }
}

/// Drives the real session with the same ops, ticking only where asked
/// plus once at `end`.
pub fn run_session(cfg: &StudyConfig, ops: &[(i64, Op)], end: i64) -> (Outcome, Vec<Event>) {
    let mut s = Session::new(cfg.clone()).expect("generated config is valid");
    let mut out = Outcome::default();
    let mut events = Vec::new();
    for (t, op) in ops {
        match op {
            Op::Tick => events.extend(s.tick(*t)),
            Op::Cmd(cmd) => match s.apply_command(cmd.clone(), *t) {
                Ok(ev) => {
                    out.accepted.push(true);
                    events.extend(ev);
                }
                Err(_) => out.accepted.push(false),
            },
        }
    }
    events.extend(s.tick(end));
    for e in &events {
        match e {
            Event::CueFired { cue, .. } => out.fired.push(cue.id.clone()),
            Event::CueSkipped(id) => out.skipped.push(id.clone()),
            _ => {}
        }
    }
    out.final_state = s.state().name().into();
    (out, events)
}

// ---------------------------------------------------------------- biometric

/// Per-sample evaluation by scanning back over the history for the length
/// of the current run of true (or false) samples.
pub fn ref_biometric(rule: &BiometricRule, history: &[(i64, f64)]) -> Vec<i64> {
    let holds = |v: f64| match rule.comparator {
        Comparator::Greater => v > rule.threshold,
        Comparator::Less => v < rule.threshold,
    };
    let run_start = |i: usize| {
        let cond = holds(history[i].1);
        let mut j = i;
        while j > 0 && holds(history[j - 1].1) == cond {
            j -= 1;
        }
        history[j].0
    };
    let mut armed = true;
    let mut fired = Vec::new();
    for (i, &(t, v)) in history.iter().enumerate() {
        let held = t - run_start(i);
        if holds(v) {
            if armed && held >= rule.sustain_ms {
                armed = false;
                fired.push(t);
            }
        } else if !armed && held >= rule.sustain_ms {
            armed = true;
        }
    }
    fired
}

// ---------------------------------------------------------------- visibility

/// Integrates visibility one millisecond at a time with sample-and-hold.
pub fn ref_visible_ms(samples: &[(i64, (f64, f64))], anchor: (f64, f64), window: (i64, i64), half_fov: f64) -> i64 {
    let Some(last) = samples.last() else { return 0 };
    let a = dir_vec(anchor.0, anchor.1);
    let mut visible = 0;
    let mut k = 0;
    for t in samples[0].0..last.0 {
        while k + 1 < samples.len() && samples[k + 1].0 <= t {
            k += 1;
        }
        if t < window.0 || t >= window.1 {
            continue;
        }
        let (yaw, pitch) = samples[k].1;
        let angle = dot(dir_vec(yaw, pitch), a).clamp(-1.0, 1.0).acos().to_degrees();
        if angle <= half_fov {
            visible += 1;
        }
    }
    visible
}

// ---------------------------------------------------------------- generators

pub fn arb_direction() -> impl Strategy<Value = Direction> {
    (-180.0..180.0f64, -90.0..=90.0f64).prop_map(|(y, p)| Direction::new(y, p))
}

pub fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => "\\PC{0,16}",
        1 => "[\\x00-\\x1f\"\\\\/\u{2028}\u{1F600}]{0,6}",
    ]
}

pub fn arb_cue_kind() -> impl Strategy<Value = CueKind> {
    prop_oneof![
        "[A-Za-z0-9]\\PC{0,11}".prop_map(|body| CueKind::Text { body }),
        arb_direction().prop_map(|target| CueKind::Arrow { target }),
        arb_direction().prop_map(|target| CueKind::Haptic { target }),
    ]
}

/// A valid cue for a study of length `duration`.
pub fn arb_cue_in(id: String, duration: i64) -> impl Strategy<Value = Cue> {
    let at = prop_oneof![0..=duration, (0..=duration / 100).prop_map(|k| k * 100)];
    (at, 1..5_000i64, arb_cue_kind(), arb_direction())
        .prop_map(move |(at_ms, duration_ms, kind, anchor)| Cue { id: id.clone(), at_ms, duration_ms, kind, anchor })
}

pub fn study(duration_ms: i64, cues: Vec<Cue>) -> StudyConfig {
    canonicalize(&StudyConfig {
        version: 1,
        session_label: "gen".into(),
        media: MediaRef {
            url: "v.mp4".into(),
            duration_ms,
            projection: Projection::Equirectangular,
            width_px: 3840,
            height_px: 1920,
        },
        audio_tracks: vec![],
        cues,
    })
}

/// Canonical, valid studies with up to `max_cues` cues. Ids are short so
/// that equal-time ties are broken by id in interesting ways.
pub fn arb_study(max_cues: usize, max_duration: i64) -> impl Strategy<Value = StudyConfig> {
    (1..=max_duration).prop_flat_map(move |duration| {
        proptest::collection::btree_set("[a-z]{1,3}", 0..=max_cues).prop_flat_map(move |ids| {
            let cues: Vec<_> = ids.into_iter().map(|id| arb_cue_in(id, duration)).collect();
            cues.prop_map(move |cues| study(duration, cues))
        })
    })
}

pub fn arb_op(duration: i64) -> impl Strategy<Value = Op> {
    let seek = (-100..=duration + 100).prop_map(|to_ms| Command::Seek { to_ms });
    let inject = ("[a-z]{1,3}", 0..=duration, 1..2000i64)
        .prop_map(|(id, at, dur)| Command::InjectCue(Cue::text(format!("i{id}"), at, dur, "x")));
    prop_oneof![
        8 => Just(Op::Tick),
        2 => Just(Op::Cmd(Command::Start)),
        2 => Just(Op::Cmd(Command::Pause)),
        2 => Just(Op::Cmd(Command::Resume)),
        3 => seek.prop_map(Op::Cmd),
        1 => inject.prop_map(Op::Cmd),
        1 => Just(Op::Cmd(Command::Stop)),
    ]
}

/// A study, a time-sorted op schedule and an end time.
pub fn arb_schedule(max_cues: usize) -> impl Strategy<Value = (StudyConfig, Vec<(i64, Op)>, i64)> {
    arb_study(max_cues, 20_000).prop_flat_map(|cfg| {
        let d = cfg.media.duration_ms;
        let end = d * 2 + 10;
        let ops = proptest::collection::vec((0..=end, arb_op(d)), 0..40).prop_map(|mut ops| {
            ops.sort_by_key(|o| o.0);
            ops
        });
        // usually start early so that cues actually get a chance to fire
        let lead = prop_oneof![3 => Just(true), 1 => Just(false)];
        (Just(cfg), ops, lead, Just(end)).prop_map(|(cfg, mut ops, lead, end)| {
            if lead {
                ops.insert(0, (0, Op::Cmd(Command::Start)));
            }
            (cfg, ops, end)
        })
    })
}

pub fn arb_state() -> impl Strategy<Value = SessionState> {
    prop_oneof![
        Just(SessionState::Loaded),
        any::<i64>().prop_map(|start_anchor_ms| SessionState::Running { start_anchor_ms }),
        (0..i64::MAX).prop_map(|position_ms| SessionState::Paused { position_ms }),
        Just(SessionState::Completed),
    ]
}

pub fn arb_command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::Start),
        Just(Command::Pause),
        Just(Command::Resume),
        Just(Command::Stop),
        any::<i64>().prop_map(|to_ms| Command::Seek { to_ms }),
        ("\\PC{1,8}", any::<i64>(), any::<i64>(), arb_cue_kind(), arb_direction()).prop_map(
            |(id, at_ms, duration_ms, kind, anchor)| Command::InjectCue(Cue { id, at_ms, duration_ms, kind, anchor })
        ),
    ]
}

pub fn arb_unit_quat() -> impl Strategy<Value = Quat> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter_map("near zero", |(w, x, y, z)| Quat::new(w, x, y, z).normalized())
}

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |x| x.is_finite())
}

pub fn arb_role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Researcher), Just(Role::Headset), Just(Role::Observer)]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    let cue = ("\\PC{1,8}", any::<i64>(), any::<i64>(), arb_cue_kind(), arb_direction())
        .prop_map(|(id, at_ms, duration_ms, kind, anchor)| Cue { id, at_ms, duration_ms, kind, anchor });
    prop_oneof![
        (arb_role(), proptest::option::of(arb_text()))
            .prop_map(|(role, session_id)| Message::Hello { role, session_id, protocol_version: 1 }),
        (arb_text(), any::<i64>(), arb_state())
            .prop_map(|(session_id, server_time_ms, state)| Message::Welcome { session_id, server_time_ms, state }),
        arb_command().prop_map(Message::Cmd),
        (arb_state(), any::<i64>(), proptest::collection::vec(arb_text(), 0..4), proptest::collection::vec(arb_text(), 0..4))
            .prop_map(|(state, position_ms, fired, skipped)| Message::State { state, position_ms, fired, skipped }),
        (cue, proptest::option::of(any::<i64>())).prop_map(|(cue, position_ms)| Message::Cue { cue, position_ms }),
        (arb_text(), any::<i64>()).prop_map(|(cue_id, t_ms)| Message::CueAck { cue_id, t_ms }),
        (any::<i64>(), arb_unit_quat()).prop_map(|(t_ms, q)| Message::Pose { t_ms, q }),
        (any::<i64>(), finite()).prop_map(|(t_ms, pulse_bpm)| Message::Biometric { t_ms, pulse_bpm }),
        any::<i64>().prop_map(|t0_ms| Message::Ping { t0_ms }),
        (any::<i64>(), any::<i64>()).prop_map(|(t0_ms, server_time_ms)| Message::Pong { t0_ms, server_time_ms }),
        (arb_text(), arb_text()).prop_map(|(code, message)| Message::Error { code, message }),
    ]
}

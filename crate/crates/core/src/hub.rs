//! Session hub: routes protocol messages between peers and the session.
//!
//! The hub owns the one [`Session`] and is fed an ordered stream of peer
//! messages and ticks, each stamped with server time. It returns the
//! messages to deliver and records every message in and out to its log.
//! Transports (WebSocket, raw TCP, in-process) only move bytes.

use std::collections::BTreeMap;

use log::warn;

use crate::biometric::{BiometricMonitor, BiometricRule};
use crate::geom::Quat;
use crate::log::{LogDirection, LogRecord, LogSink};
use crate::protocol::{decode, Message, Role};
use crate::session::{Command, Event, Session};

pub type PeerId = u64;

/// A message for one peer; `close` asks the transport to disconnect it
/// after delivery.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub to: PeerId,
    pub msg: Message,
    pub close: bool,
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub session_id: String,
    /// Period of unsolicited State snapshots while running; 0 disables.
    pub heartbeat_ms: i64,
    pub rules: Vec<BiometricRule>,
}

impl HubConfig {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self { session_id: session_id.into(), heartbeat_ms: 1000, rules: Vec::new() }
    }
}

pub struct Hub {
    session: Session,
    cfg: HubConfig,
    peers: BTreeMap<PeerId, Option<Role>>,
    monitor: BiometricMonitor,
    latest_pose: Option<(i64, Quat)>,
    last_heartbeat: i64,
    log: Box<dyn LogSink>,
    log_errors: u64,
}

impl Hub {
    pub fn new(session: Session, cfg: HubConfig, log: Box<dyn LogSink>) -> Self {
        let monitor = BiometricMonitor::new(cfg.rules.clone());
        Self {
            session,
            cfg,
            peers: BTreeMap::new(),
            monitor,
            latest_pose: None,
            last_heartbeat: i64::MIN,
            log,
            log_errors: 0,
        }
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn session_id(&self) -> &str {
        &self.cfg.session_id
    }

    pub fn latest_pose(&self) -> Option<(i64, Quat)> {
        self.latest_pose
    }

    pub fn log_errors(&self) -> u64 {
        self.log_errors
    }

    pub fn role_of(&self, peer: PeerId) -> Option<Role> {
        self.peers.get(&peer).copied().flatten()
    }

    pub fn connect(&mut self, peer: PeerId) {
        self.peers.insert(peer, None);
    }

    pub fn disconnect(&mut self, peer: PeerId) {
        self.peers.remove(&peer);
    }

    fn write_log(&mut self, rec: LogRecord) {
        if let Err(e) = self.log.record(&rec) {
            self.log_errors += 1;
            warn!("session log write failed: {e}");
        }
    }

    fn send(&mut self, out: &mut Vec<Outbound>, to: PeerId, msg: Message, close: bool, now: i64) {
        let peer_role = self.role_of(to);
        self.write_log(LogRecord {
            t_recv_ms: now,
            direction: LogDirection::Out,
            peer: Some(to),
            peer_role,
            msg: msg.clone(),
        });
        out.push(Outbound { to, msg, close });
    }

    fn joined(&self) -> Vec<(PeerId, Role)> {
        self.peers.iter().filter_map(|(&p, r)| r.map(|r| (p, r))).collect()
    }

    fn broadcast(&mut self, out: &mut Vec<Outbound>, msg: &Message, now: i64, filter: impl Fn(Role) -> bool) {
        for (peer, role) in self.joined() {
            if filter(role) {
                self.send(out, peer, msg.clone(), false, now);
            }
        }
    }

    /// Current State snapshot.
    pub fn snapshot(&self, now: i64) -> Message {
        Message::State {
            state: self.session.state(),
            position_ms: self.session.position_at(now),
            fired: self.session.fired().iter().cloned().collect(),
            skipped: self.session.skipped().iter().cloned().collect(),
        }
    }

    fn publish(&mut self, out: &mut Vec<Outbound>, events: Vec<Event>, now: i64) {
        let mut state_changed = false;
        for ev in events {
            match ev {
                Event::CueFired { cue, position_ms } => {
                    let msg = Message::Cue { cue, position_ms: Some(position_ms) };
                    self.broadcast(out, &msg, now, |_| true);
                }
                Event::StateChanged(_) => state_changed = true,
                // reported through the next State snapshot
                Event::CueSkipped(_) | Event::SessionCompleted => {}
            }
        }
        if state_changed {
            let snap = self.snapshot(now);
            self.broadcast(out, &snap, now, |_| true);
            self.last_heartbeat = now;
        }
    }

    fn apply(&mut self, out: &mut Vec<Outbound>, reply_to: Option<PeerId>, cmd: Command, now: i64) {
        match self.session.apply_command(cmd, now) {
            Ok(events) => self.publish(out, events, now),
            Err(e) => {
                if let Some(peer) = reply_to {
                    self.send(out, peer, Message::error(e.code(), e.to_string()), false, now);
                }
            }
        }
    }

    /// Handles raw message bytes from a peer. Undecodable input is answered
    /// with an error message and otherwise dropped.
    pub fn handle_raw(&mut self, peer: PeerId, bytes: &[u8], now: i64) -> Vec<Outbound> {
        match decode(bytes) {
            Ok(msg) => self.handle(peer, msg, now),
            Err(e) => {
                let mut out = Vec::new();
                let close = self.role_of(peer).is_none();
                self.send(&mut out, peer, Message::error(e.code(), e.to_string()), close, now);
                out
            }
        }
    }

    pub fn handle(&mut self, peer: PeerId, msg: Message, now: i64) -> Vec<Outbound> {
        let mut out = Vec::new();
        let role = self.role_of(peer);
        let hello_role = match &msg {
            Message::Hello { role: r, .. } if role.is_none() => Some(*r),
            _ => None,
        };
        self.write_log(LogRecord {
            t_recv_ms: now,
            direction: LogDirection::In,
            peer: Some(peer),
            peer_role: role.or(hello_role),
            msg: msg.clone(),
        });

        let Some(role) = role else {
            self.handshake(&mut out, peer, msg, now);
            return out;
        };

        match msg {
            Message::Hello { .. } => {
                self.send(&mut out, peer, Message::error("already_joined", "hello sent twice"), false, now)
            }
            Message::Ping { t0_ms } => {
                self.send(&mut out, peer, Message::Pong { t0_ms, server_time_ms: now }, false, now)
            }
            Message::Cmd(cmd) if role == Role::Researcher => self.apply(&mut out, Some(peer), cmd, now),
            Message::Pose { t_ms, q } if role == Role::Headset => {
                self.latest_pose = Some((t_ms, q));
                let mirror = Message::Pose { t_ms, q };
                self.broadcast(&mut out, &mirror, now, |r| r != Role::Headset);
            }
            Message::Biometric { t_ms, pulse_bpm } if role == Role::Headset => {
                for trig in self.monitor.push(t_ms, pulse_bpm) {
                    self.write_log(LogRecord {
                        t_recv_ms: now,
                        direction: LogDirection::Internal,
                        peer: None,
                        peer_role: None,
                        msg: Message::Cmd(trig.action.clone()),
                    });
                    self.apply(&mut out, None, trig.action, now);
                }
            }
            Message::CueAck { .. } if role == Role::Headset => {}
            m @ (Message::Cmd(_) | Message::Pose { .. } | Message::Biometric { .. } | Message::CueAck { .. }) => {
                let text = format!("{} may not send `{}`", role.as_str(), m.type_name());
                self.send(&mut out, peer, Message::error("forbidden", text), false, now)
            }
            other => {
                let text = format!("clients do not send `{}`", other.type_name());
                self.send(&mut out, peer, Message::error("unexpected_message", text), false, now)
            }
        }
        out
    }

    fn handshake(&mut self, out: &mut Vec<Outbound>, peer: PeerId, msg: Message, now: i64) {
        let Message::Hello { role, session_id, .. } = msg else {
            self.send(out, peer, Message::error("handshake_required", "first message must be hello"), true, now);
            return;
        };
        if session_id.as_deref().is_some_and(|id| id != self.cfg.session_id) {
            self.send(out, peer, Message::error("unknown_session", "no such session"), true, now);
            return;
        }
        let taken = role != Role::Observer && self.joined().iter().any(|&(_, r)| r == role);
        if taken {
            let text = format!("a {} is already connected", role.as_str());
            self.send(out, peer, Message::error("role_taken", text), true, now);
            return;
        }
        self.peers.insert(peer, Some(role));
        let welcome = Message::Welcome {
            session_id: self.cfg.session_id.clone(),
            server_time_ms: now,
            state: self.session.state(),
        };
        self.send(out, peer, welcome, false, now);
        let snap = self.snapshot(now);
        self.send(out, peer, snap, false, now);
        if role != Role::Headset {
            if let Some((t_ms, q)) = self.latest_pose {
                self.send(out, peer, Message::Pose { t_ms, q }, false, now);
            }
        }
    }

    /// Advances the session clock: fires due cues and sends heartbeats.
    pub fn tick(&mut self, now: i64) -> Vec<Outbound> {
        let mut out = Vec::new();
        let events = self.session.tick(now);
        self.publish(&mut out, events, now);
        let running = matches!(self.session.state(), crate::session::SessionState::Running { .. });
        if running
            && self.cfg.heartbeat_ms > 0
            && now.saturating_sub(self.last_heartbeat) >= self.cfg.heartbeat_ms
        {
            let snap = self.snapshot(now);
            self.broadcast(&mut out, &snap, now, |_| true);
            self.last_heartbeat = now;
        }
        out
    }
}

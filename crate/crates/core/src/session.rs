//! Session state machine and cue scheduler.
//!
//! The session never reads a clock. Every transition takes the caller's
//! `now_ms`, so a recorded command/tick sequence replays to the same events.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::study::{canonicalize_cue, validate_cue, Cue, StudyConfig, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Loaded,
    /// Position is `now - start_anchor_ms`.
    Running { start_anchor_ms: i64 },
    Paused { position_ms: i64 },
    Completed,
}

impl SessionState {
    pub fn name(&self) -> &'static str {
        match self {
            SessionState::Loaded => "loaded",
            SessionState::Running { .. } => "running",
            SessionState::Paused { .. } => "paused",
            SessionState::Completed => "completed",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Start,
    Pause,
    Resume,
    Seek { to_ms: i64 },
    Stop,
    InjectCue(Cue),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Start => "start",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Seek { .. } => "seek",
            Command::Stop => "stop",
            Command::InjectCue(_) => "inject_cue",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    StateChanged(SessionState),
    CueFired { cue: Cue, position_ms: i64 },
    CueSkipped(String),
    SessionCompleted,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("cannot {command} while {state}")]
    InvalidTransition { state: &'static str, command: &'static str },
    #[error("seek target {to_ms} outside [0, {duration_ms}]")]
    SeekOutOfRange { to_ms: i64, duration_ms: i64 },
    #[error("cue at {at_ms} is before the current position {position_ms}")]
    InjectInPast { at_ms: i64, position_ms: i64 },
    #[error("cue id `{0}` already scheduled")]
    DuplicateCueId(String),
    #[error("invalid cue: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    InvalidCue(Vec<Violation>),
}

impl CommandError {
    pub fn code(&self) -> &'static str {
        match self {
            CommandError::InvalidTransition { .. } => "invalid_transition",
            CommandError::SeekOutOfRange { .. } => "seek_out_of_range",
            CommandError::InjectInPast { .. } => "inject_in_past",
            CommandError::DuplicateCueId(_) => "duplicate_cue_id",
            CommandError::InvalidCue(_) => "invalid_cue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("study config is not canonical")]
    NotCanonical,
    #[error("study config has violations: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    config: StudyConfig,
    state: SessionState,
    fired: BTreeSet<String>,
    skipped: BTreeSet<String>,
    injected: Vec<Cue>,
    /// Config and injected cues merged in `(at_ms, id)` order.
    timeline: Vec<Cue>,
}

impl Session {
    pub fn new(config: StudyConfig) -> Result<Self, SessionError> {
        let violations = crate::study::validate_study(&config);
        if !violations.is_empty() {
            return Err(SessionError::Invalid(violations));
        }
        if !config.is_canonical() {
            return Err(SessionError::NotCanonical);
        }
        let timeline = config.cues.clone();
        Ok(Self {
            config,
            state: SessionState::Loaded,
            fired: BTreeSet::new(),
            skipped: BTreeSet::new(),
            injected: Vec::new(),
            timeline,
        })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn fired(&self) -> &BTreeSet<String> {
        &self.fired
    }

    pub fn skipped(&self) -> &BTreeSet<String> {
        &self.skipped
    }

    pub fn injected(&self) -> &[Cue] {
        &self.injected
    }

    /// Every scheduled cue, config and injected, in firing order.
    pub fn timeline(&self) -> &[Cue] {
        &self.timeline
    }

    pub fn duration_ms(&self) -> i64 {
        self.config.media.duration_ms
    }

    /// Session position at wall time `now_ms`, clamped to the media length.
    pub fn position_at(&self, now_ms: i64) -> i64 {
        match self.state {
            SessionState::Loaded => 0,
            SessionState::Running { start_anchor_ms } => {
                (now_ms - start_anchor_ms).clamp(0, self.duration_ms())
            }
            SessionState::Paused { position_ms } => position_ms,
            SessionState::Completed => self.duration_ms(),
        }
    }

    fn is_pending(&self, id: &str) -> bool {
        !self.fired.contains(id) && !self.skipped.contains(id)
    }

    fn invalid(&self, cmd: &Command) -> CommandError {
        CommandError::InvalidTransition { state: self.state.name(), command: cmd.name() }
    }

    /// Applies a researcher command. Cues that fell due since the last tick
    /// fire first, so results do not depend on how often the caller ticks.
    /// On error the session is unchanged.
    pub fn apply_command(&mut self, cmd: Command, now_ms: i64) -> Result<Vec<Event>, CommandError> {
        let mut next = self.clone();
        let mut events = next.tick(now_ms);
        events.extend(next.apply_now(cmd, now_ms)?);
        *self = next;
        Ok(events)
    }

    fn apply_now(&mut self, cmd: Command, now_ms: i64) -> Result<Vec<Event>, CommandError> {
        let position = self.position_at(now_ms);
        match (&cmd, self.state) {
            (Command::Start, SessionState::Loaded) => {
                self.state = SessionState::Running { start_anchor_ms: now_ms };
                Ok(vec![Event::StateChanged(self.state)])
            }
            (Command::Pause, SessionState::Running { .. }) => {
                self.state = SessionState::Paused { position_ms: position };
                Ok(vec![Event::StateChanged(self.state)])
            }
            (Command::Resume, SessionState::Paused { position_ms }) => {
                self.state = SessionState::Running { start_anchor_ms: now_ms - position_ms };
                Ok(vec![Event::StateChanged(self.state)])
            }
            (Command::Stop, SessionState::Loaded | SessionState::Running { .. } | SessionState::Paused { .. }) => {
                self.state = SessionState::Completed;
                Ok(vec![Event::StateChanged(self.state), Event::SessionCompleted])
            }
            (&Command::Seek { to_ms }, SessionState::Running { .. } | SessionState::Paused { .. }) => {
                if !(0..=self.duration_ms()).contains(&to_ms) {
                    return Err(CommandError::SeekOutOfRange { to_ms, duration_ms: self.duration_ms() });
                }
                let mut events = Vec::new();
                if to_ms > position {
                    let passed: Vec<String> = self
                        .timeline
                        .iter()
                        .filter(|c| c.at_ms > position && c.at_ms <= to_ms && self.is_pending(&c.id))
                        .map(|c| c.id.clone())
                        .collect();
                    for id in passed {
                        self.skipped.insert(id.clone());
                        events.push(Event::CueSkipped(id));
                    }
                }
                self.state = match self.state {
                    SessionState::Running { .. } => SessionState::Running { start_anchor_ms: now_ms - to_ms },
                    _ => SessionState::Paused { position_ms: to_ms },
                };
                events.push(Event::StateChanged(self.state));
                Ok(events)
            }
            (Command::InjectCue(cue), SessionState::Loaded | SessionState::Running { .. } | SessionState::Paused { .. }) => {
                let cue = canonicalize_cue(cue.clone());
                let violations = validate_cue(&cue, self.duration_ms());
                if !violations.is_empty() {
                    return Err(CommandError::InvalidCue(violations));
                }
                if cue.at_ms < position {
                    return Err(CommandError::InjectInPast { at_ms: cue.at_ms, position_ms: position });
                }
                if self.timeline.iter().any(|c| c.id == cue.id) {
                    return Err(CommandError::DuplicateCueId(cue.id));
                }
                let at = self.timeline.partition_point(|c| c.schedule_key() < cue.schedule_key());
                self.timeline.insert(at, cue.clone());
                self.injected.push(cue);
                Ok(Vec::new())
            }
            _ => Err(self.invalid(&cmd)),
        }
    }

    /// Fires every pending cue due at the current position. No-op unless
    /// running. Reaching the end of the media completes the session.
    pub fn tick(&mut self, now_ms: i64) -> Vec<Event> {
        let SessionState::Running { start_anchor_ms } = self.state else {
            return Vec::new();
        };
        let raw = now_ms - start_anchor_ms;
        let position = raw.clamp(0, self.duration_ms());
        let due: Vec<Cue> = self
            .timeline
            .iter()
            .take_while(|c| c.at_ms <= position)
            .filter(|c| self.is_pending(&c.id))
            .cloned()
            .collect();
        let mut events = Vec::with_capacity(due.len());
        for cue in due {
            self.fired.insert(cue.id.clone());
            events.push(Event::CueFired { cue, position_ms: position });
        }
        if raw >= self.duration_ms() {
            self.state = SessionState::Completed;
            events.push(Event::StateChanged(self.state));
            events.push(Event::SessionCompleted);
        }
        events
    }
}

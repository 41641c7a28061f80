//! Orchestration toolkit for 360-degree video studies: study configs, the
//! cue scheduler, the wire protocol, gaze analytics, accessibility cues and
//! a headless headset simulator.

mod fields;

pub mod access;
pub mod analysis;
pub mod biometric;
pub mod geom;
pub mod gaze;
pub mod hub;
pub mod log;
pub mod loopback;
pub mod media;
pub mod protocol;
pub mod session;
pub mod sim;
pub mod study;

pub use geom::{wrap_yaw, Direction, Quat, Vec3};
pub use protocol::{decode, encode, Message, ProtocolError, Role};
pub use session::{Command, CommandError, Event, Session, SessionState};
pub use study::{canonicalize, parse_study, validate_study, Cue, CueKind, ParseError, StudyConfig, Violation};

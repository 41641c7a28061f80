//! Wire protocol between the orchestrator, researcher consoles and headsets.
//!
//! Every message is a single-line JSON object carrying a `"type"`
//! discriminator and `"v": 1`. Over WebSocket each text frame holds one
//! message; on raw byte streams messages are length-prefixed (see
//! [`frame`]).

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::fields::{FieldError, Fields};
use crate::geom::Quat;
use crate::session::{Command, SessionState};
use crate::study::Cue;

pub const PROTOCOL_VERSION: i64 = 1;
/// Largest payload accepted by [`frame`] and [`FrameDecoder`].
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;
const QUAT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Researcher,
    Headset,
    Observer,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Researcher => "researcher",
            Role::Headset => "headset",
            Role::Observer => "observer",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "researcher" => Some(Role::Researcher),
            "headset" => Some(Role::Headset),
            "observer" => Some(Role::Observer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { role: Role, session_id: Option<String>, protocol_version: i64 },
    Welcome { session_id: String, server_time_ms: i64, state: SessionState },
    Cmd(Command),
    /// Session snapshot. `fired`/`skipped` let a console rebuild its
    /// timeline after reconnecting or after a seek.
    State { state: SessionState, position_ms: i64, fired: Vec<String>, skipped: Vec<String> },
    /// A fired cue, with the session position it fired at when known.
    Cue { cue: Cue, position_ms: Option<i64> },
    CueAck { cue_id: String, t_ms: i64 },
    Pose { t_ms: i64, q: Quat },
    Biometric { t_ms: i64, pulse_bpm: f64 },
    Ping { t0_ms: i64 },
    Pong { t0_ms: i64, server_time_ms: i64 },
    Error { code: String, message: String },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Welcome { .. } => "welcome",
            Message::Cmd(_) => "command",
            Message::State { .. } => "state",
            Message::Cue { .. } => "cue",
            Message::CueAck { .. } => "cue_ack",
            Message::Pose { .. } => "pose",
            Message::Biometric { .. } => "biometric",
            Message::Ping { .. } => "ping",
            Message::Pong { .. } => "pong",
            Message::Error { .. } => "error",
        }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        Message::Error { code: code.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("bad JSON: {0}")]
    BadJson(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("unsupported protocol version {0}")]
    BadVersion(i64),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("wrong type for field `{0}`")]
    WrongType(String),
    #[error("invalid value for field `{0}`")]
    InvalidValue(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::BadJson(_) => "bad_json",
            ProtocolError::UnknownType(_) => "unknown_type",
            ProtocolError::BadVersion(_) => "bad_version",
            ProtocolError::MissingField(_) => "missing_field",
            ProtocolError::WrongType(_) => "wrong_type",
            ProtocolError::InvalidValue(_) => "invalid_value",
        }
    }
}

impl From<FieldError> for ProtocolError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Missing(p) => ProtocolError::MissingField(p),
            FieldError::WrongType(p) => ProtocolError::WrongType(p),
        }
    }
}

impl From<crate::study::ParseError> for ProtocolError {
    fn from(e: crate::study::ParseError) -> Self {
        use crate::study::ParseError;
        match e {
            ParseError::MalformedJson(m) => ProtocolError::BadJson(m),
            ParseError::MissingField(p) => ProtocolError::MissingField(p),
            ParseError::WrongType(p) => ProtocolError::WrongType(p),
        }
    }
}

pub(crate) fn state_json(state: SessionState) -> Value {
    match state {
        SessionState::Loaded => json!({ "kind": "loaded" }),
        SessionState::Running { start_anchor_ms } => {
            json!({ "kind": "running", "start_anchor_ms": start_anchor_ms })
        }
        SessionState::Paused { position_ms } => json!({ "kind": "paused", "position_ms": position_ms }),
        SessionState::Completed => json!({ "kind": "completed" }),
    }
}

fn parse_state(f: &Fields<'_>) -> Result<SessionState, ProtocolError> {
    Ok(match f.str("kind")? {
        "loaded" => SessionState::Loaded,
        "running" => SessionState::Running { start_anchor_ms: f.i64("start_anchor_ms")? },
        "paused" => SessionState::Paused { position_ms: f.i64("position_ms")? },
        "completed" => SessionState::Completed,
        _ => return Err(ProtocolError::InvalidValue(f.path_of("kind"))),
    })
}

fn command_fields(cmd: &Command, obj: &mut Map<String, Value>) {
    obj.insert("action".into(), json!(cmd.name()));
    match cmd {
        Command::Seek { to_ms } => {
            obj.insert("to_ms".into(), json!(to_ms));
        }
        Command::InjectCue(cue) => {
            obj.insert("cue".into(), cue.to_json());
        }
        Command::Start | Command::Pause | Command::Resume | Command::Stop => {}
    }
}

fn parse_command(f: &Fields<'_>) -> Result<Command, ProtocolError> {
    Ok(match f.str("action")? {
        "start" => Command::Start,
        "pause" => Command::Pause,
        "resume" => Command::Resume,
        "stop" => Command::Stop,
        "seek" => Command::Seek { to_ms: f.i64("to_ms")? },
        "inject_cue" => Command::InjectCue(Cue::from_fields(&f.obj("cue")?)?),
        _ => return Err(ProtocolError::InvalidValue("action".into())),
    })
}

/// Parses a bare command object such as `{"action": "seek", "to_ms": 500}`.
pub(crate) fn command_from_value(value: &Value) -> Result<Command, ProtocolError> {
    parse_command(&Fields::root(value)?)
}

fn to_value(m: &Message) -> Value {
    let mut obj = Map::new();
    obj.insert("type".into(), json!(m.type_name()));
    obj.insert("v".into(), json!(PROTOCOL_VERSION));
    let mut put = |k: &str, v: Value| {
        obj.insert(k.to_string(), v);
    };
    match m {
        Message::Hello { role, session_id, protocol_version } => {
            put("role", json!(role.as_str()));
            if let Some(id) = session_id {
                put("session_id", json!(id));
            }
            put("protocol_version", json!(protocol_version));
        }
        Message::Welcome { session_id, server_time_ms, state } => {
            put("session_id", json!(session_id));
            put("server_time_ms", json!(server_time_ms));
            put("state", state_json(*state));
        }
        Message::Cmd(cmd) => command_fields(cmd, &mut obj),
        Message::State { state, position_ms, fired, skipped } => {
            put("state", state_json(*state));
            put("position_ms", json!(position_ms));
            put("fired", json!(fired));
            put("skipped", json!(skipped));
        }
        Message::Cue { cue, position_ms } => {
            put("cue", cue.to_json());
            if let Some(p) = position_ms {
                put("position_ms", json!(p));
            }
        }
        Message::CueAck { cue_id, t_ms } => {
            put("cue_id", json!(cue_id));
            put("t_ms", json!(t_ms));
        }
        Message::Pose { t_ms, q } => {
            put("t_ms", json!(t_ms));
            put("q", json!(q.to_array()));
        }
        Message::Biometric { t_ms, pulse_bpm } => {
            put("t_ms", json!(t_ms));
            put("pulse_bpm", json!(pulse_bpm));
        }
        Message::Ping { t0_ms } => put("t0_ms", json!(t0_ms)),
        Message::Pong { t0_ms, server_time_ms } => {
            put("t0_ms", json!(t0_ms));
            put("server_time_ms", json!(server_time_ms));
        }
        Message::Error { code, message } => {
            put("code", json!(code));
            put("message", json!(message));
        }
    }
    Value::Object(obj)
}

/// Encodes a message as single-line JSON text.
pub fn encode(m: &Message) -> String {
    to_value(m).to_string()
}

/// Encodes a message as a JSON value, e.g. for embedding in a log record.
pub fn encode_value(m: &Message) -> Value {
    to_value(m)
}

fn parse_quat(f: &Fields<'_>) -> Result<Quat, ProtocolError> {
    let items = f.array("q")?;
    let wrong = || ProtocolError::WrongType(f.path_of("q"));
    if items.len() != 4 {
        return Err(wrong());
    }
    let mut a = [0.0; 4];
    for (slot, v) in a.iter_mut().zip(items) {
        *slot = v.as_f64().ok_or_else(wrong)?;
    }
    let q = Quat::from_array(a);
    if (q.norm() - 1.0).abs() <= QUAT_NORM_TOLERANCE {
        return Ok(q);
    }
    q.normalized().ok_or_else(|| ProtocolError::InvalidValue(f.path_of("q")))
}

/// Decodes a message already parsed as JSON.
pub fn decode_value(value: &Value) -> Result<Message, ProtocolError> {
    let f = Fields::root(value)?;
    let kind = f.str("type")?;
    let version = f.i64("v")?;
    if version != PROTOCOL_VERSION {
        return Err(ProtocolError::BadVersion(version));
    }
    let m = match kind {
        "hello" => {
            let role = Role::parse(f.str("role")?)
                .ok_or_else(|| ProtocolError::InvalidValue("role".into()))?;
            let protocol_version = f.i64("protocol_version")?;
            if protocol_version != PROTOCOL_VERSION {
                return Err(ProtocolError::BadVersion(protocol_version));
            }
            Message::Hello {
                role,
                session_id: f.opt_str("session_id")?.map(str::to_string),
                protocol_version,
            }
        }
        "welcome" => Message::Welcome {
            session_id: f.str("session_id")?.to_string(),
            server_time_ms: f.i64("server_time_ms")?,
            state: parse_state(&f.obj("state")?)?,
        },
        "command" => Message::Cmd(parse_command(&f)?),
        "state" => Message::State {
            state: parse_state(&f.obj("state")?)?,
            position_ms: f.i64("position_ms")?,
            fired: f.strings("fired")?,
            skipped: f.strings("skipped")?,
        },
        "cue" => Message::Cue {
            cue: Cue::from_fields(&f.obj("cue")?)?,
            position_ms: f.opt_i64("position_ms")?,
        },
        "cue_ack" => Message::CueAck { cue_id: f.str("cue_id")?.to_string(), t_ms: f.i64("t_ms")? },
        "pose" => Message::Pose { t_ms: f.i64("t_ms")?, q: parse_quat(&f)? },
        "biometric" => Message::Biometric { t_ms: f.i64("t_ms")?, pulse_bpm: f.f64("pulse_bpm")? },
        "ping" => Message::Ping { t0_ms: f.i64("t0_ms")? },
        "pong" => Message::Pong { t0_ms: f.i64("t0_ms")?, server_time_ms: f.i64("server_time_ms")? },
        "error" => Message::Error {
            code: f.str("code")?.to_string(),
            message: f.opt_str("message")?.unwrap_or_default().to_string(),
        },
        other => return Err(ProtocolError::UnknownType(other.to_string())),
    };
    Ok(m)
}

/// Decodes one message. Extra keys are ignored.
pub fn decode(text: &[u8]) -> Result<Message, ProtocolError> {
    let value: Value = serde_json::from_slice(text).map_err(|e| ProtocolError::BadJson(e.to_string()))?;
    decode_value(&value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("frame declares {declared} bytes but only {available} are available")]
    Truncated { declared: usize, available: usize },
}

/// Prefixes `payload` with its length as a 4-byte big-endian integer.
pub fn frame(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

fn declared_len(header: [u8; 4]) -> Result<usize, FrameError> {
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::Oversize(len));
    }
    Ok(len)
}

/// Splits one frame off the front of `buf`, returning the payload and the
/// number of bytes consumed.
pub fn unframe(buf: &[u8]) -> Result<(&[u8], usize), FrameError> {
    let Some(header) = buf.get(..4) else {
        return Err(FrameError::Truncated { declared: 4, available: buf.len() });
    };
    let len = declared_len(header.try_into().expect("4 bytes"))?;
    let body = &buf[4..];
    if body.len() < len {
        return Err(FrameError::Truncated { declared: len, available: body.len() });
    }
    Ok((&body[..len], 4 + len))
}

/// Reassembles frames from a byte stream delivered in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete payload, `Ok(None)` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, FrameError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = declared_len(self.buf[..4].try_into().expect("4 bytes"))?;
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let payload = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(payload))
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Result of one ping/pong exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockSync {
    /// Add to a client timestamp to get server time.
    pub offset_ms: f64,
    pub rtt_ms: i64,
}

/// Offset estimate assuming symmetric one-way delays.
pub fn estimate_offset(t0_ms: i64, server_time_ms: i64, t1_ms: i64) -> ClockSync {
    let rtt_ms = t1_ms - t0_ms;
    let offset_ms = server_time_ms as f64 - (t0_ms as f64 + rtt_ms as f64 / 2.0);
    ClockSync { offset_ms, rtt_ms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Direction;

    #[test]
    fn encode_pose() {
        let v: Value = serde_json::from_str(&encode(&Message::Pose { t_ms: 10, q: Quat::IDENTITY })).unwrap();
        assert_eq!(v, json!({"type": "pose", "v": 1, "t_ms": 10, "q": [1.0, 0.0, 0.0, 0.0]}));
        assert!(encode(&Message::Pose { t_ms: 10, q: Quat::IDENTITY }).contains("[1.0,0.0,0.0,0.0]"));
    }

    #[test]
    fn encode_ping() {
        let v: Value = serde_json::from_str(&encode(&Message::Ping { t0_ms: 100 })).unwrap();
        assert_eq!(v, json!({"type": "ping", "v": 1, "t0_ms": 100}));
    }

    #[test]
    fn decode_pose_with_integer_components() {
        let m = decode(br#"{"type":"pose","v":1,"t_ms":10,"q":[1,0,0,0]}"#).unwrap();
        assert_eq!(m, Message::Pose { t_ms: 10, q: Quat::IDENTITY });
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(br#"{"type":"warp","v":1}"#), Err(ProtocolError::UnknownType("warp".into())));
        assert_eq!(
            decode(br#"{"type":"pose","v":2,"t_ms":10,"q":[1,0,0,0]}"#),
            Err(ProtocolError::BadVersion(2))
        );
        assert_eq!(decode(br#"{"type":"pose","v":1,"q":[1,0,0,0]}"#), Err(ProtocolError::MissingField("t_ms".into())));
        assert_eq!(decode(br#"{"v":1}"#), Err(ProtocolError::MissingField("type".into())));
        assert_eq!(decode(br#"{"type":"ping"}"#), Err(ProtocolError::MissingField("v".into())));
        assert!(matches!(decode(b"{nope"), Err(ProtocolError::BadJson(_))));
        assert!(matches!(decode(b"\xff\xfe"), Err(ProtocolError::BadJson(_))));
        assert_eq!(
            decode(br#"{"type":"pose","v":1,"t_ms":1,"q":[0,0,0,0]}"#),
            Err(ProtocolError::InvalidValue("q".into()))
        );
        assert_eq!(
            decode(br#"{"type":"hello","v":1,"role":"admin","protocol_version":1}"#),
            Err(ProtocolError::InvalidValue("role".into()))
        );
    }

    #[test]
    fn decode_ignores_unknown_keys() {
        let m = decode(br#"{"type":"ping","v":1,"t0_ms":5,"extra":{"deep":[1]}}"#).unwrap();
        assert_eq!(m, Message::Ping { t0_ms: 5 });
    }

    #[test]
    fn pose_is_renormalized() {
        let Message::Pose { q, .. } = decode(br#"{"type":"pose","v":1,"t_ms":1,"q":[2,0,0,0]}"#).unwrap() else {
            panic!()
        };
        assert_eq!(q, Quat::IDENTITY);
    }

    #[test]
    fn command_wire_shape() {
        let v = encode_value(&Message::Cmd(Command::Pause));
        assert_eq!(v, json!({"type": "command", "v": 1, "action": "pause"}));
        let inject = Message::Cmd(Command::InjectCue(
            Cue::text("x", 2500, 1000, "look left").with_anchor(Direction::new(-90.0, 0.0)),
        ));
        let v = encode_value(&inject);
        assert_eq!(v["action"], "inject_cue");
        assert_eq!(v["cue"]["body"], "look left");
        assert_eq!(v["cue"]["anchor"]["yaw_deg"], -90.0);
        assert_eq!(decode(encode(&inject).as_bytes()).unwrap(), inject);
    }

    #[test]
    fn frame_layout() {
        assert_eq!(frame(b"{}").unwrap(), [0, 0, 0, 2, 0x7B, 0x7D]);
        let framed = frame(b"{}").unwrap();
        assert_eq!(unframe(&framed).unwrap(), (&b"{}"[..], 6));
    }

    #[test]
    fn unframe_truncated() {
        let mut buf = vec![0, 0, 0, 20];
        buf.extend_from_slice(b"hello");
        assert_eq!(unframe(&buf), Err(FrameError::Truncated { declared: 20, available: 5 }));
        assert!(matches!(unframe(&[0, 0]), Err(FrameError::Truncated { .. })));
    }

    #[test]
    fn oversize_frames_rejected() {
        let big = vec![b' '; MAX_FRAME_LEN + 1];
        assert_eq!(frame(&big), Err(FrameError::Oversize(MAX_FRAME_LEN + 1)));
        assert!(frame(&big[..MAX_FRAME_LEN]).is_ok());
        let header = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes();
        assert!(matches!(unframe(&header), Err(FrameError::Oversize(_))));
        let mut dec = FrameDecoder::new();
        dec.push(&header);
        assert!(matches!(dec.next_frame(), Err(FrameError::Oversize(_))));
    }

    #[test]
    fn offset_examples() {
        assert_eq!(estimate_offset(100, 1050, 140), ClockSync { offset_ms: 930.0, rtt_ms: 40 });
        assert_eq!(estimate_offset(100, 100, 100), ClockSync { offset_ms: 0.0, rtt_ms: 0 });
    }

    #[test]
    fn offset_exact_under_symmetric_delay() {
        // client clock = server clock - skew; equal one-way delays
        for (skew, delay, server_proc) in [(930, 20, 0), (-5000, 7, 4), (0, 100, 50), (123_456, 1, 2)] {
            for t0 in [0i64, 100, 999_999] {
                let server_recv = t0 + skew + delay;
                let server_time = server_recv + server_proc / 2;
                // processing delay split evenly keeps the path symmetric
                let t1 = t0 + 2 * delay + server_proc;
                let est = estimate_offset(t0, server_time, t1);
                assert_eq!(est.offset_ms, skew as f64);
                assert_eq!(est.rtt_ms, 2 * delay + server_proc);
            }
        }
    }
}

//! Study configuration: the JSON document that drives a session.
//!
//! Parsing only checks document shape and fills defaults. Semantic problems
//! are collected by [`validate_study`] so a researcher sees every problem at
//! once. [`canonicalize`] puts a valid config into the form the scheduler
//! expects.

use std::collections::HashSet;
use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

use crate::fields::{FieldError, FieldResult, Fields};
use crate::geom::Direction;

pub const STUDY_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("wrong type for field `{0}`")]
    WrongType(String),
}

impl From<FieldError> for ParseError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Missing(p) => ParseError::MissingField(p),
            FieldError::WrongType(p) => ParseError::WrongType(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Equirectangular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaRef {
    pub url: String,
    pub duration_ms: i64,
    pub projection: Projection,
    pub width_px: i64,
    pub height_px: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AudioMode {
    Mono,
    Spatial(Direction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub id: String,
    pub url: String,
    pub start_ms: i64,
    pub gain: f64,
    pub mode: AudioMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CueKind {
    Text { body: String },
    Arrow { target: Direction },
    Haptic { target: Direction },
}

impl CueKind {
    pub fn name(&self) -> &'static str {
        match self {
            CueKind::Text { .. } => "text",
            CueKind::Arrow { .. } => "arrow",
            CueKind::Haptic { .. } => "haptic",
        }
    }
}

/// A timed stimulus fired at a session position.
#[derive(Debug, Clone, PartialEq)]
pub struct Cue {
    pub id: String,
    pub at_ms: i64,
    pub duration_ms: i64,
    pub kind: CueKind,
    /// Where the cue is shown. Defaults to straight ahead.
    pub anchor: Direction,
}

impl Cue {
    pub fn text(id: impl Into<String>, at_ms: i64, duration_ms: i64, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            at_ms,
            duration_ms,
            kind: CueKind::Text { body: body.into() },
            anchor: Direction::FORWARD,
        }
    }

    pub fn with_anchor(mut self, anchor: Direction) -> Self {
        self.anchor = anchor;
        self
    }

    /// Scheduling order: ascending `(at_ms, id)`.
    pub fn schedule_key(&self) -> (i64, &str) {
        (self.at_ms, self.id.as_str())
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "id": self.id,
            "at_ms": self.at_ms,
            "duration_ms": self.duration_ms,
            "kind": self.kind.name(),
            "anchor": direction_json(self.anchor),
        });
        match &self.kind {
            CueKind::Text { body } => v["body"] = json!(body),
            CueKind::Arrow { target } | CueKind::Haptic { target } => {
                v["target"] = direction_json(*target)
            }
        }
        v
    }

    pub fn from_json(value: &Value) -> Result<Self, ParseError> {
        Ok(parse_cue(&Fields::root(value)?)?)
    }

    pub(crate) fn from_fields(f: &Fields<'_>) -> FieldResult<Self> {
        parse_cue(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub version: i64,
    pub session_label: String,
    pub media: MediaRef,
    pub audio_tracks: Vec<AudioTrack>,
    pub cues: Vec<Cue>,
}

impl StudyConfig {
    /// Serializes back to the study file schema (single line).
    pub fn to_json(&self) -> String {
        self.to_value().to_string()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("value serializes")
    }

    pub fn to_value(&self) -> Value {
        json!({
            "version": self.version,
            "session_label": self.session_label,
            "media": {
                "url": self.media.url,
                "duration_ms": self.media.duration_ms,
                "projection": "equirectangular",
                "width_px": self.media.width_px,
                "height_px": self.media.height_px,
            },
            "audio_tracks": self.audio_tracks.iter().map(audio_json).collect::<Vec<_>>(),
            "cues": self.cues.iter().map(Cue::to_json).collect::<Vec<_>>(),
        })
    }

    pub fn cue(&self, id: &str) -> Option<&Cue> {
        self.cues.iter().find(|c| c.id == id)
    }

    /// True when cues are in schedule order and every direction is wrapped.
    pub fn is_canonical(&self) -> bool {
        let sorted = self.cues.windows(2).all(|w| w[0].schedule_key() <= w[1].schedule_key());
        sorted && self.directions().all(|d| d.is_canonical())
    }

    fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        let cue_dirs = self.cues.iter().flat_map(cue_directions);
        let audio_dirs = self.audio_tracks.iter().filter_map(|a| match a.mode {
            AudioMode::Spatial(d) => Some(d),
            AudioMode::Mono => None,
        });
        cue_dirs.chain(audio_dirs)
    }
}

fn cue_directions(c: &Cue) -> impl Iterator<Item = Direction> {
    let target = match c.kind {
        CueKind::Arrow { target } | CueKind::Haptic { target } => Some(target),
        CueKind::Text { .. } => None,
    };
    std::iter::once(c.anchor).chain(target)
}

pub(crate) fn direction_json(d: Direction) -> Value {
    json!({ "yaw_deg": d.yaw_deg, "pitch_deg": d.pitch_deg })
}

fn audio_json(a: &AudioTrack) -> Value {
    let mut v = json!({
        "id": a.id,
        "url": a.url,
        "start_ms": a.start_ms,
        "gain": a.gain,
    });
    match a.mode {
        AudioMode::Mono => v["mode"] = json!("mono"),
        AudioMode::Spatial(anchor) => {
            v["mode"] = json!("spatial");
            v["anchor"] = direction_json(anchor);
        }
    }
    v
}

pub(crate) fn parse_direction(f: &Fields<'_>) -> FieldResult<Direction> {
    Ok(Direction::new(f.f64("yaw_deg")?, f.f64("pitch_deg")?))
}

fn parse_cue(f: &Fields<'_>) -> FieldResult<Cue> {
    let id = f.str("id")?.to_string();
    let at_ms = f.i64("at_ms")?;
    let duration_ms = f.i64("duration_ms")?;
    let kind = match f.str("kind")? {
        "text" => CueKind::Text { body: f.str("body")?.to_string() },
        "arrow" => CueKind::Arrow { target: parse_direction(&f.obj("target")?)? },
        "haptic" => CueKind::Haptic { target: parse_direction(&f.obj("target")?)? },
        _ => return Err(FieldError::WrongType(f.path_of("kind"))),
    };
    let anchor = match f.opt_obj("anchor")? {
        Some(a) => parse_direction(&a)?,
        None => Direction::FORWARD,
    };
    Ok(Cue { id, at_ms, duration_ms, kind, anchor })
}

fn parse_audio(f: &Fields<'_>) -> FieldResult<AudioTrack> {
    let id = f.str("id")?.to_string();
    let url = f.str("url")?.to_string();
    let start_ms = f.opt_i64("start_ms")?.unwrap_or(0);
    let gain = f.opt_f64("gain")?.unwrap_or(1.0);
    let mode = match f.opt_str("mode")?.unwrap_or("mono") {
        "mono" => AudioMode::Mono,
        "spatial" => AudioMode::Spatial(parse_direction(&f.obj("anchor")?)?),
        _ => return Err(FieldError::WrongType(f.path_of("mode"))),
    };
    Ok(AudioTrack { id, url, start_ms, gain, mode })
}

fn parse_media(f: &Fields<'_>) -> FieldResult<MediaRef> {
    let url = f.str("url")?.to_string();
    let duration_ms = f.i64("duration_ms")?;
    let projection = match f.str("projection")? {
        "equirectangular" => Projection::Equirectangular,
        _ => return Err(FieldError::WrongType(f.path_of("projection"))),
    };
    Ok(MediaRef {
        url,
        duration_ms,
        projection,
        width_px: f.i64("width_px")?,
        height_px: f.i64("height_px")?,
    })
}

/// Parses a study document. Unknown keys are ignored.
pub fn parse_study(text: &[u8]) -> Result<StudyConfig, ParseError> {
    let value: Value =
        serde_json::from_slice(text).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let root = Fields::root(&value)?;
    let version = root.i64("version")?;
    let session_label = root.str("session_label")?.to_string();
    let media = parse_media(&root.obj("media")?)?;
    let audio_tracks = match root.opt_array("audio_tracks")? {
        Some(_) => root.objects("audio_tracks")?.iter().map(parse_audio).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let cues = root.objects("cues")?.iter().map(parse_cue).collect::<Result<_, _>>()?;
    Ok(StudyConfig { version, session_label, media, audio_tracks, cues })
}

/// A semantic problem with a parsed study.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnsupportedVersion(i64),
    NegativeMediaDuration(i64),
    BadMediaDimensions { width_px: i64, height_px: i64 },
    OddMediaWidth(i64),
    DuplicateCueId(String),
    DuplicateAudioId(String),
    CueBeforeStart(String),
    CueAfterMediaEnd(String),
    NonPositiveCueDuration(String),
    EmptyTextBody(String),
    AudioStartOutOfRange(String),
    GainOutOfRange(String),
    /// `owner` is a cue or audio track id, `field` names the direction.
    DirectionOutOfRange { owner: String, field: &'static str },
}

impl Violation {
    /// Stable snake_case name, used in CLI output and protocol errors.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::UnsupportedVersion(_) => "unsupported_version",
            Violation::NegativeMediaDuration(_) => "negative_media_duration",
            Violation::BadMediaDimensions { .. } => "bad_media_dimensions",
            Violation::OddMediaWidth(_) => "odd_media_width",
            Violation::DuplicateCueId(_) => "duplicate_cue_id",
            Violation::DuplicateAudioId(_) => "duplicate_audio_id",
            Violation::CueBeforeStart(_) => "cue_before_start",
            Violation::CueAfterMediaEnd(_) => "cue_after_media_end",
            Violation::NonPositiveCueDuration(_) => "non_positive_cue_duration",
            Violation::EmptyTextBody(_) => "empty_text_body",
            Violation::AudioStartOutOfRange(_) => "audio_start_out_of_range",
            Violation::GainOutOfRange(_) => "gain_out_of_range",
            Violation::DirectionOutOfRange { .. } => "direction_out_of_range",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedVersion(v) => write!(f, "{}: {v}", self.code()),
            Violation::NegativeMediaDuration(d) => write!(f, "{}: {d}", self.code()),
            Violation::BadMediaDimensions { width_px, height_px } => {
                write!(f, "{}: {width_px}x{height_px}", self.code())
            }
            Violation::OddMediaWidth(w) => write!(f, "{}: {w}", self.code()),
            Violation::DirectionOutOfRange { owner, field } => {
                write!(f, "{}: {owner}.{field}", self.code())
            }
            Violation::DuplicateCueId(id)
            | Violation::DuplicateAudioId(id)
            | Violation::CueBeforeStart(id)
            | Violation::CueAfterMediaEnd(id)
            | Violation::NonPositiveCueDuration(id)
            | Violation::EmptyTextBody(id)
            | Violation::AudioStartOutOfRange(id)
            | Violation::GainOutOfRange(id) => write!(f, "{}(\"{id}\")", self.code()),
        }
    }
}

/// Accepts yaw within one wrap of the canonical range; pitch never wraps.
fn direction_in_range(d: Direction) -> bool {
    d.yaw_deg.is_finite()
        && (-540.0..540.0).contains(&d.yaw_deg)
        && (-90.0..=90.0).contains(&d.pitch_deg)
}

/// Checks that a single cue is well formed against a media duration.
pub fn validate_cue(cue: &Cue, media_duration_ms: i64) -> Vec<Violation> {
    let mut out = Vec::new();
    if cue.at_ms < 0 {
        out.push(Violation::CueBeforeStart(cue.id.clone()));
    } else if cue.at_ms > media_duration_ms {
        out.push(Violation::CueAfterMediaEnd(cue.id.clone()));
    }
    if cue.duration_ms <= 0 {
        out.push(Violation::NonPositiveCueDuration(cue.id.clone()));
    }
    match &cue.kind {
        CueKind::Text { body } if body.trim().is_empty() => {
            out.push(Violation::EmptyTextBody(cue.id.clone()))
        }
        CueKind::Arrow { target } | CueKind::Haptic { target } if !direction_in_range(*target) => {
            out.push(Violation::DirectionOutOfRange { owner: cue.id.clone(), field: "target" })
        }
        _ => {}
    }
    if !direction_in_range(cue.anchor) {
        out.push(Violation::DirectionOutOfRange { owner: cue.id.clone(), field: "anchor" });
    }
    out
}

/// Returns every semantic violation; an empty list means the config is valid.
pub fn validate_study(cfg: &StudyConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if cfg.version != STUDY_VERSION {
        out.push(Violation::UnsupportedVersion(cfg.version));
    }
    let media = &cfg.media;
    if media.duration_ms < 0 {
        out.push(Violation::NegativeMediaDuration(media.duration_ms));
    }
    if media.width_px <= 0 || media.height_px <= 0 {
        out.push(Violation::BadMediaDimensions {
            width_px: media.width_px,
            height_px: media.height_px,
        });
    } else if media.width_px % 2 != 0 {
        out.push(Violation::OddMediaWidth(media.width_px));
    }

    let mut seen = HashSet::new();
    for cue in &cfg.cues {
        if !seen.insert(cue.id.as_str()) {
            out.push(Violation::DuplicateCueId(cue.id.clone()));
        }
        out.extend(validate_cue(cue, media.duration_ms));
    }

    let mut seen = HashSet::new();
    for track in &cfg.audio_tracks {
        if !seen.insert(track.id.as_str()) {
            out.push(Violation::DuplicateAudioId(track.id.clone()));
        }
        if !(0..=media.duration_ms).contains(&track.start_ms) {
            out.push(Violation::AudioStartOutOfRange(track.id.clone()));
        }
        if !(0.0..=1.0).contains(&track.gain) {
            out.push(Violation::GainOutOfRange(track.id.clone()));
        }
        if let AudioMode::Spatial(anchor) = track.mode {
            if !direction_in_range(anchor) {
                out.push(Violation::DirectionOutOfRange { owner: track.id.clone(), field: "anchor" });
            }
        }
    }
    out
}

fn canonical_cue(mut cue: Cue) -> Cue {
    cue.anchor = cue.anchor.canonical();
    if let CueKind::Arrow { target } | CueKind::Haptic { target } = &mut cue.kind {
        *target = target.canonical();
    }
    cue
}

/// Sorts cues by `(at_ms, id)` and wraps every yaw into `[-180, 180)`.
pub fn canonicalize(cfg: &StudyConfig) -> StudyConfig {
    let mut out = cfg.clone();
    out.cues = out.cues.into_iter().map(canonical_cue).collect();
    out.cues.sort_by(|a, b| a.schedule_key().cmp(&b.schedule_key()));
    for track in &mut out.audio_tracks {
        if let AudioMode::Spatial(anchor) = &mut track.mode {
            *anchor = anchor.canonical();
        }
    }
    out
}

/// Canonical form of a cue that is added to a running session.
pub fn canonicalize_cue(cue: Cue) -> Cue {
    canonical_cue(cue)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{"version":1,"session_label":"s","media":{"url":"v.mp4","duration_ms":60000,"projection":"equirectangular","width_px":3840,"height_px":1920},"audio_tracks":[],"cues":[{"id":"a","at_ms":1000,"duration_ms":3000,"kind":"text","body":"hello"}]}"#;

    fn with_cues(cues: &str) -> String {
        MINIMAL.replace(
            r#"[{"id":"a","at_ms":1000,"duration_ms":3000,"kind":"text","body":"hello"}]"#,
            cues,
        )
    }

    #[test]
    fn minimal_document_parses_with_defaults() {
        let cfg = parse_study(MINIMAL.as_bytes()).unwrap();
        assert_eq!(cfg.cues.len(), 1);
        assert_eq!(cfg.cues[0].anchor, Direction::new(0.0, 0.0));
        assert_eq!(cfg.cues[0].kind, CueKind::Text { body: "hello".into() });
        assert_eq!(cfg.media.projection, Projection::Equirectangular);
        assert!(validate_study(&cfg).is_empty());
    }

    #[test]
    fn missing_version() {
        let text = MINIMAL.replace(r#""version":1,"#, "");
        assert_eq!(
            parse_study(text.as_bytes()),
            Err(ParseError::MissingField("version".into()))
        );
    }

    #[test]
    fn nested_errors_carry_paths() {
        let text = with_cues(r#"[{"id":"a","at_ms":"soon","duration_ms":3000,"kind":"text","body":"x"}]"#);
        assert_eq!(
            parse_study(text.as_bytes()),
            Err(ParseError::WrongType("cues[0].at_ms".into()))
        );
        let text = MINIMAL.replace(r#""url":"v.mp4","#, "");
        assert_eq!(
            parse_study(text.as_bytes()),
            Err(ParseError::MissingField("media.url".into()))
        );
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_study(b"{\"version\":"), Err(ParseError::MalformedJson(_))));
        assert!(matches!(parse_study(b"[]"), Err(ParseError::WrongType(_))));
    }

    #[test]
    fn unknown_keys_ignored() {
        let text = MINIMAL.replace(r#""version":1,"#, r#""version":1,"future":{"x":[1,2]},"#);
        assert!(parse_study(text.as_bytes()).is_ok());
    }

    #[test]
    fn negative_at_parses_then_fails_validation() {
        let text = with_cues(r#"[{"id":"a","at_ms":-5,"duration_ms":3000,"kind":"text","body":"x"}]"#);
        let cfg = parse_study(text.as_bytes()).unwrap();
        assert_eq!(validate_study(&cfg), vec![Violation::CueBeforeStart("a".into())]);
    }

    #[test]
    fn cue_after_media_end() {
        let text = with_cues(r#"[{"id":"a","at_ms":70000,"duration_ms":3000,"kind":"text","body":"x"}]"#);
        let cfg = parse_study(text.as_bytes()).unwrap();
        assert_eq!(validate_study(&cfg), vec![Violation::CueAfterMediaEnd("a".into())]);
    }

    #[test]
    fn duplicate_cue_ids() {
        let text = with_cues(
            r#"[{"id":"a","at_ms":1,"duration_ms":3,"kind":"text","body":"x"},{"id":"a","at_ms":2,"duration_ms":3,"kind":"text","body":"y"}]"#,
        );
        let cfg = parse_study(text.as_bytes()).unwrap();
        assert_eq!(validate_study(&cfg), vec![Violation::DuplicateCueId("a".into())]);
    }

    #[test]
    fn all_violations_reported() {
        let text = r#"{"version":2,"session_label":"s","media":{"url":"v","duration_ms":100,"projection":"equirectangular","width_px":3841,"height_px":1920},
            "audio_tracks":[{"id":"m","url":"a.ogg","gain":1.5,"start_ms":500},{"id":"m","url":"b.ogg","mode":"spatial","anchor":{"yaw_deg":600,"pitch_deg":0}}],
            "cues":[{"id":"a","at_ms":10,"duration_ms":0,"kind":"text","body":"  "},{"id":"h","at_ms":10,"duration_ms":5,"kind":"haptic","target":{"yaw_deg":0,"pitch_deg":91}}]}"#;
        let cfg = parse_study(text.as_bytes()).unwrap();
        let codes: Vec<_> = validate_study(&cfg).iter().map(Violation::code).collect();
        assert_eq!(
            codes,
            [
                "unsupported_version",
                "odd_media_width",
                "non_positive_cue_duration",
                "empty_text_body",
                "direction_out_of_range",
                "audio_start_out_of_range",
                "gain_out_of_range",
                "duplicate_audio_id",
                "direction_out_of_range",
            ]
        );
    }

    #[test]
    fn audio_defaults_and_spatial_mode() {
        let text = MINIMAL.replace(
            r#""audio_tracks":[]"#,
            r#""audio_tracks":[{"id":"m","url":"a.ogg"},{"id":"s","url":"b.ogg","mode":"spatial","anchor":{"yaw_deg":200,"pitch_deg":10}}]"#,
        );
        let cfg = parse_study(text.as_bytes()).unwrap();
        assert_eq!(cfg.audio_tracks[0].gain, 1.0);
        assert_eq!(cfg.audio_tracks[0].mode, AudioMode::Mono);
        assert_eq!(cfg.audio_tracks[0].start_ms, 0);
        let canon = canonicalize(&cfg);
        assert_eq!(canon.audio_tracks[1].mode, AudioMode::Spatial(Direction::new(-160.0, 10.0)));

        let missing = MINIMAL.replace(
            r#""audio_tracks":[]"#,
            r#""audio_tracks":[{"id":"s","url":"b.ogg","mode":"spatial"}]"#,
        );
        assert_eq!(
            parse_study(missing.as_bytes()),
            Err(ParseError::MissingField("audio_tracks[0].anchor".into()))
        );
    }

    #[test]
    fn canonicalize_sorts_and_wraps() {
        let text = with_cues(
            r#"[{"id":"b","at_ms":2000,"duration_ms":3,"kind":"text","body":"x"},{"id":"a","at_ms":1000,"duration_ms":3,"kind":"arrow","target":{"yaw_deg":-200,"pitch_deg":0},"anchor":{"yaw_deg":190,"pitch_deg":5}}]"#,
        );
        let cfg = parse_study(text.as_bytes()).unwrap();
        assert!(!cfg.is_canonical());
        let canon = canonicalize(&cfg);
        assert_eq!(canon.cues[0].id, "a");
        assert_eq!(canon.cues[1].id, "b");
        assert_eq!(canon.cues[0].anchor, Direction::new(-170.0, 5.0));
        assert_eq!(canon.cues[0].kind, CueKind::Arrow { target: Direction::new(160.0, 0.0) });
        assert!(canon.is_canonical());
        assert_eq!(canonicalize(&canon), canon);
    }

    #[test]
    fn serialize_round_trip() {
        let cfg = canonicalize(&parse_study(MINIMAL.as_bytes()).unwrap());
        let again = parse_study(cfg.to_json().as_bytes()).unwrap();
        assert_eq!(again, cfg);
    }
}

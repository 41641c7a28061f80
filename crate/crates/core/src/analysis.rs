//! Offline analysis of a session log: gaze trace replay, AOI dwell, cue
//! visibility and heatmap summaries.
//!
//! Pose timestamps are server-aligned by the headset, so a cue's viewing
//! window starts at the server time it was sent out, not at its nominal
//! session position.

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::fields::Fields;
use crate::gaze::{cue_visibility, dwell_times, heatmap, Aoi, GazeSample, GazeTrace, HeatmapGrid};
use crate::log::{LoadedLog, LogDirection};
use crate::protocol::{Message, Role};
use crate::session::Command;
use crate::study::{parse_direction, Cue, ParseError};

/// A cue as delivered during the session.
#[derive(Debug, Clone, PartialEq)]
pub struct FiredCue {
    pub cue: Cue,
    /// Server time the cue was sent.
    pub sent_ms: i64,
    /// Session position the cue fired at, when reported.
    pub position_ms: Option<i64>,
}

impl FiredCue {
    /// The cue re-anchored on the server clock.
    pub fn on_server_clock(&self) -> Cue {
        Cue { at_ms: self.sent_ms, ..self.cue.clone() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub trace: GazeTrace,
    /// In send order, one entry per cue id.
    pub fired: Vec<FiredCue>,
    /// In order of first report.
    pub skipped: Vec<String>,
    /// `(t_ms, pulse_bpm)` as reported by the headset.
    pub biometrics: Vec<(i64, f64)>,
    /// Commands the session was asked to apply, with server receive time.
    /// Includes rule-triggered commands and rejected ones.
    pub commands: Vec<(i64, Command)>,
    pub corrupt_lines: usize,
}

pub fn replay_trace(log: &LoadedLog) -> Replay {
    let mut samples = Vec::new();
    let mut fired = Vec::new();
    let mut fired_ids = BTreeSet::new();
    let mut skipped = Vec::new();
    let mut skipped_ids = BTreeSet::new();
    let mut biometrics = Vec::new();
    let mut commands = Vec::new();

    for rec in &log.records {
        match (rec.direction, rec.peer_role, &rec.msg) {
            (LogDirection::In, Some(Role::Headset), &Message::Pose { t_ms, q }) => {
                samples.push(GazeSample { t_ms, q });
            }
            (LogDirection::In, Some(Role::Headset), &Message::Biometric { t_ms, pulse_bpm }) => {
                biometrics.push((t_ms, pulse_bpm));
            }
            (LogDirection::In, Some(Role::Researcher), Message::Cmd(cmd)) | (LogDirection::Internal, _, Message::Cmd(cmd)) => {
                commands.push((rec.t_recv_ms, cmd.clone()));
            }
            (LogDirection::Out, _, Message::Cue { cue, position_ms }) => {
                if fired_ids.insert(cue.id.clone()) {
                    fired.push(FiredCue { cue: cue.clone(), sent_ms: rec.t_recv_ms, position_ms: *position_ms });
                }
            }
            (LogDirection::Out, _, Message::State { skipped: ids, .. }) => {
                for id in ids {
                    if skipped_ids.insert(id.clone()) {
                        skipped.push(id.clone());
                    }
                }
            }
            _ => {}
        }
    }

    Replay {
        trace: GazeTrace::from_unsorted(samples),
        fired,
        skipped,
        biometrics,
        commands,
        corrupt_lines: log.corrupt_lines,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AoiError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("AOI `{0}` has a non-positive or oversized extent")]
    BadExtent(String),
    #[error("AOI id `{0}` appears more than once")]
    Duplicate(String),
}

/// Parses a JSON list of
/// `{id, center: {yaw_deg, pitch_deg}, yaw_width_deg, pitch_height_deg}`.
pub fn parse_aois(text: &[u8]) -> Result<Vec<Aoi>, AoiError> {
    let value: Value = serde_json::from_slice(text).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let items = value.as_array().ok_or_else(|| ParseError::WrongType("$".into()))?;
    let mut out = Vec::with_capacity(items.len());
    let mut seen = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        let f = Fields::at(item, format!("[{i}]")).map_err(ParseError::from)?;
        let aoi = Aoi::new(
            f.str("id").map_err(ParseError::from)?,
            parse_direction(&f.obj("center").map_err(ParseError::from)?).map_err(ParseError::from)?,
            f.f64("yaw_width_deg").map_err(ParseError::from)?,
            f.f64("pitch_height_deg").map_err(ParseError::from)?,
        );
        if !aoi.is_valid() || !aoi.center.yaw_deg.is_finite() || !aoi.center.pitch_deg.is_finite() {
            return Err(AoiError::BadExtent(aoi.id));
        }
        if !seen.insert(aoi.id.clone()) {
            return Err(AoiError::Duplicate(aoi.id));
        }
        out.push(Aoi { center: aoi.center.canonical(), ..aoi });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeParams {
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub half_fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: Value,
    pub heatmap: HeatmapGrid,
}

impl Analysis {
    /// Pretty JSON with a trailing newline. Keys are sorted, so equal
    /// inputs give identical bytes.
    pub fn report_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.report).expect("report is plain JSON");
        s.push('\n');
        s
    }
}

/// Computes the session report. Dwell times are left out entirely when no
/// AOIs are given.
pub fn analyze(replay: &Replay, aois: &[Aoi], params: AnalyzeParams) -> Analysis {
    let trace = &replay.trace;
    let grid = heatmap(trace, params.grid_cols, params.grid_rows);
    let (col, row, count) = grid.max_bin();

    let cues: Vec<Value> = replay
        .fired
        .iter()
        .map(|f| {
            json!({
                "id": f.cue.id,
                "kind": f.cue.kind.name(),
                "at_ms": f.cue.at_ms,
                "sent_ms": f.sent_ms,
                "position_ms": f.position_ms,
                "duration_ms": f.cue.duration_ms,
                "visible_ms": cue_visibility(trace, &f.on_server_clock(), params.half_fov_deg),
            })
        })
        .collect();

    let mut report = Map::new();
    report.insert("samples".into(), json!(trace.len()));
    report.insert("trace_duration_ms".into(), json!(trace.duration_ms()));
    report.insert("corrupt_lines".into(), json!(replay.corrupt_lines));
    report.insert("half_fov_deg".into(), json!(params.half_fov_deg));
    report.insert("cues".into(), Value::Array(cues));
    report.insert(
        "heatmap".into(),
        json!({
            "cols": grid.cols(),
            "rows": grid.rows(),
            "total": grid.total(),
            "max_bin": {"col": col, "row": row, "count": count},
            "entropy_bits": grid.entropy_bits(),
        }),
    );
    report.insert(
        "timeline".into(),
        json!({
            "fired": replay.fired.iter().map(|f| f.cue.id.as_str()).collect::<Vec<_>>(),
            "skipped": replay.skipped,
            "commands": replay
                .commands
                .iter()
                .map(|(t, c)| json!({"t_ms": t, "action": c.name()}))
                .collect::<Vec<_>>(),
        }),
    );
    report.insert("biometric_samples".into(), json!(replay.biometrics.len()));
    if !aois.is_empty() {
        let dwell: Map<String, Value> = dwell_times(trace, aois).into_iter().map(|(k, v)| (k, json!(v))).collect();
        report.insert("dwell_ms".into(), Value::Object(dwell));
    }
    Analysis { report: Value::Object(report), heatmap: grid }
}

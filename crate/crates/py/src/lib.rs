//! Python module `study360`. Structured values cross the boundary as plain
//! dicts and lists; quaternions are `(w, x, y, z)` and directions
//! `(yaw_deg, pitch_deg)`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyString;
use serde_json::{json, Value};
use study360_core::access;
use study360_core::analysis::{self, parse_aois, replay_trace, AnalyzeParams};
use study360_core::gaze;
use study360_core::geom::{Direction, Quat};
use study360_core::hub::{Hub, HubConfig};
use study360_core::log::{read_log, NullLog};
use study360_core::loopback::{run_loopback, LoopbackConfig};
use study360_core::media::{self, RangeOutcome};
use study360_core::protocol::{self, Message};
use study360_core::session::{self, Event};
use study360_core::sim::{HeadsetSim, SimConfig};
use study360_core::study::{self, StudyConfig};

type Dir = (f64, f64);

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_error)
}

fn dir(d: Dir) -> Direction {
    Direction::new(d.0, d.1)
}

fn quat(q: [f64; 4]) -> PyResult<Quat> {
    Quat::from_array(q).normalized().ok_or_else(|| PyValueError::new_err("zero quaternion"))
}

fn load_study(text: &str) -> PyResult<StudyConfig> {
    study::parse_study(text.as_bytes()).map_err(value_error)
}

/// Parses a study file's text and returns it in canonical form.
#[pyfunction]
fn parse_study<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &study::canonicalize(&load_study(text)?).to_value())
}

/// Every violation in a study, as `code(detail)` strings. Empty when valid.
#[pyfunction]
fn validate_study(text: &str) -> PyResult<Vec<String>> {
    Ok(study::validate_study(&load_study(text)?).iter().map(ToString::to_string).collect())
}

#[pyfunction]
fn quat_to_direction(q: [f64; 4]) -> PyResult<Dir> {
    let d = gaze::quat_to_direction(quat(q)?);
    Ok((d.yaw_deg, d.pitch_deg))
}

#[pyfunction]
fn direction_to_quat(d: Dir) -> [f64; 4] {
    Quat::from_direction(dir(d)).to_array()
}

#[pyfunction]
fn direction_to_equirect(d: Dir, width_px: f64, height_px: f64) -> (f64, f64) {
    gaze::direction_to_equirect(dir(d), width_px, height_px)
}

#[pyfunction]
fn equirect_to_direction(u: f64, v: f64, width_px: f64, height_px: f64) -> Dir {
    let d = gaze::equirect_to_direction(u, v, width_px, height_px);
    (d.yaw_deg, d.pitch_deg)
}

#[pyfunction]
fn angular_distance(a: Dir, b: Dir) -> f64 {
    gaze::angular_distance(dir(a), dir(b))
}

/// `(start, end)` inclusive for a 206, `None` to serve the whole body, or
/// the string `"unsatisfiable"` for a 416.
#[pyfunction]
fn parse_range<'py>(py: Python<'py>, header: &str, total: u64) -> PyResult<Bound<'py, PyAny>> {
    match media::parse_range(header, total) {
        RangeOutcome::Satisfiable(r) => (r.start, r.end).into_pyobject(py).map(|t| t.into_any()),
        RangeOutcome::Ignore => Ok(py.None().into_bound(py)),
        RangeOutcome::Unsatisfiable => Ok(PyString::new(py, "unsatisfiable").into_any()),
    }
}

/// Checks a message dict against the protocol and returns its wire text.
#[pyfunction]
fn encode(msg: &Bound<'_, PyAny>) -> PyResult<String> {
    let m = protocol::decode_value(&from_py(msg)?).map_err(|e| PyValueError::new_err(format!("{}: {e}", e.code())))?;
    Ok(protocol::encode(&m))
}

#[pyfunction]
fn decode<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let m = protocol::decode(data).map_err(|e| PyValueError::new_err(format!("{}: {e}", e.code())))?;
    to_py(py, &protocol::encode_value(&m))
}

/// Length-prefixes a payload for the framed TCP transport.
#[pyfunction]
fn frame(payload: &[u8]) -> PyResult<Vec<u8>> {
    protocol::frame(payload).map_err(value_error)
}

/// `(offset_ms, rtt_ms)` from one ping/pong exchange.
#[pyfunction]
fn estimate_offset(t0_ms: i64, server_time_ms: i64, t1_ms: i64) -> (f64, i64) {
    let s = protocol::estimate_offset(t0_ms, server_time_ms, t1_ms);
    (s.offset_ms, s.rtt_ms)
}

/// `(left, right)` constant-power gains for a source heard from `pose`.
#[pyfunction]
fn spatial_gains(pose: [f64; 4], source: Dir, base_gain: f64) -> PyResult<(f64, f64)> {
    let g = access::spatial_gains(quat(pose)?, dir(source), base_gain);
    Ok((g.left, g.right))
}

#[pyfunction]
fn downmix_mono(left: Vec<f32>, right: Vec<f32>) -> PyResult<Vec<f32>> {
    access::downmix_mono(&left, &right).map_err(value_error)
}

/// `(screen_angle_deg, magnitude_deg)` of the arrow pointing at `target`.
#[pyfunction]
fn guidance_arrow(pose: [f64; 4], target: Dir) -> PyResult<(f64, f64)> {
    let a = access::guidance_arrow(quat(pose)?, dir(target));
    Ok((a.screen_angle_deg, a.magnitude_deg))
}

#[pyfunction]
fn haptic_level(angular_error_deg: f64, half_fov_deg: f64) -> f64 {
    access::haptic_level(angular_error_deg, half_fov_deg)
}

/// Summarizes a JSONL session log. Returns `(report, pgm_text)`.
#[pyfunction]
#[pyo3(signature = (path, aois_json=None, grid=(36, 18), half_fov_deg=45.0))]
fn analyze_log<'py>(
    py: Python<'py>,
    path: PathBuf,
    aois_json: Option<&str>,
    grid: (usize, usize),
    half_fov_deg: f64,
) -> PyResult<(Bound<'py, PyAny>, String)> {
    if grid.0 == 0 || grid.1 == 0 {
        return Err(PyValueError::new_err("grid dimensions must be positive"));
    }
    let loaded = read_log(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let aois = match aois_json {
        Some(text) => parse_aois(text.as_bytes()).map_err(value_error)?,
        None => Vec::new(),
    };
    let params = AnalyzeParams { grid_cols: grid.0, grid_rows: grid.1, half_fov_deg };
    let a = analysis::analyze(&replay_trace(&loaded), &aois, params);
    Ok((to_py(py, &a.report)?, a.heatmap.to_pgm()))
}

/// Runs a seeking headset against an in-process session on a virtual
/// clock and returns the simulator's report.
#[pyfunction]
#[pyo3(signature = (study_json, max_speed_deg_per_s=90.0, reaction_latency_ms=0, duration_ms=None))]
fn simulate_seek<'py>(
    py: Python<'py>,
    study_json: &str,
    max_speed_deg_per_s: f64,
    reaction_latency_ms: i64,
    duration_ms: Option<i64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = study::canonicalize(&load_study(study_json)?);
    let duration = duration_ms.unwrap_or(cfg.media.duration_ms);
    let sim_cfg = SimConfig::seek(max_speed_deg_per_s, reaction_latency_ms);
    sim_cfg.validate().map_err(PyValueError::new_err)?;
    let label = cfg.session_label.clone();
    let session = session::Session::new(cfg).map_err(value_error)?;
    let hub = Hub::new(session, HubConfig::new(label), Box::new(NullLog));
    let until = duration + 60_000;
    let run = run_loopback(hub, HeadsetSim::new(sim_cfg, duration), &LoopbackConfig::new(vec![(0, session::Command::Start)], until));
    to_py(py, &serde_json::to_value(run.sim.report()).map_err(value_error)?)
}

fn event_value(e: &Event) -> Value {
    match e {
        Event::StateChanged(s) => json!({"event": "state", "state": s.name()}),
        Event::CueFired { cue, position_ms } => json!({"event": "cue_fired", "cue": cue.to_json(), "position_ms": position_ms}),
        Event::CueSkipped(id) => json!({"event": "cue_skipped", "id": id}),
        Event::SessionCompleted => json!({"event": "completed"}),
    }
}

/// The cue scheduler, driven with explicit millisecond timestamps.
#[pyclass(module = "study360")]
struct Session {
    inner: session::Session,
}

#[pymethods]
impl Session {
    #[new]
    fn new(study_json: &str) -> PyResult<Self> {
        let cfg = study::canonicalize(&load_study(study_json)?);
        Ok(Self { inner: session::Session::new(cfg).map_err(value_error)? })
    }

    /// Applies a command dict such as `{"action": "seek", "to_ms": 1500}`.
    /// Raises `ValueError` with the rejection code when it does not apply.
    fn apply<'py>(&mut self, py: Python<'py>, command: &Bound<'py, PyAny>, now_ms: i64) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let mut value = from_py(command)?;
        let obj = value.as_object_mut().ok_or_else(|| PyValueError::new_err("command must be a dict"))?;
        obj.insert("type".into(), json!("command"));
        obj.insert("v".into(), json!(protocol::PROTOCOL_VERSION));
        let cmd = match protocol::decode_value(&value) {
            Ok(Message::Cmd(cmd)) => cmd,
            Ok(_) => unreachable!("type is forced to command"),
            Err(e) => return Err(PyValueError::new_err(format!("{}: {e}", e.code()))),
        };
        let events = self.inner.apply_command(cmd, now_ms).map_err(|e| PyValueError::new_err(format!("{}: {e}", e.code())))?;
        events.iter().map(|e| to_py(py, &event_value(e))).collect()
    }

    fn tick<'py>(&mut self, py: Python<'py>, now_ms: i64) -> PyResult<Vec<Bound<'py, PyAny>>> {
        self.inner.tick(now_ms).iter().map(|e| to_py(py, &event_value(e))).collect()
    }

    #[getter]
    fn state(&self) -> &'static str {
        self.inner.state().name()
    }

    fn position_at(&self, now_ms: i64) -> i64 {
        self.inner.position_at(now_ms)
    }

    #[getter]
    fn fired(&self) -> Vec<String> {
        self.inner.fired().iter().cloned().collect()
    }

    #[getter]
    fn skipped(&self) -> Vec<String> {
        self.inner.skipped().iter().cloned().collect()
    }
}

#[pymodule(name = "study360")]
fn study360_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PROTOCOL_VERSION", protocol::PROTOCOL_VERSION)?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(parse_study, m)?)?;
    m.add_function(wrap_pyfunction!(validate_study, m)?)?;
    m.add_function(wrap_pyfunction!(quat_to_direction, m)?)?;
    m.add_function(wrap_pyfunction!(direction_to_quat, m)?)?;
    m.add_function(wrap_pyfunction!(direction_to_equirect, m)?)?;
    m.add_function(wrap_pyfunction!(equirect_to_direction, m)?)?;
    m.add_function(wrap_pyfunction!(angular_distance, m)?)?;
    m.add_function(wrap_pyfunction!(parse_range, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(frame, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_offset, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_gains, m)?)?;
    m.add_function(wrap_pyfunction!(downmix_mono, m)?)?;
    m.add_function(wrap_pyfunction!(guidance_arrow, m)?)?;
    m.add_function(wrap_pyfunction!(haptic_level, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_log, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_seek, m)?)?;
    Ok(())
}

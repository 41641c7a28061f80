//! Gaze approximation from head orientation.
//!
//! No eye tracker is involved: the participant is assumed to look along
//! the headset's forward vector. Everything here is a pure function of a
//! pose trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::geom::{angle_between, wrap_yaw, Direction, Quat, Vec3};
use crate::study::Cue;

const FORWARD: Vec3 = Vec3::new(0.0, 0.0, -1.0);

/// Direction the headset faces. Non-unit inputs are normalized first.
pub fn quat_to_direction(q: Quat) -> Direction {
    let q = q.normalized().unwrap_or(Quat::IDENTITY);
    Direction::from_vec3(q.rotate(FORWARD))
}

/// Pixel position of `d` in an equirectangular frame. `u` grows with yaw,
/// `v` grows downward from the top (pitch +90).
pub fn direction_to_equirect(d: Direction, width_px: f64, height_px: f64) -> (f64, f64) {
    let u = (d.yaw_deg + 180.0) / 360.0 * width_px;
    let v = (90.0 - d.pitch_deg) / 180.0 * height_px;
    (u, v)
}

/// Inverse of [`direction_to_equirect`].
pub fn equirect_to_direction(u: f64, v: f64, width_px: f64, height_px: f64) -> Direction {
    Direction::new(wrap_yaw(u / width_px * 360.0 - 180.0), 90.0 - v / height_px * 180.0)
}

/// Great-circle angle between two directions, in degrees.
pub fn angular_distance(a: Direction, b: Direction) -> f64 {
    angle_between(a.to_vec3(), b.to_vec3()).to_degrees()
}

/// A yaw/pitch rectangle centred on `center` with full extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Aoi {
    pub id: String,
    pub center: Direction,
    pub yaw_width_deg: f64,
    pub pitch_height_deg: f64,
}

impl Aoi {
    pub fn new(id: impl Into<String>, center: Direction, yaw_width_deg: f64, pitch_height_deg: f64) -> Self {
        Self { id: id.into(), center, yaw_width_deg, pitch_height_deg }
    }

    pub fn is_valid(&self) -> bool {
        self.yaw_width_deg > 0.0
            && self.yaw_width_deg <= 360.0
            && self.pitch_height_deg > 0.0
            && self.pitch_height_deg <= 180.0
    }
}

pub fn in_aoi(d: Direction, aoi: &Aoi) -> bool {
    let dyaw = wrap_yaw(d.yaw_deg - aoi.center.yaw_deg);
    dyaw.abs() <= aoi.yaw_width_deg / 2.0
        && (d.pitch_deg - aoi.center.pitch_deg).abs() <= aoi.pitch_height_deg / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub t_ms: i64,
    pub q: Quat,
}

/// Pose samples with strictly increasing timestamps, with the facing
/// direction of each sample cached.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GazeTrace {
    samples: Vec<GazeSample>,
    directions: Vec<Direction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("trace timestamps must strictly increase (at index {index})")]
pub struct UnsortedTrace {
    pub index: usize,
}

impl GazeTrace {
    pub fn new(samples: Vec<GazeSample>) -> Result<Self, UnsortedTrace> {
        if let Some(i) = samples.windows(2).position(|w| w[0].t_ms >= w[1].t_ms) {
            return Err(UnsortedTrace { index: i + 1 });
        }
        let directions = samples.iter().map(|s| quat_to_direction(s.q)).collect();
        Ok(Self { samples, directions })
    }

    /// Builds a trace from possibly unordered samples: stable sort by time,
    /// keeping the first sample of any duplicated timestamp.
    pub fn from_unsorted(mut samples: Vec<GazeSample>) -> Self {
        samples.sort_by_key(|s| s.t_ms);
        samples.dedup_by_key(|s| s.t_ms);
        Self::new(samples).expect("sorted and deduplicated")
    }

    /// Convenience for synthetic traces given as directions.
    pub fn from_directions(points: &[(i64, Direction)]) -> Result<Self, UnsortedTrace> {
        Self::new(points.iter().map(|&(t_ms, d)| GazeSample { t_ms, q: Quat::from_direction(d) }).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn duration_ms(&self) -> i64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t_ms - a.t_ms,
            _ => 0,
        }
    }

    /// `(start, end, direction)` for every sample; each sample holds until
    /// the next one and the last covers nothing.
    pub fn spans(&self) -> impl Iterator<Item = (i64, i64, Direction)> + '_ {
        self.samples.windows(2).zip(&self.directions).map(|(w, &d)| (w[0].t_ms, w[1].t_ms, d))
    }
}

/// Milliseconds the gaze spent inside each AOI.
pub fn dwell_times(trace: &GazeTrace, aois: &[Aoi]) -> BTreeMap<String, i64> {
    let mut out: BTreeMap<String, i64> = aois.iter().map(|a| (a.id.clone(), 0)).collect();
    for (start, end, d) in trace.spans() {
        for aoi in aois.iter().filter(|a| in_aoi(d, a)) {
            *out.get_mut(&aoi.id).expect("seeded") += end - start;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapGrid {
    cols: usize,
    rows: usize,
    counts: Vec<u64>,
}

impl HeatmapGrid {
    pub fn new(cols: usize, rows: usize) -> Self {
        assert!(cols > 0 && rows > 0, "heatmap grid must be non-empty");
        Self { cols, rows, counts: vec![0; cols * rows] }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn get(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin for a direction, clamped into the grid.
    pub fn bin_of(&self, d: Direction) -> (usize, usize) {
        let col = ((d.yaw_deg + 180.0) / 360.0 * self.cols as f64).floor().max(0.0) as usize;
        let row = ((90.0 - d.pitch_deg) / 180.0 * self.rows as f64).floor().max(0.0) as usize;
        (col.min(self.cols - 1), row.min(self.rows - 1))
    }

    pub fn add(&mut self, d: Direction) {
        let (c, r) = self.bin_of(d);
        self.counts[r * self.cols + c] += 1;
    }

    /// `(col, row, count)` of the fullest bin; first in row-major order on ties.
    pub fn max_bin(&self) -> (usize, usize, u64) {
        let (i, &n) = self
            .counts
            .iter()
            .enumerate()
            .fold((0, &0), |best, cur| if cur.1 > best.1 { cur } else { best });
        (i % self.cols, i / self.cols, n)
    }

    /// Shannon entropy (bits) of the normalized counts; 0 for an empty grid.
    pub fn entropy_bits(&self) -> f64 {
        let total = self.total() as f64;
        if total == 0.0 {
            return 0.0;
        }
        -self
            .counts
            .iter()
            .filter(|&&n| n > 0)
            .map(|&n| {
                let p = n as f64 / total;
                p * p.log2()
            })
            .sum::<f64>()
    }

    /// Plain-text PGM (P2). Max value is the largest count, at least 1.
    pub fn to_pgm(&self) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut out = format!("P2\n{} {}\n{}\n", self.cols, self.rows, max);
        for row in self.counts.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

pub fn heatmap(trace: &GazeTrace, cols: usize, rows: usize) -> HeatmapGrid {
    let mut grid = HeatmapGrid::new(cols, rows);
    for &d in trace.directions() {
        grid.add(d);
    }
    grid
}

/// Milliseconds during `[cue.at_ms, cue.at_ms + cue.duration_ms]` that the
/// gaze was within `half_fov_deg` of the cue's anchor.
pub fn cue_visibility(trace: &GazeTrace, cue: &Cue, half_fov_deg: f64) -> i64 {
    let window_start = cue.at_ms;
    let window_end = cue.at_ms + cue.duration_ms;
    trace
        .spans()
        .filter(|&(_, _, d)| angular_distance(d, cue.anchor) <= half_fov_deg)
        .map(|(start, end, _)| (end.min(window_end) - start.max(window_start)).max(0))
        .sum()
}

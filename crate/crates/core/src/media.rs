//! Media catalog, single-range `Range` header parsing and the session
//! manifest.
//!
//! Every catalog entry is identified by its file name and hashed with
//! SHA-256 once at load time. The hex digest is both the HTTP `ETag` and the
//! integrity hash in the manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::study::{AudioMode, Projection, StudyConfig};

/// Inclusive byte range, `start <= end < total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteRange {
    pub start: u64,
    pub end: u64,
}

#[allow(clippy::len_without_is_empty)]
impl ByteRange {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    /// `Content-Range` value for a 206 response.
    pub fn content_range(&self, total: u64) -> String {
        format!("bytes {}-{}/{}", self.start, self.end, total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeOutcome {
    Satisfiable(ByteRange),
    /// Serve the whole entity with 200.
    Ignore,
    /// Respond 416.
    Unsatisfiable,
}

fn parse_pos(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Interprets a `Range` header against an entity of `total` bytes.
///
/// Only one `bytes` range is honoured. Multiple ranges, other units and
/// syntactically broken headers are all ignored.
pub fn parse_range(header: &str, total: u64) -> RangeOutcome {
    let Some(spec) = header.trim().strip_prefix("bytes=") else {
        return RangeOutcome::Ignore;
    };
    if spec.contains(',') {
        return RangeOutcome::Ignore;
    }
    let Some((first, last)) = spec.trim().split_once('-') else {
        return RangeOutcome::Ignore;
    };
    let (first, last) = (first.trim(), last.trim());

    if first.is_empty() {
        let Some(n) = parse_pos(last) else {
            return RangeOutcome::Ignore;
        };
        if n == 0 || total == 0 {
            return RangeOutcome::Unsatisfiable;
        }
        return RangeOutcome::Satisfiable(ByteRange { start: total.saturating_sub(n), end: total - 1 });
    }

    let Some(start) = parse_pos(first) else {
        return RangeOutcome::Ignore;
    };
    let end = if last.is_empty() {
        None
    } else {
        match parse_pos(last) {
            Some(e) if e >= start => Some(e),
            _ => return RangeOutcome::Ignore,
        }
    };
    if start >= total {
        return RangeOutcome::Unsatisfiable;
    }
    let end = end.map_or(total - 1, |e| e.min(total - 1));
    RangeOutcome::Satisfiable(ByteRange { start, end })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaEntry {
    pub path: PathBuf,
    pub len: u64,
    pub sha256: String,
}

/// Media files by id, fixed at load time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MediaCatalog {
    entries: BTreeMap<String, MediaEntry>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl MediaCatalog {
    /// Catalogs the regular files directly inside `dir`.
    pub fn load(dir: &Path) -> io::Result<Self> {
        let mut entries = BTreeMap::new();
        for item in std::fs::read_dir(dir)? {
            let item = item?;
            if !item.file_type()?.is_file() {
                continue;
            }
            let Ok(id) = item.file_name().into_string() else {
                continue;
            };
            let path = item.path();
            let sha256 = sha256_file(&path)?;
            let len = item.metadata()?.len();
            entries.insert(id, MediaEntry { path, len, sha256 });
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, id: impl Into<String>, entry: MediaEntry) {
        self.entries.insert(id.into(), entry);
    }

    pub fn get(&self, id: &str) -> Option<&MediaEntry> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("media `{0}` is not in the catalog")]
pub struct MissingMedia(pub String);

fn is_absolute_url(url: &str) -> bool {
    url.split_once("://").is_some_and(|(scheme, _)| {
        !scheme.is_empty() && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
    })
}

/// Resolves a study media reference. Absolute URLs pass through without a
/// hash; anything else names a catalog entry served under `/media/`.
fn resolve(url: &str, catalog: &MediaCatalog, base_url: &str) -> Result<(String, Option<String>), MissingMedia> {
    if is_absolute_url(url) {
        return Ok((url.to_string(), None));
    }
    let entry = catalog.get(url).ok_or_else(|| MissingMedia(url.to_string()))?;
    let base = base_url.trim_end_matches('/');
    Ok((format!("{base}/media/{url}"), Some(entry.sha256.clone())))
}

pub fn manifest_value(cfg: &StudyConfig, catalog: &MediaCatalog, base_url: &str) -> Result<Value, MissingMedia> {
    let (video_url, video_sha) = resolve(&cfg.media.url, catalog, base_url)?;
    let projection = match cfg.media.projection {
        Projection::Equirectangular => "equirectangular",
    };
    let mut audio = Vec::with_capacity(cfg.audio_tracks.len());
    for track in &cfg.audio_tracks {
        let (url, sha) = resolve(&track.url, catalog, base_url)?;
        let mut item = json!({
            "id": track.id,
            "url": url,
            "start_ms": track.start_ms,
            "gain": track.gain,
            "sha256": sha,
        });
        match track.mode {
            AudioMode::Mono => item["mode"] = json!("mono"),
            AudioMode::Spatial(anchor) => {
                item["mode"] = json!("spatial");
                item["anchor"] = json!({"yaw_deg": anchor.yaw_deg, "pitch_deg": anchor.pitch_deg});
            }
        }
        audio.push(item);
    }
    Ok(json!({
        "video": {
            "url": video_url,
            "width_px": cfg.media.width_px,
            "height_px": cfg.media.height_px,
            "duration_ms": cfg.media.duration_ms,
            "projection": projection,
            "sha256": video_sha,
        },
        "audio": audio,
    }))
}

/// Manifest JSON text for a study.
pub fn build_manifest(cfg: &StudyConfig, catalog: &MediaCatalog, base_url: &str) -> Result<String, MissingMedia> {
    manifest_value(cfg, catalog, base_url).map(|v| v.to_string())
}

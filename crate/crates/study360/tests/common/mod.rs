//! Fixtures shared by the server, CLI and acceptance tests.

#![allow(dead_code)]

use std::path::Path;

use axum::body::Bytes;
use axum::http::{HeaderMap, Request, StatusCode};
use futures_util::{SinkExt, StreamExt};
use http_body_util::{BodyExt, Empty};
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use study360::{serve, ServeOptions, Server};
use study360_core::geom::Direction;
use study360_core::log::LogSink;
use study360_core::media::MediaCatalog;
use study360_core::protocol::{decode, encode, Message, Role, PROTOCOL_VERSION};
use study360_core::study::{canonicalize, AudioMode, AudioTrack, Cue, MediaRef, Projection, StudyConfig};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message as WsMessage;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub fn study(duration_ms: i64, cues: Vec<Cue>) -> StudyConfig {
    canonicalize(&StudyConfig {
        version: 1,
        session_label: "desk".into(),
        media: MediaRef {
            url: "video.mp4".into(),
            duration_ms,
            projection: Projection::Equirectangular,
            width_px: 3840,
            height_px: 1920,
        },
        audio_tracks: vec![AudioTrack {
            id: "narration".into(),
            url: "narration.wav".into(),
            start_ms: 0,
            gain: 0.8,
            mode: AudioMode::Mono,
        }],
        cues,
    })
}

/// The study used by the end-to-end runs: one cue anchored 90 degrees to the right.
pub fn seek_study(duration_ms: i64) -> StudyConfig {
    study(duration_ms, vec![Cue::text("look-right", 1000, 3000, "over here").with_anchor(Direction::new(90.0, 0.0))])
}

/// Deterministic pseudo-random bytes.
pub fn bytes(len: usize, seed: u64) -> Vec<u8> {
    use rand::{RngCore, SeedableRng};
    let mut out = vec![0u8; len];
    rand::rngs::StdRng::seed_from_u64(seed).fill_bytes(&mut out);
    out
}

/// Writes the media files `study()` refers to.
pub fn media_dir(dir: &Path) -> MediaCatalog {
    std::fs::write(dir.join("video.mp4"), bytes(1 << 20, 1)).unwrap();
    std::fs::write(dir.join("narration.wav"), bytes(48_000, 2)).unwrap();
    MediaCatalog::load(dir).unwrap()
}

pub async fn start(study: StudyConfig, catalog: MediaCatalog, log: Box<dyn LogSink>) -> Server {
    serve(ServeOptions::new(study, catalog, log)).await.unwrap()
}

pub async fn get(url: &str, headers: &[(&str, &str)]) -> (StatusCode, HeaderMap, Vec<u8>) {
    let client = Client::builder(TokioExecutor::new()).build_http::<Empty<Bytes>>();
    let mut req = Request::get(url);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = client.request(req.body(Empty::new()).unwrap()).await.unwrap();
    let (parts, body) = resp.into_parts();
    (parts.status, parts.headers, body.collect().await.unwrap().to_bytes().to_vec())
}

pub fn header<'a>(h: &'a HeaderMap, name: &str) -> Option<&'a str> {
    h.get(name).and_then(|v| v.to_str().ok())
}

/// sha-256 of `path` from the system tool, as an independent check.
pub fn sha256sum(path: &Path) -> String {
    let out = std::process::Command::new("sha256sum").arg(path).output().expect("sha256sum available");
    String::from_utf8(out.stdout).unwrap().split_whitespace().next().unwrap().to_string()
}

pub async fn connect(server: &Server) -> Ws {
    tokio_tungstenite::connect_async(server.ws_url()).await.unwrap().0
}

pub async fn send(ws: &mut Ws, msg: &Message) {
    ws.send(WsMessage::text(encode(msg))).await.unwrap();
}

/// Next protocol message, or `None` once the server closed the socket.
pub async fn recv(ws: &mut Ws) -> Option<Message> {
    let next = tokio::time::timeout(std::time::Duration::from_secs(5), async {
        while let Some(frame) = ws.next().await {
            match frame {
                Ok(WsMessage::Text(t)) => return Some(decode(t.as_bytes()).expect("server sends valid messages")),
                Ok(WsMessage::Close(_)) | Err(_) => return None,
                Ok(_) => {}
            }
        }
        None
    });
    next.await.expect("server answered within 5 s")
}

/// Receives until `pred` matches, returning the match.
pub async fn recv_until(ws: &mut Ws, mut pred: impl FnMut(&Message) -> bool) -> Message {
    loop {
        let m = recv(ws).await.expect("connection stayed open");
        if pred(&m) {
            return m;
        }
    }
}

pub async fn join(server: &Server, role: Role) -> Ws {
    let mut ws = connect(server).await;
    send(&mut ws, &Message::Hello { role, session_id: None, protocol_version: PROTOCOL_VERSION }).await;
    assert!(matches!(recv(&mut ws).await, Some(Message::Welcome { .. })));
    ws
}

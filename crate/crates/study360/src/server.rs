//! Session server: WebSocket and raw-TCP protocol endpoints, the session
//! manifest and byte-range media streaming.
//!
//! A single hub task owns the [`Hub`]. Connection tasks forward decoded
//! bytes to it through one ordered queue and receive their outbound
//! messages on a per-peer channel.

use std::collections::HashMap;
use std::io::SeekFrom;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Body;
use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use study360_core::hub::{Hub, HubConfig, PeerId};
use study360_core::log::LogSink;
use study360_core::media::{manifest_value, parse_range, MediaCatalog, MediaEntry, MissingMedia, RangeOutcome};
use study360_core::protocol::{encode, frame, FrameDecoder, Message};
use study360_core::session::{Session, SessionError};
use study360_core::study::StudyConfig;
use tokio::io::{AsyncReadExt, AsyncSeekExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_util::io::ReaderStream;

/// Millisecond server clock: wall-clock epoch at start, advanced monotonically.
#[derive(Debug, Clone, Copy)]
pub struct ServerClock {
    origin: Instant,
    epoch_ms: i64,
}

impl ServerClock {
    pub fn start() -> Self {
        let epoch_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64);
        Self { origin: Instant::now(), epoch_ms }
    }

    pub fn now_ms(&self) -> i64 {
        self.epoch_ms + self.origin.elapsed().as_millis() as i64
    }
}

impl Default for ServerClock {
    fn default() -> Self {
        Self::start()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    MissingMedia(#[from] MissingMedia),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
}

pub struct ServeOptions {
    pub study: StudyConfig,
    pub catalog: MediaCatalog,
    pub hub: HubConfig,
    pub log: Box<dyn LogSink>,
    pub http_addr: SocketAddr,
    /// Also accept length-framed protocol connections here.
    pub tcp_addr: Option<SocketAddr>,
    /// Hub clock resolution.
    pub tick: Duration,
}

impl ServeOptions {
    pub fn new(study: StudyConfig, catalog: MediaCatalog, log: Box<dyn LogSink>) -> Self {
        let hub = HubConfig::new(study.session_label.clone());
        Self {
            study,
            catalog,
            hub,
            log,
            http_addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            tcp_addr: None,
            tick: Duration::from_millis(5),
        }
    }
}

enum HubMsg {
    Connect(PeerId, mpsc::UnboundedSender<(Message, bool)>),
    Bytes(PeerId, Vec<u8>),
    Disconnect(PeerId),
}

#[derive(Clone)]
pub struct AppState {
    study: Arc<StudyConfig>,
    catalog: Arc<MediaCatalog>,
    session_id: Arc<str>,
    hub: mpsc::UnboundedSender<HubMsg>,
    next_peer: Arc<AtomicU64>,
}

impl AppState {
    fn peer_id(&self) -> PeerId {
        self.next_peer.fetch_add(1, Ordering::Relaxed)
    }
}

/// Running server. Dropping it leaves the tasks running; call
/// [`Server::shutdown`] to stop them.
pub struct Server {
    pub http_addr: SocketAddr,
    pub tcp_addr: Option<SocketAddr>,
    pub session_id: String,
    stop: Option<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl Server {
    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.http_addr)
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Stops accepting, drops the hub and waits for the tasks to end.
    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        for t in self.tasks.drain(..) {
            t.abort();
            let _ = t.await;
        }
    }

    /// Resolves when the server stops on its own or `signal` completes.
    pub async fn run_until<F: std::future::Future<Output = ()>>(self, signal: F) {
        signal.await;
        self.shutdown().await;
    }
}

pub async fn serve(opts: ServeOptions) -> Result<Server, ServeError> {
    let ServeOptions { study, catalog, hub, log, http_addr, tcp_addr, tick } = opts;
    // refuse to start when the manifest could not be built
    manifest_value(&study, &catalog, "")?;
    let session_id = hub.session_id.clone();
    let hub = Hub::new(Session::new(study.clone())?, hub, log);

    let listener = TcpListener::bind(http_addr).await.map_err(|source| ServeError::Bind { addr: http_addr, source })?;
    let http_addr = listener.local_addr().map_err(|source| ServeError::Bind { addr: http_addr, source })?;
    let tcp = match tcp_addr {
        Some(addr) => {
            let l = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
            Some(l)
        }
        None => None,
    };
    let tcp_addr = tcp.as_ref().and_then(|l| l.local_addr().ok());

    let (hub_tx, hub_rx) = mpsc::unbounded_channel();
    let state = AppState {
        study: Arc::new(study),
        catalog: Arc::new(catalog),
        session_id: session_id.clone().into(),
        hub: hub_tx,
        next_peer: Arc::new(AtomicU64::new(1)),
    };

    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let mut tasks = vec![tokio::spawn(run_hub(hub, hub_rx, ServerClock::start(), tick))];
    let app = router(state.clone());
    tasks.push(tokio::spawn(async move {
        let shutdown = async {
            let _ = stop_rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            log::error!("http server stopped: {e}");
        }
    }));
    if let Some(listener) = tcp {
        tasks.push(tokio::spawn(accept_tcp(listener, state)));
    }
    log::info!("session {session_id} listening on {http_addr}");
    Ok(Server { http_addr, tcp_addr, session_id, stop: Some(stop_tx), tasks })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/manifest/{session_id}", get(manifest))
        .route("/media/{id}", get(media))
        .with_state(state)
}

async fn run_hub(mut hub: Hub, mut rx: mpsc::UnboundedReceiver<HubMsg>, clock: ServerClock, tick: Duration) {
    let mut peers: HashMap<PeerId, mpsc::UnboundedSender<(Message, bool)>> = HashMap::new();
    let mut ticker = tokio::time::interval(tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        let out = tokio::select! {
            biased;
            msg = rx.recv() => match msg {
                None => break,
                Some(HubMsg::Connect(peer, tx)) => {
                    hub.connect(peer);
                    peers.insert(peer, tx);
                    Vec::new()
                }
                Some(HubMsg::Bytes(peer, bytes)) => hub.handle_raw(peer, &bytes, clock.now_ms()),
                Some(HubMsg::Disconnect(peer)) => {
                    hub.disconnect(peer);
                    peers.remove(&peer);
                    Vec::new()
                }
            },
            _ = ticker.tick() => hub.tick(clock.now_ms()),
        };
        for o in out {
            if let Some(tx) = peers.get(&o.to) {
                let _ = tx.send((o.msg, o.close));
            }
            if o.close {
                hub.disconnect(o.to);
                peers.remove(&o.to);
            }
        }
    }
    if hub.log_errors() > 0 {
        log::warn!("{} log records could not be written", hub.log_errors());
    }
}

async fn ws_upgrade(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| ws_session(socket, state))
}

async fn ws_session(socket: WebSocket, state: AppState) {
    let peer = state.peer_id();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel();
    if state.hub.send(HubMsg::Connect(peer, out_tx)).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        while let Some((msg, close)) = out_rx.recv().await {
            if sink.send(WsMessage::Text(encode(&msg).into())).await.is_err() {
                break;
            }
            if close {
                let _ = sink.send(WsMessage::Close(None)).await;
                break;
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        let bytes = match frame {
            WsMessage::Text(t) => t.as_bytes().to_vec(),
            WsMessage::Binary(b) => b.to_vec(),
            WsMessage::Close(_) => break,
            _ => continue,
        };
        if state.hub.send(HubMsg::Bytes(peer, bytes)).is_err() {
            break;
        }
    }
    let _ = state.hub.send(HubMsg::Disconnect(peer));
    let _ = writer.await;
}

async fn accept_tcp(listener: TcpListener, state: AppState) {
    loop {
        match listener.accept().await {
            Ok((stream, _)) => {
                tokio::spawn(tcp_session(stream, state.clone()));
            }
            Err(e) => log::warn!("tcp accept failed: {e}"),
        }
    }
}

async fn tcp_session(stream: TcpStream, state: AppState) {
    let peer = state.peer_id();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel();
    if state.hub.send(HubMsg::Connect(peer, out_tx.clone())).is_err() {
        return;
    }
    let (mut reader, mut writer) = stream.into_split();
    let writer = tokio::spawn(async move {
        while let Some((msg, close)) = out_rx.recv().await {
            let Ok(bytes) = frame(encode(&msg).as_bytes()) else { continue };
            if writer.write_all(&bytes).await.is_err() || close {
                break;
            }
        }
        let _ = writer.shutdown().await;
    });
    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    'read: loop {
        let n = match reader.read(&mut buf).await {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_frame() {
                Ok(Some(payload)) => {
                    if state.hub.send(HubMsg::Bytes(peer, payload)).is_err() {
                        break 'read;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    // the stream cannot be resynchronised after a bad header
                    let _ = out_tx.send((Message::error("frame_error", e.to_string()), true));
                    break 'read;
                }
            }
        }
    }
    drop(out_tx);
    let _ = state.hub.send(HubMsg::Disconnect(peer));
    let _ = writer.await;
}

async fn manifest(State(state): State<AppState>, Path(session_id): Path<String>, headers: HeaderMap) -> Response {
    if session_id != *state.session_id {
        let body = Json(json!({"error": "unknown_session", "message": format!("no session `{session_id}`")}));
        return (StatusCode::NOT_FOUND, body).into_response();
    }
    let host = headers.get(header::HOST).and_then(|h| h.to_str().ok()).unwrap_or("localhost");
    match manifest_value(&state.study, &state.catalog, &format!("http://{host}")) {
        Ok(v) => Json(v).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "missing_media", "message": e.to_string()})))
            .into_response(),
    }
}

fn content_type(id: &str) -> &'static str {
    let ext = id.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).unwrap_or_default();
    match ext.as_str() {
        "mp4" | "m4v" => "video/mp4",
        "webm" => "video/webm",
        "mp3" => "audio/mpeg",
        "m4a" | "aac" => "audio/mp4",
        "wav" => "audio/wav",
        "ogg" | "oga" => "audio/ogg",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "json" => "application/json",
        _ => "application/octet-stream",
    }
}

async fn media(State(state): State<AppState>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let Some(entry) = state.catalog.get(&id) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let etag = format!("\"{}\"", entry.sha256);
    let mut base = HeaderMap::new();
    base.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    base.insert(header::ETAG, HeaderValue::from_str(&etag).expect("hex etag"));
    base.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type(&id)));

    let not_modified = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*"));
    if not_modified {
        return (StatusCode::NOT_MODIFIED, base).into_response();
    }

    let total = entry.len;
    let range = headers.get(header::RANGE).and_then(|v| v.to_str().ok()).map(|h| parse_range(h, total));
    match range {
        Some(RangeOutcome::Unsatisfiable) => {
            base.insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes */{total}")).expect("ascii"));
            (StatusCode::RANGE_NOT_SATISFIABLE, base).into_response()
        }
        Some(RangeOutcome::Satisfiable(r)) => match file_body(entry, r.start, r.len()).await {
            Ok(body) => {
                base.insert(header::CONTENT_RANGE, HeaderValue::from_str(&r.content_range(total)).expect("ascii"));
                base.insert(header::CONTENT_LENGTH, HeaderValue::from(r.len()));
                (StatusCode::PARTIAL_CONTENT, base, body).into_response()
            }
            Err(e) => io_failure(&id, e),
        },
        Some(RangeOutcome::Ignore) | None => match file_body(entry, 0, total).await {
            Ok(body) => {
                base.insert(header::CONTENT_LENGTH, HeaderValue::from(total));
                (StatusCode::OK, base, body).into_response()
            }
            Err(e) => io_failure(&id, e),
        },
    }
}

fn io_failure(id: &str, e: std::io::Error) -> Response {
    log::error!("reading media {id}: {e}");
    StatusCode::INTERNAL_SERVER_ERROR.into_response()
}

async fn file_body(entry: &MediaEntry, start: u64, len: u64) -> std::io::Result<Body> {
    let mut file = tokio::fs::File::open(&entry.path).await?;
    file.seek(SeekFrom::Start(start)).await?;
    Ok(Body::from_stream(ReaderStream::new(file.take(len))))
}

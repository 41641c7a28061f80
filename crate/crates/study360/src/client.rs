//! WebSocket headset client driving a [`HeadsetSim`] on the wall clock.

use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use study360_core::protocol::{decode, encode};
use study360_core::sim::{HeadsetSim, SimConfig, SimReport};
use tokio_tungstenite::tungstenite::{self, Message as WsMessage};

/// How long the handshake and clock sync may take before giving up.
const HANDSHAKE_BUDGET: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid simulator settings: {0}")]
    Config(String),
    #[error("cannot connect to {endpoint}: {source}")]
    Connect { endpoint: String, source: tungstenite::Error },
    #[error("connection failed: {0}")]
    Transport(#[from] tungstenite::Error),
    #[error("server closed the connection before streaming started")]
    ClosedEarly,
    #[error("timed out waiting for the server")]
    Timeout,
}

/// Connects as the headset and streams poses until `duration_ms` of
/// streaming has elapsed or the session completes.
///
/// A refused handshake is reported through [`SimReport::rejected`] rather
/// than as an error.
pub async fn run_sim(endpoint: &str, cfg: SimConfig, duration_ms: i64) -> Result<SimReport, ClientError> {
    cfg.validate().map_err(ClientError::Config)?;
    let (ws, _) = tokio_tungstenite::connect_async(endpoint)
        .await
        .map_err(|source| ClientError::Connect { endpoint: endpoint.to_string(), source })?;
    let (mut tx, mut rx) = ws.split();
    let start = Instant::now();
    let local_ms = || start.elapsed().as_millis() as i64;
    let mut sim = HeadsetSim::new(cfg, duration_ms);
    tx.send(WsMessage::text(encode(&sim.hello()))).await?;

    let handshake_deadline = tokio::time::Instant::now() + HANDSHAKE_BUDGET;
    while !sim.is_done() {
        let wake = match sim.next_wakeup() {
            Some(t) => tokio::time::Instant::from_std(start + Duration::from_millis(t.max(0) as u64)),
            None => handshake_deadline,
        };
        tokio::select! {
            frame = rx.next() => {
                let text = match frame {
                    Some(Ok(WsMessage::Text(t))) => t,
                    Some(Ok(WsMessage::Close(_))) | None if sim.next_wakeup().is_none() => {
                        return Err(ClientError::ClosedEarly);
                    }
                    Some(Ok(WsMessage::Close(_))) | None => break,
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => return Err(e.into()),
                };
                match decode(text.as_bytes()) {
                    Ok(msg) => {
                        for reply in sim.on_message(&msg, local_ms()) {
                            tx.send(WsMessage::text(encode(&reply))).await?;
                        }
                    }
                    Err(e) => log::warn!("undecodable server message: {e}"),
                }
            }
            _ = tokio::time::sleep_until(wake) => {
                if sim.next_wakeup().is_none() {
                    return Err(ClientError::Timeout);
                }
                for pose in sim.poll(local_ms()) {
                    tx.send(WsMessage::text(encode(&pose))).await?;
                }
            }
        }
    }
    let _ = tx.send(WsMessage::Close(None)).await;
    Ok(sim.into_report())
}

//! WebSocket endpoint and the thread that owns the control loop.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, oneshot};
use tokio_tungstenite::tungstenite::Message;
use vptc::sim::scenario::validate_command;
use vptc::sim::Simulation;
use vptc::RobotModel;

use crate::error::TeleopError;
use crate::session::{Session, Shared};
use crate::wire::{decode_client, encode, ClientFrame, Role, ScenarioSummary, ServerFrame};

/// Records kept in memory during an open-ended session.
pub const LIVE_LOG_LIMIT: usize = 10_000;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub snapshot_hz: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            snapshot_hz: 50.0,
        }
    }
}

/// Control steps between snapshots for the requested publish rate.
pub fn decimation_for(control_dt: f64, snapshot_hz: f64) -> u32 {
    if !(snapshot_hz > 0.0) {
        return 1;
    }
    (1.0 / (snapshot_hz * control_dt)).round().max(1.0) as u32
}

struct Endpoint {
    shared: Arc<Shared>,
    model: RobotModel,
    summary: ScenarioSummary,
    operator: AtomicU64,
    next_id: AtomicU64,
}

pub struct Server {
    listener: TcpListener,
    session: Session,
    endpoint: Arc<Endpoint>,
}

impl Server {
    /// Binds the listener. The simulation runs without a step limit unless
    /// `bounded` is set.
    pub async fn bind(
        mut sim: Simulation,
        config: &ServeConfig,
        bounded: bool,
    ) -> Result<Self, TeleopError> {
        if !bounded {
            sim.set_unbounded();
            sim.set_log_limit(LIVE_LOG_LIMIT);
        }
        let decimation = decimation_for(sim.scenario.control_dt, config.snapshot_hz);
        let summary = ScenarioSummary::new(&sim.scenario, sim.model(), decimation);
        let model = sim.model().clone();
        let session = Session::new(sim, decimation);
        let listener = TcpListener::bind(config.addr).await?;
        let endpoint = Arc::new(Endpoint {
            shared: session.shared(),
            model,
            summary,
            operator: AtomicU64::new(0),
            next_id: AtomicU64::new(1),
        });
        Ok(Self {
            listener,
            session,
            endpoint,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shared(&self) -> Arc<Shared> {
        self.session.shared()
    }

    /// Serves until `shutdown` resolves or the control loop ends, then
    /// returns the session with its log.
    pub async fn run<F: Future<Output = ()>>(self, shutdown: F) -> Result<Session, TeleopError> {
        let Server {
            listener,
            mut session,
            endpoint,
        } = self;
        let shared = session.shared();
        let (done_tx, mut done_rx) = oneshot::channel();
        let control = std::thread::Builder::new()
            .name("control".into())
            .spawn(move || {
                let outcome = session.run_realtime();
                let _ = done_tx.send(());
                (session, outcome)
            })?;

        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                _ = &mut done_rx => break,
                accepted = listener.accept() => {
                    match accepted {
                        Ok((stream, peer)) => {
                            let ep = Arc::clone(&endpoint);
                            tokio::spawn(async move {
                                if let Err(e) = connection(ep, stream).await {
                                    log::debug!("connection {peer} closed: {e}");
                                }
                            });
                        }
                        Err(e) => log::warn!("accept failed: {e}"),
                    }
                }
            }
        }
        shared.request_stop();
        shared.published.notify_waiters();
        let (session, outcome) = tokio::task::spawn_blocking(move || control.join())
            .await
            .map_err(|e| TeleopError::ControlLoop(e.to_string()))?
            .map_err(|_| TeleopError::ControlLoop("control thread panicked".into()))?;
        outcome?;
        Ok(session)
    }
}

/// Loads the scenario's models, binds and serves until Ctrl-C.
pub async fn serve(sim: Simulation, config: ServeConfig) -> Result<Session, TeleopError> {
    let server = Server::bind(sim, &config, false).await?;
    log::info!("teleop listening on ws://{}", server.local_addr()?);
    server
        .run(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn seq_hint(text: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()?
        .get("seq")?
        .as_u64()
}

async fn connection(ep: Arc<Endpoint>, stream: TcpStream) -> Result<(), TeleopError> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let id = ep.next_id.fetch_add(1, Ordering::Relaxed);
    let role = if ep
        .operator
        .compare_exchange(0, id, Ordering::AcqRel, Ordering::Acquire)
        .is_ok()
    {
        Role::Operator
    } else {
        Role::Observer
    };
    let hello = ServerFrame::Hello {
        schema: crate::wire::SCHEMA_VERSION.to_string(),
        role,
        scenario: ep.summary.clone(),
    };
    tx.send(Message::Text(encode(&hello))).await?;

    let mut errors = ep.shared.errors.subscribe();
    let mut sent_step = None;
    let result = loop {
        let published = ep.shared.published.notified();
        tokio::select! {
            _ = published => {
                if ep.shared.stopping() {
                    break Ok(());
                }
                if let Some(snap) = ep.shared.snapshot.load_full() {
                    if sent_step != Some(snap.step) {
                        sent_step = Some(snap.step);
                        if let Err(e) = tx.send(Message::Text(encode(&ServerFrame::Snapshot((*snap).clone())))).await {
                            break Err(e.into());
                        }
                    }
                }
            }
            frame = errors.recv() => {
                match frame {
                    Ok(f) => {
                        if let Err(e) = tx.send(Message::Text(encode(&f))).await {
                            break Err(e.into());
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => {}
                    Err(broadcast::error::RecvError::Closed) => break Ok(()),
                }
            }
            msg = rx.next() => {
                let text = match msg {
                    None => break Ok(()),
                    Some(Err(e)) => break Err(e.into()),
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) => break Ok(()),
                    Some(Ok(_)) => continue,
                };
                if let Some(reply) = handle_text(&ep, id, &text) {
                    if let Err(e) = tx.send(Message::Text(encode(&reply))).await {
                        break Err(e.into());
                    }
                }
            }
        }
    };
    let _ = ep
        .operator
        .compare_exchange(id, 0, Ordering::AcqRel, Ordering::Acquire);
    result
}

/// Applies one client frame; returns an immediate reply if there is one.
fn handle_text(ep: &Endpoint, id: u64, text: &str) -> Option<ServerFrame> {
    let frame = match decode_client(text) {
        Ok(f) => f,
        Err(e) => {
            return Some(ServerFrame::Error {
                seq: seq_hint(text),
                message: e.to_string(),
            })
        }
    };
    match frame {
        ClientFrame::Command { seq, command } => {
            if ep.operator.load(Ordering::Acquire) != id {
                return Some(ServerFrame::Error {
                    seq: Some(seq),
                    message: "operator role required".into(),
                });
            }
            if let Err(e) = validate_command(&command, &ep.model) {
                return Some(ServerFrame::Error {
                    seq: Some(seq),
                    message: e.to_string(),
                });
            }
            ep.shared.mailbox.post(seq, command);
            None
        }
        ClientFrame::Claim => {
            let holder = ep.operator.load(Ordering::Acquire);
            if holder == id
                || ep
                    .operator
                    .compare_exchange(0, id, Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
            {
                Some(ServerFrame::Role {
                    role: Role::Operator,
                })
            } else {
                Some(ServerFrame::Error {
                    seq: None,
                    message: "operator role is held by another client".into(),
                })
            }
        }
        ClientFrame::Release => {
            let _ = ep
                .operator
                .compare_exchange(id, 0, Ordering::AcqRel, Ordering::Acquire);
            Some(ServerFrame::Role {
                role: Role::Observer,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimation_rounds_to_whole_steps() {
        assert_eq!(decimation_for(0.005, 50.0), 4);
        assert_eq!(decimation_for(0.005, 200.0), 1);
        assert_eq!(decimation_for(0.005, 1000.0), 1);
        assert_eq!(decimation_for(0.005, 0.0), 1);
        assert_eq!(decimation_for(0.005, 30.0), 7);
    }

    #[test]
    fn seq_recovered_from_bad_frames() {
        assert_eq!(
            seq_hint(r#"{"type":"command","seq":9,"kind":"nope"}"#),
            Some(9)
        );
        assert_eq!(seq_hint("not json"), None);
    }
}

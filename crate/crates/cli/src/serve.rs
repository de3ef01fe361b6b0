//! Realtime service: one session loop per socket connection.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use iart_core::features::DT;
use iart_core::interface::{parse_client_message, ClientMessage, LiveSession, ServerMessage};
use iart_core::lstm::LstmModel;
use iart_core::session::write_log;
use iart_core::Error;
use tokio::sync::mpsc;
use tokio::time::{interval, MissedTickBehavior};
use tower_http::services::ServeDir;

use crate::{CliResult, ServeArgs};

/// Frames queued for a slow client before ticks start being dropped.
const OUTBOX: usize = 64;

const PLACEHOLDER: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>iart</title></head>
<body><h1>iart realtime service</h1>
<p>No client bundle is installed. Start the server with <code>--static DIR</code>
or connect a client to <code>/ws</code>.</p></body></html>
"#;

struct AppState {
    model: Option<Arc<LstmModel>>,
    data_dir: PathBuf,
    lockstep: bool,
}

pub fn run(a: &ServeArgs, data_dir: &Path) -> CliResult {
    let model = a.model.as_deref().map(LstmModel::load).transpose()?.map(Arc::new);
    if let Some(dir) = &a.static_dir {
        if !dir.is_dir() {
            return Err(Error::File {
                path: dir.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "static directory not found"),
            });
        }
    }
    let state = Arc::new(AppState {
        model,
        data_dir: data_dir.to_path_buf(),
        lockstep: a.lockstep,
    });
    let mut app = Router::new().route("/ws", get(upgrade));
    app = match &a.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    let app = app.with_state(state);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        let addr = listener.local_addr()?;
        println!("{}", serde_json::json!({ "listening": addr.to_string(), "lockstep": a.lockstep }));
        log::info!("serving on {addr}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

enum Inbound {
    Text(String),
    Closed,
}

/// The socket reader and writer run as their own tasks; only the driver
/// touches the session.
async fn connection(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let (in_tx, in_rx) = mpsc::unbounded_channel();
    let (out_tx, mut out_rx) = mpsc::channel::<String>(OUTBOX);

    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => {
                    if in_tx.send(Inbound::Text(text)).is_err() {
                        break;
                    }
                }
                Message::Close(_) => break,
                _ => {}
            }
        }
        let _ = in_tx.send(Inbound::Closed);
    });
    let writer = tokio::spawn(async move {
        while let Some(text) = out_rx.recv().await {
            if sink.send(Message::Text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    Driver {
        state,
        session: None,
        out: out_tx,
    }
    .run(in_rx)
    .await;
    reader.abort();
    let _ = writer.await;
}

struct Driver {
    state: Arc<AppState>,
    session: Option<LiveSession>,
    out: mpsc::Sender<String>,
}

impl Driver {
    async fn run(mut self, mut inbox: mpsc::UnboundedReceiver<Inbound>) {
        let mut timer = interval(Duration::from_secs_f64(DT));
        // catching up after a stall keeps the long-run rate at 30 Hz
        timer.set_missed_tick_behavior(MissedTickBehavior::Burst);
        loop {
            let timed = self.session.is_some() && !self.state.lockstep;
            tokio::select! {
                msg = inbox.recv() => match msg {
                    Some(Inbound::Text(text)) => {
                        let started = self.session.is_none();
                        self.handle(&text).await;
                        if started && self.session.is_some() {
                            timer.reset();
                        }
                    }
                    Some(Inbound::Closed) | None => {
                        self.finish().await;
                        break;
                    }
                },
                _ = timer.tick(), if timed => self.step().await,
            }
        }
    }

    async fn send(&self, msg: &ServerMessage) {
        let _ = self.out.send(serde_json::to_string(msg).expect("messages serialize")).await;
    }

    async fn error(&self, e: &Error) {
        self.send(&ServerMessage::error(e)).await;
    }

    async fn handle(&mut self, text: &str) {
        let msg = match parse_client_message(text) {
            Ok(m) => m,
            Err(e) => return self.error(&e).await,
        };
        if let ClientMessage::Start { .. } = msg {
            if self.session.is_some() {
                return self.error(&Error::Protocol("session already started".into())).await;
            }
            let created_at = (!self.state.lockstep).then(timestamp);
            match LiveSession::start(&msg, self.state.model.clone(), created_at) {
                Ok((session, ready)) => {
                    self.session = Some(session);
                    self.send(&ready).await;
                }
                Err(e) => self.error(&e).await,
            }
            return;
        }
        let Some(session) = self.session.as_mut() else {
            return self.error(&Error::Protocol("no session; send `start` first".into())).await;
        };
        if let Err(e) = session.apply(&msg) {
            return self.error(&e).await;
        }
        if session.is_finished() {
            self.finish().await;
        } else if self.state.lockstep && matches!(msg, ClientMessage::Pointer { .. }) {
            self.step().await;
        }
    }

    async fn step(&mut self) {
        let Some(session) = self.session.as_mut() else {
            return;
        };
        match session.step() {
            // a full outbox drops the tick on the wire; the log keeps it
            Ok(tick) => {
                let _ = self.out.try_send(serde_json::to_string(&tick).expect("messages serialize"));
            }
            Err(e) => return self.error(&e).await,
        }
        if session.is_finished() {
            self.finish().await;
        }
    }

    /// Persists the log and reports the summary.
    async fn finish(&mut self) {
        let Some(session) = self.session.take() else {
            return;
        };
        let path = self.state.data_dir.join(format!("live-{}.jsonl", session.id()));
        let saved = std::fs::create_dir_all(&self.state.data_dir)
            .map_err(|source| Error::File {
                path: self.state.data_dir.clone(),
                source,
            })
            .and_then(|_| write_log(&session.log(), &path));
        let log_path = match saved {
            Ok(()) => Some(path.display().to_string()),
            Err(e) => {
                log::error!("could not persist session {}: {e}", session.id());
                self.error(&e).await;
                None
            }
        };
        self.send(&ServerMessage::SessionEnd {
            summary: session.summary(log_path),
        })
        .await;
    }
}

fn timestamp() -> String {
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:03}", d.as_secs(), d.subsec_millis())
}

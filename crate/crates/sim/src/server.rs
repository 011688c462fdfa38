use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Json};
use axum::routing::get;
use axum::Router;
use lrsim_data::Episode;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tower_http::services::ServeDir;

use crate::error::SimError;
use crate::session::{ActionCommand, Session, SessionSeed, SimModel, DEFAULT_WARMUP};

pub const WS_PATH: &str = "/ws";
pub const HEALTH_PATH: &str = "/health";

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Directory served at `/` (the browser cockpit).
    pub static_dir: Option<PathBuf>,
    /// Base for relative `seed_episode` paths.
    pub episode_root: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    model: Arc<SimModel>,
    episode_root: Option<PathBuf>,
    shutdown: watch::Receiver<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMessage {
    Reset {
        #[serde(default = "default_warmup")]
        warmup: usize,
        #[serde(default)]
        seed_episode: Option<String>,
        #[serde(default)]
        rng_seed: Option<u64>,
    },
    Action {
        steer_deg: f64,
        speed_mps: f64,
    },
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP
}

fn error_message(message: impl std::fmt::Display) -> Value {
    json!({"type": "error", "message": message.to_string()})
}

pub fn health(model: &SimModel) -> Value {
    let g = model.geometry();
    json!({
        "status": "ok",
        "width": g.width,
        "height": g.height,
        "latent_dim": model.latent_dim(),
        "band": model.band().as_array(),
        "rate_hz": model.rate_hz(),
    })
}

fn ready_message(model: &SimModel, session: &Session) -> Value {
    let g = model.geometry();
    json!({
        "type": "ready",
        "t": session.t(),
        "width": g.width,
        "height": g.height,
        "latent_dim": model.latent_dim(),
        "band": model.band().as_array(),
        "steer_range": model.limits.steer_deg,
        "speed_range": model.limits.speed_mps,
    })
}

/// Router with `/health`, the websocket at `/ws` and optional static files.
pub fn router(model: Arc<SimModel>, config: ServerConfig, shutdown: watch::Receiver<bool>) -> Router {
    let state = AppState { model, episode_root: config.episode_root, shutdown };
    let app = Router::new()
        .route(HEALTH_PATH, get(health_handler))
        .route(WS_PATH, get(ws_handler))
        .with_state(state);
    match config.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until `shutdown` resolves; open sessions then receive an error
/// message and are closed.
pub async fn serve(
    listener: TcpListener,
    model: Arc<SimModel>,
    config: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (tx, rx) = watch::channel(false);
    let app = router(model, config, rx);
    let signal = async move {
        shutdown.await;
        log::info!("shutting down");
        let _ = tx.send(true);
    };
    axum::serve(listener, app).with_graceful_shutdown(signal).await
}

async fn health_handler(State(state): State<AppState>) -> Json<Value> {
    Json(health(&state.model))
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_connection(socket, state))
}

async fn send(socket: &mut WebSocket, msg: Value) -> bool {
    socket.send(Message::Text(msg.to_string().into())).await.is_ok()
}

async fn run_connection(mut socket: WebSocket, state: AppState) {
    let mut shutdown = state.shutdown.clone();
    let mut session: Option<Session> = None;
    loop {
        let incoming = tokio::select! {
            msg = socket.recv() => msg,
            _ = async { drop(shutdown.wait_for(|stop| *stop).await) } => {
                send(&mut socket, error_message("server shutting down")).await;
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
        };
        let text = match incoming {
            Some(Ok(Message::Text(t))) => t.to_string(),
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
            Some(Ok(Message::Binary(_))) => {
                if !send(&mut socket, error_message("binary messages are not supported")).await {
                    return;
                }
                continue;
            }
            Some(Ok(_)) => continue,
        };
        let reply = match serde_json::from_str::<ClientMessage>(&text) {
            Err(e) => error_message(format!("malformed message: {e}")),
            Ok(msg) => handle(&state, &mut session, msg).await,
        };
        if !send(&mut socket, reply).await {
            return;
        }
    }
}

fn resolve(root: Option<&Path>, path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p,
    }
}

async fn handle(state: &AppState, session: &mut Option<Session>, msg: ClientMessage) -> Value {
    let model = Arc::clone(&state.model);
    match msg {
        ClientMessage::Reset { warmup, seed_episode, rng_seed } => {
            let root = state.episode_root.clone();
            let built = tokio::task::spawn_blocking(move || -> Result<Session, SimError> {
                if warmup == 0 {
                    return model.new_session(SessionSeed::Prior { rng_seed: rng_seed.unwrap_or(0) });
                }
                let path = seed_episode.ok_or_else(|| SimError::Input("reset with warm-up needs `seed_episode`".into()))?;
                let episode = Episode::load(&resolve(root.as_deref(), &path))?;
                model.new_session(SessionSeed::Episode { episode: &episode, warmup })
            })
            .await;
            match built {
                Ok(Ok(s)) => {
                    let ready = ready_message(&state.model, &s);
                    *session = Some(s);
                    ready
                }
                Ok(Err(e)) => error_message(e),
                Err(e) => error_message(format!("reset task failed: {e}")),
            }
        }
        ClientMessage::Action { steer_deg, speed_mps } => {
            let Some(mut s) = session.take() else {
                return error_message("no session: send a reset first");
            };
            let stepped = tokio::task::spawn_blocking(move || {
                let out = model.step(&mut s, ActionCommand { steer_deg, speed_mps });
                (s, out)
            })
            .await;
            match stepped {
                Ok((s, out)) => {
                    *session = Some(s);
                    match out {
                        Ok(frame) => frame.to_json(),
                        Err(e) => error_message(e),
                    }
                }
                Err(e) => error_message(format!("step task failed: {e}")),
            }
        }
    }
}

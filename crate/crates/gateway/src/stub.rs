//! In-process stand-in for a completion and scoring server, with canned
//! bodies and fault injection, for tests and offline runs.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

#[derive(Debug, Clone, PartialEq)]
pub enum StubScore {
    Fixed(f64),
    /// Replies with the JSON string `"NaN"`.
    NotANumber,
    /// Character count of the submitted response.
    ResponseLength,
}

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub completion_text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: String,
    /// Served verbatim instead of a generated completion body.
    pub raw_completion_body: Option<String>,
    pub score: StubScore,
    /// Number of initial requests answered with `fail_status`.
    pub fail_first: usize,
    pub fail_status: u16,
    pub delay_ms: u64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            completion_text: " and that is all.".into(),
            token_logprobs: None,
            finish_reason: "stop".into(),
            raw_completion_body: None,
            score: StubScore::Fixed(0.0),
            fail_first: 0,
            fail_status: 503,
            delay_ms: 0,
        }
    }
}

#[derive(Debug)]
struct StubState {
    cfg: StubConfig,
    failures_left: AtomicUsize,
    hits: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: Mutex<Vec<Value>>,
}

impl StubState {
    /// Counts the request, applies the delay and decides on injected failure.
    async fn enter(&self, body: Value) -> Option<Response> {
        self.hits.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.requests.lock().expect("stub poisoned").push(body);
        if self.cfg.delay_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.cfg.delay_ms)).await;
        }
        let fail = self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        fail.then(|| {
            let status = StatusCode::from_u16(self.cfg.fail_status).unwrap_or(StatusCode::SERVICE_UNAVAILABLE);
            (status, "injected failure").into_response()
        })
    }
}

async fn complete(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    if let Some(fail) = state.enter(body).await {
        return fail;
    }
    let cfg = &state.cfg;
    if let Some(raw) = &cfg.raw_completion_body {
        return ([("content-type", "application/json")], raw.clone()).into_response();
    }
    let mut choice = json!({ "index": 0, "text": cfg.completion_text, "finish_reason": cfg.finish_reason });
    if let Some(lp) = &cfg.token_logprobs {
        choice["logprobs"] = json!({ "token_logprobs": lp });
    }
    let mut out = json!({ "id": "stub", "object": "text_completion", "choices": [choice] });
    if let Some(lp) = &cfg.token_logprobs {
        out["usage"] = json!({ "completion_tokens": lp.len() });
    }
    Json(out).into_response()
}

async fn score(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    let length = body.get("response").and_then(Value::as_str).map_or(0, |s| s.chars().count());
    if let Some(fail) = state.enter(body).await {
        return fail;
    }
    let value = match state.cfg.score {
        StubScore::Fixed(v) => json!(v),
        StubScore::NotANumber => json!("NaN"),
        StubScore::ResponseLength => json!(length as f64),
    };
    Json(json!({ "score": value })).into_response()
}

/// A running stub bound to an ephemeral localhost port. Stops on drop.
#[derive(Debug)]
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl StubServer {
    pub async fn start(cfg: StubConfig) -> std::io::Result<Self> {
        let state = Arc::new(StubState {
            failures_left: AtomicUsize::new(cfg.fail_first),
            cfg,
            hits: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        });
        let app = Router::new()
            .route("/v1/completions", post(complete))
            .route("/v1/score", post(score))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    /// Highest number of requests seen in flight at once.
    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }

    /// Request bodies in arrival order.
    pub fn requests(&self) -> Vec<Value> {
        self.state.requests.lock().expect("stub poisoned").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

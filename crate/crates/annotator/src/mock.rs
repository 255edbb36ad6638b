//! Scripted in-process chat-completion endpoint for tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

pub enum MockReply {
    Content(String),
    Status(u16),
}

/// Maps (request index, prompt) to a reply.
pub type Script = Arc<dyn Fn(usize, &str) -> MockReply + Send + Sync>;

#[derive(Default)]
pub struct MockStats {
    pub requests: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub authorization: Mutex<Vec<String>>,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
struct AppState {
    script: Script,
    delay: Duration,
    stats: Arc<MockStats>,
}

pub struct MockServer {
    pub base_url: String,
    pub stats: Arc<MockStats>,
    task: tokio::task::JoinHandle<()>,
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl MockServer {
    /// Serves `POST /v1/chat/completions` on an ephemeral local port. Each
    /// request is held for `delay` so concurrency is observable.
    pub async fn start(script: Script, delay: Duration) -> std::io::Result<Self> {
        let stats = Arc::new(MockStats::default());
        let state = AppState { script, delay, stats: stats.clone() };
        let app = Router::new().route("/v1/chat/completions", post(handle)).with_state(state);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app).await;
        });
        Ok(Self { base_url: format!("http://{addr}/v1"), stats, task })
    }

    /// Always replies with `content`.
    pub fn constant(content: impl Into<String>) -> Script {
        let content = content.into();
        Arc::new(move |_, _| MockReply::Content(content.clone()))
    }
}

async fn handle(State(st): State<AppState>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let index = st.stats.requests.fetch_add(1, Ordering::SeqCst);
    let now = st.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    st.stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
    if let Some(a) = headers.get("authorization").and_then(|v| v.to_str().ok()) {
        st.stats.authorization.lock().unwrap().push(a.to_string());
    }
    tokio::time::sleep(st.delay).await;
    let prompt = body["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    let reply = (st.script)(index, &prompt);
    st.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
    match reply {
        MockReply::Status(code) => {
            (StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), "scripted failure").into_response()
        }
        MockReply::Content(content) => Json(json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": prompt.split_whitespace().count(), "completion_tokens": content.split_whitespace().count()},
        }))
        .into_response(),
    }
}

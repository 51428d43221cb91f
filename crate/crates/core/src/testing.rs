//! Offline stand-ins for the external services: a scriptable
//! chat-completions server and a deterministic "model" over a dataset.
//! Enabled by the `test-support` feature.

use std::collections::HashMap;
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
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::textmetrics::nfc;

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Status(u16),
    /// A 200 response whose body is not a completion.
    Malformed,
}

type ReplyFn = dyn Fn(&str, u32) -> MockReply + Send + Sync;

struct Shared {
    reply: Box<ReplyFn>,
    delay: Duration,
    requests: Mutex<Vec<Value>>,
    attempts: Mutex<HashMap<String, u32>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

/// A local HTTP server speaking the chat-completions shape. The reply
/// function receives the question (the last user turn, or the last block
/// of a text prompt) and the 1-based attempt number for that question.
pub struct MockLlm {
    pub url: String,
    shared: Arc<Shared>,
    server: tokio::task::JoinHandle<()>,
}

impl MockLlm {
    pub async fn start<F>(reply: F) -> Self
    where
        F: Fn(&str, u32) -> MockReply + Send + Sync + 'static,
    {
        Self::start_with_delay(reply, Duration::ZERO).await
    }

    pub async fn start_with_delay<F>(reply: F, delay: Duration) -> Self
    where
        F: Fn(&str, u32) -> MockReply + Send + Sync + 'static,
    {
        let shared = Arc::new(Shared {
            reply: Box::new(reply),
            delay,
            requests: Mutex::new(Vec::new()),
            attempts: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(handle))
            .with_state(Arc::clone(&shared));
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
            .await
            .expect("bind mock server");
        let addr = listener.local_addr().expect("local addr");
        let server = tokio::spawn(async move {
            axum::serve(listener, app).await.expect("mock server");
        });
        Self {
            url: format!("http://{addr}/v1/chat/completions"),
            shared,
            server,
        }
    }

    /// Request bodies received so far, in arrival order.
    pub fn requests(&self) -> Vec<Value> {
        self.shared.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.lock().unwrap().len()
    }

    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }
}

impl Drop for MockLlm {
    fn drop(&mut self) {
        self.server.abort();
    }
}

/// The question a request body asks.
pub fn question_of(body: &Value) -> String {
    if let Some(messages) = body["messages"].as_array() {
        return messages
            .iter()
            .rev()
            .find(|m| m["role"] == "user")
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
            .to_owned();
    }
    let prompt = body["prompt"].as_str().unwrap_or("");
    let last = prompt.rsplit("\n\n").next().unwrap_or("");
    last.strip_suffix("\nA:").unwrap_or(last).to_owned()
}

async fn handle(State(shared): State<Arc<Shared>>, Json(body): Json<Value>) -> Response {
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.max_in_flight.fetch_max(now, Ordering::SeqCst);
    let question = question_of(&body);
    shared.requests.lock().unwrap().push(body);
    let attempt = {
        let mut attempts = shared.attempts.lock().unwrap();
        let n = attempts.entry(question.clone()).or_insert(0);
        *n += 1;
        *n
    };
    if !shared.delay.is_zero() {
        tokio::time::sleep(shared.delay).await;
    }
    let reply = (shared.reply)(&question, attempt);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    match reply {
        MockReply::Text(text) => Json(json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "text": text}]
        }))
        .into_response(),
        MockReply::Status(code) => (
            StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            "mock failure",
        )
            .into_response(),
        MockReply::Malformed => (StatusCode::OK, "{\"unexpected\": true").into_response(),
    }
}

/// A deterministic stand-in model over `dataset`'s original questions.
///
/// Most QA answers are the ground truth; roughly one in six is swapped for
/// another item's answer in the same language. Timeliness answers pick the
/// newest candidate most of the time and an outdated one otherwise. Every
/// reply carries a trailing explanation line. Unknown questions get
/// "I don't know".
pub fn scripted_model(dataset: &Dataset) -> impl Fn(&str, u32) -> MockReply + Send + Sync + 'static {
    let mut table: HashMap<String, String> = HashMap::new();
    for lang in &dataset.languages {
        let items = &dataset.qa_items;
        for (n, item) in items.iter().enumerate() {
            let (Some(q), Some(truth)) = (item.question(lang), item.answer(lang)) else {
                continue;
            };
            let h = bucket(lang.as_str(), &item.id);
            let answer = if h.is_multiple_of(6) {
                items[(n + 1) % items.len()].answer(lang).unwrap_or(truth)
            } else {
                truth
            };
            table.insert(nfc(q), answer.to_owned());
        }
        for item in &dataset.timeliness_items {
            let (Some(q), Some(cands)) = (item.question(lang), item.candidates(lang)) else {
                continue;
            };
            let pick = [0, 0, 1, 2][bucket(lang.as_str(), &item.id) as usize % 4].min(cands.len() - 1);
            table.insert(nfc(q), cands[pick].clone());
        }
    }
    move |question, _| {
        let answer = table
            .get(&nfc(question))
            .map_or("I don't know", String::as_str);
        MockReply::Text(format!("{answer}\nThis answer was produced offline."))
    }
}

fn bucket(lang: &str, id: &str) -> u8 {
    let digest = Sha256::new()
        .chain_update(lang.as_bytes())
        .chain_update([0])
        .chain_update(id.as_bytes())
        .finalize();
    digest[0]
}

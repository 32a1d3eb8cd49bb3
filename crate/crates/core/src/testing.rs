//! Test support: a minimal in-process HTTP stub server and deterministic
//! embedding stubs. Used by this crate's own tests and by downstream
//! integration tests; not part of the evaluation pipeline.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use sha2::{Digest, Sha256};

/// A parsed request as seen by a stub handler.
pub struct StubRequest {
    pub method: String,
    pub path: String,
    pub body: serde_json::Value,
}

pub struct StubResponse {
    pub status: u16,
    pub body: String,
}

impl StubResponse {
    pub fn json(status: u16, body: impl ToString) -> Self {
        StubResponse {
            status,
            body: body.to_string(),
        }
    }
}

/// Single-purpose loopback HTTP server. Each connection is handled on its own
/// thread; `max_in_flight` records the highest number of concurrently active
/// requests, which lets tests assert concurrency limits from the outside.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
    in_flight: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
    calls: Arc<AtomicUsize>,
    delay_ms: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn spawn<F>(handler: F) -> Self
    where
        F: Fn(&StubRequest) -> StubResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().unwrap();
        let shutdown = Arc::new(AtomicBool::new(false));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let calls = Arc::new(AtomicUsize::new(0));
        let delay_ms = Arc::new(AtomicUsize::new(0));

        let handler = Arc::new(handler);
        let accept_shutdown = Arc::clone(&shutdown);
        let accept_in_flight = Arc::clone(&in_flight);
        let accept_max = Arc::clone(&max_in_flight);
        let accept_calls = Arc::clone(&calls);
        let accept_delay = Arc::clone(&delay_ms);

        let accept_handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                let in_flight = Arc::clone(&accept_in_flight);
                let max = Arc::clone(&accept_max);
                let calls = Arc::clone(&accept_calls);
                let delay = Arc::clone(&accept_delay);
                std::thread::spawn(move || {
                    let current = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                    max.fetch_max(current, Ordering::SeqCst);
                    calls.fetch_add(1, Ordering::SeqCst);
                    let pause = delay.load(Ordering::SeqCst);
                    if pause > 0 {
                        std::thread::sleep(std::time::Duration::from_millis(pause as u64));
                    }
                    let _ = handle_connection(stream, handler.as_ref());
                    in_flight.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });

        StubServer {
            addr,
            shutdown,
            accept_handle: Some(accept_handle),
            in_flight,
            max_in_flight,
            calls,
            delay_ms,
        }
    }

    /// Base URL, e.g. `http://127.0.0.1:49152/`.
    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn current_in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    /// Adds a fixed per-request delay, widening the window in which
    /// concurrent requests overlap.
    #[must_use]
    pub fn with_delay_ms(self, ms: usize) -> Self {
        self.delay_ms.store(ms, Ordering::SeqCst);
        self
    }

    /// Chat-completion endpoint: applies `transform` to the first message's
    /// content and wraps it in the standard response envelope.
    pub fn chat<F>(transform: F) -> Self
    where
        F: Fn(&str) -> String + Send + Sync + 'static,
    {
        Self::spawn(move |req| {
            let content = req.body["messages"][0]["content"].as_str().unwrap_or("");
            let reply = transform(content);
            let body = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": reply}}]
            });
            StubResponse::json(200, body.to_string())
        })
    }

    /// Embedding endpoint producing [`hash_embedding`] vectors of the given
    /// dimension for each input.
    pub fn embed(dim: usize) -> Self {
        Self::spawn(move |req| {
            let inputs = req.body["input"].as_array().cloned().unwrap_or_default();
            let data: Vec<serde_json::Value> = inputs
                .iter()
                .map(|v| {
                    let text = v.as_str().unwrap_or("");
                    serde_json::json!({"embedding": hash_embedding(text, dim)})
                })
                .collect();
            StubResponse::json(200, serde_json::json!({ "data": data }).to_string())
        })
    }

    /// Combined chat + embedding endpoint, dispatching on request shape. Lets
    /// one server back a full gateway config.
    pub fn chat_and_embed<F>(transform: F, dim: usize) -> Self
    where
        F: Fn(&str) -> String + Send + Sync + 'static,
    {
        Self::spawn(move |req| {
            if req.body.get("messages").is_some() {
                let content = req.body["messages"][0]["content"].as_str().unwrap_or("");
                let reply = transform(content);
                let body = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": reply}}]
                });
                StubResponse::json(200, body.to_string())
            } else {
                let inputs = req.body["input"].as_array().cloned().unwrap_or_default();
                let data: Vec<serde_json::Value> = inputs
                    .iter()
                    .map(|v| {
                        let text = v.as_str().unwrap_or("");
                        serde_json::json!({"embedding": hash_embedding(text, dim)})
                    })
                    .collect();
                StubResponse::json(200, serde_json::json!({ "data": data }).to_string())
            }
        })
    }

    /// Pair-scoring endpoint for the remote verifier wire format.
    pub fn scorer<F>(score: F) -> Self
    where
        F: Fn(&str, &str) -> f64 + Send + Sync + 'static,
    {
        Self::spawn(move |req| {
            let a = req.body["text_a"].as_str().unwrap_or("");
            let b = req.body["text_b"].as_str().unwrap_or("");
            let body = serde_json::json!({"score": score(a, b)});
            StubResponse::json(200, body.to_string())
        })
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop with a throwaway connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection<F>(mut stream: TcpStream, handler: &F) -> std::io::Result<()>
where
    F: Fn(&StubRequest) -> StubResponse,
{
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end;
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_header_end(&buf) {
            header_end = pos;
            break;
        }
        if buf.len() > 1 << 20 {
            return Ok(());
        }
    }
    let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = header_text.lines();
    let request_line = lines.next().unwrap_or_default();
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("/").to_string();
    let content_length = lines
        .filter_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .next()
        .unwrap_or(0);

    let mut body_bytes = buf[header_end + 4..].to_vec();
    while body_bytes.len() < content_length {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            break;
        }
        body_bytes.extend_from_slice(&chunk[..n]);
    }
    let body: serde_json::Value =
        serde_json::from_slice(&body_bytes).unwrap_or(serde_json::Value::Null);

    let response = handler(&StubRequest { method, path, body });
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let payload = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    stream.write_all(payload.as_bytes())?;
    stream.flush()
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Deterministic pseudo-embedding: unit vector derived from the SHA-256 of
/// the text. Identical texts map to identical vectors; distinct texts map to
/// effectively uncorrelated ones.
pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(text.as_bytes());
    let mut values: Vec<f64> = (0..dim)
        .map(|i| digest[i % digest.len()] as f64 - 127.5)
        .collect();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        if let Some(first) = values.first_mut() {
            *first = 1.0;
        }
        return values;
    }
    for v in &mut values {
        *v /= norm;
    }
    values
}

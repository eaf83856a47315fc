//! Local stand-ins for the network: a static fixture web server with a
//! request log, and a scripted chat-completion endpoint. Used by the
//! integration tests and handy for trying the CLI offline.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, LazyLock, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use flate2::write::GzEncoder;
use flate2::Compression;
use regex::Regex;
use tiny_http::{Header, Request, Response, Server};
use url::Url;

/// One request as seen by a [`FixtureServer`].
#[derive(Debug, Clone)]
pub struct RequestLog {
    pub path: String,
    pub user_agent: Option<String>,
    pub status: u16,
    /// When the request line arrived.
    pub started: Instant,
    /// Just before the response was written; the client cannot have
    /// finished the request earlier than this.
    pub responding: Instant,
    /// After the response was written.
    pub finished: Instant,
}

#[derive(Default)]
struct ServerState {
    log: Vec<RequestLog>,
    scripts: HashMap<String, Vec<u16>>,
    latency: Duration,
    in_flight: usize,
}

#[derive(Default)]
struct Shared {
    state: Mutex<ServerState>,
    idle: Condvar,
}

/// Serves files from a directory on an ephemeral loopback port.
///
/// `{{origin}}` in text files is replaced with the server's origin
/// (`http://127.0.0.1:PORT`), and a request for `X.gz` is answered by
/// gzipping `X` when no such file exists. Requests are handled on their
/// own threads so overlapping requests would show up in the log.
pub struct FixtureServer {
    server: Arc<Server>,
    origin: Url,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

fn content_type(path: &str) -> &'static str {
    match Path::new(path).extension().and_then(|e| e.to_str()) {
        Some("html" | "htm") => "text/html; charset=utf-8",
        Some("xml") => "application/xml",
        Some("txt") => "text/plain; charset=utf-8",
        Some("json") => "application/json",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("gz") => "application/gzip",
        _ => "application/octet-stream",
    }
}

fn is_text(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("html" | "htm" | "xml" | "txt" | "json")
    )
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes).expect("in-memory gzip");
    enc.finish().expect("in-memory gzip")
}

fn load_body(root: &Path, origin: &str, url_path: &str) -> Option<Vec<u8>> {
    let rel = url_path.trim_start_matches('/');
    if rel.split('/').any(|seg| seg == "..") {
        return None;
    }
    let rel = if rel.is_empty() || rel.ends_with('/') {
        format!("{rel}index.html")
    } else {
        rel.to_string()
    };
    let file = root.join(&rel);
    let read = |p: &Path| -> Option<Vec<u8>> {
        let bytes = fs::read(p).ok()?;
        if is_text(p) {
            let text = String::from_utf8_lossy(&bytes).replace("{{origin}}", origin);
            Some(text.into_bytes())
        } else {
            Some(bytes)
        }
    };
    if file.is_file() {
        return read(&file);
    }
    let plain = rel.strip_suffix(".gz")?;
    read(&root.join(plain)).map(|b| gzip(&b))
}

impl FixtureServer {
    pub fn start(root: impl Into<PathBuf>) -> Self {
        let root: PathBuf = root.into();
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind loopback"));
        let port = server.server_addr().to_ip().expect("tcp listener").port();
        let origin = Url::parse(&format!("http://127.0.0.1:{port}/")).unwrap();
        let shared = Arc::new(Shared::default());

        let srv = server.clone();
        let st = shared.clone();
        let origin_str = origin.as_str().trim_end_matches('/').to_string();
        let handle = thread::spawn(move || {
            let mut workers = Vec::new();
            for request in srv.incoming_requests() {
                let root = root.clone();
                let st = st.clone();
                st.state.lock().unwrap().in_flight += 1;
                let origin_str = origin_str.clone();
                workers.push(thread::spawn(move || {
                    serve(request, &root, &origin_str, &st)
                }));
            }
            for w in workers {
                let _ = w.join();
            }
        });
        FixtureServer {
            server,
            origin,
            shared,
            handle: Some(handle),
        }
    }

    pub fn origin(&self) -> &Url {
        &self.origin
    }

    pub fn url(&self, path: &str) -> Url {
        self.origin.join(path).expect("valid path")
    }

    /// Answer the next requests for `path` with these statuses, in order,
    /// before serving the file normally.
    pub fn script(&self, path: &str, statuses: &[u16]) {
        self.shared
            .state
            .lock()
            .unwrap()
            .scripts
            .insert(path.to_string(), statuses.to_vec());
    }

    /// Delay every response by `latency`.
    pub fn set_latency(&self, latency: Duration) {
        self.shared.state.lock().unwrap().latency = latency;
    }

    /// Every request so far, in order of arrival. Waits for requests that
    /// are still being answered, since a client can read a response before
    /// the handler has logged it.
    pub fn requests(&self) -> Vec<RequestLog> {
        let st = self.shared.state.lock().unwrap();
        let st = self
            .shared
            .idle
            .wait_while(st, |s| s.in_flight > 0)
            .unwrap();
        let mut log = st.log.clone();
        log.sort_by_key(|r| r.started);
        log
    }

    pub fn requested_paths(&self) -> Vec<String> {
        self.requests().into_iter().map(|r| r.path).collect()
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(request: Request, root: &Path, origin: &str, shared: &Shared) {
    let state = &shared.state;
    let started = Instant::now();
    let path = request
        .url()
        .split(['?', '#'])
        .next()
        .unwrap_or("/")
        .to_string();
    let user_agent = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("User-Agent"))
        .map(|h| h.value.to_string());
    let (scripted, latency) = {
        let mut st = state.lock().unwrap();
        let scripted = st.scripts.get_mut(&path).and_then(|s| {
            if s.is_empty() {
                None
            } else {
                Some(s.remove(0))
            }
        });
        (scripted, st.latency)
    };
    if !latency.is_zero() {
        thread::sleep(latency);
    }
    let responding = Instant::now();
    let status = match scripted {
        Some(code) => {
            let _ = request.respond(Response::from_string("scripted").with_status_code(code));
            code
        }
        None => match load_body(root, origin, &path) {
            Some(body) => {
                let header =
                    Header::from_bytes("Content-Type", content_type(&path)).expect("ascii header");
                let _ = request.respond(Response::from_data(body).with_header(header));
                200
            }
            None => {
                let _ = request.respond(Response::from_string("not found").with_status_code(404));
                404
            }
        },
    };
    let mut st = state.lock().unwrap();
    st.log.push(RequestLog {
        path,
        user_agent,
        status,
        started,
        responding,
        finished: Instant::now(),
    });
    st.in_flight -= 1;
    shared.idle.notify_all();
}

static LABEL_IN_PROMPT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)Label: (.*?) Text: ").unwrap());

/// Scripted chat-completion endpoint.
///
/// Replies are chosen by the product label found in the user prompt. A
/// label with several scripted replies gets them in order, the last one
/// repeating. Labels without a script get `fallback`, or HTTP 500 when
/// there is none.
pub struct MockLlm {
    server: Arc<Server>,
    url: Url,
    bodies: Arc<Mutex<Vec<serde_json::Value>>>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Default)]
struct LlmScript {
    replies: HashMap<String, Vec<String>>,
    calls: HashMap<String, usize>,
    fallback: Option<String>,
    status: Option<u16>,
}

impl MockLlm {
    pub fn start(replies: HashMap<String, Vec<String>>, fallback: Option<String>) -> Self {
        Self::with_script(LlmScript {
            replies,
            fallback,
            ..Default::default()
        })
    }

    /// A mock whose every request fails with `status`.
    pub fn failing(status: u16) -> Self {
        Self::with_script(LlmScript {
            status: Some(status),
            ..Default::default()
        })
    }

    /// Load replies from a JSON object mapping labels to a reply or a list
    /// of replies. The key `"*"` sets the fallback.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let value: HashMap<String, serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let mut replies = HashMap::new();
        let mut fallback = None;
        for (label, v) in value {
            let list: Vec<String> = match v {
                serde_json::Value::String(s) => vec![s],
                serde_json::Value::Array(items) => items
                    .into_iter()
                    .filter_map(|i| i.as_str().map(str::to_string))
                    .collect(),
                _ => continue,
            };
            if label == "*" {
                fallback = list.into_iter().next();
            } else {
                replies.insert(label, list);
            }
        }
        Ok(Self::start(replies, fallback))
    }

    fn with_script(script: LlmScript) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind loopback"));
        let port = server.server_addr().to_ip().expect("tcp listener").port();
        let url = Url::parse(&format!("http://127.0.0.1:{port}/v1/chat/completions")).unwrap();
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let script = Arc::new(Mutex::new(script));

        let srv = server.clone();
        let seen = bodies.clone();
        let handle = thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let mut raw = String::new();
                let _ = request.as_reader().read_to_string(&mut raw);
                let body: serde_json::Value =
                    serde_json::from_str(&raw).unwrap_or(serde_json::Value::Null);
                seen.lock().unwrap().push(body.clone());
                let reply = next_reply(&mut script.lock().unwrap(), &body);
                let response = match reply {
                    Ok(content) => {
                        let json = serde_json::json!({
                            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]
                        });
                        Response::from_string(json.to_string()).with_header(
                            Header::from_bytes("Content-Type", "application/json").unwrap(),
                        )
                    }
                    Err(status) => Response::from_string("error").with_status_code(status),
                };
                let _ = request.respond(response);
            }
        });
        MockLlm {
            server,
            url,
            bodies,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> &Url {
        &self.url
    }

    /// JSON bodies of every request received so far.
    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.bodies.lock().unwrap().clone()
    }
}

fn next_reply(script: &mut LlmScript, body: &serde_json::Value) -> Result<String, u16> {
    if let Some(status) = script.status {
        return Err(status);
    }
    let user = body["messages"]
        .as_array()
        .and_then(|m| m.iter().find(|m| m["role"] == "user"))
        .and_then(|m| m["content"].as_str())
        .ok_or(400u16)?;
    let label = LABEL_IN_PROMPT
        .captures(user)
        .map(|c| c[1].to_string())
        .unwrap_or_default();
    match script.replies.get(&label) {
        Some(list) if !list.is_empty() => {
            let n = script.calls.entry(label).or_default();
            let reply = list[(*n).min(list.len() - 1)].clone();
            *n += 1;
            Ok(reply)
        }
        _ => script.fallback.clone().ok_or(500),
    }
}

impl Drop for MockLlm {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

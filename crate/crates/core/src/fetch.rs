//! Polite HTTP fetching: one request at a time per host, a minimum delay
//! between consecutive requests to the same host, robots checks before any
//! network I/O and bounded retries with exponential backoff.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use url::Url;

use crate::config::Politeness;
use crate::robots::RobotsPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("{0} is disallowed by robots.txt")]
    Disallowed(Url),
    #[error("{0} is not on the policy's origin")]
    OffOrigin(Url),
    #[error("HTTP {status} for {url}")]
    HttpError { url: Url, status: u16 },
    #[error("timeout fetching {0}")]
    Timeout(Url),
    #[error("transport error for {url}: {message}")]
    Transport { url: Url, message: String },
}

impl FetchError {
    /// Short stable reason used in provenance counts.
    pub fn reason(&self) -> &'static str {
        match self {
            FetchError::Disallowed(_) => "robots",
            FetchError::OffOrigin(_) => "off-origin",
            FetchError::HttpError { .. } => "http-error",
            FetchError::Timeout(_) => "timeout",
            FetchError::Transport { .. } => "transport",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub url: Url,
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
    /// Attempts beyond the first.
    pub retries: u32,
}

#[derive(Debug)]
struct HostState {
    last_done: Option<Instant>,
    delay: Duration,
}

/// Shared per-host schedule. Holding a host's slot for the duration of a
/// request is what serializes requests to that host.
#[derive(Debug)]
pub struct HostGate {
    min_delay: Duration,
    slots: Mutex<HashMap<String, Arc<Mutex<HostState>>>>,
}

impl HostGate {
    pub fn new(min_delay: Duration) -> Self {
        HostGate {
            min_delay,
            slots: Mutex::new(HashMap::new()),
        }
    }

    fn slot(&self, host: &str) -> Arc<Mutex<HostState>> {
        let mut slots = self.slots.lock().unwrap();
        slots
            .entry(host.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(HostState {
                    last_done: None,
                    delay: self.min_delay,
                }))
            })
            .clone()
    }

    /// Raise the delay for one host (e.g. from a robots.txt crawl-delay).
    /// The configured minimum always applies.
    pub fn set_host_delay(&self, host: &str, delay: Duration) {
        let slot = self.slot(host);
        let mut st = slot.lock().unwrap();
        st.delay = delay.max(self.min_delay);
    }

    pub fn host_delay(&self, host: &str) -> Duration {
        self.slot(host).lock().unwrap().delay
    }
}

pub fn host_key(url: &Url) -> String {
    match (url.host_str(), url.port_or_known_default()) {
        (Some(h), Some(p)) => format!("{}:{p}", h.to_ascii_lowercase()),
        (Some(h), None) => h.to_ascii_lowercase(),
        _ => String::new(),
    }
}

#[derive(Clone)]
pub struct Fetcher {
    http: reqwest::blocking::Client,
    gate: Arc<HostGate>,
    politeness: Politeness,
    user_agent: String,
}

impl Fetcher {
    pub fn new(politeness: &Politeness, user_agent: &str) -> Result<Self, FetchError> {
        let gate = Arc::new(HostGate::new(Duration::from_millis(
            politeness.min_delay_ms,
        )));
        Self::with_gate(politeness, user_agent, gate)
    }

    pub fn with_gate(
        politeness: &Politeness,
        user_agent: &str,
        gate: Arc<HostGate>,
    ) -> Result<Self, FetchError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(politeness.timeout_ms))
            .user_agent(user_agent)
            .build()
            .map_err(|e| FetchError::Transport {
                url: Url::parse("http://localhost/").unwrap(),
                message: e.to_string(),
            })?;
        Ok(Fetcher {
            http,
            gate,
            politeness: politeness.clone(),
            user_agent: user_agent.to_string(),
        })
    }

    /// Same schedule and connection pool, different User-Agent.
    pub fn for_user_agent(&self, user_agent: &str) -> Result<Self, FetchError> {
        if user_agent == self.user_agent {
            return Ok(self.clone());
        }
        Self::with_gate(&self.politeness, user_agent, self.gate.clone())
    }

    pub fn gate(&self) -> &Arc<HostGate> {
        &self.gate
    }

    pub fn user_agent(&self) -> &str {
        &self.user_agent
    }

    /// Fetch `url` if `robots` allows it. A disallowed URL fails before any
    /// network I/O.
    pub fn fetch(&self, url: &Url, robots: &RobotsPolicy) -> Result<Fetched, FetchError> {
        match robots.is_allowed(url) {
            Ok(true) => self.fetch_unchecked(url),
            Ok(false) => Err(FetchError::Disallowed(url.clone())),
            Err(_) => Err(FetchError::OffOrigin(url.clone())),
        }
    }

    /// Fetch without a robots check (used for robots.txt itself).
    pub fn fetch_unchecked(&self, url: &Url) -> Result<Fetched, FetchError> {
        let slot = self.gate.slot(&host_key(url));
        let mut host = slot.lock().unwrap();
        let mut retries = 0u32;
        loop {
            if let Some(done) = host.last_done {
                let ready = done + host.delay;
                let now = Instant::now();
                if ready > now {
                    thread::sleep(ready - now);
                }
            }
            let result = self.attempt(url);
            host.last_done = Some(Instant::now());
            match result {
                Ok(mut fetched) => {
                    fetched.retries = retries;
                    return Ok(fetched);
                }
                Err(e) if is_transient(&e) && retries < self.politeness.max_retries => {
                    let backoff =
                        Duration::from_millis(self.politeness.backoff_base_ms) * 2u32.pow(retries);
                    log::debug!("{e}; retry {} in {backoff:?}", retries + 1);
                    thread::sleep(backoff);
                    retries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, url: &Url) -> Result<Fetched, FetchError> {
        let resp = self
            .http
            .get(url.clone())
            .send()
            .map_err(|e| classify(url, e))?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            return Err(FetchError::HttpError {
                url: url.clone(),
                status,
            });
        }
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp.bytes().map_err(|e| classify(url, e))?.to_vec();
        Ok(Fetched {
            url: url.clone(),
            status,
            content_type,
            body,
            retries: 0,
        })
    }
}

fn classify(url: &Url, e: reqwest::Error) -> FetchError {
    if e.is_timeout() {
        FetchError::Timeout(url.clone())
    } else {
        FetchError::Transport {
            url: url.clone(),
            message: e.to_string(),
        }
    }
}

fn is_transient(e: &FetchError) -> bool {
    match e {
        FetchError::HttpError { status, .. } => *status >= 500 || *status == 429,
        FetchError::Timeout(_) | FetchError::Transport { .. } => true,
        FetchError::Disallowed(_) | FetchError::OffOrigin(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_keys_include_port() {
        let a = Url::parse("http://127.0.0.1:8080/x").unwrap();
        let b = Url::parse("http://127.0.0.1:8081/x").unwrap();
        let c = Url::parse("https://Shop.Example/x").unwrap();
        assert_ne!(host_key(&a), host_key(&b));
        assert_eq!(host_key(&c), "shop.example:443");
    }

    #[test]
    fn crawl_delay_never_undercuts_minimum() {
        let gate = HostGate::new(Duration::from_millis(100));
        gate.set_host_delay("h", Duration::from_millis(10));
        assert_eq!(gate.host_delay("h"), Duration::from_millis(100));
        gate.set_host_delay("h", Duration::from_millis(2500));
        assert_eq!(gate.host_delay("h"), Duration::from_millis(2500));
    }

    #[test]
    fn disallowed_fails_without_io() {
        let robots = crate::robots::parse_robots("User-agent: *\nDisallow: /", "bot");
        let f = Fetcher::new(&Politeness::default(), "bot").unwrap();
        // Port 9 on loopback: a real request would fail with a transport error.
        let url = Url::parse("http://127.0.0.1:9/p").unwrap();
        assert_eq!(f.fetch(&url, &robots), Err(FetchError::Disallowed(url)));
    }
}

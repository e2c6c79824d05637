use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ClientError, PolicyClient, PolicyRequest, TeacherClient, TeacherRequest};
use crate::codec::parse_response_lenient;

/// One external endpoint. Credentials are read from the environment
/// variable named by `api_key_env`, never from the config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key_env: None,
            model: None,
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 250,
            max_in_flight: 8,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.endpoint.is_empty() {
            return Err(ClientError::Config("endpoint is empty".into()));
        }
        if self.timeout_ms == 0 || self.max_in_flight == 0 {
            return Err(ClientError::Config(
                "timeout_ms and max_in_flight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(max: usize) -> Self {
        Self {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            max: max.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

enum Failure {
    Retry(ClientError),
    Fatal(ClientError),
}

struct Transport {
    agent: ureq::Agent,
    cfg: EndpointConfig,
    gate: Gate,
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transport")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl Transport {
    fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            gate: Gate::new(cfg.max_in_flight),
            cfg,
        })
    }

    fn api_key(&self) -> Result<Option<String>, ClientError> {
        match &self.cfg.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn attempt(
        &self,
        body: &Value,
        key: &str,
        extract: &dyn Fn(Value) -> Result<String, ClientError>,
    ) -> Result<String, Failure> {
        let _permit = self.gate.acquire();
        let mut req = self
            .agent
            .post(&self.cfg.endpoint)
            .header("Idempotency-Key", key)
            .header("Content-Type", "application/json");
        if let Some(k) = self.api_key().map_err(Failure::Fatal)? {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Failure::Retry(ClientError::Timeout)),
            Err(e) => return Err(Failure::Retry(ClientError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retry(ClientError::Transport(format!(
                "HTTP {status}"
            ))));
        }
        if !(200..300).contains(&status) {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(ClientError::Transport(format!(
                "HTTP {status}: {}",
                detail.trim()
            ))));
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| match e {
            ureq::Error::Timeout(_) => Failure::Retry(ClientError::Timeout),
            e => Failure::Retry(ClientError::Malformed(e.to_string())),
        })?;
        extract(value).map_err(Failure::Retry)
    }

    /// Posts `body` with bounded retries and exponential backoff. The same
    /// idempotency key is sent on every attempt.
    fn post(
        &self,
        body: &Value,
        key: &str,
        extract: &dyn Fn(Value) -> Result<String, ClientError>,
    ) -> Result<String, ClientError> {
        let mut last = ClientError::Empty;
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                let wait = self
                    .cfg
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(body, key, extract) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) => {
                    log::warn!("{key}: attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

/// Policy behind a JSON endpoint: `{"model", "request"}` in, `{"text"}` out.
#[derive(Debug)]
pub struct HttpPolicy {
    transport: Transport,
}

impl HttpPolicy {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        Ok(Self {
            transport: Transport::new(cfg)?,
        })
    }
}

impl PolicyClient for HttpPolicy {
    fn call(&self, req: &PolicyRequest) -> Result<String, ClientError> {
        req.validate()?;
        let body = json!({ "model": self.transport.cfg.model, "request": req });
        let extract = |v: Value| -> Result<String, ClientError> {
            let text = v
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| ClientError::Malformed("missing `text` field".into()))?;
            parse_response_lenient(text).map_err(|e| ClientError::Malformed(e.to_string()))?;
            Ok(text.to_string())
        };
        self.transport.post(&body, &req.idempotency_key(), &extract)
    }
}

/// Teacher behind a chat-completion style endpoint.
#[derive(Debug)]
pub struct HttpTeacher {
    transport: Transport,
}

impl HttpTeacher {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        Ok(Self {
            transport: Transport::new(cfg)?,
        })
    }
}

impl TeacherClient for HttpTeacher {
    fn call(&self, req: &TeacherRequest) -> Result<String, ClientError> {
        req.plans()?;
        let body = json!({
            "model": self.transport.cfg.model,
            "messages": [
                { "role": "system", "content": req.system },
                { "role": "user", "content": req.prompt },
            ],
            "metadata": { "scene_id": req.scene.scene_id, "visual_refs": req.scene.visual_refs },
        });
        let extract = |v: Value| -> Result<String, ClientError> {
            let content = v
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    ClientError::Malformed("missing choices[0].message.content".into())
                })?;
            let content = content.trim();
            if content.is_empty() {
                return Err(ClientError::Empty);
            }
            Ok(content.to_string())
        };
        self.transport.post(&body, &req.idempotency_key(), &extract)
    }
}

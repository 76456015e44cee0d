//! JSON-over-HTTP plumbing shared by the embedding, chat, and scoring clients.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct JsonRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Timeouts, connection failures, 429 and 5xx.
    Retryable(String),
    Fatal(String),
}

pub trait JsonTransport: Send + Sync {
    fn post(&self, req: &JsonRequest) -> std::result::Result<Value, TransportFailure>;
}

/// Blocking HTTPS transport.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpTransport;

impl JsonTransport for HttpTransport {
    fn post(&self, req: &JsonRequest) -> std::result::Result<Value, TransportFailure> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(req.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut call = agent.post(&req.url);
        for (k, v) in &req.headers {
            call = call.header(k.as_str(), v.as_str());
        }
        let mut resp = call
            .send_json(&req.body)
            .map_err(|e| TransportFailure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(TransportFailure::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportFailure::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportFailure::Fatal(format!("response is not JSON: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Doubled after every failed attempt.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 250,
        }
    }
}

/// Returns the response and the number of retries it took.
pub fn post_with_retries(
    transport: &dyn JsonTransport,
    req: &JsonRequest,
    policy: &RetryPolicy,
) -> Result<(Value, u32)> {
    let mut delay = policy.backoff_ms;
    let mut retries = 0;
    loop {
        match transport.post(req) {
            Ok(v) => return Ok((v, retries)),
            Err(TransportFailure::Fatal(msg)) => return Err(Error::Transport { msg, retries }),
            Err(TransportFailure::Retryable(msg)) => {
                if retries >= policy.max_retries {
                    return Err(Error::Transport { msg, retries });
                }
                log::warn!("request to {} failed ({msg}); retrying", req.url);
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
                delay = delay.saturating_mul(2);
                retries += 1;
            }
        }
    }
}

/// Bearer header from the named environment variable, if it is set.
pub fn bearer_from_env(var: &str) -> Option<(String, String)> {
    std::env::var(var)
        .ok()
        .filter(|t| !t.is_empty())
        .map(|t| ("Authorization".to_string(), format!("Bearer {t}")))
}

pub fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Append-only response store keyed by request hash, optionally mirrored
/// to one JSON file per entry.
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Value>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache::default()
    }

    pub fn on_disk(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir: Some(dir),
            mem: Mutex::new(HashMap::new()),
        })
    }

    pub fn get(&self, key: &str) -> Result<Option<Value>> {
        if let Some(v) = self.mem.lock().unwrap().get(key) {
            return Ok(Some(v.clone()));
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.json"));
            if path.exists() {
                let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                self.mem.lock().unwrap().insert(key.to_string(), v.clone());
                return Ok(Some(v));
            }
        }
        Ok(None)
    }

    pub fn put(&self, key: &str, value: &Value) -> Result<()> {
        let mut mem = self.mem.lock().unwrap();
        if mem.contains_key(key) {
            return Ok(());
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.json"));
            if !path.exists() {
                std::fs::write(path, serde_json::to_string(value)?)?;
            }
        }
        mem.insert(key.to_string(), value.clone());
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::testing::Scripted;
    use super::*;

    fn req() -> JsonRequest {
        JsonRequest {
            url: "http://localhost/x".into(),
            headers: vec![],
            body: Value::Null,
            timeout: Duration::from_secs(1),
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let t = Scripted::new(vec![
            Err(TransportFailure::Retryable("HTTP 500".into())),
            Ok(serde_json::json!({"ok": true})),
        ]);
        let policy = RetryPolicy {
            max_retries: 2,
            backoff_ms: 0,
        };
        let (v, retries) = post_with_retries(&t, &req(), &policy).unwrap();
        assert_eq!(retries, 1);
        assert_eq!(v["ok"], true);
    }

    #[test]
    fn gives_up() {
        let t = Scripted::new(vec![Err(TransportFailure::Retryable("timeout".into())); 3]);
        let policy = RetryPolicy {
            max_retries: 1,
            backoff_ms: 0,
        };
        match post_with_retries(&t, &req(), &policy) {
            Err(Error::Transport { retries, .. }) => assert_eq!(retries, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn disk_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::on_disk(dir.path().to_path_buf()).unwrap();
        let key = content_hash(&["a", "b"]);
        c.put(&key, &serde_json::json!([1, 2])).unwrap();
        let c2 = ResponseCache::on_disk(dir.path().to_path_buf()).unwrap();
        assert_eq!(c2.get(&key).unwrap(), Some(serde_json::json!([1, 2])));
        assert_ne!(content_hash(&["ab", ""]), content_hash(&["a", "b"]));
    }
}

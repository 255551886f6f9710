use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{normalize, EmbedError};

type BatchResult = Result<Vec<Vec<f64>>, EmbedError>;

/// Connection settings for an HTTP embedding service speaking
/// `POST {model, input} -> {data: [{embedding}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_env: Option<String>,
    /// Expected width; checked against every response when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

pub(crate) fn default_concurrency() -> usize {
    4
}

pub(crate) fn default_batch_size() -> usize {
    64
}

fn default_timeout_secs() -> u64 {
    60
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    settings: RemoteSettings,
    agent: ureq::Agent,
    key: Option<String>,
}

impl RemoteEmbedder {
    /// Reads the API key from the configured environment variable up front so
    /// a missing credential fails before any request is sent.
    pub fn new(settings: RemoteSettings) -> Result<Self, EmbedError> {
        let key = match &settings.key_env {
            Some(var) => match std::env::var(var) {
                Ok(k) if !k.is_empty() => Some(k),
                _ => {
                    return Err(EmbedError::Auth {
                        endpoint: settings.endpoint.clone(),
                        detail: format!("environment variable `{var}` is not set"),
                    })
                }
            },
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .build()
            .into();
        Ok(RemoteEmbedder {
            settings,
            agent,
            key,
        })
    }

    pub fn settings(&self) -> &RemoteSettings {
        &self.settings
    }

    pub fn fingerprint(&self) -> String {
        let s = &self.settings;
        match s.dimension {
            Some(d) => format!("remote/{}/{}/d{d}", s.endpoint, s.model),
            None => format!("remote/{}/{}", s.endpoint, s.model),
        }
    }

    fn request_batch(&self, batch: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let endpoint = &self.settings.endpoint;
        let mut req = self
            .agent
            .post(endpoint)
            .header("Accept", "application/json");
        if let Some(key) = &self.key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = EmbedRequest {
            model: &self.settings.model,
            input: batch,
        };
        let mut resp = req.send_json(&body).map_err(|e| EmbedError::Transport {
            endpoint: endpoint.clone(),
            detail: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EmbedError::Transport {
                endpoint: endpoint.clone(),
                detail: e.to_string(),
            })?;
        match status {
            200..=299 => {}
            401 | 403 => {
                return Err(EmbedError::Auth {
                    endpoint: endpoint.clone(),
                    detail: format!("HTTP {status}: {}", snippet(&text)),
                })
            }
            _ => {
                return Err(EmbedError::Status {
                    endpoint: endpoint.clone(),
                    status,
                    detail: snippet(&text),
                })
            }
        }
        let parsed: EmbedResponse = serde_json::from_str(&text).map_err(|e| EmbedError::Shape {
            endpoint: endpoint.clone(),
            detail: e.to_string(),
        })?;
        if parsed.data.len() != batch.len() {
            return Err(EmbedError::Shape {
                endpoint: endpoint.clone(),
                detail: format!(
                    "sent {} inputs, received {} embeddings",
                    batch.len(),
                    parsed.data.len()
                ),
            });
        }
        let mut out = Vec::with_capacity(batch.len());
        for d in parsed.data {
            let mut v = d.embedding;
            if let Some(want) = self.settings.dimension {
                if v.len() != want {
                    return Err(EmbedError::Shape {
                        endpoint: endpoint.clone(),
                        detail: format!("expected width {want}, received {}", v.len()),
                    });
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::Shape {
                    endpoint: endpoint.clone(),
                    detail: "non-finite component".into(),
                });
            }
            normalize(&mut v);
            out.push(v);
        }
        Ok(out)
    }

    /// Batches the texts and sends up to `concurrency` requests at once.
    /// Output order follows input order. The first failing batch (by position)
    /// is reported.
    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let batches: Vec<&[&str]> = texts.chunks(self.settings.batch_size.max(1)).collect();
        let results: Vec<Mutex<Option<BatchResult>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.settings.concurrency.clamp(1, batches.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= batches.len() {
                        break;
                    }
                    let r = self.request_batch(batches[i]);
                    *results[i].lock().unwrap() = Some(r);
                });
            }
        });

        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            let r = slot.into_inner().unwrap().expect("every batch visited");
            out.extend(r?);
        }
        let width = out[0].len();
        if let Some(bad) = out.iter().find(|v| v.len() != width) {
            return Err(EmbedError::Shape {
                endpoint: self.settings.endpoint.clone(),
                detail: format!("inconsistent widths {width} and {}", bad.len()),
            });
        }
        Ok(out)
    }
}

fn snippet(body: &str) -> String {
    let s: String = body.chars().take(200).collect();
    s.trim().to_string()
}

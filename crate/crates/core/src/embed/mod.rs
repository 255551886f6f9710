//! Text embedding and exact cosine retrieval.
//!
//! The local provider is a hashed TF-IDF model fitted on the indexed corpus;
//! the remote provider calls an HTTP embedding service.

mod local;
mod remote;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

pub use local::{bucket, tokenize, HashedTfIdf, IdfTable, DEFAULT_DIMENSION};
pub use remote::{RemoteEmbedder, RemoteSettings};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding service {endpoint} unreachable: {detail}")]
    Transport { endpoint: String, detail: String },
    #[error("embedding service {endpoint} rejected credentials: {detail}")]
    Auth { endpoint: String, detail: String },
    #[error("embedding service {endpoint} returned HTTP {status}: {detail}")]
    Status {
        endpoint: String,
        status: u16,
        detail: String,
    },
    #[error("embedding service {endpoint} sent an unexpected payload: {detail}")]
    Shape { endpoint: String, detail: String },
    #[error("invalid embedder configuration: {0}")]
    Config(String),
}

impl EmbedError {
    pub fn code(&self) -> &'static str {
        match self {
            EmbedError::DimensionMismatch { .. } => "dimension-mismatch",
            EmbedError::Transport { .. } => "embed-transport",
            EmbedError::Auth { .. } => "embed-auth",
            EmbedError::Status { .. } => "embed-status",
            EmbedError::Shape { .. } => "embed-shape",
            EmbedError::Config(_) => "embed-config",
        }
    }
}

/// Scales `v` to unit L2 norm in place; zero vectors are left alone.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// `dot(u, v) / (|u| |v|)`, or 0 when either vector is zero. Summation runs
/// left to right so results are bit-stable.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Local,
    Remote,
}

impl std::str::FromStr for EmbedderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "local" => Ok(EmbedderKind::Local),
            "remote" => Ok(EmbedderKind::Remote),
            other => Err(format!(
                "unknown provider `{other}` (expected local or remote)"
            )),
        }
    }
}

/// The `[embedder]` configuration table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    #[serde(default)]
    pub kind: EmbedderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_env: Option<String>,
    /// Hash width for the local provider; expected width for the remote one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default = "remote::default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "remote::default_batch_size")]
    pub batch_size: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Local,
            endpoint: None,
            model: None,
            key_env: None,
            dimension: None,
            concurrency: remote::default_concurrency(),
            batch_size: remote::default_batch_size(),
        }
    }
}

impl EmbedderConfig {
    pub fn local() -> Self {
        Self::default()
    }

    pub fn remote_settings(&self) -> Result<RemoteSettings, EmbedError> {
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| EmbedError::Config("remote provider needs `endpoint`".into()))?;
        let model = self
            .model
            .clone()
            .ok_or_else(|| EmbedError::Config("remote provider needs `model`".into()))?;
        Ok(RemoteSettings {
            endpoint,
            model,
            key_env: self.key_env.clone(),
            dimension: self.dimension,
            concurrency: self.concurrency.max(1),
            batch_size: self.batch_size.max(1),
            timeout_secs: 60,
        })
    }

    fn local_dimension(&self) -> Result<usize, EmbedError> {
        match self.dimension {
            Some(0) => Err(EmbedError::Config("dimension must be positive".into())),
            Some(d) => Ok(d),
            None => Ok(DEFAULT_DIMENSION),
        }
    }
}

/// How an index turns query text into vectors. Local encoders carry their
/// fitted IDF table so queries share the corpus statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Encoder {
    Local(HashedTfIdf),
    Remote(RemoteSettings),
}

impl Encoder {
    /// Builds the encoder for a corpus. Local providers are fitted on it.
    pub fn fit(config: &EmbedderConfig, corpus: &[&str]) -> Result<Self, EmbedError> {
        match config.kind {
            EmbedderKind::Local => Ok(Encoder::Local(HashedTfIdf::fit(
                config.local_dimension()?,
                corpus.iter().copied(),
            ))),
            EmbedderKind::Remote => Ok(Encoder::Remote(config.remote_settings()?)),
        }
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        match self {
            Encoder::Local(m) => Ok(texts.iter().map(|t| m.embed_one(t)).collect()),
            Encoder::Remote(s) => RemoteEmbedder::new(s.clone())?.embed(texts),
        }
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        Ok(self.embed(&[text])?.pop().unwrap_or_default())
    }

    pub fn fingerprint(&self) -> String {
        match self {
            Encoder::Local(m) => m.fingerprint(),
            Encoder::Remote(s) => match s.dimension {
                Some(d) => format!("remote/{}/{}/d{d}", s.endpoint, s.model),
                None => format!("remote/{}/{}", s.endpoint, s.model),
            },
        }
    }
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap()
}

/// Immutable set of `(id, unit vector)` rows plus the encoder that produced
/// them. Stored components are already rounded to 9 significant digits, so a
/// saved and reloaded index is identical to the one that was built.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    encoder: Encoder,
    fingerprint: String,
    dimension: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
}

impl VectorIndex {
    /// Embeds `(id, text)` rows. The local provider's IDF is fitted on exactly
    /// these texts.
    pub fn build<'a>(
        rows: impl IntoIterator<Item = (&'a str, &'a str)>,
        config: &EmbedderConfig,
    ) -> Result<Self, EmbedError> {
        let (ids, texts): (Vec<&str>, Vec<&str>) = rows.into_iter().unzip();
        let encoder = Encoder::fit(config, &texts)?;
        let vectors = if texts.is_empty() {
            Vec::new()
        } else {
            encoder.embed(&texts)?
        };
        Self::from_parts(
            encoder,
            ids.into_iter().map(String::from).collect(),
            vectors,
        )
    }

    pub fn from_parts(
        encoder: Encoder,
        ids: Vec<String>,
        vectors: Vec<Vec<f64>>,
    ) -> Result<Self, EmbedError> {
        if ids.len() != vectors.len() {
            return Err(EmbedError::Config(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dimension = match (&encoder, vectors.first()) {
            (_, Some(v)) => v.len(),
            (Encoder::Local(m), None) => m.dimension,
            (Encoder::Remote(s), None) => s.dimension.unwrap_or(0),
        };
        let mut stored = Vec::with_capacity(vectors.len());
        for mut v in vectors {
            if v.len() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    left: dimension,
                    right: v.len(),
                });
            }
            normalize(&mut v);
            v.iter_mut().for_each(|x| *x = round_sig9(*x));
            stored.push(v);
        }
        Ok(VectorIndex {
            fingerprint: encoder.fingerprint(),
            encoder,
            dimension,
            ids,
            vectors: stored,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn embed_query(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.encoder.embed_one(text)
    }

    /// Exact scan; `(score desc, id asc)`; length `min(k, len)`.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, EmbedError> {
        self.top_k_filtered(query, k, |_| true)
    }

    /// Like [`top_k`](Self::top_k) over the rows whose id passes `keep`.
    pub fn top_k_filtered(
        &self,
        query: &[f64],
        k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<Hit>, EmbedError> {
        if self.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        if query.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                left: self.dimension,
                right: query.len(),
            });
        }
        let mut scored = Vec::with_capacity(self.len());
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            if keep(id) {
                scored.push((cosine(query, v)?, id.as_str()));
            }
        }
        scored.sort_by(|a, b| rank_order((a.0, a.1), (b.0, b.1)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(score, id)| Hit {
                chunk_id: id.to_string(),
                score,
            })
            .collect())
    }

    pub fn to_stored(&self) -> StoredIndex {
        StoredIndex {
            format_version: INDEX_FORMAT_VERSION.to_string(),
            fingerprint: self.fingerprint.clone(),
            dimension: self.dimension,
            encoder: self.encoder.clone(),
            rows: self
                .ids
                .iter()
                .zip(&self.vectors)
                .map(|(id, v)| StoredRow {
                    chunk_id: id.clone(),
                    vector: v
                        .iter()
                        .enumerate()
                        .filter(|(_, x)| **x != 0.0)
                        .map(|(i, x)| (i, *x))
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_stored(stored: StoredIndex) -> Result<Self, EmbedError> {
        if stored.format_version != INDEX_FORMAT_VERSION {
            return Err(EmbedError::Config(format!(
                "unsupported index format_version `{}`",
                stored.format_version
            )));
        }
        let mut ids = Vec::with_capacity(stored.rows.len());
        let mut vectors = Vec::with_capacity(stored.rows.len());
        for row in stored.rows {
            let mut v = vec![0.0; stored.dimension];
            for (i, x) in row.vector {
                if i >= stored.dimension {
                    return Err(EmbedError::DimensionMismatch {
                        left: stored.dimension,
                        right: i + 1,
                    });
                }
                v[i] = x;
            }
            ids.push(row.chunk_id);
            vectors.push(v);
        }
        let fingerprint = stored.encoder.fingerprint();
        if fingerprint != stored.fingerprint {
            return Err(EmbedError::Config(format!(
                "index fingerprint `{}` does not match its encoder `{fingerprint}`",
                stored.fingerprint
            )));
        }
        // Rows are stored already rounded; keep them verbatim.
        Ok(VectorIndex {
            encoder: stored.encoder,
            fingerprint,
            dimension: stored.dimension,
            ids,
            vectors,
        })
    }
}

/// Total order used for every ranking: score descending, then id ascending.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

pub const INDEX_FORMAT_VERSION: &str = "1";

/// Plain-text form of a [`VectorIndex`]: sparse `(component, value)` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredIndex {
    pub format_version: String,
    pub fingerprint: String,
    pub dimension: usize,
    pub encoder: Encoder,
    pub rows: Vec<StoredRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRow {
    pub chunk_id: String,
    pub vector: Vec<(usize, f64)>,
}

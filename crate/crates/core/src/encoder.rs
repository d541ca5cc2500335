//! Pooled document embeddings.
//!
//! Three backends sit behind one config:
//!
//! * `hashed_features`: a deterministic bag-of-ngrams encoder. Lowercase,
//!   split on whitespace, form unigrams and bigrams, hash every feature
//!   into one of `embed_dim` signed buckets, L2-normalize. Runs anywhere,
//!   needs no checkpoints, and is stable across processes and releases
//!   because the hash is spelled out below rather than borrowed from the
//!   standard library.
//! * `pretrained_transformer`: pools per-token vectors from a checkpoint
//!   registered under a model id (see [`register_model`]). Tokens are
//!   whitespace-split and handed to the registered [`TokenEmbedder`],
//!   which owns any subword handling.
//! * `constant`: the zero vector for every text. Useful as an ablation
//!   probe, since it silences the document pathway entirely.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("no model registered under id {model_id:?}")]
    ModelLoadFailure { model_id: String },
    #[error("text at position {position} has no tokens")]
    EmptyText { position: usize },
    #[error("invalid encoder config: {reason}")]
    InvalidConfig { reason: String },
    #[error("embedding for text at position {position} contains a non-finite value")]
    NonFinite { position: usize },
    #[error("model {model_id:?} broke the embedding contract: {reason}")]
    ModelOutput { model_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderBackend {
    HashedFeatures,
    PretrainedTransformer,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    FirstToken,
    MeanOverTokens,
}

/// Feature set for the hashed backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NgramScheme {
    Unigrams,
    UnigramsAndBigrams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub backend: EncoderBackend,
    /// Checkpoint name, transformer backend only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default = "default_pooling")]
    pub pooling: Pooling,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Output dimension d_enc. Must match the checkpoint's hidden size
    /// for the transformer backend.
    pub embed_dim: usize,
    #[serde(default = "default_ngrams")]
    pub ngrams: NgramScheme,
    /// Hashed backend only; absent means "let the caller derive one"
    /// (standalone use falls back to 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_pooling() -> Pooling {
    Pooling::FirstToken
}

fn default_max_tokens() -> usize {
    128
}

fn default_ngrams() -> NgramScheme {
    NgramScheme::UnigramsAndBigrams
}

impl EncoderConfig {
    pub fn hashed(embed_dim: usize, seed: u64) -> Self {
        EncoderConfig {
            backend: EncoderBackend::HashedFeatures,
            model_id: None,
            pooling: default_pooling(),
            max_tokens: default_max_tokens(),
            embed_dim,
            ngrams: default_ngrams(),
            seed: Some(seed),
        }
    }

    pub fn constant(embed_dim: usize) -> Self {
        EncoderConfig {
            backend: EncoderBackend::Constant,
            model_id: None,
            pooling: default_pooling(),
            max_tokens: default_max_tokens(),
            embed_dim,
            ngrams: default_ngrams(),
            seed: None,
        }
    }

    pub fn transformer(model_id: &str, embed_dim: usize) -> Self {
        EncoderConfig {
            backend: EncoderBackend::PretrainedTransformer,
            model_id: Some(model_id.to_string()),
            pooling: default_pooling(),
            max_tokens: default_max_tokens(),
            embed_dim,
            ngrams: default_ngrams(),
            seed: None,
        }
    }
}

/// A fixed-dimension pooled representation of one document. Entries are
/// always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEmbedding {
    values: Vec<f64>,
}

impl DocumentEmbedding {
    /// Wraps a vector, rejecting NaN and infinities. `position` only
    /// feeds the error message.
    pub fn new(values: Vec<f64>, position: usize) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite { position });
        }
        Ok(DocumentEmbedding { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-token embedding backend for the transformer path. Implementations
/// wrap a loaded checkpoint; handles are immutable after load and shared
/// across threads.
pub trait TokenEmbedder: Send + Sync {
    fn hidden_size(&self) -> usize;
    /// One vector of length `hidden_size` per token, in token order.
    fn embed_tokens(&self, tokens: &[&str]) -> Vec<Vec<f64>>;
}

fn registry() -> &'static Mutex<BTreeMap<String, Arc<dyn TokenEmbedder>>> {
    static REGISTRY: OnceLock<Mutex<BTreeMap<String, Arc<dyn TokenEmbedder>>>> = OnceLock::new();
    REGISTRY.get_or_init(|| Mutex::new(BTreeMap::new()))
}

/// Makes a checkpoint available to the transformer backend under an id.
/// Registering the same id again replaces the previous model.
pub fn register_model(model_id: &str, model: Arc<dyn TokenEmbedder>) {
    registry()
        .lock()
        .expect("model registry poisoned")
        .insert(model_id.to_string(), model);
}

fn lookup_model(model_id: &str) -> Option<Arc<dyn TokenEmbedder>> {
    registry()
        .lock()
        .expect("model registry poisoned")
        .get(model_id)
        .cloned()
}

/// A validated, ready-to-use encoder.
pub enum Encoder {
    Hashed {
        dim: usize,
        seed: u64,
        ngrams: NgramScheme,
    },
    Transformer {
        model_id: String,
        model: Arc<dyn TokenEmbedder>,
        pooling: Pooling,
        max_tokens: usize,
        dim: usize,
    },
    Constant {
        dim: usize,
    },
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Encoder::Hashed { dim, seed, ngrams } => f
                .debug_struct("Hashed")
                .field("dim", dim)
                .field("seed", seed)
                .field("ngrams", ngrams)
                .finish(),
            Encoder::Transformer {
                model_id,
                pooling,
                max_tokens,
                dim,
                ..
            } => f
                .debug_struct("Transformer")
                .field("model_id", model_id)
                .field("pooling", pooling)
                .field("max_tokens", max_tokens)
                .field("dim", dim)
                .finish(),
            Encoder::Constant { dim } => f.debug_struct("Constant").field("dim", dim).finish(),
        }
    }
}

/// Seeded FNV-1a over the feature bytes. Spelled out so embeddings stay
/// identical across processes, platforms, and toolchain upgrades.
fn stable_hash(feature: &str, seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for &b in feature.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Decorrelates the sign bit from the bucket index (one avalanche round).
fn remix(h: u64) -> u64 {
    let h = (h ^ (h >> 33)).wrapping_mul(0xff51afd7ed558ccd);
    h ^ (h >> 33)
}

fn hashed_embedding(text: &str, dim: usize, seed: u64, ngrams: NgramScheme, position: usize) -> Result<Vec<f64>, EncoderError> {
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(EncoderError::EmptyText { position });
    }

    let mut values = vec![0.0f64; dim];
    let mut add_feature = |feature: &str| {
        let h = stable_hash(feature, seed);
        let bucket = (h % dim as u64) as usize;
        let sign = if remix(h) & 1 == 0 { 1.0 } else { -1.0 };
        values[bucket] += sign;
    };
    for token in &tokens {
        add_feature(&format!("u:{token}"));
    }
    if ngrams == NgramScheme::UnigramsAndBigrams {
        for pair in tokens.windows(2) {
            add_feature(&format!("b:{} {}", pair[0], pair[1]));
        }
    }

    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Ok(values)
}

impl Encoder {
    /// Validates the config, resolving the transformer checkpoint if one
    /// is named.
    pub fn new(config: &EncoderConfig) -> Result<Self, EncoderError> {
        let invalid = |reason: &str| EncoderError::InvalidConfig {
            reason: reason.to_string(),
        };
        if config.embed_dim == 0 {
            return Err(invalid("embed_dim must be positive"));
        }
        if config.max_tokens == 0 {
            return Err(invalid("max_tokens must be positive"));
        }
        match config.backend {
            EncoderBackend::HashedFeatures => {
                if config.model_id.is_some() {
                    return Err(invalid("model_id is only valid for the transformer backend"));
                }
                Ok(Encoder::Hashed {
                    dim: config.embed_dim,
                    seed: config.seed.unwrap_or(0),
                    ngrams: config.ngrams,
                })
            }
            EncoderBackend::Constant => {
                if config.model_id.is_some() {
                    return Err(invalid("model_id is only valid for the transformer backend"));
                }
                Ok(Encoder::Constant {
                    dim: config.embed_dim,
                })
            }
            EncoderBackend::PretrainedTransformer => {
                let model_id = config
                    .model_id
                    .clone()
                    .ok_or_else(|| invalid("transformer backend requires model_id"))?;
                let model = lookup_model(&model_id)
                    .ok_or(EncoderError::ModelLoadFailure { model_id: model_id.clone() })?;
                if model.hidden_size() != config.embed_dim {
                    return Err(invalid(&format!(
                        "embed_dim {} does not match hidden size {} of model {:?}",
                        config.embed_dim,
                        model.hidden_size(),
                        model_id
                    )));
                }
                Ok(Encoder::Transformer {
                    model_id,
                    model,
                    pooling: config.pooling,
                    max_tokens: config.max_tokens,
                    dim: config.embed_dim,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Encoder::Hashed { dim, .. }
            | Encoder::Transformer { dim, .. }
            | Encoder::Constant { dim } => *dim,
        }
    }

    /// Encodes each text independently, so a vector never depends on what
    /// else is in the batch.
    pub fn encode_batch(&self, texts: &[String]) -> Result<Vec<DocumentEmbedding>, EncoderError> {
        let mut out = Vec::with_capacity(texts.len());
        for (position, text) in texts.iter().enumerate() {
            let values = match self {
                Encoder::Constant { dim } => vec![0.0; *dim],
                Encoder::Hashed { dim, seed, ngrams } => {
                    hashed_embedding(text, *dim, *seed, *ngrams, position)?
                }
                Encoder::Transformer {
                    model_id,
                    model,
                    pooling,
                    max_tokens,
                    dim,
                } => {
                    let mut tokens: Vec<&str> = text.split_whitespace().collect();
                    if tokens.is_empty() {
                        return Err(EncoderError::EmptyText { position });
                    }
                    tokens.truncate(*max_tokens);
                    let token_vectors = model.embed_tokens(&tokens);
                    let contract = |reason: String| EncoderError::ModelOutput {
                        model_id: model_id.clone(),
                        reason,
                    };
                    if token_vectors.len() != tokens.len() {
                        return Err(contract(format!(
                            "{} token vectors for {} tokens",
                            token_vectors.len(),
                            tokens.len()
                        )));
                    }
                    if let Some(bad) = token_vectors.iter().find(|v| v.len() != *dim) {
                        return Err(contract(format!(
                            "token vector of length {} under hidden size {dim}",
                            bad.len()
                        )));
                    }
                    match pooling {
                        Pooling::FirstToken => token_vectors[0].clone(),
                        Pooling::MeanOverTokens => {
                            let n = token_vectors.len() as f64;
                            let mut mean = vec![0.0; *dim];
                            for vector in &token_vectors {
                                for (m, v) in mean.iter_mut().zip(vector) {
                                    *m += v;
                                }
                            }
                            for m in &mut mean {
                                *m /= n;
                            }
                            mean
                        }
                    }
                }
            };
            out.push(DocumentEmbedding::new(values, position)?);
        }
        Ok(out)
    }
}

/// One-call form: build the encoder from config and encode.
pub fn encode_batch(
    texts: &[String],
    config: &EncoderConfig,
) -> Result<Vec<DocumentEmbedding>, EncoderError> {
    Encoder::new(config)?.encode_batch(texts)
}

/// An encoder that maps every text to the zero vector of length `dim`.
pub fn constant_encoder(dim: usize) -> Result<Encoder, EncoderError> {
    Encoder::new(&EncoderConfig::constant(dim))
}

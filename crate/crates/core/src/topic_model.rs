//! Topic discovery over document embeddings.
//!
//! Fitting runs a fixed pipeline: project embeddings to a low-dimensional
//! space through a seeded random linear map, cluster the projected points
//! with seeded k-means under a minimum-cluster-size rule, weight each
//! topic's vocabulary with class-based TF-IDF, and initialize one topic
//! embedding per topic from the cluster's mean document embedding. The
//! topic count K is not configured directly: the fitter walks k downward
//! from ⌊N / min_cluster_size⌋ and keeps the largest k whose converged
//! clusters all retain at least `min_cluster_size` members. When no k
//! works, every document is an outlier.
//!
//! Topic ids 0..K-1 name real topics; -1 is the outlier topic. The topic
//! embedding table has K+1 rows so the outlier also has an embedding
//! (row K), keeping downstream fusion total.
//!
//! Everything is deterministic given the config seed: random draws come
//! from a seeded ChaCha8 stream in a fixed order, and all maps are sorted.

use crate::encoder::DocumentEmbedding;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopicModelError {
    #[error("no documents to fit")]
    EmptyInput,
    #[error("{embeddings} embeddings but {texts} texts")]
    LengthMismatch { embeddings: usize, texts: usize },
    #[error("invalid topic model config: {reason}")]
    InvalidConfig { reason: String },
    #[error("embedding has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("topic {topic} does not exist (model has {k} topics)")]
    UnknownTopic { topic: i32, k: usize },
    #[error("state file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("inconsistent state: {reason}")]
    InvalidState { reason: String },
    #[error("{reason}")]
    InvalidArgument { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicModelConfig {
    /// Dimension of the clustering space; must not exceed the embedding
    /// dimension.
    #[serde(default = "default_reduced_dim")]
    pub reduced_dim: usize,
    /// Smallest cluster the fitter will accept; at least 2.
    #[serde(default = "default_min_cluster_size")]
    pub min_cluster_size: usize,
    /// Quantile in (0, 1] of member distances used as each centroid's
    /// outlier cutoff; 1.0 disables distance gating entirely.
    #[serde(default = "default_quantile")]
    pub outlier_distance_quantile: f64,
    /// Width of topic embeddings (d_topic). Zero is allowed and means
    /// topic embeddings carry no information (the baseline's case).
    #[serde(default = "default_topic_embed_dim")]
    pub topic_embed_dim: usize,
    /// Absent means "let the caller derive one" (standalone use falls
    /// back to 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_reduced_dim() -> usize {
    5
}

fn default_min_cluster_size() -> usize {
    5
}

fn default_quantile() -> f64 {
    1.0
}

fn default_topic_embed_dim() -> usize {
    16
}

impl Default for TopicModelConfig {
    fn default() -> Self {
        TopicModelConfig {
            reduced_dim: default_reduced_dim(),
            min_cluster_size: default_min_cluster_size(),
            outlier_distance_quantile: default_quantile(),
            topic_embed_dim: default_topic_embed_dim(),
            seed: None,
        }
    }
}

impl TopicModelConfig {
    fn validate(&self) -> Result<(), TopicModelError> {
        let invalid = |reason: &str| {
            Err(TopicModelError::InvalidConfig {
                reason: reason.to_string(),
            })
        };
        if self.reduced_dim == 0 {
            return invalid("reduced_dim must be positive");
        }
        if self.min_cluster_size < 2 {
            return invalid("min_cluster_size must be at least 2");
        }
        if !(self.outlier_distance_quantile > 0.0 && self.outlier_distance_quantile <= 1.0) {
            return invalid("outlier_distance_quantile must lie in (0, 1]");
        }
        // topic_embed_dim 0 is legal: it gives zero-width topic embeddings,
        // which is how a topic-less baseline is expressed
        Ok(())
    }

    fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// A topic label: 0..K-1 for real topics, -1 for the outlier topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub i32);

impl TopicId {
    pub const OUTLIER: TopicId = TopicId(-1);

    pub fn is_outlier(self) -> bool {
        self.0 < 0
    }

    /// Row of this topic in a (K+1)-row topic table; the outlier maps to
    /// the reserved last row.
    pub fn table_row(self, k: usize) -> usize {
        if self.is_outlier() {
            k
        } else {
            self.0 as usize
        }
    }
}

impl std::fmt::Display for TopicId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A fitted topic model. Immutable once fitted; serializes to versioned
/// JSON via [`TopicModelState::to_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicModelState {
    pub version: u32,
    pub config: TopicModelConfig,
    /// Embedding dimension the model was fitted on (d_enc).
    pub embed_dim: usize,
    /// Number of real topics; 0 means every document is an outlier.
    pub k: usize,
    /// Projection matrix, `reduced_dim` rows of `embed_dim` columns.
    pub projection: Vec<Vec<f64>>,
    /// K centroids in the reduced space.
    pub centroids: Vec<Vec<f64>>,
    /// Per-topic class-based TF-IDF weights, one sorted map per topic.
    pub term_weights: Vec<BTreeMap<String, f64>>,
    /// (K+1) x topic_embed_dim; row K is the outlier topic's embedding.
    pub topic_table: Vec<Vec<f64>>,
    /// Per-centroid distance cutoff; None when gating is disabled
    /// (quantile 1.0).
    pub outlier_thresholds: Vec<Option<f64>>,
}

pub const STATE_VERSION: u32 = 1;

impl TopicModelState {
    /// The state of a disabled topic pathway: no topics, zero-width topic
    /// embeddings. Every document assigns to the outlier topic, whose
    /// embedding is the empty vector, so fusing adds nothing.
    pub fn topicless(embed_dim: usize) -> Self {
        TopicModelState {
            version: STATE_VERSION,
            config: TopicModelConfig {
                reduced_dim: 1,
                min_cluster_size: 2,
                outlier_distance_quantile: 1.0,
                topic_embed_dim: 0,
                seed: None,
            },
            embed_dim,
            k: 0,
            projection: vec![vec![0.0; embed_dim]],
            centroids: Vec::new(),
            term_weights: Vec::new(),
            topic_table: vec![Vec::new()],
            outlier_thresholds: Vec::new(),
        }
    }

    /// Projects an embedding vector into the clustering space.
    pub fn project(&self, values: &[f64]) -> Vec<f64> {
        self.projection
            .iter()
            .map(|row| row.iter().zip(values).map(|(p, v)| p * v).sum())
            .collect()
    }

    pub fn topic_embed_dim(&self) -> usize {
        self.config.topic_embed_dim
    }

    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("state serializes");
        json.push('\n');
        json
    }

    pub fn from_json(json: &str) -> Result<Self, TopicModelError> {
        let state: TopicModelState = serde_json::from_str(json)?;
        let invalid = |reason: String| Err(TopicModelError::InvalidState { reason });
        if state.version != STATE_VERSION {
            return invalid(format!(
                "unsupported state version {} (this build reads {STATE_VERSION})",
                state.version
            ));
        }
        if state.centroids.len() != state.k
            || state.term_weights.len() != state.k
            || state.outlier_thresholds.len() != state.k
        {
            return invalid(String::from("per-topic field lengths disagree with k"));
        }
        if state.topic_table.len() != state.k + 1 {
            return invalid(format!(
                "topic table has {} rows, expected {}",
                state.topic_table.len(),
                state.k + 1
            ));
        }
        if state.projection.len() != state.config.reduced_dim
            || state.projection.iter().any(|row| row.len() != state.embed_dim)
        {
            return invalid(String::from("projection shape disagrees with config"));
        }
        Ok(state)
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by Euclidean distance, ties toward the lower id.
fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (id, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((id, d)),
        }
    }
    best.map(|(id, d)| (id, d.sqrt()))
}

/// One seeded k-means run: greedy distance-weighted seeding, then Lloyd
/// iterations capped at 100 rounds. The loop always finishes with an
/// assignment pass, so the returned memberships are exactly the nearest
/// centroids of the returned centroids.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            // sample proportional to squared distance from the chosen set
            let target = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                cumulative += d;
                if cumulative >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // every point coincides with a centroid already; any pick
            // duplicates one, which later starves a cluster and makes
            // this k infeasible
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
    }

    let assign_all = |centroids: &[Vec<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| nearest_centroid(p, centroids).expect("k >= 1").0)
            .collect()
    };

    let mut assignments = assign_all(&centroids);
    for _ in 0..100 {
        // update step; a cluster that lost all members keeps its centroid
        let mut sums = vec![vec![0.0; points[0].len()]; k];
        let mut counts = vec![0usize; k];
        for (point, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(point) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in &mut sums[c] {
                    *s /= counts[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            }
        }
        let next = assign_all(&centroids);
        let converged = next == assignments;
        assignments = next;
        if converged {
            break;
        }
    }
    (centroids, assignments)
}

/// Class-based TF-IDF over per-topic term counts:
///
/// ```text
/// W(t,c) = tf(t,c) * ln(1 + A / f(t))
/// ```
///
/// where `tf(t,c)` is term t's count in topic c, `f(t)` its total count
/// over all topics, and `A` the average term count per topic. Terms
/// absent from a topic weigh 0 (explicit zero counts too).
pub fn ctfidf(
    term_counts: &[BTreeMap<String, u64>],
) -> Result<Vec<BTreeMap<String, f64>>, TopicModelError> {
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    let mut grand_total = 0u64;
    for topic in term_counts {
        for (term, &count) in topic {
            *totals.entry(term.as_str()).or_insert(0) += count;
            grand_total += count;
        }
    }
    if term_counts.is_empty() || grand_total == 0 {
        return Err(TopicModelError::EmptyInput);
    }
    let average_per_topic = grand_total as f64 / term_counts.len() as f64;

    Ok(term_counts
        .iter()
        .map(|topic| {
            topic
                .iter()
                .map(|(term, &count)| {
                    let weight = if count == 0 {
                        0.0
                    } else {
                        let f = totals[term.as_str()] as f64;
                        count as f64 * (1.0 + average_per_topic / f).ln()
                    };
                    (term.clone(), weight)
                })
                .collect()
        })
        .collect())
}

fn count_terms(texts: &[&str]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for text in texts {
        for token in text.to_lowercase().split_whitespace() {
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Nearest-rank quantile of member distances: the smallest distance with
/// at least `ceil(q * m)` members at or below it.
fn distance_quantile(mut distances: Vec<f64>, q: f64) -> f64 {
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let rank = (q * distances.len() as f64).ceil() as usize;
    distances[rank.saturating_sub(1).min(distances.len() - 1)]
}

/// Fits a topic model. See the module docs for the pipeline; the result
/// is fully determined by (embeddings, texts, config).
pub fn fit_topics(
    embeddings: &[DocumentEmbedding],
    texts: &[String],
    config: &TopicModelConfig,
) -> Result<TopicModelState, TopicModelError> {
    config.validate()?;
    if embeddings.is_empty() {
        return Err(TopicModelError::EmptyInput);
    }
    if embeddings.len() != texts.len() {
        return Err(TopicModelError::LengthMismatch {
            embeddings: embeddings.len(),
            texts: texts.len(),
        });
    }
    let embed_dim = embeddings[0].dim();
    if let Some(bad) = embeddings.iter().find(|e| e.dim() != embed_dim) {
        return Err(TopicModelError::DimensionMismatch {
            expected: embed_dim,
            got: bad.dim(),
        });
    }
    if config.reduced_dim > embed_dim {
        return Err(TopicModelError::InvalidConfig {
            reason: format!(
                "reduced_dim {} exceeds embedding dimension {embed_dim}",
                config.reduced_dim
            ),
        });
    }

    let seed = config.effective_seed();
    let n = embeddings.len();
    let d_topic = config.topic_embed_dim;

    // stage 1: seeded Gaussian projection, entries drawn row-major and
    // scaled by 1/sqrt(reduced_dim) so projected scales stay comparable
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (config.reduced_dim as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..config.reduced_dim)
        .map(|_| {
            (0..embed_dim)
                .map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    g * scale
                })
                .collect()
        })
        .collect();
    let points: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| {
            projection
                .iter()
                .map(|row| row.iter().zip(e.values()).map(|(p, v)| p * v).sum())
                .collect()
        })
        .collect();

    // stage 2: feasibility walk over k, largest first; each attempt gets
    // its own seeded stream so accepting or rejecting one k cannot
    // perturb the next
    let k_max = n / config.min_cluster_size;
    let mut fitted: Option<(usize, Vec<Vec<f64>>, Vec<usize>)> = None;
    for k in (1..=k_max).rev() {
        let mut attempt_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + k as u64));
        let (centroids, assignments) = kmeans(&points, k, &mut attempt_rng);
        let mut counts = vec![0usize; k];
        for &c in &assignments {
            counts[c] += 1;
        }
        if counts.iter().all(|&c| c >= config.min_cluster_size) {
            fitted = Some((k, centroids, assignments));
            break;
        }
    }

    let (k, centroids, assignments) = match fitted {
        Some(found) => found,
        None => {
            // no feasible clustering; everything is an outlier and the
            // table holds only the outlier row
            return Ok(TopicModelState {
                version: STATE_VERSION,
                config: config.clone(),
                embed_dim,
                k: 0,
                projection,
                centroids: Vec::new(),
                term_weights: Vec::new(),
                topic_table: vec![vec![0.0; d_topic]],
                outlier_thresholds: Vec::new(),
            });
        }
    };

    // stage 3: class-based TF-IDF over member unigrams
    let mut member_texts: Vec<Vec<&str>> = vec![Vec::new(); k];
    for (text, &c) in texts.iter().zip(&assignments) {
        member_texts[c].push(text.as_str());
    }
    let counts: Vec<BTreeMap<String, u64>> =
        member_texts.iter().map(|m| count_terms(m)).collect();
    let term_weights = ctfidf(&counts)?;

    // stage 4: topic embeddings from mean document embeddings, truncated
    // or zero-padded to d_topic; outlier row stays zero
    let mut topic_table = vec![vec![0.0; d_topic]; k + 1];
    for (c, row) in topic_table.iter_mut().enumerate().take(k) {
        let members: Vec<&DocumentEmbedding> = embeddings
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == c)
            .map(|(e, _)| e)
            .collect();
        let mut mean = vec![0.0; embed_dim];
        for e in &members {
            for (m, v) in mean.iter_mut().zip(e.values()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= members.len() as f64;
        }
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = mean.get(j).copied().unwrap_or(0.0);
        }
    }

    // stage 5: distance cutoffs at the configured quantile; 1.0 means no
    // gating, encoded as None
    let outlier_thresholds: Vec<Option<f64>> = if config.outlier_distance_quantile >= 1.0 {
        vec![None; k]
    } else {
        (0..k)
            .map(|c| {
                let distances: Vec<f64> = points
                    .iter()
                    .zip(&assignments)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| dist2(p, &centroids[c]).sqrt())
                    .collect();
                Some(distance_quantile(distances, config.outlier_distance_quantile))
            })
            .collect()
    };

    Ok(TopicModelState {
        version: STATE_VERSION,
        config: config.clone(),
        embed_dim,
        k,
        projection,
        centroids,
        term_weights,
        topic_table,
        outlier_thresholds,
    })
}

/// Assigns one embedding to its nearest topic, or the outlier topic when
/// the nearest centroid is farther than its distance cutoff (or when the
/// model has no topics at all).
pub fn assign_topic(
    embedding: &DocumentEmbedding,
    state: &TopicModelState,
) -> Result<TopicId, TopicModelError> {
    if embedding.dim() != state.embed_dim {
        return Err(TopicModelError::DimensionMismatch {
            expected: state.embed_dim,
            got: embedding.dim(),
        });
    }
    let point = state.project(embedding.values());
    match nearest_centroid(&point, &state.centroids) {
        None => Ok(TopicId::OUTLIER),
        Some((id, distance)) => match state.outlier_thresholds[id] {
            Some(threshold) if distance > threshold => Ok(TopicId::OUTLIER),
            _ => Ok(TopicId(id as i32)),
        },
    }
}

pub fn assign_topics(
    embeddings: &[DocumentEmbedding],
    state: &TopicModelState,
) -> Result<Vec<TopicId>, TopicModelError> {
    embeddings.iter().map(|e| assign_topic(e, state)).collect()
}

/// The `k` highest-weight terms of a topic, heaviest first, ties broken
/// lexicographically. Only positive-weight terms count, so fewer than
/// `k` may come back.
pub fn top_terms(
    state: &TopicModelState,
    topic: TopicId,
    k: usize,
) -> Result<Vec<String>, TopicModelError> {
    if k == 0 {
        return Err(TopicModelError::InvalidArgument {
            reason: String::from("term count must be positive"),
        });
    }
    if topic.is_outlier() || topic.0 as usize >= state.k {
        return Err(TopicModelError::UnknownTopic {
            topic: topic.0,
            k: state.k,
        });
    }
    let weights = &state.term_weights[topic.0 as usize];
    let mut terms: Vec<(&String, f64)> = weights
        .iter()
        .filter(|(_, &w)| w > 0.0)
        .map(|(t, &w)| (t, w))
        .collect();
    terms.sort_by(|(ta, wa), (tb, wb)| {
        wb.partial_cmp(wa)
            .expect("weights are finite")
            .then_with(|| ta.cmp(tb))
    });
    Ok(terms.into_iter().take(k).map(|(t, _)| t.clone()).collect())
}

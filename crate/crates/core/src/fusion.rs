//! Fused classification: pooled document embedding ++ topic embedding,
//! through a two-class softmax head.
//!
//! The head and the topic embedding table are the only trainable
//! parameters. Training is plain mini-batch gradient descent on mean
//! cross-entropy (optionally L2-penalized on the head weights), with a
//! seeded shuffle per epoch and seeded uniform head initialization, so a
//! (config, examples, topic state) triple fully determines the result.
//! The analytic gradient is exposed through [`loss_gradient`] so it can
//! be checked against finite differences.
//!
//! Class order everywhere: index 0 = human, index 1 = machine.

use crate::corpus::AnnotationProvenance;
use crate::encoder::DocumentEmbedding;
use crate::fingerprint;
use crate::topic_model::{TopicId, TopicModelState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("feature has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training needs both classes, got {human} human and {machine} machine examples")]
    SingleClassInput { human: usize, machine: usize },
    #[error("topic {topic} is invalid for a table with {k} topics")]
    UnknownTopic { topic: i32, k: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("parameters became non-finite in epoch {epoch}")]
    NonFiniteParameters { epoch: usize },
    #[error("gradient of an empty batch is undefined")]
    EmptyBatch,
    #[error("invalid train config: {reason}")]
    InvalidConfig { reason: String },
}

/// Concatenation of a pooled embedding (first) and a topic embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    values: Vec<f64>,
}

impl FusedFeature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Exact concatenation, pooled part first. Any width combination is a
/// valid fused feature; width errors surface where the feature meets a
/// head of the wrong size.
pub fn fuse(pooled: &DocumentEmbedding, topic_embedding: &[f64]) -> FusedFeature {
    let mut values = Vec::with_capacity(pooled.dim() + topic_embedding.len());
    values.extend_from_slice(pooled.values());
    values.extend_from_slice(topic_embedding);
    FusedFeature { values }
}

/// The two-class linear head: logits = W x + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// Two rows (human, machine), each as wide as the fused feature.
    pub w: Vec<Vec<f64>>,
    pub b: [f64; 2],
}

impl ClassifierHead {
    pub fn zeros(width: usize) -> Self {
        ClassifierHead {
            w: vec![vec![0.0; width]; 2],
            b: [0.0, 0.0],
        }
    }

    pub fn width(&self) -> usize {
        self.w[0].len()
    }

    fn is_finite(&self) -> bool {
        self.b.iter().all(|v| v.is_finite())
            && self.w.iter().flatten().all(|v| v.is_finite())
    }
}

/// Numerically safe two-way softmax (shift by the max logit first).
fn softmax2(z0: f64, z1: f64) -> (f64, f64) {
    let m = z0.max(z1);
    let e0 = (z0 - m).exp();
    let e1 = (z1 - m).exp();
    let sum = e0 + e1;
    (e0 / sum, e1 / sum)
}

/// Class probabilities (p_human, p_machine) for one fused feature.
pub fn forward(fused: &FusedFeature, head: &ClassifierHead) -> Result<(f64, f64), FusionError> {
    if fused.dim() != head.width() {
        return Err(FusionError::DimensionMismatch {
            expected: head.width(),
            got: fused.dim(),
        });
    }
    let logit = |row: &[f64], bias: f64| {
        row.iter().zip(fused.values()).map(|(w, x)| w * x).sum::<f64>() + bias
    };
    Ok(softmax2(logit(&head.w[0], head.b[0]), logit(&head.w[1], head.b[1])))
}

/// One training instance: the document's pooled embedding, its topic, and
/// the gold label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainExample {
    pub embedding: DocumentEmbedding,
    pub topic: TopicId,
    pub label: AnnotationProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Absent means "let the caller derive one" (standalone use falls
    /// back to 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// When false the topic table is frozen at its initialization and
    /// only the head trains.
    #[serde(default = "default_train_topic_table")]
    pub train_topic_table: bool,
    /// Coefficient of the squared-norm penalty on the head weights W
    /// (bias and topic table are not penalized).
    #[serde(default)]
    pub l2_penalty: f64,
}

fn default_learning_rate() -> f64 {
    0.01
}

fn default_epochs() -> usize {
    20
}

fn default_batch_size() -> usize {
    32
}

fn default_train_topic_table() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: None,
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            train_topic_table: default_train_topic_table(),
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), FusionError> {
        let invalid = |reason: &str| {
            Err(FusionError::InvalidConfig {
                reason: reason.to_string(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be a positive finite number");
        }
        if self.epochs == 0 {
            return invalid("epochs must be positive");
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be positive");
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return invalid("l2_penalty must be nonnegative and finite");
        }
        Ok(())
    }
}

/// The trained parameters plus enough shape information to predict, and
/// a fingerprint identifying the producing inputs: equal fingerprints
/// mean byte-identical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub head: ClassifierHead,
    /// Final (K+1) x d_topic table; row K is the outlier topic.
    pub topic_table: Vec<Vec<f64>>,
    pub d_enc: usize,
    pub d_topic: usize,
    pub k: usize,
    /// Hash over (train config, examples, topic state).
    pub fingerprint: String,
    /// Mean objective per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
}

/// Gradients of the mean-cross-entropy objective, shaped like the
/// parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: [f64; 2],
    pub table: Vec<Vec<f64>>,
}

/// Shared gradient core over examples selected by index.
fn gradient_over(
    indices: &[usize],
    examples: &[TrainExample],
    head: &ClassifierHead,
    table: &[Vec<f64>],
    l2_penalty: f64,
) -> Result<(f64, Gradients), FusionError> {
    if indices.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    let k = table.len() - 1;
    let d_topic = table[0].len();
    let d_enc = examples[indices[0]].embedding.dim();
    let width = d_enc + d_topic;
    if head.width() != width {
        return Err(FusionError::DimensionMismatch {
            expected: head.width(),
            got: width,
        });
    }

    let n = indices.len() as f64;
    let mut loss = 0.0;
    let mut grad = Gradients {
        w: vec![vec![0.0; width]; 2],
        b: [0.0, 0.0],
        table: vec![vec![0.0; d_topic]; k + 1],
    };

    for &i in indices {
        let example = &examples[i];
        if example.embedding.dim() != d_enc {
            return Err(FusionError::DimensionMismatch {
                expected: d_enc,
                got: example.embedding.dim(),
            });
        }
        let row = example.topic.table_row(k);
        if row >= table.len() {
            return Err(FusionError::UnknownTopic {
                topic: example.topic.0,
                k,
            });
        }
        let fused = fuse(&example.embedding, &table[row]);
        let x = fused.values();
        let logit = |c: usize| {
            head.w[c].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + head.b[c]
        };
        let (p0, p1) = softmax2(logit(0), logit(1));
        let y = example.label.class_index();
        loss -= [p0, p1][y].ln();

        // d loss / d logits = softmax(z) - onehot(y)
        let dz = [p0 - if y == 0 { 1.0 } else { 0.0 }, p1 - if y == 1 { 1.0 } else { 0.0 }];
        for (c, &dzc) in dz.iter().enumerate() {
            grad.b[c] += dzc / n;
            for (g, v) in grad.w[c].iter_mut().zip(x) {
                *g += dzc * v / n;
            }
        }
        // topic-table gradient: the feature's topic block receives
        // W^T dz restricted to the topic columns
        for j in 0..d_topic {
            let dx = dz[0] * head.w[0][d_enc + j] + dz[1] * head.w[1][d_enc + j];
            grad.table[row][j] += dx / n;
        }
    }

    loss /= n;
    if l2_penalty > 0.0 {
        let mut squared = 0.0;
        for c in 0..2 {
            for (g, w) in grad.w[c].iter_mut().zip(&head.w[c]) {
                squared += w * w;
                *g += 2.0 * l2_penalty * w;
            }
        }
        loss += l2_penalty * squared;
    }
    Ok((loss, grad))
}

/// Mean cross-entropy (plus the configured L2 penalty on W) and its
/// analytic gradient over one batch, at the given parameters.
pub fn loss_gradient(
    batch: &[TrainExample],
    head: &ClassifierHead,
    table: &[Vec<f64>],
    l2_penalty: f64,
) -> Result<(f64, Gradients), FusionError> {
    let indices: Vec<usize> = (0..batch.len()).collect();
    gradient_over(&indices, batch, head, table, l2_penalty)
}

/// Trains the head (and optionally the topic table) by mini-batch
/// gradient descent. Deterministic given the config seed; see the module
/// docs for the exact order of random draws.
pub fn train(
    examples: &[TrainExample],
    topic_state: &TopicModelState,
    config: &TrainConfig,
) -> Result<TrainedModel, FusionError> {
    config.validate()?;

    let mut class_counts = [0usize; 2];
    for example in examples {
        class_counts[example.label.class_index()] += 1;
    }
    if class_counts[0] == 0 || class_counts[1] == 0 {
        return Err(FusionError::SingleClassInput {
            human: class_counts[0],
            machine: class_counts[1],
        });
    }

    let k = topic_state.k;
    let d_topic = topic_state.topic_embed_dim();
    if topic_state.topic_table.len() != k + 1
        || topic_state.topic_table.iter().any(|row| row.len() != d_topic)
    {
        return Err(FusionError::InvalidConfig {
            reason: format!("topic table is not {} x {d_topic}", k + 1),
        });
    }
    let d_enc = examples[0].embedding.dim();
    for example in examples {
        if example.embedding.dim() != d_enc {
            return Err(FusionError::DimensionMismatch {
                expected: d_enc,
                got: example.embedding.dim(),
            });
        }
        if example.topic.0 >= k as i32 {
            return Err(FusionError::UnknownTopic {
                topic: example.topic.0,
                k,
            });
        }
    }

    let fingerprint = fingerprint::combine(&[
        &fingerprint::hash_json(config),
        &fingerprint::hash_json(&examples),
        &fingerprint::hash_json(topic_state),
    ]);

    // seeded initialization: head weights row-major, then the two biases,
    // all uniform in [-0.05, 0.05]; the same stream then drives the
    // per-epoch shuffles
    let width = d_enc + d_topic;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(0));
    let mut head = ClassifierHead::zeros(width);
    for row in &mut head.w {
        for value in row.iter_mut() {
            *value = rng.random_range(-0.05..=0.05);
        }
    }
    for value in &mut head.b {
        *value = rng.random_range(-0.05..=0.05);
    }
    let mut table = topic_state.topic_table.clone();

    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = gradient_over(batch, examples, &head, &table, config.l2_penalty)?;
            if !loss.is_finite() {
                return Err(FusionError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;

            let lr = config.learning_rate;
            for c in 0..2 {
                head.b[c] -= lr * grad.b[c];
                for (w, g) in head.w[c].iter_mut().zip(&grad.w[c]) {
                    *w -= lr * g;
                }
            }
            if config.train_topic_table {
                for (row, grow) in table.iter_mut().zip(&grad.table) {
                    for (v, g) in row.iter_mut().zip(grow) {
                        *v -= lr * g;
                    }
                }
            }
            if !head.is_finite() || table.iter().flatten().any(|v| !v.is_finite()) {
                return Err(FusionError::NonFiniteParameters { epoch });
            }
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    Ok(TrainedModel {
        head,
        topic_table: table,
        d_enc,
        d_topic,
        k,
        fingerprint,
        epoch_losses,
    })
}

/// Predicts a label: argmax of the forward probabilities, an exact tie
/// going to human. The outlier topic (-1) uses the reserved table row, so
/// prediction is total over valid topic ids.
pub fn predict(
    embedding: &DocumentEmbedding,
    topic: TopicId,
    model: &TrainedModel,
) -> Result<AnnotationProvenance, FusionError> {
    if topic.0 >= model.k as i32 {
        return Err(FusionError::UnknownTopic {
            topic: topic.0,
            k: model.k,
        });
    }
    if embedding.dim() != model.d_enc {
        return Err(FusionError::DimensionMismatch {
            expected: model.d_enc,
            got: embedding.dim(),
        });
    }
    let row = topic.table_row(model.k);
    let fused = fuse(embedding, &model.topic_table[row]);
    let (p_human, p_machine) = forward(&fused, &model.head)?;
    Ok(if p_human >= p_machine {
        AnnotationProvenance::Human
    } else {
        AnnotationProvenance::Machine
    })
}

pub fn predict_batch(
    embeddings: &[DocumentEmbedding],
    topics: &[TopicId],
    model: &TrainedModel,
) -> Result<Vec<AnnotationProvenance>, FusionError> {
    if embeddings.len() != topics.len() {
        return Err(FusionError::DimensionMismatch {
            expected: embeddings.len(),
            got: topics.len(),
        });
    }
    embeddings
        .iter()
        .zip(topics)
        .map(|(e, &t)| predict(e, t, model))
        .collect()
}

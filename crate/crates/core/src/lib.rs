//! Annotation-provenance detection pipeline.
//!
//! Classifies whether a tweet's symptom annotation was produced by a human
//! domain expert or by an LLM. The pipeline ingests a TSV corpus, optionally
//! translates it, encodes each tweet into a pooled document embedding,
//! discovers latent topics over those embeddings, fuses the pooled embedding
//! with a learned per-topic embedding, and trains a two-class head on the
//! fused features.
//!
//! Modules follow the pipeline stages:
//!
//! - [`corpus`]: TSV parsing, validation, stratified splitting, prediction
//!   file emission.
//! - [`translation`]: pluggable translator client with a persistent on-disk
//!   cache and an offline dictionary client.
//! - [`encoder`]: pooled document embeddings (hashed features, a pluggable
//!   transformer backend, or a constant probe).
//! - [`topic_model`]: seeded projection + k-means topic discovery,
//!   class-based TF-IDF topic descriptors, topic embedding table.
//! - [`fusion`]: embedding/topic concatenation, softmax head, mini-batch
//!   gradient-descent training with verifiable analytic gradients.
//! - [`evaluation`]: accuracy/confusion reports, report rendering, and a
//!   synthetic corpus generator with controllable class signal.
//! - [`experiment`]: config-driven end-to-end runs and run comparison.
//!
//! Everything is deterministic given the seeds in the configuration; no
//! wall-clock or OS entropy enters the pipeline.

pub mod corpus;
pub mod encoder;
pub mod evaluation;
pub mod experiment;
pub mod fingerprint;
pub mod fusion;
pub mod topic_model;
pub mod translation;

pub use corpus::{AnnotationProvenance, Corpus, Language, TweetRecord};
pub use encoder::{DocumentEmbedding, Encoder, EncoderConfig};
pub use evaluation::EvalReport;
pub use experiment::ExperimentConfig;
pub use fusion::{TrainConfig, TrainedModel};
pub use topic_model::{TopicId, TopicModelConfig, TopicModelState};

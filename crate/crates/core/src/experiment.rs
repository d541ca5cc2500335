//! Config-driven experiment runs: ingest, optional translation, split,
//! encode, topic discovery, training, and evaluation, with every artifact
//! persisted under one run directory.
//!
//! A run is fully determined by its config file: every stage that draws
//! randomness takes a seed from the config, either explicitly per section
//! or derived from the run-level seed at a fixed per-stage offset. The
//! config snapshot written into the run directory therefore replays the
//! run exactly.

use crate::corpus::{self, AnnotationProvenance, Corpus, Language};
use crate::encoder::{encode_batch, DocumentEmbedding, EncoderConfig};
use crate::evaluation::{self, EvalReport};
use crate::fingerprint;
use crate::fusion::{self, TrainConfig, TrainExample, TrainedModel};
use crate::topic_model::{self, TopicId, TopicModelConfig, TopicModelState};
use crate::translation::{
    translate_corpus, DictionaryClient, RetryPolicy, TranslateOptions, TranslationCache,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("malformed artifact {name}: {reason}")]
    Artifact { name: &'static str, reason: String },
    #[error("run '{run_name}' failed: {source}")]
    RunFailed {
        run_name: String,
        #[source]
        source: Box<ExperimentError>,
    },
}

/// Wraps a module error with the name of the pipeline stage it broke.
fn stage<E: Display>(name: &'static str) -> impl Fn(E) -> ExperimentError {
    move |e| ExperimentError::Stage {
        stage: name,
        message: e.to_string(),
    }
}

fn read_file(stage_name: &'static str, path: &Path) -> Result<Vec<u8>, ExperimentError> {
    fs::read(path).map_err(|e| ExperimentError::Stage {
        stage: stage_name,
        message: if e.kind() == std::io::ErrorKind::NotFound {
            format!("file not found: {}", path.display())
        } else {
            format!("{}: {e}", path.display())
        },
    })
}

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of each class that goes to the training split.
    pub train_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateConfig {
    pub dictionary_path: PathBuf,
    #[serde(default)]
    pub passthrough_on_miss: bool,
    pub cache_path: PathBuf,
    #[serde(default = "default_translate_batch")]
    pub batch_size: usize,
}

fn default_translate_batch() -> usize {
    16
}

/// The `[topics]` section: clustering settings plus an optional dedicated
/// encoder for the topic pathway. When `encoder` is present, clustering
/// and topic assignment run on its embeddings while the classifier keeps
/// the main ones, which isolates what the topic path contributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicsSection {
    #[serde(default = "default_reduced_dim")]
    pub reduced_dim: usize,
    #[serde(default = "default_min_cluster_size")]
    pub min_cluster_size: usize,
    #[serde(default = "default_outlier_quantile")]
    pub outlier_distance_quantile: f64,
    #[serde(default = "default_topic_embed_dim")]
    pub topic_embed_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
}

fn default_reduced_dim() -> usize {
    TopicModelConfig::default().reduced_dim
}

fn default_min_cluster_size() -> usize {
    TopicModelConfig::default().min_cluster_size
}

fn default_outlier_quantile() -> f64 {
    TopicModelConfig::default().outlier_distance_quantile
}

fn default_topic_embed_dim() -> usize {
    TopicModelConfig::default().topic_embed_dim
}

impl Default for TopicsSection {
    fn default() -> Self {
        TopicsSection {
            reduced_dim: default_reduced_dim(),
            min_cluster_size: default_min_cluster_size(),
            outlier_distance_quantile: default_outlier_quantile(),
            topic_embed_dim: default_topic_embed_dim(),
            seed: None,
            encoder: None,
        }
    }
}

impl TopicsSection {
    fn model_config(&self, effective_seed: u64) -> TopicModelConfig {
        TopicModelConfig {
            reduced_dim: self.reduced_dim,
            min_cluster_size: self.min_cluster_size,
            outlier_distance_quantile: self.outlier_distance_quantile,
            topic_embed_dim: self.topic_embed_dim,
            seed: Some(effective_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub run_name: String,
    pub corpus_path: PathBuf,
    #[serde(default = "default_language")]
    pub language: Language,
    pub output_dir: PathBuf,
    /// Run-level seed; per-section seeds derive from it when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub split: SplitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translate: Option<TranslateConfig>,
    pub encoder: EncoderConfig,
    /// Absent means the baseline pipeline: no clustering, no topic
    /// embedding, every document on the outlier topic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topics: Option<TopicsSection>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_language() -> Language {
    Language::Spanish
}

/// Effective per-stage seeds. Explicit section seeds win; the rest derive
/// from the run seed at fixed offsets so two sections never share a
/// stream by accident.
struct Seeds {
    split: u64,
    encoder: u64,
    topics: u64,
    topics_encoder: u64,
    train: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::InvalidConfig {
                reason: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |reason: String| Err(ExperimentError::InvalidConfig { reason });
        if self.version != CONFIG_VERSION {
            return invalid(format!(
                "unsupported config version {} (this build reads {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.run_name.is_empty() {
            return invalid("run_name must not be empty".into());
        }
        if self.run_name.chars().any(std::path::is_separator)
            || self.run_name == "."
            || self.run_name == ".."
        {
            return invalid(format!(
                "run_name '{}' must be a plain directory name",
                self.run_name
            ));
        }
        if self.output_dir.as_os_str().is_empty() {
            return invalid("output_dir must not be empty".into());
        }
        Ok(())
    }

    /// Reinterprets relative paths against `base` (typically the config
    /// file's directory), leaving absolute ones alone.
    pub fn rebase_paths(&mut self, base: &Path) {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        rebase(&mut self.corpus_path);
        rebase(&mut self.output_dir);
        if let Some(t) = &mut self.translate {
            rebase(&mut t.dictionary_path);
            rebase(&mut t.cache_path);
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_name)
    }

    fn seeds(&self) -> Seeds {
        let run = self.seed.unwrap_or(0);
        Seeds {
            split: self.split.seed.unwrap_or(run),
            encoder: self.encoder.seed.unwrap_or(run.wrapping_add(1)),
            topics: self
                .topics
                .as_ref()
                .and_then(|t| t.seed)
                .unwrap_or(run.wrapping_add(2)),
            topics_encoder: self
                .topics
                .as_ref()
                .and_then(|t| t.encoder.as_ref())
                .and_then(|e| e.seed)
                .unwrap_or(run.wrapping_add(3)),
            train: self.train.seed.unwrap_or(run.wrapping_add(4)),
        }
    }
}

fn with_seed(config: &EncoderConfig, effective_seed: u64) -> EncoderConfig {
    EncoderConfig {
        seed: Some(effective_seed),
        ..config.clone()
    }
}

pub const MODEL_VERSION: u32 = 1;

/// On-disk envelope for a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    /// Hash of the as-run config; ties the model to its provenance.
    pub run_fingerprint: String,
    pub topics_enabled: bool,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("model serializes");
        json.push('\n');
        json
    }

    pub fn from_json(json: &str) -> Result<Self, ExperimentError> {
        let file: ModelFile = serde_json::from_str(json).map_err(|e| ExperimentError::Artifact {
            name: "model.json",
            reason: e.to_string(),
        })?;
        if file.version != MODEL_VERSION {
            return Err(ExperimentError::Artifact {
                name: "model.json",
                reason: format!(
                    "unsupported model version {} (this build reads {MODEL_VERSION})",
                    file.version
                ),
            });
        }
        Ok(file)
    }
}

/// Runs the full pipeline and returns the dev-split report. All artifacts
/// land in `output_dir/run_name`; a failed run leaves a FAILED marker
/// there instead of a complete artifact set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport, ExperimentError> {
    let report = execute(config, true)?;
    Ok(report.expect("evaluated run produces a report"))
}

/// Runs the pipeline through training only (no predictions or report).
pub fn train_model(config: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    execute(config, false)?;
    Ok(config.run_dir())
}

fn execute(
    config: &ExperimentConfig,
    evaluate: bool,
) -> Result<Option<EvalReport>, ExperimentError> {
    config.validate()?;
    let run_dir = config.run_dir();
    fs::create_dir_all(&run_dir).map_err(stage("prepare"))?;
    fs::write(run_dir.join("config.toml"), config.to_toml()).map_err(stage("prepare"))?;
    match pipeline(config, evaluate, &run_dir) {
        Ok(report) => {
            // a rerun after a failure must not leave a stale marker
            let marker = run_dir.join("FAILED");
            if marker.exists() {
                let _ = fs::remove_file(&marker);
            }
            Ok(report)
        }
        Err(e) => {
            let _ = fs::write(run_dir.join("FAILED"), format!("{e}\n"));
            Err(e)
        }
    }
}

fn texts_of(split: &Corpus) -> Vec<String> {
    split.records().iter().map(|r| r.text.clone()).collect()
}

fn labels_of(split: &Corpus) -> Vec<AnnotationProvenance> {
    split
        .records()
        .iter()
        .map(|r| r.label.expect("split output is labeled"))
        .collect()
}

fn pipeline(
    config: &ExperimentConfig,
    evaluate: bool,
    run_dir: &Path,
) -> Result<Option<EvalReport>, ExperimentError> {
    let corpus = parse_corpus_stage(config)?;
    let corpus = match &config.translate {
        Some(t) => {
            let translated = translate_stage(&corpus, t)?;
            fs::write(
                run_dir.join("translated.tsv"),
                corpus::serialize_corpus(&translated),
            )
            .map_err(stage("translate"))?;
            translated
        }
        None => corpus,
    };

    let seeds = config.seeds();
    let (train_split, dev_split) =
        corpus::split_corpus(&corpus, config.split.train_fraction, seeds.split)
            .map_err(stage("split"))?;
    let train_texts = texts_of(&train_split);
    let dev_texts = texts_of(&dev_split);

    let main_encoder = with_seed(&config.encoder, seeds.encoder);
    let train_embeddings = encode_batch(&train_texts, &main_encoder).map_err(stage("encode"))?;
    let dev_embeddings = encode_batch(&dev_texts, &main_encoder).map_err(stage("encode"))?;

    let (topic_state, train_topics, dev_topics) = match &config.topics {
        Some(section) => {
            // the topic pathway may see different embeddings than the head
            let (cluster_train, cluster_dev) = match &section.encoder {
                Some(override_config) => {
                    let topic_encoder = with_seed(override_config, seeds.topics_encoder);
                    (
                        encode_batch(&train_texts, &topic_encoder).map_err(stage("encode"))?,
                        encode_batch(&dev_texts, &topic_encoder).map_err(stage("encode"))?,
                    )
                }
                None => (train_embeddings.clone(), dev_embeddings.clone()),
            };
            let state = topic_model::fit_topics(
                &cluster_train,
                &train_texts,
                &section.model_config(seeds.topics),
            )
            .map_err(stage("topics"))?;
            let train_topics =
                topic_model::assign_topics(&cluster_train, &state).map_err(stage("topics"))?;
            let dev_topics =
                topic_model::assign_topics(&cluster_dev, &state).map_err(stage("topics"))?;
            fs::write(run_dir.join("topic_model.json"), state.to_json())
                .map_err(stage("topics"))?;
            (state, train_topics, dev_topics)
        }
        None => {
            let d_enc = train_embeddings.first().map_or(0, DocumentEmbedding::dim);
            (
                TopicModelState::topicless(d_enc),
                vec![TopicId::OUTLIER; train_embeddings.len()],
                vec![TopicId::OUTLIER; dev_embeddings.len()],
            )
        }
    };

    let examples: Vec<TrainExample> = train_embeddings
        .iter()
        .zip(&train_topics)
        .zip(labels_of(&train_split))
        .map(|((embedding, &topic), label)| TrainExample {
            embedding: embedding.clone(),
            topic,
            label,
        })
        .collect();
    let train_config = TrainConfig {
        seed: Some(seeds.train),
        ..config.train.clone()
    };
    let model = fusion::train(&examples, &topic_state, &train_config).map_err(stage("train"))?;

    let run_fingerprint = fingerprint::hash_json(config);
    let model_file = ModelFile {
        version: MODEL_VERSION,
        run_fingerprint: run_fingerprint.clone(),
        topics_enabled: config.topics.is_some(),
        model,
    };
    fs::write(run_dir.join("model.json"), model_file.to_json()).map_err(stage("train"))?;
    if !evaluate {
        return Ok(None);
    }

    let predictions = fusion::predict_batch(&dev_embeddings, &dev_topics, &model_file.model)
        .map_err(stage("evaluate"))?;
    let golds = labels_of(&dev_split);
    let report = EvalReport::from_predictions(
        &config.run_name,
        &predictions,
        &golds,
        &run_fingerprint,
    )
    .map_err(stage("evaluate"))?;
    let predictions_tsv =
        corpus::write_predictions(&dev_split, &predictions).map_err(stage("evaluate"))?;
    fs::write(run_dir.join("predictions.tsv"), predictions_tsv).map_err(stage("evaluate"))?;
    fs::write(
        run_dir.join("report.json"),
        evaluation::reports_to_json(std::slice::from_ref(&report)),
    )
    .map_err(stage("evaluate"))?;
    let table =
        evaluation::render_table(std::slice::from_ref(&report)).map_err(stage("evaluate"))?;
    fs::write(run_dir.join("report.txt"), table).map_err(stage("evaluate"))?;
    Ok(Some(report))
}

fn parse_corpus_stage(config: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    let bytes = read_file("ingest", &config.corpus_path)?;
    corpus::parse_corpus(&bytes, config.language).map_err(stage("ingest"))
}

fn translate_stage(corpus: &Corpus, config: &TranslateConfig) -> Result<Corpus, ExperimentError> {
    let dictionary = read_file("translate", &config.dictionary_path)?;
    let client = DictionaryClient::from_tsv(&dictionary, config.passthrough_on_miss)
        .map_err(stage("translate"))?;
    let mut cache = TranslationCache::open(&config.cache_path).map_err(stage("translate"))?;
    // offline clients fail deterministically, so waiting between
    // attempts buys nothing
    let options = TranslateOptions {
        batch_size: config.batch_size,
        retry: RetryPolicy::immediate(),
    };
    translate_corpus(corpus, &client, &mut cache, &options).map_err(stage("translate"))
}

/// Loads the corpus and applies the configured translation, nothing else.
pub fn load_corpus(config: &ExperimentConfig) -> Result<Corpus, ExperimentError> {
    config.validate()?;
    let corpus = parse_corpus_stage(config)?;
    match &config.translate {
        Some(t) => translate_stage(&corpus, t),
        None => Ok(corpus),
    }
}

/// Fits a topic model on the whole corpus (no split), for exploration.
/// Returns the fitted state and one topic per document.
pub fn discover_topics(
    config: &ExperimentConfig,
) -> Result<(TopicModelState, Vec<TopicId>), ExperimentError> {
    let section = config
        .topics
        .as_ref()
        .ok_or_else(|| ExperimentError::InvalidConfig {
            reason: "config has no [topics] section".into(),
        })?;
    let corpus = load_corpus(config)?;
    let texts = texts_of(&corpus);
    let seeds = config.seeds();
    let encoder_config = match &section.encoder {
        Some(override_config) => with_seed(override_config, seeds.topics_encoder),
        None => with_seed(&config.encoder, seeds.encoder),
    };
    let embeddings = encode_batch(&texts, &encoder_config).map_err(stage("encode"))?;
    let state = topic_model::fit_topics(&embeddings, &texts, &section.model_config(seeds.topics))
        .map_err(stage("topics"))?;
    let assignments = topic_model::assign_topics(&embeddings, &state).map_err(stage("topics"))?;
    Ok((state, assignments))
}

/// What scoring a run against a corpus produces: per-record predictions
/// (also rendered as a submission-ready TSV) and, when the corpus is
/// labeled, a report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub predictions: Vec<AnnotationProvenance>,
    pub predictions_tsv: String,
    pub report: Option<EvalReport>,
}

/// Scores a finished run against a corpus file using the run directory's
/// own config snapshot, so encoding and topic assignment replay exactly.
/// Unlabeled corpora yield predictions without a report.
pub fn evaluate_run(
    run_dir: &Path,
    corpus_path: &Path,
) -> Result<RunEvaluation, ExperimentError> {
    let snapshot = read_file("evaluate", &run_dir.join("config.toml"))?;
    let snapshot = String::from_utf8(snapshot).map_err(|_| ExperimentError::Artifact {
        name: "config.toml",
        reason: "not valid UTF-8".into(),
    })?;
    let config = ExperimentConfig::from_toml(&snapshot)?;
    let model_json = read_file("evaluate", &run_dir.join("model.json"))?;
    let model_json = String::from_utf8(model_json).map_err(|_| ExperimentError::Artifact {
        name: "model.json",
        reason: "not valid UTF-8".into(),
    })?;
    let model_file = ModelFile::from_json(&model_json)?;

    let bytes = read_file("evaluate", corpus_path)?;
    let corpus = corpus::parse_corpus(&bytes, config.language).map_err(stage("evaluate"))?;
    let corpus = match &config.translate {
        Some(t) => translate_stage(&corpus, t)?,
        None => corpus,
    };
    let texts = texts_of(&corpus);
    let seeds = config.seeds();
    let embeddings =
        encode_batch(&texts, &with_seed(&config.encoder, seeds.encoder)).map_err(stage("encode"))?;

    let topics = match &config.topics {
        Some(section) if model_file.topics_enabled => {
            let state_json = read_file("evaluate", &run_dir.join("topic_model.json"))?;
            let state_json =
                String::from_utf8(state_json).map_err(|_| ExperimentError::Artifact {
                    name: "topic_model.json",
                    reason: "not valid UTF-8".into(),
                })?;
            let state =
                TopicModelState::from_json(&state_json).map_err(|e| ExperimentError::Artifact {
                    name: "topic_model.json",
                    reason: e.to_string(),
                })?;
            let cluster_embeddings = match &section.encoder {
                Some(override_config) => {
                    encode_batch(&texts, &with_seed(override_config, seeds.topics_encoder))
                        .map_err(stage("encode"))?
                }
                None => embeddings.clone(),
            };
            topic_model::assign_topics(&cluster_embeddings, &state).map_err(stage("topics"))?
        }
        _ => vec![TopicId::OUTLIER; embeddings.len()],
    };

    let predictions = fusion::predict_batch(&embeddings, &topics, &model_file.model)
        .map_err(stage("evaluate"))?;
    let predictions_tsv =
        corpus::write_predictions(&corpus, &predictions).map_err(stage("evaluate"))?;
    let report = if corpus.is_labeled() && !corpus.is_empty() {
        let golds = labels_of(&corpus);
        Some(
            EvalReport::from_predictions(
                &config.run_name,
                &predictions,
                &golds,
                &model_file.run_fingerprint,
            )
            .map_err(stage("evaluate"))?,
        )
    } else {
        None
    };
    Ok(RunEvaluation {
        predictions,
        predictions_tsv,
        report,
    })
}

/// Runs each config in order and renders one comparison table. Run names
/// must be unique; that is checked before any run starts.
pub fn compare_runs(
    configs: &[ExperimentConfig],
) -> Result<(Vec<EvalReport>, String), ExperimentError> {
    if configs.len() < 2 {
        return Err(ExperimentError::InvalidConfig {
            reason: format!("compare needs at least two runs, got {}", configs.len()),
        });
    }
    for config in configs {
        config.validate()?;
    }
    let mut seen = BTreeSet::new();
    for config in configs {
        if !seen.insert(config.run_name.as_str()) {
            return Err(ExperimentError::InvalidConfig {
                reason: format!("duplicate run_name '{}'", config.run_name),
            });
        }
    }
    let mut reports = Vec::with_capacity(configs.len());
    for config in configs {
        let report = run_experiment(config).map_err(|e| ExperimentError::RunFailed {
            run_name: config.run_name.clone(),
            source: Box::new(e),
        })?;
        reports.push(report);
    }
    let table = evaluation::render_table(&reports).expect("two or more reports render");
    Ok((reports, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{generate_synthetic, SyntheticSpec};
    use tempfile::TempDir;

    fn hashed_encoder(dim: usize) -> EncoderConfig {
        // no explicit seed, so the run-level derivation applies
        EncoderConfig {
            seed: None,
            ..EncoderConfig::hashed(dim, 0)
        }
    }

    /// Writes a synthetic corpus and returns a ready-to-run config.
    fn test_setup(dir: &TempDir, run_name: &str, signal: f64) -> ExperimentConfig {
        let corpus = generate_synthetic(&SyntheticSpec::with_default_vocab(30, signal, 7)).unwrap();
        let corpus_path = dir.path().join("corpus.tsv");
        fs::write(&corpus_path, corpus::serialize_corpus(&corpus)).unwrap();
        ExperimentConfig {
            version: CONFIG_VERSION,
            run_name: run_name.to_string(),
            corpus_path,
            language: Language::Spanish,
            output_dir: dir.path().join("runs"),
            seed: Some(1),
            split: SplitConfig {
                train_fraction: 0.8,
                seed: None,
            },
            translate: None,
            encoder: hashed_encoder(32),
            topics: Some(TopicsSection {
                reduced_dim: 4,
                min_cluster_size: 4,
                topic_embed_dim: 8,
                ..TopicsSection::default()
            }),
            train: TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn toml_round_trips_a_full_config() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "full", 0.9);
        config.translate = Some(TranslateConfig {
            dictionary_path: dir.path().join("dict.tsv"),
            passthrough_on_miss: true,
            cache_path: dir.path().join("cache.tsv"),
            batch_size: 4,
        });
        config.topics.as_mut().unwrap().encoder = Some(hashed_encoder(16));
        let reloaded = ExperimentConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(reloaded, config);
    }

    #[test]
    fn minimal_toml_fills_defaults() {
        let text = r#"
            version = 1
            run_name = "minimal"
            corpus_path = "corpus.tsv"
            output_dir = "runs"

            [split]
            train_fraction = 0.8

            [encoder]
            backend = "hashed_features"
            embed_dim = 16
        "#;
        let config = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(config.language, Language::Spanish);
        assert!(config.topics.is_none());
        assert!(config.translate.is_none());
        assert_eq!(config.train, TrainConfig::default());
        assert_eq!(config.seed, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
            version = 1
            run_name = "x"
            corpus_path = "c.tsv"
            output_dir = "runs"
            surprise = true

            [split]
            train_fraction = 0.8

            [encoder]
            backend = "hashed_features"
            embed_dim = 16
        "#;
        assert!(matches!(
            ExperimentConfig::from_toml(text),
            Err(ExperimentError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn config_validation_rules() {
        let dir = TempDir::new().unwrap();
        let good = test_setup(&dir, "ok", 0.5);

        let mut wrong_version = good.clone();
        wrong_version.version = 2;
        assert!(wrong_version.validate().is_err());

        let mut empty_name = good.clone();
        empty_name.run_name.clear();
        assert!(empty_name.validate().is_err());

        let mut pathy_name = good.clone();
        pathy_name.run_name = "a/b".into();
        assert!(pathy_name.validate().is_err());

        assert!(good.validate().is_ok());
    }

    #[test]
    fn explicit_section_seeds_override_derived_ones() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "seeds", 0.5);
        config.seed = Some(100);
        let derived = config.seeds();
        assert_eq!(derived.split, 100);
        assert_eq!(derived.encoder, 101);
        assert_eq!(derived.topics, 102);
        assert_eq!(derived.train, 104);

        config.split.seed = Some(9);
        config.train.seed = Some(77);
        config.topics.as_mut().unwrap().seed = Some(55);
        let explicit = config.seeds();
        assert_eq!(explicit.split, 9);
        assert_eq!(explicit.topics, 55);
        assert_eq!(explicit.train, 77);
        assert_eq!(explicit.encoder, 101, "untouched sections keep deriving");
    }

    #[test]
    fn rebase_leaves_absolute_paths_alone() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "rebase", 0.5);
        let absolute = config.corpus_path.clone();
        config.output_dir = PathBuf::from("runs");
        config.rebase_paths(Path::new("/base"));
        assert_eq!(config.corpus_path, absolute);
        assert_eq!(config.output_dir, PathBuf::from("/base/runs"));
    }

    #[test]
    fn run_emits_every_artifact() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "artifacts", 0.9);
        let report = run_experiment(&config).unwrap();
        assert!((0.0..=1.0).contains(&report.accuracy));
        assert_eq!(report.run_name, "artifacts");

        let run_dir = config.run_dir();
        for file in [
            "config.toml",
            "topic_model.json",
            "model.json",
            "predictions.tsv",
            "report.json",
            "report.txt",
        ] {
            assert!(run_dir.join(file).exists(), "missing {file}");
        }
        assert!(!run_dir.join("FAILED").exists());

        // the snapshot replays to the same config
        let snapshot = fs::read_to_string(run_dir.join("config.toml")).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&snapshot).unwrap(), config);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "twice", 0.9);
        run_experiment(&config).unwrap();
        let run_dir = config.run_dir();
        let first_report = fs::read(run_dir.join("report.json")).unwrap();
        let first_model = fs::read(run_dir.join("model.json")).unwrap();
        run_experiment(&config).unwrap();
        assert_eq!(fs::read(run_dir.join("report.json")).unwrap(), first_report);
        assert_eq!(fs::read(run_dir.join("model.json")).unwrap(), first_model);
    }

    #[test]
    fn missing_corpus_is_an_ingest_stage_error() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "missing", 0.5);
        config.corpus_path = dir.path().join("nowhere.tsv");
        let err = run_experiment(&config).unwrap_err();
        let message = err.to_string();
        assert!(
            message.starts_with("ingest: file not found"),
            "unexpected message: {message}"
        );
    }

    #[test]
    fn baseline_run_writes_no_topic_model() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "baseline", 0.9);
        config.topics = None;
        run_experiment(&config).unwrap();
        let run_dir = config.run_dir();
        assert!(!run_dir.join("topic_model.json").exists());
        let model_file =
            ModelFile::from_json(&fs::read_to_string(run_dir.join("model.json")).unwrap()).unwrap();
        assert!(!model_file.topics_enabled);
        assert_eq!(model_file.model.d_topic, 0);
    }

    #[test]
    fn failed_run_leaves_a_marker() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "marker", 0.5);
        // an unlabeled corpus cannot be split for training
        let blind = Corpus::new(
            vec![
                corpus::TweetRecord {
                    index: "1".into(),
                    text: "uno".into(),
                    label: None,
                },
                corpus::TweetRecord {
                    index: "2".into(),
                    text: "dos".into(),
                    label: None,
                },
            ],
            Language::Spanish,
        )
        .unwrap();
        fs::write(&config.corpus_path, corpus::serialize_corpus(&blind)).unwrap();
        let err = run_experiment(&config).unwrap_err();
        assert!(err.to_string().starts_with("split:"), "got: {err}");
        let marker = config.run_dir().join("FAILED");
        assert!(marker.exists());
        assert!(fs::read_to_string(marker).unwrap().starts_with("split:"));
    }

    #[test]
    fn marker_is_cleared_by_a_later_success() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "recover", 0.9);
        fs::create_dir_all(config.run_dir()).unwrap();
        fs::write(config.run_dir().join("FAILED"), "stale\n").unwrap();
        run_experiment(&config).unwrap();
        assert!(!config.run_dir().join("FAILED").exists());
    }

    #[test]
    fn compare_checks_duplicates_before_running() {
        let dir = TempDir::new().unwrap();
        let mut a = test_setup(&dir, "same", 0.5);
        // point at a missing corpus: if any run started, it would fail
        // with an ingest error rather than the validation error
        a.corpus_path = dir.path().join("absent.tsv");
        let b = a.clone();
        let err = compare_runs(&[a, b]).unwrap_err();
        assert!(matches!(err, ExperimentError::InvalidConfig { .. }), "got: {err}");
        assert!(err.to_string().contains("duplicate run_name"));
    }

    #[test]
    fn compare_needs_two_configs() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "solo", 0.5);
        assert!(matches!(
            compare_runs(&[config]),
            Err(ExperimentError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn compare_reports_rows_in_input_order() {
        let dir = TempDir::new().unwrap();
        let topical = test_setup(&dir, "with-topics", 0.9);
        let mut baseline = topical.clone();
        baseline.run_name = "plain".into();
        baseline.topics = None;
        let (reports, table) = compare_runs(&[topical, baseline]).unwrap();
        assert_eq!(reports.len(), 2);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[1].starts_with("with-topics"));
        assert!(lines[2].starts_with("plain"));
    }

    #[test]
    fn compare_names_the_failing_run() {
        let dir = TempDir::new().unwrap();
        let good = test_setup(&dir, "good", 0.9);
        let mut bad = good.clone();
        bad.run_name = "bad".into();
        bad.corpus_path = dir.path().join("absent.tsv");
        let err = compare_runs(&[good, bad]).unwrap_err();
        assert!(err.to_string().starts_with("run 'bad' failed:"), "got: {err}");
    }

    #[test]
    fn translated_run_writes_the_translated_corpus() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "translated", 0.9);
        let dictionary_path = dir.path().join("dict.tsv");
        // passthrough with an empty dictionary: every text maps to itself
        fs::write(&dictionary_path, "").unwrap();
        config.translate = Some(TranslateConfig {
            dictionary_path,
            passthrough_on_miss: true,
            cache_path: dir.path().join("cache.tsv"),
            batch_size: 8,
        });
        run_experiment(&config).unwrap();
        let translated = fs::read_to_string(config.run_dir().join("translated.tsv")).unwrap();
        let reloaded = corpus::parse_corpus(translated.as_bytes(), Language::English).unwrap();
        assert_eq!(reloaded.len(), 60);
        assert!(config.translate.unwrap().cache_path.exists());
    }

    #[test]
    fn evaluate_run_replays_deterministically() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "replay", 0.9);
        run_experiment(&config).unwrap();
        let run_dir = config.run_dir();
        let first = evaluate_run(&run_dir, &config.corpus_path).unwrap();
        let second = evaluate_run(&run_dir, &config.corpus_path).unwrap();
        assert_eq!(first, second);
        let report = first.report.expect("labeled corpus scores");
        assert_eq!(report.n, 60);
        assert!(first.predictions_tsv.starts_with(corpus::PREDICTIONS_HEADER));
    }

    #[test]
    fn evaluate_run_handles_blind_corpora() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "blind", 0.9);
        run_experiment(&config).unwrap();
        // strip the labels off the corpus
        let labeled = corpus::parse_corpus(
            &fs::read(&config.corpus_path).unwrap(),
            Language::Spanish,
        )
        .unwrap();
        let blind_records: Vec<_> = labeled
            .records()
            .iter()
            .map(|r| corpus::TweetRecord {
                index: r.index.clone(),
                text: r.text.clone(),
                label: None,
            })
            .collect();
        let blind = Corpus::new(blind_records, Language::Spanish).unwrap();
        let blind_path = dir.path().join("blind.tsv");
        fs::write(&blind_path, corpus::serialize_corpus(&blind)).unwrap();
        let scored = evaluate_run(&config.run_dir(), &blind_path).unwrap();
        assert_eq!(scored.predictions.len(), 60);
        assert!(scored.report.is_none());
    }

    #[test]
    fn discover_topics_requires_the_section() {
        let dir = TempDir::new().unwrap();
        let mut config = test_setup(&dir, "nosec", 0.9);
        config.topics = None;
        assert!(matches!(
            discover_topics(&config),
            Err(ExperimentError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn discover_topics_fits_on_the_full_corpus() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "disc", 1.0);
        let (state, assignments) = discover_topics(&config).unwrap();
        assert_eq!(state.embed_dim, 32);
        assert_eq!(assignments.len(), 60);
        // strong signal on 60 documents should find structure
        assert!(state.k >= 1);
    }

    #[test]
    fn train_model_skips_evaluation_artifacts() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "train-only", 0.9);
        let run_dir = train_model(&config).unwrap();
        assert!(run_dir.join("model.json").exists());
        assert!(!run_dir.join("report.json").exists());
        assert!(!run_dir.join("predictions.tsv").exists());
    }

    #[test]
    fn model_file_round_trips_and_checks_version() {
        let dir = TempDir::new().unwrap();
        let config = test_setup(&dir, "modelfile", 0.9);
        run_experiment(&config).unwrap();
        let json = fs::read_to_string(config.run_dir().join("model.json")).unwrap();
        let file = ModelFile::from_json(&json).unwrap();
        assert_eq!(file.to_json(), json);
        let mut bumped = file.clone();
        bumped.version = 99;
        assert!(matches!(
            ModelFile::from_json(&bumped.to_json()),
            Err(ExperimentError::Artifact { .. })
        ));
    }
}

//! Scoring and reporting: accuracy, confusion counts, the two-column
//! results table, and a synthetic corpus generator for controlled
//! experiments.
//!
//! The text table rounds half-up to two decimals for presentation; the
//! structured JSON report keeps full precision, so reloading it gives
//! back exactly the values that went in.

use crate::corpus::{AnnotationProvenance, Corpus, Language, TweetRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("got {predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("cannot score an empty prediction set")]
    EmptyInput,
    #[error("invalid synthetic spec: {reason}")]
    InvalidSpec { reason: String },
    #[error("malformed report file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("inconsistent report file: {reason}")]
    InvalidReports { reason: String },
}

/// One run's scores. `confusion[gold][predicted]` counts examples, with
/// class indices 0 = human, 1 = machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_name: String,
    pub accuracy: f64,
    pub confusion: [[u64; 2]; 2],
    pub n: u64,
    /// Fingerprint of the configuration that produced the predictions.
    pub fingerprint: String,
}

impl EvalReport {
    pub fn from_predictions(
        run_name: &str,
        predictions: &[AnnotationProvenance],
        golds: &[AnnotationProvenance],
        fingerprint: &str,
    ) -> Result<EvalReport, EvalError> {
        let confusion = confusion(predictions, golds)?;
        let n = predictions.len() as u64;
        let correct = confusion[0][0] + confusion[1][1];
        Ok(EvalReport {
            run_name: run_name.to_string(),
            accuracy: correct as f64 / n as f64,
            confusion,
            n,
            fingerprint: fingerprint.to_string(),
        })
    }

    /// Internal consistency: counts sum to n and reproduce the accuracy.
    fn check(&self) -> Result<(), EvalError> {
        let total: u64 = self.confusion.iter().flatten().sum();
        if total != self.n {
            return Err(EvalError::InvalidReports {
                reason: format!(
                    "report '{}' has confusion total {total} but n = {}",
                    self.run_name, self.n
                ),
            });
        }
        let correct = self.confusion[0][0] + self.confusion[1][1];
        if self.n == 0 || self.accuracy != correct as f64 / self.n as f64 {
            return Err(EvalError::InvalidReports {
                reason: format!(
                    "report '{}' accuracy {} does not equal {correct}/{}",
                    self.run_name, self.accuracy, self.n
                ),
            });
        }
        Ok(())
    }
}

/// Fraction of positions where the prediction equals the gold label.
pub fn accuracy(
    predictions: &[AnnotationProvenance],
    golds: &[AnnotationProvenance],
) -> Result<f64, EvalError> {
    let confusion = confusion(predictions, golds)?;
    let correct = confusion[0][0] + confusion[1][1];
    Ok(correct as f64 / predictions.len() as f64)
}

/// 2x2 count matrix, rows indexed by gold class, columns by prediction.
pub fn confusion(
    predictions: &[AnnotationProvenance],
    golds: &[AnnotationProvenance],
) -> Result<[[u64; 2]; 2], EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut matrix = [[0u64; 2]; 2];
    for (pred, gold) in predictions.iter().zip(golds) {
        matrix[gold.class_index()][pred.class_index()] += 1;
    }
    Ok(matrix)
}

/// Rounds half-up at the second decimal, working on the value's shortest
/// decimal form. Going through the decimal form matters: 0.505 stores as
/// a double a hair below the true half, but its shortest representation
/// is still "0.505", which is what a reader expects to round to "0.51".
fn format_score(value: f64) -> String {
    let repr = format!("{value}");
    let (sign, digits) = match repr.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", repr.as_str()),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    let frac: Vec<u8> = frac_part.bytes().chain(std::iter::repeat(b'0')).take(3).collect();
    let mut kept = (frac[0] - b'0') as u32 * 10 + (frac[1] - b'0') as u32;
    let mut int_value: u64 = int_part.parse().expect("integer part of a finite float");
    if frac[2] >= b'5' {
        kept += 1;
        if kept == 100 {
            kept = 0;
            int_value += 1;
        }
    }
    format!("{sign}{int_value}.{kept:02}")
}

/// Fixed-width two-column table, one row per report in input order.
pub fn render_table(reports: &[EvalReport]) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let name_width = reports
        .iter()
        .map(|r| r.run_name.chars().count())
        .max()
        .unwrap()
        .max("Model".len());
    let mut out = format!("{:<name_width$}  Score\n", "Model");
    for report in reports {
        out.push_str(&format!(
            "{:<name_width$}  {}\n",
            report.run_name,
            format_score(report.accuracy)
        ));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    version: u32,
    reports: Vec<EvalReport>,
}

const REPORTS_VERSION: u32 = 1;

/// Full-precision structured form of the reports.
pub fn reports_to_json(reports: &[EvalReport]) -> String {
    let file = ReportFile {
        version: REPORTS_VERSION,
        reports: reports.to_vec(),
    };
    let mut json = serde_json::to_string_pretty(&file).expect("reports serialize");
    json.push('\n');
    json
}

pub fn reports_from_json(json: &str) -> Result<Vec<EvalReport>, EvalError> {
    let file: ReportFile = serde_json::from_str(json)?;
    if file.version != REPORTS_VERSION {
        return Err(EvalError::InvalidReports {
            reason: format!(
                "unsupported report version {} (this build reads {REPORTS_VERSION})",
                file.version
            ),
        });
    }
    for report in &file.reports {
        report.check()?;
    }
    Ok(file.reports)
}

/// Recipe for a labeled corpus with a controllable association between
/// class and vocabulary. Each term of a document comes from the class
/// vocabulary with probability `topic_signal`, otherwise from the shared
/// one, so signal 1.0 makes classes lexically disjoint and signal 0.0
/// makes the label independent of the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub vocab_human: Vec<String>,
    pub vocab_machine: Vec<String>,
    pub vocab_shared: Vec<String>,
    pub topic_signal: f64,
    pub seed: u64,
}

const DEFAULT_HUMAN_VOCAB: [&str; 12] = [
    "tos", "fiebre", "dolor", "garganta", "cansancio", "mareo", "escalofrios", "estornudo",
    "congestion", "malestar", "nauseas", "jaqueca",
];
const DEFAULT_MACHINE_VOCAB: [&str; 12] = [
    "sintoma", "diagnostico", "paciente", "clinica", "registro", "etiqueta", "dataset", "modelo",
    "sistema", "proceso", "analisis", "resultado",
];
const DEFAULT_SHARED_VOCAB: [&str; 12] = [
    "covid", "hoy", "tengo", "mucho", "desde", "ayer", "semana", "casa", "trabajo", "familia",
    "ciudad", "tiempo",
];

impl SyntheticSpec {
    /// Spec with the built-in vocabularies; only size, signal strength,
    /// and seed vary.
    pub fn with_default_vocab(n_per_class: usize, topic_signal: f64, seed: u64) -> Self {
        let to_strings = |terms: &[&str]| terms.iter().map(|t| t.to_string()).collect();
        SyntheticSpec {
            n_per_class,
            vocab_human: to_strings(&DEFAULT_HUMAN_VOCAB),
            vocab_machine: to_strings(&DEFAULT_MACHINE_VOCAB),
            vocab_shared: to_strings(&DEFAULT_SHARED_VOCAB),
            topic_signal,
            seed,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        let invalid = |reason: String| Err(EvalError::InvalidSpec { reason });
        if self.n_per_class == 0 {
            return invalid("n_per_class must be positive".into());
        }
        if !(self.topic_signal >= 0.0 && self.topic_signal <= 1.0) {
            return invalid(format!("topic_signal {} is outside [0, 1]", self.topic_signal));
        }
        if self.vocab_human.is_empty() || self.vocab_machine.is_empty() {
            return invalid("class vocabularies must be non-empty".into());
        }
        if let Some(term) = self.vocab_human.iter().find(|t| self.vocab_machine.contains(t)) {
            return invalid(format!("term '{term}' appears in both class vocabularies"));
        }
        if self.topic_signal < 1.0 && self.vocab_shared.is_empty() {
            return invalid("vocab_shared must be non-empty when topic_signal < 1".into());
        }
        Ok(())
    }
}

/// Deterministic labeled corpus: 2 x n_per_class records, labels
/// alternating human/machine, 8 to 15 terms per document.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus, EvalError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(2 * spec.n_per_class);
    for i in 0..2 * spec.n_per_class {
        let label = if i % 2 == 0 {
            AnnotationProvenance::Human
        } else {
            AnnotationProvenance::Machine
        };
        let class_vocab = match label {
            AnnotationProvenance::Human => &spec.vocab_human,
            AnnotationProvenance::Machine => &spec.vocab_machine,
        };
        let length = rng.random_range(8..=15);
        let mut terms = Vec::with_capacity(length);
        for _ in 0..length {
            let vocab = if rng.random::<f64>() < spec.topic_signal {
                class_vocab
            } else {
                &spec.vocab_shared
            };
            terms.push(vocab[rng.random_range(0..vocab.len())].clone());
        }
        records.push(TweetRecord {
            index: (i + 1).to_string(),
            text: terms.join(" "),
            label: Some(label),
        });
    }
    Corpus::new(records, Language::Spanish).map_err(|e| EvalError::InvalidSpec {
        reason: format!("generated corpus is inconsistent: {e}"),
    })
}

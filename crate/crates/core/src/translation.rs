//! Spanish-to-English corpus translation with a pluggable client and a
//! persistent on-disk cache.
//!
//! The client behind [`TranslatorClient`] can be anything; everything in
//! this crate uses [`DictionaryClient`], an exact-match lookup table, so
//! runs are offline and reproducible. The cache maps a content hash of
//! (text, source language, target language) to the translated text and is
//! append-only on disk: a hash already present is never sent to the client
//! again.

use crate::corpus::{escape_field, unescape_field, Corpus, Language, TweetRecord};
use crate::fingerprint;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TranslationError {
    #[error("translation failed after {attempts} attempt(s): {reason}")]
    TranslationFailure { attempts: usize, reason: String },
    #[error("corpus is already {got}, expected a spanish corpus")]
    WrongLanguage { got: Language },
    #[error("cache file {path:?} is corrupt at line {line}: {reason}")]
    CacheCorrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("dictionary file is malformed at line {line}: {reason}")]
    DictionaryCorrupt { line: usize, reason: String },
    #[error("cache i/o on {path:?}: {source}")]
    CacheIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// A batch translation backend.
///
/// Implementations must return exactly one translation per input text, in
/// input order. Clients take `&self` so one instance can serve concurrent
/// batches.
pub trait TranslatorClient: Send + Sync {
    fn translate_batch(
        &self,
        texts: &[String],
        source: Language,
        target: Language,
    ) -> Result<Vec<String>, TranslationError>;
}

/// Offline exact-match translator backed by an in-memory table.
///
/// On a lookup miss it either passes the original text through (counting
/// the miss) or fails the batch, depending on `passthrough_on_miss`.
/// Request and miss counters make cache behavior observable in tests.
#[derive(Debug)]
pub struct DictionaryClient {
    mapping: BTreeMap<String, String>,
    passthrough_on_miss: bool,
    requests: AtomicUsize,
    misses: AtomicUsize,
}

impl DictionaryClient {
    pub fn new(mapping: BTreeMap<String, String>, passthrough_on_miss: bool) -> Self {
        DictionaryClient {
            mapping,
            passthrough_on_miss,
            requests: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Parses a dictionary file: one `source<TAB>translation` pair per
    /// line, fields escaped like corpus fields, blank lines ignored.
    pub fn from_tsv(bytes: &[u8], passthrough_on_miss: bool) -> Result<Self, TranslationError> {
        let content = std::str::from_utf8(bytes).map_err(|_| TranslationError::DictionaryCorrupt {
            line: 0,
            reason: String::from("not valid UTF-8"),
        })?;
        let mut mapping = BTreeMap::new();
        for (i, raw_line) in content.split('\n').enumerate() {
            let line = i + 1;
            let raw_line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
            if raw_line.is_empty() {
                continue;
            }
            let corrupt = |reason: String| TranslationError::DictionaryCorrupt { line, reason };
            let (source, translation) = raw_line
                .split_once('\t')
                .ok_or_else(|| corrupt(String::from("expected 2 tab-separated fields")))?;
            if translation.contains('\t') {
                return Err(corrupt(String::from("expected 2 tab-separated fields, got more")));
            }
            let source = unescape_field(source).map_err(corrupt)?;
            let translation = unescape_field(translation).map_err(corrupt)?;
            mapping.insert(source, translation);
        }
        Ok(DictionaryClient::new(mapping, passthrough_on_miss))
    }

    /// Number of `translate_batch` calls that reached this client.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Number of texts that had no dictionary entry.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl TranslatorClient for DictionaryClient {
    fn translate_batch(
        &self,
        texts: &[String],
        _source: Language,
        _target: Language,
    ) -> Result<Vec<String>, TranslationError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            match self.mapping.get(text) {
                Some(translation) => out.push(translation.clone()),
                None => {
                    self.misses.fetch_add(1, Ordering::SeqCst);
                    if self.passthrough_on_miss {
                        out.push(text.clone());
                    } else {
                        return Err(TranslationError::TranslationFailure {
                            attempts: 1,
                            reason: format!("no dictionary entry for {text:?}"),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Cache key: hex SHA-256 over (text, source, target) with NUL separators.
pub fn cache_key(text: &str, source: Language, target: Language) -> String {
    fingerprint::combine(&[text, source.as_str(), target.as_str()])
}

/// Persistent translation cache.
///
/// On-disk format is one `hash<TAB>escaped-translation` line per entry,
/// UTF-8, appended as translations arrive. Loading tolerates a truncated
/// final line (an interrupted append) by discarding it; any other
/// malformed line is an error. When one hash appears on several lines the
/// latest wins.
pub struct TranslationCache {
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl TranslationCache {
    /// Opens a cache file, loading existing entries. A missing file is an
    /// empty cache; the file is created on first append.
    pub fn open(path: &Path) -> Result<Self, TranslationError> {
        let mut cache = TranslationCache {
            path: path.to_path_buf(),
            entries: BTreeMap::new(),
        };
        let content = match std::fs::read_to_string(path) {
            Ok(content) => content,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(source) => {
                return Err(TranslationError::CacheIo {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };

        let complete = content.ends_with('\n');
        let lines: Vec<&str> = content.split('\n').collect();
        // with a trailing newline the last split element is empty; without
        // one it is a truncated append and gets dropped
        let usable = lines.len().saturating_sub(1);
        for (i, raw_line) in lines[..usable].iter().enumerate() {
            let line = i + 1;
            let corrupt = |reason: String| TranslationError::CacheCorrupt {
                path: path.to_path_buf(),
                line,
                reason,
            };
            if raw_line.is_empty() {
                return Err(corrupt(String::from("empty line")));
            }
            let (hash, translation) = raw_line
                .split_once('\t')
                .ok_or_else(|| corrupt(String::from("expected hash<TAB>translation")))?;
            if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
                return Err(corrupt(format!("bad hash {hash:?}")));
            }
            if translation.contains('\t') {
                return Err(corrupt(String::from("unescaped tab in translation")));
            }
            let translation = unescape_field(translation).map_err(corrupt)?;
            cache.entries.insert(hash.to_string(), translation);
        }
        let _ = complete; // truncation already handled by dropping the tail
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Appends one entry to the file and the in-memory map. The file and
    /// its directory are created on first write.
    pub fn append(&mut self, key: String, translation: String) -> Result<(), TranslationError> {
        self.ensure_parent_dir()?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|source| TranslationError::CacheIo {
                path: self.path.clone(),
                source,
            })?;
        let line = format!("{key}\t{}\n", escape_field(&translation));
        file.write_all(line.as_bytes())
            .map_err(|source| TranslationError::CacheIo {
                path: self.path.clone(),
                source,
            })?;
        self.entries.insert(key, translation);
        Ok(())
    }

    fn ensure_parent_dir(&self) -> Result<(), TranslationError> {
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| TranslationError::CacheIo {
                    path: self.path.clone(),
                    source,
                })?;
            }
        }
        Ok(())
    }

    /// Rewrites the file compactly (sorted, deduplicated). Entry content
    /// is unchanged, so load ∘ save ∘ load is an identity on entries.
    pub fn save(&self) -> Result<(), TranslationError> {
        self.ensure_parent_dir()?;
        let mut out = String::new();
        for (key, translation) in &self.entries {
            out.push_str(key);
            out.push('\t');
            out.push_str(&escape_field(translation));
            out.push('\n');
        }
        std::fs::write(&self.path, out).map_err(|source| TranslationError::CacheIo {
            path: self.path.clone(),
            source,
        })
    }
}

/// How client failures are retried: one initial attempt, then one retry
/// per delay. The default matches production use (1s, 2s, 4s backoff);
/// tests inject zero delays.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            delays: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
        }
    }
}

impl RetryPolicy {
    /// Same number of attempts as the default, no waiting between them.
    pub fn immediate() -> Self {
        RetryPolicy {
            delays: vec![Duration::ZERO; 3],
        }
    }

    /// A single attempt, no retries.
    pub fn none() -> Self {
        RetryPolicy { delays: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct TranslateOptions {
    pub batch_size: usize,
    pub retry: RetryPolicy,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        TranslateOptions {
            batch_size: 16,
            retry: RetryPolicy::default(),
        }
    }
}

fn call_with_retry(
    client: &dyn TranslatorClient,
    batch: &[String],
    retry: &RetryPolicy,
) -> Result<Vec<String>, TranslationError> {
    let mut attempts = 0;
    let mut delays = retry.delays.iter();
    loop {
        attempts += 1;
        match client.translate_batch(batch, Language::Spanish, Language::English) {
            Ok(translations) => {
                if translations.len() != batch.len() {
                    // a client contract violation, not a transient fault
                    return Err(TranslationError::TranslationFailure {
                        attempts,
                        reason: format!(
                            "client returned {} translations for {} texts",
                            translations.len(),
                            batch.len()
                        ),
                    });
                }
                return Ok(translations);
            }
            Err(TranslationError::TranslationFailure { reason, .. }) => match delays.next() {
                Some(delay) => {
                    if !delay.is_zero() {
                        std::thread::sleep(*delay);
                    }
                }
                None => return Err(TranslationError::TranslationFailure { attempts, reason }),
            },
            Err(other) => return Err(other),
        }
    }
}

/// Translates a Spanish corpus to English.
///
/// Texts already in the cache are never sent to the client; the rest are
/// deduplicated in first-seen order and sent in batches, each successful
/// batch being appended to the cache before the next is requested. Any
/// client failure (after retries) aborts the whole operation, so a partial
/// corpus is never returned. Indices, labels, and record order pass
/// through untouched.
pub fn translate_corpus(
    corpus: &Corpus,
    client: &dyn TranslatorClient,
    cache: &mut TranslationCache,
    options: &TranslateOptions,
) -> Result<Corpus, TranslationError> {
    if corpus.language() != Language::Spanish {
        return Err(TranslationError::WrongLanguage {
            got: corpus.language(),
        });
    }

    let mut pending: Vec<String> = Vec::new();
    let mut queued = std::collections::HashSet::new();
    for record in corpus.records() {
        let key = cache_key(&record.text, Language::Spanish, Language::English);
        if !cache.contains(&key) && queued.insert(key) {
            pending.push(record.text.clone());
        }
    }

    let batch_size = options.batch_size.max(1);
    for batch in pending.chunks(batch_size) {
        let translations = call_with_retry(client, batch, &options.retry)?;
        for (text, translation) in batch.iter().zip(translations) {
            let key = cache_key(text, Language::Spanish, Language::English);
            cache.append(key, translation)?;
        }
    }

    let records = corpus
        .records()
        .iter()
        .map(|record| {
            let key = cache_key(&record.text, Language::Spanish, Language::English);
            let text = cache
                .get(&key)
                .expect("every corpus text is cached by now")
                .to_string();
            TweetRecord {
                index: record.index.clone(),
                text,
                label: record.label,
            }
        })
        .collect();
    Ok(Corpus::new(records, Language::English)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AnnotationProvenance;
    use std::sync::Mutex;

    fn corpus_of(texts: &[&str]) -> Corpus {
        let records = texts
            .iter()
            .enumerate()
            .map(|(i, t)| TweetRecord {
                index: format!("t{i}"),
                text: t.to_string(),
                label: Some(if i % 2 == 0 {
                    AnnotationProvenance::Human
                } else {
                    AnnotationProvenance::Machine
                }),
            })
            .collect();
        Corpus::new(records, Language::Spanish).unwrap()
    }

    fn dictionary(pairs: &[(&str, &str)], passthrough: bool) -> DictionaryClient {
        let mapping = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        DictionaryClient::new(mapping, passthrough)
    }

    fn temp_cache() -> (tempfile::TempDir, TranslationCache) {
        let dir = tempfile::tempdir().unwrap();
        let cache = TranslationCache::open(&dir.path().join("cache.tsv")).unwrap();
        (dir, cache)
    }

    fn quick() -> TranslateOptions {
        TranslateOptions {
            batch_size: 16,
            retry: RetryPolicy::none(),
        }
    }

    #[test]
    fn dictionary_lookup_translates_record() {
        let corpus = corpus_of(&["tengo tos"]);
        let client = dictionary(&[("tengo tos", "i have a cough")], false);
        let (_dir, mut cache) = temp_cache();
        let out = translate_corpus(&corpus, &client, &mut cache, &quick()).unwrap();
        assert_eq!(out.language(), Language::English);
        assert_eq!(out.records()[0].text, "i have a cough");
        assert_eq!(out.records()[0].index, "t0");
        assert_eq!(out.records()[0].label, Some(AnnotationProvenance::Human));
    }

    #[test]
    fn second_pass_is_pure_cache_read() {
        let corpus = corpus_of(&["hola mundo", "tengo fiebre"]);
        let client = dictionary(
            &[("hola mundo", "hello world"), ("tengo fiebre", "i have a fever")],
            false,
        );
        let (_dir, mut cache) = temp_cache();
        let first = translate_corpus(&corpus, &client, &mut cache, &quick()).unwrap();
        assert_eq!(client.requests(), 1);
        let second = translate_corpus(&corpus, &client, &mut cache, &quick()).unwrap();
        assert_eq!(client.requests(), 1, "warm cache must not touch the client");
        assert_eq!(first, second);
    }

    #[test]
    fn cache_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let corpus = corpus_of(&["hola"]);
        let client = dictionary(&[("hola", "hello")], false);
        {
            let mut cache = TranslationCache::open(&path).unwrap();
            translate_corpus(&corpus, &client, &mut cache, &quick()).unwrap();
        }
        let mut reopened = TranslationCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        let out = translate_corpus(&corpus, &client, &mut reopened, &quick()).unwrap();
        assert_eq!(out.records()[0].text, "hello");
        assert_eq!(client.requests(), 1);
    }

    #[test]
    fn passthrough_keeps_text_and_counts_miss() {
        let corpus = corpus_of(&["sin entrada"]);
        let client = dictionary(&[], true);
        let (_dir, mut cache) = temp_cache();
        let out = translate_corpus(&corpus, &client, &mut cache, &quick()).unwrap();
        assert_eq!(out.records()[0].text, "sin entrada");
        assert_eq!(client.misses(), 1);
        // the passthrough result is cached like any other translation
        assert!(cache.contains(&cache_key("sin entrada", Language::Spanish, Language::English)));
    }

    #[test]
    fn miss_without_passthrough_fails_whole_operation() {
        let corpus = corpus_of(&["conocido", "desconocido"]);
        let client = dictionary(&[("conocido", "known")], false);
        let (_dir, mut cache) = temp_cache();
        let err = translate_corpus(&corpus, &client, &mut cache, &quick()).unwrap_err();
        assert!(matches!(err, TranslationError::TranslationFailure { .. }));
    }

    #[test]
    fn duplicate_texts_are_requested_once() {
        let corpus = corpus_of(&["hola", "hola", "hola"]);
        let client = dictionary(&[("hola", "hello")], false);
        let (_dir, mut cache) = temp_cache();
        let out = translate_corpus(
            &corpus,
            &client,
            &mut cache,
            &TranslateOptions {
                batch_size: 1,
                retry: RetryPolicy::none(),
            },
        )
        .unwrap();
        assert_eq!(client.requests(), 1, "one distinct text, one batch");
        assert!(out.records().iter().all(|r| r.text == "hello"));
    }

    #[test]
    fn batching_respects_configured_size() {
        let texts: Vec<String> = (0..5).map(|i| format!("texto {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let corpus = corpus_of(&refs);
        let client = dictionary(&[], true);
        let (_dir, mut cache) = temp_cache();
        translate_corpus(
            &corpus,
            &client,
            &mut cache,
            &TranslateOptions {
                batch_size: 2,
                retry: RetryPolicy::none(),
            },
        )
        .unwrap();
        assert_eq!(client.requests(), 3, "5 texts in batches of 2");
    }

    #[test]
    fn empty_batch_returns_empty() {
        let client = dictionary(&[("x", "y")], false);
        let out = client
            .translate_batch(&[], Language::Spanish, Language::English)
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn dictionary_batch_repeats_entries() {
        let client = dictionary(&[("hola", "hello")], false);
        let out = client
            .translate_batch(
                &["hola".into(), "hola".into()],
                Language::Spanish,
                Language::English,
            )
            .unwrap();
        assert_eq!(out, vec!["hello".to_string(), "hello".to_string()]);
    }

    #[test]
    fn english_corpus_is_rejected() {
        let corpus = Corpus::new(
            vec![TweetRecord {
                index: "1".into(),
                text: "already english".into(),
                label: None,
            }],
            Language::English,
        )
        .unwrap();
        let client = dictionary(&[], true);
        let (_dir, mut cache) = temp_cache();
        assert!(matches!(
            translate_corpus(&corpus, &client, &mut cache, &quick()),
            Err(TranslationError::WrongLanguage { got: Language::English })
        ));
    }

    /// Fails a fixed number of times, then delegates to a dictionary.
    struct FlakyClient {
        failures_left: Mutex<usize>,
        inner: DictionaryClient,
    }

    impl TranslatorClient for FlakyClient {
        fn translate_batch(
            &self,
            texts: &[String],
            source: Language,
            target: Language,
        ) -> Result<Vec<String>, TranslationError> {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                return Err(TranslationError::TranslationFailure {
                    attempts: 1,
                    reason: String::from("transient backend outage"),
                });
            }
            self.inner.translate_batch(texts, source, target)
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let corpus = corpus_of(&["hola"]);
        let client = FlakyClient {
            failures_left: Mutex::new(2),
            inner: dictionary(&[("hola", "hello")], false),
        };
        let (_dir, mut cache) = temp_cache();
        let options = TranslateOptions {
            batch_size: 16,
            retry: RetryPolicy::immediate(),
        };
        let out = translate_corpus(&corpus, &client, &mut cache, &options).unwrap();
        assert_eq!(out.records()[0].text, "hello");
    }

    #[test]
    fn retries_are_bounded() {
        let corpus = corpus_of(&["hola"]);
        let client = FlakyClient {
            failures_left: Mutex::new(10),
            inner: dictionary(&[("hola", "hello")], false),
        };
        let (_dir, mut cache) = temp_cache();
        let options = TranslateOptions {
            batch_size: 16,
            retry: RetryPolicy::immediate(),
        };
        match translate_corpus(&corpus, &client, &mut cache, &options) {
            Err(TranslationError::TranslationFailure { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("expected bounded failure, got {other:?}"),
        }
        assert_eq!(*client.failures_left.lock().unwrap(), 6);
    }

    #[test]
    fn cache_file_round_trips_through_save() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let mut cache = TranslationCache::open(&path).unwrap();
        cache
            .append(cache_key("a\tb", Language::Spanish, Language::English), "x\ny".into())
            .unwrap();
        cache
            .append(cache_key("c", Language::Spanish, Language::English), "z".into())
            .unwrap();
        cache.save().unwrap();
        let reloaded = TranslationCache::open(&path).unwrap();
        assert_eq!(reloaded.entries, cache.entries);
    }

    #[test]
    fn truncated_final_line_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        let key_a = cache_key("a", Language::Spanish, Language::English);
        let key_b = cache_key("b", Language::Spanish, Language::English);
        // second line lost its trailing newline, as after a crashed append
        std::fs::write(&path, format!("{key_a}\talpha\n{key_b}\tbet")).unwrap();
        let cache = TranslationCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&key_a), Some("alpha"));
        assert!(!cache.contains(&key_b));
    }

    #[test]
    fn interior_garbage_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        std::fs::write(&path, "not a cache line\n").unwrap();
        assert!(matches!(
            TranslationCache::open(&path),
            Err(TranslationError::CacheCorrupt { line: 1, .. })
        ));
    }

    #[test]
    fn bad_hash_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.tsv");
        std::fs::write(&path, "abc123\ttranslation\n").unwrap();
        assert!(matches!(
            TranslationCache::open(&path),
            Err(TranslationError::CacheCorrupt { line: 1, .. })
        ));
    }

    #[test]
    fn dictionary_tsv_round_trips_escapes() {
        let tsv = "hola\\tmundo\thello\\tworld\ntos\tcough\n";
        let client = DictionaryClient::from_tsv(tsv.as_bytes(), false).unwrap();
        let out = client
            .translate_batch(&["hola\tmundo".into()], Language::Spanish, Language::English)
            .unwrap();
        assert_eq!(out[0], "hello\tworld");
    }

    #[test]
    fn dictionary_tsv_rejects_bare_line() {
        let err = DictionaryClient::from_tsv(b"solo una columna\n", false).unwrap_err();
        assert!(matches!(err, TranslationError::DictionaryCorrupt { line: 1, .. }));
    }
}

//! Command-line front end for the experiment pipeline. Every subcommand
//! is one pipeline stage (or the whole pipeline) driven by a TOML config,
//! so any run is reproducible from its config file alone.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config),
//! 2 stage failure at runtime. Progress goes to stderr, results to
//! stdout.

use annoprov::corpus::{self, AnnotationProvenance, Language};
use annoprov::evaluation::{self, generate_synthetic, EvalError, SyntheticSpec};
use annoprov::experiment::{
    compare_runs, discover_topics, evaluate_run, load_corpus, run_experiment, train_model,
    ExperimentConfig, ExperimentError,
};
use annoprov::topic_model::{top_terms, TopicId};
use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "annoprov",
    version,
    about = "Classify whether tweet annotations were written by a human expert or an LLM"
)]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus file, printing a summary.
    Ingest {
        /// TSV corpus file.
        corpus: PathBuf,
        /// Language tag of the corpus.
        #[arg(long, default_value = "spanish", value_parser = parse_language)]
        language: Language,
        /// Write the canonical serialization here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate a corpus per the config's [translate] section.
    Translate {
        #[arg(long)]
        config: PathBuf,
        /// Override the run-level seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output TSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a topic model on the whole corpus and print topic summaries.
    Topics {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Top terms to print per topic.
        #[arg(long, default_value_t = 8)]
        terms: usize,
        /// Write the fitted topic model JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model, persisting artifacts without evaluation.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a finished run against a corpus, or predict a blind one.
    Eval {
        /// Run directory produced by `run` or `train`.
        #[arg(long)]
        run_dir: PathBuf,
        /// Corpus to score (labeled) or predict (blind).
        #[arg(long)]
        corpus: PathBuf,
        /// Write the predictions TSV here.
        #[arg(long)]
        predictions_out: Option<PathBuf>,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several configs and render one comparison table.
    Compare {
        /// Config files, one per run, in table order.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Override every run's output directory; the comparison table
        /// is also written there.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_per_class: usize,
        /// Probability that a term comes from the class vocabulary
        /// rather than the shared one.
        #[arg(long, default_value_t = 0.9)]
        signal: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output TSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_language(raw: &str) -> Result<Language, String> {
    match raw {
        "spanish" => Ok(Language::Spanish),
        "english" => Ok(Language::English),
        other => Err(format!("unknown language '{other}' (expected spanish or english)")),
    }
}

struct Progress {
    quiet: bool,
}

impl Progress {
    fn say(&self, message: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", message.as_ref());
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version arrive here too; only real usage errors
            // count as validation failures
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let progress = Progress { quiet: cli.quiet };
    match dispatch(cli.command, &progress) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(error: &ExperimentError) -> u8 {
    match error {
        ExperimentError::InvalidConfig { .. } => 1,
        ExperimentError::RunFailed { source, .. } => exit_code(source),
        _ => 2,
    }
}

fn invalid(reason: String) -> ExperimentError {
    ExperimentError::InvalidConfig { reason }
}

fn runtime(stage: &'static str, message: String) -> ExperimentError {
    ExperimentError::Stage {
        stage,
        message,
    }
}

fn load_config(
    path: &Path,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, ExperimentError> {
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    // relative paths in a config mean "next to the config file"
    config.rebase_paths(path.parent().unwrap_or(Path::new(".")));
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    if let Some(seed) = seed {
        config.seed = Some(seed);
    }
    Ok(config)
}

fn write_or_print(
    out: Option<&Path>,
    content: &str,
    stage_name: &'static str,
) -> Result<(), ExperimentError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| runtime(stage_name, format!("{}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn render_one(report: &annoprov::EvalReport) -> String {
    evaluation::render_table(std::slice::from_ref(report)).expect("one report renders")
}

fn dispatch(command: Command, progress: &Progress) -> Result<(), ExperimentError> {
    match command {
        Command::Ingest { corpus, language, out } => ingest(&corpus, language, out.as_deref(), progress),
        Command::Translate { config, seed, out } => translate(&config, seed, out.as_deref(), progress),
        Command::Topics { config, seed, terms, out } => topics(&config, seed, terms, out.as_deref(), progress),
        Command::Train { config, output_dir, seed } => {
            let config = load_config(&config, output_dir, seed)?;
            progress.say(format!("training '{}'", config.run_name));
            let run_dir = train_model(&config)?;
            progress.say(format!("model written to {}", run_dir.display()));
            println!("{}", run_dir.display());
            Ok(())
        }
        Command::Eval { run_dir, corpus, predictions_out } => eval(&run_dir, &corpus, predictions_out.as_deref(), progress),
        Command::Run { config, output_dir, seed } => {
            let config = load_config(&config, output_dir, seed)?;
            progress.say(format!("running '{}'", config.run_name));
            let report = run_experiment(&config)?;
            progress.say(format!("artifacts in {}", config.run_dir().display()));
            print!("{}", render_one(&report));
            Ok(())
        }
        Command::Compare { configs, output_dir, seed } => compare(&configs, output_dir, seed, progress),
        Command::Synth { n_per_class, signal, seed, out } => synth(n_per_class, signal, seed, out.as_deref(), progress),
    }
}

fn read_corpus_file(path: &Path, language: Language) -> Result<corpus::Corpus, ExperimentError> {
    let bytes = fs::read(path).map_err(|e| {
        runtime(
            "ingest",
            if e.kind() == std::io::ErrorKind::NotFound {
                format!("file not found: {}", path.display())
            } else {
                format!("{}: {e}", path.display())
            },
        )
    })?;
    corpus::parse_corpus(&bytes, language).map_err(|e| runtime("ingest", e.to_string()))
}

fn ingest(
    path: &Path,
    language: Language,
    out: Option<&Path>,
    progress: &Progress,
) -> Result<(), ExperimentError> {
    let corpus = read_corpus_file(path, language)?;
    let mut human = 0usize;
    let mut machine = 0usize;
    for record in corpus.records() {
        match record.label {
            Some(AnnotationProvenance::Human) => human += 1,
            Some(AnnotationProvenance::Machine) => machine += 1,
            None => {}
        }
    }
    println!("records: {}", corpus.len());
    println!("language: {}", corpus.language().as_str());
    if corpus.is_labeled() && !corpus.is_empty() {
        println!("labeling: labeled (human {human}, machine {machine})");
    } else {
        println!("labeling: blind");
    }
    if let Some(path) = out {
        fs::write(path, corpus::serialize_corpus(&corpus))
            .map_err(|e| runtime("ingest", format!("{}: {e}", path.display())))?;
        progress.say(format!("canonical copy written to {}", path.display()));
    }
    Ok(())
}

fn translate(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    progress: &Progress,
) -> Result<(), ExperimentError> {
    let config = load_config(config_path, None, seed)?;
    if config.translate.is_none() {
        return Err(invalid("config has no [translate] section".into()));
    }
    let corpus = load_corpus(&config)?;
    progress.say(format!("translated {} records", corpus.len()));
    write_or_print(out, &corpus::serialize_corpus(&corpus), "translate")
}

fn topics(
    config_path: &Path,
    seed: Option<u64>,
    terms: usize,
    out: Option<&Path>,
    progress: &Progress,
) -> Result<(), ExperimentError> {
    let config = load_config(config_path, None, seed)?;
    let (state, assignments) = discover_topics(&config)?;
    let outliers = assignments.iter().filter(|t| t.is_outlier()).count();
    println!(
        "discovered {} topics over {} documents ({} outliers)",
        state.k,
        assignments.len(),
        outliers
    );
    for topic in 0..state.k {
        let id = TopicId(topic as i32);
        let members = assignments.iter().filter(|&&t| t == id).count();
        let top = top_terms(&state, id, terms).map_err(|e| runtime("topics", e.to_string()))?;
        println!("topic {topic} ({members} docs): {}", top.join(", "));
    }
    if let Some(path) = out {
        fs::write(path, state.to_json())
            .map_err(|e| runtime("topics", format!("{}: {e}", path.display())))?;
        progress.say(format!("topic model written to {}", path.display()));
    }
    Ok(())
}

fn eval(
    run_dir: &Path,
    corpus_path: &Path,
    predictions_out: Option<&Path>,
    progress: &Progress,
) -> Result<(), ExperimentError> {
    let result = evaluate_run(run_dir, corpus_path)?;
    if let Some(path) = predictions_out {
        fs::write(path, &result.predictions_tsv)
            .map_err(|e| runtime("evaluate", format!("{}: {e}", path.display())))?;
        progress.say(format!("predictions written to {}", path.display()));
    }
    match &result.report {
        Some(report) => print!("{}", render_one(report)),
        // a blind corpus has nothing to score; surface the predictions
        None if predictions_out.is_none() => print!("{}", result.predictions_tsv),
        None => {}
    }
    Ok(())
}

fn compare(
    config_paths: &[PathBuf],
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    progress: &Progress,
) -> Result<(), ExperimentError> {
    let mut configs = Vec::with_capacity(config_paths.len());
    for path in config_paths {
        configs.push(load_config(path, output_dir.clone(), seed)?);
    }
    let (reports, table) = compare_runs(&configs)?;
    print!("{table}");
    if let Some(dir) = output_dir {
        fs::create_dir_all(&dir)
            .map_err(|e| runtime("compare", format!("{}: {e}", dir.display())))?;
        fs::write(dir.join("comparison.txt"), &table)
            .map_err(|e| runtime("compare", e.to_string()))?;
        fs::write(dir.join("comparison.json"), evaluation::reports_to_json(&reports))
            .map_err(|e| runtime("compare", e.to_string()))?;
        progress.say(format!("comparison written to {}", dir.display()));
    }
    Ok(())
}

fn synth(
    n_per_class: usize,
    signal: f64,
    seed: u64,
    out: Option<&Path>,
    progress: &Progress,
) -> Result<(), ExperimentError> {
    let spec = SyntheticSpec::with_default_vocab(n_per_class, signal, seed);
    let corpus = generate_synthetic(&spec).map_err(|e| match e {
        EvalError::InvalidSpec { reason } => invalid(reason),
        other => runtime("synth", other.to_string()),
    })?;
    progress.say(format!("generated {} records", corpus.len()));
    write_or_print(out, &corpus::serialize_corpus(&corpus), "synth")
}

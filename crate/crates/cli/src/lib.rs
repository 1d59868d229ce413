//! `ctxtune`: synthetic data, training, generation, evaluation, probing and
//! sweeps over the context-tuning library.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use context_tuning::checkpoint;
use context_tuning::config::RunConfig;
use context_tuning::data::synthetic::{echo_key_corpus, memorization_corpus};
use context_tuning::data::{
    encode_pairs, load_jsonl, write_jsonl, Example, LengthLimits, TextPair, Vocab,
};
use context_tuning::decoding::generate;
use context_tuning::eval::{
    metric_table, prompt_probe, sensitivity_sweep, sweep_table, MetricReport,
};
use context_tuning::training::{build_models, split_validation, TrainMode, Trainer};
use context_tuning::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ctxtune",
    version,
    about = "Context-tuning: contextualized prompts and inverse prompting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a built-in synthetic corpus as JSONL.
    Synth(SynthArgs),
    /// Train the forward and inverse models and save a checkpoint.
    Train(TrainArgs),
    /// Generate outputs for a file of inputs (one per line) or a single --text.
    Generate(GenerateArgs),
    /// Score hypotheses against references (one per line each).
    Eval(EvalArgs),
    /// Nearest vocabulary words for each prompt vector of an input.
    Probe(ProbeArgs),
    /// Train one model per k and tabulate metrics without inverse prompting.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Corpus {
    Memorize,
    EchoKey,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Full,
    #[value(name = "bias_only", alias = "bias-only")]
    BiasOnly,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => TrainMode::Full,
            ModeArg::BiasOnly => TrainMode::BiasOnly,
        }
    }
}

/// Flags shared by every subcommand that builds or runs a model.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_sentences: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "memorize")]
    corpus: Corpus,
    #[arg(long, default_value_t = 50)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// JSONL training pairs; defaults to `[data] train`, then to the built-in
    /// 50-pair memorization corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "text")]
    input: Option<PathBuf>,
    #[arg(long)]
    text: Option<String>,
    /// Also write the records to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = 3)]
    top: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    ks: Vec<usize>,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

/// Runs with process stdout/stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(
        argv,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    )
}

/// `argv` excludes the program name. Returns 0 on success, 1 on a runtime
/// error and 2 on a usage error.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = std::iter::once(std::ffi::OsString::from("ctxtune"))
        .chain(argv.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Generate(a) => generate_cmd(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Probe(a) => probe(a, out),
        Command::Sweep(a) => sweep(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
    }
}

fn emit(out: &mut dyn Write, record: serde_json::Value) -> CliResult {
    writeln!(out, "{record}")?;
    Ok(())
}

fn load_config(o: &Overrides) -> CliResult<RunConfig> {
    let mut c = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        c.train.seed = seed;
        c.decode.seed = seed;
    }
    if let Some(k) = o.k {
        c.prompt.k = k;
    }
    if let Some(l) = o.lambda {
        c.decode.lambda = l;
    }
    if let Some(b) = o.beam {
        c.decode.beam_size = b;
    }
    if let Some(m) = o.max_sentences {
        c.decode.max_sentences = m;
    }
    if let Some(m) = o.mode {
        c.train.mode = m.into();
    }
    if let Some(e) = o.epochs {
        c.train.epochs = e;
    }
    c.validate()?;
    Ok(c)
}

fn synthetic(corpus: Corpus, pairs: usize, seed: u64) -> Vec<TextPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match corpus {
        Corpus::Memorize => memorization_corpus(pairs, &mut rng),
        Corpus::EchoKey => echo_key_corpus(pairs, &mut rng),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> CliResult {
    let pairs = synthetic(a.corpus, a.pairs, a.seed);
    write_jsonl(&a.out, &pairs)?;
    emit(
        out,
        json!({"command": "synth", "pairs": pairs.len(), "path": a.out}),
    )
}

/// Training pairs from `--data`, `[data] train`, or the built-in corpus.
fn training_pairs(
    data: Option<&Path>,
    config: &RunConfig,
    out: &mut dyn Write,
) -> CliResult<Vec<TextPair>> {
    let path = data
        .map(Path::to_path_buf)
        .or_else(|| config.data.train.clone());
    match path {
        Some(path) => {
            let limits = LengthLimits::for_model(config.model.max_positions, config.prompt.k)?;
            let loaded = load_jsonl(&path, limits)?;
            if loaded.discarded > 0 {
                emit(out, json!({"discarded": loaded.discarded, "path": path}))?;
            }
            if loaded.pairs.is_empty() {
                return Err(Failure::Runtime(format!(
                    "{}: no usable training pairs",
                    path.display()
                )));
            }
            Ok(loaded.pairs)
        }
        None => Ok(synthetic(Corpus::Memorize, 50, config.train.seed)),
    }
}

fn build_vocab(pairs: &[TextPair], max: usize) -> CliResult<Vocab> {
    Ok(Vocab::build(
        pairs
            .iter()
            .flat_map(|p| [p.input.as_str(), p.output.as_str()]),
        max,
    )?)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CliResult {
    let mut config = load_config(&a.overrides)?;
    let pairs = training_pairs(a.data.as_deref(), &config, out)?;
    let vocab = build_vocab(&pairs, config.data.max_vocab)?;
    config.model.vocab_size = vocab.len();
    let examples = encode_pairs(&pairs, &vocab)?;
    let (train_set, mut valid_set): (Vec<Example>, Vec<Example>) = {
        let (t, v) = split_validation(&examples, config.train.validation_fraction);
        (t.to_vec(), v.to_vec())
    };
    if let Some(path) = &config.data.valid {
        let limits = LengthLimits::for_model(config.model.max_positions, config.prompt.k)?;
        valid_set = encode_pairs(&load_jsonl(path, limits)?.pairs, &vocab)?;
    }

    let (forward, inverse) =
        build_models(&config.model, config.prompt.k, &vocab, config.train.seed)?;
    let mut trainer = Trainer::new(forward, inverse, config.train.clone())?;
    let mut log_error = None;
    trainer.fit(&train_set, &valid_set, &vocab, |record| {
        let line = serde_json::to_value(record).expect("log records serialize");
        if let Err(e) = emit(out, line) {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    checkpoint::save(&a.out, &config, &vocab, &trainer.forward, &trainer.inverse)?;
    emit(
        out,
        json!({
            "command": "train",
            "checkpoint": a.out,
            "examples": train_set.len(),
            "vocab_size": vocab.len(),
            "best_epoch": trainer.state.best_epoch,
            "trainable_fraction": trainer.trainable_fraction(),
        }),
    )
}

fn require_checkpoint(path: Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
    let path =
        path.ok_or_else(|| Failure::Runtime(format!("{command} needs --checkpoint <path>")))?;
    if !path.exists() {
        return Err(Failure::Runtime(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn generate_cmd(a: GenerateArgs, out: &mut dyn Write) -> CliResult {
    let path = require_checkpoint(a.checkpoint, "generate")?;
    let (mut config, vocab, forward, inverse) = checkpoint::load(&path)?;
    let o = &a.overrides;
    if o.config.is_some() {
        return Err(Failure::Usage(
            "generate takes its configuration from the checkpoint".into(),
        ));
    }
    if let Some(seed) = o.seed {
        config.decode.seed = seed;
    }
    if let Some(l) = o.lambda {
        config.decode.lambda = l;
    }
    if let Some(b) = o.beam {
        config.decode.beam_size = b;
    }
    if let Some(m) = o.max_sentences {
        config.decode.max_sentences = m;
    }
    config
        .decode
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;

    let inputs = match (&a.input, &a.text) {
        (Some(p), _) => read_lines(p)?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect(),
        (None, Some(t)) => vec![t.clone()],
        (None, None) => {
            return Err(Failure::Usage(
                "generate needs --input <file> or --text <string>".into(),
            ))
        }
    };
    let room = config.model.max_positions - 2 * config.prompt.k;
    let mut records = Vec::with_capacity(inputs.len());
    for text in &inputs {
        let mut ids = vocab.encode(text);
        if ids.is_empty() {
            return Err(Failure::Runtime(format!("input {text:?} has no tokens")));
        }
        ids.truncate(room);
        let generation = generate(&ids, &forward, Some(&inverse), &vocab, &config.decode)?;
        let sentences: Vec<String> = generation
            .sentences
            .iter()
            .map(|s| vocab.decode(s))
            .collect();
        let record = json!({
            "input": text,
            "output": vocab.decode(&generation.tokens()),
            "sentences": sentences,
        });
        emit(out, record.clone())?;
        records.push(record);
    }
    if let Some(path) = &a.out {
        write_jsonl(path, &records)?;
    }
    Ok(())
}

fn tokenized_lines(path: &Path) -> CliResult<Vec<Vec<String>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| context_tuning::data::tokenize(l))
        .collect())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CliResult {
    let hyp = tokenized_lines(&a.hyp)?;
    let reference = tokenized_lines(&a.reference)?;
    if hyp.len() != reference.len() {
        return Err(Failure::Usage(format!(
            "{} hypotheses but {} references",
            hyp.len(),
            reference.len()
        )));
    }
    let report = MetricReport::compute(&hyp, &reference)?;
    writeln!(out, "{}", report.to_json_line())?;
    write!(
        out,
        "{}",
        metric_table("set", &[("all".to_string(), report)])
    )?;
    Ok(())
}

fn probe(a: ProbeArgs, out: &mut dyn Write) -> CliResult {
    let path = require_checkpoint(a.checkpoint, "probe")?;
    let (config, vocab, forward, _) = checkpoint::load(&path)?;
    let mut ids = vocab.encode(&a.text);
    if ids.is_empty() {
        return Err(Failure::Runtime("probe text has no tokens".into()));
    }
    ids.truncate(config.model.max_positions - 2 * config.prompt.k);
    let prompts = forward.prompts(&ids)?;
    let embedding = forward.store.get(forward.generator.embedding);
    let slots = prompt_probe(&prompts, embedding, &vocab, a.top)?;
    let mut table = String::new();
    for slot in &slots {
        emit(
            out,
            serde_json::to_value(slot).expect("probe records serialize"),
        )?;
        let words: Vec<String> = slot
            .matches
            .iter()
            .map(|m| format!("{} ({:.3})", m.token, m.similarity))
            .collect();
        let side = if slot.slot < prompts.k() {
            "left"
        } else {
            "right"
        };
        let shown = if slot.similarity_undefined {
            "undefined".to_string()
        } else {
            words.join(", ")
        };
        table.push_str(&format!("{side:<5} {:>3}  {shown}\n", slot.slot));
    }
    write!(out, "{table}")?;
    Ok(())
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> CliResult {
    let mut config = load_config(&a.overrides)?;
    if a.ks.is_empty() {
        return Err(Failure::Usage("--ks needs at least one value".into()));
    }
    let max_k = *a.ks.iter().max().expect("non-empty");
    let mut check = config.clone();
    check.prompt.k = max_k;
    check.validate()?;
    let pairs = training_pairs(a.data.as_deref(), &check, out)?;
    let vocab = build_vocab(&pairs, config.data.max_vocab)?;
    config.model.vocab_size = vocab.len();
    let examples = encode_pairs(&pairs, &vocab)?;
    let rows = sensitivity_sweep(
        &a.ks,
        &examples,
        &vocab,
        &config.model,
        &config.train,
        &config.decode,
    )?;
    for row in &rows {
        emit(
            out,
            serde_json::to_value(row).expect("sweep rows serialize"),
        )?;
    }
    write!(out, "{}", sweep_table(&rows))?;
    Ok(())
}

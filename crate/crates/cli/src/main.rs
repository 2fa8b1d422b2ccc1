//! `clozegen`: synthesise corpora, train blank selectors and apply them.
//!
//! Exit codes: 0 success, 1 other failure, 2 missing or unreadable file,
//! 3 training diverged (last good checkpoint is still written), 64 usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use clozegen::data::{split_dataset, tokenize, Corpus, Split, Vocabulary, DEFAULT_RATIOS};
use clozegen::models::{generate_multi_blank, Scheme};
use clozegen::nn::Pooling;
use clozegen::synth::{generate_teacher_corpus, RuleKind, TeacherConfig};
use clozegen::train::{evaluate, fit_with, Checkpoint, EpochRecord, Metrics, TrainConfig};
use clozegen::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "clozegen", version, about = "Learned fill-in-the-blank question generation")]
struct Cli {
    /// Root for corpora, vocabulary and checkpoints.
    #[arg(long, global = true, env = "CLOZEGEN_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a rule-labelled synthetic corpus and its train/valid/test split.
    Synth(SynthArgs),
    /// Train a model on the corpus in the data directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Blank out the k best tokens of a sentence.
    Blank(BlankArgs),
    /// Summarise a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON teacher configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    rule: Option<RuleKind>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint destination [default: DATA_DIR/model.ckpt].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics history destination [default: DATA_DIR/metrics.jsonl].
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// [default: DATA_DIR/model.ckpt]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct BlankArgs {
    /// [default: DATA_DIR/model.ckpt]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of blanks.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Sentence to blank; words may be given as separate arguments.
    #[arg(required = true, num_args = 1..)]
    text: Vec<String>,
}

#[derive(Args)]
struct InspectArgs {
    /// [default: DATA_DIR/model.ckpt]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(&cli.data_dir, args),
        Command::Train(args) => cmd_train(&cli.data_dir, args),
        Command::Eval(args) => cmd_eval(&cli.data_dir, args),
        Command::Blank(args) => cmd_blank(&cli.data_dir, args),
        Command::Inspect(args) => cmd_inspect(&cli.data_dir, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_MISSING,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Invalid(_) | Error::Empty(_) | Error::UnknownVariant { .. } | Error::OutOfRange { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> clozegen::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn create(path: &Path) -> clozegen::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("output serialises"));
}

fn cmd_synth(data_dir: &Path, args: SynthArgs) -> clozegen::Result<()> {
    let mut cfg: TeacherConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TeacherConfig::default(),
    };
    cfg.count = args.count.unwrap_or(cfg.count);
    cfg.vocab_size = args.vocab_size.unwrap_or(cfg.vocab_size);
    cfg.min_len = args.min_len.unwrap_or(cfg.min_len);
    cfg.max_len = args.max_len.unwrap_or(cfg.max_len);
    cfg.zipf_exponent = args.zipf.unwrap_or(cfg.zipf_exponent);
    cfg.rule = args.rule.unwrap_or(cfg.rule);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if cfg.count < 3 {
        return Err(Error::Invalid(format!("--count {} is too small to split (need at least 3)", cfg.count)));
    }

    let corpus = generate_teacher_corpus(&cfg)?;
    let (train, valid, test) = split_dataset(&corpus.examples, DEFAULT_RATIOS, cfg.seed)?;
    let splits = [
        Corpus::new(Some(Split::Train), train),
        Corpus::new(Some(Split::Valid), valid),
        Corpus::new(Some(Split::Test), test),
    ];
    std::fs::create_dir_all(data_dir).map_err(|e| Error::Io {
        path: data_dir.to_path_buf(),
        source: e,
    })?;
    for split in &splits {
        let path = data_dir.join(split.split.expect("split set above").file_name());
        split.write_jsonl(&path)?;
        eprintln!("wrote {} sentences to {}", split.len(), path.display());
    }
    let vocab = Vocabulary::build(&splits[0], 1)?;
    vocab.save(&data_dir.join("vocab.json"))?;

    #[derive(Serialize)]
    struct Summary {
        train: usize,
        valid: usize,
        test: usize,
        vocab_size: usize,
        config: TeacherConfig,
    }
    print_json(&Summary {
        train: splits[0].len(),
        valid: splits[1].len(),
        test: splits[2].len(),
        vocab_size: vocab.len(),
        config: cfg,
    });
    Ok(())
}

fn train_config(args: &TrainArgs) -> clozegen::Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    let m = &mut cfg.model;
    m.scheme = args.scheme.unwrap_or(m.scheme);
    m.pooling = args.pooling.unwrap_or(m.pooling);
    m.dropout = args.dropout.unwrap_or(m.dropout);
    m.embed_dim = args.embed_dim.unwrap_or(m.embed_dim);
    m.hidden_dim = args.hidden_dim.unwrap_or(m.hidden_dim);
    m.layers = args.layers.unwrap_or(m.layers);
    cfg.optimizer.lr = args.lr.unwrap_or(cfg.optimizer.lr);
    cfg.clip = args.clip.unwrap_or(cfg.clip);
    cfg.epochs = args.epochs.or(cfg.epochs);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    if let Some(out) = &args.out {
        cfg.checkpoint_path = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(data_dir: &Path, args: TrainArgs) -> clozegen::Result<()> {
    let cfg = train_config(&args)?;
    let train = Corpus::read_jsonl(&data_dir.join(Split::Train.file_name()), Some(Split::Train))?;
    let valid = Corpus::read_jsonl(&data_dir.join(Split::Valid.file_name()), Some(Split::Valid))?;
    let vocab_path = data_dir.join("vocab.json");
    let vocab = if vocab_path.exists() {
        Vocabulary::load(&vocab_path)?
    } else {
        Vocabulary::build(&train, cfg.min_freq)?
    };
    let ckpt_path = cfg.checkpoint_path.clone().unwrap_or_else(|| data_dir.join("model.ckpt"));
    let metrics_path = args.metrics.clone().unwrap_or_else(|| data_dir.join("metrics.jsonl"));

    eprintln!(
        "training {} model on {} sentences ({} epochs, vocabulary {})",
        cfg.model.scheme,
        train.len(),
        cfg.epoch_budget(),
        vocab.len()
    );
    println!("{:>5} {:>8} {:>10} {:>10} {:>8}", "epoch", "step", "train", "valid", "metric");
    let outcome = fit_with(&cfg, &vocab, &train, &valid, |r| {
        let (loss, metric) = match &r.valid {
            Some(m) => (format!("{:.4}", m.loss), format!("{:.4}", m.primary())),
            None => ("-".into(), "-".into()),
        };
        println!("{:>5} {:>8} {:>10.4} {:>10} {:>8}", r.epoch, r.step, r.train_loss, loss, metric);
    })?;

    let mut w = create(&metrics_path)?;
    EpochRecord::write_jsonl(&outcome.history, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::Io {
            path: metrics_path.clone(),
            source: e,
        })?;
    outcome.best.save(&ckpt_path)?;
    match outcome.best_metric {
        Some(m) => eprintln!("saved checkpoint (valid {m:.4}) to {}", ckpt_path.display()),
        None => eprintln!("saved last good checkpoint to {}", ckpt_path.display()),
    }
    outcome.into_result().map(|_| ())
}

fn checkpoint_path(data_dir: &Path, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| data_dir.join("model.ckpt"))
}

fn cmd_eval(data_dir: &Path, args: EvalArgs) -> clozegen::Result<()> {
    let ckpt = Checkpoint::load(&checkpoint_path(data_dir, args.checkpoint))?;
    let corpus = Corpus::read_jsonl(&data_dir.join(args.split.file_name()), Some(args.split))?;
    let model = ckpt.model()?;
    let metrics: Metrics = evaluate(&model, &corpus.encode(&ckpt.vocab), ckpt.config.threshold)?;
    print_json(&metrics);
    Ok(())
}

#[derive(Serialize)]
struct BlankRecord {
    positions: Vec<usize>,
    answers: Vec<String>,
}

fn cmd_blank(data_dir: &Path, args: BlankArgs) -> clozegen::Result<()> {
    let tokens = tokenize(&args.text.join(" "));
    if tokens.is_empty() {
        return Err(Error::Invalid("the sentence has no tokens".into()));
    }
    let ckpt = Checkpoint::load(&checkpoint_path(data_dir, args.checkpoint))?;
    let model = ckpt.model()?;
    let positions = generate_multi_blank(&model, &ckpt.vocab.encode(&tokens), args.k)?;

    let mut shown = tokens.clone();
    for &p in &positions {
        shown[p] = "____".into();
    }
    println!("{}", shown.join(" "));
    print_json(&BlankRecord {
        answers: positions.iter().map(|&p| tokens[p].clone()).collect(),
        positions,
    });
    Ok(())
}

fn cmd_inspect(data_dir: &Path, args: InspectArgs) -> clozegen::Result<()> {
    let ckpt = Checkpoint::load(&checkpoint_path(data_dir, args.checkpoint))?;

    #[derive(Serialize)]
    struct Param<'a> {
        name: &'a str,
        shape: &'a [usize],
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        step: u64,
        vocab_size: usize,
        scalars: usize,
        config: &'a TrainConfig,
        params: Vec<Param<'a>>,
    }
    print_json(&Summary {
        step: ckpt.step,
        vocab_size: ckpt.vocab.len(),
        scalars: ckpt.params.scalar_count(),
        config: &ckpt.config,
        params: ckpt
            .params
            .iter()
            .map(|(_, name, a)| Param { name, shape: a.shape() })
            .collect(),
    });
    Ok(())
}

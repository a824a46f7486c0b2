use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use emotopic::corpus::io::{write_corpus, write_table};
use emotopic::corpus::{synth_corpus, tokenize};
use emotopic::pipeline::{self, Config, Split};
use emotopic::{Error, Result};

#[derive(Parser)]
#[command(name = "emotopic", version, about = "Keyword-driven emotional reply generation")]
struct Cli {
    /// JSON configuration file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus, dictionaries and a config into a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long, default_value_t = 120)]
        vocab: usize,
    },
    /// Mark, filter and split the corpus; writes the split manifest.
    Prepare,
    /// Train the topic model and extract a topic dictionary.
    TrainLda,
    /// Train classifier, generator and direction selector.
    Train,
    /// Generate a reply for one post.
    Generate {
        /// Whitespace-separated post tokens.
        #[arg(long)]
        post: String,
        /// Include keywords, categories, segments, direction score and attention.
        #[arg(long)]
        trace: bool,
        /// Defaults to the checkpoint in the configured work directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score generated replies on a split.
    Evaluate {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Score references against themselves.
        #[arg(long)]
        echo: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Interactive loop: one reply line per input line.
    Chat {
        /// Print a JSON trace line after each reply.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.lda.seed = seed;
    }
    Ok(cfg)
}

fn checkpoint(cfg: &Config, over: &Option<PathBuf>) -> PathBuf {
    over.clone().unwrap_or_else(|| cfg.checkpoint_path())
}

fn synth(out: &Path, pairs: usize, vocab: usize, seed: u64) -> Result<()> {
    let c = synth_corpus(seed, pairs, vocab)?;
    fs::create_dir_all(out)?;
    write_corpus(fs::File::create(out.join("corpus.tsv"))?, &c.pairs)?;
    write_table(fs::File::create(out.join("emotion.tsv"))?, &c.emotion_source)?;
    write_table(fs::File::create(out.join("topic.tsv"))?, &c.topic_source)?;
    let held_out = (pairs / 10).max(1);
    let cfg = json!({
        "corpus": "corpus.tsv",
        "emotion_dictionary": "emotion.tsv",
        "topic_dictionary": "topic.tsv",
        "work_dir": "run",
        "seed": seed,
        "hidden": 32,
        "epochs": 30,
        "classifier_epochs": 20,
        "selector_epochs": 20,
        "learning_rate": 0.003,
        "val_size": held_out,
        "test_size": held_out,
        "lda": {"topics": 10, "iterations": 50, "seed": seed},
    });
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    print_json(&json!({
        "pairs": c.pairs.len(),
        "emotion_words": c.emotion_dictionary.len(),
        "topic_words": c.topic_dictionary.len(),
        "config": out.join("config.json"),
    }))
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { out, pairs, vocab } = &cli.command {
        return synth(out, *pairs, *vocab, cli.seed.unwrap_or(0));
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { .. } => unreachable!("handled above"),
        Command::Prepare => print_json(&pipeline::prepare(&cfg)?),
        Command::TrainLda => print_json(&pipeline::run_train_lda(&cfg)?),
        Command::Train => print_json(&pipeline::run_train(&cfg)?),
        Command::Generate {
            post,
            trace,
            checkpoint: ck,
        } => {
            let model = pipeline::load_model(&checkpoint(&cfg, ck))?;
            let tokens = tokenize(post);
            let g = model.generate(&tokens)?;
            let mut report = json!({"post": tokens, "reply": g.reply.join(" ")});
            if *trace {
                report["trace"] = serde_json::to_value(&g.trace)?;
            }
            print_json(&report)
        }
        Command::Evaluate {
            split,
            echo,
            checkpoint: ck,
        } => {
            let model = pipeline::load_model(&checkpoint(&cfg, ck))?;
            let pairs = pipeline::load_split(&cfg, *split)?;
            let table = pipeline::embedding_table(&cfg, &model)?;
            print_json(&pipeline::evaluate(&model, &pairs, &table, *echo)?)
        }
        Command::Chat {
            trace,
            checkpoint: ck,
        } => {
            let model = pipeline::load_model(&checkpoint(&cfg, ck))?;
            pipeline::chat(&model, io::stdin().lock(), io::stdout().lock(), io::stderr(), *trace)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Data(_) => 2,
                Error::Config(_) => 3,
                _ => 1,
            })
        }
    }
}

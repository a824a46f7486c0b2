//! Configuration, end-to-end training, generation, evaluation and the
//! file-based workflow behind the command-line tool.

mod config;
mod model;
mod train;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::Config;
pub use model::{Generation, GenerationTrace, Generator, GeneratorLoss, GeneratorSpec, Model, TrainExample, FORMAT_VERSION};
pub use train::{lda_documents, token_loss, train_lda, train_model, EpochLoss, TrainLog};

use crate::corpus::io::{read_corpus, read_stopwords, read_table, write_table};
use crate::corpus::{
    filter_and_split, load_dictionaries, mark_all, tokenize, ConversationPair, EmotionDictionary, MarkedPair,
    RetentionStats, SplitManifest, TopicDictionary, WORDS_PER_TOPIC,
};
use crate::error::{Error, Result};
use crate::lda::LdaModel;
use crate::metrics::{score_corpus, EmbeddingTable, MetricReport};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn load_pairs(cfg: &Config) -> Result<Vec<ConversationPair>> {
    let pairs = read_corpus(open(cfg.require(&cfg.corpus, "corpus")?)?)
        .map_err(|e| Error::Data(e.to_string()))?;
    if pairs.is_empty() {
        return Err(Error::Data("corpus is empty".into()));
    }
    Ok(pairs)
}

pub fn load_stopwords(cfg: &Config) -> Result<HashSet<String>> {
    match &cfg.stopwords {
        Some(p) => read_stopwords(open(p)?),
        None => Ok(HashSet::new()),
    }
}

pub fn load_dictionary_files(cfg: &Config) -> Result<(EmotionDictionary, TopicDictionary)> {
    let emotion = read_table(open(cfg.require(&cfg.emotion_dictionary, "emotion_dictionary")?)?)?;
    let topic = read_table(open(&cfg.topic_dictionary_path()?)?)?;
    load_dictionaries(&emotion, &topic, cfg.lda.topics)
        .map_err(|e| Error::Config(format!("dictionaries: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub stats: RetentionStats,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    stats: RetentionStats,
    #[serde(flatten)]
    split: SplitManifest,
}

/// Marks and filters the corpus and writes the split manifest.
pub fn prepare(cfg: &Config) -> Result<PrepareReport> {
    let pairs = load_pairs(cfg)?;
    let (ed, td) = load_dictionary_files(cfg)?;
    let split = filter_and_split(&pairs, &ed, &td, cfg.seed, cfg.val_size, cfg.test_size).map_err(|e| {
        let retained = mark_all(&pairs, &ed, &td).len();
        Error::Data(format!("{e} (retained {retained} of {} pairs)", pairs.len()))
    })?;
    let report = PrepareReport {
        stats: split.stats.clone(),
        train: split.train.len(),
        val: split.val.len(),
        test: split.test.len(),
    };
    let manifest = ManifestFile {
        stats: split.stats,
        split: split.manifest,
    };
    let mut w = create(&cfg.manifest_path())?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.flush()?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Marked pairs of one split as recorded in the manifest.
pub fn load_split(cfg: &Config, split: Split) -> Result<Vec<MarkedPair>> {
    let path = cfg.manifest_path();
    let text = fs::read_to_string(&path)
        .map_err(|_| Error::Data(format!("{} missing (run prepare first)", path.display())))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))?;
    let pairs = load_pairs(cfg)?;
    let (ed, td) = load_dictionary_files(cfg)?;
    let marked: BTreeMap<usize, MarkedPair> = mark_all(&pairs, &ed, &td).into_iter().collect();
    let idx = match split {
        Split::Train => &manifest.split.train,
        Split::Val => &manifest.split.val,
        Split::Test => &manifest.split.test,
    };
    idx.iter()
        .map(|i| {
            marked
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Data(format!("manifest pair {i} is not markable with the current corpus")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LdaReport {
    pub topics: usize,
    pub vocabulary: usize,
    pub sweeps: usize,
    pub short_topic_lists: bool,
    pub topic_words: Vec<Vec<String>>,
}

/// Trains LDA on the corpus, saves it and writes the extracted topic dictionary.
pub fn run_train_lda(cfg: &Config) -> Result<LdaReport> {
    let pairs = load_pairs(cfg)?;
    let stop = load_stopwords(cfg)?;
    let lda = train_lda(cfg, &pairs, &stop).map_err(|e| Error::Data(format!("LDA: {e}")))?;
    let mut w = create(&cfg.lda_path())?;
    lda.save(&mut w)?;
    w.flush()?;
    let ex = lda.extract_topic_dictionary(&stop, WORDS_PER_TOPIC);
    if ex.short {
        warn!("some topics have fewer than {WORDS_PER_TOPIC} eligible words");
    }
    let rows: Vec<(String, String)> = ex
        .dictionary
        .iter()
        .map(|(w, k)| (w.to_string(), format!("t{k}")))
        .collect();
    let mut w = create(&cfg.extracted_topics_path())?;
    write_table(&mut w, &rows)?;
    w.flush()?;
    Ok(LdaReport {
        topics: lda.topics(),
        vocabulary: lda.vocab().len(),
        sweeps: cfg.lda.iterations,
        short_topic_lists: ex.short,
        topic_words: (0..lda.topics())
            .map(|k| ex.dictionary.words(k).iter().take(10).cloned().collect())
            .collect(),
    })
}

fn load_or_train_lda(cfg: &Config) -> Result<LdaModel> {
    let path = cfg.lda_path();
    if path.exists() {
        return LdaModel::load(BufReader::new(File::open(&path)?));
    }
    info!("{} missing; training LDA", path.display());
    run_train_lda(cfg)?;
    LdaModel::load(BufReader::new(File::open(&path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_pairs: usize,
    pub vocabulary: usize,
    pub parameters: usize,
    pub checkpoint: String,
    pub final_token_loss: f64,
    pub log: TrainLog,
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    model.save(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    Model::load(BufReader::new(f))
}

/// Trains every component on the manifest's training split and writes the checkpoint.
pub fn run_train(cfg: &Config) -> Result<TrainReport> {
    let train = load_split(cfg, Split::Train)?;
    let (ed, td) = load_dictionary_files(cfg)?;
    let lda = load_or_train_lda(cfg)?;
    let (model, log) = train_model(cfg, &train, &ed, &td, lda)?;
    let path = cfg.checkpoint_path();
    save_model(&model, &path)?;
    let mut w = create(&cfg.train_log_path())?;
    serde_json::to_writer_pretty(&mut w, &log)?;
    w.flush()?;
    Ok(TrainReport {
        train_pairs: train.len(),
        vocabulary: model.vocab.len(),
        parameters: model.generator_params.num_values()
            + model.classifier_params.num_values()
            + model.selector_params.num_values(),
        checkpoint: path.display().to_string(),
        final_token_loss: log.generator.last().map_or(f64::NAN, |e| e.loss),
        log,
    })
}

/// The configured external table, or the model's input embeddings.
pub fn embedding_table(cfg: &Config, model: &Model) -> Result<EmbeddingTable> {
    match &cfg.embeddings {
        Some(p) => EmbeddingTable::read(open(p)?),
        None => EmbeddingTable::from_model(&model.vocab, model.generator_params.expect("embed")?),
    }
}

/// Generates a reply for every pair and scores it against the reference.
/// With `echo`, references are scored against themselves.
pub fn evaluate(model: &Model, pairs: &[MarkedPair], table: &EmbeddingTable, echo: bool) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to evaluate".into()));
    }
    let references: Vec<Vec<String>> = pairs.iter().map(|m| m.pair.reply.clone()).collect();
    let candidates: Vec<Vec<String>> = if echo {
        references.clone()
    } else {
        pairs
            .iter()
            .map(|m| model.generate(&m.pair.post).map(|g| g.reply))
            .collect::<Result<_>>()?
    };
    score_corpus(&candidates, &references, table)
}

/// Read-generate-print loop. Empty lines are skipped; returns the number of
/// replies written.
pub fn chat<R: BufRead, W: Write, P: Write>(
    model: &Model,
    input: R,
    mut output: W,
    mut prompt: P,
    trace: bool,
) -> Result<usize> {
    let mut replies = 0;
    write!(prompt, "> ")?;
    prompt.flush()?;
    for line in input.lines() {
        let post = tokenize(&line?);
        if !post.is_empty() {
            let g = model.generate(&post)?;
            writeln!(output, "{}", g.reply.join(" "))?;
            if trace {
                writeln!(output, "{}", serde_json::to_string(&g.trace)?)?;
            }
            output.flush()?;
            replies += 1;
        }
        write!(prompt, "> ")?;
        prompt.flush()?;
    }
    writeln!(prompt)?;
    Ok(replies)
}

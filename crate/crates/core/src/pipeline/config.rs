use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lda::LdaConfig;

/// Run configuration. Relative paths in a config file are resolved against
/// the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    pub emotion_dictionary: Option<PathBuf>,
    /// Falls back to the dictionary written by `train-lda` into `work_dir`.
    pub topic_dictionary: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// External embedding table for evaluation; model embeddings otherwise.
    pub embeddings: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub seed: u64,
    pub hidden: usize,
    pub max_middle_len: usize,
    pub max_side_len: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub classifier_epochs: usize,
    pub selector_epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub val_size: usize,
    pub test_size: usize,
    /// Number of LDA documents sampled from the corpus.
    pub lda_docs: usize,
    pub lda: LdaConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corpus: None,
            emotion_dictionary: None,
            topic_dictionary: None,
            stopwords: None,
            embeddings: None,
            work_dir: PathBuf::from("run"),
            seed: 0,
            hidden: 64,
            max_middle_len: 10,
            max_side_len: 10,
            learning_rate: 1e-3,
            epochs: 30,
            classifier_epochs: 20,
            selector_epochs: 20,
            batch_size: 1,
            clip_norm: 5.0,
            val_size: 0,
            test_size: 0,
            lda_docs: 60_000,
            lda: LdaConfig::default(),
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.emotion_dictionary,
            &mut self.topic_dictionary,
            &mut self.stopwords,
            &mut self.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.work_dir);
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("lda.topics", self.lda.topics),
        ] {
            if v == 0 {
                return config_err(format!("{name} must be at least 1"));
            }
        }
        if self.lda.topics < 2 {
            return config_err("lda.topics must be at least 2");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return config_err("learning_rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return config_err("clip_norm must be positive");
        }
        if !(self.lda.beta > 0.0) || self.lda.alpha.is_some_and(|a| !(a > 0.0)) {
            return config_err("LDA alpha and beta must be positive");
        }
        for p in [
            &self.corpus,
            &self.emotion_dictionary,
            &self.topic_dictionary,
            &self.stopwords,
            &self.embeddings,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return config_err(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("config is missing `{name}`")))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.work_dir.join("manifest.json")
    }

    pub fn lda_path(&self) -> PathBuf {
        self.work_dir.join("lda.bin")
    }

    pub fn extracted_topics_path(&self) -> PathBuf {
        self.work_dir.join("topic_dictionary.tsv")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.work_dir.join("checkpoint.bin")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.work_dir.join("train_log.json")
    }

    /// The configured topic dictionary, or the one extracted by LDA training.
    pub fn topic_dictionary_path(&self) -> Result<PathBuf> {
        if let Some(p) = &self.topic_dictionary {
            return Ok(p.clone());
        }
        let p = self.extracted_topics_path();
        if p.exists() {
            Ok(p)
        } else {
            config_err("no topic_dictionary configured and none extracted yet (run train-lda)")
        }
    }
}

#![allow(dead_code)]

use emotopic::corpus::{mark_all, synth_corpus, MarkedPair, SynthCorpus};
use emotopic::pipeline::{train_lda, train_model, Config, Model, TrainLog};

pub struct Fixture {
    pub corpus: SynthCorpus,
    pub marked: Vec<MarkedPair>,
}

pub fn fixture(seed: u64, pairs: usize, vocab: usize) -> Fixture {
    let corpus = synth_corpus(seed, pairs, vocab).expect("synthetic corpus");
    let marked = mark_all(&corpus.pairs, &corpus.emotion_dictionary, &corpus.topic_dictionary)
        .into_iter()
        .map(|(_, m)| m)
        .collect();
    Fixture { corpus, marked }
}

/// A config sized for fast tests.
pub fn small_config(hidden: usize, epochs: usize) -> Config {
    let mut cfg = Config {
        hidden,
        epochs,
        classifier_epochs: epochs,
        selector_epochs: epochs,
        learning_rate: 3e-3,
        ..Config::default()
    };
    cfg.lda.iterations = 30;
    cfg
}

pub fn train(cfg: &Config, fx: &Fixture) -> (Model, TrainLog) {
    let lda = train_lda(cfg, &fx.corpus.pairs, &Default::default()).expect("lda");
    train_model(
        cfg,
        &fx.marked,
        &fx.corpus.emotion_dictionary,
        &fx.corpus.topic_dictionary,
        lda,
    )
    .expect("training")
}

pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut buf = Vec::new();
    model.save(&mut buf).expect("save");
    buf
}

use std::collections::HashSet;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::Config;
use super::model::{Model, TrainExample};
use crate::corpus::{ConversationPair, EmotionDictionary, MarkedPair, TopicDictionary, Vocab};
use crate::error::{Error, Result};
use crate::lda::{filter_documents, gibbs_train, LdaModel};
use crate::numcore::{Adam, Gradients, NodeId, ParamStore, Tape};

/// Mean losses of one epoch. Epoch 0 is measured before any update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean cross-entropy per target (decoder tokens for the generator).
    pub loss: f64,
    /// Mean keyword-predictor cross-entropy; generator only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keyword_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub classifier: Vec<EpochLoss>,
    pub generator: Vec<EpochLoss>,
    pub selector: Vec<EpochLoss>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    sum: f64,
    count: usize,
    aux_sum: f64,
    aux_count: usize,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.sum += other.sum;
        self.count += other.count;
        self.aux_sum += other.aux_sum;
        self.aux_count += other.aux_count;
    }

    fn epoch(&self, epoch: usize, with_aux: bool) -> EpochLoss {
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        EpochLoss {
            epoch,
            loss: mean(self.sum, self.count),
            keyword_loss: with_aux.then(|| mean(self.aux_sum, self.aux_count)),
        }
    }
}

fn values(tape: &Tape<'_, f32>, nodes: impl IntoIterator<Item = NodeId>) -> (f64, usize) {
    nodes
        .into_iter()
        .fold((0.0, 0), |(s, n), id| (s + tape.scalar(id) as f64, n + 1))
}

/// Adam training with per-batch gradient accumulation and norm clipping.
/// Each `loss` call returns the node to minimize and its loss tallies.
fn run_stage<E, L>(
    name: &str,
    params: &mut ParamStore,
    items: &[E],
    epochs: usize,
    cfg: &Config,
    seed: u64,
    with_aux: bool,
    loss: L,
) -> Result<Vec<EpochLoss>>
where
    L: Fn(&mut Tape<'_, f32>, &E) -> Result<(NodeId, Tally)>,
{
    let mut log = Vec::with_capacity(epochs + 1);
    let mut before = Tally::default();
    for item in items {
        let mut tape = Tape::new(params);
        before.add(loss(&mut tape, item)?.1);
    }
    log.push(before.epoch(0, with_aux));
    let mut adam = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let lr = cfg.learning_rate as f32;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Gradients> = None;
            for &i in batch {
                let mut tape = Tape::new(params);
                let (l, t) = loss(&mut tape, &items[i])?;
                tally.add(t);
                let g = tape.backward(l)?;
                match acc.as_mut() {
                    Some(a) => a.accumulate(&g)?,
                    None => acc = Some(g),
                }
            }
            let mut g = acc.expect("chunks are non-empty");
            g.clip_norm(cfg.clip_norm as f32);
            adam.step(params, &g, lr)?;
        }
        let e = tally.epoch(epoch, with_aux);
        info!("{name} epoch {epoch}: loss {:.4}", e.loss);
        log.push(e);
    }
    Ok(log)
}

/// LDA documents: post and reply of up to `cfg.lda_docs` sampled pairs,
/// without stopwords and the most frequent words.
pub fn lda_documents(cfg: &Config, pairs: &[ConversationPair], stopwords: &HashSet<String>) -> Vec<Vec<String>> {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    if pairs.len() > cfg.lda_docs {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.lda.seed));
        idx.truncate(cfg.lda_docs);
        idx.sort_unstable();
    }
    let docs: Vec<Vec<String>> = idx
        .iter()
        .map(|&i| pairs[i].post.iter().chain(&pairs[i].reply).cloned().collect())
        .collect();
    filter_documents(&docs, stopwords)
}

pub fn train_lda(cfg: &Config, pairs: &[ConversationPair], stopwords: &HashSet<String>) -> Result<LdaModel> {
    let docs = lda_documents(cfg, pairs, stopwords);
    info!("training LDA on {} documents", docs.len());
    gibbs_train(&docs, &cfg.lda)
}

/// Trains the classifier, the generator and the selector in that order.
pub fn train_model(
    cfg: &Config,
    train: &[MarkedPair],
    emotion_dictionary: &EmotionDictionary,
    topic_dictionary: &TopicDictionary,
    lda: LdaModel,
) -> Result<(Model, TrainLog)> {
    if train.is_empty() {
        return Err(Error::Data("no marked training pairs".into()));
    }
    let vocab = Vocab::build(
        train
            .iter()
            .flat_map(|m| [m.pair.post.as_slice(), m.pair.reply.as_slice()]),
    );
    let mut model = Model::new(
        cfg.clone(),
        vocab,
        emotion_dictionary.clone(),
        topic_dictionary.clone(),
        lda,
    )?;
    let examples: Vec<TrainExample> = train.iter().map(|m| model.example(m)).collect();
    let mut log = TrainLog::default();

    let clf = model.classifier.clone();
    log.classifier = run_stage(
        "classifier",
        &mut model.classifier_params,
        &examples,
        cfg.classifier_epochs,
        cfg,
        cfg.seed.wrapping_add(1),
        false,
        |tape, ex| {
            let l = clf.loss_on(tape, &ex.post, ex.emotion)?;
            let (sum, count) = values(tape, [l]);
            Ok((l, Tally { sum, count, ..Tally::default() }))
        },
    )?;

    let gen = model.generator.clone();
    log.generator = run_stage(
        "generator",
        &mut model.generator_params,
        &examples,
        cfg.epochs,
        cfg,
        cfg.seed.wrapping_add(2),
        true,
        |tape, ex| {
            let l = gen.loss_on(tape, ex)?;
            let (sum, count) = values(tape, l.tokens.all().collect::<Vec<_>>());
            let (aux_sum, aux_count) = values(tape, [l.emotion_keyword, l.topic_keyword]);
            let total = l.total(tape);
            Ok((total, Tally { sum, count, aux_sum, aux_count }))
        },
    )?;

    let sel = model.selector.clone();
    log.selector = run_stage(
        "selector",
        &mut model.selector_params,
        &examples,
        cfg.selector_epochs,
        cfg,
        cfg.seed.wrapping_add(3),
        false,
        |tape, ex| {
            let (f, b) = ex.arrangements();
            let l = sel.loss_on(tape, &f, &b, ex.direction)?;
            let (sum, count) = values(tape, [l]);
            Ok((l, Tally { sum, count, ..Tally::default() }))
        },
    )?;
    Ok((model, log))
}

/// Mean teacher-forced decoder cross-entropy per token over `examples`.
pub fn token_loss(model: &Model, examples: &[TrainExample]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0);
    for ex in examples {
        let mut tape = Tape::new(&model.generator_params);
        let l = model.generator.loss_on(&mut tape, ex)?;
        let (s, n) = values(&tape, l.tokens.all().collect::<Vec<_>>());
        sum += s;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

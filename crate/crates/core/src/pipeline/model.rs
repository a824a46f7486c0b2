use std::collections::HashSet;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::corpus::{Direction, Emotion, EmotionDictionary, MarkedPair, TopicDictionary, Vocab};
use crate::decoder::{AsyncDecoder, AttentionRecord, DecodeTarget, DecoderConfig, StageLosses};
use crate::encoder::Encoder;
use crate::error::{invalid, Error, Result};
use crate::keyword::{EmotionClassifier, KeywordKind, KeywordPredictor};
use crate::lda::LdaModel;
use crate::numcore::container::{Container, Payload};
use crate::numcore::{NodeId, ParamStore, Real, Tape};
use crate::selector::{assemble, AssembledReply, DirectionSelector};

pub const FORMAT_VERSION: u32 = 1;

/// One marked pair in vocabulary ids, with the topic category the LDA model
/// infers for its post.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub post: Vec<usize>,
    pub emotion: Emotion,
    pub topic_category: usize,
    pub emotion_keyword: usize,
    pub topic_keyword: usize,
    pub before_topic: Vec<usize>,
    pub middle: Vec<usize>,
    pub after_emotion: Vec<usize>,
    pub direction: Direction,
}

impl TrainExample {
    pub fn target(&self) -> DecodeTarget<'_> {
        DecodeTarget {
            topic_keyword: self.topic_keyword,
            emotion_keyword: self.emotion_keyword,
            before_topic: &self.before_topic,
            middle: &self.middle,
            after_emotion: &self.after_emotion,
        }
    }

    /// Topic-first arrangement and its reversal.
    pub fn arrangements(&self) -> (Vec<usize>, Vec<usize>) {
        assemble(
            &self.before_topic,
            &self.topic_keyword,
            &self.middle,
            &self.emotion_keyword,
            &self.after_emotion,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub vocab_size: usize,
    pub hidden: usize,
    pub num_topics: usize,
    pub max_middle_len: usize,
    pub max_side_len: usize,
    pub emotion_support: Vec<usize>,
    pub topic_support: Vec<usize>,
}

/// Encoder, both keyword predictors and the decoder: everything trained jointly.
#[derive(Clone, Debug)]
pub struct Generator {
    pub encoder: Encoder,
    pub emotion: KeywordPredictor,
    pub topic: KeywordPredictor,
    pub decoder: AsyncDecoder,
}

/// Loss nodes of one teacher-forced example.
#[derive(Clone, Debug)]
pub struct GeneratorLoss {
    pub emotion_keyword: NodeId,
    pub topic_keyword: NodeId,
    pub tokens: StageLosses,
}

impl GeneratorLoss {
    pub fn total<F: Real>(&self, tape: &mut Tape<'_, F>) -> NodeId {
        let mut all: Vec<NodeId> = self.tokens.all().collect();
        all.extend([self.emotion_keyword, self.topic_keyword]);
        tape.sum(&all)
    }
}

impl Generator {
    pub fn new(spec: &GeneratorSpec) -> Result<Self> {
        let h = spec.hidden;
        Ok(Generator {
            encoder: Encoder::new("embed", "encoder.gru", spec.vocab_size, h),
            emotion: KeywordPredictor::new(KeywordKind::Emotion, spec.emotion_support.clone(), Emotion::COUNT, h, h)?,
            topic: KeywordPredictor::new(KeywordKind::Topic, spec.topic_support.clone(), spec.num_topics, h, h)?,
            decoder: AsyncDecoder::new(
                "embed",
                DecoderConfig {
                    vocab_size: spec.vocab_size,
                    hidden: h,
                    max_middle_len: spec.max_middle_len,
                    max_side_len: spec.max_side_len,
                },
            ),
        })
    }

    pub fn declare<F: Real, R: rand::Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        self.encoder.declare(store, rng)?;
        self.emotion.declare(store, rng)?;
        self.topic.declare(store, rng)?;
        self.decoder.declare(store, rng)
    }

    /// Named parameter groups, for gradient checks and inspection.
    pub fn param_groups(&self) -> Vec<(&'static str, Vec<&str>)> {
        vec![
            ("encoder", self.encoder.param_names()),
            ("emotion_predictor", self.emotion.param_names()),
            ("topic_predictor", self.topic.param_names()),
            ("step1", self.decoder.step1_param_names()),
            ("step2", self.decoder.step2_param_names()),
            ("attention", self.decoder.attention_param_names()),
            ("side_a", self.decoder.side_a_param_names()),
            ("side_b", self.decoder.side_b_param_names()),
        ]
    }

    pub fn loss_on<F: Real>(&self, tape: &mut Tape<'_, F>, ex: &TrainExample) -> Result<GeneratorLoss> {
        let enc = self.encoder.encode_on(tape, &ex.post)?;
        let emotion_keyword = self
            .emotion
            .loss_on(tape, enc.context, ex.emotion.index(), ex.emotion_keyword)?;
        let topic_keyword = self
            .topic
            .loss_on(tape, enc.context, ex.topic_category, ex.topic_keyword)?;
        let tokens = self.decoder.loss_on(tape, enc.context, &ex.target())?;
        Ok(GeneratorLoss {
            emotion_keyword,
            topic_keyword,
            tokens,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationTrace {
    pub post: Vec<String>,
    pub emotion_category: Emotion,
    pub emotion_distribution: Vec<f32>,
    pub topic_category: usize,
    pub topic_distribution: Vec<f64>,
    pub emotion_keyword: String,
    pub topic_keyword: String,
    pub emotion_keyword_probability: f32,
    pub topic_keyword_probability: f32,
    pub draft: Vec<String>,
    pub before_topic: Vec<String>,
    pub middle: Vec<String>,
    pub after_emotion: Vec<String>,
    pub direction: Direction,
    pub direction_score: f64,
    pub attention: Vec<AttentionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Generation {
    pub reply: Vec<String>,
    pub trace: GenerationTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct StepCounts {
    generator: u64,
    classifier: u64,
    selector: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    format_version: u32,
    config: Config,
    vocab: Vocab,
    emotion_dictionary: EmotionDictionary,
    topic_dictionary: TopicDictionary,
    lda: serde_json::Value,
    step_counts: StepCounts,
}

/// A complete trained system: vocabulary, dictionaries, LDA model and the
/// generator, classifier and selector weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: Config,
    pub vocab: Vocab,
    pub emotion_dictionary: EmotionDictionary,
    pub topic_dictionary: TopicDictionary,
    pub lda: LdaModel,
    pub generator: Generator,
    pub classifier: EmotionClassifier,
    pub selector: DirectionSelector,
    pub generator_params: ParamStore,
    pub classifier_params: ParamStore,
    pub selector_params: ParamStore,
}

fn generator_spec(
    config: &Config,
    vocab: &Vocab,
    ed: &EmotionDictionary,
    td: &TopicDictionary,
    lda: &LdaModel,
) -> GeneratorSpec {
    GeneratorSpec {
        vocab_size: vocab.len(),
        hidden: config.hidden,
        num_topics: lda.topics(),
        max_middle_len: config.max_middle_len,
        max_side_len: config.max_side_len,
        emotion_support: ed.iter().filter_map(|(w, _)| vocab.get(w)).collect(),
        topic_support: td.iter().filter_map(|(w, _)| vocab.get(w)).collect(),
    }
}

impl Model {
    /// Randomly initialized model, seeded from `config.seed`.
    pub fn new(
        config: Config,
        vocab: Vocab,
        emotion_dictionary: EmotionDictionary,
        topic_dictionary: TopicDictionary,
        lda: LdaModel,
    ) -> Result<Self> {
        let spec = generator_spec(&config, &vocab, &emotion_dictionary, &topic_dictionary, &lda);
        let generator = Generator::new(&spec)?;
        let classifier = EmotionClassifier::new(vocab.len(), config.hidden);
        let selector = DirectionSelector::new(vocab.len(), config.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut generator_params = ParamStore::new();
        generator.declare(&mut generator_params, &mut rng)?;
        let mut classifier_params = ParamStore::new();
        classifier.declare(&mut classifier_params, &mut rng)?;
        let mut selector_params = ParamStore::new();
        selector.declare(&mut selector_params, &mut rng)?;
        Ok(Model {
            config,
            vocab,
            emotion_dictionary,
            topic_dictionary,
            lda,
            generator,
            classifier,
            selector,
            generator_params,
            classifier_params,
            selector_params,
        })
    }

    /// Converts a marked pair to ids; the topic category comes from the LDA model.
    pub fn example(&self, m: &MarkedPair) -> TrainExample {
        let v = &self.vocab;
        TrainExample {
            post: v.encode(&m.pair.post),
            emotion: m.emotion,
            topic_category: self.lda.infer_topic(&m.pair.post).category,
            emotion_keyword: v.id(&m.emotion_keyword),
            topic_keyword: v.id(&m.topic_keyword),
            before_topic: v.encode(&m.left),
            middle: v.encode(&m.middle),
            after_emotion: v.encode(&m.right),
            direction: m.direction,
        }
    }

    /// Runs keyword prediction, the three decoding steps and direction selection.
    pub fn generate<S: AsRef<str>>(&self, post: &[S]) -> Result<Generation> {
        if post.is_empty() {
            return invalid("post must contain at least one token");
        }
        let ids = self.vocab.encode(post);
        let emotion = self.classifier.classify(&self.classifier_params, &ids)?;
        let topic = self.lda.infer_topic(post);

        let mut tape = Tape::new(&self.generator_params);
        let enc = self.generator.encoder.encode_on(&mut tape, &ids)?;
        let v = self.vocab.len();
        let et = self
            .generator
            .emotion
            .predict_on(&mut tape, enc.context, emotion.category.index(), v)?;
        let tp = self
            .generator
            .topic
            .predict_on(&mut tape, enc.context, topic.category, v)?;
        if et.token == tp.token {
            return Err(Error::State("emotion and topic keyword coincide".into()));
        }
        let trace = self
            .generator
            .decoder
            .decode_on(&mut tape, enc.context, tp.token, et.token)?;
        let s = &trace.sides;
        let (fwd, bwd) = assemble(&s.before_topic, &tp.token, &trace.middle.tokens, &et.token, &s.after_emotion);
        let verdict: AssembledReply = self.selector.select(&self.selector_params, fwd, bwd)?;

        let words = |ids: &[usize]| self.vocab.decode(ids);
        Ok(Generation {
            reply: words(verdict.tokens()),
            trace: GenerationTrace {
                post: post.iter().map(|t| t.as_ref().to_string()).collect(),
                emotion_category: emotion.category,
                emotion_distribution: emotion.distribution,
                topic_category: topic.category,
                topic_distribution: topic.distribution,
                emotion_keyword: self.vocab.token(et.token).to_string(),
                topic_keyword: self.vocab.token(tp.token).to_string(),
                emotion_keyword_probability: et.distribution[et.token],
                topic_keyword_probability: tp.distribution[tp.token],
                draft: words(&trace.draft.tokens),
                before_topic: words(&s.before_topic),
                middle: words(&trace.middle.tokens),
                after_emotion: words(&s.after_emotion),
                direction: verdict.chosen,
                direction_score: verdict.score,
                attention: trace.middle.attention,
            },
        })
    }

    /// Writes all weights, the LDA counts and the metadata needed to rebuild the model.
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let (lda_meta, lda_entries) = self.lda.to_parts();
        let meta = CheckpointMeta {
            kind: "checkpoint".into(),
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            emotion_dictionary: self.emotion_dictionary.clone(),
            topic_dictionary: self.topic_dictionary.clone(),
            lda: lda_meta,
            step_counts: StepCounts {
                generator: self.generator_params.step_count(),
                classifier: self.classifier_params.step_count(),
                selector: self.selector_params.step_count(),
            },
        };
        let mut entries = self.generator_params.to_payloads();
        entries.extend(self.classifier_params.to_payloads());
        entries.extend(self.selector_params.to_payloads());
        entries.extend(lda_entries);
        Container::new(serde_json::to_value(&meta)?, entries).write_to(w)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let c = Container::read_from(r)?;
        let meta: CheckpointMeta = serde_json::from_value(c.meta)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if meta.kind != "checkpoint" || meta.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                meta.kind, meta.format_version
            )));
        }
        let (mut gen, mut clf, mut sel, mut lda) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (name, p) in c.entries {
            let bucket = if name.starts_with("emoclf.") {
                &mut clf
            } else if name.starts_with("selector.") {
                &mut sel
            } else if name.starts_with("lda.") {
                &mut lda
            } else {
                &mut gen
            };
            bucket.push((name, p));
        }
        let lda = LdaModel::from_parts(&meta.lda, &lda)?;
        let mut model = Model::new(
            meta.config,
            meta.vocab,
            meta.emotion_dictionary,
            meta.topic_dictionary,
            lda,
        )?;
        for (store, entries, steps) in [
            (&mut model.generator_params, gen, meta.step_counts.generator),
            (&mut model.classifier_params, clf, meta.step_counts.classifier),
            (&mut model.selector_params, sel, meta.step_counts.selector),
        ] {
            replace_params(store, entries)?;
            store.set_step_count(steps);
        }
        Ok(model)
    }
}

/// Overwrites every tensor of `store` with the loaded ones, requiring the
/// same names and shapes.
fn replace_params(store: &mut ParamStore, entries: Vec<(String, Payload)>) -> Result<()> {
    let loaded = ParamStore::from_payloads(entries)?;
    let want: HashSet<&str> = store.names().collect();
    let got: HashSet<&str> = loaded.names().collect();
    if want != got {
        let mut diff: Vec<&&str> = want.symmetric_difference(&got).collect();
        diff.sort();
        return Err(Error::Format(format!("checkpoint parameters differ from the model: {diff:?}")));
    }
    for (name, t) in loaded.iter() {
        store
            .set(name, t.clone())
            .map_err(|e| Error::Format(format!("{name}: {e}")))?;
    }
    Ok(())
}

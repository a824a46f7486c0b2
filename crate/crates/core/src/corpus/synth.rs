//! Deterministic template corpus for tests and demos.
//!
//! Every reply carries exactly one emotion keyword and one topic keyword.
//! Side tokens are fixed per keyword, the middle is fixed per keyword pair, and
//! each emotion keyword has a fixed reading direction, so the reply is a
//! function of the post's cue words.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dictionary::{
    load_dictionaries, Emotion, EmotionDictionary, TopicDictionary, DEFAULT_TOPICS,
};
use super::marking::ConversationPair;
use crate::error::{invalid, Result};

const OPENERS: [&str; 4] = ["well", "oh", "so", "hey"];
const CLOSERS: [&str; 4] = ["indeed", "really", "today", "!"];
/// Word types outside the keyword/cue blocks: openers, closers and at least four fillers.
const FIXED_TYPES: usize = 12;
/// Word types per "slot": 7 emotion + 10 topic keywords, each with a cue word.
const TYPES_PER_SLOT: usize = 2 * (Emotion::COUNT + DEFAULT_TOPICS);

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub pairs: Vec<ConversationPair>,
    pub emotion_source: Vec<(String, String)>,
    pub topic_source: Vec<(String, String)>,
    pub emotion_dictionary: EmotionDictionary,
    pub topic_dictionary: TopicDictionary,
}

/// Smallest `vocab_size` accepted by [`synth_corpus`].
pub const MIN_SYNTH_VOCAB: usize = FIXED_TYPES + TYPES_PER_SLOT;

pub fn cue_word(keyword: &str) -> String {
    format!("cue_{keyword}")
}

fn pick_run<R: Rng>(rng: &mut R, pool: &[String], max_len: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max_len);
    (0..n)
        .map(|_| pool[rng.gen_range(0..pool.len())].clone())
        .collect()
}

pub fn synth_corpus(seed: u64, n_pairs: usize, vocab_size: usize) -> Result<SynthCorpus> {
    if n_pairs == 0 {
        return invalid("n_pairs must be at least 1");
    }
    if vocab_size < MIN_SYNTH_VOCAB {
        return invalid(format!(
            "vocab_size {vocab_size} cannot host both dictionaries (need >= {MIN_SYNTH_VOCAB})"
        ));
    }
    let per = ((vocab_size - FIXED_TYPES) / TYPES_PER_SLOT).min(100);
    let n_fillers = vocab_size - 8 - per * TYPES_PER_SLOT;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let emotion_words: Vec<(String, Emotion)> = Emotion::ALL
        .iter()
        .flat_map(|&e| (0..per).map(move |i| (format!("{}_{i}", e.name().to_lowercase()), e)))
        .collect();
    let topic_words: Vec<(String, usize)> = (0..DEFAULT_TOPICS)
        .flat_map(|k| (0..per).map(move |i| (format!("topic{k}_{i}"), k)))
        .collect();
    let fillers: Vec<String> = (0..n_fillers).map(|i| format!("w{i}")).collect();
    let openers: Vec<String> = OPENERS.iter().map(|s| s.to_string()).collect();
    let closers: Vec<String> = CLOSERS.iter().map(|s| s.to_string()).collect();

    // even-indexed emotion words read topic-first
    let forward_emotions: Vec<usize> = (0..emotion_words.len()).step_by(2).collect();
    let backward_emotions: Vec<usize> = (1..emotion_words.len()).step_by(2).collect();

    let mut sides: HashMap<String, (Vec<String>, Vec<String>)> = HashMap::new();
    for w in emotion_words
        .iter()
        .map(|(w, _)| w)
        .chain(topic_words.iter().map(|(w, _)| w))
    {
        let open = pick_run(&mut rng, &openers, 2);
        let close = pick_run(&mut rng, &closers, 2);
        sides.insert(w.clone(), (open, close));
    }
    let mut middles: HashMap<(usize, usize), Vec<String>> = HashMap::new();

    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let forward = i % 2 == 0;
        let pool = if forward {
            &forward_emotions
        } else {
            &backward_emotions
        };
        let ei = pool[rng.gen_range(0..pool.len())];
        let ti = rng.gen_range(0..topic_words.len());
        let (et, tp) = (&emotion_words[ei].0, &topic_words[ti].0);
        let middle = middles
            .entry((ti, ei))
            .or_insert_with(|| pick_run(&mut rng, &fillers, 3))
            .clone();
        let (first, second) = if forward { (tp, et) } else { (et, tp) };
        let mut reply = sides[first].0.clone();
        reply.push(first.clone());
        reply.extend(middle);
        reply.push(second.clone());
        reply.extend(sides[second].1.iter().cloned());

        let mut post = vec![cue_word(tp), cue_word(et)];
        let extra = rng.gen_range(1..=3);
        post.extend((0..extra).map(|_| fillers[rng.gen_range(0..fillers.len())].clone()));
        post.shuffle(&mut rng);
        pairs.push(ConversationPair::new(post, reply)?);
    }

    let emotion_source: Vec<(String, String)> = emotion_words
        .iter()
        .map(|(w, e)| (w.clone(), e.name().to_string()))
        .collect();
    let topic_source: Vec<(String, String)> = topic_words
        .iter()
        .map(|(w, k)| (w.clone(), format!("t{k}")))
        .collect();
    let (emotion_dictionary, topic_dictionary) =
        load_dictionaries(&emotion_source, &topic_source, DEFAULT_TOPICS)?;
    Ok(SynthCorpus {
        pairs,
        emotion_source,
        topic_source,
        emotion_dictionary,
        topic_dictionary,
    })
}

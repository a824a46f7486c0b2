//! Tokenization, dictionaries, keyword marking, splitting and the synthetic corpus.

mod dictionary;
pub mod io;
mod marking;
mod split;
mod synth;
mod vocab;

pub use dictionary::{
    load_dictionaries, parse_topic_label, Emotion, EmotionDictionary, TopicDictionary,
    DEFAULT_TOPICS, WORDS_PER_TOPIC,
};
pub use marking::{
    mark_pair, reply_frequencies, tokenize, ConversationPair, Direction, MarkedPair,
};
pub use split::{filter_and_split, mark_all, CorpusSplit, RetentionStats, SplitManifest};
pub use synth::{cue_word, synth_corpus, SynthCorpus, MIN_SYNTH_VOCAB};
pub use vocab::{Vocab, EOM, EOS, PAD, UNK};

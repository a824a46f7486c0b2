use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dictionary::{EmotionDictionary, TopicDictionary};
use super::marking::{mark_pair, reply_frequencies, ConversationPair, MarkedPair};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub total: usize,
    pub retained: usize,
    pub fraction: f64,
}

/// Pair indices per split, as written to the split manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: Vec<MarkedPair>,
    pub val: Vec<MarkedPair>,
    pub test: Vec<MarkedPair>,
    pub manifest: SplitManifest,
    pub stats: RetentionStats,
}

/// Marks every pair and returns `(pair index, marked pair)` for the markable ones.
pub fn mark_all(
    pairs: &[ConversationPair],
    ed: &EmotionDictionary,
    td: &TopicDictionary,
) -> Vec<(usize, MarkedPair)> {
    let freq = reply_frequencies(pairs);
    pairs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| mark_pair(p, ed, td, &freq).map(|m| (i, m)))
        .collect()
}

/// Keeps markable pairs and samples validation and test sets without replacement.
pub fn filter_and_split(
    pairs: &[ConversationPair],
    ed: &EmotionDictionary,
    td: &TopicDictionary,
    seed: u64,
    val_size: usize,
    test_size: usize,
) -> Result<CorpusSplit> {
    let marked = mark_all(pairs, ed, td);
    let stats = RetentionStats {
        total: pairs.len(),
        retained: marked.len(),
        fraction: if pairs.is_empty() {
            0.0
        } else {
            marked.len() as f64 / pairs.len() as f64
        },
    };
    if val_size + test_size >= marked.len() {
        return invalid(format!(
            "{} markable pairs cannot host {val_size} validation and {test_size} test pairs",
            marked.len()
        ));
    }
    let mut order: Vec<usize> = (0..marked.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val_pos = order[..val_size].to_vec();
    let mut test_pos = order[val_size..val_size + test_size].to_vec();
    let mut train_pos = order[val_size + test_size..].to_vec();
    for v in [&mut val_pos, &mut test_pos, &mut train_pos] {
        v.sort_unstable();
    }
    let take = |pos: &[usize]| -> (Vec<usize>, Vec<MarkedPair>) {
        pos.iter()
            .map(|&p| (marked[p].0, marked[p].1.clone()))
            .unzip()
    };
    let (train_idx, train) = take(&train_pos);
    let (val_idx, val) = take(&val_pos);
    let (test_idx, test) = take(&test_pos);
    Ok(CorpusSplit {
        train,
        val,
        test,
        manifest: SplitManifest {
            train: train_idx,
            val: val_idx,
            test: test_idx,
        },
        stats,
    })
}

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dictionary::{Emotion, EmotionDictionary, TopicDictionary};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationPair {
    pub post: Vec<String>,
    pub reply: Vec<String>,
}

impl ConversationPair {
    pub fn new(post: Vec<String>, reply: Vec<String>) -> Result<Self> {
        if post.is_empty() || reply.is_empty() {
            return invalid("post and reply must both be non-empty");
        }
        Ok(ConversationPair { post, reply })
    }

    /// Splits both sides on whitespace.
    pub fn from_text(post: &str, reply: &str) -> Result<Self> {
        Self::new(tokenize(post), tokenize(reply))
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Topic keyword precedes the emotion keyword.
    Forward,
    Backward,
}

/// A pair annotated with its keywords and the five-segment layout of the reply.
///
/// Segments are laid out topic-first: `left, topic_keyword, middle,
/// emotion_keyword, right`. For backward pairs that layout describes the
/// reversed reply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedPair {
    pub pair: ConversationPair,
    pub emotion_keyword: String,
    /// Position in the original reply.
    pub emotion_index: usize,
    pub topic_keyword: String,
    /// Position in the original reply.
    pub topic_index: usize,
    pub left: Vec<String>,
    pub middle: Vec<String>,
    pub right: Vec<String>,
    pub direction: Direction,
    pub emotion: Emotion,
    pub topic_category: usize,
}

impl MarkedPair {
    /// The reply in topic-first layout.
    pub fn canonical(&self) -> Vec<String> {
        let mut out = self.left.clone();
        out.push(self.topic_keyword.clone());
        out.extend(self.middle.iter().cloned());
        out.push(self.emotion_keyword.clone());
        out.extend(self.right.iter().cloned());
        out
    }

    /// Reassembles the original reply from the segments.
    pub fn reassemble(&self) -> Vec<String> {
        let mut out = self.canonical();
        if self.direction == Direction::Backward {
            out.reverse();
        }
        out
    }
}

/// Token counts over all replies.
pub fn reply_frequencies<'a, I>(pairs: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = &'a ConversationPair>,
{
    let mut freq = HashMap::new();
    for p in pairs {
        for t in &p.reply {
            *freq.entry(t.clone()).or_insert(0) += 1;
        }
    }
    freq
}

/// Rarest candidate by corpus frequency, leftmost on ties.
fn rarest(cands: &[usize], reply: &[String], freq: &HashMap<String, u64>) -> Option<usize> {
    cands
        .iter()
        .copied()
        .min_by_key(|&i| (freq.get(&reply[i]).copied().unwrap_or(0), i))
}

/// Chooses keywords and segments for `pair`, or `None` if the reply lacks an
/// emotion keyword or a topic keyword.
pub fn mark_pair(
    pair: &ConversationPair,
    ed: &EmotionDictionary,
    td: &TopicDictionary,
    corpus_freq: &HashMap<String, u64>,
) -> Option<MarkedPair> {
    let reply = &pair.reply;
    let emo: Vec<usize> = (0..reply.len())
        .filter(|&i| ed.contains(&reply[i]))
        .collect();
    let top: Vec<usize> = (0..reply.len())
        .filter(|&i| td.contains(&reply[i]) && !ed.contains(&reply[i]))
        .collect();
    let ei = rarest(&emo, reply, corpus_freq)?;
    let ti = rarest(&top, reply, corpus_freq)?;

    let direction = if ti < ei {
        Direction::Forward
    } else {
        Direction::Backward
    };
    let n = reply.len();
    let (canon, t, e): (Vec<String>, usize, usize) = match direction {
        Direction::Forward => (reply.clone(), ti, ei),
        Direction::Backward => (
            reply.iter().rev().cloned().collect(),
            n - 1 - ti,
            n - 1 - ei,
        ),
    };
    Some(MarkedPair {
        pair: pair.clone(),
        emotion_keyword: reply[ei].clone(),
        emotion_index: ei,
        topic_keyword: reply[ti].clone(),
        topic_index: ti,
        left: canon[..t].to_vec(),
        middle: canon[t + 1..e].to_vec(),
        right: canon[e + 1..].to_vec(),
        direction,
        emotion: ed
            .category(&reply[ei])
            .expect("candidate is in the dictionary"),
        topic_category: td
            .category(&reply[ti])
            .expect("candidate is in the dictionary"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_dictionaries;
    use proptest::prelude::*;

    fn dicts(emo: &[(&str, &str)], top: &[(&str, &str)]) -> (EmotionDictionary, TopicDictionary) {
        let r = |v: &[(&str, &str)]| {
            v.iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect::<Vec<_>>()
        };
        load_dictionaries(&r(emo), &r(top), 10).unwrap()
    }

    #[test]
    fn tax_bill_example() {
        let (ed, td) = dicts(&[("furious", "Angry")], &[("tax", "t0")]);
        let pair = ConversationPair::from_text("hi", "the tax bill made me furious").unwrap();
        let m = mark_pair(&pair, &ed, &td, &HashMap::new()).unwrap();
        assert_eq!((m.topic_keyword.as_str(), m.topic_index), ("tax", 1));
        assert_eq!(
            (m.emotion_keyword.as_str(), m.emotion_index),
            ("furious", 5)
        );
        assert_eq!(m.direction, Direction::Forward);
        assert_eq!(m.middle, vec!["bill", "made", "me"]);
        assert_eq!(m.left, vec!["the"]);
        assert!(m.right.is_empty());
        assert_eq!(m.emotion, Emotion::Angry);
        assert_eq!(m.topic_category, 0);
    }

    #[test]
    fn rarer_topic_keyword_wins() {
        let (ed, td) = dicts(&[("sad", "Sad")], &[("tax", "t0"), ("levy", "t1")]);
        let pair = ConversationPair::from_text("x", "tax and levy make me sad").unwrap();
        let freq: HashMap<String, u64> = [("tax".to_string(), 500), ("levy".to_string(), 3)].into();
        let m = mark_pair(&pair, &ed, &td, &freq).unwrap();
        assert_eq!(m.topic_keyword, "levy");
        assert_eq!(m.topic_category, 1);
    }

    #[test]
    fn equal_frequency_picks_leftmost() {
        let (ed, td) = dicts(&[("sad", "Sad")], &[("tax", "t0"), ("levy", "t1")]);
        let pair = ConversationPair::from_text("x", "levy tax sad").unwrap();
        let m = mark_pair(&pair, &ed, &td, &HashMap::new()).unwrap();
        assert_eq!(m.topic_keyword, "levy");
    }

    #[test]
    fn emotion_first_is_backward_on_reversed_reply() {
        let (ed, td) = dicts(&[("love", "Like")], &[("cats", "t2")]);
        let pair = ConversationPair::from_text("x", "i love fluffy cats a lot").unwrap();
        let m = mark_pair(&pair, &ed, &td, &HashMap::new()).unwrap();
        assert_eq!(m.direction, Direction::Backward);
        // reversed reply: lot a cats fluffy love i
        assert_eq!(m.left, vec!["lot", "a"]);
        assert_eq!(m.middle, vec!["fluffy"]);
        assert_eq!(m.right, vec!["i"]);
        assert_eq!(m.reassemble(), pair.reply);
    }

    #[test]
    fn missing_keyword_type_is_unmarkable() {
        let (ed, td) = dicts(&[("sad", "Sad")], &[("tax", "t0")]);
        let only_topic = ConversationPair::from_text("x", "tax time").unwrap();
        let only_emotion = ConversationPair::from_text("x", "so sad").unwrap();
        assert!(mark_pair(&only_topic, &ed, &td, &HashMap::new()).is_none());
        assert!(mark_pair(&only_emotion, &ed, &td, &HashMap::new()).is_none());
    }

    proptest! {
        #[test]
        fn segments_reassemble_to_reply(
            words in prop::collection::vec(0usize..8, 2..14),
        ) {
            let (ed, td) = dicts(&[("e0", "Sad"), ("e1", "Happy")], &[("t0", "t0"), ("t1", "t4")]);
            let alphabet = ["e0", "e1", "t0", "t1", "a", "b", "c", "d"];
            let reply: Vec<String> = words.iter().map(|&i| alphabet[i].to_string()).collect();
            let pair = ConversationPair::new(vec!["p".into()], reply.clone()).unwrap();
            let freq = reply_frequencies([&pair]);
            if let Some(m) = mark_pair(&pair, &ed, &td, &freq) {
                prop_assert_eq!(m.reassemble(), reply);
                prop_assert_ne!(m.emotion_index, m.topic_index);
                prop_assert_eq!(m.direction == Direction::Forward, m.topic_index < m.emotion_index);
            }
        }
    }
}

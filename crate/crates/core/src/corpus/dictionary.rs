use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Number of topic categories in the reference setup.
pub const DEFAULT_TOPICS: usize = 10;
/// Maximum words kept per topic category.
pub const WORDS_PER_TOPIC: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emotion {
    Happy,
    Like,
    Surprise,
    Sad,
    Fear,
    Angry,
    Disgust,
}

impl Emotion {
    pub const COUNT: usize = 7;
    pub const ALL: [Emotion; 7] = [
        Emotion::Happy,
        Emotion::Like,
        Emotion::Surprise,
        Emotion::Sad,
        Emotion::Fear,
        Emotion::Angry,
        Emotion::Disgust,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Happy => "Happy",
            Emotion::Like => "Like",
            Emotion::Surprise => "Surprise",
            Emotion::Sad => "Sad",
            Emotion::Fear => "Fear",
            Emotion::Angry => "Angry",
            Emotion::Disgust => "Disgust",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Emotion::ALL
            .iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown emotion category {s:?}")))
    }
}

/// Parses a topic label written either as `t3` or `3`.
pub fn parse_topic_label(s: &str, num_topics: usize) -> Result<usize> {
    let s = s.trim();
    let digits = s
        .strip_prefix('t')
        .or_else(|| s.strip_prefix('T'))
        .unwrap_or(s);
    let k: usize = digits
        .parse()
        .map_err(|_| Error::Format(format!("unknown topic category {s:?}")))?;
    if k >= num_topics {
        return Err(Error::Format(format!(
            "topic category {s:?} outside 0..{num_topics}"
        )));
    }
    Ok(k)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionDictionary {
    words: BTreeMap<String, Emotion>,
}

impl EmotionDictionary {
    pub fn category(&self, word: &str) -> Option<Emotion> {
        self.words.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Emotion)> {
        self.words.iter().map(|(w, &e)| (w.as_str(), e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<Vec<String>>", into = "Vec<Vec<String>>")]
pub struct TopicDictionary {
    categories: Vec<Vec<String>>,
    reverse: HashMap<String, usize>,
}

impl From<Vec<Vec<String>>> for TopicDictionary {
    fn from(categories: Vec<Vec<String>>) -> Self {
        let reverse = categories
            .iter()
            .enumerate()
            .flat_map(|(k, ws)| ws.iter().map(move |w| (w.clone(), k)))
            .collect();
        TopicDictionary {
            categories,
            reverse,
        }
    }
}

impl From<TopicDictionary> for Vec<Vec<String>> {
    fn from(d: TopicDictionary) -> Self {
        d.categories
    }
}

impl TopicDictionary {
    pub fn new(num_topics: usize) -> Self {
        TopicDictionary::from(vec![Vec::new(); num_topics])
    }

    /// Appends `word` to category `k`; a word may belong to one category only.
    pub fn push(&mut self, k: usize, word: &str) -> Result<()> {
        if k >= self.categories.len() {
            return invalid(format!("topic category {k} out of range"));
        }
        if let Some(&prev) = self.reverse.get(word) {
            if prev == k {
                return Ok(());
            }
            return Err(Error::Format(format!(
                "topic word {word:?} listed under categories {prev} and {k}"
            )));
        }
        self.categories[k].push(word.to_string());
        self.reverse.insert(word.to_string(), k);
        Ok(())
    }

    pub fn category(&self, word: &str) -> Option<usize> {
        self.reverse.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.reverse.contains_key(word)
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn words(&self, k: usize) -> &[String] {
        &self.categories[k]
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    /// All words, category by category, in list order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.categories
            .iter()
            .enumerate()
            .flat_map(|(k, ws)| ws.iter().map(move |w| (w.as_str(), k)))
    }
}

/// Builds both dictionaries from `(word, category label)` rows.
///
/// Words present in both sources stay in the emotion dictionary only.
pub fn load_dictionaries(
    emotion_source: &[(String, String)],
    topic_source: &[(String, String)],
    num_topics: usize,
) -> Result<(EmotionDictionary, TopicDictionary)> {
    if emotion_source.is_empty() {
        return invalid("emotion dictionary source is empty");
    }
    if topic_source.is_empty() {
        return invalid("topic dictionary source is empty");
    }
    let mut ed = EmotionDictionary::default();
    for (word, label) in emotion_source {
        let cat: Emotion = label.parse()?;
        match ed.words.get(word) {
            Some(&prev) if prev != cat => {
                return Err(Error::Format(format!(
                    "emotion word {word:?} listed as both {prev} and {cat}"
                )))
            }
            _ => {
                ed.words.insert(word.clone(), cat);
            }
        }
    }
    let mut td = TopicDictionary::new(num_topics);
    for (word, label) in topic_source {
        let k = parse_topic_label(label, num_topics)?;
        if ed.contains(word) {
            continue;
        }
        td.push(k, word)?;
    }
    for k in 0..num_topics {
        if td.words(k).len() > WORDS_PER_TOPIC {
            return Err(Error::Format(format!(
                "topic category {k} has {} words, at most {WORDS_PER_TOPIC} allowed",
                td.words(k).len()
            )));
        }
    }
    Ok((ed, td))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn overlap_defaults_to_emotion() {
        let (ed, td) = load_dictionaries(
            &rows(&[("joy", "Happy")]),
            &rows(&[("joy", "t3"), ("tax", "t3")]),
            10,
        )
        .unwrap();
        assert_eq!(ed.category("joy"), Some(Emotion::Happy));
        assert_eq!(td.len(), 1);
        assert_eq!(td.words(3), &["tax".to_string()]);
        assert!(!td.contains("joy"));
    }

    #[test]
    fn disjoint_sources_pass_through() {
        let (ed, td) = load_dictionaries(
            &rows(&[("joy", "Happy"), ("dread", "fear")]),
            &rows(&[("tax", "t0"), ("bill", "9")]),
            10,
        )
        .unwrap();
        assert_eq!(ed.len(), 2);
        assert_eq!(td.len(), 2);
        assert_eq!(td.category("bill"), Some(9));
    }

    #[test]
    fn unknown_labels_are_format_errors() {
        let bad_emotion = load_dictionaries(&rows(&[("x", "Bored")]), &rows(&[("t", "t0")]), 10);
        assert!(matches!(bad_emotion, Err(Error::Format(_))));
        let bad_topic = load_dictionaries(&rows(&[("x", "Sad")]), &rows(&[("t", "t10")]), 10);
        assert!(matches!(bad_topic, Err(Error::Format(_))));
    }

    #[test]
    fn empty_sources_rejected() {
        assert!(load_dictionaries(&[], &rows(&[("t", "t0")]), 10).is_err());
        assert!(load_dictionaries(&rows(&[("x", "Sad")]), &[], 10).is_err());
    }

    #[test]
    fn reference_scale_emotion_dictionary_loads() {
        let emotion: Vec<(String, String)> = (0..27_466)
            .map(|i| (format!("emo{i}"), Emotion::ALL[i % 7].name().to_string()))
            .collect();
        let topic: Vec<(String, String)> = (0..1000)
            .map(|i| (format!("top{i}"), format!("t{}", i / 100)))
            .collect();
        let (ed, td) = load_dictionaries(&emotion, &topic, 10).unwrap();
        assert_eq!(ed.len(), 27_466);
        assert_eq!(td.len(), 1000);
        assert!((0..10).all(|k| td.words(k).len() == 100));
    }

    #[test]
    fn topic_category_overflow_rejected() {
        let topic: Vec<(String, String)> = (0..101)
            .map(|i| (format!("w{i}"), "t0".to_string()))
            .collect();
        assert!(load_dictionaries(&rows(&[("x", "Sad")]), &topic, 10).is_err());
    }
}

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const EOS: usize = 2;
/// End-of-middle: the middle decoder reached the other keyword.
pub const EOM: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<eos>", "<eom>"];

/// Token alphabet with the four reserved ids fixed at 0..=3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary ordered by descending frequency, ties broken lexically.
    pub fn build<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect::<Vec<_>>();
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn is_reserved(id: usize) -> bool {
        id <= EOM
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::build([vec!["b", "a", "b"].as_slice()]);
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(v.token(EOS), "<eos>");
        assert_eq!(v.token(EOM), "<eom>");
        assert_eq!(v.id("b"), 4);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn bijective_over_regular_tokens() {
        let v = Vocab::build([vec!["x", "y", "z", "x"].as_slice()]);
        for id in 4..v.len() {
            assert_eq!(v.id(v.token(id)), id);
        }
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::build([vec!["x", "y"].as_slice()]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&s).unwrap(), v);
    }
}

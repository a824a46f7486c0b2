//! LDA topic model trained by collapsed Gibbs sampling.
//!
//! The per-token conditional, with the token's own assignment removed, is
//! `p(z = k) ∝ (n_dk + α) (n_kw + β) / (n_k + V β)`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TopicDictionary;
use crate::error::{invalid, Error, Result};
use crate::numcore::container::{Container, Payload};

/// Fraction of the most frequent word types dropped as "high frequency".
pub const HIGH_FREQUENCY_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub topics: usize,
    /// Defaults to `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub infer_sweeps: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 10,
            alpha: None,
            beta: 0.01,
            iterations: 200,
            infer_sweeps: 20,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdaModel {
    topics: usize,
    alpha: f64,
    beta: f64,
    infer_sweeps: usize,
    seed: u64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    docs: Vec<Vec<u32>>,
    assignments: Vec<Vec<u32>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<u32>,
    topic_totals: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicInference {
    pub category: usize,
    pub distribution: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TopicExtraction {
    pub dictionary: TopicDictionary,
    /// Set when some topic has fewer than the requested number of words.
    pub short: bool,
}

/// Removes stopwords and the top [`HIGH_FREQUENCY_FRACTION`] of word types by frequency.
pub fn filter_documents(docs: &[Vec<String>], stopwords: &HashSet<String>) -> Vec<Vec<String>> {
    let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
    for d in docs {
        for t in d {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let high = high_frequency_set(freq.into_iter().collect());
    docs.iter()
        .map(|d| {
            d.iter()
                .filter(|t| !stopwords.contains(*t) && !high.contains(t.as_str()))
                .cloned()
                .collect()
        })
        .collect()
}

fn high_frequency_set<K: Ord + Clone>(mut counts: Vec<(K, u64)>) -> BTreeSet<K> {
    let n = (counts.len() as f64 * HIGH_FREQUENCY_FRACTION).floor() as usize;
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.into_iter().take(n).map(|(k, _)| k).collect()
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampler owning the model it updates.
pub struct GibbsSampler {
    model: LdaModel,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    /// Builds the vocabulary and draws uniform initial assignments.
    pub fn new(docs: &[Vec<String>], cfg: &LdaConfig) -> Result<Self> {
        if cfg.topics < 2 {
            return invalid("LDA needs at least 2 topics");
        }
        if !(cfg.beta > 0.0) || !(cfg.alpha() > 0.0) {
            return invalid("alpha and beta must be positive");
        }
        let types: BTreeSet<&str> = docs.iter().flatten().map(String::as_str).collect();
        if types.is_empty() {
            return invalid("empty vocabulary after filtering");
        }
        let vocab: Vec<String> = types.into_iter().map(str::to_string).collect();
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let k = cfg.topics;
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = LdaModel {
            topics: k,
            alpha: cfg.alpha(),
            beta: cfg.beta,
            infer_sweeps: cfg.infer_sweeps,
            seed: cfg.seed,
            index,
            vocab,
            docs: Vec::with_capacity(docs.len()),
            assignments: Vec::with_capacity(docs.len()),
            doc_topic: Vec::with_capacity(docs.len()),
            topic_word: vec![0; k * v],
            topic_totals: vec![0; k],
        };
        for d in docs {
            let ids: Vec<u32> = d.iter().map(|t| model.index[t]).collect();
            let mut counts = vec![0u32; k];
            let z: Vec<u32> = ids
                .iter()
                .map(|&w| {
                    let t = rng.gen_range(0..k);
                    counts[t] += 1;
                    model.topic_word[t * v + w as usize] += 1;
                    model.topic_totals[t] += 1;
                    t as u32
                })
                .collect();
            model.docs.push(ids);
            model.assignments.push(z);
            model.doc_topic.push(counts);
        }
        Ok(GibbsSampler { model, rng })
    }

    /// One pass over every token.
    pub fn sweep(&mut self) {
        let m = &mut self.model;
        let (k, v) = (m.topics, m.vocab.len());
        let vbeta = v as f64 * m.beta;
        let mut weights = vec![0.0; k];
        for d in 0..m.docs.len() {
            for i in 0..m.docs[d].len() {
                let w = m.docs[d][i] as usize;
                let old = m.assignments[d][i] as usize;
                m.doc_topic[d][old] -= 1;
                m.topic_word[old * v + w] -= 1;
                m.topic_totals[old] -= 1;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (m.doc_topic[d][t] as f64 + m.alpha)
                        * (m.topic_word[t * v + w] as f64 + m.beta)
                        / (m.topic_totals[t] as f64 + vbeta);
                }
                let new = sample_index(&mut self.rng, &weights);
                m.assignments[d][i] = new as u32;
                m.doc_topic[d][new] += 1;
                m.topic_word[new * v + w] += 1;
                m.topic_totals[new] += 1;
            }
        }
    }

    pub fn model(&self) -> &LdaModel {
        &self.model
    }

    pub fn into_model(self) -> LdaModel {
        self.model
    }
}

pub fn gibbs_train(docs: &[Vec<String>], cfg: &LdaConfig) -> Result<LdaModel> {
    let mut s = GibbsSampler::new(docs, cfg)?;
    for _ in 0..cfg.iterations {
        s.sweep();
    }
    Ok(s.into_model())
}

impl LdaModel {
    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn word_id(&self, w: &str) -> Option<u32> {
        self.index.get(w).copied()
    }

    pub fn topic_word_count(&self, k: usize, w: u32) -> u32 {
        self.topic_word[k * self.vocab.len() + w as usize]
    }

    pub fn topic_total(&self, k: usize) -> u32 {
        self.topic_totals[k]
    }

    pub fn doc_topic_counts(&self, d: usize) -> &[u32] {
        &self.doc_topic[d]
    }

    pub fn assignments(&self, d: usize) -> &[u32] {
        &self.assignments[d]
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc(&self, d: usize) -> &[u32] {
        &self.docs[d]
    }

    /// Checks the count marginals against each other and against the
    /// stored assignments.
    pub fn check_invariants(&self) -> bool {
        let v = self.vocab.len();
        let word_marginals = (0..self.topics).all(|k| {
            let s: u64 = self.topic_word[k * v..(k + 1) * v]
                .iter()
                .map(|&c| c as u64)
                .sum();
            s == self.topic_totals[k] as u64
        });
        let doc_marginals = self
            .doc_topic
            .iter()
            .zip(&self.docs)
            .all(|(c, d)| c.iter().map(|&x| x as usize).sum::<usize>() == d.len());
        let mut recount_tw = vec![0u32; self.topic_word.len()];
        let mut consistent = true;
        for ((d, z), counts) in self.docs.iter().zip(&self.assignments).zip(&self.doc_topic) {
            let mut local = vec![0u32; self.topics];
            for (&w, &t) in d.iter().zip(z) {
                local[t as usize] += 1;
                recount_tw[t as usize * v + w as usize] += 1;
            }
            consistent &= &local == counts;
        }
        if !self.docs.is_empty() {
            consistent &= recount_tw == self.topic_word;
        }
        word_marginals && doc_marginals && consistent
    }

    /// Normalized sampling conditional for token `i` of document `d`, with
    /// that token's current assignment excluded from the counts.
    pub fn conditional(&self, d: usize, i: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let w = self.docs[d][i] as usize;
        let cur = self.assignments[d][i] as usize;
        let vbeta = v as f64 * self.beta;
        let raw: Vec<f64> = (0..self.topics)
            .map(|k| {
                let own = if k == cur { 1.0 } else { 0.0 };
                (self.doc_topic[d][k] as f64 - own + self.alpha)
                    * (self.topic_word[k * v + w] as f64 - own + self.beta)
                    / (self.topic_totals[k] as f64 - own + vbeta)
            })
            .collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / z).collect()
    }

    /// Fold-in inference for an unseen post. Unknown tokens are ignored; a
    /// post with no known tokens gets the uniform distribution and category 0.
    pub fn infer_topic<S: AsRef<str>>(&self, post: &[S]) -> TopicInference {
        let k = self.topics;
        let ids: Vec<usize> = post
            .iter()
            .filter_map(|t| self.word_id(t.as_ref()))
            .map(|w| w as usize)
            .collect();
        if ids.is_empty() {
            return TopicInference {
                category: 0,
                distribution: vec![1.0 / k as f64; k],
            };
        }
        let v = self.vocab.len();
        let vbeta = v as f64 * self.beta;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut counts = vec![0u32; k];
        let mut z: Vec<usize> = ids
            .iter()
            .map(|_| {
                let t = rng.gen_range(0..k);
                counts[t] += 1;
                t
            })
            .collect();
        let mut weights = vec![0.0; k];
        for _ in 0..self.infer_sweeps {
            for (i, &w) in ids.iter().enumerate() {
                counts[z[i]] -= 1;
                for (t, wt) in weights.iter_mut().enumerate() {
                    *wt = (counts[t] as f64 + self.alpha)
                        * (self.topic_word[t * v + w] as f64 + self.beta)
                        / (self.topic_totals[t] as f64 + vbeta);
                }
                z[i] = sample_index(&mut rng, &weights);
                counts[z[i]] += 1;
            }
        }
        let denom = ids.len() as f64 + k as f64 * self.alpha;
        let distribution: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 + self.alpha) / denom)
            .collect();
        let category = crate::numcore::argmax(&distribution);
        TopicInference {
            category,
            distribution,
        }
    }

    /// Per topic, the `per_topic` highest-count words after dropping stopwords
    /// and the most frequent word types. Each word is listed under its
    /// highest-count topic only.
    pub fn extract_topic_dictionary(
        &self,
        stopwords: &HashSet<String>,
        per_topic: usize,
    ) -> TopicExtraction {
        let v = self.vocab.len();
        let freq: Vec<(u32, u64)> = (0..v as u32)
            .map(|w| {
                let f = (0..self.topics)
                    .map(|k| self.topic_word_count(k, w) as u64)
                    .sum();
                (w, f)
            })
            .collect();
        let high = high_frequency_set(freq.clone());
        let mut per: Vec<Vec<(u32, u32)>> = vec![Vec::new(); self.topics];
        for &(w, f) in &freq {
            if f == 0 || high.contains(&w) || stopwords.contains(&self.vocab[w as usize]) {
                continue;
            }
            let counts: Vec<u32> = (0..self.topics)
                .map(|k| self.topic_word_count(k, w))
                .collect();
            let best =
                crate::numcore::argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
            per[best].push((w, counts[best]));
        }
        let mut dictionary = TopicDictionary::new(self.topics);
        let mut short = false;
        for (k, words) in per.iter_mut().enumerate() {
            words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            words.truncate(per_topic);
            short |= words.len() < per_topic;
            for &(w, _) in words.iter() {
                dictionary
                    .push(k, &self.vocab[w as usize])
                    .expect("each word is assigned to one topic");
            }
        }
        TopicExtraction { dictionary, short }
    }

    pub(crate) fn to_parts(&self) -> (serde_json::Value, Vec<(String, Payload)>) {
        let meta = serde_json::json!({
            "topics": self.topics,
            "alpha": self.alpha,
            "beta": self.beta,
            "infer_sweeps": self.infer_sweeps,
            "seed": self.seed,
            "vocab": self.vocab,
        });
        let entries = vec![
            (
                "lda.topic_word".to_string(),
                Payload::I32 {
                    shape: vec![self.topics, self.vocab.len()],
                    data: self.topic_word.iter().map(|&c| c as i32).collect(),
                },
            ),
            (
                "lda.topic_totals".to_string(),
                Payload::I32 {
                    shape: vec![self.topics],
                    data: self.topic_totals.iter().map(|&c| c as i32).collect(),
                },
            ),
        ];
        (meta, entries)
    }

    pub(crate) fn from_parts(
        meta: &serde_json::Value,
        entries: &[(String, Payload)],
    ) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            topics: usize,
            alpha: f64,
            beta: f64,
            infer_sweeps: usize,
            seed: u64,
            vocab: Vec<String>,
        }
        let m: Meta = serde_json::from_value(meta.clone())?;
        let find = |name: &str| -> Result<&Vec<i32>> {
            entries
                .iter()
                .find_map(|(n, p)| match p {
                    Payload::I32 { data, .. } if n == name => Some(data),
                    _ => None,
                })
                .ok_or_else(|| Error::Format(format!("missing {name}")))
        };
        let to_counts = |d: &Vec<i32>| -> Result<Vec<u32>> {
            d.iter()
                .map(|&c| u32::try_from(c).map_err(|_| Error::Format("negative count".into())))
                .collect()
        };
        let topic_word = to_counts(find("lda.topic_word")?)?;
        let topic_totals = to_counts(find("lda.topic_totals")?)?;
        if topic_word.len() != m.topics * m.vocab.len() || topic_totals.len() != m.topics {
            return Err(Error::Format(
                "LDA count shapes disagree with header".into(),
            ));
        }
        let index = m
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(LdaModel {
            topics: m.topics,
            alpha: m.alpha,
            beta: m.beta,
            infer_sweeps: m.infer_sweeps,
            seed: m.seed,
            vocab: m.vocab,
            index,
            docs: Vec::new(),
            assignments: Vec::new(),
            doc_topic: Vec::new(),
            topic_word,
            topic_totals,
        })
    }

    /// Writes the inference state (topic-word counts and hyperparameters).
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let (mut meta, entries) = self.to_parts();
        meta["kind"] = serde_json::json!("lda");
        Container::new(meta, entries).write_to(w)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let c = Container::read_from(r)?;
        LdaModel::from_parts(&c.meta, &c.entries)
    }
}

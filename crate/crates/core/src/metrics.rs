//! Embedding-based similarity metrics and corpus-level distinct-n.
//!
//! Sentence-level functions return `None` when a sentence has no word in
//! the embedding table; such pairs are counted as skipped in reports.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{invalid, Error, Result};
use crate::numcore::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableSource {
    ModelEmbeddings,
    ExternalFile,
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    source: TableSource,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, source: TableSource) -> Self {
        EmbeddingTable {
            dim,
            source,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return invalid(format!("vector of length {} in a {}-dim table", v.len(), self.dim));
        }
        self.vectors.insert(word.into(), v);
        Ok(())
    }

    /// Rows of a `[vocab, dim]` embedding matrix, skipping reserved tokens.
    pub fn from_model<F: Real>(vocab: &Vocab, embed: &Tensor<F>) -> Result<Self> {
        let (rows, dim) = match embed.shape() {
            [r, d] => (*r, *d),
            s => return invalid(format!("embedding matrix has shape {s:?}")),
        };
        if rows != vocab.len() {
            return invalid("embedding rows do not match the vocabulary");
        }
        let mut t = EmbeddingTable::new(dim, TableSource::ModelEmbeddings);
        for (id, word) in vocab.tokens().iter().enumerate() {
            if !Vocab::is_reserved(id) {
                let row = embed.row(id).iter().map(|x| x.to_f64().unwrap_or(0.0)).collect();
                t.insert(word.clone(), row)?;
            }
        }
        Ok(t)
    }

    /// Parses `word v1 ... vD` lines; the first line fixes D.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("embedding line {}: {e}", n + 1)))?;
            if v.is_empty() {
                return Err(Error::Format(format!("embedding line {}: no values", n + 1)));
            }
            let t = table.get_or_insert_with(|| EmbeddingTable::new(v.len(), TableSource::ExternalFile));
            t.insert(word, v)
                .map_err(|_| Error::Format(format!("embedding line {}: wrong dimension", n + 1)))?;
        }
        table.ok_or_else(|| Error::Format("empty embedding file".into()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> TableSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// The word's vector, or a zero vector flagged as missing.
    pub fn lookup(&self, word: &str) -> (Vec<f64>, bool) {
        match self.get(word) {
            Some(v) => (v.to_vec(), false),
            None => (vec![0.0; self.dim], true),
        }
    }

    fn known<'a, S: AsRef<str>>(&'a self, sentence: &[S]) -> Vec<&'a [f64]> {
        sentence.iter().filter_map(|w| self.get(w.as_ref())).collect()
    }
}

/// Cosine similarity, 0 if either vector is zero, clamped to [-1, 1].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn mean_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vs {
        for (a, x) in m.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    m.iter_mut().for_each(|a| *a /= vs.len() as f64);
    m
}

fn extrema_vector(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            vs.iter().map(|v| v[d]).fold(0.0, |best: f64, x| {
                if x.abs() > best.abs() || (x.abs() == best.abs() && x > best) {
                    x
                } else {
                    best
                }
            })
        })
        .collect()
}

fn both_known<'a, S: AsRef<str>>(
    table: &'a EmbeddingTable,
    cand: &[S],
    reference: &[S],
) -> Option<(Vec<&'a [f64]>, Vec<&'a [f64]>)> {
    let (c, r) = (table.known(cand), table.known(reference));
    (!c.is_empty() && !r.is_empty()).then_some((c, r))
}

pub fn embedding_average<S: AsRef<str>>(cand: &[S], reference: &[S], table: &EmbeddingTable) -> Option<f64> {
    let (c, r) = both_known(table, cand, reference)?;
    Some(cosine(&mean_vector(&c, table.dim), &mean_vector(&r, table.dim)))
}

pub fn greedy_matching<S: AsRef<str>>(cand: &[S], reference: &[S], table: &EmbeddingTable) -> Option<f64> {
    let (c, r) = both_known(table, cand, reference)?;
    let one_way = |xs: &[&[f64]], ys: &[&[f64]]| {
        xs.iter()
            .map(|x| ys.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / xs.len() as f64
    };
    Some((one_way(&c, &r) + one_way(&r, &c)) / 2.0)
}

pub fn vector_extrema<S: AsRef<str>>(cand: &[S], reference: &[S], table: &EmbeddingTable) -> Option<f64> {
    let (c, r) = both_known(table, cand, reference)?;
    Some(cosine(&extrema_vector(&c, table.dim), &extrema_vector(&r, table.dim)))
}

/// Distinct n-grams over all replies divided by the total n-gram count, or
/// `None` if there are no n-grams.
pub fn distinct_n<S: AsRef<str>>(replies: &[Vec<S>], n: usize) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in replies {
        if r.len() < n {
            continue;
        }
        for w in r.windows(n) {
            seen.insert(w.iter().map(AsRef::as_ref).collect());
            total += 1;
        }
    }
    (total > 0).then(|| seen.len() as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub greedy_matching: Option<f64>,
    pub embedding_average: Option<f64>,
    pub vector_extrema: Option<f64>,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Averages the embedding metrics over scorable pairs and computes
/// distinct-n over all candidates.
pub fn score_corpus<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    table: &EmbeddingTable,
) -> Result<MetricReport> {
    if candidates.len() != references.len() {
        return invalid("candidate and reference counts differ");
    }
    if candidates.is_empty() {
        return invalid("nothing to evaluate");
    }
    let (mut g, mut a, mut e) = (0.0, 0.0, 0.0);
    let mut evaluated = 0;
    for (c, r) in candidates.iter().zip(references) {
        if let (Some(gm), Some(av), Some(ex)) = (
            greedy_matching(c, r, table),
            embedding_average(c, r, table),
            vector_extrema(c, r, table),
        ) {
            g += gm;
            a += av;
            e += ex;
            evaluated += 1;
        }
    }
    let mean = |s: f64| (evaluated > 0).then(|| s / evaluated as f64);
    Ok(MetricReport {
        greedy_matching: mean(g),
        embedding_average: mean(a),
        vector_extrema: mean(e),
        distinct_1: distinct_n(candidates, 1),
        distinct_2: distinct_n(candidates, 2),
        evaluated,
        skipped: candidates.len() - evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(rows[0].1.len(), TableSource::ExternalFile);
        for (w, v) in rows {
            t.insert(*w, v.to_vec()).unwrap();
        }
        t
    }

    fn s(x: &str) -> Vec<&str> {
        x.split_whitespace().collect()
    }

    #[test]
    fn distinct_worked_example() {
        let replies = vec![s("a b a"), s("b c")];
        assert_eq!(distinct_n(&replies, 1), Some(0.6));
        assert_eq!(distinct_n(&replies, 2), Some(1.0));
    }

    #[test]
    fn distinct_degenerate_cases() {
        let replies = vec![s("x"), s("x"), s("x"), s("x")];
        assert_eq!(distinct_n(&replies, 1), Some(0.25));
        assert_eq!(distinct_n(&replies, 2), None);
        let empty: Vec<Vec<&str>> = vec![];
        assert_eq!(distinct_n(&empty, 1), None);
    }

    #[test]
    fn identical_sentences_score_one() {
        let t = table(&[("a", &[1.0, 2.0]), ("b", &[-0.5, 0.3])]);
        let x = s("a b");
        for f in [embedding_average::<&str>, greedy_matching, vector_extrema] {
            assert!((f(&x, &x, &t).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_single_words_score_zero() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        for f in [embedding_average::<&str>, greedy_matching, vector_extrema] {
            assert!(f(&s("a"), &s("b"), &t).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_values() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[1.0, 1.0]), ("c", &[0.0, 1.0]), ("d", &[-2.0, 1.0])]);
        // means: [1, 0.5] and [0, 1] -> 0.5 / sqrt(1.25)
        let avg = embedding_average(&s("a b"), &s("c"), &t).unwrap();
        assert!((avg - 0.5 / 1.25f64.sqrt()).abs() < 1e-12);
        // a->c 0, b->c 1/sqrt2; c->best 1/sqrt2
        let r2 = 1.0 / 2f64.sqrt();
        let gm = greedy_matching(&s("a b"), &s("c"), &t).unwrap();
        assert!((gm - ((0.0 + r2) / 2.0 + r2) / 2.0).abs() < 1e-12);
        // extrema of a, d: [-2, 1]; of b: [1, 1]
        let ex = vector_extrema(&s("a d"), &s("b"), &t).unwrap();
        assert!((ex - (-1.0 / (5f64.sqrt() * 2f64.sqrt()))).abs() < 1e-12);
    }

    #[test]
    fn extrema_ties_prefer_positive() {
        let t = table(&[("p", &[1.0]), ("n", &[-1.0])]);
        assert_eq!(extrema_vector(&t.known(&s("n p")), 1), vec![1.0]);
        assert_eq!(extrema_vector(&t.known(&s("p n")), 1), vec![1.0]);
    }

    #[test]
    fn unknown_words_skip_and_zero_lookup() {
        let t = table(&[("a", &[1.0, 0.0])]);
        assert_eq!(embedding_average(&s("zz"), &s("a"), &t), None);
        assert_eq!(t.lookup("zz"), (vec![0.0, 0.0], true));
        assert_eq!(t.lookup("a"), (vec![1.0, 0.0], false));
        let rep = score_corpus(&[s("a"), s("zz")], &[s("a"), s("a")], &t).unwrap();
        assert_eq!((rep.evaluated, rep.skipped), (1, 1));
        assert_eq!(rep.embedding_average, Some(1.0));
    }

    #[test]
    fn reads_external_table() {
        let t = EmbeddingTable::read(&b"a 1 0\nb 0.5 -1\n"[..]).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.get("b"), Some(&[0.5, -1.0][..]));
        assert_eq!(t.source(), TableSource::ExternalFile);
        assert!(EmbeddingTable::read(&b"a 1 0\nb 1\n"[..]).is_err());
        assert!(EmbeddingTable::read(&b"a 1 x\n"[..]).is_err());
    }

    #[test]
    fn report_serializes_to_documented_fields() {
        let t = table(&[("a", &[1.0, 0.0])]);
        let rep = score_corpus(&[s("a a")], &[s("a")], &t).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        for k in ["greedy_matching", "embedding_average", "vector_extrema", "distinct_1", "distinct_2", "evaluated", "skipped"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(rep.distinct_1, Some(0.5));
    }
}

//! Plain-text corpus, dictionary and stopword files.
//!
//! Corpus: one pair per line, `post<TAB>reply`, tokens separated by spaces.
//! Dictionary: one `word<TAB>category` per line. Stopwords: one token per line.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use super::marking::{tokenize, ConversationPair};
use crate::error::{Error, Result};

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<ConversationPair>> {
    let mut pairs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (post, reply) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("corpus line {}: missing tab", n + 1)))?;
        let pair = ConversationPair::new(tokenize(post), tokenize(reply))
            .map_err(|_| Error::Format(format!("corpus line {}: empty post or reply", n + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_corpus<W: Write>(mut w: W, pairs: &[ConversationPair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}", p.post.join(" "), p.reply.join(" "))?;
    }
    Ok(())
}

pub fn read_table<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (word, cat) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("dictionary line {}: missing tab", n + 1)))?;
        rows.push((word.trim().to_string(), cat.trim().to_string()));
    }
    Ok(rows)
}

pub fn write_table<W: Write>(mut w: W, rows: &[(String, String)]) -> Result<()> {
    for (a, b) in rows {
        writeln!(w, "{a}\t{b}")?;
    }
    Ok(())
}

pub fn read_stopwords<R: BufRead>(r: R) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            out.insert(t.to_string());
        }
    }
    Ok(out)
}

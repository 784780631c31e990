//! Token-level translation through a probabilistic bilingual table.
//!
//! Every source token is replaced by its `k` most probable targets. The
//! translated stream is then featurized like any other token stream, so each
//! emitted target counts once regardless of its probability.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Candidate translations used per source token when none is configured.
pub const DEFAULT_TOP_K: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub target: String,
    pub prob: f64,
}

/// Descending probability, ties by ascending target.
fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then_with(|| a.target.cmp(&b.target))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TranslationTable {
    entries: BTreeMap<String, Vec<Candidate>>,
}

impl TranslationTable {
    /// Builds a table from `(source, target, prob)` triples.
    pub fn from_triples<S, T>(triples: impl IntoIterator<Item = (S, T, f64)>) -> Result<Self>
    where
        S: Into<String>,
        T: Into<String>,
    {
        let mut builder = TableBuilder::default();
        for (i, (s, t, p)) in triples.into_iter().enumerate() {
            builder.push(s.into(), t.into(), p, i + 1)?;
        }
        Ok(builder.finish())
    }

    /// Parses `source<TAB>target<TAB>prob` lines.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut builder = TableBuilder::default();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [source, target, prob] = fields[..] else {
                return Err(Error::parse(
                    lineno,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            };
            let prob: f64 = prob
                .trim()
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad probability {prob:?}: {e}")))?;
            builder.push(source.to_string(), target.to_string(), prob, lineno)?;
        }
        Ok(builder.finish())
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for (source, candidates) in &self.entries {
            for c in candidates {
                writeln!(w, "{source}\t{}\t{}", c.target, c.prob)
                    .map_err(|e| Error::io("<writer>", e))?;
            }
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }

    /// Candidates for `source`, most probable first.
    pub fn candidates(&self, source: &str) -> Option<&[Candidate]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Candidate])> {
        self.entries.iter().map(|(s, c)| (s.as_str(), c.as_slice()))
    }
}

#[derive(Default)]
struct TableBuilder {
    entries: BTreeMap<String, Vec<Candidate>>,
    pairs: BTreeSet<(String, String)>,
}

impl TableBuilder {
    fn push(&mut self, source: String, target: String, prob: f64, line: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidProbability { prob, line });
        }
        if source.is_empty() || target.is_empty() {
            return Err(Error::parse(line, "empty source or target token"));
        }
        if !self.pairs.insert((source.clone(), target.clone())) {
            return Err(Error::parse(
                line,
                format!("duplicate entry {source} -> {target}"),
            ));
        }
        self.entries
            .entry(source)
            .or_default()
            .push(Candidate { target, prob });
        Ok(())
    }

    fn finish(mut self) -> TranslationTable {
        for candidates in self.entries.values_mut() {
            candidates.sort_by(candidate_order);
        }
        TranslationTable {
            entries: self.entries,
        }
    }
}

pub fn load_table(path: impl AsRef<Path>) -> Result<TranslationTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    TranslationTable::from_reader(file)
}

/// What to do with tokens absent from the table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    #[default]
    Drop,
    Passthrough,
}

/// Replaces each token by its top-`k` translations, in input order.
///
/// `k` must be at least 1; pass `usize::MAX` to emit every candidate.
pub fn translate_tokens<S: AsRef<str>>(
    tokens: &[S],
    table: &TranslationTable,
    k: usize,
    oov: OovPolicy,
) -> Vec<String> {
    assert!(k >= 1, "translate_tokens needs k >= 1");
    let mut out = Vec::with_capacity(tokens.len() * k.min(DEFAULT_TOP_K));
    for token in tokens {
        let token = token.as_ref();
        match table.candidates(token) {
            Some(candidates) => {
                out.extend(candidates.iter().take(k).map(|c| c.target.clone()));
            }
            None if oov == OovPolicy::Passthrough => out.push(token.to_string()),
            None => {}
        }
    }
    out
}

/// Adds stream `to` to every document by translating stream `from`.
pub fn translate_corpus(
    corpus: &mut Corpus,
    table: &TranslationTable,
    from: &str,
    to: &str,
    k: usize,
    oov: OovPolicy,
) {
    for id in corpus.doc_ids() {
        let translated = translate_tokens(corpus.get(&id).unwrap().tokens(from), table, k, oov);
        corpus.set_stream(&id, to, translated);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(tokens: &[String]) -> Vec<&str> {
        tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn loads_and_sorts() {
        let table = TranslationTable::from_reader(
            "mai\tno\t0.3\nmai\tnot\t0.5\nmai\tnever\t0.2\n".as_bytes(),
        )
        .unwrap();
        let got: Vec<_> = table
            .candidates("mai")
            .unwrap()
            .iter()
            .map(|c| (c.target.as_str(), c.prob))
            .collect();
        assert_eq!(got, [("not", 0.5), ("no", 0.3), ("never", 0.2)]);
    }

    #[test]
    fn rejects_probability_above_one() {
        let err = TranslationTable::from_reader("a\tb\t0.5\na\tc\t1.5\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::InvalidProbability { line: 2, .. }));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(TranslationTable::from_reader("a\tb\n".as_bytes()).is_err());
        assert!(TranslationTable::from_reader("a\tb\tx\n".as_bytes()).is_err());
        assert!(TranslationTable::from_reader("a\tb\t0.1\na\tb\t0.2\n".as_bytes()).is_err());
    }

    #[test]
    fn equal_probabilities_sort_lexicographically() {
        let table =
            TranslationTable::from_triples([("x", "zeta", 0.3), ("x", "alpha", 0.3)]).unwrap();
        let order: Vec<_> = table.candidates("x").unwrap().iter().map(|c| &c.target).collect();
        assert_eq!(order, ["alpha", "zeta"]);
    }

    #[test]
    fn top_four_of_five() {
        let table = TranslationTable::from_triples([
            ("w", "e", 0.05),
            ("w", "a", 0.4),
            ("w", "b", 0.25),
            ("w", "c", 0.2),
            ("w", "d", 0.1),
        ])
        .unwrap();
        let out = translate_tokens(&["w"], &table, DEFAULT_TOP_K, OovPolicy::Drop);
        assert_eq!(targets(&out), ["a", "b", "c", "d"]);
    }

    #[test]
    fn fewer_candidates_than_k() {
        let table = TranslationTable::from_triples([("w", "a", 0.6), ("w", "b", 0.4)]).unwrap();
        let out = translate_tokens(&["w"], &table, 4, OovPolicy::Drop);
        assert_eq!(targets(&out), ["a", "b"]);
    }

    #[test]
    fn oov_modes() {
        let table = TranslationTable::from_triples([("w", "a", 1.0)]).unwrap();
        let tokens = ["q", "w", "r"];
        assert_eq!(
            targets(&translate_tokens(&tokens, &table, 4, OovPolicy::Drop)),
            ["a"]
        );
        assert_eq!(
            targets(&translate_tokens(&tokens, &table, 4, OovPolicy::Passthrough)),
            ["q", "a", "r"]
        );
    }

    #[test]
    fn unbounded_k_concatenates_full_lists() {
        let table = TranslationTable::from_triples([
            ("u", "a", 0.5),
            ("u", "b", 0.5),
            ("v", "c", 0.9),
            ("v", "d", 0.05),
            ("v", "e", 0.05),
        ])
        .unwrap();
        let out = translate_tokens(&["v", "u", "v"], &table, usize::MAX, OovPolicy::Drop);
        assert_eq!(targets(&out), ["c", "d", "e", "a", "b", "c", "d", "e"]);
    }

    #[test]
    fn save_and_reload_is_identity() {
        let table = TranslationTable::from_triples([
            ("u", "a", 0.125),
            ("u", "b", 0.7),
            ("v", "c", 1.0 / 3.0),
        ])
        .unwrap();
        let mut buf = Vec::new();
        table.write_to(&mut buf).unwrap();
        assert_eq!(TranslationTable::from_reader(buf.as_slice()).unwrap(), table);
    }
}

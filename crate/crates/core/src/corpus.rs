//! Documents, tokenization streams, SF-type labels and cross-validation folds.
//!
//! Documents and labels are stored as JSON Lines. The label file is an
//! append-only log: replaying it front to back yields the current label of
//! every document, with later records superseding earlier ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_INVENTORY: &str = include_str!("../data/sf_types.json");

/// Ordered set of SF type identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct SfTypeInventory {
    types: Vec<String>,
}

impl SfTypeInventory {
    pub fn new(types: Vec<String>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InvalidInventory("no types".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &types {
            if t.is_empty() {
                return Err(Error::InvalidInventory("empty type identifier".into()));
            }
            if !seen.insert(t.as_str()) {
                return Err(Error::InvalidInventory(format!("duplicate type {t}")));
            }
        }
        Ok(SfTypeInventory { types })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn contains(&self, sf_type: &str) -> bool {
        self.types.iter().any(|t| t == sf_type)
    }

    pub fn position(&self, sf_type: &str) -> Option<usize> {
        self.types.iter().position(|t| t == sf_type)
    }
}

impl Default for SfTypeInventory {
    /// The eleven built-in situation types.
    fn default() -> Self {
        serde_json::from_str(DEFAULT_INVENTORY).expect("built-in inventory is valid")
    }
}

impl TryFrom<Vec<String>> for SfTypeInventory {
    type Error = Error;

    fn try_from(types: Vec<String>) -> Result<Self> {
        SfTypeInventory::new(types)
    }
}

impl From<SfTypeInventory> for Vec<String> {
    fn from(inv: SfTypeInventory) -> Self {
        inv.types
    }
}

/// A speech document: one token sequence per tokenization stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_id: Option<String>,
    #[serde(default)]
    pub streams: BTreeMap<String, Vec<String>>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            story_id: None,
            streams: BTreeMap::new(),
        }
    }

    pub fn with_stream<S: Into<String>>(
        mut self,
        stream_id: impl Into<String>,
        tokens: impl IntoIterator<Item = S>,
    ) -> Self {
        self.streams
            .insert(stream_id.into(), tokens.into_iter().map(Into::into).collect());
        self
    }

    /// Tokens of a stream; a missing stream reads as empty.
    pub fn tokens(&self, stream_id: &str) -> &[String] {
        self.streams.get(stream_id).map_or(&[], Vec::as_slice)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("empty doc_id".into());
        }
        for (stream, tokens) in &self.streams {
            if tokens.iter().any(String::is_empty) {
                return Err(format!("empty token in stream {stream} of {}", self.doc_id));
            }
        }
        Ok(())
    }
}

/// An ordered collection of documents with unique IDs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if index.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateDoc(doc.doc_id.clone()));
            }
        }
        Ok(Corpus { docs, index })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }

    /// Sets (or replaces) a stream on one document.
    pub fn set_stream(&mut self, doc_id: &str, stream_id: &str, tokens: Vec<String>) -> bool {
        match self.index.get(doc_id) {
            Some(&i) => {
                self.docs[i].streams.insert(stream_id.to_string(), tokens);
                true
            }
            None => false,
        }
    }

    /// Sub-corpus of the given documents, in this corpus' order.
    pub fn subset(&self, keep: impl Fn(&Document) -> bool) -> Corpus {
        let docs: Vec<_> = self.docs.iter().filter(|d| keep(d)).cloned().collect();
        Corpus::new(docs).expect("subset of a valid corpus is valid")
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut docs = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e))?;
            doc.validate().map_err(|m| Error::parse(lineno, m))?;
            if !seen.insert(doc.doc_id.clone()) {
                return Err(Error::DuplicateDoc(doc.doc_id));
            }
            docs.push(doc);
        }
        Corpus::new(docs)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for doc in &self.docs {
            serde_json::to_writer(&mut w, doc)?;
            w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }
}

/// Reads a JSONL documents file.
pub fn load_documents(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_reader(file)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    #[default]
    Human,
    Oracle,
    Imported,
}

/// The SF types present in one document. An empty set is an explicit
/// non-relevant judgment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub doc_id: String,
    pub types: BTreeSet<String>,
    #[serde(default)]
    pub source: LabelSource,
}

impl LabelRecord {
    pub fn new<S: Into<String>>(
        doc_id: impl Into<String>,
        types: impl IntoIterator<Item = S>,
        source: LabelSource,
    ) -> Self {
        LabelRecord {
            doc_id: doc_id.into(),
            types: types.into_iter().map(Into::into).collect(),
            source,
        }
    }

    pub fn is_relevant(&self) -> bool {
        !self.types.is_empty()
    }

    /// First type not present in `inventory`, if any.
    pub fn unknown_type<'a>(&'a self, inventory: &SfTypeInventory) -> Option<&'a str> {
        self.types
            .iter()
            .find(|t| !inventory.contains(t))
            .map(String::as_str)
    }
}

/// Current label per document, keyed by doc_id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelStore {
    records: BTreeMap<String, LabelRecord>,
}

impl LabelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a record; a later record for the same doc supersedes.
    pub fn insert(&mut self, record: LabelRecord) {
        self.records.insert(record.doc_id.clone(), record);
    }

    pub fn get(&self, doc_id: &str) -> Option<&LabelRecord> {
        self.records.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.records.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in doc_id order.
    pub fn iter(&self) -> impl Iterator<Item = &LabelRecord> {
        self.records.values()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    /// Number of records containing `sf_type`.
    pub fn positives(&self, sf_type: &str) -> usize {
        self.records
            .values()
            .filter(|r| r.types.contains(sf_type))
            .count()
    }

    /// Records restricted to the given documents.
    pub fn restrict<'a>(&self, doc_ids: impl IntoIterator<Item = &'a str>) -> LabelStore {
        let records = doc_ids
            .into_iter()
            .filter_map(|id| self.records.get(id))
            .map(|r| (r.doc_id.clone(), r.clone()))
            .collect();
        LabelStore { records }
    }

    /// Replays a JSONL label log.
    pub fn from_reader(reader: impl Read, inventory: &SfTypeInventory) -> Result<Self> {
        let mut store = LabelStore::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = parse_label_line(&line, lineno, inventory)?;
            store.insert(record);
        }
        Ok(store)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for record in self.records.values() {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }
}

impl FromIterator<LabelRecord> for LabelStore {
    fn from_iter<I: IntoIterator<Item = LabelRecord>>(iter: I) -> Self {
        let mut store = LabelStore::new();
        for r in iter {
            store.insert(r);
        }
        store
    }
}

/// Parses and validates one label-log line.
pub fn parse_label_line(
    line: &str,
    lineno: usize,
    inventory: &SfTypeInventory,
) -> Result<LabelRecord> {
    let record: LabelRecord = serde_json::from_str(line).map_err(|e| Error::parse(lineno, e))?;
    if record.doc_id.is_empty() {
        return Err(Error::parse(lineno, "empty doc_id"));
    }
    if let Some(t) = record.unknown_type(inventory) {
        return Err(Error::UnknownType {
            sf_type: t.to_string(),
            line: lineno,
        });
    }
    Ok(record)
}

/// Replays a JSONL label log from disk.
pub fn load_labels(path: impl AsRef<Path>, inventory: &SfTypeInventory) -> Result<LabelStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    LabelStore::from_reader(file, inventory)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMode {
    /// Balanced partition of individual documents.
    #[default]
    Document,
    /// Documents sharing a story_id always land in the same fold.
    Story,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub mode: FoldMode,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, doc_id: &str) -> Option<usize> {
        self.assignment.get(doc_id).copied()
    }

    /// Documents in `fold`, in doc_id order.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Deterministically partitions the corpus into `k` folds.
pub fn split_folds(corpus: &Corpus, k: usize, seed: u64, mode: FoldMode) -> Result<FoldAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    match mode {
        FoldMode::Document => {
            if k == 0 || k > corpus.len() {
                return Err(Error::FoldCount {
                    k,
                    population: corpus.len(),
                });
            }
            let mut ids: Vec<&str> = corpus.docs().iter().map(|d| d.doc_id.as_str()).collect();
            ids.shuffle(&mut rng);
            for (i, id) in ids.into_iter().enumerate() {
                assignment.insert(id.to_string(), i % k);
            }
        }
        FoldMode::Story => {
            // Docs without a story_id form singleton stories.
            let mut stories: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for doc in corpus.docs() {
                let key = doc.story_id.as_deref().unwrap_or(&doc.doc_id);
                stories.entry(key).or_default().push(&doc.doc_id);
            }
            if k == 0 || k > stories.len() {
                return Err(Error::FoldCount {
                    k,
                    population: stories.len(),
                });
            }
            let mut groups: Vec<Vec<&str>> = stories.into_values().collect();
            groups.shuffle(&mut rng);
            let mut sizes = vec![0usize; k];
            for group in groups {
                let fold = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
                sizes[fold] += group.len();
                for id in group {
                    assignment.insert(id.to_string(), fold);
                }
            }
        }
    }
    Ok(FoldAssignment {
        k,
        seed,
        mode,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_of(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| Document::new(format!("d{i}")).with_stream("asr", ["a"]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_inventory_has_eleven_types() {
        let inv = SfTypeInventory::default();
        assert_eq!(inv.len(), 11);
    }

    #[test]
    fn inventory_rejects_duplicates_and_empty() {
        assert!(SfTypeInventory::new(vec!["a".into(), "a".into()]).is_err());
        assert!(SfTypeInventory::new(vec!["".into()]).is_err());
        assert!(SfTypeInventory::new(vec![]).is_err());
    }

    #[test]
    fn loads_two_documents() {
        let text = "{\"doc_id\":\"d1\",\"streams\":{\"asr\":[\"a\",\"b\"]}}\n\
                    {\"doc_id\":\"d2\",\"story_id\":\"s\",\"streams\":{}}\n";
        let corpus = Corpus::from_reader(text.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.docs()[0].doc_id, "d1");
        assert_eq!(corpus.get("d2").unwrap().story_id.as_deref(), Some("s"));
        assert!(corpus.get("d2").unwrap().tokens("asr").is_empty());
    }

    #[test]
    fn duplicate_doc_id_is_named() {
        let text = "{\"doc_id\":\"d1\",\"streams\":{}}\n{\"doc_id\":\"d1\",\"streams\":{}}\n";
        let err = Corpus::from_reader(text.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "duplicate doc_id d1");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"doc_id\":\"d1\",\"streams\":{}}\n{not json\n";
        match Corpus::from_reader(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_token_rejected() {
        let text = "{\"doc_id\":\"d1\",\"streams\":{\"asr\":[\"\"]}}\n";
        assert!(Corpus::from_reader(text.as_bytes()).is_err());
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let corpus = Corpus::from_reader("".as_bytes()).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn labels_last_write_wins() {
        let inv = SfTypeInventory::new(vec!["A".into(), "B".into()]).unwrap();
        let text = "{\"doc_id\":\"d1\",\"types\":[\"A\"],\"source\":\"human\"}\n\
                    {\"doc_id\":\"d1\",\"types\":[\"A\",\"B\"],\"source\":\"human\"}\n";
        let store = LabelStore::from_reader(text.as_bytes(), &inv).unwrap();
        assert_eq!(store.len(), 1);
        let types: Vec<_> = store.get("d1").unwrap().types.iter().cloned().collect();
        assert_eq!(types, ["A", "B"]);
    }

    #[test]
    fn unknown_label_type_rejected_with_line() {
        let inv = SfTypeInventory::new(vec!["A".into()]).unwrap();
        let text = "{\"doc_id\":\"d0\",\"types\":[],\"source\":\"human\"}\n\
                    {\"doc_id\":\"d1\",\"types\":[\"bogus\"],\"source\":\"human\"}\n";
        match LabelStore::from_reader(text.as_bytes(), &inv).unwrap_err() {
            Error::UnknownType { sf_type, line } => {
                assert_eq!(sf_type, "bogus");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_types_is_labeled_non_relevant() {
        let inv = SfTypeInventory::default();
        let text = "{\"doc_id\":\"d1\",\"types\":[],\"source\":\"human\"}\n";
        let store = LabelStore::from_reader(text.as_bytes(), &inv).unwrap();
        assert!(store.contains("d1"));
        assert!(!store.get("d1").unwrap().is_relevant());
        assert!(!store.contains("d2"));
    }

    #[test]
    fn ten_docs_ten_folds() {
        let folds = split_folds(&corpus_of(10), 10, 3, FoldMode::Document).unwrap();
        assert_eq!(folds.fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn twenty_three_docs_ten_folds() {
        let folds = split_folds(&corpus_of(23), 10, 3, FoldMode::Document).unwrap();
        let mut sizes = folds.fold_sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        // balanced partition: 23 = 3*3 + 7*2
        assert_eq!(sizes, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn folds_deterministic_and_seed_sensitive() {
        let c = corpus_of(40);
        let a = split_folds(&c, 5, 11, FoldMode::Document).unwrap();
        let b = split_folds(&c, 5, 11, FoldMode::Document).unwrap();
        let other = split_folds(&c, 5, 12, FoldMode::Document).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.assignment, other.assignment);
    }

    #[test]
    fn too_many_folds_is_error() {
        assert!(matches!(
            split_folds(&corpus_of(3), 4, 0, FoldMode::Document),
            Err(Error::FoldCount { k: 4, population: 3 })
        ));
    }

    #[test]
    fn story_mode_keeps_stories_together() {
        let docs = (0..30)
            .map(|i| {
                let mut d = Document::new(format!("d{i}"));
                d.story_id = Some(format!("s{}", i / 3));
                d
            })
            .collect();
        let corpus = Corpus::new(docs).unwrap();
        let folds = split_folds(&corpus, 4, 9, FoldMode::Story).unwrap();
        for doc in corpus.docs() {
            let sibling = format!("d{}", (doc.doc_id[1..].parse::<usize>().unwrap() / 3) * 3);
            assert_eq!(folds.fold_of(&doc.doc_id), folds.fold_of(&sibling));
        }
        assert!(folds.fold_sizes().iter().all(|&s| s > 0));
        assert!(split_folds(&corpus, 11, 9, FoldMode::Story).is_err());
    }
}

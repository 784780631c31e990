//! Seeded synthetic corpora with planted topic words and known labels.
//!
//! Every document draws a type set by independent coin flips, then a latent
//! sequence of word indices from a mixture of a Zipfian background and the
//! topic distributions of its types. Each configured stream renders the
//! latent sequence with its own token prefix and substitution noise, which
//! stands in for tokenizers of differing quality. An optional bilingual
//! table maps one stream's vocabulary onto the English (`w`-prefixed)
//! vocabulary.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, LabelRecord, LabelSource, LabelStore, SfTypeInventory};
use crate::error::{Error, Result};
use crate::translate::TranslationTable;

/// Prefix of English tokens (`w00042`).
pub const ENGLISH_PREFIX: &str = "w";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthStream {
    pub stream_id: String,
    /// Token prefix; streams sharing a prefix share a vocabulary.
    pub prefix: String,
    /// Probability that a latent token is replaced by a uniform random word.
    #[serde(default)]
    pub substitution: f64,
}

impl SynthStream {
    pub fn new(stream_id: &str, prefix: &str, substitution: f64) -> Self {
        SynthStream {
            stream_id: stream_id.into(),
            prefix: prefix.into(),
            substitution,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTranslation {
    /// Stream whose vocabulary the table translates into English.
    pub source_stream: String,
    /// Candidates listed per source word.
    pub candidates: usize,
    /// Probability of the correct English word; the rest is spread over
    /// random distractors.
    pub correct_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_types: usize,
    pub vocab_size: usize,
    pub docs: usize,
    /// Inclusive token-count range per document.
    pub tokens_per_doc: (usize, usize),
    pub type_prevalence: Vec<f64>,
    /// Dirichlet concentration of each type's word distribution.
    pub topic_word_concentration: f64,
    /// Support size of each type's word distribution.
    pub topic_words_per_type: usize,
    /// Fraction of a relevant document's tokens drawn from the background.
    pub background_mix: f64,
    pub seed: u64,
    pub streams: Vec<SynthStream>,
    #[serde(default)]
    pub translation: Option<SynthTranslation>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_types: 11,
            vocab_size: 2000,
            docs: 2000,
            tokens_per_doc: (40, 120),
            type_prevalence: vec![0.15; 11],
            topic_word_concentration: 0.5,
            topic_words_per_type: 20,
            background_mix: 0.5,
            seed: 0,
            streams: vec![SynthStream::new("eng", ENGLISH_PREFIX, 0.0)],
            translation: None,
        }
    }
}

impl SynthConfig {
    /// Sets every type to the same prevalence.
    pub fn with_uniform_prevalence(mut self, p: f64) -> Self {
        self.type_prevalence = vec![p; self.num_types];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_types == 0 || self.vocab_size == 0 {
            return bad("num_types and vocab_size must be positive".into());
        }
        if self.type_prevalence.len() != self.num_types {
            return bad(format!(
                "{} prevalences for {} types",
                self.type_prevalence.len(),
                self.num_types
            ));
        }
        if self.type_prevalence.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("prevalence outside [0, 1]".into());
        }
        let (lo, hi) = self.tokens_per_doc;
        if lo > hi {
            return bad("tokens_per_doc range is empty".into());
        }
        if !(self.topic_word_concentration > 0.0 && self.topic_word_concentration.is_finite()) {
            return bad("topic_word_concentration must be > 0".into());
        }
        if self.topic_words_per_type == 0 || self.topic_words_per_type > self.vocab_size {
            return bad("topic_words_per_type must be in 1..=vocab_size".into());
        }
        if !(0.0..=1.0).contains(&self.background_mix) {
            return bad("background_mix outside [0, 1]".into());
        }
        if self.streams.is_empty() {
            return bad("no streams".into());
        }
        for s in &self.streams {
            if !(0.0..=1.0).contains(&s.substitution) || s.prefix.is_empty() {
                return bad(format!("bad stream {}", s.stream_id));
            }
        }
        if let Some(t) = &self.translation {
            if !self.streams.iter().any(|s| s.stream_id == t.source_stream) {
                return bad(format!("translation source {} is not a stream", t.source_stream));
            }
            if t.candidates == 0 || !(0.0..=1.0).contains(&t.correct_prob) {
                return bad("bad translation settings".into());
            }
        }
        Ok(())
    }

    pub fn inventory(&self) -> SfTypeInventory {
        let default = SfTypeInventory::default();
        if self.num_types == default.len() {
            default
        } else {
            SfTypeInventory::new((0..self.num_types).map(|t| format!("type{t:02}")).collect())
                .expect("generated identifiers are unique")
        }
    }
}

pub struct SynthOutput {
    pub inventory: SfTypeInventory,
    pub corpus: Corpus,
    pub labels: LabelStore,
    pub table: Option<TranslationTable>,
}

impl SynthOutput {
    /// Writes `docs.jsonl`, `labels.jsonl`, `sf_types.json` and, when
    /// present, `table.tsv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.save(dir.join("docs.jsonl"))?;
        self.labels.save(dir.join("labels.jsonl"))?;
        let inv = dir.join("sf_types.json");
        std::fs::write(&inv, serde_json::to_string(&self.inventory)?).map_err(|e| Error::io(&inv, e))?;
        if let Some(table) = &self.table {
            table.save(dir.join("table.tsv"))?;
        }
        Ok(())
    }
}

fn token(prefix: &str, index: usize) -> String {
    format!("{prefix}{index:05}")
}

/// Dirichlet sample with all-equal concentration `alpha`, computed in log
/// space so that tiny `alpha` does not underflow.
fn dirichlet(rng: &mut impl Rng, alpha: f64, len: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha + 1.0, 1.0).expect("valid gamma parameters");
    let logs: Vec<f64> = (0..len)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Generates a corpus, its oracle labels and optionally a translation table.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inventory = config.inventory();
    let v = config.vocab_size;

    let mut perm: Vec<usize> = (0..v).collect();
    perm.shuffle(&mut rng);
    let k = config.topic_words_per_type;
    let topics: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..config.num_types)
        .map(|t| {
            let support: Vec<usize> = (0..k).map(|j| perm[(t * k + j) % v]).collect();
            let probs = dirichlet(&mut rng, config.topic_word_concentration, k);
            (support, WeightedIndex::new(probs).expect("dirichlet weights are valid"))
        })
        .collect();

    let mut background_order: Vec<usize> = (0..v).collect();
    background_order.shuffle(&mut rng);
    let background =
        WeightedIndex::new((1..=v).map(|r| 1.0 / r as f64)).expect("zipf weights are valid");

    let mut docs = Vec::with_capacity(config.docs);
    let mut labels = LabelStore::new();
    let (lo, hi) = config.tokens_per_doc;
    for d in 0..config.docs {
        let types: Vec<usize> = (0..config.num_types)
            .filter(|&t| rng.random_bool(config.type_prevalence[t]))
            .collect();
        let len = rng.random_range(lo..=hi);
        let latent: Vec<usize> = (0..len)
            .map(|_| {
                if types.is_empty() || rng.random_bool(config.background_mix) {
                    background_order[background.sample(&mut rng)]
                } else {
                    let (support, dist) = &topics[*types.choose(&mut rng).unwrap()];
                    support[dist.sample(&mut rng)]
                }
            })
            .collect();

        let doc_id = format!("doc{d:05}");
        let mut doc = Document::new(doc_id.clone());
        for stream in &config.streams {
            let tokens = latent
                .iter()
                .map(|&w| {
                    let w = if stream.substitution > 0.0 && rng.random_bool(stream.substitution) {
                        rng.random_range(0..v)
                    } else {
                        w
                    };
                    token(&stream.prefix, w)
                })
                .collect();
            doc.streams.insert(stream.stream_id.clone(), tokens);
        }
        docs.push(doc);
        labels.insert(LabelRecord::new(
            doc_id,
            types.iter().map(|&t| inventory.types()[t].clone()),
            LabelSource::Oracle,
        ));
    }

    let table = match &config.translation {
        Some(t) => Some(synth_table(&mut rng, config, t)?),
        None => None,
    };

    Ok(SynthOutput {
        inventory,
        corpus: Corpus::new(docs)?,
        labels,
        table,
    })
}

fn synth_table(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    settings: &SynthTranslation,
) -> Result<TranslationTable> {
    let prefix = &config
        .streams
        .iter()
        .find(|s| s.stream_id == settings.source_stream)
        .expect("validated")
        .prefix;
    let v = config.vocab_size;
    let distractors = (settings.candidates - 1).min(v - 1);
    // Halving weights over the distractors, scaled to the leftover mass.
    let raw: Vec<f64> = (0..distractors).map(|j| 0.5f64.powi(j as i32)).collect();
    let raw_total: f64 = raw.iter().sum();
    let mut triples = Vec::with_capacity(v * (distractors + 1));
    for w in 0..v {
        let source = token(prefix, w);
        triples.push((source.clone(), token(ENGLISH_PREFIX, w), settings.correct_prob));
        let mut used = vec![w];
        for r in &raw {
            let mut other = rng.random_range(0..v);
            while used.contains(&other) {
                other = rng.random_range(0..v);
            }
            used.push(other);
            let p = (1.0 - settings.correct_prob) * r / raw_total;
            triples.push((source.clone(), token(ENGLISH_PREFIX, other), p));
        }
    }
    TranslationTable::from_triples(triples)
}

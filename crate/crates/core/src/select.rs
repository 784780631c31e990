//! Picks unlabeled documents to show the annotator.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::svm::ScoreMatrix;

/// Labeled-document budgets of the two reference annotation scenarios.
pub const SCENARIO_BUDGETS: [(&str, usize); 2] = [("il5", 159), ("il6", 364)];

pub fn scenario_budget(name: &str) -> Option<usize> {
    SCENARIO_BUDGETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, b)| b)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Round-robin over types, taking each type's highest-scoring documents.
    #[default]
    PerTypeTop,
    Random,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_type_top" => Ok(SelectionStrategy::PerTypeTop),
            "random" => Ok(SelectionStrategy::Random),
            other => Err(format!("unknown strategy {other}")),
        }
    }
}

/// Why a document was picked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub sf_type: String,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionBatch {
    pub doc_ids: Vec<String>,
    /// Filled for `per_type_top`; empty for random batches.
    pub rationale: BTreeMap<String, Rationale>,
}

impl SelectionBatch {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }
}

/// Selects up to `budget` unlabeled documents from `scores`.
///
/// `per_type_top` walks the types in matrix order, round-robin, each time
/// taking the best remaining document for that type (score descending, ties
/// by doc_id). `random` samples uniformly without replacement.
pub fn rank_for_annotation(
    scores: &ScoreMatrix,
    labeled: &HashSet<String>,
    budget: usize,
    strategy: SelectionStrategy,
    seed: u64,
) -> SelectionBatch {
    let pool: Vec<usize> = (0..scores.num_docs())
        .filter(|&i| !labeled.contains(&scores.doc_ids()[i]))
        .collect();
    let target = budget.min(pool.len());
    let mut batch = SelectionBatch::default();
    if target == 0 {
        return batch;
    }

    match strategy {
        SelectionStrategy::PerTypeTop if scores.num_types() == 0 => {
            let mut ids: Vec<String> = pool.iter().map(|&i| scores.doc_ids()[i].clone()).collect();
            ids.sort();
            ids.truncate(target);
            batch.doc_ids = ids;
        }
        SelectionStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            batch.doc_ids = pool
                .choose_multiple(&mut rng, target)
                .map(|&i| scores.doc_ids()[i].clone())
                .collect();
        }
        SelectionStrategy::PerTypeTop => {
            let rankings: Vec<Vec<usize>> = (0..scores.num_types())
                .map(|t| {
                    let mut ranked = pool.clone();
                    ranked.sort_by(|&a, &b| {
                        // `+ 0.0` so that -0.0 and 0.0 tie
                        (scores.get(b, t) + 0.0)
                            .total_cmp(&(scores.get(a, t) + 0.0))
                            .then_with(|| scores.doc_ids()[a].cmp(&scores.doc_ids()[b]))
                    });
                    ranked
                })
                .collect();
            let mut cursors = vec![0usize; rankings.len()];
            let mut taken = vec![false; scores.num_docs()];
            while batch.doc_ids.len() < target {
                for (t, ranked) in rankings.iter().enumerate() {
                    if batch.doc_ids.len() == target {
                        break;
                    }
                    while cursors[t] < ranked.len() && taken[ranked[cursors[t]]] {
                        cursors[t] += 1;
                    }
                    if let Some(&doc) = ranked.get(cursors[t]) {
                        taken[doc] = true;
                        let id = scores.doc_ids()[doc].clone();
                        batch.rationale.insert(
                            id.clone(),
                            Rationale {
                                sf_type: scores.type_ids()[t].clone(),
                                score: scores.get(doc, t),
                            },
                        );
                        batch.doc_ids.push(id);
                    }
                }
            }
        }
    }
    batch
}

//! Implementation vs. independent re-derivations of the same quantities.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sftype::fusion::simplex_grid;
use sftype::translate::Candidate;
use sftype::*;

/// Area under the stepwise precision-recall curve, computed from the
/// (recall, precision) point at every cutoff.
fn pr_curve_area(scores: &[f64], relevant: &[bool]) -> f64 {
    let n = scores.len();
    let total = relevant.iter().filter(|&&r| r).count() as f64;
    // insertion sort on (score desc, index asc)
    let mut order: Vec<usize> = Vec::new();
    for i in 0..n {
        let pos = order
            .iter()
            .position(|&j| scores[i] > scores[j])
            .unwrap_or(order.len());
        order.insert(pos, i);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for cutoff in 1..=n {
        let tp = order[..cutoff].iter().filter(|&&i| relevant[i]).count() as f64;
        let recall = tp / total;
        let precision = tp / cutoff as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

#[test]
fn ap_matches_pr_area_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let n = rng.random_range(1..300);
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 4.0).collect();
        let mut relevant: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        relevant[rng.random_range(0..n)] = true;
        let ap = average_precision(&scores, &relevant).unwrap();
        let oracle = pr_curve_area(&scores, &relevant);
        assert!((ap - oracle).abs() < 1e-12, "{ap} vs {oracle}");
    }
}

#[test]
fn reversed_ranking_reaches_formula_minimum() {
    for n in 1..15usize {
        for r in 1..=n {
            let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            // relevant items get the lowest scores
            let relevant: Vec<bool> = (0..n).map(|i| i < r).collect();
            let ap = average_precision(&scores, &relevant).unwrap();
            let formula: f64 =
                (1..=r).map(|i| i as f64 / (n - r + i) as f64).sum::<f64>() / r as f64;
            assert!((ap - formula).abs() < 1e-12);
            assert!((ap - pr_curve_area(&scores, &relevant)).abs() < 1e-12);
        }
    }
}

#[test]
fn evaluate_matches_independent_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let types = ["X", "Y", "Z"];
    let n = 40;
    let ids: Vec<String> = (0..n).map(|i| format!("d{i:02}")).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let truth: LabelStore = ids
        .iter()
        .map(|id| {
            let ts: Vec<&str> = types.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            LabelRecord::new(id.clone(), ts, LabelSource::Oracle)
        })
        .collect();
    let m = ScoreMatrix::new(
        "t",
        ids.clone(),
        types.iter().map(|s| s.to_string()).collect(),
        rows.clone(),
    )
    .unwrap();
    let report = evaluate(&m, &truth, RelevanceRule::MaxScore).unwrap();

    let mut aps = Vec::new();
    for (t, ty) in types.iter().enumerate() {
        let col: Vec<f64> = rows.iter().map(|r| r[t]).collect();
        let rel: Vec<bool> = ids.iter().map(|d| truth.get(d).unwrap().types.contains(*ty)).collect();
        let ap = pr_curve_area(&col, &rel);
        assert!((report.per_type_ap[*ty].unwrap() - ap).abs() < 1e-12);
        aps.push(ap);
    }
    let mean = aps.iter().sum::<f64>() / 3.0;
    assert!((report.mean_type_ap.unwrap() - mean).abs() < 1e-12);
    let rel_scores: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().cloned().fold(f64::MIN, f64::max))
        .collect();
    let rel: Vec<bool> = ids.iter().map(|d| !truth.get(d).unwrap().types.is_empty()).collect();
    assert!((report.relevance_ap.unwrap() - pr_curve_area(&rel_scores, &rel)).abs() < 1e-12);
}

#[test]
fn translate_matches_sort_and_truncate() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let sources = rng.random_range(1..6);
        let mut triples = Vec::new();
        for s in 0..sources {
            let count = rng.random_range(1..8);
            let mut targets: Vec<usize> = (0..12).collect();
            rand::seq::SliceRandom::shuffle(targets.as_mut_slice(), &mut rng);
            for &t in &targets[..count] {
                // coarse probabilities to exercise ties
                let p = rng.random_range(0..5) as f64 / 4.0;
                triples.push((format!("s{s}"), format!("t{t}"), p));
            }
        }
        let table = TranslationTable::from_triples(triples.clone()).unwrap();
        let k = rng.random_range(1..10);
        for s in 0..sources + 1 {
            let src = format!("s{s}");
            let mut all: Vec<(String, f64)> = triples
                .iter()
                .filter(|(a, _, _)| *a == src)
                .map(|(_, t, p)| (t.clone(), *p))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let expected: Vec<String> = all.into_iter().take(k).map(|(t, _)| t).collect();
            let got = translate_tokens(&[src.as_str()], &table, k, OovPolicy::Drop);
            assert_eq!(got, expected);
        }
    }
}

#[test]
fn translated_length_formula() {
    let table = TranslationTable::from_triples([
        ("a", "x", 0.5),
        ("a", "y", 0.5),
        ("b", "z", 1.0),
    ])
    .unwrap();
    let tokens = ["a", "q", "b", "a", "r"];
    for k in 1..4 {
        let expected_in_table: usize = tokens
            .iter()
            .map(|t| table.candidates(t).map_or(0, |c: &[Candidate]| c.len().min(k)))
            .sum();
        assert_eq!(
            translate_tokens(&tokens, &table, k, OovPolicy::Drop).len(),
            expected_in_table
        );
        assert_eq!(
            translate_tokens(&tokens, &table, k, OovPolicy::Passthrough).len(),
            expected_in_table + 2
        );
    }
}

#[test]
fn objective_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dim = 6;
    let xs: Vec<SparseVector> = (0..15)
        .map(|_| {
            let mut pairs = Vec::new();
            for i in 0..dim {
                if rng.random_bool(0.5) {
                    pairs.push((i, rng.random_range(-1.0..1.0)));
                }
            }
            SparseVector::from_pairs(pairs)
        })
        .collect();
    let ys: Vec<f64> = (0..15).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let weights: Vec<f64> = (0..=dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let lambda = 0.37;
    let model = LinearModel {
        sf_type: "t".into(),
        config: TrainConfig {
            lambda,
            ..Default::default()
        },
        weights: weights.clone(),
        degenerate: false,
        positives: 0,
        negatives: 0,
    };
    // dense re-evaluation
    let mut hinge = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let mut dense = vec![0.0; dim];
        for (i, v) in x.iter() {
            dense[i] = v;
        }
        let margin: f64 = dense.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + weights[dim];
        hinge += f64::max(0.0, 1.0 - y * margin);
    }
    let reg: f64 = weights[..dim].iter().map(|w| w * w).sum();
    let expected = lambda / 2.0 * reg + hinge / xs.len() as f64;
    let refs: Vec<&SparseVector> = xs.iter().collect();
    assert!((objective(&model, &refs, &ys) - expected).abs() < 1e-12);
}

#[test]
fn scores_equal_hand_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 8;
    let models: Vec<LinearModel> = (0..3)
        .map(|t| LinearModel {
            sf_type: format!("t{t}"),
            config: TrainConfig::default(),
            weights: (0..=dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            degenerate: false,
            positives: 0,
            negatives: 0,
        })
        .collect();
    let docs: Vec<SparseVector> = (0..5)
        .map(|_| {
            SparseVector::from_pairs((0..dim).map(|i| (i, rng.random_range(0.0..1.0))).collect())
        })
        .collect();
    let ids: Vec<String> = (0..5).map(|i| format!("d{i}")).collect();
    let m = score_documents(&models, &docs, &ids, "asr").unwrap();
    for (i, x) in docs.iter().enumerate() {
        for (t, model) in models.iter().enumerate() {
            let mut dot = model.weights[dim];
            for j in 0..dim {
                dot += x.get(j) * model.weights[j];
            }
            assert!((m.get(i, t) - dot).abs() < 1e-12);
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, tag: &str, docs: usize, types: usize) -> ScoreMatrix {
    ScoreMatrix::new(
        tag,
        (0..docs).map(|i| format!("d{i:03}")).collect(),
        (0..types).map(|t| format!("T{t}")).collect(),
        (0..docs)
            .map(|_| (0..types).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect(),
    )
    .unwrap()
}

#[test]
fn fuse_matches_elementwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ms: Vec<ScoreMatrix> = ["a", "b", "c"]
        .iter()
        .map(|t| random_matrix(&mut rng, t, 3, 2))
        .collect();
    let w = FusionWeights::from_pairs([("a", 0.2), ("b", 0.3), ("c", 0.5)]).unwrap();
    let fused = fuse(&ms, &w).unwrap();
    for d in 0..3 {
        for t in 0..2 {
            let expected = 0.2 * ms[0].get(d, t) + 0.3 * ms[1].get(d, t) + 0.5 * ms[2].get(d, t);
            assert!((fused.get(d, t) - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn two_source_half_step_grid_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ids: Vec<String> = (0..30).map(|i| format!("d{i:03}")).collect();
    let truth: LabelStore = ids
        .iter()
        .map(|id| {
            let ts: Vec<&str> = ["T0", "T1"].into_iter().filter(|_| rng.random_bool(0.4)).collect();
            LabelRecord::new(id.clone(), ts, LabelSource::Oracle)
        })
        .collect();
    let a = standardize(&random_matrix(&mut rng, "a", 30, 2));
    let b = standardize(&random_matrix(&mut rng, "b", 30, 2));
    let tuned = tune_weights(&[a.clone(), b.clone()], &truth, 0.5).unwrap();

    let candidates = [(1.0, 0.0), (0.5, 0.5), (0.0, 1.0)];
    let mut best = (f64::MIN, (0.0, 0.0));
    for (wa, wb) in candidates {
        let w = FusionWeights::from_pairs([("a", wa), ("b", wb)]).unwrap_or_else(|_| unreachable!());
        let ap = evaluate(&fuse(&[a.clone(), b.clone()], &w).unwrap(), &truth, RelevanceRule::MaxScore)
            .unwrap()
            .mean_type_ap
            .unwrap();
        if ap > best.0 {
            best = (ap, (wa, wb));
        }
    }
    assert_eq!(tuned.get("a"), Some(best.1 .0));
    assert_eq!(tuned.get("b"), Some(best.1 .1));
}

#[test]
fn tuning_with_perfect_source_is_at_least_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ids: Vec<String> = (0..40).map(|i| format!("d{i:03}")).collect();
    let truth: LabelStore = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let ts: Vec<&str> = if i % 3 == 0 { vec!["T0"] } else { vec!["T1"] };
            LabelRecord::new(id.clone(), ts, LabelSource::Oracle)
        })
        .collect();
    let perfect = ScoreMatrix::new(
        "perfect",
        ids.clone(),
        vec!["T0".into(), "T1".into()],
        ids.iter()
            .map(|id| {
                let r = truth.get(id).unwrap();
                vec![r.types.contains("T0") as u8 as f64, r.types.contains("T1") as u8 as f64]
            })
            .collect(),
    )
    .unwrap();
    let noise = random_matrix(&mut rng, "noise", 40, 2);
    let ms = [standardize(&perfect), standardize(&noise)];
    let w = tune_weights(&ms, &truth, 0.1).unwrap();
    let ap = |w: &FusionWeights| {
        evaluate(&fuse(&ms, w).unwrap(), &truth, RelevanceRule::MaxScore)
            .unwrap()
            .mean_type_ap
            .unwrap()
    };
    let perfect_ap = ap(&FusionWeights::from_pairs([("perfect", 1.0), ("noise", 0.0)]).unwrap());
    assert_eq!(perfect_ap, 1.0);
    assert!(ap(&w) >= perfect_ap);
}

#[test]
fn grid_point_count_matches_stars_and_bars() {
    fn binom(n: usize, k: usize) -> usize {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }
    for sources in 1..5 {
        for steps in 1..11 {
            let grid = simplex_grid(sources, steps);
            assert_eq!(grid.len(), binom(steps + sources - 1, sources - 1));
            assert!(grid.iter().all(|p| p.iter().sum::<usize>() == steps));
            let unique: HashSet<_> = grid.iter().collect();
            assert_eq!(unique.len(), grid.len());
        }
    }
}

#[test]
fn selection_with_one_type_is_top_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let m = random_matrix(&mut rng, "eng", 60, 1);
    let labeled: HashSet<String> = (0..60).step_by(4).map(|i| format!("d{i:03}")).collect();
    for b in [1, 5, 20, 45, 100] {
        let batch = rank_for_annotation(&m, &labeled, b, SelectionStrategy::PerTypeTop, 0);
        let mut expected: Vec<(f64, String)> = m
            .doc_ids()
            .iter()
            .enumerate()
            .filter(|(_, d)| !labeled.contains(*d))
            .map(|(i, d)| (m.get(i, 0), d.clone()))
            .collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<String> = expected.into_iter().take(b).map(|(_, d)| d).collect();
        assert_eq!(batch.doc_ids, expected);
    }
}

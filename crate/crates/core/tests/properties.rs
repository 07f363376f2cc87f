use std::collections::BTreeMap;

use nlurank::calibration::{bin_index, reliability, Scope, NUM_BINS};
use nlurank::components::ComponentScores;
use nlurank::corpus::SlotChunk;
use nlurank::decode::{entry_order, merge_scored};
use nlurank::hypothesis::{build_hypotheses, Hypothesis};
use nlurank::metrics::{levenshtein, semer_sequences, SlotItem, SlotSequence};
use nlurank::reranker::{hypothesis_softmax, sigmoid, top_hypothesis, WeightVector};
use proptest::prelude::*;

/// Edit distance by exhaustive recursion over the last symbols.
fn edit_distance_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let (ra, rb) = (&a[..a.len() - 1], &b[..b.len() - 1]);
        let v = (go(ra, rb, memo) + usize::from(a[a.len() - 1] != b[b.len() - 1]))
            .min(go(ra, b, memo) + 1)
            .min(go(a, rb, memo) + 1);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut BTreeMap::new())
}

fn symbols() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..9)
}

fn slot_sequence(v: &[u8]) -> SlotSequence {
    let mut items = vec![SlotItem::Intent("I".into())];
    items.extend(v.iter().map(|x| SlotItem::Slot {
        entity_type: format!("T{x}"),
        value: "v".into(),
    }));
    SlotSequence { items }
}

fn hyp(domain: &str, index: usize, features: [f64; 3]) -> Hypothesis {
    Hypothesis {
        domain: domain.into(),
        intent: "I".into(),
        slots: vec![],
        features,
        score: None,
        index,
    }
}

fn features() -> impl Strategy<Value = [f64; 3]> {
    [-8.0..0.0f64, -8.0..0.0f64, -8.0..0.0f64]
}

proptest! {
    #[test]
    fn edit_distance_matches_oracle(a in symbols(), b in symbols()) {
        prop_assert_eq!(levenshtein(&a, &b), edit_distance_oracle(&a, &b));
    }

    #[test]
    fn edit_distance_is_a_metric(a in symbols(), b in symbols(), c in symbols()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn semer_is_distance_over_truth_length(a in symbols(), b in symbols()) {
        let (h, t) = (slot_sequence(&a), slot_sequence(&b));
        let expected = edit_distance_oracle(&a, &b) as f64 / (b.len() + 1) as f64;
        prop_assert_eq!(semer_sequences(&h, &t), expected);
        prop_assert_eq!(semer_sequences(&t, &t), 0.0);
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(
        s in prop::collection::vec(-30.0..30.0f64, 1..12),
        shift in -100.0..100.0f64,
    ) {
        let p = hypothesis_softmax(&s).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        let shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let q = hypothesis_softmax(&shifted).unwrap();
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for i in 0..s.len() {
            for j in 0..s.len() {
                if s[i] > s[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn top_hypothesis_survives_positive_rescaling(
        feats in prop::collection::vec(features(), 1..10),
        w in features(),
        c in 0.01..100.0f64,
    ) {
        let w = WeightVector::new(w.map(|v| -v), None);
        let scaled = WeightVector::new(w.w.map(|v| v * c), None);
        let mut a: Vec<Hypothesis> = feats.iter().enumerate().map(|(i, f)| hyp("d", i, *f)).collect();
        let mut b = a.clone();
        let ia = top_hypothesis(&w, &mut a).unwrap().index;
        let ib = top_hypothesis(&scaled, &mut b).unwrap().index;
        let sa = a[ia].score.unwrap();
        // Rescaling can only change the winner through an exact or rounding-level tie.
        if ia != ib {
            prop_assert!((sa - a[ib].score.unwrap()).abs() <= 1e-12 * sa.abs().max(1.0));
        }
    }

    #[test]
    fn ordering_by_score_equals_ordering_by_confidence(s in prop::collection::vec(-30.0..30.0f64, 2..20)) {
        for x in &s {
            for y in &s {
                if x < y {
                    prop_assert!(sigmoid(*x) < sigmoid(*y));
                }
            }
        }
    }

    #[test]
    fn merge_is_a_sorted_selection(
        lists in prop::collection::vec(prop::collection::vec(features(), 1..6), 1..4),
        weights in prop::collection::vec((features(), prop::option::of(-3.0..3.0f64)), 4),
        n in 1usize..30,
    ) {
        let per_domain: Vec<(String, Vec<Hypothesis>)> = lists
            .iter()
            .enumerate()
            .map(|(d, fs)| {
                let name = format!("D{d}");
                let hyps = fs.iter().enumerate().map(|(i, f)| hyp(&name, i, *f)).collect();
                (name, hyps)
            })
            .collect();
        let wmap: BTreeMap<String, WeightVector> = weights
            .iter()
            .enumerate()
            .map(|(d, (w, b))| (format!("D{d}"), WeightVector::new(*w, *b)))
            .collect();
        let total: usize = lists.iter().map(Vec::len).sum();
        let merged = merge_scored(&per_domain, &wmap, n).unwrap();
        prop_assert_eq!(merged.len(), n.min(total));
        for pair in merged.windows(2) {
            prop_assert!(entry_order(&pair[0], &pair[1]).is_lt());
        }
        let full = merge_scored(&per_domain, &wmap, total).unwrap();
        let mut keys: Vec<(String, usize)> =
            full.iter().map(|e| (e.hypothesis.domain.clone(), e.hypothesis.index)).collect();
        keys.sort();
        let mut expected: Vec<(String, usize)> = per_domain
            .iter()
            .flat_map(|(d, hs)| hs.iter().map(move |h| (d.clone(), h.index)))
            .collect();
        expected.sort();
        prop_assert_eq!(keys, expected);
        for e in &full {
            let w = &wmap[&e.hypothesis.domain];
            let s: f64 = w.bias.unwrap_or(0.0) + w.w.iter().zip(&e.hypothesis.features).map(|(a, b)| a * b).sum::<f64>();
            prop_assert!((e.score - s).abs() < 1e-12);
            prop_assert_eq!(e.confidence, sigmoid(e.score));
        }
        prop_assert_eq!(&merged[..], &full[..merged.len()]);
    }

    #[test]
    fn bins_partition_the_unit_interval(r in 0.0..=1.0f64) {
        let k = bin_index(r);
        prop_assert!(k < NUM_BINS);
        prop_assert!(r >= k as f64 / NUM_BINS as f64);
        prop_assert!(r < (k + 1) as f64 / NUM_BINS as f64 || (k == NUM_BINS - 1 && r == 1.0));
    }

    #[test]
    fn ece_is_bounded_and_order_free(
        entries in prop::collection::vec((0.0..=1.0f64, 0u8..2), 1..80),
        seed in any::<u64>(),
    ) {
        let report = reliability(&entries, Scope::CrossDomain).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.ece));
        prop_assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), entries.len());
        let mut shuffled = entries.clone();
        let len = shuffled.len();
        let mut x = seed | 1;
        for i in (1..len).rev() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            shuffled.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let again = reliability(&shuffled, Scope::CrossDomain).unwrap();
        prop_assert!((report.ece - again.ece).abs() < 1e-12);
        for (a, b) in report.bins.iter().zip(&again.bins) {
            prop_assert_eq!(a.count, b.count);
        }
    }

    #[test]
    fn hypotheses_are_the_full_product(
        ic in prop::collection::vec(-5.0..0.0f64, 1..5),
        ner in prop::collection::vec(-5.0..0.0f64, 1..5),
        dc in -5.0..0.0f64,
    ) {
        let cs = ComponentScores {
            domain: "D".into(),
            dc_logprob: dc,
            ic: ic.iter().enumerate().map(|(i, lp)| (format!("I{i}"), *lp)).collect(),
            ner: ner.iter().enumerate().map(|(j, lp)| (vec![SlotChunk::new("T", j, j + 1)], *lp)).collect(),
        };
        let hyps = build_hypotheses(&cs).unwrap();
        prop_assert_eq!(hyps.len(), ic.len() * ner.len());
        for (k, h) in hyps.iter().enumerate() {
            let (i, j) = (k / ner.len(), k % ner.len());
            prop_assert_eq!(h.index, k);
            prop_assert_eq!(&h.intent, &format!("I{i}"));
            prop_assert_eq!(h.features, [dc, ic[i], ner[j]]);
        }
    }
}

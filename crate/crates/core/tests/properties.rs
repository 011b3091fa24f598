use std::collections::BTreeMap;

use proptest::prelude::*;

use faithscore::score::{category_breakdown, compute_faithscore, compute_sentence_score, likert_from_counts};
use faithscore::stats::{correlate, CorrelationMethod};
use faithscore::{AtomicFact, FactCategory, ScoreValue, SubSentence, SubSentenceLabel, Verdict};

fn instance(pattern: &[(u8, bool)]) -> (Vec<AtomicFact>, Vec<Verdict>) {
    let facts = pattern
        .iter()
        .enumerate()
        .map(|(i, (c, _))| {
            AtomicFact::new(format!("f{i}"), 0, FactCategory::ALL[*c as usize % 5], format!("fact {i}"))
        })
        .collect();
    let verdicts = pattern
        .iter()
        .enumerate()
        .map(|(i, (_, s))| {
            if *s {
                Verdict::supported(format!("f{i}"))
            } else {
                Verdict::unsupported(format!("f{i}"))
            }
        })
        .collect();
    (facts, verdicts)
}

fn vector(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50i32..50, len).prop_map(|v| v.into_iter().map(f64::from).collect())
}

proptest! {
    #[test]
    fn faithscore_ignores_fact_order(
        pattern in prop::collection::vec((0u8..5, any::<bool>()), 1..15),
        weights in prop::collection::vec(0.0f64..3.0, 15),
        seed in any::<u64>(),
    ) {
        let (mut facts, verdicts) = instance(&pattern);
        for (f, w) in facts.iter_mut().zip(&weights) {
            f.weight = *w + 0.01;
        }
        let base = compute_faithscore(&facts, &verdicts).unwrap();
        let mut shuffled = facts.clone();
        // deterministic Fisher-Yates driven by the seed
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut rev_verdicts = verdicts.clone();
        rev_verdicts.reverse();
        prop_assert_eq!(compute_faithscore(&shuffled, &rev_verdicts).unwrap(), base);
    }

    #[test]
    fn breakdown_recombines_to_faithscore(pattern in prop::collection::vec((0u8..5, any::<bool>()), 1..30)) {
        let (facts, verdicts) = instance(&pattern);
        let parts = category_breakdown(&facts, &verdicts).unwrap();
        let mut counts: BTreeMap<FactCategory, usize> = BTreeMap::new();
        for f in &facts {
            *counts.entry(f.category).or_default() += 1;
        }
        prop_assert_eq!(parts.keys().collect::<Vec<_>>(), counts.keys().collect::<Vec<_>>());
        let recombined: f64 = parts.iter().map(|(c, v)| v * counts[c] as f64).sum::<f64>() / facts.len() as f64;
        let whole = compute_faithscore(&facts, &verdicts).unwrap().value().unwrap();
        prop_assert!((recombined - whole).abs() < 1e-12, "{} vs {}", recombined, whole);
    }

    #[test]
    fn faithscore_stays_in_unit_interval(
        pattern in prop::collection::vec((0u8..5, any::<bool>()), 0..20),
        weights in prop::collection::vec(0.0f64..10.0, 20),
    ) {
        let (mut facts, verdicts) = instance(&pattern);
        for (f, w) in facts.iter_mut().zip(&weights) {
            f.weight = *w;
        }
        match compute_faithscore(&facts, &verdicts) {
            Ok(ScoreValue::Value(v)) => prop_assert!((0.0..=1.0).contains(&v)),
            Ok(ScoreValue::NoDescriptiveContent) => prop_assert!(facts.is_empty()),
            Err(_) => prop_assert!(facts.iter().all(|f| f.weight == 0.0)),
        }
    }

    #[test]
    fn adding_a_hallucinated_subsentence_never_helps(flags in prop::collection::vec(any::<bool>(), 1..12)) {
        let mut subs: Vec<SubSentence> = (0..flags.len())
            .map(|i| SubSentence { index: i, text: format!("s{i}."), label: Some(SubSentenceLabel::Descriptive) })
            .collect();
        let mut map: BTreeMap<usize, Vec<Verdict>> = flags
            .iter()
            .enumerate()
            .map(|(i, ok)| (i, vec![if *ok { Verdict::supported(format!("f{i}")) } else { Verdict::unsupported(format!("f{i}")) }]))
            .collect();
        let before = compute_sentence_score(&subs, &map).unwrap().value().unwrap();
        let n = flags.len();
        subs.push(SubSentence { index: n, text: "extra.".into(), label: Some(SubSentenceLabel::Descriptive) });
        map.insert(n, vec![Verdict::unsupported("extra")]);
        let after = compute_sentence_score(&subs, &map).unwrap().value().unwrap();
        prop_assert!(after <= before);
    }

    #[test]
    fn likert_is_non_increasing(n in 1usize..60) {
        let scores: Vec<u8> = (0..=n).map(|x| likert_from_counts(n, x).unwrap()).collect();
        prop_assert!(scores.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(likert_from_counts(n, n + 1).is_err());
    }

    #[test]
    fn spearman_survives_monotone_maps(x in vector(3..40), y in vector(3..40)) {
        let len = x.len().min(y.len());
        let (x, y) = (&x[..len], &y[..len]);
        if let Ok(base) = correlate(x, y, CorrelationMethod::Spearman) {
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 7.0).collect();
            let logistic: Vec<f64> = y.iter().map(|v| 1.0 / (1.0 + (-v / 10.0).exp())).collect();
            let mapped = correlate(&cubed, &logistic, CorrelationMethod::Spearman).unwrap();
            prop_assert!((mapped - base).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_survives_positive_affine_maps(x in vector(3..40), y in vector(3..40), a in 0.1f64..10.0, b in -100.0f64..100.0) {
        let len = x.len().min(y.len());
        let (x, y) = (&x[..len], &y[..len]);
        if let Ok(base) = correlate(x, y, CorrelationMethod::Pearson) {
            let mapped: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((correlate(&mapped, y, CorrelationMethod::Pearson).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn statistics_are_permutation_equivariant(x in vector(3..30), y in vector(3..30), rot in 0usize..30) {
        let len = x.len().min(y.len());
        let (mut x, mut y) = (x[..len].to_vec(), y[..len].to_vec());
        let before: Vec<_> = CorrelationMethod::ALL.iter().map(|m| correlate(&x, &y, *m).ok()).collect();
        x.rotate_left(rot % len);
        y.rotate_left(rot % len);
        for (m, b) in CorrelationMethod::ALL.iter().zip(before) {
            match (correlate(&x, &y, *m).ok(), b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
            }
        }
    }
}

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use rtbust_core::detect::{compute_metrics, f1_from, Label, MetricsReport};
use rtbust_core::handcrafted::{detect_sessions, extract_handcrafted};
use rtbust_core::ingest::{AnalysisWindow, RetweetEvent, UserSeries};

fn labels(bits: &[bool]) -> BTreeMap<String, Label> {
    bits.iter()
        .enumerate()
        .map(|(i, &b)| (format!("u{i:04}"), if b { Label::Bot } else { Label::Human }))
        .collect()
}

#[test]
fn published_pair_gives_published_f1() {
    assert!((f1_from(0.9304, 0.8146) - 0.8687).abs() < 1e-3);
}

#[test]
fn hand_confusion_matrix_by_direct_evaluation() {
    let m = MetricsReport::from_counts(3, 1, 2, 4);
    assert!((m.precision - 0.75).abs() < 1e-4);
    assert!((m.recall - 0.6).abs() < 1e-4);
    assert!((m.accuracy - 0.7).abs() < 1e-4);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-4);
    // (12 - 2) / sqrt(4 * 5 * 5 * 6)
    assert!((m.mcc - 10.0 / 600f64.sqrt()).abs() < 1e-4);
}

proptest! {
    #[test]
    fn flipping_predictions_negates_mcc(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..80)) {
        let pred: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let truth = labels(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
        let flipped: Vec<bool> = pred.iter().map(|b| !b).collect();
        let a = compute_metrics(&labels(&pred), &truth).unwrap();
        let b = compute_metrics(&labels(&flipped), &truth).unwrap();
        prop_assert!((a.mcc + b.mcc).abs() < 1e-12);
    }

    #[test]
    fn all_human_accuracy_is_human_fraction(truth_bits in prop::collection::vec(any::<bool>(), 1..80)) {
        let truth = labels(&truth_bits);
        let pred = labels(&vec![false; truth_bits.len()]);
        let m = compute_metrics(&pred, &truth).unwrap();
        let humans = truth_bits.iter().filter(|b| !**b).count() as f64;
        prop_assert!((m.accuracy - humans / truth_bits.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn f1_is_harmonic_mean_when_defined(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let m = MetricsReport::from_counts(tp, fp, fn_, tn);
        prop_assume!(tp + fp > 0 && tp + fn_ > 0 && m.precision + m.recall > 0.0);
        let harmonic = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
        prop_assert!((m.f1 - harmonic).abs() < 1e-12);
        prop_assert!(m.mcc >= -1.0 - 1e-12 && m.mcc <= 1.0 + 1e-12);
    }
}

/// Splits sorted timestamps wherever a gap reaches `gap` by rescanning.
fn sessions_oracle(ts: &[i64], gap: i64) -> usize {
    let mut sessions: Vec<Vec<i64>> = Vec::new();
    for &t in ts {
        match sessions.last_mut() {
            Some(run) if t - run[run.len() - 1] < gap => run.push(t),
            _ => sessions.push(vec![t]),
        }
    }
    sessions.len()
}

#[test]
fn sessions_match_rescan_oracle_on_a_thousand_timestamps() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let mut ts: Vec<i64> = (0..1000).map(|_| rng.random_range(0..14 * 86_400)).collect();
    ts.sort_unstable();
    for gap in [60, 600, 3600, 7200] {
        assert_eq!(detect_sessions(&ts, gap), sessions_oracle(&ts, gap));
    }
}

fn series_from(events: &[(i64, i64, u8)], window: AnalysisWindow) -> UserSeries {
    UserSeries {
        user_id: "u".into(),
        events: events
            .iter()
            .enumerate()
            .map(|(k, &(r, delay, author))| RetweetEvent {
                user_id: "u".into(),
                retweet_id: format!("r{k:05}"),
                retweet_ts: window.t_ref + r,
                source_tweet_id: format!("a{author}:{k}"),
                source_ts: window.t_ref + r - delay,
            })
            .collect(),
        window,
    }
}

fn event_list() -> impl Strategy<Value = Vec<(i64, i64, u8)>> {
    prop::collection::vec((0i64..14 * 86_400, 0i64..100_000, 0u8..12), 1..120)
}

proptest! {
    #[test]
    fn handcrafted_bounds_hold(events in event_list()) {
        let window = AnalysisWindow::from_days(0, 14).unwrap();
        let s = series_from(&events, window);
        let f = extract_handcrafted(&s).unwrap();
        let authors: BTreeSet<&str> = s.events.iter().map(|e| e.source_author()).collect();
        prop_assert!(f.rt_users_entropy <= (authors.len() as f64).log2() + 1e-9);
        let pub_days: BTreeSet<i64> = s.events.iter().map(|e| e.source_ts.div_euclid(86_400)).collect();
        prop_assert!(f.rt_days_entropy <= (pub_days.len() as f64).log2() + 1e-9);
        prop_assert!(f.rt_sessions <= events.len() as f64);
        prop_assert!(f.rt_days <= window.days());
        prop_assert!(f.to_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn handcrafted_ignores_event_order(events in event_list(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let window = AnalysisWindow::from_days(0, 14).unwrap();
        let s = series_from(&events, window);
        let mut shuffled = s.clone();
        shuffled.events.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = extract_handcrafted(&s).unwrap().to_array();
        let b = extract_handcrafted(&shuffled).unwrap().to_array();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}

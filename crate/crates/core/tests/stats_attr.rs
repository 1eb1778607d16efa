mod common;

use common::rng;
use driftscope::events::{Event, EventSequence, Split};
use driftscope::stats_attr::{fit_bins, RothmanReference, StatWeightConfig, Statistic};
use proptest::prelude::*;
use rand::Rng;

const N_FEATURES: usize = 4;

/// Feature 3 never appears; feature 2 takes only a handful of values.
fn random_corpus(seed: u64, n: usize) -> Vec<EventSequence> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let outcome = r.random_bool(0.3);
            let split = if i % 5 == 0 { Split::Test } else { Split::Train };
            let events = (0..r.random_range(1..30))
                .map(|k| {
                    let feature = r.random_range(0..3);
                    let raw = match feature {
                        0 => r.random_range(-3.0..3.0) + if outcome { 1.0 } else { 0.0 },
                        1 => r.random_range(0.0..100.0f64).round(),
                        _ => r.random_range(0..3) as f64,
                    };
                    Event { time: k as f64 * 60.0, feature, value: raw, raw }
                })
                .collect();
            EventSequence { episode_id: format!("e{i:04}"), events, outcome, split }
        })
        .collect()
}

/// Index of the half-open bin `[e_b, e_{b+1})` holding `v`, by linear scan;
/// values at or beyond the last edge go to the last bin.
fn scan_bin(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    (0..n).rev().find(|&b| b == 0 || v >= edges[b]).unwrap()
}

#[test]
fn bin_counts_match_a_recount() {
    for seed in 0..10 {
        let corpus = random_corpus(seed, 200);
        for bins_per_feature in [2, 3, 10] {
            let config = StatWeightConfig { bins_per_feature, ..Default::default() };
            let table = fit_bins(&corpus, N_FEATURES, &config).unwrap();
            assert!(table.features[3].is_none());
            for f in 0..3 {
                let fb = table.features[f].as_ref().unwrap();
                assert!(fb.edges.windows(2).all(|w| w[0] < w[1]) || fb.edges.len() == 2);
                assert!(fb.n_bins() <= bins_per_feature);
                let mut pos = vec![0u64; fb.n_bins()];
                let mut neg = vec![0u64; fb.n_bins()];
                let mut all = Vec::new();
                for seq in corpus.iter().filter(|s| s.split == Split::Train) {
                    for e in seq.events.iter().filter(|e| e.feature == f) {
                        let b = scan_bin(&fb.edges, e.raw);
                        if seq.outcome {
                            pos[b] += 1;
                        } else {
                            neg[b] += 1;
                        }
                        all.push(e.raw);
                    }
                }
                assert_eq!(fb.positive, pos, "seed {seed} feature {f}");
                assert_eq!(fb.negative, neg, "seed {seed} feature {f}");
                let min = all.iter().copied().fold(f64::INFINITY, f64::min);
                let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(fb.edges[0], min);
                assert_eq!(*fb.edges.last().unwrap(), max.max(min));
                let mean = all.iter().sum::<f64>() / all.len() as f64;
                assert_eq!(fb.average_bin, scan_bin(&fb.edges, mean));

                let alpha = config.laplace_alpha;
                let (tp, tn) = (pos.iter().sum::<u64>() as f64, neg.iter().sum::<u64>() as f64);
                for b in 0..fb.n_bins() {
                    let (p, n) = (pos[b] as f64, neg[b] as f64);
                    let or = ((p + alpha) / (n + alpha)) / ((tp - p + alpha) / (tn - n + alpha));
                    assert!((table.odds_ratio(f, b, alpha).unwrap() - or).abs() <= 1e-12 * or);
                    let risk = |p: f64, n: f64| (p + alpha) / (p + n + 2.0 * alpha);
                    let a = fb.average_bin;
                    let rm = risk(p, n) / risk(pos[a] as f64, neg[a] as f64);
                    let rb = risk(p, n) / risk(tp, tn);
                    assert!(
                        (table.rothman_index(f, b, alpha, RothmanReference::MeanBin).unwrap() - rm).abs() <= 1e-12 * rm
                    );
                    assert!(
                        (table.rothman_index(f, b, alpha, RothmanReference::BaseRate).unwrap() - rb).abs()
                            <= 1e-12 * rb
                    );
                }
            }
        }
    }
}

#[test]
fn informative_feature_has_increasing_odds() {
    let corpus = random_corpus(99, 2000);
    let config = StatWeightConfig { bins_per_feature: 4, ..Default::default() }.with_statistic(Statistic::OddsRatio);
    let table = fit_bins(&corpus, N_FEATURES, &config).unwrap();
    let low = table.weight(0, -2.5, &config).unwrap();
    let high = table.weight(0, 3.5, &config).unwrap();
    assert!(low < 1.0 && high > 1.0, "{low} {high}");
    assert_eq!(table.weight(3, 0.0, &config).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn bin_index_is_monotone(seed in 0u64..500, a in -5.0f64..105.0, b in -5.0f64..105.0) {
        let corpus = random_corpus(seed, 30);
        let table = fit_bins(&corpus, N_FEATURES, &StatWeightConfig::default()).unwrap();
        for fb in table.features.iter().flatten() {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(fb.bin_of(lo) <= fb.bin_of(hi));
            prop_assert_eq!(fb.bin_of(lo), scan_bin(&fb.edges, lo));
        }
    }
}

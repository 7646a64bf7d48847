mod common;

use proptest::prelude::*;

use common::*;
use valgauge::dataio::{holdout_count, split_users, synth_fixtures, Dataset, SplitSpec};
use valgauge::harness::{construct_memory, select_argmax, unigram_f1};
use valgauge::lexical::{relevance, row_normalize, tfidf_weights, StopWords};
use valgauge::metrics::{population_variance, var_pct, wasserstein1};
use valgauge::topology::{angular_order, circular_inversion_distance, cis, count_inversions, CircularSequence};
use valgauge::verifier::{cross_attention, VerifierParams};
use valgauge::{DomainKind, EmpiricalDistribution, ValueActivation, NUM_VALUES};

fn samples(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-50.0..50.0f64, (-5i32..=5).prop_map(f64::from)], 1..=max)
}

fn w(a: &[f64], b: &[f64]) -> f64 {
    wasserstein1(
        &EmpiricalDistribution::new(a.to_vec()).unwrap(),
        &EmpiricalDistribution::new(b.to_vec()).unwrap(),
    )
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<usize>>()).prop_shuffle()
}

fn perm_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (3usize..=10).prop_flat_map(|n| (permutation(n), permutation(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn w1_equals_assignment_oracle(p in samples(6), q in samples(6)) {
        prop_assert!((w(&p, &q) - brute_w1(&p, &q)).abs() < 1e-9);
    }

    #[test]
    fn w1_is_a_metric(p in samples(8), q in samples(8), r in samples(8)) {
        prop_assert_eq!(w(&p, &p), 0.0);
        prop_assert!((w(&p, &q) - w(&q, &p)).abs() <= 1e-12);
        prop_assert!(w(&p, &r) <= w(&p, &q) + w(&q, &r) + 1e-12);
    }

    #[test]
    fn w1_translation_and_scale(p in samples(8), q in samples(8), c in -100.0..100.0f64, a in -5.0..5.0f64) {
        let base = w(&p, &q);
        let sh: (Vec<f64>, Vec<f64>) = (p.iter().map(|x| x + c).collect(), q.iter().map(|x| x + c).collect());
        prop_assert!((w(&sh.0, &sh.1) - base).abs() <= 1e-9);
        let sc: (Vec<f64>, Vec<f64>) = (p.iter().map(|x| a * x).collect(), q.iter().map(|x| a * x).collect());
        prop_assert!((w(&sc.0, &sc.1) - a.abs() * base).abs() <= 1e-9);
    }

    #[test]
    fn w1_of_point_masses_is_their_gap(x in -1e3..1e3f64, y in -1e3..1e3f64, k in 1usize..5) {
        prop_assert!((w(&vec![x; k], &[y]) - (x - y).abs()).abs() <= 1e-9);
    }

    #[test]
    fn merge_count_matches_pair_scan(v in prop::collection::vec(0usize..20, 0..40)) {
        let mut slow = 0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if v[i] > v[j] {
                    slow += 1;
                }
            }
        }
        prop_assert_eq!(count_inversions(&v), slow);
    }

    #[test]
    fn circular_distance_matches_brute_force((obs, gt) in perm_pair(), k in 0usize..10) {
        let o = CircularSequence::new(dims(&obs)).unwrap();
        let g = CircularSequence::new(dims(&gt)).unwrap();
        let d = circular_inversion_distance(&o, &g).unwrap();
        prop_assert_eq!(d, brute_circular_distance(&obs, &gt));
        prop_assert_eq!(circular_inversion_distance(&o.rotate(k % obs.len()), &g).unwrap(), d);
        let s = cis(&o, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(cis(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn angular_order_rotates_with_the_plane(n in 3usize..=10, theta in 0.0..std::f64::consts::TAU, jitter in prop::collection::vec(0.0..0.5f64, 10)) {
        let labels = dims(&(0..n).collect::<Vec<_>>());
        // Distinct angles spaced at least half a sector apart.
        let step = std::f64::consts::TAU / n as f64;
        let angle = |i: usize| step * (i as f64 + jitter[i]);
        let pts: Vec<[f64; 2]> = (0..n).map(|i| [angle(i).cos(), angle(i).sin()]).collect();
        let rot: Vec<[f64; 2]> = (0..n).map(|i| [(angle(i) + theta).cos(), (angle(i) + theta).sin()]).collect();
        let a = angular_order(&labels, &pts).unwrap();
        let b = angular_order(&labels, &rot).unwrap();
        let a_order = a.order().to_vec();
        let is_rotation = (0..n).any(|k| a.rotate(k).order() == b.order());
        prop_assert!(is_rotation, "{:?} vs {:?}", a_order, b.order());
    }

    #[test]
    fn relevance_matches_double_loop(
        docs in prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["sea", "tree", "law", "gold", "kin", "joy", "the", "new"]), 1..10), 1..=20),
        seed in any::<u64>(),
    ) {
        let docs: Vec<Vec<String>> = docs.into_iter().map(|d| d.into_iter().map(String::from).collect()).collect();
        let mut r = rng(seed);
        let acts: Vec<ValueActivation> = docs.iter().map(|_| random_activation(&mut r)).collect();
        let weighted = tfidf_weights(&docs, &StopWords::none()).unwrap();
        let got = relevance(&weighted, &acts, 1e-8).unwrap();
        let want = double_loop_relevance(&weighted, &acts, 1e-8);
        for (g, o) in got.raw.iter().zip(&want) {
            for k in 0..NUM_VALUES {
                prop_assert!((g[k] - o[k]).abs() <= 1e-12);
                let hi = acts.iter().map(|a| a.weights()[k]).fold(0.0, f64::max);
                prop_assert!(g[k] >= 0.0 && g[k] <= hi + 1e-12);
            }
        }
        let norm = row_normalize(&got);
        for (i, row) in norm.normalized.unwrap().iter().enumerate() {
            prop_assert!(row.iter().all(|x| (0.0..=1.0).contains(x)));
            if !norm.constant_rows[i] {
                let arg = (0..NUM_VALUES).fold(0, |b, k| if got.raw[i][k] > got.raw[i][b] { k } else { b });
                prop_assert_eq!(row[arg], 1.0);
            }
        }
    }

    #[test]
    fn attention_weights_are_a_distribution(d in 2usize..=8, seed in any::<u64>(), scale in 0.01..50.0f64) {
        let mut r = rng(seed);
        let params = VerifierParams::random(d, seed);
        let att = cross_attention(&params, &random_vector(d, scale, &mut r), &random_profile(&mut r)).unwrap();
        let w = att.activation.weights();
        prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(att.refined.len(), d);
    }

    #[test]
    fn params_text_round_trip(d in 2usize..=6, seed in any::<u64>()) {
        let p = VerifierParams::random(d, seed);
        prop_assert_eq!(VerifierParams::from_text(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn split_is_a_user_partition(users in 2usize..30, seed in any::<u64>(), frac in 0.01..0.99f64) {
        let d = synth_fixtures(DomainKind::Conversation, users, seed);
        let spec = SplitSpec { holdout_fraction: frac, seed };
        let (train, eval) = split_users(&d, spec).unwrap();
        let (tu, eu) = (train.users(), eval.users());
        prop_assert!(tu.iter().all(|u| !eu.contains(u)));
        prop_assert_eq!(tu.len() + eu.len(), users);
        prop_assert_eq!(eu.len(), holdout_count(frac, users));
        prop_assert_eq!(train.records.len() + eval.records.len(), d.records.len());
        prop_assert!(eval.records.iter().all(|r| eu.contains(&r.user_id)));
        prop_assert!(train.profiles.keys().all(|u| tu.contains(u)));
        prop_assert_eq!(split_users(&d, spec).unwrap(), (train, eval));
    }

    #[test]
    fn dataset_jsonl_round_trip(users in 1usize..8, seed in any::<u64>(), dom in 0usize..3) {
        let domain = [DomainKind::MediaReview, DomainKind::Conversation, DomainKind::Mobility][dom];
        let d = synth_fixtures(domain, users, seed);
        prop_assert_eq!(Dataset::parse(&d.to_jsonl()).unwrap(), d);
    }

    #[test]
    fn var_pct_scales_with_variance(xs in prop::collection::vec(-1.0..1.0f64, 3..50), k in 0.1..3.0f64) {
        prop_assume!(population_variance(&xs) > 1e-6);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let scaled: Vec<f64> = xs.iter().map(|x| m + k * (x - m)).collect();
        let v = var_pct(&scaled, &xs).unwrap();
        prop_assert!((v - (k * k - 1.0) * 100.0).abs() <= 1e-6 * (1.0 + v.abs()));
    }

    #[test]
    fn argmax_ignores_monotone_transforms(scores in prop::collection::vec(-10.0..10.0f64, 1..12), a in 0.1..10.0f64, b in -5.0..5.0f64) {
        let t: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let e: Vec<f64> = scores.iter().map(|s| s.atan()).collect();
        let i = select_argmax(&scores);
        prop_assert_eq!(select_argmax(&t), i);
        prop_assert_eq!(select_argmax(&e), i);
        let i = i.unwrap();
        prop_assert!(scores.iter().all(|&s| s <= scores[i]));
        prop_assert!(scores[..i].iter().all(|&s| s < scores[i]));
    }

    #[test]
    fn unigram_f1_bounds(a in "[a-d ]{0,20}", b in "[a-d ]{0,20}") {
        let f = unigram_f1(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, unigram_f1(&b, &a));
        prop_assert_eq!(unigram_f1(&a, &a), 1.0);
    }

    #[test]
    fn memory_is_a_bounded_subset(users in 1usize..4, seed in any::<u64>(), limit in 0usize..6) {
        let d = synth_fixtures(DomainKind::MediaReview, users, seed);
        let m = construct_memory(&d.records, "sushi harbor", limit);
        prop_assert!(m.longterm.len() <= limit.min(d.records.len()));
        prop_assert!(m.longterm.iter().all(|r| d.records.contains(r)));
        let mut ids: Vec<&str> = m.longterm.iter().map(|r| r.record_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), m.longterm.len());
    }
}

use proptest::prelude::*;

use uplift_rank::bound::{c_delta, rademacher_upper, tail_term, FunctionClassSpec};
use uplift_rank::dataset::{group_view, split, Group, SplitSpec, UpliftDataset};
use uplift_rank::metrics::{
    auuc, auuc_decomposed, group_risks, group_stats, policy_risk, ranking_risk, uplift_curve, GroupStats, TiePolicy,
};
use uplift_rank::models::{predict_cvt, predict_tm, CvtScorer, LinearScorer, TwoModelScorer};
use uplift_rank::optimizer::{norm, project_max_norm, PairwiseObjective};
use uplift_rank::selection::binomial_sign_test;
use uplift_rank::surrogates::Surrogate;

/// Dataset with both arms and both outcomes in each arm.
fn dataset(max_rows: usize, dim: usize) -> impl Strategy<Value = UpliftDataset> {
    (8..max_rows)
        .prop_flat_map(move |n| {
            (
                prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n),
                prop::collection::vec(0u8..2, n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_map(|(rows, mut t, mut y)| {
            // force every (arm, outcome) cell to be populated
            for (k, (tk, yk)) in [(1, 1), (1, 0), (0, 1), (0, 0)].into_iter().enumerate() {
                t[k] = tk;
                y[k] = yk;
            }
            UpliftDataset::from_rows(&rows, t, y).unwrap()
        })
}

fn integer_scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(f64::from), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_rows(ds in dataset(120, 1), t in 0.3f64..0.7, v in 0.05f64..0.2, seed in any::<u64>()) {
        if let Ok(s) = split(&ds, &SplitSpec::new(t, v, seed)) {
            let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            for g in [Group::Treatment, Group::Control] {
                let n_g = ds.group_len(g) as f64;
                let in_train = s.train.iter().filter(|&&i| ds.treatment()[i] == g.flag()).count() as f64;
                prop_assert!((in_train / n_g - t).abs() <= 1.0 / n_g + 1e-12);
            }
        }
    }

    #[test]
    fn reversion_is_an_involution(ds in dataset(60, 1)) {
        for g in [Group::Treatment, Group::Control] {
            let v = group_view(&ds, g, false).unwrap();
            let r = v.reverted();
            prop_assert_eq!((r.n_pos(), r.n_neg()), (v.n_neg(), v.n_pos()));
            let rr = r.reverted();
            prop_assert_eq!(rr.positives(), v.positives());
            prop_assert_eq!(group_view(&ds, g, true).unwrap().positives(), v.negatives());
        }
    }

    #[test]
    fn half_tie_risks_are_complementary(pos in integer_scores(15), neg in integer_scores(11)) {
        let a = ranking_risk(&pos, &neg, TiePolicy::Half).unwrap();
        let b = ranking_risk(&neg, &pos, TiePolicy::Half).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!(ranking_risk(&pos, &neg, TiePolicy::Full).unwrap() >= a);
    }

    #[test]
    fn reversion_flips_auc((ds, scores) in dataset(60, 1).prop_flat_map(|ds| { let n = ds.len(); (Just(ds), integer_scores(n)) })) {
        let v = group_view(&ds, Group::Control, false).unwrap();
        let r = v.reverted();
        let s = |idx: Vec<usize>| idx.into_iter().map(|i| scores[i]).collect::<Vec<_>>();
        let orig = ranking_risk(&s(v.positives()), &s(v.negatives()), TiePolicy::Half).unwrap();
        let rev = ranking_risk(&s(r.positives()), &s(r.negatives()), TiePolicy::Half).unwrap();
        prop_assert!((1.0 - orig - rev).abs() < 1e-12);
    }

    #[test]
    fn affine_maps_preserve_metrics(
        (ds, scores) in dataset(60, 1).prop_flat_map(|ds| { let n = ds.len(); (Just(ds), integer_scores(n)) }),
        c in prop::sample::select(vec![0.5, 2.0, 3.0, 0.25]),
        b in -5i32..5,
    ) {
        let mapped: Vec<f64> = scores.iter().map(|s| c * s + f64::from(b)).collect();
        prop_assert_eq!(uplift_curve(&scores, &ds).unwrap(), uplift_curve(&mapped, &ds).unwrap());
        prop_assert_eq!(auuc(&scores, &ds).unwrap(), auuc(&mapped, &ds).unwrap());
        prop_assert_eq!(group_risks(&scores, &ds, TiePolicy::Half).unwrap(), group_risks(&mapped, &ds, TiePolicy::Half).unwrap());
        for ratio in [0.1, 0.5, 0.9] {
            prop_assert_eq!(policy_risk(&scores, &ds, ratio).unwrap(), policy_risk(&mapped, &ds, ratio).unwrap());
        }
    }

    #[test]
    fn monotone_maps_preserve_auuc(
        (ds, scores) in dataset(60, 1).prop_flat_map(|ds| { let n = ds.len(); (Just(ds), integer_scores(n)) }),
        k in 0.1f64..2.0,
    ) {
        // strictly increasing on integers with distinct images
        let mapped: Vec<f64> = scores.iter().map(|s| (k * s).atan() + s * 1e-3 + s.powi(3)).collect();
        prop_assert_eq!(auuc(&scores, &ds).unwrap(), auuc(&mapped, &ds).unwrap());
    }

    #[test]
    fn full_curve_endpoint_is_ate((ds, scores) in dataset(80, 1).prop_flat_map(|ds| { let n = ds.len(); (Just(ds), integer_scores(n)) })) {
        let curve = uplift_curve(&scores, &ds).unwrap();
        let last = curve.points.last().unwrap();
        prop_assert_eq!(last.0, ds.len());
        prop_assert!((last.1 - group_stats(&ds).unwrap().ate).abs() < 1e-12);
    }

    #[test]
    fn surrogates_are_non_increasing(z in -10.0f64..10.0, dz in 0.0f64..3.0) {
        for s in [Surrogate::Log, Surrogate::Poly { mu: 1.0, p: 3 }, Surrogate::poly_default()] {
            prop_assert!(s.value(z + dz) <= s.value(z));
        }
    }

    #[test]
    fn projection_is_idempotent_and_capped(w in prop::collection::vec(-10.0f64..10.0, 1..6), cap in 0.1f64..5.0) {
        let p = project_max_norm(&w, cap);
        prop_assert!(norm(&p) <= cap * (1.0 + 1e-12));
        let again = project_max_norm(&p, cap);
        for (a, b) in again.iter().zip(&p) {
            prop_assert!((a - b).abs() <= 1e-12 * cap);
        }
    }

    #[test]
    fn dominating_surrogate_loss_bounds_risks(ds in dataset(50, 2), w in prop::collection::vec(-2.0f64..2.0, 2)) {
        let scores: Vec<f64> = (0..ds.len()).map(|i| ds.row(i)[0] * w[0] + ds.row(i)[1] * w[1]).collect();
        let (rt, rc) = group_risks(&scores, &ds, TiePolicy::Full).unwrap();
        for s in [Surrogate::Log, Surrogate::Poly { mu: 1.0, p: 3 }] {
            let loss = PairwiseObjective::new(&ds, s, false).unwrap().loss(&w).unwrap();
            prop_assert!(loss >= rt + rc - 1e-12, "{} < {}", loss, rt + rc);
        }
    }

    #[test]
    fn baseline_predictions_in_unit_interval(
        wt in prop::collection::vec(-50.0f64..50.0, 3),
        wc in prop::collection::vec(-50.0f64..50.0, 3),
        x in prop::collection::vec(-5.0f64..5.0, 3),
        bt in -20.0f64..20.0,
        bc in -20.0f64..20.0,
    ) {
        let tm = TwoModelScorer::new(LinearScorer::new(wt.clone(), bt).unwrap(), LinearScorer::new(wc, bc).unwrap()).unwrap();
        let cvt = CvtScorer { model_z: LinearScorer::new(wt, bt).unwrap() };
        let a = predict_tm(&tm, &x).unwrap();
        let b = predict_cvt(&cvt, &x).unwrap();
        prop_assert!((-1.0..=1.0).contains(&a));
        prop_assert!((-1.0..=1.0).contains(&b));
    }

    #[test]
    fn sign_test_wins_are_symmetric(a in prop::collection::vec(0i32..5, 1..40), shift in prop::collection::vec(-2i32..3, 40)) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + f64::from(*s)).collect();
        if let (Ok(ab), Ok(ba)) = (binomial_sign_test(&a, &b, 0.05), binomial_sign_test(&b, &a, 0.05)) {
            prop_assert_eq!(ab.wins_a + ba.wins_a, ab.non_tied);
            prop_assert_eq!(ab.non_tied, ba.non_tied);
        }
    }

    #[test]
    fn complexity_terms_non_increasing_in_counts(n in 1usize..500, extra in 1usize..500, yt in 0.01f64..0.99, yc in 0.01f64..0.99) {
        let stats = GroupStats::from_means(yt, yc);
        let spec = FunctionClassSpec::new(0.8, 2.0).unwrap();
        let rad = |k| rademacher_upper(k, 2.0, 0.8, 0.05).unwrap();
        let small = c_delta(rad(n), rad(n), &stats, &spec, n, n, 0.05).unwrap();
        let big = c_delta(rad(n + extra), rad(n + extra), &stats, &spec, n + extra, n + extra, 0.05).unwrap();
        prop_assert!(big <= small);
        prop_assert!(tail_term(&stats, n + extra, n, 0.05).unwrap() <= tail_term(&stats, n, n, 0.05).unwrap());
    }
}

#[test]
fn decomposition_is_close_at_typical_base_rates() {
    use uplift_rank::dataset::{generate_synthetic, SyntheticSpec};
    for seed in 0..20u64 {
        let spec = SyntheticSpec::new(600, 2, 0.5, vec![0.6, -0.4], vec![0.5, 0.3], seed).with_intercepts(-1.8, 0.2);
        let ds = generate_synthetic(&spec).unwrap().dataset;
        let scores: Vec<f64> = (0..ds.len()).map(|i| ds.row(i)[0] - 0.7 * ds.row(i)[1]).collect();
        let (rt, rc) = group_risks(&scores, &ds, TiePolicy::Half).unwrap();
        let stats = group_stats(&ds).unwrap();
        let gap = (auuc(&scores, &ds).unwrap() - auuc_decomposed(&stats, rt, rc).unwrap()).abs();
        let m = ds.group_len(Group::Treatment).min(ds.group_len(Group::Control)) as f64;
        assert!(gap <= 4.0 / m, "seed {seed}: {gap}");
    }
}

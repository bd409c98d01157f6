use exrec::datamodel::{Catalog, Exercise, Interaction};
use exrec::filter::{build_candidate_set, exercise_difficulty, exercise_weight, FilterConfig};
use proptest::prelude::*;

/// Catalog with bare numeric ids in a scrambled order, so that the tie-break
/// has to compare them as numbers.
fn arb_world() -> impl Strategy<Value = (Catalog, Vec<f64>, Vec<u64>)> {
    (1usize..6, 1usize..=50).prop_flat_map(|(m, n)| {
        let coverage = prop::collection::vec(prop::collection::vec(any::<bool>(), m), n);
        // A coarse mastery grid produces plenty of exact weight ties.
        let mastery = prop::collection::vec((0u32..=4).prop_map(|q| f64::from(q) / 4.0), m);
        let ids = Just((0..n as u64).map(|i| i * 7 + 3).collect::<Vec<_>>()).prop_shuffle();
        (coverage, mastery, ids).prop_map(move |(cov, mastery, ids)| {
            let exercises = cov
                .into_iter()
                .zip(&ids)
                .map(|(mut bits, id)| {
                    if !bits.iter().any(|&b| b) {
                        bits[0] = true;
                    }
                    Exercise {
                        id: id.to_string(),
                        coverage: bits
                            .into_iter()
                            .map(|b| if b { 1.0 } else { 0.0 })
                            .collect(),
                    }
                })
                .collect();
            (Catalog::new(exercises, m).unwrap(), mastery, ids)
        })
    })
}

fn oracle_difficulty(mastery: &[f64], coverage: &[f64]) -> f64 {
    let mut p = 1.0;
    for k in 0..mastery.len() {
        if coverage[k] > 0.0 {
            p *= mastery[k];
        }
    }
    1.0 - p
}

/// Exercise indices whose rank, counted against every other eligible
/// exercise, falls below `size`.
fn oracle_selection(
    catalog: &Catalog,
    mastery: &[f64],
    delta: f64,
    size: usize,
    banned: &[bool],
) -> Vec<usize> {
    let eligible: Vec<usize> = (0..catalog.len()).filter(|&i| !banned[i]).collect();
    let weight = |i: usize| (delta - oracle_difficulty(mastery, catalog.coverage(i))).abs();
    let id = |i: usize| catalog.get(i).id.parse::<u64>().unwrap();
    let mut ranked: Vec<(usize, usize)> = eligible
        .iter()
        .map(|&i| {
            let ahead = eligible
                .iter()
                .filter(|&&j| weight(j) < weight(i) || (weight(j) == weight(i) && id(j) < id(i)))
                .count();
            (ahead, i)
        })
        .collect();
    ranked.sort_unstable();
    ranked
        .into_iter()
        .filter(|&(r, _)| r < size)
        .map(|(_, i)| i)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn selection_matches_exhaustive_ranking(
        (catalog, mastery, _ids) in arb_world(),
        size in 1usize..60,
        delta in 0.0f64..=1.0,
    ) {
        let cfg = FilterConfig { delta, size, exclude_solved: false };
        let set = build_candidate_set("s", &mastery, &[], &catalog, &cfg);
        let banned = vec![false; catalog.len()];
        prop_assert_eq!(set.exercises(), oracle_selection(&catalog, &mastery, delta, size, &banned));
        prop_assert_eq!(set.short, catalog.len() < size);
        prop_assert!(set.len() <= size);
        for c in &set.items {
            let d = oracle_difficulty(&mastery, catalog.coverage(c.exercise));
            prop_assert!((0.0..=1.0).contains(&c.difficulty));
            prop_assert!((c.difficulty - d).abs() <= 1e-12);
        }
    }

    #[test]
    fn inside_weights_never_exceed_outside_weights(
        (catalog, mastery, _ids) in arb_world(),
        size in 1usize..50,
        delta in 0.0f64..=1.0,
    ) {
        let cfg = FilterConfig { delta, size, exclude_solved: false };
        let set = build_candidate_set("s", &mastery, &[], &catalog, &cfg);
        prop_assert!(set.items.windows(2).all(|w| w[0].weight <= w[1].weight));
        let inside: std::collections::BTreeSet<usize> = set.exercises().into_iter().collect();
        prop_assert_eq!(inside.len(), set.len());
        let max_in = set.items.iter().map(|c| c.weight).fold(f64::NEG_INFINITY, f64::max);
        for (i, e) in catalog.iter() {
            if !inside.contains(&i) {
                prop_assert!(max_in <= exercise_weight(delta, exercise_difficulty(&mastery, &e.coverage)));
            }
        }
    }

    #[test]
    fn solved_exercises_are_left_out(
        (catalog, mastery, _ids) in arb_world(),
        answers in prop::collection::vec((0usize..50, any::<bool>()), 0..30),
        size in 1usize..60,
    ) {
        let history: Vec<Interaction> = answers
            .iter()
            .filter(|(e, _)| *e < catalog.len())
            .enumerate()
            .map(|(p, &(exercise, correct))| Interaction { exercise, correct, position: p as u32 })
            .collect();
        let mut banned = vec![false; catalog.len()];
        for it in history.iter().filter(|it| it.correct) {
            banned[it.exercise] = true;
        }
        let cfg = FilterConfig { size, ..Default::default() };
        let set = build_candidate_set("s", &mastery, &history, &catalog, &cfg);
        prop_assert_eq!(set.exercises(), oracle_selection(&catalog, &mastery, cfg.delta, size, &banned));
        prop_assert_eq!(&set, &build_candidate_set("s", &mastery, &history, &catalog, &cfg));
    }

    #[test]
    fn difficulty_falls_as_mastery_rises(
        (catalog, mastery, _ids) in arb_world(),
        k in 0usize..6,
        bump in 0.0f64..1.0,
    ) {
        let k = k % catalog.concept_count();
        let mut higher = mastery.clone();
        higher[k] = (higher[k] + bump).min(1.0);
        for (_, e) in catalog.iter() {
            prop_assert!(exercise_difficulty(&higher, &e.coverage) <= exercise_difficulty(&mastery, &e.coverage));
        }
    }

    #[test]
    fn weight_is_symmetric_about_the_target(d in 0u32..=1024, x in 0u32..=512) {
        prop_assume!(d + x <= 1024 && x <= d);
        // Multiples of 2^-10 keep both differences exact.
        let (delta, x) = (f64::from(d) / 1024.0, f64::from(x) / 1024.0);
        prop_assert_eq!(exercise_weight(delta, delta + x), exercise_weight(delta, delta - x));
    }
}

#[test]
fn equal_weights_keep_the_smallest_ids() {
    let exercises = ["30", "4", "100", "7"]
        .iter()
        .map(|id| Exercise {
            id: id.to_string(),
            coverage: vec![1.0],
        })
        .collect();
    let catalog = Catalog::new(exercises, 1).unwrap();
    let cfg = FilterConfig {
        size: 2,
        exclude_solved: false,
        ..Default::default()
    };
    let set = build_candidate_set("s", &[0.5], &[], &catalog, &cfg);
    let ids: Vec<&str> = set
        .exercises()
        .iter()
        .map(|&i| catalog.get(i).id.as_str())
        .collect();
    assert_eq!(ids, ["4", "7"]);
}

#[test]
fn oversized_request_returns_everything_and_flags_it() {
    let exercises = (0..3)
        .map(|i| Exercise {
            id: format!("e{i}"),
            coverage: vec![1.0, 0.0],
        })
        .collect();
    let catalog = Catalog::new(exercises, 2).unwrap();
    let cfg = FilterConfig {
        size: 10,
        exclude_solved: false,
        ..Default::default()
    };
    let set = build_candidate_set("s", &[0.3, 0.9], &[], &catalog, &cfg);
    assert_eq!(set.len(), 3);
    assert!(set.short);
}

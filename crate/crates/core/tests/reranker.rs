use exrec::datamodel::{Catalog, Exercise, Interaction, StudentGroup};
use exrec::filter::{Candidate, CandidateSet};
use exrec::reranker::*;
use exrec::tensorkit::ParameterSet;
use exrec::ModelError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn binary_catalog(rows: &[Vec<bool>], m: usize) -> Catalog {
    Catalog::new(
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                let mut coverage: Vec<f64> = r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                if !r.iter().any(|&b| b) {
                    coverage[i % m] = 1.0;
                }
                Exercise {
                    id: format!("{i}"),
                    coverage,
                }
            })
            .collect(),
        m,
    )
    .unwrap()
}

/// "Some member of `set` covers k", straight from the catalog rows.
fn any_covers(cat: &Catalog, set: &[usize], k: usize) -> f64 {
    if set.iter().any(|&e| cat.coverage(e)[k] == 1.0) {
        1.0
    } else {
        0.0
    }
}

fn subsets(items: &[usize]) -> Vec<Vec<usize>> {
    (0..1u32 << items.len())
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &e)| e)
                .collect()
        })
        .collect()
}

fn instance() -> impl Strategy<Value = (usize, Vec<Vec<bool>>)> {
    (1usize..=6).prop_flat_map(|m| {
        (
            Just(m),
            prop::collection::vec(prop::collection::vec(any::<bool>(), m), 2..=7),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn coverage_is_exact_monotone_and_submodular((m, rows) in instance()) {
        let cat = binary_catalog(&rows, m);
        let n = cat.len();
        // B is every exercise but the last; e is the last one.
        let e = n - 1;
        let b: Vec<usize> = (0..e).collect();
        let all_b = subsets(&b);
        for a in &all_b {
            let cov_a = coverage(&cat, a);
            for k in 0..m {
                prop_assert_eq!(cov_a[k], any_covers(&cat, a, k));
            }
        }
        let cov_b = coverage(&cat, &b);
        let mut be = b.clone();
        be.push(e);
        let gain_b: Vec<f64> = coverage(&cat, &be).iter().zip(&cov_b).map(|(x, y)| x - y).collect();
        for a in &all_b {
            let cov_a = coverage(&cat, a);
            let mut ae = a.clone();
            ae.push(e);
            let cov_ae = coverage(&cat, &ae);
            for k in 0..m {
                prop_assert!(cov_a[k] <= cov_b[k]);
                prop_assert!(cov_ae[k] - cov_a[k] >= gain_b[k]);
            }
        }
    }

    #[test]
    fn marginal_diversity_marks_sole_covers((m, rows) in instance()) {
        let cat = binary_catalog(&rows, m);
        let set: Vec<usize> = (0..cat.len()).collect();
        let fast = marginal_diversities(&cat, &set);
        for (l, fast_l) in fast.iter().enumerate() {
            let d = marginal_diversity(&cat, &set, l).unwrap();
            prop_assert_eq!(&d, fast_l);
            for k in 0..m {
                let covers = set.iter().filter(|&&e| cat.coverage(e)[k] == 1.0).count();
                let sole = cat.coverage(set[l])[k] == 1.0 && covers == 1;
                prop_assert!((0.0..=1.0).contains(&d[k]));
                prop_assert_eq!(d[k] == 1.0, sole);
            }
        }
    }

    #[test]
    fn concept_split_counts_every_covered_concept(
        (m, rows) in instance(),
        picks in prop::collection::vec((0usize..7, any::<bool>()), 0..30),
    ) {
        let cat = binary_catalog(&rows, m);
        let items: Vec<Interaction> = picks
            .iter()
            .enumerate()
            .map(|(p, &(e, correct))| Interaction { exercise: e % cat.len(), correct, position: p as u32 })
            .collect();
        let parts = split_by_concept(&items, &cat);
        prop_assert_eq!(parts.len(), m);
        let expected: usize = items.iter().map(|it| cat.get(it.exercise).concepts().count()).sum();
        prop_assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), expected);
        for (k, part) in parts.iter().enumerate() {
            prop_assert!(part.windows(2).all(|w| w[0].position < w[1].position));
            prop_assert!(part.iter().all(|it| cat.coverage(it.exercise)[k] == 1.0));
        }
    }

    #[test]
    fn ranking_ignores_positive_affine_maps(
        scores in prop::collection::vec(-5.0f64..5.0, 1..20),
        a in 0.01f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("e{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        // Round to a grid so the affine map cannot break or create ties.
        let scores: Vec<f64> = scores.iter().map(|s| (s * 8.0).round() / 8.0).collect();
        let moved: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let base = rank_by_score(&scores, &ids);
        prop_assert_eq!(rank_by_score(&moved, &ids), base.clone());
        let shifted: Vec<f64> = scores.iter().map(|s| s + 0.5).collect();
        prop_assert_eq!(rank_by_score(&shifted, &ids), base);
    }
}

fn small_shape(concepts: usize, exercises: usize, sigma_init: SigmaInit) -> NetShape {
    NetShape {
        rep_dim: 4,
        concepts,
        exercises,
        q_s: 3,
        q_e: 3,
        q_h: 4,
        heads: 2,
        head_hidden: 5,
        sigma_init,
    }
}

fn one_hot_catalog(m: usize) -> Catalog {
    Catalog::new(
        (0..m)
            .map(|k| Exercise {
                id: format!("{k}"),
                coverage: (0..m).map(|j| if j == k { 1.0 } else { 0.0 }).collect(),
            })
            .collect(),
        m,
    )
    .unwrap()
}

fn history(seq: &[(usize, bool)]) -> Vec<Interaction> {
    seq.iter()
        .enumerate()
        .map(|(p, &(e, correct))| Interaction {
            exercise: e,
            correct,
            position: p as u32,
        })
        .collect()
}

fn random_input(rng: &mut ChaCha8Rng, cat: &Catalog, l: usize) -> RerankInput {
    let cands: Vec<usize> = (0..l).map(|i| i % cat.len()).collect();
    let hist: Vec<(usize, bool)> = (0..12)
        .map(|_| (rng.random_range(0..cat.len()), rng.random_bool(0.5)))
        .collect();
    let rep = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    rerank_input(cat, rep, &cands, &history(&hist))
}

#[test]
fn relevance_context_shapes() {
    let cat = one_hot_catalog(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParameterSet::new();
    let net = RerankNet::new(&mut ps, &small_shape(3, 3, SigmaInit::Small), &mut rng);
    let one = random_input(&mut rng, &cat, 1);
    let h = net.relevance_context(&ps, &one).unwrap();
    assert_eq!(h.outputs.len(), 1);
    assert_eq!(h.outputs[0].len(), 8);
    let mut empty = one.clone();
    empty.candidates.clear();
    empty.coverage.clear();
    empty.marginal.clear();
    assert!(net.relevance_context(&ps, &empty).is_err());
}

#[test]
fn pace_distribution_is_bounded_and_symmetric() {
    let cat = one_hot_catalog(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps = ParameterSet::new();
    let net = RerankNet::new(&mut ps, &small_shape(2, 2, SigmaInit::Small), &mut rng);
    for _ in 0..20 {
        let input = random_input(&mut rng, &cat, 2);
        let w = net.pace_distribution(&ps, &input.pace).unwrap().omega;
        assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    // Both concepts practised with the same outcomes at the same positions.
    let steps = vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 1.0]];
    let w = net
        .pace_distribution(&ps, &[steps.clone(), steps])
        .unwrap()
        .omega;
    assert_eq!(w[0].to_bits(), w[1].to_bits());
    let w = net
        .pace_distribution(&ps, &[Vec::new(), Vec::new()])
        .unwrap()
        .omega;
    assert_eq!(w[0].to_bits(), w[1].to_bits());
}

#[test]
fn probabilistic_head_contracts() {
    let cat = one_hot_catalog(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParameterSet::new();
    let net = RerankNet::new(&mut ps, &small_shape(3, 3, SigmaInit::Small), &mut rng);
    for _ in 0..50 {
        let input = random_input(&mut rng, &cat, 5);
        let t = net.forward(&ps, &input, true, true).unwrap();
        assert!(t.mu.iter().all(|m| (0.0..=1.0).contains(m)));
        let phi = probabilistic_scores(&t.mu, &t.sigma_out, &[0.0; 5]).unwrap();
        for (p, m) in phi.iter().zip(&t.mu) {
            assert_eq!(p.to_bits(), m.to_bits());
        }
        let u = ucb_scores(&t.mu, &t.sigma_out).unwrap();
        for ((u, m), s) in u.iter().zip(&t.mu).zip(&t.sigma_out) {
            assert!(*s >= 0.0);
            assert!(u >= m);
        }
        let t_det = net.forward(&ps, &input, true, false).unwrap();
        assert_eq!(t_det.mu, t.mu);
        for (d, g) in t.delta.iter().zip(&input.marginal) {
            assert!(d.iter().zip(g).all(|(a, b)| *a >= 0.0 && a <= b));
        }
    }
}

#[test]
fn zero_initialised_spread_leaves_mean_untouched() {
    let cat = one_hot_catalog(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParameterSet::new();
    let net = RerankNet::new(&mut ps, &small_shape(3, 3, SigmaInit::Zero), &mut rng);
    for _ in 0..20 {
        let input = random_input(&mut rng, &cat, 4);
        let t = net.forward(&ps, &input, true, true).unwrap();
        assert!(t.sigma_out.iter().all(|s| *s <= 1e-6));
        let xi: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let phi = probabilistic_scores(&t.mu, &t.sigma_out, &xi).unwrap();
        for (p, m) in phi.iter().zip(&t.mu) {
            assert!((p - m).abs() <= 1e-6);
        }
    }
}

#[test]
fn sampled_score_variance_matches_spread() {
    let cat = one_hot_catalog(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParameterSet::new();
    let net = RerankNet::new(&mut ps, &small_shape(3, 3, SigmaInit::Small), &mut rng);
    let input = random_input(&mut rng, &cat, 3);
    let t = net.forward(&ps, &input, true, true).unwrap();
    let draws = 10_000;
    let samples: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let xi: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            probabilistic_scores(&t.mu, &t.sigma_out, &xi).unwrap()
        })
        .collect();
    for l in 0..3 {
        let mean = samples.iter().map(|s| s[l]).sum::<f64>() / draws as f64;
        let var = samples.iter().map(|s| (s[l] - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let expected = t.sigma_out[l].powi(2);
        assert!(
            (var - expected).abs() <= 0.05 * expected,
            "candidate {l}: variance {var} vs {expected}"
        );
    }
}

fn prepared(cat: &Catalog, student: &str, cands: &[usize], hist: &[Interaction]) -> Prepared {
    Prepared {
        student: student.into(),
        group: StudentGroup::Inactive,
        candidates: CandidateSet {
            student: student.into(),
            items: cands
                .iter()
                .map(|&e| Candidate {
                    exercise: e,
                    weight: 0.0,
                    difficulty: 0.7,
                })
                .collect(),
            capacity: cands.len(),
            short: false,
        },
        input: rerank_input(cat, vec![0.0; 4], cands, hist),
    }
}

/// A learner spending 90% of the practice on `focus`.
fn focused_history(rng: &mut ChaCha8Rng, m: usize, focus: usize, len: usize) -> Vec<Interaction> {
    let seq: Vec<(usize, bool)> = (0..len)
        .map(|_| {
            let k = if rng.random_bool(0.9) {
                focus
            } else {
                rng.random_range(0..m)
            };
            (k, rng.random_bool(0.5))
        })
        .collect();
    history(&seq)
}

fn dominant_concept_model(seed: u64) -> (Catalog, RerankModel) {
    let m = 4;
    let cat = one_hot_catalog(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cands: Vec<usize> = (0..m).collect();
    let instances: Vec<TrainingInstance> = (0..160)
        .map(|i| {
            let focus = rng.random_range(0..m);
            let hist = focused_history(&mut rng, m, focus, 20);
            let mut order = cands.clone();
            order.rotate_left(i % m);
            TrainingInstance {
                labels: order
                    .iter()
                    .map(|&e| if e == focus { 1.0 } else { 0.0 })
                    .collect(),
                prepared: prepared(&cat, "s", &order, &hist),
            }
        })
        .collect();
    let cfg = RerankConfig {
        q_s: 3,
        q_e: 3,
        q_h: 8,
        heads: 2,
        head_hidden: 8,
        epochs: 40,
        batch_size: 8,
        learning_rate: 0.01,
        seed,
        ..Default::default()
    };
    // The student representation is zero everywhere, so only the pace and
    // diversity path can tell which candidate matches the student.
    let model = train_reranker(&instances, &cat, 4, &cfg).unwrap();
    (cat, model)
}

#[test]
fn trained_model_ranks_the_dominant_concept_first() {
    let (cat, model) = dominant_concept_model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut first = 0;
    let (mut pace_top, mut pace_bottom) = (0, 0);
    let trials = 40;
    for t in 0..trials {
        let focus = t % 4;
        let hist = focused_history(&mut rng, 4, focus, 20);
        let p = prepared(&cat, "probe", &[0, 1, 2, 3], &hist);
        let out = rerank(&model, &cat, &p, 4, ScoreMode::Deterministic).unwrap();
        if out.items[0].exercise == focus {
            first += 1;
        }
        let best = (0..4)
            .max_by(|&a, &b| out.pace[a].total_cmp(&out.pace[b]))
            .unwrap();
        let worst = (0..4)
            .min_by(|&a, &b| out.pace[a].total_cmp(&out.pace[b]))
            .unwrap();
        pace_top += usize::from(best == focus);
        pace_bottom += usize::from(worst == focus);
    }
    assert_eq!(
        first, trials,
        "dominant concept ranked first in {first}/{trials}"
    );
    // The mean head may weight the gain either way, so only the separation
    // of the focus is identified, not its sign.
    assert!(
        pace_top == trials || pace_bottom == trials,
        "pace singles out the focus: top {pace_top}, bottom {pace_bottom} of {trials}"
    );
}

#[test]
fn rerank_output_contracts() {
    let (cat, model) = dominant_concept_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hist = focused_history(&mut rng, 4, 2, 15);
    let p = prepared(&cat, "s", &[3, 1, 0, 2], &hist);
    let all = rerank(&model, &cat, &p, 10, ScoreMode::Deterministic).unwrap();
    let mut ids = all.exercises();
    assert_eq!(ids.len(), 4);
    assert!(all.items.windows(2).all(|w| w[0].score >= w[1].score));
    ids.sort_unstable();
    assert_eq!(ids, vec![0, 1, 2, 3]);
    let top2 = rerank(&model, &cat, &p, 2, ScoreMode::Deterministic).unwrap();
    assert_eq!(top2.exercises(), all.exercises()[..2].to_vec());
    assert!(rerank(&model, &cat, &p, 0, ScoreMode::Deterministic).is_err());

    let mut csv = Vec::new();
    write_rerank(&[top2], &cat, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "student_id,rank,exercise_id,score,mode");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("s,1,") && lines[1].ends_with(",det"));
}

#[test]
fn untrained_model_refuses_to_rank() {
    let cat = one_hot_catalog(2);
    let model = RerankModel::init(&cat, 4, &RerankConfig::default()).unwrap();
    let p = prepared(&cat, "s", &[0, 1], &history(&[(0, true)]));
    assert!(matches!(
        rerank(&model, &cat, &p, 1, ScoreMode::Deterministic),
        Err(ModelError::NotTrained(_))
    ));
}

#[test]
fn training_is_reproducible_in_both_modes() {
    let cat = one_hot_catalog(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let instances: Vec<TrainingInstance> = (0..12)
        .map(|_| {
            let hist = focused_history(&mut rng, 3, 1, 8);
            TrainingInstance {
                labels: vec![0.0, 1.0, 0.0],
                prepared: prepared(&cat, "s", &[0, 1, 2], &hist),
            }
        })
        .collect();
    for mode in [ScoreMode::Deterministic, ScoreMode::Probabilistic] {
        let cfg = RerankConfig {
            q_s: 2,
            q_e: 2,
            q_h: 4,
            head_hidden: 4,
            epochs: 3,
            batch_size: 4,
            mode,
            seed: 3,
            ..Default::default()
        };
        let a = train_reranker(&instances, &cat, 4, &cfg).unwrap();
        let b = train_reranker(&instances, &cat, 4, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        for (name, p) in a.params.iter() {
            assert_eq!(p.value, b.params.get(name).clone(), "{name}");
        }
    }
}

#[test]
fn config_rejects_bad_heads() {
    let bad = RerankConfig {
        heads: 3,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    for h in HEAD_CHOICES {
        let cfg = RerankConfig {
            heads: h,
            q_h: 48,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok(), "{h} heads");
    }
}

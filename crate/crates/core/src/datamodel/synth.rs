//! Seeded long-tailed student population with latent per-concept mastery.
//!
//! Each student has an ability, a concept-preference vector (normalised
//! Gamma draws, i.e. a Dirichlet sample) and a learning rate. Concept mastery
//! is `σ(ability + ease_k + gain · practice_k)`, where practice grows by 1 per
//! correct and 0.5 per incorrect attempt on an exercise covering `k`; an
//! answer is correct with probability `Π_k mastery_k` over covered concepts.
//!
//! At every step the student either stays on the previous concept or draws a
//! new one in proportion to `preference_k · (1.05 − mastery_k)`, then picks
//! an exercise of that concept favouring those whose true difficulty is near
//! `target_difficulty` and avoiding ones already solved.

use std::io::{BufWriter, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal};

use super::{Catalog, DataError, Dataset, Exercise, Interaction, InteractionSequence};
use crate::tensorkit::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub students: usize,
    pub concepts: usize,
    pub exercises: usize,
    /// Pareto shape of the sequence-length distribution; smaller is heavier-tailed.
    pub skew: f64,
    pub min_length: usize,
    pub max_length: usize,
    pub second_concept_prob: f64,
    pub stickiness: f64,
    pub target_difficulty: f64,
    pub difficulty_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            students: 200,
            concepts: 20,
            exercises: 100,
            skew: 1.5,
            min_length: 10,
            max_length: 2000,
            second_concept_prob: 0.3,
            stickiness: 0.5,
            target_difficulty: 0.7,
            difficulty_spread: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::Config(msg.to_string()));
        if self.students == 0 {
            return bad("synthetic population needs at least one student");
        }
        if self.concepts == 0 {
            return bad("synthetic population needs at least one concept");
        }
        if self.exercises < self.concepts {
            return bad("need at least as many exercises as concepts so every concept is covered");
        }
        if !(self.skew > 0.0 && self.skew.is_finite()) {
            return bad("skew exponent must be positive");
        }
        if self.min_length == 0 || self.max_length < self.min_length {
            return bad("sequence lengths need 1 <= min_length <= max_length");
        }
        for (name, p) in [
            ("second_concept_prob", self.second_concept_prob),
            ("stickiness", self.stickiness),
            ("target_difficulty", self.target_difficulty),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} must lie in [0,1]")));
            }
        }
        if !(self.difficulty_spread > 0.0) {
            return bad("difficulty_spread must be positive");
        }
        Ok(())
    }
}

/// Hidden parameters of a generated population.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    pub ability: Vec<f64>,
    pub ease: Vec<f64>,
    pub gain: Vec<f64>,
    pub preference: Vec<Vec<f64>>,
    /// Student ids in the same order as the per-student vectors.
    pub students: Vec<String>,
}

impl SyntheticTruth {
    fn practice(catalog: &Catalog, items: &[Interaction]) -> Vec<f64> {
        let mut practice = vec![0.0; catalog.concept_count()];
        for it in items {
            for k in catalog.get(it.exercise).concepts() {
                practice[k] += if it.correct { 1.0 } else { 0.5 };
            }
        }
        practice
    }

    fn mastery_from_practice(&self, s: usize, practice: &[f64]) -> Vec<f64> {
        practice
            .iter()
            .zip(&self.ease)
            .map(|(p, e)| sigmoid(self.ability[s] + e + self.gain[s] * p))
            .collect()
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.students.iter().position(|s| s == id)
    }

    /// Latent mastery of student `s` after answering `items`.
    pub fn mastery_after(&self, s: usize, catalog: &Catalog, items: &[Interaction]) -> Vec<f64> {
        self.mastery_from_practice(s, &Self::practice(catalog, items))
    }

    pub fn initial_mastery(&self, s: usize) -> Vec<f64> {
        self.mastery_from_practice(s, &vec![0.0; self.ease.len()])
    }

    /// Probability of a correct answer to exercise `e` given mastery.
    pub fn success_probability(catalog: &Catalog, e: usize, mastery: &[f64]) -> f64 {
        catalog.get(e).concepts().map(|k| mastery[k]).product()
    }
}

/// Stratified Pareto lengths: the `i`-th of `n` students gets the mean of the
/// `i`-th equal-probability slice of the distribution, jittered by ±10%, so
/// the tail mass does not hinge on a single extreme draw.
fn sequence_lengths<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<usize> {
    let n = cfg.students as f64;
    let a = 1.0 - 1.0 / cfg.skew;
    // ∫ s^(-1/α) ds over a survival slice, times n, times the scale.
    let slice_mean = |hi: f64, lo: f64| {
        let mass = if a.abs() < 1e-12 {
            hi.ln() - lo.max(f64::MIN_POSITIVE).ln()
        } else {
            (hi.powf(a) - lo.powf(a)) / a
        };
        cfg.min_length as f64 * n * mass
    };
    let mut lengths: Vec<usize> = (0..cfg.students)
        .map(|i| {
            let hi = 1.0 - i as f64 / n;
            let lo = 1.0 - (i + 1) as f64 / n;
            let mean = slice_mean(hi, lo);
            let len = if mean.is_finite() {
                mean * rng.random_range(0.9..1.1)
            } else {
                f64::MAX
            };
            (len.round().min(usize::MAX as f64) as usize).clamp(cfg.min_length, cfg.max_length)
        })
        .collect();
    lengths.shuffle(rng);
    lengths
}

fn build_catalog<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Catalog, DataError> {
    let m = cfg.concepts;
    let exercises = (0..cfg.exercises)
        .map(|e| {
            let mut coverage = vec![0.0; m];
            coverage[e % m] = 1.0;
            if m > 1 && rng.random_bool(cfg.second_concept_prob) {
                let other = (e % m + rng.random_range(1..m)) % m;
                coverage[other] = 1.0;
            }
            Exercise {
                id: format!("e{e:04}"),
                coverage,
            }
        })
        .collect();
    Catalog::new(exercises, m)
}

/// Generates a dataset and the latent parameters that produced it.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, SyntheticTruth), DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.concepts;
    let catalog = build_catalog(cfg, &mut rng)?;
    let lengths = sequence_lengths(cfg, &mut rng);

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let ease: Vec<f64> = (0..m).map(|_| std_normal.sample(&mut rng)).collect();
    let by_concept: Vec<Vec<usize>> = (0..m)
        .map(|k| {
            catalog
                .iter()
                .filter(|(_, e)| e.coverage[k] > 0.0)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let mut truth = SyntheticTruth {
        ability: Vec::with_capacity(cfg.students),
        ease,
        gain: Vec::with_capacity(cfg.students),
        preference: Vec::with_capacity(cfg.students),
        students: Vec::with_capacity(cfg.students),
    };
    let mut students = Vec::with_capacity(cfg.students);
    for (s, &len) in lengths.iter().enumerate() {
        let id = format!("s{s:04}");
        let ability = 1.5 * std_normal.sample(&mut rng);
        let gain = rng.random_range(0.1..0.4);
        let concentration = (rng.random_range(0.1f64.ln()..2f64.ln())).exp();
        let gamma = Gamma::new(concentration, 1.0).expect("valid gamma");
        let mut pref: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng) + 1e-6).collect();
        let total: f64 = pref.iter().sum();
        pref.iter_mut().for_each(|p| *p /= total);
        truth.ability.push(ability);
        truth.gain.push(gain);
        truth.preference.push(pref.clone());
        truth.students.push(id.clone());

        let mut practice = vec![0.0; m];
        let mut solved = vec![false; catalog.len()];
        let mut previous: Option<usize> = None;
        let mut items = Vec::with_capacity(len);
        for pos in 0..len {
            let mastery = truth.mastery_from_practice(s, &practice);
            let concept = match previous {
                Some(k) if rng.random_bool(cfg.stickiness) => k,
                _ => {
                    let w: Vec<f64> = (0..m).map(|k| pref[k] * (1.05 - mastery[k])).collect();
                    WeightedIndex::new(&w)
                        .expect("positive weights")
                        .sample(&mut rng)
                }
            };
            let pool = &by_concept[concept];
            let w: Vec<f64> = pool
                .iter()
                .map(|&e| {
                    let d = 1.0 - SyntheticTruth::success_probability(&catalog, e, &mastery);
                    let z = (d - cfg.target_difficulty) / cfg.difficulty_spread;
                    let penalty = if solved[e] { 0.05 } else { 1.0 };
                    (-0.5 * z * z).exp().max(1e-9) * penalty
                })
                .collect();
            let exercise = pool[WeightedIndex::new(&w)
                .expect("positive weights")
                .sample(&mut rng)];
            let p = SyntheticTruth::success_probability(&catalog, exercise, &mastery);
            let correct = rng.random_bool(p.clamp(0.0, 1.0));
            for k in catalog.get(exercise).concepts() {
                practice[k] += if correct { 1.0 } else { 0.5 };
            }
            solved[exercise] |= correct;
            previous = Some(concept);
            items.push(Interaction {
                exercise,
                correct,
                position: pos as u32,
            });
        }
        students.push(InteractionSequence { student: id, items });
    }
    Ok((Dataset::new(students, catalog)?, truth))
}

/// Writes `student_id,concept_id,initial_mastery,final_mastery`, one row per
/// student and concept.
pub fn write_latent_mastery<W: Write>(
    truth: &SyntheticTruth,
    ds: &Dataset,
    out: W,
) -> Result<(), DataError> {
    let mut w = BufWriter::new(out);
    writeln!(w, "student_id,concept_id,initial_mastery,final_mastery")?;
    for (s, id) in truth.students.iter().enumerate() {
        let seq = ds
            .student(id)
            .ok_or_else(|| DataError::Invalid(format!("student `{id}` missing from dataset")))?;
        let init = truth.initial_mastery(s);
        let fin = truth.mastery_after(s, &ds.catalog, &seq.items);
        for k in 0..init.len() {
            writeln!(w, "{id},{k},{},{}", init[k], fin[k])?;
        }
    }
    w.flush()?;
    Ok(())
}

//! Difficulty-aware candidate selection.
//!
//! Predicted mastery turns into a per-student difficulty for every exercise;
//! exercises closest to the target difficulty form the candidate set.

use std::io::Write;

use crate::datamodel::{compare_ids, Catalog, ExerciseIndex, Interaction};

pub const DEFAULT_TARGET_DIFFICULTY: f64 = 0.7;
pub const DEFAULT_CANDIDATES: usize = 50;

/// `1 − Π ℙ(k)` over the concepts the exercise covers.
pub fn exercise_difficulty(mastery: &[f64], coverage: &[f64]) -> f64 {
    debug_assert_eq!(mastery.len(), coverage.len());
    let p: f64 = coverage
        .iter()
        .zip(mastery)
        .filter(|(t, _)| **t > 0.0)
        .map(|(_, m)| m.clamp(0.0, 1.0))
        .product();
    1.0 - p
}

/// Distance of a difficulty from the target.
pub fn exercise_weight(delta: f64, difficulty: f64) -> f64 {
    (delta - difficulty).abs()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub delta: f64,
    pub size: usize,
    /// Leave out exercises the student has already answered correctly.
    pub exclude_solved: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_TARGET_DIFFICULTY,
            size: DEFAULT_CANDIDATES,
            exclude_solved: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub exercise: ExerciseIndex,
    pub weight: f64,
    pub difficulty: f64,
}

/// Candidates in ascending weight order.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub student: String,
    pub items: Vec<Candidate>,
    pub capacity: usize,
    /// Set when fewer eligible exercises than `capacity` existed.
    pub short: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn exercises(&self) -> Vec<ExerciseIndex> {
        self.items.iter().map(|c| c.exercise).collect()
    }
}

/// Weights every eligible exercise, sorts ascending (ties by exercise id)
/// and keeps the first `cfg.size`.
pub fn build_candidate_set(
    student: &str,
    mastery: &[f64],
    history: &[Interaction],
    catalog: &Catalog,
    cfg: &FilterConfig,
) -> CandidateSet {
    assert!(cfg.size >= 1, "candidate set size must be positive");
    let mut solved = vec![false; catalog.len()];
    if cfg.exclude_solved {
        for it in history.iter().filter(|it| it.correct) {
            solved[it.exercise] = true;
        }
    }
    let mut items: Vec<Candidate> = catalog
        .iter()
        .filter(|(i, _)| !solved[*i])
        .map(|(i, e)| {
            let difficulty = exercise_difficulty(mastery, &e.coverage);
            Candidate {
                exercise: i,
                weight: exercise_weight(cfg.delta, difficulty),
                difficulty,
            }
        })
        .collect();
    items.sort_by(|a, b| {
        a.weight
            .total_cmp(&b.weight)
            .then_with(|| compare_ids(&catalog.get(a.exercise).id, &catalog.get(b.exercise).id))
    });
    let short = items.len() < cfg.size;
    items.truncate(cfg.size);
    CandidateSet {
        student: student.to_string(),
        items,
        capacity: cfg.size,
        short,
    }
}

/// Writes `student_id,rank,exercise_id,weight,difficulty` rows.
pub fn write_candidates<W: Write>(
    sets: &[CandidateSet],
    catalog: &Catalog,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "student_id,rank,exercise_id,weight,difficulty")?;
    for set in sets {
        for (r, c) in set.items.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.10},{:.10}",
                set.student,
                r + 1,
                catalog.get(c.exercise).id,
                c.weight,
                c.difficulty
            )?;
        }
    }
    Ok(())
}

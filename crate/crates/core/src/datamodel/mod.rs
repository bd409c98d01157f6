//! Students, exercises and interaction logs.

mod ingest;
mod split;
mod synth;

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

pub use ingest::{
    ingest_interactions, read_dataset, write_concept_map, write_dataset, write_interactions,
};
pub use split::{
    partition_students, split_train_test, test_count, truncate_sequence, LongTailSplit,
    StudentGroup, TrainTestSplit,
};
pub use synth::{generate_synthetic, write_latent_mastery, SynthConfig, SyntheticTruth};

/// Dense index of an exercise in its [`Catalog`].
pub type ExerciseIndex = usize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file} line {line}: {msg}")]
    Parse {
        file: String,
        line: u64,
        msg: String,
    },
    #[error("{file} line {line}: unknown exercise `{id}`")]
    UnknownExercise { file: String, line: u64, id: String },
    #[error("{file} line {line}: correctness must be 0 or 1, got `{value}`")]
    InvalidCorrectness {
        file: String,
        line: u64,
        value: String,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Orders identifiers numerically when both parse as integers, otherwise
/// lexicographically, so `s2 < s10` only when ids are bare numbers.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// One answered exercise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub exercise: ExerciseIndex,
    pub correct: bool,
    /// Ordinal position in the student's complete history.
    pub position: u32,
}

impl Interaction {
    pub fn outcome(&self) -> f64 {
        if self.correct {
            1.0
        } else {
            0.0
        }
    }
}

/// A student's time-ordered answers.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSequence {
    pub student: String,
    pub items: Vec<Interaction>,
}

impl InteractionSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Exercise with its binary knowledge-concept coverage vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Exercise {
    pub id: String,
    pub coverage: Vec<f64>,
}

impl Exercise {
    pub fn concepts(&self) -> impl Iterator<Item = usize> + '_ {
        self.coverage
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0.0)
            .map(|(k, _)| k)
    }
}

/// Exercises indexed densely, ordered by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    exercises: Vec<Exercise>,
    by_id: HashMap<String, ExerciseIndex>,
    concept_count: usize,
}

impl Catalog {
    /// Builds a catalog; exercises are sorted by id and every coverage vector
    /// must have length `concept_count` with at least one covered concept.
    pub fn new(mut exercises: Vec<Exercise>, concept_count: usize) -> Result<Self, DataError> {
        if concept_count == 0 {
            return Err(DataError::Config(
                "at least one knowledge concept is required".into(),
            ));
        }
        exercises.sort_by(|a, b| compare_ids(&a.id, &b.id));
        let mut by_id = HashMap::with_capacity(exercises.len());
        for (i, e) in exercises.iter().enumerate() {
            if e.coverage.len() != concept_count {
                return Err(DataError::Invalid(format!(
                    "exercise `{}` coverage has length {}, expected {concept_count}",
                    e.id,
                    e.coverage.len()
                )));
            }
            if !e.coverage.iter().any(|&t| t > 0.0) {
                return Err(DataError::Invalid(format!(
                    "exercise `{}` covers no concept",
                    e.id
                )));
            }
            if e.coverage.iter().any(|&t| !(0.0..=1.0).contains(&t)) {
                return Err(DataError::Invalid(format!(
                    "exercise `{}` coverage outside [0,1]",
                    e.id
                )));
            }
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(DataError::Invalid(format!("duplicate exercise `{}`", e.id)));
            }
        }
        Ok(Self {
            exercises,
            by_id,
            concept_count,
        })
    }

    pub fn len(&self) -> usize {
        self.exercises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exercises.is_empty()
    }

    pub fn concept_count(&self) -> usize {
        self.concept_count
    }

    pub fn get(&self, idx: ExerciseIndex) -> &Exercise {
        &self.exercises[idx]
    }

    pub fn coverage(&self, idx: ExerciseIndex) -> &[f64] {
        &self.exercises[idx].coverage
    }

    pub fn index_of(&self, id: &str) -> Option<ExerciseIndex> {
        self.by_id.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ExerciseIndex, &Exercise)> {
        self.exercises.iter().enumerate()
    }
}

/// Students and the catalog they practise on.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Sorted by student id.
    students: Vec<InteractionSequence>,
    by_id: HashMap<String, usize>,
    pub catalog: Catalog,
}

impl Dataset {
    /// Validates closure of ids and non-empty sequences; students are sorted by id.
    pub fn new(
        mut students: Vec<InteractionSequence>,
        catalog: Catalog,
    ) -> Result<Self, DataError> {
        students.sort_by(|a, b| compare_ids(&a.student, &b.student));
        let mut by_id = HashMap::with_capacity(students.len());
        for (i, s) in students.iter().enumerate() {
            if s.items.is_empty() {
                return Err(DataError::Invalid(format!(
                    "student `{}` has no interactions",
                    s.student
                )));
            }
            if let Some(bad) = s.items.iter().find(|it| it.exercise >= catalog.len()) {
                return Err(DataError::Invalid(format!(
                    "student `{}` references exercise index {}",
                    s.student, bad.exercise
                )));
            }
            if s.items.windows(2).any(|w| w[0].position >= w[1].position) {
                return Err(DataError::Invalid(format!(
                    "student `{}` positions are not strictly increasing",
                    s.student
                )));
            }
            if by_id.insert(s.student.clone(), i).is_some() {
                return Err(DataError::Invalid(format!(
                    "duplicate student `{}`",
                    s.student
                )));
            }
        }
        Ok(Self {
            students,
            by_id,
            catalog,
        })
    }

    pub fn students(&self) -> &[InteractionSequence] {
        &self.students
    }

    pub fn student(&self, id: &str) -> Option<&InteractionSequence> {
        self.by_id.get(id).map(|&i| &self.students[i])
    }

    pub fn student_count(&self) -> usize {
        self.students.len()
    }

    pub fn exercise_count(&self) -> usize {
        self.catalog.len()
    }

    pub fn concept_count(&self) -> usize {
        self.catalog.concept_count()
    }

    pub fn interaction_count(&self) -> usize {
        self.students.iter().map(InteractionSequence::len).sum()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            students: self.student_count(),
            concepts: self.concept_count(),
            exercises: self.exercise_count(),
            interactions: self.interaction_count(),
        }
    }
}

/// Headline counts in the usual dataset-description layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSummary {
    pub students: usize,
    pub concepts: usize,
    pub exercises: usize,
    pub interactions: usize,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{:>10} {:>6} {:>10} {:>13}",
            "Students", "KCs", "Exercises", "Interactions"
        )?;
        write!(
            f,
            "{:>10} {:>6} {:>10} {:>13}",
            self.students, self.concepts, self.exercises, self.interactions
        )
    }
}

//! Active/inactive partitioning, temporal train/test splits and truncation.

use std::collections::BTreeSet;

use super::{compare_ids, DataError, Dataset, InteractionSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StudentGroup {
    Active,
    Inactive,
}

impl StudentGroup {
    pub fn name(self) -> &'static str {
        match self {
            StudentGroup::Active => "active",
            StudentGroup::Inactive => "inactive",
        }
    }
}

/// Students split by activity: the most prolific fraction versus the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct LongTailSplit {
    pub active: BTreeSet<String>,
    pub inactive: BTreeSet<String>,
    pub active_fraction: f64,
}

impl LongTailSplit {
    pub fn group(&self, student: &str) -> StudentGroup {
        if self.active.contains(student) {
            StudentGroup::Active
        } else {
            StudentGroup::Inactive
        }
    }

    pub fn is_active(&self, student: &str) -> bool {
        self.active.contains(student)
    }
}

/// Marks the top `ceil(fraction·N)` students by interaction count as active;
/// ties go to the smaller id.
pub fn partition_students(ds: &Dataset, active_fraction: f64) -> Result<LongTailSplit, DataError> {
    if !(active_fraction > 0.0 && active_fraction < 1.0) {
        return Err(DataError::Config(format!(
            "active fraction must lie in (0,1), got {active_fraction}"
        )));
    }
    let n = ds.student_count();
    let k = ((active_fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<&InteractionSequence> = ds.students().iter().collect();
    order.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| compare_ids(&a.student, &b.student))
    });
    Ok(LongTailSplit {
        active: order[..k].iter().map(|s| s.student.clone()).collect(),
        inactive: order[k..].iter().map(|s| s.student.clone()).collect(),
        active_fraction,
    })
}

/// Result of [`split_train_test`].
#[derive(Clone, Debug)]
pub struct TrainTestSplit {
    pub train: Dataset,
    /// Students with at least one held-out interaction.
    pub test: Option<Dataset>,
    /// Students too short to split; kept whole in `train`.
    pub skipped: Vec<String>,
}

/// Number of trailing items held out from a sequence of length `n`:
/// `floor(n·b/(a+b))`, raised to 1 when `n ≥ 2`.
pub fn test_count(n: usize, ratio: (u32, u32)) -> usize {
    if n < 2 {
        return 0;
    }
    let (a, b) = (ratio.0 as usize, ratio.1 as usize);
    (n * b / (a + b)).clamp(1, n - 1)
}

/// Per-student temporal split: the leading part of each sequence goes to
/// train, the remainder to test. Positions keep their original ordinals.
pub fn split_train_test(ds: &Dataset, ratio: (u32, u32)) -> Result<TrainTestSplit, DataError> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(DataError::Config(format!(
            "split ratio parts must be positive, got {}:{}",
            ratio.0, ratio.1
        )));
    }
    let mut train = Vec::with_capacity(ds.student_count());
    let mut test = Vec::new();
    let mut skipped = Vec::new();
    for s in ds.students() {
        let held = test_count(s.len(), ratio);
        if held == 0 {
            skipped.push(s.student.clone());
            train.push(s.clone());
            continue;
        }
        let cut = s.len() - held;
        train.push(InteractionSequence {
            student: s.student.clone(),
            items: s.items[..cut].to_vec(),
        });
        test.push(InteractionSequence {
            student: s.student.clone(),
            items: s.items[cut..].to_vec(),
        });
    }
    let test = if test.is_empty() {
        None
    } else {
        Some(Dataset::new(test, ds.catalog.clone())?)
    };
    Ok(TrainTestSplit {
        train: Dataset::new(train, ds.catalog.clone())?,
        test,
        skipped,
    })
}

/// The most recent `t` interactions (the whole sequence when shorter).
pub fn truncate_sequence(p: &InteractionSequence, t: usize) -> InteractionSequence {
    assert!(t >= 1, "truncation length must be positive");
    let start = p.len().saturating_sub(t);
    InteractionSequence {
        student: p.student.clone(),
        items: p.items[start..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Catalog, Exercise, Interaction};

    fn dataset(lengths: &[usize]) -> Dataset {
        let cat = Catalog::new(
            vec![Exercise {
                id: "e".into(),
                coverage: vec![1.0],
            }],
            1,
        )
        .unwrap();
        let students = lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| InteractionSequence {
                student: format!("{i}"),
                items: (0..n)
                    .map(|p| Interaction {
                        exercise: 0,
                        correct: p % 2 == 0,
                        position: p as u32,
                    })
                    .collect(),
            })
            .collect();
        Dataset::new(students, cat).unwrap()
    }

    #[test]
    fn distinct_lengths_give_order_statistic() {
        let lengths: Vec<usize> = (1..=100).map(|i| (i * 37) % 101).collect();
        let ds = dataset(&lengths);
        let split = partition_students(&ds, 0.05).unwrap();
        assert_eq!(split.active.len(), 5);
        let len = |id: &String| ds.student(id).unwrap().len();
        let min_active = split.active.iter().map(len).min().unwrap();
        let max_inactive = split.inactive.iter().map(len).max().unwrap();
        assert!(min_active >= max_inactive);
    }

    #[test]
    fn equal_lengths_break_ties_by_id() {
        let ds = dataset(&[3; 100]);
        let split = partition_students(&ds, 0.05).unwrap();
        let want: BTreeSet<String> = (0..5).map(|i| i.to_string()).collect();
        assert_eq!(split.active, want);
    }

    #[test]
    fn ceiling_on_active_count() {
        let split = partition_students(&dataset(&[1, 2, 3, 4]), 0.5).unwrap();
        assert_eq!(split.active.len(), 2);
        assert!(partition_students(&dataset(&[1]), 1.0).is_err());
        assert!(partition_students(&dataset(&[1]), 0.0).is_err());
    }

    #[test]
    fn temporal_split_examples() {
        let ds = dataset(&[10, 5, 1]);
        let s = split_train_test(&ds, (8, 2)).unwrap();
        let test = s.test.unwrap();
        assert_eq!(s.train.student("0").unwrap().len(), 8);
        assert_eq!(test.student("0").unwrap().items[0].position, 8);
        assert_eq!(s.train.student("1").unwrap().len(), 4);
        assert_eq!(test.student("1").unwrap().len(), 1);
        assert_eq!(s.train.student("2").unwrap().len(), 1);
        assert!(test.student("2").is_none());
        assert_eq!(s.skipped, vec!["2".to_string()]);
    }

    #[test]
    fn truncation_examples() {
        let ds = dataset(&[10, 2]);
        let p = ds.student("0").unwrap();
        let t = truncate_sequence(p, 3);
        assert_eq!(t.items, p.items[7..]);
        let q = ds.student("1").unwrap();
        assert_eq!(&truncate_sequence(q, 5), q);
        assert_eq!(truncate_sequence(&t, 3), t);
    }
}

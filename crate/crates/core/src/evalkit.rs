//! Ranking and diversity metrics, reference orderings and report output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Catalog, Dataset, ExerciseIndex, StudentGroup};
use crate::filter::CandidateSet;
use crate::reranker::distinct_concepts;

pub const KS: [usize; 4] = [1, 3, 5, 10];

/// Exercises counted as relevant: everything attempted in the test window.
pub type Relevant = BTreeSet<ExerciseIndex>;

/// Relevant sets of every student in `test`.
pub fn relevance_from_test(test: &Dataset) -> BTreeMap<String, Relevant> {
    test.students()
        .iter()
        .map(|s| {
            (
                s.student.clone(),
                s.items.iter().map(|it| it.exercise).collect(),
            )
        })
        .collect()
}

fn hits<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|e| relevant.contains(e))
        .count()
}

/// NDCG@K with binary gains and `log₂(rank + 1)` discounts; 0 when nothing is relevant.
pub fn ndcg_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    assert!(k >= 1, "K must be positive");
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, e)| relevant.contains(e))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

/// Share of the relevant items found in the top K; 0 when nothing is relevant.
pub fn recall_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    assert!(k >= 1, "K must be positive");
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranked, relevant, k) as f64 / relevant.len() as f64
}

/// Share of the top K that is relevant.
pub fn precision_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    assert!(k >= 1, "K must be positive");
    hits(ranked, relevant, k) as f64 / k as f64
}

pub fn f1_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    let p = precision_at_k(ranked, relevant, k);
    let r = recall_at_k(ranked, relevant, k);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Number of distinct concepts covered by a list.
pub fn div(list: &[ExerciseIndex], catalog: &Catalog) -> f64 {
    distinct_concepts(catalog, list) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Ndcg,
    Recall,
    F1,
    Div,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ndcg, Metric::Recall, Metric::F1, Metric::Div];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "ndcg",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Div => "div",
        }
    }

    fn needs_relevance(self) -> bool {
        self != Metric::Div
    }
}

/// Reporting group of a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Overall,
    Active,
    Inactive,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Overall, Group::Active, Group::Inactive];

    pub fn name(self) -> &'static str {
        match self {
            Group::Overall => "overall",
            Group::Active => "active",
            Group::Inactive => "inactive",
        }
    }

    fn contains(self, g: StudentGroup) -> bool {
        match self {
            Group::Overall => true,
            Group::Active => g == StudentGroup::Active,
            Group::Inactive => g == StudentGroup::Inactive,
        }
    }
}

/// One student's ordered recommendation.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub student: String,
    pub group: StudentGroup,
    pub items: Vec<ExerciseIndex>,
}

/// All lists produced by one system (model arm or baseline).
#[derive(Clone, Debug, PartialEq)]
pub struct SystemLists {
    pub name: String,
    pub lists: Vec<RankedList>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub system: String,
    pub group: Group,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
    /// Students averaged into `value`.
    pub students: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Students without relevant items, left out of NDCG/Recall/F1.
    pub no_relevant: usize,
}

impl MetricReport {
    pub fn get(&self, system: &str, group: Group, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.group == group && r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    pub fn systems(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.system.as_str()) {
                out.push(&r.system);
            }
        }
        out
    }

    /// `system,group,metric,k,value,students` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "system,group,metric,k,value,students")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6},{}",
                r.system,
                r.group.name(),
                r.metric.name(),
                r.k,
                r.value,
                r.students
            )?;
        }
        Ok(())
    }
}

/// Table with one line per system and group, one column per metric and K.
impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        let width = self
            .systems()
            .iter()
            .map(|s| s.len())
            .max()
            .unwrap_or(6)
            .max(6);
        write!(f, "{:<width$}  {:<8}", "system", "group")?;
        for m in Metric::ALL {
            for k in &ks {
                write!(f, " {:>9}", format!("{}@{k}", m.name()))?;
            }
        }
        writeln!(f)?;
        for s in self.systems() {
            for g in Group::ALL {
                if !self.rows.iter().any(|r| r.system == s && r.group == g) {
                    continue;
                }
                write!(f, "{s:<width$}  {:<8}", g.name())?;
                for m in Metric::ALL {
                    for &k in &ks {
                        match self.get(s, g, m, k) {
                            Some(v) if m == Metric::Div => write!(f, " {v:>9.3}")?,
                            Some(v) => write!(f, " {v:>9.4}")?,
                            None => write!(f, " {:>9}", "-")?,
                        }
                    }
                }
                writeln!(f)?;
            }
        }
        if self.no_relevant > 0 {
            writeln!(
                f,
                "{} student(s) without relevant items skipped for ranking metrics",
                self.no_relevant
            )?;
        }
        Ok(())
    }
}

fn metric_value(
    metric: Metric,
    list: &[ExerciseIndex],
    relevant: &Relevant,
    k: usize,
    catalog: &Catalog,
) -> f64 {
    match metric {
        Metric::Ndcg => ndcg_at_k(list, relevant, k),
        Metric::Recall => recall_at_k(list, relevant, k),
        Metric::F1 => f1_at_k(list, relevant, k),
        Metric::Div => div(&list[..k.min(list.len())], catalog),
    }
}

/// Averages every metric per student, then over the students of each group.
/// Students missing from `relevance` count as having no relevant items.
pub fn evaluate(
    systems: &[SystemLists],
    relevance: &BTreeMap<String, Relevant>,
    catalog: &Catalog,
    ks: &[usize],
) -> MetricReport {
    let empty = Relevant::new();
    let mut report = MetricReport::default();
    if let Some(first) = systems.first() {
        report.no_relevant = first
            .lists
            .iter()
            .filter(|l| relevance.get(&l.student).is_none_or(BTreeSet::is_empty))
            .count();
    }
    for sys in systems {
        for g in Group::ALL {
            let members: Vec<&RankedList> =
                sys.lists.iter().filter(|l| g.contains(l.group)).collect();
            if members.is_empty() {
                continue;
            }
            for m in Metric::ALL {
                for &k in ks {
                    let (mut sum, mut n) = (0.0, 0usize);
                    for l in &members {
                        let rel = relevance.get(&l.student).unwrap_or(&empty);
                        if m.needs_relevance() && rel.is_empty() {
                            continue;
                        }
                        sum += metric_value(m, &l.items, rel, k, catalog);
                        n += 1;
                    }
                    report.rows.push(MetricRow {
                        system: sys.name.clone(),
                        group: g,
                        metric: m,
                        k,
                        value: if n == 0 { 0.0 } else { sum / n as f64 },
                        students: n,
                    });
                }
            }
        }
    }
    report
}

/// Mean DIV@k of every system for `k = 1..=max_k`, as `system,k,div` rows.
pub fn write_diversity_curve<W: Write>(
    systems: &[SystemLists],
    catalog: &Catalog,
    max_k: usize,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "system,k,div")?;
    for sys in systems {
        for k in 1..=max_k {
            let n = sys.lists.len().max(1) as f64;
            let total: f64 = sys
                .lists
                .iter()
                .map(|l| div(&l.items[..k.min(l.items.len())], catalog))
                .sum();
            writeln!(out, "{},{},{:.6}", sys.name, k, total / n)?;
        }
    }
    Ok(())
}

/// Reference orderings of a candidate set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Uniform shuffle, seeded per student.
    Random,
    /// Ascending filter weight.
    FilterOrder,
    /// Repeatedly takes the candidate adding the most uncovered concepts
    /// (ties keep filter order).
    GreedyCoverage,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::Random,
        Baseline::FilterOrder,
        Baseline::GreedyCoverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Random => "random",
            Baseline::FilterOrder => "filter",
            Baseline::GreedyCoverage => "greedy-coverage",
        }
    }
}

/// Greedy maximiser of distinct-concept coverage over `items`.
pub fn greedy_coverage(items: &[ExerciseIndex], catalog: &Catalog) -> Vec<ExerciseIndex> {
    let mut covered = vec![false; catalog.concept_count()];
    let mut left: Vec<ExerciseIndex> = items.to_vec();
    let mut out = Vec::with_capacity(items.len());
    while !left.is_empty() {
        let gain = |e: ExerciseIndex| catalog.get(e).concepts().filter(|&k| !covered[k]).count();
        let mut best = 0;
        for i in 1..left.len() {
            if gain(left[i]) > gain(left[best]) {
                best = i;
            }
        }
        let e = left.remove(best);
        for k in catalog.get(e).concepts() {
            covered[k] = true;
        }
        out.push(e);
    }
    out
}

/// Orders every candidate set by `baseline`, truncated to `k`.
pub fn baseline_lists(
    baseline: Baseline,
    sets: &[(StudentGroup, &CandidateSet)],
    catalog: &Catalog,
    seed: u64,
    k: usize,
) -> SystemLists {
    let lists = sets
        .iter()
        .enumerate()
        .map(|(i, (group, set))| {
            let mut items = set.exercises();
            match baseline {
                Baseline::Random => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(seed ^ 0x7261_6e64 ^ ((i as u64) << 20));
                    items.shuffle(&mut rng);
                }
                Baseline::FilterOrder => {}
                Baseline::GreedyCoverage => items = greedy_coverage(&items, catalog),
            }
            items.truncate(k);
            RankedList {
                student: set.student.clone(),
                group: *group,
                items,
            }
        })
        .collect();
    SystemLists {
        name: baseline.name().to_string(),
        lists,
    }
}

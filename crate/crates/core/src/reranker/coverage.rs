//! Probabilistic concept coverage of an exercise set and the per-exercise
//! marginal contribution to it.

use crate::datamodel::{Catalog, ExerciseIndex, Interaction};
use crate::error::ModelError;
use crate::tensorkit::{TensorError, Vector};

/// `b_k = 1 − Π_e (1 − τ_e^k)` for coverage rows `rows`, each of length `m`.
pub fn coverage_of(rows: &[&[f64]], m: usize) -> Vector {
    let mut miss = vec![1.0; m];
    for row in rows {
        debug_assert_eq!(row.len(), m);
        for (x, t) in miss.iter_mut().zip(row.iter()) {
            *x *= 1.0 - t;
        }
    }
    miss.into_iter().map(|x| 1.0 - x).collect()
}

/// Coverage of a set of catalog exercises; the empty set covers nothing.
pub fn coverage(catalog: &Catalog, set: &[ExerciseIndex]) -> Vector {
    let rows: Vec<&[f64]> = set.iter().map(|&e| catalog.coverage(e)).collect();
    coverage_of(&rows, catalog.concept_count())
}

/// `b(C) − b(C ∖ {C_l})` for the exercise at position `l` of `set`.
pub fn marginal_diversity(
    catalog: &Catalog,
    set: &[ExerciseIndex],
    l: usize,
) -> Result<Vector, ModelError> {
    if l >= set.len() {
        return Err(ModelError::Config(format!(
            "candidate index {l} out of range for a set of {}",
            set.len()
        )));
    }
    let full = coverage(catalog, set);
    let rest: Vec<ExerciseIndex> = set
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != l)
        .map(|(_, &e)| e)
        .collect();
    let without = coverage(catalog, &rest);
    Ok(full.iter().zip(&without).map(|(a, b)| a - b).collect())
}

/// Marginal diversity of every member of `set` at once, using
/// `b(C) − b(C∖l) = τ_l · Π_{j≠l}(1 − τ_j)` with prefix/suffix products.
pub fn marginal_diversities(catalog: &Catalog, set: &[ExerciseIndex]) -> Vec<Vector> {
    let m = catalog.concept_count();
    let n = set.len();
    let mut prefix = vec![vec![1.0; m]; n + 1];
    for (i, &e) in set.iter().enumerate() {
        let cov = catalog.coverage(e);
        for k in 0..m {
            prefix[i + 1][k] = prefix[i][k] * (1.0 - cov[k]);
        }
    }
    let mut suffix = vec![1.0; m];
    let mut out = vec![Vec::new(); n];
    for (i, &e) in set.iter().enumerate().rev() {
        let cov = catalog.coverage(e);
        out[i] = (0..m).map(|k| cov[k] * prefix[i][k] * suffix[k]).collect();
        for k in 0..m {
            suffix[k] *= 1.0 - cov[k];
        }
    }
    out
}

/// Elementwise `ω̂ ⊙ d`.
pub fn diversity_gain(pace: &[f64], marginal: &[f64]) -> Result<Vector, TensorError> {
    if pace.len() != marginal.len() {
        return Err(TensorError::Shape(format!(
            "pace has {} entries, marginal diversity {}",
            pace.len(),
            marginal.len()
        )));
    }
    Ok(pace.iter().zip(marginal).map(|(a, b)| a * b).collect())
}

/// One subsequence per concept; an interaction joins every concept its
/// exercise covers, in original order.
pub fn split_by_concept(items: &[Interaction], catalog: &Catalog) -> Vec<Vec<Interaction>> {
    let mut out = vec![Vec::new(); catalog.concept_count()];
    for it in items {
        for k in catalog.get(it.exercise).concepts() {
            out[k].push(*it);
        }
    }
    out
}

/// Distinct concepts covered by a list of exercises.
pub fn distinct_concepts(catalog: &Catalog, set: &[ExerciseIndex]) -> usize {
    let mut seen = vec![false; catalog.concept_count()];
    for &e in set {
        for k in catalog.get(e).concepts() {
            seen[k] = true;
        }
    }
    seen.into_iter().filter(|&b| b).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Exercise;

    fn cat(rows: &[&[f64]]) -> Catalog {
        Catalog::new(
            rows.iter()
                .enumerate()
                .map(|(i, r)| Exercise {
                    id: format!("{i}"),
                    coverage: r.to_vec(),
                })
                .collect(),
            rows[0].len(),
        )
        .unwrap()
    }

    #[test]
    fn coverage_examples() {
        let c = cat(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]]);
        assert_eq!(coverage(&c, &[]), vec![0.0, 0.0, 0.0]);
        assert_eq!(coverage(&c, &[0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(coverage(&c, &[0, 1]), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn marginal_examples() {
        let c = cat(&[&[1.0, 0.0], &[1.0, 1.0]]);
        let d1 = marginal_diversity(&c, &[0, 1], 1).unwrap();
        assert_eq!(d1, vec![0.0, 1.0]);
        assert_eq!(marginal_diversity(&c, &[0], 0).unwrap(), coverage(&c, &[0]));
        assert!(marginal_diversity(&c, &[0], 1).is_err());
        assert_eq!(marginal_diversities(&c, &[0, 1]), vec![vec![0.0, 0.0], d1]);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(
            diversity_gain(&[0.5, 1.0], &[1.0, 0.0]).unwrap(),
            vec![0.5, 0.0]
        );
        assert_eq!(
            diversity_gain(&[1.0, 1.0], &[0.3, 0.7]).unwrap(),
            vec![0.3, 0.7]
        );
        assert_eq!(
            diversity_gain(&[0.0, 0.0], &[0.3, 0.7]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(diversity_gain(&[0.0], &[0.3, 0.7]).is_err());
    }

    #[test]
    fn split_examples() {
        let c = cat(&[&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]]);
        let it = |e, p| Interaction {
            exercise: e,
            correct: true,
            position: p,
        };
        let items = [it(0, 0), it(1, 1), it(2, 2)];
        let parts = split_by_concept(&items, &c);
        assert_eq!(parts[0], vec![it(0, 0), it(1, 1)]);
        assert_eq!(parts[1], vec![it(1, 1), it(2, 2)]);
        let single = split_by_concept(&[it(0, 0), it(2, 1)], &c);
        assert_eq!(single[0].len() + single[1].len(), 2);
        assert_eq!(distinct_concepts(&c, &[0, 1]), 2);
        assert_eq!(distinct_concepts(&c, &[]), 0);
    }
}

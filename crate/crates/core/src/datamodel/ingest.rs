//! CSV ingestion and export.
//!
//! Interaction log header: `student_id,exercise_id,correct[,timestamp]`.
//! Concept map header: `exercise_id,concept_ids`, where `concept_ids` is a
//! `;`-separated list of zero-based concept indices.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Catalog, DataError, Dataset, Exercise, Interaction, InteractionSequence};

const LOG: &str = "interactions";
const KC_MAP: &str = "concept map";

fn reader<R: Read>(src: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(src)
}

fn csv_error(file: &str, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DataError::Io(io),
        kind => DataError::Parse {
            file: file.into(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

fn check_header(
    file: &str,
    got: &csv::StringRecord,
    want: &[&str],
    optional: &[&str],
) -> Result<(), DataError> {
    let got: Vec<&str> = got.iter().collect();
    let ok = got.len() >= want.len()
        && got.len() <= want.len() + optional.len()
        && got
            .iter()
            .zip(want.iter().chain(optional))
            .all(|(a, b)| a == b);
    if ok {
        Ok(())
    } else {
        let mut expected = want.join(",");
        for o in optional {
            expected.push_str(&format!("[,{o}]"));
        }
        Err(DataError::Parse {
            file: file.into(),
            line: 1,
            msg: format!("header must be `{expected}`, got `{}`", got.join(",")),
        })
    }
}

fn parse_concept_map<R: Read>(src: R) -> Result<Catalog, DataError> {
    let mut rdr = reader(src);
    let header = rdr.headers().map_err(|e| csv_error(KC_MAP, e))?.clone();
    check_header(KC_MAP, &header, &["exercise_id", "concept_ids"], &[])?;

    let mut rows: Vec<(String, Vec<usize>, u64)> = Vec::new();
    let mut max_concept = None::<usize>;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(KC_MAP, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |msg: String| DataError::Parse {
            file: KC_MAP.into(),
            line,
            msg,
        };
        let id = rec.get(0).unwrap_or("");
        if id.is_empty() {
            return Err(parse_err("empty exercise id".into()));
        }
        let concepts = rec
            .get(1)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| parse_err(format!("bad concept index `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if concepts.is_empty() {
            return Err(parse_err(format!("exercise `{id}` lists no concepts")));
        }
        max_concept = concepts.iter().copied().chain(max_concept).max();
        rows.push((id.to_string(), concepts, line));
    }
    let m = match max_concept {
        Some(k) => k + 1,
        None => return Err(DataError::Empty),
    };
    let mut seen = HashSet::new();
    let mut exercises = Vec::with_capacity(rows.len());
    for (id, concepts, line) in rows {
        if !seen.insert(id.clone()) {
            return Err(DataError::Parse {
                file: KC_MAP.into(),
                line,
                msg: format!("duplicate exercise `{id}`"),
            });
        }
        let mut coverage = vec![0.0; m];
        for k in concepts {
            coverage[k] = 1.0;
        }
        exercises.push(Exercise { id, coverage });
    }
    Catalog::new(exercises, m)
}

/// Reads an interaction log and a concept map into a validated [`Dataset`].
///
/// Within a student, input order is kept unless a `timestamp` column is
/// present, in which case rows are stably sorted by it and exact duplicate
/// rows (same student, exercise, outcome and timestamp) are dropped.
/// Positions are renumbered `0..n` per student.
pub fn ingest_interactions<L: Read, K: Read>(log: L, kc_map: K) -> Result<Dataset, DataError> {
    let catalog = parse_concept_map(kc_map)?;

    let mut rdr = reader(log);
    let header = rdr.headers().map_err(|e| csv_error(LOG, e))?.clone();
    check_header(
        LOG,
        &header,
        &["student_id", "exercise_id", "correct"],
        &["timestamp"],
    )?;
    let timed = header.len() == 4;

    // student -> (timestamp, exercise, correct)
    let mut per_student: HashMap<String, Vec<(f64, usize, bool)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(LOG, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let student = field(0);
        if student.is_empty() {
            return Err(DataError::Parse {
                file: LOG.into(),
                line,
                msg: "empty student id".into(),
            });
        }
        let exercise = catalog
            .index_of(field(1))
            .ok_or_else(|| DataError::UnknownExercise {
                file: LOG.into(),
                line,
                id: field(1).into(),
            })?;
        let correct = match field(2) {
            "1" => true,
            "0" => false,
            other => {
                return Err(DataError::InvalidCorrectness {
                    file: LOG.into(),
                    line,
                    value: other.into(),
                })
            }
        };
        let ts = if timed {
            field(3)
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| DataError::Parse {
                    file: LOG.into(),
                    line,
                    msg: format!("bad timestamp `{}`", field(3)),
                })?
        } else {
            0.0
        };
        per_student
            .entry(student.to_string())
            .or_default()
            .push((ts, exercise, correct));
    }
    if per_student.is_empty() {
        return Err(DataError::Empty);
    }

    let students = per_student
        .into_iter()
        .map(|(student, mut rows)| {
            if timed {
                rows.sort_by(|a, b| a.0.total_cmp(&b.0));
                rows.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1 && a.2 == b.2);
            }
            let items = rows
                .into_iter()
                .enumerate()
                .map(|(i, (_, exercise, correct))| Interaction {
                    exercise,
                    correct,
                    position: i as u32,
                })
                .collect();
            InteractionSequence { student, items }
        })
        .collect();
    Dataset::new(students, catalog)
}

/// Opens both files and calls [`ingest_interactions`].
pub fn read_dataset(log: &Path, kc_map: &Path) -> Result<Dataset, DataError> {
    ingest_interactions(
        BufReader::new(File::open(log)?),
        BufReader::new(File::open(kc_map)?),
    )
}

/// Writes the interaction log in dataset order (students by id, items by position).
pub fn write_interactions<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = BufWriter::new(out);
    writeln!(w, "student_id,exercise_id,correct")?;
    for s in ds.students() {
        for it in &s.items {
            writeln!(
                w,
                "{},{},{}",
                s.student,
                ds.catalog.get(it.exercise).id,
                u8::from(it.correct)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the concept map, one exercise per line in catalog order.
pub fn write_concept_map<W: Write>(catalog: &Catalog, out: W) -> Result<(), DataError> {
    let mut w = BufWriter::new(out);
    writeln!(w, "exercise_id,concept_ids")?;
    for (_, e) in catalog.iter() {
        let ks: Vec<String> = e.concepts().map(|k| k.to_string()).collect();
        writeln!(w, "{},{}", e.id, ks.join(";"))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both files of a dataset.
pub fn write_dataset(ds: &Dataset, log: &Path, kc_map: &Path) -> Result<(), DataError> {
    write_interactions(ds, File::create(log)?)?;
    write_concept_map(&ds.catalog, File::create(kc_map)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KC: &str = "exercise_id,concept_ids\ne1,0\ne2,0;1\n";

    #[test]
    fn small_log_builds_dataset() {
        let log = "student_id,exercise_id,correct\ns1,e1,1\ns1,e2,0\ns1,e1,1\n";
        let ds = ingest_interactions(log.as_bytes(), KC.as_bytes()).unwrap();
        assert_eq!(ds.student_count(), 1);
        assert_eq!(ds.exercise_count(), 2);
        assert_eq!(ds.concept_count(), 2);
        assert_eq!(ds.students()[0].len(), 3);
        assert_eq!(ds.catalog.coverage(1), &[1.0, 1.0]);
    }

    #[test]
    fn empty_log_is_rejected() {
        let log = "student_id,exercise_id,correct\n";
        assert!(matches!(
            ingest_interactions(log.as_bytes(), KC.as_bytes()),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn unknown_exercise_names_id_and_line() {
        let log = "student_id,exercise_id,correct\ns1,e1,1\ns1,e9,0\n";
        match ingest_interactions(log.as_bytes(), KC.as_bytes()) {
            Err(DataError::UnknownExercise { id, line, .. }) => {
                assert_eq!(id, "e9");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_correctness_and_malformed_rows() {
        let log = "student_id,exercise_id,correct\ns1,e1,2\n";
        assert!(matches!(
            ingest_interactions(log.as_bytes(), KC.as_bytes()),
            Err(DataError::InvalidCorrectness { line: 2, .. })
        ));
        let log = "student_id,exercise_id,correct\ns1,e1\n";
        assert!(matches!(
            ingest_interactions(log.as_bytes(), KC.as_bytes()),
            Err(DataError::Parse { line: 2, .. })
        ));
        let log = "student,exercise,correct\ns1,e1,1\n";
        assert!(matches!(
            ingest_interactions(log.as_bytes(), KC.as_bytes()),
            Err(DataError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn timestamps_reorder_and_drop_exact_duplicates() {
        let log = "student_id,exercise_id,correct,timestamp\ns1,e2,0,20\ns1,e1,1,10\ns1,e1,1,10\n";
        let ds = ingest_interactions(log.as_bytes(), KC.as_bytes()).unwrap();
        let items = &ds.students()[0].items;
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].exercise, 0);
        assert_eq!(items[1].position, 1);
    }

    #[test]
    fn export_then_ingest_round_trips() {
        let log = "student_id,exercise_id,correct\ns2,e2,1\ns1,e1,1\ns1,e2,0\n";
        let ds = ingest_interactions(log.as_bytes(), KC.as_bytes()).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_interactions(&ds, &mut a).unwrap();
        write_concept_map(&ds.catalog, &mut b).unwrap();
        let back = ingest_interactions(a.as_slice(), b.as_slice()).unwrap();
        assert_eq!(ds, back);
    }
}

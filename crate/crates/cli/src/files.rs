//! On-disk layout, dataset fingerprints, run manifests and CSV readers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use exrec::datamodel::{
    read_dataset, write_concept_map, write_interactions, Catalog, Dataset, ExerciseIndex,
};
use exrec::filter::{Candidate, CandidateSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::{fail, Coded, Outcome, INCONSISTENT, INPUT, MISSING};

pub const INTERACTIONS: &str = "interactions.csv";
pub const CONCEPTS: &str = "concepts.csv";

pub fn data_files(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(INTERACTIONS), dir.join(CONCEPTS))
}

pub fn load_dataset(dir: &Path) -> Outcome<Dataset> {
    let (log, kc) = data_files(dir);
    for p in [&log, &kc] {
        if !p.is_file() {
            return fail(MISSING, format!("dataset file {} not found", p.display()));
        }
    }
    Ok(read_dataset(&log, &kc)?)
}

/// SHA-256 of the canonical CSV form of a dataset.
pub fn fingerprint(ds: &Dataset) -> Outcome<String> {
    let mut bytes = Vec::new();
    write_interactions(ds, &mut bytes)?;
    write_concept_map(&ds.catalog, &mut bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir)
        .map_err(anyhow::Error::from)
        .map_err(|e| e.context(format!("creating {}", dir.display())))
        .code(INPUT)
}

pub fn create_file(path: &Path) -> Outcome<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| anyhow::Error::from(e).context(format!("creating {}", path.display())))
        .code(INPUT)
}

/// Provenance record written at the end of every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Configuration file text in effect for the run.
    pub config: String,
    pub dataset_fingerprint: Option<String>,
    pub files: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

/// Collects produced files while a command runs.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    seed: u64,
    config: String,
    fingerprint: Option<String>,
    files: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl Run {
    pub fn start(dir: PathBuf, command: &str, seed: u64, config: String) -> Outcome<Self> {
        create_dir(&dir)?;
        Ok(Self {
            dir,
            command: command.into(),
            seed,
            config,
            fingerprint: None,
            files: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        })
    }

    pub fn set_fingerprint(&mut self, fp: String) {
        self.fingerprint = Some(fp);
    }

    /// Path of a new output file inside the run directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn create(&mut self, name: &str) -> Outcome<std::io::BufWriter<std::fs::File>> {
        let path = self.output(name);
        create_file(&path)
    }

    /// Writes `manifest.json` through a temporary file and a rename.
    pub fn finish(self) -> Outcome<Manifest> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            dataset_fingerprint: self.fingerprint,
            files: self.files,
            started_unix: self.started_unix,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        let tmp = self.dir.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&manifest).code(INPUT)?;
        std::fs::write(&tmp, text + "\n").code(INPUT)?;
        std::fs::rename(&tmp, self.dir.join("manifest.json")).code(INPUT)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Outcome<Manifest> {
    let path = dir.join("manifest.json");
    if !path.is_file() {
        return fail(MISSING, format!("{} not found", path.display()));
    }
    let text = std::fs::read_to_string(&path).code(INPUT)?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow::Error::from(e).context(format!("reading {}", path.display())))
        .code(INCONSISTENT)
}

/// Refuses to combine artifacts built from different datasets.
pub fn check_fingerprint(manifest: &Manifest, current: &str, what: &str) -> Outcome {
    match &manifest.dataset_fingerprint {
        Some(fp) if fp == current => Ok(()),
        Some(fp) => fail(
            INCONSISTENT,
            format!("{what} was built from dataset {fp}, but the dataset given has fingerprint {current}"),
        ),
        None => fail(INCONSISTENT, format!("{what} records no dataset fingerprint")),
    }
}

fn exercise(catalog: &Catalog, id: &str, path: &Path) -> Outcome<ExerciseIndex> {
    match catalog.index_of(id) {
        Some(i) => Ok(i),
        None => fail(
            INCONSISTENT,
            format!("{}: exercise `{id}` is not in the dataset", path.display()),
        ),
    }
}

fn csv_reader(path: &Path) -> Outcome<csv::Reader<std::fs::File>> {
    if !path.is_file() {
        return fail(MISSING, format!("{} not found", path.display()));
    }
    csv::Reader::from_path(path).code(INPUT)
}

#[derive(Deserialize)]
struct RankRow {
    student_id: String,
    rank: usize,
    exercise_id: String,
}

/// Ranked exercises per student from a `student_id,rank,exercise_id,...` file.
pub fn read_ranked(
    path: &Path,
    catalog: &Catalog,
) -> Outcome<BTreeMap<String, Vec<ExerciseIndex>>> {
    let mut rows: BTreeMap<String, Vec<(usize, ExerciseIndex)>> = BTreeMap::new();
    for row in csv_reader(path)?.deserialize() {
        let row: RankRow = row.code(INCONSISTENT)?;
        let e = exercise(catalog, &row.exercise_id, path)?;
        rows.entry(row.student_id).or_default().push((row.rank, e));
    }
    Ok(rows
        .into_iter()
        .map(|(s, mut v)| {
            v.sort_by_key(|&(r, _)| r);
            (s, v.into_iter().map(|(_, e)| e).collect())
        })
        .collect())
}

#[derive(Deserialize)]
struct CandidateRow {
    student_id: String,
    rank: usize,
    exercise_id: String,
    weight: f64,
    difficulty: f64,
}

pub fn read_candidates(
    path: &Path,
    catalog: &Catalog,
    capacity: usize,
) -> Outcome<Vec<CandidateSet>> {
    let mut rows: BTreeMap<String, Vec<(usize, Candidate)>> = BTreeMap::new();
    for row in csv_reader(path)?.deserialize() {
        let row: CandidateRow = row.code(INCONSISTENT)?;
        let candidate = Candidate {
            exercise: exercise(catalog, &row.exercise_id, path)?,
            weight: row.weight,
            difficulty: row.difficulty,
        };
        rows.entry(row.student_id)
            .or_default()
            .push((row.rank, candidate));
    }
    Ok(rows
        .into_iter()
        .map(|(student, mut v)| {
            v.sort_by_key(|&(r, _)| r);
            let items: Vec<Candidate> = v.into_iter().map(|(_, c)| c).collect();
            CandidateSet {
                student,
                short: items.len() < capacity,
                items,
                capacity,
            }
        })
        .collect())
}

//! End-to-end runs: first-stage predictor, re-ranker, recommendations and
//! the ablation experiment on a temporal split.

use std::collections::BTreeMap;

use crate::datamodel::{
    partition_students, split_train_test, Dataset, LongTailSplit, StudentGroup, TrainTestSplit,
};
use crate::error::ModelError;
use crate::evalkit::{
    baseline_lists, evaluate, relevance_from_test, Baseline, MetricReport, RankedList, SystemLists,
    KS,
};
use crate::filter::CandidateSet;
use crate::kcmp::{train_kcmp, EnhancerMode, KcmpConfig, KcmpModel};
use crate::reranker::{
    prepare, rerank, train_reranker, training_instances, RerankConfig, RerankModel, RerankOutput,
};

pub const DEFAULT_ACTIVE_FRACTION: f64 = 0.05;
pub const DEFAULT_SPLIT: (u32, u32) = (8, 2);

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub kcmp: KcmpConfig,
    pub rerank: RerankConfig,
    pub active_fraction: f64,
    pub split_ratio: (u32, u32),
    pub top_k: usize,
    /// Seed of the random baseline.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            kcmp: KcmpConfig::default(),
            rerank: RerankConfig::default(),
            active_fraction: DEFAULT_ACTIVE_FRACTION,
            split_ratio: DEFAULT_SPLIT,
            top_k: crate::reranker::DEFAULT_TOP_K,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Copies `seed` into every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.kcmp.seed = seed;
        self.rerank.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.kcmp.validate()?;
        self.rerank.validate()?;
        if self.top_k == 0 {
            return Err(ModelError::Config("K must be at least 1".into()));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction < 1.0) {
            return Err(ModelError::Config(
                "active fraction must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Trained stages.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub kcmp: KcmpModel,
    pub reranker: Option<RerankModel>,
}

pub fn train_pipeline(
    train: &Dataset,
    split: &LongTailSplit,
    kcmp_cfg: &KcmpConfig,
    rerank_cfg: Option<&RerankConfig>,
) -> Result<Pipeline, ModelError> {
    let kcmp = train_kcmp(train, split, kcmp_cfg)?;
    let reranker = match rerank_cfg {
        Some(cfg) => {
            let instances = training_instances(&kcmp, train, split, cfg)?;
            Some(train_reranker(
                &instances,
                &train.catalog,
                kcmp.net.context_dim(),
                cfg,
            )?)
        }
        None => None,
    };
    Ok(Pipeline { kcmp, reranker })
}

/// Candidate set and (when a re-ranker exists) the re-ranked top K of one student.
#[derive(Clone, Debug)]
pub struct Recommendation {
    pub group: StudentGroup,
    pub candidates: CandidateSet,
    pub output: Option<RerankOutput>,
}

impl Recommendation {
    /// Final list: the re-ranked top K, else the first K candidates.
    pub fn top(&self, k: usize) -> Vec<usize> {
        match &self.output {
            Some(o) => o.exercises().into_iter().take(k).collect(),
            None => self.candidates.exercises().into_iter().take(k).collect(),
        }
    }
}

/// Recommends for every student of `train`, using the whole training
/// sequence as history.
pub fn recommend(
    pipeline: &Pipeline,
    train: &Dataset,
    split: &LongTailSplit,
    rerank_cfg: &RerankConfig,
    k: usize,
) -> Result<Vec<Recommendation>, ModelError> {
    let catalog = &train.catalog;
    train
        .students()
        .iter()
        .map(|s| {
            let group = split.group(&s.student);
            let prepared = prepare(
                &pipeline.kcmp,
                catalog,
                &s.student,
                &s.items,
                group,
                &rerank_cfg.filter,
            )?;
            let output = match &pipeline.reranker {
                Some(m) => Some(rerank(m, catalog, &prepared, k, m.config.mode)?),
                None => None,
            };
            Ok(Recommendation {
                group,
                candidates: prepared.candidates,
                output,
            })
        })
        .collect()
}

pub fn system_lists(name: &str, recs: &[Recommendation], k: usize) -> SystemLists {
    SystemLists {
        name: name.to_string(),
        lists: recs
            .iter()
            .map(|r| RankedList {
                student: r.candidates.student.clone(),
                group: r.group,
                items: r.top(k),
            })
            .collect(),
    }
}

/// Names of the experiment arms.
pub mod arms {
    /// Enhancer and re-ranker.
    pub const FULL: &str = "full";
    /// Re-ranker on a predictor trained without the enhancer.
    pub const NO_ENHANCER: &str = "no-enhancer";
    /// Filter order of the full predictor.
    pub const NO_RERANK: &str = "no-rerank";
    /// Re-ranker trained with the diversity term zeroed.
    pub const RELEVANCE_ONLY: &str = "relevance-only";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArmSelection {
    pub no_enhancer: bool,
    pub relevance_only: bool,
    pub baselines: bool,
}

impl Default for ArmSelection {
    fn default() -> Self {
        Self {
            no_enhancer: true,
            relevance_only: true,
            baselines: true,
        }
    }
}

/// Everything an experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub split: TrainTestSplit,
    pub groups: LongTailSplit,
    pub full: Pipeline,
    pub recommendations: Vec<Recommendation>,
    pub systems: Vec<SystemLists>,
    pub report: MetricReport,
    /// Wall-clock seconds spent per arm.
    pub timings: BTreeMap<String, f64>,
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> T) -> T {
    let start = std::time::Instant::now();
    let out = f();
    *timings.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
    out
}

/// Splits `ds`, trains the selected arms and evaluates them on the
/// held-out windows.
pub fn run_experiment(
    ds: &Dataset,
    cfg: &PipelineConfig,
    arms_sel: ArmSelection,
) -> Result<ExperimentResult, ModelError> {
    cfg.validate()?;
    let groups = partition_students(ds, cfg.active_fraction)?;
    let split = split_train_test(ds, cfg.split_ratio)?;
    let test = split.test.as_ref().ok_or_else(|| {
        ModelError::Config("no student is long enough to hold out a test window".into())
    })?;
    let relevance = relevance_from_test(test);
    let train = &split.train;
    let k = cfg.top_k;
    let in_test = |lists: SystemLists| SystemLists {
        lists: lists
            .lists
            .into_iter()
            .filter(|l| relevance.contains_key(&l.student))
            .collect(),
        ..lists
    };

    let mut timings = BTreeMap::new();
    let mut systems = Vec::new();

    let full_kcmp = KcmpConfig {
        mode: EnhancerMode::Enabled,
        ..cfg.kcmp.clone()
    };
    let full = timed(&mut timings, arms::FULL, || {
        train_pipeline(train, &groups, &full_kcmp, Some(&cfg.rerank))
    })?;
    let recs = timed(&mut timings, arms::FULL, || {
        recommend(&full, train, &groups, &cfg.rerank, k)
    })?;
    systems.push(in_test(system_lists(arms::FULL, &recs, k)));

    if arms_sel.no_enhancer {
        let kc = KcmpConfig {
            mode: EnhancerMode::Disabled,
            ..cfg.kcmp.clone()
        };
        let lists = timed(&mut timings, arms::NO_ENHANCER, || {
            let p = train_pipeline(train, &groups, &kc, Some(&cfg.rerank))?;
            recommend(&p, train, &groups, &cfg.rerank, k)
        })?;
        systems.push(in_test(system_lists(arms::NO_ENHANCER, &lists, k)));
    }

    let filter_only = Pipeline {
        kcmp: full.kcmp.clone(),
        reranker: None,
    };
    let plain = recommend(&filter_only, train, &groups, &cfg.rerank, k)?;
    systems.push(in_test(system_lists(arms::NO_RERANK, &plain, k)));

    if arms_sel.relevance_only {
        let rc = RerankConfig {
            use_diversity: false,
            ..cfg.rerank.clone()
        };
        let lists = timed(&mut timings, arms::RELEVANCE_ONLY, || {
            let instances = training_instances(&full.kcmp, train, &groups, &rc)?;
            let model =
                train_reranker(&instances, &train.catalog, full.kcmp.net.context_dim(), &rc)?;
            let p = Pipeline {
                kcmp: full.kcmp.clone(),
                reranker: Some(model),
            };
            recommend(&p, train, &groups, &rc, k)
        })?;
        systems.push(in_test(system_lists(arms::RELEVANCE_ONLY, &lists, k)));
    }

    if arms_sel.baselines {
        let sets: Vec<(StudentGroup, &CandidateSet)> =
            recs.iter().map(|r| (r.group, &r.candidates)).collect();
        for b in Baseline::ALL {
            systems.push(in_test(baseline_lists(
                b,
                &sets,
                &train.catalog,
                cfg.seed,
                k,
            )));
        }
    }

    let report = evaluate(&systems, &relevance, &train.catalog, &KS);
    Ok(ExperimentResult {
        groups,
        full,
        recommendations: recs,
        systems,
        report,
        timings,
        split,
    })
}

//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use exrec::datamodel::{
    generate_synthetic, partition_students, split_train_test, write_concept_map,
    write_interactions, write_latent_mastery, Dataset, LongTailSplit, StudentGroup,
};
use exrec::evalkit::{
    baseline_lists, evaluate as score, relevance_from_test, write_diversity_curve, Baseline, Group,
    Metric, MetricReport, RankedList, SystemLists, KS,
};
use exrec::filter::{write_candidates, CandidateSet};
use exrec::kcmp::{train_kcmp_with, EnhancerMode, KcmpModel};
use exrec::pipeline::{arms, run_experiment, ArmSelection};
use exrec::reranker::{
    prepare, rerank, train_reranker_with, training_instances, write_rerank, RerankModel,
    RerankOutput, ScoreMode,
};
use exrec::tensorkit::{load_checkpoint, save_checkpoint};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::exit::{fail, Coded, Outcome, INCONSISTENT, INPUT, MISSING};
use crate::files::{
    check_fingerprint, create_file, fingerprint, load_dataset, read_candidates, read_manifest,
    read_ranked, Run, CONCEPTS, INTERACTIONS,
};

const MODEL_INFO: &str = "model.json";
const RECOMMEND_INFO: &str = "recommend.json";
const KCMP_CKPT: &str = "kcmp.ckpt";
const RERANK_CKPT: &str = "rerank.ckpt";

fn write_data(run: &mut Run, ds: &Dataset) -> Outcome {
    write_interactions(ds, run.create(INTERACTIONS)?)?;
    write_concept_map(&ds.catalog, run.create(CONCEPTS)?)?;
    Ok(())
}

fn write_json<T: Serialize>(run: &mut Run, name: &str, value: &T) -> Outcome {
    let mut f = run.create(name)?;
    serde_json::to_writer_pretty(&mut f, value).code(INPUT)?;
    writeln!(f).code(INPUT)?;
    f.flush().code(INPUT)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<T> {
    if !path.is_file() {
        return fail(MISSING, format!("{} not found", path.display()));
    }
    let text = std::fs::read_to_string(path).code(INPUT)?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow::Error::from(e).context(format!("reading {}", path.display())))
        .code(INCONSISTENT)
}

fn parse_stored(config: &str, what: &Path) -> Outcome<RunConfig> {
    RunConfig::parse(config)
        .map_err(|e| e.context(format!("configuration stored in {}", what.display())))
        .code(INCONSISTENT)
}

pub fn ingest(cfg: &RunConfig, out: &Path) -> Outcome {
    let log = cfg.log.as_deref();
    let kc_map = cfg.kc_map.as_deref();
    let (Some(log), Some(kc_map)) = (log, kc_map) else {
        return fail(
            INPUT,
            "ingest needs both --log and --kc-map (or data.log and data.kc_map)",
        );
    };
    for (what, p) in [("interaction log", log), ("concept map", kc_map)] {
        if !p.is_file() {
            return fail(INPUT, format!("{what} {} not found", p.display()));
        }
    }
    let ds = exrec::datamodel::read_dataset(log, kc_map)?;
    let mut run = Run::start(out.join("data"), "ingest", cfg.seed, cfg.to_text())?;
    write_data(&mut run, &ds)?;
    run.set_fingerprint(fingerprint(&ds)?);
    run.finish()?;
    println!("{}", ds.summary());
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Outcome {
    let (ds, truth) = generate_synthetic(&cfg.seeded_synth())?;
    let mut run = Run::start(out.join("data"), "synth", cfg.seed, cfg.to_text())?;
    write_data(&mut run, &ds)?;
    write_latent_mastery(&truth, &ds, run.create("latent_mastery.csv")?)?;
    run.set_fingerprint(fingerprint(&ds)?);
    run.finish()?;
    println!("{}", ds.summary());
    Ok(())
}

/// Trained-model description stored next to the checkpoints.
#[derive(Debug, Serialize, Deserialize)]
struct ModelInfo {
    arm: String,
    dataset_fingerprint: String,
    rerank: bool,
    /// Configuration the model was trained with, flags applied.
    config: String,
}

/// CSV writer that flushes every row so a failed run keeps its history.
struct EpochLog {
    out: std::io::BufWriter<std::fs::File>,
    error: Option<std::io::Error>,
}

impl EpochLog {
    fn new(mut out: std::io::BufWriter<std::fs::File>, header: &str) -> Outcome<Self> {
        writeln!(out, "{header}")
            .and_then(|()| out.flush())
            .code(INPUT)?;
        Ok(Self { out, error: None })
    }

    fn row(&mut self, line: std::fmt::Arguments) {
        if self.error.is_none() {
            if let Err(e) = writeln!(self.out, "{line}").and_then(|()| self.out.flush()) {
                self.error = Some(e);
            }
        }
    }

    fn close(self) -> Outcome {
        match self.error {
            Some(e) => Err(e).code(INPUT),
            None => Ok(()),
        }
    }
}

pub fn train(
    cfg: &mut RunConfig,
    out: &Path,
    data: &Path,
    no_enhancer: bool,
    no_rerank: bool,
) -> Outcome {
    if no_enhancer {
        cfg.pipeline.kcmp.mode = EnhancerMode::Disabled;
    }
    cfg.validate().code(INPUT)?;
    let pc = cfg.seeded_pipeline();
    let ds = load_dataset(data)?;
    let fp = fingerprint(&ds)?;
    let groups = partition_students(&ds, pc.active_fraction)?;
    let split = split_train_test(&ds, pc.split_ratio)?;
    let train = &split.train;

    let mut run = Run::start(out.join("model"), "train", cfg.seed, cfg.to_text())?;
    run.set_fingerprint(fp.clone());

    let mut log = EpochLog::new(
        run.create("kcmp_log.csv")?,
        "epoch,loss_total,loss_k,loss_s",
    )?;
    let kcmp = train_kcmp_with(train, &groups, &pc.kcmp, |e| {
        log.row(format_args!(
            "{},{:.10},{:.10},{:.10}",
            e.epoch, e.loss_total, e.loss_k, e.loss_s
        ))
    });
    log.close()?;
    let kcmp = kcmp?;
    save_checkpoint(&kcmp.params, &run.output(KCMP_CKPT))?;
    eprintln!("predictor trained for {} epoch(s)", kcmp.log.len());

    if !no_rerank {
        let instances = training_instances(&kcmp, train, &groups, &pc.rerank)?;
        let mut log = EpochLog::new(run.create("rerank_log.csv")?, "epoch,loss")?;
        let model = train_reranker_with(
            &instances,
            &train.catalog,
            kcmp.net.context_dim(),
            &pc.rerank,
            |e| log.row(format_args!("{},{:.10}", e.epoch, e.loss)),
        );
        log.close()?;
        let model = model?;
        save_checkpoint(&model.params, &run.output(RERANK_CKPT))?;
        eprintln!("re-ranker trained on {} list(s)", instances.len());
    }

    let arm = match (no_enhancer, no_rerank) {
        (_, true) => arms::NO_RERANK,
        (true, false) => arms::NO_ENHANCER,
        (false, false) => arms::FULL,
    };
    let info = ModelInfo {
        arm: arm.to_string(),
        dataset_fingerprint: fp,
        rerank: !no_rerank,
        config: cfg.to_text(),
    };
    write_json(&mut run, MODEL_INFO, &info)?;
    run.finish()?;
    Ok(())
}

/// Settings of a finished `recommend` run, read back by `evaluate`.
#[derive(Debug, Serialize, Deserialize)]
struct RecommendInfo {
    arm: String,
    dataset_fingerprint: String,
    mode: String,
    k: usize,
    config: String,
}

fn checkpoint(dir: &Path, name: &str) -> Outcome<exrec::tensorkit::ParameterSet> {
    let path = dir.join(name);
    if !path.is_file() {
        return fail(MISSING, format!("checkpoint {} not found", path.display()));
    }
    load_checkpoint(&path).map_err(|e| {
        let mut f = crate::exit::Failure::from(e);
        f.error = f.error.context(format!("loading {}", path.display()));
        f
    })
}

/// Writes `student_id,rank,exercise_id,score,mode` rows in filter order,
/// scored by negated filter weight.
fn write_filter_order(
    sets: &[CandidateSet],
    catalog: &exrec::datamodel::Catalog,
    k: usize,
    out: impl Write,
) -> Outcome {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "student_id,rank,exercise_id,score,mode").code(INPUT)?;
    for set in sets {
        for (r, c) in set.items.iter().take(k).enumerate() {
            writeln!(
                out,
                "{},{},{},{:.10},filter",
                set.student,
                r + 1,
                catalog.get(c.exercise).id,
                -c.weight
            )
            .code(INPUT)?;
        }
    }
    out.flush().code(INPUT)
}

/// Uses the configuration stored with the model.
pub fn recommend(
    out: &Path,
    data: &Path,
    model_dir: &Path,
    mode: Option<ScoreMode>,
    k: Option<usize>,
) -> Outcome {
    let info_path = model_dir.join(MODEL_INFO);
    let info: ModelInfo = read_json(&info_path)?;
    let ds = load_dataset(data)?;
    let fp = fingerprint(&ds)?;
    if info.dataset_fingerprint != fp {
        return fail(
            INCONSISTENT,
            format!(
                "model in {} was trained on dataset {}, but {} has fingerprint {fp}",
                model_dir.display(),
                info.dataset_fingerprint,
                data.display()
            ),
        );
    }
    let mcfg = parse_stored(&info.config, &info_path)?;
    let pc = mcfg.seeded_pipeline();
    let mode = mode.unwrap_or(pc.rerank.mode);
    let k = k.unwrap_or(pc.top_k);
    if k == 0 {
        return fail(INPUT, "K must be at least 1");
    }
    let catalog = &ds.catalog;
    let kcmp = KcmpModel::from_params(catalog, &pc.kcmp, checkpoint(model_dir, KCMP_CKPT)?)?;
    let reranker = if info.rerank {
        let params = checkpoint(model_dir, RERANK_CKPT)?;
        Some(RerankModel::from_params(
            catalog,
            kcmp.net.context_dim(),
            &pc.rerank,
            &params,
        )?)
    } else {
        None
    };
    let groups = partition_students(&ds, pc.active_fraction)?;
    let split = split_train_test(&ds, pc.split_ratio)?;

    let mut sets = Vec::new();
    let mut outputs: Vec<RerankOutput> = Vec::new();
    for s in split.train.students() {
        let prepared = prepare(
            &kcmp,
            catalog,
            &s.student,
            &s.items,
            groups.group(&s.student),
            &pc.rerank.filter,
        )?;
        if let Some(m) = &reranker {
            outputs.push(rerank(m, catalog, &prepared, k, mode)?);
        }
        sets.push(prepared.candidates);
    }

    let mut run = Run::start(
        out.join("recommend"),
        "recommend",
        mcfg.seed,
        info.config.clone(),
    )?;
    run.set_fingerprint(fp.clone());
    write_candidates(&sets, catalog, run.create("candidates.csv")?).code(INPUT)?;
    let recs = run.create("recommendations.csv")?;
    let mode_name = match &reranker {
        Some(_) => {
            write_rerank(&outputs, catalog, recs).code(INPUT)?;
            mode.name()
        }
        None => {
            write_filter_order(&sets, catalog, k, recs)?;
            "filter"
        }
    };
    let rinfo = RecommendInfo {
        arm: info.arm,
        dataset_fingerprint: fp,
        mode: mode_name.to_string(),
        k,
        config: info.config,
    };
    write_json(&mut run, RECOMMEND_INFO, &rinfo)?;
    run.finish()?;
    eprintln!("{} student(s), top {k} ({mode_name})", sets.len());
    Ok(())
}

/// Keeps students with a held-out window, in dataset order.
fn in_test(
    ds: &Dataset,
    groups: &LongTailSplit,
    lists: &BTreeMap<String, Vec<usize>>,
    relevant: &dyn Fn(&str) -> bool,
    k: usize,
) -> Vec<RankedList> {
    ds.students()
        .iter()
        .filter(|s| relevant(&s.student))
        .filter_map(|s| {
            lists.get(&s.student).map(|items| RankedList {
                student: s.student.clone(),
                group: groups.group(&s.student),
                items: items.iter().copied().take(k).collect(),
            })
        })
        .collect()
}

fn write_report(
    run: &mut Run,
    systems: &[SystemLists],
    report: &MetricReport,
    catalog: &exrec::datamodel::Catalog,
    k: usize,
) -> Outcome {
    report.write_csv(run.create("metrics.csv")?).code(INPUT)?;
    write_diversity_curve(systems, catalog, k, run.create("diversity.csv")?).code(INPUT)?;
    Ok(())
}

/// Uses the configuration stored with the recommendations.
pub fn evaluate(out: &Path, data: &Path, recs: &Path) -> Outcome {
    let info_path = recs.join(RECOMMEND_INFO);
    let info: RecommendInfo = read_json(&info_path)?;
    let manifest = read_manifest(recs)?;
    let ds = load_dataset(data)?;
    let fp = fingerprint(&ds)?;
    check_fingerprint(
        &manifest,
        &fp,
        &format!("recommendations in {}", recs.display()),
    )?;
    if info.dataset_fingerprint != fp {
        return fail(
            INCONSISTENT,
            format!("{} disagrees with its manifest", info_path.display()),
        );
    }
    let mcfg = parse_stored(&info.config, &info_path)?;
    let pc = mcfg.seeded_pipeline();
    let catalog = &ds.catalog;
    let groups = partition_students(&ds, pc.active_fraction)?;
    let split = split_train_test(&ds, pc.split_ratio)?;
    let Some(test) = &split.test else {
        return fail(INPUT, "no student is long enough to hold out a test window");
    };
    let relevance = relevance_from_test(test);
    let has_test = |s: &str| relevance.contains_key(s);

    let ranked = read_ranked(&recs.join("recommendations.csv"), catalog)?;
    let candidates = read_candidates(&recs.join("candidates.csv"), catalog, pc.rerank.filter.size)?;
    for s in ranked.keys().chain(candidates.iter().map(|c| &c.student)) {
        if ds.student(s).is_none() {
            return fail(
                INCONSISTENT,
                format!("student `{s}` in {} is not in the dataset", recs.display()),
            );
        }
    }
    let k = info.k;
    let mut systems = vec![SystemLists {
        name: info.arm.clone(),
        lists: in_test(&ds, &groups, &ranked, &has_test, k),
    }];
    let by_student: BTreeMap<&str, &CandidateSet> =
        candidates.iter().map(|c| (c.student.as_str(), c)).collect();
    let sets: Vec<(StudentGroup, &CandidateSet)> = split
        .train
        .students()
        .iter()
        .filter_map(|s| {
            by_student
                .get(s.student.as_str())
                .map(|c| (groups.group(&s.student), *c))
        })
        .collect();
    for b in Baseline::ALL {
        let lists = baseline_lists(b, &sets, catalog, pc.seed, k);
        systems.push(SystemLists {
            lists: lists
                .lists
                .into_iter()
                .filter(|l| has_test(&l.student))
                .collect(),
            ..lists
        });
    }
    let report = score(&systems, &relevance, catalog, &KS);

    let mut run = Run::start(
        out.join("evaluate"),
        "evaluate",
        mcfg.seed,
        info.config.clone(),
    )?;
    run.set_fingerprint(fp);
    write_report(&mut run, &systems, &report, catalog, k)?;
    let text = format!("{report}");
    std::fs::write(run.output("report.txt"), &text).code(INPUT)?;
    run.finish()?;
    print!("{text}");
    Ok(())
}

/// Paired ablation rows: label of the variant without and with a component.
const COMPARISONS: [(&str, &str, &str, &str, &str); 3] = [
    ("enhancer", "w/o En", arms::NO_ENHANCER, "w En", arms::FULL),
    ("rerank", "w/o NR", arms::NO_RERANK, "w NR", arms::FULL),
    (
        "diversity",
        "w/o Div",
        arms::RELEVANCE_ONLY,
        "w Div",
        arms::FULL,
    ),
];

fn write_ablation(report: &MetricReport, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "comparison,variant,system,group,metric,k,value")?;
    for (cmp, without, sys_without, with, sys_with) in COMPARISONS {
        for (label, sys) in [(without, sys_without), (with, sys_with)] {
            for g in Group::ALL {
                for m in Metric::ALL {
                    for k in KS {
                        if let Some(v) = report.get(sys, g, m, k) {
                            writeln!(
                                out,
                                "{cmp},{label},{sys},{},{},{k},{v:.6}",
                                g.name(),
                                m.name()
                            )?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn ablation_table(report: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<9} {:<8} {:>9} {:>9} {:>9}",
        "ablation", "variant", "group", "NDCG@5", "Recall@5", "DIV@10"
    );
    for (cmp, without, sys_without, with, sys_with) in COMPARISONS {
        for (label, sys) in [(without, sys_without), (with, sys_with)] {
            for g in Group::ALL {
                let v = |m, k| {
                    report
                        .get(sys, g, m, k)
                        .map_or("-".to_string(), |v| format!("{v:.4}"))
                };
                let _ = writeln!(
                    s,
                    "{cmp:<10} {label:<9} {:<8} {:>9} {:>9} {:>9}",
                    g.name(),
                    v(Metric::Ndcg, 5),
                    v(Metric::Recall, 5),
                    v(Metric::Div, 10)
                );
            }
        }
    }
    s
}

pub fn pipeline(cfg: &RunConfig, out: &Path, data: Option<&Path>) -> Outcome {
    cfg.validate().code(INPUT)?;
    let pc = cfg.seeded_pipeline();
    let mut run = Run::start(out.join("pipeline"), "pipeline", cfg.seed, cfg.to_text())?;
    let ds = match data {
        Some(dir) => load_dataset(dir)?,
        None => {
            let (ds, truth) = generate_synthetic(&cfg.seeded_synth())?;
            write_data(&mut run, &ds)?;
            write_latent_mastery(&truth, &ds, run.create("latent_mastery.csv")?)?;
            ds
        }
    };
    run.set_fingerprint(fingerprint(&ds)?);
    let summary = ds.summary();
    eprintln!("{summary}");

    let result = run_experiment(&ds, &pc, ArmSelection::default())?;
    for (arm, secs) in &result.timings {
        eprintln!("{arm}: {secs:.1}s");
    }
    let catalog = &result.split.train.catalog;
    write_report(&mut run, &result.systems, &result.report, catalog, pc.top_k)?;
    write_ablation(&result.report, create_file(&run.output("ablation.csv"))?).code(INPUT)?;
    let text = format!(
        "{summary}\n\n{}\n{}",
        result.report,
        ablation_table(&result.report)
    );
    std::fs::write(run.output("report.txt"), &text).code(INPUT)?;
    run.finish()?;
    print!("{text}");
    Ok(())
}

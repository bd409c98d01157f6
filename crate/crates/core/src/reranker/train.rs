//! Training instances, listwise training loop and top-K re-ranking.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{
    compare_ids, test_count, Catalog, Dataset, ExerciseIndex, Interaction, LongTailSplit,
    StudentGroup,
};
use crate::error::ModelError;
use crate::filter::{build_candidate_set, CandidateSet, FilterConfig};
use crate::kcmp::{success_probability, KcmpModel};
use crate::tensorkit::{Adam, ParameterSet, Vector};

use super::coverage::marginal_diversities;
use super::model::{
    pace_features, probabilistic_scores, rerank_loss, rerank_loss_grad, ucb_scores, NetShape,
    RerankInput, RerankNet, ScoreMode, SigmaInit,
};

pub const HEAD_CHOICES: [usize; 4] = [2, 4, 6, 8];
pub const DEFAULT_TOP_K: usize = 10;

/// Where training labels come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelRule {
    /// `y = 1` iff the student attempts the exercise in the held-back window.
    Attempted,
    /// `y = 1` iff the first held-back attempt is wrong; exercises without
    /// one fall back to predicted success below one half.
    NotMastered,
}

impl LabelRule {
    pub fn name(self) -> &'static str {
        match self {
            LabelRule::Attempted => "attempted",
            LabelRule::NotMastered => "not-mastered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attempted" => Some(Self::Attempted),
            "not-mastered" | "mastery" => Some(Self::NotMastered),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankConfig {
    pub q_s: usize,
    pub q_e: usize,
    pub q_h: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Head trained (and used by default at inference).
    pub mode: ScoreMode,
    pub sigma_init: SigmaInit,
    pub labels: LabelRule,
    /// Share of each training sequence used as history; the rest provides labels.
    pub history_fraction: f64,
    /// Labelled lists per student: the held-back window is stepped back
    /// through the sequence this many times.
    pub windows: usize,
    /// `false` trains the relevance-only variant with `Δ ≡ 0`.
    pub use_diversity: bool,
    pub filter: FilterConfig,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            q_s: 32,
            q_e: 32,
            q_h: 64,
            heads: 2,
            head_hidden: 32,
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.001,
            seed: 0,
            mode: ScoreMode::Deterministic,
            sigma_init: SigmaInit::Small,
            labels: LabelRule::Attempted,
            history_fraction: 0.8,
            windows: 3,
            use_diversity: true,
            filter: FilterConfig::default(),
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if [
            self.q_s,
            self.q_e,
            self.q_h,
            self.head_hidden,
            self.epochs,
            self.batch_size,
            self.windows,
        ]
        .contains(&0)
        {
            return Err(ModelError::Config(
                "re-ranker sizes, epochs and batch size must be positive".into(),
            ));
        }
        if !HEAD_CHOICES.contains(&self.heads) {
            return Err(ModelError::Config(format!(
                "attention heads must be one of {HEAD_CHOICES:?}"
            )));
        }
        if !self.q_h.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "q_h = {} is not divisible by {} heads",
                self.q_h, self.heads
            )));
        }
        if !(self.history_fraction > 0.0 && self.history_fraction < 1.0) {
            return Err(ModelError::Config(
                "history fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        if self.filter.size == 0 {
            return Err(ModelError::Config(
                "candidate set size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn shape(&self, catalog: &Catalog, rep_dim: usize) -> NetShape {
        NetShape {
            rep_dim,
            concepts: catalog.concept_count(),
            exercises: catalog.len(),
            q_s: self.q_s,
            q_e: self.q_e,
            q_h: self.q_h,
            heads: self.heads,
            head_hidden: self.head_hidden,
            sigma_init: self.sigma_init,
        }
    }
}

/// Candidate set of one student plus everything the network reads.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub student: String,
    pub group: StudentGroup,
    pub candidates: CandidateSet,
    pub input: RerankInput,
}

/// Runs the first stage for one student: mastery and representation from
/// `history`, then the filter and the coverage quantities of the list.
pub fn prepare(
    kcmp: &KcmpModel,
    catalog: &Catalog,
    student: &str,
    history: &[Interaction],
    group: StudentGroup,
    filter: &FilterConfig,
) -> Result<Prepared, ModelError> {
    let mastery = kcmp.predict_mastery(catalog, history, group)?;
    let rep = kcmp.representation(history, group)?;
    let candidates = build_candidate_set(student, &mastery, history, catalog, filter);
    let input = rerank_input(catalog, rep, &candidates.exercises(), history);
    Ok(Prepared {
        student: student.to_string(),
        group,
        candidates,
        input,
    })
}

pub fn rerank_input(
    catalog: &Catalog,
    rep: Vector,
    candidates: &[ExerciseIndex],
    history: &[Interaction],
) -> RerankInput {
    RerankInput {
        rep,
        coverage: candidates
            .iter()
            .map(|&e| catalog.coverage(e).to_vec())
            .collect(),
        marginal: marginal_diversities(catalog, candidates),
        pace: pace_features(history, catalog),
        candidates: candidates.to_vec(),
    }
}

/// One labelled candidate list.
#[derive(Clone, Debug)]
pub struct TrainingInstance {
    pub prepared: Prepared,
    pub labels: Vector,
}

/// Labels of a candidate list given the held-back window.
pub fn label_candidates(
    rule: LabelRule,
    catalog: &Catalog,
    candidates: &[ExerciseIndex],
    held_back: &[Interaction],
    mastery: &[f64],
) -> Vector {
    candidates
        .iter()
        .map(|&e| {
            let first = held_back.iter().find(|it| it.exercise == e);
            let y = match (rule, first) {
                (LabelRule::Attempted, f) => f.is_some(),
                (LabelRule::NotMastered, Some(it)) => !it.correct,
                (LabelRule::NotMastered, None) => success_probability(catalog, e, mastery) < 0.5,
            };
            if y {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Splits every training sequence into history and held-back window and
/// builds one instance per student with at least two interactions; further
/// instances move the window back by its own length, as long as some
/// history remains.
pub fn training_instances(
    kcmp: &KcmpModel,
    train: &Dataset,
    split: &LongTailSplit,
    cfg: &RerankConfig,
) -> Result<Vec<TrainingInstance>, ModelError> {
    let catalog = &train.catalog;
    let held_share = ((1.0 - cfg.history_fraction) * 1000.0).round() as u32;
    let ratio = (1000 - held_share, held_share.max(1));
    let mut out = Vec::new();
    for s in train.students() {
        let held = test_count(s.len(), ratio);
        if held == 0 {
            continue;
        }
        let group = split.group(&s.student);
        for j in 1..=cfg.windows {
            let Some(cut) = s.len().checked_sub(held * j).filter(|&c| c > 0) else {
                break;
            };
            let (history, rest) = (&s.items[..cut], &s.items[cut..cut + held]);
            let prepared = prepare(kcmp, catalog, &s.student, history, group, &cfg.filter)?;
            let mastery = if cfg.labels == LabelRule::NotMastered {
                kcmp.predict_mastery(catalog, history, group)?
            } else {
                Vec::new()
            };
            let labels = label_candidates(
                cfg.labels,
                catalog,
                &prepared.input.candidates,
                rest,
                &mastery,
            );
            out.push(TrainingInstance { prepared, labels });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RerankEpoch {
    pub epoch: usize,
    /// Mean listwise loss per candidate list.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct RerankModel {
    pub net: RerankNet,
    pub params: ParameterSet,
    pub config: RerankConfig,
    pub log: Vec<RerankEpoch>,
}

impl RerankModel {
    pub fn init(catalog: &Catalog, rep_dim: usize, cfg: &RerankConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParameterSet::new();
        let net = RerankNet::new(&mut params, &cfg.shape(catalog, rep_dim), &mut rng);
        Ok(Self {
            net,
            params,
            config: cfg.clone(),
            log: Vec::new(),
        })
    }

    /// Rebuilds a trained model around stored weights.
    pub fn from_params(
        catalog: &Catalog,
        rep_dim: usize,
        cfg: &RerankConfig,
        params: &ParameterSet,
    ) -> Result<Self, ModelError> {
        let mut model = Self::init(catalog, rep_dim, cfg)?;
        model.params.load_values(params)?;
        model.log.push(RerankEpoch {
            epoch: cfg.epochs.saturating_sub(1),
            loss: f64::NAN,
        });
        Ok(model)
    }

    pub fn is_trained(&self) -> bool {
        !self.log.is_empty()
    }

    /// Mean scores `μ` and, in probabilistic mode, `σ`.
    pub fn heads(
        &self,
        input: &RerankInput,
        mode: ScoreMode,
    ) -> Result<(Vector, Vector), ModelError> {
        let with_sigma = mode == ScoreMode::Probabilistic;
        let t = self
            .net
            .forward(&self.params, input, self.config.use_diversity, with_sigma)?;
        Ok((t.mu, t.sigma_out))
    }

    /// Ranking scores: `μ` in deterministic mode, `μ + σ` otherwise.
    pub fn scores(&self, input: &RerankInput, mode: ScoreMode) -> Result<Vector, ModelError> {
        let (mu, sigma) = self.heads(input, mode)?;
        Ok(match mode {
            ScoreMode::Deterministic => mu,
            ScoreMode::Probabilistic => ucb_scores(&mu, &sigma)?,
        })
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss")?;
        for e in &self.log {
            writeln!(out, "{},{:.10}", e.epoch, e.loss)?;
        }
        Ok(())
    }
}

/// Accumulates gradients of one instance; returns its loss.
fn instance_gradient(
    model: &mut RerankModel,
    inst: &TrainingInstance,
    noise: &mut ChaCha8Rng,
    scale: f64,
) -> Result<f64, ModelError> {
    let prob = model.config.mode == ScoreMode::Probabilistic;
    let input = &inst.prepared.input;
    let trace = model
        .net
        .forward(&model.params, input, model.config.use_diversity, prob)?;
    if prob {
        let xi: Vector = (0..trace.mu.len())
            .map(|_| StandardNormal.sample(noise))
            .collect();
        let phi = probabilistic_scores(&trace.mu, &trace.sigma_out, &xi)?;
        let loss = rerank_loss(&phi, &inst.labels)?;
        let d_phi: Vector = rerank_loss_grad(&phi, &inst.labels)
            .iter()
            .map(|g| g * scale)
            .collect();
        let d_sigma: Vector = d_phi.iter().zip(&xi).map(|(g, x)| g * x).collect();
        model
            .net
            .backward(&mut model.params, input, &trace, &d_phi, Some(&d_sigma));
        Ok(loss)
    } else {
        let loss = rerank_loss(&trace.mu, &inst.labels)?;
        let d_mu: Vector = rerank_loss_grad(&trace.mu, &inst.labels)
            .iter()
            .map(|g| g * scale)
            .collect();
        model
            .net
            .backward(&mut model.params, input, &trace, &d_mu, None);
        Ok(loss)
    }
}

/// Adam on shuffled mini-batches of candidate lists; the batch objective is
/// the summed listwise loss divided by the number of scored candidates.
pub fn train_reranker(
    instances: &[TrainingInstance],
    catalog: &Catalog,
    rep_dim: usize,
    cfg: &RerankConfig,
) -> Result<RerankModel, ModelError> {
    train_reranker_with(instances, catalog, rep_dim, cfg, |_| {})
}

/// [`train_reranker`] that reports every finished epoch to `on_epoch`.
pub fn train_reranker_with(
    instances: &[TrainingInstance],
    catalog: &Catalog,
    rep_dim: usize,
    cfg: &RerankConfig,
    mut on_epoch: impl FnMut(&RerankEpoch),
) -> Result<RerankModel, ModelError> {
    if instances.is_empty() {
        return Err(ModelError::Config(
            "no training lists for the re-ranker".into(),
        ));
    }
    let mut model = RerankModel::init(catalog, rep_dim, cfg)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7272_6f72);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7872_6e67);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let scored: usize = chunk.iter().map(|&i| instances[i].labels.len()).sum();
            let scale = 1.0 / scored.max(1) as f64;
            model.params.zero_grads();
            for &i in chunk {
                total += instance_gradient(&mut model, &instances[i], &mut noise_rng, scale)?;
            }
            if !total.is_finite() || !model.params.all_finite() {
                return Err(ModelError::Diverged {
                    stage: "re-ranker",
                    epoch,
                    msg: format!("loss {total}"),
                });
            }
            adam.step(&mut model.params);
        }
        if !model.params.all_finite() {
            return Err(ModelError::Diverged {
                stage: "re-ranker",
                epoch,
                msg: "non-finite parameters".into(),
            });
        }
        let entry = RerankEpoch {
            epoch,
            loss: total / instances.len() as f64,
        };
        on_epoch(&entry);
        model.log.push(entry);
    }
    Ok(model)
}

/// Positions of `scores` sorted by descending score, ties by ascending id.
pub fn rank_by_score(scores: &[f64], ids: &[&str]) -> Vec<usize> {
    assert_eq!(scores.len(), ids.len(), "one id per score");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // partial_cmp so that 0.0 and -0.0 tie; total_cmp only orders NaNs.
    idx.sort_by(|&a, &b| {
        match scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or_else(|| scores[b].total_cmp(&scores[a]))
        {
            Ordering::Equal => compare_ids(ids[a], ids[b]),
            o => o,
        }
    });
    idx
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedExercise {
    pub exercise: ExerciseIndex,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RerankOutput {
    pub student: String,
    pub mode: ScoreMode,
    pub k: usize,
    pub items: Vec<RankedExercise>,
    /// Interest vector used for the diversity term (empty for the
    /// relevance-only variant).
    pub pace: Vector,
}

impl RerankOutput {
    pub fn exercises(&self) -> Vec<ExerciseIndex> {
        self.items.iter().map(|r| r.exercise).collect()
    }
}

/// Scores a prepared candidate list and keeps the best `k`.
pub fn rerank(
    model: &RerankModel,
    catalog: &Catalog,
    prepared: &Prepared,
    k: usize,
    mode: ScoreMode,
) -> Result<RerankOutput, ModelError> {
    if !model.is_trained() {
        return Err(ModelError::NotTrained("re-ranker"));
    }
    if k == 0 {
        return Err(ModelError::Config("K must be at least 1".into()));
    }
    let input = &prepared.input;
    let scores = model.scores(input, mode)?;
    let pace = if model.config.use_diversity {
        model
            .net
            .pace_distribution(&model.params, &input.pace)?
            .omega
    } else {
        Vec::new()
    };
    let ids: Vec<&str> = input
        .candidates
        .iter()
        .map(|&e| catalog.get(e).id.as_str())
        .collect();
    let items = rank_by_score(&scores, &ids)
        .into_iter()
        .take(k)
        .map(|i| RankedExercise {
            exercise: input.candidates[i],
            score: scores[i],
        })
        .collect();
    Ok(RerankOutput {
        student: prepared.student.clone(),
        mode,
        k,
        items,
        pace,
    })
}

/// Writes `student_id,rank,exercise_id,score,mode` rows.
pub fn write_rerank<W: Write>(
    outputs: &[RerankOutput],
    catalog: &Catalog,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "student_id,rank,exercise_id,score,mode")?;
    for o in outputs {
        for (r, item) in o.items.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{:.10},{}",
                o.student,
                r + 1,
                catalog.get(item.exercise).id,
                item.score,
                o.mode.name()
            )?;
        }
    }
    Ok(())
}

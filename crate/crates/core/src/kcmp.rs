//! Knowledge-concept mastery predictor: an mLSTM over the interaction stream,
//! conditioned at every step on the (possibly enhanced) student encoding of
//! the history seen so far, with a sigmoid head giving one mastery
//! probability per concept.
//!
//! Step `t` consumes the interaction answered at `t-1` (nothing at `t = 0`)
//! together with the context built from the first `t` interactions, and its
//! output predicts the answer at `t`. Running one extra step after the last
//! interaction yields the current mastery vector.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{
    Catalog, Dataset, Interaction, InteractionSequence, LongTailSplit, StudentGroup,
};
use crate::enhancer::{
    curriculum_weight, enhance, reconstruction_loss, EncoderTrace, Enhancer, EnhancerConfig,
    ENHANCER_PREFIX, GENERATOR_PREFIX,
};
use crate::error::ModelError;
use crate::tensorkit::{
    sigmoid, Adam, Linear, MlpTrace, MlstmLayer, ParameterSet, TensorError, Vector,
};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside logs.
pub const BCE_CLAMP: f64 = 1e-12;
/// Enhancer loss weights searched by default.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 1.0];
pub const BATCH_SIZES: [usize; 4] = [16, 32, 64, 128];
const FORGET_BIAS_INIT: f64 = 3.0;

/// How the student context reaching the mLSTM is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnhancerMode {
    /// Prolific students use their encoding, the rest `G(h) + β·h`.
    Enabled,
    /// Generator zeroed and frozen, `β = 0`, `λ_s = 0`: prolific students
    /// keep their encoding, the rest get a zero context.
    Disabled,
    /// No student context at all.
    Off,
}

impl EnhancerMode {
    pub fn name(self) -> &'static str {
        match self {
            EnhancerMode::Enabled => "enabled",
            EnhancerMode::Disabled => "disabled",
            EnhancerMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "enabled" => Some(Self::Enabled),
            "disabled" => Some(Self::Disabled),
            "off" => Some(Self::Off),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KcmpConfig {
    /// mLSTM width.
    pub hidden: usize,
    /// `epoMax`.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: EnhancerMode,
    pub enhancer: EnhancerConfig,
}

impl Default for KcmpConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.001,
            seed: 0,
            mode: EnhancerMode::Enabled,
            enhancer: EnhancerConfig::default(),
        }
    }
}

impl KcmpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.enhancer.validate()?;
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config(
                "hidden, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Effective mixing weight and loss weight after the mode is applied.
    pub fn effective_beta_lambda(&self) -> (f64, f64) {
        match self.mode {
            EnhancerMode::Enabled => (self.enhancer.beta, self.enhancer.lambda_s),
            EnhancerMode::Disabled | EnhancerMode::Off => (0.0, 0.0),
        }
    }
}

/// What the model should predict at one step: the concepts of the next
/// exercise and whether it was answered correctly.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTarget {
    pub concepts: Vec<usize>,
    pub correct: bool,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
}

/// Binary cross-entropy with clamping.
pub fn bce(p: f64, a: f64) -> f64 {
    let p = clamp_prob(p);
    -(a * p.ln() + (1.0 - a) * (1.0 - p).ln())
}

/// BCE averaged over the queried concepts of one step.
pub fn step_loss(y: &[f64], target: &StepTarget) -> f64 {
    let a = if target.correct { 1.0 } else { 0.0 };
    let n = target.concepts.len() as f64;
    target.concepts.iter().map(|&k| bce(y[k], a)).sum::<f64>() / n
}

/// Mean step loss over every student and step, normalised by the total
/// number of steps.
pub fn kcmp_loss(
    predictions: &[Vec<Vector>],
    targets: &[Vec<StepTarget>],
) -> Result<f64, ModelError> {
    if predictions.len() != targets.len() {
        return Err(ModelError::Config(
            "one target list per student expected".into(),
        ));
    }
    let mut sum = 0.0;
    let mut steps = 0usize;
    for (ps, ts) in predictions.iter().zip(targets) {
        if ps.len() != ts.len() {
            return Err(ModelError::Config(
                "predictions and targets must align step by step".into(),
            ));
        }
        for (y, t) in ps.iter().zip(ts) {
            sum += step_loss(y, t);
        }
        steps += ts.len();
    }
    if steps == 0 {
        return Err(ModelError::Config("no steps to score".into()));
    }
    Ok(sum / steps as f64)
}

/// `λ_s · Σ L_s + L_K`.
pub fn total_loss(enhancer_losses: &[f64], kcmp_loss: f64, lambda_s: f64) -> f64 {
    lambda_s * enhancer_losses.iter().sum::<f64>() + kcmp_loss
}

/// Input features of one answered exercise: the coverage (scaled to unit sum)
/// placed in the "correct" block or the "incorrect" block.
pub fn interaction_features(catalog: &Catalog, it: &Interaction) -> Vector {
    let m = catalog.concept_count();
    let cov = catalog.coverage(it.exercise);
    let total: f64 = cov.iter().sum();
    let mut x = vec![0.0; 2 * m];
    let offset = if it.correct { 0 } else { m };
    for (k, &t) in cov.iter().enumerate() {
        x[offset + k] = t / total;
    }
    x
}

pub fn step_targets(catalog: &Catalog, items: &[Interaction]) -> Vec<StepTarget> {
    items
        .iter()
        .map(|it| StepTarget {
            concepts: catalog.get(it.exercise).concepts().collect(),
            correct: it.correct,
        })
        .collect()
}

/// One student's contribution to a batch.
#[derive(Clone, Debug)]
pub struct BatchStudent<'a> {
    pub items: &'a [Interaction],
    pub group: StudentGroup,
    /// Curriculum weight `w_s` (ignored for inactive students).
    pub curriculum: f64,
    /// Fixed reconstruction target; computed from the current encoder when absent.
    pub target: Option<Vector>,
}

/// Loss pieces of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub bce_sum: f64,
    pub steps: usize,
    pub enhancer_sum: f64,
}

impl LossParts {
    pub fn kcmp(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.bce_sum / self.steps as f64
        }
    }

    pub fn total(&self, lambda_s: f64) -> f64 {
        lambda_s * self.enhancer_sum + self.kcmp()
    }
}

/// Layer handles of the predictor; weights live in a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct KcmpNet {
    pub enhancer: Enhancer,
    pub mlstm: MlstmLayer,
    pub head: Linear,
    pub concepts: usize,
    pub beta: f64,
    pub lambda_s: f64,
    pub truncation: usize,
    pub mode: EnhancerMode,
}

struct StudentPass {
    enc: Option<EncoderTrace>,
    gen: Vec<Option<MlpTrace>>,
    mlstm: crate::tensorkit::MlstmTrace,
    inputs: Vec<Vector>,
    probs: Vec<Vector>,
}

impl KcmpNet {
    pub fn build(
        params: &mut ParameterSet,
        catalog: &Catalog,
        cfg: &KcmpConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let m = catalog.concept_count();
        let enhancer = Enhancer::new(params, catalog.len(), &cfg.enhancer, rng);
        let mlstm = MlstmLayer::new(
            params,
            "kcmp.mlstm",
            2 * m + cfg.enhancer.dim,
            cfg.hidden,
            rng,
        );
        params
            .value_mut(&mlstm.forget_bias_name())
            .fill(FORGET_BIAS_INIT);
        let head = Linear::new(params, "kcmp.head", cfg.hidden, m, rng);
        let (beta, lambda_s) = cfg.effective_beta_lambda();
        match cfg.mode {
            EnhancerMode::Enabled => {}
            EnhancerMode::Disabled => {
                params.zero_values(GENERATOR_PREFIX);
                params.set_frozen(GENERATOR_PREFIX, true);
            }
            EnhancerMode::Off => params.set_frozen(ENHANCER_PREFIX, true),
        }
        Self {
            enhancer,
            mlstm,
            head,
            concepts: m,
            beta,
            lambda_s,
            truncation: cfg.enhancer.truncation,
            mode: cfg.mode,
        }
    }

    pub fn context_dim(&self) -> usize {
        self.enhancer.dim
    }

    /// Runs `steps` mLSTM steps (`n` for training, `n + 1` for prediction).
    fn forward_student(
        &self,
        params: &ParameterSet,
        catalog: &Catalog,
        items: &[Interaction],
        group: StudentGroup,
        steps: usize,
    ) -> Result<StudentPass, TensorError> {
        let d = self.context_dim();
        let enc = match self.mode {
            EnhancerMode::Off => None,
            _ if items.is_empty() => None,
            _ => Some(self.enhancer.encode_trace(params, items)?),
        };
        let mut gen = Vec::with_capacity(steps);
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = if t == 0 {
                vec![0.0; 2 * self.concepts]
            } else {
                interaction_features(catalog, &items[t - 1])
            };
            let prefix = enc.as_ref().map_or_else(|| vec![0.0; d], |e| e.prefix(t));
            let ctx = match (self.mode, group) {
                (EnhancerMode::Off, _) => {
                    gen.push(None);
                    vec![0.0; d]
                }
                (_, StudentGroup::Active) => {
                    gen.push(None);
                    prefix
                }
                (_, StudentGroup::Inactive) => {
                    let g = self.enhancer.generate(params, &prefix)?;
                    let c = enhance(&prefix, &g.out, self.beta, group);
                    gen.push(Some(g));
                    c
                }
            };
            x.extend_from_slice(&ctx);
            inputs.push(x);
        }
        let mlstm = self.mlstm.forward(params, &inputs)?;
        let probs = mlstm
            .outputs
            .iter()
            .map(|o| {
                Ok(self
                    .head
                    .forward(params, o)?
                    .into_iter()
                    .map(sigmoid)
                    .collect())
            })
            .collect::<Result<Vec<Vector>, TensorError>>()?;
        Ok(StudentPass {
            enc,
            gen,
            mlstm,
            inputs,
            probs,
        })
    }

    /// Mastery after the whole of `items`.
    pub fn predict_mastery(
        &self,
        params: &ParameterSet,
        catalog: &Catalog,
        items: &[Interaction],
        group: StudentGroup,
    ) -> Result<Vector, TensorError> {
        if items.is_empty() {
            return Err(TensorError::EmptyInput("mastery needs a non-empty history"));
        }
        let pass = self.forward_student(params, catalog, items, group, items.len() + 1)?;
        Ok(pass.probs.last().expect("n + 1 steps").clone())
    }

    /// Per-step predictions `y^t` for `t = 0..n` (each predicting item `t`).
    pub fn predict_steps(
        &self,
        params: &ParameterSet,
        catalog: &Catalog,
        items: &[Interaction],
        group: StudentGroup,
    ) -> Result<Vec<Vector>, TensorError> {
        Ok(self
            .forward_student(params, catalog, items, group, items.len())?
            .probs)
    }

    /// Student representation handed to downstream stages: the encoding of
    /// the full history, enhanced for inactive students.
    pub fn representation(
        &self,
        params: &ParameterSet,
        items: &[Interaction],
        group: StudentGroup,
    ) -> Result<Vector, TensorError> {
        if self.mode == EnhancerMode::Off {
            return Ok(vec![0.0; self.context_dim()]);
        }
        let h = self.enhancer.encode(params, items)?;
        Ok(match group {
            StudentGroup::Active => h,
            StudentGroup::Inactive => {
                let g = self.enhancer.generator.forward(params, &h)?;
                enhance(&h, &g, self.beta, group)
            }
        })
    }

    /// Loss of a batch without touching gradients.
    pub fn batch_loss(
        &self,
        params: &ParameterSet,
        catalog: &Catalog,
        batch: &[BatchStudent],
    ) -> Result<LossParts, TensorError> {
        let mut parts = LossParts::default();
        for s in batch {
            let pass = self.forward_student(params, catalog, s.items, s.group, s.items.len())?;
            for (y, t) in pass.probs.iter().zip(step_targets(catalog, s.items)) {
                parts.bce_sum += step_loss(y, &t);
            }
            parts.steps += s.items.len();
            if self.lambda_s > 0.0 && s.group == StudentGroup::Active {
                let target = match &s.target {
                    Some(t) => t.clone(),
                    None => pass.enc.as_ref().expect("encoder ran").last().to_vec(),
                };
                let r = self.enhancer.encode(params, &self.truncated(s.items))?;
                let g = self.enhancer.generator.forward(params, &r)?;
                parts.enhancer_sum += reconstruction_loss(&target, &g, s.curriculum)?.0;
            }
        }
        Ok(parts)
    }

    fn truncated(&self, items: &[Interaction]) -> Vec<Interaction> {
        let start = items.len().saturating_sub(self.truncation);
        items[start..].to_vec()
    }

    /// Accumulates the gradient of `λ_s·ΣL_s + ΣBCE / Σ T` over the batch.
    pub fn batch_gradient(
        &self,
        params: &mut ParameterSet,
        catalog: &Catalog,
        batch: &[BatchStudent],
    ) -> Result<LossParts, TensorError> {
        let total_steps: usize = batch.iter().map(|s| s.items.len()).sum();
        let scale = 1.0 / total_steps.max(1) as f64;
        let mut parts = LossParts {
            steps: total_steps,
            ..Default::default()
        };
        let d = self.context_dim();
        let two_m = 2 * self.concepts;
        for s in batch {
            let n = s.items.len();
            let pass = self.forward_student(params, catalog, s.items, s.group, n)?;
            let targets = step_targets(catalog, s.items);
            let mut d_out = Vec::with_capacity(n);
            for (t, (y, target)) in pass.probs.iter().zip(&targets).enumerate() {
                parts.bce_sum += step_loss(y, target);
                let a = if target.correct { 1.0 } else { 0.0 };
                let per = scale / target.concepts.len() as f64;
                let mut dlogit = vec![0.0; self.concepts];
                for &k in &target.concepts {
                    // the clamp is flat outside its range
                    if y[k] > BCE_CLAMP && y[k] < 1.0 - BCE_CLAMP {
                        dlogit[k] = per * (y[k] - a);
                    }
                }
                d_out.push(self.head.backward(params, &pass.mlstm.outputs[t], &dlogit));
            }
            let dxs = self.mlstm.backward(params, &pass.mlstm, &d_out);
            debug_assert_eq!(pass.inputs.len(), dxs.len());

            let mut dh_enc: Vec<Vector> = vec![vec![0.0; d]; n];
            if self.mode != EnhancerMode::Off {
                for (t, dx) in dxs.iter().enumerate() {
                    let dctx = &dx[two_m..];
                    let dprefix = match (&pass.gen[t], s.group) {
                        (Some(g), StudentGroup::Inactive) => {
                            let mut dp = self.enhancer.backward_generator(params, g, dctx);
                            for (a, b) in dp.iter_mut().zip(dctx) {
                                *a += self.beta * b;
                            }
                            dp
                        }
                        _ => dctx.to_vec(),
                    };
                    if t > 0 {
                        for (a, b) in dh_enc[t - 1].iter_mut().zip(&dprefix) {
                            *a += b;
                        }
                    }
                }
                if let Some(enc) = &pass.enc {
                    self.enhancer.backward_encoder(params, enc, &dh_enc);
                }
            }

            if self.lambda_s > 0.0 && s.group == StudentGroup::Active {
                let target = match &s.target {
                    Some(t) => t.clone(),
                    None => pass.enc.as_ref().expect("encoder ran").last().to_vec(),
                };
                let window = self.truncated(s.items);
                let rt = self.enhancer.encode_trace(params, &window)?;
                let g = self.enhancer.generate(params, rt.last())?;
                let (l, dg) = reconstruction_loss(&target, &g.out, s.curriculum)?;
                parts.enhancer_sum += l;
                let dg: Vector = dg.iter().map(|v| v * self.lambda_s).collect();
                let dr = self.enhancer.backward_generator(params, &g, &dg);
                let mut dh = vec![vec![0.0; d]; window.len()];
                *dh.last_mut().expect("non-empty window") = dr;
                self.enhancer.backward_encoder(params, &rt, &dh);
            }
        }
        Ok(parts)
    }
}

/// Loss summary of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_k: f64,
    pub loss_s: f64,
}

/// Trained predictor together with its training history.
#[derive(Clone, Debug)]
pub struct KcmpModel {
    pub net: KcmpNet,
    pub params: ParameterSet,
    pub config: KcmpConfig,
    pub log: Vec<EpochLog>,
}

impl KcmpModel {
    /// Freshly initialised, untrained model.
    pub fn init(catalog: &Catalog, cfg: &KcmpConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParameterSet::new();
        let net = KcmpNet::build(&mut params, catalog, cfg, &mut rng);
        Ok(Self {
            net,
            params,
            config: cfg.clone(),
            log: Vec::new(),
        })
    }

    /// Rebuilds handles around stored weights.
    pub fn from_params(
        catalog: &Catalog,
        cfg: &KcmpConfig,
        params: ParameterSet,
    ) -> Result<Self, ModelError> {
        let mut model = Self::init(catalog, cfg)?;
        model.params.load_values(&params)?;
        Ok(model)
    }

    pub fn predict_mastery(
        &self,
        catalog: &Catalog,
        items: &[Interaction],
        group: StudentGroup,
    ) -> Result<Vector, ModelError> {
        Ok(self
            .net
            .predict_mastery(&self.params, catalog, items, group)?)
    }

    pub fn representation(
        &self,
        items: &[Interaction],
        group: StudentGroup,
    ) -> Result<Vector, ModelError> {
        Ok(self.net.representation(&self.params, items, group)?)
    }

    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss_total,loss_k,loss_s")?;
        for e in &self.log {
            writeln!(
                out,
                "{},{:.10},{:.10},{:.10}",
                e.epoch, e.loss_total, e.loss_k, e.loss_s
            )?;
        }
        Ok(())
    }
}

/// Shortest and longest training sequences of the prolific students.
fn active_length_range(train: &Dataset, split: &LongTailSplit) -> (usize, usize) {
    let lens = train
        .students()
        .iter()
        .filter(|s| split.is_active(&s.student))
        .map(InteractionSequence::len);
    let (mut lo, mut hi) = (usize::MAX, 0);
    for l in lens {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if hi == 0 {
        (0, 0)
    } else {
        (lo, hi)
    }
}

/// Trains the predictor (and the enhancer, when enabled) with Adam on
/// shuffled mini-batches of students.
pub fn train_kcmp(
    train: &Dataset,
    split: &LongTailSplit,
    cfg: &KcmpConfig,
) -> Result<KcmpModel, ModelError> {
    train_kcmp_with(train, split, cfg, |_| {})
}

/// [`train_kcmp`] that reports every finished epoch to `on_epoch`.
pub fn train_kcmp_with(
    train: &Dataset,
    split: &LongTailSplit,
    cfg: &KcmpConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<KcmpModel, ModelError> {
    let mut model = KcmpModel::init(&train.catalog, cfg)?;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6b63_6d70);
    let (l_min, l_max) = active_length_range(train, split);
    let students = train.students();
    let mut order: Vec<usize> = (0..students.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_parts = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let s = &students[i];
                    let group = split.group(&s.student);
                    let curriculum = if group == StudentGroup::Active {
                        curriculum_weight(epoch, cfg.epochs, s.len(), l_min, l_max)?
                    } else {
                        0.0
                    };
                    Ok(BatchStudent {
                        items: &s.items,
                        group,
                        curriculum,
                        target: None,
                    })
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            model.params.zero_grads();
            let parts = model
                .net
                .batch_gradient(&mut model.params, &train.catalog, &batch)?;
            let loss = parts.total(model.net.lambda_s);
            if !loss.is_finite() || !model.params.all_finite() {
                return Err(ModelError::Diverged {
                    stage: "kcmp",
                    epoch,
                    msg: format!("loss {loss}"),
                });
            }
            adam.step(&mut model.params);
            epoch_parts.bce_sum += parts.bce_sum;
            epoch_parts.steps += parts.steps;
            epoch_parts.enhancer_sum += parts.enhancer_sum;
        }
        if !model.params.all_finite() {
            return Err(ModelError::Diverged {
                stage: "kcmp",
                epoch,
                msg: "non-finite parameters".into(),
            });
        }
        let entry = EpochLog {
            epoch,
            loss_total: epoch_parts.total(model.net.lambda_s),
            loss_k: epoch_parts.kcmp(),
            loss_s: epoch_parts.enhancer_sum,
        };
        on_epoch(&entry);
        model.log.push(entry);
    }
    Ok(model)
}

/// Next-answer probability of an exercise: product of the mastery of its concepts.
pub fn success_probability(catalog: &Catalog, exercise: usize, mastery: &[f64]) -> f64 {
    catalog
        .get(exercise)
        .concepts()
        .map(|k| mastery[k])
        .product()
}

/// Scores every held-out interaction with the model fed the complete
/// preceding history (train prefix plus earlier held-out items); returns
/// `(predicted probability, outcome)` pairs.
pub fn held_out_predictions(
    model: &KcmpModel,
    train: &Dataset,
    test: &Dataset,
    split: &LongTailSplit,
) -> Result<Vec<(f64, bool)>, ModelError> {
    let mut out = Vec::new();
    for t in test.students() {
        let Some(prefix) = train.student(&t.student) else {
            continue;
        };
        let mut items = prefix.items.clone();
        items.extend_from_slice(&t.items);
        let group = split.group(&t.student);
        let probs = model
            .net
            .predict_steps(&model.params, &train.catalog, &items, group)?;
        for (i, it) in t.items.iter().enumerate() {
            let y = &probs[prefix.len() + i];
            out.push((
                success_probability(&train.catalog, it.exercise, y),
                it.correct,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Exercise, Interaction};

    fn step(concepts: &[usize], correct: bool) -> StepTarget {
        StepTarget {
            concepts: concepts.to_vec(),
            correct,
        }
    }

    #[test]
    fn half_probability_costs_ln2() {
        for a in [true, false] {
            let l = kcmp_loss(&[vec![vec![0.5, 0.9]]], &[vec![step(&[0], a)]]).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_prediction_is_nearly_free() {
        assert!(bce(1.0, 1.0) <= 1e-11);
        assert!(bce(0.0, 0.0) <= 1e-11);
        assert!(bce(0.0, 1.0).is_finite());
    }

    #[test]
    fn normalised_by_total_steps() {
        let y = vec![0.5];
        let preds = vec![vec![y.clone(); 2], vec![y.clone(); 3]];
        let targets = vec![vec![step(&[0], true); 2], vec![step(&[0], false); 3]];
        let l = kcmp_loss(&preds, &targets).unwrap();
        assert!((l - 5.0 * std::f64::consts::LN_2 / 5.0).abs() < 1e-15);
        let sum: f64 = 5.0 * bce(0.5, 1.0);
        assert_eq!(l, sum / 5.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(&[0.2, 0.3], 0.7, 0.0), 0.7);
        assert!((total_loss(&[0.5], 0.7, 1.0) - 1.2).abs() < 1e-15);
        let base = total_loss(&[0.25, 0.5], 0.7, 0.3) - 0.7;
        let doubled = total_loss(&[0.25, 0.5], 0.7, 0.6) - 0.7;
        assert!((doubled - 2.0 * base).abs() < 1e-15);
    }

    #[test]
    fn multi_concept_features_have_unit_mass() {
        let cat = Catalog::new(
            vec![Exercise {
                id: "e".into(),
                coverage: vec![1.0, 0.0, 1.0],
            }],
            3,
        )
        .unwrap();
        let wrong = interaction_features(
            &cat,
            &Interaction {
                exercise: 0,
                correct: false,
                position: 0,
            },
        );
        assert_eq!(wrong, vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.5]);
    }
}

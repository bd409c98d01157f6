//! Scoring network of the re-ranker.
//!
//! Relevance: each candidate becomes `[x_s, x_e, τ_e]` (projected student
//! representation, learned exercise embedding, coverage bits) and a Bi-LSTM
//! runs over the candidate list in filter order.
//!
//! Pace: the history is split per concept; each subsequence of
//! `[a, 1−a, t/|P|]` steps is encoded by a shared LSTM (a learned null
//! vector stands in for unpractised concepts), the `M` encodings attend to
//! each other and a row-wise sigmoid MLP yields the interest vector `ω̂`.
//!
//! Fusion: `Δ_l = ω̂ ⊙ d_l` is appended to the Bi-LSTM state of candidate `l`
//! and a sigmoid MLP gives the mean score `μ_l`; a softplus MLP gives the
//! spread `σ_l` for the probabilistic head.

use rand::Rng;

use crate::datamodel::{Catalog, ExerciseIndex, Interaction};
use crate::kcmp::{bce, BCE_CLAMP};
use crate::tensorkit::{
    Activation, AttentionTrace, BiLstm, BiLstmTrace, Embedding, Linear, Lstm, LstmTrace, Matrix,
    Mlp, MlpTrace, ParameterSet, SelfAttention, TensorError, Vector,
};

use super::coverage::diversity_gain;

/// Scores used for ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreMode {
    /// `φ = μ`.
    Deterministic,
    /// Trained with `φ = μ + ξσ`, ranked by `U = μ + σ`.
    Probabilistic,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Deterministic => "det",
            ScoreMode::Probabilistic => "prob",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "det" | "deterministic" => Some(Self::Deterministic),
            "prob" | "probabilistic" => Some(Self::Probabilistic),
            _ => None,
        }
    }
}

/// Initial output layer of the spread head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaInit {
    /// Random weights, bias −3 (σ starts near 0.05).
    Small,
    /// Zero weights, bias −20 (σ starts below 1e-8).
    Zero,
}

impl SigmaInit {
    pub fn name(self) -> &'static str {
        match self {
            SigmaInit::Small => "small",
            SigmaInit::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "small" => Some(Self::Small),
            "zero" => Some(Self::Zero),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetShape {
    pub rep_dim: usize,
    pub concepts: usize,
    pub exercises: usize,
    pub q_s: usize,
    pub q_e: usize,
    pub q_h: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub sigma_init: SigmaInit,
}

/// Precomputed inputs of one candidate list.
#[derive(Clone, Debug, PartialEq)]
pub struct RerankInput {
    /// Enhanced student representation `h⁺`.
    pub rep: Vector,
    pub candidates: Vec<ExerciseIndex>,
    /// Coverage row `τ` of every candidate.
    pub coverage: Vec<Vector>,
    /// Marginal diversity `d` of every candidate within the list.
    pub marginal: Vec<Vector>,
    /// Per-concept pace step features.
    pub pace: Vec<Vec<Vector>>,
}

/// `[a, 1−a, t/|P|]` per step of each concept subsequence, where `t` is the
/// 1-based position in the whole history.
pub fn pace_features(items: &[Interaction], catalog: &Catalog) -> Vec<Vec<Vector>> {
    let n = items.len().max(1) as f64;
    let mut out = vec![Vec::new(); catalog.concept_count()];
    for (t, it) in items.iter().enumerate() {
        let a = it.outcome();
        for k in catalog.get(it.exercise).concepts() {
            out[k].push(vec![a, 1.0 - a, (t + 1) as f64 / n]);
        }
    }
    out
}

/// Forward record of the pace path.
#[derive(Clone, Debug)]
pub struct PaceTrace {
    lstm: Vec<Option<LstmTrace>>,
    attention: AttentionTrace,
    heads: Vec<MlpTrace>,
    pub omega: Vector,
}

/// Forward record of a full scoring pass.
#[derive(Clone, Debug)]
pub struct RerankTrace {
    bi: BiLstmTrace,
    pub pace: Option<PaceTrace>,
    pub delta: Vec<Vector>,
    mean: Vec<MlpTrace>,
    sigma: Vec<MlpTrace>,
    pub mu: Vector,
    /// Empty unless the spread head was evaluated.
    pub sigma_out: Vector,
}

impl RerankTrace {
    /// Bi-LSTM states of the candidates, one row each.
    pub fn relevance(&self) -> &[Vector] {
        &self.bi.outputs
    }
}

#[derive(Clone, Debug)]
pub struct RerankNet {
    pub shape: NetShape,
    pub student_proj: Linear,
    pub embedding: Embedding,
    pub bilstm: BiLstm,
    pub pace_lstm: Lstm,
    null: String,
    pub attention: SelfAttention,
    pub pace_head: Mlp,
    pub mean_head: Mlp,
    pub sigma_head: Mlp,
}

impl RerankNet {
    pub fn new<R: Rng>(params: &mut ParameterSet, shape: &NetShape, rng: &mut R) -> Self {
        let m = shape.concepts;
        let student_proj = Linear::new(params, "rr.student", shape.rep_dim, shape.q_s, rng);
        let embedding = Embedding::new(params, "rr.emb", shape.exercises, shape.q_e, rng);
        let bilstm = BiLstm::new(
            params,
            "rr.bilstm",
            shape.q_s + shape.q_e + m,
            shape.q_h,
            rng,
        );
        let pace_lstm = Lstm::new(params, "rr.pace.lstm", 3, shape.q_h, rng);
        let null = "rr.pace.null".to_string();
        params.insert_uniform(&null, shape.q_h, 1, shape.q_h, rng);
        let attention = SelfAttention::new(params, "rr.pace.att", shape.q_h, shape.heads, rng);
        let pace_head = Mlp::new(
            params,
            "rr.pace.head",
            &[shape.q_h, shape.q_h, 1],
            Activation::Sigmoid,
            rng,
        );
        let fused = 2 * shape.q_h + m;
        let mean_head = Mlp::new(
            params,
            "rr.mu",
            &[fused, shape.head_hidden, 1],
            Activation::Sigmoid,
            rng,
        );
        let sigma_head = Mlp::new(
            params,
            "rr.sigma",
            &[fused, shape.head_hidden, 1],
            Activation::Softplus,
            rng,
        );
        let last = sigma_head.layers().last().expect("two layers");
        match shape.sigma_init {
            SigmaInit::Small => params.value_mut(last.bias_name()).fill(-3.0),
            SigmaInit::Zero => {
                params.value_mut(last.weight_name()).fill(0.0);
                params.value_mut(last.bias_name()).fill(-20.0);
            }
        }
        Self {
            shape: shape.clone(),
            student_proj,
            embedding,
            bilstm,
            pace_lstm,
            null,
            attention,
            pace_head,
            mean_head,
            sigma_head,
        }
    }

    /// Bi-LSTM over `[x_s, x_e, τ_e]` in list order.
    pub fn relevance_context(
        &self,
        params: &ParameterSet,
        input: &RerankInput,
    ) -> Result<BiLstmTrace, TensorError> {
        if input.candidates.is_empty() {
            return Err(TensorError::EmptyInput("candidate set is empty"));
        }
        let xs = self.student_proj.forward(params, &input.rep)?;
        let inputs: Vec<Vector> = input
            .candidates
            .iter()
            .zip(&input.coverage)
            .map(|(&e, tau)| {
                let mut x = xs.clone();
                x.extend_from_slice(self.embedding.lookup(params, e));
                x.extend_from_slice(tau);
                x
            })
            .collect();
        self.bilstm.forward(params, &inputs)
    }

    /// Interest vector `ω̂` from per-concept step features.
    pub fn pace_distribution(
        &self,
        params: &ParameterSet,
        pace: &[Vec<Vector>],
    ) -> Result<PaceTrace, TensorError> {
        if pace.len() != self.shape.concepts {
            return Err(TensorError::Shape(format!(
                "{} concept sequences for {} concepts",
                pace.len(),
                self.shape.concepts
            )));
        }
        let mut lstm = Vec::with_capacity(pace.len());
        let mut rows = Vec::with_capacity(pace.len());
        for seq in pace {
            if seq.is_empty() {
                lstm.push(None);
                rows.push(params.get(&self.null).as_slice().to_vec());
            } else {
                let t = self.pace_lstm.forward(params, seq, None)?;
                rows.push(t.last().h.clone());
                lstm.push(Some(t));
            }
        }
        let attention = self.attention.forward(params, &Matrix::from_rows(&rows)?)?;
        let heads = (0..pace.len())
            .map(|k| {
                self.pace_head
                    .forward_trace(params, attention.output.row(k))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let omega = heads.iter().map(|h| h.out[0]).collect();
        Ok(PaceTrace {
            lstm,
            attention,
            heads,
            omega,
        })
    }

    /// Full forward pass. With `use_diversity == false` the diversity
    /// columns are zero and the pace path is skipped.
    pub fn forward(
        &self,
        params: &ParameterSet,
        input: &RerankInput,
        use_diversity: bool,
        with_sigma: bool,
    ) -> Result<RerankTrace, TensorError> {
        let bi = self.relevance_context(params, input)?;
        let m = self.shape.concepts;
        let (pace, delta) = if use_diversity {
            let p = self.pace_distribution(params, &input.pace)?;
            let delta = input
                .marginal
                .iter()
                .map(|d| diversity_gain(&p.omega, d))
                .collect::<Result<Vec<_>, _>>()?;
            (Some(p), delta)
        } else {
            (None, vec![vec![0.0; m]; input.candidates.len()])
        };
        let mut mean = Vec::with_capacity(delta.len());
        let mut sigma = Vec::new();
        for (h, d) in bi.outputs.iter().zip(&delta) {
            let mut v = h.clone();
            v.extend_from_slice(d);
            mean.push(self.mean_head.forward_trace(params, &v)?);
            if with_sigma {
                sigma.push(self.sigma_head.forward_trace(params, &v)?);
            }
        }
        let mu = mean.iter().map(|t| t.out[0]).collect();
        let sigma_out = sigma.iter().map(|t| t.out[0]).collect();
        Ok(RerankTrace {
            bi,
            pace,
            delta,
            mean,
            sigma,
            mu,
            sigma_out,
        })
    }

    /// Backpropagates gradients on `μ` and (optionally) `σ`; returns the
    /// gradient on the student representation.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        input: &RerankInput,
        trace: &RerankTrace,
        d_mu: &[f64],
        d_sigma: Option<&[f64]>,
    ) -> Vector {
        let q2 = 2 * self.shape.q_h;
        let m = self.shape.concepts;
        let mut d_h = Vec::with_capacity(d_mu.len());
        let mut d_omega = vec![0.0; m];
        for l in 0..d_mu.len() {
            let mut dv = self.mean_head.backward(params, &trace.mean[l], &[d_mu[l]]);
            if let Some(ds) = d_sigma {
                let extra = self.sigma_head.backward(params, &trace.sigma[l], &[ds[l]]);
                for (a, b) in dv.iter_mut().zip(&extra) {
                    *a += b;
                }
            }
            for k in 0..m {
                d_omega[k] += dv[q2 + k] * input.marginal[l][k];
            }
            dv.truncate(q2);
            d_h.push(dv);
        }

        if let Some(p) = &trace.pace {
            let mut d_att = Matrix::zeros(m, self.shape.q_h);
            for k in 0..m {
                let g = self.pace_head.backward(params, &p.heads[k], &[d_omega[k]]);
                d_att.row_mut(k).copy_from_slice(&g);
            }
            let d_rows = self.attention.backward(params, &p.attention, &d_att);
            for (k, lt) in p.lstm.iter().enumerate() {
                match lt {
                    Some(t) => {
                        let mut dh = vec![vec![0.0; self.shape.q_h]; t.len()];
                        *dh.last_mut().expect("non-empty") = d_rows.row(k).to_vec();
                        self.pace_lstm.backward(params, t, &dh, None);
                    }
                    None => {
                        let g = Matrix::column(d_rows.row(k).to_vec());
                        params.accumulate(&self.null, &g);
                    }
                }
            }
        }

        let d_inputs = self.bilstm.backward(params, &trace.bi, &d_h);
        let (q_s, q_e) = (self.shape.q_s, self.shape.q_e);
        let mut d_xs = vec![0.0; q_s];
        for (l, dx) in d_inputs.iter().enumerate() {
            for (a, b) in d_xs.iter_mut().zip(&dx[..q_s]) {
                *a += b;
            }
            self.embedding
                .backward(params, input.candidates[l], &dx[q_s..q_s + q_e]);
        }
        self.student_proj.backward(params, &input.rep, &d_xs)
    }
}

/// `φ = μ + ξ ⊙ σ`.
pub fn probabilistic_scores(mu: &[f64], sigma: &[f64], xi: &[f64]) -> Result<Vector, TensorError> {
    if mu.len() != sigma.len() || mu.len() != xi.len() {
        return Err(TensorError::Shape(
            "μ, σ and ξ must have equal length".into(),
        ));
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(xi)
        .map(|((m, s), x)| m + x * s)
        .collect())
}

/// Upper confidence bound `μ + σ`.
pub fn ucb_scores(mu: &[f64], sigma: &[f64]) -> Result<Vector, TensorError> {
    if mu.len() != sigma.len() {
        return Err(TensorError::Shape("μ and σ must have equal length".into()));
    }
    Ok(mu.iter().zip(sigma).map(|(m, s)| m + s).collect())
}

/// Listwise binary cross-entropy `−Σ [y log φ + (1−y) log(1−φ)]`.
pub fn rerank_loss(scores: &[f64], labels: &[f64]) -> Result<f64, TensorError> {
    if scores.len() != labels.len() {
        return Err(TensorError::Shape("one label per score expected".into()));
    }
    Ok(scores.iter().zip(labels).map(|(&p, &y)| bce(p, y)).sum())
}

/// `∂ rerank_loss / ∂φ`; zero where the clamp is active.
pub fn rerank_loss_grad(scores: &[f64], labels: &[f64]) -> Vector {
    scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                (p - y) / (p * (1.0 - p))
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_spot_values() {
        let l = rerank_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert!((l - 0.328504).abs() < 1e-6, "{l}");
        assert!((l + (0.9f64.ln() + 0.8f64.ln())).abs() < 1e-15);
        let half = rerank_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((half - 4.0 * std::f64::consts::LN_2).abs() < 1e-14);
        let exact = rerank_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(exact <= 1e-10 * 3.0);
    }

    #[test]
    fn ucb_and_noise_arithmetic() {
        let mu = [0.3, 0.6];
        assert_eq!(
            probabilistic_scores(&mu, &[0.2, 0.4], &[0.0, 0.0]).unwrap(),
            mu.to_vec()
        );
        assert_eq!(ucb_scores(&mu, &[0.0, 0.0]).unwrap(), mu.to_vec());
        let base = ucb_scores(&mu, &[0.2, 0.4]).unwrap();
        let bumped = ucb_scores(&mu, &[0.3, 0.4]).unwrap();
        assert!((bumped[0] - base[0] - 0.1).abs() < 1e-15);
        assert_eq!(bumped[1], base[1]);
    }
}

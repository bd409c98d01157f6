//! Randomised micro-instances for finite-difference checks of every
//! differentiable component.
//!
//! Each [`GradOp`] builds a seeded model and input, wraps it as a
//! [`Differentiable`] with a random linear readout (so vector-valued
//! outputs become a scalar), and hands it to [`grad_check`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{Catalog, Exercise, Interaction, StudentGroup};
use crate::enhancer::{reconstruction_loss, EnhancerConfig};
use crate::kcmp::{
    step_loss, BatchStudent, EnhancerMode, KcmpConfig, KcmpNet, StepTarget, BCE_CLAMP,
};
use crate::reranker::{
    probabilistic_scores, rerank_loss, rerank_loss_grad, NetShape, RerankInput, RerankNet,
    SigmaInit,
};

use crate::tensorkit::{
    grad_check, mlstm_step, mlstm_step_backward, Activation, BiLstm, Differentiable,
    GradCheckReport, Lstm, Matrix, Mlp, MlstmGates, MlstmLayer, MlstmState, ParameterSet,
    SelfAttention, TensorError, Vector,
};

/// Step used by every check.
pub const GRAD_CHECK_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradOp {
    MlstmStep,
    MlstmLayer,
    Lstm,
    BiLstm,
    SelfAttention,
    MlpSigmoid,
    MlpSoftplus,
    MlpIdentity,
    StepBce,
    Reconstruction,
    KcmpTotal,
    RerankLoss,
    RerankDeterministic,
    RerankProbabilistic,
}

impl GradOp {
    pub const ALL: [GradOp; 14] = [
        GradOp::MlstmStep,
        GradOp::MlstmLayer,
        GradOp::Lstm,
        GradOp::BiLstm,
        GradOp::SelfAttention,
        GradOp::MlpSigmoid,
        GradOp::MlpSoftplus,
        GradOp::MlpIdentity,
        GradOp::StepBce,
        GradOp::Reconstruction,
        GradOp::KcmpTotal,
        GradOp::RerankLoss,
        GradOp::RerankDeterministic,
        GradOp::RerankProbabilistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::MlstmStep => "mlstm_step",
            GradOp::MlstmLayer => "mlstm_layer",
            GradOp::Lstm => "lstm",
            GradOp::BiLstm => "bilstm",
            GradOp::SelfAttention => "self_attention",
            GradOp::MlpSigmoid => "mlp_sigmoid",
            GradOp::MlpSoftplus => "mlp_softplus",
            GradOp::MlpIdentity => "mlp_identity",
            GradOp::StepBce => "step_bce",
            GradOp::Reconstruction => "reconstruction",
            GradOp::KcmpTotal => "kcmp_total_loss",
            GradOp::RerankLoss => "rerank_loss",
            GradOp::RerankDeterministic => "rerank_det_head",
            GradOp::RerankProbabilistic => "rerank_prob_head",
        }
    }

    /// Builds the seeded instance and runs the check.
    pub fn check(self, seed: u64) -> Result<GradCheckReport, TensorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ (self as u64) << 40);
        match self {
            GradOp::MlstmStep => {
                let d = 4;
                let mut state = MlstmState::zeros(d);
                state.cell = random_matrix(&mut rng, d, d, 1.0);
                state.normalizer = random_vec(&mut rng, d, 1.0);
                state.stabilizer = 0.0;
                let op = MlstmStepOp {
                    readout: random_vec(&mut rng, d, 1.0),
                    d,
                };
                // key, value, query, [forget, input], output gate, C_prev (flattened), n_prev
                let inputs = vec![
                    random_vec(&mut rng, d, 1.0),
                    random_vec(&mut rng, d, 1.0),
                    random_vec(&mut rng, d, 1.0),
                    vec![rng.random_range(0.1..1.0), rng.random_range(0.1..2.0)],
                    (0..d).map(|_| rng.random_range(0.05..0.95)).collect(),
                    state.cell.as_slice().to_vec(),
                    state.normalizer.clone(),
                ];
                grad_check(&op, &ParameterSet::new(), &inputs, GRAD_CHECK_EPS)
            }
            GradOp::MlstmLayer => {
                let mut ps = ParameterSet::new();
                let layer = MlstmLayer::new(&mut ps, "m", 3, 4, &mut rng);
                let len = 5;
                let op = SeqOp {
                    readout: (0..len).map(|_| random_vec(&mut rng, 4, 1.0)).collect(),
                    kind: SeqKind::Mlstm(layer),
                };
                let inputs = (0..len)
                    .map(|_| random_vec(&mut rng, 3, 1.0))
                    .collect::<Vec<_>>();
                grad_check(&op, &ps, &inputs, GRAD_CHECK_EPS)
            }
            GradOp::Lstm => {
                let mut ps = ParameterSet::new();
                let lstm = Lstm::new(&mut ps, "l", 2, 3, &mut rng);
                let len = 5;
                let op = SeqOp {
                    readout: (0..len).map(|_| random_vec(&mut rng, 3, 1.0)).collect(),
                    kind: SeqKind::Lstm(lstm),
                };
                let inputs = (0..len)
                    .map(|_| random_vec(&mut rng, 2, 1.0))
                    .collect::<Vec<_>>();
                grad_check(&op, &ps, &inputs, GRAD_CHECK_EPS)
            }
            GradOp::BiLstm => {
                let mut ps = ParameterSet::new();
                let bi = BiLstm::new(&mut ps, "bi", 3, 2, &mut rng);
                let len = 4;
                let op = SeqOp {
                    readout: (0..len).map(|_| random_vec(&mut rng, 4, 1.0)).collect(),
                    kind: SeqKind::BiLstm(bi),
                };
                let inputs = (0..len)
                    .map(|_| random_vec(&mut rng, 3, 1.0))
                    .collect::<Vec<_>>();
                grad_check(&op, &ps, &inputs, GRAD_CHECK_EPS)
            }
            GradOp::SelfAttention => {
                let mut ps = ParameterSet::new();
                let heads = [1, 2, 4][rng.random_range(0..3)];
                let att = SelfAttention::new(&mut ps, "att", 4, heads, &mut rng);
                let m = 3;
                let op = AttentionOp {
                    readout: random_matrix(&mut rng, m, 4, 1.0),
                    att,
                };
                let inputs = (0..m)
                    .map(|_| random_vec(&mut rng, 4, 1.0))
                    .collect::<Vec<_>>();
                grad_check(&op, &ps, &inputs, GRAD_CHECK_EPS)
            }
            GradOp::MlpSigmoid | GradOp::MlpSoftplus | GradOp::MlpIdentity => {
                let act = match self {
                    GradOp::MlpSigmoid => Activation::Sigmoid,
                    GradOp::MlpSoftplus => Activation::Softplus,
                    _ => Activation::Identity,
                };
                let mut ps = ParameterSet::new();
                let mlp = Mlp::new(&mut ps, "mlp", &[4, 5, 3], act, &mut rng);
                let op = MlpOp {
                    readout: random_vec(&mut rng, 3, 1.0),
                    mlp,
                };
                grad_check(&op, &ps, &[random_vec(&mut rng, 4, 1.0)], GRAD_CHECK_EPS)
            }
            GradOp::StepBce => {
                let m = 4;
                let concepts: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
                let target = StepTarget {
                    concepts: if concepts.is_empty() {
                        vec![0]
                    } else {
                        concepts
                    },
                    correct: rng.random_bool(0.5),
                };
                let y = (0..m).map(|_| rng.random_range(0.05..0.95)).collect();
                grad_check(
                    &StepBceOp { target },
                    &ParameterSet::new(),
                    &[y],
                    GRAD_CHECK_EPS,
                )
            }
            GradOp::Reconstruction => {
                let op = ReconstructionOp {
                    target: random_vec(&mut rng, 4, 1.0),
                    weight: rng.random_range(0.0..1.0),
                };
                grad_check(
                    &op,
                    &ParameterSet::new(),
                    &[random_vec(&mut rng, 4, 1.0)],
                    GRAD_CHECK_EPS,
                )
            }
            GradOp::KcmpTotal => {
                let (op, ps) = KcmpTotalOp::build(&mut rng)?;
                grad_check(&op, &ps, &[], GRAD_CHECK_EPS)
            }
            GradOp::RerankLoss => {
                let n = 4;
                let op = RerankLossOp {
                    labels: (0..n)
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                        .collect(),
                };
                let phi = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
                grad_check(&op, &ParameterSet::new(), &[phi], GRAD_CHECK_EPS)
            }
            GradOp::RerankDeterministic | GradOp::RerankProbabilistic => {
                let (op, ps, rep) = RerankOp::build(&mut rng, self == GradOp::RerankProbabilistic)?;
                grad_check(&op, &ps, &[rep], GRAD_CHECK_EPS)
            }
        }
    }
}

pub(crate) fn random_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vector {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub(crate) fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, random_vec(rng, rows * cols, scale)).expect("shape")
}

pub(crate) fn readout_loss(readout: &[Vector], outputs: &[Vector]) -> f64 {
    readout
        .iter()
        .zip(outputs)
        .map(|(r, o)| crate::tensorkit::dot(r, o))
        .sum()
}

struct MlstmStepOp {
    readout: Vector,
    d: usize,
}

impl MlstmStepOp {
    fn unpack(&self, x: &[Vector]) -> Result<(MlstmState, MlstmGates), TensorError> {
        let state = MlstmState {
            cell: Matrix::from_vec(self.d, self.d, x[5].clone())?,
            normalizer: x[6].clone(),
            stabilizer: 0.0,
        };
        Ok((state, MlstmGates::new(x[3][0], x[3][1], x[4].clone())))
    }
}

impl Differentiable for MlstmStepOp {
    fn loss(&self, _: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        let (state, gates) = self.unpack(x)?;
        let (_, out) = mlstm_step(&state, &x[0], &x[1], &x[2], &gates)?;
        Ok(crate::tensorkit::dot(&self.readout, &out))
    }

    fn gradient(&self, _: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        let (state, gates) = self.unpack(x)?;
        let (next, _) = mlstm_step(&state, &x[0], &x[1], &x[2], &gates)?;
        let g = mlstm_step_backward(
            &state,
            &next,
            &x[0],
            &x[1],
            &x[2],
            &gates,
            &self.readout,
            &Matrix::zeros(self.d, self.d),
            &vec![0.0; self.d],
        );
        Ok(vec![
            g.key,
            g.value,
            g.query,
            vec![g.forget, g.input],
            g.output,
            g.cell.into_vec(),
            g.normalizer,
        ])
    }
}

enum SeqKind {
    Lstm(Lstm),
    BiLstm(BiLstm),
    Mlstm(MlstmLayer),
}

struct SeqOp {
    readout: Vec<Vector>,
    kind: SeqKind,
}

impl Differentiable for SeqOp {
    fn loss(&self, p: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        let outs = match &self.kind {
            SeqKind::Lstm(l) => l.forward(p, x, None)?.hidden_states(),
            SeqKind::BiLstm(b) => b.forward(p, x)?.outputs,
            SeqKind::Mlstm(m) => m.forward(p, x)?.outputs,
        };
        Ok(readout_loss(&self.readout, &outs))
    }

    fn gradient(&self, p: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        Ok(match &self.kind {
            SeqKind::Lstm(l) => {
                let t = l.forward(p, x, None)?;
                l.backward(p, &t, &self.readout, None).0
            }
            SeqKind::BiLstm(b) => {
                let t = b.forward(p, x)?;
                b.backward(p, &t, &self.readout)
            }
            SeqKind::Mlstm(m) => {
                let t = m.forward(p, x)?;
                m.backward(p, &t, &self.readout)
            }
        })
    }
}

struct AttentionOp {
    readout: Matrix,
    att: SelfAttention,
}

impl Differentiable for AttentionOp {
    fn loss(&self, p: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        let t = self.att.forward(p, &Matrix::from_rows(x)?)?;
        Ok(crate::tensorkit::dot(
            t.output.as_slice(),
            self.readout.as_slice(),
        ))
    }

    fn gradient(&self, p: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        let t = self.att.forward(p, &Matrix::from_rows(x)?)?;
        Ok(self.att.backward(p, &t, &self.readout).to_rows())
    }
}

struct MlpOp {
    readout: Vector,
    mlp: Mlp,
}

impl Differentiable for MlpOp {
    fn loss(&self, p: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        Ok(crate::tensorkit::dot(
            &self.readout,
            &self.mlp.forward(p, &x[0])?,
        ))
    }

    fn gradient(&self, p: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        let t = self.mlp.forward_trace(p, &x[0])?;
        Ok(vec![self.mlp.backward(p, &t, &self.readout)])
    }
}

struct StepBceOp {
    target: StepTarget,
}

impl Differentiable for StepBceOp {
    fn loss(&self, _: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        Ok(step_loss(&x[0], &self.target))
    }

    fn gradient(&self, _: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        let a = if self.target.correct { 1.0 } else { 0.0 };
        let n = self.target.concepts.len() as f64;
        let mut g = vec![0.0; x[0].len()];
        for &k in &self.target.concepts {
            let p = x[0][k];
            if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                g[k] = (p - a) / (p * (1.0 - p)) / n;
            }
        }
        Ok(vec![g])
    }
}

struct ReconstructionOp {
    target: Vector,
    weight: f64,
}

impl Differentiable for ReconstructionOp {
    fn loss(&self, _: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        Ok(reconstruction_loss(&self.target, &x[0], self.weight)?.0)
    }

    fn gradient(&self, _: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        Ok(vec![
            reconstruction_loss(&self.target, &x[0], self.weight)?.1,
        ])
    }
}

/// Two students (one per group) on a three-exercise catalog; the
/// reconstruction target is frozen at its initial value.
struct KcmpTotalOp {
    net: KcmpNet,
    catalog: Catalog,
    students: Vec<(Vec<Interaction>, StudentGroup, f64, Vector)>,
}

impl KcmpTotalOp {
    fn build(rng: &mut ChaCha8Rng) -> Result<(Self, ParameterSet), TensorError> {
        let catalog = Catalog::new(
            vec![
                Exercise {
                    id: "0".into(),
                    coverage: vec![1.0, 0.0],
                },
                Exercise {
                    id: "1".into(),
                    coverage: vec![0.0, 1.0],
                },
                Exercise {
                    id: "2".into(),
                    coverage: vec![1.0, 1.0],
                },
            ],
            2,
        )
        .map_err(|e| TensorError::Shape(e.to_string()))?;
        let cfg = KcmpConfig {
            hidden: 3,
            mode: EnhancerMode::Enabled,
            enhancer: EnhancerConfig {
                truncation: 2,
                beta: rng.random_range(0.2..1.0),
                lambda_s: rng.random_range(0.1..1.0),
                dim: 3,
                embed_dim: 2,
            },
            ..Default::default()
        };
        let mut ps = ParameterSet::new();
        let net = KcmpNet::build(&mut ps, &catalog, &cfg, rng);
        let seq = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Interaction> {
            (0..n)
                .map(|p| Interaction {
                    exercise: rng.random_range(0..3),
                    correct: rng.random_bool(0.5),
                    position: p as u32,
                })
                .collect()
        };
        let active = seq(rng, 4);
        let inactive = seq(rng, 3);
        let target = net.enhancer.encode(&ps, &active)?;
        let students = vec![
            (
                active,
                StudentGroup::Active,
                rng.random_range(0.2..1.0),
                target,
            ),
            (inactive, StudentGroup::Inactive, 0.0, Vec::new()),
        ];
        Ok((
            Self {
                net,
                catalog,
                students,
            },
            ps,
        ))
    }

    fn batch(&self) -> Vec<BatchStudent<'_>> {
        self.students
            .iter()
            .map(|(items, group, w, target)| BatchStudent {
                items,
                group: *group,
                curriculum: *w,
                target: Some(target.clone()),
            })
            .collect()
    }
}

impl Differentiable for KcmpTotalOp {
    fn loss(&self, p: &ParameterSet, _: &[Vector]) -> Result<f64, TensorError> {
        Ok(self
            .net
            .batch_loss(p, &self.catalog, &self.batch())?
            .total(self.net.lambda_s))
    }

    fn gradient(&self, p: &mut ParameterSet, _: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        self.net.batch_gradient(p, &self.catalog, &self.batch())?;
        Ok(Vec::new())
    }
}

struct RerankLossOp {
    labels: Vector,
}

impl Differentiable for RerankLossOp {
    fn loss(&self, _: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        rerank_loss(&x[0], &self.labels)
    }

    fn gradient(&self, _: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        Ok(vec![rerank_loss_grad(&x[0], &self.labels)])
    }
}

/// Full re-ranker on three candidates and three concepts (one of them
/// unpractised), trained objective on top.
struct RerankOp {
    net: RerankNet,
    input: RerankInput,
    labels: Vector,
    /// Fixed noise for the probabilistic head.
    xi: Option<Vector>,
}

impl RerankOp {
    fn build(
        rng: &mut ChaCha8Rng,
        probabilistic: bool,
    ) -> Result<(Self, ParameterSet, Vector), TensorError> {
        let shape = NetShape {
            rep_dim: 3,
            concepts: 3,
            exercises: 4,
            q_s: 2,
            q_e: 2,
            q_h: 2,
            heads: [1, 2][rng.random_range(0..2)],
            head_hidden: 3,
            sigma_init: SigmaInit::Small,
        };
        let mut ps = ParameterSet::new();
        let net = RerankNet::new(&mut ps, &shape, rng);
        let l = 3;
        let step = |rng: &mut ChaCha8Rng, t: f64| {
            let a = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            vec![a, 1.0 - a, t]
        };
        let input = RerankInput {
            rep: Vec::new(),
            candidates: (0..l).map(|_| rng.random_range(0..4)).collect(),
            coverage: (0..l)
                .map(|_| {
                    (0..3)
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect(),
            marginal: (0..l)
                .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect(),
            pace: vec![
                vec![step(rng, 0.25), step(rng, 0.5)],
                Vec::new(),
                vec![step(rng, 1.0)],
            ],
        };
        let op = Self {
            net,
            input,
            labels: (0..l)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
            xi: probabilistic.then(|| (0..l).map(|_| rng.random_range(-1.0..1.0)).collect()),
        };
        Ok((op, ps, random_vec(rng, 3, 1.0)))
    }

    fn with_rep(&self, rep: &[f64]) -> RerankInput {
        RerankInput {
            rep: rep.to_vec(),
            ..self.input.clone()
        }
    }

    fn scores(&self, mu: &[f64], sigma: &[f64]) -> Result<Vector, TensorError> {
        match &self.xi {
            Some(xi) => probabilistic_scores(mu, sigma, xi),
            None => Ok(mu.to_vec()),
        }
    }
}

impl Differentiable for RerankOp {
    fn loss(&self, p: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
        let t = self
            .net
            .forward(p, &self.with_rep(&x[0]), true, self.xi.is_some())?;
        rerank_loss(&self.scores(&t.mu, &t.sigma_out)?, &self.labels)
    }

    fn gradient(&self, p: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
        let input = self.with_rep(&x[0]);
        let t = self.net.forward(p, &input, true, self.xi.is_some())?;
        let d_phi = rerank_loss_grad(&self.scores(&t.mu, &t.sigma_out)?, &self.labels);
        let d_sigma = self
            .xi
            .as_ref()
            .map(|xi| d_phi.iter().zip(xi).map(|(g, e)| g * e).collect::<Vector>());
        Ok(vec![self.net.backward(
            p,
            &input,
            &t,
            &d_phi,
            d_sigma.as_deref(),
        )])
    }
}

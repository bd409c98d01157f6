//! Matrix-memory LSTM.
//!
//! The memory stores key/value pairs with the covariance rule
//! `C_t = f·C_{t-1} + i·v kᵀ`, a normalizer `n_t = f·n_{t-1} + i·k`, and
//! reads with a query: `h = o ⊙ C_t q / max(|n_tᵀ q|, e^{-m_t})`.
//!
//! The layer uses an exponential input gate and a sigmoid forget gate in log
//! space with a running stabilizer `m_t`; the stabilized and unstabilized
//! cells produce identical outputs, so `m_t` carries no gradient.

use rand::Rng;

use super::matrix::{dot, log_sigmoid, sigmoid};
use super::{Matrix, ParameterSet, TensorError, Vector};

/// Recurrent state of the matrix memory.
#[derive(Clone, Debug, PartialEq)]
pub struct MlstmState {
    pub cell: Matrix,
    pub normalizer: Vector,
    pub stabilizer: f64,
}

impl MlstmState {
    pub fn zeros(d: usize) -> Self {
        Self {
            cell: Matrix::zeros(d, d),
            normalizer: vec![0.0; d],
            stabilizer: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.normalizer.len()
    }
}

/// Already-activated gates for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MlstmGates {
    pub forget: f64,
    pub input: f64,
    pub output: Vector,
    /// Stabilizer of the state produced by this step; 0 for raw gates.
    pub stabilizer: f64,
}

impl MlstmGates {
    pub fn new(forget: f64, input: f64, output: Vector) -> Self {
        Self {
            forget,
            input,
            output,
            stabilizer: 0.0,
        }
    }
}

/// Gradients of one [`mlstm_step`] with respect to everything it reads.
#[derive(Clone, Debug)]
pub struct MlstmStepGrads {
    pub cell: Matrix,
    pub normalizer: Vector,
    pub key: Vector,
    pub value: Vector,
    pub query: Vector,
    pub forget: f64,
    pub input: f64,
    pub output: Vector,
}

fn readout_floor(stabilizer: f64) -> f64 {
    (-stabilizer).exp()
}

/// One covariance-rule update followed by a query readout.
pub fn mlstm_step(
    state: &MlstmState,
    key: &[f64],
    value: &[f64],
    query: &[f64],
    gates: &MlstmGates,
) -> Result<(MlstmState, Vector), TensorError> {
    let d = state.dim();
    if state.cell.shape() != (d, d)
        || key.len() != d
        || value.len() != d
        || query.len() != d
        || gates.output.len() != d
    {
        return Err(TensorError::Shape(format!(
            "mlstm step expects dimension {d} for key/value/query/output gate"
        )));
    }
    if !(gates.forget.is_finite() && gates.input.is_finite() && gates.stabilizer.is_finite())
        || !gates.output.iter().all(|v| v.is_finite())
    {
        return Err(TensorError::Numeric("non-finite mlstm gate".into()));
    }
    let mut cell = state.cell.clone();
    cell.scale(gates.forget);
    cell.add_outer(gates.input, value, key);
    let normalizer: Vector = state
        .normalizer
        .iter()
        .zip(key)
        .map(|(n, k)| gates.forget * n + gates.input * k)
        .collect();
    let num = cell.matvec(query);
    let den = dot(&normalizer, query)
        .abs()
        .max(readout_floor(gates.stabilizer));
    let out = num
        .iter()
        .zip(&gates.output)
        .map(|(x, o)| o * x / den)
        .collect();
    Ok((
        MlstmState {
            cell,
            normalizer,
            stabilizer: gates.stabilizer,
        },
        out,
    ))
}

/// Reverse of [`mlstm_step`]. `d_cell` and `d_normalizer` are the gradients
/// arriving at the produced state from later steps.
#[allow(clippy::too_many_arguments)]
pub fn mlstm_step_backward(
    prev: &MlstmState,
    next: &MlstmState,
    key: &[f64],
    value: &[f64],
    query: &[f64],
    gates: &MlstmGates,
    d_out: &[f64],
    d_cell: &Matrix,
    d_normalizer: &[f64],
) -> MlstmStepGrads {
    let d = prev.dim();
    let num = next.cell.matvec(query);
    let s = dot(&next.normalizer, query);
    let floor = readout_floor(gates.stabilizer);
    let den = s.abs().max(floor);

    let mut d_output = vec![0.0; d];
    let mut d_num = vec![0.0; d];
    let mut dot_num = 0.0;
    for j in 0..d {
        d_output[j] = d_out[j] * num[j] / den;
        let dh = d_out[j] * gates.output[j];
        d_num[j] = dh / den;
        dot_num += dh * num[j];
    }
    let d_den = -dot_num / (den * den);
    let ds = if s.abs() > floor {
        d_den * s.signum()
    } else {
        0.0
    };

    let mut dc = d_cell.clone();
    dc.add_outer(1.0, &d_num, query);
    let dn: Vector = d_normalizer
        .iter()
        .zip(query)
        .map(|(a, q)| a + ds * q)
        .collect();

    let mut d_query = next.cell.matvec_t(&d_num);
    for (a, n) in d_query.iter_mut().zip(&next.normalizer) {
        *a += ds * n;
    }

    let d_forget = dot(dc.as_slice(), prev.cell.as_slice()) + dot(&dn, &prev.normalizer);
    let dc_k = dc.matvec(key);
    let d_input = dot(value, &dc_k) + dot(&dn, key);
    let d_value: Vector = dc_k.iter().map(|x| gates.input * x).collect();
    let mut d_key = dc.matvec_t(value);
    for (a, n) in d_key.iter_mut().zip(&dn) {
        *a = gates.input * (*a + n);
    }

    let mut cell = dc;
    cell.scale(gates.forget);
    let normalizer = dn.iter().map(|x| gates.forget * x).collect();
    MlstmStepGrads {
        cell,
        normalizer,
        key: d_key,
        value: d_value,
        query: d_query,
        forget: d_forget,
        input: d_input,
        output: d_output,
    }
}

/// mLSTM layer: projections from the step input to query/key/value and
/// gates, driving [`mlstm_step`] over a sequence.
#[derive(Clone, Debug)]
pub struct MlstmLayer {
    prefix: String,
    pub input_dim: usize,
    pub dim: usize,
}

#[derive(Clone, Debug)]
struct MlstmLayerStep {
    x: Vector,
    q: Vector,
    k: Vector,
    v: Vector,
    forget_pre: f64,
    gates: MlstmGates,
    prev: MlstmState,
}

/// Forward record of [`MlstmLayer::forward`].
#[derive(Clone, Debug)]
pub struct MlstmTrace {
    steps: Vec<MlstmLayerStep>,
    pub states: Vec<MlstmState>,
    pub outputs: Vec<Vector>,
}

impl MlstmLayer {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        input_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let l = Self {
            prefix: name.to_string(),
            input_dim,
            dim,
        };
        for p in ["wq", "wk", "wv", "wo"] {
            params.insert_uniform(l.name(p), dim, input_dim, input_dim, rng);
        }
        for p in ["bq", "bk", "bv", "bo"] {
            params.insert_uniform(l.name(p), dim, 1, input_dim, rng);
        }
        for p in ["wi", "wf"] {
            params.insert_uniform(l.name(p), 1, input_dim, input_dim, rng);
        }
        for p in ["bi", "bf"] {
            params.insert_uniform(l.name(p), 1, 1, input_dim, rng);
        }
        l
    }

    fn name(&self, p: &str) -> String {
        format!("{}.{p}", self.prefix)
    }

    fn project(params: &ParameterSet, w: &str, b: &str, x: &[f64]) -> Vector {
        let mut y = params.get(b).as_slice().to_vec();
        params.get(w).matvec_acc(x, &mut y);
        y
    }

    pub fn forward(&self, params: &ParameterSet, xs: &[Vector]) -> Result<MlstmTrace, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::EmptyInput("mlstm sequence"));
        }
        let d = self.dim;
        let key_scale = 1.0 / (d as f64).sqrt();
        let (wq, bq) = (self.name("wq"), self.name("bq"));
        let (wk, bk) = (self.name("wk"), self.name("bk"));
        let (wv, bv) = (self.name("wv"), self.name("bv"));
        let (wo, bo) = (self.name("wo"), self.name("bo"));
        let (wi, bi) = (self.name("wi"), self.name("bi"));
        let (wf, bf) = (self.name("wf"), self.name("bf"));

        let mut state = MlstmState::zeros(d);
        let mut steps = Vec::with_capacity(xs.len());
        let mut states = Vec::with_capacity(xs.len());
        let mut outputs = Vec::with_capacity(xs.len());
        for x in xs {
            if x.len() != self.input_dim {
                return Err(TensorError::Shape(format!(
                    "{}: step input has length {}, expected {}",
                    self.prefix,
                    x.len(),
                    self.input_dim
                )));
            }
            let q = Self::project(params, &wq, &bq, x);
            let k: Vector = Self::project(params, &wk, &bk, x)
                .into_iter()
                .map(|v| v * key_scale)
                .collect();
            let v = Self::project(params, &wv, &bv, x);
            let o: Vector = Self::project(params, &wo, &bo, x)
                .into_iter()
                .map(sigmoid)
                .collect();
            let input_pre = Self::project(params, &wi, &bi, x)[0];
            let forget_pre = Self::project(params, &wf, &bf, x)[0];

            let log_f = log_sigmoid(forget_pre);
            let m = (log_f + state.stabilizer).max(input_pre);
            let gates = MlstmGates {
                forget: (log_f + state.stabilizer - m).exp(),
                input: (input_pre - m).exp(),
                output: o,
                stabilizer: m,
            };
            let (next, out) = mlstm_step(&state, &k, &v, &q, &gates)?;
            steps.push(MlstmLayerStep {
                x: x.clone(),
                q,
                k,
                v,
                forget_pre,
                gates,
                prev: std::mem::replace(&mut state, next.clone()),
            });
            states.push(next);
            outputs.push(out);
        }
        Ok(MlstmTrace {
            steps,
            states,
            outputs,
        })
    }

    /// Backpropagates per-step output gradients; returns input gradients.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        trace: &MlstmTrace,
        d_out: &[Vector],
    ) -> Vec<Vector> {
        assert_eq!(d_out.len(), trace.steps.len());
        let d = self.dim;
        let n_in = self.input_dim;
        let key_scale = 1.0 / (d as f64).sqrt();
        let mut g = [
            Matrix::zeros(d, n_in), // wq
            Matrix::zeros(d, n_in), // wk
            Matrix::zeros(d, n_in), // wv
            Matrix::zeros(d, n_in), // wo
        ];
        let mut gb = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut g_wi = vec![0.0; n_in];
        let mut g_wf = vec![0.0; n_in];
        let (mut g_bi, mut g_bf) = (0.0, 0.0);

        let mut d_cell = Matrix::zeros(d, d);
        let mut d_norm = vec![0.0; d];
        let mut dxs = vec![Vec::new(); trace.steps.len()];
        {
            let w = [
                params.get(&self.name("wq")),
                params.get(&self.name("wk")),
                params.get(&self.name("wv")),
                params.get(&self.name("wo")),
            ];
            let wi = params.get(&self.name("wi")).as_slice();
            let wf = params.get(&self.name("wf")).as_slice();
            for (t, step) in trace.steps.iter().enumerate().rev() {
                let sg = mlstm_step_backward(
                    &step.prev,
                    &trace.states[t],
                    &step.k,
                    &step.v,
                    &step.q,
                    &step.gates,
                    &d_out[t],
                    &d_cell,
                    &d_norm,
                );
                let dz_q = sg.query;
                let dz_k: Vector = sg.key.iter().map(|x| x * key_scale).collect();
                let dz_v = sg.value;
                let dz_o: Vector = sg
                    .output
                    .iter()
                    .zip(&step.gates.output)
                    .map(|(dv, o)| dv * o * (1.0 - o))
                    .collect();
                let dz_i = sg.input * step.gates.input;
                let dz_f = sg.forget * step.gates.forget * (1.0 - sigmoid(step.forget_pre));

                let mut dx = vec![0.0; n_in];
                for (idx, dz) in [&dz_q, &dz_k, &dz_v, &dz_o].into_iter().enumerate() {
                    g[idx].add_outer(1.0, dz, &step.x);
                    for (a, b) in gb[idx].iter_mut().zip(dz) {
                        *a += b;
                    }
                    w[idx].matvec_t_acc(dz, &mut dx);
                }
                for j in 0..n_in {
                    g_wi[j] += dz_i * step.x[j];
                    g_wf[j] += dz_f * step.x[j];
                    dx[j] += dz_i * wi[j] + dz_f * wf[j];
                }
                g_bi += dz_i;
                g_bf += dz_f;
                dxs[t] = dx;
                d_cell = sg.cell;
                d_norm = sg.normalizer;
            }
        }
        let [gq, gk, gv, go] = g;
        let [bq, bk, bv, bo] = gb;
        for (n, m) in [("wq", gq), ("wk", gk), ("wv", gv), ("wo", go)] {
            params.accumulate(&self.name(n), &m);
        }
        for (n, v) in [("bq", bq), ("bk", bk), ("bv", bv), ("bo", bo)] {
            params.accumulate(&self.name(n), &Matrix::column(v));
        }
        params.accumulate(&self.name("wi"), &Matrix::from_vec(1, n_in, g_wi).unwrap());
        params.accumulate(&self.name("wf"), &Matrix::from_vec(1, n_in, g_wf).unwrap());
        params.accumulate(&self.name("bi"), &Matrix::column(vec![g_bi]));
        params.accumulate(&self.name("bf"), &Matrix::column(vec![g_bf]));
        dxs
    }

    /// Name of the forget-gate bias, for callers that want a long initial memory.
    pub fn forget_bias_name(&self) -> String {
        self.name("bf")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vector {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn closed_forget_open_input_leaves_state_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 4;
        let mut s = MlstmState::zeros(d);
        s.cell = Matrix::from_vec(
            d,
            d,
            (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        s.normalizer = rand_vec(&mut rng, d);
        let (k, v, q) = (
            rand_vec(&mut rng, d),
            rand_vec(&mut rng, d),
            rand_vec(&mut rng, d),
        );
        let gates = MlstmGates::new(1.0, 0.0, vec![1.0; d]);
        let (next, _) = mlstm_step(&s, &k, &v, &q, &gates).unwrap();
        assert_eq!(next.cell, s.cell);
        assert_eq!(next.normalizer, s.normalizer);
    }

    #[test]
    fn first_write_from_zero_is_rank_one_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 5;
        let (k, v, q) = (
            rand_vec(&mut rng, d),
            rand_vec(&mut rng, d),
            rand_vec(&mut rng, d),
        );
        let gates = MlstmGates::new(0.37, 1.0, vec![0.5; d]);
        let (next, _) = mlstm_step(&MlstmState::zeros(d), &k, &v, &q, &gates).unwrap();
        let mut expect = Matrix::zeros(d, d);
        expect.add_outer(1.0, &v, &k);
        assert_eq!(next.cell, expect);
        assert!(next.cell.rank(1e-10) <= 1);
    }

    #[test]
    fn rank_grows_at_most_one_per_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut ps = ParameterSet::new();
        let layer = MlstmLayer::new(&mut ps, "m", 3, 6, &mut rng);
        let xs: Vec<Vector> = (0..4).map(|_| rand_vec(&mut rng, 3)).collect();
        let trace = layer.forward(&ps, &xs).unwrap();
        for (t, s) in trace.states.iter().enumerate() {
            assert!(s.cell.rank(1e-9) <= t + 1);
        }
    }

    #[test]
    fn errors_on_bad_shapes_and_gates() {
        let s = MlstmState::zeros(3);
        let ok = vec![0.0; 3];
        let gates = MlstmGates::new(1.0, 1.0, vec![1.0; 3]);
        assert!(matches!(
            mlstm_step(&s, &[0.0; 2], &ok, &ok, &gates),
            Err(TensorError::Shape(_))
        ));
        let bad = MlstmGates::new(f64::NAN, 1.0, vec![1.0; 3]);
        assert!(matches!(
            mlstm_step(&s, &ok, &ok, &ok, &bad),
            Err(TensorError::Numeric(_))
        ));
    }

    #[test]
    fn stabilized_layer_matches_unstabilized_readout() {
        // Recompute the layer without the stabilizer and compare outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut ps = ParameterSet::new();
        let layer = MlstmLayer::new(&mut ps, "m", 3, 4, &mut rng);
        *ps.value_mut("m.bi") = Matrix::column(vec![2.5]);
        let xs: Vec<Vector> = (0..6).map(|_| rand_vec(&mut rng, 3)).collect();
        let trace = layer.forward(&ps, &xs).unwrap();
        let mut state = MlstmState::zeros(4);
        for (x, out) in xs.iter().zip(&trace.outputs) {
            let proj = |w: &str, b: &str| MlstmLayer::project(&ps, w, b, x);
            let q = proj("m.wq", "m.bq");
            let k: Vector = proj("m.wk", "m.bk").iter().map(|v| v / 2.0).collect();
            let v = proj("m.wv", "m.bv");
            let o: Vector = proj("m.wo", "m.bo").into_iter().map(sigmoid).collect();
            let gates = MlstmGates::new(
                sigmoid(proj("m.wf", "m.bf")[0]),
                proj("m.wi", "m.bi")[0].exp(),
                o,
            );
            let (next, raw) = mlstm_step(&state, &k, &v, &q, &gates).unwrap();
            state = next;
            for (a, b) in raw.iter().zip(out) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

use rand::Rng;

use super::matrix::sigmoid;
use super::{Matrix, ParameterSet, TensorError, Vector};

/// Hidden and cell vectors of an LSTM after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Single-layer LSTM, gate order `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    w: String,
    u: String,
    b: String,
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug)]
struct LstmStep {
    x: Vector,
    prev: LstmState,
    /// Activated gates, `4 * hidden` long.
    gates: Vector,
    tanh_c: Vector,
}

/// Forward record of [`Lstm::forward`].
#[derive(Clone, Debug)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
    pub states: Vec<LstmState>,
}

impl LstmTrace {
    pub fn last(&self) -> &LstmState {
        self.states.last().expect("trace is never empty")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn hidden_states(&self) -> Vec<Vector> {
        self.states.iter().map(|s| s.h.clone()).collect()
    }
}

impl Lstm {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let l = Self::named(name, input_dim, hidden);
        let fan_in = input_dim + hidden;
        params.insert_uniform(&l.w, 4 * hidden, input_dim, fan_in, rng);
        params.insert_uniform(&l.u, 4 * hidden, hidden, fan_in, rng);
        params.insert_uniform(&l.b, 4 * hidden, 1, fan_in, rng);
        l
    }

    pub fn named(name: &str, input_dim: usize, hidden: usize) -> Self {
        Self {
            w: format!("{name}.w"),
            u: format!("{name}.u"),
            b: format!("{name}.b"),
            input_dim,
            hidden,
        }
    }

    pub fn param_names(&self) -> [&str; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn forward(
        &self,
        params: &ParameterSet,
        seq: &[Vector],
        init: Option<&LstmState>,
    ) -> Result<LstmTrace, TensorError> {
        if seq.is_empty() {
            return Err(TensorError::EmptyInput("lstm sequence"));
        }
        let hsz = self.hidden;
        let w = params.get(&self.w);
        let u = params.get(&self.u);
        let b = params.get(&self.b).as_slice();
        let mut prev = init.cloned().unwrap_or_else(|| LstmState::zeros(hsz));
        if prev.h.len() != hsz || prev.c.len() != hsz {
            return Err(TensorError::Shape("lstm initial state size".into()));
        }
        let mut steps = Vec::with_capacity(seq.len());
        let mut states = Vec::with_capacity(seq.len());
        for x in seq {
            if x.len() != self.input_dim {
                return Err(TensorError::Shape(format!(
                    "{}: step input has length {}, expected {}",
                    self.w,
                    x.len(),
                    self.input_dim
                )));
            }
            let mut z = b.to_vec();
            w.matvec_acc(x, &mut z);
            u.matvec_acc(&prev.h, &mut z);
            for v in &mut z[..2 * hsz] {
                *v = sigmoid(*v);
            }
            for v in &mut z[2 * hsz..3 * hsz] {
                *v = v.tanh();
            }
            for v in &mut z[3 * hsz..] {
                *v = sigmoid(*v);
            }
            let mut c = vec![0.0; hsz];
            let mut h = vec![0.0; hsz];
            let mut tanh_c = vec![0.0; hsz];
            for j in 0..hsz {
                c[j] = z[hsz + j] * prev.c[j] + z[j] * z[2 * hsz + j];
                tanh_c[j] = c[j].tanh();
                h[j] = z[3 * hsz + j] * tanh_c[j];
            }
            let state = LstmState { h, c };
            steps.push(LstmStep {
                x: x.clone(),
                prev: std::mem::replace(&mut prev, state.clone()),
                gates: z,
                tanh_c,
            });
            states.push(state);
        }
        Ok(LstmTrace { steps, states })
    }

    /// Backpropagates per-step hidden-state gradients `dh` (one per step,
    /// possibly all zero except the last) plus an optional gradient on the
    /// final cell. Accumulates parameter gradients and returns the input
    /// gradients together with the gradient on the initial state.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        trace: &LstmTrace,
        dh: &[Vector],
        dc_last: Option<&[f64]>,
    ) -> (Vec<Vector>, LstmState) {
        assert_eq!(dh.len(), trace.steps.len(), "one hidden gradient per step");
        let hsz = self.hidden;
        let mut gw = Matrix::zeros(4 * hsz, self.input_dim);
        let mut gu = Matrix::zeros(4 * hsz, hsz);
        let mut gb = vec![0.0; 4 * hsz];
        let mut dxs = vec![Vec::new(); trace.steps.len()];
        let mut dh_next = vec![0.0; hsz];
        let mut dc_next = dc_last.map_or_else(|| vec![0.0; hsz], <[f64]>::to_vec);
        {
            let w = params.get(&self.w);
            let u = params.get(&self.u);
            let mut dz = vec![0.0; 4 * hsz];
            for (t, step) in trace.steps.iter().enumerate().rev() {
                let g = &step.gates;
                for j in 0..hsz {
                    let dht = dh[t][j] + dh_next[j];
                    let (i, f, cand, o) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
                    let tc = step.tanh_c[j];
                    let dct = dc_next[j] + dht * o * (1.0 - tc * tc);
                    dz[j] = dct * cand * i * (1.0 - i);
                    dz[hsz + j] = dct * step.prev.c[j] * f * (1.0 - f);
                    dz[2 * hsz + j] = dct * i * (1.0 - cand * cand);
                    dz[3 * hsz + j] = dht * tc * o * (1.0 - o);
                    dc_next[j] = dct * f;
                }
                gw.add_outer(1.0, &dz, &step.x);
                gu.add_outer(1.0, &dz, &step.prev.h);
                for (a, b) in gb.iter_mut().zip(&dz) {
                    *a += b;
                }
                dxs[t] = w.matvec_t(&dz);
                dh_next = u.matvec_t(&dz);
            }
        }
        params.accumulate(&self.w, &gw);
        params.accumulate(&self.u, &gu);
        params.accumulate(&self.b, &Matrix::column(gb));
        (
            dxs,
            LstmState {
                h: dh_next,
                c: dc_next,
            },
        )
    }
}

/// Forward and backward LSTMs over the same list, outputs concatenated.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward_lstm: Lstm,
    pub backward_lstm: Lstm,
}

/// Forward record of [`BiLstm::forward`].
#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// Row `l` is `[→h_l, ←h_l]`.
    pub outputs: Vec<Vector>,
}

impl BiLstm {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            forward_lstm: Lstm::new(params, &format!("{name}.fwd"), input_dim, hidden, rng),
            backward_lstm: Lstm::new(params, &format!("{name}.bwd"), input_dim, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_lstm.hidden
    }

    pub fn forward(
        &self,
        params: &ParameterSet,
        seq: &[Vector],
    ) -> Result<BiLstmTrace, TensorError> {
        let fwd = self.forward_lstm.forward(params, seq, None)?;
        let reversed: Vec<Vector> = seq.iter().rev().cloned().collect();
        let bwd = self.backward_lstm.forward(params, &reversed, None)?;
        let n = seq.len();
        let outputs = (0..n)
            .map(|l| {
                let mut row = fwd.states[l].h.clone();
                row.extend_from_slice(&bwd.states[n - 1 - l].h);
                row
            })
            .collect();
        Ok(BiLstmTrace { fwd, bwd, outputs })
    }

    /// Backpropagates gradients on the concatenated outputs; returns input gradients.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        trace: &BiLstmTrace,
        d_out: &[Vector],
    ) -> Vec<Vector> {
        let n = trace.outputs.len();
        let hsz = self.hidden();
        let dfw: Vec<Vector> = d_out.iter().map(|d| d[..hsz].to_vec()).collect();
        let dbw: Vec<Vector> = d_out.iter().rev().map(|d| d[hsz..].to_vec()).collect();
        let (mut dx, _) = self.forward_lstm.backward(params, &trace.fwd, &dfw, None);
        let (dx_rev, _) = self.backward_lstm.backward(params, &trace.bwd, &dbw, None);
        for l in 0..n {
            for (a, b) in dx[l].iter_mut().zip(&dx_rev[n - 1 - l]) {
                *a += b;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vector> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn one_state_per_step_and_empty_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParameterSet::new();
        let lstm = Lstm::new(&mut ps, "l", 2, 3, &mut rng);
        let seq = random_seq(&mut rng, 1, 2);
        assert_eq!(lstm.forward(&ps, &seq, None).unwrap().len(), 1);
        assert!(matches!(
            lstm.forward(&ps, &[], None),
            Err(TensorError::EmptyInput(_))
        ));
    }

    #[test]
    fn zero_parameters_and_inputs_give_zero_hidden_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParameterSet::new();
        let lstm = Lstm::new(&mut ps, "l", 2, 3, &mut rng);
        ps.zero_values("l");
        let trace = lstm.forward(&ps, &vec![vec![0.0; 2]; 4], None).unwrap();
        assert!(trace.states.iter().all(|s| s.h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn hidden_states_are_tanh_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParameterSet::new();
        let lstm = Lstm::new(&mut ps, "l", 3, 4, &mut rng);
        let seq: Vec<Vector> = random_seq(&mut rng, 30, 3)
            .into_iter()
            .map(|v| v.into_iter().map(|x| 50.0 * x).collect())
            .collect();
        let trace = lstm.forward(&ps, &seq, None).unwrap();
        assert!(trace
            .states
            .iter()
            .all(|s| s.h.iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn bilstm_length_one_uses_same_input_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParameterSet::new();
        let bi = BiLstm::new(&mut ps, "bi", 2, 3, &mut rng);
        let seq = random_seq(&mut rng, 1, 2);
        let out = bi.forward(&ps, &seq).unwrap().outputs;
        let f = bi.forward_lstm.forward(&ps, &seq, None).unwrap();
        let b = bi.backward_lstm.forward(&ps, &seq, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0][..3], f.last().h[..]);
        assert_eq!(out[0][3..], b.last().h[..]);
    }
}

use rand::Rng;

use super::{Linear, Matrix, ParameterSet, TensorError, Vector};

/// Multi-head scaled dot-product self-attention over the rows of a matrix.
///
/// Each head projects rows to `head_dim`; head outputs are concatenated and
/// mapped back to the model width, so any head count works with any width.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    heads: Vec<[Linear; 3]>,
    out: Linear,
    pub dim: usize,
    pub head_dim: usize,
}

#[derive(Clone, Debug)]
struct HeadTrace {
    q: Vec<Vector>,
    k: Vec<Vector>,
    v: Vec<Vector>,
    weights: Matrix,
}

/// Forward record of [`SelfAttention::forward`].
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    x: Vec<Vector>,
    heads: Vec<HeadTrace>,
    concat: Vec<Vector>,
    pub output: Matrix,
}

impl AttentionTrace {
    /// Row-stochastic attention weights of head `h` (`m x m`).
    pub fn weights(&self, h: usize) -> &Matrix {
        &self.heads[h].weights
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }
}

impl SelfAttention {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads >= 1, "at least one attention head");
        let head_dim = (dim / heads).max(1);
        let heads_v = (0..heads)
            .map(|h| {
                [
                    Linear::new(params, &format!("{name}.h{h}.q"), dim, head_dim, rng),
                    Linear::new(params, &format!("{name}.h{h}.k"), dim, head_dim, rng),
                    Linear::new(params, &format!("{name}.h{h}.v"), dim, head_dim, rng),
                ]
            })
            .collect();
        let out = Linear::new(params, &format!("{name}.out"), heads * head_dim, dim, rng);
        Self {
            heads: heads_v,
            out,
            dim,
            head_dim,
        }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn forward(
        &self,
        params: &ParameterSet,
        w: &Matrix,
    ) -> Result<AttentionTrace, TensorError> {
        let m = w.rows();
        if m == 0 {
            return Err(TensorError::EmptyInput("attention input has no rows"));
        }
        if w.cols() != self.dim {
            return Err(TensorError::Shape(format!(
                "attention input width {} != {}",
                w.cols(),
                self.dim
            )));
        }
        let x = w.to_rows();
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads.len());
        let mut concat = vec![Vec::with_capacity(self.heads.len() * self.head_dim); m];
        for [lq, lk, lv] in &self.heads {
            let proj = |l: &Linear| -> Result<Vec<Vector>, TensorError> {
                x.iter().map(|r| l.forward(params, r)).collect()
            };
            let (q, k, v) = (proj(lq)?, proj(lk)?, proj(lv)?);
            let mut weights = Matrix::zeros(m, m);
            for i in 0..m {
                let logits: Vec<f64> = (0..m).map(|j| scale * super::dot(&q[i], &k[j])).collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    weights.set(i, j, e / z);
                }
                let mut row = vec![0.0; self.head_dim];
                for j in 0..m {
                    let a = weights.get(i, j);
                    for (r, vj) in row.iter_mut().zip(&v[j]) {
                        *r += a * vj;
                    }
                }
                concat[i].extend_from_slice(&row);
            }
            heads.push(HeadTrace { q, k, v, weights });
        }
        let rows = concat
            .iter()
            .map(|c| self.out.forward(params, c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AttentionTrace {
            x,
            heads,
            concat,
            output: Matrix::from_rows(&rows)?,
        })
    }

    /// Backpropagates the gradient on the output matrix; returns `∂/∂W`.
    pub fn backward(
        &self,
        params: &mut ParameterSet,
        trace: &AttentionTrace,
        d_out: &Matrix,
    ) -> Matrix {
        let m = trace.x.len();
        let hd = self.head_dim;
        let scale = 1.0 / (hd as f64).sqrt();
        let d_concat: Vec<Vector> = (0..m)
            .map(|i| self.out.backward(params, &trace.concat[i], d_out.row(i)))
            .collect();
        let mut dx = Matrix::zeros(m, self.dim);
        for (h, ([lq, lk, lv], ht)) in self.heads.iter().zip(&trace.heads).enumerate() {
            let dhead: Vec<&[f64]> = d_concat.iter().map(|r| &r[h * hd..(h + 1) * hd]).collect();
            let mut dq = vec![vec![0.0; hd]; m];
            let mut dk = vec![vec![0.0; hd]; m];
            let mut dv = vec![vec![0.0; hd]; m];
            for i in 0..m {
                // dA_ij = dH_i · v_j ; dV_j += A_ij dH_i
                let da: Vec<f64> = (0..m).map(|j| super::dot(dhead[i], &ht.v[j])).collect();
                for j in 0..m {
                    let a = ht.weights.get(i, j);
                    for (x, y) in dv[j].iter_mut().zip(dhead[i]) {
                        *x += a * y;
                    }
                }
                let row_dot: f64 = (0..m).map(|j| ht.weights.get(i, j) * da[j]).sum();
                for j in 0..m {
                    let ds = ht.weights.get(i, j) * (da[j] - row_dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..hd {
                        dq[i][c] += ds * ht.k[j][c];
                        dk[j][c] += ds * ht.q[i][c];
                    }
                }
            }
            for i in 0..m {
                let gx_q = lq.backward(params, &trace.x[i], &dq[i]);
                let gx_k = lk.backward(params, &trace.x[i], &dk[i]);
                let gx_v = lv.backward(params, &trace.x[i], &dv[i]);
                let row = dx.row_mut(i);
                for c in 0..self.dim {
                    row[c] += gx_q[c] + gx_k[c] + gx_v[c];
                }
            }
        }
        dx
    }
}

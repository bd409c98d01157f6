use rand::Rng;

use super::matrix::{sigmoid, softplus};
use super::{Matrix, ParameterSet, TensorError, Vector};

/// `y = W x + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let layer = Self::named(name, in_dim, out_dim);
        params.insert_uniform(&layer.w, out_dim, in_dim, in_dim, rng);
        params.insert_uniform(&layer.b, out_dim, 1, in_dim, rng);
        layer
    }

    /// Layer handle for parameters that are already registered.
    pub fn named(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: format!("{name}.w"),
            b: format!("{name}.b"),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    pub fn bias_name(&self) -> &str {
        &self.b
    }

    pub fn forward(&self, params: &ParameterSet, x: &[f64]) -> Result<Vector, TensorError> {
        if x.len() != self.in_dim {
            return Err(TensorError::Shape(format!(
                "{}: input has length {}, expected {}",
                self.w,
                x.len(),
                self.in_dim
            )));
        }
        let mut y = params.get(&self.b).as_slice().to_vec();
        params.get(&self.w).matvec_acc(x, &mut y);
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns `∂/∂x`.
    pub fn backward(&self, params: &mut ParameterSet, x: &[f64], dy: &[f64]) -> Vector {
        {
            let b = params.param_mut(&self.b);
            for (g, d) in b.grad.as_mut_slice().iter_mut().zip(dy) {
                *g += d;
            }
        }
        let w = params.param_mut(&self.w);
        w.grad.add_outer(1.0, dy, x);
        w.value.matvec_t(dy)
    }
}

/// Elementwise activation applied after a linear layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Feed-forward stack: ReLU between layers, configurable output activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    pub output: Activation,
}

/// Intermediate values of one [`Mlp`] evaluation, consumed by `backward`.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    inputs: Vec<Vector>,
    pre: Vec<Vector>,
    pub out: Vector,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`, at least two entries.
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        dims: &[usize],
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, output }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, params: &ParameterSet, x: &[f64]) -> Result<Vector, TensorError> {
        Ok(self.forward_trace(params, x)?.out)
    }

    pub fn forward_trace(&self, params: &ParameterSet, x: &[f64]) -> Result<MlpTrace, TensorError> {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(params, &h)?;
            let act = if i + 1 == n {
                self.output
            } else {
                Activation::Relu
            };
            let y = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(h);
            pre.push(z);
            h = y;
        }
        Ok(MlpTrace {
            inputs,
            pre,
            out: h,
        })
    }

    pub fn backward(&self, params: &mut ParameterSet, trace: &MlpTrace, dy: &[f64]) -> Vector {
        let n = self.layers.len();
        let mut grad = dy.to_vec();
        for i in (0..n).rev() {
            let act = if i + 1 == n {
                self.output
            } else {
                Activation::Relu
            };
            let out_i: &[f64] = if i + 1 == n {
                &trace.out
            } else {
                &trace.inputs[i + 1]
            };
            for ((g, &z), &y) in grad.iter_mut().zip(&trace.pre[i]).zip(out_i) {
                *g *= act.derivative(z, y);
            }
            grad = self.layers[i].backward(params, &trace.inputs[i], &grad);
        }
        grad
    }
}

/// Lookup table of learned row vectors.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: String,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let e = Self {
            table: format!("{name}.table"),
            count,
            dim,
        };
        params.insert_uniform(&e.table, count, dim, dim, rng);
        e
    }

    pub fn lookup<'a>(&self, params: &'a ParameterSet, index: usize) -> &'a [f64] {
        params.get(&self.table).row(index)
    }

    pub fn backward(&self, params: &mut ParameterSet, index: usize, dy: &[f64]) {
        params.accumulate_row(&self.table, index, dy);
    }

    pub fn table_name(&self) -> &str {
        &self.table
    }
}

/// Identity matrix, used by tests and for constructing pass-through layers.
pub fn identity(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.set(i, i, 1.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mlp_with_sigmoid_outputs_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let mlp = Mlp::new(&mut ps, "m", &[3, 4, 2], Activation::Sigmoid, &mut rng);
        ps.zero_values("m");
        assert_eq!(mlp.forward(&ps, &[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let mlp = Mlp::new(&mut ps, "id", &[3, 3], Activation::Identity, &mut rng);
        *ps.value_mut("id.l0.w") = identity(3);
        ps.zero_values("id.l0.b");
        let x = [0.3, -1.5, 2.0];
        assert_eq!(mlp.forward(&ps, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParameterSet::new();
        let mlp = Mlp::new(&mut ps, "m", &[3, 2], Activation::Identity, &mut rng);
        assert!(matches!(
            mlp.forward(&ps, &[1.0]),
            Err(TensorError::Shape(_))
        ));
    }
}

use std::collections::BTreeMap;

use rand::Rng;

use super::{Matrix, TensorError};

/// A trainable tensor and its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
    /// Frozen parameters keep their value through optimizer steps.
    pub frozen: bool,
}

impl Param {
    fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            value,
            grad,
            frozen: false,
        }
    }
}

/// Named parameters of one model, ordered by name.
///
/// Every layer registers its tensors under a dotted prefix (`kcmp.mlstm.wq`),
/// so independent models can share one set and one checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `value` under `name`, replacing any previous entry.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(name.into(), Param::new(value));
    }

    /// Registers a `rows x cols` tensor drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("shape"));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    /// Value of a registered parameter. Panics on unknown names: layers only
    /// look up names they registered themselves.
    pub fn get(&self, name: &str) -> &Matrix {
        match self.params.get(name) {
            Some(p) => &p.value,
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn param(&self, name: &str) -> &Param {
        match self.params.get(name) {
            Some(p) => p,
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        match self.params.get_mut(name) {
            Some(p) => p,
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.param_mut(name).value
    }

    pub fn grad(&self, name: &str) -> &Matrix {
        &self.param(name).grad
    }

    /// Adds `g` into the gradient buffer of `name`.
    pub fn accumulate(&mut self, name: &str, g: &Matrix) {
        let p = self.param_mut(name);
        debug_assert_eq!(p.grad.shape(), g.shape(), "gradient shape for {name}");
        p.grad.add_scaled(1.0, g);
    }

    /// Adds a row of gradient into row `r` of `name` (embedding tables).
    pub fn accumulate_row(&mut self, name: &str, r: usize, g: &[f64]) {
        let row = self.param_mut(name).grad.row_mut(r);
        for (a, b) in row.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Freezes (or unfreezes) every parameter whose name starts with `prefix`.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = frozen;
            }
        }
    }

    /// Sets every parameter under `prefix` to zero.
    pub fn zero_values(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.value.fill(0.0);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter under `prefix` into a new set.
    pub fn subset(&self, prefix: &str) -> ParameterSet {
        ParameterSet {
            params: self
                .params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        }
    }

    /// Merges `other` into `self`, overwriting same-named entries.
    pub fn extend(&mut self, other: ParameterSet) {
        self.params.extend(other.params);
    }

    /// Replaces values from `other` for every name present in both sets.
    pub fn load_values(&mut self, other: &ParameterSet) -> Result<(), TensorError> {
        for (name, p) in other.iter() {
            if let Some(dst) = self.params.get_mut(name) {
                if dst.value.shape() != p.value.shape() {
                    return Err(TensorError::Shape(format!(
                        "checkpoint shape {:?} for `{name}` does not match model shape {:?}",
                        p.value.shape(),
                        dst.value.shape()
                    )));
                }
                dst.value = p.value.clone();
            }
        }
        Ok(())
    }

    /// Global L2 norm of all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in self.params.values_mut() {
            p.grad.scale(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .values()
            .all(|p| p.value.is_finite() && p.grad.is_finite())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the current gradient buffers. Gradients are
    /// left untouched; callers zero them before the next accumulation.
    pub fn step(&mut self, params: &mut ParameterSet) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if p.frozen {
                continue;
            }
            let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| {
                (
                    Matrix::zeros(p.value.rows(), p.value.cols()),
                    Matrix::zeros(p.value.rows(), p.value.cols()),
                )
            });
            let g = p.grad.as_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for (i, w) in p.value.as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParameterSet::new();
        ps.insert_uniform("w", 8, 16, 16, &mut rng);
        assert!(ps.get("w").as_slice().iter().all(|x| x.abs() <= 0.25));
        assert_eq!(ps.grad("w").shape(), (8, 16));
    }

    #[test]
    fn adam_moves_against_gradient_and_skips_frozen() {
        let mut ps = ParameterSet::new();
        ps.insert("a", Matrix::column(vec![1.0]));
        ps.insert("b", Matrix::column(vec![1.0]));
        ps.set_frozen("b", true);
        ps.param_mut("a").grad = Matrix::column(vec![2.0]);
        ps.param_mut("b").grad = Matrix::column(vec![2.0]);
        let mut adam = Adam::new(0.001);
        adam.step(&mut ps);
        // first bias-corrected step has magnitude lr
        assert!((ps.get("a").get(0, 0) - 0.999).abs() < 1e-9);
        assert_eq!(ps.get("b").get(0, 0), 1.0);
    }

    #[test]
    fn zero_grads_clears_every_buffer() {
        let mut ps = ParameterSet::new();
        ps.insert("x", Matrix::zeros(2, 2));
        ps.accumulate("x", &Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap());
        assert_eq!(ps.grad_norm(), 2.0);
        ps.zero_grads();
        assert_eq!(ps.grad_norm(), 0.0);
    }
}

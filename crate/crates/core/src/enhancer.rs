//! Student representation enhancer.
//!
//! An LSTM encoder summarises an interaction history into a vector. A
//! generator MLP learns, on prolific students, to map the encoding of a short
//! recent window onto the encoding of the whole history; short-history
//! students then get `G(h) + β·h` in place of their raw encoding.

use rand::Rng;

use crate::datamodel::{Interaction, InteractionSequence, StudentGroup};
use crate::error::ModelError;
use crate::tensorkit::{
    Activation, Embedding, Lstm, LstmTrace, Mlp, MlpTrace, ParameterSet, TensorError, Vector,
};

/// Parameter namespace of everything owned by the enhancer.
pub const ENHANCER_PREFIX: &str = "enh.";
/// Parameter namespace of the generator alone.
pub const GENERATOR_PREFIX: &str = "enh.gen.";
/// Mixing weights searched by default.
pub const BETA_GRID: [f64; 4] = [0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancerConfig {
    /// Window length `T` fed to the generator during training.
    pub truncation: usize,
    pub beta: f64,
    pub lambda_s: f64,
    /// Representation width `d`.
    pub dim: usize,
    pub embed_dim: usize,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            truncation: 10,
            beta: 0.6,
            lambda_s: 0.5,
            dim: 16,
            embed_dim: 8,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.truncation == 0 {
            return Err(ModelError::Config(
                "truncation length must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(ModelError::Config(format!(
                "beta must lie in [0,1], got {}",
                self.beta
            )));
        }
        if !(self.lambda_s >= 0.0 && self.lambda_s.is_finite()) {
            return Err(ModelError::Config(format!(
                "lambda_s must be >= 0, got {}",
                self.lambda_s
            )));
        }
        if self.dim == 0 || self.embed_dim == 0 {
            return Err(ModelError::Config(
                "enhancer dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder and generator handles; weights live in a [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Enhancer {
    pub embedding: Embedding,
    pub encoder: Lstm,
    pub generator: Mlp,
    pub dim: usize,
}

/// Forward record of [`Enhancer::encode_trace`].
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    exercises: Vec<usize>,
    lstm: LstmTrace,
}

impl EncoderTrace {
    /// Encoding after the first `t` interactions; `t = 0` is the zero vector.
    pub fn prefix(&self, t: usize) -> Vector {
        if t == 0 {
            vec![0.0; self.lstm.last().h.len()]
        } else {
            self.lstm.states[t - 1].h.clone()
        }
    }

    pub fn last(&self) -> &[f64] {
        &self.lstm.last().h
    }

    pub fn len(&self) -> usize {
        self.exercises.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exercises.is_empty()
    }
}

impl Enhancer {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        exercises: usize,
        cfg: &EnhancerConfig,
        rng: &mut R,
    ) -> Self {
        let embedding = Embedding::new(params, "enh.emb", exercises, cfg.embed_dim, rng);
        let encoder = Lstm::new(params, "enh.enc", cfg.embed_dim + 1, cfg.dim, rng);
        let generator = Mlp::new(
            params,
            "enh.gen",
            &[cfg.dim, cfg.dim, cfg.dim],
            Activation::Identity,
            rng,
        );
        Self {
            embedding,
            encoder,
            generator,
            dim: cfg.dim,
        }
    }

    fn step_input(&self, params: &ParameterSet, it: &Interaction) -> Vector {
        let mut x = self.embedding.lookup(params, it.exercise).to_vec();
        x.push(it.outcome());
        x
    }

    pub fn encode_trace(
        &self,
        params: &ParameterSet,
        items: &[Interaction],
    ) -> Result<EncoderTrace, TensorError> {
        if items.is_empty() {
            return Err(TensorError::EmptyInput("cannot encode an empty history"));
        }
        let xs: Vec<Vector> = items.iter().map(|it| self.step_input(params, it)).collect();
        Ok(EncoderTrace {
            exercises: items.iter().map(|it| it.exercise).collect(),
            lstm: self.encoder.forward(params, &xs, None)?,
        })
    }

    /// Final hidden state of the encoder over `items`.
    pub fn encode(
        &self,
        params: &ParameterSet,
        items: &[Interaction],
    ) -> Result<Vector, TensorError> {
        Ok(self.encode_trace(params, items)?.last().to_vec())
    }

    /// Backpropagates per-step gradients on the encoder hidden states
    /// (`dh[t]` for the state after interaction `t`) into the encoder and
    /// the exercise embedding.
    pub fn backward_encoder(&self, params: &mut ParameterSet, trace: &EncoderTrace, dh: &[Vector]) {
        let (dxs, _) = self.encoder.backward(params, &trace.lstm, dh, None);
        let e = self.embedding.dim;
        for (ex, dx) in trace.exercises.iter().zip(&dxs) {
            self.embedding.backward(params, *ex, &dx[..e]);
        }
    }

    pub fn generate(&self, params: &ParameterSet, r: &[f64]) -> Result<MlpTrace, TensorError> {
        self.generator.forward_trace(params, r)
    }

    pub fn backward_generator(
        &self,
        params: &mut ParameterSet,
        trace: &MlpTrace,
        dy: &[f64],
    ) -> Vector {
        self.generator.backward(params, trace, dy)
    }
}

/// Encoder output for a whole sequence.
pub fn encode_sequence(
    enh: &Enhancer,
    params: &ParameterSet,
    seq: &InteractionSequence,
) -> Result<Vector, TensorError> {
    enh.encode(params, &seq.items)
}

/// Sinusoidal curriculum coefficient for a prolific student of length `len`
/// at epoch `epo`, clamped to `[0,1]`. With `l_max == l_min` the length term
/// is zero.
pub fn curriculum_weight(
    epo: usize,
    epo_max: usize,
    len: usize,
    l_min: usize,
    l_max: usize,
) -> Result<f64, ModelError> {
    if epo_max == 0 || epo > epo_max {
        return Err(ModelError::Config(format!(
            "epoch {epo} outside 0..={epo_max}"
        )));
    }
    if l_min > l_max || len < l_min || len > l_max {
        return Err(ModelError::Config(format!(
            "length {len} outside [{l_min}, {l_max}]"
        )));
    }
    let length_term = if l_max == l_min {
        0.0
    } else {
        (len - l_min) as f64 / (l_max - l_min) as f64
    };
    let arg = std::f64::consts::FRAC_PI_2 * (epo as f64 / epo_max as f64 + length_term);
    Ok(arg.sin().clamp(0.0, 1.0))
}

/// Weighted squared reconstruction error `w·‖h − g‖²`, where `g` is the
/// generator output; also returns `∂/∂g` (the target receives no gradient).
pub fn reconstruction_loss(h: &[f64], g: &[f64], w: f64) -> Result<(f64, Vector), TensorError> {
    if h.len() != g.len() {
        return Err(TensorError::Shape(format!(
            "target has {} entries, reconstruction {}",
            h.len(),
            g.len()
        )));
    }
    let mut loss = 0.0;
    let grad = h
        .iter()
        .zip(g)
        .map(|(a, b)| {
            let diff = b - a;
            loss += diff * diff;
            2.0 * w * diff
        })
        .collect();
    Ok((w * loss, grad))
}

/// `w·‖h − G(r)‖²`.
pub fn enhancer_loss(
    enh: &Enhancer,
    params: &ParameterSet,
    h: &[f64],
    r: &[f64],
    w: f64,
) -> Result<f64, TensorError> {
    let g = enh.generator.forward(params, r)?;
    Ok(reconstruction_loss(h, &g, w)?.0)
}

/// Mixes the generated vector into an inactive student's encoding; active
/// students are returned unchanged.
pub fn enhance(h: &[f64], generated: &[f64], beta: f64, group: StudentGroup) -> Vector {
    match group {
        StudentGroup::Active => h.to_vec(),
        StudentGroup::Inactive => generated.iter().zip(h).map(|(g, x)| g + beta * x).collect(),
    }
}

/// Enhanced representation of a student from their complete history.
pub fn enhance_representation(
    enh: &Enhancer,
    params: &ParameterSet,
    seq: &InteractionSequence,
    group: StudentGroup,
    beta: f64,
) -> Result<Vector, TensorError> {
    let h = enh.encode(params, &seq.items)?;
    match group {
        StudentGroup::Active => Ok(h),
        StudentGroup::Inactive => {
            let g = enh.generator.forward(params, &h)?;
            Ok(enhance(&h, &g, beta, group))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Enhancer, ParameterSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParameterSet::new();
        let cfg = EnhancerConfig {
            dim: 2,
            embed_dim: 3,
            ..Default::default()
        };
        (Enhancer::new(&mut ps, 4, &cfg, &mut rng), ps)
    }

    fn seq(id: &str, items: &[(usize, bool)]) -> InteractionSequence {
        InteractionSequence {
            student: id.into(),
            items: items
                .iter()
                .enumerate()
                .map(|(p, &(exercise, correct))| Interaction {
                    exercise,
                    correct,
                    position: p as u32,
                })
                .collect(),
        }
    }

    #[test]
    fn curriculum_endpoints() {
        assert_eq!(curriculum_weight(0, 10, 5, 5, 50).unwrap(), 0.0);
        assert!((curriculum_weight(0, 10, 50, 5, 50).unwrap() - 1.0).abs() < 1e-15);
        // sin(π) is ~1.2e-16 before the clamp
        assert!(curriculum_weight(10, 10, 50, 5, 50).unwrap().abs() < 1e-15);
        assert_eq!(
            curriculum_weight(3, 10, 7, 7, 7).unwrap(),
            (0.3 * std::f64::consts::FRAC_PI_2).sin()
        );
        assert!(curriculum_weight(11, 10, 7, 5, 9).is_err());
        assert!(curriculum_weight(1, 10, 4, 5, 9).is_err());
    }

    #[test]
    fn loss_examples() {
        let (l, _) = reconstruction_loss(&[1.0, 0.0], &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(
            reconstruction_loss(&[1.0, 2.0], &[0.0, 0.0], 0.0)
                .unwrap()
                .0,
            0.0
        );
        assert_eq!(
            reconstruction_loss(&[1.0, 2.0], &[1.0, 2.0], 3.0)
                .unwrap()
                .0,
            0.0
        );
        assert!(reconstruction_loss(&[1.0], &[1.0, 2.0], 1.0).is_err());

        let (enh, mut ps) = setup();
        ps.zero_values(GENERATOR_PREFIX);
        assert_eq!(
            enhancer_loss(&enh, &ps, &[1.0, 0.0], &[0.3, -0.2], 0.5).unwrap(),
            0.5
        );
    }

    #[test]
    fn enhancement_examples() {
        let h = [1.0, 0.0];
        let out = enhance(&h, &[0.2, 0.4], 0.5, StudentGroup::Inactive);
        assert!((out[0] - 0.7).abs() < 1e-15 && (out[1] - 0.4).abs() < 1e-15);
        assert_eq!(
            enhance(&h, &[0.2, 0.4], 0.0, StudentGroup::Inactive),
            vec![0.2, 0.4]
        );
        let h = [0.123456789, -9.87654321];
        let a = enhance(&h, &[5.0, 5.0], 0.8, StudentGroup::Active);
        assert_eq!(a[0].to_bits(), h[0].to_bits());
        assert_eq!(a[1].to_bits(), h[1].to_bits());
    }

    #[test]
    fn encoding_is_deterministic_and_single_step_matches_lstm() {
        let (enh, ps) = setup();
        let a = seq("a", &[(0, true), (2, false), (1, true)]);
        let b = seq("b", &[(0, true), (2, false), (1, true)]);
        assert_eq!(
            encode_sequence(&enh, &ps, &a).unwrap(),
            encode_sequence(&enh, &ps, &b).unwrap()
        );

        let one = seq("c", &[(3, false)]);
        let mut x = enh.embedding.lookup(&ps, 3).to_vec();
        x.push(0.0);
        let direct = enh
            .encoder
            .forward(&ps, &[x], None)
            .unwrap()
            .last()
            .h
            .clone();
        assert_eq!(encode_sequence(&enh, &ps, &one).unwrap(), direct);
        assert!(encode_sequence(&enh, &ps, &seq("d", &[])).is_err());
    }

    #[test]
    fn active_representation_is_the_raw_encoding() {
        let (enh, ps) = setup();
        let s = seq("a", &[(0, true), (1, false)]);
        let h = encode_sequence(&enh, &ps, &s).unwrap();
        let plus = enhance_representation(&enh, &ps, &s, StudentGroup::Active, 0.6).unwrap();
        assert_eq!(plus, h);
        let inactive = enhance_representation(&enh, &ps, &s, StudentGroup::Inactive, 0.6).unwrap();
        assert_ne!(inactive, h);
    }
}

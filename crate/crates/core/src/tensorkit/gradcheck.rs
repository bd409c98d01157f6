//! Central-difference verification of analytic gradients.
//!
//! Differences are divided by the representable step `(x+eps) - (x-eps)`
//! rather than `2·eps`.

use super::{ParameterSet, TensorError, Vector};

/// Denominator floor of the relative error; below it the comparison is
/// effectively absolute.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// A scalar objective with a hand-written backward pass.
pub trait Differentiable {
    fn loss(&self, params: &ParameterSet, inputs: &[Vector]) -> Result<f64, TensorError>;

    /// Accumulates parameter gradients into `params` (whose buffers are
    /// zeroed by the caller) and returns the gradient for every input.
    fn gradient(
        &self,
        params: &mut ParameterSet,
        inputs: &[Vector],
    ) -> Result<Vec<Vector>, TensorError>;
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `param lstm.w[3]` or `input 0[1]`.
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of `op` against central differences over
/// every parameter entry and every input entry.
pub fn grad_check(
    op: &dyn Differentiable,
    params: &ParameterSet,
    inputs: &[Vector],
    eps: f64,
) -> Result<GradCheckReport, TensorError> {
    assert!(eps > 0.0, "eps must be positive");
    let base = op.loss(params, inputs)?;
    if !base.is_finite() {
        return Err(TensorError::Numeric(format!("non-finite loss {base}")));
    }

    let mut work = params.clone();
    work.zero_grads();
    let input_grads = op.gradient(&mut work, inputs)?;
    if input_grads.len() != inputs.len() {
        return Err(TensorError::Shape("one gradient per input expected".into()));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |err: f64, loc: String| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = loc;
        }
    };

    let names: Vec<String> = params.names().cloned().collect();
    let mut probe = params.clone();
    for name in &names {
        for idx in 0..params.get(name).len() {
            let analytic = work.grad(name).as_slice()[idx];
            let orig = params.get(name).as_slice()[idx];
            let (hi, lo) = (orig + eps, orig - eps);
            probe.value_mut(name).as_mut_slice()[idx] = hi;
            let up = op.loss(&probe, inputs)?;
            probe.value_mut(name).as_mut_slice()[idx] = lo;
            let down = op.loss(&probe, inputs)?;
            probe.value_mut(name).as_mut_slice()[idx] = orig;
            if !(up.is_finite() && down.is_finite()) {
                return Err(TensorError::Numeric(format!(
                    "non-finite loss probing {name}"
                )));
            }
            let numeric = (up - down) / (hi - lo);
            record(
                relative_error(analytic, numeric),
                format!("param {name}[{idx}]"),
            );
        }
    }

    let mut xs = inputs.to_vec();
    for (i, g) in input_grads.iter().enumerate() {
        if g.len() != inputs[i].len() {
            return Err(TensorError::Shape(format!(
                "input gradient {i} has wrong length"
            )));
        }
        for j in 0..inputs[i].len() {
            let orig = inputs[i][j];
            let (hi, lo) = (orig + eps, orig - eps);
            xs[i][j] = hi;
            let up = op.loss(params, &xs)?;
            xs[i][j] = lo;
            let down = op.loss(params, &xs)?;
            xs[i][j] = orig;
            if !(up.is_finite() && down.is_finite()) {
                return Err(TensorError::Numeric(format!(
                    "non-finite loss probing input {i}"
                )));
            }
            let numeric = (up - down) / (hi - lo);
            record(relative_error(g[j], numeric), format!("input {i}[{j}]"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::Matrix;

    /// `L = r · (A x)` with a fixed readout `r`.
    struct LinearMap {
        readout: Vector,
        corrupt: bool,
    }

    impl Differentiable for LinearMap {
        fn loss(&self, p: &ParameterSet, x: &[Vector]) -> Result<f64, TensorError> {
            let y = p.get("a").matvec(&x[0]);
            Ok(y.iter().zip(&self.readout).map(|(a, b)| a * b).sum())
        }

        fn gradient(&self, p: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
            let mut g = Matrix::zeros(2, 3);
            g.add_outer(1.0, &self.readout, &x[0]);
            if self.corrupt {
                g.as_mut_slice()[0] += 0.1;
            }
            p.accumulate("a", &g);
            Ok(vec![p.get("a").matvec_t(&self.readout)])
        }
    }

    fn setup() -> (ParameterSet, Vec<Vector>) {
        let mut ps = ParameterSet::new();
        ps.insert(
            "a",
            Matrix::from_vec(2, 3, vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.75]).unwrap(),
        );
        (ps, vec![vec![0.25, -0.5, 0.75]])
    }

    #[test]
    fn linear_map_is_exact() {
        let (ps, x) = setup();
        let op = LinearMap {
            readout: vec![1.0, -2.0],
            corrupt: false,
        };
        // dyadic data and a power-of-two step keep every probe exact
        let r = grad_check(&op, &ps, &x, 2f64.powi(-20)).unwrap();
        assert!(r.max_rel_error <= 1e-10, "{r:?}");
        let r = grad_check(&op, &ps, &x, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");
        assert_eq!(r.checked, 9);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (ps, x) = setup();
        let op = LinearMap {
            readout: vec![1.0, -2.0],
            corrupt: true,
        };
        let r = grad_check(&op, &ps, &x, 1e-6).unwrap();
        assert!(r.max_rel_error > 1e-2, "{r:?}");
        assert_eq!(r.worst, "param a[0]");
    }

    struct Blowup;
    impl Differentiable for Blowup {
        fn loss(&self, _: &ParameterSet, _: &[Vector]) -> Result<f64, TensorError> {
            Ok(f64::NAN)
        }
        fn gradient(&self, _: &mut ParameterSet, x: &[Vector]) -> Result<Vec<Vector>, TensorError> {
            Ok(x.to_vec())
        }
    }

    #[test]
    fn non_finite_forward_is_a_numeric_error() {
        let (ps, x) = setup();
        assert!(matches!(
            grad_check(&Blowup, &ps, &x, 1e-6),
            Err(TensorError::Numeric(_))
        ));
    }
}

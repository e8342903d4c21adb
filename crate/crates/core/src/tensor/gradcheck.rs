//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward passes on perturbed constant
//! copies of the inputs, so it shares no code with the backward closures it
//! checks.

use rand::Rng;

use super::{no_grad, Tensor};
use crate::error::Result;

/// Default finite-difference step (64-bit).
pub const STEP: f64 = 1e-5;
/// Relative errors are taken against `max(|analytic|, |numeric|, FLOOR)`.
pub const FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Compares the backward pass of `f` against central differences for every
/// element of every input. `f` must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(|t| t.detach().into_leaf(true)).collect();
    let loss = f(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(Tensor::grad_or_zeros).collect();

    let mut report = GradReport { max_rel_err: 0.0, worst: (0, 0), checked: 0 };
    no_grad(|| -> Result<()> {
        let base: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
        for (ti, t) in base.iter().enumerate() {
            for ei in 0..t.numel() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut data = t.to_vec();
                    data[ei] += delta;
                    let mut args = base.clone();
                    args[ti] = Tensor::new(t.shape(), data)?;
                    Ok(f(&args)?.item())
                };
                let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
                let a = analytic[ti][ei];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                if rel > report.max_rel_err || report.checked == 0 {
                    report.max_rel_err = report.max_rel_err.max(rel);
                    if rel >= report.max_rel_err {
                        report.worst = (ti, ei);
                    }
                }
                report.checked += 1;
            }
        }
        Ok(())
    })?;
    Ok(report)
}

/// Panics unless every gradient of `f` matches finite differences within 1e-4.
pub fn assert_gradients<F>(inputs: &[Tensor], f: F)
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let report = check_gradients(inputs, f, STEP).expect("gradient check evaluation");
    assert!(
        report.max_rel_err < 1e-4,
        "gradient mismatch: {report:?}"
    );
}

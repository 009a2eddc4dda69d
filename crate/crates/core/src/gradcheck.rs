//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::Result;
use crate::tensor::Tensor;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Numerical gradient of `loss` with respect to `inputs[which]`.
pub fn numeric_gradient<F>(
    inputs: &[Tensor<f64>],
    which: usize,
    step: f64,
    loss: &F,
) -> Result<Tensor<f64>>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut grad = Vec::with_capacity(inputs[which].numel());
    for i in 0..inputs[which].numel() {
        let orig = inputs[which].data()[i];
        work[which].data_mut()[i] = orig + step;
        let plus = loss(&work)?;
        work[which].data_mut()[i] = orig - step;
        let minus = loss(&work)?;
        work[which].data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Tensor::new(inputs[which].shape(), grad)
}

/// Result of comparing one named input's analytic gradient against finite
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
}

impl GroupCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Checks every input of `loss`. `analytic` must hold one gradient per input,
/// in the same order as `names` and `inputs`.
pub fn check_all<F>(
    names: &[String],
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    loss: F,
) -> Result<Vec<GroupCheck>>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    let mut out = Vec::with_capacity(inputs.len());
    for (i, name) in names.iter().enumerate() {
        let numeric = numeric_gradient(inputs, i, step, &loss)?;
        out.push(GroupCheck {
            name: name.clone(),
            elements: numeric.numel(),
            max_rel_error: max_relative_error(&analytic[i], &numeric),
        });
    }
    Ok(out)
}

/// Full-model check in 64-bit precision on a random batch with random labels.
/// One entry per parameter array, named as in the checkpoint.
pub fn check_model(
    cfg: &crate::model::ModelConfig,
    batch: usize,
    seed: u64,
    step: f64,
) -> Result<Vec<GroupCheck>> {
    use rand::{Rng, SeedableRng};

    use crate::model::{loss, loss_and_grads, ModelParams};

    let base = ModelParams::<f64>::init(cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = crate::block::random_input::<f64>(&cfg.block, batch, &mut rng);
    let labels: Vec<usize> = (0..batch)
        .map(|_| rng.random_range(0..cfg.num_classes))
        .collect();
    let (_, analytic) = loss_and_grads(&base, cfg, &x, &labels)?;
    let names: Vec<String> = base.entries().into_iter().map(|(n, _)| n).collect();
    let inputs: Vec<Tensor<f64>> = base.entries().into_iter().map(|(_, t)| t.clone()).collect();
    check_all(&names, &inputs, &analytic, step, |ts| {
        let mut p = base.clone();
        for (slot, t) in p.tensors_mut().into_iter().zip(ts) {
            *slot = t.clone();
        }
        loss(&p, cfg, &x, &labels)
    })
}

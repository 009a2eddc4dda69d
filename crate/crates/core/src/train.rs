//! Adam training loop, evaluation and run reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentOp, PatchSet};
use crate::error::{Error, Result};
use crate::memory;
use crate::metrics::{ConfusionMatrix, Scores};
use crate::model::{self, ModelConfig, ModelParams};
use crate::real::Real;
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Adds one rotated or flipped copy of every patch per augmentation op.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 32,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::config("adam eps must be positive"));
        }
        Ok(())
    }
}

/// First and second moment buffers, one per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} states", params.len(), grads.len(), state.m.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj.as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::from_f64(mj);
            v[j] = T::from_f64(vj);
            let update = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
            *w = T::from_f64(w.as_f64() - update);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub epoch_losses: Vec<f64>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_oa: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub peak_memory_mb: f64,
}

impl RunReport {
    pub fn scores(&self) -> Scores {
        Scores {
            oa: self.oa,
            aa: self.aa,
            kappa: self.kappa,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Predictions for every patch, in order.
pub fn predict_set<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    set: &PatchSet,
) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = set.batch::<T>(chunk)?;
        out.extend(model::predict(params, cfg, &x)?);
    }
    Ok(out)
}

pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    set: &PatchSet,
) -> Result<ConfusionMatrix> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let pred = predict_set(params, cfg, set)?;
    ConfusionMatrix::from_predictions(&set.labels(), &pred, cfg.num_classes)
}

/// Runs the evaluation half of a report on an already trained model.
pub fn eval_report<T: Real>(
    params: &ModelParams<T>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    test: &PatchSet,
) -> Result<RunReport> {
    memory::reset_peak();
    let start = Instant::now();
    let cm = evaluate(params, model_cfg, test)?;
    let test_seconds = start.elapsed().as_secs_f64();
    let s = cm.scores()?;
    Ok(RunReport {
        config: RunConfig {
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            dtype: format!("{:?}", T::DTYPE).to_lowercase(),
        },
        epoch_losses: Vec::new(),
        train_samples: 0,
        test_samples: test.len(),
        train_oa: None,
        confusion: cm,
        oa: s.oa,
        aa: s.aa,
        kappa: s.kappa,
        train_seconds: 0.0,
        test_seconds,
        peak_memory_mb: memory::peak_mb(),
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains from the seeded initialization, then scores `test`.
pub fn train<T: Real>(
    model_cfg: &ModelConfig,
    train_set: &PatchSet,
    test_set: &PatchSet,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, RunReport)> {
    model_cfg.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let data = if cfg.augment {
        train_set.augmented(&AugmentOp::ALL)
    } else {
        train_set.clone()
    };

    memory::reset_peak();
    let start = Instant::now();
    let mut params = ModelParams::<T>::init(model_cfg)?;
    let mut adam = AdamState::new(params.entries().iter().map(|(_, t)| t.shape()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = data.batch::<T>(chunk)?;
            let (loss, grads) = model::loss_and_grads(&params, model_cfg, &x, &labels)
                .map_err(|e| diverged(epoch, e))?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss * chunk.len() as f64;
            adam_step(&mut params.tensors_mut(), &grads, &mut adam, cfg)?;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    let train_seconds = start.elapsed().as_secs_f64();
    let train_peak = memory::peak_mb();

    let train_oa = evaluate(&params, model_cfg, train_set)?.overall_accuracy();
    let mut report = eval_report(&params, model_cfg, cfg, test_set)?;
    report.epoch_losses = epoch_losses;
    report.train_samples = data.len();
    report.train_oa = Some(train_oa);
    report.train_seconds = train_seconds;
    report.peak_memory_mb = report.peak_memory_mb.max(train_peak);
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch_size, c.epochs), (5e-4, 32, 50));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = TrainConfig { lr: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c.lr = 1e-3;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}

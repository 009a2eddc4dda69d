//! End-to-end classifier: spectral block + spatial branch + linear head.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{block_forward, BlockConfig, BlockOutput, BlockParams, BlockVars, Directions};
use crate::error::{Error, Result};
use crate::init;
use crate::real::Real;
use crate::spatial::{fuse, spatial_forward, SpatialParams, SpatialVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Which components contribute to the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub forward: bool,
    pub backward: bool,
    pub spatial: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        forward: true,
        backward: true,
        spatial: true,
    };

    /// The five component patterns of the ablation table, in row order.
    pub const TABLE: [Ablation; 5] = [
        Ablation::new(true, true, true),
        Ablation::new(true, true, false),
        Ablation::new(true, false, true),
        Ablation::new(false, true, true),
        Ablation::new(false, false, true),
    ];

    pub const fn new(forward: bool, backward: bool, spatial: bool) -> Self {
        Self {
            forward,
            backward,
            spatial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.forward || self.backward || self.spatial) {
            return Err(Error::config(
                "at least one of forward, backward, spatial must be enabled",
            ));
        }
        Ok(())
    }

    pub fn directions(&self) -> Directions {
        Directions {
            forward: self.forward,
            backward: self.backward,
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.forward, "fwd"),
            (self.backward, "bwd"),
            (self.spatial, "spatial"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// Parses a comma-separated subset of `fwd,bwd,spatial` (or `none`).
/// The result is not validated.
impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::new(false, false, false);
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(a);
        }
        for part in s.split(',') {
            match part.trim().to_ascii_lowercase().as_str() {
                "fwd" | "forward" => a.forward = true,
                "bwd" | "backward" => a.backward = true,
                "spatial" => a.spatial = true,
                other => {
                    return Err(Error::config(format!("unknown ablation component '{other}'")))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub block: BlockConfig,
    pub num_classes: usize,
    #[serde(default)]
    pub ablation: Ablation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(block: BlockConfig, num_classes: usize, seed: u64) -> Self {
        Self {
            block,
            num_classes,
            ablation: Ablation::FULL,
            seed,
        }
    }

    /// Small configuration used by gradient checks (p=3, CH=8, E=4, K=3).
    pub fn tiny() -> Self {
        Self::new(BlockConfig::new(3, 8, 4, 4), 3, 7)
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        self.ablation.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub block: BlockParams<T>,
    pub spatial: SpatialParams<T>,
    /// `[output_dim, K]`
    pub classifier_w: Tensor<T>,
    pub classifier_b: Tensor<T>,
}

impl<T: Real> ModelParams<T> {
    /// Deterministic initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let block = BlockParams::init(&cfg.block, &mut rng)?;
        let spatial = SpatialParams::init(cfg.block.hidden_dim, cfg.block.output_dim, &mut rng);
        let (classifier_w, classifier_b) =
            init::linear(cfg.block.output_dim, cfg.num_classes, &mut rng);
        Ok(Self {
            block,
            spatial,
            classifier_w,
            classifier_b,
        })
    }

    /// Every array with its fully qualified name, in canonical order.
    pub fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v: Vec<(String, &Tensor<T>)> = self
            .block
            .entries()
            .into_iter()
            .map(|(n, t)| (format!("block.{n}"), t))
            .collect();
        v.extend(
            self.spatial
                .entries()
                .into_iter()
                .map(|(n, t)| (format!("spatial.{n}"), t)),
        );
        v.push(("classifier.weight".into(), &self.classifier_w));
        v.push(("classifier.bias".into(), &self.classifier_b));
        v
    }

    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut v: Vec<(String, &mut Tensor<T>)> = self
            .block
            .entries_mut()
            .into_iter()
            .map(|(n, t)| (format!("block.{n}"), t))
            .collect();
        v.extend(
            self.spatial
                .entries_mut()
                .into_iter()
                .map(|(n, t)| (format!("spatial.{n}"), t)),
        );
        v.push(("classifier.weight".into(), &mut self.classifier_w));
        v.push(("classifier.bias".into(), &mut self.classifier_b));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.entries_mut().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_params(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            block: self.block.cast(),
            spatial: self.spatial.cast(),
            classifier_w: self.classifier_w.cast(),
            classifier_b: self.classifier_b.cast(),
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        self.block.check_shapes(&cfg.block)?;
        self.spatial
            .check_shapes(cfg.block.hidden_dim, cfg.block.output_dim)?;
        let (o, k) = (cfg.block.output_dim, cfg.num_classes);
        if self.classifier_w.shape() != [o, k] || self.classifier_b.shape() != [k] {
            return Err(Error::config(format!(
                "classifier shapes {:?}/{:?} do not match [{o}, {k}]/[{k}]",
                self.classifier_w.shape(),
                self.classifier_b.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub block: BlockVars,
    pub spatial: SpatialVars,
    pub classifier_w: Var,
    pub classifier_b: Var,
}

impl ModelVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, p: &ModelParams<T>, trainable: bool) -> Self {
        Self {
            block: BlockVars::register(tape, &p.block, trainable),
            spatial: SpatialVars::register(tape, &p.spatial, trainable),
            classifier_w: tape.leaf(p.classifier_w.clone(), trainable),
            classifier_b: tape.leaf(p.classifier_b.clone(), trainable),
        }
    }

    /// Handles in the same order as [`ModelParams::entries`].
    pub fn in_order(&self) -> Vec<Var> {
        let mut v = self.block.in_order();
        v.extend(self.spatial.in_order());
        v.push(self.classifier_w);
        v.push(self.classifier_b);
        v
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub block: BlockOutput,
    /// Spatial branch output; `None` when the branch is disabled.
    pub spatial: Option<Var>,
    pub fused: Var,
    pub logits: Var,
}

/// Records the full classifier on `tape` for `x: [N, p, p, CH]`.
pub fn model_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &ModelVars,
    cfg: &ModelConfig,
) -> Result<ModelOutput> {
    cfg.ablation.validate()?;
    let block = block_forward(tape, x, &vars.block, &cfg.block, cfg.ablation.directions())?;
    let n = tape.shape(x)[0];
    let (spatial, spatial_term) = if cfg.ablation.spatial {
        let y = spatial_forward(tape, x, &vars.spatial)?;
        (Some(y), y)
    } else {
        let zero = tape.constant(Tensor::zeros(&[n, cfg.block.output_dim]));
        (None, zero)
    };
    let fused = fuse(tape, block.y_combined, spatial_term)?;
    let logits = tape.linear(fused, vars.classifier_w, vars.classifier_b)?;
    Ok(ModelOutput {
        block,
        spatial,
        fused,
        logits,
    })
}

/// Inference-only logits for a batch.
pub fn logits<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let xv = tape.input(x.clone());
    let out = model_forward(&mut tape, xv, &vars, cfg)?;
    Ok(tape.value(out.logits).clone())
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[logits.ndim() - 1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn predict<T: Real>(params: &ModelParams<T>, cfg: &ModelConfig, x: &Tensor<T>) -> Result<Vec<usize>> {
    Ok(argmax_rows(&logits(params, cfg, x)?))
}

/// Mean cross-entropy of a batch and its gradient for every parameter, in
/// [`ModelParams::entries`] order.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, true);
    let xv = tape.input(x.clone());
    let out = model_forward(&mut tape, xv, &vars, cfg)?;
    let loss = tape.softmax_cross_entropy(out.logits, labels)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let shapes: Vec<Vec<usize>> = params
        .entries()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let g = vars
        .in_order()
        .into_iter()
        .zip(shapes)
        .map(|(v, s)| grads.get_or_zeros(v, &s))
        .collect();
    Ok((value, g))
}

/// Mean cross-entropy without gradients.
pub fn loss<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<T> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let xv = tape.input(x.clone());
    let out = model_forward(&mut tape, xv, &vars, cfg)?;
    let loss = tape.softmax_cross_entropy(out.logits, labels)?;
    Ok(tape.value(loss).item())
}

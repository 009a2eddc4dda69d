//! Closed-form complexity estimators, exact counters and timing probes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::random_input;
use crate::error::{Error, Result};
use crate::memory;
use crate::model::{model_forward, ModelConfig, ModelParams, ModelVars};
use crate::tape::Tape;

pub const WARMUP_RUNS: usize = 3;
pub const MEASURED_RUNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transformer,
    Cnn,
    Hsimamba,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Transformer, ModelKind::Cnn, ModelKind::Hsimamba];

    pub fn params_class(self) -> &'static str {
        match self {
            ModelKind::Transformer => "O(C² + CHW)",
            ModelKind::Cnn => "O(k² · C²)",
            ModelKind::Hsimamba => "O(C + HW)",
        }
    }

    pub fn flops_class(self) -> &'static str {
        match self {
            ModelKind::Transformer => "O(BHW · C²)",
            ModelKind::Cnn => "O(BHW · k² · C)",
            ModelKind::Hsimamba => "O(BHW · C)",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Cnn => "cnn",
            ModelKind::Hsimamba => "hsimamba",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transformer" => Ok(ModelKind::Transformer),
            "cnn" => Ok(ModelKind::Cnn),
            "hsimamba" => Ok(ModelKind::Hsimamba),
            other => Err(Error::config(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityProfile {
    pub kind: ModelKind,
    pub params: u64,
    /// Multiply-adds for one forward pass.
    pub flops: u64,
    pub params_class: String,
    pub flops_class: String,
}

/// Problem size for [`estimate`]. `k` is only read for CNNs; `d` is the
/// feature width, echoed but absent from every leading term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub b: u64,
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub k: u64,
    pub d: u64,
}

/// Leading-term counts with unit constants.
pub fn estimate(kind: ModelKind, dims: Dims) -> Result<ComplexityProfile> {
    let Dims { b, h, w, c, k, d } = dims;
    if [b, h, w, c, d].contains(&0) || (kind == ModelKind::Cnn && k == 0) {
        return Err(Error::config(format!("dimensions must be positive: {dims:?}")));
    }
    let (params, flops) = match kind {
        ModelKind::Transformer => (c * c + c * h * w, b * h * w * c * c),
        ModelKind::Cnn => (k * k * c * c, b * h * w * k * k * c),
        ModelKind::Hsimamba => (c + h * w, b * h * w * c),
    };
    Ok(ComplexityProfile {
        kind,
        params,
        flops,
        params_class: kind.params_class().into(),
        flops_class: kind.flops_class().into(),
    })
}

/// Parameter count, total and data-dependent multiply-adds of one forward pass.
fn forward_counts(cfg: &ModelConfig, batch: usize) -> Result<(usize, u64, u64)> {
    if batch == 0 {
        return Err(Error::config("batch must be positive"));
    }
    let params = ModelParams::<f32>::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = random_input::<f32>(&cfg.block, batch, &mut rng);
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, &params, false);
    let xv = tape.input(x);
    model_forward(&mut tape, xv, &vars, cfg)?;
    Ok((params.num_params(), tape.flops(), tape.data_flops()))
}

/// Exact parameter count and counted forward multiply-adds for `batch` inputs.
/// Parameter-only work (the transition bias) is foldable at load time and is
/// left out; see [`parameter_only_flops`].
pub fn count_actual(cfg: &ModelConfig, batch: usize) -> Result<ComplexityProfile> {
    let (params, _, data) = forward_counts(cfg, batch)?;
    Ok(ComplexityProfile {
        kind: ModelKind::Hsimamba,
        params: params as u64,
        flops: data,
        params_class: ModelKind::Hsimamba.params_class().into(),
        flops_class: ModelKind::Hsimamba.flops_class().into(),
    })
}

/// Multiply-adds of one forward pass that depend on parameters only.
pub fn parameter_only_flops(cfg: &ModelConfig) -> Result<u64> {
    let (_, total, data) = forward_counts(cfg, 1)?;
    Ok(total - data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_seconds: f64,
    pub runs: Vec<f64>,
}

/// Runs `f` `warmup` times unmeasured, then `runs` times and keeps the median.
pub fn time_median(warmup: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    if runs == 0 {
        return Err(Error::config("at least one measured run is required"));
    }
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(Timing {
        median_seconds: median,
        runs: times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub samples: usize,
    pub inference: Timing,
    pub peak_memory_mb: f64,
    pub profile: ComplexityProfile,
}

/// Inference timing on `n_samples` random patches.
pub fn bench(cfg: &ModelConfig, n_samples: usize) -> Result<BenchResult> {
    let profile = count_actual(cfg, n_samples)?;
    let params = ModelParams::<f32>::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = random_input::<f32>(&cfg.block, n_samples, &mut rng);
    memory::reset_peak();
    let inference = time_median(WARMUP_RUNS, MEASURED_RUNS, || {
        crate::model::logits(&params, cfg, &x).map(drop)
    })?;
    Ok(BenchResult {
        samples: n_samples,
        inference,
        peak_memory_mb: memory::peak_mb(),
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(c: u64) -> Dims {
        Dims { b: 2, h: 5, w: 5, c, k: 3, d: 8 }
    }

    #[test]
    fn verbatim_classes() {
        let p = estimate(ModelKind::Hsimamba, dims(10)).unwrap();
        assert_eq!(p.params_class, "O(C + HW)");
        assert_eq!(p.flops_class, "O(BHW · C)");
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(estimate(ModelKind::Transformer, dims(0)).is_err());
    }

    #[test]
    fn median_of_runs() {
        let t = time_median(0, 3, || Ok(())).unwrap();
        assert_eq!(t.runs.len(), 3);
        assert!(t.median_seconds >= 0.0);
    }
}

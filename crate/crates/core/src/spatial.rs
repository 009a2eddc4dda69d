//! Spatial branch: band mean → 3×3 conv → SiLU → global average pool → linear.
//!
//! The branch only sees the band-averaged image, so it is invariant to band
//! order and complements the spectral block, which ignores spatial layout
//! beyond the per-band projection.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of spatial filters for a given hidden width: `ceil(hidden / 2)`.
pub fn spatial_channels(hidden_dim: usize) -> usize {
    hidden_dim.div_ceil(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialParams<T> {
    /// `[S, 1, 3, 3]`
    pub kernel: Tensor<T>,
    pub kernel_bias: Tensor<T>,
    /// `[S, output_dim]`
    pub w_out: Tensor<T>,
    pub b_out: Tensor<T>,
}

impl<T: Real> SpatialParams<T> {
    pub fn init(hidden_dim: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = spatial_channels(hidden_dim);
        let (kernel, kernel_bias) = init::conv(&[s, 1, 3, 3], rng);
        let (w_out, b_out) = init::linear(s, output_dim, rng);
        Self {
            kernel,
            kernel_bias,
            w_out,
            b_out,
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("conv.weight", &self.kernel),
            ("conv.bias", &self.kernel_bias),
            ("linear.weight", &self.w_out),
            ("linear.bias", &self.b_out),
        ]
    }

    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("conv.weight", &mut self.kernel),
            ("conv.bias", &mut self.kernel_bias),
            ("linear.weight", &mut self.w_out),
            ("linear.bias", &mut self.b_out),
        ]
    }

    pub fn cast<U: Real>(&self) -> SpatialParams<U> {
        SpatialParams {
            kernel: self.kernel.cast(),
            kernel_bias: self.kernel_bias.cast(),
            w_out: self.w_out.cast(),
            b_out: self.b_out.cast(),
        }
    }

    pub fn check_shapes(&self, hidden_dim: usize, output_dim: usize) -> Result<()> {
        let s = spatial_channels(hidden_dim);
        let want: [&[usize]; 4] = [&[s, 1, 3, 3], &[s], &[s, output_dim], &[output_dim]];
        for ((name, t), shape) in self.entries().into_iter().zip(want) {
            if t.shape() != shape {
                return Err(Error::config(format!(
                    "spatial array {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpatialVars {
    pub kernel: Var,
    pub kernel_bias: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl SpatialVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, p: &SpatialParams<T>, trainable: bool) -> Self {
        Self {
            kernel: tape.leaf(p.kernel.clone(), trainable),
            kernel_bias: tape.leaf(p.kernel_bias.clone(), trainable),
            w_out: tape.leaf(p.w_out.clone(), trainable),
            b_out: tape.leaf(p.b_out.clone(), trainable),
        }
    }

    pub fn in_order(&self) -> Vec<Var> {
        vec![self.kernel, self.kernel_bias, self.w_out, self.b_out]
    }
}

/// `x: [N, p, p, CH]` → `[N, output_dim]`.
pub fn spatial_forward<T: Real>(tape: &mut Tape<T>, x: Var, vars: &SpatialVars) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 4 || shape[1] == 0 || shape[1] != shape[2] {
        return Err(Error::shape(
            "spatial_forward",
            format!("expected [N, p, p, CH] with p ≥ 1, got {shape:?}"),
        ));
    }
    let (n, p) = (shape[0], shape[1]);
    let s = tape.shape(vars.kernel)[0];
    let band_mean = tape.mean(x, 3)?;
    let image = tape.reshape(band_mean, &[n, 1, p, p])?;
    let conv = tape.conv2d(image, vars.kernel, vars.kernel_bias)?;
    let act = tape.silu(conv)?;
    let flat = tape.reshape(act, &[n, s, p * p])?;
    let pooled = tape.mean(flat, 2)?;
    tape.linear(pooled, vars.w_out, vars.b_out)
}

/// Additive fusion of the spectral and spatial outputs.
pub fn fuse<T: Real>(tape: &mut Tape<T>, spectral: Var, spatial: Var) -> Result<Var> {
    tape.add(spectral, spatial)
}

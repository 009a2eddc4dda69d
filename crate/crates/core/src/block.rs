//! The bidirectional spectral block.
//!
//! Data flow for one batch of patches `x: [N, p, p, CH]`:
//!
//! ```text
//! x ─ flatten ─ LayerNorm ─┬─ linear_x ───────────────────── x_proj ─ conv_fwd ─┬─ SiLU            (diagnostic)
//!                          │                                                     └─ tanh(· + A·Δ) ── mean_L ─ lin_fwd ─┐
//!                          └─ linear_z ─ reverse ── z_proj_reversed ─ conv_bwd ─┬─ SiLU            (diagnostic)    + ─ y_combined
//!                                                                               └─ tanh(· + B·Δ) ── mean_L ─ lin_bwd ─┘
//! ```
//!
//! In spectral sequence mode each band's `p²` spatial vector is projected on
//! its own, giving sequences of length `L = CH`. Literal mode projects the
//! whole patch to one vector (`L = 1`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init;
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYERNORM_EPS: f64 = 1e-5;
pub const DEFAULT_DELTA_INIT: f64 = 0.1;
/// Half-width of the uniform init for the transition matrices.
pub const TRANSITION_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SequenceMode {
    /// Whole patch projected to one hidden vector; sequence length 1.
    Literal,
    /// Per-band projection; sequence length equals the band count.
    #[default]
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReverseMode {
    /// Backward path reverses the projected sequence.
    #[default]
    Flip,
    /// Backward path passes through an extra hidden-to-hidden linear layer.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// Patch side `p`.
    pub spatial_dim: usize,
    pub num_bands: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub delta_init: f64,
    #[serde(default)]
    pub sequence_mode: SequenceMode,
    #[serde(default)]
    pub reverse_mode: ReverseMode,
}

impl BlockConfig {
    pub fn new(spatial_dim: usize, num_bands: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            spatial_dim,
            num_bands,
            hidden_dim,
            output_dim,
            delta_init: DEFAULT_DELTA_INIT,
            sequence_mode: SequenceMode::Spectral,
            reverse_mode: ReverseMode::Flip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial_dim == 0 || self.spatial_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "spatial_dim must be a positive odd integer, got {}",
                self.spatial_dim
            )));
        }
        if self.num_bands < 3 {
            return Err(Error::config(format!(
                "num_bands must be at least 3, got {}",
                self.num_bands
            )));
        }
        if self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("hidden_dim and output_dim must be positive"));
        }
        if !(self.delta_init > 0.0 && self.delta_init.is_finite()) {
            return Err(Error::config(format!(
                "delta_init must be positive, got {}",
                self.delta_init
            )));
        }
        Ok(())
    }

    /// Flattened patch length `p²·CH`.
    pub fn features(&self) -> usize {
        self.spatial_dim * self.spatial_dim * self.num_bands
    }

    pub fn pixels(&self) -> usize {
        self.spatial_dim * self.spatial_dim
    }

    /// Sequence length `L` seen by the convolutions.
    pub fn seq_len(&self) -> usize {
        match self.sequence_mode {
            SequenceMode::Spectral => self.num_bands,
            SequenceMode::Literal => 1,
        }
    }

    /// Input width of the x/z projections.
    pub fn projection_in(&self) -> usize {
        match self.sequence_mode {
            SequenceMode::Spectral => self.pixels(),
            SequenceMode::Literal => self.features(),
        }
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.spatial_dim, self.spatial_dim, self.num_bands]
    }
}

/// Learnable parameters of the block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub norm_gamma: Tensor<T>,
    pub norm_beta: Tensor<T>,
    pub w_x: Tensor<T>,
    pub b_x: Tensor<T>,
    pub w_z: Tensor<T>,
    pub b_z: Tensor<T>,
    /// Present only with [`ReverseMode::Learned`].
    pub z_rev: Option<(Tensor<T>, Tensor<T>)>,
    pub k_fwd: Tensor<T>,
    pub kb_fwd: Tensor<T>,
    pub k_bwd: Tensor<T>,
    pub kb_bwd: Tensor<T>,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub delta: Tensor<T>,
    pub w_fwd: Tensor<T>,
    pub b_fwd: Tensor<T>,
    pub w_bwd: Tensor<T>,
    pub b_bwd: Tensor<T>,
}

impl<T: Real> BlockParams<T> {
    pub fn init(cfg: &BlockConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (f, e, o) = (cfg.features(), cfg.hidden_dim, cfg.output_dim);
        let pin = cfg.projection_in();
        let (w_x, b_x) = init::linear(pin, e, rng);
        let (w_z, b_z) = init::linear(pin, e, rng);
        let z_rev = match cfg.reverse_mode {
            ReverseMode::Learned => Some(init::linear(e, e, rng)),
            ReverseMode::Flip => None,
        };
        let (k_fwd, kb_fwd) = init::conv(&[e, e, 3], rng);
        let (k_bwd, kb_bwd) = init::conv(&[e, e, 3], rng);
        let a = init::uniform(&[e, e], TRANSITION_INIT_SCALE, rng);
        let b = init::uniform(&[e, e], TRANSITION_INIT_SCALE, rng);
        let (w_fwd, b_fwd) = init::linear(e, o, rng);
        let (w_bwd, b_bwd) = init::linear(e, o, rng);
        Ok(Self {
            norm_gamma: Tensor::ones(&[f]),
            norm_beta: Tensor::zeros(&[f]),
            w_x,
            b_x,
            w_z,
            b_z,
            z_rev,
            k_fwd,
            kb_fwd,
            k_bwd,
            kb_bwd,
            a,
            b,
            delta: Tensor::full(&[e], T::from_f64(cfg.delta_init)),
            w_fwd,
            b_fwd,
            w_bwd,
            b_bwd,
        })
    }

    /// Named arrays in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = vec![
            ("norm.gamma", &self.norm_gamma),
            ("norm.beta", &self.norm_beta),
            ("linear_x.weight", &self.w_x),
            ("linear_x.bias", &self.b_x),
            ("linear_z.weight", &self.w_z),
            ("linear_z.bias", &self.b_z),
        ];
        if let Some((w, b)) = &self.z_rev {
            v.push(("linear_z_rev.weight", w));
            v.push(("linear_z_rev.bias", b));
        }
        v.extend([
            ("conv_fwd.weight", &self.k_fwd),
            ("conv_fwd.bias", &self.kb_fwd),
            ("conv_bwd.weight", &self.k_bwd),
            ("conv_bwd.bias", &self.kb_bwd),
            ("A", &self.a),
            ("B", &self.b),
            ("delta", &self.delta),
            ("linear_fwd.weight", &self.w_fwd),
            ("linear_fwd.bias", &self.b_fwd),
            ("linear_bwd.weight", &self.w_bwd),
            ("linear_bwd.bias", &self.b_bwd),
        ]);
        v
    }

    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v = vec![
            ("norm.gamma", &mut self.norm_gamma),
            ("norm.beta", &mut self.norm_beta),
            ("linear_x.weight", &mut self.w_x),
            ("linear_x.bias", &mut self.b_x),
            ("linear_z.weight", &mut self.w_z),
            ("linear_z.bias", &mut self.b_z),
        ];
        if let Some((w, b)) = &mut self.z_rev {
            v.push(("linear_z_rev.weight", w));
            v.push(("linear_z_rev.bias", b));
        }
        v.extend([
            ("conv_fwd.weight", &mut self.k_fwd),
            ("conv_fwd.bias", &mut self.kb_fwd),
            ("conv_bwd.weight", &mut self.k_bwd),
            ("conv_bwd.bias", &mut self.kb_bwd),
            ("A", &mut self.a),
            ("B", &mut self.b),
            ("delta", &mut self.delta),
            ("linear_fwd.weight", &mut self.w_fwd),
            ("linear_fwd.bias", &mut self.b_fwd),
            ("linear_bwd.weight", &mut self.w_bwd),
            ("linear_bwd.bias", &mut self.b_bwd),
        ]);
        v
    }

    /// Copies the forward-direction parameters onto the backward direction
    /// (`W_z = W_x`, `K_bwd = K_fwd`, `B = A`, `W_bwd = W_fwd`).
    pub fn tie_directions(&mut self) {
        self.w_z = self.w_x.clone();
        self.b_z = self.b_x.clone();
        self.k_bwd = self.k_fwd.clone();
        self.kb_bwd = self.kb_fwd.clone();
        self.b = self.a.clone();
        self.w_bwd = self.w_fwd.clone();
        self.b_bwd = self.b_fwd.clone();
    }

    pub fn cast<U: Real>(&self) -> BlockParams<U> {
        BlockParams {
            norm_gamma: self.norm_gamma.cast(),
            norm_beta: self.norm_beta.cast(),
            w_x: self.w_x.cast(),
            b_x: self.b_x.cast(),
            w_z: self.w_z.cast(),
            b_z: self.b_z.cast(),
            z_rev: self.z_rev.as_ref().map(|(w, b)| (w.cast(), b.cast())),
            k_fwd: self.k_fwd.cast(),
            kb_fwd: self.kb_fwd.cast(),
            k_bwd: self.k_bwd.cast(),
            kb_bwd: self.kb_bwd.cast(),
            a: self.a.cast(),
            b: self.b.cast(),
            delta: self.delta.cast(),
            w_fwd: self.w_fwd.cast(),
            b_fwd: self.b_fwd.cast(),
            w_bwd: self.w_bwd.cast(),
            b_bwd: self.b_bwd.cast(),
        }
    }

    /// Checks every array against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &BlockConfig) -> Result<()> {
        let (f, e, o, pin) = (
            cfg.features(),
            cfg.hidden_dim,
            cfg.output_dim,
            cfg.projection_in(),
        );
        let mut want: Vec<(&str, Vec<usize>)> = vec![
            ("norm.gamma", vec![f]),
            ("norm.beta", vec![f]),
            ("linear_x.weight", vec![pin, e]),
            ("linear_x.bias", vec![e]),
            ("linear_z.weight", vec![pin, e]),
            ("linear_z.bias", vec![e]),
        ];
        if cfg.reverse_mode == ReverseMode::Learned {
            want.push(("linear_z_rev.weight", vec![e, e]));
            want.push(("linear_z_rev.bias", vec![e]));
        }
        want.extend([
            ("conv_fwd.weight", vec![e, e, 3]),
            ("conv_fwd.bias", vec![e]),
            ("conv_bwd.weight", vec![e, e, 3]),
            ("conv_bwd.bias", vec![e]),
            ("A", vec![e, e]),
            ("B", vec![e, e]),
            ("delta", vec![e]),
            ("linear_fwd.weight", vec![e, o]),
            ("linear_fwd.bias", vec![o]),
            ("linear_bwd.weight", vec![e, o]),
            ("linear_bwd.bias", vec![o]),
        ]);
        let have = self.entries();
        if have.len() != want.len() {
            return Err(Error::config(format!(
                "block has {} arrays, config implies {}",
                have.len(),
                want.len()
            )));
        }
        for ((name, t), (wname, shape)) in have.iter().zip(&want) {
            if name != wname || t.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "block array {name} has shape {:?}, expected {wname} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Tape handles for [`BlockParams`].
#[derive(Debug, Clone)]
pub struct BlockVars {
    pub norm_gamma: Var,
    pub norm_beta: Var,
    pub w_x: Var,
    pub b_x: Var,
    pub w_z: Var,
    pub b_z: Var,
    pub z_rev: Option<(Var, Var)>,
    pub k_fwd: Var,
    pub kb_fwd: Var,
    pub k_bwd: Var,
    pub kb_bwd: Var,
    pub a: Var,
    pub b: Var,
    pub delta: Var,
    pub w_fwd: Var,
    pub b_fwd: Var,
    pub w_bwd: Var,
    pub b_bwd: Var,
}

impl BlockVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, p: &BlockParams<T>, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor<T>| tape.leaf(t.clone(), trainable);
        Self {
            norm_gamma: leaf(&p.norm_gamma),
            norm_beta: leaf(&p.norm_beta),
            w_x: leaf(&p.w_x),
            b_x: leaf(&p.b_x),
            w_z: leaf(&p.w_z),
            b_z: leaf(&p.b_z),
            z_rev: p.z_rev.as_ref().map(|(w, b)| (leaf(w), leaf(b))),
            k_fwd: leaf(&p.k_fwd),
            kb_fwd: leaf(&p.kb_fwd),
            k_bwd: leaf(&p.k_bwd),
            kb_bwd: leaf(&p.kb_bwd),
            a: leaf(&p.a),
            b: leaf(&p.b),
            delta: leaf(&p.delta),
            w_fwd: leaf(&p.w_fwd),
            b_fwd: leaf(&p.b_fwd),
            w_bwd: leaf(&p.w_bwd),
            b_bwd: leaf(&p.b_bwd),
        }
    }

    /// Handles in the same order as [`BlockParams::entries`].
    pub fn in_order(&self) -> Vec<Var> {
        let mut v = vec![
            self.norm_gamma,
            self.norm_beta,
            self.w_x,
            self.b_x,
            self.w_z,
            self.b_z,
        ];
        if let Some((w, b)) = self.z_rev {
            v.extend([w, b]);
        }
        v.extend([
            self.k_fwd,
            self.kb_fwd,
            self.k_bwd,
            self.kb_bwd,
            self.a,
            self.b,
            self.delta,
            self.w_fwd,
            self.b_fwd,
            self.w_bwd,
            self.b_bwd,
        ]);
        v
    }
}

/// Which directions of the block contribute to the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Directions {
    pub forward: bool,
    pub backward: bool,
}

impl Directions {
    pub const BOTH: Directions = Directions {
        forward: true,
        backward: true,
    };
}

impl Default for Directions {
    fn default() -> Self {
        Self::BOTH
    }
}

/// Projected sequences, each `[N, E, L]`.
#[derive(Debug, Clone, Copy)]
pub struct Projections {
    pub x_proj: Var,
    pub z_proj: Var,
    pub z_proj_reversed: Var,
}

/// Convolution outputs of both directions.
#[derive(Debug, Clone, Copy)]
pub struct DirectionalStates {
    /// `conv_fwd(x_proj)` before activation.
    pub pre_forward: Var,
    /// `conv_bwd(z_proj_reversed)` before activation.
    pub pre_backward: Var,
    /// `SiLU(pre_forward)`.
    pub x_forward: Var,
    /// `SiLU(pre_backward)`.
    pub x_backward: Var,
}

/// Every intermediate of one block forward pass. Direction-specific values
/// are `None` when that direction is disabled.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub x_norm: Option<Var>,
    pub projections: Option<Projections>,
    pub states: Option<DirectionalStates>,
    pub h_forward: Option<Var>,
    pub h_backward: Option<Var>,
    pub forward_reduced: Option<Var>,
    pub backward_reduced: Option<Var>,
    /// `[N, output_dim]`; zeros when the forward direction is disabled.
    pub y_fwd: Var,
    /// `[N, output_dim]`; zeros when the backward direction is disabled.
    pub y_bwd: Var,
    pub y_combined: Var,
}

/// Flattens `x: [N, p, p, CH]` to `[N, p²·CH]` and layer-normalizes each row.
pub fn normalize_input<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &BlockVars,
    cfg: &BlockConfig,
) -> Result<Var> {
    check_input(tape.shape(x), cfg)?;
    let n = tape.shape(x)[0];
    let flat = tape.reshape(x, &[n, cfg.features()])?;
    tape.layernorm(flat, vars.norm_gamma, vars.norm_beta, LAYERNORM_EPS)
}

/// Applies `w, b` to the hidden axis of a `[N, E, L]` sequence.
fn linear_over_hidden<T: Real>(
    tape: &mut Tape<T>,
    seq: Var,
    w: Var,
    b: Var,
) -> Result<Var> {
    let s = tape.shape(seq).to_vec();
    let (n, e, l) = (s[0], s[1], s[2]);
    let t = tape.swap_last2(seq)?;
    let rows = tape.reshape(t, &[n * l, e])?;
    let out = tape.linear(rows, w, b)?;
    let eo = tape.shape(out)[1];
    let back = tape.reshape(out, &[n, l, eo])?;
    tape.swap_last2(back)
}

/// Projects a normalized batch `[N, p²·CH]` onto the x and z sequences and
/// reverses the z sequence.
pub fn project_inputs<T: Real>(
    tape: &mut Tape<T>,
    x_norm: Var,
    vars: &BlockVars,
    cfg: &BlockConfig,
) -> Result<Projections> {
    let n = tape.shape(x_norm)[0];
    let e = cfg.hidden_dim;
    let project = |tape: &mut Tape<T>, w: Var, b: Var| -> Result<Var> {
        match cfg.sequence_mode {
            SequenceMode::Literal => {
                let y = tape.linear(x_norm, w, b)?;
                tape.reshape(y, &[n, e, 1])
            }
            SequenceMode::Spectral => {
                let (pp, ch) = (cfg.pixels(), cfg.num_bands);
                let cube = tape.reshape(x_norm, &[n, pp, ch])?;
                let per_band = tape.swap_last2(cube)?;
                let rows = tape.reshape(per_band, &[n * ch, pp])?;
                let y = tape.linear(rows, w, b)?;
                let seq = tape.reshape(y, &[n, ch, e])?;
                tape.swap_last2(seq)
            }
        }
    };
    let x_proj = project(tape, vars.w_x, vars.b_x)?;
    let z_proj = project(tape, vars.w_z, vars.b_z)?;
    let z_proj_reversed = match (cfg.reverse_mode, vars.z_rev) {
        (ReverseMode::Flip, _) => tape.flip(z_proj, 2)?,
        (ReverseMode::Learned, Some((w, b))) => linear_over_hidden(tape, z_proj, w, b)?,
        (ReverseMode::Learned, None) => {
            return Err(Error::config("learned reverse mode needs linear_z_rev parameters"))
        }
    };
    Ok(Projections {
        x_proj,
        z_proj,
        z_proj_reversed,
    })
}

fn direction_pre<T: Real>(tape: &mut Tape<T>, seq: Var, k: Var, b: Var) -> Result<(Var, Var)> {
    let pre = tape.conv1d(seq, k, b)?;
    let act = tape.silu(pre)?;
    Ok((pre, act))
}

/// Per-direction convolutions: `x_forward = SiLU(conv_fwd(x_proj))`,
/// `x_backward = SiLU(conv_bwd(z_proj_reversed))`.
pub fn directional_states<T: Real>(
    tape: &mut Tape<T>,
    proj: &Projections,
    vars: &BlockVars,
) -> Result<DirectionalStates> {
    let (pre_forward, x_forward) = direction_pre(tape, proj.x_proj, vars.k_fwd, vars.kb_fwd)?;
    let (pre_backward, x_backward) =
        direction_pre(tape, proj.z_proj_reversed, vars.k_bwd, vars.kb_bwd)?;
    Ok(DirectionalStates {
        pre_forward,
        pre_backward,
        x_forward,
        x_backward,
    })
}

/// `tanh(pre + M·Δ)` with the length-E bias broadcast over batch and sequence.
pub fn state_update_one<T: Real>(
    tape: &mut Tape<T>,
    pre: Var,
    transition: Var,
    delta: Var,
) -> Result<Var> {
    let bias = tape.matvec(transition, delta)?;
    let shifted = tape.channel_bias(pre, bias)?;
    tape.tanh(shifted)
}

/// `h_forward = tanh(conv_fwd(x_proj) + A·Δ)`, `h_backward = tanh(conv_bwd(z_rev) + B·Δ)`.
pub fn state_update<T: Real>(
    tape: &mut Tape<T>,
    states: &DirectionalStates,
    vars: &BlockVars,
) -> Result<(Var, Var)> {
    let hf = state_update_one(tape, states.pre_forward, vars.a, vars.delta)?;
    let hb = state_update_one(tape, states.pre_backward, vars.b, vars.delta)?;
    Ok((hf, hb))
}

/// Mean over the sequence axis then a linear map to `output_dim`.
pub fn reduce_and_project_one<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    w: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let reduced = tape.mean(h, 2)?;
    let y = tape.linear(reduced, w, b)?;
    Ok((reduced, y))
}

/// Runs the full block on `x: [N, p, p, CH]`. Disabled directions are not
/// computed; their output term is an all-zero `[N, output_dim]` constant.
pub fn block_forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    vars: &BlockVars,
    cfg: &BlockConfig,
    directions: Directions,
) -> Result<BlockOutput> {
    check_input(tape.shape(x), cfg)?;
    let n = tape.shape(x)[0];
    let zeros = || Tensor::<T>::zeros(&[n, cfg.output_dim]);

    let mut x_norm = None;
    let mut projections = None;
    let mut states = None;
    let mut h_forward = None;
    let mut h_backward = None;
    if directions.forward || directions.backward {
        let xn = normalize_input(tape, x, vars, cfg)?;
        let proj = project_inputs(tape, xn, vars, cfg)?;
        x_norm = Some(xn);
        projections = Some(proj);
        if directions.forward && directions.backward {
            let st = directional_states(tape, &proj, vars)?;
            let (hf, hb) = state_update(tape, &st, vars)?;
            states = Some(st);
            h_forward = Some(hf);
            h_backward = Some(hb);
        } else if directions.forward {
            let (pre, _) = direction_pre(tape, proj.x_proj, vars.k_fwd, vars.kb_fwd)?;
            h_forward = Some(state_update_one(tape, pre, vars.a, vars.delta)?);
        } else {
            let (pre, _) = direction_pre(tape, proj.z_proj_reversed, vars.k_bwd, vars.kb_bwd)?;
            h_backward = Some(state_update_one(tape, pre, vars.b, vars.delta)?);
        }
    }

    let (forward_reduced, y_fwd) = match h_forward {
        Some(h) => {
            let (r, y) = reduce_and_project_one(tape, h, vars.w_fwd, vars.b_fwd)?;
            (Some(r), y)
        }
        None => (None, tape.constant(zeros())),
    };
    let (backward_reduced, y_bwd) = match h_backward {
        Some(h) => {
            let (r, y) = reduce_and_project_one(tape, h, vars.w_bwd, vars.b_bwd)?;
            (Some(r), y)
        }
        None => (None, tape.constant(zeros())),
    };
    let y_combined = tape.add(y_fwd, y_bwd)?;
    Ok(BlockOutput {
        x_norm,
        projections,
        states,
        h_forward,
        h_backward,
        forward_reduced,
        backward_reduced,
        y_fwd,
        y_bwd,
        y_combined,
    })
}

fn check_input(shape: &[usize], cfg: &BlockConfig) -> Result<()> {
    if shape.len() != 4 || shape[1..] != cfg.input_shape(shape[0])[1..] {
        return Err(Error::shape(
            "block_forward",
            format!(
                "expected [N, {p}, {p}, {c}], got {shape:?}",
                p = cfg.spatial_dim,
                c = cfg.num_bands
            ),
        ));
    }
    Ok(())
}

/// Draws a config-conforming random batch, used by tests and benchmarks.
pub fn random_input<T: Real>(cfg: &BlockConfig, batch: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let shape = cfg.input_shape(batch);
    let n = shape.iter().product();
    Tensor::new(
        &shape,
        (0..n).map(|_| T::from_f64(rng.random_range(0.0..1.0))).collect(),
    )
    .expect("shape and length agree")
}

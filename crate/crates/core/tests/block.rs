use hsimamba::block::{
    block_forward, random_input, reduce_and_project_one, state_update_one, BlockConfig,
    BlockParams, BlockVars, Directions, ReverseMode, SequenceMode,
};
use hsimamba::gradcheck::{check_all, FD_STEP};
use hsimamba::{Result, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(cfg: &BlockConfig, seed: u64) -> BlockParams<f64> {
    BlockParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn run(cfg: &BlockConfig, p: &BlockParams<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, p, false);
    let xv = tape.constant(x.clone());
    let out = block_forward(&mut tape, xv, &vars, cfg, Directions::BOTH).unwrap();
    tape.value(out.y_combined).clone()
}

/// Reverses the band axis of `[N, p, p, CH]`.
fn reverse_bands(x: &Tensor<f64>) -> Tensor<f64> {
    let ch = x.shape()[3];
    let data = x
        .data()
        .chunks(ch)
        .flat_map(|px| px.iter().rev().copied())
        .collect();
    Tensor::new(x.shape(), data).unwrap()
}

#[test]
fn init_is_deterministic_with_expected_fill_and_bounds() {
    let cfg = BlockConfig::new(3, 8, 6, 5);
    let a = params(&cfg, 42);
    let b = params(&cfg, 42);
    assert_eq!(a, b);
    assert_ne!(a, params(&cfg, 43));
    assert!(a.delta.data().iter().all(|&d| d == 0.1));
    let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    assert!(a.w_x.max_abs() <= bound(9));
    assert!(a.w_z.max_abs() <= bound(9));
    assert!(a.k_fwd.max_abs() <= bound(18));
    assert!(a.w_fwd.max_abs() <= bound(6));
    assert!(a.a.max_abs() <= 0.01 && a.b.max_abs() <= 0.01);
    a.check_shapes(&cfg).unwrap();
}

#[test]
fn config_validation() {
    assert!(BlockConfig::new(2, 8, 4, 4).validate().is_err());
    assert!(BlockConfig::new(0, 8, 4, 4).validate().is_err());
    assert!(BlockConfig::new(3, 2, 4, 4).validate().is_err());
    assert!(BlockConfig::new(3, 8, 0, 4).validate().is_err());
    let mut c = BlockConfig::new(3, 8, 4, 4);
    c.delta_init = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn projection_shapes_per_mode() {
    let mut cfg = BlockConfig::new(3, 8, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for mode in [SequenceMode::Spectral, SequenceMode::Literal] {
        cfg.sequence_mode = mode;
        let p = params(&cfg, 2);
        let mut tape = Tape::new();
        let vars = BlockVars::register(&mut tape, &p, false);
        let x = tape.constant(random_input(&cfg, 2, &mut rng));
        let out = block_forward(&mut tape, x, &vars, &cfg, Directions::BOTH).unwrap();
        let proj = out.projections.unwrap();
        let want_l = if mode == SequenceMode::Spectral { 8 } else { 1 };
        assert_eq!(tape.shape(proj.x_proj), &[2, 4, want_l]);
        assert_eq!(tape.shape(proj.z_proj_reversed), &[2, 4, want_l]);
        assert_eq!(tape.shape(out.y_combined), &[2, 5]);
    }
}

#[test]
fn flip_reversal_is_an_involution_of_z() {
    let cfg = BlockConfig::new(3, 8, 4, 5);
    let p = params(&cfg, 3);
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, &p, false);
    let x = tape.constant(random_input(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(4)));
    let out = block_forward(&mut tape, x, &vars, &cfg, Directions::BOTH).unwrap();
    let proj = out.projections.unwrap();
    let back = tape.flip(proj.z_proj_reversed, 2).unwrap();
    assert_eq!(tape.value(back), tape.value(proj.z_proj));
}

#[test]
fn spectral_projection_acts_per_band() {
    // Each band's spatial vector goes through the same linear map.
    let cfg = BlockConfig::new(3, 5, 4, 2);
    let p = params(&cfg, 5);
    let x = random_input::<f64>(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(6));
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, &p, false);
    let xv = tape.constant(x);
    let out = block_forward(&mut tape, xv, &vars, &cfg, Directions::BOTH).unwrap();
    let xn = tape.value(out.x_norm.unwrap()).data().to_vec();
    let xp = tape.value(out.projections.unwrap().x_proj).clone();
    for band in 0..5 {
        for e in 0..4 {
            let mut want = p.b_x.data()[e];
            for pix in 0..9 {
                want += xn[pix * 5 + band] * p.w_x.data()[pix * 4 + e];
            }
            let got = xp.data()[e * 5 + band];
            assert!((got - want).abs() < 1e-12);
        }
    }
}

#[test]
fn directional_states_examples() {
    let cfg = BlockConfig::new(1, 4, 3, 2);
    let mut p = params(&cfg, 7);
    // identity kernels and zero bias → x_forward = SiLU(x_proj)
    p.k_fwd = Tensor::zeros(&[3, 3, 3]);
    for c in 0..3 {
        p.k_fwd.data_mut()[(c * 3 + c) * 3 + 1] = 1.0;
    }
    p.kb_fwd = Tensor::zeros(&[3]);
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, &p, false);
    let x = tape.constant(random_input(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(8)));
    let out = block_forward(&mut tape, x, &vars, &cfg, Directions::BOTH).unwrap();
    let proj = out.projections.unwrap();
    let st = out.states.unwrap();
    let silu = tape.silu(proj.x_proj).unwrap();
    assert_eq!(tape.value(silu), tape.value(st.x_forward));
    assert_eq!(tape.shape(st.x_backward), &[2, 3, 4]);

    // zero input to the conv → SiLU(bias) broadcast along L
    let mut tape = Tape::new();
    let k = tape.constant(p.k_bwd.clone());
    let b = tape.constant(p.kb_bwd.clone());
    let z = tape.constant(Tensor::zeros(&[1, 3, 4]));
    let pre = tape.conv1d(z, k, b).unwrap();
    let act = tape.silu(pre).unwrap();
    for c in 0..3 {
        let bias = p.kb_bwd.data()[c];
        let want = bias / (1.0 + (-bias).exp());
        for t in 0..4 {
            assert!((tape.value(act).data()[c * 4 + t] - want).abs() < 1e-15);
        }
    }
}

/// Straight-line scalar re-implementation of `tanh(conv(x) + M·Δ)`.
fn scalar_state_update(
    x: &[Vec<f64>],
    k: &[Vec<[f64; 3]>],
    kb: &[f64],
    m: &[Vec<f64>],
    delta: &[f64],
) -> Vec<Vec<f64>> {
    let e = x.len();
    let l = x[0].len();
    let mut h = vec![vec![0.0; l]; e];
    for o in 0..e {
        let mut bias = 0.0;
        for j in 0..e {
            bias += m[o][j] * delta[j];
        }
        for t in 0..l {
            let mut s = kb[o];
            for c in 0..e {
                if t >= 1 {
                    s += k[o][c][0] * x[c][t - 1];
                }
                s += k[o][c][1] * x[c][t];
                if t + 1 < l {
                    s += k[o][c][2] * x[c][t + 1];
                }
            }
            h[o][t] = (s + bias).tanh();
        }
    }
    h
}

#[test]
fn state_update_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut r = || rng.random_range(-1.0..1.0);
    let (e, l) = (2, 3);
    let x: Vec<Vec<f64>> = (0..e).map(|_| (0..l).map(|_| r()).collect()).collect();
    let k: Vec<Vec<[f64; 3]>> = (0..e)
        .map(|_| (0..e).map(|_| [r(), r(), r()]).collect())
        .collect();
    let kb: Vec<f64> = (0..e).map(|_| r()).collect();
    let m: Vec<Vec<f64>> = (0..e).map(|_| (0..e).map(|_| r()).collect()).collect();
    let delta: Vec<f64> = (0..e).map(|_| r()).collect();
    let want = scalar_state_update(&x, &k, &kb, &m, &delta);

    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(Tensor::new(&[1, e, l], x.concat()).unwrap());
    let kflat: Vec<f64> = k.iter().flatten().flat_map(|t| t.iter().copied()).collect();
    let kv = tape.constant(Tensor::new(&[e, e, 3], kflat).unwrap());
    let bv = tape.constant(Tensor::new(&[e], kb).unwrap());
    let mv = tape.constant(Tensor::new(&[e, e], m.concat()).unwrap());
    let dv = tape.constant(Tensor::new(&[e], delta).unwrap());
    let pre = tape.conv1d(xv, kv, bv).unwrap();
    let h = state_update_one(&mut tape, pre, mv, dv).unwrap();
    for (got, want) in tape.value(h).data().iter().zip(want.concat()) {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn zero_transition_leaves_plain_tanh() {
    let mut tape = Tape::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pre = tape.constant(random_input::<f64>(&BlockConfig::new(1, 3, 1, 1), 4, &mut rng).reshape(&[4, 1, 3]).unwrap());
    let a = tape.constant(Tensor::zeros(&[1, 1]));
    let d = tape.constant(Tensor::full(&[1], 0.7));
    let h = state_update_one(&mut tape, pre, a, d).unwrap();
    let t = tape.tanh(pre).unwrap();
    assert_eq!(tape.value(h), tape.value(t));
}

#[test]
fn reduce_and_project_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = Tensor::<f64>::new(&[2, 3, 1], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    // L = 1: the mean is the single step
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let w = tape.constant(Tensor::ones(&[3, 2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let (r, _) = reduce_and_project_one(&mut tape, hv, w, b).unwrap();
    assert_eq!(tape.value(r).data(), h.data());

    // zero weights → bias only, summed over both directions
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let w = tape.constant(Tensor::zeros(&[3, 2]));
    let bf = tape.constant(Tensor::from_f64(&[2], &[0.5, -1.0]).unwrap());
    let bb = tape.constant(Tensor::from_f64(&[2], &[0.25, 2.0]).unwrap());
    let (_, yf) = reduce_and_project_one(&mut tape, hv, w, bf).unwrap();
    let (_, yb) = reduce_and_project_one(&mut tape, hv, w, bb).unwrap();
    let y = tape.add(yf, yb).unwrap();
    assert_eq!(tape.value(y).data(), &[0.75, 1.0, 0.75, 1.0]);

    // linear in h when biases are zero
    let h3 = Tensor::<f64>::new(&[2, 3, 4], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let wv = Tensor::<f64>::new(&[3, 2], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let project = |h: Tensor<f64>| {
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let w = tape.constant(wv.clone());
        let b = tape.constant(Tensor::zeros(&[2]));
        let (_, y) = reduce_and_project_one(&mut tape, hv, w, b).unwrap();
        tape.value(y).clone()
    };
    let alpha = 2.5;
    let scaled = project(h3.map(|v| alpha * v));
    let base = project(h3);
    for (s, b) in scaled.data().iter().zip(base.data()) {
        assert!((s - alpha * b).abs() < 1e-12);
    }
}

#[test]
fn output_is_sum_of_directions_and_states_are_bounded() {
    let cfg = BlockConfig::new(5, 9, 6, 4);
    let mut p = params(&cfg, 12);
    // large transitions push the pre-activations well away from zero
    p.a = p.a.map(|v| 300.0 * v);
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, &p, false);
    let x = tape.constant(random_input(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(13)));
    let out = block_forward(&mut tape, x, &vars, &cfg, Directions::BOTH).unwrap();
    let sum = tape.add(out.y_fwd, out.y_bwd).unwrap();
    assert_eq!(tape.value(sum), tape.value(out.y_combined));
    for h in [out.h_forward.unwrap(), out.h_backward.unwrap()] {
        assert!(tape.value(h).data().iter().all(|&v| v > -1.0 && v < 1.0));
    }
}

#[test]
fn disabled_direction_contributes_zero() {
    let cfg = BlockConfig::new(3, 6, 4, 3);
    let p = params(&cfg, 14);
    let x = random_input::<f64>(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(15));
    let eval = |d: Directions| {
        let mut tape = Tape::new();
        let vars = BlockVars::register(&mut tape, &p, false);
        let xv = tape.constant(x.clone());
        let out = block_forward(&mut tape, xv, &vars, &cfg, d).unwrap();
        (
            tape.value(out.y_fwd).clone(),
            tape.value(out.y_bwd).clone(),
            tape.value(out.y_combined).clone(),
        )
    };
    let (yf, yb, _) = eval(Directions::BOTH);
    let (_, zb, only_f) = eval(Directions { forward: true, backward: false });
    assert!(zb.data().iter().all(|&v| v == 0.0));
    assert_eq!(only_f, yf);
    let (zf, _, only_b) = eval(Directions { forward: false, backward: true });
    assert!(zf.data().iter().all(|&v| v == 0.0));
    assert_eq!(only_b, yb);
}

#[test]
fn learned_reverse_mode_runs_and_has_extra_params() {
    let mut cfg = BlockConfig::new(3, 6, 4, 3);
    cfg.reverse_mode = ReverseMode::Learned;
    let p = params(&cfg, 16);
    assert!(p.entries().iter().any(|(n, _)| *n == "linear_z_rev.weight"));
    p.check_shapes(&cfg).unwrap();
    let y = run(&cfg, &p, &random_input(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(17)));
    assert_eq!(y.shape(), &[2, 3]);
}

#[test]
fn rejects_mismatched_input() {
    let cfg = BlockConfig::new(3, 6, 4, 3);
    let p = params(&cfg, 18);
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, &p, false);
    let x = tape.constant(Tensor::zeros(&[1, 3, 3, 5]));
    assert!(block_forward(&mut tape, x, &vars, &cfg, Directions::BOTH).is_err());
}

#[test]
fn tied_parameters_make_band_reversal_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for trial in 0..20 {
        let cfg = BlockConfig::new(
            [1, 3, 5][trial % 3],
            rng.random_range(3..12),
            rng.random_range(1..7),
            rng.random_range(1..5),
        );
        let mut p = params(&cfg, 100 + trial as u64);
        p.a = p.a.map(|v| 50.0 * v);
        p.tie_directions();
        let x = random_input::<f64>(&cfg, 2, &mut rng);
        let y = run(&cfg, &p, &x);
        let yr = run(&cfg, &p, &reverse_bands(&x));
        for (a, b) in y.data().iter().zip(yr.data()) {
            assert!((a - b).abs() <= 1e-10, "trial {trial}: {a} vs {b}");
        }
    }
}

#[test]
fn untied_parameters_break_the_symmetry() {
    let cfg = BlockConfig::new(3, 8, 4, 3);
    let p = params(&cfg, 20);
    let x = random_input::<f64>(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(21));
    let y = run(&cfg, &p, &x);
    let yr = run(&cfg, &p, &reverse_bands(&x));
    let diff = y
        .data()
        .iter()
        .zip(yr.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-6);
}

fn block_gradcheck(cfg: &BlockConfig, seed: u64) -> Vec<(String, f64)> {
    let p = params(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = random_input::<f64>(cfg, 2, &mut rng);
    let weights = Tensor::<f64>::new(
        &[2, cfg.output_dim],
        (0..2 * cfg.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let names: Vec<String> = p.entries().iter().map(|(n, _)| n.to_string()).collect();
    let inputs: Vec<Tensor<f64>> = p.entries().iter().map(|(_, t)| (*t).clone()).collect();

    let rebuild = |xs: &[Tensor<f64>]| {
        let mut q = p.clone();
        for ((_, t), v) in q.entries_mut().into_iter().zip(xs) {
            *t = v.clone();
        }
        q
    };
    let loss = |xs: &[Tensor<f64>]| -> Result<f64> {
        let q = rebuild(xs);
        let mut tape = Tape::new();
        let vars = BlockVars::register(&mut tape, &q, false);
        let xv = tape.constant(x.clone());
        let out = block_forward(&mut tape, xv, &vars, cfg, Directions::BOTH)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out.y_combined, w)?;
        let s = tape.sum(prod)?;
        Ok(tape.value(s).item())
    };
    let mut tape = Tape::new();
    let vars = BlockVars::register(&mut tape, &p, true);
    let xv = tape.constant(x.clone());
    let out = block_forward(&mut tape, xv, &vars, cfg, Directions::BOTH).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out.y_combined, w).unwrap();
    let s = tape.sum(prod).unwrap();
    let grads = tape.backward(s).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .in_order()
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    for g in &analytic {
        assert!(g.data().iter().any(|&v| v != 0.0), "a parameter received no gradient");
    }
    check_all(&names, &inputs, &analytic, FD_STEP, loss)
        .unwrap()
        .into_iter()
        .map(|g| (g.name, g.max_rel_error))
        .collect()
}

#[test]
fn block_gradcheck_all_modes() {
    for (seq, rev) in [
        (SequenceMode::Spectral, ReverseMode::Flip),
        (SequenceMode::Spectral, ReverseMode::Learned),
        (SequenceMode::Literal, ReverseMode::Flip),
    ] {
        let mut cfg = BlockConfig::new(3, 8, 4, 3);
        cfg.sequence_mode = seq;
        cfg.reverse_mode = rev;
        for (name, err) in block_gradcheck(&cfg, 30) {
            assert!(err <= 1e-4, "{seq:?}/{rev:?} {name}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shape_contract_holds(
        p in prop::sample::select(vec![1usize, 3, 5, 7]),
        ch in 3usize..16,
        e in 1usize..9,
        o in 1usize..6,
        n in 1usize..4,
        literal in any::<bool>(),
        learned in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut cfg = BlockConfig::new(p, ch, e, o);
        if literal { cfg.sequence_mode = SequenceMode::Literal; }
        if learned { cfg.reverse_mode = ReverseMode::Learned; }
        let l = cfg.seq_len();
        let params = params(&cfg, seed);
        let mut tape = Tape::new();
        let vars = BlockVars::register(&mut tape, &params, false);
        let x = tape.constant(random_input(&cfg, n, &mut ChaCha8Rng::seed_from_u64(seed)));
        let out = block_forward(&mut tape, x, &vars, &cfg, Directions::BOTH).unwrap();
        let proj = out.projections.unwrap();
        let st = out.states.unwrap();
        prop_assert_eq!(tape.shape(out.x_norm.unwrap()), &[n, p * p * ch][..]);
        for v in [proj.x_proj, proj.z_proj, proj.z_proj_reversed, st.pre_forward, st.pre_backward,
                  st.x_forward, st.x_backward, out.h_forward.unwrap(), out.h_backward.unwrap()] {
            prop_assert_eq!(tape.shape(v), &[n, e, l][..]);
        }
        prop_assert_eq!(tape.shape(out.forward_reduced.unwrap()), &[n, e][..]);
        prop_assert_eq!(tape.shape(out.backward_reduced.unwrap()), &[n, e][..]);
        for v in [out.y_fwd, out.y_bwd, out.y_combined] {
            prop_assert_eq!(tape.shape(v), &[n, o][..]);
        }
        let sum = tape.add(out.y_fwd, out.y_bwd).unwrap();
        prop_assert_eq!(tape.value(sum), tape.value(out.y_combined));
    }
}

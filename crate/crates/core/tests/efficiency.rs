use hsimamba::checkpoint::Checkpoint;
use hsimamba::efficiency::{
    count_actual, estimate, parameter_only_flops, Dims, ModelKind,
};
use hsimamba::model::Ablation;
use hsimamba::{BlockConfig, ModelConfig, ModelParams, ReverseMode, SequenceMode};

fn dims(b: u64, c: u64, k: u64) -> Dims {
    Dims { b, h: 7, w: 7, c, k, d: 16 }
}

fn config(p: usize, ch: usize, e: usize) -> ModelConfig {
    ModelConfig::new(BlockConfig::new(p, ch, e, e), 5, 3)
}

#[test]
fn asymptotic_classes_are_verbatim() {
    let expected = [
        (ModelKind::Transformer, "O(C² + CHW)", "O(BHW · C²)"),
        (ModelKind::Cnn, "O(k² · C²)", "O(BHW · k² · C)"),
        (ModelKind::Hsimamba, "O(C + HW)", "O(BHW · C)"),
    ];
    for (kind, params, flops) in expected {
        let p = estimate(kind, dims(4, 30, 3)).unwrap();
        assert_eq!(p.params_class, params);
        assert_eq!(p.flops_class, flops);
    }
}

#[test]
fn estimator_ratios() {
    for k in [1, 3, 5] {
        let a = estimate(ModelKind::Cnn, dims(4, 30, k)).unwrap().flops;
        let b = estimate(ModelKind::Cnn, dims(4, 30, 1)).unwrap().flops;
        assert_eq!(a, b * k * k);
    }
    let t1 = estimate(ModelKind::Transformer, dims(4, 30, 3)).unwrap().flops;
    let t2 = estimate(ModelKind::Transformer, dims(4, 60, 3)).unwrap().flops;
    assert_eq!(t2, 4 * t1);
    let h1 = estimate(ModelKind::Hsimamba, dims(4, 30, 3)).unwrap();
    assert_eq!(h1.params, 30 + 49);
    assert_eq!(h1.flops, 4 * 49 * 30);
}

#[test]
fn counted_flops_double_with_batch() {
    for mode in [SequenceMode::Spectral, SequenceMode::Literal] {
        let mut cfg = config(5, 12, 6);
        cfg.block.sequence_mode = mode;
        for b in [1, 3, 8] {
            let one = count_actual(&cfg, b).unwrap().flops;
            let two = count_actual(&cfg, 2 * b).unwrap().flops;
            assert_eq!(two, 2 * one, "{mode:?} batch {b}");
        }
    }
}

#[test]
fn parameter_only_work_is_the_transition_bias() {
    let e = 6;
    let mut cfg = config(3, 10, e);
    assert_eq!(parameter_only_flops(&cfg).unwrap(), 2 * (e * e) as u64);
    cfg.ablation = Ablation::new(true, false, true);
    assert_eq!(parameter_only_flops(&cfg).unwrap(), (e * e) as u64);
}

#[test]
fn spectral_flops_are_linear_in_bands() {
    let xs = [16.0, 32.0, 64.0];
    let ys: Vec<f64> = xs
        .iter()
        .map(|&ch| count_actual(&config(5, ch as usize, 8), 2).unwrap().flops as f64)
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - (slope * x + icpt)).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 >= 0.999, "R² = {r2}");
    assert!(slope > 0.0);
}

/// Analytic parameter total, written out from the layer list.
fn analytic_params(cfg: &ModelConfig) -> usize {
    let b = &cfg.block;
    let (p2, ch, e, o, k) = (b.spatial_dim.pow(2), b.num_bands, b.hidden_dim, b.output_dim, cfg.num_classes);
    let proj_in = match b.sequence_mode {
        SequenceMode::Spectral => p2,
        SequenceMode::Literal => p2 * ch,
    };
    let norm = 2 * p2 * ch;
    let projections = 2 * (proj_in * e + e);
    let reverse = match b.reverse_mode {
        ReverseMode::Flip => 0,
        ReverseMode::Learned => e * e + e,
    };
    let convs = 2 * (e * e * 3 + e);
    let transitions = 2 * e * e + e;
    let heads = 2 * (e * o + o);
    let s = e.div_ceil(2);
    let spatial = s * 9 + s + s * o + o;
    let classifier = o * k + k;
    norm + projections + reverse + convs + transitions + heads + spatial + classifier
}

#[test]
fn parameter_count_matches_enumeration() {
    for (seq, rev) in [
        (SequenceMode::Spectral, ReverseMode::Flip),
        (SequenceMode::Spectral, ReverseMode::Learned),
        (SequenceMode::Literal, ReverseMode::Flip),
    ] {
        for (p, ch, e) in [(1, 8, 4), (5, 20, 7), (7, 16, 16)] {
            let mut cfg = config(p, ch, e);
            cfg.block.sequence_mode = seq;
            cfg.block.reverse_mode = rev;
            let counted = count_actual(&cfg, 1).unwrap().params as usize;
            let params = ModelParams::<f32>::init(&cfg).unwrap();
            let stored = Checkpoint::from_params(&cfg, &params).num_params();
            assert_eq!(counted, analytic_params(&cfg));
            assert_eq!(stored, counted);
        }
    }
}

#[test]
fn count_and_estimate_agree_up_to_a_bounded_constant() {
    // The estimate drops every constant, so only the ratio's spread across
    // the grid is meaningful.
    let e = 8;
    let mut ratios = Vec::new();
    for p in [3, 5, 7] {
        for ch in [16, 32, 64] {
            for b in [1, 2, 4, 8] {
                let counted = count_actual(&config(p, ch, e), b).unwrap().flops as f64;
                let d = Dims { b: b as u64, h: p as u64, w: p as u64, c: ch as u64, k: 1, d: e as u64 };
                let est = estimate(ModelKind::Hsimamba, d).unwrap().flops as f64;
                ratios.push(counted / est);
            }
        }
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max / min <= 4.0, "ratio spread {min}..{max}");
}

use std::path::Path;

use hsimamba::checkpoint::load_checkpoint;
use hsimamba::cli::{run, EXIT_IO, EXIT_OK, EXIT_VALIDATION};
use hsimamba::sweep::{validate_ablation_csv, validate_sweep_csv, PATCH_SWEEP};
use hsimamba::train::RunReport;

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("hsimamba").chain(args.iter().copied()))
}

fn synth(dir: &Path) -> String {
    let cube = s(&dir.join("scene.hsic"));
    let code = cli(&[
        "synth", "--out", &cube, "--height", "16", "--width", "16", "--bands", "6",
        "--classes", "3", "--seed", "3", "--train-per-class", "5",
    ]);
    assert_eq!(code, EXIT_OK);
    cube
}

#[test]
fn train_then_eval_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cube = synth(dir.path());
    let ck = s(&dir.path().join("m.ckpt"));
    let report = dir.path().join("train.json");
    let code = cli(&[
        "train", "--cube", &cube, "--patch", "3", "--hidden", "4", "--epochs", "2",
        "--out-checkpoint", &ck, "--out-report", &s(&report),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(dir.path().join("train.confusion.csv").exists());
    let trained = RunReport::load(&report).unwrap();
    assert_eq!(trained.config.train.epochs, 2);
    assert_eq!(trained.config.model.block.spatial_dim, 3);
    assert_eq!(load_checkpoint(&ck).unwrap().config, trained.config.model);

    let eval = dir.path().join("eval.json");
    assert_eq!(cli(&["eval", "--cube", &cube, "--checkpoint", &ck, "--out-report", &s(&eval)]), EXIT_OK);
    let evaluated = RunReport::load(&eval).unwrap();
    assert_eq!(evaluated.confusion, trained.confusion);
    assert_eq!(evaluated.scores(), trained.scores());
}

#[test]
fn training_is_idempotent_for_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cube = synth(dir.path());
    let mut outs = Vec::new();
    for i in 0..2 {
        let ck = dir.path().join(format!("m{i}.ckpt"));
        let rep = dir.path().join(format!("r{i}.json"));
        let code = cli(&[
            "train", "--cube", &cube, "--patch", "3", "--hidden", "4", "--epochs", "1",
            "--seed", "9", "--out-checkpoint", &s(&ck), "--out-report", &s(&rep),
        ]);
        assert_eq!(code, EXIT_OK);
        outs.push((std::fs::read(&ck).unwrap(), RunReport::load(&rep).unwrap()));
    }
    assert_eq!(outs[0].0, outs[1].0);
    assert_eq!(outs[0].1.epoch_losses, outs[1].1.epoch_losses);
    assert_eq!(outs[0].1.confusion, outs[1].1.confusion);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cube = synth(dir.path());
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "hidden": 3, "patch": 5, "augment": false}"#).unwrap();
    let rep = dir.path().join("r.json");
    let code = cli(&[
        "train", "--cube", &cube, "--config", &s(&cfg), "--patch", "3",
        "--out-checkpoint", &s(&dir.path().join("m.ckpt")), "--out-report", &s(&rep),
    ]);
    assert_eq!(code, EXIT_OK);
    let r = RunReport::load(&rep).unwrap();
    assert_eq!(r.config.model.block.spatial_dim, 3);
    assert_eq!(r.config.model.block.hidden_dim, 3);
    assert_eq!(r.config.train.epochs, 1);
    assert!(!r.config.train.augment);

    std::fs::write(&cfg, r#"{"epochs": 1, "bogus": 2}"#).unwrap();
    let code = cli(&[
        "train", "--cube", &cube, "--config", &s(&cfg),
        "--out-checkpoint", "x", "--out-report", "y",
    ]);
    assert_eq!(code, EXIT_VALIDATION);
}

#[test]
fn invalid_invocations_fail_with_the_right_code() {
    let dir = tempfile::tempdir().unwrap();
    let cube = synth(dir.path());
    let out = |n: &str| s(&dir.path().join(n));
    let base = ["train", "--cube", cube.as_str()];
    let with = |extra: &[&str]| {
        let mut v: Vec<String> = base.iter().map(|x| x.to_string()).collect();
        v.extend(extra.iter().map(|x| x.to_string()));
        v.extend(["--out-checkpoint".into(), out("m"), "--out-report".into(), out("r")]);
        run(std::iter::once("hsimamba".to_string()).chain(v))
    };
    assert_eq!(with(&["--ablation", "none"]), EXIT_VALIDATION);
    assert_eq!(with(&["--ablation", "sideways"]), EXIT_VALIDATION);
    assert_eq!(with(&["--patch", "4"]), EXIT_VALIDATION);
    assert_eq!(with(&["--lr", "0"]), EXIT_VALIDATION);
    assert_eq!(with(&["--unknown-flag"]), EXIT_VALIDATION);
    assert_eq!(with(&["--train-per-class", "5000", "--split", &out("missing.json")]), EXIT_IO);
    assert!(!dir.path().join("m").exists());

    let missing = out("nope.hsic");
    let code = cli(&["train", "--cube", &missing, "--out-checkpoint", "a", "--out-report", "b"]);
    assert_eq!(code, EXIT_IO);
}

#[test]
fn gradcheck_passes_on_tiny_config() {
    assert_eq!(cli(&["gradcheck", "--tolerance", "1e-4"]), EXIT_OK);
    assert_eq!(cli(&["gradcheck", "--tolerance", "0"]), EXIT_VALIDATION);
}

#[test]
fn bench_emits_patch_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let cube = synth(dir.path());
    let csv = dir.path().join("sweep.csv");
    let profile = dir.path().join("profile.json");
    let code = cli(&[
        "bench", "--cube", &cube, "--hidden", "4", "--epochs", "1", "--out-csv", &s(&csv),
        "--out-profile", &s(&profile),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows = validate_sweep_csv(&text, &PATCH_SWEEP).unwrap();
    assert!(rows.iter().all(|r| r.test_s > 0.0 && r.train_s > 0.0));
    assert!(profile.exists());
}

#[test]
fn sweep_ablation_emits_five_row_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cube = synth(dir.path());
    let csv = dir.path().join("ablation.csv");
    let code = cli(&[
        "sweep-ablation", "--cube", &cube, "--patch", "3", "--hidden", "4", "--epochs", "1",
        "--out-csv", &s(&csv),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = validate_ablation_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
}

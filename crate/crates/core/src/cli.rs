//! Command-line front end. [`run`] parses arguments and returns the exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::block::{BlockConfig, ReverseMode, SequenceMode};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{build_split, gen_synthetic, read_cube, write_cube, HsiCube, Normalization, SplitManifest};
use crate::efficiency::count_actual;
use crate::error::{Error, Result};
use crate::gradcheck::{check_model, FD_STEP};
use crate::model::{Ablation, ModelConfig};
use crate::sweep::{
    ablation_csv, ablation_sweep, patch_sweep, split_patch_sets, sweep_csv, PATCH_SWEEP,
};
use crate::train::{eval_report, train, RunReport, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

const DEFAULT_PATCH: usize = 7;
const DEFAULT_HIDDEN: usize = 16;
const DEFAULT_TRAIN_PER_CLASS: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "hsimamba", version, about = "Bidirectional spectral classifier for hyperspectral cubes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled cube.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a cube.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the full model.
    Gradcheck(GradcheckArgs),
    /// Patch-size sweep: accuracy, memory and timing per patch size.
    Bench(BenchArgs),
    /// Train the five component-ablation variants.
    SweepAblation(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 20)]
    pub bands: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Store a stratified split plane with this many training pixels per class.
    #[arg(long)]
    pub train_per_class: Option<usize>,
}

/// Flags shared by every command that trains. Unset flags fall back to the
/// JSON `--config` file, then to the built-in defaults.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// JSON file with any of the settings below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_enum::<SequenceMode>)]
    pub sequence_mode: Option<SequenceMode>,
    #[arg(long, value_parser = parse_enum::<ReverseMode>)]
    pub reverse_mode: Option<ReverseMode>,
    #[arg(long, value_parser = parse_enum::<Normalization>)]
    pub normalize: Option<Normalization>,
    #[arg(long)]
    pub no_augment: bool,
    /// Split manifest; otherwise the cube's split plane, otherwise a fresh split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Comma-separated subset of fwd,bwd,spatial.
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out_report: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_parser = parse_enum::<Normalization>)]
    pub normalize: Option<Normalization>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// JSON model config; defaults to the tiny configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = PATCH_SWEEP)]
    pub patch_sweep: Vec<usize>,
    #[arg(long)]
    pub out_csv: PathBuf,
    /// Also write the counted complexity profile of each patch size as JSON.
    #[arg(long)]
    pub out_profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub out_csv: PathBuf,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown value '{s}'"))
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    let a: Ablation = s.parse().map_err(|e: Error| e.to_string())?;
    a.validate().map_err(|e| e.to_string())?;
    Ok(a)
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub patch: Option<usize>,
    pub hidden: Option<usize>,
    pub output_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub ablation: Option<String>,
    pub sequence_mode: Option<SequenceMode>,
    pub reverse_mode: Option<ReverseMode>,
    pub normalize: Option<Normalization>,
    pub augment: Option<bool>,
    pub train_per_class: Option<usize>,
}

/// Fully resolved settings for one training run, minus the cube geometry.
#[derive(Debug, Clone)]
pub struct Settings {
    pub patch: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub ablation: Ablation,
    pub sequence_mode: SequenceMode,
    pub reverse_mode: ReverseMode,
    pub normalize: Normalization,
    pub train_per_class: usize,
    pub train: TrainConfig,
}

impl Settings {
    fn resolve(run: &RunArgs, patch: Option<usize>, ablation: Option<Ablation>) -> Result<Self> {
        let file: FileConfig = match &run.config {
            Some(p) => serde_json::from_slice(&fs::read(p)?)
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => FileConfig::default(),
        };
        let file_ablation = file.ablation.as_deref().map(str::parse).transpose()?;
        let hidden = run.hidden.or(file.hidden).unwrap_or(DEFAULT_HIDDEN);
        let defaults = TrainConfig::default();
        let s = Self {
            patch: patch.or(file.patch).unwrap_or(DEFAULT_PATCH),
            hidden,
            output_dim: run.output_dim.or(file.output_dim).unwrap_or(hidden),
            ablation: ablation.or(file_ablation).unwrap_or(Ablation::FULL),
            sequence_mode: run.sequence_mode.or(file.sequence_mode).unwrap_or_default(),
            reverse_mode: run.reverse_mode.or(file.reverse_mode).unwrap_or_default(),
            normalize: run.normalize.or(file.normalize).unwrap_or_default(),
            train_per_class: run
                .train_per_class
                .or(file.train_per_class)
                .unwrap_or(DEFAULT_TRAIN_PER_CLASS),
            train: TrainConfig {
                lr: run.lr.or(file.lr).unwrap_or(defaults.lr),
                batch_size: run.batch.or(file.batch).unwrap_or(defaults.batch_size),
                epochs: run.epochs.or(file.epochs).unwrap_or(defaults.epochs),
                seed: run.seed.or(file.seed).unwrap_or(defaults.seed),
                augment: !run.no_augment && file.augment.unwrap_or(defaults.augment),
                ..defaults
            },
        };
        s.train.validate()?;
        s.ablation.validate()?;
        // Geometry checks that do not depend on the cube.
        s.model_config(3, 2).validate()?;
        Ok(s)
    }

    pub fn model_config(&self, bands: usize, classes: usize) -> ModelConfig {
        let mut block = BlockConfig::new(self.patch, bands, self.hidden, self.output_dim);
        block.sequence_mode = self.sequence_mode;
        block.reverse_mode = self.reverse_mode;
        ModelConfig {
            ablation: self.ablation,
            ..ModelConfig::new(block, classes, self.train.seed)
        }
    }
}

/// Loads and normalizes a cube and makes sure it carries a split plane.
fn prepare_cube(
    path: &Path,
    normalize: Normalization,
    split: Option<&Path>,
    train_per_class: usize,
    seed: u64,
) -> Result<HsiCube> {
    let mut cube = read_cube(path)?;
    cube.normalize(normalize);
    if let Some(p) = split {
        SplitManifest::load(p)?.apply(&mut cube)?;
    } else if cube.split.is_none() {
        let counts = vec![train_per_class; cube.num_classes];
        build_split(&cube, &counts, seed)?.apply(&mut cube)?;
    }
    Ok(cube)
}

fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    report.save(path)?;
    fs::write(path.with_extension("confusion.csv"), report.confusion.to_csv())?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cube = gen_synthetic(a.height, a.width, a.bands, a.classes, a.sigma, a.seed)?;
    if let Some(n) = a.train_per_class {
        build_split(&cube, &vec![n; a.classes], a.seed)?.apply(&mut cube)?;
    }
    write_cube(&cube, &a.out)?;
    println!(
        "wrote {}×{}×{} cube with {} classes to {}",
        a.height,
        a.width,
        a.bands,
        a.classes,
        a.out.display()
    );
    Ok(())
}

fn run_cube(run: &RunArgs, s: &Settings) -> Result<HsiCube> {
    prepare_cube(
        &run.cube,
        s.normalize,
        run.split.as_deref(),
        s.train_per_class,
        s.train.seed,
    )
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let s = Settings::resolve(&a.run, a.patch, a.ablation)?;
    let cube = run_cube(&a.run, &s)?;
    let cfg = s.model_config(cube.bands, cube.num_classes);
    let (tr, te) = split_patch_sets(&cube, cfg.block.spatial_dim)?;
    let (params, report) = train::<f32>(&cfg, &tr, &te, &s.train)?;
    save_checkpoint(&a.out_checkpoint, &cfg, &params)?;
    write_report(&report, &a.out_report)?;
    println!(
        "OA {:.4}  AA {:.4}  kappa {:.4}  train {:.1}s",
        report.oa, report.aa, report.kappa, report.train_seconds
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = ck.config.clone();
    let params = ck.to_params::<f32>()?;
    let cube = prepare_cube(
        &a.cube,
        a.normalize.unwrap_or_default(),
        a.split.as_deref(),
        a.train_per_class.unwrap_or(DEFAULT_TRAIN_PER_CLASS),
        a.seed.unwrap_or(cfg.seed),
    )?;
    if cube.bands != cfg.block.num_bands || cube.num_classes != cfg.num_classes {
        return Err(Error::config(format!(
            "checkpoint expects {} bands / {} classes, cube has {} / {}",
            cfg.block.num_bands, cfg.num_classes, cube.bands, cube.num_classes
        )));
    }
    let (_, te) = split_patch_sets(&cube, cfg.block.spatial_dim)?;
    let report = eval_report(&params, &cfg, &TrainConfig::default(), &te)?;
    write_report(&report, &a.out_report)?;
    println!("OA {:.4}  AA {:.4}  kappa {:.4}", report.oa, report.aa, report.kappa);
    Ok(())
}

/// Returns whether every group passed.
fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    if a.tolerance.is_nan() || a.tolerance <= 0.0 {
        return Err(Error::config("tolerance must be positive"));
    }
    let cfg: ModelConfig = match &a.config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => ModelConfig::tiny(),
    };
    cfg.validate()?;
    let checks = check_model(&cfg, a.batch.max(1), cfg.seed, FD_STEP)?;
    let mut ok = true;
    for c in &checks {
        let pass = c.passes(a.tolerance);
        ok &= pass;
        println!(
            "{} {:<28} n={:<5} max_rel_err={:.3e}",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            c.elements,
            c.max_rel_error
        );
    }
    Ok(ok)
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let s = Settings::resolve(&a.run, None, None)?;
    if a.patch_sweep.is_empty() {
        return Err(Error::config("patch sweep is empty"));
    }
    for &p in &a.patch_sweep {
        Settings { patch: p, ..s.clone() }.model_config(3, 2).validate()?;
    }
    let cube = run_cube(&a.run, &s)?;
    let base = s.model_config(cube.bands, cube.num_classes);
    let rows = patch_sweep(&cube, &base, &s.train, &a.patch_sweep)?;
    fs::write(&a.out_csv, sweep_csv(&rows))?;
    if let Some(path) = &a.out_profile {
        let profiles = a
            .patch_sweep
            .iter()
            .map(|&p| {
                let mut cfg = base.clone();
                cfg.block.spatial_dim = p;
                count_actual(&cfg, 1)
            })
            .collect::<Result<Vec<_>>>()?;
        fs::write(path, serde_json::to_vec_pretty(&profiles)?)?;
    }
    print!("{}", sweep_csv(&rows));
    Ok(())
}

fn cmd_sweep_ablation(a: &SweepArgs) -> Result<()> {
    let s = Settings::resolve(&a.run, a.patch, None)?;
    let cube = run_cube(&a.run, &s)?;
    let base = s.model_config(cube.bands, cube.num_classes);
    let rows = ablation_sweep(&cube, &base, &s.train)?;
    let csv = ablation_csv(&rows);
    fs::write(&a.out_csv, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Diverged { .. } | Error::NonFinite { .. } => EXIT_DIVERGED,
        _ => EXIT_VALIDATION,
    }
}

pub fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
        Command::SweepAblation(a) => cmd_sweep_ablation(a).map(|_| true),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_VALIDATION,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

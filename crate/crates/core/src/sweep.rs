//! Patch-size and component-ablation sweeps with their CSV tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{HsiCube, PatchSet, SplitTag};
use crate::efficiency::{time_median, MEASURED_RUNS, WARMUP_RUNS};
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};
use crate::train::{evaluate, train, TrainConfig};

pub const PATCH_SWEEP: [usize; 8] = [1, 3, 5, 7, 9, 11, 13, 15];
pub const SWEEP_HEADER: &str = "patch,OA,memory_mb,train_s,test_s";
pub const ABLATION_HEADER: &str = "method,input,forward,backward,spatial,OA,AA,kappa";
pub const ABLATION_INPUT: &str = "[Batch, Channel, Height, Width]";

const CHECK: &str = "✓";
const CROSS: &str = "×";

/// Train and test patch sets from the cube's split plane.
pub fn split_patch_sets(cube: &HsiCube, p: usize) -> Result<(PatchSet, PatchSet)> {
    let train = cube.split_coords(SplitTag::Train);
    let test = cube.split_coords(SplitTag::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::config("cube needs a split plane with train and test pixels"));
    }
    Ok((
        PatchSet::from_coords(cube, &train, p)?,
        PatchSet::from_coords(cube, &test, p)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub patch: usize,
    pub oa: f64,
    pub memory_mb: f64,
    pub train_s: f64,
    /// Median over measured evaluation passes of the whole test set.
    pub test_s: f64,
}

/// Trains one model per patch size; everything else is taken from `base`.
pub fn patch_sweep(
    cube: &HsiCube,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    patches: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(patches.len());
    for &p in patches {
        let mut cfg = base.clone();
        cfg.block.spatial_dim = p;
        cfg.validate()?;
        let (tr, te) = split_patch_sets(cube, p)?;
        let (params, report) = train::<f32>(&cfg, &tr, &te, train_cfg)?;
        let timing = time_median(WARMUP_RUNS, MEASURED_RUNS, || {
            evaluate(&params, &cfg, &te).map(drop)
        })?;
        rows.push(SweepRow {
            patch: p,
            oa: report.oa,
            memory_mb: report.peak_memory_mb,
            train_s: report.train_seconds,
            test_s: timing.median_seconds,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.4},{:.2},{:.3},{:.4}",
            r.patch, r.oa, r.memory_mb, r.train_s, r.test_s
        );
    }
    s
}

/// Checks header, one row per expected patch size in order, and numeric cells.
pub fn validate_sweep_csv(text: &str, patches: &[usize]) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(Error::format("sweep CSV header mismatch"));
    }
    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::format(format!("sweep row has {} cells: {line}", cells.len())));
        }
        let num = |i: usize| -> Result<f64> {
            let v: f64 = cells[i]
                .parse()
                .map_err(|_| Error::format(format!("bad number '{}'", cells[i])))?;
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(Error::format(format!("out of range value '{}'", cells[i])))
            }
        };
        let patch = cells[0]
            .parse()
            .map_err(|_| Error::format(format!("bad patch '{}'", cells[0])))?;
        let row = SweepRow {
            patch,
            oa: num(1)?,
            memory_mb: num(2)?,
            train_s: num(3)?,
            test_s: num(4)?,
        };
        if row.oa > 1.0 {
            return Err(Error::format("OA above 1"));
        }
        rows.push(row);
    }
    let got: Vec<usize> = rows.iter().map(|r| r.patch).collect();
    if got != patches {
        return Err(Error::format(format!("sweep patches {got:?}, expected {patches:?}")));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub ablation: Ablation,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

/// One training run per row of [`Ablation::TABLE`].
pub fn ablation_sweep(
    cube: &HsiCube,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let (tr, te) = split_patch_sets(cube, base.block.spatial_dim)?;
    Ablation::TABLE
        .iter()
        .enumerate()
        .map(|(i, &ablation)| {
            let cfg = ModelConfig {
                ablation,
                ..base.clone()
            };
            let (_, report) = train::<f32>(&cfg, &tr, &te, train_cfg)?;
            Ok(AblationRow {
                method: format!("FullHSIMamba{}", i + 1),
                ablation,
                oa: report.oa,
                aa: report.aa,
                kappa: report.kappa,
            })
        })
        .collect()
}

fn mark(on: bool) -> &'static str {
    if on {
        CHECK
    } else {
        CROSS
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},\"{ABLATION_INPUT}\",{},{},{},{:.4},{:.4},{:.4}",
            r.method,
            mark(r.ablation.forward),
            mark(r.ablation.backward),
            mark(r.ablation.spatial),
            r.oa,
            r.aa,
            r.kappa
        );
    }
    s
}

/// Checks the five-row mark grid and metric ranges.
pub fn validate_ablation_csv(text: &str) -> Result<Vec<AblationRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(ABLATION_HEADER) {
        return Err(Error::format("ablation CSV header mismatch"));
    }
    let quoted = format!(",\"{ABLATION_INPUT}\",");
    let mut rows = Vec::new();
    for line in lines {
        let Some((method, rest)) = line.split_once(&quoted) else {
            return Err(Error::format(format!("ablation row lacks input column: {line}")));
        };
        let cells: Vec<&str> = rest.split(',').collect();
        if cells.len() != 6 {
            return Err(Error::format(format!("ablation row has wrong width: {line}")));
        }
        let flag = |c: &str| match c {
            CHECK => Ok(true),
            CROSS => Ok(false),
            other => Err(Error::format(format!("bad mark '{other}'"))),
        };
        let metric = |c: &str| -> Result<f64> {
            let v: f64 = c.parse().map_err(|_| Error::format(format!("bad number '{c}'")))?;
            if (-1.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::format(format!("metric out of range '{c}'")))
            }
        };
        rows.push(AblationRow {
            method: method.to_string(),
            ablation: Ablation::new(flag(cells[0])?, flag(cells[1])?, flag(cells[2])?),
            oa: metric(cells[3])?,
            aa: metric(cells[4])?,
            kappa: metric(cells[5])?,
        });
    }
    if rows.len() != Ablation::TABLE.len() {
        return Err(Error::format(format!("{} ablation rows, expected 5", rows.len())));
    }
    for (i, (row, expected)) in rows.iter().zip(Ablation::TABLE).enumerate() {
        if row.method != format!("FullHSIMamba{}", i + 1) || row.ablation != expected {
            return Err(Error::format(format!("ablation row {} does not match the grid", i + 1)));
        }
    }
    Ok(rows)
}

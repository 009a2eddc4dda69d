//! Stratified train/test splits and their JSON manifest.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::cube::{HsiCube, SplitTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    /// 1-based class label as stored in the cube.
    pub class: usize,
    pub train_count: usize,
    pub test_count: usize,
    /// `[row, col]` pairs.
    pub train: Vec<[usize; 2]>,
    pub test: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub classes: Vec<ClassSplit>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.classes {
            if c.train.len() != c.train_count || c.test.len() != c.test_count {
                return Err(Error::format(format!(
                    "class {} counts do not match coordinate lists",
                    c.class
                )));
            }
            for px in c.train.iter().chain(&c.test) {
                if !seen.insert(*px) {
                    return Err(Error::format(format!("pixel {px:?} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn train_coords(&self) -> Vec<(usize, usize)> {
        self.classes
            .iter()
            .flat_map(|c| c.train.iter().map(|p| (p[0], p[1])))
            .collect()
    }

    pub fn test_coords(&self) -> Vec<(usize, usize)> {
        self.classes
            .iter()
            .flat_map(|c| c.test.iter().map(|p| (p[0], p[1])))
            .collect()
    }

    /// Writes the split into the cube's split plane.
    pub fn apply(&self, cube: &mut HsiCube) -> Result<()> {
        self.validate()?;
        let mut plane = vec![SplitTag::None; cube.pixels()];
        for c in &self.classes {
            for (list, tag) in [(&c.train, SplitTag::Train), (&c.test, SplitTag::Test)] {
                for &[r, col] in list {
                    if r >= cube.height || col >= cube.width {
                        return Err(Error::format(format!("pixel ({r}, {col}) outside scene")));
                    }
                    if cube.label(r, col) as usize != c.class {
                        return Err(Error::format(format!(
                            "pixel ({r}, {col}) is not labeled {}",
                            c.class
                        )));
                    }
                    plane[cube.index(r, col)] = tag;
                }
            }
        }
        cube.split = Some(plane);
        Ok(())
    }

    /// Reads the split already stored in a cube.
    pub fn from_cube(cube: &HsiCube) -> Result<Self> {
        let plane = cube
            .split
            .as_ref()
            .ok_or_else(|| Error::format("cube has no split plane"))?;
        let mut classes: Vec<ClassSplit> = (1..=cube.num_classes)
            .map(|class| ClassSplit {
                class,
                train_count: 0,
                test_count: 0,
                train: Vec::new(),
                test: Vec::new(),
            })
            .collect();
        for (i, &tag) in plane.iter().enumerate() {
            let (r, c) = (i / cube.width, i % cube.width);
            let label = cube.labels[i];
            let entry = match tag {
                SplitTag::None => continue,
                _ if label < 1 => return Err(Error::format("unlabeled pixel in split")),
                _ => &mut classes[label as usize - 1],
            };
            if tag == SplitTag::Train {
                entry.train.push([r, c]);
                entry.train_count += 1;
            } else {
                entry.test.push([r, c]);
                entry.test_count += 1;
            }
        }
        Ok(Self { seed: 0, classes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Draws `train_counts[k]` training pixels from class `k + 1`; the rest of
/// that class becomes test. Deterministic in `seed`.
pub fn build_split(cube: &HsiCube, train_counts: &[usize], seed: u64) -> Result<SplitManifest> {
    if train_counts.len() != cube.num_classes {
        return Err(Error::config(format!(
            "{} train counts for {} classes",
            train_counts.len(),
            cube.num_classes
        )));
    }
    let mut by_class: Vec<Vec<[usize; 2]>> = vec![Vec::new(); cube.num_classes];
    for r in 0..cube.height {
        for c in 0..cube.width {
            let l = cube.label(r, c);
            if l > 0 {
                by_class[l as usize - 1].push([r, c]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = Vec::with_capacity(cube.num_classes);
    for (k, (mut pixels, &want)) in by_class.into_iter().zip(train_counts).enumerate() {
        if want > pixels.len() {
            return Err(Error::config(format!(
                "class {} has {} labeled pixels, {want} requested for training",
                k + 1,
                pixels.len()
            )));
        }
        pixels.shuffle(&mut rng);
        let test = pixels.split_off(want);
        classes.push(ClassSplit {
            class: k + 1,
            train_count: pixels.len(),
            test_count: test.len(),
            train: pixels,
            test,
        });
    }
    Ok(SplitManifest { seed, classes })
}

use crate::data::cube::HsiCube;
use crate::error::{Error, Result};

/// A `p × p × CH` window around a labeled pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub bands: usize,
    /// `[p, p, CH]` row-major.
    pub values: Vec<f32>,
    /// 0-based class index.
    pub label: usize,
    pub row: usize,
    pub col: usize,
}

impl Patch {
    pub fn spectrum(&self, i: usize, j: usize) -> &[f32] {
        let start = (i * self.size + j) * self.bands;
        &self.values[start..start + self.bands]
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 → 1`, `n → n - 2`); folds repeatedly for far-out indices.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Raw `[p, p, CH]` window centered on `(row, col)`, mirror-padded at the
/// borders. The center label is not checked.
pub fn extract_window(cube: &HsiCube, row: usize, col: usize, p: usize) -> Result<Vec<f32>> {
    if p == 0 || p.is_multiple_of(2) {
        return Err(Error::config(format!("patch size must be odd, got {p}")));
    }
    if row >= cube.height || col >= cube.width {
        return Err(Error::config(format!(
            "pixel ({row}, {col}) outside {}×{} scene",
            cube.height, cube.width
        )));
    }
    let half = (p / 2) as isize;
    let mut out = Vec::with_capacity(p * p * cube.bands);
    for di in -half..=half {
        let r = reflect_index(row as isize + di, cube.height);
        for dj in -half..=half {
            let c = reflect_index(col as isize + dj, cube.width);
            out.extend_from_slice(cube.spectrum(r, c));
        }
    }
    Ok(out)
}

/// Window plus the 0-based label of its center pixel.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, p: usize) -> Result<Patch> {
    let values = extract_window(cube, row, col, p)?;
    let label = cube.label(row, col);
    if label < 1 {
        return Err(Error::config(format!("pixel ({row}, {col}) is unlabeled")));
    }
    Ok(Patch {
        size: p,
        bands: cube.bands,
        values,
        label: label as usize - 1,
        row,
        col,
    })
}

//! Seeded synthetic scenes: smooth class spectra on a Voronoi partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::cube::HsiCube;
use crate::error::{Error, Result};

pub const MAX_CLASSES: usize = 16;
const KNOTS: usize = 6;
const SITES_PER_CLASS: usize = 3;

/// Catmull-Rom interpolation of `knots` sampled at `n` evenly spaced points.
fn spline(knots: &[f64], n: usize) -> Vec<f64> {
    let k = knots.len();
    let at = |i: isize| knots[i.clamp(0, k as isize - 1) as usize];
    (0..n)
        .map(|b| {
            let t = if n == 1 {
                0.0
            } else {
                b as f64 * (k - 1) as f64 / (n - 1) as f64
            };
            let seg = (t.floor() as isize).min(k as isize - 2);
            let u = t - seg as f64;
            let (p0, p1, p2, p3) = (at(seg - 1), at(seg), at(seg + 1), at(seg + 2));
            0.5 * (2.0 * p1
                + (p2 - p0) * u
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
                + (3.0 * p1 - p0 - 3.0 * p2 + p3) * u * u * u)
        })
        .collect()
}

/// One smooth spectrum per class, `[K][CH]`, deterministic in `seed`.
pub fn synthetic_endmembers(bands: usize, classes: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..classes)
        .map(|_| {
            let knots: Vec<f64> = (0..KNOTS).map(|_| rng.random_range(0.1..0.9)).collect();
            spline(&knots, bands).into_iter().map(|v| v as f32).collect()
        })
        .collect()
}

/// Scene of `height × width` pixels whose class regions come from a seeded
/// Voronoi partition. Each pixel's spectrum is its class endmember plus
/// Gaussian noise of standard deviation `noise_sigma`. Every pixel is labeled.
pub fn gen_synthetic(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<HsiCube> {
    if classes == 0 || classes > MAX_CLASSES {
        return Err(Error::config(format!(
            "class count must be in 1..={MAX_CLASSES}, got {classes}"
        )));
    }
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::config("scene dimensions must be positive"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::config(format!("invalid noise sigma {noise_sigma}")));
    }
    let endmembers = synthetic_endmembers(bands, classes, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let sites: Vec<(f64, f64, usize)> = (0..classes * SITES_PER_CLASS)
        .map(|s| {
            (
                rng.random_range(0.0..height as f64),
                rng.random_range(0.0..width as f64),
                s % classes,
            )
        })
        .collect();
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config(e.to_string()))?;

    let mut values = Vec::with_capacity(height * width * bands);
    let mut labels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for &(sy, sx, class) in &sites {
                let d = (sy - y).powi(2) + (sx - x).powi(2);
                if d < best.0 {
                    best = (d, class);
                }
            }
            let class = best.1;
            labels.push(class as i16 + 1);
            if noise_sigma == 0.0 {
                values.extend_from_slice(&endmembers[class]);
            } else {
                values.extend(
                    endmembers[class]
                        .iter()
                        .map(|&v| (v as f64 + noise.sample(&mut rng)) as f32),
                );
            }
        }
    }
    HsiCube::new(height, width, bands, classes, values, labels)
}

//! Procedural stand-in for the two image datasets: nine classes of oriented
//! sinusoidal gratings rendered from the same continuous pattern at any
//! resolution, so a low- and a high-resolution "device generation" share
//! class semantics but need different input layers.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{Dataset, Pixels};
use crate::error::{Error, Result};
use crate::registry::NUM_CLASSES;
use crate::rng;

pub const RESOLUTIONS: [usize; 2] = [16, 32];

/// Difficulty knobs for the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingStyle {
    /// Standard deviation of the per-sample orientation jitter, radians.
    pub orientation_jitter: f64,
    /// Relative standard deviation of the per-sample frequency jitter.
    pub frequency_jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub pixel_noise: f64,
    /// Contrast is drawn uniformly from `[min_contrast, 1]`.
    pub min_contrast: f64,
}

impl Default for GratingStyle {
    fn default() -> Self {
        Self {
            orientation_jitter: 0.10,
            frequency_jitter: 0.10,
            pixel_noise: 0.25,
            min_contrast: 0.4,
        }
    }
}

/// Class orientation: classes are spaced evenly over half a turn.
pub fn class_orientation(class: usize) -> f64 {
    class as f64 * PI / NUM_CLASSES as f64
}

/// Class frequency in cycles per image side, permuted so neighbouring
/// orientations do not also share a frequency ordering.
pub fn class_frequency(class: usize) -> f64 {
    2.0 + 2.0 * ((class * 4) % NUM_CLASSES) as f64 / (NUM_CLASSES - 1) as f64
}

pub fn generate_synthetic(resolution: usize, n_per_class: usize, seed: u64) -> Result<Dataset> {
    generate_synthetic_with(resolution, n_per_class, seed, GratingStyle::default())
}

pub fn generate_synthetic_with(resolution: usize, n_per_class: usize, seed: u64, style: GratingStyle) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Data("synthetic dataset needs at least one sample per class".into()));
    }
    if resolution < 4 {
        return Err(Error::Data(format!("resolution {resolution} too small")));
    }
    let n = n_per_class * NUM_CLASSES;
    let plane = resolution * resolution;
    let mut pixels = Vec::with_capacity(n * plane);
    let mut labels = Vec::with_capacity(n);
    let step = 1.0 / resolution as f64;
    for i in 0..n {
        let class = i % NUM_CLASSES;
        let mut rng = rng::stream(seed, &[rng::TAG_DATA, resolution as u64, i as u64]);
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let theta = class_orientation(class) + style.orientation_jitter * normal(&mut rng);
        let freq = class_frequency(class) * (1.0 + style.frequency_jitter * normal(&mut rng));
        let phase = rng.random_range(0.0..2.0 * PI);
        let contrast = rng.random_range(style.min_contrast..=1.0);
        let (c, s) = (theta.cos(), theta.sin());
        for y in 0..resolution {
            let v = (y as f64 + 0.5) * step;
            for x in 0..resolution {
                let u = (x as f64 + 0.5) * step;
                let wave = (2.0 * PI * freq * (u * c + v * s) + phase).sin();
                let value = 0.5 + 0.5 * contrast * wave + style.pixel_noise * normal(&mut rng);
                pixels.push(value.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::new(
        Pixels::Real(pixels),
        vec![1, resolution, resolution],
        labels,
        (0..NUM_CLASSES).map(|c| format!("grating_{c}")).collect(),
    )
}

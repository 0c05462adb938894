use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng;

/// The nine classes shared by CIFAR-10 and STL-10, in canonical order.
pub const CANONICAL_CLASSES: [&str; 9] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "horse",
    "ship",
    "truck",
];

/// Pixel storage. Raw bytes keep the large image datasets at one byte per
/// channel value; they are scaled into `[0, 1]` when a batch is materialised.
#[derive(Debug, Clone, PartialEq)]
pub enum Pixels {
    Bytes(Vec<u8>),
    Real(Vec<f64>),
}

impl Pixels {
    fn len(&self) -> usize {
        match self {
            Pixels::Bytes(b) => b.len(),
            Pixels::Real(r) => r.len(),
        }
    }

    fn extend_sample(&self, i: usize, width: usize, out: &mut Vec<f64>) {
        match self {
            Pixels::Bytes(b) => out.extend(b[i * width..(i + 1) * width].iter().map(|&v| f64::from(v) / 255.0)),
            Pixels::Real(r) => out.extend_from_slice(&r[i * width..(i + 1) * width]),
        }
    }

    fn gather(&self, idx: &[usize], width: usize) -> Pixels {
        match self {
            Pixels::Bytes(b) => {
                let mut out = Vec::with_capacity(idx.len() * width);
                for &i in idx {
                    out.extend_from_slice(&b[i * width..(i + 1) * width]);
                }
                Pixels::Bytes(out)
            }
            Pixels::Real(r) => {
                let mut out = Vec::with_capacity(idx.len() * width);
                for &i in idx {
                    out.extend_from_slice(&r[i * width..(i + 1) * width]);
                }
                Pixels::Real(out)
            }
        }
    }
}

/// Labelled images `(N, C, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Pixels,
    sample_shape: Vec<usize>,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(pixels: Pixels, sample_shape: Vec<usize>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        if labels.is_empty() {
            return Err(Error::Data("dataset has no samples".into()));
        }
        if width == 0 || pixels.len() != width * labels.len() {
            return Err(Error::Data(format!(
                "{} pixel values for {} samples of shape {sample_shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!("label {bad} outside {} classes", class_names.len())));
        }
        if let Pixels::Real(r) = &pixels {
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data("pixel value outside [0, 1]".into()));
            }
        }
        Ok(Self {
            pixels,
            sample_shape,
            labels,
            class_names,
        })
    }

    pub fn canonical_class_names() -> Vec<String> {
        CANONICAL_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    fn width(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Materialises the samples at `idx` as an `(n, C, H, W)` tensor.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let width = self.width();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            self.pixels.extend_sample(i, width, &mut data);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// All images as one tensor.
    pub fn images(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx).0
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!("sample index {bad} out of {}", self.len())));
        }
        Dataset::new(
            self.pixels.gather(idx, self.width()),
            self.sample_shape.clone(),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.class_names.clone(),
        )
    }

    /// Sample indices grouped by label, each list ascending.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.class_names.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }
}

/// Class-balanced subsample of exactly `total` samples, split per class into
/// train and test so both sides stay balanced.
pub fn even_and_split(ds: &Dataset, total: usize, train_ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let classes = ds.class_names().len();
    if total == 0 || total % classes != 0 {
        return Err(Error::Data(format!("total {total} is not a positive multiple of {classes} classes")));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Data(format!("train ratio {train_ratio} outside (0, 1)")));
    }
    let per_class = total / classes;
    let train_per_class = (per_class as f64 * train_ratio).round() as usize;
    if train_per_class == 0 || train_per_class == per_class {
        return Err(Error::Data(format!(
            "{per_class} samples per class cannot be split {train_ratio} into nonempty train and test"
        )));
    }
    let mut train = Vec::with_capacity(train_per_class * classes);
    let mut test = Vec::with_capacity((per_class - train_per_class) * classes);
    for (class, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        if idx.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} ({}) has {} samples, {per_class} needed",
                ds.class_names()[class],
                idx.len()
            )));
        }
        idx.shuffle(&mut rng::stream(seed, &[rng::TAG_SPLIT, class as u64]));
        idx.truncate(per_class);
        train.extend_from_slice(&idx[..train_per_class]);
        test.extend_from_slice(&idx[train_per_class..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Labels only; one 1x1x1 pixel per sample.
    fn label_only(per_class: usize) -> Dataset {
        let labels: Vec<usize> = (0..per_class * 9).map(|i| i % 9).collect();
        Dataset::new(
            Pixels::Bytes(vec![0; labels.len()]),
            vec![1, 1, 1],
            labels,
            Dataset::canonical_class_names(),
        )
        .unwrap()
    }

    #[test]
    fn evening_matches_published_split_sizes() {
        let ds = label_only(1300);
        let (train, test) = even_and_split(&ds, 11700, 0.75, 0).unwrap();
        assert_eq!(train.len(), 8775);
        assert_eq!(test.len(), 2925);
        assert!(train.class_counts().values().all(|&c| c == 975));
        assert!(test.class_counts().values().all(|&c| c == 325));
    }

    #[test]
    fn evening_rejects_short_classes() {
        let ds = label_only(10);
        assert!(matches!(even_and_split(&ds, 99, 0.75, 0), Err(Error::Data(_))));
        assert!(matches!(even_and_split(&ds, 100, 0.75, 0), Err(Error::Data(_))));
    }

    #[test]
    fn train_and_test_are_disjoint() {
        // Encode the source index into the pixel so provenance survives subsetting.
        let n = 9 * 20;
        let labels: Vec<usize> = (0..n).map(|i| i % 9).collect();
        let pixels: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let ds = Dataset::new(Pixels::Real(pixels), vec![1, 1, 1], labels, Dataset::canonical_class_names()).unwrap();
        let (train, test) = even_and_split(&ds, 9 * 12, 0.75, 5).unwrap();
        let a: std::collections::HashSet<u64> = train.images().data().iter().map(|v| v.to_bits()).collect();
        let b: std::collections::HashSet<u64> = test.images().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a.len(), 81);
        assert_eq!(b.len(), 27);
        assert!(a.is_disjoint(&b));
    }
}

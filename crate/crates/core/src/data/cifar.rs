//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the red, green and blue 32x32 planes in row-major order.

use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Pixels};
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 3073;
pub const IMAGE_LEN: usize = 3072;
pub const BATCH_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

/// CIFAR label to canonical class; `frog` (6) has no counterpart.
pub fn canonical_label(cifar_label: u8) -> Option<usize> {
    match cifar_label {
        0..=5 => Some(cifar_label as usize),
        6 => None,
        7..=9 => Some(cifar_label as usize - 1),
        _ => None,
    }
}

/// Splits a batch file into `(label, pixel bytes)` records.
pub fn decode_records<'a>(bytes: &'a [u8], path: &Path) -> Result<Vec<(u8, &'a [u8])>> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % RECORD_LEN) as u64,
            detail: format!("truncated record: file length {} is not a multiple of {RECORD_LEN}", bytes.len()),
        });
    }
    bytes
        .chunks_exact(RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] > 9 {
                Err(Error::Ingestion {
                    path: path.to_path_buf(),
                    offset: (i * RECORD_LEN) as u64,
                    detail: format!("label byte {} outside 0..=9", rec[0]),
                })
            } else {
                Ok((rec[0], &rec[1..]))
            }
        })
        .collect()
}

/// Inverse of decoding one record from `[0, 1]` pixels.
pub fn encode_record(label: u8, pixels: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RECORD_LEN);
    out.push(label);
    out.extend(pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

fn resolve_dir(path: &Path) -> PathBuf {
    let nested = path.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Loads all six batches, drops `frog` and remaps to the canonical classes.
pub fn load_cifar10(path: &Path) -> Result<Dataset> {
    let dir = resolve_dir(path);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in BATCH_FILES {
        let file = dir.join(name);
        let bytes = std::fs::read(&file).map_err(|e| Error::Ingestion {
            path: file.clone(),
            offset: 0,
            detail: e.to_string(),
        })?;
        for (label, image) in decode_records(&bytes, &file)? {
            if let Some(c) = canonical_label(label) {
                labels.push(c);
                pixels.extend_from_slice(image);
            }
        }
    }
    Dataset::new(Pixels::Bytes(pixels), vec![3, 32, 32], labels, Dataset::canonical_class_names())
}

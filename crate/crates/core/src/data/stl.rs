//! STL-10 binary files. Each image is 3 x 96 x 96 bytes, every channel plane
//! stored column-major; labels are one byte per image, numbered from 1.

use std::path::{Path, PathBuf};

use super::dataset::{Dataset, Pixels};
use crate::error::{Error, Result};

pub const SIDE: usize = 96;
pub const IMAGE_LEN: usize = SIDE * SIDE * 3;
pub const SPLITS: [(&str, &str); 2] = [("train_X.bin", "train_y.bin"), ("test_X.bin", "test_y.bin")];

/// Zero-indexed STL label to canonical class; `monkey` (7) has no counterpart.
pub fn canonical_label(stl_label: usize) -> Option<usize> {
    // airplane bird car cat deer dog horse monkey ship truck
    const MAP: [Option<usize>; 10] = [
        Some(0),
        Some(2),
        Some(1),
        Some(3),
        Some(4),
        Some(5),
        Some(6),
        None,
        Some(7),
        Some(8),
    ];
    MAP.get(stl_label).copied().flatten()
}

/// Column-major channel planes to row-major.
pub fn transpose_image(src: &[u8], dst: &mut Vec<u8>) {
    for plane in src.chunks_exact(SIDE * SIDE) {
        for y in 0..SIDE {
            for x in 0..SIDE {
                dst.push(plane[x * SIDE + y]);
            }
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        offset: 0,
        detail: e.to_string(),
    })
}

/// Decodes one images/labels pair, appending canonical samples.
pub fn decode_split(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
    pixels: &mut Vec<u8>,
    out_labels: &mut Vec<usize>,
) -> Result<()> {
    if images.len() % IMAGE_LEN != 0 {
        return Err(Error::Ingestion {
            path: images_path.to_path_buf(),
            offset: (images.len() - images.len() % IMAGE_LEN) as u64,
            detail: format!("truncated image: length {} is not a multiple of {IMAGE_LEN}", images.len()),
        });
    }
    let count = images.len() / IMAGE_LEN;
    if count != labels.len() {
        return Err(Error::Ingestion {
            path: labels_path.to_path_buf(),
            offset: labels.len().min(count) as u64,
            detail: format!("{count} images but {} labels", labels.len()),
        });
    }
    for (i, (img, &raw)) in images.chunks_exact(IMAGE_LEN).zip(labels).enumerate() {
        if !(1..=10).contains(&raw) {
            return Err(Error::Ingestion {
                path: labels_path.to_path_buf(),
                offset: i as u64,
                detail: format!("label {raw} outside 1..=10"),
            });
        }
        if let Some(c) = canonical_label(raw as usize - 1) {
            transpose_image(img, pixels);
            out_labels.push(c);
        }
    }
    Ok(())
}

fn resolve_dir(path: &Path) -> PathBuf {
    let nested = path.join("stl10_binary");
    if nested.is_dir() {
        nested
    } else {
        path.to_path_buf()
    }
}

/// Loads the labelled train and test splits, drops `monkey` and remaps to the
/// canonical classes.
pub fn load_stl10(path: &Path) -> Result<Dataset> {
    let dir = resolve_dir(path);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (x_name, y_name) in SPLITS {
        let (xp, yp) = (dir.join(x_name), dir.join(y_name));
        let (x, y) = (read(&xp)?, read(&yp)?);
        decode_split(&x, &y, &xp, &yp, &mut pixels, &mut labels)?;
    }
    Dataset::new(
        Pixels::Bytes(pixels),
        vec![3, SIDE, SIDE],
        labels,
        Dataset::canonical_class_names(),
    )
}

//! IDX-format reader for MNIST-style image and label files.
//!
//! Sizes in the headers are big-endian. Declared dimensions are checked
//! against the actual file length before any pixel buffer is allocated.

use std::fs;
use std::path::Path;

use efeval_core::{Dataset, LabeledExample};

use crate::error::{AppError, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(path: &Path, bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| AppError::format(path, format!("truncated header at offset {at}")))
}

/// Reads paired IDX image and label files into a dataset with pixels scaled
/// to [0, 1]. The class count is taken as the highest label plus one.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = fs::read(images_path).map_err(|e| AppError::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| AppError::io(labels_path, e))?;

    let magic = be_u32(images_path, &img_bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(AppError::format(
            images_path,
            format!("bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(images_path, &img_bytes, 4)? as usize;
    let rows = be_u32(images_path, &img_bytes, 8)? as usize;
    let cols = be_u32(images_path, &img_bytes, 12)? as usize;
    let pixels = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| {
            AppError::format(images_path, "declared image dimensions overflow".to_string())
        })?;
    if img_bytes.len() != 16 + pixels {
        return Err(AppError::format(
            images_path,
            format!(
                "expected {} pixel bytes for {count} images of {rows}x{cols}, found {}",
                pixels,
                img_bytes.len() - 16.min(img_bytes.len())
            ),
        ));
    }

    let magic = be_u32(labels_path, &lbl_bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(AppError::format(
            labels_path,
            format!("bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let lbl_count = be_u32(labels_path, &lbl_bytes, 4)? as usize;
    if lbl_bytes.len() != 8 + lbl_count {
        return Err(AppError::format(
            labels_path,
            format!(
                "expected {lbl_count} label bytes, found {}",
                lbl_bytes.len() - 8.min(lbl_bytes.len())
            ),
        ));
    }
    if lbl_count != count {
        return Err(AppError::format(
            labels_path,
            format!("{lbl_count} labels for {count} images"),
        ));
    }

    let dim = rows * cols;
    let mut examples = Vec::with_capacity(count);
    let mut max_label = 0usize;
    for i in 0..count {
        let start = 16 + i * dim;
        let features: Vec<f64> = img_bytes[start..start + dim]
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .collect();
        let label = lbl_bytes[8 + i] as usize;
        max_label = max_label.max(label);
        examples.push(LabeledExample {
            id: i as u64,
            features,
            label,
        });
    }
    let class_count = (max_label + 1).max(2);
    Dataset::new(examples, class_count).map_err(AppError::Core)
}

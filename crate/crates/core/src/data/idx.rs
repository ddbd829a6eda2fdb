//! IDX image/label files: big-endian magic and dimensions, u8 payload.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::tensor::Tensor32;

const IMAGES_MAGIC: u32 = 0x0000_0803; // rank-3 unsigned bytes
const LABELS_MAGIC: u32 = 0x0000_0801; // rank-1 unsigned bytes

fn read_u32_be(r: &mut impl Read, offset: &mut usize) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| {
        Error::Format(format!("truncated header at byte offset {}", *offset))
    })?;
    *offset += 4;
    Ok(u32::from_be_bytes(buf))
}

/// Reads a rank-3 u8 image file; returns (pixels, n, rows, cols).
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut offset = 0usize;
    let magic = read_u32_be(&mut file, &mut offset)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(&mut file, &mut offset)? as usize;
    let rows = read_u32_be(&mut file, &mut offset)? as usize;
    let cols = read_u32_be(&mut file, &mut offset)? as usize;
    let expect = n * rows * cols;
    let mut pixels = Vec::with_capacity(expect);
    file.read_to_end(&mut pixels)?;
    if pixels.len() != expect {
        return Err(Error::Format(format!(
            "image payload has {} bytes, expected {expect} (truncation at byte offset {})",
            pixels.len(),
            offset + pixels.len()
        )));
    }
    Ok((pixels, n, rows, cols))
}

/// Reads a rank-1 u8 label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut offset = 0usize;
    let magic = read_u32_be(&mut file, &mut offset)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(&mut file, &mut offset)? as usize;
    let mut labels = Vec::with_capacity(n);
    file.read_to_end(&mut labels)?;
    if labels.len() != n {
        return Err(Error::Format(format!(
            "label payload has {} bytes, expected {n} (truncation at byte offset {})",
            labels.len(),
            offset + labels.len()
        )));
    }
    Ok(labels)
}

pub fn write_idx_images(path: &Path, pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::Dimension(format!(
            "pixel buffer has {} bytes for {n}x{rows}x{cols}",
            pixels.len()
        )));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    file.write_all(&(n as u32).to_be_bytes())?;
    file.write_all(&(rows as u32).to_be_bytes())?;
    file.write_all(&(cols as u32).to_be_bytes())?;
    file.write_all(pixels)?;
    file.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&LABELS_MAGIC.to_be_bytes())?;
    file.write_all(&(labels.len() as u32).to_be_bytes())?;
    file.write_all(labels)?;
    file.flush()?;
    Ok(())
}

/// Loads an image/label IDX pair into a dataset. Pixels are scaled to
/// `[0, 1]` (byte 255 becomes 1.0); label bytes are 0-based and become
/// 1-based classes. Inputs get an explicit channel axis: `(n, 1, rows, cols)`.
pub fn load_idx_dataset(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (pixels, n, rows, cols) = read_idx_images(images)?;
    let raw_labels = read_idx_labels(labels)?;
    if raw_labels.len() != n {
        return Err(Error::Format(format!(
            "{n} images but {} labels",
            raw_labels.len()
        )));
    }
    let class_count = raw_labels.iter().copied().max().map(|m| m as usize + 1).unwrap_or(0);
    if class_count < 2 {
        return Err(Error::Format(format!(
            "label file spans {class_count} classes; need at least 2"
        )));
    }
    let data: Vec<f32> = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let inputs = Tensor32::new(vec![n, 1, rows, cols], data)?;
    let class_labels = raw_labels
        .iter()
        .map(|&b| ClassLabel::new(b as usize + 1, class_count))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(inputs, class_labels, class_count, split)
}

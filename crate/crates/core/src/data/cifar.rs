//! CIFAR-10 binary batches: 3073-byte records (label byte + 3x32x32 pixels,
//! channel-major).

use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::tensor::Tensor32;

pub const CIFAR_RECORD_BYTES: usize = 3073;
const CIFAR_CLASSES: usize = 10;
const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Loads one or more CIFAR-10 binary batch files. Pixels are scaled to
/// `[0, 1]`; with `standardize` set, each channel is shifted and scaled to
/// zero mean / unit variance over the loaded set.
pub fn load_cifar10_binary(paths: &[&Path], standardize: bool, split: Split) -> Result<Dataset> {
    let mut data: Vec<f32> = Vec::new();
    let mut labels: Vec<ClassLabel> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path)?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::Format(format!(
                "{} has {} bytes, not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                path.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
            let label_byte = record[0] as usize;
            labels.push(ClassLabel::new(label_byte + 1, CIFAR_CLASSES).map_err(|_| {
                Error::Format(format!("label byte {label_byte} outside [0, 9]"))
            })?);
            data.extend(record[1..].iter().map(|&p| p as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::Sample("no CIFAR records found".into()));
    }
    let n = labels.len();
    if standardize {
        for ch in 0..3 {
            let mut mean = 0.0f64;
            for i in 0..n {
                let base = i * CIFAR_PIXELS + ch * 1024;
                for v in &data[base..base + 1024] {
                    mean += *v as f64;
                }
            }
            mean /= (n * 1024) as f64;
            let mut var = 0.0f64;
            for i in 0..n {
                let base = i * CIFAR_PIXELS + ch * 1024;
                for v in &data[base..base + 1024] {
                    let d = *v as f64 - mean;
                    var += d * d;
                }
            }
            var /= (n * 1024) as f64;
            let std = var.sqrt().max(1e-8);
            for i in 0..n {
                let base = i * CIFAR_PIXELS + ch * 1024;
                for v in &mut data[base..base + 1024] {
                    *v = ((*v as f64 - mean) / std) as f32;
                }
            }
        }
    }
    let inputs = Tensor32::new(vec![n, 3, 32, 32], data)?;
    Dataset::new(inputs, labels, CIFAR_CLASSES, split)
}

/// Writes records in the CIFAR-10 binary layout (for tests and fixtures).
pub fn write_cifar10_binary(path: &Path, labels: &[u8], pixels: &[u8]) -> Result<()> {
    if pixels.len() != labels.len() * CIFAR_PIXELS {
        return Err(Error::Dimension(format!(
            "{} labels need {} pixel bytes, got {}",
            labels.len(),
            labels.len() * CIFAR_PIXELS,
            pixels.len()
        )));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, &label) in labels.iter().enumerate() {
        file.write_all(&[label])?;
        file.write_all(&pixels[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS])?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_label_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let labels = [9u8, 0u8];
        let pixels: Vec<u8> = (0..2 * CIFAR_PIXELS).map(|v| (v % 251) as u8).collect();
        write_cifar10_binary(&path, &labels, &pixels).unwrap();

        let ds = load_cifar10_binary(&[&path], false, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample_shape(), &[3, 32, 32]);
        // Label byte 9 becomes 1-based class 10.
        assert_eq!(ds.labels[0].one_based(), 10);
        assert_eq!(ds.labels[1].one_based(), 1);
    }

    #[test]
    fn partial_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; CIFAR_RECORD_BYTES + 5]).unwrap();
        let err = load_cifar10_binary(&[&path], false, Split::Train).unwrap_err();
        assert!(err.to_string().contains("multiple"));
    }

    #[test]
    fn standardization_zeroes_channel_means() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let labels = [1u8, 2u8, 3u8];
        let pixels: Vec<u8> = (0..3 * CIFAR_PIXELS).map(|v| (v * 7 % 256) as u8).collect();
        write_cifar10_binary(&path, &labels, &pixels).unwrap();
        let ds = load_cifar10_binary(&[&path], true, Split::Train).unwrap();
        for ch in 0..3 {
            let mut mean = 0.0f64;
            for i in 0..3 {
                let s = ds.inputs.sample(i);
                for v in &s[ch * 1024..(ch + 1) * 1024] {
                    mean += *v as f64;
                }
            }
            mean /= 3.0 * 1024.0;
            assert!(mean.abs() < 1e-4, "channel {ch} mean {mean}");
        }
    }
}

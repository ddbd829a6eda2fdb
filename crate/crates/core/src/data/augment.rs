//! Two-view augmentation so every sample has a same-class partner in the
//! batch.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::tensor::Tensor32;

/// Augmentation policy. `None` emits two identical views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentConfig {
    None,
    /// Zero-pad by `pad` pixels, take a random crop at the original size,
    /// flip horizontally with probability one half. Requires `(c, h, w)`
    /// samples.
    Image { pad: usize },
    /// Additive Gaussian jitter for low-dimensional toy data.
    Jitter { std: f64 },
}

/// Emits two views per input, adjacent as `(2i, 2i+1)`, labels duplicated.
pub fn augment_batch(
    inputs: &Tensor32,
    labels: &[ClassLabel],
    config: AugmentConfig,
    seed: u64,
) -> Result<(Tensor32, Vec<ClassLabel>)> {
    let n = inputs.batch();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} inputs but {} labels",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = inputs.sample_len();
    let mut data = Vec::with_capacity(2 * n * sample);
    let mut out_labels = Vec::with_capacity(2 * n);
    for i in 0..n {
        for _view in 0..2 {
            match config {
                AugmentConfig::None => data.extend_from_slice(inputs.sample(i)),
                AugmentConfig::Jitter { std } => {
                    for v in inputs.sample(i) {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        data.push(v + (std * g) as f32);
                    }
                }
                AugmentConfig::Image { pad } => {
                    let shape = &inputs.shape()[1..];
                    if shape.len() != 3 {
                        return Err(Error::Dimension(format!(
                            "image augmentation needs (c, h, w) samples, got {shape:?}"
                        )));
                    }
                    let view = crop_flip(
                        inputs.sample(i),
                        shape[0],
                        shape[1],
                        shape[2],
                        pad,
                        &mut rng,
                    );
                    data.extend(view);
                }
            }
        }
        out_labels.push(labels[i]);
        out_labels.push(labels[i]);
    }
    let mut shape = vec![2 * n];
    shape.extend_from_slice(&inputs.shape()[1..]);
    Ok((Tensor32::new(shape, data)?, out_labels))
}

fn crop_flip(
    sample: &[f32],
    c: usize,
    h: usize,
    w: usize,
    pad: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f32> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let oy = rng.random_range(0..=2 * pad);
    let ox = rng.random_range(0..=2 * pad);
    let flip = rng.random_range(0..2u8) == 1;
    let mut out = vec![0.0f32; c * h * w];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                // Source coordinates in the padded frame.
                let (si, sj) = (i + oy, j + ox);
                // Padded value: zero outside the original image.
                let v = if si >= pad && si < pad + h && sj >= pad && sj < pad + w {
                    sample[ci * h * w + (si - pad) * w + (sj - pad)]
                } else {
                    0.0
                };
                let jj = if flip { w - 1 - j } else { j };
                out[ci * h * w + i * w + jj] = v;
            }
        }
    }
    debug_assert!(ph >= h && pw >= w);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(one_based: &[usize], c: usize) -> Vec<ClassLabel> {
        one_based.iter().map(|&l| ClassLabel::new(l, c).unwrap()).collect()
    }

    #[test]
    fn doubles_and_pairs_views() {
        let inputs = Tensor32::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let ls = labels(&[1, 2, 1], 2);
        let (out, out_labels) = augment_batch(&inputs, &ls, AugmentConfig::None, 0).unwrap();
        assert_eq!(out.batch(), 6);
        assert_eq!(out_labels.len(), 6);
        // Views are adjacent and identical under the no-op config.
        for i in 0..3 {
            assert_eq!(out.sample(2 * i), inputs.sample(i));
            assert_eq!(out.sample(2 * i + 1), inputs.sample(i));
            assert_eq!(out_labels[2 * i], ls[i]);
            assert_eq!(out_labels[2 * i + 1], ls[i]);
        }
    }

    #[test]
    fn every_anchor_has_a_positive() {
        let inputs = Tensor32::new(vec![4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let ls = labels(&[1, 2, 3, 4], 4);
        let (_, out_labels) = augment_batch(&inputs, &ls, AugmentConfig::None, 7).unwrap();
        for i in 0..out_labels.len() {
            assert!(out_labels
                .iter()
                .enumerate()
                .any(|(j, l)| j != i && *l == out_labels[i]));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let inputs = Tensor32::new(vec![2, 1, 4, 4], (0..32).map(|v| v as f32).collect()).unwrap();
        let ls = labels(&[1, 2], 2);
        let a = augment_batch(&inputs, &ls, AugmentConfig::Image { pad: 2 }, 3).unwrap();
        let b = augment_batch(&inputs, &ls, AugmentConfig::Image { pad: 2 }, 3).unwrap();
        assert_eq!(a.0.data(), b.0.data());
    }

    #[test]
    fn jitter_moves_points() {
        let inputs = Tensor32::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
        let ls = labels(&[1], 1);
        let (out, _) = augment_batch(&inputs, &ls, AugmentConfig::Jitter { std: 0.1 }, 11).unwrap();
        assert_ne!(out.sample(0), inputs.sample(0));
        assert_ne!(out.sample(0), out.sample(1));
    }
}

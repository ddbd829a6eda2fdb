//! Procedurally generated 28x28 digit glyphs, ten classes.
//!
//! A deterministic stand-in corpus for handwritten-digit experiments when no
//! IDX files are available: seven-segment-style templates with per-sample
//! translation, intensity scaling, occlusion, and pixel noise. Glyphs keep a
//! blank margin so label bits can be embedded in the corner.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::label::ClassLabel;
use crate::nn::derive_seed;
use crate::tensor::Tensor32;

const SIDE: usize = 28;
const BOX: usize = 20; // glyph box rendered inside the image
const THICK: usize = 3;

/// Segment layout: 0 top, 1 top-left, 2 top-right, 3 middle, 4 bottom-left,
/// 5 bottom-right, 6 bottom.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, false, true, true, true],    // 0
    [false, false, true, false, false, true, false], // 1
    [true, false, true, true, true, false, true],   // 2
    [true, false, true, true, false, true, true],   // 3
    [false, true, true, true, false, true, false],  // 4
    [true, true, false, true, false, true, true],   // 5
    [true, true, false, true, true, true, true],    // 6
    [true, false, true, false, false, true, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

fn render_template(digit: usize) -> [f32; BOX * BOX] {
    let mut img = [0.0f32; BOX * BOX];
    let seg = &SEGMENTS[digit];
    let mut hbar = |top: usize| {
        for i in top..top + THICK {
            for j in THICK..BOX - THICK {
                img[i * BOX + j] = 1.0;
            }
        }
    };
    if seg[0] {
        hbar(0);
    }
    if seg[3] {
        hbar(BOX / 2 - THICK / 2 - 1);
    }
    if seg[6] {
        hbar(BOX - THICK);
    }
    let mut vbar = |left: usize, from: usize, to: usize| {
        for i in from..to {
            for j in left..left + THICK {
                img[i * BOX + j] = 1.0;
            }
        }
    };
    let mid = BOX / 2;
    if seg[1] {
        vbar(0, 0, mid);
    }
    if seg[2] {
        vbar(BOX - THICK, 0, mid);
    }
    if seg[4] {
        vbar(0, mid, BOX);
    }
    if seg[5] {
        vbar(BOX - THICK, mid, BOX);
    }
    img
}

fn sample_glyph(digit: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let template = render_template(digit);
    let mut img = vec![0.0f32; SIDE * SIDE];
    // Placement in [2, 6] keeps the glyph inside the frame with a margin.
    let oy = 4 + rng.random_range(-2i32..=2) as i64;
    let ox = 4 + rng.random_range(-2i32..=2) as i64;
    let intensity = rng.random_range(0.7..1.0) as f32;
    for i in 0..BOX {
        for j in 0..BOX {
            let v = template[i * BOX + j];
            if v > 0.0 {
                let (y, x) = ((i as i64 + oy) as usize, (j as i64 + ox) as usize);
                img[y * SIDE + x] = v * intensity;
            }
        }
    }
    // Occlude a small patch of the glyph half the time.
    if rng.random_range(0..2u8) == 1 {
        let py = rng.random_range(0..BOX - 4) as i64 + oy;
        let px = rng.random_range(0..BOX - 4) as i64 + ox;
        for dy in 0..4usize {
            for dx in 0..4usize {
                img[(py as usize + dy) * SIDE + px as usize + dx] = 0.0;
            }
        }
    }
    // Pixel noise, clipped into range.
    for v in &mut img {
        let g: f64 = StandardNormal.sample(rng);
        *v = (*v + 0.12 * g as f32).clamp(0.0, 1.0);
    }
    img
}

fn generate(n: usize, seed: u64, split: Split) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        data.extend(sample_glyph(digit, &mut rng));
        labels.push(ClassLabel::new(digit + 1, 10)?);
    }
    let inputs = Tensor32::new(vec![n, 1, SIDE, SIDE], data)?;
    Dataset::new(inputs, labels, 10, split)
}

/// Balanced train/test glyph datasets, shaped `(n, 1, 28, 28)`.
pub fn make_glyph_digits(n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = generate(n_train, derive_seed(seed, 0xA1), Split::Train)?;
    let test = generate(n_test, derive_seed(seed, 0xB2), Split::Test)?;
    Ok((train, test))
}

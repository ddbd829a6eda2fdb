//! Two-ring synthetic dataset: classes live on circles of radius 3 and 1
//! with von Mises angular concentration, plus Gaussian coordinate noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::von_mises::sample_von_mises;
use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::label::ClassLabel;
use crate::nn::derive_seed;
use crate::tensor::Tensor32;

pub const RING_OUTER_RADIUS: f64 = 3.0;
pub const RING_INNER_RADIUS: f64 = 1.0;
const RING_KAPPA: f64 = 2.0;

/// Class 1 sits at radius 3 around angle 0; class 2 at radius 1 around angle
/// pi. The signed labels +1/-1 map to classes 1/2.
pub fn make_rings_dataset(n_per_class: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let outer = sample_von_mises(0.0, RING_KAPPA, n_per_class, derive_seed(seed, 1))?;
    let inner = sample_von_mises(std::f64::consts::PI, RING_KAPPA, n_per_class, derive_seed(seed, 2))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);

    let mut push = |theta: f64, radius: f64, label: usize, labels: &mut Vec<ClassLabel>, data: &mut Vec<f32>| {
        let nx: f64 = StandardNormal.sample(&mut noise_rng);
        let ny: f64 = StandardNormal.sample(&mut noise_rng);
        data.push((radius * theta.cos() + noise_std * nx) as f32);
        data.push((radius * theta.sin() + noise_std * ny) as f32);
        labels.push(ClassLabel::new(label, 2).expect("label within range"));
    };

    // Interleave the classes so any prefix is roughly balanced.
    for i in 0..n_per_class {
        push(outer[i], RING_OUTER_RADIUS, 1, &mut labels, &mut data);
        push(inner[i], RING_INNER_RADIUS, 2, &mut labels, &mut data);
    }
    let inputs = Tensor32::new(vec![2 * n_per_class, 2], data)?;
    Dataset::new(inputs, labels, 2, Split::Train)
}

/// Signed +1/-1 view of ring labels (class 1 is +1).
pub fn signed_labels(dataset: &Dataset) -> Vec<f64> {
    dataset
        .labels
        .iter()
        .map(|l| if l.one_based() == 1 { 1.0 } else { -1.0 })
        .collect()
}

//! Datasets: synthetic generators, binary loaders, augmentation, and class
//! prototypes.

mod augment;
mod cifar;
mod glyphs;
mod idx;
mod rings;
mod von_mises;

pub use augment::{augment_batch, AugmentConfig};
pub use cifar::{load_cifar10_binary, write_cifar10_binary};
pub use glyphs::make_glyph_digits;
pub use idx::{load_idx_dataset, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use rings::{make_rings_dataset, signed_labels, RING_INNER_RADIUS, RING_OUTER_RADIUS};
pub use von_mises::sample_von_mises;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::tensor::Tensor32;

/// Which split a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// An immutable labeled dataset. Inputs hold `n` samples along the leading
/// axis; labels are 1-based class ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor32,
    pub labels: Vec<ClassLabel>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        inputs: Tensor32,
        labels: Vec<ClassLabel>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        let n = inputs.batch();
        if n == 0 {
            return Err(Error::Sample("dataset must be nonempty".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{n} inputs but {} labels",
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.one_based() > class_count) {
            return Err(Error::Label(format!(
                "label {} exceeds class count {class_count}",
                l.one_based()
            )));
        }
        Ok(Self { inputs, labels, class_count, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample feature shape (without the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// True when every class count is within one of `n / c`.
    pub fn is_class_balanced(&self) -> bool {
        let mut counts = vec![0usize; self.class_count];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        let ideal = self.len() as f64 / self.class_count as f64;
        counts
            .iter()
            .all(|&c| (c as f64 - ideal).abs() <= 1.0)
    }

    /// Gathers the given sample indices into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor32, Vec<ClassLabel>) {
        let sample = self.inputs.sample_len();
        let mut data = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.inputs.sample(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        (
            Tensor32::new(shape, data).expect("gather shape is consistent"),
            labels,
        )
    }

    /// First `n` samples as a fixed evaluation subset.
    pub fn head(&self, n: usize) -> (Tensor32, Vec<ClassLabel>) {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&idx)
    }

    /// Writes `x0,...,xk,label` rows for external inspection.
    pub fn to_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        let d = self.inputs.sample_len();
        for j in 0..d {
            write!(w, "x{j},")?;
        }
        writeln!(w, "label")?;
        for i in 0..self.len() {
            for v in self.inputs.sample(i) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", self.labels[i].one_based())?;
        }
        Ok(())
    }
}

/// Where class prototypes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeSource {
    /// First dataset image of each class.
    FixedImage,
    /// A seeded random dataset image per class.
    RandomPerClass,
    /// Mean image per class.
    ClassMean,
    /// Zero image with a one-hot written into the first `c` flattened pixels.
    OneHotCorner,
    /// Seeded Gaussian image per class: the fixed linear projection of a
    /// one-hot label into input space.
    GaussianProjection,
}

/// One input-shaped tensor per class.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f32>>,
    pub sample_shape: Vec<usize>,
    pub source: PrototypeSource,
}

impl PrototypeSet {
    pub fn build(dataset: &Dataset, source: PrototypeSource, seed: u64) -> Result<Self> {
        let c = dataset.class_count;
        let d = dataset.inputs.sample_len();
        let mut prototypes = vec![vec![0.0f32; d]; c];
        match source {
            PrototypeSource::FixedImage => {
                let mut found = vec![false; c];
                for i in 0..dataset.len() {
                    let k = dataset.labels[i].index();
                    if !found[k] {
                        prototypes[k].copy_from_slice(dataset.inputs.sample(i));
                        found[k] = true;
                    }
                }
                if found.iter().any(|f| !f) {
                    return Err(Error::Sample("some class has no examples".into()));
                }
            }
            PrototypeSource::RandomPerClass => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for k in 0..c {
                    let members: Vec<usize> = (0..dataset.len())
                        .filter(|&i| dataset.labels[i].index() == k)
                        .collect();
                    if members.is_empty() {
                        return Err(Error::Sample(format!("class {} has no examples", k + 1)));
                    }
                    let pick = members[rng.random_range(0..members.len())];
                    prototypes[k].copy_from_slice(dataset.inputs.sample(pick));
                }
            }
            PrototypeSource::ClassMean => {
                let mut counts = vec![0usize; c];
                for i in 0..dataset.len() {
                    let k = dataset.labels[i].index();
                    counts[k] += 1;
                    for (p, v) in prototypes[k].iter_mut().zip(dataset.inputs.sample(i)) {
                        *p += v;
                    }
                }
                for (k, count) in counts.iter().enumerate() {
                    if *count == 0 {
                        return Err(Error::Sample(format!("class {} has no examples", k + 1)));
                    }
                    for p in &mut prototypes[k] {
                        *p /= *count as f32;
                    }
                }
            }
            PrototypeSource::OneHotCorner => {
                if d < c {
                    return Err(Error::Dimension(format!(
                        "inputs have {d} features, cannot embed {c} one-hot pixels"
                    )));
                }
                for (k, p) in prototypes.iter_mut().enumerate() {
                    p[k] = 1.0;
                }
            }
            PrototypeSource::GaussianProjection => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = 1.0 / (d as f64).sqrt();
                for p in &mut prototypes {
                    for v in p.iter_mut() {
                        let g: f64 =
                            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                        *v = (g * scale) as f32;
                    }
                }
            }
        }
        Ok(Self {
            prototypes,
            sample_shape: dataset.sample_shape().to_vec(),
            source,
        })
    }

    pub fn class_count(&self) -> usize {
        self.prototypes.len()
    }

    pub fn for_label(&self, label: ClassLabel) -> &[f32] {
        &self.prototypes[label.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        let inputs = Tensor32::new(
            vec![4, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let labels = [1usize, 2, 1, 2]
            .iter()
            .map(|&l| ClassLabel::new(l, 2).unwrap())
            .collect();
        Dataset::new(inputs, labels, 2, Split::Train).unwrap()
    }

    #[test]
    fn balance_check() {
        assert!(toy_dataset().is_class_balanced());
    }

    #[test]
    fn class_mean_prototypes() {
        let ds = toy_dataset();
        let ps = PrototypeSet::build(&ds, PrototypeSource::ClassMean, 0).unwrap();
        assert_eq!(ps.prototypes[0], vec![1.0, 0.5, 0.0]);
        assert_eq!(ps.prototypes[1], vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn one_hot_corner_prototypes() {
        let ds = toy_dataset();
        let ps = PrototypeSet::build(&ds, PrototypeSource::OneHotCorner, 0).unwrap();
        assert_eq!(ps.prototypes[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(ps.prototypes[1], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn csv_round_shape() {
        let ds = toy_dataset();
        let mut buf = Vec::new();
        ds.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x0,x1,x2,label\n"));
        assert_eq!(text.lines().count(), 5);
    }
}

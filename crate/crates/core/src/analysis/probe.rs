//! Linear probing of frozen representations.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::linalg::Matrix;
use crate::losses::pooled_matrix;
use crate::nn::Network;
use crate::tensor::Tensor32;

/// Probe optimization settings. The probe is a multinomial logistic
/// classifier trained full-batch to convergence; it has to be converged for
/// separability numbers to mean anything.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub ridge: f64,
    pub lr: f64,
    pub max_iters: usize,
    /// Stop when the loss improves by less than this between iterations.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { ridge: 1e-4, lr: 0.1, max_iters: 2000, tol: 1e-6, seed: 0 }
    }
}

/// Per-layer probe accuracies.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ProbeResult {
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
}

/// Flattened (pooled to at most 2048 features) per-module representations of
/// a whole dataset, batched through the network.
pub fn extract_features(net: &Network<f32>, inputs: &Tensor32, batch: usize) -> Result<Vec<Matrix>> {
    let n = inputs.batch();
    let modules = net.module_count();
    let mut per_module: Vec<Vec<f64>> = vec![Vec::new(); modules];
    let mut widths = vec![0usize; modules];
    let mut start = 0usize;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let sample = inputs.sample_len();
        let mut data = Vec::with_capacity(idx.len() * sample);
        for &i in &idx {
            data.extend_from_slice(inputs.sample(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&inputs.shape()[1..]);
        let chunk = Tensor32::new(shape, data)?;
        let trace = net.forward_full(&chunk)?;
        for l in 0..modules {
            let mat = pooled_matrix(trace.representation(l))?;
            widths[l] = mat.cols();
            per_module[l].extend_from_slice(mat.data());
        }
        start = end;
    }
    (0..modules)
        .map(|l| Matrix::from_vec(n, widths[l], per_module[l].clone()))
        .collect()
}

/// Fits one multinomial logistic classifier on frozen features.
/// Returns (train accuracy, weights including bias column).
fn fit_logistic(
    features: &Matrix,
    labels: &[ClassLabel],
    class_count: usize,
    config: &ProbeConfig,
) -> Result<Matrix> {
    let n = features.rows();
    let d = features.cols();
    // Weights are (c, d+1); the last column is the bias. Init is a small
    // seeded perturbation; the problem is convex, so trained-to-convergence
    // accuracies are stable across probe seeds.
    let mut w = Matrix::zeros(class_count, d + 1);
    {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        for v in w.data_mut() {
            *v = rng.random_range(-0.01..0.01);
        }
    }
    let mut m1 = Matrix::zeros(class_count, d + 1);
    let mut m2 = Matrix::zeros(class_count, d + 1);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut prev_loss = f64::INFINITY;
    let mut logits = vec![0.0f64; class_count];

    for step in 1..=config.max_iters {
        let mut grad = Matrix::zeros(class_count, d + 1);
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = features.row(i);
            for (k, logit) in logits.iter_mut().enumerate() {
                let wrow = w.row(k);
                let mut acc = wrow[d];
                for (x, wv) in row.iter().zip(&wrow[..d]) {
                    acc += x * wv;
                }
                *logit = acc;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - logits[labels[i].index()];
            for k in 0..class_count {
                let p = (logits[k] - lse).exp();
                let t = if k == labels[i].index() { 1.0 } else { 0.0 };
                let coeff = (p - t) / n as f64;
                let grow = &mut grad.data_mut()[k * (d + 1)..(k + 1) * (d + 1)];
                for (g, x) in grow[..d].iter_mut().zip(row) {
                    *g += coeff * x;
                }
                grow[d] += coeff;
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric("probe loss diverged".into()));
        }
        // Ridge on everything but the bias.
        for k in 0..class_count {
            for j in 0..d {
                let v = w.get(k, j);
                loss += 0.5 * config.ridge * v * v / n as f64;
                let g = grad.get(k, j) + config.ridge * v / n as f64;
                grad.set(k, j, g);
            }
        }
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for idx in 0..w.data().len() {
            let g = grad.data()[idx];
            m1.data_mut()[idx] = b1 * m1.data()[idx] + (1.0 - b1) * g;
            m2.data_mut()[idx] = b2 * m2.data()[idx] + (1.0 - b2) * g * g;
            let mh = m1.data()[idx] / bc1;
            let vh = m2.data()[idx] / bc2;
            w.data_mut()[idx] -= config.lr * mh / (vh.sqrt() + eps);
        }
        if (prev_loss - loss).abs() < config.tol {
            break;
        }
        prev_loss = loss;
    }
    Ok(w)
}

fn probe_accuracy(w: &Matrix, features: &Matrix, labels: &[ClassLabel]) -> f64 {
    let n = features.rows();
    let d = features.cols();
    let c = w.rows();
    let mut correct = 0usize;
    for i in 0..n {
        let row = features.row(i);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for k in 0..c {
            let wrow = w.row(k);
            let mut acc = wrow[d];
            for (x, wv) in row.iter().zip(&wrow[..d]) {
                acc += x * wv;
            }
            if acc > best.0 {
                best = (acc, k);
            }
        }
        if best.1 == labels[i].index() {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Trains one probe per layer on frozen train-split representations and
/// reports train/test accuracies. The backbone is untouched.
pub fn linear_probe(
    train_features: &[Matrix],
    train_labels: &[ClassLabel],
    test_features: &[Matrix],
    test_labels: &[ClassLabel],
    class_count: usize,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    if train_features.len() != test_features.len() {
        return Err(Error::Dimension(format!(
            "{} train layers vs {} test layers",
            train_features.len(),
            test_features.len()
        )));
    }
    let mut train_accuracy = Vec::with_capacity(train_features.len());
    let mut test_accuracy = Vec::with_capacity(train_features.len());
    for (layer, (ftr, fte)) in train_features.iter().zip(test_features).enumerate() {
        let w = fit_logistic(ftr, train_labels, class_count, config)
            .map_err(|e| Error::Numeric(format!("probe on layer {layer}: {e}")))?;
        train_accuracy.push(probe_accuracy(&w, ftr, train_labels));
        test_accuracy.push(probe_accuracy(&w, fte, test_labels));
    }
    Ok(ProbeResult { train_accuracy, test_accuracy })
}

/// First layer whose probe accuracy is within one point of the previous
/// layer's: the place where linear separability saturates and end-to-end
/// retraining would start.
pub fn suggest_retrain_boundary(probe: &ProbeResult) -> usize {
    for i in 1..probe.test_accuracy.len() {
        if probe.test_accuracy[i] - probe.test_accuracy[i - 1] < 0.01 {
            return i;
        }
    }
    probe.test_accuracy.len().saturating_sub(1)
}

/// Convenience wrapper: extract features for both splits and probe each
/// layer.
pub fn probe_network(
    net: &Network<f32>,
    train_data: &Dataset,
    test_data: &Dataset,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    let before = net.param_checksum();
    let train_features = extract_features(net, &train_data.inputs, 256)?;
    let test_features = extract_features(net, &test_data.inputs, 256)?;
    let result = linear_probe(
        &train_features,
        &train_data.labels,
        &test_features,
        &test_data.labels,
        train_data.class_count,
        config,
    )?;
    debug_assert_eq!(before, net.param_checksum());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pattern: &[usize], c: usize) -> Vec<ClassLabel> {
        pattern.iter().map(|&l| ClassLabel::new(l, c).unwrap()).collect()
    }

    #[test]
    fn one_hot_features_are_perfectly_separable() {
        let n = 30;
        let c = 3;
        let mut data = vec![0.0f64; n * c];
        let mut ls = Vec::new();
        for i in 0..n {
            data[i * c + i % c] = 1.0;
            ls.push(ClassLabel::from_index(i % c, c).unwrap());
        }
        let feats = Matrix::from_vec(n, c, data).unwrap();
        let result = linear_probe(
            &[feats.clone()],
            &ls,
            &[feats],
            &ls,
            c,
            &ProbeConfig::default(),
        )
        .unwrap();
        assert_eq!(result.train_accuracy[0], 1.0);
        assert_eq!(result.test_accuracy[0], 1.0);
    }

    #[test]
    fn pure_noise_probes_at_chance() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let n = 2000;
        let d = 10;
        let train: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let test: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ls: Vec<ClassLabel> = (0..n)
            .map(|i| ClassLabel::from_index(i % 2, 2).unwrap())
            .collect();
        let result = linear_probe(
            &[Matrix::from_vec(n, d, train).unwrap()],
            &ls,
            &[Matrix::from_vec(n, d, test).unwrap()],
            &ls,
            2,
            &ProbeConfig::default(),
        )
        .unwrap();
        let acc = result.test_accuracy[0];
        assert!((0.45..=0.55).contains(&acc), "chance-level band violated: {acc}");
    }

    #[test]
    fn probe_accuracy_is_seed_stable() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let n = 400;
        let d = 6;
        // Noisy but learnable features.
        let mut data = vec![0.0f64; n * d];
        let ls: Vec<ClassLabel> = (0..n)
            .map(|i| ClassLabel::from_index(i % 2, 2).unwrap())
            .collect();
        for i in 0..n {
            for j in 0..d {
                let signal = if ls[i].index() == 0 { 0.4 } else { -0.4 };
                data[i * d + j] = signal * (j as f64 / d as f64) + rng.random_range(-1.0..1.0);
            }
        }
        let feats = Matrix::from_vec(n, d, data).unwrap();
        let mut accs = Vec::new();
        for seed in [0u64, 1, 2] {
            let config = ProbeConfig { seed, ..ProbeConfig::default() };
            let r = linear_probe(&[feats.clone()], &ls, &[feats.clone()], &ls, 2, &config).unwrap();
            accs.push(r.test_accuracy[0]);
        }
        let spread = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - accs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 0.005, "probe accuracies varied by {spread}: {accs:?}");
    }

    #[test]
    fn boundary_heuristic_finds_saturation() {
        let probe = ProbeResult {
            train_accuracy: vec![0.8, 0.9, 0.905, 0.91],
            test_accuracy: vec![0.75, 0.88, 0.885, 0.89],
        };
        assert_eq!(suggest_retrain_boundary(&probe), 2);
        let monotone = ProbeResult {
            train_accuracy: vec![0.5, 0.6, 0.8],
            test_accuracy: vec![0.5, 0.6, 0.8],
        };
        assert_eq!(suggest_retrain_boundary(&monotone), 2);
    }

    #[test]
    fn layer_count_mismatch_is_rejected() {
        let f = Matrix::zeros(4, 2);
        let ls = labels(&[1, 2, 1, 2], 2);
        assert!(linear_probe(&[f.clone()], &ls, &[], &ls, 2, &ProbeConfig::default()).is_err());
    }
}

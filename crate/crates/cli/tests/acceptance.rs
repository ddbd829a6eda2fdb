//! Acceptance suite: one integration test per numbered criterion, each
//! printing a `criterion N: PASS` line with its measurements.
//!
//! The digit-image criteria (6, 8, 9) run against real IDX files when
//! `data/mnist/` exists at the repository root; otherwise they fall back to
//! the deterministic procedural glyph corpus, written to and re-read from
//! IDX files so the binary loader sits on the tested path. The data source
//! is stated in each pass line.

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, PoisonError};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use infoplane_core::analysis::{snn_hsic_bound_check, toy_rank_collapse_experiment, ToyConfig};
use infoplane_core::data::{load_idx_dataset, make_glyph_digits, make_rings_dataset, Dataset, Split};
use infoplane_core::hsic::{hsic_empirical, KernelSpec};
use infoplane_core::label::ClassLabel;
use infoplane_core::linalg::Matrix;
use infoplane_core::losses::{
    cross_entropy, ff_goodness_loss, nhsic_penalty, signal_propagation_loss,
    similarity_matching_loss, supcon_loss, LossSpec, SpMode,
};
use infoplane_core::nn::{
    derive_seed, AuxHeadSpec, LayerKind, LayerSpec, ModuleSpec, Network,
};
use infoplane_core::tensor::{Tensor, Tensor64};
use infoplane_core::train::{
    train, ff_predict, FfLabelEmbed, FfMixLocation, OptimizerSpec, Schedule, TrainConfig,
    TrainMode,
};

// ---------------------------------------------------------------------------
// Shared support.
// ---------------------------------------------------------------------------

/// Criteria measure their own wall time against stated budgets, so they must
/// not contend with each other when the harness runs multi-threaded.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(PoisonError::into_inner)
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Real digit IDX files when available, otherwise the procedural glyph
/// corpus round-tripped through IDX files on disk.
fn digit_datasets(surrogate_train: usize, surrogate_test: usize) -> (Dataset, Dataset, &'static str) {
    let mnist = repo_root().join("data/mnist");
    let files = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];
    if files.iter().all(|f| mnist.join(f).exists()) {
        let train = load_idx_dataset(
            &mnist.join(files[0]),
            &mnist.join(files[1]),
            Split::Train,
        )
        .expect("readable train IDX pair");
        let test = load_idx_dataset(&mnist.join(files[2]), &mnist.join(files[3]), Split::Test)
            .expect("readable test IDX pair");
        // Cap the train split so the criterion budget holds on one core.
        let cap = 30_000.min(train.len());
        let idx: Vec<usize> = (0..cap).collect();
        let (inputs, labels) = train.gather(&idx);
        let train = Dataset::new(inputs, labels, train.class_count, Split::Train).unwrap();
        return (train, test, "mnist-idx");
    }

    let (train_raw, test_raw) = make_glyph_digits(surrogate_train, surrogate_test, 7).unwrap();
    let dir = std::env::temp_dir().join(format!("infoplane-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let write_pair = |ds: &Dataset, img: &str, lbl: &str| {
        let n = ds.len();
        let pixels: Vec<u8> = ds
            .inputs
            .data()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let labels: Vec<u8> = ds.labels.iter().map(|l| l.index() as u8).collect();
        infoplane_core::data::write_idx_images(&dir.join(img), &pixels, n, 28, 28).unwrap();
        infoplane_core::data::write_idx_labels(&dir.join(lbl), &labels).unwrap();
    };
    write_pair(&train_raw, "train-images", "train-labels");
    write_pair(&test_raw, "test-images", "test-labels");
    let train = load_idx_dataset(&dir.join("train-images"), &dir.join("train-labels"), Split::Train)
        .unwrap();
    let test =
        load_idx_dataset(&dir.join("test-images"), &dir.join("test-labels"), Split::Test).unwrap();
    (train, test, "glyph surrogate (no IDX files found)")
}

/// Dense stack with one module per hidden layer plus a class-wide output
/// module; linear heads for layer-wise runs, identity otherwise.
fn mlp(seed: u64, input: usize, hidden: &[usize], c: usize, linear_heads: bool) -> Network<f32> {
    let mut specs = Vec::new();
    let mut prev = input;
    for (i, &h) in hidden.iter().enumerate() {
        specs.push(ModuleSpec {
            layers: vec![
                LayerSpec::new(
                    LayerKind::Dense { input: prev, output: h },
                    derive_seed(seed, i as u64),
                ),
                LayerSpec::new(LayerKind::ReLU, 0),
            ],
            head: if linear_heads {
                AuxHeadSpec::Linear { out: c }
            } else {
                AuxHeadSpec::Identity
            },
            head_seed: derive_seed(seed, 100 + i as u64),
            detach_input: false,
        });
        prev = h;
    }
    specs.push(ModuleSpec {
        layers: vec![LayerSpec::new(
            LayerKind::Dense { input: prev, output: c },
            derive_seed(seed, 99),
        )],
        head: AuxHeadSpec::Identity,
        head_seed: 0,
        detach_input: false,
    });
    Network::build(&specs, &[input]).unwrap()
}

fn random_symmetric(m: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut k = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = rng.random_range(-2.0..2.0);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// A small discrete joint distribution with scalar x embeddings and one-hot
/// y embeddings.
struct DiscreteJoint {
    p: Vec<Vec<f64>>, // p[a][b]
    x_values: Vec<f64>,
    y_dim: usize,
}

impl DiscreteJoint {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let nx = rng.random_range(2..=5usize);
        let ny = rng.random_range(2..=5usize);
        let mut p = vec![vec![0.0f64; ny]; nx];
        let mut total = 0.0;
        for row in &mut p {
            for v in row.iter_mut() {
                *v = rng.random_range(0.05..1.0);
                total += *v;
            }
        }
        for row in &mut p {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let x_values = (0..nx).map(|_| rng.random_range(-2.0..2.0)).collect();
        Self { p, x_values, y_dim: ny }
    }

    fn nx(&self) -> usize {
        self.p.len()
    }

    fn kx(&self, a: usize, c: usize) -> f64 {
        let d = self.x_values[a] - self.x_values[c];
        (-d * d / 2.0).exp() // RBF, sigma 1
    }

    fn ky(&self, b: usize, d: usize) -> f64 {
        if b == d {
            1.0
        } else {
            0.0
        }
    }

    /// Population dependence by exhaustive enumeration of the three
    /// expectation terms.
    fn population_hsic(&self) -> f64 {
        let (nx, ny) = (self.nx(), self.y_dim);
        let px: Vec<f64> = (0..nx).map(|a| self.p[a].iter().sum()).collect();
        let py: Vec<f64> = (0..ny).map(|b| (0..nx).map(|a| self.p[a][b]).sum()).collect();
        let mut term1 = 0.0;
        for a in 0..nx {
            for b in 0..ny {
                for c in 0..nx {
                    for d in 0..ny {
                        term1 += self.p[a][b] * self.p[c][d] * self.kx(a, c) * self.ky(b, d);
                    }
                }
            }
        }
        let mut term2 = 0.0;
        for a in 0..nx {
            for b in 0..ny {
                let ex: f64 = (0..nx).map(|c| px[c] * self.kx(a, c)).sum();
                let ey: f64 = (0..ny).map(|d| py[d] * self.ky(b, d)).sum();
                term2 += self.p[a][b] * ex * ey;
            }
        }
        let ex_all: f64 = (0..nx)
            .flat_map(|a| (0..nx).map(move |c| (a, c)))
            .map(|(a, c)| px[a] * px[c] * self.kx(a, c))
            .sum();
        let ey_all: f64 = (0..ny)
            .flat_map(|b| (0..ny).map(move |d| (b, d)))
            .map(|(b, d)| py[b] * py[d] * self.ky(b, d))
            .sum();
        term1 - 2.0 * term2 + ex_all * ey_all
    }

    /// The biased estimator evaluated on cell counts: the V-statistic value
    /// equals the population expression under the empirical distribution
    /// times (m/(m-1))^2.
    fn estimator_from_counts(&self, counts: &[Vec<usize>], m: usize) -> f64 {
        let scaled = DiscreteJoint {
            p: counts
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / m as f64).collect())
                .collect(),
            x_values: self.x_values.clone(),
            y_dim: self.y_dim,
        };
        let mf = m as f64;
        scaled.population_hsic() * (mf / (mf - 1.0)) * (mf / (mf - 1.0))
    }

    fn sample_counts(&self, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let (nx, ny) = (self.nx(), self.y_dim);
        let mut flat: Vec<f64> = Vec::with_capacity(nx * ny);
        let mut acc = 0.0;
        for a in 0..nx {
            for b in 0..ny {
                acc += self.p[a][b];
                flat.push(acc);
            }
        }
        let mut counts = vec![vec![0usize; ny]; nx];
        for _ in 0..m {
            let u: f64 = rng.random_range(0.0..acc);
            let cell = flat.partition_point(|&c| c < u);
            counts[cell / ny][cell % ny] += 1;
        }
        counts
    }
}

fn fd2(f: impl Fn(&Tensor64) -> f64, x: &Tensor64, i: usize, h: f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[i] += h;
    let mut minus = x.clone();
    minus.data_mut()[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

fn max_rel_err(
    f: impl Fn(&Tensor64) -> f64,
    x: &Tensor64,
    analytic: &Tensor64,
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = fd2(&f, x, i, h);
        let a = analytic.data()[i];
        if a.abs() < 1e-10 && numeric.abs() < 1e-7 {
            continue;
        }
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
    }
    worst
}

fn balanced_labels(n: usize, c: usize) -> Vec<ClassLabel> {
    (0..n).map(|i| ClassLabel::from_index(i % c, c).unwrap()).collect()
}

// ---------------------------------------------------------------------------
// Criteria.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_estimator_matches_naive_trace() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=64usize);
        let k = random_symmetric(m, &mut rng);
        let l = random_symmetric(m, &mut rng);
        let got = hsic_empirical(&k, &l).unwrap().value;

        // Naive route: build H explicitly and take Tr(K H L H) of the full
        // matrix products.
        let mut h = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                h.set(i, j, if i == j { 1.0 - 1.0 / m as f64 } else { -1.0 / m as f64 });
            }
        }
        let product = k.matmul(&h).unwrap().matmul(&l).unwrap().matmul(&h).unwrap();
        let mut trace = 0.0;
        for i in 0..m {
            trace += product.get(i, i);
        }
        let naive = trace / ((m - 1) as f64 * (m - 1) as f64);
        worst = worst.max((got - naive).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst < 1e-10, "max abs difference {worst:.3e}");
    assert!(elapsed < 10.0, "runtime {elapsed:.1}s exceeds 10s");
    println!(
        "criterion 1: PASS — 200 estimator-vs-naive pairs, max abs diff {worst:.2e}, {elapsed:.1}s"
    );
}

#[test]
fn criterion_02_estimator_consistency_against_enumeration() {
    let _guard = serial();
    let start = Instant::now();
    let m = 5000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4202);
    for joint_idx in 0..20 {
        let joint = DiscreteJoint::random(&mut rng);
        let population = joint.population_hsic();
        let counts = joint.sample_counts(m, &mut rng);

        // Materialize the sample Gram matrices by table lookup; entries are
        // identical to kernel evaluation on the embedded points.
        let mut xs = Vec::with_capacity(m);
        let mut ys = Vec::with_capacity(m);
        for (a, row) in counts.iter().enumerate() {
            for (b, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    xs.push(a);
                    ys.push(b);
                }
            }
        }
        let mut k = Matrix::zeros(m, m);
        let mut l = Matrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let kv = joint.kx(xs[i], xs[j]);
                let lv = joint.ky(ys[i], ys[j]);
                k.set(i, j, kv);
                k.set(j, i, kv);
                l.set(i, j, lv);
                l.set(j, i, lv);
            }
        }
        let empirical = hsic_empirical(&k, &l).unwrap().value;
        drop(k);
        drop(l);

        // The count-level formula is an independent route to the same
        // statistic.
        let from_counts = joint.estimator_from_counts(&counts, m);
        assert!(
            (empirical - from_counts).abs() < 1e-9,
            "joint {joint_idx}: matrix route {empirical} vs count route {from_counts}"
        );

        // Bootstrap standard error over multinomial resamples of the cells.
        let reps = 100;
        let mut values = Vec::with_capacity(reps);
        let p_hat = DiscreteJoint {
            p: counts
                .iter()
                .map(|row| row.iter().map(|&c| c as f64 / m as f64).collect())
                .collect(),
            x_values: joint.x_values.clone(),
            y_dim: joint.y_dim,
        };
        for _ in 0..reps {
            let resampled = p_hat.sample_counts(m, &mut rng);
            values.push(joint.estimator_from_counts(&resampled, m));
        }
        let mean = values.iter().sum::<f64>() / reps as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
        let se = var.sqrt();
        let diff = (empirical - population).abs();
        assert!(
            diff <= 3.0 * se + 1e-12,
            "joint {joint_idx}: |{empirical:.6} - {population:.6}| = {diff:.2e} > 3 x {se:.2e}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "runtime {elapsed:.1}s exceeds 2min");
    println!(
        "criterion 2: PASS — 20 joints, sample estimate within 3 bootstrap SE of the enumerated population value, {elapsed:.1}s"
    );
}

#[test]
fn criterion_03_label_kernel_exact_form() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4303);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = rng.random_range(2..=5usize);
        let support = rng.random_range(3..=7usize);
        let dim = 2;
        // Random z support and per-class conditionals over it; labels
        // balanced.
        let z_points: Vec<Vec<f64>> = (0..support)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut cond = vec![vec![0.0f64; support]; c];
        for row in &mut cond {
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.01..1.0);
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let sigma = 0.8f64;
        let kernel = |a: &[f64], b: &[f64]| {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-sq / (2.0 * sigma * sigma)).exp()
        };

        // Enumerated population value of the full three-term expression with
        // a linear kernel on one-hot labels.
        let p_yz = |y: usize, z: usize| cond[y][z] / c as f64;
        let pz: Vec<f64> = (0..support).map(|z| (0..c).map(|y| p_yz(y, z)).sum()).collect();
        let mut term1 = 0.0;
        let mut term2 = 0.0;
        for y in 0..c {
            for z in 0..support {
                for y2 in 0..c {
                    for z2 in 0..support {
                        let l = if y == y2 { 1.0 } else { 0.0 };
                        term1 += p_yz(y, z) * p_yz(y2, z2) * kernel(&z_points[z], &z_points[z2]) * l;
                    }
                }
                let ek: f64 = (0..support)
                    .map(|z2| pz[z2] * kernel(&z_points[z], &z_points[z2]))
                    .sum();
                // E[l(y, Y')] over the marginal label distribution is 1/c.
                term2 += p_yz(y, z) * ek * (1.0 / c as f64);
            }
        }
        let ek_all: f64 = (0..support)
            .flat_map(|a| (0..support).map(move |b| (a, b)))
            .map(|(a, b)| pz[a] * pz[b] * kernel(&z_points[a], &z_points[b]))
            .sum();
        let enumerated = term1 - 2.0 * term2 + ek_all / c as f64;

        // The closed form: (1/c)(E_pos[k] - E_indep[k]).
        let mut e_pos = 0.0;
        for y in 0..c {
            for z in 0..support {
                for z2 in 0..support {
                    e_pos += cond[y][z] * cond[y][z2] * kernel(&z_points[z], &z_points[z2]);
                }
            }
        }
        e_pos /= c as f64;
        let closed = (e_pos - ek_all) / c as f64;
        worst = worst.max((enumerated - closed).abs());
    }
    assert!(worst < 1e-12, "max deviation {worst:.3e}");
    println!("criterion 3: PASS — 20 enumerated joints match the closed label-kernel form, max dev {worst:.2e}");
}

#[test]
fn criterion_04_soft_nn_dependence_inequality() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4404);
    let mut instance = 0usize;
    let mut min_slack = f64::INFINITY;
    'outer: for &c in &[2usize, 3, 5] {
        for &m_bound in &[0.5f64, 1.0] {
            for &sigma in &[0.5f64, 1.0, 2.0] {
                for rep in 0..6 {
                    if instance >= 100 {
                        break 'outer;
                    }
                    instance += 1;
                    let b = 500usize;
                    let dim = 3usize;
                    // Class-dependent bounded representations: class centers
                    // plus noise, projected into the radius-M ball.
                    let centers: Vec<Vec<f64>> = (0..c)
                        .map(|_| (0..dim).map(|_| rng.random_range(-0.4..0.4) * m_bound).collect())
                        .collect();
                    let labels = balanced_labels(b, c);
                    let mut data = Vec::with_capacity(b * dim);
                    for l in &labels {
                        let center = &centers[l.index()];
                        let mut z: Vec<f64> = center
                            .iter()
                            .map(|v| v + 0.5 * m_bound * rng.random_range(-1.0..1.0))
                            .collect();
                        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm > m_bound {
                            for v in &mut z {
                                *v *= m_bound / norm;
                            }
                        }
                        data.extend(z);
                    }
                    let z = Matrix::from_vec(b, dim, data).unwrap();
                    let check = snn_hsic_bound_check(
                        &z,
                        &labels,
                        c,
                        sigma,
                        2000,
                        derive_seed(4404, instance as u64),
                        Some(m_bound),
                    )
                    .unwrap();
                    let slack = check.lhs - (check.rhs - 3.0 * check.mc_stderr);
                    min_slack = min_slack.min(slack);
                    assert!(
                        check.holds,
                        "instance {instance} (c={c}, M={m_bound}, sigma={sigma}, rep={rep}): lhs {} < rhs {} - 3se {}",
                        check.lhs, check.rhs, check.mc_stderr
                    );
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(instance, 100);
    assert!(elapsed < 300.0, "runtime {elapsed:.1}s exceeds 5min");
    println!(
        "criterion 4: PASS — inequality holds on 100 bounded instances, min slack {min_slack:.3}, {elapsed:.1}s"
    );
}

#[test]
fn criterion_05_gradient_suite() {
    let _guard = serial();
    let start = Instant::now();
    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor64 {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4505);
    let h = 1e-5;
    let mut report: Vec<(String, f64)> = Vec::new();

    // Every layer kind on the end-to-end path of two small nets, against a
    // fixed random projection loss.
    {
        let specs = vec![ModuleSpec::new(
            vec![
                LayerSpec::new(
                    LayerKind::Conv2D { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, pad: 1 },
                    1,
                ),
                LayerSpec::new(LayerKind::ReLU, 0),
                LayerSpec::new(LayerKind::AvgPool2D { window: 2 }, 0),
                LayerSpec::new(LayerKind::Flatten, 0),
                LayerSpec::new(LayerKind::Dense { input: 27, output: 4 }, 2),
            ],
            AuxHeadSpec::Mlp2 { hidden: 5, out: 3 },
            3,
        )];
        let net = Network::<f64>::build(&specs, &[2, 6, 6]).unwrap();
        let x = rand_t(&[2, 2, 6, 6], &mut rng);
        let probe: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss_of = |net: &Network<f64>, x: &Tensor64| {
            let trace = net.forward_full(x).unwrap();
            trace
                .aux_output(0)
                .data()
                .iter()
                .zip(&probe)
                .map(|(v, w)| v * w)
                .sum::<f64>()
        };
        let trace = net.forward_full(&x).unwrap();
        let gh = Tensor::new(vec![2, 3], probe.clone()).unwrap();
        let grads = net.backward_e2e(&trace, &gh).unwrap();
        // Check every parameter of every layer by finite differences.
        let mut worst = 0.0f64;
        for (mi, mg) in grads.modules.iter().enumerate() {
            for (is_head, li, slot) in mg
                .layers
                .iter()
                .enumerate()
                .map(|(li, s)| (false, li, s))
                .chain(mg.head.iter().enumerate().map(|(li, s)| (true, li, s)))
            {
                let Some((gw, gb)) = slot else { continue };
                for (which, analytic) in [(0, gw), (1, gb)] {
                    for i in 0..analytic.len() {
                        let mut probe_net = net.clone();
                        let read = |net: &mut Network<f64>, delta: f64| {
                            let layer = if is_head {
                                &mut net.modules[mi].head.layers[li]
                            } else {
                                &mut net.modules[mi].layers[li]
                            };
                            let t = if which == 0 {
                                layer.weights.as_mut().unwrap()
                            } else {
                                layer.bias.as_mut().unwrap()
                            };
                            t.data_mut()[i] += delta;
                        };
                        read(&mut probe_net, h);
                        let plus = loss_of(&probe_net, &x);
                        read(&mut probe_net, -2.0 * h);
                        let minus = loss_of(&probe_net, &x);
                        let numeric = (plus - minus) / (2.0 * h);
                        let a = analytic.data()[i];
                        if a.abs() < 1e-10 && numeric.abs() < 1e-7 {
                            continue;
                        }
                        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
                    }
                }
            }
        }
        report.push(("layers(conv,pool,flatten,dense,heads)".into(), worst));
        assert!(worst < 1e-4, "layer gradients: worst rel err {worst:.2e}");
    }

    // Differentiable losses.
    {
        let logits = rand_t(&[5, 4], &mut rng);
        let ls = balanced_labels(5, 4);
        let (_, g) = cross_entropy(&logits, &ls).unwrap();
        let err = max_rel_err(|t| cross_entropy(t, &ls).unwrap().0, &logits, &g, h);
        report.push(("cross_entropy".into(), err));
        assert!(err < 1e-4);

        let heads = rand_t(&[6, 4], &mut rng);
        let ls = balanced_labels(6, 3);
        let (_, g) = supcon_loss(&heads, &ls, 0.4, true).unwrap();
        let err = max_rel_err(|t| supcon_loss(t, &ls, 0.4, true).unwrap().0, &heads, &g, h);
        report.push(("supcon".into(), err));
        assert!(err < 1e-4);

        let heads = rand_t(&[5, 3], &mut rng);
        let ls = balanced_labels(5, 2);
        let r = similarity_matching_loss(&heads, &ls, 2).unwrap();
        let err = max_rel_err(
            |t| similarity_matching_loss(t, &ls, 2).unwrap().loss,
            &heads,
            &r.grad,
            h,
        );
        report.push(("similarity_matching".into(), err));
        assert!(err < 1e-4);

        let z = rand_t(&[5, 4], &mut rng);
        let s = rand_t(&[5, 3], &mut rng);
        for mode in [SpMode::Soft, SpMode::Hard { k: 2 }] {
            let (_, g) = signal_propagation_loss(&z, &s, mode).unwrap();
            let err = max_rel_err(|t| signal_propagation_loss(t, &s, mode).unwrap().0, &z, &g, h);
            report.push((format!("signal_propagation {mode:?}"), err));
            assert!(err < 1e-4);
        }

        let z = rand_t(&[6, 3], &mut rng);
        let signs = vec![true, false, true, true, false, false];
        let (_, g) = ff_goodness_loss(&z, &signs, 2.0).unwrap();
        let err = max_rel_err(|t| ff_goodness_loss(t, &signs, 2.0).unwrap().0, &z, &g, h);
        report.push(("goodness".into(), err));
        assert!(err < 1e-4);

        // Dependence penalty gets the looser bound: its gradient passes
        // through a regularized solve.
        let z = rand_t(&[6, 2], &mut rng);
        let xb = rand_t(&[6, 3], &mut rng);
        let kx = KernelSpec::rbf_fixed(1.2);
        let kz = KernelSpec::rbf_fixed(0.9);
        let (_, g) = nhsic_penalty(&z, &xb, &kx, &kz, 1e-3).unwrap();
        let err = max_rel_err(
            |t| nhsic_penalty(t, &xb, &kx, &kz, 1e-3).unwrap().0,
            &z,
            &g,
            h,
        );
        report.push(("nhsic_penalty".into(), err));
        assert!(err < 1e-3);
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1min");
    let summary: Vec<String> = report.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    println!(
        "criterion 5: PASS — finite-difference suite ({}), {elapsed:.1}s",
        summary.join(", ")
    );
}

#[test]
fn criterion_06_digit_mlp_parity() {
    let _guard = serial();
    let start = Instant::now();
    let (train_data, test_data, source) = digit_datasets(4000, 2000);
    let input = train_data.inputs.sample_len();
    let c = train_data.class_count;
    let epochs = if source == "mnist-idx" { 20 } else { 6 };

    let run = |layerwise: bool| -> f64 {
        let mut net = mlp(11, input, &[512, 512, 512, 512], c, layerwise);
        let mode = if layerwise {
            TrainMode::LayerwiseSimultaneous
        } else {
            TrainMode::E2E
        };
        let mut config = TrainConfig::new(
            mode,
            LossSpec::CrossEntropy,
            OptimizerSpec::adam(1e-3),
            epochs,
            128,
            5,
        );
        config.metrics_subset = 2048;
        let report = train(&mut net, &train_data, Some(&test_data), &config).unwrap();
        report.final_test_accuracy.expect("class-shaped output")
    };
    let e2e = run(false);
    let lw = run(true);
    let gap = (e2e - lw).abs();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(epochs <= 30);
    assert!(e2e >= 0.97, "end-to-end accuracy {e2e:.4} below 0.97 ({source})");
    assert!(lw >= 0.97, "layer-wise accuracy {lw:.4} below 0.97 ({source})");
    assert!(gap <= 0.015, "mode gap {gap:.4} exceeds 1.5 points");
    assert!(elapsed < 1800.0, "runtime {elapsed:.0}s exceeds 30min");
    println!(
        "criterion 6: PASS — e2e {e2e:.4}, layer-wise {lw:.4}, gap {:.2} points in {epochs} epochs on {source}, {elapsed:.0}s",
        gap * 100.0
    );
}

#[test]
fn criterion_07_toy_rank_collapse() {
    let _guard = serial();
    let start = Instant::now();
    let mut config = ToyConfig::new(0.05, 0.1, 5000, 2);
    config.record_every = 10;
    let trajectory = toy_rank_collapse_experiment(&config).unwrap();
    let last = trajectory.final_snapshot();
    let ratio = last.w_col2_norm / last.w_col1_norm;
    let (peak_idx, peak) = trajectory.hsic_xz_peak();
    let final_ratio = last.hsic_xz / peak;
    let elapsed = start.elapsed().as_secs_f64();

    assert!(
        ratio < 1e-2,
        "readout-aligned second column at {ratio:.2e} of the first"
    );
    assert!(
        peak_idx < trajectory.snapshots.len() - 1,
        "dependence peak must come strictly before the final step"
    );
    assert!(
        final_ratio < 0.9,
        "final dependence {final_ratio:.3} of the peak; no fall"
    );
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1min");
    println!(
        "criterion 7: PASS — column ratio {ratio:.1e}, input-dependence peak at step {} then falls to {final_ratio:.2} of peak, {elapsed:.1}s",
        trajectory.snapshots[peak_idx].step
    );
}

#[test]
fn criterion_08_forward_gradient_gap_and_unbiasedness() {
    let _guard = serial();
    let start = Instant::now();
    let (train_data, test_data, source) = digit_datasets(4000, 2000);
    let input = train_data.inputs.sample_len();
    let c = train_data.class_count;
    let epochs = 4;

    let mut bp_accs = Vec::new();
    let mut fg_accs = Vec::new();
    for seed in [1u64, 2, 3] {
        for (mode, out) in [
            (TrainMode::E2E, &mut bp_accs),
            (TrainMode::ForwardGradient, &mut fg_accs),
        ] {
            let mut net = mlp(seed * 31, input, &[128], c, false);
            let mut config = TrainConfig::new(
                mode,
                LossSpec::CrossEntropy,
                OptimizerSpec::adam(1e-3),
                epochs,
                64,
                seed,
            );
            config.metrics_subset = 2048;
            let report = train(&mut net, &train_data, Some(&test_data), &config).unwrap();
            out.push(report.final_test_accuracy.unwrap());
        }
    }
    let bp_mean = bp_accs.iter().sum::<f64>() / 3.0;
    let fg_mean = fg_accs.iter().sum::<f64>() / 3.0;
    let gap = bp_mean - fg_mean;
    assert!(
        gap >= 0.05,
        "backprop {bp_mean:.4} vs forward gradient {fg_mean:.4}: gap below 5 points"
    );

    // Unbiasedness: on a tiny net the average of jvp-weighted directions
    // approaches the true gradient; 10^4 draws resolve a 12-parameter net
    // well inside 5 percent.
    let rings = make_rings_dataset(16, 0.1, 77).unwrap();
    let tiny = {
        let specs = vec![
            ModuleSpec::new(
                vec![
                    LayerSpec::new(LayerKind::Dense { input: 2, output: 2 }, 5),
                    LayerSpec::new(LayerKind::ReLU, 0),
                ],
                AuxHeadSpec::Identity,
                0,
            ),
            ModuleSpec::new(
                vec![LayerSpec::new(LayerKind::Dense { input: 2, output: 2 }, 6)],
                AuxHeadSpec::Identity,
                0,
            ),
        ];
        Network::<f32>::build(&specs, &[2]).unwrap()
    };
    let p = tiny.e2e_param_count();
    let (batch, labels) = rings.head(32);
    let trace = tiny.forward_full(&batch).unwrap();
    let (_, loss_grad) = cross_entropy(trace.aux_output(1), &labels).unwrap();
    let grads = tiny.backward_e2e(&trace, &loss_grad).unwrap();
    let expected = tiny.flatten_e2e_grads(&grads);

    let mut estimate = vec![0.0f64; p];
    let mut dir_rng = ChaCha8Rng::seed_from_u64(4808);
    let draws = 10_000usize;
    for _ in 0..draws {
        let direction: Vec<f32> = (0..p)
            .map(|_| {
                let g: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut dir_rng);
                g as f32
            })
            .collect();
        let (value, tangent) = tiny.forward_jvp(&batch, &direction).unwrap();
        let (_, g) = cross_entropy(&value, &labels).unwrap();
        let jvp: f64 = g
            .data()
            .iter()
            .zip(tangent.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        for (e, d) in estimate.iter_mut().zip(&direction) {
            *e += jvp * *d as f64;
        }
    }
    for e in &mut estimate {
        *e /= draws as f64;
    }
    let norm_expected = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
    let err = expected
        .iter()
        .zip(&estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        / norm_expected;
    assert!(err < 0.05, "mean direction off by {err:.4} relative");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "runtime {elapsed:.0}s exceeds 30min");
    println!(
        "criterion 8: PASS — backprop {bp_mean:.4} vs forward gradient {fg_mean:.4} over 3 seeds (gap {:.1} points); estimator bias {err:.3} relative on {source}, {elapsed:.0}s",
        gap * 100.0
    );
}

#[test]
fn criterion_09_forward_forward_digits() {
    let _guard = serial();
    let start = Instant::now();
    let (train_data, test_data, source) = digit_datasets(4000, 2000);
    let input = train_data.inputs.sample_len();
    let c = train_data.class_count;

    let specs: Vec<ModuleSpec> = {
        let mut specs = Vec::new();
        let mut prev = input;
        for (i, &h) in [500usize, 500].iter().enumerate() {
            specs.push(ModuleSpec::new(
                vec![
                    LayerSpec::new(
                        LayerKind::Dense { input: prev, output: h },
                        derive_seed(9, i as u64),
                    ),
                    LayerSpec::new(LayerKind::ReLU, 0),
                ],
                AuxHeadSpec::Identity,
                0,
            ));
            prev = h;
        }
        specs
    };
    let mut net = Network::<f32>::build(&specs, &[input]).unwrap();
    let mut config = TrainConfig::new(
        TrainMode::ForwardForward {
            label_embed: FfLabelEmbed::OneHot,
            mix_location: FfMixLocation::InputOnly,
        },
        LossSpec::FfGoodness { theta: None },
        OptimizerSpec::adam(3e-3),
        12,
        128,
        5,
    );
    config.metrics_subset = 512;
    train(&mut net, &train_data, Some(&test_data), &config).unwrap();

    // Full-test accuracy and the inter-layer normalization contract.
    let predicted = ff_predict(
        &net,
        &test_data.inputs,
        c,
        FfLabelEmbed::OneHot,
        FfMixLocation::InputOnly,
        None,
    )
    .unwrap();
    let acc = predicted
        .iter()
        .zip(&test_data.labels)
        .filter(|(p, l)| p == l)
        .count() as f64
        / test_data.len() as f64;
    assert!(acc >= 0.90, "forward-forward accuracy {acc:.4} below 0.90 ({source})");

    // The streams each trained layer actually consumed are per-sample unit
    // vectors.
    let (head_in, head_labels) = train_data.head(64);
    let streams = infoplane_core::train::ff_normalized_streams(
        &net,
        &head_in,
        &head_labels,
        c,
        FfLabelEmbed::OneHot,
        None,
    )
    .unwrap();
    assert_eq!(streams.len(), 2);
    let mut nonzero_rows = 0usize;
    let mut total_rows = 0usize;
    for stream in &streams {
        for i in 0..stream.batch() {
            let norm: f64 = stream
                .sample(i)
                .iter()
                .map(|v| (*v as f64) * (*v as f64))
                .sum::<f64>()
                .sqrt();
            total_rows += 1;
            if norm > 0.0 {
                nonzero_rows += 1;
                assert!((norm - 1.0).abs() < 1e-6, "stream row {i} norm {norm}");
            }
        }
    }
    assert!(nonzero_rows == total_rows, "{nonzero_rows}/{total_rows} rows carry activity");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "runtime {elapsed:.0}s exceeds 30min");
    println!(
        "criterion 9: PASS — one-hot goodness training reaches {acc:.4} on {source}; inter-layer activations unit-normalized, {elapsed:.0}s"
    );
}

#[test]
fn criterion_10_dependence_regularizer_prevents_collapse() {
    let _guard = serial();
    let start = Instant::now();
    let train_data = make_rings_dataset(500, 0.1, 100).unwrap();

    let run = |lambda: f64| -> Vec<(usize, f64)> {
        let specs = vec![
            ModuleSpec {
                layers: vec![LayerSpec::new(LayerKind::Dense { input: 2, output: 2 }, 201)],
                head: AuxHeadSpec::Linear { out: 2 },
                head_seed: 202,
                detach_input: false,
            },
            ModuleSpec {
                layers: vec![
                    LayerSpec::new(LayerKind::Dense { input: 2, output: 16 }, 203),
                    LayerSpec::new(LayerKind::ReLU, 0),
                ],
                head: AuxHeadSpec::Linear { out: 2 },
                head_seed: 204,
                detach_input: false,
            },
            ModuleSpec {
                layers: vec![LayerSpec::new(LayerKind::Dense { input: 16, output: 2 }, 205)],
                head: AuxHeadSpec::Identity,
                head_seed: 0,
                detach_input: false,
            },
        ];
        let mut net = Network::<f32>::build(&specs, &[2]).unwrap();
        let loss = if lambda > 0.0 {
            LossSpec::HsicAugmented {
                base: Box::new(LossSpec::CrossEntropy),
                lambda,
                kernel: KernelSpec::rbf_five_sqrt_d(),
                epsilon: 1e-5,
            }
        } else {
            LossSpec::CrossEntropy
        };
        let mut config = TrainConfig::new(
            TrainMode::LayerwiseSimultaneous,
            loss,
            OptimizerSpec::Sgd { lr: 0.1, momentum: 0.9 },
            60,
            64,
            17,
        );
        config.schedule = Schedule { milestones: vec![10, 30], factor: 0.1 };
        config.weight_decay = 0.05;
        config.record_every = Some(1);
        config.eval_subset = 256;
        config.eval_batch = 256;
        let report = train(&mut net, &train_data, None, &config).unwrap();
        report
            .trajectory
            .unwrap()
            .layer_points(0)
            .iter()
            .map(|p| (p.epoch, p.nhsic_xz))
            .collect()
    };

    let baseline = run(0.0);
    let regularized = run(0.05);

    // Baseline: rise-then-fall of the first layer's input dependence.
    let (peak_idx, peak) = baseline
        .iter()
        .enumerate()
        .map(|(i, &(_, v))| (i, v))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    let base_final = baseline.last().unwrap().1;
    assert!(
        peak_idx < baseline.len() - 1,
        "baseline peak must come strictly before the final epoch"
    );
    assert!(
        base_final < 0.9 * peak,
        "baseline final {base_final:.3} not below 0.9 x peak {peak:.3}"
    );

    // Regularized: non-decreasing after epoch 5 within the noise tolerance.
    let mut violations = Vec::new();
    for window in regularized.windows(2) {
        let (e0, v0) = window[0];
        let (e1, v1) = window[1];
        let _ = e0;
        if e1 > 5 && v1 < v0 - 0.02 {
            violations.push((e1, v0, v1));
        }
    }
    assert!(
        violations.is_empty(),
        "regularized trajectory decreased after epoch 5: {violations:?}"
    );

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "criterion 10: PASS — baseline falls to {:.2} of its peak while lambda=0.05 stays non-decreasing after epoch 5 ({} points), {elapsed:.0}s",
        base_final / peak,
        regularized.len()
    );
}

#[test]
fn criterion_11_preset_determinism() {
    let _guard = serial();
    let start = Instant::now();
    let config = infoplane_cli::presets::preset("paper-toy-rings").unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        infoplane_cli::run_experiment(&config, Some(&out), Some(7)).unwrap()
    };
    let a = run("a");
    let b = run("b");

    let traj_a = std::fs::read(a.trajectory.as_ref().unwrap()).unwrap();
    let traj_b = std::fs::read(b.trajectory.as_ref().unwrap()).unwrap();
    assert_eq!(traj_a, traj_b, "trajectory.csv bytes differ");

    let report_a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&a.report).unwrap()).unwrap();
    let report_b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&b.report).unwrap()).unwrap();
    assert_eq!(
        report_a["metrics"], report_b["metrics"],
        "report.json metric arrays differ"
    );

    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "criterion 11: PASS — two preset executions byte-identical ({} trajectory bytes), {elapsed:.0}s",
        traj_a.len()
    );
}

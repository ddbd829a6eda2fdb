//! Rank-collapse toy experiment: a 2x2 linear first layer with a norm-one
//! linear readout, trained layer-wise on the two-ring data with an explicit
//! Frobenius penalty. The penalty drives the column orthogonal to the
//! decision direction to zero, and the input dependence of the
//! representation rises and then falls.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_rings_dataset, signed_labels};
use crate::error::{Error, Result};
use crate::hsic::{compute_gram, hsic_empirical, KernelSpec};
use crate::linalg::Matrix;
use crate::nn::derive_seed;

/// Toy-run settings. `lambda` is the Frobenius penalty weight from the
/// layer-wise objective; the learning rate applies to plain gradient
/// descent with the readout renormalized every step.
#[derive(Debug, Clone, Copy)]
pub struct ToyConfig {
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub n_per_class: usize,
    pub noise_std: f64,
    pub record_every: usize,
    /// Samples used for the dependence estimates along the trajectory.
    pub eval_samples: usize,
    /// RBF bandwidth for the trajectory dependence estimates. The toy data
    /// lives at unit-to-few scale, so the bandwidth sits there too; a much
    /// wider kernel flattens out the collapse signature.
    pub eval_sigma: f64,
    /// Half-width of the uniform weight init.
    pub init_scale: f64,
}

impl ToyConfig {
    pub fn new(lambda: f64, lr: f64, steps: usize, seed: u64) -> Self {
        Self {
            lambda,
            lr,
            steps,
            seed,
            n_per_class: 200,
            noise_std: 0.1,
            record_every: 50,
            eval_samples: 256,
            eval_sigma: 2.0,
            init_scale: 1.0,
        }
    }
}

/// One recorded state of the toy run. The weight matrix is reported in the
/// readout-aligned basis (first output coordinate along `v`), matching how
/// the collapse is measured.
#[derive(Debug, Clone, Copy)]
pub struct ToySnapshot {
    pub step: usize,
    pub w: [[f64; 2]; 2],
    pub v: [f64; 2],
    pub loss: f64,
    pub w_col1_norm: f64,
    pub w_col2_norm: f64,
    pub hsic_xz: f64,
    pub hsic_yz: f64,
}

#[derive(Debug, Clone)]
pub struct ToyTrajectory {
    pub snapshots: Vec<ToySnapshot>,
    pub config: ToyConfig,
}

impl ToyTrajectory {
    pub fn final_snapshot(&self) -> &ToySnapshot {
        self.snapshots.last().expect("trajectory is never empty")
    }

    /// Largest recorded input-dependence value and its index.
    pub fn hsic_xz_peak(&self) -> (usize, f64) {
        self.snapshots
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.hsic_xz))
            .fold((0, f64::NEG_INFINITY), |acc, cur| {
                if cur.1 > acc.1 {
                    cur
                } else {
                    acc
                }
            })
    }
}

/// Gradient descent on
/// `(1/m) sum log(1 + exp(-2 y_i v^T W x_i)) + lambda ||W||_F^2`
/// with `||v|| = 1` restored after every step.
pub fn toy_rank_collapse_experiment(config: &ToyConfig) -> Result<ToyTrajectory> {
    if config.lambda <= 0.0 {
        return Err(Error::Parameter(format!(
            "the penalty weight must be positive, got {}",
            config.lambda
        )));
    }
    if config.steps == 0 || config.record_every == 0 {
        return Err(Error::Parameter("steps and cadence must be positive".into()));
    }
    let data = make_rings_dataset(config.n_per_class, config.noise_std, config.seed)?;
    // The collapse argument rests on the angular symmetry of the ring data;
    // mirror every sample across the x axis (an antithetic draw from the
    // same distribution) so the symmetry holds exactly at finite m.
    let m = 2 * data.len();
    let mut xs: Vec<[f64; 2]> = Vec::with_capacity(m);
    let mut ys: Vec<f64> = Vec::with_capacity(m);
    let signed = signed_labels(&data);
    for i in 0..data.len() {
        let s = data.inputs.sample(i);
        xs.push([s[0] as f64, s[1] as f64]);
        xs.push([s[0] as f64, -(s[1] as f64)]);
        ys.push(signed[i]);
        ys.push(signed[i]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x70_1));
    // Scaled identity init: the representation starts as a faithful copy of
    // the input, both columns carrying equal weight, so the collapse of the
    // symmetry-orthogonal column is visible for every seed. Only the
    // readout direction is random.
    let mut w = [[config.init_scale, 0.0], [0.0, config.init_scale]];
    let mut v: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
    v = [v[0] / nv, v[1] / nv];

    let initial_frob = frob(&w);
    let frob_cap = initial_frob + 2.0 / config.lambda.sqrt();

    let eval_n = config.eval_samples.min(m);
    let mut snapshots = Vec::new();

    for step in 0..=config.steps {
        if step % config.record_every == 0 || step == config.steps {
            let snap = snapshot(step, &w, &v, &xs, &ys, eval_n, config)?;
            if frob(&w) > frob_cap {
                return Err(Error::Numeric(format!(
                    "weight norm {} exceeded the regularization bound {frob_cap} at step {step}",
                    frob(&w)
                )));
            }
            snapshots.push(snap);
        }
        if step == config.steps {
            break;
        }

        // Analytic gradients of the logistic term plus the penalty.
        let mut gw = [[2.0 * config.lambda * w[0][0], 2.0 * config.lambda * w[0][1]], [
            2.0 * config.lambda * w[1][0],
            2.0 * config.lambda * w[1][1],
        ]];
        let mut gv = [0.0f64; 2];
        for (x, &y) in xs.iter().zip(&ys) {
            let wx = [
                w[0][0] * x[0] + w[0][1] * x[1],
                w[1][0] * x[0] + w[1][1] * x[1],
            ];
            let a = v[0] * wx[0] + v[1] * wx[1];
            let sig = 1.0 / (1.0 + (2.0 * y * a).exp());
            let coeff = -2.0 * y * sig / m as f64;
            gv[0] += coeff * wx[0];
            gv[1] += coeff * wx[1];
            gw[0][0] += coeff * v[0] * x[0];
            gw[0][1] += coeff * v[0] * x[1];
            gw[1][0] += coeff * v[1] * x[0];
            gw[1][1] += coeff * v[1] * x[1];
        }
        for (wr, gr) in w.iter_mut().zip(&gw) {
            wr[0] -= config.lr * gr[0];
            wr[1] -= config.lr * gr[1];
        }
        v[0] -= config.lr * gv[0];
        v[1] -= config.lr * gv[1];
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if nv == 0.0 || !nv.is_finite() {
            return Err(Error::Numeric(format!("readout collapsed at step {step}")));
        }
        v = [v[0] / nv, v[1] / nv];
    }
    Ok(ToyTrajectory { snapshots, config: *config })
}

fn frob(w: &[[f64; 2]; 2]) -> f64 {
    (w[0][0] * w[0][0] + w[0][1] * w[0][1] + w[1][0] * w[1][0] + w[1][1] * w[1][1]).sqrt()
}

/// Loss of the toy objective at the current parameters.
pub fn toy_loss(
    w: &[[f64; 2]; 2],
    v: &[f64; 2],
    xs: &[[f64; 2]],
    ys: &[f64],
    lambda: f64,
) -> f64 {
    let m = xs.len() as f64;
    let mut loss = 0.0f64;
    for (x, &y) in xs.iter().zip(ys) {
        let wx = [
            w[0][0] * x[0] + w[0][1] * x[1],
            w[1][0] * x[0] + w[1][1] * x[1],
        ];
        let a = v[0] * wx[0] + v[1] * wx[1];
        // Stable log(1 + exp(-2 y a)).
        let u = -2.0 * y * a;
        loss += if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
    }
    loss / m + lambda * (frob(w) * frob(w))
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    step: usize,
    w: &[[f64; 2]; 2],
    v: &[f64; 2],
    xs: &[[f64; 2]],
    ys: &[f64],
    eval_n: usize,
    config: &ToyConfig,
) -> Result<ToySnapshot> {
    // Rotate output coordinates so v is the first basis vector.
    let v_perp = [-v[1], v[0]];
    let w_aligned = [
        [
            v[0] * w[0][0] + v[1] * w[1][0],
            v[0] * w[0][1] + v[1] * w[1][1],
        ],
        [
            v_perp[0] * w[0][0] + v_perp[1] * w[1][0],
            v_perp[0] * w[0][1] + v_perp[1] * w[1][1],
        ],
    ];
    let col1 = (w_aligned[0][0] * w_aligned[0][0] + w_aligned[1][0] * w_aligned[1][0]).sqrt();
    let col2 = (w_aligned[0][1] * w_aligned[0][1] + w_aligned[1][1] * w_aligned[1][1]).sqrt();

    // Dependence of z = W x with the input and the labels on an evaluation
    // prefix, with the biased estimator.
    let mut x_data = Vec::with_capacity(eval_n * 2);
    let mut z_data = Vec::with_capacity(eval_n * 2);
    let mut y_data = Vec::with_capacity(eval_n * 2);
    for (x, &y) in xs.iter().zip(ys).take(eval_n) {
        x_data.extend_from_slice(x);
        z_data.push(w[0][0] * x[0] + w[0][1] * x[1]);
        z_data.push(w[1][0] * x[0] + w[1][1] * x[1]);
        y_data.extend_from_slice(if y > 0.0 { &[1.0, 0.0] } else { &[0.0, 1.0] });
    }
    let x_mat = Matrix::from_vec(eval_n, 2, x_data)?;
    let z_mat = Matrix::from_vec(eval_n, 2, z_data)?;
    let y_mat = Matrix::from_vec(eval_n, 2, y_data)?;
    let rbf = KernelSpec::rbf_fixed(config.eval_sigma);
    let kx = compute_gram(&x_mat, &rbf)?;
    let kz = compute_gram(&z_mat, &rbf)?;
    let ky = compute_gram(&y_mat, &KernelSpec::Linear)?;
    let hsic_xz = hsic_empirical(&kx, &kz)?.value;
    let hsic_yz = hsic_empirical(&ky, &kz)?.value;

    Ok(ToySnapshot {
        step,
        w: w_aligned,
        v: *v,
        loss: toy_loss(w, v, xs, ys, config.lambda),
        w_col1_norm: col1,
        w_col2_norm: col2,
        hsic_xz,
        hsic_yz,
    })
}

//! Von Mises sampling via Best-Fisher rejection.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws `n` i.i.d. angles in `[-pi, pi)` from a von Mises distribution with
/// mean direction `mu` and concentration `kappa`. `kappa = 0` degenerates to
/// the uniform distribution on the circle.
pub fn sample_von_mises(mu: f64, kappa: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if kappa < 0.0 {
        return Err(Error::Parameter(format!(
            "concentration must be nonnegative, got {kappa}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    if kappa < 1e-9 {
        for _ in 0..n {
            out.push(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
        }
        return Ok(out);
    }

    // Best & Fisher (1979) wrapped-Cauchy envelope.
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);

    for _ in 0..n {
        let f = loop {
            let u1: f64 = rng.random();
            let z = (std::f64::consts::PI * u1).cos();
            let f = (1.0 + r * z) / (r + z);
            let c = kappa * (r - f);
            let u2: f64 = rng.random();
            if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
                break f;
            }
        };
        let u3: f64 = rng.random();
        let angle = if u3 > 0.5 { mu + f.acos() } else { mu - f.acos() };
        out.push(wrap_angle(angle));
    }
    Ok(out)
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if t >= std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

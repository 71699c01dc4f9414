//! Reproducible additive Gaussian noise.
//!
//! Samples come from a ChaCha8 stream keyed by the seed, so a given seed
//! yields the same sequence on every platform and thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{invalid, Result};
use crate::trace::Trace;

/// `count` draws from `N(0, sigma²)` for `seed`.
pub fn gaussian_noise(sigma: f64, seed: u64, count: usize) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; count]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| rng.sample(normal)).collect())
}

/// Copy of `trace` with noise added to the amplitudes.
pub fn add_noise(trace: &Trace, sigma: f64, seed: u64) -> Result<Trace> {
    let noise = gaussian_noise(sigma, seed, trace.len())?;
    let mut out = trace.clone();
    for (a, n) in out.amplitude.iter_mut().zip(noise) {
        *a += n;
    }
    if sigma > 0.0 {
        out = out
            .with_meta("noise_sigma", sigma)
            .with_meta("noise_seed", seed);
    }
    Ok(out)
}

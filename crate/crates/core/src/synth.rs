//! Synthetic run tables drawn from a known law.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::fit::{RunRecord, Technique};
use crate::law::{eval_law, LawCoefficients};
use crate::math::exp10;
use crate::{Error, Result};

/// Dense sizes of the first four and last two reference architectures
/// (15M, 25M, 130M, 370M, 870M, 1.3B).
pub const GRID_SIZES: [u64; 6] = [16_527_360, 27_279_360, 132_163_584, 368_123_904, 872_546_304, 1_308_819_456];

/// Expert counts 1, 2, 4, …, 512.
pub const GRID_EXPERTS: [u64; 10] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512];

/// One record per `(N, E)` pair with `log10 L = law(N, E) + ε`,
/// `ε ~ Normal(0, noise_sigma)`. Records are ordered by `N`, then `E`.
pub fn grid_records(
    coeffs: &LawCoefficients,
    technique: Technique,
    sizes: &[u64],
    experts: &[u64],
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::Domain(alloc::format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::Domain(alloc::format!("{e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sizes.len() * experts.len());
    for &n in sizes {
        for &e in experts {
            let log_loss = eval_law(coeffs, n as f64, e as f64)?;
            let eps = if noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let technique = if e == 1 { Technique::Dense } else { technique };
            out.push(RunRecord { technique, n, e, k: 1, r: 0.5, tokens_seen: 130_000_000_000, loss: exp10(log_loss + eps) });
        }
    }
    Ok(out)
}

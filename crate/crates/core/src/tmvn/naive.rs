use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{unwhiten, verify_draws, SampleChain, SamplerKind};
use crate::error::{Error, Result};
use crate::posterior::TruncatedGaussianSpec;

/// Proposes from the untruncated Gaussian and keeps feasible draws. Exact,
/// but only practical when the feasible set carries substantial mass.
pub fn sample_naive_rejection(
    spec: &TruncatedGaussianSpec,
    count: usize,
    seed: u64,
    max_proposals: u64,
) -> Result<SampleChain> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = spec.rank();
    let mut draws = Vec::with_capacity(count);
    let mut proposals = 0u64;
    while draws.len() < count {
        if proposals >= max_proposals {
            return Err(Error::Sampler(format!(
                "naive rejection kept {} of {count} draws after {proposals} proposals",
                draws.len()
            )));
        }
        proposals += 1;
        let w = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = unwhiten(spec, &w);
        if spec.is_feasible(&z, 0.0) {
            draws.push(z);
        }
    }
    verify_draws(spec, &draws)?;
    let accepted = draws.len() as u64;
    Ok(SampleChain {
        draws,
        xi: None,
        sampler: SamplerKind::NaiveRejection,
        burn_in: 0,
        thinning: 1,
        proposals,
        accepted,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed,
    })
}

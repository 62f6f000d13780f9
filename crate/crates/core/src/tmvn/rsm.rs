use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rand::Rng;

use super::{unwhiten, verify_draws, whiten, SampleChain, SamplerKind};
use crate::error::{Error, Result};
use crate::posterior::TruncatedGaussianSpec;

/// Abort when acceptance is below this after `RSM_PROPOSAL_WINDOW` proposals.
pub const RSM_MIN_ACCEPTANCE: f64 = 1e-6;
pub const RSM_PROPOSAL_WINDOW: u64 = 10_000_000;

/// Rejection sampling from the mode.
///
/// Proposals are `w ~ N(w*, I)` in whitened coordinates, where `w*` is the
/// whitened mode. A feasible proposal is accepted with probability
/// `exp(-w* . (w - w*))`, which never exceeds 1 when `w*` is the projection
/// of the origin onto the feasible set. The draws are exact.
pub fn sample_rsm(
    spec: &TruncatedGaussianSpec,
    mode: &DVector<f64>,
    count: usize,
    seed: u64,
) -> Result<SampleChain> {
    let started = Instant::now();
    let v = spec.max_violation(mode);
    if v > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "mode violates the bounds by {v:.3e}"
        )));
    }
    let w_star = whiten(spec, mode)?;
    let r = w_star.len();
    let q = spec.dim();
    // Rows without trailing zeros; triangular factors make these short.
    let rows: Vec<Vec<f64>> = (0..q)
        .map(|k| {
            let row: Vec<f64> = spec.factor.row(k).iter().copied().collect();
            let len = row.iter().rposition(|v| *v != 0.0).map_or(0, |i| i + 1);
            row[..len].to_vec()
        })
        .collect();
    // Rows are checked most-violated first; the order never changes which
    // proposals are feasible.
    let mut order: Vec<usize> = (0..q).collect();
    let mut hits = vec![0u64; q];
    let mut rejections = 0u64;
    let w_star_sq = w_star.norm_squared();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(count);
    let mut proposals: u64 = 0;
    let mut w = DVector::zeros(r);
    while draws.len() < count {
        for i in 0..r {
            let e: f64 = rng.sample(StandardNormal);
            w[i] = w_star[i] + e;
        }
        proposals += 1;
        if proposals % RSM_PROPOSAL_WINDOW == 0
            && (draws.len() as f64) < RSM_MIN_ACCEPTANCE * proposals as f64
        {
            return Err(Error::LowAcceptance {
                accepted: draws.len() as u64,
                proposals,
                min_rate: RSM_MIN_ACCEPTANCE,
            });
        }
        let violated = order.iter().position(|&k| {
            let z = spec.mean[k] + rows[k].iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
            !(z >= spec.lower[k] && z <= spec.upper[k])
        });
        if let Some(pos) = violated {
            hits[order[pos]] += 1;
            rejections += 1;
            if rejections % 4096 == 0 {
                order.sort_by(|a, b| hits[*b].cmp(&hits[*a]));
            }
            continue;
        }
        let log_ratio = -(w_star.dot(&w) - w_star_sq);
        let u: f64 = rng.random();
        if u.ln() <= log_ratio.min(0.0) {
            draws.push(unwhiten(spec, &w));
        }
    }
    verify_draws(spec, &draws)?;
    let accepted = draws.len() as u64;
    Ok(SampleChain {
        draws,
        xi: None,
        sampler: SamplerKind::Rsm,
        burn_in: 0,
        thinning: 1,
        proposals,
        accepted,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed,
    })
}

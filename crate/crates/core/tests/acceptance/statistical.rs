//! Sampler correctness against independent oracles and ESS calibration.

use std::f64::consts::PI;

use lineqgp::diagnostics::ess;
use lineqgp::posterior::TruncatedGaussianSpec;
use lineqgp::qp::spec_mode;
use lineqgp::tmvn::{sample_gibbs, sample_hmc, sample_rsm, SampleChain};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::oracles::{mean_gap, naive_draws, normal_vec, random_tn_instance, worst_moment_gap};
use crate::{Failure, Outcome};

const DRAWS: usize = 10_000;
const ORACLE_DRAWS: usize = 100_000;
const GIBBS_THINNING: usize = 20;

fn all_samplers(spec: &TruncatedGaussianSpec, seed: u64) -> Result<[SampleChain; 3], Failure> {
    let start = spec_mode(spec)?;
    Ok([
        sample_rsm(spec, &start, DRAWS, seed)?,
        sample_gibbs(spec, &start, DRAWS, 100, GIBBS_THINNING, seed)?,
        sample_hmc(spec, &start, DRAWS, 100, seed)?,
    ])
}

fn min_ess(chain: &SampleChain) -> f64 {
    (0..chain.dim())
        .map(|j| ess(&chain.coordinate(j)))
        .fold(f64::INFINITY, f64::min)
}

pub fn sampler_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let names = ["rsm", "gibbs", "hmc"];
    let mut worst = [0.0f64; 3];
    let mut lowest_ess = [f64::INFINITY; 3];
    for case in 0..10u64 {
        let inst = random_tn_instance(&mut rng);
        let spec = TruncatedGaussianSpec::new(
            inst.mean.clone(),
            inst.cov.clone(),
            inst.lower.clone(),
            inst.upper.clone(),
        )?;
        let oracle = naive_draws(&inst, ORACLE_DRAWS, 1000 + case);
        for (k, chain) in all_samplers(&spec, 2000 + case)?.iter().enumerate() {
            worst[k] = worst[k].max(worst_moment_gap(&chain.draws, &oracle));
            lowest_ess[k] = lowest_ess[k].min(min_ess(chain));
        }
    }
    let detail = (0..3)
        .map(|k| format!("{} worst gap {:.2} se (min ess {:.0})", names[k], worst[k], lowest_ess[k]))
        .collect::<Vec<_>>()
        .join(", ");
    if worst.iter().all(|w| *w <= 3.0) {
        Ok(detail)
    } else {
        Err(Failure(detail))
    }
}

pub fn half_normal() -> Outcome {
    let spec = TruncatedGaussianSpec::new(
        DVector::from_element(1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 0.0),
        DVector::from_element(1, f64::INFINITY),
    )?;
    let target = (2.0 / PI).sqrt();
    let sd = (1.0 - 2.0 / PI).sqrt();
    let names = ["rsm", "gibbs", "hmc"];
    let mut parts = Vec::new();
    let mut ok = true;
    for (k, chain) in all_samplers(&spec, 6)?.iter().enumerate() {
        let gap = mean_gap(&chain.coordinate(0), target, sd);
        ok &= gap <= 3.0;
        parts.push(format!("{} mean {:.4} ({gap:.2} se)", names[k], chain.mean()[0]));
    }
    let detail = format!("target {target:.4}: {}", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(Failure(detail))
    }
}

pub fn ess_calibration() -> Outcome {
    let n = DRAWS;
    let phi: f64 = 0.9;
    let ar_target = n as f64 * (1.0 - phi) / (1.0 + phi);
    let mut iid_worst = 0.0f64;
    let mut ar_worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(110 + seed);
        let iid: Vec<f64> = normal_vec(&mut rng, n).iter().copied().collect();
        iid_worst = iid_worst.max((ess(&iid) / n as f64 - 1.0).abs());

        let e = normal_vec(&mut rng, n);
        let mut ar = Vec::with_capacity(n);
        // Stationary start.
        let mut x = e[0] / (1.0 - phi * phi).sqrt();
        ar.push(x);
        for t in 1..n {
            x = phi * x + e[t];
            ar.push(x);
        }
        ar_worst = ar_worst.max((ess(&ar) / ar_target - 1.0).abs());
    }
    let detail = format!(
        "iid worst relative error {:.1}% (limit 10%), AR(0.9) worst {:.1}% of {ar_target:.0} (limit 30%)",
        100.0 * iid_worst,
        100.0 * ar_worst
    );
    if iid_worst <= 0.1 && ar_worst <= 0.3 {
        Ok(detail)
    } else {
        Err(Failure(detail))
    }
}

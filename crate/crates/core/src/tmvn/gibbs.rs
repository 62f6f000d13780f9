use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::univariate::truncated_normal;
use super::{check_start, verify_draws, whiten, SampleChain, SamplerKind};
use crate::error::{Error, Result};
use crate::posterior::TruncatedGaussianSpec;

/// Coordinate-wise Gibbs sampler in whitened coordinates.
///
/// With `z = mean + F w` the target is a standard normal in `w` restricted
/// to the polytope `lower <= mean + F w <= upper`, so every full conditional
/// is a univariate standard normal truncated to the intersection of the
/// intervals allowed by each row. One sweep updates every coordinate of `w`
/// once; a draw is stored every `thinning` sweeps after `burn_in * thinning`
/// sweeps. Works for rank-deficient factors and for any number of rows.
pub fn sample_gibbs(
    spec: &TruncatedGaussianSpec,
    start: &nalgebra::DVector<f64>,
    count: usize,
    burn_in: usize,
    thinning: usize,
    seed: u64,
) -> Result<SampleChain> {
    let started = Instant::now();
    check_start(spec, start)?;
    if thinning == 0 {
        return Err(Error::InvalidArgument("thinning must be at least 1".into()));
    }
    let f = &spec.factor;
    let (q, r) = f.shape();
    let mut w = whiten(spec, start)?;
    // Bounds on F w.
    let lo: Vec<f64> = (0..q).map(|k| spec.lower[k] - spec.mean[k]).collect();
    let hi: Vec<f64> = (0..q).map(|k| spec.upper[k] - spec.mean[k]).collect();
    // Nonzero entries of each column with their reciprocals, stored
    // contiguously for the inner loop.
    let mut columns: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(r);
    for j in 0..r {
        let (mut rows, mut vals, mut inv) = (Vec::new(), Vec::new(), Vec::new());
        for (k, v) in f.column(j).iter().enumerate() {
            if *v != 0.0 {
                rows.push(k);
                vals.push(*v);
                inv.push(1.0 / *v);
            }
        }
        columns.push((rows, vals, inv));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fw = f * &w;
    let mut draws = Vec::with_capacity(count);
    let total_sweeps = (burn_in + count) * thinning;
    for sweep in 1..=total_sweeps {
        for j in 0..r {
            let (rows, vals, inv) = &columns[j];
            // Allowed step for w_j from each row: lo <= fw + v * step <= hi.
            let mut a = f64::NEG_INFINITY;
            let mut b = f64::INFINITY;
            if rows.len() == q {
                for (((l, h), x), iv) in lo.iter().zip(&hi).zip(fw.iter()).zip(inv) {
                    let s1 = (l - x) * iv;
                    let s2 = (h - x) * iv;
                    // Plain comparisons vectorize; the operands are never NaN.
                    let (p, t) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
                    a = if p > a { p } else { a };
                    b = if t < b { t } else { b };
                }
            } else {
                for (&k, &iv) in rows.iter().zip(inv) {
                    let s1 = (lo[k] - fw[k]) * iv;
                    let s2 = (hi[k] - fw[k]) * iv;
                    a = a.max(s1.min(s2));
                    b = b.min(s1.max(s2));
                }
            }
            let wj = w[j];
            let (a, b) = (wj + a, wj + b);
            if !(a < b) {
                // Interval collapsed through roundoff; stay put.
                continue;
            }
            let t = truncated_normal(&mut rng, 0.0, 1.0, a, b);
            let delta = t - wj;
            if delta != 0.0 {
                if rows.len() == q {
                    for (x, v) in fw.iter_mut().zip(vals) {
                        *x += v * delta;
                    }
                } else {
                    for (&k, &v) in rows.iter().zip(vals) {
                        fw[k] += v * delta;
                    }
                }
                w[j] = t;
            }
        }
        if sweep % thinning == 0 {
            // Refresh the running product to stop roundoff drift.
            fw = f * &w;
            if sweep > burn_in * thinning {
                draws.push(&spec.mean + &fw);
            }
        }
    }
    verify_draws(spec, &draws)?;
    let n = draws.len() as u64;
    Ok(SampleChain {
        draws,
        xi: None,
        sampler: SamplerKind::Gibbs,
        burn_in,
        thinning,
        proposals: 0,
        accepted: n,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed,
    })
}

//! Exact HMC for Gaussians truncated by linear walls.
//!
//! In whitened coordinates the potential is `|w|^2 / 2`, so trajectories are
//! `w(t) = v sin t + x cos t`. Along a trajectory a wall `f . w + g >= 0`
//! takes the value `U cos(t - phi) + g`, whose first downward crossing of 0
//! is found in closed form. The velocity is reflected at each hit.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_start, unwhiten, verify_draws, whiten, SampleChain, SamplerKind, Walls};
use crate::error::{Error, Result};
use crate::posterior::TruncatedGaussianSpec;

pub const MAX_BOUNCES: usize = 10_000;
const TRAVEL_TIME: f64 = FRAC_PI_2;
const TIME_TOL: f64 = 1e-12;

struct Dynamics {
    normals: DMatrix<f64>,
    offsets: Vec<f64>,
    norms_sq: Vec<f64>,
}

impl Dynamics {
    fn new(walls: Walls, r: usize) -> Self {
        let mut normals = DMatrix::zeros(walls.len(), r);
        for (j, f) in walls.normals.iter().enumerate() {
            normals.set_row(j, &f.transpose());
        }
        let norms_sq = walls.normals.iter().map(|f| f.norm_squared()).collect();
        Self {
            normals,
            offsets: walls.offsets,
            norms_sq,
        }
    }

    fn reflect(&self, v: &mut DVector<f64>, j: usize) {
        let f = self.normals.row(j);
        let c = 2.0 * f.transpose().dot(v) / self.norms_sq[j];
        for i in 0..v.len() {
            v[i] -= c * f[i];
        }
    }

    /// Moves `(x, v)` along the harmonic flow for `TRAVEL_TIME`, reflecting
    /// at walls. Returns the number of bounces.
    fn trajectory(&self, x: &mut DVector<f64>, v: &mut DVector<f64>) -> Result<usize> {
        let mut remaining = TRAVEL_TIME;
        let mut bounces = 0usize;
        loop {
            let fx = &self.normals * &*x;
            let fv = &self.normals * &*v;
            // A wall we sit on with outward velocity is hit at t = 0.
            let mut on_wall: Option<usize> = None;
            for j in 0..self.offsets.len() {
                let value = fx[j] + self.offsets[j];
                if value <= TIME_TOL * (1.0 + self.offsets[j].abs())
                    && fv[j] < 0.0
                    && on_wall.map_or(true, |k| fv[j] < fv[k])
                {
                    on_wall = Some(j);
                }
            }
            if let Some(j) = on_wall {
                self.reflect(v, j);
                bounces += 1;
                if bounces > MAX_BOUNCES {
                    return Err(too_many());
                }
                continue;
            }

            let mut hit: Option<(usize, f64)> = None;
            for j in 0..self.offsets.len() {
                let g = self.offsets[j];
                let u = fx[j].hypot(fv[j]);
                if u <= g || u == 0.0 {
                    continue;
                }
                let phi = fv[j].atan2(fx[j]);
                let mut t = phi + (-g / u).clamp(-1.0, 1.0).acos();
                while t <= 0.0 {
                    t += TAU;
                }
                while t > TAU {
                    t -= TAU;
                }
                if t < TIME_TOL || t >= remaining {
                    continue;
                }
                if hit.map_or(true, |(_, best)| t < best) {
                    hit = Some((j, t));
                }
            }
            match hit {
                None => {
                    advance(x, v, remaining);
                    return Ok(bounces);
                }
                Some((j, t)) => {
                    advance(x, v, t);
                    self.reflect(v, j);
                    remaining -= t;
                    bounces += 1;
                    if bounces > MAX_BOUNCES {
                        return Err(too_many());
                    }
                }
            }
        }
    }
}

fn too_many() -> Error {
    Error::Sampler(format!(
        "more than {MAX_BOUNCES} wall bounces in one trajectory; the feasible set is nearly degenerate"
    ))
}

fn advance(x: &mut DVector<f64>, v: &mut DVector<f64>, t: f64) {
    let (s, c) = t.sin_cos();
    let nx = &*x * c + &*v * s;
    let nv = &*v * c - &*x * s;
    *x = nx;
    *v = nv;
}

/// Exact HMC with travel time pi/2. `burn_in` trajectories are discarded.
pub fn sample_hmc(
    spec: &TruncatedGaussianSpec,
    start: &DVector<f64>,
    count: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SampleChain> {
    let started = Instant::now();
    check_start(spec, start)?;
    let mut x = whiten(spec, start)?;
    let r = x.len();
    let dynamics = Dynamics::new(Walls::new(spec), r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(count);
    let mut bounces = 0usize;
    for it in 0..burn_in + count {
        let mut v = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        bounces += dynamics.trajectory(&mut x, &mut v)?;
        if it >= burn_in {
            draws.push(unwhiten(spec, &x));
        }
    }
    log::debug!(
        "hmc: {} trajectories, {:.2} bounces per trajectory",
        burn_in + count,
        bounces as f64 / (burn_in + count).max(1) as f64
    );
    verify_draws(spec, &draws)?;
    let n = draws.len() as u64;
    Ok(SampleChain {
        draws,
        xi: None,
        sampler: SamplerKind::Hmc,
        burn_in,
        thinning: 1,
        proposals: 0,
        accepted: n,
        wall_seconds: started.elapsed().as_secs_f64(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_normal_moments() {
        let spec = TruncatedGaussianSpec::new(
            DVector::zeros(1),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DVector::from_element(1, f64::INFINITY),
        )
        .unwrap();
        let chain = sample_hmc(&spec, &DVector::from_element(1, 0.5), 20_000, 100, 9).unwrap();
        let xs = chain.coordinate(0);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        let pi = std::f64::consts::PI;
        assert!((m - (2.0 / pi).sqrt()).abs() < 0.02, "{m}");
        assert!((v - (1.0 - 2.0 / pi)).abs() < 0.02, "{v}");
    }

    #[test]
    fn starts_on_a_wall() {
        let spec = TruncatedGaussianSpec::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]),
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        let chain = sample_hmc(&spec, &DVector::from_vec(vec![0.5, 0.0]), 2000, 10, 4).unwrap();
        assert!(chain.draws.iter().all(|d| spec.is_feasible(d, 1e-10)));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = TruncatedGaussianSpec::new(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::from_element(2, -0.3),
            DVector::from_element(2, 0.3),
        )
        .unwrap();
        let a = sample_hmc(&spec, &DVector::zeros(2), 300, 5, 2).unwrap();
        let b = sample_hmc(&spec, &DVector::zeros(2), 300, 5, 2).unwrap();
        assert_eq!(a.draws, b.draws);
    }
}

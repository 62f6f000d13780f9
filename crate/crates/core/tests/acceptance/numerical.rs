//! Conditioning paths and the constrained mode.

use lineqgp::basis::KnotGrid;
use lineqgp::constraints::{ComposeForm, Direction, LinearConstraintSystem};
use lineqgp::kernel::{KernelFamily, KernelSpec};
use lineqgp::posterior::{condition, condition_woodbury, ConditionedGaussian};
use lineqgp::qp::solve_map;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::oracles::{
    feasible_points, kkt_residual, normal_mat, normal_vec, one_sided, projected_gradient_map,
};
use crate::{Failure, Outcome};

fn rel_gap_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

fn rel_gap_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-300)
}

pub fn conditioning_paths() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let families = [KernelFamily::SquaredExponential, KernelFamily::Matern52, KernelFamily::Matern32];
    let (mut mean_gap, mut cov_gap) = (0.0f64, 0.0f64);
    let (mut limit_mean, mut limit_cov) = (0.0f64, 0.0f64);
    let mut largest = (0, 0);
    for _ in 0..50 {
        let dims = if rng.random_bool(0.5) {
            vec![rng.random_range(2..=12usize)]
        } else {
            let a = rng.random_range(2..=4usize);
            vec![a, rng.random_range(2..=12 / a)]
        };
        let d = dims.len();
        let grid = KnotGrid::new(dims)?;
        let kernel = KernelSpec::new(
            families[rng.random_range(0..3)],
            rng.random_range(0.5..2.0),
            (0..d).map(|_| rng.random_range(0.1..1.0)).collect(),
        )?;
        let gram = kernel.gram(&grid.knot_points())?;
        let n = rng.random_range(1..=300usize);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let phi = grid.design_matrix(&xs)?;
        let y = normal_vec(&mut rng, n);
        let tau2 = 10f64.powf(rng.random_range(-3.0..0.0));
        largest = largest.max((grid.total_knots(), n));

        let direct = condition(&gram, &phi, &y, tau2)?;
        let low_rank = condition_woodbury(&gram, &phi, &y, tau2)?;
        mean_gap = mean_gap.max(rel_gap_vec(&direct.mean, &low_rank.mean));
        cov_gap = cov_gap.max(rel_gap_mat(&direct.cov, &low_rank.cov));

        // Overwhelming noise leaves the prior (0, Gamma).
        let prior_sd = gram.diagonal().amax().sqrt();
        for post in [condition(&gram, &phi, &y, 1e12)?, condition_woodbury(&gram, &phi, &y, 1e12)?] {
            limit_mean = limit_mean.max(post.mean.amax() / prior_sd);
            limit_cov = limit_cov.max(rel_gap_mat(&post.cov, &gram));
        }
    }
    let detail = format!(
        "paths differ by {mean_gap:.1e} (mean) and {cov_gap:.1e} (cov), limit 1e-8; \
         large-noise limit off by {limit_mean:.1e} (mean) and {limit_cov:.1e} (cov), limit 1e-6; \
         largest instance m={} n={}",
        largest.0, largest.1
    );
    if mean_gap <= 1e-8 && cov_gap <= 1e-8 && limit_mean <= 1e-6 && limit_cov <= 1e-6 {
        Ok(detail)
    } else {
        Err(Failure(detail))
    }
}

/// Mode problem with a strictly feasible point for the feasibility walk.
struct MapInstance {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    system: LinearConstraintSystem,
    interior: DVector<f64>,
}

fn map_instance(case: usize, rng: &mut ChaCha8Rng) -> Result<MapInstance, Failure> {
    let m = rng.random_range(2..=10usize);
    let mu = normal_vec(rng, m) * 1.5;
    let a = normal_mat(rng, m, m);
    let sigma = &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.2;
    let ramp = DVector::from_fn(m, |j, _| -0.1 + 0.2 * j as f64 / (m - 1) as f64);
    let grid = KnotGrid::new(vec![m])?;
    let lo = rng.random_range(-1.0..-0.2);
    let hi = rng.random_range(0.2..1.0);
    let (system, interior) = match case % 3 {
        0 => (LinearConstraintSystem::bounds(&grid, lo, hi)?, ramp),
        1 => {
            let parts = [
                LinearConstraintSystem::bounds(&grid, lo, hi)?,
                LinearConstraintSystem::monotone(&grid, 0, Direction::Nondecreasing)?,
            ];
            (LinearConstraintSystem::compose(&parts, ComposeForm::Stacked)?, ramp)
        }
        _ => {
            let rows = rng.random_range(1..=2 * m);
            let lambda = normal_mat(rng, rows, m);
            let xi0 = normal_vec(rng, m) * 0.5;
            let at = &lambda * &xi0;
            let mut lower = vec![f64::NEG_INFINITY; rows];
            let mut upper = vec![f64::INFINITY; rows];
            for k in 0..rows {
                let has_lower = rng.random_bool(0.7);
                if has_lower {
                    lower[k] = at[k] - rng.random_range(0.05..1.0);
                }
                if !has_lower || rng.random_bool(0.5) {
                    upper[k] = at[k] + rng.random_range(0.05..1.0);
                }
            }
            (LinearConstraintSystem::from_dense(&lambda, lower, upper)?, xi0)
        }
    };
    Ok(MapInstance {
        mu,
        sigma,
        system,
        interior,
    })
}

pub fn map_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut kkt, mut vi, mut oracle_gap) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    let mut active_total = 0;
    for case in 0..50 {
        let inst = map_instance(case, &mut rng)?;
        let cg = ConditionedGaussian::from_moments(inst.mu.clone(), inst.sigma.clone())?;
        let qp = solve_map(&cg, &inst.system)?;
        let xi = &qp.mode;
        active_total += qp.active_rows.len();

        let lambda = inst.system.dense_lambda();
        let (normals, offsets) = one_sided(&lambda, &inst.system.lower, &inst.system.upper);
        kkt = kkt.max(kkt_residual(&inst.mu, &inst.sigma, &normals, &offsets, xi, 1e-7));

        // (mu - xi)' Sigma^-1 (z - xi) over feasible z.
        let g = Cholesky::new(inst.sigma.clone())
            .ok_or_else(|| Failure("covariance not positive definite".into()))?
            .solve(&(&inst.mu - xi));
        for z in feasible_points(&normals, &offsets, &inst.interior, 1000, 3.0, 800 + case as u64) {
            vi = vi.max(g.dot(&(z - xi)));
        }

        let reference = projected_gradient_map(&inst.mu, &inst.sigma, &normals, &offsets, 2_000_000);
        oracle_gap = oracle_gap.max((reference - xi).amax());
    }
    let detail = format!(
        "kkt residual {kkt:.1e} (limit 1e-6), variational inequality max {vi:.1e} (limit 1e-8), \
         projected-gradient gap {oracle_gap:.1e} (limit 1e-5), {active_total} active rows over 50 instances"
    );
    if kkt <= 1e-6 && vi <= 1e-8 && oracle_gap <= 1e-5 {
        Ok(detail)
    } else {
        Err(Failure(detail))
    }
}

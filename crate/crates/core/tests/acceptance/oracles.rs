//! Reference computations that share no code with the library.

use lineqgp::diagnostics::ess;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_mat<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Truncated Gaussian `TN(mean, cov, lower, upper)` with box bounds.
#[derive(Debug, Clone)]
pub struct TnInstance {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl TnInstance {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn contains(&self, z: &DVector<f64>) -> bool {
        (0..self.dim()).all(|k| z[k] >= self.lower[k] && z[k] <= self.upper[k])
    }
}

/// Plain rejection from the untruncated Gaussian.
pub fn naive_draws(inst: &TnInstance, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let l = Cholesky::new(inst.cov.clone()).expect("positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z = &inst.mean + &l * normal_vec(&mut rng, inst.dim());
        if inst.contains(&z) {
            out.push(z);
        }
    }
    out
}

fn naive_acceptance(inst: &TnInstance, trials: usize, rng: &mut ChaCha8Rng) -> f64 {
    let l = Cholesky::new(inst.cov.clone()).expect("positive definite").l();
    let hits = (0..trials)
        .filter(|_| inst.contains(&(&inst.mean + &l * normal_vec(rng, inst.dim()))))
        .count();
    hits as f64 / trials as f64
}

/// Random instance with `q <= 4` mixing one-sided, two-sided and absent
/// bounds; resampled until plain rejection keeps at least 5% of proposals.
pub fn random_tn_instance(rng: &mut ChaCha8Rng) -> TnInstance {
    loop {
        let q = rng.random_range(1..=4usize);
        let mean = normal_vec(rng, q);
        let a = normal_mat(rng, q, q);
        let cov = &a * a.transpose() / q as f64 + DMatrix::identity(q, q) * 0.2;
        let mut lower = DVector::from_element(q, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(q, f64::INFINITY);
        for k in 0..q {
            let sd = cov[(k, k)].sqrt();
            match rng.random_range(0..4) {
                0 => lower[k] = mean[k] + sd * rng.random_range(-1.0..0.5),
                1 => upper[k] = mean[k] + sd * rng.random_range(-0.5..1.0),
                2 => {
                    let c = mean[k] + sd * rng.random_range(-1.0..1.0);
                    let w = sd * rng.random_range(0.5..2.0);
                    lower[k] = c - 0.5 * w;
                    upper[k] = c + 0.5 * w;
                }
                _ => {}
            }
        }
        let inst = TnInstance {
            mean,
            cov,
            lower,
            upper,
        };
        if naive_acceptance(&inst, 2000, rng) >= 0.05 {
            return inst;
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Monte Carlo estimate with its standard error; `correlated` series use
/// the effective sample size in place of the length.
fn estimate(series: &[f64], correlated: bool) -> (f64, f64) {
    let (m, v) = mean_var(series);
    let n_eff = if correlated { ess(series) } else { series.len() as f64 };
    (m, (v / n_eff).sqrt())
}

/// Largest standardized gap between sampler and oracle over every mean
/// and every covariance entry `(i <= j)`. Oracle draws are independent.
pub fn worst_moment_gap(sample: &[DVector<f64>], oracle: &[DVector<f64>]) -> f64 {
    let q = sample[0].len();
    let column = |draws: &[DVector<f64>], i: usize| -> Vec<f64> { draws.iter().map(|d| d[i]).collect() };
    let mut worst = 0.0f64;
    let mut means_s = Vec::new();
    let mut means_o = Vec::new();
    for i in 0..q {
        let (ms, ses) = estimate(&column(sample, i), true);
        let (mo, seo) = estimate(&column(oracle, i), false);
        worst = worst.max((ms - mo).abs() / (ses * ses + seo * seo).sqrt());
        means_s.push(ms);
        means_o.push(mo);
    }
    for i in 0..q {
        for j in 0..=i {
            let prod = |draws: &[DVector<f64>], m: &[f64]| -> Vec<f64> {
                draws.iter().map(|d| (d[i] - m[i]) * (d[j] - m[j])).collect()
            };
            let (cs, ses) = estimate(&prod(sample, &means_s), true);
            let (co, seo) = estimate(&prod(oracle, &means_o), false);
            worst = worst.max((cs - co).abs() / (ses * ses + seo * seo).sqrt());
        }
    }
    worst
}

/// Standardized gap between the sample mean of a correlated series and a
/// known value.
pub fn mean_gap(series: &[f64], target: f64, true_sd: f64) -> f64 {
    let (m, _) = mean_var(series);
    (m - target).abs() / (true_sd / ess(series).sqrt())
}

/// Lawson-Hanson non-negative least squares: `min |a x - b|`, `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return x;
    }
    let mut passive = vec![false; n];
    let tol = 1e-13 * a.amax().max(1.0) * b.amax().max(1.0);
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let pick = (0..n)
            .filter(|j| !passive[*j])
            .max_by(|p, q| w[*p].total_cmp(&w[*q]));
        match pick {
            Some(j) if w[j] > tol => passive[j] = true,
            _ => break,
        }
        loop {
            let idx: Vec<usize> = (0..n).filter(|j| passive[*j]).collect();
            let ap = a.select_columns(&idx);
            let zp = ap.svd(true, true).solve(b, 1e-12).expect("svd solve");
            if zp.iter().all(|v| *v > 0.0) {
                x.fill(0.0);
                for (k, j) in idx.iter().enumerate() {
                    x[*j] = zp[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, j) in idx.iter().enumerate() {
                if zp[k] <= 0.0 {
                    alpha = alpha.min(x[*j] / (x[*j] - zp[k]));
                }
            }
            for (k, j) in idx.iter().enumerate() {
                x[*j] += alpha * (zp[k] - x[*j]);
                if x[*j] <= 1e-15 {
                    x[*j] = 0.0;
                    passive[*j] = false;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}

/// `l <= lambda xi <= u` as one-sided rows `normals xi >= offsets`.
pub fn one_sided(lambda: &DMatrix<f64>, lower: &[f64], upper: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    for k in 0..lambda.nrows() {
        if lower[k].is_finite() {
            rows.push(lambda.row(k).clone_owned());
            offsets.push(lower[k]);
        }
        if upper[k].is_finite() {
            rows.push(-lambda.row(k).clone_owned());
            offsets.push(-upper[k]);
        }
    }
    let normals = if rows.is_empty() {
        DMatrix::zeros(0, lambda.ncols())
    } else {
        DMatrix::from_rows(&rows)
    };
    (normals, DVector::from_vec(offsets))
}

/// KKT residual of `xi` for `min (xi-mu)' sigma^-1 (xi-mu) / 2` subject to
/// `normals xi >= offsets`: the largest of the primal infeasibility, the
/// stationarity error with non-negative multipliers fitted on the rows
/// within `act_tol` of tight, and the complementarity products.
pub fn kkt_residual(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
    xi: &DVector<f64>,
    act_tol: f64,
) -> f64 {
    let g = Cholesky::new(sigma.clone()).expect("positive definite").solve(&(xi - mu));
    let slack = normals * xi - offsets;
    let primal = slack.iter().fold(0.0f64, |a, s| a.max(-s));
    let active: Vec<usize> = (0..slack.len()).filter(|k| slack[*k] <= act_tol).collect();
    let a = DMatrix::from_fn(xi.len(), active.len(), |i, c| normals[(active[c], i)]);
    let nu = nnls(&a, &g);
    let stationarity = (&a * &nu - &g).amax();
    let complementarity = active
        .iter()
        .enumerate()
        .fold(0.0f64, |acc, (c, k)| acc.max((nu[c] * slack[*k]).abs()));
    primal.max(stationarity).max(complementarity)
}

/// Accelerated projected-gradient solve of the dual of the same problem;
/// returns the primal point `mu + sigma normals' nu`.
pub fn projected_gradient_map(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
    max_iter: usize,
) -> DVector<f64> {
    let r = normals.nrows();
    if r == 0 {
        return mu.clone();
    }
    let sn = sigma * normals.transpose();
    let h = normals * &sn;
    let lin = offsets - normals * mu;
    let step = 1.0 / h.clone().symmetric_eigenvalues().amax().max(1e-300);
    let primal = |nu: &DVector<f64>| mu + &sn * nu;
    let mut nu = DVector::zeros(r);
    let mut y = nu.clone();
    let mut t = 1.0f64;
    let mut last = primal(&nu);
    for it in 0..max_iter {
        // Gradient of the negated dual at y.
        let grad = &h * &y - &lin;
        let next = (&y - grad * step).map(|v| v.max(0.0));
        let restart = (&y - &next).dot(&(&next - &nu)) > 0.0;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = if restart {
            t = 1.0;
            next.clone()
        } else {
            let y_next = &next + (&next - &nu) * ((t - 1.0) / t_next);
            t = t_next;
            y_next
        };
        nu = next;
        if it % 1000 == 999 {
            let x = primal(&nu);
            if (&x - &last).amax() < 1e-13 {
                return x;
            }
            last = x;
        }
    }
    primal(&nu)
}

/// Hit-and-run walk through `{xi : normals xi >= offsets}` from a feasible
/// start, with moves capped at `reach` per step.
pub fn feasible_points(
    normals: &DMatrix<f64>,
    offsets: &DVector<f64>,
    start: &DVector<f64>,
    count: usize,
    reach: f64,
    seed: u64,
) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = start.clone();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let d = normal_vec(&mut rng, x.len()).normalize();
        let a = normals * &d;
        let slack = normals * &x - offsets;
        let (mut lo, mut hi) = (-reach, reach);
        for k in 0..a.len() {
            if a[k] > 1e-14 {
                lo = lo.max(-slack[k] / a[k]);
            } else if a[k] < -1e-14 {
                hi = hi.min(-slack[k] / a[k]);
            }
        }
        if lo <= hi {
            x += d * rng.random_range(lo..=hi);
        }
        out.push(x.clone());
    }
    out
}

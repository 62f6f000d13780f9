//! Univariate truncated normal draws.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

/// Truncation points beyond this many standard deviations use exponential
/// rejection instead of the inverse CDF.
const TAIL_CUTOFF: f64 = 4.0;
/// Intervals narrower than this (in standard units) use uniform rejection.
const NARROW: f64 = 0.5;

/// Upper-tail probability of the standard normal.
fn q(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

fn q_inv(p: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from `N(mu, sd^2)` restricted to `[a, b]`.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sd: f64, a: f64, b: f64) -> f64 {
    debug_assert!(sd > 0.0 && a <= b);
    let alpha = (a - mu) / sd;
    let beta = (b - mu) / sd;
    mu + sd * standard_truncated(rng, alpha, beta)
}

/// Draw from the standard normal restricted to `[alpha, beta]`.
pub fn standard_truncated<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    if alpha >= beta {
        return alpha;
    }
    if alpha == f64::NEG_INFINITY && beta == f64::INFINITY {
        return rng.sample(StandardNormal);
    }
    if beta <= 0.0 && alpha.is_finite() {
        // Mirror into the upper half line so tails are handled in one place.
        return -standard_truncated(rng, -beta, -alpha);
    }
    if beta - alpha < NARROW {
        return uniform_rejection(rng, alpha, beta);
    }
    if alpha <= 0.0 && beta >= 0.0 {
        // At least 19% of the mass lies in the interval.
        return normal_rejection(rng, alpha, beta);
    }
    if alpha > TAIL_CUTOFF {
        if (beta - alpha) * alpha < 2.0 {
            return uniform_rejection(rng, alpha, beta);
        }
        return exponential_rejection(rng, alpha, beta);
    }
    if beta < -TAIL_CUTOFF {
        return -standard_truncated(rng, -beta, -alpha);
    }
    inverse_cdf(rng, alpha, beta)
}

fn inverse_cdf<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    let u: f64 = rng.random();
    if alpha >= 0.0 {
        // Work with upper-tail probabilities, which keep precision for alpha > 0.
        let (qa, qb) = (q(alpha), q(beta));
        let p = qa - u * (qa - qb);
        q_inv(p).clamp(alpha, beta)
    } else if beta <= 0.0 {
        -inverse_cdf(rng, -beta, -alpha)
    } else {
        // Straddles zero: Phi(x) = q(-x).
        let (pa, pb) = (q(-alpha), q(-beta));
        let p = pa + u * (pb - pa);
        (-q_inv(p)).clamp(alpha, beta)
    }
}

fn normal_rejection<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    loop {
        let x: f64 = rng.sample(StandardNormal);
        if x >= alpha && x <= beta {
            return x;
        }
    }
}

/// Uniform proposal on `[alpha, beta]` accepted with the density ratio
/// against its maximum on the interval.
fn uniform_rejection<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    let peak = if alpha > 0.0 {
        alpha
    } else if beta < 0.0 {
        beta
    } else {
        0.0
    };
    loop {
        let u: f64 = rng.random();
        let x = alpha + u * (beta - alpha);
        let v: f64 = rng.random();
        if v.ln() <= 0.5 * (peak * peak - x * x) {
            return x;
        }
    }
}

/// Robert's translated-exponential rejection for `alpha > 0`.
fn exponential_rejection<R: Rng + ?Sized>(rng: &mut R, alpha: f64, beta: f64) -> f64 {
    let rate = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let x = alpha + exp.sample(rng);
        if x > beta {
            continue;
        }
        let v: f64 = rng.random();
        if v.ln() <= -0.5 * (x - rate) * (x - rate) {
            return x;
        }
    }
}

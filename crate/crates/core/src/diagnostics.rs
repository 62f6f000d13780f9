//! Effective sample size, time-normalized ESS and the Q2 prediction score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tmvn::SampleChain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    /// Integrated autocorrelation time before clamping.
    pub tau: f64,
    /// The series was constant.
    pub degenerate: bool,
    /// The raw estimate fell outside `[1, n]`.
    pub clamped: bool,
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for t in 0..n - lag {
        s += (x[t] - mean) * (x[t + lag] - mean);
    }
    s / n as f64
}

/// Greatest convex minorant of `y` sampled at 0, 1, 2, ...
fn convex_minorant(y: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..y.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // Drop b when it lies on or above the chord from a to i.
            let lhs = (y[b] - y[a]) * (i - a) as f64;
            let rhs = (y[i] - y[a]) * (b - a) as f64;
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; y.len()];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (i, o) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            let t = (i - a) as f64 / (b - a) as f64;
            *o = y[a] + t * (y[b] - y[a]);
        }
    }
    if let Some(&last) = hull.last() {
        out[last] = y[last];
    }
    out
}

/// ESS with Geyer's initial positive, monotone and convex sequence
/// estimators applied to the pair sums `gamma_2k + gamma_2k+1`.
pub fn ess_detail(series: &[f64]) -> EssEstimate {
    let n = series.len();
    if n < 2 {
        return EssEstimate {
            ess: n as f64,
            tau: 1.0,
            degenerate: true,
            clamped: false,
        };
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let gamma0 = autocovariance(series, mean, 0);
    let scale = series.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if !(gamma0 > 1e-28 * scale * scale) {
        return EssEstimate {
            ess: n as f64,
            tau: 1.0,
            degenerate: true,
            clamped: false,
        };
    }
    // Initial positive sequence, computed lazily.
    let max_pairs = n / 2;
    let mut pairs = Vec::new();
    for k in 0..max_pairs {
        let lag = 2 * k;
        if lag + 1 >= n {
            break;
        }
        let g0 = if lag == 0 { gamma0 } else { autocovariance(series, mean, lag) };
        let g1 = autocovariance(series, mean, lag + 1);
        let s = g0 + g1;
        if s <= 0.0 {
            break;
        }
        pairs.push(s);
    }
    // Initial monotone sequence.
    for k in 1..pairs.len() {
        if pairs[k] > pairs[k - 1] {
            pairs[k] = pairs[k - 1];
        }
    }
    let pairs = convex_minorant(&pairs);
    debug_assert!(pairs.iter().all(|p| *p >= -1e-12 * gamma0));
    debug_assert!(pairs.windows(2).all(|w| w[1] <= w[0] + 1e-12 * gamma0));
    let tau = -1.0 + 2.0 * pairs.iter().sum::<f64>() / gamma0;
    let raw = n as f64 / tau;
    let nf = n as f64;
    let (ess, clamped) = if !(tau > 0.0) || raw > nf {
        (nf, true)
    } else if raw < 1.0 {
        (1.0, true)
    } else {
        (raw, false)
    };
    EssEstimate {
        ess,
        tau,
        degenerate: false,
        clamped,
    }
}

pub fn ess(series: &[f64]) -> f64 {
    ess_detail(series).ess
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub per_coordinate: Vec<f64>,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub wall_seconds: f64,
    pub tn_ess: f64,
    pub degenerate_coordinates: Vec<usize>,
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Per-coordinate ESS of a chain, using its knot values when present.
pub fn ess_report(chain: &SampleChain) -> EssReport {
    let draws = chain.xi.as_ref().unwrap_or(&chain.draws);
    let dim = draws.first().map_or(0, |d| d.len());
    let mut per_coordinate = Vec::with_capacity(dim);
    let mut degenerate_coordinates = Vec::new();
    for j in 0..dim {
        let series: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let e = ess_detail(&series);
        if e.degenerate {
            degenerate_coordinates.push(j);
        }
        per_coordinate.push(e.ess);
    }
    let q10 = quantile(&per_coordinate, 0.1);
    let q50 = quantile(&per_coordinate, 0.5);
    let q90 = quantile(&per_coordinate, 0.9);
    let tn_ess = if chain.wall_seconds > 0.0 {
        q10 / chain.wall_seconds
    } else {
        f64::INFINITY
    };
    EssReport {
        per_coordinate,
        q10,
        q50,
        q90,
        wall_seconds: chain.wall_seconds,
        tn_ess,
        degenerate_coordinates,
    }
}

/// `1 - mean((pred - truth)^2) / var(truth)`.
pub fn q2(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InvalidArgument("Q2 needs at least two points".into()));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::InvalidArgument(
            "Q2 is undefined for constant truth".into(),
        ));
    }
    let mse = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n;
    Ok(1.0 - mse / var)
}

//! Stationary covariance functions and their tensor products.
//!
//! A d-dimensional kernel is `variance * prod_k rho(|x_k - x'_k| / l_k)`,
//! where `rho` is the unit-variance 1D correlation of the chosen family.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[serde(rename = "se")]
    SquaredExponential,
    Matern52,
    Matern32,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Matern32 => "matern32",
        }
    }

    /// 1D unit-variance correlation at distance `r >= 0`.
    fn correlation(self, r: f64, lengthscale: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => {
                let s = r / lengthscale;
                (-0.5 * s * s).exp()
            }
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r / lengthscale;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * r / lengthscale;
                (1.0 + s) * (-s).exp()
            }
        }
    }

    /// Derivative of [`Self::correlation`] with respect to the lengthscale.
    fn correlation_dl(self, r: f64, lengthscale: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => {
                let s = r / lengthscale;
                (-0.5 * s * s).exp() * s * s / lengthscale
            }
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r / lengthscale;
                s * s * (1.0 + s) * (-s).exp() / (3.0 * lengthscale)
            }
            KernelFamily::Matern32 => {
                let s = 3f64.sqrt() * r / lengthscale;
                s * s * (-s).exp() / lengthscale
            }
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" => Ok(KernelFamily::SquaredExponential),
            "matern52" => Ok(KernelFamily::Matern52),
            "matern32" => Ok(KernelFamily::Matern32),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel '{other}' (expected se, matern52 or matern32)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Covariance family plus hyperparameters `(variance, l_1, ..., l_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let spec = Self {
            family,
            variance,
            lengthscales,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidArgument(
                "kernel needs at least one lengthscale".into(),
            ));
        }
        if let Some(l) = self
            .lengthscales
            .iter()
            .find(|l| !(**l > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Number of hyperparameters: the variance followed by one lengthscale per dimension.
    pub fn n_hyper(&self) -> usize {
        1 + self.dim()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has dimension {} but kernel expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut k = self.variance;
        for ((a, b), l) in x.iter().zip(y).zip(&self.lengthscales) {
            k *= self.family.correlation((a - b).abs(), *l);
        }
        k
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Covariance matrix `(k(p_i, p_j))_{ij}`.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for p in points {
            self.check_point(p)?;
        }
        let n = points.len();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            g[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.eval_unchecked(&points[i], &points[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// Cross-covariance `(k(a_i, b_j))_{ij}`.
    pub fn cross(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        for p in a.iter().chain(b) {
            self.check_point(p)?;
        }
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval_unchecked(&a[i], &b[j])
        }))
    }

    /// Gram matrix and its derivatives (as in [`Self::grad_hyper`]) over the
    /// tensor product of per-dimension coordinates, flattened with the last
    /// dimension fastest. Each 1D correlation is evaluated once per axis pair.
    pub fn tensor_gram_with_grads(
        &self,
        axes: &[Vec<f64>],
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let d = self.dim();
        if axes.len() != d {
            return Err(Error::Dimension(format!(
                "{} axes for a {d}-dimensional kernel",
                axes.len()
            )));
        }
        let tables = |f: &dyn Fn(f64, f64) -> f64| -> Vec<DMatrix<f64>> {
            axes.iter()
                .zip(&self.lengthscales)
                .map(|(t, l)| DMatrix::from_fn(t.len(), t.len(), |a, b| f((t[a] - t[b]).abs(), *l)))
                .collect()
        };
        let corr = tables(&|r, l| self.family.correlation(r, l));
        let dcorr = tables(&|r, l| self.family.correlation_dl(r, l));
        let n: usize = axes.iter().map(|t| t.len()).product();
        let multi: Vec<Vec<usize>> = (0..n)
            .map(|mut f| {
                let mut idx = vec![0; d];
                for k in (0..d).rev() {
                    idx[k] = f % axes[k].len();
                    f /= axes[k].len();
                }
                idx
            })
            .collect();
        let mut gram = DMatrix::zeros(n, n);
        let mut grads = vec![DMatrix::zeros(n, n); d];
        let mut factors = vec![0.0; d];
        let mut prefix = vec![0.0; d + 1];
        for i in 0..n {
            for j in 0..=i {
                prefix[0] = self.variance;
                for k in 0..d {
                    factors[k] = corr[k][(multi[i][k], multi[j][k])];
                    prefix[k + 1] = prefix[k] * factors[k];
                }
                gram[(i, j)] = prefix[d];
                gram[(j, i)] = prefix[d];
                // Product of the other factors without dividing by factors[k].
                let mut suffix = 1.0;
                for k in (0..d).rev() {
                    let v = prefix[k] * suffix * dcorr[k][(multi[i][k], multi[j][k])];
                    grads[k][(i, j)] = v;
                    grads[k][(j, i)] = v;
                    suffix *= factors[k];
                }
            }
        }
        let mut all = Vec::with_capacity(d + 1);
        all.push(&gram / self.variance);
        all.extend(grads);
        Ok((gram, all))
    }

    /// Derivatives of the Gram matrix with respect to the natural
    /// hyperparameters, ordered `[variance, l_1, ..., l_d]`.
    pub fn grad_hyper(&self, points: &[Vec<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let gram = self.gram(points)?;
        let n = points.len();
        let d = self.dim();
        let mut grads = Vec::with_capacity(1 + d);
        grads.push(&gram / self.variance);
        for k in 0..d {
            let l = self.lengthscales[k];
            let mut g = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    let r = (points[i][k] - points[j][k]).abs();
                    let rho = self.family.correlation(r, l);
                    let v = if rho > 0.0 {
                        gram[(i, j)] / rho * self.family.correlation_dl(r, l)
                    } else {
                        // Underflowed factor: recompute the product without it.
                        let mut rest = self.variance;
                        for (kk, lk) in self.lengthscales.iter().enumerate() {
                            if kk != k {
                                rest *= self
                                    .family
                                    .correlation((points[i][kk] - points[j][kk]).abs(), *lk);
                            }
                        }
                        rest * self.family.correlation_dl(r, l)
                    };
                    g[(i, j)] = v;
                    g[(j, i)] = v;
                }
            }
            grads.push(g);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_gram_matches_pointwise() {
        let axes = vec![vec![0.0, 0.4, 1.0], vec![0.0, 0.5, 1.0], vec![0.0, 1.0]];
        let mut points = Vec::new();
        for a in &axes[0] {
            for b in &axes[1] {
                for c in &axes[2] {
                    points.push(vec![*a, *b, *c]);
                }
            }
        }
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52, KernelFamily::Matern32] {
            let k = KernelSpec::new(family, 1.7, vec![0.3, 0.8, 2.0]).unwrap();
            let (g, dg) = k.tensor_gram_with_grads(&axes).unwrap();
            assert_relative_eq!(g, k.gram(&points).unwrap(), max_relative = 1e-12);
            for (a, b) in dg.iter().zip(k.grad_hyper(&points).unwrap()) {
                assert_relative_eq!(*a, b, max_relative = 1e-12, epsilon = 1e-300);
            }
        }
    }

    fn se(variance: f64, l: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, variance, vec![l]).unwrap()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        m.clone().symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn se_examples() {
        let k = se(0.25, 0.2);
        assert_eq!(k.eval(&[0.3], &[0.3]).unwrap(), 0.25);
        assert_relative_eq!(
            k.eval(&[0.1], &[0.3]).unwrap(),
            0.25 * (-0.5f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn matern52_decays() {
        let k = KernelSpec::new(KernelFamily::Matern52, 10.0, vec![0.1]).unwrap();
        assert!(k.eval(&[0.0], &[5.0]).unwrap() < 1e-10 * 10.0);
    }

    #[test]
    fn matern_closed_forms() {
        let r: f64 = 0.3;
        let l: f64 = 0.2;
        let k52 = KernelSpec::new(KernelFamily::Matern52, 2.0, vec![l]).unwrap();
        let s = 5f64.sqrt() * r / l;
        let expected = 2.0 * (1.0 + s + 5.0 / 3.0 * r * r / (l * l)) * (-s).exp();
        assert_relative_eq!(k52.eval(&[0.0], &[r]).unwrap(), expected, max_relative = 1e-14);
        let k32 = KernelSpec::new(KernelFamily::Matern32, 2.0, vec![l]).unwrap();
        let s = 3f64.sqrt() * r / l;
        assert_relative_eq!(
            k32.eval(&[0.0], &[r]).unwrap(),
            2.0 * (1.0 + s) * (-s).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn dimension_mismatch() {
        let k = se(1.0, 0.2);
        assert!(matches!(k.eval(&[0.1, 0.2], &[0.1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(KernelSpec::new(KernelFamily::Matern32, 0.0, vec![1.0]).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern32, 1.0, vec![-1.0]).is_err());
        assert!(KernelSpec::new(KernelFamily::Matern32, 1.0, vec![]).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("se".parse::<KernelFamily>().unwrap(), KernelFamily::SquaredExponential);
        assert_eq!("Matern52".parse::<KernelFamily>().unwrap(), KernelFamily::Matern52);
        assert_eq!("matern32".parse::<KernelFamily>().unwrap(), KernelFamily::Matern32);
        assert!("rbf".parse::<KernelFamily>().is_err());
    }

    #[test]
    fn gram_small_cases() {
        let k = se(3.0, 0.4);
        let g = k.gram(&[vec![0.5]]).unwrap();
        assert_eq!(g, DMatrix::from_element(1, 1, 3.0));
        let g = k.gram(&[vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(g, DMatrix::from_element(2, 2, 3.0));
    }

    #[test]
    fn gram_is_psd() {
        for family in [
            KernelFamily::SquaredExponential,
            KernelFamily::Matern52,
            KernelFamily::Matern32,
        ] {
            for seed in 0..5 {
                let k = KernelSpec::new(family, 2.0, vec![0.3, 0.7]).unwrap();
                let g = k.gram(&random_points(20, 2, seed)).unwrap();
                assert!(min_eigenvalue(&g) >= -1e-10 * 2.0);
            }
        }
    }

    fn fd_check(spec: &KernelSpec, points: &[Vec<f64>]) {
        let grads = spec.grad_hyper(points).unwrap();
        let h = 1e-6;
        for (j, analytic) in grads.iter().enumerate() {
            let mut plus = spec.clone();
            let mut minus = spec.clone();
            if j == 0 {
                plus.variance += h;
                minus.variance -= h;
            } else {
                plus.lengthscales[j - 1] += h;
                minus.lengthscales[j - 1] -= h;
            }
            let fd = (plus.gram(points).unwrap() - minus.gram(points).unwrap()) / (2.0 * h);
            let scale = fd.norm().max(1e-12);
            assert!(
                (analytic - &fd).norm() / scale < 1e-5,
                "hyper {j}: {} vs {}",
                analytic,
                fd
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pts = random_points(4, 1, 11);
        fd_check(&se(1.3, 0.25), &pts);
        let pts = random_points(6, 3, 12);
        for family in [
            KernelFamily::SquaredExponential,
            KernelFamily::Matern52,
            KernelFamily::Matern32,
        ] {
            fd_check(&KernelSpec::new(family, 0.7, vec![0.3, 0.5, 0.9]).unwrap(), &pts);
        }
    }

    #[test]
    fn gradient_special_cases() {
        let k = se(2.5, 0.3);
        let pts = random_points(5, 1, 3);
        let grads = k.grad_hyper(&pts).unwrap();
        let g = k.gram(&pts).unwrap();
        assert!((&grads[0] - g / 2.5).norm() < 1e-14);
        let single = k.grad_hyper(&[vec![0.4]]).unwrap();
        assert_eq!(single[1][(0, 0)], 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_stationary(
            x in proptest::collection::vec(0.0f64..1.0, 3),
            y in proptest::collection::vec(0.0f64..1.0, 3),
            shift in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52, KernelFamily::Matern32] {
                let k = KernelSpec::new(family, 1.7, vec![0.2, 0.5, 1.1]).unwrap();
                prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
                let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
                let ys: Vec<f64> = y.iter().zip(&shift).map(|(a, s)| a + s).collect();
                let a = k.eval(&x, &y).unwrap();
                let b = k.eval(&xs, &ys).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * 1.7);
            }
        }

        #[test]
        fn product_structure(
            x in proptest::collection::vec(0.0f64..1.0, 3),
            y in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let ls = [0.2, 0.5, 1.1];
            let k = KernelSpec::new(KernelFamily::Matern52, 1.7, ls.to_vec()).unwrap();
            let mut prod = 1.7;
            for i in 0..3 {
                let k1 = KernelSpec::new(KernelFamily::Matern52, 1.0, vec![ls[i]]).unwrap();
                prod *= k1.eval(&[x[i]], &[y[i]]).unwrap();
            }
            prop_assert!((k.eval(&x, &y).unwrap() - prod).abs() <= 1e-14);
        }
    }
}

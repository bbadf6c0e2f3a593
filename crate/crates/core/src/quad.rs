//! Gauss-Hermite quadrature for Gaussian expectations.
//!
//! Used by the ground-truth treatment-effect oracles and by the
//! deterministic ELBO evaluator. Nodes and weights are computed by Newton
//! iteration on the orthonormal Hermite recurrence, which is stable for the
//! node counts used here (up to ~100).

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss-Hermite rule in the physicists'
/// convention: `integral of e^(-x^2) f(x) dx ~= sum_i w_i f(x_i)`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 180 {
        return Err(Error::InvalidConfig(
            "gauss-hermite rule needs 1..=180 nodes".into(),
        ));
    }
    const EPS: f64 = 1e-14;
    const PI_QUARTER_INV: f64 = 0.7511255444649425; // pi^(-1/4)
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => {
                let a = (2 * n + 1) as f64;
                a.sqrt() - 1.85575 * a.powf(-1.0 / 6.0)
            }
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PI_QUARTER_INV;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2
                    - ((j as f64) / (j + 1) as f64).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Ok((nodes, weights))
}

/// A reusable rule for expectations under 1-d Gaussians.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        let (nodes, weights) = gauss_hermite(n)?;
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(z)]` for `z ~ N(mean, var)`. A zero variance collapses to
    /// `f(mean)`.
    pub fn expect(&self, mean: f64, var: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        if var == 0.0 {
            return f(mean);
        }
        let scale = (2.0 * var).sqrt();
        let mut total = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            total += w * f(mean + scale * x);
        }
        total / std::f64::consts::PI.sqrt()
    }

    /// `E[f(a, b)]` for a correlated bivariate Gaussian `(a, b)` with the
    /// given means, variances, and covariance, via the Cholesky factor of
    /// the 2x2 covariance.
    pub fn expect_bivariate(
        &self,
        mean: [f64; 2],
        var: [f64; 2],
        cov: f64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<f64> {
        let l11 = var[0].max(0.0).sqrt();
        let (l21, l22_sq) = if l11 > 0.0 {
            let l21 = cov / l11;
            (l21, var[1] - l21 * l21)
        } else {
            (0.0, var[1])
        };
        if l22_sq < -1e-12 * var[1].abs().max(1.0) {
            return Err(Error::InvalidConfig(
                "covariance matrix is not positive semi-definite".into(),
            ));
        }
        let l22 = l22_sq.max(0.0).sqrt();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut total = 0.0;
        for (&xa, &wa) in self.nodes.iter().zip(&self.weights) {
            let u = std::f64::consts::SQRT_2 * xa;
            let a = mean[0] + l11 * u;
            let mut inner = 0.0;
            for (&xb, &wb) in self.nodes.iter().zip(&self.weights) {
                let v = std::f64::consts::SQRT_2 * xb;
                let b = mean[1] + l21 * u + l22 * v;
                inner += wb * f(a, b);
            }
            total += wa * inner / sqrt_pi;
        }
        Ok(total / sqrt_pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [1, 2, 5, 16, 48, 64] {
            let (_, w) = gauss_hermite(n).unwrap();
            let total: f64 = w.iter().sum();
            assert!(
                (total - std::f64::consts::PI.sqrt()).abs() < 1e-12,
                "n={n}: {total}"
            );
        }
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let gh = GaussHermite::new(32).unwrap();
        let (m, v) = (0.7, 2.3);
        assert!((gh.expect(m, v, |_| 1.0) - 1.0).abs() < 1e-13);
        assert!((gh.expect(m, v, |z| z) - m).abs() < 1e-12);
        assert!((gh.expect(m, v, |z| (z - m) * (z - m)) - v).abs() < 1e-12);
        let fourth = gh.expect(m, v, |z| (z - m).powi(4));
        assert!((fourth - 3.0 * v * v).abs() < 1e-10);
    }

    #[test]
    fn lognormal_mean_matches_closed_form() {
        let gh = GaussHermite::new(64).unwrap();
        let (m, v) = (0.2, 0.8);
        let expected = f64::exp(m + v / 2.0);
        assert!((gh.expect(m, v, f64::exp) - expected).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_collapses_to_point_evaluation() {
        let gh = GaussHermite::new(16).unwrap();
        assert_eq!(gh.expect(1.5, 0.0, |z| z * z), 2.25);
    }

    #[test]
    fn bivariate_expectation_handles_correlation() {
        let gh = GaussHermite::new(32).unwrap();
        // E[a b] = cov + ma*mb.
        let got = gh
            .expect_bivariate([1.0, -2.0], [2.0, 3.0], 0.8, |a, b| a * b)
            .unwrap();
        assert!((got - (0.8 + 1.0 * -2.0)).abs() < 1e-10, "{got}");
    }
}

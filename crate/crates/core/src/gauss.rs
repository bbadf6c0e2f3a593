//! Diagonal Gaussian distributions.
//!
//! The one distribution object used everywhere: the conditional prior, the
//! encoder posterior, and the decoder outcome head are all products of 1-d
//! Gaussians. Provides the log-density, the closed-form KL divergence, and
//! reparameterized sampling.

use crate::error::{Error, Result};

/// Lower bound on every variance.
///
/// Variances produced by networks go through [`positive_variance`]
/// (softplus plus this floor); directly constructed distributions are
/// clamped to it. Degenerate zero-variance configurations are represented
/// by the floor itself rather than a separate point-mass code path.
pub const VARIANCE_FLOOR: f64 = 1e-4;

const LN_TAU: f64 = 1.837877066409345483560659472811; // ln(2*pi)

/// Numerically stable softplus, `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps a raw network output to a valid variance: `softplus(raw) + floor`.
#[inline]
pub fn positive_variance(raw: f64) -> f64 {
    softplus(raw) + VARIANCE_FLOOR
}

/// A product of independent 1-d Gaussians, stored as mean and variance
/// vectors of equal length. All variances are finite and at least
/// [`VARIANCE_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    /// Builds a distribution, clamping sub-floor variances up to the floor.
    /// Negative or non-finite parameters are rejected.
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean has length {}, variance has length {}",
                mean.len(),
                var.len()
            )));
        }
        for (i, &v) in var.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::NonFinite(format!("variance[{i}] = {v}")));
            }
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("mean[{i}] = {}", mean[i])));
        }
        let var = var.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        Ok(Self { mean, var })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Builds a distribution from a mean head and a raw variance head,
    /// applying [`positive_variance`] elementwise.
    pub fn from_raw_variance(mean: Vec<f64>, raw_var: &[f64]) -> Result<Self> {
        let var = raw_var.iter().map(|&u| positive_variance(u)).collect();
        Self::new(mean, var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    fn check_dim(&self, len: usize, what: &str) -> Result<()> {
        if len != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{what} has length {len}, distribution is {}-dimensional",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Log-density at `x`: the sum over dimensions of the 1-d Gaussian
    /// log-density.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len(), "point")?;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let d = x[i] - self.mean[i];
            total += -0.5 * (LN_TAU + self.var[i].ln()) - d * d / (2.0 * self.var[i]);
        }
        Ok(total)
    }

    /// Closed-form KL divergence `KL(self || other)`, summed over
    /// dimensions. Non-negative, zero iff the parameters coincide.
    pub fn kl_divergence(&self, other: &Self) -> Result<f64> {
        self.check_dim(other.dim(), "other distribution")?;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let (vq, vp) = (self.var[i], other.var[i]);
            let dm = self.mean[i] - other.mean[i];
            total += 0.5 * ((vp / vq).ln() + (vq + dm * dm) / vp - 1.0);
        }
        Ok(total)
    }

    /// Reparameterized draw: `mean + sqrt(var) * noise`, with `noise` a
    /// standard-normal vector supplied by the caller.
    pub fn reparameterize(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(noise.len(), "noise")?;
        Ok((0..self.dim())
            .map(|i| self.mean[i] + self.var[i].sqrt() * noise[i])
            .collect())
    }
}

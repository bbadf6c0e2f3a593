//! Seeded synthetic benchmark generator.
//!
//! Each generating model draws a full causal system at random:
//!
//! ```text
//! x_i ~ N(mu_i, sigma_i^2)          covariates (mu in (-0.2, 0.2), sigma in (0, 0.2))
//! z | source ~ N(h(.), beta * k~(.))  1-d latent; source is x, or an extra w
//! t | . ~ Bernoulli(sigmoid(l(.)))  treatment
//! y | z, t ~ N(f_t(z) / C_t, alpha)  outcome, both arms drawn with shared z
//! ```
//!
//! `h`, `k`, `l` are affine with coefficients (and intercepts) drawn uniform
//! in (-1, 1). The raw `k` output can be negative, so the latent variance is
//! `beta * softplus(k(.)) / s_k` with `s_k` the pilot mean of the softplus,
//! making the pilot-average variance equal `beta`. `C_t` is the pilot
//! standard deviation of `f(z)` within treatment group `t`, so the
//! normalized outcome means have variance close to one per group; `alpha`
//! is then a comparable outcome-noise variance in `[0, 1)`. The logistic
//! coefficients are shrunk, when needed, so pilot propensities stay inside
//! `[0.05, 0.95]`; unbounded coefficients occasionally make treatment
//! near-deterministic, which destabilizes every estimator.
//!
//! Three causal settings restrict how treatment is assigned:
//!
//! - `ProxyConfounded`: `l = l(z)` — the latent confounds treatment and
//!   outcome and `x` is only a proxy for it.
//! - `Ignorable`: `l = l(x)` — `x` fully adjusts for confounding.
//! - `Instrumental`: the latent is generated from an extra hidden 1-d
//!   source `w` drawn like a covariate, and `l = l(x, z)` — `x` acts as an
//!   instrument.
//!
//! Outcome functions are either random affine maps (resampled until the
//! slope magnitude is at least 1e-3, so they stay invertible) or strictly
//! monotone networks (positive weights, smooth invertible activation) with
//! a separate function per treatment arm. The nonlinear generator nets also
//! get biases drawn uniformly in the layer init range; with zero biases
//! every net would be an odd function of z and group mean effects would
//! collapse toward zero.

use rand::distr::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::Rng;

use crate::dataset::CausalDataset;
use crate::error::{Error, Result};
use crate::gauss::{sigmoid, softplus};
use crate::nn::{Activation, Mlp};
use crate::quad::GaussHermite;
use crate::rng;

/// How treatment is assigned relative to the latent and the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalSetting {
    /// Unobserved confounder z with proxy x: `l = l(z)`.
    ProxyConfounded,
    /// x is an instrument: z comes from a hidden source w, `l = l(x, z)`.
    Instrumental,
    /// Unconfounded given x: `l = l(x)`.
    Ignorable,
}

impl CausalSetting {
    pub fn name(self) -> &'static str {
        match self {
            CausalSetting::ProxyConfounded => "proxy_confounded",
            CausalSetting::Instrumental => "instrumental",
            CausalSetting::Ignorable => "ignorable",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "proxy_confounded" => Some(CausalSetting::ProxyConfounded),
            "instrumental" => Some(CausalSetting::Instrumental),
            "ignorable" => Some(CausalSetting::Ignorable),
            _ => None,
        }
    }
}

/// Shape of the outcome functions `f_0`, `f_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Linear,
    NonlinearInvertible,
}

impl OutcomeKind {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeKind::Linear => "linear",
            OutcomeKind::NonlinearInvertible => "nonlinear_invertible",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(OutcomeKind::Linear),
            "nonlinear_invertible" => Some(OutcomeKind::NonlinearInvertible),
            _ => None,
        }
    }
}

/// Specification of one random generating model plus the sample to draw
/// from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub setting: CausalSetting,
    pub outcome_kind: OutcomeKind,
    /// Outcome-noise variance, in [0, 1): comparable to the unit-variance
    /// normalized outcome means.
    pub alpha: f64,
    /// Latent-noise level (pilot-average latent variance), >= 0.
    pub beta: f64,
    pub covariate_dim: usize,
    pub n_points: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, setting: CausalSetting, outcome_kind: OutcomeKind) -> Self {
        Self {
            seed,
            setting,
            outcome_kind,
            alpha: 0.2,
            beta: 0.2,
            covariate_dim: 3,
            n_points: 1500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if self.covariate_dim == 0 {
            return Err(Error::InvalidConfig(
                "covariate_dim must be positive".into(),
            ));
        }
        if self.n_points < 3 {
            return Err(Error::InvalidConfig("n_points must be at least 3".into()));
        }
        Ok(())
    }
}

/// An affine map `w . input + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFn {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl AffineFn {
    fn random(dim: usize, r: &mut StdRng) -> Self {
        let u = Uniform::new(-1.0, 1.0).expect("valid range");
        Self {
            weights: (0..dim).map(|_| u.sample(r)).collect(),
            intercept: u.sample(r),
        }
    }

    pub fn eval(&self, input: &[f64]) -> f64 {
        debug_assert_eq!(input.len(), self.weights.len());
        self.intercept
            + self
                .weights
                .iter()
                .zip(input)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }

    fn scale_by(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        self.intercept *= s;
    }
}

/// One arm's outcome function.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeFn {
    Linear { slope: f64, intercept: f64 },
    Monotone(Mlp),
}

impl OutcomeFn {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            OutcomeFn::Linear { slope, intercept } => slope * z + intercept,
            OutcomeFn::Monotone(net) => net.forward(&[z]).expect("1-d net")[0],
        }
    }
}

const PILOT_N: usize = 4000;
const MIN_LINEAR_SLOPE: f64 = 1e-3;
/// logit(0.95): pilot propensities are kept within [0.05, 0.95].
const MAX_LOGIT: f64 = 2.9444389791664403;
const NONLINEAR_HIDDEN: [usize; 3] = [1, 24, 1];

/// A fully realized generating model: sampled coefficient functions plus
/// the pilot-calibrated normalizers.
#[derive(Debug, Clone)]
pub struct GeneratingModel {
    spec: SynthSpec,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    w_mean: f64,
    w_scale: f64,
    h: AffineFn,
    k: AffineFn,
    l: AffineFn,
    f: [OutcomeFn; 2],
    c: [f64; 2],
    /// Pilot mean of `softplus(k(.))`; divides the latent variance so the
    /// pilot-average variance equals beta.
    k_scale: f64,
}

impl GeneratingModel {
    /// Samples the generating functions and calibrates the normalizers on a
    /// pilot draw. Deterministic in the `SynthSpec`.
    pub fn build(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::seeded(rng::derive_seed(spec.seed, 0));
        let m = spec.covariate_dim;
        let u_loc = Uniform::new(-0.2, 0.2).expect("valid range");
        let u_scale = Uniform::new(0.0, 0.2).expect("valid range");

        let x_mean: Vec<f64> = (0..m).map(|_| u_loc.sample(&mut r)).collect();
        let x_scale: Vec<f64> = (0..m).map(|_| u_scale.sample(&mut r)).collect();
        let (w_mean, w_scale) = if spec.setting == CausalSetting::Instrumental {
            (u_loc.sample(&mut r), u_scale.sample(&mut r))
        } else {
            (0.0, 0.0)
        };

        let source_dim = match spec.setting {
            CausalSetting::Instrumental => 1,
            _ => m,
        };
        let h = AffineFn::random(source_dim, &mut r);
        let k = AffineFn::random(source_dim, &mut r);
        let l_dim = match spec.setting {
            CausalSetting::ProxyConfounded => 1,
            CausalSetting::Ignorable => m,
            CausalSetting::Instrumental => m + 1,
        };
        let l = AffineFn::random(l_dim, &mut r);

        let f = match spec.outcome_kind {
            OutcomeKind::Linear => {
                let u = Uniform::new(-1.0, 1.0).expect("valid range");
                let draw_linear = |r: &mut StdRng| loop {
                    let slope: f64 = u.sample(r);
                    let intercept = u.sample(r);
                    if slope.abs() >= MIN_LINEAR_SLOPE {
                        return OutcomeFn::Linear { slope, intercept };
                    }
                };
                [draw_linear(&mut r), draw_linear(&mut r)]
            }
            OutcomeKind::NonlinearInvertible => {
                let draw_net = |r: &mut StdRng| {
                    let seed = r.random::<u64>();
                    let mut net =
                        Mlp::monotone(&NONLINEAR_HIDDEN, Activation::SmoothInvertible, seed)
                            .expect("valid sizes");
                    // Biases drawn in the layer init range; monotonicity is
                    // unaffected (weights stay positive).
                    for layer in 0..NONLINEAR_HIDDEN.len() - 1 {
                        let (fan_in, fan_out) =
                            (NONLINEAR_HIDDEN[layer], NONLINEAR_HIDDEN[layer + 1]);
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let u = Uniform::new(-limit, limit).expect("valid range");
                        let off = net.bias_offset(layer);
                        for j in 0..fan_out {
                            net.params_mut()[off + j] = u.sample(r);
                        }
                    }
                    OutcomeFn::Monotone(net)
                };
                [draw_net(&mut r), draw_net(&mut r)]
            }
        };

        let mut model = Self {
            spec: spec.clone(),
            x_mean,
            x_scale,
            w_mean,
            w_scale,
            h,
            k,
            l,
            f,
            c: [1.0, 1.0],
            k_scale: 1.0,
        };

        // Pilot draw: calibrate the latent-variance scale, bound the
        // logistic coefficients, then normalize the outcome functions per
        // treatment group.
        let pilot_x: Vec<Vec<f64>> = (0..PILOT_N).map(|_| model.draw_x(&mut r)).collect();
        let pilot_source: Vec<Vec<f64>> = if spec.setting == CausalSetting::Instrumental {
            (0..PILOT_N).map(|_| vec![model.draw_w(&mut r)]).collect()
        } else {
            pilot_x.clone()
        };
        model.k_scale = pilot_source
            .iter()
            .map(|s| softplus(model.k.eval(s)))
            .sum::<f64>()
            / PILOT_N as f64;

        let pilot_z: Vec<f64> = pilot_source
            .iter()
            .map(|s| {
                let (mean, var) = model.latent_given_source(s);
                mean + var.sqrt() * rng::standard_normal_vec(&mut r, 1)[0]
            })
            .collect();

        let max_logit = (0..PILOT_N)
            .map(|i| model.treatment_logit(&pilot_x[i], pilot_z[i]).abs())
            .fold(0.0f64, f64::max);
        if max_logit > MAX_LOGIT {
            model.l.scale_by(MAX_LOGIT / max_logit);
        }

        let mut group_f: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for i in 0..PILOT_N {
            let p = sigmoid(model.treatment_logit(&pilot_x[i], pilot_z[i]));
            let t = usize::from(r.random::<f64>() < p);
            group_f[t].push(model.f[t].eval(pilot_z[i]));
        }
        for t in 0..2 {
            let vals = &group_f[t];
            if vals.len() < 10 {
                return Err(Error::Degenerate(format!(
                    "pilot treatment group {t} has only {} units",
                    vals.len()
                )));
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            model.c[t] = var.sqrt();
            if !(model.c[t].is_finite() && model.c[t] > 0.0) {
                return Err(Error::Degenerate(format!(
                    "outcome normalizer for group {t} is {}",
                    model.c[t]
                )));
            }
        }
        Ok(model)
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn outcome_fn(&self, t: u8) -> &OutcomeFn {
        &self.f[t as usize]
    }

    pub fn normalizer(&self, t: u8) -> f64 {
        self.c[t as usize]
    }

    pub fn latent_mean_fn(&self) -> &AffineFn {
        &self.h
    }

    /// The treatment logit function; its input layout is `[z]`, `[x...]`,
    /// or `[x..., z]` for the proxy, ignorable, and instrumental settings.
    pub fn treatment_fn(&self) -> &AffineFn {
        &self.l
    }

    fn draw_x(&self, r: &mut StdRng) -> Vec<f64> {
        (0..self.spec.covariate_dim)
            .map(|i| self.x_mean[i] + self.x_scale[i] * rng::standard_normal_vec(r, 1)[0])
            .collect()
    }

    fn draw_w(&self, r: &mut StdRng) -> f64 {
        self.w_mean + self.w_scale * rng::standard_normal_vec(r, 1)[0]
    }

    /// Mean and variance of the latent given its source (x, or w under the
    /// instrumental setting).
    pub fn latent_given_source(&self, source: &[f64]) -> (f64, f64) {
        let mean = self.h.eval(source);
        let var = self.spec.beta * softplus(self.k.eval(source)) / self.k_scale;
        (mean, var)
    }

    fn treatment_logit(&self, x: &[f64], z: f64) -> f64 {
        match self.spec.setting {
            CausalSetting::ProxyConfounded => self.l.eval(&[z]),
            CausalSetting::Ignorable => self.l.eval(x),
            CausalSetting::Instrumental => {
                let mut input = Vec::with_capacity(x.len() + 1);
                input.extend_from_slice(x);
                input.push(z);
                self.l.eval(&input)
            }
        }
    }

    /// Generating propensity p(t = 1 | x, z).
    pub fn propensity(&self, x: &[f64], z: f64) -> f64 {
        sigmoid(self.treatment_logit(x, z))
    }

    /// Normalized outcome mean `f_t(z) / C_t`.
    pub fn outcome_mean(&self, z: f64, t: u8) -> f64 {
        self.f[t as usize].eval(z) / self.c[t as usize]
    }

    /// Draws the dataset. Deterministic in the `SynthSpec`; uses an RNG stream
    /// independent of the pilot.
    pub fn generate(&self) -> Result<CausalDataset> {
        let spec = &self.spec;
        let mut r = rng::seeded(rng::derive_seed(spec.seed, 1));
        let n = spec.n_points;
        let noise_sd = spec.alpha.sqrt();

        let mut ds = CausalDataset {
            x: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            y0: Vec::with_capacity(n),
            y1: Vec::with_capacity(n),
            mu0: Vec::with_capacity(n),
            mu1: Vec::with_capacity(n),
            z_true: Vec::with_capacity(n),
            propensity: Vec::with_capacity(n),
            split: CausalDataset::assign_equal_thirds(n),
        };
        for _ in 0..n {
            let x = self.draw_x(&mut r);
            let source = if spec.setting == CausalSetting::Instrumental {
                vec![self.draw_w(&mut r)]
            } else {
                x.clone()
            };
            let (z_mean, z_var) = self.latent_given_source(&source);
            let z = z_mean + z_var.sqrt() * rng::standard_normal_vec(&mut r, 1)[0];
            let p = self.propensity(&x, z);
            let t = u8::from(r.random::<f64>() < p);
            let eps = rng::standard_normal_vec(&mut r, 2);
            let mu0 = self.outcome_mean(z, 0);
            let mu1 = self.outcome_mean(z, 1);
            let y0 = mu0 + noise_sd * eps[0];
            let y1 = mu1 + noise_sd * eps[1];

            ds.x.push(x);
            ds.t.push(t);
            ds.y.push(if t == 0 { y0 } else { y1 });
            ds.y0.push(y0);
            ds.y1.push(y1);
            ds.mu0.push(mu0);
            ds.mu1.push(mu1);
            ds.z_true.push(vec![z]);
            ds.propensity.push(p);
        }
        ds.validate()?;
        Ok(ds)
    }

    fn arm_mean_given_source(&self, source: &[f64], t: u8, gh: &GaussHermite) -> f64 {
        let (mean, var) = self.latent_given_source(source);
        gh.expect(mean, var, |z| self.outcome_mean(z, t))
    }

    /// True CATE at a covariate point, by Gauss-Hermite integration over
    /// the latent (and over the hidden source under the instrumental
    /// setting, where the effect is constant in x). The result is checked
    /// against a doubled node count and flagged if the two disagree.
    pub fn true_cate(&self, x: &[f64]) -> Result<f64> {
        let coarse = self.cate_with_nodes(x, 64)?;
        let fine = self.cate_with_nodes(x, 128)?;
        if (coarse - fine).abs() > 1e-5 * coarse.abs().max(1.0) {
            return Err(Error::Quadrature(format!(
                "cate estimates {coarse} and {fine} disagree"
            )));
        }
        Ok(fine)
    }

    fn cate_with_nodes(&self, x: &[f64], nodes: usize) -> Result<f64> {
        if x.len() != self.spec.covariate_dim {
            return Err(Error::ShapeMismatch(format!(
                "expected covariate of length {}, got {}",
                self.spec.covariate_dim,
                x.len()
            )));
        }
        let gh = GaussHermite::new(nodes)?;
        match self.spec.setting {
            CausalSetting::Instrumental => {
                // z is independent of x: integrate over the hidden source.
                let tau = gh.expect(self.w_mean, self.w_scale * self.w_scale, |w| {
                    let source = [w];
                    self.arm_mean_given_source(&source, 1, &gh)
                        - self.arm_mean_given_source(&source, 0, &gh)
                });
                Ok(tau)
            }
            _ => Ok(self.arm_mean_given_source(x, 1, &gh) - self.arm_mean_given_source(x, 0, &gh)),
        }
    }

    /// True ATE `E_x[tau(x)]` by quadrature over the full generating law.
    pub fn true_ate(&self) -> Result<f64> {
        let coarse = self.ate_with_nodes(64)?;
        let fine = self.ate_with_nodes(128)?;
        if (coarse - fine).abs() > 1e-5 * coarse.abs().max(1.0) {
            return Err(Error::Quadrature(format!(
                "ate estimates {coarse} and {fine} disagree"
            )));
        }
        Ok(fine)
    }

    fn ate_with_nodes(&self, nodes: usize) -> Result<f64> {
        let gh = GaussHermite::new(nodes)?;
        match self.spec.setting {
            CausalSetting::Instrumental => {
                self.cate_with_nodes(&vec![0.0; self.spec.covariate_dim], nodes)
            }
            _ => {
                // (h(x), k(x)) is a bivariate Gaussian image of the
                // independent covariates; integrate the inner latent
                // expectation over it.
                let mut mean = [self.h.intercept, self.k.intercept];
                let mut var = [0.0, 0.0];
                let mut cov = 0.0;
                for i in 0..self.spec.covariate_dim {
                    let s2 = self.x_scale[i] * self.x_scale[i];
                    mean[0] += self.h.weights[i] * self.x_mean[i];
                    mean[1] += self.k.weights[i] * self.x_mean[i];
                    var[0] += self.h.weights[i] * self.h.weights[i] * s2;
                    var[1] += self.k.weights[i] * self.k.weights[i] * s2;
                    cov += self.h.weights[i] * self.k.weights[i] * s2;
                }
                gh.expect_bivariate(mean, var, cov, |hv, kraw| {
                    let z_var = self.spec.beta * softplus(kraw) / self.k_scale;
                    gh.expect(hv, z_var, |z| {
                        self.outcome_mean(z, 1) - self.outcome_mean(z, 0)
                    })
                })
            }
        }
    }
}

/// Builds the generating model and draws its dataset in one call.
pub fn generate(spec: &SynthSpec) -> Result<(GeneratingModel, CausalDataset)> {
    let model = GeneratingModel::build(spec)?;
    let ds = model.generate()?;
    Ok((model, ds))
}

/// Across-models outcome normalization: divides every dataset's outcomes by
/// the standard deviation of the models' empirical true ATEs. Returns the
/// factor. Requires at least two datasets with non-identical ATEs.
pub fn normalize_ate_across_models(datasets: &mut [CausalDataset]) -> Result<f64> {
    if datasets.len() < 2 {
        return Err(Error::InvalidConfig(
            "ATE normalization needs at least two datasets".into(),
        ));
    }
    let ates: Vec<f64> = datasets
        .iter()
        .map(|d| d.empirical_ate(&(0..d.n()).collect::<Vec<_>>()))
        .collect();
    let mean = ates.iter().sum::<f64>() / ates.len() as f64;
    let var = ates.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / ates.len() as f64;
    let sd = var.sqrt();
    if !(sd.is_finite() && sd > 0.0) {
        return Err(Error::Degenerate(format!(
            "cross-model ATE standard deviation is {sd}"
        )));
    }
    for ds in datasets.iter_mut() {
        ds.scale_outcomes(sd);
    }
    Ok(sd)
}

#[cfg(test)]
mod tests;

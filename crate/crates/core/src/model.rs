//! The treatment-conditional VAE.
//!
//! The generative model factorizes as `p(y, z | x, t) = p(y | z, t) p(z | x, t)`:
//! a decoder over the outcome, a conditional prior over the latent score, and
//! an approximate posterior (encoder) `q(z | x, y, t)` that sees every
//! observable. Each distribution is a diagonal Gaussian whose mean and raw
//! variance come from a pair of [`Mlp`] heads:
//!
//! - decoder mean `f` and raw variance `g`, inputs `[z..., t]` (or `z` alone
//!   with one head per treatment arm when `separate_decoder_heads` is set);
//! - prior mean `h` and raw variance `k`, inputs `[x...]` when the prior is
//!   balanced, `[x..., t]` otherwise;
//! - encoder mean `r` and raw variance `s`, inputs `[x..., y..., t]`.
//!
//! Treatment enters shared heads as an appended scalar feature in {0, 1};
//! raw variances pass through softplus plus the global floor.
//!
//! With a balanced prior the latent distribution given `x` is the same for
//! both treatment groups, which is what turns the latent into a balanced
//! score and the posterior predictor into a balanced estimator.
//!
//! # The affine equivalence class
//!
//! The observational distribution determines the model only up to an
//! invertible elementwise affine reparameterization of the latent:
//! rescaling prior and encoder outputs by `z -> a.*z + b` while feeding the
//! decoder `(z - b)./a` changes nothing observable. [`IntactVae::apply_affine_equivalence`]
//! constructs that transformed model explicitly; the training objective and
//! every predicted outcome mean are invariant under it, and tests pin this
//! down numerically.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::gauss::{positive_variance, sigmoid, DiagGaussian};
use crate::nn::{Activation, Mlp};
use crate::quad::GaussHermite;
use crate::rng;

/// Architecture and initialization choices for one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub covariate_dim: usize,
    pub latent_dim: usize,
    /// Hidden layer widths shared by all six heads. Empty means every head
    /// is a single affine layer.
    pub hidden_sizes: Vec<usize>,
    /// Hidden activation; output layers are always linear.
    pub activation: Activation,
    /// When set, the prior heads see `x` only, so `p(z|x,0) = p(z|x,1)` by
    /// construction.
    pub balanced_prior: bool,
    /// When set, each treatment arm gets its own decoder heads sharing no
    /// parameters; otherwise `t` is an input feature of shared heads.
    pub separate_decoder_heads: bool,
    /// Train the decoder variance head. When false the outcome variance is
    /// `fixed_noise_var` everywhere and `g` is ignored.
    pub learn_decoder_noise: bool,
    pub fixed_noise_var: f64,
    /// Output bias the decoder variance heads start from. A markedly
    /// negative value starts training with a sharp decoder, so early
    /// gradients explain structure through the latent pathway instead of
    /// inflating the outcome noise; the head then grows to the residual
    /// level. softplus(-2.5) is about 0.08.
    pub noise_head_init: f64,
    /// Seed for parameter initialization; each head draws from its own
    /// derived stream.
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults: three hidden layers of 200 ReLU units per head, balanced
    /// prior, shared decoder heads with a learned noise.
    pub fn new(covariate_dim: usize, latent_dim: usize, seed: u64) -> Self {
        Self {
            covariate_dim,
            latent_dim,
            hidden_sizes: vec![200, 200, 200],
            activation: Activation::Relu,
            balanced_prior: true,
            separate_decoder_heads: false,
            learn_decoder_noise: true,
            fixed_noise_var: 1.0,
            noise_head_init: -2.5,
            seed,
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.hidden_sizes = hidden.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariate_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "covariate and latent dimensions must be positive".into(),
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidConfig("hidden sizes must be positive".into()));
        }
        if !(self.fixed_noise_var.is_finite() && self.fixed_noise_var > 0.0) {
            return Err(Error::InvalidConfig(
                "fixed noise variance must be finite and positive".into(),
            ));
        }
        if !self.noise_head_init.is_finite() {
            return Err(Error::InvalidConfig(
                "noise head init must be finite".into(),
            ));
        }
        Ok(())
    }

    fn head_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(output);
        sizes
    }
}

/// Invertible elementwise affine map of the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        if scale.len() != shift.len() {
            return Err(Error::ShapeMismatch(
                "scale and shift must have equal lengths".into(),
            ));
        }
        if scale.iter().any(|a| !a.is_finite() || *a == 0.0) {
            return Err(Error::InvalidConfig(
                "affine scale entries must be finite and nonzero".into(),
            ));
        }
        if shift.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig(
                "affine shift entries must be finite".into(),
            ));
        }
        Ok(Self { scale, shift })
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&a| a == 1.0) && self.shift.iter().all(|&b| b == 0.0)
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(&v, (&a, &b))| a * v + b)
            .collect()
    }

    pub fn apply_inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(&v, (&a, &b))| (v - b) / a)
            .collect()
    }

    /// The composition `outer . inner` (inner applied first).
    pub fn compose(outer: &AffineMap, inner: &AffineMap) -> AffineMap {
        let scale = outer
            .scale
            .iter()
            .zip(&inner.scale)
            .map(|(&o, &i)| o * i)
            .collect();
        let shift = outer
            .scale
            .iter()
            .zip(inner.shift.iter().zip(&outer.shift))
            .map(|(&o, (&bi, &bo))| o * bi + bo)
            .collect();
        AffineMap { scale, shift }
    }

    /// Pushes a diagonal Gaussian forward through the map.
    fn push_forward(&self, d: &DiagGaussian) -> Result<DiagGaussian> {
        let mean = self.apply(d.mean());
        let var = d
            .var()
            .iter()
            .zip(&self.scale)
            .map(|(&v, &a)| a * a * v)
            .collect();
        DiagGaussian::new(mean, var)
    }
}

/// The ELBO split into its two terms. `elbo` is computed as the literal
/// subtraction `reconstruction - kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub elbo: f64,
}

/// One observed datum, borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub t: u8,
}

/// Gradients of a batch ELBO with respect to every head's parameters,
/// aligned with [`IntactVae::net_names`] / [`IntactVae::nets`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub per_net: Vec<Vec<f64>>,
}

impl ModelGrads {
    fn zeros(model: &IntactVae) -> Self {
        Self {
            per_net: model
                .nets()
                .iter()
                .map(|n| vec![0.0; n.param_count()])
                .collect(),
        }
    }
}

/// Decoder + conditional prior + encoder bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct IntactVae {
    cfg: ModelConfig,
    dec_mean: Vec<Mlp>,
    dec_logvar: Vec<Mlp>,
    prior_mean: Mlp,
    prior_logvar: Mlp,
    enc_mean: Mlp,
    enc_logvar: Mlp,
    latent_map: AffineMap,
}

const OUTCOME_DIM: usize = 1;

impl IntactVae {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.latent_dim;
        let dec_in = if cfg.separate_decoder_heads { n } else { n + 1 };
        let prior_in = if cfg.balanced_prior {
            cfg.covariate_dim
        } else {
            cfg.covariate_dim + 1
        };
        let enc_in = cfg.covariate_dim + OUTCOME_DIM + 1;
        let act = cfg.activation;
        let heads = if cfg.separate_decoder_heads { 2 } else { 1 };

        let mut stream = 0u64;
        let mut next_net = |sizes: &[usize], out: usize| -> Result<Mlp> {
            let seed = rng::derive_seed(cfg.seed, stream);
            stream += 1;
            Mlp::new(&cfg.head_sizes(sizes[0], out), act, seed)
        };

        let mut dec_mean = Vec::with_capacity(heads);
        let mut dec_logvar = Vec::with_capacity(heads);
        for _ in 0..heads {
            dec_mean.push(next_net(&[dec_in], OUTCOME_DIM)?);
        }
        for _ in 0..heads {
            let mut g = next_net(&[dec_in], OUTCOME_DIM)?;
            let last = g.sizes().len() - 2;
            let off = g.bias_offset(last);
            for j in 0..OUTCOME_DIM {
                g.params_mut()[off + j] = cfg.noise_head_init;
            }
            dec_logvar.push(g);
        }
        let prior_mean = next_net(&[prior_in], n)?;
        let prior_logvar = next_net(&[prior_in], n)?;
        let enc_mean = next_net(&[enc_in], n)?;
        let enc_logvar = next_net(&[enc_in], n)?;

        Ok(Self {
            cfg,
            dec_mean,
            dec_logvar,
            prior_mean,
            prior_logvar,
            enc_mean,
            enc_logvar,
            latent_map: AffineMap::identity(n),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn latent_map(&self) -> &AffineMap {
        &self.latent_map
    }

    /// Head names in canonical order. Shared decoder heads give the six
    /// records `f, g, h, k, r, s`; separate heads split `f` and `g` per arm.
    pub fn net_names(&self) -> Vec<&'static str> {
        if self.cfg.separate_decoder_heads {
            vec!["f0", "f1", "g0", "g1", "h", "k", "r", "s"]
        } else {
            vec!["f", "g", "h", "k", "r", "s"]
        }
    }

    pub fn nets(&self) -> Vec<&Mlp> {
        let mut nets: Vec<&Mlp> = Vec::new();
        nets.extend(self.dec_mean.iter());
        nets.extend(self.dec_logvar.iter());
        nets.push(&self.prior_mean);
        nets.push(&self.prior_logvar);
        nets.push(&self.enc_mean);
        nets.push(&self.enc_logvar);
        nets
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        let mut nets: Vec<&mut Mlp> = Vec::new();
        nets.extend(self.dec_mean.iter_mut());
        nets.extend(self.dec_logvar.iter_mut());
        nets.push(&mut self.prior_mean);
        nets.push(&mut self.prior_logvar);
        nets.push(&mut self.enc_mean);
        nets.push(&mut self.enc_logvar);
        nets
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    fn check_t(t: u8) -> Result<()> {
        if t > 1 {
            return Err(Error::InvalidConfig(format!(
                "treatment must be 0 or 1, got {t}"
            )));
        }
        Ok(())
    }

    fn encoder_input(&self, x: &[f64], y: &[f64], t: u8) -> Result<Vec<f64>> {
        Self::check_t(t)?;
        if x.len() != self.cfg.covariate_dim || y.len() != OUTCOME_DIM {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects x of length {} and y of length {OUTCOME_DIM}, got {} and {}",
                self.cfg.covariate_dim,
                x.len(),
                y.len()
            )));
        }
        let mut input = Vec::with_capacity(x.len() + y.len() + 1);
        input.extend_from_slice(x);
        input.extend_from_slice(y);
        input.push(t as f64);
        Ok(input)
    }

    fn prior_input(&self, x: &[f64], t: u8) -> Result<Vec<f64>> {
        Self::check_t(t)?;
        if x.len() != self.cfg.covariate_dim {
            return Err(Error::ShapeMismatch(format!(
                "prior expects x of length {}, got {}",
                self.cfg.covariate_dim,
                x.len()
            )));
        }
        let mut input = Vec::with_capacity(x.len() + 1);
        input.extend_from_slice(x);
        if !self.cfg.balanced_prior {
            input.push(t as f64);
        }
        Ok(input)
    }

    fn decoder_input(&self, z: &[f64], t: u8) -> Result<(usize, Vec<f64>)> {
        Self::check_t(t)?;
        if z.len() != self.cfg.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects z of length {}, got {}",
                self.cfg.latent_dim,
                z.len()
            )));
        }
        if self.cfg.separate_decoder_heads {
            Ok((t as usize, z.to_vec()))
        } else {
            let mut input = Vec::with_capacity(z.len() + 1);
            input.extend_from_slice(z);
            input.push(t as f64);
            Ok((0, input))
        }
    }

    /// Encoder distribution `q(z | x, y, t)` (pushed through the latent map).
    pub fn encode(&self, x: &[f64], y: &[f64], t: u8) -> Result<DiagGaussian> {
        let input = self.encoder_input(x, y, t)?;
        let mean = self.enc_mean.forward(&input)?;
        let raw = self.enc_logvar.forward(&input)?;
        self.latent_map
            .push_forward(&DiagGaussian::from_raw_variance(mean, &raw)?)
    }

    /// Conditional prior `p(z | x, t)`; ignores `t` when balanced.
    pub fn prior(&self, x: &[f64], t: u8) -> Result<DiagGaussian> {
        let input = self.prior_input(x, t)?;
        let mean = self.prior_mean.forward(&input)?;
        let raw = self.prior_logvar.forward(&input)?;
        self.latent_map
            .push_forward(&DiagGaussian::from_raw_variance(mean, &raw)?)
    }

    /// Outcome distribution `p(y | z, t)` for a latent in model space (the
    /// inverse latent map is applied before the decoder heads).
    pub fn decode(&self, z: &[f64], t: u8) -> Result<DiagGaussian> {
        let raw_z = self.latent_map.apply_inverse(z);
        let (head, input) = self.decoder_input(&raw_z, t)?;
        let mean = self.dec_mean[head].forward(&input)?;
        if self.cfg.learn_decoder_noise {
            let raw = self.dec_logvar[head].forward(&input)?;
            DiagGaussian::from_raw_variance(mean, &raw)
        } else {
            let var = vec![self.cfg.fixed_noise_var; OUTCOME_DIM];
            DiagGaussian::new(mean, var)
        }
    }

    /// Predicted outcome mean for a latent in model space; the piece of the
    /// decoder the treatment-effect estimators use.
    pub fn decoder_mean(&self, z: &[f64], t: u8) -> Result<Vec<f64>> {
        let raw_z = self.latent_map.apply_inverse(z);
        let (head, input) = self.decoder_input(&raw_z, t)?;
        self.dec_mean[head].forward(&input)
    }

    /// Draws one latent from the conditional prior: a reparameterized base
    /// draw pushed through the latent map, so the composition with
    /// [`IntactVae::decoder_mean`] cancels the map exactly.
    pub fn sample_prior(&self, x: &[f64], t: u8, noise: &[f64]) -> Result<Vec<f64>> {
        let input = self.prior_input(x, t)?;
        let mean = self.prior_mean.forward(&input)?;
        let raw = self.prior_logvar.forward(&input)?;
        let base = DiagGaussian::from_raw_variance(mean, &raw)?.reparameterize(noise)?;
        Ok(self.latent_map.apply(&base))
    }

    /// Draws one latent from the encoder posterior, as [`IntactVae::sample_prior`].
    pub fn sample_posterior(&self, x: &[f64], y: &[f64], t: u8, noise: &[f64]) -> Result<Vec<f64>> {
        let input = self.encoder_input(x, y, t)?;
        let mean = self.enc_mean.forward(&input)?;
        let raw = self.enc_logvar.forward(&input)?;
        let base = DiagGaussian::from_raw_variance(mean, &raw)?.reparameterize(noise)?;
        Ok(self.latent_map.apply(&base))
    }

    /// Returns the model reparameterized by `z -> scale .* z + shift`:
    /// prior and encoder distributions are pushed forward by the map and the
    /// decoder consumes its inverse, so observational behavior is unchanged.
    pub fn apply_affine_equivalence(&self, scale: &[f64], shift: &[f64]) -> Result<Self> {
        if scale.len() != self.cfg.latent_dim || shift.len() != self.cfg.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "scale and shift must have the latent dimension {}",
                self.cfg.latent_dim
            )));
        }
        let map = AffineMap::new(scale.to_vec(), shift.to_vec())?;
        let mut out = self.clone();
        out.latent_map = AffineMap::compose(&map, &self.latent_map);
        Ok(out)
    }

    /// Batch ELBO with reparameterized reconstruction samples and the KL in
    /// closed form. Noise is drawn from `noise_seed` in a fixed order (datum
    /// major, then sample, then latent dimension), so equal seeds give equal
    /// values.
    pub fn elbo(
        &self,
        batch: &[Observation<'_>],
        noise_seed: u64,
        mc_samples: usize,
    ) -> Result<ElboTerms> {
        self.elbo_impl(batch, noise_seed, mc_samples, None)
    }

    /// Like [`IntactVae::elbo`], also accumulating the gradient of the batch
    /// ELBO for every head (prior included).
    pub fn elbo_with_grads(
        &self,
        batch: &[Observation<'_>],
        noise_seed: u64,
        mc_samples: usize,
    ) -> Result<(ElboTerms, ModelGrads)> {
        let mut grads = ModelGrads::zeros(self);
        let terms = self.elbo_impl(batch, noise_seed, mc_samples, Some(&mut grads))?;
        Ok((terms, grads))
    }

    fn elbo_impl(
        &self,
        batch: &[Observation<'_>],
        noise_seed: u64,
        mc_samples: usize,
        mut grads: Option<&mut ModelGrads>,
    ) -> Result<ElboTerms> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig("elbo needs a non-empty batch".into()));
        }
        if mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        let n = self.cfg.latent_dim;
        let heads = self.dec_mean.len();
        // Gradient slot layout mirrors nets(): dec_mean heads, dec_logvar
        // heads, then h, k, r, s.
        let (slot_h, slot_k, slot_r, slot_s) =
            (2 * heads, 2 * heads + 1, 2 * heads + 2, 2 * heads + 3);

        let mut noise = rng::seeded(noise_seed);
        let batch_w = 1.0 / batch.len() as f64;
        let sample_w = 1.0 / mc_samples as f64;

        let mut recon_total = 0.0;
        let mut kl_total = 0.0;

        for (idx, obs) in batch.iter().enumerate() {
            let enc_in = self.encoder_input(obs.x, obs.y, obs.t)?;
            let prior_in = self.prior_input(obs.x, obs.t)?;

            let tr_r = self.enc_mean.forward_trace(&enc_in)?;
            let tr_s = self.enc_logvar.forward_trace(&enc_in)?;
            let tr_h = self.prior_mean.forward_trace(&prior_in)?;
            let tr_k = self.prior_logvar.forward_trace(&prior_in)?;

            let m_q = tr_r.output();
            let u_q = tr_s.output();
            let m_p = tr_h.output();
            let u_p = tr_k.output();
            let v_q: Vec<f64> = u_q.iter().map(|&u| positive_variance(u)).collect();
            let v_p: Vec<f64> = u_p.iter().map(|&u| positive_variance(u)).collect();

            let mut kl = 0.0;
            for d in 0..n {
                let dm = m_q[d] - m_p[d];
                kl += 0.5 * ((v_p[d] / v_q[d]).ln() + (v_q[d] + dm * dm) / v_p[d] - 1.0);
            }

            // Reconstruction term and its pullback to the posterior moments.
            let mut recon = 0.0;
            let mut d_mq_rec = vec![0.0; n];
            let mut d_vq_rec = vec![0.0; n];
            for _ in 0..mc_samples {
                let eps = rng::standard_normal_vec(&mut noise, n);
                let z: Vec<f64> = (0..n).map(|d| m_q[d] + v_q[d].sqrt() * eps[d]).collect();
                let (head, dec_in) = self.decoder_input(&z, obs.t)?;

                let tr_f = self.dec_mean[head].forward_trace(&dec_in)?;
                let m_d = tr_f.output();
                let (v_d, tr_g) = if self.cfg.learn_decoder_noise {
                    let tr_g = self.dec_logvar[head].forward_trace(&dec_in)?;
                    let v: Vec<f64> = tr_g
                        .output()
                        .iter()
                        .map(|&u| positive_variance(u))
                        .collect();
                    (v, Some(tr_g))
                } else {
                    (vec![self.cfg.fixed_noise_var; OUTCOME_DIM], None)
                };

                const LN_TAU: f64 = 1.837877066409345483560659472811;
                for j in 0..OUTCOME_DIM {
                    let d = obs.y[j] - m_d[j];
                    recon += sample_w * (-0.5 * (LN_TAU + v_d[j].ln()) - d * d / (2.0 * v_d[j]));
                }

                if let Some(g) = grads.as_deref_mut() {
                    let w = batch_w * sample_w;
                    let cot_f: Vec<f64> = (0..OUTCOME_DIM)
                        .map(|j| w * (obs.y[j] - m_d[j]) / v_d[j])
                        .collect();
                    let mut d_z = Vec::new();
                    self.dec_mean[head].backward_from_trace_into(
                        &tr_f,
                        &cot_f,
                        &mut g.per_net[head],
                        &mut d_z,
                    )?;

                    if let Some(tr_g) = &tr_g {
                        let cot_g: Vec<f64> = (0..OUTCOME_DIM)
                            .map(|j| {
                                let diff = obs.y[j] - m_d[j];
                                let d_v = -0.5 / v_d[j] + diff * diff / (2.0 * v_d[j] * v_d[j]);
                                w * d_v * sigmoid(tr_g.output()[j])
                            })
                            .collect();
                        let mut d_z_g = Vec::new();
                        self.dec_logvar[head].backward_from_trace_into(
                            tr_g,
                            &cot_g,
                            &mut g.per_net[heads + head],
                            &mut d_z_g,
                        )?;
                        for (dz, gi) in d_z.iter_mut().zip(&d_z_g) {
                            *dz += gi;
                        }
                    }

                    // Reparameterization pullback: z = m_q + sqrt(v_q) * eps.
                    // d_z carries the batch and sample weights already.
                    for d in 0..n {
                        d_mq_rec[d] += d_z[d];
                        d_vq_rec[d] += d_z[d] * eps[d] / (2.0 * v_q[d].sqrt());
                    }
                }
            }

            if !(recon.is_finite() && kl.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "elbo terms at batch datum {idx}: reconstruction {recon}, kl {kl}"
                )));
            }
            recon_total += recon;
            kl_total += kl;

            if let Some(g) = grads.as_deref_mut() {
                // KL contributions; elbo = recon - kl so these enter negated.
                let mut cot_mq = vec![0.0; n];
                let mut cot_vq = vec![0.0; n];
                let mut cot_mp = vec![0.0; n];
                let mut cot_vp = vec![0.0; n];
                for d in 0..n {
                    let dm = m_q[d] - m_p[d];
                    cot_mq[d] = d_mq_rec[d] - batch_w * dm / v_p[d];
                    cot_vq[d] = d_vq_rec[d] - batch_w * 0.5 * (1.0 / v_p[d] - 1.0 / v_q[d]);
                    cot_mp[d] = batch_w * dm / v_p[d];
                    cot_vp[d] =
                        -batch_w * 0.5 * (1.0 / v_p[d] - (v_q[d] + dm * dm) / (v_p[d] * v_p[d]));
                }
                let cot_uq: Vec<f64> = (0..n).map(|d| cot_vq[d] * sigmoid(u_q[d])).collect();
                let cot_up: Vec<f64> = (0..n).map(|d| cot_vp[d] * sigmoid(u_p[d])).collect();

                let mut scratch = Vec::new();
                for (slot, tr, cot, net) in [
                    (slot_r, &tr_r, &cot_mq, &self.enc_mean),
                    (slot_s, &tr_s, &cot_uq, &self.enc_logvar),
                    (slot_h, &tr_h, &cot_mp, &self.prior_mean),
                    (slot_k, &tr_k, &cot_up, &self.prior_logvar),
                ] {
                    net.backward_from_trace_into(tr, cot, &mut g.per_net[slot], &mut scratch)?;
                }
            }
        }

        let reconstruction = recon_total * batch_w;
        let kl = kl_total * batch_w;
        Ok(ElboTerms {
            reconstruction,
            kl,
            elbo: reconstruction - kl,
        })
    }

    /// Deterministic ELBO for 1-d latents: the reconstruction expectation is
    /// integrated with Gauss-Hermite quadrature instead of sampled. This is
    /// the "infinite sample" evaluator used by the oracle suite.
    pub fn elbo_quadrature(&self, batch: &[Observation<'_>], nodes: usize) -> Result<ElboTerms> {
        if self.cfg.latent_dim != 1 {
            return Err(Error::InvalidConfig(
                "quadrature elbo is only available for 1-d latents".into(),
            ));
        }
        if batch.is_empty() {
            return Err(Error::InvalidConfig("elbo needs a non-empty batch".into()));
        }
        let gh = GaussHermite::new(nodes)?;
        const LN_TAU: f64 = 1.837877066409345483560659472811;

        let mut recon_total = 0.0;
        let mut kl_total = 0.0;
        for obs in batch {
            let enc_in = self.encoder_input(obs.x, obs.y, obs.t)?;
            let prior_in = self.prior_input(obs.x, obs.t)?;
            let m_q = self.enc_mean.forward(&enc_in)?[0];
            let v_q = positive_variance(self.enc_logvar.forward(&enc_in)?[0]);
            let m_p = self.prior_mean.forward(&prior_in)?[0];
            let v_p = positive_variance(self.prior_logvar.forward(&prior_in)?[0]);

            let dm = m_q - m_p;
            kl_total += 0.5 * ((v_p / v_q).ln() + (v_q + dm * dm) / v_p - 1.0);

            let mut fail: Option<Error> = None;
            recon_total += gh.expect(m_q, v_q, |z| {
                if fail.is_some() {
                    return 0.0;
                }
                let point = [z];
                let (head, dec_in) = match self.decoder_input(&point, obs.t) {
                    Ok(v) => v,
                    Err(e) => {
                        fail = Some(e);
                        return 0.0;
                    }
                };
                let m_d = match self.dec_mean[head].forward(&dec_in) {
                    Ok(v) => v,
                    Err(e) => {
                        fail = Some(e);
                        return 0.0;
                    }
                };
                let v_d = if self.cfg.learn_decoder_noise {
                    match self.dec_logvar[head].forward(&dec_in) {
                        Ok(u) => positive_variance(u[0]),
                        Err(e) => {
                            fail = Some(e);
                            return 0.0;
                        }
                    }
                } else {
                    self.cfg.fixed_noise_var
                };
                let d = obs.y[0] - m_d[0];
                -0.5 * (LN_TAU + v_d.ln()) - d * d / (2.0 * v_d)
            });
            if let Some(e) = fail {
                return Err(e);
            }
        }

        let b = batch.len() as f64;
        let reconstruction = recon_total / b;
        let kl = kl_total / b;
        Ok(ElboTerms {
            reconstruction,
            kl,
            elbo: reconstruction - kl,
        })
    }

    /// Writes the checkpoint: a configuration header, the latent map, then
    /// each head's parameter record in canonical order.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "intact-vae-model v1")?;
        let c = &self.cfg;
        writeln!(w, "covariate_dim {}", c.covariate_dim)?;
        writeln!(w, "latent_dim {}", c.latent_dim)?;
        write!(w, "hidden_sizes")?;
        for h in &c.hidden_sizes {
            write!(w, " {h}")?;
        }
        writeln!(w)?;
        writeln!(w, "activation {}", c.activation.name())?;
        writeln!(w, "balanced_prior {}", c.balanced_prior)?;
        writeln!(w, "separate_decoder_heads {}", c.separate_decoder_heads)?;
        writeln!(w, "learn_decoder_noise {}", c.learn_decoder_noise)?;
        writeln!(w, "fixed_noise_var {}", c.fixed_noise_var)?;
        writeln!(w, "noise_head_init {}", c.noise_head_init)?;
        writeln!(w, "seed {}", c.seed)?;
        write!(w, "latent_map")?;
        for a in &self.latent_map.scale {
            write!(w, " {a}")?;
        }
        for b in &self.latent_map.shift {
            write!(w, " {b}")?;
        }
        writeln!(w)?;
        for (name, net) in self.net_names().iter().zip(self.nets()) {
            writeln!(w, "net {name}")?;
            net.write_record(w)?;
        }
        Ok(())
    }

    /// Reads a checkpoint produced by [`IntactVae::write_checkpoint`].
    pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Self> {
        fn next_line<R: BufRead>(r: &mut R, lineno: &mut usize) -> Result<Option<String>> {
            let mut line = String::new();
            *lineno += 1;
            if r.read_line(&mut line)? == 0 {
                return Ok(None);
            }
            Ok(Some(line.trim_end().to_string()))
        }
        fn err(lineno: usize, msg: impl Into<String>) -> Error {
            Error::Parse {
                line: lineno,
                msg: msg.into(),
            }
        }

        let mut lineno = 0usize;
        let header = next_line(r, &mut lineno)?.unwrap_or_default();
        if header != "intact-vae-model v1" {
            return Err(err(lineno, "expected 'intact-vae-model v1' header"));
        }

        let mut fields = std::collections::HashMap::new();
        let latent_map_line;
        loop {
            let line =
                next_line(r, &mut lineno)?.ok_or_else(|| err(lineno, "checkpoint truncated"))?;
            if let Some(rest) = line.strip_prefix("latent_map") {
                latent_map_line = rest.trim().to_string();
                break;
            }
            let mut parts = line.splitn(2, ' ');
            let key = parts.next().unwrap_or_default().to_string();
            let value = parts.next().unwrap_or_default().to_string();
            fields.insert(key, value);
        }

        let get = |key: &str| -> Result<String> {
            fields
                .get(key)
                .cloned()
                .ok_or_else(|| err(lineno, format!("missing field {key}")))
        };
        let cfg = ModelConfig {
            covariate_dim: get("covariate_dim")?
                .parse()
                .map_err(|_| err(lineno, "bad covariate_dim"))?,
            latent_dim: get("latent_dim")?
                .parse()
                .map_err(|_| err(lineno, "bad latent_dim"))?,
            hidden_sizes: get("hidden_sizes")?
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(lineno, "bad hidden_sizes"))?,
            activation: Activation::from_name(&get("activation")?)
                .ok_or_else(|| err(lineno, "unknown activation"))?,
            balanced_prior: get("balanced_prior")?
                .parse()
                .map_err(|_| err(lineno, "bad balanced_prior"))?,
            separate_decoder_heads: get("separate_decoder_heads")?
                .parse()
                .map_err(|_| err(lineno, "bad separate_decoder_heads"))?,
            learn_decoder_noise: get("learn_decoder_noise")?
                .parse()
                .map_err(|_| err(lineno, "bad learn_decoder_noise"))?,
            fixed_noise_var: get("fixed_noise_var")?
                .parse()
                .map_err(|_| err(lineno, "bad fixed_noise_var"))?,
            noise_head_init: get("noise_head_init")?
                .parse()
                .map_err(|_| err(lineno, "bad noise_head_init"))?,
            seed: get("seed")?.parse().map_err(|_| err(lineno, "bad seed"))?,
        };

        let map_vals: Vec<f64> = latent_map_line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(lineno, "bad latent_map"))?;
        if map_vals.len() != 2 * cfg.latent_dim {
            return Err(err(lineno, "latent_map has wrong length"));
        }
        let latent_map = AffineMap::new(
            map_vals[..cfg.latent_dim].to_vec(),
            map_vals[cfg.latent_dim..].to_vec(),
        )?;

        let mut model = Self::new(cfg)?;
        let names = model.net_names();
        let mut loaded = Vec::with_capacity(names.len());
        for name in &names {
            let line =
                next_line(r, &mut lineno)?.ok_or_else(|| err(lineno, "checkpoint truncated"))?;
            if line != format!("net {name}") {
                return Err(err(lineno, format!("expected 'net {name}', got {line:?}")));
            }
            loaded.push(Mlp::read_record(r)?);
        }
        for (slot, net) in model.nets_mut().into_iter().zip(loaded) {
            if slot.sizes() != net.sizes() {
                return Err(Error::ShapeMismatch(
                    "checkpoint network shape disagrees with its config header".into(),
                ));
            }
            *slot = net;
        }
        model.latent_map = latent_map;
        Ok(model)
    }
}

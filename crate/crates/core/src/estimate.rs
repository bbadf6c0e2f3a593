//! Treatment-effect estimators, metrics, and diagnostics.
//!
//! Two predictors over a trained model:
//!
//! - post-treatment: draw latents from the encoder posterior at the factual
//!   observation `(x, y, t)` and evaluate the decoder mean under both
//!   treatment assignments on the same draws;
//! - pre-treatment: the same, but latents come from the conditional prior
//!   given the covariates alone, so no outcome or factual treatment is
//!   consumed. With a balanced prior the draw is identical whichever arm is
//!   nominally queried; with a t-dependent prior each arm's latent comes
//!   from its own conditional `p(z | x, t-hat)`.
//!
//! Per-unit effect estimates average `mc_draws` reparameterized samples;
//! the unit's noise stream is derived from the evaluation seed and the unit
//! index, so predictions do not depend on subsetting or evaluation order.
//!
//! Metrics follow the benchmark convention: the absolute ATE error and the
//! root of the empirical PEHE, with post-treatment metrics computed on the
//! train and validation splits jointly and pre-treatment metrics on the
//! test split. Latent-recovery diagnostics regress the recovered 1-d
//! representation on the true latent within each treatment group.

use crate::dataset::CausalDataset;
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Mlp};
use crate::rng;
use crate::train::{Scaler, TrainedModel};

/// Predicted potential outcomes for a set of units.
#[derive(Debug, Clone)]
pub struct PotentialPredictions {
    /// Dataset indices the rows below refer to.
    pub indices: Vec<usize>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl PotentialPredictions {
    /// Per-unit effect estimates `y1 - y0`.
    pub fn effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    /// Mean effect estimate; exactly the mean of the per-unit estimates.
    pub fn ate(&self) -> f64 {
        self.effects().iter().sum::<f64>() / self.indices.len() as f64
    }
}

fn check_units(ds: &CausalDataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation index set".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.n()) {
        return Err(Error::ShapeMismatch(format!(
            "index {bad} out of range for a dataset of {} units",
            ds.n()
        )));
    }
    Ok(())
}

/// Post-treatment prediction: latents from the encoder posterior at the
/// factual observation, decoder means under both arms on the same draws.
pub fn predict_outcomes_post(
    tm: &TrainedModel,
    ds: &CausalDataset,
    indices: &[usize],
    mc_draws: usize,
    noise_seed: u64,
) -> Result<PotentialPredictions> {
    check_units(ds, indices)?;
    if mc_draws == 0 {
        return Err(Error::InvalidConfig("mc_draws must be positive".into()));
    }
    let n_latent = tm.model.config().latent_dim;
    let mut y0 = Vec::with_capacity(indices.len());
    let mut y1 = Vec::with_capacity(indices.len());
    for &i in indices {
        let x = tm.scaler.scale_x(&ds.x[i]);
        let y = [tm.scaler.scale_y(ds.y[i])];
        let mut r = rng::seeded(rng::derive_seed(noise_seed, i as u64));
        let (mut acc0, mut acc1) = (0.0, 0.0);
        for _ in 0..mc_draws {
            let eps = rng::standard_normal_vec(&mut r, n_latent);
            let z = tm.model.sample_posterior(&x, &y, ds.t[i], &eps)?;
            acc0 += tm.model.decoder_mean(&z, 0)?[0];
            acc1 += tm.model.decoder_mean(&z, 1)?[0];
        }
        y0.push(tm.scaler.unscale_y(acc0 / mc_draws as f64));
        y1.push(tm.scaler.unscale_y(acc1 / mc_draws as f64));
    }
    Ok(PotentialPredictions {
        indices: indices.to_vec(),
        y0,
        y1,
    })
}

/// Pre-treatment prediction: latents from the conditional prior given the
/// covariates; neither the outcome nor the factual treatment is consumed.
pub fn predict_outcomes_pre(
    tm: &TrainedModel,
    ds: &CausalDataset,
    indices: &[usize],
    mc_draws: usize,
    noise_seed: u64,
) -> Result<PotentialPredictions> {
    check_units(ds, indices)?;
    if mc_draws == 0 {
        return Err(Error::InvalidConfig("mc_draws must be positive".into()));
    }
    let n_latent = tm.model.config().latent_dim;
    let mut y0 = Vec::with_capacity(indices.len());
    let mut y1 = Vec::with_capacity(indices.len());
    for &i in indices {
        let x = tm.scaler.scale_x(&ds.x[i]);
        let mut r = rng::seeded(rng::derive_seed(noise_seed, i as u64));
        let (mut acc0, mut acc1) = (0.0, 0.0);
        for _ in 0..mc_draws {
            let eps = rng::standard_normal_vec(&mut r, n_latent);
            let z0 = tm.model.sample_prior(&x, 0, &eps)?;
            acc0 += tm.model.decoder_mean(&z0, 0)?[0];
            let z1 = if tm.model.config().balanced_prior {
                z0
            } else {
                tm.model.sample_prior(&x, 1, &eps)?
            };
            acc1 += tm.model.decoder_mean(&z1, 1)?[0];
        }
        y0.push(tm.scaler.unscale_y(acc0 / mc_draws as f64));
        y1.push(tm.scaler.unscale_y(acc1 / mc_draws as f64));
    }
    Ok(PotentialPredictions {
        indices: indices.to_vec(),
        y0,
        y1,
    })
}

/// Absolute error between the true mean effect (from the noiseless
/// potential-outcome means) and the estimated ATE over the prediction's
/// units.
pub fn ate_error(pred: &PotentialPredictions, ds: &CausalDataset) -> Result<f64> {
    check_units(ds, &pred.indices)?;
    let truth = ds.empirical_ate(&pred.indices);
    Ok((truth - pred.ate()).abs())
}

/// Root of the empirical PEHE: the RMS gap between true and estimated
/// per-unit effects.
pub fn sqrt_pehe(pred: &PotentialPredictions, ds: &CausalDataset) -> Result<f64> {
    check_units(ds, &pred.indices)?;
    let n = pred.indices.len() as f64;
    let sum: f64 = pred
        .indices
        .iter()
        .zip(pred.effects())
        .map(|(&i, est)| {
            let truth = ds.true_effect(i);
            (truth - est) * (truth - est)
        })
        .sum();
    Ok((sum / n).sqrt())
}

/// Ordinary-least-squares fit of one latent recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 points for a fit, got {}",
            xs.len()
        )));
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx / n < 1e-12 {
        return Err(Error::Degenerate(
            "true latent is (numerically) constant; fit undefined".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let resid = y - (slope * x + intercept);
                resid * resid
            })
            .sum();
        1.0 - ss_res / syy
    } else {
        0.0
    };
    Ok(AffineFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Per-treatment-group regression of the recovered latent on the true one:
/// `(fit for t = 0, fit for t = 1)`.
pub fn affine_recovery_fit(
    z_recovered: &[f64],
    z_true: &[f64],
    t: &[u8],
) -> Result<(AffineFit, AffineFit)> {
    if z_recovered.len() != z_true.len() || z_true.len() != t.len() {
        return Err(Error::ShapeMismatch(
            "recovered, true, and treatment vectors must have equal lengths".into(),
        ));
    }
    let mut fits = Vec::with_capacity(2);
    for group in 0..2u8 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = t
            .iter()
            .zip(z_true.iter().zip(z_recovered))
            .filter(|(tt, _)| **tt == group)
            .map(|(_, (zt, zr))| (*zt, *zr))
            .unzip();
        if xs.is_empty() {
            return Err(Error::Degenerate(format!(
                "treatment group {group} is empty"
            )));
        }
        fits.push(ols_fit(&xs, &ys)?);
    }
    Ok((fits[0], fits[1]))
}

/// Recovered 1-d representation: the encoder posterior mean at the factual
/// observation of each unit.
pub fn recovered_latent(
    tm: &TrainedModel,
    ds: &CausalDataset,
    indices: &[usize],
) -> Result<Vec<f64>> {
    check_units(ds, indices)?;
    if tm.model.config().latent_dim != 1 {
        return Err(Error::InvalidConfig(
            "latent recovery diagnostics need a 1-d latent".into(),
        ));
    }
    indices
        .iter()
        .map(|&i| {
            let x = tm.scaler.scale_x(&ds.x[i]);
            let y = [tm.scaler.scale_y(ds.y[i])];
            Ok(tm.model.encode(&x, &y, ds.t[i])?.mean()[0])
        })
        .collect()
}

/// Configuration of the naive regression baseline: an MLP fit of
/// `y ~ (x, t)` by Adam with early stopping on validation MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub standardize_y: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            learning_rate: 1e-3,
            batch_size: 100,
            max_epochs: 300,
            patience: 20,
            seed: 0,
            standardize_y: true,
        }
    }
}

/// Fits the naive regression of the factual outcome on `(x, t)` and
/// predicts both counterfactual arms for every unit. This is the contrast
/// estimator that ignores unobserved confounding.
pub fn naive_regression_baseline(
    ds: &CausalDataset,
    cfg: &BaselineConfig,
) -> Result<PotentialPredictions> {
    let idx_train = ds.indices(crate::dataset::Split::Train);
    let idx_val = ds.indices(crate::dataset::Split::Validation);
    if idx_train.is_empty() || idx_val.is_empty() {
        return Err(Error::InvalidConfig(
            "baseline needs non-empty train and validation splits".into(),
        ));
    }
    let m = ds.covariate_dim();
    let scaler = Scaler::fit(ds, &idx_train, false, cfg.standardize_y);

    let mut sizes = vec![m + 1];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, cfg.activation, rng::derive_seed(cfg.seed, 0))?;
    let mut adam = AdamState::new(
        net.param_count(),
        AdamConfig::with_learning_rate(cfg.learning_rate),
    )?;

    let input = |i: usize| -> Vec<f64> {
        let mut v = Vec::with_capacity(m + 1);
        v.extend_from_slice(&ds.x[i]);
        v.push(ds.t[i] as f64);
        v
    };
    let target = |i: usize| scaler.scale_y(ds.y[i]);

    let val_mse = |net: &Mlp| -> Result<f64> {
        let mut sum = 0.0;
        for &i in &idx_val {
            let pred = net.forward(&input(i))?[0];
            let d = pred - target(i);
            sum += d * d;
        }
        Ok(sum / idx_val.len() as f64)
    };

    let mut order = idx_train.clone();
    let mut best = (f64::INFINITY, net.params().to_vec());
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let mut r = rng::seeded(rng::derive_seed(cfg.seed, 1 + epoch as u64));
        rng::shuffle(&mut r, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = vec![0.0; net.param_count()];
            let mut scratch = Vec::new();
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let xin = input(i);
                let trace = net.forward_trace(&xin)?;
                let err = trace.output()[0] - target(i);
                net.backward_from_trace_into(&trace, &[2.0 * err * w], &mut grads, &mut scratch)?;
            }
            adam.step(net.params_mut(), &grads)
                .map_err(|e| Error::Diverged(format!("baseline epoch {epoch}: {e}")))?;
        }
        let mse = val_mse(&net)?;
        if !mse.is_finite() {
            return Err(Error::Diverged(format!(
                "baseline validation MSE is {mse} at epoch {epoch}"
            )));
        }
        if mse < best.0 {
            best = (mse, net.params().to_vec());
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    net.set_params(&best.1)?;

    let indices: Vec<usize> = (0..ds.n()).collect();
    let mut y0 = Vec::with_capacity(ds.n());
    let mut y1 = Vec::with_capacity(ds.n());
    for &i in &indices {
        let mut v = Vec::with_capacity(m + 1);
        v.extend_from_slice(&ds.x[i]);
        v.push(0.0);
        y0.push(scaler.unscale_y(net.forward(&v)?[0]));
        *v.last_mut().unwrap() = 1.0;
        y1.push(scaler.unscale_y(net.forward(&v)?[0]));
    }
    Ok(PotentialPredictions { indices, y0, y1 })
}

/// Per-run metrics record.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    pub setting: String,
    pub outcome_kind: String,
    pub alpha: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub balanced_prior: bool,
    pub eps_ate_pre: f64,
    pub eps_ate_post: f64,
    pub pehe_pre: f64,
    pub pehe_post: f64,
    pub affine_fit_t0: Option<AffineFit>,
    pub affine_fit_t1: Option<AffineFit>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_ate_pre", self.eps_ate_pre),
            ("eps_ate_post", self.eps_ate_post),
            ("pehe_pre", self.pehe_pre),
            ("pehe_post", self.pehe_post),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonFinite(format!("{name} = {v}")));
            }
        }
        Ok(())
    }

    /// Fixed CSV schema; affine-fit cells are empty when the latent is not
    /// 1-dimensional.
    pub fn csv_header() -> &'static str {
        "seed,setting,outcome_kind,alpha,beta,latent_dim,balanced_prior,\
         eps_ate_pre,eps_ate_post,pehe_pre,pehe_post,\
         slope_t0,intercept_t0,r2_t0,slope_t1,intercept_t1,r2_t1"
    }

    pub fn to_csv_row(&self) -> String {
        let fit_cells = |f: &Option<AffineFit>| match f {
            Some(f) => format!("{},{},{}", f.slope, f.intercept, f.r_squared),
            None => ",,".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.setting,
            self.outcome_kind,
            self.alpha,
            self.beta,
            self.latent_dim,
            self.balanced_prior,
            self.eps_ate_pre,
            self.eps_ate_post,
            self.pehe_pre,
            self.pehe_post,
            fit_cells(&self.affine_fit_t0),
            fit_cells(&self.affine_fit_t1),
        )
    }
}

/// Evaluation protocol options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Posterior/prior draws per unit.
    pub mc_draws: usize,
    pub noise_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mc_draws: 100,
            noise_seed: 0,
        }
    }
}

/// Metadata describing the run an [`EvalReport`] belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub setting: String,
    pub outcome_kind: String,
    pub alpha: f64,
    pub beta: f64,
}

/// Runs the standard protocol: post-treatment metrics on train+validation,
/// pre-treatment metrics on test, latent-recovery diagnostics on
/// train+validation when the latent is 1-d.
pub fn evaluate_model(
    tm: &TrainedModel,
    ds: &CausalDataset,
    meta: &RunMeta,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let post_idx = ds.train_validation_indices();
    let pre_idx = ds.indices(crate::dataset::Split::Test);
    let post = predict_outcomes_post(tm, ds, &post_idx, opts.mc_draws, opts.noise_seed)?;
    let pre = predict_outcomes_pre(tm, ds, &pre_idx, opts.mc_draws, opts.noise_seed)?;

    let (fit0, fit1) = if tm.model.config().latent_dim == 1 && ds.latent_dim() == 1 {
        let z_rec = recovered_latent(tm, ds, &post_idx)?;
        let z_true: Vec<f64> = post_idx.iter().map(|&i| ds.z_true[i][0]).collect();
        let t: Vec<u8> = post_idx.iter().map(|&i| ds.t[i]).collect();
        match affine_recovery_fit(&z_rec, &z_true, &t) {
            Ok((a, b)) => (Some(a), Some(b)),
            // A degenerate recovery is reported as missing fits, not a
            // failed run.
            Err(Error::Degenerate(_)) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };

    let report = EvalReport {
        seed: meta.seed,
        setting: meta.setting.clone(),
        outcome_kind: meta.outcome_kind.clone(),
        alpha: meta.alpha,
        beta: meta.beta,
        latent_dim: tm.model.config().latent_dim,
        balanced_prior: tm.model.config().balanced_prior,
        eps_ate_pre: ate_error(&pre, ds)?,
        eps_ate_post: ate_error(&post, ds)?,
        pehe_pre: sqrt_pehe(&pre, ds)?,
        pehe_post: sqrt_pehe(&post, ds)?,
        affine_fit_t0: fit0,
        affine_fit_t1: fit1,
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests;

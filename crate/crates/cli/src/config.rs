//! TOML configuration files.
//!
//! Config files are key-value tables with `[model]`, `[train]`, `[sweep]`,
//! and `[baseline]` sections; every key is optional and falls back to the
//! library default, and command-line flags override file values. The exact
//! keys are listed in the README.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use intact_vae::estimate::BaselineConfig;
use intact_vae::model::ModelConfig;
use intact_vae::nn::Activation;
use intact_vae::sweep::SweepConfig;
use intact_vae::synth::{CausalSetting, OutcomeKind};
use intact_vae::train::TrainConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub baseline: BaselineSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: Option<usize>,
    pub hidden_sizes: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub balanced_prior: Option<bool>,
    pub separate_decoder_heads: Option<bool>,
    pub learn_decoder_noise: Option<bool>,
    pub fixed_noise_var: Option<f64>,
    pub noise_head_init: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub eval_every: Option<usize>,
    pub mc_samples: Option<usize>,
    pub standardize_y: Option<bool>,
    pub standardize_x: Option<bool>,
    pub quadrature_validation: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_models: Option<usize>,
    pub settings: Option<Vec<String>>,
    pub outcome_kind: Option<String>,
    pub alphas: Option<Vec<f64>>,
    pub betas: Option<Vec<f64>>,
    pub base_seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub n_points: Option<usize>,
    pub covariate_dim: Option<usize>,
    pub normalize_ate: Option<bool>,
    pub run_baseline: Option<bool>,
    pub mc_draws: Option<usize>,
    pub output: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub standardize_y: Option<bool>,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
}

pub fn parse_activation(name: &str) -> Result<Activation> {
    match Activation::from_name(name) {
        Some(a) => Ok(a),
        None => bail!("unknown activation {name:?} (identity, relu, smooth_invertible)"),
    }
}

pub fn parse_setting(name: &str) -> Result<CausalSetting> {
    match CausalSetting::from_name(name) {
        Some(s) => Ok(s),
        None => bail!("unknown setting {name:?} (proxy_confounded, instrumental, ignorable)"),
    }
}

pub fn parse_outcome_kind(name: &str) -> Result<OutcomeKind> {
    match OutcomeKind::from_name(name) {
        Some(k) => Ok(k),
        None => bail!("unknown outcome kind {name:?} (linear, nonlinear_invertible)"),
    }
}

impl ModelSection {
    /// Applies the section over a base config (dimensions and seed come
    /// from the caller).
    pub fn apply(&self, base: &mut ModelConfig) -> Result<()> {
        if let Some(v) = self.latent_dim {
            base.latent_dim = v;
        }
        if let Some(v) = &self.hidden_sizes {
            base.hidden_sizes = v.clone();
        }
        if let Some(v) = &self.activation {
            base.activation = parse_activation(v)?;
        }
        if let Some(v) = self.balanced_prior {
            base.balanced_prior = v;
        }
        if let Some(v) = self.separate_decoder_heads {
            base.separate_decoder_heads = v;
        }
        if let Some(v) = self.learn_decoder_noise {
            base.learn_decoder_noise = v;
        }
        if let Some(v) = self.fixed_noise_var {
            base.fixed_noise_var = v;
        }
        if let Some(v) = self.noise_head_init {
            base.noise_head_init = v;
        }
        Ok(())
    }
}

impl TrainSection {
    pub fn apply(&self, base: &mut TrainConfig) {
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            base.max_epochs = v;
        }
        if let Some(v) = self.patience {
            base.patience = v;
        }
        if let Some(v) = self.eval_every {
            base.eval_every = v;
        }
        if let Some(v) = self.mc_samples {
            base.mc_samples = v;
        }
        if let Some(v) = self.standardize_y {
            base.standardize_y = v;
        }
        if let Some(v) = self.standardize_x {
            base.standardize_x = v;
        }
        if let Some(v) = self.quadrature_validation {
            base.quadrature_validation = v;
        }
    }
}

impl BaselineSection {
    pub fn apply(&self, base: &mut BaselineConfig) -> Result<()> {
        if let Some(v) = &self.hidden {
            base.hidden = v.clone();
        }
        if let Some(v) = &self.activation {
            base.activation = parse_activation(v)?;
        }
        if let Some(v) = self.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            base.max_epochs = v;
        }
        if let Some(v) = self.patience {
            base.patience = v;
        }
        if let Some(v) = self.standardize_y {
            base.standardize_y = v;
        }
        Ok(())
    }
}

impl FileConfig {
    /// Builds the full sweep configuration from the file sections.
    pub fn to_sweep_config(&self) -> Result<SweepConfig> {
        let base_seed = self
            .sweep
            .base_seed
            .context("sweep config needs base_seed (or pass --seed)")?;
        let mut cfg = SweepConfig::desk_default(base_seed);
        let s = &self.sweep;
        if let Some(v) = s.n_models {
            cfg.n_models = v;
        }
        if let Some(v) = &s.settings {
            cfg.settings = v
                .iter()
                .map(|name| parse_setting(name))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = &s.outcome_kind {
            cfg.outcome_kind = parse_outcome_kind(v)?;
        }
        if let Some(v) = &s.alphas {
            cfg.alphas = v.clone();
        }
        if let Some(v) = &s.betas {
            cfg.betas = v.clone();
        }
        if let Some(v) = s.parallelism {
            cfg.parallelism = v;
        }
        if let Some(v) = s.n_points {
            cfg.n_points = v;
        }
        if let Some(v) = s.covariate_dim {
            cfg.covariate_dim = v;
        }
        if let Some(v) = s.normalize_ate {
            cfg.normalize_ate = v;
        }
        if let Some(v) = s.run_baseline {
            cfg.run_baseline = v;
        }
        if let Some(v) = s.mc_draws {
            cfg.mc_draws = v;
        }

        // Model template fields flow through the model/train sections.
        let mut model = ModelConfig::new(cfg.covariate_dim, cfg.latent_dim, 0);
        model.hidden_sizes = cfg.hidden_sizes.clone();
        model.activation = cfg.activation;
        model.noise_head_init = cfg.noise_head_init;
        self.model.apply(&mut model)?;
        cfg.latent_dim = model.latent_dim;
        cfg.hidden_sizes = model.hidden_sizes;
        cfg.activation = model.activation;
        cfg.balanced_prior = model.balanced_prior;
        cfg.separate_decoder_heads = model.separate_decoder_heads;
        cfg.learn_decoder_noise = model.learn_decoder_noise;
        cfg.fixed_noise_var = model.fixed_noise_var;
        cfg.noise_head_init = model.noise_head_init;

        self.train.apply(&mut cfg.train);
        self.baseline.apply(&mut cfg.baseline)?;
        Ok(cfg)
    }
}

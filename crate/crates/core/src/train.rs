//! Training loop: mini-batch Adam ascent on the ELBO with early stopping on
//! a validation ELBO.
//!
//! Each epoch shuffles the training units, steps Adam per mini-batch (one
//! optimizer state per network head), then evaluates the ELBO over the full
//! validation split with a noise stream that is fixed across epochs, so
//! validation values are comparable. The returned model carries the
//! parameter snapshot from the best validation epoch, and the reported best
//! value equals the maximum over the trace.
//!
//! Inputs can be standardized with training-split statistics (`y` by
//! default; `x` optionally for wide-scale covariate tables). The fitted
//! scaler travels with the model in [`TrainedModel`] and in checkpoints, so
//! downstream predictions are always in the data's original units.

use std::io::{BufRead, Write};

use crate::dataset::{CausalDataset, Split};
use crate::error::{Error, Result};
use crate::model::{IntactVae, Observation};
use crate::nn::{AdamConfig, AdamState};
use crate::rng;

/// Optimization and early-stopping settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping;
    /// `usize::MAX` disables early stopping.
    pub patience: usize,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    pub seed: u64,
    /// Reconstruction samples per datum during training and validation.
    pub mc_samples: usize,
    pub standardize_y: bool,
    pub standardize_x: bool,
    /// Evaluate the validation ELBO by Gauss-Hermite quadrature instead of
    /// sampling when the latent is 1-dimensional: the selection criterion
    /// is then the exact bound rather than a one-draw estimate.
    pub quadrature_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 100,
            max_epochs: 500,
            patience: 20,
            eval_every: 1,
            seed: 0,
            mc_samples: 1,
            standardize_y: true,
            standardize_x: false,
            quadrature_validation: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "batch size, max epochs, and eval cadence must be positive".into(),
            ));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Column-wise standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl Scaler {
    pub fn identity(covariate_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; covariate_dim],
            x_scale: vec![1.0; covariate_dim],
            y_mean: 0.0,
            y_scale: 1.0,
        }
    }

    /// Fits on the given units. Columns with (near-)zero variance keep unit
    /// scale so standardization stays invertible.
    pub fn fit(
        ds: &CausalDataset,
        indices: &[usize],
        standardize_x: bool,
        standardize_y: bool,
    ) -> Self {
        let m = ds.covariate_dim();
        let mut out = Self::identity(m);
        let n = indices.len() as f64;
        if standardize_x {
            for j in 0..m {
                let mean = indices.iter().map(|&i| ds.x[i][j]).sum::<f64>() / n;
                let var = indices
                    .iter()
                    .map(|&i| (ds.x[i][j] - mean) * (ds.x[i][j] - mean))
                    .sum::<f64>()
                    / n;
                let sd = var.sqrt();
                out.x_mean[j] = mean;
                out.x_scale[j] = if sd > 1e-10 { sd } else { 1.0 };
            }
        }
        if standardize_y {
            let mean = indices.iter().map(|&i| ds.y[i]).sum::<f64>() / n;
            let var = indices
                .iter()
                .map(|&i| (ds.y[i] - mean) * (ds.y[i] - mean))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            out.y_mean = mean;
            out.y_scale = if sd > 1e-10 { sd } else { 1.0 };
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        self.y_mean == 0.0
            && self.y_scale == 1.0
            && self.x_mean.iter().all(|&v| v == 0.0)
            && self.x_scale.iter().all(|&v| v == 1.0)
    }

    pub fn scale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_scale))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn scale_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn unscale_y(&self, y: f64) -> f64 {
        y * self.y_scale + self.y_mean
    }
}

/// A model together with the input/output scaling it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: IntactVae,
    pub scaler: Scaler,
}

impl TrainedModel {
    /// Wraps a model with no scaling (hand-constructed models, tests).
    pub fn raw(model: IntactVae) -> Self {
        let m = model.config().covariate_dim;
        Self {
            model,
            scaler: Scaler::identity(m),
        }
    }

    /// Applies the affine latent reparameterization to the wrapped model.
    pub fn apply_affine_equivalence(&self, scale: &[f64], shift: &[f64]) -> Result<Self> {
        Ok(Self {
            model: self.model.apply_affine_equivalence(scale, shift)?,
            scaler: self.scaler.clone(),
        })
    }

    /// Checkpoint: scaler header plus the model checkpoint.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "intact-vae-trained v1")?;
        write!(w, "x_mean")?;
        for v in &self.scaler.x_mean {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
        write!(w, "x_scale")?;
        for v in &self.scaler.x_scale {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
        writeln!(w, "y_mean {}", self.scaler.y_mean)?;
        writeln!(w, "y_scale {}", self.scaler.y_scale)?;
        self.model.write_checkpoint(w)
    }

    pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lineno = 0usize;
        let mut next = |r: &mut R| -> Result<String> {
            let mut line = String::new();
            lineno += 1;
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "checkpoint truncated".into(),
                });
            }
            Ok(line.trim_end().to_string())
        };
        let header = next(r)?;
        if header != "intact-vae-trained v1" {
            return Err(Error::Parse {
                line: 1,
                msg: "expected 'intact-vae-trained v1' header".into(),
            });
        }
        let parse_vec = |line: &str, tag: &str| -> Result<Vec<f64>> {
            let rest = line.strip_prefix(tag).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("expected '{tag}' line"),
            })?;
            rest.split_whitespace()
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        line: 0,
                        msg: format!("bad value in '{tag}' line"),
                    })
                })
                .collect()
        };
        let x_mean = parse_vec(&next(r)?, "x_mean")?;
        let x_scale = parse_vec(&next(r)?, "x_scale")?;
        let y_mean = parse_vec(&next(r)?, "y_mean")?
            .first()
            .copied()
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: "missing y_mean".into(),
            })?;
        let y_scale = parse_vec(&next(r)?, "y_scale")?
            .first()
            .copied()
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: "missing y_scale".into(),
            })?;
        let model = IntactVae::read_checkpoint(r)?;
        if x_mean.len() != model.config().covariate_dim {
            return Err(Error::ShapeMismatch(
                "scaler dimension disagrees with the model".into(),
            ));
        }
        Ok(Self {
            model,
            scaler: Scaler {
                x_mean,
                x_scale,
                y_mean,
                y_scale,
            },
        })
    }
}

/// Per-epoch record of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_elbo: f64,
    pub validation_elbo: f64,
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub trained: TrainedModel,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_validation_elbo: f64,
}

// Noise-stream layout within a run seed: stream 0 is validation noise
// (fixed across epochs); per epoch e, stream 1 + 2e shuffles and stream
// 2 + 2e seeds the batch noise (batches then derive from it by index).
const VALIDATION_STREAM: u64 = 0;

/// Trains `model` on the dataset's train split, early-stopping on the
/// validation split, and returns the best-validation snapshot.
pub fn train(model: IntactVae, ds: &CausalDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let idx_train = ds.indices(Split::Train);
    let idx_val = ds.indices(Split::Validation);
    if idx_train.is_empty() || idx_val.is_empty() {
        return Err(Error::InvalidConfig(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    if ds.covariate_dim() != model.config().covariate_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset covariate dimension {} disagrees with the model's {}",
            ds.covariate_dim(),
            model.config().covariate_dim
        )));
    }

    let scaler = Scaler::fit(ds, &idx_train, cfg.standardize_x, cfg.standardize_y);
    let xs: Vec<Vec<f64>> = ds.x.iter().map(|x| scaler.scale_x(x)).collect();
    let ys: Vec<[f64; 1]> = ds.y.iter().map(|&y| [scaler.scale_y(y)]).collect();
    let obs = |i: usize| Observation {
        x: &xs[i],
        y: &ys[i],
        t: ds.t[i],
    };

    let mut model = model;
    let adam_cfg = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut adam: Vec<AdamState> = model
        .nets()
        .iter()
        .map(|n| AdamState::new(n.param_count(), adam_cfg))
        .collect::<Result<_>>()?;

    let snapshot =
        |m: &IntactVae| -> Vec<Vec<f64>> { m.nets().iter().map(|n| n.params().to_vec()).collect() };

    let val_batch: Vec<Observation> = idx_val.iter().map(|&i| obs(i)).collect();
    let val_noise = rng::derive_seed(cfg.seed, VALIDATION_STREAM);
    let use_quadrature = cfg.quadrature_validation && model.config().latent_dim == 1;
    let validation_elbo = |m: &IntactVae| -> crate::error::Result<f64> {
        if use_quadrature {
            Ok(m.elbo_quadrature(&val_batch, 32)?.elbo)
        } else {
            Ok(m.elbo(&val_batch, val_noise, cfg.mc_samples)?.elbo)
        }
    };

    let mut trace = Vec::new();
    let mut best_params = snapshot(&model);
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut order = idx_train.clone();
    let mut stale_evals = 0usize;

    for epoch in 1..=cfg.max_epochs {
        // Seeded shuffle of the training units.
        let mut r = rng::seeded(rng::derive_seed(cfg.seed, 1 + 2 * epoch as u64));
        rng::shuffle(&mut r, &mut order);

        let batch_noise_base = rng::derive_seed(cfg.seed, 2 + 2 * epoch as u64);
        let mut train_elbo_sum = 0.0;
        let mut train_count = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Observation> = chunk.iter().map(|&i| obs(i)).collect();
            let noise_seed = rng::derive_seed(batch_noise_base, b as u64);
            let (terms, grads) = model
                .elbo_with_grads(&batch, noise_seed, cfg.mc_samples)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}, batch {b}: {e}")))?;
            train_elbo_sum += terms.elbo * chunk.len() as f64;
            train_count += chunk.len();
            for (slot, net) in model.nets_mut().into_iter().enumerate() {
                // Adam minimizes; ascend the ELBO by negating its gradient.
                let neg: Vec<f64> = grads.per_net[slot].iter().map(|g| -g).collect();
                adam[slot]
                    .step(net.params_mut(), &neg)
                    .map_err(|e| Error::Diverged(format!("epoch {epoch}, batch {b}: {e}")))?;
            }
        }
        let train_elbo = train_elbo_sum / train_count as f64;

        if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let val = validation_elbo(&model)
                .map_err(|e| Error::Diverged(format!("validation at epoch {epoch}: {e}")))?;
            trace.push(EpochStats {
                epoch,
                train_elbo,
                validation_elbo: val,
            });
            if val > best_val {
                best_val = val;
                best_epoch = epoch;
                best_params = snapshot(&model);
                stale_evals = 0;
            } else {
                stale_evals += 1;
                if stale_evals > cfg.patience / cfg.eval_every {
                    break;
                }
            }
        }
    }

    for (net, params) in model.nets_mut().into_iter().zip(&best_params) {
        net.set_params(params)?;
    }
    Ok(TrainOutcome {
        trained: TrainedModel { model, scaler },
        trace,
        best_epoch,
        best_validation_elbo: best_val,
    })
}

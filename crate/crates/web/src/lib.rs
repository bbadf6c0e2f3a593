//! Browser demo bindings.
//!
//! Three interactive operations over one generated benchmark:
//!
//! 1. generate a synthetic causal dataset and inspect the outcome surfaces,
//! 2. train the model live and watch the ELBO trace, the latent recovery
//!    scatter, and the effect-estimation metrics evolve,
//! 3. apply an affine latent reparameterization to the trained model and
//!    verify that predictions do not move.
//!
//! Everything returns flat `Float64Array`s; the page does its own drawing.

use wasm_bindgen::prelude::*;

use intact_vae::dataset::{CausalDataset, Split};
use intact_vae::estimate::{
    affine_recovery_fit, ate_error, predict_outcomes_post, predict_outcomes_pre, recovered_latent,
    sqrt_pehe, EvalOptions, RunMeta,
};
use intact_vae::model::{IntactVae, ModelConfig, Observation};
use intact_vae::nn::{Activation, AdamConfig, AdamState};
use intact_vae::rng;
use intact_vae::synth::{self, CausalSetting, GeneratingModel, OutcomeKind, SynthSpec};
use intact_vae::train::{Scaler, TrainedModel};

fn err_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// One benchmark instance plus a resumable training loop.
#[wasm_bindgen]
pub struct Demo {
    gm: GeneratingModel,
    ds: CausalDataset,
    model: IntactVae,
    scaler: Scaler,
    adam: Vec<AdamState>,
    epoch: usize,
    seed: u64,
    xs: Vec<Vec<f64>>,
    ys: Vec<[f64; 1]>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
}

const MC_DRAWS: usize = 50;

#[wasm_bindgen]
impl Demo {
    /// Generates the dataset and initializes a fresh model.
    #[wasm_bindgen(constructor)]
    pub fn new(
        setting: &str,
        outcome: &str,
        alpha: f64,
        beta: f64,
        seed: u32,
        n_points: usize,
    ) -> Result<Demo, JsValue> {
        let setting = CausalSetting::from_name(setting)
            .ok_or_else(|| err_js(format!("unknown setting {setting:?}")))?;
        let outcome = OutcomeKind::from_name(outcome)
            .ok_or_else(|| err_js(format!("unknown outcome kind {outcome:?}")))?;
        let spec = SynthSpec {
            seed: seed as u64,
            setting,
            outcome_kind: outcome,
            alpha,
            beta,
            covariate_dim: 3,
            n_points,
        };
        let (gm, ds) = synth::generate(&spec).map_err(err_js)?;
        let mut demo = Demo {
            gm,
            ds,
            model: IntactVae::new(ModelConfig::new(1, 1, 0)).map_err(err_js)?,
            scaler: Scaler::identity(3),
            adam: Vec::new(),
            epoch: 0,
            seed: seed as u64,
            xs: Vec::new(),
            ys: Vec::new(),
            train_idx: Vec::new(),
            val_idx: Vec::new(),
        };
        demo.reset_model()?;
        Ok(demo)
    }

    /// Re-initializes the model and optimizer without regenerating data.
    pub fn reset_model(&mut self) -> Result<(), JsValue> {
        let mut cfg = ModelConfig::new(3, 1, rng::derive_seed(self.seed, 101));
        cfg.hidden_sizes = vec![16];
        cfg.activation = Activation::SmoothInvertible;
        self.model = IntactVae::new(cfg).map_err(err_js)?;
        self.epoch = 0;

        self.train_idx = self.ds.indices(Split::Train);
        self.val_idx = self.ds.indices(Split::Validation);
        self.scaler = Scaler::fit(&self.ds, &self.train_idx, false, true);
        self.xs = self.ds.x.iter().map(|x| self.scaler.scale_x(x)).collect();
        self.ys = self
            .ds
            .y
            .iter()
            .map(|&y| [self.scaler.scale_y(y)])
            .collect();
        self.adam = self
            .model
            .nets()
            .iter()
            .map(|n| AdamState::new(n.param_count(), AdamConfig::with_learning_rate(1e-3)))
            .collect::<Result<_, _>>()
            .map_err(err_js)?;
        Ok(())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn n_units(&self) -> usize {
        self.ds.n()
    }

    pub fn true_ate(&self) -> f64 {
        let all: Vec<usize> = (0..self.ds.n()).collect();
        self.ds.empirical_ate(&all)
    }

    /// `[z_true, y, t]` triplets for every unit.
    pub fn scatter(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ds.n() * 3);
        for i in 0..self.ds.n() {
            out.push(self.ds.z_true[i][0]);
            out.push(self.ds.y[i]);
            out.push(self.ds.t[i] as f64);
        }
        out
    }

    /// `[z, mu0(z), mu1(z)]` triplets over an even grid covering the
    /// realized latents.
    pub fn outcome_curves(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = self
            .ds
            .z_true
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
                (lo.min(z[0]), hi.max(z[0]))
            });
        let mut out = Vec::with_capacity(points * 3);
        for k in 0..points {
            let z = lo + (hi - lo) * k as f64 / (points - 1).max(1) as f64;
            out.push(z);
            out.push(self.gm.outcome_mean(z, 0));
            out.push(self.gm.outcome_mean(z, 1));
        }
        out
    }

    /// Runs `count` training epochs and returns the appended trace as
    /// `[epoch, train_elbo, validation_elbo]` rows.
    pub fn train_epochs(&mut self, count: usize) -> Result<Vec<f64>, JsValue> {
        let mut out = Vec::with_capacity(count * 3);
        let mut order = self.train_idx.clone();
        for _ in 0..count {
            self.epoch += 1;
            let mut r = rng::seeded(rng::derive_seed(self.seed, 1 + 2 * self.epoch as u64));
            rng::shuffle(&mut r, &mut order);
            let noise_base = rng::derive_seed(self.seed, 2 + 2 * self.epoch as u64);
            let mut train_sum = 0.0;
            let mut train_n = 0usize;
            for (b, chunk) in order.chunks(100).enumerate() {
                let batch: Vec<Observation> = chunk
                    .iter()
                    .map(|&i| Observation {
                        x: &self.xs[i],
                        y: &self.ys[i],
                        t: self.ds.t[i],
                    })
                    .collect();
                let (terms, grads) = self
                    .model
                    .elbo_with_grads(&batch, rng::derive_seed(noise_base, b as u64), 1)
                    .map_err(err_js)?;
                train_sum += terms.elbo * chunk.len() as f64;
                train_n += chunk.len();
                for (slot, net) in self.model.nets_mut().into_iter().enumerate() {
                    let neg: Vec<f64> = grads.per_net[slot].iter().map(|g| -g).collect();
                    self.adam[slot]
                        .step(net.params_mut(), &neg)
                        .map_err(err_js)?;
                }
            }
            let val_batch: Vec<Observation> = self
                .val_idx
                .iter()
                .map(|&i| Observation {
                    x: &self.xs[i],
                    y: &self.ys[i],
                    t: self.ds.t[i],
                })
                .collect();
            let val = self
                .model
                .elbo_quadrature(&val_batch, 32)
                .map_err(err_js)?
                .elbo;
            out.push(self.epoch as f64);
            out.push(train_sum / train_n as f64);
            out.push(val);
        }
        Ok(out)
    }

    fn trained(&self) -> TrainedModel {
        TrainedModel {
            model: self.model.clone(),
            scaler: self.scaler.clone(),
        }
    }

    /// `[z_true, z_recovered, t]` triplets over the train+validation units.
    pub fn recovery(&self) -> Result<Vec<f64>, JsValue> {
        let idx = self.ds.train_validation_indices();
        let tm = self.trained();
        let rec = recovered_latent(&tm, &self.ds, &idx).map_err(err_js)?;
        let mut out = Vec::with_capacity(idx.len() * 3);
        for (k, &i) in idx.iter().enumerate() {
            out.push(self.ds.z_true[i][0]);
            out.push(rec[k]);
            out.push(self.ds.t[i] as f64);
        }
        Ok(out)
    }

    /// `[eps_ate_pre, pehe_pre, eps_ate_post, pehe_post, slope_t0,
    /// slope_t1, r2_t0, r2_t1, estimated_pre_ate]`.
    pub fn metrics(&self) -> Result<Vec<f64>, JsValue> {
        let tm = self.trained();
        let meta = RunMeta {
            seed: self.seed,
            setting: self.gm.spec().setting.name().into(),
            outcome_kind: self.gm.spec().outcome_kind.name().into(),
            alpha: self.gm.spec().alpha,
            beta: self.gm.spec().beta,
        };
        let opts = EvalOptions {
            mc_draws: MC_DRAWS,
            noise_seed: rng::derive_seed(self.seed, 103),
        };
        let report =
            intact_vae::estimate::evaluate_model(&tm, &self.ds, &meta, &opts).map_err(err_js)?;
        let pre_idx = self.ds.indices(Split::Test);
        let pre = predict_outcomes_pre(&tm, &self.ds, &pre_idx, MC_DRAWS, opts.noise_seed)
            .map_err(err_js)?;
        let (s0, s1, r0, r1) = match (report.affine_fit_t0, report.affine_fit_t1) {
            (Some(a), Some(b)) => (a.slope, b.slope, a.r_squared, b.r_squared),
            _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        Ok(vec![
            report.eps_ate_pre,
            report.pehe_pre,
            report.eps_ate_post,
            report.pehe_post,
            s0,
            s1,
            r0,
            r1,
            pre.ate(),
        ])
    }

    /// Replaces the model by its affine reparameterization `z -> a z + b`
    /// and returns the worst absolute change over the pre- and
    /// post-treatment predicted outcome means (which should sit at the
    /// rounding floor).
    pub fn apply_affine(&mut self, scale: f64, shift: f64) -> Result<f64, JsValue> {
        if scale == 0.0 || !scale.is_finite() || !shift.is_finite() {
            return Err(err_js("scale must be nonzero and finite"));
        }
        let idx: Vec<usize> = (0..self.ds.n().min(200)).collect();
        let before_tm = self.trained();
        let moved = self
            .model
            .apply_affine_equivalence(&[scale], &[shift])
            .map_err(err_js)?;
        let after_tm = TrainedModel {
            model: moved.clone(),
            scaler: self.scaler.clone(),
        };
        let seed = rng::derive_seed(self.seed, 104);
        let mut worst: f64 = 0.0;
        for (a, b) in [
            (
                predict_outcomes_post(&before_tm, &self.ds, &idx, 10, seed).map_err(err_js)?,
                predict_outcomes_post(&after_tm, &self.ds, &idx, 10, seed).map_err(err_js)?,
            ),
            (
                predict_outcomes_pre(&before_tm, &self.ds, &idx, 10, seed).map_err(err_js)?,
                predict_outcomes_pre(&after_tm, &self.ds, &idx, 10, seed).map_err(err_js)?,
            ),
        ] {
            for k in 0..idx.len() {
                worst = worst.max((a.y0[k] - b.y0[k]).abs());
                worst = worst.max((a.y1[k] - b.y1[k]).abs());
            }
        }
        self.model = moved;
        Ok(worst)
    }

    /// Quick numeric check used by the page footer: ATE error and sqrt-PEHE
    /// of the perfect oracle (always zero).
    pub fn oracle_zero_check(&self) -> Result<Vec<f64>, JsValue> {
        let idx: Vec<usize> = (0..self.ds.n()).collect();
        let perfect = intact_vae::estimate::PotentialPredictions {
            indices: idx,
            y0: self.ds.mu0.clone(),
            y1: self.ds.mu1.clone(),
        };
        Ok(vec![
            ate_error(&perfect, &self.ds).map_err(err_js)?,
            sqrt_pehe(&perfect, &self.ds).map_err(err_js)?,
        ])
    }

    /// Group-wise recovery fits `[slope0, intercept0, r2_0, slope1,
    /// intercept1, r2_1]`, or NaNs while degenerate.
    pub fn recovery_fits(&self) -> Result<Vec<f64>, JsValue> {
        let idx = self.ds.train_validation_indices();
        let tm = self.trained();
        let rec = recovered_latent(&tm, &self.ds, &idx).map_err(err_js)?;
        let z: Vec<f64> = idx.iter().map(|&i| self.ds.z_true[i][0]).collect();
        let t: Vec<u8> = idx.iter().map(|&i| self.ds.t[i]).collect();
        match affine_recovery_fit(&rec, &z, &t) {
            Ok((a, b)) => Ok(vec![
                a.slope,
                a.intercept,
                a.r_squared,
                b.slope,
                b.intercept,
                b.r_squared,
            ]),
            Err(_) => Ok(vec![f64::NAN; 6]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_generates_trains_and_reports() {
        let mut demo = Demo::new("proxy_confounded", "nonlinear_invertible", 0.2, 0.2, 7, 150)
            .expect("construct");
        assert_eq!(demo.n_units(), 150);
        assert_eq!(demo.scatter().len(), 150 * 3);
        assert_eq!(demo.outcome_curves(50).len(), 150);
        let trace = demo.train_epochs(3).expect("train");
        assert_eq!(trace.len(), 9);
        assert_eq!(demo.epoch(), 3);
        let metrics = demo.metrics().expect("metrics");
        assert_eq!(metrics.len(), 9);
        assert!(metrics.iter().take(4).all(|v| v.is_finite()));
        let zero = demo.oracle_zero_check().expect("oracle");
        assert_eq!(zero, vec![0.0, 0.0]);
        let worst = demo.apply_affine(2.0, -1.0).expect("affine");
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn training_is_deterministic_across_instances() {
        let run = || {
            let mut demo = Demo::new("ignorable", "linear", 0.1, 0.3, 11, 120).expect("construct");
            demo.train_epochs(4).expect("train")
        };
        assert_eq!(run(), run());
    }
}

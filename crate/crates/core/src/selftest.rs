//! The oracle suite behind the `selftest` CLI command.
//!
//! Every check here verifies one piece of numerical machinery against an
//! independent route: finite differences for gradients, Monte-Carlo
//! sampling for the closed-form KL, a closed-form linear-Gaussian marginal
//! for the ELBO, algebraic identities for the metrics, and byte equality
//! for determinism. The full suite runs in well under a minute.

use crate::error::Result;
use crate::estimate::{ate_error, sqrt_pehe, PotentialPredictions};
use crate::gauss::{positive_variance, DiagGaussian, VARIANCE_FLOOR};
use crate::model::{IntactVae, ModelConfig, Observation};
use crate::nn::{grad_check, grad_check_against, Activation, AdamConfig, AdamState, Mlp};
use crate::rng;
use crate::synth::{self, CausalSetting, OutcomeKind, SynthSpec};

/// Outcome of one oracle check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: String) -> Self {
        Self {
            name,
            passed: true,
            detail,
        }
    }

    fn of(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    fn from_result(name: &'static str, r: Result<CheckResult>) -> Self {
        r.unwrap_or_else(|e| Self {
            name,
            passed: false,
            detail: format!("errored: {e}"),
        })
    }
}

/// Runs every oracle check and reports one result per check.
pub fn run_selftest() -> Vec<CheckResult> {
    vec![
        CheckResult::from_result("mlp_gradients_finite_difference", check_mlp_gradients()),
        CheckResult::from_result("grad_check_detects_injected_fault", check_injected_fault()),
        CheckResult::from_result("adam_basics", check_adam()),
        CheckResult::from_result("gaussian_log_density", check_log_density()),
        CheckResult::from_result("kl_closed_form_vs_monte_carlo", check_kl_monte_carlo()),
        CheckResult::from_result("reparameterized_sample_moments", check_reparam_moments()),
        CheckResult::from_result("elbo_gradients_finite_difference", check_elbo_gradients()),
        CheckResult::from_result("linear_gaussian_elbo_tightness", check_linear_gaussian()),
        CheckResult::from_result("affine_equivalence_invariance", check_affine_invariance()),
        CheckResult::from_result("metric_identities", check_metric_identities()),
        CheckResult::from_result("generator_determinism", check_determinism()),
    ]
}

fn check_mlp_gradients() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for (act, seed) in [
        (Activation::Identity, 1u64),
        (Activation::Relu, 2),
        (Activation::SmoothInvertible, 3),
    ] {
        let net = Mlp::new(&[3, 8, 2], act, seed)?;
        let report = grad_check(&net, &[0.37, -0.81, 0.55], 1e-4)?;
        worst = worst.max(report.worst_rel_err);
        if !report.pass {
            return Ok(CheckResult::of(
                "mlp_gradients_finite_difference",
                false,
                format!("{act:?}: worst rel err {}", report.worst_rel_err),
            ));
        }
    }
    Ok(CheckResult::pass(
        "mlp_gradients_finite_difference",
        format!("worst rel err {worst:.2e} (tolerance 1e-4)"),
    ))
}

fn check_injected_fault() -> Result<CheckResult> {
    let net = Mlp::new(&[3, 8, 1], Activation::Relu, 4)?;
    let input = [0.37, -0.81, 0.55];
    let mut corrupted = net.backward(&input, &[1.0])?.param_grads;
    corrupted[7] += 1.0;
    let report = grad_check_against(&net, &input, 1e-4, Some(&corrupted))?;
    Ok(CheckResult::of(
        "grad_check_detects_injected_fault",
        !report.pass && report.worst_param == 7,
        format!(
            "injected +1 on parameter 7, checker flagged parameter {} with rel err {:.2e}",
            report.worst_param, report.worst_rel_err
        ),
    ))
}

fn check_adam() -> Result<CheckResult> {
    let cfg = AdamConfig::with_learning_rate(1e-3);
    let mut state = AdamState::new(2, cfg)?;
    let mut params = vec![0.5, -0.5];
    for _ in 0..50 {
        state.step(&mut params, &[0.0, 0.0])?;
    }
    let unchanged = params == vec![0.5, -0.5] && state.step_count() == 50;

    let mut state = AdamState::new(1, cfg)?;
    let mut p = vec![0.0];
    state.step(&mut p, &[7.5])?;
    let first_step = (p[0] + cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate;
    Ok(CheckResult::of(
        "adam_basics",
        unchanged && first_step,
        format!("zero-gradient fixed point {unchanged}, first-step magnitude {first_step}"),
    ))
}

fn check_log_density() -> Result<CheckResult> {
    let d = DiagGaussian::standard(1);
    let ln_tau = (2.0 * std::f64::consts::PI).ln();
    let ok1 = (d.log_prob(&[0.0])? + 0.5 * ln_tau).abs() < 1e-12;
    let d2 = DiagGaussian::new(vec![1.0, -1.0], vec![4.0, 1.0])?;
    let hand = -0.5 * (ln_tau + 4.0f64.ln()) - 0.5 - 0.5 * ln_tau - 0.5;
    let ok2 = (d2.log_prob(&[3.0, 0.0])? - hand).abs() < 1e-12;
    Ok(CheckResult::of(
        "gaussian_log_density",
        ok1 && ok2,
        "standard normal at mode and a two-dimensional hand product".into(),
    ))
}

fn check_kl_monte_carlo() -> Result<CheckResult> {
    let q = DiagGaussian::new(vec![0.4, -1.0], vec![2.5, 0.3])?;
    let p = DiagGaussian::new(vec![-0.2, 0.5], vec![1.0, 1.7])?;
    let closed = q.kl_divergence(&p)?;
    let n = 100_000;
    let mut r = rng::seeded(1001);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let eps = rng::standard_normal_vec(&mut r, 2);
        let z = q.reparameterize(&eps)?;
        let v = q.log_prob(&z)? - p.log_prob(&z)?;
        sum += v;
        sum_sq += v * v;
    }
    let mc = sum / n as f64;
    let se = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
    Ok(CheckResult::of(
        "kl_closed_form_vs_monte_carlo",
        (closed - mc).abs() < 3.0 * se,
        format!("closed {closed:.6} vs monte-carlo {mc:.6} (se {se:.2e}, 1e5 samples)"),
    ))
}

fn check_reparam_moments() -> Result<CheckResult> {
    let d = DiagGaussian::new(vec![1.5], vec![2.25])?;
    let n = 100_000;
    let mut r = rng::seeded(1002);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let z = d.reparameterize(&rng::standard_normal_vec(&mut r, 1))?[0];
        sum += z;
        sq += z * z;
    }
    let mean = sum / n as f64;
    let var = sq / n as f64 - mean * mean;
    let se_mean = (d.var()[0] / n as f64).sqrt();
    let se_var = d.var()[0] * (2.0 / n as f64).sqrt();
    Ok(CheckResult::of(
        "reparameterized_sample_moments",
        (mean - 1.5).abs() < 3.0 * se_mean && (var - 2.25).abs() < 3.0 * se_var,
        format!("mean {mean:.4} (want 1.5), variance {var:.4} (want 2.25)"),
    ))
}

fn small_model(seed: u64) -> Result<IntactVae> {
    IntactVae::new(ModelConfig {
        covariate_dim: 2,
        latent_dim: 2,
        hidden_sizes: vec![4],
        activation: Activation::SmoothInvertible,
        balanced_prior: true,
        separate_decoder_heads: false,
        learn_decoder_noise: true,
        fixed_noise_var: 1.0,
        noise_head_init: -2.5,
        seed,
    })
}

fn obs_batch<'a>(xs: &'a [Vec<f64>], ys: &'a [Vec<f64>], ts: &'a [u8]) -> Vec<Observation<'a>> {
    xs.iter()
        .zip(ys.iter().zip(ts))
        .map(|(x, (y, &t))| Observation { x, y, t })
        .collect()
}

fn check_elbo_gradients() -> Result<CheckResult> {
    let mut model = small_model(1003)?;
    let xs = [vec![0.3, -0.5], vec![-0.2, 0.8]];
    let ys = [vec![0.4], vec![-0.6]];
    let ts = [0u8, 1u8];
    let (_, grads) = model.elbo_with_grads(&obs_batch(&xs, &ys, &ts), 17, 2)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for slot in 0..grads.per_net.len() {
        for p in 0..grads.per_net[slot].len() {
            let orig = model.nets_mut()[slot].params()[p];
            model.nets_mut()[slot].params_mut()[p] = orig + h;
            let up = model.elbo(&obs_batch(&xs, &ys, &ts), 17, 2)?.elbo;
            model.nets_mut()[slot].params_mut()[p] = orig - h;
            let dn = model.elbo(&obs_batch(&xs, &ys, &ts), 17, 2)?.elbo;
            model.nets_mut()[slot].params_mut()[p] = orig;
            let numeric = (up - dn) / (2.0 * h);
            let analytic = grads.per_net[slot][p];
            let scale = analytic.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    Ok(CheckResult::of(
        "elbo_gradients_finite_difference",
        worst < 1e-4,
        format!("worst rel err {worst:.2e} over all six heads (tolerance 1e-4)"),
    ))
}

fn set_affine(net: &mut Mlp, weights: &[f64], bias: &[f64]) {
    net.zero_params();
    net.params_mut()[..weights.len()].copy_from_slice(weights);
    let off = weights.len();
    net.params_mut()[off..off + bias.len()].copy_from_slice(bias);
}

fn check_linear_gaussian() -> Result<CheckResult> {
    let cfg = ModelConfig {
        covariate_dim: 1,
        latent_dim: 1,
        hidden_sizes: vec![],
        activation: Activation::Identity,
        balanced_prior: true,
        separate_decoder_heads: false,
        learn_decoder_noise: false,
        fixed_noise_var: 0.25,
        noise_head_init: 0.0,
        seed: 0,
    };
    let mut model = IntactVae::new(cfg)?;
    for net in model.nets_mut() {
        net.zero_params();
    }
    let (w_z, w_t, b_f) = (1.3, 0.8, -0.2);
    let (w_h, b_h) = (0.7, 0.1);
    let noise = 0.25;
    {
        let mut nets = model.nets_mut().into_iter();
        set_affine(nets.next().unwrap(), &[w_z, w_t], &[b_f]); // f
        nets.next(); // g unused (fixed noise)
        set_affine(nets.next().unwrap(), &[w_h], &[b_h]); // h
    }
    let v_p = positive_variance(0.0);
    let marginal = |x: f64, y: f64, t: u8| -> f64 {
        let mean = w_z * (w_h * x + b_h) + w_t * t as f64 + b_f;
        let var = w_z * w_z * v_p + noise;
        -0.5 * ((2.0 * std::f64::consts::PI).ln() + var.ln())
            - (y - mean) * (y - mean) / (2.0 * var)
    };
    let posterior = |x: f64, y: f64, t: u8| -> (f64, f64) {
        let prec = 1.0 / v_p + w_z * w_z / noise;
        let var = 1.0 / prec;
        let mean = var * ((w_h * x + b_h) / v_p + w_z * (y - w_t * t as f64 - b_f) / noise);
        (mean, var)
    };

    // At the analytic optimum the bound is tight.
    let prec = 1.0 / v_p + w_z * w_z / noise;
    let v_star = 1.0 / prec;
    let u_star = ((v_star - VARIANCE_FLOOR).exp() - 1.0).ln();
    {
        let mut nets = model.nets_mut().into_iter();
        for _ in 0..4 {
            nets.next();
        }
        let r = nets.next().unwrap();
        set_affine(
            r,
            &[
                v_star * w_h / v_p,
                v_star * w_z / noise,
                -v_star * w_z * w_t / noise,
            ],
            &[v_star * (b_h / v_p - w_z * b_f / noise)],
        );
        set_affine(nets.next().unwrap(), &[0.0, 0.0, 0.0], &[u_star]);
    }
    let data = [(0.4, 1.1, 1u8), (-0.8, -0.3, 0u8), (1.2, 0.6, 1u8)];
    let mut max_gap_opt: f64 = 0.0;
    for (x, y, t) in data {
        let xs = [vec![x]];
        let ys = [vec![y]];
        let batch = [Observation {
            x: &xs[0],
            y: &ys[0],
            t,
        }];
        let elbo = model.elbo_quadrature(&batch, 64)?.elbo;
        max_gap_opt = max_gap_opt.max((elbo - marginal(x, y, t)).abs());
    }
    let tight = max_gap_opt < 1e-3;

    // Away from the optimum the bound never exceeds the marginal.
    let mut violation: f64 = f64::NEG_INFINITY;
    for dm in [-1.0, -0.25, 0.0, 0.25, 1.0] {
        for vs in [0.25, 1.0, 4.0] {
            let (x, y, t) = (0.4, 1.1, 1u8);
            let (m_opt, v_opt) = posterior(x, y, t);
            {
                let mut nets = model.nets_mut().into_iter();
                for _ in 0..4 {
                    nets.next();
                }
                set_affine(nets.next().unwrap(), &[0.0, 0.0, 0.0], &[m_opt + dm]);
                let u = ((v_opt * vs - VARIANCE_FLOOR).exp() - 1.0).ln();
                set_affine(nets.next().unwrap(), &[0.0, 0.0, 0.0], &[u]);
            }
            let xs = [vec![x]];
            let ys = [vec![y]];
            let batch = [Observation {
                x: &xs[0],
                y: &ys[0],
                t,
            }];
            let elbo = model.elbo_quadrature(&batch, 64)?.elbo;
            violation = violation.max(elbo - marginal(x, y, t));
        }
    }
    let bounded = violation <= 1e-9;
    Ok(CheckResult::of(
        "linear_gaussian_elbo_tightness",
        tight && bounded,
        format!(
            "gap at optimum {max_gap_opt:.2e} (tolerance 1e-3), worst bound excess {violation:.2e} (tolerance 1e-9)"
        ),
    ))
}

fn check_affine_invariance() -> Result<CheckResult> {
    let model = {
        let mut cfg = ModelConfig::new(2, 1, 1004);
        cfg.hidden_sizes = vec![6];
        cfg.activation = Activation::SmoothInvertible;
        IntactVae::new(cfg)?
    };
    let moved = model.apply_affine_equivalence(&[-1.6], &[0.9])?;
    let xs = [vec![0.2, -0.4], vec![0.7, 0.1]];
    let ys = [vec![0.5], vec![-0.2]];
    let ts = [0u8, 1u8];
    let batch = obs_batch(&xs, &ys, &ts);
    let a = model.elbo(&batch, 5, 3)?;
    let b = moved.elbo(&batch, 5, 3)?;
    let kl_gap = (a.kl - b.kl).abs();
    let elbo_gap = (a.elbo - b.elbo).abs();

    let mut pred_gap: f64 = 0.0;
    let mut r = rng::seeded(1005);
    for _ in 0..50 {
        let x = rng::standard_normal_vec(&mut r, 2);
        let eps = rng::standard_normal_vec(&mut r, 1);
        for t in [0u8, 1] {
            let z_a = model.sample_prior(&x, t, &eps)?;
            let z_b = moved.sample_prior(&x, t, &eps)?;
            let ya = model.decoder_mean(&z_a, t)?[0];
            let yb = moved.decoder_mean(&z_b, t)?[0];
            pred_gap = pred_gap.max((ya - yb).abs());
        }
    }
    Ok(CheckResult::of(
        "affine_equivalence_invariance",
        kl_gap < 1e-8 && elbo_gap < 1e-8 && pred_gap < 1e-10,
        format!("kl gap {kl_gap:.2e}, elbo gap {elbo_gap:.2e}, prediction gap {pred_gap:.2e}"),
    ))
}

fn check_metric_identities() -> Result<CheckResult> {
    let mut s = SynthSpec::new(1006, CausalSetting::ProxyConfounded, OutcomeKind::Linear);
    s.n_points = 90;
    let (_, ds) = synth::generate(&s)?;
    let idx: Vec<usize> = (0..ds.n()).collect();
    let perfect = PotentialPredictions {
        indices: idx.clone(),
        y0: ds.mu0.clone(),
        y1: ds.mu1.clone(),
    };
    let zeroes = ate_error(&perfect, &ds)? == 0.0 && sqrt_pehe(&perfect, &ds)? == 0.0;
    let delta = -0.75;
    let offset = PotentialPredictions {
        indices: idx,
        y0: ds.mu0.clone(),
        y1: ds.mu1.iter().map(|v| v + delta).collect(),
    };
    let forced = (ate_error(&offset, &ds)? - delta.abs()).abs() < 1e-12
        && (sqrt_pehe(&offset, &ds)? - delta.abs()).abs() < 1e-12;
    Ok(CheckResult::of(
        "metric_identities",
        zeroes && forced,
        format!(
            "perfect oracle gives exact zeros: {zeroes}; constant offset forces |delta|: {forced}"
        ),
    ))
}

fn check_determinism() -> Result<CheckResult> {
    let mut s = SynthSpec::new(
        1007,
        CausalSetting::Instrumental,
        OutcomeKind::NonlinearInvertible,
    );
    s.n_points = 120;
    let (_, d1) = synth::generate(&s)?;
    let (_, d2) = synth::generate(&s)?;
    let mut b1 = Vec::new();
    let mut b2 = Vec::new();
    d1.write_csv(&mut b1)?;
    d2.write_csv(&mut b2)?;
    let datasets_equal = b1 == b2;

    let model = small_model(1008)?;
    let xs = [vec![0.1, 0.2]];
    let ys = [vec![0.3]];
    let batch = [Observation {
        x: &xs[0],
        y: &ys[0],
        t: 1,
    }];
    let e1 = model.elbo(&batch, 9, 4)?;
    let e2 = model.elbo(&batch, 9, 4)?;
    Ok(CheckResult::of(
        "generator_determinism",
        datasets_equal && e1 == e2,
        format!(
            "dataset bytes equal: {datasets_equal}; repeated elbo equal: {}",
            e1 == e2
        ),
    ))
}

/// Convenience used by tests and the CLI: true iff every check passed.
pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_on_a_clean_build() {
        let results = run_selftest();
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 11);
    }

    #[test]
    fn selftest_names_are_unique() {
        let results = run_selftest();
        let mut names: Vec<&str> = results.iter().map(|r| r.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), results.len());
    }
}

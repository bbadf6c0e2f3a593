use super::*;
use crate::dataset::Split;
use crate::model::{IntactVae, ModelConfig};
use crate::synth::{self, CausalSetting, OutcomeKind, SynthSpec};

/// Canonical head order for shared decoder heads.
const F: usize = 0;
const H: usize = 2;
const K: usize = 3;
const R: usize = 4;
const S: usize = 5;

fn affine_model(covariate_dim: usize) -> IntactVae {
    let cfg = ModelConfig {
        covariate_dim,
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
    let mut model = IntactVae::new(cfg).unwrap();
    for net in model.nets_mut() {
        net.zero_params();
    }
    model
}

fn net_at(model: &mut IntactVae, idx: usize) -> &mut Mlp {
    model.nets_mut().into_iter().nth(idx).unwrap()
}

fn set_affine(net: &mut Mlp, weights: &[f64], bias: &[f64]) {
    assert_eq!(net.sizes().len(), 2);
    net.zero_params();
    net.params_mut()[..weights.len()].copy_from_slice(weights);
    let off = weights.len();
    net.params_mut()[off..off + bias.len()].copy_from_slice(bias);
}

/// Raw variance-head bias giving (numerically) the floor variance.
const TINY_RAW_VAR: f64 = -800.0;

fn toy_dataset(n: usize, seed: u64) -> CausalDataset {
    let mut r = crate::rng::seeded(seed);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| crate::rng::standard_normal_vec(&mut r, 1))
        .collect();
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y0: Vec<f64> = (0..n).map(|i| x[i][0]).collect();
    let y1: Vec<f64> = (0..n).map(|i| x[i][0] + 1.0).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| if t[i] == 0 { y0[i] } else { y1[i] })
        .collect();
    CausalDataset {
        z_true: x.clone(),
        mu0: y0.clone(),
        mu1: y1.clone(),
        x,
        t,
        y,
        y0,
        y1,
        propensity: vec![0.5; n],
        split: CausalDataset::assign_equal_thirds(n),
    }
}

#[test]
fn identical_decoder_heads_give_zero_cate_post() {
    let mut model = affine_model(1);
    // f(z, t) = z (no t weight): both arms identical.
    set_affine(net_at(&mut model, F), &[1.0, 0.0], &[0.0]);
    set_affine(net_at(&mut model, S), &[0.0, 0.0, 0.0], &[TINY_RAW_VAR]);
    let tm = TrainedModel::raw(model);
    let ds = toy_dataset(12, 5);
    let idx: Vec<usize> = (0..ds.n()).collect();
    let pred = predict_outcomes_post(&tm, &ds, &idx, 16, 7).unwrap();
    for (a, b) in pred.y0.iter().zip(&pred.y1) {
        assert_eq!(a, b);
    }
    assert_eq!(pred.ate(), 0.0);
}

#[test]
fn hand_set_affine_model_predicts_algebraically_post() {
    // Encoder mean = y, decoder f_t(z) = z + t: y = 2 gives (2, 3).
    let mut model = affine_model(1);
    set_affine(net_at(&mut model, F), &[1.0, 1.0], &[0.0]);
    set_affine(net_at(&mut model, R), &[0.0, 1.0, 0.0], &[0.0]);
    set_affine(net_at(&mut model, S), &[0.0, 0.0, 0.0], &[TINY_RAW_VAR]);
    let tm = TrainedModel::raw(model);

    let ds = CausalDataset {
        x: vec![vec![0.3]],
        t: vec![1],
        y: vec![2.0],
        y0: vec![1.9],
        y1: vec![2.0],
        mu0: vec![1.9],
        mu1: vec![2.0],
        z_true: vec![vec![0.0]],
        propensity: vec![0.5],
        split: vec![Split::Train],
    };
    // The decoder is affine, so the draw average equals the decoder at the
    // averaged draw; with variance at the floor the jitter is ~1e-2/sqrt(n).
    let pred = predict_outcomes_post(&tm, &ds, &[0], 10_000, 11).unwrap();
    assert!((pred.y0[0] - 2.0).abs() < 1e-3, "{}", pred.y0[0]);
    assert!((pred.y1[0] - 3.0).abs() < 1e-3, "{}", pred.y1[0]);
    assert!((pred.effects()[0] - 1.0).abs() < 1e-12, "same draws cancel");
}

#[test]
fn posterior_mean_limit_matches_decoder_at_the_mean() {
    // Nonlinear decoder, encoder variance at the floor: the many-draw
    // prediction converges to the decoder mean at the posterior mean.
    let cfg = ModelConfig {
        covariate_dim: 1,
        latent_dim: 1,
        hidden_sizes: vec![8],
        activation: Activation::SmoothInvertible,
        balanced_prior: true,
        separate_decoder_heads: false,
        learn_decoder_noise: true,
        fixed_noise_var: 1.0,
        noise_head_init: 0.0,
        seed: 33,
    };
    let mut model = IntactVae::new(cfg).unwrap();
    // Force the encoder variance head to the floor.
    let s = net_at(&mut model, S);
    s.zero_params();
    let last = s.sizes().len() - 2;
    let off = s.bias_offset(last);
    s.params_mut()[off] = TINY_RAW_VAR;
    let tm = TrainedModel::raw(model);

    let ds = toy_dataset(3, 9);
    let pred = predict_outcomes_post(&tm, &ds, &[0], 10_000, 13).unwrap();
    let x = &ds.x[0];
    let m_q = tm.model.encode(x, &[ds.y[0]], ds.t[0]).unwrap().mean()[0];
    let want0 = tm.model.decoder_mean(&[m_q], 0).unwrap()[0];
    let want1 = tm.model.decoder_mean(&[m_q], 1).unwrap()[0];
    assert!(
        (pred.y0[0] - want0).abs() < 1e-2,
        "{} vs {want0}",
        pred.y0[0]
    );
    assert!(
        (pred.y1[0] - want1).abs() < 1e-2,
        "{} vs {want1}",
        pred.y1[0]
    );
}

#[test]
fn hand_set_affine_model_predicts_algebraically_pre() {
    // Prior mean h(x) = x, decoder f_t(z) = 2z + t: x = 1 gives (2, 3).
    let mut model = affine_model(1);
    set_affine(net_at(&mut model, F), &[2.0, 1.0], &[0.0]);
    set_affine(net_at(&mut model, H), &[1.0], &[0.0]);
    set_affine(net_at(&mut model, K), &[0.0], &[TINY_RAW_VAR]);
    let tm = TrainedModel::raw(model);
    let ds = CausalDataset {
        x: vec![vec![1.0]],
        t: vec![0],
        y: vec![0.0],
        y0: vec![0.0],
        y1: vec![0.0],
        mu0: vec![0.0],
        mu1: vec![0.0],
        z_true: vec![vec![0.0]],
        propensity: vec![0.5],
        split: vec![Split::Test],
    };
    let pred = predict_outcomes_pre(&tm, &ds, &[0], 10_000, 17).unwrap();
    assert!((pred.y0[0] - 2.0).abs() < 2e-3, "{}", pred.y0[0]);
    assert!((pred.y1[0] - 3.0).abs() < 2e-3, "{}", pred.y1[0]);
}

#[test]
fn balanced_prior_makes_both_arms_share_draws() {
    let model = {
        let mut cfg = ModelConfig::new(2, 1, 40);
        cfg.hidden_sizes = vec![8];
        IntactVae::new(cfg).unwrap()
    };
    assert!(model.config().balanced_prior);
    let eps = [0.73];
    let x = [0.2, -0.4];
    assert_eq!(
        model.sample_prior(&x, 0, &eps).unwrap(),
        model.sample_prior(&x, 1, &eps).unwrap()
    );
}

#[test]
fn pre_equals_post_when_encoder_copies_the_prior() {
    // Encoder weights: prior weights on x, zeros on (y, t). The posterior
    // then coincides with the prior and the two prediction paths draw the
    // same latents from the same per-unit streams.
    let mut model = affine_model(2);
    set_affine(net_at(&mut model, F), &[1.4, 0.6], &[0.1]);
    set_affine(net_at(&mut model, H), &[0.8, -0.5], &[0.2]);
    set_affine(net_at(&mut model, K), &[0.0, 0.0], &[-0.3]);
    set_affine(net_at(&mut model, R), &[0.8, -0.5, 0.0, 0.0], &[0.2]);
    set_affine(net_at(&mut model, S), &[0.0, 0.0, 0.0, 0.0], &[-0.3]);
    let tm = TrainedModel::raw(model);

    let mut ds = toy_dataset(9, 21);
    ds.x = ds.x.iter().map(|x| vec![x[0], -x[0] * 0.5]).collect();
    let idx: Vec<usize> = (0..ds.n()).collect();
    let post = predict_outcomes_post(&tm, &ds, &idx, 32, 99).unwrap();
    let pre = predict_outcomes_pre(&tm, &ds, &idx, 32, 99).unwrap();
    assert_eq!(post.y0, pre.y0);
    assert_eq!(post.y1, pre.y1);
}

#[test]
fn ate_error_identities() {
    let ds = toy_dataset(10, 3);
    let idx: Vec<usize> = (0..ds.n()).collect();
    let perfect = PotentialPredictions {
        indices: idx.clone(),
        y0: ds.mu0.clone(),
        y1: ds.mu1.clone(),
    };
    assert_eq!(ate_error(&perfect, &ds).unwrap(), 0.0);
    assert_eq!(sqrt_pehe(&perfect, &ds).unwrap(), 0.0);

    for delta in [0.25, -1.5] {
        let offset = PotentialPredictions {
            indices: idx.clone(),
            y0: ds.mu0.clone(),
            y1: ds.mu1.iter().map(|v| v + delta).collect(),
        };
        assert!((ate_error(&offset, &ds).unwrap() - delta.abs()).abs() < 1e-12);
        assert!((sqrt_pehe(&offset, &ds).unwrap() - delta.abs()).abs() < 1e-12);
    }
}

#[test]
fn metrics_match_a_hand_computed_five_point_case() {
    let ds = CausalDataset {
        x: vec![vec![0.0]; 5],
        t: vec![0, 1, 0, 1, 0],
        y: vec![0.0, 3.0, 1.0, 2.0, -1.0],
        y0: vec![0.0, 1.0, 1.0, 0.5, -1.0],
        y1: vec![2.0, 3.0, 1.5, 2.0, 0.0],
        mu0: vec![0.0, 1.0, 1.0, 0.5, -1.0],
        mu1: vec![2.0, 3.0, 1.5, 2.0, 0.0],
        z_true: vec![vec![0.0]; 5],
        propensity: vec![0.5; 5],
        split: vec![Split::Train; 5],
    };
    let pred = PotentialPredictions {
        indices: vec![0, 1, 2, 3, 4],
        y0: vec![0.5, 1.0, 0.5, 1.0, -0.5],
        y1: vec![2.0, 2.5, 1.5, 2.0, 1.0],
    };
    // True effects: 2.0, 2.0, 0.5, 1.5, 1.0 (mean 1.4).
    // Estimated:    1.5, 1.5, 1.0, 1.0, 1.5 (mean 1.3).
    assert!((ate_error(&pred, &ds).unwrap() - 0.1).abs() < 1e-12);
    // Gaps: 0.5, 0.5, -0.5, 0.5, -0.5; mean square 0.25.
    assert!((sqrt_pehe(&pred, &ds).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn ate_equals_the_mean_of_unit_effects() {
    let pred = PotentialPredictions {
        indices: vec![0, 1, 2],
        y0: vec![0.1, -0.4, 2.0],
        y1: vec![1.0, 0.6, 1.5],
    };
    let mean: f64 = pred.effects().iter().sum::<f64>() / 3.0;
    assert_eq!(pred.ate(), mean);
}

#[test]
fn affine_recovery_recovers_exact_transformations() {
    let mut r = crate::rng::seeded(8);
    let z_true: Vec<f64> = crate::rng::standard_normal_vec(&mut r, 200);
    let t: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();

    let doubled: Vec<f64> = z_true.iter().map(|z| 2.0 * z + 1.0).collect();
    let (f0, f1) = affine_recovery_fit(&doubled, &z_true, &t).unwrap();
    for f in [f0, f1] {
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    let (g0, g1) = affine_recovery_fit(&z_true, &z_true, &t).unwrap();
    for g in [g0, g1] {
        assert!((g.slope - 1.0).abs() < 1e-12);
        assert!(g.intercept.abs() < 1e-12);
        assert!((g.r_squared - 1.0).abs() < 1e-12);
    }
}

#[test]
fn independent_noise_has_near_zero_r_squared() {
    let mut r = crate::rng::seeded(14);
    let n = 500;
    let z_true: Vec<f64> = crate::rng::standard_normal_vec(&mut r, n);
    let noise: Vec<f64> = crate::rng::standard_normal_vec(&mut r, n);
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let (f0, f1) = affine_recovery_fit(&noise, &z_true, &t).unwrap();
    // Under the null, r^2 of ~250 points exceeds 0.05 with probability
    // well under 1%.
    assert!(f0.r_squared < 0.05, "{}", f0.r_squared);
    assert!(f1.r_squared < 0.05, "{}", f1.r_squared);
}

#[test]
fn constant_true_latent_is_flagged_degenerate() {
    let z_true = vec![1.0; 40];
    let z_rec: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let t: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let err = affine_recovery_fit(&z_rec, &z_true, &t).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)), "{err}");
}

#[test]
fn baseline_learns_a_deterministic_treatment_target() {
    // y == t exactly: the regression should learn CATE close to 1.
    let n = 240;
    let mut r = crate::rng::seeded(55);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| crate::rng::standard_normal_vec(&mut r, 2))
        .collect();
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let ds = CausalDataset {
        y: t.iter().map(|&v| v as f64).collect(),
        y0: vec![0.0; n],
        y1: vec![1.0; n],
        mu0: vec![0.0; n],
        mu1: vec![1.0; n],
        z_true: vec![vec![0.0]; n],
        propensity: vec![0.5; n],
        split: CausalDataset::assign_equal_thirds(n),
        x,
        t,
    };
    let cfg = BaselineConfig {
        hidden: vec![16, 16],
        seed: 56,
        ..BaselineConfig::default()
    };
    let pred = naive_regression_baseline(&ds, &cfg).unwrap();
    assert!(
        (pred.ate() - 1.0).abs() < 0.05,
        "learned CATE {}",
        pred.ate()
    );
}

/// Standard error of the regression's ATE estimate: the two-arm residual
/// formula over the training split, which is what limits the contrast.
fn regression_ate_se(pred: &PotentialPredictions, ds: &CausalDataset) -> f64 {
    let train = ds.indices(Split::Train);
    let mut res: [Vec<f64>; 2] = [vec![], vec![]];
    for &i in &train {
        let fitted = if ds.t[i] == 0 { pred.y0[i] } else { pred.y1[i] };
        res[ds.t[i] as usize].push(ds.y[i] - fitted);
    }
    let arm = |v: &Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / v.len() as f64;
        var / v.len() as f64
    };
    (arm(&res[0]) + arm(&res[1])).sqrt()
}

#[test]
fn baseline_is_unbiased_under_ignorability() {
    let mut s = SynthSpec::new(
        71,
        CausalSetting::Ignorable,
        OutcomeKind::NonlinearInvertible,
    );
    s.n_points = 1500;
    let (_, ds) = synth::generate(&s).unwrap();
    let cfg = BaselineConfig {
        seed: 72,
        ..BaselineConfig::default()
    };
    let pred = naive_regression_baseline(&ds, &cfg).unwrap();
    let gap = pred.ate() - ds.empirical_ate(&pred.indices);
    let se = regression_ate_se(&pred, &ds);
    assert!(
        gap.abs() < 3.0 * se,
        "baseline biased under ignorability: gap {gap}, se {se}"
    );
}

#[test]
fn baseline_bias_sign_follows_the_confounding_direction() {
    // Seed 61 has strong confounding through a clearly negative latent
    // slope in the treatment logit.
    let mut s = SynthSpec::new(
        61,
        CausalSetting::ProxyConfounded,
        OutcomeKind::NonlinearInvertible,
    );
    s.n_points = 3000;
    let (model, ds) = synth::generate(&s).unwrap();
    let cfg = BaselineConfig {
        seed: 42,
        ..BaselineConfig::default()
    };
    let pred = naive_regression_baseline(&ds, &cfg).unwrap();
    let bias = pred.ate() - ds.empirical_ate(&pred.indices);
    let se = regression_ate_se(&pred, &ds);
    // Monotone-increasing outcomes with a latent slope in the treatment
    // logit: selection tilts the naive contrast in the slope's direction.
    let slope = model.treatment_fn().weights[0];
    assert!(bias.abs() > 3.0 * se, "bias {bias} vs se {se}");
    assert_eq!(bias.signum(), slope.signum());
}

#[test]
fn predictions_are_invariant_under_the_affine_equivalence() {
    let mut model = affine_model(1);
    set_affine(net_at(&mut model, F), &[1.3, 0.7], &[-0.2]);
    set_affine(net_at(&mut model, H), &[0.9], &[0.1]);
    set_affine(net_at(&mut model, K), &[0.0], &[-0.4]);
    set_affine(net_at(&mut model, R), &[0.5, 0.8, -0.3], &[0.05]);
    set_affine(net_at(&mut model, S), &[0.0, 0.0, 0.0], &[-0.6]);
    let tm = TrainedModel::raw(model);
    let moved = tm.apply_affine_equivalence(&[-2.5], &[1.75]).unwrap();

    let ds = toy_dataset(30, 61);
    let idx: Vec<usize> = (0..ds.n()).collect();
    for (a, b) in [
        (
            predict_outcomes_post(&tm, &ds, &idx, 50, 5).unwrap(),
            predict_outcomes_post(&moved, &ds, &idx, 50, 5).unwrap(),
        ),
        (
            predict_outcomes_pre(&tm, &ds, &idx, 50, 5).unwrap(),
            predict_outcomes_pre(&moved, &ds, &idx, 50, 5).unwrap(),
        ),
    ] {
        for i in 0..idx.len() {
            assert!((a.y0[i] - b.y0[i]).abs() < 1e-10);
            assert!((a.y1[i] - b.y1[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn eval_report_round_trips_through_its_csv_schema() {
    let report = EvalReport {
        seed: 7,
        setting: "proxy_confounded".into(),
        outcome_kind: "linear".into(),
        alpha: 0.2,
        beta: 0.4,
        latent_dim: 1,
        balanced_prior: true,
        eps_ate_pre: 0.125,
        eps_ate_post: 0.25,
        pehe_pre: 0.5,
        pehe_post: 0.75,
        affine_fit_t0: Some(AffineFit {
            slope: 1.5,
            intercept: -0.25,
            r_squared: 0.9,
        }),
        affine_fit_t1: None,
    };
    report.validate().unwrap();
    let row = report.to_csv_row();
    assert_eq!(
        row.split(',').count(),
        EvalReport::csv_header().split(',').count()
    );
    assert!(row.starts_with("7,proxy_confounded,linear,0.2,0.4,1,true,"));
    assert!(row.contains("1.5,-0.25,0.9"));
}

#[test]
fn evaluate_model_produces_a_complete_report() {
    let mut s = SynthSpec::new(81, CausalSetting::ProxyConfounded, OutcomeKind::Linear);
    s.n_points = 120;
    let (_, ds) = synth::generate(&s).unwrap();
    let model = {
        let mut cfg = ModelConfig::new(3, 1, 82);
        cfg.hidden_sizes = vec![8];
        IntactVae::new(cfg).unwrap()
    };
    let tm = TrainedModel::raw(model);
    let meta = RunMeta {
        seed: 81,
        setting: s.setting.name().into(),
        outcome_kind: s.outcome_kind.name().into(),
        alpha: s.alpha,
        beta: s.beta,
    };
    let report = evaluate_model(
        &tm,
        &ds,
        &meta,
        &EvalOptions {
            mc_draws: 8,
            noise_seed: 83,
        },
    )
    .unwrap();
    report.validate().unwrap();
    assert!(report.affine_fit_t0.is_some());
    assert!(report.affine_fit_t1.is_some());
}

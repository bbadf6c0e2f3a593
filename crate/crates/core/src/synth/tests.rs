use super::*;

fn spec(seed: u64, setting: CausalSetting, kind: OutcomeKind) -> SynthSpec {
    SynthSpec::new(seed, setting, kind)
}

#[test]
fn equal_specs_give_identical_models_and_datasets() {
    let s = spec(
        11,
        CausalSetting::ProxyConfounded,
        OutcomeKind::NonlinearInvertible,
    );
    let (m1, d1) = generate(&s).unwrap();
    let (m2, d2) = generate(&s).unwrap();
    assert_eq!(m1.h, m2.h);
    assert_eq!(m1.k, m2.k);
    assert_eq!(m1.l, m2.l);
    assert_eq!(m1.f, m2.f);
    assert_eq!(m1.c, m2.c);
    assert_eq!(d1, d2);
}

#[test]
fn linear_outcomes_have_invertible_slopes() {
    for seed in 0..20 {
        let s = spec(seed, CausalSetting::Ignorable, OutcomeKind::Linear);
        let model = GeneratingModel::build(&s).unwrap();
        for t in 0..2u8 {
            match model.outcome_fn(t) {
                OutcomeFn::Linear { slope, .. } => assert!(slope.abs() >= MIN_LINEAR_SLOPE),
                other => panic!("unexpected outcome fn {other:?}"),
            }
        }
    }
}

#[test]
fn normalized_outcome_variance_is_near_one_per_group() {
    for (seed, kind) in [
        (3u64, OutcomeKind::Linear),
        (4, OutcomeKind::NonlinearInvertible),
    ] {
        let mut s = spec(seed, CausalSetting::ProxyConfounded, kind);
        s.n_points = 4000;
        let (model, ds) = generate(&s).unwrap();
        for t in 0..2u8 {
            let vals: Vec<f64> = (0..ds.n())
                .filter(|&i| ds.t[i] == t)
                .map(|i| model.outcome_mean(ds.z_true[i][0], t))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(
                (0.8..=1.25).contains(&var),
                "seed {seed} group {t}: normalized variance {var}"
            );
        }
    }
}

#[test]
fn zero_outcome_noise_makes_outcomes_deterministic_in_the_latent() {
    let mut s = spec(
        7,
        CausalSetting::ProxyConfounded,
        OutcomeKind::NonlinearInvertible,
    );
    s.alpha = 0.0;
    s.n_points = 300;
    let (model, ds) = generate(&s).unwrap();
    for i in 0..ds.n() {
        let z = ds.z_true[i][0];
        assert_eq!(ds.y0[i], model.outcome_mean(z, 0));
        assert_eq!(ds.y1[i], model.outcome_mean(z, 1));
        let want = if ds.t[i] == 0 { ds.y0[i] } else { ds.y1[i] };
        assert_eq!(ds.y[i], want);
    }
}

#[test]
fn ignorable_propensity_depends_on_x_only() {
    let s = spec(5, CausalSetting::Ignorable, OutcomeKind::Linear);
    let model = GeneratingModel::build(&s).unwrap();
    let x = [0.05, -0.1, 0.2];
    let p1 = model.propensity(&x, -3.0);
    let p2 = model.propensity(&x, 4.0);
    assert_eq!(p1, p2);
    assert!(p1 > 0.0 && p1 < 1.0);
}

#[test]
fn generated_datasets_satisfy_invariants_in_all_settings() {
    for setting in [
        CausalSetting::ProxyConfounded,
        CausalSetting::Instrumental,
        CausalSetting::Ignorable,
    ] {
        for kind in [OutcomeKind::Linear, OutcomeKind::NonlinearInvertible] {
            let mut s = spec(99, setting, kind);
            s.n_points = 200;
            let (_, ds) = generate(&s).unwrap();
            ds.validate().unwrap();
            assert_eq!(ds.n(), 200);
        }
    }
}

#[test]
fn monte_carlo_ate_matches_quadrature() {
    for setting in [
        CausalSetting::ProxyConfounded,
        CausalSetting::Instrumental,
        CausalSetting::Ignorable,
    ] {
        let mut s = spec(13, setting, OutcomeKind::NonlinearInvertible);
        s.n_points = 100_000;
        let (model, ds) = generate(&s).unwrap();
        let all: Vec<usize> = (0..ds.n()).collect();
        let mc = ds.empirical_ate(&all);
        let effects: Vec<f64> = (0..ds.n()).map(|i| ds.y1[i] - ds.y0[i]).collect();
        let var = {
            let mean = mc;
            effects.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / effects.len() as f64
        };
        let se = (var / effects.len() as f64).sqrt();
        let quad = model.true_ate().unwrap();
        assert!(
            (mc - quad).abs() < 3.0 * se,
            "{setting:?}: mc {mc} vs quadrature {quad} (se {se})"
        );
    }
}

#[test]
fn linear_cate_closed_form_matches_quadrature() {
    let s = spec(21, CausalSetting::ProxyConfounded, OutcomeKind::Linear);
    let model = GeneratingModel::build(&s).unwrap();
    let slopes: Vec<(f64, f64)> = (0..2u8)
        .map(|t| match model.outcome_fn(t) {
            OutcomeFn::Linear { slope, intercept } => (*slope, *intercept),
            _ => unreachable!(),
        })
        .collect();
    for x in [[0.0, 0.0, 0.0], [0.1, -0.2, 0.15], [-0.3, 0.3, 0.05]] {
        let hv = model.latent_mean_fn().eval(&x);
        // For affine outcomes the latent expectation passes through exactly.
        let closed = (slopes[1].0 * hv + slopes[1].1) / model.normalizer(1)
            - (slopes[0].0 * hv + slopes[0].1) / model.normalizer(0);
        let quad = model.true_cate(&x).unwrap();
        assert!(
            (closed - quad).abs() < 1e-6,
            "closed {closed} vs quadrature {quad}"
        );
    }
}

#[test]
fn zero_latent_noise_collapses_cate_to_the_mean_path() {
    let mut s = spec(
        23,
        CausalSetting::ProxyConfounded,
        OutcomeKind::NonlinearInvertible,
    );
    s.beta = 0.0;
    let model = GeneratingModel::build(&s).unwrap();
    let x = [0.12, -0.05, 0.2];
    let hv = model.latent_mean_fn().eval(&x);
    let exact = model.outcome_mean(hv, 1) - model.outcome_mean(hv, 0);
    let quad = model.true_cate(&x).unwrap();
    assert!((exact - quad).abs() < 1e-12, "{exact} vs {quad}");
}

#[test]
fn identical_outcome_functions_give_zero_cate() {
    let s = spec(
        31,
        CausalSetting::ProxyConfounded,
        OutcomeKind::NonlinearInvertible,
    );
    let mut model = GeneratingModel::build(&s).unwrap();
    model.f[1] = model.f[0].clone();
    model.c[1] = model.c[0];
    for x in [[0.0, 0.0, 0.0], [0.2, -0.1, 0.1]] {
        assert!(model.true_cate(&x).unwrap().abs() < 1e-12);
    }
}

#[test]
fn naive_difference_of_means_is_confounded_under_the_proxy_setting() {
    let mut s = spec(
        41,
        CausalSetting::ProxyConfounded,
        OutcomeKind::NonlinearInvertible,
    );
    s.n_points = 100_000;
    let (model, ds) = generate(&s).unwrap();
    let (mut sum1, mut n1, mut sum0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    let (mut sq1, mut sq0) = (0.0, 0.0);
    for i in 0..ds.n() {
        if ds.t[i] == 1 {
            sum1 += ds.y[i];
            sq1 += ds.y[i] * ds.y[i];
            n1 += 1;
        } else {
            sum0 += ds.y[i];
            sq0 += ds.y[i] * ds.y[i];
            n0 += 1;
        }
    }
    let (m1, m0) = (sum1 / n1 as f64, sum0 / n0 as f64);
    let v1 = sq1 / n1 as f64 - m1 * m1;
    let v0 = sq0 / n0 as f64 - m0 * m0;
    let se = (v1 / n1 as f64 + v0 / n0 as f64).sqrt();
    let naive = m1 - m0;
    let truth = model.true_ate().unwrap();
    assert!(
        (naive - truth).abs() > 3.0 * se,
        "confounding bias not detected: naive {naive}, truth {truth}, se {se}"
    );
    // The bias direction follows the monotone selection: with increasing
    // outcome functions and a positive latent slope in the treatment logit,
    // treated units have larger latents, so the naive contrast overshoots.
    let slope = model.treatment_fn().weights[0];
    assert_eq!((naive - truth).signum(), slope.signum());
}

#[test]
fn ate_normalization_rescales_outcomes_by_the_cross_model_sd() {
    let mut datasets: Vec<CausalDataset> = (0..5)
        .map(|k| {
            let mut s = spec(100 + k, CausalSetting::ProxyConfounded, OutcomeKind::Linear);
            s.n_points = 300;
            generate(&s).unwrap().1
        })
        .collect();
    let before: Vec<f64> = datasets
        .iter()
        .map(|d| d.empirical_ate(&(0..d.n()).collect::<Vec<_>>()))
        .collect();
    let sd = normalize_ate_across_models(&mut datasets).unwrap();
    let after: Vec<f64> = datasets
        .iter()
        .map(|d| d.empirical_ate(&(0..d.n()).collect::<Vec<_>>()))
        .collect();
    for (b, a) in before.iter().zip(&after) {
        assert!((b / sd - a).abs() < 1e-12);
    }
    for ds in &datasets {
        ds.validate().unwrap();
    }
    let mean = after.iter().sum::<f64>() / after.len() as f64;
    let var = after.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / after.len() as f64;
    assert!((var.sqrt() - 1.0).abs() < 1e-9);
}

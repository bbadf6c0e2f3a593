//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker is the numerical oracle for everything gradient-shaped in
//! this crate: it never calls the code path it verifies, only repeated
//! forward evaluations.

use super::Mlp;
use crate::error::{Error, Result};

/// Central-difference step. With f64 arithmetic this balances truncation
/// against rounding for unit-scale parameters.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over all parameters.
    pub worst_rel_err: f64,
    /// Flat index of the worst parameter.
    pub worst_param: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares [`Mlp::backward`] against central finite differences of
/// `sum(output)` for every parameter and reports the worst relative error.
///
/// The relative error uses `max(|analytic|, |numeric|, 1)` as the scale, so
/// exactly matching gradients report 0 and a corrupted gradient of order one
/// reports an error of order one.
pub fn grad_check(net: &Mlp, input: &[f64], tolerance: f64) -> Result<GradCheckReport> {
    grad_check_against(net, input, tolerance, None)
}

/// Same as [`grad_check`] but verifying a caller-supplied gradient vector
/// instead of the one produced by [`Mlp::backward`]. Used to demonstrate
/// that the checker catches an injected fault.
pub fn grad_check_against(
    net: &Mlp,
    input: &[f64],
    tolerance: f64,
    analytic: Option<&[f64]>,
) -> Result<GradCheckReport> {
    if tolerance <= 0.0 {
        return Err(Error::InvalidConfig("tolerance must be positive".into()));
    }
    let cot = vec![1.0; net.output_dim()];
    let back = net.backward(input, &cot)?;
    let analytic = match analytic {
        Some(g) => {
            if g.len() != net.param_count() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient has length {}, network has {} parameters",
                    g.len(),
                    net.param_count()
                )));
            }
            g
        }
        None => &back.param_grads,
    };

    let mut probe = net.clone();
    let sum_out = |m: &Mlp| -> Result<f64> { Ok(m.forward(input)?.iter().sum()) };

    let mut worst_rel_err: f64 = 0.0;
    let mut worst_param = 0;
    for p in 0..probe.param_count() {
        let orig = probe.params()[p];
        probe.params_mut()[p] = orig + FD_STEP;
        let up = sum_out(&probe)?;
        probe.params_mut()[p] = orig - FD_STEP;
        let dn = sum_out(&probe)?;
        probe.params_mut()[p] = orig;
        let numeric = (up - dn) / (2.0 * FD_STEP);
        let scale = analytic[p].abs().max(numeric.abs()).max(1.0);
        let rel = (analytic[p] - numeric).abs() / scale;
        if rel > worst_rel_err {
            worst_rel_err = rel;
            worst_param = p;
        }
    }

    Ok(GradCheckReport {
        worst_rel_err,
        worst_param,
        tolerance,
        pass: worst_rel_err <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    #[test]
    fn identity_net_checks_exactly() {
        // Linear network: central differences are exact up to rounding.
        let net = Mlp::uniform(&[2, 2], Activation::Identity, 3).unwrap();
        let report = grad_check(&net, &[0.4, -1.3], 1e-4).unwrap();
        assert!(report.pass);
        assert!(report.worst_rel_err < 1e-9, "{}", report.worst_rel_err);
    }

    #[test]
    fn seeded_relu_net_passes_away_from_kinks() {
        let net = Mlp::new(&[3, 8, 1], Activation::Relu, 21).unwrap();
        let report = grad_check(&net, &[0.37, -0.81, 0.55], 1e-4).unwrap();
        assert!(report.pass, "worst rel err {}", report.worst_rel_err);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let net = Mlp::new(&[3, 8, 1], Activation::Relu, 21).unwrap();
        let back = net.backward(&[0.37, -0.81, 0.55], &[1.0]).unwrap();
        let mut corrupted = back.param_grads.clone();
        corrupted[5] += 1.0;
        let report =
            grad_check_against(&net, &[0.37, -0.81, 0.55], 1e-4, Some(&corrupted)).unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst_param, 5);
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        let net = Mlp::new(&[2, 2], Activation::Identity, 0).unwrap();
        assert!(grad_check(&net, &[0.0, 0.0], 0.0).is_err());
    }
}

//! The leave-one-out potential outcomes (LOOP) estimator and the simple
//! difference baseline.
//!
//! Per unit, tau_hat_i = (Y_i - m_hat_i) * U_i, where U_i is the signed
//! inverse probability weight and m_hat_i is imputed without unit i. The
//! average of the tau_hat_i is exactly unbiased for the average treatment
//! effect whenever m_hat_i is independent of T_i.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::experiment::{Caveat, EstimateReport, Experiment, ImputedOutcomes};
use crate::sums::kmean;
use crate::variance::{mse_hats, variance_bound, MseDenominator};

/// Signed inverse probability weight: 1/p if treated, -1/(1-p) if control.
/// Has expectation exactly zero over T ~ Bernoulli(p).
pub fn signed_weight(treated: bool, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok(if treated { 1.0 / p } else { -1.0 / (1.0 - p) })
}

/// Blend of the two imputed potential outcomes: (1-p) * t_hat + p * c_hat.
pub fn combine_m(t_hat: f64, c_hat: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok((1.0 - p) * t_hat + p * c_hat)
}

/// Unbiased single-unit effect estimate (y - m_hat) * u for a signed weight u.
pub fn unit_effect(y: f64, m_hat: f64, u: f64) -> f64 {
    (y - m_hat) * u
}

/// Difference of observed arm means. Defined whenever both arms are nonempty.
pub fn simple_difference(exp: &Experiment) -> Result<f64> {
    let n_treated = exp.n_treated();
    let n_control = exp.n_control();
    if n_treated == 0 || n_control == 0 {
        return Err(Error::InsufficientArm {
            treated: n_treated,
            control: n_control,
            min: 1,
        });
    }
    let mut sum_t = 0.0;
    let mut sum_c = 0.0;
    for (i, &yi) in exp.y().iter().enumerate() {
        if exp.is_treated(i) {
            sum_t += yi;
        } else {
            sum_c += yi;
        }
    }
    Ok(sum_t / n_treated as f64 - sum_c / n_control as f64)
}

/// Per-unit effect estimates (Y_i - m_hat_i) U_i. Supports heterogeneous p_i;
/// requires at least two units per arm, where the leave-one-out estimator is
/// defined.
pub fn loop_tau_units(exp: &Experiment, imputed: &ImputedOutcomes) -> Result<Vec<f64>> {
    imputed.validate_against(exp)?;
    let n_treated = exp.n_treated();
    let n_control = exp.n_control();
    if n_treated < 2 || n_control < 2 {
        return Err(Error::InsufficientArm {
            treated: n_treated,
            control: n_control,
            min: 2,
        });
    }
    (0..exp.n())
        .map(|i| {
            let u = signed_weight(exp.is_treated(i), exp.p()[i])?;
            Ok(unit_effect(exp.y()[i], imputed.m_hat[i], u))
        })
        .collect()
}

/// Options for the full estimate report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub ci_level: f64,
    pub mse_denominator: MseDenominator,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            ci_level: 0.95,
            mse_denominator: MseDenominator::ArmCounts,
        }
    }
}

/// Point estimate, cross-validated variance bound, and normal-approximation
/// interval. Variance estimation assumes a constant treatment probability and
/// errors on heterogeneous p_i; use [`loop_tau_units`] for the point estimate
/// alone in that case.
pub fn loop_estimate(
    exp: &Experiment,
    imputed: &ImputedOutcomes,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    if !(opts.ci_level > 0.0 && opts.ci_level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "ci_level must lie in (0, 1), got {}",
            opts.ci_level
        )));
    }
    let tau_units = loop_tau_units(exp, imputed)?;
    let tau_hat = kmean(&tau_units);

    let p = exp.constant_p().ok_or(Error::NonConstantP)?;
    let (m_t_hat, m_c_hat) = mse_hats(exp, imputed, opts.mse_denominator)?;
    let var_hat = variance_bound(m_t_hat, m_c_hat, p, exp.n())?;
    let se = var_hat.sqrt();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let zcrit = normal.inverse_cdf(0.5 + opts.ci_level / 2.0);
    let ci = (tau_hat - zcrit * se, tau_hat + zcrit * se);

    let mut caveats = vec![Caveat::NormalApproxCi];
    if !imputed.rank_fallback_units.is_empty() {
        caveats.push(Caveat::RankFallback {
            units: imputed.rank_fallback_units.clone(),
        });
    }

    Ok(EstimateReport {
        tau_hat,
        tau_units,
        var_hat,
        se,
        ci_level: opts.ci_level,
        ci,
        m_t_hat,
        m_c_hat,
        n_treated: exp.n_treated(),
        n_control: exp.n_control(),
        imputer_id: imputed.imputer_id.clone(),
        caveats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputers::{build_imputer, ImputerSpec};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn five_unit_exp() -> Experiment {
        Experiment::with_constant_p(
            vec![3.0, 5.0, 1.0, 2.0, 3.0],
            vec![true, true, false, false, false],
            Array2::zeros((5, 0)),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn signed_weight_examples() {
        assert_eq!(signed_weight(true, 0.5).unwrap(), 2.0);
        assert_eq!(signed_weight(false, 0.5).unwrap(), -2.0);
        assert_relative_eq!(signed_weight(false, 0.25).unwrap(), -4.0 / 3.0, max_relative = 1e-15);
        assert!(signed_weight(true, 0.0).is_err());
        assert!(signed_weight(true, 1.0).is_err());
    }

    #[test]
    fn signed_weight_has_zero_expectation() {
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let e = p * signed_weight(true, p).unwrap() + (1.0 - p) * signed_weight(false, p).unwrap();
            assert!(e.abs() < 1e-12, "p={p}: expectation {e}");
        }
    }

    #[test]
    fn combine_m_examples() {
        assert_eq!(combine_m(2.0, 0.0, 0.5).unwrap(), 1.0);
        assert_eq!(combine_m(4.0, 4.0, 0.3).unwrap(), 4.0);
        assert_eq!(combine_m(10.0, 0.0, 0.25).unwrap(), 7.5);
        assert!(combine_m(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn unit_effect_examples() {
        assert_eq!(unit_effect(3.0, 1.0, 2.0), 4.0);
        // A treated unit and its control sibling with a perfect m_hat give the
        // same effect estimate under both arms: zero-variance case.
        assert_eq!(unit_effect(4.0, 3.0, 2.0), 2.0);
        assert_eq!(unit_effect(2.0, 3.0, -2.0), 2.0);
        assert_eq!(unit_effect(5.0, 5.0, -2.0), 0.0);
    }

    #[test]
    fn simple_difference_examples() {
        assert_eq!(simple_difference(&five_unit_exp()).unwrap(), 2.0);

        let flat = Experiment::with_constant_p(
            vec![7.0; 4],
            vec![true, false, true, false],
            Array2::zeros((4, 0)),
            0.5,
        )
        .unwrap();
        assert_eq!(simple_difference(&flat).unwrap(), 0.0);

        let alt = Experiment::with_constant_p(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, false, true, false],
            Array2::zeros((4, 0)),
            0.5,
        )
        .unwrap();
        assert_eq!(simple_difference(&alt).unwrap(), -1.0);
    }

    #[test]
    fn simple_difference_needs_both_arms() {
        let exp = Experiment::with_constant_p(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![true, true, true, true],
            Array2::zeros((4, 0)),
            0.5,
        )
        .unwrap();
        assert!(matches!(
            simple_difference(&exp).unwrap_err(),
            Error::InsufficientArm { .. }
        ));
    }

    #[test]
    fn loop_estimate_five_unit_example() {
        let exp = five_unit_exp();
        let imputer = build_imputer(&ImputerSpec::mean());
        let imputed = imputer.impute(&exp).unwrap();
        let report = loop_estimate(&exp, &imputed, &EstimateOptions::default()).unwrap();

        // Hand-computed per-unit effects.
        let expected = [-1.0, 5.0, 4.5, 2.0, -0.5];
        for (got, want) in report.tau_units.iter().zip(expected) {
            assert_relative_eq!(got, &want, max_relative = 1e-12);
        }
        assert_relative_eq!(report.tau_hat, 2.0, max_relative = 1e-12);
        // Equals the simple difference 4 - 2.
        assert_relative_eq!(report.tau_hat, simple_difference(&exp).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(report.m_t_hat, 4.0, max_relative = 1e-12);
        assert_relative_eq!(report.m_c_hat, 1.5, max_relative = 1e-12);
        assert_relative_eq!(report.var_hat, 1.1 + 0.4 * 6.0_f64.sqrt(), max_relative = 1e-12);
        assert_eq!(report.se, report.var_hat.sqrt());
        assert_relative_eq!(report.ci.0 + report.ci.1, 2.0 * report.tau_hat, max_relative = 1e-12);
    }

    #[test]
    fn perfect_imputation_gives_exact_effects() {
        // t_i = c_i + 3 everywhere, m_hat = m exactly: every tau_unit is 3.
        let t_po = [4.0, 5.0, 6.0, 7.0];
        let c_po = [1.0, 2.0, 3.0, 4.0];
        let t = vec![true, false, true, false];
        let y: Vec<f64> = (0..4).map(|i| if t[i] { t_po[i] } else { c_po[i] }).collect();
        let exp = Experiment::with_constant_p(y, t, Array2::zeros((4, 0)), 0.5).unwrap();
        let m: Vec<f64> = (0..4).map(|i| 0.5 * (t_po[i] + c_po[i])).collect();
        let imputed = ImputedOutcomes {
            t_hat: t_po.to_vec(),
            c_hat: c_po.to_vec(),
            m_hat: m,
            imputer_id: "oracle".into(),
            rank_fallback_units: vec![],
        };
        let units = loop_tau_units(&exp, &imputed).unwrap();
        for u in units {
            assert_relative_eq!(u, 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn loop_estimate_rejects_heterogeneous_p_for_variance() {
        let exp = Experiment::new(
            vec![3.0, 5.0, 1.0, 2.0, 3.0],
            vec![true, true, false, false, false],
            Array2::zeros((5, 0)),
            vec![0.5, 0.5, 0.5, 0.5, 0.25],
            crate::experiment::DesignDescriptor::Bernoulli,
        )
        .unwrap();
        let imputer = build_imputer(&ImputerSpec::mean());
        let imputed = imputer.impute(&exp).unwrap();
        // Point estimate works.
        assert!(loop_tau_units(&exp, &imputed).is_ok());
        // Variance does not.
        assert!(matches!(
            loop_estimate(&exp, &imputed, &EstimateOptions::default()).unwrap_err(),
            Error::NonConstantP
        ));
    }

    #[test]
    fn tau_hat_invariant_under_unit_permutation() {
        use rand::seq::SliceRandom;
        let mut rng = crate::rng::stream(99, &[0]);
        let y = vec![3.0, 5.0, 1.0, 2.0, 3.0, 8.0, -1.0, 0.5];
        let t = vec![true, true, false, false, false, true, false, true];
        let exp = Experiment::with_constant_p(y.clone(), t.clone(), Array2::zeros((8, 0)), 0.5).unwrap();
        let imputer = build_imputer(&ImputerSpec::mean());
        let base = loop_tau_units(&exp, &imputer.impute(&exp).unwrap()).unwrap();
        let base_tau = kmean(&base);

        for _ in 0..20 {
            let mut order: Vec<usize> = (0..8).collect();
            order.shuffle(&mut rng);
            let yp: Vec<f64> = order.iter().map(|&i| y[i]).collect();
            let tp: Vec<bool> = order.iter().map(|&i| t[i]).collect();
            let permuted = Experiment::with_constant_p(yp, tp, Array2::zeros((8, 0)), 0.5).unwrap();
            let units = loop_tau_units(&permuted, &imputer.impute(&permuted).unwrap()).unwrap();
            assert_relative_eq!(kmean(&units), base_tau, max_relative = 1e-12);
        }
    }
}

//! Cross-module identities and property checks that tie the estimator, the
//! variance pieces, and the oracle together.

use approx::assert_relative_eq;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use loop_core::imputers::{build_imputer, ArmFallback, ForestMode, ImputerSpec};
use loop_core::oracle::{
    enumerate_oracle, enumerate_pair, OracleOptions, PotentialOutcomesTable, UndefinedPolicy,
};
use loop_core::sim::{monte_carlo_exhaustive, EstimatorSpec};
use loop_core::{stream, DesignDescriptor, Experiment};

fn table8(seed: u64) -> PotentialOutcomesTable {
    let mut rng = stream(seed, &[80]);
    let n = 8;
    PotentialOutcomesTable {
        t: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        c: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        z: Array2::zeros((n, 0)),
        p: vec![0.5; n],
        design: DesignDescriptor::Bernoulli,
    }
}

/// Var(tau_hat) decomposes into per-unit variances plus pairwise
/// covariances, and the covariance of the per-unit estimates equals the
/// covariance of the weighted imputation errors.
#[test]
fn variance_decomposition_is_self_consistent() {
    let po = table8(1);
    let imputer = build_imputer(&ImputerSpec::mean_with_fallback(ArmFallback::GlobalMean));
    let opts = OracleOptions::default();
    let summary = enumerate_oracle(&po, imputer.as_ref(), &opts).unwrap();

    let n = po.n();
    let mut total = summary.per_unit.iter().map(|u| u.var_tau_hat).sum::<f64>();
    for i in 0..n {
        for j in (i + 1)..n {
            let pair = enumerate_pair(&po, imputer.as_ref(), i, j, &opts).unwrap();
            assert_relative_eq!(pair.gamma, pair.gamma_tau, max_relative = 1e-10, epsilon = 1e-12);
            assert!(pair.rho.abs() <= 1.0 + 1e-12);
            total += 2.0 * pair.gamma_tau;
        }
    }
    let decomposed = total / (n * n) as f64;
    assert_relative_eq!(summary.var_tau_hat, decomposed, max_relative = 1e-10, epsilon = 1e-14);
}

/// The blended imputation error is bounded by the weighted combination of
/// the per-arm errors, unit by unit, on every enumerable instance.
#[test]
fn blended_mse_respects_the_arm_mse_bound() {
    for seed in [2, 3, 4] {
        let po = table8(seed);
        let p = 0.5;
        let imputer = build_imputer(&ImputerSpec::mean_with_fallback(ArmFallback::GlobalMean));
        let summary = enumerate_oracle(&po, imputer.as_ref(), &OracleOptions::default()).unwrap();
        for unit in &summary.per_unit {
            let bound = (1.0 - p) * (1.0 - p) * unit.mse_t_hat
                + p * p * unit.mse_c_hat
                + 2.0 * p * (1.0 - p) * (unit.mse_t_hat * unit.mse_c_hat).sqrt();
            assert!(
                unit.mse_m_hat <= bound * (1.0 + 1e-10) + 1e-12,
                "unit bound violated: {} > {bound}",
                unit.mse_m_hat
            );
        }
    }
}

/// The exhaustive-mode harness and the enumeration oracle agree on the
/// estimator's moments when both condition on the same defined assignments.
#[test]
fn exhaustive_harness_matches_the_oracle() {
    let po = table8(5);
    let spec = ImputerSpec::mean();
    let mc = monte_carlo_exhaustive(
        &po,
        &[EstimatorSpec::Loop {
            imputer: spec.clone(),
        }],
        1 << 20,
        UndefinedPolicy::Condition,
    )
    .unwrap();
    let imputer = build_imputer(&spec);
    let oracle = enumerate_oracle(
        &po,
        imputer.as_ref(),
        &OracleOptions {
            support_cap: 1 << 20,
            on_undefined: UndefinedPolicy::Condition,
        },
    )
    .unwrap();

    assert_eq!(mc.resamples, oracle.skipped_assignments);
    let loop_summary = &mc.estimators[0];
    assert_relative_eq!(
        loop_summary.mean_point,
        oracle.mean_tau_hat,
        max_relative = 1e-12
    );
    assert_relative_eq!(
        loop_summary.true_se,
        oracle.var_tau_hat.sqrt(),
        max_relative = 1e-10
    );
}

/// The leave-one-out contract, bitwise: replacing one unit's outcome and
/// assignment never moves that unit's own imputation, for every exact
/// imputer.
#[test]
fn loo_contract_under_joint_mutation() {
    let mut rng = stream(6, &[0]);
    for instance in 0..25 {
        // Sized so every stratum keeps two per arm even after the mutation
        // flips one assignment.
        let n = 16;
        let zcol: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let y: Vec<f64> = zcol
            .iter()
            .map(|&z| z * 1.5 + rng.random_range(-1.0..1.0))
            .collect();
        let z = Array2::from_shape_vec((n, 1), zcol).unwrap();
        let labels: Vec<String> = (0..n).map(|i| format!("s{}", (i / 2) % 2)).collect();

        let specs = vec![
            ImputerSpec::mean(),
            ImputerSpec::Strata {
                labels,
                fallback: ArmFallback::Error,
            },
            ImputerSpec::ols(),
            ImputerSpec::Forest {
                params: loop_core::forest::ForestParams {
                    n_trees: 20,
                    seed: instance,
                    ..Default::default()
                },
                mode: ForestMode::ExactLoo,
            },
        ];

        let unit = rng.random_range(0..n);
        let mut y2 = y.clone();
        let mut t2 = t.clone();
        y2[unit] = rng.random_range(-50.0..50.0);
        t2[unit] = !t2[unit];

        let exp = Experiment::with_constant_p(y.clone(), t.clone(), z.clone(), 0.5).unwrap();
        let mutated = Experiment::with_constant_p(y2, t2, z.clone(), 0.5).unwrap();
        for spec in &specs {
            let imputer = build_imputer(spec);
            let base = imputer.impute(&exp).unwrap();
            let changed = imputer.impute(&mutated).unwrap();
            assert_eq!(
                base.t_hat[unit], changed.t_hat[unit],
                "instance {instance}: t_hat moved under {:?}",
                imputer.id()
            );
            assert_eq!(
                base.c_hat[unit], changed.c_hat[unit],
                "instance {instance}: c_hat moved under {:?}",
                imputer.id()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// m_hat always recombines from (t_hat, c_hat, p), and the per-unit
    /// effects average to the reported estimate.
    #[test]
    fn imputation_recombines_and_averages(
        raw_y in proptest::collection::vec(-100.0f64..100.0, 8..24),
        flips in proptest::collection::vec(any::<bool>(), 8..24),
        p in 0.05f64..0.95,
    ) {
        let n = raw_y.len().min(flips.len());
        let y = raw_y[..n].to_vec();
        let mut t = flips[..n].to_vec();
        // Ensure two units per arm.
        t[0] = true;
        t[1] = true;
        t[2] = false;
        t[3] = false;
        let exp = Experiment::with_constant_p(y, t, Array2::zeros((n, 0)), p).unwrap();
        let imputed = build_imputer(&ImputerSpec::mean()).impute(&exp).unwrap();
        for i in 0..n {
            let expected = (1.0 - p) * imputed.t_hat[i] + p * imputed.c_hat[i];
            prop_assert!((imputed.m_hat[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
        let report = loop_core::loop_estimate(&exp, &imputed, &Default::default()).unwrap();
        let mean = report.tau_units.iter().sum::<f64>() / n as f64;
        prop_assert!((report.tau_hat - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        prop_assert!(report.var_hat >= 0.0);
        prop_assert!((report.se - report.var_hat.sqrt()).abs() <= 1e-15);
    }

    /// Forest predictions stay inside the observed response range.
    #[test]
    fn forest_predictions_stay_in_range(
        seed in 0u64..50,
        probe in -5.0f64..5.0,
    ) {
        let mut rng = stream(seed, &[7]);
        let n = 30;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| v.sin() * 10.0 + rng.random_range(-1.0..1.0)).collect();
        let forest = loop_core::forest::fit_forest(
            Array2::from_shape_vec((n, 1), x).unwrap().view(),
            &y,
            &loop_core::forest::ForestParams { n_trees: 25, seed, ..Default::default() },
        ).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pred = forest.predict(&[probe]);
        prop_assert!(pred >= lo && pred <= hi);
        for i in 0..n {
            if let Ok(oob) = forest.predict_oob(i) {
                prop_assert!(oob >= lo && oob <= hi);
            }
        }
    }
}

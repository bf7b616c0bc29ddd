//! Random-drop estimation under dependent assignment designs.
//!
//! With a fixed treated count (complete, blocked, or paired randomization),
//! a unit's assignment carries information about the rest of the sample, so
//! plain leave-one-out imputation is no longer independent of it. The fix:
//! when imputing for unit i, also drop one random unit from the opposite arm
//! (from i's block under blocking, i's partner under pairing). The retained
//! composition is then independent of T_i and the estimate stays unbiased.
//!
//! Bernoulli designs pass straight through: no extra drop is needed, so one
//! code path serves every design.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{loop_estimate, signed_weight, unit_effect, EstimateOptions};
use crate::experiment::{Caveat, DesignDescriptor, EstimateReport, Experiment, ImputedOutcomes};
use crate::imputers::{build_imputer, ImputerSpec};
use crate::rng;
use crate::sums::KahanSum;
use rand::Rng;

/// The exclusion set used when imputing for one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DropPlan {
    pub unit: usize,
    /// Always contains `unit`; under dependent designs also one
    /// opposite-arm unit (the pair partner under pairing).
    pub dropped: Vec<usize>,
}

/// Opposite-arm candidates for the extra drop, or `None` when the design
/// needs no drop (Bernoulli). Deterministic designs (pairing) return a
/// single-element pool.
pub fn drop_pool(exp: &Experiment, unit: usize) -> Result<Option<Vec<usize>>> {
    let opposite = |k: usize| exp.is_treated(k) != exp.is_treated(unit);
    match exp.design() {
        DesignDescriptor::Bernoulli => Ok(None),
        DesignDescriptor::CompleteRandomization { .. } => {
            let pool: Vec<usize> = (0..exp.n()).filter(|&k| opposite(k)).collect();
            if pool.is_empty() {
                return Err(Error::EmptyOppositeArm { unit, block: None });
            }
            Ok(Some(pool))
        }
        DesignDescriptor::Blocked { labels } => {
            let pool: Vec<usize> = (0..exp.n())
                .filter(|&k| opposite(k) && labels[k] == labels[unit])
                .collect();
            if pool.is_empty() {
                return Err(Error::EmptyOppositeArm {
                    unit,
                    block: Some(labels[unit].clone()),
                });
            }
            Ok(Some(pool))
        }
        DesignDescriptor::Paired { labels } => {
            let partner = (0..exp.n()).find(|&k| k != unit && labels[k] == labels[unit]);
            match partner {
                Some(k) => Ok(Some(vec![k])),
                None => Err(Error::EmptyOppositeArm {
                    unit,
                    block: Some(labels[unit].clone()),
                }),
            }
        }
    }
}

/// One random drop plan for `unit`, keyed by (seed, unit).
pub fn random_drop_plan(exp: &Experiment, unit: usize, seed: u64) -> Result<DropPlan> {
    match drop_pool(exp, unit)? {
        None => Ok(DropPlan {
            unit,
            dropped: vec![unit],
        }),
        Some(pool) => {
            let mut stream = rng::stream(seed, &[0, unit as u64]);
            let pick = pool[stream.random_range(0..pool.len())];
            Ok(DropPlan {
                unit,
                dropped: vec![unit, pick],
            })
        }
    }
}

/// How to average over the drop randomness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DropMode {
    /// Monte Carlo over drop draws, streams keyed by (seed, rep, unit).
    Sampled { reps: usize, seed: u64 },
    /// Exact average over every possible drop; mean and strata imputers only,
    /// where each per-unit prediction is cheap enough to enumerate.
    Expectation,
}

/// A drop-averaged estimate. `drop_mc_se` is the Monte Carlo standard error
/// of the drop-averaging itself (sampled mode only), not the sampling
/// variance of the estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomDropEstimate {
    pub report: EstimateReport,
    pub imputed: ImputedOutcomes,
    pub reps: usize,
    pub drop_mc_se: Option<f64>,
}

fn expectation_supported(spec: &ImputerSpec) -> bool {
    matches!(spec, ImputerSpec::Mean { .. } | ImputerSpec::Strata { .. })
}

/// Leave-one-out estimation under a dependent design, averaging the per-unit
/// effect estimates over random drops. Validates that the experiment's p_i
/// match the marginal assignment probabilities the design implies.
pub fn loop_with_random_drop(
    exp: &Experiment,
    spec: &ImputerSpec,
    mode: DropMode,
    opts: &EstimateOptions,
) -> Result<RandomDropEstimate> {
    let imputer = build_imputer(spec);

    if let Some(implied) = exp.design().implied_probabilities(exp.t()) {
        for (i, (&have, &want)) in exp.p().iter().zip(&implied).enumerate() {
            if (have - want).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "p[{i}] = {have} but the design implies a marginal of {want}"
                )));
            }
        }
    }

    let session = imputer.session(exp)?;
    let n = exp.n();
    let mut t_hat = vec![0.0; n];
    let mut c_hat = vec![0.0; n];
    let mut rank_fallback_units = Vec::new();
    let mut reps_used = 1usize;
    let mut drop_mc_se = None;

    let pools: Vec<Option<Vec<usize>>> = (0..n)
        .map(|i| drop_pool(exp, i))
        .collect::<Result<_>>()?;
    let dependent = pools.iter().any(|p| p.is_some());

    match mode {
        DropMode::Expectation => {
            if dependent && !expectation_supported(spec) {
                return Err(Error::UnsupportedImputer {
                    imputer: imputer.id(),
                    operation: "expectation-mode random drop".to_string(),
                });
            }
            for i in 0..n {
                match &pools[i] {
                    None => {
                        let pred = session.predict_unit_excluding(i, &[])?;
                        t_hat[i] = pred.t_hat;
                        c_hat[i] = pred.c_hat;
                        if pred.rank_fallback {
                            rank_fallback_units.push(i);
                        }
                    }
                    Some(pool) => {
                        let mut sum_t = KahanSum::new();
                        let mut sum_c = KahanSum::new();
                        for &k in pool {
                            let pred = session.predict_unit_excluding(i, &[k])?;
                            sum_t.add(pred.t_hat);
                            sum_c.add(pred.c_hat);
                        }
                        t_hat[i] = sum_t.value() / pool.len() as f64;
                        c_hat[i] = sum_c.value() / pool.len() as f64;
                    }
                }
            }
        }
        DropMode::Sampled { reps, seed } => {
            if reps == 0 {
                return Err(Error::InvalidInput("reps must be at least 1".into()));
            }
            reps_used = reps;
            let mut rep_tau = Vec::with_capacity(reps);
            let mut sums_t = vec![KahanSum::new(); n];
            let mut sums_c = vec![KahanSum::new(); n];
            for rep in 0..reps {
                let mut tau_acc = KahanSum::new();
                for i in 0..n {
                    let pred = match &pools[i] {
                        None => session.predict_unit_excluding(i, &[])?,
                        Some(pool) => {
                            let mut stream = rng::stream(seed, &[rep as u64, i as u64]);
                            let k = pool[stream.random_range(0..pool.len())];
                            session.predict_unit_excluding(i, &[k])?
                        }
                    };
                    if pred.rank_fallback && !rank_fallback_units.contains(&i) {
                        rank_fallback_units.push(i);
                    }
                    sums_t[i].add(pred.t_hat);
                    sums_c[i].add(pred.c_hat);
                    let m = (1.0 - exp.p()[i]) * pred.t_hat + exp.p()[i] * pred.c_hat;
                    let u = signed_weight(exp.is_treated(i), exp.p()[i])?;
                    tau_acc.add(unit_effect(exp.y()[i], m, u));
                }
                rep_tau.push(tau_acc.value() / n as f64);
            }
            for i in 0..n {
                t_hat[i] = sums_t[i].value() / reps as f64;
                c_hat[i] = sums_c[i].value() / reps as f64;
            }
            if reps > 1 {
                let mean = rep_tau.iter().sum::<f64>() / reps as f64;
                let var = rep_tau.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (reps as f64 - 1.0);
                drop_mc_se = Some((var / reps as f64).sqrt());
            }
        }
    }

    let m_hat: Vec<f64> = (0..n)
        .map(|i| (1.0 - exp.p()[i]) * t_hat[i] + exp.p()[i] * c_hat[i])
        .collect();
    let imputed = ImputedOutcomes {
        t_hat,
        c_hat,
        m_hat,
        imputer_id: imputer.id(),
        rank_fallback_units,
    };

    let mut report = loop_estimate(exp, &imputed, opts)?;
    if dependent {
        report.caveats.push(Caveat::RandomDropVariance);
    }
    Ok(RandomDropEstimate {
        report,
        imputed,
        reps: reps_used,
        drop_mc_se,
    })
}

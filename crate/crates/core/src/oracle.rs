//! Ground truth by brute force: full potential-outcome tables and exact
//! moments of the estimator over every possible treatment assignment.
//!
//! This is the reference the estimator is tested against. Expectations and
//! (co)variances are computed by probability-weighted enumeration of the
//! whole randomization distribution, with compensated summation so exactness
//! assertions at 1e-12 are meaningful.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::designs::drop_pool;
use crate::error::{Error, Result};
use crate::estimator::signed_weight;
use crate::experiment::{DesignDescriptor, Experiment};
use crate::imputers::{ImputeSession, Imputer};
use crate::sums::KahanSum;
use crate::variance::cov_hat_pair_in;

/// Full, never-observed truth: both potential outcomes for every unit.
/// Only simulators and oracles may touch this.
#[derive(Clone, Debug)]
pub struct PotentialOutcomesTable {
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    pub z: Array2<f64>,
    pub p: Vec<f64>,
    pub design: DesignDescriptor,
}

impl PotentialOutcomesTable {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn tau_units(&self) -> Vec<f64> {
        self.t.iter().zip(&self.c).map(|(t, c)| t - c).collect()
    }

    /// The estimand: the average treatment effect over all N units.
    pub fn tau_bar(&self) -> f64 {
        let units = self.tau_units();
        crate::sums::ksum(&units) / units.len() as f64
    }

    /// m_i = (1 - p_i) t_i + p_i c_i, the target of imputation.
    pub fn m_values(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| (1.0 - self.p[i]) * self.t[i] + self.p[i] * self.c[i])
            .collect()
    }

    /// Observed data under one assignment: Y_i = T_i t_i + (1 - T_i) c_i.
    pub fn realize(&self, assignment: &[bool]) -> Experiment {
        let y: Vec<f64> = assignment
            .iter()
            .zip(self.t.iter().zip(&self.c))
            .map(|(&ti, (t, c))| if ti { *t } else { *c })
            .collect();
        Experiment::from_parts_unchecked(
            y,
            assignment.to_vec(),
            self.z.clone(),
            self.p.clone(),
            self.design.clone(),
        )
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.c.len() != n || self.p.len() != n || self.z.nrows() != n {
            return Err(Error::InvalidInput(
                "potential outcome table fields have mismatched lengths".into(),
            ));
        }
        for &pi in &self.p {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::ProbabilityOutOfRange(pi));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UndefinedPolicy {
    /// Fail on the first assignment where the imputer is undefined.
    Error,
    /// Skip undefined assignments and renormalize; the summary discloses
    /// how much probability mass was dropped.
    Condition,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OracleOptions {
    pub support_cap: u128,
    pub on_undefined: UndefinedPolicy,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            support_cap: 1 << 20,
            on_undefined: UndefinedPolicy::Error,
        }
    }
}

/// Exact per-unit moments over the randomization distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnitOracle {
    pub e_tau_hat: f64,
    pub var_tau_hat: f64,
    pub mse_m_hat: f64,
    pub mse_t_hat: f64,
    pub mse_c_hat: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSummary {
    pub mean_tau_hat: f64,
    pub var_tau_hat: f64,
    pub per_unit: Vec<UnitOracle>,
    pub support_size: u64,
    /// Probability mass actually averaged over (1 unless conditioning).
    pub kept_probability: f64,
    pub skipped_assignments: u64,
}

/// Exact pairwise quantities for two units.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairOracle {
    /// Cov(m_hat_i U_i, m_hat_j U_j).
    pub gamma: f64,
    /// Cov(tau_hat_i, tau_hat_j); equal to gamma in exact arithmetic.
    pub gamma_tau: f64,
    /// Correlation form of gamma.
    pub rho: f64,
}

/// The enumerated support with probabilities.
fn support(po: &PotentialOutcomesTable, opts: &OracleOptions) -> Result<Vec<(Vec<bool>, f64)>> {
    let n = po.n();
    match &po.design {
        DesignDescriptor::Bernoulli => {
            let size: u128 = 1u128 << n;
            if size > opts.support_cap {
                return Err(Error::SupportTooLarge {
                    support: size,
                    cap: opts.support_cap,
                });
            }
            let mut out = Vec::with_capacity(size as usize);
            for mask in 0..(1u64 << n) {
                let assignment: Vec<bool> = (0..n).map(|i| (mask >> i) & 1 == 1).collect();
                let mut prob = 1.0;
                for (i, &ti) in assignment.iter().enumerate() {
                    prob *= if ti { po.p[i] } else { 1.0 - po.p[i] };
                }
                out.push((assignment, prob));
            }
            Ok(out)
        }
        DesignDescriptor::CompleteRandomization { n_fixed } => {
            let k = *n_fixed;
            let total = binomial(n as u128, k as u128);
            if total > opts.support_cap {
                return Err(Error::SupportTooLarge {
                    support: total,
                    cap: opts.support_cap,
                });
            }
            let prob = 1.0 / total as f64;
            let mut out = Vec::with_capacity(total as usize);
            let mut combo: Vec<usize> = (0..k).collect();
            loop {
                let mut assignment = vec![false; n];
                for &i in &combo {
                    assignment[i] = true;
                }
                out.push((assignment, prob));
                if !next_combination(&mut combo, n) {
                    break;
                }
            }
            Ok(out)
        }
        other => Err(Error::InvalidInput(format!(
            "enumeration supports Bernoulli and complete randomization, not {other:?}"
        ))),
    }
}

/// The enumerated support, exposed for the exhaustive-mode harness.
pub(crate) fn support_for_harness(
    po: &PotentialOutcomesTable,
    opts: &OracleOptions,
) -> Result<Vec<(Vec<bool>, f64)>> {
    support(po, opts)
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - (k - i) {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Per-assignment quantities of the estimator the design prescribes: plain
/// leave-one-out under Bernoulli, drop-expectation under complete
/// randomization (every drop choice enumerated exactly).
struct PerAssignment {
    tau_units: Vec<f64>,
    m_hat: Vec<f64>,
    t_hat: Vec<f64>,
    c_hat: Vec<f64>,
}

fn evaluate(exp: &Experiment, session: &dyn ImputeSession) -> Result<PerAssignment> {
    let n = exp.n();
    let mut tau_units = Vec::with_capacity(n);
    let mut m_hat = Vec::with_capacity(n);
    let mut t_hat = Vec::with_capacity(n);
    let mut c_hat = Vec::with_capacity(n);
    for i in 0..n {
        let (th, ch) = match exp.design() {
            DesignDescriptor::Bernoulli => {
                let pred = session.predict_unit_excluding(i, &[])?;
                (pred.t_hat, pred.c_hat)
            }
            _ => match drop_pool(exp, i)? {
                None => {
                    let pred = session.predict_unit_excluding(i, &[])?;
                    (pred.t_hat, pred.c_hat)
                }
                Some(pool) => {
                    let mut sum_t = KahanSum::new();
                    let mut sum_c = KahanSum::new();
                    for &k in &pool {
                        let pred = session.predict_unit_excluding(i, &[k])?;
                        sum_t.add(pred.t_hat);
                        sum_c.add(pred.c_hat);
                    }
                    (
                        sum_t.value() / pool.len() as f64,
                        sum_c.value() / pool.len() as f64,
                    )
                }
            },
        };
        let p = exp.p()[i];
        let m = (1.0 - p) * th + p * ch;
        let u = signed_weight(exp.is_treated(i), p)?;
        tau_units.push((exp.y()[i] - m) * u);
        m_hat.push(m);
        t_hat.push(th);
        c_hat.push(ch);
    }
    Ok(PerAssignment {
        tau_units,
        m_hat,
        t_hat,
        c_hat,
    })
}

fn assignment_bytes(assignment: &[bool]) -> Vec<u8> {
    assignment.iter().map(|&b| b as u8).collect()
}

struct Enumeration {
    /// (probability, assignment, estimator quantities) per kept assignment.
    rows: Vec<(f64, Vec<bool>, PerAssignment)>,
    kept_probability: f64,
    skipped: u64,
    support_size: u64,
}

fn enumerate_rows(
    po: &PotentialOutcomesTable,
    imputer: &dyn Imputer,
    opts: &OracleOptions,
) -> Result<Enumeration> {
    po.validate()?;
    let assignments = support(po, opts)?;
    let support_size = assignments.len() as u64;
    let mut rows = Vec::with_capacity(assignments.len());
    let mut kept = KahanSum::new();
    let mut skipped = 0u64;
    for (assignment, prob) in assignments {
        let exp = po.realize(&assignment);
        let result = imputer
            .session(&exp)
            .and_then(|session| evaluate(&exp, session.as_ref()));
        match result {
            Ok(row) => {
                kept.add(prob);
                rows.push((prob, assignment, row));
            }
            Err(err) => match opts.on_undefined {
                UndefinedPolicy::Error => {
                    return Err(Error::UndefinedOnAssignment {
                        assignment: assignment_bytes(&assignment),
                        reason: err.to_string(),
                    });
                }
                UndefinedPolicy::Condition => skipped += 1,
            },
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "imputer undefined on every assignment".into(),
        ));
    }
    Ok(Enumeration {
        rows,
        kept_probability: kept.value(),
        skipped,
        support_size,
    })
}

/// Exact moments of the estimator over the full randomization distribution.
pub fn enumerate_oracle(
    po: &PotentialOutcomesTable,
    imputer: &dyn Imputer,
    opts: &OracleOptions,
) -> Result<OracleSummary> {
    let enumeration = enumerate_rows(po, imputer, opts)?;
    let n = po.n();
    let m_true = po.m_values();
    let norm = enumeration.kept_probability;

    // Pass 1: means and the against-constant MSEs.
    let mut e_tau = vec![KahanSum::new(); n];
    let mut mse_m = vec![KahanSum::new(); n];
    let mut mse_t = vec![KahanSum::new(); n];
    let mut mse_c = vec![KahanSum::new(); n];
    for (prob, _, row) in &enumeration.rows {
        let w = prob / norm;
        for i in 0..n {
            e_tau[i].add(w * row.tau_units[i]);
            mse_m[i].add(w * (row.m_hat[i] - m_true[i]).powi(2));
            mse_t[i].add(w * (row.t_hat[i] - po.t[i]).powi(2));
            mse_c[i].add(w * (row.c_hat[i] - po.c[i]).powi(2));
        }
    }
    let e_tau: Vec<f64> = e_tau.iter().map(KahanSum::value).collect();
    let mean_tau_hat = crate::sums::ksum(&e_tau) / n as f64;

    // Pass 2: central second moments.
    let mut var_tau_units = vec![KahanSum::new(); n];
    let mut var_tau = KahanSum::new();
    for (prob, _, row) in &enumeration.rows {
        let w = prob / norm;
        let tau_hat = crate::sums::ksum(&row.tau_units) / n as f64;
        var_tau.add(w * (tau_hat - mean_tau_hat).powi(2));
        for i in 0..n {
            var_tau_units[i].add(w * (row.tau_units[i] - e_tau[i]).powi(2));
        }
    }

    let per_unit = (0..n)
        .map(|i| UnitOracle {
            e_tau_hat: e_tau[i],
            var_tau_hat: var_tau_units[i].value(),
            mse_m_hat: mse_m[i].value(),
            mse_t_hat: mse_t[i].value(),
            mse_c_hat: mse_c[i].value(),
        })
        .collect();

    Ok(OracleSummary {
        mean_tau_hat,
        var_tau_hat: var_tau.value(),
        per_unit,
        support_size: enumeration.support_size,
        kept_probability: norm,
        skipped_assignments: enumeration.skipped,
    })
}

/// Exact pairwise covariance of the per-unit estimates for units (i, j).
pub fn enumerate_pair(
    po: &PotentialOutcomesTable,
    imputer: &dyn Imputer,
    i: usize,
    j: usize,
    opts: &OracleOptions,
) -> Result<PairOracle> {
    if i == j || i >= po.n() || j >= po.n() {
        return Err(Error::InvalidInput(format!(
            "pair oracle needs two distinct unit indices, got ({i}, {j})"
        )));
    }
    let enumeration = enumerate_rows(po, imputer, opts)?;
    let norm = enumeration.kept_probability;

    // m_hat_k U_k per assignment, the quantity whose pairwise covariance
    // equals Cov(tau_hat_i, tau_hat_j).
    let weighted = |row: &PerAssignment, t: &[bool], k: usize| -> f64 {
        let u = signed_weight(t[k], po.p[k]).expect("validated p");
        row.m_hat[k] * u
    };
    let mean_of = |extract: &dyn Fn(&PerAssignment, &[bool]) -> f64| -> f64 {
        let mut acc = KahanSum::new();
        for (prob, t, row) in &enumeration.rows {
            acc.add(prob / norm * extract(row, t));
        }
        acc.value()
    };

    let mean_mi = mean_of(&|row, t| weighted(row, t, i));
    let mean_mj = mean_of(&|row, t| weighted(row, t, j));
    let mean_ti = mean_of(&|row, _| row.tau_units[i]);
    let mean_tj = mean_of(&|row, _| row.tau_units[j]);

    let mut gamma = KahanSum::new();
    let mut gamma_tau = KahanSum::new();
    let mut var_i = KahanSum::new();
    let mut var_j = KahanSum::new();
    for (prob, t, row) in &enumeration.rows {
        let w = prob / norm;
        let xi = weighted(row, t, i) - mean_mi;
        let xj = weighted(row, t, j) - mean_mj;
        gamma.add(w * xi * xj);
        var_i.add(w * xi * xi);
        var_j.add(w * xj * xj);
        gamma_tau.add(w * (row.tau_units[i] - mean_ti) * (row.tau_units[j] - mean_tj));
    }
    let denom = (var_i.value() * var_j.value()).sqrt();
    let gamma_v = gamma.value();
    Ok(PairOracle {
        gamma: gamma_v,
        gamma_tau: gamma_tau.value(),
        rho: if denom > 0.0 { gamma_v / denom } else { 0.0 },
    })
}

/// Exact expectation of the refit covariance estimator over all Bernoulli
/// assignments; the oracle side of its unbiasedness check.
pub fn enumerate_expected_cov_hat(
    po: &PotentialOutcomesTable,
    imputer: &dyn Imputer,
    i: usize,
    j: usize,
    opts: &OracleOptions,
) -> Result<f64> {
    if !matches!(po.design, DesignDescriptor::Bernoulli) {
        return Err(Error::InvalidInput(
            "the covariance estimator is defined under independent assignments".into(),
        ));
    }
    po.validate()?;
    let assignments = support(po, opts)?;
    let mut acc = KahanSum::new();
    for (assignment, prob) in assignments {
        let exp = po.realize(&assignment);
        let session = imputer.session(&exp).map_err(|err| match opts.on_undefined {
            UndefinedPolicy::Error => Error::UndefinedOnAssignment {
                assignment: assignment_bytes(&assignment),
                reason: err.to_string(),
            },
            UndefinedPolicy::Condition => err,
        })?;
        let g = cov_hat_pair_in(&exp, session.as_ref(), i, j).map_err(|err| {
            Error::UndefinedOnAssignment {
                assignment: assignment_bytes(&assignment),
                reason: err.to_string(),
            }
        })?;
        acc.add(prob * g);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputers::{build_imputer, ArmFallback, ImputerSpec, UnitPrediction};
    use approx::assert_relative_eq;

    fn table8() -> PotentialOutcomesTable {
        PotentialOutcomesTable {
            t: vec![3.0, 4.5, 1.0, 2.0, 5.0, 0.0, 2.5, 3.5],
            c: vec![1.0, 2.0, 0.5, 2.0, 3.0, -1.0, 1.5, 2.0],
            z: Array2::zeros((8, 0)),
            p: vec![0.5; 8],
            design: DesignDescriptor::Bernoulli,
        }
    }

    /// Ignores the data entirely: t_hat = c_hat = 0 for every unit.
    struct ZeroImputer;
    struct ZeroSession;
    impl ImputeSession for ZeroSession {
        fn predict_unit_excluding(&self, _: usize, _: &[usize]) -> Result<UnitPrediction> {
            Ok(UnitPrediction::new(0.0, 0.0))
        }
    }
    impl Imputer for ZeroImputer {
        fn id(&self) -> String {
            "zero".into()
        }
        fn session<'a>(&'a self, _: &'a Experiment) -> Result<Box<dyn ImputeSession + 'a>> {
            Ok(Box::new(ZeroSession))
        }
    }

    #[test]
    fn realize_obeys_the_observation_rule() {
        let po = table8();
        let assignment = vec![true, false, true, false, true, false, true, false];
        let exp = po.realize(&assignment);
        for i in 0..8 {
            let want = if assignment[i] { po.t[i] } else { po.c[i] };
            assert_eq!(exp.y()[i], want);
        }
    }

    #[test]
    fn mean_fallback_is_exactly_unbiased_on_n8() {
        let po = table8();
        let imputer = build_imputer(&ImputerSpec::mean_with_fallback(ArmFallback::GlobalMean));
        let summary = enumerate_oracle(&po, imputer.as_ref(), &OracleOptions::default()).unwrap();
        assert_eq!(summary.support_size, 256);
        assert_eq!(summary.skipped_assignments, 0);
        assert_relative_eq!(summary.kept_probability, 1.0, max_relative = 1e-14);
        assert!(
            (summary.mean_tau_hat - po.tau_bar()).abs() <= 1e-12,
            "bias {}",
            summary.mean_tau_hat - po.tau_bar()
        );
        // Per-unit unbiasedness too.
        for (unit, tau_i) in summary.per_unit.iter().zip(po.tau_units()) {
            assert!((unit.e_tau_hat - tau_i).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_imputer_matches_the_closed_form_variance() {
        // m_hat = 0 for every unit: Var(tau_hat_i) = m_i^2 / (p (1-p)).
        let po = table8();
        let summary = enumerate_oracle(&po, &ZeroImputer, &OracleOptions::default()).unwrap();
        let m = po.m_values();
        for i in 0..po.n() {
            let want = m[i] * m[i] / 0.25;
            assert_relative_eq!(summary.per_unit[i].var_tau_hat, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn deterministic_effect_is_recovered_by_any_loo_imputer() {
        let po = table8();
        let shifted = PotentialOutcomesTable {
            t: po.c.iter().map(|c| c + 3.0).collect(),
            c: po.c.clone(),
            z: po.z.clone(),
            p: po.p.clone(),
            design: po.design.clone(),
        };
        for imputer in [
            build_imputer(&ImputerSpec::mean_with_fallback(ArmFallback::GlobalMean)),
            build_imputer(&ImputerSpec::mean_with_fallback(ArmFallback::Constant {
                value: 0.0,
            })),
        ] {
            let summary =
                enumerate_oracle(&shifted, imputer.as_ref(), &OracleOptions::default()).unwrap();
            assert!((summary.mean_tau_hat - 3.0).abs() <= 1e-12);
        }
        let summary = enumerate_oracle(&shifted, &ZeroImputer, &OracleOptions::default()).unwrap();
        assert!((summary.mean_tau_hat - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn support_cap_is_enforced() {
        let po = table8();
        let opts = OracleOptions {
            support_cap: 100,
            on_undefined: UndefinedPolicy::Error,
        };
        let imputer = build_imputer(&ImputerSpec::mean());
        assert!(matches!(
            enumerate_oracle(&po, imputer.as_ref(), &opts).unwrap_err(),
            Error::SupportTooLarge { .. }
        ));
    }

    #[test]
    fn undefined_assignments_error_or_condition() {
        let po = table8();
        // The plain mean imputer is undefined at the all-control assignment.
        let imputer = build_imputer(&ImputerSpec::mean());
        let err = enumerate_oracle(&po, imputer.as_ref(), &OracleOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UndefinedOnAssignment { .. }));

        let opts = OracleOptions {
            support_cap: 1 << 20,
            on_undefined: UndefinedPolicy::Condition,
        };
        let summary = enumerate_oracle(&po, imputer.as_ref(), &opts).unwrap();
        assert!(summary.skipped_assignments > 0);
        assert!(summary.kept_probability < 1.0);
    }

    #[test]
    fn probabilities_sum_to_one_on_the_support() {
        let po = table8();
        let rows = support(&po, &OracleOptions::default()).unwrap();
        let total: f64 = crate::sums::ksum(&rows.iter().map(|(_, p)| *p).collect::<Vec<_>>());
        assert!((total - 1.0).abs() < 1e-14);

        let complete = PotentialOutcomesTable {
            design: DesignDescriptor::CompleteRandomization { n_fixed: 3 },
            p: vec![3.0 / 8.0; 8],
            ..table8()
        };
        let rows = support(&complete, &OracleOptions::default()).unwrap();
        assert_eq!(rows.len(), 56); // C(8,3)
    }
}

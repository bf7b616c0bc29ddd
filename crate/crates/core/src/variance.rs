//! Variance estimation for the leave-one-out estimator.
//!
//! The reported variance is a bound built from leave-one-out cross-validated
//! mean squared prediction errors of the two arms:
//!
//!   var_hat = (1/N) [ ((1-p)/p) M_t + (p/(1-p)) M_c + 2 sqrt(M_t M_c) ]
//!
//! The pairwise covariance of the per-unit effect estimates is usually
//! negligible; an unbiased refit-based estimator of it is available as an
//! opt-in diagnostic (it costs O(N^2) imputer refits).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Experiment, ImputedOutcomes};
use crate::imputers::{ImputeSession, Imputer, UnitPrediction};
use crate::rng;

/// Denominators for the cross-validated MSE estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MseDenominator {
    /// Observed arm counts n and N-n: the headline, nearly unbiased form.
    ArmCounts,
    /// Expected arm counts Np and N(1-p): exactly unbiased; needs constant p.
    Expected,
}

/// Variance pieces reported alongside an estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub m_t_hat: f64,
    pub m_c_hat: f64,
    pub var_hat: f64,
    pub p: f64,
}

/// Leave-one-out cross-validated MSEs of the treated and control predictions:
/// squared prediction errors averaged over each arm.
pub fn mse_hats(
    exp: &Experiment,
    imputed: &ImputedOutcomes,
    denominator: MseDenominator,
) -> Result<(f64, f64)> {
    imputed.validate_against(exp)?;
    let n = exp.n() as f64;
    let n_treated = exp.n_treated();
    let n_control = exp.n_control();
    if n_treated == 0 || n_control == 0 {
        return Err(Error::InsufficientArm {
            treated: n_treated,
            control: n_control,
            min: 1,
        });
    }

    let mut sq_t = 0.0;
    let mut sq_c = 0.0;
    for i in 0..exp.n() {
        let e = if exp.is_treated(i) {
            &mut sq_t
        } else {
            &mut sq_c
        };
        let pred = if exp.is_treated(i) {
            imputed.t_hat[i]
        } else {
            imputed.c_hat[i]
        };
        let diff = pred - exp.y()[i];
        *e += diff * diff;
    }

    match denominator {
        MseDenominator::ArmCounts => Ok((sq_t / n_treated as f64, sq_c / n_control as f64)),
        MseDenominator::Expected => {
            let p = exp.constant_p().ok_or(Error::NonConstantP)?;
            Ok((sq_t / (n * p), sq_c / (n * (1.0 - p))))
        }
    }
}

/// The variance bound from the two cross-validated MSEs. Inputs are clamped
/// at zero before the square root; they are sums of squares, so a negative
/// value can only be floating-point dust.
pub fn variance_bound(m_t_hat: f64, m_c_hat: f64, p: f64, n_total: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    if n_total == 0 {
        return Err(Error::InvalidInput("empty experiment".into()));
    }
    let m_t = m_t_hat.max(0.0);
    let m_c = m_c_hat.max(0.0);
    Ok(((1.0 - p) / p * m_t + p / (1.0 - p) * m_c + 2.0 * (m_t * m_c).sqrt()) / n_total as f64)
}

/// Pairwise covariance diagnostic: refit-based estimates of
/// Cov(m_hat_i U_i, m_hat_j U_j) and their average.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovDiagnostic {
    /// (i, j, gamma_hat_ij) for each evaluated unordered pair. The estimator
    /// is symmetric in (i, j) by construction.
    pub pairs: Vec<(usize, usize, f64)>,
    pub gamma_bar_hat: f64,
    /// Imputer prediction calls performed.
    pub refits: usize,
}

fn pair_estimate(
    exp: &Experiment,
    base_i: &UnitPrediction,
    excl_i: &UnitPrediction,
    base_j: &UnitPrediction,
    excl_j: &UnitPrediction,
    i: usize,
    j: usize,
) -> f64 {
    let (pi, pj) = (exp.p()[i], exp.p()[j]);
    match (exp.is_treated(i), exp.is_treated(j)) {
        (true, true) => {
            let w = ((1.0 - pi) * (1.0 - pj)) / (pi * pj);
            w * (base_i.t_hat - excl_i.t_hat) * (base_j.t_hat - excl_j.t_hat)
        }
        (false, true) => (base_i.t_hat - excl_i.t_hat) * (excl_j.c_hat - base_j.c_hat),
        (true, false) => (excl_i.c_hat - base_i.c_hat) * (base_j.t_hat - excl_j.t_hat),
        (false, false) => {
            let w = (pi * pj) / ((1.0 - pi) * (1.0 - pj));
            w * (excl_i.c_hat - base_i.c_hat) * (excl_j.c_hat - base_j.c_hat)
        }
    }
}

fn require_exact_refit(imputer: &dyn Imputer, operation: &str) -> Result<()> {
    if imputer.exact_refit() {
        Ok(())
    } else {
        Err(Error::UnsupportedImputer {
            imputer: imputer.id(),
            operation: operation.to_string(),
        })
    }
}

/// Unbiased estimate of Cov(m_hat_i U_i, m_hat_j U_j) from four refits: the
/// "+j" fit keeps unit j with its observed outcome, the "-j" fit excludes it,
/// and both always exclude i (symmetrically for j). Exact-refit imputers only.
pub fn cov_hat_pair(exp: &Experiment, imputer: &dyn Imputer, i: usize, j: usize) -> Result<f64> {
    require_exact_refit(imputer, "pairwise covariance refits")?;
    let session = imputer.session(exp)?;
    cov_hat_pair_in(exp, session.as_ref(), i, j)
}

pub(crate) fn cov_hat_pair_in(
    exp: &Experiment,
    session: &dyn ImputeSession,
    i: usize,
    j: usize,
) -> Result<f64> {
    if i == j || i >= exp.n() || j >= exp.n() {
        return Err(Error::InvalidInput(format!(
            "covariance needs two distinct unit indices, got ({i}, {j})"
        )));
    }
    let base_i = session.predict_unit_excluding(i, &[])?;
    let excl_i = session.predict_unit_excluding(i, &[j])?;
    let base_j = session.predict_unit_excluding(j, &[])?;
    let excl_j = session.predict_unit_excluding(j, &[i])?;
    Ok(pair_estimate(exp, &base_i, &excl_i, &base_j, &excl_j, i, j))
}

/// Averages `cov_hat_pair` over all pairs, or over a uniformly subsampled
/// subset of `pair_budget` pairs when the O(N^2) refit cost is too much.
pub fn gamma_bar_hat(
    exp: &Experiment,
    imputer: &dyn Imputer,
    pair_budget: Option<usize>,
    seed: u64,
) -> Result<CovDiagnostic> {
    require_exact_refit(imputer, "pairwise covariance refits")?;
    let session = imputer.session(exp)?;
    let n = exp.n();
    let all_pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();

    let selected: Vec<(usize, usize)> = match pair_budget {
        Some(budget) if budget < all_pairs.len() => {
            let mut stream = rng::stream(seed, &[0x70ab]);
            let idx =
                rand::seq::index::sample(&mut stream, all_pairs.len(), budget).into_vec();
            let mut idx = idx;
            idx.sort_unstable();
            idx.into_iter().map(|k| all_pairs[k]).collect()
        }
        _ => all_pairs,
    };

    // The "+/-nothing" fits are shared across pairs with a common endpoint.
    let mut base: Vec<Option<UnitPrediction>> = vec![None; n];
    let mut refits = 0usize;
    let mut pairs = Vec::with_capacity(selected.len());
    let mut total = 0.0;
    for (i, j) in selected {
        for &u in &[i, j] {
            if base[u].is_none() {
                base[u] = Some(session.predict_unit_excluding(u, &[])?);
                refits += 1;
            }
        }
        let excl_i = session.predict_unit_excluding(i, &[j])?;
        let excl_j = session.predict_unit_excluding(j, &[i])?;
        refits += 2;
        let g = pair_estimate(
            exp,
            base[i].as_ref().unwrap(),
            &excl_i,
            base[j].as_ref().unwrap(),
            &excl_j,
            i,
            j,
        );
        total += g;
        pairs.push((i, j, g));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to evaluate".into()));
    }
    Ok(CovDiagnostic {
        gamma_bar_hat: total / pairs.len() as f64,
        pairs,
        refits,
    })
}

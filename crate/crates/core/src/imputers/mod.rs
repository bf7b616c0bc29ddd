//! Pluggable leave-one-out imputation of potential outcomes.
//!
//! Every imputer predicts, for each unit, its treated and control outcomes
//! using only the *other* units, which keeps the predictions independent of
//! the unit's own assignment. The session abstraction additionally exposes
//! predictions with extra units excluded; the covariance estimator and the
//! random-drop procedure are built on top of it.

mod forest_imputer;
mod mean;
mod ols;
mod strata;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::combine_m;
use crate::experiment::{Experiment, ImputedOutcomes};
use crate::forest::ForestParams;

pub use forest_imputer::ForestImputer;
pub use mean::MeanImputer;
pub use ols::OlsImputer;
pub use strata::StrataImputer;

/// What to do when an arm (or a stratum's arm) is empty after exclusions.
///
/// `Error` is the faithful estimator: leave-one-out arm means are undefined.
/// The other two keep the imputer defined on every assignment, which the
/// enumeration oracles need. `Constant` never reads the opposite arm, so the
/// pairwise covariance estimator stays exactly unbiased under it;
/// `GlobalMean` pools all units and does not have that property.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArmFallback {
    #[default]
    Error,
    GlobalMean,
    Constant { value: f64 },
}

/// Behavior on a singular leave-one-out least-squares fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankPolicy {
    /// Use the minimum-norm solution and flag the unit in the output.
    #[default]
    MinNorm,
    Error,
}

/// Out-of-bag shortcut or full leave-one-out refits for the forest imputer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForestMode {
    #[default]
    Oob,
    ExactLoo,
}

/// Declarative imputer configuration, expressible in the CLI config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ImputerSpec {
    /// Leave-one-out arm means; makes the estimator equal the simple
    /// difference under constant p.
    Mean {
        #[serde(default)]
        fallback: ArmFallback,
    },
    /// Leave-one-out arm means within supplied strata; equals
    /// post-stratification.
    Strata {
        labels: Vec<String>,
        #[serde(default)]
        fallback: ArmFallback,
    },
    /// Least squares of Y on intercept, T, and Z over the other units;
    /// no interaction terms.
    Ols {
        #[serde(default)]
        on_rank_deficient: RankPolicy,
    },
    /// One regression forest per arm; same-arm predictions are out-of-bag
    /// (or refit without the unit in `exact-loo` mode).
    Forest {
        params: ForestParams,
        #[serde(default)]
        mode: ForestMode,
    },
}

impl ImputerSpec {
    pub fn mean() -> Self {
        ImputerSpec::Mean {
            fallback: ArmFallback::Error,
        }
    }

    pub fn mean_with_fallback(fallback: ArmFallback) -> Self {
        ImputerSpec::Mean { fallback }
    }

    pub fn strata(labels: Vec<String>) -> Self {
        ImputerSpec::Strata {
            labels,
            fallback: ArmFallback::Error,
        }
    }

    pub fn ols() -> Self {
        ImputerSpec::Ols {
            on_rank_deficient: RankPolicy::MinNorm,
        }
    }

    pub fn forest(params: ForestParams, mode: ForestMode) -> Self {
        ImputerSpec::Forest { params, mode }
    }
}

/// Prediction for one unit, fit without that unit (and without any extra
/// exclusions the caller requested).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitPrediction {
    pub t_hat: f64,
    pub c_hat: f64,
    pub rank_fallback: bool,
}

impl UnitPrediction {
    pub(crate) fn new(t_hat: f64, c_hat: f64) -> Self {
        Self {
            t_hat,
            c_hat,
            rank_fallback: false,
        }
    }
}

/// A prepared imputation pass over one experiment. Sessions hold whatever
/// fitted state the imputer needs (e.g. the per-arm forests), so repeated
/// per-unit queries stay cheap.
pub trait ImputeSession: Send + Sync {
    /// (t_hat, c_hat) for `unit`, using only units outside `excluded` and
    /// different from `unit` itself. For exact imputers this is a genuine
    /// refit; the out-of-bag forest filters trees instead.
    fn predict_unit_excluding(&self, unit: usize, excluded: &[usize]) -> Result<UnitPrediction>;
}

pub trait Imputer: Send + Sync {
    fn id(&self) -> String;

    /// Whether `predict_unit_excluding` refits exactly on the reduced data.
    /// False for the out-of-bag forest, whose refit semantics are undefined.
    fn exact_refit(&self) -> bool {
        true
    }

    /// Validates preconditions and prepares per-experiment state.
    fn session<'a>(&'a self, exp: &'a Experiment) -> Result<Box<dyn ImputeSession + 'a>>;

    /// Leave-one-out imputation for every unit.
    fn impute(&self, exp: &Experiment) -> Result<ImputedOutcomes> {
        let session = self.session(exp)?;
        impute_with_session(exp, session.as_ref(), &self.id())
    }
}

pub(crate) fn impute_with_session(
    exp: &Experiment,
    session: &dyn ImputeSession,
    id: &str,
) -> Result<ImputedOutcomes> {
    let n = exp.n();
    let mut t_hat = Vec::with_capacity(n);
    let mut c_hat = Vec::with_capacity(n);
    let mut m_hat = Vec::with_capacity(n);
    let mut rank_fallback_units = Vec::new();
    for i in 0..n {
        let pred = session.predict_unit_excluding(i, &[])?;
        m_hat.push(combine_m(pred.t_hat, pred.c_hat, exp.p()[i])?);
        t_hat.push(pred.t_hat);
        c_hat.push(pred.c_hat);
        if pred.rank_fallback {
            rank_fallback_units.push(i);
        }
    }
    Ok(ImputedOutcomes {
        t_hat,
        c_hat,
        m_hat,
        imputer_id: id.to_string(),
        rank_fallback_units,
    })
}

/// Builds the imputer described by a spec.
pub fn build_imputer(spec: &ImputerSpec) -> Box<dyn Imputer> {
    match spec {
        ImputerSpec::Mean { fallback } => Box::new(MeanImputer::new(*fallback)),
        ImputerSpec::Strata { labels, fallback } => {
            Box::new(StrataImputer::new(labels.clone(), *fallback))
        }
        ImputerSpec::Ols { on_rank_deficient } => Box::new(OlsImputer::new(*on_rank_deficient)),
        ImputerSpec::Forest { params, mode } => {
            Box::new(ForestImputer::new(params.clone(), *mode))
        }
    }
}

/// Shared leave-one-out arm means over an index scope (a stratum, or all
/// units), visiting units in index order so the result is a pure function of
/// the included data.
pub(crate) fn arm_means_excluding(
    exp: &Experiment,
    unit: usize,
    excluded: &[usize],
    in_scope: &dyn Fn(usize) -> bool,
    fallback: ArmFallback,
    scope_name: &dyn Fn() -> String,
) -> Result<UnitPrediction> {
    let mut scope_sum = [0.0f64; 2];
    let mut scope_n = [0usize; 2];
    let mut global_sum = [0.0f64; 2];
    let mut global_n = [0usize; 2];
    let mut all_sum = 0.0f64;
    let mut all_n = 0usize;

    for k in 0..exp.n() {
        if k == unit || excluded.contains(&k) {
            continue;
        }
        let arm = usize::from(exp.is_treated(k));
        let yk = exp.y()[k];
        global_sum[arm] += yk;
        global_n[arm] += 1;
        all_sum += yk;
        all_n += 1;
        if in_scope(k) {
            scope_sum[arm] += yk;
            scope_n[arm] += 1;
        }
    }

    let resolve = |arm: usize| -> Result<f64> {
        if scope_n[arm] > 0 {
            return Ok(scope_sum[arm] / scope_n[arm] as f64);
        }
        match fallback {
            ArmFallback::Error => Err(Error::InsufficientArm {
                treated: scope_n[1],
                control: scope_n[0],
                min: 1,
            }),
            ArmFallback::Constant { value } => Ok(value),
            ArmFallback::GlobalMean => {
                if global_n[arm] > 0 {
                    Ok(global_sum[arm] / global_n[arm] as f64)
                } else if all_n > 0 {
                    Ok(all_sum / all_n as f64)
                } else {
                    Err(Error::InvalidInput(format!(
                        "no units left to impute from in scope {}",
                        scope_name()
                    )))
                }
            }
        }
    };

    Ok(UnitPrediction::new(resolve(1)?, resolve(0)?))
}

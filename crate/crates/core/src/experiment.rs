//! Observed data model: outcomes, assignments, covariates, treatment
//! probabilities, and the randomization design they came from.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How treatment was randomized. Everything beyond `Bernoulli` makes the
/// assignments dependent and routes estimation through the random-drop
/// procedure (see `designs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignDescriptor {
    /// Independent assignments with per-unit probabilities from `Experiment::p`.
    Bernoulli,
    /// Exactly `n_fixed` treated units, drawn uniformly.
    CompleteRandomization { n_fixed: usize },
    /// Fixed treated count within each block; one label per unit.
    Blocked { labels: Vec<String> },
    /// One treated unit per pair; one label per unit.
    Paired { labels: Vec<String> },
}

impl DesignDescriptor {
    /// Checks the design's structural invariants against realized assignments.
    pub fn validate(&self, t: &[bool]) -> Result<()> {
        let n_total = t.len();
        let n_treated = t.iter().filter(|&&x| x).count();
        match self {
            DesignDescriptor::Bernoulli => Ok(()),
            DesignDescriptor::CompleteRandomization { n_fixed } => {
                if *n_fixed != n_treated {
                    return Err(Error::InvalidInput(format!(
                        "design declares {n_fixed} treated units but {n_treated} observed"
                    )));
                }
                if *n_fixed < 2 || *n_fixed + 2 > n_total {
                    return Err(Error::InvalidInput(format!(
                        "complete randomization needs 2 <= n_fixed <= N-2, got n_fixed={n_fixed}, N={n_total}"
                    )));
                }
                Ok(())
            }
            DesignDescriptor::Blocked { labels } => {
                if labels.len() != n_total {
                    return Err(Error::InvalidInput(
                        "block labels must cover every unit".into(),
                    ));
                }
                for label in unique_labels(labels) {
                    let (tr, co) = arm_counts(labels, t, &label);
                    if tr == 0 || co == 0 {
                        return Err(Error::InvalidInput(format!(
                            "block {label:?} has {tr} treated / {co} control; need at least 1 of each"
                        )));
                    }
                }
                Ok(())
            }
            DesignDescriptor::Paired { labels } => {
                if labels.len() != n_total {
                    return Err(Error::InvalidInput(
                        "pair labels must cover every unit".into(),
                    ));
                }
                for label in unique_labels(labels) {
                    let members: Vec<usize> =
                        (0..n_total).filter(|&i| labels[i] == label).collect();
                    if members.len() != 2 || t[members[0]] == t[members[1]] {
                        return Err(Error::InvalidInput(format!(
                            "pair {label:?} must have exactly 2 members with opposite assignments"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Marginal P(T_i = 1) implied by the design, if the design pins it down.
    pub fn implied_probabilities(&self, t: &[bool]) -> Option<Vec<f64>> {
        let n_total = t.len();
        match self {
            DesignDescriptor::Bernoulli => None,
            DesignDescriptor::CompleteRandomization { n_fixed } => {
                Some(vec![*n_fixed as f64 / n_total as f64; n_total])
            }
            DesignDescriptor::Blocked { labels } => {
                let mut p = vec![0.0; n_total];
                for label in unique_labels(labels) {
                    let members: Vec<usize> =
                        (0..n_total).filter(|&i| labels[i] == label).collect();
                    let tr = members.iter().filter(|&&i| t[i]).count();
                    let marginal = tr as f64 / members.len() as f64;
                    for &i in &members {
                        p[i] = marginal;
                    }
                }
                Some(p)
            }
            DesignDescriptor::Paired { .. } => Some(vec![0.5; n_total]),
        }
    }
}

fn unique_labels(labels: &[String]) -> Vec<String> {
    let mut seen = Vec::new();
    for l in labels {
        if !seen.contains(l) {
            seen.push(l.clone());
        }
    }
    seen
}

fn arm_counts(labels: &[String], t: &[bool], label: &str) -> (usize, usize) {
    let mut tr = 0;
    let mut co = 0;
    for (l, &ti) in labels.iter().zip(t) {
        if l == label {
            if ti {
                tr += 1;
            } else {
                co += 1;
            }
        }
    }
    (tr, co)
}

/// Observed data of a randomized experiment: the only input to estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub(crate) y: Vec<f64>,
    pub(crate) t: Vec<bool>,
    pub(crate) z: Array2<f64>,
    pub(crate) p: Vec<f64>,
    pub(crate) design: DesignDescriptor,
}

impl Experiment {
    pub fn new(
        y: Vec<f64>,
        t: Vec<bool>,
        z: Array2<f64>,
        p: Vec<f64>,
        design: DesignDescriptor,
    ) -> Result<Self> {
        let n = y.len();
        if n < 4 {
            return Err(Error::InvalidInput(format!("need at least 4 units, got {n}")));
        }
        if t.len() != n || p.len() != n || z.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: y={n}, t={}, p={}, z rows={}",
                t.len(),
                p.len(),
                z.nrows()
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite outcome {bad}")));
        }
        for &pi in &p {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(Error::ProbabilityOutOfRange(pi));
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "covariate matrix contains a missing or non-finite value".into(),
            ));
        }
        design.validate(&t)?;
        Ok(Self { y, t, z, p, design })
    }

    /// Bernoulli design with a single constant treatment probability.
    pub fn with_constant_p(y: Vec<f64>, t: Vec<bool>, z: Array2<f64>, p: f64) -> Result<Self> {
        let n = y.len();
        Self::new(y, t, z, vec![p; n], DesignDescriptor::Bernoulli)
    }

    /// Skips validation; for internal construction of known-good data.
    pub(crate) fn from_parts_unchecked(
        y: Vec<f64>,
        t: Vec<bool>,
        z: Array2<f64>,
        p: Vec<f64>,
        design: DesignDescriptor,
    ) -> Self {
        Self { y, t, z, p, design }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[bool] {
        &self.t
    }

    pub fn z(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn design(&self) -> &DesignDescriptor {
        &self.design
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.t[i]
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&x| x).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i]).collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.t[i]).collect()
    }

    /// The common treatment probability, or `None` if the p_i differ.
    /// Comparison is exact: near-equal probabilities are still heterogeneous.
    pub fn constant_p(&self) -> Option<f64> {
        let first = self.p[0];
        if self.p.iter().all(|&pi| pi == first) {
            Some(first)
        } else {
            None
        }
    }
}

/// Per-unit leave-one-out predictions of the two potential outcomes and
/// their probability-weighted blend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputedOutcomes {
    pub t_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub imputer_id: String,
    /// Units whose least-squares fit fell back to the minimum-norm solution.
    pub rank_fallback_units: Vec<usize>,
}

impl ImputedOutcomes {
    /// Structural checks against the source experiment: matching lengths,
    /// finite values, and m_hat recombining from (t_hat, c_hat, p) to 1e-12.
    pub fn validate_against(&self, exp: &Experiment) -> Result<()> {
        let n = exp.n();
        if self.t_hat.len() != n || self.c_hat.len() != n || self.m_hat.len() != n {
            return Err(Error::InvalidInput(
                "imputed outcome lengths do not match the experiment".into(),
            ));
        }
        for i in 0..n {
            let (th, ch, mh) = (self.t_hat[i], self.c_hat[i], self.m_hat[i]);
            if !th.is_finite() || !ch.is_finite() || !mh.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite imputation for unit {i}"
                )));
            }
            let expected = (1.0 - exp.p[i]) * th + exp.p[i] * ch;
            let scale = expected.abs().max(mh.abs()).max(1.0);
            if (mh - expected).abs() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!(
                    "m_hat[{i}] = {mh} does not recombine from (t_hat, c_hat, p) = ({th}, {ch}, {})",
                    exp.p[i]
                )));
            }
        }
        Ok(())
    }
}

/// Conditions attached to a report that must never pass silently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Caveat {
    /// Normal-approximation interval; the method itself only yields an SE.
    NormalApproxCi,
    /// Variance reported under a dependent design after drop-averaging,
    /// where the independent-assignment covariance argument no longer holds.
    RandomDropVariance,
    /// Some least-squares fits used the minimum-norm fallback.
    RankFallback { units: Vec<usize> },
    /// Assignments with undefined estimates were redrawn this many times.
    ResampledAssignments { count: u64 },
}

/// Full output of a point-plus-variance estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub tau_hat: f64,
    pub tau_units: Vec<f64>,
    pub var_hat: f64,
    pub se: f64,
    pub ci_level: f64,
    pub ci: (f64, f64),
    pub m_t_hat: f64,
    pub m_c_hat: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub imputer_id: String,
    pub caveats: Vec<Caveat>,
}

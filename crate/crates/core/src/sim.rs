//! Simulation generators and the Monte Carlo harness: draw assignment
//! vectors for a fixed potential-outcome table, run a set of estimators on
//! each realized dataset, and summarize bias, mean nominal SE, and the
//! spread of the point estimates (the "true SE" estimate).

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{loop_estimate, simple_difference, EstimateOptions};
use crate::experiment::{DesignDescriptor, Experiment};
use crate::imputers::{build_imputer, ImputerSpec};
use crate::linalg::ols_classic;
use crate::oracle::PotentialOutcomesTable;
use crate::rng::{derive_seed, stream};
use crate::sums::ksum;

/// Thirty units, one covariate with values {0, 1, 2} (ten units each), and
/// normal potential outcomes with standard deviation 0.1 whose means give
/// unit effects of 1, 0, 1 across the three covariate groups; drawn once per
/// seed. Bernoulli(1/2) assignment.
pub fn gen_sim1(seed: u64) -> PotentialOutcomesTable {
    let mut rng = stream(seed, &[1]);
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let mut t = Vec::with_capacity(30);
    let mut c = Vec::with_capacity(30);
    let mut z = Vec::with_capacity(30);
    for group in 0..3u8 {
        let (c_mean, t_mean) = match group {
            0 => (0.0, 1.0),
            1 => (1.0, 1.0),
            _ => (1.0, 2.0),
        };
        for _ in 0..10 {
            z.push(group as f64);
            c.push(c_mean + noise.sample(&mut rng));
            t.push(t_mean + noise.sample(&mut rng));
        }
    }
    PotentialOutcomesTable {
        t,
        c,
        z: Array2::from_shape_vec((30, 1), z).expect("30x1"),
        p: vec![0.5; 30],
        design: DesignDescriptor::Bernoulli,
    }
}

/// Group weights for the binary-response generator: w = (1, e^{c z/2}, e^{c z}),
/// normalized to probabilities.
pub fn sim2_group_probs(z1: f64, c: f64) -> [f64; 3] {
    let w = [1.0, (0.5 * c * z1).exp(), (c * z1).exp()];
    let total = w[0] + w[1] + w[2];
    [w[0] / total, w[1] / total, w[2] / total]
}

/// Binary-response table: one predictive standard-normal covariate, `k`
/// standard-normal noise covariates, and three outcome groups — (0,0), (0,1),
/// (1,1) for (control, treated) — with membership probabilities tilted by the
/// predictive covariate. Bernoulli(1/2) assignment.
pub fn gen_sim2(n_units: usize, k: usize, c: f64, seed: u64) -> Result<PotentialOutcomesTable> {
    if n_units < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 units, got {n_units}"
        )));
    }
    if c <= 0.0 || !c.is_finite() {
        return Err(Error::InvalidInput(format!(
            "signal strength must be positive, got {c}"
        )));
    }
    let mut rng = stream(seed, &[2]);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let q = k + 1;
    let mut z = Array2::zeros((n_units, q));
    let mut t = Vec::with_capacity(n_units);
    let mut c_po = Vec::with_capacity(n_units);
    for i in 0..n_units {
        let z1: f64 = std_normal.sample(&mut rng);
        z[(i, 0)] = z1;
        for j in 1..q {
            z[(i, j)] = std_normal.sample(&mut rng);
        }
        let probs = sim2_group_probs(z1, c);
        let draw: f64 = rng.random();
        let group = if draw < probs[0] {
            0
        } else if draw < probs[0] + probs[1] {
            1
        } else {
            2
        };
        let (ci, ti) = match group {
            0 => (0.0, 0.0),
            1 => (0.0, 1.0),
            _ => (1.0, 1.0),
        };
        c_po.push(ci);
        t.push(ti);
    }
    Ok(PotentialOutcomesTable {
        t,
        c: c_po,
        z,
        p: vec![0.5; n_units],
        design: DesignDescriptor::Bernoulli,
    })
}

/// An estimator entered into the harness: a point estimate plus its nominal
/// variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    Loop { imputer: ImputerSpec },
    SimpleDifference,
    /// Coefficient on T from Y ~ 1 + T + Z with the classical variance;
    /// the biased comparator.
    OlsAdjusted,
}

impl EstimatorSpec {
    pub fn name(&self) -> String {
        match self {
            EstimatorSpec::Loop { imputer } => format!("loop[{}]", build_imputer(imputer).id()),
            EstimatorSpec::SimpleDifference => "simple-difference".to_string(),
            EstimatorSpec::OlsAdjusted => "ols".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PointEstimate {
    pub point: f64,
    pub nominal_var: f64,
}

/// OLS of Y on [1, T, Z] over the whole sample: the coefficient on T and its
/// classical variance estimate.
pub fn ols_baseline(exp: &Experiment) -> Result<PointEstimate> {
    let q = exp.n_covariates();
    let d = q + 2;
    let rows: Vec<(Vec<f64>, f64)> = (0..exp.n())
        .map(|i| {
            let mut row = Vec::with_capacity(d);
            row.push(1.0);
            row.push(if exp.is_treated(i) { 1.0 } else { 0.0 });
            for j in 0..q {
                row.push(exp.z()[(i, j)]);
            }
            (row, exp.y()[i])
        })
        .collect();
    let fit = ols_classic(rows.iter().map(|(r, y)| (r.as_slice(), *y)), d, 1)
        .ok_or(Error::RankDeficient { unit: None })?;
    Ok(PointEstimate {
        point: fit.coef[1],
        nominal_var: fit.var_coef,
    })
}

/// Neyman variance for the simple difference: s_t^2/n + s_c^2/(N-n).
fn simple_difference_nominal_var(exp: &Experiment) -> f64 {
    let arms = [exp.treated_indices(), exp.control_indices()];
    let mut var = 0.0;
    for arm in &arms {
        let n = arm.len() as f64;
        let mean = arm.iter().map(|&i| exp.y()[i]).sum::<f64>() / n;
        let s2 = arm.iter().map(|&i| (exp.y()[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var += s2 / n;
    }
    var
}

/// Runs one estimator on one realized dataset. `rep_seed` reseeds any
/// internal randomness (forest bootstraps) so replications are independent.
pub fn run_estimator(
    exp: &Experiment,
    spec: &EstimatorSpec,
    rep_seed: u64,
) -> Result<PointEstimate> {
    match spec {
        EstimatorSpec::SimpleDifference => Ok(PointEstimate {
            point: simple_difference(exp)?,
            nominal_var: simple_difference_nominal_var(exp),
        }),
        EstimatorSpec::OlsAdjusted => ols_baseline(exp),
        EstimatorSpec::Loop { imputer } => {
            let reseeded = match imputer {
                ImputerSpec::Forest { params, mode } => {
                    let mut params = params.clone();
                    params.seed = derive_seed(params.seed, &[0xf0e5, rep_seed]);
                    ImputerSpec::Forest {
                        params,
                        mode: *mode,
                    }
                }
                other => other.clone(),
            };
            let imputed = build_imputer(&reseeded).impute(exp)?;
            let report = loop_estimate(exp, &imputed, &EstimateOptions::default())?;
            Ok(PointEstimate {
                point: report.tau_hat,
                nominal_var: report.var_hat,
            })
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    /// Mean point estimate minus the table's true average effect.
    pub bias: f64,
    pub mean_point: f64,
    pub mean_nominal_se: f64,
    /// Standard deviation of the point estimates.
    pub true_se: f64,
    /// Monte Carlo standard error of the bias estimate.
    pub mc_se: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub reps: usize,
    pub seed: u64,
    pub tau_bar: f64,
    /// Assignments redrawn because some estimator was undefined.
    pub resamples: u64,
    pub estimators: Vec<EstimatorSummary>,
}

fn draw_assignment(po: &PotentialOutcomesTable, rng: &mut impl Rng) -> Vec<bool> {
    match &po.design {
        DesignDescriptor::Bernoulli => (0..po.n())
            .map(|i| rng.random::<f64>() < po.p[i])
            .collect(),
        DesignDescriptor::CompleteRandomization { n_fixed } => {
            let chosen = rand::seq::index::sample(rng, po.n(), *n_fixed);
            let mut t = vec![false; po.n()];
            for i in chosen {
                t[i] = true;
            }
            t
        }
        other => panic!("assignment drawing not implemented for {other:?}"),
    }
}

/// Fixed-table Monte Carlo: `reps` assignment draws, all estimators run on
/// the same realized data per draw. Assignments on which any estimator is
/// undefined are redrawn and the count disclosed.
pub fn monte_carlo(
    po: &PotentialOutcomesTable,
    estimators: &[EstimatorSpec],
    reps: usize,
    seed: u64,
) -> Result<MonteCarloSummary> {
    if reps < 2 {
        return Err(Error::InvalidInput("need at least 2 replications".into()));
    }
    const MAX_RESAMPLES_PER_REP: u64 = 1000;

    let results: Result<Vec<(Vec<PointEstimate>, u64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut resamples = 0u64;
            loop {
                let mut rng = stream(seed, &[3, rep as u64, resamples]);
                let assignment = draw_assignment(po, &mut rng);
                let exp = po.realize(&assignment);
                let rep_seed = derive_seed(seed, &[4, rep as u64, resamples]);
                let attempt: Result<Vec<PointEstimate>> = estimators
                    .iter()
                    .map(|spec| run_estimator(&exp, spec, rep_seed))
                    .collect();
                match attempt {
                    Ok(points) => return Ok((points, resamples)),
                    Err(_) if resamples < MAX_RESAMPLES_PER_REP => resamples += 1,
                    Err(err) => return Err(err),
                }
            }
        })
        .collect();
    let results = results?;

    let tau_bar = po.tau_bar();
    let resamples: u64 = results.iter().map(|(_, r)| r).sum();
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(idx, spec)| {
            let points: Vec<f64> = results.iter().map(|(row, _)| row[idx].point).collect();
            let nominal_ses: Vec<f64> = results
                .iter()
                .map(|(row, _)| row[idx].nominal_var.max(0.0).sqrt())
                .collect();
            let mean_point = ksum(&points) / reps as f64;
            let var = points
                .iter()
                .map(|v| (v - mean_point).powi(2))
                .sum::<f64>()
                / (reps as f64 - 1.0);
            let true_se = var.sqrt();
            EstimatorSummary {
                estimator: spec.name(),
                bias: mean_point - tau_bar,
                mean_point,
                mean_nominal_se: ksum(&nominal_ses) / reps as f64,
                true_se,
                mc_se: true_se / (reps as f64).sqrt(),
            }
        })
        .collect();

    Ok(MonteCarloSummary {
        reps,
        seed,
        tau_bar,
        resamples,
        estimators: summaries,
    })
}

/// Regenerating-table harness: each replication draws a fresh
/// potential-outcomes table from `generator` (seeded per replication) plus
/// one assignment. Bias is measured against each table's own true average
/// effect, and `true_se` is the spread of those centered errors.
pub fn monte_carlo_regenerating<G>(
    generator: G,
    estimators: &[EstimatorSpec],
    reps: usize,
    seed: u64,
) -> Result<MonteCarloSummary>
where
    G: Fn(u64) -> Result<PotentialOutcomesTable> + Sync,
{
    if reps < 2 {
        return Err(Error::InvalidInput("need at least 2 replications".into()));
    }
    const MAX_RESAMPLES_PER_REP: u64 = 1000;

    let results: Result<Vec<(Vec<PointEstimate>, f64, u64)>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let table = generator(derive_seed(seed, &[7, rep as u64]))?;
            let mut resamples = 0u64;
            loop {
                let mut rng = stream(seed, &[8, rep as u64, resamples]);
                let assignment = draw_assignment(&table, &mut rng);
                let exp = table.realize(&assignment);
                let rep_seed = derive_seed(seed, &[9, rep as u64, resamples]);
                let attempt: Result<Vec<PointEstimate>> = estimators
                    .iter()
                    .map(|spec| run_estimator(&exp, spec, rep_seed))
                    .collect();
                match attempt {
                    Ok(points) => return Ok((points, table.tau_bar(), resamples)),
                    Err(_) if resamples < MAX_RESAMPLES_PER_REP => resamples += 1,
                    Err(err) => return Err(err),
                }
            }
        })
        .collect();
    let results = results?;

    let mean_tau_bar =
        ksum(&results.iter().map(|(_, tb, _)| *tb).collect::<Vec<_>>()) / reps as f64;
    let resamples: u64 = results.iter().map(|(_, _, r)| r).sum();
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(idx, spec)| {
            let errors: Vec<f64> = results
                .iter()
                .map(|(row, tau_bar, _)| row[idx].point - tau_bar)
                .collect();
            let nominal_ses: Vec<f64> = results
                .iter()
                .map(|(row, _, _)| row[idx].nominal_var.max(0.0).sqrt())
                .collect();
            let bias = ksum(&errors) / reps as f64;
            let var =
                errors.iter().map(|e| (e - bias).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
            let true_se = var.sqrt();
            EstimatorSummary {
                estimator: spec.name(),
                bias,
                mean_point: bias + mean_tau_bar,
                mean_nominal_se: ksum(&nominal_ses) / reps as f64,
                true_se,
                mc_se: true_se / (reps as f64).sqrt(),
            }
        })
        .collect();

    Ok(MonteCarloSummary {
        reps,
        seed,
        tau_bar: mean_tau_bar,
        resamples,
        estimators: summaries,
    })
}

/// Exhaustive-mode harness: every assignment exactly once, weighted by its
/// probability. With `UndefinedPolicy::Condition`, assignments on which any
/// estimator is undefined are skipped and the weights renormalized (the
/// skipped count is reported in `resamples`). Reproduces the enumeration
/// oracle's moments, which ties the two code paths together in tests.
pub fn monte_carlo_exhaustive(
    po: &PotentialOutcomesTable,
    estimators: &[EstimatorSpec],
    support_cap: u128,
    on_undefined: crate::oracle::UndefinedPolicy,
) -> Result<MonteCarloSummary> {
    let opts = crate::oracle::OracleOptions {
        support_cap,
        on_undefined,
    };
    let assignments = crate::oracle::support_for_harness(po, &opts)?;

    let evaluated: Result<Vec<Option<(f64, Vec<PointEstimate>)>>> = assignments
        .par_iter()
        .map(|(assignment, prob)| {
            let exp = po.realize(assignment);
            let points: Result<Vec<PointEstimate>> = estimators
                .iter()
                .map(|spec| run_estimator(&exp, spec, 0))
                .collect();
            match points {
                Ok(points) => Ok(Some((*prob, points))),
                Err(err) => match on_undefined {
                    crate::oracle::UndefinedPolicy::Error => Err(err),
                    crate::oracle::UndefinedPolicy::Condition => Ok(None),
                },
            }
        })
        .collect();
    let evaluated = evaluated?;
    let skipped = evaluated.iter().filter(|row| row.is_none()).count() as u64;
    let rows: Vec<(f64, Vec<PointEstimate>)> = evaluated.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "every assignment left an estimator undefined".into(),
        ));
    }
    let kept: f64 = ksum(&rows.iter().map(|(w, _)| *w).collect::<Vec<_>>());

    let tau_bar = po.tau_bar();
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(idx, spec)| {
            let mean_point: f64 = ksum(
                &rows
                    .iter()
                    .map(|(w, r)| w / kept * r[idx].point)
                    .collect::<Vec<_>>(),
            );
            let var: f64 = ksum(
                &rows
                    .iter()
                    .map(|(w, r)| w / kept * (r[idx].point - mean_point).powi(2))
                    .collect::<Vec<_>>(),
            );
            let mean_nominal_se: f64 = ksum(
                &rows
                    .iter()
                    .map(|(w, r)| w / kept * r[idx].nominal_var.max(0.0).sqrt())
                    .collect::<Vec<_>>(),
            );
            EstimatorSummary {
                estimator: spec.name(),
                bias: mean_point - tau_bar,
                mean_point,
                mean_nominal_se,
                true_se: var.sqrt(),
                mc_se: 0.0,
            }
        })
        .collect();

    Ok(MonteCarloSummary {
        reps: rows.len(),
        seed: 0,
        tau_bar,
        resamples: skipped,
        estimators: summaries,
    })
}

/// Which generator knob a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    NoiseCovariates,
    SampleSize,
    SignalStrength,
}

/// Fixed generator settings for the axes a sweep does not vary.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Sim2Base {
    pub n_units: usize,
    pub k: usize,
    pub c: f64,
}

impl Default for Sim2Base {
    fn default() -> Self {
        Self {
            n_units: 200,
            k: 50,
            c: 3.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub estimator: String,
    pub bias: f64,
    pub mean_nominal_se: f64,
    pub true_se: f64,
    /// true_se divided by the simple-difference true_se at the same point.
    pub rel_true_se: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub value: f64,
    pub tau_bar: f64,
    pub cells: Vec<SweepCell>,
}

/// One grid point of the binary-response sweep: a fresh table per point, a
/// fixed-table Monte Carlo over assignments, results indexed to the simple
/// difference estimator's true SE.
pub fn sweep_sim2(
    axis: SweepAxis,
    grid: &[f64],
    base: Sim2Base,
    estimators: &[EstimatorSpec],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut specs: Vec<EstimatorSpec> = estimators.to_vec();
    if !specs.contains(&EstimatorSpec::SimpleDifference) {
        specs.push(EstimatorSpec::SimpleDifference);
    }

    let mut out = Vec::with_capacity(grid.len());
    for (gi, &value) in grid.iter().enumerate() {
        let (n_units, k, c) = match axis {
            SweepAxis::NoiseCovariates => (base.n_units, value as usize, base.c),
            SweepAxis::SampleSize => (value as usize, base.k, base.c),
            SweepAxis::SignalStrength => (base.n_units, base.k, value),
        };
        let table = gen_sim2(n_units, k, c, derive_seed(seed, &[5, gi as u64]))?;
        let mc = monte_carlo(&table, &specs, trials, derive_seed(seed, &[6, gi as u64]))?;
        let sd_true_se = mc
            .estimators
            .iter()
            .find(|s| s.estimator == "simple-difference")
            .map(|s| s.true_se)
            .expect("simple difference always included");
        let cells = mc
            .estimators
            .iter()
            .map(|s| SweepCell {
                estimator: s.estimator.clone(),
                bias: s.bias,
                mean_nominal_se: s.mean_nominal_se,
                true_se: s.true_se,
                rel_true_se: if sd_true_se > 0.0 {
                    s.true_se / sd_true_se
                } else {
                    f64::NAN
                },
            })
            .collect();
        out.push(SweepPoint {
            axis,
            value,
            tau_bar: mc.tau_bar,
            cells,
        });
    }
    Ok(out)
}

//! Forest-based imputation with one regression forest per arm.
//!
//! The opposite-arm potential outcome of a unit comes from the other arm's
//! forest, which never trained on the unit, so that prediction is exactly
//! independent of the unit's assignment. The same-arm prediction uses the
//! out-of-bag trees (`Oob`), or a forest refit without the unit (`ExactLoo`).
//! With no covariates the forests have nothing to split on and the imputer
//! falls back to leave-one-out arm means.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::forest::{fit_forest, Forest, ForestParams};
use crate::imputers::{
    arm_means_excluding, ArmFallback, ForestMode, ImputeSession, Imputer, UnitPrediction,
};
use crate::rng::derive_seed;

const TREATED_LANE: u64 = 1;
const CONTROL_LANE: u64 = 2;
const REFIT_LANE: u64 = 3;

pub struct ForestImputer {
    params: ForestParams,
    mode: ForestMode,
}

impl ForestImputer {
    pub fn new(params: ForestParams, mode: ForestMode) -> Self {
        Self { params, mode }
    }
}

struct ArmData {
    members: Vec<usize>,
    y: Vec<f64>,
    z: Array2<f64>,
    lane: u64,
}

impl ArmData {
    fn gather(exp: &Experiment, treated: bool, lane: u64) -> Self {
        let members: Vec<usize> = (0..exp.n())
            .filter(|&i| exp.is_treated(i) == treated)
            .collect();
        let q = exp.n_covariates();
        let mut z = Array2::zeros((members.len(), q));
        let mut y = Vec::with_capacity(members.len());
        for (r, &i) in members.iter().enumerate() {
            y.push(exp.y()[i]);
            for j in 0..q {
                z[(r, j)] = exp.z()[(i, j)];
            }
        }
        Self { members, y, z, lane }
    }

    fn position_of(&self, unit: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == unit)
    }

    /// Rows of this arm minus the given (unit-index) exclusions.
    fn without(&self, drop: &[usize]) -> (Vec<f64>, Array2<f64>) {
        let keep: Vec<usize> = (0..self.members.len())
            .filter(|&r| !drop.contains(&self.members[r]))
            .collect();
        let q = self.z.ncols();
        let mut z = Array2::zeros((keep.len(), q));
        let mut y = Vec::with_capacity(keep.len());
        for (r, &src) in keep.iter().enumerate() {
            y.push(self.y[src]);
            for j in 0..q {
                z[(r, j)] = self.z[(src, j)];
            }
        }
        (y, z)
    }
}

struct ForestSession<'a> {
    exp: &'a Experiment,
    params: ForestParams,
    mode: ForestMode,
    treated: ArmData,
    control: ArmData,
    /// Shared per-arm forests; fitted in out-of-bag mode only.
    treated_forest: Option<Forest>,
    control_forest: Option<Forest>,
}

impl ForestSession<'_> {
    fn z_row(&self, unit: usize) -> Vec<f64> {
        (0..self.exp.n_covariates())
            .map(|j| self.exp.z()[(unit, j)])
            .collect()
    }

    /// Out-of-bag prediction from one arm's shared forest, skipping trees
    /// whose bag contains the unit or any excluded member of that arm.
    fn oob_prediction(
        &self,
        arm: &ArmData,
        forest: &Forest,
        unit: usize,
        excluded_in_arm: &[usize],
        row: &[f64],
    ) -> Result<f64> {
        let mut positions: Vec<usize> = excluded_in_arm
            .iter()
            .filter_map(|&e| arm.position_of(e))
            .collect();
        if let Some(p) = arm.position_of(unit) {
            positions.push(p);
        }
        if positions.is_empty() {
            return Ok(forest.predict(row));
        }
        forest
            .predict_excluding(row, &positions)
            .map_err(|_| Error::NoOobTrees { unit })
    }

    /// Exact refit on one arm with the unit and exclusions removed. The
    /// refit seed is keyed by (arm, unit) only, never by the unit's own
    /// assignment, so the prediction is a fixed function of the other
    /// units' data: replacing (Y_unit, T_unit) cannot move it.
    fn refit_prediction(
        &self,
        arm: &ArmData,
        unit: usize,
        excluded_in_arm: &[usize],
        row: &[f64],
    ) -> Result<f64> {
        let mut drop = vec![unit];
        drop.extend_from_slice(excluded_in_arm);
        let (y, z) = arm.without(&drop);
        if y.len() < 2 {
            return Err(Error::InsufficientArm {
                treated: self.exp.n_treated(),
                control: self.exp.n_control(),
                min: 3,
            });
        }
        let seed = derive_seed(self.params.seed, &[arm.lane, REFIT_LANE, unit as u64]);
        let refit = fit_forest(z.view(), &y, &self.params.clone().with_seed(seed))?;
        Ok(refit.predict(row))
    }
}

impl ImputeSession for ForestSession<'_> {
    fn predict_unit_excluding(&self, unit: usize, excluded: &[usize]) -> Result<UnitPrediction> {
        let row = self.z_row(unit);
        let (excl_treated, excl_control): (Vec<usize>, Vec<usize>) = excluded
            .iter()
            .filter(|&&e| e != unit)
            .partition(|&&e| self.exp.is_treated(e));

        let (t_hat, c_hat) = match self.mode {
            ForestMode::ExactLoo => {
                let t = self.refit_prediction(&self.treated, unit, &excl_treated, &row)?;
                let c = self.refit_prediction(&self.control, unit, &excl_control, &row)?;
                (t, c)
            }
            ForestMode::Oob => {
                let t_forest = self.treated_forest.as_ref().expect("fitted in oob mode");
                let c_forest = self.control_forest.as_ref().expect("fitted in oob mode");
                let t = self.oob_prediction(&self.treated, t_forest, unit, &excl_treated, &row)?;
                let c = self.oob_prediction(&self.control, c_forest, unit, &excl_control, &row)?;
                (t, c)
            }
        };
        Ok(UnitPrediction::new(t_hat, c_hat))
    }
}

/// Mean-imputation stand-in when there are no covariates to learn from.
struct NoCovariateSession<'a> {
    exp: &'a Experiment,
}

impl ImputeSession for NoCovariateSession<'_> {
    fn predict_unit_excluding(&self, unit: usize, excluded: &[usize]) -> Result<UnitPrediction> {
        arm_means_excluding(
            self.exp,
            unit,
            excluded,
            &|_| true,
            ArmFallback::Error,
            &|| "all units".to_string(),
        )
    }
}

impl Imputer for ForestImputer {
    fn id(&self) -> String {
        let mode = match self.mode {
            ForestMode::Oob => "oob",
            ForestMode::ExactLoo => "exact-loo",
        };
        format!(
            "forest[{mode},trees={},seed={}]",
            self.params.n_trees, self.params.seed
        )
    }

    fn exact_refit(&self) -> bool {
        self.mode == ForestMode::ExactLoo
    }

    fn session<'a>(&'a self, exp: &'a Experiment) -> Result<Box<dyn ImputeSession + 'a>> {
        let (tr, co) = (exp.n_treated(), exp.n_control());
        if tr < 2 || co < 2 {
            return Err(Error::InsufficientArm {
                treated: tr,
                control: co,
                min: 2,
            });
        }
        if exp.n_covariates() == 0 {
            return Ok(Box::new(NoCovariateSession { exp }));
        }
        let treated = ArmData::gather(exp, true, TREATED_LANE);
        let control = ArmData::gather(exp, false, CONTROL_LANE);
        let (treated_forest, control_forest) = match self.mode {
            ForestMode::ExactLoo => (None, None),
            ForestMode::Oob => {
                let fit_arm = |arm: &ArmData| {
                    fit_forest(
                        arm.z.view(),
                        &arm.y,
                        &self
                            .params
                            .clone()
                            .with_seed(derive_seed(self.params.seed, &[arm.lane])),
                    )
                };
                (Some(fit_arm(&treated)?), Some(fit_arm(&control)?))
            }
        };
        Ok(Box::new(ForestSession {
            exp,
            params: self.params.clone(),
            mode: self.mode,
            treated,
            control,
            treated_forest,
            control_forest,
        }))
    }
}

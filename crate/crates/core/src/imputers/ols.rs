//! Least-squares imputation: for each unit, regress Y on an intercept, T,
//! and the covariates over the other units, then predict both potential
//! outcomes at (T=1, Z_i) and (T=0, Z_i). No interaction terms.

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::imputers::{ImputeSession, Imputer, RankPolicy, UnitPrediction};
use crate::linalg::lstsq_rows;

pub struct OlsImputer {
    on_rank_deficient: RankPolicy,
}

impl OlsImputer {
    pub fn new(on_rank_deficient: RankPolicy) -> Self {
        Self { on_rank_deficient }
    }
}

struct OlsSession<'a> {
    exp: &'a Experiment,
    on_rank_deficient: RankPolicy,
}

impl OlsSession<'_> {
    fn design_row(&self, k: usize) -> Vec<f64> {
        let q = self.exp.n_covariates();
        let mut row = Vec::with_capacity(q + 2);
        row.push(1.0);
        row.push(if self.exp.is_treated(k) { 1.0 } else { 0.0 });
        for j in 0..q {
            row.push(self.exp.z()[(k, j)]);
        }
        row
    }
}

impl ImputeSession for OlsSession<'_> {
    fn predict_unit_excluding(&self, unit: usize, excluded: &[usize]) -> Result<UnitPrediction> {
        let exp = self.exp;
        let q = exp.n_covariates();
        let d = q + 2;

        let included: Vec<usize> = (0..exp.n())
            .filter(|&k| k != unit && !excluded.contains(&k))
            .collect();
        let rows: Vec<(Vec<f64>, f64)> = included
            .iter()
            .map(|&k| (self.design_row(k), exp.y()[k]))
            .collect();

        let fit = lstsq_rows(
            rows.iter().map(|(r, y)| (r.as_slice(), *y)),
            d,
            self.on_rank_deficient == RankPolicy::MinNorm,
        )
        .ok_or(Error::RankDeficient { unit: Some(unit) })?;

        let at = |t_value: f64| -> f64 {
            let mut v = fit.coef[0] + fit.coef[1] * t_value;
            for j in 0..q {
                v += fit.coef[2 + j] * exp.z()[(unit, j)];
            }
            v
        };
        Ok(UnitPrediction {
            t_hat: at(1.0),
            c_hat: at(0.0),
            rank_fallback: fit.rank_fallback,
        })
    }
}

impl Imputer for OlsImputer {
    fn id(&self) -> String {
        "ols".to_string()
    }

    fn session<'a>(&'a self, exp: &'a Experiment) -> Result<Box<dyn ImputeSession + 'a>> {
        let q = exp.n_covariates();
        if exp.n() < q + 4 {
            return Err(Error::InvalidInput(format!(
                "least-squares imputation needs N - 1 >= q + 3 (N = {}, q = {q})",
                exp.n()
            )));
        }
        Ok(Box::new(OlsSession {
            exp,
            on_rank_deficient: self.on_rank_deficient,
        }))
    }
}

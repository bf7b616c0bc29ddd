//! Stratum-wise arm-mean imputation. With a single decision tree's leaf
//! labels as strata this reproduces the post-stratified estimator: within
//! each stratum the per-unit effects average to the stratum's simple
//! difference, and the overall average weights strata by size.

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::imputers::{
    arm_means_excluding, ArmFallback, ImputeSession, Imputer, UnitPrediction,
};

pub struct StrataImputer {
    labels: Vec<String>,
    fallback: ArmFallback,
}

impl StrataImputer {
    pub fn new(labels: Vec<String>, fallback: ArmFallback) -> Self {
        Self { labels, fallback }
    }
}

struct StrataSession<'a> {
    exp: &'a Experiment,
    labels: &'a [String],
    fallback: ArmFallback,
}

impl ImputeSession for StrataSession<'_> {
    fn predict_unit_excluding(&self, unit: usize, excluded: &[usize]) -> Result<UnitPrediction> {
        let label = &self.labels[unit];
        arm_means_excluding(
            self.exp,
            unit,
            excluded,
            &|k| self.labels[k] == *label,
            self.fallback,
            &|| format!("stratum {label:?}"),
        )
    }
}

impl Imputer for StrataImputer {
    fn id(&self) -> String {
        let mut distinct: Vec<&String> = Vec::new();
        for l in &self.labels {
            if !distinct.contains(&l) {
                distinct.push(l);
            }
        }
        format!("strata[k={}]", distinct.len())
    }

    fn session<'a>(&'a self, exp: &'a Experiment) -> Result<Box<dyn ImputeSession + 'a>> {
        if self.labels.len() != exp.n() {
            return Err(Error::InvalidInput(format!(
                "{} stratum labels for {} units",
                self.labels.len(),
                exp.n()
            )));
        }
        if self.fallback == ArmFallback::Error {
            let mut seen: Vec<&String> = Vec::new();
            for label in &self.labels {
                if seen.contains(&label) {
                    continue;
                }
                seen.push(label);
                let mut tr = 0;
                let mut co = 0;
                for i in 0..exp.n() {
                    if self.labels[i] == *label {
                        if exp.is_treated(i) {
                            tr += 1;
                        } else {
                            co += 1;
                        }
                    }
                }
                if tr < 2 || co < 2 {
                    return Err(Error::StratumTooSmall {
                        label: label.clone(),
                        treated: tr,
                        control: co,
                    });
                }
            }
        }
        Ok(Box::new(StrataSession {
            exp,
            labels: &self.labels,
            fallback: self.fallback,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imputers::MeanImputer;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_stratum_matches_mean_imputer() {
        let exp = Experiment::with_constant_p(
            vec![3.0, 5.0, 1.0, 2.0, 3.0, 4.0],
            vec![true, true, false, false, false, true],
            Array2::zeros((6, 0)),
            0.5,
        )
        .unwrap();
        let strata = StrataImputer::new(labels(&["s"; 6]), ArmFallback::Error)
            .impute(&exp)
            .unwrap();
        let mean = MeanImputer::new(ArmFallback::Error).impute(&exp).unwrap();
        for i in 0..exp.n() {
            assert_relative_eq!(strata.t_hat[i], mean.t_hat[i], max_relative = 1e-12);
            assert_relative_eq!(strata.c_hat[i], mean.c_hat[i], max_relative = 1e-12);
            assert_relative_eq!(strata.m_hat[i], mean.m_hat[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn per_stratum_loo_means() {
        // Two strata, each a copy of the five-unit example.
        let y = vec![3.0, 5.0, 1.0, 2.0, 3.0, 3.0, 5.0, 1.0, 2.0, 3.0];
        let t = vec![
            true, true, false, false, false, true, true, false, false, false,
        ];
        let exp =
            Experiment::with_constant_p(y, t, Array2::zeros((10, 0)), 0.5).unwrap();
        let lab = labels(&["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"]);
        // Stratum "a" needs 2 treated: unit 0 and 1 are both treated, fine.
        let imputed = StrataImputer::new(lab, ArmFallback::Error).impute(&exp).unwrap();
        // Within stratum a, unit 0 sees only unit 1 as treated.
        assert_relative_eq!(imputed.t_hat[0], 5.0);
        assert_relative_eq!(imputed.c_hat[0], 2.0);
        // Stratum b mirrors it.
        assert_relative_eq!(imputed.t_hat[5], 5.0);
        assert_relative_eq!(imputed.c_hat[5], 2.0);
    }

    #[test]
    fn undersized_stratum_is_named() {
        let exp = Experiment::with_constant_p(
            vec![3.0, 5.0, 1.0, 2.0, 3.0, 4.0],
            vec![true, true, false, false, false, true],
            Array2::zeros((6, 0)),
            0.5,
        )
        .unwrap();
        let err = StrataImputer::new(
            labels(&["a", "a", "a", "b", "b", "b"]),
            ArmFallback::Error,
        )
        .impute(&exp)
        .unwrap_err();
        match err {
            Error::StratumTooSmall { label, .. } => assert_eq!(label, "a"),
            other => panic!("expected StratumTooSmall, got {other:?}"),
        }
    }
}

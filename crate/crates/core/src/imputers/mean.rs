//! Arm-mean imputation: t_hat_i and c_hat_i are the leave-one-out means of
//! the observed treated and control outcomes. Under constant p the resulting
//! estimate is exactly the simple difference of arm means.

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::imputers::{
    arm_means_excluding, ArmFallback, ImputeSession, Imputer, UnitPrediction,
};

pub struct MeanImputer {
    fallback: ArmFallback,
}

impl MeanImputer {
    pub fn new(fallback: ArmFallback) -> Self {
        Self { fallback }
    }
}

struct MeanSession<'a> {
    exp: &'a Experiment,
    fallback: ArmFallback,
}

impl ImputeSession for MeanSession<'_> {
    fn predict_unit_excluding(&self, unit: usize, excluded: &[usize]) -> Result<UnitPrediction> {
        arm_means_excluding(
            self.exp,
            unit,
            excluded,
            &|_| true,
            self.fallback,
            &|| "all units".to_string(),
        )
    }
}

impl Imputer for MeanImputer {
    fn id(&self) -> String {
        match self.fallback {
            ArmFallback::Error => "mean".to_string(),
            ArmFallback::GlobalMean => "mean[fallback=global-mean]".to_string(),
            ArmFallback::Constant { value } => format!("mean[fallback={value}]"),
        }
    }

    fn session<'a>(&'a self, exp: &'a Experiment) -> Result<Box<dyn ImputeSession + 'a>> {
        if self.fallback == ArmFallback::Error {
            let (tr, co) = (exp.n_treated(), exp.n_control());
            if tr < 2 || co < 2 {
                return Err(Error::InsufficientArm {
                    treated: tr,
                    control: co,
                    min: 2,
                });
            }
        }
        Ok(Box::new(MeanSession {
            exp,
            fallback: self.fallback,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn five_unit_exp(y: Vec<f64>, t: Vec<bool>) -> Experiment {
        Experiment::with_constant_p(y, t, Array2::zeros((5, 0)), 0.5).unwrap()
    }

    #[test]
    fn loo_means_on_the_five_unit_example() {
        let exp = five_unit_exp(
            vec![3.0, 5.0, 1.0, 2.0, 3.0],
            vec![true, true, false, false, false],
        );
        let imputed = MeanImputer::new(ArmFallback::Error).impute(&exp).unwrap();
        // Unit 0 (treated): only other treated is Y=5; controls average to 2.
        assert_relative_eq!(imputed.t_hat[0], 5.0);
        assert_relative_eq!(imputed.c_hat[0], 2.0);
        assert_relative_eq!(imputed.m_hat[0], 3.5);
        // Unit 2 (control): treated mean 4, control mean over {2,3} is 2.5.
        assert_relative_eq!(imputed.t_hat[2], 4.0);
        assert_relative_eq!(imputed.c_hat[2], 2.5);
    }

    #[test]
    fn leave_one_out_contract_under_mutation() {
        let y = vec![3.0, 5.0, 1.0, 2.0, 3.0, 7.0];
        let t = vec![true, true, false, false, false, true];
        let exp =
            Experiment::with_constant_p(y.clone(), t.clone(), Array2::zeros((6, 0)), 0.5).unwrap();
        let imputer = MeanImputer::new(ArmFallback::Error);
        let base = imputer.impute(&exp).unwrap();

        // Replace (Y_0, T_0) with arbitrary values; unit 0's own prediction
        // must not move (it is computed from units 1..6 only). The other
        // units' predictions will change, which is the point of the contract.
        let mut y2 = y;
        let mut t2 = t;
        y2[0] = 99.0;
        t2[0] = false;
        let mutated = Experiment::with_constant_p(y2, t2, Array2::zeros((6, 0)), 0.5).unwrap();
        let mutated_imputed = imputer.impute(&mutated).unwrap();
        assert_eq!(base.t_hat[0], mutated_imputed.t_hat[0]);
        assert_eq!(base.c_hat[0], mutated_imputed.c_hat[0]);
    }

    #[test]
    fn errors_when_exclusion_empties_an_arm() {
        let exp = five_unit_exp(
            vec![3.0, 5.0, 1.0, 2.0, 3.0],
            vec![true, false, false, false, false],
        );
        let err = MeanImputer::new(ArmFallback::Error).impute(&exp).unwrap_err();
        assert!(matches!(err, Error::InsufficientArm { .. }));
    }

    #[test]
    fn constant_fallback_defines_every_assignment() {
        let exp = five_unit_exp(
            vec![3.0, 5.0, 1.0, 2.0, 3.0],
            vec![false, false, false, false, false],
        );
        let imputed = MeanImputer::new(ArmFallback::Constant { value: 0.0 })
            .impute(&exp)
            .unwrap();
        assert!(imputed.t_hat.iter().all(|&v| v == 0.0));
        assert_relative_eq!(imputed.c_hat[0], (5.0 + 1.0 + 2.0 + 3.0) / 4.0);
    }
}

use thiserror::Error;

/// Errors shared by the estimator, imputers, designs, and oracles.
#[derive(Debug, Error)]
pub enum Error {
    /// An arm (or an arm after leave-one-out exclusion) has too few units.
    #[error("insufficient arm: {treated} treated / {control} control, need at least {min} in each")]
    InsufficientArm {
        treated: usize,
        control: usize,
        min: usize,
    },

    /// Variance estimation was requested with heterogeneous treatment probabilities.
    #[error("treatment probabilities are not constant; variance estimation requires a single p")]
    NonConstantP,

    /// A probability lies outside the open interval (0, 1).
    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("stratum {label:?} has {treated} treated / {control} control units, need 2 of each")]
    StratumTooSmall {
        label: String,
        treated: usize,
        control: usize,
    },

    /// A least-squares fit was singular and the minimum-norm fallback is disabled.
    #[error("rank-deficient least squares fit{}", match .unit { Some(u) => format!(" for unit {u}"), None => String::new() })]
    RankDeficient { unit: Option<usize> },

    /// Every bootstrap sample contains the unit, so no out-of-bag prediction exists.
    #[error("no out-of-bag trees for unit {unit}; increase the tree count")]
    NoOobTrees { unit: usize },

    /// The random-drop procedure found no opposite-arm unit to drop.
    #[error("no opposite-arm unit available to drop for unit {unit}{}", match .block { Some(b) => format!(" in block {b:?}"), None => String::new() })]
    EmptyOppositeArm { unit: usize, block: Option<String> },

    #[error("randomization support {support} exceeds the enumeration cap {cap}")]
    SupportTooLarge { support: u128, cap: u128 },

    /// The imputer is undefined on an enumerated assignment and conditioning is disallowed.
    #[error("estimator undefined on assignment {assignment:?}: {reason}")]
    UndefinedOnAssignment { assignment: Vec<u8>, reason: String },

    #[error("imputer {imputer} does not support {operation}")]
    UnsupportedImputer { imputer: String, operation: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

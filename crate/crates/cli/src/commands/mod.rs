pub mod estimate;
pub mod oracle;
pub mod simulate;

use crate::errors::CliError;

/// Maps library errors onto exit codes: problems with the supplied data or
/// configuration are validation failures (exit 2); failures that arise while
/// computing (no out-of-bag trees, singular fits with the fallback disabled,
/// undefined assignments mid-enumeration) are runtime failures (exit 3).
pub(crate) fn core_err(err: loop_core::Error) -> CliError {
    use loop_core::Error::*;
    match &err {
        InsufficientArm { .. }
        | NonConstantP
        | ProbabilityOutOfRange(_)
        | StratumTooSmall { .. }
        | EmptyOppositeArm { .. }
        | SupportTooLarge { .. }
        | UnsupportedImputer { .. }
        | InvalidInput(_) => CliError::Validation(err.to_string()),
        RankDeficient { .. } | NoOobTrees { .. } | UndefinedOnAssignment { .. } => {
            CliError::Runtime(err.to_string())
        }
    }
}

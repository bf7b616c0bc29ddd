//! `estimate`: read a CSV, run the leave-one-out estimator, write a JSON
//! report, and echo a one-line summary.

use std::path::PathBuf;

use serde_json::json;

use loop_core::designs::{loop_with_random_drop, DropMode};
use loop_core::estimator::EstimateOptions;
use loop_core::imputers::{build_imputer, ImputerSpec};
use loop_core::variance::{gamma_bar_hat, MseDenominator};
use loop_core::{Caveat, DesignDescriptor, EstimateReport, Experiment};

use crate::commands::core_err;
use crate::config::EstimateArgs;
use crate::csvio::read_table;
use crate::errors::{validation, CliResult};
use crate::output::{to_json_string, OutputSet};

pub fn run(args: EstimateArgs) -> CliResult<()> {
    let args = args.merged_with_config()?;
    let input = args
        .input
        .clone()
        .ok_or_else(|| validation("--input is required"))?;
    let outcome_col = args
        .outcome_column
        .clone()
        .ok_or_else(|| validation("--outcome-column is required"))?;
    let treatment_col = args
        .treatment_column
        .clone()
        .ok_or_else(|| validation("--treatment-column is required"))?;
    match (&args.probability_column, &args.constant_p) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(validation(
                "exactly one of --probability-column and --constant-p must be given",
            ));
        }
        _ => {}
    }

    let table = read_table(&input)?;
    let y_idx = table.column_index(&outcome_col)?;
    let t_idx = table.column_index(&treatment_col)?;
    let mut used = vec![y_idx, t_idx];

    let p_idx = args
        .probability_column
        .as_ref()
        .map(|c| table.column_index(c))
        .transpose()?;
    if let Some(idx) = p_idx {
        used.push(idx);
    }
    let strata_idx = args
        .strata_column
        .as_ref()
        .map(|c| table.column_index(c))
        .transpose()?;
    let block_idx = args
        .block_column
        .as_ref()
        .map(|c| table.column_index(c))
        .transpose()?;
    let pair_idx = args
        .pair_column
        .as_ref()
        .map(|c| table.column_index(c))
        .transpose()?;
    for idx in [strata_idx, block_idx, pair_idx].into_iter().flatten() {
        used.push(idx);
    }

    let covariate_idx: Vec<usize> = match &args.covariate_columns {
        Some(names) => names
            .iter()
            .map(|name| table.column_index(name))
            .collect::<CliResult<_>>()?,
        None => table.numeric_columns_except(&used),
    };
    let covariate_names: Vec<String> = covariate_idx
        .iter()
        .map(|&c| table.headers[c].clone())
        .collect();

    let mut check_cols = used.clone();
    check_cols.extend_from_slice(&covariate_idx);
    table.check_missing(&check_cols)?;

    let y = table.numeric_column(y_idx)?;
    let t = table.treatment_column(t_idx)?;
    let n = y.len();
    let p = match p_idx {
        Some(idx) => table.probability_column(idx)?,
        None => {
            let p = args.constant_p.expect("checked above");
            if !(p > 0.0 && p < 1.0) {
                return Err(validation(format!(
                    "constant-p {p} outside the open interval (0, 1)"
                )));
            }
            vec![p; n]
        }
    };
    let mut z = loop_core::ndarray::Array2::zeros((n, covariate_idx.len()));
    for (j, &c) in covariate_idx.iter().enumerate() {
        for (i, v) in table.numeric_column(c)?.into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }

    let design = match args.design.as_deref().unwrap_or("bernoulli") {
        "bernoulli" => DesignDescriptor::Bernoulli,
        "complete" => DesignDescriptor::CompleteRandomization {
            n_fixed: t.iter().filter(|&&x| x).count(),
        },
        "blocked" => DesignDescriptor::Blocked {
            labels: table.string_column(
                block_idx.ok_or_else(|| validation("blocked design needs --block-column"))?,
            ),
        },
        "paired" => DesignDescriptor::Paired {
            labels: table.string_column(
                pair_idx.ok_or_else(|| validation("paired design needs --pair-column"))?,
            ),
        },
        other => return Err(validation(format!("unknown design {other:?}"))),
    };

    let exp = Experiment::new(y, t, z, p, design.clone()).map_err(core_err)?;

    let seed = args.seed.unwrap_or(0);
    let strata_labels = strata_idx.map(|idx| table.string_column(idx));
    let spec = args.imputer_spec(strata_labels, seed)?;
    let opts = EstimateOptions {
        ci_level: args.ci_level.unwrap_or(0.95),
        mse_denominator: match args.mse_denominator.as_deref().unwrap_or("arm-counts") {
            "arm-counts" => MseDenominator::ArmCounts,
            "expected" => MseDenominator::Expected,
            other => return Err(validation(format!("unknown mse denominator {other:?}"))),
        },
    };

    let (report, drop_info): (EstimateReport, Option<(String, usize, Option<f64>)>) =
        if matches!(design, DesignDescriptor::Bernoulli) {
            let imputed = build_imputer(&spec).impute(&exp).map_err(core_err)?;
            let report = loop_core::loop_estimate(&exp, &imputed, &opts).map_err(core_err)?;
            (report, None)
        } else {
            let mode = match args.drop_mode.as_deref().unwrap_or("auto") {
                "expectation" => DropMode::Expectation,
                "sampled" => DropMode::Sampled {
                    reps: args.drop_reps.unwrap_or(200),
                    seed,
                },
                "auto" => match &spec {
                    ImputerSpec::Mean { .. } | ImputerSpec::Strata { .. } => DropMode::Expectation,
                    _ => DropMode::Sampled {
                        reps: args.drop_reps.unwrap_or(200),
                        seed,
                    },
                },
                other => return Err(validation(format!("unknown drop mode {other:?}"))),
            };
            let est = loop_with_random_drop(&exp, &spec, mode, &opts).map_err(core_err)?;
            let mode_name = match mode {
                DropMode::Expectation => "expectation".to_string(),
                DropMode::Sampled { .. } => "sampled".to_string(),
            };
            (est.report, Some((mode_name, est.reps, est.drop_mc_se)))
        };

    let gamma = if args.gamma_diagnostic {
        let imputer = build_imputer(&spec);
        let diag = gamma_bar_hat(&exp, imputer.as_ref(), args.pair_budget, seed)
            .map_err(core_err)?;
        Some(json!({
            "gamma-bar-hat": diag.gamma_bar_hat,
            "pairs-evaluated": diag.pairs.len(),
            "refits": diag.refits,
        }))
    } else {
        None
    };

    let mut doc = json!({
        "schema-version": 1,
        "command": "estimate",
        "input": input.display().to_string(),
        "seed": seed,
        "imputer": report.imputer_id,
        "design": design_name(&design),
        "covariates": covariate_names,
        "n": exp.n(),
        "n-treated": report.n_treated,
        "n-control": report.n_control,
        "tau-hat": report.tau_hat,
        "var-hat": report.var_hat,
        "se": report.se,
        "ci-level": report.ci_level,
        "ci": [report.ci.0, report.ci.1],
        "m-t-hat": report.m_t_hat,
        "m-c-hat": report.m_c_hat,
        "caveats": report.caveats.iter().map(caveat_name).collect::<Vec<_>>(),
    });
    if args.emit_tau_units {
        doc["tau-units"] = json!(report.tau_units);
    }
    if let Some((mode, reps, mc_se)) = drop_info {
        doc["random-drop"] = json!({
            "mode": mode,
            "reps": reps,
            "drop-mc-se": mc_se,
        });
    }
    if let Some(g) = gamma {
        doc["gamma-diagnostic"] = g;
    }

    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    let mut outputs = OutputSet::new();
    outputs.stage(&out_path, &to_json_string(&doc)?)?;
    outputs.commit()?;

    println!(
        "tau_hat {:.6} se {:.6} ci{:.0} [{:.6}, {:.6}] imputer {} n {} ({} treated / {} control) -> {}",
        report.tau_hat,
        report.se,
        report.ci_level * 100.0,
        report.ci.0,
        report.ci.1,
        report.imputer_id,
        exp.n(),
        report.n_treated,
        report.n_control,
        out_path.display()
    );
    Ok(())
}

fn design_name(design: &DesignDescriptor) -> &'static str {
    match design {
        DesignDescriptor::Bernoulli => "bernoulli",
        DesignDescriptor::CompleteRandomization { .. } => "complete",
        DesignDescriptor::Blocked { .. } => "blocked",
        DesignDescriptor::Paired { .. } => "paired",
    }
}

fn caveat_name(caveat: &Caveat) -> String {
    match caveat {
        Caveat::NormalApproxCi => "normal-approximation-ci".to_string(),
        Caveat::RandomDropVariance => "random-drop-variance".to_string(),
        Caveat::RankFallback { units } => format!("rank-fallback:{units:?}"),
        Caveat::ResampledAssignments { count } => format!("resampled-assignments:{count}"),
    }
}

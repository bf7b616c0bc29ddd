//! `oracle`: exact randomization-distribution moments for a small table of
//! potential outcomes, written as a per-unit comparison table plus a summary.

use std::path::PathBuf;

use serde_json::json;

use loop_core::imputers::{build_imputer, ArmFallback, ImputerSpec, RankPolicy};
use loop_core::oracle::{enumerate_oracle, OracleOptions, PotentialOutcomesTable, UndefinedPolicy};
use loop_core::DesignDescriptor;

use crate::commands::core_err;
use crate::config::OracleArgs;
use crate::csvio::read_table;
use crate::errors::{validation, CliResult};
use crate::output::{to_json_string, OutputSet};

pub fn run(args: OracleArgs) -> CliResult<()> {
    let args = args.merged_with_config()?;
    let input = args
        .input
        .clone()
        .ok_or_else(|| validation("--input is required"))?;
    let t_col = args
        .t_column
        .clone()
        .ok_or_else(|| validation("--t-column is required"))?;
    let c_col = args
        .c_column
        .clone()
        .ok_or_else(|| validation("--c-column is required"))?;

    let table = read_table(&input)?;
    let t_idx = table.column_index(&t_col)?;
    let c_idx = table.column_index(&c_col)?;
    let mut used = vec![t_idx, c_idx];

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
    if let Some(idx) = strata_idx {
        used.push(idx);
    }
    let covariate_idx: Vec<usize> = match &args.covariate_columns {
        Some(names) => names
            .iter()
            .map(|name| table.column_index(name))
            .collect::<CliResult<_>>()?,
        None => table.numeric_columns_except(&used),
    };
    let mut check_cols = used.clone();
    check_cols.extend_from_slice(&covariate_idx);
    table.check_missing(&check_cols)?;

    let t_po = table.numeric_column(t_idx)?;
    let c_po = table.numeric_column(c_idx)?;
    let n = t_po.len();
    let p = match (p_idx, args.constant_p) {
        (Some(_), Some(_)) => {
            return Err(validation(
                "give either --probability-column or --constant-p, not both",
            ))
        }
        (Some(idx), None) => table.probability_column(idx)?,
        (None, Some(cp)) => {
            if !(cp > 0.0 && cp < 1.0) {
                return Err(validation(format!(
                    "constant-p {cp} outside the open interval (0, 1)"
                )));
            }
            vec![cp; n]
        }
        (None, None) => vec![0.5; n],
    };
    let mut z = loop_core::ndarray::Array2::zeros((n, covariate_idx.len()));
    for (j, &cidx) in covariate_idx.iter().enumerate() {
        for (i, v) in table.numeric_column(cidx)?.into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }

    let design = match args.design.as_deref().unwrap_or("bernoulli") {
        "bernoulli" => DesignDescriptor::Bernoulli,
        "complete" => {
            let n_fixed = args
                .n_fixed
                .ok_or_else(|| validation("complete design needs --n-fixed"))?;
            DesignDescriptor::CompleteRandomization { n_fixed }
        }
        other => return Err(validation(format!("oracle supports bernoulli and complete, not {other:?}"))),
    };
    // Under complete randomization the marginal probability is pinned by the
    // design; fill it in when the caller did not.
    let p = match (&design, p_idx.is_none() && args.constant_p.is_none()) {
        (DesignDescriptor::CompleteRandomization { n_fixed }, true) => {
            vec![*n_fixed as f64 / n as f64; n]
        }
        _ => p,
    };

    let fallback = match args.fallback.as_deref().unwrap_or("error") {
        "error" => ArmFallback::Error,
        "global-mean" => ArmFallback::GlobalMean,
        "zero" => ArmFallback::Constant { value: 0.0 },
        other => return Err(validation(format!("unknown fallback {other:?}"))),
    };
    let spec = match args.imputer.as_deref().unwrap_or("mean") {
        "mean" => ImputerSpec::Mean { fallback },
        "strata" => {
            let idx =
                strata_idx.ok_or_else(|| validation("strata imputer needs --strata-column"))?;
            ImputerSpec::Strata {
                labels: table.string_column(idx),
                fallback,
            }
        }
        "ols" => ImputerSpec::Ols {
            on_rank_deficient: RankPolicy::MinNorm,
        },
        other => return Err(validation(format!("unknown imputer {other:?}"))),
    };

    let po = PotentialOutcomesTable {
        t: t_po,
        c: c_po,
        z,
        p,
        design,
    };
    let opts = OracleOptions {
        support_cap: args.support_cap.unwrap_or(1 << 20),
        on_undefined: match args.on_undefined.as_deref().unwrap_or("error") {
            "error" => UndefinedPolicy::Error,
            "condition" => UndefinedPolicy::Condition,
            other => return Err(validation(format!("unknown undefined policy {other:?}"))),
        },
    };

    let imputer = build_imputer(&spec);
    let summary = enumerate_oracle(&po, imputer.as_ref(), &opts).map_err(core_err)?;

    let tau = po.tau_units();
    let m = po.m_values();
    let mut table = csv::Writer::from_writer(Vec::new());
    table
        .write_record([
            "unit",
            "t",
            "c",
            "tau",
            "m",
            "e_tau_hat",
            "var_tau_hat",
            "mse_m_hat",
            "mse_t_hat",
            "mse_c_hat",
        ])
        .expect("csv header");
    for i in 0..po.n() {
        let u = &summary.per_unit[i];
        table
            .write_record([
                i.to_string(),
                po.t[i].to_string(),
                po.c[i].to_string(),
                tau[i].to_string(),
                m[i].to_string(),
                u.e_tau_hat.to_string(),
                u.var_tau_hat.to_string(),
                u.mse_m_hat.to_string(),
                u.mse_t_hat.to_string(),
                u.mse_c_hat.to_string(),
            ])
            .expect("csv row");
    }
    let csv_text = String::from_utf8(table.into_inner().expect("csv flush")).expect("utf8");

    let doc = json!({
        "schema-version": 1,
        "command": "oracle",
        "input": input.display().to_string(),
        "imputer": imputer.id(),
        "support-size": summary.support_size,
        "kept-probability": summary.kept_probability,
        "skipped-assignments": summary.skipped_assignments,
        "tau-bar": po.tau_bar(),
        "mean-tau-hat": summary.mean_tau_hat,
        "var-tau-hat": summary.var_tau_hat,
    });

    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut outputs = OutputSet::new();
    outputs.stage(&out_dir.join("oracle_units.csv"), &csv_text)?;
    outputs.stage(&out_dir.join("oracle_summary.json"), &to_json_string(&doc)?)?;
    let written = outputs.commit()?;
    println!(
        "oracle: {} assignments, E[tau_hat] {:.12} vs tau_bar {:.12}, wrote {}",
        summary.support_size,
        summary.mean_tau_hat,
        po.tau_bar(),
        written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

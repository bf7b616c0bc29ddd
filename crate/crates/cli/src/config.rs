//! Run configuration. Every subcommand's flags mirror the config-file field
//! names in kebab-case: a single JSON document passed with --config supplies
//! the same fields, and explicitly passed flags override it.

use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use crate::errors::{validation, CliResult};
use loop_core::forest::ForestParams;
use loop_core::imputers::{ArmFallback, ForestMode, ImputerSpec, RankPolicy};

fn merge<T>(cli: Option<T>, file: Option<T>) -> Option<T> {
    cli.or(file)
}

#[derive(Args, Debug, Default, Deserialize, Clone)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct EstimateArgs {
    /// JSON config file supplying any of the other options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Input CSV with a header row.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Outcome column name.
    #[arg(long)]
    pub outcome_column: Option<String>,

    /// Treatment column name (values 0/1).
    #[arg(long)]
    pub treatment_column: Option<String>,

    /// Per-unit treatment probability column. Exactly one of this and
    /// --constant-p must be given.
    #[arg(long)]
    pub probability_column: Option<String>,

    /// Constant treatment probability in (0, 1).
    #[arg(long)]
    pub constant_p: Option<f64>,

    /// Covariate column names, comma separated. Defaults to every remaining
    /// numeric column.
    #[arg(long, value_delimiter = ',')]
    pub covariate_columns: Option<Vec<String>>,

    /// Imputer: mean, strata, ols, or forest.
    #[arg(long)]
    pub imputer: Option<String>,

    /// Stratum label column (strata imputer).
    #[arg(long)]
    pub strata_column: Option<String>,

    /// Design: bernoulli, complete, blocked, or paired.
    #[arg(long)]
    pub design: Option<String>,

    /// Block label column (blocked design).
    #[arg(long)]
    pub block_column: Option<String>,

    /// Pair label column (paired design).
    #[arg(long)]
    pub pair_column: Option<String>,

    /// Random-drop averaging under dependent designs: auto, sampled, or
    /// expectation.
    #[arg(long)]
    pub drop_mode: Option<String>,

    /// Drop draws per unit in sampled mode.
    #[arg(long)]
    pub drop_reps: Option<usize>,

    /// MSE denominators: arm-counts (default) or expected.
    #[arg(long)]
    pub mse_denominator: Option<String>,

    /// Also estimate the pairwise covariance diagnostic (costly refits).
    #[arg(long)]
    #[serde(default)]
    pub gamma_diagnostic: bool,

    /// Cap on evaluated pairs for the diagnostic; all pairs if omitted.
    #[arg(long)]
    pub pair_budget: Option<usize>,

    /// Trees for the forest imputer.
    #[arg(long)]
    pub trees: Option<usize>,

    /// Minimum node size for the forest imputer.
    #[arg(long)]
    pub min_node_size: Option<usize>,

    /// Candidate features per split; defaults to max(1, q/3).
    #[arg(long)]
    pub mtry: Option<usize>,

    /// Depth cap for forest trees; unlimited if omitted.
    #[arg(long)]
    pub max_depth: Option<usize>,

    /// Forest mode: oob or exact-loo.
    #[arg(long)]
    pub forest_mode: Option<String>,

    /// Seed for all randomized components; recorded in the report.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Confidence level for the normal-approximation interval.
    #[arg(long)]
    pub ci_level: Option<f64>,

    /// Include per-unit effect estimates in the report.
    #[arg(long)]
    #[serde(default)]
    pub emit_tau_units: bool,

    /// Output report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl EstimateArgs {
    pub fn merged_with_config(self) -> CliResult<Self> {
        let Some(config_path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&config_path)
            .map_err(|e| validation(format!("cannot read {}: {e}", config_path.display())))?;
        let file: EstimateArgs = serde_json::from_str(&text)
            .map_err(|e| validation(format!("bad config {}: {e}", config_path.display())))?;
        Ok(Self {
            config: None,
            input: merge(self.input, file.input),
            outcome_column: merge(self.outcome_column, file.outcome_column),
            treatment_column: merge(self.treatment_column, file.treatment_column),
            probability_column: merge(self.probability_column, file.probability_column),
            constant_p: merge(self.constant_p, file.constant_p),
            covariate_columns: merge(self.covariate_columns, file.covariate_columns),
            imputer: merge(self.imputer, file.imputer),
            strata_column: merge(self.strata_column, file.strata_column),
            design: merge(self.design, file.design),
            block_column: merge(self.block_column, file.block_column),
            pair_column: merge(self.pair_column, file.pair_column),
            drop_mode: merge(self.drop_mode, file.drop_mode),
            drop_reps: merge(self.drop_reps, file.drop_reps),
            mse_denominator: merge(self.mse_denominator, file.mse_denominator),
            gamma_diagnostic: self.gamma_diagnostic || file.gamma_diagnostic,
            pair_budget: merge(self.pair_budget, file.pair_budget),
            trees: merge(self.trees, file.trees),
            min_node_size: merge(self.min_node_size, file.min_node_size),
            mtry: merge(self.mtry, file.mtry),
            max_depth: merge(self.max_depth, file.max_depth),
            forest_mode: merge(self.forest_mode, file.forest_mode),
            seed: merge(self.seed, file.seed),
            ci_level: merge(self.ci_level, file.ci_level),
            emit_tau_units: self.emit_tau_units || file.emit_tau_units,
            out: merge(self.out, file.out),
        })
    }

    pub fn forest_params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.trees.unwrap_or(500),
            min_node_size: self.min_node_size.unwrap_or(5),
            mtry: self.mtry,
            max_depth: self.max_depth,
            seed,
        }
    }

    pub fn imputer_spec(&self, strata_labels: Option<Vec<String>>, seed: u64) -> CliResult<ImputerSpec> {
        match self.imputer.as_deref().unwrap_or("mean") {
            "mean" => Ok(ImputerSpec::Mean {
                fallback: ArmFallback::Error,
            }),
            "strata" => {
                let labels = strata_labels
                    .ok_or_else(|| validation("strata imputer needs --strata-column"))?;
                Ok(ImputerSpec::Strata {
                    labels,
                    fallback: ArmFallback::Error,
                })
            }
            "ols" => Ok(ImputerSpec::Ols {
                on_rank_deficient: RankPolicy::MinNorm,
            }),
            "forest" => {
                let mode = match self.forest_mode.as_deref().unwrap_or("oob") {
                    "oob" => ForestMode::Oob,
                    "exact-loo" => ForestMode::ExactLoo,
                    other => return Err(validation(format!("unknown forest mode {other:?}"))),
                };
                Ok(ImputerSpec::Forest {
                    params: self.forest_params(seed),
                    mode,
                })
            }
            other => Err(validation(format!("unknown imputer {other:?}"))),
        }
    }
}

#[derive(Args, Debug, Default, Deserialize, Clone)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct SimulateArgs {
    /// JSON config file supplying any of the other options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Which simulation study: 1 (30-unit bias comparison) or 2
    /// (binary-response sweeps).
    #[arg(long)]
    pub sim: Option<u8>,

    /// Assignment replications for simulation 1.
    #[arg(long)]
    pub reps: Option<usize>,

    /// Trials per grid point for simulation 2.
    #[arg(long)]
    pub trials: Option<usize>,

    /// Sweep axis for simulation 2: noise-covariates, sample-size, or
    /// signal-strength.
    #[arg(long)]
    pub sweep: Option<String>,

    /// Grid values, comma separated; defaults per axis.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,

    /// Base number of units for simulation 2.
    #[arg(long)]
    pub n_units: Option<usize>,

    /// Base noise-covariate count for simulation 2.
    #[arg(long)]
    pub k: Option<usize>,

    /// Base signal strength for simulation 2.
    #[arg(long)]
    pub c: Option<f64>,

    /// Trees for the forest imputer.
    #[arg(long)]
    pub trees: Option<usize>,

    /// Seed; recorded in every output.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Also write an SVG line chart of relative true SEs per sweep.
    #[arg(long)]
    #[serde(default)]
    pub svg: bool,

    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn merged_with_config(self) -> CliResult<Self> {
        let Some(config_path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&config_path)
            .map_err(|e| validation(format!("cannot read {}: {e}", config_path.display())))?;
        let file: SimulateArgs = serde_json::from_str(&text)
            .map_err(|e| validation(format!("bad config {}: {e}", config_path.display())))?;
        Ok(Self {
            config: None,
            sim: merge(self.sim, file.sim),
            reps: merge(self.reps, file.reps),
            trials: merge(self.trials, file.trials),
            sweep: merge(self.sweep, file.sweep),
            grid: merge(self.grid, file.grid),
            n_units: merge(self.n_units, file.n_units),
            k: merge(self.k, file.k),
            c: merge(self.c, file.c),
            trees: merge(self.trees, file.trees),
            seed: merge(self.seed, file.seed),
            svg: self.svg || file.svg,
            out_dir: merge(self.out_dir, file.out_dir),
        })
    }
}

#[derive(Args, Debug, Default, Deserialize, Clone)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct OracleArgs {
    /// JSON config file supplying any of the other options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// CSV with both potential outcomes per unit.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Treated potential outcome column.
    #[arg(long)]
    pub t_column: Option<String>,

    /// Control potential outcome column.
    #[arg(long)]
    pub c_column: Option<String>,

    /// Per-unit probability column; or use --constant-p.
    #[arg(long)]
    pub probability_column: Option<String>,

    #[arg(long)]
    pub constant_p: Option<f64>,

    /// Covariate columns (needed only by covariate-using imputers).
    #[arg(long, value_delimiter = ',')]
    pub covariate_columns: Option<Vec<String>>,

    /// Imputer: mean, strata, or ols.
    #[arg(long)]
    pub imputer: Option<String>,

    #[arg(long)]
    pub strata_column: Option<String>,

    /// Arm fallback keeping the imputer defined on every assignment:
    /// error, global-mean, or zero.
    #[arg(long)]
    pub fallback: Option<String>,

    /// Design: bernoulli or complete.
    #[arg(long)]
    pub design: Option<String>,

    /// Treated count for the complete design.
    #[arg(long)]
    pub n_fixed: Option<usize>,

    /// Assignment enumeration cap.
    #[arg(long)]
    pub support_cap: Option<u128>,

    /// On assignments where the imputer is undefined: error or condition.
    #[arg(long)]
    pub on_undefined: Option<String>,

    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl OracleArgs {
    pub fn merged_with_config(self) -> CliResult<Self> {
        let Some(config_path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&config_path)
            .map_err(|e| validation(format!("cannot read {}: {e}", config_path.display())))?;
        let file: OracleArgs = serde_json::from_str(&text)
            .map_err(|e| validation(format!("bad config {}: {e}", config_path.display())))?;
        Ok(Self {
            config: None,
            input: merge(self.input, file.input),
            t_column: merge(self.t_column, file.t_column),
            c_column: merge(self.c_column, file.c_column),
            probability_column: merge(self.probability_column, file.probability_column),
            constant_p: merge(self.constant_p, file.constant_p),
            covariate_columns: merge(self.covariate_columns, file.covariate_columns),
            imputer: merge(self.imputer, file.imputer),
            strata_column: merge(self.strata_column, file.strata_column),
            fallback: merge(self.fallback, file.fallback),
            design: merge(self.design, file.design),
            n_fixed: merge(self.n_fixed, file.n_fixed),
            support_cap: merge(self.support_cap, file.support_cap),
            on_undefined: merge(self.on_undefined, file.on_undefined),
            out_dir: merge(self.out_dir, file.out_dir),
        })
    }
}

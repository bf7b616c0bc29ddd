//! `simulate`: the two study designs at desk scale. Simulation 1 compares
//! bias and standard errors of the forest-imputed estimator, OLS, and the
//! simple difference on one fixed 30-unit table. Simulation 2 sweeps a
//! generator knob and reports true SEs relative to the simple difference.

use std::path::PathBuf;

use serde_json::json;

use loop_core::forest::ForestParams;
use loop_core::imputers::{ForestMode, ImputerSpec};
use loop_core::sim::{
    gen_sim1, monte_carlo, sweep_sim2, EstimatorSpec, Sim2Base, SweepAxis, SweepPoint,
};

use crate::commands::core_err;
use crate::config::SimulateArgs;
use crate::errors::{validation, CliResult};
use crate::output::{to_json_string, OutputSet};
use crate::svg::{line_chart, Series};

pub fn run(args: SimulateArgs) -> CliResult<()> {
    let args = args.merged_with_config()?;
    match args.sim.unwrap_or(1) {
        1 => sim1(args),
        2 => sim2(args),
        other => Err(validation(format!("unknown simulation {other}"))),
    }
}

fn forest_estimator(trees: usize) -> EstimatorSpec {
    EstimatorSpec::Loop {
        imputer: ImputerSpec::Forest {
            params: ForestParams {
                n_trees: trees,
                ..ForestParams::default()
            },
            mode: ForestMode::Oob,
        },
    }
}

fn sim1(args: SimulateArgs) -> CliResult<()> {
    let seed = args.seed.unwrap_or(0);
    let reps = args.reps.unwrap_or(1000);
    let trees = args.trees.unwrap_or(500);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));

    let table = gen_sim1(seed);
    let estimators = [
        forest_estimator(trees),
        EstimatorSpec::OlsAdjusted,
        EstimatorSpec::SimpleDifference,
    ];
    let mc = monte_carlo(&table, &estimators, reps, seed).map_err(core_err)?;

    let mut table = csv::Writer::from_writer(Vec::new());
    table
        .write_record(["estimator", "bias", "mean_nominal_se", "true_se", "mc_se"])
        .expect("csv header");
    for s in &mc.estimators {
        table
            .write_record([
                s.estimator.clone(),
                s.bias.to_string(),
                s.mean_nominal_se.to_string(),
                s.true_se.to_string(),
                s.mc_se.to_string(),
            ])
            .expect("csv row");
    }
    let csv_text = String::from_utf8(table.into_inner().expect("csv flush")).expect("utf8");

    let doc = json!({
        "schema-version": 1,
        "command": "simulate",
        "sim": 1,
        "seed": seed,
        "reps": reps,
        "trees": trees,
        "tau-bar": mc.tau_bar,
        "resamples": mc.resamples,
        "estimators": mc.estimators.iter().map(|s| json!({
            "estimator": s.estimator,
            "bias": s.bias,
            "mean-nominal-se": s.mean_nominal_se,
            "true-se": s.true_se,
            "mc-se": s.mc_se,
        })).collect::<Vec<_>>(),
    });

    let mut outputs = OutputSet::new();
    outputs.stage(&out_dir.join("sim1_summary.csv"), &csv_text)?;
    outputs.stage(&out_dir.join("sim1_summary.json"), &to_json_string(&doc)?)?;
    let written = outputs.commit()?;
    println!(
        "simulation 1: {reps} reps, tau_bar {:.4}, wrote {}",
        mc.tau_bar,
        written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn sim2(args: SimulateArgs) -> CliResult<()> {
    let seed = args.seed.unwrap_or(0);
    let trials = args.trials.unwrap_or(200);
    let trees = args.trees.unwrap_or(500);
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));

    let axis = match args.sweep.as_deref().unwrap_or("noise-covariates") {
        "noise-covariates" => SweepAxis::NoiseCovariates,
        "sample-size" => SweepAxis::SampleSize,
        "signal-strength" => SweepAxis::SignalStrength,
        other => return Err(validation(format!("unknown sweep axis {other:?}"))),
    };
    // Desk-scale defaults for the three sweep axes.
    let grid: Vec<f64> = args.grid.clone().unwrap_or_else(|| match axis {
        SweepAxis::NoiseCovariates => vec![5.0, 25.0, 50.0, 100.0],
        SweepAxis::SampleSize => vec![100.0, 300.0, 600.0, 1000.0],
        SweepAxis::SignalStrength => vec![1.0, 2.0, 3.0, 4.5],
    });
    let base = Sim2Base {
        n_units: args.n_units.unwrap_or(200),
        k: args.k.unwrap_or(50),
        c: args.c.unwrap_or(3.0),
    };
    let estimators = [forest_estimator(trees), EstimatorSpec::OlsAdjusted];

    let points = sweep_sim2(axis, &grid, base, &estimators, trials, seed).map_err(core_err)?;

    let axis_name = match axis {
        SweepAxis::NoiseCovariates => "noise-covariates",
        SweepAxis::SampleSize => "sample-size",
        SweepAxis::SignalStrength => "signal-strength",
    };
    let mut table = csv::Writer::from_writer(Vec::new());
    table
        .write_record([
            "axis",
            "value",
            "estimator",
            "bias",
            "mean_nominal_se",
            "true_se",
            "rel_true_se",
        ])
        .expect("csv header");
    for point in &points {
        for cell in &point.cells {
            table
                .write_record([
                    axis_name.to_string(),
                    point.value.to_string(),
                    cell.estimator.clone(),
                    cell.bias.to_string(),
                    cell.mean_nominal_se.to_string(),
                    cell.true_se.to_string(),
                    cell.rel_true_se.to_string(),
                ])
                .expect("csv row");
        }
    }
    let csv_text = String::from_utf8(table.into_inner().expect("csv flush")).expect("utf8");

    let doc = json!({
        "schema-version": 1,
        "command": "simulate",
        "sim": 2,
        "seed": seed,
        "trials": trials,
        "trees": trees,
        "axis": axis_name,
        "grid": grid,
        "base": { "n-units": base.n_units, "k": base.k, "c": base.c },
        "points": points.iter().map(|p| json!({
            "value": p.value,
            "tau-bar": p.tau_bar,
            "cells": p.cells.iter().map(|c| json!({
                "estimator": c.estimator,
                "bias": c.bias,
                "mean-nominal-se": c.mean_nominal_se,
                "true-se": c.true_se,
                "rel-true-se": c.rel_true_se,
            })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });

    let mut outputs = OutputSet::new();
    outputs.stage(&out_dir.join(format!("sweep_{axis_name}.csv")), &csv_text)?;
    outputs.stage(
        &out_dir.join(format!("sweep_{axis_name}.json")),
        &to_json_string(&doc)?,
    )?;
    if args.svg {
        outputs.stage(
            &out_dir.join(format!("sweep_{axis_name}.svg")),
            &sweep_chart(axis_name, &points),
        )?;
    }
    let written = outputs.commit()?;
    println!(
        "simulation 2: {} grid points x {trials} trials, wrote {}",
        points.len(),
        written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn sweep_chart(axis_name: &str, points: &[SweepPoint]) -> String {
    let mut names: Vec<String> = Vec::new();
    for point in points {
        for cell in &point.cells {
            if !names.contains(&cell.estimator) {
                names.push(cell.estimator.clone());
            }
        }
    }
    let series: Vec<Series> = names
        .iter()
        .map(|name| Series {
            name: name.clone(),
            points: points
                .iter()
                .filter_map(|p| {
                    p.cells
                        .iter()
                        .find(|c| &c.estimator == name)
                        .map(|c| (p.value, c.rel_true_se))
                })
                .collect(),
        })
        .collect();
    line_chart(
        "true SE relative to the simple difference",
        axis_name,
        "relative true SE",
        &series,
    )
}

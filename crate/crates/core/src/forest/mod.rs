//! Regression random forest with in-bag bookkeeping, so out-of-bag
//! predictions can be answered exactly: for a training unit, only trees
//! whose bootstrap sample excluded it contribute.
//!
//! Each tree draws a bootstrap of size n-1 (one less than the sample); the
//! smaller bag narrows the gap between out-of-bag and true leave-one-out
//! prediction. Per-tree RNG streams derive from (seed, tree index), so the
//! fitted forest is bit-identical for any thread count.

mod tree;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use tree::Tree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_node_size: usize,
    /// Candidate split features per node; defaults to max(1, q/3).
    pub mtry: Option<usize>,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            min_node_size: 5,
            mtry: None,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn resolved_mtry(&self, q: usize) -> Result<usize> {
        let mtry = self.mtry.unwrap_or_else(|| (q / 3).max(1));
        if mtry == 0 || mtry > q {
            return Err(Error::InvalidInput(format!(
                "mtry must lie in 1..=q, got {mtry} with q = {q}"
            )));
        }
        Ok(mtry)
    }

    fn validate(&self, n: usize, q: usize) -> Result<usize> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be at least 1".into()));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidInput("min_node_size must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "forest fitting needs at least 2 samples, got {n}"
            )));
        }
        if q == 0 {
            return Err(Error::InvalidInput(
                "forest fitting needs at least one covariate; impute means instead".into(),
            ));
        }
        self.resolved_mtry(q)
    }
}

/// A fitted forest plus the in-bag multiset of every tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    inbag: Vec<Vec<u16>>,
    x_train: Array2<f64>,
    params: ForestParams,
}

pub fn fit_forest(x: ArrayView2<'_, f64>, y: &[f64], params: &ForestParams) -> Result<Forest> {
    let n = x.nrows();
    let q = x.ncols();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "x has {n} rows but y has {} entries",
            y.len()
        )));
    }
    let mtry = params.validate(n, q)?;
    let grow = tree::GrowParams {
        min_node_size: params.min_node_size,
        mtry,
        max_depth: params.max_depth,
    };

    let fitted: Vec<(Tree, Vec<u16>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let mut stream = rng::stream(params.seed, &[tree_idx as u64]);
            let mut counts = vec![0u16; n];
            let mut bag: Vec<u32> = Vec::with_capacity(n - 1);
            for _ in 0..n - 1 {
                let draw = stream.random_range(0..n);
                counts[draw] = counts[draw].saturating_add(1);
                bag.push(draw as u32);
            }
            let tree = Tree::grow(x, y, &mut bag, &grow, &mut stream);
            (tree, counts)
        })
        .collect();

    let (trees, inbag) = fitted.into_iter().unzip();
    Ok(Forest {
        trees,
        inbag,
        x_train: x.to_owned(),
        params: params.clone(),
    })
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn training_n(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// In-bag multiplicity of each training index in one tree's bootstrap.
    pub fn inbag_counts(&self, tree: usize) -> &[u16] {
        &self.inbag[tree]
    }

    /// Mean prediction over all trees.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict(|j| row[j])).sum();
        total / self.trees.len() as f64
    }

    pub fn tree_predict(&self, tree: usize, row: &[f64]) -> f64 {
        self.trees[tree].predict(|j| row[j])
    }

    /// Trees whose bootstrap contains none of the given training indices.
    pub fn trees_excluding(&self, excluded: &[usize]) -> Vec<usize> {
        (0..self.trees.len())
            .filter(|&t| excluded.iter().all(|&i| self.inbag[t][i] == 0))
            .collect()
    }

    /// Mean prediction over trees whose bag excludes every listed index.
    pub fn predict_excluding(&self, row: &[f64], excluded: &[usize]) -> Result<f64> {
        let trees = self.trees_excluding(excluded);
        if trees.is_empty() {
            return Err(Error::NoOobTrees {
                unit: excluded.first().copied().unwrap_or(0),
            });
        }
        let total: f64 = trees
            .iter()
            .map(|&t| self.trees[t].predict(|j| row[j]))
            .sum();
        Ok(total / trees.len() as f64)
    }

    /// Out-of-bag prediction for training unit `i`.
    pub fn predict_oob(&self, i: usize) -> Result<f64> {
        let row: Vec<f64> = self.x_train.row(i).iter().copied().collect();
        self.predict_excluding(&row, &[i])
            .map_err(|_| Error::NoOobTrees { unit: i })
    }

    /// Plain-text structure dump for inspection; not a stable format.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "forest: {} trees, {} training rows, seed {}",
            self.trees.len(),
            self.training_n(),
            self.params.seed
        );
        for (idx, tree) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {idx}: {} nodes", tree.node_count());
        }
        out
    }
}

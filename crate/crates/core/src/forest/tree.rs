//! Regression tree grown on a bootstrap multiset. Splits maximize variance
//! reduction among a per-node random subset of features; thresholds sit at
//! midpoints of adjacent distinct sorted values. Ties go to the lowest
//! feature index, then the smallest threshold, so trees are identical across
//! platforms and thread counts.

use ndarray::ArrayView2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

pub(crate) struct GrowParams {
    pub min_node_size: usize,
    pub mtry: usize,
    pub max_depth: Option<usize>,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    params: &'a GrowParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
    feature_pool: Vec<u32>,
    scratch: Vec<(f64, f64)>,
}

impl Tree {
    pub(crate) fn grow(
        x: ArrayView2<'_, f64>,
        y: &[f64],
        samples: &mut [u32],
        params: &GrowParams,
        rng: &mut ChaCha8Rng,
    ) -> Tree {
        let q = x.ncols();
        let mut grower = Grower {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
            feature_pool: (0..q as u32).collect(),
            scratch: Vec::with_capacity(samples.len()),
        };
        grower.build(samples, 0);
        Tree {
            nodes: grower.nodes,
        }
    }

    pub fn predict(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub(crate) fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// (feature, threshold, left, right) for an internal node, None for a leaf.
    #[cfg(test)]
    pub(crate) fn split_info(&self, node: usize) -> Option<(usize, f64, usize, usize)> {
        match &self.nodes[node] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => Some((*feature as usize, *threshold, *left as usize, *right as usize)),
            Node::Leaf { .. } => None,
        }
    }
}

impl Grower<'_> {
    fn build(&mut self, samples: &mut [u32], depth: usize) -> u32 {
        let n = samples.len();
        let mut sum = 0.0;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for &s in samples.iter() {
            let v = self.y[s as usize];
            sum += v;
            min_y = min_y.min(v);
            max_y = max_y.max(v);
        }
        let mean = sum / n as f64;

        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if n <= self.params.min_node_size || min_y == max_y || depth_capped {
            return self.push(Node::Leaf { value: mean });
        }

        let best = self.best_split(samples, sum);
        let Some((feature, threshold)) = best else {
            return self.push(Node::Leaf { value: mean });
        };

        // Partition in place: left gets x <= threshold.
        let mut split_at = 0usize;
        for k in 0..n {
            if self.x[(samples[k] as usize, feature as usize)] <= threshold {
                samples.swap(k, split_at);
                split_at += 1;
            }
        }
        debug_assert!(split_at > 0 && split_at < n);

        let node = self.push(Node::Leaf { value: mean }); // placeholder
        let (left_samples, right_samples) = samples.split_at_mut(split_at);
        let left = self.build(left_samples, depth + 1);
        let right = self.build(right_samples, depth + 1);
        self.nodes[node as usize] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node
    }

    fn push(&mut self, node: Node) -> u32 {
        self.nodes.push(node);
        (self.nodes.len() - 1) as u32
    }

    /// Highest-scoring (feature, threshold) among `mtry` sampled candidate
    /// features, or None when no split strictly reduces impurity.
    fn best_split(&mut self, samples: &[u32], total_sum: f64) -> Option<(u32, f64)> {
        let n = samples.len();
        let q = self.feature_pool.len();
        let mtry = self.params.mtry.min(q);

        // Partial Fisher-Yates over a persistent pool, then sort the draw so
        // equal-gain ties resolve to the lowest feature index.
        for k in 0..mtry {
            let j = self.rng.random_range(k..q);
            self.feature_pool.swap(k, j);
        }
        let mut candidates: Vec<u32> = self.feature_pool[..mtry].to_vec();
        candidates.sort_unstable();

        let parent_score = total_sum * total_sum / n as f64;
        let mut best: Option<(f64, u32, f64)> = None;

        for &feature in &candidates {
            self.scratch.clear();
            for &s in samples {
                self.scratch
                    .push((self.x[(s as usize, feature as usize)], self.y[s as usize]));
            }
            self.scratch
                .sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.scratch[0].0 == self.scratch[n - 1].0 {
                continue; // single distinct value
            }

            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.scratch[k].1;
                let lo = self.scratch[k].0;
                let hi = self.scratch[k + 1].0;
                if lo == hi {
                    continue;
                }
                let left_n = (k + 1) as f64;
                let right_n = (n - k - 1) as f64;
                let right_sum = total_sum - left_sum;
                let score = left_sum * left_sum / left_n + right_sum * right_sum / right_n;
                if score > parent_score
                    && best.is_none_or(|(best_score, _, _)| score > best_score)
                {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo; // midpoint rounded up to hi
                    }
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

//! Regression random forest built from scratch: CART splits minimizing
//! within-node squared error, bootstrap resampling per tree, and feature
//! subsampling per split. Each tree draws from its own seeded RNG stream,
//! so training is reproducible and independent of worker count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const TREE_STREAM_TAG: u64 = 0x5452_4545; // "TREE"

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; defaults to ceil(p / 3).
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> ForestParams {
        ForestParams { n_trees: 500, max_depth: 5, min_leaf: 5, mtry: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Out-of-bag fit summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OobSummary {
    /// 1 - SSE/SST over rows with at least one out-of-bag prediction;
    /// `None` when the target is constant or nothing was out of bag.
    pub r2: Option<f64>,
    pub n_oob_rows: usize,
    /// The training target had zero variance, so the forest is a constant
    /// predictor.
    pub degenerate_target: bool,
}

/// A fitted forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub n_features: usize,
    pub(crate) trees: Vec<Tree>,
}

impl Forest {
    /// Fit on row-major features `x` and targets `y`. A zero-variance
    /// target yields a constant forest rather than an error.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: ForestParams) -> Result<(Forest, OobSummary)> {
        if x.is_empty() {
            return Err(Error::Invalid("forest training needs at least one row".into()));
        }
        if x.len() != y.len() {
            return Err(Error::Invalid("feature rows and targets differ in length".into()));
        }
        let p = x[0].len();
        if p == 0 {
            return Err(Error::Invalid("forest training needs at least one feature".into()));
        }
        if x.iter().any(|r| r.len() != p) {
            return Err(Error::Invalid("ragged feature rows".into()));
        }
        if x.iter().flatten().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("nonfinite training value".into()));
        }
        if params.n_trees == 0 || params.min_leaf == 0 {
            return Err(Error::OutOfRange("n_trees and min_leaf must be positive".into()));
        }
        let n = x.len();
        let mtry = params.mtry.unwrap_or_else(|| p.div_ceil(3)).clamp(1, p);

        let grower = Grower { x, y, p, mtry, params };
        let fit_one = |t: usize| -> (Tree, Vec<bool>) {
            let mut rng = rng::stream(params.seed, &[TREE_STREAM_TAG, t as u64]);
            grower.grow_tree(&mut rng)
        };

        #[cfg(feature = "parallel")]
        let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees).into_par_iter().map(fit_one).collect();
        #[cfg(not(feature = "parallel"))]
        let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees).map(fit_one).collect();

        let mut oob_sum = vec![0.0; n];
        let mut oob_count = vec![0usize; n];
        for (tree, inbag) in &grown {
            for i in 0..n {
                if !inbag[i] {
                    oob_sum[i] += tree.predict(&x[i]);
                    oob_count[i] += 1;
                }
            }
        }
        let ybar = y.iter().sum::<f64>() / n as f64;
        let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let mut sse = 0.0;
        let mut covered = 0usize;
        for i in 0..n {
            if oob_count[i] > 0 {
                let pred = oob_sum[i] / oob_count[i] as f64;
                sse += (y[i] - pred).powi(2);
                covered += 1;
            }
        }
        let degenerate = sst <= f64::EPSILON * n as f64;
        let r2 = if degenerate || covered == 0 { None } else { Some(1.0 - sse / sst) };

        let forest = Forest {
            params,
            n_features: p,
            trees: grown.into_iter().map(|(t, _)| t).collect(),
        };
        Ok((forest, OobSummary { r2, n_oob_rows: covered, degenerate_target: degenerate }))
    }

    /// Mean prediction over trees.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.n_features);
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    p: usize,
    mtry: usize,
    params: ForestParams,
}

impl Grower<'_> {
    fn grow_tree(&self, rng: &mut rand_chacha::ChaCha8Rng) -> (Tree, Vec<bool>) {
        use rand::Rng;
        let n = self.x.len();
        let mut inbag = vec![false; n];
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.random_range(0..n);
            inbag[i] = true;
            samples.push(i);
        }
        let mut nodes = Vec::new();
        self.grow_node(&mut nodes, samples, 0, rng);
        (Tree { nodes }, inbag)
    }

    fn grow_node(
        &self,
        nodes: &mut Vec<Node>,
        samples: Vec<usize>,
        depth: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> usize {
        let k = samples.len() as f64;
        let sum: f64 = samples.iter().map(|&i| self.y[i]).sum();
        let sumsq: f64 = samples.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mean = sum / k;
        let parent_sse = (sumsq - sum * sum / k).max(0.0);

        let splittable = depth < self.params.max_depth
            && samples.len() >= 2 * self.params.min_leaf
            && parent_sse > 1e-12 * k.max(1.0);
        if !splittable {
            nodes.push(Node::Leaf { value: mean });
            return nodes.len() - 1;
        }

        let best = self.best_split(&samples, parent_sse, rng);
        let (feature, threshold) = match best {
            Some(b) => b,
            None => {
                nodes.push(Node::Leaf { value: mean });
                return nodes.len() - 1;
            }
        };

        let (left, right): (Vec<usize>, Vec<usize>) =
            samples.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let my = nodes.len();
        nodes.push(Node::Leaf { value: mean }); // placeholder, patched below
        let li = self.grow_node(nodes, left, depth + 1, rng);
        let ri = self.grow_node(nodes, right, depth + 1, rng);
        nodes[my] = Node::Split { feature, threshold, left: li, right: ri };
        my
    }

    /// Best (feature, threshold) by squared-error reduction over a random
    /// feature subset. The threshold is the largest left-hand value, so
    /// routing `x <= threshold` reproduces the training partition exactly.
    fn best_split(
        &self,
        samples: &[usize],
        parent_sse: f64,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Option<(usize, f64)> {
        use rand::Rng;
        let mut feats: Vec<usize> = (0..self.p).collect();
        for k in 0..self.mtry {
            let j = rng.random_range(k..self.p);
            feats.swap(k, j);
        }
        feats.truncate(self.mtry);

        let min_leaf = self.params.min_leaf;
        let k = samples.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(k);
        for &f in &feats {
            pairs.clear();
            pairs.extend(samples.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[k - 1].0 {
                continue; // constant within the node
            }
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            let mut lsum = 0.0;
            let mut lsq = 0.0;
            for j in 0..k - 1 {
                lsum += pairs[j].1;
                lsq += pairs[j].1 * pairs[j].1;
                let l = j + 1;
                if l < min_leaf || k - l < min_leaf || pairs[j].0 == pairs[j + 1].0 {
                    continue;
                }
                let lf = l as f64;
                let rf = (k - l) as f64;
                let rsum = total - lsum;
                let rsq = total_sq - lsq;
                let child_sse = (lsq - lsum * lsum / lf).max(0.0)
                    + (rsq - rsum * rsum / rf).max(0.0);
                let gain = parent_sse - child_sse;
                if best.map_or(gain > 0.0, |(g, _, _)| gain > g) {
                    best = Some((gain, f, pairs[j].0));
                }
            }
        }
        best.map(|(_, f, thr)| (f, thr))
    }
}

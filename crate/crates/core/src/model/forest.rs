//! Bagged Gini decision trees with per-node feature subsampling.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{Node, Tree};
use super::Matrix;
use crate::rng;

/// Candidate thresholds per feature.
pub const MAX_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfParams {
    pub max_depth: usize,
    pub n_trees: usize,
    pub min_instances_split: usize,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            max_depth: 20,
            n_trees: 100,
            min_instances_split: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn predict(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Quantile bin edges and per-row bin codes for one feature.
struct Binned {
    /// Upper edge of each bin except the last; a row is in bin `b` when
    /// `value <= edges[b]` and greater than the previous edge.
    edges: Vec<f64>,
    codes: Vec<u8>,
}

fn bin_feature(col: &[f64]) -> Binned {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let edges: Vec<f64> = if sorted.len() <= MAX_BINS {
        sorted[..sorted.len().saturating_sub(1)].to_vec()
    } else {
        let mut e: Vec<f64> = (1..MAX_BINS)
            .map(|b| sorted[b * sorted.len() / MAX_BINS - 1])
            .collect();
        e.dedup();
        e
    };
    let codes = col
        .iter()
        .map(|v| edges.partition_point(|e| e < v) as u8)
        .collect();
    Binned { edges, codes }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p) * total
}

struct TreeBuilder<'a> {
    bins: &'a [Binned],
    y: &'a [bool],
    weights: Vec<f64>,
    params: &'a RfParams,
    mtry: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, rows: Vec<u32>, depth: usize, rng: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let (pos, total) = rows.iter().fold((0.0, 0.0), |(p, t), &r| {
            let w = self.weights[r as usize];
            (p + if self.y[r as usize] { w } else { 0.0 }, t + w)
        });
        self.nodes.push(Node::Leaf { value: pos / total });
        let count: f64 = total;
        if depth >= self.params.max_depth
            || count < self.params.min_instances_split as f64
            || pos == 0.0
            || pos == total
        {
            return id;
        }

        let parent = gini(pos, total);
        let mut best: Option<(f64, usize, usize)> = None;
        let n_features = self.bins.len();
        let mut candidates = sample(rng, n_features, self.mtry.min(n_features)).into_vec();
        candidates.sort_unstable();
        for f in candidates {
            let b = &self.bins[f];
            let n_bins = b.edges.len() + 1;
            if n_bins < 2 {
                continue;
            }
            let mut hp = vec![0.0; n_bins];
            let mut ht = vec![0.0; n_bins];
            for &r in &rows {
                let r = r as usize;
                let c = b.codes[r] as usize;
                ht[c] += self.weights[r];
                if self.y[r] {
                    hp[c] += self.weights[r];
                }
            }
            let (mut lp, mut lt) = (0.0, 0.0);
            for cut in 0..n_bins - 1 {
                lp += hp[cut];
                lt += ht[cut];
                if lt == 0.0 || lt == total {
                    continue;
                }
                let gain = parent - gini(lp, lt) - gini(pos - lp, total - lt);
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, cut));
                }
            }
        }
        let Some((_, f, cut)) = best else {
            return id;
        };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| (self.bins[f].codes[r as usize] as usize) <= cut);
        let left = self.build(left_rows, depth + 1, rng);
        let right = self.build(right_rows, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: f,
            threshold: self.bins[f].edges[cut],
            left,
            right,
        };
        id
    }
}

pub fn fit(x: &Matrix, y: &[bool], params: &RfParams, seed: u64) -> ForestModel {
    let bins: Vec<Binned> = x.cols.par_iter().map(|c| bin_feature(c)).collect();
    let n = y.len();
    let mtry = ((bins.len() as f64).sqrt().round() as usize).max(1);
    let trees = (0..params.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, &[t as u64]);
            let mut weights = vec![0.0; n];
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1.0;
            }
            let rows: Vec<u32> = (0..n as u32).filter(|&r| weights[r as usize] > 0.0).collect();
            let mut builder = TreeBuilder {
                bins: &bins,
                y,
                weights,
                params,
                mtry,
                nodes: Vec::new(),
            };
            builder.build(rows, 0, &mut rng);
            Tree { nodes: builder.nodes }
        })
        .collect();
    ForestModel { trees }
}

//! Leaf-wise gradient-boosted trees with exact greedy splits and logistic loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix};

/// L2 penalty on leaf values.
pub const LAMBDA_L2: f64 = 1.0;
/// Minimum hessian mass in a leaf.
pub const MIN_SUM_HESSIAN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtParams {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub learning_rate: f64,
    #[serde(default = "default_rounds")]
    pub n_rounds: usize,
}

fn default_rounds() -> usize {
    200
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_leaves: 200,
            min_data_in_leaf: 100,
            learning_rate: 0.05,
            n_rounds: default_rounds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x(feature) <= threshold { left } else { right },
            }
        }
    }

    pub fn uses(&self, f: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }

    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub init_margin: f64,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn margin(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        self.init_margin + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Number of rows going left.
    n_left: usize,
}

/// A leaf under construction: the range `[lo, hi)` it occupies in every
/// per-feature sorted index array.
struct OpenLeaf {
    node: usize,
    lo: usize,
    hi: usize,
    grad: f64,
    hess: f64,
    best: Option<SplitCandidate>,
}

fn leaf_score(g: f64, h: f64) -> f64 {
    g * g / (h + LAMBDA_L2)
}

/// One row of a per-feature sorted array.
#[derive(Debug, Clone, Copy)]
struct Entry {
    value: f64,
    row: u32,
}

fn best_split_for_feature(
    entries: &[Entry],
    gh: &[(f64, f64)],
    total_g: f64,
    total_h: f64,
    min_leaf: usize,
) -> Option<(f64, f64, usize)> {
    let n = entries.len();
    if n < 2 * min_leaf || entries[0].value == entries[n - 1].value {
        return None;
    }
    let parent = leaf_score(total_g, total_h);
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut best: Option<(f64, f64, usize)> = None;
    // children score to beat; a split must improve on the parent
    let mut bar = parent;
    for k in 0..n - 1 {
        let (g, h) = gh[entries[k].row as usize];
        gl += g;
        hl += h;
        let n_left = k + 1;
        if n_left < min_leaf {
            continue;
        }
        if n - n_left < min_leaf {
            break;
        }
        let (a, b) = (entries[k].value, entries[k + 1].value);
        if a == b {
            continue;
        }
        let hr = total_h - hl;
        if hl < MIN_SUM_HESSIAN || hr < MIN_SUM_HESSIAN {
            continue;
        }
        // cross-multiplied screen; the exact score decides
        let (dl, dr, gr) = (hl + LAMBDA_L2, hr + LAMBDA_L2, total_g - gl);
        if gl * gl * dr + gr * gr * dl <= bar * dl * dr * (1.0 - 1e-12) {
            continue;
        }
        let score = leaf_score(gl, hl) + leaf_score(gr, hr);
        if score - parent > 0.0 && score > bar {
            let mid = a + (b - a) * 0.5;
            let threshold = if mid < b { mid } else { a };
            best = Some((score - parent, threshold, n_left));
            bar = score;
        }
    }
    best
}

struct Grower {
    /// Per feature, (value, row) sorted by value and grouped by leaf.
    sorted: Vec<Vec<Entry>>,
    /// Reusable buffers for the right side of a partition.
    scratch: Vec<Vec<Entry>>,
    min_leaf: usize,
}

impl Grower {
    fn find_split(&self, leaf: &OpenLeaf, gh: &[(f64, f64)]) -> Option<SplitCandidate> {
        self.sorted
            .par_iter()
            .enumerate()
            .filter_map(|(f, entries)| {
                best_split_for_feature(&entries[leaf.lo..leaf.hi], gh, leaf.grad, leaf.hess, self.min_leaf).map(
                    |(gain, threshold, n_left)| SplitCandidate {
                        gain,
                        feature: f,
                        threshold,
                        n_left,
                    },
                )
            })
            // highest gain, then lowest feature index; independent of scheduling
            .reduce_with(|a, b| {
                if b.gain > a.gain || (b.gain == a.gain && b.feature < a.feature) {
                    b
                } else {
                    a
                }
            })
    }

    fn grow(&mut self, gh: &[(f64, f64)], num_leaves: usize, lr: f64) -> Tree {
        let n = gh.len();
        let root = OpenLeaf {
            node: 0,
            lo: 0,
            hi: n,
            grad: gh.iter().map(|p| p.0).sum(),
            hess: gh.iter().map(|p| p.1).sum(),
            best: None,
        };
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut leaves = vec![root];
        leaves[0].best = self.find_split(&leaves[0], gh);
        let mut goes_left = vec![false; n];

        while leaves.len() < num_leaves {
            // leaf with the largest gain; earliest created wins ties
            let Some(pick) = leaves
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                })
                .map(|(i, _)| i)
            else {
                break;
            };
            let leaf = leaves.swap_remove(pick);
            let split = leaf.best.expect("picked leaf has a split");
            let mid = leaf.lo + split.n_left;
            // the split feature is sorted, so its first n_left rows go left
            for (k, e) in self.sorted[split.feature][leaf.lo..leaf.hi].iter().enumerate() {
                goes_left[e.row as usize] = k < split.n_left;
            }
            self.sorted
                .par_iter_mut()
                .zip(self.scratch.par_iter_mut())
                .for_each(|(entries, buf)| stable_partition(&mut entries[leaf.lo..leaf.hi], &goes_left, buf));

            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes[leaf.node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: li,
                right: ri,
            };
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            let sums = |lo: usize, hi: usize| {
                self.sorted[0][lo..hi].iter().fold((0.0, 0.0), |(g, h), e| {
                    let (eg, eh) = gh[e.row as usize];
                    (g + eg, h + eh)
                })
            };
            // a full tree never splits the children, so skip their search
            let more = leaves.len() + 2 < num_leaves;
            for (node, lo, hi) in [(li, leaf.lo, mid), (ri, mid, leaf.hi)] {
                let (g, h) = sums(lo, hi);
                let mut child = OpenLeaf {
                    node,
                    lo,
                    hi,
                    grad: g,
                    hess: h,
                    best: None,
                };
                if more {
                    child.best = self.find_split(&child, gh);
                }
                leaves.push(child);
            }
            // keep creation order so tie-breaking does not depend on swap_remove
            leaves.sort_by_key(|l| l.node);
        }

        for leaf in &leaves {
            nodes[leaf.node] = Node::Leaf {
                value: -leaf.grad / (leaf.hess + LAMBDA_L2) * lr,
            };
        }
        Tree { nodes }
    }
}

fn stable_partition(entries: &mut [Entry], goes_left: &[bool], right: &mut Vec<Entry>) {
    right.clear();
    let mut w = 0;
    for i in 0..entries.len() {
        let e = entries[i];
        if goes_left[e.row as usize] {
            entries[w] = e;
            w += 1;
        } else {
            right.push(e);
        }
    }
    entries[w..].copy_from_slice(right);
}

pub fn log_loss(margins: &[f64], y: &[bool]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| {
            // log(1 + exp(-s m)) computed stably
            let z = if t { -m } else { m };
            if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            }
        })
        .sum::<f64>()
        / margins.len() as f64
}

/// Fit a boosted ensemble. `trace` receives the mean training loss after
/// each round.
pub fn fit(x: &Matrix, y: &[bool], params: &GbdtParams, mut trace: impl FnMut(f64)) -> GbdtModel {
    let n = y.len();
    let pos = y.iter().filter(|&&t| t).count() as f64;
    let init_margin = (pos / (n as f64 - pos)).ln();
    let mut margins = vec![init_margin; n];

    let presorted: Vec<Vec<Entry>> = x
        .cols
        .par_iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx.into_iter().map(|row| Entry { value: col[row as usize], row }).collect()
        })
        .collect();
    let mut grower = Grower {
        sorted: presorted.clone(),
        scratch: vec![Vec::with_capacity(n); presorted.len()],
        min_leaf: params.min_data_in_leaf.max(1),
    };

    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut gh = vec![(0.0, 0.0); n];
    for _ in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            gh[i] = (p - f64::from(u8::from(y[i])), p * (1.0 - p));
        }
        for (dst, src) in grower.sorted.iter_mut().zip(&presorted) {
            dst.copy_from_slice(src);
        }
        let tree = grower.grow(&gh, params.num_leaves.max(1), params.learning_rate);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(|f| x.cols[f][i]);
        }
        trace(log_loss(&margins, y));
        trees.push(tree);
    }
    GbdtModel { init_margin, trees }
}

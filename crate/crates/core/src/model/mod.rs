//! Triage classifiers: training, scoring, artifact I/O, hyperparameter
//! search and permutation importance.

pub mod forest;
pub mod gbdt;
pub mod glm;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FeatureFrame;
use crate::metrics::recall_at_fpr;
use crate::rng;

pub use forest::{ForestModel, RfParams};
pub use gbdt::{GbdtModel, GbdtParams};
pub use glm::{GlmModel, GlmParams};

pub const ARTIFACT_VERSION: u32 = 1;

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

/// Column-major view of feature values.
pub struct Matrix<'a> {
    pub cols: Vec<&'a [f64]>,
    pub n_rows: usize,
}

impl<'a> Matrix<'a> {
    pub fn from_frame(frame: &'a FeatureFrame) -> Self {
        Matrix {
            cols: frame.columns().iter().map(|c| c.values.as_slice()).collect(),
            n_rows: frame.n_rows(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Glm,
    Rf,
    Gbdt,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Glm => "glm",
            Algorithm::Rf => "rf",
            Algorithm::Gbdt => "gbdt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum ModelParams {
    Glm(GlmParams),
    Rf(RfParams),
    Gbdt(GbdtParams),
}

fn check_range<T: PartialOrd + fmt::Display>(name: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v < lo || v > hi {
        return Err(Error::Config(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl ModelParams {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelParams::Glm(_) => Algorithm::Glm,
            ModelParams::Rf(_) => Algorithm::Rf,
            ModelParams::Gbdt(_) => Algorithm::Gbdt,
        }
    }

    /// Check the hyperparameter ranges of the search grid.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelParams::Glm(p) => check_range("alpha", p.alpha, 0.01, 0.09),
            ModelParams::Rf(p) => {
                check_range("max_depth", p.max_depth, 10, 40)?;
                check_range("n_trees", p.n_trees, 100, 200)?;
                check_range("min_instances_split", p.min_instances_split, 10, 50)
            }
            ModelParams::Gbdt(p) => {
                check_range("num_leaves", p.num_leaves, 200, 500)?;
                check_range("min_data_in_leaf", p.min_data_in_leaf, 100, 200)?;
                check_range("learning_rate", p.learning_rate, 0.01, 0.09)?;
                check_range("n_rounds", p.n_rounds, 1, usize::MAX)
            }
        }
    }

    /// Uniform draw from the search grid for one family.
    pub fn sample(algorithm: Algorithm, gbdt_rounds: usize, rng: &mut impl Rng) -> ModelParams {
        match algorithm {
            Algorithm::Glm => ModelParams::Glm(GlmParams {
                alpha: rng.random_range(0.01..=0.09),
                standardize_numericals: rng.random_bool(0.5),
            }),
            Algorithm::Rf => ModelParams::Rf(RfParams {
                max_depth: rng.random_range(10..=40),
                n_trees: rng.random_range(100..=200),
                min_instances_split: rng.random_range(10..=50),
            }),
            Algorithm::Gbdt => ModelParams::Gbdt(GbdtParams {
                num_leaves: rng.random_range(200..=500),
                min_data_in_leaf: rng.random_range(100..=200),
                learning_rate: rng.random_range(0.01..=0.09),
                n_rounds: gbdt_rounds,
            }),
        }
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelParams::Glm(p) => write!(
                f,
                "alpha={:.4};standardize_numericals={}",
                p.alpha, p.standardize_numericals
            ),
            ModelParams::Rf(p) => write!(
                f,
                "max_depth={};n_trees={};min_instances_split={}",
                p.max_depth, p.n_trees, p.min_instances_split
            ),
            ModelParams::Gbdt(p) => write!(
                f,
                "num_leaves={};min_data_in_leaf={};learning_rate={:.4};n_rounds={}",
                p.num_leaves, p.min_data_in_leaf, p.learning_rate, p.n_rounds
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Fitted {
    Glm(GlmModel),
    Rf(ForestModel),
    Gbdt(GbdtModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub params: ModelParams,
    pub features: Vec<String>,
    pub seed: u64,
    pub n_train_rows: usize,
    /// Free-form training context such as split boundaries.
    pub metadata: BTreeMap<String, String>,
    pub fitted: Fitted,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let artifact: ModelArtifact = serde_json::from_str(&text)?;
        if artifact.format_version != ARTIFACT_VERSION {
            return Err(Error::InvalidInput(format!(
                "model artifact version {} is not supported (expected {ARTIFACT_VERSION})",
                artifact.format_version
            )));
        }
        Ok(artifact)
    }

    /// Indices of features the fitted model can respond to.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.features.len()];
        match &self.fitted {
            Fitted::Glm(m) => {
                for (u, b) in used.iter_mut().zip(&m.coefficients) {
                    *u = *b != 0.0;
                }
            }
            Fitted::Rf(m) => m.trees.iter().flat_map(|t| t.features()).for_each(|f| used[f] = true),
            Fitted::Gbdt(m) => m.trees.iter().flat_map(|t| t.features()).for_each(|f| used[f] = true),
        }
        used
    }

    fn score_row(&self, x: impl Fn(usize) -> f64 + Copy) -> f64 {
        match &self.fitted {
            Fitted::Glm(m) => sigmoid(m.margin(x)),
            Fitted::Rf(m) => m.predict(x),
            Fitted::Gbdt(m) => sigmoid(m.margin(x)),
        }
    }

    /// Columns of `frame` in artifact order.
    fn aligned<'a>(&self, frame: &'a FeatureFrame) -> Result<Matrix<'a>> {
        let missing: Vec<String> = self
            .features
            .iter()
            .filter(|f| frame.column(f).is_none())
            .cloned()
            .collect();
        let extra: Vec<String> = frame
            .names()
            .into_iter()
            .filter(|n| !self.features.contains(n))
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::ColumnMismatch { missing, extra });
        }
        Ok(Matrix {
            cols: self
                .features
                .iter()
                .map(|f| frame.column(f).expect("checked").values.as_slice())
                .collect(),
            n_rows: frame.n_rows(),
        })
    }
}

fn check_trainable(frame: &FeatureFrame) -> Result<Vec<bool>> {
    let y = frame.label_bits();
    let pos = y.iter().filter(|&&t| t).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::Training(format!(
            "training data needs both classes ({pos} positives out of {} rows)",
            y.len()
        )));
    }
    if frame.n_columns() == 0 {
        return Err(Error::Training("no feature columns".into()));
    }
    for c in frame.columns() {
        if let Some(v) = c.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Training(format!("column `{}` holds non-finite value {v}", c.name)));
        }
    }
    Ok(y)
}

/// Fit a model on every row and column of `frame`.
pub fn train(frame: &FeatureFrame, params: &ModelParams, seed: u64) -> Result<ModelArtifact> {
    train_traced(frame, params, seed, |_| {})
}

/// As [`train`], reporting the training loss after each boosting round.
pub fn train_traced(
    frame: &FeatureFrame,
    params: &ModelParams,
    seed: u64,
    trace: impl FnMut(f64),
) -> Result<ModelArtifact> {
    params.validate()?;
    let y = check_trainable(frame)?;
    let x = Matrix::from_frame(frame);
    let fitted = match params {
        ModelParams::Glm(p) => Fitted::Glm(glm::fit(&x, &y, p)),
        ModelParams::Rf(p) => Fitted::Rf(forest::fit(&x, &y, p, seed)),
        ModelParams::Gbdt(p) => Fitted::Gbdt(gbdt::fit(&x, &y, p, trace)),
    };
    Ok(ModelArtifact {
        format_version: ARTIFACT_VERSION,
        params: *params,
        features: frame.names(),
        seed,
        n_train_rows: frame.n_rows(),
        metadata: BTreeMap::new(),
        fitted,
    })
}

/// Score each row of `frame` in [0, 1].
pub fn predict(artifact: &ModelArtifact, frame: &FeatureFrame) -> Result<Vec<f64>> {
    let x = artifact.aligned(frame)?;
    Ok((0..x.n_rows)
        .into_par_iter()
        .map(|i| artifact.score_row(|f| x.cols[f][i]))
        .collect())
}

/// Per-tree outputs of a boosted model on fixed rows, so that shuffling one
/// feature only re-evaluates the trees that split on it. Sums run in tree
/// order, matching [`GbdtModel::margin`] bit for bit.
struct TreeCache<'m> {
    model: &'m GbdtModel,
    /// `outputs[t][i]`: tree `t` on row `i`.
    outputs: Vec<Vec<f64>>,
}

impl<'m> TreeCache<'m> {
    fn new(model: &'m GbdtModel, x: &Matrix) -> Self {
        let outputs = model
            .trees
            .par_iter()
            .map(|t| (0..x.n_rows).map(|i| t.predict(|j| x.cols[j][i])).collect())
            .collect();
        TreeCache { model, outputs }
    }

    fn permuted_scores(&self, x: &Matrix, f: usize, perm: &[usize]) -> Vec<f64> {
        let uses: Vec<bool> = self.model.trees.iter().map(|t| t.uses(f)).collect();
        let col = x.cols[f];
        (0..x.n_rows)
            .into_par_iter()
            .map(|i| {
                let swapped = col[perm[i]];
                let row = |j: usize| if j == f { swapped } else { x.cols[j][i] };
                let sum = self.model.trees.iter().enumerate().fold(0.0, |acc, (t, tree)| {
                    acc + if uses[t] { tree.predict(row) } else { self.outputs[t][i] }
                });
                sigmoid(self.model.init_margin + sum)
            })
            .collect()
    }
}

/// Drop in recall at `max_fpr` when each feature is shuffled, averaged over
/// `shuffles` seeded permutations. Features the model never uses get 0.
pub fn permutation_importance(
    artifact: &ModelArtifact,
    frame: &FeatureFrame,
    max_fpr: f64,
    shuffles: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    if shuffles == 0 {
        return Err(Error::Config("permutation importance needs at least one shuffle".into()));
    }
    let x = artifact.aligned(frame)?;
    let y = frame.label_bits();
    let n = x.n_rows;
    let base_scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| artifact.score_row(|f| x.cols[f][i]))
        .collect();
    let baseline = recall_at_fpr(&base_scores, &y, max_fpr)?;
    let used = artifact.used_features();
    let cache = match &artifact.fitted {
        Fitted::Gbdt(m) => Some(TreeCache::new(m, &x)),
        _ => None,
    };

    let mut out = Vec::with_capacity(artifact.features.len());
    for (f, name) in artifact.features.iter().enumerate() {
        if !used[f] {
            out.push((name.clone(), 0.0));
            continue;
        }
        let mut total = 0.0;
        for k in 0..shuffles {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng::stream(seed, &[rng::stable_hash(name), k as u64]));
            let col = x.cols[f];
            let scores: Vec<f64> = match &cache {
                Some(c) => c.permuted_scores(&x, f, &perm),
                None => (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let swapped = col[perm[i]];
                        artifact.score_row(|j| if j == f { swapped } else { x.cols[j][i] })
                    })
                    .collect(),
            };
            total += recall_at_fpr(&scores, &y, max_fpr)?;
        }
        out.push((name.clone(), baseline - total / shuffles as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub params: ModelParams,
    /// Validation recall, or `None` when training failed.
    pub metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: ModelArtifact,
    pub best_trial: usize,
    pub leaderboard: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub n_trials: usize,
    pub target_fpr: f64,
    /// Boosting rounds for sampled GBDT trials.
    pub gbdt_rounds: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_trials: 50,
            target_fpr: 0.2,
            gbdt_rounds: 200,
        }
    }
}

/// Family of search trial `t`: round-robin over GLM, RF, GBDT.
pub fn trial_family(t: usize) -> Algorithm {
    [Algorithm::Glm, Algorithm::Rf, Algorithm::Gbdt][t % 3]
}

/// Sampled configuration for each trial.
pub fn sample_trials(cfg: &SearchConfig, seed: u64) -> Vec<ModelParams> {
    (0..cfg.n_trials)
        .map(|t| {
            let mut r = rng::stream(seed, &[t as u64]);
            ModelParams::sample(trial_family(t), cfg.gbdt_rounds, &mut r)
        })
        .collect()
}

/// Train every candidate on `train`, rank by recall on `val`; the earliest
/// trial wins ties.
pub fn search_candidates(
    train_frame: &FeatureFrame,
    val_frame: &FeatureFrame,
    candidates: &[ModelParams],
    target_fpr: f64,
    seed: u64,
) -> Result<SearchOutcome> {
    let val_y = val_frame.label_bits();
    let mut leaderboard = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64, ModelArtifact)> = None;
    for (trial, params) in candidates.iter().enumerate() {
        let result = train(train_frame, params, rng::derive(seed, &[trial as u64])).and_then(|a| {
            let scores = predict(&a, val_frame)?;
            Ok((recall_at_fpr(&scores, &val_y, target_fpr)?, a))
        });
        match result {
            Ok((metric, artifact)) => {
                log::info!("trial {trial} {} [{params}] val recall {metric:.4}", params.algorithm());
                if best.as_ref().is_none_or(|(_, m, _)| metric > *m) {
                    best = Some((trial, metric, artifact));
                }
                leaderboard.push(TrialRecord {
                    trial,
                    params: *params,
                    metric: Some(metric),
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("trial {trial} {} [{params}] failed: {e}", params.algorithm());
                leaderboard.push(TrialRecord {
                    trial,
                    params: *params,
                    metric: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let (best_trial, _, best) = best.ok_or_else(|| {
        Error::Training(format!("all {} search trials failed", candidates.len()))
    })?;
    Ok(SearchOutcome {
        best,
        best_trial,
        leaderboard,
    })
}

pub fn hyperparameter_search(
    train_frame: &FeatureFrame,
    val_frame: &FeatureFrame,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchOutcome> {
    if train_frame.n_rows() == 0 || val_frame.n_rows() == 0 {
        return Err(Error::InvalidInput("search needs non-empty train and validation data".into()));
    }
    let candidates = sample_trials(cfg, seed);
    search_candidates(train_frame, val_frame, &candidates, cfg.target_fpr, seed)
}

pub fn write_leaderboard<W: Write>(writer: W, rows: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trial", "algorithm", "params", "val_recall_at_20fpr"])?;
    for r in rows {
        w.write_record([
            r.trial.to_string(),
            r.params.algorithm().to_string(),
            r.params.to_string(),
            r.metric.map(|m| format!("{m:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("leaderboard", e))?;
    Ok(())
}

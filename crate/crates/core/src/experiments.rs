//! Ablation, label-delay and window experiments over a featurized dataset.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FeatureFrame, RowKey};
use crate::graph::WindowConfig;
use crate::ingest::{DatasetSplit, SplitPart};
use crate::metrics::{recall_at, recall_at_fpr, roc_points};
use crate::model::{self, ModelArtifact, ModelParams};
use crate::pipeline::{baseline_scores, graph_features, rows_in, rows_where, Dataset, GraphRequest, WalkRequest};
use crate::rng;
use crate::walker::WalkConfig;

/// FPR grid for delta-recall curves: 0.01 to 0.50.
pub fn delta_grid() -> Vec<f64> {
    (1..=50).map(|i| f64::from(i) / 100.0).collect()
}

/// Columns of a named feature set, in frame order. Raw and profile columns
/// form the baseline every set builds on.
pub fn set_columns(frame: &FeatureFrame, set: &str) -> Result<Vec<String>> {
    let base = |n: &str| n.starts_with("raw_") || n.starts_with("prof_");
    let deg = |n: &str| n.starts_with("deg_") && !n.starts_with("deg_w_");
    let wdeg = |n: &str| n.starts_with("deg_w_");
    let gw = |n: &str| n.starts_with("gw_");
    let gwd = |n: &str| n.starts_with("gwd_");
    let pick: Box<dyn Fn(&str) -> bool> = match set {
        "profiles" => Box::new(base),
        "degrees" => Box::new(move |n| base(n) || deg(n)),
        "weighted_degrees" => Box::new(move |n| base(n) || wdeg(n)),
        "gw" => Box::new(move |n| base(n) || gw(n)),
        "gw_degrees" => Box::new(move |n| base(n) || gw(n) || deg(n)),
        "gwd_degrees" => Box::new(move |n| base(n) || gwd(n) || deg(n)),
        other => return Err(Error::Config(format!("unknown feature set `{other}`"))),
    };
    Ok(frame.names().into_iter().filter(|n| pick(n)).collect())
}

pub const ABLATION_SETS: [&str; 5] = ["profiles", "degrees", "weighted_degrees", "gw", "gw_degrees"];

/// Score rows with an artifact, ignoring frame columns it was not trained on.
pub fn predict_subset(artifact: &ModelArtifact, frame: &FeatureFrame) -> Result<Vec<f64>> {
    model::predict(artifact, &frame.select_columns(&artifact.features)?)
}

/// Train on `train_rows` of the chosen columns and score `eval_rows`.
pub fn fit_and_score(
    frame: &FeatureFrame,
    columns: &[String],
    train_rows: &[usize],
    eval_rows: &[usize],
    params: &ModelParams,
    seed: u64,
) -> Result<(ModelArtifact, Vec<f64>)> {
    let cols = frame.select_columns(columns)?;
    let artifact = model::train(&cols.select_rows(train_rows), params, seed)?;
    let scores = model::predict(&artifact, &cols.select_rows(eval_rows))?;
    Ok((artifact, scores))
}

/// Recall difference between two scorings of the same rows at each FPR.
pub fn delta_curve(model: &[f64], baseline: &[f64], labels: &[bool], grid: &[f64]) -> Result<Vec<f64>> {
    let m = roc_points(model, labels)?;
    let b = roc_points(baseline, labels)?;
    Ok(grid.iter().map(|&f| recall_at(&m, f) - recall_at(&b, f)).collect())
}

/// Delta-recall of `model` over `baseline` on the rows of `frame`.
pub fn delta_recall_curve(
    model: &ModelArtifact,
    baseline: &ModelArtifact,
    frame: &FeatureFrame,
    grid: &[f64],
) -> Result<Vec<f64>> {
    let labels = frame.label_bits();
    delta_curve(&predict_subset(model, frame)?, &predict_subset(baseline, frame)?, &labels, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetResult {
    pub set: String,
    pub n_features: usize,
    pub test_recall: f64,
    /// ROC as (fpr, recall) on the 0.00..1.00 grid.
    pub roc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub baseline: String,
    pub sets: Vec<SetResult>,
    pub grid: Vec<f64>,
    /// Delta-recall versus the baseline, per set.
    pub deltas: BTreeMap<String, Vec<f64>>,
}

fn roc_on_grid(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let pts = roc_points(scores, labels)?;
    Ok(crate::metrics::fpr_grid().into_iter().map(|f| (f, recall_at(&pts, f))).collect())
}

/// Train one model per feature set on the training split and compare them
/// on the test split. Sets whose extra families are absent are skipped.
pub fn ablation(
    frame: &FeatureFrame,
    split: &DatasetSplit,
    sets: &[&str],
    params: &ModelParams,
    seed: u64,
    fpr: f64,
) -> Result<Ablation> {
    let train = rows_in(frame, split, SplitPart::Train);
    let test = rows_in(frame, split, SplitPart::Test);
    let labels = frame.select_rows(&test).label_bits();
    let grid = delta_grid();
    let baseline_cols = set_columns(frame, "profiles")?;
    let mut scored: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for &set in sets {
        let cols = set_columns(frame, set)?;
        if set != "profiles" && cols.len() == baseline_cols.len() {
            log::warn!("feature set `{set}` adds no columns to this frame; skipped");
            continue;
        }
        let (_, scores) = fit_and_score(frame, &cols, &train, &test, params, seed)?;
        scored.push((set.to_string(), cols.len(), scores));
    }
    let base_scores = match scored.iter().find(|s| s.0 == "profiles") {
        Some(s) => s.2.clone(),
        None => fit_and_score(frame, &baseline_cols, &train, &test, params, seed)?.1,
    };
    let mut out = Ablation {
        baseline: "profiles".into(),
        sets: Vec::new(),
        grid: grid.clone(),
        deltas: BTreeMap::new(),
    };
    for (set, n_features, scores) in scored {
        out.deltas.insert(set.clone(), delta_curve(&scores, &base_scores, &labels, &grid)?);
        out.sets.push(SetResult {
            set,
            n_features,
            test_recall: recall_at_fpr(&scores, &labels, fpr)?,
            roc: roc_on_grid(&scores, &labels)?,
        });
    }
    Ok(out)
}

/// Inputs shared by the graph experiments.
pub struct ExperimentInputs<'a> {
    pub dataset: &'a Dataset,
    /// Raw and profile columns, one row per account-day.
    pub base: &'a FeatureFrame,
    pub split: &'a DatasetSplit,
    pub params: ModelParams,
    pub walk: WalkConfig,
    pub seed: u64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub delay: u32,
    pub seed: u32,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub val_recall: f64,
    pub test_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySweep {
    pub twl_days: u32,
    pub tws_days: u32,
    pub threshold: f64,
    pub rows: Vec<DelayRow>,
    /// Mean recall per delay.
    pub means: BTreeMap<u32, f64>,
    /// Spearman correlation of mean recall against delay, over delays > 0.
    pub spearman: f64,
    /// Plain GuiltyWalker under the same protocol, per seed.
    pub gw_reference: Vec<DelayRow>,
    /// Whether delay-0 pseudo-labelled features equal the plain ones.
    pub zero_delay_matches_gw: bool,
    pub threshold_delay: Option<u32>,
    pub threshold_table: Vec<ThresholdRow>,
    pub chosen_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySweepConfig {
    pub delays: Vec<u32>,
    pub n_seeds: u32,
    pub twl_days: u32,
    pub tws_days: u32,
    pub threshold: f64,
    /// Delay at which every grid threshold is compared.
    pub threshold_delay: Option<u32>,
    pub threshold_grid: Vec<f64>,
}

fn walk_for(inputs: &ExperimentInputs, s: u32) -> WalkConfig {
    WalkConfig {
        seed: rng::derive(rng::sub_seed(inputs.seed, "walk"), &[u64::from(s)]),
        ..inputs.walk
    }
}

fn unweighted_degrees(inputs: &ExperimentInputs, window: WindowConfig) -> Result<FeatureFrame> {
    let g = graph_features(
        inputs.dataset,
        &GraphRequest {
            window,
            degrees: true,
            weighted_degrees: false,
            walks: Vec::new(),
        },
    )?;
    Ok(g.degrees)
}

/// Walk columns for one prefix and label source.
fn walk_columns(
    inputs: &ExperimentInputs,
    window: WindowConfig,
    prefix: &str,
    walk: WalkConfig,
    delay: u32,
    threshold: f64,
    scores: Option<&HashMap<RowKey, f64>>,
) -> Result<FeatureFrame> {
    let mut g = graph_features(
        inputs.dataset,
        &GraphRequest {
            window,
            degrees: false,
            weighted_degrees: false,
            walks: vec![WalkRequest {
                prefix,
                walk,
                delay_days: delay,
                threshold,
                scores,
            }],
        },
    )?;
    Ok(g.walks.remove(0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Train the pseudo-labelled GuiltyWalker model for each delay and seed.
///
/// The pseudo-label scorer (profiles + degrees) is trained on the first
/// training half; the final model on the second half; recall is measured on
/// the test split.
pub fn delay_sweep(inputs: &ExperimentInputs, cfg: &DelaySweepConfig) -> Result<DelaySweep> {
    let split = inputs.split;
    let window0 = WindowConfig::new(cfg.twl_days, cfg.tws_days, 0)?;
    let degrees = unweighted_degrees(inputs, window0)?;
    let scorer_frame = inputs.base.join(&degrees)?;
    let scores = baseline_scores(&scorer_frame, split, &inputs.params, rng::sub_seed(inputs.seed, "baseline"))?;

    let second = rows_where(&scorer_frame, |d| split.in_second_half(d));
    let val = rows_in(&scorer_frame, split, SplitPart::Validation);
    let test = rows_in(&scorer_frame, split, SplitPart::Test);
    if second.is_empty() {
        return Err(Error::InvalidInput("second training half is empty".into()));
    }
    let model_seed = rng::sub_seed(inputs.seed, "model");
    let evaluate = |walk_frame: &FeatureFrame, rows: &[usize]| -> Result<f64> {
        let frame = scorer_frame.join(walk_frame)?;
        let (_, s) = fit_and_score(&frame, &frame.names(), &second, rows, &inputs.params, model_seed)?;
        recall_at_fpr(&s, &frame.select_rows(rows).label_bits(), inputs.fpr)
    };

    // one fit scored on validation and test together
    let val_and_test: Vec<usize> = val.iter().chain(&test).copied().collect();
    let evaluate_both = |walk_frame: &FeatureFrame| -> Result<(f64, f64)> {
        let frame = scorer_frame.join(walk_frame)?;
        let (_, s) = fit_and_score(&frame, &frame.names(), &second, &val_and_test, &inputs.params, model_seed)?;
        let (sv, st) = s.split_at(val.len());
        Ok((
            recall_at_fpr(sv, &frame.select_rows(&val).label_bits(), inputs.fpr)?,
            recall_at_fpr(st, &frame.select_rows(&test).label_bits(), inputs.fpr)?,
        ))
    };

    let mut rows = Vec::new();
    let mut gw_reference = Vec::new();
    let mut zero_delay_matches_gw = true;
    for s in 0..cfg.n_seeds {
        let walk = walk_for(inputs, s);
        let mut plain: Option<FeatureFrame> = None;
        if cfg.delays.contains(&0) {
            let gw = walk_columns(inputs, window0, "gw_", walk, 0, cfg.threshold, None)?;
            gw_reference.push(DelayRow {
                delay: 0,
                seed: s,
                recall: evaluate(&gw, &test)?,
            });
            plain = Some(gw);
        }
        for &delay in &cfg.delays {
            let window = WindowConfig::new(cfg.twl_days, cfg.tws_days, delay)?;
            let gwd = walk_columns(inputs, window, "gwd_", walk, delay, cfg.threshold, Some(&scores))?;
            if let (0, Some(gw)) = (delay, &plain) {
                let same = gw.columns().iter().zip(gwd.columns()).all(|(a, b)| a.values == b.values);
                zero_delay_matches_gw &= same;
            }
            let recall = evaluate(&gwd, &test)?;
            log::info!("delay {delay} seed {s}: recall {recall:.4}");
            rows.push(DelayRow { delay, seed: s, recall });
        }
    }

    let mut means: BTreeMap<u32, f64> = BTreeMap::new();
    for &d in &cfg.delays {
        let v: Vec<f64> = rows.iter().filter(|r| r.delay == d).map(|r| r.recall).collect();
        means.insert(d, v.iter().sum::<f64>() / v.len() as f64);
    }
    let positive: Vec<(f64, f64)> = means.iter().filter(|(d, _)| **d > 0).map(|(d, m)| (f64::from(*d), *m)).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
    let rho = if xs.len() >= 2 { spearman(&xs, &ys) } else { 0.0 };

    let mut threshold_table = Vec::new();
    let mut chosen_threshold = None;
    if let Some(delay) = cfg.threshold_delay {
        let window = WindowConfig::new(cfg.twl_days, cfg.tws_days, delay)?;
        let walk = walk_for(inputs, 0);
        let mut best: Option<(f64, f64)> = None;
        for &t in &cfg.threshold_grid {
            let gwd = walk_columns(inputs, window, "gwd_", walk, delay, t, Some(&scores))?;
            let (val_recall, test_recall) = evaluate_both(&gwd)?;
            let row = ThresholdRow {
                threshold: t,
                val_recall,
                test_recall,
            };
            if best.is_none_or(|(_, v)| row.val_recall > v) {
                best = Some((t, row.val_recall));
            }
            threshold_table.push(row);
        }
        chosen_threshold = best.map(|b| b.0);
    }

    Ok(DelaySweep {
        twl_days: cfg.twl_days,
        tws_days: cfg.tws_days,
        threshold: cfg.threshold,
        rows,
        means,
        spearman: rho,
        gw_reference,
        zero_delay_matches_gw,
        threshold_delay: cfg.threshold_delay,
        threshold_table,
        chosen_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCell {
    pub twl: u32,
    pub tws: u32,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweep {
    pub label_delay_days: u32,
    pub cells: Vec<WindowCell>,
    pub best: WindowCell,
    /// Profiles-only model under the same protocol.
    pub profiles_only_recall: f64,
}

impl WindowSweep {
    pub fn cell(&self, twl: u32, tws: u32) -> Option<f64> {
        self.cells.iter().find(|c| c.twl == twl && c.tws == tws).map(|c| c.recall)
    }
}

/// Profiles + degree features under each (TWL, TWS) retention pair, trained
/// on the training split and measured on the test split.
pub fn window_sweep(inputs: &ExperimentInputs, twl_grid: &[u32], tws_grid: &[u32], label_delay_days: u32) -> Result<WindowSweep> {
    let train = rows_in(inputs.base, inputs.split, SplitPart::Train);
    let test = rows_in(inputs.base, inputs.split, SplitPart::Test);
    let labels = inputs.base.select_rows(&test).label_bits();
    let seed = rng::sub_seed(inputs.seed, "model");
    let score = |frame: &FeatureFrame| -> Result<f64> {
        let (_, s) = fit_and_score(frame, &frame.names(), &train, &test, &inputs.params, seed)?;
        recall_at_fpr(&s, &labels, inputs.fpr)
    };
    let profiles_only_recall = score(inputs.base)?;
    let mut cells = Vec::new();
    for &twl in twl_grid {
        for &tws in tws_grid {
            let window = WindowConfig::new(twl, tws, label_delay_days)?;
            let frame = inputs.base.join(&unweighted_degrees(inputs, window)?)?;
            let recall = score(&frame)?;
            log::info!("window twl={twl} tws={tws}: recall {recall:.4}");
            cells.push(WindowCell { twl, tws, recall });
        }
    }
    let best = cells
        .iter()
        .fold(None::<&WindowCell>, |acc, c| match acc {
            Some(b) if b.recall >= c.recall => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| Error::Config("empty window grid".into()))?;
    Ok(WindowSweep {
        label_delay_days,
        cells,
        best,
        profiles_only_recall,
    })
}

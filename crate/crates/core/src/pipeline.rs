//! Feature construction from alerted transactions: profiles with selection,
//! degree features, and GuiltyWalker columns from one graph replay.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FeatureFrame, Provenance, RowKey};
use crate::graph::{degree_feature_names, degree_features, edge_events, EdgeEvent, Replay, WindowConfig, DEGREE_FEATURES};
use crate::ingest::{build_account_days, temporal_split, AccountDayRecord, DatasetSplit, SplitPart, Transaction};
use crate::model::{self, GbdtParams, ModelParams};
use crate::profiles::{self, default_specs, Selection, DEFAULT_WINDOWS};
use crate::rng;
use crate::walker::{walk_feature_names, LabelIndex, WalkConfig, Walker, WALK_FEATURE_SUFFIXES};

/// Alerted transactions with their derived account-days and edge events.
pub struct Dataset {
    pub txns: Vec<Transaction>,
    pub records: Vec<AccountDayRecord>,
    pub events: Vec<EdgeEvent>,
}

impl Dataset {
    pub fn new(txns: Vec<Transaction>) -> Result<Self> {
        if txns.is_empty() {
            return Err(Error::InvalidInput("no transactions".into()));
        }
        let records = build_account_days(&txns);
        let events = edge_events(&txns);
        Ok(Dataset { txns, records, events })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureToggles {
    pub profiles: bool,
    pub degrees: bool,
    pub weighted_degrees: bool,
    pub gw: bool,
    pub gwd: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        FeatureToggles {
            profiles: true,
            degrees: true,
            weighted_degrees: true,
            gw: true,
            gwd: false,
        }
    }
}

impl FeatureToggles {
    pub fn validate(&self) -> Result<()> {
        if self.gw && self.gwd {
            return Err(Error::Config("gw and gwd cannot both be enabled in one run".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub windows: Vec<u32>,
    pub comparisons: bool,
    /// Share of total permutation importance the kept features must reach.
    pub selection_budget: f64,
    pub selection_shuffles: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            windows: DEFAULT_WINDOWS.to_vec(),
            comparisons: true,
            selection_budget: 0.9,
            selection_shuffles: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            validation: 0.1,
            test: 0.3,
        }
    }
}

pub const DEFAULT_THRESHOLD_GRID: [f64; 6] = [0.1, 0.15, 0.25, 0.5, 0.89, 0.43];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GwdConfig {
    /// Pseudo-label threshold used by `featurize`.
    pub threshold: f64,
    /// Candidates compared on validation by the threshold search.
    pub threshold_grid: Vec<f64>,
}

impl Default for GwdConfig {
    fn default() -> Self {
        GwdConfig {
            threshold: 0.25,
            threshold_grid: DEFAULT_THRESHOLD_GRID.to_vec(),
        }
    }
}

/// Boosting setup shared by the baseline scorer and the experiments.
pub fn experiment_params(rounds: usize) -> ModelParams {
    ModelParams::Gbdt(GbdtParams {
        num_leaves: 200,
        min_data_in_leaf: 100,
        learning_rate: 0.09,
        n_rounds: rounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeConfig {
    pub toggles: FeatureToggles,
    pub profiles: ProfileConfig,
    pub split: SplitConfig,
    pub window: WindowConfig,
    pub walk: WalkConfig,
    pub gwd: GwdConfig,
    pub fpr_target: f64,
    pub model: ModelParams,
    pub seed: u64,
}

/// Row indices of `frame` falling in a split part.
pub fn rows_in(frame: &FeatureFrame, split: &DatasetSplit, part: SplitPart) -> Vec<usize> {
    rows_where(frame, |d| split.part(d) == Some(part))
}

pub fn rows_where(frame: &FeatureFrame, mut keep: impl FnMut(u32) -> bool) -> Vec<usize> {
    frame
        .keys()
        .iter()
        .enumerate()
        .filter(|(_, k)| keep(k.day))
        .map(|(i, _)| i)
        .collect()
}

/// Raw columns plus the selected profiles.
pub fn profile_features(
    ds: &Dataset,
    split: &DatasetSplit,
    cfg: &ProfileConfig,
    fpr_target: f64,
    seed: u64,
) -> Result<(FeatureFrame, Selection)> {
    let raw = profiles::raw_features(&ds.records)?;
    let prof = profiles::compute_profiles(&ds.records, &default_specs(&cfg.windows, cfg.comparisons))?;
    let candidates = raw.join(&prof)?;
    let fit = candidates.select_rows(&rows_where(&candidates, |d| split.in_first_half(d)));
    let holdout = candidates.select_rows(&rows_where(&candidates, |d| split.in_second_half(d)));
    let selection = profiles::select_features(
        &fit,
        &holdout,
        cfg.selection_budget,
        fpr_target,
        cfg.selection_shuffles,
        rng::sub_seed(seed, "selection"),
    )?;
    // keep candidate order so the frame layout does not depend on ranking
    let keep: Vec<String> = candidates
        .names()
        .into_iter()
        .filter(|n| selection.features.contains(n))
        .collect();
    Ok((candidates.select_columns(&keep)?, selection))
}

/// Where a walk column family takes its illicit labels from.
pub struct WalkRequest<'a> {
    pub prefix: &'a str,
    pub walk: WalkConfig,
    pub delay_days: u32,
    pub threshold: f64,
    /// Baseline scores for pseudo-labels; needed when `delay_days > 0`.
    pub scores: Option<&'a HashMap<RowKey, f64>>,
}

pub struct GraphRequest<'a> {
    pub window: WindowConfig,
    pub degrees: bool,
    pub weighted_degrees: bool,
    pub walks: Vec<WalkRequest<'a>>,
}

pub struct GraphFeatures {
    pub degrees: FeatureFrame,
    /// One frame per walk request, in request order.
    pub walks: Vec<FeatureFrame>,
}

/// Replay the graph day by day and compute the requested columns for the
/// account-days of each day.
pub fn graph_features(ds: &Dataset, req: &GraphRequest) -> Result<GraphFeatures> {
    let n = ds.records.len();
    let mut by_day: Vec<Vec<usize>> = Vec::new();
    for (i, r) in ds.records.iter().enumerate() {
        let d = r.day as usize;
        if by_day.len() <= d {
            by_day.resize(d + 1, Vec::new());
        }
        by_day[d].push(i);
    }
    for w in &req.walks {
        w.walk.validate()?;
    }
    let empty = HashMap::new();
    let labels = LabelIndex::new(&ds.records);
    let mut replay = Replay::new(&ds.events, req.window)?;
    let mut deg_cols = vec![vec![0.0; n]; 2 * DEGREE_FEATURES];
    let mut walk_cols = vec![vec![vec![0.0; n]; WALK_FEATURE_SUFFIXES.len()]; req.walks.len()];

    for (day, rows) in by_day.iter().enumerate() {
        let g = replay.advance_to(day as u32)?;
        if rows.is_empty() {
            continue;
        }
        if req.degrees || req.weighted_degrees {
            let values: Vec<Vec<f64>> = rows
                .par_iter()
                .map(|&i| degree_features(g, &ds.records[i].account_id))
                .collect();
            for (&i, v) in rows.iter().zip(values) {
                for (col, x) in deg_cols.iter_mut().zip(v) {
                    col[i] = x;
                }
            }
        }
        if req.walks.is_empty() {
            continue;
        }
        let walker = Walker::new(g);
        let targets: Vec<&str> = rows.iter().map(|&i| ds.records[i].account_id.as_str()).collect();
        for (w, cols) in req.walks.iter().zip(walk_cols.iter_mut()) {
            let view = labels.view(day as u32, w.delay_days, w.threshold, w.scores.unwrap_or(&empty))?;
            let feats = walker.run_many(&targets, &view, &w.walk)?;
            for (&i, f) in rows.iter().zip(feats) {
                for (col, x) in cols.iter_mut().zip(f.to_vec()) {
                    col[i] = x;
                }
            }
        }
    }

    let mut degrees = profiles::frame_skeleton(&ds.records)?;
    for (j, (name, values)) in degree_feature_names().into_iter().zip(deg_cols).enumerate() {
        let weighted = j >= DEGREE_FEATURES;
        if (weighted && req.weighted_degrees) || (!weighted && req.degrees) {
            degrees.push(name, Provenance::Degree, values)?;
        }
    }
    let walks = req
        .walks
        .iter()
        .zip(walk_cols)
        .map(|(w, cols)| {
            let provenance = Provenance::of_name(w.prefix).unwrap_or(Provenance::Gw);
            let mut f = profiles::frame_skeleton(&ds.records)?;
            for (name, values) in walk_feature_names(w.prefix).into_iter().zip(cols) {
                f.push(name, provenance, values)?;
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphFeatures { degrees, walks })
}

/// Train on the first training half and score every row, for pseudo-labels.
pub fn baseline_scores(
    frame: &FeatureFrame,
    split: &DatasetSplit,
    params: &ModelParams,
    seed: u64,
) -> Result<HashMap<RowKey, f64>> {
    let first = rows_where(frame, |d| split.in_first_half(d));
    if first.is_empty() {
        return Err(Error::InvalidInput("first training half is empty".into()));
    }
    let artifact = model::train(&frame.select_rows(&first), params, seed)?;
    let scores = model::predict(&artifact, frame)?;
    Ok(frame.keys().iter().cloned().zip(scores).collect())
}

pub struct Featurized {
    pub frame: FeatureFrame,
    pub split: DatasetSplit,
    pub selection: Option<Selection>,
}

/// Build the feature frame with the toggled families.
pub fn featurize(ds: &Dataset, cfg: &FeaturizeConfig) -> Result<Featurized> {
    cfg.toggles.validate()?;
    cfg.window.validate()?;
    let s = cfg.split;
    let split = temporal_split(&ds.records, (s.train, s.validation, s.test))?;
    let (mut frame, selection) = if cfg.toggles.profiles {
        let (f, sel) = profile_features(ds, &split, &cfg.profiles, cfg.fpr_target, cfg.seed)?;
        (f, Some(sel))
    } else {
        (profiles::raw_features(&ds.records)?, None)
    };

    let t = cfg.toggles;
    let walk = cfg.walk;
    let mut walks = Vec::new();
    if t.gw {
        walks.push(WalkRequest {
            prefix: "gw_",
            walk,
            delay_days: 0,
            threshold: cfg.gwd.threshold,
            scores: None,
        });
    }
    let graph = graph_features(
        ds,
        &GraphRequest {
            window: cfg.window,
            degrees: t.degrees || t.gwd,
            weighted_degrees: t.weighted_degrees,
            walks,
        },
    )?;
    let profile_frame = frame.clone();
    let is_weighted = |n: &String| n.starts_with("deg_w_");
    let keep: Vec<String> = graph.degrees.names().into_iter().filter(|n| is_weighted(n) || t.degrees).collect();
    frame = frame.join(&graph.degrees.select_columns(&keep)?)?;
    for w in &graph.walks {
        frame = frame.join(w)?;
    }

    if t.gwd {
        // the pseudo-label scorer sees profiles and unweighted degrees only
        let unweighted: Vec<String> = graph.degrees.names().into_iter().filter(|n| !is_weighted(n)).collect();
        let base = profile_frame.join(&graph.degrees.select_columns(&unweighted)?)?;
        let scores = baseline_scores(&base, &split, &cfg.model, rng::sub_seed(cfg.seed, "baseline"))?;
        let gwd = graph_features(
            ds,
            &GraphRequest {
                window: cfg.window,
                degrees: false,
                weighted_degrees: false,
                walks: vec![WalkRequest {
                    prefix: "gwd_",
                    walk,
                    delay_days: cfg.window.label_delay_days,
                    threshold: cfg.gwd.threshold,
                    scores: Some(&scores),
                }],
            },
        )?;
        frame = frame.join(&gwd.walks[0])?;
    }
    Ok(Featurized {
        frame,
        split,
        selection,
    })
}

//! Entity-centric sliding-window profiles and permutation-based selection.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FeatureFrame, Provenance, RowKey};
use crate::ingest::{AccountDayRecord, Day};
use crate::model::{self, GbdtParams, ModelParams};

pub const DEFAULT_WINDOWS: [u32; 5] = [1, 7, 14, 30, 60];
/// Value of `x / 0` for `x != 0`, signed.
pub const RATIO_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
    Min,
    Max,
    Count,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::Sum,
        Aggregation::Mean,
        Aggregation::Min,
        Aggregation::Max,
        Aggregation::Count,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompareOp {
    Ratio,
    Difference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Comparison {
    pub other_window_days: u32,
    pub op: CompareOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub direction: Direction,
    pub window_days: u32,
    pub agg: Aggregation,
    pub comparison: Option<Comparison>,
}

impl ProfileSpec {
    pub fn base(direction: Direction, window_days: u32, agg: Aggregation) -> Self {
        ProfileSpec {
            direction,
            window_days,
            agg,
            comparison: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::Config("profile window must be >= 1 day".into()));
        }
        if let Some(c) = self.comparison {
            if c.other_window_days == 0 || c.other_window_days == self.window_days {
                return Err(Error::Config(format!(
                    "profile comparison windows must be distinct and positive: {self}"
                )));
            }
        }
        Ok(())
    }

    /// The plain aggregate over the other window of a comparison.
    pub fn other_base(&self) -> Option<ProfileSpec> {
        self.comparison
            .map(|c| ProfileSpec::base(self.direction, c.other_window_days, self.agg))
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ProfileSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Sent => "sent",
            Direction::Received => "received",
        };
        let agg = match self.agg {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::Min => "min",
            Aggregation::Max => "max",
            Aggregation::Count => "count",
        };
        write!(f, "prof_{dir}_{agg}_{}d", self.window_days)?;
        if let Some(c) = self.comparison {
            let op = match c.op {
                CompareOp::Ratio => "ratio",
                CompareOp::Difference => "diff",
            };
            write!(f, "_vs_{}d_{op}", c.other_window_days)?;
        }
        Ok(())
    }
}

/// 2 directions x windows x 5 aggregations, plus ratio and difference for
/// every ordered (short, long) window pair when `comparisons` is set.
pub fn default_specs(windows: &[u32], comparisons: bool) -> Vec<ProfileSpec> {
    let mut windows = windows.to_vec();
    windows.sort_unstable();
    windows.dedup();
    let mut specs = Vec::new();
    for direction in [Direction::Sent, Direction::Received] {
        for agg in Aggregation::ALL {
            for &w in &windows {
                specs.push(ProfileSpec::base(direction, w, agg));
            }
            if comparisons {
                for (i, &short) in windows.iter().enumerate() {
                    for &long in &windows[i + 1..] {
                        for op in [CompareOp::Ratio, CompareOp::Difference] {
                            specs.push(ProfileSpec {
                                direction,
                                window_days: short,
                                agg,
                                comparison: Some(Comparison {
                                    other_window_days: long,
                                    op,
                                }),
                            });
                        }
                    }
                }
            }
        }
    }
    specs
}

/// Raw per-record features: account type plus the daily aggregates.
pub fn raw_features(records: &[AccountDayRecord]) -> Result<FeatureFrame> {
    let mut frame = frame_skeleton(records)?;
    let col = |f: &dyn Fn(&AccountDayRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    frame.push("raw_account_type", Provenance::Raw, col(&|r| r.account_type.as_feature()))?;
    frame.push("raw_total_sent", Provenance::Raw, col(&|r| r.total_sent))?;
    frame.push("raw_total_received", Provenance::Raw, col(&|r| r.total_received))?;
    frame.push("raw_sent_count", Provenance::Raw, col(&|r| f64::from(r.sent_count)))?;
    frame.push("raw_received_count", Provenance::Raw, col(&|r| f64::from(r.received_count)))?;
    frame.push("raw_n_counterparties", Provenance::Raw, col(&|r| r.counterparties.len() as f64))?;
    Ok(frame)
}

pub fn frame_skeleton(records: &[AccountDayRecord]) -> Result<FeatureFrame> {
    FeatureFrame::new(
        records
            .iter()
            .map(|r| RowKey {
                account_id: r.account_id.clone(),
                day: r.day,
            })
            .collect(),
        records.iter().map(|r| r.label).collect(),
    )
}

/// One direction's slice of a daily record.
#[derive(Clone, Copy)]
struct Flow {
    day: Day,
    total: f64,
    count: u32,
    min: f64,
    max: f64,
}

fn flow(r: &AccountDayRecord, direction: Direction) -> Flow {
    match direction {
        Direction::Sent => Flow {
            day: r.day,
            total: r.total_sent,
            count: r.sent_count,
            min: r.sent_min,
            max: r.sent_max,
        },
        Direction::Received => Flow {
            day: r.day,
            total: r.total_received,
            count: r.received_count,
            min: r.received_min,
            max: r.received_max,
        },
    }
}

fn aggregate(window: &[Flow], agg: Aggregation) -> f64 {
    let active = window.iter().filter(|f| f.count > 0);
    match agg {
        Aggregation::Sum => window.iter().map(|f| f.total).sum(),
        Aggregation::Count => window.iter().map(|f| f64::from(f.count)).sum(),
        Aggregation::Mean => {
            let count: u32 = window.iter().map(|f| f.count).sum();
            if count == 0 {
                0.0
            } else {
                window.iter().map(|f| f.total).sum::<f64>() / f64::from(count)
            }
        }
        Aggregation::Min => active.map(|f| f.min).reduce(f64::min).unwrap_or(0.0),
        Aggregation::Max => active.map(|f| f.max).reduce(f64::max).unwrap_or(0.0),
    }
}

/// Values of plain (non-comparison) specs for every record of one account.
/// `flows` is day-ordered; each spec keeps a trailing pointer so the window
/// `(day - w, day]` advances monotonically with the evaluation day.
fn account_profiles(flows_by_dir: &[Vec<Flow>; 2], specs: &[ProfileSpec]) -> Vec<Vec<f64>> {
    let n = flows_by_dir[0].len();
    let mut out = vec![Vec::with_capacity(specs.len()); n];
    for spec in specs {
        let flows = &flows_by_dir[spec.direction as usize];
        let mut start = 0;
        for (i, f) in flows.iter().enumerate() {
            while flows[start].day + spec.window_days <= f.day {
                start += 1;
            }
            out[i].push(aggregate(&flows[start..=i], spec.agg));
        }
    }
    out
}

/// Combine a short-window and long-window value.
pub fn compare(op: CompareOp, short: f64, long: f64) -> f64 {
    match op {
        CompareOp::Difference => short - long,
        CompareOp::Ratio => {
            if long != 0.0 {
                short / long
            } else if short == 0.0 {
                1.0
            } else {
                RATIO_CAP.copysign(short)
            }
        }
    }
}

/// Compute profile columns for every record, in record order.
///
/// Comparison specs are derived from their two base aggregates; base columns
/// that are only needed for a comparison are not emitted.
pub fn compute_profiles(records: &[AccountDayRecord], specs: &[ProfileSpec]) -> Result<FeatureFrame> {
    for s in specs {
        s.validate()?;
    }
    // every plain aggregate needed, including comparison operands
    let mut bases: Vec<ProfileSpec> = Vec::new();
    for s in specs {
        let own = ProfileSpec { comparison: None, ..*s };
        for b in std::iter::once(own).chain(s.other_base()) {
            if !bases.contains(&b) {
                bases.push(b);
            }
        }
    }

    let mut by_account: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_account.entry(r.account_id.as_str()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = by_account
        .into_values()
        .map(|mut rows| {
            rows.sort_by_key(|&i| records[i].day);
            rows
        })
        .collect();
    for rows in &groups {
        if rows.windows(2).any(|w| records[w[0]].day == records[w[1]].day) {
            let r = &records[rows[0]];
            return Err(Error::InvalidInput(format!(
                "account `{}` has more than one record per day",
                r.account_id
            )));
        }
    }

    let per_group: Vec<Vec<Vec<f64>>> = groups
        .par_iter()
        .map(|rows| {
            let flows = [
                rows.iter().map(|&i| flow(&records[i], Direction::Sent)).collect(),
                rows.iter().map(|&i| flow(&records[i], Direction::Received)).collect(),
            ];
            account_profiles(&flows, &bases)
        })
        .collect();

    let mut base_cols = vec![vec![0.0; records.len()]; bases.len()];
    for (rows, values) in groups.iter().zip(per_group) {
        for (&row, vals) in rows.iter().zip(values) {
            for (j, v) in vals.into_iter().enumerate() {
                base_cols[j][row] = v;
            }
        }
    }

    let mut base_frame = frame_skeleton(records)?;
    for (spec, values) in bases.iter().zip(base_cols) {
        base_frame.push(spec.name(), Provenance::Profile, values)?;
    }

    let mut frame = frame_skeleton(records)?;
    let comparisons: Vec<ProfileSpec> = specs.iter().filter(|s| s.comparison.is_some()).copied().collect();
    let mut derived = compute_cross_window(&base_frame, &comparisons)?.into_iter();
    for s in specs {
        if s.comparison.is_some() {
            frame.push_column(derived.next().expect("one column per comparison spec"))?;
        } else {
            frame.push_column(base_frame.column(&s.name()).expect("base computed").clone())?;
        }
    }
    Ok(frame)
}

/// Ratio/difference columns for comparison specs, read from base columns
/// already present in `frame`.
pub fn compute_cross_window(frame: &FeatureFrame, specs: &[ProfileSpec]) -> Result<Vec<crate::frame::Column>> {
    specs
        .iter()
        .map(|s| {
            let c = s
                .comparison
                .ok_or_else(|| Error::InvalidInput(format!("`{s}` has no comparison")))?;
            let short_name = ProfileSpec { comparison: None, ..*s }.name();
            let long_name = s.other_base().expect("comparison present").name();
            let missing = |n: &str| Error::InvalidInput(format!("base column `{n}` missing for `{s}`"));
            let short = frame.column(&short_name).ok_or_else(|| missing(&short_name))?;
            let long = frame.column(&long_name).ok_or_else(|| missing(&long_name))?;
            Ok(crate::frame::Column {
                name: s.name(),
                provenance: Provenance::Profile,
                values: short
                    .values
                    .iter()
                    .zip(&long.values)
                    .map(|(&a, &b)| compare(c.op, a, b))
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected features, most important first.
    pub features: Vec<String>,
    /// Importance of every candidate, sorted as ranked.
    pub ranking: Vec<(String, f64)>,
}

/// Model used to score features during selection.
pub fn selection_params() -> ModelParams {
    ModelParams::Gbdt(GbdtParams {
        num_leaves: 200,
        min_data_in_leaf: 100,
        learning_rate: 0.09,
        n_rounds: 50,
    })
}

/// Keep the smallest importance-ranked prefix of features whose cumulative
/// positive importance reaches `budget_fraction` of the total.
///
/// `fit` trains the scoring model and `holdout` measures permutation
/// importance (drop in recall at `target_fpr`, `shuffles` repeats).
pub fn select_features(
    fit: &FeatureFrame,
    holdout: &FeatureFrame,
    budget_fraction: f64,
    target_fpr: f64,
    shuffles: usize,
    seed: u64,
) -> Result<Selection> {
    if !(budget_fraction > 0.0 && budget_fraction <= 1.0) {
        return Err(Error::Config(format!("budget_fraction must be in (0, 1], got {budget_fraction}")));
    }
    if fit.n_columns() == 0 {
        return Err(Error::InvalidInput("no candidate features".into()));
    }
    let artifact = model::train(fit, &selection_params(), seed)?;
    let importances = model::permutation_importance(&artifact, holdout, target_fpr, shuffles, seed)?;
    Ok(rank_and_cut(importances, budget_fraction))
}

pub(crate) fn rank_and_cut(importances: Vec<(String, f64)>, budget_fraction: f64) -> Selection {
    let mut ranking = importances;
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let total: f64 = ranking.iter().map(|(_, v)| v.max(0.0)).sum();
    let features = if total <= 0.0 {
        log::warn!("no feature has positive permutation importance; keeping `{}` only", ranking[0].0);
        vec![ranking[0].0.clone()]
    } else {
        let goal = budget_fraction * total;
        let mut acc = 0.0;
        let mut keep = Vec::new();
        for (name, v) in ranking.iter().take_while(|(_, v)| *v > 0.0) {
            keep.push(name.clone());
            acc += v;
            // relative slack absorbs rounding in the running sum
            if acc >= goal * (1.0 - 1e-12) && budget_fraction < 1.0 {
                break;
            }
        }
        keep
    };
    Selection { features, ranking }
}

//! GuiltyWalker: random-walk proximity to known illicit accounts, with a
//! pseudo-labelled variant for delayed investigation outcomes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RowKey;
use crate::graph::GraphSnapshot;
use crate::ingest::{AccountDayRecord, Day};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    pub num_walks: u32,
    pub max_hops: u32,
    /// Set from the run seed rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            num_walks: 50,
            max_hops: 10,
            seed: 42,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_walks == 0 || self.max_hops == 0 {
            return Err(Error::Config("num_walks and max_hops must be at least 1".into()));
        }
        Ok(())
    }

    /// Length statistic used when no walk succeeds.
    pub fn sentinel(&self) -> f64 {
        f64::from(self.max_hops + 1)
    }
}

/// Which accounts count as illicit when walking on `as_of`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelView {
    pub as_of: Day,
    pub delay_days: u32,
    pub threshold: f64,
    illicit: HashSet<String>,
}

impl LabelView {
    pub fn is_illicit(&self, account: &str) -> bool {
        self.illicit.contains(account)
    }

    pub fn illicit_accounts(&self) -> BTreeSet<&str> {
        self.illicit.iter().map(String::as_str).collect()
    }

    /// View with an extra account marked illicit.
    pub fn with_illicit(mut self, account: &str) -> Self {
        self.illicit.insert(account.to_string());
        self
    }
}

/// Per-account label history for building views on successive days.
pub struct LabelIndex<'a> {
    /// Account-day records grouped by day.
    by_day: BTreeMap<Day, Vec<&'a AccountDayRecord>>,
    /// First day each account is truly suspicious.
    first_suspicious: HashMap<&'a str, Day>,
}

impl<'a> LabelIndex<'a> {
    pub fn new(records: &'a [AccountDayRecord]) -> Self {
        let mut by_day: BTreeMap<Day, Vec<&AccountDayRecord>> = BTreeMap::new();
        let mut first_suspicious: HashMap<&str, Day> = HashMap::new();
        for r in records {
            by_day.entry(r.day).or_default().push(r);
            if r.label.is_suspicious() {
                let e = first_suspicious.entry(r.account_id.as_str()).or_insert(r.day);
                *e = (*e).min(r.day);
            }
        }
        LabelIndex {
            by_day,
            first_suspicious,
        }
    }

    /// True labels for days before `as_of - delay`, pseudo-labels
    /// (`score >= threshold`) for the waiting period `[as_of - delay, as_of)`.
    pub fn view(
        &self,
        as_of: Day,
        delay_days: u32,
        threshold: f64,
        scores: &HashMap<RowKey, f64>,
    ) -> Result<LabelView> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("pseudo-label threshold {threshold} outside [0, 1]")));
        }
        let mut illicit: HashSet<String> = self
            .first_suspicious
            .iter()
            .filter(|(_, &d)| d < as_of && as_of - d > delay_days)
            .map(|(a, _)| a.to_string())
            .collect();
        let waiting_start = as_of.saturating_sub(delay_days);
        for (_, recs) in self.by_day.range(waiting_start..as_of) {
            for r in recs {
                let key = RowKey {
                    account_id: r.account_id.clone(),
                    day: r.day,
                };
                let score = scores.get(&key).ok_or_else(|| Error::MissingScore {
                    account: r.account_id.clone(),
                    day: r.day,
                })?;
                if *score >= threshold {
                    illicit.insert(r.account_id.clone());
                }
            }
        }
        Ok(LabelView {
            as_of,
            delay_days,
            threshold,
            illicit,
        })
    }
}

pub fn make_label_view(
    records: &[AccountDayRecord],
    scores: &HashMap<RowKey, f64>,
    as_of: Day,
    delay_days: u32,
    threshold: f64,
) -> Result<LabelView> {
    LabelIndex::new(records).view(as_of, delay_days, threshold, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkFeatures {
    pub hit_rate: f64,
    pub n_distinct_illicit: u32,
    pub len_min: f64,
    pub len_max: f64,
    pub len_median: f64,
    pub len_mean: f64,
    pub len_std: f64,
    pub len_p25: f64,
    pub len_p75: f64,
}

pub const WALK_FEATURE_SUFFIXES: [&str; 9] = [
    "hit_rate",
    "n_distinct_illicit",
    "len_min",
    "len_max",
    "len_median",
    "len_mean",
    "len_std",
    "len_p25",
    "len_p75",
];

/// Column names with the given prefix, e.g. `gw_` or `gwd_`.
pub fn walk_feature_names(prefix: &str) -> Vec<String> {
    WALK_FEATURE_SUFFIXES.iter().map(|s| format!("{prefix}{s}")).collect()
}

impl WalkFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.hit_rate,
            f64::from(self.n_distinct_illicit),
            self.len_min,
            self.len_max,
            self.len_median,
            self.len_mean,
            self.len_std,
            self.len_p25,
            self.len_p75,
        ]
    }

    fn from_walks(lengths: &mut [u32], distinct: usize, cfg: &WalkConfig) -> Self {
        let hit_rate = lengths.len() as f64 / f64::from(cfg.num_walks);
        if lengths.is_empty() {
            let s = cfg.sentinel();
            return WalkFeatures {
                hit_rate,
                n_distinct_illicit: 0,
                len_min: s,
                len_max: s,
                len_median: s,
                len_mean: s,
                len_std: s,
                len_p25: s,
                len_p75: s,
            };
        }
        lengths.sort_unstable();
        let v: Vec<f64> = lengths.iter().map(|&l| f64::from(l)).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        WalkFeatures {
            hit_rate,
            n_distinct_illicit: distinct as u32,
            len_min: v[0],
            len_max: v[v.len() - 1],
            len_median: percentile(&v, 0.5),
            len_mean: mean,
            len_std: var.sqrt(),
            len_p25: percentile(&v, 0.25),
            len_p75: percentile(&v, 0.75),
        }
    }
}

/// Linear interpolation between closest ranks of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Undirected adjacency of one snapshot, prepared for many walks.
pub struct Walker<'g> {
    as_of: Day,
    neighbours: HashMap<&'g str, Vec<&'g str>>,
}

impl<'g> Walker<'g> {
    pub fn new(g: &'g GraphSnapshot) -> Self {
        let neighbours = g.node_ids().map(|n| (n, g.undirected_neighbours(n))).collect();
        Walker {
            as_of: g.as_of().unwrap_or(0),
            neighbours,
        }
    }

    pub fn run(&self, target: &str, labels: &LabelView, cfg: &WalkConfig) -> Result<WalkFeatures> {
        if labels.as_of != self.as_of {
            return Err(Error::InvalidInput(format!(
                "label view for day {} used on snapshot of day {}",
                labels.as_of, self.as_of
            )));
        }
        let mut lengths = Vec::new();
        let mut found: BTreeSet<&str> = BTreeSet::new();
        for w in 0..cfg.num_walks {
            let mut rng = rng::stream(
                cfg.seed,
                &[rng::stable_hash(target), u64::from(self.as_of), u64::from(w)],
            );
            let mut cur = target;
            for hop in 1..=cfg.max_hops {
                let Some(next) = self.neighbours.get(cur).filter(|n| !n.is_empty()) else {
                    break;
                };
                cur = next[rng.random_range(0..next.len())];
                if cur != target && labels.is_illicit(cur) {
                    lengths.push(hop);
                    found.insert(cur);
                    break;
                }
            }
        }
        Ok(WalkFeatures::from_walks(&mut lengths, found.len(), cfg))
    }

    /// Features for many targets, in input order.
    pub fn run_many(&self, targets: &[&str], labels: &LabelView, cfg: &WalkConfig) -> Result<Vec<WalkFeatures>> {
        targets.par_iter().map(|t| self.run(t, labels, cfg)).collect()
    }
}

pub fn run_walks(g: &GraphSnapshot, target: &str, labels: &LabelView, cfg: &WalkConfig) -> Result<WalkFeatures> {
    cfg.validate()?;
    Walker::new(g).run(target, labels, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.5);
        assert_eq!(percentile(&v, 0.25), 1.75);
        assert_eq!(percentile(&v, 0.75), 3.25);
        assert_eq!(percentile(&[7.0], 0.25), 7.0);
    }

    #[test]
    fn sentinel_when_no_success() {
        let cfg = WalkConfig::default();
        let f = WalkFeatures::from_walks(&mut [], 0, &cfg);
        assert_eq!(f.hit_rate, 0.0);
        assert!(f.to_vec()[2..].iter().all(|&v| v == 11.0));
    }

    #[test]
    fn stats_over_successes() {
        let cfg = WalkConfig {
            num_walks: 4,
            ..WalkConfig::default()
        };
        let f = WalkFeatures::from_walks(&mut [3, 1], 2, &cfg);
        assert_eq!(f.hit_rate, 0.5);
        assert_eq!((f.len_min, f.len_max, f.len_mean, f.len_std), (1.0, 3.0, 2.0, 1.0));
    }

    #[test]
    fn zero_walks_rejected() {
        let cfg = WalkConfig {
            num_walks: 0,
            ..WalkConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

//! Seeded synthetic transaction generator with planted laundering rings and an
//! emulated rule-based alerting stage.
//!
//! Rings are hidden among legitimate decoy groups that follow the same
//! typologies with the same amounts and cadence. A ring member's own history
//! therefore looks like a decoy member's; what differs is who it trades with.
//!
//! Randomness is counter-based: every draw comes from a ChaCha stream keyed by
//! `(seed, stream kind, entity, day)`, so days can be generated in parallel
//! and the output is a pure function of the configuration.

use std::collections::HashMap;

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AccountType, Label, Transaction};
use crate::rng;

const STREAM_ACCOUNT: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;
const STREAM_RING: u64 = 3;
const STREAM_RING_DAY: u64 = 4;

/// Tolerance on the alerted false-positive share, in absolute terms.
pub const ALERT_RATE_TOLERANCE: f64 = 0.02;
const MAX_CALIBRATION_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingPattern {
    Chain,
    FanIn,
    FanOut,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleSet {
    /// Alert any transfer at or above this amount.
    pub amount_threshold: Option<f64>,
    /// Alert every transfer of a sender exceeding this many transfers in a day.
    pub velocity_threshold: Option<u32>,
    /// Alert transfers inside `[low, high)` when the sender makes at least
    /// `structuring_min_count` of them in a day.
    pub structuring_band: Option<(f64, f64)>,
    pub structuring_min_count: u32,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet {
            amount_threshold: Some(10_000.0),
            velocity_threshold: Some(6),
            structuring_band: Some((7_000.0, 10_000.0)),
            structuring_min_count: 3,
        }
    }
}

impl RuleSet {
    pub fn validate(&self) -> Result<()> {
        if self.amount_threshold.is_none() && self.velocity_threshold.is_none() && self.structuring_band.is_none() {
            return Err(Error::Config("rules: at least one rule must be enabled".into()));
        }
        if let Some(t) = self.amount_threshold {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("rules.amount_threshold must be >= 0, got {t}")));
            }
        }
        if let Some((lo, hi)) = self.structuring_band {
            if !(lo < hi) {
                return Err(Error::Config(format!("rules.structuring_band must satisfy low < high, got ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Set from the run seed rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub n_accounts: usize,
    pub external_fraction: f64,
    pub n_days: u32,
    pub start_date: String,
    /// Mean legitimate transfers per account per day.
    pub background_rate: f64,
    pub amount_log_mean: f64,
    pub amount_log_sd: f64,
    /// Spread of the per-account offset added to `amount_log_mean`, so some
    /// accounts routinely move large sums.
    pub account_scale_sd: f64,
    /// Log-scale spread of per-account transfer frequency.
    pub activity_sd: f64,
    /// Share of accounts that routinely split payments just under the
    /// reporting threshold for legitimate reasons (cash-heavy businesses).
    pub business_fraction: f64,
    /// Probability that a business account runs a batch of split payments on
    /// a given day.
    pub business_batch_rate: f64,
    pub n_rings: usize,
    /// Legitimate groups (payroll, supplier networks) that trade in the same
    /// shapes, amounts and cadence as the rings.
    pub n_decoy_groups: usize,
    pub ring_size: usize,
    pub ring_pattern: RingPattern,
    pub ring_activity_days: u32,
    /// Length of the period over which a ring's active days are spread.
    pub ring_span_days: u32,
    /// Smallest laundering transfer; amounts above it follow a log-scale
    /// exponential tail with rate `ring_amount_tail_rate`.
    pub ring_amount_floor: f64,
    pub ring_amount_tail_rate: f64,
    pub target_alert_fp_rate: f64,
    pub rules: RuleSet,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_accounts: 10_000,
            external_fraction: 0.3,
            n_days: 180,
            start_date: "2024-01-01".into(),
            background_rate: 0.05,
            amount_log_mean: 6.6,
            amount_log_sd: 1.2,
            account_scale_sd: 1.0,
            activity_sd: 0.8,
            business_fraction: 0.03,
            business_batch_rate: 0.1,
            n_rings: 20,
            n_decoy_groups: 290,
            ring_size: 5,
            ring_pattern: RingPattern::Mixed,
            ring_activity_days: 8,
            ring_span_days: 90,
            ring_amount_floor: 10_000.0,
            ring_amount_tail_rate: 1.5,
            target_alert_fp_rate: 0.97,
            rules: RuleSet::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_accounts < 2 {
            return bad(format!("n_accounts must be >= 2, got {}", self.n_accounts));
        }
        if !(0.0..=1.0).contains(&self.external_fraction) {
            return bad(format!("external_fraction must be in [0, 1], got {}", self.external_fraction));
        }
        if !(0.0..=1.0).contains(&self.target_alert_fp_rate) {
            return bad(format!("target_alert_fp_rate must be in [0, 1], got {}", self.target_alert_fp_rate));
        }
        if !(0.0..=1.0).contains(&self.business_fraction) || !(0.0..=1.0).contains(&self.business_batch_rate) {
            return bad("business_fraction and business_batch_rate must be in [0, 1]".into());
        }
        if self.n_days == 0 {
            return bad("n_days must be >= 1".into());
        }
        if !(self.background_rate >= 0.0) || !(self.amount_log_sd > 0.0) || !self.amount_log_mean.is_finite() {
            return bad("background_rate must be >= 0 and amount_log_sd > 0".into());
        }
        if !(self.account_scale_sd >= 0.0) || !(self.activity_sd >= 0.0) {
            return bad("account_scale_sd and activity_sd must be >= 0".into());
        }
        if !(self.ring_amount_floor > 0.0) || !(self.ring_amount_tail_rate > 0.0) {
            return bad("ring_amount_floor and ring_amount_tail_rate must be > 0".into());
        }
        if self.ring_size > self.n_accounts {
            return bad(format!(
                "ring_size {} exceeds n_accounts {}",
                self.ring_size, self.n_accounts
            ));
        }
        if self.n_rings + self.n_decoy_groups > 0 {
            if self.ring_size < 2 {
                return bad("ring_size must be >= 2".into());
            }
            if self.ring_activity_days == 0 || self.ring_activity_days > self.ring_span_days {
                return bad("ring_activity_days must be in 1..=ring_span_days".into());
            }
            if self.ring_span_days > self.n_days {
                return bad("ring_span_days must not exceed n_days".into());
            }
        }
        self.start()?;
        self.rules.validate()
    }

    fn start(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d")
            .map_err(|e| Error::Config(format!("start_date `{}`: {e}", self.start_date)))
    }

    fn ring_ceiling(&self) -> f64 {
        self.rules.amount_threshold.unwrap_or(10_000.0)
    }
}

#[derive(Debug, Clone)]
struct Account {
    id: String,
    kind: AccountType,
    activity: f64,
    /// Offset added to the log-mean of this account's transfer amounts.
    scale: f64,
    business: bool,
}

/// A laundering ring or, when labelled legitimate, a decoy group.
#[derive(Debug, Clone)]
struct Ring {
    members: Vec<usize>,
    pattern: RingPattern,
    active_days: Vec<u32>,
    label: Label,
}

fn build_accounts(config: &SynthConfig) -> Vec<Account> {
    let width = config.n_accounts.to_string().len().max(5);
    // unit mean activity
    let sd = config.activity_sd;
    let activity = LogNormal::new(-0.5 * sd * sd, sd).expect("validated spread");
    let scale = Normal::new(0.0, config.account_scale_sd).expect("validated spread");
    let mut accounts: Vec<Account> = (0..config.n_accounts)
        .map(|i| {
            let mut r = rng::stream(config.seed, &[STREAM_ACCOUNT, i as u64]);
            let external = r.random::<f64>() < config.external_fraction;
            let business = !external && r.random::<f64>() < config.business_fraction;
            Account {
                id: format!("A{i:0width$}"),
                kind: if external { AccountType::External } else { AccountType::Internal },
                activity: activity.sample(&mut r),
                scale: scale.sample(&mut r),
                business,
            }
        })
        .collect();
    if accounts.iter().all(|a| a.kind == AccountType::External) {
        accounts[0].kind = AccountType::Internal;
    }
    accounts
}

/// Whether a member slot must be an internal account so that every flow of
/// the group has an internal endpoint.
fn needs_internal(pattern: RingPattern, slot: usize) -> bool {
    match pattern {
        RingPattern::Chain => slot % 2 == 0,
        _ => slot == 0,
    }
}

fn plant_rings(config: &SynthConfig, accounts: &[Account]) -> Result<Vec<Ring>> {
    let pool_of = |kind: AccountType| -> Vec<usize> {
        accounts
            .iter()
            .enumerate()
            .filter(|(_, a)| a.kind == kind && !a.business)
            .map(|(i, _)| i)
            .collect()
    };
    let mut internal = pool_of(AccountType::Internal);
    let mut external = pool_of(AccountType::External);
    let n_groups = config.n_rings + config.n_decoy_groups;
    let shortage = || {
        Error::Config(format!(
            "{n_groups} groups of size {} need more accounts than the {} internal and {} external available",
            config.ring_size,
            pool_of(AccountType::Internal).len(),
            pool_of(AccountType::External).len()
        ))
    };
    let patterns = [RingPattern::Chain, RingPattern::FanIn, RingPattern::FanOut];
    let mut rings = Vec::with_capacity(n_groups);
    for r in 0..n_groups {
        let mut g = rng::stream(config.seed, &[STREAM_RING, r as u64]);
        let pattern = match config.ring_pattern {
            RingPattern::Mixed => patterns[r % patterns.len()],
            p => p,
        };
        let mut members = Vec::with_capacity(config.ring_size);
        for slot in 0..config.ring_size {
            let n_ext = if needs_internal(pattern, slot) { 0 } else { external.len() };
            if internal.len() + n_ext == 0 {
                return Err(shortage());
            }
            let pick = g.random_range(0..internal.len() + n_ext);
            members.push(if pick < internal.len() {
                internal.swap_remove(pick)
            } else {
                external.swap_remove(pick - internal.len())
            });
        }
        let start = g.random_range(0..=config.n_days - config.ring_span_days);
        let mut active_days: Vec<u32> =
            index::sample(&mut g, config.ring_span_days as usize, config.ring_activity_days as usize)
                .into_iter()
                .map(|o| start + o as u32)
                .collect();
        active_days.sort_unstable();
        rings.push(Ring {
            members,
            pattern,
            active_days,
            label: if r < config.n_rings { Label::Suspicious } else { Label::Legitimate },
        });
    }
    Ok(rings)
}

/// Directed (sender, receiver) pairs a ring uses on an active day.
fn ring_flows(ring: &Ring) -> Vec<(usize, usize)> {
    let m = &ring.members;
    match ring.pattern {
        RingPattern::Chain => m.windows(2).map(|w| (w[0], w[1])).collect(),
        RingPattern::FanIn => m[1..].iter().map(|&s| (s, m[0])).collect(),
        RingPattern::FanOut => m[1..].iter().map(|&d| (m[0], d)).collect(),
        RingPattern::Mixed => unreachable!("resolved when planting"),
    }
}

struct Draft {
    offset_secs: u32,
    sender: usize,
    receiver: usize,
    amount: f64,
    label: Label,
}

struct Generator<'a> {
    config: &'a SynthConfig,
    accounts: Vec<Account>,
    internal: Vec<usize>,
    rings: Vec<Ring>,
}

impl<'a> Generator<'a> {
    fn pick_receiver(&self, r: &mut ChaCha8Rng, sender: usize) -> usize {
        let n = self.accounts.len();
        let internal_only = self.accounts[sender].kind == AccountType::External;
        loop {
            let cand = if internal_only {
                self.internal[r.random_range(0..self.internal.len())]
            } else {
                r.random_range(0..n)
            };
            if cand != sender {
                return cand;
            }
        }
    }

    fn day(&self, day: u32) -> Vec<Draft> {
        let cfg = self.config;
        let ceiling = cfg.ring_ceiling();
        let mut out = Vec::new();
        for (a, acct) in self.accounts.iter().enumerate() {
            let mut r = rng::stream(cfg.seed, &[STREAM_BACKGROUND, a as u64, u64::from(day)]);
            let lambda = cfg.background_rate * acct.activity;
            let n = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(&mut r) as usize
            } else {
                0
            };
            for _ in 0..n {
                let receiver = self.pick_receiver(&mut r, a);
                out.push(Draft {
                    offset_secs: r.random_range(0..86_400),
                    sender: a,
                    receiver,
                    amount: round_cents(
                        (cfg.amount_log_mean + acct.scale + cfg.amount_log_sd * r.sample::<f64, _>(StandardNormal)).exp(),
                    ),
                    label: Label::Legitimate,
                });
            }
            if acct.business && r.random::<f64>() < cfg.business_batch_rate {
                let batch = r.random_range(2..=4);
                for _ in 0..batch {
                    let receiver = self.pick_receiver(&mut r, a);
                    out.push(Draft {
                        offset_secs: r.random_range(0..86_400),
                        sender: a,
                        receiver,
                        amount: round_cents(r.random_range(0.7 * ceiling..ceiling)),
                        label: Label::Legitimate,
                    });
                }
            }
        }
        for (ri, ring) in self.rings.iter().enumerate() {
            if ring.active_days.binary_search(&day).is_err() {
                continue;
            }
            let mut r = rng::stream(cfg.seed, &[STREAM_RING_DAY, ri as u64, u64::from(day)]);
            let tail = Exp::new(cfg.ring_amount_tail_rate).expect("validated rate");
            for (sender, receiver) in ring_flows(ring) {
                out.push(Draft {
                    offset_secs: r.random_range(0..86_400),
                    sender,
                    receiver,
                    amount: round_cents(cfg.ring_amount_floor * tail.sample(&mut r).exp()),
                    label: ring.label,
                });
            }
        }
        out.sort_by(|x, y| {
            (x.offset_secs, x.sender, x.receiver)
                .cmp(&(y.offset_secs, y.sender, y.receiver))
                .then(x.amount.total_cmp(&y.amount))
        });
        out
    }
}

fn round_cents(x: f64) -> f64 {
    ((x * 100.0).round() / 100.0).max(0.01)
}

/// Generate the full (pre-alerting) transaction log for a configuration.
pub fn generate_dataset(config: &SynthConfig) -> Result<Vec<Transaction>> {
    config.validate()?;
    let start = config.start()?;
    let accounts = build_accounts(config);
    let internal: Vec<usize> = accounts
        .iter()
        .enumerate()
        .filter(|(_, a)| a.kind == AccountType::Internal)
        .map(|(i, _)| i)
        .collect();
    let rings = plant_rings(config, &accounts)?;
    let generator = Generator {
        config,
        accounts,
        internal,
        rings,
    };

    let per_day: Vec<Vec<Draft>> = (0..config.n_days).into_par_iter().map(|d| generator.day(d)).collect();

    let total: usize = per_day.iter().map(Vec::len).sum();
    let width = total.to_string().len().max(7);
    let midnight = NaiveTime::MIN;
    let mut txns = Vec::with_capacity(total);
    for (d, drafts) in per_day.into_iter().enumerate() {
        let date = start + Duration::days(d as i64);
        let base = Utc.from_utc_datetime(&date.and_time(midnight));
        for draft in drafts {
            let s = &generator.accounts[draft.sender];
            let r = &generator.accounts[draft.receiver];
            txns.push(Transaction {
                txn_id: format!("T{:0width$}", txns.len()),
                timestamp: base + Duration::seconds(i64::from(draft.offset_secs)),
                sender_id: s.id.clone(),
                receiver_id: r.id.clone(),
                amount: draft.amount,
                sender_type: s.kind,
                receiver_type: r.kind,
                label: draft.label,
            });
        }
    }
    Ok(txns)
}

/// Per-transaction flag: alerted by any rule other than the amount threshold
/// (or suspicious, which is always alerted).
fn non_amount_flags(txns: &[Transaction], rules: &RuleSet) -> Vec<bool> {
    let mut daily: HashMap<(&str, NaiveDate), (u32, u32)> = HashMap::new();
    let in_band = |amount: f64| rules.structuring_band.is_some_and(|(lo, hi)| amount >= lo && amount < hi);
    for t in txns {
        let e = daily.entry((t.sender_id.as_str(), t.date())).or_default();
        e.0 += 1;
        if in_band(t.amount) {
            e.1 += 1;
        }
    }
    txns.iter()
        .map(|t| {
            let (count, band) = daily[&(t.sender_id.as_str(), t.date())];
            t.label.is_suspicious()
                || rules.velocity_threshold.is_some_and(|v| count > v)
                || (in_band(t.amount) && band >= rules.structuring_min_count)
        })
        .collect()
}

/// Transactions matching at least one rule, plus every suspicious transaction.
pub fn apply_rules(txns: &[Transaction], rules: &RuleSet) -> Vec<Transaction> {
    let flags = non_amount_flags(txns, rules);
    txns.iter()
        .zip(flags)
        .filter(|(t, flag)| *flag || rules.amount_threshold.is_some_and(|th| t.amount >= th))
        .map(|(t, _)| t.clone())
        .collect()
}

pub fn false_positive_share(alerted: &[Transaction]) -> f64 {
    if alerted.is_empty() {
        return 0.0;
    }
    alerted.iter().filter(|t| !t.label.is_suspicious()).count() as f64 / alerted.len() as f64
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub rules: RuleSet,
    pub achieved_fp_rate: f64,
    pub iterations: usize,
}

/// Bisect the amount threshold until the alerted false-positive share is
/// within [`ALERT_RATE_TOLERANCE`] of `target`.
pub fn calibrate_rules(txns: &[Transaction], rules: &RuleSet, target: f64) -> Result<Calibration> {
    rules.validate()?;
    if rules.amount_threshold.is_none() {
        return Err(Error::Config("rules.amount_threshold must be enabled for calibration".into()));
    }
    let flags = non_amount_flags(txns, rules);
    let fixed_alerts = flags.iter().filter(|&&f| f).count();
    let suspicious = txns.iter().filter(|t| t.label.is_suspicious()).count();
    // amounts of legitimate transfers that only the amount rule could alert
    let mut candidates: Vec<f64> = txns
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| !f)
        .map(|(t, _)| t.amount)
        .collect();
    candidates.sort_by(f64::total_cmp);
    let fp_at = |threshold: f64| {
        let extra = candidates.len() - candidates.partition_point(|&a| a < threshold);
        let alerted = fixed_alerts + extra;
        if alerted == 0 {
            0.0
        } else {
            (alerted - suspicious) as f64 / alerted as f64
        }
    };

    let mut lo = 0.0;
    let mut hi = candidates.last().copied().unwrap_or(0.0) + 1.0;
    let mut threshold = rules.amount_threshold.unwrap_or(0.0);
    let mut achieved = fp_at(threshold);
    let mut iterations = 0;
    while (achieved - target).abs() > ALERT_RATE_TOLERANCE / 4.0 && iterations < MAX_CALIBRATION_ITERATIONS {
        iterations += 1;
        // share falls as the threshold rises
        if achieved > target {
            lo = threshold;
        } else {
            hi = threshold;
        }
        threshold = 0.5 * (lo + hi);
        achieved = fp_at(threshold);
    }
    if (achieved - target).abs() > ALERT_RATE_TOLERANCE {
        return Err(Error::UnattainableAlertRate {
            target,
            achieved,
            iterations,
        });
    }
    let mut tuned = rules.clone();
    tuned.amount_threshold = Some(round_cents(threshold));
    let achieved = false_positive_share(&apply_rules(txns, &tuned));
    Ok(Calibration {
        rules: tuned,
        achieved_fp_rate: achieved,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub all: Vec<Transaction>,
    pub alerted: Vec<Transaction>,
    pub calibration: Calibration,
}

/// Generate, calibrate the rules to the configured false-positive share, and
/// alert.
pub fn synthesize(config: &SynthConfig) -> Result<SyntheticData> {
    let all = generate_dataset(config)?;
    let calibration = calibrate_rules(&all, &config.rules, config.target_alert_fp_rate)?;
    let alerted = apply_rules(&all, &calibration.rules);
    Ok(SyntheticData {
        all,
        alerted,
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::write_transactions;

    fn small() -> SynthConfig {
        SynthConfig {
            n_accounts: 400,
            n_days: 30,
            n_rings: 3,
            ring_size: 4,
            ring_activity_days: 3,
            ring_span_days: 10,
            n_decoy_groups: 3,
            background_rate: 0.3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_rings_no_suspicious() {
        let cfg = SynthConfig { n_rings: 0, ..small() };
        let txns = generate_dataset(&cfg).unwrap();
        assert!(!txns.is_empty());
        assert!(txns.iter().all(|t| !t.label.is_suspicious()));
    }

    #[test]
    fn same_config_same_bytes() {
        let cfg = small();
        let render = || {
            let mut buf = Vec::new();
            write_transactions(&mut buf, &generate_dataset(&cfg).unwrap()).unwrap();
            buf
        };
        assert_eq!(render(), render());
        let other = SynthConfig { seed: 43, ..small() };
        let mut buf = Vec::new();
        write_transactions(&mut buf, &generate_dataset(&other).unwrap()).unwrap();
        assert_ne!(render(), buf);
    }

    #[test]
    fn chain_ring_forms_daily_paths() {
        let cfg = SynthConfig {
            n_rings: 1,
            ring_size: 4,
            ring_pattern: RingPattern::Chain,
            ring_activity_days: 3,
            ..small()
        };
        let txns = generate_dataset(&cfg).unwrap();
        let susp: Vec<_> = txns.iter().filter(|t| t.label.is_suspicious()).collect();
        assert!(susp.len() >= 9);
        let mut by_day: HashMap<NaiveDate, Vec<&Transaction>> = HashMap::new();
        for t in &susp {
            by_day.entry(t.date()).or_default().push(t);
        }
        assert_eq!(by_day.len(), 3);
        for edges in by_day.values() {
            assert_eq!(edges.len(), 3);
            // a path: exactly one node with no incoming edge, each node at most one out
            let senders: std::collections::HashSet<_> = edges.iter().map(|t| &t.sender_id).collect();
            let receivers: std::collections::HashSet<_> = edges.iter().map(|t| &t.receiver_id).collect();
            assert_eq!(senders.len(), 3);
            assert_eq!(receivers.len(), 3);
            assert_eq!(senders.difference(&receivers).count(), 1);
        }
    }

    #[test]
    fn ring_larger_than_population_is_rejected() {
        let cfg = SynthConfig { n_accounts: 3, ring_size: 4, ..small() };
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_amount_threshold_alerts_everything() {
        let txns = generate_dataset(&small()).unwrap();
        let rules = RuleSet {
            amount_threshold: Some(0.0),
            velocity_threshold: None,
            structuring_band: None,
            structuring_min_count: 2,
        };
        assert_eq!(apply_rules(&txns, &rules).len(), txns.len());
    }

    #[test]
    fn suspicious_always_alerted() {
        let txns = generate_dataset(&small()).unwrap();
        let rules = RuleSet {
            amount_threshold: Some(1e12),
            velocity_threshold: None,
            structuring_band: None,
            structuring_min_count: 2,
        };
        let alerted = apply_rules(&txns, &rules);
        let n_susp = txns.iter().filter(|t| t.label.is_suspicious()).count();
        assert!(n_susp > 0);
        assert_eq!(alerted.len(), n_susp);
        assert!(alerted.iter().all(|t| t.label.is_suspicious()));
    }

    #[test]
    fn calibration_hits_target() {
        let txns = generate_dataset(&small()).unwrap();
        let cal = calibrate_rules(&txns, &RuleSet::default(), 0.9).unwrap();
        assert!((cal.achieved_fp_rate - 0.9).abs() <= ALERT_RATE_TOLERANCE);
        let err = calibrate_rules(&txns, &RuleSet::default(), 0.05).unwrap_err();
        assert!(matches!(err, Error::UnattainableAlertRate { .. }));
    }

    #[test]
    fn rules_need_one_enabled() {
        let rules = RuleSet {
            amount_threshold: None,
            velocity_threshold: None,
            structuring_band: None,
            structuring_min_count: 2,
        };
        assert!(rules.validate().is_err());
    }
}

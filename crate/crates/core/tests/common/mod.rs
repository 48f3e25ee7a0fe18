#![allow(dead_code)]

use aml_triage::frame::{FeatureFrame, Provenance, RowKey};
use aml_triage::graph::{EdgeEvent, EdgeLabel, GraphSnapshot, Replay, WindowConfig};
use aml_triage::ingest::{AccountDayRecord, AccountType, Day, Label, Transaction};
use aml_triage::model::{GbdtParams, GlmParams, ModelParams, RfParams};
use aml_triage::profiles::{Aggregation, CompareOp, Direction, ProfileSpec};
use aml_triage::rng;
use chrono::{DateTime, Duration, Utc};
use rand::Rng;

pub const WINDOWS: [u32; 6] = [0, 1, 7, 30, 60, 90];

/// Random event stream with unique (src, dst, day) triples.
pub fn random_events(seed: u64, max_events: usize, n_days: Day, n_nodes: usize) -> Vec<EdgeEvent> {
    let mut r = rng::stream(seed, &[]);
    let n = r.random_range(1..=max_events);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = r.random_range(0..n_nodes);
        let d = r.random_range(0..n_nodes);
        let day = r.random_range(0..n_days);
        if s == d || !seen.insert((s, d, day)) {
            continue;
        }
        out.push(EdgeEvent {
            src: format!("N{s}"),
            dst: format!("N{d}"),
            day,
            amount: (r.random_range(1.0..5000.0f64) * 100.0).round() / 100.0,
            label: if r.random_bool(0.2) {
                EdgeLabel::Suspicious
            } else {
                EdgeLabel::Legitimate
            },
        });
    }
    out
}

/// Replay the stream and compare with a rebuild at every day.
/// Returns a description of the first mismatch.
pub fn check_equivalence(events: &[EdgeEvent], config: WindowConfig, n_days: Day) -> Result<(), String> {
    let mut replay = Replay::new(events, config).map_err(|e| e.to_string())?;
    for day in 0..n_days {
        let inc = replay.step().map_err(|e| e.to_string())?;
        let scratch = GraphSnapshot::build_from_scratch(events, config, day).map_err(|e| e.to_string())?;
        if inc != &scratch {
            return Err(format!("snapshots differ on day {day} for {config:?}"));
        }
        if inc.cached_degrees() != inc.recount() {
            return Err(format!("cached degrees stale on day {day} for {config:?}"));
        }
    }
    Ok(())
}


/// Minimal record carrying only identity and label.
pub fn record(account: &str, day: Day, suspicious: bool) -> AccountDayRecord {
    AccountDayRecord {
        account_id: account.to_string(),
        day,
        account_type: AccountType::Internal,
        total_sent: 0.0,
        total_received: 0.0,
        sent_count: 0,
        received_count: 0,
        sent_min: 0.0,
        sent_max: 0.0,
        received_min: 0.0,
        received_max: 0.0,
        counterparties: Default::default(),
        label: Label::from_bit(suspicious),
    }
}

pub fn legit(src: &str, dst: &str, day: Day) -> EdgeEvent {
    EdgeEvent {
        src: src.into(),
        dst: dst.into(),
        day,
        amount: 1.0,
        label: EdgeLabel::Legitimate,
    }
}

/// Target `T` at the centre of `I` (illicit before day 5) and `L1..L3`.
pub fn star() -> (GraphSnapshot, Vec<AccountDayRecord>) {
    let events: Vec<EdgeEvent> = ["I", "L1", "L2", "L3"].iter().map(|l| legit("T", l, 4)).collect();
    let g = GraphSnapshot::build_from_scratch(&events, WindowConfig::default(), 5).unwrap();
    let records = vec![record("I", 2, true), record("L1", 2, false), record("T", 2, false)];
    (g, records)
}

/// Recall at `max_fpr` by trying every distinct score as a threshold, plus
/// the empty prediction.
pub fn exhaustive_recall(scores: &[f64], labels: &[bool], max_fpr: f64) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    let mut best = 0.0f64;
    for &t in scores {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        if fp as f64 / neg as f64 <= max_fpr {
            best = best.max(tp as f64 / pos as f64);
        }
    }
    best
}

/// Random two-class scoring instance with at most `max_rows` rows. Scores are
/// drawn from a few levels so ties are common; some instances are all-tied.
pub fn random_instance(seed: u64, max_rows: usize) -> (Vec<f64>, Vec<bool>) {
    let mut r = rng::stream(seed, &[]);
    let n = r.random_range(2..=max_rows);
    let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores: Vec<f64> = match r.random_range(0..4) {
        0 => vec![0.5; n],
        1 => (0..n).map(|_| f64::from(r.random_range(0..5u8))).collect(),
        2 => (0..n).map(|i| if labels[i] { 1.0 } else { 0.0 }).collect(),
        _ => (0..n).map(|_| r.random::<f64>()).collect(),
    };
    (scores, labels)
}

pub fn random_txns(seed: u64, n: usize, n_accounts: usize, n_days: i64) -> Vec<Transaction> {
    let mut r = rng::stream(seed, &[]);
    let start = DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").unwrap().with_timezone(&Utc);
    (0..n)
        .map(|i| {
            let s = r.random_range(0..n_accounts);
            let mut d = r.random_range(0..n_accounts);
            if d == s {
                d = (d + 1) % n_accounts;
            }
            Transaction {
                txn_id: format!("t{i:06}"),
                timestamp: start + Duration::days(r.random_range(0..n_days)) + Duration::seconds(r.random_range(0..86_400)),
                sender_id: format!("A{s:03}"),
                receiver_id: format!("A{d:03}"),
                amount: (r.random_range(1.0..20_000.0f64) * 100.0).round() / 100.0,
                sender_type: AccountType::Internal,
                receiver_type: AccountType::Internal,
                label: Label::from_bit(r.random_bool(0.05)),
            }
        })
        .collect()
}

/// Recompute one base aggregate directly from transactions.
pub fn naive_base(txns: &[Transaction], account: &str, day: Day, dir: Direction, window: u32, agg: Aggregation) -> f64 {
    let origin = txns.iter().map(|t| t.date()).min().unwrap();
    let amounts: Vec<f64> = txns
        .iter()
        .filter(|t| match dir {
            Direction::Sent => t.sender_id == account,
            Direction::Received => t.receiver_id == account,
        })
        .filter(|t| {
            let d = (t.date() - origin).num_days();
            d <= i64::from(day) && d > i64::from(day) - i64::from(window)
        })
        .map(|t| t.amount)
        .collect();
    if amounts.is_empty() {
        return 0.0;
    }
    match agg {
        Aggregation::Sum => amounts.iter().sum(),
        Aggregation::Count => amounts.len() as f64,
        Aggregation::Mean => amounts.iter().sum::<f64>() / amounts.len() as f64,
        Aggregation::Min => amounts.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Max => amounts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn naive(txns: &[Transaction], account: &str, day: Day, spec: &ProfileSpec) -> f64 {
    let short = naive_base(txns, account, day, spec.direction, spec.window_days, spec.agg);
    let Some(c) = spec.comparison else {
        return short;
    };
    let long = naive_base(txns, account, day, spec.direction, c.other_window_days, spec.agg);
    match c.op {
        CompareOp::Difference => short - long,
        CompareOp::Ratio if long != 0.0 => short / long,
        CompareOp::Ratio if short == 0.0 => 1.0,
        CompareOp::Ratio => 1e6f64.copysign(short),
    }
}

pub fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

pub fn frame(cols: &[(&str, Vec<f64>)], labels: &[bool]) -> FeatureFrame {
    let keys = (0..labels.len())
        .map(|i| RowKey {
            account_id: format!("a{i}"),
            day: 0,
        })
        .collect();
    let mut f = FeatureFrame::new(keys, labels.iter().map(|&b| Label::from_bit(b)).collect()).unwrap();
    for (name, values) in cols {
        f.push(*name, Provenance::Profile, values.clone()).unwrap();
    }
    f
}

/// Noisy labels driven by `prof_x0` and `prof_x1`; `prof_noise` is unrelated.
pub fn toy(n: usize, seed: u64) -> FeatureFrame {
    let mut r = rng::stream(seed, &[]);
    let mut x0 = Vec::new();
    let mut x1 = Vec::new();
    let mut noise = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let a: f64 = r.random_range(-3.0..3.0);
        let b: f64 = r.random_range(-3.0..3.0);
        let p = 1.0 / (1.0 + (-(1.5 * a + 0.7 * b - 1.0)).exp());
        x0.push(a);
        x1.push(b);
        noise.push(r.random_range(0.0..1.0));
        y.push(r.random_bool(p));
    }
    frame(&[("prof_x0", x0), ("prof_x1", x1), ("prof_noise", noise)], &y)
}

pub fn gbdt() -> ModelParams {
    ModelParams::Gbdt(GbdtParams {
        num_leaves: 200,
        min_data_in_leaf: 100,
        learning_rate: 0.09,
        n_rounds: 50,
    })
}

pub fn rf() -> ModelParams {
    ModelParams::Rf(RfParams {
        max_depth: 12,
        n_trees: 100,
        min_instances_split: 20,
    })
}

pub fn glm(standardize: bool) -> ModelParams {
    ModelParams::Glm(GlmParams {
        alpha: 0.05,
        standardize_numericals: standardize,
    })
}

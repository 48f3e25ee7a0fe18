//! Dynamic directed transaction graph with label-dependent sliding windows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{day_index, origin_date, Day, Transaction};

pub const MAX_WINDOW_DAYS: u32 = 90;
pub const DEFAULT_WINDOW_DAYS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    Legitimate,
    Suspicious,
    Unknown,
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeLabel::Legitimate => "legitimate",
            EdgeLabel::Suspicious => "suspicious",
            EdgeLabel::Unknown => "unknown",
        })
    }
}

/// Daily aggregate of the money sent from `src` to `dst`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub src: String,
    pub dst: String,
    pub day: Day,
    pub amount: f64,
    pub label: EdgeLabel,
}

/// One event per ordered pair and day; suspicious if any transaction is.
pub fn edge_events(txns: &[Transaction]) -> Vec<EdgeEvent> {
    let Some(origin) = origin_date(txns) else {
        return Vec::new();
    };
    let mut agg: BTreeMap<(Day, &str, &str), (f64, bool)> = BTreeMap::new();
    for t in txns {
        let e = agg
            .entry((day_index(origin, t.date()), &t.sender_id, &t.receiver_id))
            .or_insert((0.0, false));
        e.0 += t.amount;
        e.1 |= t.label.is_suspicious();
    }
    agg.into_iter()
        .map(|((day, src, dst), (amount, suspicious))| EdgeEvent {
            src: src.to_string(),
            dst: dst.to_string(),
            day,
            amount,
            label: if suspicious {
                EdgeLabel::Suspicious
            } else {
                EdgeLabel::Legitimate
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub twl_days: u32,
    pub tws_days: u32,
    pub label_delay_days: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            twl_days: DEFAULT_WINDOW_DAYS,
            tws_days: DEFAULT_WINDOW_DAYS,
            label_delay_days: 0,
        }
    }
}

impl WindowConfig {
    pub fn new(twl_days: u32, tws_days: u32, label_delay_days: u32) -> Result<Self> {
        let c = WindowConfig {
            twl_days,
            tws_days,
            label_delay_days,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("twl_days", self.twl_days), ("tws_days", self.tws_days)] {
            if w > MAX_WINDOW_DAYS {
                return Err(Error::Config(format!("{name} = {w} exceeds {MAX_WINDOW_DAYS}")));
            }
        }
        if self.label_delay_days > 0 && self.twl_days < self.label_delay_days {
            return Err(Error::Config(format!(
                "twl_days ({}) must be at least label_delay_days ({})",
                self.twl_days, self.label_delay_days
            )));
        }
        Ok(())
    }

    /// Whether the true label of an event from `day` is visible on `as_of`.
    pub fn label_known(&self, day: Day, as_of: Day) -> bool {
        as_of - day > self.label_delay_days
    }

    pub fn window(&self, label: EdgeLabel) -> u32 {
        match label {
            EdgeLabel::Suspicious => self.tws_days,
            EdgeLabel::Legitimate | EdgeLabel::Unknown => self.twl_days,
        }
    }

    pub fn retains(&self, label: EdgeLabel, day: Day, as_of: Day) -> bool {
        day <= as_of && as_of - day < self.window(label)
    }
}

type Name = Arc<str>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub src: Name,
    pub dst: Name,
    pub day: Day,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeData {
    pub amount: f64,
    pub label: EdgeLabel,
}

/// Cached per-node adjacency and degrees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeState {
    /// Outgoing events keyed by (day, receiver).
    outgoing: BTreeMap<(Day, Name), f64>,
    /// Incoming events keyed by (day, sender).
    incoming: BTreeMap<(Day, Name), f64>,
    /// Distinct successors with event multiplicity.
    successors: BTreeMap<Name, u32>,
    predecessors: BTreeMap<Name, u32>,
    weighted_in: f64,
    weighted_out: f64,
}

impl NodeState {
    pub fn in_degree(&self) -> usize {
        self.incoming.len()
    }

    pub fn out_degree(&self) -> usize {
        self.outgoing.len()
    }

    pub fn weighted_in(&self) -> f64 {
        self.weighted_in
    }

    pub fn weighted_out(&self) -> f64 {
        self.weighted_out
    }

    pub fn successors(&self) -> impl Iterator<Item = &str> {
        self.successors.keys().map(|k| &**k)
    }

    pub fn predecessors(&self) -> impl Iterator<Item = &str> {
        self.predecessors.keys().map(|k| &**k)
    }

    fn is_isolated(&self) -> bool {
        self.incoming.is_empty() && self.outgoing.is_empty()
    }

    // sums in key order so incremental and rebuilt graphs agree bit for bit
    fn refresh_weights(&mut self) {
        self.weighted_in = self.incoming.values().sum();
        self.weighted_out = self.outgoing.values().sum();
    }
}

#[derive(Debug, Clone)]
pub struct GraphSnapshot {
    config: WindowConfig,
    as_of: Option<Day>,
    edges: BTreeMap<EdgeKey, EdgeData>,
    by_day: BTreeMap<Day, BTreeSet<EdgeKey>>,
    nodes: BTreeMap<Name, NodeState>,
    names: BTreeSet<Name>,
    /// Nodes whose weighted degrees need re-summing before the next read.
    dirty: BTreeSet<Name>,
}

// the interner may remember ids of dropped nodes, so it is not compared
impl PartialEq for GraphSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.as_of == other.as_of
            && self.edges == other.edges
            && self.by_day == other.by_day
            && self.nodes == other.nodes
    }
}

impl GraphSnapshot {
    pub fn new(config: WindowConfig) -> Result<Self> {
        config.validate()?;
        Ok(GraphSnapshot {
            config,
            as_of: None,
            edges: BTreeMap::new(),
            by_day: BTreeMap::new(),
            nodes: BTreeMap::new(),
            names: BTreeSet::new(),
            dirty: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn as_of(&self) -> Option<Day> {
        self.as_of
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &str) -> Option<&NodeState> {
        self.nodes.get(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(|k| &**k)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, &EdgeData)> {
        self.edges.iter()
    }

    /// Distinct neighbours in either direction, sorted by id.
    pub fn undirected_neighbours(&self, id: &str) -> Vec<&str> {
        let Some(n) = self.nodes.get(id) else {
            return Vec::new();
        };
        let mut out: Vec<&str> = n.successors().chain(n.predecessors()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn intern(&mut self, s: &str) -> Name {
        if let Some(n) = self.names.get(s) {
            return n.clone();
        }
        let n: Name = Arc::from(s);
        self.names.insert(n.clone());
        n
    }

    fn insert(&mut self, e: &EdgeEvent, label: EdgeLabel) {
        let key = EdgeKey {
            src: self.intern(&e.src),
            dst: self.intern(&e.dst),
            day: e.day,
        };
        let data = EdgeData {
            amount: e.amount,
            label,
        };
        if let Some(existing) = self.edges.get_mut(&key) {
            *existing = data;
            return;
        }
        self.edges.insert(key.clone(), data);
        self.by_day.entry(key.day).or_default().insert(key.clone());
        let src = self.nodes.entry(key.src.clone()).or_default();
        src.outgoing.insert((key.day, key.dst.clone()), e.amount);
        *src.successors.entry(key.dst.clone()).or_default() += 1;
        let dst = self.nodes.entry(key.dst.clone()).or_default();
        dst.incoming.insert((key.day, key.src.clone()), e.amount);
        *dst.predecessors.entry(key.src.clone()).or_default() += 1;
        self.dirty.insert(key.src);
        self.dirty.insert(key.dst);
    }

    /// Re-sum weighted degrees of touched nodes in key order, so incremental
    /// and rebuilt snapshots agree to the bit.
    fn settle(&mut self) {
        for name in std::mem::take(&mut self.dirty) {
            if let Some(state) = self.nodes.get_mut(&name) {
                state.refresh_weights();
            }
        }
    }

    fn remove(&mut self, key: &EdgeKey) {
        if self.edges.remove(key).is_none() {
            return;
        }
        if let Some(bucket) = self.by_day.get_mut(&key.day) {
            bucket.remove(key);
            if bucket.is_empty() {
                self.by_day.remove(&key.day);
            }
        }
        fn drop_neighbour(map: &mut BTreeMap<Name, u32>, n: &Name) {
            if let Some(c) = map.get_mut(n) {
                *c -= 1;
                if *c == 0 {
                    map.remove(n);
                }
            }
        }
        for (node, outgoing) in [(&key.src, true), (&key.dst, false)] {
            let state = self.nodes.get_mut(node).expect("edge endpoint is a node");
            if outgoing {
                state.outgoing.remove(&(key.day, key.dst.clone()));
                drop_neighbour(&mut state.successors, &key.dst);
            } else {
                state.incoming.remove(&(key.day, key.src.clone()));
                drop_neighbour(&mut state.predecessors, &key.src);
            }
            if state.is_isolated() {
                self.nodes.remove(node);
            } else {
                self.dirty.insert(node.clone());
            }
        }
    }

    /// Drop every retained edge whose window has passed.
    fn expire(&mut self, as_of: Day) {
        let shortest = self.config.twl_days.min(self.config.tws_days);
        let Some(cutoff) = as_of.checked_sub(shortest) else {
            return;
        };
        let stale: Vec<EdgeKey> = self
            .by_day
            .range(..=cutoff)
            .flat_map(|(_, keys)| keys.iter())
            .filter(|k| !self.config.retains(self.edges[*k].label, k.day, as_of))
            .cloned()
            .collect();
        for k in &stale {
            self.remove(k);
        }
    }

    /// Move to day `day`, adding that day's events (label hidden) and
    /// revealing the true labels in `label_updates`.
    pub fn advance_day(&mut self, day: Day, new_events: &[EdgeEvent], label_updates: &[EdgeEvent]) -> Result<()> {
        let expected = self.as_of.map_or(0, |d| d + 1);
        if day != expected {
            return Err(Error::NonMonotonicDay {
                as_of: self.as_of,
                got: day,
            });
        }
        let mut seen = BTreeSet::new();
        for e in new_events {
            if e.day != day {
                return Err(Error::InvalidInput(format!(
                    "event {}->{} dated day {} while advancing to day {day}",
                    e.src, e.dst, e.day
                )));
            }
            if !seen.insert((&e.src, &e.dst)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate event {}->{} on day {day}",
                    e.src, e.dst
                )));
            }
        }
        for u in label_updates {
            if u.day > day || !self.config.label_known(u.day, day) {
                return Err(Error::InvalidInput(format!(
                    "label for {}->{} on day {} is not yet due on day {day}",
                    u.src, u.dst, u.day
                )));
            }
        }
        self.as_of = Some(day);
        for u in label_updates {
            if self.config.retains(u.label, u.day, day) {
                self.insert(u, u.label);
            } else if let Some(key) = self.key_of(u) {
                self.remove(&key);
            }
        }
        if self.config.retains(EdgeLabel::Unknown, day, day) {
            for e in new_events {
                self.insert(e, EdgeLabel::Unknown);
            }
        }
        self.expire(day);
        self.settle();
        Ok(())
    }

    fn key_of(&self, e: &EdgeEvent) -> Option<EdgeKey> {
        Some(EdgeKey {
            src: self.names.get(e.src.as_str())?.clone(),
            dst: self.names.get(e.dst.as_str())?.clone(),
            day: e.day,
        })
    }

    /// Reference construction directly from all events.
    pub fn build_from_scratch(events: &[EdgeEvent], config: WindowConfig, as_of: Day) -> Result<Self> {
        let mut g = GraphSnapshot::new(config)?;
        g.as_of = Some(as_of);
        for e in events.iter().filter(|e| e.day <= as_of) {
            let label = if config.label_known(e.day, as_of) {
                e.label
            } else {
                EdgeLabel::Unknown
            };
            if config.retains(label, e.day, as_of) {
                g.insert(e, label);
            }
        }
        g.settle();
        Ok(g)
    }

    /// Degrees recounted from the edge set, for checking the caches.
    pub fn recount(&self) -> BTreeMap<String, (usize, usize, f64, f64)> {
        type Side<'a> = Vec<(Day, &'a str, f64)>;
        let mut tally: BTreeMap<&str, (Side, Side)> = BTreeMap::new();
        for (k, d) in &self.edges {
            tally.entry(&k.src).or_default().1.push((k.day, &k.dst, d.amount));
            tally.entry(&k.dst).or_default().0.push((k.day, &k.src, d.amount));
        }
        let sum = |list: &mut Side| {
            list.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
            list.iter().map(|x| x.2).sum::<f64>()
        };
        tally
            .into_iter()
            .map(|(node, (mut incoming, mut outgoing))| {
                let counts = (incoming.len(), outgoing.len());
                (node.to_string(), (counts.0, counts.1, sum(&mut incoming), sum(&mut outgoing)))
            })
            .collect()
    }

    /// Cached degrees in the same shape as [`recount`](Self::recount).
    pub fn cached_degrees(&self) -> BTreeMap<String, (usize, usize, f64, f64)> {
        self.nodes
            .iter()
            .map(|(k, n)| {
                (
                    k.to_string(),
                    (n.in_degree(), n.out_degree(), n.weighted_in, n.weighted_out),
                )
            })
            .collect()
    }

    pub fn write_edge_list<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["src", "dst", "day", "amount", "label"])?;
        for (k, d) in &self.edges {
            w.write_record([
                k.src.to_string(),
                k.dst.to_string(),
                k.day.to_string(),
                d.amount.to_string(),
                d.label.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("edge list", e))?;
        Ok(())
    }
}

/// Replays a full event history one day at a time, revealing labels once
/// the configured delay has passed.
pub struct Replay {
    by_day: BTreeMap<Day, Vec<EdgeEvent>>,
    snapshot: GraphSnapshot,
}

impl Replay {
    pub fn new(events: &[EdgeEvent], config: WindowConfig) -> Result<Self> {
        let mut by_day: BTreeMap<Day, Vec<EdgeEvent>> = BTreeMap::new();
        for e in events {
            by_day.entry(e.day).or_default().push(e.clone());
        }
        Ok(Replay {
            by_day,
            snapshot: GraphSnapshot::new(config)?,
        })
    }

    pub fn snapshot(&self) -> &GraphSnapshot {
        &self.snapshot
    }

    /// Advance one day and return the new snapshot.
    pub fn step(&mut self) -> Result<&GraphSnapshot> {
        let day = self.snapshot.as_of().map_or(0, |d| d + 1);
        let delay = self.snapshot.config().label_delay_days;
        let revealed = day
            .checked_sub(delay + 1)
            .and_then(|d| self.by_day.get(&d))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let new = self.by_day.get(&day).map(Vec::as_slice).unwrap_or(&[]);
        self.snapshot.advance_day(day, new, revealed)?;
        Ok(&self.snapshot)
    }

    pub fn advance_to(&mut self, day: Day) -> Result<&GraphSnapshot> {
        while self.snapshot.as_of().is_none_or(|d| d < day) {
            self.step()?;
        }
        Ok(&self.snapshot)
    }
}

pub const DEGREE_FEATURES: usize = 14;

/// Column names of [`degree_features`]: unweighted then weighted.
pub fn degree_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(2 * DEGREE_FEATURES);
    for w in ["", "w_"] {
        names.push(format!("deg_{w}in"));
        names.push(format!("deg_{w}out"));
        for side in ["succ", "pred"] {
            for dir in ["in", "out"] {
                for stat in ["mean", "min", "max"] {
                    names.push(format!("deg_{w}{side}_{dir}_{stat}"));
                }
            }
        }
    }
    names
}

fn summarize(values: &[f64], out: &mut Vec<f64>) {
    if values.is_empty() {
        out.extend([0.0; 3]);
        return;
    }
    out.push(values.iter().sum::<f64>() / values.len() as f64);
    out.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    out.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
}

/// Degree features of `target` in the order of [`degree_feature_names`].
/// Neighbour statistics are taken over distinct neighbours.
pub fn degree_features(g: &GraphSnapshot, target: &str) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * DEGREE_FEATURES);
    let Some(node) = g.node(target) else {
        return vec![0.0; 2 * DEGREE_FEATURES];
    };
    type Measure = fn(&NodeState) -> (f64, f64);
    let measures: [Measure; 2] = [
        |n| (n.in_degree() as f64, n.out_degree() as f64),
        |n| (n.weighted_in(), n.weighted_out()),
    ];
    for measure in measures {
        let (i, o) = measure(node);
        out.push(i);
        out.push(o);
        let sides: [Vec<&str>; 2] = [node.successors().collect(), node.predecessors().collect()];
        for side in sides {
            let (ins, outs): (Vec<f64>, Vec<f64>) = side
                .into_iter()
                .map(|n| measure(g.node(n).expect("neighbour is a node")))
                .unzip();
            summarize(&ins, &mut out);
            summarize(&outs, &mut out);
        }
    }
    out
}

//! Transaction ingestion, daily account aggregation, label inference and
//! temporal splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRANSACTION_HEADER: [&str; 8] = [
    "txn_id",
    "timestamp",
    "sender_id",
    "receiver_id",
    "amount",
    "sender_type",
    "receiver_type",
    "label",
];

/// Integer day index counted from the dataset's first calendar date.
pub type Day = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountType {
    Internal,
    External,
}

impl AccountType {
    /// Binary encoding used as a model feature: external 0, internal 1.
    pub fn as_feature(self) -> f64 {
        match self {
            AccountType::Internal => 1.0,
            AccountType::External => 0.0,
        }
    }
}

impl fmt::Display for AccountType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccountType::Internal => "internal",
            AccountType::External => "external",
        })
    }
}

impl FromStr for AccountType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal" => Ok(AccountType::Internal),
            "external" => Ok(AccountType::External),
            other => Err(format!("expected `internal` or `external`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    #[default]
    Legitimate,
    Suspicious,
}

impl Label {
    pub fn is_suspicious(self) -> bool {
        self == Label::Suspicious
    }

    pub fn as_bit(self) -> u8 {
        self.is_suspicious() as u8
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Label::Suspicious
        } else {
            Label::Legitimate
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub txn_id: String,
    pub timestamp: DateTime<Utc>,
    pub sender_id: String,
    pub receiver_id: String,
    pub amount: f64,
    pub sender_type: AccountType,
    pub receiver_type: AccountType,
    pub label: Label,
}

impl Transaction {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// Per-account, per-day aggregate of transaction activity.
///
/// `sent_min`/`sent_max` (and the received pair) keep the extreme single
/// transaction amounts of the day so that windowed min/max profiles can be
/// computed from daily records without revisiting raw transactions. They are
/// 0 when the account has no transfers in that direction.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountDayRecord {
    pub account_id: String,
    pub day: Day,
    pub account_type: AccountType,
    pub total_sent: f64,
    pub total_received: f64,
    pub sent_count: u32,
    pub received_count: u32,
    pub sent_min: f64,
    pub sent_max: f64,
    pub received_min: f64,
    pub received_max: f64,
    pub counterparties: BTreeSet<String>,
    pub label: Label,
}

/// Temporal train/validation/test partition over day indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_days: Range<Day>,
    pub val_days: Range<Day>,
    pub test_days: Range<Day>,
    /// First day of the second training half.
    pub train_half_boundary: Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub fn part(&self, day: Day) -> Option<SplitPart> {
        if self.train_days.contains(&day) {
            Some(SplitPart::Train)
        } else if self.val_days.contains(&day) {
            Some(SplitPart::Validation)
        } else if self.test_days.contains(&day) {
            Some(SplitPart::Test)
        } else {
            None
        }
    }

    pub fn in_first_half(&self, day: Day) -> bool {
        self.train_days.contains(&day) && day < self.train_half_boundary
    }

    pub fn in_second_half(&self, day: Day) -> bool {
        self.train_days.contains(&day) && day >= self.train_half_boundary
    }
}

/// Parse a transactions CSV file. Rows come back sorted by timestamp, ties
/// broken by `txn_id`.
pub fn parse_transactions(path: impl AsRef<Path>) -> Result<Vec<Transaction>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(file)
}

pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<Transaction>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRANSACTION_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            field: "header".into(),
            message: format!("expected `{}`", TRANSACTION_HEADER.join(",")),
        });
    }

    let mut seen = HashSet::new();
    let mut account_types: HashMap<String, AccountType> = HashMap::new();
    let mut txns = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let err = |idx: usize, message: String| Error::Parse {
            line,
            field: TRANSACTION_HEADER[idx].to_string(),
            message,
        };
        if row.len() != TRANSACTION_HEADER.len() {
            return Err(Error::Parse {
                line,
                field: "row".into(),
                message: format!("expected {} fields, got {}", TRANSACTION_HEADER.len(), row.len()),
            });
        }

        let txn_id = field(0).to_string();
        if txn_id.is_empty() {
            return Err(err(0, "empty".into()));
        }
        let timestamp = DateTime::parse_from_rfc3339(field(1))
            .map_err(|e| err(1, e.to_string()))?
            .with_timezone(&Utc);
        let sender_id = field(2).to_string();
        let receiver_id = field(3).to_string();
        if sender_id.is_empty() {
            return Err(err(2, "empty".into()));
        }
        if receiver_id.is_empty() {
            return Err(err(3, "empty".into()));
        }
        if sender_id == receiver_id {
            return Err(err(3, "receiver equals sender".into()));
        }
        let amount: f64 = field(4).parse().map_err(|_| err(4, format!("not a number: `{}`", field(4))))?;
        if !amount.is_finite() || amount <= 0.0 {
            return Err(err(4, format!("amount must be positive, got `{}`", field(4))));
        }
        let sender_type: AccountType = field(5).parse().map_err(|e| err(5, e))?;
        let receiver_type: AccountType = field(6).parse().map_err(|e| err(6, e))?;
        if sender_type == AccountType::External && receiver_type == AccountType::External {
            return Err(err(6, "at least one endpoint must be internal".into()));
        }
        let label = match field(7) {
            "0" => Label::Legitimate,
            "1" => Label::Suspicious,
            other => return Err(err(7, format!("expected 0 or 1, got `{other}`"))),
        };
        if !seen.insert(txn_id.clone()) {
            return Err(Error::DuplicateTransaction { line, txn_id });
        }
        for (id, ty) in [(&sender_id, sender_type), (&receiver_id, receiver_type)] {
            match account_types.get(id) {
                Some(&known) if known != ty => {
                    return Err(Error::ConflictingAccountType { account: id.clone() })
                }
                Some(_) => {}
                None => {
                    account_types.insert(id.clone(), ty);
                }
            }
        }
        txns.push(Transaction {
            txn_id,
            timestamp,
            sender_id,
            receiver_id,
            amount,
            sender_type,
            receiver_type,
            label,
        });
    }
    sort_transactions(&mut txns);
    Ok(txns)
}

pub fn sort_transactions(txns: &mut [Transaction]) {
    txns.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.txn_id.cmp(&b.txn_id)));
}

pub fn write_transactions<W: Write>(writer: W, txns: &[Transaction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRANSACTION_HEADER)?;
    for t in txns {
        w.write_record([
            t.txn_id.as_str(),
            &t.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            &t.sender_id,
            &t.receiver_id,
            &t.amount.to_string(),
            &t.sender_type.to_string(),
            &t.receiver_type.to_string(),
            if t.label.is_suspicious() { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<transactions>", e))?;
    Ok(())
}

/// Calendar date of day 0: the earliest transaction's UTC date.
pub fn origin_date(txns: &[Transaction]) -> Option<NaiveDate> {
    txns.iter().map(Transaction::date).min()
}

pub fn day_index(origin: NaiveDate, date: NaiveDate) -> Day {
    (date - origin).num_days() as Day
}

fn new_record(account_id: &str, day: Day, account_type: AccountType) -> AccountDayRecord {
    AccountDayRecord {
        account_id: account_id.to_string(),
        day,
        account_type,
        total_sent: 0.0,
        total_received: 0.0,
        sent_count: 0,
        received_count: 0,
        sent_min: 0.0,
        sent_max: 0.0,
        received_min: 0.0,
        received_max: 0.0,
        counterparties: BTreeSet::new(),
        label: Label::Legitimate,
    }
}

/// Aggregate transactions into one record per active (account, day), ordered
/// by day and then account id. Labels are left legitimate; see
/// [`infer_account_labels`].
pub fn aggregate_daily(txns: &[Transaction]) -> Vec<AccountDayRecord> {
    let Some(origin) = origin_date(txns) else {
        return Vec::new();
    };
    let mut by_key: BTreeMap<(Day, &str), AccountDayRecord> = BTreeMap::new();
    for t in txns {
        let day = day_index(origin, t.date());

        let s = by_key
            .entry((day, t.sender_id.as_str()))
            .or_insert_with(|| new_record(&t.sender_id, day, t.sender_type));
        if s.sent_count == 0 {
            s.sent_min = t.amount;
            s.sent_max = t.amount;
        } else {
            s.sent_min = s.sent_min.min(t.amount);
            s.sent_max = s.sent_max.max(t.amount);
        }
        s.total_sent += t.amount;
        s.sent_count += 1;
        s.counterparties.insert(t.receiver_id.clone());

        let r = by_key
            .entry((day, t.receiver_id.as_str()))
            .or_insert_with(|| new_record(&t.receiver_id, day, t.receiver_type));
        if r.received_count == 0 {
            r.received_min = t.amount;
            r.received_max = t.amount;
        } else {
            r.received_min = r.received_min.min(t.amount);
            r.received_max = r.received_max.max(t.amount);
        }
        r.total_received += t.amount;
        r.received_count += 1;
        r.counterparties.insert(t.sender_id.clone());
    }
    by_key.into_values().collect()
}

/// Mark an account suspicious on a day iff a suspicious transaction touches it
/// that day.
pub fn infer_account_labels(
    txns: &[Transaction],
    mut records: Vec<AccountDayRecord>,
) -> Vec<AccountDayRecord> {
    let Some(origin) = origin_date(txns) else {
        return records;
    };
    let mut flagged: HashSet<(&str, Day)> = HashSet::new();
    for t in txns.iter().filter(|t| t.label.is_suspicious()) {
        let day = day_index(origin, t.date());
        flagged.insert((t.sender_id.as_str(), day));
        flagged.insert((t.receiver_id.as_str(), day));
    }
    for rec in &mut records {
        rec.label = Label::from_bit(flagged.contains(&(rec.account_id.as_str(), rec.day)));
    }
    records
}

/// Aggregate and label in one pass.
pub fn build_account_days(txns: &[Transaction]) -> Vec<AccountDayRecord> {
    infer_account_labels(txns, aggregate_daily(txns))
}

pub const RECORD_HEADER: [&str; 13] = [
    "account_id",
    "day",
    "account_type",
    "total_sent",
    "total_received",
    "sent_count",
    "received_count",
    "sent_min",
    "sent_max",
    "received_min",
    "received_max",
    "counterparties",
    "label",
];

pub fn write_records<W: Write>(writer: W, records: &[AccountDayRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        let counterparties = r.counterparties.iter().map(String::as_str).collect::<Vec<_>>().join(";");
        w.write_record([
            r.account_id.clone(),
            r.day.to_string(),
            r.account_type.to_string(),
            r.total_sent.to_string(),
            r.total_received.to_string(),
            r.sent_count.to_string(),
            r.received_count.to_string(),
            r.sent_min.to_string(),
            r.sent_max.to_string(),
            r.received_min.to_string(),
            r.received_max.to_string(),
            counterparties,
            r.label.as_bit().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

/// Split days into train/validation/test so that cumulative event counts
/// land as close as possible to the requested fractions.
///
/// Boundaries sit on active-day edges. The train block must hold at least two
/// active days (so it can be halved) and validation and test at least one.
/// Among boundary pairs with equal total deviation the earliest wins.
pub fn temporal_split(records: &[AccountDayRecord], fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    let (f_train, f_val, f_test) = fractions;
    if [f_train, f_val, f_test].iter().any(|f| !(*f > 0.0 && *f < 1.0))
        || ((f_train + f_val + f_test) - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidInput(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut per_day: BTreeMap<Day, u64> = BTreeMap::new();
    for r in records {
        *per_day.entry(r.day).or_default() += 1;
    }
    let days: Vec<Day> = per_day.keys().copied().collect();
    let m = days.len();
    if m < 4 {
        return Err(Error::InvalidInput(format!(
            "temporal split needs at least 4 distinct days, got {m}"
        )));
    }
    let total = records.len() as f64;
    // cum[i] = fraction of events on the first i active days
    let mut cum = vec![0.0; m + 1];
    let mut running = 0u64;
    for (i, count) in per_day.values().enumerate() {
        running += count;
        cum[i + 1] = running as f64 / total;
    }

    let target_val_end = f_train + f_val;
    let mut best: Option<(f64, usize, usize)> = None;
    for b1 in 2..m - 1 {
        for b2 in b1 + 1..m {
            let dev = (cum[b1] - f_train).abs() + (cum[b2] - target_val_end).abs();
            if best.is_none_or(|(d, _, _)| dev < d) {
                best = Some((dev, b1, b2));
            }
        }
    }
    let (_, b1, b2) = best.expect("m >= 4 guarantees a candidate");

    let half_target = cum[b1] / 2.0;
    let h = (1..b1)
        .min_by(|&a, &b| {
            let da = (cum[a] - half_target).abs();
            let db = (cum[b] - half_target).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .expect("b1 >= 2");

    let first = days[0];
    let end = days[m - 1] + 1;
    Ok(DatasetSplit {
        train_days: first..days[b1],
        val_days: days[b1]..days[b2],
        test_days: days[b2]..end,
        train_half_boundary: days[h],
    })
}

//! Row-aligned feature matrix keyed by (account, day).

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Day, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Profile,
    Degree,
    Gw,
    Gwd,
}

impl Provenance {
    pub fn prefix(self) -> &'static str {
        match self {
            Provenance::Raw => "raw_",
            Provenance::Profile => "prof_",
            Provenance::Degree => "deg_",
            Provenance::Gw => "gw_",
            Provenance::Gwd => "gwd_",
        }
    }

    pub fn of_name(name: &str) -> Option<Provenance> {
        // gwd_ before gw_: the latter is a prefix of the former
        [
            Provenance::Raw,
            Provenance::Profile,
            Provenance::Degree,
            Provenance::Gwd,
            Provenance::Gw,
        ]
        .into_iter()
        .find(|p| name.starts_with(p.prefix()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub account_id: String,
    pub day: Day,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub provenance: Provenance,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureFrame {
    keys: Vec<RowKey>,
    labels: Vec<Label>,
    columns: Vec<Column>,
    index: HashMap<String, usize>,
}

impl FeatureFrame {
    pub fn new(keys: Vec<RowKey>, labels: Vec<Label>) -> Result<Self> {
        if keys.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} row keys but {} labels",
                keys.len(),
                labels.len()
            )));
        }
        Ok(FeatureFrame {
            keys,
            labels,
            columns: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn keys(&self) -> &[RowKey] {
        &self.keys
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label_bits(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.is_suspicious()).collect()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index.get(name).map(|&i| &self.columns[i])
    }

    pub fn has_provenance(&self, p: Provenance) -> bool {
        self.columns.iter().any(|c| c.provenance == p)
    }

    pub fn names_with(&self, provenances: &[Provenance]) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| provenances.contains(&c.provenance))
            .map(|c| c.name.clone())
            .collect()
    }

    /// Append a column. Names must be unique and every value finite.
    pub fn push(&mut self, name: impl Into<String>, provenance: Provenance, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_rows() {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate column `{name}`")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("column `{name}` row {pos}: non-finite value")));
        }
        self.index.insert(name.clone(), self.columns.len());
        self.columns.push(Column {
            name,
            provenance,
            values,
        });
        Ok(())
    }

    pub fn push_column(&mut self, column: Column) -> Result<()> {
        self.push(column.name, column.provenance, column.values)
    }

    /// Drop every column of the given provenance.
    pub fn without(&self, provenance: Provenance) -> FeatureFrame {
        let keep: Vec<String> = self
            .columns
            .iter()
            .filter(|c| c.provenance != provenance)
            .map(|c| c.name.clone())
            .collect();
        self.select_columns(&keep).expect("names come from this frame")
    }

    /// Frame with exactly these columns, in this order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureFrame> {
        let mut out = FeatureFrame::new(self.keys.clone(), self.labels.clone())?;
        for name in names {
            let col = self
                .column(name.as_ref())
                .ok_or_else(|| Error::InvalidInput(format!("no column `{}`", name.as_ref())))?;
            out.push_column(col.clone())?;
        }
        Ok(out)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureFrame {
        let mut out = FeatureFrame {
            keys: rows.iter().map(|&r| self.keys[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            columns: Vec::with_capacity(self.columns.len()),
            index: self.index.clone(),
        };
        for c in &self.columns {
            out.columns.push(Column {
                name: c.name.clone(),
                provenance: c.provenance,
                values: rows.iter().map(|&r| c.values[r]).collect(),
            });
        }
        out
    }

    pub fn filter_rows(&self, mut keep: impl FnMut(&RowKey) -> bool) -> FeatureFrame {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| keep(&self.keys[r])).collect();
        self.select_rows(&rows)
    }

    /// Columns of `other` appended to this frame; row keys must match.
    pub fn join(&self, other: &FeatureFrame) -> Result<FeatureFrame> {
        if self.keys != other.keys {
            return Err(Error::InvalidInput("cannot join frames with different row keys".into()));
        }
        let mut out = self.clone();
        for c in &other.columns {
            out.push_column(c.clone())?;
        }
        Ok(out)
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c.values[r]).collect()
    }

    /// CSV with header `account_id,day,<features...>,label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["account_id".to_string(), "day".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        header.push("label".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            record.clear();
            record.push(self.keys[r].account_id.clone());
            record.push(self.keys[r].day.to_string());
            record.extend(self.columns.iter().map(|c| c.values[r].to_string()));
            record.push(self.labels[r].as_bit().to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<frame>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureFrame> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let n = header.len();
        if n < 3 || &header[0] != "account_id" || &header[1] != "day" || &header[n - 1] != "label" {
            return Err(Error::Parse {
                line: 1,
                field: "header".into(),
                message: "expected `account_id,day,<features...>,label`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(2).take(n - 3).map(str::to_string).collect();
        let mut provenances = Vec::with_capacity(names.len());
        for name in &names {
            provenances.push(Provenance::of_name(name).ok_or_else(|| Error::Parse {
                line: 1,
                field: name.clone(),
                message: "unknown feature prefix".into(),
            })?);
        }
        let mut keys = Vec::new();
        let mut labels = Vec::new();
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let parse_err = |field: &str, message: String| Error::Parse {
                line,
                field: field.to_string(),
                message,
            };
            let day: Day = row[1].parse().map_err(|_| parse_err("day", format!("bad day `{}`", &row[1])))?;
            keys.push(RowKey {
                account_id: row[0].to_string(),
                day,
            });
            for (j, col) in values.iter_mut().enumerate() {
                let raw = &row[j + 2];
                col.push(raw.parse().map_err(|_| parse_err(&names[j], format!("not a number: `{raw}`")))?);
            }
            labels.push(match &row[n - 1] {
                "0" => Label::Legitimate,
                "1" => Label::Suspicious,
                other => return Err(parse_err("label", format!("expected 0 or 1, got `{other}`"))),
            });
        }
        let mut frame = FeatureFrame::new(keys, labels)?;
        for ((name, prov), vals) in names.into_iter().zip(provenances).zip(values) {
            frame.push(name, prov, vals)?;
        }
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> FeatureFrame {
        let keys = vec![
            RowKey { account_id: "A".into(), day: 0 },
            RowKey { account_id: "B".into(), day: 1 },
        ];
        let mut f = FeatureFrame::new(keys, vec![Label::Legitimate, Label::Suspicious]).unwrap();
        f.push("raw_x", Provenance::Raw, vec![1.5, -2.0]).unwrap();
        f.push("gwd_hit_rate", Provenance::Gwd, vec![0.1, 1e-17]).unwrap();
        f
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = frame();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("account_id,day,raw_x,gwd_hit_rate,label\n"));
        assert_eq!(FeatureFrame::read_csv(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        let mut f = frame();
        assert!(f.push("raw_x", Provenance::Raw, vec![0.0, 0.0]).is_err());
        assert!(f.push("raw_y", Provenance::Raw, vec![f64::NAN, 0.0]).is_err());
        assert!(f.push("raw_z", Provenance::Raw, vec![0.0]).is_err());
    }

    #[test]
    fn provenance_prefixes() {
        assert_eq!(Provenance::of_name("gwd_len_min"), Some(Provenance::Gwd));
        assert_eq!(Provenance::of_name("gw_len_min"), Some(Provenance::Gw));
        assert_eq!(Provenance::of_name("deg_w_in"), Some(Provenance::Degree));
        assert_eq!(Provenance::of_name("other"), None);
    }
}

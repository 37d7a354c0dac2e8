//! Raw interaction logs to a canonical `(user, item, timestamp)` table.
//!
//! All supported formats are read as implicit feedback: ratings and any other
//! payload columns are discarded. Raw user and item labels are remapped to
//! dense ids starting at 1, assigned in order of first appearance.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Interaction, ItemId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// `user::item::rating::timestamp` (or `user::item::timestamp`).
    #[serde(alias = "dat")]
    MovielensDat,
    Csv,
    Tsv,
    #[serde(alias = "jsonl")]
    JsonLines,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "movielens-dat" | "dat" => Ok(Format::MovielensDat),
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            "json-lines" | "jsonl" => Ok(Format::JsonLines),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::MovielensDat => "movielens-dat",
            Format::Csv => "csv",
            Format::Tsv => "tsv",
            Format::JsonLines => "json-lines",
        })
    }
}

/// Bijection between raw labels and dense ids `1..=len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelMap {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl LabelMap {
    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        self.labels.push(label.to_string());
        let id = self.labels.len() as u32;
        self.ids.insert(label.to_string(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        let idx = (id as usize).checked_sub(1)?;
        self.labels.get(idx).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels in id order (`labels()[i]` has id `i + 1`).
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut map = LabelMap::default();
        for label in labels {
            if map.ids.contains_key(&label) {
                return Err(Error::Format {
                    path: "id map".into(),
                    message: format!("duplicate label `{label}`"),
                });
            }
            map.intern(&label);
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMaps {
    pub users: LabelMap,
    pub items: LabelMap,
}

#[derive(Serialize, Deserialize)]
struct IdMapsFile {
    users: Vec<String>,
    items: Vec<String>,
}

impl IdMaps {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = IdMapsFile {
            users: self.users.labels.clone(),
            items: self.items.labels.clone(),
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let file: IdMapsFile = serde_json::from_reader(input)?;
        Ok(IdMaps {
            users: LabelMap::from_labels(file.users)?,
            items: LabelMap::from_labels(file.items)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Parsed {
    pub interactions: Vec<Interaction>,
    pub id_maps: IdMaps,
}

impl Parsed {
    pub fn records(&self) -> usize {
        self.interactions.len()
    }
}

struct Builder {
    interactions: Vec<Interaction>,
    maps: IdMaps,
}

impl Builder {
    fn new() -> Self {
        Builder {
            interactions: Vec::new(),
            maps: IdMaps::default(),
        }
    }

    fn push(&mut self, user: &str, item: &str, ts: &str, line: usize) -> Result<()> {
        let user = user.trim();
        let item = item.trim();
        if user.is_empty() || item.is_empty() {
            return Err(Error::parse(line, "empty user or item field"));
        }
        let timestamp = parse_timestamp(ts.trim()).map_err(|m| Error::parse(line, m))?;
        let user = UserId(self.maps.users.intern(user));
        let item = ItemId(self.maps.items.intern(item));
        self.interactions.push(Interaction { user, item, timestamp });
        Ok(())
    }

    fn finish(self) -> Result<Parsed> {
        if self.interactions.is_empty() {
            return Err(Error::NoRecords);
        }
        log::info!("parsed {} interaction records", self.interactions.len());
        Ok(Parsed {
            interactions: self.interactions,
            id_maps: self.maps,
        })
    }
}

fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    if let Ok(ts) = raw.parse::<i64>() {
        if ts < 0 {
            return Err(format!("negative timestamp {ts}"));
        }
        return Ok(ts);
    }
    match raw.parse::<f64>() {
        Ok(ts) if ts.is_finite() && ts >= 0.0 && ts < i64::MAX as f64 => Ok(ts.trunc() as i64),
        Ok(ts) => Err(format!("timestamp {ts} is not a finite non-negative number")),
        Err(_) => Err(format!("unparseable timestamp `{raw}`")),
    }
}

/// Parses an interaction log. Dense ids follow first appearance.
pub fn parse_interactions<R: Read>(source: R, format: Format) -> Result<Parsed> {
    match format {
        Format::MovielensDat => parse_dat(source),
        Format::Csv => parse_delimited(source, b','),
        Format::Tsv => parse_delimited(source, b'\t'),
        Format::JsonLines => parse_json_lines(source),
    }
}

fn parse_dat<R: Read>(source: R) -> Result<Parsed> {
    let mut builder = Builder::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        match fields.as_slice() {
            [user, item, _rating, ts] => builder.push(user, item, ts, line_no)?,
            [user, item, ts] => builder.push(user, item, ts, line_no)?,
            _ => {
                return Err(Error::parse(
                    line_no,
                    format!("expected 3 or 4 `::`-separated fields, found {}", fields.len()),
                ))
            }
        }
    }
    builder.finish()
}

fn parse_delimited<R: Read>(source: R, delimiter: u8) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::parse(1, format!("header is missing the `{name}` column")))
    };
    let (user_col, item_col, ts_col) = (column("user")?, column("item")?, column("timestamp")?);

    let mut builder = Builder::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        builder.push(&record[user_col], &record[item_col], &record[ts_col], line)?;
    }
    builder.finish()
}

fn json_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(Error::parse(
            line,
            format!("`{key}` must be a string or number, got {other}"),
        )),
        None => Err(Error::parse(line, format!("missing key `{key}`"))),
    }
}

fn parse_json_lines<R: Read>(source: R) -> Result<Parsed> {
    let mut builder = Builder::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::parse(line_no, "expected a JSON object"))?;
        let user = json_field(obj, "user", line_no)?;
        let item = json_field(obj, "item", line_no)?;
        let ts = json_field(obj, "timestamp", line_no)?;
        builder.push(&user, &item, &ts, line_no)?;
    }
    builder.finish()
}

/// Writes the canonical table: CSV with header `user,item,timestamp` and dense ids.
pub fn write_table<W: Write>(out: W, interactions: &[Interaction]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["user", "item", "timestamp"])?;
    for it in interactions {
        writer.write_record([it.user.0.to_string(), it.item.0.to_string(), it.timestamp.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a canonical table written by [`write_table`]; ids are taken as-is.
pub fn read_table<R: Read>(input: R) -> Result<Vec<Interaction>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| Error::parse(line, e.to_string()))?;
        if row.len() != 3 {
            return Err(Error::parse(line, format!("expected 3 columns, found {}", row.len())));
        }
        let id = |i: usize, what: &str| -> Result<u32> {
            match row[i].trim().parse::<u32>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(Error::parse(line, format!("invalid {what} id `{}`", &row[i]))),
            }
        };
        let timestamp = parse_timestamp(row[2].trim()).map_err(|m| Error::parse(line, m))?;
        out.push(Interaction {
            user: UserId(id(0, "user")?),
            item: ItemId(id(1, "item")?),
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(out)
}

/// Summary statistics in the layout of the usual dataset table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    /// interactions / users, rounded to 2 decimals.
    pub avg_sequence_length: f64,
    /// 100 * (1 - interactions / (users * items)), rounded to 2 decimals.
    pub sparsity_percent: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl DatasetStats {
    pub fn from_counts(num_users: usize, num_items: usize, num_interactions: usize) -> Result<Self> {
        if num_users == 0 || num_items == 0 || num_interactions == 0 {
            return Err(Error::Empty("dataset statistics need at least one interaction"));
        }
        let density = num_interactions as f64 / (num_users as f64 * num_items as f64);
        Ok(DatasetStats {
            num_users,
            num_items,
            num_interactions,
            avg_sequence_length: round2(num_interactions as f64 / num_users as f64),
            sparsity_percent: round2(100.0 * (1.0 - density)),
        })
    }
}

pub fn dataset_stats(interactions: &[Interaction]) -> Result<DatasetStats> {
    let users: HashSet<UserId> = interactions.iter().map(|i| i.user).collect();
    let items: HashSet<ItemId> = interactions.iter().map(|i| i.item).collect();
    DatasetStats::from_counts(users.len(), items.len(), interactions.len())
}

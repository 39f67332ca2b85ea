//! Publishable outputs: anonymized datasets and plot-ready CSV series.
//!
//! Addresses are replaced by `hex(SHA-256(salt || address))`. Without a salt
//! the hash of an IPv4 address can be reversed by enumerating all 2^32
//! candidates, so pass a salt whenever the dataset leaves your hands. The
//! salt itself is never written anywhere.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{Category, ComparisonOutcome};
use crate::ingest::DeviceRecord;
use crate::probe::ProbeOutcome;

pub const ANONYMIZED_KIND: &str = "anonymized";

static DOTTED_QUAD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})\b").unwrap());

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed summary: {0}")]
    Summary(String),
}

pub fn hash_address(address: &str, salt: Option<&str>) -> String {
    let mut hasher = Sha256::new();
    if let Some(salt) = salt {
        hasher.update(salt.as_bytes());
    }
    hasher.update(address.as_bytes());
    hex::encode(hasher.finalize())
}

/// True if `text` contains anything shaped like an IPv4 address.
pub fn contains_dotted_quad(text: &str) -> bool {
    DOTTED_QUAD.is_match(text)
}

/// Replaces every dotted quad in `text` with its hash.
pub fn redact_text(text: &str, salt: Option<&str>) -> String {
    DOTTED_QUAD
        .replace_all(text, |caps: &regex::Captures<'_>| hash_address(&caps[0], salt))
        .into_owned()
}

/// Anything whose serialized form names one host.
pub trait Addressed: Serialize {
    fn address(&self) -> Ipv4Addr;
}

impl Addressed for DeviceRecord {
    fn address(&self) -> Ipv4Addr {
        self.address
    }
}

impl Addressed for ProbeOutcome {
    fn address(&self) -> Ipv4Addr {
        self.target
    }
}

impl Addressed for ComparisonOutcome {
    fn address(&self) -> Ipv4Addr {
        self.record.address
    }
}

/// A record or outcome with its address replaced by a hash. All other
/// fields keep their original structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizedRecord {
    pub address_hash: String,
    #[serde(flatten)]
    pub fields: Map<String, Value>,
}

fn scrub(value: &mut Value, address: &str, salt: Option<&str>) {
    match value {
        Value::Object(map) => {
            map.retain(|key, v| !(matches!(key.as_str(), "address" | "target") && v.as_str() == Some(address)));
            for v in map.values_mut() {
                scrub(v, address, salt);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| scrub(v, address, salt)),
        Value::String(s) if contains_dotted_quad(s) => *s = redact_text(s, salt),
        _ => {}
    }
}

pub fn anonymize_one<T: Addressed>(item: &T, salt: Option<&str>) -> AnonymizedRecord {
    let address = item.address().to_string();
    let mut value = serde_json::to_value(item).expect("artifact types serialize to JSON");
    scrub(&mut value, &address, salt);
    let fields = match value {
        Value::Object(map) => map,
        other => Map::from_iter([("value".to_string(), other)]),
    };
    AnonymizedRecord {
        address_hash: hash_address(&address, salt),
        fields,
    }
}

pub fn anonymize<T: Addressed>(items: &[T], salt: Option<&str>) -> Vec<AnonymizedRecord> {
    items.iter().map(|item| anonymize_one(item, salt)).collect()
}

/// Ping TTL, hop count and reconstructed TTL, aligned by index and sorted
/// by reconstructed value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TtlSeries {
    pub ping_ttl: Vec<u8>,
    pub hop_count: Vec<u8>,
    pub reconstructed: Vec<u16>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    index: usize,
    ping_ttl: u8,
    hop_count: u8,
    reconstructed_ttl: u16,
}

impl TtlSeries {
    pub fn len(&self) -> usize {
        self.reconstructed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reconstructed.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        if self.is_empty() {
            w.write_record(["index", "ping_ttl", "hop_count", "reconstructed_ttl"])?;
        }
        for i in 0..self.len() {
            w.serialize(SeriesRow {
                index: i,
                ping_ttl: self.ping_ttl[i],
                hop_count: self.hop_count[i],
                reconstructed_ttl: self.reconstructed[i],
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let mut series = TtlSeries::default();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: SeriesRow = row?;
            series.ping_ttl.push(row.ping_ttl);
            series.hop_count.push(row.hop_count);
            series.reconstructed.push(row.reconstructed_ttl);
        }
        Ok(series)
    }
}

pub fn emit_sorted_ttl_series(outcomes: &[ComparisonOutcome], filter: &[Category]) -> TtlSeries {
    let mut points: Vec<(u16, u8, u8)> = outcomes
        .iter()
        .filter(|o| filter.contains(&o.category))
        .filter_map(|o| o.reconstructed())
        .map(|r| (r.value, r.ping_ttl, r.hop_count))
        .collect();
    points.sort_unstable();
    TtlSeries {
        ping_ttl: points.iter().map(|p| p.1).collect(),
        hop_count: points.iter().map(|p| p.2).collect(),
        reconstructed: points.iter().map(|p| p.0).collect(),
    }
}

/// Category counts per origin query. Rows are queries in sorted order,
/// columns follow [`Category::ALL`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategorySummary {
    pub rows: BTreeMap<String, [usize; 6]>,
}

impl CategorySummary {
    pub fn row_total(&self, query: &str) -> usize {
        self.rows.get(query).map_or(0, |r| r.iter().sum())
    }

    pub fn column_totals(&self) -> [usize; 6] {
        let mut totals = [0; 6];
        for row in self.rows.values() {
            for (t, n) in totals.iter_mut().zip(row) {
                *t += n;
            }
        }
        totals
    }

    pub fn grand_total(&self) -> usize {
        self.column_totals().iter().sum()
    }

    fn header() -> Vec<String> {
        let mut h = vec!["origin_query".to_string()];
        h.extend(Category::ALL.iter().map(|c| c.snake_name().to_string()));
        h.push("total".into());
        h
    }

    /// Writes one row per query followed by a `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ReportError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header())?;
        let mut emit = |label: &str, counts: &[usize; 6]| -> Result<(), csv::Error> {
            let mut rec = vec![label.to_string()];
            rec.extend(counts.iter().map(usize::to_string));
            rec.push(counts.iter().sum::<usize>().to_string());
            w.write_record(rec)
        };
        for (query, counts) in &self.rows {
            emit(query, counts)?;
        }
        emit("total", &self.column_totals())?;
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ReportError> {
        let mut reader = csv::Reader::from_reader(input);
        if reader.headers()?.iter().collect::<Vec<_>>() != Self::header() {
            return Err(ReportError::Summary("unexpected header".into()));
        }
        let mut summary = CategorySummary::default();
        let mut saw_total = false;
        for rec in reader.records() {
            let rec = rec?;
            let nums = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<usize>().map_err(|e| ReportError::Summary(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let counts: [usize; 6] = nums[..6].try_into().expect("header checked");
            if nums[6] != counts.iter().sum::<usize>() {
                return Err(ReportError::Summary(format!("row {:?} does not sum to its total", &rec[0])));
            }
            if saw_total {
                return Err(ReportError::Summary("rows after total".into()));
            }
            if &rec[0] == "total" {
                saw_total = true;
                if counts != summary.column_totals() {
                    return Err(ReportError::Summary("totals row disagrees with rows".into()));
                }
            } else {
                summary.rows.insert(rec[0].to_string(), counts);
            }
        }
        if !saw_total {
            return Err(ReportError::Summary("missing total row".into()));
        }
        Ok(summary)
    }
}

pub fn emit_category_summary(outcomes: &[ComparisonOutcome]) -> CategorySummary {
    let mut summary = CategorySummary::default();
    for o in outcomes {
        let col = Category::ALL.iter().position(|c| *c == o.category).expect("ALL lists every category");
        summary.rows.entry(o.record.origin_query.clone()).or_default()[col] += 1;
    }
    summary
}

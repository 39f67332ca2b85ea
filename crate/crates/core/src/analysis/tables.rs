//! Summary tables over comparison outcomes.
//!
//! Percentages are relative to the filtered total and rounded to two
//! decimals. Each table renders to CSV and parses back from it.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Category, ComparisonOutcome};

pub const UNKNOWN_PROVIDER: &str = "(unknown)";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("rules line {line}: {reason}")]
    Rules { line: usize, reason: String },
    #[error("reading rules: {0}")]
    Io(#[from] std::io::Error),
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        round2(count as f64 * 100.0 / total as f64)
    }
}

mod two_decimals {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:.2}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        text.trim().trim_end_matches('%').parse().map_err(serde::de::Error::custom)
    }
}

fn filtered<'a>(outcomes: &'a [ComparisonOutcome], filter: &'a [Category]) -> impl Iterator<Item = &'a ComparisonOutcome> {
    outcomes.iter().filter(move |o| filter.contains(&o.category))
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>, TableError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortRow {
    pub port: u16,
    pub count: usize,
    #[serde(with = "two_decimals")]
    pub percentage: f64,
}

impl PortRow {
    pub fn write_csv<W: Write>(rows: &[PortRow], out: W) -> Result<(), TableError> {
        write_rows(out, rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<PortRow>, TableError> {
        read_rows(input)
    }
}

/// Occurrences of each matched port among outcomes in `filter`, ascending
/// by port.
pub fn port_distribution(outcomes: &[ComparisonOutcome], filter: &[Category]) -> Vec<PortRow> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    let mut total = 0;
    for o in filtered(outcomes, filter) {
        *counts.entry(o.record.matched_port).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(port, count)| PortRow {
            port,
            count,
            percentage: percent(count, total),
        })
        .collect()
}

/// Ordered substring rules mapping organization strings to provider names.
/// The first rule whose pattern occurs in the lowercased org wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderRules {
    rules: Vec<(String, String)>,
}

impl Default for ProviderRules {
    fn default() -> Self {
        let rules = [
            ("amazon", "Amazon AWS"),
            ("digitalocean", "DigitalOcean"),
            ("google", "Google Cloud"),
            ("microsoft", "Microsoft Azure"),
            ("azure", "Microsoft Azure"),
            ("alibaba", "Alibaba Cloud"),
            ("tencent", "Tencent Cloud"),
            ("linode", "Linode Cloud"),
            ("vultr", "Vultr"),
            ("oracle", "Oracle"),
        ];
        ProviderRules {
            rules: rules.iter().map(|(p, b)| (p.to_string(), b.to_string())).collect(),
        }
    }
}

impl ProviderRules {
    /// Reads `pattern,Provider Name` lines; `#` comments and blank lines
    /// are ignored.
    pub fn load<R: BufRead>(input: R) -> Result<Self, TableError> {
        let mut rules = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (pattern, bucket) = trimmed.split_once(',').ok_or_else(|| TableError::Rules {
                line: idx + 1,
                reason: "expected pattern,provider".into(),
            })?;
            let (pattern, bucket) = (pattern.trim().to_lowercase(), bucket.trim().to_string());
            if pattern.is_empty() || bucket.is_empty() {
                return Err(TableError::Rules {
                    line: idx + 1,
                    reason: "empty pattern or provider".into(),
                });
            }
            rules.push((pattern, bucket));
        }
        Ok(ProviderRules { rules })
    }

    pub fn to_file_format(&self) -> String {
        self.rules.iter().map(|(p, b)| format!("{p},{b}\n")).collect()
    }

    pub fn bucket(&self, org: &str) -> String {
        let org = org.trim();
        if org.is_empty() {
            return UNKNOWN_PROVIDER.to_string();
        }
        let lower = org.to_lowercase();
        self.rules
            .iter()
            .find(|(pattern, _)| lower.contains(pattern.as_str()))
            .map(|(_, bucket)| bucket.clone())
            .unwrap_or_else(|| org.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRow {
    pub provider: String,
    pub count: usize,
    #[serde(with = "two_decimals")]
    pub percentage: f64,
}

impl ProviderRow {
    pub fn write_csv<W: Write>(rows: &[ProviderRow], out: W) -> Result<(), TableError> {
        write_rows(out, rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<ProviderRow>, TableError> {
        read_rows(input)
    }
}

/// Outcomes in `filter` grouped by provider, ascending by provider name.
pub fn provider_distribution(
    outcomes: &[ComparisonOutcome],
    filter: &[Category],
    rules: &ProviderRules,
) -> Vec<ProviderRow> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0;
    for o in filtered(outcomes, filter) {
        *counts.entry(rules.bucket(&o.record.org)).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .map(|(provider, count)| ProviderRow {
            provider,
            count,
            percentage: percent(count, total),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTtlRow {
    pub vendor: String,
    pub model: String,
    #[serde(with = "two_decimals")]
    pub mean_ttl: f64,
    pub samples: usize,
}

impl ModelTtlRow {
    pub fn write_csv<W: Write>(rows: &[ModelTtlRow], out: W) -> Result<(), TableError> {
        write_rows(out, rows)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Vec<ModelTtlRow>, TableError> {
        read_rows(input)
    }
}

/// Mean reconstructed TTL per hardware string, over outcomes whose probes
/// succeeded. Sorted by vendor, then model.
pub fn average_ttl_by_model(outcomes: &[ComparisonOutcome]) -> Vec<ModelTtlRow> {
    let mut sums: BTreeMap<(String, String), (u64, usize)> = BTreeMap::new();
    for o in outcomes {
        let Some(r) = o.reconstructed() else { continue };
        for hw in &o.record.hardware_models {
            let entry = sums.entry((hw.vendor.clone(), hw.model.clone())).or_default();
            entry.0 += u64::from(r.value);
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|((vendor, model), (sum, n))| ModelTtlRow {
            vendor,
            model,
            mean_ttl: round2(sum as f64 / n as f64),
            samples: n,
        })
        .collect()
}

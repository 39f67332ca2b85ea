//! Candidate device harvesting: Shodan exports and API results become
//! [`DeviceRecord`]s tagged with the query that first yielded them.

mod api;
mod hardware;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::net::Ipv4Addr;

use flate2::read::MultiGzDecoder;
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use api::{
    fetch_query, fetch_query_with, page_cache_name, ApiError, FetchReport, HttpSearch, RetryPolicy, SearchBackend,
    SearchResponse, API_KEY_ENV, SHODAN_API_BASE,
};
pub use hardware::{extract_hardware_strings, HardwareModel, DEFAULT_VENDOR};

/// Search strings used to gather purported S7 devices and known ConPot
/// banners, in the order they are run.
pub fn default_queries() -> Vec<&'static str> {
    vec!["6ES7", "Technodrome", "Mouser Factory", "[00:13:EA:00:00:00]"]
}

/// One internet host as harvested from a search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub address: Ipv4Addr,
    pub matched_port: u16,
    #[serde(default)]
    pub all_ports: BTreeSet<u16>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default)]
    pub org: String,
    pub origin_query: String,
    #[serde(default)]
    pub raw_banner: String,
    #[serde(default)]
    pub hardware_models: BTreeSet<HardwareModel>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("port 0 is not a valid service port")]
    ZeroPort,
    #[error("origin query must not be empty")]
    EmptyQuery,
}

impl DeviceRecord {
    /// Builds a record from a banner, extracting hardware strings.
    pub fn new(
        address: Ipv4Addr,
        matched_port: u16,
        origin_query: &str,
        banner: &str,
    ) -> Result<Self, RecordError> {
        let record = DeviceRecord {
            address,
            matched_port,
            all_ports: BTreeSet::from([matched_port]),
            tags: BTreeSet::new(),
            org: String::new(),
            origin_query: origin_query.to_string(),
            raw_banner: banner.to_string(),
            hardware_models: extract_hardware_strings(banner),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags.extend(tags.into_iter().map(Into::into));
        self
    }

    pub fn with_org(mut self, org: &str) -> Self {
        self.org = org.to_string();
        self
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.matched_port == 0 || self.all_ports.contains(&0) {
            return Err(RecordError::ZeroPort);
        }
        if self.origin_query.trim().is_empty() {
            return Err(RecordError::EmptyQuery);
        }
        Ok(())
    }
}

/// True iff the record carries Shodan's `honeypot` tag, in any case.
pub fn has_honeypot_tag(record: &DeviceRecord) -> bool {
    record.tags.iter().any(|t| t.eq_ignore_ascii_case("honeypot"))
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("export stream unreadable: {0}")]
    Unreadable(#[from] std::io::Error),
    #[error("no parseable banner lines among {lines} non-empty lines")]
    NothingParseable { lines: usize },
}

/// Why a banner could not become a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BannerSkip {
    Malformed(String),
    Ipv6(String),
}

/// Maps one Shodan banner object to a record. An `origin_query` field on
/// the banner (present in canonical record files) overrides `default_query`.
pub fn banner_to_record(banner: &Value, default_query: &str) -> Result<DeviceRecord, BannerSkip> {
    let obj = banner
        .as_object()
        .ok_or_else(|| BannerSkip::Malformed("line is not a JSON object".into()))?;
    let ip_text = obj
        .get("ip_str")
        .or_else(|| obj.get("address"))
        .and_then(Value::as_str)
        .ok_or_else(|| BannerSkip::Malformed("missing ip_str".into()))?;
    if ip_text.contains(':') {
        return Err(BannerSkip::Ipv6(ip_text.to_string()));
    }
    let address: Ipv4Addr = ip_text
        .parse()
        .map_err(|_| BannerSkip::Malformed(format!("bad IPv4 address {ip_text:?}")))?;
    let port = obj
        .get("port")
        .or_else(|| obj.get("matched_port"))
        .and_then(Value::as_u64)
        .filter(|p| (1..=65535).contains(p))
        .ok_or_else(|| BannerSkip::Malformed("missing or invalid port".into()))? as u16;
    let query = obj
        .get("origin_query")
        .and_then(Value::as_str)
        .filter(|q| !q.trim().is_empty())
        .unwrap_or(default_query);
    let banner_text = obj
        .get("data")
        .or_else(|| obj.get("raw_banner"))
        .and_then(Value::as_str)
        .unwrap_or("");
    let mut record =
        DeviceRecord::new(address, port, query, banner_text).map_err(|e| BannerSkip::Malformed(e.to_string()))?;
    if let Some(tags) = obj.get("tags").and_then(Value::as_array) {
        record.tags.extend(tags.iter().filter_map(Value::as_str).map(str::to_string));
    }
    if let Some(org) = obj.get("org").and_then(Value::as_str) {
        record.org = org.to_string();
    }
    Ok(record)
}

/// Records recovered from an export plus what had to be skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub records: Vec<DeviceRecord>,
    pub lines: usize,
    pub skipped_malformed: usize,
    pub skipped_ipv6: usize,
    pub truncated: bool,
}

impl ParseReport {
    pub fn skipped(&self) -> usize {
        self.skipped_malformed + self.skipped_ipv6
    }
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Parses a newline-delimited Shodan export, gzip-compressed or plain.
///
/// Corrupt lines are skipped and counted. A gzip stream that breaks off
/// after at least one good line is treated as truncated rather than fatal.
/// Input with non-empty lines but no usable banner is an error; input with
/// no lines at all yields an empty report.
pub fn parse_export<'a, R: Read + 'a>(stream: R, origin_query: &str) -> Result<ParseReport, ExportError> {
    let mut buffered = BufReader::new(stream);
    let is_gzip = buffered.fill_buf()?.starts_with(&GZIP_MAGIC);
    let reader: Box<dyn BufRead + 'a> = if is_gzip {
        Box::new(BufReader::new(MultiGzDecoder::new(buffered)))
    } else {
        Box::new(buffered)
    };
    parse_lines(reader, origin_query)
}

fn parse_lines(mut reader: Box<dyn BufRead + '_>, origin_query: &str) -> Result<ParseReport, ExportError> {
    let mut report = ParseReport::default();
    let mut line = Vec::new();
    loop {
        line.clear();
        match reader.read_until(b'\n', &mut line) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if !report.records.is_empty() => {
                warn!("export stream ended early after {} lines: {e}", report.lines);
                report.truncated = true;
                report.skipped_malformed += 1;
                break;
            }
            Err(e) => return Err(ExportError::Unreadable(e)),
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        report.lines += 1;
        let parsed = serde_json::from_slice::<Value>(&line)
            .map_err(|e| BannerSkip::Malformed(e.to_string()))
            .and_then(|v| banner_to_record(&v, origin_query));
        match parsed {
            Ok(record) => report.records.push(record),
            Err(BannerSkip::Ipv6(ip)) => {
                warn!("line {}: skipping IPv6 host {ip}", report.lines);
                report.skipped_ipv6 += 1;
            }
            Err(BannerSkip::Malformed(reason)) => {
                warn!("line {}: skipping malformed banner: {reason}", report.lines);
                report.skipped_malformed += 1;
            }
        }
    }
    if report.lines > 0 && report.records.is_empty() {
        return Err(ExportError::NothingParseable { lines: report.lines });
    }
    Ok(report)
}

/// Counts from a deduplication pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupStats {
    pub total_in: usize,
    pub total_out: usize,
    pub removed: usize,
    pub per_query_before: BTreeMap<String, usize>,
    pub per_query_after: BTreeMap<String, usize>,
}

/// Collapses records sharing an address. The first occurrence survives and
/// keeps its origin query; tags, ports and hardware strings of later
/// occurrences are merged into it.
pub fn deduplicate(records: Vec<DeviceRecord>) -> (Vec<DeviceRecord>, DedupStats) {
    let mut stats = DedupStats {
        total_in: records.len(),
        ..DedupStats::default()
    };
    let mut index: HashMap<Ipv4Addr, usize> = HashMap::new();
    let mut out: Vec<DeviceRecord> = Vec::new();
    for record in records {
        *stats.per_query_before.entry(record.origin_query.clone()).or_default() += 1;
        match index.get(&record.address) {
            Some(&pos) => {
                let survivor = &mut out[pos];
                survivor.tags.extend(record.tags);
                survivor.all_ports.extend(record.all_ports);
                survivor.all_ports.insert(record.matched_port);
                survivor.hardware_models.extend(record.hardware_models);
            }
            None => {
                index.insert(record.address, out.len());
                out.push(record);
            }
        }
    }
    for record in &out {
        *stats.per_query_after.entry(record.origin_query.clone()).or_default() += 1;
    }
    stats.total_out = out.len();
    stats.removed = stats.total_in - stats.total_out;
    (out, stats)
}

//! Paged Shodan search with an on-disk response cache.
//!
//! Every well-formed page is written verbatim to the cache, so a rerun
//! replays from disk without spending query credits. Authentication and quota failures abort immediately; other HTTP
//! failures are retried with exponential backoff.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use serde::Deserialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{banner_to_record, BannerSkip, DeviceRecord};

pub const SHODAN_API_BASE: &str = "https://api.shodan.io";
pub const API_KEY_ENV: &str = "SHODAN_API_KEY";
const PAGE_SIZE: usize = 100;
const MAX_BLIND_MALFORMED: usize = 3;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("query credits exhausted: {0}")]
    Quota(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Transient { attempts: u32, last: String },
    #[error("cache {path}: {source}")]
    Cache { path: String, source: std::io::Error },
}

/// Status and body of one search request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchResponse {
    pub status: u16,
    pub body: String,
}

/// Source of raw search pages. Pages are numbered from 1.
pub trait SearchBackend {
    fn search_page(&self, query: &str, page: u32) -> Result<SearchResponse, String>;
}

/// The live Shodan REST endpoint.
pub struct HttpSearch {
    client: reqwest::blocking::Client,
    base: String,
    key: String,
}

impl HttpSearch {
    pub fn new(key: &str, base: &str) -> Result<Self, ApiError> {
        if key.trim().is_empty() {
            return Err(ApiError::Auth("empty API key".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ApiError::Transient {
                attempts: 0,
                last: e.to_string(),
            })?;
        Ok(HttpSearch {
            client,
            base: base.trim_end_matches('/').to_string(),
            key: key.to_string(),
        })
    }
}

impl SearchBackend for HttpSearch {
    fn search_page(&self, query: &str, page: u32) -> Result<SearchResponse, String> {
        let url = format!("{}/shodan/host/search", self.base);
        let page = page.to_string();
        let resp = self
            .client
            .get(url)
            .query(&[("key", self.key.as_str()), ("query", query), ("page", page.as_str())])
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(SearchResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FetchReport {
    pub records: Vec<DeviceRecord>,
    pub pages_fetched: u32,
    pub pages_from_cache: u32,
    pub malformed_pages: u32,
    pub skipped_banners: usize,
}

/// Cache file name for one page: hex SHA-256 of the query, then the page.
pub fn page_cache_name(query: &str, page: u32) -> String {
    format!("{}-{page}.json", hex::encode(Sha256::digest(query.as_bytes())))
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    matches: Vec<Value>,
    total: Option<usize>,
}

fn classify_failure(resp: &SearchResponse) -> Option<ApiError> {
    let lower = resp.body.to_ascii_lowercase();
    match resp.status {
        401 => Some(ApiError::Auth(summarize(&resp.body))),
        402 => Some(ApiError::Quota(summarize(&resp.body))),
        403 if lower.contains("credit") || lower.contains("upgrade") => Some(ApiError::Quota(summarize(&resp.body))),
        403 => Some(ApiError::Auth(summarize(&resp.body))),
        _ if lower.contains("insufficient query credits") => Some(ApiError::Quota(summarize(&resp.body))),
        _ => None,
    }
}

fn summarize(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(200).collect())
}

fn download<B: SearchBackend + ?Sized>(
    backend: &B,
    query: &str,
    page: u32,
    retry: RetryPolicy,
) -> Result<String, ApiError> {
    let mut last = String::new();
    for attempt in 0..retry.max_attempts {
        if attempt > 0 {
            let delay = retry.base_delay * 2u32.saturating_pow(attempt - 1);
            debug!("retrying {query:?} page {page} in {delay:?}");
            thread::sleep(delay);
        }
        match backend.search_page(query, page) {
            Ok(resp) if resp.status == 200 && !resp.body.to_ascii_lowercase().contains("insufficient query credits") => {
                return Ok(resp.body)
            }
            Ok(resp) => {
                if let Some(err) = classify_failure(&resp) {
                    return Err(err);
                }
                last = format!("HTTP {}: {}", resp.status, summarize(&resp.body));
            }
            Err(e) => last = e,
        }
        warn!("{query:?} page {page} attempt {} failed: {last}", attempt + 1);
    }
    Err(ApiError::Transient {
        attempts: retry.max_attempts,
        last,
    })
}

/// Pages through `query` until results run out or `page_limit` pages have
/// been read. Every record carries `origin_query = query`.
pub fn fetch_query_with<B: SearchBackend + ?Sized>(
    backend: &B,
    query: &str,
    page_limit: Option<u32>,
    cache_dir: Option<&Path>,
    retry: RetryPolicy,
) -> Result<FetchReport, ApiError> {
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir).map_err(|source| ApiError::Cache {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut report = FetchReport::default();
    let mut seen = 0usize;
    let mut total: Option<usize> = None;
    let mut blind_malformed = 0usize;
    let mut page = 1u32;
    loop {
        if page_limit.is_some_and(|limit| page > limit) {
            break;
        }
        let cache_path: Option<PathBuf> = cache_dir.map(|d| d.join(page_cache_name(query, page)));
        let body = match cache_path.as_deref().filter(|p| p.exists()) {
            Some(path) => {
                report.pages_from_cache += 1;
                fs::read_to_string(path).map_err(|source| ApiError::Cache {
                    path: path.display().to_string(),
                    source,
                })?
            }
            None => {
                let body = download(backend, query, page, retry)?;
                report.pages_fetched += 1;
                if let Some(path) = &cache_path {
                    // only pages that parse are cached so a rerun retries bad ones
                    if serde_json::from_str::<Page>(&body).is_ok() {
                        fs::write(path, &body).map_err(|source| ApiError::Cache {
                            path: path.display().to_string(),
                            source,
                        })?;
                    }
                }
                body
            }
        };
        match serde_json::from_str::<Page>(&body) {
            Ok(parsed) => {
                blind_malformed = 0;
                if parsed.total.is_some() {
                    total = parsed.total;
                }
                if parsed.matches.is_empty() {
                    break;
                }
                seen += parsed.matches.len();
                for banner in &parsed.matches {
                    match banner_to_record(banner, query) {
                        Ok(mut record) => {
                            record.origin_query = query.to_string();
                            report.records.push(record);
                        }
                        Err(BannerSkip::Ipv6(_)) | Err(BannerSkip::Malformed(_)) => report.skipped_banners += 1,
                    }
                }
            }
            Err(e) => {
                warn!("{query:?} page {page}: malformed response skipped: {e}");
                report.malformed_pages += 1;
                seen += PAGE_SIZE;
                blind_malformed += 1;
                if total.is_none() && blind_malformed >= MAX_BLIND_MALFORMED {
                    break;
                }
            }
        }
        if total.is_some_and(|t| seen >= t) {
            break;
        }
        page += 1;
    }
    info!(
        "{query:?}: {} records ({} pages fetched, {} cached, {} malformed)",
        report.records.len(),
        report.pages_fetched,
        report.pages_from_cache,
        report.malformed_pages
    );
    Ok(report)
}

/// [`fetch_query_with`] against the live API.
pub fn fetch_query(
    query: &str,
    api_key: &str,
    page_limit: Option<u32>,
    cache_dir: Option<&Path>,
) -> Result<FetchReport, ApiError> {
    let backend = HttpSearch::new(api_key, SHODAN_API_BASE)?;
    fetch_query_with(&backend, query, page_limit, cache_dir, RetryPolicy::default())
}

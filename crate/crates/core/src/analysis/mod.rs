//! TTL reconstruction, Local verdicts, and comparison with Shodan's tag.

mod tables;

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{nearest_match, FingerprintKind, FingerprintSet, MatchResult};
use crate::ingest::{has_honeypot_tag, DeviceRecord};
use crate::probe::{PingResult, ProbeErrorKind, ProbeMethod, ProbeOutcome, TraceResult};

pub use tables::{
    average_ttl_by_model, port_distribution, provider_distribution, ModelTtlRow, PortRow, ProviderRow, ProviderRules,
    TableError, UNKNOWN_PROVIDER,
};

/// Estimate of the TTL a host stamped on its reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructedTtl {
    pub value: u16,
    pub ping_ttl: u8,
    pub hop_count: u8,
}

impl ReconstructedTtl {
    /// Values past 255 cannot come from a real IP stack; they point at
    /// severe path asymmetry or a middlebox rewriting TTLs.
    pub fn is_anomalous(&self) -> bool {
        self.value > 255
    }
}

/// `reply_ttl + hop_count - 1`.
///
/// The target answers at traceroute position `hop_count`, so under a
/// symmetric path its reply crossed `hop_count - 1` decrementing routers on
/// the way back. The target's own stack does not decrement its reply.
pub fn reconstruct_ttl(ping: &PingResult, trace: &TraceResult) -> ReconstructedTtl {
    debug_assert!(trace.reached && trace.hop_count >= 1);
    reconstruct_from(ping.reply_ttl, trace.hop_count)
}

pub fn reconstruct_from(reply_ttl: u8, hop_count: u8) -> ReconstructedTtl {
    ReconstructedTtl {
        value: u16::from(reply_ttl) + u16::from(hop_count.max(1)) - 1,
        ping_ttl: reply_ttl,
        hop_count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    Device,
    Honeypot,
    Inconclusive,
}

/// The TTL heuristic's conclusion for one host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalVerdict {
    pub kind: VerdictKind,
    pub matched: MatchResult,
    pub reconstructed: ReconstructedTtl,
}

/// Nearest device fingerprint means a genuine device, nearest OS default
/// means a likely honeypot, a tie between the two is inconclusive.
pub fn classify(reconstructed: ReconstructedTtl, set: &FingerprintSet) -> LocalVerdict {
    let matched = nearest_match(reconstructed.value, set);
    let kind = if matched.tied_across_kinds {
        VerdictKind::Inconclusive
    } else if matched.all_of_kind(FingerprintKind::Device) {
        VerdictKind::Device
    } else {
        VerdictKind::Honeypot
    };
    LocalVerdict {
        kind,
        matched,
        reconstructed,
    }
}

/// Agreement between the Local verdict and Shodan's tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    ConsensusHoneypot,
    ConsensusDevice,
    /// Local says device, Shodan says honeypot.
    ContentionLocalDevice,
    /// Local says honeypot, Shodan is silent.
    ContentionLocalHoneypot,
    Inconclusive,
    Error,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::ConsensusHoneypot,
        Category::ConsensusDevice,
        Category::ContentionLocalDevice,
        Category::ContentionLocalHoneypot,
        Category::Inconclusive,
        Category::Error,
    ];
    pub const CONSENSUS: [Category; 2] = [Category::ConsensusHoneypot, Category::ConsensusDevice];
    pub const CONTENTION: [Category; 2] = [Category::ContentionLocalDevice, Category::ContentionLocalHoneypot];

    pub fn snake_name(self) -> &'static str {
        match self {
            Category::ConsensusHoneypot => "consensus_honeypot",
            Category::ConsensusDevice => "consensus_device",
            Category::ContentionLocalDevice => "contention_local_device",
            Category::ContentionLocalHoneypot => "contention_local_honeypot",
            Category::Inconclusive => "inconclusive",
            Category::Error => "error",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.snake_name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Category::ALL
            .into_iter()
            .find(|c| c.snake_name() == key || format!("{c:?}").eq_ignore_ascii_case(&key))
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Whether Inconclusive verdicts are kept or folded into Honeypot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    #[default]
    Standard,
    /// Treats Inconclusive as Honeypot, restoring a strict two-way split.
    Strict,
}

/// Raw probe numbers carried into the results file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeNumbers {
    pub ping_ttl: Option<u8>,
    pub ping_method: Option<ProbeMethod>,
    pub hop_count: Option<u8>,
    pub trace_method: Option<ProbeMethod>,
}

impl From<&ProbeOutcome> for ProbeNumbers {
    fn from(o: &ProbeOutcome) -> Self {
        ProbeNumbers {
            ping_ttl: o.ping.map(|p| p.reply_ttl),
            ping_method: o.ping.map(|p| p.method),
            hop_count: o.trace.as_ref().map(|t| t.hop_count),
            trace_method: o.trace.as_ref().map(|t| t.method),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonOutcome {
    pub category: Category,
    pub record: DeviceRecord,
    pub verdict: Option<LocalVerdict>,
    pub probe_error: Option<ProbeErrorKind>,
    pub probe: ProbeNumbers,
    /// Reconstructed value above 255.
    #[serde(default)]
    pub anomalous: bool,
}

impl ComparisonOutcome {
    pub fn reconstructed(&self) -> Option<ReconstructedTtl> {
        self.verdict.as_ref().map(|v| v.reconstructed)
    }
}

/// Places one host in exactly one category.
pub fn compare(
    record: &DeviceRecord,
    outcome: &ProbeOutcome,
    verdict: Option<&LocalVerdict>,
    mode: CompareMode,
) -> ComparisonOutcome {
    let tagged = has_honeypot_tag(record);
    let category = match (outcome.error, verdict) {
        (Some(_), _) | (None, None) => Category::Error,
        (None, Some(v)) => {
            let kind = match (v.kind, mode) {
                (VerdictKind::Inconclusive, CompareMode::Strict) => VerdictKind::Honeypot,
                (k, _) => k,
            };
            match (kind, tagged) {
                (VerdictKind::Honeypot, true) => Category::ConsensusHoneypot,
                (VerdictKind::Device, false) => Category::ConsensusDevice,
                (VerdictKind::Device, true) => Category::ContentionLocalDevice,
                (VerdictKind::Honeypot, false) => Category::ContentionLocalHoneypot,
                (VerdictKind::Inconclusive, _) => Category::Inconclusive,
            }
        }
    };
    let probe_error = match category {
        Category::Error => Some(outcome.error.unwrap_or(ProbeErrorKind::BothFailed)),
        _ => None,
    };
    let verdict = if category == Category::Error { None } else { verdict.cloned() };
    ComparisonOutcome {
        category,
        record: record.clone(),
        anomalous: verdict.as_ref().is_some_and(|v| v.reconstructed.is_anomalous()),
        verdict,
        probe_error,
        probe: ProbeNumbers::from(outcome),
    }
}

/// Verdict for a complete probe outcome, `None` if either measurement is
/// missing.
pub fn verdict_for(outcome: &ProbeOutcome, set: &FingerprintSet) -> Option<LocalVerdict> {
    match (&outcome.ping, &outcome.trace, outcome.error) {
        (Some(ping), Some(trace), None) if trace.reached => Some(classify(reconstruct_ttl(ping, trace), set)),
        _ => None,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("no probe outcome for record {0}")]
    MissingProbe(Ipv4Addr),
}

/// Joins records with probe outcomes by address and compares each.
pub fn analyze(
    records: &[DeviceRecord],
    outcomes: &[ProbeOutcome],
    set: &FingerprintSet,
    mode: CompareMode,
) -> Result<Vec<ComparisonOutcome>, AnalysisError> {
    let by_address: HashMap<Ipv4Addr, &ProbeOutcome> = outcomes.iter().map(|o| (o.target, o)).collect();
    records
        .iter()
        .map(|record| {
            let outcome = by_address
                .get(&record.address)
                .ok_or(AnalysisError::MissingProbe(record.address))?;
            let verdict = verdict_for(outcome, set);
            Ok(compare(record, outcome, verdict.as_ref(), mode))
        })
        .collect()
}

/// Counts per category, always listing all six.
pub fn category_counts(outcomes: &[ComparisonOutcome]) -> Vec<(Category, usize)> {
    Category::ALL
        .into_iter()
        .map(|c| (c, outcomes.iter().filter(|o| o.category == c).count()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::builtin_set;
    use crate::probe::Hop;

    fn ping(ttl: u8) -> PingResult {
        PingResult {
            reply_ttl: ttl,
            rtt_us: 0,
            method: ProbeMethod::Icmp,
        }
    }

    fn trace(hops: u8) -> TraceResult {
        TraceResult {
            hop_count: hops,
            reached: true,
            method: ProbeMethod::Icmp,
            hops: vec![Hop {
                position: hops,
                responder: None,
            }],
        }
    }

    fn record(tags: &[&str]) -> DeviceRecord {
        DeviceRecord::new("192.0.2.10".parse().unwrap(), 102, "6ES7", "")
            .unwrap()
            .with_tags(tags.iter().copied())
    }

    fn outcome(p: Option<u8>, h: Option<u8>) -> ProbeOutcome {
        ProbeOutcome::new("192.0.2.10".parse().unwrap(), p.map(ping), h.map(trace))
    }

    #[test]
    fn reconstruction_examples() {
        assert_eq!(reconstruct_ttl(&ping(54), &trace(7)).value, 60);
        assert_eq!(reconstruct_ttl(&ping(64), &trace(1)).value, 64);
        assert_eq!(reconstruct_ttl(&ping(251), &trace(5)).value, 255);
        let r = reconstruct_ttl(&ping(250), &trace(20));
        assert_eq!(r.value, 269);
        assert!(r.is_anomalous());
    }

    #[test]
    fn classification_examples() {
        let set = builtin_set();
        let v = classify(reconstruct_from(60, 1), &set);
        assert_eq!(v.kind, VerdictKind::Device);
        assert_eq!(v.matched.best[0].range.as_deref(), Some("S7-300"));
        assert_eq!(classify(reconstruct_from(64, 1), &set).kind, VerdictKind::Honeypot);
        assert_eq!(classify(reconstruct_from(62, 1), &set).kind, VerdictKind::Inconclusive);
    }

    #[test]
    fn comparison_table() {
        let set = builtin_set();
        let ok = outcome(Some(64), Some(1));
        let hp = classify(reconstruct_from(64, 1), &set);
        let dev = classify(reconstruct_from(30, 1), &set);
        let tie = classify(reconstruct_from(62, 1), &set);
        let tagged = record(&["honeypot"]);
        let plain = record(&[]);
        let cat = |r: &DeviceRecord, v: &LocalVerdict, m| compare(r, &ok, Some(v), m).category;

        assert_eq!(cat(&tagged, &hp, CompareMode::Standard), Category::ConsensusHoneypot);
        assert_eq!(cat(&plain, &dev, CompareMode::Standard), Category::ConsensusDevice);
        assert_eq!(cat(&tagged, &dev, CompareMode::Standard), Category::ContentionLocalDevice);
        assert_eq!(cat(&plain, &hp, CompareMode::Standard), Category::ContentionLocalHoneypot);
        assert_eq!(cat(&plain, &tie, CompareMode::Standard), Category::Inconclusive);
        assert_eq!(cat(&plain, &tie, CompareMode::Strict), Category::ContentionLocalHoneypot);
        assert_eq!(cat(&tagged, &tie, CompareMode::Strict), Category::ConsensusHoneypot);
    }

    #[test]
    fn probe_failures_are_errors() {
        let c = compare(&record(&["honeypot"]), &outcome(None, None), None, CompareMode::Standard);
        assert_eq!(c.category, Category::Error);
        assert_eq!(c.probe_error, Some(ProbeErrorKind::BothFailed));
        assert!(c.verdict.is_none());

        let c = compare(&record(&[]), &outcome(Some(60), None), None, CompareMode::Standard);
        assert_eq!(c.probe_error, Some(ProbeErrorKind::TraceFailed));
        assert_eq!(c.probe.ping_ttl, Some(60));
        assert_eq!(c.probe.hop_count, None);
    }

    #[test]
    fn analyze_joins_by_address() {
        let set = builtin_set();
        let recs = vec![record(&[])];
        let got = analyze(&recs, &[outcome(Some(54), Some(7))], &set, CompareMode::Standard).unwrap();
        assert_eq!(got[0].category, Category::ConsensusDevice);
        assert_eq!(got[0].reconstructed().unwrap().value, 60);
        assert_eq!(
            analyze(&recs, &[], &set, CompareMode::Standard).unwrap_err(),
            AnalysisError::MissingProbe("192.0.2.10".parse().unwrap())
        );
    }

    #[test]
    fn category_parsing() {
        assert_eq!("consensus-device".parse::<Category>().unwrap(), Category::ConsensusDevice);
        assert_eq!("ContentionLocalHoneypot".parse::<Category>().unwrap(), Category::ContentionLocalHoneypot);
        assert!("agree".parse::<Category>().is_err());
    }
}

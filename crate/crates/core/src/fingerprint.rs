//! Reference TTL fingerprints and nearest-value matching.
//!
//! A [`FingerprintSet`] pairs genuine S7 device models with the default TTL
//! they stamp on outgoing packets, alongside the common operating system
//! defaults. A reconstructed TTL is matched to every entry at minimal
//! absolute distance; ties that span a device and an operating system are
//! surfaced instead of being resolved arbitrarily.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether a fingerprint describes real hardware or a general-purpose OS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FingerprintKind {
    Device,
    OperatingSystem,
}

impl FingerprintKind {
    /// Token used in the fingerprint file format.
    pub fn file_token(self) -> &'static str {
        match self {
            FingerprintKind::Device => "device",
            FingerprintKind::OperatingSystem => "os",
        }
    }
}

impl FromStr for FingerprintKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "device" => Ok(FingerprintKind::Device),
            "os" => Ok(FingerprintKind::OperatingSystem),
            other => Err(format!("unknown fingerprint kind {other:?}, expected device or os")),
        }
    }
}

impl fmt::Display for FingerprintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FingerprintKind::Device => "Device",
            FingerprintKind::OperatingSystem => "OperatingSystem",
        })
    }
}

/// A named reference TTL value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub label: String,
    pub kind: FingerprintKind,
    pub ttl: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<String>,
}

impl Fingerprint {
    pub fn device(label: &str, ttl: u8, range: Option<&str>) -> Self {
        Fingerprint {
            label: label.to_string(),
            kind: FingerprintKind::Device,
            ttl,
            range: range.map(str::to_string),
        }
    }

    pub fn os(label: &str, ttl: u8) -> Self {
        Fingerprint {
            label: label.to_string(),
            kind: FingerprintKind::OperatingSystem,
            ttl,
            range: None,
        }
    }

    /// Human-facing name: the range when known, otherwise the label.
    pub fn display_name(&self) -> &str {
        self.range.as_deref().unwrap_or(&self.label)
    }

    fn sort_key(&self) -> (u8, FingerprintKind, &str, Option<&str>) {
        (self.ttl, self.kind, &self.label, self.range.as_deref())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FingerprintError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: ttl {value} outside 1..=255")]
    TtlOutOfRange { line: usize, value: i64 },
    #[error("line {line}: duplicate fingerprint ({label}, {ttl})")]
    Duplicate { line: usize, label: String, ttl: u8 },
    #[error("fingerprint label must not be empty")]
    EmptyLabel,
    #[error("fingerprint ttl must be in 1..=255")]
    ZeroTtl,
    #[error("no device entries")]
    NoDevices,
    #[error("no operating system entries")]
    NoOperatingSystems,
    #[error("reading fingerprint file: {0}")]
    Io(String),
}

/// An immutable, validated collection of fingerprints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FingerprintSet {
    entries: Vec<Fingerprint>,
    provenance: String,
}

impl FingerprintSet {
    /// Validates and wraps `entries`.
    pub fn new(entries: Vec<Fingerprint>, provenance: impl Into<String>) -> Result<Self, FingerprintError> {
        let mut seen = HashSet::new();
        for (idx, f) in entries.iter().enumerate() {
            if f.label.trim().is_empty() {
                return Err(FingerprintError::EmptyLabel);
            }
            if f.ttl == 0 {
                return Err(FingerprintError::ZeroTtl);
            }
            if !seen.insert((f.label.clone(), f.ttl)) {
                return Err(FingerprintError::Duplicate {
                    line: idx + 1,
                    label: f.label.clone(),
                    ttl: f.ttl,
                });
            }
        }
        Self::check_kinds(&entries)?;
        Ok(FingerprintSet {
            entries,
            provenance: provenance.into(),
        })
    }

    fn check_kinds(entries: &[Fingerprint]) -> Result<(), FingerprintError> {
        if !entries.iter().any(|f| f.kind == FingerprintKind::Device) {
            return Err(FingerprintError::NoDevices);
        }
        if !entries.iter().any(|f| f.kind == FingerprintKind::OperatingSystem) {
            return Err(FingerprintError::NoOperatingSystems);
        }
        Ok(())
    }

    pub fn entries(&self) -> &[Fingerprint] {
        &self.entries
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct TTL values in ascending order.
    pub fn distinct_ttls(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.entries.iter().map(|f| f.ttl).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Renders the set in the line-oriented file format accepted by
    /// [`load_fingerprints`].
    pub fn to_file_format(&self) -> String {
        let mut out = String::new();
        for f in &self.entries {
            out.push_str(f.kind.file_token());
            out.push(',');
            out.push_str(&f.label);
            out.push(',');
            out.push_str(&f.ttl.to_string());
            if let Some(range) = &f.range {
                out.push(',');
                out.push_str(range);
            }
            out.push('\n');
        }
        out
    }
}

/// Entries at minimal distance from a reconstructed TTL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub best: Vec<Fingerprint>,
    pub distance: u16,
    pub tied_across_kinds: bool,
}

impl MatchResult {
    pub fn all_of_kind(&self, kind: FingerprintKind) -> bool {
        !self.best.is_empty() && self.best.iter().all(|f| f.kind == kind)
    }
}

/// Reference Siemens devices and OS defaults.
pub fn builtin_set() -> FingerprintSet {
    let entries = vec![
        Fingerprint::device("6ES7 151-8AB00-0AB0", 30, Some("ET200S")),
        Fingerprint::device("6ES7 322-1BH01-0AA0", 60, Some("S7-300")),
        Fingerprint::device("6ES7 212-1BE40-0XB0", 30, Some("S7-1200")),
        Fingerprint::device("6ES7 214-1AG40-0XB0", 30, Some("S7-1200")),
        Fingerprint::device("6ES7 215-1AG40-0XB0", 30, Some("S7-1200")),
        Fingerprint::device("6ES7 522-1BL10-0AA0", 255, Some("S7-1500")),
        Fingerprint::os("Linux", 64),
        Fingerprint::os("Windows", 128),
    ];
    FingerprintSet::new(entries, "builtin").expect("builtin fingerprints are valid")
}

/// Parses a fingerprint file: `kind,label,ttl[,range]` per line, `#`
/// comments and blank lines ignored. The result replaces the builtin set.
pub fn load_fingerprints<R: BufRead>(source: R, provenance: &str) -> Result<FingerprintSet, FingerprintError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| FingerprintError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(FingerprintError::Malformed {
                line: lineno,
                reason: format!("expected kind,label,ttl[,range], got {} fields", fields.len()),
            });
        }
        let kind = fields[0]
            .parse::<FingerprintKind>()
            .map_err(|reason| FingerprintError::Malformed { line: lineno, reason })?;
        let label = fields[1];
        if label.is_empty() {
            return Err(FingerprintError::Malformed {
                line: lineno,
                reason: "empty label".into(),
            });
        }
        let value: i64 = fields[2].parse().map_err(|_| FingerprintError::Malformed {
            line: lineno,
            reason: format!("ttl {:?} is not an integer", fields[2]),
        })?;
        if !(1..=255).contains(&value) {
            return Err(FingerprintError::TtlOutOfRange { line: lineno, value });
        }
        let ttl = value as u8;
        if !seen.insert((label.to_string(), ttl)) {
            return Err(FingerprintError::Duplicate {
                line: lineno,
                label: label.to_string(),
                ttl,
            });
        }
        let range = fields.get(3).filter(|r| !r.is_empty()).map(|r| r.to_string());
        entries.push(Fingerprint {
            label: label.to_string(),
            kind,
            ttl,
            range,
        });
    }
    FingerprintSet::check_kinds(&entries)?;
    Ok(FingerprintSet {
        entries,
        provenance: provenance.to_string(),
    })
}

/// Every fingerprint minimizing `|reconstructed - ttl|`, sorted so the
/// result does not depend on entry order.
pub fn nearest_match(reconstructed: u16, set: &FingerprintSet) -> MatchResult {
    let distance = set
        .entries
        .iter()
        .map(|f| reconstructed.abs_diff(u16::from(f.ttl)))
        .min()
        .expect("fingerprint sets are never empty");
    let mut best: Vec<Fingerprint> = set
        .entries
        .iter()
        .filter(|f| reconstructed.abs_diff(u16::from(f.ttl)) == distance)
        .cloned()
        .collect();
    best.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let has_device = best.iter().any(|f| f.kind == FingerprintKind::Device);
    let has_os = best.iter().any(|f| f.kind == FingerprintKind::OperatingSystem);
    MatchResult {
        best,
        distance,
        tied_across_kinds: has_device && has_os,
    }
}

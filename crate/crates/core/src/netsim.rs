//! Deterministic in-process network used as ground truth.
//!
//! Each simulated host sits `forward_depth` hops from the source and
//! replies over a `return_depth`-hop path. A probe sent with TTL `t` expires
//! at the synthetic router in position `t` when `t < forward_depth`;
//! otherwise the host answers with its original TTL reduced by the
//! `return_depth - 1` routers on the way back. Responses depend only on the
//! topology and the probe.

use std::collections::{BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::files::{self, FileError, FileHeader};
use crate::fingerprint::{Fingerprint, FingerprintKind, FingerprintSet};
use crate::probe::{Probe, ProbeMethod, ProbePurpose, Reply, ReplyKind, Transport, TransportFault};

pub const TOPOLOGY_KIND: &str = "topology";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimHost {
    pub address: Ipv4Addr,
    pub original_ttl: u8,
    pub forward_depth: u8,
    pub return_depth: u8,
    #[serde(default)]
    pub drops_icmp: bool,
    #[serde(default)]
    pub drops_udp: bool,
    /// Host filters ping probes only (e.g. an echo rate limit).
    #[serde(default)]
    pub ignores_ping: bool,
    /// Host filters traceroute probes only.
    #[serde(default)]
    pub ignores_trace: bool,
    /// Router positions on the forward path that never answer.
    #[serde(default)]
    pub silent_hops: BTreeSet<u8>,
    pub is_honeypot_truth: bool,
    #[serde(default)]
    pub model_label: Option<String>,
}

impl SimHost {
    /// A symmetric, fully responsive host.
    pub fn new(address: Ipv4Addr, original_ttl: u8, depth: u8) -> Self {
        SimHost {
            address,
            original_ttl,
            forward_depth: depth,
            return_depth: depth,
            drops_icmp: false,
            drops_udp: false,
            ignores_ping: false,
            ignores_trace: false,
            silent_hops: BTreeSet::new(),
            is_honeypot_truth: false,
            model_label: None,
        }
    }

    /// Return path length minus forward path length.
    pub fn asymmetry(&self) -> i16 {
        i16::from(self.return_depth) - i16::from(self.forward_depth)
    }

    /// TTL of a reply as it arrives at the source, if it survives the trip.
    pub fn arriving_ttl(&self) -> Option<u8> {
        let decrements = self.return_depth - 1;
        self.original_ttl.checked_sub(decrements).filter(|&t| t > 0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub hosts: Vec<SimHost>,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate host address {0}")]
    DuplicateAddress(Ipv4Addr),
    #[error("host {0} has a zero-length path")]
    ZeroDepth(Ipv4Addr),
    #[error("host {0} has original ttl 0")]
    ZeroTtl(Ipv4Addr),
}

/// Address of the synthetic router at `position` on any forward path.
pub fn router_address(position: u8) -> Ipv4Addr {
    Ipv4Addr::new(100, 64, position, 1)
}

/// The simulated network. Counts probes per target so the probe budget can
/// be checked; the counts never influence responses.
#[derive(Debug)]
pub struct SimNetwork {
    hosts: HashMap<Ipv4Addr, SimHost>,
    sent: Mutex<HashMap<Ipv4Addr, usize>>,
}

pub fn build_topology(spec: &TopologySpec) -> Result<SimNetwork, TopologyError> {
    let mut hosts = HashMap::with_capacity(spec.hosts.len());
    for host in &spec.hosts {
        if host.forward_depth == 0 || host.return_depth == 0 {
            return Err(TopologyError::ZeroDepth(host.address));
        }
        if host.original_ttl == 0 {
            return Err(TopologyError::ZeroTtl(host.address));
        }
        if hosts.insert(host.address, host.clone()).is_some() {
            return Err(TopologyError::DuplicateAddress(host.address));
        }
    }
    Ok(SimNetwork {
        hosts,
        sent: Mutex::new(HashMap::new()),
    })
}

impl SimNetwork {
    pub fn host(&self, address: Ipv4Addr) -> Option<&SimHost> {
        self.hosts.get(&address)
    }

    pub fn probes_sent(&self, target: Ipv4Addr) -> usize {
        self.sent.lock().unwrap().get(&target).copied().unwrap_or(0)
    }

    /// The response to `probe`, without touching the probe counters.
    pub fn respond(&self, probe: &Probe) -> Option<Reply> {
        let host = self.hosts.get(&probe.target)?;
        let rtt = |hops: u8| Duration::from_micros(250 * (u64::from(hops) + u64::from(host.return_depth)));
        if probe.ttl < host.forward_depth {
            if host.silent_hops.contains(&probe.ttl) {
                return None;
            }
            return Some(Reply {
                responder: router_address(probe.ttl),
                kind: ReplyKind::TimeExceeded,
                ip_ttl: 255 - probe.ttl,
                rtt: rtt(probe.ttl),
            });
        }
        let dropped = match probe.method {
            ProbeMethod::Icmp => host.drops_icmp,
            ProbeMethod::Udp => host.drops_udp,
        };
        let filtered = match probe.purpose {
            ProbePurpose::Ping => host.ignores_ping,
            ProbePurpose::Trace => host.ignores_trace,
        };
        if dropped || filtered {
            return None;
        }
        let kind = match probe.method {
            ProbeMethod::Icmp => ReplyKind::EchoReply,
            ProbeMethod::Udp => ReplyKind::Unreachable,
        };
        Some(Reply {
            responder: host.address,
            kind,
            ip_ttl: host.arriving_ttl()?,
            rtt: rtt(host.forward_depth),
        })
    }
}

impl Transport for SimNetwork {
    fn send(&self, probe: &Probe) -> Result<Option<Reply>, TransportFault> {
        *self.sent.lock().unwrap().entry(probe.target).or_default() += 1;
        Ok(self.respond(probe))
    }

    fn pause(&self, _delay: Duration) {}
}

/// Weighted choice of fingerprints for generated hosts.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMix {
    entries: Vec<(Fingerprint, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MixError {
    #[error("population mix is empty")]
    Empty,
    #[error("proportion {0} is negative or not finite")]
    BadWeight(f64),
    #[error("proportions sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("unknown fingerprint {0:?} in mix")]
    UnknownFingerprint(String),
    #[error("invalid range: {0}")]
    BadRange(String),
    #[error("{0} hosts exceed the simulated address block")]
    TooManyHosts(usize),
}

impl PopulationMix {
    pub fn new(entries: Vec<(Fingerprint, f64)>) -> Result<Self, MixError> {
        if entries.is_empty() {
            return Err(MixError::Empty);
        }
        if let Some(&(_, w)) = entries.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(MixError::BadWeight(w));
        }
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MixError::NotNormalized(sum));
        }
        Ok(PopulationMix { entries })
    }

    /// `device_share` split evenly over device entries, the rest over OS
    /// entries.
    pub fn by_kind(set: &FingerprintSet, device_share: f64) -> Result<Self, MixError> {
        Self::from_shares(set, &[("device", device_share), ("os", 1.0 - device_share)])
    }

    /// Shares keyed by `device`, `os`, or a fingerprint label (or range
    /// name). Kind shares are spread evenly across matching entries.
    pub fn from_shares(set: &FingerprintSet, shares: &[(&str, f64)]) -> Result<Self, MixError> {
        let mut entries: Vec<(Fingerprint, f64)> = Vec::new();
        for &(key, share) in shares {
            let picked: Vec<&Fingerprint> = match key.to_ascii_lowercase().as_str() {
                "device" => set.entries().iter().filter(|f| f.kind == FingerprintKind::Device).collect(),
                "os" => set.entries().iter().filter(|f| f.kind == FingerprintKind::OperatingSystem).collect(),
                _ => set
                    .entries()
                    .iter()
                    .filter(|f| f.label.eq_ignore_ascii_case(key) || f.range.as_deref().is_some_and(|r| r.eq_ignore_ascii_case(key)))
                    .collect(),
            };
            if picked.is_empty() {
                return Err(MixError::UnknownFingerprint(key.to_string()));
            }
            let each = share / picked.len() as f64;
            for f in picked {
                match entries.iter_mut().find(|(e, _)| e == f) {
                    Some((_, w)) => *w += each,
                    None => entries.push((f.clone(), each)),
                }
            }
        }
        entries.retain(|(_, w)| *w > 0.0);
        PopulationMix::new(entries)
    }

    pub fn entries(&self) -> &[(Fingerprint, f64)] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationParams {
    pub count: usize,
    pub mix: PopulationMix,
    pub depth: RangeInclusive<u8>,
    pub asymmetry: RangeInclusive<i16>,
    pub seed: u64,
}

const SIM_BLOCK_START: u32 = u32::from_be_bytes([198, 18, 0, 0]);
const SIM_BLOCK_SIZE: usize = 1 << 17;

/// Address of the `index`-th generated host, inside 198.18.0.0/15.
pub fn sim_host_address(index: usize) -> Ipv4Addr {
    Ipv4Addr::from(SIM_BLOCK_START + index as u32 + 1)
}

/// Draws a seeded host population.
///
/// Forward depth is drawn from `depth` and the return path differs by an
/// asymmetry drawn from `asymmetry`. Depths are limited so that every
/// host's replies survive the return path (return depth never exceeds the
/// original TTL); a host that could never answer carries no ground truth.
pub fn generate_population(params: &PopulationParams) -> Result<TopologySpec, MixError> {
    let (dmin, dmax) = (*params.depth.start(), *params.depth.end());
    if dmin == 0 || dmin > dmax {
        return Err(MixError::BadRange(format!("depth {dmin}..={dmax}")));
    }
    let (amin, amax) = (*params.asymmetry.start(), *params.asymmetry.end());
    if amin > amax {
        return Err(MixError::BadRange(format!("asymmetry {amin}..={amax}")));
    }
    if params.count >= SIM_BLOCK_SIZE - 1 {
        return Err(MixError::TooManyHosts(params.count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights: Vec<f64> = params.mix.entries.iter().map(|(_, w)| *w).collect();
    let chooser = WeightedIndex::new(&weights).map_err(|e| MixError::BadRange(e.to_string()))?;

    let mut hosts = Vec::with_capacity(params.count);
    for index in 0..params.count {
        let fingerprint = &params.mix.entries[chooser.sample(&mut rng)].0;
        let ttl = i16::from(fingerprint.ttl);
        let mut asym = rng.random_range(amin..=amax);
        // forward depth f must satisfy 1 <= f + asym <= ttl
        let mut lo = i16::from(dmin).max(1 - asym);
        let mut hi = i16::from(dmax).min(ttl - asym);
        if lo > hi {
            asym = 0;
            lo = i16::from(dmin).min(ttl);
            hi = i16::from(dmax).min(ttl);
        }
        let forward = rng.random_range(lo..=hi);
        let mut host = SimHost::new(sim_host_address(index), fingerprint.ttl, forward as u8);
        host.return_depth = (forward + asym) as u8;
        host.is_honeypot_truth = fingerprint.kind == FingerprintKind::OperatingSystem;
        host.model_label = Some(fingerprint.label.clone());
        hosts.push(host);
    }
    Ok(TopologySpec { hosts, seed: params.seed })
}

pub fn write_topology(path: &Path, spec: &TopologySpec, config_digest: String) -> Result<(), FileError> {
    let header = FileHeader::new(TOPOLOGY_KIND, config_digest, json!({ "seed": spec.seed, "hosts": spec.hosts.len() }));
    files::write_ndjson_file(path, &header, &spec.hosts)
}

pub fn read_topology(path: &Path) -> Result<TopologySpec, FileError> {
    let (header, hosts) = files::read_ndjson_file::<SimHost>(path, TOPOLOGY_KIND)?;
    let seed = header
        .and_then(|h| h.meta.get("seed").and_then(|s| s.as_u64()))
        .unwrap_or(0);
    Ok(TopologySpec { hosts, seed })
}

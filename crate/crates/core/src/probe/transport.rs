use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probe family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProbeMethod {
    #[serde(rename = "ICMP")]
    Icmp,
    #[serde(rename = "UDP")]
    Udp,
}

impl fmt::Display for ProbeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeMethod::Icmp => "ICMP",
            ProbeMethod::Udp => "UDP",
        })
    }
}

impl FromStr for ProbeMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "icmp" => Ok(ProbeMethod::Icmp),
            "udp" => Ok(ProbeMethod::Udp),
            other => Err(format!("unknown probe method {other:?}")),
        }
    }
}

/// What a probe is part of. Transports may use this to pick identifiers;
/// the simulator uses it to model hosts that filter one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbePurpose {
    Ping,
    Trace,
}

/// One outgoing packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub target: Ipv4Addr,
    pub method: ProbeMethod,
    pub purpose: ProbePurpose,
    /// IP TTL stamped on the outgoing packet.
    pub ttl: u8,
    /// Position along the path for traceroute probes, 0 for pings.
    pub hop_index: u8,
    pub timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplyKind {
    EchoReply,
    /// ICMP destination unreachable (port unreachable for UDP probes).
    Unreachable,
    TimeExceeded,
}

/// A matched response to a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reply {
    pub responder: Ipv4Addr,
    pub kind: ReplyKind,
    /// TTL field of the reply's IP header as received.
    pub ip_ttl: u8,
    pub rtt: Duration,
}

/// Local misconfiguration: no raw socket, no permission, interface down.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportFault {
    #[error("permission denied opening raw socket ({0}); run as root or grant CAP_NET_RAW")]
    PermissionDenied(String),
    #[error("transport I/O failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for TransportFault {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::PermissionDenied => TransportFault::PermissionDenied(e.to_string()),
            // EPERM from socket(2) surfaces with ErrorKind::Other on some targets
            _ if e.raw_os_error() == Some(1) => TransportFault::PermissionDenied(e.to_string()),
            _ => TransportFault::Io(e.to_string()),
        }
    }
}

/// Sends a probe and waits for the response that belongs to it.
///
/// `Ok(None)` means nothing arrived within the probe timeout. Errors are
/// reserved for faults of the local transport itself.
pub trait Transport: Send + Sync {
    fn send(&self, probe: &Probe) -> Result<Option<Reply>, TransportFault>;

    /// Waits between probes. Simulated transports run on virtual time.
    fn pause(&self, delay: Duration) {
        std::thread::sleep(delay);
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn send(&self, probe: &Probe) -> Result<Option<Reply>, TransportFault> {
        (**self).send(probe)
    }

    fn pause(&self, delay: Duration) {
        (**self).pause(delay)
    }
}

//! Ping and traceroute over a pluggable [`Transport`].
//!
//! A target is measured twice: a ping records the TTL of the reply as it
//! arrives back at the source, and a traceroute walk records how many hops
//! away the target sits. Both measurements are needed downstream; a missing
//! one is reported as an explicit error variant and never filled in.

mod raw;
mod transport;

use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use raw::RawTransport;
pub use transport::{Probe, ProbeMethod, ProbePurpose, Reply, ReplyKind, Transport, TransportFault};

/// Outgoing TTL for ping probes. High enough that depth never limits a ping.
pub const PING_TTL: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub max_hops: u8,
    #[serde(with = "duration_ms")]
    pub per_probe_timeout: Duration,
    /// Attempts made with each method before moving to the next.
    pub retries_per_method: u32,
    pub methods: Vec<ProbeMethod>,
    #[serde(with = "duration_ms")]
    pub inter_probe_delay: Duration,
    pub concurrency_limit: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            max_hops: 64,
            per_probe_timeout: Duration::from_secs(2),
            retries_per_method: 1,
            methods: vec![ProbeMethod::Icmp, ProbeMethod::Udp],
            inter_probe_delay: Duration::from_millis(100),
            concurrency_limit: 16,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OptionsError {
    #[error("max_hops must be at least 1")]
    ZeroHops,
    #[error("concurrency_limit must be at least 1")]
    ZeroConcurrency,
    #[error("retries_per_method must be at least 1")]
    ZeroRetries,
    #[error("at least one probe method is required")]
    NoMethods,
}

impl ProbeOptions {
    pub fn validate(&self) -> Result<(), OptionsError> {
        if self.max_hops == 0 {
            return Err(OptionsError::ZeroHops);
        }
        if self.concurrency_limit == 0 {
            return Err(OptionsError::ZeroConcurrency);
        }
        if self.retries_per_method == 0 {
            return Err(OptionsError::ZeroRetries);
        }
        if self.methods.is_empty() {
            return Err(OptionsError::NoMethods);
        }
        Ok(())
    }

    /// Most probes a single ping may send.
    pub fn ping_budget(&self) -> usize {
        self.methods.len() * self.retries_per_method as usize
    }

    /// Most probes a single traceroute may send.
    pub fn trace_budget(&self) -> usize {
        usize::from(self.max_hops) * self.ping_budget()
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingResult {
    pub reply_ttl: u8,
    pub rtt_us: u64,
    pub method: ProbeMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub position: u8,
    /// `None` when the hop stayed silent.
    pub responder: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceResult {
    /// Outgoing TTL at which the target itself answered.
    pub hop_count: u8,
    pub reached: bool,
    pub method: ProbeMethod,
    pub hops: Vec<Hop>,
}

/// Which measurement(s) a target failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProbeErrorKind {
    PingFailed,
    TraceFailed,
    BothFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub target: Ipv4Addr,
    pub ping: Option<PingResult>,
    pub trace: Option<TraceResult>,
    pub error: Option<ProbeErrorKind>,
}

impl ProbeOutcome {
    pub fn new(target: Ipv4Addr, ping: Option<PingResult>, trace: Option<TraceResult>) -> Self {
        let error = match (&ping, &trace) {
            (Some(_), Some(_)) => None,
            (None, Some(_)) => Some(ProbeErrorKind::PingFailed),
            (Some(_), None) => Some(ProbeErrorKind::TraceFailed),
            (None, None) => Some(ProbeErrorKind::BothFailed),
        };
        ProbeOutcome { target, ping, trace, error }
    }

    /// Checks the presence/error consistency of a deserialized outcome.
    pub fn is_consistent(&self) -> bool {
        *self == ProbeOutcome::new(self.target, self.ping, self.trace.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("no reply after {attempts} probes")]
    NoReply { attempts: usize },
    #[error("target not reached within {max_hops} hops")]
    NotReached { max_hops: u8, hops: Vec<Hop> },
    #[error(transparent)]
    Transport(#[from] TransportFault),
}

fn is_destination_reply(reply: &Reply, target: Ipv4Addr) -> bool {
    reply.responder == target && matches!(reply.kind, ReplyKind::EchoReply | ReplyKind::Unreachable)
}

/// Pings `target`, trying each configured method in order.
pub fn ping<T: Transport + ?Sized>(target: Ipv4Addr, transport: &T, opts: &ProbeOptions) -> Result<PingResult, ProbeError> {
    let mut attempts = 0;
    for &method in &opts.methods {
        for _ in 0..opts.retries_per_method {
            attempts += 1;
            let probe = Probe {
                target,
                method,
                purpose: ProbePurpose::Ping,
                ttl: PING_TTL,
                hop_index: 0,
                timeout: opts.per_probe_timeout,
            };
            if let Some(reply) = transport.send(&probe)? {
                if is_destination_reply(&reply, target) {
                    return Ok(PingResult {
                        reply_ttl: reply.ip_ttl,
                        rtt_us: reply.rtt.as_micros() as u64,
                        method,
                    });
                }
            }
        }
    }
    Err(ProbeError::NoReply { attempts })
}

/// Walks outgoing TTL 1..=max_hops until the target answers. Silent hops
/// are recorded and the walk continues.
pub fn traceroute<T: Transport + ?Sized>(
    target: Ipv4Addr,
    transport: &T,
    opts: &ProbeOptions,
) -> Result<TraceResult, ProbeError> {
    let mut hops = Vec::new();
    for ttl in 1..=opts.max_hops {
        let mut responder = None;
        'hop: for &method in &opts.methods {
            for _ in 0..opts.retries_per_method {
                let probe = Probe {
                    target,
                    method,
                    purpose: ProbePurpose::Trace,
                    ttl,
                    hop_index: ttl,
                    timeout: opts.per_probe_timeout,
                };
                let Some(reply) = transport.send(&probe)? else {
                    continue;
                };
                if reply.responder == target {
                    hops.push(Hop {
                        position: ttl,
                        responder: Some(target),
                    });
                    return Ok(TraceResult {
                        hop_count: ttl,
                        reached: true,
                        method,
                        hops,
                    });
                }
                responder = Some(reply.responder);
                break 'hop;
            }
        }
        hops.push(Hop { position: ttl, responder });
    }
    Err(ProbeError::NotReached {
        max_hops: opts.max_hops,
        hops,
    })
}

/// Pings then traces one target. Target-side failures are encoded in the
/// outcome; only transport faults are returned as errors.
pub fn probe_target<T: Transport + ?Sized>(
    target: Ipv4Addr,
    transport: &T,
    opts: &ProbeOptions,
) -> Result<ProbeOutcome, TransportFault> {
    let ping = match ping(target, transport, opts) {
        Ok(p) => Some(p),
        Err(ProbeError::Transport(fault)) => return Err(fault),
        Err(_) => None,
    };
    transport.pause(opts.inter_probe_delay);
    let trace = match traceroute(target, transport, opts) {
        Ok(t) => Some(t),
        Err(ProbeError::Transport(fault)) => return Err(fault),
        Err(_) => None,
    };
    Ok(ProbeOutcome::new(target, ping, trace))
}

/// A batch cut short by a transport fault.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("batch aborted: {fault}")]
pub struct BatchAbort {
    /// Position-indexed; `None` for targets that were not finished.
    pub partial: Vec<Option<ProbeOutcome>>,
    pub fault: TransportFault,
}

impl BatchAbort {
    pub fn completed(&self) -> usize {
        self.partial.iter().filter(|o| o.is_some()).count()
    }
}

pub fn probe_batch<T: Transport + ?Sized>(
    targets: &[Ipv4Addr],
    transport: &T,
    opts: &ProbeOptions,
) -> Result<Vec<ProbeOutcome>, BatchAbort> {
    probe_batch_with_progress(targets, transport, opts, |_, _| {})
}

/// Probes up to `opts.concurrency_limit` targets at once. Results come back
/// in input order. `progress(done, total)` is called after each target.
pub fn probe_batch_with_progress<T, F>(
    targets: &[Ipv4Addr],
    transport: &T,
    opts: &ProbeOptions,
    progress: F,
) -> Result<Vec<ProbeOutcome>, BatchAbort>
where
    T: Transport + ?Sized,
    F: Fn(usize, usize) + Sync,
{
    let total = targets.len();
    let slots: Mutex<Vec<Option<ProbeOutcome>>> = Mutex::new(vec![None; total]);
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let cancelled = AtomicBool::new(false);
    let fault: Mutex<Option<TransportFault>> = Mutex::new(None);
    let workers = opts.concurrency_limit.max(1).min(total.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if cancelled.load(Ordering::SeqCst) {
                    break;
                }
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= total {
                    break;
                }
                match probe_target(targets[idx], transport, opts) {
                    Ok(outcome) => {
                        slots.lock().unwrap()[idx] = Some(outcome);
                        progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
                    }
                    Err(f) => {
                        cancelled.store(true, Ordering::SeqCst);
                        fault.lock().unwrap().get_or_insert(f);
                        break;
                    }
                }
            });
        }
    });

    let slots = slots.into_inner().unwrap();
    match fault.into_inner().unwrap() {
        Some(fault) => Err(BatchAbort { partial: slots, fault }),
        None => Ok(slots.into_iter().map(|o| o.expect("every slot filled")).collect()),
    }
}

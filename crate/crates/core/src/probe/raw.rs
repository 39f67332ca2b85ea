//! Live network transport over raw ICMP and plain UDP sockets.
//!
//! ICMP probes are echo requests sent on a raw socket. UDP probes go to
//! high ports (33434 + hop index) from an ephemeral source port and are
//! answered by ICMP port-unreachable from the destination or time-exceeded
//! from routers. Every probe opens its own receive socket and filters the
//! ICMP stream for packets that quote its identifiers, so concurrent
//! workers never see each other's replies.

use std::io::{self, Read};
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::transport::{Probe, ProbeMethod, Reply, ReplyKind, Transport, TransportFault};

pub const UDP_BASE_PORT: u16 = 33434;

const ICMP_ECHO_REPLY: u8 = 0;
const ICMP_DEST_UNREACHABLE: u8 = 3;
const ICMP_ECHO_REQUEST: u8 = 8;
const ICMP_TIME_EXCEEDED: u8 = 11;
const IPPROTO_ICMP: u8 = 1;
const IPPROTO_UDP: u8 = 17;
const PAYLOAD: &[u8] = b"s7ttl-probe";

pub struct RawTransport {
    ident: u16,
    seq: AtomicU16,
}

impl RawTransport {
    /// Opens a throwaway raw socket to fail fast when privileges are missing.
    pub fn new() -> Result<Self, TransportFault> {
        open_icmp()?;
        Ok(RawTransport {
            ident: (std::process::id() & 0xffff) as u16,
            seq: AtomicU16::new(1),
        })
    }
}

fn open_icmp() -> Result<Socket, TransportFault> {
    Ok(Socket::new(Domain::IPV4, Type::RAW, Some(Protocol::ICMPV4))?)
}

/// RFC 1071 one's-complement checksum.
pub(crate) fn checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = data
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)])))
        .sum();
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub(crate) fn echo_request(ident: u16, seq: u16) -> Vec<u8> {
    let mut pkt = vec![ICMP_ECHO_REQUEST, 0, 0, 0];
    pkt.extend_from_slice(&ident.to_be_bytes());
    pkt.extend_from_slice(&seq.to_be_bytes());
    pkt.extend_from_slice(PAYLOAD);
    let sum = checksum(&pkt);
    pkt[2..4].copy_from_slice(&sum.to_be_bytes());
    pkt
}

/// What a probe expects to see quoted back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Expect {
    Echo { ident: u16, seq: u16 },
    Udp { src_port: u16, dst_port: u16 },
}

/// Parses an IPv4 datagram carrying ICMP and returns the reply if it
/// answers the probe described by `target` and `expect`.
pub(crate) fn match_reply(packet: &[u8], target: Ipv4Addr, expect: Expect) -> Option<(Ipv4Addr, ReplyKind, u8)> {
    let ihl = usize::from(packet.first()? & 0x0f) * 4;
    if packet.len() < ihl + 8 || packet.get(9) != Some(&IPPROTO_ICMP) {
        return None;
    }
    let ttl = packet[8];
    let src = Ipv4Addr::new(packet[12], packet[13], packet[14], packet[15]);
    let icmp = &packet[ihl..];
    match (icmp[0], expect) {
        (ICMP_ECHO_REPLY, Expect::Echo { ident, seq }) => {
            let got = (u16::from_be_bytes([icmp[4], icmp[5]]), u16::from_be_bytes([icmp[6], icmp[7]]));
            (src == target && got == (ident, seq)).then_some((src, ReplyKind::EchoReply, ttl))
        }
        (ICMP_TIME_EXCEEDED | ICMP_DEST_UNREACHABLE, _) => {
            let quoted = &icmp[8..];
            let qihl = usize::from(quoted.first()? & 0x0f) * 4;
            if quoted.len() < qihl + 8 {
                return None;
            }
            let qdst = Ipv4Addr::new(quoted[16], quoted[17], quoted[18], quoted[19]);
            if qdst != target {
                return None;
            }
            let inner = &quoted[qihl..];
            let belongs = match expect {
                Expect::Echo { ident, seq } => {
                    quoted[9] == IPPROTO_ICMP
                        && inner[0] == ICMP_ECHO_REQUEST
                        && u16::from_be_bytes([inner[4], inner[5]]) == ident
                        && u16::from_be_bytes([inner[6], inner[7]]) == seq
                }
                Expect::Udp { src_port, dst_port } => {
                    quoted[9] == IPPROTO_UDP
                        && u16::from_be_bytes([inner[0], inner[1]]) == src_port
                        && u16::from_be_bytes([inner[2], inner[3]]) == dst_port
                }
            };
            let kind = if icmp[0] == ICMP_TIME_EXCEEDED {
                ReplyKind::TimeExceeded
            } else {
                ReplyKind::Unreachable
            };
            belongs.then_some((src, kind, ttl))
        }
        _ => None,
    }
}

fn await_reply(
    sock: &Socket,
    target: Ipv4Addr,
    expect: Expect,
    sent_at: Instant,
    timeout: Duration,
) -> Result<Option<Reply>, TransportFault> {
    let mut buf = [0u8; 1500];
    let mut reader = sock;
    loop {
        let remaining = timeout.saturating_sub(sent_at.elapsed());
        if remaining.is_zero() {
            return Ok(None);
        }
        sock.set_read_timeout(Some(remaining))?;
        let n = match reader.read(&mut buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        };
        if let Some((responder, kind, ip_ttl)) = match_reply(&buf[..n], target, expect) {
            return Ok(Some(Reply {
                responder,
                kind,
                ip_ttl,
                rtt: sent_at.elapsed(),
            }));
        }
    }
}

impl Transport for RawTransport {
    fn send(&self, probe: &Probe) -> Result<Option<Reply>, TransportFault> {
        let rx = open_icmp()?;
        let dest = SockAddr::from(SocketAddrV4::new(probe.target, 0));
        match probe.method {
            ProbeMethod::Icmp => {
                let seq = self.seq.fetch_add(1, Ordering::Relaxed);
                rx.set_ttl_v4(u32::from(probe.ttl))?;
                let sent_at = Instant::now();
                rx.send_to(&echo_request(self.ident, seq), &dest)?;
                await_reply(&rx, probe.target, Expect::Echo { ident: self.ident, seq }, sent_at, probe.timeout)
            }
            ProbeMethod::Udp => {
                let tx = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
                tx.bind(&SockAddr::from(SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 0)))?;
                let src_port = match tx.local_addr()?.as_socket() {
                    Some(SocketAddr::V4(a)) => a.port(),
                    _ => return Err(TransportFault::Io("UDP socket has no IPv4 address".into())),
                };
                let dst_port = UDP_BASE_PORT.wrapping_add(u16::from(probe.hop_index));
                tx.set_ttl_v4(u32::from(probe.ttl))?;
                let sent_at = Instant::now();
                tx.send_to(PAYLOAD, &SockAddr::from(SocketAddrV4::new(probe.target, dst_port)))?;
                await_reply(&rx, probe.target, Expect::Udp { src_port, dst_port }, sent_at, probe.timeout)
            }
        }
    }
}

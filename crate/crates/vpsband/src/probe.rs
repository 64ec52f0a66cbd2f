//! Active round-trip probing.
//!
//! The probing procedure sends paced echo requests of two or more payload
//! sizes at a target and records each round-trip time at microsecond
//! granularity: smaller sizes first, `retries` probes per size, one probe
//! in flight at a time. Per-packet delay is what matters, so probes are
//! never sent in bursts; the pacing gap keeps the path from queueing
//! behind our own traffic.
//!
//! Two transports share the timing path: ICMP echo (raw socket, with the
//! Linux unprivileged ICMP socket as fallback) and plain UDP echo against
//! the standard echo service, which needs no privileges and doubles as the
//! scripted-responder test interface.
//!
//! Round trips are timed on the monotonic clock; wall-clock time is kept
//! only as `sent_at` metadata. Replies embed the run id, so anything stale
//! or foreign is discarded and counted as stray rather than measured.

use std::io;
use std::net::{IpAddr, SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{estimate_path, PathEstimate};
use crate::samples::{aggregate, Direction, ProbeSample, SampleSet};

pub mod responder;

const IP_HEADER_LEN: u32 = 20;
const ICMP_HEADER_LEN: u32 = 8;
const UDP_HEADER_LEN: u32 = 8;
/// Payloads at least this long carry a (run id, seq) tag for matching.
const TAG_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    IcmpEcho,
    UdpEcho,
}

impl std::fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeMode::IcmpEcho => f.write_str("icmp_echo"),
            ProbeMode::UdpEcho => f.write_str("udp_echo"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Hostname or address to probe.
    pub target: String,
    /// Payload sizes in bytes, strictly increasing, at least two.
    pub sizes: Vec<u32>,
    /// Probes per size.
    pub retries: u32,
    /// Gap between consecutive sends, seconds.
    pub pacing: f64,
    /// Per-probe reply timeout, seconds.
    pub timeout: f64,
    pub mode: ProbeMode,
    /// Destination port for udp_echo mode (standard echo service is 7).
    pub port: u16,
}

impl ProbeConfig {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            sizes: vec![64, 1064],
            retries: 10,
            pacing: 0.1,
            timeout: 2.0,
            mode: ProbeMode::IcmpEcho,
            port: 7,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.sizes.len() < 2 {
            return Err(ProbeError::InvalidConfig(format!(
                "need at least 2 probe sizes, got {}",
                self.sizes.len()
            )));
        }
        if self.sizes[0] < 1 {
            return Err(ProbeError::InvalidConfig("sizes must be >= 1 byte".into()));
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ProbeError::InvalidConfig("sizes must be strictly increasing".into()));
        }
        if self.retries < 1 {
            return Err(ProbeError::InvalidConfig("retries must be >= 1".into()));
        }
        if !(self.pacing >= 0.0) || !self.pacing.is_finite() {
            return Err(ProbeError::InvalidConfig("pacing must be >= 0".into()));
        }
        if !(self.timeout > 0.0) || !self.timeout.is_finite() {
            return Err(ProbeError::InvalidConfig("timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-size send/receive accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeOutcome {
    #[serde(rename = "size_bytes")]
    pub size: u32,
    /// Payload plus transport and IP headers: the size actually on the
    /// wire. Header overhead cancels in two-point differences as long as
    /// both sizes share a transport.
    #[serde(rename = "wire_size_bytes")]
    pub wire_size: u32,
    pub sent: u32,
    pub received: u32,
    pub lost: u32,
    /// Replies that arrived but did not match the outstanding probe.
    pub stray: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    pub per_size: Vec<SizeOutcome>,
    pub samples: SampleSet,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("cannot resolve target {target}: {reason}")]
    ResolveFailure { target: String, reason: String },
    #[error("permission denied opening an {mode} socket; retry with --mode udp-echo or raise privileges")]
    PermissionDenied { mode: ProbeMode },
    #[error("target unreachable: {0}")]
    Unreachable(String),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {reason}")]
    InsufficientData { reason: String, report: Box<ProbeReport> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

enum RecvOutcome {
    Matched { rtt: Duration },
    Lost,
}

trait Transport {
    /// Sends `payload` and waits up to `timeout` for the matching reply,
    /// discarding (and counting) strays.
    fn exchange(
        &mut self,
        payload: &[u8],
        timeout: Duration,
        stray: &mut u32,
    ) -> Result<RecvOutcome, ProbeError>;

    fn header_overhead(&self) -> u32;
}

fn resolve(target: &str, port: u16) -> Result<SocketAddr, ProbeError> {
    let candidates = (target, port).to_socket_addrs().map_err(|e| ProbeError::ResolveFailure {
        target: target.to_string(),
        reason: e.to_string(),
    })?;
    candidates
        .filter(|a| matches!(a.ip(), IpAddr::V4(_)))
        .next()
        .ok_or_else(|| ProbeError::ResolveFailure {
            target: target.to_string(),
            reason: "no IPv4 address".into(),
        })
}

/// Fills a payload of `size` bytes: 8-byte (run id, seq) tag when it fits,
/// then a seq-keyed byte pattern, so stale replies never compare equal.
fn build_payload(size: u32, run_id: u32, seq: u32) -> Vec<u8> {
    let size = size as usize;
    let mut payload = vec![0u8; size];
    let mut i = 0;
    if size >= TAG_LEN {
        payload[0..4].copy_from_slice(&run_id.to_be_bytes());
        payload[4..8].copy_from_slice(&seq.to_be_bytes());
        i = TAG_LEN;
    }
    for (offset, byte) in payload[i..].iter_mut().enumerate() {
        *byte = (seq as usize + offset) as u8;
    }
    payload
}

struct UdpTransport {
    socket: UdpSocket,
}

impl UdpTransport {
    fn connect(addr: SocketAddr) -> Result<Self, ProbeError> {
        let socket = UdpSocket::bind(("0.0.0.0", 0))?;
        socket.connect(addr)?;
        Ok(Self { socket })
    }
}

impl Transport for UdpTransport {
    fn exchange(
        &mut self,
        payload: &[u8],
        timeout: Duration,
        stray: &mut u32,
    ) -> Result<RecvOutcome, ProbeError> {
        let mut buf = [0u8; 65536];
        let sent_instant = Instant::now();
        self.socket.send(payload)?;
        let deadline = sent_instant + timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(RecvOutcome::Lost);
            }
            self.socket.set_read_timeout(Some(deadline - now))?;
            match self.socket.recv(&mut buf) {
                Ok(n) => {
                    let rtt = sent_instant.elapsed();
                    if &buf[..n] == payload {
                        return Ok(RecvOutcome::Matched { rtt });
                    }
                    *stray += 1;
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(RecvOutcome::Lost);
                }
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {
                    // ICMP port-unreachable surfaced on the connected socket
                    return Err(ProbeError::Unreachable(format!(
                        "{} refused udp echo: {e}",
                        self.socket.peer_addr().map(|a| a.to_string()).unwrap_or_default()
                    )));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn header_overhead(&self) -> u32 {
        IP_HEADER_LEN + UDP_HEADER_LEN
    }
}

struct IcmpTransport {
    socket: socket2::Socket,
    /// Raw sockets deliver the IP header with each packet; unprivileged
    /// ICMP sockets do not and rewrite the identifier.
    raw: bool,
    ident: u16,
    seq: u16,
}

impl IcmpTransport {
    fn connect(addr: SocketAddr, run_id: u32) -> Result<Self, ProbeError> {
        use socket2::{Domain, Protocol, SockAddr, Socket, Type};
        let (socket, raw) = match Socket::new(Domain::IPV4, Type::RAW, Some(Protocol::ICMPV4)) {
            Ok(s) => (s, true),
            Err(raw_err) if raw_err.kind() == io::ErrorKind::PermissionDenied => {
                match Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::ICMPV4)) {
                    Ok(s) => (s, false),
                    Err(_) => return Err(ProbeError::PermissionDenied { mode: ProbeMode::IcmpEcho }),
                }
            }
            Err(e) => return Err(e.into()),
        };
        socket.connect(&SockAddr::from(addr))?;
        Ok(Self { socket, raw, ident: run_id as u16, seq: 0 })
    }

    fn build_echo_request(&self, payload: &[u8]) -> Vec<u8> {
        let mut packet = Vec::with_capacity(ICMP_HEADER_LEN as usize + payload.len());
        packet.extend_from_slice(&[8, 0, 0, 0]); // echo request, checksum zeroed
        packet.extend_from_slice(&self.ident.to_be_bytes());
        packet.extend_from_slice(&self.seq.to_be_bytes());
        packet.extend_from_slice(payload);
        let checksum = internet_checksum(&packet);
        packet[2..4].copy_from_slice(&checksum.to_be_bytes());
        packet
    }

    /// Returns the ICMP message inside a received datagram, skipping the
    /// IP header on raw sockets.
    fn icmp_slice<'a>(&self, datagram: &'a [u8]) -> Option<&'a [u8]> {
        if !self.raw {
            return Some(datagram);
        }
        if datagram.len() < 20 {
            return None;
        }
        let ihl = usize::from(datagram[0] & 0x0f) * 4;
        datagram.get(ihl..)
    }

    fn reply_matches(&self, icmp: &[u8], payload: &[u8]) -> bool {
        if icmp.len() < ICMP_HEADER_LEN as usize || icmp[0] != 0 || icmp[1] != 0 {
            return false;
        }
        let seq = u16::from_be_bytes([icmp[6], icmp[7]]);
        if seq != self.seq {
            return false;
        }
        if self.raw {
            let ident = u16::from_be_bytes([icmp[4], icmp[5]]);
            if ident != self.ident {
                return false;
            }
        }
        &icmp[ICMP_HEADER_LEN as usize..] == payload
    }
}

impl Transport for IcmpTransport {
    fn exchange(
        &mut self,
        payload: &[u8],
        timeout: Duration,
        stray: &mut u32,
    ) -> Result<RecvOutcome, ProbeError> {
        self.seq = self.seq.wrapping_add(1);
        let packet = self.build_echo_request(payload);
        let mut buf = [std::mem::MaybeUninit::<u8>::uninit(); 65536];
        let sent_instant = Instant::now();
        self.socket.send(&packet)?;
        let deadline = sent_instant + timeout;
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(RecvOutcome::Lost);
            }
            self.socket.set_read_timeout(Some(deadline - now))?;
            match self.socket.recv(&mut buf) {
                Ok(n) => {
                    let rtt = sent_instant.elapsed();
                    let datagram =
                        unsafe { std::slice::from_raw_parts(buf.as_ptr() as *const u8, n) };
                    let Some(icmp) = self.icmp_slice(datagram) else { continue };
                    if self.reply_matches(icmp, payload) {
                        return Ok(RecvOutcome::Matched { rtt });
                    }
                    // type 3: destination unreachable quoting our request
                    if icmp.first() == Some(&3) {
                        return Err(ProbeError::Unreachable(format!(
                            "icmp destination unreachable (code {})",
                            icmp.get(1).copied().unwrap_or(0)
                        )));
                    }
                    // our own outgoing request loops back on raw sockets;
                    // only count genuinely foreign traffic
                    if icmp.first() != Some(&8) {
                        *stray += 1;
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Ok(RecvOutcome::Lost);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn header_overhead(&self) -> u32 {
        IP_HEADER_LEN + ICMP_HEADER_LEN
    }
}

/// RFC 1071 internet checksum over `data` (checksum field zeroed).
fn internet_checksum(data: &[u8]) -> u16 {
    let mut sum = 0u32;
    let mut chunks = data.chunks_exact(2);
    for chunk in &mut chunks {
        sum += u32::from(u16::from_be_bytes([chunk[0], chunk[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(u16::from_be_bytes([*last, 0]));
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Runs the full probing procedure described by `config`.
///
/// Sizes are probed in ascending order, `retries` probes each, one probe
/// in flight at a time with `pacing` seconds between sends. Lost probes
/// are counted, never fabricated as delays; a size that loses every probe
/// is excluded from the sample set with a warning.
pub fn run_probe(config: &ProbeConfig) -> Result<ProbeReport, ProbeError> {
    config.validate()?;
    let addr = resolve(&config.target, config.port)?;
    let run_id: u32 = std::process::id() ^ (unix_now().to_bits() as u32);
    let mut transport: Box<dyn Transport> = match config.mode {
        ProbeMode::UdpEcho => Box::new(UdpTransport::connect(addr)?),
        ProbeMode::IcmpEcho => Box::new(IcmpTransport::connect(addr, run_id)?),
    };

    let mut sizes = config.sizes.clone();
    sizes.sort_unstable();

    let timeout = Duration::from_secs_f64(config.timeout);
    let pacing = Duration::from_secs_f64(config.pacing);
    let mut samples = SampleSet::new(format!("probe:{}:{}", config.mode, config.target));
    let mut per_size = Vec::with_capacity(sizes.len());
    let mut warnings = Vec::new();
    let mut probe_index = 0u64;

    for (size_pos, &size) in sizes.iter().enumerate() {
        let mut outcome = SizeOutcome {
            size,
            wire_size: size + transport.header_overhead(),
            sent: 0,
            received: 0,
            lost: 0,
            stray: 0,
        };
        for retry in 0..config.retries {
            let payload = build_payload(size, run_id, probe_index as u32);
            let sent_at = unix_now();
            outcome.sent += 1;
            match transport.exchange(&payload, timeout, &mut outcome.stray)? {
                RecvOutcome::Matched { rtt } => {
                    outcome.received += 1;
                    samples.samples.push(ProbeSample::new(
                        size,
                        rtt.as_secs_f64(),
                        Direction::RoundTrip,
                        probe_index,
                        sent_at,
                    ));
                }
                RecvOutcome::Lost => outcome.lost += 1,
            }
            probe_index += 1;
            let last_probe = size_pos == sizes.len() - 1 && retry == config.retries - 1;
            if !last_probe && !pacing.is_zero() {
                std::thread::sleep(pacing);
            }
        }
        if outcome.received == 0 {
            warnings.push(format!(
                "size {size}: all {} probe(s) lost; size excluded from estimation",
                outcome.sent
            ));
        }
        per_size.push(outcome);
    }

    Ok(ProbeReport { config: config.clone(), per_size, samples, warnings })
}

/// Note attached to every round-trip estimate: the procedure nominally
/// measures the outgoing channel, but an RTT inevitably contains the
/// reverse path too.
pub const RTT_LABEL_NOTE: &str =
    "round-trip estimate, labeled outgoing-channel; reverse-path delay is included in the measurement";

/// Probes and estimates in one step: samples are aggregated per size and
/// fed through the path estimator.
pub fn probe_and_estimate(config: &ProbeConfig) -> Result<(ProbeReport, PathEstimate), ProbeError> {
    let report = run_probe(config)?;
    let usable_sizes = report.samples.sizes().len();
    if usable_sizes < 2 {
        return Err(ProbeError::InsufficientData {
            reason: format!("estimation needs 2 sizes with replies, got {usable_sizes}"),
            report: Box::new(report),
        });
    }
    let agg = aggregate(&report.samples).expect("non-empty by the size check");
    match estimate_path(&agg.stats) {
        Ok(mut estimate) => {
            estimate.warnings.extend(agg.warnings);
            estimate.warnings.push(RTT_LABEL_NOTE.to_string());
            Ok((report, estimate))
        }
        Err(e) => Err(ProbeError::InsufficientData {
            reason: e.to_string(),
            report: Box::new(report),
        }),
    }
}

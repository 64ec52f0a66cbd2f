//! RIPE Test Box (TTM) log ingestion.
//!
//! A measurement is reconstructed from two text dumps captured at the path
//! ends: the sending box logs `SNDP` lines carrying the packet size and a
//! sequence number, the receiving box logs `RCDP` lines carrying the
//! one-way delay and the same sequence number. Joining the two on the
//! sequence number yields (size, delay) observations per direction.
//!
//! The receiver's `delay` field is trusted as the GPS-corrected one-way
//! delay; send/arrival timestamps come from different clocks and are kept
//! only as metadata.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::samples::{Direction, ProbeSample, SampleSet};

/// One sending-box log line, e.g.
/// `SNDP 9 1240234684 -h tt01.ripe.net -p 6000 -n 1024 -s 1039148464`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SndpRecord {
    pub version: u32,
    /// Send time, integer seconds since the Unix epoch.
    pub unix_time: u64,
    /// Payload size in bytes (`-n`), >= 1.
    pub size: u32,
    /// Sequence number (`-s`).
    pub seq: u64,
    /// Target host (`-h`), when present.
    pub target_host: Option<String>,
    /// Target port (`-p`), when present.
    pub port: Option<u16>,
    /// Every flag/value pair in original order, known and unknown alike.
    pub flags: Vec<(String, String)>,
}

impl fmt::Display for SndpRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SNDP {} {}", self.version, self.unix_time)?;
        for (flag, value) in &self.flags {
            write!(f, " {flag} {value}")?;
        }
        Ok(())
    }
}

/// One receiving-box log line, e.g.
/// `RCDP 12 2 89.186.245.200 60322 193.0.0.228 6000 1240234684.785799
/// 0.044084 0X2107 0X2107 1039148464 0.000002 0.000008`.
#[derive(Debug, Clone, PartialEq)]
pub struct RcdpRecord {
    /// Two leading integers of unspecified meaning, preserved as-is.
    pub leading: [i64; 2],
    pub source_addr: String,
    pub source_port: u16,
    pub dest_addr: String,
    pub dest_port: u16,
    /// Arrival timestamp, seconds since the Unix epoch with fraction.
    pub arrival_time: f64,
    /// One-way delay in seconds, >= 0. Authoritative.
    pub delay: f64,
    /// Two hex flag fields, preserved opaquely.
    pub hex_flags: [String; 2],
    pub seq: u64,
    /// Two trailing clock-precision fields, seconds.
    pub precision: [f64; 2],
    /// Tokens after the last defined field, preserved verbatim.
    pub trailing: Vec<String>,
}

/// A sender record joined with its receiver record on the sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub seq: u64,
    /// Bytes, from the SNDP side.
    pub size: u32,
    /// Seconds, from the RCDP side.
    pub delay: f64,
    pub send_time: u64,
    pub arrival_time: f64,
    pub direction: Direction,
}

/// Line-level parse failure; the file readers add file and line context.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct MalformedLine {
    pub reason: String,
    /// Zero-based index of the offending whitespace token, when known.
    pub token: Option<usize>,
}

impl fmt::Display for MalformedLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.token {
            Some(i) => write!(f, "{} (token {i})", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

fn malformed(reason: impl Into<String>, token: Option<usize>) -> MalformedLine {
    MalformedLine { reason: reason.into(), token }
}

#[derive(Debug, Error)]
pub enum RipeError {
    #[error("{file}:{line}: {source}")]
    Malformed { file: String, line: usize, source: MalformedLine },
    #[error("{0}")]
    InsufficientData(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses one SNDP line. Flag/value pairs may appear in any order;
/// `-n` (size) and `-s` (sequence) are mandatory, everything else is
/// preserved in `flags`.
pub fn parse_sndp(line: &str) -> Result<SndpRecord, MalformedLine> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(malformed("empty line", None));
    }
    if tokens[0] != "SNDP" {
        return Err(malformed(format!("expected tag SNDP, got {:?}", tokens[0]), Some(0)));
    }
    if tokens.len() < 3 {
        return Err(malformed("missing version/timestamp fields", Some(tokens.len())));
    }
    let version: u32 = tokens[1]
        .parse()
        .map_err(|_| malformed(format!("non-numeric version {:?}", tokens[1]), Some(1)))?;
    let unix_time: u64 = tokens[2]
        .parse()
        .map_err(|_| malformed(format!("non-numeric timestamp {:?}", tokens[2]), Some(2)))?;

    let mut flags = Vec::new();
    let mut i = 3;
    while i < tokens.len() {
        let flag = tokens[i];
        if !flag.starts_with('-') {
            return Err(malformed(format!("expected a -flag, got {flag:?}"), Some(i)));
        }
        let value = tokens
            .get(i + 1)
            .ok_or_else(|| malformed(format!("flag {flag} has no value"), Some(i)))?;
        flags.push((flag.to_string(), value.to_string()));
        i += 2;
    }

    let lookup = |name: &str| flags.iter().find(|(f, _)| f == name).map(|(_, v)| v.as_str());
    let size_str =
        lookup("-n").ok_or_else(|| malformed("missing mandatory -n (size) flag", None))?;
    let size: u32 = size_str
        .parse()
        .map_err(|_| malformed(format!("non-numeric size {size_str:?}"), None))?;
    if size < 1 {
        return Err(malformed("size (-n) must be >= 1", None));
    }
    let seq_str =
        lookup("-s").ok_or_else(|| malformed("missing mandatory -s (sequence) flag", None))?;
    let seq: u64 = seq_str
        .parse()
        .map_err(|_| malformed(format!("non-numeric sequence {seq_str:?}"), None))?;
    let target_host = lookup("-h").map(str::to_string);
    let port = match lookup("-p") {
        Some(p) => Some(
            p.parse::<u16>().map_err(|_| malformed(format!("non-numeric port {p:?}"), None))?,
        ),
        None => None,
    };

    Ok(SndpRecord { version, unix_time, size, seq, target_host, port, flags })
}

/// Parses one RCDP line positionally: tag, two integers, source
/// address/port, destination address/port, arrival timestamp, delay, two
/// hex fields, sequence, two precision fields. Anything after that is
/// kept in `trailing`.
pub fn parse_rcdp(line: &str) -> Result<RcdpRecord, MalformedLine> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(malformed("empty line", None));
    }
    if tokens[0] != "RCDP" {
        return Err(malformed(format!("expected tag RCDP, got {:?}", tokens[0]), Some(0)));
    }
    if tokens.len() < 14 {
        return Err(malformed(
            format!("expected 14 fields, got {}", tokens.len()),
            Some(tokens.len()),
        ));
    }
    fn num<T: std::str::FromStr>(tokens: &[&str], i: usize, what: &str) -> Result<T, MalformedLine> {
        tokens[i]
            .parse::<T>()
            .map_err(|_| malformed(format!("non-numeric {what} {:?}", tokens[i]), Some(i)))
    }
    let leading = [num::<i64>(&tokens, 1, "field")?, num::<i64>(&tokens, 2, "field")?];
    let source_addr = tokens[3].to_string();
    let source_port: u16 = num(&tokens, 4, "source port")?;
    let dest_addr = tokens[5].to_string();
    let dest_port: u16 = num(&tokens, 6, "destination port")?;
    let arrival_time: f64 = num(&tokens, 7, "arrival timestamp")?;
    if !arrival_time.is_finite() {
        return Err(malformed("arrival timestamp must be finite", Some(7)));
    }
    let delay: f64 = num(&tokens, 8, "delay")?;
    if !(delay >= 0.0) || !delay.is_finite() {
        return Err(malformed(format!("delay must be finite and >= 0, got {delay}"), Some(8)));
    }
    let hex_flags = [tokens[9].to_string(), tokens[10].to_string()];
    let seq: u64 = num(&tokens, 11, "sequence")?;
    let precision = [num::<f64>(&tokens, 12, "precision")?, num::<f64>(&tokens, 13, "precision")?];
    let trailing = tokens[14..].iter().map(|t| t.to_string()).collect::<Vec<_>>();
    Ok(RcdpRecord {
        leading,
        source_addr,
        source_port,
        dest_addr,
        dest_port,
        arrival_time,
        delay,
        hex_flags,
        seq,
        precision,
        trailing,
    })
}

/// Records parsed from one dump file, with skip/warning bookkeeping.
#[derive(Debug, Clone)]
pub struct IngestedFile<T> {
    pub records: Vec<T>,
    /// Lines whose tag did not match the expected record type.
    pub skipped_foreign: usize,
    pub warnings: Vec<String>,
}

fn read_tagged<T, R: BufRead>(
    reader: R,
    file_label: &str,
    tag: &str,
    parse: impl Fn(&str) -> Result<T, MalformedLine>,
) -> Result<IngestedFile<T>, RipeError> {
    let mut records = Vec::new();
    let mut skipped_foreign = 0usize;
    let mut warnings = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.split_whitespace().next() != Some(tag) {
            skipped_foreign += 1;
            continue;
        }
        let record = parse(trimmed).map_err(|source| RipeError::Malformed {
            file: file_label.to_string(),
            line: line_no,
            source,
        })?;
        records.push(record);
    }
    if skipped_foreign > 0 {
        warnings.push(format!(
            "{file_label}: skipped {skipped_foreign} line(s) without the {tag} tag"
        ));
    }
    Ok(IngestedFile { records, skipped_foreign, warnings })
}

/// Reads a sender dump, keeping only SNDP lines (others are counted and
/// skipped; real TTM dumps interleave record types).
pub fn read_sndp<R: BufRead>(reader: R, file_label: &str) -> Result<IngestedFile<SndpRecord>, RipeError> {
    read_tagged(reader, file_label, "SNDP", parse_sndp)
}

/// Reads a receiver dump, keeping only RCDP lines.
pub fn read_rcdp<R: BufRead>(reader: R, file_label: &str) -> Result<IngestedFile<RcdpRecord>, RipeError> {
    let mut ingested = read_tagged(reader, file_label, "RCDP", parse_rcdp)?;
    let with_trailing = ingested.records.iter().filter(|r| !r.trailing.is_empty()).count();
    if with_trailing > 0 {
        ingested.warnings.push(format!(
            "{file_label}: {with_trailing} RCDP line(s) carry tokens past the defined fields; ignored"
        ));
    }
    Ok(ingested)
}

pub fn read_sndp_file(path: impl AsRef<Path>) -> Result<IngestedFile<SndpRecord>, RipeError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_sndp(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn read_rcdp_file(path: impl AsRef<Path>) -> Result<IngestedFile<RcdpRecord>, RipeError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_rcdp(std::io::BufReader::new(file), &path.display().to_string())
}

/// Result of joining sender and receiver records on sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    /// Pairs ordered by sender time, then sequence.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_send: usize,
    pub unmatched_recv: usize,
    pub warnings: Vec<String>,
}

/// Joins records on the sequence number. Duplicate sequence numbers are
/// resolved deterministically — earliest send time on the sender side,
/// earliest arrival on the receiver side — so the outcome does not depend
/// on input order.
pub fn match_pairs(
    send: &[SndpRecord],
    recv: &[RcdpRecord],
    direction: Direction,
) -> MatchOutcome {
    use std::collections::BTreeMap;

    let mut warnings = Vec::new();

    let mut send_by_seq: BTreeMap<u64, &SndpRecord> = BTreeMap::new();
    let mut dup_send = 0usize;
    for record in send {
        match send_by_seq.entry(record.seq) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(record);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                dup_send += 1;
                if sndp_key(record) < sndp_key(e.get()) {
                    e.insert(record);
                }
            }
        }
    }
    let mut recv_by_seq: BTreeMap<u64, &RcdpRecord> = BTreeMap::new();
    let mut dup_recv = 0usize;
    for record in recv {
        match recv_by_seq.entry(record.seq) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(record);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                dup_recv += 1;
                if rcdp_before(record, e.get()) {
                    e.insert(record);
                }
            }
        }
    }
    if dup_send > 0 {
        warnings.push(format!("{dup_send} duplicate sequence number(s) on the sending side; kept earliest"));
    }
    if dup_recv > 0 {
        warnings.push(format!("{dup_recv} duplicate sequence number(s) on the receiving side; kept earliest arrival"));
    }

    let mut pairs = Vec::new();
    let mut unmatched_send = 0usize;
    for (seq, s) in &send_by_seq {
        match recv_by_seq.get(seq) {
            Some(r) => pairs.push(MatchedPair {
                seq: *seq,
                size: s.size,
                delay: r.delay,
                send_time: s.unix_time,
                arrival_time: r.arrival_time,
                direction,
            }),
            None => unmatched_send += 1,
        }
    }
    let unmatched_recv = recv_by_seq.keys().filter(|seq| !send_by_seq.contains_key(seq)).count();
    pairs.sort_by_key(|p| (p.send_time, p.seq));
    MatchOutcome { pairs, unmatched_send, unmatched_recv, warnings }
}

fn sndp_key(r: &SndpRecord) -> (u64, u32, Option<&String>, Option<u16>, u32) {
    (r.unix_time, r.size, r.target_host.as_ref(), r.port, r.version)
}

/// Deterministic "earliest arrival" order for duplicate resolution.
fn rcdp_before(a: &RcdpRecord, b: &RcdpRecord) -> bool {
    a.arrival_time
        .total_cmp(&b.arrival_time)
        .then(a.delay.total_cmp(&b.delay))
        .then(a.source_port.cmp(&b.source_port))
        .is_lt()
}

/// One sample per matched pair; `sent_at` carries the sender's clock.
pub fn pairs_to_samples(pairs: &[MatchedPair], meta: impl Into<String>) -> SampleSet {
    let samples = pairs
        .iter()
        .map(|p| ProbeSample::new(p.size, p.delay, p.direction, p.seq, p.send_time as f64))
        .collect();
    SampleSet { samples, meta: meta.into() }
}

/// Adjacency pairing over a two-size sample set: every large-size sample
/// is paired with the small-size sample nearest in send time and the
/// per-pair delay differences are averaged. Mirrors averaging consecutive
/// size pairs instead of aggregating each size independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencyDifference {
    pub size_small: u32,
    pub size_large: u32,
    /// Mean of per-pair `D(large) - D(small)`, seconds. May be negative
    /// on noisy data.
    pub mean_difference: f64,
    pub n_pairs: usize,
}

pub fn adjacent_mean_difference(set: &SampleSet) -> Result<AdjacencyDifference, RipeError> {
    let sizes = set.sizes();
    if sizes.len() < 2 {
        return Err(RipeError::InsufficientData(format!(
            "adjacency pairing needs two packet sizes, found {}",
            sizes.len()
        )));
    }
    let (small, large) = (sizes[0], *sizes.last().expect("non-empty"));
    let mut small_samples: Vec<&ProbeSample> =
        set.samples.iter().filter(|s| s.size == small).collect();
    small_samples.sort_by(|a, b| a.sent_at.total_cmp(&b.sent_at));
    let mut diffs = Vec::new();
    for sample in set.samples.iter().filter(|s| s.size == large) {
        let nearest = small_samples
            .iter()
            .min_by(|a, b| {
                (a.sent_at - sample.sent_at)
                    .abs()
                    .total_cmp(&(b.sent_at - sample.sent_at).abs())
            })
            .expect("at least one small sample");
        diffs.push(sample.delay - nearest.delay);
    }
    let n_pairs = diffs.len();
    let mean_difference = diffs.iter().sum::<f64>() / n_pairs as f64;
    Ok(AdjacencyDifference { size_small: small, size_large: large, mean_difference, n_pairs })
}

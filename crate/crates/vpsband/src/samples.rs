//! Canonical representation and aggregation of delay observations.
//!
//! Every producer (active probe, log ingest, simulator) emits
//! [`ProbeSample`]s collected into a [`SampleSet`]; estimation consumes the
//! per-size [`SizeDelayStats`] produced by [`aggregate`]. Delays are stored
//! as `f64` seconds, which keeps sub-microsecond precision for any delay up
//! to well beyond 10 s.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which way the measured delay ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    RoundTrip,
    OneWayForward,
    OneWayReverse,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::RoundTrip => "round_trip",
            Direction::OneWayForward => "one_way_forward",
            Direction::OneWayReverse => "one_way_reverse",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round_trip" => Ok(Direction::RoundTrip),
            "one_way_forward" => Ok(Direction::OneWayForward),
            "one_way_reverse" => Ok(Direction::OneWayReverse),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

/// One delay observation: a packet of `size` bytes took `delay` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    /// Packet size in bytes, >= 1.
    #[serde(rename = "size_bytes")]
    pub size: u32,
    /// Observed delay in seconds, >= 0.
    #[serde(rename = "delay_s")]
    pub delay: f64,
    pub direction: Direction,
    /// Opaque sequence identifier, unique per (size, direction) within a set.
    pub seq: u64,
    /// Wall-clock send time, seconds since the Unix epoch.
    pub sent_at: f64,
}

impl ProbeSample {
    pub fn new(size: u32, delay: f64, direction: Direction, seq: u64, sent_at: f64) -> Self {
        Self { size, delay, direction, seq, sent_at }
    }
}

/// An ordered collection of samples from one source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<ProbeSample>,
    /// Source descriptor: probe target, log file pair, simulation id.
    pub meta: String,
}

impl SampleSet {
    pub fn new(meta: impl Into<String>) -> Self {
        Self { samples: Vec::new(), meta: meta.into() }
    }

    pub fn with_samples(meta: impl Into<String>, samples: Vec<ProbeSample>) -> Self {
        Self { samples, meta: meta.into() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct packet sizes present, ascending.
    pub fn sizes(&self) -> Vec<u32> {
        let mut sizes: Vec<u32> = self.samples.iter().map(|s| s.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

/// Per-packet-size aggregate over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDelayStats {
    #[serde(rename = "size_bytes")]
    pub size: u32,
    pub count: usize,
    /// Minimum observed delay for this size, seconds.
    #[serde(rename = "d_min_s")]
    pub d_min: f64,
    /// Arithmetic mean delay for this size, seconds.
    #[serde(rename = "d_mean_s")]
    pub d_mean: f64,
    /// Sample standard deviation (0 when count < 2), seconds.
    #[serde(rename = "d_stddev_s")]
    pub d_stddev: f64,
}

/// Result of [`aggregate`]: per-size stats plus non-fatal warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    /// One record per distinct size, ascending by size.
    pub stats: Vec<SizeDelayStats>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SamplesError {
    #[error("empty sample set")]
    EmptySet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error("csv row {row}: {reason}")]
    Csv { row: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Neumaier compensated summation; keeps aggregates stable for large sets.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Collapses a sample set into one [`SizeDelayStats`] per distinct size.
///
/// Delays are sorted per size before summation, so the result does not
/// depend on the order samples arrived in. Sizes with fewer than five
/// samples keep their stats but produce a warning, since means over very
/// few probes are fragile.
pub fn aggregate(set: &SampleSet) -> Result<Aggregation, SamplesError> {
    if set.samples.is_empty() {
        return Err(SamplesError::EmptySet);
    }
    for (index, s) in set.samples.iter().enumerate() {
        if s.size < 1 {
            return Err(SamplesError::InvalidSample { index, reason: "size must be >= 1".into() });
        }
        if !(s.delay >= 0.0) {
            return Err(SamplesError::InvalidSample {
                index,
                reason: format!("delay must be >= 0, got {}", s.delay),
            });
        }
    }

    let mut by_size: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in &set.samples {
        by_size.entry(s.size).or_default().push(s.delay);
    }

    let mut stats = Vec::with_capacity(by_size.len());
    let mut warnings = Vec::new();
    for (size, mut delays) in by_size {
        delays.sort_by(|a, b| a.partial_cmp(b).expect("delays are finite"));
        let count = delays.len();
        let d_min = delays[0];
        let d_mean = compensated_sum(delays.iter().copied()) / count as f64;
        let d_stddev = if count < 2 {
            0.0
        } else {
            let ss = compensated_sum(delays.iter().map(|d| (d - d_mean) * (d - d_mean)));
            (ss / (count - 1) as f64).sqrt()
        };
        if count < 5 {
            warnings.push(format!(
                "size {size}: only {count} sample(s); means over fewer than 5 probes are unreliable"
            ));
        }
        stats.push(SizeDelayStats { size, count, d_min, d_mean, d_stddev });
    }
    Ok(Aggregation { stats, warnings })
}

/// Drops samples whose delay exceeds `median + k * IQR` within their size
/// group. The per-size minimum can never be removed (it sits at or below
/// the median). Off by default in every pipeline; estimation normally runs
/// on raw means.
pub fn filter_outliers(set: &SampleSet, k: f64) -> Result<SampleSet, SamplesError> {
    if !(k > 0.0) {
        return Err(SamplesError::InvalidParameter(format!("k must be > 0, got {k}")));
    }
    let mut by_size: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in &set.samples {
        by_size.entry(s.size).or_default().push(s.delay);
    }
    let mut threshold: BTreeMap<u32, f64> = BTreeMap::new();
    for (size, delays) in &mut by_size {
        delays.sort_by(|a, b| a.partial_cmp(b).expect("delays are finite"));
        let median = percentile_sorted(delays, 0.50);
        let iqr = percentile_sorted(delays, 0.75) - percentile_sorted(delays, 0.25);
        threshold.insert(*size, median + k * iqr);
    }
    let samples = set
        .samples
        .iter()
        .filter(|s| s.delay <= threshold[&s.size])
        .cloned()
        .collect();
    Ok(SampleSet { samples, meta: set.meta.clone() })
}

/// Linear-interpolation percentile of an ascending slice (the common
/// "R-7" definition), `q` in [0, 1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// CSV interchange header: `size_bytes,delay_s,direction,seq,sent_at`.
pub const CSV_HEADER: &str = "size_bytes,delay_s,direction,seq,sent_at";

/// Writes the set in the CSV interchange format (UTF-8, LF line endings).
pub fn write_csv<W: io::Write>(set: &SampleSet, writer: W) -> Result<(), SamplesError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for s in &set.samples {
        w.serialize(s).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample set from the CSV interchange format.
///
/// `meta` becomes the set's source descriptor; row numbers in errors count
/// the header as row 1.
pub fn read_csv<R: io::Read>(reader: R, meta: impl Into<String>) -> Result<SampleSet, SamplesError> {
    let mut r = csv::ReaderBuilder::new().from_reader(reader);
    let mut samples = Vec::new();
    for (i, record) in r.deserialize::<ProbeSample>().enumerate() {
        let row = i + 2;
        let sample: ProbeSample = record.map_err(csv_error)?;
        if sample.size < 1 {
            return Err(SamplesError::Csv { row, reason: "size_bytes must be >= 1".into() });
        }
        if !(sample.delay >= 0.0) {
            return Err(SamplesError::Csv { row, reason: "delay_s must be >= 0".into() });
        }
        samples.push(sample);
    }
    Ok(SampleSet { samples, meta: meta.into() })
}

pub fn write_csv_file(set: &SampleSet, path: impl AsRef<Path>) -> Result<(), SamplesError> {
    let file = std::fs::File::create(path)?;
    write_csv(set, io::BufWriter::new(file))
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<SampleSet, SamplesError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(io::BufReader::new(file), path.display().to_string())
}

fn csv_error(err: csv::Error) -> SamplesError {
    let row = match err.position() {
        Some(pos) => pos.line() as usize,
        None => 0,
    };
    SamplesError::Csv { row, reason: err.to_string() }
}

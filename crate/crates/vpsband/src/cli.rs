//! Command-line front end.
//!
//! Five subcommands cover the workflows: `probe` (active round-trip
//! measurement), `estimate` (samples file to path estimate), `ingest`
//! (RIPE Test Box dump pair to one-way samples and estimate), `simulate`
//! (synthetic path with ground-truth comparison) and `fit` (delay-vs-size
//! regression). Every command prints either a human summary or a JSON
//! envelope (`--format`, or the `VPSBAND_FORMAT` environment variable).
//!
//! Exit codes are a stable contract: 0 success, 1 operational/IO error,
//! 2 invalid input or insufficient data.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::estimators::{
    affine_fit_stats, estimate_path, AffineFit, DelayStat, EstimatorError, PathEstimate,
};
use crate::pathsim::{self, GroundTruth, PathSpec, SimError};
use crate::probe::{self, ProbeConfig, ProbeError, ProbeMode, SizeOutcome};
use crate::ripe::{self, RipeError};
use crate::samples::{self, Direction, SamplesError, SizeDelayStats};

#[derive(Debug, Parser)]
#[command(
    name = "vpsband",
    version,
    about = "Available bandwidth, capacity and minimal path delay from packet-size/delay measurements"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format (also via VPSBAND_FORMAT)
    #[arg(long, global = true, env = "VPSBAND_FORMAT", value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Send paced echo probes of two or more sizes and estimate the path
    Probe(ProbeArgs),
    /// Estimate available bandwidth/capacity from a samples CSV file
    Estimate(EstimateArgs),
    /// Parse a RIPE Test Box sender/receiver dump pair into one-way samples
    Ingest(IngestArgs),
    /// Run the path simulator and compare the estimate with ground truth
    Simulate(SimulateArgs),
    /// Fit the delay-vs-size line and report slope, intercept and r²
    Fit(FitArgs),
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// Hostname or address to probe
    target: String,
    /// Payload sizes in bytes, strictly increasing
    #[arg(long, value_delimiter = ',', default_values_t = vec![64u32, 1064])]
    sizes: Vec<u32>,
    /// Probes per size
    #[arg(long, default_value_t = 10)]
    retries: u32,
    /// Gap between sends, seconds
    #[arg(long, default_value_t = 0.1)]
    pacing: f64,
    /// Reply timeout per probe, seconds
    #[arg(long, default_value_t = 2.0)]
    timeout: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::IcmpEcho)]
    mode: ModeArg,
    /// Destination port for udp-echo mode
    #[arg(long, default_value_t = 7)]
    port: u16,
    /// Write the collected samples as interchange CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    IcmpEcho,
    UdpEcho,
}

impl From<ModeArg> for ProbeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::IcmpEcho => ProbeMode::IcmpEcho,
            ModeArg::UdpEcho => ProbeMode::UdpEcho,
        }
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Samples CSV in the interchange format
    samples_file: PathBuf,
    /// two-point uses the smallest and largest size; fit regresses all sizes
    #[arg(long, value_enum, default_value_t = EstimateMode::Auto)]
    mode: EstimateMode,
    /// Restrict the estimate to one statistic
    #[arg(long, value_enum, default_value_t = StatArg::Both)]
    stat: StatArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimateMode {
    /// two-point for two sizes, fit for more
    Auto,
    TwoPoint,
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StatArg {
    /// mean-delay available bandwidth and min-delay capacity
    Both,
    /// min-delay results only (capacity, d_min)
    Min,
    /// mean-delay results only (available bandwidth)
    Mean,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Sending-box dump (SNDP lines)
    send_file: PathBuf,
    /// Receiving-box dump (RCDP lines)
    recv_file: PathBuf,
    /// Direction label for the matched one-way samples
    #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
    direction: DirectionArg,
    /// per-size aggregates each size independently; adjacent averages
    /// nearest-in-time large/small delay differences
    #[arg(long, value_enum, default_value_t = PairingArg::PerSize)]
    pairing: PairingArg,
    /// Write matched samples as interchange CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Forward,
    Reverse,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Forward => Direction::OneWayForward,
            DirectionArg::Reverse => Direction::OneWayReverse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PairingArg {
    PerSize,
    Adjacent,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Path description, TOML (see README for the schema)
    path_config: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![100u32, 1024])]
    sizes: Vec<u32>,
    /// Probes per size
    #[arg(long, default_value_t = 10)]
    probes: u32,
    /// Simulated gap between sends, seconds
    #[arg(long, default_value_t = 0.1)]
    pacing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write simulated samples as interchange CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Samples CSV in the interchange format
    samples_file: PathBuf,
    /// Which per-size statistic to regress
    #[arg(long, value_enum, default_value_t = FitStatArg::Min)]
    stat: FitStatArg,
    /// Emit the fitted (size, delay) points for external plotting
    #[arg(long)]
    dump_points: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitStatArg {
    Min,
    Mean,
}

impl From<FitStatArg> for DelayStat {
    fn from(s: FitStatArg) -> Self {
        match s {
            FitStatArg::Min => DelayStat::Min,
            FitStatArg::Mean => DelayStat::Mean,
        }
    }
}

/// Terminal error: exit code, stable kind tag, human message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into() }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        let msg = e.to_string();
        match e {
            ProbeError::ResolveFailure { .. } => CliError::new(1, "ResolveFailure", msg),
            ProbeError::PermissionDenied { .. } => CliError::new(1, "PermissionDenied", msg),
            ProbeError::Unreachable(_) => CliError::new(1, "Unreachable", msg),
            ProbeError::InvalidConfig(_) => CliError::new(2, "InvalidConfig", msg),
            ProbeError::InsufficientData { .. } => CliError::new(2, "InsufficientData", msg),
            ProbeError::Io(_) => CliError::new(1, "Io", msg),
        }
    }
}

impl From<SamplesError> for CliError {
    fn from(e: SamplesError) -> Self {
        let msg = e.to_string();
        match e {
            SamplesError::EmptySet => CliError::new(1, "EmptySet", msg),
            SamplesError::Csv { .. } => CliError::new(1, "MalformedCsv", msg),
            SamplesError::InvalidSample { .. } => CliError::new(1, "InvalidSample", msg),
            SamplesError::InvalidParameter(_) => CliError::new(2, "InvalidParameter", msg),
            SamplesError::Io(_) => CliError::new(1, "Io", msg),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        let msg = e.to_string();
        match e {
            EstimatorError::InsufficientData(_) => CliError::new(2, "InsufficientData", msg),
            EstimatorError::DegenerateInput(_) => CliError::new(2, "DegenerateInput", msg),
            _ => CliError::new(2, "InvalidInput", msg),
        }
    }
}

impl From<RipeError> for CliError {
    fn from(e: RipeError) -> Self {
        let msg = e.to_string();
        match e {
            RipeError::Malformed { .. } => CliError::new(1, "MalformedLine", msg),
            RipeError::InsufficientData(_) => CliError::new(2, "InsufficientData", msg),
            RipeError::Io(_) => CliError::new(1, "Io", msg),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let msg = e.to_string();
        match e {
            SimError::UnstableHop { .. } => CliError::new(1, "UnstableHop", msg),
            SimError::InvalidParameter(_) => CliError::new(2, "InvalidParameter", msg),
            SimError::InvalidPath(_) | SimError::Config(_) => CliError::new(1, "InvalidPath", msg),
            SimError::Io(_) => CliError::new(1, "Io", msg),
        }
    }
}

/// Affine fit plus its derived capacity, as printed.
#[derive(Debug, Clone, Serialize)]
pub struct FitOutput {
    #[serde(flatten)]
    pub fit: AffineFit,
    /// `8 / slope`, bits/s; absent for non-positive slopes.
    #[serde(rename = "capacity_bps", skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    pub stat: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub metric: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated: Option<f64>,
    pub truth: f64,
    /// `|estimated - truth| / truth`; absent when the estimate is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchSummary {
    pub pairs: usize,
    pub unmatched_send: usize,
    pub unmatched_recv: usize,
    pub pairing: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency_pairs: Option<usize>,
    #[serde(rename = "adjacency_mean_difference_s", skip_serializing_if = "Option::is_none")]
    pub adjacency_mean_difference: Option<f64>,
}

/// Everything a command prints, in one machine-readable bundle. Every
/// numeric field name carries its unit.
#[derive(Debug, Serialize)]
pub struct OutputEnvelope {
    pub command: &'static str,
    pub inputs: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<Vec<SizeDelayStats>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_size: Option<Vec<SizeOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ComparisonRow>>,
    #[serde(rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_summary: Option<MatchSummary>,
    /// (size_bytes, delay_s) pairs behind a fit, for external plotting.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<(u32, f64)>>,
    pub warnings: Vec<String>,
}

impl OutputEnvelope {
    fn new(command: &'static str, inputs: serde_json::Value) -> Self {
        Self {
            command,
            inputs,
            stats: None,
            per_size: None,
            estimate: None,
            fit: None,
            ground_truth: None,
            comparison: None,
            match_summary: None,
            points: None,
            warnings: Vec::new(),
        }
    }

    /// Attaches an estimate, hoisting its warnings into the envelope.
    fn set_estimate(&mut self, mut estimate: PathEstimate) {
        self.warnings.append(&mut estimate.warnings);
        self.estimate = Some(estimate);
    }
}

/// Entry point for the binary: parse, execute, report, return exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command, cli.format) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind, e.message);
            e.code
        }
    }
}

fn execute(command: Command, format: Format) -> Result<(), CliError> {
    let envelope = match command {
        Command::Probe(args) => cmd_probe(args)?,
        Command::Estimate(args) => cmd_estimate(args)?,
        Command::Ingest(args) => cmd_ingest(args)?,
        Command::Simulate(args) => cmd_simulate(args)?,
        Command::Fit(args) => cmd_fit(args)?,
    };
    print_envelope(&envelope, format);
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<OutputEnvelope, CliError> {
    let config = ProbeConfig {
        target: args.target.clone(),
        sizes: args.sizes.clone(),
        retries: args.retries,
        pacing: args.pacing,
        timeout: args.timeout,
        mode: args.mode.into(),
        port: args.port,
    };
    // usage problems must surface before any probe is sent
    config.validate()?;

    let (report, estimate) = probe::probe_and_estimate(&config)?;
    if let Some(out) = &args.out {
        samples::write_csv_file(&report.samples, out)?;
    }
    let agg = samples::aggregate(&report.samples)?;
    let mut envelope = OutputEnvelope::new(
        "probe",
        json!({
            "target": config.target,
            "mode": config.mode.to_string(),
            "sizes_bytes": config.sizes,
            "retries": config.retries,
            "pacing_s": config.pacing,
            "timeout_s": config.timeout,
            "port": config.port,
            "n_samples": report.samples.len(),
        }),
    );
    envelope.warnings.extend(report.warnings.clone());
    envelope.per_size = Some(report.per_size.clone());
    envelope.stats = Some(agg.stats);
    envelope.set_estimate(estimate);
    Ok(envelope)
}

fn cmd_estimate(args: EstimateArgs) -> Result<OutputEnvelope, CliError> {
    let set = samples::read_csv_file(&args.samples_file)?;
    let agg = samples::aggregate(&set)?;

    let stats = agg.stats.clone();
    let chosen: Vec<SizeDelayStats> = match args.mode {
        EstimateMode::TwoPoint if stats.len() > 2 => {
            vec![stats[0].clone(), stats[stats.len() - 1].clone()]
        }
        _ => stats.clone(),
    };
    let mut estimate = estimate_path(&chosen)?;
    match args.stat {
        StatArg::Both => {}
        StatArg::Min => {
            estimate.b_av = None;
        }
        StatArg::Mean => {
            estimate.capacity = None;
            estimate.d_min = None;
            estimate.intercept_a = None;
        }
    }

    let mode_label = match (args.mode, stats.len()) {
        (EstimateMode::TwoPoint, _) | (EstimateMode::Auto, 2) => "two-point",
        (EstimateMode::Fit, 2) => "fit (two sizes: identical to two-point)",
        _ => "fit",
    };
    let mut envelope = OutputEnvelope::new(
        "estimate",
        json!({
            "file": args.samples_file.display().to_string(),
            "meta": set.meta,
            "mode": mode_label,
            "stat": format!("{:?}", args.stat).to_lowercase(),
            "n_samples": set.len(),
            "n_sizes": stats.len(),
        }),
    );
    envelope.warnings.extend(agg.warnings);
    envelope.stats = Some(stats);
    envelope.set_estimate(estimate);
    Ok(envelope)
}

fn cmd_ingest(args: IngestArgs) -> Result<OutputEnvelope, CliError> {
    let send = ripe::read_sndp_file(&args.send_file)?;
    let recv = ripe::read_rcdp_file(&args.recv_file)?;
    let direction: Direction = args.direction.into();
    let outcome = ripe::match_pairs(&send.records, &recv.records, direction);
    let meta = format!("ttm:{}+{}", args.send_file.display(), args.recv_file.display());
    let set = ripe::pairs_to_samples(&outcome.pairs, meta.clone());
    if let Some(out) = &args.out {
        samples::write_csv_file(&set, out)?;
    }

    let mut envelope = OutputEnvelope::new(
        "ingest",
        json!({
            "send_file": args.send_file.display().to_string(),
            "recv_file": args.recv_file.display().to_string(),
            "direction": direction.to_string(),
            "sndp_records": send.records.len(),
            "rcdp_records": recv.records.len(),
        }),
    );
    envelope.warnings.extend(send.warnings);
    envelope.warnings.extend(recv.warnings);
    envelope.warnings.extend(outcome.warnings.clone());

    let mut summary = MatchSummary {
        pairs: outcome.pairs.len(),
        unmatched_send: outcome.unmatched_send,
        unmatched_recv: outcome.unmatched_recv,
        pairing: match args.pairing {
            PairingArg::PerSize => "per_size",
            PairingArg::Adjacent => "adjacent",
        },
        adjacency_pairs: None,
        adjacency_mean_difference: None,
    };

    if outcome.pairs.is_empty() {
        envelope.warnings.push("0 matched pairs; nothing to estimate (swapped files?)".into());
        envelope.match_summary = Some(summary);
        return Ok(envelope);
    }

    let agg = samples::aggregate(&set)?;
    envelope.warnings.extend(agg.warnings.clone());
    match estimate_path(&agg.stats) {
        Ok(mut estimate) => {
            if args.pairing == PairingArg::Adjacent {
                let adj = ripe::adjacent_mean_difference(&set)?;
                summary.adjacency_pairs = Some(adj.n_pairs);
                summary.adjacency_mean_difference = Some(adj.mean_difference);
                match two_point_from_difference(adj.size_small, adj.size_large, adj.mean_difference)
                {
                    Ok(b_av) => estimate.b_av = Some(b_av),
                    Err(e) => {
                        estimate.b_av = None;
                        estimate
                            .warnings
                            .push(format!("adjacency available bandwidth not computable: {e}"));
                    }
                }
            }
            envelope.set_estimate(estimate);
        }
        Err(e) => envelope.warnings.push(format!("estimate unavailable: {e}")),
    }
    envelope.stats = Some(agg.stats);
    envelope.match_summary = Some(summary);
    Ok(envelope)
}

/// `8 (w2 - w1) / mean_difference` for the adjacency pairing mode.
fn two_point_from_difference(w1: u32, w2: u32, diff: f64) -> Result<f64, EstimatorError> {
    if diff <= 0.0 {
        return Err(EstimatorError::NonIncreasingDelay { d1: 0.0, d2: diff });
    }
    Ok(8.0 * f64::from(w2 - w1) / diff)
}

fn cmd_simulate(args: SimulateArgs) -> Result<OutputEnvelope, CliError> {
    let path = PathSpec::from_toml_file(&args.path_config)?;
    let (set, truth) =
        pathsim::run_experiment(&path, &args.sizes, args.probes, args.pacing, args.seed)?;
    if let Some(out) = &args.out {
        samples::write_csv_file(&set, out)?;
    }
    let agg = samples::aggregate(&set)?;
    let estimate = estimate_path(&agg.stats)?;

    let rel = |est: Option<f64>, truth: f64| {
        est.map(|e| if truth != 0.0 { (e - truth).abs() / truth } else { (e - truth).abs() })
    };
    let comparison = vec![
        ComparisonRow {
            metric: "available_bandwidth_bps",
            estimated: estimate.b_av,
            truth: truth.available_bandwidth,
            relative_error: rel(estimate.b_av, truth.available_bandwidth),
        },
        ComparisonRow {
            metric: "capacity_bps",
            estimated: estimate.capacity,
            truth: truth.capacity,
            relative_error: rel(estimate.capacity, truth.capacity),
        },
        ComparisonRow {
            metric: "composite_rate_bps",
            estimated: estimate.capacity,
            truth: truth.composite_rate(),
            relative_error: rel(estimate.capacity, truth.composite_rate()),
        },
        ComparisonRow {
            metric: "d_min_s",
            estimated: estimate.d_min,
            truth: truth.d_min_zero_size,
            relative_error: rel(estimate.d_min, truth.d_min_zero_size),
        },
    ];

    let mut envelope = OutputEnvelope::new(
        "simulate",
        json!({
            "path_config": args.path_config.display().to_string(),
            "hops": path.hops.len(),
            "sizes_bytes": args.sizes,
            "probes_per_size": args.probes,
            "pacing_s": args.pacing,
            "seed": args.seed,
            "n_samples": set.len(),
        }),
    );
    envelope.warnings.extend(agg.warnings.clone());
    envelope.stats = Some(agg.stats);
    envelope.set_estimate(estimate);
    envelope.ground_truth = Some(truth);
    envelope.comparison = Some(comparison);
    Ok(envelope)
}

fn cmd_fit(args: FitArgs) -> Result<OutputEnvelope, CliError> {
    let set = samples::read_csv_file(&args.samples_file)?;
    let agg = samples::aggregate(&set)?;
    let stat: DelayStat = args.stat.into();
    let fit = affine_fit_stats(&agg.stats, stat)?;
    let stat_label = match args.stat {
        FitStatArg::Min => "min",
        FitStatArg::Mean => "mean",
    };
    let output = FitOutput { fit, capacity: fit.capacity(), stat: stat_label };

    let mut envelope = OutputEnvelope::new(
        "fit",
        json!({
            "file": args.samples_file.display().to_string(),
            "stat": stat_label,
            "n_samples": set.len(),
            "n_sizes": agg.stats.len(),
        }),
    );
    envelope.warnings.extend(agg.warnings.clone());
    if fit.slope <= 0.0 {
        envelope
            .warnings
            .push(format!("fitted slope {:.3e} s/B is not positive; no capacity", fit.slope));
    }
    if args.dump_points {
        envelope.points =
            Some(agg.stats.iter().map(|s| (s.size, stat.pick(s))).collect());
    }
    envelope.stats = Some(agg.stats);
    envelope.fit = Some(output);
    Ok(envelope)
}

/// Bandwidth in Mbps with 3 significant digits, human mode only; JSON
/// always carries raw bits/s.
fn format_mbps(bps: f64) -> String {
    let mbps = bps / 1e6;
    if mbps <= 0.0 || !mbps.is_finite() {
        return format!("{mbps} Mbps");
    }
    let magnitude = mbps.abs().log10().floor() as i32;
    let decimals = (2 - magnitude).max(0) as usize;
    format!("{mbps:.decimals$} Mbps")
}

fn format_seconds(s: f64) -> String {
    if s.abs() < 1.0 {
        format!("{:.3} ms", s * 1e3)
    } else {
        format!("{s:.6} s")
    }
}

fn print_envelope(envelope: &OutputEnvelope, format: Format) {
    match format {
        Format::Json => {
            println!("{}", serde_json::to_string_pretty(envelope).expect("envelope serializes"));
        }
        Format::Human => print_human(envelope),
    }
}

fn print_human(envelope: &OutputEnvelope) {
    println!("vpsband {}", envelope.command);
    if let Some(obj) = envelope.inputs.as_object() {
        let parts: Vec<String> = obj.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("  {}", parts.join(" "));
    }
    if let Some(per_size) = &envelope.per_size {
        println!("  {:>10} {:>10} {:>6} {:>9} {:>6} {:>6}", "size_bytes", "wire_bytes", "sent", "received", "lost", "stray");
        for o in per_size {
            println!(
                "  {:>10} {:>10} {:>6} {:>9} {:>6} {:>6}",
                o.size, o.wire_size, o.sent, o.received, o.lost, o.stray
            );
        }
    }
    if let Some(stats) = &envelope.stats {
        println!(
            "  {:>10} {:>6} {:>13} {:>13} {:>13}",
            "size_bytes", "count", "d_min_s", "d_mean_s", "d_stddev_s"
        );
        for s in stats {
            println!(
                "  {:>10} {:>6} {:>13.9} {:>13.9} {:>13.9}",
                s.size, s.count, s.d_min, s.d_mean, s.d_stddev
            );
        }
    }
    if let Some(fit) = &envelope.fit {
        println!("  fit ({} delays over {} sizes):", fit.stat, fit.fit.n_points);
        println!("    slope:     {:.6e} s/byte", fit.fit.slope);
        println!("    intercept: {}", format_seconds(fit.fit.intercept));
        println!("    r_squared: {:.9}", fit.fit.r_squared);
        match fit.capacity {
            Some(c) => println!("    capacity:  {}", format_mbps(c)),
            None => println!("    capacity:  n/a (non-positive slope)"),
        }
    }
    if let Some(est) = &envelope.estimate {
        println!("  estimate:");
        match est.b_av {
            Some(v) => println!("    available bandwidth: {}", format_mbps(v)),
            None => println!("    available bandwidth: n/a"),
        }
        match est.capacity {
            Some(v) => println!("    capacity:            {}", format_mbps(v)),
            None => println!("    capacity:            n/a"),
        }
        match est.d_min {
            Some(v) => println!("    d_min:               {}", format_seconds(v)),
            None => println!("    d_min:               n/a"),
        }
        match est.intercept_a {
            Some(v) => println!("    intercept a:         {}", format_seconds(v)),
            None => println!("    intercept a:         n/a"),
        }
    }
    if let Some(truth) = &envelope.ground_truth {
        println!("  ground truth:");
        println!("    capacity:            {}", format_mbps(truth.capacity));
        println!("    available bandwidth: {}", format_mbps(truth.available_bandwidth));
        println!("    composite rate:      {}", format_mbps(truth.composite_rate()));
        println!("    d_min:               {}", format_seconds(truth.d_min_zero_size));
    }
    if let Some(rows) = &envelope.comparison {
        println!("  {:>24} {:>16} {:>16} {:>12}", "metric", "estimated", "truth", "rel_error");
        for row in rows {
            let est = row.estimated.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into());
            let rel = row
                .relative_error
                .map(|v| format!("{v:.3e}"))
                .unwrap_or_else(|| "n/a".into());
            println!("  {:>24} {:>16} {:>16.6e} {:>12}", row.metric, est, row.truth, rel);
        }
    }
    if let Some(m) = &envelope.match_summary {
        println!(
            "  matched pairs: {} (unmatched send: {}, unmatched recv: {}, pairing: {})",
            m.pairs, m.unmatched_send, m.unmatched_recv, m.pairing
        );
        if let (Some(n), Some(d)) = (m.adjacency_pairs, m.adjacency_mean_difference) {
            println!("  adjacency: {n} pair(s), mean difference {}", format_seconds(d));
        }
    }
    if let Some(points) = &envelope.points {
        println!("  points (size_bytes,delay_s):");
        for (size, delay) in points {
            println!("    {size},{delay}");
        }
    }
    for w in &envelope.warnings {
        println!("  warning: {w}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mbps_formatting_three_significant_digits() {
        assert_eq!(format_mbps(12_945_709.28), "12.9 Mbps");
        assert_eq!(format_mbps(15_024_390.24), "15.0 Mbps");
        assert_eq!(format_mbps(333_333.33), "0.333 Mbps");
        assert_eq!(format_mbps(150_243_902.0), "150 Mbps");
        assert_eq!(format_mbps(2_500_000.0), "2.50 Mbps");
    }

    #[test]
    fn error_mapping_exit_codes() {
        let e: CliError = ProbeError::ResolveFailure { target: "x".into(), reason: "y".into() }.into();
        assert_eq!((e.code, e.kind), (1, "ResolveFailure"));
        let e: CliError = SamplesError::EmptySet.into();
        assert_eq!(e.code, 1);
        let e: CliError = EstimatorError::DegenerateInput("z".into()).into();
        assert_eq!((e.code, e.kind), (2, "DegenerateInput"));
        let e: CliError = SimError::UnstableHop { hop: 0, utilization: 1.5 }.into();
        assert_eq!((e.code, e.kind), (1, "UnstableHop"));
        let e: CliError =
            RipeError::Malformed { file: "f".into(), line: 3, source: crate::ripe::MalformedLine { reason: "r".into(), token: None } }
                .into();
        assert_eq!((e.code, e.kind), (1, "MalformedLine"));
    }
}

//! Discrete-event simulator of a multi-hop store-and-forward path.
//!
//! Each hop is a single FIFO queue with infinite buffer: a packet waits for
//! the work queued ahead of it, is transmitted in `8 w / C_i` seconds, then
//! propagates for `delta_i`. Cross traffic is generated independently per
//! hop (no flow continuity), which keeps the ground truth closed-form: the
//! per-hop utilization is exactly `rate * size * 8 / C_i`. Probes occupy
//! the link like any other packet, so a paced probe stream adds its own
//! load to the queues it crosses.
//!
//! Randomness comes from one explicit 64-bit seed with an independent
//! ChaCha stream per hop, so adding hops never perturbs the draws of
//! earlier hops and a repeated seed reproduces a run bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samples::{Direction, ProbeSample, SampleSet};

/// Cross-traffic arrival process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Poisson arrivals (exponential inter-arrival times).
    #[default]
    Poisson,
    /// Deterministic arrivals at fixed `1 / rate` spacing; reproducible
    /// worst-case generator.
    Periodic,
}

/// Competing load on one hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossTraffic {
    /// Packets per second.
    pub arrival_rate: f64,
    /// Fixed cross packet size in bytes.
    pub packet_size: u32,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub model: ArrivalModel,
}

fn default_true() -> bool {
    true
}

/// One link: capacity in bits/s, propagation delay in seconds, optional
/// cross traffic. An infinite capacity makes a pure-propagation hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    /// Bits per second, > 0.
    pub capacity: f64,
    /// Seconds, >= 0.
    #[serde(default)]
    pub propagation: f64,
    #[serde(default)]
    pub cross: Option<CrossTraffic>,
}

impl Hop {
    pub fn new(capacity: f64, propagation: f64) -> Self {
        Self { capacity, propagation, cross: None }
    }

    pub fn with_cross(capacity: f64, propagation: f64, cross: CrossTraffic) -> Self {
        Self { capacity, propagation, cross: Some(cross) }
    }

    /// Fraction of the hop's capacity consumed by enabled cross traffic.
    pub fn utilization(&self) -> f64 {
        match &self.cross {
            Some(c) if c.enabled => c.arrival_rate * f64::from(c.packet_size) * 8.0 / self.capacity,
            _ => 0.0,
        }
    }
}

/// Ordered hops from sender to receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    #[serde(rename = "hop")]
    pub hops: Vec<Hop>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("hop {hop}: cross-traffic utilization {utilization:.4} >= 1, queue is unstable")]
    UnstableHop { hop: usize, utilization: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("path config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PathSpec {
    pub fn new(hops: Vec<Hop>) -> Self {
        Self { hops }
    }

    /// Cross-traffic-free path from `(capacity, propagation)` pairs.
    pub fn clean(hops: &[(f64, f64)]) -> Self {
        Self { hops: hops.iter().map(|&(c, p)| Hop::new(c, p)).collect() }
    }

    /// Structural checks: at least one hop, positive capacities, finite
    /// non-negative propagation, sane cross parameters.
    pub fn validate_structure(&self) -> Result<(), SimError> {
        if self.hops.is_empty() {
            return Err(SimError::InvalidPath("path needs at least one hop".into()));
        }
        for (i, hop) in self.hops.iter().enumerate() {
            if !(hop.capacity > 0.0) {
                return Err(SimError::InvalidPath(format!(
                    "hop {i}: capacity must be > 0 bits/s, got {}",
                    hop.capacity
                )));
            }
            if !hop.propagation.is_finite() || hop.propagation < 0.0 {
                return Err(SimError::InvalidPath(format!(
                    "hop {i}: propagation must be finite and >= 0 s, got {}",
                    hop.propagation
                )));
            }
            if let Some(c) = &hop.cross {
                if !c.arrival_rate.is_finite() || c.arrival_rate < 0.0 {
                    return Err(SimError::InvalidPath(format!(
                        "hop {i}: cross arrival_rate must be finite and >= 0, got {}",
                        c.arrival_rate
                    )));
                }
                if c.packet_size < 1 {
                    return Err(SimError::InvalidPath(format!(
                        "hop {i}: cross packet_size must be >= 1 byte"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Structure plus stability: every enabled cross load must keep its
    /// hop's utilization below 1.
    pub fn validate(&self) -> Result<(), SimError> {
        self.validate_structure()?;
        for (i, hop) in self.hops.iter().enumerate() {
            let u = hop.utilization();
            if u >= 1.0 {
                return Err(SimError::UnstableHop { hop: i, utilization: u });
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let spec: PathSpec = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_file(path: impl AsRef<std::path::Path>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("path spec serializes")
    }
}

/// Closed-form truth for a path: what a perfect estimator should recover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Bottleneck rate `min C_i`, bits/s.
    #[serde(rename = "capacity_bps")]
    pub capacity: f64,
    /// `min C_i (1 - u_i)`, bits/s.
    #[serde(rename = "available_bandwidth_bps")]
    pub available_bandwidth: f64,
    /// Zero-size delay limit `sum delta_i`, seconds.
    #[serde(rename = "d_min_s")]
    pub d_min_zero_size: f64,
    /// `sum 1/C_i`, seconds per bit; fixed delay is affine in size with
    /// this slope (times 8 per byte).
    #[serde(rename = "sum_inverse_capacity_s_per_bit")]
    pub sum_inverse_capacity: f64,
}

impl GroundTruth {
    /// Fixed delay of a `w`-byte packet: `8 w sum(1/C_i) + sum delta_i`.
    pub fn fixed_delay(&self, w: u32) -> f64 {
        8.0 * f64::from(w) * self.sum_inverse_capacity + self.d_min_zero_size
    }

    /// End-to-end serialization rate `1 / sum(1/C_i)`, bits/s: what the
    /// min-delay slope estimators recover on a multi-hop path.
    pub fn composite_rate(&self) -> f64 {
        1.0 / self.sum_inverse_capacity
    }
}

/// Analytic ground truth for a valid path.
pub fn ground_truth(path: &PathSpec) -> Result<GroundTruth, SimError> {
    path.validate()?;
    let mut capacity = f64::INFINITY;
    let mut available = f64::INFINITY;
    let mut d_min = 0.0;
    let mut sum_inv = 0.0;
    for hop in &path.hops {
        capacity = capacity.min(hop.capacity);
        available = available.min(hop.capacity * (1.0 - hop.utilization()));
        d_min += hop.propagation;
        sum_inv += 1.0 / hop.capacity;
    }
    Ok(GroundTruth {
        capacity,
        available_bandwidth: available,
        d_min_zero_size: d_min,
        sum_inverse_capacity: sum_inv,
    })
}

/// Per-hop queue and cross-arrival state, advanced lazily as probes pass.
struct HopState {
    service_per_bit: f64,
    propagation: f64,
    cross_service: f64,
    /// Time the server finishes all work queued so far.
    busy_until: f64,
    next_arrival: f64,
    inter_arrival: InterArrival,
}

enum InterArrival {
    None,
    Poisson { exp: Exp<f64>, rng: ChaCha8Rng },
    Periodic { interval: f64 },
}

impl HopState {
    fn new(hop: &Hop, seed: u64, hop_index: u64) -> Self {
        let cross = hop.cross.filter(|c| c.enabled && c.arrival_rate > 0.0);
        let cross_service = cross
            .map(|c| f64::from(c.packet_size) * 8.0 / hop.capacity)
            .unwrap_or(0.0);
        let (next_arrival, inter_arrival) = match cross {
            None => (f64::INFINITY, InterArrival::None),
            Some(c) => match c.model {
                ArrivalModel::Poisson => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(hop_index);
                    let exp = Exp::new(c.arrival_rate).expect("validated rate");
                    let first = exp.sample(&mut rng);
                    (first, InterArrival::Poisson { exp, rng })
                }
                ArrivalModel::Periodic => {
                    let interval = 1.0 / c.arrival_rate;
                    (interval, InterArrival::Periodic { interval })
                }
            },
        };
        HopState {
            service_per_bit: 1.0 / hop.capacity,
            propagation: hop.propagation,
            cross_service,
            busy_until: 0.0,
            next_arrival,
            inter_arrival,
        }
    }

    /// Queue in all cross packets arriving up to (and at) time `t`.
    fn drain_arrivals(&mut self, t: f64) {
        while self.next_arrival <= t {
            let start = self.busy_until.max(self.next_arrival);
            self.busy_until = start + self.cross_service;
            self.next_arrival += match &mut self.inter_arrival {
                InterArrival::None => f64::INFINITY,
                InterArrival::Poisson { exp, rng } => exp.sample(rng),
                InterArrival::Periodic { interval } => *interval,
            };
        }
    }
}

/// One experiment's mutable state: the per-hop queues shared by every
/// probe in the run.
pub struct Simulation {
    hops: Vec<HopState>,
}

impl Simulation {
    pub fn new(path: &PathSpec, seed: u64) -> Result<Self, SimError> {
        path.validate()?;
        let hops = path
            .hops
            .iter()
            .enumerate()
            .map(|(i, hop)| HopState::new(hop, seed, i as u64))
            .collect();
        Ok(Self { hops })
    }

    /// Sends one `w`-byte probe at absolute time `start` and returns its
    /// end-to-end delay in seconds. Mutates queue state, so probes within
    /// one simulation must be sent in non-decreasing start order.
    pub fn transit(&mut self, w: u32, start: f64) -> f64 {
        let bits = 8.0 * f64::from(w);
        let mut delay = 0.0;
        for hop in &mut self.hops {
            let arrival = start + delay;
            hop.drain_arrivals(arrival);
            let wait = (hop.busy_until - arrival).max(0.0);
            let service = bits * hop.service_per_bit;
            hop.busy_until = arrival + wait + service;
            delay += wait + service + hop.propagation;
        }
        delay
    }
}

/// Delay of a single probe of `w` bytes launched at `start_time` into a
/// fresh path whose cross streams start at time zero.
pub fn simulate_probe(path: &PathSpec, w: u32, seed: u64, start_time: f64) -> Result<f64, SimError> {
    if w < 1 {
        return Err(SimError::InvalidParameter("probe size must be >= 1 byte".into()));
    }
    let mut sim = Simulation::new(path, seed)?;
    Ok(sim.transit(w, start_time))
}

/// Paced probe experiment: `probes_per_size` probes of every size in
/// `sizes` (in the given order), consecutive sends `pacing` seconds apart,
/// all sharing one cross-traffic process. Returns the one-way samples and
/// the analytic ground truth.
pub fn run_experiment(
    path: &PathSpec,
    sizes: &[u32],
    probes_per_size: u32,
    pacing: f64,
    seed: u64,
) -> Result<(SampleSet, GroundTruth), SimError> {
    if sizes.is_empty() || sizes.iter().any(|&w| w < 1) {
        return Err(SimError::InvalidParameter("sizes must be non-empty, all >= 1 byte".into()));
    }
    if probes_per_size < 1 {
        return Err(SimError::InvalidParameter("probes_per_size must be >= 1".into()));
    }
    if !(pacing >= 0.0) {
        return Err(SimError::InvalidParameter("pacing must be >= 0".into()));
    }
    let truth = ground_truth(path)?;
    let mut sim = Simulation::new(path, seed)?;
    let mut set = SampleSet::new(format!("sim:seed={seed}"));
    let mut t = 0.0;
    let mut seq = 0u64;
    for &size in sizes {
        for _ in 0..probes_per_size {
            let delay = sim.transit(size, t);
            set.samples.push(ProbeSample::new(size, delay, Direction::OneWayForward, seq, t));
            seq += 1;
            t += pacing;
        }
    }
    Ok((set, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{estimate_path, fixed_delay_model, variable_component};
    use crate::samples::aggregate;
    use approx::assert_relative_eq;

    fn two_hop() -> PathSpec {
        PathSpec::clean(&[(10e6, 0.001), (100e6, 0.002)])
    }

    #[test]
    fn zero_cross_equals_fixed_delay_exactly() {
        let path = two_hop();
        for &w in &[1u32, 64, 100, 1024, 1500] {
            let sim = simulate_probe(&path, w, 7, 0.0).unwrap();
            let fixed = fixed_delay_model(&path, w).unwrap();
            assert_eq!(sim, fixed, "w={w}");
        }
        // same equality with a nonzero launch time
        let sim = simulate_probe(&path, 1024, 7, 123.456).unwrap();
        assert_eq!(sim, fixed_delay_model(&path, 1024).unwrap());
    }

    #[test]
    fn two_hop_fixed_value() {
        let d = simulate_probe(&two_hop(), 1024, 0, 0.0).unwrap();
        assert_relative_eq!(d, 0.00390112, max_relative = 1e-12);
    }

    #[test]
    fn residual_service_hand_trace() {
        // one hop at 8 Mbps; a periodic 1000 B cross packet arrives at
        // t = 0.1 and is in service (0.001 s) when the probe shows up at
        // t = 0.1005: the probe waits out the residual 0.0005 s.
        let cross = CrossTraffic {
            arrival_rate: 10.0,
            packet_size: 1000,
            enabled: true,
            model: ArrivalModel::Periodic,
        };
        let path = PathSpec::new(vec![Hop::with_cross(8e6, 0.0, cross)]);
        let d = simulate_probe(&path, 1000, 0, 0.1005).unwrap();
        let fixed = fixed_delay_model(&path, 1000).unwrap();
        assert_relative_eq!(d, 0.0015, max_relative = 1e-9);
        let residual = variable_component(d, fixed).unwrap();
        assert_relative_eq!(residual, 0.0005, max_relative = 1e-9);
        assert!(residual <= 8000.0 / 8e6);
    }

    #[test]
    fn simulated_delay_never_below_fixed() {
        let cross = CrossTraffic {
            arrival_rate: 500.0,
            packet_size: 800,
            enabled: true,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![
            Hop::with_cross(10e6, 0.001, cross),
            Hop::new(50e6, 0.003),
        ]);
        let (set, _) = run_experiment(&path, &[100, 1024], 200, 0.002, 99).unwrap();
        for s in &set.samples {
            let fixed = fixed_delay_model(&path, s.size).unwrap();
            assert!(s.delay >= fixed, "delay {} below fixed {fixed}", s.delay);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cross = CrossTraffic {
            arrival_rate: 900.0,
            packet_size: 600,
            enabled: true,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![Hop::with_cross(10e6, 0.002, cross)]);
        let (a, _) = run_experiment(&path, &[100, 1024], 50, 0.01, 4242).unwrap();
        let (b, _) = run_experiment(&path, &[100, 1024], 50, 0.01, 4242).unwrap();
        assert_eq!(a, b);
        let (c, _) = run_experiment(&path, &[100, 1024], 50, 0.01, 4243).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fluid_experiment_recovers_path_parameters() {
        let path = two_hop();
        let (set, truth) = run_experiment(&path, &[100, 1024], 10, 0.1, 1).unwrap();
        assert_eq!(set.len(), 20);
        let agg = aggregate(&set).unwrap();
        let est = estimate_path(&agg.stats).unwrap();
        assert_relative_eq!(est.capacity.unwrap(), truth.composite_rate(), max_relative = 1e-9);
        assert_relative_eq!(est.b_av.unwrap(), truth.composite_rate(), max_relative = 1e-9);
        assert_relative_eq!(est.d_min.unwrap(), 0.003, max_relative = 1e-9);
    }

    #[test]
    fn bottleneck_with_fast_second_hop_recovers_exactly() {
        // pure-propagation second hop: composite rate equals the bottleneck
        let path = PathSpec::new(vec![Hop::new(10e6, 0.001), Hop::new(f64::INFINITY, 0.002)]);
        let (set, truth) = run_experiment(&path, &[100, 1024], 10, 0.1, 1).unwrap();
        assert_eq!(truth.capacity, 10e6);
        let agg = aggregate(&set).unwrap();
        let est = estimate_path(&agg.stats).unwrap();
        assert_relative_eq!(est.capacity.unwrap(), 10e6, max_relative = 1e-9);
    }

    #[test]
    fn capacity_estimate_survives_half_load() {
        // u = 0.5 on the bottleneck; with enough probes some find empty queues
        let cross = CrossTraffic {
            arrival_rate: 625.0, // 625 * 8000 bits = 5 Mbps on a 10 Mbps hop
            packet_size: 1000,
            enabled: true,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![
            Hop::with_cross(10e6, 0.001, cross),
            Hop::new(100e6, 0.002),
        ]);
        let truth = ground_truth(&path).unwrap();
        assert_relative_eq!(truth.available_bandwidth, 5e6, max_relative = 1e-12);
        let (set, _) = run_experiment(&path, &[100, 1024], 500, 0.01, 11).unwrap();
        let agg = aggregate(&set).unwrap();
        let est = estimate_path(&agg.stats).unwrap();
        let cap = est.capacity.unwrap();
        assert_relative_eq!(cap, truth.composite_rate(), max_relative = 0.02);
    }

    #[test]
    fn min_delay_tightens_with_more_probes() {
        let cross = CrossTraffic {
            arrival_rate: 500.0,
            packet_size: 1000,
            enabled: true,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![Hop::with_cross(10e6, 0.001, cross)]);
        let fixed = fixed_delay_model(&path, 1024).unwrap();
        let (set, _) = run_experiment(&path, &[1024], 1000, 0.01, 5).unwrap();
        let min_at = |n: usize| {
            set.samples[..n].iter().map(|s| s.delay).fold(f64::INFINITY, f64::min)
        };
        let (m10, m100, m1000) = (min_at(10), min_at(100), min_at(1000));
        assert!(m10 >= m100 && m100 >= m1000);
        assert!(m1000 >= fixed);
        assert!(m1000 - fixed <= m10 - fixed);
        assert!(m1000 - fixed < 0.02 * fixed);
    }

    #[test]
    fn ground_truth_examples() {
        let single = PathSpec::clean(&[(8e6, 0.0)]);
        let t = ground_truth(&single).unwrap();
        assert_eq!(t.capacity, 8e6);
        assert_eq!(t.available_bandwidth, 8e6);

        // 10/100 Mbps with u = {0, 0.9}: available stays 10 Mbps
        let cross90 = CrossTraffic {
            arrival_rate: 11_250.0, // 11250 * 8000 = 90 Mbps
            packet_size: 1000,
            enabled: true,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![Hop::new(10e6, 0.0), Hop::with_cross(100e6, 0.0, cross90)]);
        let t = ground_truth(&path).unwrap();
        assert_eq!(t.capacity, 10e6);
        assert_relative_eq!(t.available_bandwidth, 10e6, max_relative = 1e-12);

        // u = 0.95 on the fast hop: available drops to 5 Mbps
        let cross95 = CrossTraffic { arrival_rate: 11_875.0, ..cross90 };
        let path = PathSpec::new(vec![Hop::new(10e6, 0.0), Hop::with_cross(100e6, 0.0, cross95)]);
        let t = ground_truth(&path).unwrap();
        assert_relative_eq!(t.available_bandwidth, 5e6, max_relative = 1e-12);
    }

    #[test]
    fn unstable_hop_rejected() {
        let cross = CrossTraffic {
            arrival_rate: 1250.0, // exactly 10 Mbps of load on a 10 Mbps hop
            packet_size: 1000,
            enabled: true,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![Hop::with_cross(10e6, 0.0, cross)]);
        assert!(matches!(
            simulate_probe(&path, 100, 0, 0.0),
            Err(SimError::UnstableHop { hop: 0, .. })
        ));
        assert!(matches!(ground_truth(&path), Err(SimError::UnstableHop { .. })));
    }

    #[test]
    fn disabled_cross_is_inert() {
        let cross = CrossTraffic {
            arrival_rate: 1e9,
            packet_size: 1000,
            enabled: false,
            model: ArrivalModel::Poisson,
        };
        let path = PathSpec::new(vec![Hop::with_cross(10e6, 0.001, cross)]);
        let d = simulate_probe(&path, 1024, 0, 0.0).unwrap();
        assert_eq!(d, fixed_delay_model(&path, 1024).unwrap());
    }

    #[test]
    fn toml_config_round_trip() {
        let text = r#"
[[hop]]
capacity = 10e6
propagation = 0.001

[hop.cross]
arrival_rate = 625.0
packet_size = 1000

[[hop]]
capacity = 100e6
propagation = 0.002
"#;
        let path = PathSpec::from_toml_str(text).unwrap();
        assert_eq!(path.hops.len(), 2);
        let cross = path.hops[0].cross.unwrap();
        assert_eq!(cross.arrival_rate, 625.0);
        assert!(cross.enabled);
        assert_eq!(cross.model, ArrivalModel::Poisson);
        assert_eq!(path.hops[1].cross, None);

        let back = PathSpec::from_toml_str(&path.to_toml_string()).unwrap();
        assert_eq!(back, path);
    }

    #[test]
    fn toml_rejects_unstable_config() {
        let text = r#"
[[hop]]
capacity = 1e6
[hop.cross]
arrival_rate = 1000.0
packet_size = 1000
"#;
        assert!(matches!(PathSpec::from_toml_str(text), Err(SimError::UnstableHop { .. })));
    }
}

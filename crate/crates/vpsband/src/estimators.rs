//! Pure throughput/delay estimators.
//!
//! Unit discipline: packet sizes enter in bytes and are converted to bits
//! (x8) exactly once inside each formula; every bandwidth result is in
//! bits/s, every delay in seconds.
//!
//! The estimators come in two flavours sharing one algebraic core:
//!
//! * two-point forms on a (small, large) size pair — `8 (W2 - W1) / (D2 - D1)`
//!   gives available bandwidth on mean delays and capacity on per-size
//!   minimum delays, while `(W2 D1 - W1 D2) / (W2 - W1)` extrapolates the
//!   minimal path delay `D_min` at zero size;
//! * an ordinary least-squares fit of delay on size ([`affine_fit`]) for
//!   more than two probe sizes, where capacity is `8 / slope` and the
//!   intercept plays the role of `D_min`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pathsim::PathSpec;
use crate::samples::SizeDelayStats;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("delay must be > 0, got {0}")]
    NonPositiveDelay(f64),
    #[error("path has no hops")]
    EmptyPath,
    #[error("delay {d} is below the fixed component {d_fixed}; wrong fixed delay or clock error")]
    NegativeResidual { d: f64, d_fixed: f64 },
    #[error("intercept {a} meets or exceeds the mean delay {d_av}")]
    InterceptExceedsDelay { d_av: f64, a: f64 },
    #[error("delays not increasing with size (d1={d1}, d2={d2}); noise dominates, collect more samples")]
    NonIncreasingDelay { d1: f64, d2: f64 },
    #[error("sizes must satisfy w2 > w1 >= 1, got w1={w1}, w2={w2}")]
    SizeOrder { w1: u32, w2: u32 },
    #[error("fixed delay must exceed d_min, got d_fixed={d_fixed}, d_min={d_min}")]
    NonPositiveDenominator { d_fixed: f64, d_min: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("size must be >= 1")]
    ZeroSize,
}

type Result<T> = std::result::Result<T, EstimatorError>;

/// Single-hop throughput `8 W / D` (Little's-law form) in bits/s.
pub fn single_hop_throughput(w: u32, d: f64) -> Result<f64> {
    if w < 1 {
        return Err(EstimatorError::ZeroSize);
    }
    if !(d > 0.0) {
        return Err(EstimatorError::NonPositiveDelay(d));
    }
    Ok(8.0 * f64::from(w) / d)
}

/// Fixed (minimum possible) delay of a `w`-byte packet over `path`:
/// per-hop transmission `8 w / C_i` plus propagation, summed hop by hop.
///
/// `w = 0` yields the pure propagation sum, i.e. `D_min`.
pub fn fixed_delay_model(path: &PathSpec, w: u32) -> Result<f64> {
    if path.hops.is_empty() {
        return Err(EstimatorError::EmptyPath);
    }
    path.validate_structure().map_err(|e| EstimatorError::DegenerateInput(e.to_string()))?;
    let bits = 8.0 * f64::from(w);
    // Same per-hop accumulation order as the simulator, so a zero-cross
    // simulated delay compares bit-for-bit equal.
    let mut total = 0.0;
    for hop in &path.hops {
        total += bits / hop.capacity + hop.propagation;
    }
    Ok(total)
}

/// Queueing residual `d - d_fixed` above the fixed delay.
pub fn variable_component(d: f64, d_fixed: f64) -> Result<f64> {
    if d < d_fixed {
        return Err(EstimatorError::NegativeResidual { d, d_fixed });
    }
    Ok(d - d_fixed)
}

/// Intercept-corrected bandwidth `8 w / (d_av - a)` in bits/s.
///
/// With `a = 0` this reduces to [`single_hop_throughput`].
pub fn bandwidth_from_intercept(w: u32, d_av: f64, a: f64) -> Result<f64> {
    if w < 1 {
        return Err(EstimatorError::ZeroSize);
    }
    if !(d_av > a) {
        return Err(EstimatorError::InterceptExceedsDelay { d_av, a });
    }
    Ok(8.0 * f64::from(w) / (d_av - a))
}

fn check_two_point(w1: u32, d1: f64, w2: u32, d2: f64) -> Result<()> {
    if w2 <= w1 || w1 < 1 {
        return Err(EstimatorError::SizeOrder { w1, w2 });
    }
    if !(d1 > 0.0) {
        return Err(EstimatorError::NonPositiveDelay(d1));
    }
    if d2 <= d1 {
        return Err(EstimatorError::NonIncreasingDelay { d1, d2 });
    }
    Ok(())
}

/// Two-point available bandwidth `8 (w2 - w1) / (d2 - d1)` in bits/s,
/// on per-size mean delays.
pub fn available_bandwidth_two_point(w1: u32, d1: f64, w2: u32, d2: f64) -> Result<f64> {
    check_two_point(w1, d1, w2, d2)?;
    Ok(8.0 * f64::from(w2 - w1) / (d2 - d1))
}

/// Two-point capacity: same form as [`available_bandwidth_two_point`] but
/// fed with per-size minimum delays.
pub fn capacity_two_point(w1: u32, d1_min: f64, w2: u32, d2_min: f64) -> Result<f64> {
    check_two_point(w1, d1_min, w2, d2_min)?;
    Ok(8.0 * f64::from(w2 - w1) / (d2_min - d1_min))
}

/// Capacity `8 w / (d_fixed - d_min)` from one size's fixed delay and the
/// zero-size delay limit.
pub fn capacity_from_dmin(w: u32, d_fixed: f64, d_min: f64) -> Result<f64> {
    if w < 1 {
        return Err(EstimatorError::ZeroSize);
    }
    if !(d_fixed > d_min) {
        return Err(EstimatorError::NonPositiveDenominator { d_fixed, d_min });
    }
    Ok(8.0 * f64::from(w) / (d_fixed - d_min))
}

/// Minimal path delay `(w2 d1 - w1 d2) / (w2 - w1)`: the delay-axis
/// intercept of the line through two (size, delay) points.
///
/// A negative result is returned as-is; it is physically impossible and
/// signals noisy inputs, so callers decide whether to keep it.
pub fn dmin_two_point(w1: u32, d1: f64, w2: u32, d2: f64) -> Result<f64> {
    if w2 <= w1 || w1 < 1 {
        return Err(EstimatorError::SizeOrder { w1, w2 });
    }
    let (w1f, w2f) = (f64::from(w1), f64::from(w2));
    Ok((w2f * d1 - w1f * d2) / (w2f - w1f))
}

/// Result of an ordinary least-squares fit of delay on packet size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    /// Seconds per byte; capacity is `8 / slope` when positive.
    #[serde(rename = "slope_s_per_byte")]
    pub slope: f64,
    /// Seconds; the delay-axis intercept (`D_min` when fitting minima).
    #[serde(rename = "intercept_s")]
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl AffineFit {
    /// Capacity implied by the fitted slope, `8 / slope` in bits/s.
    /// Only meaningful for positive slopes.
    pub fn capacity(&self) -> Option<f64> {
        (self.slope > 0.0).then(|| 8.0 / self.slope)
    }

    pub fn predict(&self, size: u32) -> f64 {
        self.intercept + self.slope * f64::from(size)
    }
}

/// Which per-size statistic a fit or estimate runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayStat {
    Min,
    Mean,
}

impl DelayStat {
    pub fn pick(&self, s: &SizeDelayStats) -> f64 {
        match self {
            DelayStat::Min => s.d_min,
            DelayStat::Mean => s.d_mean,
        }
    }
}

/// Ordinary least squares of delay on size over `(size, delay)` points.
///
/// Centered two-pass accumulation with compensated sums, so `r_squared`
/// stays meaningful even for millions of points. Requires at least two
/// distinct sizes. When the delays have zero variance the fit is an exact
/// horizontal line and `r_squared` is reported as 1.
pub fn affine_fit(points: &[(u32, f64)]) -> Result<AffineFit> {
    let n = points.len();
    if n < 2 {
        return Err(EstimatorError::InsufficientData(format!(
            "affine fit needs at least 2 points, got {n}"
        )));
    }
    let first = points[0].0;
    if points.iter().all(|&(w, _)| w == first) {
        return Err(EstimatorError::DegenerateInput("all packet sizes are equal".into()));
    }

    let nf = n as f64;
    let mean_x = neumaier(points.iter().map(|&(w, _)| f64::from(w))) / nf;
    let mean_y = neumaier(points.iter().map(|&(_, d)| d)) / nf;
    let sxx = neumaier(points.iter().map(|&(w, _)| {
        let dx = f64::from(w) - mean_x;
        dx * dx
    }));
    let sxy = neumaier(points.iter().map(|&(w, d)| (f64::from(w) - mean_x) * (d - mean_y)));
    let syy = neumaier(points.iter().map(|&(_, d)| {
        let dy = d - mean_y;
        dy * dy
    }));

    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy > 0.0 { ((sxy * sxy) / (sxx * syy)).min(1.0) } else { 1.0 };
    Ok(AffineFit { slope, intercept, r_squared, n_points: n })
}

/// Fits the chosen per-size statistic of `stats` against size.
pub fn affine_fit_stats(stats: &[SizeDelayStats], stat: DelayStat) -> Result<AffineFit> {
    let points: Vec<(u32, f64)> = stats.iter().map(|s| (s.size, stat.pick(s))).collect();
    affine_fit(&points)
}

fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
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

/// Linear model of the intercept `a ~ alpha * n + beta * l` over
/// (hop count, path length) observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterceptModel {
    /// Seconds per hop.
    #[serde(rename = "alpha_s_per_hop")]
    pub alpha: f64,
    /// Seconds per unit of path length (units are the caller's contract).
    #[serde(rename = "beta_s_per_unit")]
    pub beta: f64,
    /// Euclidean norm of the fit residuals, seconds.
    #[serde(rename = "residual_norm_s")]
    pub residual_norm: f64,
    /// Standard error of alpha (0 when not estimable).
    #[serde(rename = "alpha_stderr_s_per_hop")]
    pub alpha_stderr: f64,
    /// Standard error of beta (0 when not estimable).
    #[serde(rename = "beta_stderr_s_per_unit")]
    pub beta_stderr: f64,
    /// Set when the n and l regressors are collinear; the combined
    /// regressor is then reported through alpha alone.
    pub rank_deficient: bool,
}

/// Least-squares `alpha, beta` minimizing `sum (a - alpha n - beta l)^2`
/// over observations `(n hops, l length, a seconds)`.
///
/// Solved by orthogonalizing `l` against `n` (a two-column QR), which keeps
/// noiseless recovery exact to machine precision. Collinear columns
/// (including the all-`l`-zero design) fall back to a single combined
/// regressor reported through `alpha`, with `rank_deficient` set.
pub fn fit_intercept_model(observations: &[(u32, f64, f64)]) -> Result<InterceptModel> {
    let m = observations.len();
    if m < 2 {
        return Err(EstimatorError::InsufficientData(format!(
            "intercept model needs at least 2 observations, got {m}"
        )));
    }
    let sum_nn = neumaier(observations.iter().map(|&(n, _, _)| f64::from(n) * f64::from(n)));
    let sum_ll = neumaier(observations.iter().map(|&(_, l, _)| l * l));
    let sum_nl = neumaier(observations.iter().map(|&(n, l, _)| f64::from(n) * l));
    let sum_na = neumaier(observations.iter().map(|&(n, _, a)| f64::from(n) * a));
    let sum_la = neumaier(observations.iter().map(|&(_, l, a)| l * a));

    if sum_nn == 0.0 && sum_ll == 0.0 {
        return Err(EstimatorError::DegenerateInput("all observations have n = 0 and l = 0".into()));
    }

    // Orthogonalize l against n: l_perp = l - c n with c = <n,l>/<n,n>.
    let (alpha, beta, rank_deficient);
    if sum_nn == 0.0 {
        // n identically zero: single regressor l.
        beta = sum_la / sum_ll;
        alpha = 0.0;
        rank_deficient = true;
    } else {
        let c = sum_nl / sum_nn;
        let sum_pp = neumaier(observations.iter().map(|&(n, l, _)| {
            let p = l - c * f64::from(n);
            p * p
        }));
        if sum_pp <= 1e-24 * sum_ll.max(sum_nn) {
            // l is (numerically) a multiple of n: combined regressor via n.
            alpha = sum_na / sum_nn;
            beta = 0.0;
            rank_deficient = true;
        } else {
            let sum_pa = neumaier(observations.iter().map(|&(n, l, a)| (l - c * f64::from(n)) * a));
            beta = sum_pa / sum_pp;
            alpha = (sum_na - beta * sum_nl) / sum_nn;
            rank_deficient = false;
        }
    }

    let residual_sq = neumaier(observations.iter().map(|&(n, l, a)| {
        let r = a - alpha * f64::from(n) - beta * l;
        r * r
    }))
    .max(0.0);
    let residual_norm = residual_sq.sqrt();

    let (alpha_stderr, beta_stderr) = if rank_deficient || m <= 2 {
        (0.0, 0.0)
    } else {
        let sigma_sq = residual_sq / (m - 2) as f64;
        let det = sum_nn * sum_ll - sum_nl * sum_nl;
        if det > 0.0 {
            ((sigma_sq * sum_ll / det).sqrt(), (sigma_sq * sum_nn / det).sqrt())
        } else {
            (0.0, 0.0)
        }
    };

    Ok(InterceptModel { alpha, beta, residual_norm, alpha_stderr, beta_stderr, rank_deficient })
}

/// Estimator output bundle. Fields that cannot be computed from the given
/// stats are absent rather than fabricated; the reason lands in `warnings`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    /// Available bandwidth from mean delays, bits/s.
    #[serde(rename = "b_av_bps")]
    pub b_av: Option<f64>,
    /// Capacity from minimum delays, bits/s.
    #[serde(rename = "capacity_bps")]
    pub capacity: Option<f64>,
    /// Minimal path delay (zero-size extrapolation of minimum delays), s.
    #[serde(rename = "d_min_s")]
    pub d_min: Option<f64>,
    /// Delay-axis intercept of the delay-vs-size line, seconds.
    #[serde(rename = "intercept_a_s")]
    pub intercept_a: Option<f64>,
    pub warnings: Vec<String>,
}

/// Soft consistency bound: b_av above capacity by more than 5% draws a warning.
const BAV_CAPACITY_SLACK: f64 = 0.05;

/// Full estimate from per-size stats.
///
/// With exactly two sizes this uses the two-point forms: available
/// bandwidth on the mean delays of the smallest and largest size, capacity
/// and `D_min` on their minimum delays. With more than two sizes both
/// statistics are fitted by [`affine_fit`] instead; capacity and available
/// bandwidth become `8 / slope` of the respective fit, `D_min` the
/// intercept of the minimum-delay fit and `intercept_a` the intercept of
/// the mean-delay fit.
pub fn estimate_path(stats: &[SizeDelayStats]) -> Result<PathEstimate> {
    let mut sorted: Vec<&SizeDelayStats> = stats.iter().filter(|s| s.count >= 1).collect();
    sorted.sort_by_key(|s| s.size);
    if sorted.windows(2).any(|w| w[0].size == w[1].size) {
        return Err(EstimatorError::DegenerateInput("duplicate size in stats".into()));
    }
    if sorted.len() < 2 {
        return Err(EstimatorError::InsufficientData(format!(
            "need stats for at least 2 sizes, got {}",
            sorted.len()
        )));
    }

    let mut est = PathEstimate::default();
    if sorted.len() == 2 {
        let (lo, hi) = (sorted[0], sorted[1]);
        match available_bandwidth_two_point(lo.size, lo.d_mean, hi.size, hi.d_mean) {
            Ok(v) => est.b_av = Some(v),
            Err(e) => est.warnings.push(format!("available bandwidth not computable: {e}")),
        }
        match capacity_two_point(lo.size, lo.d_min, hi.size, hi.d_min) {
            Ok(v) => est.capacity = Some(v),
            Err(e) => est.warnings.push(format!("capacity not computable: {e}")),
        }
        match dmin_two_point(lo.size, lo.d_min, hi.size, hi.d_min) {
            Ok(v) if v >= 0.0 => {
                est.d_min = Some(v);
                est.intercept_a = Some(v);
            }
            Ok(v) => est.warnings.push(format!(
                "d_min extrapolates to {v:.9} s; negative is physically impossible, inputs are noisy"
            )),
            Err(e) => est.warnings.push(format!("d_min not computable: {e}")),
        }
    } else {
        let owned: Vec<SizeDelayStats> = sorted.iter().map(|s| (*s).clone()).collect();
        match affine_fit_stats(&owned, DelayStat::Mean) {
            Ok(fit) => match fit.capacity() {
                Some(bw) => {
                    est.b_av = Some(bw);
                    if fit.intercept >= 0.0 {
                        est.intercept_a = Some(fit.intercept);
                    } else {
                        est.warnings.push(format!(
                            "mean-delay intercept {:.9} s is negative; omitted",
                            fit.intercept
                        ));
                    }
                }
                None => est.warnings.push(format!(
                    "mean-delay fit slope {:.3e} s/B is not positive; available bandwidth omitted",
                    fit.slope
                )),
            },
            Err(e) => est.warnings.push(format!("mean-delay fit failed: {e}")),
        }
        match affine_fit_stats(&owned, DelayStat::Min) {
            Ok(fit) => {
                match fit.capacity() {
                    Some(cap) => est.capacity = Some(cap),
                    None => est.warnings.push(format!(
                        "min-delay fit slope {:.3e} s/B is not positive; capacity omitted",
                        fit.slope
                    )),
                }
                if fit.intercept >= 0.0 {
                    est.d_min = Some(fit.intercept);
                } else {
                    est.warnings.push(format!(
                        "min-delay intercept {:.9} s is negative; d_min omitted",
                        fit.intercept
                    ));
                }
            }
            Err(e) => est.warnings.push(format!("min-delay fit failed: {e}")),
        }
    }

    if let (Some(b_av), Some(capacity)) = (est.b_av, est.capacity) {
        if b_av > capacity * (1.0 + BAV_CAPACITY_SLACK) {
            est.warnings.push(format!(
                "available bandwidth {b_av:.0} bits/s exceeds capacity {capacity:.0} bits/s by more than 5%; mean delays are likely noisy"
            ));
        }
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathsim::{Hop, PathSpec};
    use approx::assert_relative_eq;

    fn stat(size: u32, d_min: f64, d_mean: f64) -> SizeDelayStats {
        SizeDelayStats { size, count: 5, d_min, d_mean, d_stddev: 0.0 }
    }

    #[test]
    fn single_hop_cases() {
        assert_eq!(single_hop_throughput(1000, 0.001).unwrap(), 8_000_000.0);
        // 8 * 100 / 0.043591
        assert_relative_eq!(
            single_hop_throughput(100, 0.043591).unwrap(),
            18352.412195177905,
            max_relative = 1e-12
        );
        assert_eq!(single_hop_throughput(1, 8.0).unwrap(), 1.0);
        assert_eq!(single_hop_throughput(100, 0.0), Err(EstimatorError::NonPositiveDelay(0.0)));
        assert_eq!(single_hop_throughput(100, -1.0), Err(EstimatorError::NonPositiveDelay(-1.0)));
    }

    #[test]
    fn fixed_delay_cases() {
        let one_hop = PathSpec::clean(&[(8_000.0, 0.0)]);
        assert_eq!(fixed_delay_model(&one_hop, 1000).unwrap(), 1.0);

        let two_hop = PathSpec::clean(&[(10e6, 0.001), (100e6, 0.002)]);
        assert_relative_eq!(fixed_delay_model(&two_hop, 1024).unwrap(), 0.00390112, max_relative = 1e-12);
        // zero size leaves only propagation: D_min
        assert_relative_eq!(fixed_delay_model(&two_hop, 0).unwrap(), 0.003, max_relative = 1e-12);

        let empty = PathSpec { hops: vec![] };
        assert_eq!(fixed_delay_model(&empty, 100), Err(EstimatorError::EmptyPath));
    }

    #[test]
    fn variable_component_cases() {
        assert_relative_eq!(variable_component(0.0450, 0.0440).unwrap(), 0.0010, max_relative = 1e-9);
        assert_eq!(variable_component(0.044, 0.044).unwrap(), 0.0);
        assert!(matches!(
            variable_component(0.043, 0.044),
            Err(EstimatorError::NegativeResidual { .. })
        ));
    }

    #[test]
    fn bandwidth_from_intercept_cases() {
        // a from the two-point D_min on the paper's minimum-delay pair:
        // a = (1024 * 0.043591 - 100 * 0.044084) / 924 = 0.04353765...
        let a = dmin_two_point(100, 0.043591, 1024, 0.044084).unwrap();
        assert_relative_eq!(a, 0.043537645021645023, max_relative = 1e-12);
        let bw = bandwidth_from_intercept(1024, 0.044084, a).unwrap();
        assert_relative_eq!(bw, 8192.0 / (0.044084 - a), max_relative = 1e-12);
        assert!(bw > 14.5e6 && bw < 15.5e6);

        // a = 0 degenerates to the single-hop form
        assert_eq!(
            bandwidth_from_intercept(1000, 0.001, 0.0).unwrap(),
            single_hop_throughput(1000, 0.001).unwrap()
        );
        assert!(matches!(
            bandwidth_from_intercept(100, 0.5, 0.5),
            Err(EstimatorError::InterceptExceedsDelay { .. })
        ));
    }

    #[test]
    fn two_point_paper_numbers() {
        // forward link: mean delay difference 0.000571 s over 924 bytes
        let b = available_bandwidth_two_point(100, 0.0436, 1024, 0.0436 + 0.000571).unwrap();
        assert_relative_eq!(b, 12_945_709.28196147, max_relative = 1e-9);

        // reverse link: mean difference 0.000511 s
        let b = available_bandwidth_two_point(100, 0.0436, 1024, 0.0436 + 0.000511).unwrap();
        assert_relative_eq!(b, 14_465_753.424657535, max_relative = 1e-9);

        // reverse link minimum difference 0.000492 s
        let c = capacity_two_point(100, 0.043591, 1024, 0.043591 + 0.000492).unwrap();
        assert_relative_eq!(c, 15_024_390.243902437, max_relative = 1e-9);
    }

    #[test]
    fn two_point_adsl_arithmetic() {
        // 8 * 1000 / 0.024 = 333.33 Kbps (the computation, not the prose rounding)
        let b = available_bandwidth_two_point(32, 0.018, 1032, 0.042).unwrap();
        assert_relative_eq!(b, 333_333.33333333326, max_relative = 1e-9);
    }

    #[test]
    fn two_point_errors() {
        assert!(matches!(
            available_bandwidth_two_point(100, 0.002, 1024, 0.002),
            Err(EstimatorError::NonIncreasingDelay { .. })
        ));
        assert!(matches!(
            available_bandwidth_two_point(1024, 0.001, 100, 0.002),
            Err(EstimatorError::SizeOrder { .. })
        ));
        assert!(matches!(
            capacity_two_point(100, 0.002, 1024, 0.002),
            Err(EstimatorError::NonIncreasingDelay { .. })
        ));
    }

    #[test]
    fn capacity_from_dmin_cases() {
        // two-hop fixed delay at 1024 B minus D_min = harmonic composite rate
        let c = capacity_from_dmin(1024, 0.00390112, 0.003).unwrap();
        assert_relative_eq!(c, 9_090_909.09090909, max_relative = 1e-9);
        assert_relative_eq!(c, 1.0 / (1.0 / 10e6 + 1.0 / 100e6), max_relative = 1e-9);

        // d_min = 0 equals the single-hop form at the minimum delay
        assert_eq!(
            capacity_from_dmin(1000, 0.02, 0.0).unwrap(),
            single_hop_throughput(1000, 0.02).unwrap()
        );

        assert!(matches!(
            capacity_from_dmin(1000, 0.02, 0.02),
            Err(EstimatorError::NonPositiveDenominator { .. })
        ));
    }

    #[test]
    fn capacity_consistency_identity() {
        // capacity_from_dmin at w2 with the two-point D_min reproduces capacity_two_point
        let (w1, d1, w2, d2) = (100u32, 0.043591, 1024u32, 0.044083);
        let d_min = dmin_two_point(w1, d1, w2, d2).unwrap();
        let via_dmin = capacity_from_dmin(w2, d2, d_min).unwrap();
        let direct = capacity_two_point(w1, d1, w2, d2).unwrap();
        assert_relative_eq!(via_dmin, direct, max_relative = 1e-9);
    }

    #[test]
    fn dmin_two_point_cases() {
        // points on D = 0.001 + W / C
        assert_relative_eq!(dmin_two_point(100, 0.002, 200, 0.003).unwrap(), 0.001, max_relative = 1e-9);
        // equal delays: zero slope, intercept is the common delay
        assert_relative_eq!(dmin_two_point(100, 0.007, 900, 0.007).unwrap(), 0.007, max_relative = 1e-12);
        // negative results pass through for the caller to flag
        assert!(dmin_two_point(100, 0.001, 200, 0.005).unwrap() < 0.0);
        assert!(matches!(dmin_two_point(200, 0.1, 100, 0.2), Err(EstimatorError::SizeOrder { .. })));
    }

    #[test]
    fn dmin_matches_affine_intercept_on_two_points() {
        let pts = [(100u32, 0.043591f64), (1024u32, 0.044084f64)];
        let fit = affine_fit(&pts).unwrap();
        let dmin = dmin_two_point(100, 0.043591, 1024, 0.044084).unwrap();
        assert_relative_eq!(fit.intercept, dmin, max_relative = 1e-12);
    }

    #[test]
    fn affine_fit_exact_line() {
        // constructed from slope 1.5625e-6 s/B, intercept 0.001 s
        let slope = 1.5625e-6;
        let intercept = 0.001;
        let pts: Vec<(u32, f64)> =
            [64u32, 512, 1064].iter().map(|&w| (w, intercept + slope * f64::from(w))).collect();
        let fit = affine_fit(&pts).unwrap();
        assert_relative_eq!(fit.slope, slope, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, intercept, max_relative = 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_relative_eq!(fit.capacity().unwrap(), 5.12e6, max_relative = 1e-9);
    }

    #[test]
    fn affine_fit_degenerate_and_small() {
        assert!(matches!(
            affine_fit(&[(100, 0.1), (100, 0.2)]),
            Err(EstimatorError::DegenerateInput(_))
        ));
        assert!(matches!(affine_fit(&[(100, 0.1)]), Err(EstimatorError::InsufficientData(_))));
    }

    #[test]
    fn affine_fit_capacity_inverse_in_slope() {
        // steeper slope, lower capacity
        let caps: Vec<f64> = [1e-6, 2e-6, 4e-6]
            .iter()
            .map(|&slope| {
                let pts: Vec<(u32, f64)> =
                    (1..=5).map(|i| (i * 100, 0.01 + slope * f64::from(i * 100))).collect();
                affine_fit(&pts).unwrap().capacity().unwrap()
            })
            .collect();
        assert!(caps[0] > caps[1] && caps[1] > caps[2]);
    }

    #[test]
    fn affine_fit_constant_delays() {
        let fit = affine_fit(&[(100, 0.02), (200, 0.02), (300, 0.02)]).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
        assert_eq!(fit.capacity(), None);
    }

    #[test]
    fn intercept_model_exact_recovery() {
        let (alpha, beta) = (1e-4, 5e-6);
        let obs: Vec<(u32, f64, f64)> = (1..=10)
            .map(|n| {
                let l = 37.0 + 11.0 * f64::from(n % 4);
                (n, l, alpha * f64::from(n) + beta * l)
            })
            .collect();
        let model = fit_intercept_model(&obs).unwrap();
        assert!(!model.rank_deficient);
        assert_relative_eq!(model.alpha, alpha, max_relative = 1e-12);
        assert_relative_eq!(model.beta, beta, max_relative = 1e-12);
        assert!(model.residual_norm < 1e-15);
    }

    #[test]
    fn intercept_model_single_regressor_flagged() {
        let obs: Vec<(u32, f64, f64)> = (1..=6).map(|n| (n, 0.0, 2e-4 * f64::from(n))).collect();
        let model = fit_intercept_model(&obs).unwrap();
        assert!(model.rank_deficient);
        assert_relative_eq!(model.alpha, 2e-4, max_relative = 1e-12);
        assert_eq!(model.beta, 0.0);
    }

    #[test]
    fn intercept_model_collinear_columns_flagged() {
        // l = 3 n exactly: columns collinear, combined regressor through alpha
        let obs: Vec<(u32, f64, f64)> =
            (1..=6).map(|n| (n, 3.0 * f64::from(n), 1e-4 * f64::from(n))).collect();
        let model = fit_intercept_model(&obs).unwrap();
        assert!(model.rank_deficient);
        assert_relative_eq!(model.alpha, 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn estimate_path_two_sizes_paper_values() {
        let stats = vec![stat(100, 0.043591, 0.0436), stat(1024, 0.044083, 0.044111)];
        let est = estimate_path(&stats).unwrap();
        assert_relative_eq!(est.b_av.unwrap(), 14_465_753.424657535, max_relative = 1e-6);
        assert_relative_eq!(est.capacity.unwrap(), 15_024_390.243902437, max_relative = 1e-6);
        let d_min = est.d_min.unwrap();
        assert!(d_min > 0.0435 && d_min < 0.0436);
        assert_eq!(est.intercept_a, est.d_min);
    }

    #[test]
    fn estimate_path_absent_fields_not_fabricated() {
        // equal mean delays: b_av impossible, capacity still present
        let stats = vec![stat(100, 0.0430, 0.0436), stat(1024, 0.0435, 0.0436)];
        let est = estimate_path(&stats).unwrap();
        assert_eq!(est.b_av, None);
        assert!(est.capacity.is_some());
        assert!(!est.warnings.is_empty());
    }

    #[test]
    fn estimate_path_requires_two_sizes() {
        assert!(matches!(
            estimate_path(&[stat(100, 0.1, 0.1)]),
            Err(EstimatorError::InsufficientData(_))
        ));
    }

    #[test]
    fn estimate_path_three_sizes_uses_fit() {
        // exact line in both statistics: all fields recover the line parameters
        let slope_min = 1e-6;
        let slope_mean = 1.25e-6;
        let stats: Vec<SizeDelayStats> = [64u32, 512, 1064]
            .iter()
            .map(|&w| {
                stat(w, 0.002 + slope_min * f64::from(w), 0.0021 + slope_mean * f64::from(w))
            })
            .collect();
        let est = estimate_path(&stats).unwrap();
        assert_relative_eq!(est.b_av.unwrap(), 8.0 / slope_mean, max_relative = 1e-9);
        assert_relative_eq!(est.capacity.unwrap(), 8.0 / slope_min, max_relative = 1e-9);
        assert_relative_eq!(est.d_min.unwrap(), 0.002, max_relative = 1e-9);
        assert_relative_eq!(est.intercept_a.unwrap(), 0.0021, max_relative = 1e-9);
    }

    #[test]
    fn estimate_path_never_negative() {
        // steeply rising minima extrapolate to a negative d_min: omitted with a warning
        let stats = vec![stat(100, 0.001, 0.002), stat(1024, 0.050, 0.060)];
        assert!(dmin_two_point(100, 0.001, 1024, 0.050).unwrap() < 0.0);
        let est = estimate_path(&stats).unwrap();
        assert_eq!(est.d_min, None);
        assert_eq!(est.intercept_a, None);
        assert!(est.warnings.iter().any(|w| w.contains("physically impossible")));
        for v in [est.b_av, est.capacity, est.d_min, est.intercept_a].into_iter().flatten() {
            assert!(v >= 0.0);
        }
    }
}

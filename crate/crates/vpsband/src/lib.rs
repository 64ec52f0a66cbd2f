//! End-to-end throughput metrics from delay measurements of packets of
//! different sizes.
//!
//! The toolkit estimates three path metrics from size/delay observations:
//!
//! * available bandwidth `B_av = 8 (W2 - W1) / (D2 - D1)` on mean delays,
//! * capacity `C` from the same two-point form on per-size minimum delays
//!   (or from the slope of a least-squares delay-vs-size fit),
//! * minimal path delay `D_min`, the delay-axis intercept of the
//!   delay-vs-size line.
//!
//! Delay observations can come from three producers sharing one sample
//! representation ([`samples`]): an active round-trip probe engine
//! ([`probe`]), a RIPE Test Box log ingester producing one-way delays
//! ([`ripe`]), and a discrete-event path simulator with closed-form ground
//! truth ([`pathsim`]). The pure estimation formulas live in
//! [`estimators`]; [`cli`] wires everything into a command-line front end.

pub mod cli;
pub mod estimators;
pub mod pathsim;
pub mod probe;
pub mod ripe;
pub mod samples;

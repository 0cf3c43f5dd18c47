//! Closed-form cost model of one query over a constrained link.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Plain request/response after a one-time client download.
    Traditional,
    /// Parked agent at the broker; every exchange rides a messenger agent.
    ParkedMessenger,
    /// Parked agent at the broker; later exchanges are bare messages.
    ParkedMessages,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Self::Traditional, Self::ParkedMessenger, Self::ParkedMessages];

    pub fn name(self) -> &'static str {
        match self {
            Self::Traditional => "traditional",
            Self::ParkedMessenger => "parked_messenger",
            Self::ParkedMessages => "parked_messages",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkModel {
    pub bandwidth_bps: f64,
    pub rtt_s: f64,
    /// Protocol framing added to every request and every response.
    pub overhead_bytes: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            bandwidth_bps: 64_000.0,
            rtt_s: 0.3,
            overhead_bytes: 300.0,
        }
    }
}

/// Bytes moved by one request/response exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundTrip {
    pub up: f64,
    pub down: f64,
}

impl RoundTrip {
    pub fn new(up: f64, down: f64) -> Self {
        Self { up, down }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.bandwidth_bps) && ok(self.rtt_s) && ok(self.overhead_bytes)) {
            return Err("link parameters must be positive and finite".into());
        }
        Ok(())
    }

    pub fn transfer_time(&self, bytes: f64) -> f64 {
        bytes * 8.0 / self.bandwidth_bps
    }

    pub fn round_trip_time(&self, trip: RoundTrip) -> f64 {
        self.rtt_s + self.transfer_time(trip.up + trip.down + 2.0 * self.overhead_bytes)
    }
}

/// Payload sizes for one strategy. The same values are usually shared by
/// all three strategies so only the exchange pattern differs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workload {
    /// One-time download before a traditional client can query.
    pub setup_bytes: f64,
    /// Agent envelope framing around a payload.
    pub envelope_bytes: f64,
    pub query_bytes: f64,
    pub result_bytes: f64,
    pub broker_processing_s: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            setup_bytes: 200_000.0,
            envelope_bytes: 8_000.0,
            query_bytes: 2_000.0,
            result_bytes: 2_000.0,
            broker_processing_s: 0.0,
        }
    }
}

impl Workload {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            self.setup_bytes,
            self.envelope_bytes,
            self.query_bytes,
            self.result_bytes,
            self.broker_processing_s,
        ];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("workload values must be non-negative and finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyModel {
    pub strategy: Strategy,
    pub workload: Workload,
}

impl StrategyModel {
    pub fn new(strategy: Strategy, workload: Workload) -> Self {
        Self { strategy, workload }
    }

    /// Exchanges a query makes, in order.
    pub fn exchanges(&self, is_first: bool) -> Vec<RoundTrip> {
        let Workload {
            setup_bytes: setup,
            envelope_bytes: env,
            query_bytes: q,
            result_bytes: r,
            ..
        } = self.workload;
        match (self.strategy, is_first) {
            (Strategy::Traditional, true) => vec![RoundTrip::new(0.0, setup), RoundTrip::new(q, r)],
            (Strategy::Traditional, false) => vec![RoundTrip::new(q, r)],
            // parked agent carrying the query, then a messenger shuttle for the answer
            (Strategy::ParkedMessenger, true) => vec![RoundTrip::new(env + q, 0.0), RoundTrip::new(env, env + r)],
            (Strategy::ParkedMessenger, false) => vec![RoundTrip::new(env + q, env + r)],
            // parked agent carrying the query, then a bare result pickup
            (Strategy::ParkedMessages, true) => vec![RoundTrip::new(env + q, 0.0), RoundTrip::new(0.0, r)],
            (Strategy::ParkedMessages, false) => vec![RoundTrip::new(q, r)],
        }
    }
}

/// Deterministic time of one query.
pub fn simulate_query(model: &StrategyModel, link: &LinkModel, is_first: bool) -> f64 {
    model
        .exchanges(is_first)
        .into_iter()
        .map(|trip| link.round_trip_time(trip))
        .sum::<f64>()
        + model.workload.broker_processing_s
}

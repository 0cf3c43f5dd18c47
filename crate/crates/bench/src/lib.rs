//! Query-time comparison of the traditional, parked-messenger and
//! parked-messages strategies over a slow link.
//!
//! The simulated mode evaluates a closed-form cost model. The integration
//! mode drives the real broker and providers in process, takes byte counts
//! from the actual encodings, charges link time for them and adds the
//! measured broker processing time.

pub mod integration;
pub mod model;
pub mod report;
pub mod stats;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub use model::{simulate_query, LinkModel, RoundTrip, Strategy, StrategyModel, Workload};
pub use report::{BenchReport, Phase, ReportRow};
pub use stats::Summary;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    Config(String),
    #[error("at least one query is required")]
    NoQueries,
    #[error(transparent)]
    Service(#[from] cbir_services::ServiceError),
}

/// Fixture shape for integration runs.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationConfig {
    pub providers: usize,
    pub images_per_provider: usize,
    pub side: usize,
    pub k: u32,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            providers: 2,
            images_per_provider: 10,
            side: 64,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub link: LinkModel,
    pub workload: Workload,
    /// Relative jitter amplitude: each sample is scaled by `1 + u`, `u` uniform in `[-jitter, jitter]`.
    pub jitter: f64,
    pub integration: IntegrationConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            link: LinkModel::default(),
            workload: Workload::default(),
            jitter: 0.0,
            integration: IntegrationConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let config: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.link.validate().map_err(BenchError::Config)?;
        self.workload.validate().map_err(BenchError::Config)?;
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(BenchError::Config("jitter must be in [0, 1)".into()));
        }
        let i = &self.integration;
        if i.providers == 0 || i.images_per_provider == 0 || i.side < 8 || i.k == 0 {
            return Err(BenchError::Config("integration fixture must be non-empty".into()));
        }
        Ok(())
    }
}

/// Simulates one first query and `n_queries - 1` subsequent queries for each
/// strategy. The seed drives the jitter only, so equal seeds give equal reports.
pub fn run_bench(config: &BenchConfig, n_queries: usize, seed: u64) -> Result<BenchReport, BenchError> {
    config.validate()?;
    if n_queries == 0 {
        return Err(BenchError::NoQueries);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jittered = |t: f64| {
        if config.jitter == 0.0 {
            t
        } else {
            t * (1.0 + rng.random_range(-config.jitter..=config.jitter))
        }
    };
    let mut report = BenchReport::default();
    for strategy in Strategy::ALL {
        let model = StrategyModel::new(strategy, config.workload);
        let first = [jittered(simulate_query(&model, &config.link, true))];
        let base = simulate_query(&model, &config.link, false);
        let rest: Vec<f64> = (1..n_queries).map(|_| jittered(base)).collect();
        report.push(strategy, Phase::First, &first);
        report.push(strategy, Phase::Subsequent, &rest);
    }
    Ok(report)
}

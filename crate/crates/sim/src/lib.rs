//! Experiment driver for the partitioning simulator: config files, single
//! runs, parameter sweeps, policy comparisons and CSV output.

pub mod config;
pub mod report;
pub mod sweep;
pub mod tools;

use jarvis_core::sim::{run_experiment, ExperimentConfig, MetricsSeries, SimError};
use thiserror::Error;

pub use config::SimConfig;
pub use report::{summarize, write_metrics_csv, Summary};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Read(String, String),
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    NotConverged(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(m) => CliError::Config(ConfigError::Invalid(m)),
            other => CliError::Sim(other),
        }
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for runs that failed to converge
    /// when asked to, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            _ => 1,
        }
    }
}

/// Everything one run produced.
pub struct RunOutput {
    pub experiment: ExperimentConfig,
    pub series: MetricsSeries,
    pub summary: Summary,
}

pub fn run(cfg: &SimConfig) -> Result<RunOutput, CliError> {
    let experiment = cfg.to_experiment()?;
    log::info!(
        "running {} epochs, {} sources, {} queries",
        experiment.epochs,
        experiment.n_sources,
        experiment.queries.len()
    );
    let series = run_experiment(&experiment)?;
    let summary = summarize(&experiment, &series, &cfg.change_epochs());
    log::info!("throughput {:.3} Mbps", summary.throughput_mbps);
    Ok(RunOutput {
        experiment,
        series,
        summary,
    })
}

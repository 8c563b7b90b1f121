//! Parameter sweeps and policy comparisons, run concurrently.

use std::io::Write;
use std::str::FromStr;

use jarvis_core::baselines::PolicyKind;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SimConfig;
use crate::{run, CliError, ConfigError};

pub const SWEEP_HEADER: &str = "# jarvis-sim sweep v1";

/// Share of the offered input a point must sustain to count as keeping up.
pub const FULL_THROUGHPUT: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Cores per source; the budget is constant at each point.
    CpuBudget,
    NSources,
    /// Multiplies every query's input rate.
    InputScale,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::CpuBudget => "cpu_budget",
            Axis::NSources => "n_sources",
            Axis::InputScale => "input_scale",
        }
    }
}

impl FromStr for Axis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "cpu_budget" => Ok(Axis::CpuBudget),
            "n_sources" => Ok(Axis::NSources),
            "input_scale" => Ok(Axis::InputScale),
            _ => Err(ConfigError::Invalid(format!(
                "unknown sweep axis `{s}` (cpu_budget, n_sources, input_scale)"
            ))),
        }
    }
}

/// Parses `0.2,0.4` or `20%,40%` (percent of a core).
pub fn parse_values(text: &str) -> Result<Vec<f64>, ConfigError> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let (num, k) = match s.strip_suffix('%') {
                Some(n) => (n, 0.01),
                None => (s, 1.0),
            };
            num.parse::<f64>()
                .map(|v| v * k)
                .map_err(|_| ConfigError::Invalid(format!("bad sweep value `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(ConfigError::Invalid("the sweep needs at least one value".into()));
    }
    Ok(values)
}

/// The configuration of one sweep point.
pub fn apply(cfg: &SimConfig, axis: Axis, value: f64) -> Result<SimConfig, ConfigError> {
    let mut out = cfg.clone();
    match axis {
        Axis::CpuBudget => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!("cpu budget {value} must be non-negative")));
            }
            out.budget.cores = value;
            out.budget.steps.clear();
        }
        Axis::NSources => {
            if !(value >= 1.0 && value.fract() == 0.0 && value <= f64::from(u32::MAX)) {
                return Err(ConfigError::Invalid(format!("source count {value} must be a positive integer")));
            }
            out.topology.sources = value as u32;
        }
        Axis::InputScale => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid(format!("input scale {value} must be non-negative")));
            }
            for q in &mut out.queries {
                q.rate_scale *= value;
                q.rate_scale_steps.iter_mut().for_each(|s| s.scale *= value);
            }
        }
    }
    Ok(out)
}

pub fn with_policy(cfg: &SimConfig, policy: PolicyKind) -> SimConfig {
    let mut out = cfg.clone();
    for q in &mut out.queries {
        q.policy = policy.name().into();
        // Carry-over is a property of the policy's execution model.
        q.carryover = None;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointResult {
    pub axis: &'static str,
    pub value: f64,
    pub policy: String,
    pub throughput_mbps: f64,
    pub offered_mbps: f64,
    pub traffic_mbps: f64,
    pub latency_median_s: f64,
    pub latency_max_s: f64,
    pub full_throughput: bool,
    pub converged: bool,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(std::io::Error::other(e)))
}

fn evaluate(cfg: &SimConfig, axis: Axis, value: f64, policy: &str) -> Result<PointResult, CliError> {
    let out = run(cfg)?;
    let s = &out.summary;
    let offered: f64 = s.queries.iter().map(|q| q.offered_mbps).sum();
    Ok(PointResult {
        axis: axis.name(),
        value,
        policy: policy.into(),
        throughput_mbps: s.throughput_mbps,
        offered_mbps: offered,
        traffic_mbps: s.traffic_mbps,
        latency_median_s: s.latency_median_s,
        latency_max_s: s.latency_max_s,
        full_throughput: s.throughput_mbps >= FULL_THROUGHPUT * offered,
        converged: s.all_converged(),
    })
}

/// One run per (value, policy), at most `jobs` at a time; results come back
/// in input order. Without `policies` each point keeps the file's policies.
pub fn sweep(
    cfg: &SimConfig,
    axis: Axis,
    values: &[f64],
    policies: &[PolicyKind],
    jobs: usize,
) -> Result<Vec<PointResult>, CliError> {
    if values.is_empty() {
        return Err(ConfigError::Invalid("the sweep needs at least one value".into()).into());
    }
    let mut points = Vec::new();
    for &v in values {
        let base = apply(cfg, axis, v)?;
        if policies.is_empty() {
            let label = base.queries.iter().map(|q| q.policy.as_str()).collect::<Vec<_>>().join("+");
            base.to_experiment()?;
            points.push((base, v, label));
        } else {
            for &p in policies {
                let c = with_policy(&base, p);
                c.to_experiment()?;
                points.push((c, v, p.name().to_string()));
            }
        }
    }
    pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|(c, v, label)| {
                log::debug!("sweep point {}={v} {label}", axis.name());
                evaluate(c, axis, *v, label)
            })
            .collect()
    })
}

pub fn write_sweep_csv<W: Write>(rows: &[PointResult], mut out: W) -> Result<(), CliError> {
    writeln!(out, "{SWEEP_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub policy: String,
    pub throughput_mbps: f64,
    pub traffic_mbps: f64,
    pub latency_median_s: f64,
    /// Throughput relative to the first policy.
    pub ratio_to_first: f64,
}

/// Runs every policy on the same seeds and schedules.
pub fn compare(cfg: &SimConfig, policies: &[PolicyKind], jobs: usize) -> Result<Vec<CompareRow>, CliError> {
    if policies.len() < 2 {
        return Err(ConfigError::Invalid("compare needs at least two policies".into()).into());
    }
    let configs: Vec<SimConfig> = policies.iter().map(|p| with_policy(cfg, *p)).collect();
    for c in &configs {
        c.to_experiment()?;
    }
    let results = pool(jobs)?.install(|| {
        configs
            .par_iter()
            .map(|c| run(c).map(|o| o.summary))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let first = results[0].throughput_mbps;
    Ok(policies
        .iter()
        .zip(&results)
        .map(|(p, s)| CompareRow {
            policy: p.name().into(),
            throughput_mbps: s.throughput_mbps,
            traffic_mbps: s.traffic_mbps,
            latency_median_s: s.latency_median_s,
            ratio_to_first: if first > 0.0 { s.throughput_mbps / first } else { f64::NAN },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use jarvis_core::workloads::QueryKind;

    fn small() -> SimConfig {
        let mut cfg = SimConfig::single(QueryKind::S2SProbe, PolicyKind::AllSP, 0.5, 1);
        cfg.run.epochs = 8;
        cfg.run.warmup_epochs = 4;
        cfg.run.record_weight = 50;
        cfg
    }

    #[test]
    fn values() {
        assert_eq!(parse_values("20%, 40%").unwrap(), [0.2, 0.4]);
        assert_eq!(parse_values("1,2.5").unwrap(), [1.0, 2.5]);
        assert!(parse_values("").is_err());
        assert!(parse_values("x").is_err());
        assert!("bandwidth".parse::<Axis>().is_err());
        assert_eq!("n-sources".parse::<Axis>().unwrap(), Axis::NSources);
    }

    #[test]
    fn points_apply_their_value() {
        let cfg = small();
        assert_eq!(apply(&cfg, Axis::CpuBudget, 0.3).unwrap().budget.cores, 0.3);
        assert_eq!(apply(&cfg, Axis::NSources, 4.0).unwrap().topology.sources, 4);
        assert!(apply(&cfg, Axis::NSources, 2.5).is_err());
        assert_eq!(apply(&cfg, Axis::InputScale, 0.5).unwrap().queries[0].rate_scale, 0.5);
    }

    #[test]
    fn sweep_rows_follow_input_order() {
        let rows = sweep(&small(), Axis::CpuBudget, &[0.2, 0.6], &[PolicyKind::AllSP, PolicyKind::AllSrc], 2).unwrap();
        let labels: Vec<(f64, &str)> = rows.iter().map(|r| (r.value, r.policy.as_str())).collect();
        assert_eq!(labels, [(0.2, "all-sp"), (0.2, "all-src"), (0.6, "all-sp"), (0.6, "all-src")]);
        assert!(sweep(&small(), Axis::CpuBudget, &[], &[], 1).is_err());
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(SWEEP_HEADER));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn self_comparison_is_even() {
        let rows = compare(&small(), &[PolicyKind::AllSP, PolicyKind::AllSP], 1).unwrap();
        assert_eq!(rows[1].ratio_to_first, 1.0);
        assert!(compare(&small(), &[PolicyKind::AllSP], 1).is_err());
    }
}

//! The small subcommands: LP instances, workload dumps, cost breakdowns.

use std::io::Write;
use std::path::Path;

use jarvis_core::baselines::PolicyKind;
use jarvis_core::operators::{CostModel, Payload};
use jarvis_core::partition::{brute_force, solve_lp, PartitionProblem};
use jarvis_core::sim::{run_experiment, ExperimentConfig};
use jarvis_core::workloads::{GenStream, QueryKind, WINDOW_MS};
use serde::{Deserialize, Serialize};

use crate::{CliError, ConfigError};

/// A partitioning problem as written in an instance file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    /// Records injected per epoch.
    pub records: f64,
    /// Compute budget per epoch.
    pub budget_cpu_s: f64,
    /// Per-record cost of each operator.
    pub cost_cpu_s: Vec<f64>,
    /// Output-to-input size ratio of each operator.
    pub relay: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub load_factors: Vec<f64>,
    pub effective_load_factors: Vec<f64>,
    pub drained_fraction: f64,
    pub compute_used_cpu_s: f64,
    /// Best drained fraction on the search grid, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_drained_fraction: Option<f64>,
}

pub fn load_instance(path: &Path) -> Result<Instance, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.display().to_string(), e.to_string()))?;
    toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
}

pub fn solve(inst: &Instance, grid: Option<f64>) -> Result<SolveReport, ConfigError> {
    let invalid = |e: jarvis_core::partition::PartitionError| ConfigError::Invalid(e.to_string());
    let prob = PartitionProblem::new(inst.records, inst.budget_cpu_s, inst.cost_cpu_s.clone(), inst.relay.clone())
        .map_err(invalid)?;
    let s = solve_lp(&prob).map_err(invalid)?;
    let grid_drained_fraction = match grid {
        Some(g) if !(g > 0.0 && g <= 1.0) => {
            return Err(ConfigError::Invalid("the grid step must lie in (0, 1]".into()));
        }
        Some(g) => Some(brute_force(&prob, g).map_err(invalid)?.drained_fraction),
        None => None,
    };
    Ok(SolveReport {
        load_factors: s.p,
        effective_load_factors: s.e,
        drained_fraction: s.drained_fraction,
        compute_used_cpu_s: s.compute_used * inst.records,
        grid_drained_fraction,
    })
}

/// What `gen` dumps.
#[derive(Clone, Debug, PartialEq)]
pub struct GenRequest {
    pub kind: QueryKind,
    pub seed: u64,
    pub rate_mbps: Option<f64>,
    pub node: u32,
    pub first_epoch: u64,
    pub epochs: u64,
    pub record_weight: u32,
}

/// Writes generated records as CSV, one epoch after another.
pub fn generate<W: Write>(req: &GenRequest, mut out: W) -> Result<u64, CliError> {
    let mut gen = req.kind.workload(req.seed);
    if let Some(r) = req.rate_mbps {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(ConfigError::Invalid("rate_mbps must be finite and non-negative".into()).into());
        }
        gen.set_rate_mbps(r);
    }
    if req.record_weight == 0 {
        return Err(ConfigError::Invalid("record weight must be positive".into()).into());
    }
    let stream = GenStream {
        node: req.node,
        query: 0,
        epoch_ms: 1_000,
        window_ms: WINDOW_MS,
        weight: req.record_weight,
    };
    writeln!(out, "# jarvis-sim records v1")?;
    let mut w = csv::Writer::from_writer(out);
    let probe = matches!(req.kind, QueryKind::S2SProbe | QueryKind::T2TProbe);
    if probe {
        w.write_record(["event_time_ms", "window_id", "src_ip", "dst_ip", "src_cluster", "dst_cluster", "rtt_us", "err_code"])?;
    } else {
        w.write_record(["event_time_ms", "window_id", "line"])?;
    }
    // Generator indices continue across epochs as they do in a run.
    let mut cursor = (0..req.first_epoch).map(|e| gen.offered(&stream, e)).sum::<u64>();
    let mut written = 0;
    for epoch in req.first_epoch..req.first_epoch + req.epochs {
        let n = gen.offered(&stream, epoch);
        for r in gen.batch(&stream, epoch, cursor, n) {
            let head = [r.event_time_ms.to_string(), r.window_id.to_string()];
            match &r.payload {
                Payload::Probe(p) => w.write_record(head.into_iter().chain([
                    ip(p.src_ip),
                    ip(p.dst_ip),
                    p.src_cluster.to_string(),
                    p.dst_cluster.to_string(),
                    p.rtt_us.to_string(),
                    p.err_code.to_string(),
                ]))?,
                Payload::Line(l) => w.write_record(head.into_iter().chain([l.trim_end().to_string()]))?,
                _ => continue,
            }
            written += 1;
        }
        cursor += n;
    }
    w.flush()?;
    Ok(written)
}

fn ip(v: u32) -> String {
    let [a, b, c, d] = v.to_be_bytes();
    format!("{a}.{b}.{c}.{d}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorLoad {
    pub operator: String,
    /// Real records per second reaching the operator.
    pub records_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostExplanation {
    pub kind: String,
    pub rate_mbps: f64,
    /// Cores needed to run the whole source-eligible prefix locally.
    pub full_local_cores: f64,
    pub operators: Vec<OperatorLoad>,
}

/// Measures what full local execution costs by running every operator on
/// the source with unlimited compute and bandwidth.
pub fn explain(
    kind: QueryKind,
    rate_scale: f64,
    table_entries: usize,
    cost: &CostModel,
    record_weight: u32,
) -> Result<CostExplanation, CliError> {
    let mut cfg = ExperimentConfig::single(kind, PolicyKind::AllSrc, 1e6, 1);
    cfg.epochs = 24;
    // Groups fill up over a window; measure once they are warm.
    cfg.warmup = 12;
    cfg.record_weight = record_weight;
    cfg.cost = cost.clone();
    cfg.sp_execute = false;
    cfg.queries[0].link_mbps = f64::INFINITY;
    cfg.queries[0].rate_scale = jarvis_core::sim::Schedule::constant(rate_scale);
    cfg.queries[0].table_entries = jarvis_core::sim::Schedule::constant(table_entries);
    let series = run_experiment(&cfg)?;
    let measured: Vec<_> = series.rows.iter().filter(|r| r.epoch >= cfg.warmup).collect();
    let n = measured.len() as f64 * cfg.epoch_s();
    let plan = kind.plan();
    let operators = plan.operators[..plan.source_eligible_len]
        .iter()
        .enumerate()
        .map(|(j, op)| OperatorLoad {
            operator: op.params.kind().name().into(),
            records_per_s: measured.iter().map(|r| r.processed[j] as f64).sum::<f64>() * f64::from(record_weight) / n,
        })
        .collect();
    Ok(CostExplanation {
        kind: kind.name().into(),
        rate_mbps: cfg.queries[0].workload.rate_mbps() * rate_scale,
        full_local_cores: measured.iter().map(|r| r.local_compute_used).sum::<f64>() / n,
        operators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_reports_lp_and_grid() {
        let inst = Instance {
            records: 1000.0,
            budget_cpu_s: 0.05,
            cost_cpu_s: vec![1e-4, 1e-4],
            relay: vec![0.5, 0.5],
        };
        let r = solve(&inst, Some(0.05)).unwrap();
        assert!(r.compute_used_cpu_s <= 0.05 + 1e-12);
        assert!(r.drained_fraction <= r.grid_drained_fraction.unwrap() + 1e-12);
        let bad = Instance { relay: vec![0.5], ..inst };
        assert!(solve(&bad, None).is_err());
    }

    #[test]
    fn generated_rows_match_the_rate() {
        let req = GenRequest {
            kind: QueryKind::S2SProbe,
            seed: 1,
            rate_mbps: Some(2.62),
            node: 0,
            first_epoch: 0,
            epochs: 1,
            record_weight: 1,
        };
        let mut buf = Vec::new();
        let n = generate(&req, &mut buf).unwrap();
        assert_eq!(n, 3_808);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3_808 + 2);
        let mut again = Vec::new();
        generate(&req, &mut again).unwrap();
        assert_eq!(text.as_bytes(), &again[..]);
    }

    #[test]
    fn log_pipeline_uses_about_a_third_of_a_core() {
        let e = explain(QueryKind::LogAnalytics, 1.0, 500, &CostModel::default(), 10).unwrap();
        assert!((e.full_local_cores - 0.31).abs() <= 0.01, "{e:?}");
        assert_eq!(e.operators.len(), 5);
    }
}

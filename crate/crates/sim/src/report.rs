//! Metrics CSV and run summaries.

use std::io::Write;

use jarvis_core::sim::{convergence_epochs, ExperimentConfig, MetricsSeries};
use serde::Serialize;

/// First line of every metrics file.
pub const METRICS_HEADER: &str = "# jarvis-sim metrics v1";
pub const SUMMARY_SCHEMA: &str = "jarvis-sim summary v1";

const COLUMNS: [&str; 19] = [
    "epoch",
    "node",
    "query",
    "offered_records",
    "admitted_records",
    "input_bytes",
    "drained_bytes",
    "result_bytes",
    "link_sent_bytes",
    "link_backlog_bytes",
    "local_compute_used_cpu_s",
    "budget_cpu_s",
    "epoch_latency_s",
    "phase",
    "query_state",
    "converged",
    "load_factors",
    "est_cost_cpu_s",
    "est_relay",
];

fn joined(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";")
}

/// One row per (epoch, node, query); records count simulated records.
pub fn write_metrics_csv<W: Write>(series: &MetricsSeries, mut out: W) -> csv::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in &series.rows {
        w.write_record([
            r.epoch.to_string(),
            r.node.to_string(),
            r.query.to_string(),
            r.offered_records.to_string(),
            r.admitted_records.to_string(),
            r.input_bytes.to_string(),
            r.drained_bytes.to_string(),
            r.result_bytes.to_string(),
            r.link_sent_bytes.to_string(),
            r.link_backlog_bytes.to_string(),
            format!("{}", r.local_compute_used),
            format!("{}", r.budget),
            format!("{}", r.epoch_latency),
            r.phase.name().to_string(),
            r.query_state.name().to_string(),
            r.converged.to_string(),
            joined(&r.load_factors),
            joined(&r.est_c),
            joined(&r.est_r),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceEntry {
    pub node: u32,
    pub query: u32,
    pub change_epoch: u64,
    /// `None` when the instance never settled.
    pub epochs_raw: Option<u64>,
    pub epochs_after_detection: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuerySummary {
    pub query: u32,
    pub kind: String,
    pub policy: String,
    pub throughput_mbps: f64,
    pub offered_mbps: f64,
    pub traffic_mbps: f64,
    /// Load factors of node 0 in the last epoch.
    pub final_load_factors: Vec<f64>,
    pub sp_compute_cpu_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub epochs: u64,
    pub warmup_epochs: u64,
    pub sources: u32,
    pub throughput_mbps: f64,
    pub traffic_mbps: f64,
    pub latency_median_s: f64,
    pub latency_max_s: f64,
    pub queries: Vec<QuerySummary>,
    pub convergence: Vec<ConvergenceEntry>,
}

impl Summary {
    pub fn all_converged(&self) -> bool {
        self.convergence.iter().all(|c| c.epochs_raw.is_some())
    }
}

/// Mean Mbps of input offered in measured epochs, real bytes.
fn offered_mbps(cfg: &ExperimentConfig, series: &MetricsSeries, query: u32) -> f64 {
    let measured = series.epochs.saturating_sub(series.warmup) as f64 * series.epoch_s;
    let qc = &cfg.queries[query as usize];
    let bytes: f64 = series
        .rows
        .iter()
        .filter(|r| r.query == query && r.epoch >= series.warmup)
        .map(|r| r.offered_records as f64 * f64::from(series.record_weight) * f64::from(qc.workload.record_bytes()))
        .sum();
    bytes * 8.0 / 1e6 / measured
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Summarizes a run; `change_epochs` are the schedule breakpoints whose
/// convergence is reported.
pub fn summarize(cfg: &ExperimentConfig, series: &MetricsSeries, change_epochs: &[u64]) -> Summary {
    let bound = cfg.latency_bound_s;
    let lat = series.latencies();
    let queries = (0..series.queries)
        .map(|q| {
            let qc = &cfg.queries[q as usize];
            QuerySummary {
                query: q,
                kind: qc.kind.name().into(),
                policy: qc.policy.name().into(),
                throughput_mbps: series.throughput_where(bound, |r| r.query == q).unwrap_or(0.0),
                offered_mbps: offered_mbps(cfg, series, q),
                traffic_mbps: series.traffic_where(|r| r.query == q).unwrap_or(0.0),
                final_load_factors: series
                    .rows_for(0, q)
                    .last()
                    .map(|r| r.load_factors.clone())
                    .unwrap_or_default(),
                sp_compute_cpu_s: series.sp_compute_used.get(q as usize).copied().unwrap_or(0.0),
            }
        })
        .collect();
    let mut convergence = Vec::new();
    for &change in change_epochs {
        for node in 0..series.nodes {
            for query in 0..series.queries {
                let c = convergence_epochs(series, node, query, change).ok();
                convergence.push(ConvergenceEntry {
                    node,
                    query,
                    change_epoch: change,
                    epochs_raw: c.map(|c| c.raw),
                    epochs_after_detection: c.map(|c| c.after_detection),
                });
            }
        }
    }
    Summary {
        schema: SUMMARY_SCHEMA,
        epochs: series.epochs,
        warmup_epochs: series.warmup,
        sources: series.nodes,
        throughput_mbps: series.throughput_where(bound, |_| true).unwrap_or(0.0),
        traffic_mbps: series.traffic_where(|_| true).unwrap_or(0.0),
        latency_median_s: percentile(&lat, 0.5),
        latency_max_s: lat.last().copied().unwrap_or(0.0),
        queries,
        convergence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use jarvis_core::baselines::PolicyKind;
    use jarvis_core::sim::run_experiment;
    use jarvis_core::workloads::QueryKind;

    fn small() -> (ExperimentConfig, MetricsSeries) {
        let mut cfg = ExperimentConfig::single(QueryKind::S2SProbe, PolicyKind::AllSP, 0.5, 1);
        cfg.epochs = 6;
        cfg.warmup = 2;
        cfg.record_weight = 50;
        cfg.queries[0].link_mbps = f64::INFINITY;
        let s = run_experiment(&cfg).unwrap();
        (cfg, s)
    }

    #[test]
    fn csv_has_versioned_header_and_a_row_per_epoch() {
        let (_, s) = small();
        let mut buf = Vec::new();
        write_metrics_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(METRICS_HEADER));
        assert_eq!(lines.next().unwrap().split(',').count(), COLUMNS.len());
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn summary_of_an_unconstrained_run() {
        let (cfg, s) = small();
        let sum = summarize(&cfg, &s, &[0]);
        assert!((sum.throughput_mbps - 26.2).abs() < 0.01, "{sum:?}");
        assert!((sum.queries[0].offered_mbps - 26.2).abs() < 0.01);
        assert_eq!(sum.latency_max_s, 1.0);
        assert!(sum.all_converged());
        let json = serde_json::to_string(&sum).unwrap();
        assert!(json.contains(SUMMARY_SCHEMA));
    }

    #[test]
    fn percentiles() {
        assert_eq!(percentile(&[], 0.5), 0.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 1.0), 3.0);
    }
}

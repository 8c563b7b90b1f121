//! Per-epoch measurements and the derived throughput / convergence numbers.

use alloc::vec::Vec;

use crate::operators::Record;
use crate::proxy::ProxyStats;
use crate::runtime::{QueryState, RuntimePhase};

use super::SimError;

/// One row per (epoch, node, query).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub node: u32,
    pub query: u32,
    /// Generated records the workload offered.
    pub offered_records: u64,
    /// Generated records admitted into the query.
    pub admitted_records: u64,
    /// Real bytes behind the admitted records.
    pub input_bytes: u64,
    /// Bytes put on the drain path (policy and backpressure drains).
    pub drained_bytes: u64,
    /// Bytes of partial or final results sent.
    pub result_bytes: u64,
    pub link_sent_bytes: u64,
    pub link_backlog_bytes: u64,
    /// cpu-seconds spent by source-side operators.
    pub local_compute_used: f64,
    pub budget: f64,
    /// Seconds from ingestion to delivery of the epoch's data.
    pub epoch_latency: f64,
    pub phase: RuntimePhase,
    pub query_state: QueryState,
    pub converged: bool,
    pub load_factors: Vec<f64>,
    /// Latest profile estimate, empty before the first profile.
    pub est_c: Vec<f64>,
    pub est_r: Vec<f64>,
    pub proxies: Vec<ProxyStats>,
    /// Records each source-side operator processed.
    pub processed: Vec<u64>,
    /// Records waiting at each operator when the epoch began and ended.
    pub queued_in: Vec<u64>,
    pub queued_out: Vec<u64>,
}

impl EpochMetrics {
    /// Per-operator record accounting: every arrival is forwarded or
    /// drained, and every forwarded or carried record is processed, flushed
    /// or still queued.
    pub fn balanced(&self) -> bool {
        self.proxies.iter().enumerate().all(|(j, s)| {
            let routed = s.forwarded + s.drained_by_policy == s.arrived;
            let queue = self.queued_in[j] + s.forwarded
                == self.processed[j] + s.drained_backpressure + self.queued_out[j];
            routed && queue
        }) && self.proxies.first().is_none_or(|s| s.arrived == self.admitted_records)
    }
}

/// Everything a run produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsSeries {
    pub epoch_s: f64,
    pub warmup: u64,
    pub epochs: u64,
    pub nodes: u32,
    pub queries: u32,
    pub record_weight: u32,
    pub rows: Vec<EpochMetrics>,
    /// Final window outputs per query, when collected.
    pub outputs: Vec<Vec<Record>>,
    /// Records and partials each query's stream processor received.
    pub sp_received: Vec<u64>,
    /// cpu-seconds each query's replicas spent.
    pub sp_compute_used: Vec<f64>,
}

impl MetricsSeries {
    pub fn rows_for(&self, node: u32, query: u32) -> impl Iterator<Item = &EpochMetrics> {
        self.rows.iter().filter(move |r| r.node == node && r.query == query)
    }

    /// Mean Mbps over measured epochs of rows accepted by `keep`; rows later
    /// than `latency_bound` seconds count as zero.
    pub fn throughput_where(
        &self,
        latency_bound: f64,
        keep: impl Fn(&EpochMetrics) -> bool,
    ) -> Result<f64, SimError> {
        let measured = self.epochs.saturating_sub(self.warmup);
        if measured == 0 || self.rows.is_empty() {
            return Err(SimError::EmptySeries);
        }
        let bytes: u64 = self
            .rows
            .iter()
            .filter(|r| r.epoch >= self.warmup && keep(r) && r.epoch_latency <= latency_bound)
            .map(|r| r.input_bytes)
            .sum();
        Ok(bytes as f64 * 8.0 / 1e6 / (measured as f64 * self.epoch_s))
    }

    /// Mean outbound Mbps (drained plus results) over measured epochs.
    pub fn traffic_where(&self, keep: impl Fn(&EpochMetrics) -> bool) -> Result<f64, SimError> {
        let measured = self.epochs.saturating_sub(self.warmup);
        if measured == 0 || self.rows.is_empty() {
            return Err(SimError::EmptySeries);
        }
        let bytes: u64 = self
            .rows
            .iter()
            .filter(|r| r.epoch >= self.warmup && keep(r))
            .map(|r| r.drained_bytes + r.result_bytes)
            .sum();
        Ok(bytes as f64 * 8.0 / 1e6 / (measured as f64 * self.epoch_s))
    }

    /// Latencies of measured rows, sorted ascending.
    pub fn latencies(&self) -> Vec<f64> {
        let mut l: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch >= self.warmup)
            .map(|r| r.epoch_latency)
            .collect();
        l.sort_by(f64::total_cmp);
        l
    }
}

/// Sustained input Mbps of the whole run within the latency bound.
pub fn measure_throughput(series: &MetricsSeries, latency_bound: f64) -> Result<f64, SimError> {
    series.throughput_where(latency_bound, |_| true)
}

/// Epochs a runtime needed after a change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Convergence {
    /// From the change to the first epoch of a stable run, detection
    /// included.
    pub raw: u64,
    /// The same count without the debounce window.
    pub after_detection: u64,
}

/// Epochs in a row that must be converged for the run to count.
pub const STABLE_RUN: usize = 3;

/// Counts epochs from `change_epoch` until the first epoch that begins a run
/// of [`STABLE_RUN`] converged epochs for (`node`, `query`).
pub fn convergence_epochs(
    series: &MetricsSeries,
    node: u32,
    query: u32,
    change_epoch: u64,
) -> Result<Convergence, SimError> {
    let flags: Vec<(u64, bool)> = series
        .rows_for(node, query)
        .filter(|r| r.epoch >= change_epoch)
        .map(|r| (r.epoch, r.converged))
        .collect();
    flags
        .windows(STABLE_RUN)
        .find(|w| w.iter().all(|(_, c)| *c))
        .map(|w| {
            let raw = w[0].0 - change_epoch;
            Convergence {
                raw,
                after_detection: raw.saturating_sub(crate::runtime::DEBOUNCE_EPOCHS as u64),
            }
        })
        .ok_or(SimError::NeverConverged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(epoch: u64, input_bytes: u64, latency: f64, converged: bool) -> EpochMetrics {
        EpochMetrics {
            epoch,
            node: 0,
            query: 0,
            offered_records: 0,
            admitted_records: 0,
            input_bytes,
            drained_bytes: 0,
            result_bytes: 0,
            link_sent_bytes: 0,
            link_backlog_bytes: 0,
            local_compute_used: 0.0,
            budget: 0.0,
            epoch_latency: latency,
            phase: RuntimePhase::Probe,
            query_state: QueryState::Stable,
            converged,
            load_factors: vec![],
            est_c: vec![],
            est_r: vec![],
            proxies: vec![],
            processed: vec![],
            queued_in: vec![],
            queued_out: vec![],
        }
    }

    fn series(rows: Vec<EpochMetrics>) -> MetricsSeries {
        MetricsSeries {
            epoch_s: 1.0,
            warmup: 0,
            epochs: rows.len() as u64,
            nodes: 1,
            queries: 1,
            record_weight: 1,
            rows,
            ..MetricsSeries::default()
        }
    }

    const MBPS_26_2: u64 = 3_275_000;

    #[test]
    fn throughput_examples() {
        let all = series((0..4).map(|e| row(e, MBPS_26_2, 1.0, true)).collect());
        assert!((measure_throughput(&all, 5.0).unwrap() - 26.2).abs() < 1e-9);
        let late = series((0..4).map(|e| row(e, MBPS_26_2, 6.0, true)).collect());
        assert_eq!(measure_throughput(&late, 5.0).unwrap(), 0.0);
        let half = series((0..4).map(|e| row(e, MBPS_26_2, if e % 2 == 0 { 6.0 } else { 1.0 }, true)).collect());
        assert!((measure_throughput(&half, 5.0).unwrap() - 13.1).abs() < 1e-9);
        assert_eq!(measure_throughput(&series(vec![]), 5.0), Err(SimError::EmptySeries));
    }

    #[test]
    fn convergence_examples() {
        let flags = [true, true, true, false, false, true, true, true, true];
        let s = series(flags.iter().enumerate().map(|(e, c)| row(e as u64, 0, 1.0, *c)).collect());
        let c = convergence_epochs(&s, 0, 0, 3).unwrap();
        assert_eq!(c.raw, 2);
        assert_eq!(c.after_detection, 0);
        let never = series((0..9).map(|e| row(e, 0, 1.0, e % 2 == 0)).collect());
        assert_eq!(convergence_epochs(&never, 0, 0, 0), Err(SimError::NeverConverged));
    }
}

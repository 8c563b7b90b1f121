//! Centralized re-execution of a run: every record a source admitted is fed,
//! unpartitioned, to a single copy of the query. Partitioned execution is
//! lossless when both produce the same window results.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::operators::{Payload, Record};
use crate::workloads::{tor_table, GenStream, TOR_TABLE};

use super::link::LinkItem;
use super::metrics::MetricsSeries;
use super::{sp_merge, ExperimentConfig, SimError};

/// Records each node admitted for `query`, in admission order.
pub fn regenerate_inputs(cfg: &ExperimentConfig, series: &MetricsSeries, query: u32) -> Vec<Vec<Record>> {
    let qc = &cfg.queries[query as usize];
    let plan = qc.kind.plan();
    (0..cfg.n_sources)
        .map(|node| {
            let stream = GenStream {
                node,
                query,
                epoch_ms: cfg.epoch_ms,
                window_ms: plan.window_ms,
                weight: cfg.record_weight,
            };
            let mut cursor = 0;
            let mut out = Vec::new();
            let mut gen = qc.workload.clone();
            for row in series.rows_for(node, query) {
                // Record layout depends on the rate in force.
                gen.set_rate_mbps(qc.workload.rate_mbps() * qc.rate_scale.at(row.epoch));
                out.extend(gen.batch(&stream, row.epoch, cursor, row.admitted_records));
                cursor += row.admitted_records;
            }
            out
        })
        .collect()
}

/// Window results of running `query` centrally over everything the sources
/// admitted, in canonical order. Uses the table in force at epoch 0.
pub fn reference_outputs(cfg: &ExperimentConfig, series: &MetricsSeries, query: u32) -> Result<Vec<Record>, SimError> {
    let qc = &cfg.queries[query as usize];
    let plan = qc.kind.plan();
    let table = Arc::new(tor_table(qc.table_entries.at(0)));
    let items = regenerate_inputs(cfg, series, query)
        .into_iter()
        .flatten()
        .map(|record| (0, LinkItem::Data(crate::operators::DrainedRecord { target: 1, record })))
        .chain(core::iter::once((0, LinkItem::Watermark(u64::MAX))));
    let out = sp_merge(&plan, |name: &str| (name == TOR_TABLE).then(|| table.clone()), 1, items)?;
    Ok(canonical(out))
}

/// Sorts results by window, event time and group key so runs that close
/// windows at different moments compare equal.
pub fn canonical(mut records: Vec<Record>) -> Vec<Record> {
    let key = |r: &Record| {
        let group = match &r.payload {
            Payload::Partial(p) => p.key.0,
            _ => [0; 3],
        };
        (r.window_id, r.event_time_ms, group)
    };
    records.sort_by_key(key);
    records
}

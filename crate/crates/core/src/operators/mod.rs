//! Executable streaming operators with per-record cost accounting.

pub mod cost;
pub mod record;
pub mod table;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use hashbrown::HashMap;
use rustc_hash::FxBuildHasher;
use thiserror::Error;

pub use cost::CostModel;
pub use record::{
    DrainedRecord, GroupKey, JobStats, PartialAggregate, Payload, Probe, Record, StatName, Tuple,
    DRAIN_TAG_BYTES, IP_BASE, JOINED_FIELD_BYTES, PROBE_WIRE_BYTES,
};
pub use table::TorTable;

use crate::query::{Field, OpParams, OperatorId, OperatorKind, OperatorSpec, Predicate, Transform};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OperatorError {
    #[error("operator kind `{0}` has no executor")]
    UnknownOperatorKind(&'static str),
    #[error("operator {op} cannot consume a {found} payload")]
    PayloadMismatch { op: OperatorId, found: &'static str },
    #[error("static table `{0}` is not loaded")]
    MissingTable(String),
    #[error("partial aggregates belong to different groups or windows")]
    KeyMismatch,
    #[error("relay ratio is undefined without ingested bytes")]
    ZeroIngest,
}

fn payload_name(p: &Payload) -> &'static str {
    match p {
        Payload::Probe(_) => "probe",
        Payload::Tuple(_) => "tuple",
        Payload::Line(_) => "line",
        Payload::Stats(_) => "stats",
        Payload::Partial(_) => "partial",
    }
}

type GroupMap = HashMap<GroupKey, PartialAggregate, FxBuildHasher>;

/// Per-window group tables of a GroupAggregate instance.
#[derive(Clone, Debug)]
pub struct GroupState {
    keys: [Field; 3],
    key_len: u8,
    has_value: bool,
    windows: BTreeMap<u64, GroupMap>,
    live: usize,
    /// Groups created since the last [`GroupState::take_new_groups`].
    new_groups: u64,
}

impl GroupState {
    pub fn new(keys: &[Field], has_value: bool) -> Self {
        let mut k = [Field::SrcIp; 3];
        let key_len = keys.len().min(3);
        k[..key_len].copy_from_slice(&keys[..key_len]);
        GroupState {
            keys: k,
            key_len: key_len as u8,
            has_value,
            windows: BTreeMap::new(),
            live: 0,
            new_groups: 0,
        }
    }

    /// Groups currently held across all open windows.
    pub fn live_groups(&self) -> usize {
        self.live
    }

    pub fn take_new_groups(&mut self) -> u64 {
        core::mem::take(&mut self.new_groups)
    }

    /// Bytes one emitted group occupies on the wire.
    pub fn partial_wire_size(&self) -> u32 {
        PartialAggregate::empty(0, GroupKey::default(), self.key_len, self.has_value).wire_size()
    }

    fn key_of(&self, record: &Record) -> Option<GroupKey> {
        let mut key = GroupKey::default();
        for (slot, field) in self.keys[..usize::from(self.key_len)].iter().enumerate() {
            key.0[slot] = record.field(*field)?;
        }
        Some(key)
    }

    fn entry(&mut self, window_id: u64, key: GroupKey) -> &mut PartialAggregate {
        let (key_len, has_value) = (self.key_len, self.has_value);
        let map = self.windows.entry(window_id).or_default();
        let mut created = false;
        let slot = map.entry(key).or_insert_with(|| {
            created = true;
            PartialAggregate::empty(window_id, key, key_len, has_value)
        });
        if created {
            self.live += 1;
            self.new_groups += 1;
        }
        slot
    }

    /// Folds a raw record into its group; false when a key field is missing.
    fn absorb(&mut self, record: &Record) -> bool {
        let Some(key) = self.key_of(record) else {
            return false;
        };
        let value = if self.has_value {
            match record.field(Field::Rtt) {
                Some(v) => Some(v),
                None => return false,
            }
        } else {
            None
        };
        let agg = self.entry(record.window_id, key);
        match value {
            Some(v) => agg.add(v),
            None => agg.add_count(),
        }
        true
    }

    /// Folds a partial emitted by another instance of the same operator.
    pub fn merge_partial(&mut self, partial: &PartialAggregate) -> Result<(), OperatorError> {
        if partial.count == 0 {
            return Ok(());
        }
        if partial.key_len != self.key_len || partial.has_value != self.has_value {
            return Err(OperatorError::KeyMismatch);
        }
        let slot = self.entry(partial.window_id, partial.key);
        *slot = merge_partials(*slot, *partial)?;
        Ok(())
    }

    /// Emits every window ending at or before `watermark_ms`, sorted by key.
    pub fn close_until(&mut self, watermark_ms: u64, window_ms: u64) -> Vec<Record> {
        let window_ms = window_ms.max(1);
        let mut out = Vec::new();
        while let Some(entry) = self.windows.first_entry() {
            let w = *entry.key();
            if (w + 1).saturating_mul(window_ms) > watermark_ms {
                break;
            }
            let map = entry.remove();
            self.live -= map.len();
            let mut partials: Vec<PartialAggregate> = map.into_values().collect();
            partials.sort_unstable_by_key(|p| p.key);
            let event = (w + 1) * window_ms - 1;
            out.extend(partials.into_iter().map(|p| Record {
                event_time_ms: event,
                window_id: w,
                payload: Payload::Partial(p),
            }));
        }
        out
    }
}

/// Mutable state owned by one operator instance.
#[derive(Clone, Debug)]
pub enum OperatorState {
    Stateless,
    Join(Arc<TorTable>),
    Group(GroupState),
}

impl OperatorState {
    /// Fresh state for `op`; `tables` resolves static-table references.
    pub fn build(
        op: &OperatorSpec,
        tables: impl Fn(&str) -> Option<Arc<TorTable>>,
    ) -> Result<Self, OperatorError> {
        match &op.params {
            OpParams::GroupAggregate { keys, aggregates } => Ok(OperatorState::Group(GroupState::new(
                keys,
                aggregates.iter().any(|a| a.reads_value()),
            ))),
            OpParams::JoinStatic { table, .. } => tables(table)
                .map(OperatorState::Join)
                .ok_or_else(|| OperatorError::MissingTable(table.clone())),
            OpParams::StreamJoin { .. } => Err(OperatorError::UnknownOperatorKind(op.kind.name())),
            _ => Ok(OperatorState::Stateless),
        }
    }

    pub fn group(&self) -> Option<&GroupState> {
        match self {
            OperatorState::Group(g) => Some(g),
            _ => None,
        }
    }

    pub fn group_mut(&mut self) -> Option<&mut GroupState> {
        match self {
            OperatorState::Group(g) => Some(g),
            _ => None,
        }
    }
}

/// Per-record cost of `op` given its current state.
pub fn cost_of(op: &OperatorSpec, state: &OperatorState, cost: &CostModel) -> f64 {
    match (&op.params, state) {
        (OpParams::Filter(Predicate::ErrCodeZero), _) => cost.filter_err_code,
        (OpParams::Filter(Predicate::JobStatsPatterns), _) => cost.filter_patterns,
        (OpParams::Map(Transform::Normalize), _) => cost.map_normalize,
        (OpParams::Map(Transform::ParseJobStats), _) => cost.map_parse,
        (OpParams::Map(Transform::WidthBucket { .. }), _) => cost.map_bucket,
        (OpParams::Project(_), _) => cost.project,
        (OpParams::JoinStatic { .. }, OperatorState::Join(t)) => cost.join(t.len()),
        (OpParams::JoinStatic { .. }, _) => cost.join(1),
        (OpParams::GroupAggregate { .. }, OperatorState::Group(g)) => cost.group(g.has_value, g.live),
        (OpParams::GroupAggregate { aggregates, .. }, _) => {
            cost.group(aggregates.iter().any(|a| a.reads_value()), 0)
        }
        (OpParams::StreamJoin { .. }, _) => 0.0,
    }
}

/// `width_bucket(x, low, high, count)` with the usual SQL conventions:
/// 0 below range, `count + 1` at or above `high`.
pub fn width_bucket(x: u32, low: u32, high: u32, count: u32) -> u32 {
    if x < low {
        0
    } else if x >= high || high <= low {
        count + 1
    } else {
        ((u64::from(x - low) * u64::from(count)) / u64::from(high - low)) as u32 + 1
    }
}

/// Pulls a statistic out of a normalized job-statistics log line of the form
/// `... tenant name=tenant-017 | cpu util=57`.
pub fn parse_job_stats(line: &str) -> Option<JobStats> {
    let mut tenant = None;
    let mut stat = None;
    for part in line.split('|') {
        let (name, value) = part.split_once('=')?;
        let name = name.trim();
        let value = value.trim();
        if name.ends_with("tenant name") {
            tenant = value.strip_prefix("tenant-")?.parse().ok();
        } else if let Some(s) = StatName::ALL.into_iter().find(|s| name.ends_with(s.pattern())) {
            stat = Some((s, value.parse().ok()?));
        }
    }
    let (stat_name, stat) = stat?;
    Some(JobStats {
        tenant: tenant?,
        stat_name,
        stat,
    })
}

const JOB_PATTERNS: [&str; 4] = ["tenant name", "job running time", "cpu util", "memory util"];

fn mismatch(op: &OperatorSpec, record: &Record) -> OperatorError {
    OperatorError::PayloadMismatch {
        op: op.id,
        found: payload_name(&record.payload),
    }
}

/// Applies `op` to one record. Stateful operators absorb the record and
/// return `None`; other operators emit zero or one record.
pub fn apply_operator(
    op: &OperatorSpec,
    mut record: Record,
    state: &mut OperatorState,
) -> Result<Option<Record>, OperatorError> {
    match &op.params {
        OpParams::Filter(Predicate::ErrCodeZero) => match &record.payload {
            Payload::Probe(p) => Ok((p.err_code == 0).then_some(record)),
            _ => Err(mismatch(op, &record)),
        },
        OpParams::Filter(Predicate::JobStatsPatterns) => match &record.payload {
            Payload::Line(l) => Ok(JOB_PATTERNS.iter().any(|p| l.contains(p)).then_some(record)),
            _ => Err(mismatch(op, &record)),
        },
        OpParams::Map(Transform::Normalize) => match &record.payload {
            Payload::Line(l) => {
                let norm = l.trim().to_lowercase();
                record.payload = Payload::Line(norm.into_boxed_str());
                Ok(Some(record))
            }
            _ => Err(mismatch(op, &record)),
        },
        OpParams::Map(Transform::ParseJobStats) => match &record.payload {
            Payload::Line(l) => Ok(parse_job_stats(l).map(|s| {
                record.payload = Payload::Stats(s);
                record
            })),
            _ => Err(mismatch(op, &record)),
        },
        OpParams::Map(Transform::WidthBucket { low, high, count }) => match &mut record.payload {
            Payload::Stats(s) => {
                s.stat = width_bucket(s.stat, *low, *high, *count);
                Ok(Some(record))
            }
            _ => Err(mismatch(op, &record)),
        },
        OpParams::JoinStatic { key, output, .. } => {
            let OperatorState::Join(table) = state else {
                return Err(OperatorError::MissingTable(String::new()));
            };
            let Some(ip) = record.field(*key) else {
                return Err(mismatch(op, &record));
            };
            let Payload::Probe(p) = &mut record.payload else {
                return Err(mismatch(op, &record));
            };
            let Some(tor) = table.lookup(ip) else {
                return Ok(None);
            };
            match output {
                Field::SrcTor => p.src_tor = Some(tor),
                Field::DstTor => p.dst_tor = Some(tor),
                _ => return Err(mismatch(op, &record)),
            }
            Ok(Some(record))
        }
        OpParams::Project(fields) => {
            let mut t = Tuple::new();
            for f in fields {
                match record.field(*f) {
                    Some(v) => {
                        t.push(*f, v);
                    }
                    None => return Err(mismatch(op, &record)),
                }
            }
            record.payload = Payload::Tuple(t);
            Ok(Some(record))
        }
        OpParams::GroupAggregate { .. } => {
            let OperatorState::Group(g) = state else {
                return Err(OperatorError::UnknownOperatorKind(op.kind.name()));
            };
            if let Payload::Partial(p) = &record.payload {
                g.merge_partial(p)?;
            } else if !g.absorb(&record) {
                return Err(mismatch(op, &record));
            }
            Ok(None)
        }
        OpParams::StreamJoin { .. } => Err(OperatorError::UnknownOperatorKind(op.kind.name())),
    }
}

/// Outcome of feeding a batch to an operator under a compute budget.
#[derive(Clone, Debug, Default)]
pub struct OperatorRun {
    pub output: Vec<Record>,
    pub processed: usize,
    /// cpu-seconds spent.
    pub consumed: f64,
    /// Unprocessed suffix of the input, in arrival order.
    pub pending: Vec<Record>,
    pub ingested_bytes: u64,
    /// Output bytes; for grouping, the projected window-close emission of
    /// the groups this batch created.
    pub emitted_bytes: u64,
}

/// Processes `input` in arrival order until it is exhausted or the next
/// record's cost exceeds what is left of `budget_left`.
pub fn run_operator(
    op: &OperatorSpec,
    input: Vec<Record>,
    state: &mut OperatorState,
    budget_left: f64,
    cost: &CostModel,
) -> Result<OperatorRun, OperatorError> {
    if op.kind == OperatorKind::StreamJoin {
        return Err(OperatorError::UnknownOperatorKind(op.kind.name()));
    }
    let mut run = OperatorRun {
        output: Vec::with_capacity(input.len()),
        ..OperatorRun::default()
    };
    let budget_left = budget_left.max(0.0);
    if let OperatorState::Group(g) = state {
        g.take_new_groups();
    }
    let mut iter = input.into_iter();
    for record in iter.by_ref() {
        let c = cost_of(op, state, cost);
        if run.consumed + c > budget_left {
            run.pending.push(record);
            break;
        }
        run.consumed += c;
        run.processed += 1;
        run.ingested_bytes += u64::from(record.wire_size());
        if let Some(out) = apply_operator(op, record, state)? {
            run.emitted_bytes += u64::from(out.wire_size());
            run.output.push(out);
        }
    }
    run.pending.extend(iter);
    if let OperatorState::Group(g) = state {
        run.emitted_bytes = g.take_new_groups() * u64::from(g.partial_wire_size());
    }
    Ok(run)
}

/// Combines two partial states of the same group and window. A partial
/// with `count == 0` is the identity.
pub fn merge_partials(
    a: PartialAggregate,
    b: PartialAggregate,
) -> Result<PartialAggregate, OperatorError> {
    if b.count == 0 {
        return Ok(a);
    }
    if a.count == 0 {
        return Ok(b);
    }
    if a.key != b.key || a.window_id != b.window_id || a.key_len != b.key_len || a.has_value != b.has_value {
        return Err(OperatorError::KeyMismatch);
    }
    Ok(PartialAggregate {
        count: a.count + b.count,
        sum: a.sum + b.sum,
        max: a.max.max(b.max),
        min: a.min.min(b.min),
        ..a
    })
}

/// Output-to-input size ratio, clamped to `[0, 1]`.
pub fn observe_relay_ratio(emitted_bytes: u64, ingested_bytes: u64) -> Result<f64, OperatorError> {
    if ingested_bytes == 0 {
        return Err(OperatorError::ZeroIngest);
    }
    Ok((emitted_bytes as f64 / ingested_bytes as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::Aggregate;
    use alloc::vec;

    fn probe(src: u32, dst: u32, rtt: u32, err: u32) -> Record {
        Record::new(
            0,
            10_000,
            Payload::Probe(Probe {
                src_ip: src,
                src_cluster: 0,
                dst_ip: dst,
                dst_cluster: 0,
                rtt_us: rtt,
                err_code: err,
                src_tor: None,
                dst_tor: None,
            }),
        )
    }

    fn s2s_group() -> OperatorSpec {
        OperatorSpec::group(
            2,
            &[Field::SrcIp, Field::DstIp],
            &[Aggregate::Avg, Aggregate::Max, Aggregate::Min],
        )
    }

    #[test]
    fn filter_drops_failed_probes() {
        let op = OperatorSpec::filter(1, Predicate::ErrCodeZero);
        let input: Vec<Record> = (0..100).map(|i| probe(1, 2, 10, u32::from(i % 50 < 7))).collect();
        let mut st = OperatorState::Stateless;
        let run = run_operator(&op, input, &mut st, 1.0, &CostModel::default()).unwrap();
        assert_eq!(run.processed, 100);
        assert_eq!(run.output.len(), 86);
        assert!(run.pending.is_empty());
        assert!((observe_relay_ratio(run.emitted_bytes, run.ingested_bytes).unwrap() - 0.86).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_leaves_everything_pending() {
        let op = OperatorSpec::filter(1, Predicate::ErrCodeZero);
        let input: Vec<Record> = (0..5).map(|_| probe(1, 2, 10, 0)).collect();
        let run = run_operator(&op, input.clone(), &mut OperatorState::Stateless, 0.0, &CostModel::default())
            .unwrap();
        assert_eq!(run.processed, 0);
        assert_eq!(run.consumed, 0.0);
        assert!(run.output.is_empty());
        assert_eq!(run.pending, input);
    }

    #[test]
    fn budget_stops_mid_batch() {
        let op = OperatorSpec::filter(1, Predicate::ErrCodeZero);
        let cost = CostModel::default();
        let input: Vec<Record> = (0..10).map(|_| probe(1, 2, 10, 0)).collect();
        let budget = cost.filter_err_code * 3.5;
        let run = run_operator(&op, input, &mut OperatorState::Stateless, budget, &cost).unwrap();
        assert_eq!(run.processed, 3);
        assert_eq!(run.pending.len(), 7);
        assert!(run.consumed <= budget);
    }

    #[test]
    fn group_emits_at_window_close() {
        let op = s2s_group();
        let mut st = OperatorState::build(&op, |_| None).unwrap();
        let input = vec![probe(1, 2, 10, 0), probe(1, 2, 30, 0)];
        let run = run_operator(&op, input, &mut st, 1.0, &CostModel::default()).unwrap();
        assert!(run.output.is_empty());
        assert_eq!(run.emitted_bytes, 36);
        let g = st.group_mut().unwrap();
        assert!(g.close_until(9_999, 10_000).is_empty());
        let out = g.close_until(10_000, 10_000);
        assert_eq!(out.len(), 1);
        let Payload::Partial(p) = out[0].payload else { panic!() };
        assert_eq!((p.avg(), p.max, p.min, p.count), (Some(20), 30, 10, 2));
        assert_eq!(g.live_groups(), 0);
    }

    #[test]
    fn merging_adds_counts_and_keeps_extremes() {
        let key = GroupKey([1, 2, 0]);
        let mk = |count, sum, max, min| PartialAggregate {
            count,
            sum,
            max,
            min,
            ..PartialAggregate::empty(0, key, 2, true)
        };
        let m = merge_partials(mk(3, 30, 15, 5), mk(1, 20, 20, 20)).unwrap();
        assert_eq!((m.count, m.sum, m.max, m.min), (4, 50, 20, 5));
        let x = mk(3, 30, 15, 5);
        assert_eq!(merge_partials(x, PartialAggregate::empty(0, GroupKey([9, 9, 9]), 2, true)), Ok(x));
        let other = PartialAggregate {
            key: GroupKey([7, 7, 0]),
            ..x
        };
        assert_eq!(merge_partials(x, other), Err(OperatorError::KeyMismatch));
    }

    #[test]
    fn relay_ratio_clamps_and_rejects_zero_ingest() {
        assert_eq!(observe_relay_ratio(120, 100), Ok(1.0));
        assert_eq!(observe_relay_ratio(100, 100), Ok(1.0));
        assert_eq!(observe_relay_ratio(5, 0), Err(OperatorError::ZeroIngest));
    }

    #[test]
    fn log_pipeline_steps() {
        assert_eq!(width_bucket(37, 0, 100, 10), 4);
        assert_eq!(width_bucket(0, 0, 100, 10), 1);
        assert_eq!(width_bucket(100, 0, 100, 10), 11);
        let line = "  INFO 1700000000 [jobmon] Tenant Name=tenant-017 | CPU Util=57  ";
        let mut st = OperatorState::Stateless;
        let norm = apply_operator(
            &OperatorSpec::map(1, Transform::Normalize),
            Record::new(0, 10_000, Payload::Line(line.into())),
            &mut st,
        )
        .unwrap()
        .unwrap();
        let kept = apply_operator(&OperatorSpec::filter(2, Predicate::JobStatsPatterns), norm, &mut st)
            .unwrap()
            .unwrap();
        let parsed = apply_operator(&OperatorSpec::map(3, Transform::ParseJobStats), kept, &mut st)
            .unwrap()
            .unwrap();
        assert_eq!(
            parsed.payload,
            Payload::Stats(JobStats {
                tenant: 17,
                stat_name: StatName::CpuUtil,
                stat: 57
            })
        );
        let bucket = OperatorSpec::map(4, Transform::WidthBucket { low: 0, high: 100, count: 10 });
        let b = apply_operator(&bucket, parsed, &mut st).unwrap().unwrap();
        assert_eq!(b.field(Field::Stat), Some(6));
    }

    #[test]
    fn join_attaches_tor_and_project_shrinks() {
        let table = Arc::new(TorTable::contiguous(IP_BASE, 1000, 10));
        let op = OperatorSpec::join_static(2, "tor", Field::SrcIp, Field::SrcTor);
        let mut st = OperatorState::build(&op, |_| Some(table.clone())).unwrap();
        let out = apply_operator(&op, probe(IP_BASE + 250, IP_BASE + 999, 7, 0), &mut st)
            .unwrap()
            .unwrap();
        assert_eq!(out.field(Field::SrcTor), Some(2));
        assert_eq!(out.wire_size(), 90);
        assert_eq!(apply_operator(&op, probe(5, 5, 7, 0), &mut st).unwrap(), None);

        let proj = OperatorSpec::project(3, &[Field::SrcTor, Field::Rtt]);
        let t = apply_operator(&proj, out, &mut OperatorState::Stateless).unwrap().unwrap();
        assert_eq!(t.wire_size(), 16);
        assert!(matches!(
            apply_operator(&proj, probe(1, 1, 1, 0), &mut OperatorState::Stateless),
            Err(OperatorError::PayloadMismatch { op: 3, .. })
        ));
    }

    #[test]
    fn stream_join_has_no_executor() {
        let op = OperatorSpec::stream_join(1, "x");
        assert!(matches!(
            run_operator(&op, vec![], &mut OperatorState::Stateless, 1.0, &CostModel::default()),
            Err(OperatorError::UnknownOperatorKind("stream_join"))
        ));
    }
}

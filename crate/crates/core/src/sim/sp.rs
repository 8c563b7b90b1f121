//! Stream-processor side: replica operators fed by drained records and
//! partial states, with event time driven by the slowest input stream.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::operators::{apply_operator, cost_of, CostModel, OperatorError, OperatorState, Payload, Record, TorTable};
use crate::proxy::ProxyError;
use crate::query::{OpParams, OperatorSpec, QueryPlan};

use super::link::LinkItem;
use super::SimError;

/// Minimum of the watermarks of several input streams.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WatermarkMerger {
    marks: Vec<Option<u64>>,
}

impl WatermarkMerger {
    pub fn new(streams: usize) -> Self {
        WatermarkMerger {
            marks: vec![None; streams],
        }
    }

    /// Operator event time: the minimum over all streams, or `None` while
    /// some stream has not reported.
    pub fn current(&self) -> Option<u64> {
        self.marks.iter().try_fold(u64::MAX, |m, w| w.map(|w| m.min(w)))
    }

    /// Records a stream's watermark and returns the new operator time.
    pub fn advance(&mut self, stream: usize, wm: u64) -> Result<Option<u64>, ProxyError> {
        let slot = &mut self.marks[stream];
        if let Some(prev) = *slot {
            if wm <= prev {
                return Err(ProxyError::NonMonotoneWatermark { prev, got: wm });
            }
        }
        *slot = Some(wm);
        Ok(self.current())
    }
}

/// Replicas of every operator of one query, shared by all data sources.
#[derive(Clone, Debug)]
pub struct SpQuery {
    ops: Vec<OperatorSpec>,
    states: Vec<OperatorState>,
    merger: WatermarkMerger,
    window_ms: u64,
    cost: CostModel,
    execute: bool,
    collect: bool,
    outputs: Vec<Record>,
    /// Records and partials delivered by the links.
    pub received: u64,
    /// cpu-seconds the replicas would have spent.
    pub compute_used: f64,
}

impl SpQuery {
    pub fn new(
        plan: &QueryPlan,
        tables: impl Fn(&str) -> Option<Arc<TorTable>>,
        streams: usize,
        cost: CostModel,
        execute: bool,
        collect: bool,
    ) -> Result<Self, OperatorError> {
        let states = plan
            .operators
            .iter()
            .map(|op| OperatorState::build(op, &tables))
            .collect::<Result<_, _>>()?;
        Ok(SpQuery {
            ops: plan.operators.clone(),
            states,
            merger: WatermarkMerger::new(streams),
            window_ms: plan.window_ms,
            cost,
            execute,
            collect,
            outputs: Vec::new(),
            received: 0,
            compute_used: 0.0,
        })
    }

    pub fn set_table(&mut self, table: &Arc<TorTable>) {
        for (op, state) in self.ops.iter().zip(self.states.iter_mut()) {
            if matches!(op.params, OpParams::JoinStatic { .. }) {
                *state = OperatorState::Join(table.clone());
            }
        }
    }

    pub fn outputs(&self) -> &[Record] {
        &self.outputs
    }

    pub fn take_outputs(&mut self) -> Vec<Record> {
        core::mem::take(&mut self.outputs)
    }

    pub fn watermark(&self) -> Option<u64> {
        self.merger.current()
    }

    pub fn deliver(&mut self, stream: usize, item: LinkItem) -> Result<(), SimError> {
        match item {
            LinkItem::Data(d) => {
                self.received += 1;
                if self.execute {
                    self.run_from(usize::from(d.target).saturating_sub(1), d.record)?;
                }
            }
            LinkItem::Watermark(wm) => {
                let before = self.merger.current();
                let now = self.merger.advance(stream, wm)?;
                if self.execute && now.is_some() && now != before {
                    self.close(now.unwrap_or(0))?;
                }
            }
        }
        Ok(())
    }

    /// Pushes `record` through replicas `first..`; anything leaving the last
    /// operator is a final output.
    fn run_from(&mut self, first: usize, record: Record) -> Result<(), OperatorError> {
        let mut current = Some(record);
        for i in first..self.ops.len() {
            let Some(r) = current.take() else {
                return Ok(());
            };
            if !matches!(r.payload, Payload::Partial(_)) {
                self.compute_used += cost_of(&self.ops[i], &self.states[i], &self.cost);
            }
            current = apply_operator(&self.ops[i], r, &mut self.states[i])?;
        }
        if let (Some(r), true) = (current, self.collect) {
            self.outputs.push(r);
        }
        Ok(())
    }

    fn close(&mut self, wm: u64) -> Result<(), OperatorError> {
        for i in 0..self.ops.len() {
            let Some(g) = self.states[i].group_mut() else {
                continue;
            };
            let closed = g.close_until(wm, self.window_ms);
            if i + 1 == self.ops.len() {
                if self.collect {
                    self.outputs.extend(closed);
                }
            } else {
                for r in closed {
                    self.run_from(i + 1, r)?;
                }
            }
        }
        Ok(())
    }
}

/// Feeds `(stream, item)` pairs in order to fresh replicas of `plan` and
/// returns the final window outputs.
pub fn sp_merge(
    plan: &QueryPlan,
    tables: impl Fn(&str) -> Option<Arc<TorTable>>,
    streams: usize,
    items: impl IntoIterator<Item = (usize, LinkItem)>,
) -> Result<Vec<Record>, SimError> {
    let mut sp = SpQuery::new(plan, tables, streams, CostModel::default(), true, true)?;
    for (stream, item) in items {
        if stream >= streams {
            return Err(SimError::InvalidConfig(alloc::format!("stream {stream} out of range")));
        }
        sp.deliver(stream, item)?;
    }
    Ok(sp.take_outputs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DrainedRecord, PartialAggregate, Probe, IP_BASE};
    use crate::workloads::build_s2sprobe;

    fn probe(t: u64, src: u32, rtt: u32) -> Record {
        Record::new(
            t,
            10,
            Payload::Probe(Probe {
                src_ip: IP_BASE + src,
                src_cluster: 0,
                dst_ip: IP_BASE + 100,
                dst_cluster: 0,
                rtt_us: rtt,
                err_code: 0,
                src_tor: None,
                dst_tor: None,
            }),
        )
    }

    fn drained(target: u16, r: Record) -> LinkItem {
        LinkItem::Data(DrainedRecord { target, record: r })
    }

    fn plan() -> QueryPlan {
        let mut p = build_s2sprobe();
        p.window_ms = 10;
        p
    }

    #[test]
    fn minimum_rule() {
        let mut m = WatermarkMerger::new(2);
        assert_eq!(m.advance(0, 12), Ok(None));
        assert_eq!(m.advance(1, 10), Ok(Some(10)));
        assert!(m.advance(1, 10).is_err());
    }

    #[test]
    fn window_closes_only_when_every_stream_passes() {
        let items = vec![
            (0, drained(1, probe(3, 1, 10))),
            (1, drained(2, probe(4, 1, 30))),
            (0, LinkItem::Watermark(12)),
        ];
        assert!(sp_merge(&plan(), |_| None, 2, items.clone()).unwrap().is_empty());
        let mut items = items;
        items.push((1, LinkItem::Watermark(10)));
        let out = sp_merge(&plan(), |_| None, 2, items).unwrap();
        assert_eq!(out.len(), 1);
        let Payload::Partial(p) = &out[0].payload else { panic!() };
        assert_eq!((p.count, p.avg(), p.max, p.min), (2, Some(20), 30, 10));
    }

    #[test]
    fn partials_and_raw_records_combine() {
        let mut partial = PartialAggregate::empty(0, crate::operators::GroupKey([IP_BASE + 1, IP_BASE + 100, 0]), 2, true);
        partial.add(50);
        partial.add(70);
        let partial = Record {
            event_time_ms: 9,
            window_id: 0,
            payload: Payload::Partial(partial),
        };
        let items = vec![
            (0, drained(2, partial)),
            (1, drained(1, probe(5, 1, 30))),
            (0, LinkItem::Watermark(10)),
            (1, LinkItem::Watermark(10)),
        ];
        let out = sp_merge(&plan(), |_| None, 2, items).unwrap();
        let Payload::Partial(p) = &out[0].payload else { panic!() };
        assert_eq!((p.count, p.sum, p.max, p.min), (3, 150, 70, 30));
    }
}

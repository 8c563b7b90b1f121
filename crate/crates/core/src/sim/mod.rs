//! Epoch-synchronous simulation of data sources running partitioned query
//! instances, their links, and the shared stream processor.
//!
//! Every epoch each (node, query) instance generates its admitted input,
//! routes it through the control proxies and source-side operators under the
//! node's compute grant, ships drained records and window results over its
//! link, and hands its local evidence to its own runtime. Instances never
//! read each other's state; the only shared resources are the optional
//! stream-processor ingress and the replica operators that consume the
//! links.

pub mod link;
pub mod metrics;
pub mod reference;
pub mod sp;

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::baselines::{self, PolicyKind};
use crate::operators::{
    run_operator, CostModel, DrainedRecord, OperatorError, OperatorState, Record, TorTable, DRAIN_TAG_BYTES,
};
use crate::proxy::{classify, route, ProxyConfig, ProxyError, ProxyStats, RoutingCarry, Watermark,
    WatermarkReplicator};
use crate::query::{OpParams, OperatorSpec, QueryPlan};
use crate::runtime::{
    allocate_budget, probe_cp, profile_epoch, AdaptConfig, EpochObservation, EpochPlan, OperatorProfile, Runtime,
};
use crate::workloads::{tor_table, GenStream, QueryKind, WorkloadGen, DEFAULT_TOR_ENTRIES};

pub use link::{Link, LinkItem};
pub use metrics::{convergence_epochs, measure_throughput, Convergence, EpochMetrics, MetricsSeries};
pub use reference::{canonical, reference_outputs, regenerate_inputs};
pub use sp::{sp_merge, SpQuery, WatermarkMerger};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error("no measured epochs")]
    EmptySeries,
    #[error("never converged")]
    NeverConverged,
}

/// Step function of the epoch index.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule<T> {
    steps: Vec<(u64, T)>,
}

impl<T: Copy> Schedule<T> {
    pub fn constant(value: T) -> Self {
        Schedule {
            steps: vec![(0, value)],
        }
    }

    /// Steps must start at epoch 0 and strictly increase.
    pub fn new(steps: Vec<(u64, T)>) -> Result<Self, SimError> {
        if steps.first().is_none_or(|s| s.0 != 0) {
            return Err(SimError::InvalidConfig("schedules must start at epoch 0".into()));
        }
        if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(SimError::InvalidConfig("schedule epochs must increase".into()));
        }
        Ok(Schedule { steps })
    }

    /// Value in force at `epoch`.
    pub fn at(&self, epoch: u64) -> T {
        let i = self.steps.partition_point(|s| s.0 <= epoch);
        self.steps[i.max(1) - 1].1
    }

    pub fn steps(&self) -> &[(u64, T)] {
        &self.steps
    }

    /// Epoch of the last breakpoint.
    pub fn last_change(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.0)
    }

    pub fn changes_at(&self, epoch: u64) -> bool {
        epoch > 0 && self.steps.iter().any(|s| s.0 == epoch)
    }
}

/// One query deployed on every data source.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryConfig {
    pub kind: QueryKind,
    pub policy: PolicyKind,
    /// Generator at the base rate; `rate_scale` multiplies the rate.
    pub workload: WorkloadGen,
    pub rate_scale: Schedule<f64>,
    /// Static ToR table size (joins only).
    pub table_entries: Schedule<usize>,
    pub adapt: AdaptConfig,
    /// Keep unprocessed records queued across epochs instead of draining
    /// them; defaults to on for All-Src, which has no drain path.
    pub carryover: Option<bool>,
    /// Per-(node, query) link bandwidth; may be infinite.
    pub link_mbps: f64,
}

impl QueryConfig {
    pub const DEFAULT_LINK_MBPS: f64 = 20.48;

    pub fn new(kind: QueryKind, policy: PolicyKind, seed: u64) -> Self {
        QueryConfig {
            kind,
            policy,
            workload: kind.workload(seed),
            rate_scale: Schedule::constant(1.0),
            table_entries: Schedule::constant(DEFAULT_TOR_ENTRIES),
            adapt: AdaptConfig::default(),
            carryover: None,
            link_mbps: Self::DEFAULT_LINK_MBPS,
        }
    }

    pub fn carries_over(&self) -> bool {
        self.carryover.unwrap_or(self.policy == PolicyKind::AllSrc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n_sources: u32,
    pub epochs: u64,
    pub warmup: u64,
    pub epoch_ms: u64,
    /// Micro-batches per epoch; the compute grant is paced across them.
    pub slices: u32,
    /// Cores each data source grants its queries, shared max-min.
    pub cpu_cores: Schedule<f64>,
    pub queries: Vec<QueryConfig>,
    pub sp_cores: f64,
    /// Stream-processor cores LB-DP assumes per source; defaults to
    /// `sp_cores / n_sources`.
    pub sp_share: Option<f64>,
    /// Capacity shared by all links into the stream processor.
    pub sp_ingress_mbps: Option<f64>,
    pub cost: CostModel,
    /// Real records each simulated record stands for.
    pub record_weight: u32,
    pub latency_bound_s: f64,
    /// Seconds of link backlog admission control tolerates.
    pub admission_horizon_s: f64,
    pub drained_thres: f64,
    pub idle_thres: f64,
    /// Run the replica operators; without it the stream processor only
    /// counts deliveries.
    pub sp_execute: bool,
    /// Keep the final window outputs.
    pub collect_outputs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_sources: 1,
            epochs: 300,
            warmup: 180,
            epoch_ms: 1_000,
            slices: 20,
            cpu_cores: Schedule::constant(0.8),
            queries: Vec::new(),
            sp_cores: 64.0,
            sp_share: None,
            sp_ingress_mbps: None,
            cost: CostModel::default(),
            record_weight: 1,
            latency_bound_s: 5.0,
            admission_horizon_s: 2.5,
            drained_thres: ProxyConfig::DEFAULT_DRAINED_THRES,
            idle_thres: ProxyConfig::DEFAULT_IDLE_THRES,
            sp_execute: true,
            collect_outputs: false,
        }
    }
}

impl ExperimentConfig {
    /// One source running one query.
    pub fn single(kind: QueryKind, policy: PolicyKind, cores: f64, seed: u64) -> Self {
        ExperimentConfig {
            cpu_cores: Schedule::constant(cores),
            queries: vec![QueryConfig::new(kind, policy, seed)],
            ..ExperimentConfig::default()
        }
    }

    pub fn epoch_s(&self) -> f64 {
        self.epoch_ms as f64 / 1e3
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if self.n_sources == 0 {
            return bad("n_sources must be positive");
        }
        if self.queries.is_empty() {
            return bad("at least one query is required");
        }
        if self.epochs == 0 || self.epoch_ms == 0 || self.slices == 0 {
            return bad("epochs, epoch_ms and slices must be positive");
        }
        if self.warmup >= self.epochs {
            return bad("warmup must be shorter than the run");
        }
        if self.record_weight == 0 {
            return bad("record_weight must be positive");
        }
        if !self.cost.is_valid() {
            return bad("costs must be finite and non-negative");
        }
        if self.cpu_cores.steps().iter().any(|s| !(s.1 >= 0.0 && s.1.is_finite())) {
            return bad("cpu budgets must be finite and non-negative");
        }
        let in_run = |last: u64| last < self.epochs;
        if !in_run(self.cpu_cores.last_change()) {
            return bad("schedule breakpoints must fall inside the run");
        }
        if self.sp_ingress_mbps.is_some_and(|m| !(m > 0.0)) {
            return bad("sp_ingress_mbps must be positive");
        }
        if !(0.0..=1.0).contains(&self.drained_thres) || !(0.0..=1.0).contains(&self.idle_thres) {
            return bad("thresholds must lie in [0, 1]");
        }
        for q in &self.queries {
            if !(q.link_mbps > 0.0) {
                return bad("link bandwidth must be positive");
            }
            if q.rate_scale.steps().iter().any(|s| !(s.1 >= 0.0 && s.1.is_finite())) {
                return bad("rate scales must be finite and non-negative");
            }
            if !in_run(q.rate_scale.last_change()) || !in_run(q.table_entries.last_change()) {
                return bad("schedule breakpoints must fall inside the run");
            }
            if q.table_entries.steps().iter().any(|s| s.1 == 0) {
                return bad("table_entries must be positive");
            }
            if q.carries_over() && matches!(q.policy, PolicyKind::Jarvis | PolicyKind::BestOP) {
                return bad("adaptive policies drain instead of carrying records over");
            }
            if !(q.workload.rate_mbps() >= 0.0 && q.workload.rate_mbps().is_finite()) {
                return bad("workload rate must be finite and non-negative");
            }
        }
        Ok(())
    }
}

/// Load factors a static policy starts from (zeros for adaptive ones).
pub fn initial_load_factors(policy: PolicyKind, plan: &QueryPlan) -> Vec<f64> {
    let m = plan.source_eligible_len;
    match policy {
        PolicyKind::AllSP => baselines::all_sp(m),
        PolicyKind::AllSrc => baselines::all_src(m),
        PolicyKind::FilterSrc => baselines::filter_src(plan),
        PolicyKind::BestOP | PolicyKind::LBDP | PolicyKind::Jarvis => vec![0.0; m],
    }
}

/// Trailing epochs used to estimate link bits per admitted record; one
/// window long so result bursts at window close are averaged in.
const BITS_HISTORY: usize = 10;

/// One query instance on one data source.
struct Instance {
    node: u32,
    query: u32,
    runtime: Runtime,
    states: Vec<OperatorState>,
    proxies: Vec<ProxyConfig>,
    carries: Vec<RoutingCarry>,
    queues: Vec<Vec<Record>>,
    replicator: WatermarkReplicator,
    link: Link,
    carryover: bool,
    /// Next generator index.
    cursor: u64,
    offered_frac: f64,
    bits_history: Vec<(u64, u64)>,
    default_bits_per_record: f64,
    /// Input-equivalent records leaving the local pipeline per epoch.
    done_rate: Option<f64>,
    arrived_total: Vec<u64>,
    admitted_total: u64,
    pending_in: f64,
}

struct Shared<'a> {
    cfg: &'a ExperimentConfig,
    plan: &'a QueryPlan,
    cost: &'a CostModel,
    gen: WorkloadGen,
    epoch: u64,
    eff_link_bps: f64,
}

/// Bookkeeping of one instance epoch before the link is served.
struct Step {
    row: EpochMetrics,
    /// Oldest record still queued locally, if any.
    oldest_pending_ms: Option<u64>,
}

impl Instance {
    fn bits_per_record(&self) -> f64 {
        let (bits, recs) = self
            .bits_history
            .iter()
            .fold((0u64, 0u64), |a, (b, r)| (a.0 + b, a.1 + r));
        if recs == 0 {
            self.default_bits_per_record
        } else {
            (bits as f64 / recs as f64).max(1.0)
        }
    }

    fn push(&mut self, target: u16, record: Record, weight: u32) -> u64 {
        let d = DrainedRecord { target, record };
        let bytes = u64::from(d.wire_size()) * u64::from(weight);
        self.link.push(LinkItem::Data(d), bytes * 8);
        bytes
    }

    fn pending_in(&self) -> f64 {
        self.queues
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let reach = if self.admitted_total == 0 {
                    1.0
                } else {
                    (self.arrived_total[j] as f64 / self.admitted_total as f64).max(1e-9)
                };
                q.len() as f64 / reach
            })
            .sum()
    }

    fn step(&mut self, sh: &Shared<'_>, budget: f64) -> Result<Step, SimError> {
        let cfg = sh.cfg;
        let weight = cfg.record_weight;
        let k = self.states.len();
        let m = sh.plan.len();
        let epoch_s = cfg.epoch_s();
        let epoch_start = sh.epoch * cfg.epoch_ms;
        let epoch_end = epoch_start + cfg.epoch_ms;
        let stream = GenStream {
            node: self.node,
            query: self.query,
            epoch_ms: cfg.epoch_ms,
            window_ms: sh.plan.window_ms,
            weight,
        };

        // Offered load and admission.
        self.offered_frac += sh.gen.records_per_s() * epoch_s / f64::from(weight);
        let offered = libm::floor(self.offered_frac + 1e-9).max(0.0);
        self.offered_frac -= offered;
        let offered = offered as u64;
        let mut admitted = offered;
        if sh.eff_link_bps.is_finite() {
            let room = sh.eff_link_bps * epoch_s * (1.0 + cfg.admission_horizon_s) - self.link.backlog_bits() as f64;
            admitted = admitted.min(libm::floor(room.max(0.0) / self.bits_per_record()) as u64);
        }
        if self.carryover {
            let done = self.done_rate.unwrap_or(offered as f64);
            admitted = admitted.min(libm::floor((2.0 * done - self.pending_in).max(0.0)) as u64);
        }
        let mut batch = sh.gen.batch(&stream, sh.epoch, self.cursor, admitted);
        self.cursor += admitted;

        let phase = self.runtime.phase();
        let plan_kind = self.runtime.begin_epoch(budget);
        let enqueued_before = self.link.enqueued_bits;
        let mut stats = vec![ProxyStats::default(); k];
        let mut processed = vec![0u64; k];
        let mut used = vec![0.0f64; k];
        let queued_in: Vec<u64> = self.queues.iter().map(|q| q.len() as u64).collect();
        let mut drained_bytes = 0u64;
        let mut result_bytes = 0u64;
        let mut profile: Option<Vec<OperatorProfile>> = None;
        let tail_target = |j: usize| sh.plan.operators.get(j).map_or(m as u16 + 1, |op| op.id);

        match plan_kind {
            EpochPlan::Run(lf) => {
                for (p, l) in self.proxies.iter_mut().zip(&lf) {
                    p.set_load_factor(l.clamp(0.0, 1.0))?;
                }
                let slices = cfg.slices as usize;
                let n = batch.len();
                let mut consumed = 0.0;
                let mut rest = core::mem::take(&mut batch).into_iter();
                for s in 0..slices {
                    let take = (n * (s + 1)) / slices - (n * s) / slices;
                    let mut input: Vec<Record> = rest.by_ref().take(take).collect();
                    let allowance = budget * (s + 1) as f64 / slices as f64 - consumed;
                    let mut slice_used = 0.0;
                    for j in 0..k {
                        stats[j].arrived += input.len() as u64;
                        let (fwd, drn) = route(input, &self.proxies[j], &mut self.carries[j]);
                        stats[j].forwarded += fwd.len() as u64;
                        stats[j].drained_by_policy += drn.len() as u64;
                        for d in drn {
                            drained_bytes += self.push(d.target, d.record, weight);
                        }
                        let mut queue = core::mem::take(&mut self.queues[j]);
                        queue.extend(fwd);
                        let run = run_operator(
                            &sh.plan.operators[j],
                            queue,
                            &mut self.states[j],
                            allowance - slice_used,
                            sh.cost,
                        )?;
                        slice_used += run.consumed;
                        used[j] += run.consumed;
                        processed[j] += run.processed as u64;
                        self.queues[j] = run.pending;
                        input = run.output;
                    }
                    consumed += slice_used;
                    for r in input {
                        result_bytes += self.push(tail_target(k), r, weight);
                    }
                }
                if !self.carryover {
                    for j in 0..k {
                        let pending = core::mem::take(&mut self.queues[j]);
                        stats[j].drained_backpressure += pending.len() as u64;
                        for r in pending {
                            drained_bytes += self.push(sh.plan.operators[j].id, r, weight);
                        }
                    }
                }
            }
            EpochPlan::Profile(shares) => {
                let run = profile_epoch(&sh.plan.operators[..k], &mut self.states, batch, budget, &shares, sh.cost)?;
                for (j, p) in run.profiles.iter().enumerate() {
                    stats[j].arrived = p.available;
                    stats[j].forwarded = p.available;
                    stats[j].drained_backpressure = p.available - p.processed;
                    processed[j] = p.processed;
                    used[j] = p.consumed;
                }
                for d in run.drained {
                    drained_bytes += self.push(d.target, d.record, weight);
                }
                for r in run.output {
                    result_bytes += self.push(tail_target(k), r, weight);
                }
                profile = Some(run.profiles);
            }
        }

        // Verdicts. Operators share one worker, so an operator with input
        // is idle exactly when the whole query is.
        let total_used: f64 = used.iter().sum();
        let mut verdicts = Vec::with_capacity(k);
        for j in 0..k {
            let s = &mut stats[j];
            s.pending_peak = self.queues[j].len() as u64;
            s.idle_time = if queued_in[j] == 0 && s.forwarded == 0 {
                epoch_s
            } else if budget > 0.0 {
                epoch_s * (1.0 - total_used / budget).max(0.0)
            } else {
                0.0
            };
            verdicts.push(classify(s, &self.proxies[j], epoch_s));
        }
        for (t, s) in self.arrived_total.iter_mut().zip(&stats) {
            *t += s.arrived;
        }
        self.admitted_total += admitted;

        // Event-time progress and window results.
        let oldest_pending_ms = self.queues.iter().flatten().map(|r| r.event_time_ms).min();
        let wm = oldest_pending_ms.unwrap_or(epoch_end);
        if self.replicator.last().is_none_or(|l| wm > l.0) {
            self.replicator.replicate(Watermark(wm))?;
            for j in 0..k {
                let Some(g) = self.states[j].group_mut() else {
                    continue;
                };
                let closed = g.close_until(wm, sh.plan.window_ms);
                let target = sh.plan.operators[j].id;
                for r in closed {
                    result_bytes += self.push(target, r, weight);
                }
            }
            self.link.push(LinkItem::Watermark(wm), 0);
        }

        let pending_in = self.pending_in();
        if self.carryover {
            let done = admitted as f64 - (pending_in - self.pending_in);
            self.done_rate = Some(match self.done_rate {
                Some(d) => 0.5 * d + 0.5 * done.max(0.0),
                None => done.max(0.0),
            });
        }
        self.pending_in = pending_in;
        self.bits_history.push((self.link.enqueued_bits - enqueued_before, admitted));
        if self.bits_history.len() > BITS_HISTORY {
            self.bits_history.remove(0);
        }

        self.runtime.end_epoch(&EpochObservation {
            verdicts: &verdicts,
            budget,
            // Plan for the offered load, not what link backpressure let in.
            n_records: offered,
            profile: profile.as_deref(),
        });
        let (est_c, est_r) = self
            .runtime
            .estimate()
            .map(|e| (e.c.clone(), e.r.clone()))
            .unwrap_or_default();
        let row = EpochMetrics {
            epoch: sh.epoch,
            node: self.node,
            query: self.query,
            offered_records: offered,
            admitted_records: admitted,
            input_bytes: admitted * u64::from(sh.gen.record_bytes()) * u64::from(weight),
            drained_bytes,
            result_bytes,
            link_sent_bytes: 0,
            link_backlog_bytes: 0,
            local_compute_used: used.iter().sum(),
            budget,
            epoch_latency: 0.0,
            phase,
            query_state: probe_cp(&verdicts),
            converged: self.runtime.converged(),
            load_factors: self.proxies.iter().map(|p| p.load_factor).collect(),
            est_c,
            est_r,
            proxies: stats,
            processed,
            queued_in,
            queued_out: self.queues.iter().map(|q| q.len() as u64).collect(),
        };
        Ok(Step { row, oldest_pending_ms })
    }

    /// Local cost of running the whole source-side pipeline on this
    /// epoch's offered input, if the runtime has profiled it.
    fn demand(&self, offered: f64) -> f64 {
        match self.runtime.estimate() {
            Some(e) if self.runtime.policy() == PolicyKind::Jarvis || self.runtime.policy() == PolicyKind::BestOP => {
                e.weighted_costs().iter().sum::<f64>() * offered
            }
            _ => f64::INFINITY,
        }
    }

    /// Hands everything left locally to the stream processor and closes all
    /// windows.
    fn finish(&mut self, plan: &QueryPlan, weight: u32) -> Result<(), SimError> {
        for j in 0..self.queues.len() {
            for r in core::mem::take(&mut self.queues[j]) {
                self.push(plan.operators[j].id, r, weight);
            }
        }
        for j in 0..self.states.len() {
            let Some(g) = self.states[j].group_mut() else {
                continue;
            };
            for r in g.close_until(u64::MAX, plan.window_ms) {
                self.push(plan.operators[j].id, r, weight);
            }
        }
        if self.replicator.last().is_none_or(|l| l.0 < u64::MAX) {
            self.replicator.replicate(Watermark(u64::MAX))?;
            self.link.push(LinkItem::Watermark(u64::MAX), 0);
        }
        Ok(())
    }
}

fn set_join_tables(ops: &[OperatorSpec], states: &mut [OperatorState], table: &Arc<TorTable>) {
    for (op, state) in ops.iter().zip(states.iter_mut()) {
        if matches!(op.params, OpParams::JoinStatic { .. }) {
            *state = OperatorState::Join(table.clone());
        }
    }
}

/// Runs a whole experiment. Deterministic for a given configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsSeries, SimError> {
    cfg.validate()?;
    let weight = cfg.record_weight;
    let cost = cfg.cost.scaled(f64::from(weight));
    let epoch_s = cfg.epoch_s();
    let n_nodes = cfg.n_sources as usize;
    let n_queries = cfg.queries.len();
    let plans: Vec<QueryPlan> = cfg.queries.iter().map(|q| q.kind.plan()).collect();
    let mut tables: Vec<Arc<TorTable>> = cfg
        .queries
        .iter()
        .map(|q| Arc::new(tor_table(q.table_entries.at(0))))
        .collect();
    let resolver = |t: &Arc<TorTable>| {
        let t = t.clone();
        move |name: &str| (name == crate::workloads::TOR_TABLE).then(|| t.clone())
    };

    let mut sps = Vec::with_capacity(n_queries);
    for (q, plan) in plans.iter().enumerate() {
        sps.push(SpQuery::new(
            plan,
            resolver(&tables[q]),
            n_nodes,
            cost.clone(),
            cfg.sp_execute,
            cfg.collect_outputs,
        )?);
    }

    let sp_share = cfg.sp_share.unwrap_or(cfg.sp_cores / f64::from(cfg.n_sources)) * epoch_s;
    let mut instances: Vec<Instance> = Vec::with_capacity(n_nodes * n_queries);
    for node in 0..cfg.n_sources {
        for (q, qc) in cfg.queries.iter().enumerate() {
            let plan = &plans[q];
            let k = plan.source_eligible_len;
            let states = plan.operators[..k]
                .iter()
                .map(|op| OperatorState::build(op, resolver(&tables[q])))
                .collect::<Result<Vec<_>, _>>()?;
            let proxies = plan.operators[..k]
                .iter()
                .map(|op| ProxyConfig {
                    drained_thres: cfg.drained_thres,
                    idle_thres: cfg.idle_thres,
                    ..ProxyConfig::new(op.id)
                })
                .collect();
            instances.push(Instance {
                node,
                query: q as u32,
                runtime: Runtime::new(qc.policy, qc.adapt, initial_load_factors(qc.policy, plan), sp_share),
                states,
                proxies,
                carries: vec![RoutingCarry::default(); k],
                queues: vec![Vec::new(); k],
                replicator: WatermarkReplicator::default(),
                link: Link::default(),
                carryover: qc.carries_over(),
                cursor: 0,
                offered_frac: 0.0,
                bits_history: Vec::new(),
                default_bits_per_record: f64::from((qc.workload.record_bytes() + DRAIN_TAG_BYTES) * 8 * weight),
                done_rate: None,
                arrived_total: vec![0; k],
                admitted_total: 0,
                pending_in: 0.0,
            });
        }
    }

    let n_links = instances.len() as f64;
    let mut series = MetricsSeries {
        epoch_s,
        warmup: cfg.warmup,
        epochs: cfg.epochs,
        nodes: cfg.n_sources,
        queries: n_queries as u32,
        record_weight: weight,
        rows: Vec::with_capacity(instances.len() * cfg.epochs as usize),
        ..MetricsSeries::default()
    };
    let mut delivered = Vec::new();
    for epoch in 0..cfg.epochs {
        for (q, qc) in cfg.queries.iter().enumerate() {
            if qc.table_entries.changes_at(epoch) && qc.table_entries.at(epoch) != qc.table_entries.at(epoch - 1) {
                tables[q] = Arc::new(tor_table(qc.table_entries.at(epoch)));
                sps[q].set_table(&tables[q]);
                for inst in instances.iter_mut().filter(|i| i.query as usize == q) {
                    set_join_tables(&plans[q].operators, &mut inst.states, &tables[q]);
                }
            }
        }
        let gens: Vec<WorkloadGen> = cfg
            .queries
            .iter()
            .map(|qc| {
                let mut g = qc.workload.clone();
                g.set_rate_mbps(qc.workload.rate_mbps() * qc.rate_scale.at(epoch));
                g
            })
            .collect();
        let node_budget = cfg.cpu_cores.at(epoch) * epoch_s;

        let mut steps = Vec::with_capacity(instances.len());
        for node in 0..n_nodes {
            let group = &mut instances[node * n_queries..(node + 1) * n_queries];
            let demands: Vec<f64> = group
                .iter()
                .enumerate()
                .map(|(q, inst)| {
                    let offered = gens[q].records_per_s() * epoch_s / f64::from(weight);
                    inst.demand(offered)
                })
                .collect();
            let mut budgets = allocate_budget(node_budget, &demands);
            // Spare compute is split evenly so no query is held to the
            // exact cost of its last estimate.
            let spare = (node_budget - budgets.iter().sum::<f64>()).max(0.0) / budgets.len() as f64;
            budgets.iter_mut().for_each(|b| *b += spare);
            for (q, inst) in group.iter_mut().enumerate() {
                let qc = &cfg.queries[q];
                let link_bps = qc.link_mbps * 1e6;
                let eff = match cfg.sp_ingress_mbps {
                    Some(ing) => link_bps.min(ing * 1e6 / n_links),
                    None => link_bps,
                };
                let sh = Shared {
                    cfg,
                    plan: &plans[q],
                    cost: &cost,
                    gen: gens[q].clone(),
                    epoch,
                    eff_link_bps: eff,
                };
                steps.push(inst.step(&sh, budgets[q])?);
            }
        }

        // Serve the links, sharing the stream-processor ingress max-min.
        let demands: Vec<f64> = instances
            .iter()
            .map(|inst| {
                let cap = cfg.queries[inst.query as usize].link_mbps * 1e6 * epoch_s;
                (inst.link.backlog_bits() as f64).min(cap)
            })
            .collect();
        let grants = match cfg.sp_ingress_mbps {
            Some(ing) => allocate_budget(ing * 1e6 * epoch_s, &demands),
            None => demands,
        };
        for ((inst, step), grant) in instances.iter_mut().zip(steps.iter_mut()).zip(grants) {
            delivered.clear();
            let sent = inst.link.transmit(libm::floor(grant) as u64, &mut delivered);
            let q = inst.query as usize;
            for item in delivered.drain(..) {
                sps[q].deliver(inst.node as usize, item)?;
            }
            let backlog = inst.link.backlog_bits();
            let drain_s = if backlog == 0 {
                0.0
            } else if sent == 0 {
                f64::INFINITY
            } else {
                backlog as f64 / (sent as f64 / epoch_s)
            };
            let epoch_end = (epoch + 1) * cfg.epoch_ms;
            let age_s = step
                .oldest_pending_ms
                .map_or(0.0, |t| epoch_end.saturating_sub(t) as f64 / 1e3);
            let row = &mut step.row;
            row.link_sent_bytes = sent / 8;
            row.link_backlog_bytes = backlog / 8;
            row.epoch_latency = epoch_s + drain_s + age_s;
        }
        series.rows.extend(steps.into_iter().map(|s| s.row));
    }

    // Drain everything so every window reaches the stream processor.
    for inst in instances.iter_mut() {
        let q = inst.query as usize;
        inst.finish(&plans[q], weight)?;
        delivered.clear();
        inst.link.transmit_all(&mut delivered);
        for item in delivered.drain(..) {
            sps[q].deliver(inst.node as usize, item)?;
        }
    }
    series.sp_received = sps.iter().map(|s| s.received).collect();
    series.sp_compute_used = sps.iter().map(|s| s.compute_used).collect();
    series.outputs = sps.iter_mut().map(|s| s.take_outputs()).collect();
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let s = Schedule::new(vec![(0, 0.1), (10, 0.9)]).unwrap();
        assert_eq!(s.at(0), 0.1);
        assert_eq!(s.at(9), 0.1);
        assert_eq!(s.at(10), 0.9);
        assert_eq!(s.at(1_000), 0.9);
        assert!(s.changes_at(10) && !s.changes_at(0));
        assert!(Schedule::new(vec![(1, 0.5)]).is_err());
        assert!(Schedule::<f64>::new(vec![]).is_err());
        assert!(Schedule::new(vec![(0, 1), (0, 2)]).is_err());
    }

    fn small(policy: PolicyKind, cores: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::single(QueryKind::S2SProbe, policy, cores, 7);
        cfg.epochs = 25;
        cfg.warmup = 5;
        cfg.record_weight = 10;
        cfg.collect_outputs = true;
        cfg
    }

    #[test]
    fn zero_rate_produces_nothing() {
        let mut cfg = small(PolicyKind::Jarvis, 0.8);
        cfg.queries[0].rate_scale = Schedule::constant(0.0);
        let s = run_experiment(&cfg).unwrap();
        assert!(s.rows.iter().all(|r| r.input_bytes == 0 && r.drained_bytes == 0 && r.result_bytes == 0));
        assert!(s.rows.iter().all(|r| r.query_state == crate::runtime::QueryState::Idle));
        assert_eq!(measure_throughput(&s, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn unconstrained_run_keeps_up() {
        let mut cfg = small(PolicyKind::AllSrc, 1_000.0);
        cfg.queries[0].link_mbps = f64::INFINITY;
        let s = run_experiment(&cfg).unwrap();
        let tput = measure_throughput(&s, 5.0).unwrap();
        assert!((tput - 26.2).abs() < 0.01, "{tput}");
        assert!(s.rows.iter().all(|r| r.epoch_latency == 1.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small(PolicyKind::Jarvis, 0.5);
        assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(PolicyKind::Jarvis, 0.5);
        cfg.warmup = cfg.epochs;
        assert!(matches!(run_experiment(&cfg), Err(SimError::InvalidConfig(_))));
        let mut cfg = small(PolicyKind::Jarvis, 0.5);
        cfg.queries[0].carryover = Some(true);
        assert!(cfg.validate().is_err());
        let mut cfg = small(PolicyKind::Jarvis, 0.5);
        cfg.queries.clear();
        assert!(cfg.validate().is_err());
    }
}

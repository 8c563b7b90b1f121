//! Per-node, per-query adaptation runtime: congestion probing, online
//! profiling, LP-initialized fine-tuning of load factors, and max-min fair
//! budget allocation across co-located queries.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::baselines::{self, PolicyKind};
use crate::operators::{
    observe_relay_ratio, run_operator, CostModel, DrainedRecord, OperatorError, OperatorState, Record,
};
use crate::partition::{e_to_p, solve_lp_with, LpOptions, PartitionProblem};
use crate::proxy::{flush_backpressure, ProxyVerdict};
use crate::query::OperatorSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RuntimePhase {
    Startup,
    Probe,
    Profile,
    Adapt,
}

impl RuntimePhase {
    pub fn name(self) -> &'static str {
        match self {
            RuntimePhase::Startup => "startup",
            RuntimePhase::Probe => "probe",
            RuntimePhase::Profile => "profile",
            RuntimePhase::Adapt => "adapt",
        }
    }

    /// Whether the state machine may move from `self` to `next`.
    pub fn can_follow(self, next: RuntimePhase) -> bool {
        use RuntimePhase::*;
        matches!(
            (self, next),
            (Startup, Probe)
                | (Probe, Probe)
                | (Probe, Profile)
                | (Profile, Adapt)
                | (Adapt, Adapt)
                | (Adapt, Probe)
                | (Adapt, Profile)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryState {
    Stable,
    Congested,
    Idle,
}

impl QueryState {
    pub fn name(self) -> &'static str {
        match self {
            QueryState::Stable => "stable",
            QueryState::Congested => "congested",
            QueryState::Idle => "idle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RuntimeError {
    #[error("profiled costs are all zero although records arrived")]
    InfeasibleEstimate,
    #[error("no operator can be adjusted further")]
    Exhausted,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Congested if any proxy is congested, idle if all are idle.
pub fn probe_cp(states: &[ProxyVerdict]) -> QueryState {
    if states.contains(&ProxyVerdict::Congested) {
        QueryState::Congested
    } else if !states.is_empty() && states.iter().all(|s| *s == ProxyVerdict::Idle) {
        QueryState::Idle
    } else {
        QueryState::Stable
    }
}

/// Epochs of identical non-stable verdicts required to trigger adaptation.
pub const DEBOUNCE_EPOCHS: usize = 3;

/// True when the last three verdicts are the same non-stable state.
pub fn debounce(history: &[QueryState]) -> bool {
    if history.len() < DEBOUNCE_EPOCHS {
        return false;
    }
    let tail = &history[history.len() - DEBOUNCE_EPOCHS..];
    tail[0] != QueryState::Stable && tail.iter().all(|s| *s == tail[0])
}

/// Operator indices (0-based) ordered by ascending relay ratio; ties go to
/// the upstream operator.
pub fn operator_priority(r: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(|a, b| r[*a].total_cmp(&r[*b]).then(a.cmp(b)));
    idx
}

/// Max-min fair split of `total` across `demands`.
pub fn allocate_budget(total: f64, demands: &[f64]) -> Vec<f64> {
    let mut alloc = vec![0.0; demands.len()];
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|a, b| demands[*a].total_cmp(&demands[*b]).then(a.cmp(b)));
    let mut left = total.max(0.0);
    let mut remaining = order.len();
    for i in order {
        let fair = left / remaining as f64;
        let give = demands[i].max(0.0).min(fair);
        alloc[i] = give;
        left -= give;
        remaining -= 1;
    }
    alloc
}

/// Per-operator measurements from one profiling epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OperatorProfile {
    /// Records that reached the operator.
    pub available: u64,
    pub processed: u64,
    pub consumed: f64,
    pub ingested_bytes: u64,
    pub emitted_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileEstimate {
    /// cpu-seconds per source record's worth of input bytes.
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    /// Compute budget for one epoch, cpu-seconds.
    pub budget: f64,
    pub n_records: f64,
    /// Fraction of each operator's input that was actually profiled.
    pub confidence: Vec<f64>,
}

impl ProfileEstimate {
    /// Builds an estimate from measurements, falling back to `prev` for
    /// operators that processed nothing.
    pub fn from_profiles(
        profiles: &[OperatorProfile],
        budget: f64,
        n_records: f64,
        prev: Option<&ProfileEstimate>,
    ) -> Self {
        let m = profiles.len();
        let mut est = ProfileEstimate {
            c: vec![0.0; m],
            r: vec![1.0; m],
            budget,
            n_records,
            confidence: vec![0.0; m],
        };
        // Bytes per record entering the pipeline.
        let unit = profiles
            .first()
            .filter(|p| p.processed > 0 && p.ingested_bytes > 0)
            .map(|p| p.ingested_bytes as f64 / p.processed as f64);
        for (i, op) in profiles.iter().enumerate() {
            let prev_c = prev.and_then(|p| p.c.get(i).copied());
            let prev_r = prev.and_then(|p| p.r.get(i).copied());
            if op.processed > 0 {
                // Cost per source record's worth of data: operators that
                // shrink records without dropping them (projections,
                // parsers) would otherwise be undercounted downstream,
                // since relay ratios are byte ratios.
                let records = match (unit, op.ingested_bytes) {
                    (Some(u), b) if b > 0 => b as f64 / u,
                    _ => op.processed as f64,
                };
                est.c[i] = op.consumed / records;
                est.confidence[i] = op.processed as f64 / op.available.max(1) as f64;
            } else if let Some(c) = prev_c {
                est.c[i] = c;
            }
            est.r[i] = observe_relay_ratio(op.emitted_bytes, op.ingested_bytes)
                .ok()
                .or(prev_r)
                .unwrap_or(1.0);
        }
        est
    }

    pub fn problem(&self) -> PartitionProblem {
        PartitionProblem {
            n_records: self.n_records,
            budget: self.budget,
            c: self.c.clone(),
            r: self.r.clone(),
        }
    }

    /// Per-operator cost of one input record's worth of flow, `R_i c_i`.
    pub fn weighted_costs(&self) -> Vec<f64> {
        let mut reach = 1.0;
        self.c
            .iter()
            .zip(&self.r)
            .map(|(c, r)| {
                let w = reach * c;
                reach *= r;
                w
            })
            .collect()
    }
}

/// Budget shares for a profiling epoch: proportional to the last known
/// per-input-record cost of each operator, uniform without history.
pub fn profile_shares(m: usize, prev: Option<&ProfileEstimate>) -> Vec<f64> {
    let weights = prev.map(|p| p.weighted_costs()).unwrap_or_default();
    let total: f64 = weights.iter().sum();
    if weights.len() == m && total > 0.0 && total.is_finite() {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / m.max(1) as f64; m]
    }
}

/// Result of running the source-side operators one at a time.
#[derive(Clone, Debug, Default)]
pub struct ProfileRun {
    pub profiles: Vec<OperatorProfile>,
    /// Records no operator got to, tagged with the operator they await.
    pub drained: Vec<DrainedRecord>,
    /// Output of the last source-side operator.
    pub output: Vec<Record>,
    pub consumed: f64,
}

/// Runs each operator over the whole epoch input in turn, giving operator
/// `i` `shares[i]` of `budget` plus whatever its predecessors left unused.
/// Unprocessed records are drained to their operator's remote replica.
pub fn profile_epoch(
    ops: &[OperatorSpec],
    states: &mut [OperatorState],
    input: Vec<Record>,
    budget: f64,
    shares: &[f64],
    cost: &CostModel,
) -> Result<ProfileRun, OperatorError> {
    let mut run = ProfileRun::default();
    let mut batch = input;
    let mut carry = 0.0;
    for (i, (op, state)) in ops.iter().zip(states.iter_mut()).enumerate() {
        let allowance = budget * shares.get(i).copied().unwrap_or(0.0) + carry;
        let available = batch.len() as u64;
        let out = run_operator(op, batch, state, allowance, cost)?;
        carry = (allowance - out.consumed).max(0.0);
        run.consumed += out.consumed;
        run.profiles.push(OperatorProfile {
            available,
            processed: out.processed as u64,
            consumed: out.consumed,
            ingested_bytes: out.ingested_bytes,
            emitted_bytes: out.emitted_bytes,
        });
        run.drained.extend(flush_backpressure(out.pending, op.id));
        batch = out.output;
    }
    run.output = batch;
    Ok(run)
}

/// Tuning knobs of the adaptation loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptConfig {
    /// Initialize load factors from the LP after profiling. When false,
    /// fine-tuning starts from the zero vector.
    pub lp_init: bool,
    /// Fine-tune after initialization until the query is stable.
    pub fine_tune: bool,
    pub max_adapt_epochs: u32,
    /// Load-factor grid of the binary search.
    pub lf_step: f64,
    /// LP vertices this close to the optimum count as ties.
    pub lp_tie_tolerance: f64,
    /// Relative budget change that re-opens a settled non-stable state.
    pub retrigger_budget_change: f64,
    /// Relative input change that re-opens a settled non-stable state.
    pub retrigger_rate_change: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lp_init: true,
            fine_tune: true,
            max_adapt_epochs: 32,
            lf_step: 0.01,
            lp_tie_tolerance: 0.005,
            retrigger_budget_change: 0.05,
            retrigger_rate_change: 0.10,
        }
    }
}

/// First adaptation step: LP-optimal load factors for an estimate.
pub fn stepwise_adapt(est: &ProfileEstimate, cfg: &AdaptConfig) -> Result<Vec<f64>, RuntimeError> {
    let m = est.c.len();
    if est.budget <= 0.0 {
        return Ok(vec![0.0; m]);
    }
    if est.n_records > 0.0 && m > 0 && est.c.iter().all(|c| *c == 0.0) {
        return Err(RuntimeError::InfeasibleEstimate);
    }
    let prob = est.problem();
    let sol = solve_lp_with(
        &prob,
        &LpOptions {
            tie_tolerance: cfg.lp_tie_tolerance,
        },
    )
    .map_err(|_| RuntimeError::InfeasibleEstimate)?;
    let p = e_to_p(&sol.e).map_err(|_| RuntimeError::InfeasibleEstimate)?;
    Ok(p.into_iter().map(|x| snap(x, cfg.lf_step, false)).collect())
}

/// Rounds `x` to the load-factor grid; flooring keeps a
/// budget-tight LP answer stays feasible.
fn snap(x: f64, step: f64, nearest: bool) -> f64 {
    if step <= 0.0 {
        return x;
    }
    let units = x / step;
    let units = if nearest {
        libm::round(units)
    } else {
        libm::floor(units + 1e-6)
    };
    (units * step).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Search {
    op: usize,
    lo: f64,
    hi: f64,
    lo_tested: bool,
    hi_tested: bool,
}

/// Binary-search state of the fine-tuning loop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchCursor {
    active: Option<Search>,
    done: Vec<bool>,
}

impl SearchCursor {
    pub fn reset(&mut self) {
        self.active = None;
        self.done.clear();
    }

    /// Operator under search and its open interval.
    pub fn interval(&self) -> Option<(usize, f64, f64)> {
        self.active.map(|s| (s.op, s.lo, s.hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FineTune {
    Adjusted,
    Exhausted,
}

/// One fine-tuning move. Idle raises the highest-priority operator that is
/// not yet at 1; congestion lowers the lowest-priority operator above 0.
/// Each operator is binary-searched on the `step` grid until its interval
/// collapses, then the next operator in priority order is taken.
pub fn fine_tune_step(
    lf: &mut [f64],
    priorities: &[usize],
    state: QueryState,
    cursor: &mut SearchCursor,
    step: f64,
) -> FineTune {
    if state == QueryState::Stable {
        return FineTune::Adjusted;
    }
    if cursor.done.len() != lf.len() {
        cursor.done = vec![false; lf.len()];
    }
    let search = match cursor.active.as_mut() {
        Some(s) => {
            if state == QueryState::Idle {
                s.lo = lf[s.op];
                s.lo_tested = true;
            } else {
                s.hi = lf[s.op];
                s.hi_tested = true;
            }
            *s
        }
        None => {
            let pick = if state == QueryState::Idle {
                priorities
                    .iter()
                    .copied()
                    .find(|&i| lf[i] < 1.0 && !cursor.done[i])
                    .map(|i| Search {
                        op: i,
                        lo: lf[i],
                        hi: 1.0,
                        lo_tested: true,
                        hi_tested: false,
                    })
            } else {
                priorities
                    .iter()
                    .rev()
                    .copied()
                    .find(|&i| lf[i] > 0.0 && !cursor.done[i])
                    .map(|i| Search {
                        op: i,
                        lo: 0.0,
                        hi: lf[i],
                        lo_tested: false,
                        hi_tested: true,
                    })
            };
            match pick {
                Some(s) => {
                    cursor.active = Some(s);
                    s
                }
                None => return FineTune::Exhausted,
            }
        }
    };
    let current = lf[search.op];
    let mid = snap((search.lo + search.hi) / 2.0, step, true);
    if search.hi - search.lo <= step + 1e-12 || (mid - current).abs() < 1e-12 {
        let target = if state == QueryState::Idle && !search.hi_tested {
            search.hi
        } else if state == QueryState::Congested && !search.lo_tested {
            search.lo
        } else {
            search.lo
        };
        cursor.done[search.op] = true;
        cursor.active = None;
        if (target - current).abs() < 1e-12 {
            // Nothing to move for this operator; try the next one.
            return fine_tune_step(lf, priorities, state, cursor, step);
        }
        lf[search.op] = target;
        return FineTune::Adjusted;
    }
    lf[search.op] = mid;
    FineTune::Adjusted
}

/// What the node should do with the query during the next epoch.
#[derive(Clone, Debug, PartialEq)]
pub enum EpochPlan {
    /// Normal processing with these load factors.
    Run(Vec<f64>),
    /// Profile the operators one at a time with these budget shares.
    Profile(Vec<f64>),
}

/// Local evidence handed to the runtime at the end of an epoch.
#[derive(Clone, Copy, Debug)]
pub struct EpochObservation<'a> {
    pub verdicts: &'a [ProxyVerdict],
    /// cpu-seconds the query was granted this epoch.
    pub budget: f64,
    /// Records that entered the query this epoch.
    pub n_records: u64,
    /// Present after a profiling epoch.
    pub profile: Option<&'a [OperatorProfile]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Settled {
    verdict: QueryState,
    budget: f64,
    n_records: f64,
}

/// Counters of notable runtime events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RuntimeEvents {
    pub adaptations: u32,
    pub non_convergence: u32,
    pub exhausted: u32,
    pub infeasible: u32,
}

/// Relative change of `a` from `b`.
fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((a - b) / b).abs()
    }
}

/// The per-(node, query) control loop.
#[derive(Clone, Debug)]
pub struct Runtime {
    policy: PolicyKind,
    cfg: AdaptConfig,
    phase: RuntimePhase,
    lf: Vec<f64>,
    /// Load factors of static policies.
    fixed: Vec<f64>,
    sp_share: f64,
    history: Vec<QueryState>,
    estimate: Option<ProfileEstimate>,
    priorities: Vec<usize>,
    cursor: SearchCursor,
    adapt_epochs: u32,
    settled: Option<Settled>,
    last_verdict: QueryState,
    events: RuntimeEvents,
}

impl Runtime {
    /// `fixed` holds the load factors of the static policies and is ignored
    /// by adaptive ones; `sp_share` is the stream-processor compute share
    /// used by LB-DP.
    pub fn new(policy: PolicyKind, cfg: AdaptConfig, fixed: Vec<f64>, sp_share: f64) -> Self {
        let m = fixed.len();
        Runtime {
            policy,
            cfg,
            phase: RuntimePhase::Startup,
            lf: vec![0.0; m],
            fixed,
            sp_share,
            history: Vec::new(),
            estimate: None,
            priorities: (0..m).collect(),
            cursor: SearchCursor::default(),
            adapt_epochs: 0,
            settled: None,
            last_verdict: QueryState::Stable,
            events: RuntimeEvents::default(),
        }
    }

    pub fn phase(&self) -> RuntimePhase {
        self.phase
    }

    pub fn load_factors(&self) -> &[f64] {
        &self.lf
    }

    pub fn estimate(&self) -> Option<&ProfileEstimate> {
        self.estimate.as_ref()
    }

    pub fn events(&self) -> RuntimeEvents {
        self.events
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    fn adaptive(&self) -> bool {
        matches!(self.policy, PolicyKind::Jarvis | PolicyKind::BestOP)
    }

    /// True once the runtime has nothing left to change: the query is
    /// stable, or adaptation finished in a state it cannot improve.
    pub fn converged(&self) -> bool {
        if !self.adaptive() {
            return true;
        }
        self.phase == RuntimePhase::Probe
            && (self.last_verdict == QueryState::Stable || self.settled.is_some_and(|s| s.verdict == self.last_verdict))
    }

    /// Decides the next epoch. `budget` is the local compute grant.
    pub fn begin_epoch(&mut self, budget: f64) -> EpochPlan {
        match self.policy {
            PolicyKind::AllSP | PolicyKind::AllSrc | PolicyKind::FilterSrc => {
                self.lf.clone_from(&self.fixed);
                self.phase = if self.phase == RuntimePhase::Startup {
                    RuntimePhase::Startup
                } else {
                    RuntimePhase::Probe
                };
                EpochPlan::Run(self.lf.clone())
            }
            PolicyKind::LBDP => {
                self.lf = baselines::lb_dp(self.fixed.len(), budget, self.sp_share);
                EpochPlan::Run(self.lf.clone())
            }
            PolicyKind::Jarvis | PolicyKind::BestOP => {
                if self.phase == RuntimePhase::Profile {
                    EpochPlan::Profile(profile_shares(self.lf.len(), self.estimate.as_ref()))
                } else {
                    EpochPlan::Run(self.lf.clone())
                }
            }
        }
    }

    fn settle(&mut self, verdict: QueryState, budget: f64, n: f64) {
        self.settled = (verdict != QueryState::Stable).then_some(Settled {
            verdict,
            budget,
            n_records: n,
        });
    }

    fn reopened(&self, verdict: QueryState, budget: f64, n: f64) -> bool {
        let Some(s) = self.settled else {
            return true;
        };
        verdict != s.verdict
            || rel(budget, s.budget) > self.cfg.retrigger_budget_change
            || rel(n, s.n_records) > self.cfg.retrigger_rate_change
    }

    fn fine_tunes(&self) -> bool {
        self.policy == PolicyKind::Jarvis && self.cfg.fine_tune
    }

    fn enter_probe(&mut self) {
        self.phase = RuntimePhase::Probe;
        self.history.clear();
    }

    /// Consumes the evidence of the epoch that just ran.
    pub fn end_epoch(&mut self, obs: &EpochObservation<'_>) {
        let verdict = probe_cp(obs.verdicts);
        self.last_verdict = verdict;
        let n = obs.n_records as f64;
        if !self.adaptive() {
            if self.phase == RuntimePhase::Startup {
                self.phase = RuntimePhase::Probe;
            }
            return;
        }
        match self.phase {
            RuntimePhase::Startup => self.enter_probe(),
            RuntimePhase::Probe => {
                if verdict == QueryState::Stable {
                    self.settled = None;
                } else if self.settled.is_some() && self.reopened(verdict, obs.budget, n) {
                    self.settled = None;
                }
                self.history.push(verdict);
                if self.history.len() > DEBOUNCE_EPOCHS {
                    self.history.remove(0);
                }
                if self.settled.is_none() && debounce(&self.history) {
                    self.phase = RuntimePhase::Profile;
                    self.events.adaptations += 1;
                }
            }
            RuntimePhase::Profile => {
                let est = ProfileEstimate::from_profiles(
                    obs.profile.unwrap_or(&[]),
                    obs.budget,
                    n,
                    self.estimate.as_ref(),
                );
                let est = if est.c.len() == self.lf.len() {
                    est
                } else {
                    // No measurements (nothing arrived): keep the old model.
                    self.estimate.clone().unwrap_or(est)
                };
                self.priorities = operator_priority(&est.r);
                self.cursor.reset();
                self.adapt_epochs = 0;
                self.lf = match self.policy {
                    PolicyKind::BestOP => baselines::best_op(&est),
                    _ if !self.cfg.lp_init => vec![0.0; self.lf.len()],
                    _ => match stepwise_adapt(&est, &self.cfg) {
                        Ok(lf) => lf,
                        Err(_) => {
                            self.events.infeasible += 1;
                            self.lf.clone()
                        }
                    },
                };
                self.estimate = Some(est);
                self.phase = RuntimePhase::Adapt;
            }
            RuntimePhase::Adapt => {
                // The search assumes the profiled budget; start over if it moved.
                if self
                    .estimate
                    .as_ref()
                    .is_some_and(|e| rel(obs.budget, e.budget) > self.cfg.retrigger_budget_change)
                {
                    self.phase = RuntimePhase::Profile;
                    self.events.adaptations += 1;
                    return;
                }
                if verdict == QueryState::Stable {
                    self.settled = None;
                    self.enter_probe();
                    return;
                }
                if !self.fine_tunes() {
                    self.settle(verdict, obs.budget, n);
                    self.enter_probe();
                    return;
                }
                self.adapt_epochs += 1;
                if self.adapt_epochs >= self.cfg.max_adapt_epochs {
                    self.events.non_convergence += 1;
                    self.settle(verdict, obs.budget, n);
                    self.enter_probe();
                    return;
                }
                let step = self.cfg.lf_step;
                if fine_tune_step(&mut self.lf, &self.priorities, verdict, &mut self.cursor, step)
                    == FineTune::Exhausted
                {
                    self.events.exhausted += 1;
                    self.settle(verdict, obs.budget, n);
                    self.enter_probe();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProxyVerdict as V;
    use QueryState as Q;

    #[test]
    fn probe_examples() {
        assert_eq!(probe_cp(&[V::Stable, V::Congested]), Q::Congested);
        assert_eq!(probe_cp(&[V::Idle, V::Idle]), Q::Idle);
        assert_eq!(probe_cp(&[V::Idle, V::Stable]), Q::Stable);
        assert_eq!(probe_cp(&[]), Q::Stable);
    }

    #[test]
    fn debounce_examples() {
        assert!(debounce(&[Q::Congested; 3]));
        assert!(!debounce(&[Q::Congested, Q::Stable, Q::Congested]));
        assert!(!debounce(&[Q::Idle, Q::Idle]));
        assert!(!debounce(&[Q::Stable; 3]));
        assert!(!debounce(&[Q::Idle, Q::Idle, Q::Congested]));
    }

    #[test]
    fn priority_examples() {
        assert_eq!(operator_priority(&[0.86, 0.05]), [1, 0]);
        assert_eq!(operator_priority(&[0.5, 0.5]), [0, 1]);
        assert_eq!(operator_priority(&[0.1]), [0]);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_budget(1.0, &[0.3, 0.9]), [0.3, 0.7]);
        assert_eq!(allocate_budget(1.0, &[0.8, 0.8]), [0.5, 0.5]);
        assert_eq!(allocate_budget(2.0, &[0.3, 0.3, 0.3]), [0.3, 0.3, 0.3]);
    }

    #[test]
    fn fine_tune_examples() {
        let mut c = SearchCursor::default();
        let mut lf = [1.0, 0.5];
        assert_eq!(fine_tune_step(&mut lf, &[1, 0], Q::Idle, &mut c, 0.01), FineTune::Adjusted);
        assert_eq!(lf, [1.0, 0.75]);

        let mut c = SearchCursor::default();
        let mut lf = [1.0, 0.5];
        fine_tune_step(&mut lf, &[1, 0], Q::Congested, &mut c, 0.01);
        assert_eq!(lf, [0.5, 0.5]);

        let mut c = SearchCursor::default();
        let mut lf = [1.0, 1.0];
        assert_eq!(fine_tune_step(&mut lf, &[1, 0], Q::Idle, &mut c, 0.01), FineTune::Exhausted);
        assert_eq!(lf, [1.0, 1.0]);
    }

    #[test]
    fn fine_tune_search_converges_on_a_threshold() {
        // The query is congested above 0.63 and idle below it.
        let mut c = SearchCursor::default();
        let mut lf = [0.0];
        let mut moves = 0;
        loop {
            let state = if lf[0] > 0.63 { Q::Congested } else { Q::Idle };
            if fine_tune_step(&mut lf, &[0], state, &mut c, 0.01) == FineTune::Exhausted {
                break;
            }
            moves += 1;
            assert!(moves < 20);
        }
        assert!((lf[0] - 0.63).abs() < 0.011, "{lf:?}");
    }

    #[test]
    fn zero_budget_adapts_to_all_remote() {
        let est = ProfileEstimate {
            c: vec![1e-6, 2e-5],
            r: vec![0.86, 0.3],
            budget: 0.0,
            n_records: 1000.0,
            confidence: vec![1.0, 1.0],
        };
        assert_eq!(stepwise_adapt(&est, &AdaptConfig::default()).unwrap(), [0.0, 0.0]);
        let free = ProfileEstimate {
            c: vec![0.0, 0.0],
            budget: 1.0,
            ..est
        };
        assert_eq!(
            stepwise_adapt(&free, &AdaptConfig::default()),
            Err(RuntimeError::InfeasibleEstimate)
        );
    }

    #[test]
    fn profile_shares_follow_weighted_costs() {
        assert_eq!(profile_shares(2, None), [0.5, 0.5]);
        let est = ProfileEstimate {
            c: vec![1.0, 2.0],
            r: vec![0.5, 1.0],
            budget: 1.0,
            n_records: 1.0,
            confidence: vec![1.0, 1.0],
        };
        assert_eq!(profile_shares(2, Some(&est)), [0.5, 0.5]);
    }

    fn obs(verdicts: &[ProxyVerdict]) -> EpochObservation<'_> {
        EpochObservation {
            verdicts,
            budget: 0.8,
            n_records: 1000,
            profile: None,
        }
    }

    #[test]
    fn state_machine_walks_through_profile_and_adapt() {
        let mut rt = Runtime::new(PolicyKind::Jarvis, AdaptConfig::default(), vec![0.0, 0.0], 0.0);
        assert_eq!(rt.phase(), RuntimePhase::Startup);
        assert_eq!(rt.begin_epoch(0.8), EpochPlan::Run(vec![0.0, 0.0]));
        rt.end_epoch(&obs(&[V::Idle, V::Idle]));
        assert_eq!(rt.phase(), RuntimePhase::Probe);
        for _ in 0..3 {
            rt.begin_epoch(0.8);
            rt.end_epoch(&obs(&[V::Idle, V::Idle]));
        }
        assert_eq!(rt.phase(), RuntimePhase::Profile);
        assert!(matches!(rt.begin_epoch(0.8), EpochPlan::Profile(_)));
        // 1000 records: filter costs 1e-4 each, grouping 9.3e-4 per filtered record.
        let profile = [
            OperatorProfile {
                available: 1000,
                processed: 1000,
                consumed: 0.1,
                ingested_bytes: 86_000,
                emitted_bytes: 73_960,
            },
            OperatorProfile {
                available: 860,
                processed: 700,
                consumed: 0.651,
                ingested_bytes: 60_200,
                emitted_bytes: 18_060,
            },
        ];
        rt.end_epoch(&EpochObservation {
            profile: Some(&profile),
            ..obs(&[V::Idle, V::Idle])
        });
        assert_eq!(rt.phase(), RuntimePhase::Adapt);
        let lf = rt.load_factors().to_vec();
        assert_eq!(lf[0], 1.0);
        assert!(lf[1] > 0.8 && lf[1] < 0.9, "{lf:?}");
        rt.begin_epoch(0.8);
        rt.end_epoch(&obs(&[V::Stable, V::Stable]));
        assert_eq!(rt.phase(), RuntimePhase::Probe);
        assert!(rt.converged());
    }

    #[test]
    fn exhausted_idle_state_settles_without_retriggering() {
        let mut rt = Runtime::new(PolicyKind::Jarvis, AdaptConfig::default(), vec![0.0], 0.0);
        rt.begin_epoch(1.0);
        rt.end_epoch(&obs(&[V::Idle]));
        for _ in 0..3 {
            rt.end_epoch(&obs(&[V::Idle]));
        }
        let profile = [OperatorProfile {
            available: 1000,
            processed: 1000,
            consumed: 0.1,
            ingested_bytes: 1000,
            emitted_bytes: 500,
        }];
        rt.end_epoch(&EpochObservation {
            profile: Some(&profile),
            ..obs(&[V::Idle])
        });
        assert_eq!(rt.load_factors(), [1.0]);
        rt.end_epoch(&obs(&[V::Idle]));
        assert_eq!(rt.phase(), RuntimePhase::Probe);
        for _ in 0..5 {
            rt.end_epoch(&obs(&[V::Idle]));
            assert_eq!(rt.phase(), RuntimePhase::Probe);
        }
        assert!(rt.converged());
        assert_eq!(rt.events().exhausted, 1);
    }
}

//! Comparison policies and an exact enumerator for operator-level joint
//! partitioning of tiny instances.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::query::{OperatorKind, QueryPlan};
use crate::runtime::ProfileEstimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    /// Everything runs on the stream processor.
    AllSP,
    /// Everything runs on the data source.
    AllSrc,
    /// Only the leading filters run on the data source.
    FilterSrc,
    /// Best all-or-nothing operator boundary for the profiled budget.
    BestOP,
    /// Query-level split proportional to source and stream-processor compute.
    LBDP,
    /// Adaptive data-level partitioning.
    Jarvis,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::AllSP,
        PolicyKind::AllSrc,
        PolicyKind::FilterSrc,
        PolicyKind::BestOP,
        PolicyKind::LBDP,
        PolicyKind::Jarvis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::AllSP => "all-sp",
            PolicyKind::AllSrc => "all-src",
            PolicyKind::FilterSrc => "filter-src",
            PolicyKind::BestOP => "best-op",
            PolicyKind::LBDP => "lb-dp",
            PolicyKind::Jarvis => "jarvis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|p| {
            p.name() == norm || p.name().replace('-', "") == norm.replace('-', "")
        })
    }
}

pub fn all_sp(m: usize) -> Vec<f64> {
    vec![0.0; m]
}

pub fn all_src(m: usize) -> Vec<f64> {
    vec![1.0; m]
}

/// Load factor 1 for the leading run of filters, 0 afterwards.
pub fn filter_src(plan: &QueryPlan) -> Vec<f64> {
    let m = plan.source_eligible_len;
    let lead = plan.operators[..m]
        .iter()
        .take_while(|op| op.kind == OperatorKind::Filter)
        .count();
    (0..m).map(|i| if i < lead { 1.0 } else { 0.0 }).collect()
}

/// Largest all-or-nothing prefix whose cost fits the per-record budget.
pub fn best_op_boundary(est: &ProfileEstimate) -> usize {
    let b = if est.n_records > 0.0 {
        est.budget / est.n_records
    } else {
        f64::INFINITY
    };
    let mut acc = 0.0;
    let mut boundary = 0;
    for (i, w) in est.weighted_costs().into_iter().enumerate() {
        acc += w;
        if acc <= b * (1.0 + 1e-12) {
            boundary = i + 1;
        } else {
            break;
        }
    }
    boundary
}

pub fn best_op(est: &ProfileEstimate) -> Vec<f64> {
    let b = best_op_boundary(est);
    (0..est.c.len()).map(|i| if i < b { 1.0 } else { 0.0 }).collect()
}

/// Query-level split: the first proxy keeps the source's share of the
/// combined compute; admitted records run the whole local pipeline.
pub fn lb_dp(m: usize, src_budget: f64, sp_share: f64) -> Vec<f64> {
    if m == 0 {
        return Vec::new();
    }
    let total = src_budget.max(0.0) + sp_share.max(0.0);
    let mut lf = vec![1.0; m];
    lf[0] = if total > 0.0 { src_budget.max(0.0) / total } else { 0.0 };
    lf
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("exact enumeration supports at most {max_nodes} nodes and {max_ops} operators")]
    TooLarge { max_nodes: usize, max_ops: usize },
    #[error("nodes disagree on the operator count")]
    DimensionMismatch,
}

pub const JOINT_MAX_NODES: usize = 4;
pub const JOINT_MAX_OPS: usize = 4;

/// One data source in an operator-level joint partitioning instance.
#[derive(Clone, Debug, PartialEq)]
pub struct JointNode {
    /// Records per epoch.
    pub n_records: f64,
    /// Local cpu-seconds per second.
    pub budget: f64,
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    /// Bits of one input record.
    pub record_bits: f64,
    /// Link bandwidth to the stream processor, bits per second.
    pub link_bps: f64,
    /// Stream-processor cores available to this node's remainder.
    pub sp_cores: f64,
}

impl JointNode {
    fn reach(&self) -> Vec<f64> {
        let mut acc = 1.0;
        let mut out = Vec::with_capacity(self.r.len() + 1);
        for r in &self.r {
            out.push(acc);
            acc *= r;
        }
        out.push(acc);
        out
    }

    /// Seconds to run operators `1..=b` locally on one epoch of records.
    pub fn local_time(&self, b: usize) -> f64 {
        let reach = self.reach();
        let work: f64 = (0..b).map(|i| reach[i] * self.c[i]).sum::<f64>() * self.n_records;
        if work == 0.0 {
            0.0
        } else if self.budget <= 0.0 {
            f64::INFINITY
        } else {
            work / self.budget
        }
    }

    /// Seconds to ship the output of operator `b` and finish remotely.
    pub fn remote_time(&self, b: usize) -> f64 {
        let reach = self.reach();
        let bits = self.n_records * reach[b] * self.record_bits;
        let transfer = if self.link_bps > 0.0 { bits / self.link_bps } else { f64::INFINITY };
        let work: f64 = (b..self.c.len()).map(|i| reach[i] * self.c[i]).sum::<f64>() * self.n_records;
        let compute = if work == 0.0 {
            0.0
        } else if self.sp_cores > 0.0 {
            work / self.sp_cores
        } else {
            f64::INFINITY
        };
        transfer + compute
    }

    pub fn feasible(&self, b: usize) -> bool {
        b == 0 || self.local_time(b) <= self.remote_time(b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSolution {
    /// Boundary operator per node; 0 runs everything remotely.
    pub boundaries: Vec<usize>,
    pub objective: u64,
    /// Boundary vectors examined.
    pub evaluated: u64,
}

/// Remote-processing cost of boundary `b`, strictly decreasing in `b`.
pub fn remote_cost(m: usize, b: usize) -> u64 {
    (m - b) as u64
}

/// Enumerates every boundary vector and returns the cheapest feasible one
/// (ties go to the first in enumeration order).
pub fn exact_joint(nodes: &[JointNode]) -> Result<JointSolution, BaselineError> {
    let m = nodes.first().map_or(0, |n| n.c.len());
    if nodes.len() > JOINT_MAX_NODES || m > JOINT_MAX_OPS {
        return Err(BaselineError::TooLarge {
            max_nodes: JOINT_MAX_NODES,
            max_ops: JOINT_MAX_OPS,
        });
    }
    if nodes.iter().any(|n| n.c.len() != m || n.r.len() != m) {
        return Err(BaselineError::DimensionMismatch);
    }
    let base = m + 1;
    let total = base.pow(nodes.len() as u32);
    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut b = vec![0usize; nodes.len()];
    for code in 0..total {
        let mut x = code;
        for slot in b.iter_mut() {
            *slot = x % base;
            x /= base;
        }
        if !nodes.iter().zip(&b).all(|(n, &bi)| n.feasible(bi)) {
            continue;
        }
        let obj: u64 = b.iter().map(|&bi| remote_cost(m, bi)).sum();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, b.clone()));
        }
    }
    let (objective, boundaries) = best.expect("the all-remote vector is always feasible");
    Ok(JointSolution {
        boundaries,
        objective,
        evaluated: total as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{Aggregate, Field, OperatorSpec, Predicate, RuleConfig, Transform};
    use alloc::vec;

    fn est(budget: f64) -> ProfileEstimate {
        // One core-second per epoch of 1000 records: filter 13%, grouping
        // 80% of a core over the filter output.
        let n = 1000.0;
        ProfileEstimate {
            c: vec![0.13 / n, 0.80 / (0.86 * n)],
            r: vec![0.86, 0.3],
            budget,
            n_records: n,
            confidence: vec![1.0, 1.0],
        }
    }

    #[test]
    fn static_policies() {
        assert_eq!(all_sp(2), [0.0, 0.0]);
        assert_eq!(all_src(2), [1.0, 1.0]);
        assert_eq!(all_sp(1), [0.0]);
        assert_eq!(all_src(4), [1.0; 4]);
        let plan = |ops| QueryPlan::new("q", ops, 10_000, &[], &RuleConfig::default()).unwrap();
        let s2s = plan(vec![
            OperatorSpec::filter(1, Predicate::ErrCodeZero),
            OperatorSpec::group(2, &[Field::SrcIp], &[Aggregate::Avg]),
        ]);
        assert_eq!(filter_src(&s2s), [1.0, 0.0]);
        let map_first = plan(vec![
            OperatorSpec::map(1, Transform::Normalize),
            OperatorSpec::filter(2, Predicate::JobStatsPatterns),
        ]);
        assert_eq!(filter_src(&map_first), [0.0, 0.0]);
        let ffm = plan(vec![
            OperatorSpec::filter(1, Predicate::ErrCodeZero),
            OperatorSpec::filter(2, Predicate::ErrCodeZero),
            OperatorSpec::map(3, Transform::Normalize),
        ]);
        assert_eq!(filter_src(&ffm), [1.0, 1.0, 0.0]);
    }

    #[test]
    fn best_op_examples() {
        assert_eq!(best_op(&est(0.55)), [1.0, 0.0]);
        assert_eq!(best_op(&est(1.0)), [1.0, 1.0]);
        assert_eq!(best_op(&est(0.05)), [0.0, 0.0]);
    }

    #[test]
    fn lb_dp_examples() {
        let lf = lb_dp(2, 0.60, 0.25);
        assert!((lf[0] - 0.60 / 0.85).abs() < 1e-12);
        assert!((lf[0] - 0.706).abs() < 1e-3);
        assert_eq!(lf[1], 1.0);
        assert_eq!(lb_dp(2, 0.6, 0.0), [1.0, 1.0]);
        assert_eq!(lb_dp(2, 0.0, 0.25), [0.0, 1.0]);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(PolicyKind::parse(p.name()), Some(p));
        }
        assert_eq!(PolicyKind::parse("BestOP"), Some(PolicyKind::BestOP));
        assert_eq!(PolicyKind::parse("nope"), None);
    }

    fn node(budget: f64) -> JointNode {
        JointNode {
            n_records: 1000.0,
            budget,
            c: vec![1e-4, 1e-3],
            r: vec![0.8, 0.1],
            record_bits: 688.0,
            link_bps: 1e6,
            sp_cores: 1.0,
        }
    }

    #[test]
    fn joint_enumerates_every_vector() {
        let s = exact_joint(&[node(1.0), node(1.0)]).unwrap();
        assert_eq!(s.evaluated, 9);
    }

    #[test]
    fn joint_zero_budget_forces_remote() {
        let s = exact_joint(&[node(0.0), node(0.0)]).unwrap();
        assert_eq!(s.boundaries, [0, 0]);
        assert_eq!(s.objective, 4);
    }

    #[test]
    fn joint_gives_the_capable_node_everything() {
        // Slow node: boundary 1 takes 0.1 s locally against 0.55 s of
        // transfer plus 0.8 s remote compute; boundary 2 takes 0.9 s against
        // a 0.055 s transfer. The fast node runs both in 0.009 s.
        let slow = node(1.0);
        let fast = node(100.0);
        assert!(slow.feasible(1) && !slow.feasible(2));
        assert!((slow.remote_time(1) - 1.3504).abs() < 1e-9);
        assert!(fast.feasible(2));
        let s = exact_joint(&[slow, fast]).unwrap();
        assert_eq!(s.boundaries, [1, 2]);
        assert_eq!(s.objective, 1);
        assert!(matches!(
            exact_joint(&vec![node(1.0); 5]),
            Err(BaselineError::TooLarge { .. })
        ));
    }
}

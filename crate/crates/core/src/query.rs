//! Declarative monitoring queries: operator pipelines, data-source eligibility
//! rules and control-proxy instrumentation.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

/// Operator identifier, 1-based and consecutive within a plan.
pub type OperatorId = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    Filter,
    Map,
    GroupAggregate,
    JoinStatic,
    Project,
    /// Stateful join of two streams. Never runs on a data source.
    StreamJoin,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Filter => "filter",
            OperatorKind::Map => "map",
            OperatorKind::GroupAggregate => "group_aggregate",
            OperatorKind::JoinStatic => "join_static",
            OperatorKind::Project => "project",
            OperatorKind::StreamJoin => "stream_join",
        }
    }
}

/// Record fields addressable by keys, joins and projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    SrcIp,
    DstIp,
    SrcTor,
    DstTor,
    Rtt,
    Tenant,
    StatName,
    Stat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predicate {
    /// Keep probes whose error code is zero.
    ErrCodeZero,
    /// Keep log lines containing any of the job-statistics patterns.
    JobStatsPatterns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    /// Trim and lowercase a log line.
    Normalize,
    /// Split a normalized line into a job statistic.
    ParseJobStats,
    /// Replace the statistic by its `width_bucket(stat, low, high, count)`.
    WidthBucket { low: u32, high: u32, count: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aggregate {
    Avg,
    Max,
    Min,
    Count,
    Sum,
    /// Exact quantile; not incrementally mergeable.
    ExactQuantile(f64),
}

impl Aggregate {
    pub fn is_incremental(self) -> bool {
        !matches!(self, Aggregate::ExactQuantile(_))
    }

    /// Whether the aggregate reads the round-trip-time value.
    pub fn reads_value(self) -> bool {
        !matches!(self, Aggregate::Count)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpParams {
    Filter(Predicate),
    Map(Transform),
    GroupAggregate {
        keys: Vec<Field>,
        aggregates: Vec<Aggregate>,
    },
    JoinStatic {
        table: String,
        key: Field,
        output: Field,
    },
    Project(Vec<Field>),
    StreamJoin {
        other: String,
    },
}

impl OpParams {
    pub fn kind(&self) -> OperatorKind {
        match self {
            OpParams::Filter(_) => OperatorKind::Filter,
            OpParams::Map(_) => OperatorKind::Map,
            OpParams::GroupAggregate { .. } => OperatorKind::GroupAggregate,
            OpParams::JoinStatic { .. } => OperatorKind::JoinStatic,
            OpParams::Project(_) => OperatorKind::Project,
            OpParams::StreamJoin { .. } => OperatorKind::StreamJoin,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub id: OperatorId,
    pub kind: OperatorKind,
    pub params: OpParams,
    pub stateful: bool,
    /// Partial states can be merged across sources.
    pub incremental: bool,
    /// Physical instances per logical operator.
    pub parallelism: u16,
}

impl OperatorSpec {
    pub fn new(id: OperatorId, params: OpParams) -> Self {
        let kind = params.kind();
        let (stateful, incremental) = match &params {
            OpParams::GroupAggregate { aggregates, .. } => {
                (true, aggregates.iter().all(|a| a.is_incremental()))
            }
            OpParams::StreamJoin { .. } => (true, false),
            _ => (false, true),
        };
        OperatorSpec {
            id,
            kind,
            params,
            stateful,
            incremental,
            parallelism: 1,
        }
    }

    pub fn filter(id: OperatorId, predicate: Predicate) -> Self {
        Self::new(id, OpParams::Filter(predicate))
    }

    pub fn map(id: OperatorId, transform: Transform) -> Self {
        Self::new(id, OpParams::Map(transform))
    }

    pub fn group(id: OperatorId, keys: &[Field], aggregates: &[Aggregate]) -> Self {
        Self::new(
            id,
            OpParams::GroupAggregate {
                keys: keys.to_vec(),
                aggregates: aggregates.to_vec(),
            },
        )
    }

    pub fn join_static(id: OperatorId, table: &str, key: Field, output: Field) -> Self {
        Self::new(
            id,
            OpParams::JoinStatic {
                table: table.into(),
                key,
                output,
            },
        )
    }

    pub fn project(id: OperatorId, fields: &[Field]) -> Self {
        Self::new(id, OpParams::Project(fields.to_vec()))
    }

    pub fn stream_join(id: OperatorId, other: &str) -> Self {
        Self::new(
            id,
            OpParams::StreamJoin {
                other: other.into(),
            },
        )
    }

    pub fn with_parallelism(mut self, parallelism: u16) -> Self {
        self.parallelism = parallelism;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("pipeline has no operators")]
    EmptyPipeline,
    #[error("operator id {0} appears more than once")]
    DuplicateId(OperatorId),
    #[error("operator id {found} at position {position} breaks the consecutive 1..M numbering")]
    NonConsecutiveId { position: usize, found: OperatorId },
    #[error("operator {op} joins undeclared static table `{table}`")]
    DanglingTableRef { op: OperatorId, table: String },
}

/// Checks operator numbering and static-table references.
pub fn validate_pipeline(operators: &[OperatorSpec], tables: &[&str]) -> Result<(), Vec<PlanError>> {
    if operators.is_empty() {
        return Err(alloc::vec![PlanError::EmptyPipeline]);
    }
    let mut errors = Vec::new();
    let mut seen: Vec<OperatorId> = Vec::with_capacity(operators.len());
    for (position, op) in operators.iter().enumerate() {
        if seen.contains(&op.id) {
            errors.push(PlanError::DuplicateId(op.id));
        } else if usize::from(op.id) != position + 1 {
            errors.push(PlanError::NonConsecutiveId {
                position,
                found: op.id,
            });
        }
        seen.push(op.id);
        if let OpParams::JoinStatic { table, .. } = &op.params {
            if !tables.iter().any(|t| t == table) {
                errors.push(PlanError::DanglingTableRef {
                    op: op.id,
                    table: table.clone(),
                });
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Toggles for the data-source eligibility rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RuleConfig {
    /// Non-incremental aggregates stay on the stream processor.
    pub non_incremental_aggregates: bool,
    /// Operators downstream of a cross-source aggregation stay remote.
    pub after_cross_source_aggregation: bool,
    /// Stream-stream joins stay remote.
    pub stream_joins: bool,
    /// Operators with several physical instances stay remote.
    pub parallel_operators: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            non_incremental_aggregates: true,
            after_cross_source_aggregation: true,
            stream_joins: true,
            parallel_operators: true,
        }
    }
}

/// Length of the longest operator prefix that may run on a data source.
pub fn apply_source_rules(operators: &[OperatorSpec], rules: &RuleConfig) -> usize {
    let mut aggregated = false;
    for (i, op) in operators.iter().enumerate() {
        let violates = (rules.non_incremental_aggregates
            && op.kind == OperatorKind::GroupAggregate
            && !op.incremental)
            || (rules.after_cross_source_aggregation && aggregated)
            || (rules.stream_joins && op.kind == OperatorKind::StreamJoin)
            || (rules.parallel_operators && op.parallelism > 1);
        if violates {
            return i;
        }
        if op.kind == OperatorKind::GroupAggregate {
            aggregated = true;
        }
    }
    operators.len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub name: String,
    pub operators: Vec<OperatorSpec>,
    pub window_ms: u64,
    pub source_eligible_len: usize,
}

impl QueryPlan {
    /// Validates the pipeline and computes its source-eligible prefix.
    pub fn new(
        name: &str,
        operators: Vec<OperatorSpec>,
        window_ms: u64,
        tables: &[&str],
        rules: &RuleConfig,
    ) -> Result<Self, Vec<PlanError>> {
        validate_pipeline(&operators, tables)?;
        let source_eligible_len = apply_source_rules(&operators, rules);
        Ok(QueryPlan {
            name: name.into(),
            operators,
            window_ms,
            source_eligible_len,
        })
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operator(&self, id: OperatorId) -> Option<&OperatorSpec> {
        self.operators.get(usize::from(id).checked_sub(1)?)
    }
}

/// A plan with one control-proxy slot immediately upstream of every
/// source-eligible operator. Window assignment happens at ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentedPlan {
    pub plan: QueryPlan,
    pub proxy_count: usize,
}

impl InstrumentedPlan {
    /// Operator fed by proxy `slot` (0-based).
    pub fn proxied_operator(&self, slot: usize) -> Option<&OperatorSpec> {
        (slot < self.proxy_count).then(|| &self.plan.operators[slot])
    }

    pub fn strip(self) -> QueryPlan {
        self.plan
    }
}

pub fn instrument(plan: QueryPlan) -> InstrumentedPlan {
    InstrumentedPlan {
        proxy_count: plan.source_eligible_len,
        plan,
    }
}

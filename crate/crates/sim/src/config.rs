//! Experiment files: a sectioned TOML document whose keys carry their units.
//! See `docs/config.md` for the full schema.

use std::collections::BTreeMap;
use std::path::Path;

use jarvis_core::baselines::PolicyKind;
use jarvis_core::operators::CostModel;
use jarvis_core::runtime::AdaptConfig;
use jarvis_core::sim::{ExperimentConfig, QueryConfig, Schedule};
use jarvis_core::workloads::{QueryKind, WorkloadGen, DEFAULT_TOR_ENTRIES};
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub run: RunSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub proxy: ProxySection,
    #[serde(default)]
    pub adapt: AdaptSection,
    /// Overrides of the per-record cost model, cpu-seconds.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cost_cpu_s: BTreeMap<String, f64>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(rename = "query")]
    pub queries: Vec<QuerySection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Base seed; query `i` uses `seed + i` unless it sets its own.
    pub seed: u64,
    #[serde(default = "d_epochs")]
    pub epochs: u64,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: u64,
    #[serde(default = "d_epoch_ms")]
    pub epoch_ms: u64,
    #[serde(default = "d_slices")]
    pub slices_per_epoch: u32,
    #[serde(default = "d_one_u32")]
    pub record_weight: u32,
    #[serde(default = "d_latency")]
    pub latency_bound_s: f64,
    #[serde(default = "d_horizon")]
    pub admission_horizon_s: f64,
    /// Fail with exit code 3 if some instance never settles after a change.
    #[serde(default)]
    pub require_convergence: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default = "d_one_u32")]
    pub sources: u32,
    #[serde(default = "d_sp_cores")]
    pub sp_cores: f64,
    /// Stream-processor cores LB-DP assumes per source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sp_share_cores: Option<f64>,
    /// Capacity shared by every link into the stream processor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sp_ingress_mbps: Option<f64>,
    #[serde(default = "d_true")]
    pub sp_execute: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    #[serde(default = "d_link")]
    pub per_query_mbps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Cores each source grants its queries from epoch 0.
    #[serde(default = "d_cores")]
    pub cores: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<CoresStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoresStep {
    pub at_epoch: u64,
    pub cores: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleStep {
    pub at_epoch: u64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntriesStep {
    pub at_epoch: u64,
    pub entries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySection {
    #[serde(default = "d_drained")]
    pub drained_thres: f64,
    #[serde(default = "d_idle")]
    pub idle_thres: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSection {
    #[serde(default = "d_true")]
    pub lp_init: bool,
    #[serde(default = "d_true")]
    pub fine_tune: bool,
    #[serde(default = "d_max_adapt")]
    pub max_adapt_epochs: u32,
    #[serde(default = "d_lf_step")]
    pub lf_step: f64,
    #[serde(default = "d_tie")]
    pub lp_tie_tolerance: f64,
    #[serde(default = "d_budget_change")]
    pub retrigger_budget_change: f64,
    #[serde(default = "d_rate_change")]
    pub retrigger_rate_change: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    /// `s2sprobe`, `t2tprobe` or `loganalytics`.
    pub kind: String,
    /// `jarvis`, `best-op`, `lb-dp`, `all-src`, `all-sp` or `filter-src`.
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Base input rate; defaults to the workload's reference rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_mbps: Option<f64>,
    #[serde(default = "d_one_f64")]
    pub rate_scale: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rate_scale_steps: Vec<ScaleStep>,
    #[serde(default = "d_entries")]
    pub table_entries: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table_entries_steps: Vec<EntriesStep>,
    /// Queue unprocessed records across epochs instead of draining them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carryover: Option<bool>,
    /// Overrides `link.per_query_mbps` for this query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_mbps: Option<f64>,
    /// Pingmesh generator: share of probes carrying an error code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_count: Option<u32>,
    /// Log generator: tenants and share of lines with a job statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tenant_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_hit_rate: Option<f64>,
}

fn d_epochs() -> u64 {
    300
}
fn d_warmup() -> u64 {
    180
}
fn d_epoch_ms() -> u64 {
    1_000
}
fn d_slices() -> u32 {
    20
}
fn d_one_u32() -> u32 {
    1
}
fn d_one_f64() -> f64 {
    1.0
}
fn d_latency() -> f64 {
    5.0
}
fn d_horizon() -> f64 {
    2.5
}
fn d_sp_cores() -> f64 {
    64.0
}
fn d_true() -> bool {
    true
}
fn d_link() -> f64 {
    QueryConfig::DEFAULT_LINK_MBPS
}
fn d_cores() -> f64 {
    0.8
}
fn d_drained() -> f64 {
    ExperimentConfig::default().drained_thres
}
fn d_idle() -> f64 {
    ExperimentConfig::default().idle_thres
}
fn d_max_adapt() -> u32 {
    AdaptConfig::default().max_adapt_epochs
}
fn d_lf_step() -> f64 {
    AdaptConfig::default().lf_step
}
fn d_tie() -> f64 {
    AdaptConfig::default().lp_tie_tolerance
}
fn d_budget_change() -> f64 {
    AdaptConfig::default().retrigger_budget_change
}
fn d_rate_change() -> f64 {
    AdaptConfig::default().retrigger_rate_change
}
fn d_entries() -> usize {
    DEFAULT_TOR_ENTRIES
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            sources: 1,
            sp_cores: d_sp_cores(),
            sp_share_cores: None,
            sp_ingress_mbps: None,
            sp_execute: true,
        }
    }
}

impl Default for LinkSection {
    fn default() -> Self {
        LinkSection { per_query_mbps: d_link() }
    }
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection {
            cores: d_cores(),
            steps: Vec::new(),
        }
    }
}

impl Default for ProxySection {
    fn default() -> Self {
        ProxySection {
            drained_thres: d_drained(),
            idle_thres: d_idle(),
        }
    }
}

impl Default for AdaptSection {
    fn default() -> Self {
        AdaptSection::from(&AdaptConfig::default())
    }
}

impl From<&AdaptConfig> for AdaptSection {
    fn from(a: &AdaptConfig) -> Self {
        AdaptSection {
            lp_init: a.lp_init,
            fine_tune: a.fine_tune,
            max_adapt_epochs: a.max_adapt_epochs,
            lf_step: a.lf_step,
            lp_tie_tolerance: a.lp_tie_tolerance,
            retrigger_budget_change: a.retrigger_budget_change,
            retrigger_rate_change: a.retrigger_rate_change,
        }
    }
}

impl AdaptSection {
    fn to_core(&self) -> AdaptConfig {
        AdaptConfig {
            lp_init: self.lp_init,
            fine_tune: self.fine_tune,
            max_adapt_epochs: self.max_adapt_epochs,
            lf_step: self.lf_step,
            lp_tie_tolerance: self.lp_tie_tolerance,
            retrigger_budget_change: self.retrigger_budget_change,
            retrigger_rate_change: self.retrigger_rate_change,
        }
    }
}

impl QuerySection {
    pub fn new(kind: QueryKind, policy: PolicyKind) -> Self {
        QuerySection {
            kind: kind.name().into(),
            policy: policy.name().into(),
            seed: None,
            rate_mbps: None,
            rate_scale: 1.0,
            rate_scale_steps: Vec::new(),
            table_entries: DEFAULT_TOR_ENTRIES,
            table_entries_steps: Vec::new(),
            carryover: None,
            link_mbps: None,
            error_rate: None,
            peer_count: None,
            tenant_count: None,
            pattern_hit_rate: None,
        }
    }

    pub fn query_kind(&self) -> Result<QueryKind, ConfigError> {
        QueryKind::parse(&self.kind).ok_or_else(|| ConfigError::Invalid(format!("unknown query kind `{}`", self.kind)))
    }

    pub fn policy_kind(&self) -> Result<PolicyKind, ConfigError> {
        parse_policy(&self.policy)
    }
}

pub fn parse_policy(name: &str) -> Result<PolicyKind, ConfigError> {
    PolicyKind::parse(name).ok_or_else(|| ConfigError::Invalid(format!("unknown policy `{name}`")))
}

fn schedule<T: Copy>(first: T, steps: impl Iterator<Item = (u64, T)>, what: &str) -> Result<Schedule<T>, ConfigError> {
    let all: Vec<(u64, T)> = std::iter::once((0, first)).chain(steps).collect();
    Schedule::new(all).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}

impl SimConfig {
    /// A one-source, one-query experiment with default settings.
    pub fn single(kind: QueryKind, policy: PolicyKind, cores: f64, seed: u64) -> Self {
        SimConfig {
            run: RunSection {
                seed,
                epochs: d_epochs(),
                warmup_epochs: d_warmup(),
                epoch_ms: d_epoch_ms(),
                slices_per_epoch: d_slices(),
                record_weight: 1,
                latency_bound_s: d_latency(),
                admission_horizon_s: d_horizon(),
                require_convergence: false,
            },
            topology: TopologySection::default(),
            link: LinkSection::default(),
            budget: BudgetSection {
                cores,
                steps: Vec::new(),
            },
            proxy: ProxySection::default(),
            adapt: AdaptSection::default(),
            cost_cpu_s: BTreeMap::new(),
            output: OutputSection::default(),
            queries: vec![QuerySection::new(kind, policy)],
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.to_experiment()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.display().to_string(), e.to_string()))?;
        Self::parse(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Builds and validates the simulator configuration.
    pub fn to_experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        if self.queries.is_empty() {
            return Err(ConfigError::Invalid("at least one [[query]] is required".into()));
        }
        let mut cost = CostModel::default();
        for (name, v) in &self.cost_cpu_s {
            if !cost.set(name, *v) {
                return Err(ConfigError::Invalid(format!(
                    "unknown cost parameter `{name}` (known: {})",
                    CostModel::NAMES.join(", ")
                )));
            }
        }
        let adapt = self.adapt.to_core();
        let queries = self
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| self.query_config(i, q, adapt))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = ExperimentConfig {
            n_sources: self.topology.sources,
            epochs: self.run.epochs,
            warmup: self.run.warmup_epochs,
            epoch_ms: self.run.epoch_ms,
            slices: self.run.slices_per_epoch,
            cpu_cores: schedule(
                self.budget.cores,
                self.budget.steps.iter().map(|s| (s.at_epoch, s.cores)),
                "budget.steps",
            )?,
            queries,
            sp_cores: self.topology.sp_cores,
            sp_share: self.topology.sp_share_cores,
            sp_ingress_mbps: self.topology.sp_ingress_mbps,
            cost,
            record_weight: self.run.record_weight,
            latency_bound_s: self.run.latency_bound_s,
            admission_horizon_s: self.run.admission_horizon_s,
            drained_thres: self.proxy.drained_thres,
            idle_thres: self.proxy.idle_thres,
            sp_execute: self.topology.sp_execute,
            collect_outputs: false,
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    fn query_config(&self, i: usize, q: &QuerySection, adapt: AdaptConfig) -> Result<QueryConfig, ConfigError> {
        let kind = q.query_kind()?;
        let policy = q.policy_kind()?;
        let seed = q.seed.unwrap_or(self.run.seed.wrapping_add(i as u64));
        let mut qc = QueryConfig::new(kind, policy, seed);
        let bad = |m: &str| Err(ConfigError::Invalid(format!("query {i}: {m}")));
        match &mut qc.workload {
            WorkloadGen::Pingmesh(g) => {
                if q.tenant_count.is_some() || q.pattern_hit_rate.is_some() {
                    return bad("tenant_count and pattern_hit_rate apply to loganalytics only");
                }
                if let Some(e) = q.error_rate {
                    if !(0.0..=1.0).contains(&e) {
                        return bad("error_rate must lie in [0, 1]");
                    }
                    g.error_rate = e;
                }
                if let Some(p) = q.peer_count {
                    g.peer_count = p;
                }
            }
            WorkloadGen::Log(g) => {
                if q.error_rate.is_some() || q.peer_count.is_some() {
                    return bad("error_rate and peer_count apply to probe queries only");
                }
                if let Some(t) = q.tenant_count {
                    g.tenant_count = t;
                }
                if let Some(h) = q.pattern_hit_rate {
                    if !(0.0..=1.0).contains(&h) {
                        return bad("pattern_hit_rate must lie in [0, 1]");
                    }
                    g.pattern_hit_rate = h;
                }
            }
        }
        if let Some(r) = q.rate_mbps {
            if !(r >= 0.0 && r.is_finite()) {
                return bad("rate_mbps must be finite and non-negative");
            }
            qc.workload.set_rate_mbps(r);
        }
        qc.rate_scale = schedule(
            q.rate_scale,
            q.rate_scale_steps.iter().map(|s| (s.at_epoch, s.scale)),
            "rate_scale_steps",
        )?;
        qc.table_entries = schedule(
            q.table_entries,
            q.table_entries_steps.iter().map(|s| (s.at_epoch, s.entries)),
            "table_entries_steps",
        )?;
        qc.adapt = adapt;
        qc.carryover = q.carryover;
        qc.link_mbps = q.link_mbps.unwrap_or(self.link.per_query_mbps);
        Ok(qc)
    }

    /// Epochs at which some schedule changes, plus epoch 0.
    pub fn change_epochs(&self) -> Vec<u64> {
        let mut out: Vec<u64> = std::iter::once(0)
            .chain(self.budget.steps.iter().map(|s| s.at_epoch))
            .chain(self.queries.iter().flat_map(|q| {
                q.rate_scale_steps
                    .iter()
                    .map(|s| s.at_epoch)
                    .chain(q.table_entries_steps.iter().map(|s| s.at_epoch))
            }))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[run]
seed = 7

[[query]]
kind = "s2sprobe"
policy = "jarvis"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = SimConfig::parse(MINIMAL).unwrap();
        let exp = cfg.to_experiment().unwrap();
        assert_eq!(exp.epochs, 300);
        assert_eq!(exp.warmup, 180);
        assert_eq!(exp.cpu_cores.at(0), 0.8);
        assert_eq!(exp.queries[0].link_mbps, 20.48);
        assert_eq!(exp.queries[0].workload.seed(), 7);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("seed = 7", "epochs = 10");
        assert!(matches!(SimConfig::parse(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn unknown_keys_and_names_are_rejected() {
        let typo = MINIMAL.replace("seed = 7", "seed = 7\nepoch = 3");
        let err = SimConfig::parse(&typo).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        let policy = MINIMAL.replace("jarvis", "oracle");
        assert!(matches!(SimConfig::parse(&policy), Err(ConfigError::Invalid(_))));
        let cost = format!("{MINIMAL}\n[cost_cpu_s]\nfilter = 1e-6\n");
        assert!(matches!(SimConfig::parse(&cost), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn steps_must_fit_the_run() {
        let text = format!("{MINIMAL}\n[budget]\ncores = 0.1\nsteps = [{{ at_epoch = 400, cores = 0.9 }}]\n");
        assert!(matches!(SimConfig::parse(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn round_trip() {
        let mut cfg = SimConfig::single(QueryKind::T2TProbe, PolicyKind::LBDP, 0.4, 3);
        cfg.budget.steps.push(CoresStep { at_epoch: 60, cores: 0.9 });
        cfg.queries[0].table_entries_steps.push(EntriesStep {
            at_epoch: 90,
            entries: 5_000,
        });
        cfg.queries[0].link_mbps = Some(f64::INFINITY);
        cfg.topology.sp_ingress_mbps = Some(460.0);
        cfg.cost_cpu_s.insert("join_base".into(), 4e-6);
        cfg.output.csv = Some("out.csv".into());
        let text = cfg.to_toml();
        let back = SimConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.change_epochs(), [0, 60, 90]);
    }
}

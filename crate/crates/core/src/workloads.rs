//! Parameter-calibrated synthetic workloads and the reference queries.
//!
//! Generators are counter-based: record `k` of a (node, query) stream is a
//! pure function of the seed and `k`, so any slice of the stream can be
//! regenerated without replaying what came before.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::operators::{Payload, Probe, Record, StatName, TorTable, IP_BASE, PROBE_WIRE_BYTES};
use crate::query::{Aggregate, Field, OperatorSpec, Predicate, QueryPlan, RuleConfig, Transform};

/// Mbps produced by one probing server (20K probes every 5 s, 10× scaled).
pub const MBPS_PER_SERVER: f64 = 2.62;
/// Servers covered by the synthetic address space and the ToR table.
pub const IP_SPACE: u32 = 1 << 17;
/// Every generated log line is padded to this many bytes.
pub const LOG_LINE_BYTES: usize = 80;
pub const WINDOW_MS: u64 = 10_000;
pub const TOR_TABLE: &str = "ip_to_tor";
pub const DEFAULT_TOR_ENTRIES: usize = 500;

/// A temporary latency spike: a share of the probes gains extra delay.
#[derive(Clone, Debug, PartialEq)]
pub struct RttSpike {
    pub start_ms: u64,
    pub duration_ms: u64,
    pub extra_us: u32,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PingmeshGenConfig {
    pub rate_mbps: f64,
    /// Fraction of probes with a nonzero error code.
    pub error_rate: f64,
    pub peer_count: u32,
    pub rtt_base_us: u32,
    /// Scale of the heavy tail added on top of the base latency.
    pub rtt_tail_us: u32,
    pub spikes: Vec<RttSpike>,
    pub seed: u64,
}

impl Default for PingmeshGenConfig {
    fn default() -> Self {
        PingmeshGenConfig {
            rate_mbps: 26.2,
            error_rate: 0.14,
            peer_count: 20_000,
            rtt_base_us: 200,
            rtt_tail_us: 2_000,
            spikes: Vec::new(),
            seed: 1,
        }
    }
}

impl PingmeshGenConfig {
    /// Probing servers one node stands for at its rate.
    pub fn virtual_sources(&self) -> u32 {
        libm::round(self.rate_mbps / MBPS_PER_SERVER).max(1.0) as u32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogGenConfig {
    pub rate_mbps: f64,
    pub tenant_count: u32,
    /// Fraction of lines that carry a job statistic.
    pub pattern_hit_rate: f64,
    pub seed: u64,
}

impl Default for LogGenConfig {
    fn default() -> Self {
        LogGenConfig {
            rate_mbps: 49.6,
            tenant_count: 64,
            pattern_hit_rate: 0.85,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadGen {
    Pingmesh(PingmeshGenConfig),
    Log(LogGenConfig),
}

/// Identifies one generated stream and how its records are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenStream {
    pub node: u32,
    pub query: u32,
    pub epoch_ms: u64,
    pub window_ms: u64,
    /// Real records each generated record stands for.
    pub weight: u32,
}

impl GenStream {
    pub fn new(node: u32, query: u32) -> Self {
        GenStream {
            node,
            query,
            epoch_ms: 1_000,
            window_ms: WINDOW_MS,
            weight: 1,
        }
    }

    fn rng(&self, seed: u64, first: u64, words: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((u64::from(self.node) << 16) | u64::from(self.query));
        rng.set_word_pos(u128::from(first) * u128::from(words));
        rng
    }
}

const PROBE_WORDS: u64 = 4;
const LINE_WORDS: u64 = 4;

fn unit(x: u32) -> f64 {
    f64::from(x) / 4_294_967_296.0
}

impl WorkloadGen {
    pub fn rate_mbps(&self) -> f64 {
        match self {
            WorkloadGen::Pingmesh(c) => c.rate_mbps,
            WorkloadGen::Log(c) => c.rate_mbps,
        }
    }

    pub fn set_rate_mbps(&mut self, rate: f64) {
        match self {
            WorkloadGen::Pingmesh(c) => c.rate_mbps = rate,
            WorkloadGen::Log(c) => c.rate_mbps = rate,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            WorkloadGen::Pingmesh(c) => c.seed,
            WorkloadGen::Log(c) => c.seed,
        }
    }

    pub fn record_bytes(&self) -> u32 {
        match self {
            WorkloadGen::Pingmesh(_) => PROBE_WIRE_BYTES,
            WorkloadGen::Log(_) => LOG_LINE_BYTES as u32,
        }
    }

    /// Real records per second at the configured rate.
    pub fn records_per_s(&self) -> f64 {
        self.rate_mbps().max(0.0) * 1e6 / (8.0 * f64::from(self.record_bytes()))
    }

    /// Generated records offered during `epoch`; fractional records carry
    /// over so the long-run rate is exact.
    pub fn offered(&self, stream: &GenStream, epoch: u64) -> u64 {
        let per_epoch = self.records_per_s() * stream.epoch_ms as f64 / 1e3 / f64::from(stream.weight.max(1));
        let at = |e: u64| libm::floor(per_epoch * e as f64 + 1e-9) as u64;
        at(epoch + 1) - at(epoch)
    }

    /// Records `first..first + n` of the stream, spread evenly over `epoch`.
    pub fn batch(&self, stream: &GenStream, epoch: u64, first: u64, n: u64) -> Vec<Record> {
        let start = epoch * stream.epoch_ms;
        let time = |i: u64| start + i * stream.epoch_ms / n.max(1);
        match self {
            WorkloadGen::Pingmesh(c) => {
                let mut rng = stream.rng(c.seed, first, PROBE_WORDS);
                let sources = c.virtual_sources();
                let peers = (c.peer_count / stream.weight.max(1)).max(1);
                (0..n)
                    .map(|i| {
                        let t = time(i);
                        let p = probe(c, stream.node, sources, peers, first + i, t, &mut rng);
                        Record::new(t, stream.window_ms, Payload::Probe(p))
                    })
                    .collect()
            }
            WorkloadGen::Log(c) => {
                let mut rng = stream.rng(c.seed, first, LINE_WORDS);
                (0..n)
                    .map(|i| {
                        let t = time(i);
                        Record::new(t, stream.window_ms, Payload::Line(log_line(c, t, &mut rng).into_boxed_str()))
                    })
                    .collect()
            }
        }
    }
}

fn probe(
    c: &PingmeshGenConfig,
    node: u32,
    sources: u32,
    peers: u32,
    k: u64,
    t: u64,
    rng: &mut ChaCha8Rng,
) -> Probe {
    let (u_err, u_tail, u_spike, u_code) = (rng.next_u32(), rng.next_u32(), rng.next_u32(), rng.next_u32());
    let pair = k % (u64::from(sources) * u64::from(peers));
    let v = (pair / u64::from(peers)) as u32;
    let peer = (pair % u64::from(peers)) as u32;
    let src = (node.wrapping_mul(sources).wrapping_add(v)) % IP_SPACE;
    // Peers are spread over the address space so that joins see every ToR.
    let dst = (src + 1 + peer.wrapping_mul(6_553)) % IP_SPACE;
    let tail = unit(u_tail);
    let mut rtt = c.rtt_base_us + (tail * tail * tail * f64::from(c.rtt_tail_us)) as u32;
    for s in &c.spikes {
        if t >= s.start_ms && t < s.start_ms + s.duration_ms && unit(u_spike) < s.fraction {
            rtt += s.extra_us;
        }
    }
    let err_code = if unit(u_err) < c.error_rate { 1 + u_code % 4 } else { 0 };
    Probe {
        src_ip: IP_BASE + src,
        src_cluster: src / 1_000,
        dst_ip: IP_BASE + dst,
        dst_cluster: dst / 1_000,
        rtt_us: rtt,
        err_code,
        src_tor: None,
        dst_tor: None,
    }
}

fn stat_label(s: StatName) -> &'static str {
    match s {
        StatName::JobRunningTime => "Job Running Time",
        StatName::CpuUtil => "CPU Util",
        StatName::MemoryUtil => "Memory Util",
    }
}

/// Hit lines look like
/// `  INFO 1234 [jobmon] Tenant Name=tenant-017 | CPU Util=57`, misses are
/// scheduler heartbeats; both are space-padded to [`LOG_LINE_BYTES`].
fn log_line(c: &LogGenConfig, t: u64, rng: &mut ChaCha8Rng) -> String {
    let (u_hit, u_tenant, u_stat, u_value) = (rng.next_u32(), rng.next_u32(), rng.next_u32(), rng.next_u32());
    let ts = t % 1_000_000_000;
    let mut line = if unit(u_hit) < c.pattern_hit_rate {
        let stat = StatName::ALL[(u_stat % 3) as usize];
        let value = match stat {
            StatName::JobRunningTime => u_value % 600,
            _ => u_value % 101,
        };
        format!(
            "  INFO {ts} [jobmon] Tenant Name=tenant-{:03} | {}={value}",
            u_tenant % c.tenant_count.max(1),
            stat_label(stat)
        )
    } else {
        format!("  DEBUG {ts} [scheduler] heartbeat ok queue={}", u_value % 64)
    };
    while line.len() < LOG_LINE_BYTES {
        line.push(' ');
    }
    line
}

/// One offered epoch of probes from node 0 with default stream layout.
pub fn gen_pingmesh(cfg: &PingmeshGenConfig, epoch: u64) -> Vec<Record> {
    let g = WorkloadGen::Pingmesh(cfg.clone());
    let s = GenStream::new(0, 0);
    let first = (0..epoch).map(|e| g.offered(&s, e)).sum();
    g.batch(&s, epoch, first, g.offered(&s, epoch))
}

/// Contiguous IP blocks per ToR over the synthetic address space.
pub fn tor_table(entries: usize) -> TorTable {
    TorTable::contiguous(IP_BASE, IP_SPACE, entries)
}

pub fn build_s2sprobe() -> QueryPlan {
    QueryPlan::new(
        "s2sprobe",
        vec![
            OperatorSpec::filter(1, Predicate::ErrCodeZero),
            OperatorSpec::group(2, &[Field::SrcIp, Field::DstIp], &[Aggregate::Avg, Aggregate::Max, Aggregate::Min]),
        ],
        WINDOW_MS,
        &[],
        &RuleConfig::default(),
    )
    .expect("reference plan is valid")
}

/// ToR-to-ToR probing; the plan references [`TOR_TABLE`], which callers
/// resolve to a table such as [`tor_table`].
pub fn build_t2tprobe() -> QueryPlan {
    QueryPlan::new(
        "t2tprobe",
        vec![
            OperatorSpec::filter(1, Predicate::ErrCodeZero),
            OperatorSpec::join_static(2, TOR_TABLE, Field::SrcIp, Field::SrcTor),
            OperatorSpec::join_static(3, TOR_TABLE, Field::DstIp, Field::DstTor),
            OperatorSpec::project(4, &[Field::SrcTor, Field::DstTor, Field::Rtt]),
            OperatorSpec::group(5, &[Field::SrcTor, Field::DstTor], &[Aggregate::Avg, Aggregate::Max, Aggregate::Min]),
        ],
        WINDOW_MS,
        &[TOR_TABLE],
        &RuleConfig::default(),
    )
    .expect("reference plan is valid")
}

pub fn build_loganalytics() -> QueryPlan {
    QueryPlan::new(
        "loganalytics",
        vec![
            OperatorSpec::map(1, Transform::Normalize),
            OperatorSpec::filter(2, Predicate::JobStatsPatterns),
            OperatorSpec::map(3, Transform::ParseJobStats),
            OperatorSpec::map(
                4,
                Transform::WidthBucket {
                    low: 0,
                    high: 100,
                    count: 10,
                },
            ),
            OperatorSpec::group(5, &[Field::Tenant, Field::StatName, Field::Stat], &[Aggregate::Count]),
        ],
        WINDOW_MS,
        &[],
        &RuleConfig::default(),
    )
    .expect("reference plan is valid")
}

/// The three reference queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QueryKind {
    S2SProbe,
    T2TProbe,
    LogAnalytics,
}

impl QueryKind {
    pub const ALL: [QueryKind; 3] = [QueryKind::S2SProbe, QueryKind::T2TProbe, QueryKind::LogAnalytics];

    pub fn name(self) -> &'static str {
        match self {
            QueryKind::S2SProbe => "s2sprobe",
            QueryKind::T2TProbe => "t2tprobe",
            QueryKind::LogAnalytics => "loganalytics",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn plan(self) -> QueryPlan {
        match self {
            QueryKind::S2SProbe => build_s2sprobe(),
            QueryKind::T2TProbe => build_t2tprobe(),
            QueryKind::LogAnalytics => build_loganalytics(),
        }
    }

    /// Default generator for the query's input.
    pub fn workload(self, seed: u64) -> WorkloadGen {
        match self {
            QueryKind::S2SProbe | QueryKind::T2TProbe => WorkloadGen::Pingmesh(PingmeshGenConfig {
                seed,
                ..PingmeshGenConfig::default()
            }),
            QueryKind::LogAnalytics => WorkloadGen::Log(LogGenConfig {
                seed,
                ..LogGenConfig::default()
            }),
        }
    }
}

/// Resolves the static tables of the reference queries.
pub fn table_resolver(entries: usize) -> impl Fn(&str) -> Option<Arc<TorTable>> {
    let table = Arc::new(tor_table(entries));
    move |name: &str| (name == TOR_TABLE).then(|| table.clone())
}

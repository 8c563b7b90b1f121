//! Control proxies: deterministic fractional routing between the local
//! downstream operator and the drain path, plus per-epoch congestion evidence.

use alloc::vec::Vec;

use thiserror::Error;

use crate::operators::{DrainedRecord, Record};
use crate::query::OperatorId;

/// Fixed-point scale of the routing accumulator.
const SCALE: u64 = 1_000_000_000;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ProxyError {
    #[error("watermark {got} does not advance past {prev}")]
    NonMonotoneWatermark { prev: u64, got: u64 },
    #[error("load factor {0} is outside [0, 1]")]
    InvalidLoadFactor(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxyConfig {
    pub load_factor: f64,
    /// Fraction of arrivals that may be flushed by backpressure before the
    /// proxy reports congestion.
    pub drained_thres: f64,
    /// Fraction of the epoch the operator may sit idle before the proxy
    /// reports idleness.
    pub idle_thres: f64,
    /// Stream-processor operator that receives drained records.
    pub target: OperatorId,
}

impl ProxyConfig {
    pub const DEFAULT_DRAINED_THRES: f64 = 0.05;
    pub const DEFAULT_IDLE_THRES: f64 = 0.20;

    pub fn new(target: OperatorId) -> Self {
        ProxyConfig {
            load_factor: 0.0,
            drained_thres: Self::DEFAULT_DRAINED_THRES,
            idle_thres: Self::DEFAULT_IDLE_THRES,
            target,
        }
    }

    pub fn set_load_factor(&mut self, p: f64) -> Result<(), ProxyError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ProxyError::InvalidLoadFactor(p));
        }
        self.load_factor = p;
        Ok(())
    }
}

/// Congestion evidence gathered by one proxy during one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProxyStats {
    pub arrived: u64,
    pub forwarded: u64,
    pub drained_by_policy: u64,
    pub drained_backpressure: u64,
    /// Seconds the downstream operator had nothing to do.
    pub idle_time: f64,
    pub pending_peak: u64,
}

impl ProxyStats {
    /// Records still queued at the operator (before the epoch-end flush).
    pub fn pending(&self) -> u64 {
        self.arrived - self.forwarded - self.drained_by_policy - self.drained_backpressure
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProxyVerdict {
    Congested,
    Idle,
    Stable,
}

/// Error accumulator for deterministic fractional routing, in `[0, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoutingCarry(u64);

impl RoutingCarry {
    pub fn value(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    /// Decides the next record: true to forward, false to drain.
    #[inline]
    pub fn step(&mut self, p_units: u64) -> bool {
        self.0 += p_units;
        if self.0 >= SCALE {
            self.0 -= SCALE;
            true
        } else {
            false
        }
    }

    /// Number of the next `n` records that would be forwarded.
    pub fn advance(&mut self, p_units: u64, n: u64) -> u64 {
        let total = u128::from(self.0) + u128::from(p_units) * u128::from(n);
        self.0 = (total % u128::from(SCALE)) as u64;
        (total / u128::from(SCALE)) as u64
    }
}

/// Load factor in accumulator units.
pub fn load_units(p: f64) -> u64 {
    libm::round(p.clamp(0.0, 1.0) * SCALE as f64) as u64
}

/// Splits `batch` into records forwarded to the local operator and records
/// drained to the stream processor, tagged with `cfg.target`.
pub fn route(
    batch: Vec<Record>,
    cfg: &ProxyConfig,
    carry: &mut RoutingCarry,
) -> (Vec<Record>, Vec<DrainedRecord>) {
    let units = load_units(cfg.load_factor);
    let mut forward = Vec::with_capacity(batch.len());
    let mut drain = Vec::new();
    for record in batch {
        if carry.step(units) {
            forward.push(record);
        } else {
            drain.push(DrainedRecord {
                target: cfg.target,
                record,
            });
        }
    }
    (forward, drain)
}

/// Drains everything the downstream operator left unprocessed.
pub fn flush_backpressure(pending: Vec<Record>, target: OperatorId) -> Vec<DrainedRecord> {
    pending
        .into_iter()
        .map(|record| DrainedRecord { target, record })
        .collect()
}

/// Verdict for one proxy after an epoch. Only backpressure drains count as
/// congestion evidence; policy drains are the intended plan.
pub fn classify(stats: &ProxyStats, cfg: &ProxyConfig, epoch_duration: f64) -> ProxyVerdict {
    if stats.arrived == 0 {
        return ProxyVerdict::Idle;
    }
    let drained = stats.drained_backpressure as f64 / stats.arrived as f64;
    if drained > cfg.drained_thres {
        ProxyVerdict::Congested
    } else if epoch_duration > 0.0 && stats.idle_time / epoch_duration > cfg.idle_thres {
        ProxyVerdict::Idle
    } else {
        ProxyVerdict::Stable
    }
}

/// Event-time progress marker, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Watermark(pub u64);

/// Copies watermarks onto both the forward and the drain path so that the
/// stream processor sees time advance even when nothing is drained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WatermarkReplicator {
    last: Option<u64>,
}

impl WatermarkReplicator {
    pub fn replicate(&mut self, wm: Watermark) -> Result<(Watermark, Watermark), ProxyError> {
        if let Some(prev) = self.last {
            if wm.0 <= prev {
                return Err(ProxyError::NonMonotoneWatermark { prev, got: wm.0 });
            }
        }
        self.last = Some(wm.0);
        Ok((wm, wm))
    }

    pub fn last(&self) -> Option<Watermark> {
        self.last.map(Watermark)
    }
}

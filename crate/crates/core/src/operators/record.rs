use alloc::boxed::Box;

use crate::query::Field;

/// Bytes of a serialized Pingmesh probe: timestamp, two IPs, two cluster ids,
/// round-trip time and error code.
pub const PROBE_WIRE_BYTES: u32 = 86;
/// Bytes added per ToR id attached by a static join.
pub const JOINED_FIELD_BYTES: u32 = 4;
/// Operator-id tag carried by every record sent over the drain path.
pub const DRAIN_TAG_BYTES: u32 = 2;
const TIMESTAMP_BYTES: u32 = 8;
const FIELD_BYTES: u32 = 4;

/// Base of the simulated datacenter IPv4 range (10.0.0.0).
pub const IP_BASE: u32 = 0x0A00_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub src_ip: u32,
    pub src_cluster: u32,
    pub dst_ip: u32,
    pub dst_cluster: u32,
    pub rtt_us: u32,
    pub err_code: u32,
    pub src_tor: Option<u32>,
    pub dst_tor: Option<u32>,
}

impl Probe {
    pub fn field(&self, field: Field) -> Option<u32> {
        match field {
            Field::SrcIp => Some(self.src_ip),
            Field::DstIp => Some(self.dst_ip),
            Field::SrcTor => self.src_tor,
            Field::DstTor => self.dst_tor,
            Field::Rtt => Some(self.rtt_us),
            Field::Tenant | Field::StatName | Field::Stat => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum StatName {
    JobRunningTime = 0,
    CpuUtil = 1,
    MemoryUtil = 2,
}

impl StatName {
    pub const ALL: [StatName; 3] = [StatName::JobRunningTime, StatName::CpuUtil, StatName::MemoryUtil];

    /// Spelling used in log lines after normalization.
    pub fn pattern(self) -> &'static str {
        match self {
            StatName::JobRunningTime => "job running time",
            StatName::CpuUtil => "cpu util",
            StatName::MemoryUtil => "memory util",
        }
    }

    pub fn from_pattern(s: &str) -> Option<Self> {
        StatName::ALL.into_iter().find(|n| n.pattern() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobStats {
    pub tenant: u32,
    pub stat_name: StatName,
    pub stat: u32,
}

/// Up to four projected integer fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tuple {
    fields: [(Field, u32); 4],
    len: u8,
}

impl Tuple {
    pub const CAPACITY: usize = 4;

    pub fn new() -> Self {
        Tuple {
            fields: [(Field::SrcIp, 0); 4],
            len: 0,
        }
    }

    /// Appends a field; returns false when the tuple is full.
    pub fn push(&mut self, field: Field, value: u32) -> bool {
        if usize::from(self.len) == Self::CAPACITY {
            return false;
        }
        self.fields[usize::from(self.len)] = (field, value);
        self.len += 1;
        true
    }

    pub fn get(&self, field: Field) -> Option<u32> {
        self.fields[..usize::from(self.len)]
            .iter()
            .find(|(f, _)| *f == field)
            .map(|&(_, v)| v)
    }

    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Default for Tuple {
    fn default() -> Self {
        Self::new()
    }
}

/// Group key of up to three integer fields; unused slots are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupKey(pub [u32; 3]);

/// Mergeable per-group aggregate state. `count == 0` is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PartialAggregate {
    pub window_id: u64,
    pub key: GroupKey,
    pub key_len: u8,
    /// Whether sum/max/min are tracked (false for count-only aggregates).
    pub has_value: bool,
    pub count: u64,
    pub sum: u64,
    pub max: u32,
    pub min: u32,
}

impl PartialAggregate {
    pub fn empty(window_id: u64, key: GroupKey, key_len: u8, has_value: bool) -> Self {
        PartialAggregate {
            window_id,
            key,
            key_len,
            has_value,
            count: 0,
            sum: 0,
            max: 0,
            min: 0,
        }
    }

    pub fn add(&mut self, value: u32) {
        if self.count == 0 {
            self.max = value;
            self.min = value;
        } else {
            self.max = self.max.max(value);
            self.min = self.min.min(value);
        }
        self.count += 1;
        self.sum += u64::from(value);
    }

    pub fn add_count(&mut self) {
        self.count += 1;
    }

    /// Integer average in microseconds, rounded down.
    pub fn avg(&self) -> Option<u64> {
        (self.has_value && self.count > 0).then(|| self.sum / self.count)
    }

    pub fn wire_size(&self) -> u32 {
        let value = if self.has_value { 8 + 4 + 4 } else { 0 };
        TIMESTAMP_BYTES + FIELD_BYTES * u32::from(self.key_len) + 4 + value
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Probe(Probe),
    Tuple(Tuple),
    Line(Box<str>),
    Stats(JobStats),
    Partial(PartialAggregate),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub event_time_ms: u64,
    pub window_id: u64,
    pub payload: Payload,
}

impl Record {
    pub fn new(event_time_ms: u64, window_ms: u64, payload: Payload) -> Self {
        Record {
            event_time_ms,
            window_id: event_time_ms / window_ms.max(1),
            payload,
        }
    }

    pub fn wire_size(&self) -> u32 {
        match &self.payload {
            Payload::Probe(p) => {
                PROBE_WIRE_BYTES
                    + JOINED_FIELD_BYTES * (u32::from(p.src_tor.is_some()) + u32::from(p.dst_tor.is_some()))
            }
            Payload::Tuple(t) => TIMESTAMP_BYTES + FIELD_BYTES * t.len() as u32,
            Payload::Line(l) => l.len() as u32,
            Payload::Stats(_) => TIMESTAMP_BYTES + 3 * FIELD_BYTES,
            Payload::Partial(p) => p.wire_size(),
        }
    }

    /// Value of `field`, if the payload carries it.
    pub fn field(&self, field: Field) -> Option<u32> {
        match &self.payload {
            Payload::Probe(p) => p.field(field),
            Payload::Tuple(t) => t.get(field),
            Payload::Stats(s) => match field {
                Field::Tenant => Some(s.tenant),
                Field::StatName => Some(s.stat_name as u32),
                Field::Stat => Some(s.stat),
                _ => None,
            },
            Payload::Line(_) | Payload::Partial(_) => None,
        }
    }
}

/// A record on the drain path, tagged with the stream-processor operator
/// that must receive it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrainedRecord {
    pub target: u16,
    pub record: Record,
}

impl DrainedRecord {
    pub fn wire_size(&self) -> u32 {
        self.record.wire_size() + DRAIN_TAG_BYTES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> Probe {
        Probe {
            src_ip: IP_BASE,
            src_cluster: 1,
            dst_ip: IP_BASE + 7,
            dst_cluster: 2,
            rtt_us: 350,
            err_code: 0,
            src_tor: None,
            dst_tor: None,
        }
    }

    #[test]
    fn probe_is_86_bytes_and_grows_with_joins() {
        let mut r = Record::new(1_500, 10_000, Payload::Probe(probe()));
        assert_eq!(r.window_id, 0);
        assert_eq!(r.wire_size(), 86);
        if let Payload::Probe(p) = &mut r.payload {
            p.src_tor = Some(3);
        }
        assert_eq!(r.wire_size(), 90);
    }

    #[test]
    fn log_line_size_is_its_length() {
        let r = Record::new(0, 10_000, Payload::Line("cpu util=5".into()));
        assert_eq!(r.wire_size(), 10);
    }

    #[test]
    fn tuple_caps_at_four_fields() {
        let mut t = Tuple::new();
        for f in [Field::SrcTor, Field::DstTor, Field::Rtt, Field::SrcIp] {
            assert!(t.push(f, 1));
        }
        assert!(!t.push(Field::DstIp, 1));
        assert_eq!(t.get(Field::Rtt), Some(1));
        assert_eq!(t.get(Field::DstIp), None);
    }
}

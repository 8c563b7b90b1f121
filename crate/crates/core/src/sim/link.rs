//! Bandwidth-capped FIFO links between a data source and the stream
//! processor.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::operators::DrainedRecord;

#[derive(Clone, Debug, PartialEq)]
pub enum LinkItem {
    Data(DrainedRecord),
    /// Event-time progress of the sending node, in milliseconds.
    Watermark(u64),
}

/// Order-preserving queue that transmits a bit budget per epoch. Items
/// arrive whole; a partially sent head keeps its progress.
#[derive(Clone, Debug, Default)]
pub struct Link {
    queue: VecDeque<(LinkItem, u64)>,
    backlog_bits: u64,
    head_sent: u64,
    pub enqueued_bits: u64,
    pub delivered_bits: u64,
}

impl Link {
    pub fn push(&mut self, item: LinkItem, bits: u64) {
        self.backlog_bits += bits;
        self.enqueued_bits += bits;
        self.queue.push_back((item, bits));
    }

    pub fn backlog_bits(&self) -> u64 {
        self.backlog_bits
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Sends up to `budget` bits, appending completed items to `out`.
    /// Returns the bits sent.
    pub fn transmit(&mut self, budget: u64, out: &mut Vec<LinkItem>) -> u64 {
        let mut left = budget;
        while let Some((_, bits)) = self.queue.front() {
            let remaining = bits - self.head_sent;
            if remaining > left {
                self.head_sent += left;
                left = 0;
                break;
            }
            left -= remaining;
            self.head_sent = 0;
            let (item, _) = self.queue.pop_front().expect("front exists");
            out.push(item);
        }
        let sent = budget - left;
        self.backlog_bits -= sent;
        self.delivered_bits += sent;
        sent
    }

    pub fn transmit_all(&mut self, out: &mut Vec<LinkItem>) -> u64 {
        self.transmit(self.backlog_bits, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{Payload, Record};

    fn data(t: u64) -> LinkItem {
        LinkItem::Data(DrainedRecord {
            target: 1,
            record: Record::new(t, 10_000, Payload::Line("x".into())),
        })
    }

    #[test]
    fn fifo_with_partial_heads() {
        let mut l = Link::default();
        l.push(data(0), 100);
        l.push(LinkItem::Watermark(5), 0);
        l.push(data(1), 100);
        let mut out = Vec::new();
        assert_eq!(l.transmit(150, &mut out), 150);
        assert_eq!(out, [data(0), LinkItem::Watermark(5)]);
        assert_eq!(l.backlog_bits(), 50);
        out.clear();
        assert_eq!(l.transmit(1_000, &mut out), 50);
        assert_eq!(out, [data(1)]);
        assert!(l.is_empty());
        assert_eq!(l.enqueued_bits, l.delivered_bits);
    }
}

use alloc::vec::Vec;

/// Static IP → ToR-switch table built from contiguous IP blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TorTable {
    /// First IP of each block, ascending. Block `i` maps to ToR `i`.
    starts: Vec<u32>,
    end: u32,
}

impl TorTable {
    /// Splits `[base, base + ip_count)` into `entries` contiguous blocks.
    pub fn contiguous(base: u32, ip_count: u32, entries: usize) -> Self {
        let entries = entries.clamp(1, ip_count.max(1) as usize) as u64;
        let starts = (0..entries)
            .map(|i| base + (i * u64::from(ip_count) / entries) as u32)
            .collect();
        TorTable {
            starts,
            end: base + ip_count,
        }
    }

    pub fn lookup(&self, ip: u32) -> Option<u32> {
        if ip >= self.end || self.starts.first().is_none_or(|s| ip < *s) {
            return None;
        }
        let idx = self.starts.partition_point(|s| *s <= ip);
        Some((idx - 1) as u32)
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_the_range() {
        let t = TorTable::contiguous(100, 20_000, 500);
        assert_eq!(t.len(), 500);
        assert_eq!(t.lookup(100), Some(0));
        assert_eq!(t.lookup(139), Some(0));
        assert_eq!(t.lookup(140), Some(1));
        assert_eq!(t.lookup(100 + 19_999), Some(499));
        assert_eq!(t.lookup(99), None);
        assert_eq!(t.lookup(100 + 20_000), None);
    }

    #[test]
    fn more_entries_than_ips_is_clamped() {
        let t = TorTable::contiguous(0, 10, 50);
        assert_eq!(t.len(), 10);
        assert_eq!(t.lookup(9), Some(9));
    }
}

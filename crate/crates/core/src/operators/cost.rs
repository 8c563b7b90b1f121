//! Per-record compute cost accounting in cpu-seconds.
//!
//! Defaults are calibrated against the reference workloads: filtering the
//! full 26.2 Mbps Pingmesh stream takes 13% of a core, aggregating the whole
//! filter output takes 80%, and the full log-analytics pipeline at 49.6 Mbps
//! takes 31%.

/// Records per second in a 26.2 Mbps stream of 86-byte probes.
const PINGMESH_RECORDS_PER_S: f64 = 26.2e6 / (8.0 * 86.0);

#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    pub filter_err_code: f64,
    pub filter_patterns: f64,
    pub map_normalize: f64,
    pub map_parse: f64,
    pub map_bucket: f64,
    pub project: f64,
    pub join_base: f64,
    /// Extra cost per natural-log unit of static-table entries.
    pub join_per_ln_entry: f64,
    /// Grouping with value aggregates (avg/max/min/sum).
    pub group_value_base: f64,
    /// Extra cost per doubling of the live group count.
    pub group_value_per_log2: f64,
    /// Count-only grouping.
    pub group_count_base: f64,
    pub group_count_per_log2: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            filter_err_code: 0.13 / PINGMESH_RECORDS_PER_S,
            filter_patterns: 0.8e-6,
            map_normalize: 1.0e-6,
            map_parse: 1.5e-6,
            map_bucket: 0.3e-6,
            project: 1.0e-6,
            join_base: 5.0e-6,
            join_per_ln_entry: 3.617e-6,
            group_value_base: 2.36e-5,
            group_value_per_log2: 5e-8,
            group_count_base: 0.5e-6,
            group_count_per_log2: 2.5e-8,
        }
    }
}

impl CostModel {
    pub fn join(&self, table_entries: usize) -> f64 {
        self.join_base + self.join_per_ln_entry * libm::log((table_entries.max(1)) as f64)
    }

    pub fn group(&self, with_value: bool, live_groups: usize) -> f64 {
        let doublings = libm::log2(1.0 + live_groups as f64);
        if with_value {
            self.group_value_base + self.group_value_per_log2 * doublings
        } else {
            self.group_count_base + self.group_count_per_log2 * doublings
        }
    }

    /// Every cost parameter, in the order of [`CostModel::NAMES`].
    pub fn values(&self) -> [f64; 12] {
        [
            self.filter_err_code,
            self.filter_patterns,
            self.map_normalize,
            self.map_parse,
            self.map_bucket,
            self.project,
            self.join_base,
            self.join_per_ln_entry,
            self.group_value_base,
            self.group_value_per_log2,
            self.group_count_base,
            self.group_count_per_log2,
        ]
    }

    pub const NAMES: [&'static str; 12] = [
        "filter_err_code",
        "filter_patterns",
        "map_normalize",
        "map_parse",
        "map_bucket",
        "project",
        "join_base",
        "join_per_ln_entry",
        "group_value_base",
        "group_value_per_log2",
        "group_count_base",
        "group_count_per_log2",
    ];

    /// The same model with every cost multiplied by `k`.
    pub fn scaled(&self, k: f64) -> CostModel {
        let mut out = self.clone();
        for (slot, v) in out.slots_mut().into_iter().zip(self.values()) {
            *slot = v * k;
        }
        out
    }

    fn slots_mut(&mut self) -> [&mut f64; 12] {
        [
            &mut self.filter_err_code,
            &mut self.filter_patterns,
            &mut self.map_normalize,
            &mut self.map_parse,
            &mut self.map_bucket,
            &mut self.project,
            &mut self.join_base,
            &mut self.join_per_ln_entry,
            &mut self.group_value_base,
            &mut self.group_value_per_log2,
            &mut self.group_count_base,
            &mut self.group_count_per_log2,
        ]
    }

    /// Sets the parameter called `name`; false if there is none.
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        match Self::NAMES.iter().position(|n| *n == name) {
            Some(i) => {
                *self.slots_mut()[i] = value;
                true
            }
            None => false,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.values().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_calibration_is_13_percent_of_a_core() {
        let c = CostModel::default();
        let used = c.filter_err_code * PINGMESH_RECORDS_PER_S;
        assert!((used - 0.13).abs() < 1e-12);
    }

    #[test]
    fn costs_are_monotone_in_state_size() {
        let c = CostModel::default();
        assert!(c.join(5000) > c.join(500));
        assert!(c.join(500) > c.join(50));
        let mut prev = 0.0;
        for g in [0, 1, 10, 1_000, 200_000] {
            let v = c.group(true, g);
            assert!(v >= prev);
            prev = v;
        }
        assert!(c.is_valid());
    }
}

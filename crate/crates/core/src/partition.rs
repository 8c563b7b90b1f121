//! Data-level partitioning: the drained-records objective, its linear
//! reformulation over effective load factors, an exact vertex solver and a
//! brute-force grid oracle.
//!
//! With `R_i = r_1 · … · r_{i-1}` and `e_i = p_1 · … · p_i`, minimizing the
//! drained fraction under the per-record compute budget becomes
//!
//! ```text
//! minimize   Σ_i R_i (e_{i-1} - e_i)
//! subject to Σ_i R_i c_i e_i ≤ C / N_r,   1 = e_0 ≥ e_1 ≥ … ≥ e_M ≥ 0.
//! ```
//!
//! Substituting `δ_k = e_k - e_{k+1}` leaves two constraints
//! (`Σ δ_k A_k ≤ b`, `Σ δ_k ≤ 1`), so an optimal vertex has at most two
//! non-zero `δ_k` and can be found by enumerating pairs of prefixes.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Largest operator count the grid oracle accepts.
pub const BRUTE_FORCE_MAX_M: usize = 4;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PartitionError {
    #[error("expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    #[error("effective load factors increase at index {index}")]
    ChainViolation { index: usize },
    #[error("brute force supports at most {max} operators, got {m}")]
    TooLarge { m: usize, max: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionProblem {
    /// Records injected per epoch.
    pub n_records: f64,
    /// Compute budget per epoch, cpu-seconds.
    pub budget: f64,
    /// Per-record cost of each operator, cpu-seconds.
    pub c: Vec<f64>,
    /// Relay ratio of each operator.
    pub r: Vec<f64>,
}

impl PartitionProblem {
    pub fn new(n_records: f64, budget: f64, c: Vec<f64>, r: Vec<f64>) -> Result<Self, PartitionError> {
        let p = PartitionProblem {
            n_records,
            budget,
            c,
            r,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), PartitionError> {
        if self.r.len() != self.c.len() {
            return Err(PartitionError::DimensionMismatch {
                expected: self.c.len(),
                found: self.r.len(),
            });
        }
        if !(self.n_records >= 0.0) || !(self.budget >= 0.0) {
            return Err(PartitionError::InvalidProblem("record count and budget must be non-negative"));
        }
        if self.c.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(PartitionError::InvalidProblem("costs must be finite and non-negative"));
        }
        if self.r.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(PartitionError::InvalidProblem("relay ratios must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Per-record compute budget `C / N_r`; unbounded without records.
    pub fn per_record_budget(&self) -> f64 {
        if self.n_records > 0.0 {
            self.budget / self.n_records
        } else {
            f64::INFINITY
        }
    }

    /// `R_i`: fraction of the input size that reaches operator `i` when
    /// every upstream operator runs on everything.
    pub fn reach(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.m());
        let mut acc = 1.0;
        for r in &self.r {
            out.push(acc);
            acc *= r;
        }
        out
    }

    fn check_len(&self, v: &[f64]) -> Result<(), PartitionError> {
        if v.len() != self.m() {
            return Err(PartitionError::DimensionMismatch {
                expected: self.m(),
                found: v.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSolution {
    /// Effective load factors.
    pub e: Vec<f64>,
    pub p: Vec<f64>,
    pub drained_fraction: f64,
    /// Local cpu-seconds per input record.
    pub compute_used: f64,
}

/// Drained fraction of the input for load factors `p`.
pub fn objective(prob: &PartitionProblem, p: &[f64]) -> Result<f64, PartitionError> {
    prob.check_len(p)?;
    let mut flow = 1.0;
    let mut drained = 0.0;
    for (pi, ri) in p.iter().zip(&prob.r) {
        drained += flow * (1.0 - pi);
        flow *= pi * ri;
    }
    Ok(drained)
}

/// Local cpu-seconds per input record for load factors `p`.
pub fn compute_usage(prob: &PartitionProblem, p: &[f64]) -> Result<f64, PartitionError> {
    prob.check_len(p)?;
    let mut flow = 1.0;
    let mut used = 0.0;
    for ((pi, ri), ci) in p.iter().zip(&prob.r).zip(&prob.c) {
        used += flow * pi * ci;
        flow *= pi * ri;
    }
    Ok(used)
}

/// Linear objective over effective load factors `e`.
pub fn linear_objective(prob: &PartitionProblem, e: &[f64]) -> Result<f64, PartitionError> {
    prob.check_len(e)?;
    let mut prev = 1.0;
    let mut total = 0.0;
    for (reach, ei) in prob.reach().into_iter().zip(e) {
        total += reach * (prev - ei);
        prev = *ei;
    }
    Ok(total)
}

/// Linear compute usage over effective load factors `e`.
pub fn linear_usage(prob: &PartitionProblem, e: &[f64]) -> Result<f64, PartitionError> {
    prob.check_len(e)?;
    Ok(prob
        .reach()
        .into_iter()
        .zip(&prob.c)
        .zip(e)
        .map(|((reach, c), e)| reach * c * e)
        .sum())
}

/// Recovers load factors from effective load factors. Operators that no
/// flow reaches get `p = 0`.
pub fn e_to_p(e: &[f64]) -> Result<Vec<f64>, PartitionError> {
    let mut prev = 1.0;
    let mut p = Vec::with_capacity(e.len());
    for (index, ei) in e.iter().enumerate() {
        if !(0.0..=1.0).contains(ei) || *ei > prev {
            return Err(PartitionError::ChainViolation { index });
        }
        p.push(if prev > 0.0 { (ei / prev).min(1.0) } else { 0.0 });
        prev = *ei;
    }
    Ok(p)
}

pub fn p_to_e(p: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    p.iter()
        .map(|pi| {
            acc *= pi;
            acc
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpOptions {
    /// Vertices whose drained fraction is within this distance of the
    /// optimum are treated as ties; ties go to the vertex that runs more of
    /// the upstream operators locally.
    pub tie_tolerance: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions { tie_tolerance: 1e-9 }
    }
}

/// Exact optimum of the linear reformulation.
pub fn solve_lp(prob: &PartitionProblem) -> Result<PartitionSolution, PartitionError> {
    solve_lp_with(prob, &LpOptions::default())
}

pub fn solve_lp_with(prob: &PartitionProblem, opts: &LpOptions) -> Result<PartitionSolution, PartitionError> {
    prob.validate()?;
    let m = prob.m();
    let reach = prob.reach();
    let b = prob.per_record_budget();
    // Cost of running prefix 1..=k on one unit of flow.
    let mut cost = vec![0.0; m];
    let mut acc = 0.0;
    for k in 0..m {
        acc += reach[k] * prob.c[k];
        cost[k] = acc;
    }

    let mut candidates: Vec<Vec<f64>> = vec![vec![0.0; m]];
    let delta_to_e = |deltas: &[(usize, f64)]| {
        let mut e = vec![0.0; m];
        for &(k, d) in deltas {
            for ei in e.iter_mut().take(k + 1) {
                *ei += d;
            }
        }
        e.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        e
    };
    for k in 0..m {
        let d = if cost[k] <= b { 1.0 } else { b / cost[k] };
        candidates.push(delta_to_e(&[(k, d)]));
        for l in (k + 1)..m {
            let (ak, al) = (cost[k], cost[l]);
            if (ak - al).abs() <= f64::EPSILON * al.max(1.0) {
                continue;
            }
            let dk = (b - al) / (ak - al);
            if (0.0..=1.0).contains(&dk) {
                candidates.push(delta_to_e(&[(k, dk), (l, 1.0 - dk)]));
            }
        }
    }

    let scored: Vec<(f64, f64, Vec<f64>)> = candidates
        .into_iter()
        .filter_map(|e| {
            let used = linear_usage(prob, &e).ok()?;
            // Guard against round-off pushing a tight vertex over budget.
            let e = if used > b && used > 0.0 {
                let scale = b / used;
                e.into_iter().map(|x| x * scale).collect()
            } else {
                e
            };
            let used = linear_usage(prob, &e).ok()?;
            (used <= b + 1e-12).then(|| (linear_objective(prob, &e).unwrap_or(1.0), used, e))
        })
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let tol = opts.tie_tolerance.max(1e-9);
    let (drained, used, e) = scored
        .into_iter()
        .filter(|s| s.0 <= best + tol)
        .max_by(|a, b| {
            a.2.iter()
                .zip(&b.2)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(b.0.total_cmp(&a.0))
        })
        .expect("the all-remote vertex is always feasible");
    let p = e_to_p(&e)?;
    Ok(PartitionSolution {
        e,
        p,
        drained_fraction: drained,
        compute_used: used,
    })
}

/// Exhaustive search over effective load factors on a grid of step `grid`.
pub fn brute_force(prob: &PartitionProblem, grid: f64) -> Result<PartitionSolution, PartitionError> {
    prob.validate()?;
    let m = prob.m();
    if m > BRUTE_FORCE_MAX_M {
        return Err(PartitionError::TooLarge {
            m,
            max: BRUTE_FORCE_MAX_M,
        });
    }
    if !(grid > 0.0 && grid <= 1.0) {
        return Err(PartitionError::InvalidProblem("grid step must lie in (0, 1]"));
    }
    let levels = libm::round(1.0 / grid) as usize;
    let step = 1.0 / levels as f64;
    let reach = prob.reach();
    // Weight of e_i in the maximized value Σ e_i w_i and in the cost.
    let w: Vec<f64> = (0..m)
        .map(|i| if i + 1 < m { reach[i] - reach[i + 1] } else { reach[i] })
        .collect();
    let a: Vec<f64> = (0..m).map(|i| reach[i] * prob.c[i]).collect();
    let b = prob.per_record_budget();

    struct Search<'a> {
        w: &'a [f64],
        a: &'a [f64],
        b: f64,
        step: f64,
        idx: Vec<usize>,
        best_value: f64,
        best: Vec<usize>,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, max_level: usize, value: f64, cost: f64) {
            if i == self.w.len() {
                if value > self.best_value + 1e-15 {
                    self.best_value = value;
                    self.best.clone_from(&self.idx);
                }
                return;
            }
            for level in 0..=max_level {
                let x = level as f64 * self.step;
                let c = cost + self.a[i] * x;
                if c > self.b + 1e-12 {
                    break;
                }
                self.idx[i] = level;
                self.go(i + 1, level, value + self.w[i] * x, c);
            }
            self.idx[i] = 0;
        }
    }
    let mut s = Search {
        w: &w,
        a: &a,
        b,
        step,
        idx: vec![0; m],
        best_value: -1.0,
        best: vec![0; m],
    };
    s.go(0, levels, 0.0, 0.0);
    let e: Vec<f64> = s.best.iter().map(|l| *l as f64 * step).collect();
    Ok(PartitionSolution {
        p: e_to_p(&e)?,
        drained_fraction: linear_objective(prob, &e)?,
        compute_used: linear_usage(prob, &e)?,
        e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(n: f64, budget: f64, c: &[f64], r: &[f64]) -> PartitionProblem {
        PartitionProblem::new(n, budget, c.to_vec(), r.to_vec()).unwrap()
    }

    #[test]
    fn objective_examples() {
        let pr = prob(100.0, 1.0, &[0.001, 0.004], &[0.86, 0.05]);
        assert_eq!(objective(&pr, &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(objective(&pr, &[0.0, 0.4]).unwrap(), 1.0);
        assert!((objective(&pr, &[1.0, 0.83]).unwrap() - 0.1462).abs() < 1e-12);
        assert!(matches!(
            objective(&pr, &[1.0]),
            Err(PartitionError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn usage_examples() {
        let pr = prob(100.0, 1.0, &[0.001, 0.004], &[0.86, 0.05]);
        assert_eq!(compute_usage(&pr, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(compute_usage(&pr, &[1.0, 0.0]).unwrap(), 0.001);
        // 0.001 + 0.86 * 0.83 * 0.004, which rounds to 0.003855.
        assert!((compute_usage(&pr, &[1.0, 0.83]).unwrap() - 0.0038552).abs() < 1e-12);
    }

    #[test]
    fn lp_examples() {
        let s = solve_lp(&prob(100.0, 1.0, &[0.001, 0.001], &[0.86, 0.5])).unwrap();
        assert_eq!(s.e, [1.0, 1.0]);
        assert_eq!(s.drained_fraction, 0.0);

        let s = solve_lp(&prob(100.0, 0.0, &[0.001, 0.004], &[0.86, 0.05])).unwrap();
        assert_eq!(s.e, [0.0, 0.0]);
        assert_eq!(s.drained_fraction, 1.0);

        // Budget 0.003 per record: running both operators on a unit of flow
        // costs 0.001 + 0.86 * 0.004 = 0.00444, so e = 0.003 / 0.00444.
        let s = solve_lp(&prob(100.0, 0.3, &[0.001, 0.004], &[0.86, 0.05])).unwrap();
        let x = 0.003 / 0.00444;
        assert!((s.e[0] - x).abs() < 1e-9 && (s.e[1] - x).abs() < 1e-9);
        assert!((s.e[0] - 0.6757).abs() < 1e-4);
        assert!((s.drained_fraction - (1.0 - x)).abs() < 1e-9);
        assert!(s.compute_used <= 0.003 + 1e-12);
    }

    #[test]
    fn e_to_p_conventions() {
        assert_eq!(e_to_p(&[0.5, 0.25]).unwrap(), [0.5, 0.5]);
        assert_eq!(e_to_p(&[0.0, 0.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(e_to_p(&[1.0, 1.0, 0.3]).unwrap(), [1.0, 1.0, 0.3]);
        assert_eq!(e_to_p(&[0.2, 0.5]), Err(PartitionError::ChainViolation { index: 1 }));
    }

    #[test]
    fn brute_force_guards_and_trivia() {
        let pr = prob(10.0, 1e9, &[1.0; 2], &[0.5; 2]);
        assert_eq!(brute_force(&pr, 0.01).unwrap().drained_fraction, 0.0);
        let big = prob(10.0, 1.0, &[1.0; 5], &[0.5; 5]);
        assert!(matches!(brute_force(&big, 0.1), Err(PartitionError::TooLarge { m: 5, .. })));
    }

    #[test]
    fn brute_force_agrees_on_the_worked_instance() {
        let pr = prob(100.0, 0.3, &[0.001, 0.004], &[0.86, 0.05]);
        let bf = brute_force(&pr, 0.0001).unwrap();
        assert!((bf.drained_fraction - 0.3243).abs() < 0.001);
    }

    #[test]
    fn tie_tolerance_prefers_upstream_operators() {
        // Filter costs 0.13 core, grouping all of its output 0.80 core and
        // a 0.8 core budget: both vertices drain ~14% of the input.
        let n = 38_081.0;
        let pr = prob(n, 0.8, &[0.13 / n, 0.80 / (0.86 * n)], &[0.86, 0.3]);
        let exact = solve_lp(&pr).unwrap();
        let tolerant = solve_lp_with(&pr, &LpOptions { tie_tolerance: 0.005 }).unwrap();
        assert_eq!(tolerant.p[0], 1.0);
        assert!((tolerant.p[1] - 0.8375).abs() < 1e-9);
        assert!(tolerant.drained_fraction <= exact.drained_fraction + 0.005);
    }
}

//! Exact stationary analysis of small systems.
//!
//! Every state of the aggregate chain is enumerated, the generator is built
//! from the policy's exact routing distribution, and the stationary vector is
//! found by a direct solve with an independent power-iteration cross-check.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::coxian::CoxianDist;
use crate::policy::{Destination, PolicySpec};
use crate::state::SystemState;
use crate::{Error, Result};

/// Largest state space the enumerator accepts.
pub const STATE_CAP: usize = 200_000;
/// Largest chain solved by dense LU; bigger chains use power iteration only.
pub const DENSE_LIMIT: usize = 1500;

/// `C(N + K - 1, K - 1)` with `K = bM + 1` per-server configurations.
pub fn state_count(servers: usize, buffer: usize, phases: usize) -> u128 {
    let k = (buffer * phases) as u128;
    let n = servers as u128;
    // C(n + k, k), computed incrementally; saturates far above the cap.
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c.saturating_mul(n + i) / i;
        if c > u64::MAX as u128 {
            return c;
        }
    }
    c
}

/// All states with `N` servers, buffer `b` and `M` phases, each exactly once.
pub fn enumerate_states(servers: usize, buffer: usize, phases: usize) -> Result<Vec<SystemState>> {
    let count = state_count(servers, buffer, phases);
    if count > STATE_CAP as u128 {
        return Err(Error::StateSpaceTooLarge {
            count,
            cap: STATE_CAP,
        });
    }
    let cells = buffer * phases;
    let mut out = Vec::with_capacity(count as usize);
    let mut counts = vec![0u64; cells];
    fill(&mut counts, 0, servers as u64, &mut |c| {
        out.push(SystemState::from_counts(servers, buffer, phases, c));
    });
    out.into_iter().collect()
}

fn fill(counts: &mut [u64], cell: usize, left: u64, emit: &mut dyn FnMut(&[u64])) {
    if cell == counts.len() {
        emit(counts);
        return;
    }
    for c in 0..=left {
        counts[cell] = c;
        fill(counts, cell + 1, left - c, emit);
    }
    counts[cell] = 0;
}

/// Sparse generator: off-diagonal rates per row plus the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub diag: Vec<f64>,
}

impl Generator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Largest total outflow `max_s (-q_{s,s})`.
    pub fn max_outflow(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    /// `max_j |(pi G)_j|`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut out: Vec<f64> = pi.iter().zip(&self.diag).map(|(p, d)| p * d).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, q) in row {
                out[j] += pi[i] * q;
            }
        }
        out.iter().map(|x| libm::fabs(*x)).fold(0.0, f64::max)
    }

    /// Dense copy, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.diag[i];
            for &(j, q) in &self.rows[i] {
                m[i][j] += q;
            }
        }
        m
    }
}

fn index_of(states: &[SystemState]) -> BTreeMap<&SystemState, usize> {
    states.iter().enumerate().map(|(i, s)| (s, i)).collect()
}

/// Generator over `states` under `policy` at per-server load `lambda`.
/// Arrivals that are dropped leave the state unchanged and are omitted.
pub fn build_generator(
    states: &[SystemState],
    dist: &CoxianDist,
    policy: &PolicySpec,
    lambda: f64,
) -> Result<Generator> {
    let index = index_of(states);
    let mut rows = Vec::with_capacity(states.len());
    let mut diag = Vec::with_capacity(states.len());
    for state in states {
        let n = state.servers() as f64;
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        let mut push = |next: SystemState, rate: f64| -> Result<()> {
            let j = *index.get(&next).ok_or_else(|| Error::InvalidParameter {
                name: "states",
                reason: "transition leaves the enumerated set".into(),
            })?;
            *row.entry(j).or_insert(0.0) += rate;
            Ok(())
        };
        for (dest, p) in policy.dest_distribution(state) {
            let mut next = state.clone();
            match dest {
                Destination::Idle => next.apply_arrival(1, 1)?,
                Destination::Busy { level, phase } => next.apply_arrival(level + 1, phase)?,
                Destination::Drop => continue,
            }
            push(next, lambda * n * p)?;
        }
        for (level, phase, count) in state.cells() {
            let rate = dist.rate(phase) * count as f64;
            let p = dist.continuation(phase);
            if p < 1.0 {
                let mut next = state.clone();
                next.apply_departure(level, phase)?;
                push(next, rate * (1.0 - p))?;
            }
            if p > 0.0 {
                let mut next = state.clone();
                next.apply_phase_advance(level, phase)?;
                push(next, rate * p)?;
            }
        }
        let r: Vec<(usize, f64)> = row.into_iter().filter(|&(_, q)| q > 0.0).collect();
        debug_assert!(r.iter().all(|&(_, q)| q >= 0.0));
        diag.push(-r.iter().map(|&(_, q)| q).sum::<f64>());
        rows.push(r);
    }
    Ok(Generator { rows, diag })
}

/// Indices of states that are not mutually reachable with `root`.
pub fn unreachable_states(gen: &Generator, root: usize) -> Vec<usize> {
    let n = gen.len();
    let mut reverse = vec![Vec::new(); n];
    for (i, row) in gen.rows.iter().enumerate() {
        for &(j, _) in row {
            reverse[j].push(i);
        }
    }
    let forward = reach(n, root, |i| gen.rows[i].iter().map(|&(j, _)| j).collect());
    let backward = reach(n, root, |i| reverse[i].clone());
    (0..n).filter(|&i| !(forward[i] && backward[i])).collect()
}

fn reach(n: usize, root: usize, next: impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(i) = queue.pop_front() {
        for j in next(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Longest shortest directed path between two states.
pub fn diameter(gen: &Generator) -> usize {
    let n = gen.len();
    let mut best = 0;
    for root in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &gen.rows[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        best = best.max(
            dist.into_iter()
                .filter(|&d| d != usize::MAX)
                .max()
                .unwrap_or(0),
        );
    }
    best
}

/// Solves `pi G = 0`, `sum pi = 1` by LU with partial pivoting on `G^T` with
/// its last row replaced by ones.
pub fn stationary_lu(gen: &Generator) -> Result<Vec<f64>> {
    let n = gen.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = gen.diag[i];
        for &(j, q) in &gen.rows[i] {
            a[j][i] += q;
        }
    }
    for x in a[n - 1].iter_mut() {
        *x = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let scale = gen.max_outflow().max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| libm::fabs(a[x][col]).total_cmp(&libm::fabs(a[y][col])))
            .unwrap();
        if libm::fabs(a[pivot][col]) <= 1e-13 * scale {
            return Err(Error::Singular(col));
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        let (head, tail) = a.split_at_mut(col + 1);
        let prow = &head[col];
        for (k, row) in tail.iter_mut().enumerate() {
            let f = row[col] / prow[col];
            if f != 0.0 {
                for c in col..n {
                    row[c] -= f * prow[c];
                }
                rhs[col + 1 + k] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|c| a[i][c] * x[c]).sum();
        x[i] = (rhs[i] - s) / a[i][i];
    }
    // Roundoff can leave tiny negatives.
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-14 {
            *v = 0.0;
        }
    }
    Ok(x)
}

/// Power iteration on the uniformized kernel `I + G / Lambda` from the
/// uniform vector, stopping when an iteration moves `pi` by less than `tol`
/// in L1.
pub fn stationary_power(
    gen: &Generator,
    uniformization: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = gen.len();
    let lambda = uniformization.max(gen.max_outflow());
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        for j in 0..n {
            next[j] = pi[j] * (1.0 + gen.diag[j] / lambda);
        }
        for (i, row) in gen.rows.iter().enumerate() {
            let p = pi[i] / lambda;
            for &(j, q) in row {
                next[j] += p * q;
            }
        }
        let total: f64 = next.iter().sum();
        change = 0.0;
        for j in 0..n {
            let v = next[j] / total;
            change += libm::fabs(v - pi[j]);
            pi[j] = v;
        }
        if change < tol {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        change,
    })
}

/// Steady-state quantities computed from an exact stationary vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMetrics {
    /// `sum_s pi(s) A_1(s)`.
    pub waiting_prob: f64,
    pub drop_prob: f64,
    /// `E[sum_i S_i]`, jobs per server.
    pub avg_total_queue: f64,
    /// `E[S_{1,m}]`.
    pub s1m: Vec<f64>,
}

/// An enumerated, solved chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactChain {
    pub states: Vec<SystemState>,
    pub gen: Generator,
    pub pi: Vec<f64>,
    pub policy: PolicySpec,
    pub lambda: f64,
    /// `lambda N + N mu_max`.
    pub uniformization: f64,
}

impl ExactChain {
    /// Enumerates, builds and solves the chain. Chains up to
    /// [`DENSE_LIMIT`] states use LU; larger ones use power iteration.
    pub fn solve(
        servers: usize,
        buffer: usize,
        dist: &CoxianDist,
        policy: PolicySpec,
        lambda: f64,
    ) -> Result<Self> {
        if servers == 0 || buffer == 0 {
            return Err(Error::BadDimensions {
                servers,
                buffer,
                phases: dist.phases(),
            });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidLoad(lambda));
        }
        let states = enumerate_states(servers, buffer, dist.phases())?;
        let gen = build_generator(&states, dist, &policy, lambda)?;
        let root = states
            .iter()
            .position(|s| s.total_jobs() == 0)
            .expect("the empty state is always enumerated");
        let bad = unreachable_states(&gen, root);
        if !bad.is_empty() {
            return Err(Error::Reducible(bad));
        }
        let mu_max = dist.rates().iter().copied().fold(0.0, f64::max);
        let uniformization = servers as f64 * (lambda + mu_max);
        let pi = if states.len() <= DENSE_LIMIT {
            stationary_lu(&gen)?
        } else {
            stationary_power(&gen, uniformization, 1e-15, 10_000_000)?
        };
        Ok(Self {
            states,
            gen,
            pi,
            policy,
            lambda,
            uniformization,
        })
    }

    pub fn residual(&self) -> f64 {
        self.gen.residual(&self.pi)
    }

    /// Independent solve by power iteration.
    pub fn power_iteration(&self) -> Result<Vec<f64>> {
        stationary_power(&self.gen, self.uniformization, 1e-15, 10_000_000)
    }

    pub fn metrics(&self) -> ExactMetrics {
        let phases = self.states[0].phases();
        let mut m = ExactMetrics {
            waiting_prob: 0.0,
            drop_prob: 0.0,
            avg_total_queue: 0.0,
            s1m: vec![0.0; phases],
        };
        for (s, &p) in self.states.iter().zip(&self.pi) {
            let n = s.servers() as f64;
            m.waiting_prob += p * self.policy.a1_prob(s);
            m.drop_prob += p * self
                .policy
                .dest_distribution(s)
                .iter()
                .filter(|(d, _)| *d == Destination::Drop)
                .map(|(_, q)| q)
                .sum::<f64>();
            m.avg_total_queue += p * s.total_jobs() as f64 / n;
            for (k, x) in m.s1m.iter_mut().enumerate() {
                *x += p * s.phase_count(k + 1) as f64 / n;
            }
        }
        m
    }

    /// Total variation distance between two distributions on the states.
    pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).sum::<f64>()
    }
}

/// Which drift hypothesis failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftCondition {
    /// `grad V(s) <= -gamma` for `V(s) >= B`, `s` in the set.
    InsideSet,
    /// `grad V(s) <= delta` for `V(s) >= B`, `s` outside the set.
    OutsideSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftViolation {
    pub state: SystemState,
    pub index: usize,
    pub condition: DriftCondition,
    pub drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCheck {
    pub j: usize,
    pub threshold: f64,
    /// `P(V(S) >= B + 2 nu_max j)` under the exact `pi`.
    pub probability: f64,
    /// `alpha^j + beta P(S outside the set)`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailBoundReport {
    pub nu_max: f64,
    pub q_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub outside_prob: f64,
    /// First state violating a drift hypothesis, if any. When present the
    /// bound is not claimed and `checks` is empty.
    pub violation: Option<DriftViolation>,
    pub checks: Vec<TailCheck>,
}

impl TailBoundReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.violation.is_none()
    }

    pub fn bound_holds(&self) -> bool {
        self.hypotheses_hold() && self.checks.iter().all(|c| c.holds)
    }
}

/// Checks the drift tail bound for Lyapunov function `v` and set `in_set`
/// against the chain's exact stationary distribution, for `j = 0..=j_max`.
#[allow(clippy::too_many_arguments)]
pub fn verify_tail_bound(
    chain: &ExactChain,
    v: &dyn Fn(&SystemState) -> f64,
    in_set: &dyn Fn(&SystemState) -> bool,
    b: f64,
    gamma: f64,
    delta: f64,
    j_max: usize,
) -> Result<TailBoundReport> {
    if !(b > 0.0 && gamma > 0.0 && delta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "B, gamma, delta",
            reason: "need B > 0, gamma > 0, delta >= 0".into(),
        });
    }
    let values: Vec<f64> = chain.states.iter().map(v).collect();
    let mut nu_max: f64 = 0.0;
    let mut q_max: f64 = 0.0;
    let mut violation = None;
    for (i, row) in chain.gen.rows.iter().enumerate() {
        let mut up = 0.0;
        let mut drift = 0.0;
        for &(j, q) in row {
            let dv = values[j] - values[i];
            nu_max = nu_max.max(libm::fabs(dv));
            if dv > 0.0 {
                up += q;
            }
            drift += q * dv;
        }
        q_max = q_max.max(up);
        if violation.is_none() && values[i] >= b {
            let inside = in_set(&chain.states[i]);
            let (ok, condition) = if inside {
                (drift <= -gamma + 1e-12, DriftCondition::InsideSet)
            } else {
                (drift <= delta + 1e-12, DriftCondition::OutsideSet)
            };
            if !ok {
                violation = Some(DriftViolation {
                    state: chain.states[i].clone(),
                    index: i,
                    condition,
                    drift,
                });
            }
        }
    }
    let alpha = q_max * nu_max / (q_max * nu_max + gamma);
    let beta = delta / gamma + 1.0;
    let outside_prob: f64 = chain
        .states
        .iter()
        .zip(&chain.pi)
        .filter(|(s, _)| !in_set(s))
        .map(|(_, p)| p)
        .sum();
    let mut checks = Vec::new();
    if violation.is_none() {
        for j in 0..=j_max {
            let threshold = b + 2.0 * nu_max * j as f64;
            let probability: f64 = values
                .iter()
                .zip(&chain.pi)
                .filter(|(x, _)| **x >= threshold - 1e-12)
                .map(|(_, p)| p)
                .sum();
            let bound = libm::pow(alpha, j as f64) + beta * outside_prob;
            checks.push(TailCheck {
                j,
                threshold,
                probability,
                bound,
                holds: probability <= bound + 1e-12,
            });
        }
    }
    Ok(TailBoundReport {
        nu_max,
        q_max,
        alpha,
        beta,
        outside_prob,
        violation,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp1() -> CoxianDist {
        CoxianDist::new(&[], &[1.0]).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(enumerate_states(1, 1, 1).unwrap().len(), 2);
        assert_eq!(enumerate_states(2, 1, 2).unwrap().len(), 6);
        assert_eq!(enumerate_states(3, 2, 2).unwrap().len(), 35);
        assert_eq!(state_count(3, 2, 2), 35);
        assert!(matches!(
            enumerate_states(100, 4, 4),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn two_state_generator() {
        let states = enumerate_states(1, 1, 1).unwrap();
        let gen = build_generator(&states, &exp1(), &PolicySpec::Jsq, 0.5).unwrap();
        let dense = gen.to_dense();
        let idle = states.iter().position(|s| s.idle() == 1).unwrap();
        let busy = 1 - idle;
        assert_eq!(dense[idle][idle], -0.5);
        assert_eq!(dense[idle][busy], 0.5);
        assert_eq!(dense[busy][idle], 1.0);
        assert_eq!(dense[busy][busy], -1.0);
    }

    #[test]
    fn mm11_solution() {
        let c = ExactChain::solve(1, 1, &exp1(), PolicySpec::Jsq, 0.5).unwrap();
        let m = c.metrics();
        assert!((m.waiting_prob - 1.0 / 3.0).abs() < 1e-14);
        assert!((m.drop_prob - 1.0 / 3.0).abs() < 1e-14);
        assert!(c.residual() < 1e-14);
    }

    #[test]
    fn power_iteration_agrees() {
        let d = CoxianDist::new(&[0.5], &[1.0, 1.0]).unwrap().normalize();
        for policy in [PolicySpec::Jsq, PolicySpec::Jiq, PolicySpec::IdleOneFirst] {
            let c = ExactChain::solve(3, 2, &d, policy, 0.7).unwrap();
            let p = c.power_iteration().unwrap();
            assert!(ExactChain::total_variation(&c.pi, &p) < 1e-10);
            assert!(c.residual() < 1e-12);
        }
    }

    #[test]
    fn b1_exponential_policy_invariant() {
        let base = ExactChain::solve(3, 1, &exp1(), PolicySpec::Jsq, 0.8)
            .unwrap()
            .metrics();
        for policy in [PolicySpec::Jiq, PolicySpec::IdleOneFirst] {
            let m = ExactChain::solve(3, 1, &exp1(), policy, 0.8)
                .unwrap()
                .metrics();
            assert!((m.waiting_prob - base.waiting_prob).abs() < 1e-13);
        }
    }

    #[test]
    fn generator_rows() {
        let d = CoxianDist::new(&[0.5, 0.3], &[1.0, 2.0, 3.0])
            .unwrap()
            .normalize();
        let states = enumerate_states(3, 2, 3).unwrap();
        let gen = build_generator(&states, &d, &PolicySpec::Jiq, 0.9).unwrap();
        let bound = 0.9 * 3.0 + 3.0 * d.rates().iter().copied().fold(0.0, f64::max);
        for (row, diag) in gen.rows.iter().zip(&gen.diag) {
            assert!(row.iter().all(|&(_, q)| q > 0.0));
            let sum: f64 = row.iter().map(|&(_, q)| q).sum();
            assert!((sum + diag).abs() < 1e-12);
            assert!(-diag <= bound + 1e-12);
        }
    }

    #[test]
    fn tail_bound_on_small_chain() {
        let c = ExactChain::solve(2, 2, &exp1(), PolicySpec::Jsq, 0.5).unwrap();
        let v = |s: &SystemState| s.s_total();
        let all = |_: &SystemState| true;
        let j_max = diameter(&c.gen);
        let r = verify_tail_bound(&c, &v, &all, 1.5, 0.5, 0.0, j_max).unwrap();
        assert!(r.hypotheses_hold());
        assert!(r.bound_holds());
        assert_eq!(r.nu_max, 0.5);
        assert_eq!(r.q_max, 1.0);
        assert_eq!(r.alpha, 0.5);
        assert!(r.checks[0].bound >= 1.0);

        let r = verify_tail_bound(&c, &v, &all, 1.5, 5.0, 0.0, j_max).unwrap();
        let bad = r.violation.unwrap();
        assert_eq!(bad.condition, DriftCondition::InsideSet);
        assert!(v(&bad.state) >= 1.5);
    }
}

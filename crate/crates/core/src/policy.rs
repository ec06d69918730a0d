//! Routing policies and their exact routing distributions.
//!
//! Every policy here depends on the state only through the aggregate counts,
//! so the destination of an arrival is described by a level (queue length)
//! and the phase of the job in service there. Given a level, the phase is
//! always proportional to the cell counts because servers are exchangeable.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::state::SystemState;

/// Where an arriving job goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Destination {
    /// An idle server; the job starts in phase 1.
    Idle,
    /// A busy server currently holding `level` jobs (`1..b`), with its job in
    /// service in `phase`.
    Busy { level: usize, phase: usize },
    /// The chosen server already holds `b` jobs; the job is lost.
    Drop,
}

impl Destination {
    /// True for every outcome other than [`Destination::Idle`].
    pub fn waits(self) -> bool {
        !matches!(self, Destination::Idle)
    }
}

/// Sample size rule for power-of-d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Fixed(usize),
    /// `d = ceil(N^alpha (ln N)^2)`.
    Formula {
        alpha: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    /// Join the shortest queue; ties broken uniformly.
    Jsq,
    /// Join an idle server if any, otherwise a uniformly random server.
    Jiq,
    /// Idle server first, then a server with one job, then a random server.
    IdleOneFirst,
    /// Sample `d` servers without replacement and join the shortest.
    PowerOfD(SampleSize),
}

/// Above this sample size, power-of-d routing draws the minimum level from
/// its exact distribution instead of sampling servers one by one.
const EXPLICIT_SAMPLING_LIMIT: usize = 64;

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Jsq => "jsq",
            PolicySpec::Jiq => "jiq",
            PolicySpec::IdleOneFirst => "i1f",
            PolicySpec::PowerOfD(_) => "pod",
        }
    }

    /// Effective sample size for `n` servers, clamped to `1..=n`. `None` for
    /// policies that do not sample.
    pub fn sample_size(&self, servers: usize) -> Option<usize> {
        match *self {
            PolicySpec::PowerOfD(SampleSize::Fixed(d)) => Some(d.clamp(1, servers)),
            PolicySpec::PowerOfD(SampleSize::Formula { alpha }) => {
                let n = servers as f64;
                let ln = libm::log(n);
                let d = libm::ceil(libm::pow(n, alpha) * ln * ln);
                Some((d as usize).clamp(1, servers))
            }
            _ => None,
        }
    }

    /// Samples a destination for one arrival.
    pub fn route<R: Rng + ?Sized>(&self, state: &SystemState, rng: &mut R) -> Destination {
        match *self {
            PolicySpec::Jsq => {
                let level = state.min_level();
                pick_at_level(state, level, rng)
            }
            PolicySpec::Jiq => {
                if state.idle() > 0 {
                    Destination::Idle
                } else {
                    uniform_server(state, rng)
                }
            }
            PolicySpec::IdleOneFirst => {
                if state.idle() > 0 {
                    Destination::Idle
                } else if state.level_count(1) > 0 {
                    pick_at_level(state, 1, rng)
                } else {
                    uniform_server(state, rng)
                }
            }
            PolicySpec::PowerOfD(_) => {
                let d = self.sample_size(state.servers()).unwrap_or(1);
                let level = if d <= EXPLICIT_SAMPLING_LIMIT {
                    sampled_min_level(state, d, rng)
                } else {
                    min_level_by_inversion(state, d, rng)
                };
                pick_at_level(state, level, rng)
            }
        }
    }

    /// Probability that an arrival does not find an idle server (including
    /// drops), given the state.
    pub fn a1_prob(&self, state: &SystemState) -> f64 {
        self.a1_from_busy(state.servers(), state.busy())
    }

    /// [`PolicySpec::a1_prob`] as a function of the number of busy servers
    /// only; every policy here sees idle servers identically.
    pub fn a1_from_busy(&self, servers: usize, busy: u64) -> f64 {
        match self {
            PolicySpec::PowerOfD(_) => {
                let d = self.sample_size(servers).unwrap_or(1);
                all_sampled_at_least(busy, servers as u64, d)
            }
            _ => {
                if busy as usize >= servers {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact routing distribution. Entries with zero mass are omitted and the
    /// masses sum to 1.
    pub fn dest_distribution(&self, state: &SystemState) -> Vec<(Destination, f64)> {
        let levels = state.buffer() + 1;
        let mut level_mass = vec![0.0; levels];
        match *self {
            PolicySpec::Jsq => level_mass[state.min_level()] = 1.0,
            PolicySpec::Jiq => {
                if state.idle() > 0 {
                    level_mass[0] = 1.0;
                } else {
                    uniform_level_mass(state, &mut level_mass);
                }
            }
            PolicySpec::IdleOneFirst => {
                if state.idle() > 0 {
                    level_mass[0] = 1.0;
                } else if state.level_count(1) > 0 {
                    level_mass[1] = 1.0;
                } else {
                    uniform_level_mass(state, &mut level_mass);
                }
            }
            PolicySpec::PowerOfD(_) => {
                let d = self.sample_size(state.servers()).unwrap_or(1);
                let n = state.servers() as u64;
                let mut at_least = state.servers() as u64;
                let mut tail = 1.0;
                for (level, mass) in level_mass.iter_mut().enumerate() {
                    at_least -= state.level_count(level);
                    let next = if level + 1 < levels {
                        all_sampled_at_least(at_least, n, d)
                    } else {
                        0.0
                    };
                    *mass = tail - next;
                    tail = next;
                }
            }
        }
        expand_levels(state, &level_mass)
    }
}

fn expand_levels(state: &SystemState, level_mass: &[f64]) -> Vec<(Destination, f64)> {
    let mut out = Vec::new();
    let buffer = state.buffer();
    if level_mass[0] > 0.0 {
        out.push((Destination::Idle, level_mass[0]));
    }
    for (level, &mass) in level_mass.iter().enumerate().skip(1) {
        if mass <= 0.0 {
            continue;
        }
        if level == buffer {
            out.push((Destination::Drop, mass));
            continue;
        }
        let total = state.level_count(level) as f64;
        for phase in 1..=state.phases() {
            let c = state.count(level, phase);
            if c > 0 {
                out.push((Destination::Busy { level, phase }, mass * c as f64 / total));
            }
        }
    }
    out
}

fn uniform_level_mass(state: &SystemState, mass: &mut [f64]) {
    let n = state.servers() as f64;
    for (level, m) in mass.iter_mut().enumerate() {
        *m = state.level_count(level) as f64 / n;
    }
}

/// `C(at_least, d) / C(n, d)`: probability that `d` servers drawn without
/// replacement from `n` all come from a designated group of `at_least`.
fn all_sampled_at_least(at_least: u64, n: u64, d: usize) -> f64 {
    let d = d as u64;
    if at_least < d {
        return 0.0;
    }
    if at_least == n {
        return 1.0;
    }
    (0..d).fold(1.0, |acc, i| acc * (at_least - i) as f64 / (n - i) as f64)
}

fn pick_at_level<R: Rng + ?Sized>(state: &SystemState, level: usize, rng: &mut R) -> Destination {
    if level == 0 {
        return Destination::Idle;
    }
    if level == state.buffer() {
        return Destination::Drop;
    }
    let mut u = rng.random_range(0..state.level_count(level));
    for phase in 1..=state.phases() {
        let c = state.count(level, phase);
        if u < c {
            return Destination::Busy { level, phase };
        }
        u -= c;
    }
    unreachable!("level {level} count out of sync")
}

fn level_of_server(state: &SystemState, mut u: u64) -> usize {
    for level in 0..=state.buffer() {
        let c = state.level_count(level);
        if u < c {
            return level;
        }
        u -= c;
    }
    unreachable!("server index past N")
}

fn uniform_server<R: Rng + ?Sized>(state: &SystemState, rng: &mut R) -> Destination {
    let u = rng.random_range(0..state.servers() as u64);
    let level = level_of_server(state, u);
    pick_at_level(state, level, rng)
}

/// Draws `d` servers one at a time without replacement and returns the
/// smallest level seen.
fn sampled_min_level<R: Rng + ?Sized>(state: &SystemState, d: usize, rng: &mut R) -> usize {
    let mut remaining: Vec<u64> = (0..=state.buffer()).map(|l| state.level_count(l)).collect();
    let mut pool = state.servers() as u64;
    let mut best = usize::MAX;
    for _ in 0..d {
        let mut u = rng.random_range(0..pool);
        for (level, count) in remaining.iter_mut().enumerate() {
            if u < *count {
                *count -= 1;
                best = best.min(level);
                break;
            }
            u -= *count;
        }
        pool -= 1;
        if best == 0 {
            break;
        }
    }
    best
}

/// Inverse-CDF draw of the minimum level among `d` sampled servers, using
/// log-gamma tail probabilities.
fn min_level_by_inversion<R: Rng + ?Sized>(state: &SystemState, d: usize, rng: &mut R) -> usize {
    let n = state.servers() as f64;
    let ln_choose_n = ln_choose(n, d as f64);
    let u: f64 = rng.random();
    let mut at_least = state.servers() as u64;
    for level in 0..state.buffer() {
        at_least -= state.level_count(level);
        let tail = if (at_least as usize) < d {
            0.0
        } else {
            libm::exp(ln_choose(at_least as f64, d as f64) - ln_choose_n)
        };
        // P(min level > level) = tail
        if u >= tail {
            return level;
        }
    }
    state.buffer()
}

fn ln_choose(n: f64, k: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// Result of checking the LB-zero defining inequality at one `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LbZeroReport {
    pub servers: f64,
    pub alpha: f64,
    /// Largest busy count admitted by `s_1 <= 1 - 1/(N^alpha ln N)`.
    pub worst_busy: f64,
    /// `A_1` at the worst admissible state.
    pub worst_a1: f64,
    /// `1 / sqrt(N)`.
    pub threshold: f64,
    pub passes: bool,
}

/// Checks `A_1(s) <= 1/sqrt(N)` over all states with
/// `s_1 <= 1 - 1/(N^alpha ln N)`.
///
/// `A_1` is nondecreasing in the number of busy servers, so the worst
/// admissible state has the most busy servers. For the idle-first policies
/// `A_1` vanishes whenever an idle server exists and the check passes with
/// zero margin. `servers` is a float so that very large systems can be
/// evaluated with log-gamma arithmetic.
pub fn lbzero_check(policy: &PolicySpec, servers: f64, alpha: f64) -> LbZeroReport {
    let ln_n = libm::log(servers);
    let worst_busy = libm::floor(servers * (1.0 - 1.0 / (libm::pow(servers, alpha) * ln_n)));
    let threshold = 1.0 / libm::sqrt(servers);
    let worst_a1 = match *policy {
        PolicySpec::PowerOfD(rule) => {
            let d = match rule {
                SampleSize::Fixed(d) => (d as f64).min(servers).max(1.0),
                SampleSize::Formula { alpha } => {
                    libm::ceil(libm::pow(servers, alpha) * ln_n * ln_n)
                        .min(servers)
                        .max(1.0)
                }
            };
            if worst_busy < d {
                0.0
            } else {
                libm::exp(ln_choose(worst_busy, d) - ln_choose(servers, d))
            }
        }
        _ => {
            if worst_busy < servers {
                0.0
            } else {
                1.0
            }
        }
    };
    LbZeroReport {
        servers,
        alpha,
        worst_busy,
        worst_a1,
        threshold,
        passes: worst_a1 <= threshold,
    }
}

/// Scans `N = 2, 4, 8, ..., 2^max_exponent` and returns the first `N` at which
/// [`lbzero_check`] passes.
pub fn lbzero_threshold(policy: &PolicySpec, alpha: f64, max_exponent: u32) -> Option<f64> {
    (1..=max_exponent)
        .map(|e| libm::ldexp(1.0, e as i32))
        .find(|&n| lbzero_check(policy, n, alpha).passes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn mass_of(dist: &[(Destination, f64)], d: Destination) -> f64 {
        dist.iter().filter(|(x, _)| *x == d).map(|(_, p)| p).sum()
    }

    fn full_table_state() -> SystemState {
        // Ten busy servers, b = 5, M = 3.
        SystemState::from_cells(
            10,
            5,
            3,
            &[
                (1, 1, 2),
                (2, 1, 1),
                (3, 1, 1),
                (1, 2, 1),
                (2, 2, 2),
                (3, 2, 1),
                (4, 3, 1),
                (5, 3, 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn jsq_prefers_idle() {
        let s = SystemState::from_cells(4, 2, 2, &[(1, 1, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(PolicySpec::Jsq.route(&s, &mut rng), Destination::Idle);
        }
        assert_eq!(PolicySpec::Jsq.a1_prob(&s), 0.0);
    }

    #[test]
    fn jiq_uniform_on_full_table() {
        let dist = PolicySpec::Jiq.dest_distribution(&full_table_state());
        let p = mass_of(&dist, Destination::Busy { level: 1, phase: 1 });
        assert!((p - 0.2).abs() < 1e-15);
        assert!((mass_of(&dist, Destination::Drop) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn jsq_min_level_phase_split() {
        let s = SystemState::from_cells(4, 3, 2, &[(2, 1, 3), (2, 2, 1)]).unwrap();
        let dist = PolicySpec::Jsq.dest_distribution(&s);
        assert!((mass_of(&dist, Destination::Busy { level: 2, phase: 1 }) - 0.75).abs() < 1e-15);
        assert!((mass_of(&dist, Destination::Busy { level: 2, phase: 2 }) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn i1f_level_one() {
        let s = SystemState::from_cells(10, 3, 2, &[(1, 1, 3), (1, 2, 1), (2, 1, 6)]).unwrap();
        let dist = PolicySpec::IdleOneFirst.dest_distribution(&s);
        assert!((mass_of(&dist, Destination::Busy { level: 1, phase: 1 }) - 0.75).abs() < 1e-15);
        assert!((mass_of(&dist, Destination::Busy { level: 1, phase: 2 }) - 0.25).abs() < 1e-15);
        assert_eq!(dist.len(), 2);
    }

    #[test]
    fn pod_a1_hypergeometric() {
        let s = SystemState::from_cells(10, 2, 1, &[(1, 1, 5)]).unwrap();
        let p = PolicySpec::PowerOfD(SampleSize::Fixed(2));
        assert!((p.a1_prob(&s) - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn full_state_a1_is_one() {
        let s = full_table_state();
        for p in [
            PolicySpec::Jsq,
            PolicySpec::Jiq,
            PolicySpec::IdleOneFirst,
            PolicySpec::PowerOfD(SampleSize::Fixed(3)),
        ] {
            assert_eq!(p.a1_prob(&s), 1.0);
        }
    }

    #[test]
    fn pod_full_sample_is_jsq() {
        let s = SystemState::from_cells(10, 4, 2, &[(1, 1, 3), (2, 2, 4), (3, 1, 3)]).unwrap();
        let pod = PolicySpec::PowerOfD(SampleSize::Fixed(10)).dest_distribution(&s);
        let jsq = PolicySpec::Jsq.dest_distribution(&s);
        assert_eq!(pod.len(), jsq.len());
        for ((d1, p1), (d2, p2)) in pod.iter().zip(&jsq) {
            assert_eq!(d1, d2);
            assert!((p1 - p2).abs() < 1e-15);
        }
    }

    #[test]
    fn formula_sample_size() {
        let p = PolicySpec::PowerOfD(SampleSize::Formula { alpha: 0.3 });
        let n = 1_000_000usize;
        let want = ((n as f64).powf(0.3) * (n as f64).ln().powi(2)).ceil() as usize;
        assert_eq!(p.sample_size(n), Some(want));
        assert_eq!(p.sample_size(10), Some(10));
    }

    #[test]
    fn route_matches_distribution() {
        let states = [
            SystemState::from_cells(10, 3, 2, &[(1, 1, 3), (1, 2, 2), (2, 1, 3), (3, 2, 2)])
                .unwrap(),
            SystemState::from_cells(6, 2, 2, &[(1, 1, 2), (1, 2, 1), (2, 2, 3)]).unwrap(),
            SystemState::from_cells(8, 3, 1, &[(1, 1, 2), (2, 1, 3)]).unwrap(),
        ];
        let policies = [
            PolicySpec::Jsq,
            PolicySpec::Jiq,
            PolicySpec::IdleOneFirst,
            PolicySpec::PowerOfD(SampleSize::Fixed(2)),
            PolicySpec::PowerOfD(SampleSize::Fixed(4)),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        for s in &states {
            for p in &policies {
                let exact = p.dest_distribution(s);
                let total: f64 = exact.iter().map(|(_, m)| m).sum();
                assert!((total - 1.0).abs() < 1e-12);
                let mut freq: BTreeMap<Destination, u32> = BTreeMap::new();
                for _ in 0..draws {
                    *freq.entry(p.route(s, &mut rng)).or_default() += 1;
                }
                for (d, mass) in &exact {
                    let got = *freq.get(d).unwrap_or(&0) as f64 / draws as f64;
                    let sd = (mass * (1.0 - mass) / draws as f64).sqrt();
                    assert!(
                        (got - mass).abs() <= 4.0 * sd + 1e-12,
                        "{p:?} {d:?}: {got} vs {mass}"
                    );
                }
                for d in freq.keys() {
                    assert!(
                        exact.iter().any(|(x, _)| x == d),
                        "{p:?} produced unexpected {d:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn inversion_matches_explicit_sampling() {
        let s =
            SystemState::from_cells(200, 3, 2, &[(1, 1, 80), (1, 2, 60), (2, 1, 40), (3, 2, 15)])
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let d = 3;
        let mut explicit = [0u32; 4];
        let mut inverted = [0u32; 4];
        for _ in 0..draws {
            explicit[sampled_min_level(&s, d, &mut rng)] += 1;
            inverted[min_level_by_inversion(&s, d, &mut rng)] += 1;
        }
        for l in 0..4 {
            let p = explicit[l] as f64 / draws as f64;
            let q = inverted[l] as f64 / draws as f64;
            let sd = (p.max(q) * (1.0 - p.min(q)) * 2.0 / draws as f64).sqrt();
            assert!((p - q).abs() <= 4.0 * sd + 1e-12);
        }
    }

    #[test]
    fn lbzero_idle_first_policies_pass() {
        for p in [PolicySpec::Jsq, PolicySpec::Jiq, PolicySpec::IdleOneFirst] {
            let r = lbzero_check(&p, 1000.0, 0.3);
            assert!(r.passes);
            assert_eq!(r.worst_a1, 0.0);
        }
    }

    #[test]
    fn lbzero_pod() {
        let random = PolicySpec::PowerOfD(SampleSize::Fixed(1));
        for e in 6..40 {
            assert!(!lbzero_check(&random, (1u64 << e) as f64, 0.3).passes);
        }
        let pod = PolicySpec::PowerOfD(SampleSize::Formula { alpha: 0.3 });
        let r = lbzero_check(&pod, 1e6, 0.3);
        // d = 1805, worst busy fraction 1 - 1/(N^0.3 ln N): A_1 is astronomically small.
        assert!(r.passes, "{r:?}");
        assert!(lbzero_threshold(&pod, 0.3, 64).is_some());
    }
}

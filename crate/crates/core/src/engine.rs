//! Next-event simulation of the aggregate chain.
//!
//! Arrivals occur at rate `lambda N`; each busy server in phase `m` completes
//! its phase at rate `mu_m`. A completion in phase `m < M` moves the job to the
//! next phase with probability `p_m` and otherwise ends the job. The simulator
//! races the arrival stream against the per-phase completion totals, so each
//! event costs `O(b M)` regardless of `N`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coxian::{CoxianDist, DerivedConstants};
use crate::issp::{self, ConditionReport};
use crate::policy::{Destination, PolicySpec};
use crate::state::SystemState;
use crate::{Error, Result};

/// Events between recomputations of the total event rate from scratch.
pub const RATE_CHECK_PERIOD: u64 = 100_000;
const RATE_DRIFT_TOL: f64 = 1e-9;

/// Arrival load per server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Explicit(f64),
    /// `lambda = 1 - beta N^{-alpha}`.
    Regime {
        alpha: f64,
        beta: f64,
    },
}

impl Load {
    pub fn lambda(&self, servers: usize) -> f64 {
        match *self {
            Load::Explicit(l) => l,
            Load::Regime { alpha, beta } => 1.0 - beta * libm::pow(servers as f64, -alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Events(u64),
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `n[1][m] = round(N lambda v_m)`, everything else idle.
    Equilibrium,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub servers: usize,
    /// Maximum jobs per server (one in service plus `b - 1` waiting).
    pub buffer: usize,
    pub dist: CoxianDist,
    pub policy: PolicySpec,
    pub load: Load,
    pub horizon: Horizon,
    /// Fraction of the horizon discarded before measuring.
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Virtual-time spacing of trajectory samples; `None` records nothing.
    pub trajectory_interval: Option<f64>,
    pub init: Init,
    /// Optional per-phase `[lo, hi]` intervals for `s_{1,m}`; the simulator
    /// reports the exact time-weighted fraction spent inside each.
    pub tracked_intervals: Option<Vec<(f64, f64)>>,
}

impl SimConfig {
    pub fn new(
        servers: usize,
        buffer: usize,
        dist: CoxianDist,
        policy: PolicySpec,
        load: Load,
    ) -> Self {
        Self {
            servers,
            buffer,
            dist,
            policy,
            load,
            horizon: Horizon::Events(1_000_000),
            warmup_fraction: 0.2,
            seed: 0,
            trajectory_interval: None,
            init: Init::Equilibrium,
            tracked_intervals: None,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.load.lambda(self.servers)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: &str| Error::InvalidParameter {
            name,
            reason: reason.into(),
        };
        if self.servers == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        if self.buffer == 0 {
            return Err(invalid("b", "must be at least 1"));
        }
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidLoad(lambda));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid("warmup_fraction", "must lie in [0, 1)"));
        }
        match self.horizon {
            Horizon::Events(0) => return Err(invalid("events", "must be positive")),
            Horizon::Time(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(invalid("time", "must be positive and finite"))
            }
            _ => {}
        }
        if let Some(dt) = self.trajectory_interval {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("trajectory_interval", "must be positive"));
            }
        }
        if let Some(iv) = &self.tracked_intervals {
            if iv.len() != self.dist.phases() {
                return Err(invalid("tracked_intervals", "need one interval per phase"));
            }
        }
        Ok(())
    }

    /// Initial state per [`SimConfig::init`].
    pub fn initial_state(&self) -> Result<SystemState> {
        let phases = self.dist.phases();
        let mut counts = vec![0u64; self.buffer * phases];
        if self.init == Init::Equilibrium {
            let lambda = self.lambda();
            for m in 0..phases {
                counts[m] = libm::round(self.servers as f64 * lambda * self.dist.loads()[m]) as u64;
            }
            while counts[..phases].iter().sum::<u64>() > self.servers as u64 {
                let (i, _) = counts[..phases]
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &c)| c)
                    .unwrap();
                counts[i] -= 1;
            }
        }
        SystemState::from_counts(self.servers, self.buffer, phases, &counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    /// `S_{1,m}` for each phase.
    pub s1: Vec<f64>,
    /// `sum_i S_i`.
    pub total: f64,
}

/// Steady-state estimates from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyMetrics {
    pub lambda: f64,
    /// Fraction of measured arrivals that did not find an idle server
    /// (queued or dropped).
    pub waiting_prob: f64,
    pub drop_prob: f64,
    /// Time average of `sum_i S_i`.
    pub avg_total_queue: f64,
    /// Time averages of `S_{1,m}`.
    pub s1m_avg: Vec<f64>,
    /// Time average of `A_1(S)`; equals `waiting_prob` in expectation.
    pub a1_time_avg: f64,
    /// Time-weighted fraction inside each tracked interval.
    pub interval_freq: Option<Vec<f64>>,
    pub arrivals: u64,
    pub events: u64,
    pub measured_time: f64,
    pub warmup_end_time: f64,
    pub trajectory: Vec<TrajectorySample>,
}

struct Accumulator {
    jobs: f64,
    phase_busy: Vec<f64>,
    a1: f64,
    inside: Vec<f64>,
    time: f64,
}

impl Accumulator {
    fn new(phases: usize) -> Self {
        Self {
            jobs: 0.0,
            phase_busy: vec![0.0; phases],
            a1: 0.0,
            inside: vec![0.0; phases],
            time: 0.0,
        }
    }
}

/// Runs one simulation and returns its steady-state estimates.
pub fn run(config: &SimConfig) -> Result<SteadyMetrics> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = config.initial_state()?;
    let n = config.servers;
    let n_f = n as f64;
    let phases = config.dist.phases();
    let buffer = config.buffer;
    let lambda = config.lambda();
    let arrival_rate = lambda * n_f;
    let rates: Vec<f64> = config.dist.rates().to_vec();
    let continuation: Vec<f64> = (1..=phases).map(|m| config.dist.continuation(m)).collect();
    let a1_table: Vec<f64> = (0..=n as u64)
        .map(|b| config.policy.a1_from_busy(n, b))
        .collect();

    let mut phase_busy: Vec<u64> = (1..=phases).map(|m| state.phase_count(m)).collect();
    let mut completion_rate: f64 = recompute_completion_rate(&rates, &phase_busy);
    let mut jobs = state.total_jobs();

    let (event_limit, time_limit) = match config.horizon {
        Horizon::Events(e) => (e, f64::INFINITY),
        Horizon::Time(t) => (u64::MAX, t),
    };
    let warmup_events = match config.horizon {
        Horizon::Events(e) => libm::floor(e as f64 * config.warmup_fraction) as u64,
        Horizon::Time(_) => u64::MAX,
    };
    let warmup_time = match config.horizon {
        Horizon::Events(_) => f64::INFINITY,
        Horizon::Time(t) => t * config.warmup_fraction,
    };

    let mut acc = Accumulator::new(phases);
    let mut measuring = warmup_events == 0 || warmup_time == 0.0;
    let mut warmup_end_time = 0.0;
    let mut arrivals = 0u64;
    let mut waited = 0u64;
    let mut dropped = 0u64;
    let mut trajectory = Vec::new();
    let mut next_sample = config.trajectory_interval.map(|_| 0.0);
    let tracked = config.tracked_intervals.as_deref();

    let mut t = 0.0;
    let mut events = 0u64;
    while events < event_limit && t < time_limit {
        let total_rate = arrival_rate + completion_rate;
        let u: f64 = rng.random();
        let mut dt = -libm::log(1.0 - u) / total_rate;
        let mut truncated = false;
        if t + dt >= time_limit {
            dt = time_limit - t;
            truncated = true;
        }
        if let (Some(next), Some(interval)) = (next_sample.as_mut(), config.trajectory_interval) {
            while *next <= t + dt {
                trajectory.push(sample(&state, &phase_busy, jobs, *next));
                *next += interval;
            }
        }
        if !measuring && t + dt >= warmup_time {
            // Time horizon: split the holding interval at the warmup boundary.
            let head = warmup_time - t;
            t += head;
            dt -= head;
            measuring = true;
            warmup_end_time = t;
        }
        if measuring {
            acc.time += dt;
            acc.jobs += dt * jobs as f64;
            acc.a1 += dt * a1_table[state.busy() as usize];
            for m in 0..phases {
                let frac = phase_busy[m] as f64 / n_f;
                acc.phase_busy[m] += dt * frac;
                if let Some(iv) = tracked {
                    if frac >= iv[m].0 && frac <= iv[m].1 {
                        acc.inside[m] += dt;
                    }
                }
            }
        }
        t += dt;
        if truncated {
            break;
        }

        let pick = rng.random::<f64>() * total_rate;
        if pick < arrival_rate {
            let dest = config.policy.route(&state, &mut rng);
            if measuring {
                arrivals += 1;
                if dest.waits() {
                    waited += 1;
                }
                if dest == Destination::Drop {
                    dropped += 1;
                }
            }
            match dest {
                Destination::Idle => {
                    state.apply_arrival(1, 1)?;
                    phase_busy[0] += 1;
                    completion_rate += rates[0];
                    jobs += 1;
                }
                Destination::Busy { level, phase } => {
                    state.apply_arrival(level + 1, phase)?;
                    jobs += 1;
                }
                Destination::Drop => {}
            }
        } else {
            let mut x = pick - arrival_rate;
            let mut phase = phases;
            for m in 0..phases {
                let r = rates[m] * phase_busy[m] as f64;
                if x < r {
                    phase = m + 1;
                    break;
                }
                x -= r;
            }
            // Rounding can leave `x` just past the last nonzero bucket.
            while phase_busy[phase - 1] == 0 {
                phase -= 1;
            }
            let mut k = rng.random_range(0..phase_busy[phase - 1]);
            let mut level = buffer;
            for j in 1..=buffer {
                let c = state.count(j, phase);
                if k < c {
                    level = j;
                    break;
                }
                k -= c;
            }
            let p = continuation[phase - 1];
            let advance = p > 0.0 && (p >= 1.0 || rng.random::<f64>() < p);
            if advance {
                state.apply_phase_advance(level, phase)?;
                phase_busy[phase - 1] -= 1;
                phase_busy[phase] += 1;
                completion_rate += rates[phase] - rates[phase - 1];
            } else {
                state.apply_departure(level, phase)?;
                phase_busy[phase - 1] -= 1;
                completion_rate -= rates[phase - 1];
                jobs -= 1;
                if level > 1 {
                    phase_busy[0] += 1;
                    completion_rate += rates[0];
                }
            }
        }
        events += 1;
        if !measuring && events == warmup_events {
            measuring = true;
            warmup_end_time = t;
        }
        if events.is_multiple_of(RATE_CHECK_PERIOD) {
            let fresh: Vec<u64> = (1..=phases).map(|m| state.phase_count(m)).collect();
            let recomputed = recompute_completion_rate(&rates, &fresh);
            let scale = (arrival_rate + recomputed).max(1.0);
            if fresh != phase_busy
                || libm::fabs(recomputed - completion_rate) > RATE_DRIFT_TOL * scale
            {
                return Err(Error::RateDrift {
                    incremental: completion_rate,
                    recomputed,
                });
            }
            completion_rate = recomputed;
        }
    }

    let time = acc.time;
    let frac = |x: u64| {
        if arrivals == 0 {
            0.0
        } else {
            x as f64 / arrivals as f64
        }
    };
    let avg = |x: f64| if time > 0.0 { x / time } else { 0.0 };
    Ok(SteadyMetrics {
        lambda,
        waiting_prob: frac(waited),
        drop_prob: frac(dropped),
        avg_total_queue: avg(acc.jobs) / n_f,
        s1m_avg: acc.phase_busy.iter().map(|&x| avg(x)).collect(),
        a1_time_avg: avg(acc.a1),
        interval_freq: tracked.map(|_| acc.inside.iter().map(|&x| avg(x)).collect()),
        arrivals,
        events,
        measured_time: time,
        warmup_end_time,
        trajectory,
    })
}

fn recompute_completion_rate(rates: &[f64], phase_busy: &[u64]) -> f64 {
    rates
        .iter()
        .zip(phase_busy)
        .map(|(mu, &c)| mu * c as f64)
        .sum()
}

fn sample(state: &SystemState, phase_busy: &[u64], jobs: u64, t: f64) -> TrajectorySample {
    let n = state.servers() as f64;
    TrajectorySample {
        t,
        s1: phase_busy.iter().map(|&c| c as f64 / n).collect(),
        total: jobs as f64 / n,
    }
}

/// Mean and spread of one metric across independent replicas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation across replicas.
    pub std: f64,
    /// `std / sqrt(replicas)`.
    pub stderr: f64,
    pub replicas: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = if n == 0 {
            0.0
        } else {
            xs.iter().sum::<f64>() / n as f64
        };
        let var = if n < 2 {
            0.0
        } else {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        };
        let std = libm::sqrt(var);
        Self {
            mean,
            std,
            stderr: if n == 0 {
                0.0
            } else {
                std / libm::sqrt(n as f64)
            },
            replicas: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSummary {
    pub waiting_prob: Estimate,
    pub drop_prob: Estimate,
    pub avg_total_queue: Estimate,
    pub s1m_avg: Vec<Estimate>,
}

pub fn summarize(runs: &[SteadyMetrics]) -> ReplicaSummary {
    let pick = |f: &dyn Fn(&SteadyMetrics) -> f64| {
        Estimate::from_samples(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let phases = runs.first().map_or(0, |r| r.s1m_avg.len());
    ReplicaSummary {
        waiting_prob: pick(&|r| r.waiting_prob),
        drop_prob: pick(&|r| r.drop_prob),
        avg_total_queue: pick(&|r| r.avg_total_queue),
        s1m_avg: (0..phases).map(|m| pick(&|r| r.s1m_avg[m])).collect(),
    }
}

/// Containment of sampled `S_{1,m}` in the high-probability intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationCheck {
    /// `[s* - theta_m Delta, s* + N^-alpha + sum_{r != m} theta_r Delta]`.
    pub intervals: Vec<(f64, f64)>,
    pub freq: Vec<f64>,
    /// Same check with the opposite sign on every `theta` term.
    pub alt_intervals: Vec<(f64, f64)>,
    pub alt_freq: Vec<f64>,
    pub samples: usize,
    pub condition: ConditionReport,
}

/// Fraction of post-warmup trajectory samples whose `S_{1,m}` falls inside
/// each phase's interval. Samples are equally spaced in time, so this is a
/// time-weighted frequency.
pub fn check_concentration(
    metrics: &SteadyMetrics,
    consts: &DerivedConstants,
    servers: usize,
    alpha: f64,
) -> Result<ConcentrationCheck> {
    if consts.phases < 2 {
        return Err(Error::SinglePhase("the concentration interval check"));
    }
    let intervals = issp::concentration_intervals(consts, servers as f64, alpha)?;
    let alt_intervals = issp::concentration_intervals_flipped(consts, servers as f64, alpha)?;
    let samples: Vec<&TrajectorySample> = metrics
        .trajectory
        .iter()
        .filter(|s| s.t >= metrics.warmup_end_time)
        .collect();
    let count = |iv: &[(f64, f64)]| -> Vec<f64> {
        iv.iter()
            .enumerate()
            .map(|(m, &(lo, hi))| {
                let inside = samples
                    .iter()
                    .filter(|s| s.s1[m] >= lo && s.s1[m] <= hi)
                    .count();
                if samples.is_empty() {
                    0.0
                } else {
                    inside as f64 / samples.len() as f64
                }
            })
            .collect()
    };
    Ok(ConcentrationCheck {
        freq: count(&intervals),
        alt_freq: count(&alt_intervals),
        intervals,
        alt_intervals,
        samples: samples.len(),
        condition: issp::concentration_condition(consts, servers as f64, alpha)?,
    })
}

//! Mean-field ODE for the fractions `s_{i,m}` and a fixed-step RK4 integrator.

use alloc::vec;
use alloc::vec::Vec;

use crate::coxian::CoxianDist;
use crate::{Error, Result};

/// Fluid state: `s[(i-1) M + (m-1)]` is the fraction of servers with at least
/// `i` jobs whose job in service is in phase `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub buffer: usize,
    pub phases: usize,
    pub s: Vec<f64>,
    pub t: f64,
}

impl FluidState {
    pub fn zero(buffer: usize, phases: usize) -> Self {
        Self {
            buffer,
            phases,
            s: vec![0.0; buffer * phases],
            t: 0.0,
        }
    }

    /// State with `s_{1,m}` given and all higher levels empty.
    pub fn from_level_one(buffer: usize, s1: &[f64]) -> Self {
        let mut out = Self::zero(buffer, s1.len());
        out.s[..s1.len()].copy_from_slice(s1);
        out
    }

    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.s[(i - 1) * self.phases + (m - 1)]
    }

    /// `s_i = sum_m s_{i,m}`.
    pub fn level(&self, i: usize) -> f64 {
        self.s[(i - 1) * self.phases..i * self.phases].iter().sum()
    }

    pub fn level_one(&self) -> &[f64] {
        &self.s[..self.phases]
    }
}

/// Distance from `s_1 = 1` within which the state counts as sitting on the
/// boundary of the indicator.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Truncated JSQ dynamics: only `s_{1,m}` evolves and higher levels stay at zero.
///
/// `ds_{1,1} = lambda 1{s_1 < 1} - mu_1 s_{1,1}` and
/// `ds_{1,m} = p_{m-1} mu_{m-1} s_{1,m-1} - mu_m s_{1,m}`.
///
/// On the boundary `s_1 = 1` the inflow is `min(lambda, sum_m w_m s_{1,m})`,
/// the rate that keeps the state on the boundary, instead of jumping between
/// `lambda` and 0.
pub fn rhs_jsq_truncated(state: &FluidState, dist: &CoxianDist, lambda: f64) -> Vec<f64> {
    let phases = dist.phases();
    let mut out = vec![0.0; state.s.len()];
    let s1 = state.level(1);
    let inflow = if s1 < 1.0 - BOUNDARY_TOL {
        lambda
    } else if s1 <= 1.0 + BOUNDARY_TOL {
        let departures: f64 = (1..=phases)
            .map(|m| (1.0 - dist.continuation(m)) * dist.rate(m) * state.get(1, m))
            .sum();
        lambda.min(departures)
    } else {
        0.0
    };
    out[0] = inflow - dist.rate(1) * state.get(1, 1);
    for m in 2..=phases {
        out[m - 1] = dist.continuation(m - 1) * dist.rate(m - 1) * state.get(1, m - 1)
            - dist.rate(m) * state.get(1, m);
    }
    out
}

/// General dynamics with routing probabilities supplied by `routing`, which
/// returns `A_{i,m}(s)` (probability an arrival joins a server that already
/// has at least `i` jobs and whose job in service is in phase `m`) laid out
/// like [`FluidState::s`].
///
/// Completions at level `i + 1` in any phase feed level `i` phase 1, including
/// phase-1 departures.
pub fn rhs_general<F>(state: &FluidState, dist: &CoxianDist, lambda: f64, routing: F) -> Vec<f64>
where
    F: Fn(&FluidState) -> Vec<f64>,
{
    let (b, phases) = (state.buffer, state.phases);
    let a = routing(state);
    let a_at = |i: usize, m: usize| a[(i - 1) * phases + (m - 1)];
    let idle_share = 1.0 - (1..=phases).map(|m| a_at(1, m)).sum::<f64>();
    let mut out = vec![0.0; state.s.len()];
    for i in 1..=b {
        for m in 1..=phases {
            let joined = if i == 1 {
                if m == 1 {
                    idle_share
                } else {
                    0.0
                }
            } else {
                a_at(i - 1, m) - a_at(i, m)
            };
            let mut d = lambda * joined - dist.rate(m) * state.get(i, m);
            if m == 1 {
                if i < b {
                    for r in 1..=phases {
                        d += (1.0 - dist.continuation(r)) * dist.rate(r) * state.get(i + 1, r);
                    }
                }
            } else {
                d += dist.continuation(m - 1) * dist.rate(m - 1) * state.get(i, m - 1);
            }
            out[(i - 1) * phases + (m - 1)] = d;
        }
    }
    out
}

/// Fluid JSQ routing: arrivals go to the lowest level that is not full,
/// split across phases in proportion to the servers sitting exactly there.
/// When every level is full the arrivals are lost at level `b`.
pub fn jsq_routing(state: &FluidState) -> Vec<f64> {
    let (b, phases) = (state.buffer, state.phases);
    let mut a = vec![0.0; b * phases];
    if state.level(1) < 1.0 {
        return a;
    }
    let target = (1..b).find(|&i| state.level(i + 1) < 1.0).unwrap_or(b);
    let exact: Vec<f64> = (1..=phases)
        .map(|m| {
            let above = if target < b {
                state.get(target + 1, m)
            } else {
                0.0
            };
            (state.get(target, m) - above).max(0.0)
        })
        .collect();
    let total: f64 = exact.iter().sum();
    for i in 1..=target {
        for m in 0..phases {
            a[(i - 1) * phases + m] = if total > 0.0 {
                exact[m] / total
            } else {
                1.0 / phases as f64
            };
        }
    }
    a
}

/// Right-hand side choices for [`integrate`].
pub enum Rhs<'a> {
    JsqTruncated,
    General(&'a dyn Fn(&FluidState) -> Vec<f64>),
}

impl Rhs<'_> {
    fn eval(&self, state: &FluidState, dist: &CoxianDist, lambda: f64) -> Vec<f64> {
        match self {
            Rhs::JsqTruncated => rhs_jsq_truncated(state, dist, lambda),
            Rhs::General(routing) => rhs_general(state, dist, lambda, routing),
        }
    }
}

/// Default step `0.01 / mu_max`.
pub fn default_step(dist: &CoxianDist) -> f64 {
    0.01 / dist.rates().iter().copied().fold(0.0, f64::max)
}

/// Fixed-step RK4 from `initial` to `t_end`, keeping every `sample_every`-th
/// step plus the endpoint. The last step is shortened to land on `t_end`.
pub fn integrate(
    rhs: &Rhs<'_>,
    dist: &CoxianDist,
    initial: &FluidState,
    lambda: f64,
    t_end: f64,
    h: f64,
    sample_every: usize,
) -> Result<Vec<FluidState>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: "must be positive".into(),
        });
    }
    if !(t_end >= initial.t) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            reason: "must not precede the start".into(),
        });
    }
    if initial.phases != dist.phases() || initial.s.len() != initial.buffer * initial.phases {
        return Err(Error::BadDimensions {
            servers: 0,
            buffer: initial.buffer,
            phases: initial.phases,
        });
    }
    let every = sample_every.max(1);
    let steps = libm::ceil((t_end - initial.t) / h - 1e-9).max(0.0) as u64;
    let mut out = vec![initial.clone()];
    let mut cur = initial.clone();
    let start = initial.t;
    let stage = |base: &FluidState, k: &[f64], scale: f64, t: f64| FluidState {
        buffer: base.buffer,
        phases: base.phases,
        s: base.s.iter().zip(k).map(|(x, d)| x + scale * d).collect(),
        t,
    };
    for step in 1..=steps {
        let t_next = if step == steps {
            t_end
        } else {
            start + step as f64 * h
        };
        let dt = t_next - cur.t;
        let k1 = rhs.eval(&cur, dist, lambda);
        let k2 = rhs.eval(&stage(&cur, &k1, dt / 2.0, cur.t + dt / 2.0), dist, lambda);
        let k3 = rhs.eval(&stage(&cur, &k2, dt / 2.0, cur.t + dt / 2.0), dist, lambda);
        let k4 = rhs.eval(&stage(&cur, &k3, dt, t_next), dist, lambda);
        for (i, x) in cur.s.iter_mut().enumerate() {
            *x += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        cur.t = t_next;
        if cur.s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { t: cur.t });
        }
        if step % every as u64 == 0 || step == steps {
            out.push(cur.clone());
        }
    }
    Ok(out)
}

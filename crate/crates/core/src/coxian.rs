//! Coxian-M service distributions and the constants derived from them.
//!
//! Phases are numbered `1..=M` in every public accessor so that formulas read
//! the same way they are usually written; storage is 0-based.

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Tolerance used to decide whether a distribution has unit mean.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A Coxian distribution with `M` exponential phases.
///
/// A job in phase `m` is served at rate `mu_m`; on completion it moves to
/// phase `m + 1` with probability `p_m` and otherwise leaves. The last phase
/// always leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxianDist {
    continuation: Vec<f64>,
    rates: Vec<f64>,
    loads: Vec<f64>,
}

impl CoxianDist {
    /// Builds a distribution from continuation probabilities `p` and phase
    /// rates `mu`.
    ///
    /// `p` holds `M - 1` values, or `M` values whose last entry is exactly
    /// `1.0` (that trailing entry is dropped). A continuation probability of
    /// exactly 1 is accepted so that Erlang distributions can be expressed;
    /// see [`CoxianDist::has_certain_continuation`].
    pub fn new(p: &[f64], mu: &[f64]) -> Result<Self> {
        let phases = mu.len();
        if phases == 0 {
            return Err(Error::NoPhases);
        }
        let p = if p.len() == phases {
            let last = p[phases - 1];
            if last != 1.0 {
                return Err(Error::TrailingContinuation {
                    phases,
                    value: last,
                });
            }
            &p[..phases - 1]
        } else if p.len() + 1 == phases {
            p
        } else {
            return Err(Error::ContinuationLength {
                phases,
                got: p.len(),
            });
        };
        for (index, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidContinuation { index, value });
            }
        }
        for (index, &value) in mu.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidRate { index, value });
            }
        }
        let mut loads = Vec::with_capacity(phases);
        let mut reach = 1.0;
        for m in 0..phases {
            if m > 0 {
                reach *= p[m - 1];
            }
            loads.push(reach / mu[m]);
        }
        Ok(Self {
            continuation: p.to_vec(),
            rates: mu.to_vec(),
            loads,
        })
    }

    /// Erlang-`k` with unit mean (all phases at rate `k`, certain continuation).
    pub fn erlang(k: usize) -> Result<Self> {
        let k_f = k as f64;
        Self::new(&alloc::vec![1.0; k.saturating_sub(1)], &alloc::vec![k_f; k])
    }

    /// Unit-mean Coxian with identical phase rates and a common continuation
    /// probability.
    pub fn identical_rates(phases: usize, p: f64) -> Result<Self> {
        let raw = Self::new(
            &alloc::vec![p; phases.saturating_sub(1)],
            &alloc::vec![1.0; phases],
        )?;
        Ok(raw.normalize())
    }

    pub fn phases(&self) -> usize {
        self.rates.len()
    }

    /// Continuation probabilities `p_1..p_{M-1}`.
    pub fn continuations(&self) -> &[f64] {
        &self.continuation
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Per-phase mean loads `v_m = (p_1 ... p_{m-1}) / mu_m`.
    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    /// Rate of phase `m` (1-based).
    pub fn rate(&self, m: usize) -> f64 {
        self.rates[m - 1]
    }

    /// Load `v_m` of phase `m` (1-based).
    pub fn load(&self, m: usize) -> f64 {
        self.loads[m - 1]
    }

    /// Probability of continuing from phase `m` (1-based) to `m + 1`; zero for
    /// the last phase.
    pub fn continuation(&self, m: usize) -> f64 {
        if m >= self.phases() {
            0.0
        } else {
            self.continuation[m - 1]
        }
    }

    /// Mean service time, `sum_m v_m`.
    pub fn mean(&self) -> f64 {
        self.loads.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        libm::fabs(self.mean() - 1.0) <= NORMALIZATION_TOL
    }

    /// True when some `p_i` equals 1, i.e. the distribution contains an
    /// Erlang stage. Such inputs are valid but some theorem constants
    /// degenerate (`w_l = 0`).
    pub fn has_certain_continuation(&self) -> bool {
        self.continuation.contains(&1.0)
    }

    /// Rescales all phase rates by the mean so that the mean becomes 1.
    pub fn normalize(&self) -> Self {
        let mean = self.mean();
        if mean == 1.0 {
            return self.clone();
        }
        let rates: Vec<f64> = self.rates.iter().map(|mu| mu * mean).collect();
        let loads = self.loads.iter().map(|v| v / mean).collect();
        Self {
            continuation: self.continuation.clone(),
            rates,
            loads,
        }
    }

    /// Zero-waiting equilibrium `s*_{1,m} = lambda v_m`, one entry per phase.
    pub fn zero_waiting_equilibrium(&self, lambda: f64) -> Result<Vec<f64>> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidLoad(lambda));
        }
        Ok(self.loads.iter().map(|v| lambda * v).collect())
    }

    /// Draws one service time by walking the phases.
    pub fn sample_service_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut total = 0.0;
        for m in 1..=self.phases() {
            let u: f64 = rng.random();
            total += -libm::log(1.0 - u) / self.rate(m);
            if m == self.phases() {
                break;
            }
            let p = self.continuation(m);
            if p < 1.0 && rng.random::<f64>() >= p {
                break;
            }
        }
        total
    }
}

/// Closed-form constants of a normalized Coxian distribution.
///
/// Vectors named after a phase-indexed family start at the first phase the
/// family is defined for: `a`, `b` and `c` cover phases `2..=M` (so `a[0]` is
/// `a_2`), while `theta` and `w` cover `1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedConstants {
    pub phases: usize,
    /// `mu_1`.
    pub mu1: f64,
    /// Phase loads `v_m`.
    pub loads: Vec<f64>,
    /// `a_m = mu_m / (p_1 mu_1 + mu_m)`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// Contraction factor `xi = sum_m b_m prod_{j>m} a_j`.
    pub xi: f64,
    /// `C_M = sum_m c_m prod_{j>m} a_j`.
    pub c_sum: f64,
    /// `C_M + 6`, the offset that appears once the `-6 Delta / C` margin of
    /// the `L_{1,1}` update is folded into the affine closed form.
    pub c_sum_lifted: f64,
    /// `v_bar = min_m v_m`.
    pub vbar: f64,
    /// Tail scale `C`; `None` for a single phase.
    pub tail_scale: Option<f64>,
    /// `theta_m`; `None` for a single phase.
    pub theta: Option<Vec<f64>>,
    /// Departure rates `w_m = (1 - p_m) mu_m`, with `w_M = mu_M`.
    pub w: Vec<f64>,
    pub w_u: f64,
    pub w_l: f64,
    pub mu_max: f64,
}

impl DerivedConstants {
    pub fn new(dist: &CoxianDist) -> Result<Self> {
        if !dist.is_normalized() {
            return Err(Error::NotNormalized { mean: dist.mean() });
        }
        let phases = dist.phases();
        if let Some(m) = dist.loads().iter().position(|&v| v == 0.0) {
            return Err(Error::UnreachablePhase { phase: m + 1 });
        }
        let v = |m: usize| dist.load(m);
        let mu = |m: usize| dist.rate(m);
        let p1_mu1 = dist.continuation(1) * mu(1);

        let a: Vec<f64> = (2..=phases).map(|m| mu(m) / (p1_mu1 + mu(m))).collect();
        let a_of = |m: usize| a[m - 2];
        let tail_product = |from: usize| (from..=phases).map(a_of).product::<f64>();

        // Same value as (1 - a_m)(1 + sum_{r>m} v_r / v_1) - a_m v_m / v_1,
        // arranged so that no cancellation occurs.
        let b: Vec<f64> = (2..=phases)
            .map(|m| {
                let after: f64 = (m + 1..=phases).map(v).sum();
                let through: f64 = (2..m).map(|i| dist.continuation(i)).product();
                p1_mu1 * (1.0 - through) / (p1_mu1 + mu(m)) + (1.0 - a_of(m)) * after / v(1)
            })
            .collect();
        let c: Vec<f64> = (2..=phases)
            .map(|m| {
                let am = a_of(m);
                let later: f64 = (m + 1..=phases).map(|r| (r - 1) as f64 * v(r)).sum();
                let earlier: f64 = (2..m).map(|r| mu(r) * v(r)).sum();
                5.0 * (1.0 - am) * later
                    + 5.0 * am * earlier / mu(m)
                    + 5.0 * (m as f64 - 2.0) * am * v(m)
                    + 5.0
                    - am
            })
            .collect();

        let xi: f64 = (2..=phases).map(|m| b[m - 2] * tail_product(m + 1)).sum();
        let c_sum: f64 = (2..=phases).map(|m| c[m - 2] * tail_product(m + 1)).sum();
        let vbar = dist.loads().iter().copied().fold(f64::INFINITY, f64::min);

        let tail_scale = (phases >= 2).then(|| {
            let m = phases as f64;
            if xi > 0.0 {
                let log_inv = -libm::log(xi);
                libm::sqrt(2.0 * vbar * vbar * log_inv / (3.0 * m + (3.0 * m + 4.0) * log_inv))
            } else {
                // xi -> 0 limit of the same expression.
                libm::sqrt(2.0 * vbar * vbar / (3.0 * m + 4.0))
            }
        });
        let theta = tail_scale.map(|scale| {
            (1..=phases)
                .map(|m| (6.0 * mu(1) * v(m) + 5.0 * (m as f64 - 1.0) * v(m)) / scale)
                .collect()
        });

        let w: Vec<f64> = (1..=phases)
            .map(|m| (1.0 - dist.continuation(m)) * mu(m))
            .collect();
        let w_u = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w_l = w.iter().copied().fold(f64::INFINITY, f64::min);
        let mu_max = dist
            .rates()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);

        Ok(Self {
            phases,
            mu1: mu(1),
            loads: dist.loads().to_vec(),
            a,
            b,
            c,
            xi,
            c_sum,
            c_sum_lifted: c_sum + 6.0,
            vbar,
            tail_scale,
            theta,
            w,
            w_u,
            w_l,
            mu_max,
        })
    }

    /// `prod_{m=2}^M a_m`.
    pub fn a_product(&self) -> f64 {
        self.a.iter().product()
    }

    /// `|1 - xi - mu_1 prod a_m|`; zero up to rounding for every valid input.
    pub fn xi_identity_residual(&self) -> f64 {
        libm::fabs(1.0 - self.xi - self.mu1 * self.a_product())
    }

    /// `sum_m theta_m`.
    pub fn theta_sum(&self) -> Option<f64> {
        self.theta.as_ref().map(|t| t.iter().sum())
    }

    /// `sum_m theta_m w_m`.
    pub fn theta_w_sum(&self) -> Option<f64> {
        self.theta
            .as_ref()
            .map(|t| t.iter().zip(&self.w).map(|(t, w)| t * w).sum())
    }

    /// `zeta` of the waiting-probability theorem for buffer size `b`.
    pub fn zeta(&self, buffer: usize) -> Option<f64> {
        let tw = self.theta_w_sum()?;
        let b = buffer as f64;
        Some(
            4.0 * self.w_u * b / self.w_l
                * ((1.0 / self.w_l - 1.0 / self.w_u) * tw + 1.0 / self.w_l + 6.0),
        )
    }

    /// `k` of the waiting-probability theorem for buffer size `b`.
    pub fn k(&self, buffer: usize) -> Option<f64> {
        let tw = self.theta_w_sum()?;
        let zeta = self.zeta(buffer)?;
        let b = buffer as f64;
        Some(tw / self.w_u + (1.0 + self.w_l / (4.0 * self.w_u * b)) * zeta - self.theta_sum()?)
    }
}

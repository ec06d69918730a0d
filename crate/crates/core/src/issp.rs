//! Iterative state-space peeling.
//!
//! Lower bounds `L_{1,m}` on the fraction of servers holding one job in phase
//! `m`, and upper bounds `U_m` on `sum_{r=2}^m S_{1,r}`, are refined in turn.
//! The ideal recursion drops every finite-`N` correction; the rigorous one
//! keeps the `Delta = ln N / sqrt N` margins and the tail probabilities
//! `eps_m`, `sigma_m` that accompany each bound.

use alloc::vec;
use alloc::vec::Vec;

use crate::coxian::{CoxianDist, DerivedConstants};
use crate::{Error, Result};

/// Convergence tolerance of the ideal recursion.
pub const CONVERGENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Ideal { lambda: f64 },
    Rigorous { servers: f64, alpha: f64 },
}

/// How `L_{1,1}(n+1)` is obtained from iteration `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    /// `U_M` is re-evaluated from `L_{1,1}(n)` through the chain before the
    /// update, so `L_{1,1}(1)` already moves off zero.
    #[default]
    Collapsed,
    /// `L_{1,1}(n+1)` uses the stored `U_M(n)`, starting from `U_M(0) = 1`.
    /// The sequence is the collapsed one delayed by one step.
    Literal,
}

/// Per-iteration margins. All zero except `lambda` gives the ideal recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub lambda: f64,
    /// `Delta / C`.
    pub delta_over_c: f64,
    /// `(1 - xi) / (2 mu_1 N^alpha)`.
    pub slack: f64,
}

impl Margins {
    pub fn ideal(lambda: f64) -> Self {
        Self {
            lambda,
            delta_over_c: 0.0,
            slack: 0.0,
        }
    }

    pub fn rigorous(consts: &DerivedConstants, servers: f64, alpha: f64) -> Result<Self> {
        let scale = tail_scale(consts)?;
        Ok(Self {
            lambda: 1.0 - libm::pow(servers, -alpha),
            delta_over_c: delta(servers) / scale,
            slack: (1.0 - consts.xi) / (2.0 * consts.mu1 * libm::pow(servers, alpha)),
        })
    }
}

/// Full history of one peeling run. Row `n` of each table is iteration `n`;
/// row 0 holds the initial condition `L = 0`, `U = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsspTrace {
    pub mode: Mode,
    pub ordering: Ordering,
    /// `L_{1,m}(n)` for `m = 1..=M`.
    pub lower: Vec<Vec<f64>>,
    /// `U_m(n)` for `m = 2..=M`.
    pub upper: Vec<Vec<f64>>,
    /// `eps_m(n)` for `m = 1..=M` (rigorous mode only).
    pub eps: Option<Vec<Vec<f64>>>,
    /// `sigma_m(n)` for `m = 2..=M` (rigorous mode only).
    pub sigma: Option<Vec<Vec<f64>>>,
    /// `L_{1,1}(n)` from the affine closed form, for cross-checking the chain.
    pub closed_form: Vec<f64>,
    /// Whether the preconditions of the concentration theorem hold at this
    /// `N` (rigorous mode only).
    pub condition_ok: Option<bool>,
    pub converged: bool,
}

impl IsspTrace {
    pub fn iterations(&self) -> usize {
        self.lower.len() - 1
    }

    pub fn final_lower(&self) -> &[f64] {
        self.lower.last().unwrap()
    }

    pub fn final_upper(&self) -> &[f64] {
        self.upper.last().unwrap()
    }

    /// Largest gap between the chained and closed-form `L_{1,1}`, relative to
    /// `max(1, |L|)`.
    pub fn closed_form_gap(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.closed_form)
            .map(|(row, cf)| libm::fabs(row[0] - cf) / libm::fabs(row[0]).max(1.0))
            .fold(0.0, f64::max)
    }
}

fn require_phases(consts: &DerivedConstants) -> Result<()> {
    if consts.phases < 2 {
        return Err(Error::SinglePhase("state-space peeling"));
    }
    if !(consts.xi < 1.0) {
        return Err(Error::InvalidParameter {
            name: "xi",
            reason: "must be below 1".into(),
        });
    }
    Ok(())
}

fn tail_scale(consts: &DerivedConstants) -> Result<f64> {
    consts
        .tail_scale
        .ok_or(Error::SinglePhase("the tail scale C"))
}

/// `Delta = ln N / sqrt N`.
pub fn delta(servers: f64) -> f64 {
    libm::log(servers) / libm::sqrt(servers)
}

/// Lower bounds `L_{1,m}` for `m = 1..=M` given `L_{1,1}`.
fn lower_chain(consts: &DerivedConstants, l11: f64, margins: &Margins) -> Vec<f64> {
    let v = &consts.loads;
    let mut out = Vec::with_capacity(consts.phases);
    out.push(l11);
    for m in 1..consts.phases {
        let prev = out[m - 1];
        out.push(v[m] / v[m - 1] * prev - 5.0 * v[m] * margins.delta_over_c);
    }
    out
}

/// Upper bounds `U_m` for `m = 2..=M` given `L_{1,1}`, with `U_1 = 0`.
fn upper_chain(consts: &DerivedConstants, l11: f64, margins: &Margins) -> Vec<f64> {
    let mut out = Vec::with_capacity(consts.phases - 1);
    let mut prev = 0.0;
    for i in 0..consts.phases - 1 {
        let (a, b, c) = (consts.a[i], consts.b[i], consts.c[i]);
        let u = 1.0 - a - b * l11 + a * prev + c * margins.delta_over_c;
        out.push(u);
        prev = u;
    }
    out
}

fn cap(consts: &DerivedConstants, margins: &Margins) -> f64 {
    margins.lambda * consts.loads[0] - 6.0 * margins.delta_over_c
}

fn head_update(consts: &DerivedConstants, u_m: f64, margins: &Margins) -> f64 {
    cap(consts, margins).min(1.0 - u_m - margins.slack - 6.0 * margins.delta_over_c)
}

/// `L_{1,1}(n+1)` as an affine map of `L_{1,1}(n)` (before capping).
fn closed_form_step(consts: &DerivedConstants, l11: f64, margins: &Margins) -> f64 {
    let inv_mu1 = 1.0 / consts.mu1;
    let shift = (consts.c_sum_lifted * margins.delta_over_c + margins.slack) / (1.0 - consts.xi);
    inv_mu1 - shift + consts.xi * (l11 - inv_mu1 + shift)
}

/// Runs the peeling recursion with explicit margins.
///
/// Stops after `n_max` iterations, or earlier once `L` and `U` move by less
/// than [`CONVERGENCE_TOL`] when `stop_on_convergence` is set.
pub fn iterate_with(
    consts: &DerivedConstants,
    margins: Margins,
    ordering: Ordering,
    n_max: usize,
    stop_on_convergence: bool,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, bool)> {
    require_phases(consts)?;
    let phases = consts.phases;
    let cap = cap(consts, &margins);
    let mut lower = vec![vec![0.0; phases]];
    let mut upper = vec![vec![1.0; phases - 1]];
    let mut closed = vec![0.0];
    let mut converged = false;
    for n in 0..n_max {
        let l_prev = lower[n][0];
        let u_m = match ordering {
            Ordering::Collapsed => upper_chain(consts, l_prev, &margins)[phases - 2],
            Ordering::Literal => upper[n][phases - 2],
        };
        let l11 = head_update(consts, u_m, &margins);
        let cf_prev = closed[n];
        let cf = if ordering == Ordering::Literal && n == 0 {
            cap.min(-margins.slack - 6.0 * margins.delta_over_c)
        } else {
            cap.min(closed_form_step(consts, cf_prev, &margins))
        };
        let l_row = lower_chain(consts, l11, &margins);
        let u_row = upper_chain(consts, l11, &margins);
        let moved = l_row
            .iter()
            .zip(&lower[n])
            .chain(u_row.iter().zip(&upper[n]));
        let change = moved.map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max);
        lower.push(l_row);
        upper.push(u_row);
        closed.push(cf);
        if change <= CONVERGENCE_TOL && n > 0 {
            converged = true;
            if stop_on_convergence {
                break;
            }
        }
    }
    Ok((lower, upper, closed, converged))
}

/// Idealized recursion with free load `lambda`.
pub fn iterate_ideal(
    consts: &DerivedConstants,
    dist: &CoxianDist,
    lambda: f64,
    n_max: usize,
    ordering: Ordering,
) -> Result<IsspTrace> {
    require_phases(consts)?;
    check_dist(consts, dist)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidLoad(lambda));
    }
    let (lower, upper, closed_form, converged) =
        iterate_with(consts, Margins::ideal(lambda), ordering, n_max, true)?;
    Ok(IsspTrace {
        mode: Mode::Ideal { lambda },
        ordering,
        lower,
        upper,
        eps: None,
        sigma: None,
        closed_form,
        condition_ok: None,
        converged,
    })
}

fn check_dist(consts: &DerivedConstants, dist: &CoxianDist) -> Result<()> {
    if dist.phases() != consts.phases {
        return Err(Error::InvalidParameter {
            name: "dist",
            reason: "phase count differs from the derived constants".into(),
        });
    }
    Ok(())
}

/// Default iteration count `ceil(ln N / (2 ln(1/xi)))`, at least 1.
pub fn default_stop(consts: &DerivedConstants, servers: f64) -> usize {
    if consts.xi <= 0.0 {
        return 1;
    }
    let n = libm::ceil(libm::log(servers) / (2.0 * -libm::log(consts.xi)));
    (n as usize).max(1)
}

/// Rigorous recursion at `lambda = 1 - N^{-alpha}` with tail bookkeeping.
pub fn iterate_rigorous(
    consts: &DerivedConstants,
    dist: &CoxianDist,
    servers: f64,
    alpha: f64,
    n_stop: Option<usize>,
    ordering: Ordering,
) -> Result<IsspTrace> {
    require_phases(consts)?;
    check_dist(consts, dist)?;
    if !(servers >= 2.0) {
        return Err(Error::InvalidParameter {
            name: "N",
            reason: "must be at least 2".into(),
        });
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "must lie in (0, 0.5)".into(),
        });
    }
    let margins = Margins::rigorous(consts, servers, alpha)?;
    let n_stop = n_stop.unwrap_or_else(|| default_stop(consts, servers));
    let (lower, upper, closed_form, converged) =
        iterate_with(consts, margins, ordering, n_stop, false)?;
    let (eps, sigma) = tail_probabilities(consts, servers, n_stop)?;
    Ok(IsspTrace {
        mode: Mode::Rigorous { servers, alpha },
        ordering,
        lower,
        upper,
        eps: Some(eps),
        sigma: Some(sigma),
        closed_form,
        condition_ok: Some(concentration_condition(consts, servers, alpha)?.holds),
        converged,
    })
}

/// `eps_m(n)` for `m = 1..=M` and `sigma_m(n)` for `m = 2..=M`, `n = 0..=n_stop`,
/// from zero initial values. `sigma_1` is identically zero because `U_1 = 0`
/// bounds an empty sum. Values are not clamped to 1.
pub fn tail_probabilities(
    consts: &DerivedConstants,
    servers: f64,
    n_stop: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let scale = tail_scale(consts)?;
    let phases = consts.phases;
    let d = delta(servers);
    let log_n = libm::log(servers);
    let base = libm::exp(-log_n * log_n / (scale * scale));
    let growth = scale / d + 1.0;
    let mut eps = vec![vec![0.0; phases]];
    let mut sigma = vec![vec![0.0; phases - 1]];
    for n in 0..n_stop {
        let sigma_m_prev = sigma[n][phases - 2];
        let mut e = Vec::with_capacity(phases);
        e.push(base + growth * sigma_m_prev);
        for m in 1..phases {
            let v = consts.loads[m];
            let head = libm::exp(-v * v * log_n * log_n / (scale * scale));
            e.push(head + (scale / (v * d) + 1.0) * e[m - 1]);
        }
        let total: f64 = e.iter().sum();
        let mut s = Vec::with_capacity(phases - 1);
        let mut prev = 0.0;
        for _ in 1..phases {
            let value = base + growth * (prev + total);
            s.push(value);
            prev = value;
        }
        eps.push(e);
        sigma.push(s);
    }
    Ok((eps, sigma))
}

/// Outcome of checking a two-sided `N`-condition
/// `min{...} N^{0.5-alpha} >= ln N >= max{...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub holds: bool,
    /// `min{...} N^{0.5-alpha}`.
    pub upper_side: f64,
    pub log_n: f64,
    /// `max{...}`.
    pub lower_side: f64,
    /// Names of the individual terms that are violated.
    pub failing: Vec<&'static str>,
}

fn evaluate_condition(
    servers: f64,
    alpha: f64,
    upper_terms: &[(&'static str, f64)],
    lower_terms: &[(&'static str, f64)],
) -> ConditionReport {
    let log_n = libm::log(servers);
    let growth = libm::exp((0.5 - alpha) * log_n);
    let mut failing = Vec::new();
    let mut upper_side = f64::INFINITY;
    for &(name, coeff) in upper_terms {
        let side = coeff * growth;
        upper_side = upper_side.min(side);
        if !(side >= log_n) {
            failing.push(name);
        }
    }
    let mut lower_side = f64::NEG_INFINITY;
    for &(name, value) in lower_terms {
        lower_side = lower_side.max(value);
        if !(log_n >= value) {
            failing.push(name);
        }
    }
    ConditionReport {
        holds: failing.is_empty(),
        upper_side,
        log_n,
        lower_side,
        failing,
    }
}

/// Preconditions of the concentration theorem at `N`.
pub fn concentration_condition(
    consts: &DerivedConstants,
    servers: f64,
    alpha: f64,
) -> Result<ConditionReport> {
    let scale = tail_scale(consts)?;
    let theta_sum = consts.theta_sum().unwrap();
    let one_minus_xi = 1.0 - consts.xi;
    Ok(evaluate_condition(
        servers,
        alpha,
        &[
            ("sum theta", theta_sum),
            (
                "C(1-xi)/(2 mu_1 C_M)",
                scale * one_minus_xi / (2.0 * consts.mu1 * consts.c_sum),
            ),
        ],
        &[
            ("2 mu_1/(1-xi)", 2.0 * consts.mu1 / one_minus_xi),
            ("C/mu_1", scale / consts.mu1),
        ],
    ))
}

/// Preconditions of the waiting-probability theorem at `N` for buffer `b`.
pub fn waiting_condition(
    consts: &DerivedConstants,
    buffer: usize,
    servers: f64,
    alpha: f64,
) -> Result<ConditionReport> {
    let scale = tail_scale(consts)?;
    let theta_sum = consts.theta_sum().unwrap();
    let one_minus_xi = 1.0 - consts.xi;
    let log_inv_xi = if consts.xi > 0.0 {
        -libm::log(consts.xi)
    } else {
        f64::INFINITY
    };
    // With an Erlang stage w_l = 0 and both zeta and k diverge.
    let (inv_2k, buffer_term) = if consts.w_l > 0.0 {
        let zeta = consts.zeta(buffer).unwrap();
        let k = consts.k(buffer).unwrap();
        (1.0 / (2.0 * k), 4.0 * buffer as f64 / (consts.w_l * zeta))
    } else {
        (0.0, f64::INFINITY)
    };
    let mut report = evaluate_condition(
        servers,
        alpha,
        &[
            ("1/(2k)", inv_2k),
            ("sum theta", theta_sum),
            (
                "C(1-xi)/(2 mu_1 C_M)",
                scale * one_minus_xi / (2.0 * consts.mu1 * consts.c_sum),
            ),
        ],
        &[
            ("ln(1/xi)", log_inv_xi),
            ("2 mu_1/(1-xi)", 2.0 * consts.mu1 / one_minus_xi),
            ("4b/(w_l zeta)", buffer_term),
            ("C/mu_1", scale / consts.mu1),
            ("2", 2.0),
        ],
    );
    // ln(1/xi) = inf when xi = 0; that term is vacuous in the limit.
    if consts.xi <= 0.0 {
        report.failing.retain(|&n| n != "ln(1/xi)");
        report.holds = report.failing.is_empty();
    }
    Ok(report)
}

/// Concentration intervals `[s* - theta_m Delta, s* + N^-alpha + sum_{r != m} theta_r Delta]`
/// with `s* = (1 - N^-alpha) v_m`.
pub fn concentration_intervals(
    consts: &DerivedConstants,
    servers: f64,
    alpha: f64,
) -> Result<Vec<(f64, f64)>> {
    intervals(consts, servers, alpha, -1.0)
}

/// The same intervals with every `theta` term's sign flipped:
/// `[s* + theta_m Delta, s* + N^-alpha - sum_{r != m} theta_r Delta]`.
/// These can be empty.
pub fn concentration_intervals_flipped(
    consts: &DerivedConstants,
    servers: f64,
    alpha: f64,
) -> Result<Vec<(f64, f64)>> {
    intervals(consts, servers, alpha, 1.0)
}

fn intervals(
    consts: &DerivedConstants,
    servers: f64,
    alpha: f64,
    sign: f64,
) -> Result<Vec<(f64, f64)>> {
    let theta = consts
        .theta
        .as_ref()
        .ok_or(Error::SinglePhase("the concentration intervals"))?;
    let d = delta(servers);
    let slack = libm::pow(servers, -alpha);
    let total: f64 = theta.iter().sum();
    Ok(theta
        .iter()
        .zip(&consts.loads)
        .map(|(&t, &v)| {
            let s = (1.0 - slack) * v;
            (s + sign * t * d, s + slack - sign * (total - t) * d)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaitingBoundReport {
    /// `1/sqrt N + (10 mu_max + 4)/(N^{0.5-alpha} ln N)`.
    pub bound: f64,
    pub second_term: f64,
    /// True when `0.5 - alpha` is so small that the second term barely
    /// decays with `N`.
    pub slow_decay: bool,
    pub zeta: Option<f64>,
    pub k: Option<f64>,
    pub concentration: ConditionReport,
    pub waiting: ConditionReport,
    /// Smallest `2^k` (`k <= 64`) at which both conditions hold.
    pub min_servers: Option<f64>,
}

/// Exponent gap `0.5 - alpha` below which the bound is flagged as slowly decaying.
pub const SLOW_DECAY_GAP: f64 = 0.05;

/// Evaluates the waiting-probability bound at `N` and scans powers of two for
/// the first `N` meeting its preconditions.
pub fn waiting_bound(
    consts: &DerivedConstants,
    buffer: usize,
    servers: f64,
    alpha: f64,
) -> Result<WaitingBoundReport> {
    if consts.phases < 2 {
        return Err(Error::SinglePhase("the waiting-probability bound"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            reason: "must lie in (0, 0.5)".into(),
        });
    }
    let log_n = libm::log(servers);
    let second_term = (10.0 * consts.mu_max + 4.0) / (libm::pow(servers, 0.5 - alpha) * log_n);
    let both = |n: f64| -> Result<bool> {
        Ok(concentration_condition(consts, n, alpha)?.holds
            && waiting_condition(consts, buffer, n, alpha)?.holds)
    };
    let mut min_servers = None;
    for k in 1..=64 {
        let n = libm::ldexp(1.0, k);
        if both(n)? {
            min_servers = Some(n);
            break;
        }
    }
    Ok(WaitingBoundReport {
        bound: 1.0 / libm::sqrt(servers) + second_term,
        second_term,
        slow_decay: 0.5 - alpha < SLOW_DECAY_GAP,
        zeta: (consts.w_l > 0.0).then(|| consts.zeta(buffer)).flatten(),
        k: (consts.w_l > 0.0).then(|| consts.k(buffer)).flatten(),
        concentration: concentration_condition(consts, servers, alpha)?,
        waiting: waiting_condition(consts, buffer, servers, alpha)?,
        min_servers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn erlang3() -> (CoxianDist, DerivedConstants) {
        let d = CoxianDist::erlang(3).unwrap();
        let k = DerivedConstants::new(&d).unwrap();
        (d, k)
    }

    fn coxian4() -> (CoxianDist, DerivedConstants) {
        let d = CoxianDist::new(&[0.5, 0.5, 0.5], &[1.875; 4]).unwrap();
        let k = DerivedConstants::new(&d).unwrap();
        (d, k)
    }

    #[test]
    fn erlang3_sequence() {
        let (d, k) = erlang3();
        let t = iterate_ideal(&k, &d, 1.0, 200, Ordering::Collapsed).unwrap();
        let l: Vec<f64> = t.lower.iter().map(|r| r[0]).collect();
        for (got, want) in l
            .iter()
            .zip([0.0, 0.25, 5.0 / 16.0, 21.0 / 64.0, 85.0 / 256.0])
        {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        assert!((t.upper[1][0] - 3.0 / 8.0).abs() < 1e-15);
        assert!((t.upper[1][1] - 11.0 / 16.0).abs() < 1e-15);
        assert!((t.upper[2][0] - 11.0 / 32.0).abs() < 1e-15);
        assert!(t.converged);
        for x in t.final_lower() {
            assert!((x - 1.0 / 3.0).abs() < 1e-9);
        }
        assert!((t.final_upper()[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((t.final_upper()[1] - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn literal_ordering_lags_one_step() {
        let (d, k) = erlang3();
        let c = iterate_ideal(&k, &d, 1.0, 30, Ordering::Collapsed).unwrap();
        let l = iterate_ideal(&k, &d, 1.0, 30, Ordering::Literal).unwrap();
        assert_eq!(l.lower[1][0], 0.0);
        for n in 1..20 {
            assert!((l.lower[n + 1][0] - c.lower[n][0]).abs() < 1e-15);
        }
    }

    #[test]
    fn contraction_is_xi_while_uncapped() {
        let (d, k) = coxian4();
        let t = iterate_ideal(&k, &d, 1.0, 200, Ordering::Collapsed).unwrap();
        let v1 = d.load(1);
        for w in t.lower.windows(2) {
            let (a, b) = ((w[0][0] - v1).abs(), (w[1][0] - v1).abs());
            if a > 1e-9 {
                assert!((b - k.xi * a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_residual_with_cap() {
        let (d, k) = coxian4();
        let lambda = 0.9;
        let t = iterate_ideal(&k, &d, lambda, 500, Ordering::Collapsed).unwrap();
        assert!(t.converged);
        let l11 = t.final_lower()[0];
        assert!((l11 - lambda * d.load(1)).abs() < 1e-12);
        let mut prev = 0.0;
        for (i, u) in t.final_upper().iter().enumerate() {
            let want = 1.0 - k.a[i] - k.b[i] * lambda * d.load(1) + k.a[i] * prev;
            assert!((u - want).abs() < 1e-12);
            prev = *u;
        }
        for w in t.lower.windows(2) {
            assert!(w[1][0] >= w[0][0]);
        }
        for w in t.upper.windows(2) {
            assert!(w[1][1] <= w[0][1] + 1e-15);
        }
    }

    #[test]
    fn zero_margins_reproduce_ideal() {
        let (d, k) = coxian4();
        let ideal = iterate_ideal(&k, &d, 0.95, 40, Ordering::Collapsed).unwrap();
        let (lower, upper, _, _) =
            iterate_with(&k, Margins::ideal(0.95), Ordering::Collapsed, 40, true).unwrap();
        assert_eq!(ideal.lower, lower);
        assert_eq!(ideal.upper, upper);
    }

    #[test]
    fn closed_form_matches_chain() {
        let (d, k) = coxian4();
        for ordering in [Ordering::Collapsed, Ordering::Literal] {
            let t = iterate_rigorous(&k, &d, 1e8, 0.2, Some(60), ordering).unwrap();
            assert!(t.closed_form_gap() < 1e-12, "{}", t.closed_form_gap());
        }
    }

    #[test]
    fn erlang3_rigorous_final_bound() {
        let (d, k) = erlang3();
        let alpha = 0.2;
        // At N = 1e6 the Delta margins dominate and the bound is vacuous.
        let small = iterate_rigorous(&k, &d, 1e6, alpha, None, Ordering::Collapsed).unwrap();
        assert!(small.final_lower()[0] < 0.0);
        assert_eq!(small.condition_ok, Some(false));

        let n = 1e18;
        let t = iterate_rigorous(&k, &d, n, alpha, None, Ordering::Collapsed).unwrap();
        assert_eq!(t.condition_ok, Some(true));
        let lambda = 1.0 - n.powf(-alpha);
        let gap = lambda / 3.0 - t.final_lower()[0];
        let d6 = 6.0 * delta(n) / k.tail_scale.unwrap();
        assert!(gap >= 0.0);
        assert!(gap <= d6 + 2.0 * n.powf(-alpha), "gap {gap}, 6D/C {d6}");
    }

    #[test]
    fn monotone_when_fixed_point_exceeds_cap() {
        let (d, k) = coxian4();
        let t = iterate_rigorous(&k, &d, 1e20, 0.2, Some(40), Ordering::Collapsed).unwrap();
        let m = Margins::rigorous(&k, 1e20, 0.2).unwrap();
        let cap = cap(&k, &m);
        for w in t.lower.windows(2) {
            if w[0][0] <= cap - 1e-12 {
                assert!(w[1][0] > w[0][0]);
            }
        }
    }

    #[test]
    fn tail_recursion_bound_from_second_iterate() {
        let (d, k) = coxian4();
        let n = 1e6;
        let t = iterate_rigorous(&k, &d, n, 0.2, Some(6), Ordering::Collapsed).unwrap();
        let eps = t.eps.unwrap();
        let c = k.tail_scale.unwrap();
        let factor = (c / (k.vbar * delta(n)) + 1.0).powi(3);
        for row in eps.iter().skip(2) {
            assert!(row[3] <= 4.0 * row[0] * factor);
        }
        assert!(t.sigma.unwrap().iter().all(|r| r.len() == 3));
    }

    #[test]
    fn single_phase_rejected() {
        let d = CoxianDist::new(&[], &[1.0]).unwrap();
        let k = DerivedConstants::new(&d).unwrap();
        assert!(matches!(
            iterate_ideal(&k, &d, 1.0, 10, Ordering::Collapsed),
            Err(Error::SinglePhase(_))
        ));
        assert!(waiting_bound(&k, 4, 1e4, 0.3).is_err());
    }

    #[test]
    fn bound_value() {
        let (_, k) = coxian4();
        let r = waiting_bound(&k, 10, 1e4, 0.3).unwrap();
        let want = 0.01 + 22.75 / (10f64.powf(0.8) * 1e4f64.ln());
        assert!((r.bound - want).abs() < 1e-12);
        assert!((r.bound - 0.401).abs() < 1e-3);
        assert!(!r.waiting.holds);
        assert!(r.zeta.unwrap() > 0.0 && r.k.unwrap() > 0.0);
        assert!(waiting_bound(&k, 10, 1e4, 0.499).unwrap().slow_decay);
    }

    #[test]
    fn intervals_at_2500() {
        let (d, k) = coxian4();
        let n = 2500.0;
        let iv = concentration_intervals(&k, n, 0.3).unwrap();
        let theta = k.theta.clone().unwrap();
        let dd = 50f64.ln() * 2.0 / 50.0;
        let lambda = 1.0 - n.powf(-0.3);
        for m in 0..4 {
            let s = lambda * d.load(m + 1);
            assert!((iv[m].0 - (s - theta[m] * dd)).abs() < 1e-12);
            let rest: f64 = theta.iter().sum::<f64>() - theta[m];
            assert!((iv[m].1 - (s + n.powf(-0.3) + rest * dd)).abs() < 1e-12);
        }
        assert!(!concentration_condition(&k, n, 0.3).unwrap().holds);
    }
}

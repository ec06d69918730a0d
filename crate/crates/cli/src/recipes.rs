//! Built-in experiment recipes.
//!
//! Each recipe fills its grid from a [`RecipeConfig`], falling back to the
//! defaults below for any missing key, and writes one plot-ready CSV.

use anyhow::anyhow;
use zerowait_core::engine::{self, Horizon, Load, SteadyMetrics};
use zerowait_core::issp;
use zerowait_core::{CoxianDist, DerivedConstants, PolicySpec, SimConfig};

use crate::commands::{estimate, run_grid};
use crate::config::{policy_label, DistConfig, RecipeConfig};
use crate::output::{header, num, numbered, Table};
use crate::{ConfigResult, Context, Failure, RuntimeResult};

pub const RECIPES: &[&str] = &["verse-N", "verse-M", "trajectory"];

const DEFAULT_TRIALS: usize = 10;
const DEFAULT_BUFFER: usize = 5;

/// One aggregated row of a sweep: a grid point and its replica statistics.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub servers: usize,
    pub policy: String,
    pub phases: usize,
    pub lambda: f64,
    pub trials: usize,
    pub waiting_prob: engine::Estimate,
    pub avg_total_queue: engine::Estimate,
}

fn base_config(
    cfg: &RecipeConfig,
    servers: usize,
    dist: CoxianDist,
    policy: PolicySpec,
    alpha: f64,
    horizon: Horizon,
) -> SimConfig {
    let mut c = SimConfig::new(
        servers,
        cfg.buffer.unwrap_or(DEFAULT_BUFFER),
        dist,
        policy,
        Load::Regime { alpha, beta: 1.0 },
    );
    c.horizon = horizon;
    if let Some(w) = cfg.warmup_fraction {
        c.warmup_fraction = w;
    }
    c
}

fn sweep(
    cfg: &RecipeConfig,
    ctx: &Context,
    points: Vec<SimConfig>,
    file: &str,
) -> Result<Vec<SweepRow>, Failure> {
    for p in &points {
        p.validate().map_err(|e| Failure::Config(anyhow!("{e}")))?;
    }
    let trials = cfg.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 || points.len() * trials > crate::config::MAX_RUNS {
        return Err(Failure::Config(anyhow!(
            "grid expands to {} runs; allowed 1..={}",
            points.len() * trials,
            crate::config::MAX_RUNS
        )));
    }
    let runs = run_grid(&points, trials, ctx.seed, &ctx.pool).runtime()?;
    let rows: Vec<SweepRow> = points
        .iter()
        .zip(&runs)
        .map(|(p, r)| SweepRow {
            servers: p.servers,
            policy: policy_label(&p.policy),
            phases: p.dist.phases(),
            lambda: p.lambda(),
            trials: r.len(),
            waiting_prob: estimate(r, |m| m.waiting_prob),
            avg_total_queue: estimate(r, |m| m.avg_total_queue),
        })
        .collect();
    let h = header(&[
        "N",
        "policy",
        "M",
        "lambda",
        "trials",
        "waiting_prob_mean",
        "waiting_prob_std",
        "avg_total_queue_mean",
        "avg_total_queue_std",
    ]);
    let mut table = Table::create(&ctx.out, file, &h).runtime()?;
    for r in &rows {
        table
            .row(&[
                r.servers.to_string(),
                r.policy.clone(),
                r.phases.to_string(),
                num(r.lambda),
                r.trials.to_string(),
                num(r.waiting_prob.mean),
                num(r.waiting_prob.std),
                num(r.avg_total_queue.mean),
                num(r.avg_total_queue.std),
            ])
            .runtime()?;
    }
    table.finish().runtime()?;
    Ok(rows)
}

/// Waiting probability and mean total queue against `N` for the four-phase
/// Coxian, JSQ and JIQ, `lambda = 1 - N^{-alpha}`.
pub fn verse_n(cfg: &RecipeConfig, ctx: &Context) -> Result<Vec<SweepRow>, Failure> {
    let dist = cfg
        .dist
        .clone()
        .unwrap_or_else(DistConfig::coxian4)
        .build()
        .config()?;
    let policies = cfg.policies(&["jsq", "jiq"]).config()?;
    let servers = cfg.servers.clone().unwrap_or_else(|| vec![100, 400, 1600]);
    let alpha = cfg.alpha.unwrap_or(0.5);
    let horizon = cfg.horizon(Horizon::Events(10_000_000)).config()?;
    let mut points = Vec::new();
    for &n in &servers {
        for p in &policies {
            points.push(base_config(cfg, n, dist.clone(), *p, alpha, horizon));
        }
    }
    sweep(cfg, ctx, points, "verse_n.csv")
}

/// Waiting probability against the number of phases at fixed `N`, using
/// identical-rate Coxians with continuation probability 0.5.
pub fn verse_m(cfg: &RecipeConfig, ctx: &Context) -> Result<Vec<SweepRow>, Failure> {
    if cfg.dist.is_some() {
        return Err(Failure::Config(anyhow!(
            "verse-M builds its own distributions; use `phases` instead of `dist`"
        )));
    }
    let policies = cfg.policies(&["jsq", "jiq"]).config()?;
    let servers = cfg.servers.clone().unwrap_or_else(|| vec![10_000]);
    let phases = cfg.phases.clone().unwrap_or_else(|| vec![1, 2, 4, 8]);
    let alpha = cfg.alpha.unwrap_or(0.5);
    let horizon = cfg.horizon(Horizon::Events(10_000_000)).config()?;
    let mut points = Vec::new();
    for &n in &servers {
        for p in &policies {
            for &m in &phases {
                let dist = CoxianDist::identical_rates(m, 0.5)
                    .map_err(|e| Failure::Config(anyhow!("phases: {e}")))?;
                points.push(base_config(cfg, n, dist, *p, alpha, horizon));
            }
        }
    }
    sweep(cfg, ctx, points, "verse_m.csv")
}

/// Containment of one trajectory run in the concentration intervals.
#[derive(Debug, Clone)]
pub struct Containment {
    pub servers: usize,
    pub policy: String,
    pub trial: usize,
    pub intervals: Vec<(f64, f64)>,
    /// Time-weighted fraction inside each interval, measured by the engine.
    pub freq: Vec<f64>,
    /// Same, from the sampled trajectory.
    pub sampled_freq: Vec<f64>,
    pub alt_intervals: Vec<(f64, f64)>,
    pub alt_freq: Vec<f64>,
    pub condition: issp::ConditionReport,
}

pub struct TrajectoryOutput {
    pub s_star: Vec<f64>,
    pub runs: Vec<SteadyMetrics>,
    pub containment: Vec<Containment>,
}

/// Sampled `S_{1,m}(t)` with the reference values `s*_m = lambda v_m`, plus a
/// summary of how often each coordinate stays inside its interval.
pub fn trajectory(cfg: &RecipeConfig, ctx: &Context) -> Result<TrajectoryOutput, Failure> {
    let dist = cfg
        .dist
        .clone()
        .unwrap_or_else(DistConfig::coxian4)
        .build()
        .config()?;
    if dist.phases() < 2 {
        return Err(Failure::Config(anyhow!(
            "dist: the trajectory recipe needs at least two phases"
        )));
    }
    let consts = DerivedConstants::new(&dist).map_err(|e| Failure::Config(anyhow!("dist: {e}")))?;
    let policies = cfg.policies(&["jsq", "jiq"]).config()?;
    let servers = match cfg.servers.as_deref() {
        None => 10_000,
        Some([n]) => *n,
        Some(_) => {
            return Err(Failure::Config(anyhow!(
                "servers: the trajectory recipe takes a single N"
            )))
        }
    };
    let alpha = cfg.alpha.unwrap_or(0.3);
    let horizon = cfg.horizon(Horizon::Events(1_000_000)).config()?;
    let intervals = issp::concentration_intervals(&consts, servers as f64, alpha)
        .map_err(|e| Failure::Config(anyhow!("{e}")))?;
    let condition = issp::concentration_condition(&consts, servers as f64, alpha)
        .map_err(|e| Failure::Config(anyhow!("{e}")))?;
    let points: Vec<SimConfig> = policies
        .iter()
        .map(|p| {
            let mut c = base_config(cfg, servers, dist.clone(), *p, alpha, horizon);
            c.trajectory_interval = Some(cfg.trajectory_interval.unwrap_or(0.1));
            c.tracked_intervals = Some(intervals.clone());
            c
        })
        .collect();
    for p in &points {
        p.validate().map_err(|e| Failure::Config(anyhow!("{e}")))?;
    }
    let trials = cfg.trials.unwrap_or(1);
    if trials == 0 || points.len() * trials > crate::config::MAX_RUNS {
        return Err(Failure::Config(anyhow!(
            "trials must lie in 1..={}",
            crate::config::MAX_RUNS / points.len()
        )));
    }
    let grid = run_grid(&points, trials, ctx.seed, &ctx.pool).runtime()?;
    let lambda = points[0].lambda();
    let s_star: Vec<f64> = dist.loads().iter().map(|v| lambda * v).collect();
    let phases = dist.phases();

    let mut h = header(&["policy", "trial", "t"]);
    h.extend(numbered("S_1", 1, phases));
    h.push("sum_Si".into());
    h.extend(numbered("s_star", 1, phases));
    let mut table = Table::create(&ctx.out, "trajectory.csv", &h).runtime()?;
    let star: Vec<String> = s_star.iter().map(|&x| num(x)).collect();
    let mut containment = Vec::new();
    let mut runs = Vec::new();
    for (p, results) in points.iter().zip(grid) {
        let label = policy_label(&p.policy);
        for (i, m) in results.into_iter().enumerate() {
            for s in &m.trajectory {
                let mut row = vec![label.clone(), i.to_string(), num(s.t)];
                row.extend(s.s1.iter().map(|&x| num(x)));
                row.push(num(s.total));
                row.extend(star.iter().cloned());
                table.row(&row).runtime()?;
            }
            let check = engine::check_concentration(&m, &consts, servers, alpha).runtime()?;
            containment.push(Containment {
                servers,
                policy: label.clone(),
                trial: i,
                intervals: intervals.clone(),
                freq: m.interval_freq.clone().unwrap_or_default(),
                sampled_freq: check.freq,
                alt_intervals: check.alt_intervals,
                alt_freq: check.alt_freq,
                condition: condition.clone(),
            });
            runs.push(m);
        }
    }
    table.finish().runtime()?;

    let h = header(&[
        "N",
        "policy",
        "trial",
        "m",
        "s_star",
        "lower",
        "upper",
        "freq",
        "sampled_freq",
        "alt_lower",
        "alt_upper",
        "alt_freq",
        "condition_holds",
    ]);
    let mut table = Table::create(&ctx.out, "containment.csv", &h).runtime()?;
    for c in &containment {
        for (m, star) in s_star.iter().enumerate() {
            table
                .row(&[
                    c.servers.to_string(),
                    c.policy.clone(),
                    c.trial.to_string(),
                    (m + 1).to_string(),
                    num(*star),
                    num(c.intervals[m].0),
                    num(c.intervals[m].1),
                    num(c.freq[m]),
                    num(c.sampled_freq[m]),
                    num(c.alt_intervals[m].0),
                    num(c.alt_intervals[m].1),
                    num(c.alt_freq[m]),
                    c.condition.holds.to_string(),
                ])
                .runtime()?;
        }
    }
    table.finish().runtime()?;
    Ok(TrajectoryOutput {
        s_star,
        runs,
        containment,
    })
}

/// Dispatches a recipe by name and prints a one-line summary per row.
pub fn run(name: &str, cfg: &RecipeConfig, ctx: &Context) -> Result<(), Failure> {
    match name {
        "verse-N" | "verse-M" => {
            let rows = if name == "verse-N" {
                verse_n(cfg, ctx)?
            } else {
                verse_m(cfg, ctx)?
            };
            for r in rows {
                println!(
                    "N={} policy={} M={} P(W)={:.6} +/- {:.6} E[sum S]={:.6}",
                    r.servers,
                    r.policy,
                    r.phases,
                    r.waiting_prob.mean,
                    r.waiting_prob.stderr,
                    r.avg_total_queue.mean
                );
            }
        }
        "trajectory" => {
            let out = trajectory(cfg, ctx)?;
            for c in &out.containment {
                println!(
                    "policy={} trial={} containment={:?} condition_holds={}",
                    c.policy, c.trial, c.freq, c.condition.holds
                );
            }
        }
        other => {
            return Err(Failure::Config(anyhow!(
                "unknown recipe `{other}`; expected one of {}",
                RECIPES.join(", ")
            )))
        }
    }
    Ok(())
}

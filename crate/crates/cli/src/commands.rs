//! Subcommand implementations.

use std::path::PathBuf;

use anyhow::anyhow;
use rayon::prelude::*;
use zerowait_core::engine::{self, Estimate, SteadyMetrics};
use zerowait_core::exact::{self, ExactChain};
use zerowait_core::issp::{self, Ordering};
use zerowait_core::meanfield::{self, FluidState, Rhs};
use zerowait_core::{seed, DerivedConstants, SimConfig};

use crate::config::{
    parse_policy, policy_label, ConstantsConfig, ExactConfig, GridPoint, IsspConfig,
    MeanfieldConfig, SimulateConfig,
};
use crate::output::{header, num, numbered, padded, Table};
use crate::{ConfigResult, Context, Failure, RuntimeResult};

/// Runs `trials` seeded replicas of every grid point in parallel. Trial `i`
/// of point `j` uses `seed::derive(base, j, i)`; results come back in grid
/// order regardless of scheduling.
pub fn run_grid(
    points: &[SimConfig],
    trials: usize,
    base: u64,
    pool: &rayon::ThreadPool,
) -> anyhow::Result<Vec<Vec<SteadyMetrics>>> {
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|j| (0..trials).map(move |i| (j, i)))
        .collect();
    let results: Vec<zerowait_core::Result<SteadyMetrics>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(j, i)| {
                let mut c = points[j].clone();
                c.seed = seed::derive(base, j as u64, i as u64);
                engine::run(&c)
            })
            .collect()
    });
    let mut out: Vec<Vec<SteadyMetrics>> = (0..points.len())
        .map(|_| Vec::with_capacity(trials))
        .collect();
    for ((j, i), r) in jobs.into_iter().zip(results) {
        out[j].push(r.map_err(|e| anyhow!("run {j}, trial {i}: {e}"))?);
    }
    Ok(out)
}

pub struct SimulateOutput {
    pub points: Vec<GridPoint>,
    pub runs: Vec<Vec<SteadyMetrics>>,
    pub files: Vec<PathBuf>,
}

pub fn simulate(cfg: &SimulateConfig, ctx: &Context) -> Result<SimulateOutput, Failure> {
    let points = cfg.expand().config()?;
    let trials = cfg.trials();
    let configs: Vec<SimConfig> = points.iter().map(|p| p.config.clone()).collect();
    let runs = run_grid(&configs, trials, ctx.seed, &ctx.pool).runtime()?;
    let width = configs.iter().map(|c| c.dist.phases()).max().unwrap_or(1);

    let mut files = Vec::new();
    let mut h = header(&[
        "N",
        "policy",
        "M",
        "lambda",
        "waiting_prob",
        "drop_prob",
        "avg_total_queue",
    ]);
    h.extend(numbered("s1m_avg", 1, width));
    h.extend(header(&["events", "seed"]));
    let mut table = Table::create(&ctx.out, "runs.csv", &h).runtime()?;
    for (j, (point, results)) in points.iter().zip(&runs).enumerate() {
        for (i, m) in results.iter().enumerate() {
            let mut row = vec![
                point.config.servers.to_string(),
                point.policy_label.clone(),
                point.config.dist.phases().to_string(),
                num(m.lambda),
                num(m.waiting_prob),
                num(m.drop_prob),
                num(m.avg_total_queue),
            ];
            row.extend(padded(&m.s1m_avg, width));
            row.push(m.events.to_string());
            row.push(seed::derive(ctx.seed, j as u64, i as u64).to_string());
            table.row(&row).runtime()?;
        }
    }
    files.push(table.finish().runtime()?);

    let mut h = header(&[
        "N",
        "policy",
        "M",
        "lambda",
        "trials",
        "waiting_prob_mean",
        "waiting_prob_std",
        "drop_prob_mean",
        "drop_prob_std",
        "avg_total_queue_mean",
        "avg_total_queue_std",
    ]);
    h.extend(numbered("s1m_avg_mean", 1, width));
    let mut table = Table::create(&ctx.out, "summary.csv", &h).runtime()?;
    for (point, results) in points.iter().zip(&runs) {
        let s = engine::summarize(results);
        let mut row = vec![
            point.config.servers.to_string(),
            point.policy_label.clone(),
            point.config.dist.phases().to_string(),
            num(point.config.lambda()),
            results.len().to_string(),
        ];
        for e in [&s.waiting_prob, &s.drop_prob, &s.avg_total_queue] {
            row.push(num(e.mean));
            row.push(num(e.std));
        }
        row.extend(padded(
            &s.s1m_avg.iter().map(|e| e.mean).collect::<Vec<_>>(),
            width,
        ));
        table.row(&row).runtime()?;
    }
    files.push(table.finish().runtime()?);

    if cfg.trajectory_interval.is_some() {
        for (j, results) in runs.iter().enumerate() {
            for (i, m) in results.iter().enumerate() {
                files.push(write_trajectory(
                    ctx,
                    &format!("trajectory_run{j}_trial{i}.csv"),
                    m,
                )?);
            }
        }
    }
    Ok(SimulateOutput {
        points,
        runs,
        files,
    })
}

fn write_trajectory(ctx: &Context, name: &str, m: &SteadyMetrics) -> Result<PathBuf, Failure> {
    let phases = m.s1m_avg.len();
    let mut h = header(&["t"]);
    h.extend(numbered("S_1", 1, phases));
    h.push("sum_Si".into());
    let mut table = Table::create(&ctx.out, name, &h).runtime()?;
    for s in &m.trajectory {
        let mut row = vec![num(s.t)];
        row.extend(s.s1.iter().map(|&x| num(x)));
        row.push(num(s.total));
        table.row(&row).runtime()?;
    }
    table.finish().runtime()
}

pub fn issp(cfg: &IsspConfig, ctx: &Context) -> Result<issp::IsspTrace, Failure> {
    let dist = cfg.dist.build().config()?;
    let consts = DerivedConstants::new(&dist).map_err(|e| Failure::Config(anyhow!("dist: {e}")))?;
    let ordering = match cfg.ordering.as_deref().unwrap_or("collapsed") {
        "collapsed" => Ordering::Collapsed,
        "literal" => Ordering::Literal,
        other => {
            return Err(Failure::Config(anyhow!(
                "ordering `{other}`: expected `collapsed` or `literal`"
            )))
        }
    };
    let trace = match cfg.mode.as_deref().unwrap_or("ideal") {
        "ideal" => issp::iterate_ideal(
            &consts,
            &dist,
            cfg.lambda.unwrap_or(1.0),
            cfg.iterations.unwrap_or(200),
            ordering,
        ),
        "rigorous" => {
            let (Some(n), Some(alpha)) = (cfg.servers, cfg.alpha) else {
                return Err(Failure::Config(anyhow!(
                    "rigorous mode needs `servers` and `alpha`"
                )));
            };
            issp::iterate_rigorous(&consts, &dist, n, alpha, cfg.iterations, ordering)
        }
        other => {
            return Err(Failure::Config(anyhow!(
                "mode `{other}`: expected `ideal` or `rigorous`"
            )))
        }
    }
    .map_err(|e| Failure::Config(anyhow!("{e}")))?;

    let phases = dist.phases();
    let mut h = header(&["n"]);
    h.extend(numbered("L", 1, phases));
    h.extend(numbered("U", 2, phases));
    h.extend(numbered("eps", 1, phases));
    h.extend(numbered("sigma", 2, phases));
    h.push("L_1_closed_form".into());
    let mut table = Table::create(&ctx.out, "issp.csv", &h).runtime()?;
    for n in 0..=trace.iterations() {
        let mut row = vec![n.to_string()];
        row.extend(trace.lower[n].iter().map(|&x| num(x)));
        row.extend(trace.upper[n].iter().map(|&x| num(x)));
        match (&trace.eps, &trace.sigma) {
            (Some(e), Some(s)) => {
                row.extend(e[n].iter().map(|&x| num(x)));
                row.extend(s[n].iter().map(|&x| num(x)));
            }
            _ => row.extend(std::iter::repeat_n(String::new(), 2 * phases - 1)),
        }
        row.push(num(trace.closed_form[n]));
        table.row(&row).runtime()?;
    }
    table.finish().runtime()?;

    println!("iterations: {}", trace.iterations());
    println!("converged: {}", trace.converged);
    println!("final L: {:?}", trace.final_lower());
    println!("final U: {:?}", trace.final_upper());
    println!("closed-form gap: {:e}", trace.closed_form_gap());
    if let Some(ok) = trace.condition_ok {
        println!("N-condition holds: {ok}");
        if let issp::Mode::Rigorous { servers, alpha } = trace.mode {
            let b = cfg.buffer.unwrap_or(2);
            let report = issp::waiting_bound(&consts, b, servers, alpha).runtime()?;
            println!("waiting-probability bound: {}", report.bound);
            println!(
                "waiting-bound condition holds: {} (failing: {:?})",
                report.waiting.holds, report.waiting.failing
            );
        }
    }
    Ok(trace)
}

pub fn meanfield(cfg: &MeanfieldConfig, ctx: &Context) -> Result<Vec<FluidState>, Failure> {
    let dist = cfg.dist.build().config()?;
    let phases = dist.phases();
    let initial = match &cfg.initial {
        None => FluidState::zero(1, phases),
        Some(serde_json::Value::String(s)) if s == "zero" => FluidState::zero(1, phases),
        Some(serde_json::Value::String(s)) if s == "equilibrium" => FluidState::from_level_one(
            1,
            &dist
                .zero_waiting_equilibrium(cfg.lambda)
                .map_err(|e| Failure::Config(anyhow!("lambda: {e}")))?,
        ),
        Some(serde_json::Value::Array(values)) => {
            let s: Vec<f64> = values
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| anyhow!("initial: expected numbers"))
                })
                .collect::<anyhow::Result<_>>()
                .config()?;
            if s.len() != phases {
                return Err(Failure::Config(anyhow!(
                    "initial: expected {phases} values, got {}",
                    s.len()
                )));
            }
            FluidState::from_level_one(1, &s)
        }
        Some(_) => {
            return Err(Failure::Config(anyhow!(
                "initial: expected `zero`, `equilibrium` or a list"
            )))
        }
    };
    let h = cfg.h.unwrap_or_else(|| meanfield::default_step(&dist));
    let traj = meanfield::integrate(
        &Rhs::JsqTruncated,
        &dist,
        &initial,
        cfg.lambda,
        cfg.t_end,
        h,
        cfg.sample_every.unwrap_or(10),
    )
    .map_err(|e| match e {
        zerowait_core::Error::NonFinite { .. } => Failure::Runtime(anyhow!("{e}")),
        other => Failure::Config(anyhow!("{other}")),
    })?;
    let mut hd = header(&["t"]);
    hd.extend(numbered("s_1", 1, phases));
    let mut table = Table::create(&ctx.out, "meanfield.csv", &hd).runtime()?;
    for st in &traj {
        let mut row = vec![num(st.t)];
        row.extend(st.level_one().iter().map(|&x| num(x)));
        table.row(&row).runtime()?;
    }
    table.finish().runtime()?;
    Ok(traj)
}

pub fn exact(cfg: &ExactConfig, ctx: &Context) -> Result<ExactChain, Failure> {
    let dist = cfg.dist.build().config()?;
    let policy = parse_policy(&cfg.policy).config()?;
    if cfg.servers == 0 || cfg.buffer == 0 {
        return Err(Failure::Config(anyhow!(
            "`servers` and `buffer` must be at least 1"
        )));
    }
    let count = exact::state_count(cfg.servers, cfg.buffer, dist.phases());
    if count > exact::STATE_CAP as u128 {
        return Err(Failure::Config(anyhow!(
            "state space has {count} states; the cap is {}",
            exact::STATE_CAP
        )));
    }
    let chain = ExactChain::solve(cfg.servers, cfg.buffer, &dist, policy, cfg.lambda).runtime()?;
    let m = chain.metrics();
    let phases = dist.phases();
    let mut h = header(&[
        "N",
        "b",
        "M",
        "policy",
        "lambda",
        "states",
        "waiting_prob",
        "drop_prob",
        "avg_total_queue",
    ]);
    h.extend(numbered("s1m", 1, phases));
    h.push("residual".into());
    let mut table = Table::create(&ctx.out, "exact.csv", &h).runtime()?;
    let mut row = vec![
        cfg.servers.to_string(),
        cfg.buffer.to_string(),
        phases.to_string(),
        policy_label(&policy),
        num(cfg.lambda),
        chain.states.len().to_string(),
        num(m.waiting_prob),
        num(m.drop_prob),
        num(m.avg_total_queue),
    ];
    row.extend(m.s1m.iter().map(|&x| num(x)));
    row.push(num(chain.residual()));
    table.row(&row).runtime()?;
    table.finish().runtime()?;

    if cfg.dump_pi.unwrap_or(false) {
        let mut table = Table::create(&ctx.out, "pi.csv", &header(&["state", "pi"])).runtime()?;
        for (s, p) in chain.states.iter().zip(&chain.pi) {
            let key: Vec<String> = std::iter::once(s.idle().to_string())
                .chain(s.counts().iter().map(|c| c.to_string()))
                .collect();
            table.row(&[key.join(" "), num(*p)]).runtime()?;
        }
        table.finish().runtime()?;
    }
    println!("states: {}", chain.states.len());
    println!("waiting_prob: {}", m.waiting_prob);
    println!("avg_total_queue: {}", m.avg_total_queue);
    println!("residual: {:e}", chain.residual());
    Ok(chain)
}

fn list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x}")).collect();
    format!("({})", parts.join(", "))
}

pub fn constants(cfg: &ConstantsConfig, ctx: &Context) -> Result<DerivedConstants, Failure> {
    let dist = cfg.dist.build().config()?;
    let k = DerivedConstants::new(&dist).map_err(|e| Failure::Config(anyhow!("dist: {e}")))?;
    let mut lines = vec![
        ("M".to_string(), k.phases.to_string()),
        ("mu".into(), list(dist.rates())),
        ("p".into(), list(dist.continuations())),
        ("v".into(), list(&k.loads)),
        ("a".into(), list(&k.a)),
        ("b".into(), list(&k.b)),
        ("c".into(), list(&k.c)),
        ("xi".into(), num(k.xi)),
        ("identity_residual".into(), num(k.xi_identity_residual())),
        ("C_M".into(), num(k.c_sum)),
        ("v_bar".into(), num(k.vbar)),
        ("w".into(), list(&k.w)),
        ("w_u".into(), num(k.w_u)),
        ("w_l".into(), num(k.w_l)),
        ("mu_max".into(), num(k.mu_max)),
    ];
    if let Some(c) = k.tail_scale {
        lines.push(("C".into(), num(c)));
        lines.push(("theta".into(), list(k.theta.as_ref().unwrap())));
    }
    if let Some(b) = cfg.buffer {
        if let (Some(z), Some(kk)) = (k.zeta(b), k.k(b)) {
            lines.push(("zeta".into(), num(z)));
            lines.push(("k".into(), num(kk)));
        }
    }
    if let (Some(n), Some(alpha)) = (cfg.servers, cfg.alpha) {
        if k.phases < 2 {
            return Err(Failure::Config(anyhow!(
                "theorem bounds need at least two phases"
            )));
        }
        let r = issp::waiting_bound(&k, cfg.buffer.unwrap_or(2), n, alpha)
            .map_err(|e| Failure::Config(anyhow!("{e}")))?;
        lines.push(("waiting_bound".into(), num(r.bound)));
        lines.push((
            "concentration_condition".into(),
            r.concentration.holds.to_string(),
        ));
        lines.push(("waiting_condition".into(), r.waiting.holds.to_string()));
        lines.push((
            "min_N".into(),
            r.min_servers.map_or_else(|| "none found".to_string(), num),
        ));
    }
    let mut table =
        Table::create(&ctx.out, "constants.csv", &header(&["name", "value"])).runtime()?;
    for (name, value) in &lines {
        println!("{name} = {value}");
        table.row(&[name.clone(), value.clone()]).runtime()?;
    }
    table.finish().runtime()?;
    Ok(k)
}

/// Mean and standard deviation of a metric over replicas.
pub fn estimate(runs: &[SteadyMetrics], f: impl Fn(&SteadyMetrics) -> f64) -> Estimate {
    Estimate::from_samples(&runs.iter().map(f).collect::<Vec<_>>())
}

//! JSON configuration for every subcommand. Unknown keys are rejected.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use zerowait_core::engine::{Horizon, Init, Load};
use zerowait_core::policy::SampleSize;
use zerowait_core::{CoxianDist, PolicySpec};

/// Largest number of runs (grid points times trials) a config may expand to.
pub const MAX_RUNS: usize = 10_000;

/// Service distribution. Exactly one form must be given:
/// `{"p": [...], "mu": [...]}`, `{"erlang": k}` or
/// `{"identical": {"phases": M, "p": 0.5}}`.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistConfig {
    pub p: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub erlang: Option<usize>,
    pub identical: Option<IdenticalConfig>,
    /// Rescale to unit mean (default true).
    pub normalize: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IdenticalConfig {
    pub phases: usize,
    pub p: f64,
}

pub const DIST_KEYS: &[&str] = &[
    "p",
    "mu",
    "erlang",
    "identical.phases",
    "identical.p",
    "normalize",
];

impl DistConfig {
    pub fn coxian(p: &[f64], mu: &[f64]) -> Self {
        Self {
            p: Some(p.to_vec()),
            mu: Some(mu.to_vec()),
            ..Self::default()
        }
    }

    /// The four-phase distribution used throughout the experiments:
    /// `p = (0.5, 0.5, 0.5)`, `mu = 1.875` in every phase.
    pub fn coxian4() -> Self {
        Self::coxian(&[0.5, 0.5, 0.5, 1.0], &[1.875; 4])
    }

    pub fn build(&self) -> Result<CoxianDist> {
        let forms = [
            self.mu.is_some(),
            self.erlang.is_some(),
            self.identical.is_some(),
        ];
        if forms.iter().filter(|x| **x).count() != 1 {
            bail!("dist: give exactly one of `mu` (with `p`), `erlang`, `identical`");
        }
        let dist = if let Some(mu) = &self.mu {
            let p = self.p.clone().unwrap_or_default();
            CoxianDist::new(&p, mu).map_err(|e| anyhow!("dist: {e}"))?
        } else if let Some(k) = self.erlang {
            if self.p.is_some() {
                bail!("dist: `p` is only valid together with `mu`");
            }
            if k == 0 {
                bail!("dist: `erlang` must be at least 1");
            }
            CoxianDist::erlang(k).map_err(|e| anyhow!("dist: {e}"))?
        } else {
            let id = self.identical.as_ref().unwrap();
            if self.p.is_some() {
                bail!("dist: `p` is only valid together with `mu`");
            }
            if id.phases == 0 {
                bail!("dist: `identical.phases` must be at least 1");
            }
            CoxianDist::identical_rates(id.phases, id.p).map_err(|e| anyhow!("dist: {e}"))?
        };
        Ok(if self.normalize.unwrap_or(true) {
            dist.normalize()
        } else {
            dist
        })
    }
}

/// Parses `jsq`, `jiq`, `i1f`, `pod:<d>` or `pod:alpha=<a>`.
pub fn parse_policy(s: &str) -> Result<PolicySpec> {
    let lower = s.trim().to_ascii_lowercase();
    Ok(match lower.as_str() {
        "jsq" => PolicySpec::Jsq,
        "jiq" => PolicySpec::Jiq,
        "i1f" | "idle-one-first" => PolicySpec::IdleOneFirst,
        _ => {
            let rest = lower.strip_prefix("pod:").ok_or_else(|| {
                anyhow!("policy `{s}`: expected jsq, jiq, i1f, pod:<d> or pod:alpha=<a>")
            })?;
            if let Some(a) = rest.strip_prefix("alpha=") {
                let alpha: f64 = a
                    .parse()
                    .with_context(|| format!("policy `{s}`: bad alpha"))?;
                if !(alpha > 0.0 && alpha < 1.0) {
                    bail!("policy `{s}`: alpha must lie in (0, 1)");
                }
                PolicySpec::PowerOfD(SampleSize::Formula { alpha })
            } else {
                let d: usize = rest
                    .parse()
                    .with_context(|| format!("policy `{s}`: bad sample size"))?;
                if d == 0 {
                    bail!("policy `{s}`: sample size must be at least 1");
                }
                PolicySpec::PowerOfD(SampleSize::Fixed(d))
            }
        }
    })
}

pub fn policy_label(p: &PolicySpec) -> String {
    match p {
        PolicySpec::Jsq => "jsq".into(),
        PolicySpec::Jiq => "jiq".into(),
        PolicySpec::IdleOneFirst => "i1f".into(),
        PolicySpec::PowerOfD(SampleSize::Fixed(d)) => format!("pod:{d}"),
        PolicySpec::PowerOfD(SampleSize::Formula { alpha }) => format!("pod:alpha={alpha}"),
    }
}

/// Load given either directly or through the regime `1 - beta N^-alpha`.
/// An explicit `lambda` wins when both are present.
#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl LoadConfig {
    pub fn build(&self) -> Result<Load> {
        match (self.lambda, self.alpha) {
            (Some(l), _) => Ok(Load::Explicit(l)),
            (None, Some(alpha)) => Ok(Load::Regime {
                alpha,
                beta: self.beta.unwrap_or(1.0),
            }),
            (None, None) => bail!("load: give `lambda` or `alpha`"),
        }
    }
}

fn horizon(events: Option<u64>, time: Option<f64>) -> Result<Horizon> {
    match (events, time) {
        (Some(_), Some(_)) => bail!("give only one of `events` and `time`"),
        (Some(e), None) => Ok(Horizon::Events(e)),
        (None, Some(t)) => Ok(Horizon::Time(t)),
        (None, None) => Ok(Horizon::Events(1_000_000)),
    }
}

fn init(s: Option<&str>) -> Result<Init> {
    match s.unwrap_or("equilibrium") {
        "equilibrium" => Ok(Init::Equilibrium),
        "empty" => Ok(Init::Empty),
        other => bail!("init `{other}`: expected `equilibrium` or `empty`"),
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub servers: Vec<usize>,
    pub buffer: usize,
    pub policies: Vec<String>,
    pub dists: Vec<DistConfig>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub events: Option<u64>,
    pub time: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub trials: Option<usize>,
    pub trajectory_interval: Option<f64>,
    pub init: Option<String>,
    pub seed: Option<u64>,
}

pub const SIMULATE_KEYS: &[&str] = &[
    "servers",
    "buffer",
    "policies",
    "dists",
    "lambda",
    "alpha",
    "beta",
    "events",
    "time",
    "warmup_fraction",
    "trials",
    "trajectory_interval",
    "init",
    "seed",
];

/// One grid point with everything but the seed fixed.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub config: zerowait_core::SimConfig,
    pub policy_label: String,
}

impl SimulateConfig {
    pub fn trials(&self) -> usize {
        self.trials.unwrap_or(10)
    }

    /// Expands the grid in the order servers, policies, dists and validates
    /// every point.
    pub fn expand(&self) -> Result<Vec<GridPoint>> {
        let points = self.servers.len() * self.policies.len() * self.dists.len();
        if points == 0 {
            bail!("`servers`, `policies` and `dists` must all be non-empty");
        }
        if self.trials() == 0 {
            bail!("`trials` must be at least 1");
        }
        let runs = points.saturating_mul(self.trials());
        if runs > MAX_RUNS {
            bail!("grid expands to {runs} runs; the limit is {MAX_RUNS}");
        }
        let load = LoadConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
        }
        .build()?;
        let horizon = horizon(self.events, self.time)?;
        let init = init(self.init.as_deref())?;
        let policies = self
            .policies
            .iter()
            .map(|p| parse_policy(p))
            .collect::<Result<Vec<_>>>()?;
        let dists = self
            .dists
            .iter()
            .enumerate()
            .map(|(i, d)| d.build().with_context(|| format!("dists[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(runs);
        for &n in &self.servers {
            for policy in &policies {
                for dist in &dists {
                    let mut c =
                        zerowait_core::SimConfig::new(n, self.buffer, dist.clone(), *policy, load);
                    c.horizon = horizon;
                    c.init = init;
                    c.trajectory_interval = self.trajectory_interval;
                    if let Some(w) = self.warmup_fraction {
                        c.warmup_fraction = w;
                    }
                    c.validate().map_err(|e| anyhow!("servers = {n}: {e}"))?;
                    out.push(GridPoint {
                        config: c,
                        policy_label: policy_label(policy),
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IsspConfig {
    pub dist: DistConfig,
    /// `ideal` (default) or `rigorous`.
    pub mode: Option<String>,
    pub lambda: Option<f64>,
    pub servers: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    /// `collapsed` (default) or `literal`.
    pub ordering: Option<String>,
    pub buffer: Option<usize>,
}

pub const ISSP_KEYS: &[&str] = &[
    "dist",
    "mode",
    "lambda",
    "servers",
    "alpha",
    "iterations",
    "ordering",
    "buffer",
];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeanfieldConfig {
    pub dist: DistConfig,
    pub lambda: f64,
    pub t_end: f64,
    pub h: Option<f64>,
    pub sample_every: Option<usize>,
    /// `zero` (default), `equilibrium`, or explicit `s_{1,m}` values.
    pub initial: Option<serde_json::Value>,
}

pub const MEANFIELD_KEYS: &[&str] = &["dist", "lambda", "t_end", "h", "sample_every", "initial"];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub servers: usize,
    pub buffer: usize,
    pub dist: DistConfig,
    pub policy: String,
    pub lambda: f64,
    pub dump_pi: Option<bool>,
}

pub const EXACT_KEYS: &[&str] = &["servers", "buffer", "dist", "policy", "lambda", "dump_pi"];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub dist: DistConfig,
    pub buffer: Option<usize>,
    pub servers: Option<f64>,
    pub alpha: Option<f64>,
}

pub const CONSTANTS_KEYS: &[&str] = &["dist", "buffer", "servers", "alpha"];

/// Shared by the `verse-N`, `verse-M` and `trajectory` recipes; every key is
/// optional and falls back to the recipe's defaults.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    pub servers: Option<Vec<usize>>,
    pub policies: Option<Vec<String>>,
    pub phases: Option<Vec<usize>>,
    pub dist: Option<DistConfig>,
    pub alpha: Option<f64>,
    pub buffer: Option<usize>,
    pub events: Option<u64>,
    pub time: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub trials: Option<usize>,
    pub trajectory_interval: Option<f64>,
}

pub const RECIPE_KEYS: &[&str] = &[
    "servers",
    "policies",
    "phases",
    "dist",
    "alpha",
    "buffer",
    "events",
    "time",
    "warmup_fraction",
    "trials",
    "trajectory_interval",
];

impl RecipeConfig {
    pub fn horizon(&self, default: Horizon) -> Result<Horizon> {
        match (self.events, self.time) {
            (None, None) => Ok(default),
            (e, t) => horizon(e, t),
        }
    }

    pub fn policies(&self, default: &[&str]) -> Result<Vec<PolicySpec>> {
        match &self.policies {
            Some(p) => p.iter().map(|s| parse_policy(s)).collect(),
            None => default.iter().map(|s| parse_policy(s)).collect(),
        }
    }
}

/// Reads and parses a JSON config; errors carry the file name plus the line
/// and column of the offending key.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("{}", path.display()))
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| anyhow!("{e}"))
}

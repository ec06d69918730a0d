//! Experiment runner for the `zerowait-core` simulator.
//!
//! Every subcommand reads one JSON config, writes CSV tables into an output
//! directory and is deterministic given the seed base. Trials run in parallel
//! on a fixed-size thread pool; results are always written in grid order.

pub mod commands;
pub mod config;
pub mod output;
pub mod recipes;

use std::path::PathBuf;

/// Environment variable that sets the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "ZEROWAIT_WORKERS";

/// Shared settings for one invocation.
pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
    pub pool: rayon::ThreadPool,
}

impl Context {
    pub fn new(out: PathBuf, seed: u64, workers: usize) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&out)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()?;
        Ok(Self { out, seed, pool })
    }
}

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1: the config could not be read, parsed or validated.
    Config(anyhow::Error),
    /// Exit 2: the run itself failed.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e:#}"),
        }
    }
}

pub(crate) trait ConfigResult<T> {
    fn config(self) -> Result<T, Failure>;
}

impl<T> ConfigResult<T> for anyhow::Result<T> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(Failure::Config)
    }
}

pub(crate) trait RuntimeResult<T> {
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> RuntimeResult<T> for Result<T, E> {
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("distribution needs at least one phase")]
    NoPhases,
    #[error("`p` has {got} entries but {phases} phases need {} (or {phases} with a trailing 1.0)", phases - 1)]
    ContinuationLength { phases: usize, got: usize },
    #[error("`p` trailing entry must be 1.0 when {phases} values are given, got {value}")]
    TrailingContinuation { phases: usize, value: f64 },
    #[error("`p[{index}]` = {value} is outside [0, 1]")]
    InvalidContinuation { index: usize, value: f64 },
    #[error("`mu[{index}]` = {value} must be finite and > 0")]
    InvalidRate { index: usize, value: f64 },
    #[error("distribution is not normalized: mean service time {mean}")]
    NotNormalized { mean: f64 },
    #[error("phase {phase} is never reached (a continuation probability is 0)")]
    UnreachablePhase { phase: usize },
    #[error("{0} needs at least two phases")]
    SinglePhase(&'static str),
    #[error("load {0} must lie in (0, 1]")]
    InvalidLoad(f64),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state dimensions must be positive (N={servers}, b={buffer}, M={phases})")]
    BadDimensions {
        servers: usize,
        buffer: usize,
        phases: usize,
    },
    #[error("expected {expected} cell counts, got {got}")]
    CountLength { expected: usize, got: usize },
    #[error("busy servers {busy} exceed N = {servers}")]
    TooManyServers { busy: u64, servers: usize },
    #[error("cell (j={level}, m={phase}) is outside the b x M grid")]
    CellOutOfRange { level: usize, phase: usize },
    #[error("no server in cell (j={level}, m={phase})")]
    EmptyCell { level: usize, phase: usize },
    #[error("no idle server available")]
    NoIdleServer,
    #[error("arrival to a server with b jobs overflows the buffer")]
    BufferOverflow,
    #[error("a job arriving at an idle server starts in phase 1, not {0}")]
    IdleArrivalPhase(usize),
    #[error("phase {0} is the last phase and cannot advance")]
    LastPhase(usize),
    #[error("S-view is not monotone in column m={phase}")]
    NotMonotone { phase: usize },

    #[error("incremental event rate {incremental} drifted from recomputed {recomputed}")]
    RateDrift { incremental: f64, recomputed: f64 },

    #[error("non-finite fluid state at t = {t}")]
    NonFinite { t: f64 },

    #[error("state space has {count} states, above the cap of {cap}")]
    StateSpaceTooLarge { count: u128, cap: usize },
    #[error("chain is reducible: states {0:?} are not mutually reachable from the empty state")]
    Reducible(Vec<usize>),
    #[error("linear system is singular at pivot {0}")]
    Singular(usize),
    #[error("power iteration did not converge in {iterations} sweeps (last change {change})")]
    NoConvergence { iterations: usize, change: f64 },
}

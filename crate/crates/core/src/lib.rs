//! Simulation and analysis core for zero-waiting load balancing in
//! many-server systems whose service times follow a Coxian distribution.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! and parallel replica execution live in the `zerowait-cli` companion crate.
//!
//! Modules:
//!
//! - [`coxian`]: the service distribution and every closed-form constant
//!   derived from it.
//! - [`state`]: aggregate server counts and the three CTMC transitions.
//! - [`policy`]: JSQ, JIQ, Idle-One-First and power-of-d routing.
//! - [`engine`]: exact next-event simulation of the aggregate chain.
//! - [`issp`]: the iterative lower/upper bound recursion and the theorem bounds.
//! - [`meanfield`]: the fluid model and a fixed-step RK4 integrator.
//! - [`exact`]: state enumeration, generator assembly and stationary solves
//!   for tiny systems, plus an empirical check of the drift tail bound.
#![no_std]
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod coxian;
pub mod engine;
mod error;
pub mod exact;
pub mod issp;
pub mod meanfield;
pub mod policy;
pub mod seed;
pub mod state;

pub use coxian::{CoxianDist, DerivedConstants};
pub use engine::{Horizon, Init, Load, SimConfig, SteadyMetrics};
pub use error::Error;
pub use exact::ExactChain;
pub use issp::IsspTrace;
pub use policy::{Destination, PolicySpec};
pub use state::SystemState;

pub type Result<T, E = Error> = core::result::Result<T, E>;

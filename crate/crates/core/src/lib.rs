//! Peak-ramp minimization for a fleet of prosumers with elastic demand and
//! storage: a centralized epigraph LP, synchronous consensus ADMM, and
//! asynchronous ADMM driven by a simulated delay model.

pub mod async_admm;
pub mod centralized;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod model;
pub mod qp;
pub mod scenario;
pub mod sync_admm;
pub mod trace;

pub use async_admm::{run_async, AsyncRun, DelayModel};
pub use centralized::{solve_centralized, CentralizedSolution};
pub use error::{Error, Result};
pub use metrics::{compare, ComparisonReport};
pub use model::{HyperParams, ProsumerParams, Scenario, Schedule, SystemSolution};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
pub use scenario::{baseline_schedule, generate, GenConfig};
pub use sync_admm::{run_sync, SyncRun};
pub use trace::ConvergenceTrace;

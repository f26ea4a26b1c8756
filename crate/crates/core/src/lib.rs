//! Optimistic planning for switched discrete-time systems.
//!
//! [`planner::plan`] runs the OPmin best-first search: it repeatedly expands
//! the open leaf with the smallest discounted cost and returns the horizon
//! it reached, the optimal value at that horizon and a minimizing input
//! sequence. [`sim::closed_loop`] applies the first input in receding
//! horizon. [`bounds`] evaluates the near-optimality and stability
//! certificates, [`oracle`] provides brute-force references, and
//! [`commands`] drives config-file experiments that write CSV files.
//!
//! ```
//! use opmin::{plan, cubic_integrator};
//!
//! let sys = cubic_integrator();
//! let result = plan(&sys, &[-1.0, 1.5], 1.0, 30).unwrap();
//! assert!(result.horizon >= 2);
//! assert_eq!(result.sequence.len(), result.horizon + 1);
//! ```

pub mod bounds;
pub mod commands;
pub mod config;
pub mod error;
pub mod oracle;
pub mod planner;
pub mod sim;
pub mod system;

pub use bounds::{
    d_tilde, error_bound_general, error_bound_linear, ges_condition, min_d_bar, running_cost_gap,
    ComparisonData, BoundParams, ComparisonFunction, LinearBoundParams, StabilityCertificate,
};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use oracle::{brute_force_value, OracleResult};
pub use planner::{
    budget_for_stability, min_budget_for_depth, plan, plan_with_trace, PlanResult, SearchStats,
};
pub use sim::{closed_loop, running_cost, Trajectory};
pub use system::{
    build_system, cubic_integrator, rollout, step, InputSequence, SwitchedSystem, SystemSpec,
};

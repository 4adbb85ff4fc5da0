//! Time-optimal trajectory planning for redundant manipulators along a
//! prescribed task-space path.
//!
//! The planner searches jointly over timing and redundancy resolution by
//! dynamic programming on a grid of (stage, pseudo-velocity, redundancy
//! parameter, IK branch) nodes. A two-stage baseline and an exhaustive
//! oracle are included for comparison and verification.

// Bound and config checks are written as `!(x <= b)` on purpose: NaN
// fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod commands;
pub mod constraints;
pub mod grid;
pub mod oracle;
pub mod par;
pub mod path;
pub mod planner;
pub mod report;
pub mod robot;
pub mod scenario;

pub use constraints::{LimitSets, Order};
pub use grid::{build_grid, GridSpec, StateGrid};
pub use path::{sample_path, CurveSpec, WorkspacePath};
pub use planner::{plan, Objective, PlanResult, PlannerOptions, TimeObjective};
pub use robot::{PlanarArm, RobotModel};

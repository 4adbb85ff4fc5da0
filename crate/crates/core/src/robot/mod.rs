//! Manipulator abstraction used by the planner.
//!
//! A [`RobotModel`] bundles forward kinematics, branch-enumerated
//! non-redundant inverse kinematics, the geometric Jacobian, inverse
//! dynamics and the per-joint limit table. Redundancy is resolved by joint
//! space decomposition: `r = n - m` joints are picked as redundancy
//! parameters and the remaining `m` joints are solved analytically, one
//! solution per branch index.

mod description;
mod planar;

pub use description::{DynamicsDescription, LinkDescription, RobotDescription};
pub use planar::{PlanarArm, PlanarLink, PlanarTask};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joint positions, one entry per joint (rad).
pub type JointState = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),
    #[error("invalid joint limits for joint {joint}: {reason}")]
    InvalidLimits { joint: usize, reason: String },
    #[error("invalid dynamic parameters: {0}")]
    InvalidDynamics(String),
}

/// Failure modes of the non-redundant inverse kinematics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    /// The residual subchain cannot reach the target for these parameters.
    #[error("target unreachable by the residual subchain (distance {distance:.6}, reach [{min_reach:.6}, {max_reach:.6}])")]
    Unreachable {
        distance: f64,
        min_reach: f64,
        max_reach: f64,
    },
    /// Branches coincide; only branch 0 carries the solution.
    #[error("branch {branch} coincides with branch 0 at this pose")]
    BranchDegenerate { branch: usize },
    #[error("branch index {branch} out of range (branch count {count})")]
    BadBranch { branch: usize, count: usize },
    #[error("expected {expected} redundancy parameters, got {got}")]
    BadParameters { expected: usize, got: usize },
}

/// A successful IK query.
#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointState,
    /// Set when every branch maps to this same configuration.
    pub degenerate: bool,
}

/// Joint count, task dimension and the redundancy-parameter selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub n: usize,
    pub m: usize,
    pub redundancy_joints: Vec<usize>,
}

impl KinematicChain {
    pub fn new(n: usize, m: usize, redundancy_joints: Vec<usize>) -> Result<Self, RobotError> {
        if m < 1 || n <= m {
            return Err(RobotError::InvalidChain(format!(
                "need n > m >= 1, got n = {n}, m = {m}"
            )));
        }
        if redundancy_joints.len() != n - m {
            return Err(RobotError::InvalidChain(format!(
                "{} redundancy joints given, redundancy degree is {}",
                redundancy_joints.len(),
                n - m
            )));
        }
        for (k, &idx) in redundancy_joints.iter().enumerate() {
            if idx >= n {
                return Err(RobotError::InvalidChain(format!(
                    "redundancy joint index {idx} out of range"
                )));
            }
            if redundancy_joints[..k].contains(&idx) {
                return Err(RobotError::InvalidChain(format!(
                    "redundancy joint index {idx} repeated"
                )));
            }
        }
        Ok(Self {
            n,
            m,
            redundancy_joints,
        })
    }

    pub fn redundancy_degree(&self) -> usize {
        self.n - self.m
    }
}

/// One row of the limit table. Rate and effort bounds are symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub q_min: f64,
    pub q_max: f64,
    pub qd_max: f64,
    pub qdd_max: f64,
    pub qddd_max: f64,
    pub tau_max: f64,
    pub tau_dot_max: f64,
}

impl JointLimit {
    /// Builds a limit from the seven-column table layout
    /// `[q_min, q_max, qd, qdd, qddd, tau, tau_dot]`.
    pub fn from_row(row: [f64; 7]) -> Self {
        Self {
            q_min: row[0],
            q_max: row[1],
            qd_max: row[2],
            qdd_max: row[3],
            qddd_max: row[4],
            tau_max: row[5],
            tau_dot_max: row[6],
        }
    }

    pub fn to_row(&self) -> [f64; 7] {
        [
            self.q_min,
            self.q_max,
            self.qd_max,
            self.qdd_max,
            self.qddd_max,
            self.tau_max,
            self.tau_dot_max,
        ]
    }

    pub fn validate(&self, joint: usize) -> Result<(), RobotError> {
        let bad = |reason: &str| RobotError::InvalidLimits {
            joint,
            reason: reason.to_string(),
        };
        if !(self.q_min < self.q_max) {
            return Err(bad("q_min must be below q_max"));
        }
        let rates = [
            self.qd_max,
            self.qdd_max,
            self.qddd_max,
            self.tau_max,
            self.tau_dot_max,
        ];
        if rates.iter().any(|b| !(*b > 0.0)) {
            return Err(bad("rate and effort bounds must be strictly positive"));
        }
        Ok(())
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.q_min && q <= self.q_max
    }
}

/// The interface the planner and the baseline consume.
///
/// Implementations must be pure: every method is a function of its
/// arguments only, so one model can be shared across worker threads.
pub trait RobotModel: Send + Sync {
    fn chain(&self) -> &KinematicChain;

    fn limits(&self) -> &[JointLimit];

    fn dof(&self) -> usize {
        self.chain().n
    }

    fn task_dim(&self) -> usize {
        self.chain().m
    }

    fn redundancy_degree(&self) -> usize {
        self.chain().redundancy_degree()
    }

    /// Number of IK solutions enumerated per (pose, redundancy parameters).
    fn branch_count(&self) -> usize;

    fn forward_kinematics(&self, q: &JointState) -> DVector<f64>;

    /// Solves the non-redundant IK for the residual joints given the
    /// redundancy parameters `v` and the branch `g`.
    fn inverse_kinematics(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        g: usize,
    ) -> Result<IkSolution, IkError>;

    /// Branch index the configuration belongs to.
    fn branch_of(&self, q: &JointState) -> usize;

    /// Values of the redundancy-parameter joints of `q`.
    fn redundancy_parameters(&self, q: &JointState) -> DVector<f64> {
        let sel = &self.chain().redundancy_joints;
        DVector::from_iterator(sel.len(), sel.iter().map(|&k| q[k]))
    }

    /// Task-space Jacobian, `m x n`.
    fn jacobian(&self, q: &JointState) -> DMatrix<f64>;

    fn inertia_matrix(&self, q: &JointState) -> DMatrix<f64>;

    /// Coriolis/centrifugal, friction and gravity torques.
    fn bias_forces(&self, q: &JointState, qd: &DVector<f64>) -> DVector<f64>;

    /// True if some joint carries Coulomb friction, which makes the torque
    /// discontinuous where that joint's velocity changes sign.
    fn has_coulomb_friction(&self) -> bool {
        false
    }

    fn inverse_dynamics(
        &self,
        q: &JointState,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
    ) -> DVector<f64> {
        self.inertia_matrix(q) * qdd + self.bias_forces(q, qd)
    }

    /// True if every joint lies within its position limits.
    fn within_position_limits(&self, q: &JointState) -> bool {
        self.limits()
            .iter()
            .zip(q.iter())
            .all(|(lim, &qk)| lim.contains(qk))
    }
}

//! Two-stage comparison pipeline: resolve the redundancy first with a
//! local Jacobian scheme, then time-parametrize the fixed joint path.
//!
//! Per waypoint, warm-started from the previous solution:
//!
//! ```text
//! q <- q + beta J+ e - alpha (I - J+ J) grad c(q)
//! c(q) = |H J+ t|^2
//! ```
//!
//! with `e` the task error and `t` the unit path tangent. The cost rewards
//! configurations that accelerate easily along the path. Only the first
//! iteration at a waypoint carries the null-space term; the rest drive the
//! task error below the tolerance with `beta J+ e` alone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::LimitSets;
use crate::grid::{GridError, StateGrid};
use crate::path::{PathError, WorkspacePath};
use crate::planner::{plan, PlanError, PlanResult, PlannerOptions, TimeObjective};
use crate::robot::{JointState, RobotModel};

/// Finite-difference step for the cost gradient (rad).
pub const GRADIENT_STEP: f64 = 1e-6;
/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("no convergence at waypoint {stage} (residual {residual:e})")]
    NoConvergence { stage: usize, residual: f64 },
    #[error("singular Jacobian at waypoint {stage} (condition number {condition:e})")]
    SingularJacobian { stage: usize, condition: f64 },
    #[error("invalid resolution config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn default_alpha() -> f64 {
    1e-4
}
fn default_beta() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    500
}
fn default_max_condition() -> f64 {
    1e8
}
fn default_step_cap() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    /// Null-space gain.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Task-error gain.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Stop once the task error norm drops below this (m).
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Configuration the first waypoint starts from.
    pub q0: Vec<f64>,
    #[serde(default = "default_max_condition")]
    pub max_condition: f64,
    /// Joint-space distance between consecutive waypoints above which a
    /// branch jump is flagged (rad).
    #[serde(default = "default_step_cap")]
    pub step_cap: f64,
}

impl ResolutionConfig {
    pub fn new(q0: Vec<f64>) -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            q0,
            max_condition: default_max_condition(),
            step_cap: default_step_cap(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidConfig(m.into()));
        if !(self.alpha >= 0.0) || !(self.beta > 0.0) {
            return bad("need alpha >= 0 and beta > 0");
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return bad("need tol > 0 and max_iter >= 1");
        }
        if self.q0.len() != n {
            return bad("q0 length must equal the joint count");
        }
        if !(self.max_condition > 1.0) || !(self.step_cap > 0.0) {
            return bad("need max_condition > 1 and step_cap > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointPath {
    pub q: Vec<JointState>,
    /// Iterations spent per waypoint.
    pub iterations: Vec<usize>,
    /// Final task error norm per waypoint.
    pub residuals: Vec<f64>,
    /// Waypoints whose step from the previous one exceeds the cap.
    pub branch_jumps: Vec<usize>,
    /// Gain `alpha = 0`: no null-space motion.
    pub pure_pseudo_inverse: bool,
}

/// Moore-Penrose pseudo-inverse by SVD, with the relative rank cut-off.
/// Returns the inverse and the condition number over the retained values.
pub fn pseudo_inverse(j: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let svd = j.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let cut = RANK_TOLERANCE * s_max;
    let s_min = svd.singular_values.min();
    let condition = if s_min > cut {
        s_max / s_min
    } else {
        f64::INFINITY
    };
    let pinv = svd
        .pseudo_inverse(cut)
        .expect("SVD computed with both singular vector sets");
    (pinv, condition)
}

/// `c(q) = t^T (H J+)^T (H J+) t`.
pub fn dynamic_manipulability_cost(
    robot: &dyn RobotModel,
    q: &JointState,
    tangent: &DVector<f64>,
) -> f64 {
    let (pinv, _) = pseudo_inverse(&robot.jacobian(q));
    let w = robot.inertia_matrix(q) * (pinv * tangent);
    w.norm_squared()
}

/// Central-difference gradient of the cost.
pub fn cost_gradient(
    robot: &dyn RobotModel,
    q: &JointState,
    tangent: &DVector<f64>,
) -> DVector<f64> {
    let n = q.len();
    DVector::from_iterator(
        n,
        (0..n).map(|k| {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += GRADIENT_STEP;
            qm[k] -= GRADIENT_STEP;
            (dynamic_manipulability_cost(robot, &qp, tangent)
                - dynamic_manipulability_cost(robot, &qm, tangent))
                / (2.0 * GRADIENT_STEP)
        }),
    )
}

/// Null-space component `(I - J+ J) g`.
pub fn null_space_projection(
    j: &DMatrix<f64>,
    pinv: &DMatrix<f64>,
    g: &DVector<f64>,
) -> DVector<f64> {
    g - pinv * (j * g)
}

pub fn resolve_redundancy(
    robot: &dyn RobotModel,
    path: &WorkspacePath,
    config: &ResolutionConfig,
) -> Result<JointPath, BaselineError> {
    config.validate(robot.dof())?;
    let count = path.waypoint_count();
    let mut q = DVector::from_column_slice(&config.q0);
    let mut out = JointPath {
        q: Vec::with_capacity(count),
        iterations: Vec::with_capacity(count),
        residuals: Vec::with_capacity(count),
        branch_jumps: Vec::new(),
        pure_pseudo_inverse: config.alpha == 0.0,
    };
    for i in 0..count {
        let target = path.waypoint(i);
        let tangent = if path.stages() > 0 {
            path.tangent(i)?
        } else {
            DVector::zeros(path.dim())
        };
        let mut iterations = 0;
        let residual = loop {
            let e = target - robot.forward_kinematics(&q);
            let norm = e.norm();
            if norm < config.tol {
                break norm;
            }
            if iterations == config.max_iter {
                return Err(BaselineError::NoConvergence {
                    stage: i,
                    residual: norm,
                });
            }
            let j = robot.jacobian(&q);
            let (pinv, condition) = pseudo_inverse(&j);
            if condition > config.max_condition {
                return Err(BaselineError::SingularJacobian {
                    stage: i,
                    condition,
                });
            }
            let mut step = &pinv * e * config.beta;
            // Null-space motion happens once per waypoint; the remaining
            // iterations only correct the task error. Moving in the null
            // space every iteration leaves a second-order task drift that
            // the corrector would chase forever.
            if config.alpha > 0.0 && iterations == 0 {
                let grad = cost_gradient(robot, &q, &tangent);
                step -= null_space_projection(&j, &pinv, &grad) * config.alpha;
            }
            q += step;
            iterations += 1;
        };
        if let Some(prev) = out.q.last() {
            if (&q - prev).norm() > config.step_cap {
                out.branch_jumps.push(i);
            }
        }
        out.q.push(q.clone());
        out.iterations.push(iterations);
        out.residuals.push(residual);
    }
    Ok(out)
}

/// Time-optimal timing of a fixed joint path, using the planner on a grid
/// with one cell per stage.
pub fn time_parametrize(
    robot: &dyn RobotModel,
    path: &WorkspacePath,
    joint_path: &[JointState],
    limits: &LimitSets,
    pv_max: f64,
    pv_levels: usize,
    rest_to_rest: bool,
) -> Result<PlanResult, BaselineError> {
    let grid = StateGrid::pinned(robot, path, joint_path, pv_max, pv_levels, rest_to_rest)?;
    Ok(plan(
        robot,
        &grid,
        limits,
        &TimeObjective,
        &PlannerOptions::default(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{sample_path, CurveSpec};
    use crate::robot::PlanarArm;

    fn start(arm: &PlanarArm) -> Vec<f64> {
        let x = DVector::from_column_slice(&[0.6, 0.25]);
        let sol = arm
            .inverse_kinematics(&x, &DVector::from_element(1, 0.2), 0)
            .unwrap();
        sol.q.iter().copied().collect()
    }

    #[test]
    fn null_space_term_is_in_jacobian_kernel() {
        let arm = PlanarArm::reference();
        let q = DVector::from_column_slice(&[0.3, 0.9, -0.4]);
        let j = arm.jacobian(&q);
        let (pinv, _) = pseudo_inverse(&j);
        let t = DVector::from_column_slice(&[0.0, -1.0]);
        let g = cost_gradient(&arm, &q, &t);
        let term = null_space_projection(&j, &pinv, &g);
        assert!((j * term).norm() < 1e-10);
    }

    #[test]
    fn cost_is_nonnegative_and_matches_dense_assembly() {
        let arm = PlanarArm::reference();
        let q = DVector::from_column_slice(&[0.1, 1.1, -0.7]);
        let t = DVector::from_column_slice(&[0.6, 0.8]);
        let c = dynamic_manipulability_cost(&arm, &q, &t);
        // J+ = J^T (J J^T)^-1 for a full-row-rank J.
        let j = arm.jacobian(&q);
        let pinv = j.transpose() * (&j * j.transpose()).try_inverse().unwrap();
        let m = arm.inertia_matrix(&q) * pinv;
        let dense = (t.transpose() * m.transpose() * &m * &t)[0];
        assert!(c >= 0.0);
        assert!((c - dense).abs() < 1e-9 * dense.max(1.0));
    }

    #[test]
    fn pure_pseudo_inverse_tracks_the_line() {
        let arm = PlanarArm::reference();
        let path = sample_path(
            &CurveSpec::StraightLine {
                start: vec![0.6, 0.25],
                end: vec![0.6, -0.25],
            },
            10,
        )
        .unwrap();
        let mut cfg = ResolutionConfig::new(start(&arm));
        cfg.alpha = 0.0;
        let jp = resolve_redundancy(&arm, &path, &cfg).unwrap();
        assert!(jp.pure_pseudo_inverse);
        for (i, q) in jp.q.iter().enumerate() {
            assert!((arm.forward_kinematics(q) - path.waypoint(i)).norm() < 1e-8);
        }
        assert!(jp.branch_jumps.is_empty());
    }

    #[test]
    fn singular_start_is_reported() {
        let arm = PlanarArm::reference();
        let path = sample_path(
            &CurveSpec::StraightLine {
                start: vec![1.0, 0.0],
                end: vec![0.9, 0.0],
            },
            2,
        )
        .unwrap();
        // Fully stretched along x: the Jacobian loses rank.
        let mut cfg = ResolutionConfig::new(vec![0.0, 0.0, 0.0]);
        cfg.max_condition = 1e6;
        assert!(matches!(
            resolve_redundancy(&arm, &path, &cfg),
            Err(BaselineError::SingularJacobian { stage: 0, .. })
        ));
    }
}

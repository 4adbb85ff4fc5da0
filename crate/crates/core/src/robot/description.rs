//! JSON robot description file.
//!
//! ```json
//! {
//!   "n": 3, "m": 2,
//!   "link_lengths": [0.45, 0.4, 0.25],
//!   "redundancy_joints": [0],
//!   "limits": [[-2.8973, 2.8973, 2.175, 15, 7500, 87, 1000], ...],
//!   "dynamics": {
//!     "links": [{"mass": 3.0, "com": [0.22, 0.0], "inertia": 0.06}, ...],
//!     "viscous": [0.05, 0.05, 0.02],
//!     "coulomb": [0, 0, 0],
//!     "gravity": [0, -9.81]
//!   }
//! }
//! ```
//!
//! Limit rows follow `[q_min, q_max, qd_max, qdd_max, qddd_max, tau_max, tau_dot_max]`.
//! Units: rad, m, kg, s, Nm.

use serde::{Deserialize, Serialize};

use super::{JointLimit, PlanarArm, PlanarLink, PlanarTask, RobotError, RobotModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDescription {
    pub mass: f64,
    pub com: [f64; 2],
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsDescription {
    pub links: Vec<LinkDescription>,
    pub viscous: Vec<f64>,
    pub coulomb: Vec<f64>,
    pub gravity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    pub n: usize,
    pub m: usize,
    pub link_lengths: Vec<f64>,
    pub redundancy_joints: Vec<usize>,
    pub limits: Vec<[f64; 7]>,
    pub dynamics: DynamicsDescription,
}

impl RobotDescription {
    pub fn from_arm(arm: &PlanarArm) -> Self {
        let chain = arm.chain();
        Self {
            n: chain.n,
            m: chain.m,
            link_lengths: arm.links().iter().map(|l| l.length).collect(),
            redundancy_joints: chain.redundancy_joints.clone(),
            limits: arm.limits().iter().map(JointLimit::to_row).collect(),
            dynamics: DynamicsDescription {
                links: arm
                    .links()
                    .iter()
                    .map(|l| LinkDescription {
                        mass: l.mass,
                        com: l.com,
                        inertia: l.inertia,
                    })
                    .collect(),
                viscous: arm.viscous().to_vec(),
                coulomb: arm.coulomb().to_vec(),
                gravity: arm.gravity(),
            },
        }
    }

    /// Builds the planar arm this file describes. The analytic IK requires
    /// the redundancy joints to be the proximal `n - m` joints.
    pub fn build(&self) -> Result<PlanarArm, RobotError> {
        let task = match self.m {
            2 => PlanarTask::Position,
            1 => PlanarTask::Orientation,
            m => {
                return Err(RobotError::InvalidChain(format!(
                    "planar arm supports m = 1 or m = 2, got {m}"
                )))
            }
        };
        if self.link_lengths.len() != self.n || self.dynamics.links.len() != self.n {
            return Err(RobotError::InvalidChain(format!(
                "expected {} links in geometry and dynamics tables",
                self.n
            )));
        }
        let proximal: Vec<usize> = (0..self.n.saturating_sub(self.m)).collect();
        if self.redundancy_joints != proximal {
            return Err(RobotError::InvalidChain(format!(
                "planar arm redundancy joints must be {proximal:?}, got {:?}",
                self.redundancy_joints
            )));
        }
        let links = self
            .link_lengths
            .iter()
            .zip(&self.dynamics.links)
            .map(|(&length, l)| PlanarLink {
                length,
                mass: l.mass,
                com: l.com,
                inertia: l.inertia,
            })
            .collect();
        PlanarArm::new(
            task,
            links,
            self.limits
                .iter()
                .map(|r| JointLimit::from_row(*r))
                .collect(),
            self.dynamics.viscous.clone(),
            self.dynamics.coulomb.clone(),
            self.dynamics.gravity,
        )
    }
}

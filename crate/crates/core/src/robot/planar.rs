//! Planar serial arm with revolute joints moving in a vertical plane.
//!
//! The proximal `r` joints are the redundancy parameters. The distal
//! subchain is either a 2R arm solving a 2-D end-effector position
//! (two elbow branches) or a single revolute joint solving the end-effector
//! orientation (one branch).

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::{IkError, IkSolution, JointLimit, JointState, KinematicChain, RobotError, RobotModel};

/// Below this `|sin(elbow)|` the two elbow branches are treated as one.
const DEGENERATE_SIN: f64 = 1e-9;
/// Slack on the reach annulus before a target is declared unreachable.
const REACH_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanarTask {
    /// End-effector position `(x, y)`, `m = 2`.
    Position,
    /// End-effector orientation angle, `m = 1`.
    Orientation,
}

impl PlanarTask {
    pub fn dim(self) -> usize {
        match self {
            PlanarTask::Position => 2,
            PlanarTask::Orientation => 1,
        }
    }
}

/// Geometry and inertia of one link. `com` is expressed in the link frame,
/// first component along the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarLink {
    pub length: f64,
    pub mass: f64,
    pub com: [f64; 2],
    /// Rotational inertia about the center of mass (kg m^2).
    pub inertia: f64,
}

impl PlanarLink {
    /// Uniform slender rod.
    pub fn rod(length: f64, mass: f64) -> Self {
        Self {
            length,
            mass,
            com: [0.5 * length, 0.0],
            inertia: mass * length * length / 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArm {
    chain: KinematicChain,
    task: PlanarTask,
    links: Vec<PlanarLink>,
    limits: Vec<JointLimit>,
    viscous: Vec<f64>,
    coulomb: Vec<f64>,
    gravity: Vector2<f64>,
}

#[inline]
fn rotate(theta: f64, v: [f64; 2]) -> Vector2<f64> {
    let (s, c) = theta.sin_cos();
    Vector2::new(c * v[0] - s * v[1], s * v[0] + c * v[1])
}

#[inline]
fn perp(v: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-v.y, v.x)
}

#[inline]
fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a % two_pi;
    if w > std::f64::consts::PI {
        w -= two_pi;
    } else if w <= -std::f64::consts::PI {
        w += two_pi;
    }
    w
}

impl PlanarArm {
    pub fn new(
        task: PlanarTask,
        links: Vec<PlanarLink>,
        limits: Vec<JointLimit>,
        viscous: Vec<f64>,
        coulomb: Vec<f64>,
        gravity: [f64; 2],
    ) -> Result<Self, RobotError> {
        let n = links.len();
        let m = task.dim();
        if n <= m {
            return Err(RobotError::InvalidChain(format!(
                "{n} joints cannot be redundant for a {m}-D task"
            )));
        }
        let chain = KinematicChain::new(n, m, (0..n - m).collect())?;
        if limits.len() != n || viscous.len() != n || coulomb.len() != n {
            return Err(RobotError::InvalidChain(format!(
                "per-joint tables must have {n} rows"
            )));
        }
        for (k, lim) in limits.iter().enumerate() {
            lim.validate(k)?;
        }
        for (k, link) in links.iter().enumerate() {
            if !(link.length > 0.0) {
                return Err(RobotError::InvalidChain(format!(
                    "link {k} length must be positive"
                )));
            }
            if link.mass < 0.0 || link.inertia < 0.0 {
                return Err(RobotError::InvalidDynamics(format!(
                    "link {k} has negative mass or inertia"
                )));
            }
        }
        if viscous.iter().chain(coulomb.iter()).any(|&c| c < 0.0) {
            return Err(RobotError::InvalidDynamics(
                "friction coefficients must be non-negative".into(),
            ));
        }
        Ok(Self {
            chain,
            task,
            links,
            limits,
            viscous,
            coulomb,
            gravity: Vector2::new(gravity[0], gravity[1]),
        })
    }

    /// The 3R reference arm: vertical plane, gravity on, position task,
    /// redundancy parameter `q0`.
    pub fn reference() -> Self {
        let links = vec![
            PlanarLink {
                length: 0.45,
                mass: 3.0,
                com: [0.22, 0.0],
                inertia: 0.06,
            },
            PlanarLink {
                length: 0.40,
                mass: 2.0,
                com: [0.20, 0.0],
                inertia: 0.03,
            },
            PlanarLink {
                length: 0.25,
                mass: 1.0,
                com: [0.10, 0.0],
                inertia: 0.008,
            },
        ];
        let limits = vec![
            JointLimit::from_row([-2.8973, 2.8973, 2.1750, 15.0, 7500.0, 87.0, 1000.0]),
            JointLimit::from_row([-2.8973, 2.8973, 2.1750, 10.0, 5000.0, 87.0, 1000.0]),
            JointLimit::from_row([-2.8973, 2.8973, 2.6100, 15.0, 7500.0, 12.0, 1000.0]),
        ];
        Self::new(
            PlanarTask::Position,
            links,
            limits,
            vec![0.05, 0.05, 0.02],
            vec![0.0, 0.0, 0.0],
            [0.0, -9.81],
        )
        .expect("reference arm parameters are valid")
    }

    pub fn task(&self) -> PlanarTask {
        self.task
    }

    pub fn links(&self) -> &[PlanarLink] {
        &self.links
    }

    pub fn viscous(&self) -> &[f64] {
        &self.viscous
    }

    pub fn coulomb(&self) -> &[f64] {
        &self.coulomb
    }

    pub fn gravity(&self) -> [f64; 2] {
        [self.gravity.x, self.gravity.y]
    }

    pub fn with_gravity(mut self, gravity: [f64; 2]) -> Self {
        self.gravity = Vector2::new(gravity[0], gravity[1]);
        self
    }

    pub fn with_friction(mut self, viscous: Vec<f64>, coulomb: Vec<f64>) -> Self {
        assert_eq!(viscous.len(), self.links.len());
        assert_eq!(coulomb.len(), self.links.len());
        self.viscous = viscous;
        self.coulomb = coulomb;
        self
    }

    pub fn with_limits(mut self, limits: Vec<JointLimit>) -> Self {
        assert_eq!(limits.len(), self.links.len());
        self.limits = limits;
        self
    }

    fn absolute_angles(&self, q: &JointState) -> Vec<f64> {
        let mut theta = 0.0;
        q.iter()
            .map(|&qk| {
                theta += qk;
                theta
            })
            .collect()
    }

    /// Rigid-body inverse dynamics by a planar Newton-Euler recursion
    /// (no friction). Gravity enters as a base acceleration.
    pub fn rigid_body_torques(
        &self,
        q: &JointState,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
    ) -> DVector<f64> {
        let n = self.links.len();
        let mut omega = vec![0.0; n];
        let mut alpha = vec![0.0; n];
        let mut lever = Vec::with_capacity(n);
        let mut com = Vec::with_capacity(n);
        let mut acc_com = Vec::with_capacity(n);

        let mut w = 0.0;
        let mut a = 0.0;
        let mut theta = 0.0;
        let mut acc_origin = -self.gravity;
        for k in 0..n {
            w += qd[k];
            a += qdd[k];
            theta += q[k];
            omega[k] = w;
            alpha[k] = a;
            let link = &self.links[k];
            let r = rotate(theta, [link.length, 0.0]);
            let c = rotate(theta, link.com);
            acc_com.push(acc_origin + perp(&c) * a - c * (w * w));
            acc_origin += perp(&r) * a - r * (w * w);
            lever.push(r);
            com.push(c);
        }

        let mut tau = DVector::zeros(n);
        let mut force_next = Vector2::zeros();
        let mut moment_next = 0.0;
        for k in (0..n).rev() {
            let link = &self.links[k];
            let inertial = acc_com[k] * link.mass;
            let force = inertial + force_next;
            let moment = link.inertia * alpha[k]
                + moment_next
                + cross(&lever[k], &force_next)
                + cross(&com[k], &inertial);
            tau[k] = moment;
            force_next = force;
            moment_next = moment;
        }
        tau
    }

    /// Friction torques: viscous plus Coulomb with `sign(0) = 0`.
    pub fn friction_torques(&self, qd: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            qd.len(),
            qd.iter().enumerate().map(|(k, &v)| {
                let sign = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                self.viscous[k] * v + self.coulomb[k] * sign
            }),
        )
    }
}

impl RobotModel for PlanarArm {
    fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    fn limits(&self) -> &[JointLimit] {
        &self.limits
    }

    fn branch_count(&self) -> usize {
        match self.task {
            PlanarTask::Position => 2,
            PlanarTask::Orientation => 1,
        }
    }

    fn forward_kinematics(&self, q: &JointState) -> DVector<f64> {
        let theta = self.absolute_angles(q);
        match self.task {
            PlanarTask::Position => {
                let mut p = Vector2::zeros();
                for (link, &t) in self.links.iter().zip(&theta) {
                    p += rotate(t, [link.length, 0.0]);
                }
                DVector::from_column_slice(p.as_slice())
            }
            PlanarTask::Orientation => DVector::from_element(1, *theta.last().unwrap()),
        }
    }

    fn inverse_kinematics(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        g: usize,
    ) -> Result<IkSolution, IkError> {
        let n = self.links.len();
        let r = self.chain.redundancy_degree();
        if v.len() != r {
            return Err(IkError::BadParameters {
                expected: r,
                got: v.len(),
            });
        }
        let count = self.branch_count();
        if g >= count {
            return Err(IkError::BadBranch { branch: g, count });
        }
        let mut q = DVector::zeros(n);
        q.rows_mut(0, r).copy_from(v);

        if self.task == PlanarTask::Orientation {
            q[n - 1] = x[0] - v.sum();
            return Ok(IkSolution {
                q,
                degenerate: false,
            });
        }

        // Base frame of the distal 2R subchain.
        let mut theta = 0.0;
        let mut base = Vector2::zeros();
        for k in 0..r {
            theta += v[k];
            base += rotate(theta, [self.links[k].length, 0.0]);
        }
        let d = rotate(-theta, [x[0] - base.x, x[1] - base.y]);
        let l1 = self.links[r].length;
        let l2 = self.links[r + 1].length;
        let dist = d.norm();
        let mut cos_elbow = (dist * dist - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(cos_elbow.abs() <= 1.0 + REACH_SLACK) {
            return Err(IkError::Unreachable {
                distance: dist,
                min_reach: (l1 - l2).abs(),
                max_reach: l1 + l2,
            });
        }
        cos_elbow = cos_elbow.clamp(-1.0, 1.0);
        let sin_abs = (1.0 - cos_elbow * cos_elbow).sqrt();
        let degenerate = sin_abs < DEGENERATE_SIN;
        if degenerate && g != 0 {
            return Err(IkError::BranchDegenerate { branch: g });
        }
        // g = 0: positive elbow angle (elbow below the shoulder-wrist line
        // when reaching forward), g = 1: negative.
        let sin_elbow = if g == 0 { sin_abs } else { -sin_abs };
        let elbow = sin_elbow.atan2(cos_elbow);
        let shoulder = d.y.atan2(d.x) - (l2 * sin_elbow).atan2(l1 + l2 * cos_elbow);
        q[r] = wrap_angle(shoulder);
        q[r + 1] = elbow;
        Ok(IkSolution { q, degenerate })
    }

    fn branch_of(&self, q: &JointState) -> usize {
        match self.task {
            PlanarTask::Orientation => 0,
            PlanarTask::Position => {
                let r = self.chain.redundancy_degree();
                if wrap_angle(q[r + 1]).sin() >= 0.0 {
                    0
                } else {
                    1
                }
            }
        }
    }

    fn jacobian(&self, q: &JointState) -> DMatrix<f64> {
        let n = self.links.len();
        let theta = self.absolute_angles(q);
        match self.task {
            PlanarTask::Orientation => DMatrix::from_element(1, n, 1.0),
            PlanarTask::Position => {
                let mut jac = DMatrix::zeros(2, n);
                // Column i sums the lever arms of links i..n.
                let mut acc = Vector2::zeros();
                for k in (0..n).rev() {
                    acc += perp(&rotate(theta[k], [self.links[k].length, 0.0]));
                    jac[(0, k)] = acc.x;
                    jac[(1, k)] = acc.y;
                }
                jac
            }
        }
    }

    fn inertia_matrix(&self, q: &JointState) -> DMatrix<f64> {
        let n = self.links.len();
        let theta = self.absolute_angles(q);
        let mut h = DMatrix::zeros(n, n);
        // H = sum_k m_k Jv_k^T Jv_k + I_k Jw_k^T Jw_k, with Jw_k = [1 .. 1 0 .. 0].
        let mut jv = vec![Vector2::zeros(); n];
        for k in 0..n {
            let link = &self.links[k];
            let c = perp(&rotate(theta[k], link.com));
            // Column i of the COM Jacobian of link k, i <= k.
            let mut acc = c;
            jv[k] = acc;
            for i in (0..k).rev() {
                acc += perp(&rotate(theta[i], [self.links[i].length, 0.0]));
                jv[i] = acc;
            }
            for i in 0..=k {
                for j in 0..=k {
                    h[(i, j)] += link.mass * jv[i].dot(&jv[j]) + link.inertia;
                }
            }
        }
        h
    }

    fn has_coulomb_friction(&self) -> bool {
        self.coulomb.iter().any(|&c| c != 0.0)
    }

    fn bias_forces(&self, q: &JointState, qd: &DVector<f64>) -> DVector<f64> {
        let zero = DVector::zeros(q.len());
        self.rigid_body_torques(q, qd, &zero) + self.friction_torques(qd)
    }
}

//! Transition evaluation between consecutive stages.
//!
//! Derivatives are backward differences over the predecessor history:
//! `qd(i+1) = (q(i+1) - q(i)) / dt`, `qdd(i+1) = (qd(i+1) - qd(i)) / dt`,
//! one level deeper for jerk, `tau = H qdd + f` and
//! `tau_dot(i+1) = (tau(i+1) - tau(i)) / dt`. A node state therefore
//! depends on the chain that reached it, which is what the planner's
//! back-pointers provide.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::PlanResult;
use crate::robot::{JointState, RobotModel};

/// Derivative orders with a limit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Velocity,
    Acceleration,
    Jerk,
    Torque,
    TorqueRate,
}

impl Order {
    pub const ALL: [Order; 5] = [
        Order::Velocity,
        Order::Acceleration,
        Order::Jerk,
        Order::Torque,
        Order::TorqueRate,
    ];

    /// Orders whose value at stage `i + 1` depends on more than the two
    /// endpoint nodes.
    pub fn history_dependent(self) -> bool {
        self != Order::Velocity
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Order::Velocity => "velocity",
            Order::Acceleration => "acceleration",
            Order::Jerk => "jerk",
            Order::Torque => "torque",
            Order::TorqueRate => "torque_rate",
        }
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Symmetric per-joint bounds for each order; `None` disables the order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSets {
    pub bounds: [Option<Vec<f64>>; 5],
    /// Intermediate samples checked between two stages.
    pub check_points: usize,
    /// Relative tolerance for calling a value saturated.
    pub saturation_tol: f64,
}

pub const DEFAULT_SATURATION_TOL: f64 = 1e-3;

impl LimitSets {
    /// No order enabled.
    pub fn none() -> Self {
        Self {
            bounds: Default::default(),
            check_points: 0,
            saturation_tol: DEFAULT_SATURATION_TOL,
        }
    }

    /// Bounds taken from the robot's limit table for the listed orders.
    pub fn from_robot(robot: &dyn RobotModel, orders: &[Order]) -> Self {
        let mut sets = Self::none();
        for &order in orders {
            let col = robot
                .limits()
                .iter()
                .map(|lim| match order {
                    Order::Velocity => lim.qd_max,
                    Order::Acceleration => lim.qdd_max,
                    Order::Jerk => lim.qddd_max,
                    Order::Torque => lim.tau_max,
                    Order::TorqueRate => lim.tau_dot_max,
                })
                .collect();
            sets.bounds[order.index()] = Some(col);
        }
        sets
    }

    /// Every order enabled with an infinite bound.
    pub fn unbounded(n: usize) -> Self {
        let mut sets = Self::none();
        for order in Order::ALL {
            sets.bounds[order.index()] = Some(vec![f64::INFINITY; n]);
        }
        sets
    }

    pub fn with(mut self, order: Order, bounds: Vec<f64>) -> Self {
        self.bounds[order.index()] = Some(bounds);
        self
    }

    pub fn without(mut self, order: Order) -> Self {
        self.bounds[order.index()] = None;
        self
    }

    pub fn with_check_points(mut self, count: usize) -> Self {
        self.check_points = count;
        self
    }

    pub fn bound(&self, order: Order) -> Option<&[f64]> {
        self.bounds[order.index()].as_deref()
    }

    pub fn enabled(&self, order: Order) -> bool {
        self.bounds[order.index()].is_some()
    }

    pub fn enabled_orders(&self) -> Vec<Order> {
        Order::ALL
            .into_iter()
            .filter(|&o| self.enabled(o))
            .collect()
    }

    /// Enabled orders that make feasibility depend on the predecessor chain.
    pub fn history_dependent_orders(&self) -> Vec<Order> {
        self.enabled_orders()
            .into_iter()
            .filter(|o| o.history_dependent())
            .collect()
    }

    pub fn needs_dynamics(&self) -> bool {
        self.enabled(Order::Torque) || self.enabled(Order::TorqueRate)
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        for order in Order::ALL {
            if let Some(b) = self.bound(order) {
                if b.len() != n {
                    return Err(format!(
                        "{order} bounds have {} entries, expected {n}",
                        b.len()
                    ));
                }
                if b.iter().any(|&x| !(x > 0.0)) {
                    return Err(format!("{order} bounds must be strictly positive"));
                }
            }
        }
        if !(self.saturation_tol >= 0.0 && self.saturation_tol < 1.0) {
            return Err("saturation tolerance must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Which bound an infeasible transition broke.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub order: Order,
    pub joint: usize,
    pub value: f64,
    pub bound: f64,
    /// Index of the intermediate check point, `None` at the stage endpoint.
    pub check_point: Option<usize>,
}

impl Violation {
    pub fn excess(&self) -> f64 {
        self.value.abs() - self.bound
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum InfeasibleEdge {
    #[error("both pseudo-velocities are zero; the transition takes infinite time")]
    BothAtRest,
    #[error("{} bound exceeded on joint {} (|{}| > {})", .0.order, .0.joint, .0.value, .0.bound)]
    Bound(Violation),
}

impl InfeasibleEdge {
    pub fn violation(&self) -> Option<&Violation> {
        match self {
            InfeasibleEdge::Bound(v) => Some(v),
            InfeasibleEdge::BothAtRest => None,
        }
    }
}

/// Duration of the transition between two stages `step` apart.
///
/// Interior transitions use backward Euler, `step / pv_next`. When either
/// end is at rest the trapezoidal form `2 step / (pv_prev + pv_next)` is
/// used instead.
pub fn edge_duration(pv_prev: f64, pv_next: f64, step: f64) -> Result<f64, InfeasibleEdge> {
    if pv_prev == 0.0 && pv_next == 0.0 {
        Err(InfeasibleEdge::BothAtRest)
    } else if pv_prev == 0.0 || pv_next == 0.0 {
        Ok(2.0 * step / (pv_prev + pv_next))
    } else {
        Ok(step / pv_next)
    }
}

/// Kinematic and dynamic samples at one stage along a chain.
///
/// `known` counts the derivative orders of `q` backed by history: 1 gives
/// `qd`, 2 adds `qdd` and `tau`, 3 adds `qddd` and `tau_dot`. Entries that
/// are not known hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub pv: f64,
    pub q: JointState,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub qddd: DVector<f64>,
    pub tau: DVector<f64>,
    pub tau_dot: DVector<f64>,
    pub known: u8,
}

impl NodeState {
    /// State at stage 0. A node at rest has every derivative equal to zero
    /// and its gravity/friction torque; a moving start has no history.
    pub fn initial(robot: &dyn RobotModel, q: &JointState, pv: f64) -> Self {
        let n = q.len();
        if pv == 0.0 {
            let zero = DVector::zeros(n);
            let tau = robot.inverse_dynamics(q, &zero, &zero);
            Self {
                pv,
                q: q.clone(),
                qd: zero.clone(),
                qdd: zero.clone(),
                qddd: zero.clone(),
                tau,
                tau_dot: zero,
                known: 3,
            }
        } else {
            let nan = DVector::from_element(n, f64::NAN);
            Self {
                pv,
                q: q.clone(),
                qd: nan.clone(),
                qdd: nan.clone(),
                qddd: nan.clone(),
                tau: nan.clone(),
                tau_dot: nan,
                known: 0,
            }
        }
    }

    pub fn value(&self, order: Order) -> Option<&DVector<f64>> {
        let (v, need) = match order {
            Order::Velocity => (&self.qd, 1),
            Order::Acceleration => (&self.qdd, 2),
            Order::Jerk => (&self.qddd, 3),
            Order::Torque => (&self.tau, 2),
            Order::TorqueRate => (&self.tau_dot, 3),
        };
        (self.known >= need).then_some(v)
    }
}

/// One evaluated transition.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeEvaluation {
    pub dt: f64,
    /// State of the next node along this transition.
    pub next: NodeState,
    /// Enabled orders skipped for lack of history.
    pub skipped: Vec<Order>,
}

/// Interpolated sample between two stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSample {
    /// Fraction of the stage step, in `(0, 1)` for interior samples.
    pub fraction: f64,
    pub pv: f64,
    pub q: JointState,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub tau: DVector<f64>,
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn check_bound(
    limits: &LimitSets,
    order: Order,
    values: &DVector<f64>,
    check_point: Option<usize>,
) -> Result<(), InfeasibleEdge> {
    if let Some(bounds) = limits.bound(order) {
        for (joint, (&v, &b)) in values.iter().zip(bounds).enumerate() {
            // NaN never passes.
            if !(v.abs() <= b) {
                return Err(InfeasibleEdge::Bound(Violation {
                    order,
                    joint,
                    value: v,
                    bound: b,
                    check_point,
                }));
            }
        }
    }
    Ok(())
}

/// Evaluates transitions for one robot, limit set and stage step.
#[derive(Clone, Copy)]
pub struct EdgeEvaluator<'a> {
    robot: &'a dyn RobotModel,
    limits: &'a LimitSets,
    step: f64,
    /// Compute torques even when no torque order is checked.
    full_dynamics: bool,
    coulomb: bool,
}

impl<'a> EdgeEvaluator<'a> {
    pub fn new(robot: &'a dyn RobotModel, limits: &'a LimitSets, step: f64) -> Self {
        let coulomb = robot.has_coulomb_friction();
        Self {
            robot,
            limits,
            step,
            full_dynamics: true,
            coulomb,
        }
    }

    /// Skips torque computation unless a torque order is enabled.
    pub fn lean(mut self) -> Self {
        self.full_dynamics = self.limits.needs_dynamics();
        self
    }

    pub fn limits(&self) -> &LimitSets {
        self.limits
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Velocity, acceleration and jerk checks without allocation. The
    /// arithmetic matches `evaluate`, so both always agree.
    pub fn precheck(
        &self,
        prev: &NodeState,
        q_next: &JointState,
        dt: f64,
    ) -> Result<(), InfeasibleEdge> {
        let vel = |k: usize| (q_next[k] - prev.q[k]) / dt;
        let acc = |k: usize| (vel(k) - prev.qd[k]) / dt;
        let fail = |order, joint, value, bound| {
            Err(InfeasibleEdge::Bound(Violation {
                order,
                joint,
                value,
                bound,
                check_point: None,
            }))
        };
        if let Some(b) = self.limits.bound(Order::Velocity) {
            for (k, &bk) in b.iter().enumerate() {
                let v = vel(k);
                if !(v.abs() <= bk) {
                    return fail(Order::Velocity, k, v, bk);
                }
            }
        }
        if prev.known >= 1 {
            if let Some(b) = self.limits.bound(Order::Acceleration) {
                for (k, &bk) in b.iter().enumerate() {
                    let a = acc(k);
                    if !(a.abs() <= bk) {
                        return fail(Order::Acceleration, k, a, bk);
                    }
                }
            }
        }
        if prev.known >= 2 {
            if let Some(b) = self.limits.bound(Order::Jerk) {
                for (k, &bk) in b.iter().enumerate() {
                    let j = (acc(k) - prev.qdd[k]) / dt;
                    if !(j.abs() <= bk) {
                        return fail(Order::Jerk, k, j, bk);
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluates the transition from `prev` into a node with configuration
    /// `q_next` and pseudo-velocity `pv_next`.
    pub fn evaluate(
        &self,
        prev: &NodeState,
        q_next: &JointState,
        pv_next: f64,
    ) -> Result<EdgeEvaluation, InfeasibleEdge> {
        let limits = self.limits;
        let dt = edge_duration(prev.pv, pv_next, self.step)?;
        let n = q_next.len();
        let mut skipped = Vec::new();

        self.precheck(prev, q_next, dt)?;
        let vel = |k: usize| (q_next[k] - prev.q[k]) / dt;
        let acc = |k: usize| (vel(k) - prev.qd[k]) / dt;

        let qd = DVector::from_fn(n, |k, _| vel(k));
        let known = (prev.known + 1).min(3);
        let nan = || DVector::from_element(n, f64::NAN);

        let qdd = if prev.known >= 1 {
            DVector::from_fn(n, |k, _| acc(k))
        } else {
            if limits.enabled(Order::Acceleration) {
                skipped.push(Order::Acceleration);
            }
            nan()
        };

        let qddd = if prev.known >= 2 {
            DVector::from_fn(n, |k, _| (acc(k) - prev.qdd[k]) / dt)
        } else {
            if limits.enabled(Order::Jerk) {
                skipped.push(Order::Jerk);
            }
            nan()
        };

        let tau = if known >= 2 && self.full_dynamics {
            let tau = self.robot.inverse_dynamics(q_next, &qd, &qdd);
            check_bound(limits, Order::Torque, &tau, None)?;
            tau
        } else {
            if known < 2 && limits.enabled(Order::Torque) {
                skipped.push(Order::Torque);
            }
            nan()
        };

        let tau_dot = if prev.known >= 2 && self.full_dynamics {
            let tau_dot = (&tau - &prev.tau) / dt;
            // tau_dot is undefined across a Coulomb sign flip.
            let flips = self.coulomb
                && prev
                    .qd
                    .iter()
                    .zip(qd.iter())
                    .any(|(&a, &b)| sign(a) != sign(b));
            if !flips {
                check_bound(limits, Order::TorqueRate, &tau_dot, None)?;
            }
            tau_dot
        } else {
            if prev.known < 2 && limits.enabled(Order::TorqueRate) {
                skipped.push(Order::TorqueRate);
            }
            nan()
        };

        if limits.check_points > 0 {
            self.check_interior(&prev.q, q_next, prev.pv, pv_next)?;
        }

        Ok(EdgeEvaluation {
            dt,
            next: NodeState {
                pv: pv_next,
                q: q_next.clone(),
                qd,
                qdd,
                qddd,
                tau,
                tau_dot,
                known,
            },
            skipped,
        })
    }

    /// Samples along a constant pseudo-acceleration profile: `pv^2` and `q`
    /// linear in arc length. Includes both endpoints of the profile.
    pub fn profile_samples(
        &self,
        q_prev: &JointState,
        q_next: &JointState,
        pv_prev: f64,
        pv_next: f64,
        count: usize,
    ) -> Vec<CheckSample> {
        let dq_dl = (q_next - q_prev) / self.step;
        let pv_acc = (pv_next * pv_next - pv_prev * pv_prev) / (2.0 * self.step);
        let qdd = &dq_dl * pv_acc;
        (0..=count + 1)
            .map(|k| {
                let s = k as f64 / (count + 1) as f64;
                let pv = ((1.0 - s) * pv_prev * pv_prev + s * pv_next * pv_next)
                    .max(0.0)
                    .sqrt();
                let q = q_prev * (1.0 - s) + q_next * s;
                let qd = &dq_dl * pv;
                let tau = if self.full_dynamics {
                    self.robot.inverse_dynamics(&q, &qd, &qdd)
                } else {
                    DVector::from_element(q.len(), f64::NAN)
                };
                CheckSample {
                    fraction: s,
                    pv,
                    q,
                    qd,
                    qdd: qdd.clone(),
                    tau,
                }
            })
            .collect()
    }

    fn check_interior(
        &self,
        q_prev: &JointState,
        q_next: &JointState,
        pv_prev: f64,
        pv_next: f64,
    ) -> Result<(), InfeasibleEdge> {
        let count = self.limits.check_points;
        let samples = self.profile_samples(q_prev, q_next, pv_prev, pv_next, count);
        for (k, sample) in samples.iter().enumerate().take(count + 1).skip(1) {
            let cp = Some(k - 1);
            check_bound(self.limits, Order::Velocity, &sample.qd, cp)?;
            check_bound(self.limits, Order::Acceleration, &sample.qdd, cp)?;
            if self.full_dynamics {
                check_bound(self.limits, Order::Torque, &sample.tau, cp)?;
            }
        }
        if self.full_dynamics && self.limits.enabled(Order::TorqueRate) {
            for (k, pair) in samples.windows(2).enumerate() {
                let (a, b) = (&pair[0], &pair[1]);
                let ds = (b.fraction - a.fraction) * self.step;
                let dt = 2.0 * ds / (a.pv + b.pv);
                if !(dt.is_finite() && dt > 0.0) {
                    continue;
                }
                if self.coulomb
                    && a.qd
                        .iter()
                        .zip(b.qd.iter())
                        .any(|(&x, &y)| sign(x) != sign(y))
                {
                    continue;
                }
                let rate = (&b.tau - &a.tau) / dt;
                check_bound(
                    self.limits,
                    Order::TorqueRate,
                    &rate,
                    Some(k.min(count - 1)),
                )?;
            }
        }
        Ok(())
    }
}

/// Evaluates one transition with full dynamics.
pub fn evaluate_edge(
    robot: &dyn RobotModel,
    history: &NodeState,
    q_next: &JointState,
    pv_next: f64,
    step: f64,
    limits: &LimitSets,
) -> Result<EdgeEvaluation, InfeasibleEdge> {
    EdgeEvaluator::new(robot, limits, step).evaluate(history, q_next, pv_next)
}

/// Per-stage saturation bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConstraint {
    pub stage: usize,
    pub order: Order,
    pub joint: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    /// Share of waypoints `1..=N` with at least one saturated quantity (%).
    pub percentage: f64,
    /// The same share restricted to each enabled order (%).
    pub by_order: Vec<(Order, f64)>,
    /// Saturated `(order, joint)` pairs per stage.
    pub timeline: Vec<ActiveConstraint>,
    pub tolerance: f64,
}

/// Share of waypoints, the first excluded, where some enabled quantity
/// reaches `1 - tol` of its bound.
pub fn saturation_percentage(plan: &PlanResult, limits: &LimitSets, tol: f64) -> SaturationReport {
    let orders = limits.enabled_orders();
    let stages = plan.states.len().saturating_sub(1);
    let mut saturated = 0usize;
    let mut per_order = vec![0usize; orders.len()];
    let mut timeline = Vec::new();
    for (i, state) in plan.states.iter().enumerate().skip(1) {
        let mut any = false;
        for (k, &order) in orders.iter().enumerate() {
            let (Some(values), Some(bounds)) = (state.value(order), limits.bound(order)) else {
                continue;
            };
            let mut hit = false;
            for (joint, (&v, &b)) in values.iter().zip(bounds).enumerate() {
                if !b.is_finite() {
                    continue;
                }
                let ratio = v.abs() / b;
                if ratio >= 1.0 - tol {
                    hit = true;
                    timeline.push(ActiveConstraint {
                        stage: i,
                        order,
                        joint,
                        ratio,
                    });
                }
            }
            if hit {
                per_order[k] += 1;
                any = true;
            }
        }
        if any {
            saturated += 1;
        }
    }
    let pct = |c: usize| {
        if stages == 0 {
            0.0
        } else {
            100.0 * c as f64 / stages as f64
        }
    };
    SaturationReport {
        percentage: pct(saturated),
        by_order: orders
            .iter()
            .zip(&per_order)
            .map(|(&o, &c)| (o, pct(c)))
            .collect(),
        timeline,
        tolerance: tol,
    }
}

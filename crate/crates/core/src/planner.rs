//! Forward dynamic programming over the state grid.
//!
//! Stage by stage, every admissible next node picks the reachable
//! predecessor minimising accumulated cost. Each next node is reduced
//! independently, which is what runs in parallel. Ties go to the
//! predecessor with the smallest node id, i.e. the lexicographically
//! smallest `(l, j, g)`, so the result does not depend on worker count.
//!
//! Predecessors are grouped by grid cell and split into the one at rest and
//! the moving ones, each list sorted by cost. All moving predecessors reach
//! a moving node in the same time, so a list can be abandoned as soon as
//! `cost + lower_bound(dt)` exceeds the incumbent.
//!
//! Two filters run before any edge is evaluated. A whole cell is dropped
//! when the joint displacement to the next cell cannot be covered within
//! the velocity limits in that time. Inside a surviving cell, with the
//! duration fixed, the acceleration limit confines the predecessor's joint
//! velocity to a band; the moving predecessors' velocities sit in one flat
//! array next to the cost list so this test stays cheap. Both tests are
//! padded by a relative slack far above rounding, so they only remove
//! edges the full check would reject too. None of this changes the answer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::constraints::{
    edge_duration, EdgeEvaluation, EdgeEvaluator, InfeasibleEdge, LimitSets, NodeState, Order,
};
use crate::grid::StateGrid;
use crate::par;
use crate::robot::{JointState, RobotModel};

/// Cost functional `psi(s0) + sum phi(s(k-1), s(k))`.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn initial_cost(&self, start: &NodeState) -> f64;

    fn local_cost(&self, prev: &NodeState, edge: &EdgeEvaluation) -> f64;

    /// A value never above `local_cost` for any edge of duration `dt`.
    /// Used to skip predecessors that cannot improve a node.
    fn local_cost_lower_bound(&self, _dt: f64) -> f64 {
        0.0
    }
}

/// Minimum traversal time: `psi = 0`, `phi = dt`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TimeObjective;

impl Objective for TimeObjective {
    fn name(&self) -> &str {
        "time"
    }

    fn initial_cost(&self, _start: &NodeState) -> f64 {
        0.0
    }

    fn local_cost(&self, _prev: &NodeState, edge: &EdgeEvaluation) -> f64 {
        edge.dt
    }

    fn local_cost_lower_bound(&self, dt: f64) -> f64 {
        dt
    }
}

/// Restricts candidate edges to nearby levels and lattice indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeWindow {
    pub max_level_change: usize,
    pub max_lattice_change: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOptions {
    /// Off by default: every reachable predecessor is a candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<EdgeWindow>,
}

/// Count of rejected edges per cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintHistogram {
    pub velocity: u64,
    pub acceleration: u64,
    pub jerk: u64,
    pub torque: u64,
    pub torque_rate: u64,
    pub both_at_rest: u64,
}

impl ConstraintHistogram {
    pub fn record(&mut self, err: &InfeasibleEdge) {
        match err {
            InfeasibleEdge::BothAtRest => self.both_at_rest += 1,
            InfeasibleEdge::Bound(v) => *self.slot(v.order) += 1,
        }
    }

    fn slot(&mut self, order: Order) -> &mut u64 {
        match order {
            Order::Velocity => &mut self.velocity,
            Order::Acceleration => &mut self.acceleration,
            Order::Jerk => &mut self.jerk,
            Order::Torque => &mut self.torque,
            Order::TorqueRate => &mut self.torque_rate,
        }
    }

    pub fn add(&mut self, order: Order, count: u64) {
        *self.slot(order) += count;
    }

    pub fn get(&self, order: Order) -> u64 {
        match order {
            Order::Velocity => self.velocity,
            Order::Acceleration => self.acceleration,
            Order::Jerk => self.jerk,
            Order::Torque => self.torque,
            Order::TorqueRate => self.torque_rate,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.velocity += other.velocity;
        self.acceleration += other.acceleration;
        self.jerk += other.jerk;
        self.torque += other.torque;
        self.torque_rate += other.torque_rate;
        self.both_at_rest += other.both_at_rest;
    }

    /// The order rejecting the most edges.
    pub fn binding(&self) -> Option<Order> {
        Order::ALL
            .into_iter()
            .filter(|&o| self.get(o) > 0)
            .max_by_key(|&o| (self.get(o), std::cmp::Reverse(o)))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no feasible plan: deepest reached stage {deepest_stage}, binding constraint {}",
        .histogram.binding().map_or("none", Order::name))]
    NoFeasiblePlan {
        deepest_stage: usize,
        histogram: ConstraintHistogram,
    },
    #[error("predecessor chain broken at stage {stage}")]
    CorruptChain { stage: usize },
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
}

pub const NO_PREDECESSOR: u32 = u32::MAX;

/// Accumulated cost and back-pointer of every node, stage-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMap {
    /// `+inf` for nodes never reached.
    pub costs: Vec<Vec<f64>>,
    pub predecessors: Vec<Vec<u32>>,
    pub histogram: ConstraintHistogram,
    pub edges_evaluated: u64,
}

impl ValueMap {
    pub fn reached(&self, stage: usize) -> Vec<usize> {
        self.costs[stage]
            .iter()
            .enumerate()
            .filter_map(|(id, c)| c.is_finite().then_some(id))
            .collect()
    }

    /// Best terminal node, smallest id on ties.
    pub fn terminal(&self) -> Option<usize> {
        let last = self.costs.last()?;
        let mut best: Option<usize> = None;
        for (id, &c) in last.iter().enumerate() {
            if c.is_finite() && best.is_none_or(|b| c < last[b]) {
                best = Some(id);
            }
        }
        best
    }
}

/// One point of the phase-space trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PstPoint {
    pub lambda: f64,
    pub v: Vec<f64>,
    pub pv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub cost: f64,
    pub nodes: Vec<usize>,
    pub branches: Vec<usize>,
    /// Arc-length stamp per stage.
    pub lambda: Vec<f64>,
    /// Time per stage; `times[N]` equals `cost` for the time objective.
    pub times: Vec<f64>,
    /// Transition durations, one per segment.
    pub durations: Vec<f64>,
    pub states: Vec<NodeState>,
    /// Redundancy parameters per stage.
    pub redundancy: Vec<DVector<f64>>,
    /// Enabled orders whose feasibility depended on the chosen history.
    pub history_dependent_orders: Vec<Order>,
    /// True when the result is the exact grid optimum.
    pub exact: bool,
    /// Some stage sits on the top pseudo-velocity level.
    pub pv_cap_binding: bool,
    pub edges_evaluated: u64,
    pub objective: String,
    pub fingerprint: String,
}

impl PlanResult {
    pub fn stages(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn joint_path(&self) -> Vec<JointState> {
        self.states.iter().map(|s| s.q.clone()).collect()
    }

    pub fn pv(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.pv).collect()
    }

    pub fn pst(&self) -> Vec<PstPoint> {
        pst(self)
    }
}

/// Phase-space trajectory `(lambda, v, pv)`, one triple per stage.
pub fn pst(plan: &PlanResult) -> Vec<PstPoint> {
    plan.states
        .iter()
        .zip(&plan.lambda)
        .zip(&plan.redundancy)
        .map(|((s, &lambda), v)| PstPoint {
            lambda,
            v: v.iter().copied().collect(),
            pv: s.pv,
        })
        .collect()
}

/// Hash of everything that determines a plan: grid nodes, limits and
/// objective. Results can only be compared when these match.
pub fn fingerprint(grid: &StateGrid, limits: &LimitSets, objective: &dyn Objective) -> String {
    let mut h = Sha256::new();
    h.update(objective.name().as_bytes());
    h.update(serde_json::to_vec(limits).expect("limits serialize"));
    h.update(grid.path().step().to_bits().to_le_bytes());
    h.update(grid.pv_step().to_bits().to_le_bytes());
    h.update((grid.levels() as u64).to_le_bytes());
    h.update((grid.cells_per_stage() as u64).to_le_bytes());
    for i in 0..grid.stage_count() {
        let stage = grid.stage(i);
        for (id, &a) in stage.admissible.iter().enumerate() {
            if a {
                h.update((id as u64).to_le_bytes());
            }
        }
        for cell in &stage.cells {
            if let Some(q) = cell.q() {
                for x in q.iter() {
                    h.update(x.to_bits().to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}

struct NodeOutcome {
    cost: f64,
    pred: u32,
    state: Option<NodeState>,
    histogram: ConstraintHistogram,
    evaluated: u64,
}

fn window_allows(grid: &StateGrid, window: &EdgeWindow, prev_id: usize, next_id: usize) -> bool {
    let a = grid.index(prev_id);
    let b = grid.index(next_id);
    if a.level.abs_diff(b.level) > window.max_level_change {
        return false;
    }
    let (ja, _) = grid.cell_coords(a.cell);
    let (jb, _) = grid.cell_coords(b.cell);
    ja.iter()
        .zip(&jb)
        .all(|(x, y)| x.abs_diff(*y) <= window.max_lattice_change)
}

/// Relative padding of the velocity prefilter.
const PREFILTER_SLACK: f64 = 1e-9;

/// Predecessors to scan for one node: sort key, local-cost lower bound,
/// `(cost, id)` entries, and, when the acceleration band applies, the
/// predecessors' velocity rows with the joint speeds into the node.
type CandidateList<'a> = (f64, f64, &'a [(f64, usize)], Option<(&'a [f64], Vec<f64>)>);

/// Reached predecessors sharing one grid cell.
#[derive(Default)]
struct CellGroup {
    rest: Option<(f64, usize)>,
    /// Sorted by `(cost, id)`.
    moving: Vec<(f64, usize)>,
    /// Joint velocities of `moving`, one row per entry. NaN rows mark
    /// predecessors without a known velocity. Empty when acceleration is
    /// not enforced.
    moving_qd: Vec<f64>,
}

impl CellGroup {
    fn size(&self) -> u64 {
        self.moving.len() as u64 + u64::from(self.rest.is_some())
    }
}

/// Shortest time in which `a` can move to `b` within the velocity bounds.
fn min_duration(a: &JointState, b: &JointState, velocity: Option<&[f64]>) -> f64 {
    let Some(bound) = velocity else {
        return 0.0;
    };
    bound
        .iter()
        .enumerate()
        .map(|(k, &v)| (b[k] - a[k]).abs() / v)
        .fold(0.0, f64::max)
}

fn fits(min_dt: f64, dt: f64) -> bool {
    min_dt <= dt * (1.0 + PREFILTER_SLACK)
}

/// Whether a predecessor moving with `qd` can reach joint velocity
/// `speed` within the acceleration bounds over `dt`. A NaN row means the
/// predecessor's velocity is unknown and nothing is ruled out.
fn within_band(qd: &[f64], speed: &[f64], accel: &[f64], dt: f64) -> bool {
    if qd[0].is_nan() {
        return true;
    }
    qd.iter().zip(speed).zip(accel).all(|((&v, &s), &a)| {
        let reach = a * dt;
        (s - v).abs() <= reach + PREFILTER_SLACK * (reach + s.abs() + v.abs())
    })
}

/// Forward value recursion. Returns costs and back-pointers for every
/// stage; stages after the last reachable one stay at `+inf`.
pub fn forward_pass(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
    objective: &dyn Objective,
    options: &PlannerOptions,
) -> Result<ValueMap, PlanError> {
    limits
        .validate(robot.dof())
        .map_err(PlanError::InvalidLimits)?;
    let nodes = grid.nodes_per_stage();
    let cells = grid.cells_per_stage();
    let stages = grid.stage_count();
    let step = grid.path().step();
    let evaluator = EdgeEvaluator::new(robot, limits, step).lean();
    let velocity = limits.bound(Order::Velocity);
    let accel = limits.bound(Order::Acceleration);

    let mut costs = Vec::with_capacity(stages);
    let mut preds = Vec::with_capacity(stages);
    let mut histogram = ConstraintHistogram::default();
    let mut edges_evaluated = 0u64;

    let mut cur_cost = vec![f64::INFINITY; nodes];
    let mut cur_state: Vec<Option<NodeState>> = vec![None; nodes];
    for id in grid.admissible_ids(0) {
        let state = NodeState::initial(robot, grid.q(0, id), grid.pv(grid.index(id).level));
        cur_cost[id] = objective.initial_cost(&state);
        cur_state[id] = Some(state);
    }
    costs.push(cur_cost.clone());
    preds.push(vec![NO_PREDECESSOR; nodes]);

    for i in 0..stages - 1 {
        let mut by_cell: Vec<CellGroup> = (0..cells).map(|_| CellGroup::default()).collect();
        for (id, &c) in cur_cost.iter().enumerate() {
            if c.is_finite() {
                let at = grid.index(id);
                if at.level == 0 {
                    by_cell[at.cell].rest = Some((c, id));
                } else {
                    by_cell[at.cell].moving.push((c, id));
                }
            }
        }
        let by_cost = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let mut groups: Vec<(usize, CellGroup)> = Vec::new();
        for (cell, mut g) in by_cell.into_iter().enumerate() {
            if g.size() == 0 {
                continue;
            }
            g.moving.sort_by(by_cost);
            if accel.is_some() {
                for &(_, id) in &g.moving {
                    let state = cur_state[id].as_ref().expect("reached node has state");
                    g.moving_qd.extend(state.qd.iter());
                }
            }
            groups.push((cell, g));
        }
        if groups.is_empty() {
            break;
        }

        let next_ids = grid.admissible_ids(i + 1);
        // Shortest feasible duration from every predecessor cell to every
        // next cell.
        let min_dt: Vec<f64> = par::map_indices(groups.len() * cells, |k| {
            let (g, next_cell) = (k / cells, k % cells);
            match grid.stage(i + 1).cells[next_cell].q() {
                Some(q_next) => {
                    let q_prev = grid.q(i, groups[g].0);
                    min_duration(q_prev, q_next, velocity)
                }
                None => f64::INFINITY,
            }
        });

        let outcomes = par::map_indices(next_ids.len(), |k| {
            let next = next_ids[k];
            let at = grid.index(next);
            let pv_next = grid.pv(at.level);
            let q_next = grid.q(i + 1, next);
            let mut out = NodeOutcome {
                cost: f64::INFINITY,
                pred: NO_PREDECESSOR,
                state: None,
                histogram: ConstraintHistogram::default(),
                evaluated: 0,
            };
            let consider = |out: &mut NodeOutcome, c: f64, pid: usize, lb: f64| -> bool {
                let bound = c + lb;
                if bound > out.cost {
                    return false;
                }
                if bound == out.cost && pid as u32 > out.pred {
                    return true;
                }
                if let Some(w) = &options.window {
                    if !window_allows(grid, w, pid, next) {
                        return true;
                    }
                }
                let prev = cur_state[pid].as_ref().expect("reached node has state");
                out.evaluated += 1;
                match evaluator.evaluate(prev, q_next, pv_next) {
                    Ok(edge) => {
                        let cost = c + objective.local_cost(prev, &edge);
                        if cost < out.cost || (cost == out.cost && (pid as u32) < out.pred) {
                            out.cost = cost;
                            out.pred = pid as u32;
                            out.state = Some(edge.next);
                        }
                    }
                    Err(e) => out.histogram.record(&e),
                }
                true
            };

            if pv_next == 0.0 {
                // Durations differ per predecessor level: no early exit.
                for (g, (_, group)) in groups.iter().enumerate() {
                    let reach = min_dt[g * cells + at.cell];
                    if group.rest.is_some() {
                        out.histogram.record(&InfeasibleEdge::BothAtRest);
                    }
                    for &(c, pid) in &group.moving {
                        let dt = edge_duration(grid.pv(grid.index(pid).level), 0.0, step)
                            .expect("moving predecessor");
                        if !fits(reach, dt) {
                            out.histogram.add(Order::Velocity, 1);
                            continue;
                        }
                        consider(&mut out, c, pid, objective.local_cost_lower_bound(dt));
                    }
                }
                return out;
            }

            let dt_moving = edge_duration(pv_next, pv_next, step).expect("moving node");
            let dt_rest = edge_duration(0.0, pv_next, step).expect("moving node");
            let (lb_moving, lb_rest) = (
                objective.local_cost_lower_bound(dt_moving),
                objective.local_cost_lower_bound(dt_rest),
            );
            // Candidate lists, most promising first, each with its
            // velocity rows when the acceleration band applies.
            let n = q_next.len();
            let mut lists: Vec<CandidateList> = Vec::with_capacity(2 * groups.len());
            for (g, (cell, group)) in groups.iter().enumerate() {
                let reach = min_dt[g * cells + at.cell];
                if let Some(rest) = &group.rest {
                    if fits(reach, dt_rest) {
                        lists.push((rest.0 + lb_rest, lb_rest, std::slice::from_ref(rest), None));
                    } else {
                        out.histogram.add(Order::Velocity, 1);
                    }
                }
                let Some(first) = group.moving.first() else {
                    continue;
                };
                if !fits(reach, dt_moving) {
                    out.histogram
                        .add(Order::Velocity, group.moving.len() as u64);
                    continue;
                }
                let band = accel.map(|_| {
                    let q_prev = grid.q(i, *cell);
                    let speed = (0..n)
                        .map(|k| (q_next[k] - q_prev[k]) / dt_moving)
                        .collect();
                    (group.moving_qd.as_slice(), speed)
                });
                lists.push((first.0 + lb_moving, lb_moving, &group.moving, band));
            }
            lists.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (_, lb, list, band) in lists {
                for (idx, &(c, pid)) in list.iter().enumerate() {
                    if c + lb > out.cost {
                        break;
                    }
                    if let (Some((rows, speed)), Some(accel)) = (&band, accel) {
                        if !within_band(&rows[idx * n..(idx + 1) * n], speed, accel, dt_moving) {
                            out.histogram.add(Order::Acceleration, 1);
                            continue;
                        }
                    }
                    consider(&mut out, c, pid, lb);
                }
            }
            out
        });

        let mut next_cost = vec![f64::INFINITY; nodes];
        let mut next_pred = vec![NO_PREDECESSOR; nodes];
        let mut next_state: Vec<Option<NodeState>> = vec![None; nodes];
        for (&id, out) in next_ids.iter().zip(outcomes) {
            histogram.merge(&out.histogram);
            edges_evaluated += out.evaluated;
            next_cost[id] = out.cost;
            next_pred[id] = out.pred;
            next_state[id] = out.state;
        }
        costs.push(next_cost.clone());
        preds.push(next_pred);
        cur_cost = next_cost;
        cur_state = next_state;
    }
    while costs.len() < stages {
        costs.push(vec![f64::INFINITY; nodes]);
        preds.push(vec![NO_PREDECESSOR; nodes]);
    }

    Ok(ValueMap {
        costs,
        predecessors: preds,
        histogram,
        edges_evaluated,
    })
}

/// Walks back-pointers from `terminal` and replays the chain forward,
/// recomputing every derived quantity with full dynamics.
pub fn extract(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
    objective: &dyn Objective,
    values: &ValueMap,
    terminal: usize,
) -> Result<PlanResult, PlanError> {
    let last = grid.last_stage();
    if !values.costs[last][terminal].is_finite() {
        return Err(PlanError::NoFeasiblePlan {
            deepest_stage: deepest_reached(values),
            histogram: values.histogram,
        });
    }
    let mut nodes = vec![terminal; last + 1];
    for i in (1..=last).rev() {
        let p = values.predecessors[i][nodes[i]];
        if p == NO_PREDECESSOR || !values.costs[i - 1][p as usize].is_finite() {
            return Err(PlanError::CorruptChain { stage: i });
        }
        nodes[i - 1] = p as usize;
    }
    let plan = replay_chain(robot, grid, limits, objective, &nodes)
        .map_err(|(stage, _)| PlanError::CorruptChain { stage })?;
    if plan.cost.to_bits() != values.costs[last][terminal].to_bits() {
        return Err(PlanError::CorruptChain { stage: last });
    }
    Ok(PlanResult {
        edges_evaluated: values.edges_evaluated,
        ..plan
    })
}

/// Evaluates a node chain from stage 0 with full history.
///
/// On failure returns the stage whose incoming edge is infeasible.
pub fn replay_chain(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
    objective: &dyn Objective,
    nodes: &[usize],
) -> Result<PlanResult, (usize, Option<InfeasibleEdge>)> {
    let last = grid.last_stage();
    if nodes.len() != last + 1 {
        return Err((nodes.len(), None));
    }
    for (i, &id) in nodes.iter().enumerate() {
        if id >= grid.nodes_per_stage() || !grid.is_admissible(i, id) {
            return Err((i, None));
        }
    }
    let evaluator = EdgeEvaluator::new(robot, limits, grid.path().step());
    let first = NodeState::initial(
        robot,
        grid.q(0, nodes[0]),
        grid.pv(grid.index(nodes[0]).level),
    );
    let mut cost = objective.initial_cost(&first);
    let mut times = vec![cost];
    let mut durations = Vec::with_capacity(last);
    let mut states = vec![first];
    let mut history_dependent = Vec::new();
    for (i, &id) in nodes.iter().enumerate().skip(1) {
        let prev = states.last().expect("non-empty");
        let edge = evaluator
            .evaluate(prev, grid.q(i, id), grid.pv(grid.index(id).level))
            .map_err(|e| (i, Some(e)))?;
        cost += objective.local_cost(prev, &edge);
        times.push(cost);
        durations.push(edge.dt);
        states.push(edge.next);
    }
    for order in limits.history_dependent_orders() {
        // Only orders that were actually checked somewhere count.
        if states.iter().skip(1).any(|s| s.value(order).is_some()) {
            history_dependent.push(order);
        }
    }
    let top = grid.levels() - 1;
    let pv_cap_binding = nodes.iter().any(|&id| grid.index(id).level == top);
    let redundancy = states
        .iter()
        .map(|s| robot.redundancy_parameters(&s.q))
        .collect();
    let branches = states.iter().map(|s| robot.branch_of(&s.q)).collect();
    Ok(PlanResult {
        cost,
        nodes: nodes.to_vec(),
        branches,
        lambda: (0..=last).map(|i| grid.path().stamp(i)).collect(),
        times,
        durations,
        states,
        redundancy,
        exact: history_dependent.is_empty(),
        history_dependent_orders: history_dependent,
        pv_cap_binding,
        edges_evaluated: 0,
        objective: objective.name().to_string(),
        fingerprint: fingerprint(grid, limits, objective),
    })
}

fn deepest_reached(values: &ValueMap) -> usize {
    values
        .costs
        .iter()
        .rposition(|c| c.iter().any(|x| x.is_finite()))
        .unwrap_or(0)
}

/// Runs the forward pass, picks the best terminal node and extracts it.
pub fn plan(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
    objective: &dyn Objective,
    options: &PlannerOptions,
) -> Result<PlanResult, PlanError> {
    let values = forward_pass(robot, grid, limits, objective, options)?;
    match values.terminal() {
        Some(t) => extract(robot, grid, limits, objective, &values, t),
        None => Err(PlanError::NoFeasiblePlan {
            deepest_stage: deepest_reached(&values),
            histogram: values.histogram,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec};
    use crate::path::{sample_path, CurveSpec};
    use crate::robot::PlanarArm;

    fn line_grid(stages: usize, levels: usize, rest: bool) -> (PlanarArm, StateGrid) {
        let arm = PlanarArm::reference();
        let path = sample_path(
            &CurveSpec::StraightLine {
                start: vec![0.6, 0.1],
                end: vec![0.6, -0.1],
            },
            stages,
        )
        .unwrap();
        let spec = GridSpec {
            pv_max: 1.0,
            pv_levels: levels,
            v_min: vec![-0.4],
            v_max: vec![0.4],
            v_step: vec![0.2],
            rest_to_rest: rest,
            exclusions: vec![],
        };
        let grid = build_grid(&arm, &path, &spec).unwrap();
        (arm, grid)
    }

    #[test]
    fn unbounded_plan_rides_the_cap() {
        let (arm, grid) = line_grid(4, 5, false);
        let limits = LimitSets::unbounded(3);
        let plan = plan(
            &arm,
            &grid,
            &limits,
            &TimeObjective,
            &PlannerOptions::default(),
        )
        .unwrap();
        assert!(plan.pv()[1..].iter().all(|&pv| pv == 1.0));
        // Start at the cap too: four backward-Euler steps.
        let expected = 4.0 * (grid.path().step() / 1.0);
        assert!((plan.cost - expected).abs() < 1e-12);
        assert!(plan.pv_cap_binding);
    }

    #[test]
    fn single_segment_plan() {
        let (arm, grid) = line_grid(1, 4, false);
        let limits = LimitSets::from_robot(&arm, &[Order::Velocity]);
        let plan = plan(
            &arm,
            &grid,
            &limits,
            &TimeObjective,
            &PlannerOptions::default(),
        )
        .unwrap();
        assert_eq!(plan.states.len(), 2);
        assert_eq!(plan.cost, plan.durations[0]);
    }

    #[test]
    fn rest_to_rest_ends_at_rest() {
        let (arm, grid) = line_grid(4, 5, true);
        let limits = LimitSets::from_robot(&arm, &Order::ALL);
        let plan = plan(
            &arm,
            &grid,
            &limits,
            &TimeObjective,
            &PlannerOptions::default(),
        )
        .unwrap();
        let pst = plan.pst();
        assert_eq!(pst[0].pv, 0.0);
        assert_eq!(pst.last().unwrap().pv, 0.0);
        for (i, p) in pst.iter().enumerate() {
            assert_eq!(p.lambda, i as f64 * grid.path().step());
        }
        assert_eq!(*plan.times.last().unwrap(), plan.cost);
        assert!(!plan.exact);
    }

    #[test]
    fn infeasible_limits_report_histogram() {
        let (arm, grid) = line_grid(3, 4, true);
        let limits = LimitSets::none().with(Order::Velocity, vec![1e-6; 3]);
        let err = plan(
            &arm,
            &grid,
            &limits,
            &TimeObjective,
            &PlannerOptions::default(),
        )
        .unwrap_err();
        match err {
            PlanError::NoFeasiblePlan {
                deepest_stage,
                histogram,
            } => {
                assert_eq!(deepest_stage, 0);
                assert_eq!(histogram.binding(), Some(Order::Velocity));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn window_never_beats_full_search() {
        let (arm, grid) = line_grid(4, 6, true);
        let limits = LimitSets::from_robot(&arm, &[Order::Velocity]);
        let full = plan(
            &arm,
            &grid,
            &limits,
            &TimeObjective,
            &PlannerOptions::default(),
        )
        .unwrap();
        let windowed = plan(
            &arm,
            &grid,
            &limits,
            &TimeObjective,
            &PlannerOptions {
                window: Some(EdgeWindow {
                    max_level_change: 2,
                    max_lattice_change: 1,
                }),
            },
        )
        .unwrap();
        assert!(windowed.cost >= full.cost);
    }
}

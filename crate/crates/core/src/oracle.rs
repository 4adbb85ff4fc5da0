//! Exhaustive enumeration of stage chains on small grids.
//!
//! Every chain is evaluated with its own full history, so the result is the
//! true grid optimum even when acceleration, jerk or torque limits make the
//! planner's back-pointer scheme approximate. Depth-first search prunes a
//! partial chain only when a lower bound on its completed cost strictly
//! exceeds the incumbent, which keeps the enumeration exact.

use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{EdgeEvaluator, LimitSets, NodeState, Order};
use crate::grid::StateGrid;
use crate::par;
use crate::planner::{plan, replay_chain, Objective, PlanError, PlanResult, PlannerOptions};
use crate::robot::RobotModel;

/// Slack on the pruning bound so rounding in the bound never cuts a chain
/// whose actual cost ties the incumbent.
const BOUND_SLACK: f64 = 1e-9;

/// Allowed DP shortfall below the oracle before it is called a bug.
pub const CONTRACT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Upper bound on the product of admissible-set sizes.
    pub max_chains: f64,
    /// Upper bound on the total admissible node count.
    pub max_cells: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_chains: 1e15,
            max_cells: 100_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("grid exceeds oracle budget: {what} {value} > {limit}")]
    BudgetExceeded {
        what: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("no feasible chain")]
    NoFeasiblePlan,
    #[error("results come from different configurations")]
    ConfigMismatch,
    #[error("planner cost {dp} beats exhaustive cost {oracle}")]
    ContractViolation { dp: f64, oracle: f64 },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Product of admissible-set sizes, the number of chains a blind
/// enumeration would visit.
pub fn chain_count(grid: &StateGrid) -> f64 {
    (0..grid.stage_count())
        .map(|i| grid.stage(i).admissible_count() as f64)
        .product()
}

pub fn check_budget(grid: &StateGrid, budget: &OracleBudget) -> Result<(), OracleError> {
    let cells = grid.admissible_total();
    if cells > budget.max_cells {
        return Err(OracleError::BudgetExceeded {
            what: "admissible nodes",
            value: cells as f64,
            limit: budget.max_cells as f64,
        });
    }
    let chains = chain_count(grid);
    if chains > budget.max_chains {
        return Err(OracleError::BudgetExceeded {
            what: "chains",
            value: chains,
            limit: budget.max_chains,
        });
    }
    Ok(())
}

struct Search<'a> {
    grid: &'a StateGrid,
    evaluator: EdgeEvaluator<'a>,
    objective: &'a dyn Objective,
    admissible: Vec<Vec<usize>>,
    /// Lower bound on the cost of the remaining edges from each stage.
    remaining: Vec<f64>,
    incumbent: AtomicU64,
}

struct Best {
    cost: f64,
    chain: Vec<usize>,
}

impl Search<'_> {
    fn incumbent(&self) -> f64 {
        f64::from_bits(self.incumbent.load(AtomicOrdering::Acquire))
    }

    fn offer(&self, cost: f64) {
        let mut cur = self.incumbent.load(AtomicOrdering::Acquire);
        while cost < f64::from_bits(cur) {
            match self.incumbent.compare_exchange_weak(
                cur,
                cost.to_bits(),
                AtomicOrdering::AcqRel,
                AtomicOrdering::Acquire,
            ) {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
    }

    fn descend(
        &self,
        stage: usize,
        state: &NodeState,
        cost: f64,
        chain: &mut Vec<usize>,
        best: &mut Option<Best>,
    ) {
        let last = self.grid.last_stage();
        if stage == last {
            let better = best
                .as_ref()
                .is_none_or(|b| cost < b.cost || (cost == b.cost && chain[..] < b.chain[..]));
            if better {
                *best = Some(Best {
                    cost,
                    chain: chain.clone(),
                });
                self.offer(cost);
            }
            return;
        }
        if cost + self.remaining[stage] > self.incumbent() {
            return;
        }
        let next = stage + 1;
        // Fast nodes first: they set a tight incumbent early.
        for &id in self.admissible[next].iter().rev() {
            let pv = self.grid.pv(self.grid.index(id).level);
            let Ok(edge) = self.evaluator.evaluate(state, self.grid.q(next, id), pv) else {
                continue;
            };
            let child = cost + self.objective.local_cost(state, &edge);
            chain.push(id);
            self.descend(next, &edge.next, child, chain, best);
            chain.pop();
        }
    }
}

/// Minimum-cost feasible chain by exhaustive search; ties go to the
/// lexicographically smallest node-id sequence.
pub fn exhaustive_plan(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
    objective: &dyn Objective,
    budget: &OracleBudget,
) -> Result<PlanResult, OracleError> {
    check_budget(grid, budget)?;
    limits
        .validate(robot.dof())
        .map_err(|e| OracleError::Plan(PlanError::InvalidLimits(e)))?;
    let last = grid.last_stage();
    let step = grid.path().step();
    let fastest = if grid.pv_max() > 0.0 && step > 0.0 {
        objective.local_cost_lower_bound(step / grid.pv_max())
    } else {
        0.0
    };
    let search = Search {
        grid,
        evaluator: EdgeEvaluator::new(robot, limits, step).lean(),
        objective,
        admissible: (0..grid.stage_count())
            .map(|i| grid.admissible_ids(i))
            .collect(),
        remaining: (0..=last)
            .map(|i| (last - i) as f64 * fastest * (1.0 - BOUND_SLACK))
            .collect(),
        incumbent: AtomicU64::new(f64::INFINITY.to_bits()),
    };

    let starts = &search.admissible[0];
    let results = par::map_indices(starts.len(), |k| {
        let id = starts[k];
        let state = NodeState::initial(robot, grid.q(0, id), grid.pv(grid.index(id).level));
        let cost = objective.initial_cost(&state);
        let mut chain = vec![id];
        let mut best = None;
        search.descend(0, &state, cost, &mut chain, &mut best);
        best
    });

    let mut best: Option<Best> = None;
    for b in results.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(cur) => b.cost < cur.cost || (b.cost == cur.cost && b.chain < cur.chain),
        };
        if better {
            best = Some(b);
        }
    }
    let best = best.ok_or(OracleError::NoFeasiblePlan)?;
    let result = replay_chain(robot, grid, limits, objective, &best.chain)
        .map_err(|(stage, _)| OracleError::Plan(PlanError::CorruptChain { stage }))?;
    debug_assert_eq!(result.cost.to_bits(), best.cost.to_bits());
    Ok(result)
}

/// Gap left after disabling one order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapAttribution {
    pub order: Order,
    /// Planner minus oracle cost with this order disabled.
    pub gap_without: f64,
    /// Part of the full gap that disappears when the order is disabled.
    pub attributed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub oracle_cost: f64,
    pub dp_cost: f64,
    pub absolute_gap: f64,
    pub relative_gap: f64,
    pub exact_match: bool,
    pub dp_nodes: Vec<usize>,
    pub oracle_nodes: Vec<usize>,
    pub attribution: Vec<GapAttribution>,
    pub fingerprint: String,
}

/// Compares a planner result with the oracle result on the same instance.
pub fn compare(dp: &PlanResult, oracle: &PlanResult) -> Result<GapReport, OracleError> {
    if dp.fingerprint != oracle.fingerprint {
        return Err(OracleError::ConfigMismatch);
    }
    if dp.cost < oracle.cost - CONTRACT_TOLERANCE {
        return Err(OracleError::ContractViolation {
            dp: dp.cost,
            oracle: oracle.cost,
        });
    }
    let gap = dp.cost - oracle.cost;
    Ok(GapReport {
        oracle_cost: oracle.cost,
        dp_cost: dp.cost,
        absolute_gap: gap,
        relative_gap: if oracle.cost > 0.0 {
            gap / oracle.cost
        } else {
            0.0
        },
        exact_match: dp.cost.to_bits() == oracle.cost.to_bits(),
        dp_nodes: dp.nodes.clone(),
        oracle_nodes: oracle.nodes.clone(),
        attribution: Vec::new(),
        fingerprint: dp.fingerprint.clone(),
    })
}

/// Runs planner and oracle, compares them and, when they differ, attributes
/// the gap by disabling each history-dependent order in turn.
pub fn verify(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
    objective: &dyn Objective,
    options: &PlannerOptions,
    budget: &OracleBudget,
) -> Result<GapReport, OracleError> {
    check_budget(grid, budget)?;
    let dp = plan(robot, grid, limits, objective, options)?;
    let oracle = exhaustive_plan(robot, grid, limits, objective, budget)?;
    let mut report = compare(&dp, &oracle)?;
    if report.absolute_gap > 0.0 {
        for order in limits.history_dependent_orders() {
            let reduced = limits.clone().without(order);
            let gap_without = match (
                plan(robot, grid, &reduced, objective, options),
                exhaustive_plan(robot, grid, &reduced, objective, budget),
            ) {
                (Ok(d), Ok(o)) => d.cost - o.cost,
                _ => f64::NAN,
            };
            report.attribution.push(GapAttribution {
                order,
                gap_without,
                attributed: report.absolute_gap - gap_without,
            });
        }
    }
    Ok(report)
}

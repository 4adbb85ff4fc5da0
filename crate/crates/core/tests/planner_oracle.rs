//! Planner and oracle against a blind enumeration of every chain, plus the
//! structural guarantees of extracted plans.

use redundant_topp::constraints::{EdgeEvaluator, NodeState};
use redundant_topp::oracle::{self, OracleBudget};
use redundant_topp::planner::{replay_chain, Objective};
use redundant_topp::{
    build_grid, par, plan, sample_path, CurveSpec, GridSpec, LimitSets, Order, PlanResult,
    PlanarArm, PlannerOptions, RobotModel, StateGrid, TimeObjective,
};

fn arm() -> PlanarArm {
    PlanarArm::reference()
}

fn small_grid(robot: &PlanarArm, rest_to_rest: bool) -> StateGrid {
    let path = sample_path(
        &CurveSpec::StraightLine {
            start: vec![0.6, 0.08],
            end: vec![0.6, -0.08],
        },
        3,
    )
    .unwrap();
    let spec = GridSpec {
        pv_max: 0.9,
        pv_levels: 3,
        v_min: vec![0.6],
        v_max: vec![0.7],
        v_step: vec![0.1],
        rest_to_rest,
        exclusions: Vec::new(),
    };
    build_grid(robot, &path, &spec).unwrap()
}

/// Tight jerk and torque-rate rows so that history matters.
fn tight(robot: &PlanarArm) -> LimitSets {
    LimitSets::from_robot(robot, &Order::ALL)
        .with(Order::Jerk, vec![60.0, 60.0, 12.0])
        .with(Order::TorqueRate, vec![200.0, 200.0, 50.0])
}

/// Every chain, no pruning: the cheapest feasible one, ties to the
/// lexicographically smallest node sequence.
fn enumerate(
    robot: &dyn RobotModel,
    grid: &StateGrid,
    limits: &LimitSets,
) -> Option<(f64, Vec<usize>)> {
    fn walk(
        ctx: (&EdgeEvaluator, &StateGrid, &TimeObjective),
        stage: usize,
        state: &NodeState,
        cost: f64,
        chain: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let (eval, grid, objective) = ctx;
        if stage == grid.last_stage() {
            let better = match best {
                None => true,
                Some((c, b)) => cost < *c || (cost == *c && chain < b),
            };
            if better {
                *best = Some((cost, chain.clone()));
            }
            return;
        }
        let next = stage + 1;
        for id in grid.admissible_ids(next) {
            let pv = grid.pv(grid.index(id).level);
            if let Ok(edge) = eval.evaluate(state, grid.q(next, id), pv) {
                chain.push(id);
                let c = cost + objective.local_cost(state, &edge);
                walk(ctx, next, &edge.next, c, chain, best);
                chain.pop();
            }
        }
    }

    let eval = EdgeEvaluator::new(robot, limits, grid.path().step());
    let objective = TimeObjective;
    let mut best = None;
    for id in grid.admissible_ids(0) {
        let state = NodeState::initial(robot, grid.q(0, id), grid.pv(grid.index(id).level));
        let cost = objective.initial_cost(&state);
        walk(
            (&eval, grid, &objective),
            0,
            &state,
            cost,
            &mut vec![id],
            &mut best,
        );
    }
    best
}

fn dp(robot: &dyn RobotModel, grid: &StateGrid, limits: &LimitSets) -> PlanResult {
    plan(
        robot,
        grid,
        limits,
        &TimeObjective,
        &PlannerOptions::default(),
    )
    .unwrap()
}

fn exhaustive(robot: &dyn RobotModel, grid: &StateGrid, limits: &LimitSets) -> PlanResult {
    oracle::exhaustive_plan(
        robot,
        grid,
        limits,
        &TimeObjective,
        &OracleBudget::default(),
    )
    .unwrap()
}

#[test]
fn oracle_equals_blind_enumeration() {
    let robot = arm();
    for rest in [false, true] {
        let grid = small_grid(&robot, rest);
        for limits in [
            LimitSets::from_robot(&robot, &[Order::Velocity]),
            LimitSets::from_robot(&robot, &Order::ALL),
            tight(&robot),
        ] {
            let (cost, chain) = enumerate(&robot, &grid, &limits).expect("feasible toy");
            let ex = exhaustive(&robot, &grid, &limits);
            assert_eq!(ex.cost.to_bits(), cost.to_bits());
            assert_eq!(ex.nodes, chain);
        }
    }
}

#[test]
fn velocity_only_planner_equals_blind_enumeration() {
    let robot = arm();
    let limits = LimitSets::from_robot(&robot, &[Order::Velocity]);
    for rest in [false, true] {
        let grid = small_grid(&robot, rest);
        let (cost, _) = enumerate(&robot, &grid, &limits).unwrap();
        let result = dp(&robot, &grid, &limits);
        assert_eq!(result.cost.to_bits(), cost.to_bits());
        assert!(result.exact);
    }
}

#[test]
fn planner_never_beats_the_oracle() {
    let robot = arm();
    for rest in [false, true] {
        let grid = small_grid(&robot, rest);
        let limits = tight(&robot);
        let d = dp(&robot, &grid, &limits);
        let o = exhaustive(&robot, &grid, &limits);
        let report = oracle::compare(&d, &o).unwrap();
        assert!(report.absolute_gap >= 0.0);
        assert!(!d.exact);
    }
}

#[test]
fn extracted_plan_replays_identically() {
    let robot = arm();
    let grid = small_grid(&robot, true);
    let limits = LimitSets::from_robot(&robot, &Order::ALL);
    let result = dp(&robot, &grid, &limits);
    let replay = replay_chain(&robot, &grid, &limits, &TimeObjective, &result.nodes).unwrap();
    assert_eq!(replay.cost.to_bits(), result.cost.to_bits());
    assert_eq!(replay.states, result.states);
    assert_eq!(replay.times, result.times);
    assert_eq!(replay.durations, result.durations);
    assert_eq!(*result.times.last().unwrap(), result.cost);
}

#[test]
fn stored_torques_are_inverse_dynamics_of_stored_motion() {
    let robot = arm();
    let grid = small_grid(&robot, true);
    let result = dp(&robot, &grid, &LimitSets::from_robot(&robot, &Order::ALL));
    for s in &result.states {
        if let (Some(qd), Some(qdd), Some(tau)) = (
            s.value(Order::Velocity),
            s.value(Order::Acceleration),
            s.value(Order::Torque),
        ) {
            assert_eq!(&robot.inverse_dynamics(&s.q, qd, qdd), tau);
        }
    }
}

#[test]
fn single_node_per_stage_has_a_unique_chain() {
    let robot = arm();
    let path = sample_path(
        &CurveSpec::StraightLine {
            start: vec![0.6, 0.1],
            end: vec![0.6, -0.1],
        },
        4,
    )
    .unwrap();
    let q: Vec<_> = (0..=4)
        .map(|i| {
            let x = path.waypoint(i);
            robot
                .inverse_kinematics(x, &nalgebra::DVector::from_element(1, 0.7), 0)
                .unwrap()
                .q
        })
        .collect();
    // Without the rest level every stage is the single top-speed node.
    let grid = StateGrid::pinned(&robot, &path, &q, 0.5, 1, false)
        .unwrap()
        .exclude(|n| n.level == 0)
        .unwrap();
    for i in 0..=4 {
        assert_eq!(grid.admissible_ids(i).len(), 1);
    }
    let limits = LimitSets::unbounded(3);
    let result = dp(&robot, &grid, &limits);
    let expected: f64 = (0..4).map(|_| path.step() / 0.5).fold(0.0, |a, b| a + b);
    assert_eq!(result.cost, expected);
    assert_eq!(exhaustive(&robot, &grid, &limits).nodes, result.nodes);
}

#[test]
fn plans_do_not_depend_on_the_worker_count() {
    let robot = arm();
    let grid = small_grid(&robot, true);
    let limits = tight(&robot);
    let one = par::with_threads(Some(1), || dp(&robot, &grid, &limits));
    let four = par::with_threads(Some(4), || dp(&robot, &grid, &limits));
    assert_eq!(one, four);
    let one = par::with_threads(Some(1), || exhaustive(&robot, &grid, &limits));
    let four = par::with_threads(Some(4), || exhaustive(&robot, &grid, &limits));
    assert_eq!(one, four);
}

#[test]
fn gap_attribution_names_the_responsible_order() {
    let robot = arm();
    let grid = small_grid(&robot, true);
    let limits = tight(&robot);
    let report = oracle::verify(
        &robot,
        &grid,
        &limits,
        &TimeObjective,
        &PlannerOptions::default(),
        &OracleBudget::default(),
    )
    .unwrap();
    if report.absolute_gap > 0.0 {
        let orders: Vec<_> = report.attribution.iter().map(|a| a.order).collect();
        assert_eq!(orders, limits.history_dependent_orders());
        for a in &report.attribution {
            assert_eq!(a.attributed, report.absolute_gap - a.gap_without);
        }
    } else {
        assert!(report.attribution.is_empty());
    }
}

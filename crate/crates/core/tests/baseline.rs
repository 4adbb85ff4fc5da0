//! Two-stage baseline: redundancy resolution, its cost function and the
//! timing of a fixed joint path.

use std::path::Path;

use nalgebra::DVector;

use redundant_topp::baseline::{
    dynamic_manipulability_cost, resolve_redundancy, time_parametrize, ResolutionConfig,
};
use redundant_topp::scenario::{load_problem, Problem};
use redundant_topp::{build_grid, plan, LimitSets, Order, PlanarArm, RobotModel, TimeObjective};

fn problem(name: &str) -> Problem {
    load_problem(&Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("scenarios/{name}.json")))
        .unwrap()
}

#[test]
fn bundled_joint_paths_track_the_task() {
    for name in ["straight_line", "ellipse"] {
        let p = problem(name);
        let jp = resolve_redundancy(&p.robot, &p.path, p.baseline.as_ref().unwrap()).unwrap();
        assert_eq!(jp.q.len(), p.path.waypoint_count());
        assert!(
            jp.branch_jumps.is_empty(),
            "{name}: jumps at {:?}",
            jp.branch_jumps
        );
        assert!(!jp.pure_pseudo_inverse);
        for (i, q) in jp.q.iter().enumerate() {
            let err = (p.robot.forward_kinematics(q) - p.path.waypoint(i)).norm();
            assert!(err < 1e-8, "{name}: waypoint {i} off by {err:e}");
            assert_eq!(err, jp.residuals[i]);
        }
    }
}

#[test]
fn zero_gain_is_pure_pseudo_inverse_tracking() {
    let p = problem("straight_line");
    let mut config = p.baseline.clone().unwrap();
    config.alpha = 0.0;
    let jp = resolve_redundancy(&p.robot, &p.path, &config).unwrap();
    assert!(jp.pure_pseudo_inverse);
    assert!(jp.residuals.iter().all(|&r| r < config.tol));
    // Without the null-space pull the path differs from the default one.
    let default = resolve_redundancy(&p.robot, &p.path, p.baseline.as_ref().unwrap()).unwrap();
    assert!((&jp.q[5] - &default.q[5]).norm() > 1e-6);
}

#[test]
fn tiny_step_cap_flags_every_waypoint() {
    let p = problem("straight_line");
    let config = ResolutionConfig {
        step_cap: 1e-6,
        ..p.baseline.clone().unwrap()
    };
    let jp = resolve_redundancy(&p.robot, &p.path, &config).unwrap();
    assert_eq!(
        jp.branch_jumps,
        (1..p.path.waypoint_count()).collect::<Vec<_>>()
    );
}

#[test]
fn cost_scales_with_the_square_of_inertia() {
    let arm = PlanarArm::reference();
    let s = 3.0;
    let heavy = PlanarArm::new(
        arm.task(),
        arm.links()
            .iter()
            .map(|l| redundant_topp::robot::PlanarLink {
                mass: l.mass * s,
                inertia: l.inertia * s,
                ..*l
            })
            .collect(),
        arm.limits().to_vec(),
        arm.viscous().to_vec(),
        arm.coulomb().to_vec(),
        arm.gravity(),
    )
    .unwrap();
    let tangent = DVector::from_column_slice(&[0.6, -0.8]);
    for q in [[0.2, 0.9, -1.1], [1.0, -0.4, 0.7], [-0.5, 1.6, -2.0]] {
        let q = DVector::from_column_slice(&q);
        let light = dynamic_manipulability_cost(&arm, &q, &tangent);
        let scaled = dynamic_manipulability_cost(&heavy, &q, &tangent);
        assert!((scaled - s * s * light).abs() <= 1e-12 * scaled.abs());
    }
}

#[test]
fn timing_the_planners_own_path_costs_no_more() {
    // The pinned grid holds the planner's chain and is a subset of the full
    // grid, so exact velocity-only search lands on the same cost.
    let p = problem("toy_full");
    let limits = LimitSets::from_robot(&p.robot, &[Order::Velocity]);
    let grid = build_grid(&p.robot, &p.path, &p.grid).unwrap();
    let unified = plan(&p.robot, &grid, &limits, &TimeObjective, &p.options).unwrap();
    let timed = time_parametrize(
        &p.robot,
        &p.path,
        &unified.joint_path(),
        &limits,
        p.grid.pv_max,
        p.grid.pv_levels,
        p.grid.rest_to_rest,
    )
    .unwrap();
    assert_eq!(timed.cost, unified.cost);

    // With every order on, the search is no longer exact but still finds the
    // planner's own chain here.
    let full = LimitSets::from_robot(&p.robot, &Order::ALL);
    let unified = plan(&p.robot, &grid, &full, &TimeObjective, &p.options).unwrap();
    let timed = time_parametrize(
        &p.robot,
        &p.path,
        &unified.joint_path(),
        &full,
        p.grid.pv_max,
        p.grid.pv_levels,
        p.grid.rest_to_rest,
    )
    .unwrap();
    assert!(
        timed.cost <= unified.cost,
        "{} > {}",
        timed.cost,
        unified.cost
    );
}

#[test]
fn unbounded_timing_rides_the_cap() {
    let p = problem("straight_line");
    let jp = resolve_redundancy(&p.robot, &p.path, p.baseline.as_ref().unwrap()).unwrap();
    let limits = LimitSets::unbounded(p.robot.dof());
    let (pv_max, step) = (1.5, p.path.step());
    let stages = p.path.stages();
    for rest in [false, true] {
        let timed = time_parametrize(&p.robot, &p.path, &jp.q, &limits, pv_max, 30, rest).unwrap();
        let mut expected = 0.0;
        for i in 1..=stages {
            let at_end = rest && (i == 1 || i == stages);
            expected += if at_end {
                2.0 * step / pv_max
            } else {
                step / pv_max
            };
        }
        assert_eq!(timed.cost, expected, "rest_to_rest {rest}");
        assert!(timed.pv_cap_binding);
    }
}

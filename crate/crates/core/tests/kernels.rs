//! Kinematic and dynamic kernels of the planar arm against independent
//! reference computations.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use redundant_topp::robot::RobotModel;
use redundant_topp::PlanarArm;

const SAMPLES: usize = 1000;

fn random_q(arm: &PlanarArm, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(
        arm.dof(),
        arm.limits()
            .iter()
            .map(|l| rng.random_range(l.q_min..l.q_max)),
    )
}

/// Homogeneous transform of a joint rotation followed by a link.
fn link_transform(angle: f64, length: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, c * length, s, c, s * length, 0.0, 0.0, 1.0)
}

fn fk_by_transforms(arm: &PlanarArm, q: &DVector<f64>) -> DVector<f64> {
    let mut t = Matrix3::identity();
    for (link, &qk) in arm.links().iter().zip(q.iter()) {
        t *= link_transform(qk, link.length);
    }
    DVector::from_column_slice(&[t[(0, 2)], t[(1, 2)]])
}

fn wrapped_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Potential energy of all link masses.
fn potential_energy(arm: &PlanarArm, q: &DVector<f64>) -> f64 {
    let g = arm.gravity();
    let (mut theta, mut base) = (0.0, [0.0, 0.0]);
    let mut energy = 0.0;
    for (link, &qk) in arm.links().iter().zip(q.iter()) {
        theta += qk;
        let (s, c) = f64::sin_cos(theta);
        let com = [
            base[0] + c * link.com[0] - s * link.com[1],
            base[1] + s * link.com[0] + c * link.com[1],
        ];
        energy -= link.mass * (g[0] * com[0] + g[1] * com[1]);
        base = [base[0] + c * link.length, base[1] + s * link.length];
    }
    energy
}

#[test]
fn forward_kinematics_matches_transform_chain() {
    let arm = PlanarArm::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..SAMPLES {
        let q = random_q(&arm, &mut rng);
        let err = (arm.forward_kinematics(&q) - fk_by_transforms(&arm, &q)).norm();
        assert!(err < 1e-12, "fk mismatch {err} at {q}");
    }
}

#[test]
fn inverse_kinematics_round_trips() {
    let arm = PlanarArm::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_pose = 0.0f64;
    for _ in 0..SAMPLES {
        let q = random_q(&arm, &mut rng);
        let x = arm.forward_kinematics(&q);
        let v = arm.redundancy_parameters(&q);
        let sol = arm
            .inverse_kinematics(&x, &v, arm.branch_of(&q))
            .expect("pose from forward kinematics is reachable");
        let pose_err = (arm.forward_kinematics(&sol.q) - &x).norm();
        worst_pose = worst_pose.max(pose_err);
        assert!(pose_err < 1e-10, "pose error {pose_err} at {q}");
        // Away from the stretched and folded poses the joints come back too.
        if q[2].sin().abs() > 1e-3 {
            for k in 0..arm.dof() {
                let d = wrapped_diff(sol.q[k], q[k]);
                assert!(d < 1e-10, "joint {k} off by {d} at {q}");
            }
        }
    }
    println!("worst IK pose error {worst_pose:e}");
}

#[test]
fn jacobian_matches_central_differences() {
    let arm = PlanarArm::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    for _ in 0..SAMPLES {
        let q = random_q(&arm, &mut rng);
        let jac = arm.jacobian(&q);
        let mut fd = DMatrix::zeros(arm.task_dim(), arm.dof());
        for k in 0..arm.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let col = (arm.forward_kinematics(&qp) - arm.forward_kinematics(&qm)) / (2.0 * h);
            fd.set_column(k, &col);
        }
        let err = (&jac - &fd).amax();
        assert!(err < 1e-6, "jacobian error {err} at {q}");
    }
}

#[test]
fn gravity_torque_is_potential_gradient() {
    let arm = PlanarArm::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let zero = DVector::zeros(arm.dof());
    for _ in 0..SAMPLES {
        let q = random_q(&arm, &mut rng);
        // At rest only gravity remains in the bias forces.
        let tau = arm.bias_forces(&q, &zero);
        for k in 0..arm.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let grad = (potential_energy(&arm, &qp) - potential_energy(&arm, &qm)) / (2.0 * h);
            assert!(
                (tau[k] - grad).abs() < 1e-6,
                "joint {k}: {} vs {grad}",
                tau[k]
            );
        }
    }
}

#[test]
fn inertia_matrix_is_symmetric_positive_definite() {
    let arm = PlanarArm::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..SAMPLES {
        let q = random_q(&arm, &mut rng);
        let h = arm.inertia_matrix(&q);
        assert!((&h - h.transpose()).amax() < 1e-14);
        let eig = h.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0, "not positive definite at {q}");
        assert!(h.cholesky().is_some());
    }
}

#[test]
fn velocity_forces_do_no_net_work_beyond_inertia_change() {
    // Without gravity and friction, qd . C(q, qd) qd = 1/2 qd . dH/dt qd.
    let arm = PlanarArm::reference()
        .with_gravity([0.0, 0.0])
        .with_friction(vec![0.0; 3], vec![0.0; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-6;
    for _ in 0..200 {
        let q = random_q(&arm, &mut rng);
        let qd = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let power = qd.dot(&arm.bias_forces(&q, &qd));
        let h_dot =
            (arm.inertia_matrix(&(&q + &qd * h)) - arm.inertia_matrix(&(&q - &qd * h))) / (2.0 * h);
        let expected = 0.5 * qd.dot(&(h_dot * &qd));
        assert!((power - expected).abs() < 1e-6, "{power} vs {expected}");
    }
}

#[test]
fn inverse_dynamics_is_inertia_times_acceleration_plus_bias() {
    let arm = PlanarArm::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let q = random_q(&arm, &mut rng);
        let qd = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let qdd = DVector::from_fn(3, |_, _| rng.random_range(-10.0..10.0));
        let zero = DVector::zeros(3);
        let rnea = arm.rigid_body_torques(&q, &qd, &qdd) + arm.friction_torques(&qd);
        let split = arm.inertia_matrix(&q) * &qdd + arm.bias_forces(&q, &qd);
        assert!((&rnea - &split).amax() < 1e-10);
        let unloaded =
            arm.rigid_body_torques(&q, &zero, &qdd) - arm.rigid_body_torques(&q, &zero, &zero);
        assert!((unloaded - arm.inertia_matrix(&q) * &qdd).amax() < 1e-10);
    }
}

//! Canonical chains and seeded trial sets used by tests, examples, and the
//! experiment harness.

use nalgebra::{DVector, Isometry3, Translation3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{KinematicChain, RigidBody};

/// Planar two-link arm with unit links, both joints about `z`, and an `ee`
/// frame at the tip.
pub fn planar_2link() -> KinematicChain {
    let mut chain = KinematicChain::new();
    chain.add_joint(Isometry3::identity(), Vector3::z()).unwrap();
    chain
        .add_joint(Translation3::new(1.0, 0.0, 0.0).into(), Vector3::z())
        .unwrap();
    chain
        .add_frame("ee", 2, Translation3::new(1.0, 0.0, 0.0).into())
        .unwrap();
    chain
}

/// Point-mass pendulum of mass `m` at distance `l` from a single joint
/// about `z`.
pub fn pendulum(mass: f64, length: f64) -> KinematicChain {
    let mut chain = KinematicChain::new();
    chain.add_joint(Isometry3::identity(), Vector3::z()).unwrap();
    chain
        .add_body(RigidBody::point_mass(1, mass, Vector3::new(length, 0.0, 0.0)).unwrap())
        .unwrap();
    chain
        .add_frame("ee", 1, Translation3::new(length, 0.0, 0.0).into())
        .unwrap();
    chain
}

/// Generic 8-DOF serial chain with alternating joint axes and an `ee` frame,
/// roughly one meter of reach.
pub fn serial_chain_8dof() -> KinematicChain {
    let mut chain = KinematicChain::new();
    chain
        .add_joint(Translation3::new(0.0, 0.0, 0.15).into(), Vector3::z())
        .unwrap();
    for j in 1..8 {
        let axis = if j % 2 == 1 { Vector3::y() } else { Vector3::z() };
        chain
            .add_joint(Translation3::new(0.12, 0.0, 0.03).into(), axis)
            .unwrap();
    }
    chain
        .add_frame("ee", 8, Translation3::new(0.1, 0.0, 0.0).into())
        .unwrap();
    chain
}

/// Three-joint arm carrying the cylinder mass model: 9 kg upper arm and
/// forearm, 0.9 kg hand, all 0.5 m x 0.12 m uniform cylinders aligned with
/// their links.
pub fn arm_3dof_with_bodies() -> KinematicChain {
    let mut chain = KinematicChain::new();
    chain.add_joint(Translation3::new(0.0, 0.0, 0.2).into(), Vector3::z()).unwrap();
    chain.add_joint(Translation3::new(0.5, 0.0, 0.0).into(), Vector3::y()).unwrap();
    chain.add_joint(Translation3::new(0.5, 0.0, 0.0).into(), Vector3::y()).unwrap();
    let centered = |x: f64| Isometry3::from(Translation3::new(x, 0.0, 0.0));
    chain
        .add_body(RigidBody::uniform_cylinder(1, 9.0, 0.5, 0.12, centered(0.25)).unwrap())
        .unwrap();
    chain
        .add_body(RigidBody::uniform_cylinder(2, 9.0, 0.5, 0.12, centered(0.25)).unwrap())
        .unwrap();
    chain
        .add_body(RigidBody::uniform_cylinder(3, 0.9, 0.5, 0.12, centered(0.1)).unwrap())
        .unwrap();
    chain
        .add_frame("ee", 3, Translation3::new(0.25, 0.0, 0.0).into())
        .unwrap();
    chain
}

/// A start configuration paired with a reachable workspace goal point.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReachTrial {
    pub q_start: Vec<f64>,
    pub goal: [f64; 3],
}

/// Generates `n` seeded reach trials for `chain`: random interior start
/// configurations and goals taken from the forward kinematics of other
/// random configurations, re-drawn until the goal is at least
/// `min_distance` away from the start end-effector position.
pub fn seeded_reach_trials(
    chain: &KinematicChain,
    frame: &str,
    n: usize,
    seed: u64,
    min_distance: f64,
) -> Vec<ReachTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = chain.dof();
    let random_q = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.random_range(-0.9..0.9))
    };
    let mut trials = Vec::with_capacity(n);
    while trials.len() < n {
        let q_start = random_q(&mut rng);
        let q_goal = random_q(&mut rng);
        let start_state = chain.forward_kinematics(&q_start).unwrap();
        let goal_state = chain.forward_kinematics(&q_goal).unwrap();
        let start_ee = chain.frame_pose(&start_state, frame).unwrap().origin;
        let goal = chain.frame_pose(&goal_state, frame).unwrap().origin;
        if (goal - start_ee).norm() < min_distance {
            continue;
        }
        trials.push(ReachTrial {
            q_start: q_start.as_slice().to_vec(),
            goal: [goal.x, goal.y, goal.z],
        });
    }
    trials
}

//! Distributional/traditional inertia conversions and the Monte-Carlo
//! particle energy oracle.
//!
//! The distributional inertia matrix `B` holds second moments of the mass
//! density about the center of mass, `B_ij = integral of u_i u_j rho(u) du`.
//! It relates to the traditional inertia matrix `I` by a linear map:
//! `B = tr(I)/2 * Id - I` and `I = tr(B) * Id - B`.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::{ChainState, KinematicChain};
use nalgebra::DVector;

/// Converts a traditional inertia matrix into the distributional form:
/// `B_ii = (I_jj + I_kk - I_ii)/2`, `B_ij = -I_ij` off the diagonal.
///
/// Fails when a derived diagonal entry is negative, which means no physical
/// mass distribution has the given inertia.
pub fn distributional_from_traditional(inertia: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let b = Matrix3::identity() * (inertia.trace() / 2.0) - inertia;
    for i in 0..3 {
        if b[(i, i)] < 0.0 {
            return Err(Error::NonRealizableInertia { axis: i, value: b[(i, i)] });
        }
    }
    Ok(b)
}

/// Inverse conversion: `I_ii = B_jj + B_kk`, `I_ij = -B_ij` off the diagonal.
pub fn traditional_from_distributional(b: &Matrix3<f64>) -> Matrix3<f64> {
    Matrix3::identity() * b.trace() - b
}

/// Uniform-density solid shapes supported by the sampling oracle, described
/// in principal center-of-mass coordinates. Cylinders extend along the first
/// principal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleShape {
    Cylinder { length: f64, radius: f64 },
    Box { half_extents: Vector3<f64> },
    Sphere { radius: f64 },
}

/// Draws a point of the uniform density in principal center-of-mass
/// coordinates.
pub fn sample_local_point(shape: &SampleShape, rng: &mut impl Rng) -> Vector3<f64> {
    match *shape {
        SampleShape::Cylinder { length, radius } => {
            let u1 = rng.random_range(-0.5 * length..=0.5 * length);
            // Uniform over the disc via radius transform.
            let r = radius * rng.random_range(0.0..=1.0f64).sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            Vector3::new(u1, r * phi.cos(), r * phi.sin())
        }
        SampleShape::Box { half_extents } => Vector3::new(
            rng.random_range(-half_extents.x..=half_extents.x),
            rng.random_range(-half_extents.y..=half_extents.y),
            rng.random_range(-half_extents.z..=half_extents.z),
        ),
        SampleShape::Sphere { radius } => loop {
            let p = Vector3::new(
                rng.random_range(-radius..=radius),
                rng.random_range(-radius..=radius),
                rng.random_range(-radius..=radius),
            );
            if p.norm_squared() <= radius * radius {
                break p;
            }
        },
    }
}

/// Velocity of a rigid body's frame: center-of-mass velocity plus the world
/// velocities of the three principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyVelocity {
    pub com: Vector3<f64>,
    pub axes: [Vector3<f64>; 3],
}

impl BodyVelocity {
    /// Frame velocity of body `body` induced by joint velocity `qdot`.
    pub fn from_chain(
        chain: &KinematicChain,
        state: &ChainState,
        body: usize,
        qdot: &DVector<f64>,
    ) -> Result<Self> {
        let b = &chain.bodies()[body];
        let pose = chain.body_pose(state, body);
        let com = chain.jacobian_point(state, b.link, &pose.origin) * qdot;
        let mut axes = [Vector3::zeros(); 3];
        for (i, axis) in axes.iter_mut().enumerate() {
            let v = chain.jacobian_axis(state, body, i)? * qdot;
            *axis = Vector3::new(v[0], v[1], v[2]);
        }
        Ok(Self { com: Vector3::new(com[0], com[1], com[2]), axes })
    }
}

/// Monte-Carlo estimate of a rigid body's kinetic energy by sampling
/// particles of the mass density and summing `0.5 m_i ||xdot_i||^2`.
///
/// Intended as a verification oracle, not a production path: the analytic
/// energy is the squared velocity of the inertial map.
pub fn sample_body_energy(
    mass: f64,
    shape: &SampleShape,
    velocity: &BodyVelocity,
    n_samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let u = sample_local_point(shape, rng);
        let xdot =
            velocity.com + u.x * velocity.axes[0] + u.y * velocity.axes[1] + u.z * velocity.axes[2];
        acc += 0.5 * xdot.norm_squared();
    }
    mass * acc / n_samples as f64
}

/// Monte-Carlo kinetic energy of every body on a moving chain.
///
/// Fails if any body lacks a sampleable shape.
pub fn sampled_chain_energy(
    chain: &KinematicChain,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let state = chain.forward_kinematics(q)?;
    let mut total = 0.0;
    for (bi, body) in chain.bodies().iter().enumerate() {
        let shape = body.shape.as_ref().ok_or(Error::UnsupportedShape)?;
        let vel = BodyVelocity::from_chain(chain, &state, bi, qdot)?;
        total += sample_body_energy(body.mass, shape, &vel, n_samples, rng);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RigidBody;
    use approx::assert_relative_eq;
    use nalgebra::Isometry3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        (a + a.transpose()) / 2.0
    }

    #[test]
    fn diagonal_conversion_example() {
        let i = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 4.0));
        let b = distributional_from_traditional(&i).unwrap();
        assert_eq!(b, Matrix3::from_diagonal(&Vector3::new(2.5, 1.5, 0.5)));
        let back = traditional_from_distributional(&b);
        assert_eq!(back, i);
    }

    #[test]
    fn off_diagonal_entries_are_negated() {
        let mut i = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0));
        i[(0, 1)] = 0.1;
        i[(1, 0)] = 0.1;
        let b = distributional_from_traditional(&i).unwrap();
        assert_relative_eq!(b[(0, 1)], -0.1);
        assert_relative_eq!(b[(1, 0)], -0.1);
    }

    #[test]
    fn solid_sphere_distribution() {
        // I = (2/5) m r^2 Id for m = 1, r = 1 maps to B = 0.2 Id, matching
        // the direct second moment of the unit ball.
        let i = Matrix3::identity() * 0.4;
        let b = distributional_from_traditional(&i).unwrap();
        assert_relative_eq!(b, Matrix3::identity() * 0.2, epsilon = 1e-15);

        let sphere = RigidBody::uniform_sphere(0, 1.0, 1.0, Isometry3::identity()).unwrap();
        assert_relative_eq!(sphere.b_diag, Vector3::repeat(0.2), epsilon = 1e-15);
    }

    #[test]
    fn zero_maps_to_zero() {
        assert_eq!(traditional_from_distributional(&Matrix3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn cylinder_traditional_inertia() {
        let b = Matrix3::from_diagonal(&Vector3::new(0.1875, 0.0324, 0.0324));
        let i = traditional_from_distributional(&b);
        assert_relative_eq!(i[(0, 0)], 0.0648, epsilon = 1e-12); // 0.5 m r^2
        assert_relative_eq!(i[(1, 1)], 0.2199, epsilon = 1e-12); // m (r^2/4 + L^2/12)
        assert_relative_eq!(i[(2, 2)], 0.2199, epsilon = 1e-12);
    }

    #[test]
    fn conversion_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let m = random_symmetric(&mut rng);
            let back = traditional_from_distributional(
                &(Matrix3::identity() * (m.trace() / 2.0) - m),
            );
            assert!((back - m).norm() <= 1e-14 * m.norm().max(1.0));
        }
    }

    #[test]
    fn non_realizable_inertia_is_flagged() {
        // I = diag(4, 1, 1) would need B_11 = -1.
        let i = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        match distributional_from_traditional(&i) {
            Err(Error::NonRealizableInertia { axis, .. }) => assert_eq!(axis, 0),
            other => panic!("expected non-realizable error, got {other:?}"),
        }
    }

    #[test]
    fn sample_means_vanish_in_principal_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let shapes = [
            SampleShape::Cylinder { length: 0.5, radius: 0.12 },
            SampleShape::Box { half_extents: Vector3::new(0.2, 0.1, 0.3) },
            SampleShape::Sphere { radius: 0.4 },
        ];
        let n = 200_000;
        for shape in shapes {
            let mut mean = Vector3::zeros();
            for _ in 0..n {
                mean += sample_local_point(&shape, &mut rng);
            }
            mean /= n as f64;
            assert!(mean.norm() < 5e-3, "first moment {mean:?} for {shape:?}");
        }
    }

    #[test]
    fn sampled_second_moments_match_b_diag() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let body = RigidBody::uniform_cylinder(0, 9.0, 0.5, 0.12, Isometry3::identity()).unwrap();
        let shape = body.shape.unwrap();
        let n = 200_000;
        let mut second = Vector3::zeros();
        for _ in 0..n {
            let u = sample_local_point(&shape, &mut rng);
            second += u.component_mul(&u);
        }
        second *= body.mass / n as f64;
        for i in 0..3 {
            assert_relative_eq!(second[i], body.b_diag[i], max_relative = 0.01);
        }
    }

    #[test]
    fn pure_translation_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let v = Vector3::new(0.3, -1.1, 0.2);
        let vel = BodyVelocity { com: v, axes: [Vector3::zeros(); 3] };
        let shape = SampleShape::Box { half_extents: Vector3::new(0.1, 0.2, 0.3) };
        let energy = sample_body_energy(5.0, &shape, &vel, 1000, &mut rng);
        // Translation factors out of the integral entirely.
        assert_relative_eq!(energy, 0.5 * 5.0 * v.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn axial_spin_energy_matches_classical_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        let (mass, length, radius) = (9.0, 0.5, 0.12);
        let omega = 2.4;
        // Spin about the cylinder axis (first principal direction, x):
        // e_1 fixed, e_2 and e_3 rotate with angular rate omega.
        let vel = BodyVelocity {
            com: Vector3::zeros(),
            axes: [
                Vector3::zeros(),
                omega * Vector3::z(),
                -omega * Vector3::y(),
            ],
        };
        let shape = SampleShape::Cylinder { length, radius };
        let energy = sample_body_energy(mass, &shape, &vel, 100_000, &mut rng);
        let expected = 0.5 * (0.5 * mass * radius * radius) * omega * omega;
        assert_relative_eq!(energy, expected, max_relative = 0.01);
    }

    #[test]
    fn unsupported_shape_is_reported() {
        let mut chain = KinematicChain::new();
        chain
            .add_joint(Isometry3::identity(), Vector3::z())
            .unwrap();
        chain
            .add_body(RigidBody::new(1, 1.0, Vector3::repeat(0.1), Isometry3::identity()).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = DVector::zeros(1);
        let qd = DVector::zeros(1);
        assert!(matches!(
            sampled_chain_energy(&chain, &q, &qd, 1000, &mut rng),
            Err(Error::UnsupportedShape)
        ));
    }
}

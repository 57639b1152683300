//! Serial kinematic chains: forward kinematics, analytic Jacobians, and the
//! rigid-body inertial map.
//!
//! Chains are sequences of revolute joints. Link `0` is the fixed base;
//! joint `j` (zero-based) connects link `j` to link `j + 1` through a fixed
//! offset transform followed by a rotation of angle `q_j` about a unit axis.
//! Rigid bodies attach to links with a local frame whose origin is the
//! center of mass and whose axes are the principal directions of the mass
//! distribution.
//!
//! The *inertial map* stacks, per body, the mass-weighted center of mass and
//! the `sqrt(b_i)`-weighted principal axes into a 12-dimensional task vector
//! whose squared Euclidean velocity equals the body's kinetic energy. Its
//! Jacobian — and with it the full Gauss-Newton curvature of kinetic-energy
//! terms — costs no more than one evaluation of the joint-space inertia
//! matrix `M(q) = J^T J`.

mod file;
mod inertia;

pub use file::{BodySpec, ChainFile, FrameSpec, JointSpec, CHAIN_FILE_VERSION};
pub use inertia::{
    distributional_from_traditional, sample_body_energy, sample_local_point,
    sampled_chain_energy, traditional_from_distributional, BodyVelocity, SampleShape,
};

use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Rotation3, Unit, UnitQuaternion, UnitVector3, Vector3,
};

use crate::error::{Error, Result};

/// One revolute joint: a fixed parent-frame transform followed by rotation
/// about `axis`.
#[derive(Debug, Clone)]
pub struct Joint {
    pub offset: Isometry3<f64>,
    pub axis: UnitVector3<f64>,
}

impl Joint {
    pub fn new(offset: Isometry3<f64>, axis: Vector3<f64>) -> Result<Self> {
        let norm = axis.norm();
        if norm < 1e-9 {
            return Err(Error::InvalidChain("joint axis must be nonzero".into()));
        }
        Ok(Self { offset, axis: Unit::new_normalize(axis) })
    }
}

/// A rigid body attached to a link.
///
/// `local` maps the body's principal frame (origin at the center of mass,
/// axes along principal directions) into the link frame. `b_diag` holds the
/// diagonal of the distributional inertia matrix along those axes: the
/// second moments `b_i = integral of u_i^2 rho(u) du` of the mass density in
/// principal center-of-mass coordinates.
#[derive(Debug, Clone)]
pub struct RigidBody {
    pub link: usize,
    pub mass: f64,
    pub b_diag: Vector3<f64>,
    pub local: Isometry3<f64>,
    /// Sampleable density for Monte-Carlo verification, when known.
    pub shape: Option<SampleShape>,
}

impl RigidBody {
    pub fn new(link: usize, mass: f64, b_diag: Vector3<f64>, local: Isometry3<f64>) -> Result<Self> {
        if mass <= 0.0 {
            return Err(Error::InvalidChain(format!("body mass must be positive, got {mass}")));
        }
        if b_diag.min() < 0.0 {
            return Err(Error::InvalidChain(format!(
                "distributional inertia diagonal must be nonnegative, got {b_diag:?}"
            )));
        }
        Ok(Self { link, mass, b_diag, local, shape: None })
    }

    /// Uniform solid cylinder with its long axis along the first principal
    /// direction: `b = (m L^2/12, m r^2/4, m r^2/4)`.
    pub fn uniform_cylinder(
        link: usize,
        mass: f64,
        length: f64,
        radius: f64,
        local: Isometry3<f64>,
    ) -> Result<Self> {
        let b = Vector3::new(
            mass * length * length / 12.0,
            mass * radius * radius / 4.0,
            mass * radius * radius / 4.0,
        );
        let mut body = Self::new(link, mass, b, local)?;
        body.shape = Some(SampleShape::Cylinder { length, radius });
        Ok(body)
    }

    /// Uniform solid box with the given half-extents: `b_i = m h_i^2/3`.
    pub fn uniform_box(
        link: usize,
        mass: f64,
        half_extents: Vector3<f64>,
        local: Isometry3<f64>,
    ) -> Result<Self> {
        let b = half_extents.map(|h| mass * h * h / 3.0);
        let mut body = Self::new(link, mass, b, local)?;
        body.shape = Some(SampleShape::Box { half_extents });
        Ok(body)
    }

    /// Uniform solid sphere: `b_i = m r^2/5`.
    pub fn uniform_sphere(
        link: usize,
        mass: f64,
        radius: f64,
        local: Isometry3<f64>,
    ) -> Result<Self> {
        let b = Vector3::repeat(mass * radius * radius / 5.0);
        let mut body = Self::new(link, mass, b, local)?;
        body.shape = Some(SampleShape::Sphere { radius });
        Ok(body)
    }

    /// Point mass (all second moments zero).
    pub fn point_mass(link: usize, mass: f64, position: Vector3<f64>) -> Result<Self> {
        Self::new(link, mass, Vector3::zeros(), Isometry3::translation(position.x, position.y, position.z))
    }

    /// Builds a body from a full (possibly non-diagonal) distributional
    /// inertia matrix by diagonalizing it; the body's principal axes are the
    /// eigenvectors, appended to the supplied center-of-mass position.
    pub fn from_full_distributional(
        link: usize,
        mass: f64,
        b_full: &Matrix3<f64>,
        com: Vector3<f64>,
    ) -> Result<Self> {
        if (b_full - b_full.transpose()).norm() > 1e-10 * b_full.norm().max(1.0) {
            return Err(Error::InvalidChain("distributional inertia matrix must be symmetric".into()));
        }
        let eig = b_full.symmetric_eigen();
        for (i, v) in eig.eigenvalues.iter().enumerate() {
            if *v < -1e-12 {
                return Err(Error::NonRealizableInertia { axis: i, value: *v });
            }
        }
        let mut rot = eig.eigenvectors;
        if rot.determinant() < 0.0 {
            rot.column_mut(2).neg_mut();
        }
        let local = Isometry3::from_parts(
            com.into(),
            Rotation3::from_matrix_unchecked(rot).into(),
        );
        Self::new(link, mass, eig.eigenvalues.map(|v| v.max(0.0)), local)
    }
}

/// A labeled point/frame on a link, used as a task-map target.
#[derive(Debug, Clone)]
pub struct NamedFrame {
    pub name: String,
    pub link: usize,
    pub local: Isometry3<f64>,
}

/// World pose of a frame: origin plus right-handed orthonormal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePose {
    pub origin: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl FramePose {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self { origin: iso.translation.vector, rotation: iso.rotation.to_rotation_matrix() }
    }

    /// The `i`-th world axis (column `i` of the local-to-world rotation).
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.rotation.matrix().column(i).into_owned()
    }

    /// Checks orthonormality and right-handedness of the axes.
    pub fn is_orthonormal_right_handed(&self, tol: f64) -> bool {
        let m = self.rotation.matrix();
        let gram = m.transpose() * m;
        let cross = self.axis(0).cross(&self.axis(1));
        (gram - Matrix3::identity()).norm() <= tol && (cross - self.axis(2)).norm() <= tol
    }
}

/// A serial chain of revolute joints with attached bodies and named frames.
#[derive(Debug, Clone, Default)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    bodies: Vec<RigidBody>,
    frames: Vec<NamedFrame>,
}

/// Forward-kinematics result for one configuration.
///
/// Holds every link pose plus the world origin and axis of every joint, so
/// Jacobian columns can be formed by cross products without re-walking the
/// chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    link_poses: Vec<Isometry3<f64>>,
    joint_origins: Vec<Vector3<f64>>,
    joint_axes: Vec<Vector3<f64>>,
}

impl ChainState {
    pub fn link_pose(&self, link: usize) -> FramePose {
        FramePose::from_isometry(&self.link_poses[link])
    }

    pub fn link_isometry(&self, link: usize) -> &Isometry3<f64> {
        &self.link_poses[link]
    }

    /// World position of a point given in link-local coordinates.
    pub fn point_world(&self, link: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.link_poses[link].transform_vector(local) + self.link_poses[link].translation.vector
    }

    pub fn joint_origin(&self, joint: usize) -> Vector3<f64> {
        self.joint_origins[joint]
    }

    pub fn joint_axis(&self, joint: usize) -> Vector3<f64> {
        self.joint_axes[joint]
    }
}

impl KinematicChain {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a revolute joint; returns the index of the new distal link.
    pub fn add_joint(&mut self, offset: Isometry3<f64>, axis: Vector3<f64>) -> Result<usize> {
        self.joints.push(Joint::new(offset, axis)?);
        Ok(self.joints.len())
    }

    pub fn add_body(&mut self, body: RigidBody) -> Result<usize> {
        if body.link > self.joints.len() {
            return Err(Error::InvalidChain(format!(
                "body attached to link {} but chain has only {} links",
                body.link,
                self.joints.len() + 1
            )));
        }
        self.bodies.push(body);
        Ok(self.bodies.len() - 1)
    }

    pub fn add_frame(&mut self, name: &str, link: usize, local: Isometry3<f64>) -> Result<()> {
        if link > self.joints.len() {
            return Err(Error::InvalidChain(format!(
                "frame '{name}' attached to link {link} but chain has only {} links",
                self.joints.len() + 1
            )));
        }
        self.frames.push(NamedFrame { name: name.to_string(), link, local });
        Ok(())
    }

    /// Number of joints = configuration dimension.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn bodies(&self) -> &[RigidBody] {
        &self.bodies
    }

    pub fn frames(&self) -> &[NamedFrame] {
        &self.frames
    }

    pub fn frame(&self, name: &str) -> Result<&NamedFrame> {
        self.frames
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFrame(name.to_string()))
    }

    fn check_dim(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                context: "configuration",
                expected: self.dof(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// Forward kinematics: world pose of every link and joint.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<ChainState> {
        self.check_dim(q)?;
        let n = self.joints.len();
        let mut link_poses = Vec::with_capacity(n + 1);
        let mut joint_origins = Vec::with_capacity(n);
        let mut joint_axes = Vec::with_capacity(n);
        link_poses.push(Isometry3::identity());
        for (j, joint) in self.joints.iter().enumerate() {
            let pre = link_poses[j] * joint.offset;
            joint_origins.push(pre.translation.vector);
            joint_axes.push(pre.rotation.transform_vector(&joint.axis));
            let rot = UnitQuaternion::from_axis_angle(&joint.axis, q[j]);
            link_poses.push(pre * rot);
        }
        Ok(ChainState { link_poses, joint_origins, joint_axes })
    }

    /// World pose of a named frame.
    pub fn frame_pose(&self, state: &ChainState, name: &str) -> Result<FramePose> {
        let f = self.frame(name)?;
        Ok(FramePose::from_isometry(&(state.link_isometry(f.link) * f.local)))
    }

    /// World pose of a body's principal frame (origin at the center of mass).
    pub fn body_pose(&self, state: &ChainState, body: usize) -> FramePose {
        let b = &self.bodies[body];
        FramePose::from_isometry(&(state.link_isometry(b.link) * b.local))
    }

    /// Jacobian of a world point attached to `link`: column `j` is
    /// `a_j x (p - o_j)` for ancestor joints `j < link`, zero otherwise.
    pub fn jacobian_point(
        &self,
        state: &ChainState,
        link: usize,
        point_world: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(3, self.dof());
        for j in 0..link.min(self.dof()) {
            let col = state.joint_axis(j).cross(&(point_world - state.joint_origin(j)));
            jac.column_mut(j).copy_from(&col);
        }
        jac
    }

    /// Jacobian of a named frame's origin.
    pub fn jacobian_frame_point(&self, state: &ChainState, name: &str) -> Result<DMatrix<f64>> {
        let f = self.frame(name)?;
        let p = state.point_world(f.link, &f.local.translation.vector);
        Ok(self.jacobian_point(state, f.link, &p))
    }

    /// Jacobian of a body axis `e_i` (unit principal direction in world
    /// coordinates): column `j` is `a_j x e_i` for ancestor joints.
    pub fn jacobian_axis(&self, state: &ChainState, body: usize, axis: usize) -> Result<DMatrix<f64>> {
        if axis >= 3 {
            return Err(Error::Config(format!("body axis index must be 0..3, got {axis}")));
        }
        let b = &self.bodies[body];
        let e = self.body_pose(state, body).axis(axis);
        let mut jac = DMatrix::zeros(3, self.dof());
        for j in 0..b.link.min(self.dof()) {
            let col = state.joint_axis(j).cross(&e);
            jac.column_mut(j).copy_from(&col);
        }
        Ok(jac)
    }

    /// Task dimension of the inertial map: 12 numbers per body.
    pub fn inertial_map_dim(&self) -> usize {
        12 * self.bodies.len()
    }

    /// The rigid-body inertial map: per body, the stacked vector
    /// `(sqrt(M) x_c; sqrt(b_1) e_1; sqrt(b_2) e_2; sqrt(b_3) e_3)` in world
    /// coordinates. Its squared Euclidean velocity is twice the kinetic
    /// energy.
    pub fn inertial_map(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let state = self.forward_kinematics(q)?;
        Ok(self.inertial_map_with_state(&state))
    }

    pub fn inertial_map_with_state(&self, state: &ChainState) -> DVector<f64> {
        let mut z = DVector::zeros(self.inertial_map_dim());
        for (bi, body) in self.bodies.iter().enumerate() {
            let pose = self.body_pose(state, bi);
            let base = 12 * bi;
            z.fixed_rows_mut::<3>(base).copy_from(&(body.mass.sqrt() * pose.origin));
            for i in 0..3 {
                z.fixed_rows_mut::<3>(base + 3 * (i + 1))
                    .copy_from(&(body.b_diag[i].sqrt() * pose.axis(i)));
            }
        }
        z
    }

    /// Jacobian of the inertial map, stacking `sqrt(M) J_point` and
    /// `sqrt(b_i) J_axis` per body.
    pub fn inertial_map_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let state = self.forward_kinematics(q)?;
        Ok(self.inertial_map_jacobian_with_state(&state))
    }

    pub fn inertial_map_jacobian_with_state(&self, state: &ChainState) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.inertial_map_dim(), self.dof());
        for (bi, body) in self.bodies.iter().enumerate() {
            let pose = self.body_pose(state, bi);
            let base = 12 * bi;
            let jp = self.jacobian_point(state, body.link, &pose.origin);
            jac.rows_mut(base, 3).copy_from(&(body.mass.sqrt() * jp));
            for i in 0..3 {
                let e = pose.axis(i);
                let w = body.b_diag[i].sqrt();
                for j in 0..body.link.min(self.dof()) {
                    let col = state.joint_axis(j).cross(&e) * w;
                    jac.fixed_view_mut::<3, 1>(base + 3 * (i + 1), j).copy_from(&col);
                }
            }
        }
        jac
    }

    /// Joint-space inertia matrix `M(q) = J^T J` pulled back through the
    /// inertial map. Symmetric positive semidefinite by construction.
    pub fn inertia_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let jac = self.inertial_map_jacobian(q)?;
        Ok(jac.transpose() * jac)
    }

    /// Kinetic energy `0.5 qdot^T M(q) qdot`, evaluated as the squared
    /// task-space velocity of the inertial map.
    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<f64> {
        self.check_dim(qdot)?;
        let jac = self.inertial_map_jacobian(q)?;
        Ok(0.5 * (jac * qdot).norm_squared())
    }
}

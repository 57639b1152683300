//! Constraint terms and the constraint set of a trajectory problem.
//!
//! Constraints are scalar clique functions with the same value/gradient/
//! Gauss-Newton contracts as cost terms. Equalities demand `h = 0`,
//! inequalities `g <= 0`. Each (term, clique) pair becomes one multiplier
//! row in the augmented Lagrangian.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;
use crate::objective::{Attachment, CliqueTerm};
use crate::traj::CliqueIndexing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

struct ConstraintEntry {
    kind: ConstraintKind,
    term: Box<dyn CliqueTerm>,
    attachment: Attachment,
}

/// The constraints of a problem, expanded into per-clique rows at solve
/// time.
#[derive(Default)]
pub struct ConstraintSet {
    entries: Vec<ConstraintEntry>,
}

/// One multiplier row: a constraint term evaluated on one clique.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintRow {
    pub entry: usize,
    pub kind: ConstraintKind,
    pub clique: usize,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(
        &mut self,
        kind: ConstraintKind,
        term: Box<dyn CliqueTerm>,
        attachment: Attachment,
    ) -> &mut Self {
        self.entries.push(ConstraintEntry { kind, term, attachment });
        self
    }

    pub fn term(&self, entry: usize) -> &dyn CliqueTerm {
        self.entries[entry].term.as_ref()
    }

    /// Expands entries into rows over the given indexing, validating
    /// windows and attachments.
    pub fn rows(&self, indexing: &CliqueIndexing, dim: usize) -> Result<Vec<ConstraintRow>> {
        let mut rows = Vec::new();
        for (e, entry) in self.entries.iter().enumerate() {
            if entry.term.window() != indexing.window() {
                return Err(Error::DimensionMismatch {
                    context: "constraint clique window",
                    expected: indexing.window(),
                    actual: entry.term.window(),
                });
            }
            if entry.term.config_dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "constraint configuration dimension",
                    expected: dim,
                    actual: entry.term.config_dim(),
                });
            }
            for t in 1..=indexing.num_cliques() {
                if entry.attachment.contains(t) {
                    rows.push(ConstraintRow { entry: e, kind: entry.kind, clique: t });
                }
            }
        }
        Ok(rows)
    }
}

/// Squared-distance equality to a workspace goal:
/// `h(q) = ||x(q) - goal||^2 = 0` on the clique's center configuration.
pub struct GoalConstraint {
    chain: Arc<KinematicChain>,
    link: usize,
    local: Vector3<f64>,
    goal: Vector3<f64>,
    window: usize,
}

/// Builds the goal-proximity equality for a named chain frame.
pub fn goal_constraint(
    chain: Arc<KinematicChain>,
    frame: &str,
    goal: Vector3<f64>,
) -> Result<GoalConstraint> {
    let f = chain.frame(frame)?;
    let (link, local) = (f.link, f.local.translation.vector);
    Ok(GoalConstraint { chain, link, local, goal, window: 2 })
}

impl GoalConstraint {
    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= 1);
        self.window = window;
        self
    }

    fn center(&self) -> usize {
        1.min(self.window - 1)
    }

    fn split(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.chain.dof();
        clique.rows(self.center() * d, d).into_owned()
    }
}

impl CliqueTerm for GoalConstraint {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.chain.dof()
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let q = self.split(clique);
        let state = self.chain.forward_kinematics(&q).expect("configuration dimension");
        (state.point_world(self.link, &self.local) - self.goal).norm_squared()
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.chain.dof();
        let q = self.split(clique);
        let state = self.chain.forward_kinematics(&q).expect("configuration dimension");
        let x = state.point_world(self.link, &self.local);
        let jac = self.chain.jacobian_point(&state, self.link, &x);
        let seg = jac.transpose() * DVector::from_column_slice((x - self.goal).as_slice()) * 2.0;
        let mut grad = DVector::zeros(self.window * d);
        grad.rows_mut(self.center() * d, d).copy_from(&seg);
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        let d = self.chain.dof();
        let q = self.split(clique);
        let state = self.chain.forward_kinematics(&q).expect("configuration dimension");
        let x = state.point_world(self.link, &self.local);
        let jac = self.chain.jacobian_point(&state, self.link, &x);
        let block = jac.transpose() * &jac * 2.0;
        let mut hess = DMatrix::zeros(self.window * d, self.window * d);
        hess.view_mut((self.center() * d, self.center() * d), (d, d)).copy_from(&block);
        hess
    }
}

/// Spherical keep-out inequality with margin:
/// `g(q) = (radius + margin) - ||x(q) - center|| <= 0` for an attached
/// frame point.
pub struct ObstacleConstraint {
    chain: Arc<KinematicChain>,
    link: usize,
    local: Vector3<f64>,
    center: Vector3<f64>,
    radius: f64,
    margin: f64,
    window: usize,
}

pub fn obstacle_constraint(
    chain: Arc<KinematicChain>,
    frame: &str,
    center: Vector3<f64>,
    radius: f64,
    margin: f64,
) -> Result<ObstacleConstraint> {
    if radius <= 0.0 {
        return Err(Error::Config(format!("obstacle radius must be positive, got {radius}")));
    }
    if margin < 0.0 {
        return Err(Error::Config(format!("obstacle margin must be nonnegative, got {margin}")));
    }
    let f = chain.frame(frame)?;
    let (link, local) = (f.link, f.local.translation.vector);
    Ok(ObstacleConstraint { chain, link, local, center, radius, margin, window: 2 })
}

impl ObstacleConstraint {
    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= 1);
        self.window = window;
        self
    }

    fn center_offset(&self) -> usize {
        1.min(self.window - 1)
    }

    fn point_and_state(&self, clique: &DVector<f64>) -> (Vector3<f64>, crate::kinematics::ChainState) {
        let d = self.chain.dof();
        let q = clique.rows(self.center_offset() * d, d).into_owned();
        let state = self.chain.forward_kinematics(&q).expect("configuration dimension");
        (state.point_world(self.link, &self.local), state)
    }
}

impl CliqueTerm for ObstacleConstraint {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.chain.dof()
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let (x, _) = self.point_and_state(clique);
        (self.radius + self.margin) - (x - self.center).norm()
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.chain.dof();
        let (x, state) = self.point_and_state(clique);
        let dist = (x - self.center).norm().max(1e-12);
        let n = (x - self.center) / dist;
        let jac = self.chain.jacobian_point(&state, self.link, &x);
        let seg = -(jac.transpose() * DVector::from_column_slice(n.as_slice()));
        let mut grad = DVector::zeros(self.window * d);
        grad.rows_mut(self.center_offset() * d, d).copy_from(&seg);
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        // Task-space curvature of -||x - c||: -(I - n n^T)/dist, pulled
        // back through the point Jacobian (the Jacobian-derivative term is
        // dropped as usual).
        let d = self.chain.dof();
        let (x, state) = self.point_and_state(clique);
        let delta = x - self.center;
        let dist = delta.norm().max(1e-12);
        let n = delta / dist;
        let proj = nalgebra::Matrix3::identity() - n * n.transpose();
        let jac = self.chain.jacobian_point(&state, self.link, &x);
        let block = -(jac.transpose() * proj * &jac) / dist;
        let mut hess = DMatrix::zeros(self.window * d, self.window * d);
        let c = self.center_offset() * d;
        hess.view_mut((c, c), (d, d)).copy_from(&block);
        hess
    }
}

/// One-sided joint bound: `q_i - q_max <= 0` or `q_min - q_i <= 0` on the
/// clique's center configuration.
#[derive(Debug, Clone)]
pub struct BoundConstraint {
    dim: usize,
    joint: usize,
    bound: f64,
    upper: bool,
    window: usize,
}

impl BoundConstraint {
    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= 1);
        self.window = window;
        self
    }

    fn center(&self) -> usize {
        1.min(self.window - 1)
    }
}

/// Per-joint upper and lower bound inequalities (two rows per joint).
pub fn joint_limit_constraints(q_min: &DVector<f64>, q_max: &DVector<f64>) -> Result<Vec<BoundConstraint>> {
    if q_min.len() != q_max.len() {
        return Err(Error::DimensionMismatch {
            context: "joint limit bounds",
            expected: q_min.len(),
            actual: q_max.len(),
        });
    }
    let d = q_min.len();
    let mut out = Vec::with_capacity(2 * d);
    for j in 0..d {
        if !(q_min[j] < q_max[j]) || !q_min[j].is_finite() || !q_max[j].is_finite() {
            return Err(Error::Config(format!(
                "joint {j}: bounds ({}, {}) must be finite and ordered",
                q_min[j], q_max[j]
            )));
        }
        out.push(BoundConstraint { dim: d, joint: j, bound: q_max[j], upper: true, window: 2 });
        out.push(BoundConstraint { dim: d, joint: j, bound: q_min[j], upper: false, window: 2 });
    }
    Ok(out)
}

impl CliqueTerm for BoundConstraint {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let q = clique[self.center() * self.dim + self.joint];
        if self.upper {
            q - self.bound
        } else {
            self.bound - q
        }
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let _ = clique;
        let mut grad = DVector::zeros(self.window * self.dim);
        grad[self.center() * self.dim + self.joint] = if self.upper { 1.0 } else { -1.0 };
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        let _ = clique;
        DMatrix::zeros(self.window * self.dim, self.window * self.dim)
    }

    fn true_hessian(&self, clique: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.gn_hessian(clique))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::planar_2link;
    use crate::objective::check_term_gradient;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn vv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn goal_constraint_values() {
        let chain = Arc::new(planar_2link());
        // Straight arm reaches (2, 0, 0).
        let c = goal_constraint(chain.clone(), "ee", Vector3::new(2.0, 0.0, 0.0)).unwrap();
        let clique = vv(&[9.0, 9.0, 0.0, 0.0]);
        assert_relative_eq!(c.value(&clique), 0.0, epsilon = 1e-12);

        // Offset of norm 0.1 gives h = 0.01.
        let c = goal_constraint(chain, "ee", Vector3::new(2.0, 0.1, 0.0)).unwrap();
        assert_relative_eq!(c.value(&clique), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn goal_gradient_matches_fd() {
        let chain = Arc::new(planar_2link());
        let c = goal_constraint(chain, "ee", Vector3::new(0.7, 0.9, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let clique = DVector::from_fn(4, |_, _| rng.random_range(-1.2..1.2));
            assert!(check_term_gradient(&c, &clique) < 1e-5);
        }
    }

    #[test]
    fn unknown_frame_is_reported() {
        let chain = Arc::new(planar_2link());
        assert!(matches!(
            goal_constraint(chain.clone(), "gripper", Vector3::zeros()),
            Err(Error::UnknownFrame(_))
        ));
        assert!(obstacle_constraint(chain, "gripper", Vector3::zeros(), 0.1, 0.0).is_err());
    }

    #[test]
    fn obstacle_sign_convention() {
        let chain = Arc::new(planar_2link());
        let c = obstacle_constraint(
            chain,
            "ee",
            Vector3::new(10.0, 0.0, 0.0),
            0.5,
            0.1,
        )
        .unwrap();
        // Far outside: inactive (negative).
        let clique = vv(&[0.0, 0.0, 0.0, 0.0]);
        assert!(c.value(&clique) < 0.0);
        // Exactly on the inflated surface: zero. Straight arm tip at
        // x = 2, obstacle center at 2.6 with radius+margin 0.6.
        let c = obstacle_constraint(
            Arc::new(planar_2link()),
            "ee",
            Vector3::new(2.6, 0.0, 0.0),
            0.5,
            0.1,
        )
        .unwrap();
        assert_relative_eq!(c.value(&clique), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn obstacle_gradient_matches_fd() {
        let chain = Arc::new(planar_2link());
        let c = obstacle_constraint(chain, "ee", Vector3::new(0.4, 0.5, 0.0), 0.3, 0.05)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut checked = 0;
        while checked < 20 {
            let clique = DVector::from_fn(4, |_, _| rng.random_range(-1.2..1.2));
            // The distance gradient is singular at the sphere center.
            let q = vv(&[clique[2], clique[3]]);
            let state = planar_2link().forward_kinematics(&q).unwrap();
            let x = state.point_world(2, &Vector3::new(1.0, 0.0, 0.0));
            if (x - Vector3::new(0.4, 0.5, 0.0)).norm() < 0.05 {
                continue;
            }
            assert!(check_term_gradient(&c, &clique) < 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn bound_constraints_sign_and_count() {
        let rows = joint_limit_constraints(&vv(&[-1.0, -2.0]), &vv(&[1.0, 2.0])).unwrap();
        assert_eq!(rows.len(), 4);
        let clique = vv(&[0.0, 0.0, 0.5, -2.0]);
        // Interior joint: both inequalities strictly negative.
        assert!(rows[0].value(&clique) < 0.0);
        assert!(rows[1].value(&clique) < 0.0);
        // Joint 2 sits exactly at its lower bound.
        assert_relative_eq!(rows[3].value(&clique), 0.0);
        assert!(joint_limit_constraints(&vv(&[1.0]), &vv(&[-1.0])).is_err());
    }

    #[test]
    fn rows_expand_per_clique() {
        let chain = Arc::new(planar_2link());
        let idx = CliqueIndexing::new(1, 3).unwrap();
        let mut set = ConstraintSet::new();
        set.add(
            ConstraintKind::Equality,
            Box::new(goal_constraint(chain, "ee", Vector3::zeros()).unwrap()),
            Attachment::At(vec![3]),
        );
        for b in joint_limit_constraints(&vv(&[-1.0, -1.0]), &vv(&[1.0, 1.0])).unwrap() {
            set.add(ConstraintKind::Inequality, Box::new(b), Attachment::All);
        }
        let rows = set.rows(&idx, 2).unwrap();
        // 1 goal row + 4 bounds x 4 cliques.
        assert_eq!(rows.len(), 1 + 4 * idx.num_cliques());
        assert_eq!(rows[0].clique, 3);
        assert_eq!(rows[0].kind, ConstraintKind::Equality);
    }
}

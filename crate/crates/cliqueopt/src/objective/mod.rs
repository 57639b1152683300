//! Clique objectives: task maps, term contracts, and trajectory-wide
//! assembly of values, gradients, and Gauss-Newton Hessians.

mod hessian_check;
mod terms;

pub use hessian_check::{
    fd_cross_hessian_block, fd_hessian_block, full_hessian_fd, gn_cross_hessian_block,
    gn_hessian_block, FdHessianOptions, FdScheme, HessianComparison,
};
pub use terms::{
    config_penalty_terms, joint_limit_penalty, kinetic_energy_term, posture_term,
    squared_derivative_term, JointLimitPenalty, PostureTerm, SquaredDerivativeTerm,
};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::banded::{scatter_clique_gradient, scatter_clique_hessian, BlockBandedMatrix};
use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;
use crate::traj::{extract_clique, CliqueIndexing, Trajectory};

/// A differentiable map from configuration space into a task space.
pub trait TaskMap: Send + Sync {
    /// Configuration dimension `d`.
    fn input_dim(&self) -> usize;

    /// Task dimension `m`.
    fn output_dim(&self) -> usize;

    fn eval(&self, q: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Value and Jacobian together; override when they share work.
    fn eval_with_jacobian(&self, q: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.eval(q), self.jacobian(q))
    }
}

/// The identity task map: the configuration space as its own task space.
#[derive(Debug, Clone)]
pub struct IdentityMap {
    pub dim: usize,
}

impl TaskMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, q: &DVector<f64>) -> DVector<f64> {
        q.clone()
    }

    fn jacobian(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
}

/// World position of a named chain frame.
pub struct FramePointMap {
    chain: Arc<KinematicChain>,
    link: usize,
    local: nalgebra::Vector3<f64>,
}

impl FramePointMap {
    pub fn new(chain: Arc<KinematicChain>, frame: &str) -> Result<Self> {
        let f = chain.frame(frame)?;
        let (link, local) = (f.link, f.local.translation.vector);
        Ok(Self { chain, link, local })
    }
}

impl TaskMap for FramePointMap {
    fn input_dim(&self) -> usize {
        self.chain.dof()
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn eval(&self, q: &DVector<f64>) -> DVector<f64> {
        let state = self.chain.forward_kinematics(q).expect("configuration dimension");
        let p = state.point_world(self.link, &self.local);
        DVector::from_column_slice(p.as_slice())
    }

    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.eval_with_jacobian(q).1
    }

    fn eval_with_jacobian(&self, q: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let state = self.chain.forward_kinematics(q).expect("configuration dimension");
        let p = state.point_world(self.link, &self.local);
        let jac = self.chain.jacobian_point(&state, self.link, &p);
        (DVector::from_column_slice(p.as_slice()), jac)
    }
}

/// The rigid-body inertial map of a chain (12 task dimensions per body).
pub struct InertialMap {
    chain: Arc<KinematicChain>,
}

impl InertialMap {
    pub fn new(chain: Arc<KinematicChain>) -> Self {
        Self { chain }
    }
}

impl TaskMap for InertialMap {
    fn input_dim(&self) -> usize {
        self.chain.dof()
    }

    fn output_dim(&self) -> usize {
        self.chain.inertial_map_dim()
    }

    fn eval(&self, q: &DVector<f64>) -> DVector<f64> {
        self.chain.inertial_map(q).expect("configuration dimension")
    }

    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.chain.inertial_map_jacobian(q).expect("configuration dimension")
    }

    fn eval_with_jacobian(&self, q: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let state = self.chain.forward_kinematics(q).expect("configuration dimension");
        (
            self.chain.inertial_map_with_state(&state),
            self.chain.inertial_map_jacobian_with_state(&state),
        )
    }
}

/// A cost term defined on one clique of configurations.
///
/// `clique` arguments are stacked `(window * d)`-vectors. Gauss-Newton
/// Hessians of squared-norm terms are symmetric positive semidefinite; terms
/// whose exact Hessian is cheap may expose it through `true_hessian`.
pub trait CliqueTerm: Send + Sync {
    /// Window size this term was built for (number of configurations).
    fn window(&self) -> usize;

    /// Configuration dimension `d`.
    fn config_dim(&self) -> usize;

    fn value(&self, clique: &DVector<f64>) -> f64;

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64>;

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64>;

    /// Exact clique Hessian when available (quadratic or piecewise-linear
    /// residual terms).
    fn true_hessian(&self, clique: &DVector<f64>) -> Option<DMatrix<f64>> {
        let _ = clique;
        None
    }

    /// Derivative orders this term differentiates the clique with.
    fn derivative_orders(&self) -> Vec<usize> {
        Vec::new()
    }

    fn weight(&self) -> f64 {
        1.0
    }

    /// Whether the value carries the `dt` factor of the trajectory
    /// integral.
    fn integrates_dt(&self) -> bool {
        false
    }
}

/// Which cliques a term contributes to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Attachment {
    All,
    At(Vec<usize>),
}

impl Attachment {
    pub fn contains(&self, t: usize) -> bool {
        match self {
            Attachment::All => true,
            Attachment::At(ts) => ts.contains(&t),
        }
    }
}

struct Entry {
    term: Box<dyn CliqueTerm>,
    attachment: Attachment,
}

/// A sum of clique terms over a common clique indexing.
pub struct Objective {
    indexing: CliqueIndexing,
    dim: usize,
    entries: Vec<Entry>,
}

impl Objective {
    pub fn new(indexing: CliqueIndexing, dim: usize) -> Self {
        Self { indexing, dim, entries: Vec::new() }
    }

    pub fn indexing(&self) -> &CliqueIndexing {
        &self.indexing
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_terms(&self) -> usize {
        self.entries.len()
    }

    /// Registers a term on the given cliques. The term's window and
    /// configuration dimension must match the objective's indexing.
    pub fn add_term(
        &mut self,
        term: Box<dyn CliqueTerm>,
        attachment: Attachment,
    ) -> Result<&mut Self> {
        if term.window() != self.indexing.window() {
            return Err(Error::DimensionMismatch {
                context: "term clique window",
                expected: self.indexing.window(),
                actual: term.window(),
            });
        }
        if term.config_dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "term configuration dimension",
                expected: self.dim,
                actual: term.config_dim(),
            });
        }
        if let Attachment::At(ts) = &attachment {
            for &t in ts {
                if t < 1 || t > self.indexing.num_cliques() {
                    return Err(Error::TimeIndexOutOfRange {
                        t,
                        max: self.indexing.num_cliques(),
                    });
                }
            }
        }
        self.entries.push(Entry { term, attachment });
        Ok(self)
    }

    fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "trajectory dimension",
                expected: self.dim,
                actual: traj.dim(),
            });
        }
        if traj.num_steps() != self.indexing.num_steps() {
            return Err(Error::DimensionMismatch {
                context: "trajectory steps",
                expected: self.indexing.num_steps(),
                actual: traj.num_steps(),
            });
        }
        Ok(())
    }

    /// Total objective value.
    pub fn value(&self, traj: &Trajectory) -> Result<f64> {
        self.check_traj(traj)?;
        let mut total = 0.0;
        for t in 1..=self.indexing.num_cliques() {
            let clique = extract_clique(traj, t, &self.indexing)?;
            for entry in &self.entries {
                if entry.attachment.contains(t) {
                    total += entry.term.value(&clique);
                }
            }
        }
        Ok(total)
    }

    /// Gradient over the free variables `(q_1; ...; q_{T+1})`.
    pub fn gradient(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        self.check_traj(traj)?;
        let mut grad = DVector::zeros(traj.num_free() * self.dim);
        for t in 1..=self.indexing.num_cliques() {
            let clique = extract_clique(traj, t, &self.indexing)?;
            for entry in &self.entries {
                if entry.attachment.contains(t) {
                    let seg = entry.term.gradient(&clique);
                    scatter_clique_gradient(&mut grad, t, &self.indexing, &seg)?;
                }
            }
        }
        Ok(grad)
    }

    /// Value, gradient, and banded Gauss-Newton Hessian in one pass.
    pub fn assemble(&self, traj: &Trajectory) -> Result<(f64, DVector<f64>, BlockBandedMatrix)> {
        self.check_traj(traj)?;
        let mut value = 0.0;
        let mut grad = DVector::zeros(traj.num_free() * self.dim);
        let mut hess = BlockBandedMatrix::zeros(traj.num_free(), self.dim, self.indexing.order());
        for t in 1..=self.indexing.num_cliques() {
            let clique = extract_clique(traj, t, &self.indexing)?;
            for entry in &self.entries {
                if entry.attachment.contains(t) {
                    value += entry.term.value(&clique);
                    let seg = entry.term.gradient(&clique);
                    scatter_clique_gradient(&mut grad, t, &self.indexing, &seg)?;
                    let block = entry.term.gn_hessian(&clique);
                    scatter_clique_hessian(&mut hess, t, &self.indexing, &block)?;
                }
            }
        }
        Ok((value, grad, hess))
    }

    /// Per-term FD gradient self-check at `n` random cliques; returns the
    /// worst relative error seen.
    pub fn check_gradients(&self, rng: &mut impl rand::Rng, n: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for entry in &self.entries {
            for _ in 0..n {
                let c = DVector::from_fn(self.indexing.window() * self.dim, |_, _| {
                    rng.random_range(-1.0..1.0)
                });
                worst = worst.max(check_term_gradient(entry.term.as_ref(), &c));
            }
        }
        worst
    }
}

/// Relative error between a term's analytic gradient and central finite
/// differences of its value at `clique`.
pub fn check_term_gradient(term: &dyn CliqueTerm, clique: &DVector<f64>) -> f64 {
    let h = 1e-6;
    let analytic = term.gradient(clique);
    let mut fd = DVector::zeros(clique.len());
    for i in 0..clique.len() {
        let mut cp = clique.clone();
        let mut cm = clique.clone();
        cp[i] += h;
        cm[i] -= h;
        fd[i] = (term.value(&cp) - term.value(&cm)) / (2.0 * h);
    }
    (&analytic - &fd).norm() / analytic.norm().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::planar_2link;
    use crate::traj::make_fd_operator;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn vv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn posture_only_assembly_is_block_diagonal() {
        let idx = CliqueIndexing::new(1, 3).unwrap();
        let mut obj = Objective::new(idx, 2);
        obj.add_term(
            Box::new(posture_term(vv(&[0.0, 0.0]), 1.0).with_window(2)),
            Attachment::All,
        )
        .unwrap();
        let traj = Trajectory::zero_motion(&vv(&[0.5, -0.5]), 3, 0.1).unwrap();
        let (_, _, hess) = obj.assemble(&traj).unwrap();
        let dense = hess.to_dense();
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                if r / 2 != c / 2 {
                    assert_eq!(dense[(r, c)], 0.0, "off-diagonal block at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn velocity_assembly_is_block_tridiagonal() {
        let idx = CliqueIndexing::new(1, 4).unwrap();
        let d = 2;
        let mut obj = Objective::new(idx, d);
        let map = Arc::new(IdentityMap { dim: d });
        obj.add_term(
            Box::new(squared_derivative_term(map, 1, 1.0, 0.1).unwrap()),
            Attachment::All,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states: Vec<_> = (0..4).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect();
        let traj = Trajectory::new(vv(&[0.1, 0.2]), &states, vv(&[0.0, 0.4]), 0.1).unwrap();
        let (_, _, hess) = obj.assemble(&traj).unwrap();
        let dense = hess.to_dense();
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                if (r / d).abs_diff(c / d) > 1 {
                    assert_eq!(dense[(r, c)], 0.0);
                }
            }
        }
        // Interior diagonal blocks accumulate two cliques.
        assert!(dense[(d, d)] > 0.0);
    }

    #[test]
    fn assembly_matches_dense_oracle_on_random_problem() {
        // Dense oracle: place every term's gradient and Hessian with
        // explicit global index arithmetic on a T=5 problem.
        let steps = 5;
        let d = 2;
        let idx = CliqueIndexing::new(2, steps).unwrap();
        let chain = Arc::new(planar_2link());
        let mut obj = Objective::new(idx, d);
        obj.add_term(
            Box::new(
                squared_derivative_term(Arc::new(IdentityMap { dim: d }), 2, 0.7, 0.2).unwrap(),
            ),
            Attachment::All,
        )
        .unwrap();
        obj.add_term(
            Box::new(
                squared_derivative_term(FramePointMap::new(chain, "ee").map(Arc::new).unwrap(), 1, 1.3, 0.2)
                    .unwrap()
                    .with_window(3),
            ),
            Attachment::All,
        )
        .unwrap();
        obj.add_term(
            Box::new(posture_term(vv(&[0.2, -0.1]), 0.4).with_window(3)),
            Attachment::All,
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let states: Vec<_> = (0..steps)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let traj = Trajectory::new(vv(&[0.0, 0.0]), &states, vv(&[0.3, 0.3]), 0.2).unwrap();

        let (value, grad, hess) = obj.assemble(&traj).unwrap();

        let n = traj.num_free() * d;
        let mut dense_grad = DVector::zeros(n);
        let mut dense_hess = DMatrix::zeros(n, n);
        let mut dense_value = 0.0;
        for t in 1..=idx.num_cliques() {
            let clique = extract_clique(&traj, t, &idx).unwrap();
            let start = idx.window_start(t).unwrap();
            for entry in obj.entries.iter() {
                dense_value += entry.term.value(&clique);
                let seg = entry.term.gradient(&clique);
                let block = entry.term.gn_hessian(&clique);
                for a in 0..idx.window() {
                    let ga = start + a;
                    if ga == 0 {
                        continue;
                    }
                    for i in 0..d {
                        dense_grad[(ga - 1) * d + i] += seg[a * d + i];
                    }
                    for b in 0..idx.window() {
                        let gb = start + b;
                        if gb == 0 {
                            continue;
                        }
                        for i in 0..d {
                            for j in 0..d {
                                dense_hess[((ga - 1) * d + i, (gb - 1) * d + j)] +=
                                    block[(a * d + i, b * d + j)];
                            }
                        }
                    }
                }
            }
        }
        assert_relative_eq!(value, dense_value, max_relative = 1e-12);
        assert!((grad - dense_grad).norm() < 1e-12);
        assert!((hess.to_dense() - dense_hess).norm() < 1e-12);
    }

    #[test]
    fn assembled_gn_hessian_is_psd() {
        let steps = 6;
        let d = 2;
        let idx = CliqueIndexing::new(2, steps).unwrap();
        let mut obj = Objective::new(idx, d);
        let chain = Arc::new(planar_2link());
        obj.add_term(
            Box::new(
                squared_derivative_term(Arc::new(IdentityMap { dim: d }), 1, 0.5, 0.1)
                    .unwrap()
                    .with_window(3),
            ),
            Attachment::All,
        )
        .unwrap();
        obj.add_term(
            Box::new(
                squared_derivative_term(FramePointMap::new(chain, "ee").map(Arc::new).unwrap(), 2, 1.0, 0.1)
                    .unwrap(),
            ),
            Attachment::All,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let states: Vec<_> = (0..steps)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5)))
                .collect();
            let traj =
                Trajectory::new(vv(&[0.0, 0.0]), &states, vv(&[0.1, 0.1]), 0.1).unwrap();
            let (_, _, hess) = obj.assemble(&traj).unwrap();
            let eig = hess.to_dense().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-8, "min eig {}", eig.eigenvalues.min());
        }
    }

    #[test]
    fn window_mismatch_is_rejected() {
        let idx = CliqueIndexing::new(2, 5).unwrap();
        let mut obj = Objective::new(idx, 1);
        let term = squared_derivative_term(Arc::new(IdentityMap { dim: 1 }), 1, 1.0, 0.1).unwrap();
        assert!(obj.add_term(Box::new(term), Attachment::All).is_err());
    }

    #[test]
    fn operator_metadata_exposed() {
        let op = make_fd_operator(2, 0.1).unwrap();
        assert_eq!(op.alpha().len(), 3);
    }
}

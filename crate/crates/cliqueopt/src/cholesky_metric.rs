//! Gradient and Gauss-Newton Hessian approximations for velocity terms
//! defined by an arbitrary Riemannian metric, using only Cholesky factors.
//!
//! A squared velocity norm through some task space `phi` pulls back to the
//! configuration-space metric `A(q) = J^T J`. When `phi` itself is unknown
//! but `A(q)` can be evaluated, the two-point kernel
//! `l(q_prev, q_curr) = 0.5 ||phi(q_curr) - phi(q_prev)||^2` still admits
//! useful curvature: with the upper-triangular Cholesky factor `A = C^T C`,
//! `C` differs from `J` only by an orthogonal transform, and
//!
//! - the gradient is approximated by `(-A_prev dq; A_curr dq)` with
//!   `dq = q_curr - q_prev`,
//! - the Gauss-Newton Hessian by
//!   `[[A_prev, -C_prev^T C_curr], [-C_curr^T C_prev, A_curr]]`.
//!
//! Both are exact when the metric is constant and degrade smoothly with the
//! configuration spacing otherwise.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;
use crate::objective::CliqueTerm;

/// A smoothly varying symmetric positive definite metric on configuration
/// space.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;

    /// The metric at `q`; must be symmetric positive definite.
    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Whether the approximations' smoothness assumption is expected to
    /// hold for this field.
    fn assumes_smoothness(&self) -> bool {
        true
    }
}

/// A constant metric.
pub struct ConstantMetric(pub DMatrix<f64>);

impl MetricField for ConstantMetric {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn evaluate(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }
}

/// A metric given by an arbitrary closure.
pub struct FnMetric<F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync> {
    dim: usize,
    f: F,
}

impl<F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync> FnMetric<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync> MetricField for FnMetric<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.f)(q)
    }
}

/// The joint-space inertia matrix of a chain as a metric field.
pub struct InertiaMetric {
    chain: Arc<KinematicChain>,
}

impl InertiaMetric {
    pub fn new(chain: Arc<KinematicChain>) -> Self {
        Self { chain }
    }
}

impl MetricField for InertiaMetric {
    fn dim(&self) -> usize {
        self.chain.dof()
    }

    fn evaluate(&self, q: &DVector<f64>) -> DMatrix<f64> {
        self.chain.inertia_matrix(q).expect("configuration dimension")
    }
}

/// Upper-triangular Cholesky factorization `A = C^T C` with positive
/// diagonal.
///
/// Fails with the index of the first nonpositive pivot when `A` is not
/// positive definite.
pub fn cholesky_factor(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "Cholesky input",
            expected: n,
            actual: a.ncols(),
        });
    }
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = a[(i, j)];
            for p in 0..i {
                s -= c[(p, i)] * c[(p, j)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i });
                }
                c[(i, i)] = s.sqrt();
            } else {
                c[(i, j)] = s / c[(i, i)];
            }
        }
    }
    Ok(c)
}

/// Factorization retried with a scaled diagonal jitter when the metric is
/// numerically on the positive definite boundary.
pub fn cholesky_factor_jittered(a: &DMatrix<f64>, jitter_scale: f64) -> Result<DMatrix<f64>> {
    match cholesky_factor(a) {
        Ok(c) => Ok(c),
        Err(_) => {
            let shift = jitter_scale * a.trace().abs().max(1.0);
            let jittered = a + DMatrix::identity(a.nrows(), a.ncols()) * shift;
            cholesky_factor(&jittered)
        }
    }
}

/// A metric evaluation paired with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyPair {
    pub q: DVector<f64>,
    pub metric: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

impl CholeskyPair {
    pub fn evaluate(metric: &dyn MetricField, q: &DVector<f64>) -> Result<Self> {
        let a = metric.evaluate(q);
        let factor = cholesky_factor(&a)?;
        Ok(Self { q: q.clone(), metric: a, factor })
    }
}

/// Approximate gradient of `0.5 ||phi(q_curr) - phi(q_prev)||^2` from the
/// pullback metric alone: the stacked vector
/// `(-A(q_prev) dq; A(q_curr) dq)` with `dq = q_curr - q_prev`.
pub fn metric_velocity_gradient(
    metric: &dyn MetricField,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
) -> Result<DVector<f64>> {
    let a_prev = metric.evaluate(q_prev);
    let a_curr = metric.evaluate(q_curr);
    cholesky_factor(&a_prev)?;
    cholesky_factor(&a_curr)?;
    Ok(stack_gradient(&a_prev, &a_curr, q_prev, q_curr))
}

fn stack_gradient(
    a_prev: &DMatrix<f64>,
    a_curr: &DMatrix<f64>,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
) -> DVector<f64> {
    let d = q_prev.len();
    let dq = q_curr - q_prev;
    let mut grad = DVector::zeros(2 * d);
    grad.rows_mut(0, d).copy_from(&(-(a_prev * &dq)));
    grad.rows_mut(d, d).copy_from(&(a_curr * &dq));
    grad
}

/// Approximate Gauss-Newton Hessian of the two-point velocity kernel:
/// `[[A_prev, -C_prev^T C_curr], [-C_curr^T C_prev, A_curr]]`.
///
/// The off-diagonal coupling replaces the unknown `J_prev^T J_curr` using
/// the orthogonality of `J C^{-1}`; the result is exactly symmetric.
pub fn metric_velocity_gn_hessian(
    metric: &dyn MetricField,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let prev = CholeskyPair::evaluate(metric, q_prev)?;
    let curr = CholeskyPair::evaluate(metric, q_curr)?;
    Ok(stack_hessian(&prev, &curr))
}

fn stack_hessian(prev: &CholeskyPair, curr: &CholeskyPair) -> DMatrix<f64> {
    let d = prev.q.len();
    let cross = prev.factor.transpose() * &curr.factor;
    let mut hess = DMatrix::zeros(2 * d, 2 * d);
    hess.view_mut((0, 0), (d, d)).copy_from(&prev.metric);
    hess.view_mut((d, d), (d, d)).copy_from(&curr.metric);
    hess.view_mut((0, d), (d, d)).copy_from(&(-&cross));
    hess.view_mut((d, 0), (d, d)).copy_from(&(-cross.transpose()));
    hess
}

/// Metric-defined squared-velocity clique term for the optimizer.
///
/// Value, gradient, and Gauss-Newton Hessian of
/// `(w/2) ||(phi(q_curr) - phi(q_prev)) / dt||^2 * dt` where only the
/// pullback metric of `phi` is available. The value uses the symmetrized
/// metric average `0.5 (A_prev + A_curr)`; gradient and Hessian use the
/// two-point approximations above, so the gradient is not exactly the
/// derivative of the value — the known price of not having the task map.
pub struct MetricVelocityTerm {
    metric: Arc<dyn MetricField>,
    weight: f64,
    dt: f64,
    window: usize,
    anchor: usize,
    jitter: Option<f64>,
}

impl MetricVelocityTerm {
    pub fn new(metric: Arc<dyn MetricField>, weight: f64, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::NonPositiveTimeStep(dt));
        }
        if weight < 0.0 {
            return Err(Error::Config(format!("term weight must be nonnegative, got {weight}")));
        }
        Ok(Self { metric, weight, dt, window: 2, anchor: 0, jitter: None })
    }

    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= 2);
        self.window = window;
        self.anchor = self.anchor.min(window - 2);
        self
    }

    pub fn with_anchor(mut self, anchor: usize) -> Self {
        assert!(anchor + 2 <= self.window);
        self.anchor = anchor;
        self
    }

    /// Opt-in diagonal jitter (relative scale) applied when a metric
    /// evaluation is not numerically positive definite mid-optimization.
    pub fn with_jitter(mut self, scale: f64) -> Self {
        self.jitter = Some(scale);
        self
    }

    fn configs(&self, clique: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let d = self.metric.dim();
        (
            clique.rows(self.anchor * d, d).into_owned(),
            clique.rows((self.anchor + 1) * d, d).into_owned(),
        )
    }

    fn pair(&self, q: &DVector<f64>) -> CholeskyPair {
        let a = self.metric.evaluate(q);
        let factor = match self.jitter {
            Some(scale) => cholesky_factor_jittered(&a, scale),
            None => cholesky_factor(&a),
        }
        .expect("metric must be positive definite (consider with_jitter)");
        CholeskyPair { q: q.clone(), metric: a, factor }
    }

    /// `w / dt`: converts the two-point kernel into a velocity term carrying
    /// the trajectory-integral factor.
    fn scale(&self) -> f64 {
        self.weight / self.dt
    }
}

impl CliqueTerm for MetricVelocityTerm {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.metric.dim()
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let (q_prev, q_curr) = self.configs(clique);
        let avg = (self.metric.evaluate(&q_prev) + self.metric.evaluate(&q_curr)) * 0.5;
        let dq = &q_curr - &q_prev;
        0.5 * self.scale() * dq.dot(&(avg * &dq))
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.metric.dim();
        let (q_prev, q_curr) = self.configs(clique);
        let prev = self.pair(&q_prev);
        let curr = self.pair(&q_curr);
        let seg = stack_gradient(&prev.metric, &curr.metric, &q_prev, &q_curr) * self.scale();
        let mut grad = DVector::zeros(self.window * d);
        grad.rows_mut(self.anchor * d, 2 * d).copy_from(&seg);
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        let d = self.metric.dim();
        let (q_prev, q_curr) = self.configs(clique);
        let prev = self.pair(&q_prev);
        let curr = self.pair(&q_curr);
        let block = stack_hessian(&prev, &curr) * self.scale();
        let mut hess = DMatrix::zeros(self.window * d, self.window * d);
        hess.view_mut((self.anchor * d, self.anchor * d), (2 * d, 2 * d))
            .copy_from(&block);
        hess
    }

    fn derivative_orders(&self) -> Vec<usize> {
        vec![1]
    }

    fn weight(&self) -> f64 {
        self.weight
    }

    fn integrates_dt(&self) -> bool {
        true
    }
}

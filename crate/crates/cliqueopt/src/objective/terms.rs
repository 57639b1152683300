//! The motion-model term library.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;
use crate::objective::{CliqueTerm, IdentityMap, InertialMap, TaskMap};
use crate::traj::{make_fd_operator, FiniteDiffOperator};

/// Weighted squared norm of a finite-differenced task-space derivative:
/// `(w/2) ||D^(k) phi(q^c)||^2 * dt`.
///
/// The Gauss-Newton Hessian is `w * dt * (D J)^T (D J)` with `J` the
/// blockwise stacked per-configuration task Jacobians — the full chain-rule
/// Hessian minus the Jacobian-derivative tensor term.
pub struct SquaredDerivativeTerm {
    map: Arc<dyn TaskMap>,
    op: FiniteDiffOperator,
    weight: f64,
    window: usize,
    anchor: usize,
    integrate_dt: bool,
}

/// Builds a squared task-derivative term of order `k` with the default
/// forward stencil, a window of `k + 1`, and the `dt` integral factor.
pub fn squared_derivative_term(
    map: Arc<dyn TaskMap>,
    k: usize,
    weight: f64,
    dt: f64,
) -> Result<SquaredDerivativeTerm> {
    let op = make_fd_operator(k, dt)?;
    if weight < 0.0 {
        return Err(Error::Config(format!("term weight must be nonnegative, got {weight}")));
    }
    Ok(SquaredDerivativeTerm {
        map,
        window: op.order() + 1,
        op,
        weight,
        anchor: 0,
        integrate_dt: true,
    })
}

impl SquaredDerivativeTerm {
    /// Widens the clique window; the stencil is zero-padded on the right
    /// unless an anchor is set.
    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= self.op.order() + 1, "window too small for stencil");
        self.window = window;
        self.anchor = self.anchor.min(window - self.op.order() - 1);
        self
    }

    /// Anchors the stencil at the given window offset.
    pub fn with_anchor(mut self, anchor: usize) -> Self {
        assert!(anchor + self.op.order() + 1 <= self.window, "anchor out of window");
        self.anchor = anchor;
        self
    }

    /// Drops the `dt` factor of the trajectory integral (used when studying
    /// per-clique quantities in isolation).
    pub fn without_dt_integration(mut self) -> Self {
        self.integrate_dt = false;
        self
    }

    pub fn operator(&self) -> &FiniteDiffOperator {
        &self.op
    }

    fn dt_factor(&self) -> f64 {
        if self.integrate_dt {
            self.op.dt()
        } else {
            1.0
        }
    }

    fn config(&self, clique: &DVector<f64>, offset: usize) -> DVector<f64> {
        let d = self.map.input_dim();
        clique.rows(offset * d, d).into_owned()
    }

    /// Task vectors and Jacobians at the stencil-support configurations.
    fn support(&self, clique: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        let k = self.op.order();
        let mut zs = Vec::with_capacity(k + 1);
        let mut js = Vec::with_capacity(k + 1);
        for i in 0..=k {
            let q = self.config(clique, self.anchor + i);
            let (z, j) = self.map.eval_with_jacobian(&q);
            zs.push(z);
            js.push(j);
        }
        (zs, js)
    }

    fn derivative(&self, zs: &[DVector<f64>]) -> DVector<f64> {
        let scale = self.op.scale();
        let mut out = DVector::zeros(self.map.output_dim());
        for (i, s) in self.op.sigma().iter().enumerate() {
            out.axpy(s * scale, &zs[i], 1.0);
        }
        out
    }
}

impl CliqueTerm for SquaredDerivativeTerm {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.map.input_dim()
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let k = self.op.order();
        let scale = self.op.scale();
        let mut deriv = DVector::zeros(self.map.output_dim());
        for i in 0..=k {
            let q = self.config(clique, self.anchor + i);
            deriv.axpy(self.op.sigma()[i] * scale, &self.map.eval(&q), 1.0);
        }
        0.5 * self.weight * self.dt_factor() * deriv.norm_squared()
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.map.input_dim();
        let (zs, js) = self.support(clique);
        let deriv = self.derivative(&zs);
        let scale = self.op.scale();
        let w = self.weight * self.dt_factor();
        let mut grad = DVector::zeros(self.window * d);
        for (i, s) in self.op.sigma().iter().enumerate() {
            let seg = js[i].transpose() * &deriv * (w * s * scale);
            let mut rows = grad.rows_mut((self.anchor + i) * d, d);
            rows += seg;
        }
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        let d = self.map.input_dim();
        let (_, js) = self.support(clique);
        let scale = self.op.scale();
        let w = self.weight * self.dt_factor();
        let mut hess = DMatrix::zeros(self.window * d, self.window * d);
        for (i, si) in self.op.sigma().iter().enumerate() {
            for (j, sj) in self.op.sigma().iter().enumerate() {
                let block = js[i].transpose() * &js[j] * (w * si * sj * scale * scale);
                let (r, c) = ((self.anchor + i) * d, (self.anchor + j) * d);
                let mut view = hess.view_mut((r, c), (d, d));
                view += block;
            }
        }
        hess
    }

    fn derivative_orders(&self) -> Vec<usize> {
        vec![self.op.order()]
    }

    fn weight(&self) -> f64 {
        self.weight
    }

    fn integrates_dt(&self) -> bool {
        self.integrate_dt
    }
}

/// Kinetic-energy term: the squared task-space velocity of the chain's
/// inertial map. Curvature comes entirely from kinematic Jacobians.
pub fn kinetic_energy_term(
    chain: Arc<KinematicChain>,
    weight: f64,
    dt: f64,
) -> Result<SquaredDerivativeTerm> {
    if chain.bodies().is_empty() {
        return Err(Error::Config("kinetic energy term needs registered bodies".into()));
    }
    squared_derivative_term(Arc::new(InertialMap::new(chain)), 1, weight, dt)
}

/// Configuration-space derivative penalties
/// `alpha_1 ||qdot||^2 + alpha_2 ||qddot||^2`, as identity-map squared
/// derivative terms of order 1 and 2 (weights are doubled to absorb the
/// 1/2 in the squared-norm convention).
pub fn config_penalty_terms(
    alpha1: f64,
    alpha2: f64,
    dim: usize,
    dt: f64,
) -> Result<Vec<SquaredDerivativeTerm>> {
    if alpha1 < 0.0 || alpha2 < 0.0 {
        return Err(Error::Config("penalty weights must be nonnegative".into()));
    }
    let map = Arc::new(IdentityMap { dim });
    let mut terms = Vec::new();
    if alpha1 > 0.0 {
        terms.push(squared_derivative_term(map.clone(), 1, 2.0 * alpha1, dt)?);
    }
    if alpha2 > 0.0 {
        terms.push(squared_derivative_term(map, 2, 2.0 * alpha2, dt)?);
    }
    Ok(terms)
}

/// Quadratic pull toward a default configuration, acting on the clique's
/// center configuration: `(w/2) ||q - q_default||^2`.
#[derive(Debug, Clone)]
pub struct PostureTerm {
    q_default: DVector<f64>,
    weight: f64,
    window: usize,
}

pub fn posture_term(q_default: DVector<f64>, weight: f64) -> PostureTerm {
    PostureTerm { q_default, weight, window: 2 }
}

impl PostureTerm {
    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= 1);
        self.window = window;
        self
    }

    fn center(&self) -> usize {
        1.min(self.window - 1)
    }
}

impl CliqueTerm for PostureTerm {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.q_default.len()
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let d = self.q_default.len();
        let q = clique.rows(self.center() * d, d);
        0.5 * self.weight * (q - &self.q_default).norm_squared()
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.q_default.len();
        let q = clique.rows(self.center() * d, d);
        let mut grad = DVector::zeros(self.window * d);
        grad.rows_mut(self.center() * d, d)
            .copy_from(&((q - &self.q_default) * self.weight));
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        let _ = clique;
        let d = self.q_default.len();
        let mut hess = DMatrix::zeros(self.window * d, self.window * d);
        for i in 0..d {
            let idx = self.center() * d + i;
            hess[(idx, idx)] = self.weight;
        }
        hess
    }

    fn true_hessian(&self, clique: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.gn_hessian(clique))
    }

    fn weight(&self) -> f64 {
        self.weight
    }
}

/// Hinge-squared proximity penalty on joint limits, acting on the clique's
/// center configuration:
/// `w * sum_i max(0, q_i - (q_max_i - eps), (q_min_i + eps) - q_i)^2`.
///
/// Zero (with zero gradient) strictly inside the margins; the subgradient at
/// the hinge kink is taken as zero.
#[derive(Debug, Clone)]
pub struct JointLimitPenalty {
    q_min: DVector<f64>,
    q_max: DVector<f64>,
    margin: f64,
    weight: f64,
    window: usize,
}

pub fn joint_limit_penalty(
    q_min: DVector<f64>,
    q_max: DVector<f64>,
    margin: f64,
    weight: f64,
) -> Result<JointLimitPenalty> {
    if q_min.len() != q_max.len() {
        return Err(Error::DimensionMismatch {
            context: "joint limit bounds",
            expected: q_min.len(),
            actual: q_max.len(),
        });
    }
    if margin < 0.0 {
        return Err(Error::Config("joint limit margin must be nonnegative".into()));
    }
    for i in 0..q_min.len() {
        if q_min[i] >= q_max[i] {
            return Err(Error::Config(format!(
                "joint {i}: lower limit {} is not below upper limit {}",
                q_min[i], q_max[i]
            )));
        }
    }
    Ok(JointLimitPenalty { q_min, q_max, margin, weight, window: 2 })
}

impl JointLimitPenalty {
    pub fn with_window(mut self, window: usize) -> Self {
        assert!(window >= 1);
        self.window = window;
        self
    }

    fn center(&self) -> usize {
        1.min(self.window - 1)
    }

    /// Hinge excess and its sign (+1 above the upper margin, -1 below the
    /// lower margin) for joint `i`.
    fn excess(&self, qi: f64, i: usize) -> (f64, f64) {
        let upper = qi - (self.q_max[i] - self.margin);
        let lower = (self.q_min[i] + self.margin) - qi;
        if upper > 0.0 && upper >= lower {
            (upper, 1.0)
        } else if lower > 0.0 {
            (lower, -1.0)
        } else {
            (0.0, 0.0)
        }
    }
}

impl CliqueTerm for JointLimitPenalty {
    fn window(&self) -> usize {
        self.window
    }

    fn config_dim(&self) -> usize {
        self.q_min.len()
    }

    fn value(&self, clique: &DVector<f64>) -> f64 {
        let d = self.q_min.len();
        let q = clique.rows(self.center() * d, d);
        let mut total = 0.0;
        for i in 0..d {
            let (v, _) = self.excess(q[i], i);
            total += v * v;
        }
        self.weight * total
    }

    fn gradient(&self, clique: &DVector<f64>) -> DVector<f64> {
        let d = self.q_min.len();
        let q = clique.rows(self.center() * d, d);
        let mut grad = DVector::zeros(self.window * d);
        for i in 0..d {
            let (v, sign) = self.excess(q[i], i);
            grad[self.center() * d + i] = 2.0 * self.weight * v * sign;
        }
        grad
    }

    fn gn_hessian(&self, clique: &DVector<f64>) -> DMatrix<f64> {
        let d = self.q_min.len();
        let q = clique.rows(self.center() * d, d);
        let mut hess = DMatrix::zeros(self.window * d, self.window * d);
        for i in 0..d {
            let (v, _) = self.excess(q[i], i);
            if v > 0.0 {
                let idx = self.center() * d + i;
                hess[(idx, idx)] = 2.0 * self.weight;
            }
        }
        hess
    }

    fn weight(&self) -> f64 {
        self.weight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{pendulum, planar_2link};
    use crate::objective::check_term_gradient;
    use crate::objective::FramePointMap;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn vv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn constant_clique_has_zero_velocity_cost() {
        let term =
            squared_derivative_term(Arc::new(IdentityMap { dim: 2 }), 1, 1.0, 0.1).unwrap();
        let clique = vv(&[0.3, -0.2, 0.3, -0.2]);
        assert_eq!(term.value(&clique), 0.0);
        assert_eq!(term.gradient(&clique).norm(), 0.0);
    }

    #[test]
    fn linear_map_velocity_term_in_one_dim() {
        let term =
            squared_derivative_term(Arc::new(IdentityMap { dim: 1 }), 1, 1.0, 1.0).unwrap();
        let clique = vv(&[0.0, 1.0]);
        assert_relative_eq!(term.value(&clique), 0.5);
        let hess = term.gn_hessian(&clique);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_relative_eq!(hess, expected, epsilon = 1e-14);
    }

    #[test]
    fn chain_velocity_gradient_matches_fd() {
        let chain = Arc::new(planar_2link());
        let map: Arc<dyn TaskMap> = Arc::new(FramePointMap::new(chain, "ee").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [1usize, 2] {
            let term = squared_derivative_term(map.clone(), k, 0.8, 0.07).unwrap();
            for _ in 0..20 {
                let clique =
                    DVector::from_fn((k + 1) * 2, |_, _| rng.random_range(-1.2..1.2));
                let err = check_term_gradient(&term, &clique);
                assert!(err < 1e-5, "k={k} gradient error {err:e}");
            }
        }
    }

    #[test]
    fn anchored_stencil_differences_the_tail() {
        let term = squared_derivative_term(Arc::new(IdentityMap { dim: 1 }), 1, 2.0, 1.0)
            .unwrap()
            .with_window(3)
            .with_anchor(1);
        // Clique (5, 1, 4): anchored velocity is 4 - 1 = 3.
        let clique = vv(&[5.0, 1.0, 4.0]);
        assert_relative_eq!(term.value(&clique), 9.0);
        let grad = term.gradient(&clique);
        assert_relative_eq!(grad[0], 0.0);
        assert_relative_eq!(grad[1], -6.0);
        assert_relative_eq!(grad[2], 6.0);
    }

    #[test]
    fn kinetic_energy_zero_velocity_clique() {
        let chain = Arc::new(pendulum(1.0, 1.0));
        let term = kinetic_energy_term(chain, 1.0, 0.1).unwrap();
        let clique = vv(&[0.4, 0.4]);
        assert_relative_eq!(term.value(&clique), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kinetic_energy_needs_bodies() {
        let chain = Arc::new(planar_2link());
        assert!(kinetic_energy_term(chain, 1.0, 0.1).is_err());
    }

    #[test]
    fn pendulum_energy_term_approaches_continuous_energy() {
        // Clique (0, w*dt): the term value tends to 0.5 m l^2 w^2 dt as dt
        // shrinks; check first-order convergence by halving dt.
        let (m, l, omega) = (1.4, 0.9, 1.1);
        let chain = Arc::new(pendulum(m, l));
        let exact = |dt: f64| {
            let term = kinetic_energy_term(chain.clone(), 1.0, dt).unwrap();
            let clique = vv(&[0.0, omega * dt]);
            (term.value(&clique) / dt - 0.5 * m * l * l * omega * omega).abs()
        };
        let e1 = exact(1e-2);
        let e2 = exact(5e-3);
        assert!(e2 < 0.75 * e1, "errors {e1:e} -> {e2:e} do not shrink linearly");
    }

    #[test]
    fn kinetic_energy_value_matches_inertia_quadratic_at_midpoint() {
        let chain = Arc::new(crate::models::arm_3dof_with_bodies());
        let q0 = vv(&[0.2, -0.4, 0.6]);
        let qdot = vv(&[0.5, 0.3, -0.8]);
        let reference = {
            // 0.5 qdot^T M(q_mid) qdot at the finite-difference midpoint.
            |dt: f64| {
                let q1 = &q0 + &qdot * dt;
                let qmid = (&q0 + &q1) * 0.5;
                let m = chain.inertia_matrix(&qmid).unwrap();
                0.5 * qdot.dot(&(m * &qdot))
            }
        };
        let errs: Vec<f64> = [1e-2, 5e-3]
            .iter()
            .map(|&dt| {
                let term = kinetic_energy_term(chain.clone(), 1.0, dt).unwrap();
                let q1 = &q0 + &qdot * dt;
                let mut clique = DVector::zeros(6);
                clique.rows_mut(0, 3).copy_from(&q0);
                clique.rows_mut(3, 3).copy_from(&q1);
                (term.value(&clique) / dt - reference(dt)).abs()
            })
            .collect();
        assert!(errs[1] < errs[0], "midpoint errors {errs:?} do not shrink");
        assert!(errs[0] < 1e-3);
    }

    #[test]
    fn config_penalties_split_by_order() {
        let dt = 0.25;
        let velocity_only = config_penalty_terms(1.0, 0.0, 1, dt).unwrap();
        assert_eq!(velocity_only.len(), 1);
        // Linear-in-t clique: velocity v = 2, so the value is ||v||^2 dt.
        let clique = vv(&[0.0, 2.0 * dt]);
        assert_relative_eq!(velocity_only[0].value(&clique), 4.0 * dt, epsilon = 1e-12);

        let accel_only = config_penalty_terms(0.0, 1.0, 1, dt).unwrap();
        let linear = vv(&[0.0, dt, 2.0 * dt]);
        assert_relative_eq!(accel_only[0].value(&linear), 0.0, epsilon = 1e-15);

        // Additivity: the combined pair evaluates to the sum of the
        // individual order-1 and order-2 values on a common window.
        let both: Vec<_> = config_penalty_terms(1.0, 1.0, 1, dt)
            .unwrap()
            .into_iter()
            .map(|t| t.with_window(3))
            .collect();
        let v1_widened = config_penalty_terms(1.0, 0.0, 1, dt)
            .unwrap()
            .remove(0)
            .with_window(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let clique = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let combined: f64 = both.iter().map(|t| t.value(&clique)).sum();
        let split = v1_widened.value(&clique) + accel_only[0].value(&clique);
        assert_relative_eq!(combined, split, epsilon = 1e-12);
    }

    #[test]
    fn posture_at_default_is_flat() {
        let term = posture_term(vv(&[0.1, 0.2]), 3.0);
        let clique = vv(&[9.0, 9.0, 0.1, 0.2]);
        assert_eq!(term.value(&clique), 0.0);
        assert_eq!(term.gradient(&clique).norm(), 0.0);
    }

    #[test]
    fn posture_unit_offset() {
        let term = posture_term(vv(&[0.0, 0.0]), 2.0);
        let clique = vv(&[0.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(term.value(&clique), 1.0);
        let grad = term.gradient(&clique);
        assert_relative_eq!(grad[2], 2.0);
        assert_relative_eq!(grad[3], 0.0);
    }

    #[test]
    fn posture_gn_hessian_is_exact() {
        let term = posture_term(vv(&[0.3]), 1.7);
        let clique = vv(&[0.0, 0.9]);
        let h = 1e-5;
        let mut fd = DMatrix::zeros(2, 2);
        for i in 0..2 {
            let mut cp = clique.clone();
            let mut cm = clique.clone();
            cp[i] += h;
            cm[i] -= h;
            let gp = term.gradient(&cp);
            let gm = term.gradient(&cm);
            fd.column_mut(i).copy_from(&((gp - gm) / (2.0 * h)));
        }
        assert_relative_eq!(term.gn_hessian(&clique), fd, epsilon = 1e-9);
        assert_eq!(term.true_hessian(&clique).unwrap(), term.gn_hessian(&clique));
    }

    #[test]
    fn joint_limits_inactive_interior() {
        let term = joint_limit_penalty(vv(&[-1.0, -1.0]), vv(&[1.0, 1.0]), 0.1, 5.0).unwrap();
        let clique = vv(&[0.0, 0.0, 0.3, -0.5]);
        assert_eq!(term.value(&clique), 0.0);
        assert_eq!(term.gradient(&clique).norm(), 0.0);
        assert_eq!(term.gn_hessian(&clique).norm(), 0.0);
    }

    #[test]
    fn joint_limit_hinge_value() {
        let w = 3.0;
        let term = joint_limit_penalty(vv(&[-1.0]), vv(&[1.0]), 0.2, w).unwrap();
        // q = q_max - eps + 0.1 gives hinge excess 0.1.
        let clique = vv(&[0.0, 1.0 - 0.2 + 0.1]);
        assert_relative_eq!(term.value(&clique), 0.01 * w, epsilon = 1e-12);
    }

    #[test]
    fn joint_limit_gradient_matches_fd_off_kink() {
        let term = joint_limit_penalty(vv(&[-1.0, -0.5]), vv(&[1.0, 0.5]), 0.1, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut checked = 0;
        while checked < 20 {
            let clique = DVector::from_fn(4, |_, _| rng.random_range(-1.3..1.3));
            // Stay away from the hinge kinks where the FD check is invalid.
            let q2 = clique[2];
            let q3 = clique[3];
            let near_kink = [(q2, 0usize), (q3, 1usize)].iter().any(|&(q, i)| {
                let hi: f64 = [1.0, 0.5][i] - 0.1;
                let lo: f64 = [-1.0, -0.5][i] + 0.1;
                (q - hi).abs() < 1e-3 || (q - lo).abs() < 1e-3
            });
            if near_kink {
                continue;
            }
            let err = check_term_gradient(&term, &clique);
            assert!(err < 1e-5, "gradient error {err:e}");
            checked += 1;
        }
    }

    #[test]
    fn bad_limits_are_rejected() {
        assert!(joint_limit_penalty(vv(&[1.0]), vv(&[-1.0]), 0.1, 1.0).is_err());
        assert!(joint_limit_penalty(vv(&[0.0]), vv(&[1.0]), -0.1, 1.0).is_err());
    }
}

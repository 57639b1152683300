//! Discrete trajectories, clique indexing, and finite-difference operators.
//!
//! A trajectory holds a fixed prefix configuration `q_0`, the free
//! configurations `q_1..q_T`, and one extra free suffix configuration
//! `q_{T+1}`. Objective terms act on *cliques*: windows of `K+1` consecutive
//! configurations, where `K` is the highest derivative order used by any
//! registered term. Finite-difference operators map a clique of task vectors
//! to an approximate time derivative.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

/// A discrete-time trajectory with fixed prefix and free suffix.
///
/// Configurations are stored column-major in one contiguous matrix, columns
/// `0..T+2` holding `q_0..q_{T+1}`. Column 0 (the prefix) is fixed data and
/// never part of the optimization variable; columns `1..=T+1` form the free
/// variable vector of dimension `(T+1)*d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    dim: usize,
    num_steps: usize,
    configs: DMatrix<f64>,
}

impl Trajectory {
    /// Builds a trajectory from prefix, free states, suffix, and step size.
    pub fn new(
        q_prefix: DVector<f64>,
        states: &[DVector<f64>],
        q_suffix: DVector<f64>,
        dt: f64,
    ) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::NonPositiveTimeStep(dt));
        }
        let dim = q_prefix.len();
        if states.is_empty() {
            return Err(Error::Config("trajectory needs at least one free state".into()));
        }
        for (i, q) in states.iter().enumerate() {
            if q.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "trajectory state",
                    expected: dim,
                    actual: states[i].len(),
                });
            }
        }
        if q_suffix.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "trajectory suffix",
                expected: dim,
                actual: q_suffix.len(),
            });
        }
        let num_steps = states.len();
        let mut configs = DMatrix::zeros(dim, num_steps + 2);
        configs.column_mut(0).copy_from(&q_prefix);
        for (t, q) in states.iter().enumerate() {
            configs.column_mut(t + 1).copy_from(q);
        }
        configs.column_mut(num_steps + 1).copy_from(&q_suffix);
        Ok(Self { dt, dim, num_steps, configs })
    }

    /// The zero-motion trajectory: every configuration equals `q_start`.
    pub fn zero_motion(q_start: &DVector<f64>, num_steps: usize, dt: f64) -> Result<Self> {
        let states = vec![q_start.clone(); num_steps];
        Self::new(q_start.clone(), &states, q_start.clone(), dt)
    }

    /// Samples a continuous-time configuration function at spacing `dt`.
    ///
    /// Column `t` receives `f(t0 + t*dt)`, so the prefix is `f(t0)` and the
    /// suffix `f(t0 + (T+1)*dt)`.
    pub fn from_fn(
        f: impl Fn(f64) -> DVector<f64>,
        t0: f64,
        num_steps: usize,
        dt: f64,
    ) -> Result<Self> {
        let states: Vec<_> = (1..=num_steps).map(|t| f(t0 + t as f64 * dt)).collect();
        Self::new(f(t0), &states, f(t0 + (num_steps + 1) as f64 * dt), dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of free interior steps `T` (the suffix is an extra free config).
    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Number of free configurations, `T + 1`.
    pub fn num_free(&self) -> usize {
        self.num_steps + 1
    }

    /// Configuration `q_t` for `t` in `0..=T+1` (prefix and suffix included).
    pub fn config(&self, t: usize) -> DVectorView<'_, f64> {
        self.configs.column(t)
    }

    /// The free variable vector `(q_1; ...; q_{T+1})`.
    pub fn free_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.configs.as_slice()[self.dim..])
    }

    /// Overwrites the free configurations from a stacked `(T+1)*d` vector.
    pub fn set_free_vector(&mut self, x: &DVector<f64>) -> Result<()> {
        let n = self.num_free() * self.dim;
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                context: "free variable vector",
                expected: n,
                actual: x.len(),
            });
        }
        self.configs.as_mut_slice()[self.dim..].copy_from_slice(x.as_slice());
        Ok(())
    }

    /// Adds `step` to the free variables, returning the perturbed trajectory.
    pub fn stepped(&self, step: &DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        let x = self.free_vector() + step;
        out.set_free_vector(&x)?;
        Ok(out)
    }
}

/// Layout of clique windows over a trajectory.
///
/// The window at time `t` starts at configuration index `t - 1` and spans
/// `K + 1` configurations, so adjacent windows overlap in exactly `K`
/// configurations. Windows are laid out so that together they cover every
/// free configuration including the suffix: for order `K` on a trajectory
/// with `T` steps there are `T + 2 - K` cliques.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CliqueIndexing {
    order: usize,
    num_steps: usize,
}

impl CliqueIndexing {
    pub fn new(order: usize, num_steps: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::UnsupportedOrder(0));
        }
        if num_steps + 1 < order {
            return Err(Error::Config(format!(
                "trajectory with {num_steps} steps is too short for clique order {order}"
            )));
        }
        Ok(Self { order, num_steps })
    }

    /// Maximal derivative order `K` among registered terms.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// Window size `K + 1`.
    pub fn window(&self) -> usize {
        self.order + 1
    }

    /// Number of cliques; windows tile `[0, T+1]` with unit stride.
    pub fn num_cliques(&self) -> usize {
        self.num_steps + 2 - self.order
    }

    /// Start configuration index of the window at time `t`.
    pub fn window_start(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.num_cliques() {
            return Err(Error::TimeIndexOutOfRange { t, max: self.num_cliques() });
        }
        Ok(t - 1)
    }

    /// Offset within the window of the configuration "at" time `t` (the
    /// one terminal potentials and per-time attachments act on).
    pub fn center_offset(&self) -> usize {
        1
    }

    /// Clique times whose windows contain configuration index `idx`.
    pub fn cliques_containing(&self, idx: usize) -> impl Iterator<Item = usize> {
        let lo = (idx + 1).saturating_sub(self.order).max(1);
        let hi = (idx + 1).min(self.num_cliques());
        lo..=hi
    }
}

/// Extracts the stacked clique vector `(q_{t-1}; ...; q_{t-1+K})`.
pub fn extract_clique(
    traj: &Trajectory,
    t: usize,
    indexing: &CliqueIndexing,
) -> Result<DVector<f64>> {
    let start = indexing.window_start(t)?;
    let d = traj.dim();
    let w = indexing.window();
    let mut out = DVector::zeros(w * d);
    for a in 0..w {
        out.rows_mut(a * d, d).copy_from(&traj.config(start + a));
    }
    Ok(out)
}

/// A blockwise finite-difference stencil of order `k`.
///
/// Applied to a clique of task vectors it returns the approximate `k`th time
/// derivative `sum_i (sigma_i / dt^k) z_{tau+i}`. The normalized squared
/// stencil weights `alpha` and their sum-of-squares `S_k` are exposed for
/// diagnostics on scaled Hessian blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffOperator {
    order: usize,
    dt: f64,
    sigma: Vec<f64>,
}

/// Builds the default forward stencil of order `k` scaled by `1/dt^k`.
///
/// Built-in stencils cover `k = 1` (`-1, 1`) and `k = 2` (`1, -2, 1`);
/// higher orders must be supplied via [`FiniteDiffOperator::from_stencil`].
pub fn make_fd_operator(k: usize, dt: f64) -> Result<FiniteDiffOperator> {
    let sigma = match k {
        1 => vec![-1.0, 1.0],
        2 => vec![1.0, -2.0, 1.0],
        _ => return Err(Error::UnsupportedOrder(k)),
    };
    FiniteDiffOperator::from_stencil(k, dt, sigma)
}

impl FiniteDiffOperator {
    /// Builds an operator from user-supplied stencil coefficients.
    pub fn from_stencil(order: usize, dt: f64, sigma: Vec<f64>) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::NonPositiveTimeStep(dt));
        }
        if sigma.len() != order + 1 {
            return Err(Error::InvalidStencil(format!(
                "order {} stencil needs {} coefficients, got {}",
                order,
                order + 1,
                sigma.len()
            )));
        }
        if order >= 1 {
            let sum: f64 = sigma.iter().sum();
            if sum.abs() > 1e-10 {
                return Err(Error::InvalidStencil(format!(
                    "coefficients must sum to zero, got {sum:e}"
                )));
            }
        }
        Ok(Self { order, dt, sigma })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Dimensionless stencil coefficients `sigma_0..sigma_k`.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// The common scale `1 / dt^k`.
    pub fn scale(&self) -> f64 {
        self.dt.powi(-(self.order as i32))
    }

    /// Scaled blockwise coefficients `sigma_i / dt^k`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * self.scale()).collect()
    }

    /// Sum of squared stencil coefficients.
    pub fn sum_squares(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum()
    }

    /// Normalized nonnegative weights `(sigma_{k-i})^2 / S_k`.
    pub fn alpha(&self) -> Vec<f64> {
        let s = self.sum_squares();
        (0..=self.order)
            .map(|i| {
                let c = self.sigma[self.order - i];
                c * c / s
            })
            .collect()
    }

    /// Applies the stencil to a clique of task vectors.
    ///
    /// The clique may be wider than `k + 1`; the stencil is then anchored at
    /// the front and zero-padded on the right.
    pub fn apply(&self, clique: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.apply_at(clique, 0)
    }

    /// Applies the stencil anchored at window offset `anchor`.
    pub fn apply_at(&self, clique: &[DVector<f64>], anchor: usize) -> Result<DVector<f64>> {
        if clique.len() < anchor + self.order + 1 {
            return Err(Error::DimensionMismatch {
                context: "clique window for stencil",
                expected: anchor + self.order + 1,
                actual: clique.len(),
            });
        }
        let m = clique[0].len();
        for z in clique.iter() {
            if z.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "task vector in clique",
                    expected: m,
                    actual: z.len(),
                });
            }
        }
        let scale = self.scale();
        let mut out = DVector::zeros(m);
        for (i, s) in self.sigma.iter().enumerate() {
            out.axpy(s * scale, &clique[anchor + i], 1.0);
        }
        Ok(out)
    }

    /// Applies the stencil to a stacked clique vector with entries of
    /// dimension `entry_dim`.
    pub fn apply_stacked(
        &self,
        clique: &DVector<f64>,
        entry_dim: usize,
        anchor: usize,
    ) -> Result<DVector<f64>> {
        if clique.len() % entry_dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "stacked clique length",
                expected: entry_dim,
                actual: clique.len(),
            });
        }
        let n = clique.len() / entry_dim;
        let parts: Vec<DVector<f64>> = (0..n)
            .map(|i| clique.rows(i * entry_dim, entry_dim).into_owned())
            .collect();
        self.apply_at(&parts, anchor)
    }

    /// The operator as a dense `m x (w*m)` matrix over a window of `w`
    /// entries of dimension `m`, anchored at `anchor`.
    pub fn as_matrix(&self, entry_dim: usize, window: usize, anchor: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(entry_dim, window * entry_dim);
        let scale = self.scale();
        for (i, s) in self.sigma.iter().enumerate() {
            let col = (anchor + i) * entry_dim;
            for r in 0..entry_dim {
                out[(r, col + r)] = s * scale;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn velocity_operator_coefficients() {
        let op = make_fd_operator(1, 0.1).unwrap();
        let c = op.coefficients();
        assert_relative_eq!(c[0], -10.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 10.0, epsilon = 1e-12);
        assert_relative_eq!(op.sum_squares(), 2.0);
    }

    #[test]
    fn acceleration_operator_coefficients() {
        let op = make_fd_operator(2, 0.5).unwrap();
        let c = op.coefficients();
        assert_relative_eq!(c[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], -8.0, epsilon = 1e-12);
        assert_relative_eq!(c[2], 4.0, epsilon = 1e-12);
        assert_relative_eq!(op.sum_squares(), 6.0);
    }

    #[test]
    fn stencil_annihilates_constants() {
        let op = make_fd_operator(1, 1.0).unwrap();
        let out = op.apply(&[v(&[3.0, -1.0]), v(&[3.0, -1.0])]).unwrap();
        assert_eq!(out, v(&[0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(make_fd_operator(1, 0.0), Err(Error::NonPositiveTimeStep(_))));
        assert!(matches!(make_fd_operator(3, 0.1), Err(Error::UnsupportedOrder(3))));
        assert!(FiniteDiffOperator::from_stencil(1, 0.1, vec![1.0, 1.0]).is_err());
        let op = make_fd_operator(1, 1.0).unwrap();
        assert!(op.apply(&[v(&[1.0]), v(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn first_difference_of_line() {
        let op = make_fd_operator(1, 1.0).unwrap();
        let out = op.apply(&[v(&[1.0]), v(&[3.0])]).unwrap();
        assert_relative_eq!(out[0], 2.0);
    }

    #[test]
    fn second_difference_of_parabola() {
        let op = make_fd_operator(2, 1.0).unwrap();
        let samples: Vec<_> = [0.0, 1.0, 2.0].iter().map(|t| v(&[t * t])).collect();
        let out = op.apply(&samples).unwrap();
        assert_relative_eq!(out[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn first_difference_of_sine_matches_direct_quotient() {
        let dt = 0.05;
        let op = make_fd_operator(1, dt).unwrap();
        let out = op.apply(&[v(&[0.0f64.sin()]), v(&[dt.sin()])]).unwrap();
        let expected = (dt.sin() - 0.0f64.sin()) / dt;
        assert_relative_eq!(out[0], expected, epsilon = 1e-14);
        assert_relative_eq!(out[0], 0.9995833854135666, epsilon = 1e-12);
    }

    #[test]
    fn stencils_are_exact_on_monomials() {
        // kth difference of a degree-<=k polynomial is its exact kth
        // derivative up to FD cancellation noise.
        // (k, polynomial of degree k, exact kth derivative)
        let cases: [(usize, fn(f64) -> f64, f64); 2] = [
            (1, |t| 3.0 * t + 1.5, 3.0),
            (2, |t| 3.0 * t * t - 2.0 * t + 1.5, 6.0),
        ];
        for (k, poly, exact) in cases {
            for dt in [1e-3, 1e-2, 0.1, 1.0] {
                let op = make_fd_operator(k, dt).unwrap();
                let t0 = 0.7;
                let samples: Vec<_> =
                    (0..=k).map(|i| v(&[poly(t0 + i as f64 * dt)])).collect();
                let got = op.apply(&samples).unwrap()[0];
                assert_relative_eq!(got, exact, epsilon = 1e-8, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn zero_padding_anchors_stencil() {
        let op = make_fd_operator(1, 1.0).unwrap();
        let clique = [v(&[1.0]), v(&[4.0]), v(&[9.0])];
        assert_relative_eq!(op.apply(&clique).unwrap()[0], 3.0);
        assert_relative_eq!(op.apply_at(&clique, 1).unwrap()[0], 5.0);
        let m = op.as_matrix(1, 3, 0);
        assert_eq!(m.ncols(), 3);
        assert_relative_eq!(m[(0, 2)], 0.0);
    }

    #[test]
    fn alpha_weights_are_normalized() {
        for k in [1usize, 2] {
            let op = make_fd_operator(k, 0.03).unwrap();
            let alpha = op.alpha();
            assert!(alpha.iter().all(|a| *a >= 0.0));
            let sum: f64 = alpha.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_layout_and_free_vector() {
        let states = [v(&[1.0, 2.0]), v(&[3.0, 4.0]), v(&[5.0, 6.0])];
        let traj = Trajectory::new(v(&[0.0, 0.0]), &states, v(&[7.0, 8.0]), 0.1).unwrap();
        assert_eq!(traj.num_steps(), 3);
        assert_eq!(traj.num_free(), 4);
        let x = traj.free_vector();
        assert_eq!(x.len(), 8);
        assert_eq!(x[0], 1.0);
        assert_eq!(x[7], 8.0);
        let mut traj2 = traj.clone();
        traj2.set_free_vector(&x).unwrap();
        assert_eq!(traj, traj2);
    }

    #[test]
    fn clique_windows_cover_all_free_configs() {
        for (order, steps) in [(1usize, 3usize), (2, 3), (2, 7), (1, 1)] {
            let idx = CliqueIndexing::new(order, steps).unwrap();
            let mut covered = vec![false; steps + 2];
            for t in 1..=idx.num_cliques() {
                let s = idx.window_start(t).unwrap();
                assert!(s + idx.order() <= steps + 1);
                for a in 0..idx.window() {
                    covered[s + a] = true;
                }
            }
            // Every free configuration, suffix included, lies in some window.
            assert!(covered[1..].iter().all(|c| *c), "order {order} steps {steps}");
        }
    }

    #[test]
    fn cliques_containing_inverts_window_start() {
        let idx = CliqueIndexing::new(2, 6).unwrap();
        for cfg in 0..=7 {
            for t in idx.cliques_containing(cfg) {
                let s = idx.window_start(t).unwrap();
                assert!(cfg >= s && cfg <= s + idx.order());
            }
            let count = idx.cliques_containing(cfg).count();
            let brute = (1..=idx.num_cliques())
                .filter(|&t| {
                    let s = idx.window_start(t).unwrap();
                    cfg >= s && cfg <= s + idx.order()
                })
                .count();
            assert_eq!(count, brute, "config {cfg}");
        }
    }

    #[test]
    fn extract_clique_at_boundaries() {
        let states = [v(&[1.0]), v(&[2.0]), v(&[3.0])];
        let traj = Trajectory::new(v(&[0.0]), &states, v(&[4.0]), 1.0).unwrap();

        let idx1 = CliqueIndexing::new(1, 3).unwrap();
        let c = extract_clique(&traj, 1, &idx1).unwrap();
        assert_eq!(c.as_slice(), &[0.0, 1.0]);
        let c = extract_clique(&traj, 2, &idx1).unwrap();
        assert_eq!(c.as_slice(), &[1.0, 2.0]);

        let idx2 = CliqueIndexing::new(2, 3).unwrap();
        let c = extract_clique(&traj, 3, &idx2).unwrap();
        assert_eq!(c.as_slice(), &[2.0, 3.0, 4.0]);

        assert!(extract_clique(&traj, 0, &idx2).is_err());
        assert!(extract_clique(&traj, 4, &idx2).is_err());
    }
}

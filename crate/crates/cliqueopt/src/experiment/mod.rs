//! The two controlled experiments behind the `cliqueopt` binary, plus the
//! finite-difference self-checks of the `check` subcommand.
//!
//! - `run_convergence` measures how fast scaled true Hessian blocks of
//!   squared task-derivative terms converge to their Gauss-Newton blocks as
//!   the time discretization shrinks, and fits the log-log rate.
//! - `run_energy_sweep` solves seeded reach problems under kinetic-energy
//!   penalties of growing weight, with the energy modeled either exactly
//!   through the rigid-body inertial map or through the Cholesky
//!   approximation of the inertia metric, and reports normalized final
//!   energies per weight.

mod report;

pub use report::{
    emit_report, log_log_fit, mean_std, ConvergenceReport, ConvergenceRow, EnergySweepReport,
    ExperimentReport, ReportFormat, ReportMetadata, SlopeFit, SweepRow, TrialOutcome,
};

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cholesky_metric::{InertiaMetric, MetricVelocityTerm};
use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;
use crate::models::ReachTrial;
use crate::objective::{
    full_hessian_fd, kinetic_energy_term, posture_term, squared_derivative_term, Attachment,
    FdHessianOptions, FramePointMap, IdentityMap, Objective, TaskMap,
};
use crate::optimizer::{
    augmented_lagrangian_solve_warm, goal_constraint, AugLagState, ChainSource, ConstraintKind,
    ConstraintSet, Problem, SolverConfig, TerminationReason,
};
use crate::traj::{CliqueIndexing, Trajectory};

/// `n` log-linearly spaced values from `hi` down to `lo`, endpoints exact.
pub fn log_linear_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && hi > lo && lo > 0.0);
    let (lh, ll) = (hi.ln(), lo.ln());
    let mut grid: Vec<f64> = (0..n)
        .map(|i| (lh + (ll - lh) * i as f64 / (n - 1) as f64).exp())
        .collect();
    grid[0] = hi;
    grid[n - 1] = lo;
    grid
}

/// `n` linearly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Smooth sinusoidal test trajectory: per joint `i`,
/// `q_i(t) = amplitude * sin(2 pi sigma_i (t - 1/2) + eta_i)` with the
/// frequency and phase interpolated linearly across joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestTrajectory {
    pub amplitude: f64,
    pub sigma_range: (f64, f64),
    pub eta_range: (f64, f64),
}

impl Default for TestTrajectory {
    fn default() -> Self {
        Self {
            amplitude: std::f64::consts::FRAC_PI_2,
            sigma_range: (0.5, 2.0),
            eta_range: (0.0, std::f64::consts::PI),
        }
    }
}

impl TestTrajectory {
    /// The configuration at time `t` for a `dof`-joint chain.
    pub fn at(&self, dof: usize, t: f64) -> DVector<f64> {
        DVector::from_fn(dof, |i, _| {
            let frac = if dof > 1 { i as f64 / (dof - 1) as f64 } else { 0.0 };
            let sigma = self.sigma_range.0 + (self.sigma_range.1 - self.sigma_range.0) * frac;
            let eta = self.eta_range.0 + (self.eta_range.1 - self.eta_range.0) * frac;
            self.amplitude * (std::f64::consts::TAU * sigma * (t - 0.5) + eta).sin()
        })
    }
}

/// Configuration of the Hessian convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub chain: ChainSource,
    pub frame: String,
    pub orders: Vec<usize>,
    /// Strictly decreasing grid of time discretizations.
    pub dt_grid: Vec<f64>,
    /// Trajectory times at which Hessian blocks are probed.
    pub time_samples: Vec<f64>,
    pub trajectory: TestTrajectory,
    pub fd: FdHessianOptions,
    /// Mean errors at or below this level are treated as FD noise and
    /// excluded from the slope fit.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            chain: ChainSource::Builtin("arm8".into()),
            frame: "ee".into(),
            orders: vec![1, 2],
            dt_grid: log_linear_grid(0.15, 0.001, 20),
            time_samples: linear_grid(0.0, 1.0, 20),
            trajectory: TestTrajectory::default(),
            fd: FdHessianOptions::default(),
            noise_floor: 1e-10,
            seed: 0,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt_grid.len() < 3 {
            return Err(Error::Config("dt grid needs at least 3 points for slope fitting".into()));
        }
        if !self.dt_grid.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config("dt grid must be strictly decreasing".into()));
        }
        if self.dt_grid.iter().any(|&dt| dt <= 0.0) {
            return Err(Error::Config("dt grid must be positive".into()));
        }
        if self.orders.is_empty() || self.orders.iter().any(|&k| k == 0 || k > 2) {
            return Err(Error::Config("derivative orders must be within {1, 2}".into()));
        }
        if self.time_samples.is_empty() {
            return Err(Error::Config("need at least one time sample".into()));
        }
        Ok(())
    }
}

/// Worst relative FD errors of a chain's analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub point_jacobian_err: f64,
    pub axis_jacobian_err: f64,
    pub inertial_map_jacobian_err: f64,
    pub tolerance: f64,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.point_jacobian_err.max(self.axis_jacobian_err).max(self.inertial_map_jacobian_err)
            <= self.tolerance
    }
}

/// Central-difference verification of every analytic Jacobian the
/// experiments rely on, at seeded random configurations.
pub fn run_self_checks(chain: &KinematicChain, frame: &str, seed: u64) -> Result<SelfCheckReport> {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = chain.dof();
    let h = 1e-6;
    let f = chain.frame(frame)?;
    let (link, local) = (f.link, f.local.translation.vector);

    let mut point_err: f64 = 0.0;
    let mut axis_err: f64 = 0.0;
    let mut map_err: f64 = 0.0;
    for _ in 0..10 {
        let q = DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
        let state = chain.forward_kinematics(&q)?;

        let p = state.point_world(link, &local);
        let analytic = chain.jacobian_point(&state, link, &p);
        let mut fd = nalgebra::DMatrix::zeros(3, d);
        for j in 0..d {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += h;
            qm[j] -= h;
            let pp = chain.forward_kinematics(&qp)?.point_world(link, &local);
            let pm = chain.forward_kinematics(&qm)?.point_world(link, &local);
            fd.column_mut(j).copy_from(&((pp - pm) / (2.0 * h)));
        }
        point_err = point_err.max((&analytic - &fd).norm() / analytic.norm().max(1.0));

        for (bi, _) in chain.bodies().iter().enumerate() {
            for axis in 0..3 {
                let analytic = chain.jacobian_axis(&state, bi, axis)?;
                let mut fd = nalgebra::DMatrix::zeros(3, d);
                for j in 0..d {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[j] += h;
                    qm[j] -= h;
                    let ep = chain.body_pose(&chain.forward_kinematics(&qp)?, bi).axis(axis);
                    let em = chain.body_pose(&chain.forward_kinematics(&qm)?, bi).axis(axis);
                    fd.column_mut(j).copy_from(&((ep - em) / (2.0 * h)));
                }
                axis_err = axis_err.max((&analytic - &fd).norm() / analytic.norm().max(1.0));
            }
        }

        if !chain.bodies().is_empty() {
            let analytic = chain.inertial_map_jacobian(&q)?;
            let mut fd = nalgebra::DMatrix::zeros(chain.inertial_map_dim(), d);
            for j in 0..d {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += h;
                qm[j] -= h;
                let zp = chain.inertial_map(&qp)?;
                let zm = chain.inertial_map(&qm)?;
                fd.column_mut(j).copy_from(&((zp - zm) / (2.0 * h)));
            }
            map_err = map_err.max((&analytic - &fd).norm() / analytic.norm().max(1.0));
        }
    }
    Ok(SelfCheckReport {
        point_jacobian_err: point_err,
        axis_jacobian_err: axis_err,
        inertial_map_jacobian_err: map_err,
        tolerance: 1e-6,
    })
}

/// Builds the minimal trajectory window around `t_mid` whose cliques cover
/// the center configuration for order `k`, sampled at spacing `dt`.
fn probe_window(
    traj_fn: &TestTrajectory,
    dof: usize,
    t_mid: f64,
    k: usize,
    dt: f64,
) -> Result<(Trajectory, usize)> {
    let t0 = t_mid - k as f64 * dt;
    let steps = 2 * k - 1;
    let traj = Trajectory::from_fn(|t| traj_fn.at(dof, t), t0, steps, dt)?;
    Ok((traj, k))
}

/// Runs the Hessian convergence experiment.
pub fn run_convergence(config: &ConvergenceConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let chain = Arc::new(config.chain.load()?);
    let checks = run_self_checks(&chain, &config.frame, config.seed)?;
    if !checks.passed() {
        return Err(Error::Config(format!(
            "analytic Jacobians fail the FD self-check: {checks:?}"
        )));
    }
    let dof = chain.dof();

    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &k in &config.orders {
        let mut fit_points = Vec::new();
        for &dt in &config.dt_grid {
            let mut errs = Vec::with_capacity(config.time_samples.len());
            for &t_mid in &config.time_samples {
                let map: Arc<dyn TaskMap> =
                    Arc::new(FramePointMap::new(chain.clone(), &config.frame)?);
                let (traj, t) = probe_window(&config.trajectory, dof, t_mid, k, dt)?;
                let idx = CliqueIndexing::new(k, traj.num_steps())?;
                let mut obj = Objective::new(idx, dof);
                obj.add_term(
                    Box::new(
                        squared_derivative_term(map, k, 1.0, dt)?.without_dt_integration(),
                    ),
                    Attachment::All,
                )?;
                let cmp = full_hessian_fd(&obj, &traj, t, k, &config.fd)?;
                errs.push(cmp.err);
            }
            let (mean, std) = mean_std(&errs);
            rows.push(ConvergenceRow { k, dt, mean_err: mean, std_err: std });
            if mean > config.noise_floor {
                fit_points.push((dt, mean));
            }
        }
        if let Some((slope, intercept, r_squared)) = log_log_fit(&fit_points) {
            slopes.push(SlopeFit { k, slope, intercept, r_squared, n_points: fit_points.len() });
        }
    }

    Ok(ExperimentReport::Convergence(ConvergenceReport {
        metadata: ReportMetadata::new(config.seed, config),
        rows,
        slopes,
    }))
}

/// How the kinetic-energy term is modeled in a sweep run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Exact,
    Cholesky,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Exact => "exact",
            Formulation::Cholesky => "cholesky",
        }
    }
}

/// Where the sweep's reach trials come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSource {
    /// The fixed trial set shipped with the crate.
    Default,
    /// Regenerate from a seed.
    Seeded { count: usize, seed: u64 },
    /// Explicit start/goal pairs.
    Explicit(Vec<ReachTrial>),
}

const DEFAULT_TRIALS: &str = include_str!("../../data/reach_trials.json");

impl TrialSource {
    pub fn resolve(&self, chain: &KinematicChain, frame: &str) -> Result<Vec<ReachTrial>> {
        match self {
            TrialSource::Default => {
                serde_json::from_str(DEFAULT_TRIALS).map_err(|source| Error::Json {
                    context: "parsing embedded trial set".into(),
                    source,
                })
            }
            TrialSource::Seeded { count, seed } => {
                Ok(crate::models::seeded_reach_trials(chain, frame, *count, *seed, 0.25))
            }
            TrialSource::Explicit(trials) => Ok(trials.clone()),
        }
    }
}

/// Configuration of the kinetic-energy weight sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergySweepConfig {
    pub chain: ChainSource,
    pub frame: String,
    /// Energy-term weights; must include 0 (the maximum-energy baseline).
    pub weights: Vec<f64>,
    pub trials: TrialSource,
    pub formulations: Vec<Formulation>,
    pub steps: usize,
    pub dt: f64,
    /// Small squared norm on configuration accelerations.
    pub accel_weight: f64,
    /// Small squared norms on initial and terminal velocities.
    pub boundary_velocity_weight: f64,
    /// Small pull toward the start configuration.
    pub posture_weight: f64,
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for EnergySweepConfig {
    fn default() -> Self {
        let mut weights = vec![0.0];
        weights.extend(log_linear_grid(500.0, 1.0, 6).into_iter().rev());
        Self {
            chain: ChainSource::Builtin("arm3".into()),
            frame: "ee".into(),
            weights,
            trials: TrialSource::Default,
            formulations: vec![Formulation::Exact, Formulation::Cholesky],
            steps: 20,
            dt: 0.1,
            accel_weight: 0.05,
            boundary_velocity_weight: 0.1,
            posture_weight: 0.01,
            // The squared-distance goal equality has a vanishing gradient
            // on the constraint surface, so violations converge linearly;
            // 1e-4 on the squared distance still places the end effector
            // within ~3 mm.
            // Metric-only energy terms carry ~1% gradient error, so a
            // line-search stall two orders of magnitude below the peak
            // gradient is stationarity to approximation accuracy, not a
            // failure.
            // The squared goal distance has a vanishing constraint
            // gradient on the surface, which makes the multiplier tail
            // sublinear; a higher penalty ceiling restores convergence.
            solver: SolverConfig {
                max_inner: 80,
                max_outer: 40,
                tol_constraint: 1e-5,
                stall_grad_rel_tol: 0.01,
                rho_max: 1e9,
                ..Default::default()
            },
            seed: 7,
        }
    }
}

impl EnergySweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.weights.contains(&0.0) {
            return Err(Error::Config(
                "weight grid must include 0 (it anchors the maximum energy)".into(),
            ));
        }
        if !self.weights.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("weights must be strictly increasing".into()));
        }
        if !self.formulations.contains(&Formulation::Exact) {
            return Err(Error::Config(
                "the exact formulation must run (it anchors the minimum energy)".into(),
            ));
        }
        Ok(())
    }
}

/// Cumulative kinetic energy of a trajectory: the squared inertial-map
/// velocity summed over consecutive configuration pairs.
pub fn trajectory_kinetic_energy(chain: &KinematicChain, traj: &Trajectory) -> Result<f64> {
    let dt = traj.dt();
    let mut prev = chain.inertial_map(&traj.config(0).into_owned())?;
    let mut total = 0.0;
    for t in 1..=traj.num_free() {
        let curr = chain.inertial_map(&traj.config(t).into_owned())?;
        total += 0.5 * ((&curr - &prev) / dt).norm_squared() * dt;
        prev = curr;
    }
    Ok(total)
}

#[derive(Clone)]
struct SweepRun {
    energy: f64,
    success: bool,
    termination: TerminationReason,
    final_traj: Trajectory,
    final_state: AugLagState,
}

/// Warm start for one link of the sweep's weight chain: the previous
/// solution and its multiplier state.
struct WarmStart<'a> {
    traj: &'a Trajectory,
    state: &'a AugLagState,
}

fn solve_reach(
    chain: &Arc<KinematicChain>,
    config: &EnergySweepConfig,
    trial: &ReachTrial,
    energy_term: Option<(Formulation, f64)>,
    warm_start: Option<WarmStart<'_>>,
) -> Result<SweepRun> {
    let d = chain.dof();
    let order = 2; // acceleration penalties are always present
    let indexing = CliqueIndexing::new(order, config.steps)?;
    let window = indexing.window();
    let q_start = DVector::from_column_slice(&trial.q_start);
    let dt = config.dt;

    let mut objective = Objective::new(indexing, d);
    let identity: Arc<dyn TaskMap> = Arc::new(IdentityMap { dim: d });
    objective.add_term(
        Box::new(
            squared_derivative_term(identity.clone(), 2, 2.0 * config.accel_weight, dt)?
                .with_window(window),
        ),
        Attachment::All,
    )?;
    objective.add_term(
        Box::new(
            squared_derivative_term(identity.clone(), 1, config.boundary_velocity_weight, dt)?
                .with_window(window),
        ),
        Attachment::At(vec![1]),
    )?;
    objective.add_term(
        Box::new(
            squared_derivative_term(identity, 1, config.boundary_velocity_weight, dt)?
                .with_window(window)
                .with_anchor(window - 2),
        ),
        Attachment::At(vec![indexing.num_cliques()]),
    )?;
    objective.add_term(
        Box::new(posture_term(q_start.clone(), config.posture_weight).with_window(window)),
        Attachment::All,
    )?;
    match energy_term {
        Some((Formulation::Exact, w)) => {
            objective.add_term(
                Box::new(kinetic_energy_term(chain.clone(), w, dt)?.with_window(window)),
                Attachment::All,
            )?;
        }
        Some((Formulation::Cholesky, w)) => {
            let metric = Arc::new(InertiaMetric::new(chain.clone()));
            objective.add_term(
                Box::new(
                    MetricVelocityTerm::new(metric, w, dt)?
                        .with_window(window)
                        .with_jitter(1e-8),
                ),
                Attachment::All,
            )?;
        }
        None => {}
    }

    let goal = nalgebra::Vector3::new(trial.goal[0], trial.goal[1], trial.goal[2]);
    let mut constraints = ConstraintSet::new();
    constraints.add(
        ConstraintKind::Equality,
        Box::new(goal_constraint(chain.clone(), &config.frame, goal)?.with_window(window)),
        Attachment::At(vec![config.steps]),
    );

    let problem = Problem { objective, constraints };
    let (traj0, warm_state) = match warm_start {
        Some(w) => (
            w.traj.clone(),
            Some(AugLagState { rho: w.state.rho, multipliers: w.state.multipliers.clone() }),
        ),
        None => (Trajectory::zero_motion(&q_start, config.steps, dt)?, None),
    };
    let report = augmented_lagrangian_solve_warm(&problem, &traj0, &config.solver, warm_state)?;
    let final_traj = report.trajectory.to_trajectory()?;
    let energy = trajectory_kinetic_energy(chain, &final_traj)?;
    let success = report.final_violation <= config.solver.tol_constraint
        && !matches!(
            report.termination,
            TerminationReason::LineSearchFailure | TerminationReason::SolverFailure
        );
    Ok(SweepRun {
        energy,
        success,
        termination: report.termination,
        final_traj,
        final_state: AugLagState { rho: report.final_penalty, multipliers: report.multipliers },
    })
}

/// Runs the kinetic-energy weight sweep.
pub fn run_energy_sweep(config: &EnergySweepConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let chain = Arc::new(config.chain.load()?);
    if chain.bodies().is_empty() {
        return Err(Error::Config("energy sweep chain needs registered bodies".into()));
    }
    let trials = config.trials.resolve(&chain, &config.frame)?;
    if trials.is_empty() {
        return Err(Error::Config("trial set is empty".into()));
    }
    let mut outcomes: Vec<TrialOutcome> = Vec::new();
    // Per (formulation, weight): normalized energies across trials.
    let mut series: std::collections::BTreeMap<(usize, usize), Vec<f64>> =
        std::collections::BTreeMap::new();
    let mut cholesky_trial_ok = vec![true; trials.len()];

    for (ti, trial) in trials.iter().enumerate() {
        // The maximum-energy baseline starts from zero motion; each heavier
        // weight is then warm-started from the previous solution so the
        // whole sweep follows one branch of the problem.
        let baseline = solve_reach(&chain, config, trial, None, None)?;
        let e_max = baseline.energy;

        // runs[(fi, wi)] in weight-ascending order per formulation.
        let mut runs: Vec<Vec<SweepRun>> = Vec::with_capacity(config.formulations.len());
        for &formulation in &config.formulations {
            let mut per_weight: Vec<SweepRun> = Vec::with_capacity(config.weights.len());
            let mut warm = baseline.clone();
            for &w in &config.weights {
                if w == 0.0 {
                    per_weight.push(baseline.clone());
                    continue;
                }
                let run = solve_reach(
                    &chain,
                    config,
                    trial,
                    Some((formulation, w)),
                    Some(WarmStart { traj: &warm.final_traj, state: &warm.final_state }),
                )?;
                warm = run.clone();
                per_weight.push(run);
            }
            runs.push(per_weight);
        }

        let exact_fi = config
            .formulations
            .iter()
            .position(|&f| f == Formulation::Exact)
            .expect("validated");
        let e_min = runs[exact_fi].last().expect("nonempty weights").energy;
        let span = e_max - e_min;
        if !(span > 1e-12) {
            return Err(Error::Config(format!(
                "trial {ti}: degenerate energy span {span:.3e}; start and goal produce no motion"
            )));
        }

        for (fi, &formulation) in config.formulations.iter().enumerate() {
            for (wi, &w) in config.weights.iter().enumerate() {
                let run = &runs[fi][wi];
                if formulation == Formulation::Cholesky && w > 0.0 && !run.success {
                    cholesky_trial_ok[ti] = false;
                }
                let normalized = (run.energy - e_min) / span;
                outcomes.push(TrialOutcome {
                    trial: ti,
                    formulation: formulation.name().to_string(),
                    weight: w,
                    energy: run.energy,
                    normalized,
                    success: run.success,
                    termination: run.termination,
                });
                series.entry((fi, wi)).or_default().push(normalized);
            }
        }
    }

    let mut rows = Vec::new();
    let n_weights = config.weights.len();
    for (fi, &formulation) in config.formulations.iter().enumerate() {
        for (wi, &w) in config.weights.iter().enumerate() {
            let values = &series[&(fi, wi)];
            let (mean, std) = mean_std(values);
            rows.push(SweepRow {
                formulation: formulation.name().to_string(),
                weight: w,
                weight_normalized: wi as f64 / (n_weights - 1) as f64,
                mean_energy: mean,
                std_energy: std,
                n_trials: values.len(),
                trimmed: false,
            });
        }
        if formulation == Formulation::Cholesky {
            for (wi, &w) in config.weights.iter().enumerate() {
                let kept: Vec<f64> = outcomes
                    .iter()
                    .filter(|o| {
                        o.formulation == formulation.name()
                            && o.weight == w
                            && cholesky_trial_ok[o.trial]
                    })
                    .map(|o| o.normalized)
                    .collect();
                let (mean, std) = mean_std(&kept);
                rows.push(SweepRow {
                    formulation: formulation.name().to_string(),
                    weight: w,
                    weight_normalized: wi as f64 / (n_weights - 1) as f64,
                    mean_energy: mean,
                    std_energy: std,
                    n_trials: kept.len(),
                    trimmed: true,
                });
            }
        }
    }

    Ok(ExperimentReport::EnergySweep(EnergySweepReport {
        metadata: ReportMetadata::new(config.seed, config),
        rows,
        trials: outcomes,
    }))
}

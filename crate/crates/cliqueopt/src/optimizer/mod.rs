//! Constrained trajectory optimization: an augmented Lagrangian outer loop
//! over a Gauss-Newton inner loop with block-banded solves and backtracking
//! line search.

mod constraints;
mod problem_file;

pub use constraints::{
    goal_constraint, joint_limit_constraints, obstacle_constraint, BoundConstraint,
    ConstraintKind, ConstraintRow, ConstraintSet, GoalConstraint, ObstacleConstraint,
};
pub use problem_file::{BuiltProblem, ChainSource, ConstraintSpec, ProblemFile, TermSpec};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::banded::BlockBandedMatrix;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::traj::{extract_clique, Trajectory};

/// Solver parameters with standard multiplier-method defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Inner termination: infinity norm of the proxy gradient.
    pub tol_grad: f64,
    /// Outer termination: maximum constraint violation.
    pub tol_constraint: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Initial quadratic penalty.
    pub rho_init: f64,
    /// Penalty growth factor applied when violations stall.
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Required violation shrink per outer iteration before the penalty
    /// grows.
    pub violation_shrink: f64,
    /// Armijo sufficient-decrease coefficient.
    pub armijo_c: f64,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// First Levenberg shift tried after a factorization failure.
    pub levenberg_init: f64,
    pub levenberg_growth: f64,
    pub levenberg_max: f64,
    /// Gradient level below which a failed line search counts as
    /// convergence instead of a stall. Zero keeps strict semantics; terms
    /// with approximate gradients (metric-only velocity terms) cannot
    /// satisfy Armijo below their approximation accuracy, and this sets
    /// that accuracy explicitly.
    pub stall_grad_tol: f64,
    /// Like `stall_grad_tol` but relative to the largest gradient seen
    /// during the solve.
    pub stall_grad_rel_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_grad: 1e-6,
            tol_constraint: 1e-6,
            max_inner: 100,
            max_outer: 30,
            rho_init: 10.0,
            rho_growth: 10.0,
            rho_max: 1e8,
            violation_shrink: 4.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 30,
            levenberg_init: 1e-8,
            levenberg_growth: 10.0,
            levenberg_max: 1e4,
            stall_grad_tol: 0.0,
            stall_grad_rel_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Converged,
    MaxIter,
    LineSearchFailure,
    SolverFailure,
}

/// Serializable snapshot of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryData {
    pub dt: f64,
    pub prefix: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub suffix: Vec<f64>,
}

impl TrajectoryData {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            dt: traj.dt(),
            prefix: traj.config(0).as_slice().to_vec(),
            states: (1..=traj.num_steps())
                .map(|t| traj.config(t).as_slice().to_vec())
                .collect(),
            suffix: traj.config(traj.num_steps() + 1).as_slice().to_vec(),
        }
    }

    pub fn to_trajectory(&self) -> Result<Trajectory> {
        let states: Vec<DVector<f64>> =
            self.states.iter().map(|s| DVector::from_column_slice(s)).collect();
        Trajectory::new(
            DVector::from_column_slice(&self.prefix),
            &states,
            DVector::from_column_slice(&self.suffix),
            self.dt,
        )
    }
}

/// Per-iteration solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub outer: usize,
    pub inner: usize,
    pub proxy_value: f64,
    pub grad_inf_norm: f64,
    pub levenberg_shift: f64,
    pub backtracks: usize,
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub trajectory: TrajectoryData,
    /// Accepted proxy values across all inner iterations, starting with the
    /// initial value.
    pub objective_history: Vec<f64>,
    /// Accepted proxy values per outer iteration; monotone nonincreasing
    /// within each entry.
    pub inner_histories: Vec<Vec<f64>>,
    /// Maximum constraint violation after each outer iteration.
    pub violation_history: Vec<f64>,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub termination: TerminationReason,
    pub final_violation: f64,
    /// Final multiplier per constraint row, in row order.
    pub multipliers: Vec<f64>,
    /// Final quadratic penalty weight.
    pub final_penalty: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == TerminationReason::Converged
    }
}

/// A constrained trajectory problem.
pub struct Problem {
    pub objective: Objective,
    pub constraints: ConstraintSet,
}

/// Solves `(H + shift I) x = rhs` by banded Cholesky, escalating the
/// Levenberg shift on factorization failure. Returns the solution and the
/// shift that succeeded.
pub fn solve_regularized(
    hess: &BlockBandedMatrix,
    rhs: &DVector<f64>,
    config: &SolverConfig,
) -> Result<(DVector<f64>, f64)> {
    let mut shift = 0.0;
    loop {
        let attempt = if shift == 0.0 {
            hess.cholesky()
        } else {
            let mut shifted = hess.clone();
            shifted.add_diagonal(shift);
            shifted.cholesky()
        };
        match attempt {
            Ok(factor) => return Ok((factor.solve(rhs), shift)),
            Err(err) => {
                shift = if shift == 0.0 { config.levenberg_init } else { shift * config.levenberg_growth };
                if shift > config.levenberg_max {
                    return Err(err);
                }
            }
        }
    }
}

/// Augmented Lagrangian state over the expanded constraint rows.
#[derive(Debug, Clone)]
pub struct AugLagState {
    pub rho: f64,
    /// One multiplier per row: lambda for equalities, mu >= 0 for
    /// inequalities.
    pub multipliers: Vec<f64>,
}

static EMPTY_CONSTRAINTS: std::sync::OnceLock<ConstraintSet> = std::sync::OnceLock::new();

struct Penalized<'a> {
    objective: &'a Objective,
    constraints: &'a ConstraintSet,
    rows: Vec<ConstraintRow>,
    state: AugLagState,
}

impl<'a> Penalized<'a> {
    fn new(
        objective: &'a Objective,
        constraints: &'a ConstraintSet,
        config: &SolverConfig,
        warm_state: Option<AugLagState>,
    ) -> Result<Self> {
        let rows = constraints.rows(objective.indexing(), objective.dim())?;
        let state = match warm_state {
            Some(state) => {
                if state.multipliers.len() != rows.len() {
                    return Err(Error::DimensionMismatch {
                        context: "warm-start multipliers",
                        expected: rows.len(),
                        actual: state.multipliers.len(),
                    });
                }
                state
            }
            None => AugLagState { rho: config.rho_init, multipliers: vec![0.0; rows.len()] },
        };
        Ok(Self { objective, constraints, rows, state })
    }

    fn value(&self, traj: &Trajectory) -> Result<f64> {
        let mut total = self.objective.value(traj)?;
        let rho = self.state.rho;
        for (r, row) in self.rows.iter().enumerate() {
            let clique = extract_clique(traj, row.clique, self.objective.indexing())?;
            let c = self.constraints.term(row.entry).value(&clique);
            let m = self.state.multipliers[r];
            total += match row.kind {
                ConstraintKind::Equality => m * c + 0.5 * rho * c * c,
                ConstraintKind::Inequality => {
                    let shifted = (m + rho * c).max(0.0);
                    (shifted * shifted - m * m) / (2.0 * rho)
                }
            };
        }
        Ok(total)
    }

    fn assemble(&self, traj: &Trajectory) -> Result<(f64, DVector<f64>, BlockBandedMatrix)> {
        let (mut value, mut grad, mut hess) = self.objective.assemble(traj)?;
        let indexing = self.objective.indexing();
        let rho = self.state.rho;
        for (r, row) in self.rows.iter().enumerate() {
            let clique = extract_clique(traj, row.clique, indexing)?;
            let term = self.constraints.term(row.entry);
            let c = term.value(&clique);
            let m = self.state.multipliers[r];
            // Coefficient of the constraint gradient and curvature in the
            // penalized objective; zero for inactive inequalities.
            let (val, coeff, quad_active) = match row.kind {
                ConstraintKind::Equality => (m * c + 0.5 * rho * c * c, m + rho * c, true),
                ConstraintKind::Inequality => {
                    let shifted = (m + rho * c).max(0.0);
                    (
                        (shifted * shifted - m * m) / (2.0 * rho),
                        shifted,
                        shifted > 0.0,
                    )
                }
            };
            value += val;
            if coeff == 0.0 && !quad_active {
                continue;
            }
            let cg = term.gradient(&clique);
            crate::banded::scatter_clique_gradient(&mut grad, row.clique, indexing, &(&cg * coeff))?;
            let mut block = term.gn_hessian(&clique) * coeff.max(0.0);
            if quad_active {
                block += &cg * cg.transpose() * rho;
            }
            crate::banded::scatter_clique_hessian(&mut hess, row.clique, indexing, &block)?;
        }
        Ok((value, grad, hess))
    }

    /// Per-row violations: `|h|` for equalities, `max(0, g)` for
    /// inequalities.
    fn violations(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let clique = extract_clique(traj, row.clique, self.objective.indexing())?;
            let c = self.constraints.term(row.entry).value(&clique);
            out.push(match row.kind {
                ConstraintKind::Equality => c.abs(),
                ConstraintKind::Inequality => c.max(0.0),
            });
        }
        Ok(out)
    }

    fn update_multipliers(&mut self, traj: &Trajectory) -> Result<()> {
        let rho = self.state.rho;
        for (r, row) in self.rows.iter().enumerate() {
            let clique = extract_clique(traj, row.clique, self.objective.indexing())?;
            let c = self.constraints.term(row.entry).value(&clique);
            let m = &mut self.state.multipliers[r];
            *m = match row.kind {
                ConstraintKind::Equality => *m + rho * c,
                ConstraintKind::Inequality => (*m + rho * c).max(0.0),
            };
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InnerOutcome {
    Converged,
    MaxIter,
    LineSearchFailure,
    SolverFailure,
}

struct InnerResult {
    outcome: InnerOutcome,
    accepted_steps: usize,
}

struct InnerLog<'r> {
    outer: usize,
    report: &'r mut SolveReport,
    peak_grad: &'r mut f64,
}

fn newton_inner_loop(
    pen: &Penalized<'_>,
    traj: &mut Trajectory,
    config: &SolverConfig,
    log: &mut InnerLog<'_>,
) -> Result<InnerResult> {
    let mut value = pen.value(traj)?;
    let mut inner_history = vec![value];
    if log.report.objective_history.is_empty() {
        log.report.objective_history.push(value);
    }

    let mut outcome = InnerOutcome::MaxIter;
    let mut accepted_steps = 0;
    for inner in 0..config.max_inner {
        let (_, grad, hess) = pen.assemble(traj)?;
        let grad_inf = grad.amax();
        *log.peak_grad = log.peak_grad.max(grad_inf);
        if grad_inf <= config.tol_grad {
            outcome = InnerOutcome::Converged;
            break;
        }

        let (step, shift) = match solve_regularized(&hess, &(-&grad), config) {
            Ok(v) => v,
            Err(_) => {
                outcome = InnerOutcome::SolverFailure;
                break;
            }
        };

        let slope = grad.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut backtracks = 0;
        for bt in 0..=config.max_backtracks {
            let candidate = traj.stepped(&(&step * alpha))?;
            let cand_value = pen.value(&candidate)?;
            if cand_value <= value + config.armijo_c * alpha * slope {
                *traj = candidate;
                value = cand_value;
                accepted = true;
                backtracks = bt;
                break;
            }
            alpha *= config.backtrack;
        }
        if !accepted {
            // The step cannot decrease the proxy. With approximate term
            // gradients this is the expected end state once the gradient
            // falls below the approximation accuracy.
            let within_stall_tol = grad_inf <= config.stall_grad_tol
                || (config.stall_grad_rel_tol > 0.0
                    && grad_inf <= config.stall_grad_rel_tol * *log.peak_grad);
            outcome = if within_stall_tol {
                InnerOutcome::Converged
            } else {
                InnerOutcome::LineSearchFailure
            };
            break;
        }

        accepted_steps += 1;
        inner_history.push(value);
        log.report.objective_history.push(value);
        log.report.inner_iterations += 1;
        log.report.diagnostics.push(IterationDiagnostics {
            outer: log.outer,
            inner,
            proxy_value: value,
            grad_inf_norm: grad_inf,
            levenberg_shift: shift,
            backtracks,
        });
    }

    log.report.inner_histories.push(inner_history);
    Ok(InnerResult { outcome, accepted_steps })
}

fn blank_report(traj: &Trajectory) -> SolveReport {
    SolveReport {
        trajectory: TrajectoryData::from_trajectory(traj),
        objective_history: Vec::new(),
        inner_histories: Vec::new(),
        violation_history: Vec::new(),
        inner_iterations: 0,
        outer_iterations: 0,
        termination: TerminationReason::MaxIter,
        final_violation: 0.0,
        multipliers: Vec::new(),
        final_penalty: 0.0,
        diagnostics: Vec::new(),
    }
}

fn reason_of(outcome: InnerOutcome) -> TerminationReason {
    match outcome {
        InnerOutcome::Converged => TerminationReason::Converged,
        InnerOutcome::MaxIter => TerminationReason::MaxIter,
        InnerOutcome::LineSearchFailure => TerminationReason::LineSearchFailure,
        InnerOutcome::SolverFailure => TerminationReason::SolverFailure,
    }
}

/// Minimizes an unconstrained objective by Gauss-Newton iterations with
/// banded solves and backtracking line search.
pub fn newton_solve(
    objective: &Objective,
    traj_init: &Trajectory,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let empty = EMPTY_CONSTRAINTS.get_or_init(ConstraintSet::new);
    let mut traj = traj_init.clone();
    let mut report = blank_report(&traj);
    let pen = Penalized::new(objective, empty, config, None)?;
    let mut peak_grad = 0.0;
    let mut log = InnerLog { outer: 0, report: &mut report, peak_grad: &mut peak_grad };
    let result = newton_inner_loop(&pen, &mut traj, config, &mut log)?;
    report.outer_iterations = 1;
    report.violation_history.push(0.0);
    report.termination = reason_of(result.outcome);
    finish(&mut report, &traj, &pen, 0.0);
    Ok(report)
}

/// Solves a constrained problem by alternating inner Gauss-Newton solves
/// with multiplier updates and penalty growth.
pub fn augmented_lagrangian_solve(
    problem: &Problem,
    traj_init: &Trajectory,
    config: &SolverConfig,
) -> Result<SolveReport> {
    augmented_lagrangian_solve_warm(problem, traj_init, config, None)
}

/// [`augmented_lagrangian_solve`] with optional warm-started multiplier
/// state, as used when continuing a solve across a homotopy of objectives.
pub fn augmented_lagrangian_solve_warm(
    problem: &Problem,
    traj_init: &Trajectory,
    config: &SolverConfig,
    warm_state: Option<AugLagState>,
) -> Result<SolveReport> {
    let mut traj = traj_init.clone();
    let mut report = blank_report(&traj);
    let mut pen = Penalized::new(&problem.objective, &problem.constraints, config, warm_state)?;

    let mut prev_violation = f64::INFINITY;
    let mut last_outcome = InnerOutcome::MaxIter;
    let mut peak_grad = 0.0;

    for outer in 0..config.max_outer {
        let mut log = InnerLog { outer, report: &mut report, peak_grad: &mut peak_grad };
        let result = newton_inner_loop(&pen, &mut traj, config, &mut log)?;
        last_outcome = result.outcome;
        report.outer_iterations = outer + 1;

        let violations = pen.violations(&traj)?;
        let max_violation = violations.iter().cloned().fold(0.0, f64::max);
        report.violation_history.push(max_violation);

        if max_violation <= config.tol_constraint && last_outcome == InnerOutcome::Converged {
            // The converged multiplier estimates are the penalty-shifted
            // ones the final inner solve actually used.
            pen.update_multipliers(&traj)?;
            report.termination = TerminationReason::Converged;
            finish(&mut report, &traj, &pen, max_violation);
            return Ok(report);
        }
        // A feasible point where the line search can make no move at all is
        // the end of the road; an infeasible stall is not, since multiplier
        // updates reshape the landscape.
        if last_outcome == InnerOutcome::LineSearchFailure
            && max_violation <= config.tol_constraint
            && result.accepted_steps == 0
        {
            report.termination = TerminationReason::LineSearchFailure;
            finish(&mut report, &traj, &pen, max_violation);
            return Ok(report);
        }
        if last_outcome == InnerOutcome::SolverFailure {
            report.termination = TerminationReason::SolverFailure;
            finish(&mut report, &traj, &pen, max_violation);
            return Ok(report);
        }

        pen.update_multipliers(&traj)?;
        if pen.rows.is_empty() {
            // Unconstrained: one outer iteration is the whole solve.
            report.termination = reason_of(last_outcome);
            finish(&mut report, &traj, &pen, 0.0);
            return Ok(report);
        }
        if max_violation > prev_violation / config.violation_shrink {
            pen.state.rho = (pen.state.rho * config.rho_growth).min(config.rho_max);
        }
        prev_violation = max_violation;
    }

    let final_violation = pen
        .violations(&traj)?
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    report.termination = if last_outcome == InnerOutcome::Converged {
        TerminationReason::MaxIter
    } else {
        reason_of(last_outcome)
    };
    finish(&mut report, &traj, &pen, final_violation);
    Ok(report)
}

fn finish(report: &mut SolveReport, traj: &Trajectory, pen: &Penalized<'_>, violation: f64) {
    report.trajectory = TrajectoryData::from_trajectory(traj);
    report.final_violation = violation;
    report.multipliers = pen.state.multipliers.clone();
    report.final_penalty = pen.state.rho;
}

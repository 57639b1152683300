//! JSON problem description files for the `optimize` subcommand.
//!
//! Schema (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "chain": { "builtin": "arm3" },
//!   "steps": 20,
//!   "dt": 0.1,
//!   "q_start": [0.0, 0.3, -0.5],
//!   "terms": [
//!     { "type": "config_velocity", "weight": 1.0 },
//!     { "type": "config_acceleration", "weight": 0.1 },
//!     { "type": "posture", "weight": 0.01 },
//!     { "type": "kinetic_energy", "weight": 10.0 }
//!   ],
//!   "constraints": [
//!     { "type": "goal", "frame": "ee", "point": [0.6, 0.4, 0.3] },
//!     { "type": "obstacle", "frame": "ee", "center": [0.4, 0.2, 0.3],
//!       "radius": 0.1, "margin": 0.02 }
//!   ],
//!   "solver": { "max_outer": 30 }
//! }
//! ```
//!
//! `chain` is either `{ "builtin": "arm3" | "arm8" | "planar2" }` or
//! `{ "file": "chain.json" }`. Optimization starts from the zero-motion
//! trajectory at `q_start`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::cholesky_metric::{InertiaMetric, MetricVelocityTerm};
use crate::error::{Error, Result};
use crate::kinematics::{ChainFile, KinematicChain};
use crate::objective::{
    joint_limit_penalty, kinetic_energy_term, posture_term, squared_derivative_term, Attachment,
    FramePointMap, IdentityMap, Objective, TaskMap,
};
use crate::optimizer::{
    augmented_lagrangian_solve, goal_constraint, joint_limit_constraints, obstacle_constraint,
    ConstraintKind, ConstraintSet, Problem, SolveReport, SolverConfig,
};
use crate::traj::{CliqueIndexing, Trajectory};

pub const PROBLEM_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ChainSource {
    Builtin(String),
    File(PathBuf),
}

impl ChainSource {
    pub fn load(&self) -> Result<KinematicChain> {
        match self {
            ChainSource::Builtin(name) => match name.as_str() {
                "arm3" => Ok(crate::models::arm_3dof_with_bodies()),
                "arm8" => Ok(crate::models::serial_chain_8dof()),
                "planar2" => Ok(crate::models::planar_2link()),
                other => Err(Error::Config(format!(
                    "unknown builtin chain '{other}' (expected arm3, arm8, or planar2)"
                ))),
            },
            ChainSource::File(path) => ChainFile::load(path)?.into_chain(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TermSpec {
    /// `weight * ||qdot||^2`
    ConfigVelocity { weight: f64 },
    /// `weight * ||qddot||^2`
    ConfigAcceleration { weight: f64 },
    /// `(weight/2) ||q - q_default||^2`; defaults to the start configuration.
    Posture {
        weight: f64,
        #[serde(default)]
        q_default: Option<Vec<f64>>,
    },
    /// Hinge-squared proximity penalty inside `margin` of the limits.
    JointLimitPenalty { weight: f64, q_min: Vec<f64>, q_max: Vec<f64>, margin: f64 },
    /// `(weight/2) ||xdot||^2` for a named frame point.
    TaskVelocity { frame: String, weight: f64 },
    /// Exact kinetic energy through the rigid-body inertial map.
    KineticEnergy { weight: f64 },
    /// Kinetic energy through the Cholesky approximation of the inertia
    /// metric.
    KineticEnergyCholesky { weight: f64 },
    /// Squared configuration velocities on the first and last cliques.
    BoundaryVelocity { weight: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintSpec {
    /// Zero-distance equality on the goal proximity of `frame` at the final
    /// time step.
    Goal { frame: String, point: [f64; 3] },
    /// Spherical keep-out inequality for `frame` at every time step.
    Obstacle { frame: String, center: [f64; 3], radius: f64, margin: f64 },
    /// Hard joint limits at every time step.
    JointLimits { q_min: Vec<f64>, q_max: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemFile {
    pub version: u32,
    pub chain: ChainSource,
    pub steps: usize,
    pub dt: f64,
    pub q_start: Vec<f64>,
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// A problem file compiled against its chain, ready to solve.
pub struct BuiltProblem {
    pub chain: Arc<KinematicChain>,
    pub problem: Problem,
    pub traj_init: Trajectory,
    pub solver: SolverConfig,
}

impl BuiltProblem {
    pub fn solve(&self) -> Result<SolveReport> {
        augmented_lagrangian_solve(&self.problem, &self.traj_init, &self.solver)
    }
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            context: format!("reading problem file {}", path.display()),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing problem file".into(),
            source,
        })?;
        if file.version != PROBLEM_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported problem file version {} (expected {PROBLEM_FILE_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    /// Highest derivative order any term uses; sets the clique order.
    fn clique_order(&self) -> usize {
        let has_accel = self
            .terms
            .iter()
            .any(|t| matches!(t, TermSpec::ConfigAcceleration { .. }));
        if has_accel {
            2
        } else {
            1
        }
    }

    pub fn build(&self) -> Result<BuiltProblem> {
        let chain = Arc::new(self.chain.load()?);
        let d = chain.dof();
        if self.q_start.len() != d {
            return Err(Error::DimensionMismatch {
                context: "problem start configuration",
                expected: d,
                actual: self.q_start.len(),
            });
        }
        let order = self.clique_order();
        let indexing = CliqueIndexing::new(order, self.steps)?;
        let window = indexing.window();
        let q_start = DVector::from_column_slice(&self.q_start);
        let traj_init = Trajectory::zero_motion(&q_start, self.steps, self.dt)?;

        let mut objective = Objective::new(indexing, d);
        for spec in &self.terms {
            match spec {
                TermSpec::ConfigVelocity { weight } => {
                    let map: Arc<dyn TaskMap> = Arc::new(IdentityMap { dim: d });
                    objective.add_term(
                        Box::new(
                            squared_derivative_term(map, 1, 2.0 * weight, self.dt)?
                                .with_window(window),
                        ),
                        Attachment::All,
                    )?;
                }
                TermSpec::ConfigAcceleration { weight } => {
                    let map: Arc<dyn TaskMap> = Arc::new(IdentityMap { dim: d });
                    objective.add_term(
                        Box::new(
                            squared_derivative_term(map, 2, 2.0 * weight, self.dt)?
                                .with_window(window),
                        ),
                        Attachment::All,
                    )?;
                }
                TermSpec::Posture { weight, q_default } => {
                    let q_default = match q_default {
                        Some(q) => DVector::from_column_slice(q),
                        None => q_start.clone(),
                    };
                    objective.add_term(
                        Box::new(posture_term(q_default, *weight).with_window(window)),
                        Attachment::All,
                    )?;
                }
                TermSpec::JointLimitPenalty { weight, q_min, q_max, margin } => {
                    objective.add_term(
                        Box::new(
                            joint_limit_penalty(
                                DVector::from_column_slice(q_min),
                                DVector::from_column_slice(q_max),
                                *margin,
                                *weight,
                            )?
                            .with_window(window),
                        ),
                        Attachment::All,
                    )?;
                }
                TermSpec::TaskVelocity { frame, weight } => {
                    let map: Arc<dyn TaskMap> =
                        Arc::new(FramePointMap::new(chain.clone(), frame)?);
                    objective.add_term(
                        Box::new(
                            squared_derivative_term(map, 1, *weight, self.dt)?
                                .with_window(window),
                        ),
                        Attachment::All,
                    )?;
                }
                TermSpec::KineticEnergy { weight } => {
                    objective.add_term(
                        Box::new(
                            kinetic_energy_term(chain.clone(), *weight, self.dt)?
                                .with_window(window),
                        ),
                        Attachment::All,
                    )?;
                }
                TermSpec::KineticEnergyCholesky { weight } => {
                    let metric = Arc::new(InertiaMetric::new(chain.clone()));
                    objective.add_term(
                        Box::new(
                            MetricVelocityTerm::new(metric, *weight, self.dt)?
                                .with_window(window)
                                .with_jitter(1e-8),
                        ),
                        Attachment::All,
                    )?;
                }
                TermSpec::BoundaryVelocity { weight } => {
                    let map: Arc<dyn TaskMap> = Arc::new(IdentityMap { dim: d });
                    let first = squared_derivative_term(map.clone(), 1, *weight, self.dt)?
                        .with_window(window);
                    objective.add_term(Box::new(first), Attachment::At(vec![1]))?;
                    let last = squared_derivative_term(map, 1, *weight, self.dt)?
                        .with_window(window)
                        .with_anchor(window - 2);
                    objective
                        .add_term(Box::new(last), Attachment::At(vec![indexing.num_cliques()]))?;
                }
            }
        }

        let mut constraints = ConstraintSet::new();
        for spec in &self.constraints {
            match spec {
                ConstraintSpec::Goal { frame, point } => {
                    let goal = Vector3::new(point[0], point[1], point[2]);
                    // The terminal potential acts on q_T: the clique whose
                    // center is the last interior step.
                    constraints.add(
                        ConstraintKind::Equality,
                        Box::new(goal_constraint(chain.clone(), frame, goal)?.with_window(window)),
                        Attachment::At(vec![self.steps]),
                    );
                }
                ConstraintSpec::Obstacle { frame, center, radius, margin } => {
                    let center = Vector3::new(center[0], center[1], center[2]);
                    constraints.add(
                        ConstraintKind::Inequality,
                        Box::new(
                            obstacle_constraint(chain.clone(), frame, center, *radius, *margin)?
                                .with_window(window),
                        ),
                        Attachment::All,
                    );
                }
                ConstraintSpec::JointLimits { q_min, q_max } => {
                    let rows = joint_limit_constraints(
                        &DVector::from_column_slice(q_min),
                        &DVector::from_column_slice(q_max),
                    )?;
                    for row in rows {
                        constraints.add(
                            ConstraintKind::Inequality,
                            Box::new(row.with_window(window)),
                            Attachment::All,
                        );
                    }
                }
            }
        }

        Ok(BuiltProblem {
            chain,
            problem: Problem { objective, constraints },
            traj_init,
            solver: self.solver.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "version": 1,
        "chain": { "builtin": "planar2" },
        "steps": 6,
        "dt": 0.1,
        "q_start": [0.2, 0.3],
        "terms": [
            { "type": "config_velocity", "weight": 1.0 },
            { "type": "posture", "weight": 0.1 }
        ],
        "constraints": [
            { "type": "goal", "frame": "ee", "point": [1.2, 0.9, 0.0] }
        ]
    }"#;

    #[test]
    fn builds_and_solves_a_small_problem() {
        let file = ProblemFile::parse(EXAMPLE).unwrap();
        let built = file.build().unwrap();
        let report = built.solve().unwrap();
        assert!(report.converged(), "termination {:?}", report.termination);
        assert!(report.final_violation <= 1e-6);
    }

    #[test]
    fn rejects_bad_version_and_bad_chain() {
        let text = EXAMPLE.replace("\"version\": 1", "\"version\": 3");
        assert!(ProblemFile::parse(&text).is_err());
        let text = EXAMPLE.replace("planar2", "hexapod");
        assert!(ProblemFile::parse(&text).unwrap().build().is_err());
    }

    #[test]
    fn acceleration_terms_raise_clique_order() {
        let file = ProblemFile::parse(EXAMPLE).unwrap();
        assert_eq!(file.clique_order(), 1);
        let mut with_accel = file.clone();
        with_accel.terms.push(TermSpec::ConfigAcceleration { weight: 0.1 });
        assert_eq!(with_accel.clique_order(), 2);
        with_accel.build().unwrap();
    }

    #[test]
    fn roundtrips_as_json() {
        let file = ProblemFile::parse(EXAMPLE).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back = ProblemFile::parse(&text).unwrap();
        assert_eq!(file, back);
    }
}

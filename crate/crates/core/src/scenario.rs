//! Scenario files: everything one planning run needs.
//!
//! ```json
//! {
//!   "name": "straight_line",
//!   "robot": "reference3r.json",
//!   "path": { "stages": 10, "curve": { "kind": "straight_line", "start": [0.6, 0.25], "end": [0.6, -0.25] } },
//!   "grid": { "pv_max": 1.4, "pv_levels": 70, "v_min": [-1.0], "v_max": [1.0], "v_step": [0.05] },
//!   "limits": { "orders": ["velocity", "acceleration", "jerk", "torque", "torque_rate"] },
//!   "objective": "time",
//!   "baseline": { "q0": [0.2, 1.0, -1.2] },
//!   "output_dir": "out/straight_line",
//!   "seed": 0
//! }
//! ```
//!
//! `robot` and `path.curve` take either an inline object or a file name
//! relative to the scenario file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::ResolutionConfig;
use crate::constraints::{LimitSets, Order, DEFAULT_SATURATION_TOL};
use crate::grid::GridSpec;
use crate::path::{sample_path, CurveSpec, PathError, WorkspacePath};
use crate::planner::{Objective, PlannerOptions, TimeObjective};
use crate::robot::{PlanarArm, RobotDescription, RobotError, RobotModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RobotSource {
    File(String),
    Inline(RobotDescription),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSource {
    File(String),
    Inline(CurveSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    /// Segment count `N`; the path has `N + 1` waypoints.
    pub stages: usize,
    pub curve: CurveSource,
}

fn default_saturation_tol() -> f64 {
    DEFAULT_SATURATION_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    /// Enforced orders.
    pub orders: Vec<Order>,
    /// Optional per-joint rows `[qd, qdd, qddd, tau, tau_dot]` replacing the
    /// robot's own table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<[f64; 5]>>,
    #[serde(default)]
    pub check_points: usize,
    #[serde(default = "default_saturation_tol")]
    pub saturation_tol: f64,
}

impl LimitsConfig {
    pub fn build(&self, robot: &dyn RobotModel) -> Result<LimitSets, ConfigError> {
        let n = robot.dof();
        let mut sets = LimitSets::from_robot(robot, &self.orders);
        if let Some(table) = &self.table {
            if table.len() != n {
                return Err(ConfigError::Invalid(format!(
                    "limits table has {} rows, robot has {n} joints",
                    table.len()
                )));
            }
            for order in &self.orders {
                let col = table.iter().map(|row| row[order.index()]).collect();
                sets = sets.with(*order, col);
            }
        }
        sets.check_points = self.check_points;
        sets.saturation_tol = self.saturation_tol;
        sets.validate(n).map_err(ConfigError::Invalid)?;
        Ok(sets)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    Time,
}

impl ObjectiveKind {
    pub fn build(self) -> Box<dyn Objective> {
        match self {
            ObjectiveKind::Time => Box::new(TimeObjective),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub robot: RobotSource,
    pub path: PathConfig,
    pub grid: GridSpec,
    pub limits: LimitsConfig,
    #[serde(default)]
    pub objective: ObjectiveKind,
    #[serde(default)]
    pub planner: PlannerOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ResolutionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

/// A scenario with every reference loaded and every block validated.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub robot: PlanarArm,
    pub path: WorkspacePath,
    pub curve: CurveSpec,
    pub grid: GridSpec,
    pub limits: LimitSets,
    pub objective: ObjectiveKind,
    pub options: PlannerOptions,
    pub baseline: Option<ResolutionConfig>,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    pub hash: String,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|source| ConfigError::Json {
        path: path.display().to_string(),
        source,
    })
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        parse(text, Path::new("<scenario>"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse(&read(path)?, path)
    }

    /// Copy with the robot and curve inlined.
    pub fn inlined(&self, base: &Path) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        if let RobotSource::File(f) = &self.robot {
            let p = base.join(f);
            out.robot = RobotSource::Inline(parse(&read(&p)?, &p)?);
        }
        if let CurveSource::File(f) = &self.path.curve {
            out.path.curve = CurveSource::Inline(CurveSpec::load(&base.join(f))?);
        }
        Ok(out)
    }

    /// Hash of the inlined scenario; output locations are not part of it.
    pub fn hash(&self, base: &Path) -> Result<String, ConfigError> {
        let mut s = self.inlined(base)?;
        s.output_dir = None;
        let bytes = serde_json::to_vec(&s).expect("scenario serializes");
        Ok(hex::encode(Sha256::digest(bytes)))
    }

    /// Loads references relative to `base` and cross-validates all blocks.
    pub fn resolve(&self, base: &Path) -> Result<Problem, ConfigError> {
        let inl = self.inlined(base)?;
        let RobotSource::Inline(desc) = &inl.robot else {
            unreachable!("inlined")
        };
        let CurveSource::Inline(curve) = &inl.path.curve else {
            unreachable!("inlined")
        };
        let robot = desc.build()?;
        let path = sample_path(curve, self.path.stages)?;
        if path.dim() != robot.task_dim() {
            return Err(ConfigError::Invalid(format!(
                "path is {}-dimensional, robot task space is {}-dimensional",
                path.dim(),
                robot.task_dim()
            )));
        }
        let r = robot.redundancy_degree();
        if self.grid.v_step.len() != r {
            return Err(ConfigError::Invalid(format!(
                "grid has {} redundancy steps, robot has {r} redundancy parameters",
                self.grid.v_step.len()
            )));
        }
        self.grid
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let limits = self.limits.build(&robot)?;
        if let Some(b) = &self.baseline {
            b.validate(robot.dof())
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(Problem {
            name: self.name.clone(),
            hash: self.hash(base)?,
            robot,
            path,
            curve: curve.clone(),
            grid: self.grid.clone(),
            limits,
            objective: self.objective,
            options: self.planner,
            baseline: self.baseline.clone(),
            output_dir: self.output_dir.as_ref().map(|d| base.join(d)),
            seed: self.seed,
        })
    }
}

/// Reads and resolves a scenario file.
pub fn load_problem(path: &Path) -> Result<Problem, ConfigError> {
    let scenario = Scenario::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    scenario.resolve(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"{
        "name": "t",
        "robot": "robot.json",
        "path": { "stages": 4, "curve": { "kind": "straight_line", "start": [0.6, 0.1], "end": [0.6, -0.1] } },
        "grid": { "pv_max": 1.0, "pv_levels": 4, "v_min": [-0.2], "v_max": [0.2], "v_step": [0.1] },
        "limits": { "orders": ["velocity", "torque"] }
    }"#;

    #[test]
    fn round_trip_is_identity() {
        let s = Scenario::from_json(TEXT).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
        assert_eq!(back.to_json(), s.to_json());
    }

    #[test]
    fn resolves_against_base_directory() {
        let dir = tempfile::tempdir().unwrap();
        let desc = RobotDescription::from_arm(&PlanarArm::reference());
        fs::write(
            dir.path().join("robot.json"),
            serde_json::to_string(&desc).unwrap(),
        )
        .unwrap();
        let s = Scenario::from_json(TEXT).unwrap();
        let p = s.resolve(dir.path()).unwrap();
        assert_eq!(p.path.stages(), 4);
        assert!(p.limits.enabled(Order::Torque));
        assert!(!p.limits.enabled(Order::Jerk));
        assert_eq!(p.hash.len(), 64);
    }

    #[test]
    fn mismatched_redundancy_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let desc = RobotDescription::from_arm(&PlanarArm::reference());
        fs::write(
            dir.path().join("robot.json"),
            serde_json::to_string(&desc).unwrap(),
        )
        .unwrap();
        let mut s = Scenario::from_json(TEXT).unwrap();
        s.grid.v_min.push(0.0);
        s.grid.v_max.push(0.0);
        s.grid.v_step.push(0.1);
        assert!(matches!(
            s.resolve(dir.path()),
            Err(ConfigError::Invalid(_))
        ));
    }
}

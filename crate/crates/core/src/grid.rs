//! Discrete state space: stages x pseudo-velocity levels x redundancy
//! lattice x IK branches.
//!
//! Every node at stage `i` holds `[pv_l, q_jg(i)]`. The joint vector only
//! depends on `(i, j, g)`, so IK runs once per cell and is shared by all
//! pseudo-velocity levels. Storage is stage-major; inside a stage a node id
//! is `l * cells + cell` with `cell = flat(j) * branches + g`, so ascending
//! ids are lexicographic in `(l, j, g)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::path::WorkspacePath;
use crate::robot::{IkError, JointState, RobotModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("stage {stage} has no admissible node")]
    EmptyStage { stage: usize },
    #[error("invalid grid specification: {0}")]
    InvalidSpec(String),
}

/// Removes nodes from the admissible sets. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionMask {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<Vec<usize>>,
}

impl ExclusionMask {
    fn matches(&self, node: &NodeView<'_>) -> bool {
        self.stage.is_none_or(|s| s == node.stage)
            && self.branch.is_none_or(|g| g == node.branch)
            && self.level.is_none_or(|l| l == node.level)
            && self.j.as_deref().is_none_or(|j| j == node.j)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Pseudo-velocity cap (m/s).
    pub pv_max: f64,
    /// Number of pseudo-velocity intervals `N_l`; levels are `0..=N_l`.
    pub pv_levels: usize,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub v_step: Vec<f64>,
    #[serde(default = "default_true")]
    pub rest_to_rest: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclusions: Vec<ExclusionMask>,
}

impl GridSpec {
    pub fn pv_step(&self) -> f64 {
        self.pv_max / self.pv_levels as f64
    }

    /// Lattice size `N_j` per redundancy parameter.
    pub fn lattice_counts(&self) -> Result<Vec<usize>, GridError> {
        let r = self.v_min.len();
        if self.v_max.len() != r || self.v_step.len() != r {
            return Err(GridError::InvalidSpec(
                "v_min, v_max and v_step must have the same length".into(),
            ));
        }
        (0..r)
            .map(|k| {
                let span = self.v_max[k] - self.v_min[k];
                if !(self.v_step[k] > 0.0) || !(span >= 0.0) {
                    return Err(GridError::InvalidSpec(format!(
                        "parameter {k}: need v_step > 0 and v_min <= v_max"
                    )));
                }
                let ratio = span / self.v_step[k];
                let count = ratio.round();
                if (ratio - count).abs() > 1e-6 * ratio.max(1.0) {
                    return Err(GridError::InvalidSpec(format!(
                        "parameter {k}: range {span} is not a multiple of step {}",
                        self.v_step[k]
                    )));
                }
                Ok(count as usize)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.pv_levels < 1 || !(self.pv_max > 0.0) || !self.pv_max.is_finite() {
            return Err(GridError::InvalidSpec(
                "need pv_levels >= 1 and a finite pv_max > 0".into(),
            ));
        }
        self.lattice_counts().map(|_| ())
    }

    /// Redundancy parameter values for lattice index `j`.
    pub fn v_at(&self, j: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            j.len(),
            j.iter()
                .enumerate()
                .map(|(k, &jk)| jk as f64 * self.v_step[k] + self.v_min[k]),
        )
    }
}

/// Borrowed view of a grid node, handed to exclusion predicates.
#[derive(Debug, Clone, Copy)]
pub struct NodeView<'a> {
    pub stage: usize,
    pub level: usize,
    pub j: &'a [usize],
    pub branch: usize,
    pub q: &'a JointState,
}

/// IK result for one `(i, j, g)` cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellState {
    Solved { q: JointState, degenerate: bool },
    Unreachable,
    BranchDegenerate,
    OutOfLimits { q: JointState },
}

impl CellState {
    pub fn q(&self) -> Option<&JointState> {
        match self {
            CellState::Solved { q, .. } => Some(q),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageCells {
    pub cells: Vec<CellState>,
    /// Admissibility per node id (`levels * cells` entries).
    pub admissible: Vec<bool>,
}

impl StageCells {
    pub fn admissible_count(&self) -> usize {
        self.admissible.iter().filter(|&&a| a).count()
    }
}

/// Decomposed node coordinates within a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIndex {
    pub level: usize,
    pub cell: usize,
}

#[derive(Debug, Clone)]
pub struct StateGrid {
    path: WorkspacePath,
    pv_step: f64,
    pv_levels: usize,
    rest_to_rest: bool,
    /// Redundancy lattice sizes `N_j + 1` per parameter.
    lattice: Vec<usize>,
    branches: usize,
    redundancy_joints: Vec<usize>,
    stages: Vec<StageCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridStats {
    pub stages: usize,
    pub pv_levels: usize,
    pub lattice: Vec<usize>,
    pub branches: usize,
    pub cells_per_stage: usize,
    pub admissible_per_stage: Vec<usize>,
    pub admissible_total: usize,
    pub lattice_bound: usize,
}

/// Builds the grid by running IK once per `(i, j, g)` cell.
pub fn build_grid(
    robot: &dyn RobotModel,
    path: &WorkspacePath,
    spec: &GridSpec,
) -> Result<StateGrid, GridError> {
    spec.validate()?;
    let counts = spec.lattice_counts()?;
    let r = robot.redundancy_degree();
    if counts.len() != r {
        return Err(GridError::InvalidSpec(format!(
            "grid has {} redundancy parameters, robot has {r}",
            counts.len()
        )));
    }
    if path.dim() != robot.task_dim() {
        return Err(GridError::InvalidSpec(format!(
            "path dimension {} does not match task dimension {}",
            path.dim(),
            robot.task_dim()
        )));
    }
    let lattice: Vec<usize> = counts.iter().map(|c| c + 1).collect();
    let branches = robot.branch_count();
    let cells_per_stage = lattice.iter().product::<usize>() * branches;
    let stage_count = path.waypoint_count();

    let solved = par::map_indices(stage_count * cells_per_stage, |flat| {
        let stage = flat / cells_per_stage;
        let cell = flat % cells_per_stage;
        let g = cell % branches;
        let j = unflatten(cell / branches, &lattice);
        let v = spec.v_at(&j);
        match robot.inverse_kinematics(path.waypoint(stage), &v, g) {
            Ok(sol) => {
                if robot.within_position_limits(&sol.q) {
                    CellState::Solved {
                        q: sol.q,
                        degenerate: sol.degenerate,
                    }
                } else {
                    CellState::OutOfLimits { q: sol.q }
                }
            }
            Err(IkError::BranchDegenerate { .. }) => CellState::BranchDegenerate,
            Err(_) => CellState::Unreachable,
        }
    });

    let mut cells_iter = solved.into_iter();
    let stages = (0..stage_count)
        .map(|_| {
            let cells: Vec<CellState> = cells_iter.by_ref().take(cells_per_stage).collect();
            StageCells {
                admissible: Vec::new(),
                cells,
            }
        })
        .collect();

    let mut grid = StateGrid {
        path: path.clone(),
        pv_step: spec.pv_step(),
        pv_levels: spec.pv_levels,
        rest_to_rest: spec.rest_to_rest,
        lattice,
        branches,
        redundancy_joints: robot.chain().redundancy_joints.clone(),
        stages,
    };
    grid.init_admissible();
    let masks = spec.exclusions.clone();
    grid.exclude_nodes(|node| masks.iter().any(|m| m.matches(node)));
    grid.check_nonempty()?;
    Ok(grid)
}

fn unflatten(mut flat: usize, lattice: &[usize]) -> Vec<usize> {
    let mut j = vec![0; lattice.len()];
    for k in (0..lattice.len()).rev() {
        j[k] = flat % lattice[k];
        flat /= lattice[k];
    }
    j
}

impl StateGrid {
    /// A grid with exactly one cell per stage pinned to a given joint path.
    /// This is the classic phase-plane grid of a fixed joint path.
    pub fn pinned(
        robot: &dyn RobotModel,
        path: &WorkspacePath,
        joint_path: &[JointState],
        pv_max: f64,
        pv_levels: usize,
        rest_to_rest: bool,
    ) -> Result<Self, GridError> {
        if joint_path.len() != path.waypoint_count() {
            return Err(GridError::InvalidSpec(format!(
                "joint path has {} samples, path has {} waypoints",
                joint_path.len(),
                path.waypoint_count()
            )));
        }
        if pv_levels < 1 || !(pv_max > 0.0) {
            return Err(GridError::InvalidSpec(
                "need pv_levels >= 1 and pv_max > 0".into(),
            ));
        }
        let stages = joint_path
            .iter()
            .map(|q| StageCells {
                cells: vec![if robot.within_position_limits(q) {
                    CellState::Solved {
                        q: q.clone(),
                        degenerate: false,
                    }
                } else {
                    CellState::OutOfLimits { q: q.clone() }
                }],
                admissible: Vec::new(),
            })
            .collect();
        let mut grid = StateGrid {
            path: path.clone(),
            pv_step: pv_max / pv_levels as f64,
            pv_levels,
            rest_to_rest,
            lattice: vec![1; robot.redundancy_degree()],
            branches: 1,
            redundancy_joints: robot.chain().redundancy_joints.clone(),
            stages,
        };
        grid.init_admissible();
        grid.check_nonempty()?;
        Ok(grid)
    }

    fn init_admissible(&mut self) {
        let levels = self.levels();
        let last = self.stage_count() - 1;
        let rest = self.rest_to_rest;
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let cells = stage.cells.len();
            let boundary = i == 0 || i == last;
            stage.admissible = (0..levels * cells)
                .map(|id| {
                    let l = id / cells;
                    let ok_level = if boundary {
                        !rest || l == 0
                    } else {
                        // Interior stops make the backward-Euler step diverge.
                        l > 0
                    };
                    ok_level && matches!(stage.cells[id % cells], CellState::Solved { .. })
                })
                .collect();
        }
    }

    fn exclude_nodes<F>(&mut self, pred: F)
    where
        F: Fn(&NodeView<'_>) -> bool,
    {
        let lattice = self.lattice.clone();
        let branches = self.branches;
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let cells = stage.cells.len();
            for id in 0..stage.admissible.len() {
                if !stage.admissible[id] {
                    continue;
                }
                let cell = id % cells;
                let j = unflatten(cell / branches, &lattice);
                let q = stage.cells[cell].q().expect("admissible cell is solved");
                let view = NodeView {
                    stage: i,
                    level: id / cells,
                    j: &j,
                    branch: cell % branches,
                    q,
                };
                if pred(&view) {
                    stage.admissible[id] = false;
                }
            }
        }
    }

    fn check_nonempty(&self) -> Result<(), GridError> {
        match self.stages.iter().position(|s| s.admissible_count() == 0) {
            Some(stage) => Err(GridError::EmptyStage { stage }),
            None => Ok(()),
        }
    }

    /// Removes every admissible node matching `pred`.
    pub fn exclude<F>(mut self, pred: F) -> Result<Self, GridError>
    where
        F: Fn(&NodeView<'_>) -> bool,
    {
        self.exclude_nodes(pred);
        self.check_nonempty()?;
        Ok(self)
    }

    pub fn path(&self) -> &WorkspacePath {
        &self.path
    }

    /// Number of stages including stage 0, i.e. `N_i + 1`.
    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn last_stage(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn levels(&self) -> usize {
        self.pv_levels + 1
    }

    pub fn pv_step(&self) -> f64 {
        self.pv_step
    }

    pub fn pv_max(&self) -> f64 {
        self.pv_levels as f64 * self.pv_step
    }

    pub fn rest_to_rest(&self) -> bool {
        self.rest_to_rest
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn lattice(&self) -> &[usize] {
        &self.lattice
    }

    pub fn redundancy_joints(&self) -> &[usize] {
        &self.redundancy_joints
    }

    pub fn cells_per_stage(&self) -> usize {
        self.stages[0].cells.len()
    }

    pub fn stage(&self, i: usize) -> &StageCells {
        &self.stages[i]
    }

    pub fn nodes_per_stage(&self) -> usize {
        self.levels() * self.cells_per_stage()
    }

    /// Pseudo-velocity of level `l`.
    pub fn pv(&self, level: usize) -> f64 {
        level as f64 * self.pv_step
    }

    pub fn index(&self, id: usize) -> NodeIndex {
        let cells = self.cells_per_stage();
        NodeIndex {
            level: id / cells,
            cell: id % cells,
        }
    }

    pub fn node_id(&self, level: usize, cell: usize) -> usize {
        level * self.cells_per_stage() + cell
    }

    pub fn cell_id(&self, j: &[usize], branch: usize) -> usize {
        let mut flat = 0;
        for (k, &jk) in j.iter().enumerate() {
            flat = flat * self.lattice[k] + jk;
        }
        flat * self.branches + branch
    }

    /// Lattice index and branch of a cell.
    pub fn cell_coords(&self, cell: usize) -> (Vec<usize>, usize) {
        (
            unflatten(cell / self.branches, &self.lattice),
            cell % self.branches,
        )
    }

    pub fn is_admissible(&self, stage: usize, id: usize) -> bool {
        self.stages[stage].admissible[id]
    }

    /// Joint configuration of an admissible node.
    pub fn q(&self, stage: usize, id: usize) -> &JointState {
        let cell = id % self.cells_per_stage();
        self.stages[stage].cells[cell]
            .q()
            .expect("node refers to a solved cell")
    }

    /// Admissible node ids of a stage in ascending order.
    pub fn admissible_ids(&self, stage: usize) -> Vec<usize> {
        self.stages[stage]
            .admissible
            .iter()
            .enumerate()
            .filter_map(|(id, &a)| a.then_some(id))
            .collect()
    }

    pub fn admissible_total(&self) -> usize {
        self.stages.iter().map(StageCells::admissible_count).sum()
    }

    pub fn stats(&self) -> GridStats {
        let per_stage: Vec<usize> = self
            .stages
            .iter()
            .map(StageCells::admissible_count)
            .collect();
        GridStats {
            stages: self.last_stage(),
            pv_levels: self.pv_levels,
            lattice: self.lattice.clone(),
            branches: self.branches,
            cells_per_stage: self.cells_per_stage(),
            admissible_total: per_stage.iter().sum(),
            admissible_per_stage: per_stage,
            lattice_bound: self.stage_count() * self.nodes_per_stage(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{sample_path, CurveSpec};
    use crate::robot::PlanarArm;

    fn straight() -> WorkspacePath {
        sample_path(
            &CurveSpec::StraightLine {
                start: vec![0.6, 0.25],
                end: vec![0.6, -0.25],
            },
            10,
        )
        .unwrap()
    }

    fn spec() -> GridSpec {
        GridSpec {
            pv_max: 1.4,
            pv_levels: 70,
            v_min: vec![-1.0],
            v_max: vec![1.0],
            v_step: vec![0.05],
            rest_to_rest: true,
            exclusions: vec![],
        }
    }

    #[test]
    fn admissible_counts_match_direct_ik_sweep() {
        let arm = PlanarArm::reference();
        let path = straight();
        let spec = spec();
        let grid = build_grid(&arm, &path, &spec).unwrap();
        assert_eq!(grid.cells_per_stage(), 41 * 2);
        for i in 0..=10 {
            let mut expected = 0;
            for jv in 0..=40 {
                let v = DVector::from_element(1, -1.0 + jv as f64 * 0.05);
                for g in 0..2 {
                    if let Ok(sol) = arm.inverse_kinematics(path.waypoint(i), &v, g) {
                        if arm.within_position_limits(&sol.q) {
                            expected += if i == 0 || i == 10 { 1 } else { 70 };
                        }
                    }
                }
            }
            assert!(expected > 0);
            assert_eq!(grid.stage(i).admissible_count(), expected, "stage {i}");
        }
        let stats = grid.stats();
        assert!(stats.admissible_total <= stats.lattice_bound);
    }

    #[test]
    fn rest_to_rest_boundaries_hold_only_level_zero() {
        let arm = PlanarArm::reference();
        let grid = build_grid(&arm, &straight(), &spec()).unwrap();
        for &i in &[0, grid.last_stage()] {
            for id in grid.admissible_ids(i) {
                assert_eq!(grid.index(id).level, 0);
            }
        }
        for id in grid.admissible_ids(5) {
            assert!(grid.index(id).level > 0);
        }
    }

    #[test]
    fn unreachable_waypoint_empties_its_stage() {
        let arm = PlanarArm::reference();
        let path = sample_path(
            &CurveSpec::StraightLine {
                start: vec![0.6, 0.0],
                end: vec![2.0, 0.0],
            },
            4,
        )
        .unwrap();
        let err = build_grid(&arm, &path, &spec()).unwrap_err();
        assert_eq!(err, GridError::EmptyStage { stage: 2 });
    }

    #[test]
    fn exclusions() {
        let arm = PlanarArm::reference();
        let grid = build_grid(&arm, &straight(), &spec()).unwrap();
        let total = grid.admissible_total();
        let same = grid.clone().exclude(|_| false).unwrap();
        assert_eq!(same.admissible_total(), total);

        let down = grid.clone().exclude(|n| n.branch == 1).unwrap();
        for i in 0..down.stage_count() {
            for id in down.admissible_ids(i) {
                assert_eq!(down.index(id).cell % 2, 0);
            }
        }

        // Elbow-height proxy: drop configurations whose second joint sits
        // above y = 0.3, then compare with an explicit set difference.
        let elbow_y = |q: &JointState| 0.45 * q[0].sin() + 0.40 * (q[0] + q[1]).sin();
        let cut = grid.clone().exclude(|n| elbow_y(n.q) > 0.3).unwrap();
        for i in 0..grid.stage_count() {
            let expected: Vec<usize> = grid
                .admissible_ids(i)
                .into_iter()
                .filter(|&id| elbow_y(grid.q(i, id)) <= 0.3)
                .collect();
            assert_eq!(cut.admissible_ids(i), expected);
        }
    }

    #[test]
    fn masks_in_spec_apply() {
        let arm = PlanarArm::reference();
        let mut s = spec();
        s.exclusions.push(ExclusionMask {
            branch: Some(1),
            ..Default::default()
        });
        let grid = build_grid(&arm, &straight(), &s).unwrap();
        assert!(grid
            .admissible_ids(3)
            .iter()
            .all(|&id| grid.index(id).cell.is_multiple_of(2)));
    }

    #[test]
    fn refined_lattice_contains_coarse() {
        let arm = PlanarArm::reference();
        let coarse_spec = spec();
        let mut fine_spec = spec();
        fine_spec.v_step = vec![0.025];
        let path = straight();
        let coarse = build_grid(&arm, &path, &coarse_spec).unwrap();
        let fine = build_grid(&arm, &path, &fine_spec).unwrap();
        for i in 0..coarse.stage_count() {
            for id in coarse.admissible_ids(i) {
                let NodeIndex { level, cell } = coarse.index(id);
                let (j, g) = coarse.cell_coords(cell);
                let fine_cell = fine.cell_id(&[2 * j[0]], g);
                let fine_id = fine.node_id(level, fine_cell);
                assert!(fine.is_admissible(i, fine_id));
                assert_eq!(fine.q(i, fine_id), coarse.q(i, id));
            }
        }
    }

    #[test]
    fn non_integral_lattice_rejected() {
        let mut s = spec();
        s.v_step = vec![0.3];
        assert!(matches!(s.validate(), Err(GridError::InvalidSpec(_))));
    }
}

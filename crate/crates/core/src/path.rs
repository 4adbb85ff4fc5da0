//! Task-space paths sampled at uniform arc length.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chord uniformity accepted for explicit waypoint lists (relative).
pub const CHORD_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
    #[error("invalid curve specification: {0}")]
    InvalidSpec(String),
    #[error("stage index {index} out of range 0..={last}")]
    StageOutOfRange { index: usize, last: usize },
    #[error("path file {path}: {reason}")]
    File { path: String, reason: String },
}

/// Geometric description of a path before sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    StraightLine {
        start: Vec<f64>,
        end: Vec<f64>,
    },
    /// `center + (a cos(phi), b sin(phi))` for `phi` from `start_angle`
    /// over `sweep` radians. A sweep of `2 pi` closes the curve.
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        start_angle: f64,
        sweep: f64,
    },
    Waypoints {
        points: Vec<Vec<f64>>,
    },
}

impl CurveSpec {
    pub fn dim(&self) -> usize {
        match self {
            CurveSpec::StraightLine { start, .. } => start.len(),
            CurveSpec::Ellipse { .. } => 2,
            CurveSpec::Waypoints { points } => points.first().map_or(0, Vec::len),
        }
    }

    /// Reads a path file: JSON holds a `CurveSpec`, CSV holds one waypoint
    /// per row with task-space coordinates as columns.
    pub fn load(path: &Path) -> Result<Self, PathError> {
        let file_err = |reason: String| PathError::File {
            path: path.display().to_string(),
            reason,
        };
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .comment(Some(b'#'))
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| file_err(e.to_string()))?;
            let mut points = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| file_err(e.to_string()))?;
                // Header rows are skipped when they do not parse as numbers.
                let row: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
                match row {
                    Ok(row) => points.push(row),
                    Err(_) if points.is_empty() => continue,
                    Err(e) => return Err(file_err(e.to_string())),
                }
            }
            Ok(CurveSpec::Waypoints { points })
        } else {
            let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
        }
    }

    fn validate(&self) -> Result<(), PathError> {
        match self {
            CurveSpec::StraightLine { start, end } => {
                if start.is_empty() || start.len() != end.len() {
                    return Err(PathError::InvalidSpec(
                        "line endpoints must have equal, nonzero dimension".into(),
                    ));
                }
            }
            CurveSpec::Ellipse {
                semi_axes, sweep, ..
            } => {
                if !(semi_axes[0] >= 0.0 && semi_axes[1] >= 0.0) || !sweep.is_finite() {
                    return Err(PathError::InvalidSpec(
                        "ellipse needs non-negative semi-axes and a finite sweep".into(),
                    ));
                }
            }
            CurveSpec::Waypoints { points } => {
                let dim = self.dim();
                if points.is_empty() || dim == 0 || points.iter().any(|p| p.len() != dim) {
                    return Err(PathError::InvalidSpec(
                        "waypoints must be non-empty rows of equal dimension".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Waypoints `x(0..=N)` at arc-length stamps `i * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspacePath {
    waypoints: Vec<DVector<f64>>,
    step: f64,
}

impl WorkspacePath {
    /// Wraps waypoints that are already uniformly spaced. The arc length is
    /// taken as the sum of chords.
    pub fn from_uniform_waypoints(waypoints: Vec<DVector<f64>>) -> Result<Self, PathError> {
        if waypoints.is_empty() {
            return Err(PathError::InvalidSpec("no waypoints".into()));
        }
        let segments = waypoints.len() - 1;
        if segments == 0 {
            return Ok(Self {
                waypoints,
                step: 0.0,
            });
        }
        let total: f64 = waypoints.windows(2).map(|w| (&w[1] - &w[0]).norm()).sum();
        if !(total > 0.0) {
            return Err(PathError::DegenerateCurve("zero path length".into()));
        }
        Ok(Self {
            waypoints,
            step: total / segments as f64,
        })
    }

    /// Number of stages `N_i` (segments).
    pub fn stages(&self) -> usize {
        self.waypoints.len() - 1
    }

    pub fn waypoint_count(&self) -> usize {
        self.waypoints.len()
    }

    pub fn dim(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Total arc length, exactly `N * step`.
    pub fn length(&self) -> f64 {
        self.stages() as f64 * self.step
    }

    /// Arc-length stamp of stage `i`.
    pub fn stamp(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn waypoint(&self, i: usize) -> &DVector<f64> {
        &self.waypoints[i]
    }

    pub fn waypoints(&self) -> &[DVector<f64>] {
        &self.waypoints
    }

    /// Largest relative deviation of a chord from the nominal step.
    pub fn chord_deviation(&self) -> f64 {
        if self.stages() == 0 {
            return 0.0;
        }
        self.waypoints
            .windows(2)
            .map(|w| ((&w[1] - &w[0]).norm() - self.step).abs() / self.step)
            .fold(0.0, f64::max)
    }

    /// Unit tangent at waypoint `i`: central difference inside, one-sided at
    /// the ends.
    pub fn tangent(&self, i: usize) -> Result<DVector<f64>, PathError> {
        let last = self.stages();
        if i > last {
            return Err(PathError::StageOutOfRange { index: i, last });
        }
        if last == 0 {
            return Err(PathError::DegenerateCurve(
                "single-waypoint path has no tangent".into(),
            ));
        }
        let (a, b) = if i == 0 {
            (0, last.min(2))
        } else if i == last {
            (last - last.min(2), last)
        } else {
            (i - 1, i + 1)
        };
        for k in a..b {
            if self.waypoints[k] == self.waypoints[k + 1] {
                return Err(PathError::DegenerateCurve(format!(
                    "waypoints {k} and {} coincide",
                    k + 1
                )));
            }
        }
        let w = &self.waypoints;
        // Second-order one-sided stencils at the ends when three points exist.
        let d = if b - a == 2 && i == a {
            -&w[a + 2] + &w[a + 1] * 4.0 - &w[a] * 3.0
        } else if b - a == 2 && i == b {
            &w[b] * 3.0 - &w[b - 1] * 4.0 + &w[b - 2]
        } else {
            &w[b] - &w[a]
        };
        let norm = d.norm();
        if !(norm > 0.0) {
            return Err(PathError::DegenerateCurve(format!(
                "zero central difference at waypoint {i}"
            )));
        }
        Ok(d / norm)
    }
}

/// Samples `spec` into `stages` segments of equal arc length.
pub fn sample_path(spec: &CurveSpec, stages: usize) -> Result<WorkspacePath, PathError> {
    spec.validate()?;
    match spec {
        CurveSpec::StraightLine { start, end } => {
            let a = DVector::from_column_slice(start);
            let b = DVector::from_column_slice(end);
            let length = (&b - &a).norm();
            check_length(length, stages)?;
            if stages == 0 {
                return WorkspacePath::from_uniform_waypoints(vec![a]);
            }
            let waypoints = (0..=stages)
                .map(|i| {
                    if i == stages {
                        b.clone()
                    } else {
                        &a + (&b - &a) * (i as f64 / stages as f64)
                    }
                })
                .collect();
            Ok(WorkspacePath {
                waypoints,
                step: length / stages as f64,
            })
        }
        CurveSpec::Ellipse {
            center,
            semi_axes,
            start_angle,
            sweep,
        } => {
            let eval = |s: f64| {
                let phi = start_angle + s * sweep;
                DVector::from_column_slice(&[
                    center[0] + semi_axes[0] * phi.cos(),
                    center[1] + semi_axes[1] * phi.sin(),
                ])
            };
            rectify(eval, stages)
        }
        CurveSpec::Waypoints { points } => {
            let pts: Vec<DVector<f64>> = points
                .iter()
                .map(|p| DVector::from_column_slice(p))
                .collect();
            let cumulative = cumulative_lengths(&pts);
            let length = *cumulative.last().unwrap();
            check_length(length, stages)?;
            if stages == 0 {
                return WorkspacePath::from_uniform_waypoints(vec![pts[0].clone()]);
            }
            if pts.len() == stages + 1 {
                let uniform = WorkspacePath::from_uniform_waypoints(pts.clone())?;
                if uniform.chord_deviation() <= CHORD_TOLERANCE {
                    return Ok(uniform);
                }
            }
            let step = length / stages as f64;
            let waypoints = (0..=stages)
                .map(|i| polyline_at(&pts, &cumulative, i as f64 * step))
                .collect();
            Ok(WorkspacePath { waypoints, step })
        }
    }
}

fn check_length(length: f64, stages: usize) -> Result<(), PathError> {
    if !length.is_finite() {
        return Err(PathError::InvalidSpec("non-finite path length".into()));
    }
    if length == 0.0 && stages > 0 {
        return Err(PathError::DegenerateCurve(
            "zero-length curve cannot be split into stages".into(),
        ));
    }
    if length > 0.0 && stages == 0 {
        return Err(PathError::InvalidSpec(
            "a curve of positive length needs at least one stage".into(),
        ));
    }
    Ok(())
}

fn cumulative_lengths(pts: &[DVector<f64>]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(pts.len());
    out.push(0.0);
    for w in pts.windows(2) {
        acc += (&w[1] - &w[0]).norm();
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along a polyline with cumulative lengths `cum`.
fn polyline_at(pts: &[DVector<f64>], cum: &[f64], s: f64) -> DVector<f64> {
    let last = pts.len() - 1;
    if s >= cum[last] {
        return pts[last].clone();
    }
    let k = cum
        .partition_point(|&c| c <= s)
        .saturating_sub(1)
        .min(last - 1);
    let span = cum[k + 1] - cum[k];
    let w = if span > 0.0 { (s - cum[k]) / span } else { 0.0 };
    &pts[k] + (&pts[k + 1] - &pts[k]) * w
}

/// Numeric rectification of a parametric curve on `[0, 1]`: dense
/// pre-sampling, then inverse arc-length interpolation of the parameter.
fn rectify<F>(eval: F, stages: usize) -> Result<WorkspacePath, PathError>
where
    F: Fn(f64) -> DVector<f64>,
{
    let fine = (stages * 256).max(8192);
    let params: Vec<f64> = (0..=fine).map(|k| k as f64 / fine as f64).collect();
    let pts: Vec<DVector<f64>> = params.iter().map(|&s| eval(s)).collect();
    let cum = cumulative_lengths(&pts);
    let length = *cum.last().unwrap();
    check_length(length, stages)?;
    if stages == 0 {
        return WorkspacePath::from_uniform_waypoints(vec![pts[0].clone()]);
    }
    let step = length / stages as f64;
    let waypoints = (0..=stages)
        .map(|i| {
            if i == stages {
                return eval(1.0);
            }
            let target = i as f64 * step;
            let k = cum
                .partition_point(|&c| c <= target)
                .saturating_sub(1)
                .min(fine - 1);
            let span = cum[k + 1] - cum[k];
            let w = if span > 0.0 {
                (target - cum[k]) / span
            } else {
                0.0
            };
            eval(params[k] + w * (params[k + 1] - params[k]))
        })
        .collect();
    Ok(WorkspacePath { waypoints, step })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(start: &[f64], end: &[f64]) -> CurveSpec {
        CurveSpec::StraightLine {
            start: start.to_vec(),
            end: end.to_vec(),
        }
    }

    #[test]
    fn straight_line_half_meter_ten_stages() {
        let path = sample_path(&line(&[0.5, 0.25], &[0.5, -0.25]), 10).unwrap();
        assert_eq!(path.waypoint_count(), 11);
        assert!((path.step() - 0.05).abs() < 1e-15);
        assert_eq!(path.stamp(0), 0.0);
        assert_eq!(path.stamp(10), path.length());
        for i in 0..=10 {
            let t = path.tangent(i).unwrap();
            assert!((t[0]).abs() < 1e-12 && (t[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ellipse_step_matches_length() {
        // Semi-axes picked so the perimeter is close to 1.45 m.
        let spec = CurveSpec::Ellipse {
            center: [0.6, 0.1],
            semi_axes: [0.28, 0.18],
            start_angle: 0.0,
            sweep: std::f64::consts::TAU,
        };
        let path = sample_path(&spec, 60).unwrap();
        assert!((path.step() - path.length() / 60.0).abs() < 1e-15);
        assert!(path.chord_deviation() < CHORD_TOLERANCE);
        let chords: f64 = path
            .waypoints()
            .windows(2)
            .map(|w| (&w[1] - &w[0]).norm())
            .sum();
        assert!((chords - path.length()).abs() / path.length() < 0.005);
    }

    #[test]
    fn single_waypoint_has_zero_stages() {
        let spec = CurveSpec::Waypoints {
            points: vec![vec![1.0, 2.0]],
        };
        let path = sample_path(&spec, 0).unwrap();
        assert_eq!(path.stages(), 0);
        assert_eq!(path.length(), 0.0);
        assert!(matches!(
            sample_path(&spec, 3),
            Err(PathError::DegenerateCurve(_))
        ));
    }

    #[test]
    fn zero_length_line_is_degenerate() {
        assert!(matches!(
            sample_path(&line(&[1.0, 1.0], &[1.0, 1.0]), 4),
            Err(PathError::DegenerateCurve(_))
        ));
    }

    #[test]
    fn circle_tangent_is_perpendicular_to_radius() {
        let spec = CurveSpec::Ellipse {
            center: [0.0, 0.0],
            semi_axes: [0.7, 0.7],
            start_angle: 0.3,
            sweep: 2.0,
        };
        let path = sample_path(&spec, 400).unwrap();
        for i in 0..=path.stages() {
            let t = path.tangent(i).unwrap();
            assert!((t.norm() - 1.0).abs() < 1e-12);
            let radial = path.waypoint(i).normalize();
            assert!(t.dot(&radial).abs() < 1e-3, "stage {i}");
        }
    }

    #[test]
    fn uniform_waypoints_accepted_as_is() {
        let points: Vec<Vec<f64>> = (0..=4).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        let spec = CurveSpec::Waypoints {
            points: points.clone(),
        };
        let path = sample_path(&spec, 4).unwrap();
        for (p, w) in points.iter().zip(path.waypoints()) {
            assert_eq!(p.as_slice(), w.as_slice());
        }
    }

    #[test]
    fn nonuniform_waypoints_resampled() {
        let spec = CurveSpec::Waypoints {
            points: vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![1.0, 0.0]],
        };
        let path = sample_path(&spec, 2).unwrap();
        assert!((path.waypoint(1)[0] - 0.5).abs() < 1e-12);
        assert!(path.chord_deviation() < 1e-12);
    }

    #[test]
    fn coincident_waypoints_have_no_tangent() {
        let path = WorkspacePath::from_uniform_waypoints(vec![
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[0.0, 0.0]),
            DVector::from_column_slice(&[1.0, 0.0]),
        ])
        .unwrap();
        assert!(matches!(
            path.tangent(0),
            Err(PathError::DegenerateCurve(_))
        ));
    }

    #[test]
    fn csv_waypoints_load() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("p.csv");
        std::fs::write(&file, "x,y\n0,0\n0.5,0\n1.0,0\n").unwrap();
        let spec = CurveSpec::load(&file).unwrap();
        assert_eq!(spec.dim(), 2);
        let path = sample_path(&spec, 2).unwrap();
        assert_eq!(path.length(), 1.0);
    }
}

//! Run artifacts.
//!
//! `report.json` holds only values that are a function of the scenario, so
//! it is byte-identical across reruns and thread counts. Timings and machine
//! details go to `run.json`. CSV files start with a `# scenario <hash>`
//! comment line followed by a fixed header; floats carry 17 significant
//! digits.
//!
//! | file | columns |
//! |------|---------|
//! | `trajectory.csv` | `t, q_k, qd_k, qdd_k, tau_k` |
//! | `pst.csv` | `lambda, v_k, pv` |
//! | `timeline.csv` | `stage, order, joint, ratio` |
//! | `joint_path.csv` | `stage, lambda, q_k, residual` |
//! | `sweep.csv` | `value, cost, saturation, runtime_s` |
//! | `trajectory_resampled_linear.csv` | `t, q_k, qd_k` |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::baseline::JointPath;
use crate::constraints::{LimitSets, Order, SaturationReport};
use crate::grid::GridStats;
use crate::planner::PlanResult;

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// CSV table with a hash comment and a fixed header.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self, hash: &str) -> std::io::Result<Vec<u8>> {
        let mut buf = format!("# scenario {hash}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header)
                .map_err(std::io::Error::other)?;
            for r in &self.rows {
                w.write_record(r).map_err(std::io::Error::other)?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    pub fn write(&self, path: &Path, hash: &str) -> std::io::Result<()> {
        write_atomic(path, &self.to_bytes(hash)?)
    }
}

fn joint_columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |k| format!("{prefix}_{k}"))
}

fn push_vec(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|&x| fmt_f64(x)));
}

pub fn trajectory_table(plan: &PlanResult) -> Table {
    let n = plan.states.first().map_or(0, |s| s.q.len());
    let mut header = vec!["t".to_string()];
    for p in ["q", "qd", "qdd", "tau"] {
        header.extend(joint_columns(p, n));
    }
    let mut t = Table::new(header);
    for (s, &time) in plan.states.iter().zip(&plan.times) {
        let mut row = vec![fmt_f64(time)];
        push_vec(&mut row, &s.q);
        push_vec(&mut row, &s.qd);
        push_vec(&mut row, &s.qdd);
        push_vec(&mut row, &s.tau);
        t.push(row);
    }
    t
}

pub fn pst_table(plan: &PlanResult) -> Table {
    let r = plan.redundancy.first().map_or(0, |v| v.len());
    let mut header = vec!["lambda".to_string()];
    header.extend(joint_columns("v", r));
    header.push("pv".into());
    let mut t = Table::new(header);
    for p in plan.pst() {
        let mut row = vec![fmt_f64(p.lambda)];
        row.extend(p.v.iter().map(|&x| fmt_f64(x)));
        row.push(fmt_f64(p.pv));
        t.push(row);
    }
    t
}

pub fn timeline_table(sat: &SaturationReport) -> Table {
    let mut t = Table::new(vec![
        "stage".into(),
        "order".into(),
        "joint".into(),
        "ratio".into(),
    ]);
    for a in &sat.timeline {
        t.push(vec![
            a.stage.to_string(),
            a.order.name().into(),
            a.joint.to_string(),
            fmt_f64(a.ratio),
        ]);
    }
    t
}

pub fn joint_path_table(jp: &JointPath, lambda: &[f64]) -> Table {
    let n = jp.q.first().map_or(0, |q| q.len());
    let mut header = vec!["stage".to_string(), "lambda".to_string()];
    header.extend(joint_columns("q", n));
    header.push("residual".into());
    let mut t = Table::new(header);
    for (i, q) in jp.q.iter().enumerate() {
        let mut row = vec![i.to_string(), fmt_f64(lambda[i])];
        push_vec(&mut row, q);
        row.push(fmt_f64(jp.residuals[i]));
        t.push(row);
    }
    t
}

/// One row of a linear-in-time resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledRow {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

/// Resamples `q` linearly in time at `rate` Hz. Velocities are recomputed
/// by backward differences of the resampled positions, so the export is
/// piecewise linear and not smooth. The final sample is always the plan's
/// final time.
pub fn resample_export(plan: &PlanResult, rate: f64) -> Vec<ResampledRow> {
    assert!(rate > 0.0, "rate must be positive");
    let total = *plan.times.last().expect("non-empty plan");
    let start = plan.times[0];
    let period = 1.0 / rate;
    let mut times: Vec<f64> = Vec::new();
    let mut k = 0usize;
    loop {
        let t = start + k as f64 * period;
        // Drop a sample that would sit within rounding of the end.
        if t >= total - 1e-12 * total.abs().max(1.0) {
            break;
        }
        times.push(t);
        k += 1;
    }
    times.push(total);

    let mut seg = 0usize;
    let mut rows: Vec<ResampledRow> = Vec::with_capacity(times.len());
    for &t in &times {
        while seg + 1 < plan.times.len() - 1 && plan.times[seg + 1] <= t {
            seg += 1;
        }
        let q = if plan.times.len() == 1 {
            plan.states[0].q.clone()
        } else {
            let (t0, t1) = (plan.times[seg], plan.times[seg + 1]);
            let (q0, q1) = (&plan.states[seg].q, &plan.states[seg + 1].q);
            if t == t0 {
                q0.clone()
            } else if t == t1 {
                q1.clone()
            } else {
                let s = (t - t0) / (t1 - t0);
                q0 + (q1 - q0) * s
            }
        };
        let qd = match rows.last() {
            Some(prev) => (&q - &prev.q) / (t - prev.t),
            None => DVector::zeros(q.len()),
        };
        rows.push(ResampledRow { t, q, qd });
    }
    rows
}

pub fn resampled_table(rows: &[ResampledRow]) -> Table {
    let n = rows.first().map_or(0, |r| r.q.len());
    let mut header = vec!["t".to_string()];
    header.extend(joint_columns("q", n));
    header.extend(joint_columns("qd", n));
    let mut t = Table::new(header);
    for r in rows {
        let mut row = vec![fmt_f64(r.t)];
        push_vec(&mut row, &r.q);
        push_vec(&mut row, &r.qd);
        t.push(row);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationSummary {
    pub percentage: f64,
    pub by_order: Vec<(Order, f64)>,
    pub tolerance: f64,
}

impl From<&SaturationReport> for SaturationSummary {
    fn from(s: &SaturationReport) -> Self {
        Self {
            percentage: s.percentage,
            by_order: s.by_order.clone(),
            tolerance: s.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterEcho {
    pub stages: usize,
    pub waypoints: usize,
    pub step: f64,
    pub path_length: f64,
    pub pv_max: f64,
    pub pv_levels: usize,
    pub pv_step: f64,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub v_step: Vec<f64>,
    pub rest_to_rest: bool,
    pub orders: Vec<Order>,
    pub check_points: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub pure_pseudo_inverse: bool,
    pub total_iterations: usize,
    pub max_residual: f64,
    pub branch_jumps: Vec<usize>,
}

impl From<&JointPath> for BaselineSummary {
    fn from(jp: &JointPath) -> Self {
        Self {
            pure_pseudo_inverse: jp.pure_pseudo_inverse,
            total_iterations: jp.iterations.iter().sum(),
            max_residual: jp.residuals.iter().copied().fold(0.0, f64::max),
            branch_jumps: jp.branch_jumps.clone(),
        }
    }
}

/// Deterministic plan report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub tag: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub objective: String,
    pub cost: f64,
    pub saturation: SaturationSummary,
    pub exact: bool,
    pub history_dependent_orders: Vec<Order>,
    pub pv_cap_binding: bool,
    pub edges_evaluated: u64,
    pub grid: GridStats,
    pub parameters: ParameterEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSummary>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub crate_version: String,
}

impl MachineInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Timing and environment of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub scenario_hash: String,
    pub threads: usize,
    pub wall_clock_s: Vec<(String, f64)>,
    pub machine: MachineInfo,
}

/// Saturation of `plan` under `limits` with the configured tolerance.
pub fn saturation(plan: &PlanResult, limits: &LimitSets) -> SaturationReport {
    crate::constraints::saturation_percentage(plan, limits, limits.saturation_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        let x = 0.1f64 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s, "3.0000000000000004e-1");
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.json");
        write_json(&p, &vec![1, 2]).unwrap();
        assert!(p.exists());
        assert!(!dir.path().join("sub/a.json.tmp").exists());
    }
}

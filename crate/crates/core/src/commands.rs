//! Command implementations behind the CLI.
//!
//! Exit codes: 0 success, 2 infeasible, 3 configuration error, 4 budget
//! exceeded, 1 anything else (I/O, internal invariant).

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::baseline::{resolve_redundancy, time_parametrize, BaselineError};
use crate::grid::{build_grid, GridError, GridSpec, StateGrid};
use crate::oracle::{verify, GapReport, OracleBudget, OracleError};
use crate::par;
use crate::path::sample_path;
use crate::planner::{plan, PlanError, PlanResult};
use crate::report::{
    fmt_f64, joint_path_table, pst_table, resample_export, resampled_table, saturation,
    timeline_table, trajectory_table, write_json, BaselineSummary, MachineInfo, ParameterEcho,
    PlanReport, RunReport, Table,
};
use crate::scenario::{load_problem, ConfigError, Problem};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failure(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Config(_) => 3,
            CliError::Budget(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::EmptyStage { .. } => CliError::Infeasible(e.to_string()),
            GridError::InvalidSpec(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::NoFeasiblePlan { .. } => CliError::Infeasible(e.to_string()),
            PlanError::InvalidLimits(_) => CliError::Config(e.to_string()),
            PlanError::CorruptChain { .. } => CliError::Failure(e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::InvalidConfig(_) | BaselineError::Path(_) => {
                CliError::Config(e.to_string())
            }
            BaselineError::Grid(g) => g.into(),
            BaselineError::Plan(p) => p.into(),
            BaselineError::NoConvergence { .. } | BaselineError::SingularJacobian { .. } => {
                CliError::Infeasible(e.to_string())
            }
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            OracleError::NoFeasiblePlan => CliError::Infeasible(e.to_string()),
            OracleError::Plan(p) => p.into(),
            OracleError::ConfigMismatch | OracleError::ContractViolation { .. } => {
                CliError::Failure(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("writing artifacts: {e}"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub out: Option<PathBuf>,
    pub dry_run: bool,
    pub threads: Option<usize>,
    pub budget: Option<f64>,
}

/// Sweepable grid parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Stages,
    VStep,
    PvStep,
    PvMax,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stages" => Some(SweepAxis::Stages),
            "v_step" => Some(SweepAxis::VStep),
            "pv_step" => Some(SweepAxis::PvStep),
            "pv_max" => Some(SweepAxis::PvMax),
            _ => None,
        }
    }
}

struct Timer {
    start: Instant,
    laps: Vec<(String, f64)>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            laps: Vec::new(),
        }
    }

    fn lap(&mut self, name: &str) {
        let total: f64 = self.laps.iter().map(|l| l.1).sum();
        self.laps
            .push((name.into(), self.start.elapsed().as_secs_f64() - total));
    }

    fn finish(mut self) -> Vec<(String, f64)> {
        let total = self.start.elapsed().as_secs_f64();
        self.laps.push(("total".into(), total));
        self.laps
    }
}

fn out_dir(opts: &RunOptions, problem: &Problem) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| problem.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&problem.name))
}

fn write_run(dir: &Path, command: &str, problem: &Problem, timer: Timer) -> Result<(), CliError> {
    write_json(
        &dir.join("run.json"),
        &RunReport {
            command: command.into(),
            scenario_hash: problem.hash.clone(),
            threads: par::current_threads(),
            wall_clock_s: timer.finish(),
            machine: MachineInfo::current(),
        },
    )?;
    Ok(())
}

fn echo(problem: &Problem, spec: &GridSpec) -> ParameterEcho {
    ParameterEcho {
        stages: problem.path.stages(),
        waypoints: problem.path.waypoint_count(),
        step: problem.path.step(),
        path_length: problem.path.length(),
        pv_max: spec.pv_max,
        pv_levels: spec.pv_levels,
        pv_step: spec.pv_step(),
        v_min: spec.v_min.clone(),
        v_max: spec.v_max.clone(),
        v_step: spec.v_step.clone(),
        rest_to_rest: spec.rest_to_rest,
        orders: problem.limits.enabled_orders(),
        check_points: problem.limits.check_points,
        seed: problem.seed,
    }
}

/// Report plus tabular artifacts of one plan.
fn plan_report(
    tag: &str,
    problem: &Problem,
    grid: &StateGrid,
    spec: &GridSpec,
    result: &PlanResult,
    baseline: Option<BaselineSummary>,
) -> (PlanReport, Vec<(&'static str, Table)>) {
    let sat = saturation(result, &problem.limits);
    let report = PlanReport {
        tag: tag.into(),
        scenario: problem.name.clone(),
        scenario_hash: problem.hash.clone(),
        objective: result.objective.clone(),
        cost: result.cost,
        saturation: (&sat).into(),
        exact: result.exact,
        history_dependent_orders: result.history_dependent_orders.clone(),
        pv_cap_binding: result.pv_cap_binding,
        edges_evaluated: result.edges_evaluated,
        grid: grid.stats(),
        parameters: echo(problem, spec),
        baseline,
        fingerprint: result.fingerprint.clone(),
    };
    let tables = vec![
        ("trajectory.csv", trajectory_table(result)),
        ("pst.csv", pst_table(result)),
        ("timeline.csv", timeline_table(&sat)),
    ];
    (report, tables)
}

fn write_tables(dir: &Path, hash: &str, tables: &[(&str, Table)]) -> Result<(), CliError> {
    for (name, t) in tables {
        t.write(&dir.join(name), hash)?;
    }
    Ok(())
}

/// Outcome of a successful command, printed by the binary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: String,
    pub out_dir: Option<PathBuf>,
}

fn run_unified(problem: &Problem, spec: &GridSpec) -> Result<(StateGrid, PlanResult), CliError> {
    let grid = build_grid(&problem.robot, &problem.path, spec)?;
    let objective = problem.objective.build();
    let result = plan(
        &problem.robot,
        &grid,
        &problem.limits,
        objective.as_ref(),
        &problem.options,
    )?;
    Ok((grid, result))
}

pub fn cmd_plan(opts: &RunOptions) -> Result<Outcome, CliError> {
    par::with_threads(opts.threads, || {
        let mut timer = Timer::new();
        let problem = load_problem(&opts.scenario)?;
        let grid = build_grid(&problem.robot, &problem.path, &problem.grid)?;
        timer.lap("grid");
        if opts.dry_run {
            let s = grid.stats();
            return Ok(Outcome {
                summary: format!(
                    "grid ok: {} stages, {} admissible nodes (bound {}), per stage {:?}",
                    s.stages, s.admissible_total, s.lattice_bound, s.admissible_per_stage
                ),
                out_dir: None,
            });
        }
        let objective = problem.objective.build();
        let result = plan(
            &problem.robot,
            &grid,
            &problem.limits,
            objective.as_ref(),
            &problem.options,
        )?;
        timer.lap("plan");
        let dir = out_dir(opts, &problem);
        let (report, tables) =
            plan_report("unified", &problem, &grid, &problem.grid, &result, None);
        write_json(&dir.join("report.json"), &report)?;
        write_tables(&dir, &problem.hash, &tables)?;
        write_run(&dir, "plan", &problem, timer)?;
        Ok(Outcome {
            summary: format!(
                "cost {} s, saturation {:.1}%",
                result.cost, report.saturation.percentage
            ),
            out_dir: Some(dir),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario_hash: String,
    pub unified_cost: f64,
    pub baseline_cost: f64,
    /// `(baseline - unified) / unified`.
    pub relative_gap: f64,
}

pub fn cmd_baseline(opts: &RunOptions) -> Result<Outcome, CliError> {
    par::with_threads(opts.threads, || {
        let mut timer = Timer::new();
        let problem = load_problem(&opts.scenario)?;
        let config = problem
            .baseline
            .clone()
            .ok_or_else(|| CliError::Config("scenario has no baseline block".into()))?;
        let jp = resolve_redundancy(&problem.robot, &problem.path, &config)?;
        timer.lap("resolve");
        if opts.dry_run {
            return Ok(Outcome {
                summary: format!(
                    "joint path ok: {} waypoints, {} iterations",
                    jp.q.len(),
                    jp.iterations.iter().sum::<usize>()
                ),
                out_dir: None,
            });
        }
        let spec = &problem.grid;
        let result = time_parametrize(
            &problem.robot,
            &problem.path,
            &jp.q,
            &problem.limits,
            spec.pv_max,
            spec.pv_levels,
            spec.rest_to_rest,
        )?;
        timer.lap("parametrize");
        let pinned = StateGrid::pinned(
            &problem.robot,
            &problem.path,
            &jp.q,
            spec.pv_max,
            spec.pv_levels,
            spec.rest_to_rest,
        )?;
        let (_, unified) = run_unified(&problem, spec)?;
        timer.lap("unified");

        let dir = out_dir(opts, &problem);
        let (report, mut tables) = plan_report(
            "baseline",
            &problem,
            &pinned,
            spec,
            &result,
            Some((&jp).into()),
        );
        tables.push(("joint_path.csv", joint_path_table(&jp, &result.lambda)));
        write_json(&dir.join("report.json"), &report)?;
        write_tables(&dir, &problem.hash, &tables)?;
        let cmp = Comparison {
            scenario_hash: problem.hash.clone(),
            unified_cost: unified.cost,
            baseline_cost: result.cost,
            relative_gap: (result.cost - unified.cost) / unified.cost,
        };
        write_json(&dir.join("comparison.json"), &cmp)?;
        write_run(&dir, "baseline", &problem, timer)?;
        let mode = if jp.pure_pseudo_inverse {
            " (pure pseudo-inverse)"
        } else {
            ""
        };
        Ok(Outcome {
            summary: format!(
                "baseline cost {} s{mode}, unified {} s, gap {:.2}%",
                result.cost,
                unified.cost,
                100.0 * cmp.relative_gap
            ),
            out_dir: Some(dir),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub gap: GapReport,
}

pub fn cmd_verify(opts: &RunOptions) -> Result<Outcome, CliError> {
    par::with_threads(opts.threads, || {
        let mut timer = Timer::new();
        let problem = load_problem(&opts.scenario)?;
        let grid = build_grid(&problem.robot, &problem.path, &problem.grid)?;
        let mut budget = OracleBudget::default();
        if let Some(k) = opts.budget {
            budget.max_chains = k;
        }
        crate::oracle::check_budget(&grid, &budget)?;
        timer.lap("grid");
        if opts.dry_run {
            return Ok(Outcome {
                summary: format!(
                    "within budget: {} chains",
                    crate::oracle::chain_count(&grid)
                ),
                out_dir: None,
            });
        }
        let objective = problem.objective.build();
        let gap = verify(
            &problem.robot,
            &grid,
            &problem.limits,
            objective.as_ref(),
            &problem.options,
            &budget,
        )?;
        timer.lap("verify");
        let dir = out_dir(opts, &problem);
        let summary = format!(
            "planner {} s, oracle {} s, gap {:e}",
            gap.dp_cost, gap.oracle_cost, gap.absolute_gap
        );
        write_json(
            &dir.join("gap.json"),
            &VerifyReport {
                scenario: problem.name.clone(),
                scenario_hash: problem.hash.clone(),
                gap,
            },
        )?;
        write_run(&dir, "verify", &problem, timer)?;
        Ok(Outcome {
            summary,
            out_dir: Some(dir),
        })
    })
}

/// Applies one sweep value to a copy of the problem.
pub fn apply_axis(problem: &Problem, axis: SweepAxis, value: f64) -> Result<Problem, CliError> {
    let mut p = problem.clone();
    let integral = |x: f64, what: &str| -> Result<usize, CliError> {
        let r = x.round();
        if r < 1.0 || (x - r).abs() > 1e-9 * r {
            return Err(CliError::Config(format!(
                "{what} {x} is not a positive integer"
            )));
        }
        Ok(r as usize)
    };
    match axis {
        SweepAxis::Stages => {
            let n = integral(value, "stage count")?;
            p.path = sample_path(&p.curve, n).map_err(|e| CliError::Config(e.to_string()))?;
        }
        SweepAxis::VStep => {
            p.grid.v_step = vec![value; p.grid.v_step.len()];
        }
        SweepAxis::PvStep => {
            p.grid.pv_levels = integral(p.grid.pv_max / value, "pv_max / pv_step")?;
        }
        SweepAxis::PvMax => {
            let step = p.grid.pv_step();
            p.grid.pv_levels = integral(value / step, "pv_max / pv_step")?;
            p.grid.pv_max = value;
        }
    }
    p.grid.validate()?;
    Ok(p)
}

/// One sweep row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub cost: f64,
    pub saturation: f64,
    pub runtime_s: f64,
    pub status: String,
}

pub fn sweep(
    problem: &Problem,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let p = apply_axis(problem, axis, value)?;
        let start = Instant::now();
        let row = match run_unified(&p, &p.grid) {
            Ok((_, result)) => SweepRow {
                value,
                cost: result.cost,
                saturation: saturation(&result, &p.limits).percentage,
                runtime_s: start.elapsed().as_secs_f64(),
                status: "ok".into(),
            },
            Err(CliError::Infeasible(msg)) => SweepRow {
                value,
                cost: f64::NAN,
                saturation: f64::NAN,
                runtime_s: start.elapsed().as_secs_f64(),
                status: msg,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn cmd_sweep(opts: &RunOptions, axis: SweepAxis, values: &[f64]) -> Result<Outcome, CliError> {
    par::with_threads(opts.threads, || {
        let timer = Timer::new();
        let problem = load_problem(&opts.scenario)?;
        if values.is_empty() {
            return Err(CliError::Config("sweep needs at least one value".into()));
        }
        if opts.dry_run {
            for &v in values {
                apply_axis(&problem, axis, v)?;
            }
            return Ok(Outcome {
                summary: format!("{} sweep values valid", values.len()),
                out_dir: None,
            });
        }
        let rows = sweep(&problem, axis, values)?;
        let dir = out_dir(opts, &problem);
        let mut table = Table::new(
            ["value", "cost", "saturation", "runtime_s", "status"]
                .map(String::from)
                .to_vec(),
        );
        for r in &rows {
            table.push(vec![
                fmt_f64(r.value),
                fmt_f64(r.cost),
                fmt_f64(r.saturation),
                fmt_f64(r.runtime_s),
                r.status.clone(),
            ]);
        }
        table.write(&dir.join("sweep.csv"), &problem.hash)?;
        write_run(&dir, "sweep", &problem, timer)?;
        let costs: Vec<String> = rows.iter().map(|r| format!("{}", r.cost)).collect();
        Ok(Outcome {
            summary: format!("costs: {}", costs.join(", ")),
            out_dir: Some(dir),
        })
    })
}

pub fn cmd_export(opts: &RunOptions, rate: f64) -> Result<Outcome, CliError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(CliError::Config(
            "rate must be a positive number of Hz".into(),
        ));
    }
    par::with_threads(opts.threads, || {
        let mut timer = Timer::new();
        let problem = load_problem(&opts.scenario)?;
        if opts.dry_run {
            return Ok(Outcome {
                summary: "scenario ok".into(),
                out_dir: None,
            });
        }
        let (_, result) = run_unified(&problem, &problem.grid)?;
        timer.lap("plan");
        let rows = resample_export(&result, rate);
        let dir = out_dir(opts, &problem);
        resampled_table(&rows)
            .write(&dir.join("trajectory_resampled_linear.csv"), &problem.hash)?;
        write_run(&dir, "export", &problem, timer)?;
        Ok(Outcome {
            summary: format!(
                "{} samples at {rate} Hz (linear, not smooth), final time {} s",
                rows.len(),
                result.cost
            ),
            out_dir: Some(dir),
        })
    })
}

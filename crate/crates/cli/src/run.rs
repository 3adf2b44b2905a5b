//! Scenario runs and parameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use gradvi::penalty::penalty_mass;
use gradvi::{
    norm_l2, qvi_solve, violation_positive_part, OperatorKind, PenaltyParams, ProblemSpec, QviResult, QviStage,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ConfigError, ScenarioConfig};

pub const OUTPUT_ROOT_ENV: &str = "GRADVI_OUTPUT_ROOT";

/// `$GRADVI_OUTPUT_ROOT`, or `gradvi-output` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("gradvi-output"))
}

/// Directory a scenario writes to unless overridden on the command line.
pub fn scenario_dir(cfg: &ScenarioConfig) -> PathBuf {
    match &cfg.output.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => output_root().join(d),
        None => output_root().join(&cfg.name),
    }
}

/// Fixed 17-significant-digit format used in every CSV.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub operator: OperatorKind,
    pub constraint: String,
    pub nodes: usize,
    pub steps: usize,
    pub final_time: f64,
    pub final_l2: f64,
    pub final_max: f64,
    /// `dt sum_k int (|Lu_k| - G[u]_k)^+` at the last completed stage.
    pub violation: f64,
    pub stages: Vec<QviStage>,
}

impl RunSummary {
    pub fn last_stage(&self) -> Option<&QviStage> {
        self.stages.last()
    }
}

/// Per-time-node diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeRow {
    pub k: usize,
    pub t: f64,
    pub l2: f64,
    pub violation: f64,
    pub penalty_mass: f64,
}

pub struct Solved {
    pub spec: ProblemSpec,
    pub result: QviResult,
    pub summary: RunSummary,
    /// Parameters of the last completed stage.
    pub params: Option<PenaltyParams>,
}

/// Builds and solves without touching the filesystem.
pub fn solve(cfg: &ScenarioConfig) -> Result<Solved, ConfigError> {
    let spec = cfg.build()?;
    let result = qvi_solve(&spec, &cfg.schedule, &cfg.solver, &cfg.outer)?;
    let stages = cfg.schedule.stages()?;
    let params = result.stages.len().checked_sub(1).map(|i| stages[i]);
    let last = result.trajectory.last();
    let summary = RunSummary {
        name: cfg.name.clone(),
        status: if result.failure.is_some() {
            RunStatus::Failed
        } else {
            RunStatus::Ok
        },
        error: result.failure.clone(),
        operator: cfg.operator,
        constraint: cfg.constraint.kind_name().to_string(),
        nodes: spec.grid().len(),
        steps: spec.time().steps(),
        final_time: spec.time().final_time(),
        final_l2: norm_l2(last, spec.grid())?,
        final_max: last.max_abs(),
        violation: result.stages.last().map_or(0.0, |s| s.self_violation),
        stages: result.stages.clone(),
    };
    Ok(Solved {
        spec,
        result,
        summary,
        params,
    })
}

pub fn time_rows(solved: &Solved) -> Result<Vec<TimeRow>, gradvi::Error> {
    let spec = &solved.spec;
    let traj = &solved.result.trajectory;
    let g = &solved.result.constraint.fields;
    let time = spec.time();
    (0..=traj.steps())
        .map(|k| {
            let lu = spec.operator().apply(traj.field(k))?;
            let mass = match &solved.params {
                Some(params) => penalty_mass(&lu, &g[k], params, spec.law().p, spec.grid().cell_volume()),
                None => 0.0,
            };
            Ok(TimeRow {
                k,
                t: time.time(k),
                l2: norm_l2(traj.field(k), spec.grid())?,
                violation: violation_positive_part(&lu, &g[k], spec.grid())?,
                penalty_mass: mass,
            })
        })
        .collect()
}

/// Profiles at a few times plus the residual histories, everything the
/// plot command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub name: String,
    pub extent: Vec<f64>,
    pub nodes: Vec<usize>,
    pub profiles: Vec<Profile>,
    pub stages: Vec<StageHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHistory {
    pub eps: f64,
    pub delta: f64,
    pub step_residuals: Vec<f64>,
    pub outer_residuals: Vec<f64>,
}

pub fn bundle(solved: &Solved) -> Bundle {
    let spec = &solved.spec;
    let traj = &solved.result.trajectory;
    let n = traj.steps();
    let mut picks = vec![0, n / 2, n];
    picks.dedup();
    Bundle {
        name: solved.summary.name.clone(),
        extent: spec.grid().extent().to_vec(),
        nodes: spec.grid().nodes_per_axis().to_vec(),
        profiles: picks
            .into_iter()
            .map(|k| Profile {
                t: spec.time().time(k),
                values: traj.field(k).as_slice().to_vec(),
            })
            .collect(),
        stages: solved
            .result
            .stages
            .iter()
            .map(|s| StageHistory {
                eps: s.summary.eps,
                delta: s.summary.delta,
                step_residuals: s.summary.step_residuals.clone(),
                outer_residuals: s.outer_residuals.clone(),
            })
            .collect(),
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Writes `summary.json`, `timeseries.csv`, `bundle.json` and, when asked,
/// `fields/step_NNNNN.csv` into `dir`.
pub fn write_artifacts(solved: &Solved, dir: &Path, fields: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("summary.json"), &json(&solved.summary))?;
    let mut csv = String::from("k,t,l2_norm,violation,penalty_mass\n");
    for r in time_rows(solved)? {
        writeln!(csv, "{},{},{},{},{}", r.k, num(r.t), num(r.l2), num(r.violation), num(r.penalty_mass))?;
    }
    write(&dir.join("timeseries.csv"), &csv)?;
    write(&dir.join("bundle.json"), &json(&bundle(solved)))?;
    if fields {
        let fdir = dir.join("fields");
        fs::create_dir_all(&fdir)?;
        let grid = solved.spec.grid();
        for (k, w) in solved.result.trajectory.fields().iter().enumerate() {
            let mut out = if grid.dim() == 1 {
                String::from("x,u\n")
            } else {
                String::from("x,y,u\n")
            };
            for (i, v) in w.as_slice().iter().enumerate() {
                let x = grid.coords(i);
                if grid.dim() == 1 {
                    writeln!(out, "{},{}", num(x[0]), num(*v))?;
                } else {
                    writeln!(out, "{},{},{}", num(x[0]), num(x[1]), num(*v))?;
                }
            }
            write(&fdir.join(format!("step_{k:05}.csv")), &out)?;
        }
    }
    Ok(())
}

/// Solves `cfg` and writes its artifacts. Solver failures still produce the
/// summary; the caller reads the status.
pub fn run_scenario(cfg: &ScenarioConfig, dir: &Path) -> anyhow::Result<RunSummary> {
    let solved = solve(cfg)?;
    write_artifacts(&solved, dir, cfg.output.fields)?;
    Ok(solved.summary)
}

pub const SWEEP_HEADER: &str = "value,status,eps,delta,violation,self_violation,penalty_mass,lp_norm,scaled_lp_norm,final_l2,newton_iterations,halvings,outer_iterations";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn csv_line(&self) -> String {
        let status = if self.ok() { "ok" } else { "failed" };
        let stage = self.summary.as_ref().and_then(|s| s.last_stage());
        let nan = || num(f64::NAN);
        let f = |get: fn(&QviStage) -> f64| stage.map_or_else(nan, |s| num(get(s)));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            num(self.value),
            status,
            f(|s| s.summary.eps),
            f(|s| s.summary.delta),
            f(|s| s.summary.violation),
            f(|s| s.self_violation),
            f(|s| s.summary.penalty_mass),
            f(|s| s.summary.lp_norm),
            f(|s| s.summary.scaled_lp_norm),
            f(|s| s.summary.final_l2),
            stage.map_or(0, |s| s.summary.newton_iterations),
            stage.map_or(0, |s| s.summary.halvings),
            stage.map_or(0, |s| s.outer_residuals.len()),
        )
    }
}

/// Follows a dotted path such as `material.p` or `schedule.eps.0`.
fn lookup<'a>(value: &'a mut Value, path: &str) -> Option<&'a mut Value> {
    let mut cur = value;
    for part in path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part)?,
            Value::Array(items) => items.get_mut(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

fn numeric(v: &Value) -> bool {
    match v {
        Value::Number(_) => true,
        Value::Array(items) => !items.is_empty() && items.iter().all(Value::is_number),
        _ => false,
    }
}

/// `base` with the parameter at `axis` replaced by `value`. A list-valued
/// parameter (such as `schedule.eps`) becomes the one-element list `[value]`.
pub fn with_axis(base: &ScenarioConfig, axis: &str, value: f64) -> anyhow::Result<ScenarioConfig> {
    let mut tree = serde_json::to_value(base)?;
    let Some(slot) = lookup(&mut tree, axis).filter(|v| numeric(v)) else {
        bail!("sweep axis `{axis}` does not name a numeric parameter");
    };
    let n = serde_json::Number::from_f64(value).with_context(|| format!("sweep value {value} is not finite"))?;
    *slot = if slot.is_array() {
        Value::Array(vec![Value::Number(n)])
    } else {
        Value::Number(n)
    };
    Ok(ScenarioConfig::from_value(tree)?)
}

/// One solve per value, rows in the order given.
pub fn run_sweep(base: &ScenarioConfig, axis: &str, values: &[f64], threads: usize) -> anyhow::Result<Vec<SweepRow>> {
    let mut tree = serde_json::to_value(base)?;
    if !lookup(&mut tree, axis).is_some_and(|v| numeric(v)) {
        bail!("sweep axis `{axis}` does not name a numeric parameter");
    }
    let row = |&value: &f64| -> SweepRow {
        let outcome = with_axis(base, axis, value).and_then(|cfg| Ok(solve(&cfg)?));
        match outcome {
            Ok(solved) => SweepRow {
                value,
                error: solved.summary.error.clone(),
                summary: Some(solved.summary),
            },
            Err(e) => SweepRow {
                value,
                summary: None,
                error: Some(format!("{e:#}")),
            },
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(|| values.par_iter().map(row).collect()))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Writes `sweep.csv` and, if any row failed, `sweep_errors.txt`.
pub fn write_sweep(rows: &[SweepRow], dir: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("sweep.csv");
    write(&path, &sweep_csv(rows))?;
    let errors: String = rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {}\n", num(r.value), e)))
        .collect();
    let epath = dir.join("sweep_errors.txt");
    if errors.is_empty() {
        let _ = fs::remove_file(&epath);
    } else {
        write(&epath, &errors)?;
    }
    Ok(path)
}

//! Bound reports and CSV/JSON writers.
//!
//! All CSV floats go through the fixed 17-significant-digit formatter so
//! re-running an identical config reproduces byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use dpp_core::convex::{jensen_check, ConvexProgram, ConvexTrace};
use dpp_core::format::fmt_f64;
use dpp_core::graph::{ConsensusSummary, DistributedTrace, GraphProblem};
use dpp_core::oracle::{Optimizer, OracleResult};
use dpp_core::queue::queue_norm_bound;
use dpp_core::stochastic::{time_average, StochasticProblem, StochasticTrace};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The required input (a certified multiplier) is unavailable; never
    /// reported as a pass.
    Skipped,
}

impl Status {
    pub fn of(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CheckpointReport {
    pub t: u64,
    pub avg_y0: f64,
    /// Oracle optimum; absent when the instance is above the oracle's
    /// desk-scale guards (all oracle-based checks are then skipped).
    pub y0_opt: Option<f64>,
    pub objective_gap: Option<f64>,
    /// Theoretical objective cap B/V above the optimum.
    pub cap_objective: f64,
    pub objective_status: Status,
    /// Per-constraint violation of the time average: avg_y_k - c_k.
    pub violations: Vec<f64>,
    /// Cap (V ||mu|| + sqrt(V^2 ||mu||^2 + 2 B t)) / t, when mu is
    /// certified.
    pub cap_violation: Option<f64>,
    pub violation_status: Vec<Status>,
    pub queue_norm: f64,
    pub queue_norm_cap: Option<f64>,
    pub queue_norm_status: Status,
    /// f(xbar) - avg_y0 for deterministic programs (must be <= 0 + tol).
    pub jensen_gap: Option<f64>,
    pub jensen_status: Status,
    /// 3 sigma / sqrt(seeds) allowance added on stochastic checks.
    pub monte_carlo_margin: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleSummary {
    pub optimum: f64,
    pub mu: Option<Vec<f64>>,
    pub mu_norm: Option<f64>,
    pub margin: Option<f64>,
    pub resolution: f64,
    pub error_bar: f64,
}

impl OracleSummary {
    pub fn from_result(result: &OracleResult) -> Self {
        OracleSummary {
            optimum: result.optimum,
            mu: result.mu.clone(),
            mu_norm: result
                .mu
                .as_ref()
                .map(|mu| mu.iter().map(|m| m * m).sum::<f64>().sqrt()),
            margin: result.margin,
            resolution: result.resolution,
            error_bar: result.error_bar,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub kind: String,
    pub epsilon: f64,
    pub v: f64,
    pub b: f64,
    pub t_max: u64,
    pub seeds: Vec<u64>,
    pub oracle: Option<OracleSummary>,
    pub checkpoints: Vec<CheckpointReport>,
    pub overall_pass: bool,
}

impl RunReport {
    pub fn compute_overall(&mut self) {
        self.overall_pass = self.checkpoints.iter().all(|cp| {
            cp.objective_status != Status::Fail
                && cp.queue_norm_status != Status::Fail
                && cp.jensen_status != Status::Fail
                && cp.violation_status.iter().all(|s| *s != Status::Fail)
        });
    }
}

const ABS_TOL: f64 = 1e-9;
const NORM_REL_TOL: f64 = 1e-6;

fn violation_cap(v: f64, mu_norm: f64, b: f64, t: u64) -> f64 {
    queue_norm_bound(v, mu_norm, b, t).expect("valid bound inputs") / t as f64
}

/// Bound report for a deterministic (convex or LP) trace.
#[allow(clippy::too_many_arguments)]
pub fn deterministic_report(
    kind: &str,
    program: &ConvexProgram,
    trace: &ConvexTrace,
    b: f64,
    epsilon: f64,
    oracle: Option<&OracleResult>,
    t_max: u64,
    checkpoints: &[u64],
) -> Result<RunReport, CliError> {
    let v = 1.0 / epsilon;
    let slack = oracle.map_or(0.0, |o| o.error_bar) + ABS_TOL;
    let mu_norm = oracle
        .and_then(|o| o.mu.as_ref())
        .map(|mu| mu.iter().map(|m| m * m).sum::<f64>().sqrt());
    let mut cps = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let tu = t as usize;
        let avg_y0 = trace
            .time_average_y(tu, 0)
            .map_err(|e| CliError::Engine(e.to_string()))?;
        let gap = oracle.map(|o| avg_y0 - o.optimum);
        let cap_objective = b / v;
        let mut violations = Vec::with_capacity(trace.k);
        for k in 0..trace.k {
            let avg = trace
                .time_average_y(tu, k + 1)
                .map_err(|e| CliError::Engine(e.to_string()))?;
            violations.push(avg - program.c[k]);
        }
        let slot = &trace.slots[tu - 1];
        let queue_norm = slot
            .q_after
            .iter()
            .chain(&slot.z_after)
            .map(|q| q * q)
            .sum::<f64>()
            .sqrt();
        let (cap_violation, queue_norm_cap) = match mu_norm {
            Some(m) => {
                let bound = queue_norm_bound(v, m, b, t).expect("valid bound inputs");
                (Some(bound / t as f64), Some(bound))
            }
            None => (None, None),
        };
        let violation_status = violations
            .iter()
            .map(|&viol| match cap_violation {
                Some(cap) => Status::of(viol <= cap + slack),
                None => Status::Skipped,
            })
            .collect();
        let queue_norm_status = match queue_norm_cap {
            Some(cap) => Status::of(queue_norm <= cap * (1.0 + NORM_REL_TOL) + ABS_TOL),
            None => Status::Skipped,
        };
        let jensen =
            jensen_check(program, trace, tu).map_err(|e| CliError::Engine(e.to_string()))?;
        let jensen_gap = jensen.f_avg_x - jensen.avg_y0;
        cps.push(CheckpointReport {
            t,
            avg_y0,
            y0_opt: oracle.map(|o| o.optimum),
            objective_gap: gap,
            cap_objective,
            objective_status: match gap {
                Some(gap) => Status::of(gap <= cap_objective + slack),
                None => Status::Skipped,
            },
            violations,
            cap_violation,
            violation_status,
            queue_norm,
            queue_norm_cap,
            queue_norm_status,
            jensen_gap: Some(jensen_gap),
            jensen_status: Status::of(jensen.max_violation <= ABS_TOL),
            monte_carlo_margin: 0.0,
        });
    }
    let mut report = RunReport {
        kind: kind.to_string(),
        epsilon,
        v,
        b,
        t_max,
        seeds: vec![],
        oracle: oracle.map(OracleSummary::from_result),
        checkpoints: cps,
        overall_pass: false,
    };
    report.compute_overall();
    Ok(report)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Bound report for a set of stochastic traces (one per seed). Checks are
/// against seed means with a 3-sigma Monte-Carlo allowance, since the
/// guarantees bound expectations.
pub fn stochastic_report(
    problem: &StochasticProblem,
    traces: &[(u64, StochasticTrace)],
    b: f64,
    epsilon: f64,
    oracle: Option<&OracleResult>,
    t_max: u64,
    checkpoints: &[u64],
) -> Result<RunReport, CliError> {
    let v = 1.0 / epsilon;
    let slack = oracle.map_or(0.0, |o| o.error_bar) + ABS_TOL;
    let n_seeds = traces.len() as f64;
    let mu_norm = oracle
        .and_then(|o| o.mu.as_ref())
        .map(|mu| mu.iter().map(|m| m * m).sum::<f64>().sqrt());
    let mut cps = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let tu = t as usize;
        let per_seed = |k: usize| -> Result<Vec<f64>, CliError> {
            traces
                .iter()
                .map(|(_, tr)| time_average(tr, tu, k).map_err(|e| CliError::Engine(e.to_string())))
                .collect()
        };
        let (avg_y0, std_y0) = mean_std(&per_seed(0)?);
        let mc_margin_y0 = 3.0 * std_y0 / n_seeds.sqrt();
        let gap = oracle.map(|o| avg_y0 - o.optimum);
        let cap_objective = b / v;
        let mut violations = Vec::with_capacity(problem.k);
        let mut violation_status = Vec::with_capacity(problem.k);
        let cap_violation = mu_norm.map(|m| violation_cap(v, m, b, t));
        let mut max_mc = mc_margin_y0;
        for k in 0..problem.k {
            let (mean_k, std_k) = mean_std(&per_seed(k + 1)?);
            let mc = 3.0 * std_k / n_seeds.sqrt();
            max_mc = max_mc.max(mc);
            let viol = mean_k - problem.c[k];
            violations.push(viol);
            violation_status.push(match cap_violation {
                Some(cap) => Status::of(viol <= cap + mc + slack),
                None => Status::Skipped,
            });
        }
        let norms: Vec<f64> = traces
            .iter()
            .map(|(_, tr)| {
                tr.slots[tu - 1]
                    .q_after
                    .iter()
                    .map(|q| q * q)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let (queue_norm, std_norm) = mean_std(&norms);
        let mc_norm = 3.0 * std_norm / n_seeds.sqrt();
        let queue_norm_cap = mu_norm.map(|m| queue_norm_bound(v, m, b, t).expect("valid"));
        let queue_norm_status = match queue_norm_cap {
            Some(cap) => Status::of(queue_norm <= cap * (1.0 + NORM_REL_TOL) + mc_norm + ABS_TOL),
            None => Status::Skipped,
        };
        cps.push(CheckpointReport {
            t,
            avg_y0,
            y0_opt: oracle.map(|o| o.optimum),
            objective_gap: gap,
            cap_objective,
            objective_status: match gap {
                Some(gap) => Status::of(gap <= cap_objective + mc_margin_y0 + slack),
                None => Status::Skipped,
            },
            violations,
            cap_violation,
            violation_status,
            queue_norm,
            queue_norm_cap,
            queue_norm_status,
            jensen_gap: None,
            jensen_status: Status::Skipped,
            monte_carlo_margin: max_mc,
        });
    }
    let mut report = RunReport {
        kind: "stochastic".to_string(),
        epsilon,
        v,
        b,
        t_max,
        seeds: traces.iter().map(|(s, _)| *s).collect(),
        oracle: oracle.map(OracleSummary::from_result),
        checkpoints: cps,
        overall_pass: false,
    };
    report.compute_overall();
    Ok(report)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Engine(format!("cannot create {}: {e}", path.display())))?;
    for line in lines {
        writeln!(file, "{line}")
            .map_err(|e| CliError::Engine(format!("write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Stochastic trace CSV: `t,event,option,y0,y1..,Q1..,avg_y0,avg_y1..`.
pub fn write_stochastic_trace_csv(path: &Path, trace: &StochasticTrace) -> Result<(), CliError> {
    let k = trace.k;
    let mut header = String::from("t,event,option,y0");
    for j in 1..=k {
        header.push_str(&format!(",y{j}"));
    }
    for j in 1..=k {
        header.push_str(&format!(",Q{j}"));
    }
    header.push_str(",avg_y0");
    for j in 1..=k {
        header.push_str(&format!(",avg_y{j}"));
    }
    let mut lines = vec![header];
    for (i, slot) in trace.slots.iter().enumerate() {
        let t = i + 1;
        let mut row = format!("{t},{},{}", slot.event, slot.option);
        for j in 0..=k {
            row.push_str(&format!(",{}", fmt_f64(slot.y[j])));
        }
        for j in 0..k {
            row.push_str(&format!(",{}", fmt_f64(slot.q_after[j])));
        }
        for j in 0..=k {
            row.push_str(&format!(",{}", fmt_f64(slot.cum_y[j] / t as f64)));
        }
        lines.push(row);
    }
    write_lines(path, &lines)
}

/// Deterministic trace CSV: `t,x1..,y0,y1..,Q1..,Z1..,avg_y0,avg_y1..`.
pub fn write_convex_trace_csv(path: &Path, trace: &ConvexTrace) -> Result<(), CliError> {
    let (n, k, m) = (trace.n, trace.k, trace.m);
    let mut header = String::from("t");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",y0");
    for j in 1..=k {
        header.push_str(&format!(",y{j}"));
    }
    for j in 1..=k {
        header.push_str(&format!(",Q{j}"));
    }
    for j in 1..=m {
        header.push_str(&format!(",Z{j}"));
    }
    header.push_str(",avg_y0");
    for j in 1..=k {
        header.push_str(&format!(",avg_y{j}"));
    }
    let mut lines = vec![header];
    for (i, slot) in trace.slots.iter().enumerate() {
        let t = i + 1;
        let mut row = format!("{t}");
        for v in &slot.x {
            row.push_str(&format!(",{}", fmt_f64(*v)));
        }
        for j in 0..=k {
            row.push_str(&format!(",{}", fmt_f64(slot.y[j])));
        }
        for q in &slot.q_after {
            row.push_str(&format!(",{}", fmt_f64(*q)));
        }
        for z in &slot.z_after {
            row.push_str(&format!(",{}", fmt_f64(*z)));
        }
        for j in 0..=k {
            row.push_str(&format!(",{}", fmt_f64(slot.cum_y[j] / t as f64)));
        }
        lines.push(row);
    }
    write_lines(path, &lines)
}

/// Per-node distributed trace CSV:
/// `t,x1..,theta1..,f,g,Q,avg_theta1..`.
pub fn write_node_trace_csv(
    path: &Path,
    trace: &dpp_core::graph::NodeTrace,
) -> Result<(), CliError> {
    let mut header = String::from("t");
    for i in 1..=trace.local_dim {
        header.push_str(&format!(",x{i}"));
    }
    for i in 1..=trace.theta_dim {
        header.push_str(&format!(",theta{i}"));
    }
    header.push_str(",f,g,Q");
    for i in 1..=trace.theta_dim {
        header.push_str(&format!(",avg_theta{i}"));
    }
    let mut lines = vec![header];
    for (i, slot) in trace.slots.iter().enumerate() {
        let t = i + 1;
        let mut row = format!("{t}");
        for v in &slot.x {
            row.push_str(&format!(",{}", fmt_f64(*v)));
        }
        for v in &slot.theta {
            row.push_str(&format!(",{}", fmt_f64(*v)));
        }
        row.push_str(&format!(
            ",{},{},{}",
            fmt_f64(slot.f_val),
            fmt_f64(slot.g_val),
            fmt_f64(slot.q_after)
        ));
        for v in &slot.cum_theta {
            row.push_str(&format!(",{}", fmt_f64(*v / t as f64)));
        }
        lines.push(row);
    }
    write_lines(path, &lines)
}

/// Consensus summary CSV:
/// `t,max_pairwise_theta_gap,sum_objective,max_constraint_violation`.
pub fn write_consensus_csv(
    path: &Path,
    problem: &GraphProblem,
    trace: &DistributedTrace,
) -> Result<(), CliError> {
    let mut lines = vec![String::from(
        "t,max_pairwise_theta_gap,sum_objective,max_constraint_violation",
    )];
    for t in 1..=trace.len() {
        let summary: ConsensusSummary = dpp_core::graph::consensus_summary(problem, trace, t)
            .map_err(|e| CliError::Engine(e.to_string()))?;
        lines.push(format!(
            "{t},{},{},{}",
            fmt_f64(summary.max_pairwise_theta_gap),
            fmt_f64(summary.sum_objective),
            fmt_f64(summary.max_constraint_violation)
        ));
    }
    write_lines(path, &lines)
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub t: u64,
    pub obj_gap: f64,
    pub max_violation: f64,
    pub cap_obj: f64,
    pub cap_violation: Option<f64>,
    pub pass: bool,
}

/// Sweep summary CSV:
/// `epsilon,t,obj_gap,max_violation,cap_obj,cap_violation,pass`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut lines = vec![String::from(
        "epsilon,t,obj_gap,max_violation,cap_obj,cap_violation,pass",
    )];
    for row in rows {
        lines.push(format!(
            "{},{},{},{},{},{},{}",
            fmt_f64(row.epsilon),
            row.t,
            fmt_f64(row.obj_gap),
            fmt_f64(row.max_violation),
            fmt_f64(row.cap_obj),
            row.cap_violation
                .map_or_else(|| "skipped".to_string(), fmt_f64),
            if row.pass { "true" } else { "false" }
        ));
    }
    write_lines(path, &lines)
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerJson {
    Point(Vec<f64>),
    Policy(Vec<Vec<f64>>),
}

#[derive(Debug, Serialize)]
pub struct OracleJson {
    pub optimum: f64,
    pub optimizer: OptimizerJson,
    pub mu: Option<Vec<f64>>,
    pub margin: Option<f64>,
    pub resolution: f64,
    pub error_bar: f64,
}

impl OracleJson {
    pub fn from_result(result: &OracleResult) -> Self {
        OracleJson {
            optimum: result.optimum,
            optimizer: match &result.optimizer {
                Optimizer::Point(x) => OptimizerJson::Point(x.clone()),
                Optimizer::Policy(p) => OptimizerJson::Policy(p.clone()),
            },
            mu: result.mu.clone(),
            margin: result.margin,
            resolution: result.resolution,
            error_bar: result.error_bar,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Engine(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::Engine(format!("write {}: {e}", path.display())))
}

//! Brute-force ground truth for desk-scale instances.
//!
//! The oracle is deliberately independent of the drift-plus-penalty engines:
//! deterministic programs are solved by exhaustive grid search over the box,
//! stochastic problems by exhaustive search over stationary randomized
//! policies (a probability simplex per event), and Lagrange multipliers by a
//! grid search maximizing the exact dual value. Instances above the guards
//! are refused rather than approximated.

use crate::convex::{ConvexProgram, FeasibleSet, SeparableQuadratic};
use crate::error::{Error, Result};
use crate::stochastic::StochasticProblem;

/// Certified optimizer: a point for deterministic programs, a per-event
/// probability table for stochastic problems.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Point(Vec<f64>),
    Policy(Vec<Vec<f64>>),
}

/// Result of an oracle solve.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub optimum: f64,
    pub optimizer: Optimizer,
    /// Multiplier estimate (inequality entries first, then equality), when
    /// certified.
    pub mu: Option<Vec<f64>>,
    /// Dual value minus optimum for the returned multiplier.
    pub margin: Option<f64>,
    pub resolution: f64,
    pub error_bar: f64,
}

/// Multiplier search outcome. `certified` means the dual value reaches the
/// optimum within 1e-6, i.e. the Lagrange inequality holds everywhere.
#[derive(Debug, Clone)]
pub struct MultiplierEstimate {
    pub mu: Vec<f64>,
    pub margin: f64,
    pub certified: bool,
}

const CERTIFY_TOL: f64 = 1e-6;
const FEAS_TOL: f64 = 1e-9;
const MAX_GRID_POINTS: f64 = 2e8;
const MAX_POLICY_COMBOS: f64 = 2e9;

/// Default grid step by dimension: fine for 1-2 variables, coarser above.
pub fn default_resolution(dim: usize) -> f64 {
    if dim <= 2 {
        1e-3
    } else {
        1e-2
    }
}

/// Default simplex step for policy search.
pub const DEFAULT_SIMPLEX_RESOLUTION: f64 = 1.0 / 50.0;

fn box_of(set: &FeasibleSet) -> Result<(&[f64], &[f64])> {
    match set {
        FeasibleSet::Box { lower, upper } => Ok((lower, upper)),
        _ => Err(Error::OracleRefused(
            "grid oracle requires a box feasible set".into(),
        )),
    }
}

fn sq_of(f: &dyn crate::convex::ConvexFn, what: &str) -> Result<SeparableQuadratic> {
    f.separable_quadratic().ok_or_else(|| {
        Error::OracleRefused(format!(
            "grid oracle requires separable-quadratic functions, {what} is opaque"
        ))
    })
}

/// Sum over coordinates of the largest gradient magnitude on the box: a
/// per-unit-step Lipschitz constant for grid error bars.
fn l1_over_box(sq: &SeparableQuadratic, lower: &[f64], upper: &[f64]) -> f64 {
    (0..sq.dim())
        .map(|i| {
            let gl = 2.0 * sq.quad[i] * lower[i] + sq.lin[i];
            let gu = 2.0 * sq.quad[i] * upper[i] + sq.lin[i];
            gl.abs().max(gu.abs())
        })
        .sum()
}

/// Row-major scan over a per-dimension value grid; strict improvement keeps
/// the lexicographically smallest index on ties.
fn scan_grid<F: FnMut(&[f64])>(values: &[Vec<f64>], mut visit: F) {
    let dims = values.len();
    if dims == 0 {
        visit(&[]);
        return;
    }
    let mut idx = vec![0usize; dims];
    let mut point: Vec<f64> = idx.iter().enumerate().map(|(d, &i)| values[d][i]).collect();
    loop {
        visit(&point);
        let mut d = dims;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < values[d].len() {
                point[d] = values[d][idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = values[d][0];
        }
    }
}

fn linspace(lo: f64, hi: f64, max_step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let steps = ((hi - lo) / max_step).ceil().max(1.0) as usize;
    (0..=steps)
        .map(|j| lo + (hi - lo) * j as f64 / steps as f64)
        .collect()
}

struct StaticInstance {
    f: SeparableQuadratic,
    g: Vec<SeparableQuadratic>,
    c: Vec<f64>,
    w: Vec<SeparableQuadratic>,
    d: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    l1_f: f64,
    l1_w: Vec<f64>,
}

impl StaticInstance {
    fn build(program: &ConvexProgram) -> Result<Self> {
        program.validate()?;
        let (lower, upper) = box_of(&program.set)?;
        if lower.len() > 4 || lower.is_empty() {
            return Err(Error::OracleRefused(format!(
                "grid oracle handles 1..=4 variables, got {}",
                lower.len()
            )));
        }
        let f = sq_of(program.f.as_ref(), "the objective")?;
        let g = program
            .g
            .iter()
            .enumerate()
            .map(|(k, g)| sq_of(g.as_ref(), &format!("constraint {k}")))
            .collect::<Result<Vec<_>>>()?;
        let w: Vec<SeparableQuadratic> = program
            .w
            .iter()
            .map(|w| sq_of(w, "an equality constraint"))
            .collect::<Result<Vec<_>>>()?;
        let l1_f = l1_over_box(&f, lower, upper);
        let l1_w = w.iter().map(|w| l1_over_box(w, lower, upper)).collect();
        Ok(StaticInstance {
            f,
            g,
            c: program.c.clone(),
            w,
            d: program.d.clone(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            l1_f,
            l1_w,
        })
    }

    fn feasible(&self, x: &[f64], eq_slack: f64) -> bool {
        for (k, g) in self.g.iter().enumerate() {
            if g.eval(x) > self.c[k] + FEAS_TOL {
                return false;
            }
        }
        for (i, w) in self.w.iter().enumerate() {
            if (w.eval(x) - self.d[i]).abs() > self.l1_w[i] * eq_slack + FEAS_TOL {
                return false;
            }
        }
        true
    }

    /// Best feasible point over the given per-dimension grid.
    fn scan(&self, values: &[Vec<f64>], eq_slack: f64) -> Option<(f64, Vec<f64>)> {
        let mut best: Option<(f64, Vec<f64>)> = None;
        scan_grid(values, |x| {
            if !self.feasible(x, eq_slack) {
                return;
            }
            let val = self.f.eval(x);
            if best.as_ref().is_none_or(|(b, _)| val < *b) {
                best = Some((val, x.to_vec()));
            }
        });
        best
    }
}

/// Exhaustive grid search over a box, with one refinement pass around the
/// best cell. The optimum is certified within `resolution * L1(f)` where
/// `L1(f)` sums the largest per-coordinate gradient magnitudes.
pub fn static_optimum_grid(program: &ConvexProgram, resolution: f64) -> Result<OracleResult> {
    if resolution <= 0.0 || !resolution.is_finite() {
        return Err(Error::Domain(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let inst = StaticInstance::build(program)?;
    let values: Vec<Vec<f64>> = (0..inst.lower.len())
        .map(|i| linspace(inst.lower[i], inst.upper[i], resolution))
        .collect();
    let total: f64 = values.iter().map(|v| v.len() as f64).product();
    if total > MAX_GRID_POINTS {
        return Err(Error::OracleRefused(format!(
            "grid has {total:.3e} points, above the {MAX_GRID_POINTS:.0e} cap; coarsen the resolution"
        )));
    }
    let (mut best_val, mut best_x) = inst.scan(&values, resolution).ok_or_else(|| {
        Error::Domain(format!(
            "no feasible point found at resolution {resolution} (not a proof of infeasibility)"
        ))
    })?;

    // Refinement: rescan the +-1-cell neighborhood of the winner at a tenth
    // of the step.
    let fine = resolution / 10.0;
    let refined: Vec<Vec<f64>> = (0..inst.lower.len())
        .map(|i| {
            linspace(
                (best_x[i] - resolution).max(inst.lower[i]),
                (best_x[i] + resolution).min(inst.upper[i]),
                fine,
            )
        })
        .collect();
    if let Some((val, x)) = inst.scan(&refined, resolution) {
        if val < best_val {
            best_val = val;
            best_x = x;
        }
    }

    Ok(OracleResult {
        optimum: best_val,
        optimizer: Optimizer::Point(best_x),
        mu: None,
        margin: None,
        resolution,
        error_bar: resolution * inst.l1_f,
    })
}

/// All length-`parts` nonnegative integer vectors summing to `total`,
/// in lexicographic order.
fn compositions(parts: usize, total: u32) -> Vec<Vec<u32>> {
    fn recurse(parts: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=total {
            prefix.push(v);
            recurse(parts - 1, total - v, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    recurse(parts, total, &mut prefix, &mut out);
    out
}

/// Like `compositions` but restricted to a per-part inclusive window.
fn compositions_windowed(bounds: &[(u32, u32)], total: u32) -> Vec<Vec<u32>> {
    fn recurse(bounds: &[(u32, u32)], total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if bounds.len() == 1 {
            let (lo, hi) = bounds[0];
            if total >= lo && total <= hi {
                prefix.push(total);
                out.push(prefix.clone());
                prefix.pop();
            }
            return;
        }
        let (lo, hi) = bounds[0];
        let rest_max: u32 = bounds[1..].iter().map(|&(_, h)| h).sum();
        for v in lo..=hi.min(total) {
            if total - v > rest_max {
                continue;
            }
            prefix.push(v);
            recurse(&bounds[1..], total - v, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    recurse(bounds, total, &mut prefix, &mut out);
    out
}

/// Per-event candidate mixtures: the composition (option weights) and the
/// event's weighted contribution `p(event)/den * sum_a weight_a * y(event,a)`
/// to the expectation vector.
fn event_candidates(
    problem: &StochasticProblem,
    event: usize,
    comps: Vec<Vec<u32>>,
    den: u32,
) -> Vec<(Vec<u32>, Vec<f64>)> {
    let p = problem.events.probabilities[event];
    let opts = &problem.options.options[event];
    let k1 = problem.k + 1;
    comps
        .into_iter()
        .map(|comp| {
            let mut contrib = vec![0.0; k1];
            for (a, &weight) in comp.iter().enumerate() {
                if weight == 0 {
                    continue;
                }
                let scale = p * weight as f64 / den as f64;
                for j in 0..k1 {
                    contrib[j] += scale * opts[a][j];
                }
            }
            (comp, contrib)
        })
        .collect()
}

fn best_policy(
    problem: &StochasticProblem,
    candidates: &[Vec<(Vec<u32>, Vec<f64>)>],
) -> Option<(f64, Vec<usize>)> {
    let events = candidates.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut idx = vec![0usize; events];
    let mut partial = vec![vec![0.0; problem.k + 1]; events + 1];
    // Odometer with running prefix sums of the contribution vectors.
    loop {
        for e in 0..events {
            let contrib = &candidates[e][idx[e]].1;
            for j in 0..problem.k + 1 {
                partial[e + 1][j] = partial[e][j] + contrib[j];
            }
        }
        let total = &partial[events];
        let feasible = (0..problem.k).all(|j| total[j + 1] <= problem.c[j] + FEAS_TOL);
        if feasible && best.as_ref().is_none_or(|(b, _)| total[0] < *b) {
            best = Some((total[0], idx.clone()));
        }
        let mut e = events;
        loop {
            if e == 0 {
                return best;
            }
            e -= 1;
            idx[e] += 1;
            if idx[e] < candidates[e].len() {
                break;
            }
            idx[e] = 0;
        }
    }
}

/// Exhaustive search over stationary randomized policies: one probability
/// vector per event, on a simplex grid of step `resolution`, keeping the
/// best feasible expectation vector, with one tenfold refinement pass.
pub fn stochastic_optimum(problem: &StochasticProblem, resolution: f64) -> Result<OracleResult> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Domain(format!(
            "resolution must be in (0, 1], got {resolution}"
        )));
    }
    let den = (1.0 / resolution).round().max(1.0) as u32;
    let total_options: usize = problem.options.options.iter().map(|o| o.len()).sum();
    if total_options > 12 {
        return Err(Error::OracleRefused(format!(
            "policy oracle handles at most 12 options across all events, got {total_options}"
        )));
    }
    let events = problem.events.events.len();
    let candidates: Vec<Vec<(Vec<u32>, Vec<f64>)>> = (0..events)
        .map(|e| {
            let comps = compositions(problem.options.options[e].len(), den);
            event_candidates(problem, e, comps, den)
        })
        .collect();
    let combos: f64 = candidates.iter().map(|c| c.len() as f64).product();
    if combos > MAX_POLICY_COMBOS {
        return Err(Error::OracleRefused(format!(
            "policy grid has {combos:.3e} combinations, above the {MAX_POLICY_COMBOS:.0e} cap"
        )));
    }

    let (mut best_val, best_idx) = best_policy(problem, &candidates).ok_or_else(|| {
        Error::Domain(format!(
            "no feasible policy found at resolution {resolution} (not a proof of infeasibility)"
        ))
    })?;
    let mut best_comps: Vec<Vec<u32>> = (0..events)
        .map(|e| candidates[e][best_idx[e]].0.clone())
        .collect();

    // Refinement: tenfold finer denominator, each weight within one coarse
    // step of the winner.
    let fine_den = den * 10;
    let fine_candidates: Vec<Vec<(Vec<u32>, Vec<f64>)>> = (0..events)
        .map(|e| {
            let bounds: Vec<(u32, u32)> = best_comps[e]
                .iter()
                .map(|&w| {
                    let center = w * 10;
                    (center.saturating_sub(10), (center + 10).min(fine_den))
                })
                .collect();
            let comps = compositions_windowed(&bounds, fine_den);
            event_candidates(problem, e, comps, fine_den)
        })
        .collect();
    if fine_candidates.iter().all(|c| !c.is_empty()) {
        if let Some((val, idx)) = best_policy(problem, &fine_candidates) {
            if val < best_val {
                best_val = val;
                best_comps = (0..events)
                    .map(|e| fine_candidates[e][idx[e]].0.clone())
                    .collect();
                let policy = best_comps
                    .iter()
                    .map(|comp| comp.iter().map(|&w| w as f64 / fine_den as f64).collect())
                    .collect();
                return Ok(finish_stochastic(problem, best_val, policy, resolution));
            }
        }
    }

    let policy = best_comps
        .iter()
        .map(|comp| comp.iter().map(|&w| w as f64 / den as f64).collect())
        .collect();
    Ok(finish_stochastic(problem, best_val, policy, resolution))
}

fn finish_stochastic(
    problem: &StochasticProblem,
    optimum: f64,
    policy: Vec<Vec<f64>>,
    resolution: f64,
) -> OracleResult {
    // Error bar: one grid step of mixing weight moved across each event's
    // full objective range.
    let error_bar: f64 = problem
        .options
        .options
        .iter()
        .enumerate()
        .map(|(e, opts)| {
            let y0: Vec<f64> = opts.iter().map(|y| y[0]).collect();
            let range = y0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - y0.iter().cloned().fold(f64::INFINITY, f64::min);
            problem.events.probabilities[e] * range * resolution
        })
        .sum();
    OracleResult {
        optimum,
        optimizer: Optimizer::Policy(policy),
        mu: None,
        margin: None,
        resolution,
        error_bar,
    }
}

/// Exact dual value of a deterministic program at the multiplier
/// `(mu_ineq, nu_eq)`: the Lagrangian is separable-quadratic, so its box
/// minimum is closed-form.
fn dual_value_static(inst: &StaticInstance, mu: &[f64]) -> f64 {
    let mut lagrangian = inst.f.clone();
    let mut shift = 0.0;
    for (k, g) in inst.g.iter().enumerate() {
        lagrangian.add_scaled(mu[k], g);
        shift -= mu[k] * inst.c[k];
    }
    for (i, w) in inst.w.iter().enumerate() {
        let nu = mu[inst.g.len() + i];
        lagrangian.add_scaled(nu, w);
        shift -= nu * inst.d[i];
    }
    let x = lagrangian.minimize_over_box(&inst.lower, &inst.upper);
    lagrangian.eval(&x) + shift
}

/// Exact dual value of a stochastic problem: the Lagrangian is linear in the
/// policy, so the minimum is attained by picking the best option per event.
fn dual_value_stochastic(problem: &StochasticProblem, mu: &[f64]) -> f64 {
    let mut value = 0.0;
    for (e, opts) in problem.options.options.iter().enumerate() {
        let best = opts
            .iter()
            .map(|y| {
                let mut s = y[0];
                for k in 0..problem.k {
                    s += mu[k] * y[k + 1];
                }
                s
            })
            .fold(f64::INFINITY, f64::min);
        value += problem.events.probabilities[e] * best;
    }
    for k in 0..problem.k {
        value -= mu[k] * problem.c[k];
    }
    value
}

/// Grid search for the multiplier maximizing the dual, with two refinement
/// passes. `signed[d]` marks dimensions allowed to go negative (equality
/// constraints). `mu_max[d]` bounds the search per dimension.
fn multiplier_grid_search<D: Fn(&[f64]) -> f64>(
    dual: D,
    mu_max: &[f64],
    signed: &[bool],
    optimum: f64,
) -> MultiplierEstimate {
    let dims = mu_max.len();
    if dims == 0 {
        return MultiplierEstimate {
            mu: vec![],
            margin: dual(&[]) - optimum,
            certified: dual(&[]) - optimum >= -CERTIFY_TOL,
        };
    }
    let mut center: Vec<f64> = vec![0.0; dims];
    let mut half_width: Vec<f64> = mu_max.to_vec();
    let mut best_mu = vec![0.0; dims];
    let mut best_dual = f64::NEG_INFINITY;
    for pass in 0..3 {
        let values: Vec<Vec<f64>> = (0..dims)
            .map(|d| {
                let lo = if signed[d] {
                    center[d] - half_width[d]
                } else {
                    (center[d] - half_width[d]).max(0.0)
                };
                let hi = center[d] + half_width[d];
                let steps = if pass == 0 {
                    half_width[d] / 50.0
                } else {
                    half_width[d] / 10.0
                };
                linspace(lo, hi, steps.max(1e-12))
            })
            .collect();
        scan_grid(&values, |mu| {
            let v = dual(mu);
            if v > best_dual {
                best_dual = v;
                best_mu = mu.to_vec();
            }
        });
        center = best_mu.clone();
        let shrink = if pass == 0 { 50.0 } else { 10.0 };
        for d in 0..dims {
            half_width[d] /= shrink;
        }
    }
    let margin = best_dual - optimum;
    MultiplierEstimate {
        mu: best_mu,
        margin,
        certified: margin >= -CERTIFY_TOL,
    }
}

/// Multiplier estimate for a deterministic program (inequality multipliers
/// first, then signed equality multipliers). `optimum` comes from
/// `static_optimum_grid` or an analytic value.
pub fn estimate_multiplier_static(
    program: &ConvexProgram,
    optimum: f64,
) -> Result<MultiplierEstimate> {
    let inst = StaticInstance::build(program)?;
    let dims = inst.g.len() + inst.w.len();
    if dims > 3 {
        return Err(Error::OracleRefused(format!(
            "multiplier search handles at most 3 constraints, got {dims}"
        )));
    }
    let (obj_lo, obj_hi) = inst.f.range_over_box(&inst.lower, &inst.upper);
    let obj_range = obj_hi - obj_lo;
    let mut mu_max = Vec::with_capacity(dims);
    let mut signed = Vec::with_capacity(dims);
    for g in &inst.g {
        let (lo, hi) = g.range_over_box(&inst.lower, &inst.upper);
        mu_max.push(bound_for(obj_range, hi - lo));
        signed.push(false);
    }
    for w in &inst.w {
        let (lo, hi) = w.range_over_box(&inst.lower, &inst.upper);
        mu_max.push(bound_for(obj_range, hi - lo));
        signed.push(true);
    }
    Ok(multiplier_grid_search(
        |mu| dual_value_static(&inst, mu),
        &mu_max,
        &signed,
        optimum,
    ))
}

/// Multiplier estimate for a stochastic problem (nonnegative, length K).
pub fn estimate_multiplier_stochastic(
    problem: &StochasticProblem,
    optimum: f64,
) -> Result<MultiplierEstimate> {
    if problem.k > 3 {
        return Err(Error::OracleRefused(format!(
            "multiplier search handles at most 3 constraints, got {}",
            problem.k
        )));
    }
    let all_y: Vec<&Vec<f64>> = problem
        .options
        .options
        .iter()
        .flat_map(|o| o.iter())
        .collect();
    let range_of = |j: usize| -> f64 {
        let hi = all_y.iter().map(|y| y[j]).fold(f64::NEG_INFINITY, f64::max);
        let lo = all_y.iter().map(|y| y[j]).fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let obj_range = range_of(0);
    let mu_max: Vec<f64> = (1..=problem.k)
        .map(|j| bound_for(obj_range, range_of(j)))
        .collect();
    let signed = vec![false; problem.k];
    Ok(multiplier_grid_search(
        |mu| dual_value_stochastic(problem, mu),
        &mu_max,
        &signed,
        optimum,
    ))
}

/// Multiplier search radius: ten times objective range over constraint
/// slack range. A constraint with zero range never binds, so its multiplier
/// stays at 0 (search width collapses).
fn bound_for(obj_range: f64, slack_range: f64) -> f64 {
    if slack_range <= 1e-12 {
        0.0
    } else {
        10.0 * obj_range.max(1e-12) / slack_range
    }
}

/// Grid solve plus multiplier search for a deterministic program.
pub fn solve_static(program: &ConvexProgram, resolution: f64) -> Result<OracleResult> {
    let mut result = static_optimum_grid(program, resolution)?;
    let estimate = estimate_multiplier_static(program, result.optimum)?;
    result.margin = Some(estimate.margin);
    if estimate.certified {
        result.mu = Some(estimate.mu);
    }
    Ok(result)
}

/// Policy solve plus multiplier search for a stochastic problem.
pub fn solve_stochastic(problem: &StochasticProblem, resolution: f64) -> Result<OracleResult> {
    let mut result = stochastic_optimum(problem, resolution)?;
    let estimate = estimate_multiplier_stochastic(problem, result.optimum)?;
    result.margin = Some(estimate.margin);
    if estimate.certified {
        result.mu = Some(estimate.mu);
    }
    Ok(result)
}

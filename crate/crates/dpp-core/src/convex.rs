//! Drift-plus-penalty for deterministic convex programs, with optional
//! time-average equality constraints.
//!
//! Every slot the engine minimizes the weighted objective
//!
//! ```text
//! V f(x) + sum_k Q_k g_k(x) + sum_i Z_i w_i(x)
//! ```
//!
//! over a compact convex set, updates the virtual queues with
//! `y_k = g_k(x)` and `w_i = w_i(x)`, and maintains the running average
//! `xbar(t+1) = xbar(t) * t/(t+1) + x(t)/(t+1)`. The averaged primals
//! converge to an O(eps) approximation with V = 1/eps.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::queue::QueueState;

/// A convex function with a subgradient evaluator.
pub trait ConvexFn: Send + Sync {
    fn eval(&self, x: &[f64]) -> f64;
    fn subgradient(&self, x: &[f64]) -> Vec<f64>;

    /// Exact separable-quadratic representation, when one exists.
    ///
    /// Functions of the form `sum_i q_i x_i^2 + sum_i a_i x_i + b` report
    /// themselves here so box-constrained minimization can be done in closed
    /// form instead of by subgradient iteration.
    fn separable_quadratic(&self) -> Option<SeparableQuadratic> {
        None
    }
}

/// `sum_i quad_i x_i^2 + sum_i lin_i x_i + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableQuadratic {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub constant: f64,
}

impl SeparableQuadratic {
    pub fn zero(dim: usize) -> Self {
        SeparableQuadratic {
            quad: vec![0.0; dim],
            lin: vec![0.0; dim],
            constant: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.quad.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.constant;
        for i in 0..self.quad.len() {
            acc += self.quad[i] * x[i] * x[i] + self.lin[i] * x[i];
        }
        acc
    }

    pub fn add_scaled(&mut self, weight: f64, other: &SeparableQuadratic) {
        for i in 0..self.quad.len() {
            self.quad[i] += weight * other.quad[i];
            self.lin[i] += weight * other.lin[i];
        }
        self.constant += weight * other.constant;
    }

    /// Coordinatewise exact minimizer over a box. Requires `quad_i >= 0`.
    ///
    /// Linear coordinates follow the bang-bang tie rule: score `<= 0` takes
    /// the upper endpoint.
    pub fn minimize_over_box(&self, lower: &[f64], upper: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.quad.len());
        for i in 0..self.quad.len() {
            let xi = if self.quad[i] > 0.0 {
                (-self.lin[i] / (2.0 * self.quad[i])).clamp(lower[i], upper[i])
            } else if self.lin[i] <= 0.0 {
                upper[i]
            } else {
                lower[i]
            };
            x.push(xi);
        }
        x
    }

    /// Exact range of the quadratic over a box (convex per coordinate:
    /// maximum at an endpoint, minimum at the clamped vertex).
    pub fn range_over_box(&self, lower: &[f64], upper: &[f64]) -> (f64, f64) {
        let mut lo = self.constant;
        let mut hi = self.constant;
        for i in 0..self.quad.len() {
            let phi = |x: f64| self.quad[i] * x * x + self.lin[i] * x;
            let at_l = phi(lower[i]);
            let at_u = phi(upper[i]);
            hi += at_l.max(at_u);
            let mut min_i = at_l.min(at_u);
            if self.quad[i] > 0.0 {
                let vertex = -self.lin[i] / (2.0 * self.quad[i]);
                if vertex > lower[i] && vertex < upper[i] {
                    min_i = min_i.min(phi(vertex));
                }
            }
            lo += min_i;
        }
        (lo, hi)
    }
}

/// Affine function `a . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Affine {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidInput(
                "affine coefficients must be finite".into(),
            ));
        }
        Ok(Affine { a, b })
    }
}

impl ConvexFn for Affine {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.b;
        for i in 0..self.a.len() {
            acc += self.a[i] * x[i];
        }
        acc
    }

    fn subgradient(&self, _x: &[f64]) -> Vec<f64> {
        self.a.clone()
    }

    fn separable_quadratic(&self) -> Option<SeparableQuadratic> {
        Some(SeparableQuadratic {
            quad: vec![0.0; self.a.len()],
            lin: self.a.clone(),
            constant: self.b,
        })
    }
}

/// Diagonal quadratic `sum_i q_i x_i^2 + a . x + b` with `q_i >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagQuadratic {
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub b: f64,
}

impl DiagQuadratic {
    pub fn new(q: Vec<f64>, a: Vec<f64>, b: f64) -> Result<Self> {
        if q.len() != a.len() {
            return Err(Error::Dimension(format!(
                "quadratic and linear coefficient lengths differ: {} vs {}",
                q.len(),
                a.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "quadratic coefficients must be finite and nonnegative (convexity)".into(),
            ));
        }
        if a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::InvalidInput(
                "quadratic coefficients must be finite".into(),
            ));
        }
        Ok(DiagQuadratic { q, a, b })
    }
}

impl ConvexFn for DiagQuadratic {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.b;
        for i in 0..self.q.len() {
            acc += self.q[i] * x[i] * x[i] + self.a[i] * x[i];
        }
        acc
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.q.len())
            .map(|i| 2.0 * self.q[i] * x[i] + self.a[i])
            .collect()
    }

    fn separable_quadratic(&self) -> Option<SeparableQuadratic> {
        Some(SeparableQuadratic {
            quad: self.q.clone(),
            lin: self.a.clone(),
            constant: self.b,
        })
    }
}

/// Weighted sum of convex functions. Weights on non-affine terms must be
/// nonnegative for the sum to stay convex; the engines only ever weight
/// non-affine terms by V > 0 or queue values Q >= 0.
pub struct WeightedSum {
    pub terms: Vec<(f64, Arc<dyn ConvexFn>)>,
    dim: usize,
}

impl WeightedSum {
    pub fn new(terms: Vec<(f64, Arc<dyn ConvexFn>)>, dim: usize) -> Self {
        WeightedSum { terms, dim }
    }
}

impl ConvexFn for WeightedSum {
    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(w, f)| w * f.eval(x)).sum()
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for (w, f) in &self.terms {
            let g = f.subgradient(x);
            for i in 0..self.dim {
                acc[i] += w * g[i];
            }
        }
        acc
    }

    fn separable_quadratic(&self) -> Option<SeparableQuadratic> {
        let mut acc = SeparableQuadratic::zero(self.dim);
        for (w, f) in &self.terms {
            acc.add_scaled(*w, &f.separable_quadratic()?);
        }
        Some(acc)
    }
}

/// A convex function of a subset of a larger variable vector.
///
/// Evaluates `inner` on the gathered components `x[indices]`, scattering
/// subgradients back into the outer dimension.
pub struct IndexedFn {
    pub inner: Arc<dyn ConvexFn>,
    pub indices: Vec<usize>,
    pub outer_dim: usize,
}

impl IndexedFn {
    fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&i| x[i]).collect()
    }
}

impl ConvexFn for IndexedFn {
    fn eval(&self, x: &[f64]) -> f64 {
        self.inner.eval(&self.gather(x))
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let g_inner = self.inner.subgradient(&self.gather(x));
        let mut g = vec![0.0; self.outer_dim];
        for (slot, &i) in self.indices.iter().enumerate() {
            g[i] += g_inner[slot];
        }
        g
    }

    fn separable_quadratic(&self) -> Option<SeparableQuadratic> {
        let inner = self.inner.separable_quadratic()?;
        let mut sq = SeparableQuadratic::zero(self.outer_dim);
        for (slot, &i) in self.indices.iter().enumerate() {
            sq.quad[i] += inner.quad[slot];
            sq.lin[i] += inner.lin[slot];
        }
        sq.constant = inner.constant;
        Some(sq)
    }
}

/// Sum of convex functions over the same variable vector.
pub struct SumFn {
    pub terms: Vec<Arc<dyn ConvexFn>>,
    pub dim: usize,
}

impl ConvexFn for SumFn {
    fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|f| f.eval(x)).sum()
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for f in &self.terms {
            let g = f.subgradient(x);
            for i in 0..self.dim {
                acc[i] += g[i];
            }
        }
        acc
    }

    fn separable_quadratic(&self) -> Option<SeparableQuadratic> {
        let mut acc = SeparableQuadratic::zero(self.dim);
        for f in &self.terms {
            acc.add_scaled(1.0, &f.separable_quadratic()?);
        }
        Some(acc)
    }
}

type Projection = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Compact convex feasible set: a box, or an arbitrary set given by a
/// projection operator.
#[derive(Clone)]
pub enum FeasibleSet {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Projectable {
        dim: usize,
        project: Projection,
        diameter: f64,
    },
}

impl FeasibleSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "box bounds lengths differ: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::InvalidInput(format!("box bound {i} is not finite")));
            }
            if lower[i] >= upper[i] {
                return Err(Error::InvalidInput(format!(
                    "box requires lower < upper componentwise, violated at component {i}: {} >= {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    /// Concatenation of two boxes. Errors if either set is not a box.
    pub fn concat_boxes(&self, other: &FeasibleSet) -> Result<FeasibleSet> {
        match (self, other) {
            (
                FeasibleSet::Box {
                    lower: l1,
                    upper: u1,
                },
                FeasibleSet::Box {
                    lower: l2,
                    upper: u2,
                },
            ) => {
                let mut lower = l1.clone();
                lower.extend_from_slice(l2);
                let mut upper = u1.clone();
                upper.extend_from_slice(u2);
                Ok(FeasibleSet::Box { lower, upper })
            }
            _ => Err(Error::InvalidInput("concat_boxes requires box sets".into())),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Projectable { dim, .. } => *dim,
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(lower[i], upper[i]))
                .collect(),
            FeasibleSet::Projectable { project, .. } => project(x),
        }
    }

    /// Start point for the inner solver: box midpoint, or projection of 0.
    pub fn centroid(&self) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| 0.5 * (l + u))
                .collect(),
            FeasibleSet::Projectable { dim, project, .. } => project(&vec![0.0; *dim]),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| (u - l) * (u - l))
                .sum::<f64>()
                .sqrt(),
            FeasibleSet::Projectable { diameter, .. } => *diameter,
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .enumerate()
                .all(|(i, &v)| v >= lower[i] - tol && v <= upper[i] + tol),
            FeasibleSet::Projectable { project, .. } => {
                let p = project(x);
                x.iter().zip(&p).all(|(a, b)| (a - b).abs() <= tol)
            }
        }
    }
}

/// A deterministic convex program with `K` inequality and `M` (affine)
/// equality time-average constraints.
pub struct ConvexProgram {
    pub f: Arc<dyn ConvexFn>,
    pub g: Vec<Arc<dyn ConvexFn>>,
    pub c: Vec<f64>,
    /// Equality-constraint functions. Restricted to affine so that the
    /// signed Z-weighted terms stay convex.
    pub w: Vec<Affine>,
    pub d: Vec<f64>,
    pub set: FeasibleSet,
    /// Declared ranges of each `g_k` over the feasible set, required when a
    /// constraint is not separable-quadratic on a box.
    pub g_ranges: Option<Vec<(f64, f64)>>,
}

impl std::fmt::Debug for ConvexProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexProgram")
            .field("dim", &self.set.dim())
            .field("num_ineq", &self.g.len())
            .field("num_eq", &self.w.len())
            .field("c", &self.c)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

impl ConvexProgram {
    pub fn validate(&self) -> Result<()> {
        if self.g.len() != self.c.len() {
            return Err(Error::Dimension(format!(
                "constraint count {} does not match c length {}",
                self.g.len(),
                self.c.len()
            )));
        }
        if self.w.len() != self.d.len() {
            return Err(Error::Dimension(format!(
                "equality count {} does not match d length {}",
                self.w.len(),
                self.d.len()
            )));
        }
        let n = self.set.dim();
        for (i, w) in self.w.iter().enumerate() {
            if w.a.len() != n {
                return Err(Error::Dimension(format!(
                    "equality function {i} has dimension {}, set has {n}",
                    w.a.len()
                )));
            }
        }
        if self.c.iter().any(|v| !v.is_finite()) || self.d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "constraint constants must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn num_ineq(&self) -> usize {
        self.g.len()
    }

    pub fn num_eq(&self) -> usize {
        self.w.len()
    }
}

/// Inner (per-slot) minimizer configuration.
#[derive(Debug, Clone)]
pub struct InnerSolverParams {
    pub max_iters: usize,
    /// Step scale c0 for the diminishing rule c0/sqrt(j); defaults to the
    /// feasible set's diameter.
    pub step_scale: Option<f64>,
    /// Stop when the best objective stops improving by more than this over
    /// a window of iterations.
    pub tol: f64,
}

impl Default for InnerSolverParams {
    fn default() -> Self {
        InnerSolverParams {
            max_iters: 200,
            step_scale: None,
            tol: 1e-9,
        }
    }
}

/// The slot-t weighted objective `v f + sum_k Q_k g_k + sum_i Z_i w_i`.
pub fn per_slot_objective(
    program: &ConvexProgram,
    queues: &QueueState,
    v: f64,
) -> Result<WeightedSum> {
    if queues.ineq.len() != program.g.len() || queues.eq.len() != program.w.len() {
        return Err(Error::Dimension(format!(
            "queue state ({} ineq, {} eq) does not match program ({} ineq, {} eq)",
            queues.ineq.len(),
            queues.eq.len(),
            program.g.len(),
            program.w.len()
        )));
    }
    let mut terms: Vec<(f64, Arc<dyn ConvexFn>)> =
        Vec::with_capacity(1 + program.g.len() + program.w.len());
    terms.push((v, Arc::clone(&program.f)));
    for (k, g) in program.g.iter().enumerate() {
        terms.push((queues.ineq[k].value(), Arc::clone(g)));
    }
    for (i, w) in program.w.iter().enumerate() {
        let w: Arc<dyn ConvexFn> = Arc::new(w.clone());
        terms.push((queues.eq[i].value(), w));
    }
    Ok(WeightedSum::new(terms, program.set.dim()))
}

/// Minimizes a convex objective over a compact set.
///
/// Separable-quadratic objectives on boxes are minimized in closed form
/// (exactly, matching the exact per-slot minimization the analysis assumes).
/// Everything else falls back to projected subgradient descent from the
/// set's centroid with diminishing steps, returning the best iterate.
pub fn inner_minimize(
    objective: &dyn ConvexFn,
    set: &FeasibleSet,
    params: &InnerSolverParams,
) -> Result<Vec<f64>> {
    if params.max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be >= 1".into()));
    }
    if let FeasibleSet::Box { lower, upper } = set {
        if let Some(sq) = objective.separable_quadratic() {
            if sq.quad.iter().all(|&q| q >= 0.0) {
                return Ok(sq.minimize_over_box(lower, upper));
            }
        }
    }

    let c0 = params.step_scale.unwrap_or_else(|| set.diameter());
    let mut x = set.centroid();
    let mut best_x = x.clone();
    let mut best_val = objective.eval(&x);
    if !best_val.is_finite() {
        return Err(Error::Numerical(format!(
            "objective not finite at start point {x:?}"
        )));
    }
    let mut since_improvement = 0usize;
    for j in 1..=params.max_iters {
        let g = objective.subgradient(&x);
        let step = c0 / (j as f64).sqrt();
        for i in 0..x.len() {
            x[i] -= step * g[i];
        }
        x = set.project(&x);
        let val = objective.eval(&x);
        if !val.is_finite() {
            return Err(Error::Numerical(format!(
                "objective not finite at iterate {x:?} (iteration {j})"
            )));
        }
        if val < best_val - params.tol {
            best_val = val;
            best_x = x.clone();
            since_improvement = 0;
        } else {
            if val < best_val {
                best_val = val;
                best_x = x.clone();
            }
            since_improvement += 1;
            if since_improvement >= 25 {
                break;
            }
        }
    }
    Ok(best_x)
}

/// Per-slot record of a deterministic (convex or LP) run.
#[derive(Debug, Clone)]
pub struct ConvexSlot {
    pub x: Vec<f64>,
    /// `y = (f(x), g_1(x), ..., g_K(x))`.
    pub y: Vec<f64>,
    pub w_vals: Vec<f64>,
    pub q_after: Vec<f64>,
    pub z_after: Vec<f64>,
    /// Incrementally updated running average of x after this slot.
    pub avg_x: Vec<f64>,
    /// Exact cumulative sum of x through this slot.
    pub cum_x: Vec<f64>,
    /// Exact cumulative sum of y through this slot.
    pub cum_y: Vec<f64>,
}

/// Full trace of a deterministic run.
#[derive(Debug, Clone)]
pub struct ConvexTrace {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub slots: Vec<ConvexSlot>,
}

impl ConvexTrace {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.slots.len() {
            return Err(Error::Domain(format!(
                "t must be in 1..={}, got {t}",
                self.slots.len()
            )));
        }
        Ok(())
    }

    /// `(1/t) sum_{tau < t} y_k(tau)` from the exact cumulative sums.
    pub fn time_average_y(&self, t: usize, k: usize) -> Result<f64> {
        self.check_t(t)?;
        if k > self.k {
            return Err(Error::Domain(format!(
                "component index {k} out of range 0..={}",
                self.k
            )));
        }
        Ok(self.slots[t - 1].cum_y[k] / t as f64)
    }

    /// Exact running average of x: cumulative sum divided by t.
    pub fn avg_x_exact(&self, t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        Ok(self.slots[t - 1]
            .cum_x
            .iter()
            .map(|s| s / t as f64)
            .collect())
    }

    /// Incrementally maintained running average of x.
    pub fn avg_x_incremental(&self, t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        Ok(self.slots[t - 1].avg_x.clone())
    }
}

/// Runs the drift-plus-penalty loop for a convex program.
pub fn run_convex(
    program: &ConvexProgram,
    v: f64,
    t_max: u64,
    inner: &InnerSolverParams,
) -> Result<ConvexTrace> {
    program.validate()?;
    if v <= 0.0 || !v.is_finite() {
        return Err(Error::Domain(format!("v must be positive, got {v}")));
    }
    if t_max == 0 {
        return Err(Error::Domain("t_max must be >= 1".into()));
    }
    let n = program.set.dim();
    let kk = program.num_ineq();
    let mm = program.num_eq();
    let mut queues = QueueState::new(kk, mm);
    let mut avg_x = vec![0.0; n];
    let mut cum_x = vec![0.0; n];
    let mut cum_y = vec![0.0; kk + 1];
    let mut slots = Vec::with_capacity(t_max as usize);

    for t in 0..t_max {
        let objective = per_slot_objective(program, &queues, v)?;
        let x = inner_minimize(&objective, &program.set, inner)
            .map_err(|e| Error::Numerical(format!("inner solver failed at slot {t}: {e}")))?;

        let mut y = Vec::with_capacity(kk + 1);
        y.push(program.f.eval(&x));
        for g in &program.g {
            y.push(g.eval(&x));
        }
        let w_vals: Vec<f64> = program.w.iter().map(|w| w.eval(&x)).collect();

        for k in 0..kk {
            queues.ineq[k].push(y[k + 1], program.c[k])?;
        }
        for i in 0..mm {
            queues.eq[i].push(w_vals[i], program.d[i])?;
        }

        let tf = t as f64;
        for i in 0..n {
            avg_x[i] = avg_x[i] * (tf / (tf + 1.0)) + x[i] / (tf + 1.0);
            cum_x[i] += x[i];
        }
        for k in 0..kk + 1 {
            cum_y[k] += y[k];
        }

        slots.push(ConvexSlot {
            x,
            y,
            w_vals,
            q_after: queues.ineq_values(),
            z_after: queues.eq_values(),
            avg_x: avg_x.clone(),
            cum_x: cum_x.clone(),
            cum_y: cum_y.clone(),
        });
    }

    Ok(ConvexTrace {
        n,
        k: kk,
        m: mm,
        slots,
    })
}

/// Drift constant `B = (1/2) sum_k (sup_X |g_k(x) - c_k|)^2`.
///
/// The sup is computed exactly for separable-quadratic constraints on boxes,
/// and taken from declared ranges otherwise. Missing ranges are an error
/// rather than an estimate: an under-estimated B voids the certified bounds.
pub fn compute_b_convex(program: &ConvexProgram) -> Result<f64> {
    program.validate()?;
    let mut b = 0.0;
    for (k, g) in program.g.iter().enumerate() {
        let (lo, hi) = constraint_range(program, k, g.as_ref())?;
        let dev = (hi - program.c[k]).abs().max((lo - program.c[k]).abs());
        b += 0.5 * dev * dev;
    }
    Ok(b)
}

fn constraint_range(program: &ConvexProgram, k: usize, g: &dyn ConvexFn) -> Result<(f64, f64)> {
    if let FeasibleSet::Box { lower, upper } = &program.set {
        if let Some(sq) = g.separable_quadratic() {
            return Ok(sq.range_over_box(lower, upper));
        }
    }
    match &program.g_ranges {
        Some(ranges) if k < ranges.len() => Ok(ranges[k]),
        _ => Err(Error::InvalidInput(format!(
            "constraint {k} is not separable-quadratic on a box; declare g_ranges to compute B"
        ))),
    }
}

/// Both sides of the Jensen inequalities at slot t.
#[derive(Debug, Clone)]
pub struct JensenReport {
    pub f_avg_x: f64,
    pub avg_y0: f64,
    pub g_avg_x: Vec<f64>,
    pub avg_yk: Vec<f64>,
    /// Largest amount by which any Jensen inequality is violated (should be
    /// <= tolerance on every trace).
    pub max_violation: f64,
}

/// Verifies `f(xbar(t)) <= avg(y_0)` and `g_k(xbar(t)) <= avg(y_k)`.
pub fn jensen_check(
    program: &ConvexProgram,
    trace: &ConvexTrace,
    t: usize,
) -> Result<JensenReport> {
    trace.check_t(t)?;
    let avg_x = trace.avg_x_exact(t)?;
    let f_avg_x = program.f.eval(&avg_x);
    let avg_y0 = trace.time_average_y(t, 0)?;
    let mut g_avg_x = Vec::with_capacity(program.g.len());
    let mut avg_yk = Vec::with_capacity(program.g.len());
    let mut max_violation = f_avg_x - avg_y0;
    for (k, g) in program.g.iter().enumerate() {
        let ga = g.eval(&avg_x);
        let ya = trace.time_average_y(t, k + 1)?;
        max_violation = max_violation.max(ga - ya);
        g_avg_x.push(ga);
        avg_yk.push(ya);
    }
    Ok(JensenReport {
        f_avg_x,
        avg_y0,
        g_avg_x,
        avg_yk,
        max_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> FeasibleSet {
        FeasibleSet::boxed(lower, upper).unwrap()
    }

    fn params() -> InnerSolverParams {
        InnerSolverParams::default()
    }

    #[test]
    fn inner_minimize_analytic_examples() {
        // (x - 0.3)^2 on [0,1] -> 0.3
        let f = DiagQuadratic::new(vec![1.0], vec![-0.6], 0.09).unwrap();
        let x = inner_minimize(&f, &boxed(vec![0.0], vec![1.0]), &params()).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-6);

        // x on [0,1] -> 0
        let f = Affine::new(vec![1.0], 0.0).unwrap();
        let x = inner_minimize(&f, &boxed(vec![0.0], vec![1.0]), &params()).unwrap();
        assert!(x[0].abs() < 1e-9);

        // x + 2x^2 on [-1,1] -> -0.25
        let f = DiagQuadratic::new(vec![2.0], vec![1.0], 0.0).unwrap();
        let x = inner_minimize(&f, &boxed(vec![-1.0], vec![1.0]), &params()).unwrap();
        assert!((x[0] + 0.25).abs() < 1e-6);
    }

    #[test]
    fn inner_minimize_subgradient_path() {
        // Non-quadratic objective: |x - 0.4| on [0,1], forced through the
        // subgradient fallback.
        struct Abs;
        impl ConvexFn for Abs {
            fn eval(&self, x: &[f64]) -> f64 {
                (x[0] - 0.4).abs()
            }
            fn subgradient(&self, x: &[f64]) -> Vec<f64> {
                vec![if x[0] >= 0.4 { 1.0 } else { -1.0 }]
            }
        }
        let mut p = params();
        p.max_iters = 2000;
        let x = inner_minimize(&Abs, &boxed(vec![0.0], vec![1.0]), &p).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-2, "got {}", x[0]);
    }

    #[test]
    fn inner_minimize_reports_nan() {
        struct Bad;
        impl ConvexFn for Bad {
            fn eval(&self, _x: &[f64]) -> f64 {
                f64::NAN
            }
            fn subgradient(&self, _x: &[f64]) -> Vec<f64> {
                vec![0.0]
            }
        }
        let err = inner_minimize(&Bad, &boxed(vec![0.0], vec![1.0]), &params());
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn per_slot_objective_matches_term_recomputation() {
        // v=1, Q=(2,), f(x)=x, g(x)=x^2: objective is x + 2x^2.
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![1.0], 0.0).unwrap()),
            g: vec![Arc::new(
                DiagQuadratic::new(vec![1.0], vec![0.0], 0.0).unwrap(),
            )],
            c: vec![0.0],
            w: vec![],
            d: vec![],
            set: boxed(vec![-1.0], vec![1.0]),
            g_ranges: None,
        };
        let mut queues = QueueState::new(1, 0);
        queues.ineq[0].push(2.0, 0.0).unwrap();
        let obj = per_slot_objective(&program, &queues, 1.0).unwrap();
        for &x in &[-1.0, -0.25, 0.0, 0.7, 1.0] {
            let expect = x + 2.0 * x * x;
            assert!((obj.eval(&[x]) - expect).abs() < 1e-12);
        }
        // Unconstrained minimizer of x + 2x^2 is -0.25.
        let xstar = inner_minimize(&obj, &program.set, &params()).unwrap();
        assert!((xstar[0] + 0.25).abs() < 1e-9);
    }

    #[test]
    fn per_slot_objective_all_queues_zero_is_vf() {
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![2.0, -1.0], 0.5).unwrap()),
            g: vec![Arc::new(Affine::new(vec![1.0, 1.0], 0.0).unwrap())],
            c: vec![0.0],
            w: vec![],
            d: vec![],
            set: boxed(vec![0.0, 0.0], vec![1.0, 1.0]),
            g_ranges: None,
        };
        let queues = QueueState::new(1, 0);
        let obj = per_slot_objective(&program, &queues, 3.0).unwrap();
        let x = [0.3, 0.8];
        assert!((obj.eval(&x) - 3.0 * program.f.eval(&x)).abs() < 1e-12);
    }

    #[test]
    fn per_slot_objective_dimension_mismatch() {
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![1.0], 0.0).unwrap()),
            g: vec![],
            c: vec![],
            w: vec![],
            d: vec![],
            set: boxed(vec![0.0], vec![1.0]),
            g_ranges: None,
        };
        let queues = QueueState::new(2, 0);
        assert!(matches!(
            per_slot_objective(&program, &queues, 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn never_binding_constraint_pins_argmin_of_f() {
        // g == 0 <= c = 1 never binds; x(t) should sit at argmin f = 0.3.
        let program = ConvexProgram {
            f: Arc::new(DiagQuadratic::new(vec![1.0], vec![-0.6], 0.0).unwrap()),
            g: vec![Arc::new(Affine::new(vec![0.0], 0.0).unwrap())],
            c: vec![1.0],
            w: vec![],
            d: vec![],
            set: boxed(vec![0.0], vec![1.0]),
            g_ranges: None,
        };
        let trace = run_convex(&program, 10.0, 50, &params()).unwrap();
        for slot in &trace.slots {
            assert!((slot.x[0] - 0.3).abs() < 1e-9);
        }
        assert!((trace.avg_x_exact(50).unwrap()[0] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn two_var_constrained_program_obeys_bounds() {
        // minimize x1 + x2 s.t. -x1 - x2 <= -1 on [0,1]^2; f* = 1.
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![1.0, 1.0], 0.0).unwrap()),
            g: vec![Arc::new(Affine::new(vec![-1.0, -1.0], 0.0).unwrap())],
            c: vec![-1.0],
            w: vec![],
            d: vec![],
            set: boxed(vec![0.0, 0.0], vec![1.0, 1.0]),
            g_ranges: None,
        };
        let b = compute_b_convex(&program).unwrap();
        assert!((b - 0.5).abs() < 1e-12);

        let eps = 0.05f64;
        let v = 1.0 / eps;
        let t_horizon = (1.0 / (eps * eps)).ceil() as usize;
        let trace = run_convex(&program, v, t_horizon as u64, &params()).unwrap();
        for t in 1..=t_horizon {
            let y0 = trace.time_average_y(t, 0).unwrap();
            assert!(y0 <= 1.0 + b * eps + 1e-9, "t={t}: {y0}");
        }
        // Violation at the horizon is O(eps).
        let y1 = trace.time_average_y(t_horizon, 1).unwrap();
        assert!(y1 - (-1.0) <= 5.0 * eps, "violation {}", y1 + 1.0);
    }

    #[test]
    fn equality_constraint_via_z_queue() {
        // minimize -x s.t. avg(x) = 0.3 on [0,1].
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![-1.0], 0.0).unwrap()),
            g: vec![],
            c: vec![],
            w: vec![Affine::new(vec![1.0], 0.0).unwrap()],
            d: vec![0.3],
            set: boxed(vec![0.0], vec![1.0]),
            g_ranges: None,
        };
        let eps = 0.05f64;
        let t_horizon = (1.0 / (eps * eps)).ceil() as usize;
        let trace = run_convex(&program, 1.0 / eps, t_horizon as u64, &params()).unwrap();
        let avg_x = trace.avg_x_exact(t_horizon).unwrap()[0];
        assert!((avg_x - 0.3).abs() <= 5.0 * eps, "avg_x={avg_x}");
        // Z telescopes exactly: Z(t) = sum (x - 0.3).
        let t = t_horizon;
        let z = trace.slots[t - 1].z_after[0];
        let telescoped = trace.slots[t - 1].cum_x[0] - 0.3 * t as f64;
        assert!((z - telescoped).abs() <= 1e-9 * t as f64);
    }

    #[test]
    fn jensen_tight_for_affine_and_holds_for_quadratic() {
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![1.0, 1.0], 0.0).unwrap()),
            g: vec![Arc::new(Affine::new(vec![-1.0, -1.0], 0.0).unwrap())],
            c: vec![-1.0],
            w: vec![],
            d: vec![],
            set: boxed(vec![0.0, 0.0], vec![1.0, 1.0]),
            g_ranges: None,
        };
        let trace = run_convex(&program, 20.0, 200, &params()).unwrap();
        for t in [1, 7, 100, 200] {
            let report = jensen_check(&program, &trace, t).unwrap();
            assert!(report.max_violation <= 1e-9);
            // Affine case: equality.
            assert!((report.f_avg_x - report.avg_y0).abs() <= 1e-9);
        }
    }

    #[test]
    fn compute_b_requires_ranges_for_black_box_constraints() {
        struct Weird;
        impl ConvexFn for Weird {
            fn eval(&self, x: &[f64]) -> f64 {
                x[0].abs()
            }
            fn subgradient(&self, x: &[f64]) -> Vec<f64> {
                vec![x[0].signum()]
            }
        }
        let mut program = ConvexProgram {
            f: Arc::new(Affine::new(vec![1.0], 0.0).unwrap()),
            g: vec![Arc::new(Weird)],
            c: vec![0.0],
            w: vec![],
            d: vec![],
            set: boxed(vec![-1.0], vec![1.0]),
            g_ranges: None,
        };
        assert!(compute_b_convex(&program).is_err());
        program.g_ranges = Some(vec![(0.0, 1.0)]);
        assert!((compute_b_convex(&program).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn box_validation_rejects_bad_bounds() {
        assert!(FeasibleSet::boxed(vec![0.0], vec![0.0]).is_err());
        assert!(FeasibleSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(FeasibleSet::boxed(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn incremental_average_tracks_exact_sum() {
        let program = ConvexProgram {
            f: Arc::new(Affine::new(vec![1.0], 0.0).unwrap()),
            g: vec![Arc::new(Affine::new(vec![-1.0], 0.0).unwrap())],
            c: vec![-0.5],
            w: vec![],
            d: vec![],
            set: boxed(vec![0.0], vec![1.0]),
            g_ranges: None,
        };
        let trace = run_convex(&program, 50.0, 5000, &params()).unwrap();
        for t in [1usize, 13, 100, 2500, 5000] {
            let inc = trace.avg_x_incremental(t).unwrap();
            let exact = trace.avg_x_exact(t).unwrap();
            assert!((inc[0] - exact[0]).abs() <= 1e-12 * t as f64);
        }
    }
}

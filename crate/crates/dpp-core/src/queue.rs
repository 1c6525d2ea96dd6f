//! Virtual queue state, update rules, and the closed-form bounds derived
//! from them.
//!
//! An inequality queue enforces a time-average constraint `avg(y) <= c`
//! through the update `Q <- max(Q + y - c, 0)`. An equality queue enforces
//! `avg(w) = d` through the signed update `Z <- Z + w - d`. Stability of the
//! queues implies the corresponding time-average constraints, and the queue
//! values give closed-form violation and norm bounds.

use crate::error::{Error, Result};

/// Nonnegative virtual queue for a time-average inequality constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityQueue {
    value: f64,
}

impl InequalityQueue {
    pub fn new() -> Self {
        InequalityQueue { value: 0.0 }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Applies one slot of arrivals `y` against service rate `c`.
    pub fn push(&mut self, y: f64, c: f64) -> Result<()> {
        self.value = update_inequality(self.value, y, c)?;
        Ok(())
    }
}

impl Default for InequalityQueue {
    fn default() -> Self {
        Self::new()
    }
}

/// Signed virtual queue for a time-average equality constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualityQueue {
    value: f64,
}

impl EqualityQueue {
    pub fn new() -> Self {
        EqualityQueue { value: 0.0 }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Applies one slot of arrivals `w` against target rate `d`.
    pub fn push(&mut self, w: f64, d: f64) -> Result<()> {
        self.value = update_equality(self.value, w, d)?;
        Ok(())
    }
}

impl Default for EqualityQueue {
    fn default() -> Self {
        Self::new()
    }
}

/// Full queue state of a run: `K` inequality queues and `M` equality queues.
///
/// Lengths are fixed for the life of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub ineq: Vec<InequalityQueue>,
    pub eq: Vec<EqualityQueue>,
}

impl QueueState {
    pub fn new(num_ineq: usize, num_eq: usize) -> Self {
        QueueState {
            ineq: vec![InequalityQueue::new(); num_ineq],
            eq: vec![EqualityQueue::new(); num_eq],
        }
    }

    pub fn ineq_values(&self) -> Vec<f64> {
        self.ineq.iter().map(|q| q.value()).collect()
    }

    pub fn eq_values(&self) -> Vec<f64> {
        self.eq.iter().map(|z| z.value()).collect()
    }

    /// Euclidean norm of the inequality-queue vector.
    pub fn ineq_norm(&self) -> f64 {
        self.ineq
            .iter()
            .map(|q| q.value() * q.value())
            .sum::<f64>()
            .sqrt()
    }
}

/// One slot of the inequality-queue update: `max(q + y - c, 0)`.
pub fn update_inequality(q: f64, y: f64, c: f64) -> Result<f64> {
    if q < 0.0 {
        return Err(Error::InvalidInput(format!(
            "inequality queue value must be nonnegative, got {q}"
        )));
    }
    if !q.is_finite() || !y.is_finite() || !c.is_finite() {
        return Err(Error::InvalidInput(format!(
            "update_inequality requires finite inputs, got q={q}, y={y}, c={c}"
        )));
    }
    Ok((q + y - c).max(0.0))
}

/// One slot of the equality-queue update: `z + w - d`, no clipping.
pub fn update_equality(z: f64, w: f64, d: f64) -> Result<f64> {
    if !z.is_finite() || !w.is_finite() || !d.is_finite() {
        return Err(Error::InvalidInput(format!(
            "update_equality requires finite inputs, got z={z}, w={w}, d={d}"
        )));
    }
    Ok(z + w - d)
}

/// Sample-path violation bound: the running average of the queue's arrival
/// process over slots `0..t-1` never exceeds `c + Q(t)/t`.
pub fn violation_bound(q_t: f64, t: u64, c: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::Domain("violation_bound requires t >= 1".into()));
    }
    if q_t < 0.0 || !q_t.is_finite() || !c.is_finite() {
        return Err(Error::InvalidInput(format!(
            "violation_bound requires finite inputs and q_t >= 0, got q_t={q_t}, c={c}"
        )));
    }
    Ok(c + q_t / t as f64)
}

/// Quadratic Lyapunov function `L = (sum_k Q_k^2 + sum_i Z_i^2) / 2`.
pub fn lyapunov(state: &QueueState) -> f64 {
    let sq: f64 = state.ineq.iter().map(|q| q.value() * q.value()).sum();
    let sz: f64 = state.eq.iter().map(|z| z.value() * z.value()).sum();
    0.5 * (sq + sz)
}

/// Largest-root bound on the queue-vector norm at slot `t`:
/// `v*mu_norm + sqrt(v^2*mu_norm^2 + 2*b*t)`.
///
/// `mu_norm` is the norm of a Lagrange multiplier vector and `b` dominates
/// the per-slot drift constant.
pub fn queue_norm_bound(v: f64, mu_norm: f64, b: f64, t: u64) -> Result<f64> {
    if v <= 0.0 || !v.is_finite() {
        return Err(Error::Domain(format!(
            "queue_norm_bound requires v > 0, got {v}"
        )));
    }
    if t == 0 {
        return Err(Error::Domain("queue_norm_bound requires t >= 1".into()));
    }
    if mu_norm < 0.0 || b < 0.0 || !mu_norm.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "queue_norm_bound requires mu_norm >= 0 and b >= 0, got mu_norm={mu_norm}, b={b}"
        )));
    }
    let vm = v * mu_norm;
    Ok(vm + (vm * vm + 2.0 * b * t as f64).sqrt())
}

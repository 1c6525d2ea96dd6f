//! Closed-form drift-plus-penalty specialization for linear programs over
//! hyper-rectangles.
//!
//! The per-slot minimization of `V sum b_i x_i + sum_k Q_k sum_i a_ki x_i`
//! separates per coordinate: `x_i` goes to its upper bound when the score
//! `V b_i + sum_k Q_k a_ki` is `<= 0` and to its lower bound otherwise.
//! Individual decisions are corners; the running average converges to an
//! O(eps) approximation of the (possibly non-corner) optimum.

use std::sync::Arc;

use crate::convex::{Affine, ConvexProgram, ConvexSlot, ConvexTrace, FeasibleSet};
use crate::error::{Error, Result};
use crate::queue::QueueState;

/// Dense linear program `min b.x  s.t.  A x <= c,  x_min <= x <= x_max`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub b: Vec<f64>,
    /// Constraint matrix, `a[k][i]` = coefficient of `x_i` in constraint k.
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
}

impl LinearProgram {
    pub fn validate(&self) -> Result<()> {
        let n = self.b.len();
        if self.x_min.len() != n || self.x_max.len() != n {
            return Err(Error::Dimension(format!(
                "b has length {n} but bounds have lengths {} and {}",
                self.x_min.len(),
                self.x_max.len()
            )));
        }
        if self.a.len() != self.c.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows but c has length {}",
                self.a.len(),
                self.c.len()
            )));
        }
        for (k, row) in self.a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "A row {k} has length {}, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "A row {k} has non-finite entry"
                )));
            }
        }
        if self.b.iter().any(|v| !v.is_finite()) || self.c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("b and c must be finite".into()));
        }
        for i in 0..n {
            if !self.x_min[i].is_finite() || !self.x_max[i].is_finite() {
                return Err(Error::InvalidInput(format!("bound {i} is not finite")));
            }
            if self.x_min[i] >= self.x_max[i] {
                return Err(Error::InvalidInput(format!(
                    "x_min < x_max required, violated at component {i}: {} >= {}",
                    self.x_min[i], self.x_max[i]
                )));
            }
        }
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.b.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.len()
    }

    /// The same instance expressed as a generic convex program.
    pub fn to_convex_program(&self) -> Result<ConvexProgram> {
        self.validate()?;
        let g = self
            .a
            .iter()
            .map(|row| {
                let f: Arc<dyn crate::convex::ConvexFn> = Arc::new(Affine::new(row.clone(), 0.0)?);
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConvexProgram {
            f: Arc::new(Affine::new(self.b.clone(), 0.0)?),
            g,
            c: self.c.clone(),
            w: vec![],
            d: vec![],
            set: FeasibleSet::boxed(self.x_min.clone(), self.x_max.clone())?,
            g_ranges: None,
        })
    }
}

/// Bang-bang per-coordinate decision for slot t.
pub fn lp_per_slot_decision(lp: &LinearProgram, queues: &QueueState, v: f64) -> Result<Vec<f64>> {
    if queues.ineq.len() != lp.num_constraints() {
        return Err(Error::Dimension(format!(
            "queue state has {} inequality queues, LP has {} constraints",
            queues.ineq.len(),
            lp.num_constraints()
        )));
    }
    let mut x = Vec::with_capacity(lp.num_vars());
    for i in 0..lp.num_vars() {
        let mut score = v * lp.b[i];
        for k in 0..lp.num_constraints() {
            score += queues.ineq[k].value() * lp.a[k][i];
        }
        x.push(if score <= 0.0 {
            lp.x_max[i]
        } else {
            lp.x_min[i]
        });
    }
    Ok(x)
}

/// Runs the bang-bang drift-plus-penalty loop. No inner solver involved.
pub fn run_lp(lp: &LinearProgram, v: f64, t_max: u64) -> Result<ConvexTrace> {
    lp.validate()?;
    if v <= 0.0 || !v.is_finite() {
        return Err(Error::Domain(format!("v must be positive, got {v}")));
    }
    if t_max == 0 {
        return Err(Error::Domain("t_max must be >= 1".into()));
    }
    let n = lp.num_vars();
    let kk = lp.num_constraints();
    let mut queues = QueueState::new(kk, 0);
    let mut avg_x = vec![0.0; n];
    let mut cum_x = vec![0.0; n];
    let mut cum_y = vec![0.0; kk + 1];
    let mut slots = Vec::with_capacity(t_max as usize);

    for t in 0..t_max {
        let x = lp_per_slot_decision(lp, &queues, v)?;

        let mut y = Vec::with_capacity(kk + 1);
        let f_val: f64 = (0..n).map(|i| lp.b[i] * x[i]).sum();
        y.push(f_val);
        for k in 0..kk {
            y.push((0..n).map(|i| lp.a[k][i] * x[i]).sum());
        }

        for k in 0..kk {
            queues.ineq[k].push(y[k + 1], lp.c[k])?;
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
            w_vals: vec![],
            q_after: queues.ineq_values(),
            z_after: vec![],
            avg_x: avg_x.clone(),
            cum_x: cum_x.clone(),
            cum_y: cum_y.clone(),
        });
    }

    Ok(ConvexTrace {
        n,
        k: kk,
        m: 0,
        slots,
    })
}

/// Exact drift constant for the affine case:
/// `B = (1/2) sum_k (max corner |sum_i a_ki x_i - c_k|)^2`,
/// with the per-constraint sup evaluated by sign-based interval arithmetic.
pub fn compute_b_lp(lp: &LinearProgram) -> Result<f64> {
    lp.validate()?;
    let mut b = 0.0;
    for k in 0..lp.num_constraints() {
        let mut lo = -lp.c[k];
        let mut hi = -lp.c[k];
        for i in 0..lp.num_vars() {
            let at_min = lp.a[k][i] * lp.x_min[i];
            let at_max = lp.a[k][i] * lp.x_max[i];
            lo += at_min.min(at_max);
            hi += at_min.max(at_max);
        }
        let dev = lo.abs().max(hi.abs());
        b += 0.5 * dev * dev;
    }
    Ok(b)
}

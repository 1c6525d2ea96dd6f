//! Drift-plus-penalty loop for stochastic problems with i.i.d. random
//! events and finite per-event decision-option sets.
//!
//! Every slot the engine observes the sampled event, scores each available
//! option vector by `V y_0 + sum_k Q_k y_k`, takes the exact argmin (lowest
//! index on ties), and updates the virtual queues. The algorithm never reads
//! the event probabilities; only the oracle does.

use crate::error::{Error, Result};
use crate::queue::QueueState;

/// SplitMix64 PRNG (Steele, Lea, Flood 2014). Chosen over an external
/// generator so traces are bit-portable across platforms given a seed.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Finite i.i.d. event distribution with a seedable sampler.
#[derive(Debug, Clone)]
pub struct RandomEventModel {
    pub events: Vec<String>,
    pub probabilities: Vec<f64>,
}

impl RandomEventModel {
    pub fn new(events: Vec<String>, probabilities: Vec<f64>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::InvalidInput("event model needs >= 1 event".into()));
        }
        if events.len() != probabilities.len() {
            return Err(Error::Dimension(format!(
                "event model has {} events but {} probabilities",
                events.len(),
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput(
                "event probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "event probabilities must sum to 1 within 1e-12, got {total}"
            )));
        }
        Ok(RandomEventModel {
            events,
            probabilities,
        })
    }

    /// Inverse-CDF sample over the stored probability list.
    pub fn sample(&self, rng: &mut SplitMix64) -> usize {
        let u = rng.next_f64();
        let mut acc = 0.0;
        for (i, p) in self.probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probabilities.len() - 1
    }
}

/// Per-event finite sets of decision-option vectors `(y_0, ..., y_K)`.
#[derive(Debug, Clone)]
pub struct DecisionOptionSet {
    /// `options[event][option]` is a vector of length K+1.
    pub options: Vec<Vec<Vec<f64>>>,
}

/// A validated stochastic problem instance.
#[derive(Debug, Clone)]
pub struct StochasticProblem {
    pub k: usize,
    pub c: Vec<f64>,
    pub events: RandomEventModel,
    pub options: DecisionOptionSet,
    /// `moment_bounds[0]` = max |y_0|; `moment_bounds[k]` = max y_k^2,
    /// recorded at load.
    pub moment_bounds: Vec<f64>,
}

impl StochasticProblem {
    pub fn new(
        k: usize,
        c: Vec<f64>,
        events: RandomEventModel,
        options: DecisionOptionSet,
    ) -> Result<Self> {
        if c.len() != k {
            return Err(Error::Dimension(format!(
                "c has length {}, expected K = {k}",
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "constraint constants must be finite".into(),
            ));
        }
        if options.options.len() != events.events.len() {
            return Err(Error::Dimension(format!(
                "option sets for {} events, event model has {}",
                options.options.len(),
                events.events.len()
            )));
        }
        let mut moment_bounds = vec![0.0f64; k + 1];
        for (e, opts) in options.options.iter().enumerate() {
            if opts.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "event '{}' has no decision options",
                    events.events[e]
                )));
            }
            for (a, y) in opts.iter().enumerate() {
                if y.len() != k + 1 {
                    return Err(Error::Dimension(format!(
                        "option {a} of event '{}' has length {}, expected {}",
                        events.events[e],
                        y.len(),
                        k + 1
                    )));
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "option {a} of event '{}' has non-finite entry",
                        events.events[e]
                    )));
                }
                moment_bounds[0] = moment_bounds[0].max(y[0].abs());
                for j in 1..=k {
                    moment_bounds[j] = moment_bounds[j].max(y[j] * y[j]);
                }
            }
        }
        Ok(StochasticProblem {
            k,
            c,
            events,
            options,
            moment_bounds,
        })
    }
}

/// Exact argmin of `v y_0 + sum_k Q_k y_k` over the option list; ties go to
/// the lowest index.
pub fn per_slot_decision(options: &[Vec<f64>], queues: &QueueState, v: f64) -> Result<usize> {
    if options.is_empty() {
        return Err(Error::InvalidInput("option list is empty".into()));
    }
    let k = queues.ineq.len();
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for (idx, y) in options.iter().enumerate() {
        if y.len() != k + 1 {
            return Err(Error::Dimension(format!(
                "option {idx} has length {}, queue state implies {}",
                y.len(),
                k + 1
            )));
        }
        let mut score = v * y[0];
        for j in 0..k {
            score += queues.ineq[j].value() * y[j + 1];
        }
        if score < best_score {
            best_score = score;
            best = idx;
        }
    }
    Ok(best)
}

/// One recorded slot of a stochastic run.
#[derive(Debug, Clone)]
pub struct StochasticSlot {
    pub event: usize,
    pub option: usize,
    pub y: Vec<f64>,
    pub q_after: Vec<f64>,
    /// Exact cumulative sum of y through this slot.
    pub cum_y: Vec<f64>,
}

/// Full trace of a stochastic run.
#[derive(Debug, Clone)]
pub struct StochasticTrace {
    pub k: usize,
    pub slots: Vec<StochasticSlot>,
}

impl StochasticTrace {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// `(1/t) sum_{tau < t} y_k(tau)` for component k over slots `0..t-1`.
pub fn time_average(trace: &StochasticTrace, t: usize, k: usize) -> Result<f64> {
    if t == 0 || t > trace.slots.len() {
        return Err(Error::Domain(format!(
            "t must be in 1..={}, got {t}",
            trace.slots.len()
        )));
    }
    if k > trace.k {
        return Err(Error::Domain(format!(
            "component index {k} out of range 0..={}",
            trace.k
        )));
    }
    Ok(trace.slots[t - 1].cum_y[k] / t as f64)
}

/// Runs `t_max` slots of drift-plus-penalty. Fully determined by
/// `(problem, v, t_max, seed)`.
pub fn run(problem: &StochasticProblem, v: f64, t_max: u64, seed: u64) -> Result<StochasticTrace> {
    if v <= 0.0 || !v.is_finite() {
        return Err(Error::Domain(format!("v must be positive, got {v}")));
    }
    if t_max == 0 {
        return Err(Error::Domain("t_max must be >= 1".into()));
    }
    let k = problem.k;
    let mut rng = SplitMix64::new(seed);
    let mut queues = QueueState::new(k, 0);
    let mut cum_y = vec![0.0; k + 1];
    let mut slots = Vec::with_capacity(t_max as usize);

    for _t in 0..t_max {
        let event = problem.events.sample(&mut rng);
        let opts = &problem.options.options[event];
        let option = per_slot_decision(opts, &queues, v)?;
        let y = opts[option].clone();
        for j in 0..k {
            queues.ineq[j].push(y[j + 1], problem.c[j])?;
        }
        for j in 0..k + 1 {
            cum_y[j] += y[j];
        }
        slots.push(StochasticSlot {
            event,
            option,
            y,
            q_after: queues.ineq_values(),
            cum_y: cum_y.clone(),
        });
    }

    Ok(StochasticTrace { k, slots })
}

/// Drift constant `B = max over (event, option) of (1/2) sum_k (y_k - c_k)^2`.
/// Dominates the expected per-slot drift term under any policy.
pub fn compute_b(problem: &StochasticProblem) -> f64 {
    let mut b: f64 = 0.0;
    for opts in &problem.options.options {
        for y in opts {
            let mut acc = 0.0;
            for j in 0..problem.k {
                let d = y[j + 1] - problem.c[j];
                acc += 0.5 * d * d;
            }
            b = b.max(acc);
        }
    }
    b
}

/// Multi-user wireless downlink model: i.i.d. arrivals per user, i.i.d.
/// channel states, a finite power alphabet per user, and a rate table over
/// (power vector, channel state).
#[derive(Debug, Clone)]
pub struct DownlinkModel {
    /// Per user: arrival alphabet values and their probabilities.
    pub arrival_values: Vec<Vec<f64>>,
    pub arrival_probs: Vec<Vec<f64>>,
    pub channel_states: Vec<String>,
    pub channel_probs: Vec<f64>,
    /// Per user: available power levels.
    pub power_levels: Vec<Vec<f64>>,
    /// `rates[channel][power_vector_index][user]`, power vectors enumerated
    /// in odometer order over the per-user levels (last user fastest).
    pub rates: Vec<Vec<Vec<f64>>>,
}

impl DownlinkModel {
    pub fn num_users(&self) -> usize {
        self.power_levels.len()
    }

    fn power_vectors(&self) -> Vec<Vec<f64>> {
        cartesian(&self.power_levels)
    }

    fn validate(&self) -> Result<()> {
        let users = self.num_users();
        if users == 0 {
            return Err(Error::InvalidInput("downlink model needs >= 1 user".into()));
        }
        if self.arrival_values.len() != users || self.arrival_probs.len() != users {
            return Err(Error::Dimension(
                "arrival model must cover every user".into(),
            ));
        }
        for u in 0..users {
            if self.arrival_values[u].is_empty() || self.power_levels[u].is_empty() {
                return Err(Error::InvalidInput(format!(
                    "user {u} has an empty arrival or power alphabet"
                )));
            }
            if self.arrival_values[u].len() != self.arrival_probs[u].len() {
                return Err(Error::Dimension(format!(
                    "user {u}: arrival values/probabilities length mismatch"
                )));
            }
            let total: f64 = self.arrival_probs[u].iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "user {u}: arrival probabilities sum to {total}, expected 1"
                )));
            }
        }
        if self.channel_states.is_empty() {
            return Err(Error::InvalidInput("channel alphabet is empty".into()));
        }
        if self.channel_states.len() != self.channel_probs.len() {
            return Err(Error::Dimension(
                "channel states/probabilities length mismatch".into(),
            ));
        }
        let total: f64 = self.channel_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "channel probabilities sum to {total}, expected 1"
            )));
        }
        let num_pv = self.power_vectors().len();
        if self.rates.len() != self.channel_states.len() {
            return Err(Error::Dimension(
                "rate table must have one row per channel state".into(),
            ));
        }
        for (s, per_pv) in self.rates.iter().enumerate() {
            if per_pv.len() != num_pv {
                return Err(Error::Dimension(format!(
                    "rate table for channel '{}' covers {} power vectors, expected {num_pv}",
                    self.channel_states[s],
                    per_pv.len()
                )));
            }
            for row in per_pv {
                if row.len() != users {
                    return Err(Error::Dimension(
                        "rate table row must have one rate per user".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Builds the downlink power-minimization problem: events are
/// (arrival vector, channel state) pairs, options are power vectors with
/// `y_0 = sum p_u` and `y_u = a_u - rate_u(p, S)`, and `c_u = 0`.
pub fn build_downlink_problem(model: &DownlinkModel) -> Result<StochasticProblem> {
    model.validate()?;
    let users = model.num_users();
    let power_vectors = model.power_vectors();
    let arrival_combos = cartesian(&model.arrival_values);
    let arrival_probs = cartesian(&model.arrival_probs);

    let mut events = Vec::new();
    let mut probs = Vec::new();
    let mut options = Vec::new();
    for (ai, arrivals) in arrival_combos.iter().enumerate() {
        let pa: f64 = arrival_probs[ai].iter().product();
        for (s, state) in model.channel_states.iter().enumerate() {
            events.push(format!("a={arrivals:?};S={state}"));
            probs.push(pa * model.channel_probs[s]);
            let mut opts = Vec::with_capacity(power_vectors.len());
            for (pv, power) in power_vectors.iter().enumerate() {
                let mut y = Vec::with_capacity(users + 1);
                y.push(power.iter().sum::<f64>());
                for u in 0..users {
                    y.push(arrivals[u] - model.rates[s][pv][u]);
                }
                opts.push(y);
            }
            options.push(opts);
        }
    }

    StochasticProblem::new(
        users,
        vec![0.0; users],
        RandomEventModel::new(events, probs)?,
        DecisionOptionSet { options },
    )
}

/// Arrival-averaged reduction of a downlink model for the oracle.
///
/// Arrivals enter `y_u = a_u - rate_u` additively and do not change the
/// option structure, so mixing over arrival realizations never helps: the
/// achievable expectation set, and hence the optimum, is unchanged when
/// events are collapsed to channel states and `a_u` is replaced by its mean.
/// This keeps the oracle's simplex-product search desk-scale.
pub fn downlink_oracle_problem(model: &DownlinkModel) -> Result<StochasticProblem> {
    model.validate()?;
    let users = model.num_users();
    let power_vectors = model.power_vectors();
    let mean_arrivals: Vec<f64> = (0..users)
        .map(|u| {
            model.arrival_values[u]
                .iter()
                .zip(&model.arrival_probs[u])
                .map(|(a, p)| a * p)
                .sum()
        })
        .collect();

    let mut options = Vec::new();
    for s in 0..model.channel_states.len() {
        let mut opts = Vec::with_capacity(power_vectors.len());
        for (pv, power) in power_vectors.iter().enumerate() {
            let mut y = Vec::with_capacity(users + 1);
            y.push(power.iter().sum::<f64>());
            for u in 0..users {
                y.push(mean_arrivals[u] - model.rates[s][pv][u]);
            }
            opts.push(y);
        }
        options.push(opts);
    }

    StochasticProblem::new(
        users,
        vec![0.0; users],
        RandomEventModel::new(model.channel_states.clone(), model.channel_probs.clone())?,
        DecisionOptionSet { options },
    )
}

/// Worked example: two users, two-state channel, on/off power per user.
/// Bernoulli(0.3) arrivals; each channel state favors one user (rate 1.0 vs
/// 0.5). Useful as a small end-to-end fixture.
pub fn two_user_downlink() -> DownlinkModel {
    DownlinkModel {
        arrival_values: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        arrival_probs: vec![vec![0.7, 0.3], vec![0.7, 0.3]],
        channel_states: vec!["s0".into(), "s1".into()],
        channel_probs: vec![0.5, 0.5],
        power_levels: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        // Power vectors in odometer order: (0,0), (0,1), (1,0), (1,1).
        rates: vec![
            vec![
                vec![0.0, 0.0],
                vec![0.0, 0.5],
                vec![1.0, 0.0],
                vec![1.0, 0.5],
            ],
            vec![
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![0.5, 0.0],
                vec![0.5, 1.0],
            ],
        ],
    }
}

fn cartesian(alphabets: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for alphabet in alphabets {
        let mut next = Vec::with_capacity(out.len() * alphabet.len());
        for prefix in &out {
            for &v in alphabet {
                let mut row = prefix.clone();
                row.push(v);
                next.push(row);
            }
        }
        out = next;
    }
    out
}

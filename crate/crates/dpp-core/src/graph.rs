//! Decentralized drift-plus-penalty over a directed graph.
//!
//! Each node keeps a private copy `theta^(n)` of the shared variables,
//! equalized across links by signed consensus queues `Z^(n,j)_i` owned by the
//! link's source node. Rounds are synchronous: every node decides from
//! round-start state, neighbors exchange `theta` messages, then all queues
//! update. A node's decision minimizes
//!
//! ```text
//! V f^(n)(x, theta) + Q^(n) g^(n)(x, theta)
//!   + sum_i theta_i [ sum_{(n,j)} Z_i^(n,j) - sum_{(a,n)} Z_i^(a,n) ]
//! ```
//!
//! over its local box times the shared box, using only its own state and
//! values received from graph neighbors.

use std::collections::HashSet;
use std::sync::Arc;

use crate::convex::{
    inner_minimize, Affine, ConvexFn, ConvexProgram, FeasibleSet, IndexedFn, InnerSolverParams,
    SumFn, WeightedSum,
};
use crate::error::{Error, Result};
use crate::queue::{EqualityQueue, InequalityQueue};

/// Directed graph on nodes `0..n`. The undirected version must be connected.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    pub n: usize,
    pub links: Vec<(usize, usize)>,
}

impl GraphTopology {
    pub fn new(n: usize, links: Vec<(usize, usize)>) -> Result<Self> {
        let topology = GraphTopology { n, links };
        topology.validate()?;
        Ok(topology)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("graph needs >= 1 node".into()));
        }
        let mut seen = HashSet::new();
        for &(a, b) in &self.links {
            if a >= self.n || b >= self.n {
                return Err(Error::InvalidInput(format!(
                    "link ({a}, {b}) references a node outside 0..{}",
                    self.n
                )));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at node {a}")));
            }
            if !seen.insert((a, b)) {
                return Err(Error::InvalidInput(format!("duplicate link ({a}, {b})")));
            }
        }
        if !self.is_connected() {
            return Err(Error::InvalidInput(
                "the undirected version of the graph must be connected".into(),
            ));
        }
        Ok(())
    }

    /// BFS over the undirected version.
    fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.links {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut visited = vec![false; self.n];
        let mut frontier = vec![0usize];
        visited[0] = true;
        let mut count = 1;
        while let Some(u) = frontier.pop() {
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    count += 1;
                    frontier.push(v);
                }
            }
        }
        count == self.n
    }

    /// Outgoing links of node `n`, in declaration order.
    pub fn out_links(&self, n: usize) -> Vec<usize> {
        self.links
            .iter()
            .filter(|&&(a, _)| a == n)
            .map(|&(_, b)| b)
            .collect()
    }

    /// Incoming links of node `n`, in declaration order.
    pub fn in_links(&self, n: usize) -> Vec<usize> {
        self.links
            .iter()
            .filter(|&&(_, b)| b == n)
            .map(|&(a, _)| a)
            .collect()
    }

    /// Union of in- and out-neighbors.
    pub fn neighbors(&self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &(a, b) in &self.links {
            let other = if a == n {
                b
            } else if b == n {
                a
            } else {
                continue;
            };
            if !out.contains(&other) {
                out.push(other);
            }
        }
        out
    }
}

/// Per-node program. `f` and `g` act on the concatenation `[x_local; theta]`.
pub struct NodeProgram {
    pub local_set: FeasibleSet,
    pub f: Arc<dyn ConvexFn>,
    pub g: Arc<dyn ConvexFn>,
    pub c: f64,
}

impl NodeProgram {
    pub fn local_dim(&self) -> usize {
        self.local_set.dim()
    }
}

/// A distributed problem: a topology, the shared-variable box, one program
/// per node.
pub struct GraphProblem {
    pub topology: GraphTopology,
    pub theta_set: FeasibleSet,
    pub nodes: Vec<NodeProgram>,
}

impl GraphProblem {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.nodes.len() != self.topology.n {
            return Err(Error::Dimension(format!(
                "{} node programs for a {}-node graph",
                self.nodes.len(),
                self.topology.n
            )));
        }
        if !matches!(self.theta_set, FeasibleSet::Box { .. }) {
            return Err(Error::InvalidInput(
                "shared-variable set must be a box".into(),
            ));
        }
        for (n, node) in self.nodes.iter().enumerate() {
            if !matches!(node.local_set, FeasibleSet::Box { .. }) {
                return Err(Error::InvalidInput(format!(
                    "node {n}: local set must be a box"
                )));
            }
            if !node.c.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "node {n}: constraint constant must be finite"
                )));
            }
        }
        Ok(())
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_set.dim()
    }

    /// Decision set of node `n`: local box times shared box.
    pub fn node_set(&self, n: usize) -> Result<FeasibleSet> {
        self.nodes[n].local_set.concat_boxes(&self.theta_set)
    }
}

/// Everything a node may read when making its round decision. Carrying the
/// inputs in a dedicated struct keeps the decision local by construction:
/// there is no handle to other nodes' programs or queues.
pub struct NodeView<'a> {
    pub program: &'a NodeProgram,
    pub set: &'a FeasibleSet,
    pub theta_dim: usize,
    pub q: f64,
    /// Own consensus queue values, one vector of length G per outgoing link.
    pub z_out: &'a [Vec<f64>],
    /// Consensus queue values received from in-neighbors, one per incoming link.
    pub z_in: &'a [Vec<f64>],
}

/// One node's round decision `(x^(n), theta^(n))`, returned concatenated.
pub fn node_local_decision(view: &NodeView, v: f64, inner: &InnerSolverParams) -> Result<Vec<f64>> {
    let local_dim = view.program.local_dim();
    let g = view.theta_dim;
    let dim = local_dim + g;
    let mut terms: Vec<(f64, Arc<dyn ConvexFn>)> = Vec::with_capacity(3);
    terms.push((v, Arc::clone(&view.program.f)));
    terms.push((view.q, Arc::clone(&view.program.g)));
    if !view.z_out.is_empty() || !view.z_in.is_empty() {
        let mut net = vec![0.0; dim];
        for z in view.z_out {
            for i in 0..g {
                net[local_dim + i] += z[i];
            }
        }
        for z in view.z_in {
            for i in 0..g {
                net[local_dim + i] -= z[i];
            }
        }
        terms.push((1.0, Arc::new(Affine::new(net, 0.0)?)));
    }
    let objective = WeightedSum::new(terms, dim);
    inner_minimize(&objective, view.set, inner)
}

/// A `theta` payload exchanged at the synchronous barrier.
#[derive(Debug, Clone)]
pub struct ThetaMessage {
    pub from: usize,
    pub to: usize,
    pub theta: Vec<f64>,
}

/// Live state of one node between rounds.
pub struct NodeState {
    pub q: InequalityQueue,
    /// One queue vector per outgoing link, indexed like `out_links`.
    pub z_out: Vec<Vec<EqualityQueue>>,
    /// Last received queue values per incoming link, indexed like `in_links`.
    pub z_in: Vec<Vec<f64>>,
}

/// Per-round record for one node.
#[derive(Debug, Clone)]
pub struct NodeSlot {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub f_val: f64,
    pub g_val: f64,
    pub q_after: f64,
    /// Queue values per outgoing link after the update.
    pub z_after: Vec<Vec<f64>>,
    pub cum_x: Vec<f64>,
    pub cum_theta: Vec<f64>,
    pub cum_f: f64,
    pub cum_g: f64,
}

/// Full trace of one node across a distributed run.
#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub local_dim: usize,
    pub theta_dim: usize,
    pub slots: Vec<NodeSlot>,
}

impl NodeTrace {
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

    pub fn avg_x(&self, t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        Ok(self.slots[t - 1]
            .cum_x
            .iter()
            .map(|s| s / t as f64)
            .collect())
    }

    pub fn avg_theta(&self, t: usize) -> Result<Vec<f64>> {
        self.check_t(t)?;
        Ok(self.slots[t - 1]
            .cum_theta
            .iter()
            .map(|s| s / t as f64)
            .collect())
    }
}

/// Trace of the whole run, one `NodeTrace` per node.
pub struct DistributedTrace {
    pub nodes: Vec<NodeTrace>,
}

impl DistributedTrace {
    pub fn len(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.slots.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn initial_state(problem: &GraphProblem) -> Vec<NodeState> {
    let g = problem.theta_dim();
    (0..problem.topology.n)
        .map(|n| NodeState {
            q: InequalityQueue::new(),
            z_out: problem
                .topology
                .out_links(n)
                .iter()
                .map(|_| vec![EqualityQueue::new(); g])
                .collect(),
            z_in: problem
                .topology
                .in_links(n)
                .iter()
                .map(|_| vec![0.0; g])
                .collect(),
        })
        .collect()
}

/// All round decisions, computed from round-start state only.
fn round_decisions(
    problem: &GraphProblem,
    states: &[NodeState],
    sets: &[FeasibleSet],
    v: f64,
    inner: &InnerSolverParams,
    round_idx: u64,
) -> Result<Vec<Vec<f64>>> {
    let g = problem.theta_dim();
    let mut decisions = Vec::with_capacity(problem.topology.n);
    for n in 0..problem.topology.n {
        let z_out: Vec<Vec<f64>> = states[n]
            .z_out
            .iter()
            .map(|qs| qs.iter().map(|q| q.value()).collect())
            .collect();
        let view = NodeView {
            program: &problem.nodes[n],
            set: &sets[n],
            theta_dim: g,
            q: states[n].q.value(),
            z_out: &z_out,
            z_in: &states[n].z_in,
        };
        let x = node_local_decision(&view, v, inner)
            .map_err(|e| Error::Numerical(format!("node {n}, round {round_idx}: {e}")))?;
        decisions.push(x);
    }
    Ok(decisions)
}

/// The `theta` payloads of a round: each node sends its chosen `theta` to
/// every graph neighbor.
pub fn make_theta_messages(
    topology: &GraphTopology,
    decisions: &[Vec<f64>],
    local_dims: &[usize],
) -> Vec<ThetaMessage> {
    let mut messages = Vec::new();
    for n in 0..topology.n {
        let theta = decisions[n][local_dims[n]..].to_vec();
        for j in topology.neighbors(n) {
            messages.push(ThetaMessage {
                from: n,
                to: j,
                theta: theta.clone(),
            });
        }
    }
    messages
}

/// Applies the end-of-round queue updates given the exchanged messages.
///
/// The owner of link `(n, j)` updates each `Z^(n,j)_i` with
/// `theta_i^(n) - theta_i^(j)`, which requires the message from `j`;
/// a missing message aborts the round with a protocol error naming the link.
pub fn apply_round_updates(
    problem: &GraphProblem,
    states: &mut [NodeState],
    decisions: &[Vec<f64>],
    messages: &[ThetaMessage],
) -> Result<()> {
    let g = problem.theta_dim();
    for n in 0..problem.topology.n {
        let y = problem.nodes[n].g.eval(&decisions[n]);
        states[n].q.push(y, problem.nodes[n].c)?;
        let local_dim = problem.nodes[n].local_dim();
        let own_theta = &decisions[n][local_dim..];
        let outs = problem.topology.out_links(n);
        for (slot, &j) in outs.iter().enumerate() {
            let msg = messages
                .iter()
                .find(|m| m.from == j && m.to == n)
                .ok_or_else(|| {
                    Error::Protocol(format!(
                        "round update for link ({n}, {j}): no theta message from node {j}"
                    ))
                })?;
            if msg.theta.len() != g {
                return Err(Error::Protocol(format!(
                    "theta message from node {j} has dimension {}, expected {g}",
                    msg.theta.len()
                )));
            }
            for i in 0..g {
                states[n].z_out[slot][i].push(own_theta[i] - msg.theta[i], 0.0)?;
            }
        }
    }
    // Deliver updated queue values to each link's sink for the next round.
    for n in 0..problem.topology.n {
        let ins = problem.topology.in_links(n);
        for (slot, &a) in ins.iter().enumerate() {
            let a_outs = problem.topology.out_links(a);
            let a_slot = a_outs.iter().position(|&b| b == n).expect("link exists");
            for i in 0..g {
                states[n].z_in[slot][i] = states[a].z_out[a_slot][i].value();
            }
        }
    }
    Ok(())
}

/// Runs `t_max` synchronous rounds from zero-initialized queues.
pub fn run_distributed(
    problem: &GraphProblem,
    v: f64,
    t_max: u64,
    inner: &InnerSolverParams,
) -> Result<DistributedTrace> {
    problem.validate()?;
    if v <= 0.0 || !v.is_finite() {
        return Err(Error::Domain(format!("v must be positive, got {v}")));
    }
    if t_max == 0 {
        return Err(Error::Domain("t_max must be >= 1".into()));
    }
    let g = problem.theta_dim();
    let nn = problem.topology.n;
    let sets: Vec<FeasibleSet> = (0..nn)
        .map(|n| problem.node_set(n))
        .collect::<Result<_>>()?;
    let local_dims: Vec<usize> = (0..nn).map(|n| problem.nodes[n].local_dim()).collect();
    let mut states = initial_state(problem);
    let mut traces: Vec<NodeTrace> = (0..nn)
        .map(|n| NodeTrace {
            local_dim: local_dims[n],
            theta_dim: g,
            slots: Vec::with_capacity(t_max as usize),
        })
        .collect();
    let mut cum_x: Vec<Vec<f64>> = local_dims.iter().map(|&d| vec![0.0; d]).collect();
    let mut cum_theta = vec![vec![0.0; g]; nn];
    let mut cum_f = vec![0.0; nn];
    let mut cum_g = vec![0.0; nn];

    for t in 0..t_max {
        let decisions = round_decisions(problem, &states, &sets, v, inner, t)?;
        let messages = make_theta_messages(&problem.topology, &decisions, &local_dims);
        apply_round_updates(problem, &mut states, &decisions, &messages)?;

        for n in 0..nn {
            let local_dim = local_dims[n];
            let x = decisions[n][..local_dim].to_vec();
            let theta = decisions[n][local_dim..].to_vec();
            let f_val = problem.nodes[n].f.eval(&decisions[n]);
            let g_val = problem.nodes[n].g.eval(&decisions[n]);
            for i in 0..local_dim {
                cum_x[n][i] += x[i];
            }
            for i in 0..g {
                cum_theta[n][i] += theta[i];
            }
            cum_f[n] += f_val;
            cum_g[n] += g_val;
            traces[n].slots.push(NodeSlot {
                x,
                theta,
                f_val,
                g_val,
                q_after: states[n].q.value(),
                z_after: states[n]
                    .z_out
                    .iter()
                    .map(|qs| qs.iter().map(|q| q.value()).collect())
                    .collect(),
                cum_x: cum_x[n].clone(),
                cum_theta: cum_theta[n].clone(),
                cum_f: cum_f[n],
                cum_g: cum_g[n],
            });
        }
    }

    Ok(DistributedTrace { nodes: traces })
}

/// Consensus health of a run at time t.
#[derive(Debug, Clone)]
pub struct ConsensusSummary {
    /// Max over node pairs of the Euclidean gap between averaged thetas.
    pub max_pairwise_theta_gap: f64,
    /// `sum_n f^(n)(xbar^(n), thetabar^(n))`.
    pub sum_objective: f64,
    /// Max over nodes of `max(g^(n)(xbar, thetabar) - c^(n), 0)`.
    pub max_constraint_violation: f64,
}

pub fn consensus_summary(
    problem: &GraphProblem,
    trace: &DistributedTrace,
    t: usize,
) -> Result<ConsensusSummary> {
    let nn = problem.topology.n;
    let mut avgs = Vec::with_capacity(nn);
    for n in 0..nn {
        let mut point = trace.nodes[n].avg_x(t)?;
        point.extend(trace.nodes[n].avg_theta(t)?);
        avgs.push(point);
    }
    let mut max_gap: f64 = 0.0;
    for n in 0..nn {
        let local_n = problem.nodes[n].local_dim();
        for m in n + 1..nn {
            let local_m = problem.nodes[m].local_dim();
            let gap: f64 = avgs[n][local_n..]
                .iter()
                .zip(&avgs[m][local_m..])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max_gap = max_gap.max(gap);
        }
    }
    let mut sum_objective = 0.0;
    let mut max_violation: f64 = 0.0;
    for n in 0..nn {
        sum_objective += problem.nodes[n].f.eval(&avgs[n]);
        let violation = problem.nodes[n].g.eval(&avgs[n]) - problem.nodes[n].c;
        max_violation = max_violation.max(violation.max(0.0));
    }
    Ok(ConsensusSummary {
        max_pairwise_theta_gap: max_gap,
        sum_objective,
        max_constraint_violation: max_violation,
    })
}

/// Centralized program equivalent to a distributed instance: variables
/// `[x^(0); ...; x^(N-1); theta]`, objective `sum_n f^(n)`, one inequality
/// per node. Used by the oracle to compute the ground-truth optimum.
pub fn centralized_equivalent(problem: &GraphProblem) -> Result<ConvexProgram> {
    problem.validate()?;
    let nn = problem.topology.n;
    let g = problem.theta_dim();
    let mut offsets = Vec::with_capacity(nn);
    let mut total_local = 0usize;
    for node in &problem.nodes {
        offsets.push(total_local);
        total_local += node.local_dim();
    }
    let dim = total_local + g;
    let theta_indices: Vec<usize> = (total_local..dim).collect();

    let mut set = FeasibleSet::boxed(vec![], vec![])?;
    for node in &problem.nodes {
        set = set.concat_boxes(&node.local_set)?;
    }
    set = set.concat_boxes(&problem.theta_set)?;

    let mut f_terms: Vec<Arc<dyn ConvexFn>> = Vec::with_capacity(nn);
    let mut gs: Vec<Arc<dyn ConvexFn>> = Vec::with_capacity(nn);
    let mut cs = Vec::with_capacity(nn);
    for (n, node) in problem.nodes.iter().enumerate() {
        let mut indices: Vec<usize> = (offsets[n]..offsets[n] + node.local_dim()).collect();
        indices.extend_from_slice(&theta_indices);
        f_terms.push(Arc::new(IndexedFn {
            inner: Arc::clone(&node.f),
            indices: indices.clone(),
            outer_dim: dim,
        }));
        gs.push(Arc::new(IndexedFn {
            inner: Arc::clone(&node.g),
            indices,
            outer_dim: dim,
        }));
        cs.push(node.c);
    }

    Ok(ConvexProgram {
        f: Arc::new(SumFn {
            terms: f_terms,
            dim,
        }),
        g: gs,
        c: cs,
        w: vec![],
        d: vec![],
        set,
        g_ranges: None,
    })
}

/// A distributed instance whose nodes share one summed constraint
/// `sum_n g^(n)(x^(n), theta) <= c` instead of per-node constraints.
pub struct SharedConstraintProblem {
    pub topology: GraphTopology,
    pub theta_set: FeasibleSet,
    pub local_sets: Vec<FeasibleSet>,
    /// `f[n]` and `g[n]` act on `[x^(n); theta]`.
    pub f: Vec<Arc<dyn ConvexFn>>,
    pub g: Vec<Arc<dyn ConvexFn>>,
    pub c: f64,
}

/// The replicated form of a shared-constraint instance, plus the index map
/// needed to read replicas back out of the extended shared vector.
pub struct ReplicatedProblem {
    pub problem: GraphProblem,
    /// Dimension of the original shared vector, stored first in the
    /// extended one.
    pub theta_dim: usize,
    /// Offset of node n's replica block inside the extended shared vector.
    pub replica_offsets: Vec<usize>,
    pub replica_dims: Vec<usize>,
}

impl ReplicatedProblem {
    /// Node `holder`'s averaged replica of node `n`'s local variables.
    pub fn replica_average(
        &self,
        trace: &DistributedTrace,
        holder: usize,
        n: usize,
        t: usize,
    ) -> Result<Vec<f64>> {
        let theta = trace.nodes[holder].avg_theta(t)?;
        let start = self.replica_offsets[n];
        Ok(theta[start..start + self.replica_dims[n]].to_vec())
    }
}

/// Replicated-variable transformation for one summed constraint.
///
/// Every node's local variables move into an extended shared vector
/// `[theta; x^(0); ...; x^(N-1)]`; each node then holds a full replica and
/// consensus queues equalize the replicas exactly like the plain shared
/// variables. Node 0 alone carries the summed constraint's queue, evaluated
/// on its own replicas; the other nodes get the zero constraint, whose queue
/// stays at 0.
pub fn replicate_shared_constraint(input: &SharedConstraintProblem) -> Result<ReplicatedProblem> {
    input.topology.validate()?;
    let nn = input.topology.n;
    if input.local_sets.len() != nn || input.f.len() != nn || input.g.len() != nn {
        return Err(Error::Dimension(format!(
            "shared-constraint instance must provide a set, f, and g per node ({nn} nodes)"
        )));
    }
    if !input.c.is_finite() {
        return Err(Error::InvalidInput(
            "constraint constant must be finite".into(),
        ));
    }
    let g_dim = input.theta_set.dim();
    let mut replica_offsets = Vec::with_capacity(nn);
    let mut replica_dims = Vec::with_capacity(nn);
    let mut extended_set = input.theta_set.clone();
    let mut offset = g_dim;
    for set in &input.local_sets {
        replica_offsets.push(offset);
        replica_dims.push(set.dim());
        offset += set.dim();
        extended_set = extended_set.concat_boxes(set)?;
    }
    let extended_dim = offset;
    let empty_box = FeasibleSet::boxed(vec![], vec![])?;
    let zero_fn: Arc<dyn ConvexFn> = Arc::new(Affine::new(vec![0.0; extended_dim], 0.0)?);

    // f^(n) and g^(n) expect [x^(n); theta]; inside the extended vector the
    // replica block sits at replica_offsets[n] and theta at the front.
    let indices_for = |n: usize| -> Vec<usize> {
        let mut idx: Vec<usize> =
            (replica_offsets[n]..replica_offsets[n] + replica_dims[n]).collect();
        idx.extend(0..g_dim);
        idx
    };

    let mut nodes = Vec::with_capacity(nn);
    for m in 0..nn {
        let f: Arc<dyn ConvexFn> = Arc::new(IndexedFn {
            inner: Arc::clone(&input.f[m]),
            indices: indices_for(m),
            outer_dim: extended_dim,
        });
        let (g, c) = if m == 0 {
            let terms: Vec<Arc<dyn ConvexFn>> = (0..nn)
                .map(|n| {
                    Arc::new(IndexedFn {
                        inner: Arc::clone(&input.g[n]),
                        indices: indices_for(n),
                        outer_dim: extended_dim,
                    }) as Arc<dyn ConvexFn>
                })
                .collect();
            (
                Arc::new(SumFn {
                    terms,
                    dim: extended_dim,
                }) as Arc<dyn ConvexFn>,
                input.c,
            )
        } else {
            (Arc::clone(&zero_fn), 0.0)
        };
        nodes.push(NodeProgram {
            local_set: empty_box.clone(),
            f,
            g,
            c,
        });
    }

    Ok(ReplicatedProblem {
        problem: GraphProblem {
            topology: input.topology.clone(),
            theta_set: extended_set,
            nodes,
        },
        theta_dim: g_dim,
        replica_offsets,
        replica_dims,
    })
}

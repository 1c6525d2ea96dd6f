//! Property tests for the structural invariants every run must satisfy,
//! regardless of problem data: queue nonnegativity, the queue-dominates-
//! cumulative-violation identity, telescoping consensus queues, exact
//! per-slot argmins, Jensen on running averages, and average bookkeeping.

use std::sync::Arc;

use proptest::prelude::*;

use dpp_core::convex::{
    jensen_check, run_convex, Affine, ConvexFn, ConvexProgram, DiagQuadratic, FeasibleSet,
    InnerSolverParams,
};
use dpp_core::graph::{run_distributed, GraphProblem, GraphTopology, NodeProgram};
use dpp_core::lp::{run_lp, LinearProgram};
use dpp_core::oracle::{solve_static, static_optimum_grid};
use dpp_core::queue::{queue_norm_bound, QueueState};
use dpp_core::stochastic::{
    per_slot_decision, run, DecisionOptionSet, RandomEventModel, StochasticProblem,
};

fn small_lp() -> impl Strategy<Value = LinearProgram> {
    (1usize..=3, 1usize..=2).prop_flat_map(|(n, m)| {
        (
            proptest::collection::vec(-2.0f64..2.0, n),
            proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, n), m),
            proptest::collection::vec(-1.0f64..1.0, m),
        )
            .prop_map(move |(b, a, c)| LinearProgram {
                b,
                a,
                c,
                x_min: vec![0.0; n],
                x_max: vec![1.0; n],
            })
    })
}

fn stochastic_problem() -> impl Strategy<Value = StochasticProblem> {
    (1usize..=2, 1usize..=3, 1usize..=4).prop_flat_map(|(k, n_events, n_opts)| {
        (
            proptest::collection::vec(0.05f64..1.0, n_events),
            proptest::collection::vec(
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, k + 1), n_opts),
                n_events,
            ),
            proptest::collection::vec(-1.0f64..1.0, k),
        )
            .prop_map(move |(weights, options, c)| {
                let total: f64 = weights.iter().sum();
                let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let events = (0..probs.len()).map(|i| format!("e{i}")).collect();
                StochasticProblem::new(
                    k,
                    c,
                    RandomEventModel::new(events, probs).unwrap(),
                    DecisionOptionSet { options },
                )
                .unwrap()
            })
    })
}

fn quadratic_program() -> impl Strategy<Value = ConvexProgram> {
    (1usize..=2).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..2.0, n),
            proptest::collection::vec(-2.0f64..2.0, n),
            proptest::collection::vec(-2.0f64..2.0, n),
            -0.5f64..1.5,
        )
            .prop_map(move |(q, a, ga, c)| ConvexProgram {
                f: Arc::new(DiagQuadratic::new(q, a, 0.0).unwrap()),
                g: vec![Arc::new(Affine::new(ga, 0.0).unwrap()) as Arc<dyn ConvexFn>],
                c: vec![c],
                w: vec![],
                d: vec![],
                set: FeasibleSet::boxed(vec![0.0; n], vec![1.0; n]).unwrap(),
                g_ranges: None,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Inequality queues never go negative and always dominate the cumulative
    // constraint violation: Q_k(t) >= sum_{tau<=t} (y_k(tau) - c_k).
    #[test]
    fn lp_queues_dominate_cumulative_violation(
        lp in small_lp(),
        v in 1.0f64..50.0,
    ) {
        let trace = run_lp(&lp, v, 200).unwrap();
        for (i, slot) in trace.slots.iter().enumerate() {
            let t = (i + 1) as f64;
            for k in 0..trace.k {
                prop_assert!(slot.q_after[k] >= 0.0);
                let cum_violation = slot.cum_y[k + 1] - lp.c[k] * t;
                prop_assert!(slot.q_after[k] >= cum_violation - 1e-9 * t);
            }
        }
    }

    // LP decisions sit on box corners; running averages therefore stay in
    // the box, and the incremental average tracks the exact one.
    #[test]
    fn lp_averages_stay_in_box(lp in small_lp(), v in 1.0f64..50.0) {
        let trace = run_lp(&lp, v, 150).unwrap();
        for (i, slot) in trace.slots.iter().enumerate() {
            for (j, &xj) in slot.x.iter().enumerate() {
                prop_assert!(xj == lp.x_min[j] || xj == lp.x_max[j]);
            }
            let t = i + 1;
            let exact = trace.avg_x_exact(t).unwrap();
            let incr = trace.avg_x_incremental(t).unwrap();
            for j in 0..exact.len() {
                prop_assert!(exact[j] >= lp.x_min[j] - 1e-12);
                prop_assert!(exact[j] <= lp.x_max[j] + 1e-12);
                prop_assert!((exact[j] - incr[j]).abs() <= 1e-12 * t as f64);
            }
        }
    }

    // The stochastic per-slot pick always attains the enumerated minimum of
    // v y_0 + sum Q_k y_k, with exact float equality.
    #[test]
    fn stochastic_pick_attains_enumerated_minimum(
        problem in stochastic_problem(),
        qs in proptest::collection::vec(0.0f64..30.0, 2),
        v in 0.5f64..40.0,
    ) {
        let k = problem.k;
        let mut queues = QueueState::new(k, 0);
        for (queue, &q) in queues.ineq.iter_mut().zip(&qs) {
            queue.push(q, 0.0).unwrap();
        }
        for options in &problem.options.options {
            let picked = per_slot_decision(options, &queues, v).unwrap();
            let score = |y: &[f64]| {
                let mut s = v * y[0];
                for j in 0..k {
                    s += queues.ineq[j].value() * y[j + 1];
                }
                s
            };
            let best = options.iter().map(|y| score(y)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(score(&options[picked]), best);
        }
    }

    // Stochastic runs: queues nonnegative, queue dominates cumulative
    // violation, identical seeds replay identically.
    #[test]
    fn stochastic_run_invariants(
        problem in stochastic_problem(),
        v in 0.5f64..40.0,
        seed in 0u64..1000,
    ) {
        let trace = run(&problem, v, 300, seed).unwrap();
        for (i, slot) in trace.slots.iter().enumerate() {
            let t = (i + 1) as f64;
            for k in 0..problem.k {
                prop_assert!(slot.q_after[k] >= 0.0);
                let cum_violation = slot.cum_y[k + 1] - problem.c[k] * t;
                prop_assert!(slot.q_after[k] >= cum_violation - 1e-9 * t);
            }
        }
        let replay = run(&problem, v, 300, seed).unwrap();
        for (a, b) in trace.slots.iter().zip(&replay.slots) {
            prop_assert_eq!(a.event, b.event);
            prop_assert_eq!(a.option, b.option);
        }
    }

    // Jensen: f(xbar) <= avg y_0 and g(xbar) <= avg y_k on every convex run.
    #[test]
    fn jensen_holds_on_convex_runs(program in quadratic_program(), v in 1.0f64..30.0) {
        let trace = run_convex(&program, v, 120, &InnerSolverParams::default()).unwrap();
        for t in [1usize, 7, 60, 120] {
            let report = jensen_check(&program, &trace, t).unwrap();
            prop_assert!(report.max_violation <= 1e-9, "violation {}", report.max_violation);
        }
    }

    // The queue-norm envelope is monotone in t, B, and the multiplier norm.
    #[test]
    fn queue_norm_envelope_monotone(
        v in 1.0f64..100.0,
        mu in 0.0f64..5.0,
        b in 0.01f64..5.0,
        t in 1u64..10_000,
    ) {
        let base = queue_norm_bound(v, mu, b, t).unwrap();
        prop_assert!(queue_norm_bound(v, mu, b, t + 1).unwrap() >= base);
        prop_assert!(queue_norm_bound(v, mu + 0.1, b, t).unwrap() >= base);
        prop_assert!(queue_norm_bound(v, mu, b + 0.1, t).unwrap() >= base);
    }

    // Consensus queues telescope exactly: Z^(n,j)(t) = t (avg gap) on every
    // link of a random 2-node or 3-node topology.
    #[test]
    fn consensus_queues_telescope(
        targets in proptest::collection::vec(0.0f64..1.0, 2..=3),
        v in 1.0f64..30.0,
    ) {
        let n = targets.len();
        let links: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let problem = GraphProblem {
            topology: GraphTopology::new(n, links).unwrap(),
            theta_set: FeasibleSet::boxed(vec![0.0], vec![1.0]).unwrap(),
            nodes: targets
                .iter()
                .map(|&p| NodeProgram {
                    local_set: FeasibleSet::boxed(vec![], vec![]).unwrap(),
                    f: Arc::new(DiagQuadratic::new(vec![1.0], vec![-2.0 * p], p * p).unwrap()),
                    g: Arc::new(Affine::new(vec![0.0], 0.0).unwrap()),
                    c: 1.0,
                })
                .collect(),
        };
        let trace = run_distributed(&problem, v, 100, &InnerSolverParams::default()).unwrap();
        for node in 0..n {
            let sinks = problem.topology.out_links(node);
            for t in [1usize, 13, 100] {
                let slot = &trace.nodes[node].slots[t - 1];
                for (li, &j) in sinks.iter().enumerate() {
                    let gap = slot.cum_theta[0] - trace.nodes[j].slots[t - 1].cum_theta[0];
                    prop_assert!((slot.z_after[li][0] - gap).abs() <= 1e-9 * t as f64);
                }
            }
        }
    }
}

proptest! {
    // Grid refinement is expensive; fewer cases.
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Refining the oracle grid never reports a worse optimum (beyond its own
    // error bar), and the grid value always upper-bounds the true optimum.
    #[test]
    fn oracle_refinement_is_monotone(program in quadratic_program()) {
        let coarse = static_optimum_grid(&program, 0.05);
        let fine = static_optimum_grid(&program, 0.01);
        if let (Ok(coarse), Ok(fine)) = (coarse, fine) {
            prop_assert!(fine.optimum <= coarse.optimum + coarse.error_bar + 1e-9);
            let full = solve_static(&program, 0.01).unwrap();
            prop_assert!((full.optimum - fine.optimum).abs() <= 1e-12);
        }
    }
}

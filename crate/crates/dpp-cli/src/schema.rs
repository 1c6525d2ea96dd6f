//! JSON problem-file schema.
//!
//! A problem file is a single JSON document with a `kind` discriminator.
//! Function specs are declarative (affine / diagonal-quadratic only) so a
//! problem corpus never executes arbitrary code; richer functions are
//! library-API-only.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use dpp_core::convex::{Affine, ConvexFn, ConvexProgram, DiagQuadratic, FeasibleSet};
use dpp_core::graph::{GraphProblem, GraphTopology, NodeProgram};
use dpp_core::lp::LinearProgram;
use dpp_core::stochastic::{DecisionOptionSet, RandomEventModel, StochasticProblem};

use crate::CliError;

/// Declarative convex function: `{"affine": {"a": [...], "b": ...}}` or
/// `{"quadratic": {"q": [...], "a": [...], "b": ...}}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum FnSpec {
    Affine { a: Vec<f64>, b: f64 },
    Quadratic { q: Vec<f64>, a: Vec<f64>, b: f64 },
}

impl FnSpec {
    pub fn build(&self, field: &str, dim: usize) -> Result<Arc<dyn ConvexFn>, CliError> {
        let check_dim = |len: usize, part: &str| {
            if len != dim {
                Err(CliError::Usage(format!(
                    "{field}.{part}: expected {dim} coefficients, got {len}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            FnSpec::Affine { a, b } => {
                check_dim(a.len(), "a")?;
                Ok(Arc::new(
                    Affine::new(a.clone(), *b)
                        .map_err(|e| CliError::Usage(format!("{field}: {e}")))?,
                ))
            }
            FnSpec::Quadratic { q, a, b } => {
                check_dim(q.len(), "q")?;
                check_dim(a.len(), "a")?;
                Ok(Arc::new(
                    DiagQuadratic::new(q.clone(), a.clone(), *b)
                        .map_err(|e| CliError::Usage(format!("{field}: {e}")))?,
                ))
            }
        }
    }

    pub fn build_affine(&self, field: &str, dim: usize) -> Result<Affine, CliError> {
        match self {
            FnSpec::Affine { a, b } => {
                if a.len() != dim {
                    return Err(CliError::Usage(format!(
                        "{field}.a: expected {dim} coefficients, got {}",
                        a.len()
                    )));
                }
                Affine::new(a.clone(), *b).map_err(|e| CliError::Usage(format!("{field}: {e}")))
            }
            FnSpec::Quadratic { .. } => Err(CliError::Usage(format!(
                "{field}: equality constraints must be affine"
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    #[serde(default)]
    pub local_lower: Vec<f64>,
    #[serde(default)]
    pub local_upper: Vec<f64>,
    pub f: FnSpec,
    pub g: FnSpec,
    pub c: f64,
}

/// Top-level problem file.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemFile {
    Stochastic {
        events: Vec<String>,
        probabilities: Vec<f64>,
        /// `options[event][option]` is a y-vector of length K+1.
        options: Vec<Vec<Vec<f64>>>,
        c: Vec<f64>,
    },
    Convex {
        f: FnSpec,
        #[serde(default)]
        g: Vec<FnSpec>,
        #[serde(default)]
        c: Vec<f64>,
        #[serde(default)]
        w: Vec<FnSpec>,
        #[serde(default)]
        d: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Lp {
        b: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        x_min: Vec<f64>,
        x_max: Vec<f64>,
    },
    Distributed {
        links: Vec<(usize, usize)>,
        theta_lower: Vec<f64>,
        theta_upper: Vec<f64>,
        nodes: Vec<NodeSpec>,
    },
}

/// A parsed, fully validated problem.
pub enum Problem {
    Stochastic(StochasticProblem),
    Convex(ConvexProgram),
    Lp(LinearProgram),
    Distributed(GraphProblem),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Stochastic(_) => "stochastic",
            Problem::Convex(_) => "convex",
            Problem::Lp(_) => "lp",
            Problem::Distributed(_) => "distributed",
        }
    }
}

pub fn parse_problem_file(path: &Path) -> Result<Problem, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let file: ProblemFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    build_problem(file)
}

fn usage(field: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{field}: {err}"))
}

pub fn build_problem(file: ProblemFile) -> Result<Problem, CliError> {
    match file {
        ProblemFile::Stochastic {
            events,
            probabilities,
            options,
            c,
        } => {
            let model = RandomEventModel::new(events, probabilities)
                .map_err(|e| usage("events/probabilities", e))?;
            let k = c.len();
            let problem = StochasticProblem::new(k, c, model, DecisionOptionSet { options })
                .map_err(|e| usage("options/c", e))?;
            Ok(Problem::Stochastic(problem))
        }
        ProblemFile::Convex {
            f,
            g,
            c,
            w,
            d,
            lower,
            upper,
        } => {
            let dim = lower.len();
            let set = FeasibleSet::boxed(lower, upper).map_err(|e| usage("lower/upper", e))?;
            if g.len() != c.len() {
                return Err(CliError::Usage(format!(
                    "g/c: {} constraint functions but {} constants",
                    g.len(),
                    c.len()
                )));
            }
            if w.len() != d.len() {
                return Err(CliError::Usage(format!(
                    "w/d: {} equality functions but {} constants",
                    w.len(),
                    d.len()
                )));
            }
            let program = ConvexProgram {
                f: f.build("f", dim)?,
                g: g.iter()
                    .enumerate()
                    .map(|(k, spec)| spec.build(&format!("g[{k}]"), dim))
                    .collect::<Result<_, _>>()?,
                c,
                w: w.iter()
                    .enumerate()
                    .map(|(i, spec)| spec.build_affine(&format!("w[{i}]"), dim))
                    .collect::<Result<_, _>>()?,
                d,
                set,
                g_ranges: None,
            };
            program.validate().map_err(|e| usage("convex problem", e))?;
            Ok(Problem::Convex(program))
        }
        ProblemFile::Lp {
            b,
            a,
            c,
            x_min,
            x_max,
        } => {
            let lp = LinearProgram {
                b,
                a,
                c,
                x_min,
                x_max,
            };
            lp.validate().map_err(|e| usage("lp problem", e))?;
            Ok(Problem::Lp(lp))
        }
        ProblemFile::Distributed {
            links,
            theta_lower,
            theta_upper,
            nodes,
        } => {
            let topology = GraphTopology::new(nodes.len(), links).map_err(|e| usage("links", e))?;
            let g_dim = theta_lower.len();
            let theta_set = FeasibleSet::boxed(theta_lower, theta_upper)
                .map_err(|e| usage("theta_lower/theta_upper", e))?;
            let nodes = nodes
                .into_iter()
                .enumerate()
                .map(|(n, spec)| {
                    let local_dim = spec.local_lower.len();
                    let local_set = FeasibleSet::boxed(spec.local_lower, spec.local_upper)
                        .map_err(|e| usage(&format!("nodes[{n}].local_lower/upper"), e))?;
                    let dim = local_dim + g_dim;
                    Ok(NodeProgram {
                        local_set,
                        f: spec.f.build(&format!("nodes[{n}].f"), dim)?,
                        g: spec.g.build(&format!("nodes[{n}].g"), dim)?,
                        c: spec.c,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let problem = GraphProblem {
                topology,
                theta_set,
                nodes,
            };
            problem
                .validate()
                .map_err(|e| usage("distributed problem", e))?;
            Ok(Problem::Distributed(problem))
        }
    }
}

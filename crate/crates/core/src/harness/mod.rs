//! Experiment plumbing: configuration, oracle reference, dispatch to the
//! algorithms, trace and summary files, benchmark tables and comparisons.

mod bench;
mod compare;

pub use bench::{bench_table, table1_instance, table2_instance, table3_instance, BenchCell, BenchRow, BenchTable, BENCH_NOTE};
pub use compare::{compare, CompareReport, Ranking, Violation};

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::block::{run_block, BlockMethod};
use crate::consensus::{default_dgp2_step, run_dgp1, run_dgp2, run_incremental, StepSizeRule};
use crate::dual::{dip_solve, run_dfg, run_ds, run_ps, DipParams};
use crate::error::{Error, Result};
use crate::network::{metropolis_weights, CommGraph, Topology};
use crate::oracle::solve_centralized;
use crate::problem::{Problem, ProblemDocument};
use crate::trace::{write_trace_csv, Reference, RunOptions, RunTrace, StopRule};

/// Oracle tolerance used for every reference solution.
pub const ORACLE_TOL: f64 = 1e-10;
/// Consensus rounds per gradient iteration of dgp2 unless configured.
pub const DEFAULT_CONSENSUS_DEPTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dgp1,
    Dgp2,
    Incremental,
    Ps,
    Ds,
    Dfg,
    Dip,
    Jacobi,
    Gs,
    Cd,
    Coop,
    Fd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 12] = [
        Algorithm::Dgp1,
        Algorithm::Dgp2,
        Algorithm::Incremental,
        Algorithm::Ps,
        Algorithm::Ds,
        Algorithm::Dfg,
        Algorithm::Dip,
        Algorithm::Jacobi,
        Algorithm::Gs,
        Algorithm::Cd,
        Algorithm::Coop,
        Algorithm::Fd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dgp1 => "dgp1",
            Algorithm::Dgp2 => "dgp2",
            Algorithm::Incremental => "incremental",
            Algorithm::Ps => "ps",
            Algorithm::Ds => "ds",
            Algorithm::Dfg => "dfg",
            Algorithm::Dip => "dip",
            Algorithm::Jacobi => "jacobi",
            Algorithm::Gs => "gs",
            Algorithm::Cd => "cd",
            Algorithm::Coop => "coop",
            Algorithm::Fd => "fd",
        }
    }

    /// Problem class the algorithm solves.
    pub fn class(&self) -> &'static str {
        match self {
            Algorithm::Dgp1 | Algorithm::Dgp2 | Algorithm::Incremental => "dcx",
            Algorithm::Ps | Algorithm::Ds | Algorithm::Dfg | Algorithm::Dip => "dccc",
            _ => "ccdc",
        }
    }

    pub fn for_class(class: &str) -> Vec<Algorithm> {
        Self::ALL.iter().copied().filter(|a| a.class() == class).collect()
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown algorithm '{s}'")))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional per-algorithm settings; unset fields take the documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmParams {
    /// Step rule for dgp1, incremental, ds and ps.
    pub step: Option<StepSizeRule>,
    /// Constant step of dgp2.
    pub alpha: Option<f64>,
    /// Consensus rounds per dgp2 iteration.
    pub consensus_depth: Option<usize>,
    /// Smoothing parameter of dfg.
    pub smoothing: Option<f64>,
    /// Agent order for gs and incremental.
    pub order: Option<Vec<usize>>,
    /// Colored (parallel) Gauss-Seidel sweeps.
    pub colored: bool,
    /// Convex weights for cooperative Jacobi.
    pub weights: Option<Vec<f64>>,
    /// Centralized multiplier update for ds (default is the per-block update).
    pub centralized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    File(PathBuf),
    Inline(Box<serde_json::Value>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub params: AlgorithmParams,
    /// `path`, `complete`, `ring`, `star` or a graph JSON file; consensus methods only.
    #[serde(default)]
    pub graph: Option<String>,
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stop")]
    pub stop: StopRule,
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

fn default_max_iter() -> usize {
    10_000
}

fn default_stop() -> StopRule {
    StopRule::OracleGap
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSource, algorithm: Algorithm, eps: f64) -> Self {
        Self {
            problem,
            algorithm,
            params: AlgorithmParams::default(),
            graph: None,
            eps,
            max_iter: default_max_iter(),
            seed: 0,
            stop: default_stop(),
            trace: None,
            summary: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Invalid("eps must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("iteration cap must be at least 1".into()));
        }
        Ok(())
    }

    fn document(&self) -> Result<ProblemDocument> {
        match &self.problem {
            ProblemSource::File(p) => ProblemDocument::read(p),
            ProblemSource::Inline(v) => Ok(serde_json::from_value((**v).clone())?),
        }
    }
}

/// Content hash of a problem, used to match traces to problems.
pub fn problem_id(problem: &Problem) -> Result<String> {
    let json = ProblemDocument::new(problem).to_json()?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn check_compatible(problem: &Problem, algorithm: Algorithm) -> Result<()> {
    if problem.class_name() != algorithm.class() {
        return Err(Error::Incompatible(format!(
            "{} solves {} problems, got a {} problem",
            algorithm,
            algorithm.class(),
            problem.class_name()
        )));
    }
    Ok(())
}

/// Oracle reference, problem id and stopping rule bundled into run options.
pub fn prepare_options(problem: &Problem, eps: f64, max_iter: usize, stop: StopRule) -> Result<RunOptions> {
    let sol = solve_centralized(problem, ORACLE_TOL)?;
    let mut opts = RunOptions::new(eps, max_iter).with_reference(
        Reference {
            point: sol.point,
            objective: sol.objective,
        },
        stop,
    );
    opts.problem_id = problem_id(problem)?;
    opts.validate()?;
    Ok(opts)
}

/// Resolve a `--graph` value: a built-in topology name or a graph JSON file.
pub fn resolve_graph(source: &str, nodes: usize) -> Result<CommGraph> {
    if let Ok(t) = Topology::from_str(source) {
        return CommGraph::builtin(t, nodes);
    }
    let text = std::fs::read_to_string(source)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let doc = match value.get("graph") {
        Some(g) => serde_json::from_value(g.clone())?,
        None => serde_json::from_value(value)?,
    };
    let g = CommGraph::from_doc(&doc)?;
    if g.nodes() != nodes {
        return Err(Error::Dimension(format!(
            "graph has {} nodes but the problem has {nodes} agents",
            g.nodes()
        )));
    }
    Ok(g)
}

/// Dispatch one algorithm on an in-memory problem. Consensus methods use
/// Metropolis weights on `graph` (a path when `None`).
pub fn run_algorithm(
    problem: &Problem,
    algorithm: Algorithm,
    params: &AlgorithmParams,
    graph: Option<&CommGraph>,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    check_compatible(problem, algorithm)?;
    match (problem, algorithm) {
        (Problem::Dcx(p), Algorithm::Dgp1 | Algorithm::Dgp2) => {
            let owned;
            let g = match graph {
                Some(g) => g,
                None => {
                    owned = CommGraph::builtin(Topology::Path, p.agents())?;
                    &owned
                }
            };
            if g.nodes() != p.agents() {
                return Err(Error::Dimension(format!(
                    "graph has {} nodes but the problem has {} agents",
                    g.nodes(),
                    p.agents()
                )));
            }
            let schedule = metropolis_weights(g)?;
            if algorithm == Algorithm::Dgp1 {
                run_dgp1(p, &schedule, &params.step.unwrap_or_default(), opts)
            } else {
                let depth = params.consensus_depth.unwrap_or(DEFAULT_CONSENSUS_DEPTH);
                let alpha = params.alpha.unwrap_or_else(|| default_dgp2_step(p));
                run_dgp2(p, &schedule, depth, alpha, opts)
            }
        }
        (Problem::Dcx(p), Algorithm::Incremental) => {
            let order = params.order.clone().unwrap_or_else(|| (0..p.agents()).collect());
            run_incremental(p, &order, &params.step.unwrap_or_default(), opts)
        }
        (Problem::Dccc(p), Algorithm::Ps) => run_ps(p, params.step, opts),
        (Problem::Dccc(p), Algorithm::Ds) => run_ds(p, params.step, !params.centralized, opts),
        (Problem::Dccc(p), Algorithm::Dfg) => run_dfg(p, params.smoothing, opts),
        (Problem::Dccc(p), Algorithm::Dip) => dip_solve(p, &DipParams::default(), opts),
        (Problem::Ccdc(p), a) => {
            let method = match a {
                Algorithm::Jacobi => BlockMethod::Jacobi,
                Algorithm::Gs => BlockMethod::GaussSeidel {
                    order: params.order.clone(),
                    colored: params.colored,
                },
                Algorithm::Cd => BlockMethod::CoordinateDescent { seed },
                Algorithm::Coop => BlockMethod::Cooperative {
                    weights: params.weights.clone(),
                },
                _ => BlockMethod::FeasibleDirections,
            };
            run_block(p, &method, opts)
        }
        _ => unreachable!("class compatibility checked above"),
    }
}

pub fn write_trace_file(trace: &RunTrace, path: &Path) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_trace_csv(&trace.rows, f)
}

pub fn write_summary_file(trace: &RunTrace, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&trace.summary)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Load, check, solve the oracle, run, and write the configured outputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunTrace> {
    config.validate()?;
    let doc = config.document()?;
    let problem = doc.problem()?;
    check_compatible(&problem, config.algorithm)?;
    let agents = match &problem {
        Problem::Dcx(p) => p.agents(),
        Problem::Dccc(p) => p.agents(),
        Problem::Ccdc(p) => p.agents(),
    };
    let graph = match (&config.graph, &doc.graph) {
        (Some(source), _) => Some(resolve_graph(source, agents)?),
        (None, Some(g)) => Some(CommGraph::from_doc(g)?),
        (None, None) => None,
    };
    let opts = prepare_options(&problem, config.eps, config.max_iter, config.stop)?;
    let trace = run_algorithm(
        &problem,
        config.algorithm,
        &config.params,
        graph.as_ref(),
        config.seed,
        &opts,
    )?;
    if let Some(p) = &config.trace {
        write_trace_file(&trace, p)?;
    }
    if let Some(p) = &config.summary {
        write_summary_file(&trace, p)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Mat, Vector};
    use crate::problem::{FeasibleSet, ProblemDccc, QuadCost};
    use crate::trace::{read_trace_csv, RunStatus};

    fn toy() -> Problem {
        Problem::Dccc(
            ProblemDccc::new(
                vec![QuadCost::new(Mat::identity(1, 1), Vector::zeros(1)).unwrap(); 2],
                vec![FeasibleSet::cube(1, 10.0).unwrap(); 2],
                vec![Mat::from_element(1, 1, 1.0); 2],
                Vector::from_element(1, 1.0),
            )
            .unwrap(),
        )
    }

    fn inline(p: &Problem) -> ProblemSource {
        ProblemSource::Inline(Box::new(serde_json::to_value(ProblemDocument::new(p)).unwrap()))
    }

    #[test]
    fn toy_ds_converges() {
        let cfg = ExperimentConfig::new(inline(&toy()), Algorithm::Ds, 1e-3);
        let t = run_experiment(&cfg).unwrap();
        assert_eq!(t.summary.status, RunStatus::Converged);
        assert!(t.summary.final_residual <= 1e-3);
    }

    #[test]
    fn cap_of_one_gives_one_row() {
        let mut cfg = ExperimentConfig::new(inline(&toy()), Algorithm::Ds, 1e-3);
        cfg.max_iter = 1;
        let t = run_experiment(&cfg).unwrap();
        assert_eq!(t.summary.status, RunStatus::MaxIter);
        assert_eq!(t.rows.len(), 1);
    }

    #[test]
    fn incompatible_class_rejected() {
        let cfg = ExperimentConfig::new(inline(&toy()), Algorithm::Jacobi, 1e-3);
        assert!(matches!(run_experiment(&cfg), Err(Error::Incompatible(_))));
    }

    #[test]
    fn repeated_runs_write_identical_traces() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for k in 0..2 {
            let mut cfg = ExperimentConfig::new(inline(&toy()), Algorithm::Dfg, 1e-3);
            let path = dir.path().join(format!("t{k}.csv"));
            cfg.trace = Some(path.clone());
            run_experiment(&cfg).unwrap();
            bytes.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        let rows = read_trace_csv(bytes[0].as_slice()).unwrap();
        assert!(!rows.is_empty());
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = ExperimentConfig::new(ProblemSource::File("p.json".into()), Algorithm::Gs, 1e-3);
        cfg.params.colored = true;
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.algorithm, Algorithm::Gs);
        assert!(back.params.colored);
        assert_eq!(back.problem, ProblemSource::File("p.json".into()));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!(Algorithm::for_class("dccc").len(), 4);
    }
}

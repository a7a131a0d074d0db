use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use netopt::consensus::StepSizeRule;
use netopt::generators::{
    gen_control_dccc, gen_coupled_cooperative, gen_mhe_dcx, gen_satellite_ccdc, AgentDims, CWParams, LinearPlant,
    MheOptions,
};
use netopt::harness::{
    bench_table, compare, run_experiment, Algorithm, AlgorithmParams, ExperimentConfig, ProblemSource, ORACLE_TOL,
};
use netopt::network::{CommGraph, Topology};
use netopt::oracle::solve_centralized;
use netopt::problem::{Problem, ProblemDocument};
use netopt::trace::{RunSummary, StopRule};

#[derive(Parser)]
#[command(name = "netopt", version, about = "Distributed optimization for networked estimation and control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded problem instance as netopt-problem-v1 JSON.
    Generate {
        #[command(subcommand)]
        kind: GenerateKind,
    },
    /// Solve a problem centrally and print the reference solution.
    Oracle {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value_t = ORACLE_TOL)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one algorithm against the oracle and write its trace.
    Run(RunArgs),
    /// Reproduce the layout of benchmark table 1, 2 or 3.
    Bench {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
        table: u8,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the table as CSV here (text goes to stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Rank run summaries of the same problem.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    agents: usize,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
}

#[derive(Subcommand)]
enum GenerateKind {
    /// Moving horizon estimation over a sensor network (DCx).
    Mhe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value_t = 1)]
        outputs: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Interconnected subsystems with coupling equalities (DCCC).
    Control {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value_t = 3)]
        inputs: usize,
        #[arg(long, default_value_t = 2)]
        interconnections: usize,
        /// Interconnection topology: path, ring, star or complete.
        #[arg(long, default_value = "ring")]
        graph: String,
    },
    /// Satellite formation on a circular orbit (CCDC).
    Satellite {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        omega: Option<f64>,
    },
    /// Input-coupled subsystems with a cooperative cost (CCDC).
    Coop {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        inputs: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// dgp1, dgp2, incremental, ps, ds, dfg, dip, jacobi, gs, cd, coop or fd.
    algorithm: Option<Algorithm>,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Built-in topology name or graph JSON file (consensus methods).
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// intrinsic, oracle-distance or oracle-gap.
    #[arg(long)]
    stop: Option<StopRule>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Summary JSON path.
    #[arg(long, alias = "out")]
    summary: Option<PathBuf>,
    /// Constant step (dgp2).
    #[arg(long)]
    alpha: Option<f64>,
    /// Diminishing step `a / (b + k)` as `a,b` (dgp1, incremental, ds, ps).
    #[arg(long, value_parser = parse_pair)]
    harmonic: Option<(f64, f64)>,
    /// Consensus rounds per iteration (dgp2).
    #[arg(long)]
    depth: Option<usize>,
    /// Smoothing parameter (dfg).
    #[arg(long)]
    smoothing: Option<f64>,
    /// Colored parallel sweeps (gs).
    #[arg(long)]
    parallel: bool,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

fn write_doc(problem: &Problem, graph: Option<&CommGraph>, meta: serde_json::Value, out: &Path) -> Result<()> {
    let mut doc = ProblemDocument::new(problem).with_meta(meta);
    if let Some(g) = graph {
        doc = doc.with_graph(g.to_doc());
    }
    doc.write(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn generate(kind: GenerateKind) -> Result<()> {
    match kind {
        GenerateKind::Mhe {
            common,
            states,
            outputs,
            noise,
        } => {
            let seed = common.seed.context("--seed is required")?;
            let plant = LinearPlant::random(states, common.agents, outputs, seed)?;
            let mut opts = MheOptions::new(common.horizon);
            opts.noise = noise;
            let inst = gen_mhe_dcx(&plant, &opts, Some(seed.wrapping_add(1)))?;
            let meta = json!({"generator": "mhe", "seed": seed, "agents": common.agents,
                "horizon": common.horizon, "states": states, "outputs": outputs, "noise": noise});
            write_doc(&Problem::Dcx(inst.problem), None, meta, &common.out)
        }
        GenerateKind::Control {
            common,
            states,
            inputs,
            interconnections,
            graph,
        } => {
            let topo: Topology = graph.parse()?;
            let g = CommGraph::builtin(topo, common.agents)?;
            let dims = vec![
                AgentDims {
                    n: states,
                    m: inputs,
                    p: interconnections,
                };
                common.agents
            ];
            let inst = gen_control_dccc(&dims, common.horizon, &g, common.seed)?;
            let meta = json!({"generator": "control", "seed": common.seed, "agents": common.agents,
                "horizon": common.horizon, "dims": dims[0], "graph": graph});
            write_doc(&Problem::Dccc(inst.problem), Some(&g), meta, &common.out)
        }
        GenerateKind::Satellite {
            common,
            sigma,
            dt,
            omega,
        } => {
            let seed = common.seed.context("--seed is required")?;
            let mut params = CWParams::formation(common.agents, sigma);
            if let Some(dt) = dt {
                params.dt = dt;
            }
            if let Some(w) = omega {
                params.omega_n = w;
            }
            let inst = gen_satellite_ccdc(&params, common.horizon, seed)?;
            let meta = json!({"generator": "satellite", "seed": seed, "horizon": common.horizon, "params": params});
            write_doc(&Problem::Ccdc(inst.problem), None, meta, &common.out)
        }
        GenerateKind::Coop { common, states, inputs } => {
            let dims = AgentDims {
                n: states,
                m: inputs,
                p: 1,
            };
            let inst = gen_coupled_cooperative(common.agents, common.horizon, dims, None, common.seed)?;
            let meta = json!({"generator": "coop", "seed": common.seed, "agents": common.agents,
                "horizon": common.horizon, "states": states, "inputs": inputs});
            write_doc(&Problem::Ccdc(inst.problem), None, meta, &common.out)
        }
    }
}

fn oracle(problem: &Path, tol: f64, out: Option<&Path>) -> Result<()> {
    let doc = ProblemDocument::read(problem).with_context(|| format!("reading {}", problem.display()))?;
    let p = doc.problem()?;
    let sol = solve_centralized(&p, tol)?;
    let text = serde_json::to_string_pretty(&sol.report(&p))? + "\n";
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    eprintln!(
        "objective {:.12e}, KKT residual {:.2e} after {} iterations",
        sol.objective, sol.kkt_residual, sol.iterations
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).context("parsing the experiment configuration")?
        }
        None => {
            let problem = args.problem.clone().context("--problem or --config is required")?;
            let algorithm = args.algorithm.context("an algorithm is required")?;
            ExperimentConfig::new(ProblemSource::File(problem), algorithm, 1e-3)
        }
    };
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    if let Some(p) = args.problem {
        cfg.problem = ProblemSource::File(p);
    }
    if args.graph.is_some() {
        cfg.graph = args.graph;
    }
    if let Some(e) = args.eps {
        cfg.eps = e;
    }
    if let Some(m) = args.max_iter {
        cfg.max_iter = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.stop {
        cfg.stop = s;
    }
    if args.trace.is_some() {
        cfg.trace = args.trace;
    }
    if args.summary.is_some() {
        cfg.summary = args.summary;
    }
    let p: &mut AlgorithmParams = &mut cfg.params;
    if args.alpha.is_some() {
        p.alpha = args.alpha;
    }
    if let Some((a, b)) = args.harmonic {
        p.step = Some(StepSizeRule::DiminishingHarmonic { a, b });
    }
    if args.depth.is_some() {
        p.consensus_depth = args.depth;
    }
    if args.smoothing.is_some() {
        p.smoothing = args.smoothing;
    }
    if args.parallel {
        p.colored = true;
    }
    let trace = run_experiment(&cfg)?;
    let s = &trace.summary;
    println!(
        "{} {:?}: {} iterations, to eps {}, objective {:.10e}, residual {:.3e}, distance {:.3e}, messages {}",
        s.algorithm,
        s.status,
        s.iterations,
        s.iterations_to_eps.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
        s.final_objective,
        s.final_residual,
        s.final_distance,
        s.messages
    );
    Ok(())
}

fn bench(table: u8, seed: u64, csv: Option<&Path>) -> Result<()> {
    let t = bench_table(table, seed)?;
    print!("{t}");
    if let Some(path) = csv {
        std::fs::write(path, t.to_csv()?)?;
    }
    Ok(())
}

fn compare_files(paths: &[PathBuf], as_json: bool) -> Result<()> {
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let s: RunSummary = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        runs.push(s);
    }
    let report = compare(&runs)?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { kind } => generate(kind),
        Command::Oracle { problem, tol, out } => oracle(&problem, tol, out.as_deref()),
        Command::Run(args) => run(args),
        Command::Bench { table, seed, csv } => bench(table, seed, csv.as_deref()),
        Command::Compare { summaries, json } => compare_files(&summaries, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            if let Some(err) = e.downcast_ref::<netopt::error::Error>() {
                return ExitCode::from(exit_code(err));
            }
            ExitCode::FAILURE
        }
    }
}

/// 1 for I/O and parse failures, 3 for bad input, 4 for unsolvable problems, 5 for numerical trouble.
fn exit_code(e: &netopt::error::Error) -> u8 {
    use netopt::error::Error as E;
    match e {
        E::Io(_) | E::Json(_) | E::Csv(_) => 1,
        E::Infeasible(_) | E::Unbounded | E::NotStronglyConvex | E::SubproblemInfeasible(_) => 4,
        E::Numerical(_) => 5,
        _ => 3,
    }
}

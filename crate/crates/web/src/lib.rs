//! Browser bindings: consensus on a chosen graph, a single algorithm run on a
//! generated instance, and the benchmark tables. Results are returned as JSON
//! or plain text for the page in `www/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use wasm_bindgen::prelude::*;

use netopt::generators::{gen_control_dccc, gen_mhe_dcx, gen_satellite_ccdc, AgentDims, CWParams, LinearPlant, MheOptions};
use netopt::harness::{bench_table, prepare_options, run_algorithm, Algorithm, AlgorithmParams};
use netopt::linalg::Vector;
use netopt::network::{average, consensus_round, disagreement, metropolis_weights, CommGraph, RoundLedger, Topology};
use netopt::problem::Problem;
use netopt::trace::{RunTrace, StopRule};

/// Iteration cap for browser runs.
pub const WEB_CAP: usize = 20_000;

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Uniform states in `[-1, 1]`.
fn initial_states(agents: usize, dim: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..agents)
        .map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0)))
        .collect()
}

/// Metropolis consensus from random states; returns the disagreement after
/// every round and the largest drift of the network average.
pub fn consensus_json(topology: &str, agents: usize, rounds: usize, seed: u64) -> netopt::Result<String> {
    let kind: Topology = topology.parse()?;
    let graph = CommGraph::builtin(kind, agents)?;
    let weights = metropolis_weights(&graph)?;
    let mut x = initial_states(agents, 2, seed);
    let mean = average(&x);
    let mut ledger = RoundLedger::new();
    let mut dis = vec![disagreement(&x)];
    let mut drift = 0.0_f64;
    for k in 0..rounds {
        x = consensus_round(&weights, k, &x, &mut ledger)?;
        dis.push(disagreement(&x));
        drift = drift.max((average(&x) - &mean).amax());
    }
    Ok(json!({
        "disagreement": dis,
        "average_drift": drift,
        "messages": ledger.total(),
        "diameter": graph.diameter(),
    })
    .to_string())
}

fn demo_problem(class: &str, agents: usize, horizon: usize, seed: u64) -> netopt::Result<Problem> {
    Ok(match class {
        "dcx" => {
            let plant = LinearPlant::random(4, agents, 1, seed)?;
            Problem::Dcx(gen_mhe_dcx(&plant, &MheOptions::new(horizon), Some(seed.wrapping_add(1)))?.problem)
        }
        "dccc" => {
            let graph = CommGraph::builtin(Topology::Ring, agents)?;
            let dims = vec![AgentDims { n: 3, m: 2, p: 1 }; agents];
            Problem::Dccc(gen_control_dccc(&dims, horizon, &graph, Some(seed))?.problem)
        }
        "ccdc" => Problem::Ccdc(gen_satellite_ccdc(&CWParams::formation(agents, 1.0), horizon, seed)?.problem),
        other => return Err(netopt::Error::Invalid(format!("unknown problem class '{other}'"))),
    })
}

fn trace_json(t: &RunTrace) -> String {
    let rows: Vec<_> = t
        .rows
        .iter()
        .map(|r| json!([r.iter, r.primal_obj, r.residual, r.dist_to_oracle, r.messages]))
        .collect();
    json!({
        "summary": t.summary,
        "columns": ["iter", "primal_obj", "residual", "dist_to_oracle", "messages"],
        "rows": rows,
    })
    .to_string()
}

/// Generate an instance of `class`, solve the oracle, and run `algorithm` to
/// relative gap and residual `eps`.
pub fn run_json(class: &str, algorithm: &str, agents: usize, horizon: usize, eps: f64, seed: u64) -> netopt::Result<String> {
    let alg: Algorithm = algorithm.parse()?;
    let problem = demo_problem(class, agents, horizon, seed)?;
    let opts = prepare_options(&problem, eps, WEB_CAP, StopRule::OracleGap)?;
    let t = run_algorithm(&problem, alg, &AlgorithmParams::default(), None, seed, &opts)?;
    Ok(trace_json(&t))
}

#[wasm_bindgen]
pub fn consensus(topology: &str, agents: u32, rounds: u32, seed: u32) -> Result<String, JsValue> {
    consensus_json(topology, agents as usize, rounds as usize, seed as u64).map_err(js_err)
}

#[wasm_bindgen]
pub fn run(class: &str, algorithm: &str, agents: u32, horizon: u32, eps: f64, seed: u32) -> Result<String, JsValue> {
    run_json(class, algorithm, agents as usize, horizon as usize, eps, seed as u64).map_err(js_err)
}

/// Algorithm names compatible with `class`, comma separated.
#[wasm_bindgen]
pub fn algorithms(class: &str) -> String {
    Algorithm::for_class(class)
        .iter()
        .map(|a| a.name())
        .collect::<Vec<_>>()
        .join(",")
}

/// Formatted benchmark table (slow for table 2).
#[wasm_bindgen]
pub fn table(id: u8, seed: u32) -> Result<String, JsValue> {
    bench_table(id, seed as u64).map(|t| t.to_string()).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_reaches_agreement() {
        let out: serde_json::Value = serde_json::from_str(&consensus_json("ring", 6, 200, 3).unwrap()).unwrap();
        let dis = out["disagreement"].as_array().unwrap();
        assert_eq!(dis.len(), 201);
        assert!(dis.last().unwrap().as_f64().unwrap() < 1e-8);
        assert!(out["average_drift"].as_f64().unwrap() < 1e-12);
    }

    #[test]
    fn run_returns_rows_and_summary() {
        let out: serde_json::Value = serde_json::from_str(&run_json("ccdc", "gs", 4, 4, 1e-3, 2).unwrap()).unwrap();
        assert_eq!(out["summary"]["status"], "Converged");
        assert!(!out["rows"].as_array().unwrap().is_empty());
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(consensus_json("torus", 4, 3, 1).is_err());
        assert!(run_json("dcx", "gs", 4, 4, 1e-3, 1).is_err());
        assert!(run_json("lp", "gs", 4, 4, 1e-3, 1).is_err());
    }

    #[test]
    fn algorithm_lists() {
        assert_eq!(algorithms("dcx"), "dgp1,dgp2,incremental");
    }
}

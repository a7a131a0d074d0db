//! Rank runs of the same problem by iterations and messages to `eps`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::RunSummary;

/// Orderings observed in the reference experiments: `(faster, slower, strict)`.
const EXPECTED: [(&str, &str, bool); 4] = [
    ("dip", "dfg", true),
    ("dfg", "ds", true),
    ("dgp2", "dgp1", true),
    ("gs", "jacobi", false),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub algorithm: String,
    /// `None` when the run never reached `eps`.
    pub value: Option<u64>,
    /// 1-based rank; tied entries share a rank.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub expected: String,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub problem_id: String,
    pub by_iterations: Vec<Ranking>,
    pub by_messages: Vec<Ranking>,
    /// Pairs with equal iterations to `eps`.
    pub ties: Vec<(String, String)>,
    pub violations: Vec<Violation>,
}

fn key(v: Option<u64>) -> (bool, u64) {
    match v {
        Some(x) => (false, x),
        None => (true, 0),
    }
}

fn rank(entries: Vec<(String, Option<u64>)>) -> Vec<Ranking> {
    let mut entries = entries;
    entries.sort_by(|a, b| key(a.1).cmp(&key(b.1)).then_with(|| a.0.cmp(&b.0)));
    let mut out: Vec<Ranking> = Vec::with_capacity(entries.len());
    for (i, (algorithm, value)) in entries.into_iter().enumerate() {
        let rank = match out.last() {
            Some(prev) if prev.value == value => prev.rank,
            _ => i + 1,
        };
        out.push(Ranking { algorithm, value, rank });
    }
    out
}

fn show(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "not reached".into())
}

pub fn compare(runs: &[RunSummary]) -> Result<CompareReport> {
    if runs.len() < 2 {
        return Err(Error::Invalid("comparison needs at least two runs".into()));
    }
    let id = &runs[0].problem_id;
    if let Some(r) = runs.iter().find(|r| &r.problem_id != id) {
        return Err(Error::MismatchedProblems(format!(
            "{} ran on {}, {} ran on {}",
            runs[0].algorithm, id, r.algorithm, r.problem_id
        )));
    }
    let iters: Vec<(String, Option<u64>)> = runs
        .iter()
        .map(|r| (r.algorithm.clone(), r.iterations_to_eps.map(|k| k as u64)))
        .collect();
    let msgs = runs
        .iter()
        .map(|r| (r.algorithm.clone(), r.messages_to_eps))
        .collect();

    let mut ties = Vec::new();
    for i in 0..iters.len() {
        for j in (i + 1)..iters.len() {
            if iters[i].1 == iters[j].1 {
                ties.push((iters[i].0.clone(), iters[j].0.clone()));
            }
        }
    }

    let mut violations = Vec::new();
    for (fast, slow, strict) in EXPECTED {
        let a = iters.iter().find(|(n, _)| n == fast);
        let b = iters.iter().find(|(n, _)| n == slow);
        if let (Some((_, va)), Some((_, vb))) = (a, b) {
            let ok = match (va, vb) {
                (Some(x), Some(y)) => {
                    if strict {
                        x < y
                    } else {
                        x <= y
                    }
                }
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => !strict,
            };
            if !ok {
                let op = if strict { "<" } else { "<=" };
                violations.push(Violation {
                    expected: format!("{fast} {op} {slow}"),
                    observed: format!("{fast} = {}, {slow} = {}", show(*va), show(*vb)),
                });
            }
        }
    }

    Ok(CompareReport {
        problem_id: id.clone(),
        by_iterations: rank(iters),
        by_messages: rank(msgs),
        ties,
        violations,
    })
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem {}", self.problem_id)?;
        for (title, list) in [("iterations to eps", &self.by_iterations), ("messages to eps", &self.by_messages)] {
            writeln!(f, "by {title}:")?;
            for r in list {
                writeln!(f, "  {:>2}. {:<12} {}", r.rank, r.algorithm, show(r.value))?;
            }
        }
        for (a, b) in &self.ties {
            writeln!(f, "tie: {a} and {b}")?;
        }
        if self.violations.is_empty() {
            writeln!(f, "expected orderings: ok")?;
        }
        for v in &self.violations {
            writeln!(f, "violation: expected {}, observed {}", v.expected, v.observed)?;
        }
        Ok(())
    }
}

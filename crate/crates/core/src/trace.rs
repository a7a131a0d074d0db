//! Per-iteration run records, stopping rules and their CSV/JSON forms.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::problem::Point;

pub const TRACE_HEADER: [&str; 6] = [
    "iter",
    "primal_obj",
    "residual",
    "dist_to_oracle",
    "dual_value",
    "messages",
];

/// One trace row. Missing quantities are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub primal_obj: f64,
    /// Coupling residual `||sum G_i x^i - g||_inf`, consensus disagreement, or 0.
    pub residual: f64,
    pub dist_to_oracle: f64,
    pub dual_value: f64,
    /// Cumulative scalars transmitted.
    pub messages: u64,
}

impl TraceRow {
    fn same_bits(&self, other: &TraceRow) -> bool {
        self.iter == other.iter
            && self.messages == other.messages
            && self.primal_obj.to_bits() == other.primal_obj.to_bits()
            && self.residual.to_bits() == other.residual.to_bits()
            && self.dist_to_oracle.to_bits() == other.dist_to_oracle.to_bits()
            && self.dual_value.to_bits() == other.dual_value.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub problem_id: String,
    pub status: RunStatus,
    /// Outer iterations performed.
    pub iterations: usize,
    /// First iteration meeting the stopping rule, if any.
    pub iterations_to_eps: Option<usize>,
    /// Cumulative messages at `iterations_to_eps`.
    #[serde(default)]
    pub messages_to_eps: Option<u64>,
    pub eps: f64,
    pub stop_rule: StopRule,
    pub final_objective: f64,
    pub final_residual: f64,
    pub final_distance: f64,
    pub messages: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
    /// Final primal point (agent estimates are averaged for consensus methods).
    pub point: Point,
    /// Final multipliers for dual methods.
    pub multipliers: Option<Vector>,
}

/// When a run counts as finished.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// The algorithm's own termination test.
    Intrinsic,
    /// Distance to the oracle point `<= eps` (max over agents for consensus methods).
    OracleDistance,
    /// Relative objective gap `|f - f*| / max(1, |f*|) <= eps` and residual `<= eps`.
    OracleGap,
}

impl std::str::FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intrinsic" => Ok(StopRule::Intrinsic),
            "oracle-distance" => Ok(StopRule::OracleDistance),
            "oracle-gap" => Ok(StopRule::OracleGap),
            other => Err(Error::Invalid(format!("unknown stop rule '{other}'"))),
        }
    }
}

/// Oracle data used for distances and gaps.
#[derive(Debug, Clone)]
pub struct Reference {
    pub point: Point,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub eps: f64,
    pub max_iter: usize,
    pub stop: StopRule,
    pub reference: Option<Reference>,
    pub problem_id: String,
}

impl RunOptions {
    pub fn new(eps: f64, max_iter: usize) -> Self {
        Self {
            eps,
            max_iter,
            stop: StopRule::Intrinsic,
            reference: None,
            problem_id: String::new(),
        }
    }

    pub fn with_reference(mut self, reference: Reference, stop: StopRule) -> Self {
        self.reference = Some(reference);
        self.stop = stop;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Invalid("eps must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Invalid("iteration cap must be at least 1".into()));
        }
        if self.stop != StopRule::Intrinsic && self.reference.is_none() {
            return Err(Error::Invalid("oracle stopping rules need a reference solution".into()));
        }
        Ok(())
    }

    /// Distance used by the oracle-distance rule.
    pub fn distance(&self, point: &Point) -> f64 {
        match &self.reference {
            Some(r) => point.distance(&r.point),
            None => f64::NAN,
        }
    }

    /// Oracle-based stopping test; `None` when the rule is intrinsic.
    pub fn oracle_met(&self, objective: f64, residual: f64, distance: f64) -> Option<bool> {
        let r = self.reference.as_ref()?;
        match self.stop {
            StopRule::Intrinsic => None,
            StopRule::OracleDistance => Some(distance <= self.eps),
            StopRule::OracleGap => Some(
                (objective - r.objective).abs() / r.objective.abs().max(1.0) <= self.eps
                    && residual <= self.eps,
            ),
        }
    }
}

// wasm32-unknown-unknown has no clock; wall time is reported as 0 there
#[cfg(not(target_arch = "wasm32"))]
fn clock() -> Option<Instant> {
    Some(Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn clock() -> Option<Instant> {
    None
}

/// Collects rows while an algorithm runs.
pub(crate) struct Recorder {
    algorithm: String,
    opts: RunOptions,
    rows: Vec<TraceRow>,
    started: Option<Instant>,
    hit: Option<usize>,
}

impl Recorder {
    pub fn new(algorithm: &str, opts: &RunOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self {
            algorithm: algorithm.to_string(),
            opts: opts.clone(),
            rows: Vec::new(),
            started: clock(),
            hit: None,
        })
    }

    /// Record a row; returns true when the run should stop.
    /// `intrinsic` is the algorithm's own convergence verdict for this iterate.
    pub fn record(&mut self, row: TraceRow, intrinsic: bool) -> bool {
        let met = match self.opts.oracle_met(row.primal_obj, row.residual, row.dist_to_oracle) {
            Some(v) => v,
            None => intrinsic,
        };
        self.rows.push(row);
        if met && self.hit.is_none() {
            self.hit = Some(row.iter);
        }
        met || row.iter >= self.opts.max_iter
    }

    pub fn finish(self, point: Point, multipliers: Option<Vector>) -> RunTrace {
        let last = self.rows.last().copied().unwrap_or(TraceRow {
            iter: 0,
            primal_obj: f64::NAN,
            residual: f64::NAN,
            dist_to_oracle: f64::NAN,
            dual_value: f64::NAN,
            messages: 0,
        });
        RunTrace {
            summary: RunSummary {
                algorithm: self.algorithm,
                problem_id: self.opts.problem_id.clone(),
                status: if self.hit.is_some() {
                    RunStatus::Converged
                } else {
                    RunStatus::MaxIter
                },
                iterations: last.iter,
                iterations_to_eps: self.hit,
                messages_to_eps: self
                    .hit
                    .and_then(|k| self.rows.iter().find(|r| r.iter == k))
                    .map(|r| r.messages),
                eps: self.opts.eps,
                stop_rule: self.opts.stop,
                final_objective: last.primal_obj,
                final_residual: last.residual,
                final_distance: last.dist_to_oracle,
                messages: last.messages,
                wall_time_s: self.started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
            },
            rows: self.rows,
            point,
            multipliers,
        }
    }
}

fn fmt(v: f64) -> String {
    // Display for f64 is the shortest string that parses back to the same value
    format!("{v}")
}

/// Write rows as CSV with the fixed header and LF line endings.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            fmt(r.primal_obj),
            fmt(r.residual),
            fmt(r.dist_to_oracle),
            fmt(r.dual_value),
            r.messages.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    if header != TRACE_HEADER {
        return Err(Error::Invalid(format!("unexpected trace header {header:?}")));
    }
    let parse_f = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Invalid(format!("bad number '{s}': {e}")))
    };
    let parse_u = |s: &str| -> Result<u64> {
        s.parse::<u64>()
            .map_err(|e| Error::Invalid(format!("bad integer '{s}': {e}")))
    };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != TRACE_HEADER.len() {
            return Err(Error::Invalid("trace row has the wrong number of fields".into()));
        }
        rows.push(TraceRow {
            iter: parse_u(&rec[0])? as usize,
            primal_obj: parse_f(&rec[1])?,
            residual: parse_f(&rec[2])?,
            dist_to_oracle: parse_f(&rec[3])?,
            dual_value: parse_f(&rec[4])?,
            messages: parse_u(&rec[5])?,
        });
    }
    Ok(rows)
}

/// Rows strictly increasing in `iter`, messages nondecreasing.
pub fn check_trace(rows: &[TraceRow]) -> bool {
    rows.windows(2)
        .all(|w| w[1].iter > w[0].iter && w[1].messages >= w[0].messages)
}

/// Bitwise equality of two traces (NaN-aware).
pub fn traces_identical(a: &[TraceRow], b: &[TraceRow]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_bits(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite_or_nan() -> impl Strategy<Value = f64> {
        prop_oneof![
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            Just(f64::NAN),
        ]
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_lossless(
            vals in prop::collection::vec((finite_or_nan(), finite_or_nan(), finite_or_nan(), finite_or_nan(), 0u64..1_000_000), 0..20)
        ) {
            let mut msgs = 0;
            let rows: Vec<TraceRow> = vals.iter().enumerate().map(|(k, v)| {
                msgs += v.4;
                TraceRow { iter: k + 1, primal_obj: v.0, residual: v.1, dist_to_oracle: v.2, dual_value: v.3, messages: msgs }
            }).collect();
            let mut buf = Vec::new();
            write_trace_csv(&rows, &mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            prop_assert!(!text.contains('\r'));
            let back = read_trace_csv(buf.as_slice()).unwrap();
            prop_assert!(traces_identical(&rows, &back));
            prop_assert!(check_trace(&back));
        }
    }

    #[test]
    fn bad_header_rejected() {
        let text = "a,b\n1,2\n";
        assert!(read_trace_csv(text.as_bytes()).is_err());
    }
}

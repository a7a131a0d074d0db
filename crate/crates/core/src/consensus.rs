//! Consensus-based projected gradient methods for problems with a shared
//! decision variable: two distributed variants and the incremental cycle.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::Vector;
use crate::network::{
    average, check_joint_connectivity, disagreement, mix, round_messages, RoundLedger,
    WeightSchedule,
};
use crate::problem::{Point, ProblemDcx};
use crate::trace::{Recorder, RunOptions, RunTrace, TraceRow};

/// Objective-change window of the intrinsic stopping rule.
pub const STOP_WINDOW: usize = 50;

/// Membership tolerance for the per-iteration feasibility check.
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSizeRule {
    /// `alpha_k = a / (b + k)`.
    DiminishingHarmonic { a: f64, b: f64 },
    Constant { alpha: f64 },
}

impl StepSizeRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSizeRule::DiminishingHarmonic { a, b } => a > 0.0 && b > 0.0,
            StepSizeRule::Constant { alpha } => alpha > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("step-size parameters must be positive".into()))
        }
    }

    /// Step used at iteration `k` (0-based).
    pub fn alpha(&self, k: usize) -> f64 {
        match *self {
            StepSizeRule::DiminishingHarmonic { a, b } => a / (b + k as f64),
            StepSizeRule::Constant { alpha } => alpha,
        }
    }
}

impl Default for StepSizeRule {
    fn default() -> Self {
        StepSizeRule::DiminishingHarmonic { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub estimates: Vec<Vector>,
    pub iteration: usize,
}

impl ConsensusState {
    /// Every agent starts from the set's interior point.
    pub fn new(problem: &ProblemDcx) -> Self {
        Self {
            estimates: vec![problem.set.interior_point().clone(); problem.agents()],
            iteration: 0,
        }
    }

    pub fn average(&self) -> Vector {
        average(&self.estimates)
    }

    pub fn disagreement(&self) -> f64 {
        disagreement(&self.estimates)
    }
}

fn require_compact(problem: &ProblemDcx) -> Result<()> {
    if problem.set.is_box() || problem.set.bounding_box()?.is_some() {
        Ok(())
    } else {
        Err(Error::Incompatible(
            "consensus methods need a compact common set (bounded gradients)".into(),
        ))
    }
}

fn check_state(problem: &ProblemDcx, state: &ConsensusState) -> Result<()> {
    if state.estimates.len() != problem.agents() {
        return Err(dim_err("number of agent estimates", problem.agents(), state.estimates.len()));
    }
    if let Some(e) = state.estimates.iter().find(|e| e.len() != problem.dim()) {
        return Err(dim_err("estimate dimension", problem.dim(), e.len()));
    }
    Ok(())
}

/// Hypotheses of the convergence theorem for time-varying weights; a failure only warns.
pub fn check_dgp1_hypotheses(schedule: &WeightSchedule, tau: usize) -> bool {
    let ok = schedule.is_doubly_stochastic() && check_joint_connectivity(schedule, tau);
    if !ok {
        log::warn!("weights are not doubly stochastic and jointly connected; convergence is not guaranteed");
    }
    ok
}

/// Consensus round on the estimates, then a local projected gradient step.
pub fn dgp1_step(
    problem: &ProblemDcx,
    schedule: &WeightSchedule,
    state: &mut ConsensusState,
    rule: &StepSizeRule,
    ledger: &mut RoundLedger,
) -> Result<()> {
    check_state(problem, state)?;
    let gamma = schedule.at(state.iteration)?;
    if gamma.nrows() != problem.agents() {
        return Err(dim_err("weight matrix size", problem.agents(), gamma.nrows()));
    }
    let v = mix(gamma, &state.estimates);
    ledger.credit(round_messages(gamma, problem.dim()));
    let alpha = rule.alpha(state.iteration);
    let next = crate::parallel::map_indexed(problem.agents(), |i| {
        let step = &v[i] - problem.costs[i].gradient(&v[i]) * alpha;
        problem.set.project(&step)
    });
    state.estimates = next.into_iter().collect::<Result<_>>()?;
    state.iteration += 1;
    Ok(())
}

/// Local gradient step, `mu` consensus rounds on the stepped values, then projection.
pub fn dgp2_step(
    problem: &ProblemDcx,
    schedule: &WeightSchedule,
    mu: usize,
    state: &mut ConsensusState,
    alpha: f64,
    ledger: &mut RoundLedger,
) -> Result<()> {
    check_state(problem, state)?;
    if !schedule.is_constant() {
        return Err(Error::Incompatible(
            "the multi-round variant needs a fixed weight matrix".into(),
        ));
    }
    if mu == 0 {
        return Err(Error::Invalid("consensus depth must be at least 1".into()));
    }
    let gamma = schedule.at(0)?;
    if gamma.nrows() != problem.agents() {
        return Err(dim_err("weight matrix size", problem.agents(), gamma.nrows()));
    }
    let mut w: Vec<Vector> = crate::parallel::map_indexed(problem.agents(), |i| {
        let x = &state.estimates[i];
        x - problem.costs[i].gradient(x) * alpha
    });
    for _ in 0..mu {
        w = mix(gamma, &w);
        ledger.credit(round_messages(gamma, problem.dim()));
    }
    let next = crate::parallel::map_indexed(problem.agents(), |i| problem.set.project(&w[i]));
    state.estimates = next.into_iter().collect::<Result<_>>()?;
    state.iteration += 1;
    Ok(())
}

/// One pass of projected gradient sub-steps through the agents in `order`.
pub fn incremental_cycle(
    problem: &ProblemDcx,
    order: &[usize],
    z0: &Vector,
    alpha: f64,
) -> Result<Vector> {
    let mut seen = vec![false; problem.agents()];
    for &i in order {
        if i >= problem.agents() || seen[i] {
            return Err(Error::Invalid("order must be a permutation of the agents".into()));
        }
        seen[i] = true;
    }
    if order.len() != problem.agents() {
        return Err(Error::Invalid("order must visit every agent".into()));
    }
    if z0.len() != problem.dim() {
        return Err(dim_err("starting point", problem.dim(), z0.len()));
    }
    let mut z = z0.clone();
    for &i in order {
        let step = &z - problem.costs[i].gradient(&z) * alpha;
        z = problem.set.project(&step)?;
    }
    Ok(z)
}

/// Tracks `f(x_bar)` over the stopping window.
struct Window {
    values: VecDeque<f64>,
}

impl Window {
    fn new() -> Self {
        Self {
            values: VecDeque::with_capacity(STOP_WINDOW + 1),
        }
    }

    /// Push the newest value; true when it is within `eps` of the value `STOP_WINDOW` iterations back.
    fn push(&mut self, f: f64, eps: f64) -> bool {
        self.values.push_back(f);
        if self.values.len() > STOP_WINDOW + 1 {
            self.values.pop_front();
        }
        self.values.len() == STOP_WINDOW + 1 && (f - self.values[0]).abs() <= eps
    }
}

fn row(
    problem: &ProblemDcx,
    opts: &RunOptions,
    estimates: &[Vector],
    iter: usize,
    messages: u64,
) -> (TraceRow, Vector) {
    let xbar = average(estimates);
    let dist = match &opts.reference {
        Some(r) => estimates
            .iter()
            .map(|x| (x - &r.point.blocks[0]).norm())
            .fold(0.0, f64::max),
        None => f64::NAN,
    };
    (
        TraceRow {
            iter,
            primal_obj: problem.objective(&xbar),
            residual: disagreement(estimates),
            dist_to_oracle: dist,
            dual_value: f64::NAN,
            messages,
        },
        xbar,
    )
}

fn ensure_feasible(problem: &ProblemDcx, estimates: &[Vector]) -> Result<()> {
    if estimates.iter().all(|x| problem.set.contains(x, FEAS_TOL)) {
        Ok(())
    } else {
        Err(Error::Numerical("an estimate left the common set".into()))
    }
}

/// Run the single-round variant until the stopping rule or the cap.
pub fn run_dgp1(
    problem: &ProblemDcx,
    schedule: &WeightSchedule,
    rule: &StepSizeRule,
    opts: &RunOptions,
) -> Result<RunTrace> {
    rule.validate()?;
    require_compact(problem)?;
    check_dgp1_hypotheses(schedule, schedule.period());
    let mut rec = Recorder::new("dgp1", opts)?;
    let mut state = ConsensusState::new(problem);
    let mut ledger = RoundLedger::new();
    let mut window = Window::new();
    loop {
        dgp1_step(problem, schedule, &mut state, rule, &mut ledger)?;
        ensure_feasible(problem, &state.estimates)?;
        let (r, _) = row(problem, opts, &state.estimates, state.iteration, ledger.total());
        let settled = window.push(r.primal_obj, opts.eps);
        if rec.record(r, r.residual <= opts.eps && settled) {
            break;
        }
    }
    Ok(rec.finish(Point::single(state.average()), None))
}

/// Divisor of the default dgp2 step `1 / (DGP2_STEP_DIVISOR L_f)`. A constant
/// step leaves a disagreement proportional to it; at `1 / (2 L_f)` that floor
/// sits above `1e-2` on sensor paths of 20 agents.
pub const DGP2_STEP_DIVISOR: f64 = 8.0;

/// Default constant step `1 / (8 L_f)` with `L_f = max_i 2 lambda_max(H_i)`.
pub fn default_dgp2_step(problem: &ProblemDcx) -> f64 {
    let l = problem.max_lipschitz();
    if l > 0.0 {
        1.0 / (DGP2_STEP_DIVISOR * l)
    } else {
        1.0
    }
}

pub fn run_dgp2(
    problem: &ProblemDcx,
    schedule: &WeightSchedule,
    mu: usize,
    alpha: f64,
    opts: &RunOptions,
) -> Result<RunTrace> {
    if !(alpha > 0.0) {
        return Err(Error::Invalid("step size must be positive".into()));
    }
    require_compact(problem)?;
    if !schedule.persistent_graph().is_strongly_connected() {
        log::warn!("communication graph is not connected");
    }
    let mut rec = Recorder::new("dgp2", opts)?;
    let mut state = ConsensusState::new(problem);
    let mut ledger = RoundLedger::new();
    let mut window = Window::new();
    loop {
        dgp2_step(problem, schedule, mu, &mut state, alpha, &mut ledger)?;
        ensure_feasible(problem, &state.estimates)?;
        let (r, _) = row(problem, opts, &state.estimates, state.iteration, ledger.total());
        let settled = window.push(r.primal_obj, opts.eps);
        if rec.record(r, r.residual <= opts.eps && settled) {
            break;
        }
    }
    Ok(rec.finish(Point::single(state.average()), None))
}

/// Incremental method: one cycle per iteration, `M * n` scalars passed along the cycle.
pub fn run_incremental(
    problem: &ProblemDcx,
    order: &[usize],
    rule: &StepSizeRule,
    opts: &RunOptions,
) -> Result<RunTrace> {
    rule.validate()?;
    require_compact(problem)?;
    let mut rec = Recorder::new("incremental", opts)?;
    let mut z = problem.set.interior_point().clone();
    let mut window = Window::new();
    let per_cycle = (problem.agents() * problem.dim()) as u64;
    let mut k = 0;
    loop {
        z = incremental_cycle(problem, order, &z, rule.alpha(k))?;
        k += 1;
        ensure_feasible(problem, std::slice::from_ref(&z))?;
        let (r, _) = row(problem, opts, std::slice::from_ref(&z), k, per_cycle * k as u64);
        let settled = window.push(r.primal_obj, opts.eps);
        if rec.record(r, settled) {
            break;
        }
    }
    Ok(rec.finish(Point::single(z), None))
}

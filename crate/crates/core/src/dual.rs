//! Decomposition methods for problems with coupled constraints: primal
//! subgradient on resource allocations, dual subgradient, dual fast gradient
//! on the smoothed dual, and dual interior-point (Newton on the barrier dual).

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::consensus::StepSizeRule;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{regularized_cholesky, spectral_norm, Mat, Vector};
use crate::local_solver::{
    barrier_derivatives, solve_local_qp_from, solve_smoothed_from, LocalQp, ProxKind, QpStatus,
    DEFAULT_TOL,
};
use crate::network::RoundLedger;
use crate::problem::{Point, ProblemDccc, QuadCost};
use crate::trace::{Recorder, RunOptions, RunTrace, TraceRow};

/// Value, gradient and per-agent minimizers of the (smoothed) dual at one `lambda`.
#[derive(Debug, Clone)]
pub struct DualEval {
    pub value: f64,
    /// `sum_i G_i x^i(mu, lambda) - g`.
    pub gradient: Vector,
    pub x: Point,
}

#[derive(Debug, Clone)]
enum AgentSolver {
    /// Plain or quadratically smoothed QP; `base` already contains the prox shift.
    Qp { solver: LocalQp, base: Vector },
    Barrier { cost: QuadCost, last: Option<Vector> },
}

/// Per-agent inner solvers for repeated evaluations of `d_mu`.
#[derive(Debug, Clone)]
pub struct DualOracle<'a> {
    problem: &'a ProblemDccc,
    mu: f64,
    prox: ProxKind,
    tol: f64,
    agents: Vec<AgentSolver>,
}

impl<'a> DualOracle<'a> {
    pub fn new(problem: &'a ProblemDccc, mu: f64, prox: ProxKind, tol: f64) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::Invalid(format!("smoothing parameter must be >= 0, got {mu}")));
        }
        if prox == ProxKind::LogBarrier && mu == 0.0 {
            return Err(Error::Invalid("the barrier dual needs mu > 0".into()));
        }
        let mut agents = Vec::with_capacity(problem.agents());
        for (cost, set) in problem.costs.iter().zip(&problem.sets) {
            if mu == 0.0
                && !cost.is_positive_definite()
                && !set.is_box()
                && set.bounding_box()?.is_none()
            {
                return Err(Error::NotStronglyConvex);
            }
            agents.push(match prox {
                ProxKind::LogBarrier => AgentSolver::Barrier {
                    cost: cost.clone(),
                    last: None,
                },
                ProxKind::Quadratic => {
                    let mut h = cost.h.clone();
                    for k in 0..h.nrows() {
                        h[(k, k)] += 0.5 * mu;
                    }
                    AgentSolver::Qp {
                        solver: LocalQp::new(h, set, tol)?,
                        base: &cost.q - set.interior_point() * mu,
                    }
                }
            });
        }
        Ok(Self {
            problem,
            mu,
            prox,
            tol,
            agents,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Change the smoothing level, keeping warm starts where possible.
    pub fn set_mu(&mut self, mu: f64) -> Result<()> {
        if self.prox == ProxKind::LogBarrier && mu > 0.0 {
            self.mu = mu;
            return Ok(());
        }
        *self = Self::new(self.problem, mu, self.prox, self.tol)?;
        Ok(())
    }

    /// Prox term `P_i(x)` of agent `i`.
    fn prox_value(&self, i: usize, x: &Vector) -> f64 {
        let set = &self.problem.sets[i];
        match self.prox {
            ProxKind::Quadratic => 0.5 * (x - set.interior_point()).norm_squared(),
            ProxKind::LogBarrier => set.barrier_value(x).unwrap_or(f64::INFINITY),
        }
    }

    pub fn evaluate(&mut self, lambda: &Vector) -> Result<DualEval> {
        let p = self.problem;
        if lambda.len() != p.n_lambda() {
            return Err(dim_err("multiplier length", p.n_lambda(), lambda.len()));
        }
        let mu = self.mu;
        let tol = self.tol;
        let shifts: Vec<Vector> = (0..p.agents())
            .map(|i| p.coupling[i].tr_mul(lambda))
            .collect();
        let xs = crate::parallel::for_each_mut(&mut self.agents, |i, agent| -> Result<Vector> {
            match agent {
                AgentSolver::Qp { solver, base } => {
                    let sol = solver.solve(&(&*base + &shifts[i]))?;
                    match sol.status {
                        QpStatus::Infeasible => Err(Error::SubproblemInfeasible(i)),
                        QpStatus::MaxIter => {
                            log::warn!("agent {i}: inner solve stopped at kkt {:.2e}", sol.kkt_residual);
                            Ok(sol.x)
                        }
                        QpStatus::Optimal => Ok(sol.x),
                    }
                }
                AgentSolver::Barrier { cost, last } => {
                    let x = solve_smoothed_from(
                        cost,
                        &p.sets[i],
                        &shifts[i],
                        mu,
                        ProxKind::LogBarrier,
                        tol,
                        last.as_ref(),
                    )?;
                    if p.sets[i].barrier_value(&x).is_none() {
                        return Err(Error::Numerical(format!(
                            "agent {i}: barrier minimizer lost strict interiority"
                        )));
                    }
                    *last = Some(x.clone());
                    Ok(x)
                }
            }
        });
        let xs: Vec<Vector> = xs.into_iter().collect::<Result<_>>()?;
        let mut value = 0.0;
        for (i, x) in xs.iter().enumerate() {
            value += p.costs[i].value(x) + mu * self.prox_value(i, x) + shifts[i].dot(x);
        }
        value -= lambda.dot(&p.rhs);
        let x = Point::new(xs);
        Ok(DualEval {
            value,
            gradient: p.residual(&x),
            x,
        })
    }
}

/// One-shot evaluation of `d_mu(lambda)` and its (sub)gradient.
pub fn dual_value_and_subgradient(
    problem: &ProblemDccc,
    lambda: &Vector,
    mu: f64,
    prox: ProxKind,
) -> Result<(f64, Vector)> {
    let e = DualOracle::new(problem, mu, prox, DEFAULT_TOL)?.evaluate(lambda)?;
    Ok((e.value, e.gradient))
}

/// Hessian of the barrier-smoothed dual at the minimizers `x`:
/// `-sum_i G_i M_i G_i^T` with `M_i` the inverse of the inner Hessian on the set's equality manifold.
pub fn barrier_dual_hessian(problem: &ProblemDccc, mu: f64, x: &Point) -> Result<Mat> {
    let n_lambda = problem.n_lambda();
    let parts = crate::parallel::map_indexed(problem.agents(), |i| -> Result<(Vec<usize>, Mat)> {
        let set = &problem.sets[i];
        let xi = &x.blocks[i];
        let (_, bh) = barrier_derivatives(set, xi).ok_or_else(|| {
            Error::Numerical(format!("agent {i}: point is not strictly interior"))
        })?;
        let k = &problem.costs[i].h * 2.0 + bh * mu;
        let (chol, _) = regularized_cholesky(&k, 1e-14)
            .ok_or_else(|| Error::Numerical(format!("agent {i}: inner Hessian not factorizable")))?;
        let rows = problem.touched_rows(i);
        let g = &problem.coupling[i];
        let mut gt = Mat::zeros(g.ncols(), rows.len());
        for (c, &r) in rows.iter().enumerate() {
            gt.column_mut(c).copy_from(&g.row(r).transpose());
        }
        let kg = chol.solve(&gt);
        let mut z = gt.transpose() * &kg;
        if let Some((a, _)) = set.equalities() {
            let ka = chol.solve(&a.transpose());
            let s = a * &ka;
            let (sc, _) = regularized_cholesky(&s, 1e-14)
                .ok_or_else(|| Error::Numerical(format!("agent {i}: singular equality block")))?;
            let w = a * &kg;
            z -= w.transpose() * sc.solve(&w);
        }
        Ok((rows, z))
    });
    let mut h = Mat::zeros(n_lambda, n_lambda);
    for part in parts {
        let (rows, z) = part?;
        for (a, &ra) in rows.iter().enumerate() {
            for (b, &rb) in rows.iter().enumerate() {
                h[(ra, rb)] -= z[(a, b)];
            }
        }
    }
    Ok(h)
}

/// Scalars exchanged for one distributed multiplier update: each block owner
/// gathers its neighbors' primal blocks and returns its multiplier block to them.
pub fn ds_round_messages(problem: &ProblemDccc) -> u64 {
    let dims = problem.dims();
    problem
        .row_blocks
        .iter()
        .map(|b| {
            b.neighbors
                .iter()
                .filter(|&&j| j != b.owner)
                .map(|&j| (dims[j] + b.rows.len()) as u64)
                .sum::<u64>()
        })
        .sum()
}

/// Scalars exchanged with a central coordinator for one dual evaluation.
fn star_eval_messages(problem: &ProblemDccc) -> u64 {
    (0..problem.agents())
        .map(|i| 2 * problem.touched_rows(i).len() as u64 + 1)
        .sum()
}

fn star_hessian_messages(problem: &ProblemDccc) -> u64 {
    (0..problem.agents())
        .map(|i| {
            let t = problem.touched_rows(i).len() as u64;
            t * (t + 1) / 2
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: Vector,
    pub mu: f64,
    /// Accepted (non-extrapolated) multiplier of the fast gradient method.
    pub lambda_bar: Vector,
    /// Momentum scalar `t_k`.
    pub t: f64,
    /// Evaluation at `lambda` (at `lambda_bar` for the fast gradient method).
    pub eval: DualEval,
    pub iteration: usize,
}

impl DualState {
    pub fn start(oracle: &mut DualOracle, lambda0: Vector) -> Result<Self> {
        let eval = oracle.evaluate(&lambda0)?;
        Ok(Self {
            lambda_bar: lambda0.clone(),
            lambda: lambda0,
            mu: oracle.mu(),
            t: 1.0,
            eval,
            iteration: 0,
        })
    }
}

/// Primal point `x(mu, lambda)` of the current dual iterate and its coupling residual.
pub fn recover_primal(state: &DualState) -> (Point, Vector) {
    (state.eval.x.clone(), state.eval.gradient.clone())
}

/// Default dual subgradient step: `min(1, sigma_f) / ||G||^2` for strictly convex
/// costs, a harmonic rule scaled by `1 / ||G||^2` otherwise.
pub fn default_ds_rule(problem: &ProblemDccc) -> StepSizeRule {
    let g2 = problem.coupling_norm().powi(2).max(f64::MIN_POSITIVE);
    let sigma = problem.strong_convexity();
    if sigma > 0.0 {
        StepSizeRule::Constant {
            alpha: sigma.min(1.0) / g2,
        }
    } else {
        StepSizeRule::DiminishingHarmonic { a: 1.0 / g2, b: 1.0 }
    }
}

/// Multiplier ascent along the subgradient, then re-evaluation of the minimizers.
///
/// With `distributed` set each row block is updated by its owner from neighbor
/// data only; the result is bitwise identical to the stacked update.
pub fn ds_step(
    oracle: &mut DualOracle,
    state: &mut DualState,
    rule: &StepSizeRule,
    distributed: bool,
    ledger: &mut RoundLedger,
) -> Result<()> {
    let p = oracle.problem;
    let alpha = rule.alpha(state.iteration);
    if distributed {
        for block in &p.row_blocks {
            let r = p.block_residual(block, &state.eval.x);
            for (k, &row) in block.rows.iter().enumerate() {
                state.lambda[row] += alpha * r[k];
            }
        }
        ledger.credit(ds_round_messages(p));
    } else {
        let r = &state.eval.gradient;
        for row in 0..p.n_lambda() {
            state.lambda[row] += alpha * r[row];
        }
        ledger.credit(star_eval_messages(p));
    }
    state.lambda_bar = state.lambda.clone();
    state.eval = oracle.evaluate(&state.lambda)?;
    state.iteration += 1;
    Ok(())
}

/// Sup of `1/2 ||x - x_c||^2` over each local set (through its bounding box), maximized over agents.
pub fn prox_diameter(problem: &ProblemDccc) -> Result<f64> {
    let mut d: f64 = 0.0;
    for set in &problem.sets {
        let (lo, hi) = set.bounding_box()?.ok_or_else(|| {
            Error::Incompatible("quadratic smoothing needs bounded local sets".into())
        })?;
        let c = set.interior_point();
        let s: f64 = (0..c.len())
            .map(|k| (hi[k] - c[k]).abs().max((c[k] - lo[k]).abs()).powi(2))
            .sum();
        d = d.max(0.5 * s);
    }
    Ok(d)
}

/// Smoothing level `eps / (2 D_P)` for a target accuracy `eps`.
pub fn dfg_mu(problem: &ProblemDccc, eps: f64) -> Result<f64> {
    let d = prox_diameter(problem)?;
    Ok(if d > 0.0 { eps / (2.0 * d) } else { eps })
}

/// `||G||^2 / (sigma_f + mu)`.
pub fn dfg_lipschitz(problem: &ProblemDccc, mu: f64) -> f64 {
    problem.coupling_norm().powi(2) / (problem.strong_convexity() + mu)
}

/// Companion state of the fast gradient method.
#[derive(Debug, Clone)]
pub struct Momentum {
    /// Extrapolated point and its evaluation (reused when it equals `lambda_bar`).
    pub y: Vector,
    pub y_eval: Option<DualEval>,
    /// Disable the monotone restart guard (plain accelerated scheme).
    pub restart: bool,
    /// Force `beta_k = 0`.
    pub no_momentum: bool,
    pub restarts: usize,
}

impl Momentum {
    pub fn new(state: &DualState) -> Self {
        Self {
            y: state.lambda_bar.clone(),
            y_eval: Some(state.eval.clone()),
            restart: true,
            no_momentum: false,
            restarts: 0,
        }
    }
}

/// One accelerated gradient-ascent step on `d_mu` with step `1 / l`.
pub fn dfg_step(
    oracle: &mut DualOracle,
    state: &mut DualState,
    mom: &mut Momentum,
    l: f64,
    ledger: &mut RoundLedger,
) -> Result<()> {
    if !(oracle.mu() > 0.0) || oracle.prox != ProxKind::Quadratic {
        return Err(Error::Invalid(
            "the fast gradient method needs quadratic smoothing with mu > 0".into(),
        ));
    }
    let p = oracle.problem;
    let y_eval = match mom.y_eval.take() {
        Some(e) => e,
        None => {
            ledger.credit(ds_round_messages(p));
            oracle.evaluate(&mom.y)?
        }
    };
    let new_bar = &mom.y + &y_eval.gradient / l;
    let new_eval = oracle.evaluate(&new_bar)?;
    ledger.credit(ds_round_messages(p));
    let tiny = 1e-14 * (1.0 + state.eval.value.abs());
    if mom.restart && new_eval.value < state.eval.value - tiny {
        // reject and restart the momentum from the last accepted point
        mom.restarts += 1;
        state.t = 1.0;
        mom.y = state.lambda_bar.clone();
        mom.y_eval = Some(state.eval.clone());
    } else {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * state.t * state.t).sqrt());
        let beta = if mom.no_momentum {
            0.0
        } else {
            (state.t - 1.0) / t_next
        };
        mom.y = &new_bar + (&new_bar - &state.lambda_bar) * beta;
        mom.y_eval = if beta == 0.0 {
            Some(new_eval.clone())
        } else {
            None
        };
        state.t = t_next;
        state.lambda_bar = new_bar;
        state.eval = new_eval;
    }
    state.lambda = mom.y.clone();
    state.iteration += 1;
    Ok(())
}

/// Barrier-continuation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipParams {
    /// Decrease factor of the barrier weight.
    pub theta: f64,
    pub mu0: f64,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    /// Centering accuracy: advance when `decrement^2 <= center * mu`.
    pub center: f64,
    pub max_backtrack: usize,
    /// Tikhonov shift added to the negated dual Hessian.
    pub regularization: f64,
}

impl Default for DipParams {
    fn default() -> Self {
        Self {
            theta: 0.2,
            mu0: 1.0,
            armijo: 0.1,
            center: 0.1,
            max_backtrack: 50,
            regularization: 1e-12,
        }
    }
}

/// Newton ascent direction `(-H + delta I)^{-1} grad` and the squared decrement.
pub fn dip_direction(hessian: &Mat, gradient: &Vector, delta: f64) -> Result<(Vector, f64)> {
    let neg = -hessian;
    let (chol, _) = regularized_cholesky(&neg, delta)
        .ok_or_else(|| Error::Numerical("dual Hessian could not be regularized".into()))?;
    let dir = chol.solve(gradient);
    let dec2 = gradient.dot(&dir).max(0.0);
    Ok((dir, dec2))
}

fn total_barrier_complexity(problem: &ProblemDccc) -> f64 {
    problem
        .sets
        .iter()
        .map(|s| s.barrier_complexity() as f64)
        .sum::<f64>()
        .max(1.0)
}

/// Damped Newton step with Armijo backtracking on `d_mu`.
fn dip_newton_step(
    oracle: &mut DualOracle,
    state: &mut DualState,
    dir: &Vector,
    dec2: f64,
    params: &DipParams,
    ledger: &mut RoundLedger,
) -> Result<()> {
    let p = oracle.problem;
    let mut s = 1.0;
    for _ in 0..params.max_backtrack {
        let cand = &state.lambda + dir * s;
        let e = oracle.evaluate(&cand)?;
        ledger.credit(star_eval_messages(p));
        if e.value >= state.eval.value + params.armijo * s * dec2 {
            state.lambda = cand;
            state.lambda_bar = state.lambda.clone();
            state.eval = e;
            return Ok(());
        }
        s *= 0.5;
    }
    log::warn!("dual Newton line search failed; keeping the current multiplier");
    // the failed trial may have moved warm starts; re-evaluate at the kept point
    state.eval = oracle.evaluate(&state.lambda)?;
    Ok(())
}

/// Primal subgradient method: allocations `t^1..t^{M-1}` of the coupled resource.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub t: Vec<Vector>,
}

/// Range bases and the feasible-direction subspace of the allocation master problem.
#[derive(Debug, Clone)]
pub struct PsSetup {
    /// Orthonormal basis of `range(G_i)`.
    basis: Vec<Mat>,
    /// `Q_i^T G_i`.
    reduced: Vec<Mat>,
    /// Orthonormal basis (in reduced coordinates) of directions keeping `t^M` in `range(G_M)`.
    null: Mat,
}

fn range_basis(g: &Mat) -> Mat {
    let svd = g.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = 1e-10 * smax.max(1e-300) * (g.nrows().max(g.ncols()) as f64);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > cut)
        .collect();
    let mut q = Mat::zeros(g.nrows(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        q.column_mut(c).copy_from(&u.column(k));
    }
    q
}

impl PsSetup {
    pub fn new(problem: &ProblemDccc) -> Self {
        let m = problem.agents();
        let basis: Vec<Mat> = problem.coupling.iter().map(range_basis).collect();
        let reduced = basis
            .iter()
            .zip(&problem.coupling)
            .map(|(q, g)| q.transpose() * g)
            .collect();
        let nl = problem.n_lambda();
        let r: usize = basis.iter().take(m.saturating_sub(1)).map(|q| q.ncols()).sum();
        let null = if m <= 1 || r == 0 {
            Mat::zeros(r, 0)
        } else {
            let qm = &basis[m - 1];
            let proj = Mat::identity(nl, nl) - qm * qm.transpose();
            let mut b = Mat::zeros(nl, r);
            let mut off = 0;
            for q in basis.iter().take(m - 1) {
                b.columns_mut(off, q.ncols()).copy_from(&(&proj * q));
                off += q.ncols();
            }
            let eig = SymmetricEigen::new(b.transpose() * &b);
            let keep: Vec<usize> = (0..r).filter(|&k| eig.eigenvalues[k] <= 1e-10).collect();
            let mut n = Mat::zeros(r, keep.len());
            for (c, &k) in keep.iter().enumerate() {
                n.column_mut(c).copy_from(&eig.eigenvectors.column(k));
            }
            n
        };
        Self {
            basis,
            reduced,
            null,
        }
    }

    /// Project allocation directions `d^1..d^{M-1}` onto the feasible subspace.
    fn project(&self, d: &[Vector]) -> Vec<Vector> {
        let mut a = Vec::new();
        for (q, di) in self.basis.iter().zip(d) {
            a.extend((q.transpose() * di).iter().copied());
        }
        let a = Vector::from_vec(a);
        let a = &self.null * (self.null.transpose() * a);
        let mut out = Vec::with_capacity(d.len());
        let mut off = 0;
        for q in self.basis.iter().take(d.len()) {
            out.push(q * a.rows(off, q.ncols()));
            off += q.ncols();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PsState {
    pub alloc: Allocation,
    /// Subproblem minimizers, all `M` agents.
    pub x: Vec<Vector>,
    /// Subproblem multipliers `lambda^i(t^i)` in the coupling row space.
    pub lambdas: Vec<Vector>,
    pub iteration: usize,
}

impl PsState {
    pub fn point(&self) -> Point {
        Point::new(self.x.clone())
    }
}

fn last_allocation(problem: &ProblemDccc, alloc: &Allocation) -> Vector {
    let mut t = problem.rhs.clone();
    for ti in &alloc.t {
        t -= ti;
    }
    t
}

/// Solve every `P^i` at the allocation; `Err(SubproblemInfeasible(i))` on the first failure.
fn solve_subproblems(
    problem: &ProblemDccc,
    setup: &PsSetup,
    alloc: &Allocation,
    warm: Option<&[Vector]>,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let m = problem.agents();
    let t_last = last_allocation(problem, alloc);
    let sols = crate::parallel::map_indexed(m, |i| -> Result<(Vector, Vector)> {
        let t = if i + 1 == m { &t_last } else { &alloc.t[i] };
        let q = &setup.basis[i];
        let rhs = q.transpose() * t;
        let a = &setup.reduced[i];
        let eq = if a.nrows() > 0 { Some((a, &rhs)) } else { None };
        let sol = solve_local_qp_from(
            &problem.costs[i],
            &problem.sets[i],
            eq,
            DEFAULT_TOL,
            warm.map(|w| &w[i]),
        )?;
        if sol.status == QpStatus::Infeasible {
            return Err(Error::SubproblemInfeasible(i));
        }
        if sol.status == QpStatus::MaxIter {
            log::warn!("subproblem {i}: inner solve stopped at kkt {:.2e}", sol.kkt_residual);
        }
        let lambda = if a.nrows() > 0 {
            q * &sol.eq_multipliers
        } else {
            Vector::zeros(problem.n_lambda())
        };
        Ok((sol.x, lambda))
    });
    let mut xs = Vec::with_capacity(m);
    let mut ls = Vec::with_capacity(m);
    for s in sols {
        let (x, l) = s?;
        xs.push(x);
        ls.push(l);
    }
    Ok((xs, ls))
}

impl PsState {
    /// Initial allocation `t^i = G_i x_c^i` for `i < M`; agent `M` takes the remainder,
    /// which must lie in `range(G_M)`.
    pub fn start(problem: &ProblemDccc, setup: &PsSetup) -> Result<Self> {
        let xc = problem.interior_point();
        let m = problem.agents();
        let alloc = Allocation {
            t: (0..m - 1)
                .map(|i| &problem.coupling[i] * &xc.blocks[i])
                .collect(),
        };
        let t_last = last_allocation(problem, &alloc);
        let q = &setup.basis[m - 1];
        let off_range = &t_last - q * (q.transpose() * &t_last);
        if off_range.amax() > 1e-9 * (1.0 + t_last.amax()) {
            return Err(Error::Incompatible(
                "the remaining allocation is outside the range of the last agent's coupling".into(),
            ));
        }
        let (x, lambdas) = solve_subproblems(problem, setup, &alloc, None)?;
        Ok(Self {
            alloc,
            x,
            lambdas,
            iteration: 0,
        })
    }

    /// Projected subgradient `-(lambda^M - lambda^i)` restricted to feasible allocation moves.
    pub fn direction(&self, setup: &PsSetup) -> Vec<Vector> {
        let m = self.x.len();
        if m <= 1 {
            return Vec::new();
        }
        let lm = &self.lambdas[m - 1];
        let raw: Vec<Vector> = (0..m - 1).map(|i| &self.lambdas[i] - lm).collect();
        setup.project(&raw)
    }
}

/// Default primal step `1 / (M max_i L_i)` from the curvature of the subproblem values.
pub fn default_ps_rule(problem: &ProblemDccc, setup: &PsSetup) -> StepSizeRule {
    let mut lmax: f64 = 0.0;
    for i in 0..problem.agents() {
        let a = &setup.reduced[i];
        if a.nrows() == 0 {
            continue;
        }
        let p = &problem.costs[i].h * 2.0;
        let curv = regularized_cholesky(&p, 1e-12).map(|(ch, _)| {
            let s = a * ch.solve(&a.transpose());
            crate::linalg::sym_eig_range(&s).0
        });
        match curv {
            Some(c) if c > 1e-12 && problem.costs[i].is_positive_definite() => lmax = lmax.max(1.0 / c),
            _ => {
                let g2 = problem.coupling_norm().powi(2).max(f64::MIN_POSITIVE);
                return StepSizeRule::DiminishingHarmonic { a: 1.0 / g2, b: 1.0 };
            }
        }
    }
    let m = problem.agents() as f64;
    StepSizeRule::Constant {
        alpha: if lmax > 0.0 { 1.0 / (m * lmax) } else { 1.0 },
    }
}

/// One allocation update; the step is halved (up to 30 times) while a subproblem is infeasible.
pub fn ps_step(
    problem: &ProblemDccc,
    setup: &PsSetup,
    state: &mut PsState,
    rule: &StepSizeRule,
    ledger: &mut RoundLedger,
) -> Result<()> {
    let m = problem.agents();
    if m <= 1 {
        state.iteration += 1;
        return Ok(());
    }
    let dir = state.direction(setup);
    let mut alpha = rule.alpha(state.iteration);
    let nl = problem.n_lambda() as u64;
    for attempt in 0..=30 {
        let cand = Allocation {
            t: state
                .alloc
                .t
                .iter()
                .zip(&dir)
                .map(|(t, d)| t + d * alpha)
                .collect(),
        };
        match solve_subproblems(problem, setup, &cand, Some(&state.x)) {
            Ok((x, l)) => {
                // every agent reports its multiplier to the coordinator, which returns the allocation
                ledger.credit(2 * nl * (m as u64 - 1) + nl);
                state.alloc = cand;
                state.x = x;
                state.lambdas = l;
                state.iteration += 1;
                return Ok(());
            }
            Err(Error::SubproblemInfeasible(i)) => {
                if attempt == 30 {
                    return Err(Error::SubproblemInfeasible(i));
                }
                alpha *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

fn dual_row(
    problem: &ProblemDccc,
    opts: &RunOptions,
    iter: usize,
    x: &Point,
    residual: &Vector,
    dual_value: f64,
    messages: u64,
) -> TraceRow {
    TraceRow {
        iter,
        primal_obj: problem.objective(x),
        residual: residual.amax(),
        dist_to_oracle: opts.distance(x),
        dual_value,
        messages,
    }
}

/// Primal-dual agreement: residual and relative gap both within `eps`.
fn gap_met(primal: f64, dual: f64, residual: f64, eps: f64) -> bool {
    residual <= eps && (primal - dual).abs() <= eps * primal.abs().max(1.0)
}

pub fn run_ps(problem: &ProblemDccc, rule: Option<StepSizeRule>, opts: &RunOptions) -> Result<RunTrace> {
    let setup = PsSetup::new(problem);
    let rule = rule.unwrap_or_else(|| default_ps_rule(problem, &setup));
    rule.validate()?;
    let mut rec = Recorder::new("ps", opts)?;
    let mut state = PsState::start(problem, &setup)?;
    let mut ledger = RoundLedger::new();
    loop {
        let x = state.point();
        let res = problem.residual(&x);
        let dir = state.direction(&setup);
        let dnorm = dir.iter().map(|d| d.amax()).fold(0.0, f64::max);
        let row = dual_row(problem, opts, state.iteration + 1, &x, &res, f64::NAN, ledger.total());
        if rec.record(row, dnorm <= opts.eps) {
            break;
        }
        ps_step(problem, &setup, &mut state, &rule, &mut ledger)?;
    }
    let lambda = state.lambdas.last().cloned();
    Ok(rec.finish(state.point(), lambda))
}

pub fn run_ds(
    problem: &ProblemDccc,
    rule: Option<StepSizeRule>,
    distributed: bool,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let rule = rule.unwrap_or_else(|| default_ds_rule(problem));
    rule.validate()?;
    let mut rec = Recorder::new("ds", opts)?;
    let mut oracle = DualOracle::new(problem, 0.0, ProxKind::Quadratic, DEFAULT_TOL)?;
    let mut state = DualState::start(&mut oracle, Vector::zeros(problem.n_lambda()))?;
    let mut ledger = RoundLedger::new();
    loop {
        let e = &state.eval;
        let row = dual_row(problem, opts, state.iteration + 1, &e.x, &e.gradient, e.value, ledger.total());
        if rec.record(row, gap_met(row.primal_obj, e.value, row.residual, opts.eps)) {
            break;
        }
        ds_step(&mut oracle, &mut state, &rule, distributed, &mut ledger)?;
    }
    Ok(rec.finish(state.eval.x.clone(), Some(state.lambda)))
}

/// Fast gradient run at fixed smoothing; `mu = None` picks `eps / (2 D_P)`.
pub fn run_dfg(problem: &ProblemDccc, mu: Option<f64>, opts: &RunOptions) -> Result<RunTrace> {
    let mu = match mu {
        Some(m) => m,
        None => dfg_mu(problem, opts.eps)?,
    };
    if !(mu > 0.0) {
        return Err(Error::Invalid("the fast gradient method needs mu > 0".into()));
    }
    let l = dfg_lipschitz(problem, mu);
    let mut rec = Recorder::new("dfg", opts)?;
    let mut oracle = DualOracle::new(problem, mu, ProxKind::Quadratic, DEFAULT_TOL)?;
    let mut state = DualState::start(&mut oracle, Vector::zeros(problem.n_lambda()))?;
    let mut mom = Momentum::new(&state);
    let mut ledger = RoundLedger::new();
    ledger.credit(ds_round_messages(problem));
    loop {
        let e = &state.eval;
        let row = dual_row(problem, opts, state.iteration + 1, &e.x, &e.gradient, e.value, ledger.total());
        if rec.record(row, gap_met(row.primal_obj, e.value, row.residual, opts.eps)) {
            break;
        }
        dfg_step(&mut oracle, &mut state, &mut mom, l, &mut ledger)?;
    }
    Ok(rec.finish(state.eval.x.clone(), Some(state.lambda_bar)))
}

/// Dual interior-point method: damped Newton ascent on the barrier dual with
/// the barrier weight decreased geometrically once each stage is centered.
pub fn dip_solve(problem: &ProblemDccc, params: &DipParams, opts: &RunOptions) -> Result<RunTrace> {
    if !(params.theta > 0.0 && params.theta < 1.0 && params.mu0 > 0.0) {
        return Err(Error::Invalid("barrier schedule needs 0 < theta < 1 and mu0 > 0".into()));
    }
    let nu = total_barrier_complexity(problem);
    let mut rec = Recorder::new("dip", opts)?;
    let mut oracle = DualOracle::new(problem, params.mu0, ProxKind::LogBarrier, DEFAULT_TOL)?;
    let mut state = DualState::start(&mut oracle, Vector::zeros(problem.n_lambda()))?;
    let mut ledger = RoundLedger::new();
    ledger.credit(star_eval_messages(problem));
    loop {
        let (dir, dec2) = loop {
            let h = barrier_dual_hessian(problem, state.mu, &state.eval.x)?;
            ledger.credit(star_hessian_messages(problem));
            let delta = params.regularization * (1.0 + h.amax());
            let (dir, dec2) = dip_direction(&h, &state.eval.gradient, delta)?;
            if dec2 <= params.center * state.mu && state.mu * nu > opts.eps {
                state.mu *= params.theta;
                oracle.set_mu(state.mu)?;
                state.eval = oracle.evaluate(&state.lambda)?;
                ledger.credit(star_eval_messages(problem));
                continue;
            }
            break (dir, dec2);
        };
        let e = &state.eval;
        let row = dual_row(problem, opts, state.iteration + 1, &e.x, &e.gradient, e.value, ledger.total());
        let intrinsic = state.mu * nu <= opts.eps && row.residual <= opts.eps && dec2 <= opts.eps;
        if rec.record(row, intrinsic) {
            break;
        }
        dip_newton_step(&mut oracle, &mut state, &dir, dec2, params, &mut ledger)?;
        state.iteration += 1;
    }
    Ok(rec.finish(state.eval.x.clone(), Some(state.lambda)))
}

/// Largest absolute singular value of the stacked coupling; exposed for step-size reporting.
pub fn coupling_norm(problem: &ProblemDccc) -> f64 {
    spectral_norm(&problem.stacked_coupling())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_solver::finite_diff_gradient;
    use crate::problem::FeasibleSet;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    /// min x1^2 + x2^2 s.t. x1 + x2 = 1, boxes [-10, 10].
    fn toy() -> ProblemDccc {
        ProblemDccc::new(
            vec![QuadCost::new(Mat::identity(1, 1), v(&[0.0])).unwrap(); 2],
            vec![FeasibleSet::cube(1, 10.0).unwrap(); 2],
            vec![Mat::from_element(1, 1, 1.0); 2],
            v(&[1.0]),
        )
        .unwrap()
    }

    #[test]
    fn toy_dual_values() {
        let p = toy();
        let (d, g) = dual_value_and_subgradient(&p, &v(&[-1.0]), 0.0, ProxKind::Quadratic).unwrap();
        assert!(g.amax() < 1e-9);
        assert!((d - 0.5).abs() < 1e-9);
        let (_, g0) = dual_value_and_subgradient(&p, &v(&[0.0]), 0.0, ProxKind::Quadratic).unwrap();
        assert!((g0[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ds_first_step_and_convergence() {
        let p = toy();
        let mut oracle = DualOracle::new(&p, 0.0, ProxKind::Quadratic, DEFAULT_TOL).unwrap();
        let mut st = DualState::start(&mut oracle, v(&[0.0])).unwrap();
        let mut ledger = RoundLedger::new();
        ds_step(&mut oracle, &mut st, &StepSizeRule::Constant { alpha: 0.5 }, false, &mut ledger).unwrap();
        assert_eq!(st.lambda[0], -0.5);
        let t = run_ds(&p, Some(StepSizeRule::DiminishingHarmonic { a: 1.0, b: 1.0 }), true, &RunOptions::new(1e-4, 5000)).unwrap();
        assert!((t.multipliers.unwrap()[0] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn dfg_multiplier_within_smoothing_bias() {
        let p = toy();
        let mu = 1e-3;
        let t = run_dfg(&p, Some(mu), &RunOptions::new(1e-8, 5000)).unwrap();
        let lam = t.multipliers.unwrap()[0];
        assert!((lam + 1.0).abs() <= 10.0 * mu * 400.0);
    }

    #[test]
    fn dfg_gradient_matches_finite_differences() {
        let p = toy();
        let mu = 0.1;
        for &l in &[-3.0, -1.2, 0.0, 0.7, 2.5] {
            let (_, g) = dual_value_and_subgradient(&p, &v(&[l]), mu, ProxKind::Quadratic).unwrap();
            let fd = finite_diff_gradient(
                |x| dual_value_and_subgradient(&p, x, mu, ProxKind::Quadratic).unwrap().0,
                &v(&[l]),
                1e-5,
            );
            assert!((g[0] - fd[0]).abs() <= 1e-5 * g[0].abs().max(1.0));
        }
    }

    #[test]
    fn dip_reaches_toy_multiplier() {
        let p = toy();
        let t = dip_solve(&p, &DipParams::default(), &RunOptions::new(1e-4, 300)).unwrap();
        assert_eq!(t.summary.status, crate::trace::RunStatus::Converged);
        assert!((t.multipliers.unwrap()[0] + 1.0).abs() <= 1e-4);
    }

    #[test]
    fn dip_hessian_negative_and_matches_fd() {
        let p = toy();
        let mu = 0.5;
        for &l in &[-2.0, -0.3, 1.1] {
            let mut o = DualOracle::new(&p, mu, ProxKind::LogBarrier, 1e-12).unwrap();
            let e = o.evaluate(&v(&[l])).unwrap();
            let h = barrier_dual_hessian(&p, mu, &e.x).unwrap();
            assert!(h[(0, 0)] < 0.0);
            let grad = |x: &Vector| {
                DualOracle::new(&p, mu, ProxKind::LogBarrier, 1e-12)
                    .unwrap()
                    .evaluate(x)
                    .unwrap()
                    .gradient[0]
            };
            let fd = finite_diff_gradient(grad, &v(&[l]), 1e-4)[0];
            assert!((h[(0, 0)] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn ps_examples() {
        let p = toy();
        let setup = PsSetup::new(&p);
        let mut st = PsState::start(&p, &setup).unwrap();
        // interior points are 0, so x^2 = 1 is forced: lambda^2 = -2
        assert!(st.lambdas[0].amax() < 1e-9);
        assert!((st.lambdas[1][0] + 2.0).abs() < 1e-8);
        let mut ledger = RoundLedger::new();
        ps_step(&p, &setup, &mut st, &StepSizeRule::Constant { alpha: 0.1 }, &mut ledger).unwrap();
        assert!((st.alloc.t[0][0] - 0.2).abs() < 1e-8);
        let t = run_ps(&p, None, &RunOptions::new(1e-8, 1000)).unwrap();
        assert!((t.point.blocks[0][0] - 0.5).abs() < 1e-6);
        for r in &t.rows {
            assert!(r.residual <= 1e-9);
        }
    }

    #[test]
    fn distributed_ds_is_bitwise_centralized() {
        let p = ProblemDccc::new(
            vec![
                QuadCost::new(Mat::identity(2, 2), v(&[0.3, -0.1])).unwrap(),
                QuadCost::new(Mat::identity(1, 1) * 2.0, v(&[0.5])).unwrap(),
                QuadCost::new(Mat::identity(2, 2) * 0.7, v(&[-0.2, 0.4])).unwrap(),
            ],
            vec![
                FeasibleSet::cube(2, 1.0).unwrap(),
                FeasibleSet::cube(1, 1.0).unwrap(),
                FeasibleSet::cube(2, 1.0).unwrap(),
            ],
            vec![
                Mat::from_row_slice(3, 2, &[1.0, -0.5, 0.0, 0.0, 0.0, 0.0]),
                Mat::from_row_slice(3, 1, &[0.7, 1.0, 0.0]),
                Mat::from_row_slice(3, 2, &[0.0, 0.0, 0.3, -1.0, 1.0, 0.2]),
            ],
            v(&[0.1, -0.2, 0.3]),
        )
        .unwrap();
        let rule = StepSizeRule::Constant { alpha: 0.3 };
        let mut o1 = DualOracle::new(&p, 0.0, ProxKind::Quadratic, DEFAULT_TOL).unwrap();
        let mut o2 = o1.clone();
        let mut a = DualState::start(&mut o1, Vector::zeros(3)).unwrap();
        let mut b = DualState::start(&mut o2, Vector::zeros(3)).unwrap();
        let mut l1 = RoundLedger::new();
        let mut l2 = RoundLedger::new();
        for _ in 0..30 {
            ds_step(&mut o1, &mut a, &rule, true, &mut l1).unwrap();
            ds_step(&mut o2, &mut b, &rule, false, &mut l2).unwrap();
            for k in 0..3 {
                assert_eq!(a.lambda[k].to_bits(), b.lambda[k].to_bits());
            }
        }
    }
}

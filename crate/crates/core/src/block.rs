//! Block methods for coupled-cost problems: Jacobi, Gauss-Seidel (optionally
//! colored), randomized coordinate descent, weighted cooperative Jacobi and
//! feasible directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Mat, Vector};
use crate::local_solver::{LocalQp, QpStatus, DEFAULT_TOL};
use crate::network::RoundLedger;
use crate::problem::{Point, ProblemCcdc};
use crate::trace::{Recorder, RunOptions, RunTrace, TraceRow};

/// Armijo sufficient-decrease constant of the feasible-directions method.
pub const ARMIJO_C: f64 = 1e-4;
/// Backtracking halvings before a block is frozen.
pub const ARMIJO_MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone)]
pub struct BlockState {
    pub x: Point,
    pub iteration: usize,
    pub coloring: Option<Vec<usize>>,
    /// Block Lipschitz constants `2 ||H_ii||_2` for coordinate descent.
    pub lipschitz: Vec<f64>,
    /// Block-maximum-norm weights; only `zeta_i = 1` is used.
    pub zeta: Vec<f64>,
}

impl BlockState {
    /// Start from the stored interior points.
    pub fn new(problem: &ProblemCcdc) -> Self {
        Self::from_point(
            problem,
            Point::new(problem.sets.iter().map(|s| s.interior_point().clone()).collect()),
        )
    }

    pub fn from_point(problem: &ProblemCcdc, x: Point) -> Self {
        Self {
            x,
            iteration: 0,
            coloring: None,
            lipschitz: (0..problem.agents())
                .map(|i| 2.0 * spectral_norm(&problem.diagonal_block(i)))
                .collect(),
            zeta: vec![1.0; problem.agents()],
        }
    }
}

/// Cached block QP solvers over `X^i` with curvature `H_ii`.
#[derive(Debug, Clone)]
pub struct BlockSolvers {
    solvers: Vec<LocalQp>,
}

impl BlockSolvers {
    /// Fails with `NonStrictBlock(i)` when `H_ii` is not positive definite.
    pub fn new(problem: &ProblemCcdc) -> Result<Self> {
        let mut solvers = Vec::with_capacity(problem.agents());
        for i in 0..problem.agents() {
            let h = problem.diagonal_block(i);
            let cost = crate::problem::QuadCost::new(h.clone(), Vector::zeros(h.nrows()))?;
            if !cost.is_positive_definite() {
                return Err(Error::NonStrictBlock(i));
            }
            solvers.push(LocalQp::new(h, &problem.sets[i], DEFAULT_TOL)?);
        }
        Ok(Self { solvers })
    }
}

fn block_minimizer(problem: &ProblemCcdc, solver: &mut LocalQp, x: &Point, i: usize) -> Result<Vector> {
    let sol = solver.solve(&problem.block_linear_term(x, i))?;
    match sol.status {
        QpStatus::Infeasible => Err(Error::SubproblemInfeasible(i)),
        QpStatus::MaxIter => {
            log::warn!("block {i}: inner solve stopped at kkt {:.2e}", sol.kkt_residual);
            Ok(sol.x)
        }
        QpStatus::Optimal => Ok(sol.x),
    }
}

/// All block minimizers against the current iterate, computed in parallel.
fn jacobi_candidates(problem: &ProblemCcdc, solvers: &mut BlockSolvers, x: &Point) -> Result<Vec<Vector>> {
    crate::parallel::for_each_mut(&mut solvers.solvers, |i, s| block_minimizer(problem, s, x, i))
        .into_iter()
        .collect()
}

/// Scalars sent when every agent shares its block with its cost neighbors.
pub fn exchange_messages(problem: &ProblemCcdc) -> u64 {
    let dims = problem.dims();
    (0..problem.agents())
        .map(|i| (problem.neighbors(i).len() * dims[i]) as u64)
        .sum()
}

pub fn jacobi_step(
    problem: &ProblemCcdc,
    solvers: &mut BlockSolvers,
    state: &mut BlockState,
    ledger: &mut RoundLedger,
) -> Result<()> {
    let cand = jacobi_candidates(problem, solvers, &state.x)?;
    state.x = Point::new(cand);
    ledger.credit(exchange_messages(problem));
    state.iteration += 1;
    Ok(())
}

/// Smallest-available-color assignment on the block adjacency graph.
pub fn greedy_coloring(problem: &ProblemCcdc) -> Vec<usize> {
    let m = problem.agents();
    let mut colors = vec![usize::MAX; m];
    for i in 0..m {
        let used: Vec<usize> = problem
            .neighbors(i)
            .into_iter()
            .map(|j| colors[j])
            .filter(|&c| c != usize::MAX)
            .collect();
        colors[i] = (0..).find(|c| !used.contains(c)).unwrap_or(0);
    }
    colors
}

pub fn validate_coloring(problem: &ProblemCcdc, colors: &[usize]) -> Result<()> {
    if colors.len() != problem.agents() {
        return Err(crate::error::dim_err("coloring length", problem.agents(), colors.len()));
    }
    for i in 0..problem.agents() {
        for j in problem.neighbors(i) {
            if colors[i] == colors[j] {
                return Err(Error::InvalidColoring(i.min(j), i.max(j)));
            }
        }
    }
    Ok(())
}

/// Sequential sweep in `order` with the freshest values; with a coloring in the
/// state, blocks of one color are solved together, colors in increasing order.
pub fn gauss_seidel_step(
    problem: &ProblemCcdc,
    solvers: &mut BlockSolvers,
    state: &mut BlockState,
    order: &[usize],
    ledger: &mut RoundLedger,
) -> Result<()> {
    let m = problem.agents();
    match &state.coloring {
        Some(colors) => {
            validate_coloring(problem, colors)?;
            let ncolors = colors.iter().max().map(|c| c + 1).unwrap_or(0);
            for c in 0..ncolors {
                let x = &state.x;
                let out = crate::parallel::for_each_mut(&mut solvers.solvers, |i, s| {
                    if colors[i] == c {
                        Some(block_minimizer(problem, s, x, i))
                    } else {
                        None
                    }
                });
                for (i, r) in out.into_iter().enumerate() {
                    if let Some(r) = r {
                        state.x.blocks[i] = r?;
                    }
                }
            }
        }
        None => {
            let mut seen = vec![false; m];
            if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::Invalid("sweep order must be a permutation of the blocks".into()));
            }
            for &i in order {
                state.x.blocks[i] = block_minimizer(problem, &mut solvers.solvers[i], &state.x, i)?;
            }
        }
    }
    ledger.credit(exchange_messages(problem));
    state.iteration += 1;
    Ok(())
}

/// Prox-linear step on one uniformly drawn block.
pub fn coord_descent_step(
    problem: &ProblemCcdc,
    state: &mut BlockState,
    rng: &mut ChaCha8Rng,
    ledger: &mut RoundLedger,
) -> Result<usize> {
    let i = rng.random_range(0..problem.agents());
    let l = state.lipschitz[i];
    if !(l > 0.0) {
        return Err(Error::Invalid(format!("block {i} has no curvature for the prox-linear step")));
    }
    let g = problem.block_gradient(&state.x, i);
    let target = &state.x.blocks[i] - g / l;
    state.x.blocks[i] = problem.sets[i].project(&target)?;
    let dims = problem.dims();
    ledger.credit(problem.neighbors(i).iter().map(|&j| dims[j] as u64).sum());
    state.iteration += 1;
    Ok(i)
}

fn check_weights(weights: &[f64], m: usize) -> Result<()> {
    if weights.len() != m {
        return Err(crate::error::dim_err("number of weights", m, weights.len()));
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w > 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid("weights must be positive and sum to 1".into()));
    }
    Ok(())
}

pub fn cooperative_jacobi_step(
    problem: &ProblemCcdc,
    solvers: &mut BlockSolvers,
    state: &mut BlockState,
    weights: &[f64],
    ledger: &mut RoundLedger,
) -> Result<()> {
    check_weights(weights, problem.agents())?;
    let cand = jacobi_candidates(problem, solvers, &state.x)?;
    for (i, c) in cand.into_iter().enumerate() {
        let a = weights[i];
        state.x.blocks[i] = c * a + &state.x.blocks[i] * (1.0 - a);
    }
    ledger.credit(exchange_messages(problem));
    state.iteration += 1;
    Ok(())
}

/// Outcome of one feasible-directions step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FdReport {
    /// Blocks whose Armijo search failed (no sufficient decrease): left unchanged.
    pub zero_direction: Vec<usize>,
    /// Per-block accepted step lengths.
    pub steps: Vec<f64>,
}

/// Per-block Armijo steps along `d^i = xhat^i - x^i`, xhat the block minimizer;
/// the combined move is then halved until it also satisfies the Armijo test.
pub fn feasible_directions_step(
    problem: &ProblemCcdc,
    solvers: &mut BlockSolvers,
    state: &mut BlockState,
    ledger: &mut RoundLedger,
) -> Result<FdReport> {
    let m = problem.agents();
    let cand = jacobi_candidates(problem, solvers, &state.x)?;
    let mut report = FdReport {
        zero_direction: Vec::new(),
        steps: vec![0.0; m],
    };
    let mut dirs = Vec::with_capacity(m);
    let mut slope = vec![0.0; m];
    for i in 0..m {
        let d = &cand[i] - &state.x.blocks[i];
        let g = problem.block_gradient(&state.x, i);
        let gd = g.dot(&d);
        let curv = d.dot(&(problem.diagonal_block(i) * &d));
        // inner-solver noise around an optimal block is not a direction
        if d.amax() <= 1e-12 * (1.0 + state.x.blocks[i].amax()) {
            dirs.push(d * 0.0);
            continue;
        }
        // f along the block direction: f(x) + s g^T d + s^2 d^T H_ii d
        let mut s = 1.0;
        let mut ok = false;
        for _ in 0..=ARMIJO_MAX_HALVINGS {
            if s * gd + s * s * curv <= ARMIJO_C * s * gd {
                ok = true;
                break;
            }
            s *= 0.5;
        }
        if ok && gd < 0.0 {
            report.steps[i] = s;
            slope[i] = gd;
        } else {
            report.zero_direction.push(i);
        }
        dirs.push(d);
    }
    let f0 = problem.objective(&state.x);
    let mut scale = 1.0;
    let mut next = state.x.clone();
    for _ in 0..=ARMIJO_MAX_HALVINGS {
        next = Point::new(
            (0..m)
                .map(|i| &state.x.blocks[i] + &dirs[i] * (scale * report.steps[i]))
                .collect(),
        );
        let decrease: f64 = (0..m).map(|i| scale * report.steps[i] * slope[i]).sum();
        if problem.objective(&next) <= f0 + ARMIJO_C * decrease {
            break;
        }
        scale *= 0.5;
    }
    for s in report.steps.iter_mut() {
        *s *= scale;
    }
    state.x = next;
    // block exchange plus one scalar per agent for the combined objective test
    ledger.credit(exchange_messages(problem) + m as u64);
    state.iteration += 1;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub contraction: bool,
    /// Upper bound on the block-max-norm modulus of `x -> x - 2 beta H x`.
    pub modulus: f64,
    /// `1 - modulus`.
    pub margin: f64,
}

/// Block-maximum-norm contraction test with `zeta_i = 1`:
/// modulus `max_i sum_j ||(I - 2 beta H)_ij||_2`.
pub fn contraction_certificate(problem: &ProblemCcdc, beta: f64) -> Certificate {
    let m = problem.agents();
    let mut modulus: f64 = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            let mut b = match &problem.blocks[i][j] {
                Some(h) => h * (-2.0 * beta),
                None if i == j => Mat::zeros(problem.dims()[i], problem.dims()[i]),
                None => continue,
            };
            if i == j {
                for k in 0..b.nrows() {
                    b[(k, k)] += 1.0;
                }
            }
            row += spectral_norm(&b);
        }
        modulus = modulus.max(row);
    }
    Certificate {
        contraction: modulus < 1.0,
        modulus,
        margin: 1.0 - modulus,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum BlockMethod {
    Jacobi,
    GaussSeidel {
        order: Option<Vec<usize>>,
        colored: bool,
    },
    CoordinateDescent {
        seed: u64,
    },
    /// Uniform weights `1/M` when `None`.
    Cooperative {
        weights: Option<Vec<f64>>,
    },
    FeasibleDirections,
}

impl BlockMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BlockMethod::Jacobi => "jacobi",
            BlockMethod::GaussSeidel { .. } => "gs",
            BlockMethod::CoordinateDescent { .. } => "cd",
            BlockMethod::Cooperative { .. } => "coop",
            BlockMethod::FeasibleDirections => "fd",
        }
    }
}

/// Run a block method from the interior points. The intrinsic rule stops when
/// no block moved more than `eps` (over the last `M` steps for coordinate descent).
pub fn run_block(problem: &ProblemCcdc, method: &BlockMethod, opts: &RunOptions) -> Result<RunTrace> {
    let m = problem.agents();
    let mut rec = Recorder::new(method.name(), opts)?;
    let mut state = BlockState::new(problem);
    let mut ledger = RoundLedger::new();
    let mut solvers = match method {
        BlockMethod::CoordinateDescent { .. } => None,
        _ => Some(BlockSolvers::new(problem)?),
    };
    let order: Vec<usize> = match method {
        BlockMethod::GaussSeidel { order: Some(o), .. } => o.clone(),
        _ => (0..m).collect(),
    };
    if let BlockMethod::GaussSeidel { colored: true, .. } = method {
        state.coloring = Some(greedy_coloring(problem));
    }
    let weights = match method {
        BlockMethod::Cooperative { weights: Some(w) } => w.clone(),
        _ => vec![1.0 / m as f64; m],
    };
    check_weights(&weights, m).or_else(|e| match method {
        BlockMethod::Cooperative { .. } => Err(e),
        _ => Ok(()),
    })?;
    let mut rng = match method {
        BlockMethod::CoordinateDescent { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut recent_moves: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
    loop {
        let prev = state.x.clone();
        match method {
            BlockMethod::Jacobi => jacobi_step(problem, solvers.as_mut().unwrap(), &mut state, &mut ledger)?,
            BlockMethod::GaussSeidel { .. } => {
                gauss_seidel_step(problem, solvers.as_mut().unwrap(), &mut state, &order, &mut ledger)?
            }
            BlockMethod::CoordinateDescent { .. } => {
                coord_descent_step(problem, &mut state, rng.as_mut().unwrap(), &mut ledger)?;
            }
            BlockMethod::Cooperative { .. } => cooperative_jacobi_step(
                problem,
                solvers.as_mut().unwrap(),
                &mut state,
                &weights,
                &mut ledger,
            )?,
            BlockMethod::FeasibleDirections => {
                let r = feasible_directions_step(problem, solvers.as_mut().unwrap(), &mut state, &mut ledger)?;
                if !r.zero_direction.is_empty() {
                    log::debug!("blocks without Armijo step: {:?}", r.zero_direction);
                }
            }
        }
        let moved = state
            .x
            .blocks
            .iter()
            .zip(&prev.blocks)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let window = if matches!(method, BlockMethod::CoordinateDescent { .. }) { m } else { 1 };
        recent_moves.push_back(moved);
        if recent_moves.len() > window {
            recent_moves.pop_front();
        }
        let intrinsic = recent_moves.len() == window && recent_moves.iter().all(|&v| v <= opts.eps);
        let row = TraceRow {
            iter: state.iteration,
            primal_obj: problem.objective(&state.x),
            residual: 0.0,
            dist_to_oracle: opts.distance(&state.x),
            dual_value: f64::NAN,
            messages: ledger.total(),
        };
        if rec.record(row, intrinsic) {
            break;
        }
    }
    Ok(rec.finish(state.x, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::FeasibleSet;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn m1(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    /// f = x1^2 + x2^2 + x1 x2 on [-10, 10]^2.
    fn toy() -> ProblemCcdc {
        ProblemCcdc::new(
            vec![vec![Some(m1(1.0)), Some(m1(0.5))], vec![Some(m1(0.5)), Some(m1(1.0))]],
            vec![v(&[0.0]), v(&[0.0])],
            vec![FeasibleSet::cube(1, 10.0).unwrap(); 2],
            0.0,
        )
        .unwrap()
    }

    fn at(p: &ProblemCcdc, x: &[f64]) -> BlockState {
        BlockState::from_point(p, Point::new(x.iter().map(|&a| v(&[a])).collect()))
    }

    #[test]
    fn jacobi_and_gauss_seidel_examples() {
        let p = toy();
        let mut s = BlockSolvers::new(&p).unwrap();
        let mut l = RoundLedger::new();
        let mut st = at(&p, &[1.0, 1.0]);
        jacobi_step(&p, &mut s, &mut st, &mut l).unwrap();
        assert!((st.x.blocks[0][0] + 0.5).abs() < 1e-9 && (st.x.blocks[1][0] + 0.5).abs() < 1e-9);
        let mut st = at(&p, &[1.0, 1.0]);
        gauss_seidel_step(&p, &mut s, &mut st, &[0, 1], &mut l).unwrap();
        assert!((st.x.blocks[0][0] + 0.5).abs() < 1e-9 && (st.x.blocks[1][0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn coordinate_descent_example() {
        let p = toy();
        let st = at(&p, &[1.0, 1.0]);
        assert_eq!(st.lipschitz, vec![2.0, 2.0]);
        // find a seed whose first draw is block 0
        let mut seed = 0;
        loop {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if rng.random_range(0..2) == 0 {
                break;
            }
            seed += 1;
        }
        let mut st = at(&p, &[1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i = coord_descent_step(&p, &mut st, &mut rng, &mut RoundLedger::new()).unwrap();
        assert_eq!(i, 0);
        assert_eq!(st.x.blocks[0][0], -0.5);
        assert_eq!(st.x.blocks[1][0], 1.0);
    }

    #[test]
    fn cooperative_example_and_weight_check() {
        let p = toy();
        let mut s = BlockSolvers::new(&p).unwrap();
        let mut st = at(&p, &[1.0, 1.0]);
        let mut l = RoundLedger::new();
        cooperative_jacobi_step(&p, &mut s, &mut st, &[0.5, 0.5], &mut l).unwrap();
        assert!((st.x.blocks[0][0] - 0.25).abs() < 1e-9);
        assert!(cooperative_jacobi_step(&p, &mut s, &mut st, &[0.6, 0.5], &mut l).is_err());
    }

    #[test]
    fn feasible_directions_full_step_equals_jacobi() {
        let p = toy();
        let mut s = BlockSolvers::new(&p).unwrap();
        let mut st = at(&p, &[1.0, 0.0]);
        let r = feasible_directions_step(&p, &mut s, &mut st, &mut RoundLedger::new()).unwrap();
        assert!(r.zero_direction.is_empty());
        assert!(st.x.blocks.iter().all(|b| b[0].abs() <= 10.0));
        let mut st = at(&p, &[0.0, 0.0]);
        let r = feasible_directions_step(&p, &mut s, &mut st, &mut RoundLedger::new()).unwrap();
        assert!(st.x.blocks[0][0].abs() < 1e-12);
        assert!(r.zero_direction.is_empty());
    }

    #[test]
    fn certificate_examples() {
        let ident = ProblemCcdc::new(
            vec![vec![Some(Mat::identity(2, 2))]],
            vec![v(&[0.0, 0.0])],
            vec![FeasibleSet::cube(2, 1.0).unwrap()],
            0.0,
        )
        .unwrap();
        let c = contraction_certificate(&ident, 0.25);
        assert!(c.contraction && (c.modulus - 0.5).abs() < 1e-12);
        assert!(contraction_certificate(&toy(), 0.2).contraction);
        let zero = ProblemCcdc::new(
            vec![vec![None, None], vec![None, Some(m1(1.0))]],
            vec![v(&[0.0]), v(&[0.0])],
            vec![FeasibleSet::cube(1, 1.0).unwrap(); 2],
            0.0,
        )
        .unwrap();
        assert!(!contraction_certificate(&zero, 0.1).contraction);
        assert!(matches!(BlockSolvers::new(&zero), Err(Error::NonStrictBlock(0))));
    }

    #[test]
    fn coloring_rejects_adjacent_duplicates() {
        let p = toy();
        assert_eq!(greedy_coloring(&p), vec![0, 1]);
        assert!(matches!(validate_coloring(&p, &[0, 0]), Err(Error::InvalidColoring(0, 1))));
    }
}

//! The three coupled QP classes and the types every algorithm consumes.
//!
//! All objectives use the convention `x^T H x + q^T x (+ offset)` with no
//! one-half factor, so gradients carry a factor of two.

mod json;
mod set;

pub use json::{GraphDoc, ProblemDocument, SCHEMA};
pub use set::{FeasibleSet, SetKind, SET_TOL};

use std::collections::BTreeSet;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{asymmetry, spectral_norm, stack, sym_eig_range, Mat, Vector};

/// Symmetry tolerance on `H`.
pub const SYM_TOL: f64 = 1e-12;
/// Smallest eigenvalue tolerated for a positive semidefinite `H`.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadCost {
    pub h: Mat,
    pub q: Vector,
    /// Constant term; does not affect minimizers.
    pub offset: f64,
}

impl QuadCost {
    pub fn new(h: Mat, q: Vector) -> Result<Self> {
        Self::with_offset(h, q, 0.0)
    }

    pub fn with_offset(h: Mat, q: Vector, offset: f64) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::Dimension(format!(
                "cost matrix must be square, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if q.len() != h.nrows() {
            return Err(dim_err("linear cost term", h.nrows(), q.len()));
        }
        let scale = 1.0 + h.amax();
        if asymmetry(&h) > SYM_TOL * scale {
            return Err(Error::Invalid("cost matrix is not symmetric".into()));
        }
        let (min_eig, _) = sym_eig_range(&h);
        if min_eig < -PSD_TOL * scale {
            return Err(Error::Invalid(format!(
                "cost matrix is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { h, q, offset })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            h: Mat::zeros(n, n),
            q: Vector::zeros(n),
            offset: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        x.dot(&(&self.h * x)) + self.q.dot(x) + self.offset
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        &self.h * x * 2.0 + &self.q
    }

    /// `2 * lambda_min(H)`: strong convexity modulus of the cost.
    pub fn strong_convexity(&self) -> f64 {
        (2.0 * sym_eig_range(&self.h).0).max(0.0)
    }

    /// `2 * lambda_max(H)`: Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        (2.0 * sym_eig_range(&self.h).1).max(0.0)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.dim() > 0 && sym_eig_range(&self.h).0 > PSD_TOL * (1.0 + self.h.amax())
    }
}

/// Per-agent decision blocks; a single block for problems with a shared variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub blocks: Vec<Vector>,
}

impl Point {
    pub fn new(blocks: Vec<Vector>) -> Self {
        Self { blocks }
    }

    pub fn single(x: Vector) -> Self {
        Self { blocks: vec![x] }
    }

    pub fn stacked(&self) -> Vector {
        stack(&self.blocks)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// Decoupled costs sharing one decision variable constrained to a common set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDcx {
    pub costs: Vec<QuadCost>,
    pub set: FeasibleSet,
    /// Every `H_i` is positive definite.
    pub strict: bool,
}

impl ProblemDcx {
    pub fn new(costs: Vec<QuadCost>, set: FeasibleSet, strict: bool) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::Invalid("at least one cost is required".into()));
        }
        let n = set.dim();
        for c in &costs {
            if c.dim() != n {
                return Err(dim_err("DCx cost dimension", n, c.dim()));
            }
            if strict && !c.is_positive_definite() {
                return Err(Error::Invalid(
                    "strict DCx problem requires positive definite costs".into(),
                ));
            }
        }
        Ok(Self { costs, set, strict })
    }

    pub fn agents(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn objective(&self, x: &Vector) -> f64 {
        self.costs.iter().map(|c| c.value(x)).sum()
    }

    /// Largest gradient Lipschitz constant over the agents.
    pub fn max_lipschitz(&self) -> f64 {
        self.costs.iter().map(|c| c.lipschitz()).fold(0.0, f64::max)
    }

    /// Strong convexity modulus of the averaged objective `(1/M) sum f^i`.
    pub fn mean_strong_convexity(&self) -> f64 {
        let n = self.dim();
        let mut h = Mat::zeros(n, n);
        for c in &self.costs {
            h += &c.h;
        }
        h /= self.agents() as f64;
        (2.0 * sym_eig_range(&h).0).max(0.0)
    }
}

/// A group of coupling rows owned by one agent, touching only its neighbors' columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowBlock {
    pub owner: usize,
    pub rows: Vec<usize>,
    /// Agents whose columns appear in these rows (always includes the owner), ascending.
    pub neighbors: Vec<usize>,
}

/// Decoupled costs, local sets and linear coupling `sum_i G_i x^i = g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemDccc {
    pub costs: Vec<QuadCost>,
    pub sets: Vec<FeasibleSet>,
    pub coupling: Vec<Mat>,
    pub rhs: Vector,
    pub row_blocks: Vec<RowBlock>,
}

impl ProblemDccc {
    /// Build with row blocks inferred from the sparsity of the coupling matrices:
    /// each row goes to the lowest-indexed agent touching it.
    pub fn new(
        costs: Vec<QuadCost>,
        sets: Vec<FeasibleSet>,
        coupling: Vec<Mat>,
        rhs: Vector,
    ) -> Result<Self> {
        let m = costs.len();
        let mut owners: Vec<(usize, BTreeSet<usize>, Vec<usize>)> = Vec::new();
        for r in 0..rhs.len() {
            let touching: BTreeSet<usize> = (0..m)
                .filter(|&i| {
                    coupling
                        .get(i)
                        .map(|g| r < g.nrows() && g.row(r).iter().any(|v| *v != 0.0))
                        .unwrap_or(false)
                })
                .collect();
            let owner = touching.iter().next().copied().unwrap_or(0);
            match owners.iter_mut().find(|(o, _, _)| *o == owner) {
                Some((_, nb, rows)) => {
                    nb.extend(touching);
                    rows.push(r);
                }
                None => {
                    let mut nb = touching;
                    nb.insert(owner);
                    owners.push((owner, nb, vec![r]));
                }
            }
        }
        let blocks = owners
            .into_iter()
            .map(|(owner, nb, rows)| RowBlock {
                owner,
                rows,
                neighbors: nb.into_iter().collect(),
            })
            .collect();
        Self::with_blocks(costs, sets, coupling, rhs, blocks)
    }

    pub fn with_blocks(
        costs: Vec<QuadCost>,
        sets: Vec<FeasibleSet>,
        coupling: Vec<Mat>,
        rhs: Vector,
        row_blocks: Vec<RowBlock>,
    ) -> Result<Self> {
        let m = costs.len();
        if m == 0 {
            return Err(Error::Invalid("at least one agent is required".into()));
        }
        if sets.len() != m || coupling.len() != m {
            return Err(Error::Dimension(format!(
                "DCCC needs one set and one coupling matrix per agent ({m} agents, {} sets, {} matrices)",
                sets.len(),
                coupling.len()
            )));
        }
        let n_lambda = rhs.len();
        for i in 0..m {
            if sets[i].dim() != costs[i].dim() {
                return Err(dim_err("local set dimension", costs[i].dim(), sets[i].dim()));
            }
            if coupling[i].ncols() != costs[i].dim() {
                return Err(dim_err("coupling columns", costs[i].dim(), coupling[i].ncols()));
            }
            if coupling[i].nrows() != n_lambda {
                return Err(dim_err("coupling rows", n_lambda, coupling[i].nrows()));
            }
        }
        let mut seen = vec![false; n_lambda];
        for b in &row_blocks {
            if b.owner >= m || b.neighbors.iter().any(|&j| j >= m) {
                return Err(Error::Invalid("row block references an unknown agent".into()));
            }
            if !b.neighbors.contains(&b.owner) {
                return Err(Error::Invalid("row block neighbors must include the owner".into()));
            }
            for &r in &b.rows {
                if r >= n_lambda || seen[r] {
                    return Err(Error::Invalid(format!("row {r} is not partitioned exactly once")));
                }
                seen[r] = true;
                for (i, g) in coupling.iter().enumerate() {
                    if !b.neighbors.contains(&i) && g.row(r).iter().any(|v| *v != 0.0) {
                        return Err(Error::Invalid(format!(
                            "row {r} touches agent {i} outside its block's neighbor set"
                        )));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("row blocks do not cover every coupling row".into()));
        }
        Ok(Self {
            costs,
            sets,
            coupling,
            rhs,
            row_blocks,
        })
    }

    pub fn agents(&self) -> usize {
        self.costs.len()
    }

    pub fn n_lambda(&self) -> usize {
        self.rhs.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.costs.iter().map(|c| c.dim()).collect()
    }

    /// `[G_1 ... G_M]`.
    pub fn stacked_coupling(&self) -> Mat {
        let refs: Vec<&Mat> = self.coupling.iter().collect();
        crate::linalg::hcat(&refs)
    }

    pub fn coupling_norm(&self) -> f64 {
        spectral_norm(&self.stacked_coupling())
    }

    /// `2 * min_i lambda_min(H_i)`, zero when any block is only semidefinite.
    pub fn strong_convexity(&self) -> f64 {
        self.costs
            .iter()
            .map(|c| c.strong_convexity())
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    pub fn objective(&self, x: &Point) -> f64 {
        self.costs
            .iter()
            .zip(&x.blocks)
            .map(|(c, xi)| c.value(xi))
            .sum()
    }

    /// `sum_i G_i x^i - g`, accumulated row by row in agent order.
    pub fn residual(&self, x: &Point) -> Vector {
        let mut r = Vector::zeros(self.n_lambda());
        for row in 0..self.n_lambda() {
            let mut acc = 0.0;
            for (g, xi) in self.coupling.iter().zip(&x.blocks) {
                for c in 0..g.ncols() {
                    acc += g[(row, c)] * xi[c];
                }
            }
            r[row] = acc - self.rhs[row];
        }
        r
    }

    /// Residual of one row block computed from neighbor data only.
    pub fn block_residual(&self, block: &RowBlock, x: &Point) -> Vector {
        let mut r = Vector::zeros(block.rows.len());
        for (k, &row) in block.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &j in &block.neighbors {
                let g = &self.coupling[j];
                let xj = &x.blocks[j];
                for c in 0..g.ncols() {
                    acc += g[(row, c)] * xj[c];
                }
            }
            r[k] = acc - self.rhs[row];
        }
        r
    }

    /// Rows of `G_i` that are not identically zero.
    pub fn touched_rows(&self, i: usize) -> Vec<usize> {
        let g = &self.coupling[i];
        (0..g.nrows())
            .filter(|&r| g.row(r).iter().any(|v| *v != 0.0))
            .collect()
    }

    /// The stored interior points as a candidate Slater point.
    pub fn interior_point(&self) -> Point {
        Point::new(self.sets.iter().map(|s| s.interior_point().clone()).collect())
    }
}

/// Block-structured coupled quadratic cost with per-agent local sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemCcdc {
    /// `blocks[i][j]` is `H_ij`; `None` marks a structural zero.
    pub blocks: Vec<Vec<Option<Mat>>>,
    pub linear: Vec<Vector>,
    pub sets: Vec<FeasibleSet>,
    pub offset: f64,
}

impl ProblemCcdc {
    pub fn new(
        blocks: Vec<Vec<Option<Mat>>>,
        linear: Vec<Vector>,
        sets: Vec<FeasibleSet>,
        offset: f64,
    ) -> Result<Self> {
        let m = linear.len();
        if m == 0 || blocks.len() != m || sets.len() != m {
            return Err(Error::Dimension(format!(
                "CCDC needs an {m}x{m} block array and {m} sets"
            )));
        }
        let dims: Vec<usize> = linear.iter().map(|q| q.len()).collect();
        for i in 0..m {
            if blocks[i].len() != m {
                return Err(dim_err("block row length", m, blocks[i].len()));
            }
            if sets[i].dim() != dims[i] {
                return Err(dim_err("local set dimension", dims[i], sets[i].dim()));
            }
            for j in 0..m {
                if let Some(h) = &blocks[i][j] {
                    if h.nrows() != dims[i] || h.ncols() != dims[j] {
                        return Err(Error::Dimension(format!("block H_{i}{j} has wrong shape")));
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                let ok = match (&blocks[i][j], &blocks[j][i]) {
                    (None, None) => true,
                    (Some(a), Some(b)) => {
                        (a - b.transpose()).amax() <= SYM_TOL * (1.0 + a.amax())
                    }
                    _ => false,
                };
                if !ok {
                    return Err(Error::Invalid(format!("H_{i}{j} != H_{j}{i}^T")));
                }
            }
        }
        let p = Self {
            blocks,
            linear,
            sets,
            offset,
        };
        let h = p.assembled_hessian();
        if sym_eig_range(&h).0 < -PSD_TOL * (1.0 + h.amax()) {
            return Err(Error::Invalid("assembled Hessian is not positive semidefinite".into()));
        }
        Ok(p)
    }

    pub fn agents(&self) -> usize {
        self.linear.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.linear.iter().map(|q| q.len()).collect()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.agents());
        let mut acc = 0;
        for d in self.dims() {
            off.push(acc);
            acc += d;
        }
        off
    }

    /// Structural nonzero pattern of the block Hessian.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.blocks
            .iter()
            .map(|row| row.iter().map(|b| b.is_some()).collect())
            .collect()
    }

    pub fn assembled_hessian(&self) -> Mat {
        let dims = self.dims();
        let off = self.offsets();
        let n: usize = dims.iter().sum();
        let mut h = Mat::zeros(n, n);
        for i in 0..self.agents() {
            for j in 0..self.agents() {
                if let Some(b) = &self.blocks[i][j] {
                    h.view_mut((off[i], off[j]), (dims[i], dims[j])).copy_from(b);
                }
            }
        }
        h
    }

    pub fn stacked_linear(&self) -> Vector {
        stack(&self.linear)
    }

    pub fn diagonal_block(&self, i: usize) -> Mat {
        self.blocks[i][i]
            .clone()
            .unwrap_or_else(|| Mat::zeros(self.linear[i].len(), self.linear[i].len()))
    }

    /// Agents sharing a nonzero off-diagonal block with `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.agents())
            .filter(|&j| j != i && self.blocks[i][j].is_some())
            .collect()
    }

    pub fn objective(&self, x: &Point) -> f64 {
        let m = self.agents();
        let mut f = self.offset;
        for i in 0..m {
            for j in 0..m {
                if let Some(h) = &self.blocks[i][j] {
                    f += x.blocks[i].dot(&(h * &x.blocks[j]));
                }
            }
            f += self.linear[i].dot(&x.blocks[i]);
        }
        f
    }

    /// `2 sum_j H_ij x^j + q_i` without the bounds check.
    pub(crate) fn block_gradient(&self, x: &Point, i: usize) -> Vector {
        let mut g = self.linear[i].clone();
        for j in 0..self.agents() {
            if let Some(h) = &self.blocks[i][j] {
                g.gemv(2.0, h, &x.blocks[j], 1.0);
            }
        }
        g
    }

    /// Linear term of block `i`'s subproblem with the other blocks held fixed.
    pub(crate) fn block_linear_term(&self, x: &Point, i: usize) -> Vector {
        let mut c = self.linear[i].clone();
        for j in 0..self.agents() {
            if j == i {
                continue;
            }
            if let Some(h) = &self.blocks[i][j] {
                c.gemv(2.0, h, &x.blocks[j], 1.0);
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Dcx(ProblemDcx),
    Dccc(ProblemDccc),
    Ccdc(ProblemCcdc),
}

impl Problem {
    pub fn class_name(&self) -> &'static str {
        match self {
            Problem::Dcx(_) => "dcx",
            Problem::Dccc(_) => "dccc",
            Problem::Ccdc(_) => "ccdc",
        }
    }

    pub fn block_dims(&self) -> Vec<usize> {
        match self {
            Problem::Dcx(p) => vec![p.dim()],
            Problem::Dccc(p) => p.dims(),
            Problem::Ccdc(p) => p.dims(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// Coupling residual `sum G_i x^i - g`; empty for DCx and CCDC.
    pub residual: Vector,
}

fn check_point(expected: &[usize], point: &Point) -> Result<()> {
    let got = point.dims();
    if got != expected {
        return Err(Error::Dimension(format!(
            "point blocks {got:?} do not match problem blocks {expected:?}"
        )));
    }
    Ok(())
}

pub fn evaluate(problem: &Problem, point: &Point) -> Result<Evaluation> {
    check_point(&problem.block_dims(), point)?;
    Ok(match problem {
        Problem::Dcx(p) => Evaluation {
            objective: p.objective(&point.blocks[0]),
            residual: Vector::zeros(0),
        },
        Problem::Dccc(p) => Evaluation {
            objective: p.objective(point),
            residual: p.residual(point),
        },
        Problem::Ccdc(p) => Evaluation {
            objective: p.objective(point),
            residual: Vector::zeros(0),
        },
    })
}

/// Gradient of the assembled quadratic with respect to block `i`.
pub fn partial_gradient(problem: &ProblemCcdc, point: &Point, i: usize) -> Result<Vector> {
    if i >= problem.agents() {
        return Err(Error::Invalid(format!(
            "agent index {i} out of range (M = {})",
            problem.agents()
        )));
    }
    check_point(&problem.dims(), point)?;
    Ok(problem.block_gradient(point, i))
}

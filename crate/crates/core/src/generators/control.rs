//! Interconnected linear subsystems with the neighbor influence lifted into
//! auxiliary inputs `w^i`; eliminating the states leaves decoupled costs in
//! `z^i = [w_0; ...; w_{N-1}; u_0; ...; u_{N-1}]` and linear coupling rows
//! `w^i_t = sum_j A-_ij x^j_t + B-_ij u^j_t`.

use serde::{Deserialize, Serialize};

use super::{
    input_response, powers, random_stable, require_seed, seeded, uniform_matrix, uniform_vector,
    INTERCONNECTION_SCALE,
};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{hcat, inf_norm, symmetrize, Mat, Vector};
use crate::network::CommGraph;
use crate::problem::{FeasibleSet, Point, ProblemDccc, QuadCost, RowBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDims {
    /// States.
    pub n: usize,
    /// Inputs.
    pub m: usize,
    /// Neighbor-influence channels.
    pub p: usize,
}

/// `x_{t+1} = A x_t + B u_t + E w_t` with stage weights `Q`, `R` and terminal `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub a: Mat,
    pub b: Mat,
    pub e: Mat,
    pub x0: Vector,
    pub q: Mat,
    pub r: Mat,
    pub p: Mat,
}

impl Subsystem {
    pub fn dims(&self) -> AgentDims {
        AgentDims {
            n: self.a.nrows(),
            m: self.b.ncols(),
            p: self.e.ncols(),
        }
    }
}

/// `neighbors[i]` lists `(j, A-_ij, B-_ij)` for every `j` influencing agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNetwork {
    pub agents: Vec<Subsystem>,
    pub neighbors: Vec<Vec<(usize, Mat, Mat)>>,
}

impl ControlNetwork {
    /// Random instance: `A_i` rescaled to spectral radius 0.95, uniform `B_i`,
    /// `E_i`, `x0`, interconnections scaled by 0.1; `Q = I`, `R = I_m`, `P = I`.
    pub fn random(dims: &[AgentDims], graph: &CommGraph, seed: u64) -> Result<Self> {
        if dims.len() != graph.nodes() {
            return Err(dim_err("agents in topology", dims.len(), graph.nodes()));
        }
        for (i, d) in dims.iter().enumerate() {
            if d.n == 0 || d.m == 0 || d.p == 0 || d.p > d.n {
                return Err(Error::Invalid(format!(
                    "agent {i}: need n, m, p > 0 and p <= n, got {d:?}"
                )));
            }
            if graph.in_neighbors(i).iter().all(|&j| j == i) {
                return Err(Error::Invalid(format!(
                    "agent {i} has no neighbors, its coupling rows would be isolated"
                )));
            }
        }
        let mut rng = seeded(seed);
        let agents: Vec<Subsystem> = dims
            .iter()
            .map(|d| Subsystem {
                a: random_stable(&mut rng, d.n),
                b: uniform_matrix(&mut rng, d.n, d.m),
                e: uniform_matrix(&mut rng, d.n, d.p),
                x0: uniform_vector(&mut rng, d.n, 1.0),
                q: Mat::identity(d.n, d.n),
                r: Mat::identity(d.m, d.m),
                p: Mat::identity(d.n, d.n),
            })
            .collect();
        let neighbors = (0..dims.len())
            .map(|i| {
                graph
                    .in_neighbors(i)
                    .into_iter()
                    .filter(|&j| j != i)
                    .map(|j| {
                        let am = uniform_matrix(&mut rng, dims[i].p, dims[j].n) * INTERCONNECTION_SCALE;
                        let bm = uniform_matrix(&mut rng, dims[i].p, dims[j].m) * INTERCONNECTION_SCALE;
                        (j, am, bm)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { agents, neighbors })
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() || self.neighbors.len() != self.agents.len() {
            return Err(Error::Invalid("need one neighbor list per agent".into()));
        }
        for (i, s) in self.agents.iter().enumerate() {
            let d = s.dims();
            if !s.a.is_square()
                || s.b.nrows() != d.n
                || s.e.nrows() != d.n
                || s.x0.len() != d.n
                || s.q.shape() != (d.n, d.n)
                || s.p.shape() != (d.n, d.n)
                || s.r.shape() != (d.m, d.m)
            {
                return Err(Error::Dimension(format!("subsystem {i} has inconsistent shapes")));
            }
            for (j, am, bm) in &self.neighbors[i] {
                let dj = self
                    .agents
                    .get(*j)
                    .ok_or_else(|| Error::Invalid(format!("agent {i} lists unknown neighbor {j}")))?
                    .dims();
                if *j == i || am.shape() != (d.p, dj.n) || bm.shape() != (d.p, dj.m) {
                    return Err(Error::Dimension(format!("interconnection {i}<-{j} has wrong shape")));
                }
            }
        }
        Ok(())
    }

    /// Joint trajectory with every input held at zero, `x[i][t]` and `w[i][t]`.
    pub fn natural(&self, horizon: usize) -> (Vec<Vec<Vector>>, Vec<Vec<Vector>>) {
        let mut x: Vec<Vec<Vector>> = self.agents.iter().map(|s| vec![s.x0.clone()]).collect();
        let mut w: Vec<Vec<Vector>> = vec![Vec::new(); self.agents.len()];
        for t in 0..horizon {
            for i in 0..self.agents.len() {
                let mut wi = Vector::zeros(self.agents[i].e.ncols());
                for (j, am, _) in &self.neighbors[i] {
                    wi += am * &x[*j][t];
                }
                w[i].push(wi);
            }
            for (i, s) in self.agents.iter().enumerate() {
                let next = &s.a * &x[i][t] + &s.e * &w[i][t];
                x[i].push(next);
            }
        }
        (x, w)
    }

    /// States `x^i_0 .. x^i_N` from the local dynamics given `z^i`.
    pub fn simulate(&self, i: usize, z: &Vector, horizon: usize) -> Vec<Vector> {
        let s = &self.agents[i];
        let d = s.dims();
        let mut x = vec![s.x0.clone()];
        for t in 0..horizon {
            let w = z.rows(t * d.p, d.p);
            let u = z.rows(horizon * d.p + t * d.m, d.m);
            let next = &s.a * &x[t] + &s.b * u + &s.e * w;
            x.push(next);
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct ControlInstance {
    pub network: ControlNetwork,
    pub horizon: usize,
    pub problem: ProblemDccc,
}

pub fn gen_control_dccc(
    dims: &[AgentDims],
    horizon: usize,
    graph: &CommGraph,
    seed: Option<u64>,
) -> Result<ControlInstance> {
    let seed = require_seed(seed)?;
    let network = ControlNetwork::random(dims, graph, seed)?;
    let problem = control_problem(&network, horizon)?;
    Ok(ControlInstance {
        network,
        horizon,
        problem,
    })
}

/// Eliminate the states and stack the coupling rows agent by agent, then
/// time step by time step. Bounds are generous multiples of the zero-input
/// trajectory, which also serves as the strictly interior point.
pub fn control_problem(network: &ControlNetwork, horizon: usize) -> Result<ProblemDccc> {
    network.validate()?;
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let big_n = horizon;
    let m_agents = network.agents.len();
    let dims: Vec<AgentDims> = network.agents.iter().map(|s| s.dims()).collect();
    let zdim: Vec<usize> = dims.iter().map(|d| big_n * (d.p + d.m)).collect();
    let rows_total: usize = dims.iter().map(|d| big_n * d.p).sum();

    // phi[i][t] = A_i^t, gamma[i][t] maps z^i to x^i_t (t = 0..=N)
    let mut phi = Vec::with_capacity(m_agents);
    let mut gamma = Vec::with_capacity(m_agents);
    for s in &network.agents {
        let pow = powers(&s.a, big_n);
        let g: Vec<Mat> = (0..=big_n)
            .map(|t| {
                let gw = input_response(&pow, &s.e, t, big_n);
                let gu = input_response(&pow, &s.b, t, big_n);
                hcat(&[&gw, &gu])
            })
            .collect();
        phi.push(pow);
        gamma.push(g);
    }

    let (x_nat, w_nat) = network.natural(big_n);
    let mut costs = Vec::with_capacity(m_agents);
    let mut sets = Vec::with_capacity(m_agents);
    for (i, s) in network.agents.iter().enumerate() {
        let d = dims[i];
        let nz = zdim[i];
        let mut h = Mat::zeros(nz, nz);
        let mut q = Vector::zeros(nz);
        let mut offset = s.x0.dot(&(&s.q * &s.x0));
        for t in 1..=big_n {
            let wt = if t == big_n { &s.p } else { &s.q };
            let g = &gamma[i][t];
            let free = &phi[i][t] * &s.x0;
            let gw = g.transpose() * wt;
            h += &gw * g;
            q += &gw * &free * 2.0;
            offset += free.dot(&(wt * &free));
        }
        for t in 0..big_n {
            let o = big_n * d.p + t * d.m;
            let mut blk = h.view_mut((o, o), (d.m, d.m));
            blk += &s.r;
        }
        costs.push(QuadCost::with_offset(symmetrize(&h), q, offset)?);

        let x_max = 2.0 * x_nat[i].iter().map(inf_norm).fold(0.0, f64::max) + 1.0;
        let w_max = 2.0 * w_nat[i].iter().map(inf_norm).fold(0.0, f64::max) + 1.0;
        let u_max = 1.0;
        let state_rows = 2 * big_n * d.n;
        let mut a = Mat::zeros(state_rows + 2 * nz, nz);
        let mut b = Vector::zeros(state_rows + 2 * nz);
        for t in 1..=big_n {
            let g = &gamma[i][t];
            let free = &phi[i][t] * &s.x0;
            let r0 = 2 * (t - 1) * d.n;
            a.view_mut((r0, 0), (d.n, nz)).copy_from(g);
            a.view_mut((r0 + d.n, 0), (d.n, nz)).copy_from(&(-g));
            for k in 0..d.n {
                b[r0 + k] = x_max - free[k];
                b[r0 + d.n + k] = x_max + free[k];
            }
        }
        for c in 0..nz {
            let bound = if c < big_n * d.p { w_max } else { u_max };
            a[(state_rows + 2 * c, c)] = 1.0;
            a[(state_rows + 2 * c + 1, c)] = -1.0;
            b[state_rows + 2 * c] = bound;
            b[state_rows + 2 * c + 1] = bound;
        }
        let mut interior = Vector::zeros(nz);
        for t in 0..big_n {
            interior.rows_mut(t * d.p, d.p).copy_from(&w_nat[i][t]);
        }
        sets.push(FeasibleSet::new_polyhedron(a, b, None, Some(interior))?);
    }

    let mut coupling: Vec<Mat> = zdim.iter().map(|&nz| Mat::zeros(rows_total, nz)).collect();
    let mut rhs = Vector::zeros(rows_total);
    let mut blocks = Vec::with_capacity(m_agents);
    let mut row = 0;
    for i in 0..m_agents {
        let pi = dims[i].p;
        let start = row;
        for t in 0..big_n {
            for k in 0..pi {
                coupling[i][(row + k, t * pi + k)] = 1.0;
            }
            for (j, am, bm) in &network.neighbors[i] {
                let dj = dims[*j];
                let gj = am * &gamma[*j][t];
                let mut view = coupling[*j].view_mut((row, 0), (pi, zdim[*j]));
                view -= &gj;
                let mut uview = coupling[*j].view_mut((row, big_n * dj.p + t * dj.m), (pi, dj.m));
                uview -= bm;
                let mut r = rhs.rows_mut(row, pi);
                r += am * &phi[*j][t] * &network.agents[*j].x0;
            }
            row += pi;
        }
        let mut nb: Vec<usize> = network.neighbors[i].iter().map(|(j, _, _)| *j).collect();
        nb.push(i);
        nb.sort_unstable();
        nb.dedup();
        blocks.push(RowBlock {
            owner: i,
            rows: (start..row).collect(),
            neighbors: nb,
        });
    }
    ProblemDccc::with_blocks(costs, sets, coupling, rhs, blocks)
}

impl ControlInstance {
    /// The zero-input trajectory as a point; satisfies the coupling exactly.
    pub fn natural_point(&self) -> Point {
        Point::new(self.problem.sets.iter().map(|s| s.interior_point().clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Topology;
    use proptest::prelude::*;

    fn uniform(m: usize, d: AgentDims) -> Vec<AgentDims> {
        vec![d; m]
    }

    #[test]
    fn chain_row_count() {
        let g = CommGraph::builtin(Topology::Path, 2).unwrap();
        let dims = [AgentDims { n: 3, m: 2, p: 1 }, AgentDims { n: 4, m: 1, p: 2 }];
        let inst = gen_control_dccc(&dims, 1, &g, Some(0)).unwrap();
        assert_eq!(inst.problem.n_lambda(), 1 + 2);
    }

    #[test]
    fn table_two_dimensions() {
        let g = CommGraph::builtin(Topology::Ring, 10).unwrap();
        let d = AgentDims { n: 5, m: 3, p: 2 };
        let inst = gen_control_dccc(&uniform(10, d), 10, &g, Some(1)).unwrap();
        assert!(inst.problem.dims().iter().all(|&k| k == 50));
        assert_eq!(inst.problem.n_lambda(), 10 * 10 * 2);
        assert!(inst.problem.costs.iter().all(|c| c.is_positive_definite()));
    }

    #[test]
    fn isolated_agent_rejected() {
        let g = CommGraph::undirected(3, [(0, 1)]).unwrap();
        let d = AgentDims { n: 2, m: 1, p: 1 };
        assert!(gen_control_dccc(&uniform(3, d), 2, &g, Some(0)).is_err());
        assert!(gen_control_dccc(&uniform(2, d), 2, &CommGraph::builtin(Topology::Path, 2).unwrap(), None).is_err());
    }

    #[test]
    fn interior_point_satisfies_coupling() {
        let g = CommGraph::builtin(Topology::Ring, 4).unwrap();
        let inst = gen_control_dccc(&uniform(4, AgentDims { n: 3, m: 2, p: 2 }), 5, &g, Some(3)).unwrap();
        let r = inst.problem.residual(&inst.natural_point());
        assert!(r.amax() < 1e-12);
    }

    #[test]
    fn zero_interconnection_forces_w_zero() {
        let g = CommGraph::builtin(Topology::Path, 2).unwrap();
        let d = AgentDims { n: 2, m: 1, p: 1 };
        let mut inst = gen_control_dccc(&uniform(2, d), 3, &g, Some(2)).unwrap();
        for list in &mut inst.network.neighbors {
            for (_, am, bm) in list.iter_mut() {
                am.fill(0.0);
                bm.fill(0.0);
            }
        }
        let p = control_problem(&inst.network, 3).unwrap();
        assert_eq!(p.rhs.amax(), 0.0);
        for (i, g) in p.coupling.iter().enumerate() {
            for blk in &p.row_blocks {
                for &r in &blk.rows {
                    let touches = g.row(r).iter().any(|v| *v != 0.0);
                    assert_eq!(touches, blk.owner == i);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let g = CommGraph::builtin(Topology::Ring, 3).unwrap();
        let d = uniform(3, AgentDims { n: 3, m: 2, p: 1 });
        let a = gen_control_dccc(&d, 2, &g, Some(9)).unwrap();
        let b = gen_control_dccc(&d, 2, &g, Some(9)).unwrap();
        assert_eq!(a.problem, b.problem);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn elimination_is_exact(seed in 0u64..1000, zs in proptest::collection::vec(-1.0f64..1.0, 3 * 12)) {
            let g = CommGraph::builtin(Topology::Ring, 3).unwrap();
            let d = AgentDims { n: 3, m: 2, p: 2 };
            let horizon = 3;
            let inst = gen_control_dccc(&uniform(3, d), horizon, &g, Some(seed)).unwrap();
            let z: Vec<Vector> = (0..3).map(|i| Vector::from_column_slice(&zs[i * 12..(i + 1) * 12])).collect();
            let xs: Vec<Vec<Vector>> = (0..3).map(|i| inst.network.simulate(i, &z[i], horizon)).collect();
            let mut cost = 0.0;
            for (i, s) in inst.network.agents.iter().enumerate() {
                for t in 0..horizon {
                    let u = z[i].rows(horizon * d.p + t * d.m, d.m).into_owned();
                    cost += xs[i][t].dot(&(&s.q * &xs[i][t])) + u.dot(&(&s.r * &u));
                }
                cost += xs[i][horizon].dot(&(&s.p * &xs[i][horizon]));
            }
            let pt = Point::new(z.clone());
            let f = inst.problem.objective(&pt);
            prop_assert!((f - cost).abs() <= 1e-10 * (1.0 + cost.abs()));
            // residual rows are w^i_t - sum_j (A-_ij x^j_t + B-_ij u^j_t)
            let res = inst.problem.residual(&pt);
            let mut row = 0;
            for i in 0..3 {
                for t in 0..horizon {
                    let mut expect = z[i].rows(t * d.p, d.p).into_owned();
                    for (j, am, bm) in &inst.network.neighbors[i] {
                        expect -= am * &xs[*j][t] + bm * z[*j].rows(horizon * d.p + t * d.m, d.m);
                    }
                    prop_assert!((res.rows(row, d.p) - expect).amax() < 1e-10);
                    row += d.p;
                }
            }
        }
    }
}

//! Cooperative control of input-coupled subsystems
//! `x^i_{t+1} = A_i x^i_t + B_i u^i_t + sum_j B_ij u^j_t` under a convex
//! combination `sum_i alpha_i f^i` of the local costs. Eliminating the states
//! leaves a coupled quadratic in the input sequences.

use super::control::AgentDims;
use super::{input_response, powers, random_stable, require_seed, seeded, uniform_matrix, uniform_vector, INTERCONNECTION_SCALE};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{FeasibleSet, ProblemCcdc};

/// Tolerance on `sum_i alpha_i = 1`.
pub const ALPHA_TOL: f64 = 1e-12;

/// `coupling[i]` lists `(j, B_ij)`; weights `Q = I`, `R = I`, `P = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPlant {
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub coupling: Vec<Vec<(usize, Mat)>>,
    pub x0: Vec<Vector>,
}

impl CoupledPlant {
    /// Ring of `m` agents, each driven by both neighbors' inputs.
    pub fn random(m: usize, dims: AgentDims, seed: u64) -> Result<Self> {
        if m == 0 || dims.n == 0 || dims.m == 0 {
            return Err(Error::Invalid("dimensions must be positive".into()));
        }
        let mut rng = seeded(seed);
        let a = (0..m).map(|_| random_stable(&mut rng, dims.n)).collect();
        let b = (0..m).map(|_| uniform_matrix(&mut rng, dims.n, dims.m)).collect();
        let x0 = (0..m).map(|_| uniform_vector(&mut rng, dims.n, 1.0)).collect();
        let coupling = (0..m)
            .map(|i| {
                let mut nb = vec![(i + 1) % m, (i + m - 1) % m];
                nb.sort_unstable();
                nb.dedup();
                nb.retain(|&j| j != i);
                nb.into_iter()
                    .map(|j| (j, uniform_matrix(&mut rng, dims.n, dims.m) * INTERCONNECTION_SCALE))
                    .collect()
            })
            .collect();
        Ok(Self { a, b, coupling, x0 })
    }

    pub fn agents(&self) -> usize {
        self.a.len()
    }

    /// States `x[i][t]`, `t = 0..=N`, under input sequences `u[i]`.
    pub fn simulate(&self, u: &[Vector], horizon: usize) -> Vec<Vec<Vector>> {
        let m = self.agents();
        let mut x: Vec<Vec<Vector>> = self.x0.iter().map(|x| vec![x.clone()]).collect();
        for t in 0..horizon {
            for i in 0..m {
                let mi = self.b[i].ncols();
                let mut next = &self.a[i] * &x[i][t] + &self.b[i] * u[i].rows(t * mi, mi);
                for (j, bij) in &self.coupling[i] {
                    let mj = self.b[*j].ncols();
                    next += bij * u[*j].rows(t * mj, mj);
                }
                x[i].push(next);
            }
        }
        x
    }

    /// Local cost `f^i` evaluated by simulation.
    pub fn local_cost(&self, i: usize, u: &[Vector], horizon: usize) -> f64 {
        let x = self.simulate(u, horizon);
        let mut f = x[i].iter().map(|v| v.norm_squared()).sum::<f64>();
        f += u[i].norm_squared();
        f
    }
}

pub fn validate_alpha(alpha: &[f64], m: usize) -> Result<()> {
    if alpha.len() != m {
        return Err(Error::Invalid(format!("need {m} weights, got {}", alpha.len())));
    }
    if alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Invalid("cooperative weights must be positive".into()));
    }
    let s: f64 = alpha.iter().sum();
    if (s - 1.0).abs() > ALPHA_TOL {
        return Err(Error::Invalid(format!("cooperative weights sum to {s}, not 1")));
    }
    Ok(())
}

pub fn coupled_cooperative_from_plant(
    plant: &CoupledPlant,
    horizon: usize,
    alpha: &[f64],
    u_bound: f64,
) -> Result<ProblemCcdc> {
    let m = plant.agents();
    validate_alpha(alpha, m)?;
    if horizon == 0 || !(u_bound > 0.0) {
        return Err(Error::Invalid("horizon and input bound must be positive".into()));
    }
    let nu: Vec<usize> = plant.b.iter().map(|b| b.ncols() * horizon).collect();
    let mut blocks: Vec<Vec<Option<Mat>>> = vec![vec![None; m]; m];
    let mut linear: Vec<Vector> = nu.iter().map(|&k| Vector::zeros(k)).collect();
    let mut offset = 0.0;
    for i in 0..m {
        let w = alpha[i];
        let pow = powers(&plant.a[i], horizon);
        let mut inputs: Vec<(usize, &Mat)> = vec![(i, &plant.b[i])];
        inputs.extend(plant.coupling[i].iter().map(|(j, b)| (*j, b)));
        for t in 0..=horizon {
            let free = &pow[t] * &plant.x0[i];
            offset += w * free.norm_squared();
            if t == 0 {
                continue;
            }
            let g: Vec<Mat> = inputs
                .iter()
                .map(|(_, b)| input_response(&pow, b, t, horizon))
                .collect();
            for (a_idx, (j, _)) in inputs.iter().enumerate() {
                linear[*j] += g[a_idx].transpose() * &free * (2.0 * w);
                for (b_idx, (k, _)) in inputs.iter().enumerate() {
                    let contrib = g[a_idx].transpose() * &g[b_idx] * w;
                    match &mut blocks[*j][*k] {
                        Some(h) => *h += contrib,
                        slot => *slot = Some(contrib),
                    }
                }
            }
        }
        let h = blocks[i][i].get_or_insert_with(|| Mat::zeros(nu[i], nu[i]));
        *h += Mat::identity(nu[i], nu[i]) * w;
    }
    let sets = nu
        .iter()
        .map(|&k| FeasibleSet::cube(k, u_bound))
        .collect::<Result<Vec<_>>>()?;
    ProblemCcdc::new(blocks, linear, sets, offset)
}

#[derive(Debug, Clone)]
pub struct CoopInstance {
    pub plant: CoupledPlant,
    pub horizon: usize,
    pub alpha: Vec<f64>,
    pub problem: ProblemCcdc,
}

/// `alpha = None` weights the agents equally.
pub fn gen_coupled_cooperative(
    m: usize,
    horizon: usize,
    dims: AgentDims,
    alpha: Option<Vec<f64>>,
    seed: Option<u64>,
) -> Result<CoopInstance> {
    let seed = require_seed(seed)?;
    let plant = CoupledPlant::random(m, dims, seed)?;
    let alpha = alpha.unwrap_or_else(|| vec![1.0 / m as f64; m]);
    let problem = coupled_cooperative_from_plant(&plant, horizon, &alpha, 1.0)?;
    Ok(CoopInstance {
        plant,
        horizon,
        alpha,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Point;

    const DIMS: AgentDims = AgentDims { n: 3, m: 2, p: 1 };

    fn random_inputs(m: usize, k: usize, seed: u64) -> Vec<Vector> {
        let mut rng = seeded(seed);
        (0..m).map(|_| uniform_vector(&mut rng, k, 1.0)).collect()
    }

    #[test]
    fn objective_is_weighted_simulated_cost() {
        let inst = gen_coupled_cooperative(4, 3, DIMS, Some(vec![0.1, 0.2, 0.3, 0.4]), Some(1)).unwrap();
        let u = random_inputs(4, 6, 2);
        let expect: f64 = (0..4)
            .map(|i| inst.alpha[i] * inst.plant.local_cost(i, &u, 3))
            .sum();
        let f = inst.problem.objective(&Point::new(u));
        assert!((f - expect).abs() < 1e-10 * (1.0 + expect));
    }

    #[test]
    fn no_input_coupling_gives_block_diagonal() {
        let mut inst = gen_coupled_cooperative(4, 3, DIMS, None, Some(3)).unwrap();
        for list in &mut inst.plant.coupling {
            list.clear();
        }
        let p = coupled_cooperative_from_plant(&inst.plant, 3, &inst.alpha, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.blocks[i][j].is_some(), i == j);
            }
        }
    }

    #[test]
    fn coupling_reaches_two_hops() {
        let inst = gen_coupled_cooperative(6, 2, DIMS, None, Some(4)).unwrap();
        let p = &inst.problem;
        for i in 0..6usize {
            for j in 0..6usize {
                let d = (i as isize - j as isize).rem_euclid(6).min((j as isize - i as isize).rem_euclid(6));
                assert_eq!(p.blocks[i][j].is_some(), d <= 2, "({i},{j})");
            }
        }
    }

    #[test]
    fn weights_are_validated() {
        assert!(gen_coupled_cooperative(3, 2, DIMS, Some(vec![0.5, 0.5, 0.0]), Some(0)).is_err());
        assert!(gen_coupled_cooperative(3, 2, DIMS, Some(vec![0.3, 0.3, 0.3]), Some(0)).is_err());
        assert!(gen_coupled_cooperative(2, 2, DIMS, Some(vec![0.5, 0.5 + 1e-13]), Some(0)).is_ok());
        assert!(gen_coupled_cooperative(2, 2, DIMS, Some(vec![0.5, 0.5]), None).is_err());
    }

    #[test]
    fn concentrated_weight_tends_to_single_cost() {
        let m = 3;
        let plant = CoupledPlant::random(m, DIMS, 6).unwrap();
        let u = random_inputs(m, 4, 7);
        let f1 = plant.local_cost(0, &u, 2);
        let mut errs = Vec::new();
        for delta in [1e-2, 1e-4, 1e-6] {
            let alpha = vec![1.0 - 2.0 * delta, delta, delta];
            let p = coupled_cooperative_from_plant(&plant, 2, &alpha, 1.0).unwrap();
            errs.push((p.objective(&Point::new(u.clone())) - f1).abs());
        }
        assert!(errs[1] < errs[0] && errs[2] < errs[1] && errs[2] < 1e-4 * (1.0 + f1));
    }

    #[test]
    fn scalar_two_agent_hand_expansion() {
        // x^1_1 = a1 x1 + b1 u1 + c12 u2, x^2_1 = a2 x2 + b2 u2 + c21 u1
        let (a1, a2, b1, b2, c12, c21, x1, x2) = (0.5, -0.4, 1.5, 0.7, 0.2, -0.3, 1.0, -2.0);
        let s = |v: f64| Mat::from_element(1, 1, v);
        let plant = CoupledPlant {
            a: vec![s(a1), s(a2)],
            b: vec![s(b1), s(b2)],
            coupling: vec![vec![(1, s(c12))], vec![(0, s(c21))]],
            x0: vec![Vector::from_element(1, x1), Vector::from_element(1, x2)],
        };
        let (w1, w2) = (0.25, 0.75);
        let p = coupled_cooperative_from_plant(&plant, 1, &[w1, w2], 10.0).unwrap();
        let h = p.assembled_hessian();
        let h11 = w1 * (1.0 + b1 * b1) + w2 * c21 * c21;
        let h22 = w2 * (1.0 + b2 * b2) + w1 * c12 * c12;
        let h12 = w1 * b1 * c12 + w2 * c21 * b2;
        assert!((h[(0, 0)] - h11).abs() < 1e-15);
        assert!((h[(1, 1)] - h22).abs() < 1e-15);
        assert!((h[(0, 1)] - h12).abs() < 1e-15);
        let q1 = 2.0 * (w1 * b1 * a1 * x1 + w2 * c21 * a2 * x2);
        let q2 = 2.0 * (w1 * c12 * a1 * x1 + w2 * b2 * a2 * x2);
        assert!((p.linear[0][0] - q1).abs() < 1e-15);
        assert!((p.linear[1][0] - q2).abs() < 1e-15);
        let off = w1 * (x1 * x1 + a1 * a1 * x1 * x1) + w2 * (x2 * x2 + a2 * a2 * x2 * x2);
        assert!((p.offset - off).abs() < 1e-14);
    }
}

//! Satellite formation on a circular orbit: Clohessy-Wiltshire relative
//! dynamics, ring neighbors, inputs as the only decision variables.
//!
//! State ordering is `(x1, x2, x3, x1', x2', x3')` (radial, tangential,
//! out-of-plane). Each satellite's state is its deviation from an equally
//! spaced nominal slot, so the relative-position cost vanishes at the nominal
//! formation.

use serde::{Deserialize, Serialize};

use super::expm::zoh;
use super::{input_response, powers, seeded, uniform_vector};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{FeasibleSet, ProblemCcdc};

/// Default sample period (s) of [`CWParams::formation`].
pub const DEFAULT_DT: f64 = 0.0185;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CWParams {
    /// Orbital angular rate (rad/s).
    pub omega_n: f64,
    /// Sample period (s).
    pub dt: f64,
    pub agents: usize,
    /// `Q_i = q_weight * I_3`.
    pub q_weight: f64,
    /// `R_i = sigma * I_3`.
    pub sigma: f64,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
}

impl CWParams {
    /// Formation of `agents` satellites in low orbit with `R_i = sigma I_3`.
    /// The sample period keeps the largest eigenvalue of the input-to-position
    /// Gram matrix near 0.023 over a 40-step horizon, where undamped Jacobi
    /// still contracts at `sigma = 0.1` (modulus `10k / (6k + sigma)` on a ring).
    pub fn formation(agents: usize, sigma: f64) -> Self {
        Self {
            omega_n: 1.1e-3,
            dt: DEFAULT_DT,
            agents,
            q_weight: 1.0,
            sigma,
            u_min: [-1.0; 3],
            u_max: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_n > 0.0) || !(self.dt > 0.0) {
            return Err(Error::Invalid("omega_n and dt must be positive".into()));
        }
        if self.agents < 3 {
            return Err(Error::Invalid(format!(
                "the ring formation needs at least 3 satellites, got {}",
                self.agents
            )));
        }
        if !(self.q_weight > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Invalid("Q and R weights must be positive".into()));
        }
        if (0..3).any(|k| !(self.u_min[k] < self.u_max[k])) {
            return Err(Error::Invalid("u_min must be below u_max componentwise".into()));
        }
        Ok(())
    }
}

/// Continuous-time Clohessy-Wiltshire matrices `(A, B)`.
pub fn cw_continuous(omega: f64) -> (Mat, Mat) {
    let w2 = omega * omega;
    #[rustfmt::skip]
    let a = Mat::from_row_slice(6, 6, &[
        0.0,      0.0, 0.0,  1.0,          0.0,         0.0,
        0.0,      0.0, 0.0,  0.0,          1.0,         0.0,
        0.0,      0.0, 0.0,  0.0,          0.0,         1.0,
        3.0 * w2, 0.0, 0.0,  0.0,          2.0 * omega, 0.0,
        0.0,      0.0, 0.0, -2.0 * omega,  0.0,         0.0,
        0.0,      0.0, -w2,  0.0,          0.0,         0.0,
    ]);
    let mut b = Mat::zeros(6, 3);
    b.view_mut((3, 0), (3, 3)).fill_with_identity();
    (a, b)
}

#[derive(Debug, Clone)]
pub struct SatelliteInstance {
    pub params: CWParams,
    pub horizon: usize,
    pub a: Mat,
    pub b: Mat,
    pub x0: Vec<Vector>,
    pub problem: ProblemCcdc,
}

/// Ring Laplacian coefficients of `2 y^i - y^{i+1} - y^{i-1}`.
fn ring_laplacian(m: usize) -> Mat {
    let mut l = Mat::identity(m, m) * 2.0;
    for i in 0..m {
        l[(i, (i + 1) % m)] -= 1.0;
        l[(i, (i + m - 1) % m)] -= 1.0;
    }
    l
}

pub fn gen_satellite_ccdc(params: &CWParams, horizon: usize, seed: u64) -> Result<SatelliteInstance> {
    params.validate()?;
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let m = params.agents;
    let (ac, bc) = cw_continuous(params.omega_n);
    let (a, b) = zoh(&ac, &bc, params.dt);
    let mut rng = seeded(seed);
    let x0: Vec<Vector> = (0..m)
        .map(|_| {
            let mut x = uniform_vector(&mut rng, 6, 1.0);
            let mut v = x.rows_mut(3, 3);
            v *= 0.01;
            x
        })
        .collect();
    let problem = satellite_problem(params, &a, &b, &x0, horizon)?;
    Ok(SatelliteInstance {
        params: *params,
        horizon,
        a,
        b,
        x0,
        problem,
    })
}

fn satellite_problem(params: &CWParams, a: &Mat, b: &Mat, x0: &[Vector], horizon: usize) -> Result<ProblemCcdc> {
    let m = params.agents;
    let nu = 3 * horizon;
    let l = ring_laplacian(m);
    let l2 = &l * &l;
    let pow = powers(a, horizon);
    let c = Mat::identity(3, 6);
    let qw = params.q_weight;

    // positions reached from inputs: C Gamma_t, for t = 0..N-1
    let cg: Vec<Mat> = (0..horizon)
        .map(|t| &c * input_response(&pow, b, t, horizon))
        .collect();
    let mut k = Mat::zeros(nu, nu);
    for g in &cg {
        k += g.transpose() * g * qw;
    }
    let mut blocks = vec![vec![None; m]; m];
    for i in 0..m {
        for j in 0..m {
            let coef = l2[(i, j)];
            if coef != 0.0 || i == j {
                let mut h = &k * coef;
                if i == j {
                    h += Mat::identity(nu, nu) * params.sigma;
                }
                blocks[i][j] = Some(h);
            }
        }
    }

    // relative free response r^i_t = sum_k L_ik C A^t x0^k
    let mut linear = vec![Vector::zeros(nu); m];
    let mut offset = 0.0;
    for t in 0..horizon {
        let free: Vec<Vector> = x0.iter().map(|x| &c * &pow[t] * x).collect();
        let rel: Vec<Vector> = (0..m)
            .map(|i| {
                let mut r = Vector::zeros(3);
                for (kk, f) in free.iter().enumerate() {
                    if l[(i, kk)] != 0.0 {
                        r += f * l[(i, kk)];
                    }
                }
                r
            })
            .collect();
        for r in &rel {
            offset += qw * r.norm_squared();
        }
        for j in 0..m {
            let mut s = Vector::zeros(3);
            for (i, r) in rel.iter().enumerate() {
                if l[(i, j)] != 0.0 {
                    s += r * l[(i, j)];
                }
            }
            linear[j] += cg[t].transpose() * s * (2.0 * qw);
        }
    }

    let lower = Vector::from_fn(nu, |r, _| params.u_min[r % 3]);
    let upper = Vector::from_fn(nu, |r, _| params.u_max[r % 3]);
    let sets = (0..m)
        .map(|_| FeasibleSet::new_box(lower.clone(), upper.clone()))
        .collect::<Result<Vec<_>>>()?;
    ProblemCcdc::new(blocks, linear, sets, offset)
}

//! Moving horizon estimation over a sensor network, reduced to a shared
//! decision variable `[x_{k-N}; w_{k-N}; ...; w_{k-1}]`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{input_response, powers, random_stable, require_pd, require_seed, seeded, uniform_matrix, uniform_vector};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{symmetrize, Mat, Vector};
use crate::problem::{FeasibleSet, ProblemDcx, QuadCost};

/// Process noise covariance scale used by [`LinearPlant::random`].
pub const PROCESS_NOISE: f64 = 0.01;

/// `x_{t+1} = A x_t + w_t`, `y^i_t = C_i x_t + v^i_t`, with noise covariances
/// `Q`, `R_i` and arrival-cost weight `Pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub a: Mat,
    pub sensors: Vec<Mat>,
    pub q: Mat,
    pub r: Vec<Mat>,
    pub pi: Mat,
}

impl LinearPlant {
    /// `pi = None` takes the steady-state prior covariance of the
    /// centralized filter.
    pub fn new(a: Mat, sensors: Vec<Mat>, q: Mat, r: Vec<Mat>, pi: Option<Mat>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Invalid("plant matrix A must be square and nonempty".into()));
        }
        if sensors.is_empty() || sensors.len() != r.len() {
            return Err(Error::Invalid("need one noise covariance per sensor".into()));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(dim_err("process noise covariance", n, q.nrows()));
        }
        require_pd(&q, "Q")?;
        for (c, ri) in sensors.iter().zip(&r) {
            if c.ncols() != n {
                return Err(dim_err("sensor matrix columns", n, c.ncols()));
            }
            if ri.nrows() != c.nrows() || !ri.is_square() {
                return Err(dim_err("measurement covariance", c.nrows(), ri.nrows()));
            }
            require_pd(ri, "R_i")?;
        }
        let pi = match pi {
            Some(p) => p,
            None => steady_state_prior(&a, &sensors, &q, &r)?,
        };
        if pi.nrows() != n {
            return Err(dim_err("arrival-cost weight", n, pi.nrows()));
        }
        require_pd(&pi, "Pi")?;
        Ok(Self { a, sensors, q, r, pi })
    }

    /// Random stable plant with `p` outputs per sensor, `Q = PROCESS_NOISE I`,
    /// `R_i = I`.
    pub fn random(n: usize, sensors: usize, p: usize, seed: u64) -> Result<Self> {
        if n == 0 || sensors == 0 || p == 0 {
            return Err(Error::Invalid("plant dimensions must be positive".into()));
        }
        let mut rng = seeded(seed);
        let a = random_stable(&mut rng, n);
        let c: Vec<Mat> = (0..sensors).map(|_| uniform_matrix(&mut rng, p, n)).collect();
        let r = vec![Mat::identity(p, p); sensors];
        Self::new(a, c, Mat::identity(n, n) * PROCESS_NOISE, r, None)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn agents(&self) -> usize {
        self.sensors.len()
    }
}

/// Fixed point of the prior-covariance Riccati recursion
/// `P <- A P A' + Q - A P C' (C P C' + R)^-1 C P A'` with all sensors stacked.
fn steady_state_prior(a: &Mat, sensors: &[Mat], q: &Mat, r: &[Mat]) -> Result<Mat> {
    let n = a.nrows();
    let rows: usize = sensors.iter().map(|c| c.nrows()).sum();
    let mut c = Mat::zeros(rows, n);
    let mut rr = Mat::zeros(rows, rows);
    let mut off = 0;
    for (ci, ri) in sensors.iter().zip(r) {
        let p = ci.nrows();
        c.view_mut((off, 0), (p, n)).copy_from(ci);
        rr.view_mut((off, off), (p, p)).copy_from(ri);
        off += p;
    }
    let mut p = q.clone();
    for _ in 0..100_000 {
        let s = &c * &p * c.transpose() + &rr;
        let k = s
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?
            .solve(&(&c * &p * a.transpose()));
        let next = symmetrize(&(a * &p * a.transpose() + q - a * &p * c.transpose() * k));
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-13 * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(Error::Numerical("Riccati recursion did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MheOptions {
    pub horizon: usize,
    /// Multiplies the standard deviations of the injected noise.
    pub noise: f64,
    pub x_bound: f64,
    pub w_bound: f64,
}

impl MheOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            noise: 0.1,
            x_bound: 10.0,
            w_bound: 5.0,
        }
    }
}

/// Simulated window: true initial state and process noise, prior estimate,
/// and measurements `y[i][s]` of sensor `i` at window time `s = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MheData {
    pub x0: Vector,
    pub w: Vec<Vector>,
    pub prior: Vector,
    pub y: Vec<Vec<Vector>>,
}

impl MheData {
    /// The true trajectory as a decision vector.
    pub fn truth(&self) -> Vector {
        let mut parts = vec![self.x0.clone()];
        parts.extend(self.w.iter().cloned());
        crate::linalg::stack(&parts)
    }
}

#[derive(Debug, Clone)]
pub struct MheInstance {
    pub plant: LinearPlant,
    pub data: MheData,
    pub problem: ProblemDcx,
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng, cov: &Mat, scale: f64) -> Result<Vector> {
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
        .l();
    let z = Vector::from_fn(cov.nrows(), |_, _| StandardNormal.sample(rng));
    Ok(l * z * scale)
}

pub fn gen_mhe_dcx(plant: &LinearPlant, opts: &MheOptions, seed: Option<u64>) -> Result<MheInstance> {
    let seed = require_seed(seed)?;
    if opts.horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    if !(opts.noise >= 0.0) {
        return Err(Error::Invalid("noise scale must be nonnegative".into()));
    }
    let n = plant.states();
    let mut rng = seeded(seed);
    let x0 = uniform_vector(&mut rng, n, 1.0);
    let w: Vec<Vector> = (0..opts.horizon)
        .map(|_| gaussian(&mut rng, &plant.q, opts.noise))
        .collect::<Result<_>>()?;
    let prior = &x0 + gaussian(&mut rng, &plant.pi, opts.noise)?;
    let mut xs = vec![x0.clone()];
    for t in 0..opts.horizon {
        let next = &plant.a * &xs[t] + &w[t];
        xs.push(next);
    }
    let mut y = Vec::with_capacity(plant.agents());
    for (c, r) in plant.sensors.iter().zip(&plant.r) {
        let mut yi = Vec::with_capacity(xs.len());
        for x in &xs {
            yi.push(c * x + gaussian(&mut rng, r, opts.noise)?);
        }
        y.push(yi);
    }
    let data = MheData { x0, w, prior, y };
    let problem = mhe_problem(plant, &data, opts)?;
    Ok(MheInstance {
        plant: plant.clone(),
        data,
        problem,
    })
}

/// Assemble the per-sensor quadratics for a given window of data.
pub fn mhe_problem(plant: &LinearPlant, data: &MheData, opts: &MheOptions) -> Result<ProblemDcx> {
    let n = plant.states();
    let big_n = data.w.len();
    if big_n != opts.horizon || data.y.len() != plant.agents() {
        return Err(Error::Dimension("MHE data does not match horizon or sensor count".into()));
    }
    let dim = n * (big_n + 1);
    let m = plant.agents() as f64;
    let pow = powers(&plant.a, big_n);
    let eye = Mat::identity(n, n);
    let phi: Vec<Mat> = (0..=big_n)
        .map(|s| {
            let mut f = Mat::zeros(n, dim);
            f.view_mut((0, 0), (n, n)).copy_from(&pow[s]);
            f.view_mut((0, n), (n, n * big_n))
                .copy_from(&input_response(&pow, &eye, s, big_n));
            f
        })
        .collect();
    let q_inv = inverse(&plant.q)?;
    let pi_inv = inverse(&plant.pi)?;

    let mut costs = Vec::with_capacity(plant.agents());
    for (i, (c, r)) in plant.sensors.iter().zip(&plant.r).enumerate() {
        if data.y[i].len() != big_n + 1 {
            return Err(dim_err("measurements per sensor", big_n + 1, data.y[i].len()));
        }
        let r_inv = inverse(r)?;
        let mut h = Mat::zeros(dim, dim);
        let mut q = Vector::zeros(dim);
        let mut offset = 0.0;
        for (s, ys) in data.y[i].iter().enumerate() {
            let k = c * &phi[s];
            let kw = k.transpose() * &r_inv;
            h += &kw * &k;
            q -= &kw * ys * 2.0;
            offset += ys.dot(&(&r_inv * ys));
        }
        for t in 0..big_n {
            let o = n * (t + 1);
            let mut blk = h.view_mut((o, o), (n, n));
            blk += &q_inv / m;
        }
        {
            let mut blk = h.view_mut((0, 0), (n, n));
            blk += &pi_inv / m;
        }
        let pr = &pi_inv * &data.prior;
        let mut qx = q.rows_mut(0, n);
        qx -= &pr * (2.0 / m);
        offset += data.prior.dot(&pr) / m;
        costs.push(QuadCost::with_offset(symmetrize(&h), q, offset)?);
    }
    let mut lower = Vector::from_element(dim, -opts.w_bound);
    let mut upper = Vector::from_element(dim, opts.w_bound);
    lower.rows_mut(0, n).fill(-opts.x_bound);
    upper.rows_mut(0, n).fill(opts.x_bound);
    let set = FeasibleSet::new_box(lower, upper)?;
    ProblemDcx::new(costs, set, true)
}

fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .map(|x| symmetrize(&x))
        .ok_or_else(|| Error::Numerical("weight matrix is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::solve_centralized;
    use crate::problem::Problem;

    fn scalar_plant() -> LinearPlant {
        let one = Mat::identity(1, 1);
        LinearPlant::new(one.clone(), vec![one.clone()], one.clone(), vec![one.clone()], Some(one))
            .unwrap()
    }

    #[test]
    fn scalar_window_hand_expansion() {
        // (y0-x0)^2 + (y1-x0-w0)^2 + w0^2 + (x0-xhat)^2 with zero data
        let plant = scalar_plant();
        let data = MheData {
            x0: Vector::zeros(1),
            w: vec![Vector::zeros(1)],
            prior: Vector::zeros(1),
            y: vec![vec![Vector::zeros(1), Vector::zeros(1)]],
        };
        let p = mhe_problem(&plant, &data, &MheOptions::new(1)).unwrap();
        assert_eq!(p.dim(), 2);
        let expect = Mat::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        assert!((&p.costs[0].h - expect).amax() < 1e-15);
    }

    #[test]
    fn scalar_window_linear_terms() {
        let plant = scalar_plant();
        let data = MheData {
            x0: Vector::zeros(1),
            w: vec![Vector::zeros(1)],
            prior: Vector::from_element(1, 0.5),
            y: vec![vec![Vector::from_element(1, 1.0), Vector::from_element(1, 2.0)]],
        };
        let p = mhe_problem(&plant, &data, &MheOptions::new(1)).unwrap();
        let c = &p.costs[0];
        // q = -2*(y0 + y1 + xhat, y1), offset = y0^2 + y1^2 + xhat^2
        assert!((c.q[0] + 2.0 * 3.5).abs() < 1e-14);
        assert!((c.q[1] + 4.0).abs() < 1e-14);
        assert!((c.offset - 5.25).abs() < 1e-14);
    }

    #[test]
    fn seed_is_required() {
        let plant = LinearPlant::random(3, 2, 1, 0).unwrap();
        assert!(matches!(
            gen_mhe_dcx(&plant, &MheOptions::new(2), None),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn noiseless_cost_vanishes_at_truth() {
        let plant = LinearPlant::random(5, 4, 1, 7).unwrap();
        let mut opts = MheOptions::new(6);
        opts.noise = 0.0;
        let inst = gen_mhe_dcx(&plant, &opts, Some(11)).unwrap();
        let f = inst.problem.objective(&inst.data.truth());
        assert!(f.abs() < 1e-9, "cost at truth {f}");
        assert!(inst.problem.costs.iter().all(|c| c.is_positive_definite()));
    }

    #[test]
    fn oracle_recovers_state_as_noise_vanishes() {
        let plant = LinearPlant::random(3, 3, 1, 2).unwrap();
        let mut errs = Vec::new();
        for noise in [1e-1, 1e-3, 1e-5] {
            let mut opts = MheOptions::new(4);
            opts.noise = noise;
            let inst = gen_mhe_dcx(&plant, &opts, Some(5)).unwrap();
            let sol = solve_centralized(&Problem::Dcx(inst.problem.clone()), 1e-12).unwrap();
            let est = sol.point.blocks[0].clone();
            errs.push((est.rows(0, 3) - inst.data.x0.clone()).norm());
        }
        assert!(errs[2] < 1e-3 && errs[2] < errs[0], "{errs:?}");
    }

    #[test]
    fn steady_state_prior_is_fixed_point() {
        let plant = LinearPlant::random(4, 3, 1, 9).unwrap();
        let p = &plant.pi;
        let c = Mat::from_fn(3, 4, |i, j| plant.sensors[i][(0, j)]);
        let s = &c * p * c.transpose() + Mat::identity(3, 3);
        let next = &plant.a * p * plant.a.transpose() + &plant.q
            - &plant.a * p * c.transpose() * s.try_inverse().unwrap() * &c * p * plant.a.transpose();
        assert!((next - p).amax() < 1e-9);
    }

    #[test]
    fn deterministic_per_seed() {
        let plant = LinearPlant::random(5, 3, 1, 1).unwrap();
        let a = gen_mhe_dcx(&plant, &MheOptions::new(3), Some(4)).unwrap();
        let b = gen_mhe_dcx(&plant, &MheOptions::new(3), Some(4)).unwrap();
        assert_eq!(a.problem, b.problem);
        let c = gen_mhe_dcx(&plant, &MheOptions::new(3), Some(5)).unwrap();
        assert_ne!(a.problem, c.problem);
    }
}

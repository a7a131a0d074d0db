//! Seeded instances of the three applications: sensor-network moving horizon
//! estimation (DCx), interconnected-subsystem control (DCCC), satellite
//! formation and input-coupled cooperative control (CCDC).

mod control;
mod coop;
pub mod expm;
mod mhe;
mod satellite;

pub use control::{control_problem, gen_control_dccc, AgentDims, ControlInstance, ControlNetwork, Subsystem};
pub use coop::{
    coupled_cooperative_from_plant, gen_coupled_cooperative, validate_alpha, CoopInstance, CoupledPlant,
    ALPHA_TOL,
};
pub use mhe::{gen_mhe_dcx, mhe_problem, LinearPlant, MheData, MheInstance, MheOptions, PROCESS_NOISE};
pub use satellite::{cw_continuous, gen_satellite_ccdc, CWParams, SatelliteInstance, DEFAULT_DT};

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Spectral radius that random dynamics matrices are rescaled to.
pub const STABLE_RADIUS: f64 = 0.95;
/// Scale applied to random interconnection matrices.
pub const INTERCONNECTION_SCALE: f64 = 0.1;

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

pub(crate) fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-r..=r))
}

pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z: &Complex<f64>| z.norm())
        .fold(0.0, f64::max)
}

/// Uniform random square matrix rescaled to spectral radius `STABLE_RADIUS`.
pub(crate) fn random_stable(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let a = uniform_matrix(rng, n, n);
    let rho = spectral_radius(&a);
    if rho > 0.0 {
        a * (STABLE_RADIUS / rho)
    } else {
        a
    }
}

/// `A^0 .. A^horizon`.
pub(crate) fn powers(a: &Mat, horizon: usize) -> Vec<Mat> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(Mat::identity(a.nrows(), a.ncols()));
    for t in 1..=horizon {
        let next = a * &out[t - 1];
        out.push(next);
    }
    out
}

/// Response of `x_t` to an input sequence `[v_0; ...; v_{N-1}]` entering as
/// `x_{s+1} = A x_s + b v_s`: block `s < t` of row `t` is `A^{t-1-s} b`.
pub(crate) fn input_response(pow: &[Mat], b: &Mat, t: usize, horizon: usize) -> Mat {
    let (n, m) = (b.nrows(), b.ncols());
    let mut g = Mat::zeros(n, m * horizon);
    for s in 0..t.min(horizon) {
        g.view_mut((0, s * m), (n, m)).copy_from(&(&pow[t - 1 - s] * b));
    }
    g
}

pub(crate) fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::Invalid("generators require an explicit seed".into()))
}

pub(crate) fn require_pd(m: &Mat, what: &str) -> Result<()> {
    let (lo, _) = crate::linalg::sym_eig_range(m);
    if m.nrows() == 0 || crate::linalg::asymmetry(m) > 1e-12 * (1.0 + m.amax()) || lo <= 0.0 {
        return Err(Error::Invalid(format!("{what} must be symmetric positive definite")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_rescale() {
        let mut rng = seeded(3);
        let a = random_stable(&mut rng, 5);
        assert!((spectral_radius(&a) - STABLE_RADIUS).abs() < 1e-10);
    }

    #[test]
    fn input_response_matches_simulation() {
        let mut rng = seeded(1);
        let a = uniform_matrix(&mut rng, 3, 3);
        let b = uniform_matrix(&mut rng, 3, 2);
        let n = 4;
        let u = uniform_vector(&mut rng, 2 * n, 1.0);
        let pow = powers(&a, n);
        let mut x = Vector::zeros(3);
        for t in 0..=n {
            let g = input_response(&pow, &b, t, n);
            assert!((&g * &u - &x).amax() < 1e-12);
            if t < n {
                x = &a * &x + &b * u.rows(2 * t, 2);
            }
        }
    }
}

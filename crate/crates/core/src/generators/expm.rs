//! Matrix exponential by Padé(13) scaling and squaring.

use crate::linalg::Mat;

const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn expm(a: &Mat) -> Mat {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm = one_norm(a);
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = Mat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE_13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (u_inner + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_inner = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_inner + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Exact zero-order-hold discretization of `xdot = A x + B u` with period `dt`.
pub fn zoh(a: &Mat, b: &Mat, dt: f64) -> (Mat, Mat) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor(a: &Mat) -> Mat {
        let n = a.nrows();
        let mut term = Mat::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn zero_and_diagonal() {
        assert_eq!(expm(&Mat::zeros(3, 3)), Mat::identity(3, 3));
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]));
        let e = expm(&d);
        for (i, v) in [1.0f64, -2.0, 0.5].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() < 1e-13 * v.exp().max(1.0));
        }
    }

    #[test]
    fn matches_taylor_on_moderate_matrix() {
        let a = Mat::from_row_slice(3, 3, &[0.1, 0.7, -0.3, -0.4, 0.2, 0.9, 0.5, -0.6, 0.0]);
        let e = expm(&a);
        assert!((e - taylor(&a)).amax() < 1e-13);
    }

    #[test]
    fn scaling_path_rotation() {
        // exp of a skew matrix with angle 20 rad: a rotation
        let th = 20.0_f64;
        let a = Mat::from_row_slice(2, 2, &[0.0, -th, th, 0.0]);
        let e = expm(&a);
        let r = Mat::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        assert!((e - r).amax() < 1e-12);
    }

    #[test]
    fn zoh_double_integrator() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = zoh(&a, &b, 0.5);
        assert!((ad - Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).amax() < 1e-15);
        assert!((bd - Mat::from_row_slice(2, 1, &[0.125, 0.5])).amax() < 1e-15);
    }
}

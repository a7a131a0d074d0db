use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{from_rows, to_rows, Mat, Vector};
use crate::local_solver::{solve_local_qp, QpStatus, DEFAULT_TOL};
use crate::problem::QuadCost;

/// Tolerance used when validating interior certificates and memberships.
pub const SET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum SetKind {
    Box {
        lower: Vector,
        upper: Vector,
    },
    /// `a x <= b`, plus an optional equality pair `eq_a x = eq_b`.
    Polyhedron {
        a: Mat,
        b: Vector,
        eq: Option<(Mat, Vector)>,
    },
}

/// A closed convex constraint set carrying a strictly interior point.
///
/// The interior point certifies nonemptiness, serves as the Slater point for
/// coupled problems and as the starting point of the barrier solves.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    kind: SetKind,
    interior: Vector,
}

impl FeasibleSet {
    /// Box `[lower, upper]` with the midpoint as interior point.
    pub fn new_box(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(dim_err("box upper bound", lower.len(), upper.len()));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(Error::Invalid("box bounds must be finite".into()));
            }
            if lower[i] > upper[i] {
                return Err(Error::Invalid(format!(
                    "box lower bound exceeds upper bound at component {i}"
                )));
            }
        }
        let interior = (&lower + &upper) * 0.5;
        Ok(Self {
            kind: SetKind::Box { lower, upper },
            interior,
        })
    }

    /// Symmetric box `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Result<Self> {
        Self::new_box(Vector::from_element(n, -r), Vector::from_element(n, r))
    }

    pub fn new_polyhedron(
        a: Mat,
        b: Vector,
        eq: Option<(Mat, Vector)>,
        interior: Option<Vector>,
    ) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(dim_err("polyhedron rhs", a.nrows(), b.len()));
        }
        let n = a.ncols();
        if let Some((ea, eb)) = &eq {
            if ea.ncols() != n {
                return Err(dim_err("equality matrix columns", n, ea.ncols()));
            }
            if ea.nrows() != eb.len() {
                return Err(dim_err("equality rhs", ea.nrows(), eb.len()));
            }
        }
        let interior = interior.ok_or(Error::MissingCertificate)?;
        if interior.len() != n {
            return Err(dim_err("interior point", n, interior.len()));
        }
        let slack = &b - &a * &interior;
        if slack.iter().any(|s| *s <= 0.0) {
            return Err(Error::Invalid(
                "polyhedron interior point is not strictly interior".into(),
            ));
        }
        if let Some((ea, eb)) = &eq {
            let r = ea * &interior - eb;
            if r.amax() > SET_TOL * (1.0 + eb.amax()) {
                return Err(Error::Invalid(
                    "polyhedron interior point violates the equality constraints".into(),
                ));
            }
        }
        Ok(Self {
            kind: SetKind::Polyhedron { a, b, eq },
            interior,
        })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn is_box(&self) -> bool {
        matches!(self.kind, SetKind::Box { .. })
    }

    pub fn dim(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_point(&self) -> &Vector {
        &self.interior
    }

    /// Replace the stored interior point (must be strictly interior).
    pub fn with_interior(mut self, p: Vector) -> Result<Self> {
        if p.len() != self.dim() {
            return Err(dim_err("interior point", self.dim(), p.len()));
        }
        let (c, d) = self.inequalities();
        if (d - c * &p).iter().any(|s| *s <= 0.0) {
            return Err(Error::Invalid("point is not strictly interior".into()));
        }
        self.interior = p;
        Ok(self)
    }

    /// Inequality description `c x <= d`; boxes expand to `[I; -I]`.
    pub fn inequalities(&self) -> (Mat, Vector) {
        match &self.kind {
            SetKind::Box { lower, upper } => {
                let n = lower.len();
                let mut c = Mat::zeros(2 * n, n);
                let mut d = Vector::zeros(2 * n);
                for i in 0..n {
                    c[(i, i)] = 1.0;
                    d[i] = upper[i];
                    c[(n + i, i)] = -1.0;
                    d[n + i] = -lower[i];
                }
                (c, d)
            }
            SetKind::Polyhedron { a, b, .. } => (a.clone(), b.clone()),
        }
    }

    pub fn equalities(&self) -> Option<(&Mat, &Vector)> {
        match &self.kind {
            SetKind::Polyhedron { eq: Some((a, b)), .. } => Some((a, b)),
            _ => None,
        }
    }

    /// Number of inequality rows (the barrier parameter of the log barrier).
    pub fn barrier_complexity(&self) -> usize {
        match &self.kind {
            SetKind::Box { lower, .. } => 2 * lower.len(),
            SetKind::Polyhedron { a, .. } => a.nrows(),
        }
    }

    /// Largest constraint violation of `x` (0 when feasible).
    pub fn violation(&self, x: &Vector) -> f64 {
        match &self.kind {
            SetKind::Box { lower, upper } => (0..x.len()).fold(0.0_f64, |acc, i| {
                acc.max(lower[i] - x[i]).max(x[i] - upper[i])
            }),
            SetKind::Polyhedron { a, b, eq } => {
                let mut v = (a * x - b).iter().fold(0.0_f64, |acc, r| acc.max(*r));
                if let Some((ea, eb)) = eq {
                    v = v.max((ea * x - eb).amax());
                }
                v
            }
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        x.len() == self.dim() && self.violation(x) <= tol
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, v: &Vector) -> Result<Vector> {
        if v.len() != self.dim() {
            return Err(dim_err("projection input", self.dim(), v.len()));
        }
        match &self.kind {
            SetKind::Box { lower, upper } => Ok(Vector::from_fn(v.len(), |i, _| {
                v[i].clamp(lower[i], upper[i])
            })),
            SetKind::Polyhedron { .. } => {
                let n = v.len();
                let cost = QuadCost::new(Mat::identity(n, n), -2.0 * v)?;
                let sol = solve_local_qp(&cost, self, None, DEFAULT_TOL)?;
                match sol.status {
                    QpStatus::Infeasible => Err(Error::Infeasible("empty polyhedron".into())),
                    _ => Ok(sol.x),
                }
            }
        }
    }

    /// Componentwise bounds `(lower, upper)` of an axis-aligned box containing the set.
    /// Returns `None` when the set is unbounded along some coordinate.
    pub fn bounding_box(&self) -> Result<Option<(Vector, Vector)>> {
        match &self.kind {
            SetKind::Box { lower, upper } => Ok(Some((lower.clone(), upper.clone()))),
            SetKind::Polyhedron { a, b, .. } => {
                let n = a.ncols();
                let mut lo = Vector::from_element(n, f64::NEG_INFINITY);
                let mut hi = Vector::from_element(n, f64::INFINITY);
                // single-variable rows give bounds directly
                for r in 0..a.nrows() {
                    let nz: Vec<usize> = (0..n).filter(|&j| a[(r, j)] != 0.0).collect();
                    if nz.len() == 1 {
                        let j = nz[0];
                        let bound = b[r] / a[(r, j)];
                        if a[(r, j)] > 0.0 {
                            hi[j] = hi[j].min(bound);
                        } else {
                            lo[j] = lo[j].max(bound);
                        }
                    }
                }
                // remaining coordinates by linear programs over the set
                for j in 0..n {
                    for (sign, target) in [(1.0, &mut lo), (-1.0, &mut hi)] {
                        if target[j].is_finite() {
                            continue;
                        }
                        let mut q = Vector::zeros(n);
                        q[j] = sign;
                        let cost = QuadCost::new(Mat::zeros(n, n), q)?;
                        match solve_local_qp(&cost, self, None, DEFAULT_TOL) {
                            Ok(sol) if sol.status == QpStatus::Optimal => target[j] = sol.x[j],
                            _ => return Ok(None),
                        }
                    }
                }
                Ok(Some((lo, hi)))
            }
        }
    }

    /// Log-barrier value `-sum log(d - c x)`; `None` outside the interior.
    pub fn barrier_value(&self, x: &Vector) -> Option<f64> {
        let (c, d) = self.inequalities();
        let s = d - c * x;
        if s.iter().any(|v| *v <= 0.0) {
            return None;
        }
        Some(-s.iter().map(|v| v.ln()).sum::<f64>())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub(crate) enum SetDoc {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interior: Option<Vec<f64>>,
    },
    Polyhedron {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eq_a: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eq_b: Option<Vec<f64>>,
        interior: Option<Vec<f64>>,
    },
}

impl From<&FeasibleSet> for SetDoc {
    fn from(s: &FeasibleSet) -> Self {
        let interior = Some(s.interior.iter().cloned().collect());
        match &s.kind {
            SetKind::Box { lower, upper } => SetDoc::Box {
                lower: lower.iter().cloned().collect(),
                upper: upper.iter().cloned().collect(),
                interior,
            },
            SetKind::Polyhedron { a, b, eq } => SetDoc::Polyhedron {
                a: to_rows(a),
                b: b.iter().cloned().collect(),
                eq_a: eq.as_ref().map(|(m, _)| to_rows(m)),
                eq_b: eq.as_ref().map(|(_, v)| v.iter().cloned().collect()),
                interior,
            },
        }
    }
}

impl TryFrom<SetDoc> for FeasibleSet {
    type Error = Error;

    fn try_from(doc: SetDoc) -> Result<Self> {
        match doc {
            SetDoc::Box {
                lower,
                upper,
                interior,
            } => {
                let set = FeasibleSet::new_box(Vector::from_vec(lower), Vector::from_vec(upper))?;
                match interior {
                    Some(p) if Vector::from_vec(p.clone()) != set.interior => {
                        set.with_interior(Vector::from_vec(p))
                    }
                    _ => Ok(set),
                }
            }
            SetDoc::Polyhedron {
                a,
                b,
                eq_a,
                eq_b,
                interior,
            } => {
                let n = interior.as_ref().map(|p| p.len()).unwrap_or(0);
                let a = from_rows(&a, n).ok_or_else(|| Error::Invalid("ragged matrix".into()))?;
                let eq = match (eq_a, eq_b) {
                    (Some(ea), Some(eb)) => Some((
                        from_rows(&ea, a.ncols())
                            .ok_or_else(|| Error::Invalid("ragged matrix".into()))?,
                        Vector::from_vec(eb),
                    )),
                    (None, None) => None,
                    _ => return Err(Error::Invalid("equality pair is incomplete".into())),
                };
                FeasibleSet::new_polyhedron(
                    a,
                    Vector::from_vec(b),
                    eq,
                    interior.map(Vector::from_vec),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn halfspace() -> FeasibleSet {
        FeasibleSet::new_polyhedron(
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            v(&[1.0]),
            None,
            Some(v(&[0.0, 0.0])),
        )
        .unwrap()
    }

    #[test]
    fn box_clamp() {
        let s = FeasibleSet::cube(2, 1.0).unwrap();
        assert_eq!(s.project(&v(&[2.0, -3.0])).unwrap(), v(&[1.0, -1.0]));
        assert_eq!(s.project(&v(&[0.3, 0.2])).unwrap(), v(&[0.3, 0.2]));
    }

    #[test]
    fn halfspace_projection_matches_closed_form() {
        // closed form: v - max(0, a.v - b) / |a|^2 * a
        let s = halfspace();
        let p = s.project(&v(&[1.0, 1.0])).unwrap();
        assert!((p - v(&[0.5, 0.5])).amax() < 1e-9);
        let p = s.project(&v(&[3.0, -1.0])).unwrap();
        let expected = v(&[3.0, -1.0]) - v(&[1.0, 1.0]) * ((3.0 - 1.0 - 1.0) / 2.0);
        assert!((p - expected).amax() < 1e-9);
    }

    #[test]
    fn missing_certificate_rejected() {
        let err = FeasibleSet::new_polyhedron(
            Mat::from_row_slice(1, 1, &[1.0]),
            v(&[1.0]),
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingCertificate));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = FeasibleSet::cube(2, 1.0).unwrap();
        assert!(matches!(s.project(&v(&[1.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn bad_box_rejected() {
        assert!(FeasibleSet::new_box(v(&[1.0]), v(&[0.0])).is_err());
    }

    #[test]
    fn bounding_box_of_triangle() {
        // x >= 0, y >= 0, x + y <= 1
        let s = FeasibleSet::new_polyhedron(
            Mat::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            v(&[0.0, 0.0, 1.0]),
            None,
            Some(v(&[0.2, 0.2])),
        )
        .unwrap();
        let (lo, hi) = s.bounding_box().unwrap().unwrap();
        assert!((lo - v(&[0.0, 0.0])).amax() < 1e-8);
        assert!((hi - v(&[1.0, 1.0])).amax() < 1e-7);
    }

    fn sets() -> Vec<FeasibleSet> {
        vec![
            FeasibleSet::new_box(v(&[-1.0, 0.0, -2.0]), v(&[1.0, 0.5, 3.0])).unwrap(),
            FeasibleSet::new_polyhedron(
                Mat::from_row_slice(
                    4,
                    3,
                    &[1.0, 1.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0],
                ),
                v(&[1.0, 0.0, 0.0, 0.0]),
                None,
                Some(v(&[0.2, 0.2, 0.2])),
            )
            .unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            u in prop::collection::vec(-5.0f64..5.0, 3),
            w in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            for s in sets() {
                let (u, w) = (Vector::from_vec(u.clone()), Vector::from_vec(w.clone()));
                let pu = s.project(&u).unwrap();
                let pw = s.project(&w).unwrap();
                prop_assert!(s.violation(&pu) <= 1e-9);
                let ppu = s.project(&pu).unwrap();
                prop_assert!((&ppu - &pu).amax() <= 1e-9);
                prop_assert!((&pu - &pw).norm() <= (&u - &w).norm() + 1e-9);
            }
        }
    }
}

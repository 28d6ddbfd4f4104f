//! Spline bases for the baseline model: an open cubic B-spline basis with a
//! second-order difference penalty for the annual trend, and a cyclic cubic
//! B-spline basis for the within-year pattern.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Centered cardinal cubic B-spline, support [-2, 2].
fn cardinal_cubic(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + 0.5 * a * a * a
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Equally spaced cubic B-splines on `[lo, hi]` with `segments` intervals.
/// The basis spans the prediction range as well, so the difference penalty
/// governs extrapolation: as its weight grows, the fitted curve tends to a
/// straight line over the whole range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PSplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub segments: usize,
}

impl PSplineBasis {
    pub fn new(lo: f64, hi: f64, segments: usize) -> Self {
        assert!(hi > lo && segments >= 1);
        Self { lo, hi, segments }
    }

    pub fn len(&self) -> usize {
        self.segments + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.segments as f64
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let h = self.spacing();
        // Basis j is centered at lo + (j - 1) h.
        (0..self.len())
            .map(|j| cardinal_cubic((x - self.lo) / h - (j as f64 - 1.0)))
            .collect()
    }

    /// Second-order difference matrix, `(len - 2) x len`.
    pub fn difference_matrix(&self) -> DMatrix<f64> {
        let k = self.len();
        let mut d = DMatrix::<f64>::zeros(k - 2, k);
        for i in 0..k - 2 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        d
    }
}

/// Cyclic cubic B-splines on `[0, period)`, with a sum-to-zero constraint
/// over the integer positions `0..period` absorbed by reparametrization so
/// the component is identifiable next to an intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicBasis {
    pub period: f64,
    pub knots: usize,
    /// `knots x (knots - 1)` map from constrained to raw coefficients.
    constraint_null: Vec<f64>,
}

impl CyclicBasis {
    pub fn new(period: f64, knots: usize) -> Self {
        assert!(knots >= 4);
        let mut basis = Self { period, knots, constraint_null: Vec::new() };
        let positions = period.round() as usize;
        let mut c = DVector::zeros(knots);
        for m in 0..positions {
            c += DVector::from_vec(basis.eval_raw(m as f64));
        }
        basis.constraint_null = null_space_of_vector(&c).as_slice().to_vec();
        basis
    }

    /// Constrained dimension.
    pub fn len(&self) -> usize {
        self.knots - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn null_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.knots, self.knots - 1, &self.constraint_null)
    }

    /// Unconstrained basis values; periodic in `x`.
    pub fn eval_raw(&self, x: f64) -> Vec<f64> {
        let h = self.period / self.knots as f64;
        let n = self.knots as f64;
        let u = (x / h).rem_euclid(n);
        (0..self.knots)
            .map(|j| {
                let d = u - j as f64;
                // Nearest periodic images only; support is 4 spacings wide.
                cardinal_cubic(d) + cardinal_cubic(d - n) + cardinal_cubic(d + n)
            })
            .collect()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let raw = DVector::from_vec(self.eval_raw(x));
        (self.null_matrix().transpose() * raw).as_slice().to_vec()
    }

    /// Circular second-difference matrix in the constrained coordinates.
    pub fn difference_matrix(&self) -> DMatrix<f64> {
        let k = self.knots;
        let mut d = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            d[(i, (i + k - 1) % k)] += 1.0;
            d[(i, i)] -= 2.0;
            d[(i, (i + 1) % k)] += 1.0;
        }
        d * self.null_matrix()
    }

    /// Map constrained coefficients back to raw spline coefficients.
    pub fn raw_coefficients(&self, constrained: &[f64]) -> Vec<f64> {
        (self.null_matrix() * DVector::from_column_slice(constrained)).as_slice().to_vec()
    }
}

/// Orthonormal basis of the complement of `c` via a Householder reflection.
fn null_space_of_vector(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

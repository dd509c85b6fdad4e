//! Dimension-generic vector algebra, the Lagrange wedge identity and the special
//! functions behind the Riesz normalization constant.
//!
//! The ambient dimension `n` is a runtime value so a single binary can sweep
//! `n = 3..=8`; everything is plain `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or direction in `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    /// Standard basis vector `e_axis` scaled by `value`.
    pub fn axis(n: usize, axis: usize, value: f64) -> Self {
        let mut v = vec![0.0; n];
        v[axis] = value;
        Vector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * c).collect())
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &[f64]) {
        debug_assert_eq!(self.dim(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += c * b;
        }
    }

    pub fn dist(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

/// Symmetric `n x n` matrix stored as its upper triangle, so `(j,k)` and `(k,j)`
/// are the same memory and the symmetry invariant holds exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            dim: n,
            upper: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] = v;
    }

    /// `self += c * d d^T` for a rank-one update.
    pub fn add_outer_scaled(&mut self, c: f64, d: &[f64]) {
        debug_assert_eq!(self.dim, d.len());
        let mut k = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                self.upper[k] += c * d[i] * d[j];
                k += 1;
            }
        }
    }

    /// `self += c * I`.
    pub fn add_scaled_identity(&mut self, c: f64) {
        for i in 0..self.dim {
            let k = self.idx(i, i);
            self.upper[k] += c;
        }
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|v| v * c).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        debug_assert_eq!(self.dim, v.dim());
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.get(i, j) * v.0[j];
            }
            out[i] = acc;
        }
        Vector(out)
    }

    /// Quadratic form `v^T self v`.
    pub fn quad_form(&self, v: &Vector) -> f64 {
        self.mul_vec(v).dot(v)
    }

    pub fn is_finite(&self) -> bool {
        self.upper.iter().all(|c| c.is_finite())
    }
}

/// Inner product of alternating two-vectors via the Lagrange identity:
/// `<U ^ V, U ^ W> = |U|^2 <V,W> - <U,V> <U,W>`.
///
/// With `V = W` this is `|U ^ V|^2 >= 0`, vanishing exactly when `U` and `V`
/// are linearly dependent.
pub fn lagrange_wedge_inner(u: &Vector, v: &Vector, w: &Vector) -> Result<f64> {
    if u.dim() != v.dim() || u.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: if v.dim() != u.dim() { v.dim() } else { w.dim() },
        });
    }
    Ok(u.norm_sq() * v.dot(w) - u.dot(v) * u.dot(w))
}

// Lanczos approximation, g = 7 with 9 coefficients (as used by the GNU
// Scientific Library); double precision accurate for positive arguments.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of the Gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(format!("log_gamma requires x > 0, got {x}")));
    }
    // Reflection keeps full precision on (0, 0.5); all uses here are positive.
    if x < 0.5 {
        let sin_pi_x = (std::f64::consts::PI * x).sin();
        let reflected = log_gamma(1.0 - x)?;
        return Ok(std::f64::consts::PI.ln() - sin_pi_x.ln() - reflected);
    }
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x - 1.0 + i as f64);
    }
    let w = x + LANCZOS_G - 0.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * w.ln() - w + acc.ln())
}

/// Riesz normalization constant
/// `c_{n,a} = Gamma((n-a)/2) / (pi^{n/2} 2^a Gamma(a/2))`, defined for `0 < a < n`.
pub fn riesz_constant(n: usize, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < n as f64) {
        return Err(Error::domain(format!(
            "riesz_constant requires 0 < a < n, got a = {a}, n = {n}"
        )));
    }
    let ln_c = log_gamma((n as f64 - a) / 2.0)?
        - log_gamma(a / 2.0)?
        - (n as f64 / 2.0) * std::f64::consts::PI.ln()
        - a * std::f64::consts::LN_2;
    Ok(ln_c.exp())
}

/// Surface area of the unit sphere `S^{n-1}` in `R^n`:
/// `2 pi^{n/2} / Gamma(n/2)`.
pub fn unit_sphere_area(n: usize) -> f64 {
    let half_n = n as f64 / 2.0;
    2.0 * (half_n * std::f64::consts::PI.ln() - log_gamma(half_n).expect("n >= 1")).exp()
}

/// Pairwise (cascade) summation: deterministic for a fixed slice, and the
/// reduction used to combine parallel partial sums bit-reproducibly.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

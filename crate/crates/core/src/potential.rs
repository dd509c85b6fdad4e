//! Potential evaluation through factored kernel moments, with an independent
//! finite-difference path.
//!
//! Everything built here reduces to three moments of the source at the
//! evaluation point `x`:
//!
//! - scalars `S_beta = \int rho(y) |x-y|^{-beta} dy` for `beta` in
//!   `{alpha, alpha+1, alpha+2}`,
//! - the vector `V = \int (x-y) rho(y) |x-y|^{-(alpha+2)} dy`,
//! - the matrix `M = \int (x-y)(x-y)^T rho(y) |x-y|^{-(alpha+4)} dy`.
//!
//! Atomic sources are exact finite sums; gridded sources use midpoint
//! quadrature, replacing the cell containing `x` by a 6^n midpoint subgrid so
//! the mild singularity (`alpha < n-2`) stays `O(h^2)` accurate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{SymMatrix, Vector};
use crate::source::{AtomicMeasure, GriddedDensity, SourceMeasure};

/// Provenance of a derivative bundle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalPath {
    Moment,
    FiniteDifference,
}

/// The factored integrals from which every derivative quantity is assembled.
#[derive(Clone, Debug)]
pub struct MomentSet {
    pub x: Vector,
    pub alpha: f64,
    /// `S_alpha`
    pub s_alpha: f64,
    /// `S_{alpha+1}`
    pub s_alpha_1: f64,
    /// `S_{alpha+2}`
    pub s_alpha_2: f64,
    pub v: Vector,
    pub m: SymMatrix,
}

impl MomentSet {
    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// `V^T M V`, the contracted matrix moment entering the infinity-Laplacian.
    pub fn vmv(&self) -> f64 {
        self.m.quad_form(&self.v)
    }
}

/// Value and derivatives of the potential at one point.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub u: f64,
    pub grad: Vector,
    pub hess: SymMatrix,
    pub lap: f64,
    pub inf_lap: f64,
    pub path: EvalPath,
}

impl DerivativeBundle {
    pub fn grad_norm_sq(&self) -> f64 {
        self.grad.norm_sq()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.grad.is_finite()
            && self.hess.is_finite()
            && self.lap.is_finite()
            && self.inf_lap.is_finite()
    }
}

/// Accumulates the moment sums over weighted kernel evaluations.
struct MomentAccumulator {
    s: [f64; 3],
    v: Vector,
    m: SymMatrix,
    alpha: f64,
}

impl MomentAccumulator {
    fn new(n: usize, alpha: f64) -> Self {
        MomentAccumulator {
            s: [0.0; 3],
            v: Vector::zeros(n),
            m: SymMatrix::zeros(n),
            alpha,
        }
    }

    /// Adds one mass element at displacement `diff = x - y`, `d = |diff|`.
    #[inline]
    fn add(&mut self, mass: f64, diff: &[f64], d: f64) {
        let k_alpha = d.powf(-self.alpha);
        let k1 = k_alpha / d;
        let k2 = k1 / d;
        let k4 = k2 / (d * d);
        self.s[0] += mass * k_alpha;
        self.s[1] += mass * k1;
        self.s[2] += mass * k2;
        self.v.axpy(mass * k2, diff);
        self.m.add_outer_scaled(mass * k4, diff);
    }

    fn finish(self, x: Vector) -> MomentSet {
        MomentSet {
            x,
            alpha: self.alpha,
            s_alpha: self.s[0],
            s_alpha_1: self.s[1],
            s_alpha_2: self.s[2],
            v: self.v,
            m: self.m,
        }
    }
}

fn check_dims(source_dim: usize, x: &Vector) -> Result<()> {
    if x.dim() != source_dim {
        return Err(Error::DimensionMismatch {
            expected: source_dim,
            got: x.dim(),
        });
    }
    Ok(())
}

fn moments_atomic(measure: &AtomicMeasure, x: &Vector, alpha: f64) -> Result<MomentSet> {
    let n = measure.dim();
    check_dims(n, x)?;
    let mut acc = MomentAccumulator::new(n, alpha);
    let mut diff = vec![0.0; n];
    for atom in measure.atoms() {
        let mut d2 = 0.0;
        for k in 0..n {
            diff[k] = x.0[k] - atom.location.0[k];
            d2 += diff[k] * diff[k];
        }
        if d2 == 0.0 {
            return Err(Error::Singularity(format!(
                "evaluation point {:?} coincides with an atom",
                x.0
            )));
        }
        acc.add(atom.weight, &diff, d2.sqrt());
    }
    Ok(acc.finish(x.clone()))
}

/// Number of midpoint subdivisions per axis used for the cell containing `x`.
/// Even, so the parent cell center is never a subgrid node.
const SINGULAR_SUBGRID: usize = 6;

fn gridded_integrability_check(grid: &GriddedDensity, alpha: f64) -> Result<()> {
    let limit = grid.dim() as f64 - 2.0;
    if alpha >= limit {
        return Err(Error::Integrability { alpha, limit });
    }
    Ok(())
}

/// Visits the subgrid of the cell at `idx` with `(sub_mass, center)` callbacks.
fn for_each_subcell<F: FnMut(&[f64]) -> Result<()>>(
    grid: &GriddedDensity,
    idx: &[usize],
    mut f: F,
) -> Result<()> {
    let n = grid.dim();
    let h = grid.h();
    let hs = h / SINGULAR_SUBGRID as f64;
    let mut low = vec![0.0; n];
    for k in 0..n {
        low[k] = grid.origin().0[k] + h * idx[k] as f64;
    }
    let mut sub = vec![0usize; n];
    let mut center = vec![0.0; n];
    let count = SINGULAR_SUBGRID.pow(n as u32);
    for _ in 0..count {
        for k in 0..n {
            center[k] = low[k] + hs * (sub[k] as f64 + 0.5);
        }
        f(&center)?;
        for k in (0..n).rev() {
            sub[k] += 1;
            if sub[k] < SINGULAR_SUBGRID {
                break;
            }
            sub[k] = 0;
        }
    }
    Ok(())
}

fn moments_gridded(grid: &GriddedDensity, x: &Vector, alpha: f64) -> Result<MomentSet> {
    let n = grid.dim();
    check_dims(n, x)?;
    gridded_integrability_check(grid, alpha)?;
    let vol = grid.cell_volume();
    let singular = grid.containing_cell(x);
    let singular_lin = singular.as_ref().map(|idx| grid.linear_index(idx));

    let mut acc = MomentAccumulator::new(n, alpha);
    let mut diff = vec![0.0; n];
    let mut lin = 0usize;
    let mut err: Option<Error> = None;
    grid.for_each_cell(|center, value| {
        if err.is_some() {
            return;
        }
        if Some(lin) == singular_lin {
            lin += 1;
            return; // handled by the subgrid pass below
        }
        lin += 1;
        if value == 0.0 {
            return;
        }
        let mut d2 = 0.0;
        for k in 0..n {
            diff[k] = x.0[k] - center[k];
            d2 += diff[k] * diff[k];
        }
        if d2 == 0.0 {
            err = Some(Error::Singularity(format!(
                "evaluation point {:?} coincides with a grid cell center",
                x.0
            )));
            return;
        }
        acc.add(vol * value, &diff, d2.sqrt());
    });
    if let Some(e) = err {
        return Err(e);
    }

    if let Some(idx) = singular {
        let value = grid.value_at(&idx);
        if value > 0.0 {
            let sub_vol = vol / (SINGULAR_SUBGRID as f64).powi(n as i32);
            let mut diff = vec![0.0; n];
            for_each_subcell(grid, &idx, |center| {
                let mut d2 = 0.0;
                for k in 0..n {
                    diff[k] = x.0[k] - center[k];
                    d2 += diff[k] * diff[k];
                }
                if d2 == 0.0 {
                    return Err(Error::Singularity(format!(
                        "evaluation point {:?} coincides with a subgrid node",
                        x.0
                    )));
                }
                acc.add(sub_vol * value, &diff, d2.sqrt());
                Ok(())
            })?;
        }
    }
    Ok(acc.finish(x.clone()))
}

/// The moments `S_beta`, `V`, `M` of the source at `x` with kernel exponent
/// `alpha`. Exact (up to rounding) for atomic sources; midpoint quadrature
/// with a singular-cell subgrid correction for gridded sources.
pub fn compute_moments(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<MomentSet> {
    match source {
        SourceMeasure::Atomic(m) => moments_atomic(m, x, alpha),
        SourceMeasure::Gridded(g) => moments_gridded(g, x, alpha),
    }
}

/// Scalar potential `u(x) = \int rho(y) |x-y|^{-alpha} dy` without the full
/// moment set; this is the kernel the finite-difference oracle probes.
pub fn potential_value(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<f64> {
    scalar_kernel(source, x, |d| d.powf(-alpha), Some(alpha))
}

/// Logarithmic potential `\int log|x-y| rho(y) dy`.
pub fn log_potential_value(source: &SourceMeasure, x: &Vector) -> Result<f64> {
    scalar_kernel(source, x, |d| d.ln(), Some(0.0))
}

fn scalar_kernel<K: Fn(f64) -> f64>(
    source: &SourceMeasure,
    x: &Vector,
    kernel: K,
    grid_alpha: Option<f64>,
) -> Result<f64> {
    match source {
        SourceMeasure::Atomic(m) => {
            check_dims(m.dim(), x)?;
            let mut acc = 0.0;
            for atom in m.atoms() {
                let d = atom.location.dist(x);
                if d == 0.0 {
                    return Err(Error::Singularity(format!(
                        "evaluation point {:?} coincides with an atom",
                        x.0
                    )));
                }
                acc += atom.weight * kernel(d);
            }
            Ok(acc)
        }
        SourceMeasure::Gridded(g) => {
            check_dims(g.dim(), x)?;
            if let Some(alpha) = grid_alpha {
                gridded_integrability_check(g, alpha)?;
            }
            let n = g.dim();
            let vol = g.cell_volume();
            let singular = g.containing_cell(x);
            let singular_lin = singular.as_ref().map(|idx| g.linear_index(idx));
            let mut acc = 0.0;
            let mut lin = 0usize;
            let mut collided = false;
            g.for_each_cell(|center, value| {
                if Some(lin) == singular_lin {
                    lin += 1;
                    return;
                }
                lin += 1;
                if value == 0.0 {
                    return;
                }
                let mut d2 = 0.0;
                for k in 0..n {
                    let d = x.0[k] - center[k];
                    d2 += d * d;
                }
                if d2 == 0.0 {
                    collided = true;
                    return;
                }
                acc += vol * value * kernel(d2.sqrt());
            });
            if collided {
                return Err(Error::Singularity(format!(
                    "evaluation point {:?} coincides with a grid cell center",
                    x.0
                )));
            }
            if let Some(idx) = singular {
                let value = g.value_at(&idx);
                if value > 0.0 {
                    let sub_vol = vol / (SINGULAR_SUBGRID as f64).powi(n as i32);
                    for_each_subcell(g, &idx, |center| {
                        let mut d2 = 0.0;
                        for k in 0..n {
                            let d = x.0[k] - center[k];
                            d2 += d * d;
                        }
                        if d2 == 0.0 {
                            return Err(Error::Singularity(
                                "evaluation point coincides with a subgrid node".into(),
                            ));
                        }
                        acc += sub_vol * value * kernel(d2.sqrt());
                        Ok(())
                    })?;
                }
            }
            Ok(acc)
        }
    }
}

/// Potential `u = S_alpha`.
pub fn potential(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<f64> {
    Ok(compute_moments(source, x, alpha)?.s_alpha)
}

/// Gradient `grad u = -alpha V`.
pub fn gradient(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<Vector> {
    Ok(compute_moments(source, x, alpha)?.v.scale(-alpha))
}

/// Hessian `-alpha S_{alpha+2} Id + alpha (alpha+2) M`.
pub fn hessian(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<SymMatrix> {
    let m = compute_moments(source, x, alpha)?;
    Ok(hessian_from_moments(&m))
}

fn hessian_from_moments(m: &MomentSet) -> SymMatrix {
    let alpha = m.alpha;
    let mut h = m.m.scale(alpha * (alpha + 2.0));
    h.add_scaled_identity(-alpha * m.s_alpha_2);
    h
}

/// Laplacian `alpha (alpha + 2 - n) S_{alpha+2}`.
pub fn laplacian(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<f64> {
    let m = compute_moments(source, x, alpha)?;
    Ok(laplacian_from_moments(&m))
}

fn laplacian_from_moments(m: &MomentSet) -> f64 {
    m.alpha * (m.alpha + 2.0 - m.dim() as f64) * m.s_alpha_2
}

/// Infinity-Laplacian
/// `-alpha^3 S_{alpha+2} |V|^2 + alpha^3 (alpha+2) V^T M V`,
/// the factored form of the triple kernel integrals.
pub fn inf_laplacian(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<f64> {
    let m = compute_moments(source, x, alpha)?;
    Ok(inf_laplacian_from_moments(&m))
}

fn inf_laplacian_from_moments(m: &MomentSet) -> f64 {
    let a3 = m.alpha * m.alpha * m.alpha;
    -a3 * m.s_alpha_2 * m.v.norm_sq() + a3 * (m.alpha + 2.0) * m.vmv()
}

/// Full derivative bundle from a single moment computation.
pub fn moment_bundle(source: &SourceMeasure, x: &Vector, alpha: f64) -> Result<DerivativeBundle> {
    let m = compute_moments(source, x, alpha)?;
    Ok(bundle_from_moments(&m))
}

/// Assembles `u`, `grad`, Hessian, Laplacian and infinity-Laplacian from an
/// already computed moment set.
pub fn bundle_from_moments(m: &MomentSet) -> DerivativeBundle {
    DerivativeBundle {
        u: m.s_alpha,
        grad: m.v.scale(-m.alpha),
        hess: hessian_from_moments(m),
        lap: laplacian_from_moments(m),
        inf_lap: inf_laplacian_from_moments(m),
        path: EvalPath::Moment,
    }
}

/// Sign convention for the logarithmic potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogSign {
    /// `u(x) = \int log|x-y| rho(y) dy`
    Plus,
    /// `u(x) = \int log(1/|x-y|) rho(y) dy`
    Minus,
}

/// Derivative bundle of the logarithmic potential. The derivative kernels are
/// the `alpha = 0` moment kernels: `grad = V`, `hess = S_2 Id - 2 M`,
/// `lap = (n-2) S_2`, `lapinf = S_2 |V|^2 - 2 V^T M V` for the plus
/// convention, all negated for the minus convention.
pub fn log_potential_bundle(
    source: &SourceMeasure,
    x: &Vector,
    sign: LogSign,
) -> Result<DerivativeBundle> {
    let m = compute_moments(source, x, 0.0)?;
    let u = log_potential_value(source, x)?;
    let n = m.dim() as f64;
    let mut hess = m.m.scale(-2.0);
    hess.add_scaled_identity(m.s_alpha_2);
    let lap = (n - 2.0) * m.s_alpha_2;
    let inf_lap = m.s_alpha_2 * m.v.norm_sq() - 2.0 * m.vmv();
    let flip = match sign {
        LogSign::Plus => 1.0,
        LogSign::Minus => -1.0,
    };
    Ok(DerivativeBundle {
        u: flip * u,
        grad: m.v.scale(flip),
        hess: hess.scale(flip),
        lap: flip * lap,
        inf_lap: flip * inf_lap,
        path: EvalPath::Moment,
    })
}

/// A finite-difference bundle plus diagnostics about the step.
#[derive(Clone, Debug)]
pub struct FdBundle {
    pub bundle: DerivativeBundle,
    pub step: f64,
    /// Set when halving the step moves the gradient by more than 1e-3
    /// relative, indicating cancellation noise.
    pub cancellation_warning: bool,
}

/// Default finite-difference step: `1e-4 * (1 + |x|)` balances truncation
/// against cancellation at 64-bit precision.
pub fn default_fd_step(x: &Vector) -> f64 {
    1e-4 * (1.0 + x.norm())
}

/// Central-difference derivative bundle, the independent verification path for
/// the moment formulas. `step = None` uses [`default_fd_step`].
pub fn fd_oracle(
    source: &SourceMeasure,
    x: &Vector,
    alpha: f64,
    step: Option<f64>,
) -> Result<FdBundle> {
    let h = match step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::domain(format!("fd step must be positive, got {s}"))),
        None => default_fd_step(x),
    };
    let n = x.dim();
    let eval = |pt: &Vector| potential_value(source, pt, alpha);

    let grad_at = |h: f64| -> Result<Vector> {
        let mut g = vec![0.0; n];
        let mut shifted = x.clone();
        for k in 0..n {
            shifted.0[k] = x.0[k] + h;
            let up = eval(&shifted)?;
            shifted.0[k] = x.0[k] - h;
            let dn = eval(&shifted)?;
            shifted.0[k] = x.0[k];
            g[k] = (up - dn) / (2.0 * h);
        }
        Ok(Vector(g))
    };

    let u0 = eval(x)?;
    let grad = grad_at(h)?;
    let grad_half = grad_at(h / 2.0)?;
    let scale = grad.norm().max(grad_half.norm()).max(1e-300);
    let disagreement = grad.sub(&grad_half).norm() / scale;
    let cancellation_warning = disagreement > 1e-3;

    let mut hess = SymMatrix::zeros(n);
    let mut shifted = x.clone();
    for i in 0..n {
        shifted.0[i] = x.0[i] + h;
        let up = eval(&shifted)?;
        shifted.0[i] = x.0[i] - h;
        let dn = eval(&shifted)?;
        shifted.0[i] = x.0[i];
        hess.set(i, i, (up - 2.0 * u0 + dn) / (h * h));
        for j in (i + 1)..n {
            let mut val = 0.0;
            for (si, sj, sign) in [
                (1.0, 1.0, 1.0),
                (1.0, -1.0, -1.0),
                (-1.0, 1.0, -1.0),
                (-1.0, -1.0, 1.0),
            ] {
                shifted.0[i] = x.0[i] + si * h;
                shifted.0[j] = x.0[j] + sj * h;
                val += sign * eval(&shifted)?;
                shifted.0[i] = x.0[i];
                shifted.0[j] = x.0[j];
            }
            hess.set(i, j, val / (4.0 * h * h));
        }
    }
    let lap = hess.trace();
    let inf_lap = hess.quad_form(&grad);
    Ok(FdBundle {
        bundle: DerivativeBundle {
            u: u0,
            grad,
            hess,
            lap,
            inf_lap,
            path: EvalPath::FiniteDifference,
        },
        step: h,
        cancellation_warning,
    })
}

/// Chain-rule transform of a bundle to the power `v = u^s`; requires `u > 0`.
///
/// `grad v = s u^{s-1} grad u`,
/// `lap v = s u^{s-1} lap u + s(s-1) u^{s-2} |grad u|^2`,
/// `lapinf v = s^3 u^{3s-3} lapinf u + s^3 (s-1) u^{3s-4} |grad u|^4`.
pub fn power_bundle(bundle: &DerivativeBundle, s: f64) -> Result<DerivativeBundle> {
    if !(bundle.u > 0.0) {
        return Err(Error::domain(format!(
            "power transform requires u > 0, got u = {}",
            bundle.u
        )));
    }
    let u = bundle.u;
    let g2 = bundle.grad_norm_sq();
    let c1 = s * u.powf(s - 1.0);
    let c2 = s * (s - 1.0) * u.powf(s - 2.0);
    let s3 = s * s * s;
    let mut hess = bundle.hess.scale(c1);
    hess.add_outer_scaled(c2, bundle.grad.as_slice());
    Ok(DerivativeBundle {
        u: u.powf(s),
        grad: bundle.grad.scale(c1),
        hess,
        lap: c1 * bundle.lap + c2 * g2,
        inf_lap: s3 * u.powf(3.0 * s - 3.0) * bundle.inf_lap
            + s3 * (s - 1.0) * u.powf(3.0 * s - 4.0) * g2 * g2,
        path: bundle.path,
    })
}

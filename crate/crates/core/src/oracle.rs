//! Independent verification paths: literal tensor sums over atoms, a 1-D radial
//! reduction for the uniform unit ball and the grid builder it calibrates.
//!
//! Nothing here is used by the factored fast path; these routines exist so the
//! fast path can be checked against slower but structurally different
//! computations.

use crate::error::{Error, Result};
use crate::math::{pairwise_sum, Vector};
use crate::source::{AtomicMeasure, GriddedDensity};

/// Literal triple-sum infinity-Laplacian
/// `-a^3 sum <x-y,x-z> k2(y) k2(z) k2(v) + a^3 (a+2) sum <x-y,x-v><x-z,x-v> k2(y) k2(z) k4(v)`
/// with `k2 = d^{-(a+2)}`, `k4 = d^{-(a+4)}`, evaluated in `O(N^3)`.
pub fn inf_laplacian_bruteforce(
    measure: &AtomicMeasure,
    x: &Vector,
    alpha: f64,
) -> Result<f64> {
    let n = measure.dim();
    let atoms = measure.atoms();
    let count = atoms.len();
    let mut diffs = Vec::with_capacity(count);
    let mut k2 = Vec::with_capacity(count);
    let mut k4 = Vec::with_capacity(count);
    let mut w = Vec::with_capacity(count);
    for atom in atoms {
        let diff = x.sub(&atom.location);
        let d = diff.norm();
        if d == 0.0 {
            return Err(Error::Singularity(
                "evaluation point coincides with an atom".into(),
            ));
        }
        k2.push(d.powf(-(alpha + 2.0)));
        k4.push(d.powf(-(alpha + 4.0)));
        w.push(atom.weight);
        diffs.push(diff);
    }
    let dot = |i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for k in 0..n {
            acc += diffs[i].0[k] * diffs[j].0[k];
        }
        acc
    };
    let a3 = alpha * alpha * alpha;
    let mut outer = Vec::with_capacity(count);
    for y in 0..count {
        let mut acc = 0.0;
        for z in 0..count {
            for v in 0..count {
                acc += -a3 * dot(y, z) * w[y] * k2[y] * w[z] * k2[z] * w[v] * k2[v]
                    + a3 * (alpha + 2.0) * dot(y, v) * dot(z, v) * w[y] * k2[y] * w[z] * k2[z]
                        * w[v] * k4[v];
            }
        }
        outer.push(acc);
    }
    Ok(pairwise_sum(&outer))
}

// -- 1-D radial reduction for the uniform unit ball in R^3 -------------------

/// `int_{-1}^{1} D^e dxi` with `D = R^2 + s^2 - 2 R s xi`.
fn xi_power_integral(r: f64, s: f64, e: f64) -> f64 {
    if (e + 1.0).abs() < 1e-14 {
        (((r + s) * (r + s)) / ((r - s) * (r - s))).ln() / (2.0 * r * s)
    } else {
        ((r + s).powf(2.0 * e + 2.0) - (r - s).abs().powf(2.0 * e + 2.0))
            / (2.0 * r * s * (e + 1.0))
    }
}

/// Spherical-shell kernel: `int_{S^2} |x - s w|^{-beta} dw` for `|x| = r`.
fn shell_scalar(r: f64, s: f64, beta: f64) -> f64 {
    2.0 * std::f64::consts::PI * xi_power_integral(r, s, -beta / 2.0)
}

/// Radial component of the shell vector kernel:
/// `int_{S^2} <x - s w, x/|x|> |x - s w|^{-(alpha+2)} dw`.
fn shell_vector_radial(r: f64, s: f64, alpha: f64) -> f64 {
    let b = alpha + 2.0;
    let i0 = xi_power_integral(r, s, -b / 2.0);
    let i1 = xi_power_integral(r, s, 1.0 - b / 2.0);
    2.0 * std::f64::consts::PI * ((r * r - s * s) / (2.0 * r) * i0 + i1 / (2.0 * r))
}

fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson failed to converge on [{a}, {b}]"
        )));
    }
    Ok(adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
        + adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
}

fn integrate_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// `S_beta(x)` of the uniform unit-ball density in `R^3` at `|x| = r`, by
/// adaptive quadrature over spherical shells. Valid for `r > 1` (point outside
/// the support) and `beta` integrable.
pub fn unit_ball_moment_s(r: f64, beta: f64) -> Result<f64> {
    if !(r > 1.0) {
        return Err(Error::usage(format!(
            "radial ball oracle expects the point outside the support, got |x| = {r}"
        )));
    }
    let f = |s: f64| if s == 0.0 { 0.0 } else { s * s * shell_scalar(r, s, beta) };
    integrate_adaptive(f, 0.0, 1.0, 1e-12)
}

/// Radial component of `V(x)` for the uniform unit ball in `R^3` at `|x| = r`.
pub fn unit_ball_moment_v(r: f64, alpha: f64) -> Result<f64> {
    if !(r > 1.0) {
        return Err(Error::usage(format!(
            "radial ball oracle expects the point outside the support, got |x| = {r}"
        )));
    }
    let f = |s: f64| {
        if s == 0.0 {
            0.0
        } else {
            s * s * shell_vector_radial(r, s, alpha)
        }
    };
    integrate_adaptive(f, 0.0, 1.0, 1e-12)
}

/// Uniform unit-ball density on `[-1, 1]^3` with `2 * h_inv` cells per axis
/// (`h = 1/h_inv`). Cells cut by the sphere get the volume fraction estimated
/// on a `subsample^3` midpoint subgrid; `subsample <= 1` gives the raw 0/1
/// indicator, whose staircase noise caps the observable convergence order.
pub fn unit_ball_grid(h_inv: usize, subsample: usize) -> GriddedDensity {
    let h = 1.0 / h_inv as f64;
    let cells = 2 * h_inv;
    let band = 3.0_f64.sqrt() * h / 2.0 + 1e-12;
    let mut values = vec![0.0; cells * cells * cells];
    let center = |i: usize| -> f64 { (i as f64 + 0.5) * h - 1.0 };
    let mut lin = 0;
    for i in 0..cells {
        let x = center(i);
        for j in 0..cells {
            let y = center(j);
            for k in 0..cells {
                let z = center(k);
                let rr = (x * x + y * y + z * z).sqrt();
                values[lin] = if (rr - 1.0).abs() <= band && subsample > 1 {
                    let m = subsample;
                    let mut inside = 0usize;
                    for a in 0..m {
                        let xs = x + ((a as f64 + 0.5) / m as f64 - 0.5) * h;
                        for b in 0..m {
                            let ys = y + ((b as f64 + 0.5) / m as f64 - 0.5) * h;
                            for c in 0..m {
                                let zs = z + ((c as f64 + 0.5) / m as f64 - 0.5) * h;
                                if xs * xs + ys * ys + zs * zs <= 1.0 {
                                    inside += 1;
                                }
                            }
                        }
                    }
                    inside as f64 / (m * m * m) as f64
                } else if rr <= 1.0 {
                    1.0
                } else {
                    0.0
                };
                lin += 1;
            }
        }
    }
    GriddedDensity::new(
        Vector(vec![-1.0, -1.0, -1.0]),
        h,
        vec![cells, cells, cells],
        values,
    )
    .expect("ball grid construction is well-formed")
}

//! Deterministic evaluation-point clouds: a seeded low-discrepancy (Halton)
//! sequence over a bounding box, plus stress points hugging the atoms and a
//! far-field ring, with a configurable exclusion radius around atoms.

use crate::math::Vector;
use crate::source::SourceMeasure;

/// Cloud configuration. `bbox = None` derives a box from the source geometry.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
    pub bbox: Option<(Vector, Vector)>,
    pub min_atom_distance: f64,
    /// Include near-atom and far-field stress points.
    pub stress: bool,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            count: 1000,
            seed: 0,
            bbox: None,
            min_atom_distance: 1e-3,
            stress: true,
        }
    }
}

impl SampleSpec {
    pub fn with_count(count: usize) -> Self {
        SampleSpec {
            count,
            ..SampleSpec::default()
        }
    }

    pub fn with_count_seed(count: usize, seed: u64) -> Self {
        SampleSpec {
            count,
            seed,
            ..SampleSpec::default()
        }
    }
}

const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Default bounding box: the source's support box inflated by
/// `max(1, diameter)` per side.
pub fn default_bbox(source: &SourceMeasure) -> (Vector, Vector) {
    match source {
        SourceMeasure::Atomic(m) => {
            let (lo, hi) = m.bounding_box();
            let pad = m.diameter().max(1.0);
            (
                Vector(lo.0.iter().map(|a| a - pad).collect()),
                Vector(hi.0.iter().map(|a| a + pad).collect()),
            )
        }
        SourceMeasure::Gridded(g) => {
            let lo = g.origin().clone();
            let hi = Vector(
                lo.0.iter()
                    .zip(g.shape())
                    .map(|(o, s)| o + g.h() * *s as f64)
                    .collect(),
            );
            let pad = 1.0;
            (
                Vector(lo.0.iter().map(|a| a - pad).collect()),
                Vector(hi.0.iter().map(|a| a + pad).collect()),
            )
        }
    }
}

/// Generates the evaluation cloud for `source`. Deterministic in
/// `(spec.seed, spec.count, geometry)`: a seeded Cranley-Patterson rotation of
/// the Halton sequence, filtered to keep `min_atom_distance` away from atoms,
/// then (optionally) per-atom stress points at distance 1e-2 and a far-field
/// ring at `10 * max(diameter, 1)` from the box center.
pub fn generate_cloud(spec: &SampleSpec, source: &SourceMeasure) -> Vec<Vector> {
    let n = source.dim();
    let (lo, hi) = spec.bbox.clone().unwrap_or_else(|| default_bbox(source));
    let mut rot_state = spec.seed.wrapping_mul(0x9e3779b97f4a7c15) ^ 0x5851f42d4c957f2d;
    let rotation: Vec<f64> = (0..n)
        .map(|_| splitmix64(&mut rot_state) as f64 / u64::MAX as f64)
        .collect();

    let far_enough = |x: &Vector| -> bool {
        match source {
            SourceMeasure::Atomic(m) => m.min_distance_to(x) >= spec.min_atom_distance,
            SourceMeasure::Gridded(_) => true,
        }
    };

    let mut points = Vec::with_capacity(spec.count);
    let mut index = 1u64;
    let budget = 200 * spec.count as u64 + 1000;
    while points.len() < spec.count && index < budget {
        let mut coords = Vec::with_capacity(n);
        for k in 0..n {
            let u = (halton(index, HALTON_BASES[k % HALTON_BASES.len()]) + rotation[k]).fract();
            coords.push(lo.0[k] + u * (hi.0[k] - lo.0[k]));
        }
        index += 1;
        let x = Vector(coords);
        if far_enough(&x) {
            points.push(x);
        }
    }

    if spec.stress {
        if let SourceMeasure::Atomic(m) = source {
            // Stress ring hugging each atom at distance 1e-2, along the axes.
            let near = 1e-2;
            if near >= spec.min_atom_distance {
                for atom in m.atoms() {
                    for k in 0..n {
                        for sgn in [-1.0, 1.0] {
                            let mut c = atom.location.0.clone();
                            c[k] += sgn * near;
                            let x = Vector(c);
                            if far_enough(&x) {
                                points.push(x);
                            }
                        }
                    }
                }
            }
            // Far field along the axes from the box center.
            let radius = 10.0 * m.diameter().max(1.0);
            let center: Vec<f64> =
                lo.0.iter().zip(&hi.0).map(|(a, b)| 0.5 * (a + b)).collect();
            for k in 0..n {
                for sgn in [-1.0, 1.0] {
                    let mut c = center.clone();
                    c[k] += sgn * radius;
                    points.push(Vector(c));
                }
            }
        }
    }
    points
}

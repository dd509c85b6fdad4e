//! Mass distributions the sign theorems quantify over, the parameter bundle
//! `(n, p, q, alpha)` with its derived exponents, and the heat-kernel mollifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{pairwise_sum, Vector};

/// The exponent `p`: finite in `[2, inf)` or the distinguished infinity value
/// accepted only by the infinity-Laplacian sign check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PValue {
    Finite(f64),
    Infinity,
}

impl PValue {
    pub fn is_infinite(&self) -> bool {
        matches!(self, PValue::Infinity)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            PValue::Finite(p) => Some(*p),
            PValue::Infinity => None,
        }
    }
}

impl Serialize for PValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PValue::Finite(p) => s.serialize_f64(*p),
            PValue::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(PValue::Finite(p)),
            Raw::Str(s) if s == "inf" => Ok(PValue::Infinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "p must be a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Parameter bundle `(n, p, q, alpha)`.
///
/// `alpha` is the kernel exponent of `u(x) = \int rho(y) |x-y|^{-alpha} dy`;
/// the Riesz order `n - alpha` is a presentation detail left to callers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRaw", into = "ParamsRaw")]
pub struct Params {
    n: usize,
    p: PValue,
    q: f64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsRaw {
    n: usize,
    p: PValue,
    q: f64,
    alpha: f64,
}

impl TryFrom<ParamsRaw> for Params {
    type Error = Error;
    fn try_from(r: ParamsRaw) -> Result<Self> {
        Params::new(r.n, r.p, r.q, r.alpha)
    }
}

impl From<Params> for ParamsRaw {
    fn from(p: Params) -> Self {
        ParamsRaw {
            n: p.n,
            p: p.p,
            q: p.q,
            alpha: p.alpha,
        }
    }
}

/// Derived exponents of a finite-`p` parameter set.
#[derive(Clone, Copy, Debug)]
pub struct DerivedExponents {
    pub p: f64,
    /// `m = (p - 2 + q) / (p - 1)`; positive under the standing assumptions.
    pub m: f64,
    /// `gamma = (p - n) / (p - 2 + q)`, the fundamental-solution exponent.
    pub gamma: f64,
    /// `lambda = -(p - 2)(alpha + 2)`; nonpositive whenever `alpha > -2`.
    pub lambda: f64,
}

impl Params {
    /// Validates the standing assumptions: `n >= 3`, `q > 0` and `p >= 2`
    /// (or the distinguished infinity).
    pub fn new(n: usize, p: PValue, q: f64, alpha: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::domain(format!("dimension n must be >= 3, got {n}")));
        }
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::domain(format!("q must be positive, got {q}")));
        }
        if let PValue::Finite(pv) = p {
            if !(pv >= 2.0) || !pv.is_finite() {
                return Err(Error::domain(format!(
                    "p must satisfy p >= 2 (or \"inf\"), got {pv}"
                )));
            }
        }
        if !alpha.is_finite() {
            return Err(Error::domain(format!("alpha must be finite, got {alpha}")));
        }
        let params = Params { n, p, q, alpha };
        if let Ok(d) = params.derived() {
            debug_assert!(d.m > 0.0);
        }
        Ok(params)
    }

    pub fn finite(n: usize, p: f64, q: f64, alpha: f64) -> Result<Self> {
        Params::new(n, PValue::Finite(p), q, alpha)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> PValue {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same parameters with a different kernel exponent.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Params::new(self.n, self.p, self.q, alpha)
    }

    /// The derived exponents `m`, `gamma`, `lambda`; errors for `p = inf`.
    pub fn derived(&self) -> Result<DerivedExponents> {
        let p = self.p.finite().ok_or_else(|| {
            Error::usage("derived exponents are defined for finite p only".to_string())
        })?;
        Ok(DerivedExponents {
            p,
            m: (p - 2.0 + self.q) / (p - 1.0),
            gamma: (p - self.n as f64) / (p - 2.0 + self.q),
            lambda: -(p - 2.0) * (self.alpha + 2.0),
        })
    }
}

/// Which sign theorem (if any) covers a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegimeTag {
    /// `2 <= p < n`, `q >= 1`, `0 < alpha <= (n-p)/(p-2+q)`: supersolution, `I <= 0`.
    Case1Super,
    /// `p > n`, `0 < q <= 1`, `-alpha >= (p-n)/(p-2+q)`: subsolution, `I >= 0`.
    Case2Sub,
    /// `p = n`, `q > 0`: logarithmic potential, supersolution where `u > 0`.
    Case3Log,
    /// `p = inf`, `0 < q <= 1`, `-alpha >= 1`: infinity-subharmonic.
    InfSub,
    Unsupported,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Regime {
    pub tag: RegimeTag,
    pub reason: String,
}

/// The threshold `(n - p)/(p - 2 + q)` bounding `alpha` in the two power cases;
/// equals `-1` in the limit `p = inf`. Undefined (log case) for `p = n`.
pub fn alpha_threshold(params: &Params) -> Result<f64> {
    match params.p {
        PValue::Infinity => Ok(-1.0),
        PValue::Finite(p) => {
            if p == params.n as f64 {
                Err(Error::domain(
                    "alpha threshold undefined for p = n (log case)".to_string(),
                ))
            } else {
                Ok((params.n as f64 - p) / (p - 2.0 + params.q))
            }
        }
    }
}

/// Classifies a parameter set against the hypotheses of the three sign cases.
/// Total: parameters outside every case map to `Unsupported` with the violated
/// condition named.
pub fn classify_regime(params: &Params) -> Regime {
    let n = params.n as f64;
    let q = params.q;
    let alpha = params.alpha;
    match params.p {
        PValue::Infinity => {
            if q > 1.0 {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!("p = inf requires 0 < q <= 1, got q = {q}"),
                }
            } else if -alpha >= 1.0 {
                Regime {
                    tag: RegimeTag::InfSub,
                    reason: format!("p = inf, -alpha = {} >= 1", -alpha),
                }
            } else {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!("p = inf requires -alpha >= 1, got -alpha = {}", -alpha),
                }
            }
        }
        PValue::Finite(p) if p < n => {
            let thr = (n - p) / (p - 2.0 + q);
            if q < 1.0 {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!("case (1) with p < n requires q >= 1, got q = {q}"),
                }
            } else if alpha <= 0.0 {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!("case (1) requires 0 < alpha, got alpha = {alpha}"),
                }
            } else if alpha > thr {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!(
                        "case (1) requires alpha <= (n-p)/(p-2+q) = {thr}, got alpha = {alpha}"
                    ),
                }
            } else {
                Regime {
                    tag: RegimeTag::Case1Super,
                    reason: format!("2 <= p < n, q >= 1, 0 < alpha <= {thr}"),
                }
            }
        }
        PValue::Finite(p) if p > n => {
            let thr = (p - n) / (p - 2.0 + q);
            if q > 1.0 {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!("case (2) with p > n requires 0 < q <= 1, got q = {q}"),
                }
            } else if -alpha < thr {
                Regime {
                    tag: RegimeTag::Unsupported,
                    reason: format!(
                        "case (2) requires -alpha >= (p-n)/(p-2+q) = {thr}, got -alpha = {}",
                        -alpha
                    ),
                }
            } else {
                Regime {
                    tag: RegimeTag::Case2Sub,
                    reason: format!("p > n, 0 < q <= 1, -alpha >= {thr}"),
                }
            }
        }
        PValue::Finite(_) => Regime {
            tag: RegimeTag::Case3Log,
            reason: "p = n: logarithmic potential".to_string(),
        },
    }
}

/// One weighted Dirac mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "A")]
    pub weight: f64,
    #[serde(rename = "a")]
    pub location: Vector,
}

/// A finite list of nonnegative point masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtomicRaw", into = "AtomicRaw")]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

#[derive(Serialize, Deserialize)]
struct AtomicRaw {
    atoms: Vec<Atom>,
}

impl TryFrom<AtomicRaw> for AtomicMeasure {
    type Error = Error;
    fn try_from(r: AtomicRaw) -> Result<Self> {
        AtomicMeasure::new(r.atoms)
    }
}

impl From<AtomicMeasure> for AtomicRaw {
    fn from(m: AtomicMeasure) -> Self {
        AtomicRaw { atoms: m.atoms }
    }
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::domain("an atomic measure needs at least one atom"));
        }
        let dim = atoms[0].location.dim();
        for a in &atoms {
            if !(a.weight >= 0.0) || !a.weight.is_finite() {
                return Err(Error::domain(format!(
                    "atom weights must be nonnegative and finite, got {}",
                    a.weight
                )));
            }
            if a.location.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: a.location.dim(),
                });
            }
            if !a.location.is_finite() {
                return Err(Error::domain("atom locations must be finite"));
            }
        }
        Ok(AtomicMeasure { atoms })
    }

    /// Convenience constructor from `(weight, coordinates)` pairs.
    pub fn from_pairs(pairs: &[(f64, Vec<f64>)]) -> Result<Self> {
        AtomicMeasure::new(
            pairs
                .iter()
                .map(|(w, loc)| Atom {
                    weight: *w,
                    location: Vector(loc.clone()),
                })
                .collect(),
        )
    }

    pub fn single(weight: f64, location: Vec<f64>) -> Result<Self> {
        AtomicMeasure::from_pairs(&[(weight, location)])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].location.dim()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.atoms.iter().map(|a| a.weight).collect::<Vec<_>>())
    }

    /// Largest pairwise distance between atom locations.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.atoms.len() {
            for j in (i + 1)..self.atoms.len() {
                d = d.max(self.atoms[i].location.dist(&self.atoms[j].location));
            }
        }
        d
    }

    /// Axis-aligned bounding box of the atom locations.
    pub fn bounding_box(&self) -> (Vector, Vector) {
        let n = self.dim();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for a in &self.atoms {
            for k in 0..n {
                lo[k] = lo[k].min(a.location.0[k]);
                hi[k] = hi[k].max(a.location.0[k]);
            }
        }
        (Vector(lo), Vector(hi))
    }

    pub fn min_distance_to(&self, x: &Vector) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.location.dist(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Geometry of a sampling grid: `origin` is the low corner of the box, cells
/// have spacing `h` per axis and centers at `origin + h * (idx + 1/2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vector,
    pub h: f64,
    pub shape: Vec<usize>,
}

impl GridSpec {
    /// A grid box covering the atoms of `measure` padded by `pad` on every
    /// side, with spacing `h`.
    pub fn covering(measure: &AtomicMeasure, pad: f64, h: f64) -> Self {
        let (lo, hi) = measure.bounding_box();
        let n = lo.dim();
        let mut origin = Vec::with_capacity(n);
        let mut shape = Vec::with_capacity(n);
        for k in 0..n {
            let a = lo.0[k] - pad;
            let b = hi.0[k] + pad;
            let cells = ((b - a) / h).ceil().max(1.0) as usize;
            origin.push(a);
            shape.push(cells);
        }
        GridSpec {
            origin: Vector(origin),
            h,
            shape,
        }
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn cell_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn high_corner(&self) -> Vector {
        Vector(
            self.origin
                .0
                .iter()
                .zip(&self.shape)
                .map(|(o, s)| o + self.h * *s as f64)
                .collect(),
        )
    }
}

/// A compactly supported density sampled at cell centers; integrals against it
/// use midpoint quadrature with mass `h^n * value` per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GriddedRaw", into = "GriddedRaw")]
pub struct GriddedDensity {
    origin: Vector,
    h: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
    total_mass: f64,
}

#[derive(Serialize, Deserialize)]
struct GriddedRaw {
    origin: Vector,
    h: f64,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<GriddedRaw> for GriddedDensity {
    type Error = Error;
    fn try_from(r: GriddedRaw) -> Result<Self> {
        GriddedDensity::new(r.origin, r.h, r.shape, r.values)
    }
}

impl From<GriddedDensity> for GriddedRaw {
    fn from(g: GriddedDensity) -> Self {
        GriddedRaw {
            origin: g.origin,
            h: g.h,
            shape: g.shape,
            values: g.values,
        }
    }
}

impl GriddedDensity {
    pub fn new(origin: Vector, h: f64, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() != origin.dim() {
            return Err(Error::DimensionMismatch {
                expected: origin.dim(),
                got: shape.len(),
            });
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::domain(format!("grid spacing must be positive, got {h}")));
        }
        let cells: usize = shape.iter().product();
        if values.len() != cells {
            return Err(Error::Configuration(format!(
                "value count {} does not match grid shape ({} cells)",
                values.len(),
                cells
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("grid values must be nonnegative and finite"));
        }
        let cell_volume = h.powi(shape.len() as i32);
        let total_mass = cell_volume * pairwise_sum(&values);
        Ok(GriddedDensity {
            origin,
            h,
            shape,
            values,
            total_mass,
        })
    }

    pub fn from_spec(spec: &GridSpec, values: Vec<f64>) -> Result<Self> {
        GriddedDensity::new(spec.origin.clone(), spec.h, spec.shape.clone(), values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &Vector {
        &self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.shape.len() as i32)
    }

    /// Linear index of a multi-index (row-major, last axis fastest).
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for (k, i) in idx.iter().enumerate() {
            lin = lin * self.shape[k] + i;
        }
        lin
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.linear_index(idx)]
    }

    /// Center coordinates of the cell at multi-index `idx`, written into `out`.
    pub fn cell_center_into(&self, idx: &[usize], out: &mut [f64]) {
        for k in 0..self.shape.len() {
            out[k] = self.origin.0[k] + self.h * (idx[k] as f64 + 0.5);
        }
    }

    /// Multi-index of the cell containing `x`, if `x` lies inside the grid box.
    pub fn containing_cell(&self, x: &Vector) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.shape.len());
        for k in 0..self.shape.len() {
            let rel = (x.0[k] - self.origin.0[k]) / self.h;
            if rel < 0.0 || rel >= self.shape[k] as f64 {
                return None;
            }
            idx.push((rel.floor() as usize).min(self.shape[k] - 1));
        }
        Some(idx)
    }

    /// Visits every cell as `(center, value)`; `center` is a scratch slice
    /// reused between calls.
    pub fn for_each_cell<F: FnMut(&[f64], f64)>(&self, mut f: F) {
        let n = self.shape.len();
        let mut idx = vec![0usize; n];
        let mut center = vec![0.0; n];
        for v in &self.values {
            self.cell_center_into(&idx, &mut center);
            f(&center, *v);
            // increment multi-index, last axis fastest
            for k in (0..n).rev() {
                idx[k] += 1;
                if idx[k] < self.shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Reinterprets the grid as an atomic measure: one atom of mass
    /// `h^n * value` per cell with positive value.
    pub fn as_atoms(&self) -> Result<AtomicMeasure> {
        self.as_atoms_thresholded(0.0)
    }

    /// Like [`Self::as_atoms`] but drops cells with `value <= min_value`,
    /// which keeps downstream pair loops proportional to the visible support.
    pub fn as_atoms_thresholded(&self, min_value: f64) -> Result<AtomicMeasure> {
        let vol = self.cell_volume();
        let mut atoms = Vec::new();
        self.for_each_cell(|center, v| {
            if v > min_value && v > 0.0 {
                atoms.push(Atom {
                    weight: vol * v,
                    location: Vector(center.to_vec()),
                });
            }
        });
        AtomicMeasure::new(atoms)
    }
}

/// Either source representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SourceMeasure {
    #[serde(rename = "atoms")]
    Atomic(AtomicMeasure),
    #[serde(rename = "grid")]
    Gridded(GriddedDensity),
}

impl SourceMeasure {
    pub fn dim(&self) -> usize {
        match self {
            SourceMeasure::Atomic(m) => m.dim(),
            SourceMeasure::Gridded(g) => g.dim(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            SourceMeasure::Atomic(m) => m.total_mass(),
            SourceMeasure::Gridded(g) => g.total_mass(),
        }
    }

    pub fn as_atomic(&self) -> Option<&AtomicMeasure> {
        match self {
            SourceMeasure::Atomic(m) => Some(m),
            SourceMeasure::Gridded(_) => None,
        }
    }
}

// serde for SourceMeasure: the external file format is
//   {"atoms": [{"A": w, "a": [..]}, ..]}  or  {"grid": {"origin": .., ..}}
// The enum tags match those keys, but the atomic arm must flatten the
// wrapper struct, so implement the mapping explicitly.
impl SourceMeasure {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Configuration(format!("measure file is not valid JSON: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Configuration("measure file must be a JSON object".into()))?;
        if let Some(atoms) = obj.get("atoms") {
            let atoms: Vec<Atom> = serde_json::from_value(atoms.clone())
                .map_err(|e| Error::Configuration(format!("bad atoms list: {e}")))?;
            Ok(SourceMeasure::Atomic(AtomicMeasure::new(atoms)?))
        } else if let Some(grid) = obj.get("grid") {
            let grid: GriddedDensity = serde_json::from_value(grid.clone())
                .map_err(|e| Error::Configuration(format!("bad grid: {e}")))?;
            Ok(SourceMeasure::Gridded(grid))
        } else {
            Err(Error::Configuration(
                "measure file must contain an \"atoms\" or \"grid\" key".into(),
            ))
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            SourceMeasure::Atomic(m) => {
                serde_json::json!({ "atoms": m.atoms() }).to_string()
            }
            SourceMeasure::Gridded(g) => serde_json::json!({ "grid": {
                "origin": g.origin(),
                "h": g.h(),
                "shape": g.shape(),
                "values": g.values(),
            } })
            .to_string(),
        }
    }
}

/// Heat-kernel smoothing of an atomic measure at time `t`, sampled on `spec`:
/// `rho_t(y) = (4 pi t)^{-n/2} sum_j A_j exp(-|y - a_j|^2 / 4t)`.
///
/// The grid must cover every atom padded by at least `6 sqrt(t)` per side, and
/// the sampled mass must recover the atomic mass to `1e-6` relative; otherwise
/// a configuration error reports the padding/spacing that would suffice.
pub fn mollify(measure: &AtomicMeasure, t: f64, spec: &GridSpec) -> Result<GriddedDensity> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("mollification time must be positive, got {t}")));
    }
    let n = measure.dim();
    if spec.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: spec.dim(),
        });
    }
    // Geometric precondition, weighted: atoms carrying a visible share of the
    // mass must sit 6 sqrt(t) inside the box. Negligible-weight atoms (tails of
    // a resampled density) are covered by the mass-capture check below.
    let pad_required = 6.0 * t.sqrt();
    let hi = spec.high_corner();
    let weight_floor = 1e-9 * measure.total_mass();
    for atom in measure.atoms() {
        if atom.weight < weight_floor {
            continue;
        }
        for k in 0..n {
            let lo_gap = atom.location.0[k] - spec.origin.0[k];
            let hi_gap = hi.0[k] - atom.location.0[k];
            if lo_gap < pad_required || hi_gap < pad_required {
                return Err(Error::Configuration(format!(
                    "grid too small: atoms must be padded by >= 6 sqrt(t) = {pad_required:.6} \
                     per side (axis {k} has gaps {lo_gap:.6} / {hi_gap:.6})"
                )));
            }
        }
    }

    let norm = (4.0 * std::f64::consts::PI * t).powf(-(n as f64) / 2.0);
    let inv_4t = 1.0 / (4.0 * t);
    let cells = spec.cell_count();
    let mut values = vec![0.0; cells];
    let mut idx = vec![0usize; n];
    let mut center = vec![0.0; n];
    for value in values.iter_mut() {
        for k in 0..n {
            center[k] = spec.origin.0[k] + spec.h * (idx[k] as f64 + 0.5);
        }
        let mut acc = 0.0;
        for atom in measure.atoms() {
            let mut d2 = 0.0;
            for k in 0..n {
                let d = center[k] - atom.location.0[k];
                d2 += d * d;
            }
            acc += atom.weight * (-d2 * inv_4t).exp();
        }
        *value = norm * acc;
        for k in (0..n).rev() {
            idx[k] += 1;
            if idx[k] < spec.shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }

    let density = GriddedDensity::new(spec.origin.clone(), spec.h, spec.shape.clone(), values)?;
    let target = measure.total_mass();
    if target > 0.0 {
        let rel = (density.total_mass() - target).abs() / target;
        if rel > 1e-6 {
            return Err(Error::Configuration(format!(
                "grid captures only {:.9} of mass {:.9} (relative defect {:.3e}); \
                 pad by >= {:.6} per side and keep h <= {:.6}",
                density.total_mass(),
                target,
                rel,
                7.5 * t.sqrt(),
                (2.0 * t).sqrt() / 2.0
            )));
        }
    }
    Ok(density)
}

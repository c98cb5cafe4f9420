//! Rate-space primitives: the uniform rate, spherical angle parameterization,
//! sphere optima, and sphere construction inside a vertex hull.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lp::phase_one_infeasibility;

/// A point in the rate space, one entry per predictive rate.
pub type RateVector = Vec<f64>;

const HULL_TOL: f64 = 1e-8;
const EXTENT_ITERS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "lowercase")]
pub enum RateKind {
    /// Per-class accuracies, `q = k`.
    Diagonal(usize),
    /// Off-diagonal confusion entries, `q = k^2 - k`.
    General(usize),
}

impl RateKind {
    pub fn classes(self) -> usize {
        match self {
            RateKind::Diagonal(k) | RateKind::General(k) => k,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            RateKind::Diagonal(k) => k,
            RateKind::General(k) => k * k - k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSpace {
    pub kind: RateKind,
    pub vertices: Option<Vec<RateVector>>,
}

#[derive(Serialize, Deserialize)]
struct RateSpaceFile {
    kind: String,
    k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<RateVector>>,
}

impl RateSpace {
    pub fn diagonal(k: usize) -> Self {
        Self { kind: RateKind::Diagonal(k), vertices: None }
    }

    pub fn general(k: usize) -> Self {
        Self { kind: RateKind::General(k), vertices: None }
    }

    pub fn with_vertices(kind: RateKind, vertices: Vec<RateVector>) -> Result<Self> {
        let space = Self { kind, vertices: Some(vertices) };
        space.validate()?;
        Ok(space)
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.classes() < 2 {
            return Err(invalid("rate space needs at least two classes"));
        }
        if let Some(vs) = &self.vertices {
            if vs.is_empty() {
                return Err(invalid("vertex set is empty"));
            }
            for v in vs {
                check_rate(v, self.dim())?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RateSpaceFile = serde_json::from_str(text)?;
        let kind = match raw.kind.as_str() {
            "diagonal" => RateKind::Diagonal(raw.k),
            "general" => RateKind::General(raw.k),
            other => return Err(invalid(format!("unknown rate kind {other:?}"))),
        };
        let space = Self { kind, vertices: raw.vertices };
        space.validate()?;
        Ok(space)
    }

    pub fn to_json(&self) -> Result<String> {
        let (kind, k) = match self.kind {
            RateKind::Diagonal(k) => ("diagonal", k),
            RateKind::General(k) => ("general", k),
        };
        let raw = RateSpaceFile { kind: kind.into(), k, vertices: self.vertices.clone() };
        Ok(serde_json::to_string(&raw)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Checks that `r` has length `dim` and every entry lies in `[0, 1]`.
pub fn check_rate(r: &[f64], dim: usize) -> Result<()> {
    if r.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: r.len() });
    }
    if let Some(x) = r.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(invalid(format!("rate entry {x} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: RateVector,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: RateVector, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid(format!("sphere radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| c - radius < -1e-12 || c + radius > 1.0 + 1e-12) {
            return Err(invalid("sphere leaves the unit box"));
        }
        Ok(Self { center, radius })
    }

    /// The sphere of radius `radius` around the uniform rate.
    pub fn around_uniform(space: &RateSpace, radius: f64) -> Result<Self> {
        Self::new(uniform_rate(space), radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `center + t * dir`.
    pub fn point(&self, dir: &[f64], t: f64) -> RateVector {
        self.center.iter().zip(dir).map(|(c, d)| c + t * d).collect()
    }
}

/// Hyperspherical angles; the last one ranges over `[0, 2pi]`, the rest over `[0, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleVector(Vec<f64>);

impl AngleVector {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(invalid("angle vector must have at least one angle"));
        }
        let last = angles.len() - 1;
        for (i, &t) in angles.iter().enumerate() {
            let hi = if i == last { TAU } else { PI };
            if !(0.0..=hi).contains(&t) {
                return Err(invalid(format!("angle {i} = {t} outside [0, {hi}]")));
            }
        }
        Ok(Self(angles))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn uniform_rate(space: &RateSpace) -> RateVector {
    vec![1.0 / space.kind.classes() as f64; space.dim()]
}

pub fn angles_to_weights(theta: &AngleVector) -> Vec<f64> {
    weights_from_raw(theta.as_slice())
}

/// Same map as [`angles_to_weights`] without the bound checks.
pub(crate) fn weights_from_raw(theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len() + 1);
    let mut sin_prod = 1.0;
    for &t in theta {
        out.push(sin_prod * t.cos());
        sin_prod *= t.sin();
    }
    out.push(sin_prod);
    out
}

pub fn weights_to_angles(a: &[f64]) -> Result<AngleVector> {
    if a.len() < 2 {
        return Err(invalid("need at least two weights"));
    }
    let norm = l2(a);
    if norm == 0.0 {
        return Err(invalid("zero weight vector has no direction"));
    }
    let q = a.len();
    let mut angles = Vec::with_capacity(q - 1);
    for i in 0..q - 1 {
        let tail = l2(&a[i + 1..]);
        if i == q - 2 {
            let t = a[q - 1].atan2(a[q - 2]);
            angles.push(if t < 0.0 { t + TAU } else { t });
        } else {
            angles.push(tail.atan2(a[i]));
        }
    }
    AngleVector::new(angles)
}

pub fn optimal_rate_on_sphere(a: &[f64], s: &Sphere) -> Result<RateVector> {
    if a.len() != s.dim() {
        return Err(Error::DimensionMismatch { expected: s.dim(), found: a.len() });
    }
    let n = l2(a);
    if (n - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("weights must be unit norm, got norm {n}")));
    }
    Ok(s.point(a, s.radius))
}

pub fn hull_contains(space: &RateSpace, p: &[f64]) -> Result<bool> {
    let vs = vertices(space)?;
    if p.len() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), found: p.len() });
    }
    Ok(in_hull(vs, p))
}

fn in_hull(vs: &[RateVector], p: &[f64]) -> bool {
    let q = p.len();
    let mut rows: Vec<Vec<f64>> = (0..q).map(|i| vs.iter().map(|v| v[i]).collect()).collect();
    rows.push(vec![1.0; vs.len()]);
    let mut rhs = p.to_vec();
    rhs.push(1.0);
    phase_one_infeasibility(&rows, &rhs) <= HULL_TOL
}

fn vertices(space: &RateSpace) -> Result<&[RateVector]> {
    match &space.vertices {
        Some(vs) if !vs.is_empty() => Ok(vs),
        _ => Err(invalid("rate space has no vertex set")),
    }
}

/// Largest `c` in `[0, 1]` with `o + c * dir` inside the hull, by bisection.
fn axis_extent(vs: &[RateVector], o: &[f64], j: usize, sign: f64) -> f64 {
    let at = |c: f64| {
        let mut p = o.to_vec();
        p[j] += sign * c;
        p
    };
    if in_hull(vs, &at(1.0)) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..EXTENT_ITERS {
        let mid = 0.5 * (lo + hi);
        if in_hull(vs, &at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Sphere around the uniform rate inscribed in the cross-polytope spanned by
/// the per-axis hull extents.
pub fn find_sphere(space: &RateSpace) -> Result<Sphere> {
    let vs = vertices(space)?;
    let o = uniform_rate(space);
    if !in_hull(vs, &o) {
        return Err(Error::NoInteriorSphere("uniform rate is outside the hull".into()));
    }
    let mut inv_sq = 0.0;
    for j in 0..o.len() {
        let c = axis_extent(vs, &o, j, 1.0).min(axis_extent(vs, &o, j, -1.0));
        if c < 1e-6 {
            return Err(Error::NoInteriorSphere(format!(
                "uniform rate lies on the hull boundary along axis {j}"
            )));
        }
        inv_sq += 1.0 / (c * c);
    }
    Sphere::new(o, 1.0 / inv_sq.sqrt())
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = l2(v);
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

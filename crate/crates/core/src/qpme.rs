//! Quadratic metric elicitation: local slopes from LPME runs on small spheres
//! around the uniform rate, shifted basis points and one reflected point,
//! combined by closed-form ratio algebra.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Sphere;
use crate::lpme::{lpme, LpmeConfig};
use crate::metrics::{QuadraticMetric, ShiftedQuadratic};
use crate::oracle::Oracle;

/// Smallest slope component or ratio difference accepted as a denominator.
pub const DENOMINATOR_GUARD: f64 = 1e-8;

/// How the coordinate playing the role of index 1 in the ratio algebra is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PivotRule {
    /// The first coordinate that responds to a trivial query.
    FirstResponsive,
    /// Chosen after the forward runs: the coordinate whose slope components stay
    /// large and whose shifted-center slope moved the most.
    #[default]
    BestConditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpmeConfig {
    /// Outer sphere around the uniform rate.
    pub sphere: Sphere,
    /// Radius of the small spheres the local slopes are taken on.
    pub inner_radius: f64,
    pub epsilon: f64,
    pub cycles: usize,
    pub pivot_rule: PivotRule,
    /// Re-solves after moving each observed slope from its small-sphere optimum back to
    /// the sphere center under the current estimate. Zero keeps the raw slopes.
    pub curvature_passes: usize,
}

impl QpmeConfig {
    /// Inner radius defaults to a tenth of the outer one.
    pub fn new(sphere: Sphere, epsilon: f64) -> Result<Self> {
        let inner = sphere.radius / 10.0;
        Self::with_inner_radius(sphere, inner, epsilon)
    }

    pub fn with_inner_radius(sphere: Sphere, inner_radius: f64, epsilon: f64) -> Result<Self> {
        let cfg = Self { sphere, inner_radius, epsilon, cycles: 3, pivot_rule: PivotRule::default(), curvature_passes: 2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius < self.sphere.radius) {
            return Err(invalid(format!(
                "inner radius {} must lie in (0, {})",
                self.inner_radius, self.sphere.radius
            )));
        }
        self.lpme_config(self.sphere.center.clone())?;
        Ok(())
    }

    /// Distance from the uniform rate to each shifted center.
    pub fn delta(&self) -> f64 {
        self.sphere.radius - self.inner_radius
    }

    pub fn dim(&self) -> usize {
        self.sphere.dim()
    }

    fn lpme_config(&self, center: Vec<f64>) -> Result<LpmeConfig> {
        LpmeConfig::new(Sphere { center, radius: self.inner_radius }, self.epsilon)?.with_cycles(self.cycles)
    }

    /// Worst case: `2q` trivial queries plus `q + 2` LPME runs.
    pub fn query_bound(&self) -> usize {
        let one = self.lpme_config(self.sphere.center.clone()).map(|c| c.query_bound()).unwrap_or(0);
        2 * self.dim() + (self.dim() + 2) * one
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpmeCenters {
    pub center: Vec<f64>,
    /// `o + delta * e_j`.
    pub shifted: Vec<Vec<f64>>,
    /// `o - delta * e_pivot`.
    pub reflected: Vec<f64>,
}

pub fn qpme_centers(cfg: &QpmeConfig, pivot: usize) -> Result<QpmeCenters> {
    cfg.validate()?;
    let q = cfg.dim();
    if pivot >= q {
        return Err(invalid(format!("pivot {pivot} out of range for {q} rates")));
    }
    let o = &cfg.sphere.center;
    let along = |j: usize, t: f64| {
        let mut z = o.clone();
        z[j] += t;
        z
    };
    Ok(QpmeCenters {
        center: o.clone(),
        shifted: (0..q).map(|j| along(j, cfg.delta())).collect(),
        reflected: along(pivot, -cfg.delta()),
    })
}

/// First coordinate whose trivial query `(o + r e_i, o)` or `(o, o + r e_i)` shows a strict
/// preference, with `r` the inner radius.
pub fn find_pivot<O: Oracle<[f64]> + ?Sized>(oracle: &mut O, cfg: &QpmeConfig) -> Result<(usize, usize)> {
    let o = &cfg.sphere.center;
    let mut queries = 0;
    for i in 0..cfg.dim() {
        let mut step = o.clone();
        step[i] += cfg.inner_radius;
        queries += 1;
        if oracle.compare(&step, o)? {
            return Ok((i, queries));
        }
        queries += 1;
        if oracle.compare(o, &step)? {
            return Ok((i, queries));
        }
    }
    Err(Error::FlatGradient)
}

/// Unit slopes estimated at the uniform rate, the shifted centers and the reflected center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSet {
    pub f0: Vec<f64>,
    pub fj: Vec<Vec<f64>>,
    pub fneg: Vec<f64>,
    pub pivot: usize,
}

fn guard(value: f64, ratio: impl FnOnce() -> String) -> Result<f64> {
    if value.abs() < DENOMINATOR_GUARD || !value.is_finite() {
        return Err(Error::Regularity { ratio: ratio(), value, threshold: DENOMINATOR_GUARD });
    }
    Ok(value)
}

/// Recovers `(d, B)` up to a positive scale from exact or estimated slopes.
/// The returned `d` equals `slopes.f0`.
pub fn solve_coefficients(slopes: &SlopeSet, delta: f64) -> Result<ShiftedQuadratic> {
    let q = slopes.f0.len();
    let p = slopes.pivot;
    if slopes.fj.len() != q || slopes.fneg.len() != q || slopes.fj.iter().any(|f| f.len() != q) {
        return Err(invalid("slope set has inconsistent dimensions"));
    }
    if p >= q || q < 2 {
        return Err(invalid("pivot out of range"));
    }
    if !(delta > 0.0) {
        return Err(invalid("center offset must be positive"));
    }

    let d1 = guard(slopes.f0[p], || format!("f0[{p}]"))?;
    let f0: Vec<f64> = slopes.f0.iter().map(|x| x / d1).collect();
    let mut fwd = Vec::with_capacity(q);
    for (j, f) in slopes.fj.iter().enumerate() {
        let den = guard(f[p], || format!("f{j}[{p}]"))?;
        fwd.push(f.iter().map(|x| x / den).collect::<Vec<f64>>());
    }
    let den = guard(slopes.fneg[p], || format!("f-[{p}]"))?;
    let neg: Vec<f64> = slopes.fneg.iter().map(|x| x / den).collect();

    // Every non-pivot coordinate i gives R (F-_i - F_i) = F-_i + F_i - 2 F0_i; solve in least squares.
    let (mut num, mut den_sq, mut widest) = (0.0, 0.0, 0.0f64);
    for i in (0..q).filter(|&i| i != p) {
        let (fi, fm) = (fwd[p][i], neg[i]);
        let w = fm - fi;
        num += w * (fm + fi - 2.0 * f0[i]);
        den_sq += w * w;
        widest = widest.max(w.abs());
    }
    guard(widest, || "F-[i,p,p] - F[i,p,p]".into())?;
    let r = num / den_sq;

    // delta * B_ij / d1 = F[i,p,j] (1 + F[j,p,p] (1 + R) - F0_j) - F0_i.
    let mut b = DMatrix::zeros(q, q);
    for j in 0..q {
        let scale = 1.0 + fwd[p][j] * (1.0 + r) - f0[j];
        for i in j..q {
            let v = if i == p && j == p { r } else { fwd[j][i] * scale - f0[i] };
            b[(i, j)] = v * d1 / delta;
            b[(j, i)] = b[(i, j)];
        }
    }
    // Entries touching the pivot are defined through column p; keep them exact.
    for i in 0..q {
        let v = if i == p { r } else { fwd[p][i] * (1.0 + r) - f0[i] };
        b[(i, p)] = v * d1 / delta;
        b[(p, i)] = b[(i, p)];
    }
    Ok(ShiftedQuadratic { d: slopes.f0.clone(), b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpmeOutcome {
    /// Jointly normalized estimate.
    pub metric: QuadraticMetric,
    /// Shifted estimate at the scale fixed by `d = f0`.
    pub shifted: ShiftedQuadratic,
    pub slopes: SlopeSet,
    pub queries: usize,
}

pub fn qpme<O: Oracle<[f64]> + ?Sized>(cfg: &QpmeConfig, oracle: &mut O) -> Result<QpmeOutcome> {
    cfg.validate()?;
    let q = cfg.dim();
    let (first, mut queries) = find_pivot(oracle, cfg)?;
    let centers = qpme_centers(cfg, first)?;

    let mut run = |center: &[f64], queries: &mut usize| -> Result<Vec<f64>> {
        let out = lpme(&cfg.lpme_config(center.to_vec())?, oracle)?;
        *queries += out.queries;
        Ok(out.weights)
    };
    let f0 = run(&centers.center, &mut queries)?;
    let mut fj = Vec::with_capacity(q);
    for z in &centers.shifted {
        fj.push(run(z, &mut queries)?);
    }
    let pivot = match cfg.pivot_rule {
        PivotRule::FirstResponsive => first,
        PivotRule::BestConditioned => best_conditioned(&f0, &fj, cfg.epsilon),
    };
    let reflected = qpme_centers(cfg, pivot)?.reflected;
    let fneg = run(&reflected, &mut queries)?;

    let slopes = SlopeSet { f0, fj, fneg, pivot };
    let mut shifted = solve_coefficients(&slopes, cfg.delta())?;
    let centers = qpme_centers(cfg, pivot)?;
    for _ in 0..cfg.curvature_passes {
        let moved = center_slopes(&slopes, &shifted, &centers, cfg.inner_radius);
        match solve_coefficients(&moved, cfg.delta()) {
            Ok(next) => shifted = next,
            Err(_) => break,
        }
    }
    let metric = shifted.unshift(&cfg.sphere.center)?.normalized()?;
    Ok(QpmeOutcome { metric, shifted, slopes, queries })
}

/// The optimum `s = c + r u` of a quadratic on a small sphere has gradient `mu u`, so the
/// gradient at `c` is `mu u - r B u`. Applies that under the estimate `model`.
pub fn center_slopes(slopes: &SlopeSet, model: &ShiftedQuadratic, centers: &QpmeCenters, radius: f64) -> SlopeSet {
    let o = nalgebra::DVector::from_column_slice(&centers.center);
    let d = nalgebra::DVector::from_column_slice(&model.d);
    let shift = |u: &[f64], c: &[f64]| -> Vec<f64> {
        let u = nalgebra::DVector::from_column_slice(u);
        let c = nalgebra::DVector::from_column_slice(c);
        let bu = &model.b * &u;
        let at_opt = &d + &model.b * (&c - &o) + &bu * radius;
        let g = &u * at_opt.norm() - bu * radius;
        let n = g.norm();
        if n > 0.0 { (g / n).as_slice().to_vec() } else { u.as_slice().to_vec() }
    };
    SlopeSet {
        f0: shift(&slopes.f0, &centers.center),
        fj: slopes.fj.iter().zip(&centers.shifted).map(|(f, c)| shift(f, c)).collect(),
        fneg: shift(&slopes.fneg, &centers.reflected),
        pivot: slopes.pivot,
    }
}

/// Scores each coordinate by its smallest slope component (squared) times how
/// far the slope at its shifted center moved away from the slope at `o`. Moves
/// below a few tolerances are indistinguishable from search noise.
fn best_conditioned(f0: &[f64], fj: &[Vec<f64>], eps: f64) -> usize {
    let floor = |p: usize| fj.iter().map(|f| f[p].abs()).fold(f0[p].abs(), f64::min);
    let spread = |p: usize| {
        (0..f0.len())
            .filter(|&i| i != p)
            .map(|i| (fj[p][i] / fj[p][p] - f0[i] / f0[p]).abs())
            .fold(0.0, f64::max)
    };
    let score = |p: usize| {
        let s = floor(p).powi(2) * spread(p).max(5.0 * eps);
        if s.is_finite() { s } else { 0.0 }
    };
    (0..f0.len()).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap_or(0)
}

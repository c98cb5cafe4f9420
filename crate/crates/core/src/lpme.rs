//! Linear metric elicitation by coordinate-wise binary search over the angles
//! that parameterize the sphere boundary.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, Result};
use crate::geometry::{weights_from_raw, AngleVector, Sphere};
use crate::oracle::Oracle;

#[derive(Debug, Clone, PartialEq)]
pub struct LpmeConfig {
    pub sphere: Sphere,
    pub epsilon: f64,
    pub cycles: usize,
}

impl LpmeConfig {
    pub fn new(sphere: Sphere, epsilon: f64) -> Result<Self> {
        let cfg = Self { sphere, epsilon, cycles: 3 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cycles(mut self, cycles: usize) -> Result<Self> {
        self.cycles = cycles;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < FRAC_PI_2) {
            return Err(invalid(format!("tolerance {} outside (0, pi/2)", self.epsilon)));
        }
        if self.cycles == 0 {
            return Err(invalid("need at least one cycle"));
        }
        if self.sphere.dim() < 2 {
            return Err(invalid("linear elicitation needs at least two rates"));
        }
        Ok(())
    }

    /// Worst-case query count: `q + 9 q ceil(log2(pi / (2 eps)))` for three cycles.
    pub fn query_bound(&self) -> usize {
        let q = self.sphere.dim();
        let halvings = (PI / (2.0 * self.epsilon)).log2().ceil() as usize;
        q + 3 * self.cycles * q * halvings
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpmeOutcome {
    /// Unit-norm slope estimate.
    pub weights: Vec<f64>,
    pub angles: AngleVector,
    pub queries: usize,
}

fn sphere_point(s: &Sphere, theta: &[f64]) -> Vec<f64> {
    s.point(&weights_from_raw(theta), s.radius)
}

/// Signs of the slope, one query per coordinate.
pub fn detect_orthant<O: Oracle<[f64]> + ?Sized>(s: &Sphere, oracle: &mut O) -> Result<Vec<f64>> {
    let q = s.dim();
    let w = 1.0 / (q as f64).sqrt();
    let all_pos = s.point(&vec![w; q], s.radius);
    let mut signs = Vec::with_capacity(q);
    for i in 0..q {
        let mut flipped = vec![w; q];
        flipped[i] = -w;
        let alt = s.point(&flipped, s.radius);
        signs.push(if oracle.compare(&alt, &all_pos)? { -1.0 } else { 1.0 });
    }
    Ok(signs)
}

/// The width-pi/2 search interval of each angle implied by the slope signs.
pub fn orthant_intervals(signs: &[f64]) -> Vec<(f64, f64)> {
    let q = signs.len();
    let mut out: Vec<(f64, f64)> = signs[..q - 2]
        .iter()
        .map(|&s| if s > 0.0 { (0.0, FRAC_PI_2) } else { (FRAC_PI_2, PI) })
        .collect();
    let quadrant = match (signs[q - 2] > 0.0, signs[q - 1] > 0.0) {
        (true, true) => 0.0,
        (false, true) => 1.0,
        (false, false) => 2.0,
        (true, false) => 3.0,
    };
    out.push((quadrant * FRAC_PI_2, (quadrant + 1.0) * FRAC_PI_2));
    out
}

/// Halves `[lo, hi]` towards the maximizer of a unimodal preference over `point(t)`,
/// using one to three queries. Returns the new interval.
pub fn shrink_with<Q, P, O, F>(oracle: &mut O, lo: f64, hi: f64, mut point: F, queries: &mut usize) -> Result<(f64, f64)>
where
    Q: ?Sized,
    P: AsRef<Q>,
    O: Oracle<Q> + ?Sized,
    F: FnMut(f64) -> Result<P>,
{
    let w = hi - lo;
    let (c, d, e) = (lo + 0.25 * w, lo + 0.5 * w, lo + 0.75 * w);
    let (ra, rc) = (point(lo)?, point(c)?);
    *queries += 1;
    if oracle.compare(ra.as_ref(), rc.as_ref())? {
        return Ok((lo, d));
    }
    let rd = point(d)?;
    *queries += 1;
    if oracle.compare(rc.as_ref(), rd.as_ref())? {
        return Ok((lo, d));
    }
    let re = point(e)?;
    *queries += 1;
    if oracle.compare(rd.as_ref(), re.as_ref())? {
        return Ok((c, e));
    }
    Ok((d, hi))
}

/// One halving step on angle `j` with the other angles held at `theta`.
pub fn shrink_interval<O: Oracle<[f64]> + ?Sized>(
    oracle: &mut O,
    s: &Sphere,
    theta: &[f64],
    j: usize,
    lo: f64,
    hi: f64,
) -> Result<(f64, f64)> {
    let mut scratch = theta.to_vec();
    let mut n = 0;
    shrink_with(
        oracle,
        lo,
        hi,
        |t| {
            scratch[j] = t;
            Ok(sphere_point(s, &scratch))
        },
        &mut n,
    )
}

pub fn lpme<O: Oracle<[f64]> + ?Sized>(cfg: &LpmeConfig, oracle: &mut O) -> Result<LpmeOutcome> {
    cfg.validate()?;
    let s = &cfg.sphere;
    let q = s.dim();
    let signs = detect_orthant(s, oracle)?;
    let mut queries = q;
    let intervals = orthant_intervals(&signs);
    let mut theta: Vec<f64> = intervals.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    for _ in 0..cfg.cycles {
        for (j, &(start, end)) in intervals.iter().enumerate() {
            let (mut lo, mut hi) = (start, end);
            while hi - lo > cfg.epsilon {
                let mut scratch = theta.clone();
                (lo, hi) = shrink_with(
                    oracle,
                    lo,
                    hi,
                    |t| {
                        scratch[j] = t;
                        Ok(sphere_point(s, &scratch))
                    },
                    &mut queries,
                )?;
            }
            theta[j] = 0.5 * (lo + hi);
        }
    }
    let angles = AngleVector::new(theta)?;
    Ok(LpmeOutcome { weights: weights_from_raw(angles.as_slice()), angles, queries })
}

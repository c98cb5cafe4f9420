//! Linear, quadratic and group-fair quadratic metrics over rates.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, l2, RateKind, RateVector};

const SYM_TOL: f64 = 1e-12;
const RESAMPLE_CAP: usize = 1000;

/// Rates of every group, in group order.
pub type GroupRateProfile = Vec<RateVector>;

/// Utility `<a, r> + 1/2 r^T B r`, higher is better.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMetric {
    pub a: Vec<f64>,
    pub b: DMatrix<f64>,
}

/// The same quadratic expanded around a base rate `o`: `d = a + B o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedQuadratic {
    pub d: Vec<f64>,
    pub b: DMatrix<f64>,
}

fn check_square(b: &DMatrix<f64>, q: usize) -> Result<()> {
    if b.nrows() != q || b.ncols() != q {
        return Err(Error::DimensionMismatch { expected: q, found: b.nrows().max(b.ncols()) });
    }
    Ok(())
}

fn check_symmetric(b: &DMatrix<f64>) -> Result<()> {
    let asym = (b - b.transpose()).abs().max();
    if asym > SYM_TOL * b.abs().max().max(1.0) {
        return Err(invalid(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

pub(crate) fn symmetrize(b: &DMatrix<f64>) -> DMatrix<f64> {
    (b + b.transpose()) * 0.5
}

fn check_len(r: &[f64], q: usize) -> Result<()> {
    if r.len() != q {
        return Err(Error::DimensionMismatch { expected: q, found: r.len() });
    }
    Ok(())
}

impl QuadraticMetric {
    pub fn new(a: Vec<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_square(&b, a.len())?;
        check_symmetric(&b)?;
        Ok(Self { a, b: symmetrize(&b) })
    }

    pub fn linear(a: Vec<f64>) -> Self {
        let q = a.len();
        Self { a, b: DMatrix::zeros(q, q) }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn eval(&self, r: &[f64]) -> Result<f64> {
        check_len(r, self.dim())?;
        let rv = DVector::from_column_slice(r);
        Ok(dot(&self.a, r) + 0.5 * rv.dot(&(&self.b * &rv)))
    }

    /// `a + B r`.
    pub fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let br = &self.b * DVector::from_column_slice(r);
        self.a.iter().zip(br.iter()).map(|(x, y)| x + y).collect()
    }

    /// `sqrt(|a|^2 + |B|_F^2)`.
    pub fn norm(&self) -> f64 {
        (dot(&self.a, &self.a) + self.b.norm_squared()).sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err(invalid("cannot normalize a zero metric"));
        }
        Ok(Self { a: self.a.iter().map(|x| x / n).collect(), b: &self.b / n })
    }

    pub fn shift(&self, o: &[f64]) -> Result<ShiftedQuadratic> {
        check_len(o, self.dim())?;
        Ok(ShiftedQuadratic { d: self.gradient(o), b: self.b.clone() })
    }

    /// Distance to another metric: `(|a - a'|_2, |B - B'|_F)`.
    pub fn error_to(&self, other: &QuadraticMetric) -> (f64, f64) {
        let da: Vec<f64> = self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect();
        (l2(&da), (&self.b - &other.b).norm())
    }
}

impl ShiftedQuadratic {
    /// `<d, r - o> + 1/2 (r - o)^T B (r - o)`; differs from the unshifted metric by a constant.
    pub fn eval(&self, r: &[f64], o: &[f64]) -> Result<f64> {
        check_len(r, self.d.len())?;
        check_len(o, self.d.len())?;
        let x = DVector::from_iterator(r.len(), r.iter().zip(o).map(|(a, b)| a - b));
        Ok(dot(&self.d, x.as_slice()) + 0.5 * x.dot(&(&self.b * &x)))
    }

    /// Recovers `a = d - B o`.
    pub fn unshift(&self, o: &[f64]) -> Result<QuadraticMetric> {
        check_len(o, self.d.len())?;
        let bo = &self.b * DVector::from_column_slice(o);
        let a = self.d.iter().zip(bo.iter()).map(|(d, x)| d - x).collect();
        QuadraticMetric::new(a, self.b.clone())
    }
}

pub fn eval_quadratic(m: &QuadraticMetric, r: &[f64]) -> Result<f64> {
    m.eval(r)
}

pub fn shift_quadratic(m: &QuadraticMetric, o: &[f64]) -> Result<ShiftedQuadratic> {
    m.shift(o)
}

/// Per-class prevalence of each group: `tau[g][i] = P(G = g | Y = i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub tau: Vec<Vec<f64>>,
}

impl GroupModel {
    pub fn new(tau: Vec<Vec<f64>>) -> Result<Self> {
        if tau.len() < 2 {
            return Err(invalid("need at least two groups"));
        }
        let q = tau[0].len();
        for t in &tau {
            check_len(t, q)?;
            if t.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(invalid("group prevalence outside [0, 1]"));
            }
        }
        for i in 0..q {
            let s: f64 = tau.iter().map(|t| t[i]).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("group prevalences for class {i} sum to {s}")));
            }
        }
        Ok(Self { tau })
    }

    /// Equal prevalence for every group.
    pub fn uniform(q: usize, m: usize) -> Self {
        Self { tau: vec![vec![1.0 / m as f64; q]; m] }
    }

    /// Per-class normalization of seeded uniform draws.
    pub fn random(q: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tau = vec![vec![0.0; q]; m];
        for i in 0..q {
            let draws: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = draws.iter().sum();
            for (g, x) in draws.iter().enumerate() {
                tau[g][i] = x / s;
            }
        }
        Self { tau }
    }

    pub fn groups(&self) -> usize {
        self.tau.len()
    }

    pub fn dim(&self) -> usize {
        self.tau[0].len()
    }

    /// `tau^sigma = sum_{g in sigma} tau^g`.
    pub fn tau_of(&self, sigma: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for &g in sigma {
            for (o, t) in out.iter_mut().zip(&self.tau[g]) {
                *o += t;
            }
        }
        out
    }

    /// Overall rate `sum_g tau^g * r^g`.
    pub fn overall(&self, gr: &[RateVector]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (t, r) in self.tau.iter().zip(gr) {
            for ((o, ti), ri) in out.iter_mut().zip(t).zip(r) {
                *o += ti * ri;
            }
        }
        out
    }
}

/// Cost `(1 - lambda) <a, 1 - r> + lambda/2 sum_{u<v} (r^u - r^v)^T B^{uv} (r^u - r^v)`,
/// lower is better. Groups are 0-based; `b[&(u, v)]` has `u < v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FairQuadraticMetric {
    pub a: Vec<f64>,
    pub b: BTreeMap<(usize, usize), DMatrix<f64>>,
    pub lambda: f64,
    pub m: usize,
}

/// All group pairs `(u, v)` with `u < v`, in lexicographic order.
pub fn group_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|u| (u + 1..m).map(move |v| (u, v))).collect()
}

impl FairQuadraticMetric {
    pub fn new(
        a: Vec<f64>,
        b: BTreeMap<(usize, usize), DMatrix<f64>>,
        lambda: f64,
        m: usize,
    ) -> Result<Self> {
        if m < 2 {
            return Err(invalid("need at least two groups"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid(format!("trade-off {lambda} outside [0, 1]")));
        }
        let keys: Vec<_> = b.keys().copied().collect();
        if keys != group_pairs(m) {
            return Err(invalid(format!("expected one matrix per group pair for {m} groups")));
        }
        let mut sym = BTreeMap::new();
        for (k, mat) in b {
            check_square(&mat, a.len())?;
            check_symmetric(&mat)?;
            sym.insert(k, symmetrize(&mat));
        }
        Ok(Self { a, b: sym, lambda, m })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn pair(&self, u: usize, v: usize) -> &DMatrix<f64> {
        &self.b[&(u.min(v), u.max(v))]
    }

    /// `1/2 sum |B^{uv}|_F`.
    pub fn violation_scale(&self) -> f64 {
        0.5 * self.b.values().map(|m| m.norm()).sum::<f64>()
    }

    /// Scales `a` to unit norm and the violation matrices to unit `violation_scale`.
    pub fn normalized(&self) -> Result<Self> {
        let na = l2(&self.a);
        let nb = self.violation_scale();
        if !(na > 0.0) || !(nb > 0.0) {
            return Err(invalid("cannot normalize a metric with a zero part"));
        }
        Ok(Self {
            a: self.a.iter().map(|x| x / na).collect(),
            b: self.b.iter().map(|(k, m)| (*k, m / nb)).collect(),
            lambda: self.lambda,
            m: self.m,
        })
    }

    pub fn cost(&self, gr: &[RateVector], gm: &GroupModel) -> Result<f64> {
        if gr.len() != self.m || gm.groups() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, found: gr.len() });
        }
        for r in gr {
            check_len(r, self.dim())?;
        }
        check_len(&gm.tau[0], self.dim())?;
        let overall = gm.overall(gr);
        let predictive: f64 = self.a.iter().zip(&overall).map(|(a, r)| a * (1.0 - r)).sum();
        let mut violation = 0.0;
        for (&(u, v), mat) in &self.b {
            let diff = DVector::from_iterator(self.dim(), gr[u].iter().zip(&gr[v]).map(|(x, y)| x - y));
            violation += diff.dot(&(mat * &diff));
        }
        Ok((1.0 - self.lambda) * predictive + 0.5 * self.lambda * violation)
    }

    /// `W^sigma = sum_{u in sigma, v not in sigma} B^{uv}`.
    pub fn cross_weight(&self, sigma: &[usize]) -> DMatrix<f64> {
        let q = self.dim();
        let mut w = DMatrix::zeros(q, q);
        for (&(u, v), mat) in &self.b {
            if sigma.contains(&u) != sigma.contains(&v) {
                w += mat;
            }
        }
        w
    }

    /// The utility seen when groups in `sigma` share rate `s` and the rest sit at `o`,
    /// up to an additive constant.
    pub fn restricted_quadratic(&self, sigma: &[usize], gm: &GroupModel) -> ShiftedQuadratic {
        let tau = gm.tau_of(sigma);
        let d = self.a.iter().zip(&tau).map(|(a, t)| (1.0 - self.lambda) * t * a).collect();
        ShiftedQuadratic { d, b: -self.cross_weight(sigma) * self.lambda }
    }

    /// Errors to another fair metric: `(|a - a'|, sum |B^{uv} - B'^{uv}|_F, |lambda - lambda'|)`.
    pub fn error_to(&self, other: &FairQuadraticMetric) -> (f64, f64, f64) {
        let da: Vec<f64> = self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect();
        let db = self.b.iter().map(|(k, m)| (m - &other.b[k]).norm()).sum();
        (l2(&da), db, (self.lambda - other.lambda).abs())
    }
}

pub fn eval_fair(fm: &FairQuadraticMetric, gr: &[RateVector], gm: &GroupModel) -> Result<f64> {
    fm.cost(gr, gm)
}

/// Either metric family, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Quadratic(QuadraticMetric),
    Fair(FairQuadraticMetric, Option<GroupModel>),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum MetricFile {
    Quadratic {
        a: Vec<f64>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    Fair {
        a: Vec<f64>,
        #[serde(rename = "B")]
        b: BTreeMap<String, Vec<Vec<f64>>>,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<Vec<Vec<f64>>>,
    },
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(invalid("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_pair(key: &str) -> Result<(usize, usize)> {
    let bad = || invalid(format!("bad group pair key {key:?}"));
    let (u, v) = key.split_once(',').ok_or_else(bad)?;
    let u: usize = u.trim().parse().map_err(|_| bad())?;
    let v: usize = v.trim().parse().map_err(|_| bad())?;
    if u == 0 || v <= u {
        return Err(bad());
    }
    Ok((u - 1, v - 1))
}

impl Metric {
    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            Metric::Quadratic(m) => MetricFile::Quadratic { a: m.a.clone(), b: matrix_rows(&m.b) },
            Metric::Fair(m, gm) => MetricFile::Fair {
                a: m.a.clone(),
                b: m.b.iter().map(|(&(u, v), b)| (format!("{},{}", u + 1, v + 1), matrix_rows(b))).collect(),
                lambda: m.lambda,
                tau: gm.as_ref().map(|g| g.tau.clone()),
            },
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        match serde_json::from_str(text)? {
            MetricFile::Quadratic { a, b } => {
                Ok(Metric::Quadratic(QuadraticMetric::new(a, matrix_from_rows(&b)?)?))
            }
            MetricFile::Fair { a, b, lambda, tau } => {
                let mut mats = BTreeMap::new();
                for (k, rows) in &b {
                    mats.insert(parse_pair(k)?, matrix_from_rows(rows)?);
                }
                let m = mats.keys().map(|&(_, v)| v + 1).max().unwrap_or(0);
                let gm = tau.map(GroupModel::new).transpose()?;
                Ok(Metric::Fair(FairQuadraticMetric::new(a, mats, lambda, m)?, gm))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NamedMetric {
    /// Quadratic mean of rates.
    QMean,
    /// Squared distance between per-class coverage and a target distribution.
    Coverage(Vec<f64>),
    /// Equal opportunity: first-rate discrepancy.
    EOpp,
    /// Equalized odds: every rate's discrepancy.
    EO,
    /// Balance for the negative class: second-rate discrepancy.
    BN,
    /// Error-rate balance: first two rates' discrepancies.
    EB,
}

fn pair_map(m: usize, mat: &DMatrix<f64>) -> BTreeMap<(usize, usize), DMatrix<f64>> {
    group_pairs(m).into_iter().map(|p| (p, mat.clone())).collect()
}

/// Coverage map `cov = 1 + L r` over off-diagonal general rates.
fn coverage_operator(k: usize) -> DMatrix<f64> {
    let q = k * k - k;
    let idx = |row: usize, j: usize| row * (k - 1) + j;
    let mut l = DMatrix::zeros(k, q);
    for i in 0..k {
        for j in 0..k - 1 {
            l[(i, idx(i, j))] -= 1.0;
        }
        for j in 0..k {
            if j > i {
                l[(i, idx(j, i))] += 1.0;
            } else if j < i {
                l[(i, idx(j, i - 1))] += 1.0;
            }
        }
    }
    l
}

/// Builds a named metric. Fairness kinds need `groups` and use uniform predictive
/// weights with trade-off `lambda`.
pub fn make_named_metric(
    kind: &NamedMetric,
    space: RateKind,
    groups: Option<usize>,
    lambda: f64,
) -> Result<Metric> {
    let k = space.classes();
    let q = space.dim();
    if k < 2 {
        return Err(invalid("need at least two classes"));
    }
    let fair = |diag: Vec<f64>| -> Result<Metric> {
        let m = groups.ok_or_else(|| invalid("fairness metrics need a group count"))?;
        let mat = DMatrix::from_diagonal(&DVector::from_vec(diag));
        let a = vec![1.0; q];
        let fm = FairQuadraticMetric::new(a, pair_map(m, &mat), lambda, m)?.normalized()?;
        Ok(Metric::Fair(fm, None))
    };
    let indicator = |idx: &[usize]| -> Result<Vec<f64>> {
        if idx.iter().any(|&i| i >= q) {
            return Err(invalid(format!("metric needs at least {} rates", idx.iter().max().unwrap() + 1)));
        }
        Ok((0..q).map(|i| if idx.contains(&i) { 1.0 } else { 0.0 }).collect())
    };
    match kind {
        NamedMetric::QMean => {
            let c = 2.0 / k as f64;
            let m = QuadraticMetric::new(vec![c; q], DMatrix::identity(q, q) * -c)?;
            Ok(Metric::Quadratic(m.normalized()?))
        }
        NamedMetric::Coverage(pi) => {
            if !matches!(space, RateKind::General(_)) {
                return Err(invalid("coverage needs general rates"));
            }
            check_len(pi, k)?;
            let l = coverage_operator(k);
            let gap = DVector::from_iterator(k, pi.iter().map(|p| 1.0 - p));
            let a = (l.transpose() * gap * -2.0).as_slice().to_vec();
            let b = l.transpose() * &l * -2.0;
            Ok(Metric::Quadratic(QuadraticMetric::new(a, b)?.normalized()?))
        }
        NamedMetric::EOpp => fair(indicator(&[0])?),
        NamedMetric::EO => fair(vec![1.0; q]),
        NamedMetric::BN => fair(indicator(&[1])?),
        NamedMetric::EB => fair(indicator(&[0, 1])?),
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn gram(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
    let m = DMatrix::from_vec(q, q, normal_vec(rng, q * q));
    symmetrize(&(&m * m.transpose()))
}

/// Seeded utility metric: unit-direction `a`, NSD `B`, each carrying half the
/// joint norm. Resamples until some `|d_i| = |(a + B o)_i|` reaches `floor`.
pub fn random_quadratic(space: RateKind, seed: u64, floor: f64) -> Result<QuadraticMetric> {
    let q = space.dim();
    let o = vec![1.0 / space.classes() as f64; q];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for _ in 0..RESAMPLE_CAP {
        let a = normal_vec(&mut rng, q);
        let na = l2(&a);
        let g = gram(&mut rng, q);
        let ng = g.norm();
        if na == 0.0 || ng == 0.0 {
            continue;
        }
        let m = QuadraticMetric {
            a: a.iter().map(|x| half * x / na).collect(),
            b: g * (-half / ng),
        };
        if m.gradient(&o).iter().any(|d| d.abs() >= floor) {
            return Ok(m);
        }
    }
    Err(invalid(format!("no metric met the regularity floor {floor} in {RESAMPLE_CAP} draws")))
}

/// Seeded fairness metric: nonnegative unit `a`, PSD violation matrices with
/// `1/2 sum |B^{uv}|_F = 1`.
pub fn random_fair(space: RateKind, m: usize, lambda: f64, seed: u64, floor: f64) -> Result<FairQuadraticMetric> {
    let q = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESAMPLE_CAP {
        let a: Vec<f64> = normal_vec(&mut rng, q).iter().map(|x| x.abs()).collect();
        let b = group_pairs(m).into_iter().map(|p| (p, gram(&mut rng, q))).collect();
        let Ok(fm) = FairQuadraticMetric::new(a, b, lambda, m).and_then(|f| f.normalized()) else {
            continue;
        };
        if fm.a.iter().any(|x| x.abs() >= floor) {
            return Ok(fm);
        }
    }
    Err(invalid(format!("no metric met the regularity floor {floor} in {RESAMPLE_CAP} draws")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn quad(a: Vec<f64>, b: &[f64]) -> QuadraticMetric {
        let q = a.len();
        QuadraticMetric::new(a, DMatrix::from_row_slice(q, q, b)).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_abs_diff_eq!(quad(vec![1.0, 0.0], &[0.0; 4]).eval(&[0.7, 0.2]).unwrap(), 0.7);
        let m = quad(vec![0.0, 0.0], &[-1.0, 0.0, 0.0, -1.0]);
        assert_abs_diff_eq!(m.eval(&[0.5, 0.5]).unwrap(), -0.25);
        assert!(m.eval(&[0.5]).is_err());
        // Q-mean for k = 2 before normalization: a = 1, B = -I, and the constant cancels.
        let qm = quad(vec![1.0, 1.0], &[-1.0, 0.0, 0.0, -1.0]);
        assert_abs_diff_eq!(qm.eval(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn shift_examples() {
        let s = quad(vec![1.0, 0.0], &[0.0; 4]).shift(&[0.5, 0.5]).unwrap();
        assert_eq!(s.d, vec![1.0, 0.0]);
        let m = quad(vec![0.0, 0.0], &[-1.0, 0.0, 0.0, -1.0]);
        let s = m.shift(&[0.5, 0.5]).unwrap();
        assert_eq!(s.d, vec![-0.5, -0.5]);
        assert_eq!(s.unshift(&[0.5, 0.5]).unwrap(), m);
    }

    #[test]
    fn asymmetric_rejected() {
        assert!(QuadraticMetric::new(vec![0.0; 2], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])).is_err());
    }

    fn two_group(lambda: f64, b: DMatrix<f64>, a: Vec<f64>) -> FairQuadraticMetric {
        FairQuadraticMetric::new(a, pair_map(2, &b), lambda, 2).unwrap()
    }

    #[test]
    fn fair_examples() {
        let gm = GroupModel::uniform(2, 2);
        let f = two_group(1.0, DMatrix::identity(2, 2), vec![1.0, 0.0]);
        assert_abs_diff_eq!(f.cost(&[vec![0.3, 0.6], vec![0.3, 0.6]], &gm).unwrap(), 0.0);
        let f = two_group(0.0, DMatrix::identity(2, 2), vec![1.0, 0.0]);
        assert_abs_diff_eq!(f.cost(&[vec![1.0, 1.0], vec![1.0, 1.0]], &gm).unwrap(), 0.0);
        let f = two_group(1.0, DMatrix::identity(2, 2) * 2f64.sqrt(), vec![1.0, 0.0]);
        assert_abs_diff_eq!(
            f.cost(&[vec![1.0, 0.0], vec![0.0, 0.0]], &gm).unwrap(),
            0.5 * 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(f.cost(&[vec![1.0, 0.0]], &gm).is_err());
    }

    #[test]
    fn restricted_quadratic_matches_profile_cost() {
        let gm = GroupModel::random(3, 3, 5);
        let f = random_fair(RateKind::Diagonal(3), 3, 0.4, 9, 1e-2).unwrap();
        let o = vec![1.0 / 3.0; 3];
        for sigma in [vec![0], vec![1, 2], vec![2]] {
            let rq = f.restricted_quadratic(&sigma, &gm);
            let profile = |s: &[f64]| -> Vec<RateVector> {
                (0..3).map(|g| if sigma.contains(&g) { s.to_vec() } else { o.clone() }).collect()
            };
            let base = -f.cost(&profile(&o), &gm).unwrap();
            for s in [[0.2, 0.5, 0.4], [0.4, 0.3, 0.3], [0.35, 0.35, 0.1]] {
                let want = -f.cost(&profile(&s), &gm).unwrap() - base;
                assert_abs_diff_eq!(rq.eval(&s, &o).unwrap(), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn named_qmean() {
        let Metric::Quadratic(m) = make_named_metric(&NamedMetric::QMean, RateKind::Diagonal(2), None, 0.5).unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(m.a.as_slice(), [0.5, 0.5].as_slice(), epsilon = 1e-15);
        assert_abs_diff_eq!(m.b, DMatrix::identity(2, 2) * -0.5, epsilon = 1e-15);
    }

    #[test]
    fn named_fairness() {
        let Metric::Fair(eo, _) = make_named_metric(&NamedMetric::EO, RateKind::Diagonal(2), Some(2), 0.5).unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(eo.pair(0, 1).clone(), DMatrix::identity(2, 2) * 2f64.sqrt(), epsilon = 1e-12);
        let Metric::Fair(eopp, _) = make_named_metric(&NamedMetric::EOpp, RateKind::Diagonal(2), Some(2), 0.5).unwrap() else {
            panic!()
        };
        let b = eopp.pair(0, 1);
        assert!(b[(0, 0)] > 0.0);
        assert_eq!(b.iter().filter(|x| **x != 0.0).count(), 1);
        // Unnormalized EOpp already has unit violation scale: 2 / C(m, 2) per pair.
        let Metric::Fair(eopp3, _) = make_named_metric(&NamedMetric::EOpp, RateKind::Diagonal(2), Some(3), 0.5).unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(eopp3.pair(1, 2)[(0, 0)], 2.0 / 3.0, epsilon = 1e-12);
        assert!(make_named_metric(&NamedMetric::EO, RateKind::Diagonal(2), None, 0.5).is_err());
    }

    #[test]
    fn named_coverage() {
        assert!(make_named_metric(&NamedMetric::Coverage(vec![0.5, 0.5]), RateKind::Diagonal(2), None, 0.5).is_err());
        let pi = vec![0.2, 0.3, 0.5];
        let Metric::Quadratic(m) =
            make_named_metric(&NamedMetric::Coverage(pi.clone()), RateKind::General(3), None, 0.5).unwrap()
        else {
            panic!()
        };
        // Compare against the coverage formula written out directly.
        let k = 3;
        let cov = |r: &[f64], i: usize| -> f64 {
            let at = |row: usize, j: usize| r[row * (k - 1) + j];
            let mut c = 1.0;
            for j in 0..k - 1 {
                c -= at(i, j);
            }
            for j in i + 1..k {
                c += at(j, i);
            }
            for j in 0..i {
                c += at(j, i - 1);
            }
            c
        };
        let direct = |r: &[f64]| -(0..k).map(|i| (cov(r, i) - pi[i]).powi(2)).sum::<f64>();
        let scale = {
            let l = coverage_operator(k);
            let gap = DVector::from_iterator(k, pi.iter().map(|p| 1.0 - p));
            let a = l.transpose() * gap * -2.0;
            (a.norm_squared() + (l.transpose() * &l * -2.0).norm_squared()).sqrt()
        };
        let r0 = vec![0.1; 6];
        let r1 = vec![0.05, 0.2, 0.1, 0.0, 0.3, 0.15];
        let want = (direct(&r1) - direct(&r0)) / scale;
        let got = m.eval(&r1).unwrap() - m.eval(&r0).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn metric_json_round_trip() {
        let m = Metric::Quadratic(random_quadratic(RateKind::Diagonal(3), 1, 1e-2).unwrap());
        let text = m.to_json().unwrap();
        assert!(text.contains("\"type\": \"quadratic\""));
        assert_eq!(Metric::from_json(&text).unwrap(), m);
        let f = random_fair(RateKind::Diagonal(2), 3, 0.3, 2, 1e-2).unwrap();
        let fm = Metric::Fair(f, Some(GroupModel::random(2, 3, 4)));
        let text = fm.to_json().unwrap();
        assert!(text.contains("\"1,2\"") && text.contains("\"2,3\""));
        let back = Metric::from_json(&text).unwrap();
        let (Metric::Fair(x, gx), Metric::Fair(y, gy)) = (&back, &fm) else { panic!() };
        assert_eq!(x.b.keys().collect::<Vec<_>>(), y.b.keys().collect::<Vec<_>>());
        assert_abs_diff_eq!(x.lambda, y.lambda);
        assert_eq!(gx, gy);
        let parsed = Metric::from_json(r#"{"type":"fair","a":[1,0],"B":{"1,2":[[1,0],[0,1]]},"lambda":0.3,"tau":[[0.5,0.5],[0.5,0.5]]}"#).unwrap();
        assert!(matches!(parsed, Metric::Fair(ref f, Some(_)) if f.m == 2));
    }

    #[test]
    fn random_metrics_deterministic_and_regular() {
        for seed in 0..50 {
            let m = random_quadratic(RateKind::Diagonal(4), seed, 1e-2).unwrap();
            assert_eq!(m, random_quadratic(RateKind::Diagonal(4), seed, 1e-2).unwrap());
            assert_abs_diff_eq!(m.norm(), 1.0, epsilon = 1e-9);
            assert!(m.gradient(&[0.25; 4]).iter().any(|d| d.abs() >= 1e-2));
            let eig = m.b.clone().symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e <= 1e-10));
            let f = random_fair(RateKind::Diagonal(3), 3, 0.5, seed, 1e-2).unwrap();
            assert_abs_diff_eq!(l2(&f.a), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(f.violation_scale(), 1.0, epsilon = 1e-9);
            assert!(f.a.iter().all(|&x| x >= 0.0));
            for b in f.b.values() {
                assert!(b.clone().symmetric_eigenvalues().iter().all(|&e| e >= -1e-10));
            }
        }
    }

    #[test]
    fn group_model_validation() {
        assert!(GroupModel::new(vec![vec![0.5, 0.4], vec![0.5, 0.6]]).is_ok());
        assert!(GroupModel::new(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        let gm = GroupModel::random(4, 3, 11);
        assert!(GroupModel::new(gm.tau.clone()).is_ok());
    }

    proptest! {
        #[test]
        fn symmetric_part_gives_same_value(seed in 0u64..1000, r in proptest::collection::vec(0.0f64..1.0, 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = DMatrix::from_vec(3, 3, normal_vec(&mut rng, 9));
            let a = normal_vec(&mut rng, 3);
            let rv = DVector::from_column_slice(&r);
            let asym = dot(&a, &r) + 0.5 * rv.dot(&(&raw * &rv));
            let m = QuadraticMetric::new(a.clone(), symmetrize(&raw)).unwrap();
            prop_assert!((m.eval(&r).unwrap() - asym).abs() < 1e-12);
        }

        #[test]
        fn scaling_preserves_argmax(seed in 0u64..1000, t in 0.01f64..100.0) {
            let m = random_quadratic(RateKind::Diagonal(3), seed, 0.0).unwrap();
            let scaled = QuadraticMetric { a: m.a.iter().map(|x| x * t).collect(), b: &m.b * t };
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let best = |mm: &QuadraticMetric| {
                (0..pts.len()).max_by(|&i, &j| mm.eval(&pts[i]).unwrap().total_cmp(&mm.eval(&pts[j]).unwrap())).unwrap()
            };
            prop_assert_eq!(best(&m), best(&scaled));
            let d0 = m.eval(&pts[0]).unwrap() - m.eval(&pts[1]).unwrap();
            let d1 = scaled.eval(&pts[0]).unwrap() - scaled.eval(&pts[1]).unwrap();
            prop_assert!((d1 - t * d0).abs() < 1e-9 * t.max(1.0));
        }

        #[test]
        fn shift_differs_by_constant(seed in 0u64..500, r in proptest::collection::vec(0.0f64..1.0, 3), s in proptest::collection::vec(0.0f64..1.0, 3)) {
            let m = random_quadratic(RateKind::Diagonal(3), seed, 0.0).unwrap();
            let o = [1.0 / 3.0; 3];
            let sh = m.shift(&o).unwrap();
            let lhs = m.eval(&r).unwrap() - m.eval(&s).unwrap();
            let rhs = sh.eval(&r, &o).unwrap() - sh.eval(&s, &o).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn fair_violation_zero_iff_equal(seed in 0u64..300, r in proptest::collection::vec(0.0f64..1.0, 2), gap in 1e-3f64..0.5) {
            let f = random_fair(RateKind::Diagonal(2), 2, 1.0, seed, 0.0).unwrap();
            let gm = GroupModel::uniform(2, 2);
            prop_assert!(f.cost(&[r.clone(), r.clone()], &gm).unwrap().abs() < 1e-15);
            let mut other = r.clone();
            other[0] = if r[0] > 0.5 { r[0] - gap } else { r[0] + gap };
            prop_assert!(f.cost(&[r, other], &gm).unwrap() > 0.0);
        }
    }
}

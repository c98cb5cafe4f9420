//! Group-fair quadratic elicitation: one QPME run per group subset against the
//! restricted oracle, a membership system that separates the per-pair
//! violation matrices, and a standalone search for the trade-off.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{l2, normalized, RateVector, Sphere};
use crate::lpme::shrink_with;
use crate::metrics::{group_pairs, FairQuadraticMetric, GroupModel};
use crate::oracle::{restrict_fair, Oracle};
use crate::qpme::{qpme, QpmeConfig};

/// Largest negative predictive weight (after normalization) attributed to search noise.
pub const COST_SIGN_SLACK: f64 = 0.05;

/// Group subsets and their membership matrix: `xi[(s, p)] = 1` iff exactly one
/// group of pair `p` lies in subset `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSet {
    pub subsets: Vec<Vec<usize>>,
    pub pairs: Vec<(usize, usize)>,
    pub xi: DMatrix<f64>,
}

fn membership_row(sigma: &[usize], pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(u, v)| if sigma.contains(&u) != sigma.contains(&v) { 1.0 } else { 0.0 })
        .collect()
}

fn rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    m.svd(false, false).rank(1e-9)
}

impl PartitionSet {
    /// Builds the membership matrix for a given family; it must be square and invertible.
    pub fn from_subsets(m: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        let pairs = group_pairs(m);
        if subsets.len() != pairs.len() {
            return Err(Error::Singular(format!(
                "{} subsets for {} group pairs",
                subsets.len(),
                pairs.len()
            )));
        }
        let rows: Vec<Vec<f64>> = subsets.iter().map(|s| membership_row(s, &pairs)).collect();
        if rank(&rows) < pairs.len() {
            return Err(Error::Singular("membership matrix is rank deficient".into()));
        }
        let n = pairs.len();
        let xi = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(Self { subsets, pairs, xi })
    }

    /// `W~^sigma` for each subset, stacked in subset order, mapped back to per-pair matrices.
    pub fn separate(&self, cross: &[DMatrix<f64>]) -> Result<BTreeMap<(usize, usize), DMatrix<f64>>> {
        let n = self.pairs.len();
        if cross.len() != n {
            return Err(Error::Singular(format!("{} cross terms for {n} subsets", cross.len())));
        }
        let q = cross[0].nrows();
        let lu = self.xi.clone().lu();
        let rhs = DMatrix::from_fn(n, q * q, |s, e| cross[s][(e / q, e % q)]);
        let sol = lu.solve(&rhs).ok_or_else(|| Error::Singular("membership matrix".into()))?;
        Ok(self
            .pairs
            .iter()
            .enumerate()
            .map(|(p, &pair)| (pair, DMatrix::from_fn(q, q, |i, j| sol[(p, i * q + j)])))
            .collect())
    }
}

/// Proper non-empty subsets by size then lexicographically, kept greedily while they
/// raise the rank, until there is one per group pair.
pub fn choose_partitions(m: usize) -> Result<PartitionSet> {
    if m < 2 {
        return Err(crate::error::invalid("need at least two groups"));
    }
    let pairs = group_pairs(m);
    let mut chosen: Vec<Vec<usize>> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    'outer: for size in 1..m {
        for sigma in combinations(m, size) {
            let row = membership_row(&sigma, &pairs);
            rows.push(row);
            if rank(&rows) > chosen.len() {
                chosen.push(sigma);
                if chosen.len() == pairs.len() {
                    break 'outer;
                }
            } else {
                rows.pop();
            }
        }
    }
    PartitionSet::from_subsets(m, chosen)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairConfig {
    pub qpme: QpmeConfig,
    /// Also run the trade-off search as an independent estimate of lambda.
    pub lambda_check: bool,
}

impl FairConfig {
    pub fn new(qpme: QpmeConfig) -> Self {
        Self { qpme, lambda_check: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairOutcome {
    /// Lambda here comes from the violation-matrix normalization.
    pub metric: FairQuadraticMetric,
    /// Trade-off from the standalone search, when requested.
    pub lambda_search: Option<f64>,
    pub partitions: PartitionSet,
    pub queries: usize,
}

/// `a = normalize(d ./ tau)`, tolerating small negative entries from search noise.
fn predictive_weights(d: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = d.iter().zip(tau).map(|(d, t)| d / t).collect();
    let unit = normalized(&raw).ok_or_else(|| crate::error::invalid("zero slope at the uniform rate"))?;
    if let Some((index, &value)) = unit.iter().enumerate().find(|(_, &x)| x < -COST_SIGN_SLACK) {
        return Err(Error::CostSign { index, value });
    }
    let clamped: Vec<f64> = unit.iter().map(|x| x.max(0.0)).collect();
    normalized(&clamped).ok_or_else(|| crate::error::invalid("all predictive weights vanished"))
}

pub fn fair_qpme<O: Oracle<[RateVector]> + ?Sized>(
    cfg: &FairConfig,
    oracle: &mut O,
    gm: &GroupModel,
) -> Result<FairOutcome> {
    let qcfg = &cfg.qpme;
    let m = gm.groups();
    if gm.dim() != qcfg.dim() {
        return Err(Error::DimensionMismatch { expected: qcfg.dim(), found: gm.dim() });
    }
    let parts = choose_partitions(m)?;
    let o = qcfg.sphere.center.clone();
    let mut queries = 0;
    let mut a_hat: Option<Vec<f64>> = None;
    let mut cross = Vec::with_capacity(parts.subsets.len());
    for sigma in &parts.subsets {
        let mut restricted = restrict_fair(&mut *oracle, sigma, m, o.clone())?;
        let out = qpme(qcfg, &mut restricted)?;
        queries += out.queries;
        let tau = gm.tau_of(sigma);
        let a = match &a_hat {
            Some(a) => a.clone(),
            None => a_hat.insert(predictive_weights(&out.shifted.d, &tau)?).clone(),
        };
        let scaled: Vec<f64> = a.iter().zip(&tau).map(|(a, t)| a * t).collect();
        let t = l2(&out.shifted.d) / l2(&scaled);
        cross.push(-&out.shifted.b / t);
    }
    let tilde = parts.separate(&cross)?;
    let total = 0.5 * tilde.values().map(|b| b.norm()).sum::<f64>();
    if !(total > 0.0) {
        return Err(Error::Regularity { ratio: "1/2 sum |B~|".into(), value: total, threshold: 0.0 });
    }
    let b = tilde.iter().map(|(k, v)| (*k, crate::metrics::symmetrize(&(v / total)))).collect();
    let a = a_hat.expect("at least one partition");
    let metric = FairQuadraticMetric::new(a, b, total / (1.0 + total), m)?;

    let lambda_search = if cfg.lambda_check {
        let (lam, n) = elicit_lambda(qcfg, oracle, &metric, gm)?;
        queries += n;
        Some(lam)
    } else {
        None
    };
    Ok(FairOutcome { metric, lambda_search, partitions: parts, queries })
}

/// Utility gradient for trade-off `lambda` when group 0 sits at `s` and the rest at `o`.
fn tradeoff_gradient(lambda: f64, tau1: &[f64], a: &[f64], w: &DMatrix<f64>, s: &[f64], o: &[f64]) -> Vec<f64> {
    let offset = nalgebra::DVector::from_iterator(s.len(), s.iter().zip(o).map(|(s, o)| s - o));
    let pull = w * offset;
    tau1.iter()
        .zip(a)
        .zip(pull.iter())
        .map(|((t, a), p)| (1.0 - lambda) * t * a - lambda * p)
        .collect()
}

/// Maximizer of the model utility over the small sphere, found by iterating
/// `s = z + radius * normalize(grad(s))` from the linearization at the center.
fn tradeoff_candidate(
    lambda: f64,
    small: &Sphere,
    tau1: &[f64],
    a: &[f64],
    w: &DMatrix<f64>,
    o: &[f64],
) -> Result<RateVector> {
    let mut s = small.center.clone();
    for _ in 0..MAX_CANDIDATE_STEPS {
        let mut g = tradeoff_gradient(lambda, tau1, a, w, &s, o);
        if l2(&g) == 0.0 {
            g = tradeoff_gradient((lambda + 1e-6).min(1.0), tau1, a, w, &s, o);
        }
        let dir = normalized(&g).ok_or(Error::FlatGradient)?;
        let next = small.point(&dir, small.radius);
        let step = next.iter().zip(&s).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        s = next;
        if step < 1e-13 {
            break;
        }
    }
    Ok(s)
}

const MAX_CANDIDATE_STEPS: usize = 100;

/// Searches the trade-off alone, given predictive weights and violation matrices.
/// Queries profiles `(s, o, ..., o)` with `s` on the small sphere around
/// `o + delta e_1`. Returns the estimate and the number of queries.
pub fn elicit_lambda<O: Oracle<[RateVector]> + ?Sized>(
    cfg: &QpmeConfig,
    oracle: &mut O,
    known: &FairQuadraticMetric,
    gm: &GroupModel,
) -> Result<(f64, usize)> {
    cfg.validate()?;
    let m = gm.groups();
    let o = cfg.sphere.center.clone();
    let mut z1 = o.clone();
    z1[0] += cfg.delta();
    let small = Sphere { center: z1, radius: cfg.inner_radius };
    let w = known.cross_weight(&[0]);
    let tau1 = &gm.tau[0];
    let profile = |lambda: f64| -> Result<Vec<RateVector>> {
        let s = tradeoff_candidate(lambda, &small, tau1, &known.a, &w, &o)?;
        Ok(std::iter::once(s).chain(std::iter::repeat_n(o.clone(), m - 1)).collect())
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut queries = 0;
    while hi - lo > cfg.epsilon {
        (lo, hi) = shrink_with(oracle, lo, hi, &profile, &mut queries)?;
    }
    Ok((0.5 * (lo + hi), queries))
}

//! Simulated-oracle studies: batched elicitation trials, the equal-weights
//! baseline, ranking agreement over classifier pools, and the match fraction.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fair::{fair_qpme, FairConfig};
use crate::geometry::{l2, RateKind, RateVector, Sphere};
use crate::lpme::{lpme, LpmeConfig};
use crate::metrics::{
    make_named_metric, random_fair, random_quadratic, FairQuadraticMetric, GroupModel, Metric, NamedMetric,
    QuadraticMetric,
};
use crate::oracle::{FairPreference, NoiseMode, Oracle, SimulatedOracle, Utility};
use crate::qpme::{qpme, QpmeConfig};

/// Size of the classifier pools ranked in the ranking study.
pub const POOL_SIZE: usize = 80;

/// Offset between a trial's metric seed and its group-prevalence seed.
const GROUP_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Linear,
    Quadratic,
    Fair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialConfig {
    pub mode: Mode,
    pub space: RateKind,
    /// Number of groups; fair mode only.
    pub groups: usize,
    pub trials: usize,
    pub epsilon: f64,
    pub rho: f64,
    pub varrho: f64,
    pub noise: f64,
    pub noise_mode: NoiseMode,
    /// Fixed trade-off for fair trials; drawn uniformly from [0.1, 0.9] when absent.
    pub lambda: Option<f64>,
    pub lambda_check: bool,
    /// Regularity floor for the generated metrics; zero disables resampling.
    pub floor: f64,
    /// Trial `i` uses seed `seed + i`.
    pub seed: u64,
}

impl TrialConfig {
    pub fn new(mode: Mode, space: RateKind) -> Self {
        Self {
            mode,
            space,
            groups: 2,
            trials: 100,
            epsilon: 1e-2,
            rho: 0.2,
            varrho: 0.02,
            noise: 0.0,
            noise_mode: NoiseMode::Flip,
            lambda: None,
            lambda_check: false,
            floor: 1e-2,
            seed: 0,
        }
    }

    fn sphere(&self) -> Result<Sphere> {
        let k = self.space.classes();
        if k < 2 {
            return Err(invalid("need at least two classes"));
        }
        Sphere::new(vec![1.0 / k as f64; self.space.dim()], self.rho)
    }

    fn qpme_config(&self) -> Result<QpmeConfig> {
        QpmeConfig::with_inner_radius(self.sphere()?, self.varrho, self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::Linear => LpmeConfig::new(self.sphere()?, self.epsilon).map(|_| ()),
            Mode::Quadratic => self.qpme_config().map(|_| ()),
            Mode::Fair => {
                if self.groups < 2 {
                    return Err(invalid("fair trials need at least two groups"));
                }
                if let Some(l) = self.lambda {
                    if !(0.0..=1.0).contains(&l) {
                        return Err(invalid(format!("trade-off {l} outside [0, 1]")));
                    }
                }
                self.qpme_config().map(|_| ())
            }
        }
    }
}

/// One elicitation. Errors are `None` when the trial failed or the quantity does not apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub mode: Mode,
    pub k: usize,
    pub q: usize,
    pub m: Option<usize>,
    pub epsilon: f64,
    pub noise: f64,
    pub floor: f64,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub queries: Option<usize>,
    pub err_a: Option<f64>,
    pub err_b: Option<f64>,
    pub err_lambda: Option<f64>,
    pub err_lambda_search: Option<f64>,
    pub baseline_err_a: Option<f64>,
    pub baseline_err_b: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub config: TrialConfig,
    pub records: Vec<TrialRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl TrialReport {
    pub fn succeeded(&self) -> usize {
        self.records.iter().filter(|r| r.failure.is_none()).count()
    }

    pub fn failures(&self) -> usize {
        self.records.len() - self.succeeded()
    }

    /// Mean over successful trials of the selected field.
    pub fn mean_of(&self, field: impl Fn(&TrialRecord) -> Option<f64>) -> Option<f64> {
        mean(self.records.iter().filter_map(field))
    }

    pub fn mean_queries(&self) -> Option<f64> {
        self.mean_of(|r| r.queries.map(|q| q as f64))
    }

    pub fn mean_err_a(&self) -> Option<f64> {
        self.mean_of(|r| r.err_a)
    }

    pub fn mean_err_b(&self) -> Option<f64> {
        self.mean_of(|r| r.err_b)
    }
}

/// Seeded unit linear metric.
pub fn random_linear(q: usize, seed: u64) -> QuadraticMetric {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let n = l2(&a);
        if n > 0.0 {
            return QuadraticMetric::linear(a.iter().map(|x| x / n).collect());
        }
    }
}

/// Equal coefficients throughout: `a` proportional to ones, `B` to minus the
/// all-ones matrix, jointly normalized.
pub fn baseline_equal_weights(space: RateKind) -> Result<QuadraticMetric> {
    if space.classes() < 2 {
        return Err(invalid("need at least two classes"));
    }
    let q = space.dim();
    QuadraticMetric::new(vec![1.0; q], DMatrix::from_element(q, q, -1.0))?.normalized()
}

fn oracle_for<U>(cfg: &TrialConfig, utility: U, seed: u64) -> Result<SimulatedOracle<U>> {
    SimulatedOracle::with_noise(utility, cfg.noise, cfg.noise_mode, seed)
}

fn run_one(cfg: &TrialConfig, seed: u64) -> TrialRecord {
    let mut rec = TrialRecord {
        mode: cfg.mode,
        k: cfg.space.classes(),
        q: cfg.space.dim(),
        m: (cfg.mode == Mode::Fair).then_some(cfg.groups),
        epsilon: cfg.epsilon,
        noise: cfg.noise,
        floor: cfg.floor,
        seed,
        lambda: None,
        queries: None,
        err_a: None,
        err_b: None,
        err_lambda: None,
        err_lambda_search: None,
        baseline_err_a: None,
        baseline_err_b: None,
        failure: None,
    };
    if let Err(e) = fill_trial(cfg, seed, &mut rec) {
        rec.failure = Some(e.to_string());
    }
    rec
}

fn fill_trial(cfg: &TrialConfig, seed: u64, rec: &mut TrialRecord) -> Result<()> {
    let q = cfg.space.dim();
    match cfg.mode {
        Mode::Linear => {
            let truth = random_linear(q, seed);
            let out = lpme(&LpmeConfig::new(cfg.sphere()?, cfg.epsilon)?, &mut oracle_for(cfg, truth.clone(), seed)?)?;
            rec.queries = Some(out.queries);
            rec.err_a = Some(diff(&truth.a, &out.weights));
            rec.baseline_err_a = Some(diff(&truth.a, &vec![1.0 / (q as f64).sqrt(); q]));
        }
        Mode::Quadratic => {
            let truth = random_quadratic(cfg.space, seed, cfg.floor)?;
            let out = qpme(&cfg.qpme_config()?, &mut oracle_for(cfg, truth.clone(), seed)?)?;
            rec.queries = Some(out.queries);
            let (ea, eb) = truth.error_to(&out.metric);
            rec.err_a = Some(ea);
            rec.err_b = Some(eb);
            let (ba, bb) = truth.error_to(&baseline_equal_weights(cfg.space)?);
            rec.baseline_err_a = Some(ba);
            rec.baseline_err_b = Some(bb);
        }
        Mode::Fair => {
            let lambda = cfg.lambda.unwrap_or_else(|| ChaCha8Rng::seed_from_u64(seed).random_range(0.1..=0.9));
            rec.lambda = Some(lambda);
            let metric = random_fair(cfg.space, cfg.groups, lambda, seed, cfg.floor)?;
            let groups = GroupModel::random(q, cfg.groups, seed.wrapping_add(GROUP_SEED_OFFSET));
            let pref = FairPreference { metric: metric.clone(), groups: groups.clone() };
            let fcfg = FairConfig { qpme: cfg.qpme_config()?, lambda_check: cfg.lambda_check };
            let out = fair_qpme(&fcfg, &mut oracle_for(cfg, pref, seed)?, &groups)?;
            rec.queries = Some(out.queries);
            let (ea, eb, el) = metric.error_to(&out.metric);
            rec.err_a = Some(ea);
            rec.err_b = Some(eb);
            rec.err_lambda = Some(el);
            rec.err_lambda_search = out.lambda_search.map(|l| (l - lambda).abs());
        }
    }
    Ok(())
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Runs every trial in parallel. Failed trials are recorded, not raised.
pub fn run_trials(cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.validate()?;
    let records = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| run_one(cfg, cfg.seed.wrapping_add(i)))
        .collect();
    Ok(TrialReport { config: cfg.clone(), records })
}

/// Least-squares slope of `log y` against `log x`.
pub fn growth_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("need at least two matching points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(invalid("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

fn check_scores(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: pred.len() });
    }
    if truth.iter().chain(pred).any(|x| x.is_nan()) {
        return Err(invalid("scores contain NaN"));
    }
    Ok(())
}

/// NDCG over the full list. Relevance is the true score min-max scaled to
/// [0, 1], gain `2^rel - 1`, discount `log2(rank + 1)`, items ordered by `pred`.
pub fn ndcg(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_scores(truth, pred)?;
    let (lo, hi) = truth.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if truth.is_empty() || hi == lo {
        return Ok(1.0);
    }
    let gain = |i: usize| 2f64.powf((truth[i] - lo) / (hi - lo)) - 1.0;
    let dcg = |order: &[usize]| -> f64 {
        order.iter().enumerate().map(|(rank, &i)| gain(i) / ((rank + 2) as f64).log2()).sum()
    };
    let mut by_pred: Vec<usize> = (0..truth.len()).collect();
    by_pred.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    let mut ideal: Vec<usize> = (0..truth.len()).collect();
    ideal.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]));
    Ok(dcg(&by_pred) / dcg(&ideal))
}

/// Kendall's tau-b.
pub fn kendall_tau(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_scores(truth, pred)?;
    let n = truth.len();
    let (mut concordant, mut discordant, mut tie_t, mut tie_p) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let st = (truth[i] - truth[j]).signum() * f64::from(truth[i] != truth[j]);
            let sp = (pred[i] - pred[j]).signum() * f64::from(pred[i] != pred[j]);
            match (st == 0.0, sp == 0.0) {
                (true, true) => {}
                (true, false) => tie_t += 1.0,
                (false, true) => tie_p += 1.0,
                (false, false) if st == sp => concordant += 1.0,
                (false, false) => discordant += 1.0,
            }
        }
    }
    let den = ((concordant + discordant + tie_t) * (concordant + discordant + tie_p)).sqrt();
    if den == 0.0 {
        return Ok(if n < 2 { 1.0 } else { 0.0 });
    }
    Ok((concordant - discordant) / den)
}

/// Uniform draws from the ball bounded by `sphere`.
pub fn sample_ball(sphere: &Sphere, n: usize, rng: &mut impl Rng) -> Vec<RateVector> {
    let q = sphere.dim();
    (0..n)
        .map(|_| loop {
            let dir: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
            let len = l2(&dir);
            if len == 0.0 {
                continue;
            }
            let t = sphere.radius * rng.random::<f64>().powf(1.0 / q as f64);
            break sphere.point(&dir.iter().map(|x| x / len).collect::<Vec<_>>(), t);
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingScore {
    pub name: String,
    pub ndcg: f64,
    pub kendall_tau: f64,
}

/// Ranks `pool` under each competitor and compares with the ranking under `truth`.
pub fn ranking_experiment<Q, P, T>(pool: &[P], truth: &T, competitors: &[(&str, &dyn Utility<Q>)]) -> Result<Vec<RankingScore>>
where
    Q: ?Sized,
    P: AsRef<Q>,
    T: Utility<Q> + ?Sized,
{
    let score = |u: &dyn Utility<Q>| -> Result<Vec<f64>> { pool.iter().map(|p| u.utility(p.as_ref())).collect() };
    let reference = pool.iter().map(|p| truth.utility(p.as_ref())).collect::<Result<Vec<f64>>>()?;
    competitors
        .iter()
        .map(|(name, u)| {
            let pred = score(*u)?;
            Ok(RankingScore { name: name.to_string(), ndcg: ndcg(&reference, &pred)?, kendall_tau: kendall_tau(&reference, &pred)? })
        })
        .collect()
}

/// One quadratic ranking trial: a random oracle metric, its QPME estimate, its
/// linear part alone, and plain accuracy.
pub fn quadratic_ranking_trial(k: usize, epsilon: f64, seed: u64) -> Result<Vec<RankingScore>> {
    let space = RateKind::Diagonal(k);
    let sphere = Sphere::new(vec![1.0 / k as f64; k], 0.2)?;
    let truth = random_quadratic(space, seed, 1e-2)?;
    let cfg = QpmeConfig::with_inner_radius(sphere.clone(), 0.02, epsilon)?;
    let elicited = qpme(&cfg, &mut SimulatedOracle::new(truth.clone()))?.metric;
    let linear = QuadraticMetric::linear(truth.a.clone());
    let accuracy = QuadraticMetric::linear(vec![1.0 / (k as f64).sqrt(); k]);
    let pool = sample_ball(&sphere, POOL_SIZE, &mut ChaCha8Rng::seed_from_u64(seed));
    ranking_experiment::<[f64], _, _>(
        &pool,
        &truth,
        &[("elicited", &elicited), ("linear", &linear), ("accuracy", &accuracy)],
    )
}

/// One fair ranking trial: pool members give each group its own rate in the ball.
/// Competitors are the fair estimate, the predictive part alone, and equal
/// weights with equalized-odds violations at trade-off 1/2.
pub fn fair_ranking_trial(k: usize, m: usize, epsilon: f64, seed: u64) -> Result<Vec<RankingScore>> {
    let space = RateKind::Diagonal(k);
    let sphere = Sphere::new(vec![1.0 / k as f64; k], 0.2)?;
    let lambda = ChaCha8Rng::seed_from_u64(seed).random_range(0.1..=0.9);
    let metric = random_fair(space, m, lambda, seed, 1e-2)?;
    let groups = GroupModel::random(k, m, seed.wrapping_add(GROUP_SEED_OFFSET));
    let truth = FairPreference { metric: metric.clone(), groups: groups.clone() };
    let cfg = FairConfig::new(QpmeConfig::with_inner_radius(sphere.clone(), 0.02, epsilon)?);
    let out = fair_qpme(&cfg, &mut SimulatedOracle::new(truth.clone()), &groups)?;
    let elicited = FairPreference { metric: out.metric, groups: groups.clone() };
    let predictive_only = FairPreference {
        metric: FairQuadraticMetric::new(metric.a.clone(), metric.b.clone(), 0.0, m)?,
        groups: groups.clone(),
    };
    let Metric::Fair(eo, _) = make_named_metric(&NamedMetric::EO, space, Some(m), 0.5)? else {
        unreachable!("equalized odds is a fair metric")
    };
    let equal = FairPreference { metric: eo, groups };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<Vec<RateVector>> = (0..POOL_SIZE).map(|_| sample_ball(&sphere, m, &mut rng)).collect();
    ranking_experiment::<[RateVector], _, _>(
        &pool,
        &truth,
        &[("elicited", &elicited), ("linear_no_fairness", &predictive_only), ("accuracy_eq_odds", &equal)],
    )
}

/// Diagonal rate `r_ii = 1 - sum_{j != i} r_ij` of a general rate vector laid out row by row.
pub fn general_to_diagonal(k: usize, general: &[f64]) -> Vec<f64> {
    (0..k).map(|i| 1.0 - general[i * (k - 1)..(i + 1) * (k - 1)].iter().sum::<f64>()).collect()
}

/// Spreads each class's errors evenly over the other classes.
pub fn diagonal_to_general(k: usize, diagonal: &[f64]) -> Vec<f64> {
    diagonal.iter().flat_map(|d| std::iter::repeat_n((1.0 - d) / (k - 1) as f64, k - 1)).collect()
}

/// Poses diagonal-rate queries to a general-rate oracle.
struct DiagonalView<O> {
    inner: O,
    k: usize,
}

impl<O: Oracle<[f64]>> Oracle<[f64]> for DiagonalView<O> {
    fn compare(&mut self, left: &[f64], right: &[f64]) -> Result<bool> {
        self.inner.compare(&diagonal_to_general(self.k, left), &diagonal_to_general(self.k, right))
    }
}

/// Scores general rates with a metric over their diagonal.
struct OnDiagonal<U> {
    metric: U,
    k: usize,
}

impl<U: Utility<[f64]>> Utility<[f64]> for OnDiagonal<U> {
    fn utility(&self, x: &[f64]) -> Result<f64> {
        self.metric.utility(&general_to_diagonal(self.k, x))
    }
}

/// Ranking when the oracle is quadratic in general rates: linear and quadratic
/// estimates over diagonal and over general rates.
pub fn structure_ranking_trial(k: usize, epsilon: f64, seed: u64) -> Result<Vec<RankingScore>> {
    let general = RateKind::General(k);
    let gsphere = Sphere::new(vec![1.0 / k as f64; general.dim()], 0.2)?;
    let dsphere = Sphere::new(vec![1.0 / k as f64; k], 0.2)?;
    let truth = random_quadratic(general, seed, 1e-2)?;
    let oracle = || SimulatedOracle::new(truth.clone());
    let diag_view = || DiagonalView { inner: oracle(), k };

    let lin_diag = lpme(&LpmeConfig::new(dsphere.clone(), epsilon)?, &mut diag_view())?.weights;
    let lin_gen = lpme(&LpmeConfig::new(gsphere.clone(), epsilon)?, &mut oracle())?.weights;
    let quad_diag = qpme(&QpmeConfig::with_inner_radius(dsphere, 0.02, epsilon)?, &mut diag_view())?.metric;
    let quad_gen = qpme(&QpmeConfig::with_inner_radius(gsphere.clone(), 0.02, epsilon)?, &mut oracle())?.metric;

    let lin_diag = OnDiagonal { metric: QuadraticMetric::linear(lin_diag), k };
    let lin_gen = QuadraticMetric::linear(lin_gen);
    let quad_diag = OnDiagonal { metric: quad_diag, k };
    let pool = sample_ball(&gsphere, POOL_SIZE, &mut ChaCha8Rng::seed_from_u64(seed));
    ranking_experiment::<[f64], _, _>(
        &pool,
        &truth,
        &[
            ("linear_diagonal", &lin_diag),
            ("linear_general", &lin_gen),
            ("quadratic_diagonal", &quad_diag),
            ("quadratic_general", &quad_gen),
        ],
    )
}

/// `n` seeded pairs of rates drawn uniformly from the ball.
pub fn evaluation_pairs(sphere: &Sphere, n: usize, seed: u64) -> Vec<(RateVector, RateVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_ball(sphere, 2 * n, &mut rng);
    pts.chunks_exact(2).map(|c| (c[0].clone(), c[1].clone())).collect()
}

/// Percentage of pairs on which the elicited metric's strict preference matches the oracle.
pub fn agreement<O, U>(oracle: &mut O, elicited: &U, pairs: &[(RateVector, RateVector)]) -> Result<f64>
where
    O: Oracle<[f64]> + ?Sized,
    U: Utility<[f64]> + ?Sized,
{
    if pairs.is_empty() {
        return Err(invalid("need at least one evaluation pair"));
    }
    let mut agree = 0;
    for (l, r) in pairs {
        let said = oracle.compare(l, r)?;
        if said == (elicited.utility(l)? > elicited.utility(r)?) {
            agree += 1;
        }
    }
    Ok(100.0 * agree as f64 / pairs.len() as f64)
}

pub fn match_fraction<O, U>(oracle: &mut O, elicited: &U, sphere: &Sphere, n: usize, seed: u64) -> Result<f64>
where
    O: Oracle<[f64]> + ?Sized,
    U: Utility<[f64]> + ?Sized,
{
    agreement(oracle, elicited, &evaluation_pairs(sphere, n, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn baseline_shape() {
        for k in 2..=5 {
            let b = baseline_equal_weights(RateKind::Diagonal(k)).unwrap();
            let c = 1.0 / ((k + k * k) as f64).sqrt();
            assert!(b.a.iter().all(|x| (x - c).abs() < 1e-15));
            assert!(b.b.iter().all(|x| (x + c).abs() < 1e-15));
            assert_abs_diff_eq!(b.norm(), 1.0, epsilon = 1e-12);
        }
        assert!(baseline_equal_weights(RateKind::Diagonal(1)).is_err());
    }

    #[test]
    fn ranking_measure_examples() {
        let t = [0.3, 0.1, 0.9, 0.5];
        assert_abs_diff_eq!(ndcg(&t, &t).unwrap(), 1.0);
        assert_abs_diff_eq!(kendall_tau(&t, &t).unwrap(), 1.0);
        let rev: Vec<f64> = t.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(kendall_tau(&t, &rev).unwrap(), -1.0);
        let mono: Vec<f64> = t.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        assert_abs_diff_eq!(ndcg(&t, &mono).unwrap(), 1.0);
        assert_abs_diff_eq!(kendall_tau(&t, &mono).unwrap(), 1.0);
        assert!(ndcg(&t, &t[..3]).is_err());
        assert!(kendall_tau(&[0.0, f64::NAN], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ranking_measures_against_direct_formulas() {
        // Three items, one discordant pair out of three.
        assert_abs_diff_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        // tau-b with a tie in the truth: n_c = 2, n_d = 0, tie_t = 1 -> 2 / sqrt(2 * 3).
        assert_abs_diff_eq!(kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 2.0 / 6f64.sqrt(), epsilon = 1e-15);
        // Relevances 0, 0.5, 1 with the top two swapped.
        let g = |r: f64| 2f64.powf(r) - 1.0;
        let ideal = g(1.0) + g(0.5) / 3f64.log2();
        let got = g(0.5) + g(1.0) / 3f64.log2();
        assert_abs_diff_eq!(ndcg(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]).unwrap(), got / ideal, epsilon = 1e-15);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let s = Sphere::new(vec![0.25; 4], 0.2).unwrap();
        let pts = sample_ball(&s, 500, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(pts.iter().all(|p| diff(p, &s.center) <= 0.2 + 1e-12));
        // Uniform in a 4-ball: E|x - c| = 4/5 r.
        let m = pts.iter().map(|p| diff(p, &s.center)).sum::<f64>() / 500.0;
        assert!((m - 0.16).abs() < 0.01, "{m}");
    }

    #[test]
    fn match_fraction_examples() {
        let s = Sphere::new(vec![0.5, 0.5], 0.2).unwrap();
        let truth = random_quadratic(RateKind::Diagonal(2), 3, 1e-2).unwrap();
        let same = match_fraction(&mut SimulatedOracle::new(truth.clone()), &truth, &s, 15, 9).unwrap();
        assert_eq!(same, 100.0);
        let s3 = Sphere::new(vec![1.0 / 3.0; 3], 0.2).unwrap();
        let other = random_linear(3, 11);
        let chance = match_fraction(&mut SimulatedOracle::new(random_linear(3, 12)), &other, &s3, 10_000, 1).unwrap();
        let agree = QuadraticMetric::linear(vec![1.0, 0.0, 0.0]);
        let orth = QuadraticMetric::linear(vec![0.0, 1.0, 0.0]);
        let indep = match_fraction(&mut SimulatedOracle::new(agree), &orth, &s3, 10_000, 2).unwrap();
        assert!((indep - 50.0).abs() <= 5.0, "{indep}");
        assert!((0.0..=100.0).contains(&chance));
        assert!(match_fraction(&mut SimulatedOracle::new(truth.clone()), &truth, &s, 0, 9).is_err());
    }

    #[test]
    fn empty_and_failed_trials() {
        let mut cfg = TrialConfig::new(Mode::Quadratic, RateKind::Diagonal(2));
        cfg.trials = 0;
        assert!(run_trials(&cfg).unwrap().records.is_empty());
        cfg.trials = 3;
        cfg.floor = 10.0;
        let rep = run_trials(&cfg).unwrap();
        assert_eq!(rep.failures(), 3);
        assert!(rep.mean_queries().is_none());
        cfg.varrho = 0.5;
        assert!(run_trials(&cfg).is_err());
    }

    #[test]
    fn trials_are_reproducible_and_distinct() {
        let mut cfg = TrialConfig::new(Mode::Quadratic, RateKind::Diagonal(2));
        cfg.trials = 8;
        let a = run_trials(&cfg).unwrap();
        assert_eq!(a, run_trials(&cfg).unwrap());
        let mut seeds: Vec<u64> = a.records.iter().map(|r| r.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
        assert_eq!(a.succeeded(), 8);
    }

    #[test]
    fn linear_and_fair_trials_run() {
        let mut cfg = TrialConfig::new(Mode::Linear, RateKind::Diagonal(3));
        cfg.trials = 5;
        cfg.epsilon = 1e-3;
        let rep = run_trials(&cfg).unwrap();
        assert!(rep.mean_err_a().unwrap() < 0.05);
        let mut cfg = TrialConfig::new(Mode::Fair, RateKind::Diagonal(2));
        cfg.trials = 3;
        cfg.lambda_check = true;
        let rep = run_trials(&cfg).unwrap();
        assert_eq!(rep.succeeded(), 3, "{:?}", rep.records);
        assert!(rep.records.iter().all(|r| r.err_lambda_search.is_some() && r.m == Some(2)));
    }

    #[test]
    fn growth_exponent_of_power_law() {
        let x = [2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 7.0 * v.powf(2.1)).collect();
        assert_abs_diff_eq!(growth_exponent(&x, &y).unwrap(), 2.1, epsilon = 1e-12);
        assert!(growth_exponent(&x, &[1.0]).is_err());
    }

    #[test]
    fn rate_views_round_trip() {
        let d = vec![0.7, 0.4, 0.55];
        let g = diagonal_to_general(3, &d);
        assert_eq!(g.len(), 6);
        assert_abs_diff_eq!(general_to_diagonal(3, &g).as_slice(), d.as_slice(), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn kendall_tau_bounds_and_symmetry(v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..20)) {
            let (t, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let tau = kendall_tau(&t, &p).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&tau));
            prop_assert!((tau - kendall_tau(&p, &t).unwrap()).abs() < 1e-12);
            let n = ndcg(&t, &p).unwrap();
            prop_assert!(n > 0.0 && n <= 1.0 + 1e-12);
        }
    }
}

//! Resumable elicitation for a human oracle.
//!
//! A session keeps the answers given so far and re-runs the elicitation from
//! the start against a [`ReplayOracle`] after each answer. The run either
//! suspends on the next unanswered query, which becomes the pending query, or
//! finishes, after which a fixed set of seeded evaluation pairs is posed and
//! the match fraction computed. The elicitation code is the same one used with
//! simulated oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::experiments::{sample_ball, Mode};
use crate::fair::{fair_qpme, FairConfig};
use crate::geometry::{RateVector, Sphere};
use crate::lpme::{lpme, LpmeConfig};
use crate::metrics::{GroupModel, Metric, QuadraticMetric};
use crate::oracle::{with_transcript, FairPreference, Oracle, QueryPoint, ReplayOracle, Transcript, Utility};
use crate::qpme::{qpme, QpmeConfig};

/// Held-out pairs posed after elicitation.
pub const EVALUATION_QUERIES: usize = 15;
/// Default binary-search tolerance for human answerers.
pub const HUMAN_EPSILON: f64 = 0.05;

fn default_rho() -> f64 {
    0.2
}

fn default_epsilon() -> f64 {
    HUMAN_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: Mode,
    pub k: usize,
    /// Group count, fair mode only; two when absent, or the row count of `tau`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Small-sphere radius; a tenth of `rho` when absent.
    #[serde(default)]
    pub varrho: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Class priors used for rendering; uniform when absent.
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    /// Group prevalences for fair mode; uniform when absent.
    #[serde(default)]
    pub tau: Option<Vec<Vec<f64>>>,
    /// Seeds the evaluation pairs.
    #[serde(default)]
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(mode: Mode, k: usize) -> Self {
        Self {
            mode,
            k,
            m: (mode == Mode::Fair).then_some(2),
            rho: default_rho(),
            varrho: None,
            epsilon: HUMAN_EPSILON,
            priors: None,
            tau: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(invalid(format!("need at least two classes, got {}", self.k)));
        }
        let priors = self.priors();
        if priors.len() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, found: priors.len() });
        }
        if priors.iter().any(|p| !(*p > 0.0)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(invalid("priors must be positive and sum to 1"));
        }
        match self.mode {
            Mode::Linear => {
                self.lpme_config()?;
            }
            Mode::Quadratic => {
                self.qpme_config()?;
            }
            Mode::Fair => {
                self.qpme_config()?;
                let gm = self.group_model()?;
                if gm.dim() != self.k {
                    return Err(Error::DimensionMismatch { expected: self.k, found: gm.dim() });
                }
            }
        }
        Ok(())
    }

    pub fn priors(&self) -> Vec<f64> {
        self.priors.clone().unwrap_or_else(|| vec![1.0 / self.k as f64; self.k])
    }

    pub fn sphere(&self) -> Result<Sphere> {
        Sphere::new(vec![1.0 / self.k as f64; self.k], self.rho)
    }

    pub fn lpme_config(&self) -> Result<LpmeConfig> {
        LpmeConfig::new(self.sphere()?, self.epsilon)
    }

    pub fn qpme_config(&self) -> Result<QpmeConfig> {
        let s = self.sphere()?;
        let inner = self.varrho.unwrap_or(s.radius / 10.0);
        QpmeConfig::with_inner_radius(s, inner, self.epsilon)
    }

    pub fn groups(&self) -> Result<usize> {
        match self.m.or(self.tau.as_ref().map(Vec::len)).unwrap_or(2) {
            m if m >= 2 => Ok(m),
            _ => Err(invalid("fair sessions need at least two groups")),
        }
    }

    pub fn group_model(&self) -> Result<GroupModel> {
        let m = self.groups()?;
        match &self.tau {
            Some(tau) if tau.len() != m => Err(Error::DimensionMismatch { expected: m, found: tau.len() }),
            Some(tau) => GroupModel::new(tau.clone()),
            None => Ok(GroupModel::uniform(self.k, m)),
        }
    }
}

/// Result of a completed elicitation.
#[derive(Debug, Clone, PartialEq)]
pub struct Elicited {
    pub metric: Metric,
    pub queries: usize,
}

/// Runs the elicitation selected by `cfg` against `oracle`.
pub fn run_elicitation<O>(cfg: &SessionConfig, oracle: &mut O) -> Result<Elicited>
where
    O: Oracle<[f64]> + Oracle<[RateVector]>,
{
    match cfg.mode {
        Mode::Linear => {
            let out = lpme(&cfg.lpme_config()?, oracle)?;
            Ok(Elicited { metric: Metric::Quadratic(QuadraticMetric::linear(out.weights)), queries: out.queries })
        }
        Mode::Quadratic => {
            let out = qpme(&cfg.qpme_config()?, oracle)?;
            Ok(Elicited { metric: Metric::Quadratic(out.metric), queries: out.queries })
        }
        Mode::Fair => {
            let gm = cfg.group_model()?;
            let out = fair_qpme(&FairConfig::new(cfg.qpme_config()?), oracle, &gm)?;
            Ok(Elicited { metric: Metric::Fair(out.metric, Some(gm)), queries: out.queries })
        }
    }
}

/// Whether `metric` strictly prefers `left`.
pub fn metric_prefers(metric: &Metric, left: &QueryPoint, right: &QueryPoint) -> Result<bool> {
    match (metric, left, right) {
        (Metric::Quadratic(q), QueryPoint::Rates(l), QueryPoint::Rates(r)) => Ok(q.utility(l)? > q.utility(r)?),
        (Metric::Fair(f, Some(gm)), QueryPoint::Profile(l), QueryPoint::Profile(r)) => {
            let p = FairPreference { metric: f.clone(), groups: gm.clone() };
            Ok(p.utility(l)? > p.utility(r)?)
        }
        _ => Err(invalid("query shape does not match the metric")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Eliciting,
    Evaluating,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingQuery {
    pub query_id: u64,
    pub phase: Phase,
    pub left: QueryPoint,
    pub right: QueryPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub fp: f64,
    pub tn: f64,
}

/// Out-of-100 confusion counts for one rate vector. Diagonal rates fix only the
/// correct mass per class; the errors of a class are split evenly over the other
/// classes, which is exact for two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRendering {
    pub rates: Vec<f64>,
    /// `counts[actual][predicted]`, rounded to one decimal.
    pub counts: Vec<Vec<f64>>,
    pub actual_totals: Vec<f64>,
    pub predicted_totals: Vec<f64>,
    /// Class 0 is the positive class.
    pub binary: Option<BinaryCounts>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl ConfusionRendering {
    pub fn new(priors: &[f64], rates: &[f64]) -> Result<Self> {
        let k = priors.len();
        if rates.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: rates.len() });
        }
        let exact: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        let mass = if i == j { rates[i] } else { (1.0 - rates[i]) / (k - 1) as f64 };
                        100.0 * priors[i] * mass
                    })
                    .collect()
            })
            .collect();
        let actual_totals = exact.iter().map(|row| round1(row.iter().sum())).collect();
        let predicted_totals = (0..k).map(|j| round1(exact.iter().map(|row| row[j]).sum())).collect();
        let counts: Vec<Vec<f64>> = exact.iter().map(|row| row.iter().map(|&x| round1(x)).collect()).collect();
        let binary = (k == 2).then(|| BinaryCounts {
            tp: counts[0][0],
            fn_: counts[0][1],
            fp: counts[1][0],
            tn: counts[1][1],
        });
        Ok(Self { rates: rates.to_vec(), counts, actual_totals, predicted_totals, binary })
    }
}

/// One side of a query: a single rendering, or one per group in fair mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub groups: Vec<ConfusionRendering>,
}

impl Panel {
    fn new(priors: &[f64], point: &QueryPoint) -> Result<Self> {
        let groups = match point {
            QueryPoint::Rates(r) => vec![ConfusionRendering::new(priors, r)?],
            QueryPoint::Profile(p) => p.iter().map(|r| ConfusionRendering::new(priors, r)).collect::<Result<_>>()?,
        };
        Ok(Self { groups })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub query_id: u64,
    pub phase: Phase,
    pub left: Panel,
    pub right: Panel,
    /// Answers accepted so far, across both phases.
    pub answered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResult {
    pub mode: Mode,
    /// Metric JSON as written by [`Metric::to_json`]; absent when elicitation failed.
    pub metric: Option<serde_json::Value>,
    pub elicitation_queries: usize,
    pub evaluation_queries: usize,
    /// Percentage of evaluation answers the elicited metric agrees with.
    pub match_fraction: Option<f64>,
    pub failure: Option<String>,
}

pub struct Session {
    config: SessionConfig,
    phase: Phase,
    answers: Vec<bool>,
    transcript: Transcript,
    elicited: Option<Elicited>,
    failure: Option<String>,
    pairs: Vec<(QueryPoint, QueryPoint)>,
    eval_answers: Vec<bool>,
    pending: Option<PendingQuery>,
    next_id: u64,
}

impl Session {
    /// Validates the config and computes the first query.
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let mut s = Self {
            config,
            phase: Phase::Eliciting,
            answers: Vec::new(),
            transcript: Transcript::new(),
            elicited: None,
            failure: None,
            pairs: Vec::new(),
            eval_answers: Vec::new(),
            pending: None,
            next_id: 1,
        };
        s.advance()?;
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref()
    }

    /// Queries and answers of the elicitation phase.
    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn answered(&self) -> usize {
        self.answers.len() + self.eval_answers.len()
    }

    pub fn view(&self) -> Result<Option<QueryView>> {
        let Some(p) = &self.pending else {
            return Ok(None);
        };
        let priors = self.config.priors();
        Ok(Some(QueryView {
            query_id: p.query_id,
            phase: p.phase,
            left: Panel::new(&priors, &p.left)?,
            right: Panel::new(&priors, &p.right)?,
            answered: self.answered(),
        }))
    }

    /// Accepts an answer for the pending query. Anything else is rejected without a state change.
    pub fn answer(&mut self, query_id: u64, preferred: Preference) -> Result<()> {
        let expected = self.pending.as_ref().map(|p| p.query_id);
        if expected != Some(query_id) {
            return Err(Error::StaleQuery { expected, got: query_id });
        }
        let response = preferred == Preference::Left;
        match self.phase {
            Phase::Eliciting => self.answers.push(response),
            Phase::Evaluating => self.eval_answers.push(response),
            Phase::Done => unreachable!("no query is pending once done"),
        }
        self.advance()
    }

    pub fn result(&self) -> Result<SessionResult> {
        if self.phase != Phase::Done {
            return Err(Error::NotDone);
        }
        let metric = match &self.elicited {
            Some(e) => Some(serde_json::from_str(&e.metric.to_json()?)?),
            None => None,
        };
        let match_fraction = match &self.elicited {
            Some(e) => Some(self.match_fraction(&e.metric)?),
            None => None,
        };
        Ok(SessionResult {
            mode: self.config.mode,
            metric,
            elicitation_queries: self.answers.len(),
            evaluation_queries: self.eval_answers.len(),
            match_fraction,
            failure: self.failure.clone(),
        })
    }

    pub fn elicited(&self) -> Option<&Elicited> {
        self.elicited.as_ref()
    }

    fn match_fraction(&self, metric: &Metric) -> Result<f64> {
        let mut agree = 0;
        for ((l, r), &said) in self.pairs.iter().zip(&self.eval_answers) {
            if metric_prefers(metric, l, r)? == said {
                agree += 1;
            }
        }
        Ok(100.0 * agree as f64 / self.eval_answers.len().max(1) as f64)
    }

    fn set_pending(&mut self, left: QueryPoint, right: QueryPoint) {
        self.pending = Some(PendingQuery { query_id: self.next_id, phase: self.phase, left, right });
        self.next_id += 1;
    }

    fn advance(&mut self) -> Result<()> {
        self.pending = None;
        if self.phase == Phase::Eliciting {
            let (mut oracle, log) = with_transcript(ReplayOracle::new(self.answers.clone()));
            match run_elicitation(&self.config, &mut oracle) {
                Err(Error::Suspended { left, right, .. }) => {
                    self.transcript = log;
                    self.set_pending(left, right);
                    return Ok(());
                }
                Ok(e) => {
                    self.transcript = log;
                    self.elicited = Some(e);
                    self.pairs = self.evaluation_pairs()?;
                    self.phase = Phase::Evaluating;
                }
                Err(e) => {
                    self.transcript = log;
                    self.failure = Some(e.to_string());
                    self.phase = Phase::Done;
                    return Ok(());
                }
            }
        }
        if self.phase == Phase::Evaluating {
            match self.pairs.get(self.eval_answers.len()).cloned() {
                Some((l, r)) => self.set_pending(l, r),
                None => self.phase = Phase::Done,
            }
        }
        Ok(())
    }

    fn evaluation_pairs(&self) -> Result<Vec<(QueryPoint, QueryPoint)>> {
        let sphere = self.config.sphere()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let draw = |rng: &mut ChaCha8Rng| -> Result<QueryPoint> {
            Ok(match self.config.mode {
                Mode::Fair => QueryPoint::Profile(sample_ball(&sphere, self.config.groups()?, rng)),
                _ => QueryPoint::Rates(sample_ball(&sphere, 1, rng).remove(0)),
            })
        };
        (0..EVALUATION_QUERIES).map(|_| Ok((draw(&mut rng)?, draw(&mut rng)?))).collect()
    }
}

/// Answers a session's pending queries from a metric, as a truthful human would.
pub fn scripted_answer(metric: &Metric, pending: &PendingQuery) -> Result<Preference> {
    Ok(if metric_prefers(metric, &pending.left, &pending.right)? { Preference::Left } else { Preference::Right })
}

impl Session {
    /// Drives the session to completion with `answerer`.
    pub fn run_with(&mut self, mut answerer: impl FnMut(&PendingQuery) -> Result<Preference>) -> Result<SessionResult> {
        while let Some(p) = self.pending.clone() {
            let pref = answerer(&p)?;
            self.answer(p.query_id, pref)?;
        }
        self.result()
    }
}

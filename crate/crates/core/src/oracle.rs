//! Pairwise preference oracles, the in-band noise model, and query transcripts.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::RateVector;
use crate::metrics::{FairQuadraticMetric, GroupModel, QuadraticMetric};

/// A single query argument in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryPoint {
    Rates(Vec<f64>),
    Profile(Vec<Vec<f64>>),
}

pub trait AsQueryPoint {
    fn to_query_point(&self) -> QueryPoint;
}

impl AsQueryPoint for [f64] {
    fn to_query_point(&self) -> QueryPoint {
        QueryPoint::Rates(self.to_vec())
    }
}

impl AsQueryPoint for [RateVector] {
    fn to_query_point(&self) -> QueryPoint {
        QueryPoint::Profile(self.to_vec())
    }
}

/// Answers "is `left` preferred to `right`?". `false` covers both "no" and ties.
pub trait Oracle<Q: ?Sized> {
    fn compare(&mut self, left: &Q, right: &Q) -> Result<bool>;
}

impl<Q: ?Sized, O: Oracle<Q> + ?Sized> Oracle<Q> for &mut O {
    fn compare(&mut self, left: &Q, right: &Q) -> Result<bool> {
        (**self).compare(left, right)
    }
}

impl<Q: ?Sized, O: Oracle<Q> + ?Sized> Oracle<Q> for Box<O> {
    fn compare(&mut self, left: &Q, right: &Q) -> Result<bool> {
        (**self).compare(left, right)
    }
}

/// A hidden scoring function; higher is better.
pub trait Utility<Q: ?Sized> {
    fn utility(&self, x: &Q) -> Result<f64>;
}

impl Utility<[f64]> for QuadraticMetric {
    fn utility(&self, x: &[f64]) -> Result<f64> {
        self.eval(x)
    }
}

/// A fair cost metric together with its group prevalences, scored as negative cost.
#[derive(Debug, Clone, PartialEq)]
pub struct FairPreference {
    pub metric: FairQuadraticMetric,
    pub groups: GroupModel,
}

impl Utility<[RateVector]> for FairPreference {
    fn utility(&self, x: &[RateVector]) -> Result<f64> {
        Ok(-self.metric.cost(x, &self.groups)?)
    }
}

/// What the oracle does when two utilities are within its noise band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Truthful,
    Flip,
    SeededRandom,
}

pub struct SimulatedOracle<U> {
    metric: U,
    noise: f64,
    mode: NoiseMode,
    rng: ChaCha8Rng,
}

impl<U> SimulatedOracle<U> {
    pub fn new(metric: U) -> Self {
        Self { metric, noise: 0.0, mode: NoiseMode::Truthful, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// In-band answers follow `mode`; `seed` drives the coin for `SeededRandom`.
    pub fn with_noise(metric: U, noise: f64, mode: NoiseMode, seed: u64) -> Result<Self> {
        if !(noise >= 0.0) {
            return Err(invalid(format!("noise band must be nonnegative, got {noise}")));
        }
        Ok(Self { metric, noise, mode, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn metric(&self) -> &U {
        &self.metric
    }
}

impl<Q: ?Sized, U: Utility<Q>> Oracle<Q> for SimulatedOracle<U> {
    fn compare(&mut self, left: &Q, right: &Q) -> Result<bool> {
        let (l, r) = (self.metric.utility(left)?, self.metric.utility(right)?);
        if l == r {
            return Ok(false);
        }
        let truth = l > r;
        if (l - r).abs() > self.noise {
            return Ok(truth);
        }
        Ok(match self.mode {
            NoiseMode::Truthful => truth,
            NoiseMode::Flip => !truth,
            NoiseMode::SeededRandom => self.rng.random::<bool>(),
        })
    }
}

/// Rate oracle derived from a group-profile oracle: groups in `sigma` take the
/// queried rate, every other group sits at the base rate.
pub struct RestrictedFairOracle<O> {
    inner: O,
    sigma: Vec<usize>,
    m: usize,
    base: RateVector,
}

pub fn restrict_fair<O>(inner: O, sigma: &[usize], m: usize, base: RateVector) -> Result<RestrictedFairOracle<O>> {
    if sigma.is_empty() || sigma.len() >= m || sigma.iter().any(|&g| g >= m) {
        return Err(invalid(format!("group subset {sigma:?} is not a proper subset of {m} groups")));
    }
    Ok(RestrictedFairOracle { inner, sigma: sigma.to_vec(), m, base })
}

impl<O> RestrictedFairOracle<O> {
    pub fn profile(&self, s: &[f64]) -> Vec<RateVector> {
        (0..self.m)
            .map(|g| if self.sigma.contains(&g) { s.to_vec() } else { self.base.clone() })
            .collect()
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Oracle<[RateVector]>> Oracle<[f64]> for RestrictedFairOracle<O> {
    fn compare(&mut self, left: &[f64], right: &[f64]) -> Result<bool> {
        if left.len() != self.base.len() || right.len() != self.base.len() {
            return Err(Error::DimensionMismatch { expected: self.base.len(), found: left.len() });
        }
        let (l, r) = (self.profile(left), self.profile(right));
        self.inner.compare(&l, &r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub left: QueryPoint,
    pub right: QueryPoint,
    pub response: bool,
    pub timestamp_ms: u64,
}

impl QueryRecord {
    /// Everything but the timestamp.
    pub fn same_query(&self, other: &QueryRecord) -> bool {
        self.index == other.index
            && self.left == other.left
            && self.right == other.right
            && self.response == other.response
    }
}

/// Shared, append-only query log.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<QueryRecord>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Vec<QueryRecord>> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, left: QueryPoint, right: QueryPoint, response: bool) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let mut log = self.lock();
        let index = log.len();
        log.push(QueryRecord { index, left, right, response, timestamp_ms });
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<QueryRecord> {
        self.lock().clone()
    }

    pub fn responses(&self) -> Vec<bool> {
        self.lock().iter().map(|r| r.response).collect()
    }

    /// True when both logs hold the same queries and answers, ignoring timestamps.
    pub fn same_queries(&self, other: &Transcript) -> bool {
        let (a, b) = (self.records(), other.records());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.same_query(y))
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in self.lock().iter() {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(file)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: QueryRecord = serde_json::from_str(&line)?;
            if rec.index != records.len() {
                return Err(invalid(format!("transcript index {} out of order", rec.index)));
            }
            records.push(rec);
        }
        Ok(Self(Arc::new(Mutex::new(records))))
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Logs every query that passes through to the wrapped oracle.
pub struct Recorded<O> {
    inner: O,
    log: Transcript,
}

pub fn with_transcript<O>(inner: O) -> (Recorded<O>, Transcript) {
    let log = Transcript::new();
    (Recorded { inner, log: log.clone() }, log)
}

impl<O> Recorded<O> {
    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<Q: ?Sized + AsQueryPoint, O: Oracle<Q>> Oracle<Q> for Recorded<O> {
    fn compare(&mut self, left: &Q, right: &Q) -> Result<bool> {
        let response = self.inner.compare(left, right)?;
        self.log.push(left.to_query_point(), right.to_query_point(), response);
        Ok(response)
    }
}

/// Feeds back a fixed answer sequence, then suspends on the first unanswered query.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    answers: Vec<bool>,
    expected: Option<Vec<(QueryPoint, QueryPoint)>>,
    cursor: usize,
}

impl ReplayOracle {
    pub fn new(answers: Vec<bool>) -> Self {
        Self { answers, expected: None, cursor: 0 }
    }

    /// Like [`ReplayOracle::new`] but also checks each query against the recorded pair.
    pub fn from_records(records: &[QueryRecord]) -> Self {
        Self {
            answers: records.iter().map(|r| r.response).collect(),
            expected: Some(records.iter().map(|r| (r.left.clone(), r.right.clone())).collect()),
            cursor: 0,
        }
    }

    pub fn consumed(&self) -> usize {
        self.cursor
    }
}

impl<Q: ?Sized + AsQueryPoint> Oracle<Q> for ReplayOracle {
    fn compare(&mut self, left: &Q, right: &Q) -> Result<bool> {
        let index = self.cursor;
        let Some(&answer) = self.answers.get(index) else {
            return Err(Error::Suspended {
                index,
                left: left.to_query_point(),
                right: right.to_query_point(),
            });
        };
        if let Some(expected) = &self.expected {
            let (l, r) = &expected[index];
            if *l != left.to_query_point() || *r != right.to_query_point() {
                return Err(Error::ReplayDiverged(index));
            }
        }
        self.cursor += 1;
        Ok(answer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::random_fair;
    use crate::geometry::RateKind;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn linear(a: &[f64]) -> SimulatedOracle<QuadraticMetric> {
        SimulatedOracle::new(QuadraticMetric::linear(a.to_vec()))
    }

    #[test]
    fn compare_examples() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut o = linear(&[s, s]);
        assert!(o.compare(&[0.9, 0.1][..], &[0.4, 0.5][..]).unwrap());
        assert!(!o.compare(&[0.4, 0.5][..], &[0.9, 0.1][..]).unwrap());
        assert!(!o.compare(&[0.3, 0.3][..], &[0.3, 0.3][..]).unwrap());
        let mut flip =
            SimulatedOracle::with_noise(QuadraticMetric::linear(vec![s, s]), 0.2, NoiseMode::Flip, 0).unwrap();
        assert!(!flip.compare(&[0.9, 0.1][..], &[0.4, 0.5][..]).unwrap());
        assert!(flip.compare(&[1.0, 1.0][..], &[0.0, 0.0][..]).unwrap());
        assert!(!flip.compare(&[0.3, 0.3][..], &[0.3, 0.3][..]).unwrap());
        assert!(o.compare(&[0.3][..], &[0.3, 0.3][..]).is_err());
    }

    #[test]
    fn seeded_random_is_reproducible() {
        let run = |seed| {
            let mut o = SimulatedOracle::with_noise(
                QuadraticMetric::linear(vec![1.0, 0.0]),
                1.0,
                NoiseMode::SeededRandom,
                seed,
            )
            .unwrap();
            (0..64).map(|i| o.compare(&[0.5, 0.1][..], &[0.5 + 1e-3 * i as f64, 0.1][..]).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn restricted_oracle_builds_profiles() {
        let gm = GroupModel::uniform(2, 3);
        let metric = random_fair(RateKind::Diagonal(2), 3, 0.5, 1, 1e-2).unwrap();
        let pref = FairPreference { metric, groups: gm };
        let base = vec![0.5, 0.5];
        let r = restrict_fair(SimulatedOracle::new(pref.clone()), &[0, 1], 3, base.clone()).unwrap();
        assert_eq!(r.profile(&[0.1, 0.2]), vec![vec![0.1, 0.2], vec![0.1, 0.2], base.clone()]);
        let mut r = restrict_fair(SimulatedOracle::new(pref.clone()), &[0], 3, base.clone()).unwrap();
        let mut full = SimulatedOracle::new(pref);
        for (s1, s2) in [([0.6, 0.4], [0.4, 0.6]), ([0.55, 0.5], [0.5, 0.45]), ([0.3, 0.3], [0.3, 0.3])] {
            let want = full
                .compare(&[s1.to_vec(), base.clone(), base.clone()][..], &[s2.to_vec(), base.clone(), base.clone()][..])
                .unwrap();
            assert_eq!(r.compare(&s1[..], &s2[..]).unwrap(), want);
        }
        assert!(!r.compare(&[0.3, 0.3][..], &[0.3, 0.3][..]).unwrap());
        assert!(restrict_fair((), &[], 3, base.clone()).is_err());
        assert!(restrict_fair((), &[0, 1, 2], 3, base).is_err());
    }

    #[test]
    fn transcript_counts_and_replays() {
        let (mut rec, log) = with_transcript(linear(&[0.6, 0.8]));
        assert_eq!(log.len(), 0);
        let pairs = [([0.1, 0.9], [0.9, 0.1]), ([0.5, 0.5], [0.4, 0.6]), ([0.2, 0.2], [0.2, 0.2])];
        for (l, r) in &pairs {
            rec.compare(&l[..], &r[..]).unwrap();
        }
        assert_eq!(log.len(), 3);
        let records = log.records();
        assert!(records.iter().enumerate().all(|(i, r)| r.index == i));

        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let back = Transcript::read_jsonl(&buf[..]).unwrap();
        assert!(back.same_queries(&log));

        // Re-issuing recorded pairs to a fresh noise-free oracle reproduces the answers.
        let mut fresh = linear(&[0.6, 0.8]);
        for r in &records {
            let (QueryPoint::Rates(l), QueryPoint::Rates(rr)) = (&r.left, &r.right) else { panic!() };
            assert_eq!(fresh.compare(&l[..], &rr[..]).unwrap(), r.response);
        }

        let mut replay = ReplayOracle::from_records(&records);
        for (l, r) in &pairs {
            replay.compare(&l[..], &r[..]).unwrap();
        }
        assert!(matches!(replay.compare(&[0.0, 0.0][..], &[1.0, 1.0][..]), Err(Error::Suspended { index: 3, .. })));
        let mut replay = ReplayOracle::from_records(&records);
        assert!(matches!(replay.compare(&[0.0, 0.0][..], &[1.0, 1.0][..]), Err(Error::ReplayDiverged(0))));
    }

    fn quad_oracle(seed: u64) -> SimulatedOracle<QuadraticMetric> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() - 0.5);
        SimulatedOracle::new(QuadraticMetric::new(a, -(&m * m.transpose())).unwrap())
    }

    proptest! {
        #[test]
        fn noise_free_is_antisymmetric_and_transitive(
            seed in 0u64..200,
            x in proptest::collection::vec(0.0f64..1.0, 3),
            y in proptest::collection::vec(0.0f64..1.0, 3),
            z in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let mut o = quad_oracle(seed);
            let xy = o.compare(&x[..], &y[..]).unwrap();
            let yx = o.compare(&y[..], &x[..]).unwrap();
            prop_assert!(!(xy && yx));
            let yz = o.compare(&y[..], &z[..]).unwrap();
            if xy && yz {
                prop_assert!(o.compare(&x[..], &z[..]).unwrap());
            }
        }
    }
}

//! Monte Carlo permutation nulls of a performance metric.
//!
//! Each iteration shuffles the training and the test labels independently
//! (within confounder levels for the restricted scheme), retrains the learner
//! on the shuffled training labels and scores the untouched test features
//! against the shuffled test labels.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::metrics::MetricKind;
use crate::par::Execution;
use crate::rng;

/// Default number of permutations.
pub const DEFAULT_PERMUTATIONS: usize = 1000;

/// How labels are shuffled, and where the null came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Shuffle within confounder levels.
    Restricted,
    /// Unconstrained shuffle.
    Standard,
    /// Restricted shuffle on a subsample matched to a target population.
    Baseline,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Restricted => "restricted",
            Scheme::Standard => "standard",
            Scheme::Baseline => "baseline",
        }
    }

    fn is_restricted(self) -> bool {
        !matches!(self, Scheme::Standard)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "restricted" => Ok(Scheme::Restricted),
            "standard" => Ok(Scheme::Standard),
            "baseline" => Ok(Scheme::Baseline),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Shuffle `y` independently within each level of `c` (Fisher-Yates per
/// stratum, strata visited in level order).
pub fn restricted_shuffle<T: Copy, R: Rng + ?Sized>(
    y: &[T],
    c: &[usize],
    rng: &mut R,
) -> Result<Vec<T>> {
    if y.len() != c.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            got: c.len(),
        });
    }
    let n_levels = c.iter().max().map_or(0, |m| m + 1);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); n_levels];
    for (i, &level) in c.iter().enumerate() {
        strata[level].push(i);
    }
    let mut out = y.to_vec();
    let mut values = Vec::new();
    for members in strata.iter().filter(|m| m.len() > 1) {
        values.clear();
        values.extend(members.iter().map(|&i| y[i]));
        values.shuffle(rng);
        for (&i, &v) in members.iter().zip(&values) {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Uniform random permutation of `y`.
pub fn standard_shuffle<T: Copy, R: Rng + ?Sized>(y: &[T], rng: &mut R) -> Vec<T> {
    let mut out = y.to_vec();
    out.shuffle(rng);
    out
}

/// Monte Carlo metric samples from one permutation scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub samples: Vec<f64>,
    pub scheme: Scheme,
    pub metric: MetricKind,
}

impl NullDistribution {
    pub fn b(&self) -> usize {
        self.samples.len()
    }

    /// One sample per line.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.samples {
            writeln!(w, "{s}")?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_tsv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv<R: BufRead>(r: R, scheme: Scheme, metric: MetricKind) -> Result<Self> {
        let mut samples = Vec::new();
        for (row, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<tsv>", e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::NonNumeric {
                column: "sample".into(),
                row: row + 1,
                value: line.to_string(),
            })?;
            samples.push(v);
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            samples,
            scheme,
            metric,
        })
    }
}

/// Mean, sample standard deviation (divisor `b - 1`) and count.
/// `count` is `None` for analytic summaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSummary {
    pub mean: f64,
    pub sd: f64,
    pub count: Option<usize>,
}

impl NullSummary {
    pub fn new(mean: f64, sd: f64, count: Option<usize>) -> Result<Self> {
        if !mean.is_finite() || !sd.is_finite() || sd < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "invalid null summary: mean {mean}, sd {sd}"
            )));
        }
        Ok(Self { mean, sd, count })
    }
}

pub fn summarize(nd: &NullDistribution) -> Result<NullSummary> {
    summarize_samples(&nd.samples)
}

pub fn summarize_samples(samples: &[f64]) -> Result<NullSummary> {
    let b = samples.len();
    if b < 2 {
        return Err(Error::DegenerateNull(format!(
            "{b} sample(s); standard deviation needs at least 2"
        )));
    }
    let mean = samples.iter().sum::<f64>() / b as f64;
    let ss: f64 = samples.iter().map(|s| (s - mean) * (s - mean)).sum();
    NullSummary::new(mean, (ss / (b - 1) as f64).sqrt(), Some(b))
}

/// Settings for [`permutation_null`].
#[derive(Debug, Clone)]
pub struct NullConfig {
    pub metric: MetricKind,
    pub scheme: Scheme,
    pub permutations: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl NullConfig {
    pub fn new(metric: MetricKind, scheme: Scheme, permutations: usize, seed: u64) -> Self {
        Self {
            metric,
            scheme,
            permutations,
            seed,
            execution: Execution::default(),
        }
    }
}

/// Train/test views shared by every permutation iteration.
struct Prepared {
    x_train: crate::data::Matrix,
    x_test: crate::data::Matrix,
    y_train: Vec<u8>,
    y_test: Vec<u8>,
    c_train: Vec<usize>,
    c_test: Vec<usize>,
    w_train: Vec<f64>,
}

impl Prepared {
    fn new(ds: &Dataset, split: &SplitIndices) -> Result<Self> {
        let n = ds.n();
        if split.train.iter().chain(&split.test).any(|&i| i >= n) {
            return Err(Error::InvalidArgument("split index out of range".into()));
        }
        let pick = |idx: &[usize]| -> (Vec<u8>, Vec<usize>) {
            (
                idx.iter().map(|&i| ds.labels()[i]).collect(),
                idx.iter().map(|&i| ds.confounder().levels()[i]).collect(),
            )
        };
        let (y_train, c_train) = pick(&split.train);
        let (y_test, c_test) = pick(&split.test);
        let w = ds.weights_or_ones();
        Ok(Self {
            x_train: ds.features().select_rows(&split.train),
            x_test: ds.features().select_rows(&split.test),
            w_train: split.train.iter().map(|&i| w[i]).collect(),
            y_train,
            y_test,
            c_train,
            c_test,
        })
    }
}

/// Metric of `learner` trained on the training rows and scored on the test
/// rows, with the observed labels.
pub fn observed_metric(
    learner: &LearnerSpec,
    ds: &Dataset,
    split: &SplitIndices,
    metric: MetricKind,
) -> Result<f64> {
    let p = Prepared::new(ds, split)?;
    let model = learner.fit(&p.x_train, &p.y_train, &p.w_train)?;
    let scores = model.predict_proba(&p.x_test)?;
    let labels: Vec<f64> = p.y_test.iter().map(|&y| f64::from(y)).collect();
    metric.evaluate(&scores, &labels)
}

/// Permutation null of `cfg.metric`. Iteration `i` draws from
/// `rng::stream(cfg.seed, i)`, so the samples are identical for any thread
/// count or execution policy.
pub fn permutation_null(
    learner: &LearnerSpec,
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &NullConfig,
) -> Result<NullDistribution> {
    if cfg.permutations == 0 {
        return Err(Error::InvalidArgument(
            "number of permutations must be >= 1".into(),
        ));
    }
    learner.validate()?;
    let p = Prepared::new(ds, split)?;
    let restricted = cfg.scheme.is_restricted();
    let samples = cfg.execution.try_map(cfg.permutations, |i| {
        let run = || -> Result<f64> {
            let mut rng = rng::stream(cfg.seed, i as u64);
            let (y_train, y_test) = if restricted {
                (
                    restricted_shuffle(&p.y_train, &p.c_train, &mut rng)?,
                    restricted_shuffle(&p.y_test, &p.c_test, &mut rng)?,
                )
            } else {
                (
                    standard_shuffle(&p.y_train, &mut rng),
                    standard_shuffle(&p.y_test, &mut rng),
                )
            };
            let model = learner.fit(&p.x_train, &y_train, &p.w_train)?;
            let scores = model.predict_proba(&p.x_test)?;
            let labels: Vec<f64> = y_test.iter().map(|&y| f64::from(y)).collect();
            cfg.metric.evaluate(&scores, &labels)
        };
        run().map_err(|e| Error::Iteration {
            iteration: i,
            source: Box::new(e),
        })
    })?;
    Ok(NullDistribution {
        samples,
        scheme: cfg.scheme,
        metric: cfg.metric,
    })
}

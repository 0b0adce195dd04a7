//! Monte-Carlo model of merge quality.
//!
//! Candidate outputs are reduced to a consistency score in [0, 1] drawn
//! independently per candidate. The simulator measures how merging k scores
//! changes their spread, what filtering out weak candidates buys, and where
//! the score/cost objective peaks as k grows.
//!
//! Trials run in fixed-size blocks across threads. Each block draws from its
//! own ChaCha8 stream (seed, block index), and block moments are combined in
//! block order, so results are bit-identical for a given seed on any thread
//! count.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use thiserror::Error;

/// Minimum trial count accepted by the simulators.
pub const MIN_TRIALS: u64 = 1_000;
/// Clipping mass above which a model is flagged.
pub const CLIP_WARN: f64 = 0.01;
/// Slack for floating-point comparison in [`check_mean_bound`].
pub const MEAN_BOUND_EPS: f64 = 1e-12;

const BLOCK: u64 = 4_096;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid parameter {name}: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("need at least {min} trials, got {got}")]
    TooFewTrials { min: u64, got: u64 },
}

fn invalid(name: &'static str, message: impl Into<String>) -> TheoryError {
    TheoryError::InvalidParameter {
        name,
        message: message.into(),
    }
}

/// Shape of the per-candidate score distribution. All families are
/// parameterized by mean and variance; draws outside [0, 1] are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFamily {
    /// Uniform on μ ± √3σ.
    Uniform,
    /// Normal(μ, σ) clamped to [0, 1].
    TruncatedNormal,
    /// μ − σ or μ + σ with equal probability.
    BernoulliMixture,
    /// Beta with matching moments; needs σ² < μ(1 − μ). Never clamps.
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyModel {
    pub family: ScoreFamily,
    pub mean: f64,
    pub variance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Sampler {
    Const(f64),
    Uniform(Uniform<f64>),
    Normal(Normal<f64>),
    TwoPoint(f64, f64),
    Beta(Beta<f64>),
}

impl Sampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x = match self {
            Sampler::Const(c) => *c,
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Normal(d) => d.sample(rng),
            Sampler::TwoPoint(lo, hi) => {
                if rand::Rng::random::<bool>(rng) {
                    *hi
                } else {
                    *lo
                }
            }
            Sampler::Beta(d) => d.sample(rng),
        };
        x.clamp(0.0, 1.0)
    }
}

impl ConsistencyModel {
    pub fn new(family: ScoreFamily, mean: f64, variance: f64, seed: u64) -> Result<Self, TheoryError> {
        let model = Self {
            family,
            mean,
            variance,
            seed,
        };
        model.sampler()?;
        Ok(model)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    fn sampler(&self) -> Result<Sampler, TheoryError> {
        let (mu, var) = (self.mean, self.variance);
        if !(0.0..=1.0).contains(&mu) {
            return Err(invalid("mean", format!("{mu} is outside [0, 1]")));
        }
        if !(var.is_finite() && var >= 0.0) {
            return Err(invalid("variance", format!("{var} must be finite and ≥ 0")));
        }
        if var == 0.0 {
            return Ok(Sampler::Const(mu));
        }
        let sd = var.sqrt();
        Ok(match self.family {
            ScoreFamily::Uniform => {
                let h = 3f64.sqrt() * sd;
                Sampler::Uniform(Uniform::new_inclusive(mu - h, mu + h).map_err(|e| invalid("variance", e.to_string()))?)
            }
            ScoreFamily::TruncatedNormal => {
                Sampler::Normal(Normal::new(mu, sd).map_err(|e| invalid("variance", e.to_string()))?)
            }
            ScoreFamily::BernoulliMixture => Sampler::TwoPoint(mu - sd, mu + sd),
            ScoreFamily::Beta => {
                let limit = mu * (1.0 - mu);
                if var >= limit {
                    return Err(invalid(
                        "variance",
                        format!("beta needs variance < μ(1 − μ) = {limit}, got {var}"),
                    ));
                }
                let common = limit / var - 1.0;
                Sampler::Beta(
                    Beta::new(mu * common, (1.0 - mu) * common).map_err(|e| invalid("variance", e.to_string()))?,
                )
            }
        })
    }

    /// Beta shape parameters (α, β) for the [`ScoreFamily::Beta`] family.
    pub fn beta_shape(&self) -> Option<(f64, f64)> {
        if self.family != ScoreFamily::Beta || self.variance <= 0.0 {
            return None;
        }
        let common = self.mean * (1.0 - self.mean) / self.variance - 1.0;
        Some((self.mean * common, (1.0 - self.mean) * common))
    }

    /// Probability that a raw draw falls outside [0, 1] and gets clamped.
    pub fn clipping_mass(&self) -> f64 {
        let (mu, sd) = (self.mean, self.std_dev());
        if sd == 0.0 {
            return 0.0;
        }
        match self.family {
            ScoreFamily::Beta => 0.0,
            ScoreFamily::TruncatedNormal => {
                let n = NormalDist::new(mu, sd).expect("validated normal");
                n.cdf(0.0) + (1.0 - n.cdf(1.0))
            }
            ScoreFamily::Uniform => {
                let h = 3f64.sqrt() * sd;
                let outside = (0.0 - (mu - h)).max(0.0) + ((mu + h) - 1.0).max(0.0);
                outside / (2.0 * h)
            }
            ScoreFamily::BernoulliMixture => {
                0.5 * f64::from(u8::from(mu - sd < 0.0)) + 0.5 * f64::from(u8::from(mu + sd > 1.0))
            }
        }
    }

    fn warn_if_clipped(&self) {
        let mass = self.clipping_mass();
        if mass > CLIP_WARN {
            tracing::warn!(
                family = ?self.family,
                mean = self.mean,
                variance = self.variance,
                clipping_mass = mass,
                "score distribution clips more than 1% of its mass; variance will fall short of the nominal value"
            );
        }
    }
}

/// How selected scores are merged into one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MergePolicy {
    Mean,
    BestOf,
    /// Rank-decayed weights `decay^i` (best first), normalized.
    Weighted { decay: f64 },
}

/// Merges scores given best-first. Panics on an empty slice.
pub fn merge_scores(policy: MergePolicy, ranked: &[f64]) -> f64 {
    assert!(!ranked.is_empty(), "merge needs at least one score");
    match policy {
        MergePolicy::Mean => ranked.iter().sum::<f64>() / ranked.len() as f64,
        MergePolicy::BestOf => ranked.iter().copied().fold(f64::MIN, f64::max),
        MergePolicy::Weighted { decay } => {
            let mut w = 1.0;
            let (mut num, mut den) = (0.0, 0.0);
            for s in ranked {
                num += w * s;
                den += w;
                w *= decay;
            }
            num / den
        }
    }
}

/// How candidates are ranked before the top-k cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SelectorOracle {
    /// Ranks by true score.
    Perfect,
    /// Ranks by true score plus N(0, noise_sd²).
    Noisy { noise_sd: f64 },
}

impl SelectorOracle {
    /// Reorders `scores` best-first as this oracle sees them.
    fn rank(&self, scores: &mut [f64], keys: &mut Vec<(f64, f64)>, rng: &mut ChaCha8Rng) {
        keys.clear();
        for &s in scores.iter() {
            let observed = match self {
                SelectorOracle::Perfect => s,
                SelectorOracle::Noisy { noise_sd } => {
                    let z: f64 = StandardNormal.sample(rng);
                    s + noise_sd * z
                }
            };
            keys.push((observed, s));
        }
        keys.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (slot, (_, s)) in scores.iter_mut().zip(keys.iter()) {
            *slot = *s;
        }
    }
}

/// Running mean and sum of squared deviations; blocks combine exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.count as f64 * other.count as f64) / count as f64;
        Moments { count, mean, m2 }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Default)]
struct Scratch {
    scores: Vec<f64>,
    keys: Vec<(f64, f64)>,
}

fn run_trials<F>(seed: u64, trials: u64, trial: F) -> Moments
where
    F: Fn(&mut ChaCha8Rng, &mut Scratch) -> f64 + Sync,
{
    let blocks = trials.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let mut scratch = Scratch::default();
            let mut m = Moments::default();
            for _ in 0..BLOCK.min(trials - b * BLOCK) {
                m.push(trial(&mut rng, &mut scratch));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

fn check_trials(trials: u64) -> Result<(), TheoryError> {
    if trials < MIN_TRIALS {
        return Err(TheoryError::TooFewTrials {
            min: MIN_TRIALS,
            got: trials,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStats {
    pub empirical_mean: f64,
    pub empirical_variance: f64,
    pub trials: u64,
}

impl From<Moments> for MergeStats {
    fn from(m: Moments) -> Self {
        Self {
            empirical_mean: m.mean,
            empirical_variance: m.variance(),
            trials: m.count,
        }
    }
}

/// Moments of the mean of `k` independent scores.
pub fn simulate_merge_variance(model: &ConsistencyModel, k: usize, trials: u64) -> Result<MergeStats, TheoryError> {
    check_trials(trials)?;
    if k == 0 {
        return Err(invalid("k", "k must be ≥ 1"));
    }
    let sampler = model.sampler()?;
    model.warn_if_clipped();
    let m = run_trials(model.seed, trials, |rng, _| {
        (0..k).map(|_| sampler.sample(rng)).sum::<f64>() / k as f64
    });
    Ok(m.into())
}

/// True iff `merged` does not exceed the mean of `scores` (up to
/// [`MEAN_BOUND_EPS`]). Empty `scores` never satisfy the bound.
pub fn check_mean_bound(scores: &[f64], merged: f64) -> bool {
    if scores.is_empty() {
        return false;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    merged <= mean + MEAN_BOUND_EPS
}

/// `1 − Π sᵢ`, computed exactly.
pub fn cumulative_error(per_step: &[Decimal]) -> Result<Decimal, TheoryError> {
    let mut product = Decimal::ONE;
    for s in per_step {
        if *s < Decimal::ZERO || *s > Decimal::ONE {
            return Err(invalid("per_step_consistencies", format!("{s} is outside [0, 1]")));
        }
        product = product
            .checked_mul(*s)
            .ok_or_else(|| invalid("per_step_consistencies", "product overflowed"))?;
    }
    Ok(Decimal::ONE - product)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollutionParams {
    pub good: ConsistencyModel,
    pub bad: ConsistencyModel,
    pub n_good: usize,
    pub n_bad: usize,
    pub policy: MergePolicy,
    /// Keep only the top `k` (as ranked by `oracle`) before merging.
    pub with_filter: bool,
    pub k: usize,
    pub oracle: SelectorOracle,
    pub trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PollutionStats {
    pub mean_merged_score: f64,
    pub variance: f64,
    pub trials: u64,
}

/// Mean merged score for a pool mixing good and bad candidates. Draws come
/// from the good model's seed.
pub fn simulate_pool_pollution(p: &PollutionParams) -> Result<PollutionStats, TheoryError> {
    check_trials(p.trials)?;
    let n = p.n_good + p.n_bad;
    if p.k == 0 || p.k > n {
        return Err(invalid("k", format!("need 1 ≤ k ≤ {n}, got {}", p.k)));
    }
    let good = p.good.sampler()?;
    let bad = p.bad.sampler()?;
    p.good.warn_if_clipped();
    p.bad.warn_if_clipped();
    let m = run_trials(p.good.seed, p.trials, |rng, s| {
        s.scores.clear();
        s.scores.extend((0..p.n_good).map(|_| good.sample(rng)));
        s.scores.extend((0..p.n_bad).map(|_| bad.sample(rng)));
        if p.with_filter {
            p.oracle.rank(&mut s.scores, &mut s.keys, rng);
            merge_scores(p.policy, &s.scores[..p.k])
        } else {
            merge_scores(p.policy, &s.scores)
        }
    });
    Ok(PollutionStats {
        mean_merged_score: m.mean,
        variance: m.variance(),
        trials: m.count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub model: ConsistencyModel,
    /// Pool size N; k runs over 1..=N.
    pub pool_size: usize,
    pub cost_per_candidate: f64,
    pub merge_cost: f64,
    pub lambda: f64,
    pub policy: MergePolicy,
    pub oracle: SelectorOracle,
    pub trials: u64,
}

/// One row of a k sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    pub expected_score: f64,
    pub total_cost: f64,
    pub objective: f64,
}

/// Estimates E[S_k] for top-k-of-N selection and the objective
/// `E[S_k] − λ·(k·cost_per_candidate + merge_cost)` for each k. Each k uses
/// the same seed, so the sweeps share their candidate draws.
pub fn sweep_k_objective(p: &SweepParams) -> Result<Vec<KPoint>, TheoryError> {
    check_trials(p.trials)?;
    if p.pool_size == 0 {
        return Err(invalid("pool_size", "N must be ≥ 1"));
    }
    if !(p.lambda.is_finite() && p.lambda >= 0.0) {
        return Err(invalid("lambda", "lambda must be finite and ≥ 0"));
    }
    let sampler = p.model.sampler()?;
    p.model.warn_if_clipped();
    let points = (1..=p.pool_size)
        .map(|k| {
            let m = run_trials(p.model.seed, p.trials, |rng, s| {
                s.scores.clear();
                s.scores.extend((0..p.pool_size).map(|_| sampler.sample(rng)));
                p.oracle.rank(&mut s.scores, &mut s.keys, rng);
                merge_scores(p.policy, &s.scores[..k])
            });
            let total_cost = k as f64 * p.cost_per_candidate + p.merge_cost;
            KPoint {
                k,
                expected_score: m.mean,
                total_cost,
                objective: crate::cost::objective(m.mean, total_cost, p.lambda),
            }
        })
        .collect();
    Ok(points)
}

/// Splits sweep rows into the score and cost maps taken by
/// [`crate::cost::optimal_k`].
pub fn sweep_maps(points: &[KPoint]) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let scores = points.iter().map(|p| (p.k, p.expected_score)).collect();
    let costs = points.iter().map(|p| (p.k, p.total_cost)).collect();
    (scores, costs)
}

/// Writes `k,expected_score,total_cost,objective` rows.
pub fn write_sweep_csv<W: Write>(points: &[KPoint], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

//! Finite-support probability distributions in log space.
//!
//! A [`Categorical`] stores normalized natural-log masses together with an
//! explicit support mask. Zero-mass entries carry `f64::NEG_INFINITY` and are
//! never sampled; nothing is approximated by a tiny epsilon.
//!
//! Random draws use ChaCha8 (`rand_chacha`), seeded through
//! `SeedableRng::seed_from_u64` and split into independent streams with
//! `set_stream`, so every trace is reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of every constructed distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// The generator behind every stochastic operation in the crate.
pub type LabRng = ChaCha8Rng;

/// Builds the generator for `seed` on an independent `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Numerically stable `log Σ exp(x)`. Returns `-inf` when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Probability vector over `0..n` held as normalized log-masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    log_masses: Vec<f64>,
    support_mask: Vec<bool>,
}

/// Shifts `log_weights` by their log-sum-exp. `-inf` entries become masked.
pub fn normalize(log_weights: &[f64]) -> Result<Categorical> {
    Categorical::from_log_weights(log_weights)
}

impl Categorical {
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if let Some(i) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidDistribution(format!(
                "log-weight at index {i} is {}",
                log_weights[i]
            )));
        }
        let lse = log_sum_exp(log_weights);
        if !lse.is_finite() {
            return Err(Error::InvalidDistribution("no finite log-weight".into()));
        }
        let support_mask: Vec<bool> = log_weights.iter().map(|w| w.is_finite()).collect();
        let log_masses = log_weights
            .iter()
            .map(|&w| if w.is_finite() { w - lse } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self { log_masses, support_mask })
    }

    /// Builds from nonnegative (possibly unnormalized) masses; exact zeros are masked.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        if let Some(i) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "mass at index {i} is {}",
                masses[i]
            )));
        }
        let logs: Vec<f64> = masses
            .iter()
            .map(|&m| if m > 0.0 { m.ln() } else { f64::NEG_INFINITY })
            .collect();
        Self::from_log_weights(&logs)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_log_weights(&vec![0.0; n])
    }

    pub fn point_mass(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::InvalidDistribution(format!("index {index} out of range for n = {n}")));
        }
        let mut w = vec![f64::NEG_INFINITY; n];
        w[index] = 0.0;
        Self::from_log_weights(&w)
    }

    pub fn len(&self) -> usize {
        self.log_masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_masses.is_empty()
    }

    pub fn log_masses(&self) -> &[f64] {
        &self.log_masses
    }

    pub fn log_mass(&self, i: usize) -> f64 {
        self.log_masses[i]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.log_masses[i].exp()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.log_masses.iter().map(|l| l.exp()).collect()
    }

    pub fn support_mask(&self) -> &[bool] {
        &self.support_mask
    }

    pub fn is_supported(&self, i: usize) -> bool {
        self.support_mask[i]
    }

    pub fn support_size(&self) -> usize {
        self.support_mask.iter().filter(|&&s| s).count()
    }

    /// Total mass over `indices`.
    pub fn mass_of<I: IntoIterator<Item = usize>>(&self, indices: I) -> f64 {
        indices.into_iter().map(|i| self.mass(i)).sum()
    }

    fn check_len(&self, other: &Categorical) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch { expected: self.len(), found: other.len() });
        }
        Ok(())
    }
}

/// Shannon entropy in nats; masked entries contribute nothing.
pub fn entropy(p: &Categorical) -> f64 {
    -p.log_masses
        .iter()
        .zip(&p.support_mask)
        .filter(|(_, &s)| s)
        .map(|(&l, _)| l.exp() * l)
        .sum::<f64>()
}

/// `KL(p || q) = Σ p (log p - log q)` with `0 log 0 = 0`.
///
/// Fails with [`Error::InfiniteDivergence`] when `p` has support outside `q`.
pub fn kl(p: &Categorical, q: &Categorical) -> Result<f64> {
    p.check_len(q)?;
    let mut total = 0.0;
    for i in 0..p.len() {
        if !p.support_mask[i] {
            continue;
        }
        if !q.support_mask[i] {
            return Err(Error::InfiniteDivergence { index: i });
        }
        let lp = p.log_masses[i];
        total += lp.exp() * (lp - q.log_masses[i]);
    }
    Ok(total)
}

/// Total variation distance `½ Σ |p - q|`.
pub fn tv_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    p.check_len(q)?;
    let sum: f64 = (0..p.len()).map(|i| (p.mass(i) - q.mass(i)).abs()).sum();
    Ok((0.5 * sum).min(1.0))
}

/// Inverse-CDF sampler over a fixed distribution.
#[derive(Debug, Clone)]
pub struct Sampler {
    cdf: Vec<f64>,
    last_supported: usize,
}

impl Sampler {
    pub fn new(p: &Categorical) -> Self {
        let mut acc = 0.0;
        let cdf = p
            .log_masses
            .iter()
            .map(|l| {
                acc += l.exp();
                acc
            })
            .collect();
        let last_supported = p
            .support_mask
            .iter()
            .rposition(|&s| s)
            .expect("a Categorical always has support");
        Self { cdf, last_supported }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        // first index whose cumulative mass exceeds u; masked entries never qualify
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.last_supported)
    }

    pub fn draw_many<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.draw(rng)).collect()
    }
}

/// Draws `count` indices from `p`, deterministic in `seed`.
pub fn sample(p: &Categorical, seed: u64, count: usize) -> Vec<usize> {
    let mut rng = seeded_rng(seed, 0);
    Sampler::new(p).draw_many(&mut rng, count)
}

/// One finite reward per support index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("empty reward vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "reward at index {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl TryFrom<Vec<f64>> for RewardVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RewardVector> for Vec<f64> {
    fn from(r: RewardVector) -> Self {
        r.0
    }
}

//! Problem instances: a reference distribution paired with a reward vector.
//!
//! Scenarios are written in TOML. A file names the support size `n` and gives
//! the reference and the rewards either as explicit lists or as named shapes:
//!
//! ```toml
//! name = "example"
//! n = 100
//! modes = [20, 40]      # optional peak indices used for per-mode metrics
//! tau = 0.5             # optional "good answer" threshold
//!
//! [reference]
//! shape = "mixture"     # explicit | uniform | half_support | mixture
//! floor = 1.0
//! support = [0, 50]     # half-open index range, optional
//! components = [{ center = 5.0, width = 3.0, weight = 38.0 }]
//!
//! [rewards]
//! shape = "two_mode"    # explicit | two_mode
//! profile = "gaussian"  # gaussian | plateau
//! baseline = 0.0
//! modes = [
//!     { center = 20.0, width = 2.0, height = 0.75 },
//!     { center = 40.0, width = 2.0, height = 1.0 },
//! ]
//! ```
//!
//! `explicit` references take `masses = [...]` (normalized on load, zeros are
//! off-support); `explicit` rewards take `values = [...]`. Both must have
//! exactly `n` entries.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{Categorical, RewardVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<usize>>,
    pub reference: ReferenceSpec,
    pub rewards: RewardSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ReferenceSpec {
    Explicit {
        masses: Vec<f64>,
    },
    Uniform {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<[usize; 2]>,
    },
    HalfSupport,
    Mixture {
        components: Vec<Bump>,
        #[serde(default)]
        floor: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<[usize; 2]>,
    },
}

/// Unnormalized Gaussian bump `weight · exp(-(i - center)² / (2 width²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RewardSpec {
    Explicit {
        values: Vec<f64>,
    },
    TwoMode {
        #[serde(default)]
        baseline: f64,
        #[serde(default)]
        profile: Profile,
        modes: Vec<RewardMode>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `height · exp(-(i - center)² / (2 width²))`, floored at the baseline.
    #[default]
    Gaussian,
    /// `height` on `|i - center| ≤ width`, baseline elsewhere.
    Plateau,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardMode {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

/// A reference distribution and reward vector over the same support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub reference: Categorical,
    pub rewards: RewardVector,
    /// Peak indices of the reward modes; empty means auto-detect.
    #[serde(default)]
    pub mode_peaks: Vec<usize>,
    #[serde(default)]
    pub tau: Option<f64>,
}

fn check_range(range: [usize; 2], n: usize, what: &str) -> Result<Range<usize>> {
    let [lo, hi] = range;
    if lo >= hi || hi > n {
        return Err(Error::InvalidConfig(format!(
            "{what} range [{lo}, {hi}) is empty or exceeds n = {n}"
        )));
    }
    Ok(lo..hi)
}

impl ReferenceSpec {
    fn build(&self, n: usize) -> Result<Categorical> {
        let masses = match self {
            ReferenceSpec::Explicit { masses } => {
                if masses.len() != n {
                    return Err(Error::LengthMismatch { expected: n, found: masses.len() });
                }
                masses.clone()
            }
            ReferenceSpec::Uniform { support } => {
                let range = match support {
                    Some(r) => check_range(*r, n, "reference support")?,
                    None => 0..n,
                };
                (0..n).map(|i| if range.contains(&i) { 1.0 } else { 0.0 }).collect()
            }
            ReferenceSpec::HalfSupport => {
                let half = n.div_ceil(2);
                (0..n).map(|i| if i < half { 1.0 } else { 0.0 }).collect()
            }
            ReferenceSpec::Mixture { components, floor, support } => {
                if !(floor.is_finite() && *floor >= 0.0) {
                    return Err(Error::InvalidConfig(format!("mixture floor must be >= 0, got {floor}")));
                }
                for c in components {
                    if !(c.width > 0.0 && c.weight >= 0.0 && c.center.is_finite()) {
                        return Err(Error::InvalidConfig(format!(
                            "mixture component {c:?} needs width > 0 and weight >= 0"
                        )));
                    }
                }
                let range = match support {
                    Some(r) => check_range(*r, n, "reference support")?,
                    None => 0..n,
                };
                (0..n)
                    .map(|i| {
                        if !range.contains(&i) {
                            return 0.0;
                        }
                        let x = i as f64;
                        floor
                            + components
                                .iter()
                                .map(|c| c.weight * (-(x - c.center).powi(2) / (2.0 * c.width * c.width)).exp())
                                .sum::<f64>()
                    })
                    .collect()
            }
        };
        Categorical::from_masses(&masses)
    }
}

impl RewardSpec {
    fn build(&self, n: usize) -> Result<RewardVector> {
        match self {
            RewardSpec::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::LengthMismatch { expected: n, found: values.len() });
                }
                RewardVector::new(values.clone())
            }
            RewardSpec::TwoMode { baseline, profile, modes } => {
                if modes.len() != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "two_mode rewards need exactly 2 modes, got {}",
                        modes.len()
                    )));
                }
                for m in modes {
                    if !(m.width > 0.0 && m.center >= 0.0 && m.center < n as f64 && m.height.is_finite()) {
                        return Err(Error::InvalidConfig(format!(
                            "reward mode {m:?} must have width > 0 and a center inside [0, {n})"
                        )));
                    }
                }
                let values = (0..n)
                    .map(|i| {
                        let x = i as f64;
                        modes.iter().fold(*baseline, |acc, m| {
                            let v = match profile {
                                Profile::Gaussian => {
                                    m.height * (-(x - m.center).powi(2) / (2.0 * m.width * m.width)).exp()
                                }
                                Profile::Plateau => {
                                    if (x - m.center).abs() <= m.width {
                                        m.height
                                    } else {
                                        *baseline
                                    }
                                }
                            };
                            acc.max(v)
                        })
                    })
                    .collect();
                RewardVector::new(values)
            }
        }
    }
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let reference = self.reference.build(self.n)?;
        let rewards = self.rewards.build(self.n)?;
        let mode_peaks = match (&self.modes, &self.rewards) {
            (Some(m), _) => m.clone(),
            (None, RewardSpec::TwoMode { modes, .. }) => {
                modes.iter().map(|m| m.center.round() as usize).collect()
            }
            (None, RewardSpec::Explicit { .. }) => Vec::new(),
        };
        let mut s = Scenario::new(&self.name, reference, rewards)?;
        if let Some(&bad) = mode_peaks.iter().find(|&&p| p >= self.n) {
            return Err(Error::InvalidConfig(format!("mode peak {bad} outside [0, {})", self.n)));
        }
        s.mode_peaks = mode_peaks;
        s.tau = self.tau;
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl Scenario {
    pub fn new(name: &str, reference: Categorical, rewards: RewardVector) -> Result<Self> {
        if reference.len() != rewards.len() {
            return Err(Error::LengthMismatch { expected: reference.len(), found: rewards.len() });
        }
        Ok(Self {
            name: name.to_string(),
            reference,
            rewards,
            mode_peaks: Vec::new(),
            tau: None,
        })
    }

    /// Convenience constructor from plain reference masses and rewards.
    pub fn from_parts(name: &str, reference_masses: &[f64], rewards: &[f64]) -> Result<Self> {
        Self::new(
            name,
            Categorical::from_masses(reference_masses)?,
            RewardVector::new(rewards.to_vec())?,
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        ScenarioSpec::from_toml(text)?.build()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn n(&self) -> usize {
        self.reference.len()
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards.get(i)
    }

    pub fn ref_log_prob(&self, i: usize) -> f64 {
        self.reference.log_mass(i)
    }

    /// Replaces the rewards, keeping the reference and metadata.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self> {
        let rewards = RewardVector::new(rewards)?;
        if rewards.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), found: rewards.len() });
        }
        Ok(Self { rewards, ..self.clone() })
    }

    /// The scenario's "good answer" threshold: `tau` if set, else half the max reward.
    pub fn threshold(&self) -> f64 {
        self.tau.unwrap_or_else(|| 0.5 * self.rewards.max())
    }

    /// Peak index of each reward mode.
    pub fn peaks(&self) -> Vec<usize> {
        if !self.mode_peaks.is_empty() {
            return self.mode_peaks.clone();
        }
        let r = self.rewards.values();
        let cut = 0.5 * self.rewards.max();
        let mut peaks = Vec::new();
        let mut i = 0;
        while i < r.len() {
            if r[i] > cut {
                let start = i;
                while i < r.len() && r[i] > cut {
                    i += 1;
                }
                let best = (start..i)
                    .fold(start, |b, j| if r[j] > r[b] { j } else { b });
                peaks.push(best);
            } else {
                i += 1;
            }
        }
        peaks
    }

    /// Index range of every reward mode: the contiguous run around each peak
    /// where the reward exceeds half of the peak height.
    pub fn mode_ranges(&self) -> Vec<Range<usize>> {
        let r = self.rewards.values();
        self.peaks()
            .into_iter()
            .map(|p| {
                let cut = 0.5 * r[p];
                let mut lo = p;
                while lo > 0 && r[lo - 1] > cut {
                    lo -= 1;
                }
                let mut hi = p + 1;
                while hi < r.len() && r[hi] > cut {
                    hi += 1;
                }
                lo..hi
            })
            .collect()
    }

    /// Mass `p` assigns to each mode range.
    pub fn mode_masses(&self, p: &Categorical) -> Vec<f64> {
        self.mode_ranges().into_iter().map(|r| p.mass_of(r)).collect()
    }

    /// Indices whose reward reaches `tau`.
    pub fn above(&self, tau: f64) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.reward(i) >= tau).collect()
    }
}

macro_rules! shipped {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/", $file, ".toml")))),*]
    };
}

const FIGURE_SCENARIOS: &[(&str, &str)] = shipped![
    "fig2_two_mode",
    "equal_reference_varied_reward",
    "equal_reward_unequal_support",
    "forward_off_support",
    "mara_toy",
];

const AUXILIARY_SCENARIOS: &[(&str, &str)] = shipped!["two_point"];

/// The five 100-token scenarios behind the figure reproductions.
pub fn builtin_scenarios() -> Vec<Scenario> {
    FIGURE_SCENARIOS
        .iter()
        .map(|(_, text)| Scenario::from_toml(text).expect("shipped scenario files are valid"))
        .collect()
}

/// Names accepted by [`scenario_by_name`].
pub fn builtin_names() -> Vec<&'static str> {
    FIGURE_SCENARIOS
        .iter()
        .chain(AUXILIARY_SCENARIOS)
        .map(|(name, _)| *name)
        .collect()
}

/// The TOML source of a shipped scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    FIGURE_SCENARIOS
        .iter()
        .chain(AUXILIARY_SCENARIOS)
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn scenario_by_name(name: &str) -> Option<Scenario> {
    builtin_source(name).map(|t| Scenario::from_toml(t).expect("shipped scenario files are valid"))
}

/// Resolves a builtin name first, then a TOML file path.
pub fn resolve_scenario(name_or_path: &str) -> Result<Scenario> {
    if let Some(s) = scenario_by_name(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return Scenario::load(path);
    }
    Err(Error::InvalidConfig(format!(
        "unknown scenario '{name_or_path}' (builtins: {})",
        builtin_names().join(", ")
    )))
}

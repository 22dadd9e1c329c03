use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::TargetTag;
use crate::error::{Error, Result};
use crate::projection::RowDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Scaling,
    Pruning,
    Dropout,
    Memorization,
    LshProfile,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Pruning => "pruning",
            ExperimentKind::Dropout => "dropout",
            ExperimentKind::Memorization => "memorization",
            ExperimentKind::LshProfile => "lsh_profile",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.trim().to_string()))
            .map_err(|_| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Code used by the overlap profile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileCode {
    #[default]
    TopK,
    Threshold,
}

/// Base inputs for the overlap profile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileInputs {
    /// Uniform on the unit sphere of `R^n`.
    #[default]
    Sphere,
    /// Points of the first configured manifold.
    Manifold,
}

/// One experiment run. Every random choice derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    /// Ambient input dimension.
    #[serde(default = "defaults::n")]
    pub n: usize,
    pub d_values: Vec<usize>,
    /// Empty: `k = ceil(8 ln d)` for each `d`.
    #[serde(default)]
    pub k_values: Vec<usize>,
    #[serde(default = "defaults::m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "defaults::fit_size")]
    pub fit_size: usize,
    #[serde(default = "defaults::test_size")]
    pub test_size: usize,
    /// Separate calibration draw size; `None` calibrates on the fitting inputs.
    /// The pruning experiment always uses a separate draw (default 10000).
    #[serde(default)]
    pub calibration_size: Option<usize>,
    /// `gaussian`, `gaussian:<sigma>` or `unit_sphere`.
    #[serde(default = "defaults::distribution")]
    pub distribution: String,
    #[serde(default = "defaults::target")]
    pub target: String,
    #[serde(default = "defaults::frequency_count")]
    pub frequency_count: usize,
    #[serde(default = "defaults::max_frequency")]
    pub max_frequency: u32,
    #[serde(default = "defaults::amplitude")]
    pub amplitude: f64,
    #[serde(default = "defaults::dropout_rates")]
    pub dropout_rates: Vec<f64>,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::radii")]
    pub radii: Vec<f64>,
    #[serde(default = "defaults::pairs_per_radius")]
    pub pairs_per_radius: usize,
    #[serde(default)]
    pub profile_code: ProfileCode,
    #[serde(default)]
    pub profile_inputs: ProfileInputs,
    /// Probe inputs for pruning are manifold points scaled by this factor.
    #[serde(default = "defaults::probe_scale")]
    pub probe_scale: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

mod defaults {
    pub fn trials() -> usize {
        1
    }
    pub fn n() -> usize {
        20
    }
    pub fn m_values() -> Vec<usize> {
        vec![1]
    }
    pub fn fit_size() -> usize {
        5000
    }
    pub fn test_size() -> usize {
        1000
    }
    pub fn distribution() -> String {
        "gaussian".into()
    }
    pub fn target() -> String {
        "lipschitz_trig".into()
    }
    pub fn frequency_count() -> usize {
        3
    }
    pub fn max_frequency() -> u32 {
        2
    }
    pub fn amplitude() -> f64 {
        1.0
    }
    pub fn dropout_rates() -> Vec<f64> {
        vec![0.0, 0.25, 0.5, 0.75]
    }
    pub fn classes() -> usize {
        4
    }
    pub fn radii() -> Vec<f64> {
        vec![0.0, 0.01, 0.1, 1.0, 10.0]
    }
    pub fn pairs_per_radius() -> usize {
        1000
    }
    pub fn probe_scale() -> f64 {
        1.5
    }
}

/// Default sparsity for expansion dimension `d`: `ceil(8 ln d)`, clamped to `[1, d]`.
pub fn default_k(d: usize) -> usize {
    ((8.0 * (d as f64).ln()).ceil() as usize).clamp(1, d.max(1))
}

impl ExperimentConfig {
    /// A config with every optional field at its default.
    pub fn new(experiment: ExperimentKind, d_values: Vec<usize>) -> Self {
        let value = serde_json::json!({ "experiment": experiment, "d_values": d_values });
        serde_json::from_value(value).expect("defaults deserialize")
    }

    /// Parses a JSON document, applies `key=value` overrides (values are parsed as
    /// JSON when possible, otherwise taken as strings) and validates the result.
    pub fn from_json_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let object = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        for (key, raw) in overrides {
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            object.insert(key.clone(), parsed);
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn row_distribution(&self) -> Result<RowDistribution> {
        RowDistribution::parse(&self.distribution, self.n)
    }

    pub fn target_tag(&self) -> Result<TargetTag> {
        self.target.parse()
    }

    /// The sparsities paired with `d`.
    pub fn ks_for(&self, d: usize) -> Vec<usize> {
        if self.k_values.is_empty() {
            vec![default_k(d)]
        } else {
            self.k_values.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.n == 0 {
            return fail("n must be positive".into());
        }
        if self.d_values.is_empty() || self.d_values.contains(&0) {
            return fail("d_values must be non-empty and positive".into());
        }
        if self.m_values.is_empty() {
            return fail("m_values must be non-empty".into());
        }
        for &m in &self.m_values {
            if m == 0 || m >= self.n {
                return fail(format!("every m must satisfy 1 <= m < n (m = {m}, n = {})", self.n));
            }
        }
        for &d in &self.d_values {
            for k in self.ks_for(d) {
                if k == 0 || k > d {
                    return fail(format!("every k must satisfy 1 <= k <= d (k = {k}, d = {d})"));
                }
            }
        }
        if self.fit_size < 2 || self.test_size == 0 {
            return fail("fit_size must be at least 2 and test_size at least 1".into());
        }
        if matches!(self.calibration_size, Some(s) if s < 2) {
            return fail("calibration_size must be at least 2".into());
        }
        self.row_distribution()?;
        self.target_tag()?;
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) || self.frequency_count == 0 || self.max_frequency == 0
        {
            return fail("manifold amplitude, frequency_count and max_frequency must be positive".into());
        }
        match self.experiment {
            ExperimentKind::Scaling => {
                let mut distinct = self.d_values.clone();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() < 3 {
                    return fail(format!(
                        "scaling needs at least 3 distinct d values, got {}",
                        distinct.len()
                    ));
                }
                let ratio = distinct[1] as f64 / distinct[0] as f64;
                if distinct
                    .windows(2)
                    .any(|w| ((w[1] as f64 / w[0] as f64) / ratio - 1.0).abs() > 1e-9)
                {
                    return fail(format!(
                        "scaling d values must form a geometric progression, got {distinct:?}"
                    ));
                }
            }
            ExperimentKind::Dropout => {
                if self.dropout_rates.is_empty() || self.dropout_rates.iter().any(|p| !(0.0..1.0).contains(p)) {
                    return fail("dropout_rates must be non-empty and lie in [0, 1)".into());
                }
            }
            ExperimentKind::Memorization => {
                if self.classes < 2 {
                    return fail("memorization needs at least 2 classes".into());
                }
            }
            ExperimentKind::LshProfile => {
                if self.radii.is_empty()
                    || self.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0))
                    || self.radii.windows(2).any(|w| w[0] >= w[1])
                {
                    return fail("radii must be non-negative and strictly increasing".into());
                }
                if self.pairs_per_radius == 0 {
                    return fail("pairs_per_radius must be at least 1".into());
                }
            }
            ExperimentKind::Pruning => {
                if !(self.probe_scale > 0.0 && self.probe_scale.is_finite()) {
                    return fail("probe_scale must be positive".into());
                }
            }
        }
        Ok(())
    }
}

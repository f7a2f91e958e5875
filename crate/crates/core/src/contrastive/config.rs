use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::predictor::AdaptOptions;

use super::ContrastiveError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightMode {
    /// Entropy confidence for α, Jensen–Shannon divergence for β.
    Adaptive,
    Fixed {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "half_ln2")]
        beta: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn half_ln2() -> f64 {
    0.5 * LN_2
}

impl WeightMode {
    /// `Fixed` with α = 1 and β = ½·ln 2.
    pub fn fixed_default() -> Self {
        WeightMode::Fixed {
            alpha: one(),
            beta: half_ln2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardPolicy {
    /// Drop discarded positions.
    Compact,
    /// Keep discarded positions as the padding item (diagnostics only; the
    /// result is not a valid target sequence).
    PlaceholderToken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegenerationConfig {
    pub use_source_expert: bool,
    pub use_global: bool,
    pub use_local: bool,
    pub weight_mode: WeightMode,
    pub discard_policy: DiscardPolicy,
    /// Sample replacements from `softmax(score / τ)` instead of taking the argmax.
    pub temperature: Option<f64>,
    pub seed: u64,
}

impl Default for RegenerationConfig {
    fn default() -> Self {
        Self {
            use_source_expert: true,
            use_global: true,
            use_local: true,
            weight_mode: WeightMode::Adaptive,
            discard_policy: DiscardPolicy::Compact,
            temperature: None,
            seed: 42,
        }
    }
}

impl RegenerationConfig {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        let bad = |m: &str| Err(ContrastiveError::InvalidConfig(m.to_string()));
        if !self.use_global && !self.use_local {
            return bad("at least one of use_global and use_local must be enabled");
        }
        if let WeightMode::Fixed { alpha, beta } = self.weight_mode {
            if !(0.0..=1.0).contains(&alpha) || !(0.0..=LN_2).contains(&beta) {
                return bad("fixed weights need alpha in [0, 1] and beta in [0, ln 2]");
            }
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return bad("temperature must be positive");
            }
        }
        Ok(())
    }
}

/// Named ablations.
///
/// | name | effect |
/// |---|---|
/// | `full` | nothing disabled |
/// | `w/o-DSA` | experts trained from scratch instead of from the base model |
/// | `DSA-w/o-DSP` | experts trained on domain-only subsequences |
/// | `DSP-w/o-SDE` | no source-expert term (β = 0) |
/// | `DSP-w/o-GCS` | no global score, so nothing is discarded |
/// | `DSP-w/o-LCS` | replacement taken from the global score |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    WithoutDsa,
    DsaWithoutDsp,
    DspWithoutSde,
    DspWithoutGcs,
    DspWithoutLcs,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Full,
        Preset::WithoutDsa,
        Preset::DsaWithoutDsp,
        Preset::DspWithoutSde,
        Preset::DspWithoutGcs,
        Preset::DspWithoutLcs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::WithoutDsa => "w/o-DSA",
            Preset::DsaWithoutDsp => "DSA-w/o-DSP",
            Preset::DspWithoutSde => "DSP-w/o-SDE",
            Preset::DspWithoutGcs => "DSP-w/o-GCS",
            Preset::DspWithoutLcs => "DSP-w/o-LCS",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(name))
    }

    /// Resets the ablation flags to this preset's values.
    pub fn apply(self, adapt: &mut AdaptOptions, regen: &mut RegenerationConfig) {
        *adapt = AdaptOptions::default();
        regen.use_source_expert = true;
        regen.use_global = true;
        regen.use_local = true;
        match self {
            Preset::Full => {}
            Preset::WithoutDsa => adapt.from_base = false,
            Preset::DsaWithoutDsp => adapt.use_dsp = false,
            Preset::DspWithoutSde => regen.use_source_expert = false,
            Preset::DspWithoutGcs => regen.use_global = false,
            Preset::DspWithoutLcs => regen.use_local = false,
        }
    }
}

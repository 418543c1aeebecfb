use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

/// Axis of the prior-correlation softmax gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateAxis {
    /// Over the feature channels of each frame, per pixel.
    #[default]
    Channel,
    /// Over the `2T+1` frames, per channel and pixel.
    Temporal,
}

impl std::str::FromStr for GateAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "channel" => Ok(GateAxis::Channel),
            "temporal" => Ok(GateAxis::Temporal),
            other => Err(format!("unknown gate axis {other:?}; expected channel or temporal")),
        }
    }
}

/// Which coding priors reach the network. A disabled prior is replaced by a
/// same-shaped stand-in: zero motion, the LQ frames themselves for the
/// prediction, a zero residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorFlags {
    pub mv: bool,
    pub pred: bool,
    pub resid: bool,
}

impl PriorFlags {
    pub const ALL: PriorFlags = PriorFlags { mv: true, pred: true, resid: true };
    pub const NONE: PriorFlags = PriorFlags { mv: false, pred: false, resid: false };

    /// The seven variants of the prior ablation, `Model-1` (none) through
    /// `Model-7` (all).
    pub fn ablation_grid() -> [(&'static str, PriorFlags); 7] {
        let f = |mv, pred, resid| PriorFlags { mv, pred, resid };
        [
            ("Model-1", f(false, false, false)),
            ("Model-2", f(true, false, false)),
            ("Model-3", f(false, true, false)),
            ("Model-4", f(false, false, true)),
            ("Model-5", f(true, true, false)),
            ("Model-6", f(false, true, true)),
            ("Model-7", f(true, true, true)),
        ]
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.mv, "mv"), (self.pred, "pred"), (self.resid, "resid")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

impl Default for PriorFlags {
    fn default() -> Self {
        PriorFlags::ALL
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Temporal radius `T`; clips hold `2T+1` frames.
    pub radius: usize,
    /// Base feature width `C`.
    pub channels: usize,
    /// Number of shift channel-attention blocks.
    pub scab_blocks: usize,
    /// Fraction of channels that are shifted.
    pub shift_ratio: f64,
    /// Shift along the height axis, pixels.
    pub shift_h: usize,
    /// Shift along the width axis, pixels.
    pub shift_w: usize,
    pub shifts: bool,
    pub scales: usize,
    pub dcn_kernel: usize,
    pub nlau_reduction: usize,
    pub ca_reduction: usize,
    pub leaky_slope: f64,
    pub gate_axis: GateAxis,
    /// Scale-0 attention switches to `attention_window²` tiles when either
    /// side exceeds `window_above`.
    pub attention_window: usize,
    pub window_above: usize,
    pub priors: PriorFlags,
    /// Parameter initialization seed.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            radius: 3,
            channels: 32,
            scab_blocks: 2,
            shift_ratio: 0.125,
            shift_h: 2,
            shift_w: 2,
            shifts: true,
            scales: 3,
            dcn_kernel: 3,
            nlau_reduction: 2,
            ca_reduction: 4,
            leaky_slope: 0.1,
            gate_axis: GateAxis::Channel,
            attention_window: 32,
            window_above: 96,
            priors: PriorFlags::ALL,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn frames(&self) -> usize {
        2 * self.radius + 1
    }

    /// Number of shifted channels.
    pub fn shift_len(&self) -> usize {
        (self.shift_ratio * self.channels as f64).round() as usize
    }

    /// First shifted channel: the window is centred on `C/2`.
    pub fn shift_start(&self) -> usize {
        self.channels / 2 - self.shift_len() / 2
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.radius == 0 {
            return Err(invalid("radius", "must be at least 1"));
        }
        if self.channels < 2 {
            return Err(invalid("channels", "must be at least 2"));
        }
        if self.scab_blocks == 0 {
            return Err(invalid("scab_blocks", "must be at least 1"));
        }
        if self.scales != 3 {
            return Err(invalid("scales", format!("{} unsupported; the aggregation pyramid has exactly 3 levels", self.scales)));
        }
        if self.dcn_kernel % 2 == 0 {
            return Err(invalid("dcn_kernel", "must be odd"));
        }
        if self.nlau_reduction == 0 || self.channels % self.nlau_reduction != 0 {
            return Err(invalid("nlau_reduction", format!("must divide channels ({})", self.channels)));
        }
        if self.ca_reduction == 0 || self.channels % self.ca_reduction != 0 {
            return Err(invalid("ca_reduction", format!("must divide channels ({})", self.channels)));
        }
        if !(0.0..=1.0).contains(&self.shift_ratio) {
            return Err(invalid("shift_ratio", "must lie in [0, 1]"));
        }
        let exact = self.shift_ratio * self.channels as f64;
        if (exact - exact.round()).abs() > 1e-9 || self.shift_len() % 2 != 0 {
            return Err(invalid("shift_ratio", format!("shift_ratio · channels = {exact} must be an even integer")));
        }
        if self.attention_window == 0 {
            return Err(invalid("attention_window", "must be positive"));
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(invalid("leaky_slope", "must be finite"));
        }
        Ok(())
    }

    /// Canonical TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| invalid("model config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::WindowSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Swan,
    SwanNoSelfatt,
    SwanNoWinatt,
    Transformer,
    WindowedLinear,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Swan,
        Variant::SwanNoSelfatt,
        Variant::SwanNoWinatt,
        Variant::Transformer,
        Variant::WindowedLinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Swan => "swan",
            Variant::SwanNoSelfatt => "swan_no_selfatt",
            Variant::SwanNoWinatt => "swan_no_winatt",
            Variant::Transformer => "transformer",
            Variant::WindowedLinear => "windowed_linear",
        }
    }

    /// Whether the variant produces window attention that can be exported.
    pub fn has_window_attention(self) -> bool {
        matches!(self, Variant::Swan | Variant::SwanNoSelfatt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// Architecture and training hyperparameters.
///
/// For `windowed_linear`, `r` and `s` are the fixed window size and step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub heads: usize,
    pub r_self: usize,
    pub r: usize,
    pub s: usize,
    pub max_len: usize,
    pub metadata_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Encoder depth of the Transformer baseline.
    pub layers: usize,
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Swan,
            d_model: 10,
            heads: 2,
            r_self: 5,
            r: 30,
            s: 15,
            max_len: 1500,
            metadata_dim: 4,
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            layers: 2,
            positional_encoding: true,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.r, self.s, self.r_self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("r", self.r),
            ("s", self.s),
            ("max_len", self.max_len),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("layers", self.layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model must be even for positional encoding, got {}",
                self.d_model
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("cnn_lstm".parse::<Variant>(), Err(Error::Config(_))));
    }

    #[test]
    fn validation_rejects_bad_widths() {
        assert!(ModelConfig::default().validate().is_ok());
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            d_model: 9,
            heads: 1,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            s: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

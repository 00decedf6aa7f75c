//! Model, training and run configuration.
//!
//! Config files are JSON. Every field has a default, so `{}` is a valid
//! file; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{GeneratorSpec, PadMode};
use crate::encoders::PersonalityPooling;
use crate::error::{Error, Result};
use crate::hypergraph::{Activation, AttentionScale, HgfConfig};

/// Tolerance of the `α + β + γ = 1` check.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Cosine schedule endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub hi: f64,
    pub lo: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { hi: 1e-4, lo: 1e-5 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay.
    #[default]
    AdamW,
    /// Plain gradient descent, `θ ← θ − η·g`.
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub personality_dim: usize,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub window: usize,
    pub heads: usize,
    pub conv_layers: usize,
    pub lstm_layers: usize,
    pub encoder_depth: usize,
    pub events: usize,
    pub num_classes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr_main: LrSchedule,
    /// Defaults to `lr_main` when absent.
    pub lr_disc: Option<LrSchedule>,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip per parameter group; `null` disables it.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub activation: Activation,
    pub attention_scale: AttentionScale,
    pub positional_encoding: bool,
    pub personality_pooling: PersonalityPooling,
    pub padding: PadMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            visual_dim: 2048,
            audio_dim: 1024,
            personality_dim: 768,
            d1: 128,
            d2: 64,
            d3: 32,
            window: 11,
            heads: 4,
            conv_layers: 2,
            lstm_layers: 1,
            encoder_depth: 1,
            events: 3,
            num_classes: 3,
            alpha: 0.8,
            beta: 0.1,
            gamma: 0.1,
            lr_main: LrSchedule::default(),
            lr_disc: None,
            weight_decay: 5e-4,
            optimizer: OptimizerKind::AdamW,
            clip_norm: Some(5.0),
            batch_size: 20,
            max_epochs: 300,
            patience: 30,
            seed: 0,
            activation: Activation::Relu,
            attention_scale: AttentionScale::Model,
            positional_encoding: true,
            personality_pooling: PersonalityPooling::LastStates,
            padding: PadMode::Cyclic,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let dims = [
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("personality_dim", self.personality_dim),
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("window", self.window),
            ("heads", self.heads),
            ("conv_layers", self.conv_layers),
            ("lstm_layers", self.lstm_layers),
            ("encoder_depth", self.encoder_depth),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if !self.d1.is_multiple_of(2) || !self.d2.is_multiple_of(2) {
            return bad(format!("d1 = {} and d2 = {} must be even", self.d1, self.d2));
        }
        if !self.d2.is_multiple_of(self.heads) {
            return bad(format!("d2 = {} must be divisible by heads = {}", self.d2, self.heads));
        }
        if self.events < 1 {
            return bad("events must be at least 1".into());
        }
        if !(2..=3).contains(&self.num_classes) {
            return bad(format!("num_classes must be 2 or 3, got {}", self.num_classes));
        }
        let weights = [self.alpha, self.beta, self.gamma];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("loss weights must be finite and non-negative".into());
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return bad(format!("alpha + beta + gamma = {sum}, must equal 1"));
        }
        for s in [self.lr_main, self.lr_disc()] {
            if !(s.hi.is_finite() && s.lo.is_finite() && s.hi >= 0.0 && s.lo >= 0.0) {
                return bad(format!("learning rates must be finite and non-negative: {s:?}"));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and non-negative".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("clip_norm must be positive, got {c}"));
            }
        }
        self.hgf().validate()
    }

    pub fn lr_disc(&self) -> LrSchedule {
        self.lr_disc.unwrap_or(self.lr_main)
    }

    pub fn hgf(&self) -> HgfConfig {
        HgfConfig {
            input_dim: self.d1,
            output_dim: self.d2,
            layers: self.conv_layers,
            heads: self.heads,
            window: self.window,
            activation: self.activation,
            attention_scale: self.attention_scale,
            positional_encoding: self.positional_encoding,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

/// Where a run gets its samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(GeneratorSpec),
    /// Path to a manifest, relative to the working directory.
    Manifest(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(GeneratorSpec::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Ternary,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Ternary => 3,
        }
    }
}

/// Everything one `train` invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    pub validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            data: DataSource::default(),
            validation_fraction: 0.25,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_slice(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
            if spec.events != self.model.events {
                return Err(Error::Config(format!(
                    "generator events {} != model events {}",
                    spec.events, self.model.events
                )));
            }
            let d = spec.dims;
            if (d.visual, d.audio, d.personality)
                != (self.model.visual_dim, self.model.audio_dim, self.model.personality_dim)
            {
                return Err(Error::Config("generator dims differ from model input dims".into()));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        if self.model.num_classes == 2 {
            Task::Binary
        } else {
            Task::Ternary
        }
    }

    /// Hex prefix of the hash of this config with the seed zeroed, used to
    /// name run directories.
    pub fn short_hash(&self) -> String {
        let mut c = self.clone();
        c.model.seed = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn loss_weights_must_sum_to_one() {
        let c = ModelConfig {
            alpha: 0.5,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            ..ModelConfig::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn structural_constraints() {
        for c in [
            ModelConfig {
                d1: 7,
                ..ModelConfig::default()
            },
            ModelConfig {
                d2: 62,
                heads: 4,
                ..ModelConfig::default()
            },
            ModelConfig {
                num_classes: 4,
                ..ModelConfig::default()
            },
            ModelConfig {
                window: 0,
                ..ModelConfig::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"model": {"d4": 3}}"#);
        assert!(err.is_err());
        let ok: RunConfig = serde_json::from_str(r#"{"model": {"d1": 16}}"#).unwrap();
        assert_eq!(ok.model.d1, 16);
        assert_eq!(ok.model.d2, 64);
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig {
            data: DataSource::Manifest("data/manifest.json".into()),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn short_hash_ignores_seed() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.model.seed = 9;
        assert_eq!(a.short_hash(), b.short_hash());
        b.model.d3 = 16;
        assert_ne!(a.short_hash(), b.short_hash());
    }
}

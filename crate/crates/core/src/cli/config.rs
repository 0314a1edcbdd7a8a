//! Run configuration: a TOML file whose every key has a default, overridden
//! by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ObjectParams, PatchSpec, SyntheticSceneConfig, TextureParams};
use crate::error::{Error, Result};
use crate::eval::AblationConfig;
use crate::model::{AutoencoderSpec, ViTLayerSpec, VitPlacement};
use crate::pipeline::{LocalizeConfig, UnknownPolicy};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Square patch side in pixels.
    pub patch_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Probability that a test scene carries no debris.
    pub fraction_clean: f64,
    pub texture: TextureParams,
    pub objects: ObjectParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            patch_size: 128,
            n_train: 2000,
            n_test: 400,
            fraction_clean: 0.5,
            texture: TextureParams::default(),
            objects: ObjectParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub vit_placement: VitPlacement,
    pub skip_connections: bool,
    pub base_channels: usize,
    pub outer_vit_encoder_only: bool,
    pub vit: ViTLayerSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 3,
            vit_placement: VitPlacement::None,
            skip_connections: false,
            base_channels: 8,
            outer_vit_encoder_only: false,
            vit: ViTLayerSpec::default(),
        }
    }
}

impl ModelConfig {
    /// Applies `key=value` pairs such as `depth=3,vit=outer,skips=true`.
    pub fn apply_overrides(&mut self, s: &str) -> Result<()> {
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in spec, got {item:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let int = || {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("spec key {k} expects an integer, got {v:?}")))
            };
            let flag = || {
                v.parse::<bool>()
                    .map_err(|_| Error::Config(format!("spec key {k} expects true/false, got {v:?}")))
            };
            match k {
                "depth" => self.depth = int()?,
                "base" | "base_channels" => self.base_channels = int()?,
                "skips" | "skip" | "skip_connections" => self.skip_connections = flag()?,
                "encoder_only" => self.outer_vit_encoder_only = flag()?,
                "vit" => {
                    self.vit_placement = match v {
                        "none" => VitPlacement::None,
                        "outer" => VitPlacement::Outer,
                        "inner" => VitPlacement::Inner,
                        "latent" => VitPlacement::Latent,
                        _ => return Err(Error::Config(format!("unknown ViT placement {v:?}"))),
                    }
                }
                "token_patch" => self.vit.token_patch = int()?,
                "embed_dim" => self.vit.embed_dim = int()?,
                "heads" => self.vit.heads = int()?,
                "transformer_depth" => self.vit.transformer_depth = int()?,
                _ => return Err(Error::Config(format!("unknown spec key {k:?}"))),
            }
        }
        Ok(())
    }

    pub fn to_spec(&self, input: PatchSpec) -> AutoencoderSpec {
        AutoencoderSpec {
            depth: self.depth,
            vit_placement: self.vit_placement,
            skip_connections: self.skip_connections,
            base_channels: self.base_channels,
            input_size: input,
            vit: self.vit,
            outer_vit_encoder_only: self.outer_vit_encoder_only,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub input_size: usize,
    pub training: TrainConfig,
    /// Scores strictly below this are labelled unknown.
    pub unknown_threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_size: 32,
            training: TrainConfig::default(),
            unknown_threshold: UnknownPolicy::default().score_threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub weak_delta: f64,
    pub sweep_thresholds: Vec<f64>,
    /// Spec override strings, one ablation row each.
    pub ablation_specs: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.3,
            weak_delta: 0.2,
            sweep_thresholds: crate::eval::default_sweep_thresholds(),
            ablation_specs: [
                "depth=2",
                "depth=3",
                "depth=4",
                "depth=3,skips=true",
                "depth=3,vit=outer",
                "depth=3,vit=latent",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub pipeline: LocalizeConfig,
    pub classifier: ClassifierConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Routes the single seed into every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.seed = seed;
        self.classifier.training.seed = seed;
    }

    pub fn patch(&self) -> Result<PatchSpec> {
        PatchSpec::square(self.data.patch_size)
    }

    pub fn scene_config(&self) -> Result<SyntheticSceneConfig> {
        Ok(SyntheticSceneConfig {
            seed: self.seed,
            patch: self.patch()?,
            texture: self.data.texture.clone(),
            objects: self.data.objects.clone(),
            fraction_clean: self.data.fraction_clean,
        })
    }

    pub fn autoencoder_spec(&self) -> Result<AutoencoderSpec> {
        Ok(self.model.to_spec(self.patch()?))
    }

    pub fn ablation_specs(&self) -> Result<Vec<AutoencoderSpec>> {
        let patch = self.patch()?;
        self.eval
            .ablation_specs
            .iter()
            .map(|s| {
                let mut m = self.model.clone();
                m.apply_overrides(s)?;
                let spec = m.to_spec(patch);
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            train: self.training.clone(),
            localize: self.pipeline.clone(),
            iou_threshold: self.eval.iou_threshold,
            weak_delta: self.eval.weak_delta,
        }
    }

    pub fn unknown_policy(&self) -> Result<UnknownPolicy> {
        UnknownPolicy::new(self.classifier.unknown_threshold)
    }

    /// Checks everything up front so no command fails halfway on bad config.
    pub fn validate(&self) -> Result<()> {
        self.scene_config()?.validate()?;
        self.autoencoder_spec()?.validate()?;
        self.training.validate()?;
        self.classifier.training.validate()?;
        self.pipeline.validate()?;
        self.unknown_policy()?;
        if self.classifier.input_size < 4 || self.classifier.input_size % 4 != 0 {
            return Err(Error::Config("classifier input_size must be a positive multiple of 4".into()));
        }
        if !(0.0..1.0).contains(&self.eval.iou_threshold) {
            return Err(Error::Config("iou_threshold must lie in [0, 1)".into()));
        }
        if self.eval.weak_delta <= 0.0 {
            return Err(Error::Config("weak_delta must be positive".into()));
        }
        self.ablation_specs()?;
        Ok(())
    }
}

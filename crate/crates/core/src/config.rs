//! Run configuration.
//!
//! A config file names a base profile and overrides any subset of its
//! fields:
//!
//! ```toml
//! profile = "overfit10"
//! [optim]
//! iterations = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::LOCATION_BITS;
use crate::losses::LossWeights;

pub const PROFILES: [&str; 3] = ["paper", "smoke500", "overfit10"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub perception: PerceptionConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub data: DataConfig,
    pub checkpoint: CheckpointConfig,
    pub title: TitleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the category and predicate embeddings.
    pub embedding_dim: usize,
    pub gcn_hidden: usize,
    /// Width of each of the three segments of the edge network output.
    pub gcn_segment_dim: usize,
    pub vertex_hidden: usize,
    pub object_dim: usize,
    pub box_hidden: usize,
    pub noise_dim: usize,
    pub mask_size: usize,
    pub mask_channels: usize,
    pub appearance_channels: Vec<usize>,
    pub appearance_hidden: usize,
    pub appearance_dim: usize,
    pub canvas: usize,
    pub crop_size: usize,
    pub generator_channels: Vec<usize>,
    pub residual_blocks: usize,
    pub mask_disc_channels: Vec<usize>,
    pub mask_disc_condition_dim: usize,
    pub layout_disc_channels: Vec<usize>,
    pub book_disc_channels: Vec<usize>,
    pub object_disc_channels: Vec<usize>,
    pub object_disc_hidden: usize,
    pub object_disc_classes: usize,
    /// Compose training feature maps from ground-truth boxes instead of
    /// predicted ones.
    pub teacher_forcing: bool,
}

impl ModelConfig {
    pub fn node_dim(&self) -> usize {
        self.embedding_dim + LOCATION_BITS
    }

    pub fn edge_input_dim(&self) -> usize {
        2 * self.node_dim() + self.embedding_dim
    }

    pub fn edge_output_dim(&self) -> usize {
        3 * self.gcn_segment_dim
    }

    /// Channels of a layout feature map: appearance plus occupancy.
    pub fn layout_channels(&self) -> usize {
        self.appearance_dim + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerceptionConfig {
    /// VGG16-layout weights in a safetensors file using torchvision's
    /// `features.N.weight` naming.
    File { path: PathBuf },
    /// Seeded, frozen random weights with the given block widths.
    Random { seed: u64, channels: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskObjective {
    LeastSquares,
    Log,
}

/// Sign of the mismatched-layout term in the layout discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchTerm {
    /// `+ log D(Q', R)`: the mismatched pair is scored as real.
    AsPrinted,
    /// `+ log(1 - D(Q', R))`: the mismatched pair is scored as fake.
    MismatchIsFake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub mask_objective: MaskObjective,
    pub eq3_fourth_term_sign: MismatchTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scene_annotations: PathBuf,
    pub scene_images: PathBuf,
    pub covers: PathBuf,
    pub scene_limit: usize,
    pub cover_limit: usize,
    /// Objects covering less than this fraction of the image are dropped.
    pub min_object_area: f32,
    pub max_objects: usize,
    pub max_solid_regions: usize,
    /// Per-channel standard deviation (in [0, 1] units) below which a cover
    /// patch counts as a simple-colored region.
    pub solid_std_threshold: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub dir: PathBuf,
    pub every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TitleBackendKind {
    External,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TitleConfig {
    pub backend: TitleBackendKind,
    /// Command for the external style-transfer adapter. It is invoked as
    /// `cmd <plain_text.png> <styled_crop.png> <out_text.png> <out_background.png>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_command: Option<Vec<String>>,
}

impl Config {
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "smoke500" => Ok(Self::smoke500()),
            "overfit10" => Ok(Self::overfit10()),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (expected one of {PROFILES:?})"
            ))),
        }
    }

    /// Full-size networks and schedule.
    pub fn paper() -> Self {
        Self {
            profile: "paper".into(),
            seed: 0,
            model: ModelConfig {
                embedding_dim: 128,
                gcn_hidden: 512,
                gcn_segment_dim: 384,
                vertex_hidden: 512,
                object_dim: 128,
                box_hidden: 512,
                noise_dim: 64,
                mask_size: 32,
                mask_channels: 192,
                appearance_channels: vec![64, 128, 256],
                appearance_hidden: 192,
                appearance_dim: 64,
                canvas: 128,
                crop_size: 64,
                generator_channels: vec![64, 128, 256, 512, 1024],
                residual_blocks: 10,
                mask_disc_channels: vec![64, 128, 256],
                mask_disc_condition_dim: 16,
                layout_disc_channels: vec![64, 128, 256, 512],
                book_disc_channels: vec![64, 128, 256, 512, 512],
                object_disc_channels: vec![64, 128, 256],
                object_disc_hidden: 1024,
                object_disc_classes: 174,
                teacher_forcing: false,
            },
            perception: PerceptionConfig::File {
                path: PathBuf::from("weights/vgg16_features.safetensors"),
            },
            loss: LossConfig {
                weights: LossWeights::default(),
                mask_objective: MaskObjective::LeastSquares,
                eq3_fourth_term_sign: MismatchTerm::AsPrinted,
            },
            optim: OptimConfig {
                learning_rate: 1e-3,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
                batch_size: 6,
                iterations: 100_000,
            },
            data: DataConfig {
                scene_annotations: PathBuf::from("data/coco/annotations.json"),
                scene_images: PathBuf::from("data/coco/images"),
                covers: PathBuf::from("data/covers"),
                scene_limit: 5000,
                cover_limit: 2000,
                min_object_area: 0.02,
                max_objects: 8,
                max_solid_regions: 2,
                solid_std_threshold: 0.08,
            },
            checkpoint: CheckpointConfig {
                dir: PathBuf::from("runs/paper"),
                every: 5000,
            },
            title: TitleConfig {
                backend: TitleBackendKind::Fallback,
                external_command: None,
            },
        }
    }

    /// Reduced widths for desk-scale runs on a CPU. Layer counts, kernel
    /// sizes, strides, embedding and GCN dimensions are unchanged.
    fn desk(name: &str) -> Self {
        let mut c = Self::paper();
        c.profile = name.into();
        let m = &mut c.model;
        m.mask_channels = 16;
        m.appearance_channels = vec![8, 16, 32];
        m.appearance_hidden = 32;
        m.appearance_dim = 16;
        m.generator_channels = vec![8, 16, 32, 64, 64];
        m.mask_disc_channels = vec![8, 16, 32];
        m.mask_disc_condition_dim = 4;
        m.layout_disc_channels = vec![8, 16, 32, 32];
        m.book_disc_channels = vec![8, 16, 32, 32, 32];
        m.object_disc_channels = vec![8, 16, 32];
        m.object_disc_hidden = 64;
        c.perception = PerceptionConfig::Random {
            seed: 7,
            channels: vec![8, 16, 32, 32],
        };
        c.data.scene_annotations = PathBuf::from("data/synthetic/annotations.json");
        c.data.scene_images = PathBuf::from("data/synthetic/images");
        c.data.covers = PathBuf::from("data/synthetic/covers");
        c
    }

    pub fn smoke500() -> Self {
        let mut c = Self::desk("smoke500");
        c.optim.iterations = 500;
        c.data.scene_limit = 60;
        c.data.cover_limit = 20;
        c.checkpoint = CheckpointConfig {
            dir: PathBuf::from("runs/smoke500"),
            every: 250,
        };
        c
    }

    /// Ten training images, 200 steps.
    pub fn overfit10() -> Self {
        let mut c = Self::desk("overfit10");
        c.optim.iterations = 200;
        c.data.scene_limit = 10;
        c.data.cover_limit = 10;
        c.checkpoint = CheckpointConfig {
            dir: PathBuf::from("runs/overfit10"),
            every: 100,
        };
        c
    }

    /// Parses a TOML document. `profile` (default `paper`) selects the base
    /// that the remaining keys override.
    pub fn from_toml(text: &str) -> Result<Self> {
        let overrides: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let base_name = match overrides.get("profile") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("`profile` must be a string".into())),
            None => "paper".to_string(),
        };
        let base = Self::profile(&base_name)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overrides);
        let cfg: Config = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative data, checkpoint and weight paths relative to `base`.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.scene_annotations);
        fix(&mut self.data.scene_images);
        fix(&mut self.data.covers);
        fix(&mut self.checkpoint.dir);
        if let PerceptionConfig::File { path } = &mut self.perception {
            fix(path);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let fail = |msg: String| Err(Error::Config(msg));
        if m.canvas % 16 != 0 || m.canvas < 64 {
            return fail(format!("canvas {} must be a multiple of 16 and at least 64", m.canvas));
        }
        if m.mask_size != 32 {
            return fail("mask_size must be 32 (4x4 seed upsampled three times)".into());
        }
        if m.generator_channels.len() != 5 {
            return fail("generator_channels needs 5 entries".into());
        }
        for (name, v, n) in [
            ("appearance_channels", &m.appearance_channels, 3),
            ("mask_disc_channels", &m.mask_disc_channels, 3),
            ("layout_disc_channels", &m.layout_disc_channels, 4),
            ("book_disc_channels", &m.book_disc_channels, 5),
            ("object_disc_channels", &m.object_disc_channels, 3),
        ] {
            if v.len() != n || v.contains(&0) {
                return fail(format!("{name} needs {n} positive entries"));
            }
        }
        if let PerceptionConfig::Random { channels, .. } = &self.perception {
            if channels.len() != 4 || channels.contains(&0) {
                return fail("perception channels need 4 positive entries".into());
            }
        }
        if self.optim.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.optim.beta1) || !(0.0..1.0).contains(&self.optim.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        self.loss.weights.validate()?;
        if self.checkpoint.every == 0 {
            return fail("checkpoint.every must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config always serializes");
        crate::nn::hex(&Sha256::digest(json.as_bytes()))
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_matches_published_settings() {
        let c = Config::paper();
        assert_eq!(c.optim.learning_rate, 1e-3);
        assert_eq!(c.optim.beta1, 0.5);
        assert_eq!(c.optim.batch_size, 6);
        assert_eq!(c.optim.iterations, 100_000);
        assert_eq!(c.model.node_dim(), 163);
        assert_eq!(c.model.edge_input_dim(), 454);
        assert_eq!(c.model.edge_output_dim(), 1152);
        assert_eq!(c.model.appearance_dim, 64);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_merge_onto_profile() {
        let c = Config::from_toml("profile = \"overfit10\"\nseed = 9\n[optim]\niterations = 3\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.optim.iterations, 3);
        assert_eq!(c.optim.batch_size, 6);
        assert_eq!(c.model, Config::overfit10().model);
    }

    #[test]
    fn unknown_keys_and_profiles_are_rejected() {
        assert!(matches!(Config::from_toml("[optim]\nlr = 1.0\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("profile = \"huge\"\n"), Err(Error::Config(_))));
        assert!(matches!(
            Config::from_toml("[loss.weights]\npixel = -1.0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn toml_roundtrip_and_hash_stability() {
        for name in PROFILES {
            let c = Config::profile(name).unwrap();
            let back = Config::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
        assert_ne!(Config::paper().hash(), Config::overfit10().hash());
    }
}

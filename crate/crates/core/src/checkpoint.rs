//! Checkpoint directories: a JSON manifest plus one versioned safetensors
//! blob per parameter store and optimizer.

use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::graph::CategoryVocabulary;
use crate::model::{AppearanceBank, Model};
use crate::train::TrainState;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const GENERATOR_FILE: &str = "generator.v1.safetensors";
pub const DISCRIMINATOR_FILE: &str = "discriminators.v1.safetensors";
pub const GENERATOR_ADAM_FILE: &str = "generator.adam.v1.safetensors";
pub const DISCRIMINATOR_ADAM_FILE: &str = "discriminators.adam.v1.safetensors";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Completed training steps.
    pub iteration: u64,
    pub config_hash: String,
    pub config: Config,
    pub vocabulary: Vec<String>,
    pub generator_checksum: String,
    pub appearance_bank: AppearanceBank,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (this build reads {FORMAT_VERSION})",
            path.display(),
            m.format_version
        )));
    }
    Ok(m)
}

pub fn save_training(dir: &Path, cfg: &Config, state: &TrainState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let model = &state.model;
    model.gen_params.save(&dir.join(GENERATOR_FILE))?;
    model.disc_params.save(&dir.join(DISCRIMINATOR_FILE))?;
    state.gen_opt.save(&dir.join(GENERATOR_ADAM_FILE))?;
    state.disc_opt.save(&dir.join(DISCRIMINATOR_ADAM_FILE))?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        iteration: state.step,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        vocabulary: model.vocab.entries().to_vec(),
        generator_checksum: model.gen_params.checksum()?,
        appearance_bank: model.bank.clone(),
    };
    // The manifest goes last so a partial write leaves no loadable checkpoint.
    std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    log::info!("checkpoint at step {} written to {}", state.step, dir.display());
    Ok(())
}

fn check_compatible(m: &Manifest, cfg: &Config, vocab: &CategoryVocabulary) -> Result<()> {
    if m.config.model != cfg.model {
        return Err(Error::Checkpoint("network configuration differs from the checkpoint".into()));
    }
    if m.vocabulary != vocab.entries() {
        return Err(Error::Checkpoint("category vocabulary differs from the checkpoint".into()));
    }
    if m.config_hash != cfg.hash() {
        log::warn!("configuration hash differs from the checkpoint; continuing with the networks unchanged");
    }
    Ok(())
}

/// Restores parameters, optimizer moments, step count and appearance bank.
pub fn load_training(dir: &Path, cfg: &Config, state: &mut TrainState) -> Result<()> {
    let m = read_manifest(dir)?;
    check_compatible(&m, cfg, &state.model.vocab)?;
    state.model.gen_params.load(&dir.join(GENERATOR_FILE))?;
    state.model.disc_params.load(&dir.join(DISCRIMINATOR_FILE))?;
    state.gen_opt.load(&dir.join(GENERATOR_ADAM_FILE))?;
    state.disc_opt.load(&dir.join(DISCRIMINATOR_ADAM_FILE))?;
    state.model.bank = m.appearance_bank;
    state.step = m.iteration;
    Ok(())
}

/// Loads the generator side of a checkpoint for inference.
pub fn load_model(dir: &Path) -> Result<(Model, Manifest)> {
    let m = read_manifest(dir)?;
    let vocab = CategoryVocabulary::from_entries(&m.vocabulary)?;
    let mut model = Model::new(&m.config.model, vocab, m.config.seed, DType::F32)?;
    model.gen_params.load(&dir.join(GENERATOR_FILE))?;
    let sum = model.gen_params.checksum()?;
    if sum != m.generator_checksum {
        return Err(Error::Checkpoint(format!(
            "{}: generator checksum {sum} does not match the manifest",
            dir.display()
        )));
    }
    model.bank = m.appearance_bank.clone();
    Ok((model, m))
}

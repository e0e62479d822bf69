//! Frozen VGG16-style feature extractor for the content loss.
//!
//! Only the first four convolution blocks are used. Features are taken after
//! each block's max pooling. Weights come from a safetensors file using the
//! torchvision `features.N.weight` / `features.N.bias` names, or are drawn
//! from a seeded generator when no pretrained file is available.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};

use crate::config::PerceptionConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Convolutions per block in VGG16's first four blocks.
const BLOCK_CONVS: [usize; 4] = [2, 2, 3, 3];
const VGG_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Index of each convolution inside torchvision's `features` sequence.
fn torchvision_indices() -> Vec<usize> {
    let mut idx = Vec::new();
    let mut pos = 0;
    for &n in &BLOCK_CONVS {
        for _ in 0..n {
            idx.push(pos);
            pos += 2;
        }
        pos += 1;
    }
    idx
}

pub struct Perception {
    convs: Vec<(Tensor, Tensor)>,
    mean: Tensor,
    std: Tensor,
}

impl Perception {
    pub fn from_config(cfg: &PerceptionConfig, dtype: DType) -> Result<Self> {
        match cfg {
            PerceptionConfig::File { path } => {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "perception weights not found at {}",
                        path.display()
                    )));
                }
                let tensors = candle_core::safetensors::load(path, &Device::Cpu)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Self::from_tensors(&tensors, dtype)
            }
            PerceptionConfig::Random { seed, channels } => Self::random(*seed, channels, dtype),
        }
    }

    pub fn from_tensors(tensors: &HashMap<String, Tensor>, dtype: DType) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (k, i) in torchvision_indices().into_iter().enumerate() {
            let get = |suffix: &str| {
                let name = format!("features.{i}.{suffix}");
                tensors
                    .get(&name)
                    .ok_or_else(|| Error::Config(format!("perception weights lack `{name}`")))
            };
            let w = get("weight")?;
            let b = get("bias")?;
            let (out, cin, kh, kw) = w.dims4()?;
            if cin != in_ch || kh != 3 || kw != 3 || b.dims() != [out] {
                return Err(Error::Config(format!(
                    "perception conv {k} has shape {:?}, expected (_, {in_ch}, 3, 3)",
                    w.dims()
                )));
            }
            convs.push((w.to_dtype(dtype)?, b.to_dtype(dtype)?));
            in_ch = out;
        }
        Self::with_convs(convs, dtype)
    }

    /// Seeded He-initialized weights with the given block widths.
    pub fn random(seed: u64, channels: &[usize], dtype: DType) -> Result<Self> {
        if channels.len() != 4 {
            return Err(Error::Config("perception needs four block widths".into()));
        }
        let mut ps = ParamStore::new(seed, dtype);
        let mut convs = Vec::new();
        let mut in_ch = 3;
        let mut k = 0;
        for (block, &width) in channels.iter().enumerate() {
            for _ in 0..BLOCK_CONVS[block] {
                let std = (2.0 / (in_ch * 9) as f64).sqrt();
                let w = ps.normal(&format!("w{k}"), &[width, in_ch, 3, 3], std)?.detach();
                let b = ps.constant(&format!("b{k}"), &[width], 0.0)?.detach();
                convs.push((w, b));
                in_ch = width;
                k += 1;
            }
        }
        Self::with_convs(convs, dtype)
    }

    fn with_convs(convs: Vec<(Tensor, Tensor)>, dtype: DType) -> Result<Self> {
        let v = |a: [f32; 3]| -> Result<Tensor> {
            Ok(Tensor::new(&a, &Device::Cpu)?.reshape((1, 3, 1, 1))?.to_dtype(dtype)?)
        };
        Ok(Self {
            convs,
            mean: v(IMAGENET_MEAN)?,
            std: v(IMAGENET_STD)?,
        })
    }

    pub fn paper_widths() -> [usize; 4] {
        VGG_WIDTHS
    }

    /// Activations after each of the four pooling stages for images in
    /// `[-1, 1]`.
    pub fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let x = ((images + 1.0)? * 0.5)?;
        let mut x = x.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut out = Vec::with_capacity(4);
        let mut k = 0;
        for &n in &BLOCK_CONVS {
            for _ in 0..n {
                let (w, b) = &self.convs[k];
                let c = b.dims()[0];
                x = crate::nn::conv2d(&x, w, 1, 1)?.broadcast_add(&b.reshape((1, c, 1, 1))?)?.relu()?;
                k += 1;
            }
            x = x.max_pool2d(2)?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

//! The four discriminators. Each returns a score per sample together with
//! the activations of its hidden layers, which feed the feature matching
//! terms.

use candle_core::{Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    avg_pool_3x3_s2, global_avg_pool, sigmoid, Activation, ConvBlock, Linear, NormKind, Padding, ParamStore,
};

pub struct DiscOutput {
    /// One value per sample. Raw for the mask discriminator, a logit for the
    /// others.
    pub score: Tensor,
    pub features: Vec<Tensor>,
}

impl DiscOutput {
    pub fn probability(&self) -> Result<Tensor> {
        sigmoid(&self.score)
    }
}

fn stack(
    ps: &mut ParamStore,
    name: &str,
    in_ch: usize,
    layers: &[(usize, usize, usize, NormKind, Activation)],
    pad_for: impl Fn(usize) -> usize,
) -> Result<Vec<ConvBlock>> {
    let mut c = in_ch;
    let mut out = Vec::with_capacity(layers.len());
    for (i, &(ch, k, s, norm, act)) in layers.iter().enumerate() {
        out.push(ConvBlock::new(
            ps,
            &format!("{name}.conv{i}"),
            c,
            ch,
            k,
            s,
            Padding::Zeros(pad_for(k)),
            norm,
            act,
        )?);
        c = ch;
    }
    Ok(out)
}

/// Runs a conv stack; activations of all but the last layer are collected.
fn run(blocks: &[ConvBlock], x: &Tensor, features: &mut Vec<Tensor>) -> Result<Tensor> {
    let mut x = x.clone();
    for (i, b) in blocks.iter().enumerate() {
        x = b.forward(&x)?;
        if i + 1 < blocks.len() {
            features.push(x.clone());
        }
    }
    Ok(x)
}

fn mean_per_sample(x: &Tensor) -> Result<Tensor> {
    let n = x.dims()[0];
    Ok(x.reshape((n, ()))?.mean(1)?)
}

/// Least-squares mask critic conditioned on the object category through a
/// spatially broadcast embedding.
pub struct MaskDiscriminator {
    embedding: Tensor,
    blocks: Vec<ConvBlock>,
}

impl MaskDiscriminator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let ch = &cfg.mask_disc_channels;
        if ch.len() != 3 {
            return Err(Error::Config("mask discriminator needs three widths".into()));
        }
        let embedding = ps.normal(
            "mask_disc.category_embedding",
            &[cfg.object_disc_classes, cfg.mask_disc_condition_dim],
            1.0,
        )?;
        let leaky = Activation::LeakyRelu;
        let layers = [
            (ch[0], 3, 2, NormKind::Instance, leaky),
            (ch[1], 3, 2, NormKind::Instance, leaky),
            (ch[2], 3, 1, NormKind::Instance, leaky),
            (1, 3, 1, NormKind::None, leaky),
        ];
        let blocks = stack(ps, "mask_disc", 1 + cfg.mask_disc_condition_dim, &layers, |_| 1)?;
        Ok(Self { embedding, blocks })
    }

    /// `masks: (n, 32, 32)`, `categories: n ids`.
    pub fn forward(&self, masks: &Tensor, categories: &[u32]) -> Result<DiscOutput> {
        let (n, h, w) = masks.dims3()?;
        let idx = Tensor::new(categories, &Device::Cpu)?;
        let cond = self.embedding.index_select(&idx, 0)?.to_dtype(masks.dtype())?;
        let d = cond.dims()[1];
        let cond = cond.reshape((n, d, 1, 1))?.broadcast_as((n, d, h, w))?;
        let x = Tensor::cat(&[&masks.reshape((n, 1, h, w))?, &cond], 1)?;
        let mut features = Vec::new();
        let y = run(&self.blocks, &x, &mut features)?;
        Ok(DiscOutput {
            score: mean_per_sample(&avg_pool_3x3_s2(&y)?)?,
            features,
        })
    }
}

/// Judges an image given a layout feature map. Two parallel streams see the
/// same input and their logits are averaged.
pub struct LayoutDiscriminator {
    streams: [Vec<ConvBlock>; 2],
}

impl LayoutDiscriminator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let ch = &cfg.layout_disc_channels;
        let in_ch = cfg.layout_channels() + 3;
        let build = |ps: &mut ParamStore, s: usize| {
            let mut layers: Vec<_> = ch
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let norm = if i == 0 { NormKind::None } else { NormKind::Instance };
                    (c, 4, 2, norm, Activation::LeakyRelu)
                })
                .collect();
            layers.push((1, 4, 2, NormKind::None, Activation::Identity));
            stack(ps, &format!("layout_disc.stream{s}"), in_ch, &layers, |_| 1)
        };
        Ok(Self {
            streams: [build(ps, 0)?, build(ps, 1)?],
        })
    }

    pub fn forward(&self, layout: &Tensor, image: &Tensor) -> Result<DiscOutput> {
        let x = Tensor::cat(&[layout, image], 1)?;
        let mut features = Vec::new();
        let mut scores = Vec::with_capacity(2);
        for s in &self.streams {
            let y = run(s, &x, &mut features)?;
            scores.push(mean_per_sample(&avg_pool_3x3_s2(&y)?)?);
        }
        Ok(DiscOutput {
            score: ((&scores[0] + &scores[1])? * 0.5)?,
            features,
        })
    }
}

/// Patch discriminator comparing generated covers to real book covers.
pub struct BookDiscriminator {
    blocks: Vec<ConvBlock>,
}

impl BookDiscriminator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let mut layers: Vec<_> = cfg
            .book_disc_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let norm = if i == 0 { NormKind::None } else { NormKind::Batch };
                (c, 4, 2, norm, Activation::LeakyRelu)
            })
            .collect();
        layers.push((1, 4, 2, NormKind::None, Activation::Identity));
        Ok(Self {
            blocks: stack(ps, "book_disc", 3, &layers, |_| 1)?,
        })
    }

    /// The sigmoid is applied by [`DiscOutput::probability`]; the score is
    /// the mean patch logit.
    pub fn forward(&self, image: &Tensor) -> Result<DiscOutput> {
        let mut features = Vec::new();
        let y = run(&self.blocks, image, &mut features)?;
        Ok(DiscOutput {
            score: mean_per_sample(&y)?,
            features,
        })
    }
}

/// Per-category real/fake scores for object crops; the head's output is
/// indexed by the object's category.
pub struct ObjectDiscriminator {
    blocks: Vec<ConvBlock>,
    hidden: Linear,
    head: Linear,
}

impl ObjectDiscriminator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let layers: Vec<_> = cfg
            .object_disc_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let norm = if i == 0 { NormKind::None } else { NormKind::Batch };
                (c, 4, 2, norm, Activation::LeakyRelu)
            })
            .collect();
        let blocks = stack(ps, "object_disc", 3, &layers, |_| 1)?;
        let last = *cfg.object_disc_channels.last().unwrap();
        Ok(Self {
            blocks,
            hidden: Linear::new(ps, "object_disc.fc0", last, cfg.object_disc_hidden)?,
            head: Linear::new(ps, "object_disc.fc1", cfg.object_disc_hidden, cfg.object_disc_classes)?,
        })
    }

    /// Full `(n, classes)` logits.
    pub fn logits(&self, crops: &Tensor) -> Result<Tensor> {
        let mut x = crops.clone();
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        self.head.forward(&self.hidden.forward(&global_avg_pool(&x)?)?)
    }

    pub fn forward(&self, crops: &Tensor, categories: &[u32]) -> Result<DiscOutput> {
        let logits = self.logits(crops)?;
        let n = categories.len();
        let idx = Tensor::new(categories, &Device::Cpu)?.reshape((n, 1))?;
        Ok(DiscOutput {
            score: logits.gather(&idx, 1)?.squeeze(1)?,
            features: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use candle_core::DType;

    #[test]
    fn desk_discriminator_shapes() {
        let cfg = Config::overfit10().model;
        let mut ps = ParamStore::new(3, DType::F32);
        let mask = MaskDiscriminator::new(&mut ps, &cfg).unwrap();
        let layout = LayoutDiscriminator::new(&mut ps, &cfg).unwrap();
        let book = BookDiscriminator::new(&mut ps, &cfg).unwrap();
        let obj = ObjectDiscriminator::new(&mut ps, &cfg).unwrap();
        let dev = Device::Cpu;
        let m = Tensor::rand(0f32, 1., (3, 32, 32), &dev).unwrap();
        let out = mask.forward(&m, &[1, 5, 173]).unwrap();
        assert_eq!(out.score.dims(), &[3]);
        assert_eq!(out.features.len(), 3);
        let f = Tensor::randn(0f32, 1., (2, cfg.layout_channels(), 128, 128), &dev).unwrap();
        let i = Tensor::randn(0f32, 1., (2, 3, 128, 128), &dev).unwrap();
        let out = layout.forward(&f, &i).unwrap();
        assert_eq!(out.score.dims(), &[2]);
        assert_eq!(out.features.len(), 8);
        assert_eq!(book.forward(&i).unwrap().score.dims(), &[2]);
        let crops = Tensor::randn(0f32, 1., (4, 3, 64, 64), &dev).unwrap();
        assert_eq!(obj.forward(&crops, &[0, 1, 2, 3]).unwrap().score.dims(), &[4]);
    }

    #[test]
    fn category_indexing_matches_projection_oracle() {
        let cfg = Config::overfit10().model;
        let mut ps = ParamStore::new(4, DType::F64);
        let obj = ObjectDiscriminator::new(&mut ps, &cfg).unwrap();
        let crops = Tensor::randn(0f64, 1., (3, 3, 64, 64), &Device::Cpu).unwrap();
        let cats = [7u32, 0, 173];
        let logits = obj.logits(&crops).unwrap().to_vec2::<f64>().unwrap();
        let got = obj.forward(&crops, &cats).unwrap().score.to_vec1::<f64>().unwrap();
        for (o, &c) in cats.iter().enumerate() {
            let onehot: Vec<f64> = (0..174).map(|k| if k == c as usize { 1.0 } else { 0.0 }).collect();
            let dot: f64 = logits[o].iter().zip(&onehot).map(|(a, b)| a * b).sum();
            assert!((dot - got[o]).abs() < 1e-12);
        }
    }
}

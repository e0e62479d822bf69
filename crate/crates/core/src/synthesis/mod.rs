//! Per-object synthesis: boxes, soft masks and appearance vectors, and their
//! composition into a layout feature map.

pub mod compose;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, sigmoid, Activation, Conv2d, ConvBlock, Linear, Mlp, NormKind, Padding, ParamStore,
};

pub use compose::{compose_batch, compose_feature_map, crop_and_resize, pixel_rect, PixelRect};

/// Smallest allowed extent of a box side after normalization.
pub const MIN_BOX_EXTENT: f32 = 1e-4;

/// Axis-aligned box in normalized canvas coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BoundingBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> Result<Self> {
        let ok = |v: f32| (0.0..=1.0).contains(&v);
        if !(ok(x0) && ok(y0) && ok(x1) && ok(y1)) || x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidRequest(format!(
                "box ({x0}, {y0}, {x1}, {y1}) needs 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> f32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

fn ordered_pair(a: f32, b: f32) -> (f32, f32) {
    let (lo, hi) = (a.clamp(0.0, 1.0).min(b.clamp(0.0, 1.0)), a.clamp(0.0, 1.0).max(b.clamp(0.0, 1.0)));
    if hi - lo >= MIN_BOX_EXTENT {
        return (lo, hi);
    }
    let lo = lo.min(1.0 - MIN_BOX_EXTENT);
    (lo, lo + MIN_BOX_EXTENT)
}

/// Clamps raw coordinates to `[0, 1]` and orders each pair. Coincident
/// coordinates are pulled apart by [`MIN_BOX_EXTENT`].
pub fn normalize_box(raw: [f32; 4]) -> BoundingBox {
    let (x0, x1) = ordered_pair(raw[0], raw[2]);
    let (y0, y1) = ordered_pair(raw[1], raw[3]);
    BoundingBox { x0, y0, x1, y1 }
}

/// Orders the coordinate pairs of an `(n, 4)` tensor, keeping gradients.
pub fn order_box_tensor(raw: &Tensor) -> Result<Tensor> {
    let a = raw.narrow(1, 0, 2)?;
    let b = raw.narrow(1, 2, 2)?;
    Ok(Tensor::cat(&[a.minimum(&b)?, a.maximum(&b)?], 1)?)
}

pub fn boxes_from_tensor(t: &Tensor) -> Result<Vec<BoundingBox>> {
    let rows = t.to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
    Ok(rows.into_iter().map(|r| normalize_box([r[0], r[1], r[2], r[3]])).collect())
}

pub fn boxes_to_tensor(boxes: &[BoundingBox], dtype: candle_core::DType) -> Result<Tensor> {
    let flat: Vec<f32> = boxes.iter().flat_map(|b| b.to_array()).collect();
    Ok(Tensor::from_vec(flat, (boxes.len(), 4), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `logit(0.75)`: initial output bias of the box head.
pub const BOX_PRIOR_LOGIT: f64 = 1.0986122886681098;

/// Two-layer perceptron from object embeddings to boxes.
#[derive(Debug, Clone)]
pub struct BoxHead {
    mlp: Mlp,
}

impl BoxHead {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let mlp = Mlp::new(ps, "box", [cfg.object_dim, cfg.box_hidden, 4], Activation::Identity)?;
        // Start from a centred half-size box instead of collapsed ones.
        let l = BOX_PRIOR_LOGIT;
        let prior = Tensor::new(&[-l, -l, l, l], &Device::Cpu)?.to_dtype(ps.dtype())?;
        ps.get("box.1.bias").expect("created above").set(&prior)?;
        Ok(Self { mlp })
    }

    /// `(n, object_dim) -> (n, 4)` with coordinates in `(0, 1)` and each
    /// pair ordered.
    pub fn forward(&self, m: &Tensor) -> Result<Tensor> {
        order_box_tensor(&sigmoid(&self.mlp.forward(m)?)?)
    }

    pub fn predict(&self, m: &Tensor) -> Result<Vec<BoundingBox>> {
        boxes_from_tensor(&self.forward(m)?)
    }
}

/// Decodes `m_o` concatenated with noise into a soft mask.
///
/// The concatenation is projected to a 4x4 seed; three nearest-neighbour
/// upsamplings interleave with the first three convolutions, two more run at
/// full resolution, and a 1x1 convolution with a sigmoid gives one channel.
#[derive(Debug, Clone)]
pub struct MaskGenerator {
    project: Linear,
    convs: Vec<ConvBlock>,
    output: Conv2d,
    channels: usize,
    size: usize,
}

const MASK_SEED: usize = 4;

impl MaskGenerator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.mask_channels;
        let in_dim = cfg.object_dim + cfg.noise_dim;
        if cfg.mask_size != MASK_SEED << 3 {
            return Err(Error::Config(format!("mask size must be {}, got {}", MASK_SEED << 3, cfg.mask_size)));
        }
        let project = Linear::new(ps, "mask.project", in_dim, c * MASK_SEED * MASK_SEED)?;
        let convs = (0..5)
            .map(|i| {
                ConvBlock::new(
                    ps,
                    &format!("mask.conv{i}"),
                    c,
                    c,
                    3,
                    1,
                    Padding::Zeros(1),
                    NormKind::Batch,
                    Activation::Relu,
                )
            })
            .collect::<Result<_>>()?;
        let output = Conv2d::new(ps, "mask.output", c, 1, 1, 1, Padding::Zeros(0))?;
        Ok(Self {
            project,
            convs,
            output,
            channels: c,
            size: cfg.mask_size,
        })
    }

    /// `(n, object_dim), (n, noise_dim) -> (n, 32, 32)` in `[0, 1]`.
    pub fn forward(&self, m: &Tensor, z: &Tensor) -> Result<Tensor> {
        let n = m.dims()[0];
        let x = Tensor::cat(&[m, z], 1)?;
        let mut x = self.project.forward(&x)?.reshape((n, self.channels, MASK_SEED, MASK_SEED))?;
        for (i, conv) in self.convs.iter().enumerate() {
            if i < 3 {
                let (_, _, h, w) = x.dims4()?;
                x = x.upsample_nearest2d(2 * h, 2 * w)?;
            }
            x = conv.forward(&x)?;
        }
        let y = sigmoid(&self.output.forward(&x)?)?;
        Ok(y.reshape((n, self.size, self.size))?)
    }
}

/// Encodes object crops into appearance vectors.
#[derive(Debug, Clone)]
pub struct AppearanceEncoder {
    convs: Vec<ConvBlock>,
    head: Mlp,
    crop: usize,
}

impl AppearanceEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (i, &out) in cfg.appearance_channels.iter().enumerate() {
            convs.push(ConvBlock::new(
                ps,
                &format!("appearance.conv{i}"),
                in_ch,
                out,
                4,
                2,
                Padding::Zeros(1),
                NormKind::Batch,
                Activation::LeakyRelu,
            )?);
            in_ch = out;
        }
        let head = Mlp::new(
            ps,
            "appearance.fc",
            [in_ch, cfg.appearance_hidden, cfg.appearance_dim],
            Activation::Relu,
        )?;
        Ok(Self {
            convs,
            head,
            crop: cfg.crop_size,
        })
    }

    /// `(n, 3, 64, 64) -> (n, appearance_dim)`.
    pub fn forward(&self, crops: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = crops.dims4()?;
        if (c, h, w) != (3, self.crop, self.crop) {
            return Err(Error::Shape(format!(
                "appearance crops must be 3x{0}x{0}, got {c}x{h}x{w}",
                self.crop
            )));
        }
        let mut x = crops.clone();
        for conv in &self.convs {
            x = conv.forward(&x)?;
        }
        self.head.forward(&global_avg_pool(&x)?)
    }
}

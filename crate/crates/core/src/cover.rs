//! Residual encoder-decoder from a layout feature map to an RGB cover.

use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Conv2d, ConvBlock, ConvTranspose2d, Norm, NormKind, Padding, ParamStore};

/// conv-norm-relu-conv-norm with an identity skip.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    first: ConvBlock,
    second: ConvBlock,
}

impl ResidualBlock {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let block = |ps: &mut ParamStore, i: usize, act| {
            ConvBlock::new(
                ps,
                &format!("{name}.{i}"),
                channels,
                channels,
                3,
                1,
                Padding::Zeros(1),
                NormKind::Instance,
                act,
            )
        };
        Ok(Self {
            first: block(ps, 0, Activation::Relu)?,
            second: block(ps, 1, Activation::Identity)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.second.forward(&self.first.forward(x)?)?)?)
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    conv: ConvTranspose2d,
    norm: Norm,
}

#[derive(Debug, Clone)]
pub struct CoverGenerator {
    stem: ConvBlock,
    down: Vec<ConvBlock>,
    residual: Vec<ResidualBlock>,
    up: Vec<UpBlock>,
    output: Conv2d,
    in_channels: usize,
}

impl CoverGenerator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let ch = &cfg.generator_channels;
        if ch.len() < 2 {
            return Err(Error::Config("generator needs at least two channel widths".into()));
        }
        let in_channels = cfg.layout_channels();
        let stem = ConvBlock::new(
            ps,
            "cover.stem",
            in_channels,
            ch[0],
            7,
            1,
            Padding::Reflect(3),
            NormKind::Instance,
            Activation::Relu,
        )?;
        let down = ch
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                ConvBlock::new(
                    ps,
                    &format!("cover.down{i}"),
                    w[0],
                    w[1],
                    3,
                    2,
                    Padding::Zeros(1),
                    NormKind::Instance,
                    Activation::Relu,
                )
            })
            .collect::<Result<_>>()?;
        let deepest = *ch.last().unwrap();
        let residual = (0..cfg.residual_blocks)
            .map(|i| ResidualBlock::new(ps, &format!("cover.res{i}"), deepest))
            .collect::<Result<_>>()?;
        let up = ch
            .windows(2)
            .rev()
            .enumerate()
            .map(|(i, w)| {
                let name = format!("cover.up{i}");
                Ok(UpBlock {
                    conv: ConvTranspose2d::new(ps, &format!("{name}.conv"), w[1], w[0], 3, 2, 1, 1)?,
                    norm: Norm::new(ps, &format!("{name}.norm"), NormKind::Instance, w[0])?,
                })
            })
            .collect::<Result<_>>()?;
        let output = Conv2d::new(ps, "cover.output", ch[0], 3, 7, 1, Padding::Reflect(3))?;
        Ok(Self {
            stem,
            down,
            residual,
            up,
            output,
            in_channels,
        })
    }

    /// `(n, D_app + 1, H, W) -> (n, 3, H, W)` in `[-1, 1]`.
    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        self.forward_traced(f, |_, _| {})
    }

    /// Runs the network and reports the output shape of every stage.
    pub fn forward_traced(&self, f: &Tensor, mut trace: impl FnMut(&str, &[usize])) -> Result<Tensor> {
        let (_, c, h, w) = f.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "layout feature map has {c} channels, generator expects {}",
                self.in_channels
            )));
        }
        let stride = 1usize << self.down.len();
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!("canvas {h}x{w} is not divisible by {stride}")));
        }
        let mut x = self.stem.forward(f)?;
        trace("stem", x.dims());
        for d in &self.down {
            x = d.forward(&x)?;
            trace("down", x.dims());
        }
        for r in &self.residual {
            x = r.forward(&x)?;
        }
        trace("residual", x.dims());
        for u in &self.up {
            x = u.norm.forward(&u.conv.forward(&x)?)?.relu()?;
            trace("up", x.dims());
        }
        let y = self.output.forward(&x)?.tanh()?;
        trace("output", y.dims());
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use candle_core::{DType, Device};

    #[test]
    fn desk_generator_shapes_and_range() {
        let cfg = Config::overfit10().model;
        let mut ps = ParamStore::new(1, DType::F32);
        let g = CoverGenerator::new(&mut ps, &cfg).unwrap();
        let f = Tensor::randn(0f32, 1., (1, cfg.layout_channels(), 64, 64), &Device::Cpu).unwrap();
        let mut spatial = Vec::new();
        let y = g.forward_traced(&f, |_, d| spatial.push(d[2])).unwrap();
        assert_eq!(spatial, vec![64, 32, 16, 8, 4, 4, 8, 16, 32, 64, 64]);
        assert_eq!(y.dims(), &[1, 3, 64, 64]);
        let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|a| (-1.0..=1.0).contains(a)));
        let bad = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(g.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zeroed_residual_branch_is_identity() {
        let mut ps = ParamStore::new(2, DType::F64);
        let block = ResidualBlock::new(&mut ps, "r", 4).unwrap();
        for (name, var) in ps.iter() {
            if name.contains(".conv.") {
                var.set(&var.as_tensor().zeros_like().unwrap()).unwrap();
            }
        }
        let x = Tensor::randn(0f64, 1., (2, 4, 6, 6), &Device::Cpu).unwrap();
        let y = block.forward(&x).unwrap();
        let diff = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }
}

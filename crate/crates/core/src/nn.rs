//! Minimal layer toolkit on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names. Initialization
//! draws from a seeded ChaCha stream so that two stores built with the same
//! seed and the same construction order are bit-identical.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{CpuStorage, CustomOp3, DType, Device, Layout, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

pub struct ParamStore {
    dtype: DType,
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            dtype,
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, dims: &[usize]) -> Result<Tensor> {
        assert!(!self.vars.contains_key(name), "parameter `{name}` registered twice");
        let t = Tensor::from_vec(values, dims, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    /// Zero-mean uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, dims: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.insert(name, values, dims)
    }

    pub fn normal(&mut self, name: &str, dims: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        self.insert(name, values, dims)
    }

    pub fn constant(&mut self, name: &str, dims: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        self.insert(name, vec![value; n], dims)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// SHA-256 over parameter names and values, in name order.
    pub fn checksum(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            let values = var.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex(&h.finalize()))
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path)?;
        Ok(())
    }

    /// Overwrites every parameter with the value stored under the same name.
    /// Names and shapes must match exactly.
    pub fn load(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &Device::Cpu)?;
        self.assign(&loaded)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn assign(&self, values: &HashMap<String, Tensor>) -> Result<()> {
        if values.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.vars.len(),
                values.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.relu()?,
            Activation::LeakyRelu => x.maximum(&(x * LEAKY_SLOPE)?)?,
            Activation::Tanh => x.tanh()?,
            Activation::Sigmoid => sigmoid(x)?,
        })
    }
}

/// Logistic function written through `tanh`, which keeps both the value and
/// its derivative finite for large negative inputs.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = ps.uniform(&format!("{name}.weight"), &[out_dim, in_dim], bound)?;
        let bias = ps.uniform(&format!("{name}.bias"), &[out_dim], bound)?;
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    /// `(n, in) -> (n, out)`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Two fully connected layers with an activation after each.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub hidden_act: Activation,
    pub output_act: Activation,
}

impl Mlp {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        output_act: Activation,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(ps, &format!("{name}.0"), dims[0], dims[1])?,
            output: Linear::new(ps, &format!("{name}.1"), dims[1], dims[2])?,
            hidden_act: Activation::Relu,
            output_act,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.hidden_act.apply(&self.hidden.forward(x)?)?;
        self.output_act.apply(&self.output.forward(&h)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zeros(usize),
    Reflect(usize),
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: Padding,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weight = ps.uniform(&format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], bound)?;
        let bias = ps.uniform(&format!("{name}.bias"), &[out_ch], bound)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (x, pad) = match self.padding {
            Padding::Zeros(p) => (x.clone(), p),
            Padding::Reflect(p) => (reflect_pad(x, p)?, 0),
        };
        let y = conv2d(&x, &self.weight, pad, self.stride)?;
        let c = self.out_channels();
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Inserts `stride - 1` zeros between neighbouring pixels.
fn dilate(x: &Tensor, stride: usize) -> candle_core::Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let (b, c, h, w) = x.dims4()?;
    let zeros = x.zeros_like()?;
    let mut cols = vec![x.clone()];
    cols.extend(std::iter::repeat_n(zeros.clone(), stride - 1));
    let x = Tensor::stack(&cols, 4)?.reshape((b, c, h, w * stride))?;
    let zeros = x.zeros_like()?;
    let mut rows = vec![x];
    rows.extend(std::iter::repeat_n(zeros, stride - 1));
    Tensor::stack(&rows, 3)?
        .reshape((b, c, h * stride, w * stride))?
        .narrow(2, 0, (h - 1) * stride + 1)?
        .narrow(3, 0, (w - 1) * stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Window {
    fn out(&self) -> (usize, usize) {
        let f = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        (f(self.height), f(self.width))
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Calls `f(row, col, pixel, len)` for every run of in-bounds taps: `len`
    /// output columns from `col` read input pixels `stride` apart from
    /// `pixel`. Rows are ordered as `(channel, ky, kx)`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (ho, wo) = self.out();
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        for c in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    // Output columns whose input column lies inside the image.
                    let lo = p.saturating_sub(kx).div_ceil(s);
                    let hi = if self.width + p > kx { ((self.width + p - kx - 1) / s + 1).min(wo) } else { 0 };
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let ix = lo * s + kx - p;
                        f(row, oy * wo + lo, (c * self.height + iy as usize) * self.width + ix, hi - lo);
                    }
                }
            }
        }
    }

    fn im2col<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        let (ho, wo) = self.out();
        let cols = ho * wo;
        let s = self.stride;
        let mut out = vec![T::default(); self.rows() * cols];
        self.for_each_run(|r, c, i, n| {
            let dst = &mut out[r * cols + c..r * cols + c + n];
            if s == 1 {
                dst.copy_from_slice(&x[i..i + n]);
            } else {
                for (d, v) in dst.iter_mut().zip(x[i..].iter().step_by(s)) {
                    *d = *v;
                }
            }
        });
        out
    }

    fn col2im<T: Copy + Default + std::ops::AddAssign>(&self, cols: &[T]) -> Vec<T> {
        let (ho, wo) = self.out();
        let n_cols = ho * wo;
        let s = self.stride;
        let mut out = vec![T::default(); self.channels * self.height * self.width];
        self.for_each_run(|r, c, i, n| {
            let src = &cols[r * n_cols + c..r * n_cols + c + n];
            for (d, v) in out[i..].iter_mut().step_by(s).zip(src) {
                *d += *v;
            }
        });
        out
    }
}

/// Patch matrix `(channels * k * k, out_h * out_w)` of one `(C, H, W)` image.
struct Im2Col(Window);

/// Adjoint of [`Im2Col`]: sums patch columns back into a `(C, H, W)` image.
struct Col2Im(Window);

fn contiguous_slice<'a, T>(v: &'a [T], l: &Layout) -> candle_core::Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&v[a..b]),
        None => candle_core::bail!("expected a contiguous tensor"),
    }
}

impl candle_core::CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (ho, wo) = self.0.out();
        let shape = Shape::from((self.0.rows(), ho * wo));
        Ok(match s {
            CpuStorage::F32(v) => (CpuStorage::F32(self.0.im2col(contiguous_slice(v, l)?)), shape),
            CpuStorage::F64(v) => (CpuStorage::F64(self.0.im2col(contiguous_slice(v, l)?)), shape),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        })
    }
}

impl candle_core::CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let shape = Shape::from((self.0.channels, self.0.height, self.0.width));
        Ok(match s {
            CpuStorage::F32(v) => (CpuStorage::F32(self.0.col2im(contiguous_slice(v, l)?)), shape),
            CpuStorage::F64(v) => (CpuStorage::F64(self.0.col2im(contiguous_slice(v, l)?)), shape),
            _ => candle_core::bail!("col2im supports f32 and f64"),
        })
    }
}

fn window(x: &Tensor, w: &Tensor, padding: usize, stride: usize) -> candle_core::Result<Window> {
    let (_, channels, height, width) = x.dims4()?;
    let kernel = w.dims4()?.2;
    Ok(Window {
        channels,
        height,
        width,
        kernel,
        stride,
        padding,
    })
}

/// Patch matrices of every image in the batch.
fn patches(x: &Tensor, win: Window) -> candle_core::Result<Vec<Tensor>> {
    (0..x.dims()[0])
        .map(|i| x.get(i)?.contiguous()?.apply_op1_no_bwd(&Im2Col(win)))
        .collect()
}

/// Untracked forward pass, one image at a time to bound the patch memory.
fn conv_forward(x: &Tensor, w: &Tensor, padding: usize, stride: usize) -> candle_core::Result<Tensor> {
    let win = window(x, w, padding, stride)?;
    let o = w.dims()[0];
    let (ho, wo) = win.out();
    let wm = w.contiguous()?.reshape((o, win.rows()))?;
    let ys = (0..x.dims()[0])
        .map(|i| wm.matmul(&x.get(i)?.contiguous()?.apply_op1_no_bwd(&Im2Col(win))?))
        .collect::<candle_core::Result<Vec<_>>>()?;
    Tensor::stack(&ys, 0)?.reshape((x.dims()[0], o, ho, wo))
}

/// Attaches the gradient of a convolution to its detached result.
struct ConvGrad {
    padding: usize,
    stride: usize,
}

impl CustomOp3 for ConvGrad {
    fn name(&self) -> &'static str {
        "conv2d-grad"
    }

    fn cpu_fwd(
        &self,
        _: &CpuStorage,
        _: &Layout,
        _: &CpuStorage,
        _: &Layout,
        y: &CpuStorage,
        l: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        match l.contiguous_offsets() {
            Some((0, end)) if end == l.shape().elem_count() => Ok((y.clone(), l.shape().clone())),
            _ => candle_core::bail!("conv2d-grad expects a fresh contiguous output"),
        }
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _: &Tensor,
        _: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let win = window(x, w, self.padding, self.stride)?;
        let (b, o) = (x.dims()[0], w.dims()[0]);
        let (ho, wo) = win.out();
        let grad = grad.contiguous()?.reshape((b, o, ho * wo))?;
        let wm = w.contiguous()?.reshape((o, win.rows()))?;
        let wt = wm.t()?;
        let mut gw = wm.zeros_like()?;
        let mut gx = Vec::with_capacity(b);
        for (i, cols) in patches(x, win)?.iter().enumerate() {
            let g = grad.get(i)?;
            gw = (gw + g.matmul(&cols.t()?)?)?;
            gx.push(wt.matmul(&g)?.apply_op1_no_bwd(&Col2Im(win))?);
        }
        Ok((Some(Tensor::stack(&gx, 0)?), Some(gw.reshape(w.shape())?), None))
    }
}

/// Zero-padded correlation, same result as `Tensor::conv2d`.
pub fn conv2d(x: &Tensor, w: &Tensor, padding: usize, stride: usize) -> candle_core::Result<Tensor> {
    let y = conv_forward(&x.detach(), &w.detach(), padding, stride)?;
    if !x.track_op() && !w.track_op() {
        return Ok(y);
    }
    x.apply_op3(w, &y, ConvGrad { padding, stride })
}

/// Same result as `Tensor::conv_transpose2d` with weight layout `(in, out, k, k)`.
pub fn conv_transpose2d(
    x: &Tensor,
    w: &Tensor,
    padding: usize,
    output_padding: usize,
    stride: usize,
) -> candle_core::Result<Tensor> {
    let k = w.dims()[2];
    let lo = k - 1 - padding;
    let x = dilate(x, stride)?
        .pad_with_zeros(2, lo, lo + output_padding)?
        .pad_with_zeros(3, lo, lo + output_padding)?;
    conv2d(&x, &w.flip(&[2, 3])?.transpose(0, 1)?.contiguous()?, 0, 1)
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weight = ps.uniform(&format!("{name}.weight"), &[in_ch, out_ch, kernel, kernel], bound)?;
        let bias = ps.uniform(&format!("{name}.bias"), &[out_ch], bound)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv_transpose2d(x, &self.weight, self.padding, self.output_padding, self.stride)?;
        let c = self.weight.dims()[1];
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    None,
    /// Statistics over batch and space, always from the current batch.
    Batch,
    /// Statistics over space, per sample and channel.
    Instance,
}

#[derive(Debug, Clone)]
pub struct Norm {
    kind: NormKind,
    affine: Option<(Tensor, Tensor)>,
}

impl Norm {
    pub fn new(ps: &mut ParamStore, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        let affine = match kind {
            NormKind::None => None,
            _ => Some((
                ps.constant(&format!("{name}.gamma"), &[channels], 1.0)?,
                ps.constant(&format!("{name}.beta"), &[channels], 0.0)?,
            )),
        };
        Ok(Self { kind, affine })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        // Reduce the contiguous spatial axis first; candle's strided
        // reductions are much slower.
        let stats = |t: &Tensor| -> Result<Tensor> {
            let m = t.reshape((b, c, h * w))?.mean_keepdim(2)?;
            let m = match self.kind {
                NormKind::Batch => m.mean_keepdim(0)?,
                _ => m,
            };
            Ok(m.unsqueeze(3)?)
        };
        if self.kind == NormKind::None {
            return Ok(x.clone());
        }
        let centered = x.broadcast_sub(&stats(x)?)?;
        let var = stats(&centered.sqr()?)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        let (gamma, beta) = self.affine.as_ref().expect("affine present for non-None norms");
        let c = gamma.dims()[0];
        Ok(normed
            .broadcast_mul(&gamma.reshape((1, c, 1, 1))?)?
            .broadcast_add(&beta.reshape((1, c, 1, 1))?)?)
    }
}

/// Convolution followed by normalization and an activation.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Norm,
    pub act: Activation,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        norm: NormKind,
        act: Activation,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &format!("{name}.conv"), in_ch, out_ch, kernel, stride, padding)?,
            norm: Norm::new(ps, &format!("{name}.norm"), norm, out_ch)?,
            act,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.act.apply(&self.norm.forward(&self.conv.forward(x)?)?)
    }
}

fn reflect_indices(len: usize, pad: usize) -> Vec<u32> {
    let n = len as i64;
    (0..len + 2 * pad)
        .map(|i| {
            let mut j = i as i64 - pad as i64;
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
            j as u32
        })
        .collect()
}

/// Reflection padding on the two spatial dimensions of an NCHW tensor.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if pad >= h || pad >= w {
        return Err(Error::Shape(format!("reflection pad {pad} too large for {h}x{w}")));
    }
    let iw = Tensor::new(reflect_indices(w, pad), x.device())?;
    let ih = Tensor::new(reflect_indices(h, pad), x.device())?;
    Ok(x.index_select(&iw, 3)?.index_select(&ih, 2)?)
}

/// 3x3 average pooling with stride 2 and no padding.
pub fn avg_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let kernel = Tensor::full(1.0 / 9.0, (1, 1, 3, 3), x.device())?.to_dtype(x.dtype())?;
    let y = conv2d(&x.reshape((n * c, 1, h, w))?, &kernel, 0, 2)?;
    let (_, _, oh, ow) = y.dims4()?;
    Ok(y.reshape((n, c, oh, ow))?)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(3)?.mean(2)?)
}

/// Combines two seeds into one (splitmix64 finalizer over their mix).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

//! Placing masks into boxes and cutting boxes back out of images.
//!
//! Both directions use the same separable bilinear resampling (half-pixel
//! centres, edge clamping) written as two small matrices, so the result is
//! differentiable with respect to the mask or image values. Boxes are first
//! rounded to whole pixels; nothing is written outside that rectangle.

use candle_core::{DType, Device, Tensor};

use super::BoundingBox;
use crate::error::{Error, Result};

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Pixel rectangle of a normalized box on a square canvas, or `None` when it
/// rounds to less than one pixel in either direction.
pub fn pixel_rect(b: &BoundingBox, canvas: usize) -> Option<PixelRect> {
    let px = |v: f32| ((v.clamp(0.0, 1.0) * canvas as f32).round() as usize).min(canvas);
    let r = PixelRect {
        x0: px(b.x0),
        y0: px(b.y0),
        x1: px(b.x1),
        y1: px(b.y1),
    };
    (r.x1 > r.x0 && r.y1 > r.y0).then_some(r)
}

/// Like [`pixel_rect`] but widens degenerate boxes to one pixel, for crops
/// that must exist for every object.
pub fn pixel_rect_at_least_one(b: &BoundingBox, canvas: usize) -> PixelRect {
    pixel_rect(b, canvas).unwrap_or_else(|| {
        let c = |v: f32| ((v.clamp(0.0, 1.0) * canvas as f32) as usize).min(canvas - 1);
        let (x0, y0) = (c(b.x0), c(b.y0));
        PixelRect {
            x0,
            y0,
            x1: (c(b.x1) + 1).max(x0 + 1),
            y1: (c(b.y1) + 1).max(y0 + 1),
        }
    })
}

/// Bilinear taps mapping `src_len` samples onto `dst_len` pixels: for each
/// destination pixel, `(i0, i1, w)` with value `(1 - w) * src[i0] + w * src[i1]`.
pub fn bilinear_taps(dst_len: usize, src_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let t = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = t.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, (t - i0 as f64) as f32)
        })
        .collect()
}

/// `(canvas, src_len)` matrix placing a length-`src_len` signal into rows
/// `[start, start + len)`; other rows are zero.
fn placement_rows(start: usize, len: usize, canvas: usize, src_len: usize) -> Vec<f32> {
    let mut m = vec![0f32; canvas * src_len];
    for (k, (i0, i1, w)) in bilinear_taps(len, src_len).into_iter().enumerate() {
        let row = &mut m[(start + k) * src_len..(start + k + 1) * src_len];
        row[i0] += 1.0 - w;
        row[i1] += w;
    }
    m
}

/// `(out, canvas)` matrix sampling rows `[start, start + len)` of a canvas
/// onto `out` pixels.
fn sampling_rows(start: usize, len: usize, canvas: usize, out: usize) -> Vec<f32> {
    let mut m = vec![0f32; out * canvas];
    for (k, (i0, i1, w)) in bilinear_taps(out, len).into_iter().enumerate() {
        let row = &mut m[k * canvas..(k + 1) * canvas];
        row[start + i0] += 1.0 - w;
        row[start + i1] += w;
    }
    m
}

/// Resamples every mask into its box on a `canvas x canvas` grid.
/// Returns `(objects, canvas, canvas)` and the indices of skipped objects.
pub fn place_masks(boxes: &[BoundingBox], masks: &Tensor, canvas: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, mh, mw) = masks.dims3()?;
    if n != boxes.len() {
        return Err(Error::Alignment(format!("{} boxes for {n} masks", boxes.len())));
    }
    let mut wy = Vec::with_capacity(n * canvas * mh);
    let mut wx = Vec::with_capacity(n * canvas * mw);
    let mut skipped = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        match pixel_rect(b, canvas) {
            Some(r) => {
                wy.extend(placement_rows(r.y0, r.height(), canvas, mh));
                wx.extend(placement_rows(r.x0, r.width(), canvas, mw));
            }
            None => {
                log::warn!("object {i}: box {b:?} is smaller than one pixel, skipped");
                skipped.push(i);
                wy.extend(std::iter::repeat_n(0.0, canvas * mh));
                wx.extend(std::iter::repeat_n(0.0, canvas * mw));
            }
        }
    }
    let dtype = masks.dtype();
    let wy = Tensor::from_vec(wy, (n, canvas, mh), &Device::Cpu)?.to_dtype(dtype)?;
    let wx = Tensor::from_vec(wx, (n, canvas, mw), &Device::Cpu)?.to_dtype(dtype)?;
    let placed = wy.matmul(masks)?.matmul(&wx.transpose(1, 2)?)?;
    Ok((placed, skipped))
}

/// Layout feature maps for a batch of graphs: `(graphs, C + 1, canvas, canvas)`.
///
/// Channel `c < C` holds `sum_o mask_o * a_o[c]` over the objects of the
/// graph; the last channel accumulates the placed mask values.
pub fn compose_batch(
    boxes: &[BoundingBox],
    masks: &Tensor,
    appearances: &Tensor,
    graph_index: &[usize],
    num_graphs: usize,
    canvas: usize,
) -> Result<Tensor> {
    let (n, c) = appearances.dims2()?;
    if graph_index.len() != n || masks.dims()[0] != n {
        return Err(Error::Alignment(format!(
            "{n} appearance vectors, {} masks, {} graph indices",
            masks.dims()[0],
            graph_index.len()
        )));
    }
    let (placed, _) = place_masks(boxes, masks, canvas)?;
    let placed = placed.reshape((n, canvas * canvas))?;
    let mut maps = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let idx: Vec<u32> = (0..n).filter(|&i| graph_index[i] == g).map(|i| i as u32).collect();
        if idx.is_empty() {
            maps.push(Tensor::zeros((c + 1, canvas * canvas), appearances.dtype(), &Device::Cpu)?);
            continue;
        }
        let idx = Tensor::new(idx, &Device::Cpu)?;
        let a = appearances.index_select(&idx, 0)?;
        let p = placed.index_select(&idx, 0)?;
        let channels = a.t()?.matmul(&p)?;
        let occupancy = p.sum_keepdim(0)?;
        maps.push(Tensor::cat(&[&channels, &occupancy], 0)?);
    }
    Ok(Tensor::stack(&maps, 0)?.reshape((num_graphs, c + 1, canvas, canvas))?)
}

/// Feature map of a single graph: `(C + 1, canvas, canvas)`.
pub fn compose_feature_map(
    boxes: &[BoundingBox],
    masks: &Tensor,
    appearances: &Tensor,
    canvas: usize,
) -> Result<Tensor> {
    let n = boxes.len();
    Ok(compose_batch(boxes, masks, appearances, &vec![0; n], 1, canvas)?.squeeze(0)?)
}

/// Cuts each object's box out of its image and resizes it to `out x out`.
/// `images` is `(graphs, channels, canvas, canvas)`; the result is
/// `(objects, channels, out, out)`.
pub fn crop_and_resize(images: &Tensor, boxes: &[BoundingBox], graph_index: &[usize], out: usize) -> Result<Tensor> {
    let (_, _, h, w) = images.dims4()?;
    if h != w {
        return Err(Error::Shape(format!("expected square images, got {h}x{w}")));
    }
    if boxes.len() != graph_index.len() {
        return Err(Error::Alignment(format!(
            "{} boxes for {} graph indices",
            boxes.len(),
            graph_index.len()
        )));
    }
    let n = boxes.len();
    let mut ry = Vec::with_capacity(n * out * h);
    let mut rx = Vec::with_capacity(n * out * w);
    for b in boxes {
        let r = pixel_rect_at_least_one(b, h);
        ry.extend(sampling_rows(r.y0, r.height(), h, out));
        rx.extend(sampling_rows(r.x0, r.width(), w, out));
    }
    let dtype = images.dtype();
    let ry = Tensor::from_vec(ry, (n, 1, out, h), &Device::Cpu)?.to_dtype(dtype)?;
    let rx = Tensor::from_vec(rx, (n, 1, out, w), &Device::Cpu)?.to_dtype(dtype)?;
    let idx = Tensor::new(graph_index.iter().map(|&g| g as u32).collect::<Vec<_>>(), &Device::Cpu)?;
    let src = images.index_select(&idx, 0)?;
    let cols = src.broadcast_matmul(&rx.transpose(2, 3)?)?;
    Ok(ry.broadcast_matmul(&cols)?)
}

/// Bilinear crop-and-resize of an interleaved `h x w x channels` f32 buffer.
pub fn crop_resize_interleaved(
    data: &[f32],
    w: usize,
    channels: usize,
    rect: PixelRect,
    out_w: usize,
    out_h: usize,
) -> Vec<f32> {
    let ty = bilinear_taps(out_h, rect.height());
    let tx = bilinear_taps(out_w, rect.width());
    let mut res = vec![0f32; out_w * out_h * channels];
    for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
            for c in 0..channels {
                let at = |y: usize, x: usize| data[((rect.y0 + y) * w + rect.x0 + x) * channels + c];
                let top = (1.0 - wx) * at(y0, x0) + wx * at(y0, x1);
                let bottom = (1.0 - wx) * at(y1, x0) + wx * at(y1, x1);
                res[(oy * out_w + ox) * channels + c] = (1.0 - wy) * top + wy * bottom;
            }
        }
    }
    res
}

pub fn tensor_to_vec3(t: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec3::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_cover_identity_and_upsampling() {
        let same = bilinear_taps(4, 4);
        for (i, &(i0, _, w)) in same.iter().enumerate() {
            assert_eq!(i0, i);
            assert_eq!(w, 0.0);
        }
        let up = bilinear_taps(4, 2);
        assert_eq!(up[0], (0, 1, 0.0));
        assert_eq!(up[1], (0, 1, 0.25));
        assert_eq!(up[2], (0, 1, 0.75));
        assert_eq!(up[3], (1, 1, 0.0));
    }

    #[test]
    fn rect_rounding_and_degenerate_boxes() {
        let b = BoundingBox::new(0.1, 0.2, 0.5, 0.9).unwrap();
        assert_eq!(pixel_rect(&b, 128), Some(PixelRect { x0: 13, y0: 26, x1: 64, y1: 115 }));
        let tiny = BoundingBox::new(0.5, 0.5, 0.502, 0.6).unwrap();
        assert_eq!(pixel_rect(&tiny, 128), None);
        let r = pixel_rect_at_least_one(&tiny, 128);
        assert_eq!((r.width(), r.x0), (1, 64));
    }

    #[test]
    fn crop_of_full_canvas_with_identity_size_is_exact() {
        let img = Tensor::randn(0f64, 1., (2, 3, 16, 16), &Device::Cpu).unwrap();
        let full = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let crops = crop_and_resize(&img, &[full, full], &[1, 0], 16).unwrap();
        let a: Vec<f64> = crops.get(0).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = img.get(1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interleaved_crop_agrees_with_tensor_crop() {
        let img = Tensor::randn(0f32, 1., (1, 3, 32, 32), &Device::Cpu).unwrap();
        let b = BoundingBox::new(0.1, 0.3, 0.7, 0.8).unwrap();
        let t = crop_and_resize(&img, &[b], &[0], 12).unwrap();
        let hwc: Vec<f32> = img.squeeze(0).unwrap().permute((1, 2, 0)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let rect = pixel_rect(&b, 32).unwrap();
        let v = crop_resize_interleaved(&hwc, 32, 3, rect, 12, 12);
        let t: Vec<f32> = t.squeeze(0).unwrap().permute((1, 2, 0)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (a, b) in v.iter().zip(&t) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

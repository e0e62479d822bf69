//! Title text: rendering the placeholder into training covers and replacing
//! it with the user's text on generated covers.

mod color;
mod transfer;

use std::sync::OnceLock;

use ab_glyph::{point, Font, FontRef, PxScale, ScaleFont};
use image::{Rgb, RgbImage};

pub use color::{delta_e, hsv_to_rgb, srgb_to_lab};
pub use transfer::{
    fallback_transfer, paste_title, transfer_title_style, ExternalBackend, StyleTransferResult, TitleBackend,
    TitleRegion, BACKGROUND_TOLERANCE,
};

use crate::synthesis::PixelRect;

/// Fraction of the box left empty on each side when fitting text.
pub const TITLE_MARGIN: f32 = 0.05;
/// Below this pixel height a fitted title is reported as hard to read.
pub const MIN_LEGIBLE_PX: f32 = 6.0;

pub struct NamedFont {
    pub name: &'static str,
    pub font: FontRef<'static>,
}

static FONTS: OnceLock<Vec<NamedFont>> = OnceLock::new();

/// The bundled fonts, in a fixed order.
pub fn fonts() -> &'static [NamedFont] {
    FONTS.get_or_init(|| {
        let raw: [(&'static str, &'static [u8]); 6] = [
            ("DejaVu Sans", include_bytes!("../../assets/fonts/DejaVuSans.ttf")),
            ("DejaVu Sans Bold", include_bytes!("../../assets/fonts/DejaVuSans-Bold.ttf")),
            ("DejaVu Serif", include_bytes!("../../assets/fonts/DejaVuSerif.ttf")),
            ("DejaVu Serif Bold", include_bytes!("../../assets/fonts/DejaVuSerif-Bold.ttf")),
            ("DejaVu Sans Mono", include_bytes!("../../assets/fonts/DejaVuSansMono.ttf")),
            (
                "DejaVu Sans Mono Bold",
                include_bytes!("../../assets/fonts/DejaVuSansMono-Bold.ttf"),
            ),
        ];
        raw.into_iter()
            .map(|(name, bytes)| NamedFont {
                name,
                font: FontRef::try_from_slice(bytes).expect("bundled fonts parse"),
            })
            .collect()
    })
}

/// Coverage of `text` drawn on one line: `(width, height, alpha)`.
pub struct TextMask {
    pub width: usize,
    pub height: usize,
    pub alpha: Vec<f32>,
}

impl TextMask {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.alpha[y * self.width + x]
    }
}

/// Unscaled extent of `text` at pixel height `px`.
fn measure(font: &FontRef<'static>, text: &str, px: f32) -> (f32, f32) {
    let scaled = font.as_scaled(PxScale::from(px));
    let mut width = 0.0;
    let mut prev = None;
    for c in text.chars() {
        let id = scaled.glyph_id(c);
        if let Some(p) = prev {
            width += scaled.kern(p, id);
        }
        width += scaled.h_advance(id);
        prev = Some(id);
    }
    (width, scaled.ascent() - scaled.descent())
}

/// Renders `text` at pixel height `px` into a tight line box.
pub fn rasterize(font: &FontRef<'static>, text: &str, px: f32) -> TextMask {
    let (w, h) = measure(font, text, px);
    let (width, height) = (w.ceil().max(1.0) as usize, h.ceil().max(1.0) as usize);
    let mut alpha = vec![0f32; width * height];
    let scaled = font.as_scaled(PxScale::from(px));
    let mut x = 0.0;
    let mut prev = None;
    for c in text.chars() {
        let id = scaled.glyph_id(c);
        if let Some(p) = prev {
            x += scaled.kern(p, id);
        }
        let glyph = id.with_scale_and_position(PxScale::from(px), point(x, scaled.ascent()));
        x += scaled.h_advance(id);
        prev = Some(id);
        let Some(outline) = font.outline_glyph(glyph) else {
            continue;
        };
        let b = outline.px_bounds();
        outline.draw(|gx, gy, cov| {
            let px_x = b.min.x as i64 + gx as i64;
            let px_y = b.min.y as i64 + gy as i64;
            if px_x >= 0 && px_y >= 0 && (px_x as usize) < width && (px_y as usize) < height {
                let a = &mut alpha[px_y as usize * width + px_x as usize];
                *a = (*a + cov).min(1.0);
            }
        });
    }
    TextMask { width, height, alpha }
}

/// Largest pixel height at which `text` fits in `w x h` minus the margin.
pub fn fit_height(font: &FontRef<'static>, text: &str, w: usize, h: usize) -> f32 {
    let avail_w = w as f32 * (1.0 - 2.0 * TITLE_MARGIN);
    let avail_h = h as f32 * (1.0 - 2.0 * TITLE_MARGIN);
    let (rw, rh) = measure(font, text, 100.0);
    let mut px = 100.0 * (avail_w / rw.max(1e-3)).min(avail_h / rh.max(1e-3));
    // Ceil-rounding of the rasterized extent can overshoot by a pixel.
    for _ in 0..20 {
        let (mw, mh) = measure(font, text, px);
        if mw.ceil() <= avail_w.max(1.0) && mh.ceil() <= avail_h.max(1.0) {
            break;
        }
        px *= 0.95;
    }
    px.max(1.0)
}

/// Text rendered to fit a box, centred, as coverage over the box.
pub fn fitted_mask(font: &FontRef<'static>, text: &str, w: usize, h: usize) -> TextMask {
    let px = fit_height(font, text, w, h);
    if px < MIN_LEGIBLE_PX {
        log::warn!("title \"{text}\" shrunk to {px:.1} px to fit a {w}x{h} box");
    }
    let line = rasterize(font, text, px);
    let ox = (w.saturating_sub(line.width)) / 2;
    let oy = (h.saturating_sub(line.height)) / 2;
    let mut alpha = vec![0f32; w * h];
    for y in 0..line.height.min(h) {
        for x in 0..line.width.min(w) {
            if ox + x < w && oy + y < h {
                alpha[(oy + y) * w + ox + x] = line.at(x, y);
            }
        }
    }
    TextMask { width: w, height: h, alpha }
}

/// Blends `color` over `img` inside `rect` with the given coverage.
pub fn composite(img: &mut RgbImage, rect: PixelRect, mask: &TextMask, color: [u8; 3]) {
    for y in 0..mask.height {
        for x in 0..mask.width {
            let a = mask.at(x, y);
            let (cx, cy) = ((rect.x0 + x) as u32, (rect.y0 + y) as u32);
            if a <= 0.0 || cx >= img.width() || cy >= img.height() {
                continue;
            }
            let p = img.get_pixel_mut(cx, cy);
            for c in 0..3 {
                p.0[c] = (a * color[c] as f32 + (1.0 - a) * p.0[c] as f32).round() as u8;
            }
        }
    }
}

/// Draws `text` fitted into `rect` on `img` and returns its coverage.
pub fn render_placeholder(img: &mut RgbImage, text: &str, font: usize, color: [u8; 3], rect: PixelRect) -> TextMask {
    let f = &fonts()[font % fonts().len()].font;
    let mask = fitted_mask(f, text, rect.width(), rect.height());
    composite(img, rect, &mask, color);
    mask
}

pub fn crop(img: &RgbImage, rect: PixelRect) -> RgbImage {
    RgbImage::from_fn(rect.width() as u32, rect.height() as u32, |x, y| {
        *img.get_pixel(rect.x0 as u32 + x, rect.y0 as u32 + y)
    })
}

pub fn solid(w: u32, h: u32, color: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb(color))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_least_five_fonts_render() {
        assert!(fonts().len() >= 5);
        for f in fonts() {
            let m = rasterize(&f.font, "Lorem Ipsum", 20.0);
            assert!(m.alpha.iter().any(|&a| a > 0.5), "{}", f.name);
        }
    }

    #[test]
    fn placeholder_is_deterministic_and_clipped_to_its_box() {
        let rect = PixelRect { x0: 20, y0: 40, x1: 100, y1: 64 };
        let draw = || {
            let mut img = solid(128, 128, [10, 20, 30]);
            render_placeholder(&mut img, "Lorem Ipsum", 2, [240, 200, 20], rect);
            img
        };
        let a = draw();
        assert_eq!(a, draw());
        for (x, y, p) in a.enumerate_pixels() {
            if !rect.contains(x as usize, y as usize) {
                assert_eq!(p.0, [10, 20, 30]);
            }
        }
    }

    #[test]
    fn text_color_is_reproduced() {
        let rect = PixelRect { x0: 0, y0: 0, x1: 120, y1: 40 };
        let mut img = solid(128, 128, [255, 255, 255]);
        let color = [200, 30, 60];
        let mask = render_placeholder(&mut img, "Lorem Ipsum", 1, color, rect);
        let mut sum = [0f64; 3];
        let mut n = 0.0;
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.at(x, y) >= 0.99 {
                    let p = img.get_pixel(x as u32, y as u32).0;
                    for c in 0..3 {
                        sum[c] += p[c] as f64;
                    }
                    n += 1.0;
                }
            }
        }
        let mean = sum.map(|s| (s / n).round() as u8);
        assert!(delta_e(mean, color) < 10.0);
    }

    #[test]
    fn tiny_box_still_renders_inside() {
        let rect = PixelRect { x0: 5, y0: 5, x1: 15, y1: 9 };
        let mut img = solid(32, 32, [0, 0, 0]);
        let m = render_placeholder(&mut img, "Lorem Ipsum", 0, [255, 255, 255], rect);
        assert_eq!((m.width, m.height), (10, 4));
    }
}

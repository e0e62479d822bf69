//! Replacing the placeholder title in a cover crop with new text.

use std::path::Path;
use std::process::Command;

use image::{Rgb, RgbImage};

use super::{composite, fitted_mask, fonts, solid, TextMask};
use crate::config::{TitleBackendKind, TitleConfig};
use crate::error::{Error, Result};
use crate::graph::PLACEHOLDER_TITLE;
use crate::synthesis::PixelRect;

/// RGB distance from the background colour above which a pixel is treated
/// as text and erased.
pub const BACKGROUND_TOLERANCE: f32 = 24.0;

pub struct TitleRegion {
    pub rect: PixelRect,
    pub crop: RgbImage,
    pub desired_text: String,
}

impl TitleRegion {
    pub fn new(cover: &RgbImage, rect: PixelRect, desired_text: &str) -> Result<Self> {
        if desired_text.trim().is_empty() {
            return Err(Error::InvalidRequest("title text must not be empty".into()));
        }
        if rect.x1 > cover.width() as usize || rect.y1 > cover.height() as usize || rect.width() == 0 || rect.height() == 0
        {
            return Err(Error::InvalidRequest(format!("title box {rect:?} is outside the cover")));
        }
        Ok(Self {
            rect,
            crop: super::crop(cover, rect),
            desired_text: desired_text.to_string(),
        })
    }
}

pub struct StyleTransferResult {
    /// Desired text drawn over the erased background; same size as the crop.
    pub styled: RgbImage,
    /// The crop with the placeholder removed.
    pub background: RgbImage,
    pub font: Option<usize>,
    pub text_color: [u8; 3],
    pub background_color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalBackend {
    /// Program and leading arguments. Four paths are appended: the desired
    /// text in a plain font, the stylized crop, and the two outputs (text
    /// image, background image).
    pub command: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TitleBackend {
    Fallback,
    External(ExternalBackend),
}

impl TitleBackend {
    pub fn from_config(cfg: &TitleConfig) -> Result<Self> {
        match cfg.backend {
            TitleBackendKind::Fallback => Ok(Self::Fallback),
            TitleBackendKind::External => match &cfg.external_command {
                Some(cmd) if !cmd.is_empty() => Ok(Self::External(ExternalBackend { command: cmd.clone() })),
                _ => Err(Error::Config("title backend `external` needs `external_command`".into())),
            },
        }
    }
}

fn dist(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt()
}

fn mean(px: &[[f32; 3]]) -> [f32; 3] {
    let n = px.len().max(1) as f32;
    let mut m = [0f32; 3];
    for p in px {
        for c in 0..3 {
            m[c] += p[c] / n;
        }
    }
    m
}

fn to_u8(c: [f32; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

/// Background and text colours by 2-means; the background cluster is the
/// one holding most border pixels.
fn estimate_colors(crop: &RgbImage) -> ([f32; 3], [f32; 3], bool) {
    let (w, h) = (crop.width(), crop.height());
    let px: Vec<[f32; 3]> = crop.pixels().map(|p| p.0.map(|v| v as f32)).collect();
    let border: Vec<usize> = (0..px.len())
        .filter(|&i| {
            let (x, y) = (i as u32 % w, i as u32 / w);
            x == 0 || y == 0 || x + 1 == w || y + 1 == h
        })
        .collect();
    let border_px: Vec<[f32; 3]> = border.iter().map(|&i| px[i]).collect();
    let mut centers = [mean(&border_px), [0.0; 3]];
    let far = px
        .iter()
        .copied()
        .max_by(|a, b| dist(*a, centers[0]).total_cmp(&dist(*b, centers[0])))
        .unwrap_or(centers[0]);
    if dist(far, centers[0]) < 1.0 {
        return (centers[0], centers[0], false);
    }
    centers[1] = far;
    let mut assign = vec![0usize; px.len()];
    for _ in 0..25 {
        let mut changed = false;
        for (i, p) in px.iter().enumerate() {
            let k = usize::from(dist(*p, centers[1]) < dist(*p, centers[0]));
            changed |= k != assign[i];
            assign[i] = k;
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<[f32; 3]> = px.iter().zip(&assign).filter(|(_, &a)| a == k).map(|(p, _)| *p).collect();
            if !members.is_empty() {
                *center = mean(&members);
            }
        }
        if !changed {
            break;
        }
    }
    let border_in_one = border.iter().filter(|&&i| assign[i] == 1).count();
    let bg = usize::from(border_in_one * 2 > border.len());
    let bg_color = centers[bg];
    // Anti-aliased edges pull the cluster mean toward the background, so
    // the text colour is taken from its most saturated members.
    let text: Vec<[f32; 3]> = px.iter().zip(&assign).filter(|(_, &a)| a != bg).map(|(p, _)| *p).collect();
    let max_d = text.iter().map(|p| dist(*p, bg_color)).fold(0.0, f32::max);
    let core: Vec<[f32; 3]> = text.into_iter().filter(|p| dist(*p, bg_color) >= 0.9 * max_d).collect();
    let text_color = if core.is_empty() { centers[1 - bg] } else { mean(&core) };
    (bg_color, text_color, true)
}

fn contrast(bg: [f32; 3]) -> [f32; 3] {
    let luma = 0.299 * bg[0] + 0.587 * bg[1] + 0.114 * bg[2];
    if luma > 128.0 { [0.0; 3] } else { [255.0; 3] }
}

/// Replaces every pixel that stands out from the background (plus a
/// one-pixel rim) with the background colour.
fn erase(crop: &RgbImage, bg: [u8; 3]) -> RgbImage {
    let (w, h) = (crop.width() as i64, crop.height() as i64);
    let bgf = bg.map(|v| v as f32);
    let text: Vec<bool> = crop.pixels().map(|p| dist(p.0.map(|v| v as f32), bgf) > BACKGROUND_TOLERANCE).collect();
    let mut out = crop.clone();
    for y in 0..h {
        for x in 0..w {
            let near = (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && text[(ny * w + nx) as usize]
                })
            });
            if near {
                out.put_pixel(x as u32, y as u32, Rgb(bg));
            }
        }
    }
    out
}

fn l1(a: &RgbImage, b: &RgbImage) -> f64 {
    a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum()
}

fn whole(img: &RgbImage) -> PixelRect {
    PixelRect {
        x0: 0,
        y0: 0,
        x1: img.width() as usize,
        y1: img.height() as usize,
    }
}

/// Font whose rendered placeholder best matches the crop.
fn closest_font(crop: &RgbImage, bg: [u8; 3], text: [u8; 3]) -> usize {
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let mut best = (f64::INFINITY, 0);
    for (i, f) in fonts().iter().enumerate() {
        let mut candidate = solid(w as u32, h as u32, bg);
        let mask = fitted_mask(&f.font, PLACEHOLDER_TITLE, w, h);
        composite(&mut candidate, whole(crop), &mask, text);
        let d = l1(&candidate, crop);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Built-in transfer: 2-means colour estimate, background fill, font match,
/// re-render. Succeeds on any crop.
pub fn fallback_transfer(region: &TitleRegion) -> StyleTransferResult {
    let crop = &region.crop;
    let (bg, text, has_text) = estimate_colors(crop);
    let text = if has_text { text } else { contrast(bg) };
    let (bg8, text8) = (to_u8(bg), to_u8(text));
    let background = erase(crop, bg8);
    let font = closest_font(crop, bg8, text8);
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let mask: TextMask = fitted_mask(&fonts()[font].font, &region.desired_text, w, h);
    let mut styled = background.clone();
    composite(&mut styled, whole(crop), &mask, text8);
    StyleTransferResult {
        styled,
        background,
        font: Some(font),
        text_color: text8,
        background_color: bg8,
    }
}

fn run_external(ext: &ExternalBackend, region: &TitleRegion) -> Result<StyleTransferResult> {
    let (program, args) = ext
        .command
        .split_first()
        .ok_or_else(|| Error::Backend("empty external command".into()))?;
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name);
    let (w, h) = (region.crop.width(), region.crop.height());
    let mut plain = solid(w, h, [127, 127, 127]);
    let mask = fitted_mask(&fonts()[0].font, &region.desired_text, w as usize, h as usize);
    composite(&mut plain, whole(&region.crop), &mask, [0, 0, 0]);
    plain.save(path("i_t.png"))?;
    region.crop.save(path("i_s.png"))?;
    let status = Command::new(program)
        .args(args)
        .arg(path("i_t.png"))
        .arg(path("i_s.png"))
        .arg(path("o_f.png"))
        .arg(path("o_b.png"))
        .status()
        .map_err(|e| Error::Backend(format!("cannot start `{program}`: {e}")))?;
    if !status.success() {
        return Err(Error::Backend(format!("`{program}` exited with {status}")));
    }
    let load = |p: &Path| -> Result<RgbImage> {
        let img = image::open(p)
            .map_err(|e| Error::Backend(format!("{}: {e}", p.display())))?
            .to_rgb8();
        if img.dimensions() != (w, h) {
            return Err(Error::Backend(format!(
                "{} is {:?}, expected {w}x{h}",
                p.display(),
                img.dimensions()
            )));
        }
        Ok(img)
    };
    let styled = load(&path("o_f.png"))?;
    let background = load(&path("o_b.png"))?;
    let (bg, text, _) = estimate_colors(&region.crop);
    Ok(StyleTransferResult {
        styled,
        background,
        font: None,
        text_color: to_u8(text),
        background_color: to_u8(bg),
    })
}

/// Runs the selected backend. A failing external backend falls back to the
/// built-in one.
pub fn transfer_title_style(region: &TitleRegion, backend: &TitleBackend) -> StyleTransferResult {
    match backend {
        TitleBackend::Fallback => fallback_transfer(region),
        TitleBackend::External(ext) => match run_external(ext, region) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("external title backend unavailable ({e}); using the built-in fallback");
                fallback_transfer(region)
            }
        },
    }
}

/// Copies `patch` onto `cover` with its top-left corner at `(x0, y0)`,
/// clipping at the cover borders.
pub fn paste_title(cover: &mut RgbImage, patch: &RgbImage, x0: i64, y0: i64) {
    let (cw, ch) = (cover.width() as i64, cover.height() as i64);
    for (px, py, p) in patch.enumerate_pixels() {
        let (x, y) = (x0 + px as i64, y0 + py as i64);
        if x >= 0 && y >= 0 && x < cw && y < ch {
            cover.put_pixel(x as u32, y as u32, *p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::title::{delta_e, render_placeholder};

    fn synthetic_cover(font: usize, color: [u8; 3], bg: [u8; 3]) -> (RgbImage, PixelRect) {
        let mut img = solid(128, 128, [30, 90, 160]);
        let rect = PixelRect { x0: 8, y0: 12, x1: 120, y1: 40 };
        for y in rect.y0..rect.y1 {
            for x in rect.x0..rect.x1 {
                img.put_pixel(x as u32, y as u32, Rgb(bg));
            }
        }
        render_placeholder(&mut img, PLACEHOLDER_TITLE, font, color, rect);
        (img, rect)
    }

    #[test]
    fn recovers_font_and_colour() {
        for font in 0..fonts().len() {
            let color = [220, 40, 40];
            let (img, rect) = synthetic_cover(font, color, [245, 240, 220]);
            let region = TitleRegion::new(&img, rect, "Sheep").unwrap();
            let r = fallback_transfer(&region);
            assert_eq!(r.font, Some(font), "font {}", fonts()[font].name);
            assert!(delta_e(r.text_color, color) < 15.0);
            assert_eq!(r.styled.dimensions(), region.crop.dimensions());
        }
    }

    #[test]
    fn short_text_fully_erases_longer_placeholder() {
        let (img, rect) = synthetic_cover(3, [20, 20, 20], [250, 250, 250]);
        let region = TitleRegion::new(&img, rect, "Sheep").unwrap();
        let r = fallback_transfer(&region);
        let bg = r.background_color.map(|v| v as f32);
        for p in r.background.pixels() {
            assert!(dist(p.0.map(|v| v as f32), bg) <= BACKGROUND_TOLERANCE);
        }
    }

    #[test]
    fn uniform_crop_is_handled() {
        let img = solid(64, 64, [200, 200, 200]);
        let rect = PixelRect { x0: 0, y0: 0, x1: 64, y1: 20 };
        let r = fallback_transfer(&TitleRegion::new(&img, rect, "Hello").unwrap());
        assert_eq!(r.text_color, [0, 0, 0]);
        assert_eq!(r.background, super::super::crop(&img, rect));
    }

    #[test]
    fn paste_clips_at_every_border() {
        let patch = solid(10, 10, [255, 0, 0]);
        for (x0, y0) in [(-5i64, 20i64), (25, 20), (10, -5), (10, 25)] {
            let mut cover = solid(32, 32, [0, 0, 0]);
            paste_title(&mut cover, &patch, x0, y0);
            for (x, y, p) in cover.enumerate_pixels() {
                let inside = (x as i64) >= x0 && (x as i64) < x0 + 10 && (y as i64) >= y0 && (y as i64) < y0 + 10;
                assert_eq!(p.0 == [255, 0, 0], inside, "({x0},{y0}) at ({x},{y})");
            }
        }
    }

    #[test]
    fn missing_external_program_falls_back() {
        let (img, rect) = synthetic_cover(0, [0, 0, 0], [255, 255, 255]);
        let region = TitleRegion::new(&img, rect, "Sheep").unwrap();
        let backend = TitleBackend::External(ExternalBackend {
            command: vec!["/nonexistent/srnet".into()],
        });
        let r = transfer_title_style(&region, &backend);
        assert!(r.font.is_some());
    }
}

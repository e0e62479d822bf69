//! Book cover corpus.

use std::path::{Path, PathBuf};

use image::RgbImage;

use super::coco::resize_plain;
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads up to `limit` covers in file-name order, resized to the canvas
/// without cropping. Unreadable files are skipped.
pub fn ingest_book_covers(dir: &Path, limit: usize, canvas: usize) -> Result<Vec<RgbImage>> {
    let mut out = Vec::new();
    for path in image_files(dir)? {
        if out.len() >= limit {
            break;
        }
        match image::open(&path) {
            Ok(img) => out.push(resize_plain(&img.to_rgb8(), canvas)),
            Err(e) => log::warn!("skipping cover {}: {e}", path.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no readable covers in {}", dir.display())));
    }
    Ok(out)
}

/// Channel-major values in `[-1, 1]`.
pub fn to_signed_chw(img: &RgbImage) -> Vec<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0f32; 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[c * w * h + y as usize * w + x as usize] = p.0[c] as f32 / 127.5 - 1.0;
        }
    }
    out
}

/// Inverse of [`to_signed_chw`], clamping out-of-range values.
pub fn from_signed_chw(data: &[f32], w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = data[c * w * h + y as usize * w + x as usize];
            ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
        };
        image::Rgb([at(0), at(1), at(2)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_round_trip() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([(x * 50) as u8, (y * 60) as u8, 255]));
        let v = to_signed_chw(&img);
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(from_signed_chw(&v, 5, 4), img);
    }
}

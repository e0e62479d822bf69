//! COCO-style instance annotations.

use std::collections::BTreeMap;
use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;
use serde::Deserialize;

use super::raster::{decode_rle, fill_polygons, polygon_area, polygon_bounds, sample_box};
use super::{SceneObject, SceneSample};
use crate::error::{Error, Result};
use crate::synthesis::{normalize_box, BoundingBox};

/// Skip rate above which ingestion fails.
pub const MAX_SKIP_RATE: f64 = 0.10;

#[derive(Debug, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CocoAnnotation {
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Segmentation,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default)]
    pub area: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { counts: RleCounts, size: [usize; 2] },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Uncompressed(Vec<u32>),
    Compressed(String),
}

#[derive(Debug, Clone, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

pub struct IngestOptions {
    pub limit: usize,
    pub min_object_area: f32,
    pub max_objects: usize,
    pub canvas: usize,
    pub mask_size: usize,
}

pub struct SceneDataset {
    /// Scene category names in annotation order.
    pub categories: Vec<String>,
    pub samples: Vec<SceneSample>,
    /// `(file, reason)` of every skipped image.
    pub skipped: Vec<(String, String)>,
}

fn object_mask(ann: &CocoAnnotation, img: &CocoImage, mask_size: usize) -> std::result::Result<(Vec<f32>, [f64; 4]), String> {
    match &ann.segmentation {
        Segmentation::Polygons(polys) => {
            if polys.iter().any(|p| p.len() < 6 || p.len() % 2 != 0) {
                return Err("polygon with fewer than three points".into());
            }
            let b = clip_box(polygon_bounds(polys).ok_or("degenerate polygon")?, img)?;
            let (bw, bh) = (b[2] - b[0], b[3] - b[1]);
            let grid = mask_size as f64;
            let mask = fill_polygons(polys, mask_size, mask_size, |x, y| {
                ((x - b[0]) / bw * grid, (y - b[1]) / bh * grid)
            });
            Ok((mask.into_iter().map(|v| if v { 1.0 } else { 0.0 }).collect(), b))
        }
        Segmentation::Rle { counts, size } => {
            let RleCounts::Uncompressed(counts) = counts else {
                return Err("compressed RLE segmentation is not supported".into());
            };
            let [h, w] = *size;
            if (w, h) != (img.width as usize, img.height as usize) {
                return Err(format!("RLE size {w}x{h} differs from the image size"));
            }
            let full = decode_rle(counts, h, w).ok_or("RLE counts do not cover the image")?;
            let [x, y, bw, bh] = ann.bbox;
            let b = clip_box([x, y, x + bw, y + bh], img)?;
            let mask = sample_box(&full, w, h, b, mask_size, mask_size);
            Ok((mask.into_iter().map(|v| if v { 1.0 } else { 0.0 }).collect(), b))
        }
    }
}

fn clip_box(b: [f64; 4], img: &CocoImage) -> std::result::Result<[f64; 4], String> {
    let (w, h) = (img.width as f64, img.height as f64);
    let c = [b[0].clamp(0.0, w), b[1].clamp(0.0, h), b[2].clamp(0.0, w), b[3].clamp(0.0, h)];
    if c[2] > c[0] && c[3] > c[1] {
        Ok(c)
    } else {
        Err("bounding box lies outside the image".into())
    }
}

fn area_fraction(ann: &CocoAnnotation, img: &CocoImage) -> f64 {
    let total = img.width as f64 * img.height as f64;
    let a = match (&ann.segmentation, ann.area) {
        (_, Some(a)) => a,
        (Segmentation::Polygons(p), None) => p.iter().map(|f| polygon_area(f)).sum(),
        (_, None) => ann.bbox[2] * ann.bbox[3],
    };
    a / total.max(1.0)
}

/// Reads annotations and images, keeping objects of at least
/// `min_object_area` of the image. Images without such objects are passed
/// over silently; unreadable images or annotations are skipped and logged.
pub fn ingest_scene_dataset(annotations: &Path, images: &Path, opts: &IngestOptions) -> Result<SceneDataset> {
    let text = std::fs::read_to_string(annotations)
        .map_err(|e| Error::Dataset(format!("{}: {e}", annotations.display())))?;
    let file: CocoFile = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", annotations.display())))?;
    let names: BTreeMap<u64, String> = file.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    let mut by_image: BTreeMap<u64, Vec<&CocoAnnotation>> = BTreeMap::new();
    for a in &file.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    let mut image_list = file.images.clone();
    image_list.sort_by_key(|i| i.id);

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut attempted = 0usize;
    for img in &image_list {
        if samples.len() >= opts.limit {
            break;
        }
        let mut eligible: Vec<(&CocoAnnotation, f64)> = by_image
            .get(&img.id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .filter(|a| a.iscrowd == 0)
            .map(|a| (*a, area_fraction(a, img)))
            .filter(|(_, f)| *f >= opts.min_object_area as f64)
            .collect();
        if eligible.is_empty() {
            continue;
        }
        attempted += 1;
        eligible.sort_by(|a, b| b.1.total_cmp(&a.1));
        eligible.truncate(opts.max_objects);
        match load_sample(img, &eligible, &names, images, opts) {
            Ok(s) => samples.push(s),
            Err(reason) => {
                log::warn!("skipping {}: {reason}", img.file_name);
                skipped.push((img.file_name.clone(), reason));
            }
        }
    }
    if attempted > 0 && skipped.len() as f64 / attempted as f64 > MAX_SKIP_RATE {
        return Err(Error::Dataset(format!(
            "{} of {attempted} images could not be read (first: {}: {})",
            skipped.len(),
            skipped[0].0,
            skipped[0].1
        )));
    }
    Ok(SceneDataset {
        categories: file.categories.iter().map(|c| c.name.clone()).collect(),
        samples,
        skipped,
    })
}

fn load_sample(
    img: &CocoImage,
    anns: &[(&CocoAnnotation, f64)],
    names: &BTreeMap<u64, String>,
    dir: &Path,
    opts: &IngestOptions,
) -> std::result::Result<SceneSample, String> {
    let mut objects = Vec::with_capacity(anns.len());
    for (a, _) in anns {
        let category = names
            .get(&a.category_id)
            .ok_or_else(|| format!("unknown category id {}", a.category_id))?;
        let (mask, b) = object_mask(a, img, opts.mask_size)?;
        let (w, h) = (img.width as f64, img.height as f64);
        let bbox = normalize_box([(b[0] / w) as f32, (b[1] / h) as f32, (b[2] / w) as f32, (b[3] / h) as f32]);
        objects.push(SceneObject {
            category: category.clone(),
            bbox,
            mask,
        });
    }
    let path = dir.join(&img.file_name);
    let raw = image::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if (raw.width(), raw.height()) != (img.width, img.height) {
        return Err(format!(
            "image is {}x{}, annotations say {}x{}",
            raw.width(),
            raw.height(),
            img.width,
            img.height
        ));
    }
    Ok(SceneSample {
        image: resize_plain(&raw.to_rgb8(), opts.canvas),
        objects,
    })
}

/// Plain (aspect-distorting) bilinear resize to a square canvas.
pub fn resize_plain(img: &RgbImage, canvas: usize) -> RgbImage {
    image::imageops::resize(img, canvas as u32, canvas as u32, FilterType::Triangle)
}

/// Tight box of a normalized object in pixels, for tests and tools.
pub fn box_pixels(b: &BoundingBox, canvas: usize) -> [f64; 4] {
    b.to_array().map(|v| v as f64 * canvas as f64)
}

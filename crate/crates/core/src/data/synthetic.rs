//! A small procedurally drawn corpus in the same on-disk layout as the real
//! data: COCO-style annotations with an image directory, plus a directory of
//! cover images. Used by the desk profiles and the tests.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::raster::{fill_polygon, polygon_area};
use crate::error::{Error, Result};
use crate::title::hsv_to_rgb;

pub const SYNTHETIC_CATEGORIES: [&str; 5] = ["sun", "tree", "house", "kite", "cloud"];
const SCENE_SIZES: [(u32, u32); 3] = [(192, 160), (160, 160), (176, 144)];
const COVER_SIZE: (u32, u32) = (150, 200);

type Polygon = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> Polygon {
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Polygons of one object with the colour of each, in image pixels.
fn draw_object(cat: usize, cx: f64, cy: f64, s: f64, rng: &mut ChaCha8Rng) -> Vec<(Polygon, [u8; 3])> {
    match SYNTHETIC_CATEGORIES[cat] {
        "sun" => vec![(ellipse(cx, cy, s * 0.5, s * 0.5, 20), [250, 210, 40])],
        "tree" => vec![
            (
                vec![(cx, cy - s * 0.6), (cx + s * 0.4, cy + s * 0.25), (cx - s * 0.4, cy + s * 0.25)],
                [30, 140, 50],
            ),
            (
                vec![
                    (cx - s * 0.08, cy + s * 0.25),
                    (cx + s * 0.08, cy + s * 0.25),
                    (cx + s * 0.08, cy + s * 0.6),
                    (cx - s * 0.08, cy + s * 0.6),
                ],
                [110, 70, 30],
            ),
        ],
        "house" => vec![(
            vec![
                (cx - s * 0.4, cy - s * 0.05),
                (cx, cy - s * 0.5),
                (cx + s * 0.4, cy - s * 0.05),
                (cx + s * 0.4, cy + s * 0.5),
                (cx - s * 0.4, cy + s * 0.5),
            ],
            [190, 60, 50],
        )],
        "kite" => vec![(
            vec![(cx, cy - s * 0.5), (cx + s * 0.3, cy), (cx, cy + s * 0.5), (cx - s * 0.3, cy)],
            hsv_to_rgb(rng.random_range(0.0..360.0), 0.8, 0.9),
        )],
        _ => vec![(ellipse(cx, cy, s * 0.55, s * 0.3, 24), [245, 245, 250])],
    }
}

fn paint(img: &mut RgbImage, poly: &Polygon, color: [u8; 3]) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    for (i, inside) in fill_polygon(poly, w, h).into_iter().enumerate() {
        if inside {
            img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(color));
        }
    }
}

fn gradient(w: u32, h: u32, top: [u8; 3], bottom: [u8; 3]) -> RgbImage {
    RgbImage::from_fn(w, h, |_, y| {
        let t = y as f32 / (h - 1).max(1) as f32;
        Rgb(std::array::from_fn(|c| (top[c] as f32 * (1.0 - t) + bottom[c] as f32 * t).round() as u8))
    })
}

/// Column-major run lengths of a row-major mask, starting with zeros.
fn encode_rle(mask: &[bool], w: usize, h: usize) -> Vec<u32> {
    let mut counts = Vec::new();
    let (mut value, mut run) = (false, 0u32);
    for col in 0..w {
        for row in 0..h {
            if mask[row * w + col] != value {
                counts.push(run);
                value = !value;
                run = 0;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

fn scene(index: usize, rng: &mut ChaCha8Rng) -> (RgbImage, Vec<Value>) {
    let (w, h) = SCENE_SIZES[index % SCENE_SIZES.len()];
    let mut img = gradient(
        w,
        h,
        hsv_to_rgb(rng.random_range(190.0..230.0), 0.5, 0.95),
        hsv_to_rgb(rng.random_range(80.0..130.0), 0.4, 0.6),
    );
    let count = rng.random_range(1..=3);
    let mut anns = Vec::new();
    for k in 0..count {
        let cat = rng.random_range(0..SYNTHETIC_CATEGORIES.len());
        let s = rng.random_range(0.3..0.5) * h as f64;
        // Spread objects across horizontal thirds so they rarely overlap.
        let slot = w as f64 / count as f64;
        let cx = (slot * (k as f64 + 0.5) + rng.random_range(-0.1..0.1) * slot).clamp(s * 0.6, w as f64 - s * 0.6);
        let cy = (rng.random_range(0.35..0.65) * h as f64).clamp(s * 0.6, h as f64 - s * 0.6);
        let parts = draw_object(cat, cx, cy, s, rng);
        let mut union = vec![false; (w * h) as usize];
        let mut flat = Vec::new();
        for (poly, color) in &parts {
            paint(&mut img, poly, *color);
            for (u, v) in union.iter_mut().zip(fill_polygon(poly, w as usize, h as usize)) {
                *u |= v;
            }
            flat.push(poly.iter().flat_map(|&(x, y)| [x, y]).collect::<Vec<f64>>());
        }
        let xs = flat.iter().flat_map(|f| f.iter().step_by(2).copied());
        let ys = flat.iter().flat_map(|f| f.iter().skip(1).step_by(2).copied());
        let (x0, x1) = xs.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
        let (y0, y1) = ys.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
        let segmentation = if SYNTHETIC_CATEGORIES[cat] == "cloud" {
            json!({ "counts": encode_rle(&union, w as usize, h as usize), "size": [h, w] })
        } else {
            json!(flat)
        };
        anns.push(json!({
            "category_id": cat + 1,
            "segmentation": segmentation,
            "bbox": [x0, y0, x1 - x0, y1 - y0],
            "area": flat.iter().map(|f| polygon_area(f)).sum::<f64>(),
            "iscrowd": 0,
        }));
    }
    (img, anns)
}

fn cover(rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = COVER_SIZE;
    let base = hsv_to_rgb(rng.random_range(0.0..360.0), rng.random_range(0.2..0.8), rng.random_range(0.3..0.95));
    let mut img = RgbImage::from_pixel(w, h, Rgb(base));
    for _ in 0..rng.random_range(1..=3) {
        let color = hsv_to_rgb(rng.random_range(0.0..360.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0));
        let (bw, bh) = if rng.random_bool(0.5) {
            (w, rng.random_range(h / 10..h / 3))
        } else {
            (rng.random_range(w / 4..w / 2), rng.random_range(h / 6..h / 3))
        };
        let (x0, y0) = (rng.random_range(0..=w - bw), rng.random_range(0..=h - bh));
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
    // A textured panel standing in for cover artwork.
    let (px, py) = (rng.random_range(0..w / 2), rng.random_range(0..h / 2));
    for y in py..(py + h / 3).min(h) {
        for x in px..(px + w / 2).min(w) {
            let v = ((x * 37 + y * 91) % 256) as u8;
            img.put_pixel(x, y, Rgb([v, 255 - v, v / 2]));
        }
    }
    img
}

/// Writes `scenes` scene images with `annotations.json` under `root/images`
/// and `covers` cover images under `root/covers`.
pub fn write_synthetic_corpus(root: &Path, scenes: usize, covers: usize, seed: u64) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(e);
    std::fs::create_dir_all(root.join("images")).map_err(io)?;
    std::fs::create_dir_all(root.join("covers")).map_err(io)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..scenes {
        let (img, anns) = scene(i, &mut rng);
        let file = format!("scene_{i:05}.png");
        img.save(root.join("images").join(&file))?;
        images.push(json!({ "id": i + 1, "file_name": file, "width": img.width(), "height": img.height() }));
        for mut a in anns {
            a["id"] = json!(annotations.len() + 1);
            a["image_id"] = json!(i + 1);
            annotations.push(a);
        }
    }
    let categories: Vec<Value> = SYNTHETIC_CATEGORIES
        .iter()
        .enumerate()
        .map(|(i, n)| json!({ "id": i + 1, "name": n }))
        .collect();
    let doc = json!({ "images": images, "annotations": annotations, "categories": categories });
    std::fs::write(root.join("annotations.json"), serde_json::to_vec(&doc)?).map_err(io)?;
    for i in 0..covers {
        cover(&mut rng).save(root.join("covers").join(format!("cover_{i:05}.png")))?;
    }
    Ok(())
}

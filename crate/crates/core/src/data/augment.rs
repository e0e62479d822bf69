//! Solid regions and the placeholder title added to scene samples, and the
//! relations derived from box geometry.

use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SceneObject, SceneSample};
use crate::graph::{
    AppearanceControl, LayoutGraph, LayoutObject, LocationVector, Predicate, Relation, PLACEHOLDER_TITLE,
    SOLID_CATEGORY, TITLE_CATEGORY,
};
use crate::synthesis::compose::crop_resize_interleaved;
use crate::synthesis::{BoundingBox, PixelRect};
use crate::title::{fonts, hsv_to_rgb, render_placeholder};

/// Side of the windows searched for simple-coloured cover regions.
pub const SOLID_WINDOW: u32 = 16;
/// Containment ratio above which two boxes relate by inside/surrounding.
pub const CONTAINMENT: f32 = 0.9;
/// Lowest HSV value of a title colour.
pub const MIN_TITLE_VALUE: f32 = 0.3;
/// Probability that one object of a sample loses all its relations, so the
/// isolated-node path of the encoder sees training signal.
pub const ISOLATE_PROBABILITY: f64 = 0.5;

/// Low-variance patches cut from real covers.
pub struct SolidBank {
    pub patches: Vec<RgbImage>,
}

/// Largest per-channel standard deviation of a patch, in `[0, 1]` units.
pub fn patch_std(img: &RgbImage) -> f32 {
    let n = (img.width() * img.height()) as f32;
    (0..3)
        .map(|c| {
            let vals: Vec<f32> = img.pixels().map(|p| p.0[c] as f32 / 255.0).collect();
            let m = vals.iter().sum::<f32>() / n;
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f32>() / n).sqrt()
        })
        .fold(0.0, f32::max)
}

impl SolidBank {
    /// Windows whose spread is below `threshold`; if a corpus has none,
    /// its lowest-spread windows are used instead.
    pub fn from_covers(covers: &[RgbImage], threshold: f32) -> Self {
        let mut scored = Vec::new();
        for cover in covers {
            let (w, h) = cover.dimensions();
            let step = SOLID_WINDOW / 2;
            let mut y = 0;
            while y + SOLID_WINDOW <= h {
                let mut x = 0;
                while x + SOLID_WINDOW <= w {
                    let patch = image::imageops::crop_imm(cover, x, y, SOLID_WINDOW, SOLID_WINDOW).to_image();
                    scored.push((patch_std(&patch), patch));
                    x += step;
                }
                y += step;
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let below = scored.iter().take_while(|(s, _)| *s < threshold).count();
        if below == 0 && !scored.is_empty() {
            log::warn!("no cover window below the solid threshold {threshold}; using the flattest ones");
        }
        let keep = if below > 0 { below } else { scored.len().min(10) };
        Self {
            patches: scored.into_iter().take(keep).map(|(_, p)| p).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Relation of box `a` to box `b`.
pub fn derive_relation(a: &BoundingBox, b: &BoundingBox) -> Predicate {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = ix * iy;
    if inter >= CONTAINMENT * b.area() && a.area() >= b.area() {
        return Predicate::Surrounding;
    }
    if inter >= CONTAINMENT * a.area() {
        return Predicate::Inside;
    }
    let dx = (a.x0 + a.x1) * 0.5 - (b.x0 + b.x1) * 0.5;
    let dy = (a.y0 + a.y1) * 0.5 - (b.y0 + b.y1) * 0.5;
    if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            Predicate::LeftOf
        } else {
            Predicate::RightOf
        }
    } else if dy < 0.0 {
        Predicate::Above
    } else {
        Predicate::Below
    }
}

/// One relation per unordered pair, subject before object in list order.
pub fn derive_relations(ids: &[String], boxes: &[BoundingBox]) -> Vec<Relation> {
    let mut out = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            out.push(Relation {
                subject: ids[i].clone(),
                predicate: derive_relation(&boxes[i], &boxes[j]),
                object: ids[j].clone(),
            });
        }
    }
    out
}

pub struct AugmentedSample {
    pub image: RgbImage,
    /// Scene objects, then solid regions, then the title.
    pub objects: Vec<SceneObject>,
    pub graph: LayoutGraph,
    pub title_font: usize,
    pub title_color: [u8; 3],
}

impl AugmentedSample {
    pub fn categories(&self) -> Vec<&str> {
        self.objects.iter().map(|o| o.category.as_str()).collect()
    }
}

fn random_rect(rng: &mut ChaCha8Rng, canvas: usize, w: (f32, f32), h: (f32, f32)) -> PixelRect {
    let c = canvas as f32;
    let pw = ((rng.random_range(w.0..=w.1) * c).round() as usize).clamp(2, canvas);
    let ph = ((rng.random_range(h.0..=h.1) * c).round() as usize).clamp(2, canvas);
    let x0 = rng.random_range(0..=canvas - pw);
    let y0 = rng.random_range(0..=canvas - ph);
    PixelRect {
        x0,
        y0,
        x1: x0 + pw,
        y1: y0 + ph,
    }
}

fn rect_box(r: PixelRect, canvas: usize) -> BoundingBox {
    let c = canvas as f32;
    BoundingBox {
        x0: r.x0 as f32 / c,
        y0: r.y0 as f32 / c,
        x1: r.x1 as f32 / c,
        y1: r.y1 as f32 / c,
    }
}

/// Adds 0..=`max_solids` solid regions and one placeholder title.
pub fn augment_with_solid_and_title(
    scene: &SceneSample,
    solids: &SolidBank,
    max_solids: usize,
    mask_size: usize,
    rng: &mut ChaCha8Rng,
) -> AugmentedSample {
    let canvas = scene.image.width() as usize;
    let mut image = scene.image.clone();
    let mut objects = scene.objects.clone();

    let n_solids = if solids.is_empty() { 0 } else { rng.random_range(0..=max_solids) };
    for _ in 0..n_solids {
        let rect = if rng.random_bool(0.5) {
            random_rect(rng, canvas, (1.0, 1.0), (0.1, 0.3))
        } else {
            random_rect(rng, canvas, (0.2, 0.5), (0.2, 0.5))
        };
        let patch = &solids.patches[rng.random_range(0..solids.patches.len())];
        let scaled = image::imageops::resize(patch, rect.width() as u32, rect.height() as u32, FilterType::Triangle);
        image::imageops::replace(&mut image, &scaled, rect.x0 as i64, rect.y0 as i64);
        objects.push(SceneObject {
            category: SOLID_CATEGORY.into(),
            bbox: rect_box(rect, canvas),
            mask: vec![1.0; mask_size * mask_size],
        });
    }

    let rect = random_rect(rng, canvas, (0.4, 0.9), (0.08, 0.18));
    let font = rng.random_range(0..fonts().len());
    let color = hsv_to_rgb(
        rng.random_range(0.0..360.0),
        rng.random_range(0.0..=1.0),
        rng.random_range(MIN_TITLE_VALUE..=1.0),
    );
    let text = render_placeholder(&mut image, PLACEHOLDER_TITLE, font, color, rect);
    let grid = crop_resize_interleaved(
        &text.alpha,
        text.width,
        1,
        PixelRect {
            x0: 0,
            y0: 0,
            x1: text.width,
            y1: text.height,
        },
        mask_size,
        mask_size,
    );
    objects.push(SceneObject {
        category: TITLE_CATEGORY.into(),
        bbox: rect_box(rect, canvas),
        mask: grid.into_iter().map(|a| if a >= 0.5 { 1.0 } else { 0.0 }).collect(),
    });

    let ids: Vec<String> = (0..objects.len()).map(|i| format!("o{i}")).collect();
    let boxes: Vec<BoundingBox> = objects.iter().map(|o| o.bbox).collect();
    let mut relations = derive_relations(&ids, &boxes);
    if rng.random_bool(ISOLATE_PROBABILITY) {
        let lone = &ids[rng.random_range(0..ids.len())];
        relations.retain(|r| &r.subject != lone && &r.object != lone);
    }
    let graph = LayoutGraph {
        objects: objects
            .iter()
            .zip(&ids)
            .map(|(o, id)| LayoutObject {
                id: id.clone(),
                category: o.category.clone(),
                location: LocationVector::from_box(o.bbox.x0, o.bbox.y0, o.bbox.x1, o.bbox.y1),
                appearance: AppearanceControl::Random,
                title_text: (o.category == TITLE_CATEGORY).then(|| PLACEHOLDER_TITLE.to_string()),
            })
            .collect(),
        relations,
    };
    AugmentedSample {
        image,
        objects,
        graph,
        title_font: font,
        title_color: color,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f32, y0: f32, x1: f32, y1: f32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn containment_and_axis_relations() {
        let big = bx(0.0, 0.0, 1.0, 1.0);
        let small = bx(0.4, 0.4, 0.6, 0.6);
        assert_eq!(derive_relation(&big, &small), Predicate::Surrounding);
        assert_eq!(derive_relation(&small, &big), Predicate::Inside);
        let left = bx(0.0, 0.4, 0.3, 0.6);
        let right = bx(0.6, 0.45, 0.9, 0.65);
        assert_eq!(derive_relation(&left, &right), Predicate::LeftOf);
        assert_eq!(derive_relation(&right, &left), Predicate::RightOf);
        let top = bx(0.4, 0.0, 0.6, 0.2);
        assert_eq!(derive_relation(&top, &small), Predicate::Above);
        assert_eq!(derive_relation(&small, &top), Predicate::Below);
    }

    #[test]
    fn solid_bank_prefers_flat_windows() {
        let mut cover = RgbImage::from_pixel(32, 32, image::Rgb([200, 10, 10]));
        for x in 0..16 {
            for y in 0..32 {
                let v = if (x + y) % 2 == 0 { 0 } else { 255 };
                cover.put_pixel(x, y, image::Rgb([v, v, v]));
            }
        }
        let bank = SolidBank::from_covers(&[cover], 0.08);
        assert!(!bank.is_empty());
        assert!(bank.patches.iter().all(|p| patch_std(p) < 0.08));
    }
}

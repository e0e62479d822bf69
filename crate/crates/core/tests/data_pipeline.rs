use candle_core::DType;
use graphcover_core::config::Config;
use graphcover_core::data::augment::{patch_std, SolidBank};
use graphcover_core::data::coco::{ingest_scene_dataset, IngestOptions};
use graphcover_core::data::raster::fill_polygons;
use graphcover_core::data::synthetic::write_synthetic_corpus;
use graphcover_core::data::{derive_relation, ingest_book_covers, to_signed_chw, MismatchSource, TrainingSet};
use graphcover_core::graph::{validate_graph, Predicate, TITLE_CATEGORY};
use graphcover_core::synthesis::BoundingBox;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn corpus(scenes: usize, covers: usize) -> (tempfile::TempDir, Config) {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_corpus(dir.path(), scenes, covers, 11).unwrap();
    let mut cfg = Config::overfit10();
    cfg.data.scene_annotations = dir.path().join("annotations.json");
    cfg.data.scene_images = dir.path().join("images");
    cfg.data.covers = dir.path().join("covers");
    cfg.data.scene_limit = scenes;
    cfg.data.cover_limit = covers;
    (dir, cfg)
}

fn options(cfg: &Config, limit: usize) -> IngestOptions {
    IngestOptions {
        limit,
        min_object_area: cfg.data.min_object_area,
        max_objects: cfg.data.max_objects,
        canvas: cfg.model.canvas,
        mask_size: cfg.model.mask_size,
    }
}

#[test]
fn limit_yields_exact_count_with_complete_objects() {
    let (_dir, cfg) = corpus(14, 3);
    let ds = ingest_scene_dataset(&cfg.data.scene_annotations, &cfg.data.scene_images, &options(&cfg, 10)).unwrap();
    assert_eq!(ds.samples.len(), 10);
    for s in &ds.samples {
        assert_eq!(s.image.dimensions(), (128, 128));
        assert!(!s.objects.is_empty());
        for o in &s.objects {
            assert_eq!(o.mask.len(), 32 * 32);
            let b = o.bbox.to_array();
            assert!(b.iter().all(|v| (0.0..=1.0).contains(v)) && b[0] < b[2] && b[1] < b[3]);
        }
    }
}

#[test]
fn masks_are_binary_and_fill_their_box() {
    let (_dir, cfg) = corpus(12, 3);
    let ds = ingest_scene_dataset(&cfg.data.scene_annotations, &cfg.data.scene_images, &options(&cfg, 12)).unwrap();
    for o in ds.samples.iter().flat_map(|s| &s.objects) {
        assert!(o.mask.iter().all(|&v| v == 0.0 || v == 1.0));
        let on: Vec<(usize, usize)> =
            (0..32 * 32).filter(|&i| o.mask[i] == 1.0).map(|i| (i % 32, i / 32)).collect();
        let min_x = on.iter().map(|p| p.0).min().unwrap();
        let max_x = on.iter().map(|p| p.0).max().unwrap();
        let min_y = on.iter().map(|p| p.1).min().unwrap();
        let max_y = on.iter().map(|p| p.1).max().unwrap();
        assert!(min_x <= 1 && min_y <= 1 && max_x >= 30 && max_y >= 30, "{}: {min_x}..{max_x} {min_y}..{max_y}", o.category);
    }
}

#[test]
fn resized_mask_matches_resized_polygon() {
    let (_dir, cfg) = corpus(12, 3);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg.data.scene_annotations).unwrap()).unwrap();
    let ds = ingest_scene_dataset(&cfg.data.scene_annotations, &cfg.data.scene_images, &options(&cfg, 1)).unwrap();
    let img = &doc["images"][0];
    let (w, h) = (img["width"].as_f64().unwrap(), img["height"].as_f64().unwrap());
    let canvas = 128usize;
    let mut checked = 0;
    for o in &ds.samples[0].objects {
        let ann = doc["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .find(|a| a["image_id"] == 1 && a["segmentation"].is_array() && {
                let b: Vec<f64> = a["bbox"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
                ((b[0] / w) as f32 - o.bbox.x0).abs() < 1e-4 && ((b[1] / h) as f32 - o.bbox.y0).abs() < 1e-4
            });
        let Some(ann) = ann else { continue };
        let polys: Vec<Vec<f64>> = serde_json::from_value(ann["segmentation"].clone()).unwrap();
        let oracle = fill_polygons(&polys, canvas, canvas, |x, y| (x / w * canvas as f64, y / h * canvas as f64));
        let (bx0, by0) = (o.bbox.x0 as f64 * canvas as f64, o.bbox.y0 as f64 * canvas as f64);
        let (bw, bh) = (o.bbox.width() as f64 * canvas as f64, o.bbox.height() as f64 * canvas as f64);
        let (mut inter, mut union) = (0, 0);
        for y in 0..canvas {
            for x in 0..canvas {
                let gx = ((x as f64 + 0.5 - bx0) / bw * 32.0).floor();
                let gy = ((y as f64 + 0.5 - by0) / bh * 32.0).floor();
                let placed = (0.0..32.0).contains(&gx) && (0.0..32.0).contains(&gy) && o.mask[gy as usize * 32 + gx as usize] == 1.0;
                let truth = oracle[y * canvas + x];
                inter += (placed && truth) as usize;
                union += (placed || truth) as usize;
            }
        }
        let iou = inter as f64 / union as f64;
        assert!(iou > 0.9, "{} IoU {iou}", o.category);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn covers_are_plain_resized_and_in_range() {
    let (dir, cfg) = corpus(2, 7);
    let covers = ingest_book_covers(&cfg.data.covers, 5, 128).unwrap();
    assert_eq!(covers.len(), 5);
    for c in &covers {
        assert!(to_signed_chw(c).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert_eq!(covers, ingest_book_covers(&cfg.data.covers, 5, 128).unwrap());

    // Quadrant oracle: without cropping, each quadrant of a 150x200 cover
    // lands on the matching quadrant of the square canvas.
    let quad = dir.path().join("quad");
    std::fs::create_dir_all(&quad).unwrap();
    let colors = [[200, 0, 0], [0, 200, 0], [0, 0, 200], [200, 200, 0]];
    let img = RgbImage::from_fn(150, 200, |x, y| Rgb(colors[(x >= 75) as usize + 2 * (y >= 100) as usize]));
    img.save(quad.join("q.png")).unwrap();
    let out = &ingest_book_covers(&quad, 1, 128).unwrap()[0];
    for y in 0..128u32 {
        for x in 0..128u32 {
            if (62..66).contains(&x) || (62..66).contains(&y) {
                continue;
            }
            assert_eq!(out.get_pixel(x, y).0, colors[(x >= 64) as usize + 2 * (y >= 64) as usize], "({x},{y})");
        }
    }
}

#[test]
fn augmented_samples_are_valid_and_have_one_title() {
    let (_dir, cfg) = corpus(24, 6);
    let set = TrainingSet::load(&cfg).unwrap();
    for s in &set.samples {
        assert_eq!(s.objects.iter().filter(|o| o.category == TITLE_CATEGORY).count(), 1);
        assert!(validate_graph(&s.graph, &set.vocab).into_result().is_ok());
        let text = graphcover_core::graph::serialize_graph(&s.graph);
        let back = graphcover_core::graph::parse_graph(&text).unwrap();
        assert_eq!(back, s.graph);
        let title = s.objects.last().unwrap();
        assert!(title.bbox.x0 >= 0.0 && title.bbox.x1 <= 1.0 && title.bbox.y0 >= 0.0 && title.bbox.y1 <= 1.0);
    }
}

#[test]
fn solid_patches_are_simple_coloured() {
    let (_dir, cfg) = corpus(2, 10);
    let covers = ingest_book_covers(&cfg.data.covers, 10, 128).unwrap();
    let bank = SolidBank::from_covers(&covers, cfg.data.solid_std_threshold);
    let flat = bank.patches.iter().filter(|p| patch_std(p) < cfg.data.solid_std_threshold).count();
    assert!(flat as f64 >= 0.9 * bank.patches.len() as f64);
}

#[test]
fn batch_stream_is_deterministic() {
    let (_dir, cfg) = corpus(12, 4);
    let a = TrainingSet::load(&cfg).unwrap();
    let b = TrainingSet::load(&cfg).unwrap();
    for step in 0..3 {
        let (x, y) = (a.batch(step, 4, DType::F32).unwrap(), b.batch(step, 4, DType::F32).unwrap());
        assert_eq!(x.indices, y.indices);
        for (p, q) in [
            (&x.real_images, &y.real_images),
            (&x.real_crops, &y.real_crops),
            (&x.mismatch_masks, &y.mismatch_masks),
            (&x.covers, &y.covers),
        ] {
            let (p, q) = (p.flatten_all().unwrap().to_vec1::<f32>().unwrap(), q.flatten_all().unwrap().to_vec1::<f32>().unwrap());
            assert!(p.iter().zip(&q).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn mismatched_layouts_keep_categories_and_differ() {
    let (_dir, cfg) = corpus(16, 4);
    let set = TrainingSet::load(&cfg).unwrap();
    let batch = set.batch(0, 6, DType::F32).unwrap();
    let n = batch.gt_boxes.len();
    assert_eq!(batch.mismatch_boxes.len(), n);
    let real = batch.real_crops.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let fake = batch.mismatch_crops.flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let per = real.len() / n;
    for (g, &i) in batch.indices.iter().enumerate() {
        let objs = batch.graph_batch.objects_of(g);
        let differs = objs.iter().any(|&o| {
            batch.gt_boxes[o] != batch.mismatch_boxes[o] || real[o * per..(o + 1) * per] != fake[o * per..(o + 1) * per]
        });
        assert!(differs, "sample {i} via {:?}", batch.mismatch_sources[g]);
        if batch.mismatch_sources[g] == MismatchSource::Partner {
            assert_ne!(set.partners[i], Some(i));
        }
    }
}

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0.0f32..0.8, 0.0f32..0.8, 0.05f32..0.2, 0.05f32..0.2)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn relations_follow_geometry(a in arb_box(), b in arb_box()) {
        let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
        let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
        let overlap = ix * iy / a.area().min(b.area());
        let dx = (a.x0 + a.x1) / 2.0 - (b.x0 + b.x1) / 2.0;
        let dy = (a.y0 + a.y1) / 2.0 - (b.y0 + b.y1) / 2.0;
        prop_assume!(overlap < 0.1);
        let expected = if dx.abs() >= dy.abs() {
            if dx < 0.0 { Predicate::LeftOf } else { Predicate::RightOf }
        } else if dy < 0.0 { Predicate::Above } else { Predicate::Below };
        prop_assert_eq!(derive_relation(&a, &b), expected);
    }
}

//! Inference pipeline: graph to cover image with the title restyled, plus
//! the request and response documents of the HTTP service.

use std::collections::BTreeMap;
use std::time::Instant;

use base64::Engine;
use candle_core::DType;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::from_signed_chw;
use crate::error::{Error, Result};
use crate::graph::{
    parse_graph_value, validate_graph, AppearanceControl, LayoutGraph, Violation, ViolationKind, SOLID_CATEGORY,
    TITLE_CATEGORY,
};
use crate::model::{Model, RenderOptions};
use crate::synthesis::{pixel_rect, BoundingBox};
use crate::title::{paste_title, transfer_title_style, TitleBackend, TitleRegion};

pub const MAX_VARIATIONS: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Png,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    /// Layout-graph document.
    pub graph: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    /// Noise seeds by object id.
    #[serde(default)]
    pub noise_seeds: BTreeMap<String, u64>,
    /// Replaces the title text of the graph.
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default = "one")]
    pub variations: usize,
    #[serde(default)]
    pub format: ImageFormat,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub id: String,
    pub category: String,
    /// `[x0, y0, x1, y1]` in `[0, 1]`.
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub variation: u64,
    pub format: ImageFormat,
    /// Base64 of the encoded image.
    pub data: String,
    pub sha256: String,
    pub boxes: Vec<ObjectBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub per_image_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub images: Vec<GeneratedImage>,
    pub timing: Timing,
}

/// A request with its graph parsed and checked.
pub struct CheckedRequest {
    pub graph: LayoutGraph,
    pub seed: u64,
    pub noise_seeds: BTreeMap<String, u64>,
    pub title: Option<String>,
    pub variations: usize,
    pub format: ImageFormat,
}

/// Parses a request body. Errors carry JSON-pointer paths into the body.
pub fn parse_request(body: &[u8]) -> Result<CheckedRequest> {
    let mut de = serde_json::Deserializer::from_slice(body);
    let req: GenerationRequest = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path: String = e
            .path()
            .iter()
            .map(|s| match s {
                serde_path_to_error::Segment::Seq { index } => format!("/{index}"),
                serde_path_to_error::Segment::Map { key } => format!("/{key}"),
                serde_path_to_error::Segment::Enum { variant } => format!("/{variant}"),
                serde_path_to_error::Segment::Unknown => "/?".into(),
            })
            .collect();
        Error::Document {
            path,
            message: e.inner().to_string(),
        }
    })?;
    check_request(req)
}

pub fn check_request(req: GenerationRequest) -> Result<CheckedRequest> {
    if !(1..=MAX_VARIATIONS).contains(&req.variations) {
        return Err(Error::Document {
            path: "/variations".into(),
            message: format!("{} is outside 1..={MAX_VARIATIONS}", req.variations),
        });
    }
    let graph = parse_graph_value(req.graph, "/graph")?;
    let ids = graph.object_index();
    if let Some(id) = req.noise_seeds.keys().find(|k| !ids.contains_key(k.as_str())) {
        return Err(Error::Document {
            path: format!("/noise_seeds/{id}"),
            message: format!("no object with id \"{id}\""),
        });
    }
    if let Some(t) = &req.title {
        if t.trim().is_empty() {
            return Err(Error::Document {
                path: "/title".into(),
                message: "title text must not be empty".into(),
            });
        }
        if graph.title().is_none() {
            return Err(Error::Document {
                path: "/title".into(),
                message: "the graph has no title object".into(),
            });
        }
    }
    Ok(CheckedRequest {
        graph,
        seed: req.seed,
        noise_seeds: req.noise_seeds,
        title: req.title,
        variations: req.variations,
        format: req.format,
    })
}

pub struct GeneratedCover {
    pub image: RgbImage,
    pub boxes: Vec<BoundingBox>,
}

/// A loaded model with its title backend. Generation only reads the
/// weights, so one pipeline can serve concurrent requests.
pub struct CoverPipeline {
    pub model: Model,
    pub title_backend: TitleBackend,
}

impl CoverPipeline {
    pub fn new(model: Model, title_backend: TitleBackend) -> Self {
        Self { model, title_backend }
    }

    /// Renders the graph, then replaces the placeholder title with `title`
    /// (or the graph's own title text).
    pub fn generate(&self, graph: &LayoutGraph, opts: &RenderOptions, title: Option<&str>) -> Result<GeneratedCover> {
        let r = self.model.render_with(graph, opts)?;
        let canvas = self.model.config.canvas;
        let data = r.image.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let mut image = from_signed_chw(&data, canvas, canvas);
        if let Some(ti) = graph.objects.iter().position(|o| o.category == TITLE_CATEGORY) {
            let text = title.or(graph.objects[ti].title_text.as_deref()).unwrap_or_default();
            let tbox = r.boxes[ti];
            for (o, b) in graph.objects.iter().zip(&r.boxes) {
                if o.category == SOLID_CATEGORY && b.intersects(&tbox) {
                    log::warn!("title box overlaps solid region \"{}\"; text may cover it", o.id);
                }
            }
            match pixel_rect(&tbox, canvas) {
                Some(rect) => {
                    let region = TitleRegion::new(&image, rect, text)?;
                    let styled = transfer_title_style(&region, &self.title_backend);
                    paste_title(&mut image, &styled.styled, rect.x0 as i64, rect.y0 as i64);
                }
                None => log::warn!("title box {tbox:?} is below one pixel; title left as generated"),
            }
        }
        Ok(GeneratedCover { image, boxes: r.boxes })
    }

    /// Checks the graph against the model's vocabulary and appearance size.
    /// Paths are relative to the request body.
    pub fn validate(&self, graph: &LayoutGraph) -> Result<()> {
        let mut report = validate_graph(graph, &self.model.vocab);
        let dim = self.model.config.appearance_dim;
        for (i, o) in graph.objects.iter().enumerate() {
            if let AppearanceControl::Explicit(v) = &o.appearance {
                if v.len() != dim {
                    report.violations.push(Violation {
                        path: format!("/objects/{i}/appearance/vector"),
                        message: format!("appearance vector has {} entries, expected {dim}", v.len()),
                        kind: ViolationKind::AppearanceSize,
                    });
                }
            }
        }
        for v in &mut report.violations {
            v.path.insert_str(0, "/graph");
        }
        report.into_result()
    }

    /// Renders variation `v` of a request and encodes it.
    pub fn render_variation(&self, req: &CheckedRequest, v: u64) -> Result<(Vec<u8>, Vec<ObjectBox>)> {
        let opts = RenderOptions {
            seed: req.seed,
            variation: v,
            noise_seeds: Some(&req.noise_seeds),
            boxes: None,
        };
        let cover = self.generate(&req.graph, &opts, req.title.as_deref())?;
        let boxes = req
            .graph
            .objects
            .iter()
            .zip(&cover.boxes)
            .map(|(o, b)| ObjectBox {
                id: o.id.clone(),
                category: o.category.clone(),
                bbox: b.to_array(),
            })
            .collect();
        Ok((encode_png(&cover.image)?, boxes))
    }

    pub fn handle(&self, req: &CheckedRequest) -> Result<GenerationResponse> {
        let start = Instant::now();
        let mut images = Vec::with_capacity(req.variations);
        let mut per_image_ms = Vec::with_capacity(req.variations);
        for v in 0..req.variations as u64 {
            let t = Instant::now();
            let (bytes, boxes) = self.render_variation(req, v)?;
            images.push(GeneratedImage {
                variation: v,
                format: req.format,
                sha256: crate::nn::hex(&Sha256::digest(&bytes)),
                data: base64::engine::general_purpose::STANDARD.encode(&bytes),
                boxes,
            });
            per_image_ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
        Ok(GenerationResponse {
            images,
            timing: Timing {
                total_ms: start.elapsed().as_secs_f64() * 1e3,
                per_image_ms,
            },
        })
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

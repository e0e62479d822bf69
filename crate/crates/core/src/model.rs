//! The generator networks, the discriminators and inference from a graph.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::cover::CoverGenerator;
use crate::disc::{BookDiscriminator, LayoutDiscriminator, MaskDiscriminator, ObjectDiscriminator};
use crate::encoder::{GraphBatch, GraphEncoder};
use crate::error::{Error, Result};
use crate::graph::{AppearanceControl, CategoryVocabulary, LayoutGraph};
use crate::nn::{mix_seed, ParamStore};
use crate::synthesis::{compose_batch, AppearanceEncoder, BoundingBox, BoxHead, MaskGenerator};

const DISC_SEED_SALT: u64 = 0x0d15_c0de;
const NOISE_SALT: u64 = 0x6e01_5e;
const APPEARANCE_SALT: u64 = 0xa99e_a7;

pub struct Generator {
    pub encoder: GraphEncoder,
    pub boxes: BoxHead,
    pub masks: MaskGenerator,
    pub appearance: AppearanceEncoder,
    pub cover: CoverGenerator,
}

pub struct Discriminators {
    pub mask: MaskDiscriminator,
    pub layout: LayoutDiscriminator,
    pub book: BookDiscriminator,
    pub object: ObjectDiscriminator,
}

/// Everything the generator produces for a batch of graphs.
pub struct Synthesis {
    pub embeddings: Tensor,
    /// `(objects, 4)`, differentiable.
    pub box_tensor: Tensor,
    /// Boxes the masks were placed into.
    pub boxes: Vec<BoundingBox>,
    pub masks: Tensor,
    pub layout: Tensor,
    pub image: Tensor,
}

impl Generator {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        Ok(Self {
            encoder: GraphEncoder::new(ps, cfg, vocab_size)?,
            boxes: BoxHead::new(ps, cfg)?,
            masks: MaskGenerator::new(ps, cfg)?,
            appearance: AppearanceEncoder::new(ps, cfg)?,
            cover: CoverGenerator::new(ps, cfg)?,
        })
    }

    /// Runs graph encoding, box and mask prediction, composition and the
    /// cover generator. `place_boxes` overrides the predicted boxes for
    /// composition.
    pub fn synthesize(
        &self,
        batch: &GraphBatch,
        noise: &Tensor,
        appearance: &Tensor,
        place_boxes: Option<&[BoundingBox]>,
        canvas: usize,
    ) -> Result<Synthesis> {
        let embeddings = self.encoder.encode(batch)?;
        let box_tensor = self.boxes.forward(&embeddings)?;
        let masks = self.masks.forward(&embeddings, noise)?;
        let boxes = match place_boxes {
            Some(b) => b.to_vec(),
            None => crate::synthesis::boxes_from_tensor(&box_tensor)?,
        };
        let layout = compose_batch(&boxes, &masks, appearance, &batch.graph_index, batch.num_graphs, canvas)?;
        let image = self.cover.forward(&layout)?;
        Ok(Synthesis {
            embeddings,
            box_tensor,
            boxes,
            masks,
            layout,
            image,
        })
    }
}

impl Discriminators {
    pub fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            mask: MaskDiscriminator::new(ps, cfg)?,
            layout: LayoutDiscriminator::new(ps, cfg)?,
            book: BookDiscriminator::new(ps, cfg)?,
            object: ObjectDiscriminator::new(ps, cfg)?,
        })
    }
}

/// Per-category statistics of encoded appearance vectors, used to draw
/// appearance for seeded objects at inference time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppearanceBank {
    pub dim: usize,
    pub categories: BTreeMap<String, AppearanceStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub count: usize,
}

/// Lower bound on the spread used when sampling, so that categories seen
/// once still vary with the seed.
pub const APPEARANCE_STD_FLOOR: f32 = 0.05;

impl AppearanceBank {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            categories: BTreeMap::new(),
        }
    }

    /// Builds statistics from `(category, vector)` pairs.
    pub fn from_samples<'a>(dim: usize, samples: impl IntoIterator<Item = (&'a str, &'a [f32])>) -> Self {
        let mut acc: BTreeMap<String, Vec<&[f32]>> = BTreeMap::new();
        for (c, v) in samples {
            acc.entry(c.to_string()).or_default().push(v);
        }
        let categories = acc
            .into_iter()
            .map(|(c, vs)| {
                let n = vs.len() as f32;
                let mean: Vec<f32> = (0..dim).map(|k| vs.iter().map(|v| v[k]).sum::<f32>() / n).collect();
                let std = (0..dim)
                    .map(|k| (vs.iter().map(|v| (v[k] - mean[k]).powi(2)).sum::<f32>() / n).sqrt())
                    .collect();
                (c, AppearanceStats { mean, std, count: vs.len() })
            })
            .collect();
        Self { dim, categories }
    }

    fn pooled(&self) -> AppearanceStats {
        let n = self.categories.len().max(1) as f32;
        let avg = |f: fn(&AppearanceStats) -> &Vec<f32>| -> Vec<f32> {
            (0..self.dim)
                .map(|k| self.categories.values().map(|s| f(s)[k]).sum::<f32>() / n)
                .collect()
        };
        if self.categories.is_empty() {
            return AppearanceStats {
                mean: vec![0.0; self.dim],
                std: vec![1.0; self.dim],
                count: 0,
            };
        }
        AppearanceStats {
            mean: avg(|s| &s.mean),
            std: avg(|s| &s.std),
            count: 0,
        }
    }

    /// Deterministic draw for `category` from `seed`; nonnegative like the
    /// encoder's output.
    pub fn sample(&self, category: &str, seed: u64) -> Vec<f32> {
        let pooled;
        let stats = match self.categories.get(category) {
            Some(s) => s,
            None => {
                pooled = self.pooled();
                &pooled
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim)
            .map(|k| {
                let z: f32 = StandardNormal.sample(&mut rng);
                (stats.mean[k] + z * stats.std[k].max(APPEARANCE_STD_FLOOR)).max(0.0)
            })
            .collect()
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub vocab: CategoryVocabulary,
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
    pub generator: Generator,
    pub discriminators: Discriminators,
    pub bank: AppearanceBank,
}

/// A rendered cover before title restyling.
pub struct Rendered {
    /// `(3, canvas, canvas)` in `[-1, 1]`.
    pub image: Tensor,
    pub boxes: Vec<BoundingBox>,
    pub masks: Tensor,
    pub appearance: Vec<Vec<f32>>,
}

impl Model {
    pub fn new(cfg: &ModelConfig, vocab: CategoryVocabulary, seed: u64, dtype: DType) -> Result<Self> {
        if vocab.len() > cfg.object_disc_classes {
            return Err(Error::Config(format!(
                "vocabulary has {} categories, the object discriminator supports {}",
                vocab.len(),
                cfg.object_disc_classes
            )));
        }
        let mut gen_params = ParamStore::new(seed, dtype);
        let generator = Generator::new(&mut gen_params, cfg, vocab.len())?;
        let mut disc_params = ParamStore::new(mix_seed(seed, DISC_SEED_SALT), dtype);
        let discriminators = Discriminators::new(&mut disc_params, cfg)?;
        Ok(Self {
            config: cfg.clone(),
            vocab,
            gen_params,
            disc_params,
            generator,
            discriminators,
            bank: AppearanceBank::new(cfg.appearance_dim),
        })
    }

    pub fn dtype(&self) -> DType {
        self.gen_params.dtype()
    }

    /// Appearance vector of each object of `graph`.
    pub fn resolve_appearance(&self, graph: &LayoutGraph, seed: u64) -> Result<Vec<Vec<f32>>> {
        graph
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| match &o.appearance {
                AppearanceControl::Explicit(v) => {
                    if v.len() != self.config.appearance_dim {
                        return Err(Error::InvalidRequest(format!(
                            "object \"{}\": appearance vector has {} entries, expected {}",
                            o.id,
                            v.len(),
                            self.config.appearance_dim
                        )));
                    }
                    Ok(v.clone())
                }
                AppearanceControl::Seed(s) => Ok(self.bank.sample(&o.category, mix_seed(*s, APPEARANCE_SALT))),
                AppearanceControl::Random => Ok(self
                    .bank
                    .sample(&o.category, mix_seed(mix_seed(seed, APPEARANCE_SALT), i as u64))),
            })
            .collect()
    }

    /// Renders one graph. Identical `(graph, seed)` give identical images.
    pub fn render(&self, graph: &LayoutGraph, seed: u64) -> Result<Rendered> {
        self.render_with(graph, &RenderOptions { seed, ..Default::default() })
    }

    /// Like [`Model::render`] with the masks placed into the given boxes.
    pub fn render_with_boxes(&self, graph: &LayoutGraph, seed: u64, boxes: Option<&[BoundingBox]>) -> Result<Rendered> {
        self.render_with(graph, &RenderOptions { seed, boxes, ..Default::default() })
    }

    pub fn render_with(&self, graph: &LayoutGraph, opts: &RenderOptions) -> Result<Rendered> {
        let batch = GraphBatch::from_graphs(&[graph], &self.vocab)?;
        let n = batch.num_objects();
        let vary = |s: u64| if opts.variation == 0 { s } else { mix_seed(s, opts.variation) };
        let appearance = self.resolve_appearance(graph, vary(opts.seed))?;
        let flat: Vec<f32> = appearance.iter().flatten().copied().collect();
        let dtype = self.dtype();
        let a = Tensor::from_vec(flat, (n, self.config.appearance_dim), &Device::Cpu)?.to_dtype(dtype)?;
        let mut noise = Vec::with_capacity(n * self.config.noise_dim);
        for (i, o) in graph.objects.iter().enumerate() {
            let base = match opts.noise_seeds.and_then(|m| m.get(&o.id)) {
                Some(&s) => mix_seed(s, NOISE_SALT),
                None => mix_seed(mix_seed(opts.seed, NOISE_SALT), i as u64),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(vary(base));
            noise.extend((0..self.config.noise_dim).map(|_| -> f32 { StandardNormal.sample(&mut rng) }));
        }
        let z = Tensor::from_vec(noise, (n, self.config.noise_dim), &Device::Cpu)?.to_dtype(dtype)?;
        let out = self.generator.synthesize(&batch, &z, &a, opts.boxes, self.config.canvas)?;
        Ok(Rendered {
            image: out.image.squeeze(0)?.detach(),
            boxes: out.boxes,
            masks: out.masks.detach(),
            appearance,
        })
    }
}

/// Seeds and overrides of one render.
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions<'a> {
    /// Drives noise and `random` appearance.
    pub seed: u64,
    /// Nonzero values resample noise and `random` appearance; pinned
    /// appearance seeds and explicit vectors are kept.
    pub variation: u64,
    /// Per-object noise seeds by object id.
    pub noise_seeds: Option<&'a BTreeMap<String, u64>>,
    /// Boxes to place masks into instead of the predicted ones.
    pub boxes: Option<&'a [BoundingBox]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::graph::parse_graph;

    fn model() -> Model {
        let vocab = CategoryVocabulary::new(["person", "tree"]).unwrap();
        Model::new(&Config::overfit10().model, vocab, 11, DType::F32).unwrap()
    }

    const GRAPH: &str = r#"{
        "objects": [
            {"id": "a", "category": "person", "grid_cell": 12, "size": 5, "appearance": {"mode": "seed", "seed": 3}},
            {"id": "t", "category": "title", "grid_cell": 2, "size": 4, "appearance": {"mode": "random"}, "text": "Hi"}
        ],
        "relations": [{"subject": "t", "predicate": "above", "object": "a"}]
    }"#;

    #[test]
    fn render_is_deterministic_and_seed_sensitive() {
        // Pin the boxes so the test does not depend on the untrained box head.
        let m = model();
        let g = parse_graph(GRAPH).unwrap();
        let boxes: Vec<_> = g.objects.iter().map(|o| crate::synthesis::normalize_box(o.location.nominal_box())).collect();
        let run = |g: &LayoutGraph| {
            let r = m.render_with_boxes(g, 5, Some(&boxes)).unwrap();
            r.image.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        let a = run(&g);
        assert_eq!(a, run(&g));
        let mut g2 = g.clone();
        g2.objects[0].appearance = AppearanceControl::Seed(4);
        assert_ne!(a, run(&g2));
    }

    #[test]
    fn explicit_vector_length_is_checked() {
        let m = model();
        let mut g = parse_graph(GRAPH).unwrap();
        g.objects[0].appearance = AppearanceControl::Explicit(vec![0.5; 3]);
        assert!(matches!(m.render(&g, 0), Err(Error::InvalidRequest(_))));
    }

    #[test]
    fn bank_statistics_and_sampling() {
        let a = [1.0f32, 2.0];
        let b = [3.0f32, 2.0];
        let bank = AppearanceBank::from_samples(2, [("x", &a[..]), ("x", &b[..])]);
        let s = &bank.categories["x"];
        assert_eq!(s.mean, vec![2.0, 2.0]);
        assert_eq!(s.std, vec![1.0, 0.0]);
        assert_eq!(bank.sample("x", 1), bank.sample("x", 1));
        assert_ne!(bank.sample("x", 1), bank.sample("x", 2));
        assert_eq!(bank.sample("unknown", 3).len(), 2);
    }
}

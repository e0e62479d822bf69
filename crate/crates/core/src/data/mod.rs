//! Training data: scene ingestion, cover corpus, augmentation and batching.

pub mod augment;
pub mod coco;
pub mod covers;
pub mod raster;
pub mod synthetic;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use augment::{augment_with_solid_and_title, derive_relation, derive_relations, AugmentedSample, SolidBank};
pub use coco::{ingest_scene_dataset, IngestOptions, SceneDataset};
pub use covers::{from_signed_chw, ingest_book_covers, to_signed_chw};

use crate::config::Config;
use crate::encoder::GraphBatch;
use crate::error::{Error, Result};
use crate::graph::{CategoryVocabulary, LayoutGraph};
use crate::nn::mix_seed;
use crate::synthesis::compose::{crop_resize_interleaved, pixel_rect_at_least_one};
use crate::synthesis::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub category: String,
    pub bbox: BoundingBox,
    /// Binary `mask_size x mask_size` mask over the box, row-major.
    pub mask: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub image: RgbImage,
    pub objects: Vec<SceneObject>,
}

/// Box, mask and crop of one object, the attributes a mismatched layout
/// borrows from elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAttributes {
    pub bbox: BoundingBox,
    pub mask: Vec<f32>,
    /// Channel-major `3 x crop x crop` in `[-1, 1]`.
    pub crop: Vec<f32>,
}

impl ObjectAttributes {
    fn mirrored(&self, mask_size: usize, crop: usize) -> Self {
        let flip = |v: &[f32], w: usize, planes: usize| {
            let h = v.len() / (w * planes);
            let mut out = vec![0f32; v.len()];
            for p in 0..planes {
                for y in 0..h {
                    for x in 0..w {
                        out[(p * h + y) * w + x] = v[(p * h + y) * w + (w - 1 - x)];
                    }
                }
            }
            out
        };
        Self {
            bbox: BoundingBox {
                x0: 1.0 - self.bbox.x1,
                y0: self.bbox.y0,
                x1: 1.0 - self.bbox.x0,
                y1: self.bbox.y1,
            },
            mask: flip(&self.mask, mask_size, 1),
            crop: flip(&self.crop, crop, 3),
        }
    }
}

/// Where a sample's mismatched layout took its attributes from, strongest
/// first. Each object uses the first option available to it; the sample
/// reports the weakest one used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MismatchSource {
    /// A different dataset image with the same category multiset.
    Partner,
    /// Same-category objects of other samples in the batch, or other
    /// same-category objects of the sample itself.
    BatchShuffle,
    /// The object's own attributes mirrored left to right.
    Mirror,
}

pub struct TrainingBatch {
    pub indices: Vec<usize>,
    pub graphs: Vec<LayoutGraph>,
    pub graph_batch: GraphBatch,
    /// Ground-truth images R, `(B, 3, H, W)` in `[-1, 1]`.
    pub real_images: Tensor,
    pub gt_boxes: Vec<BoundingBox>,
    /// Ground-truth masks T_o, `(N, S, S)`.
    pub gt_masks: Tensor,
    /// Real object crops r_o, `(N, 3, c, c)`.
    pub real_crops: Tensor,
    pub mismatch_boxes: Vec<BoundingBox>,
    pub mismatch_masks: Tensor,
    pub mismatch_crops: Tensor,
    pub mismatch_sources: Vec<MismatchSource>,
    /// Real book covers B, `(B, 3, H, W)`.
    pub covers: Tensor,
}

pub struct TrainingSet {
    pub vocab: CategoryVocabulary,
    pub samples: Vec<AugmentedSample>,
    pub covers: Vec<RgbImage>,
    /// Same-multiset partner of each sample, if any.
    pub partners: Vec<Option<usize>>,
    pub mask_size: usize,
    pub crop_size: usize,
    pub seed: u64,
}

/// Sample indices of batch `step`: an epoch-wise permutation walked in
/// order, reshuffled per epoch from the seed.
pub fn batch_indices(n: usize, batch_size: usize, step: u64, seed: u64) -> Vec<usize> {
    let mut cache: Option<(u64, Vec<usize>)> = None;
    (0..batch_size as u64)
        .map(|k| {
            let p = step * batch_size as u64 + k;
            let epoch = p / n as u64;
            if cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch)));
                cache = Some((epoch, perm));
            }
            cache.as_ref().unwrap().1[(p % n as u64) as usize]
        })
        .collect()
}

fn multiset_key(s: &AugmentedSample) -> Vec<String> {
    let mut key: Vec<String> = s.objects.iter().map(|o| o.category.clone()).collect();
    key.sort();
    key
}

/// Next sample (cyclically) with the same category multiset.
pub fn find_partners(samples: &[AugmentedSample]) -> Vec<Option<usize>> {
    let mut groups: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(multiset_key(s)).or_default().push(i);
    }
    let mut out = vec![None; samples.len()];
    for members in groups.values() {
        if members.len() > 1 {
            for (k, &i) in members.iter().enumerate() {
                out[i] = Some(members[(k + 1) % members.len()]);
            }
        }
    }
    out
}

/// Interleaved `h x w x 3` values in `[-1, 1]`.
fn signed_interleaved(img: &RgbImage) -> Vec<f32> {
    img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect()
}

fn interleaved_to_chw(v: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0f32; v.len()];
    for i in 0..w * h {
        for c in 0..3 {
            out[c * w * h + i] = v[i * 3 + c];
        }
    }
    out
}

impl TrainingSet {
    /// Ingests the configured scene dataset and cover corpus.
    pub fn load(cfg: &Config) -> Result<Self> {
        let scene = ingest_scene_dataset(
            &cfg.data.scene_annotations,
            &cfg.data.scene_images,
            &IngestOptions {
                limit: cfg.data.scene_limit,
                min_object_area: cfg.data.min_object_area,
                max_objects: cfg.data.max_objects,
                canvas: cfg.model.canvas,
                mask_size: cfg.model.mask_size,
            },
        )?;
        let covers = ingest_book_covers(&cfg.data.covers, cfg.data.cover_limit, cfg.model.canvas)?;
        Self::build(scene, covers, cfg)
    }

    /// Augments every scene sample once, with per-sample generators seeded
    /// from the global seed and the sample index.
    pub fn build(scene: SceneDataset, covers: Vec<RgbImage>, cfg: &Config) -> Result<Self> {
        if scene.samples.is_empty() {
            return Err(Error::Dataset("scene dataset has no usable samples".into()));
        }
        if covers.is_empty() {
            return Err(Error::Dataset("cover corpus is empty".into()));
        }
        let vocab = CategoryVocabulary::new(scene.categories.iter())?;
        let bank = SolidBank::from_covers(&covers, cfg.data.solid_std_threshold);
        let seed = cfg.seed;
        let samples: Vec<AugmentedSample> = scene
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
                augment_with_solid_and_title(s, &bank, cfg.data.max_solid_regions, cfg.model.mask_size, &mut rng)
            })
            .collect();
        let partners = find_partners(&samples);
        Ok(Self {
            vocab,
            samples,
            covers,
            partners,
            mask_size: cfg.model.mask_size,
            crop_size: cfg.model.crop_size,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Attributes of every object of sample `i`, crops taken from the
    /// augmented image.
    pub fn attributes(&self, i: usize) -> Vec<ObjectAttributes> {
        let s = &self.samples[i];
        let (w, h) = (s.image.width() as usize, s.image.height() as usize);
        let data = signed_interleaved(&s.image);
        let c = self.crop_size;
        s.objects
            .iter()
            .map(|o| {
                let rect = pixel_rect_at_least_one(&o.bbox, w.min(h));
                let crop = crop_resize_interleaved(&data, w, 3, rect, c, c);
                ObjectAttributes {
                    bbox: o.bbox,
                    mask: o.mask.clone(),
                    crop: interleaved_to_chw(&crop, c, c),
                }
            })
            .collect()
    }

    fn mismatch(&self, pos: usize, indices: &[usize], attrs: &[Vec<ObjectAttributes>]) -> (Vec<ObjectAttributes>, MismatchSource) {
        let own = &self.samples[indices[pos]];
        if let Some(p) = self.partners[indices[pos]] {
            let partner = &self.samples[p];
            let pattrs = self.attributes(p);
            let mut used = vec![false; partner.objects.len()];
            let out = own
                .objects
                .iter()
                .map(|o| {
                    let j = (0..partner.objects.len())
                        .find(|&j| !used[j] && partner.objects[j].category == o.category)
                        .expect("partners share a category multiset");
                    used[j] = true;
                    pattrs[j].clone()
                })
                .collect();
            return (out, MismatchSource::Partner);
        }
        let mut used: Vec<Vec<bool>> = attrs.iter().map(|a| vec![false; a.len()]).collect();
        let mut weakest = MismatchSource::BatchShuffle;
        let mut out = Vec::with_capacity(own.objects.len());
        for (j, o) in own.objects.iter().enumerate() {
            let other = (0..indices.len())
                .filter(|&k| k != pos)
                .flat_map(|k| (0..attrs[k].len()).map(move |m| (k, m)))
                .find(|&(k, m)| !used[k][m] && self.samples[indices[k]].objects[m].category == o.category)
                .or_else(|| {
                    (0..own.objects.len())
                        .map(|m| (pos, (j + 1 + m) % own.objects.len()))
                        .find(|&(_, m)| m != j && own.objects[m].category == o.category)
                });
            match other {
                Some((k, m)) => {
                    used[k][m] = true;
                    out.push(attrs[k][m].clone());
                }
                None => {
                    weakest = MismatchSource::Mirror;
                    out.push(attrs[pos][j].mirrored(self.mask_size, self.crop_size));
                }
            }
        }
        (out, weakest)
    }

    /// Batch `step` of the deterministic batch stream.
    pub fn batch(&self, step: u64, batch_size: usize, dtype: DType) -> Result<TrainingBatch> {
        let indices = batch_indices(self.len(), batch_size, step, self.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0x636f_7665_7273, step));
        let covers: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.covers.len())).collect();
        self.batch_of(&indices, &covers, dtype)
    }

    pub fn batch_of(&self, indices: &[usize], cover_ids: &[usize], dtype: DType) -> Result<TrainingBatch> {
        let dev = Device::Cpu;
        let graphs: Vec<LayoutGraph> = indices.iter().map(|&i| self.samples[i].graph.clone()).collect();
        let refs: Vec<&LayoutGraph> = graphs.iter().collect();
        let graph_batch = GraphBatch::from_graphs(&refs, &self.vocab)?;
        let attrs: Vec<Vec<ObjectAttributes>> = indices.iter().map(|&i| self.attributes(i)).collect();

        let mut mismatch = Vec::new();
        let mut mismatch_sources = Vec::new();
        for pos in 0..indices.len() {
            let (m, src) = self.mismatch(pos, indices, &attrs);
            mismatch.extend(m);
            mismatch_sources.push(src);
        }
        let flat: Vec<&ObjectAttributes> = attrs.iter().flatten().collect();
        let (s, c) = (self.mask_size, self.crop_size);
        let n = flat.len();
        let stack = |items: &[&ObjectAttributes], f: &dyn Fn(&ObjectAttributes) -> &[f32], shape: &[usize]| {
            let v: Vec<f32> = items.iter().flat_map(|a| f(a).iter().copied()).collect();
            Tensor::from_vec(v, shape, &dev).and_then(|t| t.to_dtype(dtype))
        };
        let mm: Vec<&ObjectAttributes> = mismatch.iter().collect();
        let images = |imgs: Vec<&RgbImage>| -> Result<Tensor> {
            let (w, h) = (imgs[0].width() as usize, imgs[0].height() as usize);
            let v: Vec<f32> = imgs.iter().flat_map(|i| to_signed_chw(i)).collect();
            Ok(Tensor::from_vec(v, (imgs.len(), 3, h, w), &dev)?.to_dtype(dtype)?)
        };
        Ok(TrainingBatch {
            indices: indices.to_vec(),
            real_images: images(indices.iter().map(|&i| &self.samples[i].image).collect())?,
            covers: images(cover_ids.iter().map(|&i| &self.covers[i]).collect())?,
            gt_boxes: flat.iter().map(|a| a.bbox).collect(),
            gt_masks: stack(&flat, &|a| &a.mask, &[n, s, s])?,
            real_crops: stack(&flat, &|a| &a.crop, &[n, 3, c, c])?,
            mismatch_boxes: mismatch.iter().map(|a| a.bbox).collect(),
            mismatch_masks: stack(&mm, &|a| &a.mask, &[n, s, s])?,
            mismatch_crops: stack(&mm, &|a| &a.crop, &[n, 3, c, c])?,
            mismatch_sources,
            graphs,
            graph_batch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_indices_cover_each_epoch_once() {
        let n = 7;
        let mut seen: Vec<usize> = (0..7).flat_map(|s| batch_indices(n, 3, s, 9)).collect();
        // 21 positions = three full epochs.
        for epoch in seen.chunks_mut(n) {
            epoch.sort();
            assert_eq!(epoch, (0..n).collect::<Vec<_>>().as_slice());
        }
        assert_eq!(batch_indices(n, 3, 4, 9), batch_indices(n, 3, 4, 9));
        assert_ne!(batch_indices(n, 7, 0, 9), batch_indices(n, 7, 0, 10));
    }
}

//! Alternating discriminator and generator updates.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint;
use crate::config::{Config, LossConfig};
use crate::data::{TrainingBatch, TrainingSet};
use crate::error::{Error, Result};
use crate::losses::{
    book_d_term, book_g_term, box_loss, content_loss, feature_matching, layout_d_term, layout_g_term, mask_d_term,
    mask_g_term, object_d_term, object_g_term, pixel_loss, total_loss, LayoutScores, LossBundle, DISC_TERM_NAMES,
    TERM_NAMES,
};
use crate::model::{AppearanceBank, Model, Synthesis};
use crate::nn::{mix_seed, scalar};
use crate::optim::Adam;
use crate::perception::Perception;
use crate::synthesis::{boxes_to_tensor, compose_batch, crop_and_resize};

const STEP_NOISE_SALT: u64 = 0x7374_6570;

pub struct TrainState {
    pub model: Model,
    pub perception: Perception,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Number of completed steps.
    pub step: u64,
    pub loss: LossConfig,
    pub seed: u64,
}

impl TrainState {
    pub fn new(cfg: &Config, model: Model, perception: Perception) -> Result<Self> {
        Ok(Self {
            gen_opt: Adam::new(&model.gen_params, &cfg.optim)?,
            disc_opt: Adam::new(&model.disc_params, &cfg.optim)?,
            model,
            perception,
            step: 0,
            loss: cfg.loss.clone(),
            seed: cfg.seed,
        })
    }

    fn noise(&self, n: usize) -> Result<Tensor> {
        let dim = self.model.config.noise_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ STEP_NOISE_SALT, self.step));
        let v: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Tensor::from_vec(v, (n, dim), &Device::Cpu)?.to_dtype(self.model.dtype())?)
    }
}

fn check(bundle: &LossBundle, step: u64) -> Result<()> {
    match bundle.first_non_finite() {
        Some(term) => Err(Error::NonFinite {
            term: term.to_string(),
            step,
        }),
        None => Ok(()),
    }
}

/// Generator outputs of one batch, shared by both phases of a step.
pub struct Forward {
    pub out: Synthesis,
    pub fake_crops: Tensor,
    /// Ground-truth layout map.
    pub q: Tensor,
    /// Layout map built from another image's attributes.
    pub q_mismatch: Tensor,
}

pub fn forward(state: &TrainState, batch: &TrainingBatch) -> Result<Forward> {
    let cfg = &state.model.config;
    let gen = &state.model.generator;
    let images = batch.graph_batch.num_graphs;
    let noise = state.noise(batch.graph_batch.num_objects())?;
    let appearance = gen.appearance.forward(&batch.real_crops)?;
    let place = cfg.teacher_forcing.then_some(batch.gt_boxes.as_slice());
    let out = gen.synthesize(&batch.graph_batch, &noise, &appearance, place, cfg.canvas)?;
    let fake_crops = crop_and_resize(&out.image, &out.boxes, &batch.graph_batch.graph_index, cfg.crop_size)?;
    let gi = &batch.graph_batch.graph_index;
    let q = compose_batch(&batch.gt_boxes, &batch.gt_masks, &appearance.detach(), gi, images, cfg.canvas)?;
    let mismatch_app = gen.appearance.forward(&batch.mismatch_crops)?.detach();
    let q_mismatch =
        compose_batch(&batch.mismatch_boxes, &batch.mismatch_masks, &mismatch_app, gi, images, cfg.canvas)?;
    Ok(Forward {
        out,
        fake_crops,
        q,
        q_mismatch,
    })
}

/// Updates the discriminators on detached generator outputs. Returns the
/// raw discriminator terms.
pub fn discriminator_update(state: &mut TrainState, batch: &TrainingBatch, fwd: &Forward) -> Result<[f64; 4]> {
    let disc = &state.model.discriminators;
    let cats = &batch.graph_batch.categories;
    let images = batch.graph_batch.num_graphs;
    let real = &batch.real_images;
    let (img, masks, layout, crops) = (
        fwd.out.image.detach(),
        fwd.out.masks.detach(),
        fwd.out.layout.detach(),
        fwd.fake_crops.detach(),
    );
    let d_mask = mask_d_term(
        &disc.mask.forward(&batch.gt_masks, cats)?.score,
        &disc.mask.forward(&masks, cats)?.score,
        state.loss.mask_objective,
    )?;
    let d_object = object_d_term(
        &disc.object.forward(&batch.real_crops, cats)?.probability()?,
        &disc.object.forward(&crops, cats)?.probability()?,
        images,
    )?;
    let (q_r, q_i, f_r, m_r) = (
        disc.layout.forward(&fwd.q, real)?.probability()?,
        disc.layout.forward(&fwd.q, &img)?.probability()?,
        disc.layout.forward(&layout, real)?.probability()?,
        disc.layout.forward(&fwd.q_mismatch, real)?.probability()?,
    );
    let d_layout = layout_d_term(
        &LayoutScores {
            q_r: &q_r,
            q_i: &q_i,
            f_r: &f_r,
            mismatch_r: &m_r,
        },
        state.loss.eq3_fourth_term_sign,
    )?;
    let d_book = book_d_term(
        &disc.book.forward(&batch.covers)?.probability()?,
        &disc.book.forward(&img)?.probability()?,
    )?;
    let terms = [d_mask, d_object, d_layout, d_book];
    let mut values = [0.0; 4];
    for ((v, t), name) in values.iter_mut().zip(&terms).zip(DISC_TERM_NAMES) {
        *v = scalar(t)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.to_string(),
                step: state.step,
            });
        }
    }
    let w = state.loss.weights.as_array();
    let total = ((((&terms[0] * w[3])? + (&terms[1] * w[4])?)? + (&terms[2] * w[5])?)? + (&terms[3] * w[6])?)?;
    state.disc_opt.step(&total.backward()?)?;
    Ok(values)
}

/// The nine generator-side terms through the current discriminators, and
/// their weighted total.
pub fn generator_objective(state: &TrainState, batch: &TrainingBatch, fwd: &Forward) -> Result<(Tensor, [f64; 9])> {
    let disc = &state.model.discriminators;
    let cats = &batch.graph_batch.categories;
    let images = batch.graph_batch.num_graphs;
    let real = &batch.real_images;
    let out = &fwd.out;
    let gt_boxes = boxes_to_tensor(&batch.gt_boxes, state.model.dtype())?;
    let fake_mask = disc.mask.forward(&out.masks, cats)?;
    let real_mask = disc.mask.forward(&batch.gt_masks, cats)?;
    let fake_layout = disc.layout.forward(&out.layout, &out.image)?;
    let real_layout = disc.layout.forward(&fwd.q, real)?;
    let perceived = state.perception.features(&out.image)?;
    let perceived_real: Vec<Tensor> = state.perception.features(real)?.iter().map(|t| t.detach()).collect();
    let terms = [
        pixel_loss(&out.image, real)?,
        box_loss(&out.box_tensor, &gt_boxes)?,
        content_loss(&perceived, &perceived_real)?,
        mask_g_term(&fake_mask.score, state.loss.mask_objective)?,
        object_g_term(&disc.object.forward(&fwd.fake_crops, cats)?.probability()?, images)?,
        layout_g_term(&fake_layout.probability()?)?,
        book_g_term(&disc.book.forward(&out.image)?.probability()?)?,
        feature_matching(&fake_mask.features, &real_mask.features)?,
        feature_matching(&fake_layout.features, &real_layout.features)?,
    ];
    total_loss(&state.loss.weights, &terms)
}

/// One discriminator update on detached generator outputs, then one
/// generator update through the updated discriminators.
pub fn train_step(state: &mut TrainState, batch: &TrainingBatch) -> Result<LossBundle> {
    let fwd = forward(state, batch)?;
    let disc_values = discriminator_update(state, batch, &fwd)?;
    let (g_total, values) = generator_objective(state, batch, &fwd)?;
    let bundle = LossBundle::new(&state.loss.weights, values, disc_values);
    check(&bundle, state.step)?;
    state.gen_opt.step(&g_total.backward()?)?;
    state.step += 1;
    Ok(bundle)
}

/// Appearance statistics of every object in the training set under the
/// current encoder.
pub fn build_appearance_bank(model: &Model, data: &TrainingSet) -> Result<AppearanceBank> {
    let c = model.config.crop_size;
    let mut pairs: Vec<(String, Vec<f32>)> = Vec::new();
    for i in 0..data.len() {
        let attrs = data.attributes(i);
        let crops: Vec<f32> = attrs.iter().flat_map(|a| a.crop.iter().copied()).collect();
        let t = Tensor::from_vec(crops, (attrs.len(), 3, c, c), &Device::Cpu)?.to_dtype(model.dtype())?;
        let v = model.generator.appearance.forward(&t)?.to_dtype(DType::F32)?.to_vec2::<f32>()?;
        pairs.extend(data.samples[i].objects.iter().map(|o| o.category.clone()).zip(v));
    }
    Ok(AppearanceBank::from_samples(
        model.config.appearance_dim,
        pairs.iter().map(|(c, v)| (c.as_str(), v.as_slice())),
    ))
}

/// Header of the per-step loss log.
pub fn csv_header() -> String {
    let mut cols = vec!["step"];
    cols.extend(TERM_NAMES);
    cols.push("total");
    cols.extend(DISC_TERM_NAMES);
    cols.join(",")
}

pub fn csv_row(step: u64, b: &LossBundle) -> String {
    let mut row = vec![step.to_string()];
    row.extend(b.terms.iter().map(|v| v.to_string()));
    row.push(b.total.to_string());
    row.extend(b.disc_terms.iter().map(|v| v.to_string()));
    row.join(",")
}

pub struct Trainer {
    pub config: Config,
    pub data: TrainingSet,
    pub state: TrainState,
}

impl Trainer {
    /// Fresh networks for the data set's vocabulary.
    pub fn new(config: Config, data: TrainingSet) -> Result<Self> {
        let model = Model::new(&config.model, data.vocab.clone(), config.seed, DType::F32)?;
        let perception = Perception::from_config(&config.perception, DType::F32)?;
        let state = TrainState::new(&config, model, perception)?;
        Ok(Self { config, data, state })
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(config: Config, data: TrainingSet, dir: &Path) -> Result<Self> {
        let mut t = Self::new(config, data)?;
        checkpoint::load_training(dir, &t.config, &mut t.state)?;
        Ok(t)
    }

    pub fn step(&mut self) -> Result<LossBundle> {
        let batch = self.data.batch(self.state.step, self.config.optim.batch_size, self.state.model.dtype())?;
        train_step(&mut self.state, &batch)
    }

    /// Runs until `config.optim.iterations` steps are done, appending to
    /// `log` and checkpointing every `checkpoint.every` steps and at the end.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>, mut on_step: impl FnMut(u64, &LossBundle)) -> Result<()> {
        if let Some(l) = log.as_deref_mut() {
            if self.state.step == 0 {
                writeln!(l, "{}", csv_header())?;
            }
        }
        while self.state.step < self.config.optim.iterations {
            let step = self.state.step;
            let bundle = self.step()?;
            if let Some(l) = log.as_deref_mut() {
                writeln!(l, "{}", csv_row(step, &bundle))?;
                l.flush()?;
            }
            on_step(step, &bundle);
            let every = self.config.checkpoint.every;
            if every > 0 && self.state.step % every == 0 && self.state.step < self.config.optim.iterations {
                self.save(&self.config.checkpoint.dir.clone())?;
            }
        }
        self.save(&self.config.checkpoint.dir.clone())
    }

    /// Refreshes the appearance bank and writes a checkpoint.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.state.model.bank = build_appearance_bank(&self.state.model, &self.data)?;
        checkpoint::save_training(dir, &self.config, &self.state)
    }
}

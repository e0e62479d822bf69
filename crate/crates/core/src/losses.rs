//! Loss terms of the adversarial objective.
//!
//! Discriminator-side terms are written so that the discriminator minimizes
//! them. Generator-side adversarial terms use the non-saturating
//! `-log D(fake)` form. Probabilities are clamped to
//! `[PROB_EPS, 1 - PROB_EPS]` before any logarithm.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{MaskObjective, MismatchTerm};
use crate::error::{Error, Result};
use crate::nn::{scalar, sigmoid};

pub const PROB_EPS: f64 = 1e-6;

/// Names of the nine generator-side terms, in weight order.
pub const TERM_NAMES: [&str; 9] = [
    "pixel",
    "box",
    "content",
    "mask_adv",
    "object_adv",
    "layout_adv",
    "book_adv",
    "mask_features",
    "layout_features",
];

/// Names of the four discriminator terms.
pub const DISC_TERM_NAMES: [&str; 4] = ["d_mask", "d_object", "d_layout", "d_book"];

/// Weights of the nine generator-side terms of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pixel: f64,
    pub box_regression: f64,
    pub content: f64,
    pub mask_adversarial: f64,
    pub object_adversarial: f64,
    pub layout_adversarial: f64,
    pub book_adversarial: f64,
    pub mask_features: f64,
    pub layout_features: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            box_regression: 10.0,
            content: 10.0,
            mask_adversarial: 1.0,
            object_adversarial: 0.1,
            layout_adversarial: 1.0,
            book_adversarial: 1.0,
            mask_features: 10.0,
            layout_features: 10.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.pixel,
            self.box_regression,
            self.content,
            self.mask_adversarial,
            self.object_adversarial,
            self.layout_adversarial,
            self.book_adversarial,
            self.mask_features,
            self.layout_features,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and nonnegative".into()))
        }
    }
}

/// Weighted sum accumulated in term order. Any caller that repeats this
/// loop over the same values gets the same bits.
pub fn weighted_total(weights: &LossWeights, terms: &[f64; 9]) -> f64 {
    let mut total = 0.0;
    for (w, t) in weights.as_array().iter().zip(terms) {
        total += w * t;
    }
    total
}

/// Per-term values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub terms: [f64; 9],
    pub total: f64,
    pub disc_terms: [f64; 4],
}

impl LossBundle {
    pub fn new(weights: &LossWeights, terms: [f64; 9], disc_terms: [f64; 4]) -> Self {
        Self {
            terms,
            total: weighted_total(weights, &terms),
            disc_terms,
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        TERM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.terms[i])
            .or_else(|| DISC_TERM_NAMES.iter().position(|n| *n == name).map(|i| self.disc_terms[i]))
    }

    /// First non-finite entry, by name.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        let named = TERM_NAMES.iter().zip(&self.terms);
        let disc = DISC_TERM_NAMES.iter().zip(&self.disc_terms);
        named
            .chain(disc)
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
            .or_else(|| (!self.total.is_finite()).then_some("total"))
    }
}

/// Builds the total objective from the term tensors (same order as
/// [`weighted_total`]) and reports their values.
pub fn total_loss(weights: &LossWeights, terms: &[Tensor; 9]) -> Result<(Tensor, [f64; 9])> {
    let mut values = [0.0; 9];
    let mut total: Option<Tensor> = None;
    for (i, (w, t)) in weights.as_array().iter().zip(terms).enumerate() {
        values[i] = scalar(t)?;
        let scaled = (t * *w)?;
        total = Some(match total {
            None => scaled,
            Some(acc) => (acc + scaled)?,
        });
    }
    Ok((total.expect("nine terms"), values))
}

fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

fn log_p(p: &Tensor) -> Result<Tensor> {
    Ok(clamp_prob(p)?.log()?)
}

fn log_one_minus(p: &Tensor) -> Result<Tensor> {
    Ok(clamp_prob(p)?.affine(-1.0, 1.0)?.log()?)
}

/// Discriminator side of the mask objective, averaged over objects.
/// `real` and `fake` are the raw mask-discriminator scores.
pub fn mask_d_term(real: &Tensor, fake: &Tensor, objective: MaskObjective) -> Result<Tensor> {
    Ok(match objective {
        MaskObjective::LeastSquares => ((real - 1.0)?.sqr()?.mean_all()? + fake.sqr()?.mean_all()?)?,
        MaskObjective::Log => {
            let r = log_p(&sigmoid(real)?)?.mean_all()?;
            let f = log_one_minus(&sigmoid(fake)?)?.mean_all()?;
            (r + f)?.neg()?
        }
    })
}

pub fn mask_g_term(fake: &Tensor, objective: MaskObjective) -> Result<Tensor> {
    Ok(match objective {
        MaskObjective::LeastSquares => (fake - 1.0)?.sqr()?.mean_all()?,
        MaskObjective::Log => log_p(&sigmoid(fake)?)?.mean_all()?.neg()?,
    })
}

/// Both sides of the mask objective on the same scores.
pub fn mask_adv_loss(real: &Tensor, fake: &Tensor, objective: MaskObjective) -> Result<(Tensor, Tensor)> {
    Ok((mask_d_term(real, fake, objective)?, mask_g_term(fake, objective)?))
}

/// Probabilities of the layout discriminator on the four pairs it sees
/// during its update.
pub struct LayoutScores<'a> {
    /// Ground-truth layout with the real image.
    pub q_r: &'a Tensor,
    /// Ground-truth layout with the generated image.
    pub q_i: &'a Tensor,
    /// Generated layout with the real image.
    pub f_r: &'a Tensor,
    /// Mismatched layout with the real image.
    pub mismatch_r: &'a Tensor,
}

pub fn layout_d_term(s: &LayoutScores, mismatch: MismatchTerm) -> Result<Tensor> {
    let fourth = match mismatch {
        MismatchTerm::AsPrinted => log_p(s.mismatch_r)?,
        MismatchTerm::MismatchIsFake => log_one_minus(s.mismatch_r)?,
    };
    let sum = (((log_p(s.q_r)? + log_one_minus(s.q_i)?)? + log_one_minus(s.f_r)?)? + fourth)?;
    Ok(sum.mean_all()?.neg()?)
}

/// `-log D(F, I)` averaged over the batch.
pub fn layout_g_term(f_i: &Tensor) -> Result<Tensor> {
    Ok(log_p(f_i)?.mean_all()?.neg()?)
}

pub fn book_d_term(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    Ok((log_p(real)? + log_one_minus(fake)?)?.mean_all()?.neg()?)
}

pub fn book_g_term(fake: &Tensor) -> Result<Tensor> {
    Ok(log_p(fake)?.mean_all()?.neg()?)
}

pub fn book_adv_loss(real: &Tensor, fake: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((book_d_term(real, fake)?, book_g_term(fake)?))
}

/// `sum_o [log D(i_o) - log D(r_o)]`, divided by the number of images.
pub fn object_d_term(real: &Tensor, fake: &Tensor, images: usize) -> Result<Tensor> {
    if real.dims() != fake.dims() {
        return Err(Error::Alignment(format!(
            "{:?} real object scores vs {:?} generated",
            real.dims(),
            fake.dims()
        )));
    }
    Ok(((log_p(fake)? - log_p(real)?)?.sum_all()? / images.max(1) as f64)?)
}

/// `-sum_o log D(i_o)`, divided by the number of images.
pub fn object_g_term(fake: &Tensor, images: usize) -> Result<Tensor> {
    Ok((log_p(fake)?.sum_all()?.neg()? / images.max(1) as f64)?)
}

pub fn object_adv_loss(real: &Tensor, fake: &Tensor, images: usize) -> Result<(Tensor, Tensor)> {
    Ok((object_d_term(real, fake, images)?, object_g_term(fake, images)?))
}

fn mean_abs_layers(a: &[Tensor], b: &[Tensor]) -> Result<Tensor> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Alignment(format!("{} vs {} feature layers", a.len(), b.len())));
    }
    let mut total: Option<Tensor> = None;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y)?.abs()?.mean_all()?;
        total = Some(match total {
            None => d,
            Some(t) => (t + d)?,
        });
    }
    Ok(total.unwrap())
}

/// Sum over layers of the mean absolute difference between generated and
/// real activations. Real activations carry no gradient.
pub fn feature_matching(generated: &[Tensor], real: &[Tensor]) -> Result<Tensor> {
    let real: Vec<Tensor> = real.iter().map(|t| t.detach()).collect();
    mean_abs_layers(generated, &real)
}

/// Perceptual content loss over the extractor's pooled activations.
pub fn content_loss(generated: &[Tensor], real: &[Tensor]) -> Result<Tensor> {
    mean_abs_layers(generated, real)
}

/// Mean absolute error over all coordinates of aligned `(n, 4)` boxes.
pub fn box_loss(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    if pred.dims() != gt.dims() {
        return Err(Error::Alignment(format!(
            "{:?} predicted boxes vs {:?} ground truth",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok((pred - gt)?.abs()?.mean_all()?)
}

pub fn pixel_loss(generated: &Tensor, real: &Tensor) -> Result<Tensor> {
    if generated.dims() != real.dims() {
        return Err(Error::Alignment(format!(
            "{:?} generated vs {:?} real images",
            generated.dims(),
            real.dims()
        )));
    }
    Ok((generated - real)?.abs()?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn s(x: &Tensor) -> f64 {
        scalar(x).unwrap()
    }

    #[test]
    fn unit_terms_give_forty_four_point_one() {
        let b = LossBundle::new(&LossWeights::default(), [1.0; 9], [0.0; 4]);
        assert!((b.total - 44.1).abs() < 1e-12);
        let zero = LossBundle::new(&LossWeights::default(), [0.0; 9], [0.0; 4]);
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn least_squares_mask_values() {
        let half = t(&[0.5, 0.5, 0.5]);
        let (d, g) = mask_adv_loss(&half, &half, MaskObjective::LeastSquares).unwrap();
        assert!((s(&d) - 0.5).abs() < 1e-15);
        assert!((s(&g) - 0.25).abs() < 1e-15);
        let (d, _) = mask_adv_loss(&t(&[1.0]), &t(&[0.0]), MaskObjective::LeastSquares).unwrap();
        assert_eq!(s(&d), 0.0);
    }

    #[test]
    fn book_and_layout_at_one_half() {
        let half = t(&[0.5, 0.5]);
        let (d, _) = book_adv_loss(&half, &half).unwrap();
        assert!((s(&d) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let scores = LayoutScores {
            q_r: &half,
            q_i: &half,
            f_r: &half,
            mismatch_r: &half,
        };
        for m in [MismatchTerm::AsPrinted, MismatchTerm::MismatchIsFake] {
            assert!((s(&layout_d_term(&scores, m).unwrap()) - 4.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatch_sign_changes_the_objective() {
        let a = t(&[0.7]);
        let m = t(&[0.9]);
        let scores = LayoutScores {
            q_r: &a,
            q_i: &a,
            f_r: &a,
            mismatch_r: &m,
        };
        let printed = s(&layout_d_term(&scores, MismatchTerm::AsPrinted).unwrap());
        let fake = s(&layout_d_term(&scores, MismatchTerm::MismatchIsFake).unwrap());
        assert!((fake - printed - (0.9f64.ln() - 0.1f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn clamping_keeps_saturated_terms_finite() {
        let (d, g) = book_adv_loss(&t(&[0.0]), &t(&[1.0])).unwrap();
        assert!(s(&d).is_finite() && s(&g).is_finite());
        assert!((s(&d) + 2.0 * PROB_EPS.ln()).abs() < 1e-4);
    }

    #[test]
    fn object_terms_cancel_and_add() {
        let p = t(&[0.3, 0.8]);
        let (d, _) = object_adv_loss(&p, &p, 1).unwrap();
        assert_eq!(s(&d), 0.0);
        let (_, g1) = object_adv_loss(&t(&[0.3]), &t(&[0.3]), 1).unwrap();
        let (_, g2) = object_adv_loss(&t(&[0.8]), &t(&[0.8]), 1).unwrap();
        let (_, g) = object_adv_loss(&p, &p, 1).unwrap();
        assert!((s(&g) - s(&g1) - s(&g2)).abs() < 1e-15);
    }

    #[test]
    fn box_and_pixel_examples() {
        let gt = Tensor::new(&[[0.1f64, 0.2, 0.5, 0.6]], &Device::Cpu).unwrap();
        let off = Tensor::new(&[[0.2f64, 0.2, 0.5, 0.6]], &Device::Cpu).unwrap();
        assert_eq!(s(&box_loss(&gt, &gt).unwrap()), 0.0);
        assert!((s(&box_loss(&off, &gt).unwrap()) - 0.025).abs() < 1e-15);
        let r = Tensor::ones((1, 3, 4, 4), candle_core::DType::F64, &Device::Cpu).unwrap();
        assert_eq!(s(&pixel_loss(&r.neg().unwrap(), &r).unwrap()), 2.0);
        let short = Tensor::zeros((2, 4), candle_core::DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(box_loss(&short, &gt), Err(Error::Alignment(_))));
    }

    #[test]
    fn non_finite_terms_are_named() {
        let mut terms = [0.0; 9];
        terms[5] = f64::NAN;
        let b = LossBundle::new(&LossWeights::default(), terms, [0.0; 4]);
        assert_eq!(b.first_non_finite(), Some("layout_adv"));
    }
}

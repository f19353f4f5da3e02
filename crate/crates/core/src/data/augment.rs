//! Geometric training augmentation: horizontal flip, isotropic scaling about
//! the centre, and a random crop resized back to full size.
//!
//! All three compose into one affine map per axis so the image (bilinear)
//! and mask (nearest) are resampled exactly once with the same geometry.

use rand::Rng;

use super::Sample;
use crate::image::{Image, LabelMap, BACKGROUND};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub scale_prob: f64,
    pub scale_range: (f64, f64),
    pub crop_prob: f64,
    /// Minimum crop extent as a fraction of each dimension.
    pub min_crop: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            scale_prob: 0.5,
            scale_range: (0.75, 1.25),
            crop_prob: 0.5,
            min_crop: 0.9,
        }
    }
}

/// A crop window in source pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropDraw {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

/// The concrete random choices for one augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub scale: f64,
    pub crop: Option<CropDraw>,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self {
        flip: false,
        scale: 1.0,
        crop: None,
    };
}

impl AugmentPolicy {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, height: usize, width: usize) -> AugmentDraw {
        let flip = rng.random_bool(self.flip_prob);
        let scale = if rng.random_bool(self.scale_prob) {
            rng.random_range(self.scale_range.0..=self.scale_range.1)
        } else {
            1.0
        };
        let crop = if rng.random_bool(self.crop_prob) {
            let fh = rng.random_range(self.min_crop..=1.0);
            let fw = rng.random_range(self.min_crop..=1.0);
            let (ch, cw) = (fh * height as f64, fw * width as f64);
            Some(CropDraw {
                top: rng.random_range(0.0..=height as f64 - ch),
                left: rng.random_range(0.0..=width as f64 - cw),
                height: ch,
                width: cw,
            })
        } else {
            None
        };
        AugmentDraw { flip, scale, crop }
    }
}

/// `src = a * dst + b` along one axis.
#[derive(Debug, Clone, Copy)]
struct Affine {
    a: f64,
    b: f64,
}

impl Affine {
    const ID: Self = Self { a: 1.0, b: 0.0 };

    /// `self` applied after `inner`: `self(inner(x))`.
    fn after(self, inner: Affine) -> Affine {
        Affine {
            a: self.a * inner.a,
            b: self.a * inner.b + self.b,
        }
    }

    fn at(self, i: usize) -> f64 {
        self.a * i as f64 + self.b
    }
}

fn axis_maps(draw: &AugmentDraw, h: usize, w: usize) -> (Affine, Affine) {
    let (mut my, mut mx) = (Affine::ID, Affine::ID);
    if let Some(c) = draw.crop {
        // Output pixel centre i lands at top + (i + 0.5) * ch / h - 0.5.
        let sy = c.height / h as f64;
        let sx = c.width / w as f64;
        my = Affine { a: sy, b: c.top + 0.5 * sy - 0.5 };
        mx = Affine { a: sx, b: c.left + 0.5 * sx - 0.5 };
    }
    if draw.scale != 1.0 {
        let inv = 1.0 / draw.scale;
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        my = Affine { a: inv, b: cy * (1.0 - inv) }.after(my);
        mx = Affine { a: inv, b: cx * (1.0 - inv) }.after(mx);
    }
    if draw.flip {
        mx = Affine { a: -1.0, b: w as f64 - 1.0 }.after(mx);
    }
    (my, mx)
}

fn sample_bilinear(img: &Image, y: f64, x: f64, c: usize) -> f32 {
    let (h, w) = (img.height() as f64, img.width() as f64);
    if y < -0.5 || x < -0.5 || y > h - 0.5 || x > w - 0.5 {
        return 0.0;
    }
    let y = y.clamp(0.0, h - 1.0);
    let x = x.clamp(0.0, w - 1.0);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height() - 1), (x0 + 1).min(img.width() - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = (1.0 - fx) * img.get(y0, x0, c) + fx * img.get(y0, x1, c);
    let bot = (1.0 - fx) * img.get(y1, x0, c) + fx * img.get(y1, x1, c);
    (1.0 - fy) * top + fy * bot
}

fn sample_nearest(mask: &LabelMap, y: f64, x: f64) -> u8 {
    let (yr, xr) = (y.round(), x.round());
    if yr < 0.0 || xr < 0.0 || yr >= mask.height() as f64 || xr >= mask.width() as f64 {
        return BACKGROUND;
    }
    mask.get(yr as usize, xr as usize)
}

/// Applies a concrete draw; output dimensions equal input dimensions.
pub fn apply_augment(sample: &Sample, draw: &AugmentDraw) -> Sample {
    let (h, w) = sample.mask.dims();
    let (my, mx) = axis_maps(draw, h, w);
    let ch = sample.image.channels();
    let mut image = Image::filled(h, w, ch, 0.0);
    let mut mask = LabelMap::filled(h, w, BACKGROUND);
    for y in 0..h {
        let sy = my.at(y);
        for x in 0..w {
            let sx = mx.at(x);
            for c in 0..ch {
                image.set(y, x, c, sample_bilinear(&sample.image, sy, sx, c));
            }
            mask.set(y, x, sample_nearest(&sample.mask, sy, sx));
        }
    }
    Sample {
        id: sample.id.clone(),
        image,
        mask,
        label: sample.label,
    }
}

/// Draws and applies one random augmentation.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, policy: &AugmentPolicy, rng: &mut R) -> Sample {
    let (h, w) = sample.mask.dims();
    let draw = policy.draw(rng, h, w);
    apply_augment(sample, &draw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Sample {
        let cfg = SynthConfig { count: 1, size: 48, seed: 11, ..Default::default() };
        synth_generate(&cfg).unwrap().remove(0)
    }

    #[test]
    fn identity_draw_is_exact() {
        let s = sample();
        assert_eq!(apply_augment(&s, &AugmentDraw::IDENTITY), s);
    }

    #[test]
    fn all_zero_probabilities_draw_identity() {
        let policy = AugmentPolicy { flip_prob: 0.0, scale_prob: 0.0, crop_prob: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample();
        for _ in 0..5 {
            assert_eq!(augment(&s, &policy, &mut rng), s);
        }
    }

    #[test]
    fn double_flip_restores() {
        let s = sample();
        let flip = AugmentDraw { flip: true, ..AugmentDraw::IDENTITY };
        let once = apply_augment(&s, &flip);
        assert_ne!(once, s);
        assert_eq!(apply_augment(&once, &flip), s);
    }

    #[test]
    fn dims_and_classes_preserved() {
        let s = sample();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = augment(&s, &AugmentPolicy::default(), &mut rng);
            assert_eq!(a.mask.dims(), s.mask.dims());
            assert_eq!(a.image.channels(), 3);
            assert!(a.mask.data().iter().all(|&v| v <= 2));
        }
    }

    #[test]
    fn draws_respect_policy_bounds() {
        let p = AugmentPolicy { scale_prob: 1.0, crop_prob: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let d = p.draw(&mut rng, 40, 30);
            assert!((0.75..=1.25).contains(&d.scale));
            let c = d.crop.unwrap();
            assert!(c.height >= 36.0 - 1e-9 && c.width >= 27.0 - 1e-9);
            assert!(c.top >= 0.0 && c.top + c.height <= 40.0 + 1e-9);
            assert!(c.left >= 0.0 && c.left + c.width <= 30.0 + 1e-9);
        }
    }
}

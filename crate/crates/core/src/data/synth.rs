//! Synthetic fundus images with exact ground truth.
//!
//! Each sample paints a textured reddish background, a bright elliptical
//! disk, a concentric darker cup whose area ratio is drawn from the class
//! range, and dark vessel stripes crossing the disk. Vessels affect only the
//! image; the mask is the painted disk/cup geometry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, BACKGROUND, CUP, DISK_RING};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    /// Disk radius as a fraction of `size`.
    pub disk_radius: (f64, f64),
    /// Cup/disk area ratio range for healthy eyes.
    pub normal_ratio: (f64, f64),
    /// Cup/disk area ratio range for glaucomatous eyes.
    pub glaucoma_ratio: (f64, f64),
    pub glaucoma_fraction: f64,
    pub noise: f64,
    pub vessels: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 60,
            size: 128,
            disk_radius: (0.12, 0.2),
            normal_ratio: (0.1, 0.3),
            glaucoma_ratio: (0.4, 0.65),
            glaucoma_fraction: 0.5,
            noise: 0.05,
            vessels: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |(lo, hi): (f64, f64), what: &str| {
            if lo > 0.0 && hi < 1.0 && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} range ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")))
            }
        };
        open_unit(self.disk_radius, "disk_radius")?;
        open_unit(self.normal_ratio, "normal_ratio")?;
        open_unit(self.glaucoma_ratio, "glaucoma_ratio")?;
        if self.glaucoma_ratio.0 <= self.normal_ratio.1 {
            return Err(Error::Config("glaucoma_ratio must lie strictly above normal_ratio".into()));
        }
        if self.disk_radius.1 >= 0.45 {
            return Err(Error::Config("disk_radius upper bound must be below 0.45".into()));
        }
        if !(0.0..=1.0).contains(&self.glaucoma_fraction) {
            return Err(Error::Config("glaucoma_fraction must be in [0, 1]".into()));
        }
        if !(self.noise >= 0.0 && self.noise <= 0.5) {
            return Err(Error::Config("noise must be in [0, 0.5]".into()));
        }
        // Smallest disk must hold enough pixels for the ratio ranges to be hit.
        if self.size < 16 || self.disk_radius.0 * (self.size as f64) < 4.0 {
            return Err(Error::Config("disks must have a radius of at least 4 pixels".into()));
        }
        Ok(())
    }

    pub fn ratio_range(&self, glaucoma: bool) -> (f64, f64) {
        if glaucoma {
            self.glaucoma_ratio
        } else {
            self.normal_ratio
        }
    }
}

/// Axis-aligned ellipse over pixel centres `(y, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
}

impl Ellipse {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 - self.cy) / self.ry;
        let dx = (x as f64 - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            ry: self.ry * k,
            rx: self.rx * k,
            ..*self
        }
    }

    pub fn pixel_count(&self, h: usize, w: usize) -> usize {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| self.contains(y, x))
            .count()
    }
}

/// Paints disk (rim) and cup classes for a concentric ellipse pair.
pub fn paint_mask(h: usize, w: usize, disk: &Ellipse, cup: &Ellipse) -> LabelMap {
    let mut m = LabelMap::filled(h, w, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            if cup.contains(y, x) {
                m.set(y, x, CUP);
            } else if disk.contains(y, x) {
                m.set(y, x, DISK_RING);
            }
        }
    }
    m
}

/// Cup scale whose rasterised area ratio falls inside `range`, aiming at
/// `target`. Area is monotone in the scale, so bisection converges.
fn fit_cup_scale(disk: &Ellipse, h: usize, w: usize, target: f64, range: (f64, f64)) -> Option<(f64, f64)> {
    let disk_px = disk.pixel_count(h, w) as f64;
    let ratio = |k: f64| disk.scaled(k).pixel_count(h, w) as f64 / disk_px;
    let in_range = |r: f64| r >= range.0 && r <= range.1;
    let k0 = target.sqrt();
    let r0 = ratio(k0);
    if in_range(r0) {
        return Some((k0, r0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let r = ratio(mid);
        if in_range(r) {
            return Some((mid, r));
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    None
}

fn paint_image(rng: &mut ChaCha8Rng, cfg: &SynthConfig, disk: &Ellipse, cup: &Ellipse) -> Image {
    let n = cfg.size;
    let mut img = Image::filled(n, n, 3, 0.0);
    let bg = [0.55, 0.24, 0.1];
    let disk_col = [0.95, 0.8, 0.45];
    let cup_col = [0.85, 0.6, 0.33];
    let vessel_col = [0.4, 0.1, 0.05];

    // Low-frequency illumination: brighter toward the disk.
    let span = n as f64;
    for y in 0..n {
        for x in 0..n {
            let d = ((y as f64 - disk.cy).powi(2) + (x as f64 - disk.cx).powi(2)).sqrt() / span;
            let shade = 1.0 - 0.35 * d;
            let col = if cup.contains(y, x) {
                cup_col
            } else if disk.contains(y, x) {
                disk_col
            } else {
                bg.map(|c| c * shade)
            };
            for c in 0..3 {
                img.set(y, x, c, col[c] as f32);
            }
        }
    }

    // Vessel stripes radiate through the disk.
    let reach = 2.5 * disk.ry.max(disk.rx);
    for _ in 0..cfg.vessels {
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let (sin, cos) = angle.sin_cos();
        let oy = disk.cy + rng.random_range(-0.3..0.3) * disk.ry;
        let ox = disk.cx + rng.random_range(-0.3..0.3) * disk.rx;
        let half_width = rng.random_range(0.6..1.4);
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as f64 - oy, x as f64 - ox);
                let across = (dy * cos - dx * sin).abs();
                let along = (dy * sin + dx * cos).abs();
                if across <= half_width && along <= reach {
                    for c in 0..3 {
                        img.set(y, x, c, vessel_col[c] as f32);
                    }
                }
            }
        }
    }

    if cfg.noise > 0.0 {
        for v in img.data_mut() {
            let e = rng.random_range(-1.0..1.0) * cfg.noise;
            *v = (*v as f64 + e).clamp(0.0, 1.0) as f32;
        }
    }
    img
}

/// One synthetic sample with its painted geometry.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub sample: Sample,
    pub disk: Ellipse,
    pub cup: Ellipse,
}

fn generate_one(cfg: &SynthConfig, index: usize, glaucoma: bool) -> Result<SynthSample> {
    let n = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth", index as u64));
    let range = cfg.ratio_range(glaucoma);
    for _ in 0..100 {
        let r = rng.random_range(cfg.disk_radius.0..=cfg.disk_radius.1) * n as f64;
        let ry = r * rng.random_range(1.0..=1.1);
        let rx = r * rng.random_range(0.9..=1.0);
        let cy = rng.random_range(ry + 2.0..=n as f64 - ry - 3.0);
        let cx = rng.random_range(rx + 2.0..=n as f64 - rx - 3.0);
        let disk = Ellipse { cy, cx, ry, rx };
        let target = rng.random_range(range.0..=range.1);
        let Some((k, _)) = fit_cup_scale(&disk, n, n, target, range) else {
            continue;
        };
        let cup = disk.scaled(k);
        let mask = paint_mask(n, n, &disk, &cup);
        let image = paint_image(&mut rng, cfg, &disk, &cup);
        let sample = Sample {
            id: format!("synth_{index:04}"),
            image,
            mask,
            label: Some(u8::from(glaucoma)),
        };
        return Ok(SynthSample { sample, disk, cup });
    }
    Err(Error::Config(format!(
        "could not realise cup ratio range {range:?} at size {n}"
    )))
}

/// Generates `cfg.count` samples with their geometry; deterministic per seed.
pub fn synth_generate_detailed(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let n_glaucoma = (cfg.count as f64 * cfg.glaucoma_fraction).round() as usize;
    let mut flags: Vec<bool> = (0..cfg.count).map(|i| i < n_glaucoma).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "labels", 0));
    flags.shuffle(&mut rng);
    flags
        .iter()
        .enumerate()
        .map(|(i, &g)| generate_one(cfg, i, g))
        .collect()
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    Ok(synth_generate_detailed(cfg)?.into_iter().map(|s| s.sample).collect())
}

//! The two-stage pipeline.
//!
//! A raw RGB fundus image is zero-padded to a square, resized and reduced to
//! its green channel. Stage I segments that full frame. The optic disk is
//! located from Stage I's disk probability, and the crop of the green image
//! together with the cropped cup and disk probabilities feeds Stage II. The
//! refined crop is pasted back over Stage I's labels and mapped to the
//! original resolution.
//!
//! Coordinates follow pixel centres: padded pixel `i` lands at
//! `(i + 0.5) * target / padded - 0.5` in the resized frame.

mod train;

pub use train::{stage_example, train_stage, Stage, TrainOptions};

use crate::error::{Error, Result};
use crate::grad::{bilinear_resize_plane, nearest_resize_plane, Tensor};
use crate::image::{Image, LabelMap, BACKGROUND};
use crate::metrics::cdr_area;
use crate::model::{FcnModel, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    /// Side of the square Stage-I frame.
    pub target: usize,
    /// Side of the square Stage-II crop.
    pub stage2_size: usize,
    /// Disk probability at or above which a pixel counts as disk.
    pub threshold: f32,
    /// Crop margin as a fraction of the detected box's larger side.
    pub margin_frac: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            target: 512,
            stage2_size: 512,
            threshold: 0.5,
            margin_frac: 0.15,
        }
    }
}

impl CascadeConfig {
    /// Small frames that train in minutes on a CPU.
    pub fn desk() -> Self {
        Self {
            target: 128,
            stage2_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target == 0 || self.stage2_size == 0 {
            return Err(Error::Config("target and stage2_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(self.margin_frac >= 0.0 && self.margin_frac.is_finite()) {
            return Err(Error::Config(format!("margin_frac {} must be >= 0", self.margin_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

/// Axis-aligned box in Stage-I frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRegion {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRegion {
    pub fn full(height: usize, width: usize) -> Self {
        Self { row0: 0, col0: 0, height, width }
    }

    pub fn row_end(&self) -> usize {
        self.row0 + self.height
    }

    pub fn col_end(&self) -> usize {
        self.col0 + self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height >= 1 && self.width >= 1 && self.row_end() <= height && self.col_end() <= width
    }

    fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.fits(height, width) {
            Ok(())
        } else {
            Err(Error::Contract(format!("crop {self:?} does not fit a {height}x{width} frame")))
        }
    }
}

/// Everything needed to map between original and Stage-I coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformRecord {
    pub orig: (usize, usize),
    pub pad: Padding,
    /// Side of the padded square, `max(H, W)`.
    pub padded: usize,
    pub target: usize,
    pub crop: Option<CropRegion>,
}

impl TransformRecord {
    pub fn new(height: usize, width: usize, target: usize) -> Self {
        let padded = height.max(width);
        let (dv, dh) = (padded - height, padded - width);
        // Odd totals put the extra pixel on the bottom/right.
        let pad = Padding {
            top: dv / 2,
            bottom: dv - dv / 2,
            left: dh / 2,
            right: dh - dh / 2,
        };
        Self {
            orig: (height, width),
            pad,
            padded,
            target,
            crop: None,
        }
    }

    /// Resize factor from the padded square to the Stage-I frame.
    pub fn scale(&self) -> f64 {
        self.target as f64 / self.padded as f64
    }

    /// Original pixel-centre coordinates to Stage-I frame coordinates.
    pub fn to_frame(&self, y: f64, x: f64) -> (f64, f64) {
        let s = self.scale();
        (
            (y + self.pad.top as f64 + 0.5) * s - 0.5,
            (x + self.pad.left as f64 + 0.5) * s - 0.5,
        )
    }

    /// Stage-I frame coordinates back to the original image, clamped to its
    /// pixel-centre bounds.
    pub fn to_original(&self, y: f64, x: f64) -> (f64, f64) {
        let s = self.scale();
        let (h, w) = self.orig;
        (
            ((y + 0.5) / s - 0.5 - self.pad.top as f64).clamp(0.0, (h - 1) as f64),
            ((x + 0.5) / s - 0.5 - self.pad.left as f64).clamp(0.0, (w - 1) as f64),
        )
    }

    fn pad_plane<V: Copy>(&self, src: &[V], fill: V) -> Vec<V> {
        let (h, w) = self.orig;
        let p = self.padded;
        let mut out = vec![fill; p * p];
        for y in 0..h {
            let row = (y + self.pad.top) * p + self.pad.left;
            out[row..row + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
        out
    }

    fn unpad_plane<V: Copy>(&self, src: &[V]) -> Vec<V> {
        let (h, w) = self.orig;
        let p = self.padded;
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            let row = (y + self.pad.top) * p + self.pad.left;
            out.extend_from_slice(&src[row..row + w]);
        }
        out
    }

    /// Pads and nearest-resizes an original-resolution mask into the frame.
    pub fn mask_to_frame(&self, mask: &LabelMap) -> Result<LabelMap> {
        if mask.dims() != self.orig {
            return Err(Error::Contract(format!(
                "mask is {:?}, record expects {:?}",
                mask.dims(),
                self.orig
            )));
        }
        let padded = self.pad_plane(mask.data(), BACKGROUND);
        let p = self.padded;
        let t = self.target;
        LabelMap::new(t, t, nearest_resize_plane(&padded, (p, p), (t, t)))
    }

    /// Maps frame labels back to the original resolution.
    pub fn mask_to_original(&self, labels: &LabelMap) -> Result<LabelMap> {
        let t = self.target;
        if labels.dims() != (t, t) {
            return Err(Error::Contract(format!(
                "labels are {:?}, record expects {t}x{t}",
                labels.dims()
            )));
        }
        let p = self.padded;
        let full = nearest_resize_plane(labels.data(), (t, t), (p, p));
        LabelMap::new(self.orig.0, self.orig.1, self.unpad_plane(&full))
    }
}

/// Green channel, zero-padded to a square and bilinearly resized to
/// `target x target`, as a `[1, 1, target, target]` tensor.
pub fn preprocess(raw: &Image, target: usize) -> Result<(Tensor<f32>, TransformRecord)> {
    if raw.channels() != 3 {
        return Err(Error::Format(format!("expected 3 channels, got {}", raw.channels())));
    }
    let (h, w) = (raw.height(), raw.width());
    if h < 8 || w < 8 {
        return Err(Error::Contract(format!("image {h}x{w} is smaller than 8x8")));
    }
    if target == 0 {
        return Err(Error::Config("target must be positive".into()));
    }
    let record = TransformRecord::new(h, w, target);
    let padded = record.pad_plane(&raw.channel(1), 0.0);
    let p = record.padded;
    let plane = bilinear_resize_plane(&padded, (p, p), (target, target));
    Ok((Tensor::new(&[1, 1, target, target], plane)?, record))
}

/// Bounding box of `prob_disk >= threshold`, grown by `margin_frac` of its
/// larger side and clipped. No detection yields the whole frame.
pub fn detect_disk_region(prob: &ProbMap, threshold: f32, margin_frac: f64) -> CropRegion {
    let (h, w) = (prob.height(), prob.width());
    let disk = prob.prob_disk();
    let mut rows = (usize::MAX, 0);
    let mut cols = (usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if disk[y * w + x] >= threshold {
                rows = (rows.0.min(y), rows.1.max(y));
                cols = (cols.0.min(x), cols.1.max(x));
            }
        }
    }
    if rows.0 == usize::MAX {
        return CropRegion::full(h, w);
    }
    let larger = (rows.1 - rows.0 + 1).max(cols.1 - cols.0 + 1);
    let m = (margin_frac * larger as f64).round() as usize;
    let (r0, c0) = (rows.0.saturating_sub(m), cols.0.saturating_sub(m));
    let (r1, c1) = ((rows.1 + m).min(h - 1), (cols.1 + m).min(w - 1));
    CropRegion {
        row0: r0,
        col0: c0,
        height: r1 - r0 + 1,
        width: c1 - c0 + 1,
    }
}

fn crop_plane(src: &[f32], width: usize, r: &CropRegion) -> Vec<f32> {
    let mut out = Vec::with_capacity(r.height * r.width);
    for y in r.row0..r.row_end() {
        out.extend_from_slice(&src[y * width + r.col0..y * width + r.col_end()]);
    }
    out
}

/// Stage-II input `[1, 3, size, size]`: cropped green image, cup
/// probability and disk probability, in that channel order.
pub fn crop_and_stack(image: &Tensor<f32>, prob: &ProbMap, region: &CropRegion, size: usize) -> Result<Tensor<f32>> {
    let [1, 1, h, w] = *image.dims() else {
        return Err(Error::Shape {
            expected: vec![1, 1, prob.height(), prob.width()],
            actual: image.dims().to_vec(),
        });
    };
    if (prob.height(), prob.width()) != (h, w) {
        return Err(Error::Shape {
            expected: vec![prob.classes(), h, w],
            actual: vec![prob.classes(), prob.height(), prob.width()],
        });
    }
    region.check(h, w)?;
    let mut values = Vec::with_capacity(3 * size * size);
    for plane in [image.values().to_vec(), prob.prob_cup(), prob.prob_disk()] {
        let crop = crop_plane(&plane, w, region);
        values.extend(bilinear_resize_plane(&crop, (region.height, region.width), (size, size)));
    }
    Ok(Tensor::new(&[1, 3, size, size], values)?)
}

/// Pastes the Stage-II labels into the region over Stage I's labels and maps
/// the result to the original resolution.
pub fn uncrop(pred: &LabelMap, region: &CropRegion, record: &TransformRecord, stage1: &LabelMap) -> Result<LabelMap> {
    let t = record.target;
    if stage1.dims() != (t, t) {
        return Err(Error::Contract(format!(
            "stage-one labels are {:?}, record expects {t}x{t}",
            stage1.dims()
        )));
    }
    if record.crop.is_some_and(|c| c != *region) {
        return Err(Error::Contract(format!(
            "region {region:?} differs from the recorded crop {:?}",
            record.crop
        )));
    }
    region.check(t, t)?;
    let patch = nearest_resize_plane(pred.data(), pred.dims(), (region.height, region.width));
    let mut canvas = stage1.clone();
    for y in 0..region.height {
        for x in 0..region.width {
            canvas.set(region.row0 + y, region.col0 + x, patch[y * region.width + x]);
        }
    }
    record.mask_to_original(&canvas)
}

/// Anything that maps a single-image input tensor to class probabilities.
pub trait Segmenter {
    fn in_channels(&self) -> usize;
    fn predict(&self, input: &Tensor<f32>) -> Result<ProbMap>;
}

impl Segmenter for FcnModel {
    fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    fn predict(&self, input: &Tensor<f32>) -> Result<ProbMap> {
        self.predict_probabilities(input)
    }
}

#[derive(Debug, Clone)]
pub struct CascadeOutput {
    /// Final labels at the original resolution.
    pub mask: LabelMap,
    /// Stage I alone, mapped to the original resolution.
    pub stage1_mask: LabelMap,
    pub prob_stage1: ProbMap,
    pub prob_stage2: ProbMap,
    pub region: CropRegion,
    pub record: TransformRecord,
    /// Area cup-to-disk ratio of `mask`; 0 when no disk was segmented.
    pub gamma: f64,
}

/// Stage-I probabilities, the detected region and the Stage-II input for one
/// preprocessed frame.
pub fn stage2_input(
    stage1: &dyn Segmenter,
    frame: &Tensor<f32>,
    cfg: &CascadeConfig,
) -> Result<(ProbMap, CropRegion, Tensor<f32>)> {
    let p1 = stage1.predict(frame)?;
    let region = detect_disk_region(&p1, cfg.threshold, cfg.margin_frac);
    let x2 = crop_and_stack(frame, &p1, &region, cfg.stage2_size)?;
    Ok((p1, region, x2))
}

/// Area CDR with the empty-disk case mapped to 0.
pub fn gamma_or_zero(mask: &LabelMap) -> Result<f64> {
    match cdr_area(mask) {
        Ok(g) => Ok(g),
        Err(Error::UndefinedCdr) => Ok(0.0),
        Err(e) => Err(e),
    }
}

pub fn run_cascade(
    stage1: &dyn Segmenter,
    stage2: &dyn Segmenter,
    raw: &Image,
    cfg: &CascadeConfig,
) -> Result<CascadeOutput> {
    cfg.validate()?;
    if stage1.in_channels() != 1 || stage2.in_channels() != 3 {
        return Err(Error::Contract(format!(
            "stages take 1 and 3 channels, got {} and {}",
            stage1.in_channels(),
            stage2.in_channels()
        )));
    }
    let (frame, mut record) = preprocess(raw, cfg.target)?;
    let (p1, region, x2) = stage2_input(stage1, &frame, cfg)?;
    record.crop = Some(region);
    let p2 = stage2.predict(&x2)?;
    let labels1 = p1.argmax();
    let mask = uncrop(&p2.argmax(), &region, &record, &labels1)?;
    let stage1_mask = record.mask_to_original(&labels1)?;
    let gamma = gamma_or_zero(&mask)?;
    Ok(CascadeOutput {
        mask,
        stage1_mask,
        prob_stage1: p1,
        prob_stage2: p2,
        region,
        record,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{CUP, DISK_RING};

    fn probs_with_disk(h: usize, w: usize, disk: impl Fn(usize, usize) -> f32) -> ProbMap {
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                let d = disk(y, x);
                data[y * w + x] = 1.0 - d;
                data[h * w + y * w + x] = d;
            }
        }
        ProbMap::new(3, h, w, data).unwrap()
    }

    #[test]
    fn padding_puts_extra_pixel_bottom_right() {
        let r = TransformRecord::new(10, 7, 16);
        assert_eq!(r.pad, Padding { top: 0, bottom: 0, left: 1, right: 2 });
        let r = TransformRecord::new(2124, 2056, 512);
        assert_eq!((r.padded, r.pad.left, r.pad.right), (2124, 34, 34));
    }

    #[test]
    fn square_input_at_target_is_fixed_point() {
        let mut img = Image::filled(16, 16, 3, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                img.set(y, x, 1, (y * 16 + x) as f32 / 256.0);
            }
        }
        let (t, rec) = preprocess(&img, 16).unwrap();
        assert_eq!(t.values(), img.channel(1).as_slice());
        assert_eq!(rec.scale(), 1.0);
    }

    #[test]
    fn rejects_grey_input() {
        let img = Image::filled(16, 16, 1, 0.0);
        assert!(matches!(preprocess(&img, 16), Err(Error::Format(_))));
    }

    #[test]
    fn saturated_and_empty_detections_give_full_frame() {
        let full = CropRegion::full(12, 9);
        assert_eq!(detect_disk_region(&probs_with_disk(12, 9, |_, _| 1.0), 0.5, 0.15), full);
        assert_eq!(detect_disk_region(&probs_with_disk(12, 9, |_, _| 0.2), 0.5, 0.15), full);
    }

    #[test]
    fn threshold_ties_count_as_disk() {
        let p = probs_with_disk(10, 10, |y, x| if (y, x) == (4, 6) { 0.5 } else { 0.0 });
        assert_eq!(detect_disk_region(&p, 0.5, 0.0), CropRegion { row0: 4, col0: 6, height: 1, width: 1 });
    }

    #[test]
    fn identity_crop_returns_channels() {
        let p = probs_with_disk(8, 8, |y, x| ((y + x) % 3) as f32 / 2.0);
        let img = Tensor::new(&[1, 1, 8, 8], (0..64).map(|v| v as f32 / 64.0).collect()).unwrap();
        let out = crop_and_stack(&img, &p, &CropRegion::full(8, 8), 8).unwrap();
        assert_eq!(&out.values()[..64], img.values());
        assert_eq!(&out.values()[64..128], p.prob_cup().as_slice());
        assert_eq!(&out.values()[128..], p.prob_disk().as_slice());
    }

    #[test]
    fn out_of_bounds_crop_is_contract_error() {
        let p = probs_with_disk(8, 8, |_, _| 0.0);
        let img = Tensor::zeros(&[1, 1, 8, 8]);
        let r = CropRegion { row0: 4, col0: 0, height: 5, width: 2 };
        assert!(matches!(crop_and_stack(&img, &p, &r, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_uncrop() {
        let mut m = LabelMap::filled(8, 8, BACKGROUND);
        m.set(3, 3, CUP);
        m.set(3, 4, DISK_RING);
        let rec = TransformRecord::new(8, 8, 8);
        let out = uncrop(&m, &CropRegion::full(8, 8), &rec, &LabelMap::filled(8, 8, BACKGROUND)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn uncrop_rejects_mismatched_record() {
        let rec = TransformRecord { crop: Some(CropRegion::full(4, 4)), ..TransformRecord::new(8, 8, 8) };
        let pred = LabelMap::filled(4, 4, BACKGROUND);
        let base = LabelMap::filled(8, 8, BACKGROUND);
        let r = CropRegion { row0: 1, col0: 1, height: 4, width: 4 };
        assert!(matches!(uncrop(&pred, &r, &rec, &base), Err(Error::Contract(_))));
        let small = LabelMap::filled(4, 4, BACKGROUND);
        assert!(uncrop(&pred, &CropRegion::full(4, 4), &TransformRecord::new(8, 8, 8), &small).is_err());
    }

    #[test]
    fn frame_roundtrip_within_half_pixel() {
        for &(h, w, t) in &[(100, 80, 64), (37, 91, 50), (64, 64, 64), (2124, 2056, 512)] {
            let rec = TransformRecord::new(h, w, t);
            for &(y, x) in &[(0.0, 0.0), ((h - 1) as f64, (w - 1) as f64), (h as f64 / 3.0, w as f64 / 2.0)] {
                let (fy, fx) = rec.to_frame(y, x);
                let (oy, ox) = rec.to_original(fy, fx);
                assert!((oy - y).abs() <= 0.5 && (ox - x).abs() <= 0.5);
            }
        }
    }
}

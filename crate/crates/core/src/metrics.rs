//! Segmentation and detection metrics.
//!
//! Overlap scores use the convention that two empty masks agree perfectly.
//! The cup-to-disk ratio is available both as an area ratio (pixel counts,
//! used by the classifier) and as a vertical-extent ratio (used for MAE-CDR).

use crate::error::{Error, Result};
use crate::image::{LabelMap, CUP, DISK_RING};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Cup,
    Disk,
}

/// Binary foreground map for one structure; the cup counts as inside the disk.
pub fn binarize(mask: &LabelMap, target: Target) -> Vec<bool> {
    mask.data()
        .iter()
        .map(|&c| match target {
            Target::Cup => c == CUP,
            Target::Disk => c == CUP || c == DISK_RING,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub jaccard: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape {
            expected: vec![gt.len()],
            actual: vec![pred.len()],
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn scores_from_counts(c: ConfusionCounts) -> PairScores {
    PairScores {
        counts: c,
        dice: ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        jaccard: ratio_or_one(c.tp, c.tp + c.fp + c.fn_),
        sensitivity: ratio_or_one(c.tp, c.tp + c.fn_),
        specificity: ratio_or_one(c.tn, c.tn + c.fp),
        accuracy: ratio_or_one(c.tp + c.tn, c.total()),
    }
}

/// Dice, Jaccard, sensitivity, specificity and accuracy of a binary pair.
pub fn score_pair(pred: &[bool], gt: &[bool]) -> Result<PairScores> {
    Ok(scores_from_counts(confusion(pred, gt)?))
}

/// Area ratio `|cup| / |disk|`.
pub fn cdr_area(mask: &LabelMap) -> Result<f64> {
    let cup = mask.count(CUP);
    let disk = cup + mask.count(DISK_RING);
    if disk == 0 {
        return Err(Error::UndefinedCdr);
    }
    Ok(cup as f64 / disk as f64)
}

fn rows_with(mask: &LabelMap, pred: impl Fn(u8) -> bool) -> usize {
    (0..mask.height())
        .filter(|&y| (0..mask.width()).any(|x| pred(mask.get(y, x))))
        .count()
}

/// Vertical ratio: rows touched by the cup over rows touched by the disk.
pub fn cdr_vertical(mask: &LabelMap) -> Result<f64> {
    let disk_rows = rows_with(mask, |c| c == CUP || c == DISK_RING);
    if disk_rows == 0 {
        return Err(Error::UndefinedCdr);
    }
    Ok(rows_with(mask, |c| c == CUP) as f64 / disk_rows as f64)
}

/// Mean absolute vertical-CDR error. A prediction with no disk counts as CDR 0.
pub fn mae_cdr(pred: &[LabelMap], gt: &[LabelMap]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} ground-truth masks",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("mae_cdr needs at least one image".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let truth = cdr_vertical(g)?;
        let est = match cdr_vertical(p) {
            Ok(v) => v,
            Err(Error::UndefinedCdr) => 0.0,
            Err(e) => return Err(e),
        };
        total += (est - truth).abs();
    }
    Ok(total / pred.len() as f64)
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half. Computed from midranks in O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedAuc("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::UndefinedAuc("labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc("both classes must be present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the midrank keeps the sum integral.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        rank2_pos += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128 * mid2;
        i = j + 1;
    }
    let (p, n) = (n_pos as u128, n_neg as u128);
    // 2U = 2*R_pos - p(p+1); AUC = U / (p n).
    let u2 = rank2_pos - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Per-class overlap scores for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub dice: f64,
    pub jaccard: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
}

impl From<PairScores> for ClassScores {
    fn from(s: PairScores) -> Self {
        Self {
            dice: s.dice,
            jaccard: s.jaccard,
            sensitivity: s.sensitivity,
            specificity: s.specificity,
            accuracy: s.accuracy,
        }
    }
}

/// Everything measured for one predicted mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub id: String,
    pub cup: ClassScores,
    pub disk: ClassScores,
    /// Area CDR of the prediction; 0 when the predicted disk is empty.
    pub cdr_area: f64,
    pub cdr_vertical: f64,
    /// `|cdr_vertical(pred) - cdr_vertical(gt)|`.
    pub cdr_abs_error: f64,
}

pub fn score_image(id: &str, pred: &LabelMap, gt: &LabelMap) -> Result<ImageReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape {
            expected: vec![gt.height(), gt.width()],
            actual: vec![pred.height(), pred.width()],
        });
    }
    let cup = score_pair(&binarize(pred, Target::Cup), &binarize(gt, Target::Cup))?;
    let disk = score_pair(&binarize(pred, Target::Disk), &binarize(gt, Target::Disk))?;
    let or_zero = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedCdr) => Ok(0.0),
        Err(e) => Err(e),
    };
    let cdr_v = or_zero(cdr_vertical(pred))?;
    Ok(ImageReport {
        id: id.to_string(),
        cup: cup.into(),
        disk: disk.into(),
        cdr_area: or_zero(cdr_area(pred))?,
        cdr_vertical: cdr_v,
        cdr_abs_error: (cdr_v - cdr_vertical(gt)?).abs(),
    })
}

/// Dataset-level summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub images: Vec<ImageReport>,
    pub mean_cup: ClassScores,
    pub mean_disk: ClassScores,
    pub mean_cdr_area: f64,
    pub mean_cdr_vertical: f64,
    pub mae_cdr: f64,
    /// Present when glaucoma labels were available.
    pub auc: Option<f64>,
    /// Glaucoma detection sensitivity at probability 0.5.
    pub sen_glaucoma: Option<f64>,
}

fn mean_scores(it: impl Iterator<Item = ClassScores> + Clone, n: f64) -> ClassScores {
    let m = |f: fn(&ClassScores) -> f64| it.clone().map(|s| f(&s)).sum::<f64>() / n;
    ClassScores {
        dice: m(|s| s.dice),
        jaccard: m(|s| s.jaccard),
        sensitivity: m(|s| s.sensitivity),
        specificity: m(|s| s.specificity),
        accuracy: m(|s| s.accuracy),
    }
}

impl SegReport {
    pub fn from_images(images: Vec<ImageReport>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Contract("report needs at least one image".into()));
        }
        let n = images.len() as f64;
        Ok(Self {
            mean_cup: mean_scores(images.iter().map(|r| r.cup), n),
            mean_disk: mean_scores(images.iter().map(|r| r.disk), n),
            mean_cdr_area: images.iter().map(|r| r.cdr_area).sum::<f64>() / n,
            mean_cdr_vertical: images.iter().map(|r| r.cdr_vertical).sum::<f64>() / n,
            mae_cdr: images.iter().map(|r| r.cdr_abs_error).sum::<f64>() / n,
            auc: None,
            sen_glaucoma: None,
            images,
        })
    }

    pub const CSV_HEADER: &'static str = "id,dice_cup,dice_disk,jac_cup,jac_disk,sen_cup,sen_disk,spe_cup,spe_disk,acc_cup,acc_disk,cdr_area,cdr_vertical,mae_cdr,auc,sen_glaucoma";

    /// One row per image, then a `mean` aggregate row.
    pub fn to_csv(&self) -> String {
        let f = |v: f64| format!("{v:.6}");
        let row = |id: &str, cup: &ClassScores, disk: &ClassScores, ca: f64, cv: f64, mae: f64, auc: Option<f64>, sg: Option<f64>| {
            [
                id.to_string(),
                f(cup.dice),
                f(disk.dice),
                f(cup.jaccard),
                f(disk.jaccard),
                f(cup.sensitivity),
                f(disk.sensitivity),
                f(cup.specificity),
                f(disk.specificity),
                f(cup.accuracy),
                f(disk.accuracy),
                f(ca),
                f(cv),
                f(mae),
                auc.map(f).unwrap_or_default(),
                sg.map(f).unwrap_or_default(),
            ]
            .join(",")
        };
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.images {
            out.push_str(&row(&r.id, &r.cup, &r.disk, r.cdr_area, r.cdr_vertical, r.cdr_abs_error, None, None));
            out.push('\n');
        }
        out.push_str(&row(
            "mean",
            &self.mean_cup,
            &self.mean_disk,
            self.mean_cdr_area,
            self.mean_cdr_vertical,
            self.mae_cdr,
            self.auc,
            self.sen_glaucoma,
        ));
        out.push('\n');
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!("images: {}\n", self.images.len());
        for (name, c) in [("cup", &self.mean_cup), ("disk", &self.mean_disk)] {
            s.push_str(&format!(
                "{name}: dice {:.4}  jaccard {:.4}  sen {:.4}  spe {:.4}  acc {:.4}\n",
                c.dice, c.jaccard, c.sensitivity, c.specificity, c.accuracy
            ));
        }
        s.push_str(&format!("mae_cdr: {:.4}\n", self.mae_cdr));
        if let Some(a) = self.auc {
            s.push_str(&format!("auc: {a:.4}\n"));
        }
        if let Some(v) = self.sen_glaucoma {
            s.push_str(&format!("sen_glaucoma: {v:.4}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::BACKGROUND;

    fn lm(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn binarize_hierarchy() {
        let m = LabelMap::filled(3, 3, BACKGROUND);
        assert!(binarize(&m, Target::Cup).iter().all(|v| !v));
        assert!(binarize(&m, Target::Disk).iter().all(|v| !v));
        let c = LabelMap::filled(3, 3, CUP);
        assert!(binarize(&c, Target::Disk).iter().all(|&v| v));
    }

    #[test]
    fn perfect_and_disjoint() {
        let a = [true, true, false, false];
        let s = score_pair(&a, &a).unwrap();
        assert_eq!((s.dice, s.jaccard, s.sensitivity, s.specificity, s.accuracy), (1.0, 1.0, 1.0, 1.0, 1.0));
        let s = score_pair(&[true, false, false, false], &[false, true, false, false]).unwrap();
        assert_eq!((s.dice, s.jaccard), (0.0, 0.0));
        let e = score_pair(&[false; 4], &[false; 4]).unwrap();
        assert_eq!((e.dice, e.jaccard, e.sensitivity, e.specificity), (1.0, 1.0, 1.0, 1.0));
        assert!(score_pair(&[true], &[true, false]).is_err());
    }

    #[test]
    fn cdr_basics() {
        assert_eq!(cdr_area(&LabelMap::filled(4, 4, CUP)).unwrap(), 1.0);
        assert_eq!(cdr_area(&LabelMap::filled(4, 4, DISK_RING)).unwrap(), 0.0);
        assert!(matches!(cdr_area(&LabelMap::filled(4, 4, BACKGROUND)), Err(Error::UndefinedCdr)));
        assert!(matches!(cdr_vertical(&LabelMap::filled(4, 4, BACKGROUND)), Err(Error::UndefinedCdr)));
        assert_eq!(cdr_vertical(&LabelMap::filled(4, 4, CUP)).unwrap(), 1.0);
    }

    #[test]
    fn vertical_cdr_direct_count() {
        let mut m = LabelMap::filled(50, 20, BACKGROUND);
        for y in 0..40 {
            m.set(y, 5, DISK_RING);
        }
        for y in 10..20 {
            m.set(y, 5, CUP);
        }
        assert_eq!(cdr_vertical(&m).unwrap(), 0.25);
    }

    #[test]
    fn mae_arithmetic_mean() {
        let mut gt = LabelMap::filled(10, 4, BACKGROUND);
        for y in 0..10 {
            gt.set(y, 0, DISK_RING);
        }
        let with_cup = |rows: usize| {
            let mut m = gt.clone();
            for y in 0..rows {
                m.set(y, 0, CUP);
            }
            m
        };
        // gt vertical CDR 0; predictions 0.1 and 0.3.
        let v = mae_cdr(&[with_cup(1), with_cup(3)], &[gt.clone(), gt.clone()]).unwrap();
        assert!((v - 0.2).abs() < 1e-15);
        assert_eq!(mae_cdr(&[gt.clone()], &[gt.clone()]).unwrap(), 0.0);
        // Empty predicted disk scores as CDR 0 against gt.
        let g2 = with_cup(5);
        assert_eq!(mae_cdr(&[LabelMap::filled(10, 4, BACKGROUND)], &[g2]).unwrap(), 0.5);
        assert!(mae_cdr(&[gt.clone()], &[]).is_err());
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuc(_))));
    }

    #[test]
    fn report_rows() {
        let gt = lm(2, 2, &[0, 1, 2, 1]);
        let r = score_image("a", &gt, &gt).unwrap();
        let rep = SegReport::from_images(vec![r.clone(), ImageReport { id: "b".into(), ..r }]).unwrap();
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 + 1);
        assert!(csv.lines().last().unwrap().starts_with("mean,1.000000,1.000000"));
    }
}

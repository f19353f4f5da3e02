use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dsfcn::cascade::{run_cascade, train_stage, Stage, TrainOptions};
use dsfcn::classifier::{fit_sigmoid_with, FitOptions, SigmoidClassifier};
use dsfcn::data::{
    labels_path, list_ids, load_dataset, read_labels, read_mask, read_rgb, synth_generate, write_dataset,
    write_mask, write_rgb,
};
use dsfcn::image::{Image, LabelMap, CUP, DISK_RING};
use dsfcn::metrics::{auc, score_image, SegReport};
use dsfcn::model::build_fcn;
use dsfcn::seed::derive_seed;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Resolved settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn existing_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} directory {} does not exist", path.display())))
    }
}

pub fn checkpoint_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("stage{}.dsfc", stage.index()))
}

pub fn loss_log_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("stage{}_loss.csv", stage.index()))
}

fn load_stage(path: &Path, stage: Stage) -> CliResult<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    if ck.stage != stage {
        return Err(CliError::Data(format!(
            "{} is a stage-{} checkpoint, expected stage {}",
            path.display(),
            ck.stage.index(),
            stage.index()
        )));
    }
    Ok(ck)
}

pub fn cmd_synth(ctx: &Context, force: bool) -> CliResult<()> {
    let out = &ctx.out;
    let non_empty = out.is_dir() && fs::read_dir(out).map_err(|e| io_err(out, e))?.next().is_some();
    if non_empty && !force {
        return Err(CliError::Usage(format!(
            "{} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    if non_empty {
        for sub in ["images", "masks"] {
            let p = out.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| io_err(&p, e))?;
            }
        }
        let labels = labels_path(out);
        if labels.exists() {
            fs::remove_file(&labels).map_err(|e| io_err(&labels, e))?;
        }
    }
    let synth = dsfcn::data::SynthConfig { seed: ctx.seed, ..ctx.cfg.synth.clone() };
    let samples = synth_generate(&synth)?;
    write_dataset(out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

pub fn cmd_train(ctx: &Context, stage: Stage, stage1_checkpoint: Option<&Path>, data: Option<&Path>) -> CliResult<()> {
    let data = data
        .or(ctx.cfg.data_dir.as_deref())
        .ok_or_else(|| CliError::Usage("train needs --data or data_dir in the config".into()))?;
    existing_dir(data, "data")?;
    let stage1 = match stage {
        Stage::One => None,
        Stage::Two => {
            let path = stage1_checkpoint
                .or(ctx.cfg.stage1_checkpoint.as_deref())
                .ok_or_else(|| CliError::Usage("stage 2 training needs --stage1-checkpoint".into()))?;
            Some(load_stage(path, Stage::One)?.model())
        }
    };
    let samples = load_dataset(data)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("no images under {}", data.join("images").display())));
    }
    let arch = match stage {
        Stage::One => ctx.cfg.stage1,
        Stage::Two => ctx.cfg.stage2,
    };
    let model = build_fcn(arch, derive_seed(ctx.seed, "init", stage.index() as u64))?;
    let opts = TrainOptions {
        sgd: ctx.cfg.sgd,
        cascade: ctx.cfg.cascade,
        augment: ctx.cfg.augment,
        seed: derive_seed(ctx.seed, "train", stage.index() as u64),
    };
    let (model, history) = train_stage(model, &samples, stage, stage1.as_ref(), &opts)?;

    let ck_path = checkpoint_path(&ctx.out, stage);
    Checkpoint::from_model(&model, stage).save(&ck_path)?;
    let mut log = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(log, "{},{l:.9}", e + 1).expect("string write");
    }
    write_text(&loss_log_path(&ctx.out, stage), &log)?;
    match history.last() {
        Some(l) => println!("stage {} trained for {} epochs, final loss {l:.6}", stage.index(), history.len()),
        None => println!("stage {} saved without training", stage.index()),
    }
    println!("checkpoint: {}", ck_path.display());
    Ok(())
}

/// Pixels of `region` with a 4-neighbour outside it.
fn boundary(mask: &LabelMap, inside: impl Fn(u8) -> bool) -> Vec<(usize, usize)> {
    let (h, w) = mask.dims();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !inside(mask.get(y, x)) {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !inside(mask.get(y - 1, x))
                || !inside(mask.get(y + 1, x))
                || !inside(mask.get(y, x - 1))
                || !inside(mask.get(y, x + 1));
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

const DISK_OUTLINE: [f32; 3] = [0.0, 0.4, 1.0];
const CUP_OUTLINE: [f32; 3] = [0.0, 1.0, 0.2];

/// Copy of `image` with the disk and cup outlines drawn in.
pub fn overlay(image: &Image, mask: &LabelMap) -> Image {
    let mut out = image.clone();
    for (outline, colour) in [
        (boundary(mask, |c| c == CUP || c == DISK_RING), DISK_OUTLINE),
        (boundary(mask, |c| c == CUP), CUP_OUTLINE),
    ] {
        for (y, x) in outline {
            for (c, &v) in colour.iter().enumerate() {
                out.set(y, x, c, v);
            }
        }
    }
    out
}

fn collect_inputs(inputs: &[PathBuf]) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for id in list_ids(p)? {
                out.push((id.clone(), p.join(format!("{id}.png"))));
            }
        } else if p.is_file() {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::Data(format!("{} has no file name", p.display())))?;
            out.push((id, p.clone()));
        } else {
            return Err(CliError::Data(format!("input {} does not exist", p.display())));
        }
    }
    let mut seen = BTreeSet::new();
    for (id, _) in &out {
        if !seen.insert(id.as_str()) {
            return Err(CliError::Data(format!("duplicate image id '{id}'")));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub struct Prediction {
    pub id: String,
    pub mask: LabelMap,
    pub gamma: f64,
}

pub fn cmd_predict(ctx: &Context, stage1: Option<&Path>, stage2: Option<&Path>, inputs: &[PathBuf]) -> CliResult<Vec<Prediction>> {
    let s1 = stage1
        .or(ctx.cfg.stage1_checkpoint.as_deref())
        .ok_or_else(|| CliError::Usage("predict needs --stage1-checkpoint".into()))?;
    let s2 = stage2
        .or(ctx.cfg.stage2_checkpoint.as_deref())
        .ok_or_else(|| CliError::Usage("predict needs --stage2-checkpoint".into()))?;
    let m1 = load_stage(s1, Stage::One)?.model();
    let ck2 = load_stage(s2, Stage::Two)?;
    let m2 = ck2.model();
    let inputs = collect_inputs(inputs)?;
    if inputs.is_empty() {
        return Err(CliError::Data("no input images".into()));
    }

    // Each image is independent; collect keeps id order.
    let results: Vec<(Prediction, Image)> = inputs
        .par_iter()
        .map(|(id, path)| -> CliResult<_> {
            let image = read_rgb(path)?;
            let out = run_cascade(&m1, &m2, &image, &ctx.cfg.cascade)?;
            let ov = overlay(&image, &out.mask);
            Ok((Prediction { id: id.clone(), mask: out.mask, gamma: out.gamma }, ov))
        })
        .collect::<CliResult<_>>()?;

    let mut csv = String::from(if ck2.classifier.is_some() { "id,gamma,probability\n" } else { "id,gamma\n" });
    for (p, ov) in &results {
        write_mask(&ctx.out.join("masks").join(format!("{}.png", p.id)), &p.mask)?;
        write_rgb(&ctx.out.join("overlays").join(format!("{}.png", p.id)), ov)?;
        match ck2.classifier {
            Some(c) => writeln!(csv, "{},{:.6},{:.6}", p.id, p.gamma, c.predict(p.gamma)),
            None => writeln!(csv, "{},{:.6}", p.id, p.gamma),
        }
        .expect("string write");
    }
    write_text(&ctx.out.join("gamma.csv"), &csv)?;
    println!("predicted {} images into {}", results.len(), ctx.out.display());
    Ok(results.into_iter().map(|(p, _)| p).collect())
}

fn mask_dir(root: &Path) -> PathBuf {
    root.join("masks")
}

/// Area ratio of a predicted mask; an empty disk counts as 0.
fn gamma(mask: &LabelMap) -> CliResult<f64> {
    Ok(dsfcn::cascade::gamma_or_zero(mask)?)
}

fn read_pred_masks(pred: &Path) -> CliResult<Vec<(String, LabelMap)>> {
    existing_dir(&mask_dir(pred), "prediction mask")?;
    list_ids(&mask_dir(pred))?
        .into_iter()
        .map(|id| {
            let m = read_mask(&mask_dir(pred).join(format!("{id}.png")))?;
            Ok((id, m))
        })
        .collect()
}

pub fn cmd_evaluate(ctx: &Context, pred: &Path, gt: &Path) -> CliResult<SegReport> {
    existing_dir(&mask_dir(gt), "ground-truth mask")?;
    let preds = read_pred_masks(pred)?;
    let gt_ids = list_ids(&mask_dir(gt))?;
    let pred_ids: Vec<&str> = preds.iter().map(|(id, _)| id.as_str()).collect();
    let missing_pred: Vec<&str> = gt_ids.iter().map(String::as_str).filter(|id| !pred_ids.contains(id)).collect();
    let missing_gt: Vec<&str> = pred_ids.iter().copied().filter(|id| !gt_ids.iter().any(|g| g == id)).collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(CliError::Data(format!(
            "ids do not match; missing predictions: [{}]; missing ground truth: [{}]",
            missing_pred.join(", "),
            missing_gt.join(", ")
        )));
    }
    if preds.is_empty() {
        return Err(CliError::Data(format!("no masks under {}", mask_dir(pred).display())));
    }
    let mut images = Vec::with_capacity(preds.len());
    for (id, p) in &preds {
        let gt_path = mask_dir(gt).join(format!("{id}.png"));
        let g = read_mask(&gt_path)?;
        if g.dims() != p.dims() {
            return Err(CliError::Data(format!(
                "{id}: prediction is {:?} but ground truth is {:?}",
                p.dims(),
                g.dims()
            )));
        }
        images.push(score_image(id, p, &g)?);
    }
    let mut report = SegReport::from_images(images)?;

    if let Some(labels) = read_labels(&labels_path(gt))? {
        let mut gammas = Vec::new();
        let mut ys = Vec::new();
        for (id, p) in &preds {
            if let Some(&l) = labels.get(id) {
                gammas.push(gamma(p)?);
                ys.push(l);
            }
        }
        match auc(&gammas, &ys) {
            Ok(a) => report.auc = Some(a),
            Err(e) => eprintln!("warning: {e}"),
        }
        let opts = FitOptions { objective: ctx.cfg.objective, ..FitOptions::default() };
        match fit_sigmoid_with(&gammas, &ys, &opts) {
            Ok(fit) => report.sen_glaucoma = fit.classifier.sensitivity(&gammas, &ys, 0.5),
            Err(e) => eprintln!("warning: classifier not fitted: {e}"),
        }
    }

    write_text(&ctx.out.join("report.csv"), &report.to_csv())?;
    print!("{}", report.summary());
    Ok(report)
}

pub fn cmd_classify(
    ctx: &Context,
    pred: &Path,
    labels: Option<&Path>,
    checkpoint: Option<&Path>,
) -> CliResult<SigmoidClassifier> {
    let preds = read_pred_masks(pred)?;
    let gammas: Vec<(String, f64)> = preds
        .iter()
        .map(|(id, m)| Ok((id.clone(), gamma(m)?)))
        .collect::<CliResult<_>>()?;
    let label_map = match labels {
        Some(p) => Some(read_labels(p)?.ok_or_else(|| CliError::Data(format!("{} does not exist", p.display())))?),
        None => None,
    };

    let clf = match &label_map {
        Some(map) => {
            let (g, y): (Vec<f64>, Vec<u8>) = gammas
                .iter()
                .filter_map(|(id, g)| map.get(id).map(|&l| (*g, l)))
                .unzip();
            let opts = FitOptions { objective: ctx.cfg.objective, ..FitOptions::default() };
            let fit = fit_sigmoid_with(&g, &y, &opts).map_err(|e| CliError::Data(e.to_string()))?;
            println!("fitted a = {:.6}, b = {:.6}, loss = {:.6}", fit.classifier.a, fit.classifier.b, fit.loss);
            if let Some(path) = checkpoint {
                let mut ck = load_stage(path, Stage::Two)?;
                ck.classifier = Some(fit.classifier);
                ck.save(path)?;
                println!("classifier stored in {}", path.display());
            }
            fit.classifier
        }
        None => {
            let path = checkpoint.ok_or_else(|| CliError::Usage("classify needs --labels or --checkpoint".into()))?;
            load_stage(path, Stage::Two)?
                .classifier
                .ok_or_else(|| CliError::Data(format!("{} holds no classifier", path.display())))?
        }
    };

    let mut csv = String::from("id,gamma,probability,label\n");
    for (id, g) in &gammas {
        let label = label_map
            .as_ref()
            .and_then(|m| m.get(id))
            .map(|l| l.to_string())
            .unwrap_or_default();
        writeln!(csv, "{id},{g:.6},{:.6},{label}", clf.predict(*g)).expect("string write");
    }
    write_text(&ctx.out.join("classification.csv"), &csv)?;
    Ok(clf)
}

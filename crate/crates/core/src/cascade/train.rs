use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{preprocess, stage2_input, CascadeConfig};
use crate::data::{augment, AugmentPolicy, Sample};
use crate::error::{Error, Result};
use crate::grad::{sgd_step, Graph, SgdConfig, Tensor};
use crate::image::LabelMap;
use crate::model::{forward_graph, FcnModel};
use crate::seed::{derive_seed, derive_seed_str};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(Error::Config(format!("stage must be 1 or 2, got {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            Stage::One => 1,
            Stage::Two => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub sgd: SgdConfig,
    pub cascade: CascadeConfig,
    /// `None` disables augmentation.
    pub augment: Option<AugmentPolicy>,
    /// Drives sample order and augmentation draws.
    pub seed: u64,
}

/// Network input and frame-resolution targets for one sample.
///
/// Stage II runs the frozen Stage-I model to find the crop, exactly as at
/// inference time, and crops the target mask to the same region.
pub fn stage_example(
    stage: Stage,
    sample: &Sample,
    stage1: Option<&FcnModel>,
    cfg: &CascadeConfig,
) -> Result<(Tensor<f32>, LabelMap)> {
    let (frame, record) = preprocess(&sample.image, cfg.target)?;
    let labels = record.mask_to_frame(&sample.mask)?;
    match stage {
        Stage::One => Ok((frame, labels)),
        Stage::Two => {
            let stage1 = stage1.ok_or_else(|| Error::Contract("stage 2 needs a stage-1 model".into()))?;
            let (_, r, x2) = stage2_input(stage1, &frame, cfg)?;
            let t = cfg.target;
            let mut crop = Vec::with_capacity(r.height * r.width);
            for y in r.row0..r.row_end() {
                crop.extend_from_slice(&labels.data()[y * t + r.col0..y * t + r.col_end()]);
            }
            let s = cfg.stage2_size;
            let target = crate::grad::nearest_resize_plane(&crop, (r.height, r.width), (s, s));
            Ok((x2, LabelMap::new(s, s, target)?))
        }
    }
}

fn stack(examples: &[&(Tensor<f32>, LabelMap)]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let dims = examples[0].0.dims();
    let mut values = Vec::with_capacity(examples.len() * examples[0].0.len());
    let mut targets = Vec::new();
    for (x, y) in examples {
        values.extend_from_slice(x.values());
        targets.extend(y.targets());
    }
    let batch = Tensor::new(&[examples.len(), dims[1], dims[2], dims[3]], values)?;
    Ok((batch, targets))
}

fn step(model: &mut FcnModel, batch: Tensor<f32>, targets: &[usize], sgd: &SgdConfig) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.input(batch);
    let logits = forward_graph(&model.config, &model.params, &mut g, x)?;
    let loss = g.softmax_cross_entropy(logits, targets)?;
    let value = g.value(loss).values()[0] as f64;
    if !value.is_finite() {
        return Err(Error::Contract(format!("training loss became {value}")));
    }
    let grads = g.backward(loss)?;
    model.params.accumulate(&grads)?;
    sgd_step(&mut model.params, sgd)?;
    Ok(value)
}

/// Trains one stage with plain SGD, returning the model and the mean batch
/// loss of every epoch.
pub fn train_stage(
    mut model: FcnModel,
    samples: &[Sample],
    stage: Stage,
    stage1: Option<&FcnModel>,
    opts: &TrainOptions,
) -> Result<(FcnModel, Vec<f64>)> {
    opts.sgd.validate()?;
    opts.cascade.validate()?;
    if model.config.in_channels != stage.in_channels() {
        return Err(Error::Contract(format!(
            "stage {} takes {} channels, model has {}",
            stage.index(),
            stage.in_channels(),
            model.config.in_channels
        )));
    }
    if stage == Stage::Two {
        match stage1 {
            None => return Err(Error::Contract("stage 2 training needs a stage-1 model".into())),
            Some(m) if m.config.in_channels != 1 => {
                return Err(Error::Contract("the stage-1 model must take 1 channel".into()))
            }
            _ => {}
        }
    }
    if opts.sgd.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if samples.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }

    // Without augmentation every example is fixed, so Stage I runs once.
    let cached = match opts.augment {
        None => Some(
            samples
                .iter()
                .map(|s| stage_example(stage, s, stage1, &opts.cascade))
                .collect::<Result<Vec<_>>>()?,
        ),
        Some(_) => None,
    };

    let batch_size = opts.sgd.batch_size;
    let mut history = Vec::with_capacity(opts.sgd.epochs);
    for epoch in 0..opts.sgd.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "order", epoch as u64)));
        let mut losses = Vec::new();
        for chunk in order.chunks(batch_size) {
            let fresh: Vec<(Tensor<f32>, LabelMap)>;
            let examples: Vec<&(Tensor<f32>, LabelMap)> = match (&cached, &opts.augment) {
                (Some(c), _) => chunk.iter().map(|&i| &c[i]).collect(),
                (None, Some(policy)) => {
                    fresh = chunk
                        .iter()
                        .map(|&i| {
                            let s = &samples[i];
                            let seed = derive_seed(derive_seed_str(opts.seed, "augment", &s.id), "epoch", epoch as u64);
                            let aug = augment(s, policy, &mut ChaCha8Rng::seed_from_u64(seed));
                            stage_example(stage, &aug, stage1, &opts.cascade)
                        })
                        .collect::<Result<_>>()?;
                    fresh.iter().collect()
                }
                (None, None) => unreachable!("examples are cached when augmentation is off"),
            };
            let (batch, targets) = stack(&examples)?;
            losses.push(step(&mut model, batch, &targets, &opts.sgd)?);
        }
        history.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::{build_fcn, FcnConfig};

    fn opts(epochs: usize) -> TrainOptions {
        TrainOptions {
            sgd: SgdConfig { learning_rate: 0.05, epochs, batch_size: 2 },
            cascade: CascadeConfig { target: 32, stage2_size: 16, ..CascadeConfig::default() },
            augment: None,
            seed: 1,
        }
    }

    fn data() -> Vec<Sample> {
        synth_generate(&SynthConfig { count: 3, size: 40, seed: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let m = build_fcn(FcnConfig { num_scales: 2, ..Default::default() }, 0).unwrap();
        let (out, hist) = train_stage(m.clone(), &data(), Stage::One, None, &opts(0)).unwrap();
        assert_eq!(out.params, m.params);
        assert!(hist.is_empty());
    }

    #[test]
    fn one_loss_per_epoch_and_deterministic() {
        let m = build_fcn(FcnConfig { num_scales: 2, ..Default::default() }, 0).unwrap();
        let o = TrainOptions { augment: Some(AugmentPolicy::default()), ..opts(3) };
        let (a, ha) = train_stage(m.clone(), &data(), Stage::One, None, &o).unwrap();
        let (b, hb) = train_stage(m, &data(), Stage::One, None, &o).unwrap();
        assert_eq!(ha.len(), 3);
        assert!(ha.iter().all(|l| l.is_finite()));
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn stage_two_requires_stage_one() {
        let m = build_fcn(FcnConfig { num_scales: 2, ..FcnConfig::stage2() }, 0).unwrap();
        let err = train_stage(m, &data(), Stage::Two, None, &opts(1)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn stage_two_examples_have_crop_shape() {
        let s1 = build_fcn(FcnConfig { num_scales: 2, ..Default::default() }, 0).unwrap();
        let (x, y) = stage_example(Stage::Two, &data()[0], Some(&s1), &opts(1).cascade).unwrap();
        assert_eq!(x.dims(), &[1, 3, 16, 16]);
        assert_eq!(y.dims(), (16, 16));
    }
}
